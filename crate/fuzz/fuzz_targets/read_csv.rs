#![no_main]

use libfuzzer_sys::fuzz_target;
use lcfgp::bench::{read_csv, TargetColumn};

fuzz_target!(|data: &[u8]| {
    let _ = read_csv(data, "fuzz", &TargetColumn::Last, true);
    let _ = read_csv(data, "fuzz", &TargetColumn::Index(0), false);
});
