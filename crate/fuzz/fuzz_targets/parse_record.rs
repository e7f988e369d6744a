#![no_main]

use libfuzzer_sys::fuzz_target;
use lcfgp::cli::records::RunRecord;

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else { return };
    if let Ok(rec) = RunRecord::from_line(line) {
        let back = RunRecord::from_line(&rec.to_line()).expect("encoded record failed to decode");
        assert_eq!(rec, back);
    }
});
