#![no_main]

use libfuzzer_sys::fuzz_target;
use lcfgp::exprtree::parse_node;

fuzz_target!(|data: &[u8]| {
    let Some((&first, rest)) = data.split_first() else { return };
    let Ok(src) = std::str::from_utf8(rest) else { return };
    let d = 1 + (first % 8) as usize;
    if let Ok(node) = parse_node(src, d) {
        // printed trees must parse back to the same tree
        let again = parse_node(&node.to_string(), d).expect("printed tree failed to parse");
        assert_eq!(node.to_string(), again.to_string());
    }
});
