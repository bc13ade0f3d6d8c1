#![no_main]

use grow_core::io::{parse_real_list, parse_vector_line};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let list = parse_real_list(text);
    if let Ok(v) = &list {
        assert!(!v.is_empty() && v.iter().all(|x| x.is_finite()));
        assert_eq!(parse_vector_line(text, 1, Some(v.len())).ok().as_ref(), Some(v));
    }
});
