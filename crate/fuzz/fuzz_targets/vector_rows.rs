#![no_main]

use grow_core::io::parse_vector_rows;
use grow_core::lt_group::{log_evalue_lt, LTSampleSummary};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(rows) = parse_vector_rows(text) else {
        return;
    };
    assert!(rows.iter().all(|v| v.is_finite()));
    let d = rows.ncols();
    if d > 8 {
        return;
    }
    if let Ok(summary) = LTSampleSummary::from_rows(&rows) {
        let delta1 = vec![0.5; d];
        let _ = log_evalue_lt(&summary, &vec![0.0; d], &delta1);
    }
});
