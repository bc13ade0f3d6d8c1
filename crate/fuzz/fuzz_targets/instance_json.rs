#![no_main]

use grow_core::finite_group::{invariant_lr, joint_kl, kl_maximal_invariant, null_expectations, PriorPair};
use grow_core::io::parse_instance_json;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(pair) = parse_instance_json(text) else {
        return;
    };
    let kl = kl_maximal_invariant(&pair);
    let uniform = joint_kl(&pair, &PriorPair::uniform(pair.group().order()));
    if kl.is_finite() {
        assert!((kl - uniform).abs() <= 1e-9 * (1.0 + kl.abs()));
    }
    if let Ok(t) = invariant_lr(&pair) {
        for e in null_expectations(&pair, &t) {
            assert!(e <= 1.0 + 1e-9);
        }
    }
});
