#![no_main]

use grow_core::eprocess::{EProcess, TTestModel};
use grow_core::io::{parse_scalar_column, parse_scalar_line};
use grow_core::ttest::TTestHypotheses;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let whole = parse_scalar_column(text);
    // Line-at-a-time parsing must agree with the whole-text parser.
    let mut lines = Vec::new();
    let mut line_err = false;
    for (i, l) in text.lines().enumerate() {
        match parse_scalar_line(l, i + 1) {
            Ok(Some(x)) => lines.push(x),
            Ok(None) => {}
            Err(_) => {
                line_err = true;
                break;
            }
        }
    }
    match &whole {
        Ok(xs) => assert!(!line_err && *xs == lines),
        Err(_) => assert!(line_err),
    }
    if let Ok(xs) = whole {
        let model = TTestModel {
            hyp: TTestHypotheses::new(0.0, 0.5).unwrap(),
        };
        let mut p = EProcess::new(model, 0.05).unwrap();
        for x in xs.iter().take(256) {
            if p.update(x).is_err() {
                break;
            }
        }
    }
});
