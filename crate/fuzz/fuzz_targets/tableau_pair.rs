#![no_main]

use arbitrary::Arbitrary;
use gt_control::tableau::{check_order2, classify, ButcherTableau, IMEXPair};
use libfuzzer_sys::fuzz_target;

#[derive(Arbitrary, Debug)]
struct RawPair {
    stages: u8,
    entries: Vec<f64>,
}

fn take(entries: &mut impl Iterator<Item = f64>) -> f64 {
    entries.next().unwrap_or(0.0)
}

fuzz_target!(|raw: RawPair| {
    // User-supplied tableau pairs go through the same validation path as the
    // registry; arbitrary coefficient soup must never panic validation,
    // classification or the order checks.
    let s = (raw.stages % 6) as usize + 1;
    let mut it = raw.entries.into_iter();
    let mut build = |explicit: bool| {
        let mut a = vec![vec![0.0; s]; s];
        for i in 0..s {
            let cols = if explicit { i } else { i + 1 };
            for j in 0..cols {
                a[i][j] = take(&mut it);
            }
        }
        let b: Vec<f64> = (0..s).map(|_| take(&mut it)).collect();
        let c: Vec<f64> = a
            .iter()
            .map(|row| row.iter().sum())
            .collect();
        ButcherTableau { a, b, c }
    };
    let pair = IMEXPair {
        name: "fuzz".into(),
        explicit: build(true),
        implicit: build(false),
        exact: None,
    };
    if pair.validate().is_ok() {
        let class = classify(&pair);
        if class.gsa {
            assert!(class.isa);
        }
        let _ = check_order2(&pair);
    }
});
