use lfdtn::lft::{make_window, WindowKind};

#[test]
fn confined_gaussian_taps_match_reference_table() {
    let table: Vec<f64> = include_str!("data/confined_gaussian_n16_s0.14.txt")
        .lines()
        .map(|l| l.trim().parse().unwrap())
        .collect();
    let w = make_window(WindowKind::ConfinedGaussian, 16, 0.14).unwrap();
    assert_eq!(w.taps_1d().len(), table.len());
    for (i, (got, want)) in w.taps_1d().iter().zip(&table).enumerate() {
        assert!((got - want).abs() <= 1e-12, "tap {i}: {got} vs {want}");
    }
    let taps = w.taps();
    assert!(taps.iter().all(|&t| t > 0.0));
    assert_eq!(taps.iter().cloned().fold(0.0, f64::max), 1.0);
    for n in 0..16 {
        for m in 0..16 {
            assert_eq!(w.tap(n, m), w.tap(15 - n, m));
            assert_eq!(w.tap(n, m), w.tap(n, 15 - m));
            assert!((w.tap(n, m) - table[n] * table[m]).abs() <= 1e-12);
        }
    }
    assert!(w.tap(0, 7) < 0.1 * w.tap(7, 7));
}
