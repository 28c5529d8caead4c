use hearth_wasm::{battery_curve, compare_modes, link_budget_curve, max_range_m};

#[test]
fn link_budget_crosses_zero_at_the_rated_range() {
    for (indoor, range) in [(false, 1500.0), (true, 300.0)] {
        assert!((max_range_m(indoor, 20.0) - range).abs() < 1.0);
        let curve = link_budget_curve(indoor, 20.0, 2.0 * range, 4);
        let pairs: Vec<(f64, f64)> = curve.chunks(2).map(|c| (c[0], c[1])).collect();
        assert_eq!(pairs.len(), 4);
        assert!(pairs[1].1.abs() < 0.05, "{pairs:?}");
        assert!(pairs.windows(2).all(|w| w[1].1 < w[0].1));
    }
}

#[test]
fn lower_power_shortens_the_range() {
    assert!(max_range_m(false, 0.0) < max_range_m(false, 20.0));
}

#[test]
fn battery_curve_rises_with_the_report_interval() {
    let ys = battery_curve(10_000.0, 32, 0.0, vec![1.0, 10.0, 100.0, 1000.0]);
    assert!(ys.windows(2).all(|w| w[1] > w[0]), "{ys:?}");
    assert!((0.5..=2.0).contains(&ys[1]), "{}", ys[1]);
}

#[test]
fn polling_costs_lifetime() {
    let idle = battery_curve(10_000.0, 32, 0.0, vec![60.0])[0];
    let polled = battery_curve(10_000.0, 32, 2.0, vec![60.0])[0];
    assert!(polled < idle);
}

#[test]
fn naive_mac_collapses_under_a_burst() {
    let r = compare_modes(4, 1);
    assert_eq!((r[0].mode, r[1].mode), ("selforg", "naive"));
    assert_eq!(r[0].delivery, 1.0);
    assert!(r[1].delivery < 0.9);
    let single = compare_modes(1, 1);
    assert!(single.iter().all(|m| m.delivery == 1.0));
}
