use bels_demo::{ablation_data, drift_curve_data};

#[test]
fn ablation_lists_every_variant_once() {
    let rows = ablation_data(1000, 0.1, 50, 1).unwrap();
    let names: Vec<_> = rows.iter().map(|r| r.variant).collect();
    assert_eq!(names, ["BLS", "BELS-FPs", "BELS-Ens", "BELS"]);
    assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.accuracy)));
}

#[test]
fn drift_curve_serializes_for_the_page() {
    let curve = drift_curve_data(&[0, 2, 0], 600, 0.1, "bels2", 50, 2).unwrap();
    let json = serde_json::to_value(&curve).unwrap();
    for key in [
        "samples",
        "window_accuracy",
        "cumulative_accuracy",
        "final_accuracy",
        "drift_points",
    ] {
        assert!(json.get(key).is_some(), "missing {key}");
    }
    assert_eq!(curve.drift_points, [600, 1200]);
}
