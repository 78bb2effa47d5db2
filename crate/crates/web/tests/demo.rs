use rcm_web::{survival_values, Demo};

#[test]
fn heat_maps_cover_the_box() {
    let mut d = Demo::build(6, 0.1, 3).unwrap();
    assert_eq!(d.side(), 13);
    let speed = d.log_speed();
    assert_eq!(speed.len(), 169);
    assert!(speed.iter().all(|v| v.is_finite()));
    let mass = d.eigenvector_mass(2).unwrap();
    assert!((mass.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert!(d.eigenvalue(1).unwrap() <= d.pi_k(1));
    let part = d.partition_grid(3).unwrap();
    assert_eq!(part.len(), 169);
    assert!(part.iter().filter(|&&c| c == 0).count() > 0);
}

#[test]
fn survival_curve_layout() {
    let v = survival_values(8, 0.1, 2, 50, 9).unwrap();
    assert_eq!(v.len(), 151);
    assert_eq!(v[0], 0.0);
    assert_eq!(v[50], 1.0);
    assert!(v[150] >= 0.0 && v[150] <= 1.0);
}

#[test]
fn bad_requests() {
    assert!(Demo::build(1, 0.1, 0).is_err());
    assert!(Demo::build(6, 0.3, 0).is_err());
    assert!(Demo::build(6, 0.1, 0).unwrap().eigenvector_mass(9).is_err());
    assert!(survival_values(8, 0.1, 0, 10, 0).is_err());
}
