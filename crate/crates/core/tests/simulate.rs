use std::f64::consts::PI;

use qsm_core::invert::CosmosConfig;
use qsm_core::{
    cosmos, make_magnitude, make_mask, make_phantom, nrmse, simulate_acquisition, NoiseSpec, Orientation, PhantomSpec,
    ScalarVolume, Shape, ShapeKind, VolumeGrid,
};

fn million() -> VolumeGrid {
    VolumeGrid::cube(100, 1.0).unwrap()
}

fn std_dev(v: &[f64]) -> f64 {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

#[test]
fn high_snr_phase_noise_matches_sigma_over_w() {
    let g = million();
    let ds = simulate_acquisition(
        &ScalarVolume::zeros(g),
        &ScalarVolume::filled(g, 10.0),
        &[Orientation::z()],
        &NoiseSpec::new(0.1, 42).unwrap(),
    )
    .unwrap();
    let sd = std_dev(ds.entries()[0].phase.data());
    assert!((sd / 0.01 - 1.0).abs() < 0.05, "phase std {sd}");
}

#[test]
fn zero_magnitude_gives_uniform_phase() {
    let g = million();
    let ds = simulate_acquisition(
        &ScalarVolume::zeros(g),
        &ScalarVolume::zeros(g),
        &[Orientation::z()],
        &NoiseSpec::new(1.0, 5).unwrap(),
    )
    .unwrap();
    let mut p = ds.entries()[0].phase.data().to_vec();
    assert!(p.iter().all(|&v| v > -PI && v <= PI));
    p.sort_by(f64::total_cmp);
    let n = p.len() as f64;
    let ks = p
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let cdf = (v + PI) / (2.0 * PI);
            (cdf - i as f64 / n).abs().max((i as f64 + 1.0) / n - cdf)
        })
        .fold(0.0, f64::max);
    assert!(ks < 0.01, "KS statistic {ks}");
}

#[test]
fn orientation_noise_streams_are_decorrelated() {
    let g = million();
    let ds = simulate_acquisition(
        &ScalarVolume::zeros(g),
        &ScalarVolume::filled(g, 10.0),
        &[Orientation::z(), Orientation::z()],
        &NoiseSpec::new(0.1, 3).unwrap(),
    )
    .unwrap();
    let a = ds.entries()[0].phase.data();
    let b = ds.entries()[1].phase.data();
    let (sa, sb) = (std_dev(a), std_dev(b));
    let (ma, mb) = (
        a.iter().sum::<f64>() / a.len() as f64,
        b.iter().sum::<f64>() / b.len() as f64,
    );
    let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() - 1) as f64;
    let corr = cov / (sa * sb);
    assert!(corr.abs() < 0.01, "correlation {corr}");
}

#[test]
fn simulation_is_deterministic_and_seed_dependent() {
    let g = VolumeGrid::cube(24, 1.0).unwrap();
    let spec = PhantomSpec::numerical_head(&g);
    let chi = make_phantom(&g, &spec).unwrap();
    let mag = make_magnitude(&g, &spec).unwrap();
    let orientations = [Orientation::z(), Orientation::z().rotated_about_x(20.0)];
    let run = |seed| simulate_acquisition(&chi, &mag, &orientations, &NoiseSpec::new(0.05, seed).unwrap()).unwrap();
    let a = run(11);
    let b = run(11);
    let c = run(12);
    for r in 0..2 {
        assert_eq!(a.entries()[r].phase.data(), b.entries()[r].phase.data());
        assert_eq!(a.entries()[r].magnitude.data(), b.entries()[r].magnitude.data());
        assert_ne!(a.entries()[r].phase.data(), c.entries()[r].phase.data());
    }
}

#[test]
fn overlapping_cuboids_keep_the_second_value() {
    let g = VolumeGrid::cube(12, 1.0).unwrap();
    let cuboid = |center: [f64; 3], chi| Shape {
        kind: ShapeKind::Cuboid { size: [4.0, 4.0, 4.0] },
        center,
        chi,
        magnitude: 1.0,
    };
    let spec = PhantomSpec {
        shapes: vec![cuboid([5.0, 5.0, 5.0], 0.1), cuboid([7.0, 5.0, 5.0], -0.2)],
        background_chi: 0.0,
        background_magnitude: 0.0,
    };
    let chi = make_phantom(&g, &spec).unwrap();
    assert_eq!(chi.get(6, 5, 5), -0.2);
    assert_eq!(chi.get(3, 5, 5), 0.1);
    assert_eq!(chi.get(9, 5, 5), -0.2);
    assert_eq!(chi.get(0, 0, 0), 0.0);
    let mask = make_mask(&g, &spec).unwrap();
    assert_eq!(mask.get(6, 5, 5), 1.0);
    assert_eq!(mask.get(0, 0, 0), 0.0);
}

#[test]
fn phantom_spec_reads_from_json() {
    let spec: PhantomSpec = serde_json::from_str(
        r#"{"shapes": [
            {"kind": "sphere", "radius": 3, "center": [4, 4, 4], "chi": 0.1},
            {"kind": "cylinder", "radius": 1, "length": 4, "axis": "x", "center": [4, 4, 4], "chi": 0.2, "magnitude": 0.5}
        ], "background_chi": 0.01}"#,
    )
    .unwrap();
    assert_eq!(spec.shapes.len(), 2);
    assert_eq!(spec.shapes[0].magnitude, 1.0);
    assert_eq!(spec.background_magnitude, 0.0);
    let g = VolumeGrid::cube(9, 1.0).unwrap();
    let chi = make_phantom(&g, &spec).unwrap();
    assert_eq!(chi.get(6, 4, 4), 0.2);
    assert_eq!(chi.get(4, 6, 4), 0.1);
    assert_eq!(chi.get(0, 0, 0), 0.01);
}

#[test]
fn noiseless_cosmos_recovers_small_phantom() {
    // Odd size: on even grids the all-Nyquist corner has d = 0 for every orientation.
    let g = VolumeGrid::cube(33, 1.0).unwrap();
    let spec = PhantomSpec::numerical_head(&g);
    let chi = make_phantom(&g, &spec).unwrap();
    let mag = make_magnitude(&g, &spec).unwrap();
    let mask = make_mask(&g, &spec).unwrap();
    let orientations = [
        Orientation::z(),
        Orientation::z().rotated_about_x(20.0),
        Orientation::z().rotated_about_x(-20.0),
        Orientation::z().rotated_about_y(35.0),
    ];
    let ds = simulate_acquisition(&chi, &mag, &orientations, &NoiseSpec::noiseless()).unwrap();
    let max_phase = ds.entries().iter().map(|e| e.phase.max_abs()).fold(0.0, f64::max);
    assert!(max_phase < PI);
    let recon = cosmos(&ds, &CosmosConfig { eps: 1e-6 }).unwrap();
    let err = nrmse(&recon, &chi, &mask).unwrap();
    assert!(err < 1e-6, "nrmse {err}");
}
