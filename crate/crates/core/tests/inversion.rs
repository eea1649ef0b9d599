use proptest::prelude::*;
use qsm_core::invert::{gradient_penalty_symbol, l2_multiplier, tkd_multiplier};
use qsm_core::{
    cosmos, data_consistency, dipole_kernel, fft3, forward_field, l2_closedform, make_magnitude, make_mask, make_phantom,
    simulate_acquisition, tkd, CosmosConfig, L2Config, NoiseSpec, Orientation, OrientationDataset, PhantomSpec,
    ScalarVolume, Shape, ShapeKind, TkdConfig, VolumeGrid,
};

fn noise(grid: VolumeGrid, seed: u64) -> ScalarVolume {
    let mut s = seed.wrapping_mul(0x2545f4914f6cdd1d) | 1;
    ScalarVolume::from_fn(grid, |_, _, _| {
        s ^= s >> 12;
        s ^= s << 25;
        s ^= s >> 27;
        (s.wrapping_mul(0x2545f4914f6cdd1d) >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    })
}

fn three_orientations() -> Vec<Orientation> {
    vec![
        Orientation::z(),
        Orientation::z().rotated_about_x(20.0),
        Orientation::z().rotated_about_x(-20.0),
    ]
}

fn phase_dataset(grid: VolumeGrid, phases: Vec<ScalarVolume>, orientations: &[Orientation]) -> OrientationDataset {
    let entries = phases
        .into_iter()
        .zip(orientations)
        .map(|(phase, &orientation)| qsm_core::OrientationEntry {
            phase,
            magnitude: ScalarVolume::filled(grid, 1.0),
            orientation,
        })
        .collect();
    OrientationDataset::new(entries, ScalarVolume::filled(grid, 1.0)).unwrap()
}

#[test]
fn tkd_flattens_small_kernel_values() {
    assert_eq!(tkd_multiplier(0.5, 0.2), 2.0);
    assert_eq!(tkd_multiplier(-0.05, 0.2), -5.0);
    assert_eq!(tkd_multiplier(0.0, 0.2), 0.0);
    assert_eq!(tkd_multiplier(0.2, 0.2), 5.0);
}

#[test]
fn l2_without_penalty_divides_by_kernel() {
    assert_eq!(l2_multiplier(0.25, 3.0, 0.0), 4.0);
    assert_eq!(l2_multiplier(0.0, 0.0, 1.0), 0.0);
    let g = VolumeGrid::new([5, 6, 7], [1.0, 0.5, 2.0]).unwrap();
    let e = gradient_penalty_symbol(&g);
    assert_eq!(e[0], 0.0);
    assert!(e[1..].iter().all(|&v| v > 0.0));
    for (i, &d) in dipole_kernel(&g, &Orientation::z()).unwrap().values().data().iter().enumerate().skip(1) {
        assert!(l2_multiplier(d, e[i], 0.01).is_finite());
    }
}

#[test]
fn l2_at_zero_lambda_matches_spectral_division() {
    let g = VolumeGrid::cube(9, 1.0).unwrap();
    let k = dipole_kernel(&g, &Orientation::z()).unwrap();
    let chi = noise(g, 4);
    let phase = forward_field(&chi, &k).unwrap();
    let back = l2_closedform(&phase, &k, &L2Config { lambda: 0.0 }).unwrap();
    // every non-DC point of an odd 9³ grid with b = z has d ≠ 0 except the magic-angle cone
    let spectrum = fft3(&back.sub(&chi).unwrap());
    for (i, c) in spectrum.data().iter().enumerate().skip(1) {
        if k.values().data()[i].abs() > 1e-12 {
            assert!(c.norm() < 1e-10, "index {i}: {c}");
        }
    }
}

#[test]
fn cosmos_reproduces_data_when_well_conditioned() {
    let g = VolumeGrid::cube(17, 1.0).unwrap();
    let orientations = three_orientations();
    let chi = noise(g, 8);
    let phases = orientations
        .iter()
        .map(|o| forward_field(&chi, &dipole_kernel(&g, o).unwrap()).unwrap())
        .collect();
    let ds = phase_dataset(g, phases, &orientations);
    let recon = cosmos(&ds, &CosmosConfig::default()).unwrap();
    assert!(data_consistency(&recon, &ds).unwrap() < 1e-8);
}

#[test]
fn tkd_underestimates_sphere_susceptibility() {
    let g = VolumeGrid::cube(48, 1.0).unwrap();
    let spec = PhantomSpec {
        shapes: vec![Shape {
            kind: ShapeKind::Sphere { radius: 6.0 },
            center: [24.0; 3],
            chi: 0.1,
            magnitude: 1.0,
        }],
        ..Default::default()
    };
    let chi = make_phantom(&g, &spec).unwrap();
    let sphere = make_mask(&g, &spec).unwrap();
    let k = dipole_kernel(&g, &Orientation::z()).unwrap();
    let phase = forward_field(&chi, &k).unwrap();
    // the DC convention makes the truth zero-mean over the volume
    let mean_all = chi.sum() / g.len() as f64;
    let truth = chi.masked_mean(&sphere).unwrap() - mean_all;
    for delta in [0.1, 0.2, 0.3] {
        let recon = tkd(&phase, &k, &TkdConfig { delta }).unwrap();
        let est = recon.masked_mean(&sphere).unwrap();
        assert!(est.abs() < truth.abs(), "delta {delta}: {est} vs {truth}");
    }
}

#[test]
fn l2_data_consistency_grows_with_lambda() {
    let g = VolumeGrid::cube(40, 1.0).unwrap();
    let spec = PhantomSpec::numerical_head(&g);
    let chi = make_phantom(&g, &spec).unwrap();
    let mag = make_magnitude(&g, &spec).unwrap();
    let mask = make_mask(&g, &spec).unwrap();
    let ds = simulate_acquisition(&chi, &mag, &[Orientation::z()], &NoiseSpec::new(0.002, 21).unwrap())
        .unwrap()
        .with_mask(mask.clone())
        .unwrap()
        .map_phases(|p| p.masked(&mask).unwrap())
        .unwrap();
    let k = dipole_kernel(&g, &Orientation::z()).unwrap();
    let phase = &ds.entries()[0].phase;
    let dc: Vec<f64> = [1e-3, 1e-2, 1e-1]
        .iter()
        .map(|&lambda| data_consistency(&l2_closedform(phase, &k, &L2Config { lambda }).unwrap(), &ds).unwrap())
        .collect();
    assert!(dc[0] < dc[1] && dc[1] < dc[2], "{dc:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn inversions_are_linear(s1 in 0u64..1000, s2 in 0u64..1000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let g = VolumeGrid::new([8, 9, 10], [1.0; 3]).unwrap();
        let orientations = three_orientations();
        let p1: Vec<ScalarVolume> = (0..3).map(|r| noise(g, s1 * 3 + r)).collect();
        let p2: Vec<ScalarVolume> = (0..3).map(|r| noise(g, s2 * 3 + r + 7000)).collect();
        let mix: Vec<ScalarVolume> = p1.iter().zip(&p2).map(|(x, y)| x.scale(a).add(&y.scale(b)).unwrap()).collect();
        let k = dipole_kernel(&g, &orientations[0]).unwrap();

        let check = |f: &dyn Fn(usize) -> ScalarVolume| -> bool {
            let (x, y, m) = (f(0), f(1), f(2));
            let expected = x.scale(a).add(&y.scale(b)).unwrap();
            m.sub(&expected).unwrap().norm2() <= 1e-10 * expected.norm2().max(1e-12)
        };
        let sets = [&p1, &p2, &mix];
        let tkd_linear = check(&|i| tkd(&sets[i][0], &k, &TkdConfig::default()).unwrap());
        let l2_cfg = L2Config { lambda: 0.05 };
        let l2_linear = check(&|i| l2_closedform(&sets[i][0], &k, &l2_cfg).unwrap());
        let cosmos_linear = check(&|i| {
            cosmos(&phase_dataset(g, sets[i].clone(), &orientations), &CosmosConfig::default()).unwrap()
        });
        prop_assert!(tkd_linear);
        prop_assert!(l2_linear);
        prop_assert!(cosmos_linear);
    }

    #[test]
    fn huge_lambda_suppresses_everything(seed in 0u64..1000) {
        let g = VolumeGrid::cube(8, 1.0).unwrap();
        let phase = noise(g, seed);
        let k = dipole_kernel(&g, &Orientation::z()).unwrap();
        let out = l2_closedform(&phase, &k, &L2Config { lambda: 1e12 }).unwrap();
        prop_assert!(out.max_abs() < 1e-9 * phase.max_abs());
    }
}
