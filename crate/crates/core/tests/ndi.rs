use num_complex::Complex64;
use proptest::prelude::*;
use qsm_core::ndi::normalize_weights;
use qsm_core::{
    dipole_kernel, forward_field, make_magnitude, make_mask, make_phantom, ndi_cost, ndi_gradient, ndi_reconstruct, nrmse,
    simulate_acquisition, tkd, NdiConfig, NoiseSpec, Orientation, OrientationDataset, OrientationEntry, PhantomSpec,
    ScalarVolume, Shape, ShapeKind, TkdConfig, VolumeGrid,
};

fn uniform(grid: VolumeGrid, seed: u64, lo: f64, hi: f64) -> ScalarVolume {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
    ScalarVolume::from_fn(grid, |_, _, _| {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        lo + (hi - lo) * ((s >> 11) as f64 / (1u64 << 53) as f64)
    })
}

fn random_dataset(grid: VolumeGrid, seed: u64, n: usize) -> OrientationDataset {
    let orientations = [
        Orientation::z(),
        Orientation::normalized([0.3, -0.2, 0.9]).unwrap(),
        Orientation::normalized([-0.4, 0.5, 0.7]).unwrap(),
    ];
    let entries = (0..n)
        .map(|r| OrientationEntry {
            phase: uniform(grid, seed * 10 + r as u64, -3.0, 3.0),
            magnitude: uniform(grid, seed * 10 + r as u64 + 5, 0.0, 1.0),
            orientation: orientations[r],
        })
        .collect();
    OrientationDataset::new(entries, ScalarVolume::filled(grid, 1.0)).unwrap()
}

/// `Σ_r ‖W_r (exp(i D_r χ) − exp(i φ_r))‖²` evaluated directly.
fn complex_residual_cost(chi: &ScalarVolume, ds: &OrientationDataset) -> f64 {
    ds.entries()
        .iter()
        .map(|e| {
            let field = forward_field(chi, &dipole_kernel(ds.grid(), &e.orientation).unwrap()).unwrap();
            field
                .data()
                .iter()
                .zip(e.phase.data())
                .zip(e.magnitude.data())
                .map(|((&f, &p), &w)| (w * (Complex64::from_polar(1.0, f) - Complex64::from_polar(1.0, p))).norm_sqr())
                .sum::<f64>()
        })
        .sum()
}

struct HeadFixture {
    truth: ScalarVolume,
    mask: ScalarVolume,
    three: OrientationDataset,
}

fn head_fixture(n: usize, sigma: f64) -> HeadFixture {
    let g = VolumeGrid::cube(n, 1.0).unwrap();
    let spec = PhantomSpec::numerical_head(&g);
    let truth = make_phantom(&g, &spec).unwrap().scale(3.0);
    let mag = make_magnitude(&g, &spec).unwrap();
    let mask = make_mask(&g, &spec).unwrap();
    let orientations = [
        Orientation::z(),
        Orientation::z().rotated_about_x(20.0),
        Orientation::z().rotated_about_x(-20.0),
    ];
    let three = simulate_acquisition(&truth, &mag, &orientations, &NoiseSpec::new(sigma, 3).unwrap())
        .unwrap()
        .with_mask(mask.clone())
        .unwrap()
        .map_phases(|p| p.masked(&mask).unwrap())
        .unwrap();
    HeadFixture { truth, mask, three }
}

fn config(lambda: f64, iters: usize) -> NdiConfig {
    NdiConfig {
        lambda,
        max_iters: iters,
        ..NdiConfig::default()
    }
}

#[test]
fn exact_solution_has_zero_cost_and_gradient() {
    let g = VolumeGrid::cube(10, 1.0).unwrap();
    let chi = uniform(g, 1, -0.5, 0.5);
    let entries = [Orientation::z(), Orientation::z().rotated_about_y(30.0)]
        .iter()
        .map(|&o| OrientationEntry {
            phase: forward_field(&chi, &dipole_kernel(&g, &o).unwrap()).unwrap(),
            magnitude: uniform(g, 2, 0.2, 1.0),
            orientation: o,
        })
        .collect();
    let ds = OrientationDataset::new(entries, ScalarVolume::filled(g, 1.0)).unwrap();
    assert!(ndi_cost(&chi, &ds).unwrap() < 1e-20);
    assert!(ndi_gradient(&chi, &ds, 0.0).unwrap().max_abs() < 1e-9);
}

#[test]
fn zero_weights_leave_plain_tikhonov_gradient() {
    let g = VolumeGrid::cube(6, 1.0).unwrap();
    let ds = random_dataset(g, 3, 2);
    let ds = ds
        .entries()
        .iter()
        .map(|e| OrientationEntry {
            magnitude: ScalarVolume::zeros(g),
            ..e.clone()
        })
        .collect();
    let ds = OrientationDataset::new(ds, ScalarVolume::filled(g, 1.0)).unwrap();
    let chi = uniform(g, 8, -1.0, 1.0);
    assert_eq!(ndi_gradient(&chi, &ds, 0.5).unwrap(), chi);
}

#[test]
fn gradient_matches_finite_differences() {
    let g = VolumeGrid::cube(8, 1.0).unwrap();
    let lambda = 0.01;
    for seed in 0..4 {
        let ds = random_dataset(g, seed, 1 + seed as usize % 3);
        let chi = uniform(g, seed + 40, -0.3, 0.3);
        let grad = ndi_gradient(&chi, &ds, lambda).unwrap();
        let f = |x: &ScalarVolume| ndi_cost(x, &ds).unwrap() + lambda * x.norm2().powi(2);
        for dir_seed in 0..5 {
            let dir = uniform(g, 1000 + seed * 10 + dir_seed, -1.0, 1.0);
            let dir = dir.scale(1.0 / dir.norm2());
            let h = 1e-3;
            let at = |t: f64| f(&chi.add(&dir.scale(t)).unwrap());
            // fourth-order central difference
            let fd = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
            let exact = grad.dot(&dir).unwrap();
            assert!((fd - exact).abs() <= 1e-6 * exact.abs().max(grad.norm2() * 1e-3), "{fd} vs {exact}");
        }
    }
}

#[test]
fn descent_is_monotone_and_histories_have_full_length() {
    let f = head_fixture(32, 0.01);
    let mut cfg = config(0.0, 60);
    cfg.reference = Some(f.truth.clone());
    for n in [1, 3] {
        let res = ndi_reconstruct(&f.three.truncated(n).unwrap(), &cfg).unwrap();
        assert_eq!(res.cost_history.len(), 60);
        assert_eq!(res.nrmse_history.as_ref().unwrap().len(), 60);
        assert!(res.cost_history.windows(2).all(|w| w[1] <= w[0]), "{n} orientations");
        assert!(res.chi.data().iter().zip(f.mask.data()).all(|(&c, &m)| m != 0.0 || c == 0.0));
    }
}

#[test]
fn result_does_not_depend_on_orientation_order() {
    let f = head_fixture(24, 0.01);
    let e = f.three.entries();
    let shuffled = OrientationDataset::new(vec![e[2].clone(), e[0].clone(), e[1].clone()], f.mask.clone()).unwrap();
    let cfg = config(0.001, 30);
    let a = ndi_reconstruct(&f.three, &cfg).unwrap();
    let b = ndi_reconstruct(&shuffled, &cfg).unwrap();
    assert!(a.chi.sub(&b.chi).unwrap().max_abs() < 1e-12);
}

#[test]
fn stronger_tikhonov_shrinks_the_solution() {
    let f = head_fixture(32, 0.02);
    let one = f.three.truncated(1).unwrap();
    let weak = ndi_reconstruct(&one, &config(0.001, 100)).unwrap();
    let strong = ndi_reconstruct(&one, &config(0.01, 100)).unwrap();
    assert!(strong.chi.norm2() <= weak.chi.norm2());
}

#[test]
fn beats_tkd_on_noiseless_sphere() {
    let g = VolumeGrid::cube(64, 1.0).unwrap();
    let spec = PhantomSpec {
        shapes: vec![
            Shape {
                kind: ShapeKind::Sphere { radius: 24.0 },
                center: [32.0; 3],
                chi: 0.0,
                magnitude: 1.0,
            },
            Shape {
                kind: ShapeKind::Sphere { radius: 8.0 },
                center: [32.0; 3],
                chi: 0.3,
                magnitude: 0.8,
            },
        ],
        ..Default::default()
    };
    let truth = make_phantom(&g, &spec).unwrap();
    let mask = make_mask(&g, &spec).unwrap();
    let ds = simulate_acquisition(&truth, &make_magnitude(&g, &spec).unwrap(), &[Orientation::z()], &NoiseSpec::noiseless())
        .unwrap();
    let ndi = ndi_reconstruct(&ds, &config(0.0, 400)).unwrap();
    let kernel = dipole_kernel(&g, &Orientation::z()).unwrap();
    let t = tkd(&ds.entries()[0].phase, &kernel, &TkdConfig { delta: 0.2 }).unwrap();
    let e_ndi = nrmse(&ndi.chi, &truth, &mask).unwrap();
    let e_tkd = nrmse(&t, &truth, &mask).unwrap();
    assert!(e_ndi < e_tkd, "ndi {e_ndi} tkd {e_tkd}");
}

#[test]
fn normalization_makes_the_in_mask_peak_one() {
    let f = head_fixture(24, 0.0);
    let n = normalize_weights(&f.three).unwrap();
    let peak = n
        .entries()
        .iter()
        .flat_map(|e| e.magnitude.data().iter().zip(f.mask.data()).filter(|(_, &m)| m != 0.0).map(|(&w, _)| w))
        .fold(0.0, f64::max);
    assert_eq!(peak, 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn trigonometric_cost_equals_complex_residual(seed in 0u64..10_000, n in 1usize..=3) {
        let g = VolumeGrid::new([6, 5, 7], [1.0, 1.2, 0.8]).unwrap();
        let ds = random_dataset(g, seed, n);
        let chi = uniform(g, seed + 77, -2.0, 2.0);
        let trig = ndi_cost(&chi, &ds).unwrap();
        let direct = complex_residual_cost(&chi, &ds);
        prop_assert!((trig - direct).abs() <= 1e-10 * direct);
    }
}
