use momentstein::cloud::{PointCloud, WeightedCloud};
use momentstein::metrics::*;
use momentstein::Measure;
use proptest::prelude::*;

fn gaussian_cloud(d: usize, n: usize, seed: u64) -> PointCloud {
    Measure::standard_gaussian(d).sample(n, seed).unwrap()
}

fn uniform(c: PointCloud) -> WeightedCloud {
    WeightedCloud::uniform(c).unwrap()
}

fn cost(x: &[f64], y: &[f64], p: f64) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt().powf(p)
}

/// Minimum over all permutations (Heap's algorithm).
fn brute_force_matching(a: &PointCloud, b: &PointCloud, p: f64) -> f64 {
    let n = a.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let eval = |perm: &[usize]| (0..n).map(|i| cost(a.row(i), b.row(perm[i]), p)).sum::<f64>() / n as f64;
    let mut best = eval(&perm);
    let mut c = vec![0; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(eval(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

#[test]
fn assignment_matches_brute_force() {
    for seed in 0..20 {
        for p in [1.0, 2.0, 3.0] {
            let a = gaussian_cloud(2, 6, seed);
            let b = gaussian_cloud(2, 6, 1000 + seed);
            let r = wp_exact_lp(&uniform(a.clone()), &uniform(b.clone()), p).unwrap();
            let oracle = brute_force_matching(&a, &b, p).powf(1.0 / p);
            assert!((r.value - oracle).abs() < 1e-10, "seed {seed} p {p}: {} vs {oracle}", r.value);
        }
    }
}

#[test]
fn network_simplex_matches_assignment_with_split_atoms() {
    // Splitting every atom of one cloud in two unequal halves leaves W_p unchanged.
    for seed in 0..10 {
        let a = gaussian_cloud(2, 30, seed);
        let b = gaussian_cloud(2, 30, 500 + seed);
        let exact = wp_exact_lp(&uniform(a.clone()), &uniform(b.clone()), 2.0).unwrap();
        let mut rows = Vec::new();
        let mut w = Vec::new();
        for i in 0..a.len() {
            rows.push(a.row(i).to_vec());
            rows.push(a.row(i).to_vec());
            w.extend([0.3 / 30.0, 0.7 / 30.0]);
        }
        let split = WeightedCloud::weighted(PointCloud::from_rows(&rows).unwrap(), w).unwrap();
        let lp = wp_exact_lp(&split, &uniform(b), 2.0).unwrap();
        assert_eq!(lp.metadata.solver.as_deref(), Some("network simplex"));
        assert!(lp.converged);
        assert!((lp.value - exact.value).abs() < 1e-9, "{} vs {}", lp.value, exact.value);
    }
}

#[test]
fn network_simplex_matches_quantile_coupling_in_1d() {
    for seed in 0..10 {
        let a = gaussian_cloud(1, 40, seed);
        let b = gaussian_cloud(1, 25, 77 + seed);
        let wa: Vec<f64> = (0..40).map(|i| 1.0 + (i % 3) as f64).collect();
        let wa = WeightedCloud::normalized(a, wa).unwrap();
        let wb = uniform(b);
        for p in [1.0, 2.0] {
            let lp = wp_exact_lp(&wa, &wb, p).unwrap();
            let q = w1d_exact(Law1d::Cloud(&wa), Law1d::Cloud(&wb), p).unwrap();
            assert!((lp.value - q.value).abs() < 1e-10, "{} vs {}", lp.value, q.value);
        }
    }
}

#[test]
fn lp_refuses_oversized_problems() {
    let a = WeightedCloud::normalized(gaussian_cloud(1, 1001, 1), vec![1.0; 1001]).unwrap();
    let b = WeightedCloud::normalized(gaussian_cloud(1, 1000, 2), (0..1000).map(|i| 1.0 + i as f64).collect()).unwrap();
    let err = wp_exact_lp(&a, &b, 2.0).unwrap_err();
    assert!(err.to_string().contains("use entropic"), "{err}");
}

#[test]
fn entropic_agrees_with_lp_on_gaussian_clouds() {
    for seed in 0..3 {
        let a = gaussian_cloud(1, 200, seed);
        let b = Measure::gaussian(1, 2.0).unwrap().sample(200, 100 + seed).unwrap();
        let lp = wp_exact_lp(&uniform(a.clone()), &uniform(b.clone()), 2.0).unwrap();
        let reg = 0.01 * median_cost(&a, &b, 2.0);
        let en = wp_entropic(&uniform(a), &uniform(b), 2.0, reg, 10_000).unwrap();
        assert!(en.metadata.marginal_violation.unwrap() < 1e-6, "{en:?}");
        assert!(
            (en.value - lp.value).abs() <= 3.0 * en.error_estimate,
            "entropic {} +- {} vs lp {}",
            en.value,
            en.error_estimate,
            lp.value
        );
    }
}

#[test]
fn bound_check_ratio_for_gaussians() {
    use momentstein::moment_map::closed_form_map;
    use momentstein::stein::kernel_from_moment_map;
    for s in [0.5, 0.8, 1.2, 2.0] {
        let mu = Measure::gaussian(1, s * s).unwrap();
        let tau = kernel_from_moment_map(&closed_form_map(&mu).unwrap()).unwrap();
        let b = wp_bound_check(&tau, &mu, 2.0, &BoundCheckOptions::default()).unwrap();
        // W_2 = |s - 1| and the bound is |s^2 - 1|.
        assert!((b.ratio - 1.0 / (s + 1.0)).abs() < 1e-9, "{s}: {}", b.ratio);
        assert_eq!(b.holds, Some(true));
        let b4 = wp_bound_check(&tau, &mu, 4.0, &BoundCheckOptions::default()).unwrap();
        assert_eq!(b4.holds, None);
    }
}

#[test]
fn large_two_dimensional_matching_is_certified() {
    let a = gaussian_cloud(2, 10_000, 3);
    let b = gaussian_cloud(2, 10_000, 4);
    let t = std::time::Instant::now();
    let r = wp_exact_lp(&uniform(a), &uniform(b), 2.0).unwrap();
    let gap = r.metadata.duality_gap.unwrap();
    assert!(gap <= 1e-9 * r.value * r.value, "{r:?}");
    eprintln!("10k matching: {} in {:?}", r.value, t.elapsed());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn methods_agree_on_small_clouds(seed in 0u64..10_000, n in 5usize..60, d in 1usize..3) {
        let a = gaussian_cloud(d, n, seed);
        let b = Measure::gaussian(d, 1.5).unwrap().sample(n, seed ^ 0xABCD).unwrap();
        let lp = wp_exact_lp(&uniform(a.clone()), &uniform(b.clone()), 2.0).unwrap();
        let reg = 0.01 * median_cost(&a, &b, 2.0);
        let en = wp_entropic(&uniform(a), &uniform(b), 2.0, reg, 10_000).unwrap();
        prop_assert!((en.value - lp.value).abs() <= 3.0 * en.error_estimate + 1e-9,
            "entropic {} +- {} vs lp {}", en.value, en.error_estimate, lp.value);
    }

    #[test]
    fn wp_is_symmetric_and_translation_covariant(seed in 0u64..10_000, shift in -3.0f64..3.0) {
        let a = gaussian_cloud(2, 20, seed);
        let b = gaussian_cloud(2, 20, seed + 1);
        let ab = wp_exact_lp(&uniform(a.clone()), &uniform(b.clone()), 2.0).unwrap().value;
        let ba = wp_exact_lp(&uniform(b.clone()), &uniform(a.clone()), 2.0).unwrap().value;
        prop_assert!((ab - ba).abs() < 1e-10);
        let moved = a.map_rows(|x| x.iter().map(|v| v + shift).collect()).unwrap();
        let self_shift = wp_exact_lp(&uniform(a), &uniform(moved), 2.0).unwrap().value;
        prop_assert!((self_shift - shift.abs() * 2f64.sqrt()).abs() < 1e-9);
    }
}
