use momentstein::clt_bench::*;
use momentstein::metrics::empirical_wp_to_gaussian;
use momentstein::{Factor, Measure};

fn isotropic(f: Factor) -> Factor {
    let mu = Measure::product(vec![f.clone()]).unwrap();
    let (m, v) = (mu.mean()[0], mu.covariance()[(0, 0)]);
    f.affine(1.0 / v.sqrt(), -m / v.sqrt()).unwrap()
}

fn builtin_factors() -> Vec<(&'static str, Factor)> {
    let r3 = 3f64.sqrt();
    vec![
        ("gaussian", Factor::gaussian(1.0).unwrap()),
        ("uniform", Factor::uniform(-r3, r3).unwrap()),
        ("exponential", Factor::exponential_centered()),
        ("quartic", isotropic(Factor::quartic(1.0 / 12.0).unwrap())),
    ]
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    (m, var.sqrt())
}

#[test]
fn estimates_stay_below_certified_bounds() {
    let cfg = CltConfig {
        dims: vec![1, 2, 4],
        ns: vec![1, 4, 16],
        samples: 2000,
        reps: 1,
        seed: 5,
        ..Default::default()
    };
    for (name, f) in builtin_factors() {
        for r in run_clt_experiment(&f, &cfg).unwrap() {
            let b = r.certified_bound.unwrap();
            assert!(r.wp_estimate >= 0.0 && b >= 0.0);
            assert!(
                r.wp_estimate <= b + 3.0 * r.wp_error,
                "{name}: d = {}, n = {}: {} > {} + 3 * {}",
                r.d,
                r.n,
                r.wp_estimate,
                b,
                r.wp_error
            );
        }
    }
}

#[test]
fn gaussian_factor_sits_on_the_noise_floor() {
    let reps = 8;
    let cfg = CltConfig {
        dims: vec![1, 2],
        ns: vec![1, 8],
        samples: 2000,
        reps,
        seed: 17,
        ..Default::default()
    };
    let records = run_clt_experiment(&Factor::gaussian(1.0).unwrap(), &cfg).unwrap();
    for d in [1, 2] {
        // Independent floor: a fresh Gaussian cloud against the reference.
        let floor: Vec<f64> = (0..reps as u64)
            .map(|k| {
                let z = Measure::standard_gaussian(d).sample(cfg.samples, 1000 + k).unwrap();
                empirical_wp_to_gaussian(&z, 2.0, 2000 + k).unwrap().value
            })
            .collect();
        let (mf, sf) = mean_sd(&floor);
        for n in [1, 8] {
            let est: Vec<f64> = records
                .iter()
                .filter(|r| r.d == d && r.n == n)
                .map(|r| r.wp_estimate)
                .collect();
            assert_eq!(est.len(), reps);
            let (me, se) = mean_sd(&est);
            let z = (me - mf).abs() / ((se * se + sf * sf) / reps as f64).sqrt();
            assert!(z < 4.0, "d = {d}, n = {n}: z = {z}");
        }
    }
}

#[test]
fn certified_bounds_are_monotone() {
    let cfg = CltConfig {
        dims: vec![1, 2, 4],
        ns: vec![1, 2, 4],
        samples: 200,
        reps: 1,
        ..Default::default()
    };
    let r3 = 3f64.sqrt();
    let records = run_clt_experiment(&Factor::uniform(-r3, r3).unwrap(), &cfg).unwrap();
    let bound = |d: usize, n: usize| {
        records
            .iter()
            .find(|r| r.d == d && r.n == n)
            .and_then(|r| r.certified_bound)
            .unwrap()
    };
    for d in [1, 2, 4] {
        for n in [1, 2, 4] {
            let expected = (d as f64).sqrt() * 0.2f64.sqrt() / (n as f64).sqrt();
            assert!((bound(d, n) - expected).abs() < 1e-6);
            if n > 1 {
                assert!(bound(d, n) < bound(d, n / 2));
            }
            if d > 1 {
                assert!(bound(d, n) > bound(d / 2, n));
            }
        }
    }
}

#[test]
fn records_do_not_depend_on_thread_count() {
    let cfg = CltConfig {
        dims: vec![1, 2],
        ns: vec![1, 3],
        samples: 1500,
        reps: 2,
        ..Default::default()
    };
    let f = Factor::exponential_centered();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_clt_experiment(&f, &cfg).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(3));
    // Reordering the grid leaves each record unchanged.
    let reversed = CltConfig {
        dims: vec![2, 1],
        ns: vec![3, 1],
        ..cfg.clone()
    };
    let other = run_clt_experiment(&f, &reversed).unwrap();
    for r in &one {
        assert!(other.contains(r));
    }
}

#[test]
fn non_isotropic_factor_is_rejected() {
    let cfg = CltConfig {
        dims: vec![1],
        ns: vec![1],
        samples: 100,
        ..Default::default()
    };
    let err = run_clt_experiment(&Factor::gaussian(2.0).unwrap(), &cfg).unwrap_err();
    assert!(matches!(err, momentstein::Error::NotIsotropic(_)));
}
