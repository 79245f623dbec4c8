use momentstein::inequalities::*;
use momentstein::moment_map::{solve_moment_map, Backend, SolveOptions};
use momentstein::{kernel_from_moment_map, Factor, Measure, Polynomial1d, SeparablePotential, SteinKernelField};
use proptest::prelude::*;

fn families() -> Vec<(&'static str, Measure)> {
    let r3 = 3f64.sqrt();
    vec![
        ("gaussian(0.25)", Measure::gaussian(1, 0.25).unwrap()),
        ("gaussian(4)", Measure::gaussian(1, 4.0).unwrap()),
        ("uniform", Measure::uniform_box(1, -r3, r3).unwrap()),
        ("exponential", Measure::exponential_centered(1).unwrap()),
        ("quartic", Measure::quartic(1, 1.0 / 12.0).unwrap()),
        (
            "uniform x quartic",
            Measure::product(vec![Factor::uniform(-1.0, 1.0).unwrap(), Factor::quartic(1.0 / 12.0).unwrap()]).unwrap(),
        ),
    ]
}

fn kernel(mu: &Measure) -> SteinKernelField {
    let (phi, _) = solve_moment_map(mu, Backend::Auto, &SolveOptions::default()).unwrap();
    kernel_from_moment_map(&phi).unwrap()
}

#[test]
fn weighted_poincare_holds_on_every_family() {
    for (name, mu) in families() {
        let tau = kernel(&mu);
        let r = weighted_poincare_check(&tau, &mu, &default_scalar_family(mu.dim())).unwrap();
        assert!(r.passed, "{name}: worst margin {}", r.worst_margin);
        assert!(r.worst_margin >= -1e-8, "{name}: {}", r.worst_margin);
    }
}

#[test]
fn moment_estimate_holds_on_every_family() {
    for (name, mu) in families() {
        let tau = kernel(&mu);
        let r = klartag_suite(&tau, &mu, &[1, 2, 3], 16, 11).unwrap();
        assert_eq!(r.tests.len(), 48);
        assert!(r.passed, "{name}: {:?}", r.tests.iter().find(|t| !t.pass));
    }
}

#[test]
fn brascamp_lieb_for_quartic_potential() {
    let v = Polynomial1d::quartic(0.25);
    let nu = Measure::from_potential_1d(v.clone()).unwrap();
    let r = brascamp_lieb_check(&SeparablePotential::new(1, v), &nu, &default_scalar_family(1)).unwrap();
    assert!(r.passed && r.worst_margin >= -1e-8, "{r:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn linear_test_functions_are_equality_cases(a in -1.0f64..1.0, b in -1.0f64..1.0) {
        prop_assume!(a.abs() + b.abs() > 1e-3);
        let mu = Measure::product(vec![Factor::uniform(-1.0, 1.0).unwrap(), Factor::gaussian(2.0).unwrap()]).unwrap();
        let tau = kernel(&mu);
        let r = linear_equality_residual(&tau, &mu, &[a, b]).unwrap();
        prop_assert!(r.abs() < 1e-8, "residual {r}");
    }
}

#[test]
fn brascamp_lieb_from_measure_potential() {
    let nu = Measure::product(vec![Factor::gaussian(4.0).unwrap(), Factor::quartic(0.25).unwrap().affine(0.5, 0.0).unwrap()]).unwrap();
    let v = nu.product_potential().unwrap();
    let r = brascamp_lieb_check(&v, &nu, &default_scalar_family(2)).unwrap();
    assert!(r.passed && r.worst_margin >= -1e-8, "{r:?}");
    assert!(Measure::uniform_box(1, -1.0, 1.0).unwrap().product_potential().is_none());
}
