mod common;

use common::rng;
use proptest::prelude::*;
use rand::Rng;
use s6_dynamics::dynamics::{integrate_adaptive, AdaptiveOptions};
use s6_dynamics::scenario::{
    blowup_bound, classify, find_r0, r0_function, slow_divergence_hypothesis, InputOutputSpectrum,
    ScenarioLabel,
};
use s6_dynamics::s6::softplus;
use s6_dynamics::{fixtures, Error, Matrix, S6Params, TokenSequence};

#[test]
fn single_channel_fixtures_are_labelled() {
    let cases = [
        (fixtures::convergence(), ScenarioLabel::Convergence),
        (fixtures::slow_divergence(), ScenarioLabel::SlowDivergence),
        (fixtures::slow_divergence_ordered(), ScenarioLabel::SlowDivergence),
        (fixtures::fast_divergence(), ScenarioLabel::FastDivergence),
    ];
    for (f, label) in cases {
        let report = classify(&f.params, &f.x0).unwrap();
        assert_eq!(report.label, label, "{}", f.name);
        assert!(!report.conjectural);
    }
}

#[test]
fn planar_fixtures_are_conjectural() {
    let report = classify(&fixtures::planar_negative().params, &fixtures::planar_negative().x0).unwrap();
    assert_eq!(report.label, ScenarioLabel::Convergence);
    assert!(report.conjectural);
    let InputOutputSpectrum::Eigenvalues(ev) = report.mu else { panic!("expected a spectrum") };
    assert!((ev[0] + 0.552276).abs() < 1e-4 && (ev[1] + 0.967445).abs() < 1e-4);

    for f in [fixtures::planar_mixed(), fixtures::planar_positive()] {
        let report = classify(&f.params, &f.x0).unwrap();
        assert_ne!(report.label, ScenarioLabel::Convergence, "{}", f.name);
        assert!(report.conjectural);
        assert!(report.blowup_bounds.is_none());
    }
}

#[test]
fn report_contents() {
    let f = fixtures::fast_divergence();
    let report = classify(&f.params, &f.x0).unwrap();
    assert_eq!(report.mu, InputOutputSpectrum::Scalar(0.76));
    assert!(report.per_token_sdelta_sign.iter().all(|s| s == &vec![1]));
    assert!((report.r0 - 2.1160).abs() < 1e-3);
    assert!(!report.hypothesis_holds);
    let bounds = report.blowup_bounds.unwrap();
    let expected = 1.0 / (2.0 * 0.76 * softplus(0.59 * 0.99) * 0.99 * 0.99);
    assert!((bounds.min - expected).abs() < 1e-14);
}

#[test]
fn zero_tokens_and_zero_coefficients() {
    let p = S6Params::scalar(1.0, -1.0, 1.0).unwrap();
    let x = TokenSequence::from_scalars(&[1.0, 0.0]).unwrap();
    assert!(matches!(classify(&p, &x), Err(Error::ZeroToken { token: 1, .. })));

    let flat = S6Params::scalar(0.0, -1.0, 1.0).unwrap();
    let x = TokenSequence::from_scalars(&[1.0, 2.0]).unwrap();
    assert_eq!(classify(&flat, &x).unwrap().label, ScenarioLabel::Indeterminate);

    // S_Δ x = 0 for one token while the rest are negative
    let p = S6Params::scalar(1.0, 0.0, 1.0).unwrap();
    assert_eq!(classify(&p, &x).unwrap().label, ScenarioLabel::Indeterminate);
}

#[test]
fn r0_root() {
    assert!(r0_function(1.0) > 0.0 && r0_function(3.0) < 0.0);
    let r0 = find_r0(1e-4).unwrap();
    assert!((2.1150..=2.1170).contains(&r0), "{r0}");
    let fine = find_r0(1e-8).unwrap();
    assert!(r0_function(fine).abs() < 1e-7);
    assert!(find_r0(0.0).is_err());
}

#[test]
fn ordering_hypothesis() {
    let p = S6Params::scalar(1.0, -1.0, 1.0).unwrap();
    let good = TokenSequence::from_scalars(&[2.5, 3.0, 3.5]).unwrap();
    assert!(slow_divergence_hypothesis(&p, &good).unwrap());
    let unordered = TokenSequence::from_scalars(&[3.0, 2.5, 3.5]).unwrap();
    assert!(!slow_divergence_hypothesis(&p, &unordered).unwrap());
    let flipped = TokenSequence::from_scalars(&[2.5, -3.0, 3.5]).unwrap();
    assert!(!slow_divergence_hypothesis(&p, &flipped).unwrap());

    let f = fixtures::slow_divergence();
    // S_Δ x_10 = -0.71 · 1.55 = -1.1005 > -r0
    assert!(!slow_divergence_hypothesis(&f.params, &f.x0).unwrap());
    let ordered = fixtures::slow_divergence_ordered();
    assert!(slow_divergence_hypothesis(&ordered.params, &ordered.x0).unwrap());

    let planar = fixtures::planar_mixed();
    assert!(slow_divergence_hypothesis(&planar.params, &planar.x0).is_err());
}

#[test]
fn blowup_bound_values() {
    let p = S6Params::scalar(1.0, 0.0, 1.0).unwrap();
    let x = TokenSequence::from_scalars(&[1.0]).unwrap();
    // S_Δ x = 0 is not covered
    assert!(blowup_bound(&p, &x).is_err());

    let p = S6Params::scalar(1.0, 1e-300, 1.0).unwrap();
    let b = blowup_bound(&p, &x).unwrap();
    assert!((b.min - 1.0 / (2.0 * std::f64::consts::LN_2)).abs() < 1e-12);

    let p = S6Params::scalar(0.9, 0.4, 1.0).unwrap();
    let x = TokenSequence::from_scalars(&[0.7, 1.4, -0.3]).unwrap();
    let b = blowup_bound(&p, &x).unwrap();
    assert!(b.per_token[1].unwrap() * 4.0 < b.per_token[0].unwrap());
    assert_eq!(b.per_token[2], None);
    assert_eq!(b.min, b.per_token[1].unwrap());

    let neg = S6Params::scalar(-1.0, 0.4, 1.0).unwrap();
    assert!(matches!(blowup_bound(&neg, &x), Err(Error::NotApplicable(_))));
}

#[test]
fn seeded_fast_instances_respect_the_bound() {
    let mut r = rng(77);
    for case in 0..20 {
        let mu = r.random_range(0.3..1.5);
        let sd = r.random_range(0.2..1.0);
        let a = r.random_range(0.5..2.0);
        let xs: Vec<f64> = (0..6).map(|_| r.random_range(0.4..1.2)).collect();
        let p = S6Params::scalar(mu, sd, a).unwrap();
        let x0 = TokenSequence::from_scalars(&xs).unwrap();
        let bound = blowup_bound(&p, &x0).unwrap().min;
        let (_, report) =
            integrate_adaptive(&p, &x0, &AdaptiveOptions::new(2.0 * bound, 1e-8)).unwrap();
        assert!(report.detected, "case {case}");
        let t = report.blowup_time.unwrap();
        assert!(t > 0.0 && t <= 1.1 * bound, "case {case}: {t} vs {bound}");
    }
}

proptest! {
    #[test]
    fn label_is_invariant_under_rescaling_the_io_matrices(
        mu in prop::sample::select(vec![-1.3, -0.2, 0.4, 2.0]),
        sd in prop::sample::select(vec![-0.8, 0.5]),
        c in 0.1f64..10.0,
        seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        let xs: Vec<f64> = (0..5).map(|_| r.random_range(0.2..2.0)).collect();
        let x0 = TokenSequence::from_scalars(&xs).unwrap();
        let one = |v: f64| Matrix::from_rows(&[vec![v]]).unwrap();
        let base = S6Params::new(vec![1.0], one(sd), one(mu), one(1.0)).unwrap();
        let scaled = S6Params::new(vec![1.0], one(sd), one(c * mu), one(c)).unwrap();
        let a = classify(&base, &x0).unwrap();
        let b = classify(&scaled, &x0).unwrap();
        prop_assert_eq!(a.label, b.label);
        let InputOutputSpectrum::Scalar(m) = b.mu else { unreachable!() };
        prop_assert!((m - c * c * mu).abs() <= 1e-12 * (c * c * mu).abs());
    }
}
