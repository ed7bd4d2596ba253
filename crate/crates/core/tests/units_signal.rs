use approx::assert_relative_eq;
use num_complex::Complex64 as C64;
use proptest::prelude::*;

use nlsecap::signal::*;
use nlsecap::units::*;

#[test]
fn table_one_at_one_milliwatt() {
    let p = PhysicalParams::table_one(1e-3, 1);
    let s = derive_scales_for_symbols(&p, 64).unwrap();
    assert_relative_eq!(s.t_s, 1706.3e-12, max_relative = 1e-4);
    assert_relative_eq!(s.bts, 170.6, max_relative = 1e-3);
    assert_relative_eq!(s.eps2, 1.307e-3, max_relative = 1e-3);
    assert_relative_eq!(s.l_s, 3.72e-4, max_relative = 1e-3);
    assert_relative_eq!(p.sigma2(), 13.2e-20 * 99.0, max_relative = 1e-12);
}

#[test]
fn snr_examples() {
    let p = PhysicalParams::table_one(1e-3, 20);
    let v = snr(&p).unwrap();
    assert_relative_eq!(v, 38.26, max_relative = 2e-3);
    assert_relative_eq!(snr_db(&p).unwrap(), 15.83, epsilon = 0.01);
    let mut q = PhysicalParams::table_one(1.0, 1);
    q.power = q.sigma2() * q.bandwidth;
    assert_relative_eq!(snr(&q).unwrap(), 1.0, max_relative = 1e-12);
    assert!(snr(&PhysicalParams::table_one(1e-30, 1)).unwrap() < 1e-20);
}

#[test]
fn validity_threshold_is_inclusive() {
    let s = derive_scales_for_symbols(&PhysicalParams::table_one(1e-3, 1), 64).unwrap();
    assert!(validity_flag(&s, DEFAULT_BTS_THRESHOLD));
    let mut t = s;
    t.bts = 1.0;
    assert!(!validity_flag(&t, DEFAULT_BTS_THRESHOLD));
    t.bts = 10.0;
    assert!(validity_flag(&t, 10.0));
}

#[test]
fn duration_sets_symbol_count() {
    let p = PhysicalParams::table_one(1e-3, 1);
    let s = derive_scales(&p, 64e-11).unwrap();
    assert_eq!(s.m, 64);
    assert_relative_eq!(s.t_total, 64.0 * s.tau, max_relative = 1e-14);
    assert!(derive_scales(&p, 1e-12).is_err());
}

#[test]
fn config_overrides_and_rejects() {
    let kv = KeyValues::parse("power_dBm = 3\nnum_spans = 7 # comment\n\nspan_km = 80\n").unwrap();
    let p = PhysicalParams::from_config(&kv).unwrap();
    assert_eq!(p.num_spans, 7);
    assert_relative_eq!(p.power, dbm_to_watts(3.0), max_relative = 1e-14);
    assert_eq!(p.span_km, 80.0);
    assert!(KeyValues::parse("a = 1\na = 2\n").is_err());
    assert!(KeyValues::parse("no equals sign\n").is_err());
    assert!(PhysicalParams::from_config(&KeyValues::parse("num_spans = 0\n").unwrap()).is_err());
    assert!(PhysicalParams::from_config(&KeyValues::parse("gamma_per_W_km = x\n").unwrap()).is_err());
}

#[test]
fn white_gaussian_statistics() {
    let s = generate_white_gaussian(4096, 0.01, 1.0, 5).unwrap();
    let c0 = empirical_correlation(&s, 0).unwrap();
    assert_relative_eq!(c0.re, 100.0, max_relative = 0.05);
    assert_relative_eq!(energy(&s), 4096.0, max_relative = 0.05);
    let again = generate_white_gaussian(4096, 0.01, 1.0, 5).unwrap();
    assert_eq!(s.samples(), again.samples());
    assert!(generate_white_gaussian(16, 0.1, 0.0, 1).unwrap().samples().iter().all(|x| *x == C64::new(0.0, 0.0)));
}

#[test]
fn per_sample_variance_over_seeds() {
    let (m, tau) = (256, 0.05);
    let total: f64 = (0..100).map(|seed| energy(&generate_white_gaussian(m, tau, 1.0, seed).unwrap()) / tau).sum();
    let var = total / (100.0 * m as f64);
    assert_relative_eq!(var, 1.0 / tau, max_relative = 0.02);
}

#[test]
fn off_lag_correlation_is_small() {
    let (m, tau) = (1024, 0.1);
    let bound = 5.0 * (1.0 / tau) / (m as f64).sqrt();
    let hits = (0..100)
        .filter(|&seed| {
            let s = generate_white_gaussian(m, tau, 1.0, seed).unwrap();
            empirical_correlation(&s, 3).unwrap().norm() <= bound
        })
        .count();
    assert!(hits >= 99);
    let z = Signal::zeros(8, 0.1).unwrap();
    assert_eq!(empirical_correlation(&z, 0).unwrap(), C64::new(0.0, 0.0));
}

#[test]
fn sech_energy_matches_closed_form() {
    let s = Signal::from_fn(4000, 0.01, |t| C64::new(1.0 / t.cosh(), 0.0)).unwrap();
    assert_relative_eq!(energy(&s), 2.0, max_relative = 1e-6);
    assert_eq!(energy(&Signal::zeros(10, 0.3).unwrap()), 0.0);
}

#[test]
fn sinc_examples() {
    assert_eq!(sinc_kernel(3.0, 0.0), 3.0);
    assert!(sinc_kernel(2.0, std::f64::consts::PI / 2.0).abs() < 1e-15);
    assert_relative_eq!(sinc_kernel(1.0, 1.0), 1f64.sin(), max_relative = 1e-15);
}

#[test]
fn noise_streams_are_reproducible() {
    let a = noise_draw(32, 0.1, 1e-3, 4, 9);
    let b = noise_draw(32, 0.1, 1e-3, 4, 9);
    let c = noise_draw(32, 0.1, 1e-3, 5, 9);
    assert_eq!(a.samples, b.samples);
    assert_ne!(a.samples, c.samples);
    assert_eq!(a.amplifier, 4);
}

#[test]
fn non_finite_samples_are_rejected() {
    assert!(Signal::new(vec![C64::new(f64::NAN, 0.0); 4], 0.1).is_err());
    assert!(Signal::new(vec![C64::new(1.0, 0.0)], 0.1).is_err());
    assert!(Signal::new(vec![C64::new(1.0, 0.0); 4], 0.0).is_err());
}

fn arb_params() -> impl Strategy<Value = PhysicalParams> {
    (1.0..50.0f64, 0.1..5.0f64, 1e10..1e12f64, 10.0..150.0f64, 1usize..60, 1e-5..1e-1f64, 0.05..0.3f64).prop_map(
        |(beta2, gamma, b, span, k, p, alpha)| {
            let mut x = PhysicalParams::table_one(p, k);
            x.beta2 = beta2;
            x.gamma = gamma;
            x.bandwidth = b;
            x.span_km = span;
            x.alpha_db_per_km = alpha;
            x
        },
    )
}

fn arb_signal() -> impl Strategy<Value = Signal> {
    (prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 2..40), 0.01..1.0f64, -3.0..3.0f64)
        .prop_map(|(v, tau, x)| Signal::new(v.into_iter().map(|(a, b)| C64::new(a, b)).collect(), tau).unwrap().at_position(x))
}

proptest! {
    #[test]
    fn physical_round_trip(p in arb_params()) {
        let s = derive_scales_for_symbols(&p, 64).unwrap();
        let (power, b, l) = recover_physical(&s, p.beta2, p.gamma);
        prop_assert!((power / p.power - 1.0).abs() < 1e-12);
        prop_assert!((b / p.bandwidth - 1.0).abs() < 1e-12);
        prop_assert!((l / p.span_km - 1.0).abs() < 1e-12);
    }

    #[test]
    fn defining_relations(p in arb_params()) {
        let s = derive_scales_for_symbols(&p, 64).unwrap();
        let b2 = p.beta2 * 1e-24;
        prop_assert!((b2 / (2.0 * s.t_s * s.t_s) * s.ell - 1.0).abs() < 1e-12);
        prop_assert!((p.gamma * s.r / 2.0 * s.ell - 1.0).abs() < 1e-12);
        prop_assert!((s.d - 1.0).abs() < 1e-12);
        prop_assert!((s.eps2 / (p.sigma2() * p.bandwidth / p.power) - 1.0).abs() < 1e-12);
        let v = snr(&p).unwrap();
        prop_assert!((v * p.num_spans as f64 * s.eps2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn energy_is_phase_invariant(s in arb_signal(), theta in 0.0..6.0f64) {
        let rot = C64::from_polar(1.0, theta);
        let r = s.with_samples(s.samples().iter().map(|x| x * rot).collect()).unwrap();
        prop_assert!((energy(&r) - energy(&s)).abs() <= 1e-12 * energy(&s).max(1.0));
    }

    #[test]
    fn text_and_binary_round_trip(s in arb_signal()) {
        let mut t = Vec::new();
        s.write_text(&mut t).unwrap();
        prop_assert_eq!(&Signal::read_text(&t[..]).unwrap(), &s);
        let mut b = Vec::new();
        s.write_binary(&mut b).unwrap();
        prop_assert_eq!(&Signal::read_binary(&b[..]).unwrap(), &s);
    }
}
