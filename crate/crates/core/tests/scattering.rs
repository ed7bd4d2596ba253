use approx::assert_relative_eq;
use num_complex::Complex64 as C64;
use proptest::prelude::*;

use nlsecap::signal::*;
use nlsecap::zs_scattering::*;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn sech_at(m: usize, half: f64, amp: f64, t0: f64) -> Signal {
    Signal::from_fn(m, 2.0 * half / m as f64, |t| c(amp / (t - t0).cosh(), 0.0)).unwrap()
}

#[test]
fn sech_scattering_coefficient() {
    let s = Signal::sech(1024, 20.0, 1.0).unwrap();
    let a = jost_and_a(&s, c(0.0, 1.0)).unwrap().a;
    assert!((a - c(1.0 / 3.0, 0.0)).norm() < 1e-3);
    let a_half = jost_and_a(&s, c(0.0, 0.5)).unwrap().a;
    assert!(a_half.norm() < 1e-3);
}

#[test]
fn single_soliton_spectrum() {
    let s = Signal::sech(1024, 20.0, 1.0).unwrap();
    let st = scatter(&s, &ScatterOptions::default()).unwrap();
    assert_eq!(st.kind, ModeKind::Decaying);
    assert_eq!(st.n(), 1);
    assert!((st.solitons[0].lambda - c(0.0, 0.5)).norm() < 1e-3);
    assert!((st.solitons[0].b.norm() - 1.0).abs() < 1e-3);
    assert_eq!(st.n_continuum(), 1022);
}

#[test]
fn shift_scales_norming_constant() {
    let l = c(0.0, 0.5);
    let b0 = norming_data(&sech_at(1024, 20.0, 1.0, 0.0), l).unwrap().0;
    for t0 in [1.0, -1.0] {
        let b1 = norming_data(&sech_at(1024, 20.0, 1.0, t0), l).unwrap().0;
        let r = (b1 / b0).norm().ln();
        assert!((r - t0).abs() < 1e-3, "t0 = {t0}: ln ratio {r}");
    }
}

#[test]
fn small_pulse_has_only_continuum() {
    let s = Signal::sech(128, 12.0, 0.1).unwrap();
    let st = scatter(&s, &ScatterOptions::default()).unwrap();
    assert_eq!(st.n(), 0);
    assert_eq!(st.n_continuum(), 128);
    let cd = st.continuum.unwrap();
    assert!(cd.xi_grid.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn zero_signal_has_no_bound_states() {
    let s = Signal::zeros(32, 0.1).unwrap();
    assert!(derivative_eigenfunction(&s, c(0.0, 0.5)).is_err());
    let st = scatter(&s, &ScatterOptions::default()).unwrap();
    assert_eq!(st.n(), 0);
}

#[test]
fn derivative_matches_finite_difference() {
    let s = Signal::sech(256, 10.0, 1.2).unwrap();
    let l = c(0.3, 0.2);
    let h = 1e-5;
    let j = jost_and_a(&s, l).unwrap();
    let jp = jost_and_a(&s, l + h).unwrap();
    let jm = jost_and_a(&s, l - h).unwrap();
    let fd = (jp.a - jm.a) / (2.0 * h);
    assert!((fd - j.a_prime).norm() < 1e-6 * j.a_prime.norm().max(1.0));
    let mut worst: f64 = 0.0;
    for p in 0..j.phi.len() {
        for i in 0..2 {
            let fd = (jp.phi[p][i] - jm.phi[p][i]) / (2.0 * h);
            worst = worst.max((fd - j.phi_prime[p][i]).norm());
        }
    }
    assert!(worst < 1e-5, "{worst}");
}

#[test]
fn bound_state_derivative_satisfies_recursion() {
    let s = Signal::sech(1024, 20.0, 2.5).unwrap();
    let st = scatter(&s, &ScatterOptions { with_continuum: false, ..Default::default() }).unwrap();
    assert_eq!(st.n(), 2);
    for m in &st.solitons {
        assert!(derivative_residual(&s, m) < 1e-10);
        let dpsi = derivative_eigenfunction(&s, m.lambda).unwrap();
        assert_eq!(dpsi.len(), m.psi_prime.len());
    }
}

#[test]
fn ring_spectrum_is_conjugation_closed() {
    let s = generate_white_gaussian(12, 0.2, 1.0, 3).unwrap();
    let vals = full_spectrum(&s).unwrap();
    assert_eq!(vals.len(), 24);
    let tau = s.tau();
    for l in &vals {
        let target = fold_xi(l.conj(), tau);
        let d = vals.iter().map(|m| (fold_xi(*m, tau) - target).norm()).fold(f64::INFINITY, f64::min);
        assert!(d < 1e-8, "{l} has no conjugate partner ({d})");
    }
}

#[test]
fn serialization_is_deterministic() {
    let s = Signal::sech(256, 10.0, 2.0).unwrap();
    let o = ScatterOptions::default();
    let mut a = Vec::new();
    let mut b = Vec::new();
    scatter(&s, &o).unwrap().write_text(&mut a, true).unwrap();
    scatter(&s, &o).unwrap().write_text(&mut b, true).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("# scattering v1\n"));
    assert!(text.contains("\nN 2\n"));
}

#[test]
fn trace_identity_for_pure_soliton() {
    let s = Signal::sech(1024, 20.0, 1.0).unwrap();
    let st = scatter(&s, &ScatterOptions::default()).unwrap();
    assert_relative_eq!(energy(&s), 4.0 * st.solitons[0].eta(), max_relative = 1e-3);
}

#[test]
fn solitons_never_exceed_energy_on_decaying_windows() {
    let o = ScatterOptions { with_continuum: false, ..Default::default() };
    let shapes: Vec<Signal> = vec![
        Signal::sech(1024, 20.0, 1.7).unwrap(),
        Signal::from_fn(1024, 0.04, |t| c(2.0 * (-t * t / 2.0).exp(), 0.0)).unwrap(),
        Signal::from_fn(1024, 0.04, |t| c(1.5 / t.cosh(), 0.0) * C64::from_polar(1.0, 0.8 * t)).unwrap(),
    ];
    for s in shapes {
        let st = scatter(&s, &o).unwrap();
        assert_eq!(st.kind, ModeKind::Decaying);
        let bound: f64 = st.solitons.iter().map(|m| 4.0 * m.eta()).sum();
        assert!(bound <= energy(&s) * (1.0 + 1e-3), "{bound} > {}", energy(&s));
    }
}

#[test]
fn tail_decay_rate_is_eta() {
    let s = Signal::sech(2048, 30.0, 1.0).unwrap();
    let st = scatter(&s, &ScatterOptions { with_continuum: false, ..Default::default() }).unwrap();
    let m = &st.solitons[0];
    let k = localization_length_estimate(m, s.tau()).unwrap();
    assert_relative_eq!(k, m.eta(), max_relative = 0.05);
}

#[test]
fn poisson_brackets_of_soliton_coordinates() {
    let s = Signal::sech(1024, 20.0, 1.0).unwrap();
    let st = scatter(&s, &ScatterOptions { with_continuum: false, ..Default::default() }).unwrap();
    let lat = Lattice::from_signal(&s);
    let m = &st.solitons[0];
    let gl = lambda_gradient(&lat, m);
    let gm = mu_gradient(&lat, m);
    assert!(gl.bracket(&gl, &lat.w, lat.tau).norm() < 1e-8);
    assert!(gl.bracket(&gm, &lat.w, lat.tau).norm() > 1e-3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn spectrum_is_phase_invariant(seed in 0u64..1000, theta in 0.0..6.0f64) {
        let s = generate_white_gaussian(24, 0.2, 1.0, seed).unwrap();
        let rot = C64::from_polar(1.0, theta);
        let r = s.with_samples(s.samples().iter().map(|x| x * rot).collect()).unwrap();
        let o = ScatterOptions::default();
        let a = eigenvalues(&s, &o).unwrap();
        let b = eigenvalues(&r, &o).unwrap();
        prop_assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).norm() < 1e-7);
        }
    }

    #[test]
    fn fold_stays_in_brillouin_zone(re in -100.0..100.0f64, im in 0.0..5.0f64, tau in 0.01..1.0f64) {
        let f = fold_xi(c(re, im), tau);
        let half = std::f64::consts::PI / (2.0 * tau);
        prop_assert!(f.re >= -half - 1e-12 && f.re < half + 1e-12);
        prop_assert!((f.im - im).abs() < 1e-12);
    }
}
