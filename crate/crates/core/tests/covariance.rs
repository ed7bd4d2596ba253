use approx::assert_relative_eq;
use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use proptest::prelude::*;

use nlsecap::covariance::*;
use nlsecap::signal::*;
use nlsecap::units::*;
use nlsecap::zs_scattering::*;

fn ring_input(seed: u64) -> (Signal, ScatteringState, ChannelScales) {
    let scales = derive_scales_for_symbols(&PhysicalParams::table_one(1e-3, 10), 32).unwrap();
    let s = generate_white_gaussian(32, scales.tau, 1.0, seed).unwrap();
    let st = scatter(&s, &ScatterOptions::default()).unwrap();
    (s, st, scales)
}

fn max_abs(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|x| x.norm()).fold(0.0, f64::max)
}

#[test]
fn canonical_blocks_are_hermitian_and_unimodular() {
    let (s, st, _) = ring_input(1);
    let b = blocks_at_amplifier(&s, &st).unwrap();
    assert_eq!(b.dim(), 64);
    assert_eq!(b.dof(), 32);
    assert!(b.canonical_ring);
    assert!(max_abs(&(&b.matrix - b.matrix.adjoint())) < 1e-10 * max_abs(&b.matrix));
    let ld = log2_det(&b.matrix).unwrap();
    assert!(ld.abs() / b.dim() as f64 <= 1e-3, "{ld}");
    let raw = log2_det(&b.raw()).unwrap();
    assert_relative_eq!(raw, ld - b.dim() as f64 * b.canonical_scale.log2(), epsilon = 1e-6);
}

#[test]
fn sub_blocks_tile_the_matrix() {
    let (s, st, _) = ring_input(2);
    let b = blocks_at_amplifier(&s, &st).unwrap();
    let n = b.n;
    assert_eq!(b.m0_lambda_lambda().shape(), (2 * n, 2 * n));
    assert_eq!(b.m0_mu_mu().shape(), (2 * n, 2 * n));
    assert_eq!(b.m0_lambda_mu().shape(), (2 * n, 2 * n));
    assert_eq!(b.m0_rho_rho().shape(), (2 * b.n_c, 2 * b.n_c));
    assert_eq!(b.m0_lambda_mu(), b.matrix.view((2 * n, 0), (2 * n, 2 * n)).into_owned());
}

#[test]
fn congruence_and_block_formulas_agree() {
    let (s, st, scales) = ring_input(3);
    let b = blocks_at_amplifier(&s, &st).unwrap();
    for k in [1, 4, 10] {
        let gh = gordon_haus_terms(&st, k, 10, scales.l_s).unwrap();
        let a = assemble_mk(&b, &gh).unwrap();
        let c = assemble_mk_blockwise(&b, &gh).unwrap();
        assert!(max_abs(&(&a - &c)) <= 1e-9 * max_abs(&a), "k = {k}");
    }
}

#[test]
fn last_amplifier_has_no_drift() {
    let (_, st, scales) = ring_input(4);
    let gh = gordon_haus_terms(&st, 10, 10, scales.l_s).unwrap();
    assert_eq!(gh.alpha_k, 0.0);
    let gh1 = gordon_haus_terms(&st, 1, 10, scales.l_s).unwrap();
    assert_relative_eq!(gh1.alpha_k, 72.0 * scales.l_s, max_relative = 1e-14);
    assert!(gordon_haus_terms(&st, 0, 10, scales.l_s).is_err());
    assert!(gordon_haus_terms(&st, 11, 10, scales.l_s).is_err());
}

#[test]
fn single_span_variants_coincide_without_a0() {
    let (s, st, scales) = ring_input(5);
    let b = blocks_at_amplifier(&s, &st).unwrap();
    let gh = gordon_haus_terms(&st, 1, 1, scales.l_s).unwrap().without_a0();
    let full = assemble_s(&[assemble_mk(&b, &gh).unwrap()], scales.eps2).unwrap();
    let nogh = assemble_s_nogh(std::slice::from_ref(&b), scales.eps2).unwrap();
    let noprop = assemble_s_noprop(&b, 1, scales.l_s, scales.eps2).unwrap();
    let ld = log_det(&nogh).unwrap();
    assert!((log_det(&full).unwrap() - ld).abs() < 1e-9);
    assert!((log_det(&noprop).unwrap() - ld).abs() < 1e-9);
    assert_eq!(full.dof, 32);
    assert_eq!(noprop.variant, Variant::NoProp);
}

#[test]
fn drift_never_lowers_the_summed_determinant() {
    let (s, st, scales) = ring_input(6);
    let b = blocks_at_amplifier(&s, &st).unwrap();
    let k = 20;
    let mk: Vec<_> = (1..=k)
        .map(|j| assemble_mk(&b, &gordon_haus_terms(&st, j, k, scales.l_s).unwrap()).unwrap())
        .collect();
    let full = assemble_s(&mk, scales.eps2).unwrap();
    let nogh = assemble_s_nogh(&vec![b.clone(); k], scales.eps2).unwrap();
    assert!(log_det(&full).unwrap() >= log_det(&nogh).unwrap() - 1e-9);
}

#[test]
fn summed_covariance_obeys_minkowski() {
    let mats: Vec<DMatrix<C64>> = (1..=4)
        .map(|seed| {
            let (s, st, _) = ring_input(seed);
            let b = blocks_at_amplifier(&s, &st).unwrap();
            b.matrix.clone()
        })
        .collect();
    let d = mats[0].nrows();
    assert!(mats.iter().all(|m| m.nrows() == d));
    let s = assemble_s(&mats, 1.0).unwrap();
    let lhs = 2f64.powf(log_det(&s).unwrap() / d as f64);
    let rhs: f64 = mats.iter().map(|m| 2f64.powf(log2_det(m).unwrap() / d as f64)).sum();
    assert!(lhs >= rhs * (1.0 - 1e-12), "{lhs} < {rhs}");
}

#[test]
fn mismatched_amplifiers_are_rejected() {
    assert!(assemble_s(&[identity(4), identity(6)], 1.0).is_err());
    assert!(assemble_s(&[], 1.0).is_err());
}

#[test]
fn indefinite_matrix_reports_eigenvalue() {
    let mut m = identity(4);
    m[(2, 2)] = C64::new(-0.5, 0.0);
    let err = log2_det(&m).unwrap_err().to_string();
    assert!(err.contains("-5.000e-1"), "{err}");
    assert_eq!(log2_det(&identity(0)).unwrap(), 0.0);
}

#[test]
fn drift_variance_examples() {
    assert_eq!(zeta_k(1, 0.3), 0.0);
    assert_relative_eq!(zeta_k(2, 1.0), 16.0, max_relative = 1e-14);
    assert_relative_eq!(zeta_k(10, 0.01), 16.0 / 3.0 * 99.0 * 1e-4, max_relative = 1e-14);
}

#[test]
fn mode_tracking_restores_order() {
    let s = Signal::sech(512, 15.0, 2.5).unwrap();
    let st = scatter(&s, &ScatterOptions { with_continuum: false, ..Default::default() }).unwrap();
    let mut rev = st.clone();
    rev.solitons.reverse();
    let back = track_modes(&st, &rev).unwrap();
    assert_eq!(back.eigenvalues(), st.eigenvalues());
    let mut short = st.clone();
    short.solitons.pop();
    assert!(track_modes(&st, &short).is_err());
}

#[test]
fn covariance_dump_has_header() {
    let nc = NoiseCovariance { s: identity(2), variant: Variant::NoGh, eps2: 0.5, num_spans: 3, dof: 1 };
    let mut out = Vec::new();
    nc.write_text(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[..5], ["# covariance v1", "dim 2", "variant nogh", "eps2 5.00000000000000000e-1", "K 3"]);
    assert_eq!(lines.len(), 7);
}

#[test]
fn variant_names_round_trip() {
    for v in [Variant::Full, Variant::NoGh, Variant::NoProp] {
        assert_eq!(Variant::parse(v.name()), Some(v));
    }
    assert_eq!(Variant::parse("NOGH"), Some(Variant::NoGh));
    assert_eq!(Variant::parse("other"), None);
}

#[test]
#[ignore = "solitons-only 4x4 block of a sampled sech is not canonical: log2 det is 1.63 bits"]
fn single_soliton_block_is_canonical() {
    let s = Signal::sech(1024, 20.0, 1.0).unwrap();
    let st = scatter(&s, &ScatterOptions { with_continuum: false, ..Default::default() }).unwrap();
    let b = blocks_at_amplifier(&s, &st).unwrap();
    assert_eq!(b.dim(), 4);
    assert!(log2_det(&b.matrix).unwrap().abs() <= 4e-3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn drift_map_preserves_determinant(seed in 0u64..50, alpha in 0.0..5.0f64, a0r in -2.0..2.0f64, a0i in -2.0..2.0f64) {
        let (s, st, _) = ring_input(seed);
        let b = blocks_at_amplifier(&s, &st).unwrap();
        let gh = GordonHausTerms { alpha_k: alpha, delta_lambda: st.eigenvalues(), a0: vec![C64::new(a0r, a0i); st.n()] };
        let m = assemble_mk(&b, &gh).unwrap();
        prop_assert!(max_abs(&(&m - m.adjoint())) <= 1e-10 * max_abs(&m));
        let d0 = log2_det(&b.matrix).unwrap();
        let d1 = log2_det(&m).unwrap();
        prop_assert!((d1 - d0).abs() <= 1e-6 * b.dim() as f64, "{} vs {}", d1, d0);
    }

    #[test]
    fn drift_variance_matches_direct_sum(k in 1usize..200, l in 1e-5..1.0f64) {
        let a = zeta_k(k, l);
        let b = zeta_k_direct(k, l);
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1e-300));
    }
}
