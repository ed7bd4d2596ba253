//! Scattering-domain covariance of amplifier noise.
//!
//! Every scattering coordinate `F` has a first-order response to the noise,
//! `dF = sum_p F_u(p) dw_p + F_ub(p) conj(dw_p)`. With white noise of per-sample
//! variance `eps^2 / tau` the covariance of two coordinates is the rectangle sum
//! `sum_p (F_u conj(G_u) + F_ub conj(G_ub)) / tau` per unit `eps^2`. All matrices
//! are stored in the augmented layout `(l, conj l, m, conj m, r, conj r)` with
//! `N` bound-state eigenvalues `l`, their `mu` variables `m` and `N_c`
//! continuum coordinates `r`.
//!
//! Matrices are expressed in canonical units: the raw covariance is multiplied by
//! `2 prod_p w_p^(2/d)` with `d` the augmented dimension and `w_p = 1 + tau^2 |u_p|^2`,
//! which maps a set of canonical coordinates to unit determinant.

use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::signal::Signal;
use crate::zs_scattering::{
    al_norm_gradient, lambda_gradient, mu0_gradient, rho_gradient, Gradient, Lattice, ModeKind, ScatteringState,
};

const I: C64 = C64 { re: 0.0, im: 1.0 };
const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Per-amplifier blocks with the underlying noise responses.
#[derive(Debug, Clone)]
pub struct CovarianceBlocks {
    pub n: usize,
    pub n_c: usize,
    /// Augmented matrix over `(l, conj l, m, conj m, r, conj r)` in canonical units.
    pub matrix: DMatrix<C64>,
    /// Rows are the augmented coordinates, columns `(F_u(0..M), F_ub(0..M))`.
    pub jacobian: DMatrix<C64>,
    /// Factor from raw to canonical units.
    pub canonical_scale: f64,
    /// Maps the stored eigenvalue coordinates to true eigenvalue responses
    /// (identity unless the ring normalization is in use).
    pub lambda_map: DMatrix<C64>,
    pub canonical_ring: bool,
    pub eigenvalues: Vec<C64>,
    pub a0: Vec<C64>,
    pub tau: f64,
}

impl CovarianceBlocks {
    pub fn dim(&self) -> usize {
        4 * self.n + 2 * self.n_c
    }

    /// Number of complex degrees of freedom.
    pub fn dof(&self) -> usize {
        2 * self.n + self.n_c
    }

    fn block(&self, r0: usize, c0: usize, nr: usize, nc: usize) -> DMatrix<C64> {
        self.matrix.view((r0, c0), (nr, nc)).into_owned()
    }

    pub fn m0_lambda_lambda(&self) -> DMatrix<C64> {
        self.block(0, 0, 2 * self.n, 2 * self.n)
    }

    pub fn m0_mu_mu(&self) -> DMatrix<C64> {
        self.block(2 * self.n, 2 * self.n, 2 * self.n, 2 * self.n)
    }

    pub fn m0_rho_rho(&self) -> DMatrix<C64> {
        self.block(4 * self.n, 4 * self.n, 2 * self.n_c, 2 * self.n_c)
    }

    /// Rows `mu`, columns `lambda`.
    pub fn m0_lambda_mu(&self) -> DMatrix<C64> {
        self.block(2 * self.n, 0, 2 * self.n, 2 * self.n)
    }

    /// Rows `rho`, columns `lambda`.
    pub fn m0_lambda_rho(&self) -> DMatrix<C64> {
        self.block(4 * self.n, 0, 2 * self.n_c, 2 * self.n)
    }

    /// Rows `rho`, columns `mu`.
    pub fn m0_rho_mu(&self) -> DMatrix<C64> {
        self.block(4 * self.n, 2 * self.n, 2 * self.n_c, 2 * self.n)
    }

    /// Raw covariance per unit `eps^2`, directly comparable with sampled responses.
    pub fn raw(&self) -> DMatrix<C64> {
        &self.matrix / C64::new(self.canonical_scale, 0.0)
    }
}

fn augmented_rows(rows: &[Gradient]) -> Vec<Gradient> {
    rows.iter().cloned().chain(rows.iter().map(Gradient::conj)).collect()
}

fn gram(rows: &[Gradient], tau: f64) -> DMatrix<C64> {
    let d = rows.len();
    let mut g = DMatrix::<C64>::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let mut acc = ZERO;
            for p in 0..rows[i].du.len() {
                acc += rows[i].du[p] * rows[j].du[p].conj() + rows[i].dub[p] * rows[j].dub[p].conj();
            }
            g[(i, j)] = acc / tau;
            g[(j, i)] = (acc / tau).conj();
        }
    }
    g
}

/// Canonical continuum coordinate `r = rho g(|rho|^2)`, `g(s) = sqrt(ln(1 + s) / s)`,
/// weighted by `sqrt(d_xi / (2 pi))`.
fn canonical_rho_row(rho: C64, g_rho: &Gradient, d_xi: f64) -> Gradient {
    let s = rho.norm_sqr();
    let (g, gp) = if s > 1e-8 {
        let g = ((s.ln_1p()) / s).sqrt();
        (g, (s / (1.0 + s) - s.ln_1p()) / (2.0 * s * s * g))
    } else {
        (1.0 - 0.25 * s, -0.25 + s / 3.0)
    };
    let a1 = C64::new(g + s * gp, 0.0);
    let a2 = rho * rho * gp;
    let cj = g_rho.conj();
    let mut out = g_rho.scaled(a1);
    out.axpy(a2, &cj);
    out.scaled(C64::new((d_xi / (2.0 * std::f64::consts::PI)).sqrt(), 0.0))
}

/// Minimal-norm correction of the `mu` rows so that their brackets with the
/// eigenvalue rows are exactly `delta / 2`.
fn canonical_mu_correction(lam: &[Gradient], mu: &[Gradient], w: &[f64], tau: f64) -> Result<Vec<Gradient>> {
    let d = lam.len();
    let m = w.len();
    let mut c = DMatrix::<C64>::zeros(d, d);
    for j in 0..d {
        for k in 0..d {
            c[(j, k)] = lam[j].bracket(&mu[k], w, tau);
        }
    }
    let h: Vec<Gradient> = lam
        .iter()
        .map(|f| Gradient {
            du: (0..m).map(|p| I * w[p] * f.dub[p].conj()).collect(),
            dub: (0..m).map(|p| -I * w[p] * f.du[p].conj()).collect(),
        })
        .collect();
    let hm = gram(&h, tau).transpose();
    let rhs = DMatrix::<C64>::identity(d, d) * C64::new(0.5, 0.0) - c;
    let x = hm
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular bracket Gram matrix in canonical correction".into()))?;
    let mut out: Vec<Gradient> = mu.to_vec();
    for (nrow, o) in out.iter_mut().enumerate() {
        for (mrow, hm) in h.iter().enumerate() {
            o.axpy(x[(mrow, nrow)], hm);
        }
    }
    Ok(out)
}

/// Blocks of one amplifier from its signal and scattering state.
pub fn blocks_at_amplifier(signal: &Signal, state: &ScatteringState) -> Result<CovarianceBlocks> {
    if signal.len() != state.m {
        return Err(Error::Structural(format!("signal has {} samples, state {}", signal.len(), state.m)));
    }
    let lat = Lattice::from_signal(signal);
    let tau = signal.tau();
    let n = state.n();
    for (k, m) in state.solitons.iter().enumerate() {
        if m.psi_prime.len() != state.m + 1 {
            return Err(Error::Structural(format!("mode {k} lacks its derivative eigenfunction")));
        }
        if m.gamma.norm() == 0.0 || m.a_prime.norm() < 1e-14 {
            return Err(Error::Degenerate(format!("mode {k} at lambda = {} is degenerate", m.lambda)));
        }
    }
    let ring = state.kind == ModeKind::Ring && state.complete && n > 0;
    let mut lam: Vec<Gradient> = state.solitons.iter().map(|m| lambda_gradient(&lat, m)).collect();
    let mu: Vec<Gradient> = state.solitons.iter().map(|m| mu0_gradient(&lat, m)).collect();
    let mut lambda_map = DMatrix::<C64>::identity(2 * n, 2 * n);
    if ring {
        let gn = al_norm_gradient(signal);
        let share = C64::new(1.0 / (2.0 * n as f64), 0.0);
        for row in lam.iter_mut() {
            row.axpy(share, &gn);
        }
        for i in 0..2 * n {
            for j in 0..2 * n {
                lambda_map[(i, j)] -= share;
            }
        }
    }
    let lam_aug = augmented_rows(&lam);
    let mu_aug = if ring {
        let fixed = canonical_mu_correction(&lam_aug, &augmented_rows(&mu), &lat.w, tau)?;
        augmented_rows(&fixed[..n])
    } else {
        augmented_rows(&mu)
    };
    let mut rows: Vec<Gradient> = lam_aug;
    rows.extend(mu_aug);
    let mut n_c = 0;
    if let Some(cd) = &state.continuum {
        n_c = cd.len();
        let dxi = cd.d_xi();
        let r: Vec<Gradient> = (0..n_c).map(|k| canonical_rho_row(cd.rho[k], &rho_gradient(&lat, cd, k), dxi)).collect();
        rows.extend(augmented_rows(&r));
    }
    let d = rows.len();
    let mut scale = 2.0;
    if d > 0 {
        let lw: f64 = lat.w.iter().map(|w| w.ln()).sum();
        scale *= (2.0 * lw / d as f64).exp();
    }
    let raw = gram(&rows, tau);
    let m = signal.len();
    let mut jac = DMatrix::<C64>::zeros(d, 2 * m);
    for (i, r) in rows.iter().enumerate() {
        for p in 0..m {
            jac[(i, p)] = r.du[p];
            jac[(i, m + p)] = r.dub[p];
        }
    }
    Ok(CovarianceBlocks {
        n,
        n_c,
        matrix: hermitian(&(raw * C64::new(scale, 0.0))),
        jacobian: jac,
        canonical_scale: scale,
        lambda_map,
        canonical_ring: ring,
        eigenvalues: state.eigenvalues(),
        a0: state.solitons.iter().map(|m| m.a0()).collect(),
        tau,
    })
}

fn hermitian(m: &DMatrix<C64>) -> DMatrix<C64> {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

/// Gordon-Haus drift of amplifier `k` of `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct GordonHausTerms {
    pub alpha_k: f64,
    /// Input-side eigenvalues.
    pub delta_lambda: Vec<C64>,
    /// `a''/a'` at the input-side eigenvalues.
    pub a0: Vec<C64>,
}

impl GordonHausTerms {
    /// Diagonal of `D^k = i alpha_k Delta + A0`, unaugmented.
    pub fn d_diag(&self) -> Vec<C64> {
        self.delta_lambda.iter().zip(&self.a0).map(|(l, a)| I * self.alpha_k * l + a).collect()
    }

    pub fn without_a0(&self) -> Self {
        Self { a0: vec![ZERO; self.a0.len()], ..self.clone() }
    }

    pub fn zero(n: usize) -> Self {
        Self { alpha_k: 0.0, delta_lambda: vec![ZERO; n], a0: vec![ZERO; n] }
    }
}

pub fn gordon_haus_terms(state0: &ScatteringState, k: usize, num_spans: usize, span_length: f64) -> Result<GordonHausTerms> {
    if k == 0 || k > num_spans {
        return Err(Error::Parameter(format!("amplifier index {k} outside 1..={num_spans}")));
    }
    for m in &state0.solitons {
        if m.a_prime.norm() < 1e-14 {
            return Err(Error::Degenerate(format!("a' vanishes at lambda = {}", m.lambda)));
        }
    }
    Ok(GordonHausTerms {
        alpha_k: 8.0 * (num_spans - k) as f64 * span_length,
        delta_lambda: state0.eigenvalues(),
        a0: state0.solitons.iter().map(|m| m.a0()).collect(),
    })
}

/// Augmented `D P` acting on the stored eigenvalue coordinates.
fn d_operator(blocks: &CovarianceBlocks, diag: &[C64]) -> DMatrix<C64> {
    let n = blocks.n;
    let mut d = DMatrix::<C64>::zeros(2 * n, 2 * n);
    for i in 0..n {
        d[(i, i)] = diag[i];
        d[(n + i, n + i)] = diag[i].conj();
    }
    d * &blocks.lambda_map
}

/// Unit-determinant map subtracting `D^k` times the eigenvalue response from the `mu` rows.
pub fn gh_transform(blocks: &CovarianceBlocks, gh: &GordonHausTerms) -> Result<DMatrix<C64>> {
    let n = blocks.n;
    if gh.delta_lambda.len() != n || gh.a0.len() != n {
        return Err(Error::Structural(format!("{} Gordon-Haus terms for {n} modes", gh.delta_lambda.len())));
    }
    let d = blocks.dim();
    let mut t = DMatrix::<C64>::identity(d, d);
    let dp = d_operator(blocks, &gh.d_diag());
    t.view_mut((2 * n, 0), (2 * n, 2 * n)).copy_from(&(-dp));
    Ok(t)
}

/// `M^k = T_k M^0k T_k^H`.
pub fn assemble_mk(blocks: &CovarianceBlocks, gh: &GordonHausTerms) -> Result<DMatrix<C64>> {
    let t = gh_transform(blocks, gh)?;
    Ok(hermitian(&(&t * &blocks.matrix * t.adjoint())))
}

/// The same matrix through the `Z`/`X` block formulas, as a cross-check.
pub fn assemble_mk_blockwise(blocks: &CovarianceBlocks, gh: &GordonHausTerms) -> Result<DMatrix<C64>> {
    let n = blocks.n;
    let dp = d_operator(blocks, &gh.d_diag());
    let m = &blocks.matrix;
    let mut out = m.clone();
    let ll = blocks.m0_lambda_lambda();
    let lm = blocks.m0_lambda_mu();
    let z = &lm - &dp * &ll;
    let ll_inv = ll
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("eigenvalue block is singular".into()))?;
    let x = blocks.m0_mu_mu() + &z * &ll_inv * z.adjoint() - &lm * &ll_inv * lm.adjoint();
    out.view_mut((2 * n, 0), (2 * n, 2 * n)).copy_from(&z);
    out.view_mut((0, 2 * n), (2 * n, 2 * n)).copy_from(&z.adjoint());
    out.view_mut((2 * n, 2 * n), (2 * n, 2 * n)).copy_from(&x);
    if blocks.n_c > 0 {
        let r0 = 4 * n;
        let rm = blocks.m0_rho_mu() - blocks.m0_lambda_rho() * dp.adjoint();
        out.view_mut((r0, 2 * n), (2 * blocks.n_c, 2 * n)).copy_from(&rm);
        out.view_mut((2 * n, r0), (2 * n, 2 * blocks.n_c)).copy_from(&rm.adjoint());
    }
    Ok(hermitian(&out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Full,
    NoGh,
    NoProp,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoGh => "nogh",
            Variant::NoProp => "noprop",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Some(Variant::Full),
            "nogh" => Some(Variant::NoGh),
            "noprop" => Some(Variant::NoProp),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NoiseCovariance {
    pub s: DMatrix<C64>,
    pub variant: Variant,
    pub eps2: f64,
    pub num_spans: usize,
    /// Complex degrees of freedom.
    pub dof: usize,
}

fn check_same_shape(mats: &[DMatrix<C64>]) -> Result<usize> {
    let d = mats.first().map(|m| m.nrows()).ok_or_else(|| Error::Structural("no amplifiers".into()))?;
    if mats.iter().any(|m| m.nrows() != d || m.ncols() != d) {
        return Err(Error::Pairing("per-amplifier matrices differ in dimension".into()));
    }
    Ok(d)
}

/// `S = eps^2 sum_k M^k`.
pub fn assemble_s(per_amplifier: &[DMatrix<C64>], eps2: f64) -> Result<NoiseCovariance> {
    let d = check_same_shape(per_amplifier)?;
    let mut s = DMatrix::<C64>::zeros(d, d);
    for m in per_amplifier {
        s += m;
    }
    Ok(NoiseCovariance {
        s: hermitian(&(s * C64::new(eps2, 0.0))),
        variant: Variant::Full,
        eps2,
        num_spans: per_amplifier.len(),
        dof: d / 2,
    })
}

/// `S = eps^2 sum_k M^0k`.
pub fn assemble_s_nogh(blocks: &[CovarianceBlocks], eps2: f64) -> Result<NoiseCovariance> {
    let mats: Vec<DMatrix<C64>> = blocks.iter().map(|b| b.matrix.clone()).collect();
    let mut out = assemble_s(&mats, eps2)?;
    out.variant = Variant::NoGh;
    Ok(out)
}

/// `zeta_K = (16/3)(K^2 - 1) L_s^2`, the variance of `alpha_k` over the amplifiers.
pub fn zeta_k(num_spans: usize, span_length: f64) -> f64 {
    let k = num_spans as f64;
    16.0 / 3.0 * (k * k - 1.0) * span_length * span_length
}

/// The same quantity as a direct sum over `alpha_k = 8 (K - k) L_s`.
pub fn zeta_k_direct(num_spans: usize, span_length: f64) -> f64 {
    let k = num_spans as f64;
    let alphas: Vec<f64> = (1..=num_spans).map(|j| 8.0 * (num_spans - j) as f64 * span_length).collect();
    let mean = alphas.iter().sum::<f64>() / k;
    alphas.iter().map(|a| a * a).sum::<f64>() / k - mean * mean
}

/// Input-side approximation: amplifier dependence only through `alpha_k`.
pub fn assemble_s_noprop(blocks0: &CovarianceBlocks, num_spans: usize, span_length: f64, eps2: f64) -> Result<NoiseCovariance> {
    let n = blocks0.n;
    let mut s = blocks0.matrix.clone();
    if n > 0 {
        let d1: Vec<C64> = blocks0.eigenvalues.iter().map(|l| I * l).collect();
        let dp = d_operator(blocks0, &d1);
        let extra = &dp * blocks0.m0_lambda_lambda() * dp.adjoint() * C64::new(zeta_k(num_spans, span_length), 0.0);
        let mut mm = s.view_mut((2 * n, 2 * n), (2 * n, 2 * n));
        mm += extra;
    }
    Ok(NoiseCovariance {
        s: hermitian(&(s * C64::new(num_spans as f64 * eps2, 0.0))),
        variant: Variant::NoProp,
        eps2,
        num_spans,
        dof: blocks0.dof(),
    })
}

/// `log2 det` of a Hermitian positive-definite matrix through its Cholesky factor.
pub fn log2_det(m: &DMatrix<C64>) -> Result<f64> {
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    let h = hermitian(m);
    let diag = h.clone().cholesky().map(|ch| ch.l().diagonal());
    match diag.filter(|d| d.iter().all(|x| x.re > 0.0 && x.im.abs() <= 1e-12 * x.re)) {
        Some(d) => Ok(2.0 * d.iter().map(|x| x.re.log2()).sum::<f64>()),
        None => {
            let ev = h.symmetric_eigenvalues();
            let min = ev.iter().copied().fold(f64::INFINITY, f64::min);
            Err(Error::Numerical(format!("matrix not positive definite; smallest eigenvalue {min:.3e}")))
        }
    }
}

pub fn log_det(s: &NoiseCovariance) -> Result<f64> {
    log2_det(&s.s)
}

/// Matches the modes of `state` to `reference` by nearest eigenvalue, within
/// `0.1` of the smallest reference spacing, and returns `state` reordered.
pub fn track_modes(reference: &ScatteringState, state: &ScatteringState) -> Result<ScatteringState> {
    let r = reference.eigenvalues();
    if r.len() != state.n() {
        return Err(Error::Pairing(format!("{} modes in reference, {} in state", r.len(), state.n())));
    }
    let mut spacing = f64::INFINITY;
    for i in 0..r.len() {
        for j in (i + 1)..r.len() {
            spacing = spacing.min((r[i] - r[j]).norm());
        }
    }
    let radius = if spacing.is_finite() { 0.1 * spacing } else { 0.1 * (1.0 + r.first().map_or(0.0, |l| l.norm())) };
    let mut used = vec![false; state.n()];
    let mut out = state.clone();
    out.solitons.clear();
    for l in &r {
        let (idx, dist) = state
            .solitons
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .map(|(i, m)| (i, (m.lambda - l).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .ok_or_else(|| Error::Pairing("ran out of modes".into()))?;
        if dist > radius {
            return Err(Error::Pairing(format!("no eigenvalue within {radius:.3e} of {l} (nearest {dist:.3e})")));
        }
        used[idx] = true;
        out.solitons.push(state.solitons[idx].clone());
    }
    Ok(out)
}

impl NoiseCovariance {
    /// Text dump: header then row-major entries.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# covariance v1")?;
        writeln!(w, "dim {}", self.s.nrows())?;
        writeln!(w, "variant {}", self.variant.name())?;
        writeln!(w, "eps2 {:.17e}", self.eps2)?;
        writeln!(w, "K {}", self.num_spans)?;
        for i in 0..self.s.nrows() {
            let row: Vec<String> = (0..self.s.ncols())
                .map(|j| format!("{:.17e} {:.17e}", self.s[(i, j)].re, self.s[(i, j)].im))
                .collect();
            writeln!(w, "{}", row.join(" "))?;
        }
        Ok(())
    }
}

/// Identity blocks of a given size, mostly for calibration checks.
pub fn identity(dim: usize) -> DMatrix<C64> {
    DMatrix::<C64>::identity(dim, dim) * ONE
}
