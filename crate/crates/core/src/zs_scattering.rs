//! Direct scattering for the discrete Zakharov-Shabat problem.
//!
//! The signal is discretized with the Ablowitz-Ladik transfer matrices
//!
//! ```text
//! T_n(z) = 1/c_n [[z, Q_n], [R_n, 1/z]],  Q_n = i tau conj(u_n),  R_n = i tau u_n,
//! c_n = sqrt(1 + tau^2 |u_n|^2),  z = exp(-i lambda tau)
//! ```
//!
//! Two boundary treatments are supported. A periodic ring uses the eigenvalues of
//! the cyclic one-step operator, which the periodic lattice flow in
//! [`crate::propagation`] conserves exactly. A decaying window treats the samples as
//! compactly supported and locates bound states as zeros of `a(lambda)`.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::signal::Signal;

const I: C64 = C64 { re: 0.0, im: 1.0 };
const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Two-component lattice vector.
pub type Spinor = [C64; 2];

/// Precomputed lattice coefficients of a signal.
#[derive(Debug, Clone)]
pub struct Lattice {
    pub q: Vec<C64>,
    pub r: Vec<C64>,
    pub c: Vec<f64>,
    /// `1 + tau^2 |u_n|^2`
    pub w: Vec<f64>,
    pub tau: f64,
}

impl Lattice {
    pub fn new(samples: &[C64], tau: f64) -> Self {
        let q: Vec<C64> = samples.iter().map(|u| I * tau * u.conj()).collect();
        let r: Vec<C64> = samples.iter().map(|u| I * tau * u).collect();
        let w: Vec<f64> = samples.iter().map(|u| 1.0 + tau * tau * u.norm_sqr()).collect();
        let c = w.iter().map(|w| w.sqrt()).collect();
        Self { q, r, c, w, tau }
    }

    pub fn from_signal(s: &Signal) -> Self {
        Self::new(s.samples(), s.tau())
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    #[inline]
    fn step(&self, n: usize, z: C64, zi: C64, v: Spinor) -> Spinor {
        let c = self.c[n];
        [(z * v[0] + self.q[n] * v[1]) / c, (self.r[n] * v[0] + zi * v[1]) / c]
    }

    #[inline]
    fn step_inv(&self, n: usize, z: C64, zi: C64, v: Spinor) -> Spinor {
        let c = self.c[n];
        [(zi * v[0] - self.q[n] * v[1]) / c, (z * v[1] - self.r[n] * v[0]) / c]
    }

    #[inline]
    fn dstep(&self, n: usize, dz: C64, dzi: C64, v: Spinor) -> Spinor {
        let c = self.c[n];
        [dz * v[0] / c, dzi * v[1] / c]
    }
}

fn zvars(lambda: C64, tau: f64) -> (C64, C64, C64, C64) {
    let z = (-I * lambda * tau).exp();
    let zi = (I * lambda * tau).exp();
    (z, zi, -I * tau * z, I * tau * zi)
}

fn add(a: Spinor, b: Spinor) -> Spinor {
    [a[0] + b[0], a[1] + b[1]]
}

fn scale(k: C64, a: Spinor) -> Spinor {
    [k * a[0], k * a[1]]
}

fn spinor_norm(a: &Spinor) -> f64 {
    (a[0].norm_sqr() + a[1].norm_sqr()).sqrt()
}

fn finite(v: &[Spinor]) -> bool {
    v.iter().all(|s| s.iter().all(|x| x.re.is_finite() && x.im.is_finite()))
}

/// Eigenvalue `lambda` of a one-step multiplier `z`.
pub fn lambda_of_z(z: C64, tau: f64) -> C64 {
    I * z.ln() / tau
}

/// Folds `Re lambda` into `[-pi/(2 tau), pi/(2 tau))`.
pub fn fold_xi(lambda: C64, tau: f64) -> C64 {
    let p = PI / tau;
    let xi = (lambda.re + 0.5 * p).rem_euclid(p) - 0.5 * p;
    C64::new(xi, lambda.im)
}

/// The cyclic one-step operator `K` of size `2M` with `K x = z x` iff
/// `x = (v_1, v_2)` is a periodic solution of the transfer recursion.
/// Its eigenvalues give the spectrum through `lambda = i ln(z) / tau`.
pub fn discrete_zs_matrix(s: &Signal) -> DMatrix<C64> {
    let lat = Lattice::from_signal(s);
    lattice_matrix(&lat)
}

fn lattice_matrix(lat: &Lattice) -> DMatrix<C64> {
    let m = lat.len();
    let mut k = DMatrix::<C64>::zeros(2 * m, 2 * m);
    for n in 0..m {
        let np = (n + 1) % m;
        let nm = (n + m - 1) % m;
        k[(n, np)] += C64::new(lat.c[n], 0.0);
        k[(n, m + n)] += -lat.q[n];
        k[(m + n, n)] += lat.r[nm];
        k[(m + n, m + nm)] += C64::new(lat.c[nm], 0.0);
    }
    k
}

fn to_faer(k: &DMatrix<C64>) -> faer::Mat<C64> {
    faer::Mat::from_fn(k.nrows(), k.ncols(), |i, j| k[(i, j)])
}

/// Eigenvalues of the one-step operator.
fn operator_eigenvalues(k: &DMatrix<C64>) -> Result<Vec<C64>> {
    to_faer(k)
        .eigenvalues()
        .map_err(|e| Error::Numerical(format!("eigenvalue iteration failed for size {}: {e:?}", k.nrows())))
}

/// Eigenvalues and unit eigenvectors (columns) of the one-step operator.
fn operator_eigen(k: &DMatrix<C64>) -> Result<(Vec<C64>, faer::Mat<C64>)> {
    let e = to_faer(k)
        .eigen()
        .map_err(|e| Error::Numerical(format!("eigendecomposition failed for size {}: {e:?}", k.nrows())))?;
    let vals = e.S().column_vector().iter().copied().collect();
    Ok((vals, e.U().to_owned()))
}

/// All `2M` eigenvalues of the periodic operator, unfiltered.
pub fn full_spectrum(s: &Signal) -> Result<Vec<C64>> {
    let lat = Lattice::from_signal(s);
    Ok(operator_eigenvalues(&lattice_matrix(&lat))?.into_iter().map(|z| lambda_of_z(z, s.tau())).collect())
}

/// Boundary treatment for scattering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    /// Decaying if both edge samples are below `1e-3` of the peak, periodic otherwise.
    Auto,
    Periodic,
    Decaying,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeKind {
    Ring,
    Decaying,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatterOptions {
    pub boundary: Boundary,
    /// Relative real-eigenvalue threshold, multiplied by the largest `eta`.
    pub eta_rel: f64,
    pub eta_floor: f64,
    /// Floor used for ring spectra, which keep every non-real eigenvalue.
    pub ring_eta_floor: f64,
    /// Tolerance on `|a(lambda)|` for accepting a refined zero.
    pub root_tol: f64,
    /// Largest sample count diagonalized directly when seeding zeros of `a`.
    pub dense_max: usize,
    pub with_continuum: bool,
}

impl Default for ScatterOptions {
    fn default() -> Self {
        Self {
            boundary: Boundary::Auto,
            eta_rel: 1e-3,
            eta_floor: 1e-6,
            ring_eta_floor: 1e-9,
            root_tol: 1e-8,
            dense_max: 256,
            with_continuum: true,
        }
    }
}

/// One bound state.
///
/// `psi` and `psi_prime` hold `M + 1` lattice sites; entry `j` belongs to sample
/// `(site_offset + j) mod M`, so consecutive entries always form a lattice bond.
#[derive(Debug, Clone, PartialEq)]
pub struct SolitonMode {
    pub lambda: C64,
    pub b: C64,
    pub mu: C64,
    /// `2 tau sum_j psi_1 psi_2` over the first `M` sites.
    pub gamma: C64,
    pub a_prime: C64,
    pub a_double_prime: C64,
    pub psi: Vec<Spinor>,
    pub psi_prime: Vec<Spinor>,
    pub site_offset: usize,
    pub kind: ModeKind,
}

impl SolitonMode {
    pub fn eta(&self) -> f64 {
        self.lambda.im
    }

    pub fn a0(&self) -> C64 {
        self.a_double_prime / self.a_prime
    }

    /// `sqrt(|psi_1|^2 + |psi_2|^2)` indexed by sample.
    pub fn amplitude_by_sample(&self) -> Vec<f64> {
        let m = self.psi.len() - 1;
        let mut out = vec![0.0; m];
        for j in 0..m {
            out[(self.site_offset + j) % m] = spinor_norm(&self.psi[j]);
        }
        out
    }
}

/// Continuous spectrum on a uniform real grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuumData {
    pub xi_grid: Vec<f64>,
    pub rho: Vec<C64>,
    pub a_vals: Vec<C64>,
    pub b_vals: Vec<C64>,
    /// Left Jost solutions, `M + 1` sites each.
    pub jost_phi: Vec<Vec<Spinor>>,
}

impl ContinuumData {
    pub fn len(&self) -> usize {
        self.xi_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi_grid.is_empty()
    }

    /// Grid spacing.
    pub fn d_xi(&self) -> f64 {
        if self.xi_grid.len() < 2 {
            0.0
        } else {
            self.xi_grid[1] - self.xi_grid[0]
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatteringState {
    pub solitons: Vec<SolitonMode>,
    pub continuum: Option<ContinuumData>,
    pub m: usize,
    pub tau: f64,
    pub position_x: f64,
    pub t_start: f64,
    pub kind: ModeKind,
    /// Ring spectra only: every non-real eigenvalue was kept (`N = M / 2`).
    pub complete: bool,
}

impl ScatteringState {
    pub fn n(&self) -> usize {
        self.solitons.len()
    }

    pub fn n_continuum(&self) -> usize {
        self.continuum.as_ref().map_or(0, |c| c.len())
    }

    pub fn eigenvalues(&self) -> Vec<C64> {
        self.solitons.iter().map(|m| m.lambda).collect()
    }

    pub fn max_eta(&self) -> f64 {
        self.solitons.iter().map(|m| m.eta()).fold(0.0, f64::max)
    }

    /// Versioned text form; eigenfunction tables only when requested.
    pub fn write_text<W: Write>(&self, mut w: W, with_eigenfunctions: bool) -> Result<()> {
        let kind = match self.kind {
            ModeKind::Ring => "ring",
            ModeKind::Decaying => "decaying",
        };
        writeln!(w, "# scattering v1")?;
        writeln!(w, "M {}", self.m)?;
        writeln!(w, "tau {:.17e}", self.tau)?;
        writeln!(w, "position_x {:.17e}", self.position_x)?;
        writeln!(w, "t_start {:.17e}", self.t_start)?;
        writeln!(w, "kind {kind}")?;
        writeln!(w, "N {}", self.n())?;
        writeln!(w, "N_c {}", self.n_continuum())?;
        let c = |z: C64| format!("{:.17e} {:.17e}", z.re, z.im);
        writeln!(w, "# mode lambda b mu gamma a_prime a_double_prime")?;
        for (k, m) in self.solitons.iter().enumerate() {
            writeln!(
                w,
                "mode {k} {} {} {} {} {} {}",
                c(m.lambda),
                c(m.b),
                c(m.mu),
                c(m.gamma),
                c(m.a_prime),
                c(m.a_double_prime)
            )?;
        }
        if let Some(cd) = &self.continuum {
            writeln!(w, "# xi xi rho a")?;
            for k in 0..cd.len() {
                writeln!(w, "xi {:.17e} {} {}", cd.xi_grid[k], c(cd.rho[k]), c(cd.a_vals[k]))?;
            }
        }
        if with_eigenfunctions {
            for (k, m) in self.solitons.iter().enumerate() {
                writeln!(w, "# eigenfunction {k} offset {}: site psi1 psi2 dpsi1 dpsi2", m.site_offset)?;
                for (j, (p, d)) in m.psi.iter().zip(&m.psi_prime).enumerate() {
                    writeln!(w, "psi {k} {j} {} {} {} {}", c(p[0]), c(p[1]), c(d[0]), c(d[1]))?;
                }
            }
        }
        Ok(())
    }
}

/// Scattering coefficients at one `lambda` with the Jost solutions.
#[derive(Debug, Clone)]
pub struct JostData {
    pub a: C64,
    pub a_prime: C64,
    pub a_double_prime: C64,
    /// `b` from the far-end value of the left Jost solution.
    pub b: C64,
    /// Left Jost solution `phi ~ (exp(-i lambda t), 0)` at the left edge, `M + 1` sites.
    pub phi: Vec<Spinor>,
    pub phi_prime: Vec<Spinor>,
    /// Right Jost solution `psi ~ (0, exp(i lambda t))` at the right edge.
    pub psi: Vec<Spinor>,
}

/// `a`, `a'`, `a''` at `lambda` by a rescaled transfer product with derivative recursions.
/// Translation invariant, so no time origin is needed.
pub fn a_coefficients(lat: &Lattice, lambda: C64) -> Result<(C64, C64, C64)> {
    let (z, zi, dz, dzi) = zvars(lambda, lat.tau);
    let (ddz, ddzi) = (-I * lat.tau * dz, I * lat.tau * dzi);
    let mut v: Spinor = [C64::new(1.0, 0.0), ZERO];
    let mut dv: Spinor = [ZERO, ZERO];
    let mut ddv: Spinor = [ZERO, ZERO];
    let mut log_scale = 0.0;
    for n in 0..lat.len() {
        let c = lat.c[n];
        let ddv_n = add(
            add(lat.step(n, z, zi, ddv), scale(C64::new(2.0, 0.0), lat.dstep(n, dz, dzi, dv))),
            [ddz * v[0] / c, ddzi * v[1] / c],
        );
        let dv_n = add(lat.step(n, z, zi, dv), lat.dstep(n, dz, dzi, v));
        v = lat.step(n, z, zi, v);
        dv = dv_n;
        ddv = ddv_n;
        let nv = spinor_norm(&v);
        if nv > 1e100 || (nv < 1e-100 && nv > 0.0) {
            let k = C64::new(1.0 / nv, 0.0);
            v = scale(k, v);
            dv = scale(k, dv);
            ddv = scale(k, ddv);
            log_scale += nv.ln();
        }
    }
    let len = lat.len() as f64 * lat.tau;
    let e = (C64::new(log_scale, 0.0) + I * lambda * len).exp();
    let a = e * v[0];
    let ap = e * (dv[0] + I * len * v[0]);
    let app = e * (ddv[0] + 2.0 * I * len * dv[0] - len * len * v[0]);
    if ![a, ap, app].iter().all(|x| x.re.is_finite() && x.im.is_finite()) {
        return Err(Error::Numerical(format!("transfer product overflow at lambda = {lambda}")));
    }
    Ok((a, ap, app))
}

/// Jost solutions and scattering coefficients of the window `s` at `lambda`.
pub fn jost_and_a(s: &Signal, lambda: C64) -> Result<JostData> {
    jost_on_lattice(&Lattice::from_signal(s), s.t_start(), lambda)
}

/// Sample `p` sits on the bond between sites `p` and `p + 1`, so site `n` is at
/// time `t_start + (n - 1/2) tau`.
fn jost_on_lattice(lat: &Lattice, t_start: f64, lambda: C64) -> Result<JostData> {
    let m = lat.len();
    let t0 = t_start - 0.5 * lat.tau;
    let tm = t0 + m as f64 * lat.tau;
    let (z, zi, dz, dzi) = zvars(lambda, lat.tau);
    let (a, a_prime, a_double_prime) = a_coefficients(lat, lambda)?;

    let e0 = (-I * lambda * t0).exp();
    let mut phi = vec![[ZERO, ZERO]; m + 1];
    let mut dphi = vec![[ZERO, ZERO]; m + 1];
    phi[0] = [e0, ZERO];
    dphi[0] = [-I * t0 * e0, ZERO];
    for n in 0..m {
        phi[n + 1] = lat.step(n, z, zi, phi[n]);
        dphi[n + 1] = add(lat.step(n, z, zi, dphi[n]), lat.dstep(n, dz, dzi, phi[n]));
    }

    let em = (I * lambda * tm).exp();
    let mut psi = vec![[ZERO, ZERO]; m + 1];
    psi[m] = [ZERO, em];
    for n in (0..m).rev() {
        psi[n] = lat.step_inv(n, z, zi, psi[n + 1]);
    }
    if !(finite(&phi) && finite(&dphi) && finite(&psi)) {
        return Err(Error::Numerical(format!(
            "Jost solutions overflow at lambda = {lambda} on a window of length {:.3}",
            m as f64 * lat.tau
        )));
    }
    let b = phi[m][1] / em;
    Ok(JostData { a, a_prime, a_double_prime, b, phi, phi_prime: dphi, psi })
}

/// Resolves `Boundary::Auto` from the edge samples.
pub fn resolve_boundary(s: &Signal, b: Boundary) -> ModeKind {
    match b {
        Boundary::Periodic => ModeKind::Ring,
        Boundary::Decaying => ModeKind::Decaying,
        Boundary::Auto => {
            let u = s.samples();
            let peak = u.iter().map(|x| x.norm()).fold(0.0, f64::max);
            let edge = u[0].norm().max(u[u.len() - 1].norm());
            if peak > 0.0 && edge < 1e-3 * peak {
                ModeKind::Decaying
            } else {
                ModeKind::Ring
            }
        }
    }
}

/// Quadruplet representatives of the spectrum, sorted by `(eta, xi)`.
pub fn eigenvalues(s: &Signal, opts: &ScatterOptions) -> Result<Vec<C64>> {
    match resolve_boundary(s, opts.boundary) {
        ModeKind::Ring => {
            let lat = Lattice::from_signal(s);
            let vals = operator_eigenvalues(&lattice_matrix(&lat))?;
            Ok(ring_representatives(&vals, s.tau(), opts).into_iter().map(|(_, l)| l).collect())
        }
        ModeKind::Decaying => decaying_roots(s, opts),
    }
}

fn sort_modes(v: &mut [C64]) {
    v.sort_by(|a, b| a.im.total_cmp(&b.im).then(a.re.total_cmp(&b.re)));
}

fn ring_representatives(vals: &[C64], tau: f64, opts: &ScatterOptions) -> Vec<(usize, C64)> {
    let p = PI / tau;
    let mut reps: Vec<(usize, C64)> = vals
        .iter()
        .enumerate()
        .map(|(k, &z)| (k, lambda_of_z(z, tau)))
        .filter(|(_, l)| l.im > opts.ring_eta_floor)
        .map(|(k, l)| (k, C64::new((l.re + p).rem_euclid(2.0 * p) - p, l.im)))
        .filter(|(_, l)| l.re >= -0.5 * p && l.re < 0.5 * p)
        .collect();
    reps.sort_by(|a, b| a.1.im.total_cmp(&b.1.im).then(a.1.re.total_cmp(&b.1.re)));
    reps
}

/// Newton refinement of a zero of `a`.
pub fn refine_zero(lat: &Lattice, seed: C64, tol: f64) -> Option<C64> {
    let mut l = seed;
    for _ in 0..80 {
        let (a, ap, _) = a_coefficients(lat, l).ok()?;
        if ap.norm() == 0.0 {
            return None;
        }
        let mut step = a / ap;
        if step.norm() > 0.5 {
            step *= 0.5 / step.norm();
        }
        l -= step;
        if !(l.re.is_finite() && l.im.is_finite()) || l.im < -1.0 {
            return None;
        }
        if step.norm() < 1e-13 * (1.0 + l.norm()) {
            let (a, _, _) = a_coefficients(lat, l).ok()?;
            return (a.norm() < tol).then_some(l);
        }
    }
    None
}

fn decaying_roots(s: &Signal, opts: &ScatterOptions) -> Result<Vec<C64>> {
    let m = s.len();
    let u = s.samples();
    if u.iter().all(|x| x.norm() == 0.0) {
        return Ok(Vec::new());
    }
    let stride = m.div_ceil(opts.dense_max.max(8));
    let coarse: Vec<C64> = u.iter().step_by(stride).copied().collect();
    let ctau = s.tau() * stride as f64;
    let mut seeds: Vec<C64> = operator_eigenvalues(&lattice_matrix(&Lattice::new(&coarse, ctau)))?
        .into_iter()
        .map(|z| fold_xi(lambda_of_z(z, ctau), ctau))
        .filter(|l| l.im > opts.eta_floor && l.re.abs() < 0.5 * PI / ctau)
        .collect();
    seeds.sort_by(|a, b| b.im.total_cmp(&a.im));
    let lat = Lattice::from_signal(s);
    let mut roots: Vec<C64> = Vec::new();
    for seed in seeds {
        if let Some(r) = refine_zero(&lat, seed, opts.root_tol) {
            let r = fold_xi(r, s.tau());
            if r.im > opts.eta_floor && roots.iter().all(|x| (x - r).norm() > 1e-6 * (1.0 + r.norm())) {
                roots.push(r);
            }
        }
    }
    let eta_max = roots.iter().map(|r| r.im).fold(0.0, f64::max);
    let eta_min = (opts.eta_rel * eta_max).max(opts.eta_floor);
    roots.retain(|r| r.im > eta_min);
    sort_modes(&mut roots);
    Ok(roots)
}

/// Scattering data with eigenfunctions, `b`, `mu`, `gamma` and `Psi'` for
/// every bound state, plus the continuum for decaying windows.
pub fn scatter(s: &Signal, opts: &ScatterOptions) -> Result<ScatteringState> {
    let kind = resolve_boundary(s, opts.boundary);
    let m = s.len();
    let (solitons, complete) = match kind {
        ModeKind::Ring => {
            let lat = Lattice::from_signal(s);
            let (vals, vecs) = operator_eigen(&lattice_matrix(&lat))?;
            let reps = ring_representatives(&vals, s.tau(), opts);
            let mut modes = Vec::with_capacity(reps.len());
            for (k, lambda) in reps {
                let x: Vec<C64> = (0..2 * m).map(|i| vecs[(i, k)]).collect();
                modes.push(ring_mode(s, &lat, lambda, &x)?);
            }
            let complete = m.is_multiple_of(2) && modes.len() == m / 2;
            (modes, complete)
        }
        ModeKind::Decaying => {
            let roots = decaying_roots(s, opts)?;
            let mut modes = Vec::with_capacity(roots.len());
            for l in roots {
                modes.push(decaying_mode(s, l)?);
            }
            (modes, false)
        }
    };
    let continuum = if kind == ModeKind::Decaying && opts.with_continuum {
        Some(continuum_on_grid(s, m.saturating_sub(2 * solitons.len()))?)
    } else {
        None
    };
    Ok(ScatteringState {
        solitons,
        continuum,
        m,
        tau: s.tau(),
        position_x: s.position_x(),
        t_start: s.t_start(),
        kind,
        complete,
    })
}

/// Bound states with all mode data but no continuum.
pub fn discrete_spectrum(s: &Signal, opts: &ScatterOptions) -> Result<ScatteringState> {
    scatter(s, &ScatterOptions { with_continuum: false, ..*opts })
}

/// Bound state of a decaying window. The eigenfunction is the left Jost solution
/// on the left half and `b` times the right Jost solution on the right half.
fn decaying_mode(s: &Signal, lambda: C64) -> Result<SolitonMode> {
    let lat = Lattice::from_signal(s);
    let jd = jost_on_lattice(&lat, s.t_start(), lambda)?;
    let (b, psi, psi_prime) = stitch(&lat, lambda, &jd, s.len() / 2)?;
    finish_mode(&lat, lambda, b, jd.a_prime, jd.a_double_prime, psi, psi_prime, 0, ModeKind::Decaying)
}

/// Norming coefficient `b` from left/right matching at site `mid`, with the
/// stitched eigenfunction and its `lambda` derivative. The derivative is carried
/// forward through the whole window, so its growing right-hand part is exact.
fn stitch(lat: &Lattice, lambda: C64, jd: &JostData, mid: usize) -> Result<(C64, Vec<Spinor>, Vec<Spinor>)> {
    let m = jd.phi.len() - 1;
    let (f, g) = (jd.phi[mid], jd.psi[mid]);
    let gg = g[0].norm_sqr() + g[1].norm_sqr();
    if gg == 0.0 {
        return Err(Error::Degenerate("right Jost solution vanishes at the matching site".into()));
    }
    let b = (f[0] * g[0].conj() + f[1] * g[1].conj()) / gg;
    let psi: Vec<Spinor> = (0..=m).map(|n| if n <= mid { jd.phi[n] } else { scale(b, jd.psi[n]) }).collect();
    let (z, zi, dz, dzi) = zvars(lambda, lat.tau);
    let mut dpsi = vec![jd.phi_prime[0]; m + 1];
    for n in 0..m {
        dpsi[n + 1] = add(lat.step(n, z, zi, dpsi[n]), lat.dstep(n, dz, dzi, psi[n]));
    }
    Ok((b, psi, dpsi))
}

#[allow(clippy::too_many_arguments)]
fn finish_mode(
    lat: &Lattice,
    lambda: C64,
    b: C64,
    a_prime: C64,
    a_double_prime: C64,
    psi: Vec<Spinor>,
    psi_prime: Vec<Spinor>,
    site_offset: usize,
    kind: ModeKind,
) -> Result<SolitonMode> {
    let m = lat.len();
    let gamma = 2.0 * lat.tau * psi[..m].iter().map(|v| v[0] * v[1]).sum::<C64>();
    let scale = psi.iter().map(|v| v[0].norm_sqr() + v[1].norm_sqr()).sum::<f64>() * lat.tau;
    if !(gamma.norm() > 1e-10 * scale) {
        return Err(Error::Degenerate(format!("non-normalizable mode at lambda = {lambda}: |gamma| = {:.3e}", gamma.norm())));
    }
    if !(a_prime.norm() > 1e-14) {
        return Err(Error::Degenerate(format!("a'(lambda) vanishes at lambda = {lambda}")));
    }
    Ok(SolitonMode {
        lambda,
        b,
        mu: (b / a_prime).ln(),
        gamma,
        a_prime,
        a_double_prime,
        psi,
        psi_prime,
        site_offset,
        kind,
    })
}

/// Bound state of the periodic ring from an eigenvector `x = (v_1, v_2)` of the
/// one-step operator. The arrays start at the site opposite the amplitude peak,
/// where `Psi'` is unrolled from zero.
fn ring_mode(s: &Signal, lat: &Lattice, lambda: C64, x: &[C64]) -> Result<SolitonMode> {
    let m = lat.len();
    let amp = |p: usize| x[p].norm_sqr() + x[m + p].norm_sqr();
    let peak = (0..m).max_by(|&i, &j| amp(i).total_cmp(&amp(j))).unwrap_or(0);
    let cut = (peak + m / 2) % m;
    let (z, zi, dz, dzi) = zvars(lambda, lat.tau);
    let mut psi = Vec::with_capacity(m + 1);
    for j in 0..=m {
        let p = (cut + j) % m;
        psi.push([x[p], x[m + p]]);
    }
    let mut dpsi = vec![[ZERO, ZERO]; m + 1];
    for j in 0..m {
        let p = (cut + j) % m;
        dpsi[j + 1] = add(lat.step(p, z, zi, dpsi[j]), lat.dstep(p, dz, dzi, psi[j]));
    }
    let rotated = s.rotated(cut);
    let rlat = Lattice::from_signal(&rotated);
    let t0 = s.t_start() + cut as f64 * s.tau();
    let jd = jost_on_lattice(&rlat, t0, lambda)?;
    let (b, _, _) = stitch(&rlat, lambda, &jd, m / 2)?;
    finish_mode(lat, lambda, b, jd.a_prime, jd.a_double_prime, psi, dpsi, cut, ModeKind::Ring)
}

/// Bound state of a decaying window found by Newton iteration from `lambda`.
pub fn bound_state_near(s: &Signal, lambda: C64) -> Result<SolitonMode> {
    let lat = Lattice::from_signal(s);
    let l = refine_zero(&lat, lambda, 1e-8)
        .ok_or_else(|| Error::Precondition(format!("no zero of a(lambda) near {lambda}")))?;
    decaying_mode(s, l)
}

/// Norming data `(b, mu, gamma)` of the bound state nearest to `lambda`.
pub fn norming_data(s: &Signal, lambda: C64) -> Result<(C64, C64, C64)> {
    let mode = bound_state_near(s, lambda)?;
    Ok((mode.b, mode.mu, mode.gamma))
}

/// `lambda` derivative of the bound-state eigenfunction nearest to `lambda`,
/// from the differentiated transfer recursion.
pub fn derivative_eigenfunction(s: &Signal, lambda: C64) -> Result<Vec<Spinor>> {
    if s.samples().iter().all(|x| x.norm() == 0.0) {
        return Err(Error::Precondition("zero signal has no bound states".into()));
    }
    let lat = Lattice::from_signal(s);
    let l = refine_zero(&lat, lambda, 1e-8)
        .ok_or_else(|| Error::Precondition(format!("no zero of a(lambda) near {lambda}")))?;
    Ok(decaying_mode(s, l)?.psi_prime)
}

/// Largest residual of `Psi'_{j+1} = T_j Psi'_j + T'_j Psi_j` relative to the eigenfunction
/// scale, excluding the unrolling cut of ring modes.
pub fn derivative_residual(s: &Signal, mode: &SolitonMode) -> f64 {
    let lat = Lattice::from_signal(s);
    let m = lat.len();
    let (z, zi, dz, dzi) = zvars(mode.lambda, lat.tau);
    let scale = mode.psi.iter().chain(&mode.psi_prime).map(spinor_norm).fold(0.0, f64::max);
    let mut worst: f64 = 0.0;
    for j in 0..m {
        let p = (mode.site_offset + j) % m;
        let pred = add(lat.step(p, z, zi, mode.psi_prime[j]), lat.dstep(p, dz, dzi, mode.psi[j]));
        let d = add(pred, scale_neg(mode.psi_prime[j + 1]));
        worst = worst.max(spinor_norm(&d));
    }
    worst / scale
}

fn scale_neg(a: Spinor) -> Spinor {
    [-a[0], -a[1]]
}

/// Continuum on `n_c` uniformly spaced real points covering `[-pi/(2 tau), pi/(2 tau))`.
pub fn continuum_on_grid(s: &Signal, n_c: usize) -> Result<ContinuumData> {
    let lat = Lattice::from_signal(s);
    let mut out = ContinuumData { xi_grid: Vec::new(), rho: Vec::new(), a_vals: Vec::new(), b_vals: Vec::new(), jost_phi: Vec::new() };
    if n_c == 0 {
        return Ok(out);
    }
    let dxi = PI / (n_c as f64 * s.tau());
    for k in 0..n_c {
        let xi = (k as f64 - (n_c / 2) as f64) * dxi;
        let jd = jost_on_lattice(&lat, s.t_start(), C64::new(xi, 0.0))?;
        if jd.a.norm() < 1e-12 {
            return Err(Error::Degenerate(format!("a(xi) vanishes at xi = {xi}")));
        }
        out.xi_grid.push(xi);
        out.rho.push(jd.b / jd.a);
        out.a_vals.push(jd.a);
        out.b_vals.push(jd.b);
        out.jost_phi.push(jd.phi);
    }
    Ok(out)
}

/// Continuum data with `N_c = M - 2N` grid points.
pub fn continuum_data(s: &Signal, opts: &ScatterOptions) -> Result<ContinuumData> {
    let n = match resolve_boundary(s, opts.boundary) {
        ModeKind::Ring => eigenvalues(s, opts)?.len(),
        ModeKind::Decaying => decaying_roots(s, opts)?.len(),
    };
    continuum_on_grid(s, s.len().saturating_sub(2 * n))
}

/// First-order response `dF = sum_p du_p * du(p) + dub_p * conj(du(p))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub du: Vec<C64>,
    pub dub: Vec<C64>,
}

impl Gradient {
    pub fn zeros(m: usize) -> Self {
        Self { du: vec![ZERO; m], dub: vec![ZERO; m] }
    }

    /// Gradient of the complex conjugate functional.
    pub fn conj(&self) -> Self {
        Self { du: self.dub.iter().map(|x| x.conj()).collect(), dub: self.du.iter().map(|x| x.conj()).collect() }
    }

    /// First-order change of the functional under `du`.
    pub fn apply(&self, du: &[C64]) -> C64 {
        self.du.iter().zip(&self.dub).zip(du).map(|((g, h), d)| g * d + h * d.conj()).sum()
    }

    pub fn axpy(&mut self, k: C64, other: &Gradient) {
        for (a, b) in self.du.iter_mut().zip(&other.du) {
            *a += k * b;
        }
        for (a, b) in self.dub.iter_mut().zip(&other.dub) {
            *a += k * b;
        }
    }

    pub fn scaled(&self, k: C64) -> Self {
        Self { du: self.du.iter().map(|x| k * x).collect(), dub: self.dub.iter().map(|x| k * x).collect() }
    }

    /// Lattice Poisson bracket `sum_p (i/tau) w_p (F_u G_ub - F_ub G_u)`.
    pub fn bracket(&self, other: &Gradient, w: &[f64], tau: f64) -> C64 {
        let mut acc = ZERO;
        for p in 0..w.len() {
            acc += w[p] * (self.du[p] * other.dub[p] - self.dub[p] * other.du[p]);
        }
        acc * I / tau
    }
}

fn staggered_rows(lat: &Lattice, mode: &SolitonMode, f: impl Fn(usize) -> (C64, C64)) -> Gradient {
    let m = lat.len();
    let mut g = Gradient::zeros(m);
    let k = lat.tau / mode.gamma;
    for j in 0..m {
        let p = (mode.site_offset + j) % m;
        let (d1, d2) = f(j);
        g.du[p] = -k * d1 / lat.c[p];
        g.dub[p] = k * d2 / lat.c[p];
    }
    g
}

/// Gradient of the eigenvalue of `mode`.
pub fn lambda_gradient(lat: &Lattice, mode: &SolitonMode) -> Gradient {
    let v = &mode.psi;
    staggered_rows(lat, mode, |j| (v[j][0] * v[j + 1][0], v[j][1] * v[j + 1][1]))
}

/// Gradient of `mu` at fixed `lambda` (no `a''/a'` term).
pub fn mu0_gradient(lat: &Lattice, mode: &SolitonMode) -> Gradient {
    let (v, d) = (&mode.psi, &mode.psi_prime);
    staggered_rows(lat, mode, |j| {
        (
            d[j][0] * v[j + 1][0] + v[j][0] * d[j + 1][0],
            d[j][1] * v[j + 1][1] + v[j][1] * d[j + 1][1],
        )
    })
}

/// Gradient of `mu = log(b / a')`.
pub fn mu_gradient(lat: &Lattice, mode: &SolitonMode) -> Gradient {
    let mut g = mu0_gradient(lat, mode);
    g.axpy(-mode.a0(), &lambda_gradient(lat, mode));
    g
}

/// Gradient of the reflection coefficient at continuum point `k`.
pub fn rho_gradient(lat: &Lattice, cont: &ContinuumData, k: usize) -> Gradient {
    let m = lat.len();
    let phi = &cont.jost_phi[k];
    let a = cont.a_vals[k];
    let pref = I * lat.tau / (a * a);
    let mut g = Gradient::zeros(m);
    for p in 0..m {
        let c = lat.c[p];
        g.du[p] = pref * phi[p][0] * phi[p + 1][0] / c;
        g.dub[p] = -pref * phi[p][1] * phi[p + 1][1] / c;
    }
    g
}

/// Gradient of the lattice norm `sum ln(1 + tau^2 |u|^2) / tau`.
pub fn al_norm_gradient(s: &Signal) -> Gradient {
    let t = s.tau();
    let mut g = Gradient::zeros(s.len());
    for (p, u) in s.samples().iter().enumerate() {
        let w = 1.0 + t * t * u.norm_sqr();
        g.du[p] = t * u.conj() / w;
        g.dub[p] = t * u / w;
    }
    g
}

/// Inverse localization length from the exponential tails of a decaying-window
/// mode: slope of `ln |Psi|` against distance from the peak, fitted where the
/// amplitude lies between `1e-2` and `1e-9` of the peak.
pub fn localization_length_estimate(mode: &SolitonMode, tau: f64) -> Result<f64> {
    let amp = mode.amplitude_by_sample();
    let m = amp.len();
    let (peak_idx, peak) = amp.iter().copied().enumerate().fold((0, 0.0), |acc, (i, a)| if a > acc.1 { (i, a) } else { acc });
    let tail = amp[0].max(amp[m - 1]);
    if !(peak > 0.0) || tail >= 1e-3 * peak {
        return Err(Error::Precondition(format!(
            "eigenfunction tails not decayed: edge/peak = {:.3e}, window too small",
            tail / peak
        )));
    }
    let pts: Vec<(f64, f64)> = amp
        .iter()
        .enumerate()
        .filter(|(_, &a)| a < 1e-2 * peak && a > 1e-9 * peak)
        .map(|(i, &a)| ((i as f64 - peak_idx as f64).abs() * tau, (a / peak).ln()))
        .collect();
    let slope = fit_slope(&pts).ok_or_else(|| Error::Precondition("too few tail samples for a fit".into()))?;
    Ok(-slope)
}

/// Inverse localization length of a ring mode: slope of `ln |Psi|` against cyclic
/// distance from the peak over distances `[0.1 T, 0.5 T]`.
pub fn ring_localization_length(mode: &SolitonMode, tau: f64) -> Option<f64> {
    let amp = mode.amplitude_by_sample();
    let m = amp.len();
    let peak_idx = (0..m).max_by(|&i, &j| amp[i].total_cmp(&amp[j]))?;
    let t = m as f64 * tau;
    let pts: Vec<(f64, f64)> = (0..m)
        .filter_map(|i| {
            let d = (i as isize - peak_idx as isize).unsigned_abs();
            let d = d.min(m - d) as f64 * tau;
            (d >= 0.1 * t && d <= 0.5 * t && amp[i] > 0.0).then(|| (d, amp[i].ln()))
        })
        .collect();
    fit_slope(&pts).map(|s| -s)
}

fn fit_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}
