//! Noiseless span propagation on the periodic Ablowitz-Ladik lattice, amplifier
//! noise, and the deterministic evolution law of the scattering data.
//!
//! The lattice equation
//!
//! ```text
//! i du_n/dx + (u_{n+1} - 2 u_n + u_{n-1}) / tau^2 + |u_n|^2 (u_{n+1} + u_{n-1}) = 0
//! ```
//!
//! is written in the canonical variable `q_n` with `tau^2 |q_n|^2 = ln(1 + tau^2 |u_n|^2)`
//! and the same phase, where the bracket is the standard one, and integrated with the
//! two-stage Gauss-Legendre method. That method is symplectic and conserves the
//! lattice norm `sum tau |q_n|^2` exactly.

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::signal::{al_norm, noise_draw, NoiseDraw, Signal};
use crate::zs_scattering::{self, ModeKind, ScatterOptions, ScatteringState};

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Span schedule of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationPlan {
    pub span_length: f64,
    pub num_spans: usize,
    /// Step, adjusted so that it divides the span length.
    pub dx: f64,
    pub eps2: f64,
    pub seed: u64,
}

/// Default number of steps per span before any halving.
pub const DEFAULT_STEPS_PER_SPAN: usize = 512;
/// Largest number of step halvings tried by the drift control.
pub const MAX_HALVINGS: usize = 4;

impl PropagationPlan {
    pub fn new(span_length: f64, num_spans: usize, eps2: f64, seed: u64) -> Result<Self> {
        if !(span_length.is_finite() && span_length >= 0.0) {
            return Err(Error::Parameter(format!("span length must be non-negative, got {span_length}")));
        }
        if num_spans == 0 {
            return Err(Error::Parameter("at least one span required".into()));
        }
        Ok(Self { span_length, num_spans, dx: span_length / DEFAULT_STEPS_PER_SPAN as f64, eps2, seed })
    }

    pub fn steps_per_span(&self) -> usize {
        steps_for(self.span_length, self.dx)
    }

    pub fn with_steps_per_span(mut self, n: usize) -> Self {
        self.dx = self.span_length / n.max(1) as f64;
        self
    }

    pub fn halved(mut self) -> Self {
        self.dx *= 0.5;
        self
    }
}

fn steps_for(length: f64, dx: f64) -> usize {
    if length == 0.0 {
        0
    } else {
        ((length / dx) - 1e-9).ceil().max(1.0) as usize
    }
}

pub fn q_of_u(u: &[C64], tau: f64) -> Vec<C64> {
    u.iter()
        .map(|&u| {
            let x = tau * tau * u.norm_sqr();
            let f = if x > 1e-12 { (x.ln_1p() / x).sqrt() } else { 1.0 - 0.25 * x };
            u * f
        })
        .collect()
}

pub fn u_of_q(q: &[C64], tau: f64) -> Vec<C64> {
    q.iter()
        .map(|&q| {
            let x = tau * tau * q.norm_sqr();
            q * h_of(x)
        })
        .collect()
}

fn h_of(x: f64) -> f64 {
    if x > 1e-12 {
        (x.exp_m1() / x).sqrt()
    } else {
        1.0 + 0.25 * x
    }
}

/// Lattice vector field in canonical variables.
fn rhs(q: &[C64], tau: f64, out: &mut [C64], u: &mut [C64], hs: &mut [(f64, f64)]) {
    let m = q.len();
    let t2 = tau * tau;
    for n in 0..m {
        let s = q[n].norm_sqr();
        let x = t2 * s;
        let h = h_of(x);
        let dd = if x > 1e-8 {
            let e = x.exp_m1();
            (x * (e + 1.0) - e) / (x * x)
        } else {
            0.5 + x / 3.0
        };
        let hp = t2 * dd / (2.0 * h);
        hs[n] = (h + s * hp, hp);
        u[n] = q[n] * h;
    }
    for n in 0..m {
        let nb = u[(n + 1) % m] + u[(n + m - 1) % m];
        let (g1, hp) = hs[n];
        out[n] = I * (g1 * nb + q[n] * q[n] * hp * nb.conj()) / t2 - 2.0 * I * q[n] / t2;
    }
}

struct Gl4 {
    k1: Vec<C64>,
    k2: Vec<C64>,
    n1: Vec<C64>,
    n2: Vec<C64>,
    y: Vec<C64>,
    u: Vec<C64>,
    hs: Vec<(f64, f64)>,
}

impl Gl4 {
    fn new(m: usize) -> Self {
        let z = vec![C64::new(0.0, 0.0); m];
        Self { k1: z.clone(), k2: z.clone(), n1: z.clone(), n2: z.clone(), y: z.clone(), u: z, hs: vec![(0.0, 0.0); m] }
    }

    fn step(&mut self, q: &mut [C64], dx: f64, tau: f64, fault: f64) -> Result<()> {
        let s3 = 3f64.sqrt() / 6.0;
        let a = [[0.25, 0.25 - s3], [0.25 + s3, 0.25]];
        let m = q.len();
        let qmax = q.iter().map(|x| x.norm()).fold(1.0, f64::max);
        rhs(q, tau, &mut self.k1, &mut self.u, &mut self.hs);
        self.k2.copy_from_slice(&self.k1);
        let mut converged = false;
        for _ in 0..100 {
            for n in 0..m {
                self.y[n] = q[n] + dx * (a[0][0] * self.k1[n] + a[0][1] * self.k2[n]);
            }
            rhs(&self.y, tau, &mut self.n1, &mut self.u, &mut self.hs);
            for n in 0..m {
                self.y[n] = q[n] + dx * (a[1][0] * self.k1[n] + a[1][1] * self.k2[n]);
            }
            rhs(&self.y, tau, &mut self.n2, &mut self.u, &mut self.hs);
            let mut d: f64 = 0.0;
            for n in 0..m {
                let e = (self.n1[n] - self.k1[n]).norm() + (self.n2[n] - self.k2[n]).norm();
                d = if e.is_nan() { f64::NAN } else { d.max(e) };
            }
            std::mem::swap(&mut self.k1, &mut self.n1);
            std::mem::swap(&mut self.k2, &mut self.n2);
            if d.is_nan() || !d.is_finite() {
                break;
            }
            if d * dx < 1e-15 * qmax {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::StepSize(format!("implicit stage iteration failed at dx = {dx:.3e}; reduce the step")));
        }
        for n in 0..m {
            q[n] += 0.5 * dx * (1.0 + fault) * (self.k1[n] + self.k2[n]);
        }
        if q.iter().any(|x| !x.is_finite()) {
            return Err(Error::StepSize(format!("solution became non-finite at dx = {dx:.3e}; reduce the step")));
        }
        Ok(())
    }
}

/// Propagates `s` over `length` with step close to `dx` (rounded so it divides `length`).
pub fn propagate_span(s: &Signal, length: f64, dx: f64) -> Result<Signal> {
    propagate_span_with_fault(s, length, dx, 0.0)
}

/// As [`propagate_span`], with the stage combination deliberately mis-weighted by
/// `1 + fault` for fault-injection tests.
pub fn propagate_span_with_fault(s: &Signal, length: f64, dx: f64, fault: f64) -> Result<Signal> {
    if !(dx.is_finite() && dx > 0.0) {
        return Err(Error::Parameter(format!("step must be positive, got {dx}")));
    }
    let n = steps_for(length, dx);
    if n == 0 {
        return Ok(s.clone().at_position(s.position_x() + length));
    }
    let h = length / n as f64;
    let tau = s.tau();
    let mut q = q_of_u(s.samples(), tau);
    let norm0: f64 = q.iter().map(|x| x.norm_sqr()).sum();
    let mut gl = Gl4::new(q.len());
    for _ in 0..n {
        gl.step(&mut q, h, tau, fault)?;
    }
    let norm1: f64 = q.iter().map(|x| x.norm_sqr()).sum();
    if norm0 > 0.0 && ((norm1 - norm0) / norm0).abs() > 1e-6 {
        return Err(Error::StepSize(format!(
            "lattice norm drift {:.3e} over the span; reduce the step",
            (norm1 - norm0) / norm0
        )));
    }
    s.with_samples(u_of_q(&q, tau)).map(|o| o.at_position(s.position_x() + length))
}

/// Largest distance from an eigenvalue of `before` to the nearest one of `after`.
pub fn eigenvalue_drift(before: &[C64], after: &[C64]) -> f64 {
    if before.len() != after.len() {
        return f64::INFINITY;
    }
    before
        .iter()
        .map(|l| after.iter().map(|m| (l - m).norm()).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}

/// Outcome of a drift-controlled span.
#[derive(Debug, Clone)]
pub struct SpanResult {
    pub signal: Signal,
    pub dx: f64,
    pub drift: f64,
    pub max_eta: f64,
}

/// Propagates one span, halving `dx` (at most [`MAX_HALVINGS`] times) until the
/// eigenvalue drift is at most `rel_tol * max eta`.
pub fn propagate_span_checked(s: &Signal, length: f64, dx: f64, rel_tol: f64, opts: &ScatterOptions) -> Result<SpanResult> {
    let before = zs_scattering::eigenvalues(s, opts)?;
    let max_eta = before.iter().map(|l| l.im).fold(0.0, f64::max);
    let mut h = dx;
    let mut last = String::new();
    for _ in 0..=MAX_HALVINGS {
        match propagate_span(s, length, h) {
            Ok(out) => {
                let after = zs_scattering::eigenvalues(&out, opts)?;
                let drift = eigenvalue_drift(&before, &after);
                if drift <= rel_tol * max_eta || before.is_empty() && after.is_empty() {
                    return Ok(SpanResult { signal: out, dx: h, drift, max_eta });
                }
                last = format!("eigenvalue drift {drift:.3e} at dx = {h:.3e}");
            }
            Err(Error::StepSize(msg)) => last = msg,
            Err(e) => return Err(e),
        }
        h *= 0.5;
    }
    Err(Error::StepSize(format!("drift criterion not met after {MAX_HALVINGS} halvings: {last}")))
}

/// Adds the noise of amplifier `k` with per-sample variance `eps2 / tau`.
pub fn inject_noise(s: &Signal, eps2: f64, k: usize, seed: u64) -> Result<Signal> {
    if eps2 == 0.0 {
        return Ok(s.clone());
    }
    let NoiseDraw { samples, .. } = noise_draw(s.len(), s.tau(), eps2, k, seed);
    s.with_samples(s.samples().iter().zip(&samples).map(|(u, w)| u + w).collect())
}

/// Lattice form of the dispersion factor, `(sin(lambda tau) / tau)^2`, which tends
/// to `lambda^2` as `tau -> 0`.
pub fn lattice_lambda_sq(lambda: C64, tau: f64) -> C64 {
    let s = (lambda * tau).sin() / tau;
    s * s
}

/// Predicted change of `log b` over a distance `dx`: `-4 i lambda^2 dx` in the
/// continuum, with the lattice dispersion factor on a grid of step `tau`.
pub fn predicted_log_b_shift(lambda: C64, tau: f64, dx: f64) -> C64 {
    -4.0 * I * lattice_lambda_sq(lambda, tau) * dx
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeResidual {
    pub lambda: C64,
    pub residual: f64,
    pub continuum_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionReport {
    pub modes: Vec<ModeResidual>,
    /// Residuals of `log rho` on continuum points with non-negligible `|rho|`.
    pub continuum: Vec<(f64, f64)>,
    pub tolerance: f64,
    pub flagged: Vec<usize>,
}

impl EvolutionReport {
    pub fn max_residual(&self) -> f64 {
        self.modes
            .iter()
            .map(|m| m.residual)
            .chain(self.continuum.iter().map(|c| c.1))
            .fold(0.0, f64::max)
    }
}

fn wrap_2pi_i(z: C64) -> C64 {
    let tp = 2.0 * std::f64::consts::PI;
    C64::new(z.re, z.im - tp * (z.im / tp).round())
}

/// Residuals of the linear evolution law of `log b` and `log rho` between two
/// noiseless states a distance `length` apart.
pub fn spectral_evolution_check(
    state_in: &ScatteringState,
    state_out: &ScatteringState,
    length: f64,
    tolerance: f64,
) -> Result<EvolutionReport> {
    let tau = state_in.tau;
    let spacing = min_spacing(&state_in.eigenvalues());
    let radius = if spacing.is_finite() { 0.1 * spacing } else { 1e-2 };
    let radius = radius.max(1e-6);
    let mut modes = Vec::new();
    let mut flagged = Vec::new();
    for (k, m) in state_in.solitons.iter().enumerate() {
        let partner = state_out
            .solitons
            .iter()
            .min_by(|a, b| (a.lambda - m.lambda).norm().total_cmp(&(b.lambda - m.lambda).norm()))
            .filter(|p| (p.lambda - m.lambda).norm() <= radius)
            .ok_or_else(|| Error::Pairing(format!("no eigenvalue within {radius:.3e} of {}", m.lambda)))?;
        let expected = predicted_log_b_shift(m.lambda, tau, length);
        let got = (partner.b / m.b).ln();
        let residual = wrap_2pi_i(got - expected).norm();
        if residual > tolerance {
            flagged.push(k);
        }
        modes.push(ModeResidual { lambda: m.lambda, residual, continuum_residual: 0.0 });
    }
    let mut continuum = Vec::new();
    if let (Some(ci), Some(co)) = (&state_in.continuum, &state_out.continuum) {
        if ci.xi_grid == co.xi_grid {
            let rmax = ci.rho.iter().map(|r| r.norm()).fold(0.0, f64::max);
            for k in 0..ci.len() {
                if ci.rho[k].norm() > (1e-3 * rmax).max(RHO_FLOOR) {
                    let xi = C64::new(ci.xi_grid[k], 0.0);
                    let r = wrap_2pi_i((co.rho[k] / ci.rho[k]).ln() - predicted_log_b_shift(xi, tau, length)).norm();
                    continuum.push((ci.xi_grid[k], r));
                }
            }
        }
    }
    Ok(EvolutionReport { modes, continuum, tolerance, flagged })
}

/// Continuum points with `|rho|` below this are roundoff and carry no phase.
pub const RHO_FLOOR: f64 = 1e-6;

fn min_spacing(ls: &[C64]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..ls.len() {
        for j in (i + 1)..ls.len() {
            best = best.min((ls[i] - ls[j]).norm());
        }
    }
    best
}

/// Noiseless multi-span run returning the signal at every amplifier (index 0 is the input).
pub fn run_spans(s: &Signal, plan: &PropagationPlan) -> Result<Vec<Signal>> {
    let mut out = vec![s.clone()];
    let mut cur = s.clone();
    for _ in 0..plan.num_spans {
        cur = propagate_span(&cur, plan.span_length, plan.dx)?;
        out.push(cur.clone());
    }
    Ok(out)
}

/// Relative change of the lattice norm between two signals.
pub fn norm_drift(a: &Signal, b: &Signal) -> f64 {
    let (na, nb) = (al_norm(a), al_norm(b));
    if na == 0.0 {
        nb.abs()
    } else {
        ((nb - na) / na).abs()
    }
}

/// Whether a state is usable with the ring treatment.
pub fn is_ring(state: &ScatteringState) -> bool {
    state.kind == ModeKind::Ring
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_map_round_trip() {
        let u: Vec<C64> = (0..10).map(|k| C64::new(k as f64 * 0.7, -(k as f64))).collect();
        let back = u_of_q(&q_of_u(&u, 0.3), 0.3);
        for (a, b) in u.iter().zip(&back) {
            assert!((a - b).norm() < 1e-12 * (1.0 + a.norm()));
        }
    }

    #[test]
    fn vacuum_is_fixed() {
        let s = Signal::zeros(16, 0.1).unwrap();
        let out = propagate_span(&s, 1.0, 0.1).unwrap();
        assert!(out.samples().iter().all(|u| u.norm() == 0.0));
        assert!((out.position_x() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn lattice_factor_limit() {
        let l = C64::new(0.3, 0.7);
        assert!((lattice_lambda_sq(l, 1e-5) - l * l).norm() < 1e-9);
    }
}
