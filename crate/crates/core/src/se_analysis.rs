//! Entropies, spectral efficiency and its bounds.
//!
//! A covariance of `M_dof` complex degrees of freedom is stored in the augmented
//! layout of dimension `2 M_dof`, so a noise level `K eps^2` per degree of freedom
//! contributes `2 M_dof log2(K eps^2)` to `log2 det S`.

use std::f64::consts::{E, PI};
use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::covariance::{
    assemble_mk, assemble_s, assemble_s_nogh, assemble_s_noprop, blocks_at_amplifier, gordon_haus_terms, log2_det,
    log_det, track_modes, NoiseCovariance, Variant,
};
use crate::error::{Error, Result};
use crate::propagation::propagate_span;
use crate::signal::generate_white_gaussian;
use crate::units::{derive_scales_for_symbols, snr, validity_flag, watts_to_dbm, PhysicalParams};
use crate::zs_scattering::{scatter, ScatterOptions};

/// One point of a spectral-efficiency sweep, in bits per complex degree of freedom.
#[derive(Debug, Clone, PartialEq)]
pub struct SEPoint {
    pub snr_db: f64,
    pub power_w: f64,
    pub se_full: Option<f64>,
    pub se_nogh: Option<f64>,
    pub se_noprop: Option<f64>,
    pub shannon_limit: f64,
    pub bts_valid: bool,
    pub seed: u64,
    pub k: usize,
    pub m: usize,
    pub n_solitons: usize,
}

impl SEPoint {
    pub fn power_dbm(&self) -> f64 {
        watts_to_dbm(self.power_w)
    }

    pub fn get(&self, v: Variant) -> Option<f64> {
        match v {
            Variant::Full => self.se_full,
            Variant::NoGh => self.se_nogh,
            Variant::NoProp => self.se_noprop,
        }
    }
}

/// `h_G = 1/2 log2 det S + M_dof log2(pi e)`.
pub fn gaussian_entropy(s: &NoiseCovariance, m_dof: usize) -> Result<f64> {
    Ok(0.5 * log_det(s)? + m_dof as f64 * (PI * E).log2())
}

/// Per-degree-of-freedom entropy of a Gaussian input of power `d`.
pub fn gaussian_input_entropy(d: f64) -> f64 {
    (PI * E * d).log2()
}

/// `SE = h(U)/M_dof - h_G/M_dof`.
pub fn spectral_efficiency(h_u_per_dof: f64, s: &NoiseCovariance, m_dof: usize) -> Result<f64> {
    if m_dof == 0 {
        return Err(Error::Degenerate("no degrees of freedom retained".into()));
    }
    Ok(h_u_per_dof - gaussian_entropy(s, m_dof)? / m_dof as f64)
}

/// `log2(P / (K sigma^2 B))`.
pub fn shannon_upper_bound(params: &PhysicalParams) -> f64 {
    (params.power / (params.num_spans as f64 * params.sigma2() * params.bandwidth)).log2()
}

/// `1/2 log2 SNR - 1/(4N) log2 det(avg)` for the amplifier-averaged matrix `avg`
/// of dimension `4N`.
pub fn jensen_minkowski_lower_bound(avg: &DMatrix<C64>, params: &PhysicalParams) -> Result<f64> {
    let d = avg.nrows();
    if d == 0 || !d.is_multiple_of(4) {
        return Err(Error::Structural(format!("averaged matrix of dimension {d} is not 4N")));
    }
    Ok(0.5 * snr(params)?.log2() - log2_det(avg)? / d as f64)
}

/// Closed-form inverse localization length `(D/2)[(2 eta/D) coth(2 eta/D) - 1]`.
pub fn kappa_closed_form(eta: f64, d: f64) -> f64 {
    let x = 2.0 * eta / d;
    let xc = if x.abs() < 1e-4 {
        1.0 + x * x / 3.0 - x.powi(4) / 45.0
    } else {
        x / x.tanh()
    };
    0.5 * d * (xc - 1.0)
}

/// Settings of a spectral-efficiency sweep.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub params: PhysicalParams,
    pub powers_dbm: Vec<f64>,
    pub m: usize,
    pub seeds: Vec<u64>,
    pub steps_per_span: usize,
    pub variants: Vec<Variant>,
    pub input_power: f64,
    /// Smallest `B t_s` for which a point is flagged valid.
    pub bts_threshold: f64,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.powers_dbm.is_empty() {
            return Err(Error::Config("power grid is empty".into()));
        }
        if self.powers_dbm.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("power grid must be increasing".into()));
        }
        if self.m < 8 {
            return Err(Error::Config(format!("M must be at least 8, got {}", self.m)));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("no seeds".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::Config("no variant enabled".into()));
        }
        if self.steps_per_span == 0 {
            return Err(Error::Config("steps per span must be positive".into()));
        }
        Ok(())
    }
}

/// Failure of one grid point.
#[derive(Debug, Clone)]
pub struct PointFailure {
    pub power_dbm: f64,
    pub seed: u64,
    pub message: String,
}

/// Covariances of one realization at one launch power.
#[derive(Debug, Clone)]
pub struct PointCovariances {
    pub full: Option<NoiseCovariance>,
    pub nogh: Option<NoiseCovariance>,
    pub noprop: Option<NoiseCovariance>,
    pub n_solitons: usize,
}

/// Builds the requested covariance variants for a Gaussian input at the power in `params`.
pub fn point_covariances(
    params: &PhysicalParams,
    m: usize,
    seed: u64,
    steps_per_span: usize,
    variants: &[Variant],
    input_power: f64,
) -> Result<PointCovariances> {
    let scales = derive_scales_for_symbols(params, m)?;
    let k_spans = params.num_spans;
    let opts = ScatterOptions::default();
    let input = generate_white_gaussian(m, scales.tau, input_power, seed)?;
    let state0 = scatter(&input, &opts)?;
    let mut out = PointCovariances { full: None, nogh: None, noprop: None, n_solitons: state0.n() };
    let need_path = variants.iter().any(|v| *v != Variant::NoProp);
    if need_path {
        let dx = scales.l_s / steps_per_span as f64;
        let mut signals = Vec::with_capacity(k_spans);
        let mut cur = input.clone();
        for _ in 0..k_spans {
            cur = propagate_span(&cur, scales.l_s, dx)?;
            signals.push(cur.clone());
        }
        let blocks = signals
            .par_iter()
            .map(|s| {
                let st = track_modes(&state0, &scatter(s, &opts)?)?;
                blocks_at_amplifier(s, &st)
            })
            .collect::<Result<Vec<_>>>()?;
        if variants.contains(&Variant::Full) {
            let mk = blocks
                .iter()
                .enumerate()
                .map(|(i, b)| assemble_mk(b, &gordon_haus_terms(&state0, i + 1, k_spans, scales.l_s)?))
                .collect::<Result<Vec<_>>>()?;
            out.full = Some(assemble_s(&mk, scales.eps2)?);
        }
        if variants.contains(&Variant::NoGh) {
            out.nogh = Some(assemble_s_nogh(&blocks, scales.eps2)?);
        }
    }
    if variants.contains(&Variant::NoProp) {
        let b0 = blocks_at_amplifier(&input, &state0)?;
        out.noprop = Some(assemble_s_noprop(&b0, k_spans, scales.l_s, scales.eps2)?);
    }
    Ok(out)
}

/// One sweep point.
pub fn se_point(params: &PhysicalParams, cfg: &SweepConfig, seed: u64) -> Result<SEPoint> {
    let scales = derive_scales_for_symbols(params, cfg.m)?;
    let cov = point_covariances(params, cfg.m, seed, cfg.steps_per_span, &cfg.variants, cfg.input_power)?;
    let h_u = gaussian_input_entropy(cfg.input_power);
    let se = |s: &Option<NoiseCovariance>| -> Result<Option<f64>> {
        s.as_ref().map(|s| spectral_efficiency(h_u, s, s.dof)).transpose()
    };
    let snr_lin = snr(params)?;
    Ok(SEPoint {
        snr_db: 10.0 * snr_lin.log10(),
        power_w: params.power,
        se_full: se(&cov.full)?,
        se_nogh: se(&cov.nogh)?,
        se_noprop: se(&cov.noprop)?,
        shannon_limit: shannon_upper_bound(params),
        bts_valid: validity_flag(&scales, cfg.bts_threshold),
        seed,
        k: params.num_spans,
        m: cfg.m,
        n_solitons: cov.n_solitons,
    })
}

/// Runs every (power, seed) pair. Failures are collected rather than aborting the sweep.
/// Points are returned sorted by power then seed.
pub fn se_sweep(cfg: &SweepConfig) -> Result<(Vec<SEPoint>, Vec<PointFailure>)> {
    cfg.validate()?;
    let jobs: Vec<(f64, u64)> = cfg
        .powers_dbm
        .iter()
        .flat_map(|p| cfg.seeds.iter().map(move |s| (*p, *s)))
        .collect();
    let results: Vec<std::result::Result<SEPoint, PointFailure>> = jobs
        .par_iter()
        .map(|&(dbm, seed)| {
            let params = cfg.params.with_power_dbm(dbm);
            se_point(&params, cfg, seed).map_err(|e| PointFailure { power_dbm: dbm, seed, message: e.to_string() })
        })
        .collect();
    let mut points = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(p) => points.push(p),
            Err(f) => failures.push(f),
        }
    }
    Ok((points, failures))
}

/// Averages the spectral efficiencies of points sharing a power over seeds.
pub fn average_over_seeds(points: &[SEPoint]) -> Vec<SEPoint> {
    let mut out: Vec<SEPoint> = Vec::new();
    let mut counts: Vec<[usize; 3]> = Vec::new();
    for p in points {
        let idx = out.iter().position(|q| q.power_w == p.power_w && q.k == p.k);
        let i = match idx {
            Some(i) => i,
            None => {
                out.push(SEPoint { se_full: None, se_nogh: None, se_noprop: None, ..p.clone() });
                counts.push([0; 3]);
                out.len() - 1
            }
        };
        for (j, v) in [Variant::Full, Variant::NoGh, Variant::NoProp].into_iter().enumerate() {
            if let Some(x) = p.get(v) {
                let slot = match v {
                    Variant::Full => &mut out[i].se_full,
                    Variant::NoGh => &mut out[i].se_nogh,
                    Variant::NoProp => &mut out[i].se_noprop,
                };
                *slot = Some(slot.unwrap_or(0.0) + x);
                counts[i][j] += 1;
            }
        }
    }
    for (p, c) in out.iter_mut().zip(&counts) {
        if let Some(x) = p.se_full.as_mut() {
            *x /= c[0] as f64;
        }
        if let Some(x) = p.se_nogh.as_mut() {
            *x /= c[1] as f64;
        }
        if let Some(x) = p.se_noprop.as_mut() {
            *x /= c[2] as f64;
        }
    }
    out.sort_by(|a, b| a.power_w.total_cmp(&b.power_w));
    out
}

/// Formats `x` with 9 significant digits.
pub fn sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let s = format!("{:.8e}", x);
    let v: f64 = s.parse().unwrap_or(x);
    let mag = v.abs().log10().floor() as i32;
    if (-4..9).contains(&mag) {
        let decimals = (8 - mag).max(0) as usize;
        format!("{:.*}", decimals, v)
    } else {
        s
    }
}

pub const CSV_HEADER: &str = "snr_db,power_dBm,se_full,se_nogh,se_noprop,shannon,bts_valid,K,M,seed";

/// Writes the sweep table with its header row.
pub fn write_csv<W: Write>(mut w: W, points: &[SEPoint]) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    let opt = |x: Option<f64>| x.map(sig9).unwrap_or_default();
    for p in points {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            sig9(p.snr_db),
            sig9(p.power_dbm()),
            opt(p.se_full),
            opt(p.se_nogh),
            opt(p.se_noprop),
            sig9(p.shannon_limit),
            p.bts_valid,
            p.k,
            p.m,
            p.seed
        )?;
    }
    Ok(())
}
