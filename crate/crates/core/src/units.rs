//! Physical parameters of the fiber link and the dimensionless scales used
//! everywhere else in the crate.
//!
//! Time is measured in units of `t_s`, power in units of `R` and distance in
//! units of `ell`, chosen so that a white input of power `P` has unit spectral
//! density (`D = 1`).

use std::collections::BTreeMap;

use crate::error::{Error, Result};

const PS2_TO_S2: f64 = 1e-24;

/// Dimensional constants of the link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalParams {
    /// Group-velocity dispersion in ps²/km.
    pub beta2: f64,
    /// Kerr coefficient in 1/(W km).
    pub gamma: f64,
    /// Signal and noise bandwidth in Hz.
    pub bandwidth: f64,
    /// Amplifier spacing in km.
    pub span_km: f64,
    pub num_spans: usize,
    pub n_sp: f64,
    /// Photon energy in J.
    pub photon_energy: f64,
    /// Attenuation in dB/km.
    pub alpha_db_per_km: f64,
    /// Average launch power in W.
    pub power: f64,
}

impl PhysicalParams {
    /// Standard single-mode fiber values with 100 km spans.
    pub fn table_one(power: f64, num_spans: usize) -> Self {
        Self {
            beta2: 21.67,
            gamma: 1.27,
            bandwidth: 100e9,
            span_km: 100.0,
            num_spans,
            n_sp: 1.0,
            photon_energy: 13.2e-20,
            alpha_db_per_km: 0.2,
            power,
        }
    }

    pub fn with_power(mut self, power: f64) -> Self {
        self.power = power;
        self
    }

    pub fn with_power_dbm(self, dbm: f64) -> Self {
        self.with_power(dbm_to_watts(dbm))
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("beta2", self.beta2),
            ("gamma", self.gamma),
            ("bandwidth", self.bandwidth),
            ("span_km", self.span_km),
            ("n_sp", self.n_sp),
            ("photon_energy", self.photon_energy),
            ("alpha_loss", self.alpha_db_per_km),
            ("power", self.power),
        ];
        for (name, v) in checks {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Parameter(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.num_spans == 0 {
            return Err(Error::Parameter("num_spans must be at least 1".into()));
        }
        Ok(())
    }

    /// Amplifier gain compensating one span of loss.
    pub fn gain(&self) -> f64 {
        10f64.powf(0.1 * self.alpha_db_per_km * self.span_km)
    }

    /// ASE noise spectral density per amplifier, in J.
    pub fn sigma2(&self) -> f64 {
        self.n_sp * self.photon_energy * (self.gain() - 1.0)
    }

    pub fn beta2_s2_per_km(&self) -> f64 {
        self.beta2 * PS2_TO_S2
    }

    /// Reads the physical keys of a flat config. Missing keys fall back to
    /// [`PhysicalParams::table_one`] at 0 dBm and one span.
    pub fn from_config(cfg: &KeyValues) -> Result<Self> {
        let mut p = Self::table_one(1e-3, 1);
        if let Some(v) = cfg.get_f64("beta2_ps2_per_km")? {
            p.beta2 = v;
        }
        if let Some(v) = cfg.get_f64("gamma_per_W_km")? {
            p.gamma = v;
        }
        if let Some(v) = cfg.get_f64("bandwidth_GHz")? {
            p.bandwidth = v * 1e9;
        }
        if let Some(v) = cfg.get_f64("span_km")? {
            p.span_km = v;
        }
        if let Some(v) = cfg.get_usize("num_spans")? {
            p.num_spans = v;
        }
        if let Some(v) = cfg.get_f64("n_sp")? {
            p.n_sp = v;
        }
        if let Some(v) = cfg.get_f64("photon_energy_J")? {
            p.photon_energy = v;
        }
        if let Some(v) = cfg.get_f64("alpha_loss_dB_per_km")? {
            p.alpha_db_per_km = v;
        }
        if let Some(v) = cfg.get_f64("power_dBm")? {
            p.power = dbm_to_watts(v);
        }
        p.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(p)
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    1e-3 * 10f64.powf(dbm / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * (w / 1e-3).log10()
}

/// Dimensionless scales derived from [`PhysicalParams`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelScales {
    /// Time scale in s.
    pub t_s: f64,
    /// Power scale in W.
    pub r: f64,
    /// Length scale in km.
    pub ell: f64,
    pub eps2: f64,
    /// Span length in units of `ell`.
    pub l_s: f64,
    /// Signal duration in units of `t_s`.
    pub t_total: f64,
    /// Sample step `1/(B t_s)`.
    pub tau: f64,
    pub d: f64,
    /// Number of complex degrees of freedom `B T`.
    pub m: usize,
    pub bts: f64,
}

/// Scales for a signal of duration `duration` seconds.
pub fn derive_scales(params: &PhysicalParams, duration: f64) -> Result<ChannelScales> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(Error::Parameter(format!("duration must be positive, got {duration}")));
    }
    let m = (params.bandwidth * duration).round();
    if m < 2.0 {
        return Err(Error::Parameter(format!("B*T = {m} leaves fewer than two samples")));
    }
    derive_scales_for_symbols(params, m as usize)
}

/// Scales for a signal of `m` samples at the symbol rate.
pub fn derive_scales_for_symbols(params: &PhysicalParams, m: usize) -> Result<ChannelScales> {
    params.validate()?;
    if m < 2 {
        return Err(Error::Parameter(format!("need at least two samples, got {m}")));
    }
    let b2 = params.beta2_s2_per_km();
    let (g, p, b) = (params.gamma, params.power, params.bandwidth);
    let t_s = b2 * b / (g * p);
    let r = g * p * p / (b2 * b * b);
    let ell = 2.0 * t_s * t_s / b2;
    let bts = b * t_s;
    let tau = 1.0 / bts;
    Ok(ChannelScales {
        t_s,
        r,
        ell,
        eps2: params.sigma2() * b / p,
        l_s: params.span_km / ell,
        t_total: m as f64 * tau,
        tau,
        d: p / (r * b * t_s),
        m,
        bts,
    })
}

/// Recovers `(P, B, L)` from the scales and the fiber constants.
pub fn recover_physical(scales: &ChannelScales, beta2: f64, gamma: f64) -> (f64, f64, f64) {
    let b2 = beta2 * PS2_TO_S2;
    let bandwidth = 1.0 / (scales.tau * scales.t_s);
    let power = scales.d * scales.r * bandwidth * scales.t_s;
    let ell = 2.0 * scales.t_s * scales.t_s / b2;
    debug_assert!((ell * gamma * scales.r / 2.0 - 1.0).abs() < 1e-9);
    (power, bandwidth, scales.l_s * ell)
}

pub fn snr(params: &PhysicalParams) -> Result<f64> {
    params.validate()?;
    Ok(params.power / (params.num_spans as f64 * params.sigma2() * params.bandwidth))
}

pub fn snr_db(params: &PhysicalParams) -> Result<f64> {
    Ok(10.0 * snr(params)?.log10())
}

pub const DEFAULT_BTS_THRESHOLD: f64 = 10.0;

/// Whether the band-limited continuum approximation is trusted at these scales.
pub fn validity_flag(scales: &ChannelScales, threshold: f64) -> bool {
    scales.bts >= threshold
}

/// Flat `key = value` configuration text. `#` starts a comment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
            }
            if entries.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {k}", lineno + 1)));
            }
        }
        Ok(Self { entries })
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        self.get(key)
            .map(|v| v.parse::<f64>().map_err(|_| Error::Config(format!("{key}: not a number: {v}"))))
            .transpose()
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        self.get(key)
            .map(|v| v.parse::<usize>().map_err(|_| Error::Config(format!("{key}: not a count: {v}"))))
            .transpose()
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>> {
        self.get(key)
            .map(|v| v.parse::<u64>().map_err(|_| Error::Config(format!("{key}: not an integer: {v}"))))
            .transpose()
    }

    /// Comma or whitespace separated list of numbers.
    pub fn get_f64_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.get(key)
            .map(|v| {
                v.split(|c: char| c == ',' || c.is_whitespace())
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<f64>().map_err(|_| Error::Config(format!("{key}: not a number: {s}"))))
                    .collect()
            })
            .transpose()
    }

    pub fn get_usize_list(&self, key: &str) -> Result<Option<Vec<usize>>> {
        self.get(key)
            .map(|v| {
                v.split(|c: char| c == ',' || c.is_whitespace())
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<usize>().map_err(|_| Error::Config(format!("{key}: not a count: {s}"))))
                    .collect()
            })
            .transpose()
    }

    /// Canonical text form: sorted keys, one `key = value` per line.
    pub fn canonical(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
