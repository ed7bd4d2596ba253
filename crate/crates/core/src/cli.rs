//! Batch experiment runner.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::covariance::{
    assemble_mk, assemble_mk_blockwise, assemble_s, blocks_at_amplifier, gordon_haus_terms, log2_det, zeta_k,
    zeta_k_direct, NoiseCovariance, Variant,
};
use crate::error::{Error, Result};
use crate::propagation::{propagate_span, propagate_span_with_fault, spectral_evolution_check};
use crate::se_analysis::{
    average_over_seeds, kappa_closed_form, se_sweep, shannon_upper_bound, sig9, spectral_efficiency, write_csv,
    PointFailure, SweepConfig,
};
use crate::signal::{generate_white_gaussian, Signal};
use crate::units::{derive_scales_for_symbols, KeyValues, PhysicalParams};
use crate::zs_scattering::{eigenvalues, ring_localization_length, scatter, ScatterOptions};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_PARTIAL: i32 = 3;

/// Everything a run needs, parsed from a flat key-value file.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub params: PhysicalParams,
    pub powers_dbm: Vec<f64>,
    pub m: usize,
    pub seeds: Vec<u64>,
    pub steps_per_span: usize,
    pub variants: Vec<Variant>,
    pub out_dir: PathBuf,
    pub emit_snapshots: bool,
    pub spans: Vec<usize>,
    pub input_power: f64,
    pub bts_threshold: f64,
    pub fig1_tau: f64,
    pub fig1_seeds: usize,
    pub fig1_eta_min: f64,
    pub fig1_eta_max: f64,
    pub fig1_eta_bin: f64,
    /// Canonical text of the settings other than `out_dir`, the input of the config hash.
    pub canonical: String,
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: not a boolean: {v}"))),
    }
}

const KNOWN_KEYS: &[&str] = &[
    "beta2_ps2_per_km",
    "gamma_per_W_km",
    "bandwidth_GHz",
    "span_km",
    "num_spans",
    "n_sp",
    "photon_energy_J",
    "alpha_loss_dB_per_km",
    "power_dBm",
    "power_grid_dBm",
    "power_dBm_start",
    "power_dBm_stop",
    "power_dBm_step",
    "M",
    "duration_symbols",
    "bts_threshold",
    "seeds",
    "steps_per_span",
    "variants",
    "out_dir",
    "emit_snapshots",
    "spans",
    "input_power",
    "fig1_tau",
    "fig1_seeds",
    "fig1_eta_min",
    "fig1_eta_max",
    "fig1_eta_bin",
];

impl ExperimentConfig {
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        if let Some(k) = kv.keys().find(|k| !KNOWN_KEYS.contains(k)) {
            return Err(Error::Config(format!("unknown key {k}")));
        }
        let params = PhysicalParams::from_config(kv)?;
        let powers_dbm = if let Some(list) = kv.get_f64_list("power_grid_dBm")? {
            list
        } else {
            let start = kv.get_f64("power_dBm_start")?.unwrap_or(-6.0);
            let stop = kv.get_f64("power_dBm_stop")?.unwrap_or(15.0);
            let step = kv.get_f64("power_dBm_step")?.unwrap_or(1.0);
            if !(step > 0.0) {
                return Err(Error::Config(format!("power_dBm_step must be positive, got {step}")));
            }
            let n = ((stop - start) / step + 1e-9).floor();
            if n < 0.0 {
                Vec::new()
            } else {
                (0..=n as usize).map(|i| start + step * i as f64).collect()
            }
        };
        let seeds: Vec<u64> = match kv.get("seeds") {
            Some(v) => v
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<u64>().map_err(|_| Error::Config(format!("seeds: not an integer: {s}"))))
                .collect::<Result<_>>()?,
            None => vec![0],
        };
        let variants: Vec<Variant> = match kv.get("variants") {
            Some(v) => v
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(|s| Variant::parse(s).ok_or_else(|| Error::Config(format!("variants: unknown variant {s}"))))
                .collect::<Result<_>>()?,
            None => vec![Variant::Full, Variant::NoGh, Variant::NoProp],
        };
        let m = match (kv.get_usize("M")?, kv.get_usize("duration_symbols")?) {
            (Some(a), Some(b)) if a != b => return Err(Error::Config(format!("M = {a} and duration_symbols = {b} disagree"))),
            (a, b) => a.or(b).unwrap_or(64),
        };
        let cfg = Self {
            params,
            powers_dbm,
            m,
            seeds,
            steps_per_span: kv.get_usize("steps_per_span")?.unwrap_or(crate::propagation::DEFAULT_STEPS_PER_SPAN),
            variants,
            out_dir: PathBuf::from(kv.get("out_dir").unwrap_or("out")),
            emit_snapshots: kv.get("emit_snapshots").map(|v| parse_bool("emit_snapshots", v)).transpose()?.unwrap_or(false),
            spans: kv.get_usize_list("spans")?.unwrap_or_else(|| vec![5, 10, 20]),
            input_power: kv.get_f64("input_power")?.unwrap_or(1.0),
            bts_threshold: kv.get_f64("bts_threshold")?.unwrap_or(crate::units::DEFAULT_BTS_THRESHOLD),
            fig1_tau: kv.get_f64("fig1_tau")?.unwrap_or(0.25),
            fig1_seeds: kv.get_usize("fig1_seeds")?.unwrap_or(200),
            fig1_eta_min: kv.get_f64("fig1_eta_min")?.unwrap_or(0.25),
            fig1_eta_max: kv.get_f64("fig1_eta_max")?.unwrap_or(3.0),
            fig1_eta_bin: kv.get_f64("fig1_eta_bin")?.unwrap_or(0.25),
            canonical: kv.canonical().lines().filter(|l| !l.starts_with("out_dir ")).map(|l| format!("{l}\n")).collect(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_key_values(&KeyValues::parse(text)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.powers_dbm.is_empty() {
            return Err(Error::Config("power grid is empty".into()));
        }
        if self.powers_dbm.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("power grid must be increasing".into()));
        }
        if self.m < 8 {
            return Err(Error::Config(format!("M must be at least 8, got {}", self.m)));
        }
        if self.variants.is_empty() {
            return Err(Error::Config("no variant enabled".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("no seeds".into()));
        }
        if self.spans.is_empty() || self.spans.contains(&0) {
            return Err(Error::Config("spans must be a nonempty list of positive counts".into()));
        }
        if self.steps_per_span == 0 {
            return Err(Error::Config("steps_per_span must be positive".into()));
        }
        if !(self.input_power > 0.0) {
            return Err(Error::Config("input_power must be positive".into()));
        }
        if !(self.fig1_tau > 0.0 && self.fig1_eta_bin > 0.0 && self.fig1_eta_max > self.fig1_eta_min) {
            return Err(Error::Config("invalid fig1 settings".into()));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn header(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        format!("# nlsecap {VERSION}\n# config_sha256 {}\n# seed {}\n", self.hash(), seeds.join(","))
    }

    pub fn sweep_config(&self, num_spans: usize) -> SweepConfig {
        let mut params = self.params;
        params.num_spans = num_spans;
        SweepConfig {
            params,
            powers_dbm: self.powers_dbm.clone(),
            m: self.m,
            seeds: self.seeds.clone(),
            steps_per_span: self.steps_per_span,
            variants: self.variants.clone(),
            input_power: self.input_power,
            bts_threshold: self.bts_threshold,
        }
    }
}

/// One bin of the localization-length comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct Fig1Bin {
    pub eta: f64,
    pub kappa_numeric: f64,
    pub kappa_closed_form: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fig1Report {
    pub bins: Vec<Fig1Bin>,
    pub dropped_bins: usize,
    pub total_modes: usize,
}

impl Fig1Report {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "eta,kappa_numeric,kappa_closed_form,count")?;
        for b in &self.bins {
            writeln!(w, "{},{},{},{}", sig9(b.eta), sig9(b.kappa_numeric), sig9(b.kappa_closed_form), b.count)?;
        }
        Ok(())
    }
}

/// Minimum number of modes for a bin to be reported.
pub const MIN_BIN_COUNT: usize = 5;

/// Gaussian inputs on a ring, soliton modes binned by `eta`, average numeric
/// inverse localization length per bin next to the closed form.
pub fn run_fig1(cfg: &ExperimentConfig) -> Result<Fig1Report> {
    let d = cfg.input_power;
    let tau = cfg.fig1_tau;
    let opts = ScatterOptions::default();
    let base = cfg.seeds.first().copied().unwrap_or(0);
    let per_seed: Vec<Vec<(f64, f64)>> = (0..cfg.fig1_seeds as u64)
        .into_par_iter()
        .map(|i| {
            let s = generate_white_gaussian(cfg.m, tau, d, base.wrapping_add(i))?;
            let st = scatter(&s, &opts)?;
            Ok(st
                .solitons
                .iter()
                .filter_map(|m| ring_localization_length(m, tau).map(|k| (m.eta(), k)))
                .collect())
        })
        .collect::<Result<_>>()?;
    let nbins = ((cfg.fig1_eta_max - cfg.fig1_eta_min) / cfg.fig1_eta_bin).round() as usize;
    let mut sums = vec![(0.0, 0.0, 0usize); nbins];
    let mut total = 0;
    for (eta, kappa) in per_seed.into_iter().flatten() {
        total += 1;
        if eta < cfg.fig1_eta_min || eta >= cfg.fig1_eta_max {
            continue;
        }
        let b = (((eta - cfg.fig1_eta_min) / cfg.fig1_eta_bin) as usize).min(nbins - 1);
        sums[b].0 += eta;
        sums[b].1 += kappa;
        sums[b].2 += 1;
    }
    let mut bins = Vec::new();
    let mut dropped = 0;
    for (se, sk, n) in sums {
        if n < MIN_BIN_COUNT {
            dropped += 1;
            continue;
        }
        let eta = se / n as f64;
        bins.push(Fig1Bin { eta, kappa_numeric: sk / n as f64, kappa_closed_form: kappa_closed_form(eta, d), count: n });
    }
    Ok(Fig1Report { bins, dropped_bins: dropped, total_modes: total })
}

/// Sweep outcome for one span count.
#[derive(Debug, Clone)]
pub struct Fig2Run {
    pub num_spans: usize,
    pub points: Vec<crate::se_analysis::SEPoint>,
    pub failures: Vec<PointFailure>,
}

impl Fig2Run {
    pub fn failed_fraction(&self) -> f64 {
        let total = self.points.len() + self.failures.len();
        if total == 0 {
            0.0
        } else {
            self.failures.len() as f64 / total as f64
        }
    }
}

pub fn run_fig2(cfg: &ExperimentConfig) -> Result<Vec<Fig2Run>> {
    cfg.spans
        .iter()
        .map(|&k| {
            let (points, failures) = se_sweep(&cfg.sweep_config(k))?;
            Ok(Fig2Run { num_spans: k, points, failures })
        })
        .collect()
}

fn write_fig2(cfg: &ExperimentConfig, runs: &[Fig2Run]) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir)?;
    for run in runs {
        let mut buf = cfg.header().into_bytes();
        let pts = if cfg.seeds.len() > 1 { average_over_seeds(&run.points) } else { run.points.clone() };
        write_csv(&mut buf, &pts)?;
        fs::write(cfg.out_dir.join(format!("fig2_K{}.csv", run.num_spans)), buf)?;
        let mut diag = cfg.header();
        diag.push_str(&format!("# failed {} of {}\n", run.failures.len(), run.failures.len() + run.points.len()));
        for f in &run.failures {
            diag.push_str(&format!("power_dBm={} seed={} error={}\n", sig9(f.power_dbm), f.seed, f.message));
        }
        fs::write(cfg.out_dir.join(format!("fig2_K{}.diagnostics.txt", run.num_spans)), diag)?;
        if cfg.emit_snapshots && cfg.seeds.len() > 1 {
            let mut raw = cfg.header().into_bytes();
            write_csv(&mut raw, &run.points)?;
            fs::write(cfg.out_dir.join(format!("fig2_K{}_per_seed.csv", run.num_spans)), raw)?;
        }
    }
    Ok(())
}

/// Result of one self-test suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn suite(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> SuiteResult {
    match f() {
        Ok((passed, detail)) => SuiteResult { name, passed, detail },
        Err(e) => SuiteResult { name, passed: false, detail: e.to_string() },
    }
}

/// Small-scale invariant checks of every module. `fault` mis-weights the integrator.
pub fn run_selftest(fault: f64) -> Vec<SuiteResult> {
    let opts = ScatterOptions::default();
    vec![
        suite("units", || {
            let s = derive_scales_for_symbols(&PhysicalParams::table_one(1e-3, 1), 64)?;
            let ok = (s.bts - 170.63).abs() < 0.01 && (s.eps2 / 1.3068e-3 - 1.0).abs() < 1e-3;
            Ok((ok, format!("Bt_s = {:.3}, eps2 = {:.4e}", s.bts, s.eps2)))
        }),
        suite("scattering", || {
            let s = Signal::sech(1024, 20.0, 2.5)?;
            let mut ev: Vec<f64> = eigenvalues(&s, &opts)?.iter().map(|l| l.im).collect();
            ev.sort_by(f64::total_cmp);
            let ok = ev.len() == 2 && (ev[0] - 1.0).abs() < 5e-3 && (ev[1] - 2.0).abs() < 5e-3;
            Ok((ok, format!("eta = {ev:?}")))
        }),
        suite("canonical-determinant", || {
            let s = generate_white_gaussian(32, 0.1, 1.0, 1)?;
            let st = scatter(&s, &opts)?;
            let b = blocks_at_amplifier(&s, &st)?;
            let ld = log2_det(&b.matrix)?;
            Ok((ld.abs() <= 1e-3 * b.dim() as f64, format!("log2 det = {ld:.3e}")))
        }),
        suite("eigenvalue-drift", || {
            let tau = 0.1;
            let s = generate_white_gaussian(32, tau, 1.0, 2)?;
            let before = eigenvalues(&s, &opts)?;
            let length = 10.8 * tau * tau;
            let out = propagate_span_with_fault(&s, length, length / crate::propagation::DEFAULT_STEPS_PER_SPAN as f64, fault)?;
            let after = eigenvalues(&out, &opts)?;
            let max_eta = before.iter().map(|l| l.im).fold(0.0, f64::max);
            let drift = crate::propagation::eigenvalue_drift(&before, &after);
            Ok((drift <= 1e-4 * max_eta, format!("drift = {drift:.3e}")))
        }),
        suite("spectral-evolution", || {
            let s = Signal::sech(256, 12.0, 2.5)?;
            let a = scatter(&s, &opts)?;
            let out = propagate_span(&s, 0.1, 0.1 / 128.0)?;
            let b = scatter(&out, &opts)?;
            let r = spectral_evolution_check(&a, &b, 0.1, 1e-3)?;
            Ok((r.max_residual() < 1e-3, format!("max residual = {:.3e}", r.max_residual())))
        }),
        suite("gordon-haus", || {
            let s = generate_white_gaussian(32, 0.1, 1.0, 3)?;
            let st = scatter(&s, &opts)?;
            let b = blocks_at_amplifier(&s, &st)?;
            let gh = gordon_haus_terms(&st, 1, 4, 0.05)?;
            let m1 = assemble_mk(&b, &gh)?;
            let m2 = assemble_mk_blockwise(&b, &gh)?;
            let diff = (&m1 - &m2).norm() / m1.norm();
            let last = assemble_mk(&b, &gordon_haus_terms(&st, 1, 1, 0.05)?)?;
            let dd = (log2_det(&last)? - log2_det(&b.matrix)?).abs();
            Ok((diff < 1e-10 && dd < 1e-8, format!("block/congruence = {diff:.2e}, K = 1 log det change = {dd:.2e}")))
        }),
        suite("se-calibration", || {
            let p = PhysicalParams::table_one(1e-3, 10);
            let eps2 = derive_scales_for_symbols(&p, 64)?.eps2;
            let ident = vec![crate::covariance::identity(64); 10];
            let s = assemble_s(&ident, eps2)?;
            let se = spectral_efficiency(crate::se_analysis::gaussian_input_entropy(1.0), &s, s.dof)?;
            let sh = shannon_upper_bound(&p);
            let zk = (zeta_k(10, 0.3) - zeta_k_direct(10, 0.3)).abs();
            Ok(((se - sh).abs() < 1e-9 && zk < 1e-12, format!("SE = {se:.9}, log2 SNR = {sh:.9}")))
        }),
        suite("localization-length", || {
            let mono = (0..300).all(|i| kappa_closed_form(0.01 * (i + 1) as f64, 1.0) > kappa_closed_form(0.01 * i as f64, 1.0));
            Ok((mono, "closed form increasing".into()))
        }),
    ]
}

#[derive(Parser, Debug)]
#[command(name = "nlsecap", version, about = "Spectral efficiency of the noisy nonlinear Schroedinger channel via the nonlinear Fourier transform")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// Flat key = value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Covariance variants to evaluate (repeatable).
    #[arg(long, value_parser = ["full", "nogh", "noprop"])]
    pub variant: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Small-scale invariant checks of all modules.
    Selftest {
        #[command(flatten)]
        common: CommonArgs,
        /// Mis-weight the integrator by this relative amount.
        #[arg(long, default_value_t = 0.0)]
        fault_injection: f64,
    },
    /// Inverse localization length against the closed form.
    Fig1 {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Spectral-efficiency sweeps, one CSV per span count.
    Fig2 {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Scattering data of a signal file.
    Scatter {
        #[command(flatten)]
        common: CommonArgs,
        /// Signal in text or binary form.
        #[arg(long)]
        input: PathBuf,
        /// Include eigenfunctions in the output.
        #[arg(long)]
        eigenfunctions: bool,
    },
    /// Noise covariance of a signal file over the configured spans.
    Covariance {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        input: PathBuf,
    },
}

fn load_config(common: &CommonArgs) -> Result<ExperimentConfig> {
    let mut kv = match &common.config {
        Some(p) => KeyValues::parse(
            &fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?,
        )?,
        None => KeyValues::default(),
    };
    if let Some(s) = common.seed {
        kv.set("seeds", s);
    }
    if !common.variant.is_empty() {
        kv.set("variants", common.variant.join(","));
    }
    if let Some(o) = &common.out {
        kv.set("out_dir", o.display());
    }
    ExperimentConfig::from_key_values(&kv)
}

fn read_signal(path: &Path) -> Result<Signal> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(b"NLSG") {
        Signal::read_binary(&bytes[..])
    } else {
        Signal::read_text(&bytes[..])
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Parameter(_) => EXIT_CONFIG,
        _ => EXIT_NUMERICAL,
    }
}

fn setup_workers(common: &CommonArgs) {
    if let Some(n) = common.workers {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn execute(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Selftest { common, fault_injection } => {
            setup_workers(&common);
            let results = run_selftest(fault_injection);
            let mut ok = true;
            for r in &results {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
                ok &= r.passed;
            }
            if !ok {
                let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
                eprintln!("failed suites: {}", failed.join(", "));
            }
            Ok(if ok { EXIT_OK } else { EXIT_NUMERICAL })
        }
        Command::Fig1 { common } => {
            setup_workers(&common);
            let cfg = load_config(&common)?;
            let rep = run_fig1(&cfg)?;
            fs::create_dir_all(&cfg.out_dir)?;
            let mut buf = cfg.header().into_bytes();
            rep.write_csv(&mut buf)?;
            fs::write(cfg.out_dir.join("fig1.csv"), buf)?;
            if rep.dropped_bins > 0 {
                eprintln!("warning: {} bins with fewer than {MIN_BIN_COUNT} modes dropped", rep.dropped_bins);
            }
            Ok(EXIT_OK)
        }
        Command::Fig2 { common } => {
            setup_workers(&common);
            let cfg = load_config(&common)?;
            let runs = run_fig2(&cfg)?;
            write_fig2(&cfg, &runs)?;
            let failed = runs.iter().any(|r| !r.failures.is_empty());
            Ok(if failed { EXIT_PARTIAL } else { EXIT_OK })
        }
        Command::Scatter { common, input, eigenfunctions } => {
            setup_workers(&common);
            let cfg = load_config(&common)?;
            let s = read_signal(&input)?;
            let st = scatter(&s, &ScatterOptions::default())?;
            fs::create_dir_all(&cfg.out_dir)?;
            let mut buf = cfg.header().into_bytes();
            st.write_text(&mut buf, eigenfunctions)?;
            fs::write(cfg.out_dir.join("scatter.txt"), buf)?;
            Ok(EXIT_OK)
        }
        Command::Covariance { common, input } => {
            setup_workers(&common);
            let cfg = load_config(&common)?;
            let s = read_signal(&input)?;
            fs::create_dir_all(&cfg.out_dir)?;
            for v in &cfg.variants {
                let cov = signal_covariance(&s, &cfg.params, cfg.steps_per_span, *v)?;
                let mut buf = cfg.header().into_bytes();
                cov.write_text(&mut buf)?;
                fs::write(cfg.out_dir.join(format!("covariance_{}.txt", v.name())), buf)?;
            }
            Ok(EXIT_OK)
        }
    }
}

/// Covariance of a given signal over the spans of `params`, using its own step `tau`
/// and the span length and noise level of the configured power.
pub fn signal_covariance(s: &Signal, params: &PhysicalParams, steps_per_span: usize, variant: Variant) -> Result<NoiseCovariance> {
    let scales = derive_scales_for_symbols(params, s.len())?;
    let k = params.num_spans;
    let opts = ScatterOptions::default();
    let st0 = scatter(s, &opts)?;
    if variant == Variant::NoProp {
        let b0 = blocks_at_amplifier(s, &st0)?;
        return crate::covariance::assemble_s_noprop(&b0, k, scales.l_s, scales.eps2);
    }
    let mut cur = s.clone();
    let mut blocks = Vec::with_capacity(k);
    for _ in 0..k {
        cur = propagate_span(&cur, scales.l_s, scales.l_s / steps_per_span as f64)?;
        let st = crate::covariance::track_modes(&st0, &scatter(&cur, &opts)?)?;
        blocks.push(blocks_at_amplifier(&cur, &st)?);
    }
    match variant {
        Variant::NoGh => crate::covariance::assemble_s_nogh(&blocks, scales.eps2),
        _ => {
            let mk = blocks
                .iter()
                .enumerate()
                .map(|(i, b)| assemble_mk(b, &gordon_haus_terms(&st0, i + 1, k, scales.l_s)?))
                .collect::<Result<Vec<_>>>()?;
            assemble_s(&mk, scales.eps2)
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

