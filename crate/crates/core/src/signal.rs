//! Sampled complex envelopes and white Gaussian sources.

use std::io::{Read, Write};

use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Envelope samples `u_p = u(t_start + p*tau)` at propagation distance `position_x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    samples: Vec<C64>,
    tau: f64,
    position_x: f64,
    t_start: f64,
}

impl Signal {
    /// Builds a signal on a window centred at `t = 0`.
    pub fn new(samples: Vec<C64>, tau: f64) -> Result<Self> {
        let t_start = -0.5 * samples.len() as f64 * tau;
        Self::with_origin(samples, tau, 0.0, t_start)
    }

    pub fn with_origin(samples: Vec<C64>, tau: f64, position_x: f64, t_start: f64) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::Precondition(format!("signal needs at least 2 samples, got {}", samples.len())));
        }
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::Precondition(format!("tau must be positive, got {tau}")));
        }
        if let Some(p) = samples.iter().position(|u| !(u.re.is_finite() && u.im.is_finite())) {
            return Err(Error::Precondition(format!("non-finite sample at index {p}")));
        }
        if !position_x.is_finite() || !t_start.is_finite() {
            return Err(Error::Precondition("non-finite signal metadata".into()));
        }
        Ok(Self { samples, tau, position_x, t_start })
    }

    /// Samples `f(t)` on `m` points of step `tau` centred at zero.
    pub fn from_fn(m: usize, tau: f64, f: impl Fn(f64) -> C64) -> Result<Self> {
        let t_start = -0.5 * m as f64 * tau;
        let samples = (0..m).map(|p| f(t_start + p as f64 * tau)).collect();
        Self::with_origin(samples, tau, 0.0, t_start)
    }

    /// `amp * sech(t)` sampled on `|t| <= half_width` with `m` points.
    pub fn sech(m: usize, half_width: f64, amp: f64) -> Result<Self> {
        Self::from_fn(m, 2.0 * half_width / m as f64, |t| C64::new(amp / t.cosh(), 0.0))
    }

    pub fn zeros(m: usize, tau: f64) -> Result<Self> {
        Self::new(vec![C64::new(0.0, 0.0); m], tau)
    }

    pub fn samples(&self) -> &[C64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn position_x(&self) -> f64 {
        self.position_x
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn time(&self, p: usize) -> f64 {
        self.t_start + p as f64 * self.tau
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 * self.tau
    }

    /// Same grid and metadata with new samples.
    pub fn with_samples(&self, samples: Vec<C64>) -> Result<Self> {
        if samples.len() != self.samples.len() {
            return Err(Error::Structural(format!(
                "sample count {} does not match {}",
                samples.len(),
                self.samples.len()
            )));
        }
        Self::with_origin(samples, self.tau, self.position_x, self.t_start)
    }

    pub fn at_position(mut self, x: f64) -> Self {
        self.position_x = x;
        self
    }

    /// Cyclic rotation so that sample `shift` becomes sample 0 (time origin kept).
    pub fn rotated(&self, shift: usize) -> Self {
        let mut samples = self.samples.clone();
        samples.rotate_left(shift % self.samples.len());
        Self { samples, ..self.clone() }
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# signal v1")?;
        writeln!(w, "M {}", self.samples.len())?;
        writeln!(w, "tau {:.17e}", self.tau)?;
        writeln!(w, "position_x {:.17e}", self.position_x)?;
        writeln!(w, "t_start {:.17e}", self.t_start)?;
        for (p, u) in self.samples.iter().enumerate() {
            writeln!(w, "{p} {:.17e} {:.17e}", u.re, u.im)?;
        }
        Ok(())
    }

    pub fn read_text<R: Read>(mut r: R) -> Result<Self> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let bad = |what: &str| Error::Config(format!("signal text: {what}"));
        if lines.next().map(str::trim) != Some("# signal v1") {
            return Err(bad("missing version line"));
        }
        let mut header = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad("truncated header"))?;
            let (k, v) = line.split_once(' ').ok_or_else(|| bad("malformed header"))?;
            if k != key {
                return Err(bad(&format!("expected {key}, found {k}")));
            }
            Ok(v.trim().to_string())
        };
        let m: usize = header("M")?.parse().map_err(|_| bad("M"))?;
        let tau: f64 = header("tau")?.parse().map_err(|_| bad("tau"))?;
        let x: f64 = header("position_x")?.parse().map_err(|_| bad("position_x"))?;
        let t0: f64 = header("t_start")?.parse().map_err(|_| bad("t_start"))?;
        let mut samples = vec![C64::new(0.0, 0.0); m];
        let mut seen = 0;
        for line in lines {
            let mut it = line.split_whitespace();
            let p: usize = it.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("index"))?;
            let re: f64 = it.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("re"))?;
            let im: f64 = it.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("im"))?;
            if p >= m {
                return Err(bad("index out of range"));
            }
            samples[p] = C64::new(re, im);
            seen += 1;
        }
        if seen != m {
            return Err(bad(&format!("expected {m} rows, found {seen}")));
        }
        Self::with_origin(samples, tau, x, t0)
    }

    /// Binary layout, little-endian: magic `NLSG`, u32 version 1, u64 M,
    /// f64 tau, f64 position_x, f64 t_start, then M records of
    /// (u64 index, f64 re, f64 im).
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(b"NLSG")?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(self.samples.len() as u64).to_le_bytes())?;
        for v in [self.tau, self.position_x, self.t_start] {
            w.write_all(&v.to_le_bytes())?;
        }
        for (p, u) in self.samples.iter().enumerate() {
            w.write_all(&(p as u64).to_le_bytes())?;
            w.write_all(&u.re.to_le_bytes())?;
            w.write_all(&u.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"NLSG" {
            return Err(Error::Config("signal binary: bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        if u32::from_le_bytes(b4) != 1 {
            return Err(Error::Config("signal binary: unsupported version".into()));
        }
        let mut b8 = [0u8; 8];
        let mut next_u64 = |r: &mut R| -> Result<[u8; 8]> {
            r.read_exact(&mut b8)?;
            Ok(b8)
        };
        let m = u64::from_le_bytes(next_u64(&mut r)?) as usize;
        let tau = f64::from_le_bytes(next_u64(&mut r)?);
        let x = f64::from_le_bytes(next_u64(&mut r)?);
        let t0 = f64::from_le_bytes(next_u64(&mut r)?);
        let mut samples = vec![C64::new(0.0, 0.0); m];
        for _ in 0..m {
            let p = u64::from_le_bytes(next_u64(&mut r)?) as usize;
            let re = f64::from_le_bytes(next_u64(&mut r)?);
            let im = f64::from_le_bytes(next_u64(&mut r)?);
            if p >= m {
                return Err(Error::Config("signal binary: index out of range".into()));
            }
            samples[p] = C64::new(re, im);
        }
        Self::with_origin(samples, tau, x, t0)
    }
}

/// Amplifier noise added at amplifier `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub samples: Vec<C64>,
    pub amplifier: usize,
    pub stream: u64,
}

/// Stream id of the input signal; amplifier `k` uses stream `k`.
pub const INPUT_STREAM: u64 = 0;

/// Deterministic generator for `(seed, stream)`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// I.i.d. circular complex Gaussian samples with `E|z|^2 = variance`.
pub fn complex_gaussian(m: usize, variance: f64, rng: &mut ChaCha20Rng) -> Vec<C64> {
    let s = (0.5 * variance).sqrt();
    (0..m)
        .map(|_| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            C64::new(s * re, s * im)
        })
        .collect()
}

/// White input with per-sample variance `d / tau`, so that `E[energy] = m d`.
pub fn generate_white_gaussian(m: usize, tau: f64, d: f64, seed: u64) -> Result<Signal> {
    if !(d.is_finite() && d >= 0.0) {
        return Err(Error::Precondition(format!("variance must be non-negative, got {d}")));
    }
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::Precondition(format!("tau must be positive, got {tau}")));
    }
    let mut rng = rng_for(seed, INPUT_STREAM);
    Signal::new(complex_gaussian(m, d / tau, &mut rng), tau)
}

/// Noise of amplifier `k` (k >= 1) with per-sample variance `eps2 / tau`.
pub fn noise_draw(m: usize, tau: f64, eps2: f64, k: usize, seed: u64) -> NoiseDraw {
    let stream = k as u64;
    let mut rng = rng_for(seed, stream);
    NoiseDraw { samples: complex_gaussian(m, eps2 / tau, &mut rng), amplifier: k, stream }
}

/// `sum |u_p|^2 tau`.
pub fn energy(s: &Signal) -> f64 {
    s.samples.iter().map(|u| u.norm_sqr()).sum::<f64>() * s.tau
}

/// Conserved norm of the Ablowitz-Ladik lattice, `sum ln(1 + tau^2 |u_p|^2) / tau`.
/// Tends to [`energy`] as `tau -> 0`.
pub fn al_norm(s: &Signal) -> f64 {
    let t2 = s.tau * s.tau;
    s.samples.iter().map(|u| (t2 * u.norm_sqr()).ln_1p()).sum::<f64>() / s.tau
}

/// Band-limited delta, `Q sinc(Q t)`.
pub fn sinc_kernel(q: f64, t: f64) -> f64 {
    let x = q * t;
    if x == 0.0 {
        q
    } else {
        q * x.sin() / x
    }
}

/// `(1/M) sum_p u_{p+lag} conj(u_p)` with periodic wraparound.
pub fn empirical_correlation(s: &Signal, lag: isize) -> Result<C64> {
    let m = s.samples.len() as isize;
    if lag.abs() >= m {
        return Err(Error::Precondition(format!("|lag| = {} must be below M = {m}", lag.abs())));
    }
    let mut acc = C64::new(0.0, 0.0);
    for p in 0..m {
        let q = (p + lag).rem_euclid(m) as usize;
        acc += s.samples[q] * s.samples[p as usize].conj();
    }
    Ok(acc / m as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sinc_values() {
        assert_eq!(sinc_kernel(3.0, 0.0), 3.0);
        assert!(sinc_kernel(2.0, std::f64::consts::PI / 2.0).abs() < 1e-15);
        assert!((sinc_kernel(1.0, 1.0) - 0.841_470_984_807_896_5).abs() < 1e-15);
    }

    #[test]
    fn zero_variance_gives_zero_signal() {
        let s = generate_white_gaussian(16, 0.1, 0.0, 3).unwrap();
        assert!(s.samples().iter().all(|u| u.norm() == 0.0));
        assert_eq!(energy(&s), 0.0);
    }

    #[test]
    fn streams_are_independent_of_order() {
        let a = noise_draw(8, 0.1, 1.0, 2, 11);
        let _ = noise_draw(8, 0.1, 1.0, 1, 11);
        let b = noise_draw(8, 0.1, 1.0, 2, 11);
        assert_eq!(a, b);
        assert_ne!(a.samples, noise_draw(8, 0.1, 1.0, 3, 11).samples);
    }

    #[test]
    fn rejects_bad_signals() {
        assert!(Signal::new(vec![C64::new(1.0, 0.0)], 0.1).is_err());
        assert!(Signal::new(vec![C64::new(f64::NAN, 0.0); 4], 0.1).is_err());
        assert!(Signal::new(vec![C64::new(0.0, 0.0); 4], 0.0).is_err());
    }
}
