//! Seeded synthetic guided-wave benchmark.
//!
//! Each record is a Hann-windowed tone burst arriving after a state-dependent
//! delay, a secondary echo whose strength grows with `k1`, and a decaying
//! frequency-gliding coda stretched by `k2`. Noise is white Gaussian, scaled
//! to a target SNR, and drawn from a stream keyed by `(state, path, trial)`.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{bail, Result};
use crate::rng::SplitMix64;
use crate::signal::{DatasetGrid, SignalRecord, StateVector};

/// Sensitivities of the response to the normalized state `u = (u1, u2)`.
/// Delays are measured in carrier periods.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResponseCoefficients {
    /// Relative amplitude loss across the `k1` range.
    pub amp_k1: f64,
    /// Relative amplitude loss across the `k2` range.
    pub amp_k2: f64,
    /// First-arrival delay added across the `k2` range.
    pub delay_k2: f64,
    /// Extra delay proportional to `u1 * u2`.
    pub delay_cross: f64,
    pub echo_base: f64,
    /// Echo strength added across the `k1` range.
    pub echo_k1: f64,
    /// Echo lag added across the `k1` range.
    pub echo_shift_k1: f64,
    /// Coda amplitude relative to the first arrival.
    pub tail: f64,
    /// Fractional frequency glide of the coda at `u2 = 1`.
    pub stretch_k2: f64,
}

impl Default for ResponseCoefficients {
    fn default() -> Self {
        Self {
            amp_k1: 0.3,
            amp_k2: 0.15,
            delay_k2: 0.5,
            delay_cross: 0.1,
            echo_base: 0.05,
            echo_k1: 0.35,
            echo_shift_k1: 2.0,
            tail: 0.25,
            stretch_k2: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub grid1: Vec<f64>,
    pub grid2: Vec<f64>,
    /// Trials per state, row-major over `grid1 x grid2`.
    pub trials: Vec<u32>,
    pub samples: usize,
    /// Hz.
    pub sample_rate: f64,
    /// Hz.
    pub carrier: f64,
    pub n_peaks: u32,
    /// Target SNR in dB; `None` is noise-free.
    pub snr_db: Option<f64>,
    pub coefficients: ResponseCoefficients,
    pub seed: u64,
    pub paths: u32,
}

fn linspace(lo: f64, step: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + step * i as f64).collect()
}

impl SynthConfig {
    /// 5 x 5 damage/load grid, 20 trials (2 at the largest load), 9 paths,
    /// 1024 samples over the same 1/3 ms window as the full preset.
    pub fn case1() -> Self {
        let grid1 = linspace(0.0, 1.0, 5);
        let grid2 = linspace(0.0, 5.0, 5);
        let trials = (0..25).map(|s| if s % 5 == 4 { 2 } else { 20 }).collect();
        Self {
            grid1,
            grid2,
            trials,
            samples: 1024,
            sample_rate: 3.072e6,
            carrier: 250e3,
            n_peaks: 5,
            snr_db: None,
            coefficients: ResponseCoefficients::default(),
            seed: 0,
            paths: 9,
        }
    }

    /// [`Self::case1`] at 8000 samples and 24 MHz.
    pub fn case1_full() -> Self {
        Self {
            samples: 8000,
            sample_rate: 24e6,
            ..Self::case1()
        }
    }

    /// 9 angles of attack x 7 airspeeds, 10 trials, 3 paths, 20 dB SNR.
    pub fn case2() -> Self {
        Self {
            grid1: vec![1.0, 3.0, 5.0, 7.0, 9.0, 11.0, 13.0, 14.0, 15.0],
            grid2: linspace(8.0, 2.0, 7),
            trials: vec![10; 63],
            paths: 3,
            snr_db: Some(20.0),
            ..Self::case1()
        }
    }

    /// Looks up `case1`, `case1-full` or `case2`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "case1" => Ok(Self::case1()),
            "case1-full" => Ok(Self::case1_full()),
            "case2" => Ok(Self::case2()),
            _ => bail!(Config, "unknown preset '{name}'"),
        }
    }

    /// Sets every state's trial count to `n`.
    pub fn with_uniform_trials(mut self, n: u32) -> Self {
        self.trials = vec![n; self.grid1.len() * self.grid2.len()];
        self
    }

    fn period(&self) -> f64 {
        1.0 / self.carrier
    }

    fn window(&self) -> f64 {
        self.samples as f64 / self.sample_rate
    }

    /// First-arrival delay of `path` at `u2 = 0`.
    fn base_delay(&self, path: u32) -> f64 {
        self.period() * (7.0 + 2.0 * path as f64)
    }

    fn path_gain(path: u32) -> f64 {
        1.0 / (1.0 + 0.15 * path as f64)
    }

    pub fn validate(&self) -> Result<()> {
        let sorted = |g: &[f64]| {
            !g.is_empty() && g.iter().all(|x| x.is_finite()) && g.windows(2).all(|w| w[0] < w[1])
        };
        if !sorted(&self.grid1) || !sorted(&self.grid2) {
            bail!(
                Config,
                "state grids must be non-empty, finite, sorted and distinct"
            );
        }
        if self.trials.len() != self.grid1.len() * self.grid2.len() {
            bail!(
                Dimension,
                "trial table has {} entries for a {}x{} grid",
                self.trials.len(),
                self.grid1.len(),
                self.grid2.len()
            );
        }
        if self.samples < 2 {
            bail!(Config, "records need at least 2 samples");
        }
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            bail!(Config, "sample rate must be positive");
        }
        if !(self.carrier > 0.0 && self.carrier < 0.5 * self.sample_rate) {
            bail!(
                Config,
                "carrier {} Hz must lie below the Nyquist rate {} Hz",
                self.carrier,
                0.5 * self.sample_rate
            );
        }
        if self.n_peaks == 0 {
            bail!(Config, "tone burst needs at least one cycle");
        }
        if self.paths == 0 {
            bail!(Config, "at least one path is required");
        }
        if let Some(snr) = self.snr_db {
            if !snr.is_finite() {
                bail!(Config, "SNR must be finite or absent");
            }
        }
        let c = &self.coefficients;
        let burst = self.n_peaks as f64 * self.period();
        let last = self.paths - 1;
        let tau = self.base_delay(last) + (c.delay_k2 + c.delay_cross) * self.period();
        let echo_end = 2.0 * tau + c.echo_shift_k1 * self.period() + burst;
        if echo_end > self.window() {
            bail!(
                Config,
                "echo of path {last} ends at {echo_end:e} s, past the {:e} s record",
                self.window()
            );
        }
        Ok(())
    }

    fn normalized(&self, s: StateVector) -> (f64, f64) {
        let unit = |g: &[f64], v: f64| {
            let (lo, hi) = (g[0], g[g.len() - 1]);
            if hi > lo {
                (v - lo) / (hi - lo)
            } else {
                0.0
            }
        };
        (unit(&self.grid1, s.k1), unit(&self.grid2, s.k2))
    }
}

/// Continuous unit-peak burst starting at `t = 0`.
struct Burst {
    cycles: f64,
    carrier: f64,
    gain: f64,
}

impl Burst {
    fn new(n_peaks: u32, carrier: f64) -> Self {
        let mut b = Self {
            cycles: n_peaks as f64,
            carrier,
            gain: 1.0,
        };
        // For a whole number of cycles the two lobes next to the window's
        // center are the largest; the one just before it is unimodal.
        let period = 1.0 / carrier;
        let center = 0.5 * b.cycles * period;
        let (mut lo, mut hi) = (center - 0.5 * period, center);
        for _ in 0..200 {
            let a = lo + (hi - lo) / 3.0;
            let c = hi - (hi - lo) / 3.0;
            if libm::fabs(b.at(a)) < libm::fabs(b.at(c)) {
                lo = a;
            } else {
                hi = c;
            }
        }
        let peak = libm::fabs(b.at(0.5 * (lo + hi)));
        b.gain = 1.0 / peak;
        b
    }

    fn at(&self, t: f64) -> f64 {
        let span = self.cycles / self.carrier;
        if !(0.0..=span).contains(&t) {
            return 0.0;
        }
        let w = 0.5 * (1.0 - libm::cos(2.0 * PI * t / span));
        self.gain * w * libm::sin(2.0 * PI * self.carrier * t)
    }
}

/// Hann-windowed `n_peaks`-cycle sine sampled at `sample_rate`, zero-padded to
/// `m` samples, with unit peak magnitude.
pub fn tone_burst(n_peaks: u32, carrier: f64, sample_rate: f64, m: usize) -> Result<Vec<f64>> {
    if !(carrier > 0.0 && carrier < 0.5 * sample_rate) {
        bail!(
            Config,
            "carrier {carrier} Hz must lie below the Nyquist rate"
        );
    }
    if n_peaks == 0 {
        bail!(Config, "tone burst needs at least one cycle");
    }
    let b = Burst::new(n_peaks, carrier);
    let mut out: Vec<f64> = (0..m).map(|i| b.at(i as f64 / sample_rate)).collect();
    let peak = out.iter().map(|x| libm::fabs(*x)).fold(0.0, f64::max);
    if peak > 0.0 {
        out.iter_mut().for_each(|x| *x /= peak);
    }
    Ok(out)
}

/// Noise-free response at any state inside the grid's hull (or beyond it;
/// the response family extrapolates smoothly).
pub fn clean_response(config: &SynthConfig, state: StateVector, path: u32) -> Result<Vec<f64>> {
    config.validate()?;
    if path >= config.paths {
        bail!(Config, "path {path} outside 0..{}", config.paths);
    }
    if !state.is_finite() {
        bail!(Numeric, "state is not finite");
    }
    let c = &config.coefficients;
    let (u1, u2) = config.normalized(state);
    let period = config.period();
    let burst = Burst::new(config.n_peaks, config.carrier);
    let span = config.n_peaks as f64 * period;
    let amp = SynthConfig::path_gain(path) * (1.0 - c.amp_k1 * u1) * (1.0 - c.amp_k2 * u2);
    let tau = config.base_delay(path) + (c.delay_k2 * u2 + c.delay_cross * u1 * u2) * period;
    let rho = c.echo_base + c.echo_k1 * u1;
    let echo_at = 2.0 * tau + c.echo_shift_k1 * u1 * period;
    let tail_at = tau + span;
    let decay = 0.25 * config.window();
    let rise = 2.0 * period;
    let glide = c.stretch_k2 * u2;
    Ok((0..config.samples)
        .map(|i| {
            let t = i as f64 / config.sample_rate;
            let mut y = amp * burst.at(t - tau) + rho * amp * burst.at(t - echo_at);
            let s = t - tail_at;
            if s > 0.0 {
                let envelope = libm::exp(-s / decay) * (1.0 - libm::exp(-s / rise));
                let phase = 2.0 * PI * config.carrier * (s + 0.5 * glide * s * s / decay);
                y += c.tail * amp * envelope * libm::sin(phase);
            }
            y
        })
        .collect())
}

/// One record at a grid state. Noise, when enabled, is scaled so the record's
/// SNR against its noise-free mean square equals the target exactly.
pub fn synth_response(
    config: &SynthConfig,
    state: StateVector,
    path: u32,
    trial: u32,
) -> Result<SignalRecord> {
    let i = config.grid1.iter().position(|&v| v == state.k1);
    let j = config.grid2.iter().position(|&v| v == state.k2);
    let (Some(i), Some(j)) = (i, j) else {
        bail!(
            Config,
            "state ({}, {}) is not on the grid",
            state.k1,
            state.k2
        );
    };
    let mut samples = clean_response(config, state, path)?;
    if let Some(snr) = config.snr_db {
        let mut rng = SplitMix64::derive(
            config.seed,
            &[i as u64, j as u64, path as u64, trial as u64],
        );
        let noise: Vec<f64> = (0..samples.len()).map(|_| rng.normal()).collect();
        let power = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
        let target = power(&samples) / libm::pow(10.0, snr / 10.0);
        let drawn = power(&noise);
        if drawn > 0.0 {
            let k = libm::sqrt(target / drawn);
            samples
                .iter_mut()
                .zip(&noise)
                .for_each(|(y, n)| *y += k * n);
        }
    }
    Ok(SignalRecord {
        state,
        path_id: path,
        trial_id: trial,
        samples,
        sample_period: 1.0 / config.sample_rate,
    })
}

/// Every `(state, path, trial)` record of the configuration.
pub fn generate_dataset(config: &SynthConfig) -> Result<DatasetGrid> {
    config.validate()?;
    let m2 = config.grid2.len();
    let mut records = Vec::new();
    for (i, &k1) in config.grid1.iter().enumerate() {
        for (j, &k2) in config.grid2.iter().enumerate() {
            let state = StateVector::new(k1, k2);
            for path in 0..config.paths {
                for trial in 0..config.trials[i * m2 + j] {
                    records.push(synth_response(config, state, path, trial)?);
                }
            }
        }
    }
    DatasetGrid::new(
        config.grid1.clone(),
        config.grid2.clone(),
        (0..config.paths).collect(),
        config.trials.clone(),
        config.samples,
        1.0 / config.sample_rate,
        records,
    )
}
