//! Compressor plus regression heads composed into the two test-phase
//! branches: signal to state (`φ1 ∘ compress`) and state to signal
//! (`expand ∘ φ2`), with VAE latent augmentation and per-state evaluation.
//!
//! Every sensor path gets its own compressor and heads, keyed by path id.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::dmaps::{self, DMapConfig, DMapModel};
use crate::error::{bail, Error, Result};
use crate::linalg::Matrix;
use crate::models::{
    cae_train, ffnn_train, vae_train, Architecture, Family, NetworkModel, TrainConfig,
};
use crate::pyramid::{fit_pyramid, PyramidConfig, PyramidModel};
use crate::rng::SplitMix64;
use crate::signal::{rss_sss, standardize, DatasetGrid, ScaleMode, Scaling, StateVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CompressorKind {
    Dmaps,
    Cae,
    Vae,
}

impl CompressorKind {
    pub const ALL: [Self; 3] = [Self::Dmaps, Self::Cae, Self::Vae];

    pub fn name(self) -> &'static str {
        match self {
            Self::Dmaps => "dmaps",
            Self::Cae => "cae",
            Self::Vae => "vae",
        }
    }

    /// 3 for diffusion maps, 7 for the autoencoders.
    pub fn default_latent_dim(self) -> usize {
        match self {
            Self::Dmaps => 3,
            Self::Cae | Self::Vae => 7,
        }
    }
}

impl fmt::Display for CompressorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CompressorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dmaps" => Ok(Self::Dmaps),
            "cae" => Ok(Self::Cae),
            "vae" => Ok(Self::Vae),
            _ => bail!(
                Config,
                "unknown compressor kind '{s}' (expected dmaps, cae or vae)"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub kind: CompressorKind,
    pub latent_dim: usize,
    /// `d` is overridden by `latent_dim`.
    pub dmap: DMapConfig,
    pub pyramid: PyramidConfig,
    pub autoencoder: TrainConfig,
    pub ffnn: TrainConfig,
    pub ffnn_hidden: Vec<usize>,
    /// Global sample scaling fitted on the training set.
    pub scaling: Option<ScaleMode>,
    /// Latent coordinates fed to the state estimator; all when `None`.
    pub latent_subset: Option<Vec<usize>>,
    /// Restrict fitting to these paths; all when `None`.
    pub paths: Option<Vec<u32>>,
    pub seed: u64,
}

impl PipelineConfig {
    pub fn new(kind: CompressorKind) -> Self {
        Self {
            kind,
            latent_dim: kind.default_latent_dim(),
            dmap: DMapConfig::default(),
            pyramid: PyramidConfig {
                stop_tolerance: 0.1,
                max_levels: 24,
                ..PyramidConfig::default()
            },
            autoencoder: TrainConfig::default(),
            ffnn: TrainConfig {
                epochs: 3000,
                batch_size: 16,
                learning_rate: 1e-2,
                lr_final: 0.01,
                ..TrainConfig::default()
            },
            ffnn_hidden: vec![32, 32],
            scaling: None,
            latent_subset: None,
            paths: None,
            seed: 0,
        }
    }

    fn estimator_inputs(&self) -> Result<Vec<usize>> {
        match &self.latent_subset {
            None => Ok((0..self.latent_dim).collect()),
            Some(s) => {
                if s.is_empty() {
                    bail!(Config, "latent subset must not be empty");
                }
                if let Some(&bad) = s.iter().find(|&&i| i >= self.latent_dim) {
                    bail!(Config, "latent index {bad} outside 0..{}", self.latent_dim);
                }
                Ok(s.clone())
            }
        }
    }
}

/// Fitted compressor for one path.
#[derive(Debug, Clone, PartialEq)]
pub enum Compressor {
    Dmaps {
        dmap: DMapModel,
        pyramid: PyramidModel,
    },
    Network(NetworkModel),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressorHandle {
    pub kind: CompressorKind,
    pub latent_dim: usize,
    pub path: u32,
    pub model: Compressor,
}

/// Latents plus the worst out-of-range flag of a compression.
#[derive(Debug, Clone, PartialEq)]
pub struct Compressed {
    pub latents: Matrix,
    pub out_of_range: bool,
}

impl CompressorHandle {
    /// Latent codes of the rows of `signals`. Diffusion maps use the Nyström
    /// extension, which reproduces the training embedding on training rows.
    pub fn compress(&self, signals: &Matrix) -> Result<Compressed> {
        match &self.model {
            Compressor::Dmaps { dmap, .. } => {
                let mut latents = Matrix::zeros(signals.rows(), self.latent_dim);
                let mut out_of_range = false;
                for r in 0..signals.rows() {
                    let ext = dmap.extend(signals.row(r))?;
                    out_of_range |= ext.out_of_range;
                    latents.row_mut(r).copy_from_slice(&ext.coords);
                }
                Ok(Compressed {
                    latents,
                    out_of_range,
                })
            }
            Compressor::Network(net) => Ok(Compressed {
                latents: net.encode_batch(signals)?,
                out_of_range: false,
            }),
        }
    }

    /// Waveform for `latent`, plus whether the pyramid fell back to the
    /// nearest training output.
    pub fn expand(&self, latent: &[f64]) -> Result<(Vec<f64>, bool)> {
        match &self.model {
            Compressor::Dmaps { pyramid, .. } => {
                let lift = pyramid.lift(latent)?;
                Ok((lift.output, lift.out_of_range))
            }
            Compressor::Network(net) => Ok((net.decode(latent)?, false)),
        }
    }

    pub fn signal_len(&self) -> usize {
        match &self.model {
            Compressor::Dmaps { dmap, .. } => dmap.ambient_dim(),
            Compressor::Network(net) => net.input_len,
        }
    }

    /// Hash of every fitted parameter.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::new();
        h.write_u64(self.kind as u64);
        h.write_u64(self.latent_dim as u64);
        h.write_u64(self.path as u64);
        match &self.model {
            Compressor::Dmaps { dmap, pyramid } => {
                h.write_f64s(dmap.points.as_slice());
                h.write_f64s(&[dmap.epsilon, dmap.alpha, dmap.t]);
                h.write_f64s(&dmap.eigenvalues);
                h.write_f64s(dmap.eigenvectors.as_slice());
                for &s in &dmap.selected {
                    h.write_u64(s as u64);
                }
                for level in &pyramid.levels {
                    h.write_f64s(&[level.sigma]);
                    h.write_f64s(level.residuals.as_slice());
                }
            }
            Compressor::Network(net) => hash_network(&mut h, net),
        }
        h.finish()
    }
}

fn hash_network(h: &mut Fnv, net: &NetworkModel) {
    for p in net.encoder.params() {
        h.write_f64s(p.data());
    }
    if let Some(dec) = &net.decoder {
        for p in dec.params() {
            h.write_f64s(p.data());
        }
    }
}

/// 64-bit FNV-1a.
#[derive(Debug, Clone, Copy)]
pub struct Fnv(u64);

impl Fnv {
    pub fn new() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }

    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }

    pub fn write_u64(&mut self, v: u64) {
        self.write(&v.to_le_bytes());
    }

    pub fn write_f64s(&mut self, vs: &[f64]) {
        for v in vs {
            self.write(&v.to_bits().to_le_bytes());
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv {
    fn default() -> Self {
        Self::new()
    }
}

/// Hash of a dataset's grid metadata and every sample.
pub fn dataset_fingerprint(ds: &DatasetGrid) -> u64 {
    let mut h = Fnv::new();
    h.write_f64s(ds.grid1());
    h.write_f64s(ds.grid2());
    for &p in ds.paths() {
        h.write_u64(p as u64);
    }
    for &t in ds.trial_table() {
        h.write_u64(t as u64);
    }
    h.write_u64(ds.samples_per_record() as u64);
    h.write_f64s(&[ds.sample_period()]);
    for r in ds.records() {
        h.write_f64s(&[r.state.k1, r.state.k2]);
        h.write_u64(((r.path_id as u64) << 32) | r.trial_id as u64);
        h.write_f64s(&r.samples);
    }
    h.finish()
}

/// Compressor, state estimator `φ1` and latent generator `φ2` of one path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    pub compressor: CompressorHandle,
    pub estimator: NetworkModel,
    pub generator: NetworkModel,
    /// Latent columns fed to `estimator`.
    pub estimator_inputs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineBundle {
    pub kind: CompressorKind,
    pub latent_dim: usize,
    pub paths: Vec<PathBundle>,
    pub scaling: Option<Scaling>,
    pub grid1: Vec<f64>,
    pub grid2: Vec<f64>,
    pub samples_per_record: usize,
    pub sample_period: f64,
    /// [`dataset_fingerprint`] of the training set.
    pub fingerprint: u64,
}

/// Training rows of one path, optionally after global scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct PathData {
    pub path: u32,
    pub signals: Matrix,
    pub states: Matrix,
    /// Row-major grid index of each row's state.
    pub state_ids: Vec<usize>,
}

impl PathData {
    pub fn collect(ds: &DatasetGrid, path: u32) -> Result<Self> {
        let m2 = ds.grid2().len();
        let mut signals = Vec::new();
        let mut states = Vec::new();
        let mut state_ids = Vec::new();
        for r in ds.records_for_path(path) {
            let (i, j) = ds.state_index(r.state).expect("validated record");
            signals.push(r.samples.as_slice());
            states.push(r.state.to_array());
            state_ids.push(i * m2 + j);
        }
        if signals.is_empty() {
            bail!(Degenerate, "no training records on path {path}");
        }
        Ok(Self {
            path,
            signals: Matrix::from_rows(&signals)?,
            states: Matrix::from_rows(&states)?,
            state_ids,
        })
    }
}

fn stream_seed(seed: u64, path: u32, role: u64) -> u64 {
    SplitMix64::derive(seed, &[path as u64, role]).next_u64()
}

const COMPRESSOR: u64 = 0;
const ESTIMATOR: u64 = 1;
const GENERATOR: u64 = 2;
const AUGMENT: u64 = 3;

/// Fits the compressor of one path.
pub fn fit_compressor(data: &PathData, config: &PipelineConfig) -> Result<CompressorHandle> {
    let d = config.latent_dim;
    let n = data.signals.rows();
    let model = match config.kind {
        CompressorKind::Dmaps => {
            if d >= n {
                bail!(
                    Config,
                    "latent width {d} needs more than {n} training signals"
                );
            }
            let cfg = DMapConfig { d, ..config.dmap };
            let dmap = dmaps::fit(&data.signals, &cfg)?;
            let pyramid = fit_pyramid(&dmap.embedding(), &data.signals, &config.pyramid)?;
            Compressor::Dmaps { dmap, pyramid }
        }
        CompressorKind::Cae | CompressorKind::Vae => {
            let m = data.signals.cols();
            let cfg = TrainConfig {
                seed: stream_seed(config.seed, data.path, COMPRESSOR),
                ..config.autoencoder
            };
            Compressor::Network(if config.kind == CompressorKind::Cae {
                cae_train(&data.signals, &Architecture::reference_cae(m, d)?, &cfg)?
            } else {
                vae_train(&data.signals, &Architecture::reference_vae(m, d)?, &cfg)?
            })
        }
    };
    Ok(CompressorHandle {
        kind: config.kind,
        latent_dim: d,
        path: data.path,
        model,
    })
}

fn columns(m: &Matrix, cols: &[usize]) -> Result<Matrix> {
    let rows: Vec<Vec<f64>> = (0..m.rows())
        .map(|r| cols.iter().map(|&c| m[(r, c)]).collect())
        .collect();
    Matrix::from_rows(&rows)
}

fn train_estimator(
    latents: &Matrix,
    states: &Matrix,
    inputs: &[usize],
    path: u32,
    config: &PipelineConfig,
) -> Result<NetworkModel> {
    let arch = Architecture::ffnn(&config.ffnn_hidden, 2);
    let cfg = TrainConfig {
        seed: stream_seed(config.seed, path, ESTIMATOR),
        ..config.ffnn
    };
    ffnn_train(&columns(latents, inputs)?, states, &arch, &cfg)
}

/// Fits compressor, `φ1` and `φ2` for one path.
pub fn fit_path(data: &PathData, config: &PipelineConfig) -> Result<PathBundle> {
    let inputs = config.estimator_inputs()?;
    let compressor = fit_compressor(data, config)?;
    let latents = compressor.compress(&data.signals)?.latents;
    let estimator = train_estimator(&latents, &data.states, &inputs, data.path, config)?;
    let generator = ffnn_train(
        &data.states,
        &latents,
        &Architecture::ffnn(&config.ffnn_hidden, config.latent_dim),
        &TrainConfig {
            seed: stream_seed(config.seed, data.path, GENERATOR),
            ..config.ffnn
        },
    )?;
    Ok(PathBundle {
        compressor,
        estimator,
        generator,
        estimator_inputs: inputs,
    })
}

/// Scales the training set and gathers per-path rows. Separate from
/// [`fit_bundle`] so callers can fit paths concurrently.
pub fn prepare(
    train: &DatasetGrid,
    config: &PipelineConfig,
) -> Result<(Vec<PathData>, Option<Scaling>)> {
    if train.is_empty() {
        bail!(Degenerate, "training set is empty");
    }
    let (scaled, scaling) = match config.scaling {
        Some(mode) => {
            let (ds, s) = standardize(train, mode)?;
            (ds, Some(s))
        }
        None => (train.clone(), None),
    };
    let paths: Vec<u32> = match &config.paths {
        Some(p) => {
            if let Some(bad) = p.iter().find(|x| !train.paths().contains(x)) {
                bail!(Config, "path {bad} is not in the training set");
            }
            p.clone()
        }
        None => train.paths().to_vec(),
    };
    let data = paths
        .iter()
        .map(|&p| PathData::collect(&scaled, p))
        .collect::<Result<Vec<_>>>()?;
    Ok((data, scaling))
}

/// Wraps fitted paths into a bundle.
pub fn assemble_bundle(
    train: &DatasetGrid,
    config: &PipelineConfig,
    paths: Vec<PathBundle>,
    scaling: Option<Scaling>,
) -> PipelineBundle {
    PipelineBundle {
        kind: config.kind,
        latent_dim: config.latent_dim,
        paths,
        scaling,
        grid1: train.grid1().to_vec(),
        grid2: train.grid2().to_vec(),
        samples_per_record: train.samples_per_record(),
        sample_period: train.sample_period(),
        fingerprint: dataset_fingerprint(train),
    }
}

/// Sequential fit over every path.
pub fn fit_bundle(train: &DatasetGrid, config: &PipelineConfig) -> Result<PipelineBundle> {
    let (data, scaling) = prepare(train, config)?;
    let paths = data
        .iter()
        .map(|d| fit_path(d, config))
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble_bundle(train, config, paths, scaling))
}

/// Output of [`PipelineBundle::reconstruct_signal`].
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub samples: Vec<f64>,
    /// The state lies outside the training grid's hull.
    pub extrapolated: bool,
    /// The state is inside the hull but not a grid duplet.
    pub interpolated: bool,
    /// The pyramid had no kernel support and returned a training waveform.
    pub out_of_range: bool,
}

impl PipelineBundle {
    pub fn path(&self, path: u32) -> Result<&PathBundle> {
        match self.paths.iter().find(|p| p.compressor.path == path) {
            Some(p) => Ok(p),
            None => bail!(Config, "no model for path {path}"),
        }
    }

    pub fn path_ids(&self) -> Vec<u32> {
        self.paths.iter().map(|p| p.compressor.path).collect()
    }

    pub fn matches(&self, ds: &DatasetGrid) -> bool {
        dataset_fingerprint(ds) == self.fingerprint
    }

    fn scale_in(&self, signal: &[f64]) -> Vec<f64> {
        match &self.scaling {
            Some(s) => s.apply_slice(signal),
            None => signal.to_vec(),
        }
    }

    fn check_signal(&self, len: usize) -> Result<()> {
        if len != self.samples_per_record {
            bail!(
                Dimension,
                "signal has {len} samples, bundle was fitted on {}",
                self.samples_per_record
            );
        }
        Ok(())
    }

    /// Estimates the states of several signals recorded on `path`.
    pub fn estimate_states(&self, signals: &Matrix, path: u32) -> Result<Vec<StateVector>> {
        self.check_signal(signals.cols())?;
        let pb = self.path(path)?;
        let rows: Vec<Vec<f64>> = (0..signals.rows())
            .map(|r| self.scale_in(signals.row(r)))
            .collect();
        let scaled = Matrix::from_rows(&rows)?;
        let latents = pb.compressor.compress(&scaled)?.latents;
        let pred = pb
            .estimator
            .predict_batch(&columns(&latents, &pb.estimator_inputs)?)?;
        Ok((0..pred.rows())
            .map(|r| StateVector::new(pred[(r, 0)], pred[(r, 1)]))
            .collect())
    }

    pub fn estimate_state(&self, signal: &[f64], path: u32) -> Result<StateVector> {
        let m = Matrix::from_vec(1, signal.len(), signal.to_vec())?;
        Ok(self.estimate_states(&m, path)?[0])
    }

    fn in_hull(&self, s: StateVector) -> bool {
        let (g1, g2) = (&self.grid1, &self.grid2);
        (g1[0]..=g1[g1.len() - 1]).contains(&s.k1) && (g2[0]..=g2[g2.len() - 1]).contains(&s.k2)
    }

    /// Waveform predicted for `state` on `path`, in the training units.
    pub fn reconstruct_signal(&self, state: StateVector, path: u32) -> Result<Reconstruction> {
        if !state.is_finite() {
            bail!(Numeric, "state is not finite");
        }
        let pb = self.path(path)?;
        let latent = pb.generator.predict(&state.to_array())?;
        let (mut samples, out_of_range) = pb.compressor.expand(&latent)?;
        if let Some(s) = &self.scaling {
            samples = s.invert_slice(&samples);
        }
        if !samples.iter().all(|x| x.is_finite()) {
            bail!(Numeric, "reconstruction is not finite");
        }
        let on_grid = self.grid1.contains(&state.k1) && self.grid2.contains(&state.k2);
        let inside = self.in_hull(state);
        Ok(Reconstruction {
            samples,
            extrapolated: !inside,
            interpolated: inside && !on_grid,
            out_of_range,
        })
    }
}

/// VAE latent augmentation of every path's state estimator.
///
/// For each grid state, `samples_per_state` latents are drawn from the
/// posteriors of that state's training signals (cycling through them) and
/// labeled with the state. The estimator is then retrained with its original
/// seed on the real plus sampled latents.
pub fn augment_training(
    bundle: &PipelineBundle,
    train: &DatasetGrid,
    samples_per_state: usize,
    config: &PipelineConfig,
) -> Result<PipelineBundle> {
    if bundle.kind != CompressorKind::Vae {
        return Err(Error::Family {
            expected: Family::Vae.name(),
            found: bundle.kind.name(),
        });
    }
    let mut out = bundle.clone();
    for pb in out.paths.iter_mut() {
        let path = pb.compressor.path;
        *pb = augment_path(bundle, pb, train, samples_per_state, config).map_err(|e| match e {
            Error::Degenerate(msg) => Error::Degenerate(alloc::format!("path {path}: {msg}")),
            other => other,
        })?;
    }
    Ok(out)
}

/// Augmentation of a single path; see [`augment_training`].
pub fn augment_path(
    bundle: &PipelineBundle,
    pb: &PathBundle,
    train: &DatasetGrid,
    samples_per_state: usize,
    config: &PipelineConfig,
) -> Result<PathBundle> {
    let Compressor::Network(vae) = &pb.compressor.model else {
        return Err(Error::Family {
            expected: Family::Vae.name(),
            found: pb.compressor.kind.name(),
        });
    };
    let scaled = match &bundle.scaling {
        Some(s) => train.map_samples(|x| s.apply(x))?,
        None => train.clone(),
    };
    let data = PathData::collect(&scaled, pb.compressor.path)?;
    let mut latents: Vec<Vec<f64>> = {
        let z = vae.encode_batch(&data.signals)?;
        (0..z.rows()).map(|r| z.row(r).to_vec()).collect()
    };
    let mut states: Vec<[f64; 2]> = (0..data.states.rows())
        .map(|r| [data.states[(r, 0)], data.states[(r, 1)]])
        .collect();
    if samples_per_state > 0 {
        for s in 0..train.num_states() {
            let rows: Vec<usize> = (0..data.state_ids.len())
                .filter(|&r| data.state_ids[r] == s)
                .collect();
            if rows.is_empty() {
                continue;
            }
            let mut rng =
                SplitMix64::derive(config.seed, &[pb.compressor.path as u64, AUGMENT, s as u64]);
            for k in 0..samples_per_state {
                let r = rows[k % rows.len()];
                let z = vae.sample_latents(data.signals.row(r), 1, &mut rng)?;
                latents.push(z.into_vec());
                states.push([data.states[(r, 0)], data.states[(r, 1)]]);
            }
        }
    }
    let estimator = train_estimator(
        &Matrix::from_rows(&latents)?,
        &Matrix::from_rows(&states)?,
        &pb.estimator_inputs,
        pb.compressor.path,
        config,
    )?;
    Ok(PathBundle {
        estimator,
        ..pb.clone()
    })
}

/// Signed estimation error statistics of one state component.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationRow {
    pub state: StateVector,
    /// 0 for `k1`, 1 for `k2`.
    pub component: usize,
    /// `None` when the state has no test records.
    pub mean_err: Option<f64>,
    /// `1.96 s / sqrt(n)`; `None` (undefined) for fewer than two records.
    pub ci_half: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionRow {
    pub state: StateVector,
    pub path: u32,
    /// RSS/SSS (%) against the mean test waveform of the state and path;
    /// `None` when there is no test waveform.
    pub rss_sss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub kind: CompressorKind,
    pub estimation: Vec<EstimationRow>,
    pub reconstruction: Vec<ReconstructionRow>,
    /// Mean absolute error per component over every test record.
    pub mean_abs_error: [f64; 2],
    /// `mean_abs_error` divided by each component's grid range.
    pub relative_mae: [f64; 2],
    /// Mean of the defined reconstruction rows.
    pub mean_rss_sss: f64,
}

/// Mean and 95% normal-approximation half-width.
pub fn mean_ci(values: &[f64]) -> (Option<f64>, Option<f64>) {
    let n = values.len();
    if n == 0 {
        return (None, None);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (Some(mean), None);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (
        Some(mean),
        Some(1.96 * libm::sqrt(var) / libm::sqrt(n as f64)),
    )
}

/// State estimates for every test record, in record order.
pub fn estimate_records(bundle: &PipelineBundle, test: &DatasetGrid) -> Result<Vec<StateVector>> {
    let mut out = vec![StateVector::new(0.0, 0.0); test.len()];
    for path in bundle.path_ids() {
        let idx: Vec<usize> = (0..test.len())
            .filter(|&i| test.records()[i].path_id == path)
            .collect();
        if idx.is_empty() {
            continue;
        }
        let rows: Vec<&[f64]> = idx
            .iter()
            .map(|&i| test.records()[i].samples.as_slice())
            .collect();
        let est = bundle.estimate_states(&Matrix::from_rows(&rows)?, path)?;
        for (&i, e) in idx.iter().zip(est) {
            out[i] = e;
        }
    }
    Ok(out)
}

/// Builds the report from precomputed estimates (one per test record, in
/// record order; records on paths without a model are ignored).
pub fn assemble_report(
    bundle: &PipelineBundle,
    test: &DatasetGrid,
    estimates: &[StateVector],
) -> Result<EvalReport> {
    if test.is_empty() {
        bail!(Degenerate, "test set is empty");
    }
    if estimates.len() != test.len() {
        bail!(
            Dimension,
            "{} estimates for {} test records",
            estimates.len(),
            test.len()
        );
    }
    bundle.check_signal(test.samples_per_record())?;
    let paths = bundle.path_ids();
    let m2 = test.grid2().len();
    let mut errors: Vec<[Vec<f64>; 2]> = vec![[Vec::new(), Vec::new()]; test.num_states()];
    let mut abs = [0.0; 2];
    let mut count = 0usize;
    for (r, e) in test.records().iter().zip(estimates) {
        if !paths.contains(&r.path_id) {
            continue;
        }
        if !e.is_finite() {
            bail!(Numeric, "non-finite state estimate");
        }
        let (i, j) = test.state_index(r.state).expect("validated record");
        for c in 0..2 {
            let err = e.component(c) - r.state.component(c);
            errors[i * m2 + j][c].push(err);
            abs[c] += libm::fabs(err);
        }
        count += 1;
    }
    if count == 0 {
        bail!(Degenerate, "test set has no records on the bundle's paths");
    }
    let mut estimation = Vec::with_capacity(2 * test.num_states());
    for (s, state) in test.states().enumerate() {
        for (c, errs) in errors[s].iter().enumerate() {
            let (mean_err, ci_half) = mean_ci(errs);
            estimation.push(EstimationRow {
                state,
                component: c,
                mean_err,
                ci_half,
                n: errs.len(),
            });
        }
    }
    let mut reconstruction = Vec::with_capacity(test.num_states() * paths.len());
    let mut rss_total = 0.0;
    let mut rss_count = 0usize;
    for state in test.states() {
        for &path in &paths {
            let members: Vec<&[f64]> = test
                .records_for_path(path)
                .filter(|r| r.state == state)
                .map(|r| r.samples.as_slice())
                .collect();
            let rss = if members.is_empty() {
                None
            } else {
                let m = test.samples_per_record();
                let mut mean = vec![0.0; m];
                for s in &members {
                    mean.iter_mut().zip(*s).for_each(|(a, b)| *a += b);
                }
                mean.iter_mut().for_each(|a| *a /= members.len() as f64);
                let rec = bundle.reconstruct_signal(state, path)?;
                rss_sss(&mean, &rec.samples).ok()
            };
            if let Some(v) = rss {
                rss_total += v;
                rss_count += 1;
            }
            reconstruction.push(ReconstructionRow {
                state,
                path,
                rss_sss: rss,
            });
        }
    }
    let ranges = test.ranges();
    let mean_abs_error = [abs[0] / count as f64, abs[1] / count as f64];
    let rel = |c: usize| {
        let span = ranges[c].1 - ranges[c].0;
        if span > 0.0 {
            mean_abs_error[c] / span
        } else {
            mean_abs_error[c]
        }
    };
    Ok(EvalReport {
        kind: bundle.kind,
        estimation,
        reconstruction,
        mean_abs_error,
        relative_mae: [rel(0), rel(1)],
        mean_rss_sss: if rss_count == 0 {
            0.0
        } else {
            rss_total / rss_count as f64
        },
    })
}

/// Estimates every test record and reconstructs every (state, path).
pub fn evaluate(bundle: &PipelineBundle, test: &DatasetGrid) -> Result<EvalReport> {
    if test.is_empty() {
        bail!(Degenerate, "test set is empty");
    }
    bundle.check_signal(test.samples_per_record())?;
    let est = estimate_records(bundle, test)?;
    assemble_report(bundle, test, &est)
}

impl EvalReport {
    /// Short human-readable summary.
    pub fn summary(&self) -> String {
        alloc::format!(
            "{}: MAE k1 {:.4} ({:.2}% of range), k2 {:.4} ({:.2}% of range), mean RSS/SSS {:.3}%",
            self.kind,
            self.mean_abs_error[0],
            100.0 * self.relative_mae[0],
            self.mean_abs_error[1],
            100.0 * self.relative_mae[1],
            self.mean_rss_sss
        )
    }
}
