//! `WLMD` model container (little-endian).
//!
//! Layout: magic, u16 version, u8 tag, then the tagged payload. Every
//! parameter is stored as raw fp64, so a save/load round trip is bit-exact.
//! Counts and sizes are u64; path ids are u32.

use std::path::Path;

use wavelatent_core::autodiff::{Activation, LayerSpec, Network, Tensor};
use wavelatent_core::dmaps::DMapModel;
use wavelatent_core::linalg::Matrix;
use wavelatent_core::models::{Affine, EpochLog, Family, NetworkModel};
use wavelatent_core::pipeline::{Compressor, CompressorHandle, CompressorKind, PathBundle, PipelineBundle};
use wavelatent_core::pyramid::{PyramidLevel, PyramidModel};
use wavelatent_core::signal::Scaling;

use crate::bytes::{Reader, Writer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"WLMD";
const VERSION: u16 = 1;

/// Anything the container can hold.
#[derive(Debug, Clone, PartialEq)]
pub enum Artifact {
    Network(NetworkModel),
    DMap(DMapModel),
    Pyramid(PyramidModel),
    Bundle(PipelineBundle),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tag {
    Cae = 1,
    Vae = 2,
    Ffnn = 3,
    DMap = 4,
    Pyramid = 5,
    Bundle = 6,
}

impl Tag {
    fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => Self::Cae,
            2 => Self::Vae,
            3 => Self::Ffnn,
            4 => Self::DMap,
            5 => Self::Pyramid,
            6 => Self::Bundle,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Cae => "cae",
            Self::Vae => "vae",
            Self::Ffnn => "ffnn",
            Self::DMap => "dmap",
            Self::Pyramid => "pyramid",
            Self::Bundle => "bundle",
        }
    }

    fn of_family(f: Family) -> Self {
        match f {
            Family::Cae => Self::Cae,
            Family::Vae => Self::Vae,
            Family::Ffnn => Self::Ffnn,
        }
    }
}

impl Artifact {
    pub fn tag(&self) -> Tag {
        match self {
            Self::Network(m) => Tag::of_family(m.family),
            Self::DMap(_) => Tag::DMap,
            Self::Pyramid(_) => Tag::Pyramid,
            Self::Bundle(_) => Tag::Bundle,
        }
    }
}

pub fn encode(artifact: &Artifact) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(MAGIC);
    w.u16(VERSION);
    w.u8(artifact.tag() as u8);
    match artifact {
        Artifact::Network(m) => put_network_model(&mut w, m),
        Artifact::DMap(d) => put_dmap(&mut w, d),
        Artifact::Pyramid(p) => put_pyramid(&mut w, p),
        Artifact::Bundle(b) => put_bundle(&mut w, b),
    }
    w.buf
}

pub fn decode(bytes: &[u8]) -> Result<Artifact> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    let at = r.offset();
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::format(at, format!("unsupported version {version}, expected {VERSION}")));
    }
    let at = r.offset();
    let raw = r.u8("tag")?;
    let tag = Tag::from_u8(raw).ok_or_else(|| Error::format(at, format!("unknown tag {raw}")))?;
    let artifact = match tag {
        Tag::Cae | Tag::Vae | Tag::Ffnn => {
            let m = get_network_model(&mut r)?;
            if Tag::of_family(m.family) != tag {
                return Err(Error::format(at, format!("tag {} disagrees with payload family {}", tag.name(), m.family.name())));
            }
            Artifact::Network(m)
        }
        Tag::DMap => Artifact::DMap(get_dmap(&mut r)?),
        Tag::Pyramid => Artifact::Pyramid(get_pyramid(&mut r)?),
        Tag::Bundle => Artifact::Bundle(get_bundle(&mut r)?),
    };
    r.finish()?;
    Ok(artifact)
}

pub fn save(artifact: &Artifact, path: &Path) -> Result<()> {
    std::fs::write(path, encode(artifact)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Artifact> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

fn mismatch(expected: &'static str, found: Tag) -> Error {
    Error::Core(wavelatent_core::Error::Family {
        expected,
        found: found.name(),
    })
}

/// Loads a network and checks its family.
pub fn load_network(path: &Path, family: Family) -> Result<NetworkModel> {
    match load(path)? {
        Artifact::Network(m) if m.family == family => Ok(m),
        other => Err(mismatch(family.name(), other.tag())),
    }
}

pub fn load_bundle(path: &Path) -> Result<PipelineBundle> {
    match load(path)? {
        Artifact::Bundle(b) => Ok(b),
        other => Err(mismatch(Tag::Bundle.name(), other.tag())),
    }
}

fn put_matrix(w: &mut Writer, m: &Matrix) {
    w.len(m.rows());
    w.len(m.cols());
    w.f64s(m.as_slice());
}

fn get_matrix(r: &mut Reader, what: &str) -> Result<Matrix> {
    let at = r.offset();
    let rows = r.len(what, 0)?;
    let cols = r.len(what, 0)?;
    let n = rows.checked_mul(cols).ok_or_else(|| Error::format(at, format!("{what} size overflows")))?;
    let data = r.f64s(n, what)?;
    Matrix::from_vec(rows, cols, data).map_err(|e| Error::format(at, e.to_string()))
}

fn put_vec(w: &mut Writer, v: &[f64]) {
    w.len(v.len());
    w.f64s(v);
}

fn get_vec(r: &mut Reader, what: &str) -> Result<Vec<f64>> {
    let n = r.len(what, 8)?;
    r.f64s(n, what)
}

fn put_indices(w: &mut Writer, v: &[usize]) {
    w.len(v.len());
    for &i in v {
        w.len(i);
    }
}

fn get_indices(r: &mut Reader, what: &str) -> Result<Vec<usize>> {
    let n = r.len(what, 8)?;
    (0..n).map(|_| r.u64(what).map(|v| v as usize)).collect()
}

fn get_usize(r: &mut Reader, what: &str) -> Result<usize> {
    r.u64(what).map(|v| v as usize)
}

fn get_bool(r: &mut Reader, what: &str) -> Result<bool> {
    let at = r.offset();
    match r.u8(what)? {
        0 => Ok(false),
        1 => Ok(true),
        v => Err(Error::format(at, format!("{what} flag {v} is not 0 or 1"))),
    }
}

fn activation_code(a: Activation) -> u8 {
    match a {
        Activation::Relu => 0,
        Activation::Tanh => 1,
        Activation::Sigmoid => 2,
        Activation::Linear => 3,
    }
}

fn put_spec(w: &mut Writer, spec: &LayerSpec) {
    match *spec {
        LayerSpec::Dense { units, out_channels } => {
            w.u8(0);
            w.len(units);
            w.len(out_channels);
        }
        LayerSpec::Conv1d {
            channels,
            kernel,
            stride,
            padding,
        } => {
            w.u8(1);
            for v in [channels, kernel, stride, padding] {
                w.len(v);
            }
        }
        LayerSpec::Conv1dTranspose {
            channels,
            kernel,
            stride,
            padding,
        } => {
            w.u8(2);
            for v in [channels, kernel, stride, padding] {
                w.len(v);
            }
        }
        LayerSpec::MaxPool { factor } => {
            w.u8(3);
            w.len(factor);
        }
        LayerSpec::Upsample { factor } => {
            w.u8(4);
            w.len(factor);
        }
        LayerSpec::Activation(a) => {
            w.u8(5);
            w.u8(activation_code(a));
        }
    }
}

fn get_spec(r: &mut Reader) -> Result<LayerSpec> {
    let at = r.offset();
    let field = |r: &mut Reader| get_usize(r, "layer field");
    Ok(match r.u8("layer kind")? {
        0 => LayerSpec::Dense {
            units: field(r)?,
            out_channels: field(r)?,
        },
        k @ (1 | 2) => {
            let (channels, kernel, stride, padding) = (field(r)?, field(r)?, field(r)?, field(r)?);
            if k == 1 {
                LayerSpec::Conv1d {
                    channels,
                    kernel,
                    stride,
                    padding,
                }
            } else {
                LayerSpec::Conv1dTranspose {
                    channels,
                    kernel,
                    stride,
                    padding,
                }
            }
        }
        3 => LayerSpec::MaxPool { factor: field(r)? },
        4 => LayerSpec::Upsample { factor: field(r)? },
        5 => {
            let at = r.offset();
            LayerSpec::Activation(match r.u8("activation")? {
                0 => Activation::Relu,
                1 => Activation::Tanh,
                2 => Activation::Sigmoid,
                3 => Activation::Linear,
                v => return Err(Error::format(at, format!("unknown activation {v}"))),
            })
        }
        v => return Err(Error::format(at, format!("unknown layer kind {v}"))),
    })
}

fn put_network(w: &mut Writer, n: &Network) {
    let [c, l] = n.input_shape();
    w.len(c);
    w.len(l);
    w.len(n.specs().len());
    for s in n.specs() {
        put_spec(w, s);
    }
    w.len(n.params().len());
    for p in n.params() {
        for d in p.shape() {
            w.len(d);
        }
        w.f64s(p.data());
    }
}

fn get_network(r: &mut Reader) -> Result<Network> {
    let at = r.offset();
    let shape = [get_usize(r, "input channels")?, get_usize(r, "input length")?];
    let n = r.len("layer count", 2)?;
    let specs = (0..n).map(|_| get_spec(r)).collect::<Result<Vec<_>>>()?;
    let n = r.len("parameter count", 24)?;
    let mut params = Vec::with_capacity(n);
    for _ in 0..n {
        let t_at = r.offset();
        let s = [get_usize(r, "tensor shape")?, get_usize(r, "tensor shape")?, get_usize(r, "tensor shape")?];
        let len = s
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::format(t_at, "tensor size overflows"))?;
        let data = r.f64s(len, "tensor data")?;
        params.push(Tensor::new(s, data).map_err(|e| Error::format(t_at, e.to_string()))?);
    }
    Network::from_parts(specs, shape, params).map_err(|e| Error::format(at, e.to_string()))
}

fn put_affine(w: &mut Writer, a: &Option<Affine>) {
    match a {
        None => w.u8(0),
        Some(a) => {
            w.u8(1);
            put_vec(w, &a.offset);
            put_vec(w, &a.scale);
        }
    }
}

fn get_affine(r: &mut Reader) -> Result<Option<Affine>> {
    if !get_bool(r, "affine flag")? {
        return Ok(None);
    }
    let at = r.offset();
    let offset = get_vec(r, "affine offset")?;
    let scale = get_vec(r, "affine scale")?;
    if offset.len() != scale.len() {
        return Err(Error::format(at, "affine offset and scale lengths differ"));
    }
    Ok(Some(Affine { offset, scale }))
}

fn family_code(f: Family) -> u8 {
    Tag::of_family(f) as u8
}

fn put_network_model(w: &mut Writer, m: &NetworkModel) {
    w.u8(family_code(m.family));
    w.len(m.latent_dim);
    w.len(m.input_len);
    w.u64(m.seed);
    w.f64(m.train_rss);
    put_network(w, &m.encoder);
    match &m.decoder {
        None => w.u8(0),
        Some(d) => {
            w.u8(1);
            put_network(w, d);
        }
    }
    put_affine(w, &m.input_map);
    put_affine(w, &m.output_map);
    w.len(m.log.len());
    for e in &m.log {
        w.f64s(&[e.reconstruction, e.kl, e.kl_weight]);
    }
}

fn get_network_model(r: &mut Reader) -> Result<NetworkModel> {
    let at = r.offset();
    let family = match r.u8("family")? {
        1 => Family::Cae,
        2 => Family::Vae,
        3 => Family::Ffnn,
        v => return Err(Error::format(at, format!("unknown network family {v}"))),
    };
    let latent_dim = get_usize(r, "latent width")?;
    let input_len = get_usize(r, "input length")?;
    let seed = r.u64("seed")?;
    let train_rss = r.f64("train error")?;
    let encoder = get_network(r)?;
    let decoder = if get_bool(r, "decoder flag")? {
        Some(get_network(r)?)
    } else {
        None
    };
    if (family == Family::Ffnn) != decoder.is_none() {
        return Err(Error::format(at, format!("{} model has the wrong number of networks", family.name())));
    }
    let input_map = get_affine(r)?;
    let output_map = get_affine(r)?;
    let n = r.len("log length", 24)?;
    let mut log = Vec::with_capacity(n);
    for _ in 0..n {
        let v = r.f64s(3, "log entry")?;
        log.push(EpochLog {
            reconstruction: v[0],
            kl: v[1],
            kl_weight: v[2],
        });
    }
    Ok(NetworkModel {
        family,
        encoder,
        decoder,
        latent_dim,
        input_len,
        log,
        train_rss,
        seed,
        input_map,
        output_map,
    })
}

fn put_dmap(w: &mut Writer, d: &DMapModel) {
    put_matrix(w, &d.points);
    w.f64s(&[d.epsilon, d.alpha, d.t]);
    put_vec(w, &d.eigenvalues);
    put_matrix(w, &d.eigenvectors);
    put_vec(w, &d.density);
    put_indices(w, &d.selected);
}

fn get_dmap(r: &mut Reader) -> Result<DMapModel> {
    let at = r.offset();
    let points = get_matrix(r, "points")?;
    let p = r.f64s(3, "kernel parameters")?;
    let eigenvalues = get_vec(r, "eigenvalues")?;
    let eigenvectors = get_matrix(r, "eigenvectors")?;
    let density = get_vec(r, "density")?;
    let selected = get_indices(r, "selected")?;
    let n = points.rows();
    if eigenvectors.rows() != n
        || density.len() != n
        || eigenvectors.cols() != eigenvalues.len()
        || selected.iter().any(|&i| i >= eigenvalues.len())
    {
        return Err(Error::format(at, "diffusion map arrays disagree in size"));
    }
    Ok(DMapModel {
        points,
        epsilon: p[0],
        alpha: p[1],
        t: p[2],
        eigenvalues,
        eigenvectors,
        density,
        selected,
    })
}

fn put_pyramid(w: &mut Writer, p: &PyramidModel) {
    put_matrix(w, &p.latents);
    w.len(p.levels.len());
    for l in &p.levels {
        w.f64(l.sigma);
        put_matrix(w, &l.residuals);
    }
    w.f64(p.stop_tolerance);
    w.len(p.max_levels);
    put_vec(w, &p.train_errors);
    w.u8(p.ill_posed as u8);
}

fn get_pyramid(r: &mut Reader) -> Result<PyramidModel> {
    let at = r.offset();
    let latents = get_matrix(r, "latents")?;
    let n = r.len("level count", 24)?;
    let mut levels = Vec::with_capacity(n);
    for _ in 0..n {
        let sigma = r.f64("sigma")?;
        let residuals = get_matrix(r, "residuals")?;
        levels.push(PyramidLevel { sigma, residuals });
    }
    let stop_tolerance = r.f64("stop tolerance")?;
    let max_levels = get_usize(r, "max levels")?;
    let train_errors = get_vec(r, "train errors")?;
    let ill_posed = get_bool(r, "ill-posed flag")?;
    if levels.is_empty() || levels.iter().any(|l| l.residuals.rows() != latents.rows() || l.residuals.cols() != levels[0].residuals.cols()) {
        return Err(Error::format(at, "pyramid levels disagree with the training latents"));
    }
    Ok(PyramidModel {
        latents,
        levels,
        stop_tolerance,
        max_levels,
        train_errors,
        ill_posed,
    })
}

fn kind_code(k: CompressorKind) -> u8 {
    match k {
        CompressorKind::Dmaps => 0,
        CompressorKind::Cae => 1,
        CompressorKind::Vae => 2,
    }
}

fn get_kind(r: &mut Reader) -> Result<CompressorKind> {
    let at = r.offset();
    match r.u8("compressor kind")? {
        0 => Ok(CompressorKind::Dmaps),
        1 => Ok(CompressorKind::Cae),
        2 => Ok(CompressorKind::Vae),
        v => Err(Error::format(at, format!("unknown compressor kind {v}"))),
    }
}

fn put_bundle(w: &mut Writer, b: &PipelineBundle) {
    w.u8(kind_code(b.kind));
    w.len(b.latent_dim);
    match b.scaling {
        None => w.u8(0),
        Some(s) => {
            w.u8(1);
            w.f64s(&[s.offset, s.scale]);
        }
    }
    put_vec(w, &b.grid1);
    put_vec(w, &b.grid2);
    w.len(b.samples_per_record);
    w.f64(b.sample_period);
    w.u64(b.fingerprint);
    w.len(b.paths.len());
    for p in &b.paths {
        let c = &p.compressor;
        w.u8(kind_code(c.kind));
        w.len(c.latent_dim);
        w.u32(c.path);
        match &c.model {
            Compressor::Dmaps { dmap, pyramid } => {
                w.u8(0);
                put_dmap(w, dmap);
                put_pyramid(w, pyramid);
            }
            Compressor::Network(m) => {
                w.u8(1);
                put_network_model(w, m);
            }
        }
        put_network_model(w, &p.estimator);
        put_network_model(w, &p.generator);
        put_indices(w, &p.estimator_inputs);
    }
}

fn get_bundle(r: &mut Reader) -> Result<PipelineBundle> {
    let kind = get_kind(r)?;
    let latent_dim = get_usize(r, "latent width")?;
    let scaling = if get_bool(r, "scaling flag")? {
        let v = r.f64s(2, "scaling")?;
        Some(Scaling {
            offset: v[0],
            scale: v[1],
        })
    } else {
        None
    };
    let grid1 = get_vec(r, "grid1")?;
    let grid2 = get_vec(r, "grid2")?;
    let samples_per_record = get_usize(r, "samples per record")?;
    let sample_period = r.f64("sample period")?;
    let fingerprint = r.u64("fingerprint")?;
    let n = r.len("path count", 1)?;
    let mut paths = Vec::with_capacity(n);
    for _ in 0..n {
        let at = r.offset();
        let ckind = get_kind(r)?;
        let clatent = get_usize(r, "latent width")?;
        let path = r.u32("path id")?;
        let model = if get_bool(r, "compressor variant")? {
            Compressor::Network(get_network_model(r)?)
        } else {
            Compressor::Dmaps {
                dmap: get_dmap(r)?,
                pyramid: get_pyramid(r)?,
            }
        };
        let estimator = get_network_model(r)?;
        let generator = get_network_model(r)?;
        let estimator_inputs = get_indices(r, "estimator inputs")?;
        if estimator.family != Family::Ffnn || generator.family != Family::Ffnn {
            return Err(Error::format(at, "estimator and generator must be regressors"));
        }
        paths.push(PathBundle {
            compressor: CompressorHandle {
                kind: ckind,
                latent_dim: clatent,
                path,
                model,
            },
            estimator,
            generator,
            estimator_inputs,
        });
    }
    Ok(PipelineBundle {
        kind,
        latent_dim,
        paths,
        scaling,
        grid1,
        grid2,
        samples_per_record,
        sample_period,
        fingerprint,
    })
}
