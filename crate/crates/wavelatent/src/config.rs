//! Plain-text run configuration.
//!
//! One `key = value` pair per line; `#` starts a comment, blank lines are
//! ignored, a repeated key keeps its last value. Command-line flags are
//! applied afterwards and win. Lists are comma-separated.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use wavelatent_core::dmaps::{Bandwidth, Selection};
use wavelatent_core::pipeline::{CompressorKind, PipelineConfig};
use wavelatent_core::signal::ScaleMode;

use crate::error::{Error, Result};

/// Every key the front end understands, with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("kind", "compressor: dmaps, cae or vae"),
    ("latent_dim", "latent width D"),
    ("seed", "master seed for generation and fitting"),
    ("scaling", "global sample scaling: none, minmax or zscore"),
    ("paths", "restrict fitting to these path ids"),
    ("latent_subset", "latent coordinates fed to the state estimator"),
    ("train_trials", "fit on at most this many trials per state (half where fewer exist)"),
    ("epochs", "autoencoder epochs"),
    ("batch_size", "autoencoder mini-batch size"),
    ("learning_rate", "autoencoder Adam step size"),
    ("lr_final", "autoencoder final step size as a fraction of the first"),
    ("kl_weight", "VAE KL weight"),
    ("kl_warmup", "fraction of epochs over which the KL weight ramps up"),
    ("patience", "autoencoder early-stop patience in epochs"),
    ("ffnn_epochs", "regressor epochs"),
    ("ffnn_batch_size", "regressor mini-batch size"),
    ("ffnn_learning_rate", "regressor Adam step size"),
    ("ffnn_lr_final", "regressor final step size as a fraction of the first"),
    ("ffnn_patience", "regressor early-stop patience in epochs"),
    ("ffnn_hidden", "regressor hidden layer widths"),
    ("dmap_epsilon", "kernel bandwidth: auto or a positive number"),
    ("dmap_alpha", "density normalization exponent in [0, 1]"),
    ("dmap_t", "diffusion time"),
    ("dmap_selection", "top or parsimonious:<candidates>"),
    ("pyramid_tolerance", "pyramid stop tolerance, RSS/SSS percent"),
    ("pyramid_levels", "maximum pyramid levels"),
    ("pyramid_sigma0", "coarsest pyramid scale: auto or a positive number"),
    ("preset", "synthetic preset: case1, case1-full or case2"),
    ("trials", "synthetic trials per state"),
    ("snr_db", "synthetic SNR in dB, or inf"),
    ("samples_per_state", "VAE augmentation samples per state"),
    ("out_dir", "directory every output is written under"),
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    entries: BTreeMap<String, String>,
}

fn parse_value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::Usage(format!("invalid value {raw:?} for {key}")))
}

fn parse_list<T: FromStr>(key: &str, raw: &str) -> Result<Vec<T>> {
    raw.split(',').map(|v| parse_value(key, v.trim())).collect()
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("config line {}: expected key = value", i + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::Usage(format!("config line {}: {e}", i + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(Error::Usage(format!("unknown configuration key {key:?}")));
        }
        self.entries.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Parses a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("override {pair:?} is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.raw(key).map(|v| parse_value(key, v)).transpose()
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        self.raw(key).map(|v| parse_list(key, v)).transpose()
    }

    pub fn kind(&self) -> Result<Option<CompressorKind>> {
        self.raw("kind")
            .map(|v| v.parse().map_err(Error::Core))
            .transpose()
    }

    /// SNR in dB; `inf` means noise-free.
    pub fn snr_db(&self) -> Result<Option<Option<f64>>> {
        Ok(match self.raw("snr_db") {
            None => None,
            Some(v) if v.eq_ignore_ascii_case("inf") => Some(None),
            Some(v) => Some(Some(parse_value("snr_db", v)?)),
        })
    }

    /// Pipeline settings for `kind`, starting from its defaults.
    pub fn pipeline(&self, kind: CompressorKind) -> Result<PipelineConfig> {
        let mut p = PipelineConfig::new(kind);
        macro_rules! field {
            ($key:literal, $target:expr) => {
                if let Some(v) = self.get($key)? {
                    $target = v;
                }
            };
        }
        field!("latent_dim", p.latent_dim);
        field!("seed", p.seed);
        field!("epochs", p.autoencoder.epochs);
        field!("batch_size", p.autoencoder.batch_size);
        field!("learning_rate", p.autoencoder.learning_rate);
        field!("lr_final", p.autoencoder.lr_final);
        field!("kl_weight", p.autoencoder.kl_weight);
        field!("kl_warmup", p.autoencoder.kl_warmup);
        field!("ffnn_epochs", p.ffnn.epochs);
        field!("ffnn_batch_size", p.ffnn.batch_size);
        field!("ffnn_learning_rate", p.ffnn.learning_rate);
        field!("ffnn_lr_final", p.ffnn.lr_final);
        field!("dmap_alpha", p.dmap.alpha);
        field!("dmap_t", p.dmap.t);
        field!("pyramid_tolerance", p.pyramid.stop_tolerance);
        field!("pyramid_levels", p.pyramid.max_levels);
        if let Some(v) = self.get("patience")? {
            p.autoencoder.patience = Some(v);
        }
        if let Some(v) = self.get("ffnn_patience")? {
            p.ffnn.patience = Some(v);
        }
        if let Some(v) = self.list("ffnn_hidden")? {
            p.ffnn_hidden = v;
        }
        p.paths = self.list("paths")?;
        p.latent_subset = self.list("latent_subset")?;
        p.scaling = match self.raw("scaling") {
            None | Some("none") => None,
            Some("minmax") => Some(ScaleMode::MinMax),
            Some("zscore") => Some(ScaleMode::ZScore),
            Some(v) => return Err(Error::Usage(format!("invalid value {v:?} for scaling"))),
        };
        match self.raw("dmap_epsilon") {
            None | Some("auto") => {}
            Some(v) => p.dmap.epsilon = Bandwidth::Fixed(parse_value("dmap_epsilon", v)?),
        }
        match self.raw("pyramid_sigma0") {
            None | Some("auto") => {}
            Some(v) => p.pyramid.sigma0 = Some(parse_value("pyramid_sigma0", v)?),
        }
        match self.raw("dmap_selection") {
            None | Some("top") => {}
            Some(v) => {
                let n = v
                    .strip_prefix("parsimonious:")
                    .ok_or_else(|| Error::Usage(format!("invalid value {v:?} for dmap_selection")))?;
                p.dmap.selection = Selection::Parsimonious {
                    candidates: parse_value("dmap_selection", n)?,
                };
            }
        }
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let mut cfg = RunConfig::parse("# run\nkind = cae\nepochs=40 # short\n\nffnn_hidden = 16, 8\n").unwrap();
        cfg.set_pair("epochs=12").unwrap();
        let p = cfg.pipeline(cfg.kind().unwrap().unwrap()).unwrap();
        assert_eq!(p.kind, CompressorKind::Cae);
        assert_eq!(p.autoencoder.epochs, 12);
        assert_eq!(p.ffnn_hidden, vec![16, 8]);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(RunConfig::parse("colour = red"), Err(Error::Usage(_))));
        assert!(matches!(RunConfig::parse("epochs"), Err(Error::Usage(_))));
        let cfg = RunConfig::parse("epochs = many").unwrap();
        assert!(matches!(cfg.pipeline(CompressorKind::Cae), Err(Error::Usage(_))));
    }

    #[test]
    fn special_values() {
        let cfg = RunConfig::parse("snr_db = inf\ndmap_selection = parsimonious:6\ndmap_epsilon = 0.5\nscaling = zscore").unwrap();
        assert_eq!(cfg.snr_db().unwrap(), Some(None));
        let p = cfg.pipeline(CompressorKind::Dmaps).unwrap();
        assert_eq!(p.dmap.selection, Selection::Parsimonious { candidates: 6 });
        assert_eq!(p.dmap.epsilon, Bandwidth::Fixed(0.5));
        assert_eq!(p.scaling, Some(ScaleMode::ZScore));
    }
}
