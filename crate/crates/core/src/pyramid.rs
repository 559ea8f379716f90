//! Laplacian pyramids: multiscale kernel regression from latent coordinates
//! back to ambient waveforms.
//!
//! Level `l` smooths the residual left by levels `0..l` with a normalized
//! Gaussian of scale `σ_l = σ_0 / 2^l`. Lifting a query sums every level's
//! smoothed residual evaluated at the query.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::linalg::{self, Matrix};
use crate::signal::rss_sss;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PyramidConfig {
    /// Coarsest scale; `None` uses 4x the largest squared latent distance.
    pub sigma0: Option<f64>,
    /// Mean training RSS/SSS (%) at which refinement stops.
    pub stop_tolerance: f64,
    pub max_levels: usize,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        Self {
            sigma0: None,
            stop_tolerance: 0.5,
            max_levels: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PyramidLevel {
    pub sigma: f64,
    /// Residual targets `d_l` at the training latents, N x m.
    pub residuals: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PyramidModel {
    /// Training latents, N x d.
    pub latents: Matrix,
    pub levels: Vec<PyramidLevel>,
    pub stop_tolerance: f64,
    pub max_levels: usize,
    /// Mean training RSS/SSS after each level.
    pub train_errors: Vec<f64>,
    /// Identical latents carried different outputs; the fit averages them.
    pub ill_posed: bool,
}

/// Output of [`PyramidModel::lift`].
#[derive(Debug, Clone, PartialEq)]
pub struct Lift {
    pub output: Vec<f64>,
    /// Kernel weights underflowed at every level; `output` is the nearest
    /// training output.
    pub out_of_range: bool,
}

const UNDERFLOW: f64 = 1e-300;

/// Normalized kernel weights of `query` against the rows of `latents`, or
/// `None` when they all underflow.
fn level_weights(latents: &Matrix, query: &[f64], sigma: f64, out: &mut [f64]) -> bool {
    let mut total = 0.0;
    for (i, w) in out.iter_mut().enumerate() {
        *w = libm::exp(-linalg::squared_distance(latents.row(i), query) / sigma);
        total += *w;
    }
    if total < UNDERFLOW {
        return false;
    }
    for w in out.iter_mut() {
        *w /= total;
    }
    true
}

fn mean_rss(outputs: &Matrix, approx: &Matrix) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..outputs.rows() {
        if let Ok(e) = rss_sss(outputs.row(i), approx.row(i)) {
            sum += e;
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Fits a pyramid mapping `latents` (N x d) to `outputs` (N x m).
pub fn fit_pyramid(
    latents: &Matrix,
    outputs: &Matrix,
    config: &PyramidConfig,
) -> Result<PyramidModel> {
    let n = latents.rows();
    if n == 0 {
        bail!(Degenerate, "pyramid needs at least one training pair");
    }
    if outputs.rows() != n {
        bail!(Dimension, "{n} latents but {} outputs", outputs.rows());
    }
    if config.max_levels == 0 {
        bail!(Config, "pyramid needs at least one level");
    }
    if !latents
        .as_slice()
        .iter()
        .chain(outputs.as_slice())
        .all(|x| x.is_finite())
    {
        bail!(Numeric, "pyramid inputs contain non-finite values");
    }
    let sq = linalg::pairwise_squared_distances(latents);
    let sigma0 = match config.sigma0 {
        Some(s) if s > 0.0 && s.is_finite() => s,
        Some(s) => bail!(Config, "sigma0 must be positive, got {s}"),
        None => {
            let max = sq.as_slice().iter().copied().fold(0.0, f64::max);
            if max > 0.0 {
                4.0 * max
            } else {
                1.0
            }
        }
    };
    let mut ill_posed = false;
    for i in 0..n {
        for j in (i + 1)..n {
            if sq[(i, j)] == 0.0 && outputs.row(i) != outputs.row(j) {
                ill_posed = true;
            }
        }
    }

    let m = outputs.cols();
    let mut approx = Matrix::zeros(n, m);
    let mut residual = outputs.clone();
    let mut levels = Vec::new();
    let mut train_errors: Vec<f64> = Vec::new();
    let mut sigma = sigma0;
    let mut weights = vec![0.0; n];
    while levels.len() < config.max_levels {
        let mut next = approx.clone();
        for k in 0..n {
            if !level_weights(latents, latents.row(k), sigma, &mut weights) {
                continue;
            }
            let dst = next.row_mut(k);
            for (i, &w) in weights.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                for (d, r) in dst.iter_mut().zip(residual.row(i)) {
                    *d += w * r;
                }
            }
        }
        let err = mean_rss(outputs, &next);
        if let Some(&prev) = train_errors.last() {
            if err > prev {
                break;
            }
        }
        levels.push(PyramidLevel {
            sigma,
            residuals: residual.clone(),
        });
        train_errors.push(err);
        approx = next;
        if err <= config.stop_tolerance {
            break;
        }
        for k in 0..n {
            let (out, app) = (outputs.row(k), approx.row(k));
            for (r, (o, a)) in residual.row_mut(k).iter_mut().zip(out.iter().zip(app)) {
                *r = o - a;
            }
        }
        sigma *= 0.5;
    }
    Ok(PyramidModel {
        latents: latents.clone(),
        levels,
        stop_tolerance: config.stop_tolerance,
        max_levels: config.max_levels,
        train_errors,
        ill_posed,
    })
}

impl PyramidModel {
    pub fn latent_dim(&self) -> usize {
        self.latents.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.levels[0].residuals.cols()
    }

    /// Evaluates the accumulated multiscale smoother at `query`.
    pub fn lift(&self, query: &[f64]) -> Result<Lift> {
        if query.len() != self.latent_dim() {
            bail!(
                Dimension,
                "query has {} coordinates, pyramid expects {}",
                query.len(),
                self.latent_dim()
            );
        }
        if !query.iter().all(|x| x.is_finite()) {
            bail!(Numeric, "query contains non-finite values");
        }
        let n = self.latents.rows();
        let mut output = vec![0.0; self.output_dim()];
        let mut weights = vec![0.0; n];
        let mut any = false;
        for level in &self.levels {
            if !level_weights(&self.latents, query, level.sigma, &mut weights) {
                continue;
            }
            any = true;
            for (i, &w) in weights.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                for (o, r) in output.iter_mut().zip(level.residuals.row(i)) {
                    *o += w * r;
                }
            }
        }
        if !any {
            let nearest = (0..n)
                .min_by(|&a, &b| {
                    linalg::squared_distance(self.latents.row(a), query)
                        .total_cmp(&linalg::squared_distance(self.latents.row(b), query))
                })
                .unwrap_or(0);
            return Ok(Lift {
                output: self.levels[0].residuals.row(nearest).to_vec(),
                out_of_range: true,
            });
        }
        Ok(Lift {
            output,
            out_of_range: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(n: usize, m: usize) -> (Matrix, Matrix) {
        let lat: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64 / (n - 1) as f64]).collect();
        let out: Vec<Vec<f64>> = lat
            .iter()
            .map(|l| {
                (0..m)
                    .map(|t| libm::sin(0.3 * t as f64 + 2.0 * l[0]) * (1.0 + l[0]))
                    .collect()
            })
            .collect();
        (
            Matrix::from_rows(&lat).unwrap(),
            Matrix::from_rows(&out).unwrap(),
        )
    }

    #[test]
    fn single_pair_is_reproduced() {
        let lat = Matrix::from_rows(&[[0.3, -1.0]]).unwrap();
        let out = Matrix::from_rows(&[[1.0, 2.0, -3.0]]).unwrap();
        let model = fit_pyramid(&lat, &out, &PyramidConfig::default()).unwrap();
        let lift = model.lift(&[0.3, -1.0]).unwrap();
        assert_eq!(lift.output, vec![1.0, 2.0, -3.0]);
    }

    #[test]
    fn sigma_halves_and_level_zero_holds_outputs() {
        let (lat, out) = curve(20, 16);
        let model = fit_pyramid(
            &lat,
            &out,
            &PyramidConfig {
                stop_tolerance: 0.0,
                max_levels: 6,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(model.levels[0].residuals, out);
        for w in model.levels.windows(2) {
            assert_eq!(w[1].sigma, w[0].sigma / 2.0);
        }
        assert!(model.train_errors.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn one_level_is_one_smoothing_pass() {
        let (lat, out) = curve(10, 8);
        let model = fit_pyramid(
            &lat,
            &out,
            &PyramidConfig {
                sigma0: Some(0.05),
                max_levels: 1,
                stop_tolerance: 0.0,
            },
        )
        .unwrap();
        assert_eq!(model.levels.len(), 1);
        let q = [0.42];
        let mut w: Vec<f64> = (0..10)
            .map(|i| libm::exp(-(lat[(i, 0)] - q[0]).powi(2) / 0.05))
            .collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= s);
        let expected: Vec<f64> = (0..8)
            .map(|t| (0..10).map(|i| w[i] * out[(i, t)]).sum())
            .collect();
        let got = model.lift(&q).unwrap().output;
        for (a, b) in got.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn bad_sigma_is_config_error() {
        let (lat, out) = curve(4, 4);
        let cfg = PyramidConfig {
            sigma0: Some(0.0),
            ..Default::default()
        };
        assert!(matches!(
            fit_pyramid(&lat, &out, &cfg),
            Err(crate::Error::Config(_))
        ));
    }

    #[test]
    fn conflicting_duplicates_flagged() {
        let lat = Matrix::from_rows(&[[0.0], [0.0], [1.0]]).unwrap();
        let out = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
        let model = fit_pyramid(&lat, &out, &PyramidConfig::default()).unwrap();
        assert!(model.ill_posed);
        let avg = model.lift(&[0.0]).unwrap().output;
        assert!((avg[0] - 0.5).abs() < 0.05 && (avg[1] - 0.5).abs() < 0.05);
    }

    #[test]
    fn far_query_falls_back_to_nearest() {
        let (lat, out) = curve(10, 4);
        let model = fit_pyramid(
            &lat,
            &out,
            &PyramidConfig {
                sigma0: Some(1e-3),
                max_levels: 3,
                stop_tolerance: 0.0,
            },
        )
        .unwrap();
        let lift = model.lift(&[50.0]).unwrap();
        assert!(lift.out_of_range);
        assert_eq!(lift.output, out.row(9).to_vec());
        assert!(model.lift(&[0.0, 1.0]).is_err());
    }
}
