//! Diffusion maps: Gaussian affinities, α-normalized Markov operator,
//! spectral embedding, parsimonious eigenvector selection and Nyström
//! extension of new points.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::linalg::{self, Matrix};

/// Kernel bandwidth choice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    /// Median of the nonzero squared pairwise distances.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    /// Leading `d` non-trivial eigenvectors.
    TopD,
    /// Best `d` of the leading `candidates` by local-linear residual.
    Parsimonious { candidates: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DMapConfig {
    pub epsilon: Bandwidth,
    /// Density exponent in [0, 1].
    pub alpha: f64,
    /// Diffusion time.
    pub t: f64,
    /// Embedding dimension.
    pub d: usize,
    pub selection: Selection,
}

impl Default for DMapConfig {
    fn default() -> Self {
        Self {
            epsilon: Bandwidth::Auto,
            alpha: 1.0,
            t: 1.0,
            d: 3,
            selection: Selection::TopD,
        }
    }
}

impl DMapConfig {
    fn validate(&self, n: usize) -> Result<()> {
        if let Bandwidth::Fixed(e) = self.epsilon {
            if !(e > 0.0 && e.is_finite()) {
                bail!(Config, "epsilon must be positive, got {e}");
            }
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            bail!(Config, "alpha must lie in [0, 1], got {}", self.alpha);
        }
        if !(self.t >= 0.0 && self.t.is_finite()) {
            bail!(Config, "diffusion time must be non-negative");
        }
        if self.d == 0 || self.d >= n {
            bail!(
                Config,
                "embedding dimension {} must satisfy 0 < d < N = {n}",
                self.d
            );
        }
        if let Selection::Parsimonious { candidates } = self.selection {
            if self.d > candidates {
                bail!(
                    Config,
                    "cannot select {} eigenvectors from {candidates} candidates",
                    self.d
                );
            }
        }
        Ok(())
    }
}

/// Fitted diffusion map.
#[derive(Debug, Clone, PartialEq)]
pub struct DMapModel {
    /// Training points, one per row.
    pub points: Matrix,
    pub epsilon: f64,
    pub alpha: f64,
    pub t: f64,
    /// Non-trivial eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Matching unit-norm right eigenvectors of the Markov operator, N x c.
    pub eigenvectors: Matrix,
    /// Kernel row sums `P_ii` of the training set.
    pub density: Vec<f64>,
    /// Indices into `eigenvalues` forming the embedding, ascending.
    pub selected: Vec<usize>,
}

/// Row-stochastic operator plus the normalizers needed to rebuild it.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovOperator {
    pub transition: Matrix,
    /// `P_ii = Σ_j K_ij`.
    pub density: Vec<f64>,
    /// Row sums of the α-normalized kernel.
    pub degree: Vec<f64>,
}

fn check_finite(points: &Matrix) -> Result<()> {
    if !points.as_slice().iter().all(|x| x.is_finite()) {
        bail!(Numeric, "points contain non-finite values");
    }
    Ok(())
}

/// `K_ij = exp(-|y_i - y_j|² / (2ε))`.
pub fn gaussian_kernel(points: &Matrix, epsilon: f64) -> Result<Matrix> {
    if points.rows() < 2 {
        bail!(Degenerate, "kernel needs at least two points");
    }
    if !(epsilon > 0.0) {
        bail!(Config, "epsilon must be positive, got {epsilon}");
    }
    check_finite(points)?;
    let mut k = linalg::pairwise_squared_distances(points);
    let n = k.rows();
    for i in 0..n {
        for j in 0..n {
            k[(i, j)] = libm::exp(-k[(i, j)] / (2.0 * epsilon));
        }
    }
    Ok(k)
}

fn median_nonzero(sq: &Matrix) -> Option<f64> {
    let n = sq.rows();
    let mut pool: Vec<f64> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .map(|(i, j)| sq[(i, j)])
        .filter(|&d| d > 0.0)
        .collect();
    linalg::median(&mut pool)
}

/// Median of the nonzero squared pairwise distances.
pub fn median_epsilon(points: &Matrix) -> Result<f64> {
    if points.rows() < 2 {
        bail!(Degenerate, "bandwidth needs at least two points");
    }
    check_finite(points)?;
    match median_nonzero(&linalg::pairwise_squared_distances(points)) {
        Some(e) => Ok(e),
        None => bail!(Degenerate, "all points are identical"),
    }
}

/// Density normalization `K_ij / (P_i^α P_j^α)` followed by row normalization.
pub fn normalize_to_markov(kernel: &Matrix, alpha: f64) -> Result<MarkovOperator> {
    let n = kernel.rows();
    if kernel.cols() != n {
        bail!(Dimension, "kernel must be square");
    }
    let density: Vec<f64> = (0..n).map(|i| kernel.row(i).iter().sum()).collect();
    if density.iter().any(|&p| !(p > 0.0)) {
        bail!(Numeric, "kernel has a zero row sum");
    }
    let scale: Vec<f64> = density.iter().map(|&p| libm::pow(p, -alpha)).collect();
    let mut l = Matrix::zeros(n, n);
    let mut degree = vec![0.0; n];
    for i in 0..n {
        let row = l.row_mut(i);
        let src = kernel.row(i);
        for j in 0..n {
            row[j] = src[j] * scale[i] * scale[j];
        }
        let sum: f64 = row.iter().sum();
        if !(sum > 0.0) {
            bail!(Numeric, "normalized kernel row {i} sums to zero");
        }
        degree[i] = sum;
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
    Ok(MarkovOperator {
        transition: l,
        density,
        degree,
    })
}

fn fix_sign(v: &mut [f64]) {
    let mut best = 0usize;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

fn coefficient_of_variation(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    if mean == 0.0 {
        f64::INFINITY
    } else {
        libm::sqrt(var) / mean.abs()
    }
}

/// Eigenpairs of the Markov operator with the trivial pair removed.
///
/// Returns at most `count` pairs, eigenvalues descending, eigenvectors
/// unit-norm with the largest-magnitude entry positive.
pub fn markov_eigenpairs(op: &MarkovOperator, count: usize) -> Result<(Vec<f64>, Matrix)> {
    let n = op.transition.rows();
    // D^{1/2} L D^{-1/2} is symmetric because L = D^{-1} K̃ with K̃ symmetric.
    let sqrt_deg: Vec<f64> = op.degree.iter().map(|&d| libm::sqrt(d)).collect();
    let mut s = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            s[(i, j)] = op.transition[(i, j)] * sqrt_deg[i] / sqrt_deg[j];
        }
    }
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (s[(i, j)] + s[(j, i)]);
            s[(i, j)] = avg;
            s[(j, i)] = avg;
        }
    }
    let (vals, vecs) = linalg::symmetric_eigen(&s)?;
    let mut values = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for k in (0..n).rev() {
        if values.len() == count {
            break;
        }
        let mut v: Vec<f64> = (0..n).map(|i| vecs[(i, k)] / sqrt_deg[i]).collect();
        let nv = linalg::norm(&v);
        for x in v.iter_mut() {
            *x /= nv;
        }
        if (vals[k] - 1.0).abs() < 1e-9 && coefficient_of_variation(&v) < 1e-6 {
            continue;
        }
        fix_sign(&mut v);
        values.push(vals[k].min(1.0));
        columns.push(v);
    }
    let mut out = Matrix::zeros(n, columns.len());
    for (c, v) in columns.iter().enumerate() {
        for i in 0..n {
            out[(i, c)] = v[i];
        }
    }
    Ok((values, out))
}

/// Fits a diffusion map on the rows of `points`.
pub fn fit(points: &Matrix, config: &DMapConfig) -> Result<DMapModel> {
    let n = points.rows();
    if n < 2 {
        bail!(Degenerate, "diffusion maps need at least two points");
    }
    config.validate(n)?;
    let epsilon = match config.epsilon {
        Bandwidth::Auto => median_epsilon(points)?,
        Bandwidth::Fixed(e) => e,
    };
    let kernel = gaussian_kernel(points, epsilon)?;
    let op = normalize_to_markov(&kernel, config.alpha)?;
    spectral_embed(points.clone(), epsilon, &op, config)
}

/// Eigen-decomposes `op` and assembles the model.
pub fn spectral_embed(
    points: Matrix,
    epsilon: f64,
    op: &MarkovOperator,
    config: &DMapConfig,
) -> Result<DMapModel> {
    let n = op.transition.rows();
    config.validate(n)?;
    let wanted = match config.selection {
        Selection::TopD => config.d,
        Selection::Parsimonious { candidates } => candidates.min(n - 1),
    };
    let (eigenvalues, eigenvectors) = markov_eigenpairs(op, wanted)?;
    if eigenvalues.len() < config.d {
        bail!(
            Numeric,
            "only {} non-trivial eigenpairs available, {} requested",
            eigenvalues.len(),
            config.d
        );
    }
    let selected = match config.selection {
        Selection::TopD => (0..config.d).collect(),
        Selection::Parsimonious { .. } => parsimonious_select(&eigenvectors, config.d)?.0,
    };
    if let Some(&bad) = selected.iter().find(|&&i| !(eigenvalues[i] > 0.0)) {
        bail!(
            Numeric,
            "selected eigenvalue {} is not positive",
            eigenvalues[bad]
        );
    }
    Ok(DMapModel {
        points,
        epsilon,
        alpha: config.alpha,
        t: config.t,
        eigenvalues,
        eigenvectors,
        density: op.density.clone(),
        selected,
    })
}

/// Leave-one-out local linear regression residual of each eigenvector on
/// its predecessors; picks the `d` eigenvectors with the largest residuals.
///
/// Returns the selected indices (ascending) and all residuals.
pub fn parsimonious_select(eigenvectors: &Matrix, d: usize) -> Result<(Vec<usize>, Vec<f64>)> {
    let c = eigenvectors.cols();
    if d > c {
        bail!(Config, "cannot select {d} of {c} eigenvectors");
    }
    let residuals: Vec<f64> = (0..c)
        .map(|k| {
            if k == 0 {
                1.0
            } else {
                local_linear_residual(eigenvectors, k)
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| residuals[b].total_cmp(&residuals[a]).then(a.cmp(&b)));
    let mut chosen: Vec<usize> = order.into_iter().take(d).collect();
    chosen.sort_unstable();
    Ok((chosen, residuals))
}

fn local_linear_residual(v: &Matrix, k: usize) -> f64 {
    let n = v.rows();
    let preds: Vec<&[f64]> = (0..n).map(|i| &v.row(i)[..k]).collect();
    let target: Vec<f64> = v.column(k);
    let mut sq = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = linalg::squared_distance(preds[i], preds[j]);
            sq[(i, j)] = d;
            sq[(j, i)] = d;
        }
    }
    let scale = match median_nonzero(&sq) {
        Some(m) => libm::sqrt(m) / 3.0,
        None => return 1.0,
    };
    let inv = 1.0 / (scale * scale);
    let p = k + 1;
    let mut num = 0.0;
    let mut den = 0.0;
    let mut ata;
    let mut aty = vec![0.0; p];
    let mut row = vec![0.0; p];
    for i in 0..n {
        ata = Matrix::zeros(p, p);
        aty.iter_mut().for_each(|x| *x = 0.0);
        for j in 0..n {
            if j == i {
                continue;
            }
            let w = libm::exp(-sq[(i, j)] * inv);
            if w == 0.0 {
                continue;
            }
            row[0] = 1.0;
            for a in 0..k {
                row[a + 1] = preds[j][a] - preds[i][a];
            }
            for a in 0..p {
                aty[a] += w * row[a] * target[j];
                for b in 0..p {
                    ata[(a, b)] += w * row[a] * row[b];
                }
            }
        }
        let ridge = 1e-10 * (0..p).map(|a| ata[(a, a)]).fold(0.0, f64::max).max(1e-300);
        for a in 0..p {
            ata[(a, a)] += ridge;
        }
        let fit = linalg::solve(&ata, &aty).map(|b| b[0]).unwrap_or(0.0);
        num += (target[i] - fit) * (target[i] - fit);
        den += target[i] * target[i];
    }
    if den == 0.0 {
        return 0.0;
    }
    libm::sqrt(num / den).clamp(0.0, 1.0)
}

/// Result of embedding a point that was not part of the training set.
#[derive(Debug, Clone, PartialEq)]
pub struct Extension {
    pub coords: Vec<f64>,
    /// Every kernel weight underflowed; `coords` are the nearest training
    /// point's embedding.
    pub out_of_range: bool,
}

impl DMapModel {
    pub fn dim(&self) -> usize {
        self.selected.len()
    }

    pub fn ambient_dim(&self) -> usize {
        self.points.cols()
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.rows() == 0
    }

    /// Diffusion coordinates `λ_i^t v_i(j)` of every training point, N x d.
    pub fn embedding(&self) -> Matrix {
        let n = self.len();
        let mut out = Matrix::zeros(n, self.dim());
        for (c, &i) in self.selected.iter().enumerate() {
            let lt = libm::pow(self.eigenvalues[i], self.t);
            for j in 0..n {
                out[(j, c)] = lt * self.eigenvectors[(j, i)];
            }
        }
        out
    }

    /// Rebuilds the training Markov operator from the stored points.
    pub fn markov_operator(&self) -> Result<MarkovOperator> {
        let k = gaussian_kernel(&self.points, self.epsilon)?;
        normalize_to_markov(&k, self.alpha)
    }

    /// Nyström extension of `query` onto the selected coordinates.
    pub fn extend(&self, query: &[f64]) -> Result<Extension> {
        if query.len() != self.ambient_dim() {
            bail!(
                Dimension,
                "query has {} samples, model expects {}",
                query.len(),
                self.ambient_dim()
            );
        }
        if !query.iter().all(|x| x.is_finite()) {
            bail!(Numeric, "query contains non-finite values");
        }
        let n = self.len();
        let dists: Vec<f64> = (0..n)
            .map(|j| linalg::squared_distance(query, self.points.row(j)))
            .collect();
        let weights: Vec<f64> = dists
            .iter()
            .map(|&d| libm::exp(-d / (2.0 * self.epsilon)))
            .collect();
        if weights.iter().all(|&w| w < 1e-300) {
            let nearest = (0..n)
                .min_by(|&a, &b| dists[a].total_cmp(&dists[b]))
                .unwrap_or(0);
            let emb = self.embedding();
            return Ok(Extension {
                coords: emb.row(nearest).to_vec(),
                out_of_range: true,
            });
        }
        let pq: f64 = weights.iter().sum();
        let pq_a = libm::pow(pq, -self.alpha);
        let mut row: Vec<f64> = weights
            .iter()
            .zip(&self.density)
            .map(|(&w, &p)| w * pq_a * libm::pow(p, -self.alpha))
            .collect();
        let total: f64 = row.iter().sum();
        for x in row.iter_mut() {
            *x /= total;
        }
        let coords = self
            .selected
            .iter()
            .map(|&i| {
                let lambda = self.eigenvalues[i];
                let s: f64 = (0..n).map(|j| row[j] * self.eigenvectors[(j, i)]).sum();
                libm::pow(lambda, self.t - 1.0) * s
            })
            .collect();
        Ok(Extension {
            coords,
            out_of_range: false,
        })
    }
}
