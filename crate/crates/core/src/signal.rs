//! State-indexed signal records, dataset grids, splitting, global scaling and
//! the RSS/SSS reconstruction metric.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};

/// The two externally measurable state variables of one experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateVector {
    pub k1: f64,
    pub k2: f64,
}

impl StateVector {
    pub const fn new(k1: f64, k2: f64) -> Self {
        Self { k1, k2 }
    }

    pub fn is_finite(&self) -> bool {
        self.k1.is_finite() && self.k2.is_finite()
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.k1, self.k2]
    }

    pub fn component(&self, c: usize) -> f64 {
        match c {
            0 => self.k1,
            _ => self.k2,
        }
    }
}

/// One recorded waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalRecord {
    pub state: StateVector,
    pub path_id: u32,
    pub trial_id: u32,
    pub samples: Vec<f64>,
    /// Seconds between consecutive samples.
    pub sample_period: f64,
}

/// The full record collection over an `M1 x M2` state grid.
///
/// `trials[i * M2 + j]` is the number of trials recorded at `(grid1[i],
/// grid2[j])` on every path.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetGrid {
    grid1: Vec<f64>,
    grid2: Vec<f64>,
    paths: Vec<u32>,
    trials: Vec<u32>,
    samples_per_record: usize,
    sample_period: f64,
    records: Vec<SignalRecord>,
}

fn strictly_sorted(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite()) && v.windows(2).all(|w| w[0] < w[1])
}

impl DatasetGrid {
    /// Builds a dataset and checks every grid invariant.
    pub fn new(
        grid1: Vec<f64>,
        grid2: Vec<f64>,
        paths: Vec<u32>,
        trials: Vec<u32>,
        samples_per_record: usize,
        sample_period: f64,
        records: Vec<SignalRecord>,
    ) -> Result<Self> {
        if !strictly_sorted(&grid1) || !strictly_sorted(&grid2) {
            bail!(Config, "state grids must be finite, sorted and distinct");
        }
        if grid1.is_empty() || grid2.is_empty() {
            bail!(Config, "state grids must not be empty");
        }
        if trials.len() != grid1.len() * grid2.len() {
            bail!(
                Dimension,
                "trial table has {} entries for a {}x{} grid",
                trials.len(),
                grid1.len(),
                grid2.len()
            );
        }
        if samples_per_record < 2 {
            bail!(Config, "records need at least 2 samples");
        }
        if !(sample_period.is_finite() && sample_period > 0.0) {
            bail!(Config, "sample period must be positive");
        }
        let mut paths = paths;
        paths.sort_unstable();
        paths.dedup();
        let ds = Self {
            grid1,
            grid2,
            paths,
            trials,
            samples_per_record,
            sample_period,
            records,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Infers grids, paths and trial counts from the records themselves.
    pub fn from_records(records: Vec<SignalRecord>) -> Result<Self> {
        let Some(first) = records.first() else {
            bail!(Degenerate, "cannot infer a grid from zero records");
        };
        let m = first.samples.len();
        let period = first.sample_period;
        let mut g1: Vec<f64> = records.iter().map(|r| r.state.k1).collect();
        let mut g2: Vec<f64> = records.iter().map(|r| r.state.k2).collect();
        for g in [&mut g1, &mut g2] {
            g.sort_by(f64::total_cmp);
            g.dedup();
        }
        let paths: Vec<u32> = {
            let mut p: Vec<u32> = records.iter().map(|r| r.path_id).collect();
            p.sort_unstable();
            p.dedup();
            p
        };
        let first_path = paths[0];
        let mut trials = vec![0u32; g1.len() * g2.len()];
        for r in records.iter().filter(|r| r.path_id == first_path) {
            let i = g1.iter().position(|&v| v == r.state.k1).unwrap_or(0);
            let j = g2.iter().position(|&v| v == r.state.k2).unwrap_or(0);
            trials[i * g2.len() + j] += 1;
        }
        Self::new(g1, g2, paths, trials, m, period, records)
    }

    fn validate(&self) -> Result<()> {
        let m2 = self.grid2.len();
        let mut counts: BTreeMap<(usize, u32), u32> = BTreeMap::new();
        let mut seen: BTreeMap<(usize, u32, u32), ()> = BTreeMap::new();
        for (n, r) in self.records.iter().enumerate() {
            if r.samples.len() != self.samples_per_record {
                bail!(
                    Dimension,
                    "record {n} has {} samples, dataset declares {}",
                    r.samples.len(),
                    self.samples_per_record
                );
            }
            if r.sample_period != self.sample_period {
                bail!(Config, "record {n} has a different sample period");
            }
            if !r.samples.iter().all(|x| x.is_finite()) {
                bail!(Numeric, "record {n} contains non-finite samples");
            }
            let Some((i, j)) = self.state_index(r.state) else {
                bail!(
                    Config,
                    "record {n} state ({}, {}) is not a grid duplet",
                    r.state.k1,
                    r.state.k2
                );
            };
            if self.paths.binary_search(&r.path_id).is_err() {
                bail!(Config, "record {n} has undeclared path {}", r.path_id);
            }
            let s = i * m2 + j;
            if seen.insert((s, r.path_id, r.trial_id), ()).is_some() {
                bail!(
                    Config,
                    "duplicate trial {} at state {s} path {}",
                    r.trial_id,
                    r.path_id
                );
            }
            *counts.entry((s, r.path_id)).or_default() += 1;
        }
        for s in 0..self.trials.len() {
            for &p in &self.paths {
                let have = counts.get(&(s, p)).copied().unwrap_or(0);
                if have != self.trials[s] {
                    bail!(
                        Config,
                        "state {s} path {p} has {have} records, trial table says {}",
                        self.trials[s]
                    );
                }
            }
        }
        Ok(())
    }

    pub fn grid1(&self) -> &[f64] {
        &self.grid1
    }

    pub fn grid2(&self) -> &[f64] {
        &self.grid2
    }

    pub fn paths(&self) -> &[u32] {
        &self.paths
    }

    /// Trial counts, row-major over `(i, j)`.
    pub fn trial_table(&self) -> &[u32] {
        &self.trials
    }

    pub fn trials_at(&self, i: usize, j: usize) -> u32 {
        self.trials[i * self.grid2.len() + j]
    }

    pub fn samples_per_record(&self) -> usize {
        self.samples_per_record
    }

    pub fn sample_period(&self) -> f64 {
        self.sample_period
    }

    pub fn records(&self) -> &[SignalRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_states(&self) -> usize {
        self.grid1.len() * self.grid2.len()
    }

    /// Grid states in row-major order.
    pub fn states(&self) -> impl Iterator<Item = StateVector> + '_ {
        self.grid1
            .iter()
            .flat_map(move |&a| self.grid2.iter().map(move |&b| StateVector::new(a, b)))
    }

    pub fn state_index(&self, s: StateVector) -> Option<(usize, usize)> {
        let i = self.grid1.iter().position(|&v| v == s.k1)?;
        let j = self.grid2.iter().position(|&v| v == s.k2)?;
        Some((i, j))
    }

    /// `(min, max)` of each state component over the grid.
    pub fn ranges(&self) -> [(f64, f64); 2] {
        [
            (self.grid1[0], self.grid1[self.grid1.len() - 1]),
            (self.grid2[0], self.grid2[self.grid2.len() - 1]),
        ]
    }

    pub fn contains_in_hull(&self, s: StateVector) -> bool {
        let [(a0, a1), (b0, b1)] = self.ranges();
        (a0..=a1).contains(&s.k1) && (b0..=b1).contains(&s.k2)
    }

    pub fn records_for_path(&self, path: u32) -> impl Iterator<Item = &SignalRecord> + '_ {
        self.records.iter().filter(move |r| r.path_id == path)
    }

    /// Same grid metadata, different records and trial table.
    fn with_records(&self, trials: Vec<u32>, records: Vec<SignalRecord>) -> Result<Self> {
        Self::new(
            self.grid1.clone(),
            self.grid2.clone(),
            self.paths.clone(),
            trials,
            self.samples_per_record,
            self.sample_period,
            records,
        )
    }

    /// Applies `f` to every sample, keeping metadata.
    pub fn map_samples(&self, mut f: impl FnMut(f64) -> f64) -> Result<Self> {
        let records = self
            .records
            .iter()
            .map(|r| SignalRecord {
                samples: r.samples.iter().map(|&x| f(x)).collect(),
                ..r.clone()
            })
            .collect();
        self.with_records(self.trials.clone(), records)
    }
}

/// Residual over signal sum of squares, in percent.
pub fn rss_sss(original: &[f64], reconstructed: &[f64]) -> Result<f64> {
    if original.len() != reconstructed.len() {
        bail!(
            Dimension,
            "original has {} samples, reconstruction {}",
            original.len(),
            reconstructed.len()
        );
    }
    let energy: f64 = original.iter().map(|y| y * y).sum();
    if energy == 0.0 {
        bail!(Degenerate, "original signal has zero energy");
    }
    let residual: f64 = original
        .iter()
        .zip(reconstructed)
        .map(|(y, h)| (y - h) * (y - h))
        .sum();
    Ok(100.0 * residual / energy)
}

/// Number of training trials to take at each grid state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainPlan {
    per_state: Vec<u32>,
}

impl TrainPlan {
    pub fn from_table(per_state: Vec<u32>) -> Self {
        Self { per_state }
    }

    pub fn uniform(dataset: &DatasetGrid, count: u32) -> Self {
        Self {
            per_state: vec![count; dataset.num_states()],
        }
    }

    /// `count` trials where more than `count` exist, half of them (rounded
    /// down) otherwise. Reproduces the 8-of-20 / 1-of-2 and 6-of-10 splits.
    pub fn at_most(dataset: &DatasetGrid, count: u32) -> Self {
        Self {
            per_state: dataset
                .trial_table()
                .iter()
                .map(|&n| if count < n { count } else { n / 2 })
                .collect(),
        }
    }

    pub fn per_state(&self) -> &[u32] {
        &self.per_state
    }
}

/// Deterministic split: at each state and path the lowest trial ids go to
/// training.
pub fn split_by_trial(
    dataset: &DatasetGrid,
    plan: &TrainPlan,
) -> Result<(DatasetGrid, DatasetGrid)> {
    if plan.per_state.len() != dataset.num_states() {
        bail!(
            Dimension,
            "plan covers {} states, dataset has {}",
            plan.per_state.len(),
            dataset.num_states()
        );
    }
    let m2 = dataset.grid2.len();
    for (s, (&want, &have)) in plan.per_state.iter().zip(&dataset.trials).enumerate() {
        if want > have {
            bail!(
                Config,
                "state ({}, {}) has {have} trials, {want} requested for training",
                dataset.grid1[s / m2],
                dataset.grid2[s % m2]
            );
        }
    }
    // rank of each record's trial id within its (state, path) cell
    let mut cells: BTreeMap<(usize, u32), Vec<u32>> = BTreeMap::new();
    for r in &dataset.records {
        let (i, j) = dataset.state_index(r.state).expect("validated record");
        cells
            .entry((i * m2 + j, r.path_id))
            .or_default()
            .push(r.trial_id);
    }
    for ids in cells.values_mut() {
        ids.sort_unstable();
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for r in &dataset.records {
        let (i, j) = dataset.state_index(r.state).expect("validated record");
        let s = i * m2 + j;
        let rank = cells[&(s, r.path_id)]
            .binary_search(&r.trial_id)
            .expect("trial id present");
        if (rank as u32) < plan.per_state[s] {
            train.push(r.clone());
        } else {
            test.push(r.clone());
        }
    }
    let test_trials = dataset
        .trials
        .iter()
        .zip(&plan.per_state)
        .map(|(n, k)| n - k)
        .collect();
    Ok((
        dataset.with_records(plan.per_state.clone(), train)?,
        dataset.with_records(test_trials, test)?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleMode {
    /// Affine map of the global sample range onto [-1, 1].
    MinMax,
    /// Global zero mean, unit variance.
    ZScore,
}

/// One affine map `x -> (x - offset) / scale` shared by every record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaling {
    pub offset: f64,
    pub scale: f64,
}

impl Scaling {
    pub const IDENTITY: Self = Self {
        offset: 0.0,
        scale: 1.0,
    };

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.offset) / self.scale
    }

    pub fn invert(&self, x: f64) -> f64 {
        x * self.scale + self.offset
    }

    pub fn apply_slice(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.apply(x)).collect()
    }

    pub fn invert_slice(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.invert(x)).collect()
    }

    /// Fits the map on raw sample values.
    pub fn fit<'a>(
        samples: impl Iterator<Item = &'a [f64]> + Clone,
        mode: ScaleMode,
    ) -> Result<Self> {
        let mut count = 0usize;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        let mut sum = 0.0;
        for s in samples.clone() {
            for &x in s {
                lo = lo.min(x);
                hi = hi.max(x);
                sum += x;
                count += 1;
            }
        }
        if count == 0 {
            bail!(Degenerate, "no samples to scale");
        }
        match mode {
            ScaleMode::MinMax => {
                if !(hi > lo) {
                    bail!(Degenerate, "constant dataset has no amplitude range");
                }
                Ok(Self {
                    offset: 0.5 * (hi + lo),
                    scale: 0.5 * (hi - lo),
                })
            }
            ScaleMode::ZScore => {
                let mean = sum / count as f64;
                let mut ss = 0.0;
                for s in samples {
                    for &x in s {
                        ss += (x - mean) * (x - mean);
                    }
                }
                let var = ss / count as f64;
                if !(var > 0.0) {
                    bail!(Degenerate, "constant dataset has zero variance");
                }
                Ok(Self {
                    offset: mean,
                    scale: libm::sqrt(var),
                })
            }
        }
    }
}

/// Scales every record with one global affine map.
pub fn standardize(dataset: &DatasetGrid, mode: ScaleMode) -> Result<(DatasetGrid, Scaling)> {
    let scaling = Scaling::fit(dataset.records.iter().map(|r| r.samples.as_slice()), mode)?;
    Ok((dataset.map_samples(|x| scaling.apply(x))?, scaling))
}

pub fn unstandardize(dataset: &DatasetGrid, scaling: &Scaling) -> Result<DatasetGrid> {
    dataset.map_samples(|x| scaling.invert(x))
}
