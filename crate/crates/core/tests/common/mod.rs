#![allow(dead_code)]

use wavelatent_core::linalg::Matrix;
use wavelatent_core::synth::{clean_response, SynthConfig};
use wavelatent_core::StateVector;

/// One path, 256 samples over a 125 µs window.
pub fn short_config() -> SynthConfig {
    SynthConfig {
        samples: 256,
        sample_rate: 2.048e6,
        paths: 1,
        ..SynthConfig::case1()
    }
    .with_uniform_trials(4)
}

/// The 1024-sample case-1 benchmark restricted to path 0.
pub fn case1_path0() -> SynthConfig {
    SynthConfig {
        paths: 1,
        ..SynthConfig::case1()
    }
}

/// Noise-free path-0 responses on an `n1 x n2` grid spanning the case-1 ranges.
pub fn clean_set(cfg: &SynthConfig, n1: usize, n2: usize) -> (Matrix, Vec<StateVector>) {
    let mut rows = Vec::new();
    let mut states = Vec::new();
    for i in 0..n1 {
        for j in 0..n2 {
            let s = StateVector::new(
                4.0 * i as f64 / (n1 - 1) as f64,
                20.0 * j as f64 / (n2 - 1) as f64,
            );
            rows.push(clean_response(cfg, s, 0).unwrap());
            states.push(s);
        }
    }
    (Matrix::from_rows(&rows).unwrap(), states)
}
