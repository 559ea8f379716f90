use alloc::vec::Vec;

use super::{Network, Tape, Tensor};
use crate::error::Result;

/// Something with parameters and a scalar loss whose gradient can be
/// computed in reverse mode.
pub trait Differentiable {
    fn parameters_mut(&mut self) -> Vec<&mut [f64]>;
    fn loss(&self) -> Result<f64>;
    /// Loss and the gradient for each slice returned by `parameters_mut`.
    fn loss_and_gradients(&self) -> Result<(f64, Vec<Vec<f64>>)>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub max_relative_error: f64,
    /// `(parameter tensor, element)` with the largest error.
    pub worst: (usize, usize),
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares reverse-mode gradients of every parameter against central
/// differences with step `1e-5 * max(1, |θ|)`.
///
/// The error of each component is `|g - n| / max(|g|, |n|, 1e-2)`; the
/// floor keeps components that are zero up to roundoff from dominating.
pub fn check_gradients<D: Differentiable>(model: &mut D, tolerance: f64) -> Result<GradientReport> {
    let (_, analytic) = model.loss_and_gradients()?;
    let mut worst = (0, 0);
    let mut max_err: f64 = 0.0;
    let mut checked = 0;
    let sizes: Vec<usize> = model.parameters_mut().iter().map(|p| p.len()).collect();
    for (k, &size) in sizes.iter().enumerate() {
        for i in 0..size {
            let theta = model.parameters_mut()[k][i];
            let h = 1e-5 * theta.abs().max(1.0);
            model.parameters_mut()[k][i] = theta + h;
            let up = model.loss()?;
            model.parameters_mut()[k][i] = theta - h;
            let down = model.loss()?;
            model.parameters_mut()[k][i] = theta;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[k][i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-2);
            if err > max_err {
                max_err = err;
                worst = (k, i);
            }
            checked += 1;
        }
    }
    Ok(GradientReport {
        max_relative_error: max_err,
        worst,
        checked,
        tolerance,
        passed: max_err < tolerance,
    })
}

/// Mean squared error of a network's output against a fixed target.
#[derive(Debug, Clone, PartialEq)]
pub struct MseObjective {
    pub network: Network,
    pub input: Tensor,
    pub target: Tensor,
}

impl Differentiable for MseObjective {
    fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        self.network
            .params_mut()
            .iter_mut()
            .map(Tensor::data_mut)
            .collect()
    }

    fn loss(&self) -> Result<f64> {
        self.loss_and_gradients_impl(false).map(|(l, _)| l)
    }

    fn loss_and_gradients(&self) -> Result<(f64, Vec<Vec<f64>>)> {
        self.loss_and_gradients_impl(true)
    }
}

impl MseObjective {
    fn loss_and_gradients_impl(&self, grads: bool) -> Result<(f64, Vec<Vec<f64>>)> {
        let mut tape = Tape::new();
        let x = tape.leaf(self.input.clone())?;
        let (y, leaves) = self.network.forward(&mut tape, x)?;
        let shape = tape.value(y).shape();
        let t = tape.leaf(self.target.clone().reshaped(shape)?)?;
        let loss = tape.mse(y, t)?;
        let value = tape.value(loss).data()[0];
        if !grads {
            return Ok((value, Vec::new()));
        }
        let g = tape.backward(loss)?;
        let out = leaves
            .iter()
            .zip(self.network.params())
            .map(|(&v, p)| {
                g.get(v)
                    .map_or_else(|| alloc::vec![0.0; p.len()], |t| t.data().to_vec())
            })
            .collect();
        Ok((value, out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Activation, LayerSpec};
    use crate::rng::SplitMix64;

    fn objective(specs: Vec<LayerSpec>, shape: [usize; 2], seed: u64) -> MseObjective {
        let mut rng = SplitMix64::new(seed);
        let network = Network::new(specs, shape, &mut rng).unwrap();
        let n = shape[0] * shape[1];
        let input = Tensor::new(
            [2, shape[0], shape[1]],
            (0..2 * n).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        )
        .unwrap();
        let out = network.output_features();
        let target = Tensor::new(
            [2, 1, out],
            (0..2 * out).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        )
        .unwrap();
        MseObjective {
            network,
            input,
            target,
        }
    }

    #[test]
    fn linear_dense_is_near_exact() {
        let mut obj = objective(vec![LayerSpec::dense(3)], [1, 5], 1);
        let report = check_gradients(&mut obj, 1e-9).unwrap();
        assert!(report.passed, "{report:?}");
        assert_eq!(report.checked, obj.network.num_parameters());
    }

    #[test]
    fn tanh_stack_passes() {
        let mut obj = objective(
            vec![
                LayerSpec::dense(6),
                LayerSpec::Activation(Activation::Tanh),
                LayerSpec::dense(2),
            ],
            [1, 4],
            2,
        );
        assert!(check_gradients(&mut obj, 1e-5).unwrap().passed);
    }

    struct Corrupted(MseObjective);

    impl Differentiable for Corrupted {
        fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
            self.0.parameters_mut()
        }

        fn loss(&self) -> Result<f64> {
            self.0.loss()
        }

        fn loss_and_gradients(&self) -> Result<(f64, Vec<Vec<f64>>)> {
            let (l, mut g) = self.0.loss_and_gradients()?;
            g[0][1] *= 1.5;
            g[0][1] += 0.1;
            Ok((l, g))
        }
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let mut obj = Corrupted(objective(vec![LayerSpec::dense(3)], [1, 5], 3));
        let report = check_gradients(&mut obj, 1e-5).unwrap();
        assert!(!report.passed);
        assert_eq!(report.worst, (0, 1));
    }
}
