use proptest::prelude::*;

use wavelatent_core::autodiff::{Tape, Tensor};
use wavelatent_core::dmaps::{gaussian_kernel, markov_eigenpairs, normalize_to_markov};
use wavelatent_core::linalg::Matrix;
use wavelatent_core::pyramid::{fit_pyramid, PyramidConfig};
use wavelatent_core::rng::SplitMix64;
use wavelatent_core::signal::{
    rss_sss, split_by_trial, standardize, unstandardize, ScaleMode, TrainPlan,
};
use wavelatent_core::{DatasetGrid, SignalRecord, StateVector};

fn points(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = SplitMix64::new(seed);
    let data = (0..rows * cols).map(|_| rng.uniform(-1.0, 1.0)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn random_tensor(shape: [usize; 3], rng: &mut SplitMix64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.normal()).collect()).unwrap()
}

/// Grid with the given trial table (row-major over 2 x 3 states), one path,
/// record samples drawn from `seed`.
fn grid(trials: &[u32], seed: u64) -> DatasetGrid {
    let (g1, g2) = (vec![0.0, 1.0], vec![0.0, 5.0, 10.0]);
    let mut rng = SplitMix64::new(seed);
    let mut records = Vec::new();
    for (s, &n) in trials.iter().enumerate() {
        for t in 0..n {
            records.push(SignalRecord {
                state: StateVector::new(g1[s / 3], g2[s % 3]),
                path_id: 0,
                trial_id: t,
                samples: (0..8).map(|_| rng.normal()).collect(),
                sample_period: 1e-6,
            });
        }
    }
    DatasetGrid::new(g1, g2, vec![0], trials.to_vec(), 8, 1e-6, records).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rss_of_identical_signals_is_zero(y in prop::collection::vec(-1e3f64..1e3, 1..64)) {
        prop_assume!(y.iter().any(|v| *v != 0.0));
        prop_assert_eq!(rss_sss(&y, &y).unwrap(), 0.0);
    }

    #[test]
    fn rss_is_scale_invariant(
        pairs in prop::collection::vec((-10f64..10.0, -10f64..10.0), 2..64),
        c in prop_oneof![-1e3f64..-1e-3, 1e-3f64..1e3],
    ) {
        let (y, r): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        prop_assume!(y.iter().map(|v| v * v).sum::<f64>() > 1e-6);
        let base = rss_sss(&y, &r).unwrap();
        let ys: Vec<f64> = y.iter().map(|v| c * v).collect();
        let rs: Vec<f64> = r.iter().map(|v| c * v).collect();
        let scaled = rss_sss(&ys, &rs).unwrap();
        prop_assert!((base - scaled).abs() <= 1e-9 * base.max(1.0));
    }

    #[test]
    fn split_partitions_records(trials in prop::collection::vec(0u32..6, 6), take in 0u32..3, seed in any::<u64>()) {
        let ds = grid(&trials, seed);
        let plan = TrainPlan::from_table(trials.iter().map(|&n| take.min(n)).collect());
        let (train, test) = split_by_trial(&ds, &plan).unwrap();
        prop_assert_eq!(train.len() + test.len(), ds.len());
        for r in train.records() {
            prop_assert!(!test.records().iter().any(|q| q.state == r.state && q.trial_id == r.trial_id));
        }
        for (s, &n) in trials.iter().enumerate() {
            prop_assert_eq!(train.trial_table()[s], take.min(n));
            prop_assert_eq!(test.trial_table()[s], n - take.min(n));
        }
    }

    #[test]
    fn standardize_round_trips(seed in any::<u64>(), zscore in any::<bool>()) {
        let ds = grid(&[2, 1, 3, 1, 2, 2], seed);
        let mode = if zscore { ScaleMode::ZScore } else { ScaleMode::MinMax };
        let (scaled, scaling) = standardize(&ds, mode).unwrap();
        let back = unstandardize(&scaled, &scaling).unwrap();
        for (a, b) in ds.records().iter().zip(back.records()) {
            for (x, y) in a.samples.iter().zip(&b.samples) {
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn kernel_is_symmetric_with_unit_diagonal(n in 2usize..30, dim in 1usize..5, eps in 1e-3f64..10.0, seed in any::<u64>()) {
        let k = gaussian_kernel(&points(n, dim, seed), eps).unwrap();
        prop_assert!(k.is_symmetric(0.0));
        for i in 0..n {
            prop_assert_eq!(k[(i, i)], 1.0);
        }
    }

    #[test]
    fn markov_operator_is_stochastic(n in 3usize..30, alpha in 0f64..=1.0, seed in any::<u64>()) {
        let p = points(n, 2, seed);
        let op = normalize_to_markov(&gaussian_kernel(&p, 0.5).unwrap(), alpha).unwrap();
        for i in 0..n {
            let row = op.transition.row(i);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        let (values, _) = markov_eigenpairs(&op, n - 1).unwrap();
        prop_assert!(values.iter().all(|&l| (-1.0 - 1e-12..=1.0 + 1e-12).contains(&l)));
    }

    #[test]
    fn pyramid_error_never_increases(n in 4usize..25, seed in any::<u64>()) {
        let lat = points(n, 2, seed);
        let out = points(n, 6, seed ^ 0x9e37);
        let model = fit_pyramid(&lat, &out, &PyramidConfig { stop_tolerance: 0.0, ..PyramidConfig::default() }).unwrap();
        prop_assert!(model.train_errors.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn conv_transpose_is_adjoint(
        cin in 1usize..4, cout in 1usize..4, k in 1usize..7, s in 1usize..4, lout in 1usize..9,
        pad_frac in 0f64..1.0, seed in any::<u64>(),
    ) {
        let p = ((k as f64 * pad_frac) as usize).min(k - 1);
        let len = s * (lout - 1) + k;
        prop_assume!(len > 2 * p);
        let len = len - 2 * p;
        prop_assume!(s < len);
        let mut rng = SplitMix64::new(seed);
        let x = random_tensor([2, cin, len], &mut rng);
        let w = random_tensor([cout, cin, k], &mut rng);
        let mut tape = Tape::new();
        let (xv, wv) = (tape.leaf(x.clone()).unwrap(), tape.leaf(w).unwrap());
        let b0 = tape.leaf(Tensor::zeros([1, 1, cout])).unwrap();
        let y = tape.conv1d(xv, wv, b0, s, p).unwrap();
        prop_assert_eq!(tape.value(y).length(), lout);
        let probe = random_tensor([2, cout, lout], &mut rng);
        let pv = tape.leaf(probe.clone()).unwrap();
        let b1 = tape.leaf(Tensor::zeros([1, 1, cin])).unwrap();
        let back = tape.conv1d_transpose(pv, wv, b1, s, p).unwrap();
        let (lhs, rhs) = (tape.value(y).dot(&probe), x.dot(tape.value(back)));
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0), "{} vs {}", lhs, rhs);
    }

    #[test]
    fn gaussian_kl_is_non_negative(pairs in prop::collection::vec((-5f64..5.0, -8f64..8.0), 1..16)) {
        let (mu, lv): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let d = mu.len();
        let mut tape = Tape::new();
        let m = tape.leaf(Tensor::new([1, 1, d], mu).unwrap()).unwrap();
        let l = tape.leaf(Tensor::new([1, 1, d], lv).unwrap()).unwrap();
        let kl = tape.gaussian_kl(m, l).unwrap();
        prop_assert!(tape.value(kl).data()[0] >= 0.0);
    }
}
