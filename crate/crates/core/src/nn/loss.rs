//! Loss functions: plain MSE and the count-penalizing variant used for
//! sparse route targets.
//!
//! The penalizing loss scales the per-sample MSE by a multiplier derived
//! from how far the predicted tile count (values at or above 0.5) is from
//! the reference tile count:
//!
//! ```text
//! distance   = |{pred >= 0.5}| - popcount(reference)
//! step       = k_err * sign(distance - 1) + 1
//! multiplier = 1 + k_sub_opt * step * distance
//! loss       = mse * multiplier
//! ```
//!
//! Overshooting by one tile is barely penalized while undershooting is
//! punished hard, which is what pushes training away from the all-zeros
//! output. The multiplier is a per-sample constant during backpropagation:
//! gradients flow through the MSE factor only.

use crate::grid::PathMask;

use super::{NnError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    FLoss,
}

/// Loss selector with the penalty constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub kind: LossKind,
    pub k_sub_opt: f64,
    pub k_err: f64,
}

pub const DEFAULT_K_SUB_OPT: f64 = 1e-3;
pub const DEFAULT_K_ERR: f64 = 1e2;

impl LossSpec {
    pub fn mse() -> Self {
        LossSpec {
            kind: LossKind::Mse,
            k_sub_opt: DEFAULT_K_SUB_OPT,
            k_err: DEFAULT_K_ERR,
        }
    }

    pub fn f_loss() -> Self {
        LossSpec {
            kind: LossKind::FLoss,
            k_sub_opt: DEFAULT_K_SUB_OPT,
            k_err: DEFAULT_K_ERR,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.kind == LossKind::FLoss && (self.k_sub_opt <= 0.0 || self.k_err <= 1.0) {
            return Err(NnError::Config(format!(
                "penalized loss needs k_sub_opt > 0 and k_err > 1, got {} and {}",
                self.k_sub_opt, self.k_err
            )));
        }
        Ok(())
    }
}

/// Mean squared error over all elements, accumulated in f64.
pub fn mse(pred: &Tensor, reference: &Tensor) -> Result<f64, NnError> {
    if pred.shape() != reference.shape() {
        return Err(NnError::Shape {
            layer: "mse".into(),
            msg: format!(
                "prediction {:?} vs reference {:?}",
                pred.shape(),
                reference.shape()
            ),
        });
    }
    let mut acc = 0.0f64;
    for (p, r) in pred.data().iter().zip(reference.data()) {
        let d = (*p - *r) as f64;
        acc += d * d;
    }
    Ok(acc / pred.len() as f64)
}

/// Predicted included-tile count minus the reference count. A value of 0.5
/// counts as included, matching the thresholding rule.
pub fn distance(pred: &Tensor, reference: &PathMask) -> Result<i64, NnError> {
    let n = reference.n();
    if pred.len() != n * n {
        return Err(NnError::Shape {
            layer: "distance".into(),
            msg: format!(
                "prediction with {} values vs {n}x{n} reference",
                pred.len()
            ),
        });
    }
    let included = pred.data().iter().filter(|&&v| v >= 0.5).count() as i64;
    Ok(included - reference.popcount() as i64)
}

/// Penalty step: `k_err * sign(d - 1) + 1` with `sign(0) = 0`.
pub fn step_factor(d: i64, k_err: f64) -> f64 {
    k_err * ((d - 1).signum() as f64) + 1.0
}

/// Count-mismatch multiplier for a given distance.
pub fn loss_multiplier(d: i64, spec: &LossSpec) -> f64 {
    1.0 + spec.k_sub_opt * step_factor(d, spec.k_err) * d as f64
}

/// Penalized loss for one sample: `(loss, multiplier)`.
pub fn f_loss(pred: &Tensor, reference: &PathMask, spec: &LossSpec) -> Result<(f64, f64), NnError> {
    if spec.kind != LossKind::FLoss {
        return Err(NnError::Config(
            "f_loss called with a non-penalizing loss spec".into(),
        ));
    }
    spec.validate()?;
    let ref_tensor = mask_tensor(reference, pred.shape())?;
    let base = mse(pred, &ref_tensor)?;
    let d = distance(pred, reference)?;
    let mult = loss_multiplier(d, spec);
    Ok((base * mult, mult))
}

fn mask_tensor(mask: &PathMask, shape: &[usize]) -> Result<Tensor, NnError> {
    let n = mask.n();
    let vol: usize = shape.iter().product();
    if vol != n * n {
        return Err(NnError::Shape {
            layer: "loss".into(),
            msg: format!("mask {n}x{n} vs prediction shape {shape:?}"),
        });
    }
    let data = mask.as_bytes().iter().map(|&b| b as f32).collect();
    Tensor::from_vec(shape, data)
}

/// Batched training loss over per-sample masks.
#[derive(Debug, Clone)]
pub struct BatchLoss {
    /// Mean per-sample loss.
    pub loss: f64,
    /// Gradient of the mean loss w.r.t. the prediction tensor.
    pub grad: Tensor,
    /// Mean signed distance across the batch.
    pub distance_mean: f64,
}

/// Computes the configured loss and its prediction gradient over a batch of
/// shape `[B, n, n, 1]` against one mask per sample.
pub fn batch_loss(
    pred: &Tensor,
    refs: &[&PathMask],
    spec: &LossSpec,
) -> Result<BatchLoss, NnError> {
    spec.validate()?;
    let b = pred.shape()[0];
    if b != refs.len() {
        return Err(NnError::Shape {
            layer: "loss".into(),
            msg: format!("batch of {b} predictions vs {} references", refs.len()),
        });
    }
    let m = pred.sample_len();
    let mut grad = Tensor::zeros(pred.shape());
    let mut total = 0.0f64;
    let mut dist_total = 0.0f64;
    for (s, mask) in refs.iter().enumerate() {
        let n = mask.n();
        if m != n * n {
            return Err(NnError::Shape {
                layer: "loss".into(),
                msg: format!("sample volume {m} vs {n}x{n} mask"),
            });
        }
        let sample = pred.sample(s);
        let mut sq = 0.0f64;
        let mut included = 0i64;
        for (i, &p) in sample.iter().enumerate() {
            let r = mask.as_bytes()[i] as f32;
            let d = (p - r) as f64;
            sq += d * d;
            if p >= 0.5 {
                included += 1;
            }
        }
        let sample_mse = sq / m as f64;
        let d = included - mask.popcount() as i64;
        let mult = match spec.kind {
            LossKind::Mse => 1.0,
            LossKind::FLoss => loss_multiplier(d, spec),
        };
        total += sample_mse * mult;
        dist_total += d as f64;
        // d(mean loss)/d(pred) = mult * 2 (pred - ref) / (m * B);
        // the multiplier is held constant.
        let scale = (mult * 2.0 / (m as f64 * b as f64)) as f32;
        let gslice = &mut grad.data_mut()[s * m..(s + 1) * m];
        for (i, g) in gslice.iter_mut().enumerate() {
            *g = scale * (sample[i] - mask.as_bytes()[i] as f32);
        }
    }
    Ok(BatchLoss {
        loss: total / b as f64,
        grad,
        distance_mean: dist_total / b as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_from(n: usize, tiles: &[(usize, usize)]) -> PathMask {
        PathMask::from_tiles(n, tiles.iter().copied())
    }

    #[test]
    fn mse_closed_forms() {
        let a = Tensor::from_vec(&[2, 2], vec![0.0; 4]).unwrap();
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        let ones_k = Tensor::from_vec(&[2, 2], vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        // k ones out of m zeros-prediction: k/m.
        assert_eq!(mse(&a, &ones_k).unwrap(), 0.5);
    }

    #[test]
    fn mse_matches_scalar_loop_oracle() {
        let mut rng = crate::util::rng_from(9, &[3]);
        use rand::Rng;
        let p: Vec<f32> = (0..64).map(|_| rng.gen::<f32>()).collect();
        let r: Vec<f32> = (0..64).map(|_| rng.gen::<f32>()).collect();
        let mut expect = 0.0f64;
        for i in 0..64 {
            expect += ((p[i] - r[i]) as f64).powi(2);
        }
        expect /= 64.0;
        let got = mse(
            &Tensor::from_vec(&[64], p).unwrap(),
            &Tensor::from_vec(&[64], r).unwrap(),
        )
        .unwrap();
        assert!((got - expect).abs() < 1e-6);
    }

    #[test]
    fn distance_counts_threshold_crossings() {
        let n = 4;
        let reference = mask_from(n, &[(0, 0), (0, 1), (1, 0), (1, 1)]);
        let mut pred = Tensor::zeros(&[n, n, 1]);
        assert_eq!(distance(&pred, &reference).unwrap(), -4);
        for i in 0..7 {
            pred.data_mut()[i] = 0.5; // boundary counts as included
        }
        assert_eq!(distance(&pred, &reference).unwrap(), 3);
    }

    #[test]
    fn step_factor_sign_convention() {
        assert_eq!(step_factor(1, 100.0), 1.0);
        assert_eq!(step_factor(5, 100.0), 101.0);
        assert_eq!(step_factor(0, 100.0), -99.0);
    }

    #[test]
    fn f_loss_multiplier_values() {
        let spec = LossSpec::f_loss();
        assert_eq!(loss_multiplier(0, &spec), 1.0);
        assert!((loss_multiplier(1, &spec) - 1.001).abs() < 1e-12);
        assert!((loss_multiplier(5, &spec) - 1.505).abs() < 1e-12);
        assert!((loss_multiplier(-3, &spec) - 1.297).abs() < 1e-12);
        // Missing tiles cost more per unit than extra ones near zero.
        assert!((loss_multiplier(-1, &spec) - 1.099).abs() < 1e-12);
        assert!((loss_multiplier(1, &spec) - 1.001).abs() < 1e-12);
    }

    #[test]
    fn f_loss_equals_mse_at_zero_distance() {
        let n = 2;
        let reference = mask_from(n, &[(0, 0)]);
        let pred = Tensor::from_vec(&[n, n, 1], vec![0.9, 0.1, 0.2, 0.3]).unwrap();
        let (loss, mult) = f_loss(&pred, &reference, &LossSpec::f_loss()).unwrap();
        assert_eq!(mult, 1.0);
        let ref_tensor =
            Tensor::from_vec(&[n, n, 1], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(loss, mse(&pred, &ref_tensor).unwrap());
    }

    #[test]
    fn multiplier_at_least_one_for_all_distances() {
        let spec = LossSpec::f_loss();
        for d in -4096..=4096 {
            assert!(
                loss_multiplier(d, &spec) >= 1.0,
                "multiplier below 1 at d={d}"
            );
        }
    }

    #[test]
    fn batch_gradient_is_multiplier_times_mse_gradient() {
        let n = 2;
        let reference = mask_from(n, &[(0, 0)]);
        // All predictions far below 0.5: distance -1, multiplier 1.099.
        let pred =
            Tensor::from_vec(&[1, n, n, 1], vec![0.2, 0.1, 0.1, 0.1]).unwrap();
        let fl = batch_loss(&pred, &[&reference], &LossSpec::f_loss()).unwrap();
        let plain = batch_loss(&pred, &[&reference], &LossSpec::mse()).unwrap();
        let mult = 1.099f64;
        for (g_f, g_m) in fl.grad.data().iter().zip(plain.grad.data()) {
            assert!((*g_f as f64 - *g_m as f64 * mult).abs() < 1e-9);
        }
        assert!((fl.loss - plain.loss * mult).abs() < 1e-12);
        assert_eq!(fl.distance_mean, -1.0);
    }
}
