//! Gradient-descent update rules and the triangular learning-rate schedule.

use super::{NnError, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Sgd,
    RmsProp,
}

/// Optimizer with per-parameter mean-square accumulators (RMSProp only).
/// Accumulators are allocated lazily so a store can keep growing while one
/// optimizer instance is in use.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub algorithm: Algorithm,
    pub rms_decay: f32,
    pub epsilon: f32,
    acc: Vec<Option<Vec<f32>>>,
}

impl OptimizerState {
    pub fn sgd() -> Self {
        OptimizerState {
            algorithm: Algorithm::Sgd,
            rms_decay: 0.9,
            epsilon: 1e-8,
            acc: Vec::new(),
        }
    }

    pub fn rms_prop(rms_decay: f32, epsilon: f32) -> Self {
        OptimizerState {
            algorithm: Algorithm::RmsProp,
            rms_decay,
            epsilon,
            acc: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.algorithm == Algorithm::RmsProp
            && (!(0.0..1.0).contains(&self.rms_decay) || self.epsilon <= 0.0)
        {
            return Err(NnError::Config(format!(
                "rmsprop needs decay in (0,1) and positive epsilon, got {} and {}",
                self.rms_decay, self.epsilon
            )));
        }
        Ok(())
    }

    /// Applies one update step from the gradients currently in the store.
    /// Locked parameters are untouched.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) {
        let lr = lr as f32;
        if self.acc.len() < store.len() {
            self.acc.resize(store.len(), None);
        }
        for id in store.ids().collect::<Vec<_>>() {
            let idx = id.index();
            let param = store.get_mut(id);
            if param.locked {
                continue;
            }
            match self.algorithm {
                Algorithm::Sgd => {
                    for (v, g) in param.values.data_mut().iter_mut().zip(param.grad.data()) {
                        *v -= lr * g;
                    }
                }
                Algorithm::RmsProp => {
                    let acc = self.acc[idx]
                        .get_or_insert_with(|| vec![0.0; param.values.len()]);
                    debug_assert_eq!(acc.len(), param.values.len());
                    let rho = self.rms_decay;
                    let eps = self.epsilon;
                    for ((v, &g), a) in param
                        .values
                        .data_mut()
                        .iter_mut()
                        .zip(param.grad.data())
                        .zip(acc.iter_mut())
                    {
                        *a = rho * *a + (1.0 - rho) * g * g;
                        *v -= lr * g / (*a + eps).sqrt();
                    }
                }
            }
        }
    }
}

/// Triangular schedule: base at step 0, linear to `peak` at `period / 2`,
/// back to base at `period`, then repeating. `period` must be even and
/// positive and `0 < base <= peak`.
pub fn cyclical_lr(step: usize, base: f64, peak: f64, period: usize) -> f64 {
    assert!(period > 0 && period % 2 == 0, "period must be even, positive");
    assert!(base > 0.0 && base <= peak, "need 0 < base <= peak");
    let phase = step % period;
    let half = period / 2;
    let t = if phase <= half {
        phase as f64 / half as f64
    } else {
        (period - phase) as f64 / half as f64
    };
    base + (peak - base) * t
}
