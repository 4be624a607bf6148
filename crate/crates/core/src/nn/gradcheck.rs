//! Finite-difference verification of the backward pass.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::grid::PathMask;

use super::{batch_loss, Layer, LayerKind, LossSpec, Network, NnError, ParamStore, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub probes: usize,
}

/// Compares analytic gradients against central finite differences on
/// `probe_count` randomly chosen unlocked parameter elements.
///
/// Dropout layers are replaced by rate-0 copies for the check (a stochastic
/// mask would make the two loss evaluations incomparable). Relative error is
/// `|a - f| / max(|a|, |f|, 1e-12)`; the difference quotient divides by the
/// actually realized parameter delta to avoid rounding in `epsilon` itself.
pub fn grad_check(
    net: &Network,
    store: &mut ParamStore,
    batch: &Tensor,
    refs: &[&PathMask],
    loss: &LossSpec,
    probe_count: usize,
    epsilon: f64,
    rng: &mut ChaCha8Rng,
) -> Result<GradCheckReport, NnError> {
    let net = without_dropout(net)?;
    let mut trace_rng = rng.clone();
    let (pred, trace) = net.forward_training(store, batch, &mut trace_rng)?;
    let batch_out = batch_loss(&pred, refs, loss)?;
    store.zero_grads();
    net.backward(store, &trace, &batch_out.grad)?;

    let probe_ids: Vec<_> = net
        .param_ids()
        .into_iter()
        .filter(|&id| !store.get(id).locked)
        .collect();
    if probe_ids.is_empty() {
        return Err(NnError::Config("no unlocked parameters to probe".into()));
    }
    let mut max_rel_err = 0.0f64;
    for _ in 0..probe_count {
        let id = probe_ids[rng.gen_range(0..probe_ids.len())];
        let len = store.get(id).values.len();
        let elem = rng.gen_range(0..len);
        let analytic = store.get(id).grad.data()[elem] as f64;

        let original = store.get(id).values.data()[elem];
        let plus = (original as f64 + epsilon) as f32;
        let minus = (original as f64 - epsilon) as f32;

        store.get_mut(id).values.data_mut()[elem] = plus;
        let loss_plus = eval_loss(&net, store, batch, refs, loss)?;
        store.get_mut(id).values.data_mut()[elem] = minus;
        let loss_minus = eval_loss(&net, store, batch, refs, loss)?;
        store.get_mut(id).values.data_mut()[elem] = original;

        let delta = plus as f64 - minus as f64;
        let fd = (loss_plus - loss_minus) / delta;
        let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-12);
        if rel > max_rel_err {
            max_rel_err = rel;
        }
    }
    Ok(GradCheckReport {
        max_rel_err,
        probes: probe_count,
    })
}

fn eval_loss(
    net: &Network,
    store: &ParamStore,
    batch: &Tensor,
    refs: &[&PathMask],
    loss: &LossSpec,
) -> Result<f64, NnError> {
    let pred = net.forward(store, batch)?;
    Ok(batch_loss(&pred, refs, loss)?.loss)
}

fn without_dropout(net: &Network) -> Result<Network, NnError> {
    let layers = net
        .layers()
        .iter()
        .map(|l| match l.kind {
            LayerKind::Dropout { .. } => Layer::stateless(LayerKind::Dropout { rate: 0.0 }),
            _ => l.clone(),
        })
        .collect();
    Network::new(layers, net.input_shape().to_vec())
}
