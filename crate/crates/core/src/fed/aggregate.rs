use alloc::vec;
use alloc::vec::Vec;

use super::ClientUpdate;
use crate::error::{Error, Result};
use crate::numerics::{ModelWeights, Real};

/// Validates a round's update set and returns indices in client-id order
/// with the total sample count.
fn ordered<T: Real>(updates: &[ClientUpdate<T>]) -> Result<(Vec<usize>, u64)> {
    let first = updates
        .first()
        .ok_or_else(|| Error::Protocol("no client updates to aggregate".into()))?;
    let mut total = 0u64;
    for u in updates {
        if u.round != first.round {
            return Err(Error::Protocol(alloc::format!(
                "mixed rounds: {} and {}",
                first.round,
                u.round
            )));
        }
        if u.weights.layout_id != first.weights.layout_id || u.weights.len() != first.weights.len() {
            return Err(Error::Protocol(alloc::format!(
                "client {} sent weights for a different layout",
                u.client_id
            )));
        }
        if u.n_k == 0 {
            return Err(Error::Protocol(alloc::format!("client {} reported n_k = 0", u.client_id)));
        }
        total = total
            .checked_add(u.n_k)
            .ok_or_else(|| Error::Protocol("sample count overflow".into()))?;
    }
    let mut idx: Vec<usize> = (0..updates.len()).collect();
    idx.sort_by(|&a, &b| updates[a].client_id.cmp(&updates[b].client_id));
    if idx.windows(2).any(|w| updates[w[0]].client_id == updates[w[1]].client_id) {
        return Err(Error::Protocol("duplicate client id in update set".into()));
    }
    Ok((idx, total))
}

/// Sample-weighted mean of client weights, accumulated in f64 in client-id
/// order so the result does not depend on arrival order.
pub fn fedavg_aggregate<T: Real>(updates: &[ClientUpdate<T>]) -> Result<ModelWeights<T>> {
    let (order, total) = ordered(updates)?;
    let dim = updates[0].weights.len();
    let mut acc = vec![0.0f64; dim];
    for &i in &order {
        let u = &updates[i];
        let share = u.n_k as f64 / total as f64;
        for (a, w) in acc.iter_mut().zip(&u.weights.values) {
            *a += share * w.as_f64();
        }
    }
    Ok(ModelWeights::new(
        updates[0].weights.layout_id,
        acc.into_iter().map(T::lit).collect(),
    ))
}

/// Server-side FedAdagrad accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct AdagradState {
    pub server_lr: f64,
    pub tau: f64,
    /// Running sum of squared pseudo-gradients; empty until the first round.
    pub v: Vec<f64>,
}

impl AdagradState {
    pub fn new(server_lr: f64, tau: f64) -> Self {
        AdagradState {
            server_lr,
            tau,
            v: Vec::new(),
        }
    }
}

pub fn fedadagrad_aggregate<T: Real>(
    state: &mut AdagradState,
    global: &ModelWeights<T>,
    updates: &[ClientUpdate<T>],
) -> Result<ModelWeights<T>> {
    let (order, total) = ordered(updates)?;
    if updates[0].weights.layout_id != global.layout_id || updates[0].weights.len() != global.len() {
        return Err(Error::Protocol("updates do not match the global layout".into()));
    }
    let dim = global.len();
    if state.v.is_empty() {
        state.v = vec![0.0; dim];
    } else if state.v.len() != dim {
        return Err(Error::Protocol("adagrad accumulator has the wrong length".into()));
    }
    let mut delta = vec![0.0f64; dim];
    for &i in &order {
        let u = &updates[i];
        let share = u.n_k as f64 / total as f64;
        for ((d, w), g) in delta.iter_mut().zip(&u.weights.values).zip(&global.values) {
            *d += share * (w.as_f64() - g.as_f64());
        }
    }
    let values = global
        .values
        .iter()
        .zip(&delta)
        .zip(state.v.iter_mut())
        .map(|((g, &d), v)| {
            *v += d * d;
            if d == 0.0 {
                *g
            } else {
                T::lit(g.as_f64() + state.server_lr * d / (num_traits::Float::sqrt(*v) + state.tau))
            }
        })
        .collect();
    Ok(ModelWeights::new(global.layout_id, values))
}
