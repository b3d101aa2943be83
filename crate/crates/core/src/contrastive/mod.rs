//! Weight-dependent contrastive learning.
//!
//! Each class keeps a queue of low-weight augmented representations produced
//! by a momentum-updated key encoder. A raw query is pulled toward the
//! high-weight augmentations of itself and pushed away from its class queue.

mod loss;
mod queue;

pub use loss::contrastive_loss;
pub use queue::{lasw_update, new_queues, queues_csv, update_queues, ClassQueue, QueueEntry, QueuePolicy};

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::tensor::ParamSet;

/// `key <- gamma * key + (1 - gamma) * query`, elementwise.
pub fn momentum_update(key: &mut ParamSet, query: &ParamSet, gamma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::config(format!("momentum {gamma} outside [0, 1]")));
    }
    if !key.same_layout(query) {
        return Err(Error::Shape {
            op: "momentum_update",
            lhs: vec![key.num_scalars()],
            rhs: vec![query.num_scalars()],
        });
    }
    for (k, q) in key.tensors_mut().iter_mut().zip(query.tensors()) {
        for (a, b) in k.data_mut().iter_mut().zip(q.data()) {
            *a = gamma * *a + (1.0 - gamma) * b;
        }
    }
    Ok(())
}

/// Marks the `ceil(rho * B)` highest-weight rows of the batch; ties keep
/// batch order.
pub fn top_weight_mask(weights: &[f64], rho: f64) -> Vec<bool> {
    let keep = ((rho * weights.len() as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]));
    let mut mask = vec![false; weights.len()];
    for &i in order.iter().take(keep) {
        mask[i] = true;
    }
    mask
}

/// Indices of augmented rows that qualify as positives for one query: among
/// the top `rho` fraction by weight, those generated from the query and
/// carrying the query's class.
pub fn select_positives(
    weights: &[f64],
    origins: &[u64],
    labels: &[usize],
    query_origin: u64,
    query_class: usize,
    rho: f64,
) -> Vec<usize> {
    select_positives_from_mask(&top_weight_mask(weights, rho), origins, labels, query_origin, query_class)
}

/// [`select_positives`] with a precomputed [`top_weight_mask`].
pub fn select_positives_from_mask(
    mask: &[bool],
    origins: &[u64],
    labels: &[usize],
    query_origin: u64,
    query_class: usize,
) -> Vec<usize> {
    (0..mask.len())
        .filter(|&i| mask[i] && origins[i] == query_origin && labels[i] == query_class)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContrastiveSettings {
    /// Positive ratio.
    pub rho: f64,
    /// Per-class queue capacity.
    pub n_neg: usize,
    /// Maximum lifetime, in queue updates.
    pub tau: u32,
    /// Key encoder momentum.
    pub gamma: f64,
    pub temperature: f64,
    /// L2-normalize representations before dot products.
    pub normalize: bool,
    pub policy: QueuePolicy,
}

impl Default for ContrastiveSettings {
    fn default() -> Self {
        Self {
            rho: 0.9,
            n_neg: 128,
            tau: 10,
            gamma: 0.99,
            temperature: 1.0,
            normalize: true,
            policy: QueuePolicy::Lasw,
        }
    }
}

impl ContrastiveSettings {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::config("rho must lie in [0, 1]"));
        }
        if self.n_neg == 0 || self.tau == 0 {
            return Err(Error::config("n_neg and tau must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::config("gamma must lie in [0, 1]"));
        }
        if self.temperature <= 0.0 || !self.temperature.is_finite() {
            return Err(Error::config("temperature must be positive"));
        }
        Ok(())
    }
}

/// Queues plus the key encoder.
#[derive(Clone, Debug)]
pub struct ContrastiveState {
    pub settings: ContrastiveSettings,
    pub queues: Vec<ClassQueue>,
    pub key_encoder: EncoderParams,
}

impl ContrastiveState {
    /// Key encoder starts as a copy of the query encoder.
    pub fn new(settings: ContrastiveSettings, main: &EncoderParams) -> Result<Self> {
        settings.validate()?;
        let queues = new_queues(main.config.num_classes, settings.n_neg);
        Ok(Self {
            settings,
            queues,
            key_encoder: main.clone(),
        })
    }

    pub fn momentum_step(&mut self, main: &EncoderParams) -> Result<()> {
        momentum_update(&mut self.key_encoder.params, &main.params, self.settings.gamma)
    }

    pub fn update_queues(&mut self, reprs: &[Vec<f64>], labels: &[usize], weights: &[f64]) -> Result<()> {
        update_queues(
            self.settings.policy,
            &mut self.queues,
            reprs,
            labels,
            weights,
            self.settings.tau,
        )
    }
}
