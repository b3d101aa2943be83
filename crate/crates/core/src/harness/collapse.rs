//! Joint versus bilevel training of the reweighter on one fixed batch.

use crate::config::{ExperimentConfig, Method};
use crate::error::{Error, Result};
use crate::meta_loop::{AugBatch, LabeledBatch, MetaBatch, Trainer};

use super::{split_meta, Dataset, PreparedData};

#[derive(Clone, Debug)]
pub struct CollapseSettings {
    /// Raw examples in the fixed batch; every augmentation of them joins it.
    pub raw_batch: usize,
    pub meta_batch: usize,
    pub steps: usize,
    pub record_every: usize,
    pub seed: u64,
}

impl Default for CollapseSettings {
    fn default() -> Self {
        Self {
            raw_batch: 16,
            meta_batch: 32,
            steps: 2000,
            record_every: 100,
            seed: 0,
        }
    }
}

/// Mean augmented weight under both procedures after `step` updates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CollapsePoint {
    pub step: usize,
    pub joint: f64,
    pub bilevel: f64,
}

fn labeled(ds: &Dataset, rows: &[usize], data: &PreparedData, max_len: usize) -> Result<LabeledBatch> {
    LabeledBatch::new(
        ds.tokens(&data.vocab, rows, max_len)?,
        rows.iter().map(|&r| ds.examples[r].label).collect(),
        rows.iter().map(|&r| ds.examples[r].id).collect(),
    )
}

/// Trains two copies of the same initial model on one fixed batch, one by
/// joint minimization of the reweighted task loss over both networks, one
/// with the meta step, and records the mean weight of the batch's
/// augmentations at step 0, every `record_every` steps and at the end.
pub fn collapse_trace(cfg: &ExperimentConfig, data: &PreparedData, s: &CollapseSettings) -> Result<Vec<CollapsePoint>> {
    if s.raw_batch == 0 || s.meta_batch == 0 || s.record_every == 0 {
        return Err(Error::config("collapse batch sizes and record interval must be positive"));
    }
    let (task, meta) = split_meta(&data.train, cfg.train.meta_fraction, s.seed)?;
    let max_len = cfg.encoder.max_len;
    let rows: Vec<usize> = (0..s.raw_batch.min(task.len())).collect();
    let raw = labeled(&task, &rows, data, max_len)?;
    let aug_rows: Vec<usize> = (0..data.augmented.len())
        .filter(|&i| raw.ids.contains(&data.augmented.examples[i].origin_id))
        .collect();
    if aug_rows.is_empty() {
        return Err(Error::Empty("augmentations of the fixed batch"));
    }
    let aug = AugBatch::new(
        data.augmented.tokens(&data.vocab, &aug_rows, max_len)?,
        aug_rows.iter().map(|&i| data.augmented.examples[i].label).collect(),
        aug_rows.iter().map(|&i| data.augmented.examples[i].origin_id).collect(),
    )?;
    let meta_rows: Vec<usize> = (0..s.meta_batch.min(meta.len())).collect();
    let batch = MetaBatch {
        task_raw: raw,
        task_aug: Some(aug),
        meta_raw: Some(labeled(&meta, &meta_rows, data, max_len)?),
    };

    let k = data.train.num_classes();
    let enc = cfg.encoder_config(data.vocab.len(), k);
    let rw = cfg.reweight_config(k, enc.hidden_width());
    let settings = cfg.train_settings(Method::MrcoNoContrastive);
    let mut joint = Trainer::new(enc.clone(), rw.clone(), settings.clone(), s.seed)?;
    let mut bilevel = Trainer::new(enc, rw, settings, s.seed)?;
    let aug = batch.task_aug.as_ref().expect("set above");
    let mean = |t: &Trainer| -> Result<f64> {
        let w = t.score(&aug.tokens, &aug.labels)?;
        Ok(w.iter().sum::<f64>() / w.len() as f64)
    };

    let mut trace = Vec::new();
    for step in 0..=s.steps {
        if step % s.record_every == 0 || step == s.steps {
            trace.push(CollapsePoint {
                step,
                joint: mean(&joint)?,
                bilevel: mean(&bilevel)?,
            });
        }
        if step < s.steps {
            joint.joint_step(&batch.task_raw, aug)?;
            bilevel.step(&batch)?;
        }
    }
    Ok(trace)
}
