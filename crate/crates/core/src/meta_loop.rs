//! Bilevel training: a reweight network learns per-augmentation weights by
//! differentiating a held-out loss through one virtual SGD step of the main
//! module, and the main module then trains on the reweighted loss plus the
//! contrastive term.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::contrastive::{contrastive_loss, select_positives_from_mask, top_weight_mask, ContrastiveSettings, ContrastiveState};
use crate::encoder::{EncoderConfig, EncoderParams, TokenBatch};
use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::reweighter::{ReweightConfig, ReweightNet};
use crate::tensor::{Tape, Var};

/// Raw examples with ids and labels.
#[derive(Clone, Debug)]
pub struct LabeledBatch {
    pub tokens: TokenBatch,
    pub labels: Vec<usize>,
    pub ids: Vec<u64>,
}

/// Augmented examples; `origins` holds the id of the raw example each one
/// was generated from.
#[derive(Clone, Debug)]
pub struct AugBatch {
    pub tokens: TokenBatch,
    pub labels: Vec<usize>,
    pub origins: Vec<u64>,
}

#[derive(Clone, Debug)]
pub struct MetaBatch {
    pub task_raw: LabeledBatch,
    pub task_aug: Option<AugBatch>,
    /// Held-out raw examples; required when weights are learned.
    pub meta_raw: Option<LabeledBatch>,
}

fn check_aligned(op: &'static str, n: usize, labels: usize, ids: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Empty(op));
    }
    if labels != n || ids != n {
        return Err(Error::Shape {
            op,
            lhs: vec![n],
            rhs: vec![labels, ids],
        });
    }
    Ok(())
}

impl LabeledBatch {
    pub fn new(tokens: TokenBatch, labels: Vec<usize>, ids: Vec<u64>) -> Result<Self> {
        check_aligned("labeled batch", tokens.len(), labels.len(), ids.len())?;
        Ok(Self { tokens, labels, ids })
    }
}

impl AugBatch {
    pub fn new(tokens: TokenBatch, labels: Vec<usize>, origins: Vec<u64>) -> Result<Self> {
        check_aligned("augmented batch", tokens.len(), labels.len(), origins.len())?;
        Ok(Self { tokens, labels, origins })
    }
}

/// How augmented examples are weighted in the task loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Weighting {
    /// Weights from the reweight network, trained by meta steps.
    Learned,
    /// Every augmented example gets the same fixed weight.
    Constant(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSettings {
    pub main_lr: f64,
    pub reweight_lr: f64,
    /// Step size of the virtual SGD update.
    pub meta_lr: f64,
    /// Contrastive loss coefficient; zero bypasses the contrastive path.
    pub lambda: f64,
    pub weighting: Weighting,
    pub contrastive: ContrastiveSettings,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            main_lr: 2e-3,
            reweight_lr: 1e-3,
            meta_lr: 0.1,
            lambda: 0.1,
            weighting: Weighting::Learned,
            contrastive: ContrastiveSettings::default(),
        }
    }
}

impl TrainSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.main_lr > 0.0 && self.reweight_lr > 0.0) {
            return Err(Error::config("learning rates must be positive"));
        }
        if !(self.meta_lr >= 0.0 && self.meta_lr.is_finite()) {
            return Err(Error::config("meta learning rate must be non-negative"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("lambda must be non-negative"));
        }
        if let Weighting::Constant(c) = self.weighting {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::config("constant weight must lie in [0, 1]"));
            }
            if self.lambda > 0.0 {
                return Err(Error::config("contrastive learning needs learned weights"));
            }
        }
        self.contrastive.validate()
    }
}

/// Adam state for both modules plus the virtual step size.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub meta_lr: f64,
    pub main: Adam,
    pub reweight: Adam,
}

/// Per-iteration record.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationMetrics {
    pub iteration: u64,
    pub task_loss: f64,
    pub meta_loss: Option<f64>,
    pub contrast_loss: Option<f64>,
    /// Mean, min and max of the weights used in the real update.
    pub weight_stats: Option<(f64, f64, f64)>,
}

pub const METRICS_HEADER: &str = "iteration,L_Task,L_Meta,L_Contrast,mean_W,min_W,max_W";

impl IterationMetrics {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let (mean, min, max) = match self.weight_stats {
            Some((a, b, c)) => (Some(a), Some(b), Some(c)),
            None => (None, None, None),
        };
        format!(
            "{},{},{},{},{},{},{}",
            self.iteration,
            self.task_loss,
            opt(self.meta_loss),
            opt(self.contrast_loss),
            opt(mean),
            opt(min),
            opt(max)
        )
    }
}

fn stats(w: &[f64]) -> Option<(f64, f64, f64)> {
    if w.is_empty() {
        return None;
    }
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    let min = w.iter().copied().fold(f64::INFINITY, f64::min);
    let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Some((mean, min, max))
}

/// `mean(raw_ce) + mean(w ⊙ aug_ce)`; both cross-entropies unreduced `[n, 1]`.
pub fn task_loss(tape: &mut Tape, raw_ce: Var, aug: Option<(Var, Var)>) -> Result<Var> {
    let raw = tape.mean(raw_ce)?;
    let Some((aug_ce, w)) = aug else { return Ok(raw) };
    if tape.dims(aug_ce) != tape.dims(w) {
        let (a, b) = (tape.dims(aug_ce), tape.dims(w));
        return Err(Error::Shape {
            op: "task_loss",
            lhs: vec![a.0, a.1],
            rhs: vec![b.0, b.1],
        });
    }
    let weighted = tape.mul(w, aug_ce)?;
    let weighted = tape.mean(weighted)?;
    tape.add(raw, weighted)
}

/// `θ* = θ − α ∇_θ loss`, kept on the tape so it stays differentiable with
/// respect to anything `loss` depends on.
pub fn virtual_update(tape: &mut Tape, params: &[Var], loss: Var, alpha: f64) -> Result<Vec<Var>> {
    let grads = tape.backward(loss, params)?;
    params
        .iter()
        .zip(grads)
        .map(|(&p, g)| {
            if !tape.value(g).is_finite() {
                return Err(Error::NonFinite("virtual update gradient".into()));
            }
            let step = tape.scale(g, alpha)?;
            tape.sub(p, step)
        })
        .collect()
}

/// Encoder forward pass: hidden vectors and unreduced cross-entropy.
fn encode_ce<R: Rng + ?Sized>(
    tape: &mut Tape,
    cfg: &EncoderConfig,
    vars: &[Var],
    tokens: &TokenBatch,
    labels: &[usize],
    train: bool,
    rng: &mut R,
) -> Result<(Var, Var)> {
    let h = cfg.encode(tape, vars, tokens, train, rng)?;
    let z = cfg.logits(tape, vars, h)?;
    let ce = tape.cross_entropy(z, labels)?;
    Ok((h, ce))
}

/// Graph of the meta objective as a function of the reweight parameters.
pub struct MetaGraph {
    pub reweight_vars: Vec<Var>,
    pub weights: Var,
    pub task_loss: Var,
    pub meta_loss: Var,
}

/// Builds `L_meta(θ_M − α ∇ L_task(θ_M, W(θ_A)))` on `tape`.
///
/// The reweight network sees the augmented hidden vectors detached, so the
/// only route from `θ_A` to the meta loss is through the weights.
#[allow(clippy::too_many_arguments)]
pub fn meta_objective<R: Rng + ?Sized>(
    tape: &mut Tape,
    main: &EncoderParams,
    reweighter: &ReweightNet,
    raw: &LabeledBatch,
    aug: &AugBatch,
    meta: &LabeledBatch,
    alpha: f64,
    train: bool,
    rng: &mut R,
) -> Result<MetaGraph> {
    let cfg = &main.config;
    let theta = main.params.bind(tape, true)?;
    let reweight_vars = reweighter.params.bind(tape, true)?;
    let (_, raw_ce) = encode_ce(tape, cfg, &theta, &raw.tokens, &raw.labels, train, rng)?;
    let (h_aug, aug_ce) = encode_ce(tape, cfg, &theta, &aug.tokens, &aug.labels, train, rng)?;
    let h_aug = tape.detach(h_aug)?;
    let weights = reweighter
        .config
        .compute_weights(tape, &reweight_vars, h_aug, &aug.labels, train, rng)?;
    let task = task_loss(tape, raw_ce, Some((aug_ce, weights)))?;
    let theta_star = virtual_update(tape, &theta, task, alpha)?;
    let (_, meta_ce) = encode_ce(tape, cfg, &theta_star, &meta.tokens, &meta.labels, train, rng)?;
    let meta_loss = tape.mean(meta_ce)?;
    Ok(MetaGraph {
        reweight_vars,
        weights,
        task_loss: task,
        meta_loss,
    })
}

/// Evaluation-mode weights for an augmented batch.
pub fn score_weights(main: &EncoderParams, reweighter: &ReweightNet, tokens: &TokenBatch, labels: &[usize]) -> Result<Vec<f64>> {
    let h = main.hidden(tokens)?;
    reweighter.weights(&h, labels)
}

/// Main module, reweight network, contrastive state and optimizers for one run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub main: EncoderParams,
    pub reweighter: ReweightNet,
    pub contrastive: Option<ContrastiveState>,
    pub opt: OptimizerState,
    pub settings: TrainSettings,
    rng: ChaCha8Rng,
    iteration: u64,
}

impl Trainer {
    /// Initializes the main module then the reweight network from one
    /// seeded stream, so the main module's start point does not depend on
    /// the method.
    pub fn new(encoder: EncoderConfig, reweight: ReweightConfig, settings: TrainSettings, seed: u64) -> Result<Self> {
        settings.validate()?;
        if reweight.input_width != encoder.hidden_width() || reweight.num_classes != encoder.num_classes {
            return Err(Error::config("reweight network does not match the encoder"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let main = EncoderParams::new(encoder, &mut rng)?;
        let reweighter = ReweightNet::new(reweight, &mut rng)?;
        let contrastive = if settings.lambda > 0.0 {
            Some(ContrastiveState::new(settings.contrastive.clone(), &main)?)
        } else {
            None
        };
        let opt = OptimizerState {
            meta_lr: settings.meta_lr,
            main: Adam::new(settings.main_lr, &main.params),
            reweight: Adam::new(settings.reweight_lr, &reweighter.params),
        };
        Ok(Self {
            main,
            reweighter,
            contrastive,
            opt,
            settings,
            rng,
            iteration: 0,
        })
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    /// Evaluation-mode weights of the current reweight network.
    pub fn score(&self, tokens: &TokenBatch, labels: &[usize]) -> Result<Vec<f64>> {
        score_weights(&self.main, &self.reweighter, tokens, labels)
    }

    /// One Adam step on the reweight parameters along the meta gradient.
    /// The main module is left untouched. Returns the meta loss.
    pub fn meta_step(&mut self, raw: &LabeledBatch, aug: &AugBatch, meta: &LabeledBatch) -> Result<f64> {
        let mut tape = Tape::new();
        let g = meta_objective(
            &mut tape,
            &self.main,
            &self.reweighter,
            raw,
            aug,
            meta,
            self.opt.meta_lr,
            true,
            &mut self.rng,
        )?;
        let loss = tape.value(g.meta_loss).item();
        let grads = tape.grad_values(g.meta_loss, &g.reweight_vars)?;
        self.opt.reweight.step(&mut self.reweighter.params, &grads)?;
        Ok(loss)
    }

    /// One full training iteration: meta step (learned weighting only),
    /// real update of the main module, then the key encoder and queue
    /// updates when the contrastive term is active.
    pub fn step(&mut self, batch: &MetaBatch) -> Result<IterationMetrics> {
        let raw = &batch.task_raw;
        let aug = batch.task_aug.as_ref();
        let mut meta_loss = None;
        let weights: Option<Vec<f64>> = match (self.settings.weighting, aug) {
            (_, None) => None,
            (Weighting::Constant(c), Some(a)) => Some(vec![c; a.tokens.len()]),
            (Weighting::Learned, Some(a)) => {
                let meta = batch.meta_raw.as_ref().ok_or(Error::Empty("meta batch"))?;
                meta_loss = Some(self.meta_step(raw, a, meta)?);
                Some(self.score(&a.tokens, &a.labels)?)
            }
        };

        // key representations are taken before the momentum update and
        // serve both as positives and as queue entries
        let keys = match (&self.contrastive, aug) {
            (Some(state), Some(a)) => Some(state.key_encoder.hidden(&a.tokens)?),
            _ => None,
        };

        let cfg = &self.main.config;
        let mut tape = Tape::new();
        let theta = self.main.params.bind(&mut tape, true)?;
        let (h_raw, raw_ce) = encode_ce(&mut tape, cfg, &theta, &raw.tokens, &raw.labels, true, &mut self.rng)?;
        let aug_term = match (aug, &weights) {
            (Some(a), Some(w)) => {
                let (_, ce) = encode_ce(&mut tape, cfg, &theta, &a.tokens, &a.labels, true, &mut self.rng)?;
                let wv = tape.constant(crate::tensor::Tensor::matrix(w.len(), 1, w.clone()))?;
                Some((ce, wv))
            }
            _ => None,
        };
        let task = task_loss(&mut tape, raw_ce, aug_term)?;
        let task_value = tape.value(task).item();

        let mut contrast_loss = None;
        let mut total = task;
        if let (Some(state), Some(a), Some(w), Some(keys)) = (&self.contrastive, aug, &weights, &keys) {
            let mask = top_weight_mask(w, state.settings.rho);
            let positives: Vec<Vec<Vec<f64>>> = (0..raw.labels.len())
                .map(|i| {
                    select_positives_from_mask(&mask, &a.origins, &a.labels, raw.ids[i], raw.labels[i])
                        .into_iter()
                        .map(|j| keys.row_slice(j).to_vec())
                        .collect()
                })
                .collect();
            let s = &state.settings;
            let lc = contrastive_loss(&mut tape, h_raw, &raw.labels, &positives, &state.queues, s.temperature, s.normalize)?;
            contrast_loss = Some(tape.value(lc).item());
            let scaled = tape.scale(lc, self.settings.lambda)?;
            total = tape.add(task, scaled)?;
        }
        let grads = tape.grad_values(total, &theta)?;
        self.opt.main.step(&mut self.main.params, &grads)?;

        if let (Some(state), Some(a), Some(w), Some(keys)) = (&mut self.contrastive, aug, &weights, keys) {
            state.momentum_step(&self.main)?;
            let reprs: Vec<Vec<f64>> = (0..keys.rows()).map(|j| keys.row_slice(j).to_vec()).collect();
            state.update_queues(&reprs, &a.labels, w)?;
        }

        self.iteration += 1;
        Ok(IterationMetrics {
            iteration: self.iteration,
            task_loss: task_value,
            meta_loss,
            contrast_loss,
            weight_stats: weights.as_deref().and_then(stats),
        })
    }

    /// Naive single-level alternative: minimizes the reweighted task loss
    /// jointly over the main and reweight parameters. Returns the mean
    /// weight before the step.
    pub fn joint_step(&mut self, raw: &LabeledBatch, aug: &AugBatch) -> Result<f64> {
        let cfg = &self.main.config;
        let mut tape = Tape::new();
        let theta = self.main.params.bind(&mut tape, true)?;
        let phi = self.reweighter.params.bind(&mut tape, true)?;
        let (_, raw_ce) = encode_ce(&mut tape, cfg, &theta, &raw.tokens, &raw.labels, true, &mut self.rng)?;
        let (h_aug, aug_ce) = encode_ce(&mut tape, cfg, &theta, &aug.tokens, &aug.labels, true, &mut self.rng)?;
        let h_aug = tape.detach(h_aug)?;
        let w = self
            .reweighter
            .config
            .compute_weights(&mut tape, &phi, h_aug, &aug.labels, true, &mut self.rng)?;
        let mean_w = tape.value(w).data().iter().sum::<f64>() / aug.labels.len() as f64;
        let task = task_loss(&mut tape, raw_ce, Some((aug_ce, w)))?;
        let mut wrt = theta.clone();
        wrt.extend_from_slice(&phi);
        let mut grads = tape.grad_values(task, &wrt)?;
        let phi_grads = grads.split_off(theta.len());
        self.opt.main.step(&mut self.main.params, &grads)?;
        self.opt.reweight.step(&mut self.reweighter.params, &phi_grads)?;
        Ok(mean_w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderVariant;
    use crate::tensor::{relative_error, Tensor};

    fn tiny_configs() -> (EncoderConfig, ReweightConfig) {
        let enc = EncoderConfig {
            d_emb: 4,
            d_hidden: 4,
            max_len: 4,
            ..EncoderConfig::new(EncoderVariant::EmbedMeanMlp, 10, 2)
        };
        let rw = ReweightConfig {
            d_label: 2,
            hidden: vec![4],
            dropout: 0.0,
            ..ReweightConfig::new(2, 4)
        };
        (enc, rw)
    }

    fn batch(rows: &[[usize; 4]], labels: &[usize]) -> (TokenBatch, Vec<usize>) {
        let rows: Vec<Vec<usize>> = rows.iter().map(|r| r.to_vec()).collect();
        (TokenBatch::new(&rows).unwrap(), labels.to_vec())
    }

    fn toy() -> (LabeledBatch, AugBatch, LabeledBatch) {
        let (t, y) = batch(&[[3, 4, 0, 0], [5, 6, 7, 0]], &[0, 1]);
        let raw = LabeledBatch::new(t, y, vec![0, 1]).unwrap();
        let (t, y) = batch(&[[3, 4, 8, 0], [3, 9, 0, 0], [5, 6, 0, 0], [6, 7, 5, 0]], &[0, 1, 1, 0]);
        let aug = AugBatch::new(t, y, vec![0, 0, 1, 1]).unwrap();
        let (t, y) = batch(&[[4, 3, 0, 0], [7, 5, 0, 0]], &[0, 1]);
        let meta = LabeledBatch::new(t, y, vec![2, 3]).unwrap();
        (raw, aug, meta)
    }

    fn trainer(settings: TrainSettings) -> Trainer {
        let (enc, rw) = tiny_configs();
        Trainer::new(enc, rw, settings, 7).unwrap()
    }

    fn learned(lambda: f64) -> TrainSettings {
        TrainSettings {
            lambda,
            main_lr: 0.01,
            reweight_lr: 0.01,
            meta_lr: 0.5,
            contrastive: ContrastiveSettings {
                n_neg: 4,
                tau: 3,
                ..ContrastiveSettings::default()
            },
            ..TrainSettings::default()
        }
    }

    #[test]
    fn task_loss_weights_by_hand() {
        let mut tape = Tape::new();
        let raw = tape.constant(Tensor::matrix(2, 1, vec![1.0, 3.0])).unwrap();
        let aug = tape.constant(Tensor::matrix(4, 1, vec![2.0, 4.0, 6.0, 8.0])).unwrap();
        let w = tape.constant(Tensor::matrix(4, 1, vec![0.5, 0.25, 0.0, 1.0])).unwrap();
        let l = task_loss(&mut tape, raw, Some((aug, w))).unwrap();
        assert_eq!(tape.value(l).item(), 2.0 + (1.0 + 1.0 + 0.0 + 8.0) / 4.0);
        let zero = tape.constant(Tensor::zeros(4, 1)).unwrap();
        let l = task_loss(&mut tape, raw, Some((aug, zero))).unwrap();
        assert_eq!(tape.value(l).item(), 2.0);
    }

    #[test]
    fn virtual_update_closed_forms() {
        for alpha in [0.0, 0.3] {
            let mut tape = Tape::new();
            let theta = tape.param(Tensor::row(vec![1.5, -2.0])).unwrap();
            let sq = tape.mul(theta, theta).unwrap();
            let s = tape.sum(sq).unwrap();
            let l = tape.scale(s, 0.5).unwrap();
            let star = virtual_update(&mut tape, &[theta], l, alpha).unwrap();
            let want = vec![(1.0 - alpha) * 1.5, (1.0 - alpha) * -2.0];
            for (got, want) in tape.value(star[0]).data().iter().zip(want) {
                assert!((got - want).abs() < 1e-15);
            }
            if alpha == 0.0 {
                assert_eq!(tape.value(star[0]).data(), &[1.5, -2.0]);
            }
        }
    }

    #[test]
    fn meta_gradient_matches_finite_differences() {
        let (raw, aug, meta) = toy();
        let t = trainer(learned(0.0));
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut tape = Tape::new();
        let g = meta_objective(&mut tape, &t.main, &t.reweighter, &raw, &aug, &meta, 0.5, false, &mut rng).unwrap();
        let analytic: Vec<f64> = tape
            .grad_values(g.meta_loss, &g.reweight_vars)
            .unwrap()
            .iter()
            .flat_map(|x| x.data().to_vec())
            .collect();
        let base = t.reweighter.params.flatten();
        let eval = |flat: &[f64]| {
            let mut rw = t.reweighter.clone();
            rw.params.set_flat(flat).unwrap();
            let mut tape = Tape::new();
            let mut rng = rand::rngs::mock::StepRng::new(0, 0);
            let g = meta_objective(&mut tape, &t.main, &rw, &raw, &aug, &meta, 0.5, false, &mut rng).unwrap();
            tape.value(g.meta_loss).item()
        };
        let h = 1e-5;
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += h;
            let up = eval(&p);
            p[i] -= 2.0 * h;
            let down = eval(&p);
            let numeric = (up - down) / (2.0 * h);
            assert!(relative_error(analytic[i], numeric) <= 1e-3, "coordinate {i}: {} vs {numeric}", analytic[i]);
        }
    }

    #[test]
    fn zero_meta_lr_gives_zero_meta_gradient_and_frozen_reweighter() {
        let (raw, aug, meta) = toy();
        let mut t = trainer(TrainSettings {
            meta_lr: 0.0,
            ..learned(0.0)
        });
        let before = t.reweighter.clone();
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut tape = Tape::new();
        let g = meta_objective(&mut tape, &t.main, &t.reweighter, &raw, &aug, &meta, 0.0, false, &mut rng).unwrap();
        for gr in tape.grad_values(g.meta_loss, &g.reweight_vars).unwrap() {
            assert!(gr.data().iter().all(|&x| x == 0.0));
        }
        let batch = MetaBatch {
            task_raw: raw,
            task_aug: Some(aug),
            meta_raw: Some(meta),
        };
        for _ in 0..3 {
            t.step(&batch).unwrap();
        }
        assert_eq!(t.reweighter, before);
    }

    #[test]
    fn meta_step_lowers_the_weight_of_a_contradicting_sample() {
        let (raw, _, meta) = toy();
        // identical text with the meta label and with the opposite label
        let (tk, y) = batch(&[[4, 3, 0, 0], [4, 3, 0, 0]], &[0, 1]);
        let aug = AugBatch::new(tk, y, vec![0, 0]).unwrap();
        let mut t = trainer(learned(0.0));
        let before = t.score(&aug.tokens, &aug.labels).unwrap();
        t.meta_step(&raw, &aug, &meta).unwrap();
        let after = t.score(&aug.tokens, &aug.labels).unwrap();
        // shared parameters move both weights; the contradicting one must
        // fall and fall further than the consistent one
        assert!(after[1] < before[1], "{before:?} -> {after:?}");
        assert!(after[1] - before[1] < after[0] - before[0], "{before:?} -> {after:?}");
    }

    #[test]
    fn updates_are_routed_to_their_own_parameters() {
        let (raw, aug, meta) = toy();
        let mut t = trainer(learned(0.5));
        let main0 = t.main.clone();
        let key0 = t.contrastive.as_ref().unwrap().key_encoder.clone();
        t.meta_step(&raw, &aug, &meta).unwrap();
        assert_eq!(t.main, main0);
        let batch = MetaBatch {
            task_raw: raw,
            task_aug: Some(aug),
            meta_raw: Some(meta),
        };
        let rw_before = t.reweighter.clone();
        let m = t.step(&batch).unwrap();
        assert_ne!(t.main, main0);
        assert_ne!(t.reweighter, rw_before);
        // key = γ key0 + (1-γ) main_after, elementwise
        let g = t.settings.contrastive.gamma;
        let key = &t.contrastive.as_ref().unwrap().key_encoder;
        for ((k, k0), q) in key.params.flatten().iter().zip(key0.params.flatten()).zip(t.main.params.flatten()) {
            assert!((k - (g * k0 + (1.0 - g) * q)).abs() < 1e-15);
        }
        assert!(m.meta_loss.is_some() && m.contrast_loss.is_some());
        let (mean, min, max) = m.weight_stats.unwrap();
        assert!(0.0 < min && min <= mean && mean <= max && max < 1.0);
        assert!(t.contrastive.as_ref().unwrap().queues.iter().any(|q| !q.is_empty()));
    }

    #[test]
    fn constant_weighting_skips_meta_learning() {
        let (raw, aug, _) = toy();
        let mut t = trainer(TrainSettings {
            weighting: Weighting::Constant(1.0),
            lambda: 0.0,
            ..learned(0.0)
        });
        let rw = t.reweighter.clone();
        let m = t
            .step(&MetaBatch {
                task_raw: raw,
                task_aug: Some(aug),
                meta_raw: None,
            })
            .unwrap();
        assert_eq!(m.weight_stats, Some((1.0, 1.0, 1.0)));
        assert_eq!(m.meta_loss, None);
        assert_eq!(t.reweighter, rw);
    }

    #[test]
    fn learned_weighting_requires_a_meta_batch() {
        let (raw, aug, _) = toy();
        let mut t = trainer(learned(0.0));
        let r = t.step(&MetaBatch {
            task_raw: raw,
            task_aug: Some(aug),
            meta_raw: None,
        });
        assert!(matches!(r, Err(Error::Empty(_))));
    }

    #[test]
    fn joint_minimization_pushes_weights_down() {
        let (raw, aug, _) = toy();
        let mut t = trainer(TrainSettings {
            reweight_lr: 0.05,
            ..learned(0.0)
        });
        let first = t.joint_step(&raw, &aug).unwrap();
        let mut last = first;
        for _ in 0..100 {
            last = t.joint_step(&raw, &aug).unwrap();
        }
        assert!(last < first * 0.5, "{first} -> {last}");
    }

    #[test]
    fn metrics_row_leaves_missing_values_empty() {
        let m = IterationMetrics {
            iteration: 3,
            task_loss: 0.5,
            meta_loss: None,
            contrast_loss: Some(0.25),
            weight_stats: None,
        };
        assert_eq!(m.csv_row(), "3,0.5,,0.25,,,");
    }
}
