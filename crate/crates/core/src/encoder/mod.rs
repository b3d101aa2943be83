//! Text encoders for the main classification module: token embeddings
//! pooled into a hidden vector `h`, followed by a linear softmax classifier.

mod vocab;

pub use vocab::{normalize, Tokenized, Vocabulary, PAD, PAD_TOKEN, SEP, SEP_TOKEN, UNK, UNK_TOKEN};

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ParamSet, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderVariant {
    /// Mean of non-pad embeddings through a one-layer tanh MLP.
    EmbedMeanMlp,
    /// Kim-style CNN: per-width convolution, ReLU, max-over-time pooling.
    TextCnn,
}

/// Fixed-length token id batch, row-major `[batch, max_len]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenBatch {
    ids: Vec<usize>,
    batch: usize,
    max_len: usize,
}

impl TokenBatch {
    pub fn new(rows: &[Vec<usize>]) -> Result<Self> {
        let max_len = rows.first().map(Vec::len).ok_or(Error::Empty("token batch"))?;
        if max_len == 0 || rows.iter().any(|r| r.len() != max_len) {
            return Err(Error::Shape {
                op: "token_batch",
                lhs: vec![rows.len(), max_len],
                rhs: rows.iter().map(Vec::len).collect(),
            });
        }
        Ok(Self {
            ids: rows.concat(),
            batch: rows.len(),
            max_len,
        })
    }

    pub fn len(&self) -> usize {
        self.batch
    }

    pub fn is_empty(&self) -> bool {
        self.batch == 0
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.ids[i * self.max_len..(i + 1) * self.max_len]
    }

    /// Sub-batch made of the given rows.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        let picked: Vec<Vec<usize>> = rows.iter().map(|&r| self.row(r).to_vec()).collect();
        Self::new(&picked)
    }
}

/// Architecture and sizes of the main module.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub variant: EncoderVariant,
    pub vocab_size: usize,
    pub num_classes: usize,
    pub d_emb: usize,
    /// MLP output width; ignored by the CNN, whose width is `widths.len() * n_filters`.
    pub d_hidden: usize,
    pub n_filters: usize,
    pub widths: Vec<usize>,
    pub max_len: usize,
    pub dropout: f64,
}

impl EncoderConfig {
    pub fn new(variant: EncoderVariant, vocab_size: usize, num_classes: usize) -> Self {
        Self {
            variant,
            vocab_size,
            num_classes,
            d_emb: 64,
            d_hidden: 64,
            n_filters: 32,
            widths: vec![3, 4, 5],
            max_len: 64,
            dropout: 0.0,
        }
    }

    /// Width of `h`.
    pub fn hidden_width(&self) -> usize {
        match self.variant {
            EncoderVariant::EmbedMeanMlp => self.d_hidden,
            EncoderVariant::TextCnn => self.widths.len() * self.n_filters,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(format!("encoder: {m}")));
        if self.vocab_size < 3 {
            return bad("vocabulary must hold the three special tokens");
        }
        if self.num_classes < 2 {
            return bad("at least two classes required");
        }
        if self.d_emb == 0 || self.hidden_width() == 0 || self.max_len == 0 {
            return bad("dimensions must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.variant == EncoderVariant::TextCnn {
            if self.widths.is_empty() || self.widths.contains(&0) {
                return bad("convolution widths must be positive");
            }
            if self.widths.iter().any(|&w| w > self.max_len) {
                return bad("convolution width exceeds max_len");
            }
        }
        Ok(())
    }

    /// Xavier-uniform weights, zero biases. Parameter order is fixed per
    /// variant and shared by [`EncoderConfig::encode`].
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParamSet> {
        self.validate()?;
        let mut p = ParamSet::new();
        p.push("embedding", xavier(self.vocab_size, self.d_emb, rng));
        match self.variant {
            EncoderVariant::EmbedMeanMlp => {
                p.push("mlp.w", xavier(self.d_emb, self.d_hidden, rng));
                p.push("mlp.b", Tensor::zeros(1, self.d_hidden));
            }
            EncoderVariant::TextCnn => {
                for &w in &self.widths {
                    p.push(format!("conv{w}.w"), xavier(w * self.d_emb, self.n_filters, rng));
                    p.push(format!("conv{w}.b"), Tensor::zeros(1, self.n_filters));
                }
            }
        }
        p.push("classifier.w", xavier(self.hidden_width(), self.num_classes, rng));
        p.push("classifier.b", Tensor::zeros(1, self.num_classes));
        Ok(p)
    }

    fn check_vars(&self, vars: &[Var]) -> Result<()> {
        let want = match self.variant {
            EncoderVariant::EmbedMeanMlp => 5,
            EncoderVariant::TextCnn => 3 + 2 * self.widths.len(),
        };
        if vars.len() != want {
            return Err(Error::Shape {
                op: "encoder_params",
                lhs: vec![want],
                rhs: vec![vars.len()],
            });
        }
        Ok(())
    }

    /// Hidden representations `[B, hidden_width]`.
    pub fn encode<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        batch: &TokenBatch,
        train: bool,
        rng: &mut R,
    ) -> Result<Var> {
        self.check_vars(vars)?;
        if let Some(&bad) = batch.ids.iter().find(|&&i| i >= self.vocab_size) {
            return Err(Error::Shape {
                op: "encode",
                lhs: vec![self.vocab_size],
                rhs: vec![bad],
            });
        }
        let h = match self.variant {
            EncoderVariant::EmbedMeanMlp => self.encode_mean(tape, vars, batch)?,
            EncoderVariant::TextCnn => self.encode_cnn(tape, vars, batch)?,
        };
        tape.dropout(h, self.dropout, train, rng)
    }

    fn encode_mean(&self, tape: &mut Tape, vars: &[Var], batch: &TokenBatch) -> Result<Var> {
        let d = self.d_emb;
        let b = batch.len();
        let mut toks = Vec::new();
        let mut seg = Vec::new();
        let mut counts = vec![0usize; b];
        for i in 0..b {
            for &t in batch.row(i).iter().filter(|&&t| t != PAD) {
                toks.push(t);
                seg.push(i);
                counts[i] += 1;
            }
        }
        let mean = if toks.is_empty() {
            tape.constant(Tensor::zeros(b, d))?
        } else {
            let e = tape.gather_rows(vars[0], &toks)?;
            let idx: Rc<[usize]> = seg.iter().flat_map(|&s| (0..d).map(move |j| s * d + j)).collect();
            let sums = tape.scatter_add(e, idx, b, d)?;
            let inv = counts.iter().map(|&c| 1.0 / c.max(1) as f64).collect();
            let inv = tape.constant(Tensor::matrix(b, 1, inv))?;
            let inv = tape.broadcast_cols(inv, d)?;
            tape.mul(sums, inv)?
        };
        let z = tape.matmul(mean, vars[1])?;
        let z = tape.add_row(z, vars[2])?;
        tape.tanh(z)
    }

    fn encode_cnn(&self, tape: &mut Tape, vars: &[Var], batch: &TokenBatch) -> Result<Var> {
        let d = self.d_emb;
        let (b, len) = (batch.len(), batch.max_len());
        let mut pooled = Vec::with_capacity(self.widths.len());
        for (k, &w) in self.widths.iter().enumerate() {
            if w > len {
                return Err(Error::config(format!("convolution width {w} exceeds sequence length {len}")));
            }
            let steps = len - w + 1;
            let mut idx = Vec::with_capacity(b * steps * w * d);
            for i in 0..b {
                let row = batch.row(i);
                for t in 0..steps {
                    for &tok in &row[t..t + w] {
                        idx.extend((0..d).map(|j| tok * d + j));
                    }
                }
            }
            let windows = tape.gather(vars[0], idx.into(), b * steps, w * d)?;
            let conv = tape.matmul(windows, vars[1 + 2 * k])?;
            let conv = tape.add_row(conv, vars[2 + 2 * k])?;
            let act = tape.relu(conv)?;
            pooled.push(tape.segment_max(act, steps)?);
        }
        if pooled.len() == 1 {
            Ok(pooled[0])
        } else {
            tape.concat_cols(&pooled)
        }
    }

    /// Classifier logits `[B, num_classes]`.
    pub fn logits(&self, tape: &mut Tape, vars: &[Var], h: Var) -> Result<Var> {
        self.check_vars(vars)?;
        let n = vars.len();
        let z = tape.matmul(h, vars[n - 2])?;
        tape.add_row(z, vars[n - 1])
    }

    /// Class probabilities `softmax(logits)`.
    pub fn classify(&self, tape: &mut Tape, vars: &[Var], h: Var) -> Result<Var> {
        let z = self.logits(tape, vars, h)?;
        tape.softmax_rows(z)
    }
}

pub(crate) fn xavier<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-a..a)).collect();
    Tensor::matrix(fan_in, fan_out, data)
}

/// Main-module parameters `θ_M` together with their architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub params: ParamSet,
}

impl EncoderParams {
    pub fn new<R: Rng + ?Sized>(config: EncoderConfig, rng: &mut R) -> Result<Self> {
        let params = config.init(rng)?;
        Ok(Self { config, params })
    }

    /// Evaluation-mode hidden vectors, one row per example.
    pub fn hidden(&self, batch: &TokenBatch) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, false)?;
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let h = self.config.encode(&mut tape, &vars, batch, false, &mut rng)?;
        Ok(tape.value(h).clone())
    }

    /// Evaluation-mode class probabilities.
    pub fn predict_proba(&self, batch: &TokenBatch) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, false)?;
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let h = self.config.encode(&mut tape, &vars, batch, false, &mut rng)?;
        let p = self.config.classify(&mut tape, &vars, h)?;
        Ok(tape.value(p).clone())
    }

    pub fn predict(&self, batch: &TokenBatch) -> Result<Vec<usize>> {
        let p = self.predict_proba(batch)?;
        Ok((0..p.rows()).map(|i| argmax(p.row_slice(i))).collect())
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
