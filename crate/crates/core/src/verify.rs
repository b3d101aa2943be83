//! Finite-difference verification of every tape primitive, the composed
//! losses and the meta-gradient, shared by the `gradcheck` command, the
//! examples and the acceptance tests.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::contrastive::{contrastive_loss, new_queues, update_queues, QueuePolicy};
use crate::encoder::{EncoderConfig, EncoderParams, EncoderVariant, TokenBatch};
use crate::error::Result;
use crate::meta_loop::{meta_objective, task_loss, AugBatch, LabeledBatch};
use crate::reweighter::{ReweightConfig, ReweightNet};
use crate::tensor::{grad_check, relative_error, Tape, Tensor, Var};

/// Outcome of one checked function over all its random trials.
#[derive(Clone, Debug, PartialEq)]
pub struct CaseReport {
    pub name: &'static str,
    pub trials: usize,
    pub failures: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl CaseReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SuiteSettings {
    pub trials: usize,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for SuiteSettings {
    fn default() -> Self {
        Self {
            trials: 100,
            step: 1e-5,
            tolerance: 1e-4,
            seed: 0,
        }
    }
}

/// Random input domain of a case.
#[derive(Clone, Copy)]
enum Domain {
    Any,
    /// Values bounded away from zero (kinks and poles at the origin).
    AwayFromZero,
    Positive,
}

fn sample(rng: &mut ChaCha8Rng, rows: usize, cols: usize, domain: Domain) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| match domain {
            Domain::Any => rng.gen_range(-1.5..1.5),
            Domain::AwayFromZero => {
                let m: f64 = rng.gen_range(0.1..1.5);
                if rng.gen_bool(0.5) {
                    m
                } else {
                    -m
                }
            }
            Domain::Positive => rng.gen_range(0.2..2.0),
        })
        .collect();
    Tensor::matrix(rows, cols, data)
}

/// Random fixed coefficients so that a non-scalar output reduces to a scalar
/// without symmetric cancellation.
fn project(tape: &mut Tape, out: Var, coeffs: &Tensor) -> Result<Var> {
    let c = tape.constant(coeffs.clone())?;
    let p = tape.mul(out, c)?;
    tape.sum(p)
}

type Body = dyn Fn(&mut Tape, Var, &Shape) -> Result<Var>;

/// Shape parameters drawn per trial.
#[derive(Clone, Debug)]
struct Shape {
    r: usize,
    c: usize,
    k: usize,
    idx: Rc<[usize]>,
    /// One target in `0..4` per input element.
    scatter: Rc<[usize]>,
    labels: Vec<usize>,
    seed: u64,
}

struct Case {
    name: &'static str,
    domain: Domain,
    /// Input dims from the trial shape.
    input: fn(&Shape) -> (usize, usize),
    body: Box<Body>,
}

fn case(name: &'static str, domain: Domain, input: fn(&Shape) -> (usize, usize), body: impl Fn(&mut Tape, Var, &Shape) -> Result<Var> + 'static) -> Case {
    Case {
        name,
        domain,
        input,
        body: Box::new(body),
    }
}

fn same(s: &Shape) -> (usize, usize) {
    (s.r, s.c)
}

fn doubled(s: &Shape) -> (usize, usize) {
    (2 * s.r, s.c)
}

/// Splits a `[2r, c]` input into two `[r, c]` operands.
fn halves(t: &mut Tape, x: Var, s: &Shape) -> Result<(Var, Var)> {
    Ok((t.slice_rows(x, 0, s.r)?, t.slice_rows(x, s.r, s.r)?))
}

fn primitive_cases() -> Vec<Case> {
    vec![
        case("add", Domain::Any, doubled, |t, x, s| {
            let (a, b) = halves(t, x, s)?;
            t.add(a, b)
        }),
        case("sub", Domain::Any, doubled, |t, x, s| {
            let (a, b) = halves(t, x, s)?;
            t.sub(a, b)
        }),
        case("mul", Domain::Any, doubled, |t, x, s| {
            let (a, b) = halves(t, x, s)?;
            t.mul(a, b)
        }),
        case("scale", Domain::Any, same, |t, x, _| t.scale(x, -1.7)),
        case("add_scalar", Domain::Any, same, |t, x, _| t.add_scalar(x, 0.3)),
        case("neg", Domain::Any, same, |t, x, _| t.neg(x)),
        case("sigmoid", Domain::Any, same, |t, x, _| t.sigmoid(x)),
        case("tanh", Domain::Any, same, |t, x, _| t.tanh(x)),
        case("relu", Domain::AwayFromZero, same, |t, x, _| t.relu(x)),
        case("exp", Domain::Any, same, |t, x, _| t.exp(x)),
        case("log", Domain::Positive, same, |t, x, _| t.log(x)),
        case("recip", Domain::AwayFromZero, same, |t, x, _| t.recip(x)),
        case("sqrt", Domain::Positive, same, |t, x, _| t.sqrt(x)),
        case("matmul", Domain::Any, |s| (s.r + s.c, s.c), |t, x, s| {
            let a = t.slice_rows(x, 0, s.r)?;
            let b = t.slice_rows(x, s.r, s.c)?;
            t.matmul(a, b)
        }),
        case("transpose", Domain::Any, same, |t, x, _| t.transpose(x)),
        case("sum_rows", Domain::Any, same, |t, x, _| t.sum_rows(x)),
        case("sum_cols", Domain::Any, same, |t, x, _| t.sum_cols(x)),
        case("sum", Domain::Any, same, |t, x, _| t.sum(x)),
        case("mean", Domain::Any, same, |t, x, _| t.mean(x)),
        case("broadcast_rows", Domain::Any, |s| (1, s.c), |t, x, s| t.broadcast_rows(x, s.r)),
        case("broadcast_cols", Domain::Any, |s| (s.r, 1), |t, x, s| t.broadcast_cols(x, s.c)),
        case("add_row", Domain::Any, |s| (s.r + 1, s.c), |t, x, s| {
            let a = t.slice_rows(x, 0, s.r)?;
            let b = t.slice_rows(x, s.r, 1)?;
            t.add_row(a, b)
        }),
        case("gather", Domain::Any, same, |t, x, s| t.gather(x, s.idx.clone(), s.idx.len(), 1)),
        case("scatter_add", Domain::Any, same, |t, x, s| t.scatter_add(x, s.scatter.clone(), 4, 1)),
        case("gather_rows", Domain::Any, |s| (s.k, s.c), |t, x, s| t.gather_rows(x, &s.labels)),
        case("concat_cols", Domain::Any, doubled, |t, x, s| {
            let (a, b) = halves(t, x, s)?;
            t.concat_cols(&[a, b, a])
        }),
        case("slice_rows", Domain::Any, doubled, |t, x, s| t.slice_rows(x, 1, s.r)),
        case("segment_max", Domain::Any, same, |t, x, s| t.segment_max(x, s.r)),
        case("dropout", Domain::Any, same, |t, x, s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
            t.dropout(x, 0.4, true, &mut rng)
        }),
        case("log_softmax_rows", Domain::Any, same, |t, x, _| t.log_softmax_rows(x)),
        case("softmax_rows", Domain::Any, same, |t, x, _| t.softmax_rows(x)),
        case("cross_entropy", Domain::Any, |s| (s.labels.len(), s.k), |t, x, s| t.cross_entropy(x, &s.labels)),
        case("l2_normalize_rows", Domain::AwayFromZero, same, |t, x, _| t.l2_normalize_rows(x)),
        case("second_order", Domain::Any, same, |t, x, _| {
            // gradient of sum(tanh(x) * x * x), itself differentiated
            let th = t.tanh(x)?;
            let sq = t.mul(x, x)?;
            let p = t.mul(th, sq)?;
            let f = t.sum(p)?;
            let g = t.backward(f, &[x])?;
            t.mul(g[0], x)
        }),
    ]
}

/// Unpacks a flat row into tensors of the given shapes via `gather`.
fn unflatten(t: &mut Tape, flat: Var, shapes: &[(usize, usize)]) -> Result<Vec<Var>> {
    let mut offset = 0;
    let mut out = Vec::with_capacity(shapes.len());
    for &(r, c) in shapes {
        let idx: Rc<[usize]> = (offset..offset + r * c).collect();
        out.push(t.gather(flat, idx, r, c)?);
        offset += r * c;
    }
    Ok(out)
}

const HID: usize = 3;

fn reweight_config(s: &Shape) -> ReweightConfig {
    ReweightConfig {
        d_label: 2,
        hidden: vec![4],
        dropout: 0.0,
        ..ReweightConfig::new(s.k, HID)
    }
}

fn reweight_shapes(cfg: &ReweightConfig) -> Vec<(usize, usize)> {
    let mut shapes = vec![(cfg.num_classes, cfg.d_label)];
    let mut width = cfg.input_width + cfg.d_label;
    for &h in &cfg.hidden {
        shapes.push((width, h));
        shapes.push((1, h));
        width = h;
    }
    shapes.push((width, 1));
    shapes.push((1, 1));
    shapes
}

fn composed_cases() -> Vec<Case> {
    vec![
        // reweight network: parameters and hidden inputs packed in one row
        case(
            "reweight_net",
            Domain::Any,
            |s| {
                let n: usize = reweight_shapes(&reweight_config(s)).iter().map(|(r, c)| r * c).sum();
                (1, n + s.labels.len() * HID)
            },
            |t, x, s| {
                let cfg = reweight_config(s);
                let mut shapes = reweight_shapes(&cfg);
                shapes.push((s.labels.len(), HID));
                let mut vars = unflatten(t, x, &shapes)?;
                let h = vars.pop().expect("hidden block");
                let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
                cfg.compute_weights(t, &vars, h, &s.labels, false, &mut rng)
            },
        ),
        // reweighted task loss over raw logits, augmented logits and weights
        case(
            "task_loss",
            Domain::Any,
            |s| (1, s.r * s.k + s.labels.len() * (s.k + 1)),
            |t, x, s| {
                let n = s.labels.len();
                let v = unflatten(t, x, &[(s.r, s.k), (n, s.k), (n, 1)])?;
                let raw_labels: Vec<usize> = (0..s.r).map(|i| i % s.k).collect();
                let raw_ce = t.cross_entropy(v[0], &raw_labels)?;
                let aug_ce = t.cross_entropy(v[1], &s.labels)?;
                let w = t.sigmoid(v[2])?;
                task_loss(t, raw_ce, Some((aug_ce, w)))
            },
        ),
        case("contrastive_loss", Domain::AwayFromZero, |s| (s.r, s.c + 1), |t, x, s| {
            let d = s.c + 1;
            let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
            let labels: Vec<usize> = (0..s.r).map(|i| i % 2).collect();
            let mut queues = new_queues(2, 4);
            let reprs: Vec<Vec<f64>> = (0..6).map(|_| sample(&mut rng, 1, d, Domain::AwayFromZero).into_data()).collect();
            update_queues(QueuePolicy::Lasw, &mut queues, &reprs, &[0, 1, 0, 1, 0, 1], &[0.5; 6], 3)?;
            let positives: Vec<Vec<Vec<f64>>> = (0..s.r)
                .map(|i| {
                    (0..1 + i % 2)
                        .map(|_| sample(&mut rng, 1, d, Domain::AwayFromZero).into_data())
                        .collect()
                })
                .collect();
            let normalize = s.seed % 2 == 0;
            contrastive_loss(t, x, &labels, &positives, &queues, 0.7, normalize)
        }),
        case("encoder_mean", Domain::Any, |_| (6, 3), |t, x, s| {
            let cfg = EncoderConfig {
                d_emb: 3,
                d_hidden: 2,
                ..EncoderConfig::new(EncoderVariant::EmbedMeanMlp, 6, 2)
            };
            encoder_loss(t, x, s, cfg)
        }),
        case("encoder_cnn", Domain::Any, |_| (6, 3), |t, x, s| {
            let cfg = EncoderConfig {
                d_emb: 3,
                n_filters: 2,
                widths: vec![2, 3],
                ..EncoderConfig::new(EncoderVariant::TextCnn, 6, 2)
            };
            encoder_loss(t, x, s, cfg)
        }),
    ]
}

/// Classification loss of a small encoder as a function of its embedding
/// table; the other parameters are fixed by the trial seed.
fn encoder_loss(t: &mut Tape, table: Var, s: &Shape, cfg: EncoderConfig) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let params = cfg.init(&mut rng)?;
    let mut vars = params.bind(t, false)?;
    vars[0] = table;
    let rows: Vec<Vec<usize>> = (0..3)
        .map(|_| {
            let n = rng.gen_range(1..=4);
            (0..4).map(|j| if j < n { rng.gen_range(1..6) } else { 0 }).collect()
        })
        .collect();
    let batch = TokenBatch::new(&rows)?;
    let h = cfg.encode(t, &vars, &batch, false, &mut rng)?;
    let z = cfg.logits(t, &vars, h)?;
    let ce = t.cross_entropy(z, &[0, 1, 1])?;
    t.mean(ce)
}

fn run_case(case: &Case, settings: &SuiteSettings, rng: &mut ChaCha8Rng) -> Result<CaseReport> {
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..settings.trials {
        let r = rng.gen_range(1..=3);
        let c = rng.gen_range(1..=3);
        let k = rng.gen_range(2..=3);
        let n_labels = rng.gen_range(1..=4);
        let shape = Shape {
            r,
            c,
            k,
            idx: (0..rng.gen_range(1..=5)).map(|_| rng.gen_range(0..r * c)).collect(),
            scatter: (0..r * c).map(|_| rng.gen_range(0..4)).collect(),
            labels: (0..n_labels).map(|_| rng.gen_range(0..k)).collect(),
            seed: rng.gen(),
        };
        let (ir, ic) = (case.input)(&shape);
        let mut point = sample(rng, ir, ic, case.domain);
        if case.name == "segment_max" {
            // keep segment maxima unique so the function is smooth at the point
            for (i, v) in point.data_mut().iter_mut().enumerate() {
                *v += i as f64 * 0.05;
            }
        }
        let probe = {
            let mut t = Tape::new();
            let x = t.param(point.clone())?;
            let out = (case.body)(&mut t, x, &shape)?;
            let (or, oc) = t.dims(out);
            sample(rng, or, oc, Domain::Any)
        };
        let report = grad_check(
            |t, x| {
                let out = (case.body)(t, x, &shape)?;
                project(t, out, &probe)
            },
            &point,
            settings.step,
            settings.tolerance,
        )?;
        worst = worst.max(report.max_rel_error);
        if !report.passed() {
            failures += 1;
        }
    }
    Ok(CaseReport {
        name: case.name,
        trials: settings.trials,
        failures,
        max_rel_error: worst,
        tolerance: settings.tolerance,
    })
}

/// Finite-difference check of every primitive and composed loss.
pub fn gradient_suite(settings: &SuiteSettings) -> Result<Vec<CaseReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    primitive_cases()
        .iter()
        .chain(composed_cases().iter())
        .map(|c| run_case(c, settings, &mut rng).map_err(|e| crate::Error::config(format!("{}: {e}", c.name))))
        .collect()
}

/// Meta-gradient against central differences over every reweight parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaGradientReport {
    pub main_params: usize,
    pub reweight_params: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl MetaGradientReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

/// Checks the derivative of the meta loss after one virtual step with
/// respect to the reweight parameters, on a random model of fewer than
/// 200 parameters in total.
pub fn meta_gradient_check(seed: u64, alpha: f64, step: f64, tolerance: f64) -> Result<MetaGradientReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let enc = EncoderConfig {
        d_emb: 4,
        d_hidden: 4,
        max_len: 5,
        ..EncoderConfig::new(EncoderVariant::EmbedMeanMlp, 12, 2)
    };
    let rw = ReweightConfig {
        d_label: 3,
        hidden: vec![5],
        dropout: 0.0,
        ..ReweightConfig::new(2, enc.hidden_width())
    };
    let main = EncoderParams::new(enc, &mut rng)?;
    let reweighter = ReweightNet::new(rw, &mut rng)?;
    let tokens = |n: usize, rng: &mut ChaCha8Rng| -> Result<TokenBatch> {
        let rows: Vec<Vec<usize>> = (0..n)
            .map(|_| {
                let len = rng.gen_range(1..=5);
                (0..5).map(|j| if j < len { rng.gen_range(3..12) } else { 0 }).collect()
            })
            .collect();
        TokenBatch::new(&rows)
    };
    let labels = |n: usize, rng: &mut ChaCha8Rng| -> Vec<usize> { (0..n).map(|_| rng.gen_range(0..2)).collect() };
    let raw = LabeledBatch::new(tokens(3, &mut rng)?, labels(3, &mut rng), vec![0, 1, 2])?;
    let aug = AugBatch::new(tokens(6, &mut rng)?, labels(6, &mut rng), vec![0, 0, 1, 1, 2, 2])?;
    let meta = LabeledBatch::new(tokens(4, &mut rng)?, labels(4, &mut rng), vec![3, 4, 5, 6])?;

    let meta_loss = |rw: &ReweightNet, grads: bool| -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::new();
        let mut r = rand::rngs::mock::StepRng::new(0, 0);
        let g = meta_objective(&mut tape, &main, rw, &raw, &aug, &meta, alpha, false, &mut r)?;
        let value = tape.value(g.meta_loss).item();
        let grad = if grads {
            tape.grad_values(g.meta_loss, &g.reweight_vars)?
                .iter()
                .flat_map(|t| t.data().to_vec())
                .collect()
        } else {
            Vec::new()
        };
        Ok((value, grad))
    };
    let (_, analytic) = meta_loss(&reweighter, true)?;
    let base = reweighter.params.flatten();
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let mut probe = reweighter.clone();
        let mut p = base.clone();
        p[i] += step;
        probe.params.set_flat(&p)?;
        let up = meta_loss(&probe, false)?.0;
        p[i] -= 2.0 * step;
        probe.params.set_flat(&p)?;
        let down = meta_loss(&probe, false)?.0;
        worst = worst.max(relative_error(analytic[i], (up - down) / (2.0 * step)));
    }
    Ok(MetaGradientReport {
        main_params: main.params.num_scalars(),
        reweight_params: reweighter.params.num_scalars(),
        max_rel_error: worst,
        tolerance,
    })
}

/// Fixed-width table of suite results.
pub fn format_table(cases: &[CaseReport]) -> String {
    let mut s = format!("{:<20} {:>6} {:>8} {:>12}  result\n", "case", "trials", "failures", "max_rel_err");
    for c in cases {
        s.push_str(&format!(
            "{:<20} {:>6} {:>8} {:>12.3e}  {}\n",
            c.name,
            c.trials,
            c.failures,
            c.max_rel_error,
            if c.passed() { "pass" } else { "FAIL" }
        ));
    }
    s
}
