use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::augment::{build_augmented_dataset, filter_augmented, flip_labels, AugmentedSet, SynonymLexicon};
use crate::config::{ExperimentConfig, Method};
use crate::encoder::{TokenBatch, Vocabulary};
use crate::error::{Error, Result};
use crate::meta_loop::{AugBatch, LabeledBatch, MetaBatch, Trainer, METRICS_HEADER};

use super::metrics::{evaluate, histogram, histogram_csv, mean_std, Evaluation};
use super::{save_checkpoint, split_meta, write_atomic, Dataset};

/// Number of weight-histogram bins over `[0, 1]`.
pub const HISTOGRAM_BINS: usize = 20;

/// Raw, dev and augmented data plus the shared vocabulary.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub train: Dataset,
    pub dev: Dataset,
    pub augmented: AugmentedSet,
    pub lexicon: SynonymLexicon,
    pub vocab: Vocabulary,
}

/// Loads or generates raw data and builds the augmented set.
///
/// With `reuse_augmented` false, `data.augmented` is ignored and the set is
/// rebuilt from the augmentation settings.
pub fn prepare_data(cfg: &ExperimentConfig, reuse_augmented: bool) -> Result<PreparedData> {
    let (train, dev, lexicon) = match &cfg.data.train {
        Some(path) => {
            let train = Dataset::load(path, None)?;
            let dev_path = cfg.data.dev.as_ref().ok_or_else(|| Error::config("data.dev is required"))?;
            let dev = Dataset::load(dev_path, Some(&train.label_names))?;
            let lexicon = match &cfg.data.lexicon {
                Some(p) => SynonymLexicon::load(p)?,
                None => SynonymLexicon::new(),
            };
            (train, dev, lexicon)
        }
        None => {
            let s = cfg.data.synthetic.generate()?;
            let lexicon = match &cfg.data.lexicon {
                Some(p) => SynonymLexicon::load(p)?,
                None => s.lexicon,
            };
            (s.train, s.dev, lexicon)
        }
    };
    if train.is_empty() || dev.is_empty() {
        return Err(Error::Empty("train or dev set"));
    }
    let augmented = match (&cfg.data.augmented, reuse_augmented) {
        (Some(path), true) => AugmentedSet::load(path, &train.label_names, cfg.augment.seed)?,
        _ => {
            let augs = cfg.augment.build(&lexicon)?;
            let mut set = build_augmented_dataset(&train, &augs, cfg.augment.per_example, cfg.augment.seed)?;
            flip_labels(&mut set, cfg.augment.flip_rate, cfg.augment.seed)?;
            set
        }
    };
    augmented.check_origins(&train)?;
    let train_texts: Vec<String> = train.examples.iter().map(|e| e.text()).collect();
    let vocab = Vocabulary::build(
        train_texts.iter().map(String::as_str).chain(augmented.examples.iter().map(|e| e.text.as_str())),
        cfg.encoder.min_frequency,
    );
    Ok(PreparedData {
        train,
        dev,
        augmented,
        lexicon,
        vocab,
    })
}

/// Final eval-mode weights over the augmented examples a run trained on.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightReport {
    pub weights: Vec<f64>,
    pub flipped: Vec<bool>,
}

impl WeightReport {
    fn mean_where(&self, flipped: bool) -> Option<f64> {
        let v: Vec<f64> = self.weights.iter().zip(&self.flipped).filter(|(_, &f)| f == flipped).map(|(w, _)| *w).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn mean(&self) -> f64 {
        self.weights.iter().sum::<f64>() / self.weights.len() as f64
    }

    pub fn clean_mean(&self) -> Option<f64> {
        self.mean_where(false)
    }

    pub fn flipped_mean(&self) -> Option<f64> {
        self.mean_where(true)
    }

    pub fn histogram(&self) -> Vec<u64> {
        histogram(&self.weights, HISTOGRAM_BINS)
    }
}

/// One method trained with one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    /// Dev metrics after each epoch; index 0 is the untrained model.
    pub curve: Vec<Evaluation>,
    pub weights: Option<WeightReport>,
}

impl SeedRun {
    pub fn final_eval(&self) -> Evaluation {
        *self.curve.last().expect("curve holds the untrained evaluation")
    }

    /// `(metric_name, value, epoch)` rows.
    pub fn records(&self) -> Vec<(&'static str, f64, usize)> {
        let mut out = Vec::new();
        for (epoch, e) in self.curve.iter().enumerate() {
            out.push(("dev_accuracy", e.accuracy, epoch));
            out.push(("dev_mcc", e.mcc, epoch));
        }
        let last = self.curve.len() - 1;
        if let Some(w) = &self.weights {
            out.push(("weight_mean", w.mean(), last));
            if let (Some(c), Some(f)) = (w.clean_mean(), w.flipped_mean()) {
                out.push(("weight_mean_clean", c, last));
                out.push(("weight_mean_flipped", f, last));
                out.push(("weight_gap", c - f, last));
            }
        }
        out
    }
}

/// All seeds of one method.
#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub method: Method,
    pub runs: Vec<SeedRun>,
}

impl RunResult {
    pub fn final_accuracies(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.final_eval().accuracy).collect()
    }

    pub fn final_mccs(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.final_eval().mcc).collect()
    }

    /// Mean and sample standard deviation of final dev accuracy.
    pub fn accuracy(&self) -> (f64, f64) {
        mean_std(&self.final_accuracies())
    }

    pub fn mcc(&self) -> (f64, f64) {
        mean_std(&self.final_mccs())
    }

    /// Histogram summed over seeds, for runs with learned weights.
    pub fn histogram(&self) -> Option<Vec<u64>> {
        let mut total: Option<Vec<u64>> = None;
        for w in self.runs.iter().filter_map(|r| r.weights.as_ref()) {
            let h = w.histogram();
            total = Some(match total {
                Some(t) => t.iter().zip(&h).map(|(a, b)| a + b).collect(),
                None => h,
            });
        }
        total
    }

    /// Named summary statistics over seeds: `(metric, mean, std, n)`.
    pub fn summary(&self) -> Vec<(&'static str, f64, f64, usize)> {
        let mut out = Vec::new();
        let n = self.runs.len();
        let (m, s) = self.accuracy();
        out.push(("dev_accuracy", m, s, n));
        let (m, s) = self.mcc();
        out.push(("dev_mcc", m, s, n));
        let gaps: Vec<f64> = self
            .runs
            .iter()
            .filter_map(|r| r.weights.as_ref())
            .filter_map(|w| Some(w.clean_mean()? - w.flipped_mean()?))
            .collect();
        if !gaps.is_empty() {
            let (m, s) = mean_std(&gaps);
            out.push(("weight_gap", m, s, gaps.len()));
        }
        out
    }
}

pub const RESULTS_HEADER: &str = "method,seed,metric_name,value,epoch";

pub fn results_csv(results: &[RunResult]) -> String {
    let mut s = format!("{RESULTS_HEADER}\n");
    for r in results {
        for run in &r.runs {
            for (name, value, epoch) in run.records() {
                s.push_str(&format!("{},{},{name},{value},{epoch}\n", r.method.name(), run.seed));
            }
        }
    }
    s
}

pub fn summary_csv(results: &[RunResult]) -> String {
    let mut s = String::from("method,metric_name,mean,std,n\n");
    for r in results {
        for (name, m, sd, n) in r.summary() {
            s.push_str(&format!("{},{name},{m},{sd},{n}\n", r.method.name()));
        }
    }
    s
}

fn all_rows(n: usize) -> Vec<usize> {
    (0..n).collect()
}

fn labeled(ds: &Dataset, tokens: &TokenBatch, rows: &[usize]) -> Result<LabeledBatch> {
    LabeledBatch::new(
        tokens.select(rows)?,
        rows.iter().map(|&r| ds.examples[r].label).collect(),
        rows.iter().map(|&r| ds.examples[r].id).collect(),
    )
}

/// Trains and evaluates one method with one seed, writing per-seed files
/// under `dir` when given.
pub fn run_seed(cfg: &ExperimentConfig, data: &PreparedData, method: Method, seed: u64, dir: Option<&Path>) -> Result<SeedRun> {
    let max_len = cfg.encoder.max_len;
    let (task, meta) = if method.learns_weights() {
        let (t, m) = split_meta(&data.train, cfg.train.meta_fraction, seed)?;
        (t, Some(m))
    } else {
        (data.train.clone(), None)
    };
    let task_ids: std::collections::BTreeSet<u64> = task.examples.iter().map(|e| e.id).collect();
    let mut aug_examples: Vec<_> = match method {
        Method::Plain => Vec::new(),
        Method::AugFilter => {
            let (lo, hi) = cfg.filter.bounds();
            filter_augmented(&data.augmented.examples, lo, hi)?
        }
        _ => data.augmented.examples.clone(),
    };
    aug_examples.retain(|e| task_ids.contains(&e.origin_id));

    let task_tokens = task.tokens(&data.vocab, &all_rows(task.len()), max_len)?;
    let meta_tokens = match &meta {
        Some(m) => Some(m.tokens(&data.vocab, &all_rows(m.len()), max_len)?),
        None => None,
    };
    let aug_set = AugmentedSet {
        label_names: data.augmented.label_names.clone(),
        examples: aug_examples,
    };
    let aug_tokens = if aug_set.is_empty() {
        None
    } else {
        Some(aug_set.tokens(&data.vocab, &all_rows(aug_set.len()), max_len)?)
    };
    let aug_examples = aug_set.examples;
    let mut by_origin: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, e) in aug_examples.iter().enumerate() {
        by_origin.entry(e.origin_id).or_default().push(i);
    }

    let classes = data.train.num_classes();
    let enc = cfg.encoder_config(data.vocab.len(), classes);
    let rw = cfg.reweight_config(classes, enc.hidden_width());
    let mut trainer = Trainer::new(enc, rw, cfg.train_settings(method), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);

    let mut metrics = format!("{METRICS_HEADER}\n");
    let mut curve = vec![evaluate(&trainer.main, &data.vocab, &data.dev)?];
    let mut order: Vec<usize> = (0..task.len()).collect();
    for _ in 0..cfg.train.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.train.batch_size) {
            let raw = labeled(&task, &task_tokens, chunk)?;
            let aug_rows: Vec<usize> = chunk
                .iter()
                .flat_map(|&r| by_origin.get(&task.examples[r].id).into_iter().flatten().copied())
                .collect();
            let aug = if aug_rows.is_empty() {
                None
            } else {
                let tokens = aug_tokens.as_ref().expect("augmented rows imply tokens");
                Some(AugBatch::new(
                    tokens.select(&aug_rows)?,
                    aug_rows.iter().map(|&i| aug_examples[i].label).collect(),
                    aug_rows.iter().map(|&i| aug_examples[i].origin_id).collect(),
                )?)
            };
            let meta_batch = match (&meta, &meta_tokens) {
                (Some(m), Some(mt)) => {
                    let n = cfg.train.meta_batch_size.min(m.len());
                    let rows = rand::seq::index::sample(&mut rng, m.len(), n).into_vec();
                    Some(labeled(m, mt, &rows)?)
                }
                _ => None,
            };
            let record = trainer.step(&MetaBatch {
                task_raw: raw,
                task_aug: aug,
                meta_raw: meta_batch,
            })?;
            metrics.push_str(&record.csv_row());
            metrics.push('\n');
        }
        curve.push(evaluate(&trainer.main, &data.vocab, &data.dev)?);
    }

    let weights = if method.learns_weights() && !aug_examples.is_empty() {
        let tokens = aug_tokens.as_ref().expect("augmented rows imply tokens");
        let rows = all_rows(aug_examples.len());
        let mut w = Vec::with_capacity(rows.len());
        for chunk in rows.chunks(512) {
            let labels: Vec<usize> = chunk.iter().map(|&i| aug_examples[i].label).collect();
            w.extend(trainer.score(&tokens.select(chunk)?, &labels)?);
        }
        Some(WeightReport {
            weights: w,
            flipped: aug_examples.iter().map(|e| e.is_flipped()).collect(),
        })
    } else {
        None
    };

    if let Some(dir) = dir {
        write_atomic(&dir.join("metrics.csv"), metrics.as_bytes())?;
        save_checkpoint(&dir.join("model.ckpt"), &trainer.main.params)?;
        if let Some(w) = &weights {
            let mut s = String::from("aug_id,origin_id,label,flipped,weight\n");
            for (e, wi) in aug_examples.iter().zip(&w.weights) {
                s.push_str(&format!("{},{},{},{},{wi}\n", e.id, e.origin_id, e.label, u8::from(e.is_flipped())));
            }
            write_atomic(&dir.join("weights.csv"), s.as_bytes())?;
            write_atomic(&dir.join("histogram.csv"), histogram_csv(&w.histogram()).as_bytes())?;
        }
    }
    Ok(SeedRun { seed, curve, weights })
}

/// Runs every configured method over every seed (seeds in parallel).
///
/// Writes the effective config, vocabulary, the augmented set used,
/// long-format results, a summary,
/// and per-method curves and weight histograms under `out_dir`. If a seed
/// fails, the results gathered so far are still written before the error
/// is returned.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path, log: &(dyn Fn(&str) + Sync)) -> Result<Vec<RunResult>> {
    cfg.validate()?;
    let data = prepare_data(cfg, true)?;
    log(&format!(
        "data: {} train, {} dev, {} augmented, vocabulary {}",
        data.train.len(),
        data.dev.len(),
        data.augmented.len(),
        data.vocab.len()
    ));
    run_prepared(cfg, &data, out_dir, log)
}

/// [`run_experiment`] on already prepared data.
pub fn run_prepared(cfg: &ExperimentConfig, data: &PreparedData, out_dir: &Path, log: &(dyn Fn(&str) + Sync)) -> Result<Vec<RunResult>> {
    write_atomic(&out_dir.join("config.json"), cfg.to_json()?.as_bytes())?;
    data.vocab.save(&out_dir.join("vocab.txt"))?;
    data.augmented.save(&out_dir.join("augmented.tsv"))?;
    let mut results = Vec::new();
    for &method in &cfg.methods {
        let outcomes: Vec<Result<SeedRun>> = cfg
            .seeds
            .par_iter()
            .map(|&seed| {
                let dir: PathBuf = out_dir.join(method.name()).join(format!("seed{seed}"));
                let run = run_seed(cfg, data, method, seed, Some(&dir));
                if let Ok(r) = &run {
                    let e = r.final_eval();
                    log(&format!("{} seed {seed}: accuracy {:.4} mcc {:.4}", method.name(), e.accuracy, e.mcc));
                }
                run
            })
            .collect();
        let mut runs = Vec::new();
        let mut failure = None;
        for o in outcomes {
            match o {
                Ok(r) => runs.push(r),
                Err(e) if failure.is_none() => failure = Some(e),
                Err(_) => {}
            }
        }
        results.push(RunResult { method, runs });
        write_outputs(out_dir, &results)?;
        if let Some(e) = failure {
            return Err(e);
        }
    }
    Ok(results)
}

fn write_outputs(out_dir: &Path, results: &[RunResult]) -> Result<()> {
    write_atomic(&out_dir.join("results.csv"), results_csv(results).as_bytes())?;
    write_atomic(&out_dir.join("summary.csv"), summary_csv(results).as_bytes())?;
    for r in results {
        let dir = out_dir.join(r.method.name());
        let mut curves = String::from("epoch,seed,dev_accuracy,dev_mcc\n");
        for run in &r.runs {
            for (epoch, e) in run.curve.iter().enumerate() {
                curves.push_str(&format!("{epoch},{},{},{}\n", run.seed, e.accuracy, e.mcc));
            }
        }
        write_atomic(&dir.join("curves.csv"), curves.as_bytes())?;
        if let Some(h) = r.histogram() {
            write_atomic(&dir.join("histogram.csv"), histogram_csv(&h).as_bytes())?;
        }
    }
    Ok(())
}

/// One point of a hyperparameter grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepPoint {
    pub n_neg: usize,
    pub tau: u32,
    pub lambda: f64,
    pub rho: f64,
    pub filter_lower: Option<f64>,
    pub filter_upper: Option<f64>,
}

impl SweepPoint {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        cfg.contrastive.n_neg = self.n_neg;
        cfg.contrastive.tau = self.tau;
        cfg.contrastive.rho = self.rho;
        cfg.train.lambda = self.lambda;
        cfg.filter.lower = self.filter_lower;
        cfg.filter.upper = self.filter_upper;
    }
}

/// Cartesian product of the grid; empty axes fall back to the base config.
pub fn sweep_points(cfg: &ExperimentConfig) -> Vec<SweepPoint> {
    fn or<T: Copy>(v: &[T], d: T) -> Vec<T> {
        if v.is_empty() {
            vec![d]
        } else {
            v.to_vec()
        }
    }
    fn limits(v: &[f64], d: Option<f64>) -> Vec<Option<f64>> {
        if v.is_empty() {
            vec![d]
        } else {
            v.iter().map(|&x| Some(x)).collect()
        }
    }
    let g = &cfg.sweep;
    let mut out = Vec::new();
    for n_neg in or(&g.n_neg, cfg.contrastive.n_neg) {
        for tau in or(&g.tau, cfg.contrastive.tau) {
            for lambda in or(&g.lambda, cfg.train.lambda) {
                for rho in or(&g.rho, cfg.contrastive.rho) {
                    for filter_lower in limits(&g.filter_lower, cfg.filter.lower) {
                        for filter_upper in limits(&g.filter_upper, cfg.filter.upper) {
                            out.push(SweepPoint {
                                n_neg,
                                tau,
                                lambda,
                                rho,
                                filter_lower,
                                filter_upper,
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

/// Runs the configured methods at every grid point, each under `point_{i}`,
/// and writes `sweep.csv` with one row per point, method and metric.
pub fn run_sweep(cfg: &ExperimentConfig, out_dir: &Path, log: &(dyn Fn(&str) + Sync)) -> Result<Vec<(SweepPoint, Vec<RunResult>)>> {
    cfg.validate()?;
    let data = prepare_data(cfg, true)?;
    let mut all = Vec::new();
    let mut csv = String::from("point,n_neg,tau,lambda,rho,filter_lower,filter_upper,method,metric_name,mean,std,n\n");
    let limit = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (i, point) in sweep_points(cfg).into_iter().enumerate() {
        let mut c = cfg.clone();
        point.apply(&mut c);
        c.validate()?;
        log(&format!("point {i}: {point:?}"));
        let results = run_prepared(&c, &data, &out_dir.join(format!("point_{i}")), log)?;
        for r in &results {
            for (name, m, sd, n) in r.summary() {
                csv.push_str(&format!(
                    "{i},{},{},{},{},{},{},{},{name},{m},{sd},{n}\n",
                    point.n_neg,
                    point.tau,
                    point.lambda,
                    point.rho,
                    limit(point.filter_lower),
                    limit(point.filter_upper),
                    r.method.name()
                ));
            }
        }
        write_atomic(&out_dir.join("sweep.csv"), csv.as_bytes())?;
        all.push((point, results));
    }
    Ok(all)
}
