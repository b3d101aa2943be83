//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mrco::config::{ExperimentConfig, Method};
use mrco::contrastive::{contrastive_loss, momentum_update, new_queues, update_queues, QueuePolicy};
use mrco::harness::{collapse_trace, prepare_data, run_experiment, run_seed, CollapseSettings, PreparedData, RunResult};
use mrco::tensor::{ParamSet, Tape, Tensor};
use mrco::verify::{gradient_suite, meta_gradient_check, SuiteSettings};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradient_suite_passes() -> Outcome {
    let settings = SuiteSettings::default();
    let cases = gradient_suite(&settings).map_err(|e| e.to_string())?;
    let failed: Vec<&str> = cases.iter().filter(|c| !c.passed()).map(|c| c.name).collect();
    let worst = cases.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    check(
        failed.is_empty() && settings.trials == 100 && settings.tolerance == 1e-4 && settings.step == 1e-5,
        format!("{} cases x {} trials, worst rel err {worst:.2e}, failing {failed:?}", cases.len(), settings.trials),
    )
}

fn meta_gradient_matches_finite_differences() -> Outcome {
    let start = Instant::now();
    let alpha = ExperimentConfig::default().train.alpha;
    let r = meta_gradient_check(0, alpha, 1e-5, 1e-3).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    check(
        r.passed() && r.main_params + r.reweight_params <= 200 && took < Duration::from_secs(30),
        format!(
            "{} + {} params, max rel err {:.2e}, {took:.1?}",
            r.main_params, r.reweight_params, r.max_rel_error
        ),
    )
}

fn joint_training_collapses(data: &PreparedData, cfg: &ExperimentConfig) -> Outcome {
    let start = Instant::now();
    let trace = collapse_trace(cfg, data, &CollapseSettings::default()).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    let joint_end = trace.last().map(|p| p.joint).unwrap_or(f64::NAN);
    let bilevel_min = trace.iter().map(|p| p.bilevel).fold(f64::INFINITY, f64::min);
    check(
        joint_end < 0.05 && bilevel_min >= 0.2 && took < Duration::from_secs(60),
        format!("joint mean W {joint_end:.4} after 2000 steps, bilevel min {bilevel_min:.4}, {took:.1?}"),
    )
}

/// Direct transcription of the queue update with explicit lifetime counters.
#[derive(Clone, Debug, Default)]
struct OracleQueue {
    // (repr, weight, lifetime, arrival)
    entries: Vec<(Vec<f64>, f64, u32, u64)>,
    arrivals: u64,
}

impl OracleQueue {
    fn enqueue(&mut self, repr: Vec<f64>, w: f64, tau: u32) {
        self.entries.push((repr, w, tau, self.arrivals));
        self.arrivals += 1;
    }

    fn update(&mut self, batch: &[(Vec<f64>, f64)], capacity: usize, tau: u32) {
        for e in &mut self.entries {
            e.2 -= 1;
        }
        self.entries.retain(|e| e.2 > 0);
        // ascending weight, batch order among equals
        let mut order: Vec<usize> = (0..batch.len()).collect();
        for i in 1..order.len() {
            let mut j = i;
            while j > 0 && batch[order[j]].1 < batch[order[j - 1]].1 {
                order.swap(j, j - 1);
                j -= 1;
            }
        }
        let n = (capacity - self.entries.len()).min(batch.len());
        for &i in &order[..n] {
            self.enqueue(batch[i].0.clone(), batch[i].1, tau);
        }
        for &i in &order[n..] {
            let w = batch[i].1;
            if self.entries.iter().any(|e| e.1 > w) {
                let mut victim = 0;
                for (j, e) in self.entries.iter().enumerate() {
                    let v = &self.entries[victim];
                    if e.1 > v.1 || (e.1 == v.1 && e.3 < v.3) {
                        victim = j;
                    }
                }
                self.entries.remove(victim);
                self.enqueue(batch[i].0.clone(), w, tau);
            }
        }
        self.entries.sort_by_key(|e| e.3);
    }
}

fn lasw_matches_oracle() -> Outcome {
    let classes = 2;
    let mut fifo_diverged = 0;
    for trial in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let capacity = rng.gen_range(1..=8);
        let tau = rng.gen_range(1..=5);
        let updates = rng.gen_range(10..=20);
        // coarse weights on some trials to exercise ties
        let levels = if trial % 3 == 0 { 4 } else { 1000 };
        let mut queues = new_queues(classes, capacity);
        let mut fifo = new_queues(classes, capacity);
        let mut oracle = vec![OracleQueue::default(); classes];
        let mut diverged = false;
        let mut next = 0.0;
        for _ in 0..updates {
            let b = rng.gen_range(0..=16);
            let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..classes)).collect();
            let weights: Vec<f64> = (0..b).map(|_| rng.gen_range(1..levels + 1) as f64 / (levels + 1) as f64).collect();
            let reprs: Vec<Vec<f64>> = (0..b)
                .map(|_| {
                    next += 1.0;
                    vec![next]
                })
                .collect();
            update_queues(QueuePolicy::Lasw, &mut queues, &reprs, &labels, &weights, tau).map_err(|e| e.to_string())?;
            update_queues(QueuePolicy::Fifo, &mut fifo, &reprs, &labels, &weights, tau).map_err(|e| e.to_string())?;
            for (k, o) in oracle.iter_mut().enumerate() {
                let batch: Vec<(Vec<f64>, f64)> =
                    (0..b).filter(|&i| labels[i] == k).map(|i| (reprs[i].clone(), weights[i])).collect();
                o.update(&batch, capacity, tau);
                let got: Vec<(Vec<f64>, f64, u32)> =
                    queues[k].entries().into_iter().map(|e| (e.repr, e.weight, e.lifetime)).collect();
                let want: Vec<(Vec<f64>, f64, u32)> = o.entries.iter().map(|e| (e.0.clone(), e.1, e.2)).collect();
                if got != want {
                    return Err(format!("trial {trial}: class {k} queue {got:?} != oracle {want:?}"));
                }
                if fifo[k].entries() != queues[k].entries() {
                    diverged = true;
                }
            }
        }
        fifo_diverged += usize::from(diverged);
    }
    check(
        fifo_diverged > 0,
        format!("1000 trials equal to the oracle, FIFO diverged on {fifo_diverged}"),
    )
}

fn contrastive_identities() -> Outcome {
    let loss = |q: &[f64], pos: Vec<Vec<f64>>, negs: &[Vec<f64>]| -> mrco::Result<f64> {
        let mut queues = new_queues(1, 8);
        if !negs.is_empty() {
            update_queues(QueuePolicy::Lasw, &mut queues, negs, &vec![0; negs.len()], &vec![0.5; negs.len()], 5)?;
        }
        let mut tape = Tape::new();
        let qv = tape.param(Tensor::row(q.to_vec()))?;
        let l = contrastive_loss(&mut tape, qv, &[0], &[pos], &queues, 1.0, false)?;
        Ok(tape.value(l).item())
    };
    let single = loss(&[0.4, -1.2], vec![vec![0.3, 0.9]], &[]).map_err(|e| e.to_string())?;
    let v = vec![0.3, -0.7];
    let pair = loss(&[1.0, 0.5], vec![v.clone()], &[v]).map_err(|e| e.to_string())?;
    let pair_err = (pair - std::f64::consts::LN_2).abs();

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let set = |rng: &mut ChaCha8Rng| {
        let mut s = ParamSet::new();
        s.push("w", Tensor::matrix(3, 4, (0..12).map(|_| rng.gen_range(-2.0..2.0)).collect()));
        s
    };
    let (query, key) = (set(&mut rng), set(&mut rng));
    let mut momentum_err: f64 = 0.0;
    let mut endpoints_exact = true;
    for gamma in [0.0, 0.5, 0.9, 1.0] {
        let mut next = key.clone();
        momentum_update(&mut next, &query, gamma).map_err(|e| e.to_string())?;
        for ((n, k), q) in next.flatten().iter().zip(key.flatten()).zip(query.flatten()) {
            momentum_err = momentum_err.max(((n - k) - (1.0 - gamma) * (q - k)).abs());
        }
        if gamma == 0.0 {
            endpoints_exact &= next.flatten() == query.flatten();
        }
        if gamma == 1.0 {
            endpoints_exact &= next.flatten() == key.flatten();
        }
    }
    check(
        single == 0.0 && pair_err <= 1e-12 && endpoints_exact && momentum_err <= 16.0 * f64::EPSILON,
        format!("single {single}, |pair - ln 2| {pair_err:.1e}, momentum max dev {momentum_err:.1e}"),
    )
}

fn separation_and_direction(cfg: &ExperimentConfig, data: &PreparedData) -> Result<(Outcome, Outcome), String> {
    let run = |method: Method| -> Result<(RunResult, Duration), String> {
        let start = Instant::now();
        let runs = cfg
            .seeds
            .iter()
            .map(|&s| run_seed(cfg, data, method, s, None))
            .collect::<mrco::Result<Vec<_>>>()
            .map_err(|e| e.to_string())?;
        Ok((RunResult { method, runs }, start.elapsed()))
    };
    let (mrco, took) = run(Method::Mrco)?;
    let mut below = 0;
    let mut gaps = Vec::new();
    for r in &mrco.runs {
        let w = r.weights.as_ref().ok_or("mrco run without weights")?;
        let (clean, flipped) = (w.clean_mean().unwrap_or(f64::NAN), w.flipped_mean().unwrap_or(f64::NAN));
        below += usize::from(flipped < clean);
        gaps.push(clean - flipped);
    }
    let gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
    let flips = data.augmented.examples.iter().filter(|e| e.is_flipped()).count();
    let separation = check(
        data.train.len() == 500 && data.augmented.len() == 3000 && cfg.seeds.len() == 5 && below >= 4 && gap >= 0.05
            && took < Duration::from_secs(600),
        format!(
            "{} raw, {} augmented ({flips} flipped), flipped below clean in {below}/5 seeds, mean gap {gap:.4}, {took:.1?}",
            data.train.len(),
            data.augmented.len()
        ),
    );

    let (aug, _) = run(Method::Aug)?;
    let (plain_mrco, _) = run(Method::MrcoNoContrastive)?;
    let (m, a, n) = (mrco.accuracy().0, aug.accuracy().0, plain_mrco.accuracy().0);
    let direction = check(
        m >= a && m >= n,
        format!("mean dev accuracy mrco {m:.4}, aug {a:.4}, mrco w/o contrastive {n:.4}"),
    );
    Ok((separation, direction))
}

fn runs_are_deterministic() -> Outcome {
    let mut cfg = ExperimentConfig::default();
    cfg.methods = vec![Method::Mrco, Method::AugFilter];
    cfg.seeds = vec![3];
    cfg.train.epochs = 2;
    let quiet = |_: &str| {};
    let dirs = [tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?];
    for d in &dirs {
        run_experiment(&cfg, d.path(), &quiet).map_err(|e| e.to_string())?;
    }
    let mut compared = 0;
    for name in ["results.csv", "summary.csv", "mrco/seed3/metrics.csv", "mrco/seed3/weights.csv", "aug_filter/seed3/metrics.csv"] {
        let read = |d: &tempfile::TempDir| std::fs::read(d.path().join(name)).map_err(|e| format!("{name}: {e}"));
        if read(&dirs[0])? != read(&dirs[1])? {
            return Err(format!("{name} differs between runs"));
        }
        compared += 1;
    }
    check(true, format!("{compared} CSV files byte-identical across two runs"))
}

fn verification_suite_is_fast() -> Outcome {
    let start = Instant::now();
    let status = std::process::Command::new(env!("CARGO_BIN_EXE_mrco"))
        .args(["gradcheck", "--quiet"])
        .stdout(std::process::Stdio::null())
        .status()
        .map_err(|e| e.to_string())?;
    let took = start.elapsed();
    check(
        status.success() && took < Duration::from_secs(300),
        format!("`mrco gradcheck` exited {:?} in {took:.1?}", status.code()),
    )
}

fn main() {
    let cfg = ExperimentConfig::default();
    let data = match prepare_data(&cfg, false) {
        Ok(d) => d,
        Err(e) => {
            println!("FAIL setup: {e}");
            std::process::exit(1);
        }
    };
    let (separation, direction) = match separation_and_direction(&cfg, &data) {
        Ok(pair) => pair,
        Err(e) => (Err(e.clone()), Err(e)),
    };
    let results = [
        ("gradient suite", gradient_suite_passes()),
        ("meta-gradient oracle", meta_gradient_matches_finite_differences()),
        ("collapse reproduction", joint_training_collapses(&data, &cfg)),
        ("LASW oracle equivalence", lasw_matches_oracle()),
        ("contrastive identities", contrastive_identities()),
        ("weight separation", separation),
        ("directional end-to-end", direction),
        ("determinism", runs_are_deterministic()),
        ("verification suite runtime", verification_suite_is_fast()),
    ];
    let mut failed = 0;
    for (name, r) in &results {
        match r {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("{} of {} acceptance criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
