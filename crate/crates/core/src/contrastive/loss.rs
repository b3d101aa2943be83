use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

use super::ClassQueue;

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt() + 1e-12;
    v.iter().map(|x| x / n).collect()
}

fn stack(rows: &[&[f64]], normalize: bool) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| if normalize { unit(r) } else { r.to_vec() })
        .collect();
    Tensor::from_rows(&rows)
}

/// Weight-dependent contrastive loss for a batch of raw queries.
///
/// Query `i` of class `k` is scored against each of its positives with the
/// class-`k` queue as negatives: `-mean_p log softmax_{Q_k ∪ {p}}(q·p / t)`.
/// The result averages over queries that have at least one positive and a
/// non-empty queue; with none it is a constant zero. Positives and queue
/// entries are constants, so only `queries` receives gradient.
pub fn contrastive_loss(
    tape: &mut Tape,
    queries: Var,
    query_labels: &[usize],
    positives: &[Vec<Vec<f64>>],
    queues: &[ClassQueue],
    temperature: f64,
    normalize: bool,
) -> Result<Var> {
    let (b, d) = tape.dims(queries);
    if query_labels.len() != b || positives.len() != b {
        return Err(Error::Shape {
            op: "contrastive_loss",
            lhs: vec![b, d],
            rhs: vec![query_labels.len(), positives.len()],
        });
    }
    if temperature <= 0.0 {
        return Err(Error::config("temperature must be positive"));
    }
    let q_all = if normalize { tape.l2_normalize_rows(queries)? } else { queries };
    // transposed negatives per class, built lazily
    let mut negatives: Vec<Option<Var>> = vec![None; queues.len()];
    let mut terms = Vec::new();
    for i in 0..b {
        let k = query_labels[i];
        let queue = queues.get(k).ok_or(Error::Label {
            label: k,
            classes: queues.len(),
        })?;
        if positives[i].is_empty() || queue.is_empty() {
            continue;
        }
        let neg_t = match negatives[k] {
            Some(v) => v,
            None => {
                let rows: Vec<&[f64]> = queue.reprs().collect();
                let n = tape.constant(stack(&rows, normalize)?)?;
                let v = tape.transpose(n)?;
                negatives[k] = Some(v);
                v
            }
        };
        let n_neg = tape.dims(neg_t).1;
        let p = positives[i].len();
        let pos_rows: Vec<&[f64]> = positives[i].iter().map(Vec::as_slice).collect();
        let pos = tape.constant(stack(&pos_rows, normalize)?)?;

        let q = tape.slice_rows(q_all, i, 1)?;
        let neg_logits = tape.matmul(q, neg_t)?;
        let neg_logits = tape.broadcast_rows(neg_logits, p)?;
        let q_t = tape.transpose(q)?;
        let pos_logits = tape.matmul(pos, q_t)?;
        let logits = tape.concat_cols(&[pos_logits, neg_logits])?;
        let logits = tape.scale(logits, 1.0 / temperature)?;
        // the positive sits in column 0 of each row
        let log_p = tape.log_softmax_rows(logits)?;
        let idx: Vec<usize> = (0..p).map(|r| r * (n_neg + 1)).collect();
        let picked = tape.gather(log_p, idx.into(), p, 1)?;
        let term = tape.mean(picked)?;
        terms.push(tape.neg(term)?);
    }
    if terms.is_empty() {
        return tape.scalar(0.0);
    }
    let count = terms.len();
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = tape.add(total, t)?;
    }
    tape.scale(total, 1.0 / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contrastive::{lasw_update, new_queues};
    use crate::tensor::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn queues_with(class: usize, reprs: &[Vec<f64>]) -> Vec<ClassQueue> {
        let mut qs = new_queues(2, 16);
        let labels = vec![class; reprs.len()];
        let weights = vec![0.5; reprs.len()];
        lasw_update(&mut qs, reprs, &labels, &weights, 5).unwrap();
        qs
    }

    fn eval(q: &[f64], label: usize, pos: Vec<Vec<f64>>, qs: &[ClassQueue], t: f64, norm: bool) -> f64 {
        let mut tape = Tape::new();
        let qv = tape.param(Tensor::row(q.to_vec())).unwrap();
        let l = contrastive_loss(&mut tape, qv, &[label], &[pos], qs, t, norm).unwrap();
        tape.value(l).item()
    }

    // direct scalar transcription
    fn oracle(q: &[f64], pos: &[Vec<f64>], neg: &[Vec<f64>], t: f64) -> f64 {
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let mut acc = 0.0;
        for p in pos {
            let num = (dot(q, p) / t).exp();
            let den = num + neg.iter().map(|n| (dot(q, n) / t).exp()).sum::<f64>();
            acc += -(num / den).ln();
        }
        acc / pos.len() as f64
    }

    #[test]
    fn singleton_softmax_gives_zero() {
        let qs = new_queues(2, 4);
        assert_eq!(eval(&[1.0, 2.0], 0, vec![vec![0.5, 0.1]], &qs, 1.0, false), 0.0);
    }

    #[test]
    fn symmetric_pair_gives_ln_two() {
        let v = vec![0.3, -0.7, 0.2];
        let qs = queues_with(1, &[v.clone()]);
        let l = eval(&[1.0, 0.5, -0.2], 1, vec![v], &qs, 1.0, false);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn matches_scalar_transcription() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut r = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() };
        let q = r(5);
        let pos = vec![r(5), r(5)];
        let neg = vec![r(5), r(5), r(5)];
        let qs = queues_with(0, &neg);
        for t in [1.0, 0.3] {
            let got = eval(&q, 0, pos.clone(), &qs, t, false);
            assert!((got - oracle(&q, &pos, &neg, t)).abs() < 1e-12);
        }
        let un = |v: &Vec<f64>| unit(v);
        let got = eval(&q, 0, pos.clone(), &qs, 1.0, true);
        let want = oracle(&unit(&q), &pos.iter().map(un).collect::<Vec<_>>(), &neg.iter().map(un).collect::<Vec<_>>(), 1.0);
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn negatives_come_from_the_query_class_only() {
        let qs = queues_with(0, &[vec![1.0, 0.0]]);
        // class-1 query sees an empty queue and is excluded
        assert_eq!(eval(&[1.0, 0.0], 1, vec![vec![0.0, 1.0]], &qs, 1.0, false), 0.0);
    }

    #[test]
    fn queries_without_positives_are_excluded_from_the_mean() {
        let neg = vec![vec![0.2, 0.1]];
        let qs = queues_with(0, &neg);
        let pos = vec![vec![0.4, -0.3]];
        let mut tape = Tape::new();
        let q = tape.param(Tensor::from_rows(&[vec![0.5, 0.5], vec![9.0, 9.0]]).unwrap()).unwrap();
        let l = contrastive_loss(&mut tape, q, &[0, 0], &[pos.clone(), vec![]], &qs, 1.0, false).unwrap();
        assert!((tape.value(l).item() - oracle(&[0.5, 0.5], &pos, &neg, 1.0)).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut r = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() };
        let neg = vec![r(4), r(4), r(4)];
        let qs = queues_with(1, &neg);
        let pos = vec![vec![r(4), r(4)], vec![], vec![r(4)]];
        let point = Tensor::matrix(3, 4, r(12));
        for norm in [false, true] {
            let report = grad_check(
                |t, x| contrastive_loss(t, x, &[1, 1, 1], &pos, &qs, 0.5, norm),
                &point,
                1e-5,
                1e-4,
            )
            .unwrap();
            assert!(report.passed(), "{}", report.max_rel_error);
        }
    }
}
