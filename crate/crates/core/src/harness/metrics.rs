use crate::encoder::{EncoderParams, Vocabulary};
use crate::error::{Error, Result};

use super::Dataset;

pub fn accuracy(predicted: &[usize], gold: &[usize]) -> Result<f64> {
    check(predicted, gold)?;
    let hits = predicted.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / gold.len() as f64)
}

fn check(predicted: &[usize], gold: &[usize]) -> Result<()> {
    if gold.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    if predicted.len() != gold.len() {
        return Err(Error::Shape {
            op: "metric",
            lhs: vec![predicted.len()],
            rhs: vec![gold.len()],
        });
    }
    Ok(())
}

/// Matthews correlation over `num_classes` classes (Gorodkin's multiclass
/// form, equal to the binary formula for two classes). A zero denominator
/// gives 0.
pub fn mcc(predicted: &[usize], gold: &[usize], num_classes: usize) -> Result<f64> {
    check(predicted, gold)?;
    if let Some(&bad) = predicted.iter().chain(gold).find(|&&y| y >= num_classes) {
        return Err(Error::Label {
            label: bad,
            classes: num_classes,
        });
    }
    let mut t = vec![0f64; num_classes];
    let mut p = vec![0f64; num_classes];
    let mut correct = 0f64;
    for (&pi, &gi) in predicted.iter().zip(gold) {
        t[gi] += 1.0;
        p[pi] += 1.0;
        if pi == gi {
            correct += 1.0;
        }
    }
    let s = gold.len() as f64;
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let num = correct * s - dot(&p, &t);
    let den = ((s * s - dot(&p, &p)) * (s * s - dot(&t, &t))).sqrt();
    Ok(if den == 0.0 { 0.0 } else { num / den })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub mcc: f64,
}

/// Evaluation-mode predictions over the whole dataset.
pub fn predict(model: &EncoderParams, vocab: &Vocabulary, data: &Dataset) -> Result<Vec<usize>> {
    let rows: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(rows.len());
    for chunk in rows.chunks(256) {
        let batch = data.tokens(vocab, chunk, model.config.max_len)?;
        out.extend(model.predict(&batch)?);
    }
    Ok(out)
}

pub fn evaluate(model: &EncoderParams, vocab: &Vocabulary, data: &Dataset) -> Result<Evaluation> {
    let pred = predict(model, vocab, data)?;
    let gold = data.labels();
    Ok(Evaluation {
        accuracy: accuracy(&pred, &gold)?,
        mcc: mcc(&pred, &gold, data.num_classes())?,
    })
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Counts over `bins` equal-width bins of `[0, 1]`; the last bin is closed.
pub fn histogram(values: &[f64], bins: usize) -> Vec<u64> {
    let mut counts = vec![0u64; bins];
    for &v in values {
        let b = ((v * bins as f64).floor().max(0.0) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
}

/// `bin_low,bin_high,count` rows.
pub fn histogram_csv(counts: &[u64]) -> String {
    let n = counts.len() as f64;
    let mut s = String::from("bin_low,bin_high,count\n");
    for (i, c) in counts.iter().enumerate() {
        s.push_str(&format!("{},{},{c}\n", i as f64 / n, (i + 1) as f64 / n));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_and_constant_predictors() {
        let gold = [0, 1, 1, 0, 1, 0];
        assert_eq!(accuracy(&gold, &gold).unwrap(), 1.0);
        assert!((mcc(&gold, &gold, 2).unwrap() - 1.0).abs() < 1e-12);
        let constant = [1; 6];
        assert_eq!(accuracy(&constant, &gold).unwrap(), 0.5);
        assert_eq!(mcc(&constant, &gold, 2).unwrap(), 0.0);
    }

    #[test]
    fn eight_example_confusion_by_hand() {
        // TP=3 TN=2 FP=1 FN=2
        let gold = [1, 1, 1, 1, 1, 0, 0, 0];
        let pred = [1, 1, 1, 0, 0, 0, 0, 1];
        let want = (3.0 * 2.0 - 1.0 * 2.0) / ((4.0f64) * 5.0 * 3.0 * 4.0).sqrt();
        assert!((mcc(&pred, &gold, 2).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn empty_set_is_an_error() {
        assert!(accuracy(&[], &[]).is_err());
    }

    #[test]
    fn histogram_bins() {
        let h = histogram(&[0.0, 0.05, 0.049, 0.5, 1.0, 0.999], 20);
        assert_eq!(h[0], 2);
        assert_eq!(h[1], 1);
        assert_eq!(h[10], 1);
        assert_eq!(h[19], 2);
        let csv = histogram_csv(&h);
        assert!(csv.starts_with("bin_low,bin_high,count\n0,0.05,2\n"));
    }

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    fn binary_mcc(pred: &[usize], gold: &[usize]) -> f64 {
        let mut c = [[0f64; 2]; 2];
        for (&p, &g) in pred.iter().zip(gold) {
            c[g][p] += 1.0;
        }
        let (tn, fp, fn_, tp) = (c[0][0], c[0][1], c[1][0], c[1][1]);
        let den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
        if den == 0.0 { 0.0 } else { (tp * tn - fp * fn_) / den }
    }

    proptest! {
        #[test]
        fn multiclass_form_matches_binary_formula(pairs in proptest::collection::vec((0usize..2, 0usize..2), 1..60)) {
            let pred: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let gold: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            prop_assert!((mcc(&pred, &gold, 2).unwrap() - binary_mcc(&pred, &gold)).abs() < 1e-12);
        }

        #[test]
        fn histogram_counts_sum(values in proptest::collection::vec(0.0f64..=1.0, 0..100)) {
            prop_assert_eq!(histogram(&values, 20).iter().sum::<u64>(), values.len() as u64);
        }
    }
}
