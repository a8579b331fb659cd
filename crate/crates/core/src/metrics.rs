//! Accuracy and ROC-AUC (Mann-Whitney, ties count one half).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Fraction of positions where `pred == truth`.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::Input("accuracy of an empty prediction set".into()));
    }
    if pred.len() != truth.len() {
        return Err(Error::shape(format!(
            "accuracy: {} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Probability that a random positive outscores a random negative, computed
/// from average ranks in `O(N log N)`.
pub fn roc_auc_binary(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::shape(format!(
            "roc_auc: {} scores for {} labels",
            scores.len(),
            positive.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::Numeric(format!("roc_auc: score {i} is NaN")));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "roc_auc needs both classes ({n_pos} positive, {n_neg} negative)"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // 1-based ranks; a run of ties shares the mean of its ranks.
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        let pos_in_run = order[i..=j].iter().filter(|&&k| positive[k]).count();
        pos_rank_sum += rank * pos_in_run as f64;
        i = j + 1;
    }
    let (np, nn) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// One-vs-rest AUC of every column of `probs` `[N × C]`, and their unweighted mean.
pub fn auc_macro_ovr(probs: &Tensor, labels: &[usize]) -> Result<(Vec<f64>, f64)> {
    let (n, c) = match probs.shape() {
        [n, c] => (*n, *c),
        s => return Err(Error::shape(format!("auc_macro_ovr: expected [N, C], got {s:?}"))),
    };
    if labels.len() != n {
        return Err(Error::shape(format!("auc_macro_ovr: {n} rows for {} labels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Input(format!("label {bad} outside [0, {c})")));
    }
    if let Some(missing) = (0..c).find(|k| !labels.contains(k)) {
        return Err(Error::UndefinedMetric(format!(
            "class {missing} is absent, its one-vs-rest AUC is undefined"
        )));
    }
    let mut per_class = Vec::with_capacity(c);
    for k in 0..c {
        let column: Vec<f64> = probs.data().iter().skip(k).step_by(c).copied().collect();
        let positive: Vec<bool> = labels.iter().map(|&l| l == k).collect();
        per_class.push(roc_auc_binary(&column, &positive)?);
    }
    let mean = per_class.iter().sum::<f64>() / c as f64;
    Ok((per_class, mean))
}

/// Evaluation summary written by `eval` as JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub auc_per_class: Vec<f64>,
    pub auc_mean: f64,
    pub class_counts: Vec<usize>,
    pub split: String,
}

impl EvalReport {
    /// Scores `probs` `[N × C]` and their argmax `pred` against `labels`.
    pub fn compute(probs: &Tensor, pred: &[usize], labels: &[usize], split: &str) -> Result<Self> {
        let accuracy = accuracy(pred, labels)?;
        let (auc_per_class, auc_mean) = auc_macro_ovr(probs, labels)?;
        let mut class_counts = vec![0; auc_per_class.len()];
        labels.iter().for_each(|&l| class_counts[l] += 1);
        Ok(EvalReport {
            accuracy,
            auc_per_class,
            auc_mean,
            class_counts,
            split: split.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain numeric fields serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[1, 0, 1, 1], &[1, 0, 1, 0]).unwrap(), 0.75);
        assert_eq!(accuracy(&[0, 0], &[1, 1]).unwrap(), 0.0);
        assert!(matches!(accuracy(&[], &[]), Err(Error::Input(_))));
    }

    #[test]
    fn auc_small_cases() {
        let labels = [false, false, true, true];
        assert_eq!(roc_auc_binary(&[0.1, 0.4, 0.35, 0.8], &labels).unwrap(), 0.75);
        assert_eq!(roc_auc_binary(&[0.5; 4], &labels).unwrap(), 0.5);
        assert_eq!(roc_auc_binary(&[0.0, 0.1, 0.2, 0.3], &labels).unwrap(), 1.0);
        assert!(matches!(
            roc_auc_binary(&[0.1, 0.2], &[true, true]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn absent_class_is_named() {
        let probs = Tensor::new(&[2, 3], vec![0.2, 0.3, 0.5, 0.6, 0.2, 0.2]).unwrap();
        match auc_macro_ovr(&probs, &[0, 2]) {
            Err(Error::UndefinedMetric(m)) => assert!(m.contains("class 1")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn one_hot_is_perfect() {
        let probs = Tensor::new(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let (per, mean) = auc_macro_ovr(&probs, &[0, 1, 2]).unwrap();
        assert_eq!(per, vec![1.0; 3]);
        assert_eq!(mean, 1.0);
    }

    #[test]
    fn report_json_has_keys() {
        let probs = Tensor::new(&[2, 2], vec![0.9, 0.1, 0.2, 0.8]).unwrap();
        let r = EvalReport::compute(&probs, &[0, 1], &[0, 1], "test").unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        for key in ["accuracy", "auc_per_class", "auc_mean", "class_counts", "split"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }
}
