use serde::{Deserialize, Serialize};

use crate::error::{BatError, Result};

/// Probability clamp used by the loss functions.
pub const PROB_CLAMP: f64 = 1e-12;

/// Mean binary cross-entropy of predicted positive-class probabilities.
pub fn cross_entropy(probs: &[f64], labels: &[bool]) -> Result<f64> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(BatError::Metric(format!("{} probabilities for {} labels", probs.len(), labels.len())));
    }
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / probs.len() as f64)
}

fn check(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(BatError::Metric(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(BatError::Metric(format!("score {s} is not a number")));
    }
    let pos = labels.iter().filter(|&&y| y).count();
    Ok((pos, labels.len() - pos))
}

/// Area under the ROC curve: the probability that a random positive scores
/// above a random negative, ties counting one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(BatError::Metric(format!("AUROC needs both classes ({pos} positive, {neg} negative)")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid_rank * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Average precision: the mean, over positives, of the precision among all
/// samples scoring at least as high as that positive.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, _) = check(scores, labels)?;
    if pos == 0 {
        return Err(BatError::Metric("AUPRC needs at least one positive".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen, mut ap) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let group_pos = order[i..=j].iter().filter(|&&k| labels[k]).count();
        tp += group_pos;
        seen += j - i + 1;
        ap += group_pos as f64 * tp as f64 / seen as f64;
        i = j + 1;
    }
    Ok(ap / pos as f64)
}

fn one_vs_rest(probs: &[Vec<f64>], labels: &[usize], n_classes: usize, f: fn(&[f64], &[bool]) -> Result<f64>) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(BatError::Metric(format!("{} score rows for {} labels", probs.len(), labels.len())));
    }
    let mut values = Vec::new();
    for c in 0..n_classes {
        let y: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        if !y.iter().any(|&b| b) || y.iter().all(|&b| b) {
            continue;
        }
        let s: Vec<f64> = probs
            .iter()
            .map(|r| r.get(c).copied().ok_or_else(|| BatError::Metric(format!("score row lacks class {c}"))))
            .collect::<Result<_>>()?;
        values.push(f(&s, &y)?);
    }
    if values.is_empty() {
        return Err(BatError::Metric("no class has both positives and negatives".into()));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Unweighted mean of per-class one-vs-rest AUROC over classes that have
/// both positives and negatives.
pub fn macro_auroc(probs: &[Vec<f64>], labels: &[usize], n_classes: usize) -> Result<f64> {
    one_vs_rest(probs, labels, n_classes, auroc)
}

pub fn macro_auprc(probs: &[Vec<f64>], labels: &[usize], n_classes: usize) -> Result<f64> {
    one_vs_rest(probs, labels, n_classes, auprc)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub auprc: f64,
    pub auroc: f64,
}

/// Binary metrics on the class-1 probability for two classes, macro
/// one-vs-rest metrics otherwise.
pub fn evaluate_probs(probs: &[Vec<f64>], labels: &[usize], n_classes: usize) -> Result<Metrics> {
    if n_classes == 2 {
        let s: Vec<f64> = probs.iter().map(|r| r[1]).collect();
        let y: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
        Ok(Metrics { auprc: auprc(&s, &y)?, auroc: auroc(&s, &y)? })
    } else {
        Ok(Metrics { auprc: macro_auprc(probs, labels, n_classes)?, auroc: macro_auroc(probs, labels, n_classes)? })
    }
}

/// Mean and population standard deviation over replications.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub n: usize,
    pub mean: Metrics,
    pub std: Metrics,
}

pub fn summarize(runs: &[Metrics]) -> Result<MetricsSummary> {
    if runs.is_empty() {
        return Err(BatError::Metric("no runs to summarize".into()));
    }
    let n = runs.len() as f64;
    let stat = |f: fn(&Metrics) -> f64| {
        let mean = runs.iter().map(f).sum::<f64>() / n;
        let var = runs.iter().map(|m| (f(m) - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    };
    let (pm, ps) = stat(|m| m.auprc);
    let (rm, rs) = stat(|m| m.auroc);
    Ok(MetricsSummary { n: runs.len(), mean: Metrics { auprc: pm, auroc: rm }, std: Metrics { auprc: ps, auroc: rs } })
}
