use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Threshold-free separation of in-distribution (positive) from
/// out-of-distribution scores. Higher scores mean more in-distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OodReport {
    pub auroc: f64,
    pub auprc: f64,
    pub fpr80: f64,
}

/// Midranks (1-based) of `values`, ties sharing their average rank.
fn midranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j + 2) as f64 / 2.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn ood_metrics(scores_in: &[f64], scores_out: &[f64]) -> Result<OodReport> {
    if scores_in.is_empty() || scores_out.is_empty() {
        return Err(Error::config("scores", "both score lists must be non-empty"));
    }
    if scores_in.iter().chain(scores_out).any(|s| !s.is_finite()) {
        return Err(Error::NonFinite { what: "OOD score".into() });
    }
    let (p, n) = (scores_in.len(), scores_out.len());
    let all: Vec<f64> = scores_in.iter().chain(scores_out).copied().collect();
    let ranks = midranks(&all);
    let rank_sum: f64 = ranks[..p].iter().sum();
    let u = rank_sum - (p * (p + 1)) as f64 / 2.0;
    let auroc = u / (p * n) as f64;

    // sweep distinct thresholds from high to low; predict positive when
    // score ≥ threshold
    let mut labelled: Vec<(f64, bool)> = scores_in
        .iter()
        .map(|&s| (s, true))
        .chain(scores_out.iter().map(|&s| (s, false)))
        .collect();
    labelled.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auprc = 0.0;
    let mut prev_recall = 0.0;
    let mut fpr80 = None;
    let mut i = 0;
    while i < labelled.len() {
        let t = labelled[i].0;
        while i < labelled.len() && labelled[i].0 == t {
            if labelled[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / p as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        auprc += (recall - prev_recall) * precision;
        prev_recall = recall;
        if fpr80.is_none() && recall >= 0.8 {
            fpr80 = Some(fp as f64 / n as f64);
        }
    }
    Ok(OodReport {
        auroc,
        auprc,
        fpr80: fpr80.expect("recall reaches 1 at the lowest threshold"),
    })
}
