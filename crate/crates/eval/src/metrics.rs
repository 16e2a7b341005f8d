use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{chart_slice, FeatureNet};
use crate::fid::{frechet_distance, GaussianStats};

/// Fraction of pairs whose score order matches the label; `labels[p] = 1`
/// means the first item should score higher. Ties count as wrong.
pub fn ranking_accuracy(first: &[f64], second: &[f64], labels: &[u8]) -> Result<f64> {
    if first.len() != second.len() || first.len() != labels.len() {
        return Err(Error::Shape(format!("{} / {} scores for {} labels", first.len(), second.len(), labels.len())));
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let correct = first
        .iter()
        .zip(second)
        .zip(labels)
        .filter(|((a, b), &y)| if y == 1 { a > b } else { a < b })
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Ranks starting at 1, ties sharing their mean rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation; 0 when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// `steps` evenly spaced values from -1 to 1.
pub fn sweep(steps: usize) -> Vec<f64> {
    match steps {
        0 => vec![],
        1 => vec![0.0],
        _ => (0..steps).map(|i| -1.0 + 2.0 * i as f64 / (steps - 1) as f64).collect(),
    }
}

/// Mean over `z_count` latent draws of the Spearman correlation between the
/// swept attribute value and the probe measured on `probe(z_index, r)`.
pub fn monotonicity_score(z_count: usize, r_values: &[f64], mut probe: impl FnMut(usize, f64) -> Result<f64>) -> Result<f64> {
    if z_count == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for z in 0..z_count {
        let ys = r_values.iter().map(|&r| probe(z, r)).collect::<Result<Vec<_>>>()?;
        total += spearman(r_values, &ys);
    }
    Ok(total / z_count as f64)
}

/// Per-chart Frechet distance between chart features of two sample sets of
/// `[b, 3F, n, n]` tensors, and the mean over charts.
pub fn mean_fid(net: &FeatureNet, real: &[f64], generated: &[f64], charts: usize, n: usize) -> Result<(f64, Vec<f64>)> {
    let m = net.config.feature_dim;
    let mut per_chart = Vec::with_capacity(charts);
    for k in 0..charts {
        let a = GaussianStats::fit(&net.features(&chart_slice(real, charts, n, k), n)?, m)?;
        let b = GaussianStats::fit(&net.features(&chart_slice(generated, charts, n, k), n)?, m)?;
        per_chart.push(frechet_distance(&a, &b)?);
    }
    let mean = per_chart.iter().sum::<f64>() / charts.max(1) as f64;
    Ok((mean, per_chart))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EvalReport {
    pub mean_fid: f64,
    pub per_chart_fid: Vec<f64>,
    pub ranking_accuracy: BTreeMap<String, f64>,
    pub monotonicity: BTreeMap<String, f64>,
    pub baseline_fid_split_half: f64,
}
