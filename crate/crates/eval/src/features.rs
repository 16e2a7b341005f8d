//! Chart feature extractor: a small cyclic fully convolutional segmentation
//! network trained on procedural part labels. Features are the penultimate
//! activations averaged over the grid, so their length does not depend on `n`.

use chartforge_core::synth::{part_labels, PART_COUNT};
use chartforge_core::torus::ChartAtlas;
use chartforge_core::TriangleMesh;
use chartforge_nn::params::{Adam, ParamSet};
use chartforge_nn::{Tape, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct FeatureConfig {
    pub widths: [usize; 2],
    pub feature_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { widths: [16, 32], feature_dim: 256, epochs: 8, batch_size: 16, learning_rate: 2e-3, seed: 0 }
    }
}

/// Part label of every grid node of every chart, from the template labels.
/// Labels are pushed as one-hot indicators and resolved by the largest weight.
pub fn chart_part_labels(atlas: &ChartAtlas, template: &TriangleMesh) -> Vec<Vec<usize>> {
    let labels = part_labels(template);
    let mut onehot = vec![0.0; labels.len() * PART_COUNT];
    for (v, &l) in labels.iter().enumerate() {
        onehot[v * PART_COUNT + l as usize] = 1.0;
    }
    atlas
        .charts
        .iter()
        .map(|c| {
            let chart = c.plan.push(&onehot, PART_COUNT);
            let nn = chart.n * chart.n;
            (0..nn)
                .map(|p| (0..PART_COUNT).max_by(|&a, &b| chart.data[a * nn + p].total_cmp(&chart.data[b * nn + p])).unwrap())
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureNet {
    pub config: FeatureConfig,
    pub params: ParamSet,
}

impl FeatureNet {
    pub fn new(config: &FeatureConfig) -> Self {
        let [c1, c2] = config.widths;
        let m = config.feature_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let gain = (2.0 / (1.0 + SLOPE * SLOPE)).sqrt();
        let mut p = ParamSet::default();
        p.push_normal("conv1.w", &[c1, 3, 3, 3], 27, gain, &mut rng);
        p.push_zeros("conv1.b", &[c1]);
        p.push_normal("conv2.w", &[c2, c1, 3, 3], 9 * c1, gain, &mut rng);
        p.push_zeros("conv2.b", &[c2]);
        p.push_normal("feat.w", &[m, c2, 1, 1], c2, gain, &mut rng);
        p.push_zeros("feat.b", &[m]);
        p.push_normal("seg.w", &[PART_COUNT, m, 1, 1], m, 1.0, &mut rng);
        p.push_zeros("seg.b", &[PART_COUNT]);
        Self { config: config.clone(), params: p }
    }

    /// Penultimate activations `[b, m, n, n]` and logits `[b, classes, n, n]`.
    fn forward(&self, tape: &mut Tape, p: &[Var], x: Var) -> (Var, Var) {
        let mut h = x;
        for layer in 0..3 {
            h = tape.conv(h, p[2 * layer], 1);
            h = tape.add_channel_bias(h, p[2 * layer + 1]);
            h = tape.leaky_relu(h, SLOPE);
        }
        let logits = tape.conv(h, p[6], 1);
        let logits = tape.add_channel_bias(logits, p[7]);
        (h, logits)
    }

    fn check(&self, charts: &[f64], n: usize) -> Result<usize> {
        let len = 3 * n * n;
        if n == 0 || charts.len() % len != 0 {
            return Err(Error::Shape(format!("{} values are not charts of 3x{n}x{n}", charts.len())));
        }
        Ok(charts.len() / len)
    }

    /// Pooled features `[b, m]` of `[b, 3, n, n]` charts.
    pub fn features(&self, charts: &[f64], n: usize) -> Result<Vec<f64>> {
        let count = self.check(charts, n)?;
        let m = self.config.feature_dim;
        let mut out = Vec::with_capacity(count * m);
        for chunk in charts.chunks(64 * 3 * n * n) {
            let b = chunk.len() / (3 * n * n);
            let mut tape = Tape::new();
            let p = self.params.bind(&mut tape, false);
            let x = tape.constant(chunk.to_vec(), &[b, 3, n, n]);
            let (h, _) = self.forward(&mut tape, &p, x);
            out.extend(tape.value(h).chunks(n * n).map(|plane| plane.iter().sum::<f64>() / (n * n) as f64));
        }
        Ok(out)
    }

    /// Most likely part per node, `[b, n, n]`.
    pub fn segment(&self, charts: &[f64], n: usize) -> Result<Vec<usize>> {
        let count = self.check(charts, n)?;
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let x = tape.constant(charts.to_vec(), &[count, 3, n, n]);
        let (_, logits) = self.forward(&mut tape, &p, x);
        let v = tape.value(logits);
        let nn = n * n;
        let mut out = Vec::with_capacity(count * nn);
        for s in 0..count {
            for q in 0..nn {
                let at = |c: usize| v[(s * PART_COUNT + c) * nn + q];
                out.push((0..PART_COUNT).max_by(|&a, &b| at(a).total_cmp(&at(b))).unwrap());
            }
        }
        Ok(out)
    }

    /// Fraction of nodes whose predicted part matches `labels`.
    pub fn accuracy(&self, charts: &[f64], labels: &[usize], n: usize) -> Result<f64> {
        let pred = self.segment(charts, n)?;
        if pred.len() != labels.len() {
            return Err(Error::Shape(format!("{} labels for {} nodes", labels.len(), pred.len())));
        }
        Ok(pred.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / labels.len() as f64)
    }
}

/// Fit the segmentation network on `[b, 3, n, n]` charts with per-node
/// labels laid out `[b, n, n]`. Returns the net and the mean loss per epoch.
pub fn train_feature_net(charts: &[f64], labels: &[usize], n: usize, config: &FeatureConfig) -> Result<(FeatureNet, Vec<f64>)> {
    let mut net = FeatureNet::new(config);
    let count = net.check(charts, n)?;
    let (len, nn) = (3 * n * n, n * n);
    if labels.len() != count * nn {
        return Err(Error::Shape(format!("{} labels for {count} charts of {n}x{n}", labels.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut opt = Adam::new(&net.params, config.learning_rate, 0.9, 0.999, 1e-8);
    let mut order: Vec<usize> = (0..count).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size.max(1)) {
            let x: Vec<f64> = chunk.iter().flat_map(|&i| charts[i * len..(i + 1) * len].iter().copied()).collect();
            let y: Vec<usize> = chunk.iter().flat_map(|&i| labels[i * nn..(i + 1) * nn].iter().copied()).collect();
            let mut tape = Tape::new();
            let p = net.params.bind(&mut tape, true);
            let xv = tape.constant(x, &[chunk.len(), 3, n, n]);
            let (_, logits) = net.forward(&mut tape, &p, xv);
            let loss = tape.softmax_cross_entropy(logits, &y);
            let value = tape.scalar(loss);
            if !value.is_finite() {
                return Err(Error::Divergence(format!("segmentation loss became {value}")));
            }
            let grads = tape.grad(loss, &p, false);
            let grads: Vec<Vec<f64>> = grads.iter().map(|g| tape.value(*g).to_vec()).collect();
            let refs: Vec<&[f64]> = grads.iter().map(|g| g.as_slice()).collect();
            opt.step(&mut net.params, &refs);
            total += value * chunk.len() as f64;
        }
        history.push(total / count as f64);
    }
    Ok((net, history))
}

/// Split `[b, 3F, n, n]` multi-chart samples into the `[b, 3, n, n]` charts
/// of chart index `k`.
pub fn chart_slice(samples: &[f64], charts: usize, n: usize, k: usize) -> Vec<f64> {
    let len = 3 * n * n;
    samples.chunks(charts * len).flat_map(|s| s[k * len..(k + 1) * len].iter().copied()).collect()
}
