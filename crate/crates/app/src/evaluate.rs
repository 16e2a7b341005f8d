//! Held-out evaluation of a trained model against fresh real samples.

use std::collections::BTreeMap;

use chartforge_core::synth::{Attribute, SamplingSpec};
use chartforge_eval::features::chart_slice;
use chartforge_eval::{
    chart_part_labels, mean_fid, monotonicity_score, ranking_accuracy, sweep, train_feature_net, EvalReport,
    FeatureConfig, FeatureNet,
};
use chartforge_nn::train::sample_latents;
use chartforge_nn::{Critic, ModelBundle};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{build_dataset, DataConfig, Dataset, Family};
use crate::error::Result;
use crate::pipeline::Model;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct EvalConfig {
    /// Samples per side of every Frechet comparison.
    pub fid_samples: usize,
    pub held_out_count: usize,
    pub held_out_pairs: usize,
    pub z_samples: usize,
    pub r_steps: usize,
    /// Shapes whose charts train the feature network.
    pub feature_train_count: usize,
    pub feature: FeatureConfig,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            fid_samples: 320,
            held_out_count: 256,
            held_out_pairs: 512,
            z_samples: 32,
            r_steps: 9,
            feature_train_count: 96,
            feature: FeatureConfig::default(),
            seed: 1000,
        }
    }
}

/// Real reference data and the trained feature network, built once and
/// reused for every model snapshot.
pub struct Evaluator {
    pub config: EvalConfig,
    pub attributes: Vec<Attribute>,
    pub feature_net: FeatureNet,
    /// Held-out pixel accuracy of the feature network.
    pub segmentation_accuracy: f64,
    pub real_a: Vec<f64>,
    pub real_b: Vec<f64>,
    pub held_out: Dataset,
    pub baseline_fid: f64,
    charts: usize,
    n: usize,
}

fn labeled_charts(family: &Family, data: &Dataset) -> (Vec<f64>, Vec<usize>) {
    let (charts, n) = (data.data.charts, data.data.n);
    let per_chart = chart_part_labels(&family.atlas, &family.template);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for s in 0..data.data.count() {
        let row = data.data.row(s);
        for (k, labels) in per_chart.iter().enumerate() {
            x.extend_from_slice(&chart_slice(row, charts, n, k));
            y.extend_from_slice(labels);
        }
    }
    (x, y)
}

impl Evaluator {
    pub fn new(family: &Family, attributes: &[Attribute], config: &EvalConfig) -> Result<Self> {
        let (n, charts) = (family.atlas.n, family.atlas.chart_count());
        let fresh = |count: usize, pairs: usize, seed: u64| {
            let cfg = DataConfig { count, pair_count: pairs, seed, sampling: SamplingSpec::default(), ..DataConfig::default() };
            build_dataset(family, attributes, &cfg)
        };
        let train = fresh(config.feature_train_count, 1, config.seed)?;
        let test = fresh(config.feature_train_count / 4 + 1, 1, config.seed + 1)?;
        let (x, y) = labeled_charts(family, &train);
        let (feature_net, _) = train_feature_net(&x, &y, n, &config.feature)?;
        let (tx, ty) = labeled_charts(family, &test);
        let segmentation_accuracy = feature_net.accuracy(&tx, &ty, n)?;

        let real = fresh(2 * config.fid_samples, 1, config.seed + 2)?;
        let half = config.fid_samples * real.data.sample_len();
        let (real_a, real_b) = (real.data.samples[..half].to_vec(), real.data.samples[half..].to_vec());
        let (baseline_fid, _) = mean_fid(&feature_net, &real_a, &real_b, charts, n)?;
        let held_out = fresh(config.held_out_count, config.held_out_pairs, config.seed + 3)?;
        Ok(Self {
            config: config.clone(),
            attributes: attributes.to_vec(),
            feature_net,
            segmentation_accuracy,
            real_a,
            real_b,
            held_out,
            baseline_fid,
            charts,
            n,
        })
    }

    /// Mean and per-chart Frechet distance of generated samples to real half A.
    pub fn fid(&self, bundle: &ModelBundle, model_geometry: &chartforge_nn::GridGeometry) -> Result<(f64, Vec<f64>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed + 4);
        let latents = sample_latents(&mut rng, self.config.fid_samples, bundle.net.latent_dim, bundle.net.attributes);
        let mut generated = Vec::new();
        for chunk in latents.chunks(64 * bundle.net.latent_len()) {
            generated.extend(bundle.generate(chunk, model_geometry)?);
        }
        Ok(mean_fid(&self.feature_net, &self.real_a, &generated, self.charts, self.n)?)
    }

    /// Held-out pairwise accuracy of the critic's rank head, per attribute.
    pub fn ranking(&self, critic: &Critic) -> Result<Vec<f64>> {
        let data = &self.held_out.data;
        let a = self.attributes.len();
        let first: Vec<f64> = data.pairs.iter().flat_map(|p| data.row(p.i).to_vec()).collect();
        let second: Vec<f64> = data.pairs.iter().flat_map(|p| data.row(p.j).to_vec()).collect();
        let (s1, s2) = (critic.rank_scores(&first)?, critic.rank_scores(&second)?);
        (0..a)
            .map(|j| {
                let col = |s: &[f64]| s.iter().skip(j).step_by(a).copied().collect::<Vec<_>>();
                let labels: Vec<u8> = data.pairs.iter().map(|p| p.labels[j]).collect();
                Ok(ranking_accuracy(&col(&s1), &col(&s2), &labels)?)
            })
            .collect()
    }

    /// Mean Spearman correlation between each swept latent attribute and its
    /// geometric probe on the decoded meshes.
    pub fn monotonicity(&self, model: &Model) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed + 5);
        let a = self.attributes.len();
        let base = sample_latents(&mut rng, self.config.z_samples, model.latent_dim(), a);
        let row = model.latent_dim() + a;
        let steps = sweep(self.config.r_steps);
        self.attributes
            .iter()
            .enumerate()
            .map(|(j, attr)| {
                monotonicity_score(self.config.z_samples, &steps, |z, r| {
                    let latent = &base[z * row..(z + 1) * row];
                    let (zv, rv) = latent.split_at(model.latent_dim());
                    let mut rv = rv.to_vec();
                    rv[j] = r;
                    let mesh = model.mesh_at(&rv, zv).map_err(|e| chartforge_eval::Error::Shape(e.to_string()))?;
                    Ok(attr.probe(&model.family.probes(&mesh)))
                })
                .map_err(Into::into)
            })
            .collect()
    }

    pub fn report(&self, model: &Model) -> Result<EvalReport> {
        let (mean_fid, per_chart_fid) = self.fid(&model.bundle, &model.geometry)?;
        let names = || self.attributes.iter().map(|a| a.name().to_string());
        Ok(EvalReport {
            mean_fid,
            per_chart_fid,
            ranking_accuracy: names().zip(self.ranking(&model.bundle.critic)?).collect::<BTreeMap<_, _>>(),
            monotonicity: names().zip(self.monotonicity(model)?).collect(),
            baseline_fid_split_half: self.baseline_fid,
        })
    }
}
