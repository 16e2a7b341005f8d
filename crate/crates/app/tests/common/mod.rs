#![allow(dead_code)]

use std::sync::{Arc, OnceLock};

use chartforge::data::{build_dataset, DataConfig, Family};
use chartforge::pipeline::Model;
use chartforge_core::synth::Attribute;
use chartforge_nn::train::{train, train_encoder, FrozenGenerator, TrainOptions};
use chartforge_nn::{Encoder, GridGeometry, TrainConfig};

pub fn tiny_config() -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        latent_dim: 4,
        attributes: vec!["bulge".into()],
        epochs: 2,
        critic_steps_per_gen: 1,
        learning_rate: 1e-3,
        gen_widths: [8, 8, 8],
        critic_widths: [8, 8, 8],
        encoder_epochs: 3,
        ..TrainConfig::default()
    }
}

fn build() -> Model {
    let family = Family::desk(8).unwrap();
    let data = DataConfig { count: 16, pair_count: 16, ..DataConfig::default() };
    let ds = build_dataset(&family, &[Attribute::Bulge], &data).unwrap();
    let geom = GridGeometry::from_atlas(&family.atlas).unwrap();
    let cfg = tiny_config();
    let mut bundle = train(&ds.data, &cfg, &geom, TrainOptions::default()).unwrap().bundle;
    let generator = FrozenGenerator { generator: &bundle.generator, geometry: &geom, landmark_consistency: bundle.landmark_consistency() };
    let enc = train_encoder(&ds.data.samples, ds.data.sample_len(), &generator, Encoder::new(&bundle.net, 3).unwrap(), &cfg).unwrap();
    bundle.encoder = Some(enc.encoder);
    Model::new(bundle, family).unwrap()
}

/// Small trained model shared by every test of a binary.
pub fn tiny_model() -> Arc<Model> {
    static MODEL: OnceLock<Arc<Model>> = OnceLock::new();
    MODEL.get_or_init(|| Arc::new(build())).clone()
}
