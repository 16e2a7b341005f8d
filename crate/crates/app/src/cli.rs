//! `chartforge` subcommands. Each stage reads the artifacts of the previous
//! one from disk:
//!
//! ```text
//! param --out A              A/atlas.json
//! sample-data --atlas A --out D
//!                            D/{atlas.json, dataset.json, manifest.json, pairs.json,
//!                               meshes/*.obj, charts/*.mct}
//! train --data D --out M     M/{atlas.json, manifest.json, params.bin, train.ndjson}
//! train-encoder --data D --model M
//! eval --model M --out report.json
//! gen | edit | transfer --model M ...
//! serve --model M --port 8080
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chartforge_core::chartset::{read_mct, write_mct};
use chartforge_core::mesh::{load_obj, save_obj};
use chartforge_core::synth::{Attribute, ManifestEntry, PairRecord, DEFAULT_LEVEL};
use chartforge_core::torus::{ChartAtlas, WeightScheme};
use chartforge_nn::train::{train, train_encoder, FrozenGenerator, TrainOptions};
use chartforge_nn::{Encoder, TrainConfig, TrainData};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{build_dataset, DataConfig, Family};
use crate::error::{Error, Result};
use crate::evaluate::{EvalConfig, Evaluator};
use crate::pipeline::{Model, ATLAS_FILE, REFINE_STEPS};
use crate::service::{serve, ServiceState};

/// Settings shared by every stage; any field may be omitted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct PipelineConfig {
    pub n: usize,
    pub level: u32,
    pub weight_scheme: WeightScheme,
    pub attributes: Vec<String>,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    /// Refinement steps for inversion; 0 is encoder-only.
    pub refine_steps: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            n: 16,
            level: DEFAULT_LEVEL,
            weight_scheme: WeightScheme::Uniform,
            attributes: vec!["bulge".into()],
            data: DataConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            refine_steps: REFINE_STEPS,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Ok(serde_json::from_str(&fs::read_to_string(p)?)?),
            None => Ok(Self::default()),
        }
    }

    pub fn attribute_list(&self) -> Result<Vec<Attribute>> {
        self.attributes.iter().map(|a| Ok(Attribute::parse(a)?)).collect()
    }

    /// Training settings with the shared attribute list and an optional seed override.
    pub fn train_config(&self, seed: Option<u64>) -> TrainConfig {
        let mut t = self.train.clone();
        t.attributes = self.attributes.clone();
        if let Some(s) = seed {
            t.seed = s;
        }
        t
    }
}

#[derive(Parser, Debug)]
#[command(name = "chartforge", about = "Attribute-controllable mesh generation on multi-chart torus parameterizations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Pipeline configuration JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build the chart atlas of the template.
    Param {
        #[command(flatten)]
        common: Common,
    },
    /// Sample the synthetic dataset and its comparison pairs.
    SampleData {
        #[command(flatten)]
        common: Common,
        /// Directory holding atlas.json from `param`.
        #[arg(long)]
        atlas: PathBuf,
    },
    /// Train generator and critic.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Train the encoder against the frozen generator.
    TrainEncoder {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Write the evaluation report.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
    /// Generate one mesh.
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// Comma-separated attribute values in [-1, 1].
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        r: Vec<f64>,
    },
    /// Sweep one attribute of an inverted mesh.
    Edit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        attribute: String,
        #[arg(long, allow_hyphen_values = true)]
        value: f64,
        #[arg(long, default_value_t = 2)]
        steps: usize,
    },
    /// Copy one attribute's strength from a reference mesh to a target.
    Transfer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        attribute: String,
    },
    /// Serve the HTTP API.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

fn out_path(common: &Common) -> Result<&Path> {
    common.out.as_deref().ok_or_else(|| Error::Nn(chartforge_nn::Error::Config("--out is required".into())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct DatasetInfo {
    n: usize,
    charts: usize,
    count: usize,
    attributes: Vec<String>,
}

/// Read the tensors and pairs written by `sample-data`.
pub fn load_dataset(dir: &Path) -> Result<TrainData> {
    let info: DatasetInfo = serde_json::from_str(&fs::read_to_string(dir.join("dataset.json"))?)?;
    let entries: Vec<ManifestEntry> = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let pairs: Vec<PairRecord> = serde_json::from_str(&fs::read_to_string(dir.join("pairs.json"))?)?;
    let mut samples = Vec::with_capacity(entries.len() * 3 * info.charts * info.n * info.n);
    for e in &entries {
        let t = read_mct(dir.join(&e.mct))?;
        if t.n != info.n || t.chart_count != info.charts || !t.is_normalized() {
            return Err(chartforge_core::Error::Shape(format!("{} does not match the dataset layout", e.mct)).into());
        }
        samples.extend(t.data);
    }
    Ok(TrainData { n: info.n, charts: info.charts, samples, pairs })
}

fn family_from(dir: &Path, cfg: &PipelineConfig) -> Result<Family> {
    Family::from_atlas(ChartAtlas::load(dir.join(ATLAS_FILE))?, cfg.level)
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Param { common } => {
            let cfg = PipelineConfig::load(common.config.as_deref())?;
            let out = out_path(&common)?;
            fs::create_dir_all(out)?;
            let family = Family::new(cfg.n, cfg.level, cfg.weight_scheme)?;
            family.atlas.save(out.join(ATLAS_FILE))?;
        }
        Command::SampleData { common, atlas } => {
            let cfg = PipelineConfig::load(common.config.as_deref())?;
            let out = out_path(&common)?;
            let family = family_from(&atlas, &cfg)?;
            let mut data_cfg = cfg.data.clone();
            if let Some(s) = common.seed {
                data_cfg.seed = s;
            }
            let ds = build_dataset(&family, &cfg.attribute_list()?, &data_cfg)?;
            fs::create_dir_all(out.join("meshes"))?;
            fs::create_dir_all(out.join("charts"))?;
            family.atlas.save(out.join(ATLAS_FILE))?;
            let mut entries = Vec::with_capacity(ds.params.len());
            for (i, p) in ds.params.iter().enumerate() {
                let mesh = family.shape(p);
                let obj = format!("meshes/{i:05}.obj");
                let mct = format!("charts/{i:05}.mct");
                save_obj(&mesh, out.join(&obj))?;
                let mut t = chartforge_core::chartset::MultiChartTensor::from_data(ds.data.charts, ds.data.n, ds.data.row(i).to_vec())?;
                t.meta = Some(ds.metas[i].clone());
                write_mct(out.join(&mct), &t)?;
                entries.push(ManifestEntry { obj, mct, params: *p, probes: family.probes(&mesh) });
            }
            write_json(&out.join("manifest.json"), &entries)?;
            write_json(&out.join("pairs.json"), &ds.data.pairs)?;
            let info = DatasetInfo { n: ds.data.n, charts: ds.data.charts, count: entries.len(), attributes: cfg.attributes.clone() };
            write_json(&out.join("dataset.json"), &info)?;
        }
        Command::Train { common, data } => {
            let cfg = PipelineConfig::load(common.config.as_deref())?;
            let out = out_path(&common)?;
            let family = family_from(&data, &cfg)?;
            let td = load_dataset(&data)?;
            let geom = chartforge_nn::GridGeometry::from_atlas(&family.atlas)?;
            fs::create_dir_all(out)?;
            family.atlas.save(out.join(ATLAS_FILE))?;
            let mut log = fs::File::create(out.join("train.ndjson"))?;
            let opts = TrainOptions { checkpoint_dir: Some(out), log: Some(&mut log), on_epoch: None };
            let outcome = train(&td, &cfg.train_config(common.seed), &geom, opts)?;
            outcome.bundle.save(out)?;
        }
        Command::TrainEncoder { common, data, model } => {
            let cfg = PipelineConfig::load(common.config.as_deref())?;
            let mut m = Model::load(&model)?;
            let td = load_dataset(&data)?;
            let mut tc = m.bundle.config.clone();
            tc.encoder_epochs = cfg.train.encoder_epochs;
            tc.encoder_learning_rate = cfg.train.encoder_learning_rate;
            let generator = FrozenGenerator {
                generator: &m.bundle.generator,
                geometry: &m.geometry,
                landmark_consistency: m.bundle.landmark_consistency(),
            };
            let seed = common.seed.unwrap_or(tc.seed).wrapping_add(3);
            let outcome = train_encoder(&td.samples, td.sample_len(), &generator, Encoder::new(&m.bundle.net, seed)?, &tc)?;
            println!("{}", serde_json::json!({ "finalRms": outcome.final_rms, "epochLoss": outcome.epoch_loss }));
            m.bundle.encoder = Some(outcome.encoder);
            m.bundle.save(common.out.as_deref().unwrap_or(&model))?;
        }
        Command::Eval { common, model } => {
            let cfg = PipelineConfig::load(common.config.as_deref())?;
            let m = Model::load(&model)?;
            let attrs = m.attributes().iter().map(|a| Ok(Attribute::parse(a)?)).collect::<Result<Vec<_>>>()?;
            let mut eval_cfg = cfg.eval.clone();
            if let Some(s) = common.seed {
                eval_cfg.seed = s;
            }
            let report = Evaluator::new(&m.family, &attrs, &eval_cfg)?.report(&m)?;
            match &common.out {
                Some(p) => write_json(p, &report)?,
                None => println!("{}", serde_json::to_string_pretty(&report)?),
            }
        }
        Command::Gen { common, model, r } => {
            let m = Model::load(&model)?;
            let g = m.generate(&r, common.seed.unwrap_or(0))?;
            save_obj(&g.mesh, out_path(&common)?)?;
        }
        Command::Edit { common, model, mesh, attribute, value, steps } => {
            let cfg = PipelineConfig::load(common.config.as_deref())?;
            let m = Model::load(&model)?;
            let frames = m.edit(&load_obj(&mesh)?, m.attribute_index(&attribute)?, value, steps, cfg.refine_steps)?;
            let out = out_path(&common)?;
            fs::create_dir_all(out)?;
            for (i, f) in frames.iter().enumerate() {
                save_obj(f, out.join(format!("frame_{i:03}.obj")))?;
            }
        }
        Command::Transfer { common, model, reference, target, attribute } => {
            let cfg = PipelineConfig::load(common.config.as_deref())?;
            let m = Model::load(&model)?;
            let j = m.attribute_index(&attribute)?;
            let mesh = m.transfer(&load_obj(&reference)?, &load_obj(&target)?, j, cfg.refine_steps)?;
            save_obj(&mesh, out_path(&common)?)?;
        }
        Command::Serve { common, model, port } => {
            let cfg = PipelineConfig::load(common.config.as_deref())?;
            let m = Model::load(&model)?;
            let state = ServiceState { model: Arc::new(m), refine_steps: cfg.refine_steps };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(state, port))?;
        }
    }
    Ok(())
}

/// Run one parsed command and map the outcome to an exit code.
pub fn run(cli: Cli) -> i32 {
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.code());
            if e.is_config() || matches!(e, Error::ModelNotLoaded(_)) {
                EXIT_CONFIG
            } else {
                EXIT_RUNTIME
            }
        }
    }
}
