use std::fs;
use std::io::Write;
use std::path::Path;

use chartforge_core::synth::PairRecord;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{
    critic_loss, encoder_loss, generator_loss, BoundCritic, BoundEncoder, BoundGenerator, GeneratorModel, PairBatch,
};
use crate::nets::{Critic, Encoder, Generator, GridGeometry, NetConfig};
use crate::params::{load_into, read_blob, write_blob, Adam, ParamSet};
use crate::tape::{Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct TrainConfig {
    pub lambda: f64,
    pub nu: f64,
    pub batch_size: usize,
    pub latent_dim: usize,
    pub attributes: Vec<String>,
    pub epochs: usize,
    pub critic_steps_per_gen: usize,
    /// First epoch (0-based) with landmark consistency on; `ceil(epochs / 6)` when unset.
    pub lc_activation_epoch: Option<usize>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub gen_widths: [usize; 3],
    pub critic_widths: [usize; 3],
    pub kernel: usize,
    pub encoder_epochs: usize,
    pub encoder_learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 10.0,
            nu: 1.0,
            batch_size: 16,
            latent_dim: 64,
            attributes: vec!["bulge".into()],
            epochs: 50,
            critic_steps_per_gen: 5,
            lc_activation_epoch: None,
            learning_rate: 1e-4,
            beta1: 0.0,
            beta2: 0.9,
            epsilon: 1e-8,
            seed: 0,
            gen_widths: [64, 32, 16],
            critic_widths: [16, 32, 64],
            kernel: 3,
            encoder_epochs: 30,
            encoder_learning_rate: 1e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.lambda >= 0.0 && self.nu >= 0.0) {
            return fail(format!("lambda {} and nu {} must be non-negative", self.lambda, self.nu));
        }
        if self.batch_size < 2 || self.batch_size % 2 != 0 {
            return fail(format!("batch size {} must be even", self.batch_size));
        }
        if self.critic_steps_per_gen == 0 || self.epochs == 0 {
            return fail("epochs and critic steps per generator step must be positive".into());
        }
        if self.attributes.is_empty() {
            return fail("at least one attribute is required".into());
        }
        if !(self.learning_rate > 0.0 && self.encoder_learning_rate > 0.0) {
            return fail("learning rates must be positive".into());
        }
        Ok(())
    }

    pub fn lc_activation(&self) -> usize {
        self.lc_activation_epoch.unwrap_or(self.epochs.div_ceil(6))
    }

    pub fn net_config(&self, n: usize, charts: usize) -> NetConfig {
        NetConfig {
            n,
            charts,
            latent_dim: self.latent_dim,
            attributes: self.attributes.len(),
            gen_widths: self.gen_widths,
            critic_widths: self.critic_widths,
            kernel: self.kernel,
        }
    }
}

/// Normalized training tensors as `[count, 3F * n * n]` rows plus pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainData {
    pub n: usize,
    pub charts: usize,
    pub samples: Vec<f64>,
    pub pairs: Vec<PairRecord>,
}

impl TrainData {
    pub fn sample_len(&self) -> usize {
        3 * self.charts * self.n * self.n
    }

    pub fn count(&self) -> usize {
        self.samples.len() / self.sample_len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let len = self.sample_len();
        &self.samples[i * len..(i + 1) * len]
    }

    fn gather(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().flat_map(|&i| self.row(i).iter().copied()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LogRecord {
    pub epoch: usize,
    pub step: usize,
    pub phase: String,
    pub loss_d: Option<f64>,
    pub loss_g: Option<f64>,
    pub loss_rank: f64,
    pub gp_term: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RngState {
    pub seed: Vec<u8>,
    pub stream: u64,
    /// Decimal, since JSON numbers cannot hold 128 bits.
    pub word_pos: String,
}

impl RngState {
    fn capture(rng: &ChaCha8Rng) -> Self {
        Self { seed: rng.get_seed().to_vec(), stream: rng.get_stream(), word_pos: rng.get_word_pos().to_string() }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let seed: [u8; 32] = self.seed.as_slice().try_into().map_err(|_| Error::Format("rng seed is not 32 bytes".into()))?;
        let pos = self.word_pos.parse().map_err(|_| Error::Format("rng position is not an integer".into()))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct Manifest {
    config: TrainConfig,
    net: NetConfig,
    epoch: usize,
    attribute_names: Vec<String>,
    rng_state: RngState,
    has_encoder: bool,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";

/// Generator, critic and (once trained) encoder with their configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub config: TrainConfig,
    pub net: NetConfig,
    pub generator: Generator,
    pub critic: Critic,
    pub encoder: Option<Encoder>,
    /// Number of completed epochs.
    pub epoch: usize,
    pub rng_state: RngState,
}

impl ModelBundle {
    pub fn new(config: &TrainConfig, n: usize, charts: usize) -> Result<Self> {
        config.validate()?;
        let net = config.net_config(n, charts);
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            config: config.clone(),
            generator: Generator::new(&net, config.seed.wrapping_add(1))?,
            critic: Critic::new(&net, config.seed.wrapping_add(2))?,
            encoder: None,
            net,
            epoch: 0,
            rng_state: RngState::capture(&rng),
        })
    }

    /// Whether the generator's last trained epoch ran with landmark consistency.
    pub fn landmark_consistency(&self) -> bool {
        self.epoch > self.config.lc_activation()
    }

    pub fn attribute_names(&self) -> &[String] {
        &self.config.attributes
    }

    pub fn generate(&self, latents: &[f64], geom: &GridGeometry) -> Result<Vec<f64>> {
        self.generator.generate(latents, geom, self.landmark_consistency())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let manifest = Manifest {
            config: self.config.clone(),
            net: self.net.clone(),
            epoch: self.epoch,
            attribute_names: self.config.attributes.clone(),
            rng_state: self.rng_state.clone(),
            has_encoder: self.encoder.is_some(),
        };
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
        let mut named = Vec::new();
        let mut add = |prefix: &str, set: &ParamSet| {
            for p in &set.params {
                named.push((format!("{prefix}.{}", p.name), p.clone()));
            }
        };
        add("generator", &self.generator.params);
        add("critic", &self.critic.params);
        if let Some(e) = &self.encoder {
            add("encoder", &e.params);
        }
        let refs: Vec<_> = named.iter().map(|(k, p)| (k.clone(), p)).collect();
        let mut bytes = Vec::new();
        write_blob(&refs, &mut bytes)?;
        // Write-then-rename keeps the previous checkpoint intact on failure.
        let tmp = dir.join(format!("{PARAMS_FILE}.tmp"));
        fs::write(&tmp, bytes)?;
        fs::rename(tmp, dir.join(PARAMS_FILE))?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
        manifest.config.validate()?;
        let arrays = read_blob(&mut fs::File::open(dir.join(PARAMS_FILE))?)?;
        let mut generator = Generator::new(&manifest.net, 0)?;
        let mut critic = Critic::new(&manifest.net, 0)?;
        load_into(&mut generator.params, "generator", &arrays)?;
        load_into(&mut critic.params, "critic", &arrays)?;
        let encoder = if manifest.has_encoder {
            let mut e = Encoder::new(&manifest.net, 0)?;
            load_into(&mut e.params, "encoder", &arrays)?;
            Some(e)
        } else {
            None
        };
        Ok(Self {
            config: manifest.config,
            net: manifest.net,
            generator,
            critic,
            encoder,
            epoch: manifest.epoch,
            rng_state: manifest.rng_state,
        })
    }
}

/// Draw latent rows `[z | r]` with `z ~ N(0, I)` and `r ~ U(-1, 1)^A`.
pub fn sample_latents(rng: &mut impl Rng, rows: usize, latent_dim: usize, attributes: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * (latent_dim + attributes));
    for _ in 0..rows {
        out.extend((0..latent_dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
        out.extend((0..attributes).map(|_| rng.random_range(-1.0..1.0)));
    }
    out
}

pub struct TrainOutcome {
    pub bundle: ModelBundle,
    pub records: Vec<LogRecord>,
}

#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Checkpoint written here after every epoch.
    pub checkpoint_dir: Option<&'a Path>,
    /// NDJSON training log.
    pub log: Option<&'a mut dyn Write>,
    /// Called with the bundle after every epoch.
    pub on_epoch: Option<&'a mut dyn FnMut(&ModelBundle) -> Result<()>>,
}

struct Guard {
    bad: usize,
}

impl Guard {
    /// Whether the update may be applied; errors after three bad steps in a row.
    fn check(&mut self, ok: bool, epoch: usize) -> Result<bool> {
        if ok {
            self.bad = 0;
            return Ok(true);
        }
        self.bad += 1;
        if self.bad >= 3 {
            return Err(Error::Divergence(format!(
                "non-finite loss for 3 consecutive steps in epoch {epoch}; the last checkpoint holds epoch {epoch}"
            )));
        }
        Ok(false)
    }
}

fn grads_of(tape: &mut Tape, loss: Var, params: &[Var]) -> Vec<Vec<f64>> {
    let g = tape.grad(loss, params, false);
    g.iter().map(|v| tape.value(*v).to_vec()).collect()
}

fn all_finite(grads: &[Vec<f64>]) -> bool {
    grads.iter().all(|g| g.iter().all(|x| x.is_finite()))
}

/// Alternating critic/generator optimisation from a fresh bundle.
pub fn train(data: &TrainData, config: &TrainConfig, geom: &GridGeometry, opts: TrainOptions) -> Result<TrainOutcome> {
    let bundle = ModelBundle::new(config, data.n, data.charts)?;
    train_from(bundle, data, geom, opts)
}

/// Continue training `bundle` until `bundle.config.epochs` epochs are done.
pub fn train_from(mut bundle: ModelBundle, data: &TrainData, geom: &GridGeometry, mut opts: TrainOptions) -> Result<TrainOutcome> {
    let config = bundle.config.clone();
    let (b, a, d) = (config.batch_size, config.attributes.len(), config.latent_dim);
    let len = data.sample_len();
    if data.n != bundle.net.n || data.charts != bundle.net.charts {
        return Err(Error::Shape("dataset shape differs from the model".into()));
    }
    if data.count() == 0 || data.pairs.is_empty() {
        return Err(Error::Config("training needs samples and comparison pairs".into()));
    }
    if let Some(p) = data.pairs.iter().find(|p| p.labels.len() != a || p.i >= data.count() || p.j >= data.count()) {
        return Err(Error::Config(format!("pair {p:?} does not match {a} attributes over {} samples", data.count())));
    }
    let mut rng = bundle.rng_state.restore()?;
    let mut opt_d = Adam::new(&bundle.critic.params, config.learning_rate, config.beta1, config.beta2, config.epsilon);
    let mut opt_g = Adam::new(&bundle.generator.params, config.learning_rate, config.beta1, config.beta2, config.epsilon);
    let mut records = Vec::new();
    let mut guard = Guard { bad: 0 };
    let mut order: Vec<usize> = (0..data.count()).collect();
    let mut cursor = order.len();
    let mut step = 0;
    let steps_per_epoch = data.count().div_ceil(b);

    while bundle.epoch < config.epochs {
        let epoch = bundle.epoch;
        let lc = epoch >= config.lc_activation();
        for _ in 0..steps_per_epoch {
            for _ in 0..config.critic_steps_per_gen {
                let mut idx = Vec::with_capacity(b);
                while idx.len() < b {
                    if cursor == order.len() {
                        order.shuffle(&mut rng);
                        cursor = 0;
                    }
                    idx.push(order[cursor]);
                    cursor += 1;
                }
                let real = data.gather(&idx);
                let latents = sample_latents(&mut rng, b, d, a);
                let fake = bundle.generator.generate(&latents, geom, lc)?;
                let picks: Vec<&PairRecord> = (0..b / 2).map(|_| &data.pairs[rng.random_range(0..data.pairs.len())]).collect();
                let pairs = PairBatch {
                    first: data.gather(&picks.iter().map(|p| p.i).collect::<Vec<_>>()),
                    second: data.gather(&picks.iter().map(|p| p.j).collect::<Vec<_>>()),
                    labels: picks.iter().flat_map(|p| p.labels.iter().copied()).collect(),
                };
                let alphas: Vec<f64> = (0..b).map(|_| rng.random_range(0.0..1.0)).collect();
                let mut tape = Tape::new();
                let critic = BoundCritic::bind(&bundle.critic, &mut tape, true);
                let terms = critic_loss(&mut tape, &critic, &real, &fake, len, &pairs, &alphas, config.lambda)?;
                let loss = tape.scalar(terms.total);
                let grads = grads_of(&mut tape, terms.total, &critic.params);
                if guard.check(loss.is_finite() && all_finite(&grads), epoch)? {
                    let refs: Vec<&[f64]> = grads.iter().map(|g| g.as_slice()).collect();
                    opt_d.step(&mut bundle.critic.params, &refs);
                }
                let record = LogRecord {
                    epoch,
                    step,
                    phase: "critic".into(),
                    loss_d: Some(loss),
                    loss_g: None,
                    loss_rank: terms.rank,
                    gp_term: Some(terms.gradient_penalty),
                };
                emit(&mut opts, &record)?;
                records.push(record);
                step += 1;
            }
            let latents = sample_latents(&mut rng, b, d, a);
            let first = sample_latents(&mut rng, b / 2, d, a);
            let second = sample_latents(&mut rng, b / 2, d, a);
            let mut tape = Tape::new();
            let generator = BoundGenerator::bind(&bundle.generator, geom, lc, &mut tape, true);
            let critic = BoundCritic::bind(&bundle.critic, &mut tape, false);
            let terms = generator_loss(&mut tape, &generator, &critic, &latents, &first, &second, d, a, config.nu)?;
            let loss = tape.scalar(terms.total);
            let grads = grads_of(&mut tape, terms.total, &generator.params);
            if guard.check(loss.is_finite() && all_finite(&grads), epoch)? {
                let refs: Vec<&[f64]> = grads.iter().map(|g| g.as_slice()).collect();
                opt_g.step(&mut bundle.generator.params, &refs);
            }
            let record = LogRecord {
                epoch,
                step,
                phase: "generator".into(),
                loss_d: None,
                loss_g: Some(loss),
                loss_rank: terms.rank,
                gp_term: None,
            };
            emit(&mut opts, &record)?;
            records.push(record);
            step += 1;
        }
        bundle.epoch += 1;
        bundle.rng_state = RngState::capture(&rng);
        if let Some(dir) = opts.checkpoint_dir {
            bundle.save(dir)?;
        }
        if let Some(f) = opts.on_epoch.as_mut() {
            f(&bundle)?;
        }
    }
    Ok(TrainOutcome { bundle, records })
}

fn emit(opts: &mut TrainOptions, record: &LogRecord) -> Result<()> {
    if let Some(w) = opts.log.as_mut() {
        serde_json::to_writer(&mut **w, record)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// A generator evaluated with constant parameters.
pub struct FrozenGenerator<'a> {
    pub generator: &'a Generator,
    pub geometry: &'a GridGeometry,
    pub landmark_consistency: bool,
}

impl GeneratorModel for FrozenGenerator<'_> {
    fn evaluate(&self, tape: &mut Tape, latent: Var) -> Result<Var> {
        BoundGenerator::bind(self.generator, self.geometry, self.landmark_consistency, tape, false).evaluate(tape, latent)
    }
}

pub struct EncoderOutcome {
    pub encoder: Encoder,
    /// Mean training loss per epoch.
    pub epoch_loss: Vec<f64>,
    /// Running minimum of `epoch_loss`.
    pub best_loss: Vec<f64>,
    /// Root of the final full-dataset reconstruction loss.
    pub final_rms: f64,
}

/// Fit `encoder` so that `generator(encoder(x))` reconstructs the rows of
/// `samples`; the generator stays frozen.
pub fn train_encoder(
    samples: &[f64],
    len: usize,
    generator: &impl GeneratorModel,
    mut encoder: Encoder,
    config: &TrainConfig,
) -> Result<EncoderOutcome> {
    if len == 0 || samples.is_empty() || samples.len() % len != 0 {
        return Err(Error::Shape("encoder training needs whole sample rows".into()));
    }
    let count = samples.len() / len;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(3));
    let mut opt = Adam::new(&encoder.params, config.encoder_learning_rate, 0.9, 0.999, config.epsilon);
    let mut order: Vec<usize> = (0..count).collect();
    let mut guard = Guard { bad: 0 };
    let (mut epoch_loss, mut best_loss) = (Vec::new(), Vec::new());
    let gather = |idx: &[usize]| -> Vec<f64> { idx.iter().flat_map(|&i| samples[i * len..(i + 1) * len].iter().copied()).collect() };
    for epoch in 0..config.encoder_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = gather(chunk);
            let mut tape = Tape::new();
            let bound = BoundEncoder::bind(&encoder, &mut tape, true);
            let loss = encoder_loss(&mut tape, &bound, generator, &batch, len)?;
            let value = tape.scalar(loss);
            let grads = grads_of(&mut tape, loss, &bound.params);
            if guard.check(value.is_finite() && all_finite(&grads), epoch)? {
                let refs: Vec<&[f64]> = grads.iter().map(|g| g.as_slice()).collect();
                opt.step(&mut encoder.params, &refs);
                total += value * chunk.len() as f64;
            }
        }
        let mean = total / count as f64;
        best_loss.push(best_loss.last().map_or(mean, |b: &f64| b.min(mean)));
        epoch_loss.push(mean);
    }
    let mut total = 0.0;
    for chunk in (0..count).collect::<Vec<_>>().chunks(config.batch_size.max(1)) {
        let mut tape = Tape::new();
        let bound = BoundEncoder::bind(&encoder, &mut tape, false);
        let loss = encoder_loss(&mut tape, &bound, generator, &gather(chunk), len)?;
        total += tape.scalar(loss) * chunk.len() as f64;
    }
    Ok(EncoderOutcome { encoder, epoch_loss, best_loss, final_rms: (total / count as f64).sqrt() })
}
