use std::sync::Arc;

use chartforge_core::torus::ChartAtlas;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landmark::LandmarkLayout;
use crate::params::ParamSet;
use crate::tape::{Tape, Var};

pub const LEAKY_SLOPE: f64 = 0.2;

/// Grid structure the generator needs: the deck group for the projection
/// layer and, for multi-chart models, the landmark layout.
#[derive(Clone, Debug)]
pub struct GridGeometry {
    pub n: usize,
    pub charts: usize,
    pub group: Arc<Vec<Vec<usize>>>,
    pub layout: Option<Arc<LandmarkLayout>>,
}

impl GridGeometry {
    pub fn from_atlas(atlas: &ChartAtlas) -> Result<Self> {
        let layout = if atlas.chart_count() > 1 { Some(Arc::new(LandmarkLayout::from_atlas(atlas)?)) } else { None };
        Ok(Self { n: atlas.n, charts: atlas.chart_count(), group: Arc::new(atlas.symmetry.clone()), layout })
    }

    /// Trivial group, no landmark consistency.
    pub fn plain(n: usize, charts: usize) -> Self {
        Self { n, charts, group: Arc::new(vec![(0..n * n).collect()]), layout: None }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NetConfig {
    pub n: usize,
    pub charts: usize,
    pub latent_dim: usize,
    pub attributes: usize,
    /// Channels after the dense layer and after each transposed conv.
    pub gen_widths: [usize; 3],
    /// Channels of the three critic/encoder convs.
    pub critic_widths: [usize; 3],
    pub kernel: usize,
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 4 || self.n % 4 != 0 {
            return Err(Error::Config(format!("grid size {} must be a positive multiple of 4", self.n)));
        }
        if self.charts == 0 || self.attributes == 0 {
            return Err(Error::Config("need at least one chart and one attribute".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config(format!("kernel size {} must be odd", self.kernel)));
        }
        if self.gen_widths.contains(&0) || self.critic_widths.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        3 * self.charts
    }

    pub fn sample_len(&self) -> usize {
        self.channels() * self.n * self.n
    }

    /// Latent rows are laid out `[z | r]`.
    pub fn latent_len(&self) -> usize {
        self.latent_dim + self.attributes
    }

    fn trunk_features(&self) -> usize {
        self.critic_widths[2] * (self.n / 4) * (self.n / 4)
    }

    fn check_geometry(&self, geom: &GridGeometry) -> Result<()> {
        if geom.n != self.n || geom.charts != self.charts {
            return Err(Error::Shape(format!(
                "geometry is {} charts at n = {}, model expects {} at n = {}",
                geom.charts, geom.n, self.charts, self.n
            )));
        }
        Ok(())
    }
}

fn check_input(tape: &Tape, x: Var, len: usize, what: &str) -> Result<usize> {
    let shape = tape.shape(x);
    let per = shape[1..].iter().product::<usize>();
    if per != len {
        return Err(Error::Shape(format!("{what} rows have {per} values, expected {len}")));
    }
    Ok(shape[0])
}

fn conv_block(tape: &mut Tape, x: Var, w: Var, b: Var, stride: usize) -> Var {
    let y = tape.conv(x, w, stride);
    let y = tape.add_channel_bias(y, b);
    tape.leaky_relu(y, LEAKY_SLOPE)
}

fn dense(tape: &mut Tape, x: Var, w: Var, b: Var) -> Var {
    let y = tape.matmul(x, w, false, false);
    tape.add_row_bias(y, b)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub config: NetConfig,
    pub params: ParamSet,
}

impl Generator {
    pub fn new(config: &NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [c0, c1, c2] = config.gen_widths;
        let (k, m) = (config.kernel, config.n / 4);
        let mut p = ParamSet::default();
        let gain = 2f64.sqrt();
        p.push_normal("dense.w", &[config.latent_len(), c0 * m * m], config.latent_len(), gain, &mut rng);
        p.push_zeros("dense.b", &[c0 * m * m]);
        p.push_normal("up1.w", &[c0, c1, k, k], c0 * k * k / 4, gain, &mut rng);
        p.push_zeros("up1.b", &[c1]);
        p.push_normal("up2.w", &[c1, c2, k, k], c1 * k * k / 4, gain, &mut rng);
        p.push_zeros("up2.b", &[c2]);
        p.push_normal("out.w", &[config.channels(), c2, k, k], c2 * k * k, 1.0, &mut rng);
        p.push_zeros("out.b", &[config.channels()]);
        Ok(Self { config: config.clone(), params: p })
    }

    /// `[b, d + A]` latents to `[b, 3F, n, n]` charts.
    pub fn forward(&self, tape: &mut Tape, p: &[Var], latent: Var, geom: &GridGeometry, lc: bool) -> Result<Var> {
        let cfg = &self.config;
        cfg.check_geometry(geom)?;
        let b = check_input(tape, latent, cfg.latent_len(), "latent")?;
        let m = cfg.n / 4;
        let x = dense(tape, latent, p[0], p[1]);
        let x = tape.reshape(x, &[b, cfg.gen_widths[0], m, m]);
        let x = tape.relu(x);
        let x = tape.conv_transpose(x, p[2], 2);
        let x = tape.add_channel_bias(x, p[3]);
        let x = tape.relu(x);
        let x = tape.conv_transpose(x, p[4], 2);
        let x = tape.add_channel_bias(x, p[5]);
        let x = tape.relu(x);
        let x = tape.conv(x, p[6], 1);
        let x = tape.add_channel_bias(x, p[7]);
        let mut x = tape.grid_average(x, geom.group.clone());
        if lc {
            if let Some(layout) = &geom.layout {
                x = tape.landmark(x, layout.clone())?;
            }
        }
        Ok(tape.zero_mean(x))
    }

    /// Inference on plain rows of latents.
    pub fn generate(&self, latents: &[f64], geom: &GridGeometry, lc: bool) -> Result<Vec<f64>> {
        let len = self.config.latent_len();
        if latents.len() % len != 0 {
            return Err(Error::Shape(format!("{} latent values are not rows of {len}", latents.len())));
        }
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let z = tape.constant(latents.to_vec(), &[latents.len() / len, len]);
        let y = self.forward(&mut tape, &p, z, geom, lc)?;
        Ok(tape.value(y).to_vec())
    }
}

/// Shared critic/encoder trunk: three cyclic convs (strides 1, 2, 2) with
/// leaky rectifiers, flattened.
fn trunk_params(p: &mut ParamSet, cfg: &NetConfig, rng: &mut ChaCha8Rng) {
    let [w0, w1, w2] = cfg.critic_widths;
    let k = cfg.kernel;
    let gain = (2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE)).sqrt();
    let mut cin = cfg.channels();
    for (i, w) in [w0, w1, w2].into_iter().enumerate() {
        p.push_normal(format!("conv{i}.w"), &[w, cin, k, k], cin * k * k, gain, rng);
        p.push_zeros(format!("conv{i}.b"), &[w]);
        cin = w;
    }
}

fn trunk(tape: &mut Tape, p: &[Var], cfg: &NetConfig, x: Var) -> Result<Var> {
    let b = check_input(tape, x, cfg.sample_len(), "chart")?;
    let x = tape.reshape(x, &[b, cfg.channels(), cfg.n, cfg.n]);
    let x = conv_block(tape, x, p[0], p[1], 1);
    let x = conv_block(tape, x, p[2], p[3], 2);
    let x = conv_block(tape, x, p[4], p[5], 2);
    Ok(tape.reshape(x, &[b, cfg.trunk_features()]))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Critic {
    pub config: NetConfig,
    pub params: ParamSet,
}

impl Critic {
    pub fn new(config: &NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::default();
        trunk_params(&mut p, config, &mut rng);
        let f = config.trunk_features();
        p.push_normal("critic.w", &[f, 1], f, 1.0, &mut rng);
        p.push_zeros("critic.b", &[1]);
        p.push_normal("rank.w", &[f, config.attributes], f, 1.0, &mut rng);
        p.push_zeros("rank.b", &[config.attributes]);
        Ok(Self { config: config.clone(), params: p })
    }

    pub fn head_count(&self) -> usize {
        1 + self.config.attributes
    }

    /// Critic values `[b]` (no output nonlinearity) and rank scores `[b, A]`.
    pub fn forward(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<(Var, Var)> {
        let h = trunk(tape, p, &self.config, x)?;
        let c = dense(tape, h, p[6], p[7]);
        let b = tape.shape(c)[0];
        let c = tape.reshape(c, &[b]);
        let r = dense(tape, h, p[8], p[9]);
        Ok((c, r))
    }

    /// Rank scores for plain rows of charts.
    pub fn rank_scores(&self, charts: &[f64]) -> Result<Vec<f64>> {
        let len = self.config.sample_len();
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let x = tape.constant(charts.to_vec(), &[charts.len() / len.max(1), len]);
        let (_, r) = self.forward(&mut tape, &p, x)?;
        Ok(tape.value(r).to_vec())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub config: NetConfig,
    pub params: ParamSet,
}

impl Encoder {
    pub fn new(config: &NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::default();
        trunk_params(&mut p, config, &mut rng);
        let f = config.trunk_features();
        p.push_normal("head.w", &[f, config.latent_len()], f, 1.0, &mut rng);
        p.push_zeros("head.b", &[config.latent_len()]);
        Ok(Self { config: config.clone(), params: p })
    }

    /// Latents `[b, d + A]` laid out `[z | r]`; the `r` block passes through tanh.
    pub fn forward(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<Var> {
        let cfg = &self.config;
        let h = trunk(tape, p, cfg, x)?;
        let out = dense(tape, h, p[6], p[7]);
        let (d, a) = (cfg.latent_dim, cfg.attributes);
        let z = tape.slice_cols(out, 0, d);
        let r = tape.slice_cols(out, d, a);
        let r = tape.tanh(r);
        let z = tape.pad_cols(z, 0, d + a);
        let r = tape.pad_cols(r, d, d + a);
        Ok(tape.add(z, r))
    }

    pub fn encode(&self, charts: &[f64]) -> Result<Vec<f64>> {
        let len = self.config.sample_len();
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let x = tape.constant(charts.to_vec(), &[charts.len() / len.max(1), len]);
        let y = self.forward(&mut tape, &p, x)?;
        Ok(tape.value(y).to_vec())
    }
}
