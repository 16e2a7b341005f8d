use std::sync::Arc;

use chartforge_core::chartset::encode_mesh;
use chartforge_core::mesh::{fixtures, LandmarkStructure, SurfaceType};
use chartforge_core::synth::{make_shape, ShapeParams};
use chartforge_core::torus::{ChartAtlas, WeightScheme};
use chartforge_nn::landmark::LandmarkLayout;
use chartforge_nn::losses::{critic_loss, encoder_loss, generator_loss, BoundCritic, BoundEncoder, BoundGenerator, PairBatch};
use chartforge_nn::params::ParamSet;
use chartforge_nn::{Critic, Encoder, Generator, GridGeometry, NetConfig, Tape, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn two_chart_atlas(n: usize) -> ChartAtlas {
    let template = fixtures::icosphere(2);
    let axes = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [-1.0, 0.0, 0.0]];
    let landmarks = LandmarkStructure {
        surface_type: SurfaceType::SphereLike,
        landmarks: axes.iter().map(|&a| fixtures::nearest_vertex(&template, a)).collect(),
        groups: vec![vec![0, 1, 2], vec![1, 3, 2]],
    };
    ChartAtlas::build(&template, &landmarks, n, WeightScheme::Uniform).unwrap()
}

fn random(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    diff / scale.max(1e-300)
}

fn landmark_forward(layout: &Arc<LandmarkLayout>, x: &[f64]) -> Vec<f64> {
    let mut tape = Tape::new();
    let v = tape.constant(x.to_vec(), &[x.len() / layout.sample_len(), layout.sample_len()]);
    let y = tape.landmark(v, layout.clone()).unwrap();
    tape.value(y).to_vec()
}

#[test]
fn landmark_consistency_fixes_consistent_tensors() {
    let atlas = two_chart_atlas(8);
    let layout = Arc::new(LandmarkLayout::from_atlas(&atlas).unwrap());
    let mesh = make_shape(&ShapeParams { bulge: 0.6, tilt: 0.3, ..Default::default() }, 2);
    let (norm, _) = encode_mesh(&atlas, mesh.vertices()).unwrap().normalize().unwrap();
    let out = landmark_forward(&layout, &norm.data);
    let worst = out.iter().zip(&norm.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-9, "fixed point moved by {worst}");
}

#[test]
fn landmark_consistency_is_idempotent_and_local() {
    let atlas = two_chart_atlas(8);
    let layout = Arc::new(LandmarkLayout::from_atlas(&atlas).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(3 * layout.sample_len(), &mut rng);
    let once = landmark_forward(&layout, &x);
    let twice = landmark_forward(&layout, &once);
    assert!(once.iter().zip(&twice).all(|(a, b)| (a - b).abs() < 1e-6));
    let touched: std::collections::HashSet<usize> = (0..layout.chart_count)
        .flat_map(|k| {
            let layout = &layout;
            layout.orbit[k].iter().flatten().flat_map(move |&node| (0..3).map(move |d| (3 * k + d) * 64 + node))
        })
        .collect();
    for s in 0..3 {
        for i in 0..layout.sample_len() {
            if !touched.contains(&i) {
                assert_eq!(once[s * layout.sample_len() + i], x[s * layout.sample_len() + i]);
            }
        }
    }
}

fn landmark_gradient_error(layout: &Arc<LandmarkLayout>, x0: &[f64], rng: &mut ChaCha8Rng) -> f64 {
    let len = layout.sample_len();
    let rows = x0.len() / len;
    let weights = random(x0.len(), rng);
    let objective = |x: &[f64]| -> f64 { landmark_forward(layout, x).iter().zip(&weights).map(|(a, b)| a * b).sum() };
    let mut tape = Tape::new();
    let x = tape.leaf(x0.to_vec(), &[rows, len], true);
    let y = tape.landmark(x, layout.clone()).unwrap();
    let w = tape.constant(weights.clone(), &[rows, len]);
    let p = tape.mul(y, w);
    let s = tape.sum(p);
    let g = tape.grad(s, &[x], false)[0];
    let analytic = tape.value(g).to_vec();
    let h = 1e-6;
    let fd: Vec<f64> = (0..x0.len())
        .map(|i| {
            let mut a = x0.to_vec();
            a[i] += h;
            let mut b = x0.to_vec();
            b[i] -= h;
            (objective(&a) - objective(&b)) / (2.0 * h)
        })
        .collect();
    relative_error(&fd, &analytic)
}

#[test]
fn landmark_consistency_gradient_matches_differences() {
    let atlas = two_chart_atlas(8);
    let layout = Arc::new(LandmarkLayout::from_atlas(&atlas).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x0 = random(2 * layout.sample_len(), &mut rng);
    let err = landmark_gradient_error(&layout, &x0, &mut rng);
    assert!(err < 1e-5, "relative error {err}");
}

#[test]
fn landmark_scale_floor_bounds_outputs_and_keeps_gradients() {
    let atlas = two_chart_atlas(8);
    let layout = Arc::new(LandmarkLayout::from_atlas(&atlas).unwrap());
    let mesh = make_shape(&ShapeParams { bulge: 0.4, ..Default::default() }, 2);
    let (norm, _) = encode_mesh(&atlas, mesh.vertices()).unwrap().normalize().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    // Chart 1 inflated tenfold, so its fitted scale is about 0.1.
    let chart = 3 * 64;
    let x0: Vec<f64> = norm
        .data
        .iter()
        .enumerate()
        .map(|(i, &v)| if i >= chart { 10.0 * v + 0.01 * rng.random_range(-1.0..1.0) } else { v })
        .collect();
    let out = landmark_forward(&layout, &x0);
    let peak = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    assert!(peak(&out[chart..]) <= peak(&x0[chart..]) * 1.01, "{} vs {}", peak(&out[chart..]), peak(&x0[chart..]));
    let err = landmark_gradient_error(&layout, &x0, &mut rng);
    assert!(err < 1e-5, "relative error {err}");
}

#[test]
fn disjoint_charts_are_rejected() {
    let template = fixtures::icosphere(2);
    let pts = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]];
    let landmarks = LandmarkStructure {
        surface_type: SurfaceType::SphereLike,
        landmarks: pts.iter().map(|&a| fixtures::nearest_vertex(&template, a)).collect(),
        groups: vec![vec![0, 1, 2], vec![3, 4, 5]],
    };
    let err = ChartAtlas::build(&template, &landmarks, 8, WeightScheme::Uniform).unwrap_err();
    assert_eq!(err.code(), "RankError");
}

#[test]
fn projection_output_is_orbit_invariant() {
    let atlas = two_chart_atlas(8);
    let geom = GridGeometry::from_atlas(&atlas).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut tape = Tape::new();
    let x = tape.constant(random(2 * 6 * 64, &mut rng), &[2, 6, 8, 8]);
    let y = tape.grid_average(x, geom.group.clone());
    let out = tape.value(y).to_vec();
    assert_eq!(geom.group.len(), 4);
    for perm in geom.group.iter() {
        for plane in out.chunks(64) {
            for (k, &p) in perm.iter().enumerate() {
                assert!((plane[k] - plane[p]).abs() < 1e-7);
            }
        }
    }
    let again = tape.grid_average(y, geom.group.clone());
    assert!(tape.value(again).iter().zip(&out).all(|(a, b)| (a - b).abs() < 1e-12));
    let trivial = tape.grid_average(x, GridGeometry::plain(8, 2).group);
    assert_eq!(tape.value(trivial), tape.value(x));
}

#[test]
fn zero_mean_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut tape = Tape::new();
    let x = tape.constant(random(3 * 16, &mut rng), &[1, 3, 4, 4]);
    let y = tape.zero_mean(x);
    for plane in tape.value(y).chunks(16) {
        assert!(plane.iter().sum::<f64>().abs() / 16.0 < 1e-6);
    }
    let z = tape.zero_mean(y);
    assert!(tape.value(z).iter().zip(tape.value(y)).all(|(a, b)| (a - b).abs() < 1e-12));
    let c = tape.constant(vec![2.5; 16], &[1, 1, 4, 4]);
    let zc = tape.zero_mean(c);
    assert!(tape.value(zc).iter().all(|&v| v == 0.0));
}

#[test]
fn cyclic_conv_is_shift_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 8;
    let x0 = random(2 * n * n, &mut rng);
    let w0 = random(3 * 2 * 9, &mut rng);
    let (a, b) = (3, 5);
    let shifted: Vec<f64> = (0..2 * n * n)
        .map(|idx| {
            let (c, i, j) = (idx / (n * n), (idx / n) % n, idx % n);
            x0[c * n * n + ((i + n - a) % n) * n + (j + n - b) % n]
        })
        .collect();
    let mut tape = Tape::new();
    let w = tape.constant(w0, &[3, 2, 3, 3]);
    let x = tape.constant(x0, &[1, 2, n, n]);
    let xs = tape.constant(shifted, &[1, 2, n, n]);
    let y = tape.conv(x, w, 1);
    let ys = tape.conv(xs, w, 1);
    let (y, ys) = (tape.value(y), tape.value(ys));
    for c in 0..3 {
        for i in 0..n {
            for j in 0..n {
                assert_eq!(ys[c * n * n + ((i + a) % n) * n + (j + b) % n], y[c * n * n + i * n + j]);
            }
        }
    }
    let mut eye = vec![0.0; 4];
    eye[0] = 1.0;
    eye[3] = 1.0;
    let id = tape.constant(eye, &[2, 2, 1, 1]);
    let yi = tape.conv(x, id, 1);
    assert_eq!(tape.value(yi), tape.value(x));
}

struct Tiny {
    cfg: NetConfig,
    geom: GridGeometry,
    g: Generator,
    d: Critic,
    e: Encoder,
    real: Vec<f64>,
    fake: Vec<f64>,
    pairs: PairBatch,
    alphas: Vec<f64>,
    latents: Vec<f64>,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl Tiny {
    fn new() -> Self {
        let atlas = two_chart_atlas(8);
        let geom = GridGeometry::from_atlas(&atlas).unwrap();
        let cfg = NetConfig { n: 8, charts: 2, latent_dim: 3, attributes: 2, gen_widths: [3, 3, 2], critic_widths: [2, 3, 3], kernel: 3 };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let len = cfg.sample_len();
        let l = cfg.latent_len();
        let mut g = Generator::new(&cfg, 1).unwrap();
        // Nonzero biases so every parameter gets exercised.
        for p in &mut g.params.params {
            if p.name.ends_with(".b") {
                p.data = random(p.data.len(), &mut rng).iter().map(|v| 0.1 * v).collect();
            }
        }
        Self {
            real: random(4 * len, &mut rng),
            fake: random(4 * len, &mut rng),
            pairs: PairBatch { first: random(2 * len, &mut rng), second: random(2 * len, &mut rng), labels: vec![1, 0, 0, 1] },
            alphas: (0..4).map(|_| rng.random_range(0.0..1.0)).collect(),
            latents: random(4 * l, &mut rng),
            first: random(2 * l, &mut rng),
            second: random(2 * l, &mut rng),
            d: Critic::new(&cfg, 2).unwrap(),
            e: Encoder::new(&cfg, 3).unwrap(),
            g,
            cfg,
            geom,
        }
    }

    fn critic(&self, tape: &mut Tape, d: &Critic, trainable: bool) -> (Var, Vec<Var>) {
        let bound = BoundCritic::bind(d, tape, trainable);
        let t = critic_loss(tape, &bound, &self.real, &self.fake, self.cfg.sample_len(), &self.pairs, &self.alphas, 10.0).unwrap();
        (t.total, bound.params)
    }

    fn generator(&self, tape: &mut Tape, g: &Generator, trainable: bool) -> (Var, Vec<Var>) {
        let bg = BoundGenerator::bind(g, &self.geom, true, tape, trainable);
        let bd = BoundCritic::bind(&self.d, tape, false);
        let (d, a) = (self.cfg.latent_dim, self.cfg.attributes);
        let t = generator_loss(tape, &bg, &bd, &self.latents, &self.first, &self.second, d, a, 1.0).unwrap();
        (t.total, bg.params)
    }

    fn encoder(&self, tape: &mut Tape, e: &Encoder, trainable: bool) -> (Var, Vec<Var>) {
        let be = BoundEncoder::bind(e, tape, trainable);
        let bg = BoundGenerator::bind(&self.g, &self.geom, true, tape, false);
        let l = encoder_loss(tape, &be, &bg, &self.real, self.cfg.sample_len()).unwrap();
        (l, be.params)
    }
}

/// Analytic gradient of `loss` over every parameter of `model` against
/// central differences.
fn check_model<M: Clone>(
    model: &M,
    params: impl Fn(&mut M) -> &mut ParamSet,
    loss: impl Fn(&mut Tape, &M, bool) -> (Var, Vec<Var>),
) -> f64 {
    let mut tape = Tape::new();
    let (l, vars) = loss(&mut tape, model, true);
    let grads = tape.grad(l, &vars, false);
    let analytic: Vec<f64> = grads.iter().flat_map(|g| tape.value(*g).to_vec()).collect();
    let mut fd = Vec::with_capacity(analytic.len());
    let mut work = model.clone();
    let h = 1e-6;
    let eval = |m: &M| {
        let mut t = Tape::new();
        let (l, _) = loss(&mut t, m, false);
        t.scalar(l)
    };
    let count = params(&mut work).params.len();
    for k in 0..count {
        for i in 0..params(&mut work).params[k].data.len() {
            let orig = params(&mut work).params[k].data[i];
            params(&mut work).params[k].data[i] = orig + h;
            let up = eval(&work);
            params(&mut work).params[k].data[i] = orig - h;
            let down = eval(&work);
            params(&mut work).params[k].data[i] = orig;
            fd.push((up - down) / (2.0 * h));
        }
    }
    relative_error(&fd, &analytic)
}

#[test]
fn critic_loss_gradient_matches_differences() {
    let t = Tiny::new();
    let err = check_model(&t.d, |d: &mut Critic| &mut d.params, |tape, d, tr| t.critic(tape, d, tr));
    assert!(err < 1e-4, "critic relative error {err}");
}

#[test]
fn generator_loss_gradient_matches_differences_through_landmark_layer() {
    let t = Tiny::new();
    let err = check_model(&t.g, |g: &mut Generator| &mut g.params, |tape, g, tr| t.generator(tape, g, tr));
    assert!(err < 1e-4, "generator relative error {err}");
}

#[test]
fn encoder_loss_gradient_matches_differences() {
    let t = Tiny::new();
    let err = check_model(&t.e, |e: &mut Encoder| &mut e.params, |tape, e, tr| t.encoder(tape, e, tr));
    assert!(err < 1e-4, "encoder relative error {err}");
}
