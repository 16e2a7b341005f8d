//! Ranking, Wasserstein and reconstruction losses. Batches are `[b, len]`
//! rows; latent rows are `[z | r]`. Squared distances average over entries.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::nets::{Critic, Encoder, Generator, GridGeometry};
use crate::tape::{softplus, Tape, Var};

/// Pairwise logistic ranking loss with label `y = 1` when the first item
/// should score higher.
pub fn rank_loss(s1: f64, s2: f64, y: u8) -> f64 {
    let d = s1 - s2;
    if y == 1 {
        softplus(-d)
    } else {
        softplus(d)
    }
}

pub fn multi_rank_loss(s1: &[f64], s2: &[f64], y: &[u8]) -> Result<f64> {
    if s1.len() != s2.len() || s1.len() != y.len() {
        return Err(Error::Shape(format!("rank scores {} / {} with {} labels", s1.len(), s2.len(), y.len())));
    }
    Ok(s1.iter().zip(s2).zip(y).map(|((&a, &b), &l)| rank_loss(a, b, l)).sum())
}

/// Mean over pairs of [`multi_rank_loss`], on `[p, A]` score tensors.
pub fn rank_loss_var(tape: &mut Tape, s1: Var, s2: Var, labels: &[u8]) -> Result<Var> {
    if tape.shape(s1) != tape.shape(s2) || tape.value(s1).len() != labels.len() {
        return Err(Error::Shape(format!("{} rank labels for scores of shape {:?}", labels.len(), tape.shape(s1))));
    }
    let pairs = tape.shape(s1)[0].max(1);
    let d = tape.sub(s1, s2);
    let sign: Vec<f64> = labels.iter().map(|&y| if y == 1 { -1.0 } else { 1.0 }).collect();
    let d = tape.mul_const(d, Rc::new(sign));
    let l = tape.softplus(d);
    let s = tape.sum(l);
    Ok(tape.scale(s, 1.0 / pairs as f64))
}

pub trait CriticModel {
    /// Critic values `[b]` and rank scores `[b, A]`.
    fn evaluate(&self, tape: &mut Tape, x: Var) -> Result<(Var, Var)>;
}

pub trait GeneratorModel {
    fn evaluate(&self, tape: &mut Tape, latent: Var) -> Result<Var>;
}

pub trait EncoderModel {
    fn evaluate(&self, tape: &mut Tape, x: Var) -> Result<Var>;
}

/// A critic whose parameters are on a tape.
pub struct BoundCritic<'a> {
    pub critic: &'a Critic,
    pub params: Vec<Var>,
}

impl<'a> BoundCritic<'a> {
    pub fn bind(critic: &'a Critic, tape: &mut Tape, trainable: bool) -> Self {
        Self { critic, params: critic.params.bind(tape, trainable) }
    }
}

impl CriticModel for BoundCritic<'_> {
    fn evaluate(&self, tape: &mut Tape, x: Var) -> Result<(Var, Var)> {
        self.critic.forward(tape, &self.params, x)
    }
}

pub struct BoundGenerator<'a> {
    pub generator: &'a Generator,
    pub params: Vec<Var>,
    pub geometry: &'a GridGeometry,
    pub landmark_consistency: bool,
}

impl<'a> BoundGenerator<'a> {
    pub fn bind(generator: &'a Generator, geometry: &'a GridGeometry, lc: bool, tape: &mut Tape, trainable: bool) -> Self {
        Self { generator, params: generator.params.bind(tape, trainable), geometry, landmark_consistency: lc }
    }
}

impl GeneratorModel for BoundGenerator<'_> {
    fn evaluate(&self, tape: &mut Tape, latent: Var) -> Result<Var> {
        let y = self.generator.forward(tape, &self.params, latent, self.geometry, self.landmark_consistency)?;
        let b = tape.shape(y)[0];
        Ok(tape.reshape(y, &[b, self.generator.config.sample_len()]))
    }
}

pub struct BoundEncoder<'a> {
    pub encoder: &'a Encoder,
    pub params: Vec<Var>,
}

impl<'a> BoundEncoder<'a> {
    pub fn bind(encoder: &'a Encoder, tape: &mut Tape, trainable: bool) -> Self {
        Self { encoder, params: encoder.params.bind(tape, trainable) }
    }
}

impl EncoderModel for BoundEncoder<'_> {
    fn evaluate(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        self.encoder.forward(tape, &self.params, x)
    }
}

fn rows(tape: &mut Tape, data: &[f64], len: usize) -> Result<Var> {
    if len == 0 || data.len() % len != 0 {
        return Err(Error::Shape(format!("{} values are not rows of {len}", data.len())));
    }
    Ok(tape.constant(data.to_vec(), &[data.len() / len, len]))
}

/// `lambda * mean_b (|grad_x D(x_b)| - 1)^2` at `x = alpha real + (1 - alpha) fake`,
/// one `alpha` per row.
pub fn gradient_penalty(
    tape: &mut Tape,
    critic: &impl CriticModel,
    real: &[f64],
    fake: &[f64],
    len: usize,
    alphas: &[f64],
    lambda: f64,
) -> Result<Var> {
    if real.len() != fake.len() || real.len() != alphas.len() * len {
        return Err(Error::Shape("gradient penalty batches differ in shape".into()));
    }
    let mixed: Vec<f64> = real
        .chunks(len)
        .zip(fake.chunks(len))
        .zip(alphas)
        .flat_map(|((r, f), &a)| r.iter().zip(f).map(move |(x, y)| a * x + (1.0 - a) * y))
        .collect();
    let x = tape.leaf(mixed, &[alphas.len(), len], true);
    let (c, _) = critic.evaluate(tape, x)?;
    let s = tape.sum(c);
    let g = tape.grad(s, &[x], true)[0];
    let sq = tape.square(g);
    let norm = tape.sample_sum(sq);
    let norm = tape.offset(norm, 1e-16);
    let norm = tape.sqrt(norm);
    let dev = tape.offset(norm, -1.0);
    let dev = tape.square(dev);
    let m = tape.mean(dev);
    Ok(tape.scale(m, lambda))
}

/// Rows of paired inputs with per-pair, per-attribute labels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairBatch {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub labels: Vec<u8>,
}

pub struct LossTerms {
    pub total: Var,
    /// Wasserstein (critic) or adversarial (generator) term.
    pub adversarial: f64,
    pub gradient_penalty: f64,
    pub rank: f64,
}

/// `mean D(fake) - mean D(real) + GP + mean pair rank loss` over real pairs.
#[allow(clippy::too_many_arguments)]
pub fn critic_loss(
    tape: &mut Tape,
    critic: &impl CriticModel,
    real: &[f64],
    fake: &[f64],
    len: usize,
    real_pairs: &PairBatch,
    alphas: &[f64],
    lambda: f64,
) -> Result<LossTerms> {
    let b = real.len() / len.max(1);
    if real_pairs.first.len() != real_pairs.second.len() || real_pairs.first.len() != (b / 2) * len {
        return Err(Error::Shape(format!("critic step with batch {b} needs {} real pairs", b / 2)));
    }
    let xr = rows(tape, real, len)?;
    let xf = rows(tape, fake, len)?;
    let (dr, _) = critic.evaluate(tape, xr)?;
    let (df, _) = critic.evaluate(tape, xf)?;
    let mr = tape.mean(dr);
    let mf = tape.mean(df);
    let w = tape.sub(mf, mr);
    let gp = gradient_penalty(tape, critic, real, fake, len, alphas, lambda)?;
    let p1 = rows(tape, &real_pairs.first, len)?;
    let p2 = rows(tape, &real_pairs.second, len)?;
    let (_, s1) = critic.evaluate(tape, p1)?;
    let (_, s2) = critic.evaluate(tape, p2)?;
    let rank = rank_loss_var(tape, s1, s2, &real_pairs.labels)?;
    let total = tape.add(w, gp);
    let total = tape.add(total, rank);
    Ok(LossTerms {
        total,
        adversarial: tape.scalar(w),
        gradient_penalty: tape.scalar(gp),
        rank: tape.scalar(rank),
    })
}

/// Per-attribute labels `[r1_j > r2_j]` for latent pair rows.
pub fn latent_labels(first: &[f64], second: &[f64], latent_dim: usize, attributes: usize) -> Vec<u8> {
    let len = latent_dim + attributes;
    first
        .chunks(len)
        .zip(second.chunks(len))
        .flat_map(|(a, b)| (latent_dim..len).map(move |j| u8::from(a[j] > b[j])))
        .collect()
}

/// `-mean D(G(latents)) + nu * mean pair rank loss` over generated pairs
/// labelled by their latent order.
#[allow(clippy::too_many_arguments)]
pub fn generator_loss(
    tape: &mut Tape,
    generator: &impl GeneratorModel,
    critic: &impl CriticModel,
    latents: &[f64],
    first: &[f64],
    second: &[f64],
    latent_dim: usize,
    attributes: usize,
    nu: f64,
) -> Result<LossTerms> {
    let len = latent_dim + attributes;
    let z = rows(tape, latents, len)?;
    let x = generator.evaluate(tape, z)?;
    let (d, _) = critic.evaluate(tape, x)?;
    let m = tape.mean(d);
    let adv = tape.neg(m);
    let labels = latent_labels(first, second, latent_dim, attributes);
    let z1 = rows(tape, first, len)?;
    let z2 = rows(tape, second, len)?;
    let x1 = generator.evaluate(tape, z1)?;
    let x2 = generator.evaluate(tape, z2)?;
    let (_, s1) = critic.evaluate(tape, x1)?;
    let (_, s2) = critic.evaluate(tape, x2)?;
    let rank = rank_loss_var(tape, s1, s2, &labels)?;
    let weighted = tape.scale(rank, nu);
    let total = tape.add(adv, weighted);
    Ok(LossTerms { total, adversarial: tape.scalar(adv), gradient_penalty: 0.0, rank: tape.scalar(rank) })
}

/// `mean (G(E(x)) - x)^2` over all entries.
pub fn encoder_loss(
    tape: &mut Tape,
    encoder: &impl EncoderModel,
    generator: &impl GeneratorModel,
    real: &[f64],
    len: usize,
) -> Result<Var> {
    let x = rows(tape, real, len)?;
    let z = encoder.evaluate(tape, x)?;
    let y = generator.evaluate(tape, z)?;
    let d = tape.sub(y, x);
    let sq = tape.square(d);
    Ok(tape.mean(sq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn rank_loss_reference_values() {
        assert!((rank_loss(0.3, 0.3, 1) - LN2).abs() < 1e-12);
        assert!((rank_loss(-2.0, -2.0, 0) - LN2).abs() < 1e-12);
        assert!((rank_loss(3f64.ln(), 0.0, 1) - (4.0f64 / 3.0).ln()).abs() < 1e-12);
        assert!((rank_loss(50.0, 0.0, 0) - 50.0).abs() < 1e-12);
        for gap in [-100.0, 100.0] {
            assert!(rank_loss(gap, 0.0, 0).is_finite() && rank_loss(gap, 0.0, 1).is_finite());
        }
    }

    #[test]
    fn rank_loss_is_antisymmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let (a, b) = (rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0));
            assert_eq!(rank_loss(a, b, 1), rank_loss(b, a, 0));
        }
    }

    #[test]
    fn multi_rank_loss_decomposes() {
        assert_eq!(multi_rank_loss(&[0.7], &[-0.1], &[1]).unwrap(), rank_loss(0.7, -0.1, 1));
        assert!((multi_rank_loss(&[1.0; 3], &[1.0; 3], &[0, 1, 0]).unwrap() - 3.0 * LN2).abs() < 1e-12);
        let (a, b, y) = ([0.2, -1.3, 4.0], [1.1, 0.5, -2.0], [1, 0, 1]);
        let sum: f64 = (0..3).map(|j| rank_loss(a[j], b[j], y[j])).sum();
        assert!((multi_rank_loss(&a, &b, &y).unwrap() - sum).abs() < 1e-12);
        assert_eq!(multi_rank_loss(&a, &b[..2], &y).unwrap_err().code(), "ShapeError");
    }

    /// `D(x) = x . w + c`; rank scores are fixed linear functions too.
    struct Linear {
        w: Vec<f64>,
        c: f64,
        rank: Vec<f64>,
    }

    impl CriticModel for Linear {
        fn evaluate(&self, tape: &mut Tape, x: Var) -> Result<(Var, Var)> {
            let len = self.w.len();
            let w = tape.constant(self.w.clone(), &[len, 1]);
            let y = tape.matmul(x, w, false, false);
            let b = tape.shape(y)[0];
            let y = tape.reshape(y, &[b]);
            let y = tape.offset(y, self.c);
            let a = self.rank.len() / len;
            let r = tape.constant(self.rank.clone(), &[len, a]);
            let s = tape.matmul(x, r, false, false);
            Ok((y, s))
        }
    }

    fn random(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn penalty(critic: &Linear, len: usize, rng: &mut ChaCha8Rng) -> f64 {
        let mut tape = Tape::new();
        let (real, fake) = (random(4 * len, rng), random(4 * len, rng));
        let alphas = random(4, rng);
        let gp = gradient_penalty(&mut tape, critic, &real, &fake, len, &alphas, 10.0).unwrap();
        tape.scalar(gp)
    }

    #[test]
    fn gradient_penalty_analytic_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let len = 12;
        let mut w = random(len, &mut rng);
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        w.iter_mut().for_each(|x| *x /= norm);
        let unit = Linear { w, c: 0.4, rank: vec![0.0; len] };
        assert!(penalty(&unit, len, &mut rng) < 1e-12);
        let zero = Linear { w: vec![0.0; len], c: 0.0, rank: vec![0.0; len] };
        assert!((penalty(&zero, len, &mut rng) - 10.0).abs() < 1e-6);
        let two = Linear { w: vec![2.0 / (len as f64).sqrt(); len], c: 0.0, rank: vec![0.0; len] };
        assert!((penalty(&two, len, &mut rng) - 10.0).abs() < 1e-9);
    }

    fn critic_total(critic: &Linear, real: &[f64], fake: &[f64], pairs: &PairBatch, lambda: f64) -> f64 {
        let mut tape = Tape::new();
        let alphas = vec![0.5; real.len() / critic.w.len()];
        let terms = critic_loss(&mut tape, critic, real, fake, critic.w.len(), pairs, &alphas, lambda).unwrap();
        tape.scalar(terms.total)
    }

    #[test]
    fn critic_loss_reduces_to_ranking_when_critic_vanishes() {
        let len = 6;
        let zero = Linear { w: vec![0.0; len], c: 0.0, rank: vec![0.0; len] };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (real, fake) = (random(4 * len, &mut rng), random(4 * len, &mut rng));
        let pairs = PairBatch { first: random(2 * len, &mut rng), second: random(2 * len, &mut rng), labels: vec![1, 0] };
        assert!((critic_total(&zero, &real, &fake, &pairs, 0.0) - LN2).abs() < 1e-12);
        // A ranker reading entry 0 with a huge gain and pairs ordered by it.
        let mut rank = vec![0.0; len];
        rank[0] = 1e4;
        let mut pairs = pairs;
        pairs.first.iter_mut().step_by(len).for_each(|x| *x = 1.0);
        pairs.second.iter_mut().step_by(len).for_each(|x| *x = -1.0);
        pairs.labels = vec![1, 1];
        let perfect = Linear { w: vec![0.0; len], c: 0.0, rank };
        assert!(critic_total(&perfect, &real, &fake, &pairs, 0.0) < 1e-12);
    }

    #[test]
    fn critic_loss_matches_term_by_term_assembly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let len = 5;
        let critic = Linear { w: random(len, &mut rng), c: 0.3, rank: random(2 * len, &mut rng) };
        let (real, fake) = (random(4 * len, &mut rng), random(4 * len, &mut rng));
        let pairs = PairBatch { first: random(2 * len, &mut rng), second: random(2 * len, &mut rng), labels: vec![1, 0, 0, 1] };
        let dot = |x: &[f64], w: &[f64]| x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
        let d = |x: &[f64]| dot(x, &critic.w) + critic.c;
        let mean = |v: &[f64]| v.chunks(len).map(d).sum::<f64>() / (v.len() / len) as f64;
        let wass = mean(&fake) - mean(&real);
        let gnorm = dot(&critic.w, &critic.w).sqrt();
        let gp = 10.0 * (gnorm - 1.0).powi(2);
        let score = |x: &[f64], a: usize| (0..len).map(|i| x[i] * critic.rank[i * 2 + a]).sum::<f64>();
        let mut rank = 0.0;
        for p in 0..2 {
            let (x1, x2) = (&pairs.first[p * len..(p + 1) * len], &pairs.second[p * len..(p + 1) * len]);
            for a in 0..2 {
                rank += rank_loss(score(x1, a), score(x2, a), pairs.labels[2 * p + a]);
            }
        }
        rank /= 2.0;
        let total = critic_total(&critic, &real, &fake, &pairs, 10.0);
        assert!((total - (wass + gp + rank)).abs() < 1e-6, "{total} vs {}", wass + gp + rank);
        // A constant added to every critic output leaves the loss unchanged.
        let shifted = Linear { c: critic.c + 5.0, ..critic };
        assert!((critic_total(&shifted, &real, &fake, &pairs, 10.0) - total).abs() < 1e-9);
    }

    #[test]
    fn critic_loss_checks_pair_count() {
        let len = 3;
        let zero = Linear { w: vec![0.0; len], c: 0.0, rank: vec![0.0; len] };
        let mut tape = Tape::new();
        let pairs = PairBatch { first: vec![0.0; len], second: vec![0.0; len], labels: vec![0] };
        let r = critic_loss(&mut tape, &zero, &[0.0; 12], &[0.0; 12], len, &pairs, &[0.5; 4], 1.0);
        assert_eq!(r.err().unwrap().code(), "ShapeError");
    }

    /// `G([z | r]) = M [z | r]`, a fixed linear map.
    struct LinearG {
        m: Vec<f64>,
        latent: usize,
        out: usize,
    }

    impl GeneratorModel for LinearG {
        fn evaluate(&self, tape: &mut Tape, latent: Var) -> Result<Var> {
            let m = tape.constant(self.m.clone(), &[self.latent, self.out]);
            Ok(tape.matmul(latent, m, false, false))
        }
    }

    #[test]
    fn generator_labels_follow_latent_order() {
        let labels = latent_labels(&[0.0, 0.9], &[0.0, -0.9], 1, 1);
        assert_eq!(labels, vec![1]);
    }

    #[test]
    fn generator_loss_matches_two_term_assembly() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (d, a, len) = (3, 2, 4);
        let g = LinearG { m: random((d + a) * len, &mut rng), latent: d + a, out: len };
        let critic = Linear { w: random(len, &mut rng), c: -0.2, rank: random(len * a, &mut rng) };
        let latents = random(4 * (d + a), &mut rng);
        let (first, second) = (random(2 * (d + a), &mut rng), random(2 * (d + a), &mut rng));
        let m = &g.m;
        let gen = |z: &[f64]| -> Vec<f64> {
            z.chunks(d + a)
                .flat_map(|row| (0..len).map(move |o| (0..d + a).map(|i| row[i] * m[i * len + o]).sum::<f64>()))
                .collect()
        };
        let dval = |x: &[f64]| x.iter().zip(&critic.w).map(|(p, q)| p * q).sum::<f64>() + critic.c;
        let adv = -gen(&latents).chunks(len).map(dval).sum::<f64>() / 4.0;
        let score = |x: &[f64], j: usize| (0..len).map(|i| x[i] * critic.rank[i * a + j]).sum::<f64>();
        let (x1, x2) = (gen(&first), gen(&second));
        let mut rank = 0.0;
        for p in 0..2 {
            for j in 0..a {
                let y = u8::from(first[p * (d + a) + d + j] > second[p * (d + a) + d + j]);
                rank += rank_loss(score(&x1[p * len..], j), score(&x2[p * len..], j), y);
            }
        }
        rank /= 2.0;
        for nu in [0.0, 1.0, 2.5] {
            let mut tape = Tape::new();
            let t = generator_loss(&mut tape, &g, &critic, &latents, &first, &second, d, a, nu).unwrap();
            assert!((tape.scalar(t.total) - (adv + nu * rank)).abs() < 1e-6);
        }
    }

    struct Identity;

    impl EncoderModel for Identity {
        fn evaluate(&self, _: &mut Tape, x: Var) -> Result<Var> {
            Ok(x)
        }
    }

    #[test]
    fn encoder_loss_conventions() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let len = 6;
        let mut x = random(4 * len, &mut rng);
        let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
        x.iter_mut().for_each(|v| *v /= rms);
        let zero = LinearG { m: vec![0.0; len * len], latent: len, out: len };
        let mut tape = Tape::new();
        let l = encoder_loss(&mut tape, &Identity, &zero, &x, len).unwrap();
        assert!((tape.scalar(l) - 1.0).abs() < 1e-12);
        let mut eye = vec![0.0; len * len];
        (0..len).for_each(|i| eye[i * len + i] = 1.0);
        let id = LinearG { m: eye, latent: len, out: len };
        let l = encoder_loss(&mut tape, &Identity, &id, &x, len).unwrap();
        assert_eq!(tape.scalar(l), 0.0);
        // Batch order does not matter.
        let mut perm = x.clone();
        perm.rotate_left(2 * len);
        let a = encoder_loss(&mut tape, &Identity, &zero, &perm, len).unwrap();
        assert!((tape.scalar(a) - 1.0).abs() < 1e-12);
    }
}
