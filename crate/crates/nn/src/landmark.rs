//! Landmark consistency as a differentiable projection.
//!
//! Per sample, chart `k` reads landmark values `c_kp` at its primary nodes and
//! the fit `s_k c_kp + t_k ~ v_p` is solved in least squares with chart 0
//! fixed at `(1, 0)`. Every orbit node of `(k, p)` is then overwritten by
//! `(v_p - t_k) / s_k`. The backward pass differentiates the normal
//! equations implicitly.
//!
//! The divisor is floored at [`SCALE_FLOOR`]: an untrained generator can put
//! a chart's landmarks almost on top of each other, and `1 / s_k` would then
//! blow up. Normalized real charts have scale ratios of order one, so the
//! floor never binds on them.

use chartforge_core::mesh::check_st_rigidity;
use chartforge_core::torus::ChartAtlas;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const CHANNELS: usize = 3;

/// Smallest chart scale used as a divisor; held constant when active.
pub const SCALE_FLOOR: f64 = 0.25;

/// Where each chart keeps its landmarks on the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkLayout {
    pub chart_count: usize,
    pub n: usize,
    pub landmark_count: usize,
    /// `groups[k][slot]` indexes the landmark list.
    pub groups: Vec<Vec<usize>>,
    /// Flat node index `i * n + j` read for `(k, slot)`.
    pub primary: Vec<Vec<usize>>,
    /// Flat node indices written for `(k, slot)`; contains the primary node.
    pub orbit: Vec<Vec<Vec<usize>>>,
}

impl LandmarkLayout {
    pub fn from_atlas(atlas: &ChartAtlas) -> Result<Self> {
        if !check_st_rigidity(&atlas.landmarks) {
            return Err(Error::Rank("landmark structure is not scale-translation rigid".into()));
        }
        let n = atlas.n;
        let flat = |[i, j]: [usize; 2]| i * n + j;
        let mut primary = Vec::new();
        let mut orbit = Vec::new();
        for chart in &atlas.charts {
            let mut cones: Vec<_> = chart.cones.iter().collect();
            cones.sort_by_key(|c| c.slot);
            primary.push(cones.iter().map(|c| flat(c.node)).collect());
            orbit.push(cones.iter().map(|c| c.orbit.iter().map(|&o| flat(o)).collect()).collect());
        }
        Ok(Self {
            chart_count: atlas.chart_count(),
            n,
            landmark_count: atlas.landmarks.landmarks.len(),
            groups: atlas.landmarks.groups.clone(),
            primary,
            orbit,
        })
    }

    pub fn sample_len(&self) -> usize {
        self.chart_count * CHANNELS * self.n * self.n
    }

    fn unknowns(&self) -> usize {
        4 * (self.chart_count - 1) + CHANNELS * self.landmark_count
    }

    fn at(&self, k: usize, d: usize, node: usize) -> usize {
        (k * CHANNELS + d) * self.n * self.n + node
    }

    fn scale_col(&self, k: usize) -> Option<usize> {
        (k > 0).then(|| 4 * (k - 1))
    }

    fn landmark_col(&self, p: usize) -> usize {
        4 * (self.chart_count - 1) + CHANNELS * p
    }
}

/// Per-sample state kept for the backward pass.
#[derive(Clone, Debug)]
pub struct LcSample {
    scale: Vec<f64>,
    shift: Vec<[f64; 3]>,
    consensus: Vec<[f64; 3]>,
    values: Vec<Vec<[f64; 3]>>,
    /// Inverse of the normal matrix.
    h_inv: DMatrix<f64>,
}

pub fn lc_forward(layout: &LandmarkLayout, x: &[f64]) -> Result<(Vec<f64>, Vec<LcSample>)> {
    let len = layout.sample_len();
    if x.len() % len != 0 {
        return Err(Error::Shape(format!("{} values are not a whole number of {len}-value samples", x.len())));
    }
    let mut y = x.to_vec();
    let mut cache = Vec::with_capacity(x.len() / len);
    for (xs, ys) in x.chunks(len).zip(y.chunks_mut(len)) {
        let sample = solve_sample(layout, xs)?;
        for k in 0..layout.chart_count {
            for (slot, &p) in layout.groups[k].iter().enumerate() {
                for d in 0..CHANNELS {
                    let value = (sample.consensus[p][d] - sample.shift[k][d]) / sample.scale[k].max(SCALE_FLOOR);
                    for &node in &layout.orbit[k][slot] {
                        ys[layout.at(k, d, node)] = value;
                    }
                }
            }
        }
        cache.push(sample);
    }
    Ok((y, cache))
}

fn solve_sample(layout: &LandmarkLayout, x: &[f64]) -> Result<LcSample> {
    let m = layout.unknowns();
    let mut h = DMatrix::<f64>::zeros(m, m);
    let mut rhs = DVector::<f64>::zeros(m);
    let mut used = vec![false; layout.landmark_count];
    let mut values = Vec::with_capacity(layout.chart_count);
    for k in 0..layout.chart_count {
        let mut vk = Vec::with_capacity(layout.groups[k].len());
        for (slot, &p) in layout.groups[k].iter().enumerate() {
            used[p] = true;
            let c: [f64; 3] = std::array::from_fn(|d| x[layout.at(k, d, layout.primary[k][slot])]);
            for d in 0..CHANNELS {
                // Row: s_k c + t_kd - v_pd = (k == 0 ? -c : 0).
                let mut row: Vec<(usize, f64)> = vec![(layout.landmark_col(p) + d, -1.0)];
                let b = match layout.scale_col(k) {
                    Some(col) => {
                        row.push((col, c[d]));
                        row.push((col + 1 + d, 1.0));
                        0.0
                    }
                    None => -c[d],
                };
                for &(i, a) in &row {
                    rhs[i] += a * b;
                    for &(j, bj) in &row {
                        h[(i, j)] += a * bj;
                    }
                }
            }
            vk.push(c);
        }
        values.push(vk);
    }
    for (p, &u) in used.iter().enumerate() {
        if !u {
            for d in 0..CHANNELS {
                let i = layout.landmark_col(p) + d;
                h[(i, i)] = 1.0;
            }
        }
    }
    let chol = h
        .cholesky()
        .ok_or_else(|| Error::Rank("landmark consistency normal equations are singular".into()))?;
    let theta = chol.solve(&rhs);
    let h_inv = chol.inverse();
    let mut scale = vec![1.0; layout.chart_count];
    let mut shift = vec![[0.0; 3]; layout.chart_count];
    for k in 1..layout.chart_count {
        let col = 4 * (k - 1);
        scale[k] = theta[col];
        shift[k] = [theta[col + 1], theta[col + 2], theta[col + 3]];
    }
    let consensus = (0..layout.landmark_count)
        .map(|p| std::array::from_fn(|d| theta[layout.landmark_col(p) + d]))
        .collect();
    Ok(LcSample { scale, shift, consensus, values, h_inv })
}

/// Vector-Jacobian product of [`lc_forward`] at the cached solution.
pub fn lc_backward(layout: &LandmarkLayout, cache: &[LcSample], gy: &[f64]) -> Vec<f64> {
    let len = layout.sample_len();
    let m = layout.unknowns();
    let mut gx = gy.to_vec();
    for (sample, gs) in cache.iter().zip(gx.chunks_mut(len)) {
        // Gradient reaching the solution through the overwritten nodes.
        let mut theta_bar = DVector::<f64>::zeros(m);
        for k in 0..layout.chart_count {
            let (s, t) = (sample.scale[k].max(SCALE_FLOOR), sample.shift[k]);
            let floored = sample.scale[k] < SCALE_FLOOR;
            for (slot, &p) in layout.groups[k].iter().enumerate() {
                for d in 0..CHANNELS {
                    let mut g = 0.0;
                    for &node in &layout.orbit[k][slot] {
                        let i = layout.at(k, d, node);
                        g += gs[i];
                        gs[i] = 0.0;
                    }
                    let out = (sample.consensus[p][d] - t[d]) / s;
                    theta_bar[layout.landmark_col(p) + d] += g / s;
                    if let Some(col) = layout.scale_col(k) {
                        theta_bar[col + 1 + d] -= g / s;
                        if !floored {
                            theta_bar[col] -= g * out / s;
                        }
                    }
                }
            }
        }
        let lambda = &sample.h_inv * theta_bar;
        for k in 0..layout.chart_count {
            let s = sample.scale[k];
            let (ls, lt) = match layout.scale_col(k) {
                Some(col) => (lambda[col], [lambda[col + 1], lambda[col + 2], lambda[col + 3]]),
                None => (0.0, [0.0; 3]),
            };
            for (slot, &p) in layout.groups[k].iter().enumerate() {
                let c = sample.values[k][slot];
                for d in 0..CHANNELS {
                    let lv = lambda[layout.landmark_col(p) + d];
                    let r = s * c[d] + sample.shift[k][d] - sample.consensus[p][d];
                    gs[layout.at(k, d, layout.primary[k][slot])] -= s * (ls * c[d] + lt[d] - lv) + r * ls;
                }
            }
        }
    }
    gx
}
