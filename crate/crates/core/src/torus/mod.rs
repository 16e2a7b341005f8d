//! Flat-torus parameterization: Tutte embedding of a four-cover, sampling of
//! surface functions onto a periodic grid, and the per-chart atlas.

mod atlas;
mod embed;
mod sample;

use serde::{Deserialize, Serialize};

use crate::geom::Vec2;
use crate::mesh::CoverKind;

pub use atlas::{compute_tau, tau_from_face_areas, AtlasChart, ChartAtlas, ConeNode, ATLAS_VERSION};
pub use embed::{embed_checked, embed_tutte, TorusEmbedding, WeightScheme, COTANGENT_FLOOR};
pub use sample::{push_function, SamplingPlan};

/// A `channels x n x n` grid on the flat torus.
///
/// Node `(i, j)` sits at torus point `((i + 1/2) / n, (j + 1/2) / n)`, with `i`
/// along `u`. Storage is channel-major, then `i`, then `j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chart {
    pub channels: usize,
    pub n: usize,
    pub data: Vec<f64>,
}

impl Chart {
    pub fn zeros(channels: usize, n: usize) -> Self {
        Self { channels, n, data: vec![0.0; channels * n * n] }
    }

    #[inline]
    pub fn index(&self, c: usize, i: usize, j: usize) -> usize {
        (c * self.n + i) * self.n + j
    }

    #[inline]
    pub fn at(&self, c: usize, i: usize, j: usize) -> f64 {
        self.data[self.index(c, i, j)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, i: usize, j: usize, value: f64) {
        let k = self.index(c, i, j);
        self.data[k] = value;
    }
}

/// Torus coordinate of grid node `(i, j)`.
pub fn node_uv(n: usize, i: usize, j: usize) -> Vec2 {
    [(i as f64 + 0.5) / n as f64, (j as f64 + 0.5) / n as f64]
}

/// Bilinear interpolation between the four surrounding grid nodes, wrapping
/// cyclically in both axes.
pub fn chart_value_at(chart: &Chart, uv: Vec2) -> Vec<f64> {
    let n = chart.n;
    let x = uv[0] * n as f64 - 0.5;
    let y = uv[1] * n as f64 - 0.5;
    let (xf, yf) = (x.floor(), y.floor());
    let (fx, fy) = (x - xf, y - yf);
    let wrap = |k: f64| (k as i64).rem_euclid(n as i64) as usize;
    let (i0, j0) = (wrap(xf), wrap(yf));
    let (i1, j1) = ((i0 + 1) % n, (j0 + 1) % n);
    (0..chart.channels)
        .map(|c| {
            (1.0 - fx) * ((1.0 - fy) * chart.at(c, i0, j0) + fy * chart.at(c, i0, j1))
                + fx * ((1.0 - fy) * chart.at(c, i1, j0) + fy * chart.at(c, i1, j1))
        })
        .collect()
}

/// The deck group acting on grid nodes, as permutations of `i * n + j`.
/// The identity comes first.
pub fn grid_symmetry(kind: CoverKind, n: usize) -> Vec<Vec<usize>> {
    let idx = |i: usize, j: usize| i * n + j;
    (0..4)
        .map(|g| {
            let mut perm = vec![0; n * n];
            for i in 0..n {
                for j in 0..n {
                    let (mut a, mut b) = (i, j);
                    match kind {
                        CoverKind::Rotation => {
                            // (u, v) -> (-v, u) applied g times.
                            for _ in 0..g {
                                (a, b) = (n - 1 - b, a);
                            }
                        }
                        CoverKind::Reflection => {
                            if g & 1 == 1 {
                                a = n - 1 - a;
                            }
                            if g & 2 == 2 {
                                b = n - 1 - b;
                            }
                        }
                    }
                    perm[idx(i, j)] = idx(a, b);
                }
            }
            perm
        })
        .collect()
}
