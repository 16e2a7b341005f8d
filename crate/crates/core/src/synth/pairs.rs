use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Attribute, Probes, ShapeParams};
use crate::error::{Error, Result};

/// Ranges the dataset sampler draws from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingSpec {
    pub base_radius: (f64, f64),
    pub bulge: (f64, f64),
    pub elongation: (f64, f64),
    pub tilt: (f64, f64),
    pub nuisance: bool,
}

impl Default for SamplingSpec {
    fn default() -> Self {
        Self {
            base_radius: (0.9, 1.1),
            bulge: (0.0, 1.0),
            elongation: (0.0, 1.0),
            tilt: (0.0, 1.0),
            nuisance: true,
        }
    }
}

impl SamplingSpec {
    pub fn range(&self, attribute: Attribute) -> (f64, f64) {
        match attribute {
            Attribute::Bulge => self.bulge,
            Attribute::Elongation => self.elongation,
            Attribute::Tilt => self.tilt,
        }
    }
}

/// Draw `count` parameter sets. Sample `i` uses its own ChaCha stream, so the
/// result does not depend on generation order.
pub fn sample_dataset(count: usize, seed: u64, spec: &SamplingSpec) -> Vec<ShapeParams> {
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut draw = |r: (f64, f64)| if r.0 == r.1 { r.0 } else { rng.random_range(r.0..=r.1) };
            let base_radius = draw(spec.base_radius);
            let bulge = draw(spec.bulge);
            let elongation = draw(spec.elongation);
            let tilt = draw(spec.tilt);
            let nuisance_seed = spec.nuisance.then(|| rng.random());
            ShapeParams { base_radius, bulge, elongation, tilt, nuisance_seed }
        })
        .collect()
}

/// A labeled comparison between dataset entries `i` and `j`; `labels[a]` is 1
/// when entry `i` shows attribute `a` more strongly.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub i: usize,
    pub j: usize,
    pub labels: Vec<u8>,
}

/// One dataset entry as listed in the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub obj: String,
    pub mct: String,
    pub params: ShapeParams,
    pub probes: Probes,
}

/// Contrasting-tails pairs: for every attribute, one member comes from the
/// top `margin` fraction of the attribute's range and the other from the
/// bottom fraction, with the order drawn at random.
pub fn make_pairs(
    records: &[ShapeParams],
    attributes: &[Attribute],
    spec: &SamplingSpec,
    count: usize,
    margin: f64,
    seed: u64,
) -> Result<Vec<PairRecord>> {
    if !(margin > 0.0 && margin < 0.5) {
        return Err(Error::Config(format!("pair margin {margin} must lie in (0, 1/2)")));
    }
    if attributes.is_empty() {
        return Err(Error::Config("pairs need at least one attribute".into()));
    }
    let band = |p: &ShapeParams, a: Attribute| -> Option<bool> {
        let (lo, hi) = spec.range(a);
        let x = a.value(p);
        if x >= hi - margin * (hi - lo) {
            Some(true)
        } else if x <= lo + margin * (hi - lo) {
            Some(false)
        } else {
            None
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let want: Vec<bool> = attributes.iter().map(|_| rng.random_bool(0.5)).collect();
        let pick = |rng: &mut ChaCha8Rng, top: &dyn Fn(usize) -> bool| -> Result<usize> {
            let pool: Vec<usize> = (0..records.len())
                .filter(|&r| attributes.iter().enumerate().all(|(k, &a)| band(&records[r], a) == Some(top(k))))
                .collect();
            if pool.is_empty() {
                return Err(Error::Config("no dataset entries fall in a required attribute band".into()));
            }
            Ok(pool[rng.random_range(0..pool.len())])
        };
        let i = pick(&mut rng, &|k| want[k])?;
        let j = pick(&mut rng, &|k| !want[k])?;
        let labels = attributes
            .iter()
            .map(|&a| u8::from(a.value(&records[i]) > a.value(&records[j])))
            .collect();
        out.push(PairRecord { i, j, labels });
    }
    Ok(out)
}
