use std::path::{Path, PathBuf};

use serde_json::json;

use super::{ChartNorm, MultiChartTensor, NormalizationMeta, CHANNELS};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MCT1";
/// Magic plus three little-endian `u32` fields.
pub const HEADER_BYTES: usize = 16;
const FLAG_NORMALIZED: u32 = 1;

/// Serialize a tensor; values are stored as little-endian `f32`.
pub fn encode_mct(tensor: &MultiChartTensor) -> Vec<u8> {
    let meta_len = tensor.meta.as_ref().map_or(0, |m| 4 * m.charts.len());
    let mut out = Vec::with_capacity(HEADER_BYTES + 4 * (tensor.data.len() + meta_len));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(tensor.chart_count as u32).to_le_bytes());
    out.extend_from_slice(&(tensor.n as u32).to_le_bytes());
    let flags = if tensor.meta.is_some() { FLAG_NORMALIZED } else { 0 };
    out.extend_from_slice(&flags.to_le_bytes());
    for &x in &tensor.data {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    if let Some(meta) = &tensor.meta {
        for c in &meta.charts {
            for x in [c.mean[0], c.mean[1], c.mean[2], c.scale] {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
    }
    out
}

pub fn decode_mct(bytes: &[u8]) -> Result<MultiChartTensor> {
    let truncated = |what: &str| Error::Format {
        offset: bytes.len(),
        message: format!("file ends inside the {what}"),
    };
    if bytes.len() < HEADER_BYTES {
        return Err(truncated("header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format { offset: 0, message: "bad magic, expected MCT1".into() });
    }
    let field = |k: usize| u32::from_le_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().unwrap());
    let (chart_count, n, flags) = (field(0) as usize, field(1) as usize, field(2));
    if flags & !FLAG_NORMALIZED != 0 {
        return Err(Error::Format { offset: 12, message: format!("unknown flag bits {flags:#x}") });
    }
    let values = chart_count
        .checked_mul(CHANNELS * n)
        .and_then(|x| x.checked_mul(n))
        .ok_or_else(|| Error::Format { offset: 4, message: "dimensions overflow".into() })?;
    let normalized = flags & FLAG_NORMALIZED != 0;
    let meta_values = if normalized { 4 * chart_count } else { 0 };
    let payload_end = HEADER_BYTES + 4 * values;
    if bytes.len() < payload_end {
        return Err(truncated("payload"));
    }
    let expected = payload_end + 4 * meta_values;
    if bytes.len() < expected {
        return Err(truncated("normalization block"));
    }
    if bytes.len() > expected {
        return Err(Error::Format { offset: expected, message: "trailing bytes after tensor".into() });
    }
    let read = |offset: usize| f32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap()) as f64;
    let data = (0..values).map(|i| read(HEADER_BYTES + 4 * i)).collect();
    let mut tensor = MultiChartTensor::from_data(chart_count, n, data)?;
    if normalized {
        let charts = (0..chart_count)
            .map(|k| {
                let base = payload_end + 16 * k;
                ChartNorm { mean: [read(base), read(base + 4), read(base + 8)], scale: read(base + 12) }
            })
            .collect();
        tensor.meta = Some(NormalizationMeta { charts });
    }
    Ok(tensor)
}

fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

/// Write `path` and its human-readable `path.json` sidecar.
pub fn write_mct(path: impl AsRef<Path>, tensor: &MultiChartTensor) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_mct(tensor))?;
    let side = json!({
        "chartCount": tensor.chart_count,
        "n": tensor.n,
        "normalized": tensor.meta.is_some(),
        "meta": tensor.meta.as_ref().map(|m| &m.charts),
    });
    std::fs::write(sidecar(path), serde_json::to_string_pretty(&side)?)?;
    Ok(())
}

pub fn read_mct(path: impl AsRef<Path>) -> Result<MultiChartTensor> {
    decode_mct(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(normalized: bool) -> MultiChartTensor {
        // Dyadic values survive the f32 payload exactly.
        let data = (0..2 * 3 * 16).map(|i| (i as f64 - 40.0) / 8.0).collect();
        let mut t = MultiChartTensor::from_data(2, 4, data).unwrap();
        if normalized {
            t.meta = Some(NormalizationMeta {
                charts: vec![
                    ChartNorm { mean: [0.5, -1.0, 2.25], scale: 3.0 },
                    ChartNorm { mean: [0.0, 0.125, -4.0], scale: 0.5 },
                ],
            });
        }
        t
    }

    #[test]
    fn round_trip_is_exact() {
        for normalized in [false, true] {
            let t = sample(normalized);
            let bytes = encode_mct(&t);
            let back = decode_mct(&bytes).unwrap();
            assert_eq!(back, t);
            assert_eq!(encode_mct(&back), bytes);
        }
    }

    #[test]
    fn payload_size_formula() {
        let t = MultiChartTensor::zeros(16, 64);
        assert_eq!(encode_mct(&t).len(), 786_448);
        let mut n = t.clone();
        n.meta = Some(NormalizationMeta { charts: vec![ChartNorm { mean: [0.0; 3], scale: 1.0 }; 16] });
        assert_eq!(encode_mct(&n).len(), 786_448 + 16 * 4 * 4);
    }

    #[test]
    fn truncation_reports_the_offset() {
        let bytes = encode_mct(&sample(false));
        let cut = &bytes[..100];
        match decode_mct(cut).unwrap_err() {
            Error::Format { offset, .. } => assert_eq!(offset, 100),
            e => panic!("unexpected {e}"),
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(decode_mct(&bad).unwrap_err().code(), "FormatError");
        let mut long = bytes;
        long.push(0);
        assert_eq!(decode_mct(&long).unwrap_err().code(), "FormatError");
    }

    #[test]
    fn files_and_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.mct");
        write_mct(&path, &sample(true)).unwrap();
        assert_eq!(read_mct(&path).unwrap(), sample(true));
        let side: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("x.mct.json")).unwrap()).unwrap();
        assert_eq!(side["chartCount"], 2);
        assert_eq!(side["meta"][1]["scale"], 0.5);
    }

    proptest! {
        #[test]
        fn any_f32_tensor_round_trips(values in proptest::collection::vec(-1e6f32..1e6f32, 48)) {
            let t = MultiChartTensor::from_data(1, 4, values.iter().map(|&x| x as f64).collect()).unwrap();
            let bytes = encode_mct(&t);
            prop_assert_eq!(decode_mct(&bytes).unwrap(), t);
        }
    }
}
