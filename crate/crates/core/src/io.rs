//! Binary field files and atomic writes.
//!
//! A field file is one line of JSON header, a `\n`, then the samples as
//! little-endian `f64` in row-major order (axis 0 slowest). Files with more
//! than one component interleave them node by node.
//!
//! ```text
//! {"dim":3,"res":[32,32,32],"dtype":"f64","order":"row-major","endian":"little",
//!  "metric":[1,0,0,0,1,0,0,0,1],"kind":"conformal_exponent","components":1}
//! ```
//!
//! Background metric fields use `kind = "metric_field"` with the `n(n+1)/2`
//! components `g_{lm}`, `l ≤ m`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::background::MetricField;
use crate::conformal::ConformalMetric;
use crate::error::{Error, Result};
use crate::grid::{FlatMetric, GridSpec, ScalarField};

pub const KIND_EXPONENT: &str = "conformal_exponent";
pub const KIND_SCALAR: &str = "scalar";
pub const KIND_METRIC_FIELD: &str = "metric_field";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldHeader {
    pub dim: usize,
    pub res: Vec<usize>,
    pub dtype: String,
    pub order: String,
    pub endian: String,
    /// Flat background, row-major.
    pub metric: Vec<f64>,
    pub kind: String,
    pub components: usize,
}

impl FieldHeader {
    fn new(spec: &GridSpec, metric: &FlatMetric, kind: &str, components: usize) -> Self {
        FieldHeader {
            dim: spec.dim(),
            res: spec.res().to_vec(),
            dtype: "f64".into(),
            order: "row-major".into(),
            endian: "little".into(),
            metric: metric.entries().to_vec(),
            kind: kind.into(),
            components,
        }
    }

    pub fn spec(&self) -> Result<GridSpec> {
        if self.res.len() != self.dim {
            return Err(Error::Format("res does not match dim".into()));
        }
        GridSpec::new(self.res.clone())
    }

    pub fn background(&self) -> Result<FlatMetric> {
        FlatMetric::new(self.dim, self.metric.clone())
    }
}

fn encode(header: &FieldHeader, values: &[f64]) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec(header)?;
    out.push(b'\n');
    out.reserve(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Splits a field file into its header and samples.
pub fn decode(bytes: &[u8]) -> Result<(FieldHeader, Vec<f64>)> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("no header line".into()))?;
    let header: FieldHeader =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| Error::Format(format!("header: {e}")))?;
    if header.dtype != "f64" || header.order != "row-major" || header.endian != "little" {
        return Err(Error::Format(format!(
            "unsupported layout {}/{}/{}",
            header.dtype, header.order, header.endian
        )));
    }
    if header.components == 0 {
        return Err(Error::Format("zero components".into()));
    }
    let spec = header.spec()?;
    let body = &bytes[nl + 1..];
    let expected = spec.len() * header.components * 8;
    if body.len() != expected {
        return Err(Error::Format(format!(
            "payload has {} bytes, header implies {expected}",
            body.len()
        )));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((header, values))
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn write_field(path: &Path, field: &ScalarField, metric: &FlatMetric, kind: &str) -> Result<()> {
    if metric.dim() != field.spec().dim() {
        return Err(Error::DimensionMismatch {
            expected: field.spec().dim(),
            found: metric.dim(),
        });
    }
    let header = FieldHeader::new(field.spec(), metric, kind, 1);
    write_atomic(path, &encode(&header, field.values())?)
}

pub fn read_field(path: &Path) -> Result<(FieldHeader, ScalarField)> {
    let (header, values) = decode(&fs::read(path)?)?;
    if header.components != 1 {
        return Err(Error::Format(format!(
            "expected a scalar field, found {} components",
            header.components
        )));
    }
    let field = ScalarField::new(header.spec()?, values)?;
    Ok((header, field))
}

pub fn write_conformal(path: &Path, m: &ConformalMetric) -> Result<()> {
    write_field(path, m.exponent(), m.background(), KIND_EXPONENT)
}

pub fn read_conformal(path: &Path) -> Result<ConformalMetric> {
    let (header, f) = read_field(path)?;
    if header.kind != KIND_EXPONENT {
        return Err(Error::Format(format!("expected a conformal exponent, found {}", header.kind)));
    }
    ConformalMetric::new(header.background()?, f)
}

/// `metric` is the flat limit the field perturbs.
pub fn write_metric_field(path: &Path, g: &MetricField, metric: &FlatMetric) -> Result<()> {
    let n = g.dim();
    let header = FieldHeader::new(g.spec(), metric, KIND_METRIC_FIELD, n * (n + 1) / 2);
    write_atomic(path, &encode(&header, &g.packed())?)
}

pub fn read_metric_field(path: &Path) -> Result<(MetricField, FlatMetric)> {
    let (header, values) = decode(&fs::read(path)?)?;
    let n = header.dim;
    if header.kind != KIND_METRIC_FIELD || header.components != n * (n + 1) / 2 {
        return Err(Error::Format(format!(
            "expected a metric field with {} components",
            n * (n + 1) / 2
        )));
    }
    let g = MetricField::from_packed(header.spec()?, &values)?;
    Ok((g, header.background()?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_one_json_line() {
        let spec = GridSpec::cubic(2, 8).unwrap();
        let f = ScalarField::from_fn(&spec, |t| t[0]).unwrap();
        let bytes = encode(&FieldHeader::new(&spec, &FlatMetric::identity(2), KIND_SCALAR, 1), f.values()).unwrap();
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        assert_eq!(bytes.len() - nl - 1, 64 * 8);
        let (h, v) = decode(&bytes).unwrap();
        assert_eq!(h.res, vec![8, 8]);
        assert_eq!(v, f.values());
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let spec = GridSpec::cubic(2, 8).unwrap();
        let f = ScalarField::constant(&spec, 1.0).unwrap();
        let bytes = encode(&FieldHeader::new(&spec, &FlatMetric::identity(2), KIND_SCALAR, 1), f.values()).unwrap();
        assert!(matches!(decode(&bytes[..bytes.len() - 3]), Err(Error::Format(_))));
        assert!(matches!(decode(b"{}"), Err(Error::Format(_))));
    }
}
