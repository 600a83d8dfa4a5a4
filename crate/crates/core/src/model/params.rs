use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Flat parameter vector: model weights, or anything parameter-shaped such
/// as Scaffold control variates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Self {
        ParameterVector(values)
    }

    pub fn zeros(len: usize) -> Self {
        ParameterVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &ParameterVector) {
        assert_eq!(self.len(), other.len(), "parameter length mismatch");
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += alpha * b;
        }
    }

    pub fn add(&self, other: &ParameterVector) -> ParameterVector {
        assert_eq!(self.len(), other.len(), "parameter length mismatch");
        ParameterVector(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &ParameterVector) -> ParameterVector {
        assert_eq!(self.len(), other.len(), "parameter length mismatch");
        ParameterVector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn scale(&self, s: f64) -> ParameterVector {
        ParameterVector(self.0.iter().map(|a| a * s).collect())
    }

    pub fn dot(&self, other: &ParameterVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs_diff(&self, other: &ParameterVector) -> f64 {
        assert_eq!(self.len(), other.len(), "parameter length mismatch");
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Little-endian `u32` length followed by little-endian `f64` values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 8 * self.len());
        self.write_to(&mut out)
            .expect("writing to a Vec cannot fail");
        out
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let len = u32::try_from(self.len())
            .map_err(|_| std::io::Error::other("parameter vector longer than u32::MAX"))?;
        w.write_all(&len.to_le_bytes())?;
        for v in &self.0 {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> std::io::Result<Self> {
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let len = u32::from_le_bytes(len) as usize;
        let mut values = Vec::with_capacity(len);
        let mut buf = [0u8; 8];
        for _ in 0..len {
            r.read_exact(&mut buf)?;
            values.push(f64::from_le_bytes(buf));
        }
        Ok(ParameterVector(values))
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let p = Self::read_from(&mut bytes)
            .map_err(|e| Error::Schema(format!("truncated parameter vector: {e}")))?;
        if !bytes.is_empty() {
            return Err(Error::Schema(format!(
                "{} trailing bytes after parameter vector",
                bytes.len()
            )));
        }
        Ok(p)
    }
}

impl From<Vec<f64>> for ParameterVector {
    fn from(v: Vec<f64>) -> Self {
        ParameterVector(v)
    }
}

/// Writes a checkpoint: the vectors back to back in the format of
/// [`ParameterVector::write_to`].
pub fn write_checkpoint(path: impl AsRef<Path>, vectors: &[&ParameterVector]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for v in vectors {
        v.write_to(&mut buf).map_err(|e| Error::io(path, e))?;
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads every vector stored in a checkpoint file.
pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Vec<ParameterVector>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut rest = bytes.as_slice();
    let mut out = Vec::new();
    while !rest.is_empty() {
        out.push(
            ParameterVector::read_from(&mut rest)
                .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?,
        );
    }
    Ok(out)
}
