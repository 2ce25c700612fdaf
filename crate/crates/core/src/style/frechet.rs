//! Fréchet distance between Gaussian fits of two embedding sets.
//!
//! `d² = |μa − μb|² + Tr(Σa + Σb − 2 (Σa Σb)^½)`. The trace of the product
//! square root is taken from the eigenvalues of the symmetric matrix
//! `Σa^½ Σb Σa^½`, which shares its spectrum with `Σa Σb`.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::StyleError;

/// Eigenvalues below this are treated as a non-PSD input; values between it
/// and zero are rounding noise and clamp to zero.
pub const PSD_TOLERANCE: f64 = 1e-6;

const BINARY_MAGIC: &[u8; 8] = b"RFEMBF32";

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub vectors: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl EmbeddingSet {
    /// Fits mean and unbiased covariance to `N × D` row vectors.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, StyleError> {
        if rows.len() < 2 {
            return Err(StyleError::TooFewVectors(rows.len()));
        }
        let d = rows[0].len();
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(StyleError::DimensionMismatch { a: d, b: bad.len() });
        }
        let n = rows.len();
        let vectors = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
        let mean = DVector::from_fn(d, |j, _| vectors.column(j).sum() / n as f64);
        let centered = DMatrix::from_fn(n, d, |i, j| vectors[(i, j)] - mean[j]);
        let mut covariance = centered.transpose() * &centered / (n - 1) as f64;
        symmetrize(&mut covariance);
        Ok(EmbeddingSet {
            vectors,
            mean,
            covariance,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Reads a CSV file (one vector per row, optional non-numeric header) or
    /// the binary layout: magic `RFEMBF32`, `u32` N, `u32` D, then N·D
    /// little-endian `f32` values in row-major order.
    pub fn read(path: &Path) -> Result<Self, StyleError> {
        let bytes = std::fs::read(path).map_err(|e| StyleError::EmbeddingFormat(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StyleError> {
        if bytes.starts_with(BINARY_MAGIC) {
            return Self::from_rows(&parse_binary(bytes)?);
        }
        let text = std::str::from_utf8(bytes).map_err(|_| StyleError::EmbeddingFormat("neither binary nor UTF-8 CSV".into()))?;
        Self::from_rows(&parse_csv(text)?)
    }
}

fn parse_binary(bytes: &[u8]) -> Result<Vec<Vec<f64>>, StyleError> {
    let bad = |m: &str| StyleError::EmbeddingFormat(m.to_string());
    let header = bytes.get(8..16).ok_or_else(|| bad("truncated header"))?;
    let n = u32::from_le_bytes(header[0..4].try_into().expect("4 bytes")) as usize;
    let d = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes")) as usize;
    let body = &bytes[16..];
    if body.len() != n * d * 4 {
        return Err(bad("body length does not match N x D"));
    }
    let values: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
        .collect();
    Ok(values.chunks(d.max(1)).take(n).map(<[f64]>::to_vec).collect())
}

fn parse_csv(text: &str) -> Result<Vec<Vec<f64>>, StyleError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| StyleError::EmbeddingFormat(e.to_string()))?;
        let parsed: Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if i == 0 => continue,
            Err(e) => return Err(StyleError::EmbeddingFormat(format!("row {}: {e}", i + 1))),
        }
    }
    Ok(rows)
}

/// Binary layout accepted by [`EmbeddingSet::from_bytes`].
pub fn write_binary(rows: &[Vec<f32>]) -> Vec<u8> {
    let d = rows.first().map_or(0, Vec::len);
    let mut out = BINARY_MAGIC.to_vec();
    out.extend_from_slice(&(rows.len() as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    for row in rows {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m = (&*m + t) * 0.5;
}

fn checked_eigenvalues(m: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>, StyleError> {
    let mut sym = m.clone();
    symmetrize(&mut sym);
    let eig = SymmetricEigen::new(sym);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -PSD_TOLERANCE {
        return Err(StyleError::NonPsdCovariance { min_eigenvalue: min });
    }
    Ok(eig)
}

/// Square roots of the eigenvalues, with those below the numerical rank
/// tolerance taken as exact zeros. Rounding leaves ~1e-16 residue on the
/// null space of a singular matrix, and its root would be ~1e-8.
fn eigen_roots(eigenvalues: &DVector<f64>) -> DVector<f64> {
    let max = eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = eigenvalues.len() as f64 * f64::EPSILON * max;
    eigenvalues.map(|v| if v <= tol { 0.0 } else { v.sqrt() })
}

/// Principal square root of a symmetric PSD matrix.
pub fn sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>, StyleError> {
    let eig = checked_eigenvalues(m)?;
    let roots = eigen_roots(&eig.eigenvalues);
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// Fréchet distance between two Gaussians.
pub fn frechet_from_moments(
    mean_a: &DVector<f64>,
    cov_a: &DMatrix<f64>,
    mean_b: &DVector<f64>,
    cov_b: &DMatrix<f64>,
) -> Result<f64, StyleError> {
    if mean_a.len() != mean_b.len() || cov_a.nrows() != cov_b.nrows() || cov_a.nrows() != mean_a.len() {
        return Err(StyleError::DimensionMismatch {
            a: mean_a.len(),
            b: mean_b.len(),
        });
    }
    checked_eigenvalues(cov_b)?;
    let root_a = sqrt_psd(cov_a)?;
    let inner = &root_a * cov_b * &root_a;
    let cross_trace: f64 = eigen_roots(&checked_eigenvalues(&inner)?.eigenvalues).sum();
    let mean_term = (mean_a - mean_b).norm_squared();
    let d = mean_term + cov_a.trace() + cov_b.trace() - 2.0 * cross_trace;
    Ok(d.max(0.0))
}

pub fn frechet_distance(a: &EmbeddingSet, b: &EmbeddingSet) -> Result<f64, StyleError> {
    if a.dim() != b.dim() {
        return Err(StyleError::DimensionMismatch { a: a.dim(), b: b.dim() });
    }
    frechet_from_moments(&a.mean, &a.covariance, &b.mean, &b.covariance)
}
