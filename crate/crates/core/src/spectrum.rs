//! The row-normalized sample matrix and its extreme singular values.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::distributions::{draw_samples, DistributionSpec, Samples};
use crate::error::{Error, Result};
use crate::seed::SeedRecord;

pub const MATRIX_MAGIC: [u8; 8] = *b"LMINMAT\0";
pub const MATRIX_VERSION: u32 = 1;
const FLAG_SEED: u32 = 1;

/// `N x n` matrix whose i-th row is `X_i / sqrt(N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    seed: Option<SeedRecord>,
}

impl SampleMatrix {
    /// Draws `n_rows` independent copies of X from the stream named by `seed`.
    pub fn assemble(spec: &DistributionSpec, n_rows: usize, seed: SeedRecord) -> Result<Self> {
        if n_rows == 0 {
            return Err(Error::InvalidParameter("sample size N must be >= 1".into()));
        }
        let samples = draw_samples(spec, n_rows, &mut seed.rng())?;
        let mut m = Self::from_samples(&samples)?;
        m.seed = Some(seed);
        Ok(m)
    }

    /// Scales raw draws by `1/sqrt(N)`.
    pub fn from_samples(samples: &Samples) -> Result<Self> {
        let rows = samples.len();
        if rows == 0 {
            return Err(Error::InvalidInput("no samples".into()));
        }
        let scale = 1.0 / (rows as f64).sqrt();
        Self::from_values(rows, samples.dim(), samples.as_flat().iter().map(|x| x * scale).collect())
    }

    /// Wraps already-normalized row-major values.
    pub fn from_values(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || values.len() != rows * cols {
            return Err(Error::InvalidInput(format!(
                "{} values do not form a {rows}x{cols} matrix",
                values.len()
            )));
        }
        Ok(Self { rows, cols, values, seed: None })
    }

    pub fn with_seed(mut self, seed: SeedRecord) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn seed(&self) -> Option<SeedRecord> {
        self.seed
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    /// Undoes the `1/sqrt(N)` normalization.
    pub fn raw_samples(&self) -> Samples {
        let scale = (self.rows as f64).sqrt();
        Samples::from_flat(self.cols, self.values.iter().map(|x| x * scale).collect())
            .expect("matrix shape is valid")
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            values: self.values.iter().map(|x| c * x).collect(),
            ..self.clone()
        }
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.values)
    }

    pub fn from_dmatrix(m: &DMatrix<f64>) -> Result<Self> {
        let values = (0..m.nrows())
            .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)])
            .collect();
        Self::from_values(m.nrows(), m.ncols(), values)
    }

    /// `Γ t`.
    pub fn apply(&self, t: &[f64]) -> Vec<f64> {
        self.values
            .chunks_exact(self.cols)
            .map(|r| r.iter().zip(t).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `Γ^T Γ`, computed on the upper triangle and mirrored so it is exactly symmetric.
    pub fn gram(&self) -> DMatrix<f64> {
        let n = self.cols;
        let mut g = DMatrix::<f64>::zeros(n, n);
        for row in self.values.chunks_exact(n) {
            for i in 0..n {
                let ri = row[i];
                if ri == 0.0 {
                    continue;
                }
                for j in i..n {
                    g[(i, j)] += ri * row[j];
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                g[(i, j)] = g[(j, i)];
            }
        }
        g
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&MATRIX_MAGIC)?;
        w.write_all(&MATRIX_VERSION.to_le_bytes())?;
        let flags = if self.seed.is_some() { FLAG_SEED } else { 0 };
        w.write_all(&flags.to_le_bytes())?;
        w.write_all(&(self.rows as u64).to_le_bytes())?;
        w.write_all(&(self.cols as u64).to_le_bytes())?;
        let seed = self.seed.unwrap_or(SeedRecord { master: 0, stream: 0 });
        w.write_all(&seed.master.to_le_bytes())?;
        w.write_all(&seed.stream.to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if magic != MATRIX_MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != MATRIX_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let flags = read_u32(&mut r)?;
        let rows = read_u64(&mut r)? as usize;
        let cols = read_u64(&mut r)? as usize;
        let master = read_u64(&mut r)?;
        let stream = read_u64(&mut r)?;
        let count = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Format("matrix dimensions overflow".into()))?;
        let mut buf = vec![0u8; count * 8];
        r.read_exact(&mut buf)?;
        let values = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let mut m = Self::from_values(rows, cols, values)?;
        if flags & FLAG_SEED != 0 {
            m.seed = Some(SeedRecord { master, stream });
        }
        Ok(m)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectralMethod {
    SymEig,
    InversePower,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralResult {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub method: SpectralMethod,
    /// Largest `|G v - mu v|` over the two extreme eigenpairs of the Gram matrix.
    pub residual: f64,
}

impl SpectralResult {
    pub fn condition_number(&self) -> f64 {
        self.lambda_max / self.lambda_min
    }
}

/// Extreme singular values through the symmetric eigenproblem of `Γ^T Γ`.
pub fn lambda_extremes(m: &SampleMatrix) -> Result<SpectralResult> {
    if m.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    let g = m.gram();
    let eig = SymmetricEigen::new(g.clone());
    let (mut imin, mut imax) = (0, 0);
    for (i, &mu) in eig.eigenvalues.iter().enumerate() {
        if mu < eig.eigenvalues[imin] {
            imin = i;
        }
        if mu > eig.eigenvalues[imax] {
            imax = i;
        }
    }
    let pair_residual = |i: usize| {
        let v = eig.eigenvectors.column(i);
        (&g * v - v * eig.eigenvalues[i]).norm()
    };
    let residual = pair_residual(imin).max(pair_residual(imax));
    let lambda_max = eig.eigenvalues[imax].max(0.0).sqrt();
    let lambda_min = if m.rows < m.cols {
        0.0
    } else {
        eig.eigenvalues[imin].max(0.0).sqrt()
    };
    Ok(SpectralResult {
        lambda_min,
        lambda_max,
        method: SpectralMethod::SymEig,
        residual,
    })
}

/// Result of shifted inverse iteration on a symmetric matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerEstimate {
    pub eigenvalue: f64,
    pub iterations: usize,
    pub residual: f64,
}

pub const POWER_MAX_ITERATIONS: usize = 100_000;

/// Eigenvalue of the symmetric matrix `g` nearest to `shift`, by inverse
/// iteration with Rayleigh-quotient readout. Stops once `|g v - rho v| <= tol |rho|`.
pub fn inverse_power(g: &DMatrix<f64>, shift: f64, tol: f64) -> Result<PowerEstimate> {
    let n = g.nrows();
    if n == 0 || g.ncols() != n {
        return Err(Error::InvalidInput("inverse iteration needs a square matrix".into()));
    }
    let shifted = g - DMatrix::<f64>::identity(n, n) * shift;
    let lu = shifted.lu();
    if !lu.is_invertible() {
        return Err(Error::InvalidInput(format!("gram - {shift} I is singular")));
    }
    // Deterministic start with no special alignment to coordinate axes.
    let mut v = DVector::from_fn(n, |i, _| 1.0 + ((i as f64 + 1.0) * 0.618_033_988_749_895).fract());
    v /= v.norm();
    let mut rho = f64::NAN;
    let mut residual = f64::INFINITY;
    let mut last_change = f64::INFINITY;
    for it in 1..=POWER_MAX_ITERATIONS {
        let mut w = lu
            .solve(&v)
            .ok_or_else(|| Error::InvalidInput(format!("gram - {shift} I is singular")))?;
        let norm = w.norm();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::InvalidInput("inverse iteration produced a degenerate iterate".into()));
        }
        w /= norm;
        let gw = g * &w;
        let next = w.dot(&gw);
        residual = (&gw - &w * next).norm();
        last_change = ((next - rho) / next).abs();
        rho = next;
        v = w;
        if residual <= tol * rho.abs() || (rho == 0.0 && residual == 0.0) {
            return Ok(PowerEstimate { eigenvalue: rho, iterations: it, residual });
        }
    }
    Err(Error::NoConvergence {
        iterations: POWER_MAX_ITERATIONS,
        last_change,
        residual,
    })
}

/// Smallest Gram eigenvalue (`lambda_min^2`) by inverse iteration.
pub fn lambda_min_power(m: &SampleMatrix, shift: f64, tol: f64) -> Result<f64> {
    Ok(inverse_power(&m.gram(), shift, tol)?.eigenvalue)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::DistributionSpec;
    use crate::seed::rng_from_seed;
    use rand::Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> SampleMatrix {
        let mut rng = rng_from_seed(seed);
        let v = (0..rows * cols).map(|_| rng.random::<f64>() - 0.5).collect();
        SampleMatrix::from_values(rows, cols, v).unwrap()
    }

    #[test]
    fn single_deterministic_row() {
        let s = Samples::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let m = SampleMatrix::from_samples(&s).unwrap();
        assert_eq!(m.values(), &[1.0, 0.0]);
        let g = m.gram();
        assert_eq!(g, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn rademacher_entries_scaled() {
        let spec = DistributionSpec::rademacher(2);
        let m = SampleMatrix::assemble(&spec, 2, SeedRecord::new(5, &[])).unwrap();
        let h = 1.0 / 2f64.sqrt();
        assert!(m.values().iter().all(|v| *v == h || *v == -h));
    }

    #[test]
    fn identity_rows_gram() {
        let n = 4;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let m = SampleMatrix::from_samples(&Samples::from_rows(&rows).unwrap()).unwrap();
        let g = m.gram();
        for i in 0..n {
            for j in 0..n {
                let expect = if i == j { 0.25 } else { 0.0 };
                assert!((g[(i, j)] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn gram_matches_double_loop() {
        let m = random_matrix(5, 3, 11);
        let g = m.gram();
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..5 {
                    s += m.row(k)[i] * m.row(k)[j];
                }
                assert!((g[(i, j)] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn diagonal_singular_values() {
        let n_rows = 2.0f64;
        let m = SampleMatrix::from_values(2, 2, vec![3.0 / n_rows.sqrt(), 0.0, 0.0, 1.0 / n_rows.sqrt()])
            .unwrap();
        let r = lambda_extremes(&m).unwrap();
        assert!((r.lambda_max - 3.0 / 2f64.sqrt()).abs() < 1e-14);
        assert!((r.lambda_min - 1.0 / 2f64.sqrt()).abs() < 1e-14);
        assert_eq!(r.method, SpectralMethod::SymEig);
    }

    #[test]
    fn wide_matrix_has_zero_lambda_min() {
        let m = random_matrix(3, 5, 2);
        let r = lambda_extremes(&m).unwrap();
        assert_eq!(r.lambda_min, 0.0);
        assert!(r.lambda_max > 0.0);
    }

    #[test]
    fn non_finite_rejected() {
        let m = SampleMatrix::from_values(1, 2, vec![f64::NAN, 1.0]).unwrap();
        assert!(matches!(lambda_extremes(&m), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn inverse_power_on_diagonal() {
        let g = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0]);
        let est = inverse_power(&g, 0.0, 1e-12).unwrap();
        assert!((est.eigenvalue - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inverse_power_singular_shift() {
        let g = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0]);
        assert!(matches!(inverse_power(&g, 1.0, 1e-12), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn inverse_power_agrees_with_symmetric_solver() {
        let m = random_matrix(20, 10, 3);
        let r = lambda_extremes(&m).unwrap();
        let mu = lambda_min_power(&m, 0.0, 1e-12).unwrap();
        let reference = r.lambda_min * r.lambda_min;
        assert!(((mu - reference) / reference).abs() < 1e-8, "{mu} vs {reference}");
    }

    #[test]
    fn inverse_power_double_smallest_eigenvalue() {
        // Q diag(0.5, 0.5, 2, 3) Q^T with Q a Householder reflection.
        let u: DVector<f64> = DVector::from_vec(vec![1.0, -2.0, 0.5, 1.5]);
        let u: DVector<f64> = &u / u.norm();
        let q = DMatrix::<f64>::identity(4, 4) - &u * u.transpose() * 2.0;
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.5, 2.0, 3.0]));
        let g = &q * d * q.transpose();
        let est = inverse_power(&g, 0.0, 1e-13).unwrap();
        assert!((est.eigenvalue - 0.5).abs() < 1e-12);
    }

    #[test]
    fn binary_round_trip() {
        let spec = DistributionSpec::gaussian(3);
        let m = SampleMatrix::assemble(&spec, 7, SeedRecord::new(42, &[1, 2])).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 48 + 7 * 3 * 8);
        assert_eq!(&buf[..8], b"LMINMAT\0");
        let back = SampleMatrix::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, m);
        buf[0] = b'X';
        assert!(matches!(SampleMatrix::read_from(buf.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn raw_samples_undo_scaling() {
        let spec = DistributionSpec::heavy_radial(4, 3.0);
        let seed = SeedRecord::new(8, &[]);
        let raw = draw_samples(&spec, 9, &mut seed.rng()).unwrap();
        let m = SampleMatrix::assemble(&spec, 9, seed).unwrap();
        for (a, b) in m.raw_samples().as_flat().iter().zip(raw.as_flat()) {
            assert!((a - b).abs() <= 1e-14 * b.abs().max(1.0));
        }
    }
}
