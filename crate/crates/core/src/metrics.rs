//! Distribution distances computed directly on latent vectors.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{check_len, Error, Result};

/// Eigenvalues below `-EIGEN_TOLERANCE · max(1, max|λ|)` make a matrix square
/// root an error; smaller negatives are clamped to zero. The scale factor keeps
/// rounding noise on large covariances from being reported as indefiniteness.
pub const EIGEN_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_KID_SUBSET_SIZE: usize = 100;
pub const DEFAULT_KID_SUBSETS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFit {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianFit {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if covariance.shape() != (d, d) {
            return Err(Error::InvalidArgument(format!(
                "covariance shape {:?} does not match mean length {d}",
                covariance.shape()
            )));
        }
        Ok(Self { mean, covariance })
    }

    /// Sample mean and unbiased (N−1) covariance. Needs at least `d + 1` rows.
    pub fn from_samples(samples: &[Vec<f64>]) -> Result<Self> {
        let d = samples.first().map_or(0, Vec::len);
        if d == 0 {
            return Err(Error::InvalidArgument("empty sample set".into()));
        }
        if samples.len() < d + 1 {
            return Err(Error::InvalidArgument(format!(
                "{} samples are too few for a full-rank fit in {d} dimensions",
                samples.len()
            )));
        }
        for s in samples {
            check_len("sample", d, s.len())?;
        }
        let n = samples.len() as f64;
        let mut mean = DVector::zeros(d);
        for s in samples {
            mean += DVector::from_column_slice(s);
        }
        mean /= n;
        let mut cov = DMatrix::zeros(d, d);
        for s in samples {
            let c = DVector::from_column_slice(s) - &mean;
            cov += &c * c.transpose();
        }
        cov /= n - 1.0;
        Ok(Self { mean, covariance: cov })
    }
}

fn symmetric_eigen(m: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym)
}

fn clamp_eigenvalues(values: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    let scale = values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if let Some(v) = values.iter().find(|v| **v < -EIGEN_TOLERANCE * scale || !v.is_finite()) {
        return Err(Error::Numerical(format!("{what} has eigenvalue {v:e}")));
    }
    Ok(values.map(|v| v.max(0.0)))
}

/// Principal square root of a symmetric positive semi-definite matrix.
pub fn sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = symmetric_eigen(m);
    let roots = clamp_eigenvalues(&eig.eigenvalues, "covariance")?.map(f64::sqrt);
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// `‖μ_a − μ_b‖² + Tr(Σ_a + Σ_b − 2(Σ_a Σ_b)^{1/2})`.
///
/// The cross term is evaluated as `Tr((Σ_a^{1/2} Σ_b Σ_a^{1/2})^{1/2})`, which
/// has the same eigenvalues as `Σ_a Σ_b` but is symmetric.
pub fn frechet_distance_fits(a: &GaussianFit, b: &GaussianFit) -> Result<f64> {
    check_len("gaussian dimension", a.mean.len(), b.mean.len())?;
    let diff = &a.mean - &b.mean;
    let sa = sqrt_psd(&a.covariance)?;
    let inner = &sa * &b.covariance * &sa;
    let eig = symmetric_eigen(&inner);
    let cross: f64 = clamp_eigenvalues(&eig.eigenvalues, "covariance product")?
        .iter()
        .map(|v| v.sqrt())
        .sum();
    Ok(diff.norm_squared() + a.covariance.trace() + b.covariance.trace() - 2.0 * cross)
}

pub fn frechet_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    frechet_distance_fits(&GaussianFit::from_samples(a)?, &GaussianFit::from_samples(b)?)
}

/// `(x·y / d + 1)³`.
pub fn polynomial_kernel(x: &[f64], y: &[f64]) -> f64 {
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    (dot / x.len() as f64 + 1.0).powi(3)
}

/// Unbiased MMD² with the polynomial kernel; diagonal terms of the
/// within-set sums are excluded.
pub fn mmd2_unbiased(x: &[&[f64]], y: &[&[f64]]) -> Result<f64> {
    let (m, n) = (x.len(), y.len());
    if m < 2 || n < 2 {
        return Err(Error::InvalidArgument("unbiased MMD needs at least two points per set".into()));
    }
    let within = |s: &[&[f64]]| -> f64 {
        let mut total = 0.0;
        for i in 0..s.len() {
            for j in (i + 1)..s.len() {
                total += polynomial_kernel(s[i], s[j]);
            }
        }
        2.0 * total
    };
    let cross: f64 = x
        .iter()
        .map(|a| y.iter().map(|b| polynomial_kernel(a, b)).sum::<f64>())
        .sum();
    let (mf, nf) = (m as f64, n as f64);
    Ok(within(x) / (mf * (mf - 1.0)) + within(y) / (nf * (nf - 1.0)) - 2.0 * cross / (mf * nf))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KidReport {
    pub mean: f64,
    pub std: f64,
    pub subset_size: usize,
    pub n_subsets: usize,
}

/// Mean and population standard deviation of MMD² over `n_subsets` random
/// subset pairs of size `subset_size`.
pub fn kid(a: &[Vec<f64>], b: &[Vec<f64>], subset_size: usize, n_subsets: usize, seed: u64) -> Result<KidReport> {
    if n_subsets == 0 {
        return Err(Error::InvalidArgument("need at least one subset".into()));
    }
    if subset_size > a.len().min(b.len()) {
        return Err(Error::InvalidArgument(format!(
            "subset size {subset_size} exceeds sample counts {} / {}",
            a.len(),
            b.len()
        )));
    }
    if let (Some(x), Some(y)) = (a.first(), b.first()) {
        check_len("latent dimension", x.len(), y.len())?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<(Vec<usize>, Vec<usize>)> = (0..n_subsets)
        .map(|_| {
            (
                index::sample(&mut rng, a.len(), subset_size).into_vec(),
                index::sample(&mut rng, b.len(), subset_size).into_vec(),
            )
        })
        .collect();
    let scores = picks
        .par_iter()
        .map(|(ia, ib)| {
            let x: Vec<&[f64]> = ia.iter().map(|&i| a[i].as_slice()).collect();
            let y: Vec<&[f64]> = ib.iter().map(|&i| b[i].as_slice()).collect();
            mmd2_unbiased(&x, &y)
        })
        .collect::<Result<Vec<f64>>>()?;
    let k = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / k;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / k;
    Ok(KidReport {
        mean,
        std: var.sqrt(),
        subset_size,
        n_subsets,
    })
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;

    use super::*;

    fn gaussian_samples(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect()).collect()
    }

    #[test]
    fn identical_sets_have_zero_distance() {
        let s = gaussian_samples(200, 5, 1);
        assert!(frechet_distance(&s, &s).unwrap().abs() < 1e-8);
    }

    #[test]
    fn shifted_identity_fits() {
        let m = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let a = GaussianFit::new(DVector::zeros(3), DMatrix::identity(3, 3)).unwrap();
        let b = GaussianFit::new(m.clone(), DMatrix::identity(3, 3)).unwrap();
        assert_abs_diff_eq!(frechet_distance_fits(&a, &b).unwrap(), m.norm_squared(), epsilon = 1e-10);
    }

    #[test]
    fn scalar_variances() {
        let fit = |v: f64| GaussianFit::new(DVector::zeros(1), DMatrix::from_element(1, 1, v)).unwrap();
        let (s, t) = (1.7f64, 0.4f64);
        let d = frechet_distance_fits(&fit(s * s), &fit(t * t)).unwrap();
        assert_abs_diff_eq!(d, (s - t).powi(2), epsilon = 1e-12);
    }

    #[test]
    fn insufficient_samples_and_indefinite_covariance() {
        let s = gaussian_samples(3, 5, 2);
        assert!(frechet_distance(&s, &s).is_err());
        let bad = GaussianFit::new(DVector::zeros(2), DMatrix::from_diagonal_element(2, 2, -1.0)).unwrap();
        let good = GaussianFit::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        assert!(matches!(frechet_distance_fits(&bad, &good), Err(Error::Numerical(_))));
    }

    #[test]
    fn kernel_arithmetic() {
        assert_eq!(polynomial_kernel(&[1.0; 10], &[1.0; 10]), 8.0);
    }

    #[test]
    fn kid_conventions() {
        let a = gaussian_samples(50, 4, 3);
        let b = gaussian_samples(60, 4, 4);
        let r = kid(&a, &b, 20, 1, 0).unwrap();
        assert_eq!(r.std, 0.0);
        assert_eq!((r.subset_size, r.n_subsets), (20, 1));
        assert!(kid(&a, &b, 51, 3, 0).is_err());
        assert!(kid(&a, &b, 10, 0, 0).is_err());
        assert_eq!(kid(&a, &b, 10, 5, 7).unwrap(), kid(&a, &b, 10, 5, 7).unwrap());
    }
}
