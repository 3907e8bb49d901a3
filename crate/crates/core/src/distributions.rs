//! Gaussian summaries (mean, regularized covariance) of descriptor populations.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::descriptors::DescriptorSet;
use crate::error::{Error, Result};
use crate::linalg::{self, LowerTriangular, SymMatrix};

/// Default shrinkage weight toward the scaled identity.
pub const DEFAULT_SHRINKAGE: f64 = 0.1;
/// Constant ridge added to every estimated covariance.
pub const COV_FLOOR: f64 = 1e-6;

/// Sample mean and MLE scatter `(1/n) Σ (x − μ)(x − μ)ᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean: Vec<f64>,
    pub scatter: SymMatrix,
    pub count: usize,
}

impl Moments {
    /// Moments of the union of `sets`, in iteration order.
    pub fn of_sets<'a>(sets: impl IntoIterator<Item = &'a DescriptorSet> + Clone) -> Result<Self> {
        let mut c = None;
        let mut count = 0usize;
        for s in sets.clone() {
            match c {
                None => c = Some(s.dim()),
                Some(c) if c != s.dim() => {
                    return Err(Error::InconsistentDim {
                        expected: c,
                        actual: s.dim(),
                    })
                }
                _ => {}
            }
            if s.as_slice().iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("descriptor set"));
            }
            count += s.len();
        }
        let c = c.ok_or(Error::InvalidSpec("no descriptor sets to estimate from"))?;
        if count == 0 {
            return Err(Error::InvalidSpec("no descriptors to estimate from"));
        }

        let mut mean = vec![0.0; c];
        for s in sets.clone() {
            for d in s.iter() {
                for (m, x) in mean.iter_mut().zip(d) {
                    *m += x;
                }
            }
        }
        let inv = 1.0 / count as f64;
        for m in &mut mean {
            *m *= inv;
        }

        let mut acc = vec![0.0; c * c];
        let mut centered = vec![0.0; c];
        for s in sets {
            for d in s.iter() {
                for ((z, x), m) in centered.iter_mut().zip(d).zip(&mean) {
                    *z = x - m;
                }
                for i in 0..c {
                    let zi = centered[i];
                    let row = &mut acc[i * c..i * c + i + 1];
                    for (a, zj) in row.iter_mut().zip(&centered[..=i]) {
                        *a += zi * zj;
                    }
                }
            }
        }
        let scatter = SymMatrix::from_lower_fn(c, |i, j| acc[i * c + j] * inv);
        Ok(Moments {
            mean,
            scatter,
            count,
        })
    }

    /// Shrinks the scatter toward `trace/c · I` and adds the [`COV_FLOOR`] ridge.
    pub fn regularize(self, shrinkage: f64) -> Result<GaussianStats> {
        check_shrinkage(shrinkage)?;
        let c = self.mean.len();
        let s = &self.scatter;
        let avg = s.trace() / c as f64;
        let cov = SymMatrix::from_lower_fn(c, |i, j| {
            let mut v = (1.0 - shrinkage) * s.get(i, j);
            if i == j {
                v += shrinkage * avg + COV_FLOOR;
            }
            v
        });
        GaussianStats::new(self.mean, cov, self.count)
    }
}

fn check_shrinkage(l: f64) -> Result<()> {
    if (0.0..=1.0).contains(&l) {
        Ok(())
    } else {
        Err(Error::InvalidSpec("shrinkage must lie in [0, 1]"))
    }
}

/// Mean, SPD covariance, pooled descriptor count, and the cached Cholesky
/// factor of the covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianStats {
    mean: Vec<f64>,
    cov: SymMatrix,
    count: usize,
    factor: LowerTriangular,
}

impl GaussianStats {
    /// Factors `cov`; fails if it is not positive definite.
    pub fn new(mean: Vec<f64>, cov: SymMatrix, count: usize) -> Result<Self> {
        linalg::check_dim(cov.dim(), mean.len())?;
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mean"));
        }
        let factor = linalg::cholesky(&cov)?;
        Ok(GaussianStats {
            mean,
            cov,
            count,
            factor,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &SymMatrix {
        &self.cov
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn factor(&self) -> &LowerTriangular {
        &self.factor
    }
}

/// Gaussian summary of one descriptor set with shrinkage weight `shrinkage`.
pub fn estimate_stats(d: &DescriptorSet, shrinkage: f64) -> Result<GaussianStats> {
    check_shrinkage(shrinkage)?;
    Moments::of_sets(core::iter::once(d))?.regularize(shrinkage)
}

/// Pools every descriptor of every image of one class.
pub fn pool_class_stats(images: &[&DescriptorSet], shrinkage: f64) -> Result<GaussianStats> {
    check_shrinkage(shrinkage)?;
    Moments::of_sets(images.iter().copied())?.regularize(shrinkage)
}

/// Pools every image of every class except `exclude`.
pub fn pool_complement_stats(
    classes: &[Vec<&DescriptorSet>],
    exclude: usize,
    shrinkage: f64,
) -> Result<GaussianStats> {
    if classes.len() < 2 {
        return Err(Error::TooFewClasses(classes.len()));
    }
    if exclude >= classes.len() {
        return Err(Error::InvalidSpec("excluded class index out of range"));
    }
    check_shrinkage(shrinkage)?;
    let rest = classes
        .iter()
        .enumerate()
        .filter(move |(i, _)| *i != exclude)
        .flat_map(|(_, imgs)| imgs.iter().copied());
    Moments::of_sets(rest)?.regularize(shrinkage)
}
