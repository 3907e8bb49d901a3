//! Query-to-class measures.
//!
//! Distribution-level measures compare Gaussian summaries: the asymmetric KL
//! divergence `KL(Q‖S)` and two symmetric squared 2-Wasserstein distances (the
//! Gaussian closed form and the mean/Frobenius approximation). The local
//! image-to-class measure compares raw descriptor sets by summed top-k cosine
//! similarity. Distances score lower-is-closer; the image-to-class similarity
//! scores higher-is-closer.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::descriptors::DescriptorSet;
use crate::distributions::GaussianStats;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::math;

/// Negative KL values in `[-KL_CLAMP, 0)` are rounding noise and become 0.
pub const KL_CLAMP: f64 = 1e-9;
/// Same band for the exact Wasserstein distance.
pub const WASSERSTEIN_CLAMP: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeasureKind {
    Kl,
    WassersteinApprox,
    WassersteinExact,
    I2c,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    LowerIsCloser,
    HigherIsCloser,
}

impl MeasureKind {
    pub const ALL: [MeasureKind; 4] = [
        MeasureKind::Kl,
        MeasureKind::WassersteinApprox,
        MeasureKind::WassersteinExact,
        MeasureKind::I2c,
    ];

    pub fn direction(self) -> Direction {
        match self {
            MeasureKind::I2c => Direction::HigherIsCloser,
            _ => Direction::LowerIsCloser,
        }
    }

    pub fn is_distribution_level(self) -> bool {
        self != MeasureKind::I2c
    }

    pub fn name(self) -> &'static str {
        match self {
            MeasureKind::Kl => "kl",
            MeasureKind::WassersteinApprox => "wass-approx",
            MeasureKind::WassersteinExact => "wass-exact",
            MeasureKind::I2c => "i2c",
        }
    }

    /// Evaluates a distribution-level distance. `I2c` has no Gaussian form.
    pub fn distance(self, q: &GaussianStats, s: &GaussianStats) -> Result<f64> {
        match self {
            MeasureKind::Kl => kl_divergence(q, s),
            MeasureKind::WassersteinApprox => wasserstein2_approx(q, s),
            MeasureKind::WassersteinExact => wasserstein2_exact(q, s),
            MeasureKind::I2c => Err(Error::InvalidSpec(
                "image-to-class is not a distribution-level measure",
            )),
        }
    }
}

impl fmt::Display for MeasureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MeasureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MeasureKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or(Error::InvalidSpec("unknown measure kind"))
    }
}

fn clamp_nonneg(value: f64, band: f64, what: &'static str) -> Result<f64> {
    if !value.is_finite() {
        return Err(Error::NumericalError { what, value });
    }
    if value >= 0.0 {
        Ok(value)
    } else if value >= -band {
        Ok(0.0)
    } else {
        Err(Error::NumericalError { what, value })
    }
}

fn mean_diff(q: &GaussianStats, s: &GaussianStats) -> Result<Vec<f64>> {
    linalg::check_dim(q.dim(), s.dim())?;
    Ok(s.mean().iter().zip(q.mean()).map(|(a, b)| a - b).collect())
}

/// `KL(Q‖S) = ½(tr(Σ_S⁻¹Σ_Q) + ln det Σ_S − ln det Σ_Q + δᵀΣ_S⁻¹δ − c)`,
/// `δ = μ_S − μ_Q`.
pub fn kl_divergence(q: &GaussianStats, s: &GaussianStats) -> Result<f64> {
    let delta = mean_diff(q, s)?;
    let trace = s.factor().trace_solve(q.cov())?;
    let solved = s.factor().solve_vec(&delta)?;
    let maha = linalg::dot(&delta, &solved);
    let value = 0.5 * (trace + s.factor().log_det() - q.factor().log_det() + maha - q.dim() as f64);
    clamp_nonneg(value, KL_CLAMP, "KL divergence")
}

/// `‖μ_Q − μ_S‖² + ‖Σ_Q − Σ_S‖²_F`.
pub fn wasserstein2_approx(q: &GaussianStats, s: &GaussianStats) -> Result<f64> {
    let delta = mean_diff(q, s)?;
    Ok(linalg::dot(&delta, &delta) + q.cov().frobenius_dist_sq(s.cov())?)
}

/// `‖μ_Q − μ_S‖² + tr(Σ_Q + Σ_S − 2(Σ_Q^{½} Σ_S Σ_Q^{½})^{½})`.
pub fn wasserstein2_exact(q: &GaussianStats, s: &GaussianStats) -> Result<f64> {
    let root_q = linalg::sqrtm_psd(q.cov())?.to_matrix();
    wasserstein2_exact_rooted(q, &root_q, s)
}

/// [`wasserstein2_exact`] with `Σ_Q^{½}` supplied by the caller.
pub(crate) fn wasserstein2_exact_rooted(
    q: &GaussianStats,
    root_q: &Matrix,
    s: &GaussianStats,
) -> Result<f64> {
    let delta = mean_diff(q, s)?;
    let middle = s.cov().congruence(root_q)?;
    let cross = linalg::trace_sqrtm_psd(&middle)?;
    let value = linalg::dot(&delta, &delta) + q.cov().trace() + s.cov().trace() - 2.0 * cross;
    clamp_nonneg(value, WASSERSTEIN_CLAMP, "2-Wasserstein distance")
}

/// Unit-normalized copies of every descriptor; zero vectors stay zero.
pub(crate) fn normalized(d: &DescriptorSet) -> Vec<Vec<f64>> {
    d.iter()
        .map(|x| {
            let norm = math::sqrt(linalg::dot(x, x));
            if norm == 0.0 {
                alloc::vec![0.0; x.len()]
            } else {
                x.iter().map(|v| v / norm).collect()
            }
        })
        .collect()
}

/// Per query row: the selected class-pool indices (best first) and cosines.
pub(crate) struct I2cDetail {
    pub value: f64,
    pub selected: Vec<Vec<(usize, f64)>>,
}

pub(crate) fn i2c_detail(
    query: &DescriptorSet,
    class_pool: &DescriptorSet,
    k: usize,
) -> Result<I2cDetail> {
    linalg::check_dim(query.dim(), class_pool.dim())?;
    if k == 0 {
        return Err(Error::InvalidSpec("k must be positive"));
    }
    if k > class_pool.len() {
        return Err(Error::KTooLarge {
            k,
            pool: class_pool.len(),
        });
    }
    let qn = normalized(query);
    let pn = normalized(class_pool);
    let mut selected = Vec::with_capacity(qn.len());
    let mut row_sums = Vec::with_capacity(qn.len());
    let mut row: Vec<(usize, f64)> = Vec::with_capacity(pn.len());
    for qd in &qn {
        row.clear();
        row.extend(
            pn.iter()
                .enumerate()
                .map(|(j, pd)| (j, linalg::dot(qd, pd))),
        );
        // descending cosine, lower pool index first on ties
        row.sort_unstable_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let top: Vec<(usize, f64)> = row[..k].to_vec();
        row_sums.push(top.iter().map(|t| t.1).sum::<f64>());
        selected.push(top);
    }
    // sorted reduction keeps the result independent of query descriptor order
    row_sums.sort_unstable_by(f64::total_cmp);
    Ok(I2cDetail {
        value: row_sums.iter().sum(),
        selected,
    })
}

/// Sum over query descriptors of the `k` largest cosine similarities to the
/// class pool.
pub fn i2c_similarity(query: &DescriptorSet, class_pool: &DescriptorSet, k: usize) -> Result<f64> {
    Ok(i2c_detail(query, class_pool, k)?.value)
}

/// Contrastive wrapper: `D(Q, Sᵢ) − D(Q, Sᵢ')` where `Sᵢ'` pools every other
/// class of the episode.
pub fn contrastive(
    kind: MeasureKind,
    q: &GaussianStats,
    s_i: &GaussianStats,
    s_complement: &GaussianStats,
) -> Result<f64> {
    Ok(kind.distance(q, s_i)? - kind.distance(q, s_complement)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SymMatrix;
    use alloc::vec;
    use approx::assert_abs_diff_eq;

    fn gauss(mean: &[f64], cov_diag: &[f64]) -> GaussianStats {
        GaussianStats::new(mean.to_vec(), SymMatrix::diag(cov_diag), 1).unwrap()
    }

    #[test]
    fn kl_examples() {
        let q = gauss(&[0.3, -1.0], &[2.0, 0.5]);
        assert_abs_diff_eq!(kl_divergence(&q, &q).unwrap(), 0.0, epsilon = 1e-15);

        let a = gauss(&[0.0], &[1.0]);
        let b = gauss(&[0.0], &[4.0]);
        let want = 0.5 * (0.25 + libm::log(4.0) - 1.0);
        assert_abs_diff_eq!(kl_divergence(&a, &b).unwrap(), want, epsilon = 1e-15);
        assert_abs_diff_eq!(want, 0.3181, epsilon = 1e-4);

        let q = gauss(&[0.0, 0.0], &[1.0, 1.0]);
        let s = gauss(&[1.0, 0.0], &[1.0, 1.0]);
        assert_abs_diff_eq!(kl_divergence(&q, &s).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn kl_dimension_mismatch() {
        let a = gauss(&[0.0], &[1.0]);
        let b = gauss(&[0.0, 0.0], &[1.0, 1.0]);
        assert!(matches!(
            kl_divergence(&a, &b),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn wasserstein_examples() {
        let q = gauss(&[0.3, -1.0], &[2.0, 0.5]);
        assert_eq!(wasserstein2_approx(&q, &q).unwrap(), 0.0);
        assert_abs_diff_eq!(wasserstein2_exact(&q, &q).unwrap(), 0.0, epsilon = 1e-12);

        let q = gauss(&[0.0, 0.0], &[1.0, 1.0]);
        let s = gauss(&[1.0, 0.0], &[1.0, 1.0]);
        assert_eq!(wasserstein2_approx(&q, &s).unwrap(), 1.0);
        assert_abs_diff_eq!(wasserstein2_exact(&q, &s).unwrap(), 1.0, epsilon = 1e-12);

        let q = gauss(&[0.0, 0.0], &[1.0, 4.0]);
        let s = gauss(&[0.0, 0.0], &[1.0, 1.0]);
        assert_eq!(wasserstein2_approx(&q, &s).unwrap(), 9.0);
        assert_abs_diff_eq!(wasserstein2_exact(&q, &s).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn i2c_examples() {
        let q = DescriptorSet::new(3, 2, vec![1.0, 0.0, 0.0, 2.0, 3.0, 4.0]).unwrap();
        let pool = DescriptorSet::new(4, 2, vec![5.0, 5.0, 1.0, 0.0, 0.0, 2.0, 3.0, 4.0]).unwrap();
        assert_abs_diff_eq!(i2c_similarity(&q, &pool, 1).unwrap(), 3.0, epsilon = 1e-15);

        let q = DescriptorSet::new(2, 3, vec![1.0, 0.0, 0.0, 0.0, 2.0, 0.0]).unwrap();
        let pool = DescriptorSet::new(1, 3, vec![0.0, 0.0, 5.0]).unwrap();
        assert_eq!(i2c_similarity(&q, &pool, 1).unwrap(), 0.0);

        let q = DescriptorSet::new(1, 2, vec![1.0, 0.0]).unwrap();
        let pool = DescriptorSet::new(2, 2, vec![1.0, 1.0, 0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(
            i2c_similarity(&q, &pool, 1).unwrap(),
            core::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-15
        );
    }

    #[test]
    fn i2c_errors_and_zero_norm() {
        let q = DescriptorSet::new(1, 2, vec![0.0, 0.0]).unwrap();
        let pool = DescriptorSet::new(2, 2, vec![1.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(i2c_similarity(&q, &pool, 2).unwrap(), 0.0);
        assert!(matches!(
            i2c_similarity(&q, &pool, 3),
            Err(Error::KTooLarge { k: 3, pool: 2 })
        ));
        let bad = DescriptorSet::new(1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            i2c_similarity(&bad, &pool, 1),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn contrastive_examples() {
        let q = gauss(&[0.0, 0.0], &[1.0, 1.0]);
        let a = gauss(&[1.0, 0.0], &[2.0, 1.0]);
        let b = gauss(&[-1.0, 3.0], &[1.0, 0.5]);
        assert_eq!(contrastive(MeasureKind::Kl, &q, &a, &a).unwrap(), 0.0);
        let c0 = contrastive(MeasureKind::Kl, &q, &a, &b).unwrap();
        let c1 = contrastive(MeasureKind::Kl, &q, &b, &a).unwrap();
        assert_eq!(c0, -c1);
        let self_score = contrastive(MeasureKind::Kl, &q, &q, &b).unwrap();
        assert!(self_score < 0.0);
        assert_abs_diff_eq!(self_score, -kl_divergence(&q, &b).unwrap(), epsilon = 1e-15);
        assert!(contrastive(MeasureKind::I2c, &q, &a, &b).is_err());
    }

    #[test]
    fn kind_names_round_trip() {
        for k in MeasureKind::ALL {
            assert_eq!(k.name().parse::<MeasureKind>().unwrap(), k);
        }
        assert_eq!(MeasureKind::I2c.direction(), Direction::HigherIsCloser);
        assert_eq!(MeasureKind::Kl.direction(), Direction::LowerIsCloser);
    }
}
