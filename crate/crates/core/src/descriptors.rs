//! Local-descriptor sets, labeled datasets, and the synthetic Gaussian-class
//! generator used for desk-scale experiments.
//!
//! # Random streams
//!
//! The generator uses ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with
//! `seed_from_u64(seed)`, i.e. the 64-bit seed expanded to a 256-bit key by
//! PCG32 as specified by `rand_core`. Stream 0 of that key draws every class's
//! generating parameters (class 0 first); stream `i + 1` draws the descriptors
//! of class `i`, image by image, descriptor by descriptor. Standard normals
//! come from `rand_distr::StandardNormal` and uniforms from `Rng::random::<f64>`.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, SymMatrix};
use crate::math;

/// A `c × h × w` feature tensor, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidSpec(
                "feature map dimensions must be positive",
            ));
        }
        if values.len() != channels * height * width {
            return Err(Error::DimensionMismatch {
                expected: channels * height * width,
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature map"));
        }
        Ok(FeatureMap {
            channels,
            height,
            width,
            values,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }
}

/// Unrolls a feature map into `h·w` descriptors of dimension `c`.
///
/// Descriptor `row·w + col` holds `values[k][row][col]` at component `k`.
pub fn flatten_feature_map(m: &FeatureMap) -> DescriptorSet {
    let (c, h, w) = (m.channels, m.height, m.width);
    let n = h * w;
    let mut data = Vec::with_capacity(n * c);
    for pos in 0..n {
        for k in 0..c {
            data.push(m.values[k * n + pos]);
        }
    }
    DescriptorSet { n, c, data }
}

/// `n` local descriptors of dimension `c`, stored descriptor-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorSet {
    n: usize,
    c: usize,
    data: Vec<f64>,
}

impl DescriptorSet {
    pub fn new(n: usize, c: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || c == 0 {
            return Err(Error::InvalidSpec("descriptor sets need n >= 1 and c >= 1"));
        }
        if data.len() != n * c {
            return Err(Error::DimensionMismatch {
                expected: n * c,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("descriptor set"));
        }
        Ok(DescriptorSet { n, c, data })
    }

    /// Builds a set from individual descriptors.
    pub fn from_descriptors<D: AsRef<[f64]>>(descriptors: &[D]) -> Result<Self> {
        let c = descriptors.first().map_or(0, |d| d.as_ref().len());
        let mut data = Vec::with_capacity(descriptors.len() * c);
        for d in descriptors {
            let d = d.as_ref();
            if d.len() != c {
                return Err(Error::InconsistentDim {
                    expected: c,
                    actual: d.len(),
                });
            }
            data.extend_from_slice(d);
        }
        Self::new(descriptors.len(), c, data)
    }

    /// Concatenates sets sharing one dimension, preserving order.
    pub fn concat<'a>(sets: impl IntoIterator<Item = &'a DescriptorSet>) -> Result<Self> {
        let mut it = sets.into_iter().peekable();
        let c = it.peek().map(|s| s.c).ok_or(Error::InvalidSpec(
            "cannot concatenate zero descriptor sets",
        ))?;
        let mut n = 0;
        let mut data = Vec::new();
        for s in it {
            if s.c != c {
                return Err(Error::InconsistentDim {
                    expected: c,
                    actual: s.c,
                });
            }
            n += s.n;
            data.extend_from_slice(&s.data);
        }
        Ok(DescriptorSet { n, c, data })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.c
    }

    #[inline]
    pub fn descriptor(&self, i: usize) -> &[f64] {
        &self.data[i * self.c..(i + 1) * self.c]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.c)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Applies `m` (shape `out × c`) to every descriptor.
    pub fn map_linear(&self, m: &Matrix) -> Result<DescriptorSet> {
        linalg::check_dim(m.cols(), self.c)?;
        let out = m.rows();
        let mut data = Vec::with_capacity(self.n * out);
        for d in self.iter() {
            for r in 0..out {
                data.push(linalg::dot(m.row(r), d));
            }
        }
        Ok(DescriptorSet {
            n: self.n,
            c: out,
            data,
        })
    }
}

/// One class: its dataset id and one descriptor set per image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledClass {
    pub id: u32,
    pub images: Vec<DescriptorSet>,
}

/// Classes of descriptor sets sharing one descriptor dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    dim: usize,
    classes: Vec<LabeledClass>,
}

impl LabeledDataset {
    /// Validates: at least one class, every class non-empty, one shared `c`,
    /// unique class ids.
    pub fn new(classes: Vec<LabeledClass>) -> Result<Self> {
        let first = classes
            .first()
            .ok_or(Error::InvalidSpec("dataset needs at least one class"))?;
        let dim = first
            .images
            .first()
            .ok_or(Error::InvalidSpec("every class needs at least one image"))?
            .dim();
        for (i, class) in classes.iter().enumerate() {
            if class.images.is_empty() {
                return Err(Error::InvalidSpec("every class needs at least one image"));
            }
            if classes[..i].iter().any(|o| o.id == class.id) {
                return Err(Error::InvalidSpec("duplicate class id"));
            }
            for img in &class.images {
                if img.dim() != dim {
                    return Err(Error::InconsistentDim {
                        expected: dim,
                        actual: img.dim(),
                    });
                }
            }
        }
        Ok(LabeledDataset { dim, classes })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> &[LabeledClass] {
        &self.classes
    }

    pub fn class_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.classes.iter().map(|c| c.id)
    }

    pub fn class_by_id(&self, id: u32) -> Option<&LabeledClass> {
        self.classes.iter().find(|c| c.id == id)
    }
}

/// How per-class covariances are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceKind {
    /// `Σ = I`.
    Isotropic,
    /// Diagonal with log-uniform entries in `[0.25, 4]`.
    DiagonalRandom,
    /// `QΛQᵀ`, Haar-random `Q`, log-uniform eigenvalues in `[0.25, 4]`.
    RandomSpd,
}

pub const SYNTH_EIG_MIN: f64 = 0.25;
pub const SYNTH_EIG_MAX: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: usize,
    pub images_per_class: usize,
    pub descriptors_per_image: usize,
    pub dim: usize,
    /// Radius of the sphere the class means are drawn on.
    pub separation: f64,
    pub covariance: CovarianceKind,
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.classes == 0 {
            return Err(Error::InvalidSpec("classes must be positive"));
        }
        if self.images_per_class == 0 {
            return Err(Error::InvalidSpec("images per class must be positive"));
        }
        if self.descriptors_per_image == 0 {
            return Err(Error::InvalidSpec("descriptors per image must be positive"));
        }
        if self.dim == 0 {
            return Err(Error::InvalidSpec("dimension must be positive"));
        }
        if !(self.separation.is_finite() && self.separation >= 0.0) {
            return Err(Error::InvalidSpec("separation must be finite and >= 0"));
        }
        Ok(())
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn log_uniform_eig(rng: &mut ChaCha8Rng) -> f64 {
    let (lo, hi) = (math::ln(SYNTH_EIG_MIN), math::ln(SYNTH_EIG_MAX));
    math::exp(lo + rng.random::<f64>() * (hi - lo))
}

/// Haar-distributed orthogonal matrix: Gram–Schmidt QR of a Gaussian matrix
/// with column signs fixed by `R`'s diagonal.
fn random_orthogonal(rng: &mut ChaCha8Rng, c: usize) -> Matrix {
    let mut cols: Vec<Vec<f64>> = (0..c)
        .map(|_| (0..c).map(|_| normal(rng)).collect())
        .collect();
    for j in 0..c {
        for _pass in 0..2 {
            for k in 0..j {
                let p = linalg::dot(&cols[j], &cols[k]);
                let (head, tail) = cols.split_at_mut(j);
                for (x, y) in tail[0].iter_mut().zip(&head[k]) {
                    *x -= p * y;
                }
            }
        }
        let norm = math::sqrt(linalg::dot(&cols[j], &cols[j]));
        for x in &mut cols[j] {
            *x /= norm;
        }
    }
    Matrix::from_fn(c, c, |i, j| cols[j][i])
}

/// The generating mean and covariance of every synthetic class, in class
/// order, exactly as [`synth_gaussian_dataset`] uses them.
pub fn synth_class_params(spec: &SynthSpec, seed: u64) -> Result<Vec<(Vec<f64>, SymMatrix)>> {
    spec.validate()?;
    let c = spec.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    let mut out = Vec::with_capacity(spec.classes);
    for _ in 0..spec.classes {
        let dir: Vec<f64> = (0..c).map(|_| normal(&mut rng)).collect();
        let norm = math::sqrt(linalg::dot(&dir, &dir));
        let mean: Vec<f64> = if spec.separation == 0.0 || norm == 0.0 {
            vec![0.0; c]
        } else {
            dir.iter().map(|x| spec.separation * x / norm).collect()
        };
        let cov = match spec.covariance {
            CovarianceKind::Isotropic => SymMatrix::identity(c),
            CovarianceKind::DiagonalRandom => {
                let d: Vec<f64> = (0..c).map(|_| log_uniform_eig(&mut rng)).collect();
                SymMatrix::diag(&d)
            }
            CovarianceKind::RandomSpd => {
                let q = random_orthogonal(&mut rng, c);
                let lambda: Vec<f64> = (0..c).map(|_| log_uniform_eig(&mut rng)).collect();
                SymMatrix::from_lower_fn(c, |i, j| {
                    (0..c).map(|k| q.get(i, k) * lambda[k] * q.get(j, k)).sum()
                })
            }
        };
        out.push((mean, cov));
    }
    Ok(out)
}

/// Draws a labeled dataset whose class `i` (id `i`) has descriptors i.i.d.
/// from `𝒩(μᵢ, Σᵢ)`. Values are rounded to `f32` so the dataset is exactly
/// representable in the on-disk format.
pub fn synth_gaussian_dataset(spec: &SynthSpec, seed: u64) -> Result<LabeledDataset> {
    let params = synth_class_params(spec, seed)?;
    let c = spec.dim;
    let n = spec.descriptors_per_image;
    let mut classes = Vec::with_capacity(spec.classes);
    for (i, (mean, cov)) in params.iter().enumerate() {
        let factor = linalg::cholesky(cov)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64 + 1);
        let mut z = vec![0.0; c];
        let mut images = Vec::with_capacity(spec.images_per_class);
        for _ in 0..spec.images_per_class {
            let mut data = Vec::with_capacity(n * c);
            for _ in 0..n {
                for zk in z.iter_mut() {
                    *zk = normal(&mut rng);
                }
                for r in 0..c {
                    let lz: f64 = (0..=r).map(|k| factor.get(r, k) * z[k]).sum();
                    data.push((mean[r] + lz) as f32 as f64);
                }
            }
            images.push(DescriptorSet::new(n, c, data)?);
        }
        classes.push(LabeledClass {
            id: i as u32,
            images,
        });
    }
    LabeledDataset::new(classes)
}
