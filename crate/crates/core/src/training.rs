//! Episodic training of the fusion head and, optionally, a linear embedding.
//!
//! The loss is the mean softmax cross-entropy of the fused class scores. The
//! backward pass is hand-written:
//!
//! * fusion weights, affine `γ`/`β`, and the batch standardization;
//! * the KL branch through `∂KL/∂μ_Q = Σ_S⁻¹(μ_Q − μ_S)`,
//!   `∂KL/∂Σ_Q = ½(Σ_S⁻¹ − Σ_Q⁻¹)` and the matching support-side terms, then
//!   through the shrinkage estimator to the embedding matrix (embedded moments
//!   are `Wμ` and `W S Wᵀ` of the raw moments);
//! * the image-to-class branch through the cosine values, with the top-k
//!   selection held at its forward-pass indices.
//!
//! Both query and support statistics are differentiated.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::descriptors::{DescriptorSet, LabeledDataset};
use crate::distributions::{GaussianStats, Moments, DEFAULT_SHRINKAGE};
use crate::episodes::{self, Episode, EpisodeSpec};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::math;
use crate::measures;
use crate::model::{
    mean_var, BranchScores, EmbeddedEpisode, Embedding, FusionHead, Standardization, BN_EPS,
    BN_MOMENTUM, I2C_BRANCH, KL_BRANCH,
};

pub use crate::model::Params;

/// Lower bound kept on `γ` after each optimizer step.
pub const GAMMA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Trainable {
    #[default]
    #[serde(rename = "fusion")]
    Fusion,
    #[serde(rename = "fusion+embedding")]
    FusionAndEmbedding,
}

impl Trainable {
    pub fn includes_embedding(self) -> bool {
        self == Trainable::FusionAndEmbedding
    }
}

impl core::str::FromStr for Trainable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fusion" => Ok(Trainable::Fusion),
            "fusion+embedding" => Ok(Trainable::FusionAndEmbedding),
            _ => Err(Error::InvalidSpec(
                "trainable must be fusion or fusion+embedding",
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub trainable: Trainable,
    pub spec: EpisodeSpec,
    pub shrinkage: f64,
    pub topk: usize,
    /// Contrastive wrapper on the KL branch.
    pub cms: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            episodes_per_epoch: 200,
            lr: 1e-3,
            lr_decay: 0.5,
            decay_every: 10,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            trainable: Trainable::Fusion,
            spec: EpisodeSpec::default(),
            shrinkage: DEFAULT_SHRINKAGE,
            topk: 1,
            cms: false,
        }
    }
}

impl TrainConfig {
    /// 40 epochs of 10000 episodes.
    pub fn full_scale() -> Self {
        TrainConfig {
            epochs: 40,
            episodes_per_epoch: 10_000,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidSpec("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidSpec("Adam betas must lie in [0, 1)"));
        }
        if !(self.eps_adam > 0.0) {
            return Err(Error::InvalidSpec("Adam epsilon must be positive"));
        }
        if !(self.lr_decay > 0.0) || self.decay_every == 0 {
            return Err(Error::InvalidSpec(
                "lr decay must be positive with a positive period",
            ));
        }
        if self.episodes_per_epoch == 0 {
            return Err(Error::InvalidSpec("episodes per epoch must be positive"));
        }
        if self.topk == 0 {
            return Err(Error::InvalidSpec("topk must be positive"));
        }
        if !(0.0..=1.0).contains(&self.shrinkage) {
            return Err(Error::InvalidSpec("shrinkage must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Step size during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * libm::pow(self.lr_decay, (epoch / self.decay_every) as f64)
    }
}

/// Gradients with the same layout as the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub w: [f64; 2],
    pub gamma: [f64; 2],
    pub beta: [f64; 2],
    /// `∂loss/∂W` for the embedding matrix, when requested.
    pub embedding: Option<Matrix>,
}

impl Grads {
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = Vec::new();
        v.extend_from_slice(&self.w);
        v.extend_from_slice(&self.gamma);
        v.extend_from_slice(&self.beta);
        if let Some(m) = &self.embedding {
            v.extend_from_slice(m.as_slice());
        }
        v
    }

    pub fn norm(&self) -> f64 {
        let v = self.to_vector();
        math::sqrt(linalg::dot(&v, &v))
    }
}

impl Params {
    /// Trainable parameters flattened as `w, γ, β` then the embedding matrix
    /// row-major (only when training it).
    pub fn to_vector(&self, trainable: Trainable) -> Vec<f64> {
        let mut v = Vec::new();
        v.extend_from_slice(&self.head.w);
        v.extend_from_slice(&self.head.gamma);
        v.extend_from_slice(&self.head.beta);
        if trainable.includes_embedding() {
            if let Embedding::Linear(m) = &self.embedding {
                v.extend_from_slice(m.as_slice());
            }
        }
        v
    }

    pub fn set_from_vector(&mut self, trainable: Trainable, v: &[f64]) -> Result<()> {
        let expected = self.to_vector(trainable).len();
        if v.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: v.len(),
            });
        }
        self.head.w.copy_from_slice(&v[0..2]);
        self.head.gamma.copy_from_slice(&v[2..4]);
        self.head.beta.copy_from_slice(&v[4..6]);
        if trainable.includes_embedding() {
            if let Embedding::Linear(m) = &mut self.embedding {
                m.as_mut_slice().copy_from_slice(&v[6..]);
            }
        }
        Ok(())
    }
}

/// First/second moment accumulators and step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            beta1,
            beta2,
            eps,
        }
    }

    /// `β₁ = 0.9, β₂ = 0.999, ε = 1e-8`.
    pub fn with_defaults(len: usize) -> Self {
        Self::new(len, 0.9, 0.999, 1e-8)
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::DimensionMismatch {
            expected: state.m.len(),
            actual: grads.len(),
        });
    }
    state.step += 1;
    let t = state.step as f64;
    let c1 = 1.0 - libm::pow(state.beta1, t);
    let c2 = 1.0 - libm::pow(state.beta2, t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (math::sqrt(v_hat) + state.eps);
    }
    Ok(())
}

/// Settings shared by the loss and its gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub shrinkage: f64,
    pub topk: usize,
    pub cms: bool,
}

impl From<&TrainConfig> for LossConfig {
    fn from(c: &TrainConfig) -> Self {
        LossConfig {
            shrinkage: c.shrinkage,
            topk: c.topk,
            cms: c.cms,
        }
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig::from(&TrainConfig::default())
    }
}

struct I2cCache {
    /// Per query row: selected (pool index, cosine).
    selected: Vec<Vec<(usize, f64)>>,
}

struct Forward<'e, 'a> {
    episode: &'e Episode<'a>,
    emb: EmbeddedEpisode<'a>,
    class_stats: Vec<GaussianStats>,
    comp_stats: Option<Vec<GaussianStats>>,
    query_stats: Vec<GaussianStats>,
    pools: Vec<DescriptorSet>,
    i2c: Vec<Vec<I2cCache>>,
    scores: BranchScores,
    fused: Vec<Vec<f64>>,
    loss: f64,
}

fn forward<'e, 'a>(
    episode: &'e Episode<'a>,
    params: &Params,
    cfg: &LossConfig,
) -> Result<Forward<'e, 'a>> {
    let emb = EmbeddedEpisode::new(episode, &params.embedding)?;
    let class_stats = emb.class_stats(cfg.shrinkage)?;
    let comp_stats = if cfg.cms {
        Some(emb.complement_stats(cfg.shrinkage)?)
    } else {
        None
    };
    let query_stats = emb.query_stats(cfg.shrinkage)?;
    let pools = emb.class_pools()?;

    let mut scores = BranchScores::default();
    let mut i2c = Vec::with_capacity(query_stats.len());
    for (qi, q) in query_stats.iter().enumerate() {
        let mut kl_row = Vec::with_capacity(class_stats.len());
        for (i, s) in class_stats.iter().enumerate() {
            let mut d = measures::kl_divergence(q, s)?;
            if let Some(comp) = &comp_stats {
                d -= measures::kl_divergence(q, &comp[i])?;
            }
            kl_row.push(d);
        }
        let mut i2c_row = Vec::with_capacity(pools.len());
        let mut cache_row = Vec::with_capacity(pools.len());
        for pool in &pools {
            let det = measures::i2c_detail(&emb.queries[qi], pool, cfg.topk)?;
            i2c_row.push(det.value);
            cache_row.push(I2cCache {
                selected: det.selected,
            });
        }
        scores.kl.push(kl_row);
        scores.i2c.push(i2c_row);
        i2c.push(cache_row);
    }

    let fused = crate::model::fuse_batch(&scores, &params.head)?;
    let loss = fused
        .iter()
        .zip(episode.labels())
        .map(|(f, label)| math::log_sum_exp(f) - f[label])
        .sum::<f64>()
        / fused.len() as f64;

    Ok(Forward {
        episode,
        emb,
        class_stats,
        comp_stats,
        query_stats,
        pools,
        i2c,
        scores,
        fused,
        loss,
    })
}

/// Mean cross-entropy of the fused scores and the fused scores themselves.
pub fn episode_loss(
    episode: &Episode<'_>,
    params: &Params,
    cfg: &LossConfig,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let f = forward(episode, params, cfg)?;
    Ok((f.loss, f.fused))
}

/// Cross-entropy of fused branch scores and its backward pass through the
/// fusion head.
pub struct HeadBackward {
    pub loss: f64,
    pub fused: Vec<Vec<f64>>,
    /// Head gradients; `embedding` is always `None` here.
    pub grads: Grads,
    /// `∂loss/∂kl` and `∂loss/∂i2c` per query and class.
    pub dscores: [Vec<Vec<f64>>; 2],
}

/// Loss and head gradients for a batch of branch scores with true `labels`.
pub fn head_backward(
    scores: &BranchScores,
    labels: &[usize],
    head: &FusionHead,
) -> Result<HeadBackward> {
    if scores.kl.len() != labels.len() || scores.i2c.len() != labels.len() || labels.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            actual: scores.kl.len(),
        });
    }
    let norm = head.normalizer(Some(scores))?;
    let fused = crate::model::fuse_batch(scores, head)?;
    let nq = fused.len();
    let loss = fused
        .iter()
        .zip(labels)
        .map(|(f, &label)| math::log_sum_exp(f) - f[label])
        .sum::<f64>()
        / nq as f64;

    // d loss / d fused
    let dfused: Vec<Vec<f64>> = fused
        .iter()
        .zip(labels)
        .map(|(row, &label)| {
            let lse = math::log_sum_exp(row);
            row.iter()
                .enumerate()
                .map(|(i, &v)| {
                    let p = math::exp(v - lse);
                    (p - if i == label { 1.0 } else { 0.0 }) / nq as f64
                })
                .collect()
        })
        .collect();

    let branch_x = [&scores.kl, &scores.i2c];
    let mut grads = Grads {
        w: [0.0; 2],
        gamma: [0.0; 2],
        beta: [0.0; 2],
        embedding: None,
    };
    let mut dx: [Vec<Vec<f64>>; 2] = [Vec::new(), Vec::new()];
    for b in [KL_BRANCH, I2C_BRANCH] {
        let sign = if b == KL_BRANCH { -1.0 } else { 1.0 };
        let x = branch_x[b];
        // y = standardized branch value, dy = d loss / d y
        let (z, scale) = match norm {
            None => (x.clone(), None),
            Some(n) => {
                let (m, v) = n[b];
                let s = math::sqrt(v + BN_EPS);
                let z: Vec<Vec<f64>> = x
                    .iter()
                    .map(|r| r.iter().map(|&v| (v - m) / s).collect())
                    .collect();
                (z, Some(s))
            }
        };
        let y = |q: usize, i: usize| match scale {
            None => z[q][i],
            Some(_) => head.gamma[b] * z[q][i] + head.beta[b],
        };
        let mut dy = vec![vec![0.0; dfused[0].len()]; nq];
        for q in 0..nq {
            for i in 0..dfused[q].len() {
                grads.w[b] += dfused[q][i] * sign * y(q, i);
                dy[q][i] = dfused[q][i] * sign * head.w[b];
            }
        }
        dx[b] = match scale {
            None => dy,
            Some(s) => {
                let mut dz = dy;
                for q in 0..nq {
                    for i in 0..dz[q].len() {
                        grads.gamma[b] += dz[q][i] * z[q][i];
                        grads.beta[b] += dz[q][i];
                        dz[q][i] *= head.gamma[b];
                    }
                }
                if head.mode == Standardization::EpisodeStats {
                    let n = (nq * dz[0].len()) as f64;
                    let sum_dz: f64 = dz.iter().flatten().sum();
                    let sum_dz_z: f64 = dz
                        .iter()
                        .flatten()
                        .zip(z.iter().flatten())
                        .map(|(a, b)| a * b)
                        .sum();
                    dz.iter()
                        .zip(&z)
                        .map(|(dr, zr)| {
                            dr.iter()
                                .zip(zr)
                                .map(|(&d, &zz)| (n * d - sum_dz - zz * sum_dz_z) / (n * s))
                                .collect()
                        })
                        .collect()
                } else {
                    dz.iter()
                        .map(|r| r.iter().map(|d| d / s).collect())
                        .collect()
                }
            }
        };
    }

    Ok(HeadBackward {
        loss,
        fused,
        grads,
        dscores: dx,
    })
}

/// Loss and exact gradients. The embedding gradient is returned when
/// `trainable` includes it; an identity embedding is differentiated as `W = I`.
pub fn grad(
    episode: &Episode<'_>,
    params: &Params,
    cfg: &LossConfig,
    trainable: Trainable,
) -> Result<(f64, Grads)> {
    let f = forward(episode, params, cfg)?;
    let labels: Vec<usize> = episode.labels().collect();
    let hb = head_backward(&f.scores, &labels, &params.head)?;
    let mut grads = hb.grads;
    let dx = hb.dscores;
    if trainable.includes_embedding() {
        grads.embedding = Some(embedding_grad(
            &f,
            params,
            cfg,
            &dx[KL_BRANCH],
            &dx[I2C_BRANCH],
        )?);
    }

    if grads.to_vector().iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient);
    }
    Ok((f.loss, grads))
}

/// Central finite differences of [`episode_loss`] with respect to
/// `params.to_vector(trainable)`.
pub fn numeric_grad(
    episode: &Episode<'_>,
    params: &Params,
    cfg: &LossConfig,
    trainable: Trainable,
    step: f64,
) -> Result<Vec<f64>> {
    let base = params.to_vector(trainable);
    let mut probe = params.clone();
    let mut v = base.clone();
    let mut out = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        v[i] = base[i] + step;
        probe.set_from_vector(trainable, &v)?;
        let plus = episode_loss(episode, &probe, cfg)?.0;
        v[i] = base[i] - step;
        probe.set_from_vector(trainable, &v)?;
        let minus = episode_loss(episode, &probe, cfg)?.0;
        v[i] = base[i];
        out.push((plus - minus) / (2.0 * step));
    }
    Ok(out)
}

/// Accumulated `∂loss/∂μ` and `∂loss/∂Σ` of one Gaussian summary.
struct DistGrad {
    mean: Vec<f64>,
    cov: Vec<f64>,
}

impl DistGrad {
    fn zeros(c: usize) -> Self {
        DistGrad {
            mean: vec![0.0; c],
            cov: vec![0.0; c * c],
        }
    }
}

/// Adds `g · ∂KL(Q‖S)` to the query and support accumulators.
fn kl_backward(
    q: &GaussianStats,
    s: &GaussianStats,
    q_inv: &Matrix,
    s_inv: &Matrix,
    g: f64,
    gq: &mut DistGrad,
    gs: &mut DistGrad,
) -> Result<()> {
    let c = q.dim();
    let delta: Vec<f64> = s.mean().iter().zip(q.mean()).map(|(a, b)| a - b).collect();
    let a = s_inv.matvec(&delta)?;
    let sqs = s_inv.matmul(&q.cov().to_matrix())?.matmul(s_inv)?;
    for i in 0..c {
        gq.mean[i] -= g * a[i];
        gs.mean[i] += g * a[i];
        for j in 0..c {
            let si = s_inv.get(i, j);
            gq.cov[i * c + j] += g * 0.5 * (si - q_inv.get(i, j));
            gs.cov[i * c + j] += g * 0.5 * (si - sqs.get(i, j) - a[i] * a[j]);
        }
    }
    Ok(())
}

/// Adds the embedding gradient of one summary whose raw (pre-embedding)
/// moments are `raw`, given `∂loss/∂μ` and `∂loss/∂Σ` after embedding.
fn stats_to_embedding(
    dw: &mut Matrix,
    w: &Matrix,
    raw: &Moments,
    g: &DistGrad,
    shrinkage: f64,
) -> Result<()> {
    let out = w.rows();
    let trace: f64 = (0..out).map(|i| g.cov[i * out + i]).sum();
    // gradient w.r.t. the embedded scatter W S Wᵀ, symmetrized
    let gs = Matrix::from_fn(out, out, |i, j| {
        let sym = 0.5 * (g.cov[i * out + j] + g.cov[j * out + i]);
        (1.0 - shrinkage) * sym
            + if i == j {
                shrinkage * trace / out as f64
            } else {
                0.0
            }
    });
    let ws = w.matmul(&raw.scatter.to_matrix())?;
    let term = gs.matmul(&ws)?;
    for r in 0..out {
        for col in 0..w.cols() {
            let v = dw.get(r, col) + 2.0 * term.get(r, col) + g.mean[r] * raw.mean[col];
            dw.set(r, col, v);
        }
    }
    Ok(())
}

/// `∂ cos(y, z) / ∂y` for unnormalized `y`, `z`.
fn cosine_grad(y: &[f64], z: &[f64], cos: f64) -> Option<Vec<f64>> {
    let ny = math::sqrt(linalg::dot(y, y));
    let nz = math::sqrt(linalg::dot(z, z));
    if ny == 0.0 || nz == 0.0 {
        return None;
    }
    Some(
        y.iter()
            .zip(z)
            .map(|(&yi, &zi)| (zi / nz - cos * yi / ny) / ny)
            .collect(),
    )
}

fn embedding_grad(
    f: &Forward<'_, '_>,
    params: &Params,
    cfg: &LossConfig,
    dkl: &[Vec<f64>],
    di2c: &[Vec<f64>],
) -> Result<Matrix> {
    let episode = f.episode;
    let in_dim = episode.queries[0].set.dim();
    let w = params.embedding.to_matrix(in_dim);
    let out = w.rows();
    let ways = f.class_stats.len();
    let mut dw = Matrix::zeros(out, in_dim);

    // distribution branch
    let class_inv: Vec<Matrix> = f
        .class_stats
        .iter()
        .map(|s| s.factor().inverse().to_matrix())
        .collect();
    let comp_inv: Option<Vec<Matrix>> = f.comp_stats.as_ref().map(|cs| {
        cs.iter()
            .map(|s| s.factor().inverse().to_matrix())
            .collect()
    });
    let mut class_g: Vec<DistGrad> = (0..ways).map(|_| DistGrad::zeros(out)).collect();
    let mut comp_g: Vec<DistGrad> = (0..ways).map(|_| DistGrad::zeros(out)).collect();
    for (qi, q) in f.query_stats.iter().enumerate() {
        let q_inv = q.factor().inverse().to_matrix();
        let mut qg = DistGrad::zeros(out);
        for i in 0..ways {
            let g = dkl[qi][i];
            kl_backward(
                q,
                &f.class_stats[i],
                &q_inv,
                &class_inv[i],
                g,
                &mut qg,
                &mut class_g[i],
            )?;
            if let (Some(cs), Some(ci)) = (&f.comp_stats, &comp_inv) {
                kl_backward(q, &cs[i], &q_inv, &ci[i], -g, &mut qg, &mut comp_g[i])?;
            }
        }
        let raw = Moments::of_sets([episode.queries[qi].set])?;
        stats_to_embedding(&mut dw, &w, &raw, &qg, cfg.shrinkage)?;
    }
    for i in 0..ways {
        let raw = Moments::of_sets(episode.support[i].iter().copied())?;
        stats_to_embedding(&mut dw, &w, &raw, &class_g[i], cfg.shrinkage)?;
        if f.comp_stats.is_some() {
            let rest = episode
                .support
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .flat_map(|(_, imgs)| imgs.iter().copied());
            let raw = Moments::of_sets(rest)?;
            stats_to_embedding(&mut dw, &w, &raw, &comp_g[i], cfg.shrinkage)?;
        }
    }

    // image-to-class branch
    let raw_pools: Vec<DescriptorSet> = episode
        .support
        .iter()
        .map(|imgs| DescriptorSet::concat(imgs.iter().copied()))
        .collect::<Result<_>>()?;
    let add_outer = |dw: &mut Matrix, g: &[f64], x: &[f64], scale: f64| {
        for r in 0..out {
            for col in 0..in_dim {
                let v = dw.get(r, col) + scale * g[r] * x[col];
                dw.set(r, col, v);
            }
        }
    };
    for (qi, query) in episode.queries.iter().enumerate() {
        let yq = &f.emb.queries[qi];
        for i in 0..ways {
            let g = di2c[qi][i];
            if g == 0.0 {
                continue;
            }
            for (row, sel) in f.i2c[qi][i].selected.iter().enumerate() {
                let y = yq.descriptor(row);
                for &(j, cos) in sel {
                    let z = f.pools[i].descriptor(j);
                    if let Some(gy) = cosine_grad(y, z, cos) {
                        add_outer(&mut dw, &gy, query.set.descriptor(row), g);
                    }
                    if let Some(gz) = cosine_grad(z, y, cos) {
                        add_outer(&mut dw, &gz, raw_pools[i].descriptor(j), g);
                    }
                }
            }
        }
    }
    Ok(dw)
}

/// Trained parameters and the mean loss of every epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: Params,
    pub loss_curve: Vec<f64>,
}

/// Runs `epochs × episodes_per_epoch` Adam steps on episodes drawn from
/// `split`. Episode `e` of epoch `k` uses stream `k · episodes_per_epoch + e`.
///
/// In running-stats mode the loss standardizes with the episode batch, as in
/// batch-normalization training; the running statistics are updated after
/// every step in both standardizing modes.
pub fn train(
    dataset: &LabeledDataset,
    split: &[u32],
    config: &TrainConfig,
    init: Params,
    seed: u64,
) -> Result<TrainOutcome> {
    config.validate()?;
    init.validate()?;
    let mut params = init;
    if config.trainable.includes_embedding() {
        if let Embedding::Identity = params.embedding {
            params.embedding = Embedding::Linear(Matrix::identity(dataset.dim()));
        }
    }
    let cfg = LossConfig::from(config);
    let mut state = AdamState::new(
        params.to_vector(config.trainable).len(),
        config.beta1,
        config.beta2,
        config.eps_adam,
    );
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        let mut total = 0.0;
        for e in 0..config.episodes_per_epoch {
            let index = (epoch * config.episodes_per_epoch + e) as u64;
            let mut rng = episodes::episode_stream(seed, index);
            let episode = episodes::sample_episode(dataset, split, &config.spec, &mut rng)?;

            let mut step_params = params.clone();
            if step_params.head.mode == Standardization::RunningStats {
                step_params.head.mode = Standardization::EpisodeStats;
            }
            let (loss, g) = grad(&episode, &step_params, &cfg, config.trainable)?;
            total += loss;

            if params.head.mode != Standardization::Off {
                let scores = branch_scores_for(&episode, &params, &cfg)?;
                update_running(&mut params.head, &scores);
            }

            let mut v = params.to_vector(config.trainable);
            adam_step(&mut v, &g.to_vector(), &mut state, lr)?;
            params.set_from_vector(config.trainable, &v)?;
            for gm in &mut params.head.gamma {
                *gm = gm.max(GAMMA_FLOOR);
            }
        }
        curve.push(total / config.episodes_per_epoch as f64);
    }
    Ok(TrainOutcome {
        params,
        loss_curve: curve,
    })
}

fn branch_scores_for(
    episode: &Episode<'_>,
    params: &Params,
    cfg: &LossConfig,
) -> Result<BranchScores> {
    crate::model::branch_scores(episode, &params.embedding, cfg.shrinkage, cfg.topk, cfg.cms)
}

fn update_running(head: &mut FusionHead, scores: &BranchScores) {
    for (b, rows) in [(KL_BRANCH, &scores.kl), (I2C_BRANCH, &scores.i2c)] {
        let (m, v) = mean_var(rows);
        head.running_mean[b] = (1.0 - BN_MOMENTUM) * head.running_mean[b] + BN_MOMENTUM * m;
        head.running_var[b] = (1.0 - BN_MOMENTUM) * head.running_var[b] + BN_MOMENTUM * v;
    }
}
