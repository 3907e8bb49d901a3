//! Scoring head: per-query branch scores, per-branch standardization, the
//! learnable KL / image-to-class fusion, nearest-neighbor classification and
//! episodic evaluation.
//!
//! The fusion `−w₁·KL + w₂·I2C` is applied directly as a weighted sum; it is
//! the same map as a shared two-tap kernel sliding over the concatenated
//! `[kl; i2c]` vector with dilation `C`.

use alloc::borrow::Cow;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::descriptors::{DescriptorSet, LabeledDataset};
use crate::distributions::{self, GaussianStats, DEFAULT_SHRINKAGE};
use crate::episodes::{self, Episode, EpisodeSpec};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::math;
use crate::measures::{self, MeasureKind};

/// Variance floor inside the standardization, as in batch normalization.
pub const BN_EPS: f64 = 1e-5;
/// Weight of the newest batch in the running statistics.
pub const BN_MOMENTUM: f64 = 0.1;
pub const DEFAULT_TASKS: usize = 1000;
pub const DEFAULT_REPS: usize = 5;
pub const DEFAULT_TOPK: usize = 1;

/// Per-descriptor embedding applied before any measure.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Embedding {
    #[default]
    Identity,
    /// `out × in` matrix applied to each descriptor.
    Linear(Matrix),
}

impl Embedding {
    pub fn linear(m: Matrix) -> Result<Self> {
        if m.rows() == 0 || m.cols() == 0 {
            return Err(Error::InvalidSpec("embedding matrix must be non-empty"));
        }
        if !m.is_finite() {
            return Err(Error::NonFinite("embedding matrix"));
        }
        Ok(Embedding::Linear(m))
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Embedding::Identity => Ok(()),
            Embedding::Linear(m) => {
                if m.as_slice().len() != m.rows() * m.cols() {
                    return Err(Error::DimensionMismatch {
                        expected: m.rows() * m.cols(),
                        actual: m.as_slice().len(),
                    });
                }
                Embedding::linear(m.clone()).map(|_| ())
            }
        }
    }

    pub fn out_dim(&self, in_dim: usize) -> usize {
        match self {
            Embedding::Identity => in_dim,
            Embedding::Linear(m) => m.rows(),
        }
    }

    pub fn apply<'a>(&self, d: &'a DescriptorSet) -> Result<Cow<'a, DescriptorSet>> {
        match self {
            Embedding::Identity => Ok(Cow::Borrowed(d)),
            Embedding::Linear(m) => Ok(Cow::Owned(d.map_linear(m)?)),
        }
    }

    /// The embedding as an explicit matrix (identity becomes `I_in`).
    pub fn to_matrix(&self, in_dim: usize) -> Matrix {
        match self {
            Embedding::Identity => Matrix::identity(in_dim),
            Embedding::Linear(m) => m.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Standardization {
    /// Normalize each branch over the current episode's query batch.
    #[default]
    EpisodeStats,
    /// Normalize with statistics accumulated during training.
    RunningStats,
    Off,
}

impl Standardization {
    pub fn name(self) -> &'static str {
        match self {
            Standardization::EpisodeStats => "episode-stats",
            Standardization::RunningStats => "running-stats",
            Standardization::Off => "off",
        }
    }
}

impl FromStr for Standardization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Standardization::EpisodeStats,
            Standardization::RunningStats,
            Standardization::Off,
        ]
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or(Error::InvalidSpec("unknown standardization mode"))
    }
}

/// Branch index of the distribution (KL) scores.
pub const KL_BRANCH: usize = 0;
/// Branch index of the image-to-class scores.
pub const I2C_BRANCH: usize = 1;

/// Fusion weights `w`, per-branch affine `γ`, `β`, and the standardization
/// mode with its running statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionHead {
    pub w: [f64; 2],
    pub gamma: [f64; 2],
    pub beta: [f64; 2],
    pub mode: Standardization,
    pub running_mean: [f64; 2],
    pub running_var: [f64; 2],
}

impl Default for FusionHead {
    fn default() -> Self {
        FusionHead {
            w: [1.0, 1.0],
            gamma: [1.0, 1.0],
            beta: [0.0, 0.0],
            mode: Standardization::EpisodeStats,
            running_mean: [0.0, 0.0],
            running_var: [1.0, 1.0],
        }
    }
}

impl FusionHead {
    pub fn with_mode(mode: Standardization) -> Self {
        FusionHead {
            mode,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = self
            .w
            .iter()
            .chain(&self.gamma)
            .chain(&self.beta)
            .chain(&self.running_mean)
            .chain(&self.running_var);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("fusion head"));
        }
        if self.gamma.iter().any(|&g| g <= 0.0) {
            return Err(Error::InvalidSpec("fusion gamma must be positive"));
        }
        if self.running_var.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidSpec("running variance must be non-negative"));
        }
        Ok(())
    }

    /// Per-branch `(mean, variance)` the standardization subtracts and divides
    /// by, or `None` in `Off` mode.
    pub fn normalizer(&self, context: Option<&BranchScores>) -> Result<Option<[(f64, f64); 2]>> {
        match self.mode {
            Standardization::Off => Ok(None),
            Standardization::RunningStats => Ok(Some([
                (self.running_mean[0], self.running_var[0]),
                (self.running_mean[1], self.running_var[1]),
            ])),
            Standardization::EpisodeStats => context
                .map(|c| Some(c.batch_stats()))
                .ok_or(Error::MissingContext),
        }
    }

    fn fuse_with(&self, kl: &[f64], i2c: &[f64], norm: Option<[(f64, f64); 2]>) -> Vec<f64> {
        let standardize = |x: f64, b: usize| match norm {
            None => x,
            Some(n) => {
                let (m, v) = n[b];
                self.gamma[b] * (x - m) / math::sqrt(v + BN_EPS) + self.beta[b]
            }
        };
        kl.iter()
            .zip(i2c)
            .map(|(&k, &s)| {
                -self.w[0] * standardize(k, KL_BRANCH) + self.w[1] * standardize(s, I2C_BRANCH)
            })
            .collect()
    }
}

/// Model parameters: embedding plus fusion head.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Params {
    pub embedding: Embedding,
    pub head: FusionHead,
}

impl Params {
    pub fn validate(&self) -> Result<()> {
        self.embedding.validate()?;
        self.head.validate()
    }
}

/// Per-query class score vectors for the distribution branch (`kl`) and the
/// image-to-class branch (`i2c`).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BranchScores {
    pub kl: Vec<Vec<f64>>,
    pub i2c: Vec<Vec<f64>>,
}

impl BranchScores {
    /// `(mean, biased variance)` of every entry of each branch over the batch.
    pub fn batch_stats(&self) -> [(f64, f64); 2] {
        [mean_var(&self.kl), mean_var(&self.i2c)]
    }
}

pub(crate) fn mean_var(rows: &[Vec<f64>]) -> (f64, f64) {
    let n: usize = rows.iter().map(Vec::len).sum();
    if n == 0 {
        return (0.0, 1.0);
    }
    let mean = rows.iter().flatten().sum::<f64>() / n as f64;
    let var = rows
        .iter()
        .flatten()
        .map(|x| (x - mean) * (x - mean))
        .sum::<f64>()
        / n as f64;
    (mean, var)
}

/// Support, complement and query summaries of one episode after embedding.
pub(crate) struct EmbeddedEpisode<'a> {
    pub support: Vec<Vec<Cow<'a, DescriptorSet>>>,
    pub queries: Vec<Cow<'a, DescriptorSet>>,
}

impl<'a> EmbeddedEpisode<'a> {
    pub fn new(episode: &Episode<'a>, embedding: &Embedding) -> Result<Self> {
        let support = episode
            .support
            .iter()
            .map(|imgs| imgs.iter().map(|d| embedding.apply(d)).collect())
            .collect::<Result<_>>()?;
        let queries = episode
            .queries
            .iter()
            .map(|q| embedding.apply(q.set))
            .collect::<Result<_>>()?;
        Ok(EmbeddedEpisode { support, queries })
    }

    fn support_refs(&self) -> Vec<Vec<&DescriptorSet>> {
        self.support
            .iter()
            .map(|imgs| imgs.iter().map(|d| d.as_ref()).collect())
            .collect()
    }

    pub fn class_stats(&self, shrinkage: f64) -> Result<Vec<GaussianStats>> {
        self.support_refs()
            .iter()
            .map(|imgs| distributions::pool_class_stats(imgs, shrinkage))
            .collect()
    }

    pub fn complement_stats(&self, shrinkage: f64) -> Result<Vec<GaussianStats>> {
        let refs = self.support_refs();
        (0..refs.len())
            .map(|i| distributions::pool_complement_stats(&refs, i, shrinkage))
            .collect()
    }

    pub fn query_stats(&self, shrinkage: f64) -> Result<Vec<GaussianStats>> {
        self.queries
            .iter()
            .map(|q| distributions::estimate_stats(q, shrinkage))
            .collect()
    }

    pub fn class_pools(&self) -> Result<Vec<DescriptorSet>> {
        self.support
            .iter()
            .map(|imgs| DescriptorSet::concat(imgs.iter().map(|d| d.as_ref())))
            .collect()
    }
}

/// Distribution-level scores `D(Qⱼ, Sᵢ)` (or the contrastive version) for every
/// query `j` and class `i`.
pub fn distance_scores(
    episode: &Episode<'_>,
    embedding: &Embedding,
    shrinkage: f64,
    kind: MeasureKind,
    cms: bool,
) -> Result<Vec<Vec<f64>>> {
    let emb = EmbeddedEpisode::new(episode, embedding)?;
    distance_scores_embedded(&emb, shrinkage, kind, cms)
}

fn distance_scores_embedded(
    emb: &EmbeddedEpisode<'_>,
    shrinkage: f64,
    kind: MeasureKind,
    cms: bool,
) -> Result<Vec<Vec<f64>>> {
    if !kind.is_distribution_level() {
        return Err(Error::InvalidSpec(
            "distance scores need a distribution-level measure",
        ));
    }
    let classes = emb.class_stats(shrinkage)?;
    let complements = if cms {
        Some(emb.complement_stats(shrinkage)?)
    } else {
        None
    };
    emb.query_stats(shrinkage)?
        .iter()
        .map(|q| {
            let root = match kind {
                MeasureKind::WassersteinExact => Some(linalg::sqrtm_psd(q.cov())?.to_matrix()),
                _ => None,
            };
            let dist = |s: &GaussianStats| match &root {
                Some(r) => measures::wasserstein2_exact_rooted(q, r, s),
                None => kind.distance(q, s),
            };
            classes
                .iter()
                .enumerate()
                .map(|(i, s)| match &complements {
                    Some(comp) => Ok(dist(s)? - dist(&comp[i])?),
                    None => dist(s),
                })
                .collect()
        })
        .collect()
}

/// Image-to-class similarities for every query and class.
pub fn i2c_scores(episode: &Episode<'_>, embedding: &Embedding, k: usize) -> Result<Vec<Vec<f64>>> {
    let emb = EmbeddedEpisode::new(episode, embedding)?;
    i2c_scores_embedded(&emb, k)
}

fn i2c_scores_embedded(emb: &EmbeddedEpisode<'_>, k: usize) -> Result<Vec<Vec<f64>>> {
    let pools = emb.class_pools()?;
    emb.queries
        .iter()
        .map(|q| {
            pools
                .iter()
                .map(|p| measures::i2c_similarity(q, p, k))
                .collect()
        })
        .collect()
}

/// KL (optionally contrastive) and image-to-class scores for every query.
pub fn branch_scores(
    episode: &Episode<'_>,
    embedding: &Embedding,
    shrinkage: f64,
    k: usize,
    cms: bool,
) -> Result<BranchScores> {
    let emb = EmbeddedEpisode::new(episode, embedding)?;
    Ok(BranchScores {
        kl: distance_scores_embedded(&emb, shrinkage, MeasureKind::Kl, cms)?,
        i2c: i2c_scores_embedded(&emb, k)?,
    })
}

/// `−w₁·std(kl) + w₂·std(i2c)` for one query. `context` is the whole episode's
/// batch, required in episode-stats mode.
pub fn fuse(
    kl: &[f64],
    i2c: &[f64],
    head: &FusionHead,
    context: Option<&BranchScores>,
) -> Result<Vec<f64>> {
    if kl.len() != i2c.len() {
        return Err(Error::DimensionMismatch {
            expected: kl.len(),
            actual: i2c.len(),
        });
    }
    let norm = head.normalizer(context)?;
    Ok(head.fuse_with(kl, i2c, norm))
}

/// Fuses every query of a batch, using the batch itself as context.
pub fn fuse_batch(scores: &BranchScores, head: &FusionHead) -> Result<Vec<Vec<f64>>> {
    let norm = head.normalizer(Some(scores))?;
    scores
        .kl
        .iter()
        .zip(&scores.i2c)
        .map(|(k, s)| {
            if k.len() != s.len() {
                return Err(Error::DimensionMismatch {
                    expected: k.len(),
                    actual: s.len(),
                });
            }
            Ok(head.fuse_with(k, s, norm))
        })
        .collect()
}

/// Nearest-neighbor decision: index of the largest score, lowest index on ties.
pub fn classify(fused: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in fused.iter().enumerate().skip(1) {
        if v > fused[best] {
            best = i;
        }
    }
    best
}

/// What an evaluation scores queries with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scorer {
    #[serde(rename = "kl")]
    Kl,
    #[serde(rename = "wass-approx")]
    WassersteinApprox,
    #[serde(rename = "wass-exact")]
    WassersteinExact,
    #[serde(rename = "i2c")]
    I2c,
    /// Fused KL and image-to-class scores.
    #[serde(rename = "adm")]
    Adm,
}

impl Scorer {
    pub const ALL: [Scorer; 5] = [
        Scorer::Kl,
        Scorer::WassersteinApprox,
        Scorer::WassersteinExact,
        Scorer::I2c,
        Scorer::Adm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scorer::Kl => "kl",
            Scorer::WassersteinApprox => "wass-approx",
            Scorer::WassersteinExact => "wass-exact",
            Scorer::I2c => "i2c",
            Scorer::Adm => "adm",
        }
    }

    pub fn measure_kind(self) -> Option<MeasureKind> {
        match self {
            Scorer::Kl => Some(MeasureKind::Kl),
            Scorer::WassersteinApprox => Some(MeasureKind::WassersteinApprox),
            Scorer::WassersteinExact => Some(MeasureKind::WassersteinExact),
            Scorer::I2c => Some(MeasureKind::I2c),
            Scorer::Adm => None,
        }
    }
}

impl fmt::Display for Scorer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scorer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scorer::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or(Error::InvalidSpec("unknown measure"))
    }
}

/// Everything an evaluation run needs besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub scorer: Scorer,
    /// Contrastive wrapper on the distribution-level branch.
    pub cms: bool,
    pub spec: EpisodeSpec,
    pub shrinkage: f64,
    pub topk: usize,
    pub tasks: usize,
    pub reps: usize,
    pub seed: u64,
    pub params: Params,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            scorer: Scorer::Kl,
            cms: false,
            spec: EpisodeSpec::default(),
            shrinkage: DEFAULT_SHRINKAGE,
            topk: DEFAULT_TOPK,
            tasks: DEFAULT_TASKS,
            reps: DEFAULT_REPS,
            seed: 0,
            params: Params::default(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.tasks == 0 || self.reps == 0 {
            return Err(Error::InvalidSpec("tasks and reps must be positive"));
        }
        if self.topk == 0 {
            return Err(Error::InvalidSpec("topk must be positive"));
        }
        if !(0.0..=1.0).contains(&self.shrinkage) {
            return Err(Error::InvalidSpec("shrinkage must lie in [0, 1]"));
        }
        if self.cms && self.scorer == Scorer::I2c {
            return Err(Error::InvalidSpec(
                "the contrastive wrapper needs a distribution-level measure",
            ));
        }
        self.params.validate()
    }

    /// Row label such as `kl+cms`.
    pub fn label(&self) -> String {
        let mut s = String::from(self.scorer.name());
        if self.cms {
            s.push_str("+cms");
        }
        s
    }

    /// Stream index of task `t` in repetition `rep`.
    pub fn stream_index(rep: usize, t: usize) -> u64 {
        ((rep as u64) << 32) | t as u64
    }
}

/// Predicted episode-local label for every query of `episode`.
pub fn predict_episode(episode: &Episode<'_>, config: &EvalConfig) -> Result<Vec<usize>> {
    let emb = EmbeddedEpisode::new(episode, &config.params.embedding)?;
    match config.scorer {
        Scorer::Adm => {
            let scores = BranchScores {
                kl: distance_scores_embedded(&emb, config.shrinkage, MeasureKind::Kl, config.cms)?,
                i2c: i2c_scores_embedded(&emb, config.topk)?,
            };
            Ok(fuse_batch(&scores, &config.params.head)?
                .iter()
                .map(|f| classify(f))
                .collect())
        }
        Scorer::I2c => Ok(i2c_scores_embedded(&emb, config.topk)?
            .iter()
            .map(|s| classify(s))
            .collect()),
        other => {
            let kind = other.measure_kind().expect("distribution scorer");
            Ok(
                distance_scores_embedded(&emb, config.shrinkage, kind, config.cms)?
                    .iter()
                    .map(|d| argmin(d))
                    .collect(),
            )
        }
    }
}

/// Index of the smallest distance, lowest index on ties.
pub fn argmin(d: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in d.iter().enumerate().skip(1) {
        if v < d[best] {
            best = i;
        }
    }
    best
}

/// Fraction of correctly classified queries in one episode.
pub fn episode_accuracy(episode: &Episode<'_>, config: &EvalConfig) -> Result<f64> {
    let preds = predict_episode(episode, config)?;
    let correct = preds
        .iter()
        .zip(episode.labels())
        .filter(|(p, l)| **p == *l)
        .count();
    Ok(correct as f64 / preds.len() as f64)
}

/// Samples task `t` of repetition `rep` and scores it.
pub fn task_accuracy(
    dataset: &LabeledDataset,
    split: &[u32],
    config: &EvalConfig,
    rep: usize,
    t: usize,
) -> Result<f64> {
    let mut rng = episodes::episode_stream(config.seed, EvalConfig::stream_index(rep, t));
    let episode = episodes::sample_episode(dataset, split, &config.spec, &mut rng)?;
    episode_accuracy(&episode, config)
}

/// Mean and 95% half-width `1.96·σ/√n`, σ the sample standard deviation.
pub fn summarize_accuracies(accs: &[f64]) -> (f64, f64) {
    let n = accs.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = accs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * math::sqrt(var) / math::sqrt(n as f64))
}

/// Echo of the evaluation settings inside a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub measure: Scorer,
    pub cms: bool,
    pub way: usize,
    pub shot: usize,
    pub query: usize,
    pub shrinkage: f64,
    pub topk: usize,
    pub seed: u64,
    pub standardization: Standardization,
}

/// Mean top-1 accuracy over all tasks with its 95% confidence half-width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_acc: f64,
    pub ci95: f64,
    pub tasks: usize,
    pub reps: usize,
    pub config: ReportConfig,
}

impl EvalReport {
    pub fn from_accuracies(accs: &[f64], config: &EvalConfig) -> Self {
        let (mean_acc, ci95) = summarize_accuracies(accs);
        EvalReport {
            mean_acc,
            ci95,
            tasks: config.tasks,
            reps: config.reps,
            config: ReportConfig {
                measure: config.scorer,
                cms: config.cms,
                way: config.spec.ways,
                shot: config.spec.shots,
                query: config.spec.queries,
                shrinkage: config.shrinkage,
                topk: config.topk,
                seed: config.seed,
                standardization: config.params.head.mode,
            },
        }
    }
}

/// Sequential evaluation: `reps × tasks` episodes, one accuracy each, in
/// `(rep, task)` order.
pub fn task_accuracies(
    dataset: &LabeledDataset,
    split: &[u32],
    config: &EvalConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    let mut out = Vec::with_capacity(config.reps * config.tasks);
    for rep in 0..config.reps {
        for t in 0..config.tasks {
            out.push(task_accuracy(dataset, split, config, rep, t)?);
        }
    }
    Ok(out)
}

pub fn evaluate(
    dataset: &LabeledDataset,
    split: &[u32],
    config: &EvalConfig,
) -> Result<EvalReport> {
    let accs = task_accuracies(dataset, split, config)?;
    Ok(EvalReport::from_accuracies(&accs, config))
}
