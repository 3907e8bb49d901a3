//! Command-line surface: `synth`, `eval`, `train`, `ablate` and `convert`.

use std::fs;
use std::path::{Path, PathBuf};

use adm_core::descriptors::SynthSpec;
use adm_core::{
    synth_gaussian_dataset, CovarianceKind, EpisodeSpec, EvalConfig, EvalReport, LabeledDataset,
    Params, Scorer, SplitRole, SplitSpec, Standardization, TrainConfig, Trainable,
};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{self, Meta};
use crate::{io, parallel, text};

#[derive(Debug, Parser)]
#[command(
    name = "adm",
    version,
    about = "Asymmetric distribution measures for few-shot classification"
)]
pub struct Cli {
    /// Seed for every random choice (required by eval, train and ablate).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Where to write the command's main artifact.
    #[arg(short, long, global = true)]
    pub output: Option<PathBuf>,
    /// Evaluation threads [default: available parallelism].
    #[arg(long, global = true, value_parser = positive)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic Gaussian-class dataset and its class split.
    Synth(SynthArgs),
    /// Evaluate one measure over random episodes.
    Eval(EvalArgs),
    /// Train the fusion head (and optionally a linear embedding).
    Train(TrainArgs),
    /// Evaluate the measure matrix on shared episodes.
    Ablate(AblateArgs),
    /// Convert the plain-text interchange format to ADMD.
    Convert(ConvertArgs),
}

fn positive(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be positive".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

fn unit_interval(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s
        .parse()
        .map_err(|e: std::num::ParseFloatError| e.to_string())?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err("must lie in [0, 1]".into())
    }
}

fn positive_f64(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s
        .parse()
        .map_err(|e: std::num::ParseFloatError| e.to_string())?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err("must be positive".into())
    }
}

fn cov_kind(s: &str) -> std::result::Result<CovarianceKind, String> {
    match s {
        "isotropic" => Ok(CovarianceKind::Isotropic),
        "diagonal-random" => Ok(CovarianceKind::DiagonalRandom),
        "random-spd" => Ok(CovarianceKind::RandomSpd),
        _ => Err("expected isotropic, diagonal-random or random-spd".into()),
    }
}

fn role(s: &str) -> std::result::Result<SplitRole, String> {
    match s {
        "train" => Ok(SplitRole::Train),
        "val" => Ok(SplitRole::Val),
        "test" => Ok(SplitRole::Test),
        _ => Err("expected train, val or test".into()),
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_parser = positive)]
    pub classes: usize,
    /// Images per class.
    #[arg(long, value_parser = positive)]
    pub images: usize,
    /// Descriptors per image.
    #[arg(long, value_parser = positive)]
    pub n: usize,
    /// Descriptor dimension.
    #[arg(long, value_parser = positive)]
    pub c: usize,
    #[arg(long, value_parser = cov_kind, default_value = "isotropic")]
    pub cov: CovarianceKind,
    /// Radius of the sphere holding the class means.
    #[arg(long, default_value_t = 3.0)]
    pub sep: f64,
    /// Training classes [default: half of them].
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub val: usize,
    /// Split JSON path [default: <output>.split.json].
    #[arg(long)]
    pub split: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// ADMD dataset.
    #[arg(long)]
    pub data: PathBuf,
    /// Split JSON [default: <data>.split.json when present, else every class].
    #[arg(long)]
    pub split: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EpisodeArgs {
    #[arg(long, value_parser = positive, default_value_t = 5)]
    pub way: usize,
    #[arg(long, value_parser = positive, default_value_t = 1)]
    pub shot: usize,
    #[arg(long, value_parser = positive, default_value_t = 15)]
    pub query: usize,
    #[arg(long, value_parser = positive, default_value_t = adm_core::model::DEFAULT_TOPK)]
    pub topk: usize,
    #[arg(long, value_parser = unit_interval, default_value_t = adm_core::DEFAULT_SHRINKAGE)]
    pub shrinkage: f64,
    /// episode-stats | running-stats | off [default: from --params, else episode-stats].
    #[arg(long)]
    pub std_mode: Option<Standardization>,
    /// Trained parameters JSON for the fused measure.
    #[arg(long)]
    pub params: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, value_parser = positive, default_value_t = adm_core::model::DEFAULT_TASKS)]
    pub tasks: usize,
    #[arg(long, value_parser = positive, default_value_t = adm_core::model::DEFAULT_REPS)]
    pub reps: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_parser = role, default_value = "test")]
    pub role: SplitRole,
    #[command(flatten)]
    pub episode: EpisodeArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// kl | wass-approx | wass-exact | i2c | adm
    #[arg(long, default_value = "kl")]
    pub measure: Scorer,
    /// Contrastive wrapper on the distribution-level measure.
    #[arg(long)]
    pub cms: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub episode: EpisodeArgs,
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_parser = positive_f64, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, value_parser = positive_f64, default_value_t = 0.5)]
    pub lr_decay: f64,
    #[arg(long, value_parser = positive, default_value_t = 10)]
    pub decay_every: usize,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, value_parser = positive, default_value_t = 200)]
    pub episodes_per_epoch: usize,
    /// fusion | fusion+embedding
    #[arg(long, default_value = "fusion")]
    pub trainable: Trainable,
    #[arg(long)]
    pub cms: bool,
    /// Loss curve JSON [default: <output>.loss.json].
    #[arg(long)]
    pub curve: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_parser = role, default_value = "test")]
    pub role: SplitRole,
    #[command(flatten)]
    pub episode: EpisodeArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// Comma-separated subset of the rows, e.g. `kl,adm`.
    #[arg(long, value_delimiter = ',', value_parser = parse_row)]
    pub rows: Option<Vec<Row>>,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// Plain-text dataset.
    pub input: PathBuf,
}

/// One ablation row: a measure with or without the contrastive wrapper.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Row {
    pub scorer: Scorer,
    pub cms: bool,
}

impl Row {
    pub const DEFAULT: [Row; 6] = [
        Row {
            scorer: Scorer::WassersteinApprox,
            cms: false,
        },
        Row {
            scorer: Scorer::WassersteinApprox,
            cms: true,
        },
        Row {
            scorer: Scorer::Kl,
            cms: false,
        },
        Row {
            scorer: Scorer::Kl,
            cms: true,
        },
        Row {
            scorer: Scorer::I2c,
            cms: false,
        },
        Row {
            scorer: Scorer::Adm,
            cms: false,
        },
    ];
}

pub fn parse_row(s: &str) -> std::result::Result<Row, String> {
    let (name, cms) = match s.strip_suffix("+cms") {
        Some(n) => (n, true),
        None => (s, false),
    };
    let scorer: Scorer = name.parse().map_err(|e: adm_core::Error| e.to_string())?;
    if cms && scorer == Scorer::I2c {
        return Err("i2c has no contrastive variant".into());
    }
    Ok(Row { scorer, cms })
}

/// One ablation row in the JSON payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblateRow {
    pub row: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblateReport {
    pub seed: u64,
    pub rows: Vec<AblateRow>,
}

fn require_seed(cli_seed: Option<u64>, cmd: &str) -> Result<u64> {
    cli_seed.ok_or_else(|| Error::Usage(format!("{cmd} requires --seed")))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

struct Loaded {
    dataset: LabeledDataset,
    split: Option<SplitSpec>,
}

impl Loaded {
    fn open(args: &DataArgs) -> Result<Self> {
        let dataset = format::load_dataset(&args.data)?;
        let split_path = match &args.split {
            Some(p) => Some(p.clone()),
            None => Some(with_suffix(&args.data, ".split.json")).filter(|p| p.exists()),
        };
        let split = split_path
            .map(|p| io::load_split(&p, &dataset))
            .transpose()?;
        Ok(Loaded { dataset, split })
    }

    fn classes(&self, role: SplitRole) -> Vec<u32> {
        match &self.split {
            Some(s) => s.role(role).to_vec(),
            None => self.dataset.class_ids().collect(),
        }
    }
}

fn load_params(episode: &EpisodeArgs) -> Result<Params> {
    let mut params = match &episode.params {
        Some(p) => {
            let params: Params = io::read_json(p)?;
            params.validate()?;
            params
        }
        None => Params::default(),
    };
    if let Some(mode) = episode.std_mode {
        params.head.mode = mode;
    }
    Ok(params)
}

fn eval_config(
    episode: &EpisodeArgs,
    run: &RunArgs,
    scorer: Scorer,
    cms: bool,
    seed: u64,
    params: Params,
) -> Result<EvalConfig> {
    let config = EvalConfig {
        scorer,
        cms,
        spec: EpisodeSpec::new(episode.way, episode.shot, episode.query)?,
        shrinkage: episode.shrinkage,
        topk: episode.topk,
        tasks: run.tasks,
        reps: run.reps,
        seed,
        params,
    };
    config.validate()?;
    Ok(config)
}

fn check_ways(classes: &[u32], way: usize) -> Result<()> {
    if classes.len() < way {
        return Err(adm_core::Error::InsufficientClasses {
            needed: way,
            available: classes.len(),
        }
        .into());
    }
    Ok(())
}

fn label(r: &EvalReport) -> String {
    let mut s = r.config.measure.to_string();
    if r.config.cms {
        s.push_str("+cms");
    }
    s
}

/// Aligned text table, one line per report.
pub fn render_table(reports: &[&EvalReport]) -> String {
    let header = ["measure", "task", "accuracy", "episodes", "seed"];
    let rows: Vec<[String; 5]> = reports
        .iter()
        .map(|r| {
            [
                label(r),
                format!("{}-way {}-shot", r.config.way, r.config.shot),
                format!("{:.2} ± {:.2}%", 100.0 * r.mean_acc, 100.0 * r.ci95),
                format!("{}×{}", r.reps, r.tasks),
                r.config.seed.to_string(),
            ]
        })
        .collect();
    let mut widths = header.map(|h| h.chars().count());
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &[&str]| -> String {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        parts.join("  ").trim_end().to_string()
    };
    let mut out = line(&header);
    out.push('\n');
    for row in &rows {
        let cells: Vec<&str> = row.iter().map(String::as_str).collect();
        out.push_str(&line(&cells));
        out.push('\n');
    }
    out
}

fn emit_json<T: Serialize>(output: Option<&Path>, value: &T) -> Result<()> {
    match output {
        Some(p) => io::write_json(p, value),
        None => {
            let text = serde_json::to_string(value).expect("report serializes");
            println!("{text}");
            Ok(())
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let workers = cli.workers.unwrap_or_else(default_workers);
    match cli.command {
        Command::Synth(a) => synth(a, cli.seed.unwrap_or(0), cli.output),
        Command::Eval(a) => {
            let seed = require_seed(cli.seed, "eval")?;
            eval(a, seed, cli.output, workers)
        }
        Command::Train(a) => {
            let seed = require_seed(cli.seed, "train")?;
            train(a, seed, cli.output, workers)
        }
        Command::Ablate(a) => {
            let seed = require_seed(cli.seed, "ablate")?;
            ablate(a, seed, cli.output, workers)
        }
        Command::Convert(a) => convert(a, cli.output),
    }
}

fn synth(a: SynthArgs, seed: u64, output: Option<PathBuf>) -> Result<()> {
    let output = output.ok_or_else(|| Error::Usage("synth requires --output".into()))?;
    if !(a.sep.is_finite() && a.sep >= 0.0) {
        return Err(Error::Usage("--sep must be finite and non-negative".into()));
    }
    let train = a.train.unwrap_or(a.classes / 2);
    if train + a.val > a.classes {
        return Err(Error::Usage("--train plus --val exceeds --classes".into()));
    }
    let spec = SynthSpec {
        classes: a.classes,
        images_per_class: a.images,
        descriptors_per_image: a.n,
        dim: a.c,
        separation: a.sep,
        covariance: a.cov,
    };
    let dataset = synth_gaussian_dataset(&spec, seed)?;
    let split = SplitSpec::by_counts(&dataset, train, a.val)?;
    format::save_dataset(&dataset, &output)?;
    let split_path = a
        .split
        .unwrap_or_else(|| with_suffix(&output, ".split.json"));
    io::write_json(&split_path, &split)?;
    let meta = Meta {
        class_names: dataset
            .class_ids()
            .map(|id| (id, format!("synth-{id}")))
            .collect(),
        extra: serde_json::json!({ "synth": spec, "seed": seed }),
    };
    format::write_meta(&output, &meta)?;

    let size = fs::metadata(&output)
        .map_err(|e| Error::io(&output, e))?
        .len();
    println!(
        "{}: {size} bytes, {} classes × {} images, n={}, c={}",
        output.display(),
        a.classes,
        a.images,
        a.n,
        a.c
    );
    println!(
        "{}: train {}, val {}, test {} classes",
        split_path.display(),
        split.train.len(),
        split.val.len(),
        split.test.len()
    );
    Ok(())
}

fn eval(a: EvalArgs, seed: u64, output: Option<PathBuf>, workers: usize) -> Result<()> {
    if a.cms && a.measure == Scorer::I2c {
        return Err(Error::Usage(
            "--cms needs a distribution-level measure".into(),
        ));
    }
    let data = Loaded::open(&a.data)?;
    let classes = data.classes(a.role);
    check_ways(&classes, a.episode.way)?;
    let config = eval_config(
        &a.episode,
        &a.run,
        a.measure,
        a.cms,
        seed,
        load_params(&a.episode)?,
    )?;
    let report = parallel::evaluate(&data.dataset, &classes, &config, workers)?;
    print!("{}", render_table(&[&report]));
    emit_json(output.as_deref(), &report)
}

fn train(a: TrainArgs, seed: u64, output: Option<PathBuf>, workers: usize) -> Result<()> {
    let output = output.unwrap_or_else(|| PathBuf::from("params.json"));
    let data = Loaded::open(&a.data)?;
    let train_classes = data.classes(SplitRole::Train);
    check_ways(&train_classes, a.episode.way)?;
    let config = TrainConfig {
        epochs: a.epochs,
        episodes_per_epoch: a.episodes_per_epoch,
        lr: a.lr,
        lr_decay: a.lr_decay,
        decay_every: a.decay_every,
        trainable: a.trainable,
        spec: EpisodeSpec::new(a.episode.way, a.episode.shot, a.episode.query)?,
        shrinkage: a.episode.shrinkage,
        topk: a.episode.topk,
        cms: a.cms,
        ..Default::default()
    };
    let init = load_params(&a.episode)?;
    let outcome = adm_core::train(&data.dataset, &train_classes, &config, init, seed)?;
    io::write_json(&output, &outcome.params)?;
    let curve_path = a
        .curve
        .unwrap_or_else(|| with_suffix(&output, ".loss.json"));
    io::write_json(&curve_path, &outcome.loss_curve)?;
    println!(
        "{}: {} epochs, final loss {}",
        output.display(),
        outcome.loss_curve.len(),
        outcome
            .loss_curve
            .last()
            .map_or("n/a".to_string(), |l| format!("{l:.6}"))
    );

    let test_classes = data.classes(SplitRole::Test);
    if test_classes.len() < a.episode.way {
        println!(
            "test split has {} classes, skipping the final evaluation",
            test_classes.len()
        );
        return Ok(());
    }
    let eval = eval_config(&a.episode, &a.run, Scorer::Adm, a.cms, seed, outcome.params)?;
    let report = parallel::evaluate(&data.dataset, &test_classes, &eval, workers)?;
    print!("{}", render_table(&[&report]));
    Ok(())
}

/// Evaluates `rows` on identical episodes.
pub fn ablate_report(
    dataset: &LabeledDataset,
    classes: &[u32],
    base: &EvalConfig,
    rows: &[Row],
    workers: usize,
) -> Result<AblateReport> {
    let rows = rows
        .iter()
        .map(|r| {
            let config = EvalConfig {
                scorer: r.scorer,
                cms: r.cms,
                ..base.clone()
            };
            let report = parallel::evaluate(dataset, classes, &config, workers)?;
            Ok(AblateRow {
                row: config.label(),
                report,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblateReport {
        seed: base.seed,
        rows,
    })
}

fn ablate(a: AblateArgs, seed: u64, output: Option<PathBuf>, workers: usize) -> Result<()> {
    let data = Loaded::open(&a.data)?;
    let classes = data.classes(a.role);
    check_ways(&classes, a.episode.way)?;
    let rows = a.rows.unwrap_or_else(|| Row::DEFAULT.to_vec());
    let base = eval_config(
        &a.episode,
        &a.run,
        Scorer::Kl,
        false,
        seed,
        load_params(&a.episode)?,
    )?;
    let report = ablate_report(&data.dataset, &classes, &base, &rows, workers)?;

    let mut sorted: Vec<&EvalReport> = report.rows.iter().map(|r| &r.report).collect();
    sorted.sort_by(|x, y| y.mean_acc.total_cmp(&x.mean_acc));
    print!("{}", render_table(&sorted));
    emit_json(output.as_deref(), &report)
}

fn convert(a: ConvertArgs, output: Option<PathBuf>) -> Result<()> {
    let output = output.ok_or_else(|| Error::Usage("convert requires --output".into()))?;
    let input = fs::read_to_string(&a.input).map_err(|e| Error::io(&a.input, e))?;
    let dataset = text::parse_text(&input).map_err(|e| match e {
        Error::Parse { line, msg } => Error::Parse {
            line,
            msg: format!("{}: {msg}", a.input.display()),
        },
        other => other,
    })?;
    format::save_dataset(&dataset, &output)?;
    let images: usize = dataset.classes().iter().map(|c| c.images.len()).sum();
    println!(
        "{}: {} classes, {images} images, c={}",
        output.display(),
        dataset.classes().len(),
        dataset.dim()
    );
    Ok(())
}
