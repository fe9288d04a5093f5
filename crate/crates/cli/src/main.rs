use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use jbplda::container::{load_model, save_model, Model, ModelFile};
use jbplda::eval::{evaluate, read_scores, run_trials, write_scores, Scorer};
use jbplda::io::{load_dataset, read_trials, save_dataset, write_trials, VectorFormat};
use jbplda::jb::{make_pair_scorer, make_sd_transform, train_jb, JbModel, RankPolicy, SdOrdering, SetScorer};
use jbplda::lda::fit_lda;
use jbplda::plda::{
    splda_scorer, train_kaldi, train_splda, train_twocov, KaldiPldaModel, KaldiScorer, SpldaModel,
    TwoCovModel,
};
use jbplda::synth::{generate_dataset, generate_trials, Sessions, SynthSpec};
use jbplda::{Dataset, EmMode, TrainOptions, TrialLabel};

#[derive(Parser)]
#[command(name = "jbplda", version, about = "Joint Bayesian / PLDA back-end toolkit")]
struct Cli {
    /// Worker threads for E-steps and trial scoring (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a back-end model.
    Train(TrainArgs),
    /// Score a trial list with a trained model.
    Score(ScoreArgs),
    /// Compute EER, minDCF and DET points from a labeled score file.
    Eval(EvalArgs),
    /// Generate a synthetic dataset, trial list and ground-truth model.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Jb,
    Splda,
    Kaldi,
    Twocov,
    Lda,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Exact,
    Approx,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    model: ModelKind,
    /// Vector file (binary or text).
    #[arg(long)]
    data: PathBuf,
    /// `utt_id<TAB>speaker_id` label file.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Statistics used by the JB M-step.
    #[arg(long, value_enum, default_value = "exact")]
    mode: ModeArg,
    #[arg(long, default_value_t = 20)]
    iters: usize,
    /// Stop early when the relative log-likelihood change falls below this.
    #[arg(long)]
    tol: Option<f64>,
    /// SPLDA speaker subspace dimension (default: full).
    #[arg(long)]
    subspace_dim: Option<usize>,
    /// LDA output dimension (default: min(d, speakers - 1)).
    #[arg(long)]
    lda_dim: Option<usize>,
    /// Length-normalize vectors after centering.
    #[arg(long)]
    length_norm: bool,
    /// Convergence trace (default: trace.csv next to the model).
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum PathArg {
    Full,
    Sd,
    Svd,
}

#[derive(Clone, Copy, ValueEnum)]
enum OrderArg {
    Speaker,
    Noise,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    trials: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Scoring route for JB-family models.
    #[arg(long, value_enum, default_value = "full")]
    path: PathArg,
    /// Rank for `--path sd`: full, auto, tol:<t> or an integer.
    #[arg(long, default_value = "auto")]
    sd_rank: String,
    /// Rank for `--path svd`: full, auto, tol:<t> or an integer.
    #[arg(long, default_value = "auto")]
    svd_rank: String,
    /// Which end of the generalized spectrum `--path sd` keeps.
    #[arg(long, value_enum, default_value = "speaker")]
    sd_order: OrderArg,
}

#[derive(Args)]
struct EvalArgs {
    /// Score file; a fourth column may carry labels.
    #[arg(long)]
    scores: PathBuf,
    /// Labeled trial list supplying the labels.
    #[arg(long)]
    trials: Option<PathBuf>,
    /// DET points CSV.
    #[arg(long)]
    det: PathBuf,
    /// Also write the summary to this file.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Binary,
    Text,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 200)]
    speakers: usize,
    /// Sessions per speaker, or a comma list with one count per speaker.
    #[arg(long, default_value = "5")]
    sessions: String,
    /// Between-speaker eigenvalues: comma list of d values, or one value for all.
    #[arg(long)]
    mu_spectrum: Option<String>,
    /// Within-speaker eigenvalues: comma list of d values, or one value for all.
    #[arg(long)]
    eps_spectrum: Option<String>,
    #[arg(long, default_value_t = 1000)]
    targets: usize,
    #[arg(long, default_value_t = 1000)]
    nontargets: usize,
    #[arg(long, value_enum, default_value = "binary")]
    format: FormatArg,
}

/// Output files written under temporary names and renamed into place only
/// once every output succeeded.
struct Outputs {
    staged: Vec<(PathBuf, PathBuf)>,
    committed: bool,
}

impl Outputs {
    fn new() -> Self {
        Self {
            staged: Vec::new(),
            committed: false,
        }
    }

    fn stage(&mut self, target: &Path) -> Result<PathBuf> {
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        if !parent.is_dir() {
            bail!("output directory {} does not exist", parent.display());
        }
        let name = target
            .file_name()
            .with_context(|| format!("invalid output path {}", target.display()))?;
        let tmp = parent.join(format!(".{}.partial", name.to_string_lossy()));
        self.staged.push((tmp.clone(), target.to_path_buf()));
        Ok(tmp)
    }

    fn commit(mut self) -> Result<()> {
        for (tmp, target) in &self.staged {
            fs::rename(tmp, target)
                .with_context(|| format!("cannot move output into {}", target.display()))?;
        }
        self.committed = true;
        Ok(())
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if !self.committed {
            for (tmp, _) in &self.staged {
                let _ = fs::remove_file(tmp);
            }
        }
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        bail!("{what} file {} not found", path.display());
    }
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    require_file(&args.data, "vector")?;
    require_file(&args.labels, "label")?;
    if let Some(t) = args.tol {
        if !(t >= 0.0 && t.is_finite()) {
            bail!("--tol must be a nonnegative number");
        }
    }
    let is_jb = matches!(args.model, ModelKind::Jb);
    if matches!(args.mode, ModeArg::Approx) && !is_jb {
        bail!("--mode approx applies only to --model jb");
    }
    if args.subspace_dim.is_some() && !matches!(args.model, ModelKind::Splda) {
        bail!("--subspace-dim applies only to --model splda");
    }
    if args.lda_dim.is_some() && !matches!(args.model, ModelKind::Lda) {
        bail!("--lda-dim applies only to --model lda");
    }
    let mut outputs = Outputs::new();
    let model_tmp = outputs.stage(&args.out)?;
    let trace_path = match (&args.trace, args.model) {
        (_, ModelKind::Lda) => None,
        (Some(p), _) => Some(p.clone()),
        (None, _) => Some(
            args.out
                .parent()
                .map_or_else(|| PathBuf::from("trace.csv"), |p| p.join("trace.csv")),
        ),
    };
    let trace_tmp = trace_path.as_deref().map(|p| outputs.stage(p)).transpose()?;

    let raw = load_dataset(&args.data, &args.labels)?;
    let mut data = raw.center();
    if args.length_norm {
        data = data.length_normalize()?;
    }
    let options = TrainOptions {
        iterations: args.iters,
        rel_tol: args.tol,
    };
    let (model, trace) = match args.model {
        ModelKind::Jb => {
            let mode = match args.mode {
                ModeArg::Exact => EmMode::Exact,
                ModeArg::Approx => EmMode::Approx,
            };
            let (m, t) = train_jb(&data, JbModel::initialize(&data)?, mode, options)?;
            (Model::Jb(m), Some(t))
        }
        ModelKind::Splda => {
            let r = args.subspace_dim.unwrap_or(data.dim());
            let (m, t) = train_splda(&data, SpldaModel::initialize(&data, r)?, options)?;
            (Model::Splda(m), Some(t))
        }
        ModelKind::Kaldi => {
            let (m, t) = train_kaldi(&data, KaldiPldaModel::initialize(&data)?, options)?;
            (Model::Kaldi(m), Some(t))
        }
        ModelKind::Twocov => {
            let (m, t) = train_twocov(&data, TwoCovModel::initialize(&data)?, options)?;
            (Model::TwoCov(m), Some(t))
        }
        ModelKind::Lda => {
            let p = args
                .lda_dim
                .unwrap_or_else(|| data.dim().min(data.num_speakers().saturating_sub(1)));
            (Model::Lda(fit_lda(&data, p)?), None)
        }
    };
    let file = ModelFile {
        model,
        length_norm: args.length_norm,
    };
    save_model(&file, &model_tmp)?;
    if let (Some(trace), Some(path)) = (trace, trace_tmp) {
        trace.write_csv(&path)?;
    }
    outputs.commit()
}

fn jb_view(model: &Model) -> Option<JbModel> {
    match model {
        Model::Jb(m) | Model::TwoCov(TwoCovModel(m)) => Some(m.clone()),
        Model::Splda(m) => m.as_jb().ok(),
        _ => None,
    }
}

fn build_scorer(model: &Model, args: &ScoreArgs) -> Result<Box<dyn Scorer>> {
    if args.path != PathArg::Full && jb_view(model).is_none() {
        bail!(jbplda::Error::PathUnsupported(format!(
            "--path {} needs a jb, twocov or splda model",
            if args.path == PathArg::Sd { "sd" } else { "svd" }
        )));
    }
    Ok(match (args.path, model) {
        (PathArg::Full, Model::Jb(m) | Model::TwoCov(TwoCovModel(m))) => {
            Box::new(SetScorer::new(m.block_gaussian()?))
        }
        (PathArg::Full, Model::Splda(m)) => Box::new(splda_scorer(m)?),
        (PathArg::Full, Model::Kaldi(m)) => Box::new(KaldiScorer::new(m)?),
        (PathArg::Full, Model::Lda(m)) => Box::new(m.clone()),
        (PathArg::Sd, m) => {
            let policy: RankPolicy = args.sd_rank.parse()?;
            let order = match args.sd_order {
                OrderArg::Speaker => SdOrdering::SpeakerToNoise,
                OrderArg::Noise => SdOrdering::NoiseToSpeaker,
            };
            let jb = jb_view(m).expect("checked above");
            Box::new(make_sd_transform(&jb, policy, order)?)
        }
        (PathArg::Svd, m) => {
            let policy: RankPolicy = args.svd_rank.parse()?;
            let jb = jb_view(m).expect("checked above");
            Box::new(make_pair_scorer(&jb, policy)?)
        }
    })
}

fn score(args: ScoreArgs) -> Result<()> {
    require_file(&args.model, "model")?;
    require_file(&args.data, "vector")?;
    require_file(&args.labels, "label")?;
    require_file(&args.trials, "trial")?;
    let mut outputs = Outputs::new();
    let out_tmp = outputs.stage(&args.out)?;

    let file = load_model(&args.model)?;
    let trials = read_trials(&args.trials)?;
    let data: Dataset = file.prepare(&load_dataset(&args.data, &args.labels)?)?;
    let scorer = build_scorer(&file.model, &args)?;
    let scores = run_trials(scorer.as_ref(), &data, &trials)
        .with_context(|| format!("scoring {}", args.trials.display()))?;
    write_scores(&scores, &out_tmp)?;
    outputs.commit()
}

fn eval(args: EvalArgs) -> Result<()> {
    require_file(&args.scores, "score")?;
    if let Some(t) = &args.trials {
        require_file(t, "trial")?;
    }
    let mut outputs = Outputs::new();
    let det_tmp = outputs.stage(&args.det)?;
    let report_tmp = args.report.as_deref().map(|p| outputs.stage(p)).transpose()?;

    let mut scores = read_scores(&args.scores)?;
    if let Some(t) = &args.trials {
        scores.attach_labels(&read_trials(t)?);
    }
    let unlabeled = scores.count(TrialLabel::Unlabeled);
    if unlabeled > 0 {
        bail!("{unlabeled} scores have no label (pass --trials with a labeled trial list)");
    }
    let report = evaluate(&scores)?;
    report.write_det_csv(&det_tmp)?;
    let summary = report.summary();
    if let Some(path) = report_tmp {
        fs::write(&path, &summary).with_context(|| format!("writing {}", path.display()))?;
    }
    outputs.commit()?;
    print!("{summary}");
    Ok(())
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| anyhow::anyhow!("invalid {what} entry `{v}`"))
        })
        .collect()
}

fn spectrum(text: Option<&str>, dim: usize, default: impl Fn(usize) -> f64, what: &str) -> Result<Vec<f64>> {
    let Some(text) = text else {
        return Ok((0..dim).map(default).collect());
    };
    let values: Vec<f64> = parse_list(text, what)?;
    match values.len() {
        1 => Ok(vec![values[0]; dim]),
        n if n == dim => Ok(values),
        n => bail!("{what} has {n} entries, expected 1 or {dim}"),
    }
}

fn synth(args: SynthArgs) -> Result<()> {
    if args.dim == 0 || args.speakers == 0 {
        bail!("--dim and --speakers must be positive");
    }
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let counts: Vec<usize> = parse_list(&args.sessions, "--sessions")?;
    let sessions = match counts.as_slice() {
        [m] => Sessions::Fixed(*m),
        _ => Sessions::PerSpeaker(counts),
    };
    let d = args.dim;
    let spec = SynthSpec {
        dim: d,
        n_speakers: args.speakers,
        sessions,
        // linearly decaying speaker spectrum from 2 down to 2/d
        mu_spectrum: spectrum(args.mu_spectrum.as_deref(), d, |k| 2.0 * (d - k) as f64 / d as f64, "--mu-spectrum")?,
        eps_spectrum: spectrum(args.eps_spectrum.as_deref(), d, |_| 1.0, "--eps-spectrum")?,
        seed: args.seed,
    };
    spec.validate()?;

    let (data_name, format) = match args.format {
        FormatArg::Binary => ("data.gvb", VectorFormat::Binary),
        FormatArg::Text => ("data.txt", VectorFormat::Text),
    };
    let mut outputs = Outputs::new();
    let data_tmp = outputs.stage(&args.out_dir.join(data_name))?;
    let labels_tmp = outputs.stage(&args.out_dir.join("labels.tsv"))?;
    let trials_tmp = outputs.stage(&args.out_dir.join("trials.tsv"))?;
    let truth_tmp = outputs.stage(&args.out_dir.join("truth.mdl"))?;

    let generated = generate_dataset(&spec)?;
    let trials = generate_trials(&generated.dataset, args.targets, args.nontargets, args.seed)?;
    save_dataset(&generated.dataset, &data_tmp, &labels_tmp, format)?;
    write_trials(&trials, &trials_tmp)?;
    let truth = JbModel::centered(generated.s_mu, generated.s_eps)?;
    save_model(&ModelFile::new(Model::Jb(truth)), &truth_tmp)?;
    outputs.commit()
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be positive");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    match cli.command {
        Command::Train(a) => train(a),
        Command::Score(a) => score(a),
        Command::Eval(a) => eval(a),
        Command::Synth(a) => synth(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
