//! `sedpipe`: weakly supervised sound event detection from the command line.

mod artifacts;
mod settings;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sedpipe_core::corpus::{
    parse_strong_labels, parse_tag_scores, parse_weak_labels, write_strong_labels, write_tag_scores, write_weak_labels,
};
use sedpipe_core::decode::decode_events;
use sedpipe_core::ensemble::fuse;
use sedpipe_core::eval::{macro_report, match_events, score_report};
use sedpipe_core::features::{featurize_clip, write_wav};
use sedpipe_core::model::{train, Example};
use sedpipe_core::pseudo_label::{build_extended_dataset, DatasetName, LabelDistribution};
use sedpipe_core::synth;
use sedpipe_core::tune::{default_grid, tune_thresholds};
use sedpipe_core::{ClassThresholds, CollarSpec, StrongEvent, TierThresholds, WeakLabel};

use artifacts::*;
use settings::Settings;

#[derive(Parser, Debug)]
#[command(
    name = "sedpipe",
    version,
    about = "Weakly supervised sound event detection pipeline"
)]
struct Cli {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one configuration key, e.g. `--set train.lr=0.003`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Worker threads for per-clip stages. Training is always single-threaded.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic tone/noise corpus with known event timings.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute log-mel + delta features for every WAV file in a directory.
    Featurize {
        #[arg(long)]
        audio: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn tagger scores for unlabeled clips into weak labels and merge them.
    Pseudolabel {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        weak: Option<PathBuf>,
        #[arg(long)]
        t1: Option<f64>,
        #[arg(long)]
        t2: Option<f64>,
        #[arg(long)]
        t3: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train the CRNN on weakly labeled clips.
    Train {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Validation labels; without them 10% of the training clips are held out.
        #[arg(long)]
        val_labels: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write frame posteriors for every feature file.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Threshold posteriors into an event list.
    Decode {
        #[arg(long)]
        posteriors: PathBuf,
        /// `class<TAB>theta` lines; defaults to `decode.threshold` for every class.
        #[arg(long)]
        thresholds: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pick per-class thresholds that maximize event-based F1 against references.
    Tune {
        #[arg(long)]
        posteriors: PathBuf,
        #[arg(long)]
        refs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Weighted average of posterior grids from several systems.
    Fuse {
        #[arg(long = "in", value_delimiter = ',', required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        weights: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Event-based scoring, or the macro average of given per-class F1 values.
    Score(ScoreArgs),
    /// Featurize, pseudo-label, train, infer, tune, decode and score in one go.
    Pipeline(PipelineArgs),
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[arg(long, required_unless_present = "from_f1", requires = "ests")]
    refs: Option<PathBuf>,
    #[arg(long)]
    ests: Option<PathBuf>,
    /// `Class<TAB>F1` rows in percent; prints the per-class table with its average.
    #[arg(long, conflicts_with_all = ["refs", "ests"])]
    from_f1: Option<PathBuf>,
    #[arg(long)]
    onset_collar: Option<f64>,
    #[arg(long)]
    offset_collar: Option<f64>,
    #[arg(long)]
    offset_rel: Option<f64>,
    /// Report file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    /// Corpus laid out by `synth`: `audio/`, `weak.tsv`, `scores.tsv`, `strong.tsv`.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    audio: Option<PathBuf>,
    #[arg(long)]
    weak: Option<PathBuf>,
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Strong references for threshold tuning and scoring.
    #[arg(long)]
    strong: Option<PathBuf>,
    #[arg(long)]
    work: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("configuring the worker pool")?;
    }
    let settings = Settings::load(cli.config.as_deref(), &cli.overrides)?;
    log::info!("config sha256={} seed={}", settings.hash(), settings.seed);
    match cli.command {
        Command::Synth { out } => cmd_synth(&settings, &out),
        Command::Featurize { audio, out } => cmd_featurize(&settings, &audio, &out),
        Command::Pseudolabel {
            scores,
            weak,
            t1,
            t2,
            t3,
            out,
            report,
        } => {
            let d = settings.tiers;
            let tiers = TierThresholds::new(t1.unwrap_or(d.t1), t2.unwrap_or(d.t2), t3.unwrap_or(d.t3))?;
            cmd_pseudolabel(&settings, &scores, weak.as_deref(), tiers, &out, report.as_deref())
        }
        Command::Train {
            features,
            labels,
            val_labels,
            out,
        } => cmd_train(&settings, &features, &labels, val_labels.as_deref(), &out),
        Command::Infer { model, features, out } => cmd_infer(&model, &features, &out),
        Command::Decode {
            posteriors,
            thresholds,
            out,
        } => cmd_decode(&settings, &posteriors, thresholds.as_deref(), &out),
        Command::Tune { posteriors, refs, out } => cmd_tune(&settings, &posteriors, &refs, &out),
        Command::Fuse { inputs, weights, out } => cmd_fuse(&inputs, &weights, &out),
        Command::Score(args) => cmd_score(&settings, &args),
        Command::Pipeline(args) => cmd_pipeline(&settings, &args),
    }
}

const SYNTH_AUDIO: &str = "audio";
const SYNTH_WEAK: &str = "weak.tsv";
const SYNTH_SCORES: &str = "scores.tsv";
const SYNTH_STRONG: &str = "strong.tsv";

fn cmd_synth(s: &Settings, out: &Path) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let clips = synth::generate(&s.synth, &mut rng)?;
    let audio = out.join(SYNTH_AUDIO);
    std::fs::create_dir_all(&audio).with_context(|| format!("creating {}", audio.display()))?;
    for c in &clips {
        let path = audio.join(&c.clip_id);
        write_wav(&path, &c.samples, s.synth.sample_rate)?;
        let bytes = std::fs::read(&path)?;
        log::info!(
            "artifact path={} bytes={} sha256={}",
            path.display(),
            bytes.len(),
            sha256_hex(&bytes)
        );
    }
    let n_weak = (s.synth_weak_fraction * clips.len() as f64).round() as usize;
    let (weak, unlabeled) = clips.split_at(n_weak.min(clips.len()));
    write_artifact(
        &out.join(SYNTH_WEAK),
        write_weak_labels(&synth::weak_labels(weak), &s.vocab).as_bytes(),
    )?;
    let scores = synth::tag_scores(unlabeled, s.vocab.len(), &mut rng);
    write_artifact(&out.join(SYNTH_SCORES), write_tag_scores(&scores, &s.vocab).as_bytes())?;
    write_artifact(
        &out.join(SYNTH_STRONG),
        write_strong_labels(&synth::strong_labels(&clips), &s.vocab).as_bytes(),
    )?;
    log::info!(
        "synth clips={} weak={} unlabeled={}",
        clips.len(),
        weak.len(),
        unlabeled.len()
    );
    Ok(())
}

fn cmd_featurize(s: &Settings, audio: &Path, out: &Path) -> Result<()> {
    let wavs = list_files(audio, "wav")?;
    if wavs.is_empty() {
        bail!("no .wav files in {}", audio.display());
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    wavs.par_iter().try_for_each(|path| -> Result<()> {
        let clip_id = path
            .file_name()
            .and_then(|n| n.to_str())
            .with_context(|| format!("non UTF-8 file name {}", path.display()))?;
        let x = featurize_clip(path, clip_id, &s.features)?;
        save_features(out, &x)
    })?;
    log::info!("featurize clips={}", wavs.len());
    Ok(())
}

fn read_weak(s: &Settings, path: &Path) -> Result<Vec<WeakLabel>> {
    parse_weak_labels(&read_text(path)?, &s.vocab).with_context(|| format!("parsing {}", path.display()))
}

fn read_strong(s: &Settings, path: &Path) -> Result<Vec<StrongEvent>> {
    parse_strong_labels(&read_text(path)?, &s.vocab).with_context(|| format!("parsing {}", path.display()))
}

fn cmd_pseudolabel(
    s: &Settings,
    scores: &Path,
    weak: Option<&Path>,
    tiers: TierThresholds,
    out: &Path,
    report: Option<&Path>,
) -> Result<()> {
    let weak = match weak {
        Some(p) => read_weak(s, p)?,
        None => Vec::new(),
    };
    let scores =
        parse_tag_scores(&read_text(scores)?, &s.vocab).with_context(|| format!("parsing {}", scores.display()))?;
    let (extended, dist) = build_extended_dataset(&weak, &scores, &tiers, s.vocab.len())?;
    write_artifact(out, write_weak_labels(&extended, &s.vocab).as_bytes())?;
    let mut table = format!("{}\n", LabelDistribution::HEADER);
    let _ = writeln!(table, "{}", LabelDistribution::tally(&weak).row("weak"));
    let _ = writeln!(table, "{}", dist.row(&DatasetName("wt", Some(tiers)).to_string()));
    match report {
        Some(p) => write_artifact(p, table.as_bytes())?,
        None => flush_stdout(&table)?,
    }
    log::info!(
        "pseudolabel weak={} accepted={} total={}",
        weak.len(),
        extended.len() - weak.len(),
        extended.len()
    );
    Ok(())
}

fn load_examples(features: &Path, labels: &[WeakLabel]) -> Result<Vec<Example>> {
    labels
        .par_iter()
        .map(|l| {
            let x = load_features(&feature_path(features, &l.clip_id)?)
                .with_context(|| format!("features for labeled clip {}", l.clip_id))?;
            Ok(Example {
                clip_id: l.clip_id.clone(),
                x: x.values,
                classes: l.classes.clone(),
            })
        })
        .collect()
}

fn cmd_train(s: &Settings, features: &Path, labels: &Path, val_labels: Option<&Path>, out: &Path) -> Result<()> {
    let train_ex = load_examples(features, &read_weak(s, labels)?)?;
    let val_ex = match val_labels {
        Some(p) => Some(load_examples(features, &read_weak(s, p)?)?),
        None => None,
    };
    let (model, history) = train(&train_ex, val_ex.as_deref(), &s.model, &s.train)?;
    save_model(out, &model)?;
    let mut tsv = String::from("epoch\ttrain_loss\tval_loss\n");
    for e in &history.epochs {
        let _ = writeln!(tsv, "{}\t{:.6}\t{:.6}", e.epoch, e.train_loss, e.val_loss);
    }
    write_artifact(&out.join("history.tsv"), tsv.as_bytes())?;
    log::info!(
        "train clips={} epochs={} best_epoch={} stopped_early={}",
        train_ex.len(),
        history.epochs.len(),
        history.best_epoch,
        history.stopped_early
    );
    Ok(())
}

fn cmd_infer(model_dir: &Path, features: &Path, out: &Path) -> Result<()> {
    let model = load_model(model_dir)?;
    let files = list_files(features, FEATURE_EXT)?;
    if files.is_empty() {
        bail!("no .{FEATURE_EXT} files in {}", features.display());
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    files.par_iter().try_for_each(|p| -> Result<()> {
        let x = load_features(p)?;
        let grid = model
            .infer(&x, x.clip_duration)
            .with_context(|| format!("inferring {}", x.clip_id))?;
        save_posterior(out, &grid)
    })?;
    log::info!("infer clips={}", files.len());
    Ok(())
}

fn read_thresholds(s: &Settings, path: Option<&Path>) -> Result<ClassThresholds> {
    match path {
        Some(p) => {
            ClassThresholds::from_tsv(&read_text(p)?, &s.vocab).with_context(|| format!("parsing {}", p.display()))
        }
        None => Ok(ClassThresholds::uniform(s.vocab.len(), s.default_threshold)),
    }
}

fn decode_all(s: &Settings, posteriors: &Path, theta: &ClassThresholds) -> Result<Vec<StrongEvent>> {
    let mut events = Vec::new();
    for g in load_posterior_dir(posteriors)? {
        if g.n_classes() != s.vocab.len() {
            bail!(
                "{} has {} classes, vocabulary has {}",
                g.clip_id,
                g.n_classes(),
                s.vocab.len()
            );
        }
        events.extend(decode_events(&g, theta, &s.decode)?);
    }
    Ok(events)
}

fn cmd_decode(s: &Settings, posteriors: &Path, thresholds: Option<&Path>, out: &Path) -> Result<()> {
    let theta = read_thresholds(s, thresholds)?;
    let events = decode_all(s, posteriors, &theta)?;
    write_artifact(out, write_strong_labels(&events, &s.vocab).as_bytes())?;
    log::info!("decode events={}", events.len());
    Ok(())
}

fn cmd_tune(s: &Settings, posteriors: &Path, refs: &Path, out: &Path) -> Result<()> {
    let grids = load_posterior_dir(posteriors)?;
    let refs = read_strong(s, refs)?;
    let theta = tune_thresholds(&grids, &refs, &default_grid(), s.vocab.len(), &s.decode, &s.collar)?;
    write_artifact(out, theta.to_tsv(&s.vocab).as_bytes())
}

fn cmd_fuse(inputs: &[PathBuf], weights: &[f64], out: &Path) -> Result<()> {
    let weights = if weights.is_empty() {
        vec![1.0 / inputs.len() as f64; inputs.len()]
    } else {
        weights.to_vec()
    };
    if weights.len() != inputs.len() {
        bail!("{} weights for {} input directories", weights.len(), inputs.len());
    }
    let first = list_files(&inputs[0], POSTERIOR_EXT)?;
    if first.is_empty() {
        bail!("no .{POSTERIOR_EXT} files in {}", inputs[0].display());
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for path in &first {
        let name = path.file_name().context("posterior file without a name")?;
        let grids = inputs
            .iter()
            .map(|dir| load_posterior(&dir.join(name)))
            .collect::<Result<Vec<_>>>()?;
        save_posterior(out, &fuse(&grids, &weights)?)?;
    }
    log::info!("fuse systems={} clips={}", inputs.len(), first.len());
    Ok(())
}

fn collar_from(s: &Settings, args: &ScoreArgs) -> CollarSpec {
    CollarSpec {
        onset_collar: args.onset_collar.unwrap_or(s.collar.onset_collar),
        offset_collar_abs: args.offset_collar.unwrap_or(s.collar.offset_collar_abs),
        offset_collar_rel: args.offset_rel.unwrap_or(s.collar.offset_collar_rel),
    }
}

/// Reads `Class<TAB>F1` rows (percent). Header and `Average` rows are skipped.
fn parse_f1_table(s: &Settings, text: &str) -> Result<Vec<f64>> {
    let mut f1 = vec![None; s.vocab.len()];
    for (i, line) in text.lines().enumerate() {
        let mut cols = line.split('\t').map(str::trim);
        let name = cols.next().unwrap_or_default();
        if name.is_empty() || name == "Class" || name == "Average" || name == "Micro" {
            continue;
        }
        let c = s
            .vocab
            .lookup(name)
            .with_context(|| format!("line {}: unknown class {name:?}", i + 1))?;
        let value: f64 = cols
            .next()
            .and_then(|v| v.parse().ok())
            .with_context(|| format!("line {}: expected class<TAB>F1", i + 1))?;
        if f1[c].replace(value / 100.0).is_some() {
            bail!("line {}: class {name} listed twice", i + 1);
        }
    }
    f1.into_iter()
        .enumerate()
        .map(|(c, v)| v.with_context(|| format!("no F1 value for {}", s.vocab.name(c))))
        .collect()
}

fn cmd_score(s: &Settings, args: &ScoreArgs) -> Result<()> {
    let report = match (&args.from_f1, &args.refs, &args.ests) {
        (Some(p), _, _) => macro_report(&s.vocab, &parse_f1_table(s, &read_text(p)?)?).render(),
        (None, Some(refs), Some(ests)) => {
            let counts = match_events(
                &read_strong(s, refs)?,
                &read_strong(s, ests)?,
                s.vocab.len(),
                &collar_from(s, args),
            );
            score_report(&s.vocab, &counts)
        }
        _ => bail!("score needs --refs and --ests, or --from-f1"),
    };
    match &args.out {
        Some(p) => write_artifact(p, report.as_bytes()),
        None => flush_stdout(&report),
    }
}

fn cmd_pipeline(s: &Settings, args: &PipelineArgs) -> Result<()> {
    let pick = |flag: &Option<PathBuf>, key: &str, corpus_name: &str| {
        flag.clone()
            .or_else(|| s.path(key))
            .or_else(|| args.corpus.as_ref().map(|c| c.join(corpus_name)))
    };
    let audio =
        pick(&args.audio, "paths.audio", SYNTH_AUDIO).context("pipeline needs --audio, paths.audio or --corpus")?;
    let weak = pick(&args.weak, "paths.weak", SYNTH_WEAK);
    let scores = pick(&args.scores, "paths.scores", SYNTH_SCORES);
    let strong = pick(&args.strong, "paths.strong", SYNTH_STRONG);
    let work = args
        .work
        .clone()
        .or_else(|| s.path("paths.work"))
        .context("pipeline needs --work or paths.work")?;
    let existing = |p: Option<PathBuf>| p.filter(|p| p.exists());
    let (weak, scores, strong) = (existing(weak), existing(scores), existing(strong));
    if weak.is_none() && scores.is_none() {
        bail!("pipeline needs weak labels or tagger scores");
    }

    write_artifact(&work.join("config.resolved"), s.resolved().render().as_bytes())?;
    let features = work.join("features");
    cmd_featurize(s, &audio, &features)?;

    let labels = work.join("labels.tsv");
    match &scores {
        Some(sc) => cmd_pseudolabel(
            s,
            sc,
            weak.as_deref(),
            s.tiers,
            &labels,
            Some(&work.join("label_report.tsv")),
        )?,
        None => {
            let w = read_weak(s, weak.as_deref().expect("checked above"))?;
            write_artifact(&labels, write_weak_labels(&w, &s.vocab).as_bytes())?;
        }
    }

    let model = work.join("model");
    cmd_train(s, &features, &labels, None, &model)?;
    let posteriors = work.join("posteriors");
    cmd_infer(&model, &features, &posteriors)?;

    let thresholds = work.join("thresholds.tsv");
    match &strong {
        Some(refs) => cmd_tune(s, &posteriors, refs, &thresholds)?,
        None => write_artifact(&thresholds, read_thresholds(s, None)?.to_tsv(&s.vocab).as_bytes())?,
    }
    let events = work.join("events.tsv");
    cmd_decode(s, &posteriors, Some(&thresholds), &events)?;

    let report = work.join("report.tsv");
    let text = match &strong {
        Some(refs) => {
            let counts = match_events(
                &read_strong(s, refs)?,
                &read_strong(s, &events)?,
                s.vocab.len(),
                &s.collar,
            );
            score_report(&s.vocab, &counts)
        }
        None => {
            let ids: BTreeSet<String> = read_strong(s, &events)?.into_iter().map(|e| e.clip_id).collect();
            format!("clips_with_events\t{}\n", ids.len())
        }
    };
    write_artifact(&report, text.as_bytes())?;
    flush_stdout(&text)
}
