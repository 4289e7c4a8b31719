//! Command implementations behind the `amix` binary.
//!
//! Each `cmd_*` function takes its parsed arguments, writes its artifacts and
//! returns the text it would print, so the commands can be driven from tests
//! without spawning a process.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use acoustic_mixup::data::{load_dataset, save_dataset, UTT_ASPECTS};
use acoustic_mixup::gop::{assemble_gop, load_alignment, Posteriorgram};
use acoustic_mixup::metrics::{
    aggregate_runs, evaluate, render_aggregate_table, render_table, AggregateReport,
};
use acoustic_mixup::mixup::{LambdaSource, MixMode, MixupConfig};
use acoustic_mixup::report::{mix_preview, Histogram, MixPreview};
use acoustic_mixup::scorer::{
    train, AdamConfig, Checkpoint, EpochStats, ErMode, ModelParams, TrainConfig,
};
use acoustic_mixup::synth::{gen_synthetic, SynthConfig};
use acoustic_mixup::{Record, Report};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "amix",
    version,
    about = "Acoustic feature mixup for pronunciation scoring"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic JSONL dataset.
    Synth(SynthArgs),
    /// Mix a dataset once and histogram original vs mixed utterance totals.
    MixPreview(PreviewArgs),
    /// Train a scorer; writes checkpoint.json and history.csv.
    Train(TrainArgs),
    /// Evaluate a checkpoint; writes report.json.
    Eval(EvalArgs),
    /// Train and evaluate every entry of a plan with shared seeds.
    Ablate(AblateArgs),
    /// Build an L×84 GOP matrix from a posteriorgram and an alignment.
    Gop(GopArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    None,
    Static,
    Dynamic,
    ReversedDynamic,
}

impl ModeArg {
    fn mix_mode(self) -> Option<MixMode> {
        match self {
            ModeArg::None => None,
            ModeArg::Static => Some(MixMode::Static),
            ModeArg::Dynamic => Some(MixMode::Dynamic),
            ModeArg::ReversedDynamic => Some(MixMode::ReversedDynamic),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LambdaSourceArg {
    Beta,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ErArg {
    None,
    Cer,
    Mer,
    Both,
}

impl From<ErArg> for ErMode {
    fn from(e: ErArg) -> Self {
        match e {
            ErArg::None => ErMode::None,
            ErArg::Cer => ErMode::Cer,
            ErArg::Mer => ErMode::Mer,
            ErArg::Both => ErMode::Both,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct LambdaArgs {
    #[arg(long, value_enum, default_value = "beta")]
    pub lambda_source: LambdaSourceArg,
    /// Beta(alpha, alpha) parameter.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Fixed coefficient used with `--lambda-source fixed`.
    #[arg(long, default_value_t = MixupConfig::DEFAULT_FIXED_LAMBDA)]
    pub lambda: f64,
}

impl LambdaArgs {
    fn source(&self) -> LambdaSource {
        match self.lambda_source {
            LambdaSourceArg::Beta => LambdaSource::Beta { alpha: self.alpha },
            LambdaSourceArg::Fixed => LambdaSource::Fixed {
                lambda: self.lambda,
            },
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// JSON synthesis config; unspecified fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config's utterance count.
    #[arg(long)]
    pub n: Option<usize>,
    /// Use a uniform profile instead of the configured one.
    #[arg(long)]
    pub balanced: bool,
}

#[derive(Debug, Clone, Args)]
pub struct PreviewArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Mixing mode; every mode when omitted.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[command(flatten)]
    pub lambda: LambdaArgs,
    #[arg(long, default_value_t = 25)]
    pub batch_size: usize,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "none")]
    pub mode: ModeArg,
    #[command(flatten)]
    pub lambda: LambdaArgs,
    #[arg(long, value_enum, default_value = "none")]
    pub er: ErArg,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 25)]
    pub batch_size: usize,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Directory for report.json; only the table is printed when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    /// Training set.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Held-out set; the training set is evaluated when omitted.
    #[arg(long)]
    pub eval_dataset: Option<PathBuf>,
    /// Comma-separated `mix:er` entries, e.g. `no-mix:none,dynamic:both`.
    #[arg(long)]
    pub plan: String,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Runs per entry; run `r` uses seed `seed + r` for every entry.
    #[arg(long, default_value_t = 1)]
    pub runs: usize,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Coefficient of the `static-fixed` entries.
    #[arg(long, default_value_t = MixupConfig::DEFAULT_FIXED_LAMBDA)]
    pub lambda: f64,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 25)]
    pub batch_size: usize,
}

#[derive(Debug, Clone, Args)]
pub struct GopArgs {
    /// Posteriorgram, CSV or binary.
    #[arg(long)]
    pub posteriorgram: PathBuf,
    /// Alignment CSV: phone,start,end.
    #[arg(long)]
    pub alignment: PathBuf,
    /// Output CSV, one row of 84 values per segment.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::MixPreview(a) => cmd_mix_preview(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Ablate(a) => cmd_ablate(&a),
        Command::Gop(a) => cmd_gop(&a),
    }
}

fn load(path: &Path) -> Result<Vec<Record>> {
    let records =
        load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))?;
    if records.is_empty() {
        bail!("dataset {} has no records", path.display());
    }
    Ok(records)
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    f.write_all(contents.as_ref())?;
    Ok(())
}

fn out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating directory {}", dir.display()))
}

fn to_json<S: Serialize>(value: &S) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn cmd_synth(args: &SynthArgs) -> Result<String> {
    let mut cfg: SynthConfig = match &args.config {
        Some(p) => {
            let text =
                fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing config {}", p.display()))?
        }
        None => SynthConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(n) = args.n {
        cfg.n_utterances = n;
    }
    if args.balanced {
        cfg.profile = SynthConfig::balanced_profile();
    }
    let records: Vec<Record> = gen_synthetic(&cfg)?;
    save_dataset(&args.out, &records).with_context(|| format!("writing {}", args.out.display()))?;
    let mut hist = Histogram::default();
    for r in &records {
        hist.add_original(r.scores.utt[UTT_ASPECTS - 1]);
    }
    let mut out = format!(
        "wrote {} utterances to {}\n",
        records.len(),
        args.out.display()
    );
    for (e, c) in hist.edges().windows(2).zip(&hist.original) {
        writeln!(out, "  [{:.2}, {:.2}) {c}", e[0], e[1])?;
    }
    Ok(out)
}

pub fn cmd_mix_preview(args: &PreviewArgs) -> Result<String> {
    let records = load(&args.dataset)?;
    let modes: Vec<MixMode> = match args.mode {
        None => MixMode::ALL.to_vec(),
        Some(ModeArg::None) => bail!("mix-preview needs a mixing mode, not `none`"),
        Some(m) => vec![m.mix_mode().expect("not none")],
    };
    out_dir(&args.out)?;
    let mut previews: Vec<MixPreview> = Vec::new();
    let mut out = String::new();
    for mode in modes {
        let cfg = MixupConfig::new(mode, args.lambda.source());
        let p = mix_preview(&records, &cfg, args.batch_size, args.seed)?;
        let stem = format!("mix_{}", mode.name());
        write_file(&args.out.join(format!("{stem}.csv")), p.histogram.to_csv())?;
        let title = format!("utterance total: original vs {} mixup", mode.name());
        write_file(
            &args.out.join(format!("{stem}.svg")),
            p.histogram.to_svg(&title),
        )?;
        writeln!(
            out,
            "{:<16} candidates {:>6}  accepted {:>6}  rejected {:>6}  mean {:.4} -> {}",
            mode.name(),
            p.candidates,
            p.accepted,
            p.rejected,
            p.original_mean,
            p.mixed_mean
                .map_or("n/a".to_string(), |m| format!("{m:.4}"))
        )?;
        previews.push(p);
    }
    write_file(&args.out.join("mix_preview.json"), to_json(&previews)?)?;
    Ok(out)
}

fn mixup_config(mode: ModeArg, lambda: &LambdaArgs) -> Option<MixupConfig> {
    mode.mix_mode()
        .map(|m| MixupConfig::new(m, lambda.source()))
}

fn history_csv(history: &[EpochStats]) -> String {
    let mut s = String::from("epoch,total,phone,word,utt\n");
    for h in history {
        writeln!(
            s,
            "{},{},{},{},{}",
            h.epoch, h.total, h.phone, h.word, h.utt
        )
        .expect("write to string");
    }
    s
}

pub fn cmd_train(args: &TrainArgs) -> Result<String> {
    let records = load(&args.dataset)?;
    let cfg = TrainConfig {
        adam: AdamConfig {
            lr: args.lr,
            ..AdamConfig::default()
        },
        batch_size: args.batch_size,
        epochs: args.epochs,
        seed: args.seed,
        mixup: mixup_config(args.mode, &args.lambda),
        er: args.er.into(),
    };
    let (params, history) = train(&records, &cfg)?;
    out_dir(&args.out)?;
    params
        .to_checkpoint(cfg.er)
        .save(args.out.join("checkpoint.json"))?;
    write_file(&args.out.join("history.csv"), history_csv(&history))?;
    let last = history.last().map_or("no epochs run".to_string(), |h| {
        format!("epoch {} loss {:.6}", h.epoch, h.total)
    });
    Ok(format!("trained on {} utterances: {last}\n", records.len()))
}

pub fn cmd_eval(args: &EvalArgs) -> Result<String> {
    let ckpt = Checkpoint::load(&args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    let params = ModelParams::<f64>::from_checkpoint(&ckpt)?;
    let records = load(&args.dataset)?;
    let report: Report = evaluate(&params, &records, ckpt.er_mode)?;
    if let Some(dir) = &args.out {
        out_dir(dir)?;
        write_file(&dir.join("report.json"), to_json(&report)?)?;
    }
    Ok(render_table(&[("model".to_string(), report)]))
}

/// One `mix:er` entry of an ablation plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlanEntry {
    pub mix: &'static str,
    pub er: ErMode,
}

impl PlanEntry {
    pub fn name(&self) -> String {
        format!("{}:{}", self.mix, self.er.name())
    }

    fn mixup(&self, alpha: f64, lambda: f64) -> Option<MixupConfig> {
        let beta = LambdaSource::Beta { alpha };
        match self.mix {
            "static" => Some(MixupConfig::new(MixMode::Static, beta)),
            "static-fixed" => Some(MixupConfig::new(
                MixMode::Static,
                LambdaSource::Fixed { lambda },
            )),
            "dynamic" => Some(MixupConfig::new(MixMode::Dynamic, beta)),
            "reversed-dynamic" => Some(MixupConfig::new(MixMode::ReversedDynamic, beta)),
            _ => None,
        }
    }
}

const PLAN_MIXES: [&str; 5] = [
    "no-mix",
    "static",
    "static-fixed",
    "dynamic",
    "reversed-dynamic",
];

pub fn parse_plan(plan: &str) -> Result<Vec<PlanEntry>> {
    let mut out = Vec::new();
    for raw in plan.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (mix, er) = raw.split_once(':').unwrap_or((raw, "none"));
        let Some(mix) = PLAN_MIXES.iter().copied().find(|m| *m == mix) else {
            bail!(
                "unknown plan entry `{raw}`: mix must be one of {}",
                PLAN_MIXES.join(", ")
            );
        };
        let er = match er {
            "none" | "no-er" => ErMode::None,
            "cer" => ErMode::Cer,
            "mer" => ErMode::Mer,
            "both" | "cer+mer" => ErMode::Both,
            _ => bail!("unknown plan entry `{raw}`: error rates must be none, cer, mer or both"),
        };
        out.push(PlanEntry { mix, er });
    }
    if out.is_empty() {
        bail!("empty ablation plan");
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
pub struct AblationRow {
    pub name: String,
    pub mixup: Option<MixupConfig>,
    pub er: ErMode,
    pub seeds: Vec<u64>,
    pub runs: Vec<Report>,
    pub aggregate: AggregateReport<f64>,
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<String> {
    let plan = parse_plan(&args.plan)?;
    if args.runs == 0 {
        bail!("--runs must be at least 1");
    }
    let train_set = load(&args.dataset)?;
    let eval_set = match &args.eval_dataset {
        Some(p) => load(p)?,
        None => train_set.clone(),
    };
    let seeds: Vec<u64> = (0..args.runs as u64)
        .map(|r| args.seed.wrapping_add(r))
        .collect();
    let mut rows = Vec::with_capacity(plan.len());
    for entry in &plan {
        let mixup = entry.mixup(args.alpha, args.lambda);
        let mut runs = Vec::with_capacity(seeds.len());
        for &seed in &seeds {
            let cfg = TrainConfig {
                adam: AdamConfig {
                    lr: args.lr,
                    ..AdamConfig::default()
                },
                batch_size: args.batch_size,
                epochs: args.epochs,
                seed,
                mixup,
                er: entry.er,
            };
            let (params, _) = train(&train_set, &cfg)?;
            runs.push(evaluate(&params, &eval_set, entry.er)?);
        }
        let aggregate = aggregate_runs(&runs)?;
        rows.push(AblationRow {
            name: entry.name(),
            mixup,
            er: entry.er,
            seeds: seeds.clone(),
            runs,
            aggregate,
        });
    }
    out_dir(&args.out)?;
    write_file(&args.out.join("ablation.json"), to_json(&rows)?)?;
    let table: Vec<(String, AggregateReport<f64>)> = rows
        .iter()
        .map(|r| (r.name.clone(), r.aggregate.clone()))
        .collect();
    Ok(render_aggregate_table(&table))
}

pub fn cmd_gop(args: &GopArgs) -> Result<String> {
    let pg = Posteriorgram::<f64>::load(&args.posteriorgram)
        .with_context(|| format!("loading posteriorgram {}", args.posteriorgram.display()))?;
    let segs = load_alignment(&args.alignment)
        .with_context(|| format!("loading alignment {}", args.alignment.display()))?;
    let gop = assemble_gop(&pg, &segs)?;
    let mut s = String::new();
    for row in gop.rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    write_file(&args.out, s)?;
    Ok(format!(
        "wrote {} GOP rows to {}\n",
        gop.nrows(),
        args.out.display()
    ))
}
