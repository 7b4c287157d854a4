//! `microseg` command-line interface.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::de::DeserializeOwned;

use microseg::checkpoint::Checkpoint;
use microseg::model::{Dims, ModelConfig, SegModel, Stage, Variant};
use microseg::pipeline::{
    evaluate_branch, evaluate_soma, extract_somas, segment_cells, select, sliding_window_infer, split_indices, train_stage,
    transfer_weights, CellCrops, EvalReport, InferOptions, SomaTiles, TrainConfig, TrainSet, MIN_SOMA_SIZE, THRESHOLD,
};
use microseg::synth::{generate_dataset, load_dataset, load_sample, read_v3d, save_dataset, write_v3d, Image, SynthConfig};
use microseg::Exec;

#[derive(Parser)]
#[command(name = "microseg", version, about = "Prompt-driven 3D soma and branch segmentation")]
struct Cli {
    /// Run batch-level work on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Soma,
    Branch,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::Soma => Stage::Soma,
            StageArg::Branch => Stage::Branch,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Tiny,
    S,
    M,
    L,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Tiny => Variant::Tiny,
            VariantArg::S => Variant::S,
            VariantArg::M => Variant::M,
            VariantArg::L => Variant::L,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    Validation,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    GenData(GenData),
    /// Train the soma or branch stage.
    Train(Train),
    /// Detect somas in a volume and optionally segment each cell.
    Infer(Infer),
    /// Score a checkpoint on a dataset and print a JSON report.
    Eval(Eval),
    /// Print parameter counts per component.
    Params(Params),
}

#[derive(Args)]
struct GenData {
    /// Generator settings (JSON); defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    count: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Train {
    /// Training settings (JSON); defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    stage: StageArg,
    /// Dataset directory written by `gen-data`.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoints and history.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "tiny")]
    variant: VariantArg,
    /// Soma checkpoint whose encoder and decoder initialise the branch model.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Model input size `WxHxD`; defaults to 64x64x16.
    #[arg(long, default_value = "64x64x16")]
    window: String,
}

#[derive(Args)]
struct Infer {
    /// Soma checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Branch checkpoint; when given, every detected soma is segmented.
    #[arg(long)]
    branch_checkpoint: Option<PathBuf>,
    /// A `.v3d` image or a dataset volume directory.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    overlap: f64,
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    stage: Option<StageArg>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Seed of the dataset split.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the report here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Params {
    #[arg(long, value_enum, default_value = "s")]
    variant: VariantArg,
}

/// Read a JSON file, reporting the path of a malformed field.
fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        anyhow::anyhow!("{}: invalid config at `{field}`: {}", path.display(), e.inner())
    })
}

fn parse_dims(s: &str) -> Result<Dims> {
    let parts: Vec<usize> = s.split('x').map(str::parse).collect::<Result<_, _>>().with_context(|| format!("window `{s}` is not WxHxD"))?;
    match parts[..] {
        [w, h, d] => Ok(Dims::new(w, h, d)),
        _ => bail!("window `{s}` is not WxHxD"),
    }
}

fn exec(cli: &Cli) -> Exec {
    if cli.sequential {
        Exec::Sequential
    } else {
        Exec::Parallel
    }
}

fn gen_data(a: &GenData, exec: Exec) -> Result<()> {
    let mut cfg: SynthConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => SynthConfig::default(),
    };
    cfg.seed = a.seed;
    cfg.validate()?;
    let samples = generate_dataset(&cfg, a.count, exec)?;
    save_dataset(&a.out, &samples)?;
    fs::write(a.out.join("synth.json"), serde_json::to_vec_pretty(&cfg)?)?;
    println!("wrote {} volumes to {}", samples.len(), a.out.display());
    Ok(())
}

fn train(a: &Train, exec: Exec) -> Result<()> {
    let stage = Stage::from(a.stage);
    let mut cfg: TrainConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    cfg.stage = stage;
    cfg.seed = a.seed;
    cfg.validate()?;
    let window = parse_dims(&a.window)?;
    let model_cfg = ModelConfig::new(a.variant.into(), window)?;
    let data = load_dataset(&a.data)?;
    let split = split_indices(data.len(), a.seed);
    let train_set = select(&data, &split.train);
    let mut model = SegModel::new(&model_cfg, stage, a.seed)?;
    fs::create_dir_all(&a.out)?;
    let outcome = match stage {
        Stage::Soma => {
            if a.checkpoint.is_some() {
                bail!("--checkpoint is only used by the branch stage");
            }
            let set = SomaTiles::new(&train_set, window, 0.5, &cfg.augment, cfg.augment_params)?;
            info!("{} training tiles from {} volumes", set.len(), train_set.len());
            train_stage(&mut model, &set, &cfg, exec, Some(&a.out))?
        }
        Stage::Branch => {
            if let Some(p) = &a.checkpoint {
                let ckpt = Checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?;
                let manifest = transfer_weights(&ckpt, &mut model)?;
                fs::write(a.out.join("transfer.json"), serde_json::to_vec_pretty(&manifest)?)?;
            }
            let set = CellCrops::new(train_set, window, &cfg.augment, cfg.augment_params)?;
            info!("{} training crops", set.len());
            train_stage(&mut model, &set, &cfg, exec, Some(&a.out))?
        }
    };
    fs::write(a.out.join("history.json"), serde_json::to_vec_pretty(&outcome.history)?)?;
    println!("trained {} for {} epochs; best loss {:.5} at epoch {}", stage.name(), cfg.epochs, outcome.best_loss, outcome.best_epoch);
    Ok(())
}

fn load_model(path: &Path, want: Option<Stage>) -> Result<SegModel> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(s) = want {
        if ckpt.meta.stage != s {
            bail!("{} holds a {} model, expected {}", path.display(), ckpt.meta.stage.name(), s.name());
        }
    }
    Ok(ckpt.to_model()?)
}

fn infer(a: &Infer, exec: Exec) -> Result<()> {
    let soma = load_model(&a.checkpoint, Some(Stage::Soma))?;
    let image: Image = if a.input.is_dir() { load_sample(&a.input)?.image } else { read_v3d(&a.input)? };
    let opts = InferOptions { overlap: a.overlap, equalize: true, exec };
    let window = soma.config().input_dims;
    let prob = sliding_window_infer(&soma, &image, window, opts)?;
    let somas = extract_somas(&prob, THRESHOLD, MIN_SOMA_SIZE)?;
    fs::create_dir_all(&a.out)?;
    write_v3d(&a.out.join("soma_prob.v3d"), &prob)?;
    fs::write(a.out.join("somas.json"), serde_json::to_vec_pretty(&somas)?)?;
    println!("{} somas", somas.len());
    if let Some(p) = &a.branch_checkpoint {
        let branch = load_model(p, Some(Stage::Branch))?;
        let points: Vec<[f32; 3]> = somas.iter().map(|c| c.map(|v| v as f32)).collect();
        let masks = segment_cells(&branch, &image, &points, branch.config().input_dims, opts)?;
        for (k, m) in masks.iter().enumerate() {
            write_v3d(&a.out.join(format!("cell_{k}.v3d")), m)?;
        }
        println!("{} cells segmented", masks.len());
    }
    Ok(())
}

fn eval(a: &Eval, exec: Exec) -> Result<()> {
    let model = load_model(&a.checkpoint, a.stage.map(Stage::from))?;
    let data = load_dataset(&a.data)?;
    let split = split_indices(data.len(), a.seed);
    let idx: Vec<usize> = match a.split {
        SplitArg::Train => split.train,
        SplitArg::Test => split.test,
        SplitArg::Validation => split.validation,
        SplitArg::All => (0..data.len()).collect(),
    };
    if idx.is_empty() {
        bail!("the selected split is empty");
    }
    let samples = select(&data, &idx);
    let opts = InferOptions { exec, ..InferOptions::default() };
    let report = match model.stage() {
        Stage::Soma => EvalReport::Soma(evaluate_soma(&model, &samples, opts)?),
        Stage::Branch => EvalReport::Branch(evaluate_branch(&model, &samples, model.config().input_dims, opts)?),
    };
    let json = serde_json::to_string_pretty(&report)?;
    if let Some(p) = &a.out {
        fs::write(p, &json)?;
    }
    println!("{json}");
    Ok(())
}

/// Reference totals (millions) for the S, M and L variants.
const REFERENCE: [(Variant, f64, f64, f64, f64); 3] =
    [(Variant::S, 6.10, 2.98, 0.42, 2.70), (Variant::M, 27.38, 11.88, 4.69, 10.81), (Variant::L, 109.39, 47.45, 18.72, 43.22)];

fn params(a: &Params) -> Result<()> {
    let variant = Variant::from(a.variant);
    let cfg = ModelConfig::new(variant, Dims::new(256, 256, 16))?;
    let c = SegModel::new(&cfg, Stage::Branch, 0)?.count_parameters();
    let m = |n: usize| n as f64 / 1e6;
    println!("{:<10} {:>10} {:>10} {:>10} {:>10} {:>10}", "variant", "total", "encoder", "skips", "decoder", "prompt");
    println!(
        "{:<10} {:>10.2} {:>10.2} {:>10.2} {:>10.2} {:>10.3}",
        variant.name(),
        m(c.total),
        m(c.encoder),
        m(c.skips),
        m(c.decoder),
        m(c.prompt)
    );
    if let Some(&(_, t, e, s, d)) = REFERENCE.iter().find(|r| r.0 == variant) {
        println!("{:<10} {t:>10.2} {e:>10.2} {s:>10.2} {d:>10.2} {:>10}", "reference", "-");
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let exec = exec(cli);
    match &cli.command {
        Command::GenData(a) => gen_data(a, exec),
        Command::Train(a) => train(a, exec),
        Command::Infer(a) => infer(a, exec),
        Command::Eval(a) => eval(a, exec),
        Command::Params(a) => params(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string();
            let line = first.lines().next().unwrap_or("invalid arguments");
            eprintln!("{line}");
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
