use clap::{Args, Parser, Subcommand};
use eri::config::RunConfig;
use eri::data::{
    apply_training_filter, combo_dims, filter_valid_frames, load_dataset, save_dataset,
    select_feature_combo, write_fmx, Dataset, FmxMatrix, PreparedSample, Split,
};
use eri::encoder::extract_regression_attention;
use eri::error::{EriError, Result};
use eri::eval::{evaluate, run_ablation, write_attention_csv};
use eri::mfcc::{audio_features, read_audio};
use eri::model::{load_checkpoint, save_checkpoint, EriModel, ModelConfig};
use eri::synth::{generate, write_events_json};
use eri::train::{train_model, write_loss_csv};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "eri",
    about = "Emotional reaction intensity estimation: data, training, evaluation"
)]
struct Cli {
    /// Flat key=value config file (dotted keys, # comments)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config entry, e.g. --set model.hidden=64 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic event dataset (FMX files, manifest, event log)
    GenSynth(GenSynthArgs),
    /// Extract block-packed MFCC features from an audio file
    Mfcc(MfccArgs),
    /// Train a model on a dataset manifest
    Train(TrainArgs),
    /// Score a checkpoint on a dataset split
    Eval(EvalArgs),
    /// Train and score every feature combination
    Ablate(AblateArgs),
    /// Export the regression-token attention weights for one sample
    Attn(AttnArgs),
}

#[derive(Args)]
struct GenSynthArgs {
    /// Output directory for manifest.json, events.json, and FMX files
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MfccArgs {
    /// 16 kHz mono audio: 16-bit PCM .wav, or raw little-endian f32 (.f32)
    #[arg(long)]
    input: PathBuf,
    /// Destination FMX file (num_blocks × 1024)
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset manifest
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoint.bin and loss.csv
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Model checkpoint
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset manifest
    #[arg(long)]
    data: PathBuf,
    /// Which split to score
    #[arg(long, default_value = "test")]
    split: String,
    /// Also write the report as JSON
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    /// Dataset manifest
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated training seeds
    #[arg(long, default_value = "0,1,2")]
    seeds: String,
    /// Write the full report as JSON
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AttnArgs {
    /// Model checkpoint
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset manifest
    #[arg(long)]
    data: PathBuf,
    /// Sample id to inspect
    #[arg(long)]
    id: String,
    /// Which stream's attention to export
    #[arg(long, default_value = "visual")]
    stream: String,
    /// Destination CSV (frame,weight)
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version are not errors
            if e.use_stderr() {
                eprintln!("{e}");
                std::process::exit(1);
            }
            print!("{e}");
            std::process::exit(0);
        }
    };
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::new(),
    };
    for line in &cli.set {
        cfg.set_line(line)?;
    }
    match cli.command {
        Command::GenSynth(args) => gen_synth(&cfg, args),
        Command::Mfcc(args) => mfcc_cmd(args),
        Command::Train(args) => train_cmd(&cfg, args),
        Command::Eval(args) => eval_cmd(&cfg, args),
        Command::Ablate(args) => ablate_cmd(&cfg, args),
        Command::Attn(args) => attn_cmd(&cfg, args),
    }
}

fn echo_config(cfg: &RunConfig) {
    for (k, v) in cfg.effective() {
        println!("config: {k}={v}");
    }
    for k in cfg.unused_keys() {
        eprintln!("warning: unused config key {k}");
    }
}

fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => Err(EriError::Argument(format!(
            "split must be train, val, or test, got {other}"
        ))),
    }
}

fn gen_synth(cfg: &RunConfig, args: GenSynthArgs) -> Result<()> {
    let synth_cfg = cfg.synth_config()?;
    echo_config(cfg);
    let (dataset, events) = generate(&synth_cfg)?;
    save_dataset(&args.out, &dataset)?;
    write_events_json(&args.out.join("events.json"), &events)?;
    let count = |sp: Split| dataset.split(sp).count();
    println!(
        "wrote {} samples to {} (train {}, val {}, test {})",
        dataset.samples.len(),
        args.out.display(),
        count(Split::Train),
        count(Split::Val),
        count(Split::Test),
    );
    Ok(())
}

fn mfcc_cmd(args: MfccArgs) -> Result<()> {
    let (signal, rate) = read_audio(&args.input)?;
    let feats = audio_features(&signal, rate)?;
    let m = FmxMatrix::new(
        feats.rows(),
        feats.cols(),
        feats.data().iter().map(|&v| v as f32).collect(),
        None,
    )?;
    write_fmx(&args.output, &m)?;
    println!(
        "{}: {} samples -> {} blocks of {} dims",
        args.output.display(),
        signal.len(),
        feats.rows(),
        feats.cols(),
    );
    Ok(())
}

/// Feature-select and validity-filter one split for model consumption.
fn prepare_split(cfg: &RunConfig, dataset: &Dataset, split: Split) -> Result<Vec<PreparedSample>> {
    let combo = cfg.feature_combo()?;
    dataset
        .split(split)
        .map(|s| {
            select_feature_combo(s, combo).map(|p| PreparedSample {
                visual: p.visual.map(|v| filter_valid_frames(&v).0),
                ..p
            })
        })
        .collect()
}

fn model_for(template: &ModelConfig, samples: &[PreparedSample]) -> Result<EriModel> {
    let first = samples
        .first()
        .ok_or_else(|| EriError::Data("no training samples after filtering".into()))?;
    let dims = combo_dims(first);
    EriModel::init(ModelConfig {
        visual_dim: dims.visual_dim.unwrap_or(1),
        audio_dim: dims.audio_dim.unwrap_or(1),
        use_visual: dims.visual_dim.is_some(),
        use_audio: dims.audio_dim.is_some(),
        ..template.clone()
    })
}

fn train_cmd(cfg: &RunConfig, args: TrainArgs) -> Result<()> {
    // resolve configuration before any data work so typos fail fast
    let template = cfg.model_config()?;
    let train_cfg = cfg.train_config()?;
    let min_valid = cfg.min_train_valid_frames()?;
    let mut dataset = load_dataset(&args.data)?;
    let removed = apply_training_filter(&mut dataset, min_valid);
    let train = prepare_split(cfg, &dataset, Split::Train)?;
    let mut model = model_for(&template, &train)?;
    echo_config(cfg);
    if !removed.is_empty() {
        println!("dropped {} training samples with too few valid frames", removed.len());
    }
    let run = train_model(&mut model, &train, &train_cfg, None, None)?;
    std::fs::create_dir_all(&args.out)?;
    write_loss_csv(&args.out.join("loss.csv"), &run.history)?;
    save_checkpoint(&model, Some(&run.optimizer), &args.out.join("checkpoint.bin"))?;
    println!(
        "trained {} steps on {} samples, final loss {:.6}",
        run.steps,
        train.len(),
        run.final_loss
    );
    println!("checkpoint: {}", args.out.join("checkpoint.bin").display());
    Ok(())
}

fn eval_cmd(cfg: &RunConfig, args: EvalArgs) -> Result<()> {
    let split = parse_split(&args.split)?;
    let (model, _) = load_checkpoint(&args.checkpoint)?;
    let dataset = load_dataset(&args.data)?;
    let samples = prepare_split(cfg, &dataset, split)?;
    echo_config(cfg);
    let report = evaluate(&model, &samples)?;
    print!("{}", report.render_text());
    if let Some(path) = &args.json {
        let text = serde_json::to_string_pretty(&report)
            .map_err(|e| EriError::Data(format!("serializing report: {e}")))?;
        std::fs::write(path, text)?;
        println!("report: {}", path.display());
    }
    Ok(())
}

fn ablate_cmd(cfg: &RunConfig, args: AblateArgs) -> Result<()> {
    let seeds: Vec<u64> = args
        .seeds
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| EriError::Argument(format!("bad seed {s:?}")))
        })
        .collect::<Result<_>>()?;
    let dataset = load_dataset(&args.data)?;
    let template = cfg.model_config()?;
    let train_cfg = cfg.train_config()?;
    let min_valid = cfg.min_train_valid_frames()?;
    echo_config(cfg);
    let report = run_ablation(&dataset, &template, &train_cfg, &seeds, min_valid)?;
    print!("{}", report.render_text());
    if let Some(path) = &args.out {
        let text = serde_json::to_string_pretty(&report)
            .map_err(|e| EriError::Data(format!("serializing report: {e}")))?;
        std::fs::write(path, text)?;
        println!("report: {}", path.display());
    }
    Ok(())
}

fn attn_cmd(cfg: &RunConfig, args: AttnArgs) -> Result<()> {
    let (model, _) = load_checkpoint(&args.checkpoint)?;
    let dataset = load_dataset(&args.data)?;
    let sample = dataset
        .samples
        .iter()
        .find(|s| s.id == args.id)
        .ok_or_else(|| EriError::Argument(format!("no sample with id {}", args.id)))?;
    let combo = cfg.feature_combo()?;
    let p = select_feature_combo(sample, combo)?;
    let p = PreparedSample {
        visual: p.visual.map(|v| filter_valid_frames(&v).0),
        ..p
    };
    echo_config(cfg);

    let mask = |n: usize| vec![true; n];
    let vmask = p.visual.as_ref().map(|s| mask(s.len()));
    let amask = p.audio.as_ref().map(|s| mask(s.len()));
    let video = match (&model.config.use_visual, &p.visual) {
        (true, Some(s)) => Some((&s.data, vmask.as_deref().unwrap())),
        (true, None) => return Err(EriError::Argument("model expects a visual stream".into())),
        (false, _) => None,
    };
    let audio = match (&model.config.use_audio, &p.audio) {
        (true, Some(s)) => Some((&s.data, amask.as_deref().unwrap())),
        (true, None) => return Err(EriError::Argument("model expects an audio stream".into())),
        (false, _) => None,
    };
    let (pred, nodes, _) = model.predict(video, audio)?;
    let (records, t) = match args.stream.as_str() {
        "visual" => (
            &nodes.video_attention,
            p.visual.as_ref().map(|s| s.len()).unwrap_or(0),
        ),
        "audio" => (
            &nodes.audio_attention,
            p.audio.as_ref().map(|s| s.len()).unwrap_or(0),
        ),
        other => {
            return Err(EriError::Argument(format!(
                "stream must be visual or audio, got {other}"
            )))
        }
    };
    if records.is_empty() {
        return Err(EriError::State(
            "this model records no attention for that stream (mean pooling or stream disabled)"
                .into(),
        ));
    }
    let weights = extract_regression_attention(records, t);
    write_attention_csv(&args.out, &weights)?;
    println!(
        "sample {}: prediction {:?}",
        args.id,
        pred.intensities
            .iter()
            .map(|v| (v * 1000.0).round() / 1000.0)
            .collect::<Vec<f64>>()
    );
    println!("attention: {} ({} frames)", args.out.display(), weights.len());
    Ok(())
}
