mod apply;
mod manifest;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use exprgan::datagen::{
    identities, ingest_folder, read_manifest, sample_dataset, write_dataset, DatasetSpec, CLASS_NAMES, MANIFEST_FILE,
};
use exprgan::networks::CheckpointMeta;
use exprgan::seed::derive_seed;
use exprgan::trainer::{
    checkpoint_checksum, run_curriculum, CurriculumRequest, Preset, TrainConfig, CURRICULUM_MANIFEST,
    LOSS_LOG,
};

use manifest::{combined_checksum, RunManifest};

#[derive(Parser)]
#[command(name = "exprgan", version, about = "Expression-controllable face synthesis with a conditional adversarial autoencoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic face dataset or ingest an image folder.
    MakeData(MakeDataArgs),
    /// Run curriculum stages and write checkpoints plus a loss log.
    Train(TrainArgs),
    /// Apply a trained checkpoint.
    Apply(ApplyArgs),
    /// Print the resolved configuration as TOML.
    Config(ConfigArgs),
    /// Print a markdown reference of every command, flag and config key.
    Reference,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Desk,
    Paper,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Desk => Preset::Desk,
            PresetArg::Paper => Preset::Paper,
        }
    }
}

/// Base preset and config file shared by commands that resolve a config.
#[derive(Args, Clone)]
struct ConfigSource {
    /// Built-in preset the config file and flags are layered on.
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    /// TOML file overriding preset keys.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

impl ConfigSource {
    /// Preset < config file < explicit `--preset`.
    fn resolve(&self) -> Result<TrainConfig> {
        let base = self.preset.map(Preset::from).unwrap_or(Preset::Desk);
        let Some(path) = &self.config else {
            return Ok(TrainConfig::preset(base));
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut value: toml::Value = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if self.preset.is_some() {
            if let Some(table) = value.as_table_mut() {
                table.remove("preset");
            }
        }
        let merged = toml::to_string(&value)?;
        TrainConfig::layered(base, Some(&merged)).with_context(|| format!("resolving config {}", path.display()))
    }
}

#[derive(Args)]
struct ConfigArgs {
    #[command(flatten)]
    source: ConfigSource,
}

#[derive(Args)]
struct MakeDataArgs {
    #[command(flatten)]
    source: ConfigSource,
    /// Master seed; the rendering seed is derived from it exactly as `train` does.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: data/<preset>-seed<seed>].
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Number of synthetic identities.
    #[arg(long)]
    identities: Option<usize>,
    /// Images per identity and class.
    #[arg(long)]
    per_cell: Option<usize>,
    /// Square image side in pixels.
    #[arg(long)]
    resolution: Option<usize>,
    /// Ingest `<DIR>/<class>/<identity>/<image>` instead of rendering.
    #[arg(long, value_name = "DIR")]
    ingest: Option<PathBuf>,
    /// Class directory names for --ingest, in label order [default: the preset's class names].
    #[arg(long, value_delimiter = ',', value_name = "NAMES")]
    class_names: Vec<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    source: ConfigSource,
    /// Stages to run, comma separated.
    #[arg(long, value_delimiter = ',', conflicts_with = "stage", value_name = "LIST")]
    stages: Vec<u8>,
    /// Run a single stage.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    stage: Option<u8>,
    /// Start from this checkpoint (or an interrupted stage's progress directory).
    #[arg(long, value_name = "CKPT")]
    resume: Option<PathBuf>,
    /// Fixed reduction order and seeded streams throughout.
    #[arg(long)]
    deterministic: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for checkpoints and logs.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Train on a dataset directory written by make-data.
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Epochs per stage, three comma-separated values.
    #[arg(long, value_delimiter = ',', num_args = 3, value_name = "E1,E2,E3")]
    epochs: Vec<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
}

#[derive(Args)]
struct ApplyArgs {
    #[command(subcommand)]
    command: apply::ApplyCommand,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::MakeData(a) => make_data(a),
        Command::Train(a) => train(a),
        Command::Apply(a) => apply::run(a.command),
        Command::Config(a) => {
            print!("{}", a.source.resolve()?.to_toml());
            Ok(())
        }
        Command::Reference => {
            print!("{}", reference());
            Ok(())
        }
    }
}

fn preset_name(p: Preset) -> &'static str {
    match p {
        Preset::Desk => "desk",
        Preset::Paper => "paper",
    }
}

fn make_data(a: MakeDataArgs) -> Result<()> {
    let mut report = RunManifest::start("make-data");
    let mut config = a.source.resolve()?;
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    let spec = &mut config.data.synthetic;
    if let Some(n) = a.identities {
        spec.n_identities = n;
    }
    if let Some(n) = a.per_cell {
        spec.images_per_identity_per_class = n;
    }
    if let Some(r) = a.resolution {
        spec.resolution = r;
    }
    let seed = config.seed;
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("data/{}-seed{seed}", preset_name(config.preset))));

    let (images, dataset_seed) = match &a.ingest {
        Some(root) => {
            let names: Vec<String> = if a.class_names.is_empty() {
                CLASS_NAMES[..config.classes.min(CLASS_NAMES.len())].iter().map(|s| s.to_string()).collect()
            } else {
                a.class_names.clone()
            };
            let map: BTreeMap<String, usize> = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
            let images = ingest_folder(root, &map, spec.resolution)
                .with_context(|| format!("ingesting {}", root.display()))?;
            report.config = serde_json::json!({
                "ingest": root,
                "class_names": names,
                "resolution": spec.resolution,
            });
            (images, None)
        }
        None => {
            let mut spec: DatasetSpec = *spec;
            if spec.seed == 0 {
                spec.seed = derive_seed(seed, &["dataset"]);
            }
            let images = sample_dataset(&spec).context("rendering synthetic dataset")?;
            report.config = serde_json::to_value(spec)?;
            report.seeds.insert("dataset".into(), spec.seed);
            (images, Some(spec.seed))
        }
    };
    report.seeds.insert("master".into(), seed);
    write_dataset(&out, &images, dataset_seed).with_context(|| format!("writing dataset to {}", out.display()))?;

    let records = read_manifest(&out)?;
    let mut files = vec![out.join(MANIFEST_FILE)];
    files.extend(records.iter().map(|r| out.join(&r.path)));
    for f in &files {
        report.add_output(f)?;
    }
    let checksum = combined_checksum(&files)?;
    let classes: std::collections::BTreeSet<usize> = images.iter().map(|im| im.class()).collect();
    let summary = serde_json::json!({
        "images": images.len(),
        "identities": identities(&images).len(),
        "classes": classes.len(),
        "checksum": checksum,
    });
    let summary_path = out.join(format!("dataset-seed{seed}.json"));
    fs::write(&summary_path, serde_json::to_string_pretty(&summary)?)?;
    report.add_output(&summary_path)?;
    let manifest_path = report.finish(&out.join(format!("make-data-seed{seed}.run.json")))?;
    println!(
        "wrote {} images ({} identities x {} classes) to {}",
        images.len(),
        identities(&images).len(),
        classes.len(),
        out.display()
    );
    println!("checksum {checksum}");
    println!("run manifest {}", manifest_path.display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut report = RunManifest::start("train");
    let mut config = a.source.resolve()?;
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    if a.deterministic {
        config.deterministic = true;
    }
    if let Some(out) = &a.out {
        config.output_dir = out.clone();
    }
    if let Some(dir) = &a.data {
        if !dir.join(MANIFEST_FILE).exists() {
            bail!("dataset {} has no {MANIFEST_FILE}", dir.display());
        }
        config.data.dir = Some(dir.clone());
    }
    if !a.epochs.is_empty() {
        config.stage_epochs = [a.epochs[0], a.epochs[1], a.epochs[2]];
    }
    if let Some(b) = a.batch_size {
        config.optimizer.batch_size = b;
    }
    if let Some(lr) = a.learning_rate {
        config.optimizer.learning_rate = lr;
    }
    config.validate()?;
    let stages = match a.stage {
        Some(s) => vec![s],
        None => a.stages.clone(),
    };
    if let Some(resume) = &a.resume {
        report.input_checkpoint_id = CheckpointMeta::read(resume)
            .with_context(|| format!("reading checkpoint {}", resume.display()))
            .map(|m| Some(m.checkpoint_id))?;
    }
    let outcome = run_curriculum(
        &config,
        &CurriculumRequest {
            stages,
            resume: a.resume.clone(),
        },
    )?;
    let out = &config.output_dir;
    report.config = serde_json::to_value(&config)?;
    report.seeds = outcome.manifest.seeds.clone();
    for s in &outcome.manifest.stages {
        for f in exprgan::networks::checkpoint_files(&s.checkpoint) {
            report.add_output(&f)?;
        }
        println!(
            "stage {} done: {} steps in {:.0}s, checkpoint {} ({})",
            s.stage,
            s.steps,
            s.seconds,
            s.checkpoint.display(),
            s.checkpoint_id
        );
    }
    if let Some(dir) = &outcome.manifest.final_checkpoint {
        for f in exprgan::networks::checkpoint_files(dir) {
            report.add_output(&f)?;
        }
        println!("final checkpoint {} checksum {}", dir.display(), checkpoint_checksum(dir)?);
    }
    report.add_output(&out.join(LOSS_LOG))?;
    report.add_output(&out.join(CURRICULUM_MANIFEST))?;
    let last_id = outcome
        .manifest
        .final_checkpoint_id
        .clone()
        .or_else(|| outcome.manifest.stages.last().map(|s| s.checkpoint_id.clone()))
        .unwrap_or_default();
    let path = report.finish(&out.join(format!("train-{last_id}-seed{}.run.json", config.seed)))?;
    println!("run manifest {}", path.display());
    Ok(())
}

/// Markdown listing of every command's help text and both presets.
fn reference() -> String {
    let mut out = String::from("# exprgan command reference\n\n");
    let mut cmd = Cli::command();
    cmd.build();
    fn walk(cmd: &clap::Command, prefix: &str, out: &mut String) {
        let name = if prefix.is_empty() {
            cmd.get_name().to_string()
        } else {
            format!("{prefix} {}", cmd.get_name())
        };
        let mut c = cmd.clone();
        out.push_str(&format!("## `{name}`\n\n```text\n{}\n```\n\n", c.render_long_help()));
        for sub in cmd.get_subcommands() {
            if sub.get_name() != "help" {
                walk(sub, &name, out);
            }
        }
    }
    walk(&cmd, "", &mut out);
    for p in [Preset::Desk, Preset::Paper] {
        out.push_str(&format!(
            "## Config keys: `{}` preset\n\n```toml\n{}```\n\n",
            preset_name(p),
            TrainConfig::preset(p).to_toml()
        ));
    }
    out
}

pub(crate) fn checkpoint_id(dir: &Path) -> Result<String> {
    Ok(CheckpointMeta::read(dir)
        .with_context(|| format!("reading checkpoint {}", dir.display()))?
        .checkpoint_id)
}
