use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand, ValueEnum};
use exprgan::apps::{
    augmentation_experiment, class_name, edit_expression_with_magnitude, embed, export_features, generate_random,
    intensity_sweep, rank_embeddings, transfer_expression, write_features_csv, ImageGrid, Space,
};
use exprgan::datagen::{load_image_file, read_dataset, read_manifest, split_by_identity, write_dataset, LabeledImage, MANIFEST_FILE};
use exprgan::seed::{derive_seed, rng_for};
use exprgan::trainer::{Preset, TrainConfig};
use exprgan::{ExpressionLabel, ModelBundle};

use crate::manifest::RunManifest;
use crate::{checkpoint_id, PresetArg};

/// Flags shared by every application.
#[derive(Args, Clone)]
pub struct Common {
    /// Checkpoint directory written by `train`.
    #[arg(long, value_name = "DIR")]
    checkpoint: PathBuf,
    /// Directory for artifacts and the run manifest.
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Flags for applications that read a dataset directory.
#[derive(Args, Clone)]
pub struct DataArgs {
    /// Dataset directory written by make-data.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Held-out identity fraction; with the training seed this reproduces the training split.
    #[arg(long, default_value_t = 0.1)]
    test_fraction: f64,
    /// Seed of the identity split [default: --seed].
    #[arg(long)]
    split_seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
pub(crate) enum SpaceArg {
    /// Inferred expression code.
    C,
    /// One-hot label.
    Y,
    /// Raw pixels.
    X,
}

impl From<SpaceArg> for Space {
    fn from(s: SpaceArg) -> Self {
        match s {
            SpaceArg::C => Space::Code,
            SpaceArg::Y => Space::Label,
            SpaceArg::X => Space::Pixel,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub(crate) enum SplitArg {
    Test,
    Train,
    All,
}

#[derive(Subcommand)]
pub enum ApplyCommand {
    /// Edit an image to every expression class.
    Edit {
        #[command(flatten)]
        common: Common,
        /// Input image (center-cropped and resized to the model resolution).
        #[arg(long, value_name = "PNG")]
        input: PathBuf,
        /// Value of the active code block.
        #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
        magnitude: f32,
    },
    /// Sweep the intensity levels of one class, plus a neutral column.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PNG")]
        input: PathBuf,
        /// Target expression class index.
        #[arg(long)]
        class: usize,
    },
    /// Give the source identity the expression of the target image.
    Transfer {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PNG")]
        source: PathBuf,
        #[arg(long, value_name = "PNG")]
        target: PathBuf,
    },
    /// Sample images of one class from random identities.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        class: usize,
        /// Number of images.
        #[arg(short = 'n', long = "count", default_value_t = 16)]
        count: usize,
    },
    /// Expression classifier accuracy with and without generated training images.
    AugmentExp {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Synthetic image counts, one table row each.
        #[arg(long, value_delimiter = ',', default_value = "0,3000")]
        counts: Vec<usize>,
        /// Preset supplying the classifier settings.
        #[arg(long, value_enum, default_value = "desk")]
        preset: PresetArg,
        /// Classifier epochs.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Nearest neighbours in code, label or pixel space.
    Retrieve {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum, default_value = "c")]
        space: SpaceArg,
        /// Neighbours per query.
        #[arg(short = 'k', long, default_value_t = 1)]
        k: usize,
        /// Which part of the dataset serves as queries and gallery.
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Allow matches of the query's own identity (the query itself is always excluded).
        #[arg(long)]
        same_identity: bool,
    },
    /// Write identity and expression codes of every image as CSV.
    ExportFeatures {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum, default_value = "all")]
        split: SplitArg,
    },
}

struct Loaded {
    bundle: ModelBundle,
    id: String,
    report: RunManifest,
}

fn load(command: &str, common: &Common) -> Result<Loaded> {
    let id = checkpoint_id(&common.checkpoint)?;
    let bundle = ModelBundle::load(&common.checkpoint)
        .with_context(|| format!("loading checkpoint {}", common.checkpoint.display()))?;
    let mut report = RunManifest::start(command);
    report.input_checkpoint_id = Some(id.clone());
    report.seeds.insert("seed".into(), common.seed);
    fs::create_dir_all(&common.out).with_context(|| format!("creating {}", common.out.display()))?;
    Ok(Loaded { bundle, id, report })
}

fn input_image(bundle: &ModelBundle, path: &Path) -> Result<LabeledImage> {
    let (pixels, resolution) = load_image_file(path, Some(bundle.spec.resolution))?;
    Ok(LabeledImage {
        pixels,
        resolution,
        label: ExpressionLabel::new(0, bundle.spec.layout.classes)?,
        identity_id: 0,
        intensity: None,
    })
}

fn dataset(bundle: &ModelBundle, args: &DataArgs, seed: u64, split: SplitArg) -> Result<Vec<LabeledImage>> {
    if !args.data.join(MANIFEST_FILE).exists() {
        bail!("dataset {} has no {MANIFEST_FILE}", args.data.display());
    }
    let all = read_dataset(&args.data, bundle.spec.layout.classes)?;
    if split == SplitArg::All {
        return Ok(all);
    }
    let split_seed = derive_seed(args.split_seed.unwrap_or(seed), &["split"]);
    let (train, test) = split_by_identity(&all, args.test_fraction, split_seed)?;
    Ok(if split == SplitArg::Test { test } else { train })
}

fn write_grid(grid: &ImageGrid, path: &Path, id: &str, report: &mut RunManifest) -> Result<()> {
    let sidecar = grid.write(path, id)?;
    report.add_output(path)?;
    report.add_output(&sidecar)?;
    println!("wrote {} ({}x{} grid)", path.display(), grid.rows(), grid.cols());
    Ok(())
}

fn finish(report: RunManifest, out: &Path, stem: &str) -> Result<()> {
    let path = report.finish(&out.join(format!("{stem}.run.json")))?;
    println!("run manifest {}", path.display());
    Ok(())
}

pub fn run(cmd: ApplyCommand) -> Result<()> {
    match cmd {
        ApplyCommand::Edit { common, input, magnitude } => {
            let Loaded { bundle, id, mut report } = load("apply edit", &common)?;
            report.config = serde_json::json!({ "input": input, "magnitude": magnitude });
            let x = input_image(&bundle, &input)?;
            let grid = edit_expression_with_magnitude(&bundle, &x, magnitude)?;
            let stem = format!("edit-{id}-seed{}", common.seed);
            write_grid(&grid, &common.out.join(format!("{stem}.png")), &id, &mut report)?;
            finish(report, &common.out, &stem)
        }
        ApplyCommand::Sweep { common, input, class } => {
            let Loaded { bundle, id, mut report } = load("apply sweep", &common)?;
            report.config = serde_json::json!({ "input": input, "class": class });
            let x = input_image(&bundle, &input)?;
            let grid = intensity_sweep(&bundle, &x, class)?;
            let stem = format!("sweep-{id}-seed{}-class{class}", common.seed);
            write_grid(&grid, &common.out.join(format!("{stem}.png")), &id, &mut report)?;
            finish(report, &common.out, &stem)
        }
        ApplyCommand::Transfer { common, source, target } => {
            let Loaded { bundle, id, mut report } = load("apply transfer", &common)?;
            let (a, b) = (input_image(&bundle, &source)?, input_image(&bundle, &target)?);
            let t = transfer_expression(&bundle, &a, &b)?;
            report.config = serde_json::json!({
                "source": source,
                "target": target,
                "predicted_class": t.predicted_class,
                "code": t.code.values(),
            });
            let grid = ImageGrid::new(
                1,
                3,
                a.resolution,
                vec![a.pixels.clone(), b.pixels.clone(), t.image.pixels.clone()],
                vec!["transfer".into()],
                vec!["source".into(), "target".into(), format!("result ({})", class_name(t.predicted_class))],
            )?;
            let stem = format!("transfer-{id}-seed{}", common.seed);
            write_grid(&grid, &common.out.join(format!("{stem}.png")), &id, &mut report)?;
            finish(report, &common.out, &stem)
        }
        ApplyCommand::Generate { common, class, count } => {
            let Loaded { bundle, id, mut report } = load("apply generate", &common)?;
            report.config = serde_json::json!({ "class": class, "count": count });
            let label = ExpressionLabel::new(class, bundle.spec.layout.classes)?;
            let mut rng = rng_for(common.seed, &["generate", &class.to_string()]);
            let mut images = generate_random(&bundle, label, count, &mut rng)?;
            for (i, im) in images.iter_mut().enumerate() {
                im.identity_id = i;
            }
            let stem = format!("generate-{id}-seed{}-class{class}", common.seed);
            let dir = common.out.join(&stem);
            write_dataset(&dir, &images, Some(common.seed))?;
            report.add_output(&dir.join(MANIFEST_FILE))?;
            for r in read_manifest(&dir)? {
                report.add_output(&dir.join(r.path))?;
            }
            println!("wrote {count} images of class {class} to {}", dir.display());
            finish(report, &common.out, &stem)
        }
        ApplyCommand::AugmentExp {
            common,
            data,
            counts,
            preset,
            epochs,
        } => {
            let Loaded { bundle, id, mut report } = load("apply augment-exp", &common)?;
            let mut cfg = TrainConfig::preset(Preset::from(preset)).expression_classifier;
            if let Some(e) = epochs {
                cfg.max_epochs = e;
            }
            let train = dataset(&bundle, &data, common.seed, SplitArg::Train)?;
            let test = dataset(&bundle, &data, common.seed, SplitArg::Test)?;
            report.config = serde_json::json!({
                "data": data.data,
                "test_fraction": data.test_fraction,
                "counts": counts,
                "classifier": cfg,
            });
            let (table, _) = augmentation_experiment(&bundle, &train, &test, &counts, &cfg, common.seed, &id)?;
            let stem = format!("augment-{id}-seed{}", common.seed);
            let path = common.out.join(format!("{stem}.csv"));
            fs::write(&path, table.to_csv()?)?;
            report.add_output(&path)?;
            for r in &table.rows {
                println!("synthetic {:>6}  accuracy {:.4}", r.synthetic_images, r.accuracy);
            }
            finish(report, &common.out, &stem)
        }
        ApplyCommand::Retrieve {
            common,
            data,
            space,
            k,
            split,
            same_identity,
        } => {
            let Loaded { bundle, id, mut report } = load("apply retrieve", &common)?;
            let space = Space::from(space);
            let images = dataset(&bundle, &data, common.seed, split)?;
            let emb = embed(Some(&bundle), &images, space)?;
            let stem = format!("retrieve-{id}-seed{}-{}", common.seed, space.tag());
            let path = common.out.join(format!("{stem}.csv"));
            let mut text = String::from("query,query_identity,query_class,rank,match,match_identity,match_class,distance\n");
            let mut hits = 0usize;
            for (i, q) in emb.iter().enumerate() {
                let qid = images[i].identity_id;
                let r = rank_embeddings(i, q, &emb, k, space, |j| {
                    j != i && (same_identity || images[j].identity_id != qid)
                })?;
                for (rank, (j, d)) in r.ranked.iter().enumerate() {
                    if rank == 0 && images[*j].class() == images[i].class() {
                        hits += 1;
                    }
                    text.push_str(&format!(
                        "{i},{qid},{},{},{j},{},{},{d:?}\n",
                        images[i].class(),
                        rank + 1,
                        images[*j].identity_id,
                        images[*j].class()
                    ));
                }
            }
            fs::write(&path, text)?;
            report.add_output(&path)?;
            let rate = hits as f64 / images.len().max(1) as f64;
            report.config = serde_json::json!({
                "data": data.data,
                "space": space.tag(),
                "k": k,
                "queries": images.len(),
                "top1_same_class": rate,
            });
            println!("{} queries, top-1 same-class rate {rate:.4}", images.len());
            finish(report, &common.out, &stem)
        }
        ApplyCommand::ExportFeatures { common, data, split } => {
            let Loaded { bundle, id, mut report } = load("apply export-features", &common)?;
            let images = dataset(&bundle, &data, common.seed, split)?;
            let records = export_features(&bundle, &images)?;
            let stem = format!("features-{id}-seed{}", common.seed);
            let path = common.out.join(format!("{stem}.csv"));
            write_features_csv(&path, &records, &id)?;
            report.add_output(&path)?;
            report.config = serde_json::json!({ "data": data.data, "images": records.len() });
            println!("wrote {} feature rows to {}", records.len(), path.display());
            finish(report, &common.out, &stem)
        }
    }
}
