//! The three-stage curriculum (controller learning, reconstruction,
//! refining), auxiliary classifier training, and resumable checkpoints.

mod classifier;
mod config;

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::{DType, Device, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{
    augment_flip, identities, one_hot_matrix, read_dataset, sample_dataset, split_by_identity, stack_images,
    LabeledImage,
};
use crate::error::{Error, Result};
use crate::exprcode::{sample_code, sample_uniform};
use crate::losses::{
    active_blocks, disc_loss, gen_loss, identity_loss, pixel_loss, q_loss, scalar, total_loss, tv_loss,
    LossComponents, LossRecord, LossReport, LossWeights,
};
use crate::networks::{checkpoint_files, ModelBundle, Subnet};
use crate::nn::{Adam, AdamConfig, NormMode};
use crate::seed::{derive_seed, rng_for, sha256_hex};

pub use classifier::{
    accuracy, fit_classifier, pretrain_feature_net, train_expression_classifier, ClassifierReport, FitOptions,
};
pub use config::{ClassifierConfig, DataConfig, OptimizerConfig, Preset, StageWeights, TrainConfig};

const STATE_FILE: &str = "train_state.json";
const OPTIMIZER_FILE: &str = "optimizer.safetensors";
pub const LOSS_LOG: &str = "losses.jsonl";

/// Source of the identity code fed to the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdentitySource {
    RandomNoise,
    Encoder,
}

/// What one curriculum stage trains, and with which objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub stage: u8,
    /// Networks updated by the generator-side step.
    pub generator: Vec<Subnet>,
    /// Networks updated by the discriminator step, which runs first.
    pub discriminators: Vec<Subnet>,
    /// Whether the pixel reconstruction term is active (weight 1).
    pub pixel: bool,
    pub weights: LossWeights,
    pub epochs: usize,
    pub batch_size: usize,
    pub identity_source: IdentitySource,
}

impl StagePlan {
    pub fn for_stage(stage: u8, config: &TrainConfig) -> Result<Self> {
        let w = &config.weights;
        let epochs = *config
            .stage_epochs
            .get((stage as usize).wrapping_sub(1))
            .ok_or_else(|| Error::validation("stage", format!("{stage} is not one of 1, 2, 3")))?;
        let batch_size = config.optimizer.batch_size;
        let plan = match stage {
            1 => Self {
                stage,
                generator: vec![Subnet::Decoder, Subnet::Q],
                discriminators: vec![Subnet::ImageDisc],
                pixel: false,
                weights: LossWeights {
                    q: w.stage1_q,
                    adv_img: w.stage1_adv_img,
                    ..LossWeights::zero()
                },
                epochs,
                batch_size,
                identity_source: IdentitySource::RandomNoise,
            },
            2 => Self {
                stage,
                generator: vec![Subnet::Encoder, Subnet::Decoder, Subnet::Q],
                discriminators: vec![],
                pixel: true,
                weights: LossWeights {
                    identity: w.stage2_identity,
                    q: w.stage2_q,
                    layer_betas: w.stage3.layer_betas,
                    ..LossWeights::zero()
                },
                epochs,
                batch_size,
                identity_source: IdentitySource::Encoder,
            },
            _ => Self {
                stage,
                generator: vec![Subnet::Encoder, Subnet::Decoder, Subnet::Q],
                discriminators: vec![Subnet::ImageDisc, Subnet::CodeDisc],
                pixel: true,
                weights: w.stage3,
                epochs,
                batch_size,
                identity_source: IdentitySource::Encoder,
            },
        };
        Ok(plan)
    }

    /// Every network whose parameters this stage may change.
    pub fn trained(&self) -> Vec<Subnet> {
        let mut all: Vec<Subnet> = self.generator.iter().chain(&self.discriminators).copied().collect();
        all.sort();
        all
    }

    fn uses_identity_loss(&self) -> bool {
        self.weights.identity > 0.0
    }

    fn uses_image_disc(&self) -> bool {
        self.weights.q > 0.0 || self.weights.adv_img > 0.0
    }
}

/// Position within a stage plus the records emitted so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub stage: u8,
    /// Completed steps within the stage.
    pub step: u64,
    pub seed: u64,
    pub generator_optimizer_steps: u64,
    pub discriminator_optimizer_steps: u64,
    pub history: Vec<LossRecord>,
}

/// Per-epoch means of one loss field.
pub fn epoch_means(records: &[LossRecord], field: impl Fn(&LossRecord) -> f64) -> Vec<f64> {
    let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for r in records {
        let e = sums.entry(r.epoch).or_insert((0.0, 0));
        e.0 += field(r);
        e.1 += 1;
    }
    sums.values().map(|(s, n)| s / *n as f64).collect()
}

fn named_vars<'a>(bundle: &'a ModelBundle, nets: &[Subnet]) -> Vec<(String, &'a candle_core::Var)> {
    nets.iter()
        .flat_map(|s| {
            bundle
                .store(*s)
                .named_vars()
                .map(move |(k, v)| (format!("{}/{k}", s.name()), v))
        })
        .collect()
}

/// Runs the alternating updates of one stage, one batch at a time.
pub struct StageRunner<'a> {
    bundle: &'a ModelBundle,
    plan: StagePlan,
    data: &'a [LabeledImage],
    flip: bool,
    gen_opt: Adam,
    disc_opt: Option<Adam>,
    state: TrainState,
    order: Option<(usize, Vec<usize>)>,
}

impl<'a> StageRunner<'a> {
    /// Fresh start. The bundle must have completed the previous stage.
    pub fn new(
        bundle: &'a ModelBundle,
        plan: StagePlan,
        data: &'a [LabeledImage],
        adam: AdamConfig,
        seed: u64,
        flip: bool,
    ) -> Result<Self> {
        if bundle.stage + 1 < plan.stage {
            return Err(Error::MissingPrerequisite {
                stage: plan.stage,
                path: PathBuf::from(format!("stage{}", plan.stage - 1)),
            });
        }
        if plan.uses_identity_loss() && !bundle.feature_net.is_trained() {
            return Err(Error::FeatureNetUninitialized);
        }
        if data.len() < plan.batch_size {
            return Err(Error::validation(
                "batch_size",
                format!("{} exceeds the {} training images", plan.batch_size, data.len()),
            ));
        }
        let gen_opt = Adam::new(adam, named_vars(bundle, &plan.generator))?;
        let disc_opt = if plan.discriminators.is_empty() {
            None
        } else {
            Some(Adam::new(adam, named_vars(bundle, &plan.discriminators))?)
        };
        let state = TrainState {
            stage: plan.stage,
            step: 0,
            seed,
            generator_optimizer_steps: 0,
            discriminator_optimizer_steps: 0,
            history: Vec::new(),
        };
        Ok(Self {
            bundle,
            plan,
            data,
            flip,
            gen_opt,
            disc_opt,
            state,
            order: None,
        })
    }

    /// Continue from a checkpoint written by [`StageRunner::save`]; the bundle
    /// must already hold that checkpoint's parameters.
    pub fn resume(
        bundle: &'a ModelBundle,
        plan: StagePlan,
        data: &'a [LabeledImage],
        adam: AdamConfig,
        flip: bool,
        dir: &Path,
    ) -> Result<Self> {
        let state: TrainState = serde_json::from_str(&fs::read_to_string(dir.join(STATE_FILE))?)?;
        if state.stage != plan.stage {
            return Err(Error::validation(
                "resume",
                format!("checkpoint is from stage {}, plan is stage {}", state.stage, plan.stage),
            ));
        }
        let mut runner = Self::new(bundle, plan, data, adam, state.seed, flip)?;
        let tensors = crate::networks::load_tensors(&dir.join(OPTIMIZER_FILE))?;
        let (gen, disc) = split_prefixed(tensors);
        runner.gen_opt.load_state(state.generator_optimizer_steps, &gen)?;
        if let Some(d) = runner.disc_opt.as_mut() {
            d.load_state(state.discriminator_optimizer_steps, &disc)?;
        }
        runner.state = state;
        Ok(runner)
    }

    pub fn plan(&self) -> &StagePlan {
        &self.plan
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.data.len() / self.plan.batch_size
    }

    pub fn total_steps(&self) -> u64 {
        (self.steps_per_epoch() * self.plan.epochs) as u64
    }

    pub fn is_finished(&self) -> bool {
        self.state.step >= self.total_steps()
    }

    fn epoch_order(&mut self, epoch: usize) -> &[usize] {
        if self.order.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut idx: Vec<usize> = (0..self.data.len()).collect();
            let mut rng = rng_for(self.state.seed, &["order", &self.plan.stage.to_string(), &epoch.to_string()]);
            rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut rng);
            self.order = Some((epoch, idx));
        }
        &self.order.as_ref().expect("order set").1
    }

    /// One discriminator update followed by one generator-side update.
    pub fn step(&mut self) -> Result<LossRecord> {
        let spe = self.steps_per_epoch();
        let epoch = (self.state.step as usize) / spe;
        let within = (self.state.step as usize) % spe;
        let b = self.plan.batch_size;
        let indices: Vec<usize> = self.epoch_order(epoch)[within * b..(within + 1) * b].to_vec();
        let mut rng = rng_for(
            self.state.seed,
            &["step", &self.plan.stage.to_string(), &self.state.step.to_string()],
        );
        let batch: Vec<LabeledImage> = indices
            .iter()
            .map(|i| {
                if self.flip {
                    augment_flip(&self.data[*i], &mut rng)
                } else {
                    self.data[*i].clone()
                }
            })
            .collect();
        let (report, d_img, d_z) = self.update(&batch, &mut rng)?;
        self.state.step += 1;
        self.state.generator_optimizer_steps = self.gen_opt.steps();
        self.state.discriminator_optimizer_steps = self.disc_opt.as_ref().map_or(0, |d| d.steps());
        let record = LossRecord::new(self.state.step, self.plan.stage, epoch, &report, d_img, d_z);
        self.state.history.push(record);
        Ok(record)
    }

    fn configure(&self, generator_trainable: bool) {
        for s in Subnet::ALL {
            let store = self.bundle.store(s);
            store.set_trainable(generator_trainable && self.plan.generator.contains(&s));
            let mode = if self.plan.trained().contains(&s) {
                NormMode::BatchStats
            } else {
                NormMode::Eval
            };
            store.set_norm_mode(mode);
        }
    }

    fn update(&mut self, batch: &[LabeledImage], rng: &mut ChaCha8Rng) -> Result<(LossReport, f64, f64)> {
        let bundle = self.bundle;
        let spec = &bundle.spec;
        let layout = spec.layout;
        let dtype = bundle.store(Subnet::Decoder).dtype();
        let n = batch.len();
        let classes: Vec<usize> = batch.iter().map(|im| im.class()).collect();
        let x = stack_images(batch)?.to_dtype(dtype)?;
        let labels = one_hot_matrix(&classes, layout.classes)?.to_dtype(dtype)?;
        let mut code_values = Vec::with_capacity(n * layout.len());
        for im in batch {
            code_values.extend(sample_code(im.label, layout, rng)?.values().iter().copied());
        }
        let codes = Tensor::from_vec(code_values, (n, layout.len()), &Device::Cpu)?.to_dtype(dtype)?;
        let targets = active_blocks(&codes, &classes, layout.block)?;

        self.configure(true);
        let g = match self.plan.identity_source {
            IdentitySource::RandomNoise => uniform_rows(rng, n, spec.id_dim, dtype)?,
            IdentitySource::Encoder => bundle.encode(&x)?,
        };
        let x_hat = bundle.decode(&g, &codes)?;

        // discriminator step on detached generator outputs
        let mut d_img_loss = 0.0;
        let mut d_z_loss = 0.0;
        if let Some(opt) = self.disc_opt.as_mut() {
            for s in &self.plan.discriminators {
                bundle.store(*s).set_trainable(true);
                bundle.store(*s).set_norm_mode(NormMode::Train);
            }
            let mut total: Option<Tensor> = None;
            if self.plan.discriminators.contains(&Subnet::ImageDisc) {
                let real = bundle.image_disc.forward(&x, &labels)?;
                let fake = bundle.image_disc.forward(&x_hat.detach(), &labels)?;
                let l = disc_loss(&real.prob, &fake.prob)?;
                d_img_loss = finite(scalar(&l)?, "d_img")?;
                total = Some(l);
            }
            if self.plan.discriminators.contains(&Subnet::CodeDisc) {
                let prior = uniform_rows(rng, n, spec.id_dim, dtype)?;
                let l = disc_loss(&bundle.code_disc.forward(&prior)?, &bundle.code_disc.forward(&g.detach())?)?;
                d_z_loss = finite(scalar(&l)?, "d_z")?;
                total = Some(match total {
                    Some(t) => (t + l)?,
                    None => l,
                });
            }
            if let Some(total) = total {
                opt.step(&total.backward()?)?;
            }
            for s in &self.plan.discriminators {
                bundle.store(*s).set_trainable(false);
                bundle.store(*s).set_norm_mode(NormMode::BatchStats);
            }
        }

        // generator-side step
        let w = self.plan.weights;
        let mut c = LossComponents::default();
        let mut terms: Vec<(f64, Tensor)> = Vec::new();
        let mut add = |weight: f64, t: Tensor, slot: &mut f64| -> Result<()> {
            *slot = scalar(&t)?;
            terms.push((weight, t));
            Ok(())
        };
        if self.plan.pixel {
            add(1.0, pixel_loss(&x_hat, &x)?, &mut c.pixel)?;
        }
        if self.plan.uses_identity_loss() {
            add(w.identity, identity_loss(&bundle.feature_net, &x_hat, &x, &w.layer_betas)?, &mut c.identity)?;
        }
        if self.plan.uses_image_disc() {
            let out = bundle.image_disc.forward(&x_hat, &labels)?;
            if w.q > 0.0 {
                let mu = bundle.q.predict(&out.features, &classes)?;
                add(w.q, q_loss(&mu, &targets)?, &mut c.q)?;
            }
            if w.adv_img > 0.0 {
                add(w.adv_img, gen_loss(&out.prob)?, &mut c.adv_img)?;
            }
        }
        if w.adv_z > 0.0 {
            add(w.adv_z, gen_loss(&bundle.code_disc.forward(&g)?)?, &mut c.adv_z)?;
        }
        if w.tv > 0.0 {
            add(w.tv, tv_loss(&x_hat)?, &mut c.tv)?;
        }
        let report = total_loss(c, w)?;
        let mut objective: Option<Tensor> = None;
        for (weight, t) in terms {
            let t = if weight == 1.0 { t } else { (t * weight)? };
            objective = Some(match objective {
                Some(o) => (o + t)?,
                None => t,
            });
        }
        if let Some(objective) = objective {
            self.gen_opt.step(&objective.backward()?)?;
        }
        self.configure(false);
        Ok((report, d_img_loss, d_z_loss))
    }

    /// Write the bundle, optimizer moments, and position to `dir`.
    pub fn save(&self, dir: &Path) -> Result<String> {
        save_training_checkpoint(self.bundle, &self.state, &self.gen_opt, self.disc_opt.as_ref(), dir)
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }
}

fn finite(v: f64, term: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { term: term.to_string() })
    }
}

fn uniform_rows<R: Rng>(rng: &mut R, rows: usize, cols: usize, dtype: DType) -> Result<Tensor> {
    let v = sample_uniform(rng, rows * cols);
    Ok(Tensor::from_vec(v, (rows, cols), &Device::Cpu)?.to_dtype(dtype)?)
}

fn split_prefixed(tensors: HashMap<String, Tensor>) -> (HashMap<String, Tensor>, HashMap<String, Tensor>) {
    let mut gen = HashMap::new();
    let mut disc = HashMap::new();
    for (k, v) in tensors {
        if let Some(rest) = k.strip_prefix("gen/") {
            gen.insert(rest.to_string(), v);
        } else if let Some(rest) = k.strip_prefix("disc/") {
            disc.insert(rest.to_string(), v);
        }
    }
    (gen, disc)
}

fn save_training_checkpoint(
    bundle: &ModelBundle,
    state: &TrainState,
    gen: &Adam,
    disc: Option<&Adam>,
    dir: &Path,
) -> Result<String> {
    let id = bundle.save(dir)?;
    let mut moments = HashMap::new();
    for (k, v) in gen.state_tensors() {
        moments.insert(format!("gen/{k}"), v);
    }
    if let Some(d) = disc {
        for (k, v) in d.state_tensors() {
            moments.insert(format!("disc/{k}"), v);
        }
    }
    crate::networks::save_tensors(&moments, &dir.join(OPTIMIZER_FILE))?;
    fs::write(dir.join(STATE_FILE), serde_json::to_string(state)?)?;
    Ok(id)
}

/// Options for [`train_stage`] beyond the plan.
#[derive(Debug, Clone)]
pub struct StageRunOptions {
    pub adam: AdamConfig,
    pub seed: u64,
    pub flip: bool,
    pub output_dir: PathBuf,
    pub checkpoint_every: u64,
    /// Continue from an interrupted run of this stage.
    pub resume: Option<PathBuf>,
}

pub fn stage_dir(output_dir: &Path, stage: u8) -> PathBuf {
    output_dir.join(format!("stage{stage}"))
}

fn progress_dir(output_dir: &Path, stage: u8) -> PathBuf {
    output_dir.join(format!("stage{stage}-progress"))
}

/// Outcome of one completed stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: u8,
    pub checkpoint: PathBuf,
    pub checkpoint_id: String,
    pub steps: u64,
    pub seconds: f64,
    pub history: Vec<LossRecord>,
}

/// Train one stage to completion, appending loss records to the log and
/// writing a checkpoint every `checkpoint_every` steps and at the end.
pub fn train_stage(
    bundle: &mut ModelBundle,
    plan: StagePlan,
    data: &[LabeledImage],
    opts: &StageRunOptions,
) -> Result<StageSummary> {
    let started = Instant::now();
    let stage = plan.stage;
    fs::create_dir_all(&opts.output_dir)?;
    let mut log = OpenOptions::new()
        .create(true)
        .append(true)
        .open(opts.output_dir.join(LOSS_LOG))?;
    let progress = progress_dir(&opts.output_dir, stage);
    let state = {
        let mut runner = match &opts.resume {
            Some(dir) => StageRunner::resume(bundle, plan, data, opts.adam, opts.flip, dir)?,
            None => StageRunner::new(bundle, plan, data, opts.adam, opts.seed, opts.flip)?,
        };
        while !runner.is_finished() {
            let record = runner.step()?;
            writeln!(log, "{}", record.to_line())?;
            if opts.checkpoint_every > 0 && record.step % opts.checkpoint_every == 0 && !runner.is_finished() {
                runner.save(&progress)?;
            }
        }
        let final_dir = stage_dir(&opts.output_dir, stage);
        // tag the stage as complete before the final save
        let (gen, disc, state) = (runner.gen_opt, runner.disc_opt, runner.state);
        bundle.stage = stage;
        let id = save_training_checkpoint(bundle, &state, &gen, disc.as_ref(), &final_dir)?;
        (state, final_dir, id)
    };
    let (state, checkpoint, checkpoint_id) = state;
    if progress.exists() {
        fs::remove_dir_all(&progress)?;
    }
    Ok(StageSummary {
        stage,
        checkpoint,
        checkpoint_id,
        steps: state.step,
        seconds: started.elapsed().as_secs_f64(),
        history: state.history,
    })
}

/// Training and test images per the data configuration.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub train: Vec<LabeledImage>,
    pub test: Vec<LabeledImage>,
}

pub fn load_data(config: &TrainConfig) -> Result<TrainData> {
    let all = match &config.data.dir {
        Some(dir) => read_dataset(dir, config.classes)?,
        None => {
            let mut spec = config.data.synthetic;
            if spec.seed == 0 {
                spec.seed = derive_seed(config.seed, &["dataset"]);
            }
            sample_dataset(&spec)?
        }
    };
    if all.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (train, test) = split_by_identity(&all, config.data.test_fraction, derive_seed(config.seed, &["split"]))?;
    Ok(TrainData { train, test })
}

/// Record of a curriculum run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurriculumManifest {
    pub config_hash: String,
    pub config: TrainConfig,
    pub seeds: BTreeMap<String, u64>,
    pub train_images: usize,
    pub test_images: usize,
    pub train_identities: Vec<usize>,
    pub feature_net: Option<ClassifierReport>,
    pub stages: Vec<StageSummaryEntry>,
    pub expression_classifier: Option<ClassifierReport>,
    pub final_checkpoint: Option<PathBuf>,
    pub final_checkpoint_id: Option<String>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageSummaryEntry {
    pub stage: u8,
    pub checkpoint: PathBuf,
    pub checkpoint_id: String,
    pub steps: u64,
    pub seconds: f64,
}

pub const CURRICULUM_MANIFEST: &str = "curriculum.json";

/// Which part of the curriculum to run.
#[derive(Debug, Clone, Default)]
pub struct CurriculumRequest {
    /// Stages to run in order; empty means all three.
    pub stages: Vec<u8>,
    /// Checkpoint to start from instead of the previous stage's output.
    pub resume: Option<PathBuf>,
}

pub struct CurriculumOutcome {
    pub bundle: ModelBundle,
    pub manifest: CurriculumManifest,
    pub histories: BTreeMap<u8, Vec<LossRecord>>,
    pub data: TrainData,
}

fn seed_table(config: &TrainConfig) -> BTreeMap<String, u64> {
    ["init", "dataset", "split", "feature_net", "classifier"]
        .iter()
        .map(|k| (k.to_string(), derive_seed(config.seed, &[k])))
        .chain((1..=3u8).map(|s| (format!("stage{s}"), derive_seed(config.seed, &["stage", &s.to_string()]))))
        .chain([("master".to_string(), config.seed)])
        .collect()
}

/// Train the feature network, the requested stages, and the expression
/// classifier, writing checkpoints and a manifest under the output dir.
pub fn run_curriculum(config: &TrainConfig, request: &CurriculumRequest) -> Result<CurriculumOutcome> {
    config.validate()?;
    let started = Instant::now();
    let out = &config.output_dir;
    fs::create_dir_all(out)?;
    fs::write(out.join("config.toml"), config.to_toml())?;
    let seeds = seed_table(config);
    let data = load_data(config)?;
    let train_ids: Vec<usize> = identities(&data.train).into_iter().collect();
    let mut stages = if request.stages.is_empty() {
        vec![1, 2, 3]
    } else {
        request.stages.clone()
    };
    stages.sort();
    stages.dedup();
    if let Some(bad) = stages.iter().find(|s| !(1..=3).contains(*s)) {
        return Err(Error::validation("stages", format!("{bad} is not one of 1, 2, 3")));
    }
    let first = stages[0];

    let mut feature_report = None;
    let mut resume_progress = None;
    let mut bundle = if first == 1 && request.resume.is_none() {
        let spec = config.architecture(train_ids.len())?;
        let mut bundle = ModelBundle::new(spec, seeds["init"])?;
        let report = pretrain_feature_net(&mut bundle, &data.train, &config.feature_net, seeds["feature_net"])?;
        feature_report = Some(report);
        bundle
    } else {
        let source = match &request.resume {
            Some(p) => p.clone(),
            None => stage_dir(out, first - 1),
        };
        if !checkpoint_files(&source).iter().all(|p| p.exists()) {
            return Err(Error::MissingPrerequisite {
                stage: first,
                path: source,
            });
        }
        let bundle = ModelBundle::load(&source)?;
        if bundle.stage + 1 < first {
            return Err(Error::MissingPrerequisite {
                stage: first,
                path: stage_dir(out, first - 1),
            });
        }
        if bundle.stage + 1 == first && source.join(STATE_FILE).exists() {
            // an interrupted run of the requested stage
            let state: TrainState = serde_json::from_str(&fs::read_to_string(source.join(STATE_FILE))?)?;
            if state.stage == first {
                resume_progress = Some(source.clone());
            }
        }
        if first == 1 && !bundle.feature_net.is_trained() {
            let mut bundle = bundle;
            feature_report =
                Some(pretrain_feature_net(&mut bundle, &data.train, &config.feature_net, seeds["feature_net"])?);
            bundle
        } else {
            bundle
        }
    };

    let mut summaries = Vec::new();
    let mut histories = BTreeMap::new();
    for stage in stages {
        let plan = StagePlan::for_stage(stage, config)?;
        let opts = StageRunOptions {
            adam: config.optimizer.adam(),
            seed: seeds[&format!("stage{stage}")],
            flip: config.data.flip,
            output_dir: out.clone(),
            checkpoint_every: config.checkpoint_every,
            resume: resume_progress.take(),
        };
        let summary = train_stage(&mut bundle, plan, &data.train, &opts)?;
        summaries.push(StageSummaryEntry {
            stage,
            checkpoint: summary.checkpoint.clone(),
            checkpoint_id: summary.checkpoint_id.clone(),
            steps: summary.steps,
            seconds: summary.seconds,
        });
        histories.insert(stage, summary.history);
    }

    let mut classifier_report = None;
    let mut final_checkpoint = None;
    let mut final_id = None;
    if bundle.stage == 3 {
        let report = train_expression_classifier(
            &bundle.classifier,
            &data.train,
            &[],
            &data.test,
            &config.expression_classifier,
            seeds["classifier"],
        )?;
        bundle.classifier_trained = true;
        classifier_report = Some(report);
        let dir = out.join("final");
        final_id = Some(bundle.save(&dir)?);
        final_checkpoint = Some(dir);
    }

    let manifest = CurriculumManifest {
        config_hash: config.hash(),
        config: config.clone(),
        seeds,
        train_images: data.train.len(),
        test_images: data.test.len(),
        train_identities: train_ids,
        feature_net: feature_report,
        stages: summaries,
        expression_classifier: classifier_report,
        final_checkpoint,
        final_checkpoint_id: final_id,
        seconds: started.elapsed().as_secs_f64(),
    };
    fs::write(out.join(CURRICULUM_MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(CurriculumOutcome {
        bundle,
        manifest,
        histories,
        data,
    })
}

/// SHA-256 of a checkpoint's parameter file.
pub fn checkpoint_checksum(dir: &Path) -> Result<String> {
    let files = checkpoint_files(dir);
    Ok(sha256_hex(&fs::read(&files[1])?))
}

#[cfg(test)]
mod tests;
