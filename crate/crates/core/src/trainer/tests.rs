use super::*;
use crate::datagen::{DatasetSpec, IntensityRange};
use crate::exprcode::CodeLayout;
use crate::networks::ArchitectureSpec;

fn tiny_config(dir: &Path) -> TrainConfig {
    let mut c = TrainConfig::preset(Preset::Desk);
    c.seed = 3;
    c.data.synthetic = DatasetSpec {
        n_identities: 4,
        images_per_identity_per_class: 2,
        classes: 3,
        resolution: 32,
        intensity: IntensityRange { min: 0.3, max: 1.0 },
        seed: 0,
    };
    c.data.test_fraction = 0.25;
    c.stage_epochs = [2, 2, 1];
    c.optimizer.batch_size = 4;
    c.feature_net.batch_size = 4;
    c.feature_net.max_epochs = 2;
    c.expression_classifier.batch_size = 4;
    c.expression_classifier.max_epochs = 1;
    c.checkpoint_every = 2;
    c.output_dir = dir.to_path_buf();
    c.architecture = Some(ArchitectureSpec::tiny(CodeLayout::new(3, 5).unwrap(), 2));
    c
}

fn tiny_bundle(data: &[LabeledImage]) -> ModelBundle {
    let n = identities(data).len();
    let mut b = ModelBundle::new(ArchitectureSpec::tiny(CodeLayout::new(3, 5).unwrap(), n), 11).unwrap();
    b.feature_net.mark_trained();
    b
}

fn snapshots(b: &ModelBundle) -> BTreeMap<Subnet, BTreeMap<String, Vec<u64>>> {
    Subnet::ALL.iter().map(|s| (*s, b.store(*s).snapshot().unwrap())).collect()
}

fn data() -> Vec<LabeledImage> {
    let dir = tempfile::tempdir().unwrap();
    load_data(&tiny_config(dir.path())).unwrap().train
}

#[test]
fn stage_plans_follow_the_curriculum() {
    let c = TrainConfig::preset(Preset::Desk);
    let p1 = StagePlan::for_stage(1, &c).unwrap();
    assert_eq!(p1.trained(), vec![Subnet::Decoder, Subnet::ImageDisc, Subnet::Q]);
    assert_eq!(p1.identity_source, IdentitySource::RandomNoise);
    assert!(!p1.pixel);
    let p2 = StagePlan::for_stage(2, &c).unwrap();
    assert_eq!(p2.trained(), vec![Subnet::Encoder, Subnet::Decoder, Subnet::Q]);
    assert_eq!(p2.weights.q, 0.1);
    assert_eq!(p2.weights.adv_img, 0.0);
    let p3 = StagePlan::for_stage(3, &c).unwrap();
    assert_eq!(p3.weights, LossWeights::paper());
    assert_eq!(
        p3.trained(),
        vec![Subnet::Encoder, Subnet::Decoder, Subnet::ImageDisc, Subnet::Q, Subnet::CodeDisc]
    );
    assert!(StagePlan::for_stage(4, &c).is_err());
}

fn run_steps(bundle: &ModelBundle, stage: u8, data: &[LabeledImage], steps: usize) -> Vec<LossRecord> {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let plan = StagePlan::for_stage(stage, &config).unwrap();
    let mut r = StageRunner::new(bundle, plan, data, config.optimizer.adam(), 5, true).unwrap();
    (0..steps).map(|_| r.step().unwrap()).collect()
}

#[test]
fn each_stage_touches_only_its_networks() {
    let data = data();
    let mut bundle = tiny_bundle(&data);
    for stage in 1..=3u8 {
        let before = snapshots(&bundle);
        let records = run_steps(&bundle, stage, &data, 2);
        assert!(records.iter().all(|r| r.total.is_finite()));
        let after = snapshots(&bundle);
        let plan = StagePlan::for_stage(stage, &TrainConfig::preset(Preset::Desk)).unwrap();
        for s in Subnet::ALL {
            let changed = before[&s] != after[&s];
            assert_eq!(changed, plan.trained().contains(&s), "stage {stage}, {s:?}");
        }
        bundle.stage = stage;
    }
}

#[test]
fn later_stage_needs_previous_one() {
    let data = data();
    let bundle = tiny_bundle(&data);
    let config = TrainConfig::preset(Preset::Desk);
    let plan = StagePlan::for_stage(3, &config).unwrap();
    let err = StageRunner::new(&bundle, plan, &data, config.optimizer.adam(), 0, false).err().unwrap();
    assert!(matches!(err, Error::MissingPrerequisite { stage: 3, .. }));
}

#[test]
fn identity_loss_needs_trained_feature_net() {
    let data = data();
    let n = identities(&data).len();
    let bundle = ModelBundle::new(ArchitectureSpec::tiny(CodeLayout::new(3, 5).unwrap(), n), 1).unwrap();
    let config = TrainConfig::preset(Preset::Desk);
    let mut plan = StagePlan::for_stage(2, &config).unwrap();
    plan.batch_size = 4;
    let mut b = bundle;
    b.stage = 1;
    let err = StageRunner::new(&b, plan, &data, config.optimizer.adam(), 0, false).err().unwrap();
    assert!(matches!(err, Error::FeatureNetUninitialized));
}

#[test]
fn same_seed_same_records() {
    let data = data();
    let a = run_steps(&tiny_bundle(&data), 1, &data, 3);
    let b = run_steps(&tiny_bundle(&data), 1, &data, 3);
    assert_eq!(a, b);
}

#[test]
fn resumed_run_reproduces_next_step() {
    let data = data();
    for stage in [1u8, 3] {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config(dir.path());
        let plan = StagePlan::for_stage(stage, &config).unwrap();
        let mut bundle = tiny_bundle(&data);
        bundle.stage = stage - 1;
        let mut runner = StageRunner::new(&bundle, plan.clone(), &data, config.optimizer.adam(), 9, true).unwrap();
        runner.step().unwrap();
        runner.step().unwrap();
        runner.save(dir.path()).unwrap();
        let expected = runner.step().unwrap();

        let loaded = ModelBundle::load(dir.path()).unwrap();
        let mut resumed = StageRunner::resume(&loaded, plan, &data, config.optimizer.adam(), true, dir.path()).unwrap();
        assert_eq!(resumed.state().step, 2);
        let got = resumed.step().unwrap();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-5 * a.abs().max(b.abs()).max(1e-12);
        for (a, b) in [
            (expected.pixel, got.pixel),
            (expected.identity, got.identity),
            (expected.q, got.q),
            (expected.adv_img, got.adv_img),
            (expected.adv_z, got.adv_z),
            (expected.tv, got.tv),
            (expected.total, got.total),
            (expected.d_img, got.d_img),
            (expected.d_z, got.d_z),
        ] {
            assert!(close(a, b), "stage {stage}: {a} vs {b}");
        }
    }
}

#[test]
fn non_finite_parameters_abort_with_term() {
    let data = data();
    let mut bundle = tiny_bundle(&data);
    bundle.stage = 1;
    let (_, var) = bundle
        .store(Subnet::Decoder)
        .named_vars()
        .find(|(k, _)| k.starts_with("dec.up4"))
        .unwrap();
    let poisoned = (var.as_tensor().ones_like().unwrap() * f64::NAN).unwrap();
    var.set(&poisoned).unwrap();
    let config = TrainConfig::preset(Preset::Desk);
    let mut plan = StagePlan::for_stage(2, &config).unwrap();
    plan.batch_size = 4;
    let mut r = StageRunner::new(&bundle, plan, &data, config.optimizer.adam(), 0, false).unwrap();
    match r.step() {
        Err(Error::NonFinite { term }) => assert_eq!(term, "pixel"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn curriculum_writes_checkpoints_and_is_reproducible() {
    let dir_a = tempfile::tempdir().unwrap();
    let a = run_curriculum(&tiny_config(dir_a.path()), &CurriculumRequest::default()).unwrap();
    assert_eq!(a.manifest.stages.len(), 3);
    for s in 1..=3u8 {
        assert!(stage_dir(dir_a.path(), s).join("metadata.json").exists());
        assert!(!progress_dir(dir_a.path(), s).exists());
    }
    assert!(dir_a.path().join(CURRICULUM_MANIFEST).exists());
    let log = fs::read_to_string(dir_a.path().join(LOSS_LOG)).unwrap();
    let total: u64 = a.manifest.stages.iter().map(|s| s.steps).sum();
    assert_eq!(log.lines().count() as u64, total);
    assert_eq!(a.bundle.stage, 3);
    assert!(a.bundle.classifier_trained);

    let dir_b = tempfile::tempdir().unwrap();
    let b = run_curriculum(&tiny_config(dir_b.path()), &CurriculumRequest::default()).unwrap();
    assert_eq!(a.manifest.final_checkpoint_id, b.manifest.final_checkpoint_id);
    assert_eq!(
        checkpoint_checksum(&stage_dir(dir_a.path(), 3)).unwrap(),
        checkpoint_checksum(&stage_dir(dir_b.path(), 3)).unwrap()
    );

    // stage 3 alone continues from the stage-2 checkpoint ...
    let again = run_curriculum(
        &tiny_config(dir_a.path()),
        &CurriculumRequest {
            stages: vec![3],
            resume: None,
        },
    )
    .unwrap();
    assert_eq!(again.manifest.final_checkpoint_id, a.manifest.final_checkpoint_id);
    // ... and fails without it
    fs::remove_dir_all(stage_dir(dir_a.path(), 2)).unwrap();
    let err = run_curriculum(
        &tiny_config(dir_a.path()),
        &CurriculumRequest {
            stages: vec![3],
            resume: None,
        },
    )
    .err()
    .unwrap();
    assert!(matches!(err, Error::MissingPrerequisite { stage: 3, .. }), "{err}");
}

#[test]
fn epoch_means_group_by_epoch() {
    let report = total_loss(
        LossComponents {
            pixel: 1.0,
            ..Default::default()
        },
        LossWeights::zero(),
    )
    .unwrap();
    let mut recs = vec![
        LossRecord::new(1, 1, 0, &report, 0.0, 0.0),
        LossRecord::new(2, 1, 0, &report, 0.0, 0.0),
        LossRecord::new(3, 1, 1, &report, 0.0, 0.0),
    ];
    recs[1].pixel = 3.0;
    assert_eq!(epoch_means(&recs, |r| r.pixel), vec![2.0, 1.0]);
}
