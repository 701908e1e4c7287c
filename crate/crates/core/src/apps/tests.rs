use std::collections::BTreeMap;

use super::*;
use crate::datagen::{sample_dataset, DatasetSpec, IntensityRange};
use crate::exprcode::{edit_code, CodeLayout};
use crate::networks::{ArchitectureSpec, Subnet};

fn images() -> Vec<LabeledImage> {
    sample_dataset(&DatasetSpec {
        n_identities: 3,
        images_per_identity_per_class: 1,
        classes: 3,
        resolution: 32,
        intensity: IntensityRange { min: 0.3, max: 1.0 },
        seed: 4,
    })
    .unwrap()
}

fn bundle(stage: u8, classifier: bool) -> ModelBundle {
    let mut b = ModelBundle::new(ArchitectureSpec::tiny(CodeLayout::new(3, 5).unwrap(), 3), 2).unwrap();
    b.stage = stage;
    b.classifier_trained = classifier;
    b.feature_net.mark_trained();
    b
}

fn snapshots(b: &ModelBundle) -> BTreeMap<Subnet, BTreeMap<String, Vec<u64>>> {
    Subnet::ALL.iter().map(|s| (*s, b.store(*s).snapshot().unwrap())).collect()
}

#[test]
fn edit_grid_has_reference_and_one_row_per_class() {
    let b = bundle(2, false);
    let x = &images()[0];
    let before = snapshots(&b);
    let grid = edit_expression(&b, x).unwrap();
    assert_eq!((grid.rows(), grid.cols()), (4, 1));
    assert_eq!(grid.cell(0, 0), x.pixels.as_slice());
    for r in 0..4 {
        assert!(grid.cell(r, 0).iter().all(|v| (-1.0..=1.0).contains(v)));
    }
    // editing to class k equals decoding with edit_code(k) directly
    let g = identity_codes(&b, std::slice::from_ref(x)).unwrap();
    let direct = decode_pairs(&b, &g, &[edit_code(1, b.spec.layout).unwrap()]).unwrap();
    assert_eq!(grid.cell(2, 0), direct[0].as_slice());
    assert_eq!(before, snapshots(&b));
    assert!(matches!(edit_expression(&bundle(1, false), x), Err(Error::Untrained(_))));
}

#[test]
fn sweep_has_levels_and_neutral_column() {
    let b = bundle(3, false);
    let x = &images()[1];
    let grid = intensity_sweep(&b, x, 0).unwrap();
    assert_eq!((grid.rows(), grid.cols()), (1, 6));
    assert_eq!(grid.col_captions().last().unwrap(), "neutral");
    let g = identity_codes(&b, std::slice::from_ref(x)).unwrap();
    let neutral = decode_pairs(&b, &g, &[neutral_code(b.spec.layout)]).unwrap();
    assert_eq!(grid.cell(0, 5), neutral[0].as_slice());
    assert_eq!(intensity_sweep(&b, x, 0).unwrap(), grid);
    assert!(intensity_sweep(&b, x, 3).is_err());
}

#[test]
fn transfer_needs_classifier_and_keeps_code_structure() {
    let data = images();
    assert!(matches!(
        transfer_expression(&bundle(3, false), &data[0], &data[1]),
        Err(Error::Untrained(_))
    ));
    let b = bundle(3, true);
    let t = transfer_expression(&b, &data[0], &data[4]).unwrap();
    assert_eq!(t.image.pixels.len(), data[0].pixels.len());
    let label = ExpressionLabel::new(t.predicted_class, 3).unwrap();
    assert!(t.code.has_training_structure(label));
    assert!(t.code.values().iter().all(|v| (-1.0..=1.0).contains(v)));
}

#[test]
fn transfer_onto_itself_is_reconstruction_when_class_agrees() {
    let b = bundle(3, true);
    let data = images();
    let predicted = classify_expression(&b, &data).unwrap();
    let mut relabeled = data[0].clone();
    relabeled.label = ExpressionLabel::new(predicted[0], 3).unwrap();
    let t = transfer_expression(&b, &relabeled, &relabeled).unwrap();
    let r = reconstruct(&b, std::slice::from_ref(&relabeled)).unwrap();
    assert_eq!(t.image.pixels, r[0].pixels);
}

#[test]
fn generation_is_seeded_and_label_driven() {
    let b = bundle(1, false);
    let label = ExpressionLabel::new(2, 3).unwrap();
    let a = generate_random(&b, label, 7, &mut rng_for(1, &["g"])).unwrap();
    let again = generate_random(&b, label, 7, &mut rng_for(1, &["g"])).unwrap();
    assert_eq!(a.len(), 7);
    assert_eq!(a, again);
    assert!(a.iter().all(|im| im.class() == 2 && im.resolution == 32));
    let z = vec![sample_uniform(&mut rng_for(2, &["z"]), b.spec.id_dim); 3];
    let codes: Vec<ExpressionCode> = (0..3).map(|k| edit_code(k, b.spec.layout).unwrap()).collect();
    let per_class = decode_pairs(&b, &z, &codes).unwrap();
    assert_ne!(per_class[0], per_class[1]);
    assert_ne!(per_class[1], per_class[2]);
    assert!(generate_random(&bundle(0, false), label, 1, &mut rng_for(1, &["g"])).is_err());
    let balanced = generate_balanced(&b, 8, 3).unwrap();
    let counts: Vec<usize> = (0..3).map(|k| balanced.iter().filter(|im| im.class() == k).count()).collect();
    assert_eq!(counts, vec![3, 3, 2]);
}

#[test]
fn retrieval_finds_query_first_in_every_space() {
    let b = bundle(3, true);
    let data = images();
    for space in [Space::Code, Space::Label, Space::Pixel] {
        let r = retrieve(Some(&b), &data[4], &data, space, 3).unwrap();
        assert_eq!(r.ranked.len(), 3);
        assert_eq!(r.ranked[0].1, 0.0);
        assert!(r.ranked.windows(2).all(|w| w[0].1 <= w[1].1));
        if space != Space::Label {
            assert_eq!(r.ranked[0].0, 4);
        }
    }
    let r = retrieve(None, &data[0], &data, Space::Label, data.len()).unwrap();
    let sqrt2 = 2f64.sqrt();
    assert!(r.ranked.iter().all(|(_, d)| *d == 0.0 || (*d - sqrt2).abs() < 1e-15));
    assert!(retrieve(None, &data[0], &[], Space::Pixel, 1).is_err());
    assert!(retrieve(None, &data[0], &data, Space::Code, 1).is_err());
    let acc = retrieval_accuracy(None, &data, Space::Label).unwrap();
    assert_eq!(acc, 1.0);
}

#[test]
fn feature_export_shape_and_stability() {
    let b = bundle(3, true);
    let data = images();
    let records = export_features(&b, &data).unwrap();
    assert_eq!(records.len(), data.len());
    assert!(records
        .iter()
        .all(|r| r.identity_code.len() + r.expression_code.len() == b.spec.id_dim + b.spec.layout.len()));
    let dir = tempfile::tempdir().unwrap();
    let (p1, p2) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    write_features_csv(&p1, &records, "id0").unwrap();
    write_features_csv(&p2, &export_features(&b, &data).unwrap(), "id0").unwrap();
    let text = std::fs::read_to_string(&p1).unwrap();
    assert_eq!(text, std::fs::read_to_string(&p2).unwrap());
    let header = text.lines().next().unwrap();
    assert_eq!(header.split(',').count(), 3 + b.spec.id_dim + b.spec.layout.len());
    // values round-trip exactly
    let second: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(second[3].parse::<f32>().unwrap(), records[0].identity_code[0]);
}

#[test]
fn augmentation_table_rows_per_count() {
    let b = bundle(3, false);
    let data = images();
    let cfg = ClassifierConfig {
        learning_rate: 1e-3,
        batch_size: 4,
        max_epochs: 1,
        patience: 1,
        validation_fraction: 0.1,
    };
    let (table, reports) = augmentation_experiment(&b, &data[..6], &data[6..], &[0, 6], &cfg, 1, "abc").unwrap();
    assert_eq!(table.rows.len(), 2);
    assert_eq!(reports[1].synthetic_images, 6);
    assert!(table.rows.iter().all(|r| (0.0..=1.0).contains(&r.accuracy)));
    let csv = table.to_csv().unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("checkpoint_id,synthetic_images"));
}

#[test]
fn space_tags_parse() {
    for s in [Space::Code, Space::Label, Space::Pixel] {
        assert_eq!(s.tag().parse::<Space>().unwrap(), s);
    }
    assert!("z".parse::<Space>().is_err());
}
