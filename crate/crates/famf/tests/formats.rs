use std::path::Path;

use famf::formats::checkpoint::Checkpoint;
use famf::formats::features::{digest, encode, load_features, write_dataset};
use famf::Error;
use famf_core::data::{generate, Dataset, Episode, SynthSpec};
use famf_core::fusion::{FusionConfig, FusionKind};
use famf_core::model::FamfModel;
use famf_core::Tensor;

fn small_dataset() -> Dataset {
    let mut data = generate(&SynthSpec {
        num_classes: 4,
        episodes_per_class: 3,
        dim: 6,
        min_frames: 1,
        max_frames: 5,
        audio_dropout: 0.5,
        body_dropout: 0.5,
        text_dropout: 0.5,
        seed: 9,
        ..SynthSpec::default()
    })
    .unwrap();
    // An episode with no detected face and no quality annotations.
    data.episodes.push(Episode {
        id: 999,
        label: 2,
        face: Tensor::zeros(&[0, 6]),
        audio: Some(vec![0.25; 6]),
        body: None,
        text: None,
        quality: None,
    });
    Dataset::new(data.num_classes, data.dim, data.episodes).unwrap()
}

fn bits(d: &Dataset) -> Vec<u64> {
    d.episodes
        .iter()
        .flat_map(|e| {
            let clip = [&e.audio, &e.body, &e.text].into_iter().flatten().flatten();
            e.face.data().iter().chain(clip).map(|v| v.to_bits()).collect::<Vec<_>>()
        })
        .collect()
}

#[test]
fn feature_files_round_trip_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset();
    let manifest = dir.path().join("m.txt");
    write_dataset(&data, &manifest).unwrap();
    let back = load_features(&manifest).unwrap();
    assert_eq!(back, data);
    assert_eq!(bits(&back), bits(&data));
    assert_eq!(digest(&back).unwrap(), digest(&data).unwrap());
}

#[test]
fn empty_manifest_is_an_empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.txt");
    std::fs::write(&m, "").unwrap();
    assert!(load_features(&m).unwrap().is_empty());
    std::fs::write(&m, "famf-features 1\n# nothing yet\ndim 8\nclasses 3\n").unwrap();
    let d = load_features(&m).unwrap();
    assert!(d.is_empty());
    assert_eq!((d.dim, d.num_classes), (8, 3));
}

fn parse_error(manifest: &Path) -> (u64, Option<u64>, String) {
    match load_features(manifest) {
        Err(Error::Parse { offset, episode, msg, .. }) => (offset, episode, msg),
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn truncated_file_names_the_episode() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset();
    let manifest = dir.path().join("m.txt");
    write_dataset(&data, &manifest).unwrap();
    let features = dir.path().join("features.bin");
    let bytes = std::fs::read(&features).unwrap();
    std::fs::write(&features, &bytes[..bytes.len() - 3]).unwrap();
    let (offset, episode, msg) = parse_error(&manifest);
    assert_eq!(episode, Some(999));
    assert!(msg.contains("truncated"), "{msg}");
    assert!(offset as usize <= bytes.len());
    let shown = load_features(&manifest).unwrap_err().to_string();
    assert!(shown.contains("episode 999") && shown.contains("byte"), "{shown}");
}

#[test]
fn dimension_mismatch_is_reported_at_the_record() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset();
    let manifest = dir.path().join("m.txt");
    write_dataset(&data, &manifest).unwrap();
    let text = std::fs::read_to_string(&manifest).unwrap().replace("dim 6", "dim 7");
    std::fs::write(&manifest, text).unwrap();
    let (offset, episode, msg) = parse_error(&manifest);
    let (_, offsets) = encode(&data).unwrap();
    assert_eq!(episode, Some(data.episodes[0].id));
    assert_eq!(offset, offsets[0] + 12);
    assert!(msg.contains("dimension"), "{msg}");
}

#[test]
fn bad_magic_and_wrong_id_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset();
    let manifest = dir.path().join("m.txt");
    write_dataset(&data, &manifest).unwrap();
    let text = std::fs::read_to_string(&manifest).unwrap();
    let first = data.episodes[0].id;
    let swapped = text.replacen(&format!("episode {first} "), "episode 4242 ", 1);
    std::fs::write(&manifest, swapped).unwrap();
    let (_, episode, msg) = parse_error(&manifest);
    assert_eq!(episode, Some(4242));
    assert!(msg.contains("manifest expects 4242"), "{msg}");

    std::fs::write(&manifest, text).unwrap();
    let features = dir.path().join("features.bin");
    let mut bytes = std::fs::read(&features).unwrap();
    bytes[0] = b'X';
    std::fs::write(&features, bytes).unwrap();
    let (offset, _, msg) = parse_error(&manifest);
    assert_eq!(offset, 0);
    assert!(msg.contains("magic"));
}

fn tiny_model(seed: u64) -> FamfModel {
    let mut c = famf_core::model::FamfConfig::new(6, 4);
    c.hidden_dim = 8;
    c.aggregation.clusters = 2;
    c.fusion = FusionConfig::new(FusionKind::Mlma, 4, 2);
    FamfModel::new(c, seed).unwrap()
}

#[test]
fn checkpoints_round_trip_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let mut model = tiny_model(3);
    model.classifier.bn1.running_mean[0] = 0.125;
    let ckpt = Checkpoint::from_model(&model, "abc", 5, 7);
    let path = dir.path().join("c.famf");
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(back.encode().unwrap(), std::fs::read(&path).unwrap());
    assert_eq!(back.to_model().unwrap(), model);
    assert!(back.check_fingerprint("abc").is_ok());
    assert!(matches!(back.check_fingerprint("abd"), Err(Error::Fingerprint { .. })));
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let bytes = Checkpoint::from_model(&tiny_model(1), "f", 0, 1).encode().unwrap();
    let p = Path::new("c.famf");
    let mut flipped = bytes.clone();
    flipped[40] ^= 1;
    let err = Checkpoint::decode(&flipped, p).unwrap_err();
    assert!(err.to_string().contains("checksum"), "{err}");
    assert!(Checkpoint::decode(&bytes[..bytes.len() / 2], p).is_err());
    assert!(Checkpoint::decode(&bytes[..10], p).is_err());
    let mut wrong = bytes.clone();
    wrong[..8].copy_from_slice(b"NOTCKPT!");
    assert!(Checkpoint::decode(&wrong, p).unwrap_err().to_string().contains("magic"));
}

#[test]
fn checkpoint_for_another_architecture_does_not_load() {
    let mut ckpt = Checkpoint::from_model(&tiny_model(1), "f", 0, 1);
    ckpt.header.model.hidden_dim = 9;
    assert!(ckpt.to_model().is_err());
}
