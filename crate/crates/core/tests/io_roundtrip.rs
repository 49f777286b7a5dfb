//! On-disk formats: lossless round trips, determinism and corruption.

use serde_json::json;
use tcssl_core::io::{
    decode_checkpoint, encode_checkpoint, encode_video, load_checkpoint, load_dataset, read_video, save_checkpoint,
    write_dataset, write_video, Checkpoint, CheckpointArch,
};
use tcssl_core::nn::{EncoderArch, Parameterized, PhaseArch, PhaseModel};
use tcssl_core::rng::derive;
use tcssl_core::synth::{generate_dataset, SynthConfig};
use tcssl_core::train::evaluate;
use tcssl_core::Error;

fn small_synth() -> SynthConfig {
    SynthConfig {
        min_duration: 10,
        max_duration: 30,
        ..SynthConfig::default()
    }
}

fn phase_arch(n_in: usize) -> PhaseArch {
    PhaseArch {
        encoder: EncoderArch {
            input_dim: n_in,
            hidden: vec![8],
            embedding_dim: 4,
        },
        lstm_hidden: 5,
        num_phases: 7,
    }
}

#[test]
fn generated_videos_round_trip_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_dataset(&small_synth(), 6, 61).unwrap();
    for v in &ds.videos {
        let (f, l) = (dir.path().join("v.tcsl"), dir.path().join("v.csv"));
        write_video(&f, Some(&l), v).unwrap();
        let back = read_video(&f, Some(&l)).unwrap();
        assert_eq!(&back, v);
        let bits = |s: &tcssl_core::FrameSequence| s.features.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(v));
        let first = std::fs::read(&f).unwrap();
        write_video(&f, Some(&l), v).unwrap();
        assert_eq!(std::fs::read(&f).unwrap(), first);
    }
}

#[test]
fn header_only_labels_mean_unlabeled() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_dataset(&small_synth(), 4, 62).unwrap();
    let (f, l) = (dir.path().join("v.tcsl"), dir.path().join("v.csv"));
    write_video(&f, None, &ds.videos[0]).unwrap();
    std::fs::write(&l, "frame_index,phase_id\n").unwrap();
    assert_eq!(read_video(&f, Some(&l)).unwrap().labels, None);
}

#[test]
fn truncation_reports_a_byte_offset() {
    let ds = generate_dataset(&small_synth(), 4, 63).unwrap();
    let bytes = encode_video(&ds.videos[0]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("v.tcsl");
    std::fs::write(&f, &bytes[..bytes.len() - 3]).unwrap();
    match read_video(&f, None) {
        Err(Error::Format { offset, .. }) => assert!(offset > 0 && offset < bytes.len() as u64),
        other => panic!("expected a format error, got {other:?}"),
    }
}

#[test]
fn checkpoint_restores_an_identical_evaluation() {
    let ds = generate_dataset(&small_synth(), 4, 64).unwrap();
    let mut model = PhaseModel::new(&phase_arch(16), &mut derive(64, 0)).unwrap();
    model.set_trainable(&["encoder.0"], false).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.tcsm");
    save_checkpoint(&path, &Checkpoint::Phase(model.clone()), json!({"note": "x"})).unwrap();
    let first = std::fs::read(&path).unwrap();
    save_checkpoint(&path, &Checkpoint::Phase(model.clone()), json!({"note": "x"})).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), first);

    let (ckpt, meta) = load_checkpoint(&path, Some(&CheckpointArch::Phase(phase_arch(16)))).unwrap();
    assert_eq!(meta, json!({"note": "x"}));
    let restored = ckpt.into_phase_model().unwrap();
    assert_eq!(restored, model);
    assert!(!restored.is_layer_trainable("encoder.0").unwrap());
    assert_eq!(evaluate(&restored, &ds.videos).unwrap(), evaluate(&model, &ds.videos).unwrap());
}

#[test]
fn checkpoint_shape_and_magic_errors() {
    let model = PhaseModel::new(&phase_arch(16), &mut derive(65, 0)).unwrap();
    let bytes = encode_checkpoint(&Checkpoint::Phase(model), json!(null)).unwrap();
    let wrong = CheckpointArch::Phase(phase_arch(12));
    assert!(matches!(decode_checkpoint(&bytes, Some(&wrong)), Err(Error::ShapeMismatch { .. })));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_checkpoint(&bad, None), Err(Error::Format { offset: 0, .. })));
}

#[test]
fn dataset_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_dataset(&small_synth(), 8, 66).unwrap();
    let splits: Vec<_> = ds.splits.iter().copied().map(Some).collect();
    write_dataset(dir.path(), &ds.videos, &splits, Some(7), json!({"seed": 66})).unwrap();
    let loaded = load_dataset(dir.path()).unwrap();
    assert_eq!(loaded.videos, ds.videos);
    assert_eq!(loaded.splits, splits);
    assert_eq!(loaded.manifest.num_phases, Some(7));

    std::fs::remove_file(dir.path().join(&loaded.manifest.videos[2].features_file)).unwrap();
    assert!(load_dataset(dir.path()).is_err());
}
