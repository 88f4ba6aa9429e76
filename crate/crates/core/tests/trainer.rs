use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use ndarray::s;
use omnigait::dataset::{Condition, Manifest, ManifestEntry, Modality, SequenceMeta, Split, SplitTable};
use omnigait::model::{Checkpoint, CheckpointError, ModelConfig, OmniGait, Stream};
use omnigait::synthgen::{generate_dataset, SynthConfig};
use omnigait::trainer::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

const SIL: Modality = Modality::RgbSilhouette;
const DEPTH: Modality = Modality::Depth;
const EVENT: Modality = Modality::Event;

fn fake_manifest(subjects: usize, recordings: usize, frames: usize) -> Manifest {
    let mut entries = Vec::new();
    for s in 0..subjects {
        for r in 0..recordings {
            let meta = SequenceMeta {
                subject_id: format!("{:04}", s + 1),
                view_deg: 0,
                condition: Condition::Nm,
                trial: r as u8 + 1,
                modality: SIL,
            };
            entries.push(ManifestEntry {
                rel_path: PathBuf::from(meta.key()),
                meta,
                frame_count: frames,
            });
        }
    }
    Manifest::new("/nonexistent", entries).unwrap()
}

fn check_batch(clips: &[Clip], spec: &BatchSpec, frames: usize) {
    assert_eq!(clips.len(), spec.p * spec.k);
    let mut per_subject: BTreeMap<&str, usize> = BTreeMap::new();
    for c in clips {
        *per_subject.entry(c.subject()).or_default() += 1;
        assert_eq!(c.frames.len(), spec.t);
        assert!(c.frames.iter().all(|&f| f < frames));
        for w in c.frames.windows(2) {
            assert_eq!(w[1], (w[0] + 1) % frames);
        }
    }
    assert_eq!(per_subject.len(), spec.p);
    assert!(per_subject.values().all(|&n| n == spec.k));
    // clips of one identity are contiguous
    for chunk in clips.chunks(spec.k) {
        assert!(chunk.iter().all(|c| c.subject() == chunk[0].subject()));
    }
}

#[test]
fn pk_batch_has_p_identities_of_k_clips() {
    let manifest = fake_manifest(10, 6, 30);
    let spec = BatchSpec::default();
    let clips = pk_sample(&manifest, &spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    check_batch(&clips, &spec, 30);
    assert_eq!(clips.len(), 32);
}

#[test]
fn single_recording_is_reused_with_distinct_windows() {
    let manifest = fake_manifest(3, 1, 30);
    let spec = BatchSpec { p: 2, k: 4, t: 16 };
    let clips = pk_sample(&manifest, &spec, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    check_batch(&clips, &spec, 30);
    for chunk in clips.chunks(4) {
        assert!(chunk.iter().all(|c| c.recording == chunk[0].recording));
        let starts: BTreeSet<usize> = chunk.iter().map(|c| c.frames[0]).collect();
        assert_eq!(starts.len(), 4);
    }
}

#[test]
fn short_sequences_loop() {
    assert_eq!(window(5, 8, 3), vec![3, 4, 0, 1, 2, 3, 4, 0]);
    assert_eq!(window(20, 4, 16), vec![16, 17, 18, 19]);
    let manifest = fake_manifest(2, 2, 5);
    let spec = BatchSpec { p: 2, k: 2, t: 16 };
    let clips = pk_sample(&manifest, &spec, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    check_batch(&clips, &spec, 5);
}

#[test]
fn sampling_is_seeded() {
    let manifest = fake_manifest(12, 5, 40);
    let spec = BatchSpec::default();
    let run = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..5).map(|_| pk_sample(&manifest, &spec, &mut rng).unwrap()).collect::<Vec<_>>()
    };
    assert_eq!(run(7), run(7));
    assert_ne!(run(7), run(8));
}

#[test]
fn too_few_identities() {
    let manifest = fake_manifest(3, 2, 30);
    let err = pk_sample(&manifest, &BatchSpec::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
    assert!(matches!(err, TrainError::TooFewIdentities { needed: 8, available: 3 }));
    let bad = BatchSpec { p: 2, k: 1, t: 16 };
    assert!(matches!(pk_sample(&manifest, &bad, &mut ChaCha8Rng::seed_from_u64(0)), Err(TrainError::InvalidConfig(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]
    #[test]
    fn pk_invariants(subjects in 2usize..8, recs in 1usize..5, frames in 1usize..24,
                     p in 2usize..8, k in 2usize..6, t in 1usize..20, seed in any::<u64>()) {
        let manifest = fake_manifest(subjects, recs, frames);
        let spec = BatchSpec { p, k, t };
        let out = pk_sample(&manifest, &spec, &mut ChaCha8Rng::seed_from_u64(seed));
        if p > subjects {
            let too_few = matches!(out, Err(TrainError::TooFewIdentities { .. }));
            prop_assert!(too_few);
        } else {
            let clips = out.unwrap();
            check_batch(&clips, &spec, frames);
            if recs >= k {
                for chunk in clips.chunks(k) {
                    let distinct: BTreeSet<_> = chunk.iter().map(|c| &c.recording).collect();
                    prop_assert_eq!(distinct.len(), k);
                }
            }
        }
    }
}

#[test]
fn omni_stream_layout() {
    let streams = omni_streams(&[SIL, DEPTH, EVENT], SIL);
    assert_eq!(
        streams,
        vec![
            Stream::Single(SIL),
            Stream::Single(DEPTH),
            Stream::Single(EVENT),
            Stream::Pair(SIL, DEPTH),
            Stream::Pair(SIL, EVENT)
        ]
    );
    assert_eq!(omni_streams(&[DEPTH], SIL), vec![Stream::Single(DEPTH)]);
}

#[test]
fn learning_rate_steps_down_at_milestones() {
    let cfg = TrainConfig {
        lr: 0.1,
        milestones: vec![10, 20],
        ..TrainConfig::default()
    };
    let lrs: Vec<f64> = [1, 10, 11, 20, 21, 1000].iter().map(|&s| lr_at(&cfg, s)).collect();
    let expected = [0.1, 0.1, 0.01, 0.01, 0.001, 0.001];
    for (a, b) in lrs.iter().zip(expected) {
        assert!((a - b).abs() < 1e-15, "{lrs:?}");
    }
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    train: Manifest,
}

/// Four training identities, two views, three image modalities.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            n_train_subjects: 4,
            n_test_subjects: 1,
            views: vec![0, 144],
            t_raw: 16,
            seed: 21,
            modalities: vec![SIL, DEPTH, EVENT],
            ..SynthConfig::default()
        };
        let manifest = generate_dataset(&cfg, dir.path()).unwrap();
        let train = manifest.with_subjects(&SplitTable::read(dir.path()).unwrap().subjects_in(Split::Train));
        Fixture {
            root: dir.path().to_path_buf(),
            _dir: dir,
            train,
        }
    })
}

fn tiny(modalities: Vec<Modality>) -> ModelConfig {
    ModelConfig {
        encoder_channels: 4,
        encoder_stride: 4,
        stage_channels: vec![4, 8],
        stage_strides: vec![1, 2],
        parts: 4,
        embed_dim: 8,
        gate_hidden: 4,
        ..ModelConfig::desk(modalities, 4)
    }
}

fn toy_config(total: u64) -> TrainConfig {
    TrainConfig {
        total_iterations: total,
        lr: 0.05,
        milestones: vec![1000],
        seed: 4,
        batch: BatchSpec { p: 4, k: 2, t: 4 },
        checkpoint_every: 3,
        ..TrainConfig::default()
    }
}

fn setup(modalities: Vec<Modality>, cfg: &TrainConfig) -> (TrainState, SequenceStore, ClassMap) {
    let f = fixture();
    let classes = ClassMap::from_manifest(&f.train);
    let model = OmniGait::new(tiny(modalities), 9).unwrap();
    (TrainState::new(model, cfg), SequenceStore::new(f.train.clone()), classes)
}

#[test]
fn composed_batches_align_labels_and_frames() {
    let f = fixture();
    let classes = ClassMap::from_manifest(&f.train);
    assert_eq!(classes.len(), 4);
    let mut store = SequenceStore::new(f.train.clone());
    let spec = BatchSpec { p: 3, k: 2, t: 5 };
    let clips = pk_sample(&f.train, &spec, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let (batch, labels) = compose_omni_batch(&mut store, &clips, &[SIL, DEPTH, EVENT], SIL, &classes).unwrap();
    assert_eq!(batch.streams.len(), 5);
    assert_eq!(labels.len(), 6);
    for (i, c) in clips.iter().enumerate() {
        assert_eq!(labels[i], classes.label(c.subject()).unwrap());
        for m in [SIL, DEPTH, EVENT] {
            let x = &batch.inputs[&m];
            assert_eq!(x.shape(), &[6, 5, m.channels().unwrap(), 64, 64]);
            let stored = store.frames(&c.recording.with_modality(m)).unwrap().clone();
            for (j, &fr) in c.frames.iter().enumerate() {
                let got = x.slice(s![i, j, .., .., ..]);
                let want = stored.slice(s![fr, .., .., ..]).mapv(|v| f32::from(v) / 255.0);
                assert_eq!(got, want);
            }
        }
    }
    assert!(matches!(
        compose_omni_batch(&mut store, &clips, &[DEPTH, EVENT], SIL, &classes),
        Err(TrainError::AnchorNotTrained(SIL))
    ));
}

#[test]
fn missing_modalities_are_listed() {
    let f = fixture();
    let victim = f.train.subjects().into_iter().next().unwrap();
    let partial = f.train.filter(|e| !(e.meta.subject_id == victim && e.meta.modality == EVENT));
    let classes = ClassMap::from_manifest(&partial);
    let mut store = SequenceStore::new(partial.clone());
    let spec = BatchSpec { p: 4, k: 2, t: 4 };
    let clips = pk_sample(&partial, &spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    match compose_omni_batch(&mut store, &clips, &[SIL, EVENT], SIL, &classes) {
        Err(TrainError::MissingModality(keys)) => {
            assert_eq!(keys.len(), 2);
            assert!(keys.iter().all(|k| k.contains(&victim) && k.contains(EVENT.tag())), "{keys:?}");
        }
        other => panic!("expected MissingModality, got {other:?}"),
    }
    assert!(compose_omni_batch(&mut store, &clips, &[SIL, DEPTH], SIL, &classes).is_ok());
}

#[test]
fn frozen_steps_repeat_and_use_one_backbone_pass() {
    let cfg = TrainConfig {
        lr: 0.0,
        momentum: 0.0,
        weight_decay: 0.0,
        ..toy_config(1)
    };
    let (mut state, mut store, classes) = setup(vec![SIL, DEPTH], &cfg);
    state.optimizer.lr = 0.0;
    let clips = pk_sample(store.manifest(), &cfg.batch, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let (batch, labels) = compose_batch(&mut store, &clips, omni_streams(&[SIL, DEPTH], SIL), &classes).unwrap();
    let weights = state.model.state_tensors();
    let mut reports = Vec::new();
    for _ in 0..2 {
        state.model.reset_counters();
        reports.push(train_step(&mut state, &batch, &labels, 0.2).unwrap());
        assert_eq!(state.model.backbone.calls(), 1);
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(state.step, 2);
    assert!(reports[0].grad_norm > 0.0);
    assert_eq!(reports[0].loss.streams.len(), 3);
    // only running statistics may move
    for ((n, a), (_, b)) in weights.iter().zip(state.model.state_tensors()) {
        if !n.contains("running") && !n.contains("batches") {
            assert_eq!(a, &b, "{n}");
        }
    }
}

fn tree_digest(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.clone(), Sha256::digest(std::fs::read(&p).unwrap()).to_vec()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn single_iteration_writes_one_row_and_one_checkpoint() {
    let before = tree_digest(&fixture().root);
    let cfg = toy_config(1);
    let (mut state, mut store, classes) = setup(vec![SIL, DEPTH], &cfg);
    let out = tempfile::tempdir().unwrap();
    let outcome = fit(&mut state, &mut store, &classes, &cfg, out.path()).unwrap();
    assert_eq!(outcome.steps, 1);
    assert_eq!(state.step, 1);
    assert_eq!(outcome.final_checkpoint, out.path().join(FINAL_CHECKPOINT));
    assert!(outcome.final_checkpoint.exists());
    assert_eq!(std::fs::read_dir(out.path().join("checkpoints")).unwrap().count(), 0);
    let text = std::fs::read_to_string(out.path().join(LOG_FILE)).unwrap();
    assert_eq!(text.lines().next().unwrap(), LOG_HEADER);
    let rows = read_log(&out.path().join(LOG_FILE)).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].step, 1);
    assert!(rows[0].grad_norm > 0.0 && rows[0].total.is_finite());
    assert_eq!(tree_digest(&fixture().root), before);
}

#[test]
fn resumed_run_matches_unbroken_run() {
    let cfg = toy_config(8);
    let unbroken = tempfile::tempdir().unwrap();
    let (mut state, mut store, classes) = setup(vec![SIL, DEPTH], &cfg);
    fit(&mut state, &mut store, &classes, &cfg, unbroken.path()).unwrap();
    let full = read_log(&unbroken.path().join(LOG_FILE)).unwrap();
    assert_eq!(full.len(), 8);
    assert!(full.iter().all(|r| r.grad_norm > 0.0));
    let ckpts: Vec<String> = {
        let mut v: Vec<String> = std::fs::read_dir(unbroken.path().join("checkpoints"))
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        v.sort();
        v
    };
    assert_eq!(ckpts, ["step-000003.ckpt", "step-000006.ckpt"]);

    // restart from step 3 in a fresh directory holding the partial log
    let resumed = tempfile::tempdir().unwrap();
    std::fs::copy(unbroken.path().join(LOG_FILE), resumed.path().join(LOG_FILE)).unwrap();
    let (mut state2, classes2) = load_checkpoint(&unbroken.path().join("checkpoints/step-000003.ckpt")).unwrap();
    assert_eq!(state2.step, 3);
    assert_eq!(classes2, classes);
    let mut store2 = SequenceStore::new(fixture().train.clone());
    let outcome = fit(&mut state2, &mut store2, &classes2, &cfg, resumed.path()).unwrap();
    assert_eq!(outcome.steps, 5);
    let again = read_log(&resumed.path().join(LOG_FILE)).unwrap();
    assert_eq!(again.iter().map(|r| r.step).collect::<Vec<_>>(), (1..=8).collect::<Vec<_>>());
    for (a, b) in full.iter().zip(&again).skip(3) {
        assert!((a.total - b.total).abs() <= 1e-5, "step {}: {} vs {}", a.step, a.total, b.total);
    }
}

#[test]
fn reruns_are_bit_identical_and_checkpoints_round_trip() {
    let cfg = toy_config(3);
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let (mut state, mut store, classes) = setup(vec![SIL, DEPTH], &cfg);
        fit(&mut state, &mut store, &classes, &cfg, dir.path()).unwrap();
        let bytes = std::fs::read(dir.path().join(FINAL_CHECKPOINT)).unwrap();
        (dir, bytes, classes)
    };
    let (dir, a, classes) = run();
    let (_, b, _) = run();
    assert!(a == b, "final checkpoints differ");

    let path = dir.path().join(FINAL_CHECKPOINT);
    let (state, loaded_classes) = load_checkpoint(&path).unwrap();
    assert_eq!(state.step, 3);
    let again = dir.path().join("again.ckpt");
    save_checkpoint(&state, &loaded_classes, &cfg, &again).unwrap();
    assert!(std::fs::read(&again).unwrap() == a, "save-load-save changed bytes");
    assert_eq!(loaded_classes, classes);
    assert!(!state.optimizer.state_tensors().is_empty());

    let mut other = OmniGait::<f32>::new(tiny(vec![SIL, EVENT]), 9).unwrap();
    let ckpt = Checkpoint::read(&path).unwrap();
    assert!(matches!(other.load_state(&ckpt), Err(CheckpointError::ConfigMismatch { .. })));

    let mut bytes = a.clone();
    let n = bytes.len();
    bytes.truncate(n - 7);
    std::fs::write(&again, &bytes).unwrap();
    assert!(matches!(load_checkpoint(&again), Err(TrainError::Checkpoint(CheckpointError::Corrupt(_)))));
}

#[test]
fn two_stream_variant_trains() {
    let cfg = toy_config(2);
    let f = fixture();
    let classes = ClassMap::from_manifest(&f.train);
    let model = OmniGait::new(tiny(vec![SIL, DEPTH]).two_stream(SIL, DEPTH), 9).unwrap();
    let mut state = TrainState::new(model, &cfg);
    let mut store = SequenceStore::new(f.train.clone());
    let out = tempfile::tempdir().unwrap();
    let outcome = fit(&mut state, &mut store, &classes, &cfg, out.path()).unwrap();
    let last = outcome.last.unwrap();
    assert_eq!(last.loss.streams.len(), 2);
    assert!(last.loss.component("cross_triplet") >= 0.0);
    assert_eq!(last.loss.component("triplet"), 0.0);
}

#[test]
fn fit_rejects_mismatched_setups() {
    let cfg = toy_config(1);
    let (mut state, mut store, _) = setup(vec![SIL, DEPTH], &cfg);
    let out = tempfile::tempdir().unwrap();
    let three = ClassMap::from_manifest(&fixture().train.with_subjects(
        &fixture().train.subjects().into_iter().take(3).collect(),
    ));
    assert!(matches!(fit(&mut state, &mut store, &three, &cfg, out.path()), Err(TrainError::InvalidConfig(_))));
    let classes = ClassMap::from_manifest(&fixture().train);
    let bad_anchor = TrainConfig { anchor: EVENT, ..cfg.clone() };
    assert!(matches!(
        fit(&mut state, &mut store, &classes, &bad_anchor, out.path()),
        Err(TrainError::AnchorNotTrained(EVENT))
    ));
    let zero = TrainConfig { total_iterations: 0, ..cfg };
    assert!(matches!(fit(&mut state, &mut store, &classes, &zero, out.path()), Err(TrainError::InvalidConfig(_))));
}

#[test]
fn toy_loss_trends_down() {
    let cfg = TrainConfig {
        checkpoint_every: 0,
        ..toy_config(200)
    };
    let (mut state, mut store, classes) = setup(vec![SIL, DEPTH], &cfg);
    let out = tempfile::tempdir().unwrap();
    fit(&mut state, &mut store, &classes, &cfg, out.path()).unwrap();
    let rows = read_log(&out.path().join(LOG_FILE)).unwrap();
    assert_eq!(rows.len(), 200);
    let avg: Vec<f64> = rows.chunks(50).map(|c| c.iter().map(|r| r.total).sum::<f64>() / 50.0).collect();
    for w in avg.windows(2) {
        assert!(w[1] < w[0], "50-step averages {avg:?}");
    }
}
