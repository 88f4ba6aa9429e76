//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Criteria 8 and 10 run the `omnigait` binary on the desk
//! recipe in `configs/desk.toml`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use ndarray::{concatenate, Array3, Array4, Array5, ArrayView3, Axis, Ix4};
use omnigait::dataset::{Condition, Modality};
use omnigait::evalproto::{cross_view_average, mean_ap, rank1, Metric, ModalityMatrix, ViewMatrix};
use omnigait::losses::{ce_loss, cross_modal_triplet, triplet_loss};
use omnigait::model::{hpp, temporal_pool, Fusion, ModelConfig, OmniGait, Stream, TrainBatch};
use omnigait::nn::init::normal;
use omnigait::trainer::{load_checkpoint, save_checkpoint, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err(format!($($arg)+));
        }
    };
}

const SIL: Modality = Modality::RgbSilhouette;
const DEPTH: Modality = Modality::Depth;
const EVENT: Modality = Modality::Event;

fn image_modalities() -> Vec<Modality> {
    Modality::ALL.iter().copied().filter(|m| m.is_image()).collect()
}

fn random5(rng: &mut ChaCha8Rng, dim: (usize, usize, usize, usize, usize)) -> Array5<f32> {
    Array5::from_shape_fn(dim, |_| rng.random_range(0.0..1.0))
}

fn random4<F: ndarray::NdFloat>(rng: &mut ChaCha8Rng, dim: [usize; 4], std: f64) -> Array4<F> {
    normal::<F, _>(rng, &dim, std).into_dimensionality::<Ix4>().unwrap()
}

fn shape_contract() -> Outcome {
    let start = Instant::now();
    let cpu = cpu_time::ProcessTime::now();
    let mods = image_modalities();
    ensure!(mods.len() == 9, "{} image modalities", mods.len());
    let model = OmniGait::<f32>::new(ModelConfig::full(mods.clone(), 10), 0).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    let chain = |name: String, encoded: Array5<f32>| -> Result<(), String> {
        ensure!(encoded.shape() == [1, 16, 128, 64, 64], "{name}: encoder {:?}", encoded.shape());
        let y = model.shared_forward(&[encoded.view()]).map_err(|e| e.to_string())?.remove(0);
        ensure!(y.shape() == [1, 16, 512, 16, 16], "{name}: backbone {:?}", y.shape());
        let flat = y.into_shape_with_order((16, 512, 16, 16)).unwrap();
        let (tp, _) = temporal_pool(flat.view(), &[16]);
        let (parts, _) = hpp(tp.view(), 16).map_err(|e| e.to_string())?;
        ensure!(parts.shape() == [1, 512, 16], "{name}: pooled {:?}", parts.shape());
        let head = model.head.forward(parts.view());
        ensure!(head.pre.shape() == [1, 256, 16], "{name}: embedding {:?}", head.pre.shape());
        ensure!(head.post.shape() == [1, 256, 16], "{name}: bnneck {:?}", head.post.shape());
        Ok(())
    };

    let mut inputs = BTreeMap::new();
    for &m in &mods {
        let c = m.channels().unwrap();
        let x = random5(&mut rng, (1, 16, c, 64, 64));
        chain(m.to_string(), model.encode(m, x.view()).map_err(|e| e.to_string())?)?;
        inputs.insert(m, x);
    }
    let pairs = [(SIL, DEPTH), (SIL, EVENT), (SIL, Modality::Rgb)];
    for (a, b) in pairs {
        let fa = model.encode(a, inputs[&a].view()).map_err(|e| e.to_string())?;
        let fb = model.encode(b, inputs[&b].view()).map_err(|e| e.to_string())?;
        chain(format!("{a}+{b}"), model.fuse(fa.view(), fb.view()).map_err(|e| e.to_string())?)?;
    }
    let (used, wall) = (cpu.elapsed(), start.elapsed());
    ensure!(used < Duration::from_secs(30), "took {used:.1?} CPU ({wall:.1?} wall)");
    Ok(format!("9 modalities and 3 pairs in {used:.1?} CPU ({wall:.1?} wall)"))
}

fn gate_normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let fusion = Fusion::<f32>::new(&mut rng, 16, 8);
    let mut worst = 0.0f64;
    for trial in 0..1000 {
        let scale = rng.random_range(0.05..4.0);
        let frames = rng.random_range(1..=4);
        let fi = random4::<f32>(&mut rng, [2 * frames, 16, 4, 4], scale);
        let fj = random4::<f32>(&mut rng, [2 * frames, 16, 4, 4], scale);
        let w = fusion.gate_weights(fusion.mixed(fi.view(), fj.view()).view(), frames);
        ensure!(w.dim() == (2, 2), "trial {trial}: weights {:?}", w.dim());
        for row in w.rows() {
            ensure!(row.iter().all(|&v| v > 0.0 && v < 1.0), "trial {trial}: {row}");
            let dev = (f64::from(row[0]) + f64::from(row[1]) - 1.0).abs();
            worst = worst.max(dev);
            ensure!(dev <= 1e-6, "trial {trial}: sum off by {dev:e}");
        }
    }
    Ok(format!("1000 inputs, max |sum - 1| = {worst:.1e}"))
}

fn forced_gate_linearity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut fusion = Fusion::<f32>::new(&mut rng, 8, 4);
    fusion.mix.weight.value.fill(0.0);
    if let Some(b) = fusion.mix.bias.as_mut() {
        b.value.fill(0.0);
    }
    let fi = random4::<f32>(&mut rng, [6, 8, 5, 5], 1.0);
    let fj = random4::<f32>(&mut rng, [6, 8, 5, 5], 1.0);
    for alpha in [0.0f32, 0.5, 1.0] {
        fusion.frozen_gate = Some([alpha, 1.0 - alpha]);
        let y = fusion.forward(fi.view(), fj.view(), 3);
        let want = &fi * alpha + &fj * (1.0 - alpha);
        let diff = y.iter().zip(&want).filter(|(a, b)| a.to_bits() != b.to_bits()).count();
        ensure!(diff == 0, "alpha {alpha}: {diff} elements differ");
    }
    Ok("bitwise equal for alpha 0, 0.5, 1".into())
}

fn fusion_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut fusion = Fusion::<f64>::new(&mut rng, 3, 4);
    let fi = random4::<f64>(&mut rng, [4, 3, 3, 3], 1.0);
    let fj = random4::<f64>(&mut rng, [4, 3, 3, 3], 1.0);
    let r = random4::<f64>(&mut rng, [4, 3, 3, 3], 1.0);
    let frames = 2;
    let loss = |f: &Fusion<f64>, a: &Array4<f64>, b: &Array4<f64>| (f.forward(a.view(), b.view(), frames) * &r).sum();

    let (_, cache) = fusion.forward_cached(fi.clone(), fj.clone(), frames);
    let (dfi, dfj) = fusion.backward(cache, &r);
    ensure!(dfi.iter().any(|&v| v != 0.0), "first input has zero gradient");
    ensure!(dfj.iter().any(|&v| v != 0.0), "second input has zero gradient");

    let h = 1e-5;
    let numeric = |x: &Array4<f64>, first: bool| {
        let mut g = Array4::zeros(x.dim());
        for idx in 0..x.len() {
            let mut p = x.clone();
            let mut m = x.clone();
            p.as_slice_mut().unwrap()[idx] += h;
            m.as_slice_mut().unwrap()[idx] -= h;
            let (lp, lm) = if first {
                (loss(&fusion, &p, &fj), loss(&fusion, &m, &fj))
            } else {
                (loss(&fusion, &fi, &p), loss(&fusion, &fi, &m))
            };
            g.as_slice_mut().unwrap()[idx] = (lp - lm) / (2.0 * h);
        }
        g
    };
    let rel = |a: &Array4<f64>, n: &Array4<f64>| {
        let diff = (a - n).mapv(|v| v * v).sum().sqrt();
        diff / (a.mapv(|v| v * v).sum().sqrt() + n.mapv(|v| v * v).sum().sqrt()).max(1e-12)
    };
    let ei = rel(&dfi, &numeric(&fi, true));
    let ej = rel(&dfj, &numeric(&fj, false));

    // gate parameters go through the softmax path
    let analytic = fusion.gate_fc1.weight.grad.clone();
    let mut numeric_w = analytic.clone();
    for idx in 0..analytic.len() {
        let mut f = fusion.clone();
        f.gate_fc1.weight.value.as_slice_mut().unwrap()[idx] += h;
        let lp = loss(&f, &fi, &fj);
        f.gate_fc1.weight.value.as_slice_mut().unwrap()[idx] -= 2.0 * h;
        let lm = loss(&f, &fi, &fj);
        numeric_w.as_slice_mut().unwrap()[idx] = (lp - lm) / (2.0 * h);
    }
    let diff = (&analytic - &numeric_w).mapv(|v| v * v).sum().sqrt();
    let ew = diff / (analytic.mapv(|v| v * v).sum().sqrt() + numeric_w.mapv(|v| v * v).sum().sqrt()).max(1e-12);

    let worst = ei.max(ej).max(ew);
    ensure!(worst < 1e-4, "relative errors inputs {ei:.2e}/{ej:.2e}, gate {ew:.2e}");
    Ok(format!("max relative error {worst:.2e}"))
}

fn channel_stats(x: &Array4<f64>) -> (Vec<f64>, Vec<f64>) {
    let per_channel = x.view().permuted_axes([1, 0, 2, 3]);
    per_channel
        .outer_iter()
        .map(|c| (c.mean().unwrap(), c.var(0.0)))
        .unzip()
}

fn mixed_batch_statistics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = ModelConfig::desk(vec![SIL, DEPTH], 4);
    let mut model = OmniGait::<f64>::new(cfg, 5).map_err(|e| e.to_string())?;
    let (b, t) = (2, 3);
    let xs = Array5::from_shape_fn((b, t, 1, 64, 64), |_| rng.random_range(0.0..1.0));
    // depth shifted and stretched
    let xd = Array5::from_shape_fn((b, t, 3, 64, 64), |_| 2.0 + rng.random_range(0.0..3.0));

    let mut enc_s = model.encoders[&SIL].clone();
    let mut enc_d = model.encoders[&DEPTH].clone();
    let conv = model.backbone.blocks[0].conv1.conv.clone();
    let flat = |x: &Array5<f64>| {
        let (b, t, c, h, w) = x.dim();
        x.clone().into_shape_with_order((b * t, c, h, w)).unwrap()
    };
    let (es, _) = enc_s.forward_train(flat(&xs));
    let (ed, _) = enc_d.forward_train(flat(&xd));
    let joint = concatenate(Axis(0), &[es.view(), ed.view()]).unwrap();
    let (mean, var) = channel_stats(&conv.forward(joint.view()));
    let (mean_s, var_s) = channel_stats(&conv.forward(es.view()));

    let batch = TrainBatch {
        inputs: [(SIL, xs), (DEPTH, xd)].into_iter().collect(),
        streams: vec![Stream::Single(SIL), Stream::Single(DEPTH)],
    };
    model.reset_counters();
    let (_, cache) = model.forward_train(&batch).map_err(|e| e.to_string())?;
    ensure!(model.backbone.calls() == 1, "backbone ran {} times", model.backbone.calls());
    let stats = cache.backbone().first_stats();
    let err = stats
        .mean
        .iter()
        .zip(&mean)
        .chain(stats.var.iter().zip(&var))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    ensure!(err <= 1e-6, "joint statistics off by {err:e}");
    let gap = stats
        .mean
        .iter()
        .zip(&mean_s)
        .chain(stats.var.iter().zip(&var_s))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    ensure!(gap > 1e-3, "joint and single-modality statistics agree ({gap:e})");
    Ok(format!("joint error {err:.1e}, single-modality gap {gap:.3}"))
}

fn oracle_rank1(dist: &ndarray::Array2<f64>, pl: &[usize], gl: &[usize]) -> f64 {
    let hits = pl
        .iter()
        .enumerate()
        .filter(|&(i, &label)| {
            let nearest = (0..gl.len()).map(|j| dist[(i, j)]).fold(f64::INFINITY, f64::min);
            let first = (0..gl.len()).find(|&j| dist[(i, j)] == nearest).unwrap();
            gl[first] == label
        })
        .count();
    100.0 * hits as f64 / pl.len() as f64
}

/// AP as the area under the stepwise precision/recall curve.
fn oracle_ap(row: &[f64], label: usize, gl: &[usize]) -> Option<f64> {
    let mut order: Vec<usize> = (0..gl.len()).collect();
    order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
    let relevant = gl.iter().filter(|&&g| g == label).count();
    if relevant == 0 {
        return None;
    }
    let mut area = 0.0;
    let mut found = 0;
    let mut last_recall = 0.0;
    for (k, &j) in order.iter().enumerate() {
        if gl[j] == label {
            found += 1;
            let recall = found as f64 / relevant as f64;
            area += (recall - last_recall) * found as f64 / (k + 1) as f64;
            last_recall = recall;
        }
    }
    Some(area)
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for case in 0..200 {
        let np = rng.random_range(1..=40);
        let ng = rng.random_range(1..=40);
        let ids = rng.random_range(1..=8);
        let pl: Vec<usize> = (0..np).map(|_| rng.random_range(0..ids)).collect();
        let gl: Vec<usize> = (0..ng).map(|_| rng.random_range(0..ids)).collect();
        let dist = ndarray::Array2::from_shape_fn((np, ng), |_| rng.random_range(0.0..10.0));
        let got = rank1(dist.view(), &pl, &gl).map_err(|e| e.to_string())?;
        ensure!(got == oracle_rank1(&dist, &pl, &gl), "case {case}: rank-1 {got}");
        let m = mean_ap(dist.view(), &pl, &gl).map_err(|e| e.to_string())?;
        let aps: Vec<f64> = pl
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| oracle_ap(dist.row(i).as_slice().unwrap(), l, &gl))
            .collect();
        let want = (!aps.is_empty()).then(|| 100.0 * aps.iter().sum::<f64>() / aps.len() as f64);
        match (m.value, want) {
            (Some(a), Some(b)) => ensure!((a - b).abs() <= 1e-9, "case {case}: mAP {a} vs {b}"),
            (a, b) => ensure!(a == b, "case {case}: mAP {a:?} vs {b:?}"),
        }
    }
    let views: Vec<u16> = (0..10).map(|v| v * 36).collect();
    let mut vm = ViewMatrix::empty(views);
    for i in 0..10 {
        for j in 0..10 {
            vm.cells[i][j] = Some(if i == j { 1000.0 } else { (i * 10 + j) as f64 });
        }
    }
    let avg = cross_view_average(&vm).map_err(|e| e.to_string())?;
    let used = vm.evaluated();
    let want = (0..10).flat_map(|i| (0..10).filter(move |&j| j != i).map(move |j| (i * 10 + j) as f64)).sum::<f64>() / 90.0;
    ensure!(used == 90, "averaged {used} cells");
    ensure!((avg - want).abs() < 1e-12, "average {avg} vs {want}");
    Ok("200 random instances, 90 cross-view cells".into())
}

fn pair_dist(a: ArrayView3<f64>, i: usize, b: ArrayView3<f64>, j: usize) -> f64 {
    let (_, c, p) = a.dim();
    (0..p)
        .map(|q| (0..c).map(|k| (a[(i, k, q)] - b[(j, k, q)]).powi(2)).sum::<f64>().sqrt())
        .sum::<f64>()
        / p as f64
}

fn enumerate_triplets(a: ArrayView3<f64>, b: ArrayView3<f64>, labels: &[usize], margin: f64) -> f64 {
    let n = labels.len();
    let mut active = Vec::new();
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                if i != j && labels[j] == labels[i] && labels[k] != labels[i] {
                    let h = margin + pair_dist(a, i, b, j) - pair_dist(a, i, b, k);
                    if h > 0.0 {
                        active.push(h);
                    }
                }
            }
        }
    }
    if active.is_empty() {
        0.0
    } else {
        active.iter().sum::<f64>() / active.len() as f64
    }
}

fn loss_identities() -> Outcome {
    let margin = 0.2;
    let labels = [0, 0, 1, 1, 2];
    let same = Array3::from_elem((5, 6, 3), 0.7);
    let t = triplet_loss(same.view(), &labels, margin).map_err(|e| e.to_string())?.loss;
    ensure!(t == margin, "triplet of identical features {t}");
    let c = 7;
    let uniform = Array3::from_elem((5, c, 3), 1.3);
    let ce = ce_loss(uniform.view(), &labels).map_err(|e| e.to_string())?;
    ensure!((ce - (c as f64).ln()).abs() <= 1e-6, "CE of uniform logits {ce}");

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let n = rng.random_range(2..=8);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let a = Array3::from_shape_fn((n, 4, 2), |_| rng.random_range(-1.0..1.0));
        let b = Array3::from_shape_fn((n, 4, 2), |_| rng.random_range(-1.0..1.0));
        let ab = cross_modal_triplet(a.view(), b.view(), &labels, margin).map_err(|e| e.to_string())?.loss;
        let ba = cross_modal_triplet(b.view(), a.view(), &labels, margin).map_err(|e| e.to_string())?.loss;
        ensure!(ab == ba, "case {case}: cross-modal triplet not symmetric ({ab} vs {ba})");
        let single = triplet_loss(a.view(), &labels, margin).map_err(|e| e.to_string())?.loss;
        let e1 = (single - enumerate_triplets(a.view(), a.view(), &labels, margin)).abs();
        let fwd = enumerate_triplets(a.view(), b.view(), &labels, margin);
        let bwd = enumerate_triplets(b.view(), a.view(), &labels, margin);
        let e2 = (ab - 0.5 * (fwd + bwd)).abs();
        worst = worst.max(e1).max(e2);
        ensure!(e1 <= 1e-9 && e2 <= 1e-9, "case {case}: enumeration error {e1:e}/{e2:e}");
    }
    Ok(format!("identities hold, enumeration error {worst:.1e}"))
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_omnigait")
}

fn desk_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml")
}

fn run(args: &[&str]) -> Result<Duration, String> {
    let start = Instant::now();
    let out = Command::new(bin())
        .args(args)
        .env("RUST_LOG", "info")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        let err = String::from_utf8_lossy(&out.stderr);
        let tail: Vec<&str> = err.lines().rev().take(5).collect();
        return Err(format!("`omnigait {}` failed: {}", args.join(" "), tail.join(" | ")));
    }
    Ok(start.elapsed())
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

fn tree(root: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).map_err(|e| e.to_string())? {
            let path = e.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&path).map_err(|e| e.to_string())?));
            }
        }
    }
    out.sort();
    Ok(out)
}

fn reproducibility(dir: &Path) -> Outcome {
    let small = [
        "--set",
        "synth.n_train_subjects=3",
        "--set",
        "synth.n_test_subjects=1",
        "--set",
        "synth.views=[0, 144]",
        "--set",
        "train.total_iterations=3",
        "--set",
        "train.checkpoint_every=2",
        "--set",
        "train.batch={p = 2, k = 2, t = 4}",
        "--seed",
        "11",
    ];
    let config = desk_config();
    let mut outs = Vec::new();
    for name in ["a", "b"] {
        let data = dir.join(format!("data-{name}"));
        let train = dir.join(format!("train-{name}"));
        let mut args = vec!["synth-gen", "--config", p(&config), "--out", p(&data)];
        args.extend_from_slice(&small);
        run(&args)?;
        let mut args = vec!["train", "--config", p(&config), "--data", p(&data), "--out", p(&train)];
        args.extend_from_slice(&small);
        run(&args)?;
        outs.push((data, train));
    }
    let (da, ta) = &outs[0];
    let (db, tb) = &outs[1];
    let files = tree(da)?;
    ensure!(files == tree(db)?, "datasets differ");
    let ca = fs::read(ta.join("final.ckpt")).map_err(|e| e.to_string())?;
    ensure!(ca == fs::read(tb.join("final.ckpt")).map_err(|e| e.to_string())?, "final checkpoints differ");

    let (state, classes) = load_checkpoint(&ta.join("final.ckpt")).map_err(|e| e.to_string())?;
    let ckpt = omnigait::model::Checkpoint::from_bytes(&ca).map_err(|e| e.to_string())?;
    let cfg: TrainConfig = serde_json::from_value(ckpt.meta["train"].clone()).map_err(|e| e.to_string())?;
    let again = dir.join("resaved.ckpt");
    save_checkpoint(&state, &classes, &cfg, &again).map_err(|e| e.to_string())?;
    ensure!(fs::read(&again).map_err(|e| e.to_string())? == ca, "save after load changed the checkpoint");
    Ok(format!("{} dataset files and {} checkpoint bytes identical", files.len(), ca.len()))
}

/// `protocol -> condition -> (rank1, map)` from an eval `report.csv`.
type Summary = BTreeMap<String, BTreeMap<String, f64>>;

fn read_summary(path: &Path) -> Result<Summary, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut out = Summary::new();
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() >= 5 && f[2] == "all" && !f[4].is_empty() {
            let r1 = f[4].parse::<f64>().map_err(|e| e.to_string())?;
            out.entry(f[0].to_string()).or_default().insert(f[1].to_string(), r1);
        }
    }
    Ok(out)
}

struct DeskRun {
    data: PathBuf,
    checkpoint: PathBuf,
    summary: Summary,
    generate: Duration,
    train: Duration,
}

const DESK_PROTOCOLS: [&str; 4] = [
    "single:rgb_silhouette",
    "cross:depth->rgb_silhouette",
    "cross:rgb_silhouette->depth",
    "multi:rgb_silhouette+depth",
];

fn desk_run(dir: &Path) -> Result<DeskRun, String> {
    let config = desk_config();
    let data = dir.join("desk-data");
    let out = dir.join("desk-train");
    let eval = dir.join("desk-eval");
    let generate = run(&["synth-gen", "--config", p(&config), "--out", p(&data)])?;
    let train = run(&["train", "--config", p(&config), "--data", p(&data), "--out", p(&out)])?;
    let checkpoint = out.join("final.ckpt");
    let mut args = vec!["eval", "--config", p(&config), "--data", p(&data), "--checkpoint", p(&checkpoint), "--out", p(&eval)];
    for proto in DESK_PROTOCOLS {
        args.extend_from_slice(&["--protocol", proto]);
    }
    run(&args)?;
    let summary = read_summary(&eval.join("report.csv"))?;
    Ok(DeskRun {
        data,
        checkpoint,
        summary,
        generate,
        train,
    })
}

fn desk_criteria(desk: &DeskRun) -> Outcome {
    let r1 = |proto: &str, c: &str| desk.summary.get(proto).and_then(|m| m.get(c)).copied().unwrap_or(f64::NAN);
    let [single, d2s, s2d, multi] = DESK_PROTOCOLS;
    let (nm, bg, cl) = (r1(single, "NM"), r1(single, "BG"), r1(single, "CL"));
    let cross = r1(d2s, "NM").min(r1(s2d, "NM"));
    let fused_cl = r1(multi, "CL");
    let detail = format!(
        "generate {:.0}s, train {:.0}s; silhouette NM/BG/CL {nm:.1}/{bg:.1}/{cl:.1}, cross NM {:.1}/{:.1}, fused CL {fused_cl:.1}",
        desk.generate.as_secs_f64(),
        desk.train.as_secs_f64(),
        r1(d2s, "NM"),
        r1(s2d, "NM"),
    );
    let steps = toml_steps(&desk_config())?;
    ensure!(steps <= 3000, "{detail}; recipe runs {steps} steps");
    ensure!(desk.train <= Duration::from_secs(20 * 60), "{detail}; training over 20 min");
    ensure!(nm >= 60.0, "{detail}; silhouette NM rank-1 below 60");
    ensure!(cross >= 30.0, "{detail}; cross-modal NM rank-1 below 30");
    ensure!(fused_cl > cl, "{detail}; fusion does not beat silhouette on CL");
    ensure!(nm >= bg && bg >= cl, "{detail}; NM >= BG >= CL violated");
    Ok(detail)
}

fn toml_steps(config: &Path) -> Result<u64, String> {
    let text = fs::read_to_string(config).map_err(|e| e.to_string())?;
    let cfg: toml::Table = text.parse().map_err(|e: toml::de::Error| e.to_string())?;
    Ok(cfg
        .get("train")
        .and_then(|t| t.get("total_iterations"))
        .and_then(|v| v.as_integer())
        .map_or(TrainConfig::default().total_iterations, |v| v as u64))
}

fn report_matrix(dir: &Path, desk: Result<&DeskRun, &String>) -> Outcome {
    let desk = desk.map_err(|e| format!("no desk checkpoint: {e}"))?;
    let out = dir.join("desk-matrix");
    run(&[
        "report-matrix",
        "--data",
        p(&desk.data),
        "--checkpoint",
        p(&desk.checkpoint),
        "--out",
        p(&out),
        "--modalities",
        "rgb_silhouette,depth,event",
    ])?;
    let text = fs::read_to_string(out.join("matrix.csv")).map_err(|e| e.to_string())?;
    let m = ModalityMatrix::from_csv(&text).map_err(|e| e.to_string())?;
    ensure!(m.modalities == [SIL, DEPTH, EVENT], "modalities {:?}", m.modalities);
    for metric in [Metric::Rank1, Metric::Map] {
        for c in Condition::ALL {
            let t = m.tables.get(&(metric, c)).ok_or(format!("missing {} {c}", metric.name()))?;
            ensure!(t.len() == 3 && t.iter().all(|r| r.len() == 3), "{} {c} is not 3x3", metric.name());
            ensure!(t.iter().flatten().all(Option::is_some), "{} {c} has empty cells", metric.name());
        }
    }
    // diagonal is single-modal, off-diagonal is probe -> gallery cross-modal
    let close = |a: Option<f64>, b: Option<&f64>| matches!((a, b), (Some(a), Some(b)) if (a - b).abs() < 1e-6);
    for c in Condition::ALL {
        let code = c.code();
        let single = desk.summary.get("single:rgb_silhouette").and_then(|r| r.get(code));
        ensure!(close(m.get(Metric::Rank1, c, SIL, SIL), single), "{code}: diagonal is not the single-modal result");
        let cross = desk.summary.get("cross:depth->rgb_silhouette").and_then(|r| r.get(code));
        ensure!(close(m.get(Metric::Rank1, c, DEPTH, SIL), cross), "{code}: depth->silhouette cell mismatch");
    }
    let lines = text.lines().count();
    Ok(format!("3x3 tables for 2 metrics x 3 conditions ({lines} lines)"))
}

/// Criterion numbers given on the command line, or all of them.
fn selected() -> Vec<usize> {
    let picked: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    if picked.is_empty() {
        (1..=10).collect()
    } else {
        picked
    }
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("temporary directory");
    let want = selected();
    let on = |n: usize| want.contains(&n);
    let mut failed = 0;
    let mut report = |n: usize, name: &str, outcome: Outcome| match outcome {
        Ok(detail) => println!("PASS criterion {n:>2} {name}: {detail}"),
        Err(why) => {
            failed += 1;
            println!("FAIL criterion {n:>2} {name}: {why}");
        }
    };
    let fast: [(&str, fn() -> Outcome); 7] = [
        ("shape contract", shape_contract),
        ("gate normalization", gate_normalization),
        ("forced-gate linearity", forced_gate_linearity),
        ("fusion gradient check", fusion_gradients),
        ("mixed-batch statistics", mixed_batch_statistics),
        ("metric oracle equivalence", metric_oracles),
        ("loss identities", loss_identities),
    ];
    for (i, (name, check)) in fast.into_iter().enumerate() {
        if on(i + 1) {
            report(i + 1, name, check());
        }
    }
    let desk = (on(8) || on(10)).then(|| desk_run(dir.path()));
    if let Some(desk) = desk.as_ref().filter(|_| on(8)) {
        report(8, "desk-scale run", desk.as_ref().map_err(Clone::clone).and_then(desk_criteria));
    }
    if on(9) {
        report(9, "reproducibility", reproducibility(dir.path()));
    }
    if let Some(desk) = desk.as_ref().filter(|_| on(10)) {
        report(10, "report matrix", report_matrix(dir.path(), desk.as_ref()));
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
