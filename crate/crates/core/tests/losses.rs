use ndarray::{concatenate, Array3, ArrayView3, Axis};
use omnigait::losses::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dist(a: ArrayView3<f64>, i: usize, b: ArrayView3<f64>, j: usize) -> f64 {
    let (_, c, p) = a.dim();
    let mut total = 0.0;
    for q in 0..p {
        total += (0..c).map(|k| (a[(i, k, q)] - b[(j, k, q)]).powi(2)).sum::<f64>().sqrt();
    }
    total / p as f64
}

/// Every hinge value of every valid triplet, anchors from `a`.
fn hinges(a: ArrayView3<f64>, b: ArrayView3<f64>, labels: &[usize], margin: f64) -> Vec<f64> {
    let n = labels.len();
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                if i != j && labels[i] == labels[j] && labels[k] != labels[i] {
                    out.push(margin + dist(a, i, b, j) - dist(a, i, b, k));
                }
            }
        }
    }
    out
}

fn oracle_triplet(a: ArrayView3<f64>, b: ArrayView3<f64>, labels: &[usize], margin: f64) -> f64 {
    let pos: Vec<f64> = hinges(a, b, labels, margin).into_iter().filter(|&h| h > 0.0).collect();
    if pos.is_empty() { 0.0 } else { pos.iter().sum::<f64>() / pos.len() as f64 }
}

fn oracle_ce(logits: ArrayView3<f64>, labels: &[usize]) -> f64 {
    let (b, k, p) = logits.dim();
    let mut total = 0.0;
    for i in 0..b {
        for q in 0..p {
            let z: f64 = (0..k).map(|c| logits[(i, c, q)].exp()).sum();
            for c in 0..k {
                let y = if c == labels[i] { 1.0 } else { 0.0 };
                total -= y * (logits[(i, c, q)].exp() / z).ln();
            }
        }
    }
    total / (b * p) as f64
}

fn random3(rng: &mut ChaCha8Rng, dim: (usize, usize, usize)) -> Array3<f64> {
    Array3::from_shape_fn(dim, |_| rng.random_range(-1.0..1.0))
}

/// Labels with at least two identities.
fn labels_strategy(max_b: usize) -> impl Strategy<Value = Vec<usize>> {
    (2..=max_b).prop_flat_map(|b| proptest::collection::vec(0usize..4, b)).prop_filter("two ids", |l| l.iter().any(|&x| x != l[0]))
}

fn batch(labels: &[usize], c: usize, p: usize, seed: u64) -> Array3<f64> {
    random3(&mut ChaCha8Rng::seed_from_u64(seed), (labels.len(), c, p))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn triplet_matches_exhaustive_enumeration(labels in labels_strategy(8), c in 1usize..5, p in 1usize..4, seed: u64, margin in 0.0f64..1.5) {
        let f = batch(&labels, c, p, seed);
        let got = triplet_loss(f.view(), &labels, margin).unwrap();
        let want = oracle_triplet(f.view(), f.view(), &labels, margin);
        prop_assert!((got.loss - want).abs() < 1e-9, "{} vs {}", got.loss, want);
        let all = hinges(f.view(), f.view(), &labels, margin);
        prop_assert_eq!(got.valid, all.len());
        prop_assert_eq!(got.active, all.iter().filter(|&&h| h > 0.0).count());
        prop_assert!(got.loss >= 0.0);
    }

    #[test]
    fn cross_triplet_matches_exhaustive_enumeration(labels in labels_strategy(8), c in 1usize..5, p in 1usize..4, seed: u64) {
        let f1 = batch(&labels, c, p, seed);
        let f2 = batch(&labels, c, p, seed ^ 0x9e37);
        let got = cross_modal_triplet(f1.view(), f2.view(), &labels, 0.2).unwrap();
        let want = 0.5 * (oracle_triplet(f1.view(), f2.view(), &labels, 0.2) + oracle_triplet(f2.view(), f1.view(), &labels, 0.2));
        prop_assert!((got.loss - want).abs() < 1e-9, "{} vs {}", got.loss, want);
        prop_assert!(got.loss >= 0.0);
        let swapped = cross_modal_triplet(f2.view(), f1.view(), &labels, 0.2).unwrap();
        prop_assert_eq!(got.loss.to_bits(), swapped.loss.to_bits());
    }

    #[test]
    fn cross_triplet_of_one_modality_is_plain_triplet(labels in labels_strategy(8), seed: u64) {
        let f = batch(&labels, 3, 2, seed);
        let cross = cross_modal_triplet(f.view(), f.view(), &labels, 0.2).unwrap();
        let plain = triplet_loss(f.view(), &labels, 0.2).unwrap();
        prop_assert_eq!(cross.loss, plain.loss);
    }

    #[test]
    fn ce_matches_direct_formula(b in 1usize..8, k in 2usize..7, p in 1usize..4, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = random3(&mut rng, (b, k, p)) * 3.0;
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
        let got = ce_loss(logits.view(), &labels).unwrap();
        prop_assert!((got - oracle_ce(logits.view(), &labels)).abs() < 1e-9);
        prop_assert!(got >= 0.0);
    }

    #[test]
    fn active_set_is_scale_invariant_at_zero_margin(labels in labels_strategy(8), seed: u64, e in -6i32..6) {
        let f = batch(&labels, 3, 2, seed);
        let base = active_triplets(f.view(), &labels, 0.0).unwrap();
        let scaled = f.mapv(|v| v * 2f64.powi(e));
        prop_assert_eq!(&base, &active_triplets(scaled.view(), &labels, 0.0).unwrap());
        let odd = f.mapv(|v| v * 3.7);
        // away from exact ties a generic positive scale keeps the pattern
        let ties = hinges(f.view(), f.view(), &labels, 0.0).iter().any(|h| h.abs() < 1e-9);
        if !ties {
            prop_assert_eq!(&base, &active_triplets(odd.view(), &labels, 0.0).unwrap());
        }
    }

    #[test]
    fn two_stream_total_recombines(labels in labels_strategy(8), k in 4usize..9, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = labels.len();
        let (f1, f2) = (random3(&mut rng, (n, 3, 2)), random3(&mut rng, (n, 3, 2)));
        let (l1, l2) = (random3(&mut rng, (n, k, 2)), random3(&mut rng, (n, k, 2)));
        let obj = two_stream_objective(&view("a", &f1, &l1), &view("b", &f2, &l2), &labels, 0.2).unwrap();
        let r = &obj.report;
        prop_assert_eq!(r.total, 0.5 * (r.component(CROSS_TRIPLET) + r.component(CE)));
        prop_assert_eq!(r.component(CE), 0.5 * (r.streams[0].ce + r.streams[1].ce));
        prop_assert!(r.components.values().all(|&v| v >= 0.0));
        prop_assert!((0.0..=1.0).contains(&r.nonzero_triplet_fraction));
    }
}

fn view<'a>(name: &str, f: &'a Array3<f64>, l: &'a Array3<f64>) -> StreamView<'a, f64> {
    StreamView {
        name: name.into(),
        features: f.view(),
        logits: l.view(),
    }
}

#[test]
fn identities_on_constant_inputs() {
    let labels = [0, 0, 1, 1, 2, 3];
    let f = Array3::from_elem((6, 8, 4), 1.25);
    let l = Array3::from_elem((6, 10, 4), -0.5);
    assert_eq!(triplet_loss(f.view(), &labels, 0.2).unwrap().loss, 0.2);
    assert!((ce_loss(l.view(), &labels).unwrap() - 10f64.ln()).abs() < 1e-6);
    assert_eq!(cross_modal_triplet(f.view(), f.view(), &labels, 0.2).unwrap().loss, 0.2);

    let two = two_stream_objective(&view("a", &f, &l), &view("b", &f, &l), &labels, 0.2).unwrap();
    assert!((two.report.total - 0.5 * (0.2 + 10f64.ln())).abs() < 1e-6);

    let streams = [view("a", &f, &l), view("b", &f, &l), view("c", &f, &l)];
    let omni = omni_objective(&streams, &labels, 0.2).unwrap();
    assert!((omni.report.total - (0.2 + 10f64.ln())).abs() < 1e-6);
    assert_eq!(omni.report.streams.len(), 3);
}

#[test]
fn zero_terms_give_zero_total() {
    let labels = [0, 0, 1, 1];
    // far-apart clusters and saturated correct logits
    let f = Array3::from_shape_fn((4, 2, 1), |(b, c, _)| if c == 0 { 100.0 * labels[b] as f64 } else { 0.0 });
    let l = Array3::from_shape_fn((4, 2, 1), |(b, k, _)| if k == labels[b] { 1e4 } else { -1e4 });
    let two = two_stream_objective(&view("a", &f, &l), &view("b", &f, &l), &labels, 0.2).unwrap();
    assert_eq!(two.report.total, 0.0);
    assert_eq!(two.report.nonzero_triplet_fraction, 0.0);
}

#[test]
fn single_stream_omni_is_ce_plus_triplet() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let labels = [0, 1, 1, 2, 0, 2];
    let f = random3(&mut rng, (6, 4, 3));
    let l = random3(&mut rng, (6, 5, 3));
    let omni = omni_objective(&[view("s", &f, &l)], &labels, 0.2).unwrap();
    let want = ce_loss(l.view(), &labels).unwrap() + triplet_loss(f.view(), &labels, 0.2).unwrap().loss;
    assert_eq!(omni.report.total, want);
    let r = &omni.report;
    assert!((r.total - r.component(CE) - r.component(TRIPLET)).abs() < 1e-12);
    assert_eq!(r.component(CROSS_TRIPLET), 0.0);
}

#[test]
fn duplicated_batches_keep_the_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let labels = [0, 0, 1, 1, 2, 2];
    let doubled: Vec<usize> = labels.iter().chain(&labels).copied().collect();
    let dup = |a: &Array3<f64>| concatenate(Axis(0), &[a.view(), a.view()]).unwrap();

    // identities 3 apart along their own axis, jitter well inside the margin
    let f1 = Array3::from_shape_fn((6, 3, 2), |(b, c, _)| if c == labels[b] { 3.0 } else { 0.0 } + rng.random_range(-0.05..0.05));
    let f2 = f1.mapv(|v| v * 1.5);
    let (l1, l2) = (random3(&mut rng, (6, 4, 2)), random3(&mut rng, (6, 4, 2)));
    let once = omni_objective(&[view("a", &f1, &l1), view("b", &f2, &l2)], &labels, 0.2).unwrap();
    let (g1, g2, m1, m2) = (dup(&f1), dup(&f2), dup(&l1), dup(&l2));
    let twice = omni_objective(&[view("a", &g1, &m1), view("b", &g2, &m2)], &doubled, 0.2).unwrap();
    assert!((once.report.total - twice.report.total).abs() < 1e-6);

    // cross-entropy alone is a plain mean and duplicates freely
    let noisy = random3(&mut rng, (6, 3, 2));
    let ce1 = ce_loss(l1.view(), &labels).unwrap();
    let ce2 = ce_loss(dup(&l1).view(), &doubled).unwrap();
    assert!((ce1 - ce2).abs() < 1e-12);
    // batch-all triplets gain (x, copy of x) positives at distance 0, so the
    // triplet part moves once negatives fall inside the margin
    let t1 = triplet_loss(noisy.view(), &labels, 1.0).unwrap().loss;
    let t2 = triplet_loss(dup(&noisy).view(), &doubled, 1.0).unwrap().loss;
    assert!((t2 - t1).abs() > 1e-6);
}

/// Central differences of `f` at every coordinate of `x`.
fn numeric_grad(x: &Array3<f64>, f: impl Fn(&Array3<f64>) -> f64) -> Array3<f64> {
    let h = 1e-6;
    let mut g = Array3::zeros(x.dim());
    for (idx, _) in x.indexed_iter() {
        let mut xp = x.clone();
        xp[idx] += h;
        let mut xm = x.clone();
        xm[idx] -= h;
        g[idx] = (f(&xp) - f(&xm)) / (2.0 * h);
    }
    g
}

fn assert_close(a: &Array3<f64>, b: &Array3<f64>, what: &str) {
    let scale = b.iter().fold(1e-3f64, |m, v| m.max(v.abs()));
    for (x, y) in a.iter().zip(b.iter()) {
        assert!((x - y).abs() / scale < 1e-5, "{what}: analytic {x} vs numeric {y}");
    }
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let labels = [0, 1, 0, 2, 1, 2, 0];
    let (b, c, p, k) = (7, 3, 2, 4);
    let f1 = random3(&mut rng, (b, c, p));
    let f2 = random3(&mut rng, (b, c, p));
    let l1 = random3(&mut rng, (b, k, p));
    let l2 = random3(&mut rng, (b, k, p));
    let m = 0.5;

    let (v, g) = triplet_loss_grad(f1.view(), &labels, m).unwrap();
    assert!(v.active > 0 && v.active < v.valid);
    assert_close(&g, &numeric_grad(&f1, |x| triplet_loss(x.view(), &labels, m).unwrap().loss), "triplet");

    let (_, g1, g2) = cross_modal_triplet_grad(f1.view(), f2.view(), &labels, m).unwrap();
    assert_close(&g1, &numeric_grad(&f1, |x| cross_modal_triplet(x.view(), f2.view(), &labels, m).unwrap().loss), "cross m1");
    assert_close(&g2, &numeric_grad(&f2, |x| cross_modal_triplet(f1.view(), x.view(), &labels, m).unwrap().loss), "cross m2");

    let (_, gl) = ce_loss_grad(l1.view(), &labels).unwrap();
    assert_close(&gl, &numeric_grad(&l1, |x| ce_loss(x.view(), &labels).unwrap()), "ce");

    let total = |f1: &Array3<f64>, f2: &Array3<f64>, l1: &Array3<f64>, l2: &Array3<f64>| {
        omni_objective(&[view("a", f1, l1), view("b", f2, l2)], &labels, m).unwrap().total
    };
    let omni = omni_objective(&[view("a", &f1, &l1), view("b", &f2, &l2)], &labels, m).unwrap();
    assert_close(&omni.d_features[1], &numeric_grad(&f2, |x| total(&f1, x, &l1, &l2)), "omni features");
    assert_close(&omni.d_logits[0], &numeric_grad(&l1, |x| total(&f1, &f2, x, &l2)), "omni logits");

    let total2 = |f1: &Array3<f64>, f2: &Array3<f64>, l1: &Array3<f64>, l2: &Array3<f64>| {
        two_stream_objective(&view("a", f1, l1), &view("b", f2, l2), &labels, m).unwrap().total
    };
    let two = two_stream_objective(&view("a", &f1, &l1), &view("b", &f2, &l2), &labels, m).unwrap();
    assert_close(&two.d_features[0], &numeric_grad(&f1, |x| total2(x, &f2, &l1, &l2)), "two-stream features");
    assert_close(&two.d_logits[1], &numeric_grad(&l2, |x| total2(&f1, &f2, &l1, x)), "two-stream logits");
}

#[test]
fn errors_propagate_through_objectives() {
    let f = Array3::<f64>::zeros((2, 2, 1));
    let l = Array3::<f64>::zeros((2, 3, 1));
    assert_eq!(
        omni_objective(&[view("a", &f, &l)], &[0, 5], 0.2).unwrap_err(),
        LossError::LabelOutOfRange { label: 5, classes: 3 }
    );
    assert_eq!(omni_objective::<f64>(&[], &[0, 1], 0.2).unwrap_err(), LossError::NoStreams);
}
