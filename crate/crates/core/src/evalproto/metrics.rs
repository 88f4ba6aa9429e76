use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::EvalError;

/// Mean over parts of the Euclidean distance between part vectors of two
/// `[C, P]` features.
pub fn distance(a: ArrayView2<'_, f32>, b: ArrayView2<'_, f32>) -> Result<f64, EvalError> {
    if a.shape() != b.shape() {
        return Err(EvalError::ShapeMismatch {
            expected: a.shape().to_vec(),
            got: b.shape().to_vec(),
        });
    }
    let parts = a.ncols();
    if parts == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0f64;
    for (ca, cb) in a.columns().into_iter().zip(b.columns()) {
        let sq: f64 = ca
            .iter()
            .zip(cb)
            .map(|(&x, &y)| {
                let d = f64::from(x) - f64::from(y);
                d * d
            })
            .sum();
        total += sq.sqrt();
    }
    Ok(total / parts as f64)
}

/// `[probes, gallery]` distances.
pub fn distance_matrix<'a>(
    probes: &[ArrayView2<'a, f32>],
    gallery: &[ArrayView2<'a, f32>],
) -> Result<Array2<f64>, EvalError> {
    let mut out = Array2::zeros((probes.len(), gallery.len()));
    for (i, p) in probes.iter().enumerate() {
        for (j, g) in gallery.iter().enumerate() {
            out[(i, j)] = distance(p.view(), g.view())?;
        }
    }
    Ok(out)
}

fn check(dist: ArrayView2<'_, f64>, probes: usize, gallery: usize) -> Result<(), EvalError> {
    if gallery == 0 {
        return Err(EvalError::EmptyGallery);
    }
    if probes == 0 {
        return Err(EvalError::EmptyProbes);
    }
    if dist.dim() != (probes, gallery) {
        return Err(EvalError::ShapeMismatch {
            expected: vec![probes, gallery],
            got: dist.shape().to_vec(),
        });
    }
    Ok(())
}

/// Gallery indices by increasing distance, ties by index.
fn ranking(row: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
    idx
}

/// Percentage of probes whose nearest gallery entry has their label. Ties
/// go to the lowest gallery index.
pub fn rank1<L: PartialEq>(dist: ArrayView2<'_, f64>, probe_labels: &[L], gallery_labels: &[L]) -> Result<f64, EvalError> {
    check(dist, probe_labels.len(), gallery_labels.len())?;
    let mut hits = 0usize;
    for (row, label) in dist.rows().into_iter().zip(probe_labels) {
        let mut best = 0;
        for (j, &d) in row.iter().enumerate() {
            if d < row[best] {
                best = j;
            }
        }
        hits += (gallery_labels[best] == *label) as usize;
    }
    Ok(100.0 * hits as f64 / probe_labels.len() as f64)
}

/// Average precision of one ranked gallery, or `None` when nothing in it
/// is relevant. With a single relevant entry this is its reciprocal rank.
pub fn average_precision<L: PartialEq>(row: &[f64], label: &L, gallery_labels: &[L]) -> Option<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, j) in ranking(row).into_iter().enumerate() {
        if gallery_labels[j] == *label {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanAp {
    /// Percentage; `None` when every probe was excluded.
    pub value: Option<f64>,
    /// Probes without any gallery entry of their label.
    pub excluded: usize,
}

pub fn mean_ap<L: PartialEq>(dist: ArrayView2<'_, f64>, probe_labels: &[L], gallery_labels: &[L]) -> Result<MeanAp, EvalError> {
    check(dist, probe_labels.len(), gallery_labels.len())?;
    let mut sum = 0.0;
    let mut counted = 0usize;
    for (row, label) in dist.rows().into_iter().zip(probe_labels) {
        let row = row.to_vec();
        if let Some(ap) = average_precision(&row, label, gallery_labels) {
            sum += ap;
            counted += 1;
        }
    }
    let excluded = probe_labels.len() - counted;
    if excluded > 0 {
        log::warn!("{excluded} probes have no gallery match and are left out of mAP");
    }
    Ok(MeanAp {
        value: (counted > 0).then(|| 100.0 * sum / counted as f64),
        excluded,
    })
}

/// Metric per `(probe view, gallery view)` cell; `None` marks a skipped pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewMatrix {
    pub views: Vec<u16>,
    /// Row-major, rows are probe views.
    pub cells: Vec<Vec<Option<f64>>>,
}

impl ViewMatrix {
    pub fn empty(views: Vec<u16>) -> Self {
        let n = views.len();
        ViewMatrix {
            views,
            cells: vec![vec![None; n]; n],
        }
    }

    pub fn get(&self, probe: usize, gallery: usize) -> Option<f64> {
        self.cells[probe][gallery]
    }

    /// Off-diagonal cells holding a value.
    pub fn evaluated(&self) -> usize {
        self.off_diagonal().count()
    }

    fn off_diagonal(&self) -> impl Iterator<Item = f64> + '_ {
        self.cells
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().enumerate().filter(move |(j, _)| *j != i).filter_map(|(_, v)| *v))
    }
}

/// Mean over evaluated off-diagonal cells. The diagonal is never used.
pub fn cross_view_average(m: &ViewMatrix) -> Result<f64, EvalError> {
    let (sum, n) = m.off_diagonal().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        return Err(EvalError::AllPairsMissing);
    }
    Ok(sum / n as f64)
}
