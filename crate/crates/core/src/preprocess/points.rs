//! Point-cloud cleanup: region of interest, floor removal, density clustering.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid ROI: min {min:?} must be strictly below max {max:?} on every axis")]
pub struct InvalidRoi {
    pub min: [f32; 3],
    pub max: [f32; 3],
}

/// Axis-aligned box in meters, closed on both ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Roi {
    min: [f32; 3],
    max: [f32; 3],
}

impl Roi {
    pub fn new(min: [f32; 3], max: [f32; 3]) -> Result<Self, InvalidRoi> {
        if (0..3).all(|i| min[i] < max[i]) {
            Ok(Roi { min, max })
        } else {
            Err(InvalidRoi { min, max })
        }
    }

    pub fn min(&self) -> [f32; 3] {
        self.min
    }

    pub fn max(&self) -> [f32; 3] {
        self.max
    }

    pub fn contains(&self, p: &[f32; 3]) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

pub fn roi_filter(points: &[[f32; 3]], roi: &Roi) -> Vec<[f32; 3]> {
    points.iter().copied().filter(|p| roi.contains(p)).collect()
}

/// Keeps points strictly above the floor plane `z = z_threshold`.
pub fn remove_ground(points: &[[f32; 3]], z_threshold: f32) -> Vec<[f32; 3]> {
    points.iter().copied().filter(|p| p[2] > z_threshold).collect()
}

fn dist2(a: &[f32; 3], b: &[f32; 3]) -> f32 {
    (0..3).map(|i| (a[i] - b[i]) * (a[i] - b[i])).sum()
}

/// Cluster label of every point under density clustering, `None` for noise.
///
/// A point is *core* when at least `min_pts` points (itself included) lie
/// within `eps`. Core points within `eps` of each other share a cluster.
/// A non-core point within `eps` of some core point joins the cluster of its
/// lowest-index core neighbor. Clusters are numbered by their lowest member
/// index. With `eps <= 0` every point is its own cluster.
pub fn cluster_labels(points: &[[f32; 3]], eps: f32, min_pts: usize) -> Vec<Option<usize>> {
    let n = points.len();
    if n == 0 {
        return Vec::new();
    }
    if eps <= 0.0 || !eps.is_finite() {
        return (0..n).map(Some).collect();
    }
    let eps2 = eps * eps;
    let grid = Grid::new(points, eps);
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut nb: Vec<usize> = grid
                .candidates(&points[i])
                .filter(|&j| dist2(&points[i], &points[j]) <= eps2)
                .collect();
            nb.sort_unstable();
            nb
        })
        .collect();
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_pts).collect();

    let mut uf = UnionFind::new(n);
    for i in 0..n {
        if core[i] {
            for &j in &neighbors[i] {
                if core[j] {
                    uf.union(i, j);
                }
            }
        }
    }
    let mut root_label: Vec<Option<usize>> = vec![None; n];
    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut next = 0;
    // scanning in index order numbers clusters by their lowest core member
    for i in 0..n {
        if core[i] {
            let r = uf.find(i);
            let l = *root_label[r].get_or_insert_with(|| {
                next += 1;
                next - 1
            });
            labels[i] = Some(l);
        }
    }
    for i in 0..n {
        if !core[i] {
            labels[i] = neighbors[i].iter().find(|&&j| core[j]).and_then(|&j| labels[j]);
        }
    }
    renumber_by_lowest_member(&mut labels);
    labels
}

fn renumber_by_lowest_member(labels: &mut [Option<usize>]) {
    let mut map = HashMap::new();
    for l in labels.iter_mut().flatten() {
        let len = map.len();
        *l = *map.entry(*l).or_insert(len);
    }
}

/// Largest density cluster, points in their original order.
///
/// Ties between equally large clusters go to the one holding the smallest
/// point index. Returns an empty set when every point is noise.
pub fn keep_main_cluster(points: &[[f32; 3]], eps: f32, min_pts: usize) -> Vec<[f32; 3]> {
    let labels = cluster_labels(points, eps, min_pts);
    let Some(best) = largest_label(&labels) else {
        return Vec::new();
    };
    points
        .iter()
        .zip(&labels)
        .filter(|(_, l)| **l == Some(best))
        .map(|(p, _)| *p)
        .collect()
}

/// Label of the largest cluster given labels numbered by lowest member.
pub fn largest_label(labels: &[Option<usize>]) -> Option<usize> {
    let n_clusters = labels.iter().flatten().max().map(|m| m + 1)?;
    let mut sizes = vec![0usize; n_clusters];
    for l in labels.iter().flatten() {
        sizes[*l] += 1;
    }
    // labels are ordered by lowest member, so the first maximum wins ties
    let max = *sizes.iter().max()?;
    sizes.iter().position(|&s| s == max)
}

struct Grid {
    cell: f32,
    cells: HashMap<(i64, i64, i64), Vec<usize>>,
}

impl Grid {
    fn new(points: &[[f32; 3]], cell: f32) -> Self {
        let mut cells: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(i);
        }
        Grid { cell, cells }
    }

    fn key(p: &[f32; 3], cell: f32) -> (i64, i64, i64) {
        let k = |v: f32| (v / cell).floor() as i64;
        (k(p[0]), k(p[1]), k(p[2]))
    }

    fn candidates<'a>(&'a self, p: &[f32; 3]) -> impl Iterator<Item = usize> + 'a {
        let (x, y, z) = Self::key(p, self.cell);
        (-1..=1).flat_map(move |dx| {
            (-1..=1).flat_map(move |dy| {
                (-1..=1).flat_map(move |dz| {
                    self.cells
                        .get(&(x + dx, y + dy, z + dz))
                        .into_iter()
                        .flatten()
                        .copied()
                })
            })
        })
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}
