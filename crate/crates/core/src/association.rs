//! Stage one of the fusion pipeline: density clustering of every vehicle's
//! world-frame detections into global objects.
//!
//! Clustering runs DBSCAN over box centers in the ground plane. Core points are
//! linked through a uniform grid index and a union-find; border points join the
//! cluster of their nearest core neighbour; noise points become singleton
//! objects so nothing is dropped before pruning. A final split pass separates
//! any cluster that chains together two detections of the same vehicle lying
//! more than `2·eps` apart. Clusters are numbered by their smallest
//! `(vehicle, index)` member, which makes the result independent of input order.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ObjectState;

/// Size limit for [`cluster_brute_force_oracle`].
pub const ORACLE_MAX_POINTS: usize = 200;

/// DBSCAN hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterConfig {
    /// Neighbourhood radius in meters (inclusive).
    pub eps: f64,
    /// Neighbourhood size, the point itself included, that makes a core point.
    pub min_pts: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self { eps: 2.0, min_pts: 1 }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::invalid(format!("eps must be positive, got {}", self.eps)));
        }
        if self.min_pts == 0 {
            return Err(Error::invalid("min_pts must be at least 1"));
        }
        Ok(())
    }
}

/// A world-frame detection tagged with its origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaggedDetection {
    pub vehicle: usize,
    pub index: usize,
    pub state: ObjectState,
}

impl TaggedDetection {
    fn key(&self) -> (usize, usize) {
        (self.vehicle, self.index)
    }
}

/// Binary `N_k × M` assignment of one vehicle's detections to global objects.
///
/// Stored row-compressed: each row holds the single column set to one, if any.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssociationMatrix {
    pub vehicle: usize,
    pub num_objects: usize,
    pub rows: Vec<Option<usize>>,
}

impl AssociationMatrix {
    pub fn num_detections(&self) -> usize {
        self.rows.len()
    }

    /// `a_{n,m}`.
    pub fn entry(&self, n: usize, m: usize) -> u8 {
        u8::from(self.rows.get(n).copied().flatten() == Some(m))
    }

    pub fn object_of(&self, n: usize) -> Option<usize> {
        self.rows.get(n).copied().flatten()
    }

    pub fn row_sum(&self, n: usize) -> usize {
        usize::from(self.object_of(n).is_some())
    }

    pub fn to_dense(&self) -> Vec<Vec<u8>> {
        self.rows
            .iter()
            .map(|r| {
                let mut row = vec![0u8; self.num_objects];
                if let Some(m) = r {
                    row[*m] = 1;
                }
                row
            })
            .collect()
    }
}

/// Result of clustering one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Predicted object count `M`.
    pub num_objects: usize,
    /// Global object index of each input detection, in input order.
    pub labels: Vec<usize>,
    /// One matrix per vehicle present in the input, ordered by vehicle id.
    pub matrices: Vec<AssociationMatrix>,
}

impl Clustering {
    /// Members of each global object as input indices.
    pub fn partition(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.num_objects];
        for (i, &m) in self.labels.iter().enumerate() {
            groups[m].push(i);
        }
        groups
    }

    /// Matrices for an explicit vehicle roster `(vehicle, N_k)`, including
    /// vehicles that contributed no detections.
    pub fn matrices_for(&self, detections: &[TaggedDetection], roster: &[(usize, usize)]) -> Result<Vec<AssociationMatrix>> {
        let mut by_vehicle: HashMap<usize, usize> = HashMap::new();
        let mut out: Vec<AssociationMatrix> = roster
            .iter()
            .enumerate()
            .map(|(slot, &(vehicle, n))| {
                by_vehicle.insert(vehicle, slot);
                AssociationMatrix {
                    vehicle,
                    num_objects: self.num_objects,
                    rows: vec![None; n],
                }
            })
            .collect();
        for (det, &m) in detections.iter().zip(&self.labels) {
            let slot = *by_vehicle
                .get(&det.vehicle)
                .ok_or_else(|| Error::invalid(format!("vehicle {} not in roster", det.vehicle)))?;
            let row = out[slot]
                .rows
                .get_mut(det.index)
                .ok_or_else(|| Error::invalid(format!("detection index {} out of range", det.index)))?;
            *row = Some(m);
        }
        Ok(out)
    }
}

fn planar_dist(a: &TaggedDetection, b: &TaggedDetection) -> f64 {
    a.state.planar_distance(&b.state)
}

/// Clusters world-frame detections; `M` is the number of resulting groups.
pub fn cluster_detections(detections: &[TaggedDetection], cfg: &ClusterConfig) -> Result<Clustering> {
    cfg.validate()?;
    let groups = dbscan_groups(detections, cfg);
    finish(detections, groups, cfg)
}

/// Reference clustering by explicit transitive closure of the core-point
/// neighbourhood graph. Quadratic memory and cubic time, so capped at
/// [`ORACLE_MAX_POINTS`].
pub fn cluster_brute_force_oracle(detections: &[TaggedDetection], cfg: &ClusterConfig) -> Result<Clustering> {
    cfg.validate()?;
    if detections.len() > ORACLE_MAX_POINTS {
        return Err(Error::invalid(format!(
            "oracle refuses {} points (cap {ORACLE_MAX_POINTS})",
            detections.len()
        )));
    }
    let n = detections.len();
    let adj: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| planar_dist(&detections[i], &detections[j]) <= cfg.eps).collect())
        .collect();
    let core: Vec<bool> = adj.iter().map(|row| row.iter().filter(|&&b| b).count() >= cfg.min_pts).collect();

    // Warshall closure restricted to core points.
    let mut reach: Vec<Vec<bool>> = (0..n).map(|i| (0..n).map(|j| core[i] && core[j] && adj[i][j]).collect()).collect();
    for k in 0..n {
        if !core[k] {
            continue;
        }
        for i in 0..n {
            if !reach[i][k] {
                continue;
            }
            for j in 0..n {
                if reach[k][j] {
                    reach[i][j] = true;
                }
            }
        }
    }

    let mut group_of: Vec<Option<usize>> = vec![None; n];
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in 0..n {
        if !core[i] || group_of[i].is_some() {
            continue;
        }
        let members: Vec<usize> = (0..n).filter(|&j| reach[i][j]).collect();
        for &j in &members {
            group_of[j] = Some(groups.len());
        }
        groups.push(members);
    }
    for i in 0..n {
        if core[i] {
            continue;
        }
        let best = (0..n)
            .filter(|&j| core[j] && adj[i][j])
            .min_by(|&a, &b| border_order(detections, i, a, b));
        match best {
            Some(c) => {
                let g = group_of[c].expect("core point has a group");
                groups[g].push(i);
            }
            None => groups.push(vec![i]),
        }
    }
    finish(detections, groups, cfg)
}

/// Nearest core neighbour first, ties by the core's `(vehicle, index)` key.
fn border_order(dets: &[TaggedDetection], i: usize, a: usize, b: usize) -> std::cmp::Ordering {
    let da = planar_dist(&dets[i], &dets[a]);
    let db = planar_dist(&dets[i], &dets[b]);
    da.total_cmp(&db).then(dets[a].key().cmp(&dets[b].key()))
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

fn dbscan_groups(dets: &[TaggedDetection], cfg: &ClusterConfig) -> Vec<Vec<usize>> {
    let n = dets.len();
    let cell = |d: &TaggedDetection| {
        (
            (d.state.center[0] / cfg.eps).floor() as i64,
            (d.state.center[1] / cfg.eps).floor() as i64,
        )
    };
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, d) in dets.iter().enumerate() {
        grid.entry(cell(d)).or_default().push(i);
    }
    let neighbours: Vec<Vec<usize>> = dets
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let (cx, cy) = cell(d);
            let mut out = Vec::new();
            for gx in cx - 1..=cx + 1 {
                for gy in cy - 1..=cy + 1 {
                    if let Some(bucket) = grid.get(&(gx, gy)) {
                        out.extend(bucket.iter().copied().filter(|&j| planar_dist(&dets[i], &dets[j]) <= cfg.eps));
                    }
                }
            }
            out
        })
        .collect();
    let core: Vec<bool> = neighbours.iter().map(|nb| nb.len() >= cfg.min_pts).collect();

    let mut uf = UnionFind::new(n);
    for i in 0..n {
        if core[i] {
            for &j in &neighbours[i] {
                if core[j] {
                    uf.union(i, j);
                }
            }
        }
    }
    let mut root_group: HashMap<usize, usize> = HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in 0..n {
        if core[i] {
            let r = uf.find(i);
            let g = *root_group.entry(r).or_insert_with(|| {
                groups.push(Vec::new());
                groups.len() - 1
            });
            groups[g].push(i);
        }
    }
    for i in 0..n {
        if core[i] {
            continue;
        }
        let best = neighbours[i]
            .iter()
            .copied()
            .filter(|&j| core[j])
            .min_by(|&a, &b| border_order(dets, i, a, b));
        match best {
            Some(c) => {
                let g = root_group[&uf.find(c)];
                groups[g].push(i);
            }
            None => groups.push(vec![i]),
        }
    }
    groups
}

/// Splits groups holding two detections of the same vehicle more than
/// `2·eps` apart: the farthest such pair seeds two halves and every member
/// goes to the nearer seed. Repeats until no group violates the rule.
fn split_same_vehicle(dets: &[TaggedDetection], groups: Vec<Vec<usize>>, eps: f64) -> Vec<Vec<usize>> {
    let limit = 2.0 * eps;
    let mut done = Vec::with_capacity(groups.len());
    let mut stack = groups;
    while let Some(g) = stack.pop() {
        let mut worst: Option<(f64, usize, usize)> = None;
        for (ai, &a) in g.iter().enumerate() {
            for &b in &g[ai + 1..] {
                if dets[a].vehicle != dets[b].vehicle {
                    continue;
                }
                let d = planar_dist(&dets[a], &dets[b]);
                if d <= limit {
                    continue;
                }
                let (p, q) = if dets[a].key() < dets[b].key() { (a, b) } else { (b, a) };
                let better = match worst {
                    None => true,
                    Some((wd, wp, wq)) => d > wd || (d == wd && (dets[p].key(), dets[q].key()) < (dets[wp].key(), dets[wq].key())),
                };
                if better {
                    worst = Some((d, p, q));
                }
            }
        }
        match worst {
            None => done.push(g),
            Some((_, p, q)) => {
                let (left, right): (Vec<usize>, Vec<usize>) = g
                    .iter()
                    .partition(|&&i| planar_dist(&dets[i], &dets[p]) <= planar_dist(&dets[i], &dets[q]));
                stack.push(left);
                stack.push(right);
            }
        }
    }
    done
}

fn finish(dets: &[TaggedDetection], groups: Vec<Vec<usize>>, cfg: &ClusterConfig) -> Result<Clustering> {
    let mut groups = split_same_vehicle(dets, groups, cfg.eps);
    groups.retain(|g| !g.is_empty());
    groups.sort_by_key(|g| g.iter().map(|&i| dets[i].key()).min());
    let mut labels = vec![usize::MAX; dets.len()];
    for (m, g) in groups.iter().enumerate() {
        for &i in g {
            labels[i] = m;
        }
    }
    debug_assert!(labels.iter().all(|&l| l != usize::MAX));

    let mut roster: Vec<(usize, usize)> = Vec::new();
    for d in dets {
        match roster.binary_search_by_key(&d.vehicle, |r| r.0) {
            Ok(pos) => roster[pos].1 = roster[pos].1.max(d.index + 1),
            Err(pos) => roster.insert(pos, (d.vehicle, d.index + 1)),
        }
    }
    let mut c = Clustering {
        num_objects: groups.len(),
        labels,
        matrices: Vec::new(),
    };
    c.matrices = c.matrices_for(dets, &roster)?;
    Ok(c)
}
