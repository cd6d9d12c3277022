//! Density-based clustering of one user's GPS trace under the haversine metric.
//!
//! Semantics:
//! - the neighborhood of a point is every point within `eps_m` meters,
//!   the point itself included;
//! - a core point has at least `min_pts` neighbors;
//! - clusters are the connected components of core points (two cores are
//!   linked when within `eps_m`);
//! - a non-core point with a core neighbor is a border point; clusters are
//!   numbered by their lowest-index core point and a border point reachable
//!   from several joins the lowest-numbered one, as in the classic
//!   index-order expansion;
//! - everything else is noise and is dropped.
//!
//! The result only depends on the input order through the border tie-break,
//! so identical input always yields identical output.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::geo::{haversine_m, GpsCluster, GpsPoint, METERS_PER_DEGREE};

pub const DEFAULT_EPS_M: f64 = 100.0;
pub const DEFAULT_MIN_PTS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClusterError {
    #[error("mixed-user-input: points belong to more than one user")]
    MixedUserInput,
    #[error("eps must be > 0 and min_pts >= 1")]
    BadParams,
}

/// Neighbor lookup over points sorted by latitude.
struct LatIndex<'a> {
    coords: &'a [(f64, f64)],
    order: Vec<usize>,
    eps_m: f64,
    band_deg: f64,
}

impl<'a> LatIndex<'a> {
    fn new(coords: &'a [(f64, f64)], eps_m: f64) -> Self {
        let mut order: Vec<usize> = (0..coords.len()).collect();
        order.sort_by(|&a, &b| coords[a].0.total_cmp(&coords[b].0).then(a.cmp(&b)));
        // Great-circle distance is never shorter than the meridional arc, so
        // a latitude band of eps (plus float slack) holds every neighbor.
        let band_deg = eps_m / METERS_PER_DEGREE * (1.0 + 1e-9) + 1e-12;
        Self { coords, order, eps_m, band_deg }
    }

    fn neighbors(&self, i: usize, out: &mut Vec<usize>) {
        out.clear();
        let lat = self.coords[i].0;
        let start = self.order.partition_point(|&j| self.coords[j].0 < lat - self.band_deg);
        for &j in &self.order[start..] {
            if self.coords[j].0 > lat + self.band_deg {
                break;
            }
            if haversine_m(self.coords[i], self.coords[j]) <= self.eps_m {
                out.push(j);
            }
        }
        out.sort_unstable();
    }
}

/// Labels every coordinate with its cluster number, or `None` for noise.
///
/// Clusters are numbered in order of their lowest-index core point.
pub fn dbscan_labels(coords: &[(f64, f64)], eps_m: f64, min_pts: usize) -> Vec<Option<usize>> {
    let n = coords.len();
    let index = LatIndex::new(coords, eps_m);
    let mut neighbors: Vec<Vec<usize>> = Vec::with_capacity(n);
    let mut buf = Vec::new();
    for i in 0..n {
        index.neighbors(i, &mut buf);
        neighbors.push(buf.clone());
    }
    let is_core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_pts).collect();

    let mut labels = vec![None; n];
    let mut next = 0usize;
    let mut stack = Vec::new();
    for seed in 0..n {
        if !is_core[seed] || labels[seed].is_some() {
            continue;
        }
        labels[seed] = Some(next);
        stack.push(seed);
        while let Some(p) = stack.pop() {
            for &q in &neighbors[p] {
                if is_core[q] && labels[q].is_none() {
                    labels[q] = Some(next);
                    stack.push(q);
                }
            }
        }
        next += 1;
    }

    for i in 0..n {
        if !is_core[i] {
            // the first cluster to reach a border point claims it
            labels[i] = neighbors[i].iter().filter(|&&j| is_core[j]).filter_map(|&j| labels[j]).min();
        }
    }
    labels
}

/// Clusters one user's points. Output is ordered by start time, then id.
pub fn gps_cluster(points: &[GpsPoint], eps_m: f64, min_pts: usize) -> Result<Vec<GpsCluster>, ClusterError> {
    if !(eps_m > 0.0) || min_pts < 1 {
        return Err(ClusterError::BadParams);
    }
    let Some(first) = points.first() else {
        return Ok(Vec::new());
    };
    if points.iter().any(|p| p.user_token != first.user_token) {
        return Err(ClusterError::MixedUserInput);
    }
    let coords: Vec<(f64, f64)> = points.iter().map(|p| (p.lat, p.lon)).collect();
    let labels = dbscan_labels(&coords, eps_m, min_pts);
    let count = labels.iter().flatten().max().map_or(0, |m| m + 1);

    struct Acc {
        first: usize,
        lat: f64,
        lon: f64,
        t_start: i64,
        t_end: i64,
        n: usize,
    }
    let mut acc: Vec<Option<Acc>> = (0..count).map(|_| None).collect();
    for (i, (p, label)) in points.iter().zip(&labels).enumerate() {
        let Some(k) = *label else { continue };
        let a = acc[k].get_or_insert(Acc { first: i, lat: 0.0, lon: 0.0, t_start: p.ts, t_end: p.ts, n: 0 });
        a.lat += p.lat;
        a.lon += p.lon;
        a.t_start = a.t_start.min(p.ts);
        a.t_end = a.t_end.max(p.ts);
        a.n += 1;
    }
    let mut accs: Vec<Acc> = acc.into_iter().flatten().collect();
    accs.sort_by_key(|a| (a.t_start, a.first));

    Ok(accs
        .into_iter()
        .enumerate()
        .map(|(seq, a)| GpsCluster {
            cluster_id: format!("{}-{}-{:04}", first.user_token, a.t_start, seq),
            user_token: first.user_token.clone(),
            centroid_lat: a.lat / a.n as f64,
            centroid_lon: a.lon / a.n as f64,
            t_start: a.t_start,
            t_end: a.t_end,
            point_count: a.n,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeSet;
    use alloc::string::String;
    use rand::{Rng, SeedableRng};

    /// Quadratic reference: full distance matrix, union-find over core links,
    /// border points attached to the reachable component whose lowest core
    /// index is smallest.
    fn reference_partition(coords: &[(f64, f64)], eps: f64, min_pts: usize) -> BTreeSet<Vec<usize>> {
        let n = coords.len();
        let near = |i: usize, j: usize| haversine_m(coords[i], coords[j]) <= eps;
        let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts).collect();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut Vec<usize>, x: usize) -> usize {
            let mut r = x;
            while p[r] != r {
                r = p[r];
            }
            p[x] = r;
            r
        }
        for i in 0..n {
            for j in 0..n {
                if core[i] && core[j] && near(i, j) {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    parent[a] = b;
                }
            }
        }
        let mut groups: alloc::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        let mut first = vec![usize::MAX; n];
        for i in (0..n).filter(|&i| core[i]) {
            let r = find(&mut parent, i);
            first[r] = first[r].min(i);
        }
        for i in 0..n {
            let anchor = if core[i] {
                Some(i)
            } else {
                (0..n).filter(|&j| core[j] && near(i, j)).min_by_key(|&j| {
                    let r = find(&mut parent, j);
                    first[r]
                })
            };
            if let Some(a) = anchor {
                let root = find(&mut parent, a);
                groups.entry(root).or_default().push(i);
            }
        }
        groups.into_values().collect()
    }

    fn partition(labels: &[Option<usize>]) -> BTreeSet<Vec<usize>> {
        let mut groups: alloc::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for (i, l) in labels.iter().enumerate() {
            if let Some(k) = l {
                groups.entry(*k).or_default().push(i);
            }
        }
        groups.into_values().collect()
    }

    fn pt(lat: f64, lon: f64, ts: i64) -> GpsPoint {
        GpsPoint::new("u1", lat, lon, ts)
    }

    #[test]
    fn empty_input() {
        assert!(gps_cluster(&[], 100.0, 3).unwrap().is_empty());
    }

    #[test]
    fn four_close_points_and_one_far() {
        // Offsets of a few tens of meters around Adelaide, plus one ~10 km north.
        let pts = [
            pt(-34.92850, 138.60070, 1_000),
            pt(-34.92870, 138.60090, 2_000),
            pt(-34.92840, 138.60080, 3_000),
            pt(-34.92860, 138.60050, 4_000),
            pt(-34.83850, 138.60070, 5_000),
        ];
        let coords: Vec<_> = pts.iter().map(|p| (p.lat, p.lon)).collect();
        for i in 0..4 {
            for j in 0..4 {
                assert!(haversine_m(coords[i], coords[j]) < 50.0);
            }
            assert!(haversine_m(coords[i], coords[4]) > 9_000.0);
        }
        let expected: BTreeSet<Vec<usize>> = [vec![0, 1, 2, 3]].into_iter().collect();
        assert_eq!(reference_partition(&coords, 100.0, 3), expected);
        assert_eq!(partition(&dbscan_labels(&coords, 100.0, 3)), expected);

        let clusters = gps_cluster(&pts, 100.0, 3).unwrap();
        assert_eq!(clusters.len(), 1);
        let c = &clusters[0];
        assert_eq!(c.point_count, 4);
        assert_eq!((c.t_start, c.t_end), (1_000, 4_000));
        assert!((c.centroid_lat - (-34.92855)).abs() < 1e-9);
        assert!((c.centroid_lon - 138.600725).abs() < 1e-9);
    }

    #[test]
    fn mixed_users_rejected() {
        let pts = [pt(0.0, 0.0, 0), GpsPoint::new("u2", 0.0, 0.0, 0)];
        assert_eq!(gps_cluster(&pts, 100.0, 1), Err(ClusterError::MixedUserInput));
        assert_eq!(gps_cluster(&pts[..1], 0.0, 1), Err(ClusterError::BadParams));
    }

    #[test]
    fn matches_reference_on_random_instances() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..1000 {
            let n = rng.gen_range(0..=50);
            let lat0 = rng.gen_range(-60.0..60.0);
            let lon0 = rng.gen_range(-170.0..170.0);
            let spread = rng.gen_range(0.0005..0.02);
            let coords: Vec<(f64, f64)> = (0..n)
                .map(|_| (lat0 + rng.gen_range(-spread..spread), lon0 + rng.gen_range(-spread..spread)))
                .collect();
            let eps = rng.gen_range(20.0..400.0);
            let min_pts = rng.gen_range(1..=6);
            assert_eq!(
                partition(&dbscan_labels(&coords, eps, min_pts)),
                reference_partition(&coords, eps, min_pts)
            );
        }
    }

    #[test]
    fn deterministic_ids_and_order() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<GpsPoint> = (0..200)
            .map(|i| pt(rng.gen_range(0.0..0.01), rng.gen_range(0.0..0.01), i * 60_000))
            .collect();
        let a = gps_cluster(&pts, 150.0, 3).unwrap();
        let b = gps_cluster(&pts, 150.0, 3).unwrap();
        assert_eq!(a, b);
        let keys: Vec<(i64, String)> = a.iter().map(|c| (c.t_start, c.cluster_id.clone())).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert!(a.iter().all(|c| c.point_count >= 3 && c.t_start <= c.t_end));
    }
}
