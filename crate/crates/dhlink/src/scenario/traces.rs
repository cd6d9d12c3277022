//! Seeded synthetic GPS traces with planted co-location episodes.
//!
//! Every user owns two anchors (home, work) on a square grid whose spacing
//! is twenty times the larger of the distance threshold and the clustering
//! radius. A user wanders within a small disc around the current anchor, so
//! two users are never near each other except during a planted episode,
//! where both sit within the same disc around the plant location.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use dhlink_core::geo::{haversine_m, GpsPoint, METERS_PER_DEGREE};
use dhlink_core::{Millis, MS_PER_DAY};

use crate::error::{Code, Error, Result};

const MINUTE: Millis = 60_000;
const HOUR: Millis = 60 * MINUTE;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

/// One planted co-location of two users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PlantSpec {
    pub user_a: usize,
    pub user_b: usize,
    /// Defaults to a dedicated grid cell away from every anchor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<LatLon>,
    /// Offset from the run start.
    pub start_hours: f64,
    pub duration_minutes: i64,
}

impl PlantSpec {
    pub fn new(user_a: usize, user_b: usize, start_hours: f64, duration_minutes: i64) -> Self {
        Self { user_a, user_b, location: None, start_hours, duration_minutes }
    }

    pub fn interval(&self, run_start: Millis) -> (Millis, Millis) {
        let s = run_start + (self.start_hours * HOUR as f64).round() as Millis;
        (s, s + self.duration_minutes * MINUTE)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TraceSpec {
    pub start: Millis,
    pub duration_days: i64,
    pub point_interval_ms: Millis,
    pub eps_m: f64,
    pub dist_m: f64,
    pub min_pts: usize,
    pub base: LatLon,
    pub plants: Vec<PlantSpec>,
}

impl TraceSpec {
    pub fn end(&self) -> Millis {
        self.start + self.duration_days * MS_PER_DAY
    }

    /// Grid spacing between anchors, in meters.
    pub fn spacing_m(&self) -> f64 {
        20.0 * self.dist_m.max(self.eps_m)
    }

    /// Radius of the disc a user wanders in around an anchor.
    pub fn jitter_m(&self) -> f64 {
        self.dist_m.min(self.eps_m) / 4.0
    }

    fn point_times(&self, from: Millis, to: Millis) -> impl Iterator<Item = Millis> {
        let step = self.point_interval_ms;
        let first = self.start + (from - self.start + step - 1).div_euclid(step) * step;
        (0..).map(move |k| first + k * step).take_while(move |&t| t < to)
    }
}

fn offset(base: LatLon, east_m: f64, north_m: f64) -> LatLon {
    let lat = base.lat + north_m / METERS_PER_DEGREE;
    let lon = base.lon + east_m / (METERS_PER_DEGREE * base.lat.to_radians().cos());
    LatLon { lat, lon }
}

fn cell(spec: &TraceSpec, i: usize, cells: usize) -> LatLon {
    let side = (cells as f64).sqrt().ceil().max(1.0) as usize;
    let s = spec.spacing_m();
    offset(spec.base, (i % side) as f64 * s, (i / side) as f64 * s)
}

/// Home and work anchors per user, then one cell per plant.
pub fn anchors(spec: &TraceSpec, users: usize) -> (Vec<[LatLon; 2]>, Vec<LatLon>) {
    let cells = 2 * users + spec.plants.len();
    let homes = (0..users).map(|u| [cell(spec, 2 * u, cells), cell(spec, 2 * u + 1, cells)]).collect();
    let plants = spec
        .plants
        .iter()
        .enumerate()
        .map(|(k, p)| p.location.unwrap_or_else(|| cell(spec, 2 * users + k, cells)))
        .collect();
    (homes, plants)
}

fn infeasible(m: String) -> Error {
    Error::new(Code::InfeasiblePlant, m)
}

pub fn check_plants(spec: &TraceSpec, users: usize) -> Result<()> {
    let (homes, locs) = anchors(spec, users);
    let min_sep = 10.0 * spec.dist_m + spec.jitter_m();
    let mut spans: Vec<(usize, Millis, Millis, usize)> = Vec::new();
    for (k, p) in spec.plants.iter().enumerate() {
        if p.user_a >= users || p.user_b >= users {
            return Err(infeasible(format!("plant {k}: user index out of range")));
        }
        if p.user_a == p.user_b {
            return Err(infeasible(format!("plant {k}: a user cannot meet themselves")));
        }
        let (s, e) = p.interval(spec.start);
        if s < spec.start || e > spec.end() {
            return Err(infeasible(format!("plant {k}: outside the run")));
        }
        let n = spec.point_times(s, e).count();
        if n < spec.min_pts {
            return Err(infeasible(format!("plant {k}: {n} points, need at least {}", spec.min_pts)));
        }
        if p.location.is_some() {
            let l = locs[k];
            for (u, h) in homes.iter().enumerate() {
                if h.iter().any(|a| haversine_m((a.lat, a.lon), (l.lat, l.lon)) <= min_sep) {
                    return Err(infeasible(format!("plant {k}: location too close to user {u}")));
                }
            }
        }
        for u in [p.user_a, p.user_b] {
            if let Some(&(_, _, _, j)) = spans.iter().find(|&&(v, a, b, _)| v == u && a < e && s < b) {
                return Err(infeasible(format!("plants {j} and {k} overlap for user {u}")));
            }
            spans.push((u, s, e, k));
        }
    }
    Ok(())
}

/// One point stream per user, in token order, each sorted by time.
pub fn generate_traces(seed: u64, tokens: &[String], spec: &TraceSpec) -> Result<Vec<Vec<GpsPoint>>> {
    if spec.point_interval_ms <= 0 {
        return Err(Error::new(Code::BadRequest, "point interval must be positive"));
    }
    check_plants(spec, tokens.len())?;
    let (homes, locs) = anchors(spec, tokens.len());
    let r = spec.jitter_m();
    let mut out = Vec::with_capacity(tokens.len());
    for (u, token) in tokens.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u as u64);
        let mine: Vec<(Millis, Millis, LatLon)> = spec
            .plants
            .iter()
            .zip(&locs)
            .filter(|(p, _)| p.user_a == u || p.user_b == u)
            .map(|(p, l)| {
                let (s, e) = p.interval(spec.start);
                (s, e, *l)
            })
            .collect();
        let (mut x, mut y) = (0.0f64, 0.0f64);
        let mut pts = Vec::new();
        for t in spec.point_times(spec.start, spec.end()) {
            x += rng.gen_range(-r / 4.0..=r / 4.0);
            y += rng.gen_range(-r / 4.0..=r / 4.0);
            let norm = x.hypot(y);
            if norm > r {
                x *= r / norm;
                y *= r / norm;
            }
            let hour = (t.rem_euclid(MS_PER_DAY)) / HOUR;
            let anchor = match mine.iter().find(|(s, e, _)| *s <= t && t < *e) {
                Some((_, _, l)) => *l,
                None if (9..17).contains(&hour) => homes[u][1],
                None => homes[u][0],
            };
            let p = offset(anchor, x, y);
            pts.push(GpsPoint::new(token.clone(), p.lat, p.lon, t));
        }
        out.push(pts);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use dhlink_core::dbscan::gps_cluster;
    use dhlink_core::proximity::proximity;

    fn spec(plants: Vec<PlantSpec>) -> TraceSpec {
        TraceSpec {
            start: 19_676 * MS_PER_DAY,
            duration_days: 2,
            point_interval_ms: 5 * MINUTE,
            eps_m: 100.0,
            dist_m: 50.0,
            min_pts: 3,
            base: LatLon { lat: 46.52, lon: 6.63 },
            plants,
        }
    }

    fn tokens(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("tok{i:02}")).collect()
    }

    #[test]
    fn same_seed_same_streams() {
        let s = spec(vec![PlantSpec::new(0, 1, 10.0, 60)]);
        let a = generate_traces(9, &tokens(4), &s).unwrap();
        assert_eq!(a, generate_traces(9, &tokens(4), &s).unwrap());
        assert_ne!(a, generate_traces(10, &tokens(4), &s).unwrap());
        assert_eq!(a[0].len(), 2 * 24 * 12);
    }

    #[test]
    fn plant_yields_colocated_clusters() {
        let s = spec(vec![PlantSpec::new(0, 1, 10.0, 60)]);
        let tr = generate_traces(3, &tokens(3), &s).unwrap();
        let (ps, pe) = s.plants[0].interval(s.start);
        let cl = |u: usize| {
            let pts: Vec<_> = tr[u].iter().filter(|p| p.ts >= ps && p.ts < pe).cloned().collect();
            gps_cluster(&pts, s.eps_m, s.min_pts).unwrap()
        };
        let (a, b) = (cl(0), cl(1));
        assert_eq!((a.len(), b.len()), (1, 1));
        assert!(proximity(&a[0], &b[0], s.dist_m, 1800).is_some());
    }

    #[test]
    fn users_stay_apart_without_plants() {
        let s = spec(vec![]);
        let tr = generate_traces(5, &tokens(6), &s).unwrap();
        for i in 0..tr[0].len() {
            for u in 0..6 {
                for v in u + 1..6 {
                    let (p, q) = (&tr[u][i], &tr[v][i]);
                    assert!(haversine_m((p.lat, p.lon), (q.lat, q.lon)) > 10.0 * s.dist_m);
                }
            }
        }
    }

    #[test]
    fn infeasible_plants() {
        let bad = |p: Vec<PlantSpec>| generate_traces(1, &tokens(3), &spec(p)).unwrap_err().code;
        assert_eq!(bad(vec![PlantSpec::new(0, 0, 1.0, 60)]), Code::InfeasiblePlant);
        assert_eq!(bad(vec![PlantSpec::new(0, 7, 1.0, 60)]), Code::InfeasiblePlant);
        assert_eq!(bad(vec![PlantSpec::new(0, 1, 1.0, 10)]), Code::InfeasiblePlant);
        assert_eq!(bad(vec![PlantSpec::new(0, 1, 47.5, 60)]), Code::InfeasiblePlant);
        assert_eq!(
            bad(vec![PlantSpec::new(0, 1, 1.0, 60), PlantSpec::new(2, 1, 1.5, 60)]),
            Code::InfeasiblePlant
        );
        let mut near = PlantSpec::new(0, 1, 1.0, 60);
        near.location = Some(LatLon { lat: 46.52, lon: 6.63 });
        assert_eq!(bad(vec![near]), Code::InfeasiblePlant);
        generate_traces(1, &tokens(3), &spec(vec![PlantSpec::new(0, 1, 1.0, 60), PlantSpec::new(2, 1, 2.0, 60)]))
            .unwrap();
    }
}
