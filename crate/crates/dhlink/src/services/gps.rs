//! GPS clustering and proximity tracing over the store.
//!
//! Key layout: `points/{token}/{ts}`, `clusters/{token}/{clusterId}`,
//! `confirmed/{token}`, `alerts/{alertId}`. Clusters are also indexed by the
//! 6-character geohash of their centroid.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use dhlink_core::dbscan::{gps_cluster, ClusterError, DEFAULT_EPS_M, DEFAULT_MIN_PTS};
use dhlink_core::geo::{geohash, GpsCluster, GpsPoint, METERS_PER_DEGREE};
use dhlink_core::proximity::{
    detect_proximity_backtrace, detect_proximity_incremental, ProximityAlert, ProximityError, ProximityParams,
};
use dhlink_core::{Millis, MS_PER_DAY};

use crate::error::{fail, Code, Error, Result};
use crate::services::store::Store;

const GEOHASH_PRECISION: usize = 6;
const CELL_LAT_DEG: f64 = 180.0 / 32768.0;
const CELL_LON_DEG: f64 = 360.0 / 32768.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ClusterParams {
    pub eps_m: f64,
    pub min_pts: usize,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self { eps_m: DEFAULT_EPS_M, min_pts: DEFAULT_MIN_PTS }
    }
}

impl From<ClusterError> for Error {
    fn from(e: ClusterError) -> Self {
        Error::new(Code::BadRequest, e.to_string())
    }
}

impl From<ProximityError> for Error {
    fn from(e: ProximityError) -> Self {
        Error::new(Code::NotFound, e.to_string())
    }
}

fn to_value<T: Serialize>(v: &T) -> Result<serde_json::Value> {
    serde_json::to_value(v).map_err(|e| Error::new(Code::Internal, e.to_string()))
}

fn decode<T: for<'de> Deserialize<'de>>(items: Vec<(String, serde_json::Value)>) -> Vec<T> {
    items.into_iter().filter_map(|(_, v)| serde_json::from_value(v).ok()).collect()
}

pub struct GpsService {
    store: Arc<Store>,
    pub cluster_params: ClusterParams,
    pub proximity: ProximityParams,
    index: Mutex<BTreeMap<String, BTreeSet<(String, String)>>>,
}

impl GpsService {
    /// Rebuilds the geohash index from the clusters already in `store`.
    pub fn new(store: Arc<Store>, cluster_params: ClusterParams, proximity: ProximityParams) -> Self {
        let s = Self { store, cluster_params, proximity, index: Mutex::new(BTreeMap::new()) };
        for c in s.clusters() {
            s.index_insert(&c);
        }
        s
    }

    fn index_insert(&self, c: &GpsCluster) {
        let cell = geohash(c.centroid_lat, c.centroid_lon, GEOHASH_PRECISION);
        let mut idx = self.index.lock().unwrap_or_else(|e| e.into_inner());
        idx.entry(cell).or_default().insert((c.user_token.clone(), c.cluster_id.clone()));
    }

    fn index_remove(&self, c: &GpsCluster) {
        let cell = geohash(c.centroid_lat, c.centroid_lon, GEOHASH_PRECISION);
        let mut idx = self.index.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(set) = idx.get_mut(&cell) {
            set.remove(&(c.user_token.clone(), c.cluster_id.clone()));
            if set.is_empty() {
                idx.remove(&cell);
            }
        }
    }

    pub fn add_point(&self, p: &GpsPoint) -> Result<()> {
        if !p.is_valid() {
            return fail(Code::BadRequest, format!("coordinates out of range: {}, {}", p.lat, p.lon));
        }
        self.store.put(&format!("points/{}/{:015}", p.user_token, p.ts), to_value(p)?)?;
        Ok(())
    }

    pub fn points(&self, token: &str) -> Vec<GpsPoint> {
        decode(self.store.scan_prefix(&format!("points/{token}/")))
    }

    pub fn all_points(&self) -> Vec<GpsPoint> {
        decode(self.store.scan_prefix("points/"))
    }

    pub fn clusters(&self) -> Vec<GpsCluster> {
        decode(self.store.scan_prefix("clusters/"))
    }

    pub fn confirmed_tokens(&self) -> BTreeSet<String> {
        self.store.scan_prefix("confirmed/").into_iter().map(|(k, _)| k["confirmed/".len()..].to_string()).collect()
    }

    pub fn alerts(&self) -> Vec<ProximityAlert> {
        decode(self.store.scan_prefix("alerts/"))
    }

    /// Clusters the user's raw points with `from <= ts < to` and stores the
    /// result. Returns only clusters not stored before.
    pub fn cluster_user(&self, token: &str, from: Millis, to: Millis) -> Result<Vec<GpsCluster>> {
        let pts: Vec<GpsPoint> = self.points(token).into_iter().filter(|p| p.ts >= from && p.ts < to).collect();
        let clusters = gps_cluster(&pts, self.cluster_params.eps_m, self.cluster_params.min_pts)?;
        let mut fresh = Vec::new();
        for c in clusters {
            let key = format!("clusters/{}/{}", c.user_token, c.cluster_id);
            if self.store.get(&key).is_none() {
                self.store.put(&key, to_value(&c)?)?;
                self.index_insert(&c);
                fresh.push(c);
            }
        }
        Ok(fresh)
    }

    /// Stores a cluster produced elsewhere (for example received on a topic).
    pub fn insert_cluster(&self, c: &GpsCluster) -> Result<bool> {
        let key = format!("clusters/{}/{}", c.user_token, c.cluster_id);
        if self.store.get(&key).is_some() {
            return Ok(false);
        }
        self.store.put(&key, to_value(c)?)?;
        self.index_insert(c);
        Ok(true)
    }

    fn record_alerts(&self, alerts: Vec<ProximityAlert>) -> Result<Vec<ProximityAlert>> {
        let mut fresh = Vec::new();
        for a in alerts {
            let key = format!("alerts/{}", a.alert_id);
            if self.store.get(&key).is_none() {
                self.store.put(&key, to_value(&a)?)?;
                fresh.push(a);
            }
        }
        Ok(fresh)
    }

    /// Marks `token` confirmed and alerts everyone near its recent clusters.
    /// Returns the alerts not raised before. A token without clusters is
    /// still recorded as confirmed, so its later clusters are checked.
    pub fn confirm(&self, token: &str, now: Millis) -> Result<Vec<ProximityAlert>> {
        self.store.put(&format!("confirmed/{token}"), serde_json::json!({ "at": now }))?;
        match detect_proximity_backtrace(token, &self.clusters(), now, &self.proximity) {
            Ok(alerts) => self.record_alerts(alerts),
            Err(ProximityError::UnknownConfirmedToken(_)) => Ok(Vec::new()),
        }
    }

    /// Confirmed users' clusters that may lie within the distance threshold
    /// of `c`, found through the geohash neighbourhood.
    fn confirmed_candidates(&self, c: &GpsCluster, confirmed: &BTreeSet<String>) -> Vec<GpsCluster> {
        let min_cell_m = CELL_LAT_DEG.min(CELL_LON_DEG * c.centroid_lat.to_radians().cos()) * METERS_PER_DEGREE;
        if self.proximity.dist_m >= min_cell_m {
            return self.clusters().into_iter().filter(|k| confirmed.contains(&k.user_token)).collect();
        }
        let mut cells = BTreeSet::new();
        for dy in [-1.0, 0.0, 1.0] {
            for dx in [-1.0, 0.0, 1.0] {
                let lat = (c.centroid_lat + dy * CELL_LAT_DEG).clamp(-90.0, 90.0);
                let lon = c.centroid_lon + dx * CELL_LON_DEG;
                let lon = if lon > 180.0 { lon - 360.0 } else if lon < -180.0 { lon + 360.0 } else { lon };
                cells.insert(geohash(lat, lon, GEOHASH_PRECISION));
            }
        }
        let keys: Vec<(String, String)> = {
            let idx = self.index.lock().unwrap_or_else(|e| e.into_inner());
            cells.iter().filter_map(|cell| idx.get(cell)).flatten().filter(|(u, _)| confirmed.contains(u)).cloned().collect()
        };
        keys.into_iter()
            .filter_map(|(u, id)| self.store.get(&format!("clusters/{u}/{id}")))
            .filter_map(|v| serde_json::from_value(v).ok())
            .collect()
    }

    /// Compares a new cluster with confirmed users' clusters. A new cluster
    /// of a confirmed user is also compared with everyone else's.
    pub fn check_new_cluster(&self, c: &GpsCluster, now: Millis) -> Result<Vec<ProximityAlert>> {
        let confirmed = self.confirmed_tokens();
        if confirmed.is_empty() {
            return Ok(Vec::new());
        }
        let mut candidates = self.confirmed_candidates(c, &confirmed);
        candidates.retain(|k| k.user_token != c.user_token);
        let mut alerts = detect_proximity_incremental(c, &candidates, now, &self.proximity);
        if confirmed.contains(&c.user_token) {
            let one = core::slice::from_ref(c);
            for o in self.clusters().iter().filter(|o| o.user_token != c.user_token) {
                alerts.extend(detect_proximity_incremental(o, one, now, &self.proximity));
            }
        }
        self.record_alerts(alerts)
    }

    /// Removes raw points and clusters older than the window.
    pub fn purge(&self, now: Millis) -> Result<usize> {
        let start = now - self.proximity.window_days * MS_PER_DAY;
        let mut n = 0;
        for (k, v) in self.store.scan_prefix("points/") {
            if v.get("ts").and_then(|t| t.as_i64()).is_some_and(|ts| ts < start) {
                self.store.delete(&k)?;
                n += 1;
            }
        }
        for (k, v) in self.store.scan_prefix("clusters/") {
            let Ok(c) = serde_json::from_value::<GpsCluster>(v) else { continue };
            if c.t_end < start {
                self.store.delete(&k)?;
                self.index_remove(&c);
                n += 1;
            }
        }
        Ok(n)
    }
}
