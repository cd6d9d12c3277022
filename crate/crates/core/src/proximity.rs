//! Proximity detection between users' GPS clusters.
//!
//! Two clusters are in proximity when their centroids are within
//! `dist_m` meters and their time intervals, each widened by `slack_s`
//! seconds on both sides, intersect.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::geo::{haversine_m, GpsCluster, GpsPoint};
use crate::{Millis, MS_PER_DAY, MS_PER_SECOND};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProximityParams {
    pub dist_m: f64,
    pub slack_s: i64,
    pub window_days: i64,
}

impl Default for ProximityParams {
    fn default() -> Self {
        Self { dist_m: 50.0, slack_s: 30 * 60, window_days: 7 }
    }
}

impl ProximityParams {
    /// Oldest `t_end` (inclusive) that still lies inside the window.
    pub fn window_start(&self, now: Millis) -> Millis {
        now - self.window_days * MS_PER_DAY
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProximityAlert {
    pub alert_id: String,
    pub subject_token: String,
    pub confirmed_token: String,
    pub subject_cluster_id: String,
    pub confirmed_cluster_id: String,
    pub distance_meters: f64,
    pub overlap_seconds: i64,
    pub created_at: Millis,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProximityError {
    #[error("unknown-confirmed-token: no clusters for `{0}`")]
    UnknownConfirmedToken(String),
}

/// Evaluates the proximity predicate, returning `(distance_m, overlap_s)`
/// when it holds.
pub fn proximity(a: &GpsCluster, b: &GpsCluster, dist_m: f64, slack_s: i64) -> Option<(f64, i64)> {
    let slack = slack_s * MS_PER_SECOND;
    if a.t_start - slack > b.t_end + slack || b.t_start - slack > a.t_end + slack {
        return None;
    }
    let d = haversine_m((a.centroid_lat, a.centroid_lon), (b.centroid_lat, b.centroid_lon));
    if d > dist_m {
        return None;
    }
    let overlap = (a.t_end.min(b.t_end) - a.t_start.max(b.t_start)).max(0) / MS_PER_SECOND;
    Some((d, overlap))
}

fn alert(subject: &GpsCluster, confirmed: &GpsCluster, d: f64, overlap: i64, now: Millis) -> ProximityAlert {
    ProximityAlert {
        alert_id: format!("alert:{}:{}", subject.cluster_id, confirmed.cluster_id),
        subject_token: subject.user_token.clone(),
        confirmed_token: confirmed.user_token.clone(),
        subject_cluster_id: subject.cluster_id.clone(),
        confirmed_cluster_id: confirmed.cluster_id.clone(),
        distance_meters: d,
        overlap_seconds: overlap,
        created_at: now,
    }
}

fn sort_alerts(alerts: &mut [ProximityAlert]) {
    alerts.sort_by(|a, b| {
        (&a.subject_token, &a.subject_cluster_id, &a.confirmed_cluster_id).cmp(&(
            &b.subject_token,
            &b.subject_cluster_id,
            &b.confirmed_cluster_id,
        ))
    });
}

/// Alerts every other user whose clusters were near the confirmed user's
/// clusters during the window ending at `now`.
pub fn detect_proximity_backtrace(
    confirmed_token: &str,
    clusters: &[GpsCluster],
    now: Millis,
    params: &ProximityParams,
) -> Result<Vec<ProximityAlert>, ProximityError> {
    if !clusters.iter().any(|c| c.user_token == confirmed_token) {
        return Err(ProximityError::UnknownConfirmedToken(confirmed_token.into()));
    }
    let start = params.window_start(now);
    let (confirmed, others): (Vec<&GpsCluster>, Vec<&GpsCluster>) = clusters
        .iter()
        .filter(|c| c.t_end >= start)
        .partition(|c| c.user_token == confirmed_token);
    let mut out = Vec::new();
    for s in &others {
        for c in &confirmed {
            if let Some((d, overlap)) = proximity(s, c, params.dist_m, params.slack_s) {
                out.push(alert(s, c, d, overlap, now));
            }
        }
    }
    sort_alerts(&mut out);
    Ok(out)
}

/// Compares one freshly produced cluster against confirmed users' clusters.
///
/// A cluster belonging to a confirmed user produces nothing; confirmed
/// clusters outside the window are ignored.
pub fn detect_proximity_incremental(
    new_cluster: &GpsCluster,
    confirmed: &[GpsCluster],
    now: Millis,
    params: &ProximityParams,
) -> Vec<ProximityAlert> {
    let start = params.window_start(now);
    if new_cluster.t_end < start || confirmed.iter().any(|c| c.user_token == new_cluster.user_token) {
        return Vec::new();
    }
    let mut out: Vec<ProximityAlert> = confirmed
        .iter()
        .filter(|c| c.t_end >= start)
        .filter_map(|c| {
            proximity(new_cluster, c, params.dist_m, params.slack_s).map(|(d, o)| alert(new_cluster, c, d, o, now))
        })
        .collect();
    sort_alerts(&mut out);
    out
}

/// Drops raw points and clusters older than the window. Returns how many
/// records were removed.
pub fn purge_expired(
    clusters: &mut Vec<GpsCluster>,
    points: &mut Vec<GpsPoint>,
    now: Millis,
    window_days: i64,
) -> usize {
    let start = now - window_days * MS_PER_DAY;
    let before = clusters.len() + points.len();
    clusters.retain(|c| c.t_end >= start);
    points.retain(|p| p.ts >= start);
    before - clusters.len() - points.len()
}
