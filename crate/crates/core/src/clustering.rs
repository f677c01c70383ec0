//! Driving-style clustering over lane-change execution kinematics.
//!
//! Each accepted event is summarized by three numbers: the execution duration
//! and the mean absolute lateral speed and acceleration over [t_s, t_e].
//! Events are z-scored per dimension and grouped with Lloyd's algorithm
//! (k-means++ seeding, best of several restarts on the summed squared
//! distance objective). Cluster centroids, mapped back to raw units, are
//! labeled by how briskly they move laterally: the fastest is aggressive,
//! and of the rest the harder-accelerating one is cautious (the hesitant,
//! late-correcting pattern), the other general.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extract::LaneChangeEvent;
use crate::features::Standardizer;
use crate::ingest::Track;
use crate::seeds;

/// Per-event style summary: duration (s), mean |lateral acceleration|
/// (m/s²), mean |lateral speed| (m/s) over the execution interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StyleFeatures {
    pub duration: f64,
    pub lat_accel: f64,
    pub lat_speed: f64,
}

impl StyleFeatures {
    pub fn to_array(self) -> [f64; 3] {
        [self.duration, self.lat_accel, self.lat_speed]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        StyleFeatures {
            duration: a[0],
            lat_accel: a[1],
            lat_speed: a[2],
        }
    }
}

/// Style features of one event. The track must be canonical and contain
/// every frame of [t_s, t_e].
pub fn style_features(event: &LaneChangeEvent, track: &Track) -> StyleFeatures {
    let mut sum_ay = 0.0;
    let mut sum_vy = 0.0;
    let n = (event.t_e - event.t_s + 1) as f64;
    for f in event.t_s..=event.t_e {
        let p = track.point_at(f).expect("execution interval within track");
        sum_ay += p.ay.abs();
        sum_vy += p.vy.abs();
    }
    StyleFeatures {
        duration: event.duration,
        lat_accel: sum_ay / n,
        lat_speed: sum_vy / n,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DrivingStyle {
    Aggressive,
    General,
    Cautious,
}

impl std::fmt::Display for DrivingStyle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DrivingStyle::Aggressive => write!(f, "aggressive"),
            DrivingStyle::General => write!(f, "general"),
            DrivingStyle::Cautious => write!(f, "cautious"),
        }
    }
}

impl std::str::FromStr for DrivingStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aggressive" => Ok(DrivingStyle::Aggressive),
            "general" => Ok(DrivingStyle::General),
            "cautious" => Ok(DrivingStyle::Cautious),
            other => Err(Error::data(format!("unknown driving style `{other}`"))),
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lower index.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// One Lloyd run from one seeding.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansRun {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Final summed squared distance to assigned centroids.
    pub objective: f64,
    /// Objective after each assignment step; non-increasing.
    pub objective_trace: Vec<f64>,
}

/// k-means++ seeding: first centroid uniform over points, each next one
/// drawn with probability proportional to the squared distance to the
/// nearest already-chosen centroid. If every remaining point coincides with
/// a chosen centroid, the lowest-index point is taken.
fn seed_centroids(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(points[rng.gen_range(0..points.len())].clone());
    while centroids.len() < k {
        let weights: Vec<f64> = points
            .iter()
            .map(|p| {
                centroids
                    .iter()
                    .map(|c| sq_dist(p, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, w) in weights.iter().enumerate() {
                if target < *w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            0
        };
        centroids.push(points[next].clone());
    }
    centroids
}

const MAX_LLOYD_ITERS: usize = 500;

/// One seeded Lloyd run on raw (already scaled, if desired) points.
pub fn lloyd_single(points: &[Vec<f64>], k: usize, seed: u64, tol: f64) -> Result<KMeansRun> {
    if k == 0 {
        return Err(Error::config("k must be positive"));
    }
    if points.len() < k {
        return Err(Error::data(format!(
            "{} points cannot form {k} clusters",
            points.len()
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::shape(format!("{dim} dims"), "ragged points"));
    }
    let mut rng = seeds::rng_for(seed, "kmeans-seeding");
    let mut centroids = seed_centroids(points, k, &mut rng);
    let mut assignments = vec![0usize; points.len()];
    let mut trace = Vec::new();
    let mut prev_obj = f64::INFINITY;
    for _ in 0..MAX_LLOYD_ITERS {
        // Assignment step; the objective recorded here is exact for the
        // current centroids, so the trace is non-increasing across both
        // half-steps of the algorithm.
        let mut obj = 0.0;
        for (a, p) in assignments.iter_mut().zip(points) {
            *a = nearest(p, &centroids);
            obj += sq_dist(p, &centroids[*a]);
        }
        trace.push(obj);
        // Update step: empty clusters keep their centroid.
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (a, p) in assignments.iter().zip(points) {
            counts[*a] += 1;
            for (s, v) in sums[*a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for (i, (sum, count)) in sums.into_iter().zip(&counts).enumerate() {
            if *count > 0 {
                centroids[i] = sum.into_iter().map(|s| s / *count as f64).collect();
            }
        }
        let scale = prev_obj.abs().max(1e-300);
        if prev_obj.is_finite() && (prev_obj - obj) <= tol * scale {
            break;
        }
        prev_obj = obj;
    }
    // Final objective against the updated centroids.
    let mut obj = 0.0;
    for (a, p) in assignments.iter_mut().zip(points) {
        *a = nearest(p, &centroids);
        obj += sq_dist(p, &centroids[*a]);
    }
    trace.push(obj);
    Ok(KMeansRun {
        centroids,
        assignments,
        objective: obj,
        objective_trace: trace,
    })
}

/// Best of `restarts` seeded Lloyd runs (strictly lower objective wins, so
/// earlier restarts win ties).
pub fn lloyd_kmeans(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    restarts: usize,
    tol: f64,
) -> Result<KMeansRun> {
    if restarts == 0 {
        return Err(Error::config("need at least one restart"));
    }
    let mut best: Option<KMeansRun> = None;
    for r in 0..restarts {
        let run = lloyd_single(points, k, seeds::derive_seed_indexed(seed, "restart", r as u64), tol)?;
        if best.as_ref().map_or(true, |b| run.objective < b.objective) {
            best = Some(run);
        }
    }
    Ok(best.unwrap())
}

/// Label clusters from their raw-unit centroids. The centroid with the
/// highest mean |lateral speed| is aggressive; of the remaining, the higher
/// mean |lateral acceleration| is cautious, the other general. All ties go
/// to the lower cluster index. Supports k ≤ 3 (k = 1 is general; k = 2
/// splits aggressive/general).
pub fn label_clusters(raw_centroids: &[StyleFeatures]) -> Result<Vec<DrivingStyle>> {
    let k = raw_centroids.len();
    match k {
        1 => Ok(vec![DrivingStyle::General]),
        2 | 3 => {
            let mut by_speed: Vec<usize> = (0..k).collect();
            // Stable sort: equal speeds keep index order, so the lower index
            // becomes aggressive.
            by_speed.sort_by(|&a, &b| {
                raw_centroids[b]
                    .lat_speed
                    .partial_cmp(&raw_centroids[a].lat_speed)
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
            let mut labels = vec![DrivingStyle::General; k];
            labels[by_speed[0]] = DrivingStyle::Aggressive;
            if k == 3 {
                let (a, b) = (by_speed[1], by_speed[2]);
                let cautious = if raw_centroids[b].lat_accel > raw_centroids[a].lat_accel {
                    b
                } else {
                    a
                };
                labels[cautious] = DrivingStyle::Cautious;
            }
            Ok(labels)
        }
        _ => Err(Error::config(format!(
            "cannot label {k} clusters as driving styles"
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansOptions {
    pub k: usize,
    pub restarts: usize,
    pub tol: f64,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        KMeansOptions {
            k: 3,
            restarts: 10,
            tol: KMEANS_TOL,
        }
    }
}

/// Relative objective-improvement threshold that stops Lloyd iterations.
pub const KMEANS_TOL: f64 = 1e-8;

/// A fitted, labeled style-clustering model. Centroids live in standardized
/// space; `scaler` maps raw style features into it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub scaler: Standardizer,
    pub centroids: Vec<Vec<f64>>,
    pub labels: Vec<DrivingStyle>,
    pub objective: f64,
    pub seed: u64,
}

impl ClusterModel {
    /// Centroids mapped back to raw units, as style summaries.
    pub fn raw_centroids(&self) -> Vec<StyleFeatures> {
        self.centroids
            .iter()
            .map(|c| {
                let raw = self.scaler.inverse_row(c);
                StyleFeatures::from_array([raw[0], raw[1], raw[2]])
            })
            .collect()
    }
}

/// Standardize, cluster, and label style features.
pub fn kmeans_fit(
    points: &[StyleFeatures],
    opts: &KMeansOptions,
    seed: u64,
) -> Result<(ClusterModel, KMeansRun)> {
    if opts.k == 0 || opts.k > 3 {
        return Err(Error::config(format!(
            "style clustering supports 1..=3 clusters, got {}",
            opts.k
        )));
    }
    let rows: Vec<Vec<f64>> = points.iter().map(|p| p.to_array().to_vec()).collect();
    let scaler = Standardizer::fit(&rows)?;
    let scaled: Vec<Vec<f64>> = rows.iter().map(|r| scaler.transform_row(r)).collect();
    if !(opts.tol.is_finite() && opts.tol >= 0.0) {
        return Err(Error::config(format!(
            "k-means tolerance {} must be finite and non-negative",
            opts.tol
        )));
    }
    let run = lloyd_kmeans(&scaled, opts.k, seed, opts.restarts, opts.tol)?;
    let model = ClusterModel {
        k: opts.k,
        centroids: run.centroids.clone(),
        labels: Vec::new(),
        objective: run.objective,
        seed,
        scaler,
    };
    let labels = label_clusters(&model.raw_centroids())?;
    let model = ClusterModel { labels, ..model };
    Ok((model, run))
}

/// Style of a new event under a fitted model.
pub fn assign_style(model: &ClusterModel, point: &StyleFeatures) -> DrivingStyle {
    let scaled = model.scaler.transform_row(&point.to_array());
    model.labels[nearest(&scaled, &model.centroids)]
}

/// One row of the per-style summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleReportRow {
    pub group: String,
    pub n: usize,
    pub duration_mean: f64,
    pub duration_std: f64,
    pub lat_accel_mean: f64,
    pub lat_accel_std: f64,
    pub lat_speed_mean: f64,
    pub lat_speed_std: f64,
}

fn summarize(group: &str, members: &[&StyleFeatures]) -> StyleReportRow {
    let n = members.len();
    let mut mean = [0.0f64; 3];
    for m in members {
        for (acc, v) in mean.iter_mut().zip(m.to_array()) {
            *acc += v;
        }
    }
    if n > 0 {
        for acc in &mut mean {
            *acc /= n as f64;
        }
    }
    let mut std = [0.0f64; 3];
    if n > 0 {
        for m in members {
            for ((acc, v), mu) in std.iter_mut().zip(m.to_array()).zip(mean) {
                let d = v - mu;
                *acc += d * d;
            }
        }
        for acc in &mut std {
            *acc = (*acc / n as f64).sqrt();
        }
    }
    StyleReportRow {
        group: group.to_string(),
        n,
        duration_mean: mean[0],
        duration_std: std[0],
        lat_accel_mean: mean[1],
        lat_accel_std: std[1],
        lat_speed_mean: mean[2],
        lat_speed_std: std[2],
    }
}

/// Per-style mean/std table in fixed row order (aggressive, general,
/// cautious, overall).
pub fn style_report(points: &[StyleFeatures], styles: &[DrivingStyle]) -> Vec<StyleReportRow> {
    assert_eq!(points.len(), styles.len());
    let mut rows = Vec::with_capacity(4);
    for style in [
        DrivingStyle::Aggressive,
        DrivingStyle::General,
        DrivingStyle::Cautious,
    ] {
        let members: Vec<&StyleFeatures> = points
            .iter()
            .zip(styles)
            .filter(|(_, s)| **s == style)
            .map(|(p, _)| p)
            .collect();
        rows.push(summarize(&style.to_string(), &members));
    }
    rows.push(summarize("overall", &points.iter().collect::<Vec<_>>()));
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::LcDirection;
    use crate::ingest::{Carriageway, NeighborIds, Orientation, TrackPoint};

    fn event(t_s: u32, t_e: u32) -> LaneChangeEvent {
        LaneChangeEvent {
            track_id: 1,
            segment: 0,
            t_lc: t_s,
            t_s,
            t_e,
            duration: (t_e - t_s) as f64 / 25.0,
            direction: LcDirection::Left,
            source_lane: 6,
            target_lane: 5,
        }
    }

    fn track_with_lateral(vy: impl Fn(u32) -> f64, ay: impl Fn(u32) -> f64, n: u32) -> Track {
        Track {
            track_id: 1,
            segment: 0,
            orientation: Orientation::Canonical(Carriageway::Lower),
            points: (0..n)
                .map(|f| TrackPoint {
                    frame: f,
                    x: f as f64,
                    y: -14.0,
                    width: 4.5,
                    height: 2.0,
                    vx: 30.0,
                    vy: vy(f),
                    ax: 0.0,
                    ay: ay(f),
                    lane_id: 5,
                    neighbors: NeighborIds::default(),
                })
                .collect(),
        }
    }

    #[test]
    fn style_features_take_absolute_means_over_execution() {
        let t = track_with_lateral(
            |f| if f < 2 { 1.0 } else { -3.0 },
            |f| if f % 2 == 0 { 0.5 } else { -0.5 },
            10,
        );
        let s = style_features(&event(0, 3), &t);
        // Frames 0..=3: |vy| = 1, 1, 3, 3; |ay| = 0.5 each.
        assert_eq!(s.lat_speed, 2.0);
        assert_eq!(s.lat_accel, 0.5);
        assert_eq!(s.duration, 3.0 / 25.0);
    }

    #[test]
    fn style_features_match_trigonometric_closed_form() {
        // Lateral speed A·sin(πk/N), acceleration B·cos(πk/N) over [0, N]:
        // the sampled means have closed forms via the Dirichlet kernel sums
        //   Σ sin(kd) = sin(nd/2)·sin((n−1)d/2)/sin(d/2),
        //   Σ cos(kd) = sin(nd/2)·cos((n−1)d/2)/sin(d/2).
        let n_frames = 50u32;
        let (a, b) = (1.7, 0.9);
        let d = std::f64::consts::PI / n_frames as f64;
        let t = track_with_lateral(
            move |f| a * (d * f as f64).sin(),
            move |f| b * (d * f as f64).cos(),
            n_frames + 1,
        );
        let s = style_features(&event(0, n_frames), &t);

        let count = (n_frames + 1) as f64;
        let sin_sum = |n: f64| (n * d / 2.0).sin() * ((n - 1.0) * d / 2.0).sin() / (d / 2.0).sin();
        // sin(πk/N) ≥ 0 on [0, N], so |·| drops out.
        let mean_speed = a * sin_sum(count) / count;
        assert!((s.lat_speed - mean_speed).abs() < 1e-9, "{}", s.lat_speed);

        // |cos| mirrors around k = N/2 (cos there is 0 for even N): twice the
        // first half's plain cosine sum.
        let half = (n_frames / 2) as f64;
        let cos_sum = (half * d / 2.0).sin() * ((half - 1.0) * d / 2.0).cos() / (d / 2.0).sin();
        let mean_accel = b * 2.0 * cos_sum / count;
        assert!((s.lat_accel - mean_accel).abs() < 1e-9, "{}", s.lat_accel);
    }

    fn blob(center: [f64; 3], n: usize, spread: f64, seed: u64) -> Vec<StyleFeatures> {
        let mut rng = seeds::rng_for(seed, "blob");
        (0..n)
            .map(|_| {
                StyleFeatures::from_array([
                    center[0] + spread * (rng.gen::<f64>() - 0.5),
                    center[1] + spread * (rng.gen::<f64>() - 0.5),
                    center[2] + spread * (rng.gen::<f64>() - 0.5),
                ])
            })
            .collect()
    }

    #[test]
    fn separated_blobs_cluster_cleanly_and_deterministically() {
        let mut points = blob([0.9, 0.17, 0.30], 40, 0.05, 1);
        points.extend(blob([1.7, 0.05, 0.07], 40, 0.05, 2));
        points.extend(blob([2.8, 0.16, 0.10], 40, 0.05, 3));
        let (model, run) = kmeans_fit(&points, &KMeansOptions::default(), 42).unwrap();
        // Memberships agree within blobs.
        for chunk in run.assignments.chunks(40) {
            assert!(chunk.iter().all(|a| a == &chunk[0]));
        }
        // Labeling: the short-duration fast-lateral blob is aggressive, the
        // slow high-acceleration one cautious.
        let c0 = run.assignments[0];
        let c1 = run.assignments[40];
        let c2 = run.assignments[80];
        assert_eq!(model.labels[c0], DrivingStyle::Aggressive);
        assert_eq!(model.labels[c1], DrivingStyle::General);
        assert_eq!(model.labels[c2], DrivingStyle::Cautious);
        // Bitwise determinism across refits.
        let (model2, run2) = kmeans_fit(&points, &KMeansOptions::default(), 42).unwrap();
        assert_eq!(model, model2);
        assert_eq!(run.centroids, run2.centroids);
        // New points go to the nearest labeled centroid.
        let probe = StyleFeatures::from_array([0.95, 0.18, 0.28]);
        assert_eq!(assign_style(&model, &probe), DrivingStyle::Aggressive);
    }

    #[test]
    fn objective_trace_never_increases() {
        let mut points = blob([0.0, 0.0, 0.0], 30, 2.0, 7);
        points.extend(blob([1.0, 1.0, 1.0], 30, 2.0, 8));
        for seed in 0..20 {
            let run = lloyd_single(
                &points.iter().map(|p| p.to_array().to_vec()).collect::<Vec<_>>(),
                3,
                seed,
                KMEANS_TOL,
            )
            .unwrap();
            for w in run.objective_trace.windows(2) {
                assert!(
                    w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0),
                    "objective rose: {} -> {}",
                    w[0],
                    w[1]
                );
            }
        }
    }

    #[test]
    fn degenerate_identical_points_stay_finite() {
        let points = vec![vec![5.0, 5.0]; 4];
        let run = lloyd_kmeans(&points, 2, 0, 3, KMEANS_TOL).unwrap();
        assert_eq!(run.objective, 0.0);
        assert!(run.centroids.iter().flatten().all(|v| v.is_finite()));
        // Ties in assignment go to the lower cluster index.
        assert!(run.assignments.iter().all(|a| *a == 0));
    }

    #[test]
    fn labeling_follows_speed_then_acceleration() {
        let centroids = vec![
            StyleFeatures::from_array([1.235, 0.052, 0.072]),
            StyleFeatures::from_array([1.819, 0.174, 0.305]),
            StyleFeatures::from_array([1.205, 0.168, 0.105]),
        ];
        assert_eq!(
            label_clusters(&centroids).unwrap(),
            vec![
                DrivingStyle::General,
                DrivingStyle::Aggressive,
                DrivingStyle::Cautious
            ]
        );
        // k = 1 and k = 2.
        assert_eq!(
            label_clusters(&centroids[..1].to_vec()).unwrap(),
            vec![DrivingStyle::General]
        );
        assert_eq!(
            label_clusters(&centroids[..2].to_vec()).unwrap(),
            vec![DrivingStyle::General, DrivingStyle::Aggressive]
        );
        assert!(label_clusters(&vec![centroids[0]; 4]).is_err());
        // Equal lateral speeds: lower index becomes aggressive.
        let tied = vec![
            StyleFeatures::from_array([1.0, 0.1, 0.3]),
            StyleFeatures::from_array([2.0, 0.2, 0.3]),
        ];
        assert_eq!(
            label_clusters(&tied).unwrap(),
            vec![DrivingStyle::Aggressive, DrivingStyle::General]
        );
    }

    #[test]
    fn report_has_fixed_row_order() {
        let points = vec![
            StyleFeatures::from_array([1.0, 0.2, 0.3]),
            StyleFeatures::from_array([2.0, 0.1, 0.1]),
            StyleFeatures::from_array([3.0, 0.1, 0.1]),
        ];
        let styles = vec![
            DrivingStyle::Aggressive,
            DrivingStyle::General,
            DrivingStyle::General,
        ];
        let rows = style_report(&points, &styles);
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].group, "aggressive");
        assert_eq!(rows[0].n, 1);
        assert_eq!(rows[1].group, "general");
        assert_eq!(rows[1].duration_mean, 2.5);
        assert_eq!(rows[1].duration_std, 0.5);
        assert_eq!(rows[2].group, "cautious");
        assert_eq!(rows[2].n, 0);
        assert_eq!(rows[3].group, "overall");
        assert_eq!(rows[3].n, 3);
        assert_eq!(rows[3].duration_mean, 2.0);
    }
}
