//! Per-frame interaction features and their window-level forms.
//!
//! Sixteen variables describe the subject vehicle (SV) against its closest
//! lead vehicle (CLV, same lane) and the target-lane lead/rear vehicles
//! (TLV/TFV): three bumper-to-bumper clearances, three speed differences,
//! five longitudinal speeds/accelerations per role, and the SV's lateral
//! speed and acceleration. Axis naming follows the source convention where Y
//! is the longitudinal (travel) axis and X the lateral one, which is the
//! transpose of the canonical track frame; the mapping happens here and only
//! here.
//!
//! A window yields either an aggregate form (per-feature mean and population
//! standard deviation, 32 values) or a sequence form (the per-frame matrix
//! resampled onto a fixed 25 Hz, 50-row grid).

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extract::{NeighborGroup, ObservationWindow};
use crate::ingest::{Track, TrackPoint, TrackStore};

pub const FRAME_FEATURE_COUNT: usize = 16;

/// Column names, in the fixed export order.
pub const FRAME_FEATURE_NAMES: [&str; FRAME_FEATURE_COUNT] = [
    "dy_clv_sv",
    "dy_tlv_sv",
    "dy_sv_tfv",
    "dv_clv_sv",
    "dv_tlv_sv",
    "dv_sv_tfv",
    "vy_sv",
    "vy_clv",
    "vy_tlv",
    "vy_tfv",
    "vx_sv",
    "ay_sv",
    "ay_clv",
    "ay_tlv",
    "ay_tfv",
    "ax_sv",
];

/// One frame's feature vector. `dy_*` are clearances (m), `dv_*` speed
/// differences named minuend-subtrahend (m/s), `vy`/`ay` longitudinal
/// speed/acceleration, `vx`/`ax` the SV's lateral speed/acceleration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameFeatures {
    pub dy_clv_sv: f64,
    pub dy_tlv_sv: f64,
    pub dy_sv_tfv: f64,
    pub dv_clv_sv: f64,
    pub dv_tlv_sv: f64,
    pub dv_sv_tfv: f64,
    pub vy_sv: f64,
    pub vy_clv: f64,
    pub vy_tlv: f64,
    pub vy_tfv: f64,
    pub vx_sv: f64,
    pub ay_sv: f64,
    pub ay_clv: f64,
    pub ay_tlv: f64,
    pub ay_tfv: f64,
    pub ax_sv: f64,
}

impl FrameFeatures {
    pub fn to_array(self) -> [f64; FRAME_FEATURE_COUNT] {
        [
            self.dy_clv_sv,
            self.dy_tlv_sv,
            self.dy_sv_tfv,
            self.dv_clv_sv,
            self.dv_tlv_sv,
            self.dv_sv_tfv,
            self.vy_sv,
            self.vy_clv,
            self.vy_tlv,
            self.vy_tfv,
            self.vx_sv,
            self.ay_sv,
            self.ay_clv,
            self.ay_tlv,
            self.ay_tfv,
            self.ax_sv,
        ]
    }

    pub fn from_array(a: [f64; FRAME_FEATURE_COUNT]) -> Self {
        FrameFeatures {
            dy_clv_sv: a[0],
            dy_tlv_sv: a[1],
            dy_sv_tfv: a[2],
            dv_clv_sv: a[3],
            dv_tlv_sv: a[4],
            dv_sv_tfv: a[5],
            vy_sv: a[6],
            vy_clv: a[7],
            vy_tlv: a[8],
            vy_tfv: a[9],
            vx_sv: a[10],
            ay_sv: a[11],
            ay_clv: a[12],
            ay_tlv: a[13],
            ay_tfv: a[14],
            ax_sv: a[15],
        }
    }
}

/// Bumper-to-bumper gap between a leader and a follower on the canonical
/// travel axis (points are rear corners). Negative gaps (overlapping bodies)
/// clamp to zero; the caller counts them.
fn clearance(leader: &TrackPoint, follower: &TrackPoint, clamped: &mut u64) -> f64 {
    let gap = leader.x - (follower.x + follower.width);
    if gap < 0.0 {
        *clamped += 1;
        0.0
    } else {
        gap
    }
}

/// Compute the per-frame features of a window. `group` must come from
/// [`crate::extract::resolve_neighbors`] on the same window, and `store` must
/// hold the same canonical tracks it was resolved against.
///
/// Returns the feature rows and the number of clamped (negative) clearances.
pub fn frame_features(
    window: &ObservationWindow,
    track: &Track,
    group: &NeighborGroup,
    store: &TrackStore,
) -> Result<(Vec<FrameFeatures>, u64)> {
    if group.frames.len() != window.len() {
        return Err(Error::shape(
            format!("{} neighbor frames", window.len()),
            format!("{}", group.frames.len()),
        ));
    }
    let mut rows = Vec::with_capacity(window.len());
    let mut clamped = 0u64;
    for (i, f) in window.frames().enumerate() {
        let sv = track
            .point_at(f)
            .ok_or_else(|| Error::data(format!("window frame {f} outside track")))?;
        let refs = &group.frames[i];
        let fetch = |id: u64, role: &str| {
            store.point_of(id, f).ok_or_else(|| {
                Error::data(format!("{role} {id} has no point at frame {f}"))
            })
        };
        let clv = fetch(refs.clv, "clv")?;
        let tlv = fetch(refs.tlv, "tlv")?;
        let tfv = fetch(refs.tfv, "tfv")?;
        rows.push(FrameFeatures {
            dy_clv_sv: clearance(clv, sv, &mut clamped),
            dy_tlv_sv: clearance(tlv, sv, &mut clamped),
            dy_sv_tfv: clearance(sv, tfv, &mut clamped),
            dv_clv_sv: clv.vx - sv.vx,
            dv_tlv_sv: tlv.vx - sv.vx,
            dv_sv_tfv: sv.vx - tfv.vx,
            vy_sv: sv.vx,
            vy_clv: clv.vx,
            vy_tlv: tlv.vx,
            vy_tfv: tfv.vx,
            vx_sv: sv.vy,
            ay_sv: sv.ax,
            ay_clv: clv.ax,
            ay_tlv: tlv.ax,
            ay_tfv: tfv.ax,
            ax_sv: sv.ay,
        });
    }
    Ok((rows, clamped))
}

/// Window-level aggregate: per-feature mean and population standard
/// deviation, exported as 32 columns (16 means, then 16 stds).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateFeatures {
    pub mean: [f64; FRAME_FEATURE_COUNT],
    pub std: [f64; FRAME_FEATURE_COUNT],
}

impl AggregateFeatures {
    pub fn to_vec(&self) -> Vec<f64> {
        self.mean.iter().chain(self.std.iter()).copied().collect()
    }

    pub fn column_names() -> Vec<String> {
        let means = FRAME_FEATURE_NAMES.iter().map(|n| format!("mean_{n}"));
        let stds = FRAME_FEATURE_NAMES.iter().map(|n| format!("std_{n}"));
        means.chain(stds).collect()
    }
}

pub fn aggregate_features(frames: &[FrameFeatures]) -> Result<AggregateFeatures> {
    if frames.is_empty() {
        return Err(Error::data("cannot aggregate an empty window"));
    }
    let n = frames.len() as f64;
    let mut mean = [0.0; FRAME_FEATURE_COUNT];
    for f in frames {
        for (m, v) in mean.iter_mut().zip(f.to_array()) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = [0.0; FRAME_FEATURE_COUNT];
    for f in frames {
        for ((s, v), m) in var.iter_mut().zip(f.to_array()).zip(mean) {
            let d = v - m;
            *s += d * d;
        }
    }
    let mut std = [0.0; FRAME_FEATURE_COUNT];
    for (s, v) in std.iter_mut().zip(var) {
        *s = (v / n).sqrt();
    }
    Ok(AggregateFeatures { mean, std })
}

/// Resample a window's frame rows onto the fixed sequence grid: `target_len`
/// rows covering 2 seconds (25 Hz for the default 50). Input at the target
/// rate passes through bit-exactly; other rates interpolate linearly in time.
/// Inputs covering less than the 2-second span are rejected.
pub fn sequence_sample(
    frames: &[FrameFeatures],
    input_rate: f64,
    target_len: usize,
) -> Result<Array2<f64>> {
    if target_len < 2 {
        return Err(Error::config(format!(
            "sequence length {target_len} too short"
        )));
    }
    if !(input_rate.is_finite() && input_rate > 0.0) {
        return Err(Error::config(format!("invalid input rate {input_rate}")));
    }
    let target_rate = target_len as f64 / 2.0;
    let max_pos = (target_len - 1) as f64 * input_rate / target_rate;
    if frames.is_empty() || (frames.len() - 1) as f64 + 1e-9 < max_pos {
        return Err(Error::data(format!(
            "window of {} frames at {input_rate} Hz is shorter than 2 s",
            frames.len()
        )));
    }
    let mut out = Array2::zeros((target_len, FRAME_FEATURE_COUNT));
    for j in 0..target_len {
        let pos = j as f64 * input_rate / target_rate;
        let k = pos.round();
        let row = if (pos - k).abs() < 1e-9 {
            frames[k as usize].to_array()
        } else {
            let lo = pos.floor() as usize;
            let w = pos - lo as f64;
            let a = frames[lo].to_array();
            let b = frames[lo + 1].to_array();
            std::array::from_fn(|c| a[c] * (1.0 - w) + b[c] * w)
        };
        for (c, v) in row.into_iter().enumerate() {
            out[(j, c)] = v;
        }
    }
    Ok(out)
}

/// Per-dimension z-scoring. Fitted with the population standard deviation;
/// zero-variance dimensions pass through unchanged (identity scaling).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Standardizer> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::data("cannot fit a standardizer on no rows"));
        }
        let d = rows[0].len();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(Error::shape(format!("{d} columns"), format!("{} in row {i}", r.len())));
            }
        }
        let mut means = vec![0.0; d];
        for r in rows {
            for (m, v) in means.iter_mut().zip(r) {
                *m += v;
            }
        }
        for m in &mut means {
            *m /= n as f64;
        }
        let mut stds = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in stds.iter_mut().zip(r).zip(&means) {
                let dlt = v - m;
                *s += dlt * dlt;
            }
        }
        for (j, s) in stds.iter_mut().enumerate() {
            *s = (*s / n as f64).sqrt();
            if *s < 1e-12 {
                // Constant dimension: identity transform.
                means[j] = 0.0;
                *s = 1.0;
            }
        }
        Ok(Standardizer { means, stds })
    }

    pub fn dims(&self) -> usize {
        self.means.len()
    }

    pub fn transform_row(&self, row: &[f64]) -> Vec<f64> {
        debug_assert_eq!(row.len(), self.dims());
        row.iter()
            .zip(&self.means)
            .zip(&self.stds)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn inverse_row(&self, row: &[f64]) -> Vec<f64> {
        debug_assert_eq!(row.len(), self.dims());
        row.iter()
            .zip(&self.means)
            .zip(&self.stds)
            .map(|((v, m), s)| v * s + m)
            .collect()
    }

    /// Standardize a (time, channel) sequence with per-channel parameters.
    pub fn transform_sequence(&self, seq: &Array2<f64>) -> Result<Array2<f64>> {
        if seq.ncols() != self.dims() {
            return Err(Error::shape(
                format!("{} channels", self.dims()),
                format!("{}", seq.ncols()),
            ));
        }
        let mut out = seq.clone();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.means[j]) / self.stds[j];
            }
        }
        Ok(out)
    }

    /// Fit per-channel parameters across every row of every sequence.
    pub fn fit_sequences(seqs: &[Array2<f64>]) -> Result<Standardizer> {
        let rows: Vec<Vec<f64>> = seqs
            .iter()
            .flat_map(|s| s.rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>())
            .collect();
        Standardizer::fit(&rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::{LcDirection, NeighborRefs, WindowLabel};
    use crate::ingest::{Carriageway, NeighborIds, Orientation};

    fn point(frame: u32, x: f64, width: f64, vx: f64, vy: f64, ax: f64, ay: f64) -> TrackPoint {
        TrackPoint {
            frame,
            x,
            y: -14.0,
            width,
            height: 2.0,
            vx,
            vy,
            ax,
            ay,
            lane_id: 5,
            neighbors: NeighborIds::default(),
        }
    }

    fn track_of(id: u64, points: Vec<TrackPoint>) -> Track {
        Track {
            track_id: id,
            segment: 0,
            orientation: Orientation::Canonical(Carriageway::Lower),
            points,
        }
    }

    /// Gap between body intervals [a0, a1] and [b0, b1] on a line; the
    /// independent oracle for the bumper-to-bumper clearance.
    fn interval_gap(leader: (f64, f64), follower: (f64, f64)) -> f64 {
        (leader.0 - follower.1).max(0.0)
    }

    fn one_frame_window() -> ObservationWindow {
        ObservationWindow {
            track_id: 1,
            segment: 0,
            label: WindowLabel::LaneChange,
            start_frame: 0,
            end_frame: 1,
            direction: LcDirection::Left,
            lane: 5,
            target_lane: 6,
        }
    }

    #[test]
    fn clearances_are_bumper_to_bumper() {
        // SV at x = 0 (length 5), CLV at x = 20 (length 4): bodies span
        // [0, 5] and [20, 24], so the gap is 15 m.
        let sv = track_of(1, vec![point(0, 0.0, 5.0, 30.0, 0.5, 0.2, 0.05)]);
        let clv = track_of(2, vec![point(0, 20.0, 4.0, 25.0, 0.0, -0.3, 0.0)]);
        let tlv = track_of(3, vec![point(0, 31.0, 4.0, 29.0, 0.0, 0.1, 0.0)]);
        let tfv = track_of(4, vec![point(0, -12.0, 6.0, 31.0, 0.0, 0.4, 0.0)]);
        let store = TrackStore::new(vec![clv, tlv, tfv]);
        let group = NeighborGroup {
            frames: vec![NeighborRefs {
                clv: 2,
                tlv: 3,
                tfv: 4,
            }],
        };
        let (rows, clamped) = frame_features(&one_frame_window(), &sv, &group, &store).unwrap();
        assert_eq!(clamped, 0);
        let f = rows[0];
        assert_eq!(f.dy_clv_sv, interval_gap((20.0, 24.0), (0.0, 5.0)));
        assert_eq!(f.dy_clv_sv, 15.0);
        assert_eq!(f.dy_tlv_sv, interval_gap((31.0, 35.0), (0.0, 5.0)));
        // SV leads the TFV: SV body [0, 5], TFV body [−12, −6].
        assert_eq!(f.dy_sv_tfv, interval_gap((0.0, 5.0), (-12.0, -6.0)));
        assert_eq!(f.dy_sv_tfv, 6.0);
        // Speed differences are minuend − subtrahend by name.
        assert_eq!(f.dv_clv_sv, -5.0);
        assert_eq!(f.dv_tlv_sv, -1.0);
        assert_eq!(f.dv_sv_tfv, -1.0);
        // Longitudinal speed lands in vy_*, lateral in vx_sv.
        assert_eq!(f.vy_sv, 30.0);
        assert_eq!(f.vy_clv, 25.0);
        assert_eq!(f.vx_sv, 0.5);
        assert_eq!(f.ay_sv, 0.2);
        assert_eq!(f.ax_sv, 0.05);
    }

    #[test]
    fn negative_clearance_clamps_and_counts() {
        // TFV overlaps the SV from behind: bodies [0, 5] and [−2, 4].
        let sv = track_of(1, vec![point(0, 0.0, 5.0, 30.0, 0.0, 0.0, 0.0)]);
        let clv = track_of(2, vec![point(0, 20.0, 4.0, 25.0, 0.0, 0.0, 0.0)]);
        let tlv = track_of(3, vec![point(0, 31.0, 4.0, 29.0, 0.0, 0.0, 0.0)]);
        let tfv = track_of(4, vec![point(0, -2.0, 6.0, 31.0, 0.0, 0.0, 0.0)]);
        let store = TrackStore::new(vec![clv, tlv, tfv]);
        let group = NeighborGroup {
            frames: vec![NeighborRefs {
                clv: 2,
                tlv: 3,
                tfv: 4,
            }],
        };
        let (rows, clamped) = frame_features(&one_frame_window(), &sv, &group, &store).unwrap();
        assert_eq!(rows[0].dy_sv_tfv, 0.0);
        assert_eq!(clamped, 1);
    }

    #[test]
    fn aggregate_mean_and_population_std() {
        let mk = |dy: f64| {
            let mut a = [0.0; FRAME_FEATURE_COUNT];
            a[0] = dy;
            a[6] = 30.0;
            FrameFeatures::from_array(a)
        };
        let agg = aggregate_features(&[mk(1.0), mk(2.0), mk(3.0)]).unwrap();
        assert_eq!(agg.mean[0], 2.0);
        assert!((agg.std[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        // Constant feature: zero spread.
        assert_eq!(agg.mean[6], 30.0);
        assert_eq!(agg.std[6], 0.0);
        assert!(aggregate_features(&[]).is_err());
        assert_eq!(AggregateFeatures::column_names().len(), 32);
        assert_eq!(AggregateFeatures::column_names()[0], "mean_dy_clv_sv");
        assert_eq!(AggregateFeatures::column_names()[16], "std_dy_clv_sv");
    }

    fn ramp_frames(n: usize) -> Vec<FrameFeatures> {
        (0..n)
            .map(|i| {
                let mut a = [0.0; FRAME_FEATURE_COUNT];
                a[0] = i as f64;
                a[15] = -(i as f64) * 0.5;
                FrameFeatures::from_array(a)
            })
            .collect()
    }

    #[test]
    fn sequence_identity_at_target_rate() {
        let frames = ramp_frames(50);
        let seq = sequence_sample(&frames, 25.0, 50).unwrap();
        assert_eq!(seq.dim(), (50, 16));
        for (i, f) in frames.iter().enumerate() {
            assert_eq!(seq[(i, 0)].to_bits(), f.dy_clv_sv.to_bits());
            assert_eq!(seq[(i, 15)].to_bits(), f.ax_sv.to_bits());
        }
    }

    #[test]
    fn sequence_resamples_by_time() {
        // 100 frames at 50 Hz → rows are the even input indices.
        let frames = ramp_frames(100);
        let seq = sequence_sample(&frames, 50.0, 50).unwrap();
        assert_eq!(seq[(0, 0)], 0.0);
        assert_eq!(seq[(1, 0)], 2.0);
        assert_eq!(seq[(49, 0)], 98.0);
        // Fractional positions interpolate: 40 Hz input, position 1 maps to
        // input time index 1.6.
        let frames40 = ramp_frames(80);
        let seq40 = sequence_sample(&frames40, 40.0, 50).unwrap();
        assert!((seq40[(1, 0)] - 1.6).abs() < 1e-12);
    }

    #[test]
    fn sequence_rejects_short_windows() {
        let err = sequence_sample(&ramp_frames(30), 25.0, 50).unwrap_err();
        assert!(err.to_string().contains("shorter than 2 s"), "{err}");
    }

    #[test]
    fn standardizer_passes_constant_columns_through() {
        let rows = vec![vec![1.0, 5.0], vec![3.0, 5.0], vec![5.0, 5.0]];
        let s = Standardizer::fit(&rows).unwrap();
        let t = s.transform_row(&rows[0]);
        // Column 0: mean 3, population std sqrt(8/3).
        assert!((t[0] - (1.0 - 3.0) / (8.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(t[1], 5.0);
        let back = s.inverse_row(&t);
        assert!((back[0] - 1.0).abs() < 1e-12);
        assert_eq!(back[1], 5.0);
    }
}
