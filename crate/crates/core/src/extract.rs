//! Lane-change event detection and observation-window extraction.
//!
//! An event is anchored at the lane-id transition frame `t_lc` (the last
//! frame on the old lane). Its execution interval [t_s, t_e] is recovered
//! geometrically in the canonical frame from the crossed marking B:
//!
//! * t_s is the last frame at which the body's leading edge (the edge facing
//!   the target lane) has not yet passed B;
//! * t_e is the first frame at which the trailing edge has strictly passed B.
//!
//! The source data's lane id tracks one specific body edge, so depending on
//! whether the id transition is toward a lower or higher lane number, `t_lc`
//! itself coincides with t_s or with t_e − 1 and only the other bound needs
//! scanning. Resolving both bounds from canonical geometry makes the two
//! cases one rule and keeps durations exactly invariant under mirroring a
//! scenario onto the opposite carriageway.
//!
//! Around each accepted event two 2-second windows are cut: a preparation
//! window [t_s − 2s, t_s) and a lane-keeping window [t_s − 4s, t_s − 2s),
//! both required to sit on one constant lane and clear of every event's
//! execution interval. A window qualifies only if the closest lead vehicle
//! (same lane) and the target-lane lead/rear vehicles exist at every frame.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ingest::{Orientation, RecordingMeta, Track, TrackStore};

/// Direction of a lane change in the driver frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LcDirection {
    Left,
    Right,
}

impl LcDirection {
    pub fn is_left(self) -> bool {
        matches!(self, LcDirection::Left)
    }
}

impl fmt::Display for LcDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LcDirection::Left => write!(f, "left"),
            LcDirection::Right => write!(f, "right"),
        }
    }
}

/// A lane-id switch between consecutive frames. `t_lc` is the last frame on
/// the old lane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LaneTransition {
    pub t_lc: u32,
    pub from_lane: u32,
    pub to_lane: u32,
    pub direction: LcDirection,
}

/// An accepted lane-change event with its execution interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneChangeEvent {
    pub track_id: u64,
    pub segment: u32,
    pub t_lc: u32,
    /// First frame of the execution interval (leading edge still on the
    /// source side of the crossed marking).
    pub t_s: u32,
    /// Last frame of the execution interval plus one frame step: the first
    /// frame with the trailing edge strictly past the marking.
    pub t_e: u32,
    /// (t_e − t_s) / frame_rate, seconds.
    pub duration: f64,
    pub direction: LcDirection,
    pub source_lane: u32,
    pub target_lane: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WindowLabel {
    LaneChange,
    LaneKeep,
}

impl fmt::Display for WindowLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WindowLabel::LaneChange => write!(f, "lane_change"),
            WindowLabel::LaneKeep => write!(f, "lane_keep"),
        }
    }
}

/// A 2-second observation window, frames [start_frame, end_frame).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationWindow {
    pub track_id: u64,
    pub segment: u32,
    pub label: WindowLabel,
    pub start_frame: u32,
    pub end_frame: u32,
    /// Side the paired event changes toward; target-lane neighbors are
    /// resolved on this side for both window labels.
    pub direction: LcDirection,
    pub lane: u32,
    pub target_lane: u32,
}

impl ObservationWindow {
    pub fn frames(&self) -> std::ops::Range<u32> {
        self.start_frame..self.end_frame
    }

    pub fn len(&self) -> usize {
        (self.end_frame - self.start_frame) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.start_frame == self.end_frame
    }
}

/// Why an event or window was rejected. Rendered into drop-statistics keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum DropReason {
    /// Trailing edge never passes the marking before the track ends.
    TruncatedTail,
    /// Leading edge was already past the marking at the first track frame.
    TruncatedStart,
    /// Window would begin before the track's first frame.
    ShortHistory,
    /// Lane id varies inside the window.
    LaneNotConstant,
    /// Window intersects some event's execution interval.
    OverlapsEvent,
    /// A required surrounding vehicle is absent at some frame.
    MissingNeighbor(NeighborRole),
    /// A surrounding vehicle is present but not on the expected lane.
    NeighborLaneMismatch(NeighborRole),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum NeighborRole {
    /// Closest lead vehicle, same lane.
    Clv,
    /// Target-lane lead vehicle.
    Tlv,
    /// Target-lane rear vehicle.
    Tfv,
}

impl fmt::Display for NeighborRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NeighborRole::Clv => write!(f, "clv"),
            NeighborRole::Tlv => write!(f, "tlv"),
            NeighborRole::Tfv => write!(f, "tfv"),
        }
    }
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DropReason::TruncatedTail => write!(f, "truncated_tail"),
            DropReason::TruncatedStart => write!(f, "truncated_start"),
            DropReason::ShortHistory => write!(f, "short_history"),
            DropReason::LaneNotConstant => write!(f, "lane_not_constant"),
            DropReason::OverlapsEvent => write!(f, "overlaps_event"),
            DropReason::MissingNeighbor(r) => write!(f, "missing_neighbor_{r}"),
            DropReason::NeighborLaneMismatch(r) => write!(f, "neighbor_lane_mismatch_{r}"),
        }
    }
}

/// Surrounding-vehicle ids for one window frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborRefs {
    pub clv: u64,
    pub tlv: u64,
    pub tfv: u64,
}

/// Per-frame neighbor ids across a window; parallel to the window's frames.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborGroup {
    pub frames: Vec<NeighborRefs>,
}

/// Observation-window length in frames (2 seconds).
pub fn window_len(frame_rate: f64) -> u32 {
    (2.0 * frame_rate).round() as u32
}

/// Find all lane-id transitions of a track. Works on raw or canonical tracks
/// (lane ids are orientation-independent); `meta` supplies the band geometry
/// that orients each transition.
pub fn detect_lane_transitions(track: &Track, meta: &RecordingMeta) -> Vec<LaneTransition> {
    let mut out = Vec::new();
    for pair in track.points.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if a.lane_id == b.lane_id {
            continue;
        }
        let (Some(from_c), Some(to_c)) = (
            meta.lane_center_canonical(a.lane_id),
            meta.lane_center_canonical(b.lane_id),
        ) else {
            continue;
        };
        let direction = if to_c > from_c {
            LcDirection::Left
        } else {
            LcDirection::Right
        };
        out.push(LaneTransition {
            t_lc: a.frame,
            from_lane: a.lane_id,
            to_lane: b.lane_id,
            direction,
        });
    }
    out
}

/// Resolve a transition into an event by locating the leading- and
/// trailing-edge marking crossings. The track must be canonical.
pub fn compute_lc_bounds(
    track: &Track,
    transition: &LaneTransition,
    meta: &RecordingMeta,
) -> Result<LaneChangeEvent, DropReason> {
    assert!(
        matches!(track.orientation, Orientation::Canonical(_)),
        "compute_lc_bounds requires a canonical track"
    );
    let boundary = meta
        .boundary_between(transition.from_lane, transition.to_lane)
        .expect("transition lanes share a carriageway");
    let left = transition.direction.is_left();

    // Body edges in canonical y: the stored point is the left edge; the right
    // edge sits one body width below it.
    let leading = |p: &crate::ingest::TrackPoint| if left { p.y } else { p.y - p.height };
    let trailing = |p: &crate::ingest::TrackPoint| if left { p.y - p.height } else { p.y };
    // "Past" the marking means strictly beyond it in the travel direction of
    // the maneuver; sitting exactly on it counts as not past.
    let past = |edge: f64| if left { edge > boundary } else { edge < boundary };

    // t_s: walk backward from t_lc to the last frame whose leading edge has
    // not passed the marking.
    let first = track.first_frame();
    let mut t_s = None;
    let mut f = transition.t_lc;
    loop {
        let p = track.point_at(f).expect("t_lc within track");
        if !past(leading(p)) {
            t_s = Some(f);
            break;
        }
        if f == first {
            break;
        }
        f -= 1;
    }
    let Some(t_s) = t_s else {
        return Err(DropReason::TruncatedStart);
    };

    // t_e: walk forward from t_lc + 1 to the first frame whose trailing edge
    // has strictly passed the marking.
    let last = track.last_frame();
    let mut t_e = None;
    let mut f = transition.t_lc + 1;
    while f <= last {
        let p = track.point_at(f).expect("frame within track");
        if past(trailing(p)) {
            t_e = Some(f);
            break;
        }
        f += 1;
    }
    let Some(t_e) = t_e else {
        return Err(DropReason::TruncatedTail);
    };

    Ok(LaneChangeEvent {
        track_id: track.track_id,
        segment: track.segment,
        t_lc: transition.t_lc,
        t_s,
        t_e,
        duration: (t_e - t_s) as f64 / meta.frame_rate,
        direction: transition.direction,
        source_lane: transition.from_lane,
        target_lane: transition.to_lane,
    })
}

fn cut_window(
    track: &Track,
    event: &LaneChangeEvent,
    label: WindowLabel,
    start: i64,
    end: i64,
    all_events: &[LaneChangeEvent],
) -> Result<ObservationWindow, DropReason> {
    if start < track.first_frame() as i64 {
        return Err(DropReason::ShortHistory);
    }
    let (start, end) = (start as u32, end as u32);
    // The window must not touch any event's execution interval, including an
    // earlier maneuver that was still completing while this one was prepared.
    for other in all_events {
        if other.t_s <= end - 1 && start <= other.t_e {
            return Err(DropReason::OverlapsEvent);
        }
    }
    for f in start..end {
        let p = track.point_at(f).expect("window within track");
        if p.lane_id != event.source_lane {
            return Err(DropReason::LaneNotConstant);
        }
    }
    Ok(ObservationWindow {
        track_id: track.track_id,
        segment: track.segment,
        label,
        start_frame: start,
        end_frame: end,
        direction: event.direction,
        lane: event.source_lane,
        target_lane: event.target_lane,
    })
}

/// Preparation window [t_s − 2s, t_s). `all_events` are this track's
/// accepted events, used for the overlap check.
pub fn extract_prep_window(
    track: &Track,
    event: &LaneChangeEvent,
    meta: &RecordingMeta,
    all_events: &[LaneChangeEvent],
) -> Result<ObservationWindow, DropReason> {
    let len = window_len(meta.frame_rate) as i64;
    let end = event.t_s as i64;
    cut_window(
        track,
        event,
        WindowLabel::LaneChange,
        end - len,
        end,
        all_events,
    )
}

/// Lane-keeping window [t_s − 4s, t_s − 2s), back to back with the
/// preparation window and on the same lane.
pub fn extract_lk_window(
    track: &Track,
    event: &LaneChangeEvent,
    meta: &RecordingMeta,
    all_events: &[LaneChangeEvent],
) -> Result<ObservationWindow, DropReason> {
    let len = window_len(meta.frame_rate) as i64;
    let end = event.t_s as i64 - len;
    cut_window(
        track,
        event,
        WindowLabel::LaneKeep,
        end - len,
        end,
        all_events,
    )
}

/// Resolve the three required surrounding vehicles at every window frame.
///
/// The closest lead vehicle must share the subject's lane; the target-side
/// lead and rear vehicles must sit on the window's target lane. Ids may
/// change across frames (cut-ins); absence or a lane mismatch at any frame
/// rejects the window.
pub fn resolve_neighbors(
    window: &ObservationWindow,
    track: &Track,
    store: &TrackStore,
) -> Result<NeighborGroup, DropReason> {
    let mut frames = Vec::with_capacity(window.len());
    for f in window.frames() {
        let sv = track.point_at(f).expect("window within track");
        let n = &sv.neighbors;
        let (tlv_id, tfv_id) = match window.direction {
            LcDirection::Left => (n.left_preceding, n.left_following),
            LcDirection::Right => (n.right_preceding, n.right_following),
        };
        let refs = [
            (NeighborRole::Clv, n.preceding, window.lane),
            (NeighborRole::Tlv, tlv_id, window.target_lane),
            (NeighborRole::Tfv, tfv_id, window.target_lane),
        ];
        let mut ids = [0u64; 3];
        for (i, (role, id, expected_lane)) in refs.into_iter().enumerate() {
            if id == 0 {
                return Err(DropReason::MissingNeighbor(role));
            }
            let Some(p) = store.point_of(id, f) else {
                return Err(DropReason::MissingNeighbor(role));
            };
            if p.lane_id != expected_lane {
                return Err(DropReason::NeighborLaneMismatch(role));
            }
            ids[i] = id;
        }
        frames.push(NeighborRefs {
            clv: ids[0],
            tlv: ids[1],
            tfv: ids[2],
        });
    }
    Ok(NeighborGroup { frames })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Carriageway, NeighborIds, TrackPoint};

    fn meta() -> RecordingMeta {
        RecordingMeta::new(1, 25.0, vec![0.0, 4.0, 8.0], vec![12.0, 16.0, 20.0]).unwrap()
    }

    /// Canonical lower-carriageway track: left edge follows `y_of(frame)`,
    /// lane id follows the raw datapoint corner's band (half-open [lo, hi)).
    fn lower_track(id: u64, frames: std::ops::Range<u32>, y_of: impl Fn(u32) -> f64) -> Track {
        let m = meta();
        let points = frames
            .map(|f| {
                let y = y_of(f);
                let corner_raw = -y;
                let lane = m
                    .lane_ids(Carriageway::Lower)
                    .find(|&l| {
                        let (lo, hi) = m.lane_band_raw(l).unwrap();
                        corner_raw >= lo && corner_raw < hi
                    })
                    .expect("corner inside a band");
                TrackPoint {
                    frame: f,
                    x: f as f64,
                    y,
                    width: 4.5,
                    height: 2.0,
                    vx: 25.0,
                    vy: 0.0,
                    ax: 0.0,
                    ay: 0.0,
                    lane_id: lane,
                    neighbors: NeighborIds::default(),
                }
            })
            .collect();
        Track {
            track_id: id,
            segment: 0,
            orientation: Orientation::Canonical(Carriageway::Lower),
            points,
        }
    }

    /// Mirrored upper-carriageway twin: same canonical left-edge profile
    /// shifted into the upper bands, lane id keyed on the raw corner, which
    /// on this carriageway is the body's right edge.
    fn upper_track(id: u64, frames: std::ops::Range<u32>, y_of: impl Fn(u32) -> f64) -> Track {
        let m = meta();
        let points = frames
            .map(|f| {
                let y = y_of(f);
                let corner_raw = y - 2.0;
                let lane = m
                    .lane_ids(Carriageway::Upper)
                    .find(|&l| {
                        let (lo, hi) = m.lane_band_raw(l).unwrap();
                        corner_raw >= lo && corner_raw < hi
                    })
                    .expect("corner inside a band");
                TrackPoint {
                    frame: f,
                    x: f as f64,
                    y,
                    width: 4.5,
                    height: 2.0,
                    vx: 25.0,
                    vy: 0.0,
                    ax: 0.0,
                    ay: 0.0,
                    lane_id: lane,
                    neighbors: NeighborIds::default(),
                }
            })
            .collect();
        Track {
            track_id: id,
            segment: 0,
            orientation: Orientation::Canonical(Carriageway::Upper),
            points,
        }
    }

    /// Piecewise-linear left edge: rests, ramps 0.2 m/frame for 20 frames,
    /// rests. Crossing times land exactly on frames, pinning the boundary
    /// conventions.
    fn ramp(start_y: f64) -> impl Fn(u32) -> f64 {
        move |f| start_y + 0.2 * (f.clamp(100, 120) - 100) as f64
    }

    #[test]
    fn lane_keeping_track_has_no_transitions() {
        let t = lower_track(1, 0..200, |_| -17.0);
        assert!(detect_lane_transitions(&t, &meta()).is_empty());
    }

    #[test]
    fn left_change_bounds_on_lower_carriageway() {
        // Left edge −17 → −13; lane 6 → 5; marking at −16.
        let t = lower_track(1, 0..200, ramp(-17.0));
        let m = meta();
        let trs = detect_lane_transitions(&t, &m);
        assert_eq!(trs.len(), 1);
        let tr = trs[0];
        assert_eq!((tr.from_lane, tr.to_lane), (6, 5));
        assert_eq!(tr.direction, LcDirection::Left);
        // Corner (here: left edge) sits exactly on the marking at frame 105
        // and is still in the source band there.
        assert_eq!(tr.t_lc, 105);

        let ev = compute_lc_bounds(&t, &tr, &m).unwrap();
        // Leading edge passes −16 after frame 105; trailing edge (left edge
        // − 2) passes −16 after frame 115.
        assert_eq!((ev.t_s, ev.t_e), (105, 116));
        assert_eq!(ev.duration, 11.0 / 25.0);
        assert_eq!((ev.source_lane, ev.target_lane), (6, 5));
    }

    #[test]
    fn mirrored_change_keeps_duration_exactly() {
        // Same canonical motion on the upper carriageway: lane 2 → 3. The
        // raw corner is now the trailing edge, so the id transition fires
        // near t_e instead of t_s; the bounds must not move.
        let t = upper_track(1, 0..200, ramp(3.0));
        let m = meta();
        let trs = detect_lane_transitions(&t, &m);
        assert_eq!(trs.len(), 1);
        let tr = trs[0];
        assert_eq!((tr.from_lane, tr.to_lane), (2, 3));
        assert_eq!(tr.direction, LcDirection::Left);
        assert_eq!(tr.t_lc, 114);

        let ev = compute_lc_bounds(&t, &tr, &m).unwrap();
        assert_eq!((ev.t_s, ev.t_e), (105, 116));
        assert_eq!(ev.duration, 11.0 / 25.0);
    }

    #[test]
    fn right_change_mirrors_left() {
        // Left edge −13 → −17: lane 5 → 6.
        let t = lower_track(1, 0..200, |f| -13.0 - 0.2 * (f.clamp(100, 120) - 100) as f64);
        let m = meta();
        let trs = detect_lane_transitions(&t, &m);
        assert_eq!(trs.len(), 1);
        assert_eq!(trs[0].direction, LcDirection::Right);
        let ev = compute_lc_bounds(&t, &trs[0], &m).unwrap();
        // Leading edge is now the right edge (left edge − 2); it touches −16
        // at frame 105. Trailing (left) edge passes −16 after frame 115.
        assert_eq!((ev.t_s, ev.t_e), (105, 116));
    }

    #[test]
    fn truncated_tail_is_rejected() {
        let t = lower_track(1, 0..112, ramp(-17.0));
        let m = meta();
        let trs = detect_lane_transitions(&t, &m);
        assert_eq!(trs.len(), 1);
        assert_eq!(
            compute_lc_bounds(&t, &trs[0], &m).unwrap_err(),
            DropReason::TruncatedTail
        );
    }

    #[test]
    fn truncated_start_is_rejected() {
        // Upper twin starting after the leading edge already crossed.
        let t = upper_track(1, 107..200, ramp(3.0));
        let m = meta();
        let trs = detect_lane_transitions(&t, &m);
        assert_eq!(trs.len(), 1);
        assert_eq!(trs[0].t_lc, 114);
        assert_eq!(
            compute_lc_bounds(&t, &trs[0], &m).unwrap_err(),
            DropReason::TruncatedStart
        );
    }

    fn event_fixture(range: std::ops::Range<u32>) -> (Track, LaneChangeEvent, RecordingMeta) {
        let t = lower_track(1, range, ramp(-17.0));
        let m = meta();
        let tr = detect_lane_transitions(&t, &m)[0];
        let ev = compute_lc_bounds(&t, &tr, &m).unwrap();
        (t, ev, m)
    }

    #[test]
    fn windows_are_back_to_back_and_disjoint_from_execution() {
        let (t, ev, m) = event_fixture(0..200);
        let all = [ev];
        let prep = extract_prep_window(&t, &ev, &m, &all).unwrap();
        assert_eq!((prep.start_frame, prep.end_frame), (55, 105));
        assert_eq!(prep.label, WindowLabel::LaneChange);
        assert_eq!(prep.len(), 50);
        let lk = extract_lk_window(&t, &ev, &m, &all).unwrap();
        assert_eq!((lk.start_frame, lk.end_frame), (5, 55));
        assert_eq!(lk.label, WindowLabel::LaneKeep);
        assert_eq!((lk.lane, lk.target_lane), (6, 5));
    }

    #[test]
    fn short_history_drops_window() {
        let (t, ev, m) = event_fixture(40..200);
        let all = [ev];
        assert!(extract_prep_window(&t, &ev, &m, &all).is_ok());
        assert_eq!(
            extract_lk_window(&t, &ev, &m, &all).unwrap_err(),
            DropReason::ShortHistory
        );
        let (t2, ev2, m2) = event_fixture(80..200);
        assert_eq!(
            extract_prep_window(&t2, &ev2, &m2, &[ev2]).unwrap_err(),
            DropReason::ShortHistory
        );
    }

    #[test]
    fn double_change_contaminates_second_preparation() {
        // Two ramps: 6 → 5 around frame 105, 5 on to the same-lane rest, then
        // a second change cannot happen on this 2-lane side; instead run the
        // second maneuver back down (5 → 6) starting while the first barely
        // cleared: prep of the second overlaps the first's execution.
        let y = |f: u32| {
            let up = 0.2 * (f.clamp(100, 120) - 100) as f64;
            let down = 0.2 * (f.clamp(140, 160) - 140) as f64;
            -17.0 + up - down
        };
        let t = lower_track(1, 0..260, y);
        let m = meta();
        let trs = detect_lane_transitions(&t, &m);
        assert_eq!(trs.len(), 2);
        let ev1 = compute_lc_bounds(&t, &trs[0], &m).unwrap();
        let ev2 = compute_lc_bounds(&t, &trs[1], &m).unwrap();
        let all = [ev1, ev2];
        assert_eq!((ev1.t_s, ev1.t_e), (105, 116));
        assert_eq!((ev2.t_s, ev2.t_e), (145, 156));
        // First event's windows are clean.
        assert!(extract_prep_window(&t, &ev1, &m, &all).is_ok());
        // Second event's preparation [95, 145) overlaps ev1's execution; its
        // lane-keeping window [45, 95) sits on lane 6, not the event's source
        // lane 5. Either way the pair dies.
        assert_eq!(
            extract_prep_window(&t, &ev2, &m, &all).unwrap_err(),
            DropReason::OverlapsEvent
        );
        assert_eq!(
            extract_lk_window(&t, &ev2, &m, &all).unwrap_err(),
            DropReason::LaneNotConstant
        );
    }

    #[test]
    fn lane_change_inside_window_rejects_lane_constancy() {
        // Event at t_s = 505 with an unrelated id flicker inside the LK span
        // (not an accepted event, e.g. a rejected transition elsewhere):
        // simulate by handcrafting lane ids.
        let mut t = lower_track(1, 300..700, |f| {
            -17.0 + 0.2 * (f.clamp(500, 520) - 500) as f64
        });
        let m = meta();
        let tr = detect_lane_transitions(&t, &m)[0];
        let ev = compute_lc_bounds(&t, &tr, &m).unwrap();
        // Corrupt one frame's lane id inside the preparation window.
        let idx = (470 - 300) as usize;
        t.points[idx].lane_id = 5;
        let err = extract_prep_window(&t, &ev, &m, &[ev]).unwrap_err();
        assert_eq!(err, DropReason::LaneNotConstant);
    }

    fn keeper(id: u64, y: f64, lane: u32, frames: std::ops::Range<u32>) -> Track {
        let mut t = lower_track(id, frames, move |_| y);
        for p in &mut t.points {
            p.lane_id = lane;
        }
        t
    }

    #[test]
    fn neighbor_resolution_requires_all_three_roles() {
        let (mut sv, ev, m) = event_fixture(0..200);
        let all = [ev];
        let prep = extract_prep_window(&sv, &ev, &m, &all).unwrap();

        // CLV ahead on lane 6 (id 2), TLV/TFV on lane 5 (ids 3, 4).
        let clv = keeper(2, -17.0, 6, 0..200);
        let tlv = keeper(3, -13.0, 5, 0..200);
        let tfv = keeper(4, -13.0, 5, 0..200);
        for p in &mut sv.points {
            p.neighbors.preceding = 2;
            p.neighbors.left_preceding = 3;
            p.neighbors.left_following = 4;
        }
        let store = TrackStore::new(vec![clv.clone(), tlv.clone(), tfv.clone()]);
        let group = resolve_neighbors(&prep, &sv, &store).unwrap();
        assert_eq!(group.frames.len(), 50);
        assert_eq!(
            group.frames[0],
            NeighborRefs {
                clv: 2,
                tlv: 3,
                tfv: 4
            }
        );

        // Missing TFV id at one frame.
        let mut sv2 = sv.clone();
        sv2.points[60].neighbors.left_following = 0;
        assert_eq!(
            resolve_neighbors(&prep, &sv2, &store).unwrap_err(),
            DropReason::MissingNeighbor(NeighborRole::Tfv)
        );

        // TLV disappears from the store mid-window.
        let mut short_tlv = tlv.clone();
        short_tlv.points.truncate(70);
        let store2 = TrackStore::new(vec![clv.clone(), short_tlv, tfv.clone()]);
        assert_eq!(
            resolve_neighbors(&prep, &sv, &store2).unwrap_err(),
            DropReason::MissingNeighbor(NeighborRole::Tlv)
        );

        // CLV on the wrong lane.
        let wrong_clv = keeper(2, -13.0, 5, 0..200);
        let store3 = TrackStore::new(vec![wrong_clv, tlv, tfv]);
        assert_eq!(
            resolve_neighbors(&prep, &sv, &store3).unwrap_err(),
            DropReason::NeighborLaneMismatch(NeighborRole::Clv)
        );
    }

    #[test]
    fn right_change_uses_right_side_columns() {
        let mut sv = lower_track(1, 0..200, |f| {
            -13.0 - 0.2 * (f.clamp(100, 120) - 100) as f64
        });
        let m = meta();
        let tr = detect_lane_transitions(&sv, &m)[0];
        let ev = compute_lc_bounds(&sv, &tr, &m).unwrap();
        let prep = extract_prep_window(&sv, &ev, &m, &[ev]).unwrap();
        assert_eq!((prep.lane, prep.target_lane), (5, 6));
        for p in &mut sv.points {
            p.neighbors.preceding = 2;
            p.neighbors.right_preceding = 3;
            p.neighbors.right_following = 4;
        }
        let store = TrackStore::new(vec![
            keeper(2, -13.0, 5, 0..200),
            keeper(3, -17.0, 6, 0..200),
            keeper(4, -17.0, 6, 0..200),
        ]);
        let group = resolve_neighbors(&prep, &sv, &store).unwrap();
        assert_eq!(group.frames[49].tlv, 3);
    }
}
