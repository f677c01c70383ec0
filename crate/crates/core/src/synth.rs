//! Deterministic synthetic recordings with analytically known lane changes.
//!
//! A scripted vehicle moves at constant longitudinal speed while its body
//! center rests at lane centers and switches between them along a sinusoidal
//! ease-in-out sweep. Lateral speed and acceleration are the sweep's exact
//! derivatives, and the time at which any lateral line is crossed inverts in
//! closed form, so every generated maneuver knows the frames at which
//! extraction must place its bounds. Tracks are emitted in the raw
//! image-coordinate convention the track parser consumes, with per-frame
//! lane ids assigned from the body center and neighbor columns filled
//! geometrically from the generated positions, so synthetic corpora exercise
//! the same code paths as recorded data.
//!
//! [`corpus`] bundles the scenario presets the test batteries rely on:
//! platooned clean changes, three-cohort style blobs, truncated and double
//! maneuvers, and platoons with one surrounding vehicle absent. Two plain
//! classifier fixtures with labels known by construction round the kit out:
//! [`trend_task`] and [`planted_aggregate_task`].

use std::f64::consts::PI;

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extract::LcDirection;
use crate::features::{FRAME_FEATURE_COUNT, FRAME_FEATURE_NAMES};
use crate::ingest::{Carriageway, NeighborIds, Orientation, RecordingMeta, Track, TrackPoint};
use crate::seeds::{rng_for, rng_for_indexed};

/// One commanded lane change: the body center sweeps from its current lane
/// center to `to_lane`'s center over `duration` seconds from `start_time`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneChangeCommand {
    pub start_time: f64,
    pub duration: f64,
    pub to_lane: u32,
}

/// A scripted vehicle. Sizes follow the track-file convention: `width` is
/// the body extent along travel, `height` across it. `rear_x` is the
/// canonical rear-edge position at t = 0; longitudinal speed is constant.
/// The track exists only inside [enter_time, exit_time], which lets a
/// maneuver begin or end off-track the way a camera loses vehicles at the
/// frame edge.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleScript {
    pub track_id: u64,
    pub lane: u32,
    pub rear_x: f64,
    pub speed: f64,
    pub width: f64,
    pub height: f64,
    pub enter_time: f64,
    pub exit_time: f64,
    pub changes: Vec<LaneChangeCommand>,
}

impl VehicleScript {
    /// A lane-keeping vehicle of typical size present for the whole
    /// recording.
    pub fn keeping(track_id: u64, lane: u32, rear_x: f64, speed: f64) -> Self {
        VehicleScript {
            track_id,
            lane,
            rear_x,
            speed,
            width: 4.2,
            height: 1.9,
            enter_time: 0.0,
            exit_time: f64::INFINITY,
            changes: Vec::new(),
        }
    }
}

/// A complete scripted scene: lane geometry plus vehicle scripts.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub recording_id: u32,
    pub frame_rate: f64,
    /// Recording length, seconds.
    pub duration: f64,
    pub upper_markings: Vec<f64>,
    pub lower_markings: Vec<f64>,
    pub vehicles: Vec<VehicleScript>,
}

/// What extraction is expected to make of one scripted marking crossing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpectedDetection {
    /// Clean event with these exact bounds.
    Event { t_s: u32, t_e: u32 },
    /// Track begins after the leading edge crossed the marking.
    TruncatedStart,
    /// Track ends before the trailing edge crosses the marking.
    TruncatedTail,
    /// The lane-id switch itself is outside the track's frames.
    NotDetected,
}

/// Ground truth for one marking crossing. A command that sweeps across
/// several markings produces one entry per marking.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChangeTruth {
    pub track_id: u64,
    pub from_lane: u32,
    pub to_lane: u32,
    pub direction: LcDirection,
    /// Continuous leading-edge, center, and trailing-edge crossing times, s.
    pub tau_lead: f64,
    pub tau_center: f64,
    pub tau_trail: f64,
    /// tau_trail − tau_lead: the continuous edge-to-edge duration.
    pub exec_duration: f64,
    /// Time averages of |lateral speed| and |lateral acceleration| over
    /// [tau_lead, tau_trail], in closed form.
    pub mean_abs_lat_speed: f64,
    pub mean_abs_lat_accel: f64,
    pub commanded_duration: f64,
    pub expected: ExpectedDetection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub changes: Vec<ChangeTruth>,
}

/// One generated recording with its oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedRecording {
    pub meta: RecordingMeta,
    pub tracks: Vec<Track>,
    pub truth: GroundTruth,
}

/// The center's ease between two lateral levels:
/// y(u) = from + (to − from)(1 − cos(πu))/2 for u = (t − t0)/dur in [0, 1].
#[derive(Debug, Clone, Copy)]
struct Ease {
    t0: f64,
    dur: f64,
    from: f64,
    to: f64,
}

impl Ease {
    fn end(&self) -> f64 {
        self.t0 + self.dur
    }

    /// Center position, speed, and acceleration at time t inside the sweep.
    fn at(&self, t: f64) -> (f64, f64, f64) {
        let u = (t - self.t0) / self.dur;
        let d = self.to - self.from;
        let y = self.from + d * (1.0 - (PI * u).cos()) / 2.0;
        let vy = d * PI / (2.0 * self.dur) * (PI * u).sin();
        let ay = d * PI * PI / (2.0 * self.dur * self.dur) * (PI * u).cos();
        (y, vy, ay)
    }

    /// Closed-form time at which the center passes `y`, which must lie
    /// strictly between the sweep's endpoints.
    fn crossing(&self, y: f64) -> f64 {
        let p = (y - self.from) / (self.to - self.from);
        debug_assert!(0.0 < p && p < 1.0, "crossing level outside the sweep");
        self.t0 + (1.0 - 2.0 * p).acos() / PI * self.dur
    }
}

/// Piecewise lateral motion: resting levels separated by sweeps.
struct LateralPath {
    /// rests[i] holds before sweeps[i]; rests.last() after the last sweep.
    rests: Vec<f64>,
    sweeps: Vec<Ease>,
}

impl LateralPath {
    fn sample(&self, t: f64) -> (f64, f64, f64) {
        for (i, s) in self.sweeps.iter().enumerate() {
            if t < s.t0 {
                return (self.rests[i], 0.0, 0.0);
            }
            if t <= s.end() {
                return s.at(t);
            }
        }
        (*self.rests.last().unwrap(), 0.0, 0.0)
    }
}

fn lane_center(meta: &RecordingMeta, lane: u32) -> Result<f64> {
    meta.lane_center_canonical(lane)
        .ok_or_else(|| Error::config(format!("lane {lane} does not exist")))
}

/// Lane whose canonical band contains the center y.
fn lane_of_center(meta: &RecordingMeta, side: Carriageway, y: f64) -> Result<u32> {
    for id in meta.lane_ids(side) {
        let (lo, hi) = meta.lane_band_canonical(id).unwrap();
        if lo <= y && y < hi {
            return Ok(id);
        }
    }
    Err(Error::data(format!(
        "scripted center y {y} leaves the {side} carriageway"
    )))
}

struct SimVehicle<'a> {
    script: &'a VehicleScript,
    side: Carriageway,
    path: LateralPath,
    first_frame: u32,
    last_frame: u32,
}

#[derive(Clone, Copy)]
struct CanonState {
    rear_x: f64,
    center_y: f64,
    vy: f64,
    ay: f64,
    lane: u32,
}

fn build_vehicle<'a>(
    v: &'a VehicleScript,
    meta: &RecordingMeta,
    duration: f64,
) -> Result<SimVehicle<'a>> {
    let side = meta
        .carriageway_of(v.lane)
        .ok_or_else(|| Error::config(format!("vehicle {}: unknown lane {}", v.track_id, v.lane)))?;
    for (name, val) in [
        ("speed", v.speed),
        ("width", v.width),
        ("height", v.height),
    ] {
        if !(val.is_finite() && val > 0.0) {
            return Err(Error::config(format!(
                "vehicle {}: {name} must be positive, got {val}",
                v.track_id
            )));
        }
    }
    if !(v.enter_time >= 0.0 && v.exit_time > v.enter_time) {
        return Err(Error::config(format!(
            "vehicle {}: bad presence span [{}, {}]",
            v.track_id, v.enter_time, v.exit_time
        )));
    }

    let mut rests = vec![lane_center(meta, v.lane)?];
    let mut sweeps = Vec::new();
    let mut lane = v.lane;
    let mut prev_end = 0.0;
    for cmd in &v.changes {
        if !(cmd.duration.is_finite() && cmd.duration > 0.0) {
            return Err(Error::config(format!(
                "vehicle {}: command duration must be positive",
                v.track_id
            )));
        }
        if cmd.start_time < prev_end {
            return Err(Error::config(format!(
                "vehicle {}: commands overlap at {}s",
                v.track_id, cmd.start_time
            )));
        }
        if cmd.start_time + cmd.duration > duration {
            return Err(Error::config(format!(
                "vehicle {}: command runs past the recording end",
                v.track_id
            )));
        }
        if meta.carriageway_of(cmd.to_lane) != Some(side) || cmd.to_lane == lane {
            return Err(Error::config(format!(
                "vehicle {}: cannot change from lane {lane} to lane {}",
                v.track_id, cmd.to_lane
            )));
        }
        let from = *rests.last().unwrap();
        let to = lane_center(meta, cmd.to_lane)?;
        sweeps.push(Ease {
            t0: cmd.start_time,
            dur: cmd.duration,
            from,
            to,
        });
        rests.push(to);
        lane = cmd.to_lane;
        prev_end = cmd.start_time + cmd.duration;
    }

    let fr = meta.frame_rate;
    let first_frame = ((v.enter_time * fr) - 1e-9).ceil().max(0.0) as u32;
    let last_frame = (v.exit_time.min(duration) * fr + 1e-9).floor() as u32;
    if first_frame > last_frame {
        return Err(Error::config(format!(
            "vehicle {}: no frames inside its presence span",
            v.track_id
        )));
    }
    Ok(SimVehicle {
        script: v,
        side,
        path: LateralPath { rests, sweeps },
        first_frame,
        last_frame,
    })
}

/// Mean of |cos(πu)| over [u1, u2] ⊂ [0, 1], times `amp`. The integrand
/// changes sign at most once, at u = 1/2.
fn mean_abs_cos(amp: f64, u1: f64, u2: f64) -> f64 {
    let s = |u: f64| (PI * u).sin();
    let integral = if u2 <= 0.5 || u1 >= 0.5 {
        (s(u2) - s(u1)).abs() / PI
    } else {
        (2.0 - s(u1) - s(u2)) / PI
    };
    amp * integral / (u2 - u1)
}

/// Ground truth entries of one sweep: one per marking crossed.
fn sweep_truths(
    sim: &SimVehicle<'_>,
    meta: &RecordingMeta,
    sweep: &Ease,
    from_lane: u32,
    to_lane: u32,
) -> Result<Vec<ChangeTruth>> {
    let v = sim.script;
    let toward_left = sweep.to > sweep.from;
    let sign = if toward_left { 1.0 } else { -1.0 };
    let h = v.height;
    let fr = meta.frame_rate;

    let mut out = Vec::new();
    let mut lane = from_lane;
    while lane != to_lane {
        let next = meta
            .adjacent_lane(lane, toward_left)
            .ok_or_else(|| Error::config(format!("no lane beyond {lane} for the sweep")))?;
        let boundary = meta.boundary_between(lane, next).unwrap();
        let y_lead = boundary - sign * h / 2.0;
        let y_trail = boundary + sign * h / 2.0;
        for y in [y_lead, y_trail] {
            let p = (y - sweep.from) / (sweep.to - sweep.from);
            if !(0.0 < p && p < 1.0) {
                return Err(Error::config(format!(
                    "vehicle {}: body spans a full lane, edge crossings undefined",
                    v.track_id
                )));
            }
        }
        let tau_lead = sweep.crossing(y_lead);
        let tau_center = sweep.crossing(boundary);
        let tau_trail = sweep.crossing(y_trail);

        let t_lc = (tau_center * fr).floor() as u32;
        let t_s = (tau_lead * fr).floor() as u32;
        let t_e = (tau_trail * fr).floor() as u32 + 1;
        let expected = if sim.first_frame > t_lc || sim.last_frame <= t_lc {
            ExpectedDetection::NotDetected
        } else if sim.first_frame > t_s {
            ExpectedDetection::TruncatedStart
        } else if sim.last_frame < t_e {
            ExpectedDetection::TruncatedTail
        } else {
            ExpectedDetection::Event { t_s, t_e }
        };

        let exec = tau_trail - tau_lead;
        let u1 = (tau_lead - sweep.t0) / sweep.dur;
        let u2 = (tau_trail - sweep.t0) / sweep.dur;
        let delta = (sweep.to - sweep.from).abs();
        let amp = delta * PI * PI / (2.0 * sweep.dur * sweep.dur);
        out.push(ChangeTruth {
            track_id: v.track_id,
            from_lane: lane,
            to_lane: next,
            direction: if toward_left {
                LcDirection::Left
            } else {
                LcDirection::Right
            },
            tau_lead,
            tau_center,
            tau_trail,
            exec_duration: exec,
            // The center travels exactly one body height between the two
            // edge crossings, so the time average of |vy| is h / exec.
            mean_abs_lat_speed: h / exec,
            mean_abs_lat_accel: mean_abs_cos(amp, u1, u2),
            commanded_duration: sweep.dur,
            expected,
        });
        lane = next;
    }
    Ok(out)
}

/// Canonical state back to the raw image-coordinate row the parsers read.
fn to_raw(state: &CanonState, v: &VehicleScript, side: Carriageway, frame: u32) -> TrackPoint {
    let left_y = state.center_y + v.height / 2.0;
    let (x, y, vx, vy, ax, ay) = match side {
        Carriageway::Lower => (
            state.rear_x,
            -left_y,
            v.speed,
            -state.vy,
            0.0,
            -state.ay,
        ),
        Carriageway::Upper => (
            -state.rear_x - v.width,
            left_y - v.height,
            -v.speed,
            state.vy,
            0.0,
            state.ay,
        ),
    };
    TrackPoint {
        frame,
        x,
        y,
        width: v.width,
        height: v.height,
        vx,
        vy,
        ax,
        ay,
        lane_id: state.lane,
        neighbors: NeighborIds::default(),
    }
}

/// Nearest-candidate pick, ties broken by the lower track id.
fn pick(best: &mut Option<(f64, u64)>, dist: f64, id: u64) {
    let better = match best {
        None => true,
        Some((d, i)) => dist < *d || (dist == *d && id < *i),
    };
    if better {
        *best = Some((dist, id));
    }
}

/// Generate one recording from a scripted scene.
///
/// Velocities and accelerations are exact derivatives of the sampled
/// positions' continuous forms; lane ids come from the body center's band;
/// neighbor id columns are recomputed per frame from geometry. Two vehicles
/// whose bodies intersect at any frame are an error.
pub fn gen_recording(spec: &ScenarioSpec) -> Result<GeneratedRecording> {
    let meta = RecordingMeta::new(
        spec.recording_id,
        spec.frame_rate,
        spec.upper_markings.clone(),
        spec.lower_markings.clone(),
    )?;
    if !(spec.duration.is_finite() && spec.duration > 0.0) {
        return Err(Error::config(format!(
            "recording duration {} must be positive",
            spec.duration
        )));
    }
    let mut ids = std::collections::BTreeSet::new();
    for v in &spec.vehicles {
        if v.track_id == 0 || !ids.insert(v.track_id) {
            return Err(Error::config(format!(
                "vehicle ids must be unique and nonzero, got {}",
                v.track_id
            )));
        }
    }

    let sims: Vec<SimVehicle<'_>> = spec
        .vehicles
        .iter()
        .map(|v| build_vehicle(v, &meta, spec.duration))
        .collect::<Result<_>>()?;

    // Sample every vehicle's canonical state over its frames.
    let fr = spec.frame_rate;
    let mut states: Vec<Vec<CanonState>> = Vec::with_capacity(sims.len());
    for sim in &sims {
        let v = sim.script;
        let mut track = Vec::with_capacity((sim.last_frame - sim.first_frame + 1) as usize);
        for frame in sim.first_frame..=sim.last_frame {
            let t = frame as f64 / fr;
            let (center_y, vy, ay) = sim.path.sample(t);
            track.push(CanonState {
                rear_x: v.rear_x + v.speed * t,
                center_y,
                vy,
                ay,
                lane: lane_of_center(&meta, sim.side, center_y)?,
            });
        }
        states.push(track);
    }

    // Per-frame pass: collision validation plus geometric neighbor columns.
    let max_frame = sims.iter().map(|s| s.last_frame).max().unwrap_or(0);
    let mut neighbor_rows: Vec<Vec<NeighborIds>> =
        states.iter().map(|s| vec![NeighborIds::default(); s.len()]).collect();
    for frame in 0..=max_frame {
        let present: Vec<(usize, &CanonState)> = sims
            .iter()
            .enumerate()
            .filter(|(_, s)| frame >= s.first_frame && frame <= s.last_frame)
            .map(|(i, s)| (i, &states[i][(frame - s.first_frame) as usize]))
            .collect();

        for (a, (i, si)) in present.iter().enumerate() {
            let vi = sims[*i].script;
            for (j, sj) in present[a + 1..].iter() {
                if sims[*i].side != sims[*j].side {
                    continue;
                }
                let vj = sims[*j].script;
                let x_overlap =
                    si.rear_x < sj.rear_x + vj.width && sj.rear_x < si.rear_x + vi.width;
                let y_overlap =
                    (si.center_y - sj.center_y).abs() < (vi.height + vj.height) / 2.0;
                if x_overlap && y_overlap {
                    return Err(Error::data(format!(
                        "vehicles {} and {} overlap at frame {frame}",
                        vi.track_id, vj.track_id
                    )));
                }
            }
        }

        for (i, si) in &present {
            let sim = &sims[*i];
            let v = sim.script;
            let center_x = si.rear_x + v.width / 2.0;
            let left_lane = meta.adjacent_lane(si.lane, true);
            let right_lane = meta.adjacent_lane(si.lane, false);
            // (ahead, alongside, behind) per relative lane.
            let mut own = (None, None, None);
            let mut left = (None, None, None);
            let mut right = (None, None, None);
            for (j, sj) in &present {
                if j == i || sims[*j].side != sim.side {
                    continue;
                }
                let u = sims[*j].script;
                let bucket = if sj.lane == si.lane {
                    &mut own
                } else if Some(sj.lane) == left_lane {
                    &mut left
                } else if Some(sj.lane) == right_lane {
                    &mut right
                } else {
                    continue;
                };
                let other_center = sj.rear_x + u.width / 2.0;
                let alongside =
                    si.rear_x < sj.rear_x + u.width && sj.rear_x < si.rear_x + v.width;
                let dist = (other_center - center_x).abs();
                if alongside {
                    pick(&mut bucket.1, dist, u.track_id);
                } else if other_center > center_x {
                    pick(&mut bucket.0, dist, u.track_id);
                } else {
                    pick(&mut bucket.2, dist, u.track_id);
                }
            }
            let id = |slot: Option<(f64, u64)>| slot.map_or(0, |(_, id)| id);
            neighbor_rows[*i][(frame - sim.first_frame) as usize] = NeighborIds {
                preceding: id(own.0),
                following: id(own.2),
                left_preceding: id(left.0),
                left_alongside: id(left.1),
                left_following: id(left.2),
                right_preceding: id(right.0),
                right_alongside: id(right.1),
                right_following: id(right.2),
            };
        }
    }

    let mut tracks = Vec::with_capacity(sims.len());
    let mut truth = GroundTruth::default();
    for ((sim, states), neighbors) in sims.iter().zip(&states).zip(&neighbor_rows) {
        let v = sim.script;
        let points = states
            .iter()
            .zip(neighbors)
            .enumerate()
            .map(|(k, (s, n))| {
                let mut p = to_raw(s, v, sim.side, sim.first_frame + k as u32);
                p.neighbors = *n;
                p
            })
            .collect();
        tracks.push(Track {
            track_id: v.track_id,
            segment: 0,
            orientation: Orientation::Raw,
            points,
        });

        let mut lane = v.lane;
        for sweep in &sim.path.sweeps {
            let to_lane = v
                .changes
                .iter()
                .find(|c| c.start_time == sweep.t0)
                .unwrap()
                .to_lane;
            truth
                .changes
                .extend(sweep_truths(sim, &meta, sweep, lane, to_lane)?);
            lane = to_lane;
        }
    }
    tracks.sort_by_key(|t| t.track_id);

    Ok(GeneratedRecording {
        meta,
        tracks,
        truth,
    })
}

/// Scenario batteries for the test suites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusPreset {
    /// 200 platooned clean changes, mixed directions and carriageways,
    /// edge-to-edge durations spanning 0.8 to 3 seconds. Every change
    /// qualifies as a decision-pair.
    ExtractionBattery,
    /// 60 solo changes in three duration cohorts that form separable
    /// style-feature blobs.
    StyleBlobs,
    /// 12 maneuvers cut off by the track's presence span: half lose their
    /// start, half their tail.
    Truncations,
    /// 8 out-and-back double maneuvers plus 4 single sweeps across two
    /// markings; each produces two distinct events.
    DoubleChanges,
    /// 9 platoons each missing one surrounding vehicle, so events are
    /// accepted but no decision-pair survives.
    MissingNeighbors,
}

const FRAME_RATE: f64 = 25.0;
const BATTERY_RECORDINGS: usize = 200;
const BLOB_RECORDINGS: usize = 60;
const TRUNCATION_RECORDINGS: usize = 12;
const DOUBLE_RECORDINGS: usize = 8;
const SWEEP_RECORDINGS: usize = 4;
const MISSING_RECORDINGS: usize = 9;

fn markings(base: f64, lane_w: f64) -> Vec<f64> {
    (0..4).map(|k| base + k as f64 * lane_w).collect()
}

fn three_lane_meta(recording_id: u32, lane_w: f64) -> RecordingMeta {
    RecordingMeta::new(
        recording_id,
        FRAME_RATE,
        markings(8.0, lane_w),
        markings(25.0, lane_w),
    )
    .expect("valid three-lane geometry")
}

fn pick_side(rng: &mut ChaCha8Rng) -> Carriageway {
    if rng.gen_bool(0.5) {
        Carriageway::Lower
    } else {
        Carriageway::Upper
    }
}

/// Commanded sweep duration that yields the requested edge-to-edge duration
/// for a single-marking change: the edges cross at u = acos(±r)/π, so the
/// measured span is the commanded one times 2·asin(r)/π, r = height/width.
fn commanded_duration(edge_to_edge: f64, height: f64, lane_w: f64) -> f64 {
    edge_to_edge * PI / (2.0 * (height / lane_w).asin())
}

/// SV plus CLV/TLV/TFV platoon with one clean change and generous gaps.
/// `skip` omits one companion (0 = current-lane leader, 1 = target-lane
/// leader, 2 = target-lane follower).
fn platoon_spec(recording_id: u32, rng: &mut ChaCha8Rng, skip: Option<usize>) -> ScenarioSpec {
    let lane_w = rng.gen_range(3.6..4.0);
    let meta = three_lane_meta(recording_id, lane_w);
    let side = pick_side(rng);
    let mid = *meta.lane_ids(side).start() + 1;
    let toward_left = rng.gen_bool(0.5);
    let target = meta.adjacent_lane(mid, toward_left).unwrap();

    let height = rng.gen_range(1.7..2.3);
    let edge_to_edge = rng.gen_range(0.8..3.0);
    let dur = commanded_duration(edge_to_edge, height, lane_w);
    let u_lead = (height / lane_w).acos() / PI;
    // Place the leading-edge crossing late enough for 4 s of history.
    let t0 = rng.gen_range(4.3..4.9) - u_lead * dur;

    let speed = rng.gen_range(24.0..30.0);
    let mut sv = VehicleScript::keeping(1, mid, 120.0, speed);
    sv.width = rng.gen_range(3.9..4.6);
    sv.height = height;
    sv.changes.push(LaneChangeCommand {
        start_time: t0,
        duration: dur,
        to_lane: target,
    });

    let mut vehicles = vec![sv];
    let companions = [
        // (lane, gap ahead of SV front or behind SV rear, speed delta)
        (mid, rng.gen_range(25.0..45.0), rng.gen_range(-0.8..1.2)),
        (target, rng.gen_range(20.0..40.0), rng.gen_range(-0.5..1.5)),
        (target, -rng.gen_range(18.0..35.0), rng.gen_range(-1.5..0.5)),
    ];
    for (k, (lane, gap, dv)) in companions.into_iter().enumerate() {
        if skip == Some(k) {
            continue;
        }
        let mut c = VehicleScript::keeping(k as u64 + 2, lane, 0.0, speed + dv);
        c.width = rng.gen_range(3.9..4.6);
        c.height = rng.gen_range(1.7..2.1);
        let sv_front = 120.0 + vehicles[0].width;
        c.rear_x = if gap > 0.0 { sv_front + gap } else { 120.0 + gap - c.width };
        vehicles.push(c);
    }

    ScenarioSpec {
        recording_id,
        frame_rate: FRAME_RATE,
        duration: 12.8,
        upper_markings: markings(8.0, lane_w),
        lower_markings: markings(25.0, lane_w),
        vehicles,
    }
}

/// Lone changer, fixed geometry; used by the blob and truncation presets.
fn solo_spec(recording_id: u32, rng: &mut ChaCha8Rng, edge_to_edge: f64) -> ScenarioSpec {
    let lane_w = 3.8;
    let height = 2.0;
    let meta = three_lane_meta(recording_id, lane_w);
    let side = pick_side(rng);
    let mid = *meta.lane_ids(side).start() + 1;
    let target = meta.adjacent_lane(mid, rng.gen_bool(0.5)).unwrap();
    let mut sv = VehicleScript::keeping(1, mid, 80.0, rng.gen_range(24.0..30.0));
    sv.height = height;
    sv.changes.push(LaneChangeCommand {
        start_time: rng.gen_range(1.2..1.6),
        duration: commanded_duration(edge_to_edge, height, lane_w),
        to_lane: target,
    });
    ScenarioSpec {
        recording_id,
        frame_rate: FRAME_RATE,
        duration: 12.0,
        upper_markings: markings(8.0, lane_w),
        lower_markings: markings(25.0, lane_w),
        vehicles: vec![sv],
    }
}

fn battery(seed: u64, base_id: u32) -> Result<Vec<GeneratedRecording>> {
    (0..BATTERY_RECORDINGS)
        .map(|i| {
            let mut rng = rng_for_indexed(seed, "battery", i as u64);
            gen_recording(&platoon_spec(base_id + i as u32, &mut rng, None))
        })
        .collect()
}

fn style_blobs(seed: u64, base_id: u32) -> Result<Vec<GeneratedRecording>> {
    const COHORT_DURATIONS: [f64; 3] = [0.9, 1.7, 2.8];
    (0..BLOB_RECORDINGS)
        .map(|i| {
            let mut rng = rng_for_indexed(seed, "style-blob", i as u64);
            let target = COHORT_DURATIONS[i % 3] + rng.gen_range(-0.06..0.06);
            gen_recording(&solo_spec(base_id + i as u32, &mut rng, target))
        })
        .collect()
}

fn truncations(seed: u64, base_id: u32) -> Result<Vec<GeneratedRecording>> {
    (0..TRUNCATION_RECORDINGS)
        .map(|i| {
            let mut rng = rng_for_indexed(seed, "truncation", i as u64);
            let edge_to_edge = rng.gen_range(1.2..2.0);
            let mut spec = solo_spec(base_id + i as u32, &mut rng, edge_to_edge);
            // Probe once for the continuous crossing times, then cut the
            // track's presence span mid-maneuver and regenerate.
            let probe = gen_recording(&spec)?;
            let t = probe.truth.changes[0];
            if i % 2 == 0 {
                spec.vehicles[0].exit_time = (t.tau_center + t.tau_trail) / 2.0;
            } else {
                spec.vehicles[0].enter_time = (t.tau_lead + t.tau_center) / 2.0;
            }
            gen_recording(&spec)
        })
        .collect()
}

fn double_changes(seed: u64, base_id: u32) -> Result<Vec<GeneratedRecording>> {
    let mut out = Vec::new();
    for i in 0..DOUBLE_RECORDINGS {
        let mut rng = rng_for_indexed(seed, "double", i as u64);
        let edge_to_edge = rng.gen_range(0.9..1.3);
        let mut spec = solo_spec(base_id + i as u32, &mut rng, edge_to_edge);
        spec.duration = 12.5;
        let first = spec.vehicles[0].changes[0];
        let back = commanded_duration(rng.gen_range(0.9..1.3), 2.0, 3.8);
        let home = spec.vehicles[0].lane;
        spec.vehicles[0].changes.push(LaneChangeCommand {
            start_time: first.start_time + first.duration + rng.gen_range(0.2..0.5),
            duration: back,
            to_lane: home,
        });
        out.push(gen_recording(&spec)?);
    }
    for i in 0..SWEEP_RECORDINGS {
        let mut rng = rng_for_indexed(seed, "two-marking", i as u64);
        let id = base_id + (DOUBLE_RECORDINGS + i) as u32;
        let meta = three_lane_meta(id, 3.8);
        let side = pick_side(&mut rng);
        let lanes = meta.lane_ids(side);
        let (from, to) = if rng.gen_bool(0.5) {
            (*lanes.start(), *lanes.end())
        } else {
            (*lanes.end(), *lanes.start())
        };
        let mut sv = VehicleScript::keeping(1, from, 80.0, rng.gen_range(24.0..30.0));
        sv.height = 2.0;
        sv.changes.push(LaneChangeCommand {
            start_time: rng.gen_range(1.5..2.0),
            duration: rng.gen_range(4.0..5.5),
            to_lane: to,
        });
        out.push(gen_recording(&ScenarioSpec {
            recording_id: id,
            frame_rate: FRAME_RATE,
            duration: 12.0,
            upper_markings: markings(8.0, 3.8),
            lower_markings: markings(25.0, 3.8),
            vehicles: vec![sv],
        })?);
    }
    Ok(out)
}

fn missing_neighbors(seed: u64, base_id: u32) -> Result<Vec<GeneratedRecording>> {
    (0..MISSING_RECORDINGS)
        .map(|i| {
            let mut rng = rng_for_indexed(seed, "missing-neighbor", i as u64);
            gen_recording(&platoon_spec(base_id + i as u32, &mut rng, Some(i % 3)))
        })
        .collect()
}

/// Generate the selected presets in order, assigning recording ids
/// sequentially from 1. Same presets and seed give a bit-identical corpus.
pub fn corpus(presets: &[CorpusPreset], seed: u64) -> Result<Vec<GeneratedRecording>> {
    let mut out: Vec<GeneratedRecording> = Vec::new();
    for preset in presets {
        let base = out.len() as u32 + 1;
        let recs = match preset {
            CorpusPreset::ExtractionBattery => battery(seed, base)?,
            CorpusPreset::StyleBlobs => style_blobs(seed, base)?,
            CorpusPreset::Truncations => truncations(seed, base)?,
            CorpusPreset::DoubleChanges => double_changes(seed, base)?,
            CorpusPreset::MissingNeighbors => missing_neighbors(seed, base)?,
        };
        out.extend(recs);
    }
    Ok(out)
}

/// Sequence-classification fixture: every channel is noise except the
/// subject's lateral-speed channel, which carries a mean-zero linear trend
/// whose sign is the label.
pub fn trend_task(n: usize, steps: usize, seed: u64) -> (Array3<f64>, Vec<u8>) {
    let channel = FRAME_FEATURE_NAMES
        .iter()
        .position(|name| *name == "vx_sv")
        .unwrap();
    let mut rng = rng_for(seed, "trend");
    let background = Normal::new(0.0, 0.5).unwrap();
    let jitter = Normal::new(0.0, 0.2).unwrap();
    let mut x = Array3::zeros((n, steps, FRAME_FEATURE_COUNT));
    let mut y = Vec::with_capacity(n);
    for s in 0..n {
        let label = rng.gen_bool(0.5);
        let slope = rng.gen_range(0.6..1.2) * if label { 1.0 } else { -1.0 };
        for t in 0..steps {
            for c in 0..FRAME_FEATURE_COUNT {
                x[(s, t, c)] = if c == channel {
                    let u = t as f64 / (steps - 1).max(1) as f64 - 0.5;
                    slope * u + jitter.sample(&mut rng)
                } else {
                    background.sample(&mut rng)
                };
            }
        }
        y.push(u8::from(label));
    }
    (x, y)
}

/// Tabular fixture: uniform features, label is the sign of one column.
pub fn planted_aggregate_task(
    n: usize,
    d: usize,
    informative: usize,
    seed: u64,
) -> (Array2<f64>, Vec<u8>) {
    assert!(informative < d, "informative column out of range");
    let mut rng = rng_for(seed, "planted");
    let mut x = Array2::zeros((n, d));
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        for j in 0..d {
            x[(i, j)] = rng.gen_range(-1.0..1.0);
        }
        y.push(u8::from(x[(i, informative)] > 0.0));
    }
    (x, y)
}
