//! Trajectory recording ingest.
//!
//! Recordings arrive as two CSVs per site: a recording-meta file (frame rate
//! plus the lateral positions of the lane markings on both carriageways) and
//! a tracks file (one row per vehicle per frame). Raw coordinates are image
//! coordinates: x grows along the road, y grows downward, and each row's
//! (x, y) is the top-left corner of the vehicle's bounding box. The upper
//! carriageway drives toward −x, the lower toward +x.
//!
//! [`normalize_direction`] rewrites a track into the canonical driver frame
//! used by the rest of the pipeline: x' grows along the travel direction, y'
//! grows toward the driver's left, and the stored point is the body's
//! left-rear corner, so the body spans x' ∈ [x', x' + length] and
//! y' ∈ [y' − width, y'] regardless of carriageway. Lane markings map into
//! the same frame via [`RecordingMeta::canonical_marking`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::provenance::{atomic_write, fmt_f64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Carriageway {
    Upper,
    Lower,
}

impl fmt::Display for Carriageway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Carriageway::Upper => write!(f, "upper"),
            Carriageway::Lower => write!(f, "lower"),
        }
    }
}

/// Recording-level metadata: frame rate and lane geometry.
///
/// Lane ids follow the source convention: the upper carriageway's lanes are
/// numbered from 2 in order of increasing raw y, and the lower carriageway's
/// continue after a one-id gap (e.g. two markings groups of three lines give
/// upper lanes {2, 3} and lower lanes {5, 6}).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingMeta {
    pub recording_id: u32,
    pub frame_rate: f64,
    /// Raw y of the upper carriageway's markings, ascending.
    pub upper_markings: Vec<f64>,
    /// Raw y of the lower carriageway's markings, ascending.
    pub lower_markings: Vec<f64>,
}

impl RecordingMeta {
    pub fn new(
        recording_id: u32,
        frame_rate: f64,
        upper_markings: Vec<f64>,
        lower_markings: Vec<f64>,
    ) -> Result<Self> {
        if !(frame_rate.is_finite() && frame_rate > 0.0) {
            return Err(Error::data(format!("invalid frame rate {frame_rate}")));
        }
        for (name, m) in [("upper", &upper_markings), ("lower", &lower_markings)] {
            if m.len() < 2 {
                return Err(Error::data(format!(
                    "{name} carriageway needs at least 2 lane markings, got {}",
                    m.len()
                )));
            }
            if !m.windows(2).all(|w| w[0] < w[1]) {
                return Err(Error::data(format!(
                    "{name} lane markings not strictly ascending"
                )));
            }
        }
        Ok(RecordingMeta {
            recording_id,
            frame_rate,
            upper_markings,
            lower_markings,
        })
    }

    pub fn frame_interval(&self) -> f64 {
        1.0 / self.frame_rate
    }

    fn upper_lane_count(&self) -> u32 {
        (self.upper_markings.len() - 1) as u32
    }

    fn lower_lane_count(&self) -> u32 {
        (self.lower_markings.len() - 1) as u32
    }

    /// First lane id of each carriageway. Upper lanes start at 2; lower lanes
    /// start one id past the last upper lane (the gap id is unused).
    fn first_lane(&self, side: Carriageway) -> u32 {
        match side {
            Carriageway::Upper => 2,
            Carriageway::Lower => 2 + self.upper_lane_count() + 1,
        }
    }

    pub fn lane_ids(&self, side: Carriageway) -> std::ops::RangeInclusive<u32> {
        let first = self.first_lane(side);
        let count = match side {
            Carriageway::Upper => self.upper_lane_count(),
            Carriageway::Lower => self.lower_lane_count(),
        };
        first..=first + count - 1
    }

    pub fn carriageway_of(&self, lane_id: u32) -> Option<Carriageway> {
        if self.lane_ids(Carriageway::Upper).contains(&lane_id) {
            Some(Carriageway::Upper)
        } else if self.lane_ids(Carriageway::Lower).contains(&lane_id) {
            Some(Carriageway::Lower)
        } else {
            None
        }
    }

    /// Raw-y band (lo, hi) of a lane.
    pub fn lane_band_raw(&self, lane_id: u32) -> Option<(f64, f64)> {
        let side = self.carriageway_of(lane_id)?;
        let idx = (lane_id - self.first_lane(side)) as usize;
        let markings = match side {
            Carriageway::Upper => &self.upper_markings,
            Carriageway::Lower => &self.lower_markings,
        };
        Some((markings[idx], markings[idx + 1]))
    }

    /// Canonical marking position for a raw marking y on the given side.
    /// Lower carriageway mirrors (y' = −y); upper keeps raw y (y' = y).
    pub fn canonical_marking(&self, side: Carriageway, raw_y: f64) -> f64 {
        match side {
            Carriageway::Upper => raw_y,
            Carriageway::Lower => -raw_y,
        }
    }

    /// Canonical-y band (min, max) of a lane.
    pub fn lane_band_canonical(&self, lane_id: u32) -> Option<(f64, f64)> {
        let side = self.carriageway_of(lane_id)?;
        let (lo, hi) = self.lane_band_raw(lane_id)?;
        let a = self.canonical_marking(side, lo);
        let b = self.canonical_marking(side, hi);
        Some((a.min(b), a.max(b)))
    }

    /// Canonical-y center of a lane.
    pub fn lane_center_canonical(&self, lane_id: u32) -> Option<f64> {
        let (lo, hi) = self.lane_band_canonical(lane_id)?;
        Some(0.5 * (lo + hi))
    }

    /// Lane adjacent to `lane_id` toward the driver's left (or right), if one
    /// exists on the same carriageway.
    pub fn adjacent_lane(&self, lane_id: u32, toward_left: bool) -> Option<u32> {
        let side = self.carriageway_of(lane_id)?;
        let own = self.lane_center_canonical(lane_id)?;
        let mut best: Option<(f64, u32)> = None;
        for id in self.lane_ids(side) {
            if id == lane_id {
                continue;
            }
            let c = self.lane_center_canonical(id)?;
            let delta = c - own;
            let keep = if toward_left { delta > 0.0 } else { delta < 0.0 };
            if keep {
                let dist = delta.abs();
                if best.map_or(true, |(d, _)| dist < d) {
                    best = Some((dist, id));
                }
            }
        }
        best.map(|(_, id)| id)
    }

    /// Canonical y of the marking a vehicle crosses when moving from lane
    /// `from` to lane `to` on the same carriageway: the boundary of `to`'s
    /// band on the side facing `from`.
    pub fn boundary_between(&self, from: u32, to: u32) -> Option<f64> {
        let side_from = self.carriageway_of(from)?;
        let side_to = self.carriageway_of(to)?;
        if side_from != side_to || from == to {
            return None;
        }
        let from_c = self.lane_center_canonical(from)?;
        let (to_lo, to_hi) = self.lane_band_canonical(to)?;
        let to_c = 0.5 * (to_lo + to_hi);
        Some(if to_c > from_c { to_lo } else { to_hi })
    }
}

/// Surrounding-vehicle ids at one frame; 0 means no such vehicle. The
/// left/right columns are relative to the driving direction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborIds {
    pub preceding: u64,
    pub following: u64,
    pub left_preceding: u64,
    pub left_alongside: u64,
    pub left_following: u64,
    pub right_preceding: u64,
    pub right_alongside: u64,
    pub right_following: u64,
}

/// One vehicle-frame. Raw orientation: image coordinates, (x, y) top-left
/// bbox corner. Canonical orientation: driver frame, (x, y) left-rear corner.
/// `width` is the body extent along travel, `height` across it, in both.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub frame: u32,
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
    pub vx: f64,
    pub vy: f64,
    pub ax: f64,
    pub ay: f64,
    pub lane_id: u32,
    pub neighbors: NeighborIds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Orientation {
    /// As parsed: image coordinates.
    Raw,
    /// Driver frame on the given carriageway.
    Canonical(Carriageway),
}

/// One vehicle's contiguous trajectory. Tracks split at frame gaps carry the
/// same `track_id` with distinct `segment` numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub track_id: u64,
    pub segment: u32,
    pub orientation: Orientation,
    pub points: Vec<TrackPoint>,
}

impl Track {
    pub fn first_frame(&self) -> u32 {
        self.points[0].frame
    }

    pub fn last_frame(&self) -> u32 {
        self.points[self.points.len() - 1].frame
    }

    /// Point at an absolute frame number. Frames are contiguous within a
    /// track, so this is index arithmetic.
    pub fn point_at(&self, frame: u32) -> Option<&TrackPoint> {
        if self.points.is_empty() || frame < self.first_frame() || frame > self.last_frame() {
            return None;
        }
        let idx = (frame - self.first_frame()) as usize;
        debug_assert_eq!(self.points[idx].frame, frame);
        Some(&self.points[idx])
    }
}

/// What to do when a track's frames jump by more than one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapPolicy {
    /// Fail the parse, naming the track and frames.
    Reject,
    /// Split the track into contiguous segments.
    Split,
}

#[derive(Debug, Clone, Copy)]
pub struct ParseOptions {
    pub on_frame_gap: GapPolicy,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions {
            on_frame_gap: GapPolicy::Reject,
        }
    }
}

fn parse_markings(field: &str, path: &str, row: usize, column: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for part in field.split(';') {
        let v: f64 = part.trim().parse().map_err(|_| {
            Error::parse(
                path,
                row,
                format!("column `{column}`: invalid marking value `{part}`"),
            )
        })?;
        if !v.is_finite() {
            return Err(Error::parse(
                path,
                row,
                format!("column `{column}`: non-finite marking"),
            ));
        }
        out.push(v);
    }
    Ok(out)
}

struct ColumnMap {
    indices: BTreeMap<&'static str, usize>,
}

impl ColumnMap {
    fn build(headers: &csv::StringRecord, required: &[&'static str], path: &str) -> Result<Self> {
        let mut indices = BTreeMap::new();
        for name in required {
            let idx = headers
                .iter()
                .position(|h| h.trim() == *name)
                .ok_or_else(|| Error::parse(path, 1, format!("missing column `{name}`")))?;
            indices.insert(*name, idx);
        }
        Ok(ColumnMap { indices })
    }

    fn get<'r>(&self, record: &'r csv::StringRecord, name: &str, path: &str, row: usize) -> Result<&'r str> {
        let idx = self.indices[name];
        let field = record
            .get(idx)
            .ok_or_else(|| Error::parse(path, row, format!("missing value in column `{name}`")))?;
        let field = field.trim();
        if field.is_empty() {
            return Err(Error::parse(
                path,
                row,
                format!("missing value in column `{name}`"),
            ));
        }
        Ok(field)
    }
}

fn parse_field<T: std::str::FromStr>(
    map: &ColumnMap,
    record: &csv::StringRecord,
    name: &str,
    path: &str,
    row: usize,
) -> Result<T> {
    let field = map.get(record, name, path, row)?;
    field.parse().map_err(|_| {
        Error::parse(
            path,
            row,
            format!("column `{name}`: cannot parse `{field}`"),
        )
    })
}

fn parse_finite(
    map: &ColumnMap,
    record: &csv::StringRecord,
    name: &str,
    path: &str,
    row: usize,
) -> Result<f64> {
    let v: f64 = parse_field(map, record, name, path, row)?;
    if !v.is_finite() {
        return Err(Error::parse(
            path,
            row,
            format!("column `{name}`: non-finite value"),
        ));
    }
    Ok(v)
}

/// Parse a recording-meta CSV. Requires columns `id`, `frameRate`,
/// `upperLaneMarkings`, `lowerLaneMarkings`; other columns are ignored.
pub fn parse_recording_meta(path: &Path) -> Result<RecordingMeta> {
    let path_str = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::parse(&path_str, 1, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(&path_str, 1, e.to_string()))?
        .clone();
    let map = ColumnMap::build(
        &headers,
        &["id", "frameRate", "upperLaneMarkings", "lowerLaneMarkings"],
        &path_str,
    )?;
    let record = reader
        .records()
        .next()
        .ok_or_else(|| Error::parse(&path_str, 2, "no data row"))?
        .map_err(|e| Error::parse(&path_str, 2, e.to_string()))?;
    let row = 2;
    let id: u32 = parse_field(&map, &record, "id", &path_str, row)?;
    let frame_rate = parse_finite(&map, &record, "frameRate", &path_str, row)?;
    let upper = parse_markings(
        map.get(&record, "upperLaneMarkings", &path_str, row)?,
        &path_str,
        row,
        "upperLaneMarkings",
    )?;
    let lower = parse_markings(
        map.get(&record, "lowerLaneMarkings", &path_str, row)?,
        &path_str,
        row,
        "lowerLaneMarkings",
    )?;
    RecordingMeta::new(id, frame_rate, upper, lower)
        .map_err(|e| Error::parse(&path_str, row, e.to_string()))
}

const TRACK_COLUMNS: [&str; 19] = [
    "frame",
    "id",
    "x",
    "y",
    "width",
    "height",
    "xVelocity",
    "yVelocity",
    "xAcceleration",
    "yAcceleration",
    "precedingId",
    "followingId",
    "leftPrecedingId",
    "leftAlongsideId",
    "leftFollowingId",
    "rightPrecedingId",
    "rightAlongsideId",
    "rightFollowingId",
    "laneId",
];

/// Parse a tracks CSV into raw-orientation tracks.
///
/// Rows must be grouped into one contiguous block per vehicle id, with frames
/// strictly ascending inside each block. A frame gap triggers the configured
/// [`GapPolicy`]. The returned tracks are sorted by (track_id, segment).
pub fn parse_tracks(path: &Path, opts: &ParseOptions) -> Result<Vec<Track>> {
    let path_str = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::parse(&path_str, 1, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(&path_str, 1, e.to_string()))?
        .clone();
    let map = ColumnMap::build(&headers, &TRACK_COLUMNS, &path_str)?;

    let mut tracks: Vec<Track> = Vec::new();
    let mut finished_ids: BTreeSet<u64> = BTreeSet::new();
    let mut current: Option<Track> = None;

    let mut row = 1usize;
    for record in reader.records() {
        row += 1;
        let record = record.map_err(|e| Error::parse(&path_str, row, e.to_string()))?;
        let frame: u32 = parse_field(&map, &record, "frame", &path_str, row)?;
        let id: u64 = parse_field(&map, &record, "id", &path_str, row)?;
        let point = TrackPoint {
            frame,
            x: parse_finite(&map, &record, "x", &path_str, row)?,
            y: parse_finite(&map, &record, "y", &path_str, row)?,
            width: parse_finite(&map, &record, "width", &path_str, row)?,
            height: parse_finite(&map, &record, "height", &path_str, row)?,
            vx: parse_finite(&map, &record, "xVelocity", &path_str, row)?,
            vy: parse_finite(&map, &record, "yVelocity", &path_str, row)?,
            ax: parse_finite(&map, &record, "xAcceleration", &path_str, row)?,
            ay: parse_finite(&map, &record, "yAcceleration", &path_str, row)?,
            lane_id: parse_field(&map, &record, "laneId", &path_str, row)?,
            neighbors: NeighborIds {
                preceding: parse_field(&map, &record, "precedingId", &path_str, row)?,
                following: parse_field(&map, &record, "followingId", &path_str, row)?,
                left_preceding: parse_field(&map, &record, "leftPrecedingId", &path_str, row)?,
                left_alongside: parse_field(&map, &record, "leftAlongsideId", &path_str, row)?,
                left_following: parse_field(&map, &record, "leftFollowingId", &path_str, row)?,
                right_preceding: parse_field(&map, &record, "rightPrecedingId", &path_str, row)?,
                right_alongside: parse_field(&map, &record, "rightAlongsideId", &path_str, row)?,
                right_following: parse_field(&map, &record, "rightFollowingId", &path_str, row)?,
            },
        };
        if point.width <= 0.0 || point.height <= 0.0 {
            return Err(Error::parse(&path_str, row, "non-positive vehicle extent"));
        }

        let start_new = match &current {
            Some(t) => t.track_id != id,
            None => true,
        };
        if start_new {
            if let Some(t) = current.take() {
                finished_ids.insert(t.track_id);
                tracks.push(t);
            }
            if finished_ids.contains(&id) {
                return Err(Error::parse(
                    &path_str,
                    row,
                    format!("track {id} appears in multiple row blocks"),
                ));
            }
            current = Some(Track {
                track_id: id,
                segment: 0,
                orientation: Orientation::Raw,
                points: vec![point],
            });
            continue;
        }

        let t = current.as_mut().unwrap();
        let prev = t.last_frame();
        if frame <= prev {
            return Err(Error::parse(
                &path_str,
                row,
                format!("track {id}: frames not strictly ascending ({prev} then {frame})"),
            ));
        }
        if frame > prev + 1 {
            match opts.on_frame_gap {
                GapPolicy::Reject => {
                    return Err(Error::parse(
                        &path_str,
                        row,
                        format!("track {id}: frame gap ({prev} then {frame})"),
                    ));
                }
                GapPolicy::Split => {
                    let segment = t.segment + 1;
                    let done = current.take().unwrap();
                    tracks.push(done);
                    current = Some(Track {
                        track_id: id,
                        segment,
                        orientation: Orientation::Raw,
                        points: vec![point],
                    });
                    continue;
                }
            }
        }
        t.points.push(point);
    }
    if let Some(t) = current.take() {
        tracks.push(t);
    }
    if tracks.is_empty() {
        return Err(Error::parse(&path_str, 1, "no data rows"));
    }
    tracks.sort_by_key(|t| (t.track_id, t.segment));
    Ok(tracks)
}

/// Rewrite a raw track into the canonical driver frame. Idempotent: a track
/// that is already canonical is returned unchanged.
///
/// Fails if any point's lane id is unknown to `meta` or the track's lanes
/// span both carriageways.
pub fn normalize_direction(track: &Track, meta: &RecordingMeta) -> Result<Track> {
    if let Orientation::Canonical(_) = track.orientation {
        return Ok(track.clone());
    }
    if track.points.is_empty() {
        return Err(Error::data(format!("track {}: empty", track.track_id)));
    }
    let mut side: Option<Carriageway> = None;
    for p in &track.points {
        let s = meta.carriageway_of(p.lane_id).ok_or_else(|| {
            Error::data(format!(
                "track {}: unknown lane id {} at frame {}",
                track.track_id, p.lane_id, p.frame
            ))
        })?;
        match side {
            None => side = Some(s),
            Some(prev) if prev != s => {
                return Err(Error::data(format!(
                    "track {}: spans both carriageways",
                    track.track_id
                )));
            }
            _ => {}
        }
    }
    let side = side.unwrap();
    let points = track
        .points
        .iter()
        .map(|p| {
            let mut q = *p;
            match side {
                // Travel toward +x; driver's left is −y in image coordinates.
                Carriageway::Lower => {
                    q.y = -p.y;
                    q.vy = -p.vy;
                    q.ay = -p.ay;
                }
                // Travel toward −x; driver's left is +y. The rear of the body
                // is its max-x edge, so the corner moves to x + width.
                Carriageway::Upper => {
                    q.x = -(p.x + p.width);
                    q.vx = -p.vx;
                    q.ax = -p.ax;
                    q.y = p.y + p.height;
                }
            }
            q
        })
        .collect();
    Ok(Track {
        track_id: track.track_id,
        segment: track.segment,
        orientation: Orientation::Canonical(side),
        points,
    })
}

/// Write a recording-meta CSV that [`parse_recording_meta`] reads back
/// identically.
pub fn write_recording_meta_csv(meta: &RecordingMeta, path: &Path) -> Result<()> {
    let mut out = String::from("id,frameRate,upperLaneMarkings,lowerLaneMarkings\n");
    let fmt_markings =
        |m: &[f64]| m.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(";");
    out.push_str(&format!(
        "{},{},{},{}\n",
        meta.recording_id,
        fmt_f64(meta.frame_rate),
        fmt_markings(&meta.upper_markings),
        fmt_markings(&meta.lower_markings),
    ));
    atomic_write(path, out.as_bytes())
}

/// Write raw-orientation tracks as a tracks CSV that [`parse_tracks`] reads
/// back identically. Tracks are written in (track_id, segment) order.
pub fn write_tracks_csv(tracks: &[Track], path: &Path) -> Result<()> {
    let mut order: Vec<&Track> = tracks.iter().collect();
    order.sort_by_key(|t| (t.track_id, t.segment));
    let mut out = String::new();
    out.push_str(&TRACK_COLUMNS.join(","));
    out.push('\n');
    for t in &order {
        debug_assert_eq!(t.orientation, Orientation::Raw);
        for p in &t.points {
            let n = &p.neighbors;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                p.frame,
                t.track_id,
                fmt_f64(p.x),
                fmt_f64(p.y),
                fmt_f64(p.width),
                fmt_f64(p.height),
                fmt_f64(p.vx),
                fmt_f64(p.vy),
                fmt_f64(p.ax),
                fmt_f64(p.ay),
                n.preceding,
                n.following,
                n.left_preceding,
                n.left_alongside,
                n.left_following,
                n.right_preceding,
                n.right_alongside,
                n.right_following,
                p.lane_id,
            ));
        }
    }
    atomic_write(path, out.as_bytes())
}

/// Canonical tracks of one recording, indexed for per-frame neighbor lookup.
#[derive(Debug, Clone)]
pub struct TrackStore {
    tracks: Vec<Track>,
    by_id: BTreeMap<u64, Vec<usize>>,
}

impl TrackStore {
    pub fn new(tracks: Vec<Track>) -> Self {
        let mut by_id: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for (i, t) in tracks.iter().enumerate() {
            by_id.entry(t.track_id).or_default().push(i);
        }
        TrackStore { tracks, by_id }
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn get(&self, track_id: u64, segment: u32) -> Option<&Track> {
        self.by_id.get(&track_id)?.iter().find_map(|&i| {
            let t = &self.tracks[i];
            (t.segment == segment).then_some(t)
        })
    }

    /// The vehicle's state at an absolute frame, whichever segment holds it.
    pub fn point_of(&self, track_id: u64, frame: u32) -> Option<&TrackPoint> {
        self.by_id
            .get(&track_id)?
            .iter()
            .find_map(|&i| self.tracks[i].point_at(frame))
    }
}
