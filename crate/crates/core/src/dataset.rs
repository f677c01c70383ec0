//! Corpus-level dataset assembly and artifact formats.
//!
//! [`build_lc_decision_dataset`] walks every recording, normalizes tracks,
//! detects and bounds lane-change events, cuts the paired
//! preparation/lane-keeping windows, and keeps a pair only if both windows
//! qualify (constant lane, clear of event executions, all three surrounding
//! vehicles present throughout). Each accepted pair contributes one
//! lane-change and one lane-keeping sample sharing a `pair_id`; counts stay
//! balanced by construction. Everything rejected lands in [`DropStats`]
//! under a named reason.
//!
//! Artifacts: `windows.csv` (one row per window frame, self-contained),
//! `events.json` (event records with style features plus drop statistics),
//! and `styles.csv` (pair → driving style, written by the clustering stage).

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clustering::{style_features, DrivingStyle, StyleFeatures};
use crate::error::{Error, Result};
use crate::extract::{
    compute_lc_bounds, detect_lane_transitions, extract_lk_window, extract_prep_window,
    resolve_neighbors, LaneChangeEvent, LcDirection, WindowLabel,
};
use crate::features::{
    aggregate_features, frame_features, AggregateFeatures, FrameFeatures, FRAME_FEATURE_NAMES,
};
use crate::ingest::{normalize_direction, RecordingMeta, Track, TrackStore};
use crate::provenance::{atomic_write, fmt_f64, Provenance};

/// One observation window with its features. `pair_id` joins the
/// lane-change sample to its lane-keeping twin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSample {
    pub pair_id: u32,
    pub recording_id: u32,
    pub track_id: u64,
    pub segment: u32,
    pub label: WindowLabel,
    pub direction: LcDirection,
    pub start_frame: u32,
    pub frames: Vec<FrameFeatures>,
    pub aggregate: AggregateFeatures,
}

/// The extracted decision dataset: balanced lane-change / lane-keeping
/// samples in deterministic (recording, track, event) order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionDataset {
    pub frame_rate: f64,
    pub samples: Vec<WindowSample>,
}

impl DecisionDataset {
    pub fn pair_count(&self) -> usize {
        self.samples.len() / 2
    }

    /// Pair ids in first-appearance order.
    pub fn pair_ids(&self) -> Vec<u32> {
        let mut out = Vec::new();
        for s in &self.samples {
            if out.last() != Some(&s.pair_id) {
                out.push(s.pair_id);
            }
        }
        out.dedup();
        out
    }
}

/// An accepted event with its style summary. Every accepted event is
/// recorded (style clustering runs over executions, which need no
/// neighbors); `pair_id` is set when the event also produced a qualified
/// decision pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub pair_id: Option<u32>,
    pub recording_id: u32,
    pub track_id: u64,
    pub segment: u32,
    pub event: LaneChangeEvent,
    pub style_features: StyleFeatures,
}

/// Where inputs were lost, by reason.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DropStats {
    pub tracks_rejected: BTreeMap<String, usize>,
    pub events_rejected: BTreeMap<String, usize>,
    pub pairs_dropped: BTreeMap<String, usize>,
    /// Negative bumper gaps clamped to zero while computing features.
    pub clamped_clearances: u64,
    pub transitions_detected: usize,
    pub events_accepted: usize,
    pub qualified_pairs: usize,
}

fn bump(map: &mut BTreeMap<String, usize>, key: impl Into<String>) {
    *map.entry(key.into()).or_insert(0) += 1;
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusExtraction {
    pub dataset: DecisionDataset,
    pub events: Vec<EventRecord>,
    pub drops: DropStats,
}

/// Extract the decision dataset from parsed recordings. Tracks may be raw or
/// already canonical; they are normalized here. Recordings are processed in
/// the given order, tracks by (track_id, segment), events by frame.
pub fn build_lc_decision_dataset(
    recordings: &[(RecordingMeta, Vec<Track>)],
) -> Result<CorpusExtraction> {
    let mut samples = Vec::new();
    let mut events_out = Vec::new();
    let mut drops = DropStats::default();
    let mut pair_id = 0u32;
    let mut frame_rate = None;

    for (meta, tracks) in recordings {
        match frame_rate {
            None => frame_rate = Some(meta.frame_rate),
            Some(fr) if fr != meta.frame_rate => {
                return Err(Error::data(format!(
                    "recordings mix frame rates ({fr} and {})",
                    meta.frame_rate
                )));
            }
            _ => {}
        }
        let mut canonical = Vec::with_capacity(tracks.len());
        for t in tracks {
            match normalize_direction(t, meta) {
                Ok(c) => canonical.push(c),
                Err(e) => {
                    let reason = if e.to_string().contains("both carriageways") {
                        "spans_carriageways"
                    } else {
                        "unknown_lane"
                    };
                    bump(&mut drops.tracks_rejected, reason);
                }
            }
        }
        canonical.sort_by_key(|t| (t.track_id, t.segment));
        let store = TrackStore::new(canonical);

        for track in store.tracks() {
            let transitions = detect_lane_transitions(track, meta);
            drops.transitions_detected += transitions.len();
            let mut accepted = Vec::new();
            for tr in &transitions {
                match compute_lc_bounds(track, tr, meta) {
                    Ok(ev) => accepted.push(ev),
                    Err(reason) => bump(&mut drops.events_rejected, reason.to_string()),
                }
            }
            drops.events_accepted += accepted.len();

            for ev in &accepted {
                let record = |pair: Option<u32>| EventRecord {
                    pair_id: pair,
                    recording_id: meta.recording_id,
                    track_id: track.track_id,
                    segment: track.segment,
                    event: *ev,
                    style_features: style_features(ev, track),
                };
                let windows = extract_prep_window(track, ev, meta, &accepted).and_then(|prep| {
                    extract_lk_window(track, ev, meta, &accepted).map(|lk| (prep, lk))
                });
                let (prep, lk) = match windows {
                    Ok(w) => w,
                    Err(reason) => {
                        bump(&mut drops.pairs_dropped, reason.to_string());
                        events_out.push(record(None));
                        continue;
                    }
                };
                let groups = resolve_neighbors(&prep, track, &store)
                    .and_then(|g1| resolve_neighbors(&lk, track, &store).map(|g2| (g1, g2)));
                let (prep_group, lk_group) = match groups {
                    Ok(g) => g,
                    Err(reason) => {
                        bump(&mut drops.pairs_dropped, reason.to_string());
                        events_out.push(record(None));
                        continue;
                    }
                };

                let mut pair_samples = Vec::with_capacity(2);
                for (window, group) in [(prep, &prep_group), (lk, &lk_group)] {
                    let (frames, clamped) = frame_features(&window, track, group, &store)?;
                    drops.clamped_clearances += clamped;
                    let aggregate = aggregate_features(&frames)?;
                    pair_samples.push(WindowSample {
                        pair_id,
                        recording_id: meta.recording_id,
                        track_id: track.track_id,
                        segment: track.segment,
                        label: window.label,
                        direction: window.direction,
                        start_frame: window.start_frame,
                        frames,
                        aggregate,
                    });
                }
                samples.extend(pair_samples);
                events_out.push(record(Some(pair_id)));
                drops.qualified_pairs += 1;
                pair_id += 1;
            }
        }
    }

    let paired = events_out.iter().filter(|e| e.pair_id.is_some()).count();
    debug_assert_eq!(samples.len(), 2 * paired);
    Ok(CorpusExtraction {
        dataset: DecisionDataset {
            frame_rate: frame_rate
                .ok_or_else(|| Error::data("no recordings to extract from"))?,
            samples,
        },
        events: events_out,
        drops,
    })
}

/// Extraction summary persisted beside `windows.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionManifest {
    pub provenance: Provenance,
    pub frame_rate: f64,
    pub window_len: usize,
    pub drops: DropStats,
    pub events: Vec<EventRecord>,
}

fn label_str(label: WindowLabel) -> &'static str {
    match label {
        WindowLabel::LaneChange => "lane_change",
        WindowLabel::LaneKeep => "lane_keep",
    }
}

fn parse_label(s: &str) -> Result<WindowLabel> {
    match s {
        "lane_change" => Ok(WindowLabel::LaneChange),
        "lane_keep" => Ok(WindowLabel::LaneKeep),
        other => Err(Error::data(format!("unknown window label `{other}`"))),
    }
}

fn parse_direction(s: &str) -> Result<LcDirection> {
    match s {
        "left" => Ok(LcDirection::Left),
        "right" => Ok(LcDirection::Right),
        other => Err(Error::data(format!("unknown direction `{other}`"))),
    }
}

/// Write the dataset as a self-contained CSV: provenance and frame rate in
/// leading comment lines, then one row per window frame.
pub fn write_windows_csv(
    dataset: &DecisionDataset,
    path: &Path,
    prov: &Provenance,
) -> Result<()> {
    let mut out = String::new();
    out.push_str(&prov.csv_comment());
    out.push_str(&format!("# frame_rate={}\n", fmt_f64(dataset.frame_rate)));
    out.push_str("pair_id,label,recording_id,track_id,segment,direction,frame");
    for name in FRAME_FEATURE_NAMES {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for s in &dataset.samples {
        for (i, f) in s.frames.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}",
                s.pair_id,
                label_str(s.label),
                s.recording_id,
                s.track_id,
                s.segment,
                s.direction,
                s.start_frame + i as u32,
            ));
            for v in f.to_array() {
                out.push(',');
                out.push_str(&fmt_f64(v));
            }
            out.push('\n');
        }
    }
    atomic_write(path, out.as_bytes())
}

/// Read a `windows.csv` back into a dataset. Aggregates are recomputed from
/// the frame rows (bit-identical to the originals, which were computed from
/// the same values).
pub fn read_windows_csv(path: &Path) -> Result<DecisionDataset> {
    let path_str = path.display().to_string();
    let file = std::fs::File::open(path)?;
    let mut frame_rate: Option<f64> = None;
    for line in std::io::BufReader::new(&file).lines() {
        let line = line?;
        let Some(comment) = line.strip_prefix('#') else {
            break;
        };
        if let Some(v) = comment.trim().strip_prefix("frame_rate=") {
            frame_rate = Some(v.trim().parse().map_err(|_| {
                Error::parse(&path_str, 2, format!("bad frame_rate comment `{v}`"))
            })?);
        }
    }
    let frame_rate = frame_rate
        .ok_or_else(|| Error::parse(&path_str, 1, "missing `# frame_rate=` comment"))?;

    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::parse(&path_str, 1, e.to_string()))?;
    let mut samples: Vec<WindowSample> = Vec::new();
    let mut row = 3usize;
    for record in reader.records() {
        row += 1;
        let r = record.map_err(|e| Error::parse(&path_str, row, e.to_string()))?;
        let field = |i: usize| -> Result<&str> {
            r.get(i)
                .ok_or_else(|| Error::parse(&path_str, row, format!("missing column {i}")))
        };
        let parse_num = |i: usize| -> Result<f64> {
            field(i)?.parse().map_err(|_| {
                Error::parse(&path_str, row, format!("bad number in column {i}"))
            })
        };
        let pair_id: u32 = field(0)?
            .parse()
            .map_err(|_| Error::parse(&path_str, row, "bad pair_id"))?;
        let label = parse_label(field(1)?)?;
        let frame: u32 = field(6)?
            .parse()
            .map_err(|_| Error::parse(&path_str, row, "bad frame"))?;
        let mut values = [0.0; FRAME_FEATURE_NAMES.len()];
        for (j, v) in values.iter_mut().enumerate() {
            *v = parse_num(7 + j)?;
        }
        let features = FrameFeatures::from_array(values);

        let continues = samples
            .last()
            .map(|s| s.pair_id == pair_id && s.label == label)
            .unwrap_or(false);
        if continues {
            let s = samples.last_mut().unwrap();
            if s.start_frame + s.frames.len() as u32 != frame {
                return Err(Error::parse(&path_str, row, "window frames not contiguous"));
            }
            s.frames.push(features);
        } else {
            samples.push(WindowSample {
                pair_id,
                recording_id: field(2)?
                    .parse()
                    .map_err(|_| Error::parse(&path_str, row, "bad recording_id"))?,
                track_id: field(3)?
                    .parse()
                    .map_err(|_| Error::parse(&path_str, row, "bad track_id"))?,
                segment: field(4)?
                    .parse()
                    .map_err(|_| Error::parse(&path_str, row, "bad segment"))?,
                label,
                direction: parse_direction(field(5)?)?,
                start_frame: frame,
                frames: vec![features],
                aggregate: AggregateFeatures {
                    mean: [0.0; 16],
                    std: [0.0; 16],
                },
            });
        }
    }
    if samples.is_empty() {
        return Err(Error::parse(&path_str, 1, "no window rows"));
    }
    for s in &mut samples {
        s.aggregate = aggregate_features(&s.frames)?;
    }
    Ok(DecisionDataset {
        frame_rate,
        samples,
    })
}

/// Write the pair → style assignment produced by clustering.
pub fn write_styles_csv(
    styles: &BTreeMap<u32, DrivingStyle>,
    path: &Path,
    prov: &Provenance,
) -> Result<()> {
    let mut out = String::new();
    out.push_str(&prov.csv_comment());
    out.push_str("pair_id,style\n");
    for (pair_id, style) in styles {
        out.push_str(&format!("{pair_id},{style}\n"));
    }
    atomic_write(path, out.as_bytes())
}

pub fn read_styles_csv(path: &Path) -> Result<BTreeMap<u32, DrivingStyle>> {
    let path_str = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::parse(&path_str, 1, e.to_string()))?;
    let mut out = BTreeMap::new();
    let mut row = 2usize;
    for record in reader.records() {
        row += 1;
        let r = record.map_err(|e| Error::parse(&path_str, row, e.to_string()))?;
        let pair_id: u32 = r
            .get(0)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::parse(&path_str, row, "bad pair_id"))?;
        let style: DrivingStyle = r
            .get(1)
            .ok_or_else(|| Error::parse(&path_str, row, "missing style"))?
            .parse()?;
        if out.insert(pair_id, style).is_some() {
            return Err(Error::parse(
                &path_str,
                row,
                format!("duplicate pair_id {pair_id}"),
            ));
        }
    }
    Ok(out)
}
