//! The pipeline stages behind the subcommands. Each command reads the
//! previous stage's artifacts from the output directory, writes its own
//! under a stage subdirectory, and stamps every file with the run's
//! provenance, so a finished directory is self-describing.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use lanecast::clustering::{kmeans_fit, style_report, ClusterModel, DrivingStyle, StyleReportRow};
use lanecast::dataset::{
    build_lc_decision_dataset, read_styles_csv, read_windows_csv, write_styles_csv,
    write_windows_csv, DropStats, ExtractionManifest,
};
use lanecast::error::{Error, Result};
use lanecast::eval::{
    run_experiment, sweep, write_history_csv, write_leaderboard_csv, write_roc_csv,
    ConfusionMatrix, Metrics, RocCurve, SweepEntry, STYLE_COLUMNS,
};
use lanecast::extract::{window_len, WindowLabel};
use lanecast::fuzzy::{build_dataset_variant, DataForm, DatasetVariant, ModelInput};
use lanecast::ingest::{
    parse_recording_meta, parse_tracks, write_recording_meta_csv, write_tracks_csv, ParseOptions,
    RecordingMeta, Track,
};
use lanecast::network::StopCause;
use lanecast::provenance::{atomic_write, fmt_f64, read_json, write_json, Provenance};
use lanecast::seeds::derive_seed;
use lanecast::synth::{corpus, ChangeTruth};
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;

/// Where each stage's artifacts live under the output directory.
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Layout {
        Layout {
            root: root.to_path_buf(),
        }
    }

    pub fn synth_dir(&self) -> PathBuf {
        self.root.join("synth")
    }
    pub fn ground_truth_json(&self) -> PathBuf {
        self.synth_dir().join("ground_truth.json")
    }
    pub fn extract_dir(&self) -> PathBuf {
        self.root.join("extract")
    }
    pub fn windows_csv(&self) -> PathBuf {
        self.extract_dir().join("windows.csv")
    }
    pub fn manifest_json(&self) -> PathBuf {
        self.extract_dir().join("manifest.json")
    }
    pub fn drops_csv(&self) -> PathBuf {
        self.extract_dir().join("drops.csv")
    }
    pub fn cluster_dir(&self) -> PathBuf {
        self.root.join("cluster")
    }
    pub fn model_json(&self) -> PathBuf {
        self.cluster_dir().join("model.json")
    }
    pub fn styles_csv(&self) -> PathBuf {
        self.cluster_dir().join("styles.csv")
    }
    pub fn style_report_csv(&self) -> PathBuf {
        self.cluster_dir().join("style_report.csv")
    }
    pub fn datasets_dir(&self) -> PathBuf {
        self.root.join("datasets")
    }
    pub fn datasets_manifest_json(&self) -> PathBuf {
        self.datasets_dir().join("manifest.json")
    }
    pub fn runs_dir(&self) -> PathBuf {
        self.root.join("runs")
    }
    pub fn run_dir(&self, label: &str) -> PathBuf {
        self.runs_dir().join(label)
    }
    pub fn sweep_dir(&self) -> PathBuf {
        self.root.join("sweep")
    }
    pub fn leaderboard_csv(&self) -> PathBuf {
        self.sweep_dir().join("leaderboard.csv")
    }
    pub fn sweep_summary_json(&self) -> PathBuf {
        self.sweep_dir().join("summary.json")
    }
    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
    pub fn summary_json(&self) -> PathBuf {
        self.report_dir().join("summary.json")
    }
    pub fn summary_csv(&self) -> PathBuf {
        self.report_dir().join("summary.csv")
    }
}

/// Ground truth of a generated corpus, keyed by recording.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruthDoc {
    pub provenance: Provenance,
    pub recordings: Vec<RecordingTruth>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordingTruth {
    pub recording_id: u32,
    pub changes: Vec<ChangeTruth>,
}

/// The clustering artifact: fitted model plus its summary table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterDoc {
    pub provenance: Provenance,
    pub events: usize,
    pub members: BTreeMap<String, usize>,
    pub report: Vec<StyleReportRow>,
    pub model: ClusterModel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetsDoc {
    pub provenance: Provenance,
    pub files: Vec<DatasetFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetFile {
    pub variant: String,
    pub form: String,
    pub file: String,
    pub rows: usize,
    pub columns: usize,
}

/// One train run's scores and pointers to its model files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunDoc {
    pub provenance: Provenance,
    pub variant: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    pub classifier: String,
    pub split_ratio: f64,
    pub train_pairs: usize,
    pub test_pairs: usize,
    pub train: Metrics,
    pub test: Metrics,
    pub test_confusion: ConfusionMatrix,
    pub test_roc: RocCurve,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub importance: Option<Vec<ImportanceEntry>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub history: Option<HistorySummary>,
    pub model_file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImportanceEntry {
    pub feature: String,
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistorySummary {
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub stop_cause: StopCause,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepDoc {
    pub provenance: Provenance,
    pub classifier: String,
    pub baselines: Vec<SweepEntry>,
    pub fuzzy: Vec<SweepEntry>,
    pub failures: Vec<(String, String)>,
}

/// The consolidated summary document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportDoc {
    pub provenance: Provenance,
    pub extraction: ExtractionSummary,
    pub clustering: ClusterDoc,
    pub runs: Vec<RunDoc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractionSummary {
    pub provenance: Provenance,
    pub frame_rate: f64,
    pub window_len: usize,
    pub qualified_pairs: usize,
    pub samples: usize,
    pub events_accepted: usize,
    pub drops: DropStats,
}

/// Prepend the provenance comment to an already-written CSV.
fn stamp_csv(path: &Path, prov: &Provenance) -> Result<()> {
    let body = fs::read(path)?;
    let mut out = prov.csv_comment().into_bytes();
    out.extend_from_slice(&body);
    atomic_write(path, &out)
}

fn require(path: PathBuf, produced_by: &str) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::data(format!(
            "missing artifact {} (run `lanecast {produced_by}` first)",
            path.display()
        )))
    }
}

pub fn cmd_synth(cfg: &PipelineConfig) -> Result<()> {
    let seed = cfg.seed()?;
    let prov = cfg.provenance()?;
    let layout = Layout::new(cfg.out_dir());
    let recordings = corpus(&cfg.synth.presets, seed)?;
    let dir = layout.synth_dir();
    fs::create_dir_all(&dir)?;
    let mut truths = Vec::with_capacity(recordings.len());
    let mut changes = 0;
    for rec in &recordings {
        let id = rec.meta.recording_id;
        let meta_path = dir.join(format!("{id:02}_recordingMeta.csv"));
        let tracks_path = dir.join(format!("{id:02}_tracks.csv"));
        write_recording_meta_csv(&rec.meta, &meta_path)?;
        write_tracks_csv(&rec.tracks, &tracks_path)?;
        stamp_csv(&meta_path, &prov)?;
        stamp_csv(&tracks_path, &prov)?;
        changes += rec.truth.changes.len();
        truths.push(RecordingTruth {
            recording_id: id,
            changes: rec.truth.changes.clone(),
        });
    }
    write_json(
        &layout.ground_truth_json(),
        &GroundTruthDoc {
            provenance: prov,
            recordings: truths,
        },
    )?;
    println!(
        "synth: {} recordings with {changes} scripted changes -> {}",
        recordings.len(),
        dir.display()
    );
    Ok(())
}

/// Parse every recording in `dir`, in ascending recording-id order.
fn load_recordings(dir: &Path, opts: &ParseOptions) -> Result<Vec<(RecordingMeta, Vec<Track>)>> {
    if !dir.is_dir() {
        return Err(Error::data(format!(
            "input directory {} does not exist",
            dir.display()
        )));
    }
    let mut meta_paths = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if name.ends_with("_recordingMeta.csv") {
            meta_paths.push(path);
        }
    }
    meta_paths.sort();
    if meta_paths.is_empty() {
        return Err(Error::data(format!(
            "no `*_recordingMeta.csv` files in {}",
            dir.display()
        )));
    }
    let mut out = Vec::with_capacity(meta_paths.len());
    for meta_path in meta_paths {
        let name = meta_path.file_name().and_then(|n| n.to_str()).unwrap();
        let stem = name.strip_suffix("_recordingMeta.csv").unwrap();
        let tracks_path = dir.join(format!("{stem}_tracks.csv"));
        if !tracks_path.is_file() {
            return Err(Error::data(format!(
                "{}: no matching {stem}_tracks.csv",
                meta_path.display()
            )));
        }
        let meta = parse_recording_meta(&meta_path)?;
        let tracks = parse_tracks(&tracks_path, opts)?;
        out.push((meta, tracks));
    }
    out.sort_by_key(|(m, _)| m.recording_id);
    for pair in out.windows(2) {
        if pair[0].0.recording_id == pair[1].0.recording_id {
            return Err(Error::data(format!(
                "recording id {} appears twice in {}",
                pair[0].0.recording_id,
                dir.display()
            )));
        }
    }
    Ok(out)
}

fn write_drops_csv(drops: &DropStats, path: &Path, prov: &Provenance) -> Result<()> {
    let mut out = String::new();
    out.push_str(&prov.csv_comment());
    out.push_str("stage,reason,count\n");
    for (stage, map) in [
        ("tracks", &drops.tracks_rejected),
        ("events", &drops.events_rejected),
        ("pairs", &drops.pairs_dropped),
    ] {
        for (reason, n) in map {
            out.push_str(&format!("{stage},{reason},{n}\n"));
        }
    }
    out.push_str(&format!(
        "summary,transitions_detected,{}\n",
        drops.transitions_detected
    ));
    out.push_str(&format!("summary,events_accepted,{}\n", drops.events_accepted));
    out.push_str(&format!("summary,qualified_pairs,{}\n", drops.qualified_pairs));
    out.push_str(&format!(
        "summary,clamped_clearances,{}\n",
        drops.clamped_clearances
    ));
    atomic_write(path, out.as_bytes())
}

pub fn cmd_extract(cfg: &PipelineConfig) -> Result<()> {
    let prov = cfg.provenance()?;
    let layout = Layout::new(cfg.out_dir());
    let data_dir = cfg.data_dir()?;
    let recordings = load_recordings(data_dir, &cfg.parse_options())?;
    println!(
        "extract: parsed {} recordings from {}",
        recordings.len(),
        data_dir.display()
    );
    let extraction = build_lc_decision_dataset(&recordings)?;
    fs::create_dir_all(layout.extract_dir())?;
    write_windows_csv(&extraction.dataset, &layout.windows_csv(), &prov)?;
    let manifest = ExtractionManifest {
        provenance: prov.clone(),
        frame_rate: extraction.dataset.frame_rate,
        window_len: window_len(extraction.dataset.frame_rate) as usize,
        drops: extraction.drops.clone(),
        events: extraction.events.clone(),
    };
    write_json(&layout.manifest_json(), &manifest)?;
    write_drops_csv(&extraction.drops, &layout.drops_csv(), &prov)?;
    println!(
        "extract: {} transitions -> {} events -> {} qualified pairs ({} samples) -> {}",
        extraction.drops.transitions_detected,
        extraction.drops.events_accepted,
        extraction.drops.qualified_pairs,
        extraction.dataset.samples.len(),
        layout.extract_dir().display()
    );
    Ok(())
}

fn write_style_report_csv(rows: &[StyleReportRow], path: &Path, prov: &Provenance) -> Result<()> {
    let mut out = String::new();
    out.push_str(&prov.csv_comment());
    out.push_str(
        "group,n,duration_mean,duration_std,lat_accel_mean,lat_accel_std,lat_speed_mean,lat_speed_std\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.group,
            r.n,
            fmt_f64(r.duration_mean),
            fmt_f64(r.duration_std),
            fmt_f64(r.lat_accel_mean),
            fmt_f64(r.lat_accel_std),
            fmt_f64(r.lat_speed_mean),
            fmt_f64(r.lat_speed_std),
        ));
    }
    atomic_write(path, out.as_bytes())
}

pub fn cmd_cluster(cfg: &PipelineConfig) -> Result<()> {
    let seed = cfg.seed()?;
    let prov = cfg.provenance()?;
    let layout = Layout::new(cfg.out_dir());
    let manifest: ExtractionManifest = read_json(&require(layout.manifest_json(), "extract")?)?;
    let opts = cfg.kmeans_options();
    if manifest.events.len() < opts.k {
        return Err(Error::data(format!(
            "clustering needs at least {} events, extraction produced {}",
            opts.k,
            manifest.events.len()
        )));
    }
    if opts.k == 1 {
        eprintln!("warning: k = 1 assigns every event the single `general` style");
    }
    let points: Vec<_> = manifest.events.iter().map(|e| e.style_features).collect();
    let (model, run) = kmeans_fit(&points, &opts, derive_seed(seed, "cluster"))?;
    let styles_vec: Vec<DrivingStyle> = run.assignments.iter().map(|&c| model.labels[c]).collect();
    let styles: BTreeMap<u32, DrivingStyle> = manifest
        .events
        .iter()
        .zip(&styles_vec)
        .filter_map(|(e, s)| e.pair_id.map(|pair| (pair, *s)))
        .collect();
    let mut members = BTreeMap::new();
    for style in [
        DrivingStyle::Aggressive,
        DrivingStyle::General,
        DrivingStyle::Cautious,
    ] {
        members.insert(
            style.to_string(),
            styles_vec.iter().filter(|s| **s == style).count(),
        );
    }
    let report = style_report(&points, &styles_vec);

    fs::create_dir_all(layout.cluster_dir())?;
    write_json(
        &layout.model_json(),
        &ClusterDoc {
            provenance: prov.clone(),
            events: points.len(),
            members: members.clone(),
            report: report.clone(),
            model,
        },
    )?;
    write_styles_csv(&styles, &layout.styles_csv(), &prov)?;
    write_style_report_csv(&report, &layout.style_report_csv(), &prov)?;
    let counts: Vec<String> = members.iter().map(|(s, n)| format!("{n} {s}")).collect();
    println!(
        "cluster: k = {} over {} events ({}) -> {}",
        opts.k,
        points.len(),
        counts.join(", "),
        layout.cluster_dir().display()
    );
    Ok(())
}

fn form_name(form: DataForm) -> &'static str {
    match form {
        DataForm::Aggregate => "aggregate",
        DataForm::Sequence => "sequence",
    }
}

fn label_name(label: WindowLabel) -> &'static str {
    match label {
        WindowLabel::LaneChange => "lane_change",
        WindowLabel::LaneKeep => "lane_keep",
    }
}

/// One dataset variant as a flat CSV: sample identity columns, then the
/// feature columns (aggregate form) or a step column plus the channel
/// columns (sequence form).
fn write_model_input_csv(input: &ModelInput, path: &Path, prov: &Provenance) -> Result<()> {
    let with_style = input.variant == DatasetVariant::BirdWithStyle;
    let mut out = String::new();
    out.push_str(&prov.csv_comment());
    out.push_str("pair_id,label,recording_id,track_id,segment");
    if with_style {
        out.push_str(",style");
    }
    if input.form == DataForm::Sequence {
        out.push_str(",step");
    }
    for name in &input.feature_names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for r in &input.rows {
        let mut head = format!(
            "{},{},{},{},{}",
            r.pair_id,
            label_name(r.label),
            r.recording_id,
            r.track_id,
            r.segment
        );
        if with_style {
            let style = r
                .style
                .ok_or_else(|| Error::data("style column missing on a row"))?;
            head.push(',');
            head.push_str(&style.to_string());
        }
        match input.form {
            DataForm::Aggregate => {
                let values = r
                    .aggregate
                    .as_ref()
                    .ok_or_else(|| Error::data("aggregate values missing on a row"))?;
                out.push_str(&head);
                for v in values {
                    out.push(',');
                    out.push_str(&fmt_f64(*v));
                }
                out.push('\n');
            }
            DataForm::Sequence => {
                let seq = r
                    .sequence
                    .as_ref()
                    .ok_or_else(|| Error::data("sequence values missing on a row"))?;
                for (step, row) in seq.rows().into_iter().enumerate() {
                    out.push_str(&head);
                    out.push_str(&format!(",{step}"));
                    for v in row {
                        out.push(',');
                        out.push_str(&fmt_f64(*v));
                    }
                    out.push('\n');
                }
            }
        }
    }
    atomic_write(path, out.as_bytes())
}

pub fn cmd_build_datasets(cfg: &PipelineConfig) -> Result<()> {
    let prov = cfg.provenance()?;
    let layout = Layout::new(cfg.out_dir());
    let dataset = read_windows_csv(&require(layout.windows_csv(), "extract")?)?;
    let styles = read_styles_csv(&require(layout.styles_csv(), "cluster")?)?;
    let opts = cfg.fuzzify_options();
    let explicit = cfg.explicit_coefficients()?;

    let mut jobs = vec![
        (DatasetVariant::Bird, DataForm::Aggregate),
        (DatasetVariant::Bird, DataForm::Sequence),
        (DatasetVariant::BirdWithStyle, DataForm::Aggregate),
    ];
    for c in &explicit {
        jobs.push((DatasetVariant::Fuzzy(*c), DataForm::Aggregate));
        jobs.push((DatasetVariant::Fuzzy(*c), DataForm::Sequence));
    }

    fs::create_dir_all(layout.datasets_dir())?;
    let mut files = Vec::with_capacity(jobs.len());
    for (variant, form) in jobs {
        let input = build_dataset_variant(&dataset, &styles, variant, form, opts)?;
        let file = format!("{}_{}.csv", variant.label(), form_name(form));
        write_model_input_csv(&input, &layout.datasets_dir().join(&file), &prov)?;
        files.push(DatasetFile {
            variant: variant.label(),
            form: form_name(form).into(),
            file,
            rows: input.rows.len(),
            columns: input.feature_names.len(),
        });
    }
    write_json(
        &layout.datasets_manifest_json(),
        &DatasetsDoc {
            provenance: prov,
            files: files.clone(),
        },
    )?;
    if explicit.is_empty() {
        println!("build-datasets: no explicit fuzzy coefficients; `sweep` builds the grid in memory");
    }
    println!(
        "build-datasets: {} files -> {}",
        files.len(),
        layout.datasets_dir().display()
    );
    Ok(())
}

fn write_importance_csv(
    entries: &[ImportanceEntry],
    path: &Path,
    prov: &Provenance,
) -> Result<()> {
    let mut out = String::new();
    out.push_str(&prov.csv_comment());
    out.push_str("feature,weight\n");
    for e in entries {
        out.push_str(&format!("{},{}\n", e.feature, fmt_f64(e.weight)));
    }
    atomic_write(path, out.as_bytes())
}

fn variant_coefficients(variant: DatasetVariant) -> (Option<f64>, Option<f64>) {
    match variant {
        DatasetVariant::Fuzzy(c) => (Some(c.a), Some(c.b)),
        _ => (None, None),
    }
}

pub fn cmd_train(cfg: &PipelineConfig) -> Result<()> {
    let seed = cfg.seed()?;
    let prov = cfg.provenance()?;
    let layout = Layout::new(cfg.out_dir());
    let dataset = read_windows_csv(&require(layout.windows_csv(), "extract")?)?;
    let styles = read_styles_csv(&require(layout.styles_csv(), "cluster")?)?;
    let variant = cfg.train_variant()?;
    let kind = cfg.classifier.kind;
    let ecfg = cfg.experiment_config();
    println!(
        "train: {} / {kind} on {} pairs",
        variant.label(),
        dataset.pair_count()
    );
    let outcome = run_experiment(&dataset, &styles, variant, kind, &ecfg, seed)?;

    let label = format!("{}_{kind}", variant.label());
    let dir = layout.run_dir(&label);
    fs::create_dir_all(&dir)?;
    let mut importance = None;
    let mut history = None;
    let model_file;
    match (&outcome.forest, &outcome.network) {
        (Some(forest), None) => {
            let input =
                build_dataset_variant(&dataset, &styles, variant, DataForm::Aggregate, ecfg.fuzzify)?;
            let mut names = input.feature_names;
            if variant == DatasetVariant::BirdWithStyle {
                names.extend(STYLE_COLUMNS.iter().map(|(n, _)| n.to_string()));
            }
            if names.len() != forest.importance.len() {
                return Err(Error::shape(
                    format!("{} importance weights", names.len()),
                    format!("{}", forest.importance.len()),
                ));
            }
            let mut entries: Vec<ImportanceEntry> = names
                .into_iter()
                .zip(&forest.importance)
                .map(|(feature, w)| ImportanceEntry {
                    feature,
                    weight: *w,
                })
                .collect();
            entries.sort_by(|x, y| {
                y.weight
                    .partial_cmp(&x.weight)
                    .expect("importance weights are finite")
                    .then_with(|| x.feature.cmp(&y.feature))
            });
            write_importance_csv(&entries, &dir.join("importance.csv"), &prov)?;
            let mut doc: serde_json::Value = serde_json::from_str(&forest.to_json()?)?;
            doc["provenance"] = serde_json::to_value(&prov)?;
            write_json(&dir.join("forest.json"), &doc)?;
            importance = Some(entries);
            model_file = "forest.json";
        }
        (None, Some((net, hist))) => {
            net.save_with(&dir.join("network.bin"), Some(&prov))?;
            write_history_csv(hist, &dir.join("history.csv"), &prov)?;
            history = Some(HistorySummary {
                epochs: hist.epochs.len(),
                best_epoch: hist.best_epoch,
                best_val_accuracy: hist.best_val_accuracy,
                stop_cause: hist.stop_cause,
            });
            model_file = "network.bin";
        }
        _ => return Err(Error::data("experiment produced no model")),
    }
    write_roc_csv(&outcome.test_roc, &dir.join("roc.csv"), &prov)?;
    let (a, b) = variant_coefficients(variant);
    let doc = RunDoc {
        provenance: prov,
        variant: variant.label(),
        a,
        b,
        classifier: kind.to_string(),
        split_ratio: ecfg.split_ratio,
        train_pairs: outcome.split.train_pairs.len(),
        test_pairs: outcome.split.test_pairs.len(),
        train: outcome.train,
        test: outcome.test,
        test_confusion: outcome.test_confusion,
        test_roc: outcome.test_roc,
        importance,
        history,
        model_file: model_file.into(),
    };
    write_json(&dir.join("metrics.json"), &doc)?;
    println!(
        "train: test accuracy {:.3}, auc {:.3} -> {}",
        doc.test.accuracy,
        doc.test.auc,
        dir.display()
    );
    Ok(())
}

/// Header plus the first `n` grid rows of a written leaderboard.
fn leaderboard_top(csv_text: &str, n: usize) -> (&str, Vec<&str>) {
    let mut lines = csv_text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().unwrap_or("");
    let top = lines.filter(|l| l.starts_with("F_")).take(n).collect();
    (header, top)
}

pub fn cmd_sweep(cfg: &PipelineConfig) -> Result<()> {
    let seed = cfg.seed()?;
    let prov = cfg.provenance()?;
    let layout = Layout::new(cfg.out_dir());
    let dataset = read_windows_csv(&require(layout.windows_csv(), "extract")?)?;
    let styles = read_styles_csv(&require(layout.styles_csv(), "cluster")?)?;
    let grid = cfg.grid()?;
    let kind = cfg.classifier.kind;
    println!(
        "sweep: {} grid points + baselines, classifier {kind}, {} pairs",
        grid.len(),
        dataset.pair_count()
    );
    let report = sweep(&dataset, &styles, &grid, kind, &cfg.experiment_config(), seed)?;
    fs::create_dir_all(layout.sweep_dir())?;
    write_leaderboard_csv(&report, &layout.leaderboard_csv(), &prov)?;
    write_json(
        &layout.sweep_summary_json(),
        &SweepDoc {
            provenance: prov,
            classifier: kind.to_string(),
            baselines: report.baselines.clone(),
            fuzzy: report.fuzzy.clone(),
            failures: report.failures.clone(),
        },
    )?;
    for (label, err) in &report.failures {
        eprintln!("warning: grid point {label} failed: {err}");
    }
    let text = fs::read_to_string(layout.leaderboard_csv())?;
    let (header, top) = leaderboard_top(&text, 5);
    println!(
        "sweep: top {} of {} grid rows by test accuracy:",
        top.len(),
        report.fuzzy.len()
    );
    println!("  {header}");
    for row in top {
        println!("  {row}");
    }
    Ok(())
}

fn summary_row(
    source: &str,
    variant: &str,
    classifier: &str,
    a: Option<f64>,
    b: Option<f64>,
    train: &Metrics,
    test: &Metrics,
) -> String {
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    let mut row = format!("{source},{variant},{classifier},{},{}", opt(a), opt(b));
    for m in [train, test] {
        for v in [m.accuracy, m.precision, m.recall, m.f1, m.auc] {
            row.push(',');
            row.push_str(&fmt_f64(v));
        }
    }
    row.push('\n');
    row
}

fn write_summary_csv(doc: &ReportDoc, path: &Path, prov: &Provenance) -> Result<()> {
    let mut out = String::new();
    out.push_str(&prov.csv_comment());
    out.push_str("source,variant,classifier,a,b");
    for split in ["train", "test"] {
        for metric in ["accuracy", "precision", "recall", "f1", "auc"] {
            out.push_str(&format!(",{split}_{metric}"));
        }
    }
    out.push('\n');
    for run in &doc.runs {
        out.push_str(&summary_row(
            "train",
            &run.variant,
            &run.classifier,
            run.a,
            run.b,
            &run.train,
            &run.test,
        ));
    }
    if let Some(sw) = &doc.sweep {
        for e in sw.baselines.iter().chain(&sw.fuzzy) {
            out.push_str(&summary_row(
                "sweep",
                &e.label,
                &sw.classifier,
                e.a,
                e.b,
                &e.train,
                &e.test,
            ));
        }
    }
    atomic_write(path, out.as_bytes())
}

pub fn cmd_report(cfg: &PipelineConfig) -> Result<()> {
    let prov = cfg.provenance()?;
    let layout = Layout::new(cfg.out_dir());
    let required = [
        layout.windows_csv(),
        layout.manifest_json(),
        layout.model_json(),
        layout.styles_csv(),
        layout.style_report_csv(),
    ];
    let missing: Vec<String> = required
        .iter()
        .filter(|p| !p.is_file())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::data(format!(
            "missing artifacts: {}",
            missing.join(", ")
        )));
    }

    let manifest: ExtractionManifest = read_json(&layout.manifest_json())?;
    let clustering: ClusterDoc = read_json(&layout.model_json())?;
    let mut runs: Vec<RunDoc> = Vec::new();
    if layout.runs_dir().is_dir() {
        let mut dirs = Vec::new();
        for entry in fs::read_dir(layout.runs_dir())? {
            let path = entry?.path();
            if path.is_dir() {
                dirs.push(path);
            }
        }
        dirs.sort();
        for dir in dirs {
            let metrics = dir.join("metrics.json");
            if !metrics.is_file() {
                return Err(Error::data(format!(
                    "run directory {} has no metrics.json",
                    dir.display()
                )));
            }
            runs.push(read_json(&metrics)?);
        }
    }
    let sweep_doc: Option<SweepDoc> = if layout.sweep_summary_json().is_file() {
        Some(read_json(&layout.sweep_summary_json())?)
    } else {
        None
    };

    let doc = ReportDoc {
        provenance: prov.clone(),
        extraction: ExtractionSummary {
            provenance: manifest.provenance.clone(),
            frame_rate: manifest.frame_rate,
            window_len: manifest.window_len,
            qualified_pairs: manifest.drops.qualified_pairs,
            samples: manifest.drops.qualified_pairs * 2,
            events_accepted: manifest.drops.events_accepted,
            drops: manifest.drops,
        },
        clustering,
        runs,
        sweep: sweep_doc,
    };
    fs::create_dir_all(layout.report_dir())?;
    write_json(&layout.summary_json(), &doc)?;
    write_summary_csv(&doc, &layout.summary_csv(), &prov)?;
    println!(
        "report: {} train runs, sweep {} -> {}",
        doc.runs.len(),
        if doc.sweep.is_some() { "included" } else { "absent" },
        layout.report_dir().display()
    );
    Ok(())
}
