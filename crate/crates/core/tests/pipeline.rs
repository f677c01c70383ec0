//! Library-level pipeline test: a generated corpus goes to disk in the
//! drone-recording CSV layout, comes back through the parser, and flows
//! through extraction, clustering, dataset assembly, and a forest sweep,
//! with the on-disk round-trips and rerun determinism checked at each
//! seam.

use std::collections::BTreeMap;

use lanecast::clustering::{kmeans_fit, DrivingStyle, KMeansOptions};
use lanecast::dataset::{
    build_lc_decision_dataset, read_styles_csv, read_windows_csv, write_styles_csv,
    write_windows_csv,
};
use lanecast::eval::{sweep, ClassifierKind, ExperimentConfig};
use lanecast::forest::ForestConfig;
use lanecast::fuzzy::FuzzyCoefficients;
use lanecast::ingest::{
    parse_recording_meta, parse_tracks, write_recording_meta_csv, write_tracks_csv, ParseOptions,
    RecordingMeta, Track,
};
use lanecast::provenance::Provenance;
use lanecast::synth::{corpus, CorpusPreset};

#[test]
fn corpus_survives_disk_and_feeds_the_whole_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let recs = corpus(&[CorpusPreset::ExtractionBattery], 2026).unwrap();
    let recs: Vec<_> = recs[..60]
        .iter()
        .map(|r| (r.meta.clone(), r.tracks.clone()))
        .collect();

    // Through the CSV layout and back: the re-parsed corpus must extract
    // to the identical dataset.
    let opts = ParseOptions::default();
    let mut reloaded: Vec<(RecordingMeta, Vec<Track>)> = Vec::new();
    for (meta, tracks) in &recs {
        let meta_path = dir.path().join(format!("{:02}_recordingMeta.csv", meta.recording_id));
        let tracks_path = dir.path().join(format!("{:02}_tracks.csv", meta.recording_id));
        write_recording_meta_csv(meta, &meta_path).unwrap();
        write_tracks_csv(tracks, &tracks_path).unwrap();
        reloaded.push((
            parse_recording_meta(&meta_path).unwrap(),
            parse_tracks(&tracks_path, &opts).unwrap(),
        ));
    }
    let direct = build_lc_decision_dataset(&recs).unwrap();
    let reparsed = build_lc_decision_dataset(&reloaded).unwrap();
    assert_eq!(direct.dataset, reparsed.dataset, "disk round-trip changed the dataset");
    assert_eq!(direct.events, reparsed.events);
    assert_eq!(direct.dataset.pair_count(), 60);

    // The windows and styles artifacts round-trip bit-exactly too.
    let prov = Provenance::new("0".repeat(64), 2026);
    let windows_path = dir.path().join("windows.csv");
    write_windows_csv(&direct.dataset, &windows_path, &prov).unwrap();
    assert_eq!(read_windows_csv(&windows_path).unwrap(), direct.dataset);

    let points: Vec<_> = direct.events.iter().map(|e| e.style_features).collect();
    let (model, run) = kmeans_fit(&points, &KMeansOptions::default(), 2026).unwrap();
    let styles: BTreeMap<u32, DrivingStyle> = direct
        .events
        .iter()
        .zip(&run.assignments)
        .filter_map(|(e, &a)| e.pair_id.map(|pid| (pid, model.labels[a])))
        .collect();
    assert_eq!(styles.len(), 60, "every battery pair carries a style");
    let styles_path = dir.path().join("styles.csv");
    write_styles_csv(&styles, &styles_path, &prov).unwrap();
    assert_eq!(read_styles_csv(&styles_path).unwrap(), styles);

    // A small sweep over the reloaded dataset: deterministic across calls,
    // fuzzy rows sorted by test accuracy, no failures.
    let cfg = ExperimentConfig {
        forest: ForestConfig {
            n_trees: 30,
            ..ForestConfig::default()
        },
        ..ExperimentConfig::default()
    };
    let grid = [
        FuzzyCoefficients::new(0.2, 0.2).unwrap(),
        FuzzyCoefficients::new(0.5, 0.3).unwrap(),
        FuzzyCoefficients::new(0.8, 0.8).unwrap(),
    ];
    let report = sweep(
        &reparsed.dataset,
        &styles,
        &grid,
        ClassifierKind::Forest,
        &cfg,
        2026,
    )
    .unwrap();
    assert!(report.failures.is_empty(), "{:?}", report.failures);
    assert_eq!(report.baselines.len(), 2);
    assert_eq!(report.fuzzy.len(), 3);
    assert!(
        report
            .fuzzy
            .windows(2)
            .all(|w| w[0].test.accuracy >= w[1].test.accuracy),
        "fuzzy rows not ranked by test accuracy"
    );
    for entry in report.baselines.iter().chain(&report.fuzzy) {
        assert!(
            (0.0..=1.0).contains(&entry.test.accuracy) && entry.test.auc.is_finite(),
            "implausible metrics for {}",
            entry.label
        );
    }

    let again = sweep(
        &reparsed.dataset,
        &styles,
        &grid,
        ClassifierKind::Forest,
        &cfg,
        2026,
    )
    .unwrap();
    assert_eq!(report, again, "sweep is not deterministic under a fixed seed");
}
