//! Splits, classification metrics, ROC/AUC, the experiment runner and the
//! coefficient sweep.
//!
//! Splitting happens at vehicle granularity: every pair belongs to one
//! (recording, track) vehicle, whole vehicles go to one side, and the paired
//! lane-change and lane-keeping windows always travel together. Labels stay
//! balanced because every pair contributes one of each.
//!
//! [`run_experiment`] derives its split, forest, and network seeds from one
//! base seed by stage name, the same way for every dataset variant, so the
//! identity transform reproduces the plain run bit for bit and variant
//! comparisons differ only in their features. [`sweep`] fans the experiment
//! out over a coefficient grid, collecting failures instead of aborting,
//! and sorts the leaderboard by test accuracy.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use ndarray::{Array2, Array3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::DrivingStyle;
use crate::dataset::DecisionDataset;
use crate::error::{Error, Result};
use crate::extract::WindowLabel;
use crate::features::Standardizer;
use crate::forest::{Forest, ForestConfig};
use crate::fuzzy::{
    build_dataset_variant, DataForm, DatasetVariant, FuzzifyOptions, FuzzyCoefficients, ModelInput,
};
use crate::network::{self, Network, NetworkConfig, TrainHistory};
use crate::provenance::{atomic_write, fmt_f64, Provenance};
use crate::seeds::{derive_seed, rng_for};

/// Counts of the four outcomes at the fixed 0.5 decision threshold.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub true_pos: u64,
    pub false_pos: u64,
    pub true_neg: u64,
    pub false_neg: u64,
}

impl ConfusionMatrix {
    pub fn from_labels(pred: &[u8], truth: &[u8]) -> Result<ConfusionMatrix> {
        if pred.len() != truth.len() {
            return Err(Error::shape(
                format!("{} predictions", truth.len()),
                format!("{}", pred.len()),
            ));
        }
        if pred.iter().chain(truth).any(|&v| v > 1) {
            return Err(Error::data("labels must be 0 or 1"));
        }
        let mut cm = ConfusionMatrix::default();
        for (&p, &t) in pred.iter().zip(truth) {
            match (t, p) {
                (1, 1) => cm.true_pos += 1,
                (0, 1) => cm.false_pos += 1,
                (0, 0) => cm.true_neg += 1,
                (1, 0) => cm.false_neg += 1,
                _ => unreachable!(),
            }
        }
        Ok(cm)
    }

    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.true_neg + self.false_neg
    }

    /// Correct predictions over all predictions.
    pub fn accuracy(&self) -> f64 {
        ratio(self.true_pos + self.true_neg, self.total())
    }

    /// True positives over predicted positives; 0 when nothing was
    /// predicted positive.
    pub fn precision(&self) -> f64 {
        ratio(self.true_pos, self.true_pos + self.false_pos)
    }

    /// True positives over actual positives; 0 when there are none.
    pub fn recall(&self) -> f64 {
        ratio(self.true_pos, self.true_pos + self.false_neg)
    }

    /// Harmonic mean of precision and recall; 0 when their sum is 0.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// The five reported metrics for one split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: f64,
}

/// Threshold-sweep curve of (false positive rate, true positive rate),
/// anchored at (0,0) and (1,1), one point per distinct score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<(f64, f64)>,
}

/// Build the curve by classifying score >= threshold as positive for every
/// distinct score, highest first. Tied scores move the operating point as
/// one block. Errors when only one class is present.
pub fn roc_curve(scores: &[f64], truth: &[u8]) -> Result<RocCurve> {
    if scores.len() != truth.len() {
        return Err(Error::shape(
            format!("{} scores", truth.len()),
            format!("{}", scores.len()),
        ));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("scores must be finite"));
    }
    let n_pos = truth.iter().filter(|&&t| t == 1).count() as f64;
    let n_neg = truth.iter().filter(|&&t| t == 0).count() as f64;
    if n_pos == 0.0 || n_neg == 0.0 {
        return Err(Error::data(
            "roc curve needs both classes in the truth labels",
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if truth[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / n_neg, tp as f64 / n_pos));
    }
    Ok(RocCurve { points })
}

impl RocCurve {
    /// Trapezoidal area under the curve. Equal to the probability that a
    /// random positive outscores a random negative, counting ties half.
    pub fn auc(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
            .sum()
    }
}

/// Metrics, confusion matrix and curve from raw scores at threshold 0.5.
pub fn metrics_from_scores(
    scores: &[f64],
    truth: &[u8],
) -> Result<(Metrics, ConfusionMatrix, RocCurve)> {
    let pred: Vec<u8> = scores.iter().map(|&s| u8::from(s >= 0.5)).collect();
    let cm = ConfusionMatrix::from_labels(&pred, truth)?;
    let roc = roc_curve(scores, truth)?;
    let metrics = Metrics {
        accuracy: cm.accuracy(),
        precision: cm.precision(),
        recall: cm.recall(),
        f1: cm.f1(),
        auc: roc.auc(),
    };
    Ok((metrics, cm, roc))
}

/// Pair ids assigned to each side, whole vehicles at a time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTestSplit {
    pub train_pairs: Vec<u32>,
    pub test_pairs: Vec<u32>,
}

/// Split pairs into train and test so that no (recording, track) vehicle
/// appears on both sides. Vehicles are shuffled by seed and assigned to
/// train until it holds at least round(total x ratio) pairs.
pub fn split_train_test(
    dataset: &DecisionDataset,
    ratio: f64,
    seed: u64,
) -> Result<TrainTestSplit> {
    if !(0.0 < ratio && ratio < 1.0) {
        return Err(Error::config(format!("split ratio {ratio} not in (0, 1)")));
    }
    let mut groups: BTreeMap<(u32, u64), BTreeSet<u32>> = BTreeMap::new();
    for s in &dataset.samples {
        groups
            .entry((s.recording_id, s.track_id))
            .or_default()
            .insert(s.pair_id);
    }
    let total: usize = groups.values().map(|g| g.len()).sum();
    if groups.len() < 2 {
        return Err(Error::data(
            "need at least two vehicles to split without leakage",
        ));
    }
    let target = (total as f64 * ratio).round() as usize;

    let mut keys: Vec<(u32, u64)> = groups.keys().copied().collect();
    let mut rng = rng_for(seed, "split");
    for i in (1..keys.len()).rev() {
        let j = rng.gen_range(0..=i);
        keys.swap(i, j);
    }

    let mut train = Vec::new();
    let mut test = Vec::new();
    for key in keys {
        let pairs = &groups[&key];
        if train.len() < target {
            train.extend(pairs.iter().copied());
        } else {
            test.extend(pairs.iter().copied());
        }
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::data(format!(
            "split left a side empty ({} train / {} test pairs)",
            train.len(),
            test.len()
        )));
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(TrainTestSplit {
        train_pairs: train,
        test_pairs: test,
    })
}

/// One-hot indicator columns appended for the style-column variant.
pub const STYLE_COLUMNS: [(&str, DrivingStyle); 3] = [
    ("style_aggressive", DrivingStyle::Aggressive),
    ("style_general", DrivingStyle::General),
    ("style_cautious", DrivingStyle::Cautious),
];

fn label_of(label: WindowLabel) -> u8 {
    match label {
        WindowLabel::LaneChange => 1,
        WindowLabel::LaneKeep => 0,
    }
}

/// Materialize the aggregate rows of the given pairs as a matrix plus
/// labels, in the input's row order. A style column becomes three one-hot
/// indicator columns appended after the aggregates.
pub fn assemble_aggregate(
    input: &ModelInput,
    pairs: &BTreeSet<u32>,
) -> Result<(Array2<f64>, Vec<u8>, Vec<String>)> {
    let has_style = input.variant == DatasetVariant::BirdWithStyle;
    let mut names = input.feature_names.clone();
    if has_style {
        names.extend(STYLE_COLUMNS.iter().map(|(n, _)| n.to_string()));
    }
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for r in &input.rows {
        if !pairs.contains(&r.pair_id) {
            continue;
        }
        let mut row = r
            .aggregate
            .clone()
            .ok_or_else(|| Error::data("model input lacks aggregate rows"))?;
        if has_style {
            let style = r
                .style
                .ok_or_else(|| Error::data("style column missing on a row"))?;
            for (_, s) in STYLE_COLUMNS {
                row.push(if style == s { 1.0 } else { 0.0 });
            }
        }
        rows.push(row);
        labels.push(label_of(r.label));
    }
    if rows.is_empty() {
        return Err(Error::data("no rows matched the requested pairs"));
    }
    let d = rows[0].len();
    let flat: Vec<f64> = rows.concat();
    let matrix = Array2::from_shape_vec((labels.len(), d), flat)
        .map_err(|e| Error::data(format!("ragged aggregate rows: {e}")))?;
    Ok((matrix, labels, names))
}

/// Materialize the resampled sequences of the given pairs as one
/// (samples, steps, channels) block plus labels, in the input's row order.
pub fn assemble_sequences(
    input: &ModelInput,
    pairs: &BTreeSet<u32>,
) -> Result<(Array3<f64>, Vec<u8>)> {
    let mut picked = Vec::new();
    let mut labels = Vec::new();
    for r in &input.rows {
        if !pairs.contains(&r.pair_id) {
            continue;
        }
        picked.push(
            r.sequence
                .as_ref()
                .ok_or_else(|| Error::data("model input lacks sequence rows"))?,
        );
        labels.push(label_of(r.label));
    }
    if picked.is_empty() {
        return Err(Error::data("no rows matched the requested pairs"));
    }
    let (t, c) = picked[0].dim();
    let mut block = Array3::zeros((picked.len(), t, c));
    for (i, seq) in picked.iter().enumerate() {
        if seq.dim() != (t, c) {
            return Err(Error::shape(
                format!("{t} x {c} sequence"),
                format!("{} x {}", seq.dim().0, seq.dim().1),
            ));
        }
        block.index_axis_mut(Axis(0), i).assign(seq);
    }
    Ok((block, labels))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    Forest,
    Network,
}

impl std::fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ClassifierKind::Forest => write!(f, "forest"),
            ClassifierKind::Network => write!(f, "network"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub split_ratio: f64,
    pub forest: ForestConfig,
    pub network: NetworkConfig,
    pub fuzzify: FuzzifyOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            split_ratio: 0.9,
            forest: ForestConfig::default(),
            network: NetworkConfig::default(),
            fuzzify: FuzzifyOptions::default(),
        }
    }
}

/// Everything one experiment produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub variant: DatasetVariant,
    pub classifier: ClassifierKind,
    pub split: TrainTestSplit,
    pub train: Metrics,
    pub test: Metrics,
    pub test_confusion: ConfusionMatrix,
    pub test_roc: RocCurve,
    pub forest: Option<Forest>,
    pub network: Option<(Network, TrainHistory)>,
}

/// Train and evaluate one classifier on one dataset variant. The split,
/// forest, and network seeds derive from `seed` by stage name, independent
/// of the variant, so runs differ only in their features.
pub fn run_experiment(
    dataset: &DecisionDataset,
    styles: &BTreeMap<u32, DrivingStyle>,
    variant: DatasetVariant,
    classifier: ClassifierKind,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<RunOutcome> {
    if variant == DatasetVariant::BirdWithStyle && classifier == ClassifierKind::Network {
        return Err(Error::config(
            "the style-column variant is defined for the forest only",
        ));
    }
    let split = split_train_test(dataset, cfg.split_ratio, derive_seed(seed, "split"))?;
    let train_set: BTreeSet<u32> = split.train_pairs.iter().copied().collect();
    let test_set: BTreeSet<u32> = split.test_pairs.iter().copied().collect();

    let (train_metrics, test_metrics, test_cm, test_roc, forest, net) = match classifier {
        ClassifierKind::Forest => {
            let input =
                build_dataset_variant(dataset, styles, variant, DataForm::Aggregate, cfg.fuzzify)?;
            let (x_train, y_train, _) = assemble_aggregate(&input, &train_set)?;
            let (x_test, y_test, _) = assemble_aggregate(&input, &test_set)?;
            let scaler = Standardizer::fit(
                &x_train
                    .rows()
                    .into_iter()
                    .map(|r| r.to_vec())
                    .collect::<Vec<_>>(),
            )?;
            let scale = |m: &Array2<f64>| {
                let rows: Vec<Vec<f64>> = m
                    .rows()
                    .into_iter()
                    .map(|r| scaler.transform_row(&r.to_vec()))
                    .collect();
                Array2::from_shape_vec((rows.len(), scaler.dims()), rows.concat()).unwrap()
            };
            let x_train = scale(&x_train);
            let x_test = scale(&x_test);
            let forest = Forest::fit(
                x_train.view(),
                &y_train,
                &cfg.forest,
                derive_seed(seed, "forest"),
            )?;
            let p_train = forest.predict_proba(x_train.view())?;
            let p_test = forest.predict_proba(x_test.view())?;
            let (m_train, _, _) = metrics_from_scores(&p_train, &y_train)?;
            let (m_test, cm, roc) = metrics_from_scores(&p_test, &y_test)?;
            (m_train, m_test, cm, roc, Some(forest), None)
        }
        ClassifierKind::Network => {
            let input =
                build_dataset_variant(dataset, styles, variant, DataForm::Sequence, cfg.fuzzify)?;
            // Carve a validation subset out of the training pairs for early
            // stopping; the test side stays untouched until evaluation.
            let mut fit_pairs = split.train_pairs.clone();
            let mut rng = rng_for(derive_seed(seed, "val-split"), "order");
            for i in (1..fit_pairs.len()).rev() {
                let j = rng.gen_range(0..=i);
                fit_pairs.swap(i, j);
            }
            let n_val = ((fit_pairs.len() as f64) * 0.1).round().max(1.0) as usize;
            if n_val >= fit_pairs.len() {
                return Err(Error::data("too few training pairs for a validation split"));
            }
            let val_set: BTreeSet<u32> = fit_pairs[..n_val].iter().copied().collect();
            let fit_set: BTreeSet<u32> = fit_pairs[n_val..].iter().copied().collect();

            let (x_fit, y_fit) = assemble_sequences(&input, &fit_set)?;
            let (x_val, y_val) = assemble_sequences(&input, &val_set)?;
            let (x_train, y_train) = assemble_sequences(&input, &train_set)?;
            let (x_test, y_test) = assemble_sequences(&input, &test_set)?;

            let fit_seqs: Vec<Array2<f64>> = x_fit
                .axis_iter(Axis(0))
                .map(|s| s.to_owned())
                .collect();
            let scaler = Standardizer::fit_sequences(&fit_seqs)?;
            let scale = |block: &Array3<f64>| -> Result<Array3<f64>> {
                let mut out = block.clone();
                for mut seq in out.axis_iter_mut(Axis(0)) {
                    let scaled = scaler.transform_sequence(&seq.to_owned())?;
                    seq.assign(&scaled);
                }
                Ok(out)
            };
            let (x_fit, x_val) = (scale(&x_fit)?, scale(&x_val)?);
            let (x_train, x_test) = (scale(&x_train)?, scale(&x_test)?);

            let (net, history) = network::train(
                &cfg.network,
                &x_fit,
                &y_fit,
                &x_val,
                &y_val,
                derive_seed(seed, "network"),
            )?;
            let p_train = net.predict_proba(&x_train)?;
            let p_test = net.predict_proba(&x_test)?;
            let (m_train, _, _) = metrics_from_scores(&p_train, &y_train)?;
            let (m_test, cm, roc) = metrics_from_scores(&p_test, &y_test)?;
            (m_train, m_test, cm, roc, None, Some((net, history)))
        }
    };

    Ok(RunOutcome {
        variant,
        classifier,
        split,
        train: train_metrics,
        test: test_metrics,
        test_confusion: test_cm,
        test_roc,
        forest,
        network: net,
    })
}

/// One leaderboard row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub label: String,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub train: Metrics,
    pub test: Metrics,
}

fn entry_of(outcome: &RunOutcome) -> SweepEntry {
    let (a, b) = match outcome.variant {
        DatasetVariant::Fuzzy(c) => (Some(c.a), Some(c.b)),
        _ => (None, None),
    };
    SweepEntry {
        label: outcome.variant.label(),
        a,
        b,
        train: outcome.train,
        test: outcome.test,
    }
}

/// Sweep results: baselines in fixed order, then the grid sorted by test
/// accuracy (descending, ties by coefficients), plus per-point failures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub classifier: ClassifierKind,
    pub baselines: Vec<SweepEntry>,
    pub fuzzy: Vec<SweepEntry>,
    pub failures: Vec<(String, String)>,
}

/// Run the baselines plus every grid point. Grid points run on worker
/// threads; results are merged in grid order so the report is
/// deterministic. A failing point becomes a (label, error) row instead of
/// aborting the sweep.
pub fn sweep(
    dataset: &DecisionDataset,
    styles: &BTreeMap<u32, DrivingStyle>,
    grid: &[FuzzyCoefficients],
    classifier: ClassifierKind,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<SweepReport> {
    if grid.is_empty() {
        return Err(Error::config("sweep needs a non-empty grid"));
    }
    let mut baselines = Vec::new();
    let bird = run_experiment(dataset, styles, DatasetVariant::Bird, classifier, cfg, seed)?;
    baselines.push(entry_of(&bird));
    if classifier == ClassifierKind::Forest {
        let styled = run_experiment(
            dataset,
            styles,
            DatasetVariant::BirdWithStyle,
            classifier,
            cfg,
            seed,
        )?;
        baselines.push(entry_of(&styled));
    }

    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(grid.len())
        .max(1);
    let results: Vec<std::sync::Mutex<Option<Result<RunOutcome>>>> =
        (0..grid.len()).map(|_| std::sync::Mutex::new(None)).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= grid.len() {
                    break;
                }
                let out = run_experiment(
                    dataset,
                    styles,
                    DatasetVariant::Fuzzy(grid[i]),
                    classifier,
                    cfg,
                    seed,
                );
                *results[i].lock().unwrap() = Some(out);
            });
        }
    });

    let mut fuzzy = Vec::new();
    let mut failures = Vec::new();
    for (c, cell) in grid.iter().zip(results) {
        let label = DatasetVariant::Fuzzy(*c).label();
        match cell.into_inner().unwrap().expect("worker filled every cell") {
            Ok(outcome) => fuzzy.push(entry_of(&outcome)),
            Err(e) => failures.push((label, e.to_string())),
        }
    }
    fuzzy.sort_by(|x, y| {
        y.test
            .accuracy
            .partial_cmp(&x.test.accuracy)
            .unwrap()
            .then(x.a.partial_cmp(&y.a).unwrap())
            .then(x.b.partial_cmp(&y.b).unwrap())
    });
    Ok(SweepReport {
        classifier,
        baselines,
        fuzzy,
        failures,
    })
}

fn metrics_fields(m: &Metrics) -> [f64; 5] {
    [m.accuracy, m.precision, m.recall, m.f1, m.auc]
}

/// Leaderboard CSV: baselines first, then the sorted grid rows.
pub fn write_leaderboard_csv(report: &SweepReport, path: &Path, prov: &Provenance) -> Result<()> {
    let mut out = String::new();
    out.push_str(&prov.csv_comment());
    out.push_str("variant,a,b");
    for split in ["train", "test"] {
        for metric in ["accuracy", "precision", "recall", "f1", "auc"] {
            out.push_str(&format!(",{split}_{metric}"));
        }
    }
    out.push('\n');
    for entry in report.baselines.iter().chain(&report.fuzzy) {
        out.push_str(&entry.label);
        for v in [entry.a, entry.b] {
            out.push(',');
            if let Some(v) = v {
                out.push_str(&fmt_f64(v));
            }
        }
        for m in [&entry.train, &entry.test] {
            for v in metrics_fields(m) {
                out.push(',');
                out.push_str(&fmt_f64(v));
            }
        }
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

/// ROC points as a two-column CSV for plotting.
pub fn write_roc_csv(curve: &RocCurve, path: &Path, prov: &Provenance) -> Result<()> {
    let mut out = String::new();
    out.push_str(&prov.csv_comment());
    out.push_str("false_positive_rate,true_positive_rate\n");
    for (fpr, tpr) in &curve.points {
        out.push_str(&format!("{},{}\n", fmt_f64(*fpr), fmt_f64(*tpr)));
    }
    atomic_write(path, out.as_bytes())
}

/// Per-epoch training curve as CSV.
pub fn write_history_csv(history: &TrainHistory, path: &Path, prov: &Provenance) -> Result<()> {
    let mut out = String::new();
    out.push_str(&prov.csv_comment());
    out.push_str("epoch,train_loss,train_accuracy,val_loss,val_accuracy\n");
    for e in &history.epochs {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            e.epoch,
            fmt_f64(e.train_loss),
            fmt_f64(e.train_accuracy),
            fmt_f64(e.val_loss),
            fmt_f64(e.val_accuracy)
        ));
    }
    atomic_write(path, out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::WindowSample;
    use crate::extract::LcDirection;
    use crate::features::{aggregate_features, FrameFeatures, FRAME_FEATURE_COUNT};

    #[test]
    fn metrics_match_hand_computed_values() {
        let cm = ConfusionMatrix {
            true_pos: 50,
            false_pos: 5,
            true_neg: 40,
            false_neg: 5,
        };
        assert_eq!(cm.accuracy(), 0.9);
        assert_eq!(cm.precision(), 50.0 / 55.0);
        assert_eq!(cm.recall(), 50.0 / 55.0);
        assert!((cm.f1() - 10.0 / 11.0).abs() < 1e-15);

        let perfect = ConfusionMatrix {
            true_pos: 3,
            true_neg: 4,
            ..Default::default()
        };
        assert_eq!(perfect.accuracy(), 1.0);
        assert_eq!(perfect.precision(), 1.0);
        assert_eq!(perfect.recall(), 1.0);
        assert_eq!(perfect.f1(), 1.0);

        // Degenerate denominators resolve to zero, not NaN.
        let none_predicted = ConfusionMatrix {
            true_neg: 5,
            false_neg: 5,
            ..Default::default()
        };
        assert_eq!(none_predicted.precision(), 0.0);
        assert_eq!(none_predicted.f1(), 0.0);
        assert_eq!(ConfusionMatrix::default().accuracy(), 0.0);
    }

    #[test]
    fn random_matrices_match_a_direct_oracle() {
        let mut rng = rng_for(17, "cm-oracle");
        for _ in 0..200 {
            let cm = ConfusionMatrix {
                true_pos: rng.gen_range(0..40),
                false_pos: rng.gen_range(0..40),
                true_neg: rng.gen_range(0..40),
                false_neg: rng.gen_range(0..40),
            };
            if cm.total() == 0 {
                continue;
            }
            let (tp, fp, tn, fne) = (
                cm.true_pos as f64,
                cm.false_pos as f64,
                cm.true_neg as f64,
                cm.false_neg as f64,
            );
            assert_eq!(cm.accuracy(), (tp + tn) / (tp + fp + tn + fne));
            if tp + fp > 0.0 {
                assert_eq!(cm.precision(), tp / (tp + fp));
            }
            if tp + fne > 0.0 {
                assert_eq!(cm.recall(), tp / (tp + fne));
            }
            let (p, r) = (cm.precision(), cm.recall());
            if p + r > 0.0 {
                assert!((cm.f1() - 2.0 * p * r / (p + r)).abs() < 1e-15);
            }
        }
    }

    /// O(n^2) rank statistic: P(pos > neg) + 0.5 P(tie).
    fn pairwise_auc(scores: &[f64], truth: &[u8]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &si) in scores.iter().enumerate() {
            if truth[i] != 1 {
                continue;
            }
            for (j, &sj) in scores.iter().enumerate() {
                if truth[j] != 0 {
                    continue;
                }
                den += 1.0;
                if si > sj {
                    num += 1.0;
                } else if si == sj {
                    num += 0.5;
                }
            }
        }
        num / den
    }

    #[test]
    fn roc_endpoints_shape_and_special_cases() {
        let truth = [1, 1, 0, 0];
        let perfect = roc_curve(&[0.9, 0.8, 0.2, 0.1], &truth).unwrap();
        assert_eq!(perfect.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(perfect.points.last(), Some(&(1.0, 1.0)));
        assert_eq!(perfect.auc(), 1.0);

        // All scores tied: the curve is the diagonal with one interior jump.
        let flat = roc_curve(&[0.5; 4], &truth).unwrap();
        assert_eq!(flat.points, vec![(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(flat.auc(), 0.5);

        // Monotone coordinates on a mixed case with ties.
        let curve = roc_curve(&[0.7, 0.7, 0.7, 0.3, 0.3, 0.1], &[1, 0, 1, 0, 1, 0]).unwrap();
        for w in curve.points.windows(2) {
            assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
        }
        // Tied scores collapse into single points: 3 thresholds + origin.
        assert_eq!(curve.points.len(), 4);

        assert!(roc_curve(&[0.1, 0.2], &[1, 1]).is_err());
    }

    #[test]
    fn trapezoid_auc_equals_pairwise_statistic() {
        let mut rng = rng_for(23, "auc-oracle");
        for round in 0..60 {
            let n = 30 + round % 15;
            // Coarse grid scores force plenty of ties.
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..8) as f64 / 7.0).collect();
            let mut truth: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2) as u8).collect();
            truth[0] = 1;
            truth[1] = 0;
            let curve = roc_curve(&scores, &truth).unwrap();
            let expect = pairwise_auc(&scores, &truth);
            assert!(
                (curve.auc() - expect).abs() < 1e-9,
                "round {round}: {} vs {expect}",
                curve.auc()
            );
        }
    }

    #[test]
    fn reversing_scores_complements_auc() {
        let mut rng = rng_for(29, "auc-flip");
        let scores: Vec<f64> = (0..40).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mut truth: Vec<u8> = (0..40).map(|_| rng.gen_range(0..2) as u8).collect();
        truth[0] = 1;
        truth[1] = 0;
        let forward = roc_curve(&scores, &truth).unwrap().auc();
        let flipped: Vec<f64> = scores.iter().map(|s| -s).collect();
        let backward = roc_curve(&flipped, &truth).unwrap().auc();
        assert!((forward + backward - 1.0).abs() < 1e-12);
    }

    /// A dataset of `n_pairs` pairs spread over vehicles, `pairs_per_vehicle`
    /// pairs each, with 50-frame windows whose features encode the label.
    fn synthetic_dataset(n_pairs: usize, pairs_per_vehicle: usize, seed: u64) -> DecisionDataset {
        let mut rng = rng_for(seed, "synthetic-dataset");
        let mut samples = Vec::new();
        for pair in 0..n_pairs {
            let vehicle = (pair / pairs_per_vehicle) as u64 + 1;
            for label in [WindowLabel::LaneChange, WindowLabel::LaneKeep] {
                let signal = if label == WindowLabel::LaneChange { 1.0 } else { -1.0 };
                let frames: Vec<FrameFeatures> = (0..50)
                    .map(|_| {
                        let mut v = [0.0; FRAME_FEATURE_COUNT];
                        for x in v.iter_mut() {
                            *x = rng.gen_range(-0.5..0.5);
                        }
                        // Lateral speed separates the classes.
                        v[10] += signal;
                        FrameFeatures::from_array(v)
                    })
                    .collect();
                let aggregate = aggregate_features(&frames).unwrap();
                samples.push(WindowSample {
                    pair_id: pair as u32,
                    recording_id: 1,
                    track_id: vehicle,
                    segment: 0,
                    label,
                    direction: LcDirection::Left,
                    start_frame: 100,
                    frames,
                    aggregate,
                });
            }
        }
        DecisionDataset {
            frame_rate: 25.0,
            samples,
        }
    }

    fn style_map(n_pairs: usize) -> BTreeMap<u32, DrivingStyle> {
        (0..n_pairs as u32)
            .map(|p| {
                let style = match p % 3 {
                    0 => DrivingStyle::Aggressive,
                    1 => DrivingStyle::General,
                    _ => DrivingStyle::Cautious,
                };
                (p, style)
            })
            .collect()
    }

    #[test]
    fn split_respects_vehicles_and_ratio() {
        let dataset = synthetic_dataset(100, 2, 3);
        let split = split_train_test(&dataset, 0.9, 41).unwrap();
        assert_eq!(split.train_pairs.len(), 90);
        assert_eq!(split.test_pairs.len(), 10);
        // Same seed reproduces, different seed differs.
        assert_eq!(split, split_train_test(&dataset, 0.9, 41).unwrap());
        assert_ne!(split, split_train_test(&dataset, 0.9, 42).unwrap());

        // Vehicles hold two pairs each: both must land on the same side.
        let vehicle_of = |pair: u32| pair / 2;
        let train_vehicles: BTreeSet<u32> = split.train_pairs.iter().map(|&p| vehicle_of(p)).collect();
        let test_vehicles: BTreeSet<u32> = split.test_pairs.iter().map(|&p| vehicle_of(p)).collect();
        assert!(train_vehicles.is_disjoint(&test_vehicles));

        let single = synthetic_dataset(3, 3, 4);
        assert!(split_train_test(&single, 0.9, 1).is_err());
    }

    #[test]
    fn identity_transform_reproduces_the_plain_run() {
        let dataset = synthetic_dataset(30, 1, 5);
        let styles = style_map(30);
        let cfg = ExperimentConfig {
            forest: ForestConfig {
                n_trees: 20,
                ..ForestConfig::default()
            },
            ..ExperimentConfig::default()
        };
        let plain = run_experiment(
            &dataset,
            &styles,
            DatasetVariant::Bird,
            ClassifierKind::Forest,
            &cfg,
            77,
        )
        .unwrap();
        let zero = FuzzyCoefficients::new(0.0, 0.0).unwrap();
        let fuzzed = run_experiment(
            &dataset,
            &styles,
            DatasetVariant::Fuzzy(zero),
            ClassifierKind::Forest,
            &cfg,
            77,
        )
        .unwrap();
        assert_eq!(plain.train, fuzzed.train);
        assert_eq!(plain.test, fuzzed.test);
        assert_eq!(plain.test_confusion, fuzzed.test_confusion);
        assert_eq!(plain.test_roc, fuzzed.test_roc);
        assert_eq!(plain.split, fuzzed.split);

        // The planted signal is easy; the forest should find it.
        assert!(plain.test.accuracy >= 0.9, "{}", plain.test.accuracy);
    }

    #[test]
    fn network_run_reports_finite_metrics() {
        let dataset = synthetic_dataset(24, 1, 6);
        let styles = style_map(24);
        let cfg = ExperimentConfig {
            network: NetworkConfig {
                conv_filters: 3,
                hidden: 4,
                max_epochs: 3,
                patience: 3,
                batch_size: 16,
                ..NetworkConfig::default()
            },
            ..ExperimentConfig::default()
        };
        let outcome = run_experiment(
            &dataset,
            &styles,
            DatasetVariant::Bird,
            ClassifierKind::Network,
            &cfg,
            13,
        )
        .unwrap();
        assert!(outcome.network.is_some());
        for m in [outcome.train, outcome.test] {
            for v in metrics_fields(&m) {
                assert!(v.is_finite());
                assert!((0.0..=1.0).contains(&v));
            }
        }

        let styled = run_experiment(
            &dataset,
            &styles,
            DatasetVariant::BirdWithStyle,
            ClassifierKind::Network,
            &cfg,
            13,
        );
        assert!(styled.is_err());
    }

    #[test]
    fn sweep_orders_rows_and_survives_failures() {
        let dataset = synthetic_dataset(30, 1, 7);
        let styles = style_map(30);
        let cfg = ExperimentConfig {
            forest: ForestConfig {
                n_trees: 10,
                ..ForestConfig::default()
            },
            ..ExperimentConfig::default()
        };
        let grid = [
            FuzzyCoefficients::new(0.2, 0.4).unwrap(),
            FuzzyCoefficients::new(0.6, 0.1).unwrap(),
            FuzzyCoefficients::new(0.1, 0.1).unwrap(),
        ];
        let report = sweep(
            &dataset,
            &styles,
            &grid,
            ClassifierKind::Forest,
            &cfg,
            19,
        )
        .unwrap();
        assert_eq!(report.baselines.len(), 2);
        assert_eq!(report.baselines[0].label, "bird");
        assert_eq!(report.baselines[1].label, "bird_style");
        assert_eq!(report.fuzzy.len(), 3);
        assert!(report.failures.is_empty());
        for w in report.fuzzy.windows(2) {
            assert!(w[0].test.accuracy >= w[1].test.accuracy);
        }
        // Deterministic repeat.
        let again = sweep(
            &dataset,
            &styles,
            &grid,
            ClassifierKind::Forest,
            &cfg,
            19,
        )
        .unwrap();
        assert_eq!(report, again);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("leaderboard.csv");
        write_leaderboard_csv(&report, &path, &Provenance::new("aa", 19)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("# config_hash="));
        assert_eq!(
            lines.next().unwrap(),
            "variant,a,b,train_accuracy,train_precision,train_recall,train_f1,train_auc,\
             test_accuracy,test_precision,test_recall,test_f1,test_auc"
        );
        assert_eq!(text.lines().count(), 2 + 2 + 3);
        assert!(text.contains("\nbird,,,"));
    }
}
