//! Style-conditioned perception transform and model-input assembly.
//!
//! Different driving styles read the same scene differently: an aggressive
//! driver treats a gap as wider and closing speeds as smaller than they are,
//! a cautious driver the opposite. The transform encodes that bias with two
//! coefficients. With distance coefficient `a`, clearances are scaled by
//! (1 + a) for aggressive drivers and (1 − a) for cautious ones; with speed
//! coefficient `b`, speed features are scaled by (1 − b) and (1 + b)
//! respectively. General-style rows and all acceleration features pass
//! through unchanged, and (a, b) = (0, 0) is the identity for every style.
//!
//! [`build_dataset_variant`] turns an extracted dataset into model input in
//! one of three forms: raw features, raw features plus a categorical style
//! column, or fuzzified features (style consumed by the transform, then
//! dropped).

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::clustering::DrivingStyle;
use crate::dataset::DecisionDataset;
use crate::error::{Error, Result};
use crate::extract::WindowLabel;
use crate::features::{
    sequence_sample, AggregateFeatures, FrameFeatures, FRAME_FEATURE_COUNT, FRAME_FEATURE_NAMES,
};
use crate::provenance::fmt_f64;

/// What a feature measures, deciding which fuzzy coefficient applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Distance,
    Speed,
    Acceleration,
}

/// Kind of each entry of [`FrameFeatures`], in field order: three
/// clearances, then eight speeds (three relative, four longitudinal, the
/// subject's lateral), then five accelerations.
pub const FRAME_FEATURE_KINDS: [FeatureKind; FRAME_FEATURE_COUNT] = [
    FeatureKind::Distance,
    FeatureKind::Distance,
    FeatureKind::Distance,
    FeatureKind::Speed,
    FeatureKind::Speed,
    FeatureKind::Speed,
    FeatureKind::Speed,
    FeatureKind::Speed,
    FeatureKind::Speed,
    FeatureKind::Speed,
    FeatureKind::Speed,
    FeatureKind::Acceleration,
    FeatureKind::Acceleration,
    FeatureKind::Acceleration,
    FeatureKind::Acceleration,
    FeatureKind::Acceleration,
];

/// Indices of the subject vehicle's own speeds (`vy_sv`, `vx_sv`), the two
/// speed features a driver knows from the speedometer rather than by
/// judging other traffic.
const SV_SPEED_INDICES: [usize; 2] = [6, 10];

/// Fuzzy transform coefficients. Both must lie in [0, 1) so the scale
/// factors stay strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FuzzyCoefficients {
    pub a: f64,
    pub b: f64,
}

impl FuzzyCoefficients {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&a) || !(0.0..1.0).contains(&b) {
            return Err(Error::config(format!(
                "fuzzy coefficients must lie in [0, 1), got a={a} b={b}"
            )));
        }
        Ok(FuzzyCoefficients { a, b })
    }

    /// Scale factor for distance features under a style.
    pub fn distance_factor(&self, style: DrivingStyle) -> f64 {
        match style {
            DrivingStyle::Aggressive => 1.0 + self.a,
            DrivingStyle::General => 1.0,
            DrivingStyle::Cautious => 1.0 - self.a,
        }
    }

    /// Scale factor for speed features under a style.
    pub fn speed_factor(&self, style: DrivingStyle) -> f64 {
        match style {
            DrivingStyle::Aggressive => 1.0 - self.b,
            DrivingStyle::General => 1.0,
            DrivingStyle::Cautious => 1.0 + self.b,
        }
    }
}

/// Options of the fuzzy transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FuzzifyOptions {
    /// Also scale the subject's own speeds. On by default; turning it off
    /// limits the transform to quantities the driver estimates visually.
    pub fuzz_sv_speed: bool,
}

impl Default for FuzzifyOptions {
    fn default() -> Self {
        FuzzifyOptions {
            fuzz_sv_speed: true,
        }
    }
}

/// The coefficient grid swept by the experiments: a in 0.1..=0.9 (outer),
/// b in 0.1..=0.9 (inner), 81 points.
pub fn coefficient_grid() -> Vec<FuzzyCoefficients> {
    let mut grid = Vec::with_capacity(81);
    for i in 1..=9u32 {
        for j in 1..=9u32 {
            grid.push(FuzzyCoefficients {
                a: f64::from(i) / 10.0,
                b: f64::from(j) / 10.0,
            });
        }
    }
    grid
}

fn factor_for(
    idx: usize,
    style: DrivingStyle,
    coeffs: FuzzyCoefficients,
    opts: FuzzifyOptions,
) -> f64 {
    match FRAME_FEATURE_KINDS[idx] {
        FeatureKind::Distance => coeffs.distance_factor(style),
        FeatureKind::Speed => {
            if !opts.fuzz_sv_speed && SV_SPEED_INDICES.contains(&idx) {
                1.0
            } else {
                coeffs.speed_factor(style)
            }
        }
        FeatureKind::Acceleration => 1.0,
    }
}

/// Apply the perception transform to one frame of features.
pub fn fuzzify_frame(
    f: &FrameFeatures,
    style: DrivingStyle,
    coeffs: FuzzyCoefficients,
    opts: FuzzifyOptions,
) -> FrameFeatures {
    let mut values = f.to_array();
    for (idx, v) in values.iter_mut().enumerate() {
        *v *= factor_for(idx, style, coeffs, opts);
    }
    FrameFeatures::from_array(values)
}

/// Apply the perception transform to aggregate features. Scaling a feature
/// by a positive constant scales both its mean and its standard deviation
/// by that constant, so both columns get the same factor.
pub fn fuzzify_aggregate(
    agg: &AggregateFeatures,
    style: DrivingStyle,
    coeffs: FuzzyCoefficients,
    opts: FuzzifyOptions,
) -> AggregateFeatures {
    let mut out = *agg;
    for idx in 0..FRAME_FEATURE_COUNT {
        let k = factor_for(idx, style, coeffs, opts);
        out.mean[idx] *= k;
        out.std[idx] *= k;
    }
    out
}

/// Which feature set a model consumes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DatasetVariant {
    /// Raw features, style ignored.
    Bird,
    /// Raw features plus a categorical driving-style column.
    BirdWithStyle,
    /// Style-conditioned fuzzified features, style column dropped.
    Fuzzy(FuzzyCoefficients),
}

impl DatasetVariant {
    /// Stable label used in file names and report rows.
    pub fn label(&self) -> String {
        match self {
            DatasetVariant::Bird => "bird".into(),
            DatasetVariant::BirdWithStyle => "bird_style".into(),
            DatasetVariant::Fuzzy(c) => format!("F_{}_{}", fmt_f64(c.a), fmt_f64(c.b)),
        }
    }
}

/// Shape of the model input rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DataForm {
    /// 32 columns: per-window means then standard deviations.
    Aggregate,
    /// Fixed-length resampled sequence, 16 channels per step.
    Sequence,
}

/// One model-ready observation.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRow {
    pub pair_id: u32,
    pub recording_id: u32,
    pub track_id: u64,
    pub segment: u32,
    pub label: WindowLabel,
    /// Set only for the style-column variant.
    pub style: Option<DrivingStyle>,
    /// Set for [`DataForm::Aggregate`].
    pub aggregate: Option<Vec<f64>>,
    /// Set for [`DataForm::Sequence`]; steps x channels.
    pub sequence: Option<Array2<f64>>,
}

/// A dataset variant materialized for training.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub variant: DatasetVariant,
    pub form: DataForm,
    /// Column names (aggregate form) or channel names (sequence form).
    pub feature_names: Vec<String>,
    pub sequence_len: Option<usize>,
    pub rows: Vec<ModelRow>,
}

/// Target length of resampled sequences.
pub const SEQUENCE_LEN: usize = 50;

/// Materialize one dataset variant. Styles are looked up by `pair_id` and
/// must cover every pair for the variants that use them; the plain variant
/// ignores the map entirely. The style column is categorical and not
/// representable as a sequence channel, so that combination is rejected.
pub fn build_dataset_variant(
    dataset: &DecisionDataset,
    styles: &BTreeMap<u32, DrivingStyle>,
    variant: DatasetVariant,
    form: DataForm,
    opts: FuzzifyOptions,
) -> Result<ModelInput> {
    if variant == DatasetVariant::BirdWithStyle && form == DataForm::Sequence {
        return Err(Error::config(
            "the style-column variant has no sequence form",
        ));
    }
    let style_of = |pair_id: u32| -> Result<DrivingStyle> {
        styles.get(&pair_id).copied().ok_or_else(|| {
            Error::data(format!("no driving style assigned to pair {pair_id}"))
        })
    };

    let mut rows = Vec::with_capacity(dataset.samples.len());
    for s in &dataset.samples {
        let (mut aggregate, mut sequence) = (None, None);
        match form {
            DataForm::Aggregate => {
                let agg = match variant {
                    DatasetVariant::Fuzzy(c) => {
                        fuzzify_aggregate(&s.aggregate, style_of(s.pair_id)?, c, opts)
                    }
                    _ => s.aggregate,
                };
                aggregate = Some(agg.to_vec());
            }
            DataForm::Sequence => {
                let frames: Vec<FrameFeatures> = match variant {
                    DatasetVariant::Fuzzy(c) => {
                        let style = style_of(s.pair_id)?;
                        s.frames
                            .iter()
                            .map(|f| fuzzify_frame(f, style, c, opts))
                            .collect()
                    }
                    _ => s.frames.clone(),
                };
                sequence = Some(sequence_sample(&frames, dataset.frame_rate, SEQUENCE_LEN)?);
            }
        }
        let style = match variant {
            DatasetVariant::BirdWithStyle => Some(style_of(s.pair_id)?),
            _ => None,
        };
        rows.push(ModelRow {
            pair_id: s.pair_id,
            recording_id: s.recording_id,
            track_id: s.track_id,
            segment: s.segment,
            label: s.label,
            style,
            aggregate,
            sequence,
        });
    }

    let feature_names = match form {
        DataForm::Aggregate => AggregateFeatures::column_names(),
        DataForm::Sequence => FRAME_FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
    };
    Ok(ModelInput {
        variant,
        form,
        feature_names,
        sequence_len: match form {
            DataForm::Sequence => Some(SEQUENCE_LEN),
            DataForm::Aggregate => None,
        },
        rows,
    })
}
