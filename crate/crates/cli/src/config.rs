//! Run configuration. One TOML file defines a full pipeline run; flags
//! override individual fields. The SHA-256 of the effective configuration
//! (after overrides) stamps every artifact together with the seed, so two
//! artifacts with equal hashes came from byte-identical run definitions.

use std::path::{Path, PathBuf};

use lanecast::clustering::{KMeansOptions, KMEANS_TOL};
use lanecast::error::{Error, Result};
use lanecast::eval::{ClassifierKind, ExperimentConfig};
use lanecast::forest::ForestConfig;
use lanecast::fuzzy::{coefficient_grid, DatasetVariant, FuzzifyOptions, FuzzyCoefficients};
use lanecast::ingest::{GapPolicy, ParseOptions};
use lanecast::network::NetworkConfig;
use lanecast::provenance::{sha256_hex, Provenance};
use lanecast::synth::CorpusPreset;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Root seed. Mandatory; every stage derives its own stream from it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub input: InputSection,
    pub output: OutputSection,
    pub extraction: ExtractionSection,
    pub clustering: ClusteringSection,
    pub fuzzy: FuzzySection,
    pub classifier: ClassifierSection,
    pub split: SplitSection,
    pub train: TrainSection,
    pub synth: SynthSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputSection {
    /// Directory of `{id}_tracks.csv` + `{id}_recordingMeta.csv` pairs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: "out".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionSection {
    /// What to do when a track's frame numbers jump: `reject` or `split`.
    pub gap_policy: GapPolicy,
}

impl Default for ExtractionSection {
    fn default() -> Self {
        ExtractionSection {
            gap_policy: GapPolicy::Reject,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringSection {
    pub k: usize,
    pub restarts: usize,
    pub tol: f64,
}

impl Default for ClusteringSection {
    fn default() -> Self {
        ClusteringSection {
            k: 3,
            restarts: 10,
            tol: KMEANS_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FuzzySection {
    /// Explicit (a, b) pairs. Empty means the full 81-point grid.
    pub coefficients: Vec<(f64, f64)>,
    pub fuzz_sv_speed: bool,
}

impl Default for FuzzySection {
    fn default() -> Self {
        FuzzySection {
            coefficients: Vec::new(),
            fuzz_sv_speed: FuzzifyOptions::default().fuzz_sv_speed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSection {
    pub kind: ClassifierKind,
    pub forest: ForestSection,
    pub network: NetworkSection,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        ClassifierSection {
            kind: ClassifierKind::Forest,
            forest: ForestSection::default(),
            network: NetworkSection::default(),
        }
    }
}

/// Forest hyperparameters. Zero means "no limit" for `max_depth` and
/// "square root of the feature count" for `features_per_split`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestSection {
    pub trees: usize,
    pub max_depth: u32,
    pub min_samples_leaf: usize,
    pub features_per_split: usize,
}

impl Default for ForestSection {
    fn default() -> Self {
        let base = ForestConfig::default();
        ForestSection {
            trees: base.n_trees,
            max_depth: base.max_depth.unwrap_or(0),
            min_samples_leaf: base.min_samples_leaf,
            features_per_split: base.features_per_split.unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub conv_filters: usize,
    pub hidden: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub dropout: f64,
    pub patience: usize,
}

impl Default for NetworkSection {
    fn default() -> Self {
        let base = NetworkConfig::default();
        NetworkSection {
            conv_filters: base.conv_filters,
            hidden: base.hidden,
            learning_rate: base.learning_rate,
            batch_size: base.batch_size,
            max_epochs: base.max_epochs,
            dropout: base.dropout,
            patience: base.patience,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub ratio: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection { ratio: 0.9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Dataset variant for `train`: `bird`, `bird_style`, or `fuzzy`.
    pub variant: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            variant: "bird".into(),
            a: None,
            b: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub presets: Vec<CorpusPreset>,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            presets: vec![CorpusPreset::ExtractionBattery, CorpusPreset::StyleBlobs],
        }
    }
}

impl PipelineConfig {
    /// Parse a config file. Missing or malformed files are usage errors.
    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::config("no seed configured (set `seed` or pass --seed)"))
    }

    /// The canonical text whose hash identifies the run.
    pub fn canonical_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("unserializable config: {e}")))
    }

    pub fn provenance(&self) -> Result<Provenance> {
        let hash = sha256_hex(self.canonical_toml()?.as_bytes());
        Ok(Provenance::new(hash, self.seed()?))
    }

    pub fn out_dir(&self) -> &Path {
        &self.output.dir
    }

    pub fn data_dir(&self) -> Result<&Path> {
        self.input
            .data_dir
            .as_deref()
            .ok_or_else(|| Error::config("no input directory (set `input.data_dir` or pass --input-dir)"))
    }

    pub fn parse_options(&self) -> ParseOptions {
        ParseOptions {
            on_frame_gap: self.extraction.gap_policy,
        }
    }

    pub fn kmeans_options(&self) -> KMeansOptions {
        KMeansOptions {
            k: self.clustering.k,
            restarts: self.clustering.restarts,
            tol: self.clustering.tol,
        }
    }

    pub fn fuzzify_options(&self) -> FuzzifyOptions {
        FuzzifyOptions {
            fuzz_sv_speed: self.fuzzy.fuzz_sv_speed,
        }
    }

    /// The configured explicit coefficient pairs, validated.
    pub fn explicit_coefficients(&self) -> Result<Vec<FuzzyCoefficients>> {
        self.fuzzy
            .coefficients
            .iter()
            .map(|&(a, b)| FuzzyCoefficients::new(a, b))
            .collect()
    }

    /// The sweep grid: explicit pairs if configured, else all 81 points.
    pub fn grid(&self) -> Result<Vec<FuzzyCoefficients>> {
        let explicit = self.explicit_coefficients()?;
        Ok(if explicit.is_empty() {
            coefficient_grid()
        } else {
            explicit
        })
    }

    pub fn forest_config(&self) -> ForestConfig {
        let f = &self.classifier.forest;
        ForestConfig {
            n_trees: f.trees,
            max_depth: (f.max_depth > 0).then_some(f.max_depth),
            min_samples_leaf: f.min_samples_leaf,
            features_per_split: (f.features_per_split > 0).then_some(f.features_per_split),
        }
    }

    pub fn network_config(&self) -> NetworkConfig {
        let n = &self.classifier.network;
        NetworkConfig {
            conv_filters: n.conv_filters,
            hidden: n.hidden,
            learning_rate: n.learning_rate,
            batch_size: n.batch_size,
            max_epochs: n.max_epochs,
            dropout: n.dropout,
            patience: n.patience,
        }
    }

    pub fn experiment_config(&self) -> ExperimentConfig {
        ExperimentConfig {
            split_ratio: self.split.ratio,
            forest: self.forest_config(),
            network: self.network_config(),
            fuzzify: self.fuzzify_options(),
        }
    }

    /// The variant the `train` command runs.
    pub fn train_variant(&self) -> Result<DatasetVariant> {
        match self.train.variant.as_str() {
            "bird" => Ok(DatasetVariant::Bird),
            "bird_style" => Ok(DatasetVariant::BirdWithStyle),
            "fuzzy" => {
                let (Some(a), Some(b)) = (self.train.a, self.train.b) else {
                    return Err(Error::config(
                        "variant `fuzzy` needs coefficients (set train.a and train.b)",
                    ));
                };
                Ok(DatasetVariant::Fuzzy(FuzzyCoefficients::new(a, b)?))
            }
            other => Err(Error::config(format!(
                "unknown dataset variant `{other}` (expected bird, bird_style, or fuzzy)"
            ))),
        }
    }

    /// Check everything that does not need input data.
    pub fn validate(&self) -> Result<()> {
        self.seed()?;
        let c = &self.clustering;
        if !(1..=3).contains(&c.k) {
            return Err(Error::config(format!("clustering.k {} not in 1..=3", c.k)));
        }
        if c.restarts == 0 {
            return Err(Error::config("clustering.restarts must be at least 1"));
        }
        if !(c.tol.is_finite() && c.tol >= 0.0) {
            return Err(Error::config(format!(
                "clustering.tol {} must be finite and non-negative",
                c.tol
            )));
        }
        self.explicit_coefficients()?;
        self.train_variant()?;
        if !(0.0 < self.split.ratio && self.split.ratio < 1.0) {
            return Err(Error::config(format!(
                "split.ratio {} not in (0, 1)",
                self.split.ratio
            )));
        }
        let f = &self.classifier.forest;
        if f.trees == 0 || f.min_samples_leaf == 0 {
            return Err(Error::config(
                "classifier.forest needs at least one tree and a leaf size of at least 1",
            ));
        }
        let n = &self.classifier.network;
        if n.conv_filters == 0 || n.hidden == 0 || n.batch_size == 0 || n.max_epochs == 0 {
            return Err(Error::config(
                "classifier.network sizes and epoch budget must be positive",
            ));
        }
        if !(n.learning_rate.is_finite() && n.learning_rate > 0.0) {
            return Err(Error::config(format!(
                "classifier.network.learning_rate {} must be positive",
                n.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&n.dropout) {
            return Err(Error::config(format!(
                "classifier.network.dropout {} not in [0, 1)",
                n.dropout
            )));
        }
        Ok(())
    }
}

/// Parse an enum-like flag value through its serde name.
pub fn from_flag<T: for<'de> Deserialize<'de>>(what: &str, value: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(value.to_string()))
        .map_err(|_| Error::config(format!("unknown {what} `{value}`")))
}
