//! The run configuration file and the inputs it resolves to.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use hournas::data::{load_idx, split_80_20, Dataset, Split, SynthRecipe};
use hournas::search::SearchConfig;
use hournas::space::{build_resource_table, Objective, ResourceTable, SuperNetSpec, Target};
use hournas::vitality::DEFAULT_P_LEVELS;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Top-level run configuration. Relative paths resolve against the
/// directory holding the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Search-space file; the built-in miniature space when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space: Option<PathBuf>,
    pub data: DataConfig,
    pub targets: BTreeMap<Objective, Target>,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default)]
    pub retrain: RetrainConfig,
    #[serde(default)]
    pub propose: ProposeConfig,
    #[serde(default)]
    pub probe: ProbeSection,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// Exactly one of `synth` and `idx`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthRecipe>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idx: Option<IdxSource>,
    #[serde(default)]
    pub split_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxSource {
    pub images: PathBuf,
    pub labels: PathBuf,
    /// Optional held-out pair used for evaluation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_images: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_labels: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for RetrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            batch_size: 32,
            lr: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProposeConfig {
    /// Architectures drawn per temperature for the scatter dump.
    pub samples: usize,
    pub tau_list: Vec<f64>,
}

impl Default for ProposeConfig {
    fn default() -> Self {
        Self {
            samples: 10_000,
            tau_list: vec![5.0, 1.0, 0.5, 0.1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSection {
    pub p_levels: Vec<f64>,
    pub seeds: usize,
}

impl Default for ProbeSection {
    fn default() -> Self {
        Self {
            p_levels: DEFAULT_P_LEVELS.to_vec(),
            seeds: 5,
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub no_vital_priori: bool,
    pub sampler: Option<hournas::proposal::SamplerKind>,
    pub tau_list: Option<Vec<f64>>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.search.seed = s;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if o.no_vital_priori {
            self.search.vital_priori = false;
        }
        if let Some(k) = o.sampler {
            self.search.sampler = k;
        }
        if let Some(t) = &o.tau_list {
            self.propose.tau_list = t.clone();
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        self.search.validate().map_err(|e| CliError::Config(e.to_string()))?;
        match (&self.data.synth, &self.data.idx) {
            (Some(_), Some(_)) | (None, None) => return bad("data needs exactly one of `synth` and `idx`".into()),
            (None, Some(idx)) if idx.test_images.is_some() != idx.test_labels.is_some() => {
                return bad("idx test_images and test_labels must be given together".into())
            }
            _ => {}
        }
        if self.targets.is_empty() {
            return bad("at least one resource target is required".into());
        }
        if self.retrain.epochs == 0 || self.retrain.batch_size < 2 || !(self.retrain.lr > 0.0) {
            return bad("retrain needs epochs >= 1, batch_size >= 2 and lr > 0".into());
        }
        if self.propose.samples == 0 || self.propose.tau_list.is_empty() {
            return bad("propose needs samples >= 1 and a nonempty tau_list".into());
        }
        if let Some(t) = self.propose.tau_list.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
            return bad(format!("temperature {t} is not positive"));
        }
        if self.probe.seeds == 0 || self.probe.p_levels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("probe needs seeds >= 1 and p_levels inside [0, 1]".into());
        }
        Ok(())
    }

    /// SHA-256 of the effective configuration, output directory excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// A validated configuration with its location and provenance hash.
#[derive(Clone, Debug)]
pub struct Loaded {
    pub cfg: RunConfig,
    pub base: PathBuf,
    pub hash: String,
}

impl Loaded {
    pub fn read(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = RunConfig::from_json(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let out_from_file = overrides.out.is_none();
        cfg.apply(overrides);
        cfg.validate()?;
        let hash = cfg.hash();
        if out_from_file {
            cfg.out = base.join(&cfg.out);
        }
        Ok(Self { cfg, base, hash })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base.join(p)
    }

    pub fn seed(&self) -> u64 {
        self.cfg.search.seed
    }

    pub fn spec(&self) -> Result<SuperNetSpec, CliError> {
        match &self.cfg.space {
            None => Ok(SuperNetSpec::default_miniature()),
            Some(p) => {
                let path = self.resolve(p);
                if !path.exists() {
                    return Err(CliError::Data(format!("space file {} does not exist", path.display())));
                }
                SuperNetSpec::load(&path).map_err(|e| CliError::Config(e.to_string()))
            }
        }
    }

    pub fn table(&self, spec: &SuperNetSpec) -> Result<ResourceTable, CliError> {
        build_resource_table(spec, &self.cfg.targets).map_err(|e| CliError::Config(e.to_string()))
    }

    /// The search/training set and its 80/20 split, checked against `spec`.
    pub fn dataset(&self, spec: &SuperNetSpec) -> Result<(Dataset, Split), CliError> {
        let ds = match (&self.cfg.data.synth, &self.cfg.data.idx) {
            (Some(r), _) => r.generate()?,
            (_, Some(idx)) => load_idx(&self.resolve(&idx.images), &self.resolve(&idx.labels))?,
            _ => unreachable!("validated"),
        };
        check_compatible(&ds, spec)?;
        let split = split_80_20(&ds, self.cfg.data.split_seed)?;
        Ok((ds, split))
    }

    /// The evaluation set: the synthetic held-out draw, the IDX test pair, or
    /// else the validation part of the split.
    pub fn eval_set(&self, spec: &SuperNetSpec) -> Result<(Dataset, Vec<usize>, &'static str), CliError> {
        let held_out = match (&self.cfg.data.synth, &self.cfg.data.idx) {
            (Some(r), _) => Some((r.generate_holdout()?, "holdout")),
            (_, Some(IdxSource { test_images: Some(i), test_labels: Some(l), .. })) => {
                Some((load_idx(&self.resolve(i), &self.resolve(l))?, "test"))
            }
            _ => None,
        };
        match held_out {
            Some((ds, name)) => {
                check_compatible(&ds, spec)?;
                let all = (0..ds.len()).collect();
                Ok((ds, all, name))
            }
            None => {
                let (ds, split) = self.dataset(spec)?;
                Ok((ds, split.val, "val"))
            }
        }
    }
}

fn check_compatible(ds: &Dataset, spec: &SuperNetSpec) -> Result<(), CliError> {
    let (c, h, w) = ds.image_shape();
    let (rh, rw) = (spec.stem.resolution[0], spec.stem.resolution[1]);
    if c != spec.stem.in_ch || (h, w) != (rh, rw) {
        return Err(CliError::Config(format!(
            "data images are {c}×{h}×{w} but the space expects {}×{rh}×{rw}",
            spec.stem.in_ch
        )));
    }
    if ds.class_count() > spec.num_classes {
        return Err(CliError::Config(format!(
            "data has {} classes but the space head has {}",
            ds.class_count(),
            spec.num_classes
        )));
    }
    Ok(())
}
