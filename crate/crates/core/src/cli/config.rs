use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalstat::SweepSpec;
use crate::gac::FitGrid;
use crate::phantom::PhantomSpec;
use crate::trainer::TrainConfig;

/// Everything a command may need. Unknown keys are rejected at every level.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seed for data generation; `--seed` also overrides the training seed.
    pub seed: u64,
    /// Output directory for every command except `gen-data`.
    pub out: Option<PathBuf>,
    pub data: DataSection,
    pub train: TrainConfig,
    pub segment: SegmentSection,
    pub levelset: LevelSetSection,
    pub eval: EvalSection,
    pub sweep: Option<SweepSpec>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Where manifests live; `gen-data` writes here unless `--out` is given.
    pub dir: PathBuf,
    pub phantom: PhantomSpec,
    /// `[train, val, test]` sample counts.
    pub split: [usize; 3],
    /// Total count; the split must fit within it.
    pub n: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("data"),
            phantom: PhantomSpec {
                canvas: [64, 64],
                ..PhantomSpec::default()
            },
            split: [40, 10, 20],
            n: 70,
        }
    }
}

impl DataSection {
    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        let total: usize = self.split.iter().sum();
        if total > self.n {
            return Err(Error::validation(
                "data.split",
                format!("{:?} needs {total} samples but n = {}", self.split, self.n),
            ));
        }
        if self.split[0] == 0 {
            return Err(Error::validation("data.split", "training split is empty"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentSection {
    pub checkpoint: PathBuf,
    /// A PNG image or a manifest; defaults to the test manifest.
    pub input: Option<PathBuf>,
    /// Cut on the generator output in `[-1, 1]` units.
    pub threshold: f64,
}

impl Default for SegmentSection {
    fn default() -> Self {
        Self {
            checkpoint: PathBuf::from("runs/train").join(super::CHECKPOINT_FILE),
            input: None,
            threshold: 0.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LevelSetSection {
    /// Previously fitted parameters; when absent they are fitted on the
    /// training manifest over `grid`.
    pub params: Option<PathBuf>,
    pub grid: FitGrid,
    /// A PNG image or a manifest; defaults to the test manifest.
    pub input: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalMethod {
    pub name: String,
    /// Directory of `<id>_mask.png` predictions.
    pub masks: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Reference manifest; defaults to the test manifest.
    pub manifest: Option<PathBuf>,
    pub methods: Vec<EvalMethod>,
    /// Ordered pairs `[a, b]`, each tested for `a > b`.
    pub comparisons: Vec<[String; 2]>,
    pub alpha: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            manifest: None,
            methods: Vec::new(),
            comparisons: Vec::new(),
            alpha: 0.05,
        }
    }
}

impl EvalSection {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::validation("eval.methods", "at least one method is required"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::validation("eval.alpha", "must be in (0, 1)"));
        }
        for [a, b] in &self.comparisons {
            for m in [a, b] {
                if !self.methods.iter().any(|x| &x.name == m) {
                    return Err(Error::validation("eval.comparisons", format!("unknown method `{m}`")));
                }
            }
        }
        Ok(())
    }
}
