//! Run configuration: a TOML file with KITTI defaults, overridden by
//! command-line flags (flags win). Unknown keys are rejected at every
//! level, and each run echoes the fully resolved configuration next to
//! its outputs so results are reproducible from the artifact alone.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use hotspots_core::assignment::RelationEncoding;
use hotspots_core::codec::HeadEncodeMode;
use hotspots_core::evaluator::{EvalConfig, IouKind, PointBucket};
use hotspots_core::io::synth::{ClassTemplate, PointDensity, SynthSpec};
use hotspots_core::loss::{FocalParams, LossWeights};
use hotspots_core::inference::InferenceConfig;
use hotspots_core::voxelizer::GridConfig;

/// The full serialized run configuration. Field defaults reproduce the
/// KITTI setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub num_scenes: usize,
    /// Class names in id order; their count fixes the class count.
    pub class_names: Vec<String>,
    /// Hotspot budget C (TOML `inf` lifts the cap).
    pub c: f64,
    pub encoding: RelationEncoding,
    pub encode_mode: HeadEncodeMode,
    /// Class score written at hotspot cells when encoding ground truth.
    pub encode_score: f64,
    pub grid: GridToml,
    pub synth: SynthToml,
    pub focal: FocalToml,
    pub weights: WeightsToml,
    pub inference: InferenceToml,
    pub eval: EvalToml,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            num_scenes: 8,
            class_names: vec!["car".into(), "pedestrian".into(), "cyclist".into()],
            c: 64.0,
            encoding: RelationEncoding::Quadrant,
            encode_mode: HeadEncodeMode::Exact,
            encode_score: 1.0,
            grid: GridToml::default(),
            synth: SynthToml::default(),
            focal: FocalToml::default(),
            weights: WeightsToml::default(),
            inference: InferenceToml::default(),
            eval: EvalToml::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridToml {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub z_range: (f64, f64),
    pub voxel_size: (f64, f64, f64),
    pub max_points_per_voxel: usize,
    pub downsample: usize,
}

impl Default for GridToml {
    fn default() -> Self {
        let g = GridConfig::kitti();
        GridToml {
            x_range: g.x_range,
            y_range: g.y_range,
            z_range: g.z_range,
            voxel_size: g.voxel_size,
            max_points_per_voxel: g.max_points_per_voxel,
            downsample: g.downsample,
        }
    }
}

impl GridToml {
    pub fn build(&self) -> Result<GridConfig> {
        GridConfig::new(
            self.x_range,
            self.y_range,
            self.z_range,
            self.voxel_size,
            self.max_points_per_voxel,
            self.downsample,
        )
        .context("invalid [grid] section")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthToml {
    pub num_objects: usize,
    pub classes: Vec<ClassToml>,
    pub density: DensityToml,
    pub clutter_points: usize,
    pub surface_noise: f64,
    pub max_place_attempts: usize,
}

impl Default for SynthToml {
    fn default() -> Self {
        let s = SynthSpec::default();
        SynthToml {
            num_objects: s.num_objects,
            classes: s.classes.iter().map(ClassToml::from).collect(),
            density: DensityToml::from(s.density),
            clutter_points: s.clutter_points,
            surface_noise: s.surface_noise,
            max_place_attempts: s.max_place_attempts,
        }
    }
}

impl SynthToml {
    pub fn build(&self) -> SynthSpec {
        SynthSpec {
            num_objects: self.num_objects,
            classes: self.classes.iter().map(ClassToml::build).collect(),
            density: self.density.build(),
            clutter_points: self.clutter_points,
            surface_noise: self.surface_noise,
            max_place_attempts: self.max_place_attempts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassToml {
    pub class_id: u32,
    pub weight: f64,
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub size_jitter: f64,
}

impl From<&ClassTemplate> for ClassToml {
    fn from(t: &ClassTemplate) -> Self {
        ClassToml {
            class_id: t.class_id,
            weight: t.weight,
            length: t.length,
            width: t.width,
            height: t.height,
            size_jitter: t.size_jitter,
        }
    }
}

impl ClassToml {
    fn build(&self) -> ClassTemplate {
        ClassTemplate {
            class_id: self.class_id,
            weight: self.weight,
            length: self.length,
            width: self.width,
            height: self.height,
            size_jitter: self.size_jitter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum DensityToml {
    Exact { count: u32 },
    Range { min: u32, max: u32 },
}

impl From<PointDensity> for DensityToml {
    fn from(d: PointDensity) -> Self {
        match d {
            PointDensity::Exact { count } => DensityToml::Exact { count },
            PointDensity::Range { min, max } => DensityToml::Range { min, max },
        }
    }
}

impl DensityToml {
    fn build(&self) -> PointDensity {
        match *self {
            DensityToml::Exact { count } => PointDensity::Exact { count },
            DensityToml::Range { min, max } => PointDensity::Range { min, max },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FocalToml {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalToml {
    fn default() -> Self {
        let f = FocalParams::default();
        FocalToml {
            alpha: f.alpha,
            gamma: f.gamma,
        }
    }
}

impl FocalToml {
    pub fn build(&self) -> Result<FocalParams> {
        FocalParams::new(self.alpha, self.gamma).context("invalid [focal] section")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightsToml {
    pub delta: f64,
    pub beta: f64,
    pub zeta: f64,
}

impl Default for WeightsToml {
    fn default() -> Self {
        let w = LossWeights::default();
        WeightsToml {
            delta: w.delta,
            beta: w.beta,
            zeta: w.zeta,
        }
    }
}

impl WeightsToml {
    pub fn build(&self) -> Result<LossWeights> {
        LossWeights::new(self.delta, self.beta, self.zeta).context("invalid [weights] section")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceToml {
    pub score_threshold: f64,
    pub pre_nms_top_k: usize,
    pub nms_iou_threshold: f64,
}

impl Default for InferenceToml {
    fn default() -> Self {
        let i = InferenceConfig::kitti();
        InferenceToml {
            score_threshold: i.score_threshold,
            pre_nms_top_k: i.pre_nms_top_k,
            nms_iou_threshold: i.nms_iou_threshold,
        }
    }
}

impl InferenceToml {
    pub fn build(&self) -> Result<InferenceConfig> {
        InferenceConfig::new(self.score_threshold, self.pre_nms_top_k, self.nms_iou_threshold)
            .context("invalid [inference] section")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalToml {
    pub iou_kind: IouKind,
    pub class_thresholds: Vec<f64>,
    pub default_threshold: f64,
    pub buckets: Vec<BucketToml>,
}

impl Default for EvalToml {
    fn default() -> Self {
        let e = EvalConfig::kitti();
        EvalToml {
            iou_kind: e.iou_kind,
            class_thresholds: e.class_thresholds,
            default_threshold: e.default_threshold,
            buckets: e.buckets.iter().map(BucketToml::from).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BucketToml {
    pub min: u32,
    pub max: Option<u32>,
}

impl From<&PointBucket> for BucketToml {
    fn from(b: &PointBucket) -> Self {
        BucketToml {
            min: b.min,
            max: b.max,
        }
    }
}

impl EvalToml {
    pub fn build(&self) -> Result<EvalConfig> {
        let cfg = EvalConfig {
            iou_kind: self.iou_kind,
            class_thresholds: self.class_thresholds.clone(),
            default_threshold: self.default_threshold,
            buckets: self
                .buckets
                .iter()
                .map(|b| PointBucket {
                    min: b.min,
                    max: b.max,
                })
                .collect(),
        };
        cfg.validate().context("invalid [eval] section")?;
        Ok(cfg)
    }
}

impl RunConfig {
    /// Loads the file if given, otherwise starts from defaults.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_names.is_empty() {
            bail!("class_names must list at least one class");
        }
        if !(self.c > 0.0) {
            bail!("hotspot budget c must be positive, got {}", self.c);
        }
        if !(0.0..=1.0).contains(&self.encode_score) {
            bail!("encode_score must lie in [0, 1], got {}", self.encode_score);
        }
        self.grid.build()?;
        self.synth
            .build()
            .validate()
            .context("invalid [synth] section")?;
        for t in &self.synth.classes {
            if t.class_id as usize >= self.num_classes() {
                bail!(
                    "[synth] class template uses class_id {} but only {} class names are configured",
                    t.class_id,
                    self.num_classes()
                );
            }
        }
        self.focal.build()?;
        self.weights.build()?;
        self.inference.build()?;
        self.eval.build()?;
        Ok(())
    }

    /// Name for a class id, for report text.
    pub fn class_name(&self, class_id: u32) -> String {
        self.class_names
            .get(class_id as usize)
            .cloned()
            .unwrap_or_else(|| format!("class{class_id}"))
    }

    /// Writes the resolved configuration next to the run outputs.
    pub fn echo(&self, output_dir: &Path) -> Result<()> {
        std::fs::create_dir_all(output_dir)?;
        let text = toml::to_string_pretty(self).context("serializing resolved config")?;
        std::fs::write(output_dir.join("resolved_config.toml"), text)?;
        Ok(())
    }
}
