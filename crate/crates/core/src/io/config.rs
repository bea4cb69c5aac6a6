//! Run configuration: a strict TOML file covering the whole pipeline.
//!
//! Unknown keys are errors, and every omitted knob falls back to the
//! engine's defaults (two rounds at 10/30 colors, ROI weight 30, 64 patches
//! sharing weight 80, patch fraction 0.8, reference text "photo", 150
//! iterations, learning rates 0.2/0.01).

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::geom::{IRect, Rect};
use crate::guidance::{EmbedderBackend, GuidanceConfig, LinearMockEmbedder, RoiPrompt};
use crate::optim::OptimizeMode;
use crate::vectorize::{RoundSpec, VectorizeConfig};
use crate::{Error, Result};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    input: Option<String>,
    output: Option<String>,
    render: Option<String>,
    frames: Option<String>,
    vectorize: Option<RawVectorize>,
    guidance: Option<RawGuidance>,
    optimizer: Option<RawOptimizer>,
    backend: Option<RawBackend>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawVectorize {
    seed: Option<u64>,
    rounds: Option<Vec<RawRound>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRound {
    n_colors: u32,
    region: Option<[i64; 4]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGuidance {
    rois: Option<Vec<RawRoi>>,
    reference_text: Option<String>,
    content_weight: Option<f64>,
    warp_source_patches: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRoi {
    rect: [i64; 4],
    prompt: String,
    roi_weight: Option<f64>,
    patch_count: Option<u32>,
    patch_weight_total: Option<f64>,
    patch_fraction: Option<f64>,
    perspective_strength: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOptimizer {
    iterations: Option<u32>,
    lr_shape: Option<f64>,
    lr_color: Option<f64>,
    mode: Option<String>,
    subregion: Option<[i64; 4]>,
    seed: Option<u64>,
    snapshot_every: Option<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBackend {
    kind: Option<String>,
    seed: Option<u64>,
    text_model: Option<String>,
    image_model: Option<String>,
    overrides: Option<Vec<RawOverride>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOverride {
    text: String,
    vector: Vec<f64>,
}

/// Optimizer knobs before they meet a document (the element mask is derived
/// from `subregion` once the canvas is known).
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSettings {
    pub iterations: u32,
    pub lr_shape: f64,
    pub lr_color: f64,
    pub mode: OptimizeMode,
    pub subregion: Option<Rect>,
    pub seed: u64,
    pub snapshot_every: u32,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            iterations: 150,
            lr_shape: 0.2,
            lr_color: 0.01,
            mode: OptimizeMode::Both,
            subregion: None,
            seed: 0,
            snapshot_every: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Mock,
    External,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub seed: u64,
    pub text_model: Option<PathBuf>,
    pub image_model: Option<PathBuf>,
    pub overrides: Vec<(String, Vec<f64>)>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig { kind: BackendKind::Mock, seed: 0, text_model: None, image_model: None, overrides: Vec::new() }
    }
}

impl BackendConfig {
    /// Instantiate the configured backend.
    ///
    /// The mock backend is built in-process. External model files would need
    /// an inference runtime this crate does not ship; integrators plug real
    /// encoders in by implementing [`EmbedderBackend`] (the
    /// `FiniteDifferenceVjp` wrapper covers backends without an analytic
    /// image gradient).
    pub fn build(&self) -> Result<Box<dyn EmbedderBackend>> {
        match self.kind {
            BackendKind::Mock => {
                let mut mock = LinearMockEmbedder::with_seed(self.seed);
                for (text, vector) in &self.overrides {
                    mock.register_text(text.clone(), vector.clone())?;
                }
                Ok(Box::new(mock))
            }
            BackendKind::External => Err(Error::Backend(
                "external backend: no embedding runtime is bundled; implement the \
                 EmbedderBackend trait over your model files (see README)"
                    .into(),
            )),
        }
    }
}

/// Fully resolved run configuration with every default filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub render: Option<PathBuf>,
    pub frames: Option<PathBuf>,
    pub vectorize: VectorizeConfig,
    pub guidance: GuidanceConfig,
    pub optimizer: OptimizerSettings,
    pub backend: BackendConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: None,
            output: None,
            render: None,
            frames: None,
            vectorize: VectorizeConfig::default(),
            guidance: GuidanceConfig::default(),
            optimizer: OptimizerSettings::default(),
            backend: BackendConfig::default(),
        }
    }
}

fn irect_from(v: [i64; 4], what: &str) -> Result<IRect> {
    if v[2] <= 0 || v[3] <= 0 {
        return Err(Error::InvalidConfig(format!("{what}: width and height must be positive")));
    }
    Ok(IRect::new(v[0], v[1], v[2] as u32, v[3] as u32))
}

fn resolve(raw: RawConfig) -> Result<RunConfig> {
    let mut config = RunConfig { input: raw.input.map(PathBuf::from), output: raw.output.map(PathBuf::from), render: raw.render.map(PathBuf::from), frames: raw.frames.map(PathBuf::from), ..Default::default() };

    if let Some(v) = raw.vectorize {
        if let Some(seed) = v.seed {
            config.vectorize.seed = seed;
        }
        if let Some(rounds) = v.rounds {
            if rounds.is_empty() {
                return Err(Error::InvalidConfig("vectorize.rounds must not be empty".into()));
            }
            config.vectorize.rounds = rounds
                .into_iter()
                .enumerate()
                .map(|(i, r)| {
                    let mut spec = RoundSpec::new(r.n_colors);
                    if let Some(region) = r.region {
                        spec.region = Some(irect_from(region, &format!("vectorize.rounds[{i}].region"))?);
                    }
                    Ok(spec)
                })
                .collect::<Result<Vec<_>>>()?;
        }
        config.vectorize.validate()?;
    }

    if let Some(g) = raw.guidance {
        if let Some(text) = g.reference_text {
            config.guidance.reference_text = text;
        }
        if let Some(w) = g.content_weight {
            if w < 0.0 {
                return Err(Error::InvalidConfig("guidance.content_weight must be non-negative".into()));
            }
            config.guidance.content_weight = w;
        }
        if let Some(warp) = g.warp_source_patches {
            config.guidance.warp_source_patches = warp;
        }
        for (i, roi) in g.rois.unwrap_or_default().into_iter().enumerate() {
            let area = irect_from(roi.rect, &format!("guidance.rois[{i}].rect"))?;
            let mut prompt = RoiPrompt::new(area, roi.prompt);
            if let Some(w) = roi.roi_weight {
                prompt.roi_weight = w;
            }
            if let Some(n) = roi.patch_count {
                prompt.patch_count = n;
            }
            if let Some(w) = roi.patch_weight_total {
                prompt.patch_weight_total = w;
            }
            if let Some(f) = roi.patch_fraction {
                if !(f > 0.0 && f <= 1.0) {
                    return Err(Error::InvalidConfig(format!(
                        "guidance.rois[{i}].patch_fraction must be in (0, 1], got {f}"
                    )));
                }
                prompt.patch_fraction = f;
            }
            if let Some(s) = roi.perspective_strength {
                if !(0.0..1.0).contains(&s) {
                    return Err(Error::InvalidConfig(format!(
                        "guidance.rois[{i}].perspective_strength must be in [0, 1), got {s}"
                    )));
                }
                prompt.perspective_strength = s;
            }
            if prompt.roi_weight < 0.0 || prompt.patch_weight_total < 0.0 {
                return Err(Error::InvalidConfig(format!("guidance.rois[{i}]: weights must be non-negative")));
            }
            config.guidance.rois.push(prompt);
        }
    }

    if let Some(o) = raw.optimizer {
        if let Some(n) = o.iterations {
            config.optimizer.iterations = n;
        }
        if let Some(lr) = o.lr_shape {
            if lr < 0.0 {
                return Err(Error::InvalidConfig("optimizer.lr_shape must be non-negative".into()));
            }
            config.optimizer.lr_shape = lr;
        }
        if let Some(lr) = o.lr_color {
            if lr < 0.0 {
                return Err(Error::InvalidConfig("optimizer.lr_color must be non-negative".into()));
            }
            config.optimizer.lr_color = lr;
        }
        if let Some(mode) = o.mode {
            config.optimizer.mode = match mode.as_str() {
                "both" => OptimizeMode::Both,
                "shape_only" => OptimizeMode::ShapeOnly,
                "color_only" => OptimizeMode::ColorOnly,
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "optimizer.mode must be both, shape_only, or color_only; got `{other}`"
                    )))
                }
            };
        }
        if let Some(sub) = o.subregion {
            let r = irect_from(sub, "optimizer.subregion")?;
            config.optimizer.subregion = Some(r.to_rect());
        }
        if let Some(seed) = o.seed {
            config.optimizer.seed = seed;
        }
        if let Some(every) = o.snapshot_every {
            if every == 0 {
                return Err(Error::InvalidConfig("optimizer.snapshot_every must be positive".into()));
            }
            config.optimizer.snapshot_every = every;
        }
    }

    if let Some(b) = raw.backend {
        if let Some(kind) = b.kind {
            config.backend.kind = match kind.as_str() {
                "mock" => BackendKind::Mock,
                "external" => BackendKind::External,
                other => return Err(Error::InvalidConfig(format!("backend.kind must be mock or external, got `{other}`"))),
            };
        }
        if let Some(seed) = b.seed {
            config.backend.seed = seed;
        }
        config.backend.text_model = b.text_model.map(PathBuf::from);
        config.backend.image_model = b.image_model.map(PathBuf::from);
        if config.backend.kind == BackendKind::External
            && (config.backend.text_model.is_none() || config.backend.image_model.is_none())
        {
            return Err(Error::InvalidConfig(
                "backend.kind = \"external\" requires backend.text_model and backend.image_model".into(),
            ));
        }
        for o in b.overrides.unwrap_or_default() {
            config.backend.overrides.push((o.text, o.vector));
        }
    }

    Ok(config)
}

/// Parse a configuration string; see [`load_config`].
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    resolve(raw)
}

/// Load and validate a TOML run configuration, filling in defaults.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::FileAccess { path: path.to_path_buf(), message: e.to_string() })?;
    parse_config(&text)
}
