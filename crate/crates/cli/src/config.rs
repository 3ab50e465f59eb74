//! Pipeline configuration: a flat `key = value` TOML file plus `key=value`
//! overrides from the command line.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use robust_mvs::fusion::FusionConfig;
use robust_mvs::io::PlyFormat;
use robust_mvs::loss::LossConfig;
use robust_mvs::sweep::SweepConfig;
use toml::Value;

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// Directory with `images/`, `cams/` and optionally `depths_gt/`.
    pub scene: PathBuf,
    /// Directory receiving `depths/`, `confidence/`, `reports/` and the fused cloud.
    pub output: PathBuf,
    /// Worker threads; 0 uses every available core.
    pub threads: usize,
    pub seed: u64,
    pub loss: LossConfig,
    pub sweep: SweepConfig,
    pub fusion: FusionConfig,
    /// Gradient-descent iterations after the sweep; 0 disables refinement.
    pub refine_steps: usize,
    /// Largest per-pixel depth change of one refinement step.
    pub refine_step_size: f64,
    pub ply_format: PlyFormat,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            scene: PathBuf::from("."),
            output: PathBuf::from("out"),
            threads: 0,
            seed: 0,
            loss: LossConfig::default(),
            sweep: SweepConfig::default(),
            fusion: FusionConfig::default(),
            refine_steps: 0,
            refine_step_size: 0.05,
            ply_format: PlyFormat::BinaryLittleEndian,
        }
    }
}

/// Every recognised key, in the order [`PipelineConfig::to_toml`] writes them.
pub const KEYS: [&str; 24] = [
    "scene",
    "output",
    "threads",
    "seed",
    "alpha",
    "beta",
    "gamma",
    "num_views",
    "top_k",
    "huber_delta",
    "ssim_window",
    "ssim_c1",
    "ssim_c2",
    "num_hypotheses",
    "aggregation",
    "matching_cost",
    "window",
    "temperature",
    "confidence_threshold",
    "refine_steps",
    "refine_step_size",
    "depth_tolerance",
    "reprojection_tolerance",
    "min_consistent_views",
];

fn float(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => bail!("{key} must be a number, got {v}"),
    }
}

fn uint(key: &str, v: &Value) -> Result<usize> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        _ => bail!("{key} must be a non-negative integer, got {v}"),
    }
}

fn string<'a>(key: &str, v: &'a Value) -> Result<&'a str> {
    v.as_str().ok_or_else(|| anyhow!("{key} must be a string, got {v}"))
}

impl PipelineConfig {
    /// Defaults overlaid with `file` (if any) and then with `overrides`.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).with_context(|| format!("{}", path.display()))?;
            cfg.apply_text(&text).with_context(|| format!("{}", path.display()))?;
        }
        for o in overrides {
            cfg.apply_override(o)?;
        }
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let table: toml::Table = text.parse()?;
        for (key, value) in &table {
            self.set(key, value)?;
        }
        Ok(())
    }

    /// Applies one `key=value`; a value that is not a TOML literal is taken as a string.
    pub fn apply_override(&mut self, item: &str) -> Result<()> {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| anyhow!("override '{item}' is not key=value"))?;
        let (key, raw) = (key.trim(), raw.trim());
        let value = format!("v = {raw}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| Value::String(raw.to_string()));
        self.set(key, &value)
    }

    pub fn set(&mut self, key: &str, v: &Value) -> Result<()> {
        match key {
            "scene" => self.scene = string(key, v)?.into(),
            "output" => self.output = string(key, v)?.into(),
            "threads" => self.threads = uint(key, v)?,
            "seed" => self.seed = uint(key, v)? as u64,
            "alpha" => self.loss.alpha = float(key, v)?,
            "beta" => self.loss.beta = float(key, v)?,
            "gamma" => self.loss.gamma = float(key, v)?,
            "num_views" => self.loss.num_views = uint(key, v)?,
            "top_k" => self.loss.top_k = uint(key, v)?,
            "huber_delta" => self.loss.huber_delta = float(key, v)?,
            "ssim_window" => self.loss.ssim_window = uint(key, v)?,
            "ssim_c1" => self.loss.ssim_c1 = float(key, v)?,
            "ssim_c2" => self.loss.ssim_c2 = float(key, v)?,
            "num_hypotheses" => self.sweep.num_hypotheses = uint(key, v)?,
            "aggregation" => self.sweep.aggregation = string(key, v)?.parse()?,
            "matching_cost" => self.sweep.matching_cost = string(key, v)?.parse()?,
            "window" => self.sweep.window = uint(key, v)?,
            "temperature" => {
                self.sweep.temperature = match v {
                    Value::String(s) if s == "auto" => None,
                    _ => Some(float(key, v)?),
                }
            }
            "confidence_threshold" => self.sweep.confidence_threshold = float(key, v)?,
            "refine_steps" => self.refine_steps = uint(key, v)?,
            "refine_step_size" => self.refine_step_size = float(key, v)?,
            "depth_tolerance" => self.fusion.depth_tolerance = float(key, v)?,
            "reprojection_tolerance" => self.fusion.reprojection_tolerance = float(key, v)?,
            "min_consistent_views" => self.fusion.min_consistent_views = uint(key, v)?,
            "ply_format" => self.ply_format = string(key, v)?.parse()?,
            _ => bail!("unknown configuration key '{key}'"),
        }
        Ok(())
    }

    /// Checks every nested configuration; paths are checked by the commands
    /// that read them.
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.sweep.validate()?;
        self.fusion.validate()?;
        if !(self.refine_step_size > 0.0 && self.refine_step_size.is_finite()) {
            bail!("invalid configuration: refine_step_size must be positive");
        }
        Ok(())
    }

    /// The effective configuration in the same format [`Self::apply_text`] reads.
    pub fn to_toml(&self) -> String {
        let temperature = match self.sweep.temperature {
            Some(t) => format!("{t:?}"),
            None => "\"auto\"".to_string(),
        };
        let ply = match self.ply_format {
            PlyFormat::Ascii => "ascii",
            PlyFormat::BinaryLittleEndian => "binary",
        };
        let q = |p: &Path| Value::String(p.display().to_string()).to_string();
        let l = &self.loss;
        let s = &self.sweep;
        let f = &self.fusion;
        let values: [String; 24] = [
            q(&self.scene),
            q(&self.output),
            self.threads.to_string(),
            self.seed.to_string(),
            format!("{:?}", l.alpha),
            format!("{:?}", l.beta),
            format!("{:?}", l.gamma),
            l.num_views.to_string(),
            l.top_k.to_string(),
            format!("{:?}", l.huber_delta),
            l.ssim_window.to_string(),
            format!("{:?}", l.ssim_c1),
            format!("{:?}", l.ssim_c2),
            s.num_hypotheses.to_string(),
            format!("\"{}\"", s.aggregation),
            format!("\"{}\"", s.matching_cost),
            s.window.to_string(),
            temperature,
            format!("{:?}", s.confidence_threshold),
            self.refine_steps.to_string(),
            format!("{:?}", self.refine_step_size),
            format!("{:?}", f.depth_tolerance),
            format!("{:?}", f.reprojection_tolerance),
            f.min_consistent_views.to_string(),
        ];
        let mut out = String::new();
        for (k, v) in KEYS.iter().zip(values) {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out.push_str(&format!("ply_format = \"{ply}\"\n"));
        out
    }
}
