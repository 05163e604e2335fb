//! Experiment configuration: one JSON document, overridden by `--set` pairs
//! and then by the dedicated flags.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use choicerl_core::agent::Mechanism;
use choicerl_core::kernel::KernelSpec;
use choicerl_core::mdp::{FeatureMode, InstanceSpec};
use choicerl_core::mle::MleConfig;
use choicerl_core::planner::PlannerConfig;
use choicerl_core::sweep::{
    desk_calibration_grid, CalibrationSpec, SweepSpec, DEFAULT_N_GRID, DESK_CALIBRATION_N,
    MIN_CALIBRATION_SEEDS,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationOptions {
    pub n: usize,
    pub seeds: usize,
    pub base_seed: u64,
    pub delta: f64,
    pub grid: Vec<f64>,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions {
            n: DESK_CALIBRATION_N,
            seeds: MIN_CALIBRATION_SEEDS,
            base_seed: 0,
            delta: 0.05,
            grid: desk_calibration_grid(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepOptions {
    pub n_grid: Vec<usize>,
    pub seeds: usize,
    pub base_seed: u64,
    /// Exit with status 3 when a slope leaves its window.
    pub check_windows: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            n_grid: DEFAULT_N_GRID.to_vec(),
            seeds: 20,
            base_seed: 0,
            check_windows: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Estimate,
    Recover,
    Plan,
    Audit,
}

pub const ALL_STAGES: [Stage; 4] = [Stage::Estimate, Stage::Recover, Stage::Plan, Stage::Audit];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub instance: InstanceSpec,
    pub gamma: f64,
    pub n: usize,
    pub data_seed: u64,
    pub mechanism: Mechanism,
    pub lambda_reg: f64,
    /// `None` uses the ball radius `H sqrt(d)` and Newton.
    pub mle: Option<MleConfig>,
    /// Fixed planner; when absent the constant comes from `calibration`.
    pub planner: Option<PlannerConfig>,
    pub calibration: CalibrationOptions,
    /// Replaces the linear stages with their kernel versions.
    pub kernel: Option<KernelSpec>,
    pub sweep: SweepOptions,
    pub oracle: bool,
    pub output_dir: PathBuf,
    /// Stages run by `pipeline`.
    pub stages: Vec<Stage>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            instance: InstanceSpec::new(0, 5, 3, 3, FeatureMode::OneHotTabular),
            gamma: 0.9,
            n: 2000,
            data_seed: 0,
            mechanism: Mechanism::Softmax,
            lambda_reg: 1.0,
            mle: None,
            planner: None,
            calibration: CalibrationOptions::default(),
            kernel: None,
            sweep: SweepOptions::default(),
            oracle: false,
            output_dir: PathBuf::from("out"),
            stages: ALL_STAGES.to_vec(),
        }
    }
}

/// Flag overrides, applied after the file and the `--set` pairs.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub set: Vec<String>,
    pub seed: Option<u64>,
    pub n: Option<usize>,
    pub data_seed: Option<u64>,
    pub gamma: Option<f64>,
    pub lambda_reg: Option<f64>,
    pub beta: Option<f64>,
    pub beta_constant: Option<f64>,
    pub kernel: Option<String>,
    pub oracle: bool,
    pub out: Option<PathBuf>,
    pub check_windows: bool,
}

/// Parses `value` as JSON, falling back to a plain string.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn set_path(doc: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cur = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, key) in parts.iter().enumerate() {
        if key.is_empty() {
            bail!("empty key in --set path `{path}`");
        }
        if !cur.is_object() {
            *cur = Value::Object(Default::default());
        }
        let obj = cur.as_object_mut().expect("object");
        if i + 1 == parts.len() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(key.to_string()).or_insert(Value::Null);
    }
    Ok(())
}

fn parse_kernel(text: &str, lambda: f64) -> Result<KernelSpec> {
    let (kind, arg) = text.split_once(':').unwrap_or((text, ""));
    match kind {
        "linear" => Ok(KernelSpec::linear(lambda)),
        "rbf" => {
            let bw = if arg.is_empty() { 1.0 } else { arg.parse().context("rbf bandwidth")? };
            Ok(KernelSpec::rbf(bw, lambda))
        }
        _ => bail!("unknown kernel `{text}` (expected linear or rbf[:bandwidth])"),
    }
}

impl ExperimentConfig {
    /// Defaults, then the file, then overrides.
    pub fn load(path: Option<&Path>, ov: &Overrides) -> Result<Self> {
        let mut doc = serde_json::to_value(ExperimentConfig::default())?;
        if let Some(p) = path {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            let file: Value = serde_json::from_str(&text)
                .with_context(|| format!("parsing config {}", p.display()))?;
            let Value::Object(fields) = file else {
                bail!("config {} must be a JSON object", p.display());
            };
            let obj = doc.as_object_mut().expect("object");
            for (k, v) in fields {
                obj.insert(k, v);
            }
        }
        for pair in &ov.set {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| anyhow!("--set expects key=value, got `{pair}`"))?;
            set_path(&mut doc, k, parse_value(v))?;
        }
        let mut cfg: ExperimentConfig = serde_path_to_error::deserialize(doc)
            .map_err(|e| anyhow!("config field `{}`: {}", e.path(), e.inner()))?;
        if let Some(s) = ov.seed {
            cfg.instance.seed = s;
        }
        if let Some(n) = ov.n {
            cfg.n = n;
        }
        if let Some(s) = ov.data_seed {
            cfg.data_seed = s;
        }
        if let Some(g) = ov.gamma {
            cfg.gamma = g;
        }
        if let Some(l) = ov.lambda_reg {
            cfg.lambda_reg = l;
        }
        if let Some(b) = ov.beta {
            cfg.planner = Some(PlannerConfig::manual(b, cfg.lambda_reg));
        }
        if let Some(c) = ov.beta_constant {
            cfg.planner = Some(PlannerConfig::theorem(c, cfg.calibration.delta, cfg.lambda_reg));
        }
        if let Some(k) = &ov.kernel {
            let lambda = cfg.kernel.map_or(cfg.lambda_reg, |k| k.lambda_reg);
            cfg.kernel = Some(parse_kernel(k, lambda)?);
        }
        if ov.oracle {
            cfg.oracle = true;
        }
        if let Some(o) = &ov.out {
            cfg.output_dir = o.clone();
        }
        if ov.check_windows {
            cfg.sweep.check_windows = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every stage's preconditions before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.instance.validate().context("instance")?;
        if !(0.0..=1.0).contains(&self.gamma) {
            bail!("config field `gamma`: must lie in [0, 1]");
        }
        if self.n == 0 {
            bail!("config field `n`: must be positive");
        }
        if !(self.lambda_reg > 0.0) {
            bail!("config field `lambda_reg`: must be positive");
        }
        if let Some(m) = &self.mle {
            m.validate().context("mle")?;
        }
        if let Some(p) = &self.planner {
            p.validate().context("planner")?;
        }
        if let Some(k) = &self.kernel {
            k.validate().context("kernel")?;
            if self.oracle {
                bail!("config field `oracle`: not available with a kernel");
            }
        }
        if self.planner.is_none() {
            self.calibration_spec().validate().context("calibration")?;
        }
        self.sweep_spec(PlannerConfig::manual(0.0, self.lambda_reg))
            .validate()
            .context("sweep")?;
        if self.stages.is_empty() {
            bail!("config field `stages`: must name at least one stage");
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, without the output directory.
    pub fn hash(&self) -> String {
        let mut hashed = self.clone();
        hashed.output_dir = PathBuf::new();
        let text = serde_json::to_string(&hashed).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn mle_config(&self) -> MleConfig {
        self.mle
            .clone()
            .unwrap_or_else(|| MleConfig::for_instance(self.instance.horizon, self.instance.dim))
    }

    pub fn calibration_spec(&self) -> CalibrationSpec {
        let c = &self.calibration;
        CalibrationSpec {
            gamma: self.gamma,
            seeds: c.seeds,
            base_seed: c.base_seed,
            delta: c.delta,
            lambda_reg: self.lambda_reg,
            mechanism: self.mechanism,
            oracle: self.oracle,
            ..CalibrationSpec::new(self.instance.clone(), c.n, c.grid.clone())
        }
    }

    pub fn sweep_spec(&self, planner: PlannerConfig) -> SweepSpec {
        SweepSpec {
            instance: self.instance.clone(),
            gamma: self.gamma,
            n_grid: self.sweep.n_grid.clone(),
            seeds: self.sweep.seeds,
            base_seed: self.sweep.base_seed,
            lambda_reg: self.lambda_reg,
            planner,
            mechanism: self.mechanism,
            oracle: self.oracle,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_creates_nested_paths() {
        let mut v = serde_json::json!({"a": {"b": 1}});
        set_path(&mut v, "a.c.d", parse_value("2.5")).unwrap();
        set_path(&mut v, "e", parse_value("text")).unwrap();
        assert_eq!(v, serde_json::json!({"a": {"b": 1, "c": {"d": 2.5}}, "e": "text"}));
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.output_dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.n += 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn default_config_round_trips() {
        let a = ExperimentConfig::default();
        let text = serde_json::to_string(&a).unwrap();
        let b: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(a, b);
        assert!(a.validate().is_ok());
    }
}
