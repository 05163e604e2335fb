//! Rate sweeps over the sample size and calibration of the penalty constant.
//!
//! Every `(n, seed)` cell derives its data seed from the sweep's base seed,
//! so cells can run in any order on any number of workers.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{sample_dataset, solve_ddc, Mechanism};
use crate::error::{Error, Result};
use crate::mdp::{InstanceSpec, TabularLinearMdp};
use crate::mle::fit_mle;
use crate::pipeline::{measure, run_pipeline, PipelineConfig};
use crate::planner::{plan, plan_oracle, uncertainty_violation_audit, PlannerConfig};
use crate::reward::{recover_reward, RecoveredReward};
use crate::rng::mix_seed;

/// Sample sizes of the default sweep.
pub const DEFAULT_N_GRID: [usize; 7] = [250, 500, 1000, 2000, 4000, 8000, 16000];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub instance: InstanceSpec,
    pub gamma: f64,
    pub n_grid: Vec<usize>,
    pub seeds: usize,
    pub base_seed: u64,
    pub lambda_reg: f64,
    pub planner: PlannerConfig,
    #[serde(default = "default_mechanism")]
    pub mechanism: Mechanism,
    #[serde(default)]
    pub oracle: bool,
}

fn default_mechanism() -> Mechanism {
    Mechanism::Softmax
}

impl SweepSpec {
    /// `S = 5, A = 3, H = 3`, one-hot features, `gamma = 0.9`, 20 seeds.
    pub fn desk(planner: PlannerConfig) -> Self {
        SweepSpec {
            instance: InstanceSpec::new(0, 5, 3, 3, crate::mdp::FeatureMode::OneHotTabular),
            gamma: 0.9,
            n_grid: DEFAULT_N_GRID.to_vec(),
            seeds: 20,
            base_seed: 0,
            lambda_reg: 1.0,
            planner,
            mechanism: Mechanism::Softmax,
            oracle: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.instance.validate()?;
        self.planner.validate()?;
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::config("gamma", "must lie in [0, 1]"));
        }
        if self.n_grid.is_empty() || self.n_grid.contains(&0) {
            return Err(Error::config("n_grid", "must be nonempty with positive entries"));
        }
        if self.seeds == 0 {
            return Err(Error::config("seeds", "must be positive"));
        }
        if !(self.lambda_reg > 0.0) {
            return Err(Error::config("lambda_reg", "must be positive"));
        }
        Ok(())
    }

    pub fn cell_seed(&self, n: usize, seed_index: usize) -> u64 {
        mix_seed(mix_seed(self.base_seed, n as u64), seed_index as u64)
    }

    fn pipeline_config(&self, n: usize, seed_index: usize) -> PipelineConfig {
        PipelineConfig {
            mechanism: self.mechanism,
            lambda_reg: self.lambda_reg,
            oracle: self.oracle,
            ..PipelineConfig::new(self.gamma, n, self.cell_seed(n, seed_index), self.planner)
        }
    }
}

/// One `(n, seed)` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub n: usize,
    pub seed_index: usize,
    pub data_seed: u64,
    pub suboptimality: f64,
    pub policy_error: f64,
    pub q_error: f64,
    pub certificate_max_ratio: f64,
    pub violation_fraction: f64,
    pub any_violation: bool,
    pub theorem_bound: f64,
    pub beta: f64,
    /// Set when the run failed; the metrics are then `NaN`.
    pub error: Option<String>,
}

impl SweepCell {
    pub const CSV_HEADER: [&'static str; 12] = [
        "n",
        "seed_index",
        "data_seed",
        "suboptimality",
        "policy_error",
        "q_error",
        "certificate_max_ratio",
        "violation_fraction",
        "any_violation",
        "theorem_bound",
        "beta",
        "error",
    ];

    pub fn csv_record(&self) -> Vec<String> {
        vec![
            self.n.to_string(),
            self.seed_index.to_string(),
            self.data_seed.to_string(),
            self.suboptimality.to_string(),
            self.policy_error.to_string(),
            self.q_error.to_string(),
            self.certificate_max_ratio.to_string(),
            self.violation_fraction.to_string(),
            self.any_violation.to_string(),
            self.theorem_bound.to_string(),
            self.beta.to_string(),
            self.error.clone().unwrap_or_default(),
        ]
    }

    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

/// Least-squares line through `(ln n, ln mean)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    /// `None` when fewer than two usable points remain.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    /// `None` with fewer than three points.
    pub std_error: Option<f64>,
    pub points: Vec<(usize, f64)>,
    /// Grid points dropped because the mean was zero or not finite.
    pub excluded_n: Vec<usize>,
}

impl SlopeFit {
    pub fn is_defined(&self) -> bool {
        self.slope.is_some()
    }
}

/// Ordinary least squares of `ln y` on `ln n` over the positive means.
pub fn log_log_slope(means: &[(usize, f64)]) -> SlopeFit {
    let mut points = Vec::new();
    let mut excluded_n = Vec::new();
    for &(n, m) in means {
        if m > 0.0 && m.is_finite() {
            points.push((n, m));
        } else {
            excluded_n.push(n);
        }
    }
    let k = points.len();
    if k < 2 {
        return SlopeFit {
            slope: None,
            intercept: None,
            std_error: None,
            points,
            excluded_n,
        };
    }
    let xs: Vec<f64> = points.iter().map(|p| (p.0 as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let kf = k as f64;
    let mx = xs.iter().sum::<f64>() / kf;
    let my = ys.iter().sum::<f64>() / kf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return SlopeFit {
            slope: None,
            intercept: None,
            std_error: None,
            points,
            excluded_n,
        };
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let std_error = (k > 2).then(|| {
        let rss: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (y - intercept - slope * x).powi(2))
            .sum();
        (rss / (kf - 2.0) / sxx).sqrt()
    });
    SlopeFit {
        slope: Some(slope),
        intercept: Some(intercept),
        std_error,
        points,
        excluded_n,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSlopes {
    pub policy_error: SlopeFit,
    pub suboptimality: SlopeFit,
    pub certificate_max_ratio: SlopeFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub spec: SweepSpec,
    pub cells: Vec<SweepCell>,
    pub excluded_runs: usize,
    pub slopes: SweepSlopes,
    /// Zero-violation runs whose suboptimality exceeded the theorem bound.
    pub dominance_failures: usize,
    pub zero_violation_runs: usize,
}

impl SweepResult {
    /// Mean of a metric over successful runs at each grid point.
    pub fn means(&self, metric: impl Fn(&SweepCell) -> f64) -> Vec<(usize, f64)> {
        self.spec
            .n_grid
            .iter()
            .map(|&n| {
                let vals: Vec<f64> = self
                    .cells
                    .iter()
                    .filter(|c| c.n == n && !c.failed())
                    .map(&metric)
                    .collect();
                let mean = if vals.is_empty() {
                    f64::NAN
                } else {
                    vals.iter().sum::<f64>() / vals.len() as f64
                };
                (n, mean)
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(SweepCell::CSV_HEADER)?;
        for c in &self.cells {
            w.write_record(c.csv_record())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Tolerance of the dominance check `SubOpt <= bound`.
pub const DOMINANCE_SLACK: f64 = 1e-8;

pub fn run_cell(mdp: &TabularLinearMdp, spec: &SweepSpec, n: usize, seed_index: usize) -> SweepCell {
    let cfg = spec.pipeline_config(n, seed_index);
    let outcome = run_pipeline(mdp, &cfg).and_then(|run| measure(mdp, &run));
    match outcome {
        Ok(m) => SweepCell {
            n,
            seed_index,
            data_seed: cfg.data_seed,
            suboptimality: m.suboptimality,
            policy_error: m.mle.mean_policy_error(),
            q_error: m.mle.mean_q_error(),
            certificate_max_ratio: m.certificate_max_ratio,
            violation_fraction: m.audit.violation_fraction(),
            any_violation: m.audit.any_violation(),
            theorem_bound: m.theorem_bound,
            beta: m.beta,
            error: None,
        },
        Err(e) => SweepCell {
            n,
            seed_index,
            data_seed: cfg.data_seed,
            suboptimality: f64::NAN,
            policy_error: f64::NAN,
            q_error: f64::NAN,
            certificate_max_ratio: f64::NAN,
            violation_fraction: f64::NAN,
            any_violation: false,
            theorem_bound: f64::NAN,
            beta: f64::NAN,
            error: Some(e.to_string()),
        },
    }
}

/// Runs every cell; `on_cell` sees each cell as it finishes (in completion
/// order, possibly from several threads).
pub fn run_rate_sweep_with<F>(spec: &SweepSpec, on_cell: F) -> Result<SweepResult>
where
    F: Fn(&SweepCell) + Sync,
{
    spec.validate()?;
    let mdp = spec.instance.build()?;
    let jobs: Vec<(usize, usize)> = spec
        .n_grid
        .iter()
        .flat_map(|&n| (0..spec.seeds).map(move |i| (n, i)))
        .collect();
    let cells: Vec<SweepCell> = jobs
        .par_iter()
        .map(|&(n, i)| {
            let cell = run_cell(&mdp, spec, n, i);
            on_cell(&cell);
            cell
        })
        .collect();
    Ok(summarize(spec.clone(), cells))
}

pub fn run_rate_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    run_rate_sweep_with(spec, |_| {})
}

pub fn summarize(spec: SweepSpec, cells: Vec<SweepCell>) -> SweepResult {
    let excluded_runs = cells.iter().filter(|c| c.failed()).count();
    let ok = || cells.iter().filter(|c| !c.failed());
    let zero_violation_runs = ok().filter(|c| !c.any_violation).count();
    let dominance_failures = ok()
        .filter(|c| !c.any_violation && c.suboptimality > c.theorem_bound + DOMINANCE_SLACK)
        .count();
    let mut result = SweepResult {
        spec,
        cells,
        excluded_runs,
        slopes: SweepSlopes {
            policy_error: log_log_slope(&[]),
            suboptimality: log_log_slope(&[]),
            certificate_max_ratio: log_log_slope(&[]),
        },
        dominance_failures,
        zero_violation_runs,
    };
    result.slopes = SweepSlopes {
        policy_error: log_log_slope(&result.means(|c| c.policy_error)),
        suboptimality: log_log_slope(&result.means(|c| c.suboptimality)),
        certificate_max_ratio: log_log_slope(&result.means(|c| c.certificate_max_ratio)),
    };
    result
}

/// Acceptance window on one fitted slope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowCheck {
    pub metric: String,
    pub slope: Option<f64>,
    /// Accepted range; `None` bounds are open.
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    /// Range the rate is expected in; slopes outside it but accepted are
    /// flagged.
    pub target: Option<(f64, f64)>,
    pub passed: bool,
    pub flagged: bool,
}

fn window(metric: &str, fit: &SlopeFit, lower: Option<f64>, upper: Option<f64>, target: Option<(f64, f64)>) -> WindowCheck {
    let passed = fit.slope.is_some_and(|s| {
        lower.is_none_or(|l| s >= l) && upper.is_none_or(|u| s <= u)
    });
    let flagged = match (fit.slope, target) {
        (Some(s), Some((lo, hi))) => passed && (s < lo || s > hi),
        _ => false,
    };
    WindowCheck {
        metric: metric.into(),
        slope: fit.slope,
        lower,
        upper,
        target,
        passed,
        flagged,
    }
}

/// Slope windows of the desk experiment: choice-model error in
/// `[-1.25, -0.75]`, certificate ratio at most `0.15`, suboptimality at most
/// `-0.35` (steeper than `-0.65` is accepted and flagged).
pub fn rate_windows(result: &SweepResult) -> Vec<WindowCheck> {
    let s = &result.slopes;
    vec![
        window("policy_error", &s.policy_error, Some(-1.25), Some(-0.75), Some((-1.25, -0.75))),
        window("certificate_max_ratio", &s.certificate_max_ratio, None, Some(0.15), None),
        window("suboptimality", &s.suboptimality, None, Some(-0.35), Some((-0.65, -0.35))),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSpec {
    pub instance: InstanceSpec,
    pub gamma: f64,
    pub n: usize,
    /// At least 100.
    pub seeds: usize,
    pub base_seed: u64,
    pub delta: f64,
    /// Candidate constants `c` of the theorem schedule.
    pub grid: Vec<f64>,
    pub lambda_reg: f64,
    #[serde(default = "default_mechanism")]
    pub mechanism: Mechanism,
    /// Use the true reward and transitions in place of the estimates.
    #[serde(default)]
    pub oracle: bool,
}

/// Minimum number of seeds behind a calibrated constant.
pub const MIN_CALIBRATION_SEEDS: usize = 100;

/// Sample size of the default calibration batch: the geometric centre of
/// [`DEFAULT_N_GRID`].
pub const DESK_CALIBRATION_N: usize = 2000;

/// `1e-4 * 10^(k/12)` for `k = 0..=36`.
pub fn desk_calibration_grid() -> Vec<f64> {
    (0..=36).map(|k| 1e-4 * 10f64.powf(k as f64 / 12.0)).collect()
}

impl CalibrationSpec {
    /// Default batch on the desk instance.
    pub fn desk() -> Self {
        Self::new(
            SweepSpec::desk(PlannerConfig::manual(0.0, 1.0)).instance,
            DESK_CALIBRATION_N,
            desk_calibration_grid(),
        )
    }

    pub fn new(instance: InstanceSpec, n: usize, grid: Vec<f64>) -> Self {
        CalibrationSpec {
            instance,
            gamma: 0.9,
            n,
            seeds: MIN_CALIBRATION_SEEDS,
            base_seed: 0,
            delta: 0.05,
            grid,
            lambda_reg: 1.0,
            mechanism: Mechanism::Softmax,
            oracle: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.instance.validate()?;
        if self.grid.is_empty() {
            return Err(Error::config("grid", "must be nonempty"));
        }
        if self.grid.iter().any(|c| !(*c >= 0.0) || !c.is_finite()) {
            return Err(Error::config("grid", "constants must be finite and nonnegative"));
        }
        if self.seeds < MIN_CALIBRATION_SEEDS {
            return Err(Error::config(
                "seeds",
                format!("need at least {MIN_CALIBRATION_SEEDS}"),
            ));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config("delta", "must lie in (0, 1)"));
        }
        if self.n == 0 {
            return Err(Error::config("n", "must be positive"));
        }
        if !(self.lambda_reg > 0.0) {
            return Err(Error::config("lambda_reg", "must be positive"));
        }
        Ok(())
    }

    pub fn planner(&self, constant: f64) -> PlannerConfig {
        PlannerConfig::theorem(constant, self.delta, self.lambda_reg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub chosen_constant: f64,
    /// `(c, fraction of seeds with at least one violating cell)`, sorted by `c`.
    pub curve: Vec<(f64, f64)>,
    pub seeds: usize,
    pub delta: f64,
}

/// For each seed, estimates once and plans for every grid constant.
pub fn violation_curve(spec: &CalibrationSpec) -> Result<Vec<(f64, f64)>> {
    spec.validate()?;
    let mdp = spec.instance.build()?;
    let mut grid = spec.grid.clone();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let behavior = solve_ddc(&mdp, spec.gamma);
    let flags: Vec<Vec<bool>> = (0..spec.seeds)
        .into_par_iter()
        .map(|i| {
            let seed = mix_seed(spec.base_seed, i as u64);
            let ds = sample_dataset(&mdp, &behavior, spec.n, seed, spec.mechanism)?;
            let mle = crate::mle::MleConfig::for_instance(mdp.horizon, mdp.dim());
            let est = fit_mle(&ds, &mdp.features, &mle)?;
            let rec = recover_reward(&ds, &est, &mdp.features, spec.gamma, spec.lambda_reg)?;
            let audit_rec = if spec.oracle {
                RecoveredReward::exact(&mdp, &rec)
            } else {
                rec.clone()
            };
            grid.iter()
                .map(|&c| {
                    let cfg = spec.planner(c);
                    let pp = if spec.oracle {
                        plan_oracle(&mdp, &rec, ds.n, &cfg)?
                    } else {
                        plan(&ds, &rec, &mdp.features, &cfg)?
                    };
                    Ok(uncertainty_violation_audit(&pp, &audit_rec, &mdp, 1.0)?.any_violation())
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(grid
        .iter()
        .enumerate()
        .map(|(j, &c)| {
            let hits = flags.iter().filter(|f| f[j]).count();
            (c, hits as f64 / spec.seeds as f64)
        })
        .collect())
}

/// Smallest grid constant whose violation frequency is at most `delta`.
pub fn calibrate_beta(spec: &CalibrationSpec) -> Result<Calibration> {
    let curve = violation_curve(spec)?;
    match curve.iter().find(|(_, f)| *f <= spec.delta) {
        Some(&(c, _)) => Ok(Calibration {
            chosen_constant: c,
            curve,
            seeds: spec.seeds,
            delta: spec.delta,
        }),
        None => Err(Error::CalibrationFailed {
            delta: spec.delta,
            curve,
        }),
    }
}

/// `P(X <= k)` for `X ~ Bin(n, p)`.
pub fn binomial_cdf(k: usize, n: usize, p: f64) -> f64 {
    let mut term = (1.0 - p).powi(n as i32);
    let mut total = term;
    for i in 0..k.min(n) {
        term *= (n - i) as f64 / (i + 1) as f64 * p / (1.0 - p);
        total += term;
    }
    total.min(1.0)
}

/// Smallest `k` with `P(Bin(n, p) <= k) >= q`.
pub fn binomial_quantile(n: usize, p: f64, q: f64) -> usize {
    (0..=n).find(|&k| binomial_cdf(k, n, p) >= q).unwrap_or(n)
}

/// One-sided Clopper-Pearson upper confidence bound on a binomial rate.
pub fn clopper_pearson_upper(successes: usize, n: usize, confidence: f64) -> f64 {
    if successes >= n {
        return 1.0;
    }
    let alpha = 1.0 - confidence;
    let (mut lo, mut hi) = (successes as f64 / n as f64, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if binomial_cdf(successes, n, mid) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}
