//! Subcommand implementations over a lazily populated output directory.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::sync::Mutex;

use anyhow::{anyhow, Context, Result};
use choicerl_core::agent::{sample_dataset, solve_ddc, BehaviorModel, ChoiceDataset};
use choicerl_core::diagnostics::{CoverageReport, EffectiveDimensions};
use choicerl_core::kernel::{
    information_gain_proxy, kernel_fit_mle, kernel_plan, kernel_recover_reward, DomainKernel,
    InformationGainProxy, KernelReward,
};
use choicerl_core::linalg::to_dmatrix;
use choicerl_core::mdp::{optimal_policy, suboptimality, PolicyTable, TabularLinearMdp};
use choicerl_core::mle::{fit_mle, mle_error_report, EstimatedModel, MleErrorReport};
use choicerl_core::pipeline::{theory_diagnostics, PipelineRun};
use choicerl_core::planner::{
    audit_reward_table, plan, plan_oracle, theorem_suboptimality_bound, PessimisticPolicy,
    PlannerConfig, ViolationAudit,
};
use choicerl_core::reward::{recover_reward, reward_error_certificate, RecoveredReward};
use choicerl_core::sweep::{
    calibrate_beta, rate_windows, run_rate_sweep_with, Calibration, SweepCell, SweepResult,
    WindowCheck, DOMINANCE_SLACK,
};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Stage};
use crate::output::{Chart, OutputDir, Series};

/// Recovered reward in either representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "model")]
pub enum RewardArtifact {
    Linear(RecoveredReward),
    /// Sample Gram matrices are omitted; they follow from the points and the
    /// kernel.
    Kernel(KernelReward),
}

impl RewardArtifact {
    fn table(&self, mdp: &TabularLinearMdp) -> Vec<Vec<Vec<f64>>> {
        match self {
            RewardArtifact::Linear(rec) => (0..mdp.horizon)
                .map(|h| {
                    (0..mdp.num_states)
                        .map(|s| (0..mdp.num_actions).map(|a| rec.reward(&mdp.features, h, s, a)).collect())
                        .collect()
                })
                .collect(),
            RewardArtifact::Kernel(k) => k.reward.clone(),
        }
    }
}

/// The decision rule alone, comparable across representations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyArtifact {
    pub greedy_actions: Vec<Vec<usize>>,
    pub pi_tilde: PolicyTable,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditArtifact {
    pub audit: ViolationAudit,
    pub violation_fraction: f64,
    pub suboptimality: f64,
    pub theorem_bound: f64,
    /// Checked only when no cell violated.
    pub dominance_holds: Option<bool>,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub completed_stages: Vec<Stage>,
    pub failure: Option<StageFailure>,
    pub n: usize,
    pub oracle: bool,
    pub kernel: bool,
    pub calibrated_constant: Option<f64>,
    pub beta: Option<f64>,
    pub mle: Option<MleErrorReport>,
    pub reward_max_error: Option<f64>,
    pub certificate_max_ratio: Option<f64>,
    pub suboptimality: Option<f64>,
    pub audit: Option<AuditArtifact>,
    pub coverage: Option<CoverageReport>,
    pub effective_dimensions: Option<EffectiveDimensions>,
    pub information_gain: Option<Vec<InformationGainProxy>>,
}

pub struct Workspace {
    pub cfg: ExperimentConfig,
    pub out: OutputDir,
    reuse: bool,
    mdp: Option<TabularLinearMdp>,
    behavior: Option<BehaviorModel>,
    dataset: Option<ChoiceDataset>,
    estimate: Option<EstimatedModel>,
    reward: Option<RewardArtifact>,
    policy: Option<PessimisticPolicy>,
    planner: Option<(PlannerConfig, Option<f64>)>,
    info_gain: Option<Vec<InformationGainProxy>>,
    pub written: Vec<PathBuf>,
}

fn err(e: choicerl_core::Error) -> anyhow::Error {
    anyhow!(e)
}

impl Workspace {
    /// With `reuse`, artifacts already in the directory for the same
    /// configuration are loaded instead of recomputed.
    pub fn new(cfg: ExperimentConfig, reuse: bool) -> Result<Self> {
        let out = OutputDir::create(&cfg.output_dir, cfg.hash())?;
        Ok(Workspace {
            cfg,
            out,
            reuse,
            mdp: None,
            behavior: None,
            dataset: None,
            estimate: None,
            reward: None,
            policy: None,
            planner: None,
            info_gain: None,
            written: Vec::new(),
        })
    }

    fn cached<T: serde::de::DeserializeOwned>(&self, name: &str) -> Result<Option<T>> {
        if self.reuse {
            self.out.read_json(name)
        } else {
            Ok(None)
        }
    }

    fn save<T: Serialize>(&mut self, name: &str, payload: &T) -> Result<()> {
        let p = self.out.write_json(name, payload)?;
        self.written.push(p);
        Ok(())
    }

    fn save_csv(
        &mut self,
        name: &str,
        fill: impl FnOnce(&mut Vec<u8>) -> choicerl_core::Result<()>,
    ) -> Result<()> {
        let p = self.out.write_csv(name, |buf| fill(buf).map_err(err))?;
        self.written.push(p);
        Ok(())
    }

    pub fn mdp(&mut self) -> Result<TabularLinearMdp> {
        if let Some(m) = &self.mdp {
            return Ok(m.clone());
        }
        let m = match self.cached("mdp.json")? {
            Some(m) => m,
            None => {
                let m = self.cfg.instance.build().map_err(err)?;
                self.save("mdp.json", &m)?;
                m
            }
        };
        self.mdp = Some(m.clone());
        Ok(m)
    }

    pub fn behavior(&mut self) -> Result<BehaviorModel> {
        if let Some(b) = &self.behavior {
            return Ok(b.clone());
        }
        let b = match self.cached("behavior.json")? {
            Some(b) => b,
            None => {
                let b = solve_ddc(&self.mdp()?, self.cfg.gamma);
                self.save("behavior.json", &b)?;
                b
            }
        };
        self.behavior = Some(b.clone());
        Ok(b)
    }

    pub fn dataset(&mut self) -> Result<ChoiceDataset> {
        if let Some(d) = &self.dataset {
            return Ok(d.clone());
        }
        let d = match self.cached("dataset.json")? {
            Some(d) => d,
            None => {
                let (m, b) = (self.mdp()?, self.behavior()?);
                let d = sample_dataset(&m, &b, self.cfg.n, self.cfg.data_seed, self.cfg.mechanism)
                    .map_err(err)?;
                self.save("dataset.json", &d)?;
                self.save_csv("dataset.csv", |buf| d.write_csv(buf))?;
                d
            }
        };
        self.dataset = Some(d.clone());
        Ok(d)
    }

    pub fn estimate(&mut self) -> Result<EstimatedModel> {
        if let Some(e) = &self.estimate {
            return Ok(e.clone());
        }
        let e = match self.cached("estimate.json")? {
            Some(e) => e,
            None => {
                let (m, d) = (self.mdp()?, self.dataset()?);
                let mle = self.cfg.mle_config();
                let e = match &self.cfg.kernel {
                    Some(spec) => {
                        let fit = kernel_fit_mle(&d, &m.features, spec, &mle).map_err(err)?;
                        self.save("kernel_fit.json", &fit.fits)?;
                        fit.model
                    }
                    None => fit_mle(&d, &m.features, &mle).map_err(err)?,
                };
                self.save("estimate.json", &e)?;
                e
            }
        };
        self.estimate = Some(e.clone());
        Ok(e)
    }

    pub fn reward(&mut self) -> Result<RewardArtifact> {
        if let Some(r) = &self.reward {
            return Ok(r.clone());
        }
        let r = match self.cached("reward.json")? {
            Some(r) => r,
            None => {
                let (m, d, e) = (self.mdp()?, self.dataset()?, self.estimate()?);
                let r = match &self.cfg.kernel {
                    Some(spec) => {
                        let mut k = kernel_recover_reward(&d, &e, &m.features, spec, self.cfg.gamma)
                            .map_err(err)?;
                        let domain = DomainKernel::new(spec, &m.features).map_err(err)?;
                        self.info_gain = Some(
                            k.fits
                                .iter()
                                .map(|f| information_gain_proxy(&to_dmatrix(&f.gram), &domain.gram, spec.lambda_reg))
                                .collect::<choicerl_core::Result<_>>()
                                .map_err(err)?,
                        );
                        k.fits.iter_mut().for_each(|f| f.gram.clear());
                        RewardArtifact::Kernel(k)
                    }
                    None => {
                        let rec = recover_reward(&d, &e, &m.features, self.cfg.gamma, self.cfg.lambda_reg)
                            .map_err(err)?;
                        let cert = reward_error_certificate(&rec, &m).map_err(err)?;
                        self.save_csv("certificate.csv", |buf| cert.write_csv(buf))?;
                        RewardArtifact::Linear(rec)
                    }
                };
                self.save("reward.json", &r)?;
                r
            }
        };
        self.reward = Some(r.clone());
        Ok(r)
    }

    /// The planner, calibrating first when none is configured.
    pub fn planner(&mut self) -> Result<(PlannerConfig, Option<f64>)> {
        if let Some(p) = self.planner {
            return Ok(p);
        }
        let p = match self.cfg.planner {
            Some(p) => (p, None),
            None => {
                let cal = self.calibrate()?;
                let c = cal.chosen_constant;
                (
                    PlannerConfig::theorem(c, self.cfg.calibration.delta, self.cfg.lambda_reg),
                    Some(c),
                )
            }
        };
        self.planner = Some(p);
        Ok(p)
    }

    pub fn calibrate(&mut self) -> Result<Calibration> {
        if let Some(c) = self.cached::<Calibration>("calibration.json")? {
            return Ok(c);
        }
        let spec = self.cfg.calibration_spec();
        match calibrate_beta(&spec) {
            Ok(cal) => {
                self.save("calibration.json", &cal)?;
                self.plot_calibration(&cal.curve, spec.delta)?;
                Ok(cal)
            }
            Err(choicerl_core::Error::CalibrationFailed { delta, curve }) => {
                self.plot_calibration(&curve, delta)?;
                self.save("calibration_failed.json", &curve)?;
                Err(anyhow!(
                    "calibration failed: no grid constant reached violation rate <= {delta}"
                ))
            }
            Err(e) => Err(err(e)),
        }
    }

    fn plot_calibration(&mut self, curve: &[(f64, f64)], delta: f64) -> Result<()> {
        let chart = Chart {
            title: "Violation frequency against the beta constant".into(),
            x_label: "constant c".into(),
            y_label: "fraction of runs with a violation".into(),
            log_x: true,
            log_y: false,
            series: vec![
                Series {
                    label: "violation frequency".into(),
                    points: curve.iter().filter(|p| p.0 > 0.0).cloned().collect(),
                    color: "#1f77b4",
                },
                Series {
                    label: format!("delta = {delta}"),
                    points: curve
                        .iter()
                        .filter(|p| p.0 > 0.0)
                        .map(|p| (p.0, delta))
                        .collect(),
                    color: "#d62728",
                },
            ],
        };
        let svg = chart.to_svg(&self.out.csv_banner());
        let p = self.out.write_bytes("plots/violation_curve.svg", svg.as_bytes())?;
        self.written.push(p);
        Ok(())
    }

    pub fn policy(&mut self) -> Result<PessimisticPolicy> {
        if let Some(p) = &self.policy {
            return Ok(p.clone());
        }
        let p = match self.cached("plan.json")? {
            Some(p) => p,
            None => {
                let (m, d, r) = (self.mdp()?, self.dataset()?, self.reward()?);
                let (planner, _) = self.planner()?;
                let p = match &r {
                    RewardArtifact::Kernel(k) => {
                        let beta = planner.resolve_beta(d.n, d.horizon, d.num_actions, m.dim());
                        kernel_plan(&d, k, &m.features, beta).map_err(err)?.policy
                    }
                    RewardArtifact::Linear(rec) if self.cfg.oracle => {
                        plan_oracle(&m, rec, d.n, &planner).map_err(err)?
                    }
                    RewardArtifact::Linear(rec) => plan(&d, rec, &m.features, &planner).map_err(err)?,
                };
                self.save("plan.json", &p)?;
                let decision = PolicyArtifact {
                    greedy_actions: (0..p.horizon())
                        .map(|h| (0..m.num_states).map(|s| p.pi_tilde.greedy_action(h, s)).collect())
                        .collect(),
                    pi_tilde: p.pi_tilde.clone(),
                    beta: p.beta,
                };
                self.save("policy.json", &decision)?;
                self.save_csv("penalty.csv", |buf| p.write_penalty_csv(buf))?;
                p
            }
        };
        self.policy = Some(p.clone());
        Ok(p)
    }

    pub fn audit(&mut self) -> Result<AuditArtifact> {
        let (m, p, r) = (self.mdp()?, self.policy()?, self.reward()?);
        let reward = if self.cfg.oracle {
            (0..m.horizon).map(|h| m.reward_table(h)).collect()
        } else {
            r.table(&m)
        };
        let audit = audit_reward_table(&p, &reward, &m, 1.0).map_err(err)?;
        let (pi_star, _) = optimal_policy(&m);
        let sub = suboptimality(&m, &p.pi_tilde).map_err(err)?;
        let bound = theorem_suboptimality_bound(&p, &m, &pi_star).map_err(err)?;
        let a = AuditArtifact {
            violation_fraction: audit.violation_fraction(),
            dominance_holds: (!audit.any_violation()).then_some(sub <= bound + DOMINANCE_SLACK),
            audit,
            suboptimality: sub,
            theorem_bound: bound,
            beta: p.beta,
        };
        self.save("audit.json", &a)?;
        Ok(a)
    }

    /// Runs the configured stages and writes `report.json`, also when a
    /// stage fails.
    pub fn pipeline(&mut self) -> Result<Report> {
        let mut report = Report {
            n: self.cfg.n,
            oracle: self.cfg.oracle,
            kernel: self.cfg.kernel.is_some(),
            ..Report::default()
        };
        let last = self.cfg.stages.iter().copied().max_by_key(|s| *s as u8).unwrap_or(Stage::Audit);
        let order = [Stage::Estimate, Stage::Recover, Stage::Plan, Stage::Audit];
        for stage in order.into_iter().take_while(|s| (*s as u8) <= (last as u8)) {
            if let Err(e) = self.run_stage(stage, &mut report) {
                report.failure = Some(StageFailure {
                    stage: format!("{stage:?}").to_lowercase(),
                    error: format!("{e:#}"),
                });
                break;
            }
            report.completed_stages.push(stage);
        }
        self.save("report.json", &report)?;
        match &report.failure {
            Some(f) => Err(anyhow!("stage {} failed: {}", f.stage, f.error)),
            None => Ok(report),
        }
    }

    fn run_stage(&mut self, stage: Stage, report: &mut Report) -> Result<()> {
        match stage {
            Stage::Estimate => {
                let (e, b, d) = (self.estimate()?, self.behavior()?, self.dataset()?);
                report.mle = Some(mle_error_report(&e, &b, &d).map_err(err)?);
            }
            Stage::Recover => {
                let (m, r) = (self.mdp()?, self.reward()?);
                let table = r.table(&m);
                let max_err = (0..m.horizon)
                    .flat_map(|h| {
                        let t = &table;
                        let m = &m;
                        (0..m.num_states)
                            .flat_map(move |s| (0..m.num_actions).map(move |a| (t[h][s][a] - m.reward(h, s, a)).abs()))
                    })
                    .fold(0.0, f64::max);
                report.reward_max_error = Some(max_err);
                match &r {
                    RewardArtifact::Linear(rec) => {
                        let cert = reward_error_certificate(rec, &m).map_err(err)?;
                        report.certificate_max_ratio = Some(cert.max_ratio());
                    }
                    RewardArtifact::Kernel(_) => report.information_gain = self.info_gain.clone(),
                }
            }
            Stage::Plan => {
                let p = self.policy()?;
                let (_, cal) = self.planner()?;
                report.calibrated_constant = cal;
                report.beta = Some(p.beta);
                report.suboptimality = Some(suboptimality(&self.mdp()?, &p.pi_tilde).map_err(err)?);
            }
            Stage::Audit => {
                let a = self.audit()?;
                report.suboptimality = Some(a.suboptimality);
                report.audit = Some(a);
                if let RewardArtifact::Linear(rec) = self.reward()? {
                    let run = PipelineRun {
                        behavior: self.behavior()?,
                        dataset: self.dataset()?,
                        estimate: self.estimate()?,
                        reward: rec,
                        policy: self.policy()?,
                        oracle: self.cfg.oracle,
                    };
                    let (cov, eff) = theory_diagnostics(&self.mdp()?, &run).map_err(err)?;
                    report.coverage = Some(cov);
                    report.effective_dimensions = Some(eff);
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricMeans {
    pub policy_error: Vec<(usize, f64)>,
    pub suboptimality: Vec<(usize, f64)>,
    pub certificate_max_ratio: Vec<(usize, f64)>,
    pub theorem_bound: Vec<(usize, f64)>,
    pub violation_rate: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub calibrated_constant: Option<f64>,
    pub planner: PlannerConfig,
    pub cells: usize,
    pub excluded_runs: usize,
    pub slopes: choicerl_core::sweep::SweepSlopes,
    pub windows: Vec<WindowCheck>,
    pub windows_passed: bool,
    pub undefined_slopes: Vec<String>,
    pub dominance_failures: usize,
    pub zero_violation_runs: usize,
    pub means: MetricMeans,
}

fn cell_csv(cells: &[SweepCell], banner: &str) -> Result<Vec<u8>> {
    let mut buf = banner.as_bytes().to_vec();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(SweepCell::CSV_HEADER)?;
        for c in cells {
            w.write_record(c.csv_record())?;
        }
        w.flush()?;
    }
    Ok(buf)
}

impl Workspace {
    /// Rows reach `sweep.csv` as cells finish; the file is rewritten in grid
    /// order at the end.
    pub fn sweep(&mut self) -> Result<SweepSummary> {
        let (planner, calibrated) = self.planner()?;
        let spec = self.cfg.sweep_spec(planner);
        let csv_path = self.out.path("sweep.csv");
        let file = File::create(&csv_path).with_context(|| format!("creating {}", csv_path.display()))?;
        let mut live = BufWriter::new(file);
        live.write_all(self.out.csv_banner().as_bytes())?;
        let mut writer = csv::Writer::from_writer(live);
        writer.write_record(SweepCell::CSV_HEADER)?;
        writer.flush()?;
        let writer = Mutex::new(writer);
        let result = run_rate_sweep_with(&spec, |cell| {
            let mut w = writer.lock().expect("csv writer");
            // a failed row write leaves earlier rows intact
            let _ = w.write_record(cell.csv_record());
            let _ = w.flush();
        })
        .map_err(err)?;
        drop(writer);
        let sorted = cell_csv(&result.cells, &self.out.csv_banner())?;
        self.written.push(self.out.write_bytes("sweep.csv", &sorted)?);
        let summary = summarize_sweep(&result, calibrated);
        self.save("summary.json", &summary)?;
        self.plot_sweep(&result)?;
        Ok(summary)
    }

    fn plot_sweep(&mut self, r: &SweepResult) -> Result<()> {
        let f = |v: Vec<(usize, f64)>| v.into_iter().map(|(n, y)| (n as f64, y)).collect::<Vec<_>>();
        let charts = [
            (
                "policy_error.svg",
                "Choice-model error",
                vec![("mean squared l1 policy error", f(r.means(|c| c.policy_error)), "#1f77b4")],
            ),
            (
                "suboptimality.svg",
                "Suboptimality of the pessimistic policy",
                vec![
                    ("mean suboptimality", f(r.means(|c| c.suboptimality)), "#1f77b4"),
                    ("mean penalty bound", f(r.means(|c| c.theorem_bound)), "#ff7f0e"),
                ],
            ),
            (
                "certificate_max_ratio.svg",
                "Reward error over elliptical potential",
                vec![("mean max ratio", f(r.means(|c| c.certificate_max_ratio)), "#1f77b4")],
            ),
        ];
        for (name, title, series) in charts {
            let chart = Chart {
                title: title.into(),
                x_label: "n".into(),
                y_label: "mean over seeds".into(),
                log_x: true,
                log_y: true,
                series: series
                    .into_iter()
                    .map(|(label, points, color)| Series {
                        label: label.into(),
                        points,
                        color,
                    })
                    .collect(),
            };
            let svg = chart.to_svg(&self.out.csv_banner());
            let p = self.out.write_bytes(&format!("plots/{name}"), svg.as_bytes())?;
            self.written.push(p);
        }
        Ok(())
    }
}

pub fn summarize_sweep(r: &SweepResult, calibrated_constant: Option<f64>) -> SweepSummary {
    let windows = rate_windows(r);
    let s = &r.slopes;
    let undefined_slopes = [
        ("policy_error", &s.policy_error),
        ("suboptimality", &s.suboptimality),
        ("certificate_max_ratio", &s.certificate_max_ratio),
    ]
    .iter()
    .filter(|(_, fit)| !fit.is_defined())
    .map(|(k, _)| k.to_string())
    .collect();
    SweepSummary {
        calibrated_constant,
        planner: r.spec.planner,
        cells: r.cells.len(),
        excluded_runs: r.excluded_runs,
        slopes: r.slopes.clone(),
        windows_passed: windows.iter().all(|w| w.passed),
        windows,
        undefined_slopes,
        dominance_failures: r.dominance_failures,
        zero_violation_runs: r.zero_violation_runs,
        means: MetricMeans {
            policy_error: r.means(|c| c.policy_error),
            suboptimality: r.means(|c| c.suboptimality),
            certificate_max_ratio: r.means(|c| c.certificate_max_ratio),
            theorem_bound: r.means(|c| c.theorem_bound),
            violation_rate: r.means(|c| c.any_violation as u8 as f64),
        },
    }
}
