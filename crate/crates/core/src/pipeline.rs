//! End-to-end composition of the stages on a known instance, with the
//! measurements the rate experiments and reports need.

use serde::{Deserialize, Serialize};

use crate::agent::{sample_dataset, solve_ddc, BehaviorModel, ChoiceDataset, Mechanism};
use crate::diagnostics::{coverage_check, effective_dimensions, feature_second_moments};
use crate::diagnostics::{CoverageReport, EffectiveDimensions};
use crate::error::Result;
use crate::mdp::{optimal_policy, suboptimality, TabularLinearMdp};
use crate::mle::{fit_mle, mle_error_report, EstimatedModel, MleConfig, MleErrorReport};
use crate::planner::{
    plan, plan_oracle, theorem_suboptimality_bound, uncertainty_violation_audit, PessimisticPolicy,
    PlannerConfig, ViolationAudit,
};
use crate::reward::{recover_reward, reward_error_certificate, RecoveredReward};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub gamma: f64,
    pub n: usize,
    pub data_seed: u64,
    pub mechanism: Mechanism,
    /// `None` uses [`MleConfig::for_instance`].
    #[serde(default)]
    pub mle: Option<MleConfig>,
    pub lambda_reg: f64,
    pub planner: PlannerConfig,
    /// Plan with the true reward and transitions; only the penalty uses data.
    #[serde(default)]
    pub oracle: bool,
}

impl PipelineConfig {
    pub fn new(gamma: f64, n: usize, data_seed: u64, planner: PlannerConfig) -> Self {
        PipelineConfig {
            gamma,
            n,
            data_seed,
            mechanism: Mechanism::Softmax,
            mle: None,
            lambda_reg: planner.lambda_reg,
            planner,
            oracle: false,
        }
    }

    pub fn mle_config(&self, mdp: &TabularLinearMdp) -> MleConfig {
        self.mle
            .clone()
            .unwrap_or_else(|| MleConfig::for_instance(mdp.horizon, mdp.dim()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRun {
    pub behavior: BehaviorModel,
    pub dataset: ChoiceDataset,
    pub estimate: EstimatedModel,
    pub reward: RecoveredReward,
    pub policy: PessimisticPolicy,
    /// Set when the policy was planned against the true model.
    pub oracle: bool,
}

pub fn run_pipeline(mdp: &TabularLinearMdp, cfg: &PipelineConfig) -> Result<PipelineRun> {
    let behavior = solve_ddc(mdp, cfg.gamma);
    let dataset = sample_dataset(mdp, &behavior, cfg.n, cfg.data_seed, cfg.mechanism)?;
    run_on_dataset(mdp, behavior, dataset, cfg)
}

/// Runs the learner on an existing dataset.
pub fn run_on_dataset(
    mdp: &TabularLinearMdp,
    behavior: BehaviorModel,
    dataset: ChoiceDataset,
    cfg: &PipelineConfig,
) -> Result<PipelineRun> {
    let estimate = fit_mle(&dataset, &mdp.features, &cfg.mle_config(mdp))?;
    let reward = recover_reward(&dataset, &estimate, &mdp.features, cfg.gamma, cfg.lambda_reg)?;
    let policy = if cfg.oracle {
        plan_oracle(mdp, &reward, dataset.n, &cfg.planner)?
    } else {
        plan(&dataset, &reward, &mdp.features, &cfg.planner)?
    };
    Ok(PipelineRun {
        behavior,
        dataset,
        estimate,
        reward,
        policy,
        oracle: cfg.oracle,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub suboptimality: f64,
    pub mle: MleErrorReport,
    pub certificate_max_ratio: f64,
    pub reward_max_error: f64,
    pub audit: ViolationAudit,
    pub theorem_bound: f64,
    pub beta: f64,
}

pub fn measure(mdp: &TabularLinearMdp, run: &PipelineRun) -> Result<RunMetrics> {
    let (pi_star, _) = optimal_policy(mdp);
    let cert = reward_error_certificate(&run.reward, mdp)?;
    let audit_reward = if run.oracle {
        RecoveredReward::exact(mdp, &run.reward)
    } else {
        run.reward.clone()
    };
    Ok(RunMetrics {
        suboptimality: suboptimality(mdp, &run.policy.pi_tilde)?,
        mle: mle_error_report(&run.estimate, &run.behavior, &run.dataset)?,
        certificate_max_ratio: cert.max_ratio(),
        reward_max_error: cert.max_abs_error(),
        audit: uncertainty_violation_audit(&run.policy, &audit_reward, mdp, 1.0)?,
        theorem_bound: theorem_suboptimality_bound(&run.policy, mdp, &pi_star)?,
        beta: run.policy.beta,
    })
}

/// Coverage and effective dimensions for a finished run.
pub fn theory_diagnostics(
    mdp: &TabularLinearMdp,
    run: &PipelineRun,
) -> Result<(CoverageReport, EffectiveDimensions)> {
    let (pi_star, _) = optimal_policy(mdp);
    let coverage = coverage_check(mdp, &run.behavior, &pi_star, run.dataset.n)?;
    let grams: Vec<_> = (0..mdp.horizon).map(|h| run.reward.gram_matrix(h)).collect();
    let eff = effective_dimensions(
        &grams,
        &feature_second_moments(mdp, &run.behavior.pi_b),
        &feature_second_moments(mdp, &pi_star),
        run.reward.lambda_reg,
        run.dataset.n,
    )?;
    Ok((coverage, eff))
}
