//! TOML run configuration.

use std::path::{Path, PathBuf};

use ezpgdpo_core::analytic::MertonParams;
use ezpgdpo_core::evaluation::PolicyEvaluationConfig;
use ezpgdpo_core::market::{InitialStateSampler, Market, MarketParams};
use ezpgdpo_core::pgdpo::{Problem, TrainConfig};
use ezpgdpo_core::preferences::EzParams;
use ezpgdpo_core::projection::PortfolioConstraint;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Seeds of a seed study; `--seed`/`--seeds` override.
    pub seeds: Vec<u64>,
    pub threads: usize,
    /// Single-threaded and with wall-clock columns zeroed so logs and CSVs
    /// are bit-identical across runs.
    pub reference_mode: bool,
    /// Train a time-additive (psi = 1/R) run first and start from its
    /// networks.
    pub warm_start: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection { seeds: (0..5).collect(), threads: 1, reference_mode: false, warm_start: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    pub max_err_amount: f64,
    pub max_err_consumption: f64,
    pub max_ce_gap: f64,
    /// `|mean residual| <= hjb_sd_multiple * sd`.
    pub hjb_sd_multiple: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { max_err_amount: 0.05, max_err_consumption: 0.05, max_ce_gap: 0.005, hjb_sd_multiple: 10.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    /// Monte Carlo paths for welfare and terminal-wealth statistics.
    pub paths: usize,
    /// Time steps of evaluation simulations; 0 uses the training steps.
    pub steps: usize,
    pub initial_wealth: f64,
    pub hedging_wealth_points: usize,
    pub hedging_factor_points: usize,
    pub factor_slopes: bool,
    pub bootstrap: usize,
    /// Value-only retraining for the recursive value of the policy.
    pub policy_value: bool,
    pub policy_evaluation: PolicyEvaluationConfig,
    pub thresholds: Thresholds,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            paths: 100_000,
            steps: 0,
            initial_wealth: 1.0,
            hedging_wealth_points: 10,
            hedging_factor_points: 10,
            factor_slopes: true,
            bootstrap: ezpgdpo_core::evaluation::BOOTSTRAP_REPLICATIONS,
            policy_value: true,
            policy_evaluation: PolicyEvaluationConfig::default(),
            thresholds: Thresholds::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoSection {
    /// Parent directory of run directories.
    pub out: PathBuf,
    /// Checkpoint every this many iterations; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Also export one training-policy batch as a per-(path, step) CSV.
    pub export_paths: bool,
}

impl Default for IoSection {
    fn default() -> Self {
        IoSection { out: PathBuf::from("runs"), checkpoint_every: 0, export_paths: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub market: MarketParams,
    pub preferences: EzParams,
    pub constraints: PortfolioConstraint,
    pub training: TrainConfig,
    pub evaluation: EvaluationSection,
    pub io: IoSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            run: RunSection::default(),
            market: MarketParams::baseline(),
            preferences: EzParams::default(),
            constraints: PortfolioConstraint::default(),
            training: TrainConfig::default(),
            evaluation: EvaluationSection::default(),
            io: IoSection::default(),
        }
    }
}

impl RunConfig {
    /// Single-asset time-additive benchmark with a closed-form solution.
    pub fn merton_validation() -> Self {
        let mut cfg = RunConfig::default();
        cfg.market = MarketParams::single_asset(0.10, 0.20, 0.02, 1.5);
        cfg.preferences.eis = 1.0 / cfg.preferences.risk_aversion;
        cfg.constraints = PortfolioConstraint::capped(2.0);
        cfg.training.init = InitialStateSampler { wealth_low: 0.1, wealth_high: 2.0, factor_truncation_sd: 0.0 };
        cfg
    }

    pub fn from_toml(text: &str) -> AppResult<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| AppError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> AppResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| AppError::Input { path: path.into(), source })?;
        RunConfig::from_toml(&text).map_err(|e| match e {
            AppError::Config(m) => AppError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Full validation; errors name the offending field.
    pub fn validate(&self) -> AppResult<()> {
        let wrap = |e: ezpgdpo_core::Error| AppError::Config(e.to_string());
        self.market.validate().map_err(wrap)?;
        self.preferences.validate().map_err(wrap)?;
        self.constraints.validate().map_err(wrap)?;
        self.training.validate().map_err(wrap)?;
        self.evaluation.policy_evaluation.validate().map_err(wrap)?;
        let e = &self.evaluation;
        if e.paths < 2 {
            return Err(AppError::Config("evaluation.paths: must be >= 2".into()));
        }
        if !(e.initial_wealth > self.market.wealth_floor) {
            return Err(AppError::Config("evaluation.initial_wealth: must exceed market.wealth_floor".into()));
        }
        if e.hedging_wealth_points == 0 || e.hedging_factor_points == 0 {
            return Err(AppError::Config("evaluation.hedging_*_points: must be >= 1".into()));
        }
        if e.bootstrap < 2 {
            return Err(AppError::Config("evaluation.bootstrap: must be >= 2".into()));
        }
        if self.run.threads == 0 {
            return Err(AppError::Config("run.threads: must be >= 1".into()));
        }
        Ok(())
    }

    pub fn problem(&self) -> AppResult<Problem> {
        let market = Market::new(self.market.clone())?;
        Ok(Problem::new(market, self.preferences, self.constraints)?)
    }

    /// Worker threads after applying reference mode.
    pub fn effective_threads(&self) -> usize {
        if self.run.reference_mode {
            1
        } else {
            self.run.threads
        }
    }

    pub fn evaluation_steps(&self) -> usize {
        if self.evaluation.steps == 0 {
            self.training.steps
        } else {
            self.evaluation.steps
        }
    }

    /// Closed-form benchmark matching this config; errors unless it is a
    /// single-asset time-additive problem without factor loading.
    pub fn merton_params(&self) -> AppResult<MertonParams> {
        if self.market.assets.len() != 1 {
            return Err(AppError::Config(format!(
                "market.assets: the Merton benchmark needs exactly one asset, found {}",
                self.market.assets.len()
            )));
        }
        let a = self.market.assets[0];
        if a.lrr_beta != 0.0 {
            return Err(AppError::Config("market.assets[0].lrr_beta: must be 0 for the Merton benchmark".into()));
        }
        if !self.preferences.is_crra_limit() {
            return Err(AppError::Config("preferences.eis: must equal 1/risk_aversion for the Merton benchmark".into()));
        }
        let p = &self.preferences;
        let m = MertonParams {
            mu: a.mean_return,
            sigma: a.volatility,
            rate: self.market.risk_free_rate,
            risk_aversion: p.risk_aversion,
            discount: p.discount,
            bequest_weight: p.bequest_weight / p.discount,
            horizon: self.market.horizon,
        };
        m.validate().map_err(|e| AppError::Config(e.to_string()))?;
        Ok(m)
    }

    /// The same config in the time-additive limit, used for warm starts.
    pub fn crra_limit(&self) -> RunConfig {
        let mut c = self.clone();
        c.preferences = self.preferences.crra_limit();
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        for cfg in [RunConfig::default(), RunConfig::merton_validation()] {
            let text = cfg.to_toml();
            assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
        }
    }

    #[test]
    fn empty_file_is_the_baseline() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.market.assets.len(), 5);
        assert_eq!(cfg.training.steps, 128);
        assert_eq!(cfg.training.batch, 256);
    }

    #[test]
    fn unknown_keys_rejected() {
        let e = RunConfig::from_toml("[training]\nstepz = 3\n").unwrap_err();
        assert!(e.to_string().contains("stepz"), "{e}");
        assert!(RunConfig::from_toml("[bogus]\n").is_err());
    }

    #[test]
    fn invalid_values_name_the_field() {
        let text = "[market]\nassets = [{ mean_return = 0.1, volatility = -0.2, factor_correlation = 0.0, lrr_beta = 0.0 }]\n";
        let e = RunConfig::from_toml(text).unwrap_err();
        assert!(e.to_string().contains("volatility"), "{e}");
        assert_eq!(e.exit_code(), 2);
        let e = RunConfig::from_toml("[training]\nbatch = 0\n").unwrap_err();
        assert!(e.to_string().contains("training.batch"), "{e}");
    }

    #[test]
    fn merton_params_follow_the_config() {
        let m = RunConfig::merton_validation().merton_params().unwrap();
        assert_eq!(m, MertonParams::validation());
        assert!(RunConfig::default().merton_params().is_err());
    }

    #[test]
    fn reference_mode_forces_one_thread() {
        let mut cfg = RunConfig::default();
        cfg.run.threads = 4;
        assert_eq!(cfg.effective_threads(), 4);
        cfg.run.reference_mode = true;
        assert_eq!(cfg.effective_threads(), 1);
    }
}
