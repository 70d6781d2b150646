//! Training configuration.

use crate::error::{invalid, Result};
use crate::market::InitialStateSampler;
use crate::nn::{AdamConfig, CostateHead, NetworkSpec, ValueHead, WealthEncoding};
use crate::projection::ProjectionGradient;

/// Weights of the loss terms.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct LossWeights {
    /// Weight of the adjoint loss in the critic loss.
    pub adjoint: f64,
    /// Weight of the `mean |pi|^2` regularizer subtracted from the actor
    /// objective.
    pub regularization: f64,
    /// Weight of the squared infeasibility penalty in soft-penalty mode.
    pub penalty: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { adjoint: 1.0, regularization: 0.0, penalty: 10.0 }
    }
}

/// Training variants compared in the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Ablation {
    #[default]
    Full,
    /// Portfolio projection off; infeasibility penalized in the actor.
    SoftPenalty,
    /// Wealth floor replaced by a tiny positivity guard.
    NoFloor,
    /// No adjoint loss; the actor reads costates off the value network.
    ValueOnly,
    /// Critic trained on the adjoint loss alone.
    AdjointOnly,
}

impl Ablation {
    pub const ALL: [Ablation; 5] =
        [Ablation::SoftPenalty, Ablation::NoFloor, Ablation::ValueOnly, Ablation::AdjointOnly, Ablation::Full];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::SoftPenalty => "soft-penalty",
            Ablation::NoFloor => "no-floor",
            Ablation::ValueOnly => "value-only",
            Ablation::AdjointOnly => "adjoint-only",
        }
    }

    pub fn parse(s: &str) -> Option<Ablation> {
        Ablation::ALL.into_iter().find(|a| a.name() == s)
    }
}

/// Source of the second-order terms in the actor objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum ActorCurvature {
    /// Input Jacobian of the costate network.
    #[default]
    Costate,
    /// Drift-only Hamiltonian.
    None,
}

/// Network shapes and output heads.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct NetworkConfig {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub activation: crate::nn::Activation,
    pub value_head: ValueHead,
    pub costate_head: CostateHead,
    pub wealth_encoding: WealthEncoding,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            hidden_layers: 3,
            hidden_width: 128,
            activation: crate::nn::Activation::Softplus,
            value_head: ValueHead::UtilityScaled,
            costate_head: CostateHead::WealthScaled,
            wealth_encoding: WealthEncoding::Log,
        }
    }
}

impl NetworkConfig {
    /// Hidden-layer template; the trainer fills in input and output sizes.
    pub fn spec(&self) -> NetworkSpec {
        NetworkSpec {
            input_dim: 3,
            hidden_layers: self.hidden_layers,
            hidden_width: self.hidden_width,
            activation: self.activation,
            output_dim: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct TrainConfig {
    /// Time steps per path.
    pub steps: usize,
    /// Paths simulated per iteration.
    pub batch: usize,
    pub iterations: usize,
    /// Random (path, step) pairs in the value loss; 0 uses all of them.
    pub value_points: usize,
    /// Random points in the adjoint loss and the actor objective; 0 uses all.
    pub costate_points: usize,
    /// Relative change of window-averaged losses below which training stops;
    /// 0 disables early stopping.
    pub stop_tolerance: f64,
    pub stop_window: usize,
    pub value_adam: AdamConfig,
    pub costate_adam: AdamConfig,
    pub policy_adam: AdamConfig,
    pub weights: LossWeights,
    pub ablation: Ablation,
    pub actor_curvature: ActorCurvature,
    pub projection_gradient: ProjectionGradient,
    pub network: NetworkConfig,
    pub init: InitialStateSampler,
    /// Paths per simulation task.
    pub chunk: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 128,
            batch: 256,
            iterations: 2000,
            value_points: 4096,
            costate_points: 1024,
            stop_tolerance: 0.0,
            stop_window: 100,
            value_adam: AdamConfig::with_rate(1e-3),
            costate_adam: AdamConfig::with_rate(1e-3),
            policy_adam: AdamConfig::with_rate(5e-4),
            weights: LossWeights::default(),
            ablation: Ablation::Full,
            actor_curvature: ActorCurvature::Costate,
            projection_gradient: ProjectionGradient::Inward,
            network: NetworkConfig::default(),
            init: InitialStateSampler::default(),
            chunk: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(invalid("training.steps", "must be >= 1"));
        }
        if self.batch == 0 {
            return Err(invalid("training.batch", "must be >= 1"));
        }
        if !(self.stop_tolerance >= 0.0) {
            return Err(invalid("training.stop_tolerance", "must be >= 0"));
        }
        if self.stop_window == 0 {
            return Err(invalid("training.stop_window", "must be >= 1"));
        }
        if self.chunk == 0 {
            return Err(invalid("training.chunk", "must be >= 1"));
        }
        let w = &self.weights;
        if !(w.adjoint >= 0.0 && w.regularization >= 0.0 && w.penalty >= 0.0) {
            return Err(invalid("training.weights", "loss weights must be >= 0"));
        }
        self.value_adam.validate()?;
        self.costate_adam.validate()?;
        self.policy_adam.validate()?;
        self.network.spec().validate()?;
        self.init.validate()
    }
}
