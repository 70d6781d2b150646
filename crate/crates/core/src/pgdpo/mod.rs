//! Pontryagin-guided policy optimization: the Hamiltonian, the three
//! training losses and the alternating training loop.

pub mod config;
pub mod hamiltonian;
pub mod losses;
pub mod trainer;

pub use config::{Ablation, ActorCurvature, LossWeights, NetworkConfig, TrainConfig};
pub use hamiltonian::{hamiltonian, hamiltonian_grad_u, Costate, Curvature};
pub use losses::{actor_objective, adjoint_loss, adjoint_loss_on_tape, value_loss, value_loss_on_tape, ActorSettings, CostateSource, LossContext};
pub use trainer::{train, LogRow, NeuralPolicy, Problem, Trainer};
