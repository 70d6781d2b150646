//! Small dense networks, reverse-mode differentiation and Adam.

pub mod adam;
pub mod heads;
pub mod mlp;
pub mod tape;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use heads::{CostateHead, FeatureMap, HeadConfig, Heads, NetworkTriple, ValueHead, WealthEncoding};
pub use mlp::{BoundMlp, Mlp, NetworkSpec};
pub use tape::{Activation, Gradients, Tape, Var};
