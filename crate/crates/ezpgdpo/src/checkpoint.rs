//! Plain-text checkpoints that restore parameters and optimizer state
//! bit-exactly.
//!
//! ```text
//! ezpgdpo-checkpoint 1
//! iteration 250
//! seed 3
//! n_assets 5
//! network {"hidden_layers":3,...}
//! net value 33537
//! <one parameter per line>
//! adam value 250 33537
//! <first moment> <second moment>
//! ...
//! ```
//! Floats use the shortest exponent form that parses back to the same bits.

use std::fmt::Write as _;
use std::path::Path;

use ezpgdpo_core::nn::{AdamState, Mlp, NetworkTriple};
use ezpgdpo_core::pgdpo::NetworkConfig;

use crate::error::{AppError, AppResult};

const MAGIC: &str = "ezpgdpo-checkpoint 1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub iteration: usize,
    pub seed: u64,
    pub network: NetworkConfig,
    pub nets: NetworkTriple,
}

fn push_net(out: &mut String, name: &str, net: &Mlp, adam: &AdamState) {
    let params = net.params();
    writeln!(out, "net {name} {}", params.len()).unwrap();
    for p in &params {
        writeln!(out, "{p:e}").unwrap();
    }
    writeln!(out, "adam {name} {} {}", adam.step, adam.len()).unwrap();
    for (m, v) in adam.first.iter().zip(&adam.second) {
        writeln!(out, "{m:e} {v:e}").unwrap();
    }
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{MAGIC}").unwrap();
        writeln!(out, "iteration {}", self.iteration).unwrap();
        writeln!(out, "seed {}", self.seed).unwrap();
        writeln!(out, "n_assets {}", self.nets.n_assets()).unwrap();
        writeln!(out, "network {}", serde_json::to_string(&self.network).unwrap()).unwrap();
        push_net(&mut out, "value", &self.nets.value, &self.nets.value_adam);
        push_net(&mut out, "costate", &self.nets.costate, &self.nets.costate_adam);
        push_net(&mut out, "policy", &self.nets.policy, &self.nets.policy_adam);
        out
    }

    pub fn parse(text: &str) -> Result<Checkpoint, String> {
        let mut lines = text.lines();
        let mut next = |what: &str| lines.next().ok_or_else(|| format!("truncated before {what}"));
        if next("header")? != MAGIC {
            return Err("not an ezpgdpo checkpoint (bad header)".into());
        }
        let field = |line: &str, key: &str| -> Result<String, String> {
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| format!("expected `{key}`, found `{line}`"))
        };
        let num = |s: &str| s.parse::<u64>().map_err(|e| format!("bad integer `{s}`: {e}"));
        let float = |s: &str| s.parse::<f64>().map_err(|e| format!("bad float `{s}`: {e}"));
        let iteration = num(&field(next("iteration")?, "iteration")?)? as usize;
        let seed = num(&field(next("seed")?, "seed")?)?;
        let n_assets = num(&field(next("n_assets")?, "n_assets")?)? as usize;
        let network: NetworkConfig =
            serde_json::from_str(&field(next("network")?, "network")?).map_err(|e| format!("bad network spec: {e}"))?;
        let mut nets = NetworkTriple::new(network.spec(), n_assets, 0).map_err(|e| e.to_string())?;
        for name in ["value", "costate", "policy"] {
            let head = field(next("net")?, "net")?;
            let (got, count) = head.split_once(' ').ok_or("bad net line")?;
            if got != name {
                return Err(format!("expected net `{name}`, found `{got}`"));
            }
            let count = num(count)? as usize;
            let params = (0..count).map(|_| float(next("parameter")?)).collect::<Result<Vec<f64>, String>>()?;
            let adam_head = field(next("adam")?, "adam")?;
            let parts: Vec<&str> = adam_head.split(' ').collect();
            if parts.len() != 3 || parts[0] != name {
                return Err(format!("bad adam line for `{name}`"));
            }
            let step = num(parts[1])?;
            let len = num(parts[2])? as usize;
            let mut state = AdamState { step, first: Vec::with_capacity(len), second: Vec::with_capacity(len) };
            for _ in 0..len {
                let line = next("moments")?;
                let (m, v) = line.split_once(' ').ok_or("bad moment line")?;
                state.first.push(float(m)?);
                state.second.push(float(v)?);
            }
            let (net, adam) = match name {
                "value" => (&mut nets.value, &mut nets.value_adam),
                "costate" => (&mut nets.costate, &mut nets.costate_adam),
                _ => (&mut nets.policy, &mut nets.policy_adam),
            };
            net.set_params(&params).map_err(|e| e.to_string())?;
            if state.len() != params.len() {
                return Err(format!("adam state of `{name}` has {} entries for {} parameters", state.len(), params.len()));
            }
            *adam = state;
        }
        Ok(Checkpoint { iteration, seed, network, nets })
    }

    pub fn save(&self, path: &Path) -> AppResult<()> {
        crate::output::write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> AppResult<Checkpoint> {
        let text = std::fs::read_to_string(path).map_err(|source| AppError::Input { path: path.into(), source })?;
        Checkpoint::parse(&text).map_err(|reason| AppError::Checkpoint { path: path.into(), reason })
    }

    /// Rejects checkpoints whose layout differs from the configured one,
    /// printing both.
    pub fn check_compatible(&self, network: &NetworkConfig, n_assets: usize, path: &Path) -> AppResult<()> {
        if self.network != *network || self.nets.n_assets() != n_assets {
            return Err(AppError::Checkpoint {
                path: path.into(),
                reason: format!(
                    "incompatible checkpoint: file has {:?} with {} assets, config expects {:?} with {} assets",
                    self.network,
                    self.nets.n_assets(),
                    network,
                    n_assets
                ),
            });
        }
        Ok(())
    }
}
