//! TOML model files.
//!
//! ```toml
//! discount = 0.9
//! states = ["a", "b"]
//! terminals = ["done"]
//! actions = ["stay", "quit"]
//!
//! [[transition]]
//! state = "a"
//! action = "stay"
//! reward = 1.0
//! lo = [0.6, 0.0, 0.1]          # over states ++ terminals
//! hi = [0.9, 0.0, 0.4]
//!
//! [[transition]]
//! state = "a"
//! action = "quit"
//! reward = 0.0
//! singleton = { done = 1.0 }    # sparse form, keyed by outcome name
//! ```
//!
//! Each entry carries exactly one of `singleton`, `lo` + `hi`, or `vertices`.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::Deserialize;

use super::{RobustMdp, UncertaintySet};
use crate::error::{Error, Result};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    discount: f64,
    states: Vec<String>,
    #[serde(default)]
    terminals: Vec<String>,
    actions: Vec<String>,
    #[serde(default)]
    terminal_rewards: BTreeMap<String, f64>,
    #[serde(default, rename = "transition")]
    transitions: Vec<Entry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    state: String,
    action: String,
    #[serde(default)]
    reward: f64,
    singleton: Option<Dist>,
    lo: Option<Dist>,
    hi: Option<Dist>,
    vertices: Option<Vec<Dist>>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Dist {
    Dense(Vec<f64>),
    Named(BTreeMap<String, f64>),
}

struct Names {
    outcomes: HashMap<String, usize>,
    n_outcomes: usize,
}

impl Dist {
    fn resolve(&self, names: &Names) -> Result<Vec<f64>> {
        match self {
            Dist::Dense(v) => Ok(v.clone()),
            Dist::Named(m) => {
                let mut out = vec![0.0; names.n_outcomes];
                for (k, &p) in m {
                    let j = names
                        .outcomes
                        .get(k)
                        .ok_or_else(|| Error::Config(format!("unknown outcome '{k}'")))?;
                    out[*j] = p;
                }
                Ok(out)
            }
        }
    }
}

fn index_of(names: &[String], what: &str, kind: &str) -> Result<usize> {
    names
        .iter()
        .position(|n| n == what)
        .ok_or_else(|| Error::Config(format!("unknown {kind} '{what}'")))
}

/// Parses and validates a model from TOML text.
pub fn parse_model(text: &str) -> Result<RobustMdp> {
    let file: ModelFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let n_states = file.states.len();
    let n_actions = file.actions.len();
    if n_states == 0 || n_actions == 0 {
        return Err(Error::Config("model needs at least one state and one action".into()));
    }
    let names = Names {
        outcomes: file
            .states
            .iter()
            .chain(&file.terminals)
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect(),
        n_outcomes: n_states + file.terminals.len(),
    };
    if names.outcomes.len() != names.n_outcomes {
        return Err(Error::Config("state and terminal names must be unique".into()));
    }

    let mut reward = vec![0.0; n_states * n_actions];
    let mut sets: Vec<Option<UncertaintySet>> = vec![None; n_states * n_actions];
    for e in &file.transitions {
        let x = index_of(&file.states, &e.state, "state")?;
        let u = index_of(&file.actions, &e.action, "action")?;
        let set = match (&e.singleton, &e.lo, &e.hi, &e.vertices) {
            (Some(p), None, None, None) => UncertaintySet::Singleton(p.resolve(&names)?),
            (None, Some(lo), Some(hi), None) => UncertaintySet::IntervalBox {
                lo: lo.resolve(&names)?,
                hi: hi.resolve(&names)?,
            },
            (None, None, None, Some(vs)) => UncertaintySet::VertexList(
                vs.iter().map(|d| d.resolve(&names)).collect::<Result<_>>()?,
            ),
            _ => {
                return Err(Error::Config(format!(
                    "transition ({}, {}) needs exactly one of singleton, lo+hi, vertices",
                    e.state, e.action
                )))
            }
        };
        let slot = &mut sets[x * n_actions + u];
        if slot.is_some() {
            return Err(Error::Config(format!("duplicate transition ({}, {})", e.state, e.action)));
        }
        *slot = Some(set);
        reward[x * n_actions + u] = e.reward;
    }
    let sets = sets
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            s.ok_or_else(|| {
                Error::Config(format!(
                    "missing transition ({}, {})",
                    file.states[i / n_actions],
                    file.actions[i % n_actions]
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut terminal_reward = vec![0.0; file.terminals.len()];
    for (k, &r) in &file.terminal_rewards {
        terminal_reward[index_of(&file.terminals, k, "terminal")?] = r;
    }

    let mut model = RobustMdp::new(n_states, file.terminals.len(), n_actions, file.discount, reward, sets)?
        .with_terminal_rewards(terminal_reward)?;
    model.state_names = file.states;
    model.terminal_names = file.terminals;
    model.action_names = file.actions;
    model.ensure_valid()?;
    Ok(model)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<RobustMdp> {
    let text = std::fs::read_to_string(path)?;
    parse_model(&text)
}
