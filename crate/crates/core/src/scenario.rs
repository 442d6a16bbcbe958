//! Builtin signal models used by the experiments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{AgentMarginal, SignalModel, StateSpace, DEFAULT_FLOOR};

/// Default `P(signal = 1)` under the states an agent cannot rule out.
pub const DEFAULT_P_HIGH: f64 = 0.9;
/// Default channel error probability for the two-digit channel.
pub const DEFAULT_EPSILON: f64 = 0.1;

/// Identifier of a builtin model, with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "builtin", rename_all = "kebab-case")]
pub enum Builtin {
    /// `n` agents, `n + 1` states; agent `i` cannot separate the truth from
    /// state `i + 1` but separates every other state.
    PrivateEquivalence {
        #[serde(default = "default_p_high")]
        p_high: f64,
    },
    /// Two receivers, each reading one digit of a 2-bit message reliably.
    BinaryChannel {
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
    /// Two states; a single agent holds an informative binary marginal and
    /// every other agent observes fair coin flips.
    SingleInformant {
        informant: usize,
        #[serde(default = "default_p_high")]
        p_high: f64,
    },
}

fn default_p_high() -> f64 {
    DEFAULT_P_HIGH
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

impl Builtin {
    /// Builds the model for a network of `n` agents.
    pub fn build(&self, n: usize) -> Result<(SignalModel, StateSpace)> {
        match *self {
            Builtin::PrivateEquivalence { p_high } => private_equivalence(n, p_high),
            Builtin::BinaryChannel { epsilon } => {
                if n != 2 {
                    return Err(Error::Config(format!(
                        "binary-channel model has two receivers, network has {n} agents"
                    )));
                }
                binary_channel(epsilon)
            }
            Builtin::SingleInformant { informant, p_high } => single_informant(n, informant, p_high),
        }
    }
}

fn binary_alphabet() -> Vec<String> {
    vec!["0".into(), "1".into()]
}

fn check_p(p_high: f64) -> Result<()> {
    if p_high > 0.5 && p_high < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidModel(format!("p_high {p_high} outside (0.5, 1)")))
    }
}

/// Agent `i` sees `P(1) = p_high` under `theta_1` and `theta_{i+2}` (0-based
/// states 0 and `i + 1`) and `P(1) = 1 - p_high` under every other state.
pub fn private_equivalence(n: usize, p_high: f64) -> Result<(SignalModel, StateSpace)> {
    check_p(p_high)?;
    if n == 0 {
        return Err(Error::InvalidModel("need at least one agent".into()));
    }
    let m = n + 1;
    let high = vec![1.0 - p_high, p_high];
    let low = vec![p_high, 1.0 - p_high];
    let agents = (0..n)
        .map(|i| AgentMarginal {
            alphabet: binary_alphabet(),
            pmfs: (0..m)
                .map(|k| if k == 0 || k == i + 1 { high.clone() } else { low.clone() })
                .collect(),
        })
        .collect();
    let labels = (1..=m).map(|k| format!("theta{k}")).collect();
    Ok((
        SignalModel::new(m, agents, DEFAULT_FLOOR)?,
        StateSpace::new(labels, 0)?,
    ))
}

/// States `00, 01, 10, 11` (truth `00`). Receiver I observes the pair
/// `(a, b)` where `a` is the first digit flipped with probability `epsilon`
/// and `b` is a fair coin; receiver II symmetrically for the second digit.
pub fn binary_channel(epsilon: f64) -> Result<(SignalModel, StateSpace)> {
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::InvalidModel(format!("epsilon {epsilon} outside (0, 0.5)")));
    }
    let labels: Vec<String> = ["00", "01", "10", "11"].iter().map(|s| s.to_string()).collect();
    let digit = |sent: u8, seen: u8| if sent == seen { 1.0 - epsilon } else { epsilon };
    let pairs: [(u8, u8); 4] = [(0, 0), (0, 1), (1, 0), (1, 1)];
    let receiver = |reliable_first: bool| AgentMarginal {
        alphabet: labels.clone(),
        pmfs: pairs
            .iter()
            .map(|&(x, y)| {
                pairs
                    .iter()
                    .map(|&(a, b)| {
                        if reliable_first {
                            0.5 * digit(x, a)
                        } else {
                            0.5 * digit(y, b)
                        }
                    })
                    .collect()
            })
            .collect(),
    };
    Ok((
        SignalModel::new(4, vec![receiver(true), receiver(false)], DEFAULT_FLOOR)?,
        StateSpace::new(labels, 0)?,
    ))
}

pub fn single_informant(n: usize, informant: usize, p_high: f64) -> Result<(SignalModel, StateSpace)> {
    check_p(p_high)?;
    if informant >= n {
        return Err(Error::InvalidModel(format!(
            "informant {informant} out of range for n = {n}"
        )));
    }
    let agents = (0..n)
        .map(|i| AgentMarginal {
            alphabet: binary_alphabet(),
            pmfs: if i == informant {
                vec![vec![1.0 - p_high, p_high], vec![p_high, 1.0 - p_high]]
            } else {
                vec![vec![0.5, 0.5], vec![0.5, 0.5]]
            },
        })
        .collect();
    Ok((
        SignalModel::new(2, agents, DEFAULT_FLOOR)?,
        StateSpace::new(vec!["theta1".into(), "theta2".into()], 0)?,
    ))
}
