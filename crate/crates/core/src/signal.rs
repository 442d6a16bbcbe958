//! Finite-alphabet likelihood models.
//!
//! Each agent `i` observes a private signal drawn from its marginal
//! `l_i(. | theta_true)`. The model stores, per agent and per state, a full
//! support pmf over the agent's alphabet together with its log table.

use std::fs;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_FLOOR: f64 = 1e-6;
const PMF_SUM_TOL: f64 = 1e-12;
const EQUIVALENCE_TOL: f64 = 1e-12;

/// The finite set of hypotheses and which one generates the data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSpace {
    labels: Vec<String>,
    true_state: usize,
}

impl StateSpace {
    /// `true_state` is a 0-based index into `labels`.
    pub fn new(labels: Vec<String>, true_state: usize) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::InvalidModel("need at least two states".into()));
        }
        if true_state >= labels.len() {
            return Err(Error::InvalidModel(format!(
                "true state {true_state} out of range for {} states",
                labels.len()
            )));
        }
        for (k, l) in labels.iter().enumerate() {
            if labels[..k].contains(l) {
                return Err(Error::InvalidModel(format!("duplicate state label {l:?}")));
            }
        }
        Ok(Self { labels, true_state })
    }

    pub fn m(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, k: usize) -> &str {
        &self.labels[k]
    }

    pub fn true_state(&self) -> usize {
        self.true_state
    }
}

/// One agent's alphabet and per-state pmfs, as supplied by the caller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMarginal {
    pub alphabet: Vec<String>,
    /// `pmfs[k][s]` is `l_i(s | theta_k)`.
    pub pmfs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
struct AgentTable {
    marginal: AgentMarginal,
    /// `log_by_signal[s][k] = log l_i(s | theta_k)`.
    log_by_signal: Vec<Vec<f64>>,
}

/// Validated likelihood model for `n` agents over `m` states.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalModel {
    m: usize,
    floor: f64,
    agents: Vec<AgentTable>,
    log_bound: f64,
}

impl SignalModel {
    pub fn new(m: usize, agents: Vec<AgentMarginal>, floor: f64) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidModel("need at least two states".into()));
        }
        if agents.is_empty() {
            return Err(Error::InvalidModel("model has no agents".into()));
        }
        if !(floor > 0.0 && floor < 1.0) {
            return Err(Error::InvalidModel(format!("floor {floor} outside (0, 1)")));
        }
        let mut tables = Vec::with_capacity(agents.len());
        let mut log_bound: f64 = 0.0;
        for (i, marginal) in agents.into_iter().enumerate() {
            let size = marginal.alphabet.len();
            if size == 0 {
                return Err(Error::InvalidModel(format!("agent {i} has an empty alphabet")));
            }
            if marginal.pmfs.len() != m {
                return Err(Error::InvalidModel(format!(
                    "agent {i} lists {} pmfs, expected one per state ({m})",
                    marginal.pmfs.len()
                )));
            }
            for (s, sym) in marginal.alphabet.iter().enumerate() {
                if marginal.alphabet[..s].contains(sym) {
                    return Err(Error::InvalidModel(format!(
                        "agent {i} repeats signal {sym:?}"
                    )));
                }
            }
            for (k, pmf) in marginal.pmfs.iter().enumerate() {
                if pmf.len() != size {
                    return Err(Error::InvalidModel(format!(
                        "agent {i} state {k}: pmf has {} entries, alphabet has {size}",
                        pmf.len()
                    )));
                }
                if let Some(p) = pmf.iter().find(|p| !p.is_finite() || **p < floor) {
                    return Err(Error::InvalidModel(format!(
                        "agent {i} state {k}: entry {p} below floor {floor}"
                    )));
                }
                let sum: f64 = pmf.iter().sum();
                if (sum - 1.0).abs() > PMF_SUM_TOL {
                    return Err(Error::InvalidModel(format!(
                        "agent {i} state {k}: pmf sums to {sum:.15}"
                    )));
                }
            }
            let log_by_signal: Vec<Vec<f64>> = (0..size)
                .map(|s| marginal.pmfs.iter().map(|pmf| pmf[s].ln()).collect())
                .collect();
            for row in &log_by_signal {
                for v in row {
                    log_bound = log_bound.max(v.abs());
                }
            }
            tables.push(AgentTable {
                marginal,
                log_by_signal,
            });
        }
        Ok(Self {
            m,
            floor,
            agents: tables,
            log_bound,
        })
    }

    pub fn n(&self) -> usize {
        self.agents.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// `B = max_{i,k,s} |log l_i(s | theta_k)|`, read off the log table.
    pub fn log_bound(&self) -> f64 {
        self.log_bound
    }

    pub fn alphabet(&self, agent: usize) -> &[String] {
        &self.agents[agent].marginal.alphabet
    }

    pub fn pmf(&self, agent: usize, state: usize) -> &[f64] {
        &self.agents[agent].marginal.pmfs[state]
    }

    pub fn marginal(&self, agent: usize) -> &AgentMarginal {
        &self.agents[agent].marginal
    }

    pub fn symbol_index(&self, agent: usize, signal: &str) -> Result<usize> {
        self.alphabet(agent)
            .iter()
            .position(|s| s == signal)
            .ok_or_else(|| Error::UnknownSignal {
                agent,
                signal: signal.to_string(),
            })
    }

    /// `psi(k) = log l_i(s | theta_k)` for the signal with index `symbol`.
    pub fn log_likelihood_vector(&self, agent: usize, symbol: usize) -> Result<&[f64]> {
        let table = self.agents.get(agent).ok_or_else(|| {
            Error::DimensionMismatch(format!("agent {agent} out of range for n = {}", self.n()))
        })?;
        table
            .log_by_signal
            .get(symbol)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownSignal {
                agent,
                signal: format!("#{symbol}"),
            })
    }

    /// Same as [`log_likelihood_vector`](Self::log_likelihood_vector) by signal label.
    pub fn log_likelihood_for(&self, agent: usize, signal: &str) -> Result<&[f64]> {
        let s = self.symbol_index(agent, signal)?;
        self.log_likelihood_vector(agent, s)
    }

    /// Sub-model containing only the listed agents, in the given order.
    pub fn restrict(&self, agents: &[usize]) -> Result<Self> {
        let picked = agents
            .iter()
            .map(|&i| {
                self.agents
                    .get(i)
                    .map(|a| a.marginal.clone())
                    .ok_or_else(|| Error::DimensionMismatch(format!("agent {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.m, picked, self.floor)
    }

    pub fn sampler(&self, states: &StateSpace) -> Result<SignalSampler> {
        if states.m() != self.m {
            return Err(Error::DimensionMismatch(format!(
                "state space has {} states, model has {}",
                states.m(),
                self.m
            )));
        }
        let truth = states.true_state();
        let dists = self
            .agents
            .iter()
            .map(|a| {
                WeightedIndex::new(a.marginal.pmfs[truth].iter().copied())
                    .map_err(|e| Error::InvalidModel(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SignalSampler { dists })
    }

    pub fn to_file(&self, states: &StateSpace) -> ModelFile {
        ModelFile {
            m: self.m,
            labels: states.labels().to_vec(),
            true_index: states.true_state() + 1,
            agents: self.agents.iter().map(|a| a.marginal.clone()).collect(),
            floor: Some(self.floor),
        }
    }
}

/// Draws signal tuples `s_t` under the true state, one symbol index per agent.
#[derive(Debug, Clone)]
pub struct SignalSampler {
    dists: Vec<WeightedIndex<f64>>,
}

impl SignalSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        self.dists.iter().map(|d| d.sample(rng)).collect()
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [usize]) {
        for (o, d) in out.iter_mut().zip(&self.dists) {
            *o = d.sample(rng);
        }
    }
}

/// One draw of `s_t`: each agent samples independently from `l_i(. | theta_true)`.
pub fn sample_signal<R: Rng + ?Sized>(
    model: &SignalModel,
    states: &StateSpace,
    rng: &mut R,
) -> Result<Vec<usize>> {
    Ok(model.sampler(states)?.sample(rng))
}

/// `D_KL(p || q) = sum_s p(s) log(p(s) / q(s))` in nats.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b).ln())
        .sum()
}

fn same_pmf(p: &[f64], q: &[f64]) -> bool {
    p.iter().zip(q).all(|(a, b)| (a - b).abs() <= EQUIVALENCE_TOL)
}

/// KL information of each agent's marginal and its network aggregate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InformationProfile {
    pub true_state: usize,
    /// `kl[i][k] = D_KL(l_i(. | theta_true) || l_i(. | theta_k))`.
    pub kl: Vec<Vec<f64>>,
    /// `information[k] = sum_i pi(i) kl[i][k]`; zero at the true state.
    pub information: Vec<f64>,
    /// States each agent cannot tell apart from the truth (truth included).
    pub equivalence_sets: Vec<Vec<usize>>,
    /// Intersection of the per-agent sets.
    pub global_equivalence: Vec<usize>,
    /// Hardest alternative: `argmin_{k != true} information[k]`, lowest index on ties.
    pub second_best: usize,
    /// `information[second_best]`.
    pub i12: f64,
}

impl InformationProfile {
    pub fn is_identifiable(&self) -> bool {
        check_identifiability(self)
    }

    /// The per-agent KL vector against one alternative state.
    pub fn kl_against(&self, state: usize) -> Vec<f64> {
        self.kl.iter().map(|row| row[state]).collect()
    }
}

pub fn information_profile(
    model: &SignalModel,
    states: &StateSpace,
    pi: &[f64],
) -> Result<InformationProfile> {
    if states.m() != model.m() {
        return Err(Error::DimensionMismatch(format!(
            "state space has {} states, model has {}",
            states.m(),
            model.m()
        )));
    }
    if pi.len() != model.n() {
        return Err(Error::DimensionMismatch(format!(
            "centrality has {} entries, model has {} agents",
            pi.len(),
            model.n()
        )));
    }
    if pi.iter().any(|p| !(*p > 0.0)) {
        return Err(Error::DomainError("centrality must be strictly positive".into()));
    }
    let truth = states.true_state();
    let m = model.m();
    let mut kl = Vec::with_capacity(model.n());
    let mut equivalence_sets = Vec::with_capacity(model.n());
    for i in 0..model.n() {
        let p = model.pmf(i, truth);
        let mut row = Vec::with_capacity(m);
        let mut set = Vec::new();
        for k in 0..m {
            let q = model.pmf(i, k);
            if same_pmf(p, q) {
                row.push(0.0);
                set.push(k);
            } else {
                row.push(kl_divergence(p, q));
            }
        }
        kl.push(row);
        equivalence_sets.push(set);
    }
    let information: Vec<f64> = (0..m)
        .map(|k| pi.iter().zip(&kl).map(|(w, row)| w * row[k]).sum())
        .collect();
    let global_equivalence: Vec<usize> = (0..m)
        .filter(|k| equivalence_sets.iter().all(|s| s.contains(k)))
        .collect();
    let second_best = (0..m)
        .filter(|k| *k != truth)
        .min_by(|a, b| information[*a].total_cmp(&information[*b]).then(a.cmp(b)))
        .expect("at least two states");
    Ok(InformationProfile {
        true_state: truth,
        i12: information[second_best],
        kl,
        information,
        equivalence_sets,
        global_equivalence,
        second_best,
    })
}

/// Global identifiability: the only state every agent confuses with the truth is the truth.
pub fn check_identifiability(profile: &InformationProfile) -> bool {
    profile.global_equivalence == [profile.true_state]
}

/// JSON exchange format for a model and its state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub m: usize,
    pub labels: Vec<String>,
    /// 1-based index of the true state.
    pub true_index: usize,
    pub agents: Vec<AgentMarginal>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub floor: Option<f64>,
}

impl ModelFile {
    pub fn build(self) -> Result<(SignalModel, StateSpace)> {
        if self.labels.len() != self.m {
            return Err(Error::InvalidModel(format!(
                "declared m = {} but {} labels given",
                self.m,
                self.labels.len()
            )));
        }
        if self.true_index == 0 || self.true_index > self.m {
            return Err(Error::InvalidModel(format!(
                "true_index {} outside 1..={}",
                self.true_index, self.m
            )));
        }
        let states = StateSpace::new(self.labels, self.true_index - 1)?;
        let model = SignalModel::new(self.m, self.agents, self.floor.unwrap_or(DEFAULT_FLOOR))?;
        Ok((model, states))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidModel(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }
}
