//! Centralized and distributed exponential-weights detection.
//!
//! Every agent keeps a score vector `phi_i` over the `m` states. Each round it
//! averages its neighbors' previous scores with the weights of `W` and adds
//! the log-likelihood vector of its own fresh signal. The centralized expert
//! adds the centrality-weighted sum of all agents' log-likelihoods. Beliefs
//! are the softmax of `eta * phi`; an agent's decentralization cost is the
//! running sum of `D_KL(mu_i || mu)` against the expert's belief.

use std::io::{self, Write};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::markov::{spectral_summary, stationary_distribution, RowStochasticMatrix};
use crate::signal::{check_identifiability, information_profile, SignalModel, StateSpace};

pub const DEFAULT_DELTA: f64 = 0.1;

/// Accumulated scores of the expert and of every agent.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreState {
    n: usize,
    m: usize,
    pub round: usize,
    pub phi_central: Vec<f64>,
    /// Row-major `n x m`.
    phi_agents: Vec<f64>,
}

impl ScoreState {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            n,
            m,
            round: 0,
            phi_central: vec![0.0; m],
            phi_agents: vec![0.0; n * m],
        }
    }

    /// Arbitrary scores, e.g. to test a single averaging step.
    pub fn from_parts(agents: Vec<Vec<f64>>, central: Vec<f64>, round: usize) -> Result<Self> {
        let n = agents.len();
        let m = central.len();
        if n == 0 || m == 0 || agents.iter().any(|r| r.len() != m) {
            return Err(Error::DimensionMismatch(
                "agent score rows must all have the central score's length".into(),
            ));
        }
        Ok(Self {
            n,
            m,
            round,
            phi_central: central,
            phi_agents: agents.concat(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn agent(&self, i: usize) -> &[f64] {
        &self.phi_agents[i * self.m..(i + 1) * self.m]
    }

    pub fn agents(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.agent(i).to_vec()).collect()
    }

    /// `||phi_i - phi||_inf`.
    pub fn q_inf_norm(&self, i: usize) -> f64 {
        self.agent(i)
            .iter()
            .zip(&self.phi_central)
            .map(|(a, c)| (a - c).abs())
            .fold(0.0, f64::max)
    }
}

/// One round of both score recursions given the per-agent log-likelihood
/// vectors `psi[i]` (each of length `m`).
pub fn step_scores(
    w: &RowStochasticMatrix,
    pi: &[f64],
    scores: &ScoreState,
    psi: &[&[f64]],
) -> Result<ScoreState> {
    let (n, m) = (scores.n, scores.m);
    if w.n() != n || pi.len() != n || psi.len() != n || psi.iter().any(|p| p.len() != m) {
        return Err(Error::DimensionMismatch(format!(
            "W is {0}x{0}, centrality has {1} entries, scores are {n}x{m}",
            w.n(),
            pi.len()
        )));
    }
    let mut next = ScoreState::zeros(n, m);
    next.round = scores.round + 1;
    for i in 0..n {
        let out = &mut next.phi_agents[i * m..(i + 1) * m];
        out.copy_from_slice(psi[i]);
        for (j, wij) in w.row(i).iter().enumerate() {
            if *wij > 0.0 {
                for (o, v) in out.iter_mut().zip(scores.agent(j)) {
                    *o += wij * v;
                }
            }
        }
    }
    next.phi_central.copy_from_slice(&scores.phi_central);
    for (p, row) in pi.iter().zip(psi) {
        for (c, v) in next.phi_central.iter_mut().zip(row.iter()) {
            *c += p * v;
        }
    }
    Ok(next)
}

/// One round driven by the signal tuple `s_t` (one symbol index per agent).
pub fn step(
    w: &RowStochasticMatrix,
    pi: &[f64],
    model: &SignalModel,
    scores: &ScoreState,
    signals: &[usize],
) -> Result<ScoreState> {
    if signals.len() != model.n() || model.m() != scores.m {
        return Err(Error::DimensionMismatch(format!(
            "{} signals for {} agents",
            signals.len(),
            model.n()
        )));
    }
    let psi = signals
        .iter()
        .enumerate()
        .map(|(i, s)| model.log_likelihood_vector(i, *s))
        .collect::<Result<Vec<_>>>()?;
    step_scores(w, pi, scores, &psi)
}

/// `phi_{i,t} = sum_{tau=1}^{t} sum_j [W^{t-tau}]_{ij} psi_{j,tau}` evaluated
/// with explicit matrix powers. `psi_history[tau - 1][j]` is agent `j`'s
/// log-likelihood vector at round `tau`.
pub fn closed_form_scores(
    w: &RowStochasticMatrix,
    psi_history: &[Vec<Vec<f64>>],
) -> Result<Vec<Vec<f64>>> {
    let n = w.n();
    let t = psi_history.len();
    let m = psi_history
        .first()
        .and_then(|r| r.first())
        .map(Vec::len)
        .ok_or_else(|| Error::DimensionMismatch("empty signal history".into()))?;
    let wm = w.to_dmatrix();
    let mut powers = Vec::with_capacity(t);
    let mut p = DMatrix::<f64>::identity(n, n);
    for _ in 0..t {
        powers.push(p.clone());
        p = &p * &wm;
    }
    let mut phi = DMatrix::<f64>::zeros(n, m);
    for (tau, round) in psi_history.iter().enumerate() {
        if round.len() != n || round.iter().any(|r| r.len() != m) {
            return Err(Error::DimensionMismatch(format!("round {} has wrong shape", tau + 1)));
        }
        let psi = DMatrix::from_fn(n, m, |j, k| round[j][k]);
        phi += &powers[t - 1 - tau] * psi;
    }
    Ok((0..n).map(|i| phi.row(i).iter().copied().collect()).collect())
}

/// Closed-form scores for a history of signal tuples.
pub fn closed_form_from_signals(
    w: &RowStochasticMatrix,
    model: &SignalModel,
    signals: &[Vec<usize>],
) -> Result<Vec<Vec<f64>>> {
    let psi = signals
        .iter()
        .map(|s| {
            s.iter()
                .enumerate()
                .map(|(i, sym)| model.log_likelihood_vector(i, *sym).map(<[f64]>::to_vec))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    closed_form_scores(w, &psi)
}

/// `log softmax(eta * phi)`, computed with max subtraction.
pub fn log_softmax(phi: &[f64], eta: f64) -> Vec<f64> {
    let max = phi.iter().map(|v| eta * v).fold(f64::NEG_INFINITY, f64::max);
    let lse = max + phi.iter().map(|v| (eta * v - max).exp()).sum::<f64>().ln();
    phi.iter().map(|v| eta * v - lse).collect()
}

/// `softmax(eta * phi)`.
pub fn softmax(phi: &[f64], eta: f64) -> Vec<f64> {
    let max = phi.iter().map(|v| eta * v).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = phi.iter().map(|v| (eta * v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Beliefs of the expert and of every agent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BeliefProfile {
    pub mu_central: Vec<f64>,
    pub mu_agents: Vec<Vec<f64>>,
}

pub fn beliefs(scores: &ScoreState, eta: f64) -> Result<BeliefProfile> {
    if !(eta > 0.0) {
        return Err(Error::DomainError(format!("learning rate {eta} must be positive")));
    }
    Ok(BeliefProfile {
        mu_central: softmax(&scores.phi_central, eta),
        mu_agents: (0..scores.n).map(|i| softmax(scores.agent(i), eta)).collect(),
    })
}

/// `D_KL(mu_agent || mu_central)`; both must be strictly positive.
pub fn kl_cost_increment(mu_agent: &[f64], mu_central: &[f64]) -> Result<f64> {
    if mu_agent.len() != mu_central.len() {
        return Err(Error::DimensionMismatch("belief vectors differ in length".into()));
    }
    if mu_agent.iter().chain(mu_central).any(|v| !(*v > 0.0)) {
        return Err(Error::DomainError("beliefs must be strictly positive".into()));
    }
    let kl: f64 = mu_agent
        .iter()
        .zip(mu_central)
        .map(|(p, q)| p * (p / q).ln())
        .sum();
    Ok(kl.max(0.0))
}

/// KL divergence between two beliefs given in log space.
fn kl_from_logs(log_p: &[f64], log_q: &[f64]) -> f64 {
    let kl: f64 = log_p
        .iter()
        .zip(log_q)
        .map(|(lp, lq)| {
            let p = lp.exp();
            if p == 0.0 {
                0.0
            } else {
                p * (lp - lq)
            }
        })
        .sum();
    kl.max(0.0)
}

/// `log ||mu - e_true||_TV = log sum_{k != true} mu(k)`, from log beliefs.
fn log_tv(log_mu: &[f64], truth: usize) -> f64 {
    let max = log_mu
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != truth)
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let s: f64 = log_mu
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != truth)
        .map(|(_, v)| (v - max).exp())
        .sum();
    max + s.ln()
}

fn require_bound_inputs(b: f64, n: usize, gap: f64) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidNetwork("bounds need at least two agents".into()));
    }
    if !(b > 0.0) {
        return Err(Error::DomainError(format!("log-likelihood bound {b} must be positive")));
    }
    if !(gap > 0.0 && gap <= 1.0) {
        return Err(Error::DomainError(format!("spectral gap {gap} outside (0, 1]")));
    }
    Ok(())
}

/// `eta = gap / (16 B log n)`.
pub fn theorem1_eta(b: f64, n: usize, gap: f64) -> Result<f64> {
    require_bound_inputs(b, n, gap)?;
    Ok(gap / (16.0 * b * (n as f64).ln()))
}

fn require_identifiable(i12: f64, delta: f64) -> Result<()> {
    if !(i12 > 0.0) {
        return Err(Error::NotIdentifiable(i12));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::DomainError(format!("confidence delta {delta} outside (0, 1)")));
    }
    Ok(())
}

/// High-probability bound on `Cost_{i,T}` under the `theorem1_eta` learning rate:
/// `max{ 8B^2/I^2 log(mT/delta), 4B log n / I * log(mT) / gap } + 1`.
pub fn theorem1_bound(
    b: f64,
    n: usize,
    m: usize,
    horizon: usize,
    gap: f64,
    i12: f64,
    delta: f64,
) -> Result<f64> {
    require_bound_inputs(b, n, gap)?;
    require_identifiable(i12, delta)?;
    if horizon == 0 {
        return Err(Error::DomainError("horizon must be at least 1".into()));
    }
    let mt = m as f64 * horizon as f64;
    let first = 8.0 * b * b / (i12 * i12) * (mt / delta).ln();
    let second = 4.0 * b * (n as f64).ln() / i12 * mt.ln() / gap;
    Ok(first.max(second) + 1.0)
}

/// High-probability bound on `(1/eta) log ||mu_{i,t} - e_true||_TV`:
/// `-I t + sqrt(2 B^2 t log(m/delta)) + 8 B log n / gap + log m / eta`.
#[allow(clippy::too_many_arguments)]
pub fn lemma3_bound(
    t: usize,
    eta: f64,
    b: f64,
    n: usize,
    m: usize,
    gap: f64,
    i12: f64,
    delta: f64,
) -> Result<f64> {
    require_bound_inputs(b, n, gap)?;
    require_identifiable(i12, delta)?;
    if !(eta > 0.0) {
        return Err(Error::DomainError(format!("learning rate {eta} must be positive")));
    }
    let t = t as f64;
    let m = m as f64;
    Ok(-i12 * t
        + (2.0 * b * b * t * (m / delta).ln()).sqrt()
        + 8.0 * b * (n as f64).ln() / gap
        + m.ln() / eta)
}

/// How the learning rate is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EtaMode {
    Theorem1,
    Explicit(f64),
}

impl Serialize for EtaMode {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            EtaMode::Theorem1 => s.serialize_str("theorem1"),
            EtaMode::Explicit(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for EtaMode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Name(String),
            Value(f64),
        }
        match Raw::deserialize(d)? {
            Raw::Value(v) => Ok(EtaMode::Explicit(v)),
            Raw::Name(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl std::str::FromStr for EtaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "theorem1" {
            return Ok(EtaMode::Theorem1);
        }
        s.parse::<f64>()
            .map(EtaMode::Explicit)
            .map_err(|_| Error::Config(format!("eta must be `theorem1` or a number, got {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub horizon: usize,
    pub eta: EtaMode,
    pub delta: f64,
    pub seed: u64,
}

impl RunConfig {
    pub fn new(horizon: usize, seed: u64) -> Self {
        Self {
            horizon,
            eta: EtaMode::Theorem1,
            delta: DEFAULT_DELTA,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if let EtaMode::Explicit(v) = self.eta {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("explicit eta {v} must be positive")));
            }
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta {} outside (0, 1)", self.delta)));
        }
        Ok(())
    }
}

/// Cumulative decentralization cost of every agent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostLedger {
    pub eta: f64,
    /// `Cost_{i,T}` per agent.
    pub cumulative: Vec<f64>,
    /// `increments[t - 1][i] = D_KL(mu_{i,t} || mu_t)`.
    pub increments: Vec<Vec<f64>>,
    /// Cost bound at the full horizon, when the model is identifiable.
    pub theorem1_bound: Option<f64>,
}

/// Per-round observables, one entry per agent in each vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub belief_true: Vec<f64>,
    pub tv_dist: Vec<f64>,
    /// `log ||mu_{i,t} - e_true||_TV`.
    pub log_tv: Vec<f64>,
    pub cost_cum: Vec<f64>,
    pub q_inf_norm: Vec<f64>,
    pub central_belief_true: f64,
    pub lemma3_bound: Option<f64>,
    pub theorem1_bound: Option<f64>,
}

/// Network and model constants a run's bounds depend on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConstants {
    pub n: usize,
    pub m: usize,
    pub eta: f64,
    pub delta: f64,
    pub log_bound: f64,
    pub gap: Option<f64>,
    pub centrality: Vec<f64>,
    pub i12: f64,
    pub identifiable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub seed: u64,
    pub horizon: usize,
    pub constants: RunConstants,
    pub rounds: Vec<RoundRecord>,
    pub ledger: CostLedger,
    pub final_beliefs: BeliefProfile,
    /// Argmax of each agent's final belief, lowest index on ties.
    pub decisions: Vec<usize>,
    pub warnings: Vec<String>,
}

impl Trajectory {
    pub fn last(&self) -> &RoundRecord {
        self.rounds.last().expect("horizon >= 1")
    }

    /// Whether `(1/eta) log TV <= lemma3_bound` held for every agent and round.
    pub fn lemma3_satisfied(&self) -> Option<bool> {
        let eta = self.constants.eta;
        let mut all = true;
        for r in &self.rounds {
            let bound = r.lemma3_bound?;
            all &= r.log_tv.iter().all(|l| l / eta <= bound);
        }
        Some(all)
    }

    /// Whether every agent's final cost is within the horizon's cost bound.
    pub fn theorem1_satisfied(&self) -> Option<bool> {
        let bound = self.ledger.theorem1_bound?;
        Some(self.ledger.cumulative.iter().all(|c| *c <= bound))
    }

    /// Largest `eta * ||q_{i,t}||_inf` over all agents and rounds.
    pub fn max_eta_q(&self) -> f64 {
        let eta = self.constants.eta;
        self.rounds
            .iter()
            .flat_map(|r| r.q_inf_norm.iter())
            .fold(0.0, |a, q| f64::max(a, eta * q))
    }
}

fn argmax_low(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = k;
        }
    }
    best
}

/// Resolves the learning rate and bound constants for a network and model.
pub fn run_constants(
    w: &RowStochasticMatrix,
    model: &SignalModel,
    states: &StateSpace,
    eta: EtaMode,
    delta: f64,
) -> Result<RunConstants> {
    let n = w.n();
    if model.n() != n || model.m() != states.m() {
        return Err(Error::DimensionMismatch(format!(
            "network has {n} agents and model has {} agents over {} states (state space {})",
            model.n(),
            model.m(),
            states.m()
        )));
    }
    let (centrality, gap) = if n >= 2 {
        let s = spectral_summary(w)?;
        (s.centrality, Some(s.gap))
    } else {
        (stationary_distribution(w)?, None)
    };
    let profile = information_profile(model, states, &centrality)?;
    let b = model.log_bound();
    let eta = match eta {
        EtaMode::Explicit(v) => v,
        EtaMode::Theorem1 => {
            let gap = gap.ok_or_else(|| {
                Error::InvalidNetwork("theorem1 learning rate needs at least two agents".into())
            })?;
            theorem1_eta(b, n, gap)?
        }
    };
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::DomainError(format!("learning rate {eta} must be positive")));
    }
    Ok(RunConstants {
        n,
        m: model.m(),
        eta,
        delta,
        log_bound: b,
        gap,
        centrality,
        i12: profile.i12,
        identifiable: check_identifiability(&profile),
    })
}

/// Runs both engines for `config.horizon` rounds on one seeded signal stream.
pub fn run(
    w: &RowStochasticMatrix,
    model: &SignalModel,
    states: &StateSpace,
    config: &RunConfig,
) -> Result<Trajectory> {
    config.validate()?;
    let constants = run_constants(w, model, states, config.eta, config.delta)?;
    run_with_constants(w, model, states, config, constants)
}

/// Like [`run`] with precomputed constants, e.g. to share a learning rate
/// between two networks.
pub fn run_with_constants(
    w: &RowStochasticMatrix,
    model: &SignalModel,
    states: &StateSpace,
    config: &RunConfig,
    constants: RunConstants,
) -> Result<Trajectory> {
    config.validate()?;
    let (n, m) = (constants.n, constants.m);
    if w.n() != n || model.n() != n || model.m() != m || constants.centrality.len() != n {
        return Err(Error::DimensionMismatch("run constants do not match inputs".into()));
    }
    let truth = states.true_state();
    let eta = constants.eta;
    let b = constants.log_bound;
    let mut warnings = Vec::new();
    if !constants.identifiable {
        warnings.push("true state is not globally identifiable; beliefs need not concentrate".into());
    }
    let bounds_available = constants.identifiable && constants.gap.is_some_and(|g| g > 0.0);
    let bound_at = |t: usize| -> Option<(f64, f64)> {
        if !bounds_available {
            return None;
        }
        let gap = constants.gap?;
        let l3 = lemma3_bound(t, eta, b, n, m, gap, constants.i12, constants.delta).ok()?;
        let t1 = theorem1_bound(b, n, m, t, gap, constants.i12, constants.delta).ok()?;
        Some((l3, t1))
    };

    let sampler = model.sampler(states)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut signals = vec![0usize; n];
    let mut scores = ScoreState::zeros(n, m);
    let mut cumulative = vec![0.0; n];
    let mut increments = Vec::with_capacity(config.horizon);
    let mut rounds = Vec::with_capacity(config.horizon);
    let mut log_mu_agents = vec![Vec::new(); n];

    for t in 1..=config.horizon {
        sampler.sample_into(&mut rng, &mut signals);
        scores = step(w, &constants.centrality, model, &scores, &signals)?;

        let log_mu_c = log_softmax(&scores.phi_central, eta);
        let mut belief_true = Vec::with_capacity(n);
        let mut tv_dist = Vec::with_capacity(n);
        let mut log_tvs = Vec::with_capacity(n);
        let mut q_norm = Vec::with_capacity(n);
        let mut inc = Vec::with_capacity(n);
        for i in 0..n {
            let log_mu = log_softmax(scores.agent(i), eta);
            let d = kl_from_logs(&log_mu, &log_mu_c);
            cumulative[i] += d;
            inc.push(d);
            let ltv = log_tv(&log_mu, truth);
            belief_true.push(log_mu[truth].exp());
            tv_dist.push(ltv.exp());
            log_tvs.push(ltv);
            q_norm.push(scores.q_inf_norm(i));
            log_mu_agents[i] = log_mu;
        }
        let bounds = bound_at(t);
        rounds.push(RoundRecord {
            round: t,
            belief_true,
            tv_dist,
            log_tv: log_tvs,
            cost_cum: cumulative.clone(),
            q_inf_norm: q_norm,
            central_belief_true: log_mu_c[truth].exp(),
            lemma3_bound: bounds.map(|b| b.0),
            theorem1_bound: bounds.map(|b| b.1),
        });
        increments.push(inc);
    }

    let final_beliefs = beliefs(&scores, eta)?;
    let decisions = final_beliefs.mu_agents.iter().map(|mu| argmax_low(mu)).collect();
    let theorem1 = bound_at(config.horizon).map(|b| b.1);
    Ok(Trajectory {
        seed: config.seed,
        horizon: config.horizon,
        ledger: CostLedger {
            eta,
            cumulative,
            increments,
            theorem1_bound: theorem1,
        },
        constants,
        rounds,
        final_beliefs,
        decisions,
        warnings,
    })
}

pub const TRAJECTORY_HEADER: &str =
    "round,agent,belief_true,tv_dist,cost_cum,q_inf_norm,lemma3_bound,theorem1_bound";

/// Float with 12 significant digits; `NaN` marks an unavailable value.
pub fn fmt_sig(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x:.11e}")
    }
}

/// Writes the trajectory CSV, keeping every `every`-th round plus the last one.
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, every: usize, out: &mut W) -> io::Result<()> {
    writeln!(out, "{TRAJECTORY_HEADER}")?;
    for r in selected_rounds(traj, every) {
        let l3 = fmt_sig(r.lemma3_bound.unwrap_or(f64::NAN));
        let t1 = fmt_sig(r.theorem1_bound.unwrap_or(f64::NAN));
        for i in 0..traj.constants.n {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.round,
                i + 1,
                fmt_sig(r.belief_true[i]),
                fmt_sig(r.tv_dist[i]),
                fmt_sig(r.cost_cum[i]),
                fmt_sig(r.q_inf_norm[i]),
                l3,
                t1
            )?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct TrajectoryRow {
    round: usize,
    agent: usize,
    belief_true: f64,
    tv_dist: f64,
    cost_cum: f64,
    q_inf_norm: f64,
    lemma3_bound: Option<f64>,
    theorem1_bound: Option<f64>,
}

/// JSON variant of [`write_trajectory_csv`]: an array of row objects.
pub fn write_trajectory_json<W: Write>(traj: &Trajectory, every: usize, out: &mut W) -> io::Result<()> {
    let rows: Vec<TrajectoryRow> = selected_rounds(traj, every)
        .flat_map(|r| {
            (0..traj.constants.n).map(move |i| TrajectoryRow {
                round: r.round,
                agent: i + 1,
                belief_true: r.belief_true[i],
                tv_dist: r.tv_dist[i],
                cost_cum: r.cost_cum[i],
                q_inf_norm: r.q_inf_norm[i],
                lemma3_bound: r.lemma3_bound,
                theorem1_bound: r.theorem1_bound,
            })
        })
        .collect();
    serde_json::to_writer(&mut *out, &rows).map_err(io::Error::other)?;
    writeln!(out)
}

fn selected_rounds(traj: &Trajectory, every: usize) -> impl Iterator<Item = &RoundRecord> {
    let every = every.max(1);
    let last = traj.horizon;
    traj.rounds
        .iter()
        .filter(move |r| r.round % every == 0 || r.round == last || r.round == 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{binary_channel, private_equivalence};

    fn half() -> RowStochasticMatrix {
        RowStochasticMatrix::new(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap()
    }

    #[test]
    fn first_step_equals_psi() {
        let (model, states) = private_equivalence(2, 0.75).unwrap();
        let w = half();
        let pi = stationary_distribution(&w).unwrap();
        let s0 = ScoreState::zeros(2, states.m());
        let s1 = step(&w, &pi, &model, &s0, &[1, 0]).unwrap();
        assert_eq!(s1.agent(0), model.log_likelihood_vector(0, 1).unwrap());
        assert_eq!(s1.agent(1), model.log_likelihood_vector(1, 0).unwrap());
        assert_eq!(s1.round, 1);
    }

    #[test]
    fn averaging_step_by_hand() {
        let w = half();
        let s = ScoreState::from_parts(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0], 0).unwrap();
        let zero = [0.0, 0.0];
        let next = step_scores(&w, &[0.5, 0.5], &s, &[&zero, &zero]).unwrap();
        assert_eq!(next.agent(0), &[0.5, 0.5]);
        assert_eq!(next.agent(1), &[0.5, 0.5]);
    }

    #[test]
    fn dimension_mismatch() {
        let w = half();
        let s = ScoreState::zeros(3, 2);
        let zero = [0.0, 0.0];
        assert!(matches!(
            step_scores(&w, &[0.5, 0.5], &s, &[&zero, &zero]),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn softmax_hand_values() {
        let mu = softmax(&[3f64.ln(), 0.0], 1.0);
        assert!((mu[0] - 0.75).abs() < 1e-15);
        assert!((mu[1] - 0.25).abs() < 1e-15);
        let u = softmax(&[0.0; 4], 0.3);
        assert!(u.iter().all(|v| (v - 0.25).abs() < 1e-15));
        // no overflow for huge scores
        let big = softmax(&[1e6, 1e6 - 1.0], 1.0);
        assert!(big.iter().all(|v| v.is_finite()));
        assert!((big.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kl_increment_hand_value() {
        let d = kl_cost_increment(&[0.75, 0.25], &[0.5, 0.5]).unwrap();
        assert!((d - (0.75 * 1.5f64.ln() + 0.25 * 0.5f64.ln())).abs() < 1e-15);
        assert!((d - 0.130_812_035_941_137_8).abs() < 1e-12);
        assert_eq!(kl_cost_increment(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert!(matches!(kl_cost_increment(&[1.0, 0.0], &[0.5, 0.5]), Err(Error::DomainError(_))));
    }

    #[test]
    fn theorem1_eta_hand_value() {
        let eta = theorem1_eta(1.0, 8, 0.5).unwrap();
        assert!((eta - 0.5 / (16.0 * 8f64.ln())).abs() < 1e-15);
        assert!((eta - 0.015_028_6).abs() < 1e-6);
        assert!((theorem1_eta(1.0, 8, 1.0).unwrap() - 2.0 * eta).abs() < 1e-15);
        assert!((theorem1_eta(2.0, 8, 0.5).unwrap() - eta / 2.0).abs() < 1e-15);
        assert!(matches!(theorem1_eta(1.0, 1, 0.5), Err(Error::InvalidNetwork(_))));
    }

    #[test]
    fn theorem1_bound_hand_value() {
        let bound = theorem1_bound(1.0, 8, 4, 500, 0.5, 0.5, 0.1).unwrap();
        let first = 32.0 * 20_000f64.ln();
        let second = 4.0 * 8f64.ln() / 0.5 * 2000f64.ln() / 0.5;
        assert!((first - 316.9116).abs() < 1e-3);
        assert!((second - 252.890).abs() < 1e-2);
        assert!((bound - (first + 1.0)).abs() < 1e-12);
        assert!(matches!(
            theorem1_bound(1.0, 8, 4, 500, 0.5, 0.0, 0.1),
            Err(Error::NotIdentifiable(_))
        ));
    }

    #[test]
    fn lemma3_bound_at_zero() {
        let eta = 0.01;
        let v = lemma3_bound(0, eta, 1.5, 10, 5, 0.25, 0.3, 0.1).unwrap();
        let expected = 8.0 * 1.5 * 10f64.ln() / 0.25 + 5f64.ln() / eta;
        assert!((v - expected).abs() < 1e-12);
        let a = lemma3_bound(40, eta, 1.5, 10, 5, 0.25, 0.3, 0.1).unwrap();
        let b = lemma3_bound(40, eta, 1.5, 10, 5, 0.25, 0.3, 0.2).unwrap();
        assert!(b < a);
    }

    #[test]
    fn eta_mode_parsing() {
        assert_eq!("theorem1".parse::<EtaMode>().unwrap(), EtaMode::Theorem1);
        assert_eq!("0.25".parse::<EtaMode>().unwrap(), EtaMode::Explicit(0.25));
        assert!("fast".parse::<EtaMode>().is_err());
        let m: EtaMode = serde_json::from_str("0.5").unwrap();
        assert_eq!(m, EtaMode::Explicit(0.5));
        let m: EtaMode = serde_json::from_str("\"theorem1\"").unwrap();
        assert_eq!(m, EtaMode::Theorem1);
    }

    #[test]
    fn isolated_receiver_keeps_ambiguity() {
        let (model, states) = binary_channel(0.1).unwrap();
        let alone = model.restrict(&[0]).unwrap();
        let w = RowStochasticMatrix::identity(1);
        let mut cfg = RunConfig::new(2000, 5);
        assert!(run(&w, &alone, &states, &cfg).is_err());
        cfg.eta = EtaMode::Explicit(0.03);
        let traj = run(&w, &alone, &states, &cfg).unwrap();
        let mu = &traj.final_beliefs.mu_agents[0];
        assert!((mu[0] - 0.5).abs() < 1e-9, "{mu:?}");
        assert!((mu[1] - 0.5).abs() < 1e-9);
        assert!(!traj.warnings.is_empty());
        assert!(traj.ledger.theorem1_bound.is_none());
    }

    #[test]
    fn csv_has_header_and_rows() {
        let (model, states) = private_equivalence(2, 0.75).unwrap();
        let traj = run(&half(), &model, &states, &RunConfig::new(5, 1)).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&traj, 1, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], TRAJECTORY_HEADER);
        assert_eq!(lines.len(), 1 + 5 * 2);
        assert!(lines[1].starts_with("1,1,"));
        assert_eq!(lines[1].split(',').count(), 8);
    }

    #[test]
    fn fmt_sig_has_twelve_digits() {
        assert_eq!(fmt_sig(1.0 / 3.0), "3.33333333333e-1");
        assert_eq!(fmt_sig(f64::NAN), "NaN");
    }
}
