//! Network generators and mutations.

use std::path::PathBuf;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markov::{spectral_summary, MatrixFile, RowStochasticMatrix};

pub const DEFAULT_SELF_RELIANCE: f64 = 0.5;
/// Edge probability giving a mean degree near 8 at `n = 50`.
pub const DEFAULT_DENSITY: f64 = 0.128;
const GENERATION_RETRIES: u64 = 100;
const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetworkKind {
    Star,
    Cycle,
    /// Two-dimensional torus of side `sqrt(n)`.
    Grid,
    RandomDirected,
    RandomSymmetric,
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub kind: NetworkKind,
    #[serde(default)]
    pub n: usize,
    #[serde(default = "default_self_reliance", alias = "omega")]
    pub self_reliance: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_density")]
    pub density: f64,
    /// Inline matrix for the explicit kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<MatrixFile>,
    /// Matrix file for the explicit kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix_path: Option<PathBuf>,
}

fn default_self_reliance() -> f64 {
    DEFAULT_SELF_RELIANCE
}

fn default_density() -> f64 {
    DEFAULT_DENSITY
}

impl NetworkSpec {
    pub fn new(kind: NetworkKind, n: usize, self_reliance: f64) -> Self {
        Self {
            kind,
            n,
            self_reliance,
            seed: 0,
            density: DEFAULT_DENSITY,
            matrix: None,
            matrix_path: None,
        }
    }

    pub fn star(n: usize, omega: f64) -> Self {
        Self::new(NetworkKind::Star, n, omega)
    }

    pub fn cycle(n: usize, omega: f64) -> Self {
        Self::new(NetworkKind::Cycle, n, omega)
    }

    pub fn grid(n: usize, omega: f64) -> Self {
        Self::new(NetworkKind::Grid, n, omega)
    }

    pub fn random_symmetric(n: usize, omega: f64, density: f64, seed: u64) -> Self {
        Self {
            seed,
            density,
            ..Self::new(NetworkKind::RandomSymmetric, n, omega)
        }
    }

    pub fn random_directed(n: usize, omega: f64, density: f64, seed: u64) -> Self {
        Self {
            seed,
            density,
            ..Self::new(NetworkKind::RandomDirected, n, omega)
        }
    }

    pub fn explicit(matrix: &RowStochasticMatrix) -> Self {
        Self {
            matrix: Some(matrix.to_file()),
            ..Self::new(NetworkKind::Explicit, matrix.n(), DEFAULT_SELF_RELIANCE)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == NetworkKind::Explicit {
            if self.matrix.is_none() && self.matrix_path.is_none() {
                return Err(Error::Config("explicit network needs `matrix` or `matrix_path`".into()));
            }
            return Ok(());
        }
        if !(self.self_reliance > 0.0 && self.self_reliance < 1.0) {
            return Err(Error::InvalidNetwork(format!(
                "self-reliance {} outside (0, 1)",
                self.self_reliance
            )));
        }
        if self.n < 2 {
            return Err(Error::InvalidNetwork(format!("need at least 2 agents, got {}", self.n)));
        }
        match self.kind {
            NetworkKind::Grid => {
                grid_side(self.n)?;
            }
            NetworkKind::RandomDirected | NetworkKind::RandomSymmetric => {
                if !(self.density >= 0.0 && self.density <= 1.0) {
                    return Err(Error::InvalidNetwork(format!(
                        "density {} outside [0, 1]",
                        self.density
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

fn grid_side(n: usize) -> Result<usize> {
    let k = (n as f64).sqrt().round() as usize;
    if k * k != n || k < 2 {
        return Err(Error::InvalidNetwork(format!(
            "grid needs a perfect square of at least 4 agents, got {n}"
        )));
    }
    Ok(k)
}

/// Builds the communication matrix described by `spec`.
pub fn generate(spec: &NetworkSpec) -> Result<RowStochasticMatrix> {
    spec.validate()?;
    let (n, omega) = (spec.n, spec.self_reliance);
    match spec.kind {
        NetworkKind::Star => {
            let mut e = vec![0.0; n * n];
            let leaf = (1.0 - omega) / (n - 1) as f64;
            e[0] = omega;
            for j in 1..n {
                e[j] = leaf;
                e[j * n] = 1.0 - omega;
                e[j * n + j] = omega;
            }
            RowStochasticMatrix::from_row_major(n, e)
        }
        NetworkKind::Cycle => {
            let mut e = vec![0.0; n * n];
            for i in 0..n {
                e[i * n + i] = omega;
                e[i * n + (i + 1) % n] += (1.0 - omega) / 2.0;
                e[i * n + (i + n - 1) % n] += (1.0 - omega) / 2.0;
            }
            RowStochasticMatrix::from_row_major(n, e)
        }
        NetworkKind::Grid => {
            let k = grid_side(n)?;
            let mut e = vec![0.0; n * n];
            let share = (1.0 - omega) / 4.0;
            for r in 0..k {
                for c in 0..k {
                    let i = r * k + c;
                    e[i * n + i] = omega;
                    for j in [
                        ((r + 1) % k) * k + c,
                        ((r + k - 1) % k) * k + c,
                        r * k + (c + 1) % k,
                        r * k + (c + k - 1) % k,
                    ] {
                        e[i * n + j] += share;
                    }
                }
            }
            RowStochasticMatrix::from_row_major(n, e)
        }
        NetworkKind::RandomSymmetric => retry(spec, random_symmetric),
        NetworkKind::RandomDirected => retry(spec, random_directed),
        NetworkKind::Explicit => {
            let w = match (&spec.matrix, &spec.matrix_path) {
                (Some(m), _) => m.clone().into_matrix()?,
                (None, Some(p)) => RowStochasticMatrix::load(p)?,
                (None, None) => unreachable!("validated"),
            };
            if !w.is_strongly_connected() {
                return Err(Error::Reducible);
            }
            Ok(w)
        }
    }
}

fn retry(
    spec: &NetworkSpec,
    build: fn(&NetworkSpec, &mut ChaCha8Rng) -> Result<RowStochasticMatrix>,
) -> Result<RowStochasticMatrix> {
    for attempt in 0..GENERATION_RETRIES {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(attempt);
        let w = build(spec, &mut rng)?;
        if w.is_strongly_connected() {
            return Ok(w);
        }
    }
    Err(Error::GenerationFailed(format!(
        "{:?} network with n = {} not strongly connected after {GENERATION_RETRIES} attempts",
        spec.kind, spec.n
    )))
}

/// Random edges plus a random Hamiltonian cycle; off-diagonal weights drawn
/// from `[0.5, 1.5)`, scaled so the largest off-diagonal row mass is
/// `1 - omega`, with the remainder on the diagonal.
fn random_symmetric(spec: &NetworkSpec, rng: &mut ChaCha8Rng) -> Result<RowStochasticMatrix> {
    let n = spec.n;
    let mut adj = vec![false; n * n];
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < spec.density {
                adj[i * n + j] = true;
            }
        }
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    for k in 0..n {
        let (a, b) = (perm[k], perm[(k + 1) % n]);
        if a != b {
            adj[a.min(b) * n + a.max(b)] = true;
        }
    }
    let mut e = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            if adj[i * n + j] {
                let w = rng.random_range(0.5..1.5);
                e[i * n + j] = w;
                e[j * n + i] = w;
            }
        }
    }
    let max_row = (0..n)
        .map(|i| e[i * n..(i + 1) * n].iter().sum::<f64>())
        .fold(0.0, f64::max);
    let scale = (1.0 - spec.self_reliance) / max_row;
    for v in e.iter_mut() {
        *v *= scale;
    }
    for i in 0..n {
        let off: f64 = e[i * n..(i + 1) * n].iter().sum();
        e[i * n + i] = 1.0 - off;
    }
    RowStochasticMatrix::from_row_major(n, e)
}

/// Random ordered pairs plus a random directed Hamiltonian cycle; each row
/// puts `omega` on the diagonal and splits `1 - omega` over its out-neighbors
/// in proportion to weights drawn from `[0.5, 1.5)`.
fn random_directed(spec: &NetworkSpec, rng: &mut ChaCha8Rng) -> Result<RowStochasticMatrix> {
    let n = spec.n;
    let mut e = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.random::<f64>() < spec.density {
                e[i * n + j] = 1.0;
            }
        }
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    for k in 0..n {
        e[perm[k] * n + perm[(k + 1) % n]] = 1.0;
    }
    for i in 0..n {
        let row = &mut e[i * n..(i + 1) * n];
        for (j, v) in row.iter_mut().enumerate() {
            if j != i && *v > 0.0 {
                *v = rng.random_range(0.5..1.5);
            }
        }
        let total: f64 = row.iter().sum();
        for v in row.iter_mut() {
            *v *= (1.0 - spec.self_reliance) / total;
        }
        row[i] = spec.self_reliance;
    }
    RowStochasticMatrix::from_row_major(n, e)
}

/// Closed-form eigenvalues of the star, cycle and grid networks, sorted in
/// descending order.
pub fn analytic_spectrum(spec: &NetworkSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let (n, omega) = (spec.n, spec.self_reliance);
    let pi = std::f64::consts::PI;
    let mut eig = match spec.kind {
        NetworkKind::Star => {
            let mut v = vec![1.0, 2.0 * omega - 1.0];
            v.extend(std::iter::repeat_n(omega, n - 2));
            v
        }
        NetworkKind::Cycle => (0..n)
            .map(|i| omega + (1.0 - omega) * (2.0 * pi * i as f64 / n as f64).cos())
            .collect(),
        NetworkKind::Grid => {
            let k = grid_side(n)?;
            let kf = k as f64;
            let mut v = Vec::with_capacity(n);
            for i in 0..k {
                for j in 0..k {
                    let (a, b) = (i as f64, j as f64);
                    v.push(omega + (1.0 - omega) * (pi * (a + b) / kf).cos() * (pi * (a - b) / kf).cos());
                }
            }
            v
        }
        other => return Err(Error::Unsupported(format!("{other:?} network"))),
    };
    eig.sort_by(|a, b| b.total_cmp(a));
    Ok(eig)
}

/// `W' = alpha W + (1 - alpha) I`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedChain {
    pub base: RowStochasticMatrix,
    pub alpha: f64,
    pub mixed: RowStochasticMatrix,
}

impl MixedChain {
    pub fn new(base: &RowStochasticMatrix, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::DomainError(format!("alpha {alpha} outside [0, 1]")));
        }
        let n = base.n();
        let mut e = Vec::with_capacity(n * n);
        for i in 0..n {
            for (j, w) in base.row(i).iter().enumerate() {
                let id = if i == j { 1.0 - alpha } else { 0.0 };
                e.push(alpha * w + id);
            }
        }
        Ok(Self {
            base: base.clone(),
            alpha,
            mixed: RowStochasticMatrix::from_row_major(n, e)?,
        })
    }
}

/// The lazy walk `(W + I) / 2`.
pub fn lazify(w: &RowStochasticMatrix) -> RowStochasticMatrix {
    MixedChain::new(w, 0.5).expect("alpha in range").mixed
}

/// Whether a symmetric `W` has no eigenvalue below `-tol`.
pub fn is_positive_semidefinite(w: &RowStochasticMatrix, tol: f64) -> Result<bool> {
    if !w.is_symmetric(SYMMETRY_TOL) {
        return Err(Error::NotSymmetric);
    }
    let eig = SymmetricEigen::new(w.to_dmatrix());
    Ok(eig.eigenvalues.iter().all(|l| *l >= -tol))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalMix {
    pub alpha: f64,
    /// Spectral gap of the mixed chain.
    pub gamma: f64,
    pub chain: MixedChain,
}

/// `lambda_max` of `alpha W + (1 - alpha) I` given `lambda_2` and `lambda_n` of `W`.
pub fn mixed_lambda_max(alpha: f64, lambda2: f64, lambda_n: f64) -> f64 {
    let a = alpha * lambda2 + 1.0 - alpha;
    let b = alpha * lambda_n + 1.0 - alpha;
    a.abs().max(b.abs())
}

/// Chooses `alpha` minimizing the second-largest eigenvalue modulus of
/// `alpha W + (1 - alpha) I`.
pub fn optimal_mix(w: &RowStochasticMatrix) -> Result<OptimalMix> {
    let spec = spectral_summary(w)?;
    let real = spec.real_eigenvalues(1e-10)?;
    let n = real.len();
    let (l2, ln) = (real[1], real[n - 1]);
    let (alpha, gamma) = if ln + l2 < 0.0 {
        let d = 2.0 - ln - l2;
        (2.0 / d, (2.0 - 2.0 * l2) / d)
    } else {
        (1.0, 1.0 - mixed_lambda_max(1.0, l2, ln))
    };
    Ok(OptimalMix {
        alpha,
        gamma,
        chain: MixedChain::new(w, alpha.min(1.0))?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkRemoval {
    pub matrix: RowStochasticMatrix,
    /// The result is no longer strongly connected.
    pub disconnected: bool,
}

/// Removes the undirected edge `{i, j}` and folds its weight into both
/// endpoints' self-reliance.
pub fn remove_link(w: &RowStochasticMatrix, i: usize, j: usize) -> Result<LinkRemoval> {
    let n = w.n();
    if !w.is_symmetric(SYMMETRY_TOL) {
        return Err(Error::NotSymmetric);
    }
    if i >= n || j >= n || i == j || w.get(i, j) <= 0.0 {
        return Err(Error::NoSuchEdge(i, j));
    }
    let wij = w.get(i, j);
    let mut m: DMatrix<f64> = w.to_dmatrix();
    m[(i, i)] += wij;
    m[(j, j)] += wij;
    m[(i, j)] = 0.0;
    m[(j, i)] = 0.0;
    let matrix = RowStochasticMatrix::from_dmatrix(&m)?;
    let disconnected = !matrix.is_strongly_connected();
    Ok(LinkRemoval {
        matrix,
        disconnected,
    })
}

/// Undirected edges `(i, j)` with `i < j` of a symmetric matrix.
pub fn undirected_edges(w: &RowStochasticMatrix) -> Vec<(usize, usize)> {
    w.edges().into_iter().filter(|(i, j)| i < j).collect()
}
