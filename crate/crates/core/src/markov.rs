//! Row-stochastic communication matrices and their spectral/stationary analysis.
//!
//! A communication matrix `W` assigns `W[i][j] > 0` to every neighbor `j` that
//! agent `i` listens to, rows summing to one. For a strongly connected network
//! the chain has a unique stationary distribution `pi` (the eigenvector
//! centrality of the agents), and the second-largest eigenvalue modulus
//! `lambda_max` controls how fast `e_i^T W^t` approaches `pi^T`.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on row sums accepted by [`RowStochasticMatrix`].
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Maximum residual `||pi^T W - pi^T||_1` accepted from [`stationary_distribution`].
pub const STATIONARY_TOL: f64 = 1e-10;
/// Maximum per-pair residual `||W v - lambda v||_2` accepted from the eigen-solver.
pub const EIGEN_RESIDUAL_TOL: f64 = 1e-8;

const REFINEMENT_CAP: usize = 16;
const SCHUR_MAX_ITER: usize = 100_000;

/// An `n x n` nonnegative matrix with unit row sums, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RowStochasticMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl RowStochasticMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidMatrix("matrix has no rows".into()));
        }
        let mut entries = Vec::with_capacity(n * n);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidMatrix(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            entries.extend(row);
        }
        Self::from_row_major(n, entries)
    }

    pub fn from_row_major(n: usize, entries: Vec<f64>) -> Result<Self> {
        if n == 0 || entries.len() != n * n {
            return Err(Error::InvalidMatrix(format!(
                "expected {} entries for n = {n}, got {}",
                n * n,
                entries.len()
            )));
        }
        for i in 0..n {
            let row = &entries[i * n..(i + 1) * n];
            if let Some(j) = row.iter().position(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::InvalidMatrix(format!(
                    "entry ({i}, {j}) = {} is negative or not finite",
                    row[j]
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidMatrix(format!(
                    "row {i} sums to {sum:.15}, expected 1"
                )));
            }
        }
        Ok(Self { n, entries })
    }

    pub fn from_dmatrix(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::InvalidMatrix(format!(
                "matrix is {}x{}, expected square",
                m.nrows(),
                m.ncols()
            )));
        }
        let n = m.nrows();
        let mut entries = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                entries.push(m[(i, j)]);
            }
        }
        Self::from_row_major(n, entries)
    }

    pub fn identity(n: usize) -> Self {
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            entries[i * n + i] = 1.0;
        }
        Self { n, entries }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.entries)
    }

    /// Directed edges `(i, j)`, `i != j`, with a positive weight.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in 0..self.n {
                if i != j && self.get(i, j) > 0.0 {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Positive entries of each row, self-loop included.
    pub fn neighbor_lists(&self) -> Vec<Vec<(usize, f64)>> {
        (0..self.n)
            .map(|i| {
                self.row(i)
                    .iter()
                    .enumerate()
                    .filter(|(_, w)| **w > 0.0)
                    .map(|(j, w)| (j, *w))
                    .collect()
            })
            .collect()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| (i + 1..self.n).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= tol))
    }

    /// Strong connectivity of the support graph, by a forward and a backward
    /// traversal from agent 0.
    pub fn is_strongly_connected(&self) -> bool {
        let forward = self.reach(|i, j| self.get(i, j) > 0.0);
        let backward = self.reach(|i, j| self.get(j, i) > 0.0);
        forward && backward
    }

    fn reach(&self, adjacent: impl Fn(usize, usize) -> bool) -> bool {
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = queue.pop_front() {
            for j in 0..self.n {
                if !seen[j] && adjacent(i, j) {
                    seen[j] = true;
                    count += 1;
                    queue.push_back(j);
                }
            }
        }
        count == self.n
    }

    /// Row vector `x^T W`.
    pub fn left_mul(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (i, xi) in x.iter().enumerate() {
            if *xi == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(self.row(i)) {
                *o += xi * w;
            }
        }
        out
    }

    pub fn to_file(&self) -> MatrixFile {
        MatrixFile {
            n: self.n,
            rows: self.rows(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: MatrixFile =
            serde_json::from_str(text).map_err(|e| Error::InvalidMatrix(e.to_string()))?;
        file.into_matrix()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("matrix serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }
}

/// JSON exchange format `{"n": int, "rows": [[...], ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixFile {
    pub n: usize,
    pub rows: Vec<Vec<f64>>,
}

impl MatrixFile {
    pub fn into_matrix(self) -> Result<RowStochasticMatrix> {
        if self.rows.len() != self.n {
            return Err(Error::InvalidMatrix(format!(
                "declared n = {} but {} rows given",
                self.n,
                self.rows.len()
            )));
        }
        RowStochasticMatrix::new(self.rows)
    }
}

/// Full spectrum plus the quantities derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSummary {
    /// Leading eigenvalue first, the rest by descending modulus.
    pub eigenvalues: Vec<Complex<f64>>,
    /// Second-largest eigenvalue modulus.
    pub lambda_max: f64,
    /// `1 - lambda_max`.
    pub gap: f64,
    /// Stationary distribution (eigenvector centrality).
    pub centrality: Vec<f64>,
}

impl SpectralSummary {
    /// Eigenvalues as reals, descending, when every imaginary part is within `tol`.
    pub fn real_eigenvalues(&self, tol: f64) -> Result<Vec<f64>> {
        let worst = self
            .eigenvalues
            .iter()
            .map(|z| z.im.abs())
            .fold(0.0, f64::max);
        if worst > tol {
            return Err(Error::ComplexSpectrum(worst));
        }
        let mut re: Vec<f64> = self.eigenvalues.iter().map(|z| z.re).collect();
        re.sort_by(|a, b| b.total_cmp(a));
        Ok(re)
    }
}

fn require_connected(w: &RowStochasticMatrix) -> Result<()> {
    if w.is_strongly_connected() {
        Ok(())
    } else {
        Err(Error::Reducible)
    }
}

fn require_network(w: &RowStochasticMatrix) -> Result<()> {
    if w.n() < 2 {
        return Err(Error::InvalidNetwork(
            "a network needs at least two agents".into(),
        ));
    }
    require_connected(w)
}

/// Stationary distribution `pi` with `pi^T W = pi^T`, `||pi||_1 = 1`.
///
/// Solves the singular system `(W^T - I) pi = 0` with the normalization
/// replacing one equation, then applies iterative refinement until the
/// residual drops below [`STATIONARY_TOL`].
pub fn stationary_distribution(w: &RowStochasticMatrix) -> Result<Vec<f64>> {
    require_connected(w)?;
    let n = w.n();
    if n == 1 {
        return Ok(vec![1.0]);
    }
    let mut a = w.to_dmatrix().transpose();
    for i in 0..n {
        a[(i, i)] -= 1.0;
    }
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let lu = a.clone().lu();
    let mut pi = lu.solve(&rhs).ok_or(Error::NonConvergent {
        residual: f64::INFINITY,
        iterations: 0,
    })?;

    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < REFINEMENT_CAP {
        let normalized = normalize(pi.as_slice());
        residual = stationary_residual(w, &normalized);
        if residual <= STATIONARY_TOL && normalized.iter().all(|p| *p > 0.0) {
            return Ok(normalized);
        }
        let correction = &rhs - &a * &pi;
        match lu.solve(&correction) {
            Some(delta) => pi += delta,
            None => break,
        }
        iterations += 1;
    }
    Err(Error::NonConvergent {
        residual,
        iterations,
    })
}

fn normalize(x: &[f64]) -> Vec<f64> {
    let s: f64 = x.iter().sum();
    x.iter().map(|v| v / s).collect()
}

/// `||pi^T W - pi^T||_1`.
pub fn stationary_residual(w: &RowStochasticMatrix, pi: &[f64]) -> f64 {
    w.left_mul(pi)
        .iter()
        .zip(pi)
        .map(|(a, b)| (a - b).abs())
        .sum()
}

/// Whether `pi_i W_ij = pi_j W_ji` for every pair.
fn is_reversible(w: &RowStochasticMatrix, pi: &[f64]) -> bool {
    let n = w.n();
    (0..n).all(|i| {
        (i + 1..n).all(|j| (pi[i] * w.get(i, j) - pi[j] * w.get(j, i)).abs() <= 1e-13)
    })
}

/// Full spectrum, residual-checked.
///
/// Reversible chains (symmetric ones included) are symmetrized through
/// `D^{1/2} W D^{-1/2}` with `D = diag(pi)` and solved with a symmetric
/// eigen-solver; general chains go through a real Schur decomposition with
/// eigenvectors recovered by shifted inverse iteration.
fn eigenvalues_checked(w: &RowStochasticMatrix, pi: &[f64]) -> Result<Vec<Complex<f64>>> {
    let n = w.n();
    let wm = w.to_dmatrix();
    if is_reversible(w, pi) {
        let sq: Vec<f64> = pi.iter().map(|p| p.sqrt()).collect();
        let mut s = DMatrix::from_fn(n, n, |i, j| sq[i] * wm[(i, j)] / sq[j]);
        let st = s.transpose();
        s = (s + st) * 0.5;
        let eig = SymmetricEigen::new(s);
        let mut worst: f64 = 0.0;
        for k in 0..n {
            let lambda = eig.eigenvalues[k];
            let mut v = DVector::from_fn(n, |i, _| eig.eigenvectors[(i, k)] / sq[i]);
            let norm = v.norm();
            v /= norm;
            let r = (&wm * &v - &v * lambda).norm();
            worst = worst.max(r);
        }
        if worst > EIGEN_RESIDUAL_TOL {
            return Err(Error::NumericalFailure { residual: worst });
        }
        return Ok(eig
            .eigenvalues
            .iter()
            .map(|l| Complex::new(*l, 0.0))
            .collect());
    }

    let schur = nalgebra::Schur::try_new(wm.clone(), f64::EPSILON, SCHUR_MAX_ITER)
        .ok_or(Error::NumericalFailure {
            residual: f64::INFINITY,
        })?;
    let values: Vec<Complex<f64>> = schur.complex_eigenvalues().iter().copied().collect();
    let wc = wm.map(|x| Complex::new(x, 0.0));
    let mut worst: f64 = 0.0;
    for lambda in &values {
        worst = worst.max(inverse_iteration_residual(&wc, *lambda));
    }
    if worst > EIGEN_RESIDUAL_TOL {
        return Err(Error::NumericalFailure { residual: worst });
    }
    Ok(values)
}

fn inverse_iteration_residual(wc: &DMatrix<Complex<f64>>, lambda: Complex<f64>) -> f64 {
    let n = wc.nrows();
    let shift = lambda + Complex::new(1e-11 * (1.0 + lambda.norm()), 1e-11);
    let mut a = wc.clone();
    for i in 0..n {
        a[(i, i)] -= shift;
    }
    let lu = a.lu();
    let mut v = DVector::from_fn(n, |i, _| Complex::new(1.0 + 0.37 * i as f64, 0.11 * i as f64));
    for _ in 0..3 {
        match lu.solve(&v) {
            Some(next) => {
                let norm = next.norm();
                if !norm.is_finite() || norm == 0.0 {
                    return f64::INFINITY;
                }
                v = next / Complex::new(norm, 0.0);
            }
            None => return f64::INFINITY,
        }
    }
    (wc * &v - &v * lambda).norm()
}

/// Orders a spectrum: the eigenvalue nearest 1 first, then by descending
/// modulus (ties by descending real, then imaginary part).
fn sort_spectrum(mut values: Vec<Complex<f64>>) -> Vec<Complex<f64>> {
    let lead = values
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - Complex::new(1.0, 0.0)).norm().total_cmp(&(b.1 - Complex::new(1.0, 0.0)).norm()))
        .map(|(k, _)| k)
        .unwrap_or(0);
    let first = values.swap_remove(lead);
    values.sort_by(|a, b| {
        b.norm()
            .total_cmp(&a.norm())
            .then(b.re.total_cmp(&a.re))
            .then(b.im.total_cmp(&a.im))
    });
    values.insert(0, first);
    values
}

pub fn spectral_summary(w: &RowStochasticMatrix) -> Result<SpectralSummary> {
    require_network(w)?;
    let centrality = stationary_distribution(w)?;
    let eigenvalues = sort_spectrum(eigenvalues_checked(w, &centrality)?);
    let lead = eigenvalues[0];
    if (lead - Complex::new(1.0, 0.0)).norm() > 1e-10 {
        return Err(Error::NumericalFailure {
            residual: (lead - Complex::new(1.0, 0.0)).norm(),
        });
    }
    let lambda_max = eigenvalues[1].norm().min(1.0);
    Ok(SpectralSummary {
        eigenvalues,
        lambda_max,
        gap: 1.0 - lambda_max,
        centrality,
    })
}

/// `sum_{tau=1}^{t} ||e_i^T W^{t-tau} - pi^T||_1` for every `t` in `1..=t_max`.
///
/// Entry `t - 1` of the result is the mixing sum at round `t`.
pub fn mixing_sum_series(w: &RowStochasticMatrix, i: usize, t_max: usize) -> Result<Vec<f64>> {
    require_network(w)?;
    if i >= w.n() {
        return Err(Error::DimensionMismatch(format!(
            "agent {i} out of range for n = {}",
            w.n()
        )));
    }
    let pi = stationary_distribution(w)?;
    let mut row = vec![0.0; w.n()];
    row[i] = 1.0;
    let mut total = 0.0;
    let mut out = Vec::with_capacity(t_max);
    for _ in 0..t_max {
        total += row.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum::<f64>();
        out.push(total);
        row = w.left_mul(&row);
    }
    Ok(out)
}

pub fn mixing_sum(w: &RowStochasticMatrix, i: usize, t: usize) -> Result<f64> {
    if t == 0 {
        return Err(Error::DomainError("mixing sum needs t >= 1".into()));
    }
    Ok(*mixing_sum_series(w, i, t)?.last().expect("t >= 1"))
}

/// Right-hand side `4 log(n) / gap` of the mixing-sum bound.
pub fn mixing_sum_bound(n: usize, gap: f64) -> f64 {
    4.0 * (n as f64).ln() / gap
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state() -> RowStochasticMatrix {
        RowStochasticMatrix::new(vec![vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap()
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(RowStochasticMatrix::new(vec![vec![0.5, 0.6], vec![0.5, 0.5]]).is_err());
        assert!(RowStochasticMatrix::new(vec![vec![1.5, -0.5], vec![0.5, 0.5]]).is_err());
        assert!(RowStochasticMatrix::new(vec![vec![1.0], vec![0.5, 0.5]]).is_err());
        assert!(RowStochasticMatrix::new(vec![]).is_err());
    }

    #[test]
    fn two_state_stationary() {
        let pi = stationary_distribution(&two_state()).unwrap();
        assert!((pi[0] - 2.0 / 3.0).abs() < 1e-14);
        assert!((pi[1] - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn reducible_rejected() {
        let w = RowStochasticMatrix::identity(3);
        assert_eq!(stationary_distribution(&w), Err(Error::Reducible));
        assert_eq!(spectral_summary(&w), Err(Error::Reducible));
    }

    #[test]
    fn single_agent_is_not_a_network() {
        let w = RowStochasticMatrix::identity(1);
        assert_eq!(stationary_distribution(&w).unwrap(), vec![1.0]);
        assert!(matches!(spectral_summary(&w), Err(Error::InvalidNetwork(_))));
        assert!(matches!(mixing_sum(&w, 0, 3), Err(Error::InvalidNetwork(_))));
    }

    #[test]
    fn two_state_spectrum() {
        let s = spectral_summary(&two_state()).unwrap();
        assert!((s.eigenvalues[1].re - 0.7).abs() < 1e-12);
        assert!((s.gap - 0.3).abs() < 1e-12);
    }

    #[test]
    fn mixing_sum_first_round_is_l1_distance() {
        let w = two_state();
        // ||e_1 - pi||_1 = 1/3 + 1/3, ||e_2 - pi||_1 = 2/3 + 2/3
        assert!((mixing_sum(&w, 0, 1).unwrap() - 2.0 / 3.0).abs() < 1e-14);
        assert!((mixing_sum(&w, 1, 1).unwrap() - 4.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn mixing_sum_geometric_limit() {
        // ratio 0.7: (2/3) / 0.3 = 20/9
        let w = two_state();
        let s = mixing_sum(&w, 0, 50).unwrap();
        assert!((s - 20.0 / 9.0).abs() < 1e-6, "{s}");
        let bound = mixing_sum_bound(2, 0.3);
        assert!((bound - 9.2420).abs() < 1e-3);
        for v in mixing_sum_series(&w, 0, 200).unwrap() {
            assert!(v <= bound);
        }
    }

    #[test]
    fn complex_spectrum_of_directed_ring() {
        // 3-ring with self loops: eigenvalues 0.5 + 0.5 * exp(2 pi i k / 3)
        let w = RowStochasticMatrix::new(vec![
            vec![0.5, 0.5, 0.0],
            vec![0.0, 0.5, 0.5],
            vec![0.5, 0.0, 0.5],
        ])
        .unwrap();
        let s = spectral_summary(&w).unwrap();
        // |0.5 + 0.5 (-1/2 + i sqrt(3)/2)| = |0.25 + 0.433i| = 0.5
        assert!((s.lambda_max - 0.5).abs() < 1e-10);
        assert!(s.eigenvalues[1].im.abs() > 0.4);
        assert!(s.real_eigenvalues(1e-10).is_err());
        assert!(s.centrality.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn json_round_trip() {
        let w = two_state();
        let back = RowStochasticMatrix::from_json(&w.to_json()).unwrap();
        assert_eq!(w, back);
        let bad = r#"{"n": 3, "rows": [[1.0, 0.0], [0.0, 1.0]]}"#;
        assert!(RowStochasticMatrix::from_json(bad).is_err());
    }

    #[test]
    fn strong_connectivity() {
        let w = RowStochasticMatrix::new(vec![
            vec![0.5, 0.5, 0.0],
            vec![0.0, 0.5, 0.5],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        assert!(!w.is_strongly_connected());
        assert!(two_state().is_strongly_connected());
    }
}
