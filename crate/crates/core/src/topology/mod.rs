//! Reservoir construction: input couplings `W_in`, internal networks `W_r` for
//! the five topologies, and spectral-radius rescaling.
//!
//! | topology | in-degree | structure |
//! |---|---|---|
//! | [`Topology::GeneralK`] | `k` | random, fixed in-degree |
//! | [`Topology::K1Cycle`] | 1 | one directed cycle with trees hanging off it |
//! | [`Topology::K1CutCycle`] | ≤ 1 | the above with one cycle edge removed (a tree) |
//! | [`Topology::SimpleCycle`] | 1 | ring with identical weights |
//! | [`Topology::DelayLine`] | ≤ 1 | chain with identical weights |
//!
//! The cut topologies are rescaled to `rho_r` while the cycle is still intact
//! and cut afterwards, which leaves them nilpotent.

mod sparse;
pub mod spectral;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use sparse::SparseMatrix;
pub use spectral::{eigenvalues, spectral_radius};

use crate::error::{Error, Result};
use crate::seeding::{derive_seed, rng_from_seed, Stream};

/// Reservoir size used throughout.
pub const DEFAULT_NODES: usize = 100;
/// Input dimension of every benchmark system.
pub const INPUT_DIM: usize = 3;
/// Rejection-sampling cap for single-component `k = 1` networks.
pub const K1_MAX_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topology {
    GeneralK,
    K1Cycle,
    K1CutCycle,
    SimpleCycle,
    DelayLine,
}

impl Topology {
    pub const ALL: [Topology; 5] = [
        Topology::GeneralK,
        Topology::K1Cycle,
        Topology::K1CutCycle,
        Topology::SimpleCycle,
        Topology::DelayLine,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Topology::GeneralK => "general",
            Topology::K1Cycle => "k1-cycle",
            Topology::K1CutCycle => "k1-cut",
            Topology::SimpleCycle => "cycle",
            Topology::DelayLine => "line",
        }
    }

    /// Panel letter used in the figures: (a) through (e).
    pub fn letter(self) -> char {
        match self {
            Topology::GeneralK => 'a',
            Topology::K1Cycle => 'b',
            Topology::K1CutCycle => 'c',
            Topology::SimpleCycle => 'd',
            Topology::DelayLine => 'e',
        }
    }

    /// Whether a cycle edge is removed after rescaling.
    pub fn is_cut(self) -> bool {
        matches!(self, Topology::K1CutCycle | Topology::DelayLine)
    }

    /// Whether the in-degree `k` is a free parameter.
    pub fn has_free_k(self) -> bool {
        self == Topology::GeneralK
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "general" | "general-k" | "generalk" | "a" => Ok(Topology::GeneralK),
            "k1-cycle" | "k1cycle" | "b" => Ok(Topology::K1Cycle),
            "k1-cut" | "k1-cut-cycle" | "k1cutcycle" | "c" => Ok(Topology::K1CutCycle),
            "cycle" | "simple-cycle" | "simplecycle" | "d" => Ok(Topology::SimpleCycle),
            "line" | "delay-line" | "delayline" | "e" => Ok(Topology::DelayLine),
            other => Err(Error::Config(format!(
                "unknown topology `{other}` (expected general, k1-cycle, k1-cut, cycle or line)"
            ))),
        }
    }
}

/// Closed interval of the hyperparameter search box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Range { min, max }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }
}

pub const GAMMA_RANGE: Range = Range::new(7.0, 11.0);
pub const SIGMA_RANGE: Range = Range::new(0.1, 1.0);
pub const RHO_IN_RANGE: Range = Range::new(0.3, 1.5);
pub const K_RANGE: (usize, usize) = (1, 5);
pub const RHO_R_RANGE: Range = Range::new(0.3, 1.5);

/// The construction parameters of one reservoir.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub gamma: f64,
    pub sigma: f64,
    pub rho_in: f64,
    pub k: usize,
    pub rho_r: f64,
    pub topology: Topology,
}

impl HyperParams {
    /// `k` is forced to 1 for every topology except [`Topology::GeneralK`].
    pub fn new(topology: Topology, gamma: f64, sigma: f64, rho_in: f64, k: usize, rho_r: f64) -> Self {
        HyperParams {
            gamma,
            sigma,
            rho_in,
            k: if topology.has_free_k() { k } else { 1 },
            rho_r,
            topology,
        }
    }

    /// Best Lorenz hyperparameters reported for each topology (general: `k = 3`).
    pub fn lorenz_reference(topology: Topology) -> Self {
        match topology {
            Topology::GeneralK => Self::new(topology, 7.7, 0.81, 0.37, 3, 0.41),
            Topology::K1Cycle => Self::new(topology, 10.9, 0.44, 0.30, 1, 0.30),
            Topology::K1CutCycle => Self::new(topology, 7.2, 0.78, 0.30, 1, 0.30),
            Topology::SimpleCycle => Self::new(topology, 7.9, 0.17, 0.58, 1, 0.30),
            Topology::DelayLine => Self::new(topology, 10.6, 0.79, 0.30, 1, 0.45),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            problems.push(format!("gamma must be positive, got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.sigma) {
            problems.push(format!("sigma must lie in [0, 1], got {}", self.sigma));
        }
        if !(self.rho_in > 0.0 && self.rho_in.is_finite()) {
            problems.push(format!("rho_in must be positive, got {}", self.rho_in));
        }
        if self.k == 0 {
            problems.push("k must be at least 1".into());
        }
        if !self.topology.has_free_k() && self.k != 1 {
            problems.push(format!("k must be 1 for topology {}", self.topology));
        }
        if !(self.rho_r >= 0.0 && self.rho_r.is_finite()) {
            problems.push(format!("rho_r must be non-negative, got {}", self.rho_r));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// Check membership in the optimizer's search box, naming the bounds.
    pub fn check_search_box(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut check = |name: &str, v: f64, r: Range| {
            if !r.contains(v) {
                problems.push(format!("{name} = {v} outside [{}, {}]", r.min, r.max));
            }
        };
        check("gamma", self.gamma, GAMMA_RANGE);
        check("sigma", self.sigma, SIGMA_RANGE);
        check("rho_in", self.rho_in, RHO_IN_RANGE);
        check("rho_r", self.rho_r, RHO_R_RANGE);
        if self.k < K_RANGE.0 || self.k > K_RANGE.1 {
            problems.push(format!("k = {} outside [{}, {}]", self.k, K_RANGE.0, K_RANGE.1));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// `N x d` input matrix: each entry is present with probability `sigma` and
/// drawn from `Normal(0, rho_in^2)`.
pub fn build_w_in(n: usize, d: usize, sigma: f64, rho_in: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            if rng.gen::<f64>() < sigma {
                let z: f64 = rng.sample(StandardNormal);
                m[(i, j)] = rho_in * z;
            }
        }
    }
    m
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Each row picks one input uniformly from the other nodes.
fn random_functional_graph(n: usize, rng: &mut ChaCha8Rng) -> SparseMatrix {
    let t: Vec<_> = (0..n)
        .map(|i| {
            let j = rng.gen_range(0..n - 1);
            let j = if j >= i { j + 1 } else { j };
            (i, j, normal(rng))
        })
        .collect();
    SparseMatrix::from_triplets(n, n, &t)
}

fn rescale(mut w: SparseMatrix, rho_r: f64) -> Result<SparseMatrix> {
    let sr = spectral_radius(&w.to_dense())?;
    if sr == 0.0 {
        return Err(Error::Construction(
            "raw internal matrix has zero spectral radius and cannot be rescaled".into(),
        ));
    }
    w.scale(rho_r / sr);
    Ok(w)
}

/// Internal weight matrix for `hp.topology`, rescaled to spectral radius
/// `hp.rho_r` (measured before the cut for cut topologies).
pub fn build_w_r(hp: &HyperParams, n: usize, rng: &mut ChaCha8Rng) -> Result<SparseMatrix> {
    hp.validate()?;
    if n < 2 {
        return Err(Error::Precondition(format!("need at least 2 nodes, got {n}")));
    }
    match hp.topology {
        Topology::GeneralK => {
            if hp.k > n - 1 {
                return Err(Error::Precondition(format!(
                    "in-degree {} exceeds the {} other nodes",
                    hp.k,
                    n - 1
                )));
            }
            let mut t = Vec::with_capacity(n * hp.k);
            for i in 0..n {
                for j in index::sample(rng, n - 1, hp.k).into_iter() {
                    let j = if j >= i { j + 1 } else { j };
                    t.push((i, j, normal(rng)));
                }
            }
            rescale(SparseMatrix::from_triplets(n, n, &t), hp.rho_r)
        }
        Topology::K1Cycle | Topology::K1CutCycle => {
            let mut accepted = None;
            for _ in 0..K1_MAX_ATTEMPTS {
                let w = random_functional_graph(n, rng);
                if connected_components(&w) == 1 {
                    accepted = Some(w);
                    break;
                }
            }
            let w = accepted.ok_or_else(|| {
                Error::Construction(format!(
                    "no single-component k = 1 network in {K1_MAX_ATTEMPTS} attempts"
                ))
            })?;
            let mut w = rescale(w, hp.rho_r)?;
            if hp.topology == Topology::K1CutCycle {
                let cycle = k1_cycle(&w).expect("connected k = 1 network has a cycle");
                let node = cycle[rng.gen_range(0..cycle.len())];
                let (src, _) = w.row(node).next().expect("cycle node has an input");
                w.remove(node, src);
            }
            Ok(w)
        }
        Topology::SimpleCycle | Topology::DelayLine => {
            let weight = normal(rng);
            let mut t: Vec<_> = (1..n).map(|i| (i, i - 1, weight)).collect();
            t.push((0, n - 1, weight));
            let mut w = rescale(SparseMatrix::from_triplets(n, n, &t), hp.rho_r)?;
            if hp.topology == Topology::DelayLine {
                w.remove(0, n - 1);
            }
            Ok(w)
        }
    }
}

/// Number of weakly connected components of the sparsity graph.
pub fn connected_components(w: &SparseMatrix) -> usize {
    let n = w.nrows();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (i, j, _) in w.triplets() {
        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
        if a != b {
            parent[a] = b;
        }
    }
    (0..n).filter(|&i| find(&mut parent, i) == i).count()
}

/// Nodes of the directed cycle of a `k = 1` network, following inputs
/// backwards from node 0. `None` if some node on the way has no input.
pub fn k1_cycle(w: &SparseMatrix) -> Option<Vec<usize>> {
    let n = w.nrows();
    let pred = |i: usize| w.row(i).next().map(|(j, _)| j);
    let mut seen = vec![usize::MAX; n];
    let mut path = Vec::new();
    let mut node = 0;
    loop {
        if seen[node] != usize::MAX {
            return Some(path[seen[node]..].to_vec());
        }
        seen[node] = path.len();
        path.push(node);
        node = pred(node)?;
    }
}

/// Spectral radius of a `k = 1` network from its cycle alone:
/// `(prod |w_cycle|)^(1 / L)`. Tree edges do not contribute.
pub fn k1_cycle_spectral_radius(w: &SparseMatrix) -> Option<f64> {
    let cycle = k1_cycle(w)?;
    let log_sum: f64 = cycle
        .iter()
        .map(|&i| w.row(i).next().map(|(_, v)| v.abs().ln()).unwrap_or(f64::NEG_INFINITY))
        .sum();
    Some((log_sum / cycle.len() as f64).exp())
}

/// Whether the sparsity graph has no directed cycle (so the matrix is
/// permutation-similar to a strictly triangular one).
pub fn is_acyclic(w: &SparseMatrix) -> bool {
    spectral::strongly_connected_components(&w.adjacency())
        .iter()
        .all(|c| c.len() == 1 && w.get(c[0], c[0]) == 0.0)
}

/// Whether `W^n` is exactly the zero matrix, computed in floating point.
pub fn is_nilpotent(w: &SparseMatrix) -> bool {
    let d = w.to_dense();
    let mut p = d.clone();
    for _ in 1..w.nrows() {
        p = &p * &d;
    }
    p.iter().all(|&v| v == 0.0)
}

/// A concrete reservoir realization.
#[derive(Debug, Clone, PartialEq)]
pub struct Reservoir {
    pub hyperparams: HyperParams,
    pub w_r: SparseMatrix,
    /// Rows of the `N x 3` input matrix.
    pub w_in: Vec<[f64; 3]>,
    /// Nodes with index `>= fout_split` are squared by the readout nonlinearity.
    pub fout_split: usize,
    pub seed: u64,
}

impl Reservoir {
    /// Build a random reservoir; identical `(hp, n, seed)` give identical matrices.
    pub fn build(hp: &HyperParams, n: usize, seed: u64) -> Result<Self> {
        let mut rng = rng_from_seed(derive_seed(seed, Stream::Reservoir, 0));
        let w_r = build_w_r(hp, n, &mut rng)?;
        let w_in = build_w_in(n, INPUT_DIM, hp.sigma, hp.rho_in, &mut rng);
        Self::from_parts(*hp, w_r, &w_in, seed)
    }

    pub fn from_parts(hp: HyperParams, w_r: SparseMatrix, w_in: &DMatrix<f64>, seed: u64) -> Result<Self> {
        hp.validate()?;
        let n = w_r.nrows();
        if w_r.ncols() != n || w_in.nrows() != n || w_in.ncols() != INPUT_DIM {
            return Err(Error::Precondition(format!(
                "shape mismatch: W_r {}x{}, W_in {}x{}",
                w_r.nrows(),
                w_r.ncols(),
                w_in.nrows(),
                w_in.ncols()
            )));
        }
        Ok(Reservoir {
            hyperparams: hp,
            w_r,
            w_in: (0..n).map(|i| [w_in[(i, 0)], w_in[(i, 1)], w_in[(i, 2)]]).collect(),
            fout_split: n / 2,
            seed,
        })
    }

    pub fn n(&self) -> usize {
        self.w_r.nrows()
    }

    pub fn gamma(&self) -> f64 {
        self.hyperparams.gamma
    }

    pub fn topology(&self) -> Topology {
        self.hyperparams.topology
    }

    pub fn w_in_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n(), INPUT_DIM, |i, j| self.w_in[i][j])
    }

    /// `out = W_in u`.
    #[inline]
    pub fn input_drive(&self, u: &[f64; 3], out: &mut [f64]) {
        for (o, w) in out.iter_mut().zip(&self.w_in) {
            *o = w[0] * u[0] + w[1] * u[1] + w[2] * u[2];
        }
    }

    /// `dr/dt = gamma * (tanh(W_r r + drive) - r)`.
    #[inline]
    pub fn derivative(&self, r: &[f64], drive: &[f64], out: &mut [f64]) {
        let gamma = self.hyperparams.gamma;
        out.copy_from_slice(drive);
        self.w_r.mul_add(r, out);
        for (o, &ri) in out.iter_mut().zip(r) {
            *o = gamma * (o.tanh() - ri);
        }
    }

    pub fn spectral_radius(&self) -> Result<f64> {
        spectral_radius(&self.w_r.to_dense())
    }

    /// Every structural invariant of the topology that this reservoir breaks.
    pub fn structure_violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let hp = &self.hyperparams;
        let n = self.n();
        let w = &self.w_r;
        if let Err(e) = hp.validate() {
            v.push(e.to_string());
        }
        if !w.is_finite() || self.w_in.iter().flatten().any(|x| !x.is_finite()) {
            v.push("non-finite weights".into());
        }
        for i in 0..n {
            if w.get(i, i) != 0.0 {
                v.push(format!("row {i} has a self-loop"));
            }
        }
        let row_degree = |want: usize, v: &mut Vec<String>| {
            for i in 0..n {
                if w.row_nnz(i) != want {
                    v.push(format!("row {i} has {} non-zeros, expected {want}", w.row_nnz(i)));
                }
            }
        };
        let identical = |v: &mut Vec<String>| {
            let vals = w.values();
            if vals.iter().any(|&x| x != vals[0]) {
                v.push("weights are not identical".into());
            }
        };
        match hp.topology {
            Topology::GeneralK => row_degree(hp.k, &mut v),
            Topology::K1Cycle => {
                row_degree(1, &mut v);
                if connected_components(w) != 1 {
                    v.push(format!("{} weakly connected components, expected 1", connected_components(w)));
                }
            }
            Topology::K1CutCycle => {
                for i in 0..n {
                    if w.row_nnz(i) > 1 {
                        v.push(format!("row {i} has {} non-zeros, expected at most 1", w.row_nnz(i)));
                    }
                }
                if w.nnz() != n - 1 {
                    v.push(format!("{} edges, expected {}", w.nnz(), n - 1));
                }
                if connected_components(w) != 1 {
                    v.push(format!("{} weakly connected components, expected 1", connected_components(w)));
                }
                if !is_acyclic(w) {
                    v.push("cut network still contains a cycle".into());
                }
            }
            Topology::SimpleCycle => {
                row_degree(1, &mut v);
                for i in 0..n {
                    let want = if i == 0 { n - 1 } else { i - 1 };
                    if w.get(i, want) == 0.0 {
                        v.push(format!("row {i} is not fed by node {want}"));
                    }
                }
                identical(&mut v);
            }
            Topology::DelayLine => {
                if w.nnz() != n - 1 {
                    v.push(format!("{} edges, expected {}", w.nnz(), n - 1));
                }
                for (i, j, _) in w.triplets() {
                    if i != j + 1 {
                        v.push(format!("entry ({i}, {j}) is off the subdiagonal"));
                    }
                }
                identical(&mut v);
            }
        }
        if !hp.topology.is_cut() && hp.rho_r > 0.0 {
            match self.spectral_radius() {
                Ok(sr) if (sr - hp.rho_r).abs() <= 1e-6 * hp.rho_r => {}
                Ok(sr) => v.push(format!("spectral radius {sr} differs from rho_r = {}", hp.rho_r)),
                Err(e) => v.push(e.to_string()),
            }
        }
        v
    }
}
