//! Synthetic federated objectives `f(w) = (1/m) sum_j f_j(w)`.
//!
//! Three families are available: strongly convex quadratics with a closed
//! form optimum, L2-regularized logistic regression, and a nonconvex
//! sigmoid least-squares loss. Heterogeneity is a scalar in `[0, 1]` that
//! displaces per-client optima (quadratic) or per-client feature centers
//! (sample families). At level 0 every client holds identical parameters.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, ModelVector};
use crate::rng::{derive_stream, stream_ids, RngStream};

/// Upper bound on `|h''(z)|` for `h(z) = (sigmoid(z) - y)^2`, `y` in {0, 1}.
const SIGMOID_LOSS_CURVATURE: f64 = 0.32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Quadratic,
    Logistic,
    NonconvexSigmoid,
}

/// `f_j(w) = 0.5 w^T A w - b^T w + c`, `A` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticClient {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: f64,
}

/// Per-client samples; `features` is row-major `n x d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Vec<f64>,
    pub labels: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn row(&self, i: usize, d: usize) -> &[f64] {
        &self.features[i * d..(i + 1) * d]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum ClientObjectives {
    Quadratic { clients: Vec<QuadraticClient> },
    /// Labels in {-1, +1}; loss `log(1 + exp(-y x^T w)) + l2/2 ||w||^2`.
    Logistic { clients: Vec<Dataset>, l2: f64 },
    /// Labels in {0, 1}; loss `(sigmoid(x^T w) - y)^2`.
    NonconvexSigmoid { clients: Vec<Dataset> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimum {
    pub w: ModelVector,
    pub value: f64,
    /// Set when the optimum comes from a long reference run rather than
    /// a direct solve.
    pub approximate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationProblem {
    pub m: usize,
    pub d: usize,
    pub hetero_level: f64,
    /// Smoothness constant of the global objective.
    pub smoothness: f64,
    /// Largest smoothness constant among the client objectives.
    pub max_local_smoothness: f64,
    pub pl_constant: Option<f64>,
    pub optimum: Option<Optimum>,
    pub objectives: ClientObjectives,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NoiseModel {
    /// Exact gradient plus zero-mean Gaussian noise with
    /// `E||noise||^2 = sigma^2 / batch_size`.
    AdditiveGaussian { sigma: f64 },
    /// Average over `batch_size` samples drawn without replacement.
    Subsample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MiniBatchSpec {
    pub batch_size: usize,
    pub noise: NoiseModel,
}

impl MiniBatchSpec {
    pub fn exact() -> Self {
        Self {
            batch_size: 1,
            noise: NoiseModel::AdditiveGaussian { sigma: 0.0 },
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.noise, NoiseModel::AdditiveGaussian { sigma } if sigma == 0.0)
    }
}

impl Default for MiniBatchSpec {
    fn default() -> Self {
        Self::exact()
    }
}

/// Parameters for [`make_federation`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub family: Family,
    pub clients: usize,
    pub dim: usize,
    pub hetero_level: f64,
    /// Smallest Hessian eigenvalue of generated quadratics.
    pub mu: f64,
    /// Largest Hessian eigenvalue of generated quadratics.
    pub smoothness: f64,
    /// Distance scale between per-client optima at hetero level 1.
    pub spread: f64,
    pub samples_per_client: usize,
    pub l2: f64,
    /// Pre-solve non-quadratic problems with a long gradient-descent run.
    pub reference_solve: bool,
}

impl Default for ProblemSpec {
    fn default() -> Self {
        Self {
            family: Family::Quadratic,
            clients: 10,
            dim: 20,
            hetero_level: 0.0,
            mu: 1.0,
            smoothness: 10.0,
            spread: 5.0,
            samples_per_client: 50,
            l2: 0.01,
            reference_solve: false,
        }
    }
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 {
            return Err(Error::config("problem.clients", "must be at least 1"));
        }
        if self.dim == 0 {
            return Err(Error::config("problem.dim", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.hetero_level) {
            return Err(Error::config(
                "problem.hetero_level",
                format!("must lie in [0, 1], got {}", self.hetero_level),
            ));
        }
        if !(self.mu > 0.0 && self.smoothness >= self.mu && self.smoothness.is_finite()) {
            return Err(Error::config(
                "problem.mu",
                "require 0 < mu <= smoothness < infinity",
            ));
        }
        if !(self.spread >= 0.0 && self.spread.is_finite()) {
            return Err(Error::config("problem.spread", "must be finite and nonnegative"));
        }
        if self.family != Family::Quadratic && self.samples_per_client == 0 {
            return Err(Error::config(
                "problem.samples_per_client",
                "must be at least 1",
            ));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::config("problem.l2", "must be finite and nonnegative"));
        }
        Ok(())
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(t))` without overflow.
fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

fn sym_eigenvalues(a: &[f64], d: usize) -> (f64, f64) {
    let mat = DMatrix::from_row_slice(d, d, a);
    let eig = SymmetricEigen::new(mat).eigenvalues;
    (eig.min(), eig.max())
}

fn gram(data: &Dataset, d: usize) -> Vec<f64> {
    let n = data.len() as f64;
    let mut g = vec![0.0; d * d];
    for i in 0..data.len() {
        let x = data.row(i, d);
        for r in 0..d {
            for c in 0..d {
                g[r * d + c] += x[r] * x[c] / n;
            }
        }
    }
    g
}

/// Largest eigenvalue of `sum_i weights[i] x_i x_i^T`.
fn weighted_gram_max_eigenvalue(rows: &[&[f64]], weights: &[f64], d: usize) -> f64 {
    let n = rows.len();
    // With fewer rows than columns the n x n kernel has the same nonzero
    // spectrum and is much cheaper to decompose.
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = (weights[i] * weights[j]).sqrt() * linalg::dot(rows[i], rows[j]);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    debug_assert!(n < d);
    sym_eigenvalues(&k, n).1
}

fn mean_matrix(mats: &[Vec<f64>]) -> Vec<f64> {
    let refs: Vec<&[f64]> = mats.iter().map(Vec::as_slice).collect();
    linalg::mean(&refs)
}

impl FederationProblem {
    /// Builds a quadratic federation and solves for its optimum.
    pub fn quadratic(clients: Vec<QuadraticClient>, hetero_level: f64) -> Result<Self> {
        let m = clients.len();
        if m == 0 {
            return Err(Error::config("clients", "at least one client is required"));
        }
        let d = clients[0].b.len();
        if d == 0 {
            return Err(Error::config("dim", "must be at least 1"));
        }
        let mut max_local = 0.0f64;
        for cl in &clients {
            if cl.b.len() != d || cl.a.len() != d * d {
                return Err(Error::Dimension {
                    expected: d,
                    actual: cl.b.len(),
                });
            }
            max_local = max_local.max(sym_eigenvalues(&cl.a, d).1);
        }
        let mats: Vec<Vec<f64>> = clients.iter().map(|c| c.a.clone()).collect();
        let (mu, l) = sym_eigenvalues(&mean_matrix(&mats), d);
        let mut problem = Self {
            m,
            d,
            hetero_level,
            smoothness: l,
            max_local_smoothness: max_local,
            pl_constant: Some(mu),
            optimum: None,
            objectives: ClientObjectives::Quadratic { clients },
        };
        problem.optimum = Some(problem.closed_form_optimum()?);
        Ok(problem)
    }

    pub fn logistic(clients: Vec<Dataset>, dim: usize, l2: f64, hetero_level: f64) -> Result<Self> {
        Self::from_samples(ClientObjectives::Logistic { clients, l2 }, dim, hetero_level)
    }

    pub fn nonconvex_sigmoid(clients: Vec<Dataset>, dim: usize, hetero_level: f64) -> Result<Self> {
        Self::from_samples(
            ClientObjectives::NonconvexSigmoid { clients },
            dim,
            hetero_level,
        )
    }

    fn from_samples(objectives: ClientObjectives, d: usize, hetero_level: f64) -> Result<Self> {
        let (clients, curvature, l2) = match &objectives {
            ClientObjectives::Logistic { clients, l2 } => (clients, 0.25, *l2),
            ClientObjectives::NonconvexSigmoid { clients } => (clients, SIGMOID_LOSS_CURVATURE, 0.0),
            ClientObjectives::Quadratic { .. } => unreachable!(),
        };
        if clients.is_empty() {
            return Err(Error::config("clients", "at least one client is required"));
        }
        for data in clients {
            if data.is_empty() || data.features.len() != data.len() * d {
                return Err(Error::config("samples", "each client needs n >= 1 rows of width d"));
            }
        }
        let m = clients.len() as f64;
        let total_rows: usize = clients.iter().map(Dataset::len).sum();
        let mut max_local = 0.0f64;
        let global_eig = if total_rows < d {
            let mut rows = Vec::with_capacity(total_rows);
            let mut weights = Vec::with_capacity(total_rows);
            for data in clients {
                let local: Vec<&[f64]> = (0..data.len()).map(|i| data.row(i, d)).collect();
                let w = vec![1.0 / data.len() as f64; data.len()];
                max_local = max_local.max(weighted_gram_max_eigenvalue(&local, &w, d));
                rows.extend(local);
                weights.extend(w.iter().map(|v| v / m));
            }
            weighted_gram_max_eigenvalue(&rows, &weights, d)
        } else {
            let mut grams = Vec::with_capacity(clients.len());
            for data in clients {
                let g = gram(data, d);
                max_local = max_local.max(if data.len() < d {
                    let local: Vec<&[f64]> = (0..data.len()).map(|i| data.row(i, d)).collect();
                    weighted_gram_max_eigenvalue(&local, &vec![1.0 / data.len() as f64; data.len()], d)
                } else {
                    sym_eigenvalues(&g, d).1
                });
                grams.push(g);
            }
            sym_eigenvalues(&mean_matrix(&grams), d).1
        };
        let max_local = curvature * max_local + l2;
        let global = curvature * global_eig + l2;
        let pl = match objectives {
            ClientObjectives::Logistic { l2, .. } if l2 > 0.0 => Some(l2),
            _ => None,
        };
        Ok(Self {
            m: clients.len(),
            d,
            hetero_level,
            smoothness: global,
            max_local_smoothness: max_local,
            pl_constant: pl,
            optimum: None,
            objectives,
        })
    }

    pub fn family(&self) -> Family {
        match self.objectives {
            ClientObjectives::Quadratic { .. } => Family::Quadratic,
            ClientObjectives::Logistic { .. } => Family::Logistic,
            ClientObjectives::NonconvexSigmoid { .. } => Family::NonconvexSigmoid,
        }
    }

    fn check(&self, j: usize, w: &[f64]) -> Result<()> {
        if j >= self.m {
            return Err(Error::ClientIndex {
                index: j,
                clients: self.m,
            });
        }
        if w.len() != self.d {
            return Err(Error::Dimension {
                expected: self.d,
                actual: w.len(),
            });
        }
        Ok(())
    }

    pub fn local_objective(&self, j: usize, w: &[f64]) -> Result<f64> {
        self.check(j, w)?;
        let d = self.d;
        Ok(match &self.objectives {
            ClientObjectives::Quadratic { clients } => {
                let cl = &clients[j];
                0.5 * linalg::dot(w, &linalg::mat_vec(&cl.a, w)) - linalg::dot(&cl.b, w) + cl.c
            }
            ClientObjectives::Logistic { clients, l2 } => {
                let data = &clients[j];
                let loss: f64 = (0..data.len())
                    .map(|i| softplus(-data.labels[i] * linalg::dot(data.row(i, d), w)))
                    .sum();
                loss / data.len() as f64 + 0.5 * l2 * linalg::norm_sq(w)
            }
            ClientObjectives::NonconvexSigmoid { clients } => {
                let data = &clients[j];
                let loss: f64 = (0..data.len())
                    .map(|i| (sigmoid(linalg::dot(data.row(i, d), w)) - data.labels[i]).powi(2))
                    .sum();
                loss / data.len() as f64
            }
        })
    }

    /// Exact `grad f_j(w)`.
    pub fn local_gradient(&self, j: usize, w: &[f64]) -> Result<ModelVector> {
        self.check(j, w)?;
        Ok(match &self.objectives {
            ClientObjectives::Quadratic { clients } => {
                let cl = &clients[j];
                linalg::sub(&linalg::mat_vec(&cl.a, w), &cl.b)
            }
            ClientObjectives::Logistic { .. } | ClientObjectives::NonconvexSigmoid { .. } => {
                let n = self.dataset(j).len();
                self.batch_gradient(j, w, 0..n)
            }
        })
    }

    fn dataset(&self, j: usize) -> &Dataset {
        match &self.objectives {
            ClientObjectives::Logistic { clients, .. }
            | ClientObjectives::NonconvexSigmoid { clients } => &clients[j],
            ClientObjectives::Quadratic { .. } => unreachable!("quadratics carry no samples"),
        }
    }

    fn batch_gradient(&self, j: usize, w: &[f64], rows: impl Iterator<Item = usize>) -> ModelVector {
        let d = self.d;
        let data = self.dataset(j);
        let mut g = vec![0.0; d];
        let mut count = 0usize;
        for i in rows {
            let x = data.row(i, d);
            let y = data.labels[i];
            let z = linalg::dot(x, w);
            let scale = match self.objectives {
                ClientObjectives::Logistic { .. } => -y * sigmoid(-y * z),
                _ => {
                    let s = sigmoid(z);
                    2.0 * (s - y) * s * (1.0 - s)
                }
            };
            linalg::axpy(scale, x, &mut g);
            count += 1;
        }
        let inv = 1.0 / count as f64;
        g.iter_mut().for_each(|v| *v *= inv);
        if let ClientObjectives::Logistic { l2, .. } = self.objectives {
            linalg::axpy(l2, w, &mut g);
        }
        g
    }

    /// Unbiased estimate of `grad f_j(w)` under `batch`.
    pub fn stochastic_gradient(
        &self,
        j: usize,
        w: &[f64],
        batch: &MiniBatchSpec,
        rng: &mut RngStream,
    ) -> Result<ModelVector> {
        if batch.batch_size == 0 {
            return Err(Error::config("batch.batch_size", "must be at least 1"));
        }
        match batch.noise {
            NoiseModel::AdditiveGaussian { sigma } => {
                let mut g = self.local_gradient(j, w)?;
                if sigma != 0.0 {
                    let std = sigma / ((batch.batch_size * self.d) as f64).sqrt();
                    for v in g.iter_mut() {
                        *v += std * rng.sample::<f64, _>(StandardNormal);
                    }
                }
                Ok(g)
            }
            NoiseModel::Subsample => {
                self.check(j, w)?;
                if self.family() == Family::Quadratic {
                    return Err(Error::config(
                        "batch.noise",
                        "subsampling needs a sample-based family",
                    ));
                }
                let n = self.dataset(j).len();
                if batch.batch_size > n {
                    return Err(Error::config(
                        "batch.batch_size",
                        format!("exceeds the {n} samples held by client {j}"),
                    ));
                }
                if batch.batch_size == n {
                    return Ok(self.batch_gradient(j, w, 0..n));
                }
                let mut rows = rand::seq::index::sample(rng, n, batch.batch_size).into_vec();
                rows.sort_unstable();
                Ok(self.batch_gradient(j, w, rows.into_iter()))
            }
        }
    }

    /// `f(w) = (1/m) sum_j f_j(w)`.
    pub fn objective(&self, w: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for j in 0..self.m {
            total += self.local_objective(j, w)?;
        }
        Ok(total / self.m as f64)
    }

    pub fn gradient(&self, w: &[f64]) -> Result<ModelVector> {
        let grads = (0..self.m)
            .map(|j| self.local_gradient(j, w))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
        Ok(linalg::mean(&refs))
    }

    /// `f(w) - f*`, or `None` when the optimum is unknown.
    ///
    /// Quadratics use the equivalent form `0.5 (w - w*)^T A_bar (w - w*)`,
    /// which avoids cancellation near the optimum.
    pub fn global_suboptimality(&self, w: &[f64]) -> Result<Option<f64>> {
        let Some(opt) = &self.optimum else {
            return Ok(None);
        };
        if let ClientObjectives::Quadratic { clients } = &self.objectives {
            let e = linalg::sub(w, &opt.w);
            let total: f64 = clients
                .iter()
                .map(|cl| 0.5 * linalg::dot(&e, &linalg::mat_vec(&cl.a, &e)))
                .sum();
            return Ok(Some(total / self.m as f64));
        }
        Ok(Some(self.objective(w)? - opt.value))
    }

    /// Solves `A_bar w* = b_bar` by Cholesky factorization.
    pub fn closed_form_optimum(&self) -> Result<Optimum> {
        let ClientObjectives::Quadratic { clients } = &self.objectives else {
            return Err(Error::Unsupported(
                "closed-form optimum exists only for quadratics".into(),
            ));
        };
        let d = self.d;
        let a_bar = mean_matrix(&clients.iter().map(|c| c.a.clone()).collect::<Vec<_>>());
        let b_refs: Vec<&[f64]> = clients.iter().map(|c| c.b.as_slice()).collect();
        let b_bar = linalg::mean(&b_refs);
        let chol = DMatrix::from_row_slice(d, d, &a_bar)
            .cholesky()
            .ok_or_else(|| Error::Numerical("mean Hessian is not positive definite".into()))?;
        let sol = chol.solve(&DVector::from_column_slice(&b_bar));
        let w: ModelVector = sol.iter().copied().collect();
        let value = self.objective(&w)?;
        Ok(Optimum {
            w,
            value,
            approximate: false,
        })
    }

    /// Full-batch gradient descent with step `1 / L` from the origin.
    pub fn solve_reference(&self, max_iters: usize, grad_tol: f64) -> Result<Optimum> {
        let step = 1.0 / self.smoothness;
        let mut w = vec![0.0; self.d];
        for _ in 0..max_iters {
            let g = self.gradient(&w)?;
            if linalg::norm(&g) <= grad_tol {
                break;
            }
            linalg::axpy(-step, &g, &mut w);
        }
        let value = self.objective(&w)?;
        Ok(Optimum {
            w,
            value,
            approximate: true,
        })
    }

    /// Pairwise cosine similarity of the clients' full gradients at `w`.
    pub fn heterogeneity_matrix(&self, w: &[f64]) -> Result<Vec<Vec<f64>>> {
        let grads = (0..self.m)
            .map(|j| self.local_gradient(j, w))
            .collect::<Result<Vec<_>>>()?;
        let sq: Vec<f64> = grads.iter().map(|g| linalg::norm_sq(g)).collect();
        if let Some(client) = sq.iter().position(|&s| s == 0.0) {
            return Err(Error::UndefinedSimilarity { client });
        }
        let mut out = vec![vec![0.0; self.m]; self.m];
        for i in 0..self.m {
            out[i][i] = 1.0;
            for k in i + 1..self.m {
                let c = linalg::dot(&grads[i], &grads[k]) / (sq[i] * sq[k]).sqrt();
                out[i][k] = c;
                out[k][i] = c;
            }
        }
        Ok(out)
    }
}

/// Mean of the off-diagonal entries of a square matrix.
pub fn mean_off_diagonal(matrix: &[Vec<f64>]) -> f64 {
    let m = matrix.len();
    if m < 2 {
        return 1.0;
    }
    let mut total = 0.0;
    for (i, row) in matrix.iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            if i != k {
                total += v;
            }
        }
    }
    total / (m * (m - 1)) as f64
}

fn gaussian_vec(rng: &mut RngStream, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn unit_vec(rng: &mut RngStream, d: usize) -> Vec<f64> {
    loop {
        let v = gaussian_vec(rng, d);
        let n = linalg::norm(&v);
        if n > 0.0 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// SPD matrix with eigenvalues spaced evenly over `[mu, l]` in a random basis.
fn random_spd(rng: &mut RngStream, d: usize, mu: f64, l: f64) -> Vec<f64> {
    let g = DMatrix::from_row_slice(d, d, &gaussian_vec(rng, d * d));
    let q = g.qr().q();
    let eig = DVector::from_iterator(
        d,
        (0..d).map(|i| {
            if d == 1 {
                mu
            } else {
                mu + (l - mu) * i as f64 / (d - 1) as f64
            }
        }),
    );
    let a = &q * DMatrix::from_diagonal(&eig) * q.transpose();
    let mut out = vec![0.0; d * d];
    for r in 0..d {
        for c in r..d {
            let v = 0.5 * (a[(r, c)] + a[(c, r)]);
            out[r * d + c] = v;
            out[c * d + r] = v;
        }
    }
    out
}

/// Generates a synthetic federation from `spec`, deterministically in `seed`.
pub fn make_federation(spec: &ProblemSpec, seed: u64) -> Result<FederationProblem> {
    spec.validate()?;
    let mut rng = derive_stream(seed, stream_ids::PROBLEM, 0);
    let (m, d, h) = (spec.clients, spec.dim, spec.hetero_level);
    let mut problem = match spec.family {
        Family::Quadratic => {
            let base = random_spd(&mut rng, d, spec.mu, spec.smoothness);
            let center = unit_vec(&mut rng, d);
            let mut clients = Vec::with_capacity(m);
            for _ in 0..m {
                let own = random_spd(&mut rng, d, spec.mu, spec.smoothness);
                let dir = unit_vec(&mut rng, d);
                let a = if h == 0.0 {
                    base.clone()
                } else {
                    base.iter()
                        .zip(&own)
                        .map(|(x, y)| (1.0 - h) * x + h * y)
                        .collect()
                };
                let target: Vec<f64> = if h == 0.0 {
                    center.clone()
                } else {
                    center
                        .iter()
                        .zip(&dir)
                        .map(|(c, u)| c + h * spec.spread * u)
                        .collect()
                };
                let b = linalg::mat_vec(&a, &target);
                let c = 0.5 * linalg::dot(&target, &b);
                clients.push(QuadraticClient { a, b, c });
            }
            FederationProblem::quadratic(clients, h)?
        }
        Family::Logistic | Family::NonconvexSigmoid => {
            let n = spec.samples_per_client;
            let truth = gaussian_vec(&mut rng, d);
            let base_data = sample_dataset(&mut rng, spec, &truth, &vec![0.0; d], n);
            let mut clients = Vec::with_capacity(m);
            for _ in 0..m {
                let dir = unit_vec(&mut rng, d);
                let shift: Vec<f64> = dir.iter().map(|u| h * spec.spread * u).collect();
                let own = sample_dataset(&mut rng, spec, &truth, &shift, n);
                clients.push(if h == 0.0 { base_data.clone() } else { own });
            }
            if spec.family == Family::Logistic {
                FederationProblem::logistic(clients, d, spec.l2, h)?
            } else {
                FederationProblem::nonconvex_sigmoid(clients, d, h)?
            }
        }
    };
    if problem.optimum.is_none() && spec.reference_solve {
        problem.optimum = Some(problem.solve_reference(200_000, 1e-12)?);
    }
    Ok(problem)
}

fn sample_dataset(
    rng: &mut RngStream,
    spec: &ProblemSpec,
    truth: &[f64],
    shift: &[f64],
    n: usize,
) -> Dataset {
    let d = spec.dim;
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = shift
            .iter()
            .map(|s| s + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let margin = linalg::dot(&x, truth) + 0.5 * rng.sample::<f64, _>(StandardNormal);
        let positive = margin > 0.0;
        labels.push(match (spec.family, positive) {
            (Family::Logistic, true) => 1.0,
            (Family::Logistic, false) => -1.0,
            (_, true) => 1.0,
            (_, false) => 0.0,
        });
        features.extend(x);
    }
    Dataset { features, labels }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity(d: usize) -> Vec<f64> {
        let mut a = vec![0.0; d * d];
        for i in 0..d {
            a[i * d + i] = 1.0;
        }
        a
    }

    fn quad(a: Vec<f64>, b: Vec<f64>) -> QuadraticClient {
        QuadraticClient { a, b, c: 0.0 }
    }

    #[test]
    fn identity_hessian_gradient() {
        let p = FederationProblem::quadratic(vec![quad(identity(2), vec![0.0, 0.0])], 0.0).unwrap();
        assert_eq!(p.local_gradient(0, &[3.0, -1.0]).unwrap(), vec![3.0, -1.0]);
    }

    #[test]
    fn gradient_vanishes_at_optimum() {
        let p = FederationProblem::quadratic(
            vec![quad(vec![2.0, 0.0, 0.0, 4.0], vec![2.0, 4.0])],
            0.0,
        )
        .unwrap();
        assert_eq!(p.local_gradient(0, &[1.0, 1.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn client_index_checked() {
        let p = FederationProblem::quadratic(vec![quad(identity(2), vec![0.0, 0.0])], 0.0).unwrap();
        assert!(matches!(
            p.local_gradient(1, &[0.0, 0.0]),
            Err(Error::ClientIndex { .. })
        ));
    }

    #[test]
    fn suboptimality_two_client_example() {
        let mut a2 = identity(2);
        a2.iter_mut().for_each(|v| *v *= 2.0);
        let p = FederationProblem::quadratic(
            vec![quad(identity(2), vec![0.0; 2]), quad(a2, vec![0.0; 2])],
            1.0,
        )
        .unwrap();
        let opt = p.optimum.as_ref().unwrap();
        assert_eq!(opt.w, vec![0.0, 0.0]);
        assert_eq!(opt.value, 0.0);
        assert_eq!(p.global_suboptimality(&[0.0, 0.0]).unwrap(), Some(0.0));
        assert!((p.global_suboptimality(&[1.0, 0.0]).unwrap().unwrap() - 0.75).abs() < 1e-15);
        assert!((p.objective(&[1.0, 0.0]).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn scalar_closed_form() {
        let p = FederationProblem::quadratic(
            vec![quad(vec![1.0], vec![1.0]), quad(vec![3.0], vec![-1.0])],
            1.0,
        )
        .unwrap();
        let opt = p.closed_form_optimum().unwrap();
        assert_eq!(opt.w, vec![0.0]);
        assert_eq!(opt.value, 0.0);
    }

    #[test]
    fn shared_target_optimum() {
        let c = vec![0.5, -2.0, 3.0];
        let clients = (0..4).map(|_| quad(identity(3), c.clone())).collect();
        let p = FederationProblem::quadratic(clients, 0.0).unwrap();
        let w = &p.optimum.as_ref().unwrap().w;
        assert!(linalg::max_abs_diff(w, &c) < 1e-15);
    }

    #[test]
    fn non_quadratic_has_no_closed_form() {
        let spec = ProblemSpec {
            family: Family::Logistic,
            clients: 2,
            dim: 3,
            ..ProblemSpec::default()
        };
        let p = make_federation(&spec, 1).unwrap();
        assert!(matches!(p.closed_form_optimum(), Err(Error::Unsupported(_))));
        assert_eq!(p.global_suboptimality(&[0.0; 3]).unwrap(), None);
    }

    #[test]
    fn cosine_examples() {
        let p = FederationProblem::quadratic(
            vec![
                quad(identity(2), vec![-1.0, 0.0]),
                quad(identity(2), vec![0.0, -1.0]),
            ],
            1.0,
        )
        .unwrap();
        let h = p.heterogeneity_matrix(&[0.0, 0.0]).unwrap();
        assert_eq!(h, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);

        let p = FederationProblem::quadratic(
            vec![
                quad(identity(2), vec![-1.0, 0.0]),
                quad(identity(2), vec![1.0, 0.0]),
            ],
            1.0,
        )
        .unwrap();
        let h = p.heterogeneity_matrix(&[0.0, 0.0]).unwrap();
        assert_eq!(h[0][1], -1.0);
        assert_eq!(h[1][0], -1.0);
    }

    #[test]
    fn zero_gradient_names_client() {
        let p = FederationProblem::quadratic(
            vec![
                quad(identity(2), vec![1.0, 0.0]),
                quad(identity(2), vec![0.0, 0.0]),
            ],
            1.0,
        )
        .unwrap();
        assert!(matches!(
            p.heterogeneity_matrix(&[0.0, 0.0]),
            Err(Error::UndefinedSimilarity { client: 1 })
        ));
    }

    #[test]
    fn invalid_hetero_level() {
        let spec = ProblemSpec {
            hetero_level: 1.5,
            ..ProblemSpec::default()
        };
        assert!(make_federation(&spec, 0).unwrap_err().is_config());
    }

    #[test]
    fn zero_sigma_is_exact() {
        let p = make_federation(&ProblemSpec::default(), 3).unwrap();
        let w = vec![0.3; 20];
        let mut rng = derive_stream(0, 0, 0);
        assert_eq!(
            p.stochastic_gradient(2, &w, &MiniBatchSpec::exact(), &mut rng)
                .unwrap(),
            p.local_gradient(2, &w).unwrap()
        );
    }

    #[test]
    fn zero_batch_is_rejected() {
        let p = make_federation(&ProblemSpec::default(), 3).unwrap();
        let batch = MiniBatchSpec {
            batch_size: 0,
            noise: NoiseModel::AdditiveGaussian { sigma: 1.0 },
        };
        let mut rng = derive_stream(0, 0, 0);
        assert!(p
            .stochastic_gradient(0, &[0.0; 20], &batch, &mut rng)
            .unwrap_err()
            .is_config());
    }

    #[test]
    fn full_batch_subsample_is_exact() {
        let spec = ProblemSpec {
            family: Family::Logistic,
            clients: 3,
            dim: 4,
            samples_per_client: 12,
            hetero_level: 0.5,
            ..ProblemSpec::default()
        };
        let p = make_federation(&spec, 9).unwrap();
        let batch = MiniBatchSpec {
            batch_size: 12,
            noise: NoiseModel::Subsample,
        };
        let w = [0.1, -0.2, 0.3, 0.0];
        let mut rng = derive_stream(0, 0, 0);
        assert_eq!(
            p.stochastic_gradient(1, &w, &batch, &mut rng).unwrap(),
            p.local_gradient(1, &w).unwrap()
        );
    }

    #[test]
    fn homogeneous_federation_has_identical_clients() {
        let p = make_federation(&ProblemSpec::default(), 11).unwrap();
        let w: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        let g0 = p.local_gradient(0, &w).unwrap();
        let global = p.gradient(&w).unwrap();
        for j in 1..p.m {
            assert_eq!(p.local_gradient(j, &w).unwrap(), g0);
        }
        assert_eq!(global, g0);
        let h = p.heterogeneity_matrix(&w).unwrap();
        assert!(h.iter().flatten().all(|&v| v == 1.0));
    }

    #[test]
    fn heterogeneous_federation_has_low_similarity() {
        let spec = ProblemSpec {
            hetero_level: 1.0,
            ..ProblemSpec::default()
        };
        let p = make_federation(&spec, 11).unwrap();
        let h = p.heterogeneity_matrix(&[0.0; 20]).unwrap();
        assert!(mean_off_diagonal(&h) < 0.3, "{}", mean_off_diagonal(&h));
    }

    #[test]
    fn problem_json_round_trip() {
        let p = make_federation(&ProblemSpec::default(), 5).unwrap();
        let text = serde_json::to_string(&p).unwrap();
        let back: FederationProblem = serde_json::from_str(&text).unwrap();
        assert_eq!(back, p);
        assert_eq!(serde_json::to_string(&back).unwrap(), text);
    }
}
