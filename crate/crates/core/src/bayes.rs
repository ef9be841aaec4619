//! Synthetic data, Gaussian likelihood and the ratio estimator of the
//! posterior mean of the domain map.
//!
//! For every cubature node `y` the pulled-back problem is solved once. Its
//! likelihood weight `w(y) = exp(-1/2 |delta - G(y)|^2_{Gamma^-1})` feeds both
//! `Z = Q(w)` and `Z'(x) = Q(V(x, .) w)`. Weights are rescaled by the largest
//! log-likelihood of the node set, which cancels in the ratio `Z' / Z`.
//!
//! Node evaluations run in parallel; all reductions run in node order with
//! compensated summation, so results do not depend on the number of workers.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::fem::{self, Discretization, FemError, FemProblem};
use crate::field::{FieldError, ParameterVector, PerturbationField, Point2, PreparedField, Source};
use crate::lattice::LatticeRule;
use crate::mesh::{Location, Mesh};
use crate::random::{stream_rng, uniform_block};
use crate::summation::NeumaierSum;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BayesError {
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("expected {expected} values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("clean observations are all zero, the noise level is undefined")]
    ZeroSignal,
    #[error("normalizing constant of shift {shift} is not positive")]
    NonPositiveZ { shift: usize },
    #[error("at least {needed} shifts are required, got {got}")]
    TooFewShifts { needed: usize, got: usize },
    #[error("covariance is not symmetric positive definite")]
    NotSpd,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dataset line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{0}")]
    Io(String),
}

/// Where a synthetic dataset came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub truth_seed: u64,
    pub noise_seed: u64,
    pub s_star: usize,
    pub h_star_level: usize,
    pub noise_frac: f64,
    pub y_star: Vec<f64>,
}

/// Noisy point observations with Gaussian noise.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    ref_points: Vec<Point2>,
    delta: Vec<f64>,
    gamma: DMatrix<f64>,
    precision: DMatrix<f64>,
    eta: f64,
    provenance: Provenance,
}

impl Dataset {
    pub fn new(
        ref_points: Vec<Point2>,
        delta: Vec<f64>,
        gamma: DMatrix<f64>,
        eta: f64,
        provenance: Provenance,
    ) -> Result<Self, BayesError> {
        let k = ref_points.len();
        if delta.len() != k {
            return Err(BayesError::DimensionMismatch { expected: k, got: delta.len() });
        }
        if gamma.nrows() != k || gamma.ncols() != k {
            return Err(BayesError::DimensionMismatch { expected: k, got: gamma.nrows() });
        }
        if (&gamma - gamma.transpose()).amax() > 0.0 {
            return Err(BayesError::NotSpd);
        }
        let precision = if k == 0 {
            DMatrix::zeros(0, 0)
        } else {
            gamma.clone().cholesky().ok_or(BayesError::NotSpd)?.inverse()
        };
        Ok(Self { ref_points, delta, gamma, precision, eta, provenance })
    }

    /// `Gamma = eta^2 I`.
    pub fn isotropic(ref_points: Vec<Point2>, delta: Vec<f64>, eta: f64, provenance: Provenance) -> Result<Self, BayesError> {
        if !(eta > 0.0) {
            return Err(BayesError::NotSpd);
        }
        let k = ref_points.len();
        Self::new(ref_points, delta, DMatrix::identity(k, k) * (eta * eta), eta, provenance)
    }

    /// Replaces the noise precision by zero, making the likelihood constant.
    pub fn with_flat_likelihood(mut self) -> Self {
        let k = self.k();
        self.precision = DMatrix::zeros(k, k);
        self
    }

    pub fn k(&self) -> usize {
        self.ref_points.len()
    }

    pub fn ref_points(&self) -> &[Point2] {
        &self.ref_points
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Smallest eigenvalue of the noise covariance.
    pub fn smallest_noise_eigenvalue(&self) -> f64 {
        if self.k() == 0 {
            return 1.0;
        }
        self.gamma.clone().symmetric_eigen().eigenvalues.min()
    }

    pub fn to_text(&self) -> String {
        let p = &self.provenance;
        let join = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        let mut out = String::new();
        let _ = writeln!(out, "# shape-qmc dataset v1");
        let _ = writeln!(out, "k = {}", self.k());
        let _ = writeln!(out, "eta = {}", self.eta);
        let _ = writeln!(out, "noise_frac = {}", p.noise_frac);
        let _ = writeln!(out, "truth_seed = {}", p.truth_seed);
        let _ = writeln!(out, "noise_seed = {}", p.noise_seed);
        let _ = writeln!(out, "s_star = {}", p.s_star);
        let _ = writeln!(out, "h_star_level = {}", p.h_star_level);
        let _ = writeln!(out, "y_star = {}", join(&mut p.y_star.iter().copied()));
        let _ = writeln!(out, "covariance = {}", join(&mut self.gamma.transpose().iter().copied()));
        for (x, d) in self.ref_points.iter().zip(&self.delta) {
            let _ = writeln!(out, "{} {} {}", x[0], x[1], d);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, BayesError> {
        let mut header = std::collections::HashMap::new();
        let mut points = Vec::new();
        let mut delta = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let err = |message: String| BayesError::Parse { line: i + 1, message };
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some((key, value)) = line.split_once('=') {
                header.insert(key.trim().to_string(), (i + 1, value.trim().to_string()));
                continue;
            }
            let values: Vec<f64> = line
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|e| err(format!("{v:?}: {e}"))))
                .collect::<Result<_, _>>()?;
            if values.len() != 3 {
                return Err(err(format!("expected `x1 x2 delta`, got {} fields", values.len())));
            }
            points.push(Point2::new(values[0], values[1]));
            delta.push(values[2]);
        }
        fn field<T: std::str::FromStr>(
            header: &std::collections::HashMap<String, (usize, String)>,
            key: &str,
        ) -> Result<T, BayesError>
        where
            T::Err: std::fmt::Display,
        {
            let (line, value) = header
                .get(key)
                .ok_or_else(|| BayesError::Parse { line: 0, message: format!("missing key `{key}`") })?;
            value
                .parse()
                .map_err(|e: T::Err| BayesError::Parse { line: *line, message: format!("{key}: {e}") })
        }
        fn list(header: &std::collections::HashMap<String, (usize, String)>, key: &str) -> Result<Vec<f64>, BayesError> {
            let (line, value) = header
                .get(key)
                .ok_or_else(|| BayesError::Parse { line: 0, message: format!("missing key `{key}`") })?;
            value
                .split_whitespace()
                .map(|v| v.parse().map_err(|e| BayesError::Parse { line: *line, message: format!("{key}: {e}") }))
                .collect()
        }
        let k: usize = field(&header, "k")?;
        if k != points.len() {
            return Err(BayesError::DimensionMismatch { expected: k, got: points.len() });
        }
        let provenance = Provenance {
            truth_seed: field(&header, "truth_seed")?,
            noise_seed: field(&header, "noise_seed")?,
            s_star: field(&header, "s_star")?,
            h_star_level: field(&header, "h_star_level")?,
            noise_frac: field(&header, "noise_frac")?,
            y_star: list(&header, "y_star")?,
        };
        let cov = list(&header, "covariance")?;
        if cov.len() != k * k {
            return Err(BayesError::DimensionMismatch { expected: k * k, got: cov.len() });
        }
        let gamma = DMatrix::from_row_slice(k, k, &cov);
        Self::new(points, delta, gamma, field(&header, "eta")?, provenance)
    }

    pub fn write(&self, path: &Path) -> Result<(), BayesError> {
        fs::write(path, self.to_text()).map_err(|e| BayesError::Io(format!("{}: {e}", path.display())))
    }

    pub fn read(path: &Path) -> Result<Self, BayesError> {
        let text = fs::read_to_string(path).map_err(|e| BayesError::Io(format!("{}: {e}", path.display())))?;
        Self::from_text(&text)
    }
}

/// Covariance scale, relative to the peak clean observation, used when
/// synthetic data carry no noise.
pub const NOISE_FREE_COVARIANCE_FRAC: f64 = 0.01;

/// Uniform sample of `[-1/2, 1/2]^s` from the counter-based stream.
pub fn uniform_parameter(seed: u64, stream: u64, offset: u64, out: &mut [f64]) {
    uniform_block(seed, stream, offset, out);
    for v in out.iter_mut() {
        *v -= 0.5;
    }
}

/// Draws `y*`, solves at level `h_star_level` and perturbs the clean data with
/// noise of standard deviation `eta = noise_frac * max |delta_clean|`. The
/// covariance is `eta^2 I`; for noise-free data it falls back to
/// [`NOISE_FREE_COVARIANCE_FRAC`] of the peak.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_data(
    field: &PerturbationField,
    f: &Source,
    ref_points: &[Point2],
    s_star: usize,
    h_star_level: usize,
    noise_frac: f64,
    truth_seed: u64,
    noise_seed: u64,
) -> Result<Dataset, BayesError> {
    if !(noise_frac >= 0.0) {
        return Err(BayesError::InvalidInput(format!("noise_frac = {noise_frac} must be >= 0")));
    }
    if let Some(x) = ref_points.iter().find(|x| !(x.norm() < 1.0)) {
        return Err(BayesError::InvalidInput(format!(
            "reference point ({}, {}) is not strictly inside the disk",
            x[0], x[1]
        )));
    }
    let truth = field.truncate(s_star)?;
    let mut y_star = vec![0.0; s_star];
    uniform_parameter(truth_seed, 0, 0, &mut y_star);
    let y = ParameterVector::new(y_star.clone())?;
    let clean = fem::observation(&truth, &y, h_star_level, f, ref_points)?;
    let peak = clean.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return Err(BayesError::ZeroSignal);
    }
    let eta = noise_frac * peak;
    let mut rng = stream_rng(noise_seed, 0);
    let delta: Vec<f64> = clean
        .iter()
        .map(|d| {
            let xi: f64 = StandardNormal.sample(&mut rng);
            d + eta * xi
        })
        .collect();
    let provenance = Provenance { truth_seed, noise_seed, s_star, h_star_level, noise_frac, y_star };
    let delta = if noise_frac == 0.0 { clean } else { delta };
    // noise-free data still need a likelihood scale
    let sigma = noise_frac.max(NOISE_FREE_COVARIANCE_FRAC) * peak;
    let mut data = Dataset::isotropic(ref_points.to_vec(), delta, sigma, provenance)?;
    data.eta = eta;
    Ok(data)
}

/// `-1/2 (delta - G)^T Gamma^{-1} (delta - G)`.
pub fn log_likelihood(g: &[f64], dataset: &Dataset) -> Result<f64, BayesError> {
    let k = dataset.k();
    if g.len() != k {
        return Err(BayesError::DimensionMismatch { expected: k, got: g.len() });
    }
    let p = &dataset.precision;
    let r: Vec<f64> = dataset.delta.iter().zip(g).map(|(d, v)| d - v).collect();
    let mut q = 0.0;
    for i in 0..k {
        let mut row = 0.0;
        for j in 0..k {
            row += p[(i, j)] * r[j];
        }
        q += r[i] * row;
    }
    let ll = -0.5 * q;
    debug_assert!(ll <= 0.0);
    Ok(ll.min(0.0))
}

/// Scaled per-shift integrals: `Z = exp(log_scale) z_scaled` and
/// `Z'(x_i) = exp(log_scale) zprime_scaled[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerShiftEstimate {
    pub z_scaled: f64,
    pub log_scale: f64,
    pub zprime_scaled: Vec<Point2>,
}

impl PerShiftEstimate {
    /// `Z`, possibly underflowing to zero for tiny likelihoods.
    pub fn z(&self) -> f64 {
        self.z_scaled * self.log_scale.exp()
    }

    pub fn ratio(&self) -> Vec<Point2> {
        self.zprime_scaled.iter().map(|v| v / self.z_scaled).collect()
    }
}

/// Evaluates the ratio estimator for one node set.
#[derive(Debug, Clone)]
pub struct RatioEstimator<'a, 'm> {
    problem: FemProblem<'a, 'm>,
    dataset: &'a Dataset,
    observations: Vec<Location>,
    eval: PreparedField,
}

impl<'a, 'm> RatioEstimator<'a, 'm> {
    pub fn new(
        space: &'a Discretization<'m>,
        field: &PerturbationField,
        source: Source,
        dataset: &'a Dataset,
        eval_points: &[Point2],
    ) -> Result<Self, BayesError> {
        let observations = fem::locate_all(space.mesh(), dataset.ref_points())?;
        Ok(Self {
            problem: space.problem(field, source),
            dataset,
            observations,
            eval: field.prepare(eval_points),
        })
    }

    pub fn field(&self) -> &PerturbationField {
        self.problem.field()
    }

    pub fn mesh(&self) -> &'m Mesh {
        self.problem.space().mesh()
    }

    pub fn eval_points(&self) -> &[Point2] {
        self.eval.points()
    }

    /// Forward map `G(y)`: the discrete solution at the reference points.
    pub fn forward(&self, y: &[f64]) -> Result<Vec<f64>, BayesError> {
        let c = self.field().coefficients(y)?;
        let u = self.problem.solve_nodal(&c)?;
        let mesh = self.mesh();
        Ok(self.observations.iter().map(|loc| fem::interpolate(mesh, &u, loc)).collect())
    }

    pub fn log_likelihood_at(&self, y: &[f64]) -> Result<f64, BayesError> {
        log_likelihood(&self.forward(y)?, self.dataset)
    }

    /// Estimates over `count` nodes produced by `point(l, out)`.
    pub fn estimate<P>(&self, count: usize, point: P) -> Result<PerShiftEstimate, BayesError>
    where
        P: Fn(usize, &mut [f64]) + Sync,
    {
        if count == 0 {
            return Err(BayesError::InvalidInput("no cubature nodes".into()));
        }
        let s = self.field().s();
        let loglik: Vec<f64> = (0..count)
            .into_par_iter()
            .map(|l| {
                let mut y = vec![0.0; s];
                point(l, &mut y);
                self.log_likelihood_at(&y)
            })
            .collect::<Result<_, _>>()?;
        let log_scale = loglik.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = loglik.iter().map(|ll| (ll - log_scale).exp()).collect();
        self.accumulate(&weights, log_scale, point)
    }

    fn accumulate<P>(&self, weights: &[f64], log_scale: f64, point: P) -> Result<PerShiftEstimate, BayesError>
    where
        P: Fn(usize, &mut [f64]) + Sync,
    {
        let count = weights.len() as f64;
        let z_scaled = weights.iter().copied().collect::<NeumaierSum>().value() / count;
        let s = self.field().s();
        let indices: Vec<usize> = (0..self.eval.len()).collect();
        let chunks: Vec<Vec<Point2>> = indices
            .par_chunks(256)
            .map(|chunk| {
                let mut acc = vec![(NeumaierSum::new(), NeumaierSum::new()); chunk.len()];
                let mut y = vec![0.0; s];
                for (l, &w) in weights.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    point(l, &mut y);
                    let c = self.field().coefficients(&y)?;
                    for (a, &i) in acc.iter_mut().zip(chunk) {
                        let v = self.eval.map(i, &c);
                        a.0.add(w * v[0]);
                        a.1.add(w * v[1]);
                    }
                }
                Ok(acc
                    .into_iter()
                    .map(|(a, b)| Point2::new(a.value() / count, b.value() / count))
                    .collect())
            })
            .collect::<Result<_, BayesError>>()?;
        Ok(PerShiftEstimate {
            z_scaled,
            log_scale,
            zprime_scaled: chunks.into_iter().flatten().collect(),
        })
    }

    /// Cubature average of `V` at the evaluation points, without likelihood.
    pub fn prior_mean<P>(&self, count: usize, point: P) -> Result<Vec<Point2>, BayesError>
    where
        P: Fn(usize, &mut [f64]) + Sync,
    {
        let est = self.accumulate(&vec![1.0; count], 0.0, point)?;
        Ok(est.ratio())
    }

    /// Estimate over shift `r` of a lattice rule.
    pub fn lattice_shift(&self, rule: &LatticeRule, r: usize) -> Result<PerShiftEstimate, BayesError> {
        if rule.s() != self.field().s() {
            return Err(BayesError::DimensionMismatch { expected: self.field().s(), got: rule.s() });
        }
        if r >= rule.num_shifts() {
            return Err(BayesError::InvalidInput(format!("shift {r} of {}", rule.num_shifts())));
        }
        self.estimate(rule.n(), |l, out| rule.point_into(r, l, out))
    }

    /// Estimate over batch `batch` of `size` i.i.d. uniform samples.
    pub fn mc_batch(&self, seed: u64, batch: usize, size: usize) -> Result<PerShiftEstimate, BayesError> {
        let s = self.field().s() as u64;
        self.estimate(size, |l, out| uniform_parameter(seed, batch as u64, l as u64 * s, out))
    }
}

/// Cubature average of the forward map `G(y)` at located points over `count`
/// nodes produced by `point(l, out)`.
pub fn mean_forward<P>(
    problem: &FemProblem<'_, '_>,
    locations: &[Location],
    count: usize,
    point: P,
) -> Result<Vec<f64>, BayesError>
where
    P: Fn(usize, &mut [f64]) + Sync,
{
    let s = problem.field().s();
    let mesh = problem.space().mesh();
    let values: Vec<Vec<f64>> = (0..count)
        .into_par_iter()
        .map(|l| {
            let mut y = vec![0.0; s];
            point(l, &mut y);
            let u = problem.solve_nodal(&problem.field().coefficients(&y)?)?;
            Ok(locations.iter().map(|loc| fem::interpolate(mesh, &u, loc)).collect())
        })
        .collect::<Result<_, BayesError>>()?;
    Ok((0..locations.len())
        .map(|i| values.iter().map(|v| v[i]).collect::<NeumaierSum>().value() / count as f64)
        .collect())
}

/// Per-shift estimate with the mesh nodes as evaluation points.
#[allow(clippy::too_many_arguments)]
pub fn ratio_estimator(
    field: &PerturbationField,
    f: &Source,
    mesh: &Mesh,
    dataset: &Dataset,
    rule: &LatticeRule,
    shift_index: usize,
    eval_points: Option<&[Point2]>,
) -> Result<PerShiftEstimate, BayesError> {
    let space = Discretization::new(mesh);
    let eval = eval_points.unwrap_or(mesh.nodes());
    let est = RatioEstimator::new(&space, field, f.clone(), dataset, eval)?;
    est.lattice_shift(rule, shift_index)
}

/// `R` Monte Carlo batches of `n_total / R` samples each.
#[allow(clippy::too_many_arguments)]
pub fn mc_estimator(
    field: &PerturbationField,
    f: &Source,
    mesh: &Mesh,
    dataset: &Dataset,
    n_total: usize,
    seed: u64,
    batches: usize,
    eval_points: Option<&[Point2]>,
) -> Result<Vec<PerShiftEstimate>, BayesError> {
    if batches == 0 || !n_total.is_multiple_of(batches) {
        return Err(BayesError::InvalidInput(format!(
            "n_total = {n_total} is not divisible into {batches} batches"
        )));
    }
    let space = Discretization::new(mesh);
    let eval = eval_points.unwrap_or(mesh.nodes());
    let est = RatioEstimator::new(&space, field, f.clone(), dataset, eval)?;
    (0..batches).map(|b| est.mc_batch(seed, b, n_total / batches)).collect()
}

/// Posterior mean as the average of per-shift ratios.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorEstimate {
    pub per_shift_z_scaled: Vec<f64>,
    pub per_shift_log_scale: Vec<f64>,
    pub per_shift_ratios: Vec<Vec<Point2>>,
    pub mean_field: Vec<Point2>,
}

impl PosteriorEstimate {
    pub fn num_shifts(&self) -> usize {
        self.per_shift_ratios.len()
    }
}

pub fn posterior_mean(estimates: &[PerShiftEstimate]) -> Result<PosteriorEstimate, BayesError> {
    if estimates.is_empty() {
        return Err(BayesError::TooFewShifts { needed: 1, got: 0 });
    }
    for (shift, e) in estimates.iter().enumerate() {
        if !(e.z_scaled > 0.0) {
            return Err(BayesError::NonPositiveZ { shift });
        }
    }
    let m = estimates[0].zprime_scaled.len();
    if let Some(e) = estimates.iter().find(|e| e.zprime_scaled.len() != m) {
        return Err(BayesError::DimensionMismatch { expected: m, got: e.zprime_scaled.len() });
    }
    let ratios: Vec<Vec<Point2>> = estimates.iter().map(PerShiftEstimate::ratio).collect();
    let mean_field = field_mean(&ratios, m);
    Ok(PosteriorEstimate {
        per_shift_z_scaled: estimates.iter().map(|e| e.z_scaled).collect(),
        per_shift_log_scale: estimates.iter().map(|e| e.log_scale).collect(),
        per_shift_ratios: ratios,
        mean_field,
    })
}

/// Pointwise mean of the first `m` entries of several fields, accumulated as
/// deviations from the first field so identical inputs are reproduced exactly.
fn field_mean(fields: &[Vec<Point2>], m: usize) -> Vec<Point2> {
    let r = fields.len() as f64;
    let first = &fields[0];
    (0..m)
        .map(|i| {
            let a: NeumaierSum = fields.iter().map(|q| q[i][0] - first[i][0]).collect();
            let b: NeumaierSum = fields.iter().map(|q| q[i][1] - first[i][1]).collect();
            first[i] + Point2::new(a.value() / r, b.value() / r)
        })
        .collect()
}

/// `||g||^2_{L2}` of the P1 interpolant of nodal vectors `g`.
pub fn l2_norm_squared(mesh: &Mesh, g: &[Point2]) -> f64 {
    let a: Vec<f64> = g.iter().map(|v| v[0]).collect();
    let b: Vec<f64> = g.iter().map(|v| v[1]).collect();
    fem::p1_norm_squared(mesh, &a) + fem::p1_norm_squared(mesh, &b)
}

/// Root mean square error over shifts. Against `reference`:
/// `sqrt(1/R sum_r ||q_r - ref||^2)`; otherwise the standard error
/// `sqrt(1/(R(R-1)) sum_r ||q_r - mean||^2)`. Only the first
/// `mesh.num_nodes()` entries of each field are used.
pub fn rms_error(mesh: &Mesh, ratios: &[Vec<Point2>], reference: Option<&[Point2]>) -> Result<f64, BayesError> {
    let r = ratios.len();
    let nodes = mesh.num_nodes();
    if let Some(q) = ratios.iter().find(|q| q.len() < nodes) {
        return Err(BayesError::DimensionMismatch { expected: nodes, got: q.len() });
    }
    let diff_norm = |q: &[Point2], c: &[Point2]| -> f64 {
        let d: Vec<Point2> = q[..nodes].iter().zip(&c[..nodes]).map(|(a, b)| a - b).collect();
        l2_norm_squared(mesh, &d)
    };
    match reference {
        Some(reference) => {
            if r == 0 {
                return Err(BayesError::TooFewShifts { needed: 1, got: 0 });
            }
            if reference.len() < nodes {
                return Err(BayesError::DimensionMismatch { expected: nodes, got: reference.len() });
            }
            let total: NeumaierSum = ratios.iter().map(|q| diff_norm(q, reference)).collect();
            Ok((total.value() / r as f64).sqrt())
        }
        None => {
            if r < 2 {
                return Err(BayesError::TooFewShifts { needed: 2, got: r });
            }
            let mean = field_mean(ratios, nodes);
            let total: NeumaierSum = ratios.iter().map(|q| diff_norm(q, &mean)).collect();
            Ok((total.value() / (r * (r - 1)) as f64).sqrt())
        }
    }
}
