//! Randomly shifted rank-1 lattice rules with POD weights.
//!
//! The shift-averaged worst-case error of a rank-1 rule in the weighted
//! Sobolev space of dominating mixed first-order smoothness is
//!
//! ```text
//! e^2(z) = sum_{u != {}} gamma_u (1/n) sum_{k=0}^{n-1} prod_{j in u} B2({k z_j / n})
//! ```
//!
//! with `B2(t) = t^2 - t + 1/6`. For POD weights `gamma_u = Gamma_|u| prod beta_j`
//! the inner sum over subsets collapses to an order recursion per node.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::field::GevreyProfile;
use crate::random::uniform_block;
use crate::summation::NeumaierSum;

/// Unit-disk Poincaré constant `1 / j_{0,1}`.
pub const DISK_POINCARE_CONSTANT: f64 = 1.0 / 2.404_825_557_695_773;

/// Relative slack under which two CBC candidates count as tied.
pub const CBC_TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("p = {p} with beta = {beta} selects no admissible lambda")]
    InvalidRegime { p: f64, beta: f64 },
    #[error("invalid lattice input: {0}")]
    InvalidInput(String),
    #[error("order factor Gamma_{0} overflows f64")]
    Overflow(usize),
    #[error("weighted sum diverges: {0}")]
    Divergence(String),
    #[error("line {line}: cannot parse {text:?}")]
    Parse { line: usize, text: String },
    #[error("generating vector has {available} entries, {requested} requested")]
    TooShort { available: usize, requested: usize },
    #[error("{0}")]
    Io(String),
}

/// Bernoulli polynomial `B2(t) = t^2 - t + 1/6`.
#[inline]
pub fn bernoulli2(t: f64) -> f64 {
    t * t - t + 1.0 / 6.0
}

/// Riemann zeta for `x > 1`: a compensated partial sum over `10^6` terms plus
/// the Euler-Maclaurin tail.
pub fn zeta(x: f64) -> f64 {
    assert!(x > 1.0, "zeta needs x > 1");
    const N: usize = 1_000_000;
    let mut acc = NeumaierSum::new();
    for k in (1..N).rev() {
        acc.add((k as f64).powf(-x));
    }
    let n = N as f64;
    let tail = n.powf(1.0 - x) / (x - 1.0) + 0.5 * n.powf(-x) + x / 12.0 * n.powf(-x - 1.0)
        - x * (x + 1.0) * (x + 2.0) / 720.0 * n.powf(-x - 3.0);
    acc.add(tail);
    acc.value()
}

/// The constant `2 zeta(2 lambda) / (2 pi^2)^lambda` of the error bound.
pub fn bound_constant(lambda: f64) -> f64 {
    2.0 * zeta(2.0 * lambda) / (2.0 * std::f64::consts::PI.powi(2)).powf(lambda)
}

/// Lambda minimizing the weight-dependent constant for summability `p`.
pub fn choose_lambda(p: f64, beta: f64, alpha: f64) -> Result<f64, LatticeError> {
    if !(p > 0.0 && p < 1.0) || !(beta >= 1.0) || !(alpha > 0.0 && alpha < 0.5) {
        return Err(LatticeError::InvalidInput(format!(
            "need p in (0, 1), beta >= 1, alpha in (0, 1/2); got p = {p}, beta = {beta}, alpha = {alpha}"
        )));
    }
    let inv_beta = 1.0 / beta;
    if p > 2.0 / 3.0 && p < inv_beta {
        Ok(p / (2.0 - p))
    } else if p <= (2.0f64 / 3.0).min(inv_beta) && p != inv_beta {
        Ok(1.0 / (2.0 - 2.0 * alpha))
    } else {
        Err(LatticeError::InvalidRegime { p, beta })
    }
}

/// `ln(n!)`.
fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// Bound constants of the regularity and cubature estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantsLedger {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub c6: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub tau_min: f64,
    pub poincare: f64,
    pub domain_area: f64,
}

impl ConstantsLedger {
    /// Constants for a 2D reference domain of area `domain_area` with Poincaré
    /// constant `poincare`, `k` observations and noise covariance whose
    /// smallest eigenvalue is `smallest_noise_eigenvalue`.
    pub fn new(
        profile: &GevreyProfile,
        sigma_min: f64,
        sigma_max: f64,
        smallest_noise_eigenvalue: f64,
        k: usize,
        poincare: f64,
        domain_area: f64,
    ) -> Result<Self, LatticeError> {
        if !(sigma_min > 0.0 && sigma_min <= sigma_max) || !(smallest_noise_eigenvalue > 0.0) {
            return Err(LatticeError::InvalidInput(format!(
                "need 0 < sigma_min <= sigma_max and a positive noise eigenvalue \
                 (got {sigma_min}, {sigma_max}, {smallest_noise_eigenvalue})"
            )));
        }
        let d = 2.0f64;
        let beta = profile.beta;
        let c = profile.c;
        let two_beta = 2f64.powf(beta);
        let fact = (ln_factorial(4) * beta).exp(); // ((d^2)!)^beta
        let ratio = (sigma_max / sigma_min).powf(d);
        let c1 = 1.0 + ratio * sigma_max.powi(2) * poincare * domain_area.sqrt() * c / two_beta;
        let rho_norm = profile
            .rho
            .as_ref()
            .map(|r| r.iter().map(|v| v.abs().powf(1.0 / beta)).sum::<f64>().powf(beta))
            .unwrap_or(0.0);
        let t1 = ratio / (sigma_min.powi(2) * fact);
        let t2 = 2.0 * (two_beta * c / sigma_min).powi(3);
        let t3 = (c1 - 1.0) / (sigma_max.powi(2) * fact);
        let t4 = (two_beta * c).powi(2) / sigma_min * rho_norm.max(1.0);
        let c2 = t1.max(t2).max(t3).max(t4).powi(2) * fact * 2f64.powf(beta * (d * d + 1.0) + 1.0);
        let tau_min = smallest_noise_eigenvalue.min(1.0);
        let c3 = 3.47f64.powi(k as i32) / two_beta;
        let c4 = two_beta * c1 * c2 / tau_min.sqrt();
        Ok(Self {
            c1,
            c2,
            c3,
            c4,
            c5: c * c3,
            c6: c4.max(1.0),
            sigma_min,
            sigma_max,
            tau_min,
            poincare,
            domain_area,
        })
    }
}

/// Product-and-order-dependent weights `gamma_u = Gamma_|u| prod_{j in u} beta_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PodWeights {
    log_order: Vec<f64>,
    coordinate: Vec<f64>,
    lambda: f64,
    alpha: f64,
    beta_gevrey: f64,
}

impl PodWeights {
    /// Weights from explicit factors; `order[0]` must be 1.
    pub fn from_factors(order: &[f64], coordinate: Vec<f64>, lambda: f64) -> Result<Self, LatticeError> {
        if order.len() != coordinate.len() + 1 || order.first() != Some(&1.0) {
            return Err(LatticeError::InvalidInput(
                "need Gamma_0 = 1 and one order factor per coordinate".into(),
            ));
        }
        if order.iter().chain(&coordinate).any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(LatticeError::InvalidInput("weight factors must be finite and positive".into()));
        }
        Ok(Self {
            log_order: order.iter().map(|g| g.ln()).collect(),
            coordinate,
            lambda,
            alpha: f64::NAN,
            beta_gevrey: f64::NAN,
        })
    }

    pub fn s_max(&self) -> usize {
        self.coordinate.len()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta_gevrey(&self) -> f64 {
        self.beta_gevrey
    }

    pub fn log_order_factor(&self, l: usize) -> f64 {
        self.log_order[l]
    }

    /// `Gamma_l`, failing if it is not representable.
    pub fn order_factor(&self, l: usize) -> Result<f64, LatticeError> {
        let g = self.log_order[l].exp();
        if g.is_finite() {
            Ok(g)
        } else {
            Err(LatticeError::Overflow(l))
        }
    }

    /// `Gamma_l / Gamma_{l-1}` for `l >= 1`.
    pub fn order_ratio(&self, l: usize) -> f64 {
        (self.log_order[l] - self.log_order[l - 1]).exp()
    }

    /// `beta_j` for `j >= 1`.
    pub fn coordinate_factor(&self, j: usize) -> f64 {
        self.coordinate[j - 1]
    }

    pub fn coordinate_factors(&self) -> &[f64] {
        &self.coordinate
    }

    /// `gamma_u` for a set of 1-based coordinates.
    pub fn gamma(&self, u: &[usize]) -> f64 {
        let log: f64 = self.log_order[u.len()] + u.iter().map(|&j| self.coordinate[j - 1].ln()).sum::<f64>();
        log.exp()
    }

    /// The first `s` coordinates only.
    pub fn truncated(&self, s: usize) -> Self {
        let s = s.min(self.s_max());
        Self {
            log_order: self.log_order[..=s].to_vec(),
            coordinate: self.coordinate[..s].to_vec(),
            ..self.clone()
        }
    }
}

/// Weights minimizing the cubature constant for a Gevrey profile:
/// `Gamma_l = ((l + 1)!)^{2 beta / (1 + lambda)}` and
/// `beta_j = (c6 b_j / sqrt(rho(lambda)))^{2 / (1 + lambda)}`, with `c6 = 1`
/// unless `include_c6` is set.
pub fn pod_weights(
    profile: &GevreyProfile,
    lambda: f64,
    alpha: f64,
    s_max: usize,
    include_c6: bool,
    ledger: Option<&ConstantsLedger>,
) -> Result<PodWeights, LatticeError> {
    if !(lambda > 0.5 && lambda <= 1.0) {
        return Err(LatticeError::InvalidInput(format!("lambda = {lambda} outside (1/2, 1]")));
    }
    let c6 = if include_c6 {
        ledger
            .ok_or_else(|| LatticeError::InvalidInput("include_c6 needs a constants ledger".into()))?
            .c6
    } else {
        1.0
    };
    let exponent = 2.0 / (1.0 + lambda);
    let log_order = (0..=s_max)
        .map(|l| profile.beta * exponent * ln_factorial(l + 1))
        .collect();
    let scale = c6 / bound_constant(lambda).sqrt();
    let coordinate: Vec<f64> = (1..=s_max).map(|j| (scale * profile.b.get(j)).powf(exponent)).collect();
    if coordinate.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(LatticeError::InvalidInput("coordinate weights must be finite and positive".into()));
    }
    Ok(PodWeights {
        log_order,
        coordinate,
        lambda,
        alpha,
        beta_gevrey: profile.beta,
    })
}

/// `omega[m] = B2(m / n)` for `m = 0..n`, symmetrized so that
/// `omega[m] == omega[n - m]` bit-exactly.
fn omega_table(n: usize) -> Vec<f64> {
    (0..n).map(|m| bernoulli2(m.min(n - m) as f64 / n as f64)).collect()
}

/// Per-node order sums `r_l(k) = Gamma_l p_l(k)` after `d` coordinates, stored
/// row-major with stride `s + 1`.
struct OrderState {
    n: usize,
    stride: usize,
    r: Vec<f64>,
    d: usize,
}

impl OrderState {
    fn new(n: usize, s: usize) -> Self {
        let stride = s + 1;
        let mut r = vec![0.0; n * stride];
        for k in 0..n {
            r[k * stride] = 1.0;
        }
        Self { n, stride, r, d: 0 }
    }

    /// Adds coordinate `d + 1` with generator `z` to every node.
    fn push(&mut self, z: usize, omega: &[f64], weights: &PodWeights) {
        let j = self.d + 1;
        let bj = weights.coordinate_factor(j);
        let ratios: Vec<f64> = (1..=j).map(|l| weights.order_ratio(l) * bj).collect();
        let mut m = 0;
        for k in 0..self.n {
            let w = omega[m];
            m += z;
            if m >= self.n {
                m -= self.n;
            }
            let row = &mut self.r[k * self.stride..(k + 1) * self.stride];
            for l in (1..=j).rev() {
                row[l] += ratios[l - 1] * w * row[l - 1];
            }
        }
        self.d = j;
    }

    fn squared_error(&self) -> f64 {
        let mut acc = NeumaierSum::new();
        for k in 0..self.n {
            let row = &self.r[k * self.stride..k * self.stride + self.d + 1];
            acc.add(row[1..].iter().sum::<f64>());
        }
        acc.value() / self.n as f64
    }
}

fn validate_rule(n: usize, z: &[usize], weights: &PodWeights) -> Result<(), LatticeError> {
    if n < 2 {
        return Err(LatticeError::InvalidInput(format!("n = {n} must be at least 2")));
    }
    if z.len() > weights.s_max() {
        return Err(LatticeError::InvalidInput(format!(
            "generating vector of length {} exceeds weight dimension {}",
            z.len(),
            weights.s_max()
        )));
    }
    if let Some(bad) = z.iter().find(|&&v| v == 0 || v >= n) {
        return Err(LatticeError::InvalidInput(format!("generator entry {bad} outside 1..{n}")));
    }
    Ok(())
}

/// Shift-averaged worst-case error `e(z)`.
pub fn shift_averaged_wce(z: &[usize], n: usize, weights: &PodWeights) -> Result<f64, LatticeError> {
    validate_rule(n, z, weights)?;
    let omega = omega_table(n);
    let mut state = OrderState::new(n, z.len());
    for &zj in z {
        state.push(zj, &omega, weights);
    }
    Ok(state.squared_error().max(0.0).sqrt())
}

/// Component-by-component construction. Each coordinate takes the candidate
/// with the smallest squared error; candidates within a relative
/// [`CBC_TIE_TOLERANCE`] of the minimum are tied and the smallest one wins.
/// Since `z` and `n - z` give the same error only `1..=(n-1)/2` is scanned.
pub fn cbc_construct(n: usize, s: usize, weights: &PodWeights) -> Result<Vec<usize>, LatticeError> {
    if !is_prime(n as u64) {
        return Err(LatticeError::InvalidInput(format!("n = {n} is not prime")));
    }
    if s == 0 || s > weights.s_max() {
        return Err(LatticeError::InvalidInput(format!(
            "dimension {s} outside 1..={}",
            weights.s_max()
        )));
    }
    let omega = omega_table(n);
    let mut state = OrderState::new(n, s);
    let mut z = Vec::with_capacity(s);
    let candidates: Vec<usize> = (1..=((n - 1) / 2).max(1)).collect();
    for d in 0..s {
        let j = d + 1;
        let bj = weights.coordinate_factor(j);
        // q(k) = sum_l Gamma_l/Gamma_{l-1} beta_j r_{l-1}(k): the increment of
        // node k per unit omega.
        let q: Vec<f64> = (0..n)
            .map(|k| {
                let row = &state.r[k * state.stride..];
                (1..=j).map(|l| weights.order_ratio(l) * bj * row[l - 1]).sum()
            })
            .collect();
        let costs: Vec<f64> = candidates
            .par_iter()
            .map(|&c| {
                let mut acc = 0.0;
                let mut m = 0;
                for qk in &q {
                    acc += omega[m] * qk;
                    m += c;
                    if m >= n {
                        m -= n;
                    }
                }
                acc
            })
            .collect();
        let min = costs.iter().copied().fold(f64::INFINITY, f64::min);
        let threshold = min + CBC_TIE_TOLERANCE * min.abs();
        let pick = candidates
            .iter()
            .zip(&costs)
            .find(|(_, &c)| c <= threshold)
            .map(|(&c, _)| c)
            .expect("at least one candidate");
        state.push(pick, &omega, weights);
        z.push(pick);
    }
    Ok(z)
}

/// Fitted decay exponent of `values[j]` against `j` over the upper half.
fn tail_exponent(values: &[f64]) -> f64 {
    let start = values.len() / 2;
    let pts: Vec<(f64, f64)> = (start..values.len())
        .map(|i| (((i + 1) as f64).ln(), values[i].ln()))
        .collect();
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Worst-case error bound
/// `((1/(n-1)) sum_{u != {}} gamma_u^lambda rho(lambda)^|u|)^{1/(2 lambda)}`
/// over all coordinates of `weights`.
pub fn error_bound(weights: &PodWeights, n: usize, lambda: f64) -> Result<f64, LatticeError> {
    if n < 3 {
        return Err(LatticeError::InvalidInput(format!("n = {n} must be at least 3")));
    }
    if !(lambda > 0.5 && lambda <= 1.0) {
        return Err(LatticeError::InvalidInput(format!("lambda = {lambda} outside (1/2, 1]")));
    }
    let s = weights.s_max();
    let rho = bound_constant(lambda);
    let terms: Vec<f64> = weights.coordinate_factors().iter().map(|b| rho * b.powf(lambda)).collect();
    if s >= 4 && tail_exponent(&terms) >= -1.0 {
        return Err(LatticeError::Divergence(format!(
            "coordinate terms decay like j^{:.3}, not summable",
            tail_exponent(&terms)
        )));
    }
    // e[l] = Gamma_l^lambda * (elementary symmetric polynomial of degree l)
    let mut e = vec![0.0; s + 1];
    e[0] = 1.0;
    for (i, t) in terms.iter().enumerate() {
        let j = i + 1;
        for l in (1..=j).rev() {
            e[l] += weights.order_ratio(l).powf(lambda) * t * e[l - 1];
        }
    }
    let total: f64 = e[1..].iter().sum();
    let bound = (total / (n - 1) as f64).powf(1.0 / (2.0 * lambda));
    if !bound.is_finite() {
        return Err(LatticeError::Divergence("weighted sum is not finite".into()));
    }
    Ok(bound)
}

pub fn is_prime(m: u64) -> bool {
    if m < 2 {
        return false;
    }
    if m < 4 {
        return true;
    }
    if m.is_multiple_of(2) {
        return false;
    }
    let mut d = 3;
    while d * d <= m {
        if m.is_multiple_of(d) {
            return false;
        }
        d += 2;
    }
    true
}

/// Smallest prime `>= m`.
pub fn next_prime(m: u64) -> u64 {
    let mut c = m.max(2);
    while !is_prime(c) {
        c += 1;
    }
    c
}

/// A rank-1 lattice rule with `R` random shifts.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeRule {
    n: usize,
    z: Vec<usize>,
    shifts: Vec<Vec<f64>>,
    seed: u64,
}

impl LatticeRule {
    /// Rule with `shifts` shifts drawn from the counter-based generator keyed by
    /// `(seed, shift index, coordinate)`.
    pub fn new(n: usize, z: Vec<usize>, shifts: usize, seed: u64) -> Result<Self, LatticeError> {
        let s = z.len();
        let draws = (0..shifts)
            .map(|r| {
                let mut d = vec![0.0; s];
                uniform_block(seed, r as u64, 0, &mut d);
                d
            })
            .collect();
        Self::with_shifts(n, z, draws, seed)
    }

    /// Rule with explicit shifts; each entry is reduced modulo 1.
    pub fn with_shifts(n: usize, z: Vec<usize>, shifts: Vec<Vec<f64>>, seed: u64) -> Result<Self, LatticeError> {
        if !is_prime(n as u64) {
            return Err(LatticeError::InvalidInput(format!("n = {n} is not prime")));
        }
        if let Some(bad) = z.iter().find(|&&v| v == 0 || v >= n) {
            return Err(LatticeError::InvalidInput(format!("generator entry {bad} outside 1..{n}")));
        }
        if shifts.iter().any(|d| d.len() != z.len()) {
            return Err(LatticeError::InvalidInput("shift dimension differs from generator".into()));
        }
        let shifts = shifts
            .into_iter()
            .map(|d| d.into_iter().map(|v| v.rem_euclid(1.0)).collect())
            .collect();
        Ok(Self { n, z, shifts, seed })
    }

    /// Single-node rule, used as a degenerate test case.
    pub fn single_point(shift: Vec<f64>) -> Self {
        let z = vec![1; shift.len()];
        Self {
            n: 1,
            z,
            shifts: vec![shift.into_iter().map(|v| v.rem_euclid(1.0)).collect()],
            seed: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn s(&self) -> usize {
        self.z.len()
    }

    pub fn z(&self) -> &[usize] {
        &self.z
    }

    pub fn num_shifts(&self) -> usize {
        self.shifts.len()
    }

    pub fn shift(&self, r: usize) -> &[f64] {
        &self.shifts[r]
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Node `l` of shift `r`, in `[-1/2, 1/2)^s`.
    pub fn point_into(&self, r: usize, l: usize, out: &mut [f64]) {
        let shift = &self.shifts[r];
        let n = self.n as u64;
        for ((o, &zj), &dj) in out.iter_mut().zip(&self.z).zip(shift) {
            let m = (l as u64 * zj as u64) % n;
            let mut t = m as f64 / self.n as f64 + dj;
            if t >= 1.0 {
                t -= 1.0;
            }
            *o = t - 0.5;
        }
    }

    /// All nodes of shift `r`.
    pub fn generate_points(&self, r: usize) -> impl Iterator<Item = Vec<f64>> + '_ {
        assert!(r < self.shifts.len(), "shift index {r} out of range");
        (0..self.n).map(move |l| {
            let mut p = vec![0.0; self.s()];
            self.point_into(r, l, &mut p);
            p
        })
    }
}

/// Reads a generating vector: one integer per line, or two columns
/// `index value` from which the second is taken. Blank and `#` lines are
/// skipped.
pub fn parse_generating_vector(text: &str, s: usize) -> Result<Vec<usize>, LatticeError> {
    let mut z = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let value = match fields.as_slice() {
            [v] | [_, v] => v.parse::<usize>().ok(),
            _ => None,
        };
        match value {
            Some(v) => z.push(v),
            None => return Err(LatticeError::Parse { line: i + 1, text: raw.to_string() }),
        }
        if z.len() == s {
            return Ok(z);
        }
    }
    Err(LatticeError::TooShort { available: z.len(), requested: s })
}

pub fn load_generating_vector(path: &Path, s: usize) -> Result<Vec<usize>, LatticeError> {
    let text = fs::read_to_string(path).map_err(|e| LatticeError::Io(format!("{}: {e}", path.display())))?;
    parse_generating_vector(&text, s)
}

/// Two-column `index value` form.
pub fn format_generating_vector(z: &[usize]) -> String {
    let mut out = String::new();
    for (j, v) in z.iter().enumerate() {
        writeln!(out, "{} {}", j + 1, v).expect("writing to a string");
    }
    out
}

pub fn write_generating_vector(path: &Path, z: &[usize]) -> Result<(), LatticeError> {
    fs::write(path, format_generating_vector(z)).map_err(|e| LatticeError::Io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Sensitivity;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn preset(s: usize, kind: usize) -> PodWeights {
        let order: Vec<f64> = (0..=s)
            .map(|l| match kind {
                0 => 1.0,
                1 => (1..=l + 1).product::<usize>() as f64,
                _ => 0.5f64.powi(l as i32),
            })
            .collect();
        let coord = (1..=s)
            .map(|j| match kind {
                0 => 1.0,
                1 => 0.9 / (j * j) as f64,
                _ => 2.0 / j as f64,
            })
            .collect();
        PodWeights::from_factors(&order, coord, 1.0).unwrap()
    }

    /// Direct double sum over subsets and nodes.
    fn brute_force_wce2(z: &[usize], n: usize, w: &PodWeights) -> f64 {
        let s = z.len();
        let mut total = 0.0;
        for mask in 1u32..(1 << s) {
            let u: Vec<usize> = (0..s).filter(|j| mask & (1 << j) != 0).map(|j| j + 1).collect();
            let mut inner = 0.0;
            for k in 0..n {
                let mut prod = 1.0;
                for &j in &u {
                    let t = ((k * z[j - 1]) % n) as f64 / n as f64;
                    prod *= bernoulli2(t);
                }
                inner += prod;
            }
            total += w.gamma(&u) * inner / n as f64;
        }
        total
    }

    #[test]
    fn zeta_values() {
        let pi2 = std::f64::consts::PI.powi(2);
        assert!((zeta(2.0) - pi2 / 6.0).abs() <= 1e-12);
        assert!((zeta(4.0) - pi2 * pi2 / 90.0).abs() <= 1e-12);
        assert!((zeta(2.1) - 1.560_216_533_503_362).abs() <= 1e-12);
        assert!((zeta(1.1) - 10.584_448_464_950_801).abs() <= 1e-11);
    }

    #[test]
    fn lambda_branches() {
        assert_relative_eq!(choose_lambda(0.49, 2.0, 0.05).unwrap(), 1.0 / 1.9, epsilon = 1e-15);
        assert_relative_eq!(choose_lambda(0.8, 1.1, 0.2).unwrap(), 2.0 / 3.0, epsilon = 1e-15);
        assert!(matches!(choose_lambda(0.55, 2.0, 0.05), Err(LatticeError::InvalidRegime { .. })));
        assert!(matches!(choose_lambda(0.5, 2.0, 0.05), Err(LatticeError::InvalidRegime { .. })));
        assert!(choose_lambda(0.3, 1.0, 0.5).is_err());
        assert!(choose_lambda(0.3, 1.0, 0.499_999_999).unwrap() < 1.0 + 1e-6);
    }

    #[test]
    fn pod_weights_formula() {
        let profile = GevreyProfile::new(2.0, Sensitivity::Explicit(vec![1.0, 2f64.powf(-2.1)]), 0.49, 1.0).unwrap();
        let w = pod_weights(&profile, 0.6, 0.05, 2, false, None).unwrap();
        assert_eq!(w.gamma(&[]), 1.0);
        assert_relative_eq!(w.gamma(&[1, 2]), 6.545_845_989_297_116, max_relative = 1e-12);
        assert_relative_eq!(w.gamma(&[1]), 3.827_989_051_682_863_5, max_relative = 1e-12);
        let w1 = pod_weights(&profile, 1.0, 0.05, 2, false, None).unwrap();
        assert_relative_eq!(w1.coordinate_factor(2), 6f64.sqrt() * 2f64.powf(-2.1), max_relative = 1e-12);
    }

    #[test]
    fn order_factor_overflow_is_reported() {
        let profile = GevreyProfile::new(2.0, Sensitivity::PowerLaw { scale: 1.0, decay: 2.1 }, 0.49, 1.0).unwrap();
        let w = pod_weights(&profile, 1.0 / 1.9, 0.05, 150, false, None).unwrap();
        assert!(w.order_factor(10).is_ok());
        assert_eq!(w.order_factor(150), Err(LatticeError::Overflow(150)));
        // the error itself stays finite since only ratios enter
        let e = shift_averaged_wce(&vec![1; 150], 7, &w).unwrap();
        assert!(e.is_finite());
    }

    #[test]
    fn two_node_rule() {
        let w = PodWeights::from_factors(&[1.0, 1.0], vec![3.0], 1.0).unwrap();
        let e = shift_averaged_wce(&[1], 2, &w).unwrap();
        // (B2(0) + B2(1/2)) / 2 = (1/6 - 1/12) / 2
        assert_relative_eq!(e * e, 3.0 / 24.0, epsilon = 1e-15);
        let tiny = PodWeights::from_factors(&[1.0, 1e-300, 1e-300], vec![1e-300, 1e-300], 1.0).unwrap();
        assert!(shift_averaged_wce(&[1, 1], 5, &tiny).unwrap() < 1e-149);
    }

    #[test]
    fn recursion_matches_subset_sum() {
        for kind in 0..3 {
            let w = preset(3, kind);
            for n in [2usize, 3, 5, 7, 11, 13] {
                for z in [[1usize, 1, 1], [1, 2, 3], [1, n / 2 + n % 2, n - 1]] {
                    if z.iter().any(|&v| v == 0 || v >= n) {
                        continue;
                    }
                    let e = shift_averaged_wce(&z, n, &w).unwrap();
                    let exact = brute_force_wce2(&z, n, &w);
                    assert!((e * e - exact).abs() <= 1e-12 * exact.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn one_dimensional_cbc_picks_one() {
        for n in [2, 3, 5, 67] {
            assert_eq!(cbc_construct(n, 1, &preset(1, 1)).unwrap(), vec![1]);
        }
        assert!(cbc_construct(9, 1, &preset(1, 1)).is_err());
    }

    #[test]
    fn error_bound_single_coordinate() {
        let w = PodWeights::from_factors(&[1.0, 1.0], vec![0.7], 1.0).unwrap();
        let b = error_bound(&w, 11, 1.0).unwrap();
        assert_relative_eq!(b, (0.7f64 / 60.0).sqrt(), max_relative = 1e-12);
        assert!(error_bound(&w, 13, 1.0).unwrap() < b);
    }

    #[test]
    fn error_bound_default_fixture() {
        let profile = GevreyProfile::new(2.0, Sensitivity::PowerLaw { scale: 1.0, decay: 2.1 }, 0.49, 1.0).unwrap();
        let lambda = 1.0 / 1.9;
        let w = pod_weights(&profile, lambda, 0.05, 20, false, None).unwrap();
        assert_relative_eq!(error_bound(&w, 67, lambda).unwrap(), 147_019_728_402.927_06, max_relative = 1e-10);
    }

    #[test]
    fn non_summable_weights_diverge() {
        let w = PodWeights::from_factors(&[1.0; 9], vec![1.0; 8], 1.0).unwrap();
        assert!(matches!(error_bound(&w, 67, 1.0), Err(LatticeError::Divergence(_))));
    }

    #[test]
    fn primes() {
        assert_eq!(next_prime(67), 67);
        assert_eq!(next_prime(68), 71);
        assert_eq!(next_prime(128_020), 128_021);
        assert!(is_prime(128_021));
        assert_eq!(next_prime(0), 2);
    }

    #[test]
    fn points_small_cases() {
        let rule = LatticeRule::with_shifts(2, vec![1], vec![vec![0.0]], 0).unwrap();
        let pts: Vec<Vec<f64>> = rule.generate_points(0).collect();
        assert_eq!(pts, vec![vec![-0.5], vec![0.0]]);
        let rule = LatticeRule::with_shifts(5, vec![2], vec![vec![0.0]], 0).unwrap();
        let mut first: Vec<f64> = rule.generate_points(0).map(|p| p[0] + 0.5).collect();
        first.sort_by(f64::total_cmp);
        assert_eq!(first, vec![0.0, 0.2, 0.4, 0.6, 0.8]);
    }

    #[test]
    fn shift_periodicity() {
        let a = LatticeRule::with_shifts(7, vec![1, 3], vec![vec![0.25, 0.375]], 0).unwrap();
        let b = LatticeRule::with_shifts(7, vec![1, 3], vec![vec![1.25, 1.375]], 0).unwrap();
        assert!(a.generate_points(0).eq(b.generate_points(0)));
    }

    #[test]
    fn lattice_is_closed_under_addition() {
        for n in [2usize, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31] {
            let z = vec![1, (n / 3).max(1), n - 1];
            let rule = LatticeRule::with_shifts(n, z, vec![vec![0.0; 3]], 0).unwrap();
            let pts: Vec<Vec<usize>> = rule
                .generate_points(0)
                .map(|p| p.iter().map(|v| ((v + 0.5) * n as f64).round() as usize % n).collect())
                .collect();
            for a in &pts {
                for b in &pts {
                    let sum: Vec<usize> = a.iter().zip(b).map(|(x, y)| (x + y) % n).collect();
                    assert!(pts.contains(&sum));
                }
            }
        }
    }

    #[test]
    fn generating_vector_files() {
        assert_eq!(parse_generating_vector("1 3600\n2 23", 2).unwrap(), vec![3600, 23]);
        assert_eq!(parse_generating_vector("7\n11\n13", 2).unwrap(), vec![7, 11]);
        assert_eq!(
            parse_generating_vector("7\nx\n", 2),
            Err(LatticeError::Parse { line: 2, text: "x".into() })
        );
        assert_eq!(
            parse_generating_vector("7\n", 3),
            Err(LatticeError::TooShort { available: 1, requested: 3 })
        );
        let z = vec![1, 182_667, 469_891, 498_753];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.txt");
        write_generating_vector(&path, &z).unwrap();
        assert_eq!(load_generating_vector(&path, 4).unwrap(), z);
    }

    #[test]
    fn ledger_relations() {
        let profile = GevreyProfile::new(2.0, Sensitivity::PowerLaw { scale: 1.0, decay: 2.1 }, 0.49, 2.0).unwrap();
        let l = ConstantsLedger::new(&profile, 0.5, 2.0, 0.01, 5, DISK_POINCARE_CONSTANT, std::f64::consts::PI).unwrap();
        for c in [l.c1, l.c2, l.c3, l.c4, l.c5, l.c6] {
            assert!(c > 0.0);
        }
        assert_eq!(l.c6, l.c4.max(1.0));
        assert_eq!(l.c5, 2.0 * l.c3);
        assert_eq!(l.tau_min, 0.01);
        assert!(ConstantsLedger::new(&profile, 0.0, 2.0, 0.01, 5, 1.0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn points_stay_in_half_open_box(n_idx in 0usize..6, z1 in 1usize..200, z2 in 1usize..200, seed in 0u64..1000) {
            let n = [2usize, 3, 67, 127, 251, 257][n_idx];
            let z = vec![(z1 % (n - 1)) + 1, (z2 % (n - 1)) + 1];
            let rule = LatticeRule::new(n, z, 3, seed).unwrap();
            for r in 0..3 {
                for p in rule.generate_points(r) {
                    for v in p {
                        prop_assert!((-0.5..0.5).contains(&v));
                    }
                }
            }
        }
    }
}
