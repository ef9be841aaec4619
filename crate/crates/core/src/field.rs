//! Parametric domain perturbations and the pulled-back coefficients.
//!
//! A perturbation field maps the reference disk onto a random domain,
//! `V(x, y) = a(x, y) x`, where the radial profile
//!
//! ```text
//! a(x, y) = 1 + A * sum_{j=1}^{M} sin(k j theta) / j^q * exp(-1 / (1/2 + y_j))
//! ```
//!
//! depends on the polar angle `theta = atan2(x2, x1)` only. The factor
//! `exp(-1 / (1/2 + y_j))` is extended by zero at `y_j = -1/2`, so the all
//! `-1/2` parameter is the identity map. Note `cos(phi - pi/2) = sin(phi)`; the
//! sine form keeps angular zeros exact.
//!
//! A field carries `M` modes but only the first `s` are driven by parameters;
//! the remaining ones are frozen at `y_j = 0`. This is exactly the dimension
//! truncation `V_s(x, y) = V(x, (y_1, ..., y_s, 0, 0, ...))`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{Matrix2, Vector2};
use rand::Rng;
use thiserror::Error;

use crate::random::stream_rng;

pub type Point2 = Vector2<f64>;
pub type Mat2 = Matrix2<f64>;

/// Smallest admissible Jacobian determinant.
pub const DET_TOLERANCE: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("parameter y_{index} = {value} lies outside [-1/2, 1/2]")]
    ParameterOutOfRange { index: usize, value: f64 },
    #[error("parameter vector has length {got}, the field expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("the Jacobian of an angular field is undefined at the origin")]
    OriginSingularity,
    #[error("degenerate map at ({x}, {y}): det J = {det}")]
    DegenerateMap { x: f64, y: f64, det: f64 },
    #[error("truncation dimension {s} outside 1..={max}")]
    InvalidTruncation { s: usize, max: usize },
    #[error("the radial profile is only defined for radial fields")]
    NotRadial,
    #[error("invalid Gevrey profile: {0}")]
    InvalidProfile(String),
    #[error("invalid field parameter: {0}")]
    InvalidField(String),
}

/// A point of the truncated parameter domain `[-1/2, 1/2]^s`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Result<Self, FieldError> {
        for (i, &v) in values.iter().enumerate() {
            if !(-0.5..=0.5).contains(&v) {
                return Err(FieldError::ParameterOutOfRange { index: i + 1, value: v });
            }
        }
        Ok(Self(values))
    }

    /// All entries `-1/2`.
    pub fn lower_corner(s: usize) -> Self {
        Self(vec![-0.5; s])
    }

    pub fn zeros(s: usize) -> Self {
        Self(vec![0.0; s])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Pads with zeros up to length `s`.
    pub fn extend(&self, s: usize) -> Self {
        let mut v = self.0.clone();
        if v.len() < s {
            v.resize(s, 0.0);
        }
        Self(v)
    }
}

impl AsRef<[f64]> for ParameterVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// The per-coordinate sensitivity sequence `b`.
#[derive(Debug, Clone, PartialEq)]
pub enum Sensitivity {
    /// `b_j = scale * j^(-decay)`
    PowerLaw { scale: f64, decay: f64 },
    /// Finitely many values, zero beyond the end.
    Explicit(Vec<f64>),
}

impl Sensitivity {
    /// `b_j` for `j >= 1`.
    pub fn get(&self, j: usize) -> f64 {
        assert!(j >= 1, "sensitivities are indexed from 1");
        match self {
            Sensitivity::PowerLaw { scale, decay } => scale * (j as f64).powf(-decay),
            Sensitivity::Explicit(values) => values.get(j - 1).copied().unwrap_or(0.0),
        }
    }
}

/// Gevrey regularity data of a perturbation field: exponent `beta`,
/// sensitivities `b`, summability exponent `p` and uniform bound `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct GevreyProfile {
    pub beta: f64,
    pub b: Sensitivity,
    pub p: f64,
    pub c: f64,
    /// Optional source-term sensitivities; only used for the constants ledger.
    pub rho: Option<Vec<f64>>,
}

/// Number of terms used by the numerical summability check of explicit or
/// power-law sensitivity sequences.
const SUMMABILITY_CUTOFF: usize = 10_000;

impl GevreyProfile {
    pub fn new(beta: f64, b: Sensitivity, p: f64, c: f64) -> Result<Self, FieldError> {
        let profile = Self { beta, b, p, c, rho: None };
        profile.validate()?;
        Ok(profile)
    }

    pub fn with_rho(mut self, rho: Vec<f64>) -> Self {
        self.rho = Some(rho);
        self
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        let bad = |msg: String| Err(FieldError::InvalidProfile(msg));
        if !(self.beta >= 1.0) {
            return bad(format!("beta = {} must be >= 1", self.beta));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return bad(format!("p = {} must lie in (0, 1)", self.p));
        }
        if !(self.c >= 1.0) {
            return bad(format!("C = {} must be >= 1", self.c));
        }
        match &self.b {
            Sensitivity::PowerLaw { scale, decay } => {
                if !(*scale >= 0.0) || !(*decay >= 0.0) {
                    return bad("power-law sensitivities need scale, decay >= 0".into());
                }
            }
            Sensitivity::Explicit(values) => {
                if values.iter().any(|v| !(*v >= 0.0)) {
                    return bad("sensitivities must be nonnegative".into());
                }
                if values.windows(2).any(|w| w[1] > w[0]) {
                    return bad("sensitivities must be nonincreasing".into());
                }
            }
        }
        self.summability().map(|_| ())
    }

    /// Estimate of `sum_j b_j^p`. For power laws the partial sum up to a
    /// cutoff is completed by the integral tail bound; divergence is an error.
    pub fn summability(&self) -> Result<f64, FieldError> {
        match &self.b {
            Sensitivity::Explicit(values) => Ok(values.iter().map(|b| b.powf(self.p)).sum()),
            Sensitivity::PowerLaw { scale, decay } => {
                let exponent = decay * self.p;
                if *scale == 0.0 {
                    return Ok(0.0);
                }
                if exponent <= 1.0 {
                    return Err(FieldError::InvalidProfile(format!(
                        "b is not p-summable: decay * p = {exponent} <= 1"
                    )));
                }
                let head: f64 = (1..=SUMMABILITY_CUTOFF)
                    .map(|j| self.b.get(j).powf(self.p))
                    .sum();
                let n = SUMMABILITY_CUTOFF as f64;
                let tail = scale.powf(self.p) * n.powf(1.0 - exponent) / (exponent - 1.0);
                Ok(head + tail)
            }
        }
    }
}

/// A user-supplied domain map `x -> V(x, y)`.
pub trait CustomMap: Send + Sync {
    /// Number of parameters the map consumes.
    fn dimension(&self) -> usize;
    fn map(&self, x: &Point2, y: &[f64]) -> Point2;
    fn jacobian(&self, x: &Point2, y: &[f64]) -> Result<Mat2, FieldError>;
}

#[derive(Clone)]
pub enum FieldKind {
    Radial,
    Identity,
    Custom(Arc<dyn CustomMap>),
}

impl fmt::Debug for FieldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldKind::Radial => write!(f, "Radial"),
            FieldKind::Identity => write!(f, "Identity"),
            FieldKind::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Continuous extension of `exp(-1 / (1/2 + y))` to `y = -1/2`.
#[inline]
pub fn mode_factor(y: f64) -> f64 {
    let t = 0.5 + y;
    if t <= 0.0 {
        0.0
    } else {
        (-1.0 / t).exp()
    }
}

/// Polar angle with the convention `theta(0, 0) = 0`.
#[inline]
pub fn polar_angle(x: &Point2) -> f64 {
    if x[0] == 0.0 && x[1] == 0.0 {
        0.0
    } else {
        x[1].atan2(x[0])
    }
}

#[derive(Debug, Clone)]
pub struct PerturbationField {
    kind: FieldKind,
    modes: usize,
    s: usize,
    amplitude: f64,
    frequency: u32,
    decay: f64,
    profile: GevreyProfile,
}

impl PerturbationField {
    pub const DEFAULT_AMPLITUDE: f64 = 1.2;
    pub const DEFAULT_FREQUENCY: u32 = 3;
    pub const DEFAULT_DECAY: f64 = 2.1;
    pub const DEFAULT_BETA: f64 = 2.0;
    pub const DEFAULT_P: f64 = 0.49;

    /// The radial field with `modes` parameters, all of them active.
    pub fn default_radial(modes: usize) -> Self {
        Self::radial(modes, Self::DEFAULT_AMPLITUDE, Self::DEFAULT_FREQUENCY, Self::DEFAULT_DECAY)
            .expect("default radial field is valid")
    }

    pub fn radial(modes: usize, amplitude: f64, frequency: u32, decay: f64) -> Result<Self, FieldError> {
        if modes == 0 {
            return Err(FieldError::InvalidField("a radial field needs at least one mode".into()));
        }
        if !amplitude.is_finite() || !(decay > 1.0) {
            return Err(FieldError::InvalidField(format!(
                "amplitude must be finite and decay > 1 (got {amplitude}, {decay})"
            )));
        }
        let profile = GevreyProfile::new(
            Self::DEFAULT_BETA,
            Sensitivity::PowerLaw { scale: 1.0, decay },
            Self::DEFAULT_P,
            radial_c1_bound(amplitude, frequency, decay),
        )?;
        Ok(Self {
            kind: FieldKind::Radial,
            modes,
            s: modes,
            amplitude,
            frequency,
            decay,
            profile,
        })
    }

    pub fn identity(s: usize) -> Self {
        Self {
            kind: FieldKind::Identity,
            modes: s,
            s,
            amplitude: 0.0,
            frequency: 0,
            decay: Self::DEFAULT_DECAY,
            profile: GevreyProfile {
                beta: 1.0,
                b: Sensitivity::Explicit(Vec::new()),
                p: 0.5,
                c: 1.0,
                rho: None,
            },
        }
    }

    pub fn custom(map: Arc<dyn CustomMap>) -> Self {
        let s = map.dimension();
        let mut field = Self::identity(s);
        field.kind = FieldKind::Custom(map);
        field
    }

    /// Replaces the Gevrey profile (used for weight construction).
    pub fn with_profile(mut self, profile: GevreyProfile) -> Self {
        self.profile = profile;
        self
    }

    pub fn kind(&self) -> &FieldKind {
        &self.kind
    }

    /// Active (stochastic) dimension.
    pub fn s(&self) -> usize {
        self.s
    }

    /// Total number of modes; modes beyond `s` are frozen at `y_j = 0`.
    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn frequency(&self) -> u32 {
        self.frequency
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn profile(&self) -> &GevreyProfile {
        &self.profile
    }

    fn check_dimension(&self, y: &[f64]) -> Result<(), FieldError> {
        if y.len() != self.s {
            return Err(FieldError::DimensionMismatch { expected: self.s, got: y.len() });
        }
        Ok(())
    }

    /// Parameter value driving mode `j` (0-based); frozen modes read 0.
    #[inline]
    fn mode_parameter(&self, y: &[f64], j: usize) -> f64 {
        if j < self.s {
            y[j]
        } else {
            0.0
        }
    }

    #[inline]
    fn mode_weight(&self, j: usize) -> f64 {
        ((j + 1) as f64).powf(-self.decay)
    }

    /// `(a, da/dtheta)` of the radial field at angle `theta`.
    fn radial_terms(&self, theta: f64, y: &[f64]) -> (f64, f64) {
        let k = f64::from(self.frequency);
        let mut value = 0.0;
        let mut slope = 0.0;
        for j in 0..self.modes {
            let e = mode_factor(self.mode_parameter(y, j));
            let w = self.mode_weight(j);
            let phase = k * (j + 1) as f64 * theta;
            value += w * phase.sin() * e;
            slope += w * k * (j + 1) as f64 * phase.cos() * e;
        }
        (1.0 + self.amplitude * value, self.amplitude * slope)
    }

    /// The radial profile `a(x, y)`.
    pub fn radial_profile(&self, x: &Point2, y: &ParameterVector) -> Result<f64, FieldError> {
        self.check_dimension(y.as_slice())?;
        match &self.kind {
            FieldKind::Identity => Ok(1.0),
            FieldKind::Radial => Ok(self.radial_terms(polar_angle(x), y.as_slice()).0),
            FieldKind::Custom(_) => Err(FieldError::NotRadial),
        }
    }

    /// `V(x, y)`.
    pub fn evaluate_map(&self, x: &Point2, y: &ParameterVector) -> Result<Point2, FieldError> {
        self.check_dimension(y.as_slice())?;
        Ok(self.map_unchecked(x, y.as_slice()))
    }

    pub(crate) fn map_unchecked(&self, x: &Point2, y: &[f64]) -> Point2 {
        match &self.kind {
            FieldKind::Identity => *x,
            FieldKind::Radial => x * self.radial_terms(polar_angle(x), y).0,
            FieldKind::Custom(map) => map.map(x, &self.pad(y)),
        }
    }

    fn pad(&self, y: &[f64]) -> Vec<f64> {
        let mut full = y.to_vec();
        full.resize(self.modes, 0.0);
        full
    }

    /// Spatial Jacobian `J = a I + x (grad a)^T`.
    pub fn jacobian(&self, x: &Point2, y: &ParameterVector) -> Result<Mat2, FieldError> {
        self.check_dimension(y.as_slice())?;
        self.jacobian_unchecked(x, y.as_slice())
    }

    fn jacobian_unchecked(&self, x: &Point2, y: &[f64]) -> Result<Mat2, FieldError> {
        match &self.kind {
            FieldKind::Identity => Ok(Mat2::identity()),
            FieldKind::Custom(map) => map.jacobian(x, &self.pad(y)),
            FieldKind::Radial => {
                let r2 = x.norm_squared();
                if r2 == 0.0 {
                    return Err(FieldError::OriginSingularity);
                }
                let (a, a_theta) = self.radial_terms(polar_angle(x), y);
                Ok(radial_jacobian(x, a, a_theta / r2))
            }
        }
    }

    /// `A(x, y) = (J^T J)^{-1} det J`.
    pub fn diffusion_matrix(&self, x: &Point2, y: &ParameterVector) -> Result<Mat2, FieldError> {
        let j = self.jacobian(x, y)?;
        diffusion_from_jacobian(&j, x)
    }

    /// `f_ref(x, y) = f(V(x, y)) det J(x, y)`.
    pub fn pullback_source(&self, f: &Source, x: &Point2, y: &ParameterVector) -> Result<f64, FieldError> {
        let j = self.jacobian(x, y)?;
        let det = checked_determinant(&j, x)?;
        let v = self.map_unchecked(x, y.as_slice());
        Ok(f.eval(&v) * det)
    }

    /// Dimension truncation: the first `s` parameters stay active, all later
    /// modes are frozen at `y_j = 0`.
    pub fn truncate(&self, s: usize) -> Result<Self, FieldError> {
        if s == 0 || s > self.s {
            return Err(FieldError::InvalidTruncation { s, max: self.s });
        }
        let mut field = self.clone();
        field.s = s;
        Ok(field)
    }

    /// Empirical extreme singular values of `J` over uniformly sampled points of
    /// the disk and of the parameter domain.
    pub fn singular_value_bounds(&self, n_samples: usize, seed: u64) -> Result<(f64, f64), FieldError> {
        if n_samples == 0 {
            return Err(FieldError::InvalidField("at least one sample is required".into()));
        }
        let mut rng = stream_rng(seed, 0);
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        let mut y = vec![0.0; self.s];
        for _ in 0..n_samples {
            let x = loop {
                let p = Point2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                let r2 = p.norm_squared();
                if r2 <= 1.0 && r2 > 1e-24 {
                    break p;
                }
            };
            for v in y.iter_mut() {
                *v = rng.random::<f64>() - 0.5;
            }
            let j = self.jacobian_unchecked(&x, &y)?;
            checked_determinant(&j, &x)?;
            let (smin, smax) = singular_values(&j);
            lo = lo.min(smin);
            hi = hi.max(smax);
        }
        Ok((lo, hi))
    }

    /// Precomputes the angular tables of the field at a fixed set of points.
    pub fn prepare(&self, points: &[Point2]) -> PreparedField {
        let angular = match self.kind {
            FieldKind::Radial => {
                let s = self.s;
                let k = f64::from(self.frequency);
                let frozen = mode_factor(0.0);
                let mut tables = Vec::with_capacity(points.len());
                for x in points {
                    let theta = polar_angle(x);
                    let mut g = Vec::with_capacity(s);
                    let mut dg = Vec::with_capacity(s);
                    let mut tail = 0.0;
                    let mut tail_slope = 0.0;
                    for j in 0..self.modes {
                        let w = self.mode_weight(j);
                        let freq = k * (j + 1) as f64;
                        let phase = freq * theta;
                        let (value, slope) = (w * phase.sin(), w * freq * phase.cos());
                        if j < s {
                            g.push(value);
                            dg.push(slope);
                        } else {
                            tail += value * frozen;
                            tail_slope += slope * frozen;
                        }
                    }
                    tables.push(AngularTable { g, dg, tail, tail_slope });
                }
                Some(tables)
            }
            _ => None,
        };
        PreparedField {
            field: self.clone(),
            points: points.to_vec(),
            angular,
        }
    }

    /// Mode factors `exp(-1/(1/2 + y_j))` of a parameter vector.
    pub fn coefficients(&self, y: &[f64]) -> Result<ModeCoefficients, FieldError> {
        self.check_dimension(y)?;
        for (i, &v) in y.iter().enumerate() {
            if !(-0.5..=0.5).contains(&v) {
                return Err(FieldError::ParameterOutOfRange { index: i + 1, value: v });
            }
        }
        Ok(ModeCoefficients {
            y: y.to_vec(),
            factors: y.iter().map(|&v| mode_factor(v)).collect(),
        })
    }
}

/// Sup bound of `|V|` and `|J|` over the disk for the radial field with all
/// mode factors at their maximum `e^{-1}`; at least 1.
fn radial_c1_bound(amplitude: f64, frequency: u32, decay: f64) -> f64 {
    let head = |q: f64| -> f64 { (1..=100_000).map(|j| (j as f64).powf(-q)).sum::<f64>() };
    let value = head(decay);
    let slope = if decay > 2.0 { f64::from(frequency) * head(decay - 1.0) } else { f64::INFINITY };
    let bound = 1.0 + amplitude.abs() * (-1.0f64).exp() * (value + slope);
    if bound.is_finite() {
        bound.max(1.0)
    } else {
        1.0
    }
}

/// `J = a I + x (grad a)^T` with `grad a = c (-x2, x1)` and `c = a_theta / r^2`.
#[inline]
fn radial_jacobian(x: &Point2, a: f64, c: f64) -> Mat2 {
    let (x1, x2) = (x[0], x[1]);
    Mat2::new(a - c * x1 * x2, c * x1 * x1, -c * x2 * x2, a + c * x1 * x2)
}

#[inline]
fn checked_determinant(j: &Mat2, x: &Point2) -> Result<f64, FieldError> {
    let det = j[(0, 0)] * j[(1, 1)] - j[(0, 1)] * j[(1, 0)];
    if !(det > DET_TOLERANCE) {
        return Err(FieldError::DegenerateMap { x: x[0], y: x[1], det });
    }
    Ok(det)
}

/// `(J^T J)^{-1} det J = adj(J) adj(J)^T / det J`, symmetric by construction.
pub fn diffusion_from_jacobian(j: &Mat2, x: &Point2) -> Result<Mat2, FieldError> {
    let det = checked_determinant(j, x)?;
    // rows of adj(J)
    let (p, q) = (j[(1, 1)], -j[(0, 1)]);
    let (r, t) = (-j[(1, 0)], j[(0, 0)]);
    let a00 = (p * p + q * q) / det;
    let a01 = (p * r + q * t) / det;
    let a11 = (r * r + t * t) / det;
    Ok(Mat2::new(a00, a01, a01, a11))
}

/// Singular values `(min, max)` of a 2x2 matrix.
pub fn singular_values(j: &Mat2) -> (f64, f64) {
    let m = j.transpose() * j;
    let tr = m[(0, 0)] + m[(1, 1)];
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
    let hi = 0.5 * tr + disc;
    let lo = (0.5 * tr - disc).max(0.0);
    (lo.sqrt(), hi.sqrt())
}

/// Mode factors for one parameter vector.
#[derive(Debug, Clone)]
pub struct ModeCoefficients {
    y: Vec<f64>,
    factors: Vec<f64>,
}

impl ModeCoefficients {
    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn factors(&self) -> &[f64] {
        &self.factors
    }
}

#[derive(Debug, Clone)]
struct AngularTable {
    g: Vec<f64>,
    dg: Vec<f64>,
    tail: f64,
    tail_slope: f64,
}

/// A field evaluated on a fixed point set. Angular tables are computed once so
/// each new parameter only costs `O(s)` per point.
#[derive(Debug, Clone)]
pub struct PreparedField {
    field: PerturbationField,
    points: Vec<Point2>,
    angular: Option<Vec<AngularTable>>,
}

impl PreparedField {
    pub fn field(&self) -> &PerturbationField {
        &self.field
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    #[inline]
    fn radial(&self, table: &AngularTable, c: &ModeCoefficients) -> (f64, f64) {
        let mut value = 0.0;
        let mut slope = 0.0;
        for ((g, dg), e) in table.g.iter().zip(&table.dg).zip(&c.factors) {
            value += g * e;
            slope += dg * e;
        }
        let amp = self.field.amplitude;
        (1.0 + amp * (value + table.tail), amp * (slope + table.tail_slope))
    }

    /// `V(x_i, y)`.
    #[inline]
    pub fn map(&self, i: usize, c: &ModeCoefficients) -> Point2 {
        let x = &self.points[i];
        match &self.angular {
            Some(tables) => x * self.radial(&tables[i], c).0,
            None => self.field.map_unchecked(x, &c.y),
        }
    }

    /// `(J, det J)` at `x_i`.
    #[inline]
    pub fn jacobian(&self, i: usize, c: &ModeCoefficients) -> Result<Mat2, FieldError> {
        let x = &self.points[i];
        match &self.angular {
            Some(tables) => {
                let r2 = x.norm_squared();
                if r2 == 0.0 {
                    return Err(FieldError::OriginSingularity);
                }
                let (a, a_theta) = self.radial(&tables[i], c);
                Ok(radial_jacobian(x, a, a_theta / r2))
            }
            None => self.field.jacobian_unchecked(x, &c.y),
        }
    }

    /// Diffusion matrix, mapped point and `det J` at `x_i` in one pass.
    #[inline]
    pub fn pullback(&self, i: usize, c: &ModeCoefficients) -> Result<(Mat2, Point2, f64), FieldError> {
        let x = &self.points[i];
        let (j, v) = match &self.angular {
            Some(tables) => {
                let r2 = x.norm_squared();
                if r2 == 0.0 {
                    return Err(FieldError::OriginSingularity);
                }
                let (a, a_theta) = self.radial(&tables[i], c);
                (radial_jacobian(x, a, a_theta / r2), x * a)
            }
            None => (
                self.field.jacobian_unchecked(x, &c.y)?,
                self.field.map_unchecked(x, &c.y),
            ),
        };
        let det = checked_determinant(&j, x)?;
        Ok((diffusion_from_jacobian(&j, x)?, v, det))
    }
}

/// Source terms `f` on the physical domain.
#[derive(Clone)]
pub enum Source {
    Constant(f64),
    /// `10 sin(x1 x2) - 5 cos(x1 + x2)^2`
    Trigonometric,
    Custom(Arc<dyn Fn(&Point2) -> f64 + Send + Sync>),
}

impl Source {
    #[inline]
    pub fn eval(&self, x: &Point2) -> f64 {
        match self {
            Source::Constant(c) => *c,
            Source::Trigonometric => {
                let c = (x[0] + x[1]).cos();
                10.0 * (x[0] * x[1]).sin() - 5.0 * c * c
            }
            Source::Custom(f) => f(x),
        }
    }
}

impl fmt::Debug for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Constant(c) => write!(f, "Constant({c})"),
            Source::Trigonometric => write!(f, "Trigonometric"),
            Source::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Parameter-space integral of `exp(-1/(1/2 + y))` over `[-1/2, 1/2]`, useful
/// for prior means of the radial field.
pub fn mean_mode_factor() -> f64 {
    // Gauss-Legendre would do; a fine composite Simpson rule is plenty here.
    let n = 20_000;
    let h = 1.0 / n as f64;
    let mut acc = mode_factor(-0.5) + mode_factor(0.5);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * mode_factor(-0.5 + i as f64 * h);
    }
    acc * h / 3.0
}

/// Angle used by the reconstruction output, sampled uniformly on the circle.
pub fn circle_points(count: usize) -> Vec<Point2> {
    (0..count)
        .map(|i| {
            let t = 2.0 * PI * i as f64 / count as f64;
            Point2::new(t.cos(), t.sin())
        })
        .collect()
}
