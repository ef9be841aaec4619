//! Experiment driver: configuration, the convergence, reconstruction,
//! truncation and FEM studies, synthetic data and lattice export.
//!
//! Every study is a library function returning its table, so tests can run
//! them without the binary. CSV outputs are byte-identical for a fixed
//! configuration regardless of the number of worker threads; wall-clock
//! timings go to a separate file.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::bayes::{self, BayesError, Dataset, PerShiftEstimate, RatioEstimator};
use crate::fem::{self, Discretization, FemError};
use crate::field::{circle_points, FieldError, GevreyProfile, ParameterVector, PerturbationField, Point2, Sensitivity, Source};
use crate::lattice::{self, ConstantsLedger, LatticeError, LatticeRule, PodWeights};
use crate::mesh::{build_disk_mesh, GridLocator, Mesh};

/// Number of angles at which reconstructed boundaries are sampled.
pub const BOUNDARY_SAMPLES: usize = 512;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("config line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error(transparent)]
    Bayes(#[from] BayesError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

fn config_error(field: &str, message: impl Into<String>) -> CliError {
    CliError::Config { field: field.to_string(), message: message.into() }
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldChoice {
    Radial,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Mc,
    Qmc,
    OffTheShelf,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Mc => "mc",
            Method::Qmc => "qmc",
            Method::OffTheShelf => "off-the-shelf",
        }
    }

    fn parse(text: &str) -> Option<Self> {
        match text {
            "mc" => Some(Method::Mc),
            "qmc" => Some(Method::Qmc),
            "off-the-shelf" => Some(Method::OffTheShelf),
            _ => None,
        }
    }
}

/// All experiment settings. The text form is one `key = value` per line.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub field_kind: FieldChoice,
    pub amplitude: f64,
    pub frequency: u32,
    pub decay: f64,
    pub beta: f64,
    pub p: f64,
    pub s: usize,
    pub s_star: usize,
    pub mesh_level: usize,
    pub h_star_level: usize,
    pub ref_points: Vec<Point2>,
    pub noise_frac: f64,
    pub shifts: usize,
    pub n_list: Vec<usize>,
    pub truth_seed: u64,
    pub noise_seed: u64,
    pub shift_seed: u64,
    pub mc_seed: u64,
    pub reference_seed: u64,
    pub methods: Vec<Method>,
    pub alpha: f64,
    pub include_c6: bool,
    pub vector_file: Option<PathBuf>,
    pub reference: bool,
    pub dataset: Option<PathBuf>,
    pub reconstruct_n: usize,
    pub truncation_s_list: Vec<usize>,
    pub truncation_s_ref: usize,
    pub truncation_n: usize,
    pub truncation_shifts: usize,
    pub fem_levels: Vec<usize>,
    pub fem_ref_level: usize,
    pub out: PathBuf,
}

/// `k` points on the circle of radius 1/2, equally spaced in angle from 0.
pub fn default_ref_points(k: usize) -> Vec<Point2> {
    circle_points(k).into_iter().map(|x| x * 0.5).collect()
}

fn primes(list: &[u64]) -> Vec<usize> {
    list.iter().map(|&n| lattice::next_prime(n) as usize).collect()
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            field_kind: FieldChoice::Radial,
            amplitude: PerturbationField::DEFAULT_AMPLITUDE,
            frequency: PerturbationField::DEFAULT_FREQUENCY,
            decay: PerturbationField::DEFAULT_DECAY,
            beta: PerturbationField::DEFAULT_BETA,
            p: PerturbationField::DEFAULT_P,
            s: 20,
            s_star: 200,
            mesh_level: 4,
            h_star_level: 5,
            ref_points: default_ref_points(5),
            noise_frac: 0.1,
            shifts: 8,
            n_list: primes(&[67, 127, 251, 503, 1009, 2003, 4001]),
            truth_seed: 1,
            noise_seed: 2,
            shift_seed: 3,
            mc_seed: 4,
            reference_seed: 5,
            methods: vec![Method::Mc, Method::Qmc],
            alpha: 0.05,
            include_c6: false,
            vector_file: None,
            reference: false,
            dataset: None,
            reconstruct_n: 4001,
            truncation_s_list: vec![4, 8, 16, 32],
            truncation_s_ref: 128,
            truncation_n: 2003,
            truncation_shifts: 2,
            fem_levels: vec![2, 3, 4, 5],
            fem_ref_level: 7,
            out: PathBuf::from("results"),
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| config_error(key, format!("{value:?}: {e}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| parse_value(key, v))
        .collect()
}

fn join<T: std::fmt::Display>(values: &[T]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Full-size settings: `s = 100`, mesh level 5, truth level 6 and `n` up
    /// to 128021.
    pub fn full_scale(mut self) -> Self {
        self.s = 100;
        self.mesh_level = 5;
        self.h_star_level = 6;
        self.n_list = primes(&[67, 127, 251, 503, 1009, 2003, 4001, 8000, 16_000, 32_000, 64_000, 128_020]);
        self
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut c = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(CliError::Syntax { line: i + 1, message: format!("expected `key = value`, got {raw:?}") })?;
            c.set(key.trim(), value.trim())?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        Self::parse(&fs::read_to_string(path).map_err(io_error(path))?)
    }

    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "field_kind" => {
                self.field_kind = match value {
                    "paper-radial" => FieldChoice::Radial,
                    "identity" => FieldChoice::Identity,
                    _ => return Err(config_error(key, format!("unknown field kind {value:?}"))),
                }
            }
            "amplitude" => self.amplitude = parse_value(key, value)?,
            "frequency" => self.frequency = parse_value(key, value)?,
            "decay" => self.decay = parse_value(key, value)?,
            "beta" => self.beta = parse_value(key, value)?,
            "p" => self.p = parse_value(key, value)?,
            "s" => self.s = parse_value(key, value)?,
            "s_star" => self.s_star = parse_value(key, value)?,
            "mesh_level" => self.mesh_level = parse_value(key, value)?,
            "h_star_level" => self.h_star_level = parse_value(key, value)?,
            "k" => self.ref_points = default_ref_points(parse_value(key, value)?),
            "ref_points" => {
                self.ref_points = value
                    .split(';')
                    .map(str::trim)
                    .filter(|v| !v.is_empty())
                    .map(|pair| {
                        let xy: Vec<f64> = pair
                            .split_whitespace()
                            .map(|v| parse_value(key, v))
                            .collect::<Result<_, _>>()?;
                        match xy.as_slice() {
                            [x, y] => Ok(Point2::new(*x, *y)),
                            _ => Err(config_error(key, format!("expected `x y`, got {pair:?}"))),
                        }
                    })
                    .collect::<Result<_, _>>()?
            }
            "noise_frac" => self.noise_frac = parse_value(key, value)?,
            "shifts" => self.shifts = parse_value(key, value)?,
            "n_list" => self.n_list = primes(&parse_list::<u64>(key, value)?),
            "truth_seed" => self.truth_seed = parse_value(key, value)?,
            "noise_seed" => self.noise_seed = parse_value(key, value)?,
            "shift_seed" => self.shift_seed = parse_value(key, value)?,
            "mc_seed" => self.mc_seed = parse_value(key, value)?,
            "reference_seed" => self.reference_seed = parse_value(key, value)?,
            "methods" => {
                self.methods = value
                    .split(',')
                    .map(str::trim)
                    .filter(|v| !v.is_empty())
                    .map(|m| Method::parse(m).ok_or_else(|| config_error(key, format!("unknown method {m:?}"))))
                    .collect::<Result<_, _>>()?
            }
            "alpha" => self.alpha = parse_value(key, value)?,
            "include_c6" => self.include_c6 = parse_value(key, value)?,
            "vector_file" => self.vector_file = (!value.is_empty()).then(|| PathBuf::from(value)),
            "reference" => self.reference = parse_value(key, value)?,
            "dataset" => self.dataset = (!value.is_empty()).then(|| PathBuf::from(value)),
            "reconstruct_n" => self.reconstruct_n = lattice::next_prime(parse_value(key, value)?) as usize,
            "truncation_s_list" => self.truncation_s_list = parse_list(key, value)?,
            "truncation_s_ref" => self.truncation_s_ref = parse_value(key, value)?,
            "truncation_n" => self.truncation_n = lattice::next_prime(parse_value(key, value)?) as usize,
            "truncation_shifts" => self.truncation_shifts = parse_value(key, value)?,
            "fem_levels" => self.fem_levels = parse_list(key, value)?,
            "fem_ref_level" => self.fem_ref_level = parse_value(key, value)?,
            "out" => self.out = PathBuf::from(value),
            _ => return Err(config_error(key, "unknown key")),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let kind = match self.field_kind {
            FieldChoice::Radial => "paper-radial",
            FieldChoice::Identity => "identity",
        };
        let points = self
            .ref_points
            .iter()
            .map(|x| format!("{} {}", x[0], x[1]))
            .collect::<Vec<_>>()
            .join("; ");
        let methods = self.methods.iter().map(|m| m.name()).collect::<Vec<_>>().join(",");
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let entries: Vec<(&str, String)> = vec![
            ("field_kind", kind.into()),
            ("amplitude", self.amplitude.to_string()),
            ("frequency", self.frequency.to_string()),
            ("decay", self.decay.to_string()),
            ("beta", self.beta.to_string()),
            ("p", self.p.to_string()),
            ("s", self.s.to_string()),
            ("s_star", self.s_star.to_string()),
            ("mesh_level", self.mesh_level.to_string()),
            ("h_star_level", self.h_star_level.to_string()),
            ("ref_points", points),
            ("noise_frac", self.noise_frac.to_string()),
            ("shifts", self.shifts.to_string()),
            ("n_list", join(&self.n_list)),
            ("truth_seed", self.truth_seed.to_string()),
            ("noise_seed", self.noise_seed.to_string()),
            ("shift_seed", self.shift_seed.to_string()),
            ("mc_seed", self.mc_seed.to_string()),
            ("reference_seed", self.reference_seed.to_string()),
            ("methods", methods),
            ("alpha", self.alpha.to_string()),
            ("include_c6", self.include_c6.to_string()),
            ("vector_file", path(&self.vector_file)),
            ("reference", self.reference.to_string()),
            ("dataset", path(&self.dataset)),
            ("reconstruct_n", self.reconstruct_n.to_string()),
            ("truncation_s_list", join(&self.truncation_s_list)),
            ("truncation_s_ref", self.truncation_s_ref.to_string()),
            ("truncation_n", self.truncation_n.to_string()),
            ("truncation_shifts", self.truncation_shifts.to_string()),
            ("fem_levels", join(&self.fem_levels)),
            ("fem_ref_level", self.fem_ref_level.to_string()),
            ("out", self.out.display().to_string()),
        ];
        for (k, v) in entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.s == 0 {
            return Err(config_error("s", "must be at least 1"));
        }
        if self.s > self.s_star {
            return Err(config_error("s", format!("s = {} exceeds s_star = {}", self.s, self.s_star)));
        }
        if self.mesh_level > self.h_star_level {
            return Err(config_error(
                "mesh_level",
                format!("mesh_level = {} exceeds h_star_level = {}", self.mesh_level, self.h_star_level),
            ));
        }
        if self.n_list.is_empty() {
            return Err(config_error("n_list", "is empty"));
        }
        if let Some(n) = self.n_list.iter().find(|&&n| !lattice::is_prime(n as u64)) {
            return Err(config_error("n_list", format!("{n} is not prime")));
        }
        if self.n_list.windows(2).any(|w| w[1] <= w[0]) {
            return Err(config_error("n_list", "must be strictly increasing"));
        }
        if self.shifts < 2 {
            return Err(config_error("shifts", "at least 2 shifts are needed for an error estimate"));
        }
        if !(self.noise_frac >= 0.0) {
            return Err(config_error("noise_frac", "must be nonnegative"));
        }
        if let Some(x) = self.ref_points.iter().find(|x| !(x.norm() < 1.0)) {
            return Err(config_error("ref_points", format!("({}, {}) is not inside the disk", x[0], x[1])));
        }
        if self.methods.is_empty() {
            return Err(config_error("methods", "is empty"));
        }
        if self.methods.contains(&Method::OffTheShelf) && self.vector_file.is_none() {
            return Err(config_error("vector_file", "required by the off-the-shelf method"));
        }
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(config_error("alpha", "must lie in (0, 1/2)"));
        }
        if self.truncation_s_list.iter().any(|&s| s == 0 || s > self.truncation_s_ref) {
            return Err(config_error("truncation_s_list", "entries must lie in 1..=truncation_s_ref"));
        }
        if self.truncation_shifts == 0 {
            return Err(config_error("truncation_shifts", "must be at least 1"));
        }
        if self.fem_levels.iter().any(|&l| l >= self.fem_ref_level) {
            return Err(config_error("fem_levels", "levels must be below fem_ref_level"));
        }
        Ok(())
    }

    /// The field carrying all `s_star` modes, every one of them active.
    pub fn truth_field(&self) -> Result<PerturbationField, CliError> {
        Ok(match self.field_kind {
            FieldChoice::Radial => PerturbationField::radial(self.s_star, self.amplitude, self.frequency, self.decay)?,
            FieldChoice::Identity => PerturbationField::identity(self.s_star),
        })
    }

    /// The inference model: the truth field with only the first `s` modes active.
    pub fn model_field(&self) -> Result<PerturbationField, CliError> {
        Ok(self.truth_field()?.truncate(self.s)?)
    }

    pub fn profile(&self) -> Result<GevreyProfile, CliError> {
        let field = self.truth_field()?;
        let c = field.profile().c.max(1.0);
        GevreyProfile::new(self.beta, Sensitivity::PowerLaw { scale: 1.0, decay: self.decay }, self.p, c)
            .map_err(|e| config_error("p", e.to_string()))
    }

    pub fn lambda(&self) -> Result<f64, CliError> {
        lattice::choose_lambda(self.p, self.beta, self.alpha).map_err(|e| config_error("p", e.to_string()))
    }
}

/// Least-squares line through `(log10 x, log10 y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root mean square of the log10 residuals.
    pub residual: f64,
}

pub fn fit_loglog(x: &[f64], y: &[f64]) -> SlopeFit {
    assert_eq!(x.len(), y.len());
    let lx: Vec<f64> = x.iter().map(|v| v.log10()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.log10()).collect();
    let m = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / m;
    let my = ly.iter().sum::<f64>() / m;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = lx.iter().zip(&ly).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    SlopeFit { slope, intercept, residual: (rss / m).sqrt() }
}

/// Dataset from the configured file, or synthesized from the seeds.
pub fn load_or_make_dataset(config: &ExperimentConfig) -> Result<Dataset, CliError> {
    if let Some(path) = &config.dataset {
        return Ok(Dataset::read(path)?);
    }
    Ok(bayes::synthesize_data(
        &config.truth_field()?,
        &Source::Trigonometric,
        &config.ref_points,
        config.s_star,
        config.h_star_level,
        config.noise_frac,
        config.truth_seed,
        config.noise_seed,
    )?)
}

/// POD weights for the first `s` coordinates.
pub fn weights_for(config: &ExperimentConfig, s: usize, dataset: Option<&Dataset>) -> Result<PodWeights, CliError> {
    let profile = config.profile()?;
    let lambda = config.lambda()?;
    let ledger = if config.include_c6 {
        let field = config.truth_field()?;
        let (lo, hi) = field.singular_value_bounds(10_000, config.truth_seed)?;
        let tau = dataset.map(Dataset::smallest_noise_eigenvalue).unwrap_or(1.0);
        Some(ConstantsLedger::new(
            &profile,
            lo.min(1.0),
            hi.max(1.0),
            tau,
            config.ref_points.len(),
            lattice::DISK_POINCARE_CONSTANT,
            std::f64::consts::PI,
        )?)
    } else {
        None
    };
    Ok(lattice::pod_weights(&profile, lambda, config.alpha, s, config.include_c6, ledger.as_ref())?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub method: Method,
    pub n: usize,
    pub shifts: usize,
    pub rms_proxy: f64,
    pub rms_vs_reference: Option<f64>,
    pub h: f64,
    pub s: usize,
    pub wall_time_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    pub fits: Vec<(Method, SlopeFit)>,
}

impl ConvergenceReport {
    pub fn fit(&self, method: Method) -> Option<SlopeFit> {
        self.fits.iter().find(|(m, _)| *m == method).map(|(_, f)| *f)
    }
}

/// Per-shift estimates of one method at one `n`.
fn method_estimates(
    config: &ExperimentConfig,
    estimator: &RatioEstimator<'_, '_>,
    method: Method,
    n: usize,
    weights: &PodWeights,
    off_the_shelf: Option<&[usize]>,
    shift_seed: u64,
) -> Result<Vec<PerShiftEstimate>, CliError> {
    let s = config.s;
    match method {
        Method::Mc => (0..config.shifts)
            .map(|b| Ok(estimator.mc_batch(config.mc_seed, b, n)?))
            .collect(),
        Method::Qmc | Method::OffTheShelf => {
            let z = match off_the_shelf {
                Some(base) if method == Method::OffTheShelf => {
                    let z: Vec<usize> = base.iter().map(|v| v % n).collect();
                    if z.contains(&0) {
                        return Err(config_error("vector_file", format!("a generator entry is divisible by n = {n}")));
                    }
                    z
                }
                _ => lattice::cbc_construct(n, s, weights)?,
            };
            let rule = LatticeRule::new(n, z, config.shifts, shift_seed)?;
            (0..config.shifts)
                .map(|r| Ok(estimator.lattice_shift(&rule, r)?))
                .collect()
        }
    }
}

pub fn run_convergence(config: &ExperimentConfig) -> Result<ConvergenceReport, CliError> {
    config.validate()?;
    let dataset = load_or_make_dataset(config)?;
    let field = config.model_field()?;
    let mesh = build_disk_mesh(config.mesh_level);
    let space = Discretization::new(&mesh);
    let estimator = RatioEstimator::new(&space, &field, Source::Trigonometric, &dataset, mesh.nodes())?;
    let weights = weights_for(config, config.s, Some(&dataset))?;
    let off_the_shelf = match &config.vector_file {
        Some(path) if config.methods.contains(&Method::OffTheShelf) => {
            Some(lattice::load_generating_vector(path, config.s)?)
        }
        _ => None,
    };
    let reference = if config.reference {
        let n = *config.n_list.last().expect("validated nonempty");
        let est = method_estimates(config, &estimator, Method::Qmc, n, &weights, None, config.reference_seed)?;
        Some(bayes::posterior_mean(&est)?.mean_field)
    } else {
        None
    };
    let mut rows = Vec::new();
    for &method in &config.methods {
        for &n in &config.n_list {
            let start = Instant::now();
            let est = method_estimates(config, &estimator, method, n, &weights, off_the_shelf.as_deref(), config.shift_seed)?;
            let post = bayes::posterior_mean(&est)?;
            let rms_proxy = bayes::rms_error(&mesh, &post.per_shift_ratios, None)?;
            let rms_vs_reference = reference
                .as_deref()
                .map(|r| bayes::rms_error(&mesh, &post.per_shift_ratios, Some(r)))
                .transpose()?;
            rows.push(ConvergenceRow {
                method,
                n,
                shifts: config.shifts,
                rms_proxy,
                rms_vs_reference,
                h: mesh.h(),
                s: config.s,
                wall_time_seconds: start.elapsed().as_secs_f64(),
            });
        }
    }
    let fits = config
        .methods
        .iter()
        .filter_map(|&m| {
            let (x, y): (Vec<f64>, Vec<f64>) = rows
                .iter()
                .filter(|r| r.method == m)
                .map(|r| (r.n as f64, r.rms_proxy))
                .unzip();
            (x.len() >= 2).then(|| (m, fit_loglog(&x, &y)))
        })
        .collect();
    Ok(ConvergenceReport { rows, fits })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn convergence_csv(config: &ExperimentConfig, report: &ConvergenceReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# shape-qmc convergence v1: posterior mean = average of per-shift ratios Z'/Z; \
         rms_proxy = standard error over shifts (batches for mc)"
    );
    let _ = writeln!(out, "method,n,shifts,rms_proxy,rms_vs_reference,h,s,truth_seed,noise_seed,shift_seed,mc_seed");
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.method.name(),
            r.n,
            r.shifts,
            r.rms_proxy,
            opt(r.rms_vs_reference),
            r.h,
            r.s,
            config.truth_seed,
            config.noise_seed,
            config.shift_seed,
            config.mc_seed
        );
    }
    out
}

pub fn convergence_timing_csv(report: &ConvergenceReport) -> String {
    let mut out = String::from("method,n,wall_time_seconds\n");
    for r in &report.rows {
        let _ = writeln!(out, "{},{},{}", r.method.name(), r.n, r.wall_time_seconds);
    }
    out
}

fn fits_csv(fits: &[(String, SlopeFit, Option<f64>)]) -> String {
    let mut out = String::from("series,slope,intercept,residual,theory\n");
    for (name, f, theory) in fits {
        let _ = writeln!(out, "{},{},{},{},{}", name, f.slope, f.intercept, f.residual, opt(*theory));
    }
    out
}

/// Posterior-mean boundary images for one method.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub method: Method,
    pub mean_field: Vec<Point2>,
    pub boundary: Vec<Point2>,
    pub distance_to_truth: f64,
}

#[derive(Debug, Clone)]
pub struct ReconstructionReport {
    pub n: usize,
    pub truth_boundary: Vec<Point2>,
    pub methods: Vec<Reconstruction>,
}

/// `sqrt(mean |p_i - q_i|^2)` over matched polyline vertices.
pub fn polyline_distance(p: &[Point2], q: &[Point2]) -> f64 {
    assert_eq!(p.len(), q.len());
    let sum: f64 = p.iter().zip(q).map(|(a, b)| (a - b).norm_squared()).sum();
    (sum / p.len() as f64).sqrt()
}

/// Posterior mean of `V` on the mesh nodes and on the unit circle. The circle
/// image is evaluated directly at the sampled angles.
pub fn run_reconstruction(config: &ExperimentConfig, n: usize) -> Result<ReconstructionReport, CliError> {
    config.validate()?;
    let n = lattice::next_prime(n as u64) as usize;
    let dataset = load_or_make_dataset(config)?;
    let truth = config.truth_field()?;
    let field = config.model_field()?;
    let circle = circle_points(BOUNDARY_SAMPLES);
    let y_star = ParameterVector::new(dataset.provenance().y_star.clone())?;
    let truth_boundary = if y_star.len() == truth.s() {
        circle.iter().map(|x| truth.evaluate_map(x, &y_star)).collect::<Result<Vec<_>, _>>()?
    } else {
        circle.clone()
    };
    let mesh = build_disk_mesh(config.mesh_level);
    let space = Discretization::new(&mesh);
    let mut eval = mesh.nodes().to_vec();
    eval.extend_from_slice(&circle);
    let estimator = RatioEstimator::new(&space, &field, Source::Trigonometric, &dataset, &eval)?;
    let weights = weights_for(config, config.s, Some(&dataset))?;
    let off_the_shelf = match &config.vector_file {
        Some(path) if config.methods.contains(&Method::OffTheShelf) => Some(lattice::load_generating_vector(path, config.s)?),
        _ => None,
    };
    let mut methods = Vec::new();
    for &method in &config.methods {
        let est = method_estimates(config, &estimator, method, n, &weights, off_the_shelf.as_deref(), config.shift_seed)?;
        let post = bayes::posterior_mean(&est)?;
        let boundary = post.mean_field[mesh.num_nodes()..].to_vec();
        methods.push(Reconstruction {
            method,
            mean_field: post.mean_field[..mesh.num_nodes()].to_vec(),
            distance_to_truth: polyline_distance(&boundary, &truth_boundary),
            boundary,
        });
    }
    Ok(ReconstructionReport { n, truth_boundary, methods })
}

fn polyline_text(points: &[Point2]) -> String {
    let mut out = String::new();
    for p in points {
        let _ = writeln!(out, "{} {}", p[0], p[1]);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruncationRow {
    pub s: usize,
    pub error: f64,
}

#[derive(Debug, Clone)]
pub struct TruncationReport {
    pub n: usize,
    pub s_ref: usize,
    pub rows: Vec<TruncationRow>,
    pub fit: SlopeFit,
    /// `-2/p + 1`.
    pub theory: f64,
}

/// Dimension truncation of the prior mean of the observations:
/// `|Q_ref - Q_s|` where `Q_s` uses the first `s` modes and the first `s`
/// lattice coordinates of one `s_ref`-dimensional rule.
pub fn run_truncation_study(config: &ExperimentConfig) -> Result<TruncationReport, CliError> {
    config.validate()?;
    let s_ref = config.truncation_s_ref;
    let n = config.truncation_n;
    let base = match config.field_kind {
        FieldChoice::Radial => PerturbationField::radial(s_ref, config.amplitude, config.frequency, config.decay)?,
        FieldChoice::Identity => PerturbationField::identity(s_ref),
    };
    let weights = weights_for(config, s_ref, None)?;
    let z = lattice::cbc_construct(n, s_ref, &weights)?;
    let rule = LatticeRule::new(n, z, config.truncation_shifts, config.shift_seed)?;
    let mesh = build_disk_mesh(config.mesh_level);
    let space = Discretization::new(&mesh);
    let locations = fem::locate_all(&mesh, &config.ref_points)?;
    let mean_for = |s: usize| -> Result<Vec<f64>, CliError> {
        let field = base.truncate(s)?;
        let problem = space.problem(&field, Source::Trigonometric);
        let mut total = vec![0.0; locations.len()];
        for r in 0..rule.num_shifts() {
            let q = bayes::mean_forward(&problem, &locations, n, |l, out| {
                let mut full = vec![0.0; s_ref];
                rule.point_into(r, l, &mut full);
                out.copy_from_slice(&full[..s]);
            })?;
            for (t, v) in total.iter_mut().zip(q) {
                *t += v;
            }
        }
        Ok(total.into_iter().map(|v| v / rule.num_shifts() as f64).collect())
    };
    let reference = mean_for(s_ref)?;
    let mut rows = Vec::new();
    for &s in &config.truncation_s_list {
        let q = if s == s_ref { reference.clone() } else { mean_for(s)? };
        let error = q.iter().zip(&reference).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        rows.push(TruncationRow { s, error });
    }
    let fitted: Vec<&TruncationRow> = rows.iter().filter(|r| r.s < s_ref && r.error > 0.0).collect();
    let fit = fit_loglog(
        &fitted.iter().map(|r| r.s as f64).collect::<Vec<_>>(),
        &fitted.iter().map(|r| r.error).collect::<Vec<_>>(),
    );
    Ok(TruncationReport { n, s_ref, rows, fit, theory: -2.0 / config.p + 1.0 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FemRow {
    pub case: &'static str,
    pub level: usize,
    pub h: f64,
    pub error: f64,
    /// `log2(e(previous level) / e(level))`.
    pub rate: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FemReport {
    pub rows: Vec<FemRow>,
}

impl FemReport {
    pub fn rates(&self, case: &str) -> Vec<f64> {
        self.rows.iter().filter(|r| r.case == case).filter_map(|r| r.rate).collect()
    }
}

/// `||u_coarse - u_fine||_{L2}` over the fine mesh, extending the coarse
/// solution by zero outside its mesh.
pub fn l2_difference(coarse: &Mesh, u_coarse: &[f64], fine: &Mesh, u_fine: &[f64]) -> f64 {
    let locator = GridLocator::new(coarse);
    let bary = [[2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0], [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0]];
    let mut acc = crate::summation::NeumaierSum::new();
    for (t, nodes) in fine.triangles().iter().enumerate() {
        let v = fine.vertices(t);
        let mut local = 0.0;
        for w in &bary {
            let x = v[0] * w[0] + v[1] * w[1] + v[2] * w[2];
            let uf: f64 = (0..3).map(|k| w[k] * u_fine[nodes[k]]).sum();
            let uc = locator.locate(&x).map(|loc| fem::interpolate(coarse, u_coarse, &loc)).unwrap_or(0.0);
            local += (uf - uc).powi(2);
        }
        acc.add(local * fine.triangle_area(t) / 3.0);
    }
    acc.value().max(0.0).sqrt()
}

/// FEM errors per level: the identity field with `f = 1` against
/// `(1 - r^2)/4`, and the configured field at a fixed random `y` against a
/// solution on level `fem_ref_level`.
pub fn run_fem_study(config: &ExperimentConfig) -> Result<FemReport, CliError> {
    config.validate()?;
    let mut rows = Vec::new();
    let identity = PerturbationField::identity(1);
    let y0 = ParameterVector::zeros(1);
    let field = config.model_field()?;
    let mut y = vec![0.0; field.s()];
    bayes::uniform_parameter(config.truth_seed, 1, 0, &mut y);
    let y = ParameterVector::new(y)?;
    let fine = build_disk_mesh(config.fem_ref_level);
    let fine_space = Discretization::new(&fine);
    let u_fine = fine_space.problem(&field, Source::Trigonometric).solve(&y)?.coefficients().to_vec();
    let mut previous: [Option<f64>; 2] = [None, None];
    for &level in &config.fem_levels {
        let mesh = build_disk_mesh(level);
        let space = Discretization::new(&mesh);
        let analytic = space
            .problem(&identity, Source::Constant(1.0))
            .solve(&y0)?
            .l2_error(|x| (1.0 - x.norm_squared()) / 4.0);
        let u = space.problem(&field, Source::Trigonometric).solve(&y)?;
        let against_fine = l2_difference(&mesh, u.coefficients(), &fine, &u_fine);
        for (slot, (case, error)) in [("analytic", analytic), ("reference", against_fine)].into_iter().enumerate() {
            let rate = previous[slot].map(|p| (p / error).log2());
            previous[slot] = Some(error);
            rows.push(FemRow { case, level, h: mesh.h(), error, rate });
        }
    }
    Ok(FemReport { rows })
}

/// CBC vector for `n = n_list[0]` and dimension `s`.
pub fn run_cbc(config: &ExperimentConfig) -> Result<(usize, Vec<usize>), CliError> {
    config.validate()?;
    let n = config.n_list[0];
    let weights = weights_for(config, config.s, None)?;
    Ok((n, lattice::cbc_construct(n, config.s, &weights)?))
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(io_error(dir))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(io_error(&path))?;
    Ok(path)
}

#[derive(Debug, Parser)]
#[command(name = "shape-qmc", version, about = "Lattice-rule Bayesian shape inversion experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub options: CommonOptions,
}

#[derive(Debug, Args)]
pub struct CommonOptions {
    /// Configuration file (`key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Full-size experiment: s = 100, finer meshes, n up to 128021.
    #[arg(long = "paper-scale", alias = "full-scale", global = true)]
    pub full_scale: bool,
    /// Single lattice size (rounded up to a prime).
    #[arg(long, global = true)]
    pub n: Option<u64>,
    /// Truncation dimension.
    #[arg(long, global = true)]
    pub s: Option<usize>,
    /// Number of random shifts.
    #[arg(long, global = true)]
    pub shifts: Option<usize>,
    /// Seed for shifts and Monte Carlo samples.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Generating vector for the off-the-shelf method.
    #[arg(long, global = true)]
    pub vector_file: Option<PathBuf>,
    /// Rate loss `alpha` in the weight exponent, in (0, 1/2).
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Summability exponent of the sensitivities.
    #[arg(long, global = true)]
    pub p: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rms error against n for each method.
    Convergence,
    /// Posterior mean domain and boundary polylines.
    Reconstruct,
    /// Dimension truncation error against s.
    Truncation,
    /// FEM L2 error against mesh level.
    FemRate,
    /// Synthesize and write the dataset.
    MakeData,
    /// Construct and export a generating vector.
    Cbc,
}

impl CommonOptions {
    pub fn resolve(&self) -> Result<ExperimentConfig, CliError> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if self.full_scale {
            c = c.full_scale();
        }
        if let Some(n) = self.n {
            c.n_list = vec![lattice::next_prime(n) as usize];
            c.reconstruct_n = c.n_list[0];
        }
        if let Some(s) = self.s {
            c.s = s;
        }
        if let Some(r) = self.shifts {
            c.shifts = r;
        }
        if let Some(seed) = self.seed {
            c.shift_seed = seed;
            c.mc_seed = seed.wrapping_add(1);
        }
        if let Some(path) = &self.vector_file {
            c.vector_file = Some(path.clone());
            if !c.methods.contains(&Method::OffTheShelf) {
                c.methods.push(Method::OffTheShelf);
            }
        }
        if let Some(a) = self.alpha {
            c.alpha = a;
        }
        if let Some(p) = self.p {
            c.p = p;
        }
        if let Some(out) = &self.out {
            c.out = out.clone();
        }
        c.validate()?;
        Ok(c)
    }
}

/// Runs one subcommand and returns the lines printed to stdout.
pub fn execute(command: &Command, config: &ExperimentConfig) -> Result<Vec<String>, CliError> {
    let out = &config.out;
    let mut log = Vec::new();
    match command {
        Command::Convergence => {
            let report = run_convergence(config)?;
            write_file(out, "convergence.csv", &convergence_csv(config, &report))?;
            write_file(out, "convergence_timing.csv", &convergence_timing_csv(&report))?;
            let fits: Vec<(String, SlopeFit, Option<f64>)> =
                report.fits.iter().map(|(m, f)| (m.name().to_string(), *f, None)).collect();
            write_file(out, "convergence_fits.csv", &fits_csv(&fits))?;
            write_file(out, "config.txt", &config.to_text())?;
            for r in &report.rows {
                log.push(format!("{:>14} n = {:>7}  rms = {:.4e}  ({:.1} s)", r.method.name(), r.n, r.rms_proxy, r.wall_time_seconds));
            }
            for (m, f) in &report.fits {
                log.push(format!("{} slope {:.3} (residual {:.3})", m.name(), f.slope, f.residual));
            }
        }
        Command::Reconstruct => {
            let report = run_reconstruction(config, config.reconstruct_n)?;
            let mesh = build_disk_mesh(config.mesh_level);
            write_file(out, "boundary_truth.txt", &polyline_text(&report.truth_boundary))?;
            let mut summary = String::from("method,n,l2_polyline_distance\n");
            for rec in &report.methods {
                write_file(out, &format!("boundary_{}.txt", rec.method.name()), &polyline_text(&rec.boundary))?;
                let vx: Vec<f64> = rec.mean_field.iter().map(|v| v[0]).collect();
                let vy: Vec<f64> = rec.mean_field.iter().map(|v| v[1]).collect();
                let mut buf = Vec::new();
                mesh.write_with_columns(&mut buf, &[&vx, &vy]).expect("writing to memory");
                write_file(out, &format!("mean_field_{}.txt", rec.method.name()), &String::from_utf8_lossy(&buf))?;
                let _ = writeln!(summary, "{},{},{}", rec.method.name(), report.n, rec.distance_to_truth);
                log.push(format!("{} n = {}: boundary distance to truth {:.4e}", rec.method.name(), report.n, rec.distance_to_truth));
            }
            write_file(out, "reconstruction.csv", &summary)?;
        }
        Command::Truncation => {
            let report = run_truncation_study(config)?;
            let mut csv = String::from("# shape-qmc truncation v1\ns,n,s_ref,error\n");
            for r in &report.rows {
                let _ = writeln!(csv, "{},{},{},{}", r.s, report.n, report.s_ref, r.error);
                log.push(format!("s = {:>4}  error = {:.4e}", r.s, r.error));
            }
            write_file(out, "truncation.csv", &csv)?;
            write_file(out, "truncation_fit.csv", &fits_csv(&[("truncation".into(), report.fit, Some(report.theory))]))?;
            log.push(format!("slope {:.3} (residual {:.3}), theory {:.3}", report.fit.slope, report.fit.residual, report.theory));
        }
        Command::FemRate => {
            let report = run_fem_study(config)?;
            let mut csv = String::from("# shape-qmc fem-rate v1\ncase,level,h,l2_error,rate\n");
            for r in &report.rows {
                let _ = writeln!(csv, "{},{},{},{},{}", r.case, r.level, r.h, r.error, opt(r.rate));
                log.push(format!("{:>9} level {} h = {:.4}  error = {:.4e}  rate = {}", r.case, r.level, r.h, r.error, opt(r.rate)));
            }
            write_file(out, "fem_rate.csv", &csv)?;
        }
        Command::MakeData => {
            let dataset = load_or_make_dataset(config)?;
            let path = write_file(out, "dataset.txt", &dataset.to_text())?;
            log.push(format!("wrote {} (eta = {})", path.display(), dataset.eta()));
        }
        Command::Cbc => {
            let (n, z) = run_cbc(config)?;
            let path = write_file(out, &format!("lattice-{n}-{}.txt", config.s), &lattice::format_generating_vector(&z))?;
            log.push(format!("wrote {}", path.display()));
        }
    }
    Ok(log)
}

/// Entry point of the binary.
pub fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    let config = cli.options.resolve()?;
    let go = || -> Result<(), CliError> {
        for line in execute(&cli.command, &config)? {
            println!("{line}");
        }
        Ok(())
    };
    match cli.options.threads {
        Some(threads) => rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| CliError::ThreadPool(e.to_string()))?
            .install(go),
        None => go(),
    }
}
