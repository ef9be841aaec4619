//! Posterior estimator properties on a small problem.

use nalgebra::DMatrix;
use shape_qmc::bayes::{self, Dataset, RatioEstimator};
use shape_qmc::cli::{self, ExperimentConfig};
use shape_qmc::fem::Discretization;
use shape_qmc::field::Source;
use shape_qmc::lattice::{self, LatticeRule};
use shape_qmc::mesh::build_disk_mesh;

fn small_config() -> ExperimentConfig {
    ExperimentConfig {
        s: 4,
        s_star: 12,
        mesh_level: 2,
        h_star_level: 3,
        n_list: vec![67, 127],
        shifts: 3,
        ..Default::default()
    }
}

fn l2_distance(mesh: &shape_qmc::mesh::Mesh, a: &[shape_qmc::Point2], b: &[shape_qmc::Point2]) -> f64 {
    let d: Vec<_> = a.iter().zip(b).map(|(p, q)| p - q).collect();
    bayes::l2_norm_squared(mesh, &d).sqrt()
}

#[test]
fn larger_noise_flattens_the_posterior() {
    let config = small_config();
    let clean = {
        let mut c = config.clone();
        c.noise_frac = 0.0;
        cli::load_or_make_dataset(&c).unwrap()
    };
    let peak = clean.delta().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let field = config.model_field().unwrap();
    let mesh = build_disk_mesh(config.mesh_level);
    let space = Discretization::new(&mesh);
    let n = 251;
    let z = lattice::cbc_construct(n, config.s, &cli::weights_for(&config, config.s, None).unwrap()).unwrap();
    let rule = LatticeRule::new(n, z, 1, 3).unwrap();

    let mut misfits = Vec::new();
    let mut ess = Vec::new();
    for frac in [0.002, 0.02, 0.2, 2.0] {
        let eta = frac * peak;
        let gamma = DMatrix::identity(clean.k(), clean.k()) * (eta * eta);
        let data = Dataset::new(clean.ref_points().to_vec(), clean.delta().to_vec(), gamma, eta, clean.provenance().clone())
            .unwrap();
        let est = RatioEstimator::new(&space, &field, Source::Trigonometric, &data, mesh.nodes()).unwrap();
        let mut y = vec![0.0; config.s];
        let lls: Vec<f64> = (0..n)
            .map(|l| {
                rule.point_into(0, l, &mut y);
                est.log_likelihood_at(&y).unwrap()
            })
            .collect();
        let top = lls.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = lls.iter().map(|v| (v - top).exp()).collect();
        let sum: f64 = w.iter().sum();
        // misfit |delta - G|^2 = -2 eta^2 ll
        misfits.push(w.iter().zip(&lls).map(|(w, ll)| w * (-2.0 * eta * eta * ll)).sum::<f64>() / sum);
        ess.push(sum * sum / w.iter().map(|v| v * v).sum::<f64>());
    }
    assert!(misfits.windows(2).all(|p| p[1] > p[0]), "{misfits:?}");
    assert!(ess.windows(2).all(|p| p[1] > p[0]), "{ess:?}");
    assert!(ess[3] > 0.9 * n as f64);
}

#[test]
fn flat_likelihood_gives_prior_mean() {
    let config = small_config();
    let data = cli::load_or_make_dataset(&config).unwrap().with_flat_likelihood();
    let field = config.model_field().unwrap();
    let mesh = build_disk_mesh(config.mesh_level);
    let space = Discretization::new(&mesh);
    let est = RatioEstimator::new(&space, &field, Source::Trigonometric, &data, mesh.nodes()).unwrap();
    let rule = LatticeRule::new(67, vec![1, 19, 27, 31], 1, 0).unwrap();
    let point = |l: usize, out: &mut [f64]| rule.point_into(0, l, out);
    let posterior = est.estimate(67, point).unwrap().ratio();
    let prior = est.prior_mean(67, point).unwrap();
    assert!(l2_distance(&mesh, &posterior, &prior) < 1e-13);
}

#[test]
fn identical_shifts_have_zero_spread() {
    let config = small_config();
    let data = cli::load_or_make_dataset(&config).unwrap();
    let field = config.model_field().unwrap();
    let mesh = build_disk_mesh(config.mesh_level);
    let space = Discretization::new(&mesh);
    let est = RatioEstimator::new(&space, &field, Source::Trigonometric, &data, mesh.nodes()).unwrap();
    let rule = LatticeRule::with_shifts(67, vec![1, 19, 27, 31], vec![vec![0.1, 0.2, 0.3, 0.4]; 2], 0).unwrap();
    let shifts: Vec<_> = (0..2).map(|r| est.lattice_shift(&rule, r).unwrap()).collect();
    let post = bayes::posterior_mean(&shifts).unwrap();
    assert_eq!(post.mean_field, post.per_shift_ratios[0]);
    assert_eq!(bayes::rms_error(&mesh, &post.per_shift_ratios, None).unwrap(), 0.0);
}

#[test]
fn dataset_text_round_trip() {
    let data = cli::load_or_make_dataset(&small_config()).unwrap();
    let back = Dataset::from_text(&data.to_text()).unwrap();
    assert_eq!(back.delta(), data.delta());
    assert_eq!(back.gamma(), data.gamma());
    assert_eq!(back.ref_points(), data.ref_points());
    assert_eq!(back.provenance(), data.provenance());
}

#[test]
fn synthesized_noise_scales_with_peak() {
    let mut config = small_config();
    config.noise_frac = 0.0;
    let clean = cli::load_or_make_dataset(&config).unwrap();
    assert_eq!(clean.eta(), 0.0);
    config.noise_frac = 0.1;
    let noisy = cli::load_or_make_dataset(&config).unwrap();
    let peak = clean.delta().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!((noisy.eta() - 0.1 * peak).abs() <= 1e-15 * peak);
    assert_ne!(noisy.delta(), clean.delta());
}
