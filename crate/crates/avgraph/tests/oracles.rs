//! Independent oracles for the simulation and linear-algebra kernels: each
//! test checks an implementation against a closed-form law or a brute-force
//! recomputation that shares no code with the unit under test.

use avgraph::fixtures;
use avgraph::graph::LimitMotion;
use avgraph::model::GraphPoint;
use avgraph::sim::{self, FastSlowState, SimConfig};
use avgraph::spectral;
use avgraph::stats;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// With zero drift, no noise and the start frozen in the constant-rate tail,
/// sojourn times of the chain are exactly exponential with the tail rate.
#[test]
fn tail_sojourn_times_are_exponential() {
    let model = fixtures::m2_zero_drift();
    let mut cfg = SimConfig::new(1.0, 0, 3000.0, 0);
    cfg.grid_points = 2;
    let mut rng = sim::path_rng(11, 0);
    let x0 = FastSlowState { state: 0, z: -2.0 };
    let path = sim::simulate_path(&model, x0, &cfg, &mut rng).unwrap();
    assert!(path.jumps.len() > 2000, "want a long jump record");
    let mut sojourns = Vec::with_capacity(path.jumps.len());
    let mut last = 0.0;
    for j in &path.jumps {
        sojourns.push(j.t - last);
        last = j.t;
    }
    let d = stats::ks_one_sample(&sojourns, |x| 1.0 - (-x).exp());
    let p = stats::kolmogorov_pvalue(d, sojourns.len() as f64);
    assert!(p > 0.005, "KS distance {d:.4} to Exp(1), p = {p:.4}");
}

/// Jump targets are drawn proportionally to the off-diagonal rates: in the
/// three-state tail, state 1 leaves to state 2 at rate 2 and to state 3 at
/// rate 1, so two thirds of its departures go to state 2.
#[test]
fn jump_targets_follow_rate_ratios() {
    let model = fixtures::m3();
    let mut cfg = SimConfig::new(1e-3, 0, 0.25, 0);
    cfg.grid_points = 2;
    let mut rng = sim::path_rng(12, 0);
    let x0 = FastSlowState { state: 0, z: -2.0 };
    let path = sim::simulate_path(&model, x0, &cfg, &mut rng).unwrap();
    assert!(path.terminal.z < -1.0, "path must stay in the constant tail");
    let from_first: Vec<usize> = path
        .jumps
        .iter()
        .filter(|j| j.from == 0)
        .map(|j| j.to)
        .collect();
    let n = from_first.len();
    assert!(n > 150, "want enough departures, got {n}");
    let to_second = from_first.iter().filter(|&&to| to == 1).count() as f64 / n as f64;
    let se = stats::binomial_se(2.0 / 3.0, n);
    assert!(
        (to_second - 2.0 / 3.0).abs() <= 3.0 * se,
        "target frequency {to_second:.4} vs 2/3, 3se = {:.4}",
        3.0 * se
    );
}

/// With one shared drift on every edge, the signed coordinate of the graph
/// diffusion is plain Brownian motion with that drift: the vertex only
/// relabels edges. Compared against exact Gaussian sampling by two-sample KS.
#[test]
fn equal_drift_signed_coordinate_is_gaussian() {
    let model = fixtures::m2_equal_drift();
    let motion = LimitMotion::new(&model).unwrap();
    let horizon = 0.3;
    let paths = 4000;
    let simulated: Vec<f64> = (0..paths)
        .map(|k| {
            let mut rng = sim::path_rng(13, k);
            let path = motion.simulate_diff(GraphPoint::vertex(), horizon, 1e-4, 2, &mut rng);
            path.terminal.coord()
        })
        .collect();
    let exact: Vec<f64> = (0..paths)
        .map(|k| {
            let mut rng = sim::path_rng(14, k);
            let g: f64 = StandardNormal.sample(&mut rng);
            horizon + horizon.sqrt() * g
        })
        .collect();
    let d = stats::ks_two_sample(&simulated, &exact);
    let p = stats::kolmogorov_pvalue(d, stats::ks_effective_size(paths as usize, paths as usize));
    assert!(p > 0.005, "KS distance {d:.4} to the Gaussian law, p = {p:.4}");
}

/// With zero drift the distance from the vertex is reflected Brownian motion
/// whatever the branch weights are.
#[test]
fn zero_drift_vertex_distance_is_reflected_gaussian() {
    let model = fixtures::m2_zero_drift();
    let motion = LimitMotion::new(&model).unwrap();
    let horizon = 0.3;
    let paths = 4000;
    let simulated: Vec<f64> = (0..paths)
        .map(|k| {
            let mut rng = sim::path_rng(15, k);
            let path = motion.simulate_diff(GraphPoint::vertex(), horizon, 1e-4, 2, &mut rng);
            path.terminal.arc()
        })
        .collect();
    let exact: Vec<f64> = (0..paths)
        .map(|k| {
            let mut rng = sim::path_rng(16, k);
            let g: f64 = StandardNormal.sample(&mut rng);
            (horizon.sqrt() * g).abs()
        })
        .collect();
    let d = stats::ks_two_sample(&simulated, &exact);
    let p = stats::kolmogorov_pvalue(d, stats::ks_effective_size(paths as usize, paths as usize));
    assert!(p > 0.005, "KS distance {d:.4} to the folded law, p = {p:.4}");
}

/// Scaling and squaring against a plain Taylor sum on matrices small enough
/// for the series to converge to roundoff.
#[test]
fn matrix_exponential_matches_taylor_series() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..10 {
        let a = DMatrix::from_fn(4, 4, |_, _| {
            let g: f64 = StandardNormal.sample(&mut rng);
            0.05 * g
        });
        let fast = spectral::matrix_exponential(&a);
        let mut series = DMatrix::identity(4, 4);
        let mut term = DMatrix::identity(4, 4);
        for k in 1..30 {
            term = (&term * &a) / k as f64;
            series += &term;
        }
        assert!(
            (&fast - &series).amax() < 1e-13,
            "scaling-squaring deviates from the series by {:.2e}",
            (&fast - &series).amax()
        );
    }
}
