//! Verification drivers comparing the fast-slow system with its graph limit.
//!
//! Four instruments, all ensemble based and all deterministic for a fixed
//! seed: a law metric between projected terminal ensembles, martingale
//! defects of test functions along paths, exit statistics from a small band
//! around the bifurcation, and counts of return cycles between the vertex
//! level and the band edge.

use rayon::prelude::*;
use serde::Serialize;
use std::time::Instant;

use crate::graph::{apply_generator_cached, LimitExit, LimitMotion, TestFunction};
use crate::linalg::pairwise_sum;
use crate::model::{ChainFamily, GraphPoint, ModelError};
use crate::sim::{self, path_rng, ExitOutcome, FastSlowState, SimConfig, SimError};
use crate::stats;

#[derive(Debug, Clone, thiserror::Error)]
pub enum VerifyError {
    #[error("empirical law has no points")]
    EmptyLaw,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A finite sample of graph points observed at one time.
#[derive(Debug, Clone, Serialize)]
pub struct EmpiricalLaw {
    pub time: f64,
    pub points: Vec<GraphPoint>,
}

impl EmpiricalLaw {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Fraction of the sample on each edge; the vertex counts for edge 0.
    pub fn edge_masses(&self) -> [f64; 3] {
        let mut counts = [0usize; 3];
        for p in &self.points {
            counts[p.edge() as usize] += 1;
        }
        counts.map(|c| c as f64 / self.points.len() as f64)
    }

    /// Signed coordinates of the points carried by one edge.
    pub fn coords_on(&self, edge: u8) -> Vec<f64> {
        self.points
            .iter()
            .filter(|p| p.edge() == edge)
            .map(|p| p.coord())
            .collect()
    }
}

/// Distance between two empirical laws on the graph: the total-variation
/// distance of the edge masses, combined with the per-edge Kolmogorov-Smirnov
/// distances weighted by the smaller shared mass. Zero exactly for equal
/// samples; insensitive to path order.
pub fn law_distance(a: &EmpiricalLaw, b: &EmpiricalLaw) -> Result<f64, VerifyError> {
    if a.is_empty() || b.is_empty() {
        return Err(VerifyError::EmptyLaw);
    }
    let ma = a.edge_masses();
    let mb = b.edge_masses();
    let tv = 0.5 * (0..3).map(|l| (ma[l] - mb[l]).abs()).sum::<f64>();
    let mut d = tv;
    for edge in 0..3u8 {
        let ca = a.coords_on(edge);
        let cb = b.coords_on(edge);
        if ca.is_empty() || cb.is_empty() {
            continue;
        }
        let w = ma[edge as usize].min(mb[edge as usize]);
        d = d.max(w * stats::ks_two_sample(&ca, &cb));
    }
    Ok(d)
}

/// One row of an `epsilon` sweep: distances between the fast-slow ensemble
/// and the limit ensemble at the half and full horizon.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub epsilon: f64,
    pub dt: f64,
    pub paths: usize,
    pub distance_half: f64,
    pub distance_full: f64,
    /// The larger of the two snapshot distances.
    pub distance: f64,
    /// Crude sampling scale of the distance (plug-in, not a confidence bound).
    pub std_error: f64,
    /// Wall-clock seconds spent on the fast-slow ensemble of this row.
    pub runtime_s: f64,
}

fn law_scale(na: usize, nb: usize, ma: &[f64; 3], mb: &[f64; 3]) -> f64 {
    let mut tv_var = 0.0;
    for l in 0..3 {
        tv_var += ma[l] * (1.0 - ma[l]) / na as f64 + mb[l] * (1.0 - mb[l]) / nb as f64;
    }
    0.5 * tv_var.sqrt() + 0.26 * ((na + nb) as f64 / (na as f64 * nb as f64)).sqrt()
}

/// Simulates the limit ensemble once and the fast-slow ensemble at each
/// `epsilon`, comparing projected laws at `horizon / 2` and `horizon`. The
/// fast step is the largest admissible one, `epsilon / 10`; path `k` of the
/// row for the `i`-th epsilon uses RNG stream `(i + 1) << 32 | k`, the limit
/// ensemble streams `k`.
#[allow(clippy::too_many_arguments)]
pub fn convergence_sweep(
    model: &ChainFamily,
    x0: FastSlowState,
    kappa: u8,
    horizon: f64,
    eps_list: &[f64],
    paths: usize,
    seed: u64,
    limit_dt: f64,
) -> Result<Vec<ConvergenceRow>, VerifyError> {
    assert!(paths > 0 && horizon > 0.0 && limit_dt > 0.0);
    let motion = LimitMotion::new(model)?;
    let y0 = model.project_h(x0.state, x0.z);
    let limit: Vec<(GraphPoint, GraphPoint)> = (0..paths)
        .into_par_iter()
        .map(|k| {
            let mut rng = path_rng(seed, k as u64);
            let path = if kappa == 1 {
                motion.simulate_diff(y0, horizon, limit_dt, 3, &mut rng)
            } else {
                motion.simulate_det(y0, horizon, limit_dt, 3, &mut rng)
            };
            (path.samples[1].point, path.terminal)
        })
        .collect();
    let limit_half = EmpiricalLaw {
        time: horizon / 2.0,
        points: limit.iter().map(|s| s.0).collect(),
    };
    let limit_full = EmpiricalLaw {
        time: horizon,
        points: limit.iter().map(|s| s.1).collect(),
    };

    let mut rows = Vec::with_capacity(eps_list.len());
    for (i, &epsilon) in eps_list.iter().enumerate() {
        let mut cfg = SimConfig::new(epsilon, kappa, horizon, seed);
        cfg.paths = paths;
        cfg.ensure_valid()?;
        let start = Instant::now();
        let snaps = [horizon / 2.0, horizon];
        let ensemble: Vec<(GraphPoint, GraphPoint)> = (0..paths)
            .into_par_iter()
            .map(|k| {
                let mut rng = path_rng(seed, ((i as u64 + 1) << 32) | k as u64);
                let mut half: Option<GraphPoint> = None;
                let out = sim::run_fast_slow(
                    model,
                    &cfg,
                    x0.state,
                    x0.z,
                    0.0,
                    horizon,
                    None,
                    &snaps,
                    |idx, _, state, z| {
                        if idx == 0 {
                            half = Some(model.project_h(state, z));
                        }
                    },
                    |_| {},
                    false,
                    &mut rng,
                );
                (
                    half.expect("half-horizon snapshot recorded"),
                    model.project_h(out.state, out.z),
                )
            })
            .collect();
        let runtime_s = start.elapsed().as_secs_f64();
        let fast_half = EmpiricalLaw {
            time: horizon / 2.0,
            points: ensemble.iter().map(|s| s.0).collect(),
        };
        let fast_full = EmpiricalLaw {
            time: horizon,
            points: ensemble.iter().map(|s| s.1).collect(),
        };
        let distance_half = law_distance(&fast_half, &limit_half)?;
        let distance_full = law_distance(&fast_full, &limit_full)?;
        let (dom_fast, dom_limit) = if distance_half >= distance_full {
            (&fast_half, &limit_half)
        } else {
            (&fast_full, &limit_full)
        };
        rows.push(ConvergenceRow {
            epsilon,
            dt: cfg.dt,
            paths,
            distance_half,
            distance_full,
            distance: distance_half.max(distance_full),
            std_error: law_scale(
                dom_fast.len(),
                dom_limit.len(),
                &dom_fast.edge_masses(),
                &dom_limit.edge_masses(),
            ),
            runtime_s,
        });
    }
    Ok(rows)
}

/// Mean martingale defect of a test function over an ensemble.
#[derive(Debug, Clone, Serialize)]
pub struct DefectEstimate {
    pub label: String,
    /// Scale parameter of the ensemble; zero for the limit process itself.
    pub epsilon: f64,
    pub horizon: f64,
    pub paths: usize,
    pub mean: f64,
    pub std_error: f64,
}

/// Defect of `f` along the projected fast-slow motion:
/// `f(Y_T) - f(Y_0) - int_0^T Af(Y_s) ds` averaged over paths, the integral
/// taken by the trapezoid rule on the sample grid. Near the limit this has
/// mean zero up to the averaging error.
pub fn martingale_defect(
    model: &ChainFamily,
    f: &TestFunction,
    x0: FastSlowState,
    cfg: &SimConfig,
) -> Result<DefectEstimate, VerifyError> {
    cfg.ensure_valid()?;
    let motion = LimitMotion::new(model)?;
    let table = motion.drift_table();
    let times = sim::sample_times(cfg.horizon, cfg.grid_points);
    let h = cfg.horizon / (cfg.grid_points - 1) as f64;
    let defects: Vec<f64> = (0..cfg.paths)
        .into_par_iter()
        .map(|k| {
            let mut rng = path_rng(cfg.seed, k as u64);
            let y0 = model.project_h(x0.state, x0.z);
            let mut integral = 0.5 * h * apply_generator_cached(table, f, y0);
            let out = sim::run_fast_slow(
                model,
                cfg,
                x0.state,
                x0.z,
                0.0,
                cfg.horizon,
                None,
                &times[1..],
                |_, _, state, z| {
                    let y = model.project_h(state, z);
                    integral += h * apply_generator_cached(table, f, y);
                },
                |_| {},
                false,
                &mut rng,
            );
            let y_end = model.project_h(out.state, out.z);
            // The final snapshot coincides with the horizon; take back half
            // its weight to complete the trapezoid rule.
            integral -= 0.5 * h * apply_generator_cached(table, f, y_end);
            f.value(y_end) - f.value(y0) - integral
        })
        .collect();
    let (mean, std_error) = stats::mean_se(&defects);
    Ok(DefectEstimate {
        label: f.label().to_string(),
        epsilon: cfg.epsilon,
        horizon: cfg.horizon,
        paths: cfg.paths,
        mean,
        std_error,
    })
}

/// Defect of `f` along the diffusive limit process itself; measures only the
/// discretization of the vertex scheme and of the time integral.
#[allow(clippy::too_many_arguments)]
pub fn limit_defect(
    model: &ChainFamily,
    f: &TestFunction,
    y0: GraphPoint,
    dt: f64,
    horizon: f64,
    paths: usize,
    seed: u64,
    grid_points: usize,
) -> Result<DefectEstimate, VerifyError> {
    assert!(paths > 0 && grid_points >= 2 && dt > 0.0 && horizon > 0.0);
    let motion = LimitMotion::new(model)?;
    let table = motion.drift_table();
    let h = horizon / (grid_points - 1) as f64;
    let defects: Vec<f64> = (0..paths)
        .into_par_iter()
        .map(|k| {
            let mut rng = path_rng(seed, k as u64);
            let path = motion.simulate_diff(y0, horizon, dt, grid_points, &mut rng);
            let mut integral = 0.0;
            for (j, s) in path.samples.iter().enumerate() {
                let w = if j == 0 || j == path.samples.len() - 1 {
                    0.5
                } else {
                    1.0
                };
                integral += w * h * apply_generator_cached(table, f, s.point);
            }
            f.value(path.terminal) - f.value(y0) - integral
        })
        .collect();
    let (mean, std_error) = stats::mean_se(&defects);
    Ok(DefectEstimate {
        label: f.label().to_string(),
        epsilon: 0.0,
        horizon,
        paths,
        mean,
        std_error,
    })
}

/// Class frequencies of transport paths at a first-hitting level above the
/// bifurcation.
#[derive(Debug, Clone, Serialize)]
pub struct BranchingStats {
    pub paths: usize,
    /// Paths that reached the level before the horizon.
    pub hit: usize,
    /// Fraction of hitting paths whose chain state was in class one.
    pub freq_class1: f64,
    pub se: f64,
    /// The drift-weighted branching ratio these frequencies approach.
    pub p1: f64,
    pub mean_hit_time: f64,
}

/// Runs `cfg.paths` paths from `x0` until the slow coordinate first reaches
/// `level` and records the class of the chain state there. For transport
/// started below the bifurcation the class-one frequency approaches the
/// branching ratio as `epsilon` shrinks. Path `k` uses RNG stream `k`.
pub fn branching_frequencies(
    model: &ChainFamily,
    x0: FastSlowState,
    cfg: &SimConfig,
    level: f64,
) -> Result<BranchingStats, VerifyError> {
    cfg.ensure_valid()?;
    if !level.is_finite() || !(x0.z < level) {
        return Err(SimError::BadConfig(format!(
            "hitting level {level} must be finite and above the start z={}",
            x0.z
        ))
        .into());
    }
    let outcomes: Vec<Option<(u8, f64)>> = (0..cfg.paths)
        .into_par_iter()
        .map(|k| {
            let mut rng = path_rng(cfg.seed, k as u64);
            let out = sim::run_fast_slow(
                model,
                cfg,
                x0.state,
                x0.z,
                0.0,
                cfg.horizon,
                Some((f64::NEG_INFINITY, level)),
                &[],
                |_, _, _, _| {},
                |_| {},
                false,
                &mut rng,
            );
            out.boundary.map(|_| (model.class_of(out.state), out.t))
        })
        .collect();
    let hits: Vec<(u8, f64)> = outcomes.into_iter().flatten().collect();
    let hit = hits.len();
    let class1 = hits.iter().filter(|h| h.0 == 1).count();
    let freq_class1 = if hit > 0 {
        class1 as f64 / hit as f64
    } else {
        f64::NAN
    };
    let times: Vec<f64> = hits.iter().map(|h| h.1).collect();
    Ok(BranchingStats {
        paths: cfg.paths,
        hit,
        freq_class1,
        se: if hit > 0 {
            stats::binomial_se(freq_class1, hit)
        } else {
            f64::NAN
        },
        p1: model.classes().branching[0],
        mean_hit_time: if times.is_empty() {
            f64::NAN
        } else {
            pairwise_sum(&times) / times.len() as f64
        },
    })
}

/// Exit frequencies from the band `(-delta, delta)`.
#[derive(Debug, Clone, Serialize)]
pub struct ExitStats {
    pub label: String,
    pub paths: usize,
    /// Paths that left the band before the horizon.
    pub exited: usize,
    /// Frequencies among exited paths: left edge, right in class one, right
    /// in class two.
    pub freq: [f64; 3],
    pub se: [f64; 3],
    pub mean_exit_time: f64,
}

fn exit_stats_from(label: String, outcomes: &[(i8, u8, f64)], total: usize) -> ExitStats {
    let exited = outcomes.len();
    let mut counts = [0usize; 3];
    for &(side, class, _) in outcomes {
        let bucket = if side < 0 { 0 } else { class as usize };
        counts[bucket] += 1;
    }
    let freq = counts.map(|c| if exited > 0 { c as f64 / exited as f64 } else { f64::NAN });
    let se = freq.map(|p| {
        if exited > 0 {
            stats::binomial_se(p, exited)
        } else {
            f64::NAN
        }
    });
    let times: Vec<f64> = outcomes.iter().map(|o| o.2).collect();
    let mean_exit_time = if times.is_empty() {
        f64::NAN
    } else {
        pairwise_sum(&times) / times.len() as f64
    };
    ExitStats {
        label,
        paths: total,
        exited,
        freq,
        se,
        mean_exit_time,
    }
}

/// Runs `cfg.paths` first-exit experiments from `(i, 0)` for every chain
/// state `i` and pools them; the right-side exits are split by the class of
/// the chain state at the exit moment. Start `i` uses streams `i << 32 | k`.
pub fn vertex_exit_probabilities(
    model: &ChainFamily,
    cfg: &SimConfig,
    delta: f64,
) -> Result<Vec<ExitStats>, VerifyError> {
    cfg.ensure_valid()?;
    let n = model.n();
    let mut all = Vec::new();
    let mut pooled = Vec::new();
    for start in 0..n {
        let outcomes: Vec<Option<(i8, u8, f64)>> = (0..cfg.paths)
            .into_par_iter()
            .map(|k| {
                let mut rng = path_rng(cfg.seed, ((start as u64) << 32) | k as u64);
                let out = sim::first_exit(
                    model,
                    FastSlowState { state: start, z: 0.0 },
                    cfg,
                    delta,
                    &mut rng,
                )
                .expect("validated setup");
                match out {
                    ExitOutcome::Exited { t, side, state, .. } => {
                        Some((side, model.class_of(state), t))
                    }
                    ExitOutcome::HorizonExceeded { .. } => None,
                }
            })
            .collect();
        let exited: Vec<(i8, u8, f64)> = outcomes.into_iter().flatten().collect();
        pooled.extend_from_slice(&exited);
        all.push(exit_stats_from(
            format!("state {}", start + 1),
            &exited,
            cfg.paths,
        ));
    }
    all.push(exit_stats_from(
        "pooled".to_string(),
        &pooled,
        cfg.paths * n,
    ));
    Ok(all)
}

/// First-exit frequencies of the diffusive limit motion started at the
/// vertex; the reference values for the fast-slow exit experiment.
pub fn limit_vertex_exits(
    model: &ChainFamily,
    delta: f64,
    dt: f64,
    horizon: f64,
    paths: usize,
    seed: u64,
) -> Result<ExitStats, VerifyError> {
    assert!(paths > 0);
    let motion = LimitMotion::new(model)?;
    let outcomes: Vec<Option<(i8, u8, f64)>> = (0..paths)
        .into_par_iter()
        .map(|k| {
            let mut rng = path_rng(seed, k as u64);
            match motion.first_exit_diff(GraphPoint::vertex(), delta, dt, horizon, &mut rng) {
                LimitExit::Exited { t, edge } => {
                    let (side, class) = match edge {
                        0 => (-1, 0),
                        e => (1, e),
                    };
                    Some((side, class, t))
                }
                LimitExit::HorizonExceeded { .. } => None,
            }
        })
        .collect();
    let exited: Vec<(i8, u8, f64)> = outcomes.into_iter().flatten().collect();
    Ok(exit_stats_from("limit".to_string(), &exited, paths))
}

/// Tail statistics of completed return cycles: a cycle is one passage from
/// the vertex level `z = 0` out to `|z| = delta` and is counted each time the
/// path, having touched level zero, reaches the band edge again.
#[derive(Debug, Clone, Serialize)]
pub struct CycleReport {
    pub delta: f64,
    pub horizon: f64,
    pub paths: usize,
    pub mean_cycles: f64,
    pub se_cycles: f64,
    /// `(j, fraction of paths with at least j cycles)` for `j >= 1`.
    pub survival: Vec<(usize, f64)>,
    /// Least-squares slope of `ln` survival against `j`; negative slopes mean
    /// geometric decay of the cycle count.
    pub log_slope: Option<f64>,
}

pub fn cycle_diagnostic(
    model: &ChainFamily,
    x0: FastSlowState,
    cfg: &SimConfig,
    delta: f64,
) -> Result<CycleReport, VerifyError> {
    cfg.ensure_valid()?;
    if !(delta > 0.0) {
        return Err(SimError::BadConfig(format!(
            "band half-width must be positive, got {delta}"
        ))
        .into());
    }
    let counts: Vec<f64> = (0..cfg.paths)
        .into_par_iter()
        .map(|k| {
            let mut rng = path_rng(cfg.seed, k as u64);
            let mut state = x0.state;
            let mut z = x0.z;
            let mut t = 0.0f64;
            let mut cycles = 0usize;
            let mut seeking_zero = z != 0.0;
            while t < cfg.horizon {
                let band = if seeking_zero {
                    if z > 0.0 {
                        (0.0, f64::INFINITY)
                    } else {
                        (f64::NEG_INFINITY, 0.0)
                    }
                } else {
                    (-delta, delta)
                };
                let out = sim::run_fast_slow(
                    model,
                    cfg,
                    state,
                    z,
                    t,
                    cfg.horizon,
                    Some(band),
                    &[],
                    |_, _, _, _| {},
                    |_| {},
                    false,
                    &mut rng,
                );
                state = out.state;
                t = out.t;
                match out.boundary {
                    None => break,
                    Some(side) => {
                        if seeking_zero {
                            z = 0.0;
                            seeking_zero = false;
                        } else {
                            // Restart exactly at the reached band edge.
                            z = if side < 0 { -delta } else { delta };
                            cycles += 1;
                            seeking_zero = true;
                        }
                    }
                }
            }
            cycles as f64
        })
        .collect();
    let (mean_cycles, se_cycles) = stats::mean_se(&counts);
    let max_count = counts.iter().fold(0.0f64, |m, &c| m.max(c)) as usize;
    let mut survival = Vec::new();
    let mut log_points: Vec<(f64, f64)> = Vec::new();
    for j in 1..=max_count {
        let frac =
            counts.iter().filter(|&&c| c >= j as f64).count() as f64 / counts.len() as f64;
        survival.push((j, frac));
        if frac > 0.0 {
            log_points.push((j as f64, frac.ln()));
        }
    }
    let log_slope = if log_points.len() >= 3 {
        let xs: Vec<f64> = log_points.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = log_points.iter().map(|p| p.1).collect();
        stats::ls_slope(&xs, &ys)
    } else {
        None
    };
    Ok(CycleReport {
        delta,
        horizon: cfg.horizon,
        paths: cfg.paths,
        mean_cycles,
        se_cycles,
        survival,
        log_slope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn law(points: Vec<GraphPoint>) -> EmpiricalLaw {
        EmpiricalLaw { time: 1.0, points }
    }

    #[test]
    fn identical_laws_have_distance_zero() {
        let pts = vec![
            GraphPoint::new(0, -0.5).unwrap(),
            GraphPoint::new(1, 0.25).unwrap(),
            GraphPoint::new(2, 0.1).unwrap(),
        ];
        let a = law(pts.clone());
        let b = law(pts);
        assert_eq!(law_distance(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn mass_moved_across_edges_is_charged_by_total_variation() {
        let a = law(vec![GraphPoint::new(1, 0.5).unwrap(); 10]);
        let b = law(vec![GraphPoint::new(2, 0.5).unwrap(); 10]);
        assert!((law_distance(&a, &b).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn shift_on_one_edge_is_charged_by_weighted_ks() {
        let a = law(vec![
            GraphPoint::new(1, 0.1).unwrap(),
            GraphPoint::new(1, 0.2).unwrap(),
            GraphPoint::new(0, -1.0).unwrap(),
            GraphPoint::new(0, -2.0).unwrap(),
        ]);
        let b = law(vec![
            GraphPoint::new(1, 0.6).unwrap(),
            GraphPoint::new(1, 0.7).unwrap(),
            GraphPoint::new(0, -1.0).unwrap(),
            GraphPoint::new(0, -2.0).unwrap(),
        ]);
        // Edge masses agree; edge-1 samples are disjoint: KS = 1 with weight 1/2.
        assert!((law_distance(&a, &b).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn empty_laws_are_rejected() {
        let a = law(vec![]);
        let b = law(vec![GraphPoint::vertex()]);
        assert!(matches!(law_distance(&a, &b), Err(VerifyError::EmptyLaw)));
    }

    #[test]
    fn constant_functions_have_zero_defect() {
        let model = fixtures::m2();
        let f = TestFunction::constant(2.0, "flat");
        let mut cfg = SimConfig::new(1e-2, 1, 0.1, 3);
        cfg.paths = 16;
        cfg.grid_points = 33;
        let d = martingale_defect(
            &model,
            &f,
            FastSlowState { state: 0, z: -0.2 },
            &cfg,
        )
        .unwrap();
        assert_eq!(d.mean, 0.0);
        assert_eq!(d.std_error, 0.0);
    }

    #[test]
    fn cycle_counts_are_zero_when_the_band_is_never_reached() {
        // Transport with positive drift from z = -3 cannot return to zero
        // within a short horizon, let alone complete a cycle.
        let model = fixtures::m2();
        let mut cfg = SimConfig::new(1e-2, 0, 0.1, 5);
        cfg.paths = 8;
        let rep = cycle_diagnostic(
            &model,
            FastSlowState { state: 0, z: -3.0 },
            &cfg,
            0.05,
        )
        .unwrap();
        assert_eq!(rep.mean_cycles, 0.0);
        assert!(rep.survival.is_empty());
        assert_eq!(rep.log_slope, None);
    }
}
