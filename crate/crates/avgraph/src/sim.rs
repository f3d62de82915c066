//! Path simulation of the coupled fast-slow system.
//!
//! The fast chain jumps at rates `q_ij(z) / epsilon`; between jumps the slow
//! coordinate follows `dz = v(i, z) dt` plus unit noise when `kappa = 1`. The
//! jump times come from the exponential-clock construction: one standard
//! exponential draw per sojourn, crossed by the integrated total rate. Within
//! one proposed step the clock and the slow coordinate are interpolated
//! linearly, so jump and boundary events are located to first order in `dt`;
//! the step size is capped at `epsilon / 10` to keep the clock resolution
//! ahead of the fast time scale.
//!
//! All randomness flows through [`path_rng`]: one ChaCha stream per path index
//! derived from the ensemble seed, which makes every ensemble reproducible and
//! independent of thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::model::ChainFamily;
use crate::verify::EmpiricalLaw;

#[derive(Debug, Clone, thiserror::Error)]
pub enum SimError {
    #[error("step dt={dt} too large for epsilon={epsilon} (need dt <= epsilon / 10)")]
    StepTooLarge { dt: f64, epsilon: f64 },
    #[error("invalid simulation setup: {0}")]
    BadConfig(String),
    #[error("start coordinate z={z} lies outside the band of half-width {delta}")]
    StartOutsideBand { z: f64, delta: f64 },
}

/// One configuration of the fast-slow system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FastSlowState {
    /// Chain state, zero-based.
    pub state: usize,
    pub z: f64,
}

/// Ensemble and discretization parameters. `kappa` selects the slow dynamics
/// (0 transport, 1 additive unit noise) independently of the model's own flag,
/// so a transport fixture can be rerun with noise without editing its config.
#[derive(Debug, Clone, Serialize)]
pub struct SimConfig {
    pub epsilon: f64,
    pub kappa: u8,
    pub dt: f64,
    pub horizon: f64,
    pub paths: usize,
    pub seed: u64,
    /// Number of equally spaced sample times (including both endpoints) kept
    /// per recorded path.
    pub grid_points: usize,
}

impl SimConfig {
    /// Defaults: the largest admissible step `epsilon / 10`, one path, 129
    /// sample times.
    pub fn new(epsilon: f64, kappa: u8, horizon: f64, seed: u64) -> Self {
        Self {
            epsilon,
            kappa,
            dt: epsilon / 10.0,
            horizon,
            paths: 1,
            seed,
            grid_points: 129,
        }
    }

    pub fn ensure_valid(&self) -> Result<(), SimError> {
        if !(self.epsilon > 0.0) {
            return Err(SimError::BadConfig(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.dt > 0.0) {
            return Err(SimError::BadConfig(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if self.dt > self.epsilon / 10.0 {
            return Err(SimError::StepTooLarge {
                dt: self.dt,
                epsilon: self.epsilon,
            });
        }
        if !(self.horizon > 0.0) {
            return Err(SimError::BadConfig(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        if self.kappa > 1 {
            return Err(SimError::BadConfig(format!(
                "kappa must be 0 or 1, got {}",
                self.kappa
            )));
        }
        if self.paths == 0 {
            return Err(SimError::BadConfig("need at least one path".into()));
        }
        if self.grid_points < 2 {
            return Err(SimError::BadConfig("need at least two sample times".into()));
        }
        Ok(())
    }
}

/// Deterministic per-path generator: `seed` selects the ensemble, `stream`
/// the path within it.
pub fn path_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PathSample {
    pub t: f64,
    pub state: usize,
    pub z: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct JumpEvent {
    pub t: f64,
    pub from: usize,
    pub to: usize,
    /// Slow coordinate at the jump; the target was drawn from the rates here.
    pub z: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Path {
    pub samples: Vec<PathSample>,
    pub jumps: Vec<JumpEvent>,
    pub terminal: FastSlowState,
}

/// Diagnostics of one exponential-clock sojourn.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ClockDiagnostics {
    /// The standard exponential threshold for this sojourn.
    pub draw: f64,
    /// Integrated total rate over `epsilon` accumulated when the run ended.
    pub clock: f64,
    /// Whether the clock crossed the threshold before the horizon.
    pub jumped: bool,
}

pub(crate) struct EngineOutcome {
    pub state: usize,
    pub z: f64,
    pub t: f64,
    /// `Some(-1)` if the lower band edge stopped the path, `Some(1)` for the
    /// upper one, `None` otherwise.
    pub boundary: Option<i8>,
    /// Set when the run stopped just before a jump (pre-jump mode).
    pub stopped_at_jump: bool,
    pub last_draw: f64,
    pub last_clock: f64,
}

/// Proposes one step of length `h` from `(i, z)`: the new slow coordinate and
/// the increment of the jump clock (integrated total rate over `epsilon`).
#[inline]
fn propose_step<R: Rng>(
    model: &ChainFamily,
    kappa: u8,
    epsilon: f64,
    i: usize,
    z: f64,
    h: f64,
    rng: &mut R,
) -> (f64, f64) {
    if kappa == 0 {
        // Classical RK4 on the pair (z, clock).
        let f = |z: f64| (model.drift(i, z), model.total_rate(i, z));
        let (k1, q1) = f(z);
        let (k2, q2) = f(z + 0.5 * h * k1);
        let (k3, q3) = f(z + 0.5 * h * k2);
        let (k4, q4) = f(z + h * k3);
        let z_next = z + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        let inc = h / 6.0 * (q1 + 2.0 * q2 + 2.0 * q3 + q4) / epsilon;
        (z_next, inc)
    } else {
        let noise: f64 = rng.sample(StandardNormal);
        let z_next = z + model.drift(i, z) * h + h.sqrt() * noise;
        let inc = 0.5 * h * (model.total_rate(i, z) + model.total_rate(i, z_next)) / epsilon;
        (z_next, inc)
    }
}

/// Draws the jump target from the rates at the event location, falling back to
/// the step endpoints when the total rate vanishes exactly there (possible
/// when the event is smeared across the sign change of `z`).
fn sample_target<R: Rng>(
    model: &ChainFamily,
    i: usize,
    candidates: [f64; 3],
    rng: &mut R,
) -> usize {
    let z = candidates
        .iter()
        .copied()
        .find(|&z| model.total_rate(i, z) > 0.0)
        .expect("a jump event implies a positive total rate somewhere in the step");
    let total = model.total_rate(i, z);
    let mut u = rng.gen::<f64>() * total;
    let mut last = usize::MAX;
    for j in 0..model.n() {
        if j == i {
            continue;
        }
        let q = model.rate(i, j, z);
        if q > 0.0 {
            last = j;
            u -= q;
            if u <= 0.0 {
                return j;
            }
        }
    }
    last
}

/// Core loop shared by every fast-slow driver. Runs from `(state, z)` at time
/// `t` until the horizon, an optional band exit, or (in pre-jump mode) the
/// first jump. Snapshot times must be strictly increasing.
#[allow(clippy::too_many_arguments)]
pub(crate) fn run_fast_slow<R: Rng>(
    model: &ChainFamily,
    cfg: &SimConfig,
    mut state: usize,
    mut z: f64,
    mut t: f64,
    t_end: f64,
    band: Option<(f64, f64)>,
    snapshots: &[f64],
    mut on_snapshot: impl FnMut(usize, f64, usize, f64),
    mut on_jump: impl FnMut(JumpEvent),
    stop_before_jump: bool,
    rng: &mut R,
) -> EngineOutcome {
    let mut snap_idx = snapshots.partition_point(|&s| s <= t);
    let mut draw: f64 = rng.sample(Exp1);
    let mut clock = 0.0f64;
    loop {
        if t >= t_end {
            return EngineOutcome {
                state,
                z,
                t,
                boundary: None,
                stopped_at_jump: false,
                last_draw: draw,
                last_clock: clock,
            };
        }
        let mut t_next = (t + cfg.dt).min(t_end);
        if snap_idx < snapshots.len() {
            t_next = t_next.min(snapshots[snap_idx]);
        }
        let h = t_next - t;
        if h <= 0.0 {
            // Degenerate clamp: we are exactly at a snapshot time.
            on_snapshot(snap_idx, t, state, z);
            snap_idx += 1;
            continue;
        }
        let (z_prop, inc) = propose_step(model, cfg.kappa, cfg.epsilon, state, z, h, rng);

        let theta_jump = if inc > 0.0 && clock + inc >= draw {
            (draw - clock) / inc
        } else {
            f64::INFINITY
        };
        let mut theta_boundary = f64::INFINITY;
        let mut side = 0i8;
        if let Some((lo, hi)) = band {
            let dz = z_prop - z;
            if z <= lo {
                theta_boundary = 0.0;
                side = -1;
            } else if z_prop <= lo && dz < 0.0 {
                theta_boundary = (lo - z) / dz;
                side = -1;
            }
            if z >= hi && theta_boundary > 0.0 {
                theta_boundary = 0.0;
                side = 1;
            } else if z_prop >= hi && dz > 0.0 {
                let th = (hi - z) / dz;
                if th < theta_boundary {
                    theta_boundary = th;
                    side = 1;
                }
            }
        }

        if theta_jump.is_infinite() && theta_boundary.is_infinite() {
            t = t_next;
            z = z_prop;
            clock += inc;
            if snap_idx < snapshots.len() && t >= snapshots[snap_idx] {
                on_snapshot(snap_idx, t, state, z);
                snap_idx += 1;
            }
            continue;
        }

        // The boundary wins ties: a path exactly on the edge has exited.
        if theta_boundary <= theta_jump {
            let theta = theta_boundary.clamp(0.0, 1.0);
            return EngineOutcome {
                state,
                z: z + theta * (z_prop - z),
                t: t + theta * h,
                boundary: Some(side),
                stopped_at_jump: false,
                last_draw: draw,
                last_clock: clock + theta * inc,
            };
        }

        let theta = theta_jump.clamp(0.0, 1.0);
        let t_jump = t + theta * h;
        let z_jump = z + theta * (z_prop - z);
        if stop_before_jump {
            return EngineOutcome {
                state,
                z: z_jump,
                t: t_jump,
                boundary: None,
                stopped_at_jump: true,
                last_draw: draw,
                last_clock: draw,
            };
        }
        let target = sample_target(model, state, [z_jump, z, z_prop], rng);
        on_jump(JumpEvent {
            t: t_jump,
            from: state,
            to: target,
            z: z_jump,
        });
        state = target;
        t = t_jump;
        z = z_jump;
        clock = 0.0;
        draw = rng.sample(Exp1);
    }
}

/// Equally spaced sample times over `[0, horizon]`.
pub(crate) fn sample_times(horizon: f64, grid_points: usize) -> Vec<f64> {
    (0..grid_points)
        .map(|k| horizon * k as f64 / (grid_points - 1) as f64)
        .collect()
}

fn check_state(model: &ChainFamily, x0: FastSlowState) -> Result<(), SimError> {
    if x0.state >= model.n() {
        return Err(SimError::BadConfig(format!(
            "state index {} out of range for n={}",
            x0.state,
            model.n()
        )));
    }
    if !x0.z.is_finite() {
        return Err(SimError::BadConfig(format!(
            "start coordinate must be finite, got {}",
            x0.z
        )));
    }
    Ok(())
}

/// Runs the exponential clock once from `x0`: returns the pre-jump
/// configuration (chain state unchanged), the time reached (jump time or
/// horizon), and the clock diagnostics of the sojourn.
pub fn advance_to_jump<R: Rng>(
    model: &ChainFamily,
    x0: FastSlowState,
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<(FastSlowState, f64, ClockDiagnostics), SimError> {
    cfg.ensure_valid()?;
    check_state(model, x0)?;
    let out = run_fast_slow(
        model,
        cfg,
        x0.state,
        x0.z,
        0.0,
        cfg.horizon,
        None,
        &[],
        |_, _, _, _| {},
        |_| {},
        true,
        rng,
    );
    Ok((
        FastSlowState {
            state: out.state,
            z: out.z,
        },
        out.t,
        ClockDiagnostics {
            draw: out.last_draw,
            clock: out.last_clock,
            jumped: out.stopped_at_jump,
        },
    ))
}

/// Simulates one path on `[0, horizon]`, recording `grid_points` equally
/// spaced samples and every jump.
pub fn simulate_path<R: Rng>(
    model: &ChainFamily,
    x0: FastSlowState,
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<Path, SimError> {
    cfg.ensure_valid()?;
    check_state(model, x0)?;
    let times = sample_times(cfg.horizon, cfg.grid_points);
    let mut samples = Vec::with_capacity(cfg.grid_points);
    samples.push(PathSample {
        t: 0.0,
        state: x0.state,
        z: x0.z,
    });
    let mut jumps = Vec::new();
    let out = run_fast_slow(
        model,
        cfg,
        x0.state,
        x0.z,
        0.0,
        cfg.horizon,
        None,
        &times[1..],
        |_, t, state, z| samples.push(PathSample { t, state, z }),
        |ev| jumps.push(ev),
        false,
        rng,
    );
    Ok(Path {
        samples,
        jumps,
        terminal: FastSlowState {
            state: out.state,
            z: out.z,
        },
    })
}

/// First exit of the slow coordinate from `(-delta, delta)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub enum ExitOutcome {
    Exited {
        t: f64,
        /// `-1` for the left edge, `1` for the right one.
        side: i8,
        state: usize,
        z: f64,
    },
    HorizonExceeded {
        t: f64,
        state: usize,
        z: f64,
    },
}

/// Runs until `|z| >= delta` or the horizon. A start exactly on the band edge
/// exits at time zero.
pub fn first_exit<R: Rng>(
    model: &ChainFamily,
    x0: FastSlowState,
    cfg: &SimConfig,
    delta: f64,
    rng: &mut R,
) -> Result<ExitOutcome, SimError> {
    cfg.ensure_valid()?;
    check_state(model, x0)?;
    if !(delta > 0.0) {
        return Err(SimError::BadConfig(format!(
            "band half-width must be positive, got {delta}"
        )));
    }
    if x0.z.abs() > delta {
        return Err(SimError::StartOutsideBand { z: x0.z, delta });
    }
    let out = run_fast_slow(
        model,
        cfg,
        x0.state,
        x0.z,
        0.0,
        cfg.horizon,
        Some((-delta, delta)),
        &[],
        |_, _, _, _| {},
        |_| {},
        false,
        rng,
    );
    Ok(match out.boundary {
        Some(side) => ExitOutcome::Exited {
            t: out.t,
            side,
            state: out.state,
            z: out.z,
        },
        None => ExitOutcome::HorizonExceeded {
            t: out.t,
            state: out.state,
            z: out.z,
        },
    })
}

/// Terminal law of the projected slow motion over an ensemble: runs
/// `cfg.paths` independent paths from `x0` and projects each terminal
/// configuration onto the limit graph. Path `k` uses RNG stream `k`, so the
/// result does not depend on how the ensemble is scheduled across threads.
pub fn monte_carlo_law(
    model: &ChainFamily,
    x0: FastSlowState,
    cfg: &SimConfig,
) -> Result<EmpiricalLaw, SimError> {
    cfg.ensure_valid()?;
    check_state(model, x0)?;
    let points: Vec<_> = (0..cfg.paths)
        .into_par_iter()
        .map(|k| {
            let mut rng = path_rng(cfg.seed, k as u64);
            let out = run_fast_slow(
                model,
                cfg,
                x0.state,
                x0.z,
                0.0,
                cfg.horizon,
                None,
                &[],
                |_, _, _, _| {},
                |_| {},
                false,
                &mut rng,
            );
            model.project_h(out.state, out.z)
        })
        .collect();
    Ok(EmpiricalLaw {
        time: cfg.horizon,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn cfg(epsilon: f64, kappa: u8, horizon: f64) -> SimConfig {
        SimConfig::new(epsilon, kappa, horizon, 7)
    }

    #[test]
    fn oversized_steps_are_rejected() {
        let mut c = cfg(1e-2, 0, 1.0);
        c.dt = 2e-3;
        assert!(matches!(
            c.ensure_valid(),
            Err(SimError::StepTooLarge { .. })
        ));
    }

    #[test]
    fn transport_path_stays_inside_the_drift_cone() {
        let model = fixtures::m2();
        let mut c = cfg(1e-2, 0, 0.05);
        c.grid_points = 6;
        let mut rng = path_rng(3, 0);
        let path =
            simulate_path(&model, FastSlowState { state: 0, z: -5.0 }, &c, &mut rng).unwrap();
        assert_eq!(path.samples.len(), 6);
        // Drifts are 1 and 2, so the terminal point lies between the extremes.
        let end = path.terminal.z;
        assert!((-5.0 + 0.05 - 1e-12..=-5.0 + 0.10 + 1e-12).contains(&end));
        assert!((path.samples.last().unwrap().t - 0.05).abs() < 1e-15);
    }

    #[test]
    fn pre_jump_run_keeps_the_chain_state_and_crosses_the_clock() {
        let model = fixtures::m2();
        let c = cfg(1e-3, 0, 10.0);
        // Far in the tail both rates are 1, so a jump is essentially certain.
        let mut rng = path_rng(5, 0);
        let (pre, t, diag) =
            advance_to_jump(&model, FastSlowState { state: 1, z: -50.0 }, &c, &mut rng).unwrap();
        assert!(diag.jumped);
        assert_eq!(pre.state, 1);
        assert!(t > 0.0 && t < 10.0);
        assert!((diag.clock - diag.draw).abs() < 1e-12);
        // Sojourn times in the tail are Exp(1/epsilon): t = epsilon * draw up
        // to the linear-in-step interpolation error.
        assert!((t - c.epsilon * diag.draw).abs() < 2.0 * c.dt);
    }

    #[test]
    fn paths_with_equal_seed_and_stream_agree() {
        let model = fixtures::m2();
        let c = cfg(1e-2, 1, 0.2);
        let x0 = FastSlowState { state: 0, z: -0.1 };
        let a = simulate_path(&model, x0, &c, &mut path_rng(11, 4)).unwrap();
        let b = simulate_path(&model, x0, &c, &mut path_rng(11, 4)).unwrap();
        assert_eq!(a.terminal, b.terminal);
        assert_eq!(a.jumps.len(), b.jumps.len());
        let c2 = simulate_path(&model, x0, &c, &mut path_rng(11, 5)).unwrap();
        assert!(a.terminal != c2.terminal || a.jumps.len() != c2.jumps.len());
    }

    #[test]
    fn first_exit_reports_an_immediate_start_on_the_edge() {
        let model = fixtures::m2();
        let c = cfg(1e-2, 1, 1.0);
        let out = first_exit(
            &model,
            FastSlowState { state: 0, z: 0.05 },
            &c,
            0.05,
            &mut path_rng(1, 0),
        )
        .unwrap();
        match out {
            ExitOutcome::Exited { t, side, .. } => {
                assert_eq!(t, 0.0);
                assert_eq!(side, 1);
            }
            other => panic!("expected an immediate exit, got {other:?}"),
        }
    }

    #[test]
    fn start_outside_the_band_is_rejected() {
        let model = fixtures::m2();
        let c = cfg(1e-2, 1, 1.0);
        assert!(matches!(
            first_exit(
                &model,
                FastSlowState { state: 0, z: 0.2 },
                &c,
                0.05,
                &mut path_rng(1, 0)
            ),
            Err(SimError::StartOutsideBand { .. })
        ));
    }

    #[test]
    fn law_is_reproducible_across_calls() {
        let model = fixtures::m2();
        let mut c = cfg(1e-2, 1, 0.1);
        c.paths = 64;
        let x0 = FastSlowState { state: 0, z: -0.05 };
        let a = monte_carlo_law(&model, x0, &c).unwrap();
        let b = monte_carlo_law(&model, x0, &c).unwrap();
        assert_eq!(a.points, b.points);
    }
}
