//! Parametrized family of fast chains with a bifurcating invariant structure.
//!
//! A `ChainFamily` describes, for each position `z` of the slow variable, a
//! continuous-time Markov chain on `n` states together with per-state drifts.
//! For `z < 0` the chain is irreducible; at `z = 0` every rate between the two
//! state classes `R1 = {0..m-1}` and `R2 = {m..n-1}` vanishes with a common
//! power of `-z`, so for `z >= 0` the chain splits into two closed classes.
//!
//! Construction always goes through [`ChainFamily::validate`], which checks the
//! structural requirements on a fixed grid and precomputes the class data
//! (boundary distribution, class masses, branching ratios, vertex weights)
//! that the rest of the crate consumes.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg;

/// Spacing of the validation grid over `[-cutoff - 1, cutoff + 1]`.
pub const GRID_STEP: f64 = 1e-3;
/// Hard cap on the chain size.
pub const MAX_STATES: usize = 64;
/// Tolerance for tail-constancy and continuity checks.
const TAIL_TOL: f64 = 1e-9;
/// Convergence threshold for the boundary-distribution iteration.
const PI_TOL: f64 = 1e-9;
/// Maximum allowed gap between the computed boundary distribution and the
/// aggregated two-class cross-check.
const PI_ORACLE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, thiserror::Error)]
pub enum ModelError {
    #[error("rate q[{i}->{j}] is negative at z={z}: {value}")]
    NegativeRate { i: usize, j: usize, z: f64, value: f64 },
    #[error("block structure broken: {reason} (pair {i}->{j}, z={z})")]
    BrokenBlockStructure {
        i: usize,
        j: usize,
        z: f64,
        reason: &'static str,
    },
    #[error("{what} is not constant beyond the cutoff: value {value} at z={z}, tail {tail}")]
    MissingTailConstancy {
        what: String,
        z: f64,
        value: f64,
        tail: f64,
    },
    #[error("drift v[{i}] must be positive for a kappa=0 model: {value} at z={z}")]
    NonPositiveDrift { i: usize, z: f64, value: f64 },
    #[error("class split m={m} invalid for n={n} (need 1 <= m < n, n in 2..={MAX_STATES})")]
    BadClassSplit { n: usize, m: usize },
    #[error("cross-class rates must share one degeneracy exponent: q[{i}->{j}] has {found}, expected {expected}")]
    ExponentMismatch {
        i: usize,
        j: usize,
        expected: f64,
        found: f64,
    },
    #[error("linear solve failed while {context}")]
    SingularSolve { context: &'static str },
    #[error("{what} did not converge (last difference {last_diff:e})")]
    NoConvergence { what: &'static str, last_diff: f64 },
    #[error("boundary distribution disagrees with the aggregated two-class value by {gap:e}")]
    BoundaryMismatch { gap: f64 },
    #[error("coordinate {coord} is not admissible on edge {edge}")]
    EdgeCoordMismatch { edge: u8, coord: f64 },
    #[error("invalid model data: {0}")]
    BadData(String),
}

/// Piecewise-linear function of `z`, constant beyond its outermost breakpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinear {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl PiecewiseLinear {
    pub fn new(points: &[(f64, f64)]) -> Result<Self, ModelError> {
        if points.is_empty() {
            return Err(ModelError::BadData(
                "piecewise-linear table needs at least one point".into(),
            ));
        }
        for w in points.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(ModelError::BadData(format!(
                    "piecewise-linear breakpoints must increase strictly ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(ModelError::BadData(
                "piecewise-linear table contains a non-finite entry".into(),
            ));
        }
        Ok(Self {
            xs: points.iter().map(|p| p.0).collect(),
            ys: points.iter().map(|p| p.1).collect(),
        })
    }

    pub fn constant(y: f64) -> Self {
        Self {
            xs: vec![0.0],
            ys: vec![y],
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        let k = match self.xs.partition_point(|&bx| bx <= x) {
            0 => 1,
            k => k,
        };
        let (x0, x1) = (self.xs[k - 1], self.xs[k]);
        let (y0, y1) = (self.ys[k - 1], self.ys[k]);
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.xs
    }
}

/// Rate profile for one ordered pair of states.
#[derive(Debug, Clone, PartialEq)]
pub enum RateSpec {
    /// Cross-class profile: zero for `z >= 0`, `qbar * (-z)^p * (1 + beta(z))`
    /// on `(-cutoff, 0)`, and the constant `tail_left` at and below `-cutoff`.
    Degenerate {
        qbar: f64,
        exponent: f64,
        beta: PiecewiseLinear,
        tail_left: f64,
    },
    /// Within-class profile: an arbitrary piecewise-linear function of `z`.
    Table(PiecewiseLinear),
}

impl RateSpec {
    pub fn eval(&self, z: f64, cutoff: f64) -> f64 {
        match self {
            RateSpec::Degenerate {
                qbar,
                exponent,
                beta,
                tail_left,
            } => {
                if z >= 0.0 {
                    0.0
                } else if z <= -cutoff {
                    *tail_left
                } else {
                    // The unit exponent dominates in practice; skip powf there.
                    let power = if *exponent == 1.0 {
                        -z
                    } else {
                        (-z).powf(*exponent)
                    };
                    qbar * power * (1.0 + beta.eval(z))
                }
            }
            RateSpec::Table(t) => t.eval(z),
        }
    }

    fn breakpoints(&self) -> &[f64] {
        match self {
            RateSpec::Degenerate { beta, .. } => beta.breakpoints(),
            RateSpec::Table(t) => t.breakpoints(),
        }
    }
}

/// A point of the three-edge limit graph. Edge 0 carries coordinates `z <= 0`,
/// edges 1 and 2 carry `z >= 0`; the shared vertex is stored canonically as
/// `(edge 0, coord 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphPoint {
    edge: u8,
    coord: f64,
}

impl GraphPoint {
    pub fn new(edge: u8, coord: f64) -> Result<Self, ModelError> {
        let ok = match edge {
            0 => coord <= 0.0,
            1 | 2 => coord >= 0.0,
            _ => false,
        };
        if !ok || !coord.is_finite() {
            return Err(ModelError::EdgeCoordMismatch { edge, coord });
        }
        if coord == 0.0 {
            Ok(Self::vertex())
        } else {
            Ok(Self { edge, coord })
        }
    }

    pub fn vertex() -> Self {
        Self {
            edge: 0,
            coord: 0.0,
        }
    }

    pub fn edge(&self) -> u8 {
        self.edge
    }

    pub fn coord(&self) -> f64 {
        self.coord
    }

    pub fn is_vertex(&self) -> bool {
        self.coord == 0.0
    }

    /// Distance from the vertex along the carrying edge.
    pub fn arc(&self) -> f64 {
        self.coord.abs()
    }
}

/// Path metric on the graph: along one edge the usual distance, across edges
/// the sum of both distances to the vertex.
pub fn graph_distance(a: GraphPoint, b: GraphPoint) -> f64 {
    if a.edge == b.edge {
        (a.coord - b.coord).abs()
    } else {
        a.arc() + b.arc()
    }
}

/// Raw model data before validation.
#[derive(Debug, Clone)]
pub struct ModelParts {
    pub n: usize,
    pub m: usize,
    pub cutoff: f64,
    pub kappa: u8,
    /// Row-major `n x n`; diagonal entries must be `None`.
    pub rates: Vec<Option<RateSpec>>,
    pub drifts: Vec<PiecewiseLinear>,
}

impl ModelParts {
    fn rate_spec(&self, i: usize, j: usize) -> Option<&RateSpec> {
        self.rates[i * self.n + j].as_ref()
    }

    fn rate(&self, i: usize, j: usize, z: f64) -> f64 {
        self.rate_spec(i, j)
            .map_or(0.0, |s| s.eval(z, self.cutoff))
    }

    fn total_rate(&self, i: usize, z: f64) -> f64 {
        (0..self.n)
            .filter(|&j| j != i)
            .map(|j| self.rate(i, j, z))
            .sum()
    }

    fn drift(&self, i: usize, z: f64) -> f64 {
        self.drifts[i].eval(z)
    }

    fn class_of(&self, i: usize) -> u8 {
        if i < self.m {
            1
        } else {
            2
        }
    }

    fn generator_matrix(&self, z: f64) -> DMatrix<f64> {
        let n = self.n;
        let mut q = DMatrix::zeros(n, n);
        for i in 0..n {
            let mut row_sum = 0.0;
            for j in 0..n {
                if i == j {
                    continue;
                }
                let v = self.rate(i, j, z);
                q[(i, j)] = v;
                row_sum += v;
            }
            q[(i, i)] = -row_sum;
        }
        q
    }

    /// Invariant distribution of the full chain for `z < 0`.
    fn invariant_left(&self, z: f64) -> Result<(DVector<f64>, f64), ModelError> {
        let q = self.generator_matrix(z);
        linalg::unit_sum_null_space(&q.transpose())
            .map_err(|_| ModelError::SingularSolve {
                context: "computing the invariant distribution",
            })
    }

    /// Invariant distribution of one closed class (1 or 2) with the cross
    /// rates removed; valid for every `z`. Returned over the class indices.
    fn class_invariant(&self, class: u8, z: f64) -> Result<DVector<f64>, ModelError> {
        let idx: Vec<usize> = (0..self.n).filter(|&i| self.class_of(i) == class).collect();
        let k = idx.len();
        if k == 1 {
            return Ok(DVector::from_element(1, 1.0));
        }
        let mut q = DMatrix::zeros(k, k);
        for (a, &i) in idx.iter().enumerate() {
            let mut row_sum = 0.0;
            for (b, &j) in idx.iter().enumerate() {
                if a == b {
                    continue;
                }
                let v = self.rate(i, j, z);
                q[(a, b)] = v;
                row_sum += v;
            }
            q[(a, a)] = -row_sum;
        }
        let (mu, _) = linalg::unit_sum_null_space(&q.transpose()).map_err(|_| {
            ModelError::SingularSolve {
                context: "computing a class invariant distribution",
            }
        })?;
        Ok(mu)
    }

    /// Boundary distribution `pi = lim_{z -> 0-} mu(z)`, computed by solving at
    /// `z = -10^-k` and extrapolating successive pairs linearly to zero. The
    /// iteration stops at the first `k` whose extrapolant agrees with the
    /// previous one to within `PI_TOL` in the max norm.
    fn limit_pi(&self) -> Result<LimitPi, ModelError> {
        let mut mus: Vec<DVector<f64>> = Vec::new();
        let mut raw_diffs = Vec::new();
        let mut extrapolants: Vec<DVector<f64>> = Vec::new();
        let mut extr_diffs = Vec::new();
        let mut last_diff = f64::NAN;
        for k in 2..=8u32 {
            let z = -(10f64.powi(-(k as i32)));
            let (mu, _) = self.invariant_left(z)?;
            if let Some(prev) = mus.last() {
                raw_diffs.push((&mu - prev).amax());
                // Linear extrapolation to z = 0 from the pair (10^-k+1, 10^-k).
                let extr = &mu + (&mu - prev) / 9.0;
                if let Some(pe) = extrapolants.last() {
                    let d = (&extr - pe).amax();
                    extr_diffs.push(d);
                    last_diff = d;
                    if d < PI_TOL {
                        extrapolants.push(extr);
                        let mut pi = extrapolants.last().unwrap().clone();
                        for x in pi.iter_mut() {
                            if *x < 0.0 {
                                *x = 0.0;
                            }
                        }
                        let total = linalg::pairwise_sum(pi.as_slice());
                        if total <= 0.0 {
                            return Err(ModelError::SingularSolve {
                                context: "normalizing the boundary distribution",
                            });
                        }
                        pi /= total;
                        return Ok(LimitPi {
                            pi,
                            converged_k: k,
                            raw_diffs,
                            extrapolant_diffs: extr_diffs,
                        });
                    }
                }
                extrapolants.push(extr);
            }
            mus.push(mu);
        }
        Err(ModelError::NoConvergence {
            what: "boundary distribution iteration",
            last_diff,
        })
    }

    /// Independent value for `pi` from the aggregated two-class jump chain:
    /// freeze the within-class distributions at `z = 0`, aggregate the leading
    /// cross coefficients into effective switch rates, and split the mass by
    /// the resulting two-state balance.
    fn aggregated_pi(&self) -> Result<DVector<f64>, ModelError> {
        let mu1 = self.class_invariant(1, 0.0)?;
        let mu2 = self.class_invariant(2, 0.0)?;
        let qbar = |i: usize, j: usize| -> f64 {
            match self.rate_spec(i, j) {
                Some(RateSpec::Degenerate { qbar, .. }) => *qbar,
                _ => 0.0,
            }
        };
        let mut rho12 = 0.0;
        for (a, i) in (0..self.m).enumerate() {
            let mut out = 0.0;
            for j in self.m..self.n {
                out += qbar(i, j);
            }
            rho12 += mu1[a] * out;
        }
        let mut rho21 = 0.0;
        for (a, i) in (self.m..self.n).enumerate() {
            let mut out = 0.0;
            for j in 0..self.m {
                out += qbar(i, j);
            }
            rho21 += mu2[a] * out;
        }
        let total = rho12 + rho21;
        if total <= 0.0 {
            return Err(ModelError::SingularSolve {
                context: "aggregating the cross-class switch rates",
            });
        }
        let (w1, w2) = (rho21 / total, rho12 / total);
        let mut pi = DVector::zeros(self.n);
        for (a, i) in (0..self.m).enumerate() {
            pi[i] = w1 * mu1[a];
        }
        for (a, i) in (self.m..self.n).enumerate() {
            pi[i] = w2 * mu2[a];
        }
        Ok(pi)
    }
}

/// Result of the boundary-distribution iteration, kept for diagnostics.
#[derive(Debug, Clone)]
pub struct LimitPi {
    pub pi: DVector<f64>,
    /// Exponent `k` of the level `z = -10^-k` at which the iteration stopped.
    pub converged_k: u32,
    pub raw_diffs: Vec<f64>,
    pub extrapolant_diffs: Vec<f64>,
}

/// Quantities derived from the boundary distribution, computed once during
/// validation.
#[derive(Debug, Clone)]
pub struct ClassData {
    /// Boundary distribution over all `n` states.
    pub pi: DVector<f64>,
    /// Class masses `(pi_bar_1, pi_bar_2)`.
    pub pi_bar: [f64; 2],
    /// Drift-weighted branching ratios `(p1, p2)`.
    pub branching: [f64; 2],
    /// Edge weights of the vertex condition for the diffusive limit:
    /// `(1/2, pi_bar_1/2, pi_bar_2/2)`.
    pub vertex_weights: [f64; 3],
    /// `pi_i * v_i(0)`, the unnormalized left null row of the boundary rate
    /// balance, split over classes by restriction.
    pub pi_v: DVector<f64>,
    /// Averaged drifts at the vertex: `(edge 0, edge 1, edge 2)`.
    pub vbar0: [f64; 3],
    /// Within-class invariant distributions at `z = 0` (over class indices).
    pub class_mu0: [DVector<f64>; 2],
    /// Level at which the boundary iteration converged.
    pub converged_k: u32,
    /// Max-norm gap against the aggregated two-class cross-check.
    pub oracle_gap: f64,
}

/// Invariant distribution of the fast chain at one `z`, with the max-norm
/// residual of the balance equations.
#[derive(Debug, Clone)]
pub struct InvariantRow {
    pub mu: DVector<f64>,
    pub residual: f64,
}

/// Validated model. All structural invariants hold and the class data has been
/// precomputed; the type can only be obtained through [`ChainFamily::validate`].
#[derive(Debug, Clone)]
pub struct ChainFamily {
    parts: ModelParts,
    classes: ClassData,
    shared_far_drift: Option<f64>,
}

impl ChainFamily {
    /// Checks the structural requirements on the validation grid, computes the
    /// boundary distribution and class data, and returns the sealed model.
    pub fn validate(parts: ModelParts) -> Result<Self, ModelError> {
        let n = parts.n;
        let m = parts.m;
        if !(2..=MAX_STATES).contains(&n) || m == 0 || m >= n {
            return Err(ModelError::BadClassSplit { n, m });
        }
        if !(parts.cutoff > 0.0) || !parts.cutoff.is_finite() {
            return Err(ModelError::BadData(format!(
                "cutoff must be positive and finite, got {}",
                parts.cutoff
            )));
        }
        if parts.kappa > 1 {
            return Err(ModelError::BadData(format!(
                "kappa must be 0 or 1, got {}",
                parts.kappa
            )));
        }
        if parts.rates.len() != n * n || parts.drifts.len() != n {
            return Err(ModelError::BadData(
                "rate or drift table size does not match n".into(),
            ));
        }
        for i in 0..n {
            if parts.rates[i * n + i].is_some() {
                return Err(ModelError::BadData(format!(
                    "diagonal rate entry {0}->{0} must be absent",
                    i + 1
                )));
            }
        }

        let mut common_exponent: Option<(usize, usize, f64)> = None;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let cross = parts.class_of(i) != parts.class_of(j);
                let spec = parts.rate_spec(i, j).ok_or_else(|| {
                    ModelError::BadData(format!("missing rate entry {}->{}", i + 1, j + 1))
                })?;
                match (cross, spec) {
                    (
                        true,
                        RateSpec::Degenerate {
                            qbar,
                            exponent,
                            beta,
                            tail_left,
                        },
                    ) => {
                        if !(*qbar > 0.0) || !(*exponent > 0.0) || *tail_left < 0.0 {
                            return Err(ModelError::BadData(format!(
                                "degenerate rate {}->{} needs qbar > 0, exponent > 0, tail_left >= 0",
                                i + 1,
                                j + 1
                            )));
                        }
                        match common_exponent {
                            None => common_exponent = Some((i, j, *exponent)),
                            Some((_, _, p)) if (p - *exponent).abs() > 0.0 => {
                                return Err(ModelError::ExponentMismatch {
                                    i,
                                    j,
                                    expected: p,
                                    found: *exponent,
                                })
                            }
                            _ => {}
                        }
                        let near_zero = beta.eval(-1e-9);
                        if near_zero.abs() > 1e-6 {
                            return Err(ModelError::BadData(format!(
                                "beta for {}->{} must vanish at z=0-, found {}",
                                i + 1,
                                j + 1,
                                near_zero
                            )));
                        }
                        let at_cut =
                            qbar * parts.cutoff.powf(*exponent) * (1.0 + beta.eval(-parts.cutoff));
                        if (at_cut - tail_left).abs() > TAIL_TOL * at_cut.abs().max(1.0) {
                            return Err(ModelError::MissingTailConstancy {
                                what: format!("rate q[{}->{}]", i + 1, j + 1),
                                z: -parts.cutoff,
                                value: at_cut,
                                tail: *tail_left,
                            });
                        }
                    }
                    (true, RateSpec::Table(_)) => {
                        return Err(ModelError::BrokenBlockStructure {
                            i,
                            j,
                            z: 0.0,
                            reason: "cross-class rate must use the degeneracy profile",
                        })
                    }
                    (false, RateSpec::Degenerate { .. }) => {
                        return Err(ModelError::BrokenBlockStructure {
                            i,
                            j,
                            z: 0.0,
                            reason: "within-class rate must use the table profile",
                        })
                    }
                    (false, RateSpec::Table(_)) => {}
                }
            }
        }

        for z in validation_grid(parts.cutoff) {
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let v = parts.rate(i, j, z);
                    if v < 0.0 {
                        return Err(ModelError::NegativeRate { i, j, z, value: v });
                    }
                    let cross = parts.class_of(i) != parts.class_of(j);
                    if cross && z >= 0.0 && v != 0.0 {
                        return Err(ModelError::BrokenBlockStructure {
                            i,
                            j,
                            z,
                            reason: "cross-class rate must vanish for z >= 0",
                        });
                    }
                    if cross && z < 0.0 && v <= 0.0 {
                        return Err(ModelError::BrokenBlockStructure {
                            i,
                            j,
                            z,
                            reason: "cross-class rate must be positive for z < 0",
                        });
                    }
                    if !cross && v <= 0.0 {
                        return Err(ModelError::BrokenBlockStructure {
                            i,
                            j,
                            z,
                            reason: "within-class rate must stay positive",
                        });
                    }
                    let tail = if z <= -parts.cutoff {
                        Some(parts.rate(i, j, -parts.cutoff))
                    } else if z >= parts.cutoff {
                        Some(parts.rate(i, j, parts.cutoff))
                    } else {
                        None
                    };
                    if let Some(tv) = tail {
                        if (v - tv).abs() > TAIL_TOL * tv.abs().max(1.0) {
                            return Err(ModelError::MissingTailConstancy {
                                what: format!("rate q[{}->{}]", i + 1, j + 1),
                                z,
                                value: v,
                                tail: tv,
                            });
                        }
                    }
                }
                let v = parts.drift(i, z);
                if parts.kappa == 0 && v <= 0.0 {
                    return Err(ModelError::NonPositiveDrift { i, z, value: v });
                }
                let tail = if z <= -parts.cutoff {
                    Some(parts.drift(i, -parts.cutoff))
                } else if z >= parts.cutoff {
                    Some(parts.drift(i, parts.cutoff))
                } else {
                    None
                };
                if let Some(tv) = tail {
                    if (v - tv).abs() > TAIL_TOL * tv.abs().max(1.0) {
                        return Err(ModelError::MissingTailConstancy {
                            what: format!("drift v[{}]", i + 1),
                            z,
                            value: v,
                            tail: tv,
                        });
                    }
                }
            }
        }

        let limit = parts.limit_pi()?;
        let oracle = parts.aggregated_pi()?;
        let gap = (&limit.pi - &oracle).amax();
        if gap > PI_ORACLE_TOL {
            return Err(ModelError::BoundaryMismatch { gap });
        }

        let pi = limit.pi;
        let pi_bar1 = linalg::pairwise_sum(&pi.as_slice()[..m]);
        let pi_bar2 = 1.0 - pi_bar1;
        let pi_v = DVector::from_fn(n, |i, _| pi[i] * parts.drift(i, 0.0));
        let s1 = linalg::pairwise_sum(&pi_v.as_slice()[..m]);
        let s2 = linalg::pairwise_sum(&pi_v.as_slice()[m..]);
        let branching = if s1 + s2 > 0.0 {
            [s1 / (s1 + s2), s2 / (s1 + s2)]
        } else {
            [pi_bar1, pi_bar2]
        };
        let mu1 = parts.class_invariant(1, 0.0)?;
        let mu2 = parts.class_invariant(2, 0.0)?;
        let vbar0 = [
            (0..n).map(|i| pi[i] * parts.drift(i, 0.0)).sum::<f64>(),
            (0..m).map(|i| mu1[i] * parts.drift(i, 0.0)).sum::<f64>(),
            (m..n)
                .map(|i| mu2[i - m] * parts.drift(i, 0.0))
                .sum::<f64>(),
        ];
        let classes = ClassData {
            pi,
            pi_bar: [pi_bar1, pi_bar2],
            branching,
            vertex_weights: [0.5, pi_bar1 / 2.0, pi_bar2 / 2.0],
            pi_v,
            vbar0,
            class_mu0: [mu1, mu2],
            converged_k: limit.converged_k,
            oracle_gap: gap,
        };

        let far = parts.drift(0, parts.cutoff + 1.0);
        let shared = (0..n).all(|i| {
            (parts.drift(i, parts.cutoff + 1.0) - far).abs() <= TAIL_TOL
                && (parts.drift(i, -parts.cutoff - 1.0) - far).abs() <= TAIL_TOL
        });

        Ok(Self {
            parts,
            classes,
            shared_far_drift: shared.then_some(far),
        })
    }

    pub fn n(&self) -> usize {
        self.parts.n
    }

    pub fn m(&self) -> usize {
        self.parts.m
    }

    pub fn cutoff(&self) -> f64 {
        self.parts.cutoff
    }

    pub fn kappa(&self) -> u8 {
        self.parts.kappa
    }

    /// Class label (1 or 2) of a state.
    pub fn class_of(&self, i: usize) -> u8 {
        self.parts.class_of(i)
    }

    pub fn classes(&self) -> &ClassData {
        &self.classes
    }

    /// Far-field drift value if every state shares one constant tail on both
    /// sides; `None` otherwise.
    pub fn shared_far_drift(&self) -> Option<f64> {
        self.shared_far_drift
    }

    pub fn rate(&self, i: usize, j: usize, z: f64) -> f64 {
        self.parts.rate(i, j, z)
    }

    /// Total outgoing rate of state `i` at `z`.
    pub fn total_rate(&self, i: usize, z: f64) -> f64 {
        self.parts.total_rate(i, z)
    }

    pub fn drift(&self, i: usize, z: f64) -> f64 {
        self.parts.drift(i, z)
    }

    /// Generator of the fast chain at `z`; rows sum to zero exactly.
    pub fn generator_matrix(&self, z: f64) -> DMatrix<f64> {
        self.parts.generator_matrix(z)
    }

    /// Invariant distribution at `z`. For `z < 0` this solves the full balance
    /// equations; for `z >= 0`, where the simplex of invariant measures is an
    /// interval, it returns the selected member that continues the `z < 0`
    /// branch: class weights frozen at the boundary masses, within-class
    /// factors from the closed-class balances at `z`.
    pub fn invariant_distribution(&self, z: f64) -> Result<InvariantRow, ModelError> {
        let n = self.parts.n;
        let mu = if z < 0.0 {
            self.parts.invariant_left(z)?.0
        } else {
            let mu1 = self.parts.class_invariant(1, z)?;
            let mu2 = self.parts.class_invariant(2, z)?;
            let [w1, w2] = self.classes.pi_bar;
            let mut mu = DVector::zeros(n);
            for i in 0..self.parts.m {
                mu[i] = w1 * mu1[i];
            }
            for i in self.parts.m..n {
                mu[i] = w2 * mu2[i - self.parts.m];
            }
            mu
        };
        let residual = (self.generator_matrix(z).transpose() * &mu).amax();
        Ok(InvariantRow { mu, residual })
    }

    /// Invariant distribution of one closed class at `z`, over class indices.
    pub fn class_invariant(&self, class: u8, z: f64) -> Result<DVector<f64>, ModelError> {
        self.parts.class_invariant(class, z)
    }

    /// Boundary distribution `lim_{z -> 0-} mu(z)`, recomputed from scratch
    /// with its convergence diagnostics.
    pub fn limit_pi(&self) -> Result<LimitPi, ModelError> {
        self.parts.limit_pi()
    }

    /// Averaged slow drift on one edge of the limit graph.
    pub fn averaged_drift(&self, edge: u8, z: f64) -> Result<f64, ModelError> {
        let n = self.parts.n;
        let m = self.parts.m;
        match edge {
            0 => {
                if z > 0.0 {
                    return Err(ModelError::EdgeCoordMismatch { edge, coord: z });
                }
                let mu = if z < 0.0 {
                    self.parts.invariant_left(z)?.0
                } else {
                    self.classes.pi.clone()
                };
                Ok((0..n).map(|i| mu[i] * self.parts.drift(i, z)).sum())
            }
            1 | 2 => {
                if z < 0.0 {
                    return Err(ModelError::EdgeCoordMismatch { edge, coord: z });
                }
                let mu = self.parts.class_invariant(edge, z)?;
                let offset = if edge == 1 { 0 } else { m };
                Ok(mu
                    .iter()
                    .enumerate()
                    .map(|(a, w)| w * self.parts.drift(offset + a, z))
                    .sum())
            }
            _ => Err(ModelError::EdgeCoordMismatch { edge, coord: z }),
        }
    }

    /// Projection of a fast-slow configuration onto the limit graph: positions
    /// with `z <= 0` collapse to edge 0, positions with `z > 0` go to the edge
    /// of the state's class.
    pub fn project_h(&self, i: usize, z: f64) -> GraphPoint {
        assert!(i < self.parts.n, "state index out of range");
        if z <= 0.0 {
            GraphPoint { edge: 0, coord: z }
        } else {
            GraphPoint {
                edge: self.parts.class_of(i),
                coord: z,
            }
        }
    }

    /// Breakpoints of every rate and drift profile, plus `0` and the cutoff
    /// fold points; used to split integrals so that piecewise-smooth segments
    /// are integrated exactly.
    pub(crate) fn kink_points(&self, lo: f64, hi: f64) -> Vec<f64> {
        let mut ks = vec![lo, hi];
        let mut push = |x: f64| {
            if x > lo && x < hi {
                ks.push(x);
            }
        };
        push(0.0);
        push(self.parts.cutoff);
        push(-self.parts.cutoff);
        for spec in self.parts.rates.iter().flatten() {
            for &b in spec.breakpoints() {
                push(b);
            }
        }
        for d in &self.parts.drifts {
            for &b in d.breakpoints() {
                push(b);
            }
        }
        ks.sort_by(f64::total_cmp);
        ks.dedup();
        ks
    }
}

/// Validation grid `[-cutoff - 1, cutoff + 1]` with spacing [`GRID_STEP`].
pub fn validation_grid(cutoff: f64) -> impl Iterator<Item = f64> {
    let half = cutoff + 1.0;
    let steps = (2.0 * half / GRID_STEP).round() as usize;
    (0..=steps).map(move |i| -half + GRID_STEP * i as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state_parts() -> ModelParts {
        let beta = PiecewiseLinear::new(&[(-1.0, 0.0), (0.0, 0.0)]).unwrap();
        let cross = RateSpec::Degenerate {
            qbar: 1.0,
            exponent: 1.0,
            beta,
            tail_left: 1.0,
        };
        ModelParts {
            n: 2,
            m: 1,
            cutoff: 1.0,
            kappa: 0,
            rates: vec![None, Some(cross.clone()), Some(cross), None],
            drifts: vec![
                PiecewiseLinear::constant(1.0),
                PiecewiseLinear::constant(2.0),
            ],
        }
    }

    #[test]
    fn piecewise_linear_interpolates_and_clamps() {
        let f = PiecewiseLinear::new(&[(-1.0, 2.0), (0.0, 0.0), (1.0, 4.0)]).unwrap();
        assert_eq!(f.eval(-2.0), 2.0);
        assert_eq!(f.eval(-0.5), 1.0);
        assert_eq!(f.eval(0.5), 2.0);
        assert_eq!(f.eval(3.0), 4.0);
    }

    #[test]
    fn piecewise_linear_rejects_unsorted_tables() {
        assert!(PiecewiseLinear::new(&[(0.0, 1.0), (0.0, 2.0)]).is_err());
        assert!(PiecewiseLinear::new(&[]).is_err());
    }

    #[test]
    fn graph_point_canonicalizes_the_vertex() {
        let p = GraphPoint::new(2, 0.0).unwrap();
        assert!(p.is_vertex());
        assert_eq!(p.edge(), 0);
        assert!(GraphPoint::new(1, -0.5).is_err());
        assert!(GraphPoint::new(0, 0.5).is_err());
        assert!(GraphPoint::new(3, 0.5).is_err());
    }

    #[test]
    fn graph_distance_adds_across_the_vertex() {
        let a = GraphPoint::new(1, 0.3).unwrap();
        let b = GraphPoint::new(2, 0.2).unwrap();
        let c = GraphPoint::new(1, 0.1).unwrap();
        assert!((graph_distance(a, b) - 0.5).abs() < 1e-15);
        assert!((graph_distance(a, c) - 0.2).abs() < 1e-15);
        assert!((graph_distance(a, GraphPoint::vertex()) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn two_state_model_validates_with_even_boundary_mass() {
        let model = ChainFamily::validate(two_state_parts()).unwrap();
        let cd = model.classes();
        assert!((cd.pi[0] - 0.5).abs() < 1e-9);
        assert!((cd.pi[1] - 0.5).abs() < 1e-9);
        assert!((cd.branching[0] - 1.0 / 3.0).abs() < 1e-9);
        assert!((cd.vertex_weights[1] - 0.25).abs() < 1e-9);
        assert_eq!(model.shared_far_drift(), None);
    }

    #[test]
    fn cross_rate_with_table_profile_is_rejected() {
        let mut parts = two_state_parts();
        parts.rates[1] = Some(RateSpec::Table(PiecewiseLinear::constant(1.0)));
        match ChainFamily::validate(parts) {
            Err(ModelError::BrokenBlockStructure { .. }) => {}
            other => panic!("expected broken block structure, got {other:?}"),
        }
    }

    #[test]
    fn nonpositive_drift_is_rejected_for_transport_models() {
        let mut parts = two_state_parts();
        parts.drifts[1] = PiecewiseLinear::constant(-1.0);
        match ChainFamily::validate(parts) {
            Err(ModelError::NonPositiveDrift { i: 1, .. }) => {}
            other => panic!("expected nonpositive drift error, got {other:?}"),
        }
    }

    #[test]
    fn mismatched_exponents_are_rejected() {
        let mut parts = two_state_parts();
        if let Some(RateSpec::Degenerate { exponent, .. }) = parts.rates[2].as_mut() {
            *exponent = 2.0;
        }
        match ChainFamily::validate(parts) {
            Err(ModelError::ExponentMismatch { .. }) => {}
            // A mismatched exponent also breaks tail continuity; either error
            // is structural, but the exponent check runs first.
            other => panic!("expected exponent mismatch, got {other:?}"),
        }
    }

    #[test]
    fn invariant_distribution_is_flat_for_the_symmetric_pair() {
        let model = ChainFamily::validate(two_state_parts()).unwrap();
        for z in [-1.5, -0.7, -0.01] {
            let row = model.invariant_distribution(z).unwrap();
            assert!((row.mu[0] - 0.5).abs() < 1e-12, "z={z}");
            assert!(row.residual < 1e-12);
        }
        let row = model.invariant_distribution(0.5).unwrap();
        assert!((row.mu[0] - 0.5).abs() < 1e-9);
        assert!(row.residual < 1e-12);
    }

    #[test]
    fn averaged_drift_rejects_wrong_side_coordinates() {
        let model = ChainFamily::validate(two_state_parts()).unwrap();
        assert!(model.averaged_drift(0, 0.5).is_err());
        assert!(model.averaged_drift(1, -0.5).is_err());
        let v = model.averaged_drift(0, -0.5).unwrap();
        assert!((v - 1.5).abs() < 1e-12);
    }

    #[test]
    fn projection_splits_by_class_for_positive_z() {
        let model = ChainFamily::validate(two_state_parts()).unwrap();
        assert_eq!(model.project_h(0, -0.2).edge(), 0);
        assert_eq!(model.project_h(0, 0.2).edge(), 1);
        assert_eq!(model.project_h(1, 0.2).edge(), 2);
        assert!(model.project_h(1, 0.0).is_vertex());
    }
}
