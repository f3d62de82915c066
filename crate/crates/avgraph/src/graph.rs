//! Limit motions on the three-edge graph and the test-function machinery.
//!
//! The averaged slow motion lives on edge 0 (coordinates `z <= 0`) and, after
//! reaching the vertex, on edge 1 or 2 (coordinates `z >= 0`). Without noise
//! the motion is transport by the averaged drift and the vertex is crossed
//! once, with the drift-weighted branching ratios deciding the outgoing edge.
//! With unit noise the vertex is recurrent; each step starting there draws an
//! edge from the vertex weights `(1/2, pibar_1/2, pibar_2/2)` and places the
//! path at the absolute value of a noise increment, the scheme of Walsh-type
//! constructions.
//!
//! Averaged drifts are precomputed into a dense interpolation table
//! ([`EdgeDriftTable`]) because every path step needs one; the table spacing
//! keeps its interpolation error near 1e-8, far below every statistical
//! tolerance used here.

use rand::Rng;
use serde::Serialize;

use crate::linalg;
use crate::model::{ChainFamily, GraphPoint, ModelError};

/// Sample spacing of the averaged-drift table.
const DRIFT_TABLE_STEP: f64 = 2.5e-4;

/// Dense samples of the averaged drift on each edge, linearly interpolated.
#[derive(Debug, Clone)]
pub struct EdgeDriftTable {
    step: f64,
    zmax: f64,
    /// Edge 0 indexed by distance `s = -z`, edges 1 and 2 by `z`.
    tables: [Vec<f64>; 3],
}

impl EdgeDriftTable {
    pub fn build(model: &ChainFamily) -> Result<Self, ModelError> {
        let zmax = model.cutoff() + 1.0;
        let step = DRIFT_TABLE_STEP;
        let count = (zmax / step).ceil() as usize + 1;
        let mut tables: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for (edge, table) in tables.iter_mut().enumerate() {
            table.reserve(count);
            for k in 0..count {
                let s = (k as f64 * step).min(zmax);
                let z = if edge == 0 { -s } else { s };
                table.push(model.averaged_drift(edge as u8, z)?);
            }
        }
        Ok(Self { step, zmax, tables })
    }

    /// Averaged drift on `edge` at the signed coordinate `z` carried by that
    /// edge; beyond the sampled range the tail value is used.
    pub fn vbar(&self, edge: u8, z: f64) -> f64 {
        let table = &self.tables[edge as usize];
        let s = z.abs().min(self.zmax);
        let x = s / self.step;
        let k = x.floor() as usize;
        if k + 1 >= table.len() {
            return *table.last().unwrap();
        }
        let frac = x - k as f64;
        table[k] * (1.0 - frac) + table[k + 1] * frac
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct GraphSample {
    pub t: f64,
    pub point: GraphPoint,
}

/// A visit to the vertex that selected an outgoing edge.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BranchEvent {
    pub t: f64,
    pub edge: u8,
}

#[derive(Debug, Clone, Serialize)]
pub struct GraphPath {
    pub samples: Vec<GraphSample>,
    pub branches: Vec<BranchEvent>,
    pub terminal: GraphPoint,
}

/// First exit of a limit path from the ball of radius `delta` around the
/// vertex.
#[derive(Debug, Clone, Copy, Serialize)]
pub enum LimitExit {
    Exited { t: f64, edge: u8 },
    HorizonExceeded { t: f64, point: GraphPoint },
}

/// A validated model together with its drift table and vertex data; the entry
/// point for simulating limit motions.
pub struct LimitMotion<'a> {
    model: &'a ChainFamily,
    table: EdgeDriftTable,
}

fn pick_edge<R: Rng>(weights: [f64; 3], rng: &mut R) -> u8 {
    let u: f64 = rng.gen::<f64>() * (weights[0] + weights[1] + weights[2]);
    if u < weights[0] {
        0
    } else if u < weights[0] + weights[1] {
        1
    } else {
        2
    }
}

impl<'a> LimitMotion<'a> {
    pub fn new(model: &'a ChainFamily) -> Result<Self, ModelError> {
        Ok(Self {
            model,
            table: EdgeDriftTable::build(model)?,
        })
    }

    pub fn model(&self) -> &ChainFamily {
        self.model
    }

    pub fn drift_table(&self) -> &EdgeDriftTable {
        &self.table
    }

    /// One noise-free step of length `h` by the classical RK4 rule on the
    /// carrying edge, with a linear-in-step branch at the vertex.
    fn det_step<R: Rng>(
        &self,
        p: GraphPoint,
        t: f64,
        h: f64,
        rng: &mut R,
        branches: &mut Vec<BranchEvent>,
    ) -> (GraphPoint, f64) {
        let (edge, z) = if p.is_vertex() {
            // Transport leaves the vertex along a drift-weighted branch and
            // spends the whole step on the drawn edge; with nonpositive
            // outgoing drift it simply stalls there.
            let [p1, _] = self.model.classes().branching;
            let e = if rng.gen::<f64>() < p1 { 1 } else { 2 };
            branches.push(BranchEvent { t, edge: e });
            (e, 0.0)
        } else {
            (p.edge(), p.coord())
        };
        let f = |z: f64| self.table.vbar(edge, z);
        let k1 = f(z);
        let k2 = f(z + 0.5 * h * k1);
        let k3 = f(z + 0.5 * h * k2);
        let k4 = f(z + h * k3);
        let z_next = z + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        let crossed = if edge == 0 {
            z_next >= 0.0
        } else {
            z_next <= 0.0
        };
        if crossed && z != 0.0 {
            let theta = (0.0 - z) / (z_next - z);
            return (GraphPoint::vertex(), t + theta.clamp(0.0, 1.0) * h);
        }
        (
            GraphPoint::new(edge, z_next).unwrap_or_else(|_| GraphPoint::vertex()),
            t + h,
        )
    }

    /// One noisy Euler step of length `h`; steps from the vertex follow the
    /// weighted-edge rule, steps that cross the vertex park there.
    fn diff_step<R: Rng>(
        &self,
        p: GraphPoint,
        t: f64,
        h: f64,
        rng: &mut R,
        branches: &mut Vec<BranchEvent>,
    ) -> (GraphPoint, f64) {
        use rand_distr::StandardNormal;
        let noise: f64 = rng.sample(StandardNormal);
        if p.is_vertex() {
            let e = pick_edge(self.model.classes().vertex_weights, rng);
            let d = (h.sqrt() * noise + self.table.vbar(e, 0.0) * h).abs();
            branches.push(BranchEvent { t: t + h, edge: e });
            let coord = if e == 0 { -d } else { d };
            return (
                GraphPoint::new(e, coord).unwrap_or_else(|_| GraphPoint::vertex()),
                t + h,
            );
        }
        let edge = p.edge();
        let z = p.coord();
        let z_next = z + self.table.vbar(edge, z) * h + h.sqrt() * noise;
        let crossed = if edge == 0 {
            z_next >= 0.0
        } else {
            z_next <= 0.0
        };
        if crossed {
            return (GraphPoint::vertex(), t + h);
        }
        (
            GraphPoint::new(edge, z_next).unwrap_or_else(|_| GraphPoint::vertex()),
            t + h,
        )
    }

    fn run<R: Rng>(
        &self,
        y0: GraphPoint,
        t_end: f64,
        dt: f64,
        grid_points: usize,
        diffusive: bool,
        rng: &mut R,
    ) -> GraphPath {
        assert!(dt > 0.0 && t_end > 0.0 && grid_points >= 2);
        let times = crate::sim::sample_times(t_end, grid_points);
        let mut samples = Vec::with_capacity(grid_points);
        samples.push(GraphSample { t: 0.0, point: y0 });
        let mut branches = Vec::new();
        let mut p = y0;
        let mut t = 0.0f64;
        let mut snap_idx = 1usize;
        while t < t_end {
            let mut t_next = (t + dt).min(t_end);
            if snap_idx < times.len() {
                t_next = t_next.min(times[snap_idx]);
            }
            let h = t_next - t;
            if h <= 0.0 {
                samples.push(GraphSample { t, point: p });
                snap_idx += 1;
                continue;
            }
            let (np, nt) = if diffusive {
                self.diff_step(p, t, h, rng, &mut branches)
            } else {
                self.det_step(p, t, h, rng, &mut branches)
            };
            p = np;
            t = nt;
            if snap_idx < times.len() && t >= times[snap_idx] {
                samples.push(GraphSample { t, point: p });
                snap_idx += 1;
            }
        }
        GraphPath {
            samples,
            branches,
            terminal: p,
        }
    }

    /// Noise-free limit path: transport along the averaged drift with one
    /// random branch at the vertex.
    pub fn simulate_det<R: Rng>(
        &self,
        y0: GraphPoint,
        t_end: f64,
        dt: f64,
        grid_points: usize,
        rng: &mut R,
    ) -> GraphPath {
        self.run(y0, t_end, dt, grid_points, false, rng)
    }

    /// Diffusive limit path with the weighted vertex rule.
    pub fn simulate_diff<R: Rng>(
        &self,
        y0: GraphPoint,
        t_end: f64,
        dt: f64,
        grid_points: usize,
        rng: &mut R,
    ) -> GraphPath {
        self.run(y0, t_end, dt, grid_points, true, rng)
    }

    /// First exit of the diffusive limit path from the `delta`-ball around the
    /// vertex; the exit time is located linearly within the crossing step.
    pub fn first_exit_diff<R: Rng>(
        &self,
        y0: GraphPoint,
        delta: f64,
        dt: f64,
        horizon: f64,
        rng: &mut R,
    ) -> LimitExit {
        assert!(delta > 0.0 && dt > 0.0);
        let mut p = y0;
        let mut t = 0.0f64;
        if p.arc() >= delta {
            return LimitExit::Exited { t: 0.0, edge: p.edge() };
        }
        let mut sink = Vec::new();
        while t < horizon {
            let h = dt.min(horizon - t);
            let prev_arc = p.arc();
            let (np, nt) = self.diff_step(p, t, h, rng, &mut sink);
            if np.arc() >= delta {
                let frac = if np.arc() > prev_arc && np.edge() == p.edge() {
                    ((delta - prev_arc) / (np.arc() - prev_arc)).clamp(0.0, 1.0)
                } else {
                    1.0
                };
                return LimitExit::Exited {
                    t: t + frac * (nt - t),
                    edge: np.edge(),
                };
            }
            p = np;
            t = nt;
        }
        LimitExit::HorizonExceeded { t, point: p }
    }
}

/// Convenience wrapper building the drift table per call.
pub fn simulate_limit_det<R: Rng>(
    model: &ChainFamily,
    y0: GraphPoint,
    t_end: f64,
    dt: f64,
    grid_points: usize,
    rng: &mut R,
) -> Result<GraphPath, ModelError> {
    Ok(LimitMotion::new(model)?.simulate_det(y0, t_end, dt, grid_points, rng))
}

/// Convenience wrapper building the drift table per call.
pub fn simulate_limit_diff<R: Rng>(
    model: &ChainFamily,
    y0: GraphPoint,
    t_end: f64,
    dt: f64,
    grid_points: usize,
    rng: &mut R,
) -> Result<GraphPath, ModelError> {
    Ok(LimitMotion::new(model)?.simulate_diff(y0, t_end, dt, grid_points, rng))
}

/// A smooth localized test function on the graph, in the domain of the
/// diffusive limit generator.
///
/// Built by [`make_test_function`]: value one at the vertex, a prescribed
/// generator value `a0` there, cubic-spline falloff to zero jets at distance
/// `support` along every edge. The edge-0 derivative data are tied to the
/// edge 1 and 2 slopes by the vertex gluing rule, and each second derivative
/// satisfies the domain condition `f'' = 2 (a0 - vbar * f')` at the vertex.
#[derive(Debug, Clone)]
pub struct TestFunction {
    label: String,
    shape: Shape,
}

// A handful of these exist per run and none move through hot loops, so the
// size gap between the variants is harmless.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone)]
enum Shape {
    Constant(f64),
    Bump {
        a0: f64,
        support: f64,
        /// Spline coefficients per edge and piece, in powers of the local
        /// distance coordinate.
        edges: [[[f64; 4]; 3]; 3],
    },
}

impl TestFunction {
    /// Constant function; trivially in the domain with generator zero.
    pub fn constant(c: f64, label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            shape: Shape::Constant(c),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Prescribed generator value at the vertex.
    pub fn vertex_generator_value(&self) -> f64 {
        match &self.shape {
            Shape::Constant(_) => 0.0,
            Shape::Bump { a0, .. } => *a0,
        }
    }

    pub fn support(&self) -> Option<f64> {
        match &self.shape {
            Shape::Constant(_) => None,
            Shape::Bump { support, .. } => Some(*support),
        }
    }

    fn piece(&self, p: GraphPoint) -> Option<(&[f64; 4], f64)> {
        match &self.shape {
            Shape::Constant(_) => None,
            Shape::Bump { support, edges, .. } => {
                let s = p.arc();
                if s >= *support {
                    return None;
                }
                let h = support / 3.0;
                let k = ((s / h) as usize).min(2);
                Some((&edges[p.edge() as usize][k], s - k as f64 * h))
            }
        }
    }

    /// Value at a point of the graph.
    pub fn value(&self, p: GraphPoint) -> f64 {
        match &self.shape {
            Shape::Constant(c) => *c,
            Shape::Bump { .. } => match self.piece(p) {
                None => 0.0,
                Some((c, x)) => ((c[3] * x + c[2]) * x + c[1]) * x + c[0],
            },
        }
    }

    /// Derivative in the signed edge coordinate `z`.
    pub fn d1(&self, p: GraphPoint) -> f64 {
        match self.piece(p) {
            None => 0.0,
            Some((c, x)) => {
                let ds = (3.0 * c[3] * x + 2.0 * c[2]) * x + c[1];
                if p.edge() == 0 {
                    -ds
                } else {
                    ds
                }
            }
        }
    }

    /// Second derivative in the edge coordinate.
    pub fn d2(&self, p: GraphPoint) -> f64 {
        match self.piece(p) {
            None => 0.0,
            Some((c, x)) => 6.0 * c[3] * x + 2.0 * c[2],
        }
    }
}

/// Builds the localized test function with edge slopes `(g1, g2)` on edges 1
/// and 2, generator value `a0` at the vertex, and support radius `support`.
/// The edge-0 slope follows from the gluing rule
/// `f'(edge 0) = pibar_1 g1 + pibar_2 g2`.
pub fn make_test_function(
    model: &ChainFamily,
    slopes: (f64, f64),
    a0: f64,
    support: f64,
    label: impl Into<String>,
) -> Result<TestFunction, ModelError> {
    if !(support > 0.0) || !support.is_finite() {
        return Err(ModelError::BadData(format!(
            "test-function support must be positive, got {support}"
        )));
    }
    let cd = model.classes();
    let (g1, g2) = slopes;
    let g0 = cd.pi_bar[0] * g1 + cd.pi_bar[1] * g2;
    // Slopes in the distance coordinate s (s = -z reverses edge 0).
    let slope_s = [-g0, g1, g2];
    let dz_slope = [g0, g1, g2];
    let h = support / 3.0;

    let mut edges = [[[0.0f64; 4]; 3]; 3];
    for edge in 0..3 {
        let curv = 2.0 * (a0 - cd.vbar0[edge] * dz_slope[edge]);
        let mut a = nalgebra::DMatrix::<f64>::zeros(12, 12);
        let mut b = nalgebra::DVector::<f64>::zeros(12);
        // Value, slope and curvature at the vertex end of piece 0.
        a[(0, 0)] = 1.0;
        b[0] = 1.0;
        a[(1, 1)] = 1.0;
        b[1] = slope_s[edge];
        a[(2, 2)] = 2.0;
        b[2] = curv;
        // C2 continuity at the two interior knots.
        for piece in 0..2 {
            let row0 = 3 + piece * 3;
            let lo = piece * 4;
            let hi = (piece + 1) * 4;
            let powers = [1.0, h, h * h, h * h * h];
            for k in 0..4 {
                a[(row0, lo + k)] = powers[k];
            }
            a[(row0, hi)] = -1.0;
            for k in 1..4 {
                a[(row0 + 1, lo + k)] = k as f64 * powers[k - 1];
            }
            a[(row0 + 1, hi + 1)] = -1.0;
            a[(row0 + 2, lo + 2)] = 2.0;
            a[(row0 + 2, lo + 3)] = 6.0 * h;
            a[(row0 + 2, hi + 2)] = -2.0;
        }
        // Zero jet at the outer end of piece 2.
        let lo = 8;
        let powers = [1.0, h, h * h, h * h * h];
        for k in 0..4 {
            a[(9, lo + k)] = powers[k];
        }
        for k in 1..4 {
            a[(10, lo + k)] = k as f64 * powers[k - 1];
        }
        a[(11, lo + 2)] = 2.0;
        a[(11, lo + 3)] = 6.0 * h;

        let x = linalg::solve(&a, &b).map_err(|_| ModelError::SingularSolve {
            context: "assembling a spline test function",
        })?;
        for piece in 0..3 {
            for k in 0..4 {
                edges[edge][piece][k] = x[piece * 4 + k];
            }
        }
    }
    Ok(TestFunction {
        label: label.into(),
        shape: Shape::Bump {
            a0,
            support,
            edges,
        },
    })
}

/// Applies the diffusive-limit generator `(1/2) f'' + vbar f'` at a point; at
/// the vertex the prescribed value `a0` is returned, outside the support zero.
pub fn apply_generator(
    model: &ChainFamily,
    f: &TestFunction,
    y: GraphPoint,
) -> Result<f64, ModelError> {
    match &f.shape {
        Shape::Constant(_) => Ok(0.0),
        Shape::Bump { a0, support, .. } => {
            if y.is_vertex() {
                return Ok(*a0);
            }
            if y.arc() >= *support {
                return Ok(0.0);
            }
            let vbar = model.averaged_drift(y.edge(), y.coord())?;
            Ok(0.5 * f.d2(y) + vbar * f.d1(y))
        }
    }
}

/// Same generator with the averaged drift read from a precomputed table; used
/// inside ensemble loops.
pub(crate) fn apply_generator_cached(
    table: &EdgeDriftTable,
    f: &TestFunction,
    y: GraphPoint,
) -> f64 {
    match &f.shape {
        Shape::Constant(_) => 0.0,
        Shape::Bump { a0, support, .. } => {
            if y.is_vertex() {
                return *a0;
            }
            if y.arc() >= *support {
                return 0.0;
            }
            0.5 * f.d2(y) + table.vbar(y.edge(), y.coord()) * f.d1(y)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::sim::path_rng;

    #[test]
    fn drift_table_matches_direct_averaging() {
        let model = fixtures::m3();
        let table = EdgeDriftTable::build(&model).unwrap();
        for &z in &[-1.4, -0.62, -0.1, -0.004] {
            let direct = model.averaged_drift(0, z).unwrap();
            assert!(
                (table.vbar(0, z) - direct).abs() < 1e-7,
                "z={z}: {} vs {direct}",
                table.vbar(0, z)
            );
        }
        for &z in &[0.0, 0.3, 1.7] {
            for edge in [1u8, 2u8] {
                let direct = model.averaged_drift(edge, z).unwrap();
                assert!((table.vbar(edge, z) - direct).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn det_path_transports_at_the_averaged_speed() {
        // On edge 1 of the two-state model the averaged drift is the constant
        // v_1 = 1, so the path moves linearly.
        let model = fixtures::m2();
        let motion = LimitMotion::new(&model).unwrap();
        let y0 = GraphPoint::new(1, 0.5).unwrap();
        let path = motion.simulate_det(y0, 0.25, 1e-3, 6, &mut path_rng(1, 0));
        assert!(path.branches.is_empty());
        assert_eq!(path.terminal.edge(), 1);
        assert!((path.terminal.coord() - 0.75).abs() < 1e-9);
    }

    #[test]
    fn det_path_from_the_left_branches_once_and_keeps_moving() {
        let model = fixtures::m2();
        let motion = LimitMotion::new(&model).unwrap();
        let y0 = GraphPoint::new(0, -0.3).unwrap();
        // Averaged drift on edge 0 is 1.5 at the vertex and below, so the
        // vertex is reached near t = 0.2.
        let path = motion.simulate_det(y0, 0.5, 1e-4, 6, &mut path_rng(2, 0));
        assert_eq!(path.branches.len(), 1);
        let b = path.branches[0];
        assert!(b.edge == 1 || b.edge == 2);
        assert!((b.t - 0.2).abs() < 1e-2);
        assert_eq!(path.terminal.edge(), b.edge);
        assert!(path.terminal.coord() > 0.0);
    }

    #[test]
    fn diff_path_is_reproducible() {
        let model = fixtures::m2();
        let motion = LimitMotion::new(&model).unwrap();
        let y0 = GraphPoint::vertex();
        let a = motion.simulate_diff(y0, 0.1, 1e-4, 11, &mut path_rng(9, 1));
        let b = motion.simulate_diff(y0, 0.1, 1e-4, 11, &mut path_rng(9, 1));
        assert_eq!(a.terminal, b.terminal);
        assert_eq!(a.branches.len(), b.branches.len());
    }

    #[test]
    fn test_function_jets_satisfy_the_vertex_conditions() {
        let model = fixtures::m2();
        let f = make_test_function(&model, (0.8, -0.5), 0.3, 0.4, "probe").unwrap();
        let v = GraphPoint::vertex();
        assert!((f.value(v) - 1.0).abs() < 1e-12);
        // Gluing: edge-0 derivative is the mass-weighted mean of the others.
        let g0 = 0.5 * 0.8 + 0.5 * (-0.5);
        assert!((f.d1(v) - g0).abs() < 1e-10);
        // Domain condition on each edge: f'' = 2 (a0 - vbar f').
        let cd = model.classes();
        let eps = 1e-7;
        for (edge, slope) in [(1u8, 0.8), (2u8, -0.5)] {
            let p = GraphPoint::new(edge, eps).unwrap();
            assert!(
                (f.d1(p) - slope).abs() < 1e-5,
                "edge {edge}: d1={} slope={}",
                f.d1(p),
                slope
            );
            let expect = 2.0 * (0.3 - cd.vbar0[edge as usize] * slope);
            // The probe sits eps into the edge, so the cubic spline term
            // still contributes about 6 c3 eps here.
            assert!(
                (f.d2(p) - expect).abs() < 1e-4,
                "edge {edge}: d2={} expect={}",
                f.d2(p),
                expect
            );
        }
        let p0 = GraphPoint::new(0, -eps).unwrap();
        assert!((f.d1(p0) - g0).abs() < 1e-5);
    }

    #[test]
    fn test_function_vanishes_smoothly_at_the_support_edge() {
        let model = fixtures::m2();
        let f = make_test_function(&model, (1.0, 1.0), 0.0, 0.3, "probe").unwrap();
        for edge in 0..3u8 {
            let coord = if edge == 0 { -0.2999 } else { 0.2999 };
            let p = GraphPoint::new(edge, coord).unwrap();
            assert!(f.value(p).abs() < 1e-6);
            assert!(f.d1(p).abs() < 1e-3);
            let outside = GraphPoint::new(edge, coord * 2.0).unwrap();
            assert_eq!(f.value(outside), 0.0);
            assert_eq!(f.d1(outside), 0.0);
        }
    }

    #[test]
    fn generator_matches_the_prescribed_vertex_value_and_localizes() {
        let model = fixtures::m2();
        let f = make_test_function(&model, (0.4, 0.1), -0.7, 0.5, "probe").unwrap();
        assert_eq!(
            apply_generator(&model, &f, GraphPoint::vertex()).unwrap(),
            -0.7
        );
        let far = GraphPoint::new(2, 0.9).unwrap();
        assert_eq!(apply_generator(&model, &f, far).unwrap(), 0.0);
        let constant = TestFunction::constant(3.0, "flat");
        let inside = GraphPoint::new(1, 0.1).unwrap();
        assert_eq!(apply_generator(&model, &constant, inside).unwrap(), 0.0);
    }

    #[test]
    fn generator_is_near_continuous_at_the_vertex_along_each_edge() {
        // Approach of the generator value to a0: the jets were chosen so that
        // (1/2) f'' + vbar f' tends to a0 along every edge.
        let model = fixtures::m3();
        let f = make_test_function(&model, (0.6, -0.2), 0.25, 0.4, "probe").unwrap();
        for (edge, sign) in [(0u8, -1.0f64), (1, 1.0), (2, 1.0)] {
            let p = GraphPoint::new(edge, sign * 1e-6).unwrap();
            let val = apply_generator(&model, &f, p).unwrap();
            assert!(
                (val - 0.25).abs() < 1e-3,
                "edge {edge}: generator {val} at the vertex"
            );
        }
    }

    #[test]
    fn cached_generator_agrees_with_the_direct_one() {
        let model = fixtures::m3();
        let table = EdgeDriftTable::build(&model).unwrap();
        let f = make_test_function(&model, (0.6, -0.2), 0.25, 0.4, "probe").unwrap();
        for &(edge, coord) in &[(0u8, -0.15), (1u8, 0.07), (2u8, 0.33)] {
            let p = GraphPoint::new(edge, coord).unwrap();
            let a = apply_generator(&model, &f, p).unwrap();
            let b = apply_generator_cached(&table, &f, p);
            assert!((a - b).abs() < 1e-6);
        }
    }
}
