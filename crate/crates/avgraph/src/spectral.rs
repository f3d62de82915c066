//! Spectral diagnostics of the transition-count matrix near the bifurcation.
//!
//! For a model with positive drifts, `N(z)` has entries `q_ij(z) / v_i(z)` off
//! the diagonal and minus the row sum on it: it counts jumps per unit of slow
//! displacement rather than per unit of time. Averaging `N` over the window
//! `[-delta, delta]` produces a matrix `N^delta` whose second eigenvalue and
//! the associated left/right eigenvectors encode how mass entering the window
//! from the left splits between the two classes on the right. The function
//! [`alpha_and_projection`] assembles this picture; [`f_epsilon_profile`]
//! solves the underlying window boundary problem directly as an ordered
//! product of matrix exponentials and compares it with the closed form.

use nalgebra::{DMatrix, DVector};

use crate::linalg;
use crate::model::{ChainFamily, ModelError};

/// Absolute tolerance for the window-average quadrature, relative to the
/// magnitude of the integrand.
const QUAD_TOL: f64 = 1e-12;
/// Target sup-norm agreement between successive grid refinements of the
/// ordered-exponential solver.
const PROFILE_TOL: f64 = 1e-8;
/// Cap on the total number of panels in the ordered-exponential solver.
const PROFILE_MAX_INTERVALS: usize = 1 << 22;

#[derive(Debug, Clone, thiserror::Error)]
pub enum SpectralError {
    #[error("window half-width {delta} outside (0, {cutoff}]")]
    DeltaOutOfRange { delta: f64, cutoff: f64 },
    #[error("count matrix needs a positive drift: v[{i}] <= 0 at z={z}")]
    NonPositiveDrift { i: usize, z: f64 },
    #[error("window quadrature stalled on [{a}, {b}] (error {err:e})")]
    QuadratureStalled { a: f64, b: f64, err: f64 },
    #[error("profile grid refinement exhausted at {intervals} panels (difference {diff:e})")]
    NoGridConvergence { intervals: usize, diff: f64 },
    #[error("QR eigenvalue iteration did not converge")]
    NoQRConvergence,
    #[error("second eigenvalue of the window average is not simple and real (gap {gap:e})")]
    EigenNotSimple { gap: f64 },
    #[error("splitting basis is degenerate: {context}")]
    DegenerateBasis { context: &'static str },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Count matrix `N(z)`: off-diagonal `q_ij(z) / v_i(z)`, diagonal minus the
/// ordered row sum, so rows sum to zero exactly.
pub fn n_matrix(model: &ChainFamily, z: f64) -> Result<DMatrix<f64>, SpectralError> {
    let n = model.n();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        let v = model.drift(i, z);
        if v <= 0.0 {
            return Err(SpectralError::NonPositiveDrift { i, z });
        }
        let mut row_sum = 0.0;
        for j in 0..n {
            if i == j {
                continue;
            }
            let entry = model.rate(i, j, z) / v;
            out[(i, j)] = entry;
            row_sum += entry;
        }
        out[(i, i)] = -row_sum;
    }
    Ok(out)
}

/// Off-diagonal part of `N(z)` as a matrix with zero diagonal.
fn n_offdiag(model: &ChainFamily, z: f64) -> Result<DMatrix<f64>, SpectralError> {
    let mut out = n_matrix(model, z)?;
    for i in 0..out.nrows() {
        out[(i, i)] = 0.0;
    }
    Ok(out)
}

// Nodes and weights carry the full tabulated digits, one past f64 resolution.
#[allow(clippy::excessive_precision)]
const G7_NODES: [f64; 7] = [
    -0.949_107_912_342_758_5,
    -0.741_531_185_599_394_4,
    -0.405_845_151_377_397_17,
    0.0,
    0.405_845_151_377_397_17,
    0.741_531_185_599_394_4,
    0.949_107_912_342_758_5,
];
#[allow(clippy::excessive_precision)]
const G7_WEIGHTS: [f64; 7] = [
    0.129_484_966_168_869_69,
    0.279_705_391_489_276_67,
    0.381_830_050_505_118_94,
    0.417_959_183_673_469_4,
    0.381_830_050_505_118_94,
    0.279_705_391_489_276_67,
    0.129_484_966_168_869_69,
];

fn g7_panel<F>(f: &F, a: f64, b: f64) -> Result<DMatrix<f64>, SpectralError>
where
    F: Fn(f64) -> Result<DMatrix<f64>, SpectralError>,
{
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut acc = f(mid + half * G7_NODES[0])? * (half * G7_WEIGHTS[0]);
    for k in 1..7 {
        acc += f(mid + half * G7_NODES[k])? * (half * G7_WEIGHTS[k]);
    }
    Ok(acc)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_panel<F>(
    f: &F,
    a: f64,
    b: f64,
    whole: DMatrix<f64>,
    budget: f64,
    depth: u32,
) -> Result<DMatrix<f64>, SpectralError>
where
    F: Fn(f64) -> Result<DMatrix<f64>, SpectralError>,
{
    let mid = 0.5 * (a + b);
    let left = g7_panel(f, a, mid)?;
    let right = g7_panel(f, mid, b)?;
    let refined = &left + &right;
    let err = (&refined - &whole).amax();
    if err <= budget {
        return Ok(refined);
    }
    if depth >= 48 {
        return Err(SpectralError::QuadratureStalled { a, b, err });
    }
    let half_budget = 0.5 * budget;
    Ok(adaptive_panel(f, a, mid, left, half_budget, depth + 1)?
        + adaptive_panel(f, mid, b, right, half_budget, depth + 1)?)
}

/// Window average `N^delta = (2 delta)^-1 \int_{-delta}^{delta} N(z) dz`.
///
/// The integral is split at every breakpoint of the rate and drift profiles so
/// each panel sees a smooth integrand, then refined adaptively to an absolute
/// tolerance of `1e-12` relative to the integrand scale. Only the off-diagonal
/// entries are integrated; the diagonal is set to minus the ordered row sum,
/// so the result annihilates constants exactly.
pub fn n_delta(model: &ChainFamily, delta: f64) -> Result<DMatrix<f64>, SpectralError> {
    if !(delta > 0.0) || delta > model.cutoff() {
        return Err(SpectralError::DeltaOutOfRange {
            delta,
            cutoff: model.cutoff(),
        });
    }
    let n = model.n();
    let f = |z: f64| n_offdiag(model, z);
    let kinks = model.kink_points(-delta, delta);
    let mut estimates = Vec::with_capacity(kinks.len() - 1);
    let mut scale = 1.0_f64;
    for w in kinks.windows(2) {
        let whole = g7_panel(&f, w[0], w[1])?;
        let len = w[1] - w[0];
        if len > 0.0 {
            scale = scale.max(whole.amax() / len);
        }
        estimates.push(whole);
    }
    let total_budget = 2.0 * delta * QUAD_TOL * scale;
    let mut integral = DMatrix::zeros(n, n);
    for (w, whole) in kinks.windows(2).zip(estimates) {
        let budget = total_budget * (w[1] - w[0]) / (2.0 * delta);
        integral += adaptive_panel(&f, w[0], w[1], whole, budget, 0)?;
    }
    let mut out = integral / (2.0 * delta);
    for i in 0..n {
        let mut row_sum = 0.0;
        for j in 0..n {
            if i != j {
                row_sum += out[(i, j)];
            }
        }
        out[(i, i)] = -row_sum;
    }
    Ok(out)
}

/// Matrix exponential by degree-13 Pade approximation with scaling and
/// squaring. Exact enough at every norm arising here; generators with zero row
/// sums keep them to machine precision.
pub fn matrix_exponential(a: &DMatrix<f64>) -> DMatrix<f64> {
    const THETA13: f64 = 5.371_920_351_148_152;
    const B: [f64; 14] = [
        64_764_752_532_480_000.0,
        32_382_376_266_240_000.0,
        7_771_770_303_897_600.0,
        1_187_353_796_428_800.0,
        129_060_195_264_000.0,
        10_559_470_521_600.0,
        670_442_572_800.0,
        33_522_128_640.0,
        1_323_241_920.0,
        40_840_800.0,
        960_960.0,
        16_380.0,
        182.0,
        1.0,
    ];
    let n = a.nrows();
    let norm = a
        .column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0_f64, f64::max);
    let s = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a / 2f64.powi(s);
    let ident = DMatrix::identity(n, n);
    let a2 = &scaled * &scaled;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;
    let u_inner = &a6 * (B[13] * &a6 + B[11] * &a4 + B[9] * &a2)
        + B[7] * &a6
        + B[5] * &a4
        + B[3] * &a2
        + B[1] * &ident;
    let u = &scaled * u_inner;
    let v = &a6 * (B[12] * &a6 + B[10] * &a4 + B[8] * &a2)
        + B[6] * &a6
        + B[4] * &a4
        + B[2] * &a2
        + B[0] * &ident;
    let mut r = linalg::solve_matrix(&(&v - &u), &(&v + &u))
        .expect("Pade denominator is well conditioned after scaling");
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

/// The second eigenvalue of the window average, with its eigenvector and the
/// distance to the rest of the spectrum.
#[derive(Debug, Clone)]
pub struct SecondEigenpair {
    /// Eigenvalue of largest real part; zero up to roundoff for a window
    /// average of generators.
    pub lambda_top: f64,
    /// Residual of the constant vector under the window average; roundoff
    /// scale because the diagonal negates the off-diagonal sum.
    pub top_residual: f64,
    /// The second eigenvalue, required to be real and simple.
    pub lambda: f64,
    /// Eigenvector for `lambda`, unit infinity norm, leading entry positive.
    pub vector: DVector<f64>,
    /// Distance from `lambda` to the closest other eigenvalue.
    pub gap: f64,
    /// Max-norm residual of the eigenpair.
    pub residual: f64,
}

fn eigenpair_of(nd: &DMatrix<f64>) -> Result<SecondEigenpair, SpectralError> {
    let n = nd.nrows();
    let scale = nd.amax().max(1e-300);
    let schur = nalgebra::linalg::Schur::try_new(nd.clone(), 1e-14, 100_000)
        .ok_or(SpectralError::NoQRConvergence)?;
    let mut eigs: Vec<nalgebra::Complex<f64>> = schur.complex_eigenvalues().iter().copied().collect();
    eigs.sort_by(|a, b| {
        b.re.total_cmp(&a.re)
            .then(a.im.abs().total_cmp(&b.im.abs()))
            .then(a.im.total_cmp(&b.im))
    });
    let top = eigs[0];
    let second = eigs[1];
    if second.im.abs() > 1e-9 * scale {
        return Err(SpectralError::EigenNotSimple {
            gap: second.im.abs(),
        });
    }
    let lambda = second.re;
    let mut gap = f64::INFINITY;
    for (k, e) in eigs.iter().enumerate() {
        if k == 1 {
            continue;
        }
        gap = gap.min((e - second).norm());
    }
    if gap <= 1e-12 * scale {
        return Err(SpectralError::EigenNotSimple { gap });
    }
    let shifted = nd - DMatrix::identity(n, n) * lambda;
    let vector = linalg::null_space_vector(&shifted)
        .map_err(|_| SpectralError::EigenNotSimple { gap })?;
    let residual = (&shifted * &vector).amax();
    let ones = DVector::from_element(n, 1.0);
    Ok(SecondEigenpair {
        lambda_top: top.re,
        top_residual: (nd * &ones).amax(),
        lambda,
        vector,
        gap,
        residual,
    })
}

/// Second eigenpair of `N^delta`.
pub fn second_eigenpair(
    model: &ChainFamily,
    delta: f64,
) -> Result<SecondEigenpair, SpectralError> {
    eigenpair_of(&n_delta(model, delta)?)
}

/// Full spectral picture of one window, serializable for reports.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SpectralReport {
    pub delta: f64,
    /// Second eigenvalue of the window average.
    pub lambda1: f64,
    /// Distance from `lambda1` to the rest of the spectrum.
    pub gap: f64,
    /// Max-norm residual of the second eigenpair.
    pub eigen_residual: f64,
    /// Coefficient of the class-one indicator in the normalized eigenvector.
    pub alpha: f64,
    /// Small-window limit of `alpha`: minus the reciprocal branching ratio.
    pub alpha_limit: f64,
    /// Mass of the left null vector on class one; converges to the branching
    /// ratio as the window shrinks.
    pub projection: f64,
    /// Drift-weighted branching ratio from the boundary distribution.
    pub p1: f64,
    /// Left null vector of the window average, entries summing to one.
    pub psi: Vec<f64>,
    /// Normalized second eigenvector `e + alpha * ind_1 + remainder`.
    pub g: Vec<f64>,
    /// Max norm of the remainder part of `g`.
    pub g_remainder: f64,
    /// Residual of `psi` as a left null vector.
    pub psi_residual: f64,
    /// Pairing of `g` with `psi` (a degeneracy diagnostic).
    pub g_psi: f64,
    /// Count matrix at the bifurcation point, row major.
    pub n_zero: Vec<Vec<f64>>,
    /// Window average, row major.
    pub n_delta: Vec<Vec<f64>>,
    /// Window correction `N^delta - N(0)`, row major.
    pub h_delta: Vec<Vec<f64>>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Indicator vector of class one.
fn class_one_indicator(model: &ChainFamily) -> DVector<f64> {
    DVector::from_fn(model.n(), |i, _| if i < model.m() { 1.0 } else { 0.0 })
}

/// Decomposes the second eigenvector of `N^delta` over the basis built from
/// the constant vector, the class-one indicator, and the annihilator of the
/// two left null rows of `N(0)`; reads off the coefficient `alpha` and the
/// class-one mass of the left null vector of `N^delta`.
pub fn alpha_and_projection(
    model: &ChainFamily,
    delta: f64,
) -> Result<SpectralReport, SpectralError> {
    let n = model.n();
    let m = model.m();
    let nd = n_delta(model, delta)?;
    let n0 = n_matrix(model, 0.0)?;
    let pair = eigenpair_of(&nd)?;

    // Left null rows of N(0): pi_i v_i(0) restricted to each class.
    let pi_v = &model.classes().pi_v;
    let mut rows_mat = DMatrix::zeros(n, n);
    for i in 0..m {
        rows_mat[(0, i)] = pi_v[i];
    }
    for i in m..n {
        rows_mat[(1, i)] = pi_v[i];
    }
    let w_basis = linalg::null_space_basis(&rows_mat, n - 2)
        .map_err(|_| SpectralError::DegenerateBasis {
            context: "left null rows of the bifurcation-point count matrix",
        })?;
    let ind1 = class_one_indicator(model);
    let mut basis = DMatrix::zeros(n, n);
    basis.set_column(0, &DVector::from_element(n, 1.0));
    basis.set_column(1, &ind1);
    for (k, w) in w_basis.iter().enumerate() {
        basis.set_column(2 + k, w);
    }
    let coeffs = linalg::solve(&basis, &pair.vector).map_err(|_| {
        SpectralError::DegenerateBasis {
            context: "splitting basis is numerically singular",
        }
    })?;
    let a = coeffs[0];
    if a.abs() <= 1e-12 * coeffs.amax().max(1e-300) {
        return Err(SpectralError::DegenerateBasis {
            context: "second eigenvector has no component on constants",
        });
    }
    let alpha = coeffs[1] / a;
    let g = &pair.vector / a;
    let remainder = &g - DVector::from_element(n, 1.0) - &ind1 * alpha;

    let (psi, _) = linalg::unit_sum_null_space(&nd.transpose()).map_err(|_| {
        SpectralError::DegenerateBasis {
            context: "left null vector of the window average",
        }
    })?;
    let psi_residual = (nd.transpose() * &psi).amax();
    let projection = linalg::pairwise_sum(&psi.as_slice()[..m]);
    let p1 = model.classes().branching[0];
    let alpha_limit = if p1 > 0.0 { -1.0 / p1 } else { f64::NEG_INFINITY };

    Ok(SpectralReport {
        delta,
        lambda1: pair.lambda,
        gap: pair.gap,
        eigen_residual: pair.residual,
        alpha,
        alpha_limit,
        projection,
        p1,
        psi: psi.as_slice().to_vec(),
        g: g.as_slice().to_vec(),
        g_remainder: remainder.amax(),
        psi_residual,
        g_psi: g.dot(&psi),
        n_zero: rows(&n0),
        n_delta: rows(&nd),
        h_delta: rows(&(&nd - &n0)),
    })
}

/// Boundary-value profile of the window: the solution of
/// `df/dz = -(1/epsilon) N(z) f` carried from `z = delta` down to
/// `z = -delta`, started from the class-one indicator.
#[derive(Debug, Clone)]
pub struct FEpsilonProfile {
    pub delta: f64,
    pub epsilon: f64,
    /// Transported profile at `z = -delta` from the ordered product of
    /// midpoint exponentials.
    pub ode: Vec<f64>,
    /// Closed-form counterpart `exp((2 delta / epsilon) N^delta)` applied to
    /// the same start vector; equal to `ode` only when the window commutes.
    pub closed_form: Vec<f64>,
    /// Panels used at the accepted refinement level.
    pub intervals: usize,
    /// Sup difference between the last two refinement levels.
    pub grid_diff: f64,
    /// Sup difference between `ode` and `closed_form`.
    pub window_gap: f64,
}

/// Ordered product of midpoint exponentials over a fixed panel family.
fn transport(
    model: &ChainFamily,
    pieces: &[(f64, f64)],
    panels_per_piece: &[usize],
    epsilon: f64,
    start: &DVector<f64>,
) -> Result<DVector<f64>, SpectralError> {
    let mut f = start.clone();
    // March downward in z, so iterate pieces from the top.
    for (piece_idx, &(a, b)) in pieces.iter().enumerate().rev() {
        let k = panels_per_piece[piece_idx];
        let h = (b - a) / k as f64;
        for p in (0..k).rev() {
            let mid = a + (p as f64 + 0.5) * h;
            let n_mid = n_matrix(model, mid)?;
            let step = matrix_exponential(&(n_mid * (h / epsilon)));
            f = step * f;
        }
    }
    Ok(f)
}

pub fn f_epsilon_profile(
    model: &ChainFamily,
    delta: f64,
    epsilon: f64,
) -> Result<FEpsilonProfile, SpectralError> {
    if !(delta > 0.0) || delta > model.cutoff() {
        return Err(SpectralError::DeltaOutOfRange {
            delta,
            cutoff: model.cutoff(),
        });
    }
    assert!(epsilon > 0.0, "epsilon must be positive");
    let kinks = model.kink_points(-delta, delta);
    let pieces: Vec<(f64, f64)> = kinks.windows(2).map(|w| (w[0], w[1])).collect();
    let start = class_one_indicator(model);

    let base = 2.0 * delta / 16.0;
    let mut panels: Vec<usize> = pieces
        .iter()
        .map(|&(a, b)| ((b - a) / base).ceil().max(1.0) as usize)
        .collect();
    let mut current = transport(model, &pieces, &panels, epsilon, &start)?;
    let mut diff = f64::INFINITY;
    loop {
        let total: usize = panels.iter().sum();
        if total > PROFILE_MAX_INTERVALS {
            return Err(SpectralError::NoGridConvergence {
                intervals: total,
                diff,
            });
        }
        let refined: Vec<usize> = panels.iter().map(|k| k * 2).collect();
        let next = transport(model, &pieces, &refined, epsilon, &start)?;
        diff = (&next - &current).amax();
        panels = refined;
        current = next;
        if diff < PROFILE_TOL {
            break;
        }
    }

    let nd = n_delta(model, delta)?;
    let closed = matrix_exponential(&(nd * (2.0 * delta / epsilon))) * &start;
    let window_gap = (&current - &closed).amax();
    Ok(FEpsilonProfile {
        delta,
        epsilon,
        ode: current.as_slice().to_vec(),
        closed_form: closed.as_slice().to_vec(),
        intervals: panels.iter().sum(),
        grid_diff: diff,
        window_gap,
    })
}
