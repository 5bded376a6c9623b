//! Per-item generalized linear models.
//!
//! One item's click/engagement behaviour is modelled as
//! `E[y | z] = A'(theta^T z)` where `z = (position, context)` is the
//! augmented feature vector and `A` is the log-partition function of the
//! family: `A(u) = log(1 + e^u)` for the logistic family (so `A'` is the
//! sigmoid) and `A(u) = u^2 / 2` for the linear family (identity link).
//!
//! The module owns everything that touches a single item's parameter
//! vector: maximum-likelihood fitting (Newton-Raphson with step-halving),
//! the design covariance `V = sum z z^T` with its Cholesky machinery, the
//! self-normalized confidence bounds `A'(theta^T z +- xi * ||z||_{V^-1})`,
//! and the closed-form theory helpers for the exploration width `xi` and
//! the initialization-length lower bound.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Gradient-norm threshold below which Newton is declared converged.
pub const MLE_GRAD_TOL: f64 = 1e-8;
/// Hard cap on Newton iterations before reporting non-convergence.
pub const MLE_MAX_ITERS: usize = 100;
/// Maximum step halvings per line search.
pub const MLE_MAX_HALVINGS: usize = 30;
/// Logistic means are kept inside `[CLAMP, 1 - CLAMP]` so that the
/// click-through transform `-log(1 - mu)` stays finite.
pub const LOGISTIC_MEAN_CLAMP: f64 = 1e-12;
/// Diagonal jitter added once when a covariance factorization fails.
pub const COV_JITTER: f64 = 1e-10;

/// Observation family for a single item.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlmFamily {
    /// Bernoulli outcomes through a sigmoid link.
    Logistic,
    /// Gaussian outcomes with identity link; `noise_scale` is the
    /// standard deviation used when simulating.
    Linear { noise_scale: f64 },
}

impl GlmFamily {
    /// Inverse link `A'(u)`, with the logistic value clamped away from
    /// the endpoints.
    pub fn inverse_link(&self, u: f64) -> f64 {
        match self {
            GlmFamily::Logistic => {
                sigmoid(u).clamp(LOGISTIC_MEAN_CLAMP, 1.0 - LOGISTIC_MEAN_CLAMP)
            }
            GlmFamily::Linear { .. } => u,
        }
    }

    /// `A''(u)`, the conditional variance factor.
    fn curvature(&self, u: f64) -> f64 {
        match self {
            GlmFamily::Logistic => {
                let s = sigmoid(u);
                s * (1.0 - s)
            }
            GlmFamily::Linear { .. } => 1.0,
        }
    }

    /// Log-partition `A(u)`.
    fn log_partition(&self, u: f64) -> f64 {
        match self {
            GlmFamily::Logistic => softplus(u),
            GlmFamily::Linear { .. } => 0.5 * u * u,
        }
    }

    /// Raw inverse link without endpoint clamping; used inside the
    /// likelihood so that residuals can genuinely vanish.
    fn inverse_link_raw(&self, u: f64) -> f64 {
        match self {
            GlmFamily::Logistic => sigmoid(u),
            GlmFamily::Linear { .. } => u,
        }
    }
}

/// Numerically stable sigmoid.
pub fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `log(1 + e^u)`.
fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

/// Display position `k` (0-based) rescaled to `(k+1)/K - 1/2`, which
/// lies in `(-1/2, 1/2]` so the augmented feature has norm at most 1.
pub fn rescaled_position(position: usize, num_positions: usize) -> f64 {
    assert!(
        position < num_positions,
        "position {position} out of range for {num_positions} slots"
    );
    (position + 1) as f64 / num_positions as f64 - 0.5
}

/// Augmented feature `z = (pos, x)`: the rescaled display position
/// followed by the (rescaled) context coordinates.
///
/// The norm guarantees (`pos` in `(-1/2, 1/2]`, context norm at most
/// `sqrt(3)/2`, so `||z|| <= 1`) come from the construction path, not
/// from this type: arbitrary values are accepted so the estimation
/// routines can be exercised directly.
#[derive(Clone, Debug, PartialEq)]
pub struct AugFeature {
    v: DVector<f64>,
}

impl AugFeature {
    pub fn new(pos: f64, ctx: &[f64]) -> Self {
        let mut v = DVector::zeros(1 + ctx.len());
        v[0] = pos;
        for (i, &c) in ctx.iter().enumerate() {
            v[i + 1] = c;
        }
        AugFeature { v }
    }

    pub fn pos(&self) -> f64 {
        self.v[0]
    }

    pub fn ctx(&self) -> &[f64] {
        &self.v.as_slice()[1..]
    }

    /// The concatenated `(pos, ctx)` vector.
    pub fn vector(&self) -> &DVector<f64> {
        &self.v
    }

    /// Feature-space dimension `d + 1`.
    pub fn dim(&self) -> usize {
        self.v.len()
    }
}

/// Parameters of one item's GLM: position effect `alpha` and context
/// weights `beta`, jointly `theta = (alpha, beta)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ItemParams {
    pub alpha: f64,
    pub beta: DVector<f64>,
}

impl ItemParams {
    pub fn new(alpha: f64, beta: Vec<f64>) -> Self {
        ItemParams {
            alpha,
            beta: DVector::from_vec(beta),
        }
    }

    pub fn dim(&self) -> usize {
        1 + self.beta.len()
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim());
        v[0] = self.alpha;
        for i in 0..self.beta.len() {
            v[i + 1] = self.beta[i];
        }
        v
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        ItemParams {
            alpha: v[0],
            beta: DVector::from_iterator(v.len() - 1, v.iter().skip(1).copied()),
        }
    }

    /// `theta^T z`.
    pub fn dot(&self, z: &AugFeature) -> f64 {
        let zv = z.vector();
        let mut acc = self.alpha * zv[0];
        for i in 0..self.beta.len() {
            acc += self.beta[i] * zv[i + 1];
        }
        acc
    }
}

/// Chronological record of (feature, outcome) pairs for one item.
#[derive(Clone, Debug, Default)]
pub struct InteractionLog {
    entries: Vec<(AugFeature, f64)>,
}

impl InteractionLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, z: AugFeature, y: f64) {
        self.entries.push((z, y));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(AugFeature, f64)] {
        &self.entries
    }
}

/// Design covariance `V = sum_i z_i z_i^T`, kept symmetric positive
/// semi-definite by construction through rank-1 updates.
#[derive(Clone, Debug, PartialEq)]
pub struct CovMatrix {
    m: DMatrix<f64>,
}

impl CovMatrix {
    pub fn zeros(dim: usize) -> Self {
        CovMatrix {
            m: DMatrix::zeros(dim, dim),
        }
    }

    /// Wraps an existing matrix, rejecting asymmetry beyond 1e-10.
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                actual: m.ncols(),
            });
        }
        let asym = (&m - m.transpose()).abs().max();
        if asym > 1e-10 {
            return Err(Error::InvalidArgument(format!(
                "covariance must be symmetric; max asymmetry {asym:.3e}"
            )));
        }
        Ok(CovMatrix { m })
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    /// Rank-1 update `V += z z^T`.
    pub fn add_outer(&mut self, z: &AugFeature) -> Result<()> {
        if z.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: z.dim(),
            });
        }
        self.m.ger(1.0, z.vector(), z.vector(), 1.0);
        Ok(())
    }

    /// Cholesky factor under the jitter policy: a nonpositive diagonal
    /// entry is structural rank deficiency (some direction was never
    /// observed) and fails immediately; otherwise a failed factorization
    /// is retried once with `COV_JITTER * I` added, and a second failure
    /// is an error.
    pub(crate) fn factor(&self) -> Result<DMatrix<f64>> {
        if (0..self.dim()).any(|i| self.m[(i, i)] <= 0.0) {
            return Err(Error::SingularCovariance);
        }
        if let Some(l) = linalg::cholesky(&self.m) {
            return Ok(l);
        }
        let jittered = &self.m + DMatrix::identity(self.dim(), self.dim()) * COV_JITTER;
        linalg::cholesky(&jittered).ok_or(Error::SingularCovariance)
    }

    /// Solves `V x = b` through the Cholesky factor (no explicit inverse).
    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        if b.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: b.len(),
            });
        }
        Ok(linalg::chol_solve(&self.factor()?, b))
    }

    /// `log det V` through the Cholesky factor.
    pub fn log_det(&self) -> Result<f64> {
        Ok(linalg::chol_log_det(&self.factor()?))
    }
}

/// Which side of the confidence interval to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bound {
    Lower,
    Upper,
}

/// Model mean `A'(theta^T z)`.
pub fn mean(family: &GlmFamily, params: &ItemParams, z: &AugFeature) -> Result<f64> {
    if params.dim() != z.dim() {
        return Err(Error::DimensionMismatch {
            expected: params.dim(),
            actual: z.dim(),
        });
    }
    Ok(family.inverse_link(params.dot(z)))
}

/// Mahalanobis width `sqrt(z^T V^{-1} z)` via a Cholesky solve.
pub fn mahalanobis_width(v: &CovMatrix, z: &AugFeature) -> Result<f64> {
    if z.dim() != v.dim() {
        return Err(Error::DimensionMismatch {
            expected: v.dim(),
            actual: z.dim(),
        });
    }
    let x = linalg::chol_solve(&v.factor()?, z.vector());
    let w2 = z.vector().dot(&x);
    Ok(w2.max(0.0).sqrt())
}

/// One-sided confidence mean `A'(theta^T z +- xi * ||z||_{V^{-1}})`.
pub fn confidence_mean(
    family: &GlmFamily,
    params: &ItemParams,
    v: &CovMatrix,
    z: &AugFeature,
    xi: f64,
    bound: Bound,
) -> Result<f64> {
    if !(xi >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence width xi must be nonnegative, got {xi}"
        )));
    }
    if params.dim() != z.dim() {
        return Err(Error::DimensionMismatch {
            expected: params.dim(),
            actual: z.dim(),
        });
    }
    let width = mahalanobis_width(v, z)?;
    let shift = match bound {
        Bound::Upper => xi * width,
        Bound::Lower => -xi * width,
    };
    Ok(family.inverse_link(params.dot(z) + shift))
}

/// Maximum-likelihood fit of one item's parameters from its log,
/// optionally ridge-penalized: maximizes
/// `sum_i [y_i u_i - A(u_i)] - ridge/2 ||theta||^2` with `u_i = theta^T z_i`.
///
/// Newton-Raphson from the origin with step-halving; converges when the
/// gradient norm drops below [`MLE_GRAD_TOL`]. A singular Hessian with
/// `ridge = 0` reports a degenerate design; running out the iteration
/// cap reports non-convergence together with the last iterate.
pub fn fit_mle(family: &GlmFamily, log: &InteractionLog, ridge: f64) -> Result<ItemParams> {
    fit_mle_from(family, log, ridge, None)
}

/// [`fit_mle`] with a warm start, used by the policies to refit from the
/// previous round's estimate.
pub fn fit_mle_from(
    family: &GlmFamily,
    log: &InteractionLog,
    ridge: f64,
    init: Option<&ItemParams>,
) -> Result<ItemParams> {
    let theta = newton(family, log, ridge, init.map(ItemParams::to_vector), None)?;
    Ok(ItemParams::from_vector(&theta))
}

/// Newton core. `observer`, when present, sees every accepted iterate;
/// the tests use it to watch divergence on separable data.
pub(crate) fn newton(
    family: &GlmFamily,
    log: &InteractionLog,
    ridge: f64,
    init: Option<DVector<f64>>,
    mut observer: Option<&mut dyn FnMut(&DVector<f64>)>,
) -> Result<DVector<f64>> {
    if log.is_empty() {
        return Err(Error::EmptyLog);
    }
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "ridge must be finite and nonnegative, got {ridge}"
        )));
    }
    let dim = log.entries()[0].0.dim();
    for (z, _) in log.entries() {
        if z.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: z.dim(),
            });
        }
    }
    if let Some(ref t) = init {
        if t.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: t.len(),
            });
        }
    }

    let objective = |theta: &DVector<f64>| -> f64 {
        let mut ell = 0.0;
        for (z, y) in log.entries() {
            let u = theta.dot(z.vector());
            ell += y * u - family.log_partition(u);
        }
        ell - 0.5 * ridge * theta.norm_squared()
    };

    let mut theta = init.unwrap_or_else(|| DVector::zeros(dim));
    let mut ell = objective(&theta);
    let mut grad_norm = f64::INFINITY;

    for iter in 0..MLE_MAX_ITERS {
        let mut grad = &theta * (-ridge);
        let mut neg_hess = DMatrix::<f64>::identity(dim, dim) * ridge;
        for (z, y) in log.entries() {
            let u = theta.dot(z.vector());
            grad.axpy(y - family.inverse_link_raw(u), z.vector(), 1.0);
            neg_hess.ger(family.curvature(u), z.vector(), z.vector(), 1.0);
        }
        grad_norm = grad.norm();
        if grad_norm <= MLE_GRAD_TOL {
            return Ok(theta);
        }

        let l = linalg::cholesky(&neg_hess).ok_or_else(|| {
            if ridge == 0.0 {
                Error::DegenerateDesign
            } else {
                Error::Numerical(format!(
                    "penalized Hessian failed to factor at iteration {iter}"
                ))
            }
        })?;
        let step = linalg::chol_solve(&l, &grad);

        // accept any step that does not decrease the objective beyond
        // float evaluation noise; near the optimum true improvements are
        // far below that noise and insisting on strict ascent would stall
        let slack = 8.0 * f64::EPSILON * (1.0 + ell.abs());
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=MLE_MAX_HALVINGS {
            let candidate = &theta + &step * scale;
            let cand_ell = objective(&candidate);
            if cand_ell.is_finite() && cand_ell >= ell - slack {
                theta = candidate;
                ell = cand_ell;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if let Some(obs) = observer.as_deref_mut() {
            obs(&theta);
        }
        if !accepted {
            // the line search found no non-decreasing step: no progress
            // is possible at floating-point resolution
            return Err(Error::NonConvergence {
                iterations: iter + 1,
                grad_norm,
                last_iterate: theta.as_slice().to_vec(),
            });
        }
    }

    Err(Error::NonConvergence {
        iterations: MLE_MAX_ITERS,
        grad_norm,
        last_iterate: theta.as_slice().to_vec(),
    })
}

/// Problem-level constants used by the closed-form theory helpers.
#[derive(Clone, Debug, PartialEq)]
pub struct TheoryConstants {
    /// Sub-Gaussian scale of the outcome noise.
    pub sigma_bar: f64,
    /// Lower bound on the inverse-link derivative over the admissible set.
    pub kappa: f64,
    /// Upper bound on the first derivative of `A'`.
    pub m1: f64,
    /// Upper bound on the second derivative of `A'`.
    pub m2: f64,
    /// Lower bound on the context covariance eigenvalues.
    pub c_x: f64,
    /// Confidence level.
    pub delta: f64,
    /// Maximum single-round reward.
    pub r0: f64,
}

impl TheoryConstants {
    pub fn new(
        sigma_bar: f64,
        kappa: f64,
        m1: f64,
        m2: f64,
        c_x: f64,
        delta: f64,
        r0: f64,
    ) -> Result<Self> {
        let all = [
            ("sigma_bar", sigma_bar),
            ("kappa", kappa),
            ("m1", m1),
            ("m2", m2),
            ("c_x", c_x),
            ("delta", delta),
            ("r0", r0),
        ];
        for (name, v) in all {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be strictly positive and finite, got {v}"
                )));
            }
        }
        if delta >= 1.0 {
            return Err(Error::InvalidArgument(format!(
                "delta must lie in (0, 1), got {delta}"
            )));
        }
        if kappa > m1 {
            return Err(Error::InvalidArgument(format!(
                "kappa ({kappa}) cannot exceed m1 ({m1}); the curvature bounds would be inconsistent"
            )));
        }
        Ok(TheoryConstants {
            sigma_bar,
            kappa,
            m1,
            m2,
            c_x,
            delta,
            r0,
        })
    }
}

/// Theoretical exploration width
/// `xi = (sqrt(3) sigma_bar / kappa) * sqrt((d+1) log(1 + 2T/d) + log(2/delta))`.
pub fn theoretical_xi(c: &TheoryConstants, d: usize, t: usize) -> Result<f64> {
    if d < 1 || t < 1 {
        return Err(Error::InvalidArgument(format!(
            "theoretical_xi requires d >= 1 and T >= 1, got d={d}, T={t}"
        )));
    }
    let dd = d as f64;
    let inner = (dd + 1.0) * (1.0 + 2.0 * t as f64 / dd).ln() + (2.0 / c.delta).ln();
    Ok(3.0_f64.sqrt() * c.sigma_bar / c.kappa * inner.sqrt())
}

/// Smallest initialization length the regret analysis asks for: the max
/// of a matrix-concentration term and an estimation term. The constant
/// `c_1` and the log arguments differ between the general case `N > K`
/// and the full-ranking case `N = K`.
pub fn t0_lower_bound(
    c: &TheoryConstants,
    d: usize,
    t: usize,
    num_items: usize,
    num_positions: usize,
) -> Result<f64> {
    if num_positions > num_items {
        return Err(Error::TooManyPositions {
            positions: num_positions,
            items: num_items,
        });
    }
    if d < 1 || t < 1 || num_positions < 1 {
        return Err(Error::InvalidArgument(format!(
            "t0_lower_bound requires d, T, K >= 1, got d={d}, T={t}, K={num_positions}"
        )));
    }
    let dd = d as f64;
    let nn = num_items as f64;
    let kk = num_positions as f64;
    let log_growth = (dd + 1.0) * (1.0 + 2.0 * t as f64 / dd).ln();
    let (concentration, estimation) = if num_items == num_positions {
        let c1 = (1.0 / 12.0 + 1.0 / (6.0 * kk * kk)).min(c.c_x);
        let t1 = (32.0 / (3.0 * c1) + 256.0 / (c1 * c1)) * ((4.0 * dd + 4.0) / c.delta).ln();
        let t2 = 6.0 * c.sigma_bar * c.sigma_bar / (c1 * c.kappa * c.kappa)
            * (log_growth + (2.0 / c.delta).ln());
        (t1, t2)
    } else {
        let c1 = (1.0 / (2.0 * kk)).min(c.c_x);
        let t1 = (16.0 / (3.0 * c1) + 32.0 * (kk + nn) * (kk + nn) / (nn * nn * c1))
            * (2.0 * (dd + 1.0) / c.delta).ln();
        let t2 = 6.0 * c.sigma_bar * c.sigma_bar / (c1 * c.kappa * c.kappa)
            * (log_growth + (1.0 / c.delta).ln());
        (t1, t2)
    };
    Ok(concentration.max(estimation))
}
