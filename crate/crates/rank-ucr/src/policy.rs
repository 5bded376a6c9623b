//! Ranking policies: upper-confidence ranking, greedy MLE, and uniform
//! random.
//!
//! All policies share the same bookkeeping ([`PolicyState`]): per item a
//! chronological interaction log, the design covariance `V_j`, and a
//! lazily refit parameter estimate. Selection builds an `N x K` weight
//! matrix of transformed means - upper-confidence means for UCR, plug-in
//! means for the greedy baseline - and solves a maximum-weight matching,
//! which maximizes the (monotone) aggregated list reward estimate.
//!
//! Estimates are refit only when the item's log has grown since the last
//! fit, warm-started from the previous estimate; with the Newton solver's
//! gradient tolerance this is numerically indistinguishable from refitting
//! from scratch each round and far cheaper.

use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::{
    self, AugFeature, Bound, CovMatrix, GlmFamily, InteractionLog, ItemParams,
};
use crate::matching::{self, WeightMatrix};
use crate::rewards::{item_weight, AggregationSpec};
use crate::simenv::Context;

/// Ridge weight for policy refits. The experiments flip to model-based
/// selection long before item designs reach full rank (and early logistic
/// logs are typically separable), so the unpenalized MLE would not exist;
/// this penalty keeps refits well-posed while staying numerically
/// invisible once designs mature (bias is about ridge/curvature, well
/// under 1e-3 here). Values at 1e-6 and below proved too flat in the
/// comparison workloads: a small-margin separable log puts the penalized
/// optimum at norm 1e2..1e3 where Newton can exhaust its iteration
/// budget above the gradient tolerance.
pub const REFIT_RIDGE: f64 = 1e-4;

/// An ordered selection of distinct items, one per display position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Slate {
    items: Vec<usize>,
    num_items: usize,
}

impl Slate {
    pub fn new(items: Vec<usize>, num_items: usize) -> Result<Self> {
        if items.is_empty() || items.len() > num_items {
            return Err(Error::TooManyPositions {
                positions: items.len(),
                items: num_items,
            });
        }
        let mut seen = vec![false; num_items];
        for &item in &items {
            if item >= num_items {
                return Err(Error::InvalidArgument(format!(
                    "item {item} out of range for {num_items} items"
                )));
            }
            if seen[item] {
                return Err(Error::InvalidArgument(format!(
                    "item {item} appears twice in the slate"
                )));
            }
            seen[item] = true;
        }
        Ok(Slate { items, num_items })
    }

    pub fn items(&self) -> &[usize] {
        &self.items
    }

    pub fn num_positions(&self) -> usize {
        self.items.len()
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }
}

/// Observed per-position outcomes for one round.
#[derive(Clone, Debug, PartialEq)]
pub struct Feedback {
    outcomes: Vec<f64>,
}

impl Feedback {
    pub fn new(outcomes: Vec<f64>) -> Self {
        Feedback { outcomes }
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.outcomes
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }
}

/// Lifecycle phase: uniform exploration until `T0` rounds have been
/// absorbed, model-based selection afterwards.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Init,
    Confident,
}

#[derive(Clone, Debug)]
struct ItemState {
    log: InteractionLog,
    cov: CovMatrix,
    fit: Option<ItemParams>,
    dirty: bool,
}

/// Shared bookkeeping for all model-based policies.
#[derive(Clone, Debug)]
pub struct PolicyState {
    items: Vec<ItemState>,
    num_positions: usize,
    ctx_dim: usize,
    t: usize,
    t0: usize,
    family: GlmFamily,
    spec: AggregationSpec,
    max_reward: f64,
}

impl PolicyState {
    pub fn new(
        num_items: usize,
        num_positions: usize,
        ctx_dim: usize,
        t0: usize,
        family: GlmFamily,
        spec: AggregationSpec,
        max_reward: f64,
    ) -> Result<Self> {
        if num_positions > num_items {
            return Err(Error::TooManyPositions {
                positions: num_positions,
                items: num_items,
            });
        }
        if num_positions == 0 || ctx_dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "need K >= 1 and d >= 1, got K={num_positions}, d={ctx_dim}"
            )));
        }
        if !(max_reward > 0.0) || !max_reward.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "max_reward must be positive and finite, got {max_reward}"
            )));
        }
        spec.validate(num_items)?;
        let dim = ctx_dim + 1;
        let items = (0..num_items)
            .map(|_| ItemState {
                log: InteractionLog::new(),
                cov: CovMatrix::zeros(dim),
                fit: None,
                dirty: false,
            })
            .collect();
        Ok(PolicyState {
            items,
            num_positions,
            ctx_dim,
            t: 0,
            t0,
            family,
            spec,
            max_reward,
        })
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn num_positions(&self) -> usize {
        self.num_positions
    }

    pub fn round(&self) -> usize {
        self.t
    }

    pub fn init_rounds(&self) -> usize {
        self.t0
    }

    pub fn phase(&self) -> Phase {
        if self.t < self.t0 {
            Phase::Init
        } else {
            Phase::Confident
        }
    }

    pub fn covariance(&self, item: usize) -> &CovMatrix {
        &self.items[item].cov
    }

    pub fn log(&self, item: usize) -> &InteractionLog {
        &self.items[item].log
    }

    /// Current estimate for `item`, refitting if its log grew since the
    /// last fit. An empty log surfaces as the singular-covariance error
    /// (`V_j = 0`): the item cannot be ranked yet.
    pub fn estimate(&mut self, item: usize) -> Result<&ItemParams> {
        let st = &mut self.items[item];
        if st.fit.is_none() || st.dirty {
            if st.log.is_empty() {
                return Err(Error::SingularItemCovariance { item });
            }
            let warm = st.fit.take();
            let fit = glm::fit_mle_from(&self.family, &st.log, REFIT_RIDGE, warm.as_ref())
                .or_else(|e| match e {
                    // a stale warm start can strand Newton on extreme
                    // (near-separable) logs; the cold path is the
                    // well-conditioned reference, so give it one shot
                    Error::NonConvergence { .. } if warm.is_some() => {
                        glm::fit_mle(&self.family, &st.log, REFIT_RIDGE)
                    }
                    other => Err(other),
                })
                .map_err(|e| match e {
                    Error::DegenerateDesign | Error::SingularCovariance => {
                        Error::SingularItemCovariance { item }
                    }
                    other => other,
                })?;
            st.fit = Some(fit);
            st.dirty = false;
        }
        Ok(self.items[item].fit.as_ref().expect("fit just ensured"))
    }

    /// Injects a fully specified item state; testing hook for examples
    /// with hand-picked estimates and covariances.
    #[cfg(test)]
    pub(crate) fn inject_item(
        &mut self,
        item: usize,
        params: ItemParams,
        cov: CovMatrix,
        log: InteractionLog,
    ) {
        self.items[item] = ItemState {
            log,
            cov,
            fit: Some(params),
            dirty: false,
        };
    }
}

/// Selection weights `g(A'(theta_hat . z [+ xi * ||z||_{V^-1}]))` for
/// every (item, position) pair; `xi = None` is the plug-in (greedy) path.
fn selection_weights(
    state: &mut PolicyState,
    ctx: &Context,
    xi: Option<f64>,
) -> Result<WeightMatrix> {
    if ctx.dim() != state.ctx_dim {
        return Err(Error::DimensionMismatch {
            expected: state.ctx_dim,
            actual: ctx.dim(),
        });
    }
    if let Some(x) = xi {
        if !(x >= 0.0) || !x.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "xi must be finite and nonnegative, got {x}"
            )));
        }
    }
    let n = state.num_items();
    let k = state.num_positions;
    let features: Vec<AugFeature> = (0..k).map(|pos| ctx.augmented(pos, k)).collect();
    let mut entries = Vec::with_capacity(n * k);
    for item in 0..n {
        state.estimate(item)?;
        let st = &state.items[item];
        let params = st.fit.as_ref().expect("estimate ensured above");
        for z in &features {
            let mu = match xi {
                Some(x) => glm::confidence_mean(&state.family, params, &st.cov, z, x, Bound::Upper)
                    .map_err(|e| match e {
                        Error::SingularCovariance => Error::SingularItemCovariance { item },
                        other => other,
                    })?,
                None => glm::mean(&state.family, params, z)?,
            };
            entries.push(item_weight(&state.spec, item, mu)?);
        }
    }
    WeightMatrix::new(n, k, entries)
}

fn solve_to_slate(state: &PolicyState, w: &WeightMatrix) -> Result<Slate> {
    let assignment = matching::solve(w)?;
    Slate::new(assignment.items, state.num_items())
}

/// Upper-confidence ranking: optimistic means, then max-weight matching.
/// Meant for the confident phase; items whose covariance cannot support
/// a width estimate yet surface as singular-item errors.
pub fn ucr_select(state: &mut PolicyState, ctx: &Context, xi: f64) -> Result<Slate> {
    let w = selection_weights(state, ctx, Some(xi))?;
    solve_to_slate(state, &w)
}

/// Greedy baseline: plug-in MLE means, then max-weight matching.
pub fn gmle_select(state: &mut PolicyState, ctx: &Context) -> Result<Slate> {
    let w = selection_weights(state, ctx, None)?;
    solve_to_slate(state, &w)
}

/// Uniformly random ordered selection of `num_positions` distinct items:
/// a partial Fisher-Yates shuffle, so all `N!/(N-K)!` outcomes are
/// equally likely.
pub fn random_select<R: Rng + ?Sized>(
    rng: &mut R,
    num_items: usize,
    num_positions: usize,
) -> Result<Slate> {
    if num_positions > num_items {
        return Err(Error::TooManyPositions {
            positions: num_positions,
            items: num_items,
        });
    }
    let mut pool: Vec<usize> = (0..num_items).collect();
    for i in 0..num_positions {
        let j = rng.random_range(i..num_items);
        pool.swap(i, j);
    }
    pool.truncate(num_positions);
    Slate::new(pool, num_items)
}

/// Absorbs one round of feedback: per position, logs the (feature,
/// outcome) pair for the shown item, rank-1-updates its covariance and
/// marks its estimate stale. Advances the round counter (the phase flips
/// once `init_rounds` updates are in).
pub fn update(
    state: &mut PolicyState,
    ctx: &Context,
    slate: &Slate,
    feedback: &Feedback,
) -> Result<()> {
    if slate.num_items() != state.num_items() || slate.num_positions() != state.num_positions {
        return Err(Error::DimensionMismatch {
            expected: state.num_positions,
            actual: slate.num_positions(),
        });
    }
    if feedback.len() != state.num_positions {
        return Err(Error::DimensionMismatch {
            expected: state.num_positions,
            actual: feedback.len(),
        });
    }
    if ctx.dim() != state.ctx_dim {
        return Err(Error::DimensionMismatch {
            expected: state.ctx_dim,
            actual: ctx.dim(),
        });
    }
    for &y in feedback.outcomes() {
        if !(0.0..=state.max_reward).contains(&y) {
            return Err(Error::OutcomeOutOfRange {
                value: y,
                max: state.max_reward,
            });
        }
    }
    for (pos, (&item, &y)) in slate.items().iter().zip(feedback.outcomes()).enumerate() {
        let z = ctx.augmented(pos, state.num_positions);
        let st = &mut state.items[item];
        st.cov.add_outer(&z)?;
        st.log.push(z, y);
        st.dirty = true;
    }
    state.t += 1;
    Ok(())
}

/// Which decision rule a policy instance runs in the confident phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Ucr { xi: f64 },
    Gmle,
    Random,
}

impl PolicyKind {
    pub fn label(&self) -> &'static str {
        match self {
            PolicyKind::Ucr { .. } => "ucr",
            PolicyKind::Gmle => "gmle",
            PolicyKind::Random => "random",
        }
    }

    pub fn xi(&self) -> Option<f64> {
        match self {
            PolicyKind::Ucr { xi } => Some(*xi),
            _ => None,
        }
    }
}

/// A decision rule bound to its state. During the init phase (and always,
/// for the random kind) selection is uniform; afterwards it dispatches to
/// the model-based rule.
#[derive(Clone, Debug)]
pub struct Policy {
    kind: PolicyKind,
    state: PolicyState,
}

impl Policy {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kind: PolicyKind,
        num_items: usize,
        num_positions: usize,
        ctx_dim: usize,
        t0: usize,
        family: GlmFamily,
        spec: AggregationSpec,
        max_reward: f64,
    ) -> Result<Self> {
        if let PolicyKind::Ucr { xi } = kind {
            if !(xi >= 0.0) || !xi.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "xi must be finite and nonnegative, got {xi}"
                )));
            }
        }
        Ok(Policy {
            kind,
            state: PolicyState::new(
                num_items,
                num_positions,
                ctx_dim,
                t0,
                family,
                spec,
                max_reward,
            )?,
        })
    }

    pub fn kind(&self) -> &PolicyKind {
        &self.kind
    }

    pub fn state(&self) -> &PolicyState {
        &self.state
    }

    pub fn select<R: Rng + ?Sized>(&mut self, ctx: &Context, rng: &mut R) -> Result<Slate> {
        let n = self.state.num_items();
        let k = self.state.num_positions;
        match (&self.kind, self.state.phase()) {
            (PolicyKind::Random, _) | (_, Phase::Init) => random_select(rng, n, k),
            (PolicyKind::Ucr { xi }, Phase::Confident) => ucr_select(&mut self.state, ctx, *xi),
            (PolicyKind::Gmle, Phase::Confident) => gmle_select(&mut self.state, ctx),
        }
    }

    pub fn update(&mut self, ctx: &Context, slate: &Slate, feedback: &Feedback) -> Result<()> {
        update(&mut self.state, ctx, slate, feedback)
    }
}
