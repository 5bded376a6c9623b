//! List-level reward aggregation and regret.
//!
//! A slate's expected reward is `H(sum_k g_k(mu_k))` where `mu_k` is the
//! mean outcome of the item at position `k`. Three aggregation schemes
//! are supported: additive satisfaction (`H`, `g` both identity),
//! revenue (`g` scales each item's mean by its price), and click-through
//! (`H(z) = 1 - e^-z`, `g(mu) = -log(1 - mu)`, under which the list
//! reward is exactly `1 - prod(1 - mu_k)`, the chance of at least one
//! click). Because `H` is monotone, maximizing the list reward reduces
//! to a maximum-weight assignment on the `g`-transformed means.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm;
use crate::matching::{self, WeightMatrix};
use crate::policy::Slate;
use crate::simenv::{Context, Environment};

/// How per-item means combine into a list-level reward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationSpec {
    /// Plain sum of means.
    Additive,
    /// Sum of means weighted by per-item prices (`prices[j]` for item `j`).
    Revenue { prices: Vec<f64> },
    /// Probability of at least one click.
    ClickThrough,
}

impl AggregationSpec {
    /// Checks the spec against an item universe of size `num_items`.
    pub fn validate(&self, num_items: usize) -> Result<()> {
        if let AggregationSpec::Revenue { prices } = self {
            if prices.len() != num_items {
                return Err(Error::DimensionMismatch {
                    expected: num_items,
                    actual: prices.len(),
                });
            }
            if let Some(p) = prices.iter().find(|p| !(**p > 0.0) || !p.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "prices must be strictly positive and finite, got {p}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-item transform `g` applied to a mean before summation; this is
/// also the assignment weight used by the ranking policies.
pub fn item_weight(spec: &AggregationSpec, item: usize, mu: f64) -> Result<f64> {
    if !mu.is_finite() {
        return Err(Error::AggregationDomain(format!(
            "mean for item {item} is not finite: {mu}"
        )));
    }
    match spec {
        AggregationSpec::Additive => Ok(mu),
        AggregationSpec::Revenue { prices } => {
            let price = prices.get(item).copied().ok_or(Error::DimensionMismatch {
                expected: prices.len(),
                actual: item + 1,
            })?;
            Ok(price * mu)
        }
        AggregationSpec::ClickThrough => {
            if !(0.0..1.0).contains(&mu) {
                return Err(Error::AggregationDomain(format!(
                    "click-through needs means in [0, 1), got {mu} for item {item}"
                )));
            }
            // -log(1 - mu), kept accurate near mu = 0
            Ok(-(-mu).ln_1p())
        }
    }
}

/// Outer transform `H` applied to the summed weights.
fn outer(spec: &AggregationSpec, z: f64) -> f64 {
    match spec {
        AggregationSpec::Additive | AggregationSpec::Revenue { .. } => z,
        AggregationSpec::ClickThrough => -(-z).exp_m1(),
    }
}

/// List reward `H(sum_k g(mu_k))` for the items at each position.
pub fn aggregate(spec: &AggregationSpec, items: &[usize], mus: &[f64]) -> Result<f64> {
    if items.len() != mus.len() {
        return Err(Error::DimensionMismatch {
            expected: items.len(),
            actual: mus.len(),
        });
    }
    let mut sum = 0.0;
    for (&item, &mu) in items.iter().zip(mus) {
        sum += item_weight(spec, item, mu)?;
    }
    Ok(outer(spec, sum))
}

/// Expected reward of `slate` under the environment's true parameters.
/// The aggregation spec is passed explicitly so a slate can be scored
/// under a spec other than the one the environment was generated with.
pub fn expected_list_reward(
    env: &Environment,
    spec: &AggregationSpec,
    ctx: &Context,
    slate: &Slate,
) -> Result<f64> {
    env.check_slate(slate)?;
    spec.validate(env.num_items())?;
    let k = slate.num_positions();
    let mut mus = Vec::with_capacity(k);
    for (pos, &item) in slate.items().iter().enumerate() {
        let z = ctx.augmented(pos, k);
        mus.push(glm::mean(env.family(), env.true_params(item), &z)?);
    }
    aggregate(spec, slate.items(), &mus)
}

/// True-parameter optimal slate and its expected reward. Monotone `H`
/// reduces the search to a maximum-weight assignment over `g`-means.
pub fn optimal_slate(
    env: &Environment,
    spec: &AggregationSpec,
    ctx: &Context,
) -> Result<(Slate, f64)> {
    spec.validate(env.num_items())?;
    let n = env.num_items();
    let k = env.num_positions();
    let w = WeightMatrix::from_fn(n, k, |item, pos| {
        let z = ctx.augmented(pos, k);
        let mu = glm::mean(env.family(), env.true_params(item), &z)?;
        item_weight(spec, item, mu)
    })?;
    let assignment = matching::solve(&w)?;
    let slate = Slate::new(assignment.items, n)?;
    let value = expected_list_reward(env, spec, ctx, &slate)?;
    Ok((slate, value))
}

/// Per-round regret: optimal expected reward minus the chosen slate's.
/// Mathematically nonnegative; tiny negative values (below 1e-12) can
/// only arise from float rounding in the two evaluations.
pub fn instant_regret(
    env: &Environment,
    spec: &AggregationSpec,
    ctx: &Context,
    chosen: &Slate,
) -> Result<f64> {
    let (_, best) = optimal_slate(env, spec, ctx)?;
    let got = expected_list_reward(env, spec, ctx, chosen)?;
    let regret = best - got;
    debug_assert!(regret >= -1e-12, "regret {regret} below rounding floor");
    Ok(regret)
}
