//! Synthetic ground-truth environments.
//!
//! An environment draws, per item, a position-decay coefficient
//! `alpha in [0,1]` and context weights `beta` uniform on the unit ball.
//! The outcome probability of showing item `j` at (rescaled) position
//! `pos` under context `x` is `sigmoid(beta_j . x_tilde - alpha_j * pos)`
//! where `x_tilde = (sqrt(3)/2) x`, i.e. the canonical GLM parameters are
//! `theta_j = (-alpha_j, beta_j)` on the same augmented features the
//! learner uses. The learner is therefore well-specified by construction:
//! its mean function with the true parameters reproduces the sampling
//! probability exactly.

use nalgebra::DVector;
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::{self, AugFeature, GlmFamily, ItemParams};
use crate::policy::{Feedback, Slate};
use crate::rewards::AggregationSpec;

/// Contexts are scaled by `sqrt(3)/2` before entering features so the
/// augmented vector `(pos, x_tilde)` has norm at most 1.
pub const CONTEXT_SCALE: f64 = 0.866_025_403_784_438_6;

/// A user/context vector, stored as sampled (unscaled, `||x|| <= 1`).
#[derive(Clone, Debug, PartialEq)]
pub struct Context {
    x: DVector<f64>,
}

impl Context {
    /// Wraps a raw context. The norm bound holds for generated contexts;
    /// it is not enforced here so tests can probe arbitrary inputs.
    pub fn new(x: Vec<f64>) -> Self {
        Context {
            x: DVector::from_vec(x),
        }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn coords(&self) -> &[f64] {
        self.x.as_slice()
    }

    /// Augmented feature for showing something at `position` out of
    /// `num_positions`: rescaled position followed by the scaled context.
    pub fn augmented(&self, position: usize, num_positions: usize) -> AugFeature {
        let pos = glm::rescaled_position(position, num_positions);
        let scaled: Vec<f64> = self.x.iter().map(|c| c * CONTEXT_SCALE).collect();
        AugFeature::new(pos, &scaled)
    }
}

/// Serialized form of an environment (golden-file schema).
#[derive(Serialize, Deserialize)]
struct EnvDoc {
    n: usize,
    k: usize,
    d: usize,
    family: GlmFamily,
    spec: AggregationSpec,
    alpha: Vec<f64>,
    beta: Vec<Vec<f64>>,
    seed: u64,
}

/// Immutable ground truth for one simulated problem instance.
#[derive(Clone, Debug, PartialEq)]
pub struct Environment {
    n: usize,
    k: usize,
    d: usize,
    family: GlmFamily,
    spec: AggregationSpec,
    seed: u64,
    alpha: Vec<f64>,
    beta: Vec<DVector<f64>>,
    // canonical theta_j = (-alpha_j, beta_j), cached for the mean path
    thetas: Vec<ItemParams>,
}

impl Environment {
    pub fn num_items(&self) -> usize {
        self.n
    }

    pub fn num_positions(&self) -> usize {
        self.k
    }

    pub fn context_dim(&self) -> usize {
        self.d
    }

    pub fn family(&self) -> &GlmFamily {
        &self.family
    }

    pub fn spec(&self) -> &AggregationSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn alpha(&self, item: usize) -> f64 {
        self.alpha[item]
    }

    pub fn beta(&self, item: usize) -> &[f64] {
        self.beta[item].as_slice()
    }

    /// The item's GLM parameters on augmented features.
    pub fn true_params(&self, item: usize) -> &ItemParams {
        &self.thetas[item]
    }

    /// A slate is compatible when it ranges over this item universe and
    /// fills exactly the environment's positions.
    pub fn check_slate(&self, slate: &Slate) -> Result<()> {
        if slate.num_items() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                actual: slate.num_items(),
            });
        }
        if slate.num_positions() != self.k {
            return Err(Error::DimensionMismatch {
                expected: self.k,
                actual: slate.num_positions(),
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let doc = EnvDoc {
            n: self.n,
            k: self.k,
            d: self.d,
            family: self.family.clone(),
            spec: self.spec.clone(),
            alpha: self.alpha.clone(),
            beta: self.beta.iter().map(|b| b.as_slice().to_vec()).collect(),
            seed: self.seed,
        };
        serde_json::to_string_pretty(&doc).expect("environment serialization cannot fail")
    }

    /// Rebuilds an environment from its JSON document. Structural
    /// consistency is enforced; the alpha/beta range invariants hold for
    /// generated environments but arbitrary values are accepted so
    /// handcrafted fixtures can exercise edge cases.
    pub fn from_json(json: &str) -> Result<Self> {
        let doc: EnvDoc =
            serde_json::from_str(json).map_err(|e| Error::Config(format!("environment: {e}")))?;
        if doc.alpha.len() != doc.n || doc.beta.len() != doc.n {
            return Err(Error::Config(format!(
                "environment lists {} items but carries {} alphas / {} betas",
                doc.n,
                doc.alpha.len(),
                doc.beta.len()
            )));
        }
        if doc.beta.iter().any(|b| b.len() != doc.d) {
            return Err(Error::Config(format!(
                "every beta must have length d = {}",
                doc.d
            )));
        }
        if doc.k > doc.n || doc.k == 0 || doc.d == 0 {
            return Err(Error::Config(format!(
                "invalid dims n={}, k={}, d={}",
                doc.n, doc.k, doc.d
            )));
        }
        let bad = doc.alpha.iter().any(|a| !a.is_finite())
            || doc.beta.iter().flatten().any(|b| !b.is_finite());
        if bad {
            return Err(Error::Config("non-finite environment parameters".into()));
        }
        doc.spec.validate(doc.n)?;
        let beta: Vec<DVector<f64>> = doc.beta.into_iter().map(DVector::from_vec).collect();
        let thetas = build_thetas(&doc.alpha, &beta);
        Ok(Environment {
            n: doc.n,
            k: doc.k,
            d: doc.d,
            family: doc.family,
            spec: doc.spec,
            seed: doc.seed,
            alpha: doc.alpha,
            beta,
            thetas,
        })
    }
}

fn build_thetas(alpha: &[f64], beta: &[DVector<f64>]) -> Vec<ItemParams> {
    alpha
        .iter()
        .zip(beta)
        .map(|(&a, b)| ItemParams::new(-a, b.as_slice().to_vec()))
        .collect()
}

/// Uniform draw from the unit ball: scale a uniform direction by
/// `U^(1/d)`.
fn sample_unit_ball<R: Rng + ?Sized>(rng: &mut R, d: usize) -> DVector<f64> {
    loop {
        let g: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let v = DVector::from_vec(g);
        let norm = v.norm();
        if norm > 0.0 {
            let radius: f64 = rng.random::<f64>().powf(1.0 / d as f64);
            return v * (radius / norm);
        }
    }
}

/// Draws item parameters for a problem instance; deterministic in `seed`.
pub fn generate_environment(
    seed: u64,
    num_items: usize,
    num_positions: usize,
    ctx_dim: usize,
    family: GlmFamily,
    spec: AggregationSpec,
) -> Result<Environment> {
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
    if let GlmFamily::Linear { noise_scale } = family {
        if !(noise_scale >= 0.0) || !noise_scale.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "noise_scale must be finite and nonnegative, got {noise_scale}"
            )));
        }
    }
    spec.validate(num_items)?;

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut alpha = Vec::with_capacity(num_items);
    let mut beta = Vec::with_capacity(num_items);
    for _ in 0..num_items {
        alpha.push(rng.random::<f64>());
        beta.push(sample_unit_ball(&mut rng, ctx_dim));
    }
    let thetas = build_thetas(&alpha, &beta);
    Ok(Environment {
        n: num_items,
        k: num_positions,
        d: ctx_dim,
        family,
        spec,
        seed,
        alpha,
        beta,
        thetas,
    })
}

/// Draws a context uniform on the unit ball.
pub fn generate_context<R: Rng + ?Sized>(rng: &mut R, ctx_dim: usize) -> Context {
    Context {
        x: sample_unit_ball(rng, ctx_dim),
    }
}

/// Samples one round of per-position outcomes for `slate` under `ctx`.
///
/// Logistic: Bernoulli at the true mean, scaled to `{0, price_j}` under
/// the revenue spec. Linear: true mean plus `noise_scale` Gaussian noise,
/// truncated to `[0, max_reward]`.
pub fn sample_outcomes<R: Rng + ?Sized>(
    env: &Environment,
    ctx: &Context,
    slate: &Slate,
    max_reward: f64,
    rng: &mut R,
) -> Result<Feedback> {
    env.check_slate(slate)?;
    if ctx.dim() != env.d {
        return Err(Error::DimensionMismatch {
            expected: env.d,
            actual: ctx.dim(),
        });
    }
    let k = env.k;
    let mut outcomes = Vec::with_capacity(k);
    for (pos, &item) in slate.items().iter().enumerate() {
        let z = ctx.augmented(pos, k);
        let mu = glm::mean(&env.family, env.true_params(item), &z)?;
        let y = match &env.family {
            GlmFamily::Logistic => {
                let click = if rng.random::<f64>() < mu { 1.0 } else { 0.0 };
                match &env.spec {
                    AggregationSpec::Revenue { prices } => click * prices[item],
                    _ => click,
                }
            }
            GlmFamily::Linear { noise_scale } => {
                let eps: f64 = StandardNormal.sample(rng);
                (mu + noise_scale * eps).clamp(0.0, max_reward)
            }
        };
        outcomes.push(y);
    }
    Ok(Feedback::new(outcomes))
}
