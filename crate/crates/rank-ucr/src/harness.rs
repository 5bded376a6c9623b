//! Experiment driver: paired runs, regret bookkeeping, aggregation, CSV
//! output.
//!
//! Every run draws its own environment, context stream, action stream,
//! and outcome stream from seeds derived off `(base_seed, run_index)`
//! alone, never the policy. Policies executed for the same run index
//! therefore face the same problem instance and the same randomness
//! (common random numbers), which is what makes per-round curve
//! differences meaningful at modest run counts.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::policy::{random_select, Policy, PolicyKind, Slate};
use crate::rewards::instant_regret;
use crate::simenv::{generate_context, generate_environment, sample_outcomes, Context};

const STREAM_ENV: u64 = 0;
const STREAM_CONTEXT: u64 = 1;
const STREAM_ACTION: u64 = 2;
const STREAM_OUTCOME: u64 = 3;

fn splitmix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the seed for one `(run, stream)` pair from the experiment's
/// base seed via splitmix64 steps. The policy is deliberately not part
/// of the key: all policies share each run's randomness.
pub fn derive_seed(base_seed: u64, run: u64, stream: u64) -> u64 {
    const GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;
    let mut z = base_seed;
    z = splitmix(z.wrapping_add(GAMMA.wrapping_mul(run.wrapping_add(1))));
    z = splitmix(z.wrapping_add(GAMMA.wrapping_mul(stream.wrapping_add(1))));
    z
}

/// Per-round regret trace of a single run under a single policy.
#[derive(Clone, Debug, PartialEq)]
pub struct RegretCurve {
    pub policy: PolicyKind,
    pub run: usize,
    pub inst: Vec<f64>,
    pub cum: Vec<f64>,
}

/// Across-run summary of one policy's cumulative-regret curves.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateCurve {
    pub policy: PolicyKind,
    pub runs: usize,
    pub mean_cum: Vec<f64>,
    pub std_cum: Vec<f64>,
    pub stderr_cum: Vec<f64>,
}

/// Everything an experiment produces, prior to serialization.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOutput {
    pub curves: Vec<RegretCurve>,
    pub aggregates: Vec<AggregateCurve>,
}

fn at_round(round: usize) -> impl Fn(Error) -> Error {
    move |source| Error::AtRound {
        round,
        source: Box::new(source),
    }
}

/// Executes one policy on one run index and returns its regret curve.
///
/// If a model-based select hits an item with no usable data yet (possible
/// right after initialization when `t0 * k` is small relative to `n`),
/// the round falls back to a uniformly random slate, extending the
/// exploration phase. The fallback draws from the shared action stream,
/// and every policy's action stream is at the same position after
/// initialization, so paired policies facing the same gap pick the same
/// fallback slate. Any other error aborts the run, tagged with the round.
pub fn run_one(cfg: &ExperimentConfig, kind: &PolicyKind, run: usize) -> Result<RegretCurve> {
    let env = generate_environment(
        derive_seed(cfg.base_seed, run as u64, STREAM_ENV),
        cfg.n,
        cfg.k,
        cfg.d,
        cfg.family.clone(),
        cfg.spec.clone(),
    )?;
    let mut ctx_rng =
        ChaCha12Rng::seed_from_u64(derive_seed(cfg.base_seed, run as u64, STREAM_CONTEXT));
    let mut action_rng =
        ChaCha12Rng::seed_from_u64(derive_seed(cfg.base_seed, run as u64, STREAM_ACTION));
    let mut outcome_rng =
        ChaCha12Rng::seed_from_u64(derive_seed(cfg.base_seed, run as u64, STREAM_OUTCOME));

    let mut policy = Policy::new(
        kind.clone(),
        cfg.n,
        cfg.k,
        cfg.d,
        cfg.t0,
        cfg.family.clone(),
        cfg.spec.clone(),
        cfg.max_reward,
    )?;

    let mut inst = Vec::with_capacity(cfg.t);
    let mut cum = Vec::with_capacity(cfg.t);
    let mut total = 0.0;
    let mut pending: Vec<(Context, Slate, crate::policy::Feedback)> = Vec::new();

    for t in 0..cfg.t {
        let ctx = generate_context(&mut ctx_rng, cfg.d);
        let slate = match policy.select(&ctx, &mut action_rng) {
            Ok(s) => s,
            Err(Error::SingularItemCovariance { .. }) => {
                random_select(&mut action_rng, cfg.n, cfg.k).map_err(at_round(t))?
            }
            Err(e) => return Err(at_round(t)(e)),
        };
        let feedback =
            sample_outcomes(&env, &ctx, &slate, cfg.max_reward, &mut outcome_rng).map_err(at_round(t))?;
        let regret = instant_regret(&env, &cfg.spec, &ctx, &slate).map_err(at_round(t))?;
        debug_assert!(regret >= -1e-9, "regret {regret} below float tolerance");
        // the optimum is computed by the same code path as the slate value,
        // so any negative residue is pure rounding; clamp keeps cum monotone
        let regret = regret.max(0.0);
        total += regret;
        inst.push(regret);
        cum.push(total);

        pending.push((ctx, slate, feedback));
        if pending.len() >= cfg.update_every || t + 1 == cfg.t {
            for (c, s, f) in pending.drain(..) {
                policy.update(&c, &s, &f).map_err(at_round(t))?;
            }
        }
    }

    Ok(RegretCurve {
        policy: kind.clone(),
        run,
        inst,
        cum,
    })
}

/// Per-round mean, sample standard deviation (denominator `runs - 1`),
/// and standard error of the cumulative regret across one policy's runs.
/// A single run reports zeros for spread, by convention.
pub fn aggregate(curves: &[RegretCurve]) -> Result<AggregateCurve> {
    let first = curves
        .first()
        .ok_or_else(|| Error::InvalidArgument("aggregate needs at least one curve".into()))?;
    let horizon = first.cum.len();
    for c in curves {
        if c.policy != first.policy {
            return Err(Error::InvalidArgument(
                "aggregate mixes curves from different policies".into(),
            ));
        }
        if c.cum.len() != horizon {
            return Err(Error::InvalidArgument(
                "aggregate mixes curves of different lengths".into(),
            ));
        }
    }
    // fix the summation order so the result is bitwise independent of
    // how the caller happened to arrange the curves
    let mut ordered: Vec<&RegretCurve> = curves.iter().collect();
    ordered.sort_by_key(|c| c.run);
    let runs = ordered.len();
    let mut mean_cum = Vec::with_capacity(horizon);
    let mut std_cum = Vec::with_capacity(horizon);
    let mut stderr_cum = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let mean = ordered.iter().map(|c| c.cum[t]).sum::<f64>() / runs as f64;
        let std = if runs > 1 {
            let ss = ordered
                .iter()
                .map(|c| (c.cum[t] - mean).powi(2))
                .sum::<f64>();
            (ss / (runs - 1) as f64).sqrt()
        } else {
            0.0
        };
        mean_cum.push(mean);
        std_cum.push(std);
        stderr_cum.push(std / (runs as f64).sqrt());
    }
    Ok(AggregateCurve {
        policy: first.policy.clone(),
        runs,
        mean_cum,
        std_cum,
        stderr_cum,
    })
}

fn run_tasks_sequential(cfg: &ExperimentConfig) -> Result<Vec<RegretCurve>> {
    let mut curves = Vec::with_capacity(cfg.policies.len() * cfg.runs);
    for kind in &cfg.policies {
        for run in 0..cfg.runs {
            curves.push(run_one(cfg, kind, run)?);
        }
    }
    Ok(curves)
}

#[cfg(feature = "parallel")]
fn run_tasks_parallel(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<Vec<RegretCurve>> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let tasks: Vec<(&PolicyKind, usize)> = cfg
        .policies
        .iter()
        .flat_map(|kind| (0..cfg.runs).map(move |run| (kind, run)))
        .collect();
    pool.install(|| {
        tasks
            .par_iter()
            .map(|&(kind, run)| run_one(cfg, kind, run))
            .collect()
    })
}

/// Runs every `(policy, run)` pair and aggregates per policy.
///
/// `threads = Some(1)` forces the plain sequential driver; any other
/// value uses the work-stealing pool when the `parallel` feature is on
/// (`None` lets the pool pick its own width). Results are ordered by
/// `(roster position, run)` regardless of how the work was scheduled,
/// so the output is a pure function of the config.
pub fn run_experiment(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<ExperimentOutput> {
    cfg.validate()?;
    #[cfg(feature = "parallel")]
    let curves = if threads == Some(1) {
        run_tasks_sequential(cfg)?
    } else {
        run_tasks_parallel(cfg, threads)?
    };
    #[cfg(not(feature = "parallel"))]
    let curves = {
        let _ = threads;
        run_tasks_sequential(cfg)?
    };

    let mut aggregates = Vec::with_capacity(cfg.policies.len());
    for (i, _) in cfg.policies.iter().enumerate() {
        aggregates.push(aggregate(&curves[i * cfg.runs..(i + 1) * cfg.runs])?);
    }
    Ok(ExperimentOutput { curves, aggregates })
}

/// 17 significant digits: enough for bit-exact f64 round trips.
fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn xi_column(policy: &PolicyKind) -> String {
    match policy.xi() {
        Some(xi) => fmt_f64(xi),
        None => String::new(),
    }
}

/// Sort key that orders policies by label, then xi. xi values are
/// validated finite, so the bit transform is a total order here.
fn policy_key(policy: &PolicyKind) -> (&'static str, u64) {
    let xi_bits = match policy.xi() {
        Some(xi) => {
            debug_assert!(xi >= 0.0);
            xi.to_bits()
        }
        None => 0,
    };
    (policy.label(), xi_bits)
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Serializes an experiment to `<stem>_raw.csv` (every round of every
/// run) and `<stem>_agg.csv` (across-run summaries). Rows are sorted by
/// `(policy, xi, run, t)` and floats printed with 17 significant digits,
/// so the bytes depend only on the curves. Returns the two paths.
pub fn write_csv(output: &ExperimentOutput, stem: &Path) -> Result<(PathBuf, PathBuf)> {
    let raw_path = stem.with_file_name(format!(
        "{}_raw.csv",
        stem.file_name()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::InvalidArgument("output stem has no file name".into()))?
    ));
    let agg_path = stem.with_file_name(format!(
        "{}_agg.csv",
        stem.file_name().and_then(|s| s.to_str()).unwrap()
    ));
    if let Some(dir) = stem.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
    }

    let mut curve_order: Vec<&RegretCurve> = output.curves.iter().collect();
    curve_order.sort_by(|a, b| {
        policy_key(&a.policy)
            .cmp(&policy_key(&b.policy))
            .then(a.run.cmp(&b.run))
    });
    let mut raw = String::new();
    raw.push_str("policy,xi,run,t,inst_regret,cum_regret\n");
    for curve in curve_order {
        let label = curve.policy.label();
        let xi = xi_column(&curve.policy);
        for t in 0..curve.inst.len() {
            let _ = writeln!(
                raw,
                "{label},{xi},{run},{t},{inst},{cum}",
                run = curve.run,
                inst = fmt_f64(curve.inst[t]),
                cum = fmt_f64(curve.cum[t]),
            );
        }
    }
    let mut file = std::fs::File::create(&raw_path).map_err(io_err(&raw_path))?;
    file.write_all(raw.as_bytes()).map_err(io_err(&raw_path))?;

    let mut agg_order: Vec<&AggregateCurve> = output.aggregates.iter().collect();
    agg_order.sort_by(|a, b| policy_key(&a.policy).cmp(&policy_key(&b.policy)));
    let mut agg = String::new();
    if agg_order.iter().any(|a| a.runs == 1) {
        agg.push_str("# single-run aggregate: std_cum and stderr_cum are 0 by convention\n");
    }
    agg.push_str("policy,xi,t,mean_cum,std_cum,stderr_cum\n");
    for a in agg_order {
        let label = a.policy.label();
        let xi = xi_column(&a.policy);
        for t in 0..a.mean_cum.len() {
            let _ = writeln!(
                agg,
                "{label},{xi},{t},{mean},{std},{se}",
                mean = fmt_f64(a.mean_cum[t]),
                std = fmt_f64(a.std_cum[t]),
                se = fmt_f64(a.stderr_cum[t]),
            );
        }
    }
    let mut file = std::fs::File::create(&agg_path).map_err(io_err(&agg_path))?;
    file.write_all(agg.as_bytes()).map_err(io_err(&agg_path))?;

    Ok((raw_path, agg_path))
}
