//! Maximum-weight assignment of items to display positions.
//!
//! A slate fills every one of the `K` positions with a distinct item out
//! of `N >= K` candidates. [`solve`] finds an assignment maximizing the
//! sum of per-(item, position) weights with an `O(n^3)` shortest-path
//! Hungarian method (the potentials formulation), then refines ties so
//! the returned slate is the lexicographically smallest optimal one.
//! [`brute_force`] enumerates all ordered selections and is the test
//! oracle; it applies the same tie rule by construction.

use itertools::Itertools;

use crate::error::{Error, Result};

/// Enumeration cap for [`brute_force`]: `N! / (N-K)!` must not exceed this.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

/// Relative tolerance used when deciding whether two assignment totals
/// tie during lexicographic refinement.
const TIE_REL_TOL: f64 = 1e-9;

/// Dense `N x K` table of assignment weights, items along the rows.
/// Entries may be negative; every position must still be filled.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMatrix {
    n: usize,
    k: usize,
    w: Vec<f64>,
}

impl WeightMatrix {
    /// Builds from a row-major buffer (`entries[item * k + pos]`).
    pub fn new(n: usize, k: usize, entries: Vec<f64>) -> Result<Self> {
        if n == 0 || k == 0 {
            return Err(Error::InvalidArgument(
                "weight matrix needs at least one item and one position".into(),
            ));
        }
        if k > n {
            return Err(Error::TooManyPositions {
                positions: k,
                items: n,
            });
        }
        if entries.len() != n * k {
            return Err(Error::DimensionMismatch {
                expected: n * k,
                actual: entries.len(),
            });
        }
        if let Some(bad) = entries.iter().find(|e| !e.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "assignment weights must be finite, got {bad}"
            )));
        }
        Ok(WeightMatrix { n, k, w: entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::InvalidArgument(
                "all weight rows must have the same length".into(),
            ));
        }
        Self::new(n, k, rows.iter().flatten().copied().collect())
    }

    /// Builds entry-by-entry; `f(item, position)` may fail.
    pub fn from_fn(
        n: usize,
        k: usize,
        mut f: impl FnMut(usize, usize) -> Result<f64>,
    ) -> Result<Self> {
        let mut entries = Vec::with_capacity(n * k);
        for item in 0..n {
            for pos in 0..k {
                entries.push(f(item, pos)?);
            }
        }
        Self::new(n, k, entries)
    }

    pub fn num_items(&self) -> usize {
        self.n
    }

    pub fn num_positions(&self) -> usize {
        self.k
    }

    pub fn get(&self, item: usize, pos: usize) -> f64 {
        assert!(item < self.n && pos < self.k);
        self.w[item * self.k + pos]
    }
}

/// A filled slate: `items[pos]` is the item shown at `pos`, and `total`
/// is the weight sum accumulated in position order over the original
/// matrix (so equal slates always produce bit-identical totals).
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub items: Vec<usize>,
    pub total: f64,
}

fn total_in_position_order(w: &WeightMatrix, items: &[usize]) -> f64 {
    items
        .iter()
        .enumerate()
        .map(|(pos, &item)| w.get(item, pos))
        .sum()
}

/// Shortest-path Hungarian method on the subproblem restricted to
/// `rows` (positions) and `cols` (candidate items), minimizing negated
/// weights. Requires `rows.len() <= cols.len()`. Returns for each row
/// the index *into `cols`* of its assigned item.
fn hungarian(w: &WeightMatrix, rows: &[usize], cols: &[usize]) -> Vec<usize> {
    let n = rows.len();
    let m = cols.len();
    debug_assert!(n <= m && n > 0);
    let cost = |i: usize, j: usize| -w.get(cols[j - 1], rows[i - 1]);

    let mut u = vec![0.0_f64; n + 1];
    let mut v = vec![0.0_f64; m + 1];
    let mut row_of = vec![0_usize; m + 1]; // row currently matched to column j, 0 = free
    let mut way = vec![0_usize; m + 1];

    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0_usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0_usize;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        // walk the augmenting path back, flipping matches
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assigned = vec![usize::MAX; n];
    for j in 1..=m {
        if row_of[j] != 0 {
            assigned[row_of[j] - 1] = j - 1;
        }
    }
    debug_assert!(assigned.iter().all(|&j| j != usize::MAX));
    assigned
}

/// Best achievable total when `prefix` already occupies the leading
/// positions and the remaining positions choose among the unused items.
fn best_total_with_prefix(w: &WeightMatrix, prefix: &[usize]) -> f64 {
    let k = w.num_positions();
    let mut total: f64 = prefix
        .iter()
        .enumerate()
        .map(|(pos, &item)| w.get(item, pos))
        .sum();
    if prefix.len() < k {
        let rows: Vec<usize> = (prefix.len()..k).collect();
        let cols: Vec<usize> = (0..w.num_items()).filter(|i| !prefix.contains(i)).collect();
        let local = hungarian(w, &rows, &cols);
        for (r, &c) in rows.iter().zip(local.iter()) {
            total += w.get(cols[c], *r);
        }
    }
    total
}

/// Maximum-weight assignment; among optimal slates, returns the one with
/// the lexicographically smallest item vector.
pub fn solve(w: &WeightMatrix) -> Result<Assignment> {
    let k = w.num_positions();
    let rows: Vec<usize> = (0..k).collect();
    let cols: Vec<usize> = (0..w.num_items()).collect();
    let local = hungarian(w, &rows, &cols);
    let initial: Vec<usize> = local.into_iter().map(|c| cols[c]).collect();
    let best = total_in_position_order(w, &initial);
    let tol = TIE_REL_TOL * (1.0 + best.abs());

    // lexicographic refinement: greedily pin the smallest item id at each
    // position that still admits an optimal completion
    let mut prefix: Vec<usize> = Vec::with_capacity(k);
    for pos in 0..k {
        let mut chosen = None;
        for cand in 0..w.num_items() {
            if prefix.contains(&cand) {
                continue;
            }
            prefix.push(cand);
            if best_total_with_prefix(w, &prefix) >= best - tol {
                chosen = Some(cand);
                break;
            }
            prefix.pop();
        }
        debug_assert!(chosen.is_some(), "no completion at position {pos}");
        if chosen.is_none() {
            // numerically impossible fallback: keep the unrefined slate
            return Ok(Assignment {
                total: best,
                items: initial,
            });
        }
    }
    let total = total_in_position_order(w, &prefix);
    Ok(Assignment {
        items: prefix,
        total,
    })
}

/// Exhaustive oracle: enumerates every ordered selection of `K` distinct
/// items in lexicographic order and keeps the first slate attaining the
/// maximum total. Refuses instances with more than [`ENUMERATION_LIMIT`]
/// selections.
pub fn brute_force(w: &WeightMatrix) -> Result<Assignment> {
    let n = w.num_items();
    let k = w.num_positions();
    let mut size: u128 = 1;
    for i in 0..k {
        size = size.saturating_mul((n - i) as u128);
    }
    if size > ENUMERATION_LIMIT {
        return Err(Error::EnumerationTooLarge {
            size,
            limit: ENUMERATION_LIMIT,
        });
    }

    let mut best: Option<Assignment> = None;
    for items in (0..n).permutations(k) {
        let total = total_in_position_order(w, &items);
        let better = match &best {
            None => true,
            Some(b) => total > b.total,
        };
        if better {
            best = Some(Assignment { items, total });
        }
    }
    Ok(best.expect("at least one selection exists"))
}
