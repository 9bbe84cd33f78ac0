//! Labeled/unlabeled pool bookkeeping and the multi-round budget schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Disjoint labeled/unlabeled index sets over one training pool.
///
/// Indices are kept sorted; the two sets always partition `0..n_total`.
/// Label values themselves live elsewhere (the oracle); membership in
/// `labeled` is what makes a sample's label visible to training.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolState {
    labeled: Vec<usize>,
    unlabeled: Vec<usize>,
    n_total: usize,
}

impl PoolState {
    pub fn new(mut labeled: Vec<usize>, mut unlabeled: Vec<usize>, n_total: usize) -> Result<Self> {
        labeled.sort_unstable();
        unlabeled.sort_unstable();
        if labeled.windows(2).any(|w| w[0] == w[1]) || unlabeled.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::contract("duplicate index within a pool set"));
        }
        if labeled.len() + unlabeled.len() != n_total {
            return Err(Error::contract(format!(
                "pool sizes {} + {} != n_total {}",
                labeled.len(),
                unlabeled.len(),
                n_total
            )));
        }
        if labeled.last().is_some_and(|&i| i >= n_total)
            || unlabeled.last().is_some_and(|&i| i >= n_total)
        {
            return Err(Error::contract("pool index out of range"));
        }
        // Disjointness: merged sets must cover 0..n_total without repeats.
        let mut merged = Vec::with_capacity(n_total);
        merged.extend_from_slice(&labeled);
        merged.extend_from_slice(&unlabeled);
        merged.sort_unstable();
        if merged.iter().enumerate().any(|(i, &v)| i != v) {
            return Err(Error::contract("labeled and unlabeled sets overlap"));
        }
        Ok(Self {
            labeled,
            unlabeled,
            n_total,
        })
    }

    /// Pool with the given labeled seed set; everything else is unlabeled.
    pub fn from_initial_labeled(labeled: Vec<usize>, n_total: usize) -> Result<Self> {
        let mut is_labeled = vec![false; n_total];
        for &i in &labeled {
            if i >= n_total {
                return Err(Error::contract(format!(
                    "labeled index {i} out of range for pool of {n_total}"
                )));
            }
            is_labeled[i] = true;
        }
        let unlabeled = (0..n_total).filter(|&i| !is_labeled[i]).collect();
        Self::new(labeled, unlabeled, n_total)
    }

    pub fn labeled(&self) -> &[usize] {
        &self.labeled
    }

    pub fn unlabeled(&self) -> &[usize] {
        &self.unlabeled
    }

    pub fn n_total(&self) -> usize {
        self.n_total
    }
}

/// Move the queried indices from the unlabeled to the labeled set.
///
/// The query must be a subset of the current unlabeled set; the oracle's
/// labels for those indices become visible to training once they are
/// members of `labeled`.
pub fn update_pools(state: &PoolState, query: &[usize]) -> Result<PoolState> {
    let mut sorted_query = query.to_vec();
    sorted_query.sort_unstable();
    if sorted_query.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::contract("duplicate index in query"));
    }
    // Subset check against the sorted unlabeled list.
    let mut it = state.unlabeled.iter().peekable();
    for &q in &sorted_query {
        loop {
            match it.peek() {
                Some(&&u) if u < q => {
                    it.next();
                }
                Some(&&u) if u == q => {
                    it.next();
                    break;
                }
                _ => {
                    return Err(Error::contract(format!(
                        "query index {q} is not in the unlabeled pool"
                    )));
                }
            }
        }
    }
    let mut labeled = state.labeled.clone();
    labeled.extend_from_slice(&sorted_query);
    let unlabeled = state
        .unlabeled
        .iter()
        .copied()
        .filter(|i| sorted_query.binary_search(i).is_err())
        .collect();
    PoolState::new(labeled, unlabeled, state.n_total)
}

/// Cumulative labeling fractions and the per-round query budgets derived
/// from them.
///
/// Budgets are differences of half-up-rounded cumulative counts, so the
/// labeled-pool size after round `r` is exactly `round(ratio_r * n_total)`
/// regardless of per-round rounding drift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetSchedule {
    ratios: Vec<f64>,
    n_total: usize,
    initial_labeled: usize,
    per_round_budgets: Vec<usize>,
}

impl BudgetSchedule {
    pub fn ratios(&self) -> &[f64] {
        &self.ratios
    }

    pub fn n_total(&self) -> usize {
        self.n_total
    }

    /// Size of the seed labeled set (`round(ratio_0 * n_total)`).
    pub fn initial_labeled(&self) -> usize {
        self.initial_labeled
    }

    /// Query budgets for rounds `1..R`; empty for a single-ratio schedule.
    pub fn per_round_budgets(&self) -> &[usize] {
        &self.per_round_budgets
    }

    /// Number of rounds (one per ratio, including the seed round).
    pub fn rounds(&self) -> usize {
        self.ratios.len()
    }

    /// Labeled-pool size after round `r` (0-based).
    pub fn cumulative_labeled(&self, round: usize) -> usize {
        round_half_up(self.ratios[round] * self.n_total as f64)
    }
}

fn round_half_up(x: f64) -> usize {
    // f64::round is half-away-from-zero; x is nonnegative here.
    x.round() as usize
}

/// Derive a budget schedule from strictly increasing cumulative ratios.
pub fn make_budget_schedule(ratios: &[f64], n_total: usize) -> Result<BudgetSchedule> {
    if ratios.is_empty() {
        return Err(Error::schedule("at least one ratio required"));
    }
    if n_total == 0 {
        return Err(Error::schedule("n_total must be at least 1"));
    }
    for &r in ratios {
        if !(r > 0.0 && r <= 1.0) || !r.is_finite() {
            return Err(Error::schedule(format!("ratio {r} outside (0, 1]")));
        }
    }
    if ratios.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::schedule("ratios must be strictly increasing"));
    }
    let cumulative: Vec<usize> = ratios
        .iter()
        .map(|&r| round_half_up(r * n_total as f64))
        .collect();
    if cumulative[0] == 0 {
        return Err(Error::schedule(format!(
            "initial labeled size rounds to 0 (ratio {} of {})",
            ratios[0], n_total
        )));
    }
    let mut per_round_budgets = Vec::with_capacity(ratios.len().saturating_sub(1));
    for w in cumulative.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::schedule(format!(
                "budget between cumulative counts {} and {} is not positive",
                w[0], w[1]
            )));
        }
        per_round_budgets.push(w[1] - w[0]);
    }
    Ok(BudgetSchedule {
        ratios: ratios.to_vec(),
        n_total,
        initial_labeled: cumulative[0],
        per_round_budgets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn schedule_matches_published_pool_progression() {
        let s = make_budget_schedule(&[0.01, 0.02, 0.04, 0.06, 0.08, 0.10], 27000).unwrap();
        assert_eq!(s.initial_labeled(), 270);
        assert_eq!(s.per_round_budgets(), &[270, 540, 540, 540, 540]);
        let unlabeled: Vec<usize> = (0..6).map(|r| 27000 - s.cumulative_labeled(r)).collect();
        assert_eq!(unlabeled, vec![26730, 26460, 25920, 25380, 24840, 24300]);
    }

    #[test]
    fn smallest_legal_schedule() {
        let s = make_budget_schedule(&[0.5, 1.0], 2).unwrap();
        assert_eq!(s.initial_labeled(), 1);
        assert_eq!(s.per_round_budgets(), &[1]);
    }

    #[test]
    fn half_up_rounding_on_cumulative_counts() {
        let s = make_budget_schedule(&[0.01, 0.02], 150).unwrap();
        assert_eq!(s.initial_labeled(), 2); // round(1.5) = 2
        assert_eq!(s.per_round_budgets(), &[1]); // round(3.0) - 2
    }

    #[test]
    fn rejects_non_increasing_ratios() {
        assert!(matches!(
            make_budget_schedule(&[0.1, 0.1], 100),
            Err(Error::Schedule(_))
        ));
        assert!(matches!(
            make_budget_schedule(&[0.2, 0.1], 100),
            Err(Error::Schedule(_))
        ));
    }

    #[test]
    fn rejects_zero_budget() {
        // Both ratios round to the same cumulative count.
        assert!(matches!(
            make_budget_schedule(&[0.10, 0.101], 100),
            Err(Error::Schedule(_))
        ));
    }

    #[test]
    fn update_pools_moves_query() {
        let p = PoolState::new(vec![0], vec![1, 2], 3).unwrap();
        let q = update_pools(&p, &[2]).unwrap();
        assert_eq!(q.labeled(), &[0, 2]);
        assert_eq!(q.unlabeled(), &[1]);
    }

    #[test]
    fn update_pools_empty_query_is_identity() {
        let p = PoolState::new(vec![0], vec![1, 2], 3).unwrap();
        let q = update_pools(&p, &[]).unwrap();
        assert_eq!(&q, &p);
    }

    #[test]
    fn update_pools_exhaustion() {
        let all: Vec<usize> = (0..10).collect();
        let p = PoolState::new(vec![], all.clone(), 10).unwrap();
        let q = update_pools(&p, &all).unwrap();
        assert_eq!(q.labeled(), &all[..]);
        assert!(q.unlabeled().is_empty());
    }

    #[test]
    fn update_pools_rejects_labeled_or_out_of_range() {
        let p = PoolState::new(vec![0], vec![1, 2], 3).unwrap();
        assert!(update_pools(&p, &[0]).is_err());
        assert!(update_pools(&p, &[7]).is_err());
        assert!(update_pools(&p, &[1, 1]).is_err());
    }

    #[test]
    fn pool_state_rejects_overlap() {
        assert!(PoolState::new(vec![0, 1], vec![1, 2], 4).is_err());
        assert!(PoolState::new(vec![0], vec![1], 3).is_err());
    }

    proptest! {
        /// Disjointness and cardinality conservation over random queries.
        #[test]
        fn pool_update_conserves(n in 1usize..60, seed in 0u64..500) {
            use rand::seq::SliceRandom;
            let mut rng = crate::rng::stream_rng(seed, 0);
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            let n_lab = seed as usize % (n + 1);
            let labeled = idx[..n_lab].to_vec();
            let unlabeled = idx[n_lab..].to_vec();
            let p = PoolState::new(labeled, unlabeled, n).unwrap();
            let mut q: Vec<usize> = p.unlabeled().to_vec();
            q.shuffle(&mut rng);
            let take = if q.is_empty() { 0 } else { (seed as usize / 7) % (q.len() + 1) };
            q.truncate(take);
            let updated = update_pools(&p, &q).unwrap();
            prop_assert_eq!(updated.labeled().len() + updated.unlabeled().len(), n);
            prop_assert_eq!(updated.labeled().len(), p.labeled().len() + take);
            // PoolState::new re-validated disjointness on construction.
        }

        /// Budgets always sum to round(r_last*n) - round(r_first*n).
        #[test]
        fn budgets_sum_to_cumulative_difference(
            n in 1usize..200_000,
            raw in proptest::collection::vec(1u32..10_000, 1..8),
        ) {
            // Build strictly increasing ratios in (0, 1].
            let total: u64 = raw.iter().map(|&v| v as u64).sum();
            let mut acc = 0u64;
            let ratios: Vec<f64> = raw
                .iter()
                .map(|&v| {
                    acc += v as u64;
                    acc as f64 / total as f64
                })
                .collect();
            match make_budget_schedule(&ratios, n) {
                Ok(s) => {
                    let sum: usize = s.per_round_budgets().iter().sum();
                    let first = (ratios[0] * n as f64).round() as usize;
                    let last = (ratios[ratios.len() - 1] * n as f64).round() as usize;
                    prop_assert_eq!(sum, last - first);
                }
                // Schedules that round to zero-size steps are legitimately rejected.
                Err(Error::Schedule(_)) => {}
                Err(e) => return Err(TestCaseError::fail(format!("unexpected error {e}"))),
            }
        }
    }
}
