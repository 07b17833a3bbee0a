//! Hypothetical programme allocations scored on predicted potential outcomes.

mod flow;

pub use flow::min_cost_assignment;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flow costs are `-round(po * COST_SCALE)`.
pub const COST_SCALE: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationInput {
    /// n x arms predicted potential outcomes.
    pub po: Vec<Vec<f64>>,
    #[serde(default)]
    pub po_se: Option<Vec<Vec<f64>>>,
    pub observed: Vec<usize>,
    /// Realized outcomes; the observed allocation is scored on these when present.
    #[serde(default)]
    pub realized: Option<Vec<f64>>,
    /// `significant[i][d]`: arm d beats the observed arm of row i significantly.
    #[serde(default)]
    pub significant: Option<Vec<Vec<bool>>>,
    #[serde(default)]
    pub priority_values: Option<Vec<f64>>,
    #[serde(default)]
    pub ever_employed: Option<Vec<bool>>,
}

impl AllocationInput {
    pub fn new(po: Vec<Vec<f64>>, observed: Vec<usize>) -> Result<Self> {
        let input = AllocationInput {
            po,
            po_se: None,
            observed,
            realized: None,
            significant: None,
            priority_values: None,
            ever_employed: None,
        };
        input.validate()?;
        Ok(input)
    }

    pub fn n(&self) -> usize {
        self.po.len()
    }

    pub fn n_arms(&self) -> usize {
        self.po.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let k = self.n_arms();
        if n == 0 || k < 2 {
            return Err(Error::Data("allocation needs at least one row and two arms".into()));
        }
        if self.po.iter().any(|r| r.len() != k || r.iter().any(|v| !v.is_finite())) {
            return Err(Error::Data("potential outcomes must be finite with equal row lengths".into()));
        }
        if self.observed.len() != n || self.observed.iter().any(|&a| a >= k) {
            return Err(Error::Data("observed arms missing or out of range".into()));
        }
        let len_ok = |l: Option<usize>| l.is_none_or(|l| l == n);
        if !len_ok(self.po_se.as_ref().map(Vec::len))
            || !len_ok(self.realized.as_ref().map(Vec::len))
            || !len_ok(self.significant.as_ref().map(Vec::len))
            || !len_ok(self.priority_values.as_ref().map(Vec::len))
            || !len_ok(self.ever_employed.as_ref().map(Vec::len))
        {
            return Err(Error::Data("auxiliary allocation inputs must have one entry per row".into()));
        }
        Ok(())
    }

    /// Per row and arm, whether the arm improves significantly (5%, two-sided)
    /// on the observed arm. Uses explicit flags if given, else the PO standard
    /// errors treating the two arm estimates as independent.
    pub fn significance(&self) -> Result<Vec<Vec<bool>>> {
        if let Some(s) = &self.significant {
            return Ok(s.clone());
        }
        let se = self
            .po_se
            .as_ref()
            .ok_or_else(|| Error::Config("significant_only needs po_se or significance flags".into()))?;
        let z = crate::stats::normal_critical(0.05);
        Ok((0..self.n())
            .map(|i| {
                let o = self.observed[i];
                (0..self.n_arms())
                    .map(|d| {
                        d != o && {
                            let s = (se[i][d].powi(2) + se[i][o].powi(2)).sqrt();
                            self.po[i][d] - self.po[i][o] > z * s
                        }
                    })
                    .collect()
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Capacities {
    /// Upper bound per arm; `None` is unbounded. Arm 0 is usually unbounded.
    PerArm { caps: Vec<Option<usize>> },
    /// Single bound on the number assigned to any programme arm.
    TotalTreated { max: usize },
}

impl Capacities {
    pub fn unbounded(n_arms: usize) -> Self {
        Capacities::PerArm { caps: vec![None; n_arms] }
    }

    /// Every arm, arm 0 included, capped at its observed count. Since the caps
    /// sum to n they all bind, so any feasible allocation has observed shares.
    pub fn observed_shares(observed: &[usize], n_arms: usize) -> Self {
        Capacities::PerArm {
            caps: arm_counts(observed, n_arms).into_iter().map(Some).collect(),
        }
    }

    /// Programme arms capped at their observed counts, arm 0 unbounded.
    pub fn observed_programme_caps(observed: &[usize], n_arms: usize) -> Self {
        let mut caps: Vec<Option<usize>> = arm_counts(observed, n_arms).into_iter().map(Some).collect();
        caps[0] = None;
        Capacities::PerArm { caps }
    }

    pub fn observed_total(observed: &[usize]) -> Self {
        Capacities::TotalTreated {
            max: observed.iter().filter(|&&a| a >= 1).count(),
        }
    }

    /// Per-arm caps and the optional total bound for `n_arms` arms.
    pub fn resolve(&self, n: usize, n_arms: usize) -> Result<(Vec<Option<usize>>, Option<usize>)> {
        let (caps, total) = match self {
            Capacities::PerArm { caps } => {
                if caps.len() != n_arms {
                    return Err(Error::Config(format!("{} capacities for {n_arms} arms", caps.len())));
                }
                (caps.clone(), None)
            }
            Capacities::TotalTreated { max } => (vec![None; n_arms], Some(*max)),
        };
        let room: Option<usize> = caps.iter().try_fold(0usize, |s, c| c.map(|c| s + c));
        if room.is_some_and(|r| r < n) {
            return Err(Error::Config(format!(
                "capacities admit {} rows but {n} must be placed",
                room.unwrap_or(0)
            )));
        }
        Ok((caps, total))
    }

    pub fn is_unbounded(&self) -> bool {
        matches!(self, Capacities::PerArm { caps } if caps.iter().all(Option::is_none))
    }
}

fn arm_counts(assignment: &[usize], n_arms: usize) -> Vec<usize> {
    let mut c = vec![0; n_arms];
    for &a in assignment {
        c[a] += 1;
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainMode {
    /// 100 * sum of gains / sum of observed-arm outcomes over switchers.
    #[default]
    RatioOfSums,
    /// Mean of per-switcher percentage gains; switchers with a zero baseline are skipped.
    MeanOfRatios,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorityRule {
    LargestGain,
    HighestVariance,
    LowestNpPo,
    LongestUnemployed,
    HighestEffectVsNp,
}

impl PriorityRule {
    pub const ALL: [PriorityRule; 5] = [
        PriorityRule::LargestGain,
        PriorityRule::HighestVariance,
        PriorityRule::LowestNpPo,
        PriorityRule::LongestUnemployed,
        PriorityRule::HighestEffectVsNp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PriorityRule::LargestGain => "largest_gain",
            PriorityRule::HighestVariance => "highest_variance",
            PriorityRule::LowestNpPo => "lowest_np_po",
            PriorityRule::LongestUnemployed => "longest_unemployed",
            PriorityRule::HighestEffectVsNp => "highest_effect_vs_np",
        }
    }

    /// Larger keys are served first.
    fn key(self, input: &AllocationInput, i: usize) -> Result<f64> {
        let po = &input.po[i];
        Ok(match self {
            PriorityRule::LargestGain => {
                po.iter().copied().fold(f64::NEG_INFINITY, f64::max) - po[input.observed[i]]
            }
            PriorityRule::HighestVariance => crate::stats::std_dev(po),
            PriorityRule::LowestNpPo => -po[0],
            PriorityRule::LongestUnemployed => {
                input
                    .priority_values
                    .as_ref()
                    .ok_or_else(|| Error::Config("longest_unemployed needs priority values".into()))?[i]
            }
            PriorityRule::HighestEffectVsNp => {
                po[1..].iter().copied().fold(f64::NEG_INFINITY, f64::max) - po[0]
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationResult {
    pub rule: String,
    pub assignment: Vec<usize>,
    pub counts: Vec<usize>,
    /// Percent per arm.
    pub shares: Vec<f64>,
    pub mean_outcome: f64,
    /// Percent of rows whose arm differs from the observed one.
    pub switch_share: f64,
    /// Percent; `None` when nobody switches.
    pub gain_for_switchers: Option<f64>,
}

impl AllocationResult {
    pub fn total_outcome(&self) -> f64 {
        self.mean_outcome * self.assignment.len() as f64
    }

    pub fn gain_label(&self) -> String {
        match self.gain_for_switchers {
            Some(g) => format!("{g:+.2}"),
            None => "-".into(),
        }
    }
}

/// Scores an assignment on the predicted potential outcomes.
pub fn evaluate(rule: &str, assignment: &[usize], input: &AllocationInput, mode: GainMode) -> Result<AllocationResult> {
    let n = input.n();
    let k = input.n_arms();
    if assignment.len() != n || assignment.iter().any(|&a| a >= k) {
        return Err(Error::Data("assignment does not match the allocation input".into()));
    }
    let total: f64 = (0..n).map(|i| input.po[i][assignment[i]]).sum();
    let counts = arm_counts(assignment, k);
    let switchers: Vec<usize> = (0..n).filter(|&i| assignment[i] != input.observed[i]).collect();
    let gain = if switchers.is_empty() {
        None
    } else {
        match mode {
            GainMode::RatioOfSums => {
                let g: f64 = switchers
                    .iter()
                    .map(|&i| input.po[i][assignment[i]] - input.po[i][input.observed[i]])
                    .sum();
                let base: f64 = switchers.iter().map(|&i| input.po[i][input.observed[i]]).sum();
                (base != 0.0).then(|| 100.0 * g / base)
            }
            GainMode::MeanOfRatios => {
                let r: Vec<f64> = switchers
                    .iter()
                    .filter_map(|&i| {
                        let b = input.po[i][input.observed[i]];
                        (b != 0.0).then(|| 100.0 * (input.po[i][assignment[i]] - b) / b)
                    })
                    .collect();
                (!r.is_empty()).then(|| crate::stats::mean(&r))
            }
        }
    };
    Ok(AllocationResult {
        rule: rule.to_string(),
        assignment: assignment.to_vec(),
        shares: counts.iter().map(|&c| 100.0 * c as f64 / n as f64).collect(),
        counts,
        mean_outcome: total / n as f64,
        switch_share: 100.0 * switchers.len() as f64 / n as f64,
        gain_for_switchers: gain,
    })
}

/// The observed allocation, scored on realized outcomes when available.
pub fn allocate_observed(input: &AllocationInput) -> Result<AllocationResult> {
    let mut r = evaluate("observed", &input.observed, input, GainMode::RatioOfSums)?;
    if let Some(y) = &input.realized {
        r.mean_outcome = crate::stats::mean(y);
    }
    Ok(r)
}

fn argmax_first(row: &[f64], allowed: impl Fn(usize) -> bool) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (d, &v) in row.iter().enumerate() {
        if allowed(d) && best.is_none_or(|b| v > row[b]) {
            best = Some(d);
        }
    }
    best
}

/// Everyone gets their best arm. With `significant_only` a row moves only to
/// arms that improve significantly on its observed arm.
pub fn allocate_unconstrained(input: &AllocationInput, significant_only: bool, mode: GainMode) -> Result<AllocationResult> {
    input.validate()?;
    let assignment: Vec<usize> = if significant_only {
        let sig = input.significance()?;
        (0..input.n())
            .map(|i| argmax_first(&input.po[i], |d| sig[i][d]).unwrap_or(input.observed[i]))
            .collect()
    } else {
        input.po.iter().map(|r| argmax_first(r, |_| true).unwrap_or(0)).collect()
    };
    let name = if significant_only { "unconstrained_significant" } else { "unconstrained" };
    evaluate(name, &assignment, input, mode)
}

/// Greedy fill: rows in descending key order (seeded shuffle first, so ties
/// fall to the shuffled order) each take their best arm with room left.
pub fn allocate_priority(
    input: &AllocationInput,
    rule: PriorityRule,
    caps: &Capacities,
    seed: u64,
    mode: GainMode,
) -> Result<AllocationResult> {
    input.validate()?;
    let n = input.n();
    let k = input.n_arms();
    let (mut cap, total) = caps.resolve(n, k)?;
    let keys: Vec<f64> = (0..n).map(|i| rule.key(input, i)).collect::<Result<_>>()?;
    let eligible: Vec<bool> = match (rule, &input.ever_employed) {
        (PriorityRule::LongestUnemployed, Some(e)) => e.clone(),
        _ => vec![true; n],
    };
    // Rows barred from programmes need arm 0; hold its room for them.
    let barred = eligible.iter().filter(|&&e| !e).count();
    if let Some(c0) = cap[0].as_mut() {
        if *c0 < barred {
            return Err(Error::Config(format!(
                "{barred} rows are ineligible for programmes but arm 0 holds only {c0}"
            )));
        }
        *c0 -= barred;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.sort_by(|&a, &b| keys[b].total_cmp(&keys[a]));
    let mut count = vec![0usize; k];
    let mut treated = 0usize;
    let mut assignment = vec![0usize; n];
    for &i in &order {
        if !eligible[i] {
            continue;
        }
        let room = |d: usize| cap[d].is_none_or(|c| count[d] < c) && (d == 0 || total.is_none_or(|t| treated < t));
        let d = argmax_first(&input.po[i], room)
            .ok_or_else(|| Error::Numeric("priority fill ran out of capacity".into()))?;
        count[d] += 1;
        if d >= 1 {
            treated += 1;
        }
        assignment[i] = d;
    }
    evaluate(rule.name(), &assignment, input, mode)
}

/// Exact capacity-constrained optimum via min-cost flow on scaled integer costs.
pub fn allocate_optimal(input: &AllocationInput, caps: &Capacities, mode: GainMode) -> Result<AllocationResult> {
    input.validate()?;
    let (cap, total) = caps.resolve(input.n(), input.n_arms())?;
    let cost: Vec<Vec<i64>> = input
        .po
        .iter()
        .map(|r| r.iter().map(|v| -(v * COST_SCALE).round() as i64).collect())
        .collect();
    let assignment = min_cost_assignment(&cost, &cap, total)
        .ok_or_else(|| Error::Config("no assignment satisfies the capacities".into()))?;
    evaluate("optimal", &assignment, input, mode)
}

/// Uniformly random assignment. Capped arms are filled to their caps
/// (programme arms first, then arm 0); the rows left over are spread
/// uniformly over the unbounded arms. Under a total bound, `max` rows are
/// treated with a uniformly drawn programme arm each.
pub fn allocate_random(input: &AllocationInput, caps: &Capacities, seed: u64, mode: GainMode) -> Result<AllocationResult> {
    input.validate()?;
    let n = input.n();
    let k = input.n_arms();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(&mut rng);
    let mut assignment = vec![0usize; n];
    match caps {
        Capacities::TotalTreated { max } => {
            for &i in rows.iter().take((*max).min(n)) {
                assignment[i] = rng.random_range(1..k);
            }
        }
        Capacities::PerArm { .. } => {
            let (cap, _) = caps.resolve(n, k)?;
            let mut next = 0usize;
            for d in (1..k).chain(std::iter::once(0)) {
                if let Some(c) = cap[d] {
                    let take = c.min(n - next);
                    for &i in &rows[next..next + take] {
                        assignment[i] = d;
                    }
                    next += take;
                }
            }
            let free: Vec<usize> = (0..k).filter(|&d| cap[d].is_none()).collect();
            for &i in &rows[next..] {
                assignment[i] = free[rng.random_range(0..free.len())];
            }
        }
    }
    evaluate("random", &assignment, input, mode)
}

/// Every rule of the allocation table for one capacity setting, rules run
/// concurrently.
pub fn allocation_table(
    input: &AllocationInput,
    caps: &Capacities,
    seed: u64,
    mode: GainMode,
) -> Result<Vec<AllocationResult>> {
    use rayon::prelude::*;
    let has_priority_values = input.priority_values.is_some();
    let has_se = input.po_se.is_some() || input.significant.is_some();
    let mut jobs: Vec<Box<dyn Fn() -> Result<AllocationResult> + Send + Sync + '_>> = vec![
        Box::new(|| allocate_observed(input)),
        Box::new(|| allocate_unconstrained(input, false, mode)),
    ];
    if has_se {
        jobs.push(Box::new(|| allocate_unconstrained(input, true, mode)));
    }
    jobs.push(Box::new(move || allocate_optimal(input, caps, mode)));
    for rule in PriorityRule::ALL {
        if rule == PriorityRule::LongestUnemployed && !has_priority_values {
            continue;
        }
        jobs.push(Box::new(move || allocate_priority(input, rule, caps, seed, mode)));
    }
    jobs.push(Box::new(move || allocate_random(input, caps, seed, mode)));
    jobs.par_iter().map(|j| j()).collect()
}

/// Checks that `assignment` satisfies the capacities.
pub fn respects(assignment: &[usize], caps: &Capacities, n_arms: usize) -> bool {
    let counts = arm_counts(assignment, n_arms);
    match caps {
        Capacities::PerArm { caps } => caps.iter().zip(&counts).all(|(c, &m)| c.is_none_or(|c| m <= c)),
        Capacities::TotalTreated { max } => counts[1..].iter().sum::<usize>() <= *max,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(po: Vec<Vec<f64>>, observed: Vec<usize>) -> AllocationInput {
        AllocationInput::new(po, observed).unwrap()
    }

    #[test]
    fn observed_assignment_has_no_gain() {
        let inp = input(vec![vec![1.0, 2.0], vec![3.0, 1.0]], vec![0, 1]);
        let r = evaluate("x", &inp.observed, &inp, GainMode::RatioOfSums).unwrap();
        assert_eq!(r.switch_share, 0.0);
        assert_eq!(r.gain_for_switchers, None);
        assert_eq!(r.gain_label(), "-");
    }

    #[test]
    fn single_switcher_gain() {
        let inp = input(vec![vec![100.0, 110.0], vec![5.0, 1.0]], vec![0, 0]);
        let r = evaluate("x", &[1, 0], &inp, GainMode::RatioOfSums).unwrap();
        assert!((r.gain_for_switchers.unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(r.switch_share, 50.0);
    }

    #[test]
    fn two_switchers_ratio_of_sums() {
        let inp = input(
            vec![vec![100.0, 110.0], vec![50.0, 45.0], vec![7.0, 7.0]],
            vec![0, 0, 0],
        );
        let r = evaluate("x", &[1, 1, 0], &inp, GainMode::RatioOfSums).unwrap();
        assert!((r.gain_for_switchers.unwrap() - 100.0 * 5.0 / 150.0).abs() < 1e-12);
        let m = evaluate("x", &[1, 1, 0], &inp, GainMode::MeanOfRatios).unwrap();
        assert!((m.gain_for_switchers.unwrap() - 0.0).abs() < 1e-12);
    }

    #[test]
    fn observed_row_uses_realized() {
        let mut inp = input(vec![vec![1.0, 2.0], vec![3.0, 1.0]], vec![0, 1]);
        inp.realized = Some(vec![10.0, 20.0]);
        assert_eq!(allocate_observed(&inp).unwrap().mean_outcome, 15.0);
    }

    #[test]
    fn unconstrained_all_zero_best() {
        let inp = input(vec![vec![5.0, 1.0, 2.0], vec![3.0, 0.0, 3.0]], vec![1, 2]);
        let r = allocate_unconstrained(&inp, false, GainMode::RatioOfSums).unwrap();
        assert_eq!(r.assignment, vec![0, 0]);
        assert_eq!(r.mean_outcome, 4.0);
    }

    #[test]
    fn significant_only_with_huge_se_keeps_observed() {
        let mut inp = input(vec![vec![5.0, 100.0], vec![30.0, 0.0]], vec![0, 1]);
        inp.po_se = Some(vec![vec![1e6; 2]; 2]);
        let r = allocate_unconstrained(&inp, true, GainMode::RatioOfSums).unwrap();
        assert_eq!(r.assignment, inp.observed);
        assert_eq!(r.gain_for_switchers, None);
        assert_eq!(r.switch_share, 0.0);
    }

    #[test]
    fn priority_greedy_trace() {
        // Arms 0,1,2 with caps 2 and 2 on the programmes.
        let po = vec![
            vec![0.0, 10.0, 9.0], // gain 10
            vec![0.0, 8.0, 1.0],  // gain 8
            vec![0.0, 7.0, 6.0],  // gain 7
            vec![0.0, 6.0, 5.0],  // gain 6
            vec![0.0, 2.0, 3.0],  // gain 3
            vec![0.0, 1.0, 0.5],  // gain 1
        ];
        let inp = input(po, vec![0; 6]);
        let caps = Capacities::PerArm {
            caps: vec![None, Some(2), Some(2)],
        };
        let r = allocate_priority(&inp, PriorityRule::LargestGain, &caps, 3, GainMode::RatioOfSums).unwrap();
        // Rows 0,1 fill arm 1; row 2 and 3 take arm 2; the rest stay in 0.
        assert_eq!(r.assignment, vec![1, 1, 2, 2, 0, 0]);
    }

    #[test]
    fn observed_share_caps_are_exact() {
        let po: Vec<Vec<f64>> = (0..20).map(|i| vec![(i % 3) as f64, (i % 5) as f64, (i % 7) as f64]).collect();
        let obs: Vec<usize> = (0..20).map(|i| [0, 0, 1, 2][i % 4]).collect();
        let inp = input(po, obs.clone());
        let caps = Capacities::observed_shares(&obs, 3);
        let want = arm_counts(&obs, 3);
        for rule in [
            PriorityRule::LargestGain,
            PriorityRule::HighestVariance,
            PriorityRule::LowestNpPo,
            PriorityRule::HighestEffectVsNp,
        ] {
            let r = allocate_priority(&inp, rule, &caps, 1, GainMode::RatioOfSums).unwrap();
            assert_eq!(r.counts, want);
        }
        assert_eq!(allocate_optimal(&inp, &caps, GainMode::RatioOfSums).unwrap().counts, want);
        assert_eq!(allocate_random(&inp, &caps, 9, GainMode::RatioOfSums).unwrap().counts, want);
    }

    #[test]
    fn longest_unemployed_respects_eligibility() {
        let mut inp = input(vec![vec![0.0, 5.0]; 4], vec![0, 0, 1, 1]);
        inp.priority_values = Some(vec![4.0, 3.0, 2.0, 1.0]);
        inp.ever_employed = Some(vec![false, true, true, true]);
        let caps = Capacities::observed_shares(&inp.observed, 2);
        let r = allocate_priority(&inp, PriorityRule::LongestUnemployed, &caps, 0, GainMode::RatioOfSums).unwrap();
        assert_eq!(r.assignment, vec![0, 1, 1, 0]);
        inp.ever_employed = Some(vec![false, false, false, true]);
        assert!(allocate_priority(&inp, PriorityRule::LongestUnemployed, &caps, 0, GainMode::RatioOfSums).is_err());
    }

    #[test]
    fn infeasible_caps_error() {
        let inp = input(vec![vec![0.0, 1.0]; 3], vec![0, 0, 1]);
        let caps = Capacities::PerArm {
            caps: vec![Some(1), Some(1)],
        };
        assert!(allocate_optimal(&inp, &caps, GainMode::RatioOfSums).is_err());
        assert!(allocate_priority(&inp, PriorityRule::LargestGain, &caps, 0, GainMode::RatioOfSums).is_err());
    }

    #[test]
    fn greedy_can_fall_below_observed() {
        // A greedy rule serving row 0 first wastes the only programme slot.
        let inp = input(vec![vec![0.0, 10.0], vec![0.0, 100.0]], vec![0, 1]);
        let caps = Capacities::observed_shares(&inp.observed, 2);
        let g = allocate_priority(&inp, PriorityRule::LargestGain, &caps, 0, GainMode::RatioOfSums).unwrap();
        let obs = evaluate("observed", &inp.observed, &inp, GainMode::RatioOfSums).unwrap();
        let opt = allocate_optimal(&inp, &caps, GainMode::RatioOfSums).unwrap();
        assert!(g.mean_outcome < obs.mean_outcome);
        assert!(opt.mean_outcome >= obs.mean_outcome);
    }
}
