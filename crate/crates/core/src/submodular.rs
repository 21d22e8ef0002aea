//! Set functions, greedy and exhaustive maximizers, and randomized checks of
//! monotonicity and diminishing returns.
//!
//! [`GdpRewardFunction`] views a node's neighbor-selection reward as a set
//! function: `R(A)` sums the marginal-value rewards obtained by inserting the
//! items of `A` one at a time. Because each reward is normalized by the running
//! sum of item values, the total depends on insertion order. Items are inserted
//! in ascending value order (ties by id), the order under which `R` is monotone
//! and submodular; [`order_report`] measures how far other orders drift.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{SelectionEnv, REWARD_EPS};
use crate::error::{Error, Result};

pub const CHECK_TOLERANCE: f64 = 1e-9;
pub const BRUTE_FORCE_LIMIT: usize = 20;

pub trait SetFunction {
    fn name(&self) -> String;
    /// Item ids, ascending.
    fn ground(&self) -> &[usize];
    /// Value of a subset of `ground()`; item order in `set` is irrelevant.
    fn eval(&self, set: &[usize]) -> f64;
    /// Cardinality cap `K`.
    fn cap(&self) -> usize;
}

fn sorted_ground(items: Vec<usize>) -> Result<Vec<usize>> {
    let unique: BTreeSet<usize> = items.iter().copied().collect();
    if unique.len() != items.len() {
        return Err(Error::InvalidArgument("duplicate item in ground set".into()));
    }
    Ok(unique.into_iter().collect())
}

/// Additive item values.
#[derive(Clone, Debug)]
pub struct Modular {
    ground: Vec<usize>,
    values: Vec<f64>,
    cap: usize,
}

impl Modular {
    /// `values[i]` belongs to item `i`.
    pub fn new(values: Vec<f64>, cap: usize) -> Self {
        Modular {
            ground: (0..values.len()).collect(),
            values,
            cap,
        }
    }
}

impl SetFunction for Modular {
    fn name(&self) -> String {
        "modular".into()
    }
    fn ground(&self) -> &[usize] {
        &self.ground
    }
    fn eval(&self, set: &[usize]) -> f64 {
        set.iter().map(|&i| self.values[i]).sum()
    }
    fn cap(&self) -> usize {
        self.cap
    }
}

/// Weighted coverage: each item covers a subset of a weighted universe.
#[derive(Clone, Debug)]
pub struct Coverage {
    ground: Vec<usize>,
    covers: Vec<Vec<usize>>,
    weights: Vec<f64>,
    cap: usize,
}

impl Coverage {
    pub fn new(covers: Vec<Vec<usize>>, weights: Vec<f64>, cap: usize) -> Result<Self> {
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("coverage weights must be finite and nonnegative".into()));
        }
        if covers.iter().flatten().any(|&e| e >= weights.len()) {
            return Err(Error::InvalidArgument("covered element outside universe".into()));
        }
        Ok(Coverage {
            ground: (0..covers.len()).collect(),
            covers,
            weights,
            cap,
        })
    }

    /// Items cover each universe element with probability 0.3; weights in (0, 1].
    pub fn random<R: Rng + ?Sized>(items: usize, universe: usize, cap: usize, rng: &mut R) -> Self {
        let weights: Vec<f64> = (0..universe).map(|_| 1.0 - rng.gen::<f64>()).collect();
        let covers = (0..items)
            .map(|_| (0..universe).filter(|_| rng.gen_bool(0.3)).collect())
            .collect();
        Coverage {
            ground: (0..items).collect(),
            covers,
            weights,
            cap,
        }
    }

    /// Same function with item `i` renamed to `perm[i]`.
    pub fn relabeled(&self, perm: &[usize]) -> Self {
        let mut covers = vec![Vec::new(); self.covers.len()];
        for (i, c) in self.covers.iter().enumerate() {
            covers[perm[i]] = c.clone();
        }
        Coverage {
            ground: self.ground.clone(),
            covers,
            weights: self.weights.clone(),
            cap: self.cap,
        }
    }
}

impl SetFunction for Coverage {
    fn name(&self) -> String {
        "coverage".into()
    }
    fn ground(&self) -> &[usize] {
        &self.ground
    }
    fn eval(&self, set: &[usize]) -> f64 {
        let mut covered = vec![false; self.weights.len()];
        for &i in set {
            for &e in &self.covers[i] {
                covered[e] = true;
            }
        }
        covered
            .iter()
            .zip(&self.weights)
            .filter(|(c, _)| **c)
            .map(|(_, w)| w)
            .sum()
    }
    fn cap(&self) -> usize {
        self.cap
    }
}

/// A function of `|A|` alone.
pub struct SizeFunction {
    name: &'static str,
    ground: Vec<usize>,
    cap: usize,
    f: fn(usize) -> f64,
}

impl SizeFunction {
    pub fn cardinality(n: usize) -> Self {
        SizeFunction { name: "cardinality", ground: (0..n).collect(), cap: n, f: |k| k as f64 }
    }

    pub fn negative_cardinality(n: usize) -> Self {
        SizeFunction { name: "negative_cardinality", ground: (0..n).collect(), cap: n, f: |k| -(k as f64) }
    }

    pub fn squared_cardinality(n: usize) -> Self {
        SizeFunction { name: "squared_cardinality", ground: (0..n).collect(), cap: n, f: |k| (k * k) as f64 }
    }
}

impl SetFunction for SizeFunction {
    fn name(&self) -> String {
        self.name.into()
    }
    fn ground(&self) -> &[usize] {
        &self.ground
    }
    fn eval(&self, set: &[usize]) -> f64 {
        (self.f)(set.len())
    }
    fn cap(&self) -> usize {
        self.cap
    }
}

/// Total selection reward of node `v` as a function of its kept neighbors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GdpRewardFunction {
    pub target: usize,
    ground: Vec<usize>,
    /// `f_c(Agg(x_v, {x_u}))`, aligned with `ground`.
    values: Vec<f64>,
    cap: usize,
}

impl GdpRewardFunction {
    pub fn new(env: &SelectionEnv<'_>, v: usize) -> Result<Self> {
        env.graph().check_node(v)?;
        let ground = env.graph().neighbors(v).to_vec();
        let values = ground.iter().map(|&u| env.pair_score(v, u)).collect::<Result<Vec<_>>>()?;
        Self::from_values(v, ground, values)
    }

    pub fn from_values(target: usize, items: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if items.len() != values.len() {
            return Err(Error::shape("item values", items.len(), values.len()));
        }
        if values.iter().any(|&s| !(s >= 0.0) || !s.is_finite()) {
            return Err(Error::InvalidArgument("item values must be finite and nonnegative".into()));
        }
        let mut pairs: Vec<(usize, f64)> = items.into_iter().zip(values).collect();
        pairs.sort_by_key(|&(u, _)| u);
        let (ground, values): (Vec<usize>, Vec<f64>) = pairs.into_iter().unzip();
        let ground = sorted_ground(ground)?;
        let cap = ground.len();
        Ok(GdpRewardFunction { target, ground, values, cap })
    }

    pub fn with_cap(mut self, cap: usize) -> Self {
        self.cap = cap;
        self
    }

    pub fn value(&self, item: usize) -> f64 {
        let i = self.ground.binary_search(&item).expect("item in ground set");
        self.values[i]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Insertion order used by `eval`: ascending value, ties by id.
    pub fn canonical_order(&self, set: &[usize]) -> Vec<usize> {
        let mut order = set.to_vec();
        order.sort_by(|&a, &b| self.value(a).total_cmp(&self.value(b)).then(a.cmp(&b)));
        order
    }

    /// Sum of the per-step rewards when items arrive in `order`.
    pub fn eval_in_order(&self, order: &[usize]) -> f64 {
        let mut denom = 0.0;
        let mut total = 0.0;
        for &u in order {
            let s = self.value(u);
            denom += s;
            if denom >= REWARD_EPS {
                total += s / denom;
            }
        }
        total
    }

    /// Reward for keeping `item` when `set` is already kept.
    pub fn step_reward(&self, set: &[usize], item: usize) -> f64 {
        let s = self.value(item);
        let denom: f64 = set.iter().map(|&u| self.value(u)).sum::<f64>() + s;
        if denom < REWARD_EPS {
            0.0
        } else {
            s / denom
        }
    }
}

impl SetFunction for GdpRewardFunction {
    fn name(&self) -> String {
        format!("gdp_reward(v={})", self.target)
    }
    fn ground(&self) -> &[usize] {
        &self.ground
    }
    fn eval(&self, set: &[usize]) -> f64 {
        self.eval_in_order(&self.canonical_order(set))
    }
    fn cap(&self) -> usize {
        self.cap
    }
}

/// Greedy maximization under the cardinality cap. Stops early once no item
/// has a positive marginal gain; ties go to the smallest id.
pub fn greedy_maximize(f: &dyn SetFunction) -> Result<(Vec<usize>, f64)> {
    if f.ground().is_empty() {
        return Err(Error::Empty("ground set"));
    }
    if f.cap() == 0 {
        return Err(Error::InvalidArgument("cardinality cap must be at least 1".into()));
    }
    let mut chosen: Vec<usize> = Vec::new();
    let mut value = f.eval(&chosen);
    while chosen.len() < f.cap() {
        let mut best: Option<(usize, f64)> = None;
        for &item in f.ground() {
            if chosen.contains(&item) {
                continue;
            }
            chosen.push(item);
            let gain = f.eval(&chosen) - value;
            chosen.pop();
            if best.is_none_or(|(_, g)| gain > g) {
                best = Some((item, gain));
            }
        }
        match best {
            Some((item, gain)) if gain > 0.0 => {
                chosen.push(item);
                value = f.eval(&chosen);
            }
            _ => break,
        }
    }
    chosen.sort_unstable();
    Ok((chosen, value))
}

/// Exhaustive maximization over all subsets of size at most `K`.
pub fn brute_force_optimal(f: &dyn SetFunction) -> Result<(Vec<usize>, f64)> {
    let ground = f.ground();
    if ground.len() > BRUTE_FORCE_LIMIT {
        return Err(Error::GroundSetTooLarge { size: ground.len(), limit: BRUTE_FORCE_LIMIT });
    }
    let mut best_set = Vec::new();
    let mut best = f.eval(&best_set);
    let mut set = Vec::with_capacity(ground.len());
    for mask in 1u32..(1u32 << ground.len()) {
        if mask.count_ones() as usize > f.cap() {
            continue;
        }
        set.clear();
        set.extend((0..ground.len()).filter(|&i| mask >> i & 1 == 1).map(|i| ground[i]));
        let value = f.eval(&set);
        if value > best {
            best = value;
            best_set = set.clone();
        }
    }
    Ok((best_set, best))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub a: Vec<usize>,
    pub b: Vec<usize>,
    pub item: Option<usize>,
    /// The side required to be at least `rhs - tolerance`.
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub function: String,
    pub property: String,
    pub trials: usize,
    pub passes: usize,
    pub first_witness: Option<Witness>,
}

impl CheckReport {
    pub fn new(function: String, property: &str) -> Self {
        CheckReport {
            function,
            property: property.into(),
            trials: 0,
            passes: 0,
            first_witness: None,
        }
    }

    pub fn passed(&self) -> bool {
        self.trials > 0 && self.passes == self.trials
    }

    pub fn record(&mut self, outcome: Option<Witness>) {
        self.trials += 1;
        match outcome {
            None => self.passes += 1,
            Some(w) => {
                self.first_witness.get_or_insert(w);
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Random chain `A ⊆ B ⊆ items` with varied densities.
fn random_chain<R: Rng + ?Sized>(items: &[usize], rng: &mut R) -> (Vec<usize>, Vec<usize>) {
    let p_b: f64 = rng.gen();
    let p_a: f64 = rng.gen();
    let mut a = Vec::new();
    let mut b = Vec::new();
    for &i in items {
        if rng.gen_bool(p_b) {
            b.push(i);
            if rng.gen_bool(p_a) {
                a.push(i);
            }
        }
    }
    (a, b)
}

/// One monotonicity trial: `f(B) − f(A) ≥ −tol` for a random chain.
pub fn monotone_trial<R: Rng + ?Sized>(f: &dyn SetFunction, rng: &mut R) -> Option<Witness> {
    let (a, b) = random_chain(f.ground(), rng);
    let (fa, fb) = (f.eval(&a), f.eval(&b));
    (fb - fa < -CHECK_TOLERANCE).then_some(Witness { a, b, item: None, lhs: fb, rhs: fa })
}

/// One diminishing-returns trial for a random chain and item `c ∉ B`.
/// Returns `Err` when the ground set is empty.
pub fn submodular_trial<R: Rng + ?Sized>(f: &dyn SetFunction, rng: &mut R) -> Result<Option<Witness>> {
    let ground = f.ground();
    let c = *ground.choose(rng).ok_or(Error::Empty("ground set"))?;
    let rest: Vec<usize> = ground.iter().copied().filter(|&i| i != c).collect();
    let (a, b) = random_chain(&rest, rng);
    let gain = |s: &[usize]| {
        let mut with = s.to_vec();
        with.push(c);
        f.eval(&with) - f.eval(s)
    };
    let (ga, gb) = (gain(&a), gain(&b));
    Ok((ga < gb - CHECK_TOLERANCE).then_some(Witness { a, b, item: Some(c), lhs: ga, rhs: gb }))
}

pub fn check_monotone<R: Rng + ?Sized>(f: &dyn SetFunction, trials: usize, rng: &mut R) -> Result<CheckReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let mut report = CheckReport::new(f.name(), "monotone");
    for _ in 0..trials {
        report.record(monotone_trial(f, rng));
    }
    Ok(report)
}

pub fn check_submodular<R: Rng + ?Sized>(f: &dyn SetFunction, trials: usize, rng: &mut R) -> Result<CheckReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let mut report = CheckReport::new(f.name(), "submodular");
    for _ in 0..trials {
        report.record(submodular_trial(f, rng)?);
    }
    Ok(report)
}

/// How much `R(A)` moves when `A` is inserted in a random order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderReport {
    pub function: String,
    pub trials: usize,
    /// Trials whose permuted value matched the canonical value within tolerance.
    pub order_independent: usize,
    pub max_abs_discrepancy: f64,
    pub mean_abs_discrepancy: f64,
}

pub fn order_report<R: Rng + ?Sized>(f: &GdpRewardFunction, trials: usize, rng: &mut R) -> Result<OrderReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let mut report = OrderReport {
        function: f.name(),
        trials,
        order_independent: 0,
        max_abs_discrepancy: 0.0,
        mean_abs_discrepancy: 0.0,
    };
    for _ in 0..trials {
        let (_, mut set) = random_chain(f.ground(), rng);
        let canonical = f.eval(&set);
        set.shuffle(rng);
        let d = (f.eval_in_order(&set) - canonical).abs();
        if d <= CHECK_TOLERANCE {
            report.order_independent += 1;
        }
        report.max_abs_discrepancy = report.max_abs_discrepancy.max(d);
        report.mean_abs_discrepancy += d / trials as f64;
    }
    Ok(report)
}

/// Compares the set-function marginal `R(A ∪ {c}) − R(A)` with the per-step
/// reward for keeping `c` after `A`. The two coincide exactly when `c` comes
/// last in the canonical order of `A ∪ {c}`; elsewhere the report counts the
/// mismatches.
pub fn reward_equivalence_report<R: Rng + ?Sized>(
    f: &GdpRewardFunction,
    trials: usize,
    rng: &mut R,
) -> Result<CheckReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let mut report = CheckReport::new(f.name(), "marginal_equals_step_reward");
    for _ in 0..trials {
        let c = *f.ground().choose(rng).ok_or(Error::Empty("ground set"))?;
        let rest: Vec<usize> = f.ground().iter().copied().filter(|&i| i != c).collect();
        let (a, _) = random_chain(&rest, rng);
        let mut with = a.clone();
        with.push(c);
        let marginal = f.eval(&with) - f.eval(&a);
        let step = f.step_reward(&a, c);
        let outcome = ((marginal - step).abs() > CHECK_TOLERANCE).then(|| Witness {
            a: a.clone(),
            b: a,
            item: Some(c),
            lhs: marginal,
            rhs: step,
        });
        report.record(outcome);
    }
    Ok(report)
}
