//! Exact computation by pruned depth-first enumeration.
//!
//! A [`ConstrainedSystem`] fixes every site outside a free region and places
//! per-site rules on the thinning image `T(σ)`. The search visits free sites
//! in lexicographic order and abandons a branch as soon as a rule is
//! violated under three-valued evaluation (unassigned sites are unknown).
//! Leaves are tallied as integer counts per key and per number of ones in
//! the free region, so one enumeration serves every `p`.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use rayon::prelude::*;
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::{
    check_probability, fixed_area, BoundaryCondition, ConfigError, Configuration,
};
use crate::lattice::{
    cover_volume, loophole_shape_in, observation_window_in, unit_vector, LatticeBox, LatticeError,
    Region, Site,
};

/// Environment variable overriding [`EnumLimits::full_cap`].
pub const MAX_ENUM_ENV: &str = "GIBBSLAB_MAX_ENUM";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error("{sites} free sites exceed the enumeration cap of {cap}")]
    CapExceeded { sites: usize, cap: usize },
    #[error("enumeration aborted after visiting {0} nodes")]
    BudgetExceeded(u64),
    #[error("conditioning event has probability zero")]
    ZeroDenominator,
    #[error("conditioning pattern has an isolated occupied site at {0} and is not a thinning image")]
    NotInSupport(Site),
    #[error("key window has {0} sites, at most 64 are supported")]
    KeyTooWide(usize),
    #[error("{0}")]
    Invalid(String),
    #[error("malformed kernel table: {0}")]
    Parse(String),
}

/// Size guards for enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnumLimits {
    /// Free sites allowed when no rule prunes the search.
    pub full_cap: usize,
    /// Free sites allowed when rules prune the search.
    pub pruned_cap: usize,
    /// Search nodes visited before giving up.
    pub node_budget: u64,
}

impl Default for EnumLimits {
    fn default() -> Self {
        EnumLimits {
            full_cap: 28,
            pruned_cap: 128,
            node_budget: 4_000_000_000,
        }
    }
}

impl EnumLimits {
    /// Defaults, with `full_cap` taken from `GIBBSLAB_MAX_ENUM` when set.
    pub fn from_env() -> Self {
        let mut limits = Self::default();
        if let Some(cap) = std::env::var(MAX_ENUM_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
        {
            limits.full_cap = cap;
        }
        limits
    }
}

/// Which per-site constraint an enumeration enforces on its region.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    /// Occupied sites have no occupied neighbor (first-layer support).
    Isolation,
    /// Occupied sites have an occupied neighbor (second-layer support).
    NonIsolation,
    None,
}

impl std::str::FromStr for Constraint {
    type Err = OracleError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "isolation" => Ok(Constraint::Isolation),
            "nonisolation" => Ok(Constraint::NonIsolation),
            "none" => Ok(Constraint::None),
            other => Err(OracleError::Invalid(format!("unknown constraint {other:?}"))),
        }
    }
}

/// A rule on one site.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    /// `T(σ)_x` must equal the given value. `Image(false)` is isolation.
    Image(bool),
    /// `σ_x = 1` requires an occupied neighbor.
    NonIsolated,
}

/// The Bernoulli weight `R(ω_U) = Π p^{ω_x} (1-p)^{1-ω_x}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightFunction {
    pub p: f64,
}

impl WeightFunction {
    pub fn new(p: f64) -> Result<Self, OracleError> {
        check_probability(p)?;
        Ok(WeightFunction { p })
    }

    pub fn weight(&self, config: &Configuration) -> f64 {
        let n = config.carrier().len();
        let k = config.count_ones();
        self.p.powi(k as i32) * (1.0 - self.p).powi((n - k) as i32)
    }

    /// `ln (p^k (1-p)^{n-k})`, with `0 · ln 0 = 0`.
    pub fn log_weight(&self, k: usize, n: usize) -> f64 {
        let a = if k == 0 { 0.0 } else { k as f64 * self.p.ln() };
        let b = if n == k { 0.0 } else { (n - k) as f64 * (1.0 - self.p).ln() };
        a + b
    }

    /// `ln Σ_k N_k p^k (1-p)^{n-k}`; `-inf` when every term vanishes.
    pub fn log_sum(&self, counts: &[u128]) -> f64 {
        let n = counts.len() - 1;
        let terms: Vec<f64> = counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(k, &c)| (c as f64).ln() + self.log_weight(k, n))
            .filter(|t| t.is_finite())
            .collect();
        log_sum_exp(&terms)
    }
}

pub(crate) fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone)]
struct RuleSite {
    center: Site,
    nbrs: Vec<Site>,
    rule: Rule,
}

impl RuleSite {
    /// Violation under three-valued evaluation (`-1` = unknown).
    #[inline]
    fn violated(&self, v: &[i8]) -> bool {
        let c = v[self.center];
        match self.rule {
            Rule::Image(false) => c == 1 && self.nbrs.iter().any(|&n| v[n] == 1),
            Rule::Image(true) => c == 0 || self.nbrs.iter().all(|&n| v[n] == 0),
            Rule::NonIsolated => c == 1 && self.nbrs.iter().all(|&n| v[n] == 0),
        }
    }
}

/// Integer leaf counts per key, indexed by the number of ones among the
/// `n` free sites.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountTable {
    n: usize,
    counts: BTreeMap<u64, Vec<u128>>,
}

impl CountTable {
    fn new(n: usize) -> Self {
        CountTable {
            n,
            counts: BTreeMap::new(),
        }
    }

    #[inline]
    fn add(&mut self, key: u64, ones: usize) {
        let n = self.n;
        self.counts.entry(key).or_insert_with(|| vec![0; n + 1])[ones] += 1;
    }

    fn merge(mut self, other: CountTable) -> CountTable {
        for (key, row) in other.counts {
            match self.counts.get_mut(&key) {
                Some(mine) => {
                    for (a, b) in mine.iter_mut().zip(row) {
                        *a += b;
                    }
                }
                None => {
                    self.counts.insert(key, row);
                }
            }
        }
        self
    }

    /// Number of weighted sites.
    pub fn weighted_sites(&self) -> usize {
        self.n
    }

    pub fn keys(&self) -> impl Iterator<Item = u64> + '_ {
        self.counts.keys().copied()
    }

    pub fn counts(&self, key: u64) -> Option<&[u128]> {
        self.counts.get(&key).map(Vec::as_slice)
    }

    /// Number of leaves.
    pub fn leaves(&self) -> u128 {
        self.counts.values().flatten().sum()
    }

    /// `ln` of the Bernoulli mass of the leaves with this key.
    pub fn log_mass(&self, key: u64, p: f64) -> f64 {
        match self.counts.get(&key) {
            Some(row) => WeightFunction { p }.log_sum(row),
            None => f64::NEG_INFINITY,
        }
    }

    /// `ln` of the Bernoulli mass of all leaves.
    pub fn log_total(&self, p: f64) -> f64 {
        let w = WeightFunction { p };
        let terms: Vec<f64> = self.counts.values().map(|r| w.log_sum(r)).collect();
        log_sum_exp(&terms)
    }

    /// Normalized distribution over keys.
    pub fn to_kernel(&self, window: &Region, p: f64) -> Result<KernelTable, OracleError> {
        let log_z = self.log_total(p);
        if log_z == f64::NEG_INFINITY {
            return Err(OracleError::ZeroDenominator);
        }
        let patterns = self
            .counts
            .keys()
            .map(|&k| (k, (self.log_mass(k, p) - log_z).exp()))
            .filter(|&(_, pr)| pr > 0.0)
            .collect();
        Ok(KernelTable {
            window: window.clone(),
            patterns,
            log_z,
        })
    }
}

/// Free sites, frozen exterior and rules, ready to enumerate.
#[derive(Debug, Clone)]
pub struct ConstrainedSystem {
    frame: Arc<LatticeBox>,
    free: Region,
    init: Vec<i8>,
    order: Vec<Site>,
    rules: Vec<RuleSite>,
    checks: Vec<Vec<u32>>,
    infeasible: bool,
    forced_ones: usize,
}

impl ConstrainedSystem {
    /// `outside(y)` gives the frozen value of every frame site not in `free`;
    /// sites beyond the frame read as 0.
    pub fn new(
        free: &Region,
        outside: impl Fn(Site) -> bool,
        rules: &[(Site, Rule)],
    ) -> ConstrainedSystem {
        let frame = free.frame().clone();
        let mut init: Vec<i8> = frame
            .sites()
            .map(|s| {
                if free.contains(s) {
                    -1
                } else {
                    outside(s) as i8
                }
            })
            .collect();
        let rules: Vec<RuleSite> = rules
            .iter()
            .map(|&(center, rule)| RuleSite {
                center,
                nbrs: frame
                    .directions()
                    .filter_map(|dir| frame.step(center, dir))
                    .collect(),
                rule,
            })
            .collect();
        let infeasible = !propagate(&rules, &mut init);
        let order: Vec<Site> = free.iter().filter(|&s| init[s] < 0).collect();
        let mut position = vec![usize::MAX; frame.len()];
        for (k, &s) in order.iter().enumerate() {
            position[s] = k;
        }
        let mut checks = vec![Vec::new(); order.len()];
        let mut infeasible = infeasible;
        for (r, rule) in rules.iter().enumerate() {
            let deps: Vec<usize> = std::iter::once(rule.center)
                .chain(rule.nbrs.iter().copied())
                .map(|s| position[s])
                .filter(|&k| k != usize::MAX)
                .collect();
            if deps.is_empty() {
                infeasible |= rule.violated(&init);
            }
            for k in deps {
                if !checks[k].contains(&(r as u32)) {
                    checks[k].push(r as u32);
                }
            }
        }
        let forced_ones = free.iter().filter(|&s| init[s] == 1).count();
        ConstrainedSystem {
            frame,
            free: free.clone(),
            init,
            order,
            rules,
            checks,
            infeasible,
            forced_ones,
        }
    }

    pub fn frame(&self) -> &Arc<LatticeBox> {
        &self.frame
    }

    /// Sites still branched on after unit propagation.
    pub fn branching_sites(&self) -> usize {
        self.order.len()
    }

    fn check_limits(&self, limits: &EnumLimits) -> Result<(), OracleError> {
        let cap = if self.rules.is_empty() {
            limits.full_cap
        } else {
            limits.pruned_cap
        };
        if self.order.len() > cap {
            return Err(OracleError::CapExceeded {
                sites: self.order.len(),
                cap,
            });
        }
        Ok(())
    }

    /// Calls `visit(values, ones)` on every satisfying assignment in
    /// lexicographic order; `values` is indexed by frame site.
    pub fn for_each(
        &self,
        limits: &EnumLimits,
        mut visit: impl FnMut(&[i8], usize),
    ) -> Result<(), OracleError> {
        self.check_limits(limits)?;
        if self.infeasible {
            return Ok(());
        }
        let budget = Budget::new(limits.node_budget);
        let mut v = self.init.clone();
        self.dfs(0, self.order.len(), &mut v, self.forced_ones, &budget, &mut |v, k| {
            visit(v, k)
        });
        budget.result()
    }

    /// Leaf counts per `key(values)`, enumerated in parallel over prefixes.
    pub fn count(
        &self,
        limits: &EnumLimits,
        key: impl Fn(&[i8]) -> u64 + Sync,
    ) -> Result<CountTable, OracleError> {
        self.check_limits(limits)?;
        let n = self.free.len();
        if self.infeasible {
            return Ok(CountTable::new(n));
        }
        let budget = Budget::new(limits.node_budget);
        let split = self.order.len().min(10);
        let mut prefixes: Vec<(Vec<i8>, usize)> = Vec::new();
        let mut v = self.init.clone();
        self.dfs(0, split, &mut v, self.forced_ones, &budget, &mut |v, k| {
            prefixes.push((v.to_vec(), k))
        });
        let table = prefixes
            .into_par_iter()
            .map(|(mut v, ones)| {
                let mut local = CountTable::new(n);
                self.dfs(split, self.order.len(), &mut v, ones, &budget, &mut |v, k| {
                    local.add(key(v), k)
                });
                local
            })
            .reduce(|| CountTable::new(n), CountTable::merge);
        budget.result()?;
        Ok(table)
    }

    fn dfs(
        &self,
        k: usize,
        stop: usize,
        v: &mut [i8],
        ones: usize,
        budget: &Budget,
        visit: &mut dyn FnMut(&[i8], usize),
    ) {
        if k == stop {
            visit(v, ones);
            return;
        }
        if !budget.tick() {
            return;
        }
        let s = self.order[k];
        for val in [0i8, 1] {
            v[s] = val;
            if self.checks[k]
                .iter()
                .all(|&r| !self.rules[r as usize].violated(v))
            {
                self.dfs(k + 1, stop, v, ones + val as usize, budget, visit);
            }
        }
        v[s] = -1;
    }
}

/// Forces values implied by single rules until nothing changes; `false` on
/// a contradiction.
fn propagate(rules: &[RuleSite], v: &mut [i8]) -> bool {
    let mut changed = true;
    while changed {
        changed = false;
        for r in rules {
            if r.violated(v) {
                return false;
            }
            let c = v[r.center];
            let unknown: Vec<Site> = r.nbrs.iter().copied().filter(|&n| v[n] < 0).collect();
            let any_one = r.nbrs.iter().any(|&n| v[n] == 1);
            match r.rule {
                Rule::Image(true) => {
                    if c < 0 {
                        v[r.center] = 1;
                        changed = true;
                    } else if !any_one && unknown.len() == 1 {
                        v[unknown[0]] = 1;
                        changed = true;
                    }
                }
                Rule::Image(false) => {
                    if c < 0 && any_one {
                        v[r.center] = 0;
                        changed = true;
                    } else if c == 1 && !unknown.is_empty() {
                        for n in unknown {
                            v[n] = 0;
                        }
                        changed = true;
                    }
                }
                Rule::NonIsolated => {
                    if c == 1 && !any_one && unknown.len() == 1 {
                        v[unknown[0]] = 1;
                        changed = true;
                    }
                }
            }
        }
    }
    true
}

/// Shared node counter; trips once the budget is spent.
struct Budget {
    limit: u64,
    used: AtomicU64,
    tripped: AtomicBool,
}

impl Budget {
    fn new(limit: u64) -> Self {
        Budget {
            limit,
            used: AtomicU64::new(0),
            tripped: AtomicBool::new(false),
        }
    }

    #[inline]
    fn tick(&self) -> bool {
        let used = self.used.fetch_add(1, Ordering::Relaxed);
        if used >= self.limit {
            self.tripped.store(true, Ordering::Relaxed);
            return false;
        }
        true
    }

    fn result(&self) -> Result<(), OracleError> {
        if self.tripped.load(Ordering::Relaxed) {
            Err(OracleError::BudgetExceeded(self.used.load(Ordering::Relaxed)))
        } else {
            Ok(())
        }
    }
}

/// Exact distribution over the patterns of a window.
///
/// Pattern keys carry bit `i` for the `i`-th window site in increasing site
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTable {
    pub window: Region,
    pub patterns: BTreeMap<u64, f64>,
    /// `ln` of the Bernoulli mass of the conditioning event.
    pub log_z: f64,
}

impl KernelTable {
    pub fn prob(&self, key: u64) -> f64 {
        self.patterns.get(&key).copied().unwrap_or(0.0)
    }

    pub fn prob_of(&self, pattern: &Configuration) -> f64 {
        self.prob(pattern.pattern_key(&self.window))
    }

    pub fn total_mass(&self) -> f64 {
        self.patterns.values().sum()
    }

    /// Marginal on the window sites selected by `sub`, re-keyed on `sub`.
    pub fn marginal(&self, sub: &Region) -> Result<KernelTable, OracleError> {
        if !sub.is_subset(&self.window) {
            return Err(OracleError::Invalid("marginal window not inside the table window".into()));
        }
        let positions: Vec<usize> = self
            .window
            .iter()
            .enumerate()
            .filter(|(_, s)| sub.contains(*s))
            .map(|(i, _)| i)
            .collect();
        let mut patterns = BTreeMap::new();
        for (&key, &pr) in &self.patterns {
            let mut sub_key = 0u64;
            for (j, &i) in positions.iter().enumerate() {
                sub_key |= ((key >> i) & 1) << j;
            }
            *patterns.entry(sub_key).or_insert(0.0) += pr;
        }
        Ok(KernelTable {
            window: sub.clone(),
            patterns,
            log_z: self.log_z,
        })
    }

    /// Probability that the window site `site` is occupied.
    pub fn site_marginal(&self, site: Site) -> Option<f64> {
        let i = self.window.iter().position(|s| s == site)?;
        Some(
            self.patterns
                .iter()
                .filter(|(k, _)| (*k >> i) & 1 == 1)
                .map(|(_, p)| p)
                .sum(),
        )
    }

    pub fn to_json(&self) -> Value {
        let n = self.window.len();
        let patterns: Vec<Value> = self
            .patterns
            .iter()
            .map(|(&k, &pr)| json!({"bits": key_bits(k, n), "prob": pr}))
            .collect();
        json!({
            "window": self.window.to_text(),
            "patterns": patterns,
            "logZ": self.log_z,
        })
    }

    pub fn from_json(value: &Value) -> Result<KernelTable, OracleError> {
        let bad = |m: &str| OracleError::Parse(m.to_string());
        let window = Region::from_text(
            value["window"].as_str().ok_or_else(|| bad("missing window"))?,
        )?;
        let log_z = value["logZ"].as_f64().ok_or_else(|| bad("missing logZ"))?;
        let mut patterns = BTreeMap::new();
        for entry in value["patterns"].as_array().ok_or_else(|| bad("missing patterns"))? {
            let bits = entry["bits"].as_str().ok_or_else(|| bad("pattern without bits"))?;
            if bits.len() != window.len() {
                return Err(bad("pattern length does not match the window"));
            }
            let mut key = 0u64;
            for (i, ch) in bits.chars().enumerate() {
                match ch {
                    '0' => {}
                    '1' => key |= 1 << i,
                    _ => return Err(bad("pattern bits must be 0 or 1")),
                }
            }
            let prob = entry["prob"].as_f64().ok_or_else(|| bad("pattern without prob"))?;
            patterns.insert(key, prob);
        }
        Ok(KernelTable {
            window,
            patterns,
            log_z,
        })
    }
}

/// Window pattern as a string of `0`/`1`, one character per window site.
pub fn key_bits(key: u64, n: usize) -> String {
    (0..n)
        .map(|i| if (key >> i) & 1 == 1 { '1' } else { '0' })
        .collect()
}

/// The configuration on `window` encoded by `key`.
pub fn config_from_key(window: &Region, key: u64) -> Configuration {
    let sites = window.sites();
    Configuration::from_fn(window.clone(), |s| {
        let i = sites.binary_search(&s).expect("site of window");
        (key >> i) & 1 == 1
    })
}

fn check_key_window(window: &Region) -> Result<Vec<Site>, OracleError> {
    if window.len() > 64 {
        return Err(OracleError::KeyTooWide(window.len()));
    }
    Ok(window.sites())
}

/// `σ` pattern on `sites` as a key.
fn sigma_key(sites: &[Site]) -> impl Fn(&[i8]) -> u64 + Sync + '_ {
    move |v| {
        let mut key = 0;
        for (i, &s) in sites.iter().enumerate() {
            if v[s] == 1 {
                key |= 1 << i;
            }
        }
        key
    }
}

/// `T(σ)` pattern on `sites` as a key.
fn image_key<'a>(frame: &'a LatticeBox, sites: &'a [Site]) -> impl Fn(&[i8]) -> u64 + Sync + 'a {
    move |v| {
        let mut key = 0;
        for (i, &s) in sites.iter().enumerate() {
            if v[s] == 1
                && frame
                    .directions()
                    .any(|dir| frame.step(s, dir).is_some_and(|n| v[n] == 1))
            {
                key |= 1 << i;
            }
        }
        key
    }
}

fn check_bc(region: &Region, bc: &BoundaryCondition) -> Result<(), OracleError> {
    if region.frame() != bc.carrier().frame() {
        return Err(ConfigError::FrameMismatch.into());
    }
    if !region.is_disjoint(bc.carrier()) {
        return Err(ConfigError::OverlappingBoundary.into());
    }
    Ok(())
}

fn bc_reader(bc: &BoundaryCondition) -> impl Fn(Site) -> bool + '_ {
    move |s| bc.carrier().contains(s) && bc.occupied(s)
}

fn constraint_rules(region: &Region, constraint: Constraint) -> Vec<(Site, Rule)> {
    match constraint {
        Constraint::Isolation => region.iter().map(|s| (s, Rule::Image(false))).collect(),
        Constraint::NonIsolation => region.iter().map(|s| (s, Rule::NonIsolated)).collect(),
        Constraint::None => Vec::new(),
    }
}

/// Every configuration on `region` satisfying `constraint` against `bc`, in
/// lexicographic order of the free sites.
pub fn enumerate_constrained(
    region: &Region,
    bc: &BoundaryCondition,
    constraint: Constraint,
    limits: &EnumLimits,
) -> Result<Vec<Configuration>, OracleError> {
    check_bc(region, bc)?;
    let sys = ConstrainedSystem::new(region, bc_reader(bc), &constraint_rules(region, constraint));
    let mut out = Vec::new();
    sys.for_each(limits, |v, _| {
        out.push(Configuration::from_fn(region.clone(), |s| v[s] == 1))
    })?;
    Ok(out)
}

/// `ν(event)`: Bernoulli(p) on `region` conditioned on isolation of its ones
/// against `bc`.
pub fn exact_nu(
    p: f64,
    region: &Region,
    bc: &BoundaryCondition,
    event: impl Fn(&Configuration) -> bool,
    limits: &EnumLimits,
) -> Result<f64, OracleError> {
    check_probability(p)?;
    check_bc(region, bc)?;
    let sys = ConstrainedSystem::new(
        region,
        bc_reader(bc),
        &constraint_rules(region, Constraint::Isolation),
    );
    let mut table = CountTable::new(region.len());
    sys.for_each(limits, |v, k| {
        let cfg = Configuration::from_fn(region.clone(), |s| v[s] == 1);
        table.add(event(&cfg) as u64, k)
    })?;
    let log_z = table.log_total(p);
    if log_z == f64::NEG_INFINITY {
        return Err(OracleError::ZeroDenominator);
    }
    Ok((table.log_mass(1, p) - log_z).exp())
}

/// The marginal of `ν` (isolation on `region` against `bc`) on `window`.
pub fn nu_marginal(
    p: f64,
    region: &Region,
    bc: &BoundaryCondition,
    window: &Region,
    limits: &EnumLimits,
) -> Result<KernelTable, OracleError> {
    check_probability(p)?;
    nu_counts(region, bc, window, limits)?.to_kernel(window, p)
}

/// Integer counts behind [`nu_marginal`], reusable across `p`.
pub fn nu_counts(
    region: &Region,
    bc: &BoundaryCondition,
    window: &Region,
    limits: &EnumLimits,
) -> Result<CountTable, OracleError> {
    constrained_counts(region, bc, Constraint::Isolation, window, limits)
}

/// Counts of the `σ` pattern on `window` over the configurations of
/// `region` satisfying `constraint` against `bc`.
pub fn constrained_counts(
    region: &Region,
    bc: &BoundaryCondition,
    constraint: Constraint,
    window: &Region,
    limits: &EnumLimits,
) -> Result<CountTable, OracleError> {
    check_bc(region, bc)?;
    if !window.is_subset(region) {
        return Err(OracleError::Invalid("window must lie inside the region".into()));
    }
    let sites = check_key_window(window)?;
    let sys = ConstrainedSystem::new(region, bc_reader(bc), &constraint_rules(region, constraint));
    sys.count(limits, sigma_key(&sites))
}

/// Bernoulli(p) on `region` conditioned on `constraint`, marginal on `window`.
pub fn constrained_marginal(
    p: f64,
    region: &Region,
    bc: &BoundaryCondition,
    constraint: Constraint,
    window: &Region,
    limits: &EnumLimits,
) -> Result<KernelTable, OracleError> {
    check_probability(p)?;
    constrained_counts(region, bc, constraint, window, limits)?.to_kernel(window, p)
}

/// Marginal on `window ⊆ Δ ∩ S` of the first-layer constraint specification
/// `γ^S_Δ(·|ω)`: Bernoulli on `Δ ∩ S`, ones isolated from the ones of `S`,
/// sites outside `S` ignored, everything outside `Δ ∩ S` frozen at `frozen`
/// (missing sites read as 0).
pub fn exact_gamma_s(
    p: f64,
    s_area: &Region,
    delta: &Region,
    frozen: &Configuration,
    window: &Region,
    limits: &EnumLimits,
) -> Result<KernelTable, OracleError> {
    check_probability(p)?;
    let free = delta.intersection(s_area);
    if !window.is_subset(&free) {
        return Err(OracleError::Invalid("window must lie inside Δ ∩ S".into()));
    }
    let sites = check_key_window(window)?;
    let outside =
        |y: Site| s_area.contains(y) && frozen.carrier().contains(y) && frozen.occupied(y);
    let rules: Vec<(Site, Rule)> = free.iter().map(|s| (s, Rule::Image(false))).collect();
    let sys = ConstrainedSystem::new(&free, outside, &rules);
    sys.count(limits, sigma_key(&sites))?.to_kernel(window, p)
}

/// Rejects second-layer conditioning with a visibly isolated one: an
/// occupied site whose neighbors all lie in the conditioning carrier and are
/// empty.
fn check_support(cond: &Configuration) -> Result<(), OracleError> {
    let frame = cond.frame();
    for s in cond.carrier().iter().filter(|&s| cond.occupied(s)) {
        let isolated = frame.directions().all(|dir| match frame.step(s, dir) {
            Some(n) => cond.carrier().contains(n) && !cond.occupied(n),
            None => true,
        });
        if isolated {
            return Err(OracleError::NotInSupport(s));
        }
    }
    Ok(())
}

/// Counts of `T(σ)` on `key_window`, for Bernoulli `σ` on `delta` with the
/// first layer frozen at `bc` outside, conditioned on `T(σ) = cond` on the
/// carrier of `cond`.
pub fn second_layer_counts(
    delta: &Region,
    cond: &Configuration,
    bc: &BoundaryCondition,
    key_window: &Region,
    limits: &EnumLimits,
) -> Result<CountTable, OracleError> {
    check_bc(delta, bc)?;
    if cond.frame() != delta.frame() {
        return Err(ConfigError::FrameMismatch.into());
    }
    check_support(cond)?;
    let sites = check_key_window(key_window)?;
    let rules: Vec<(Site, Rule)> = cond
        .carrier()
        .iter()
        .map(|s| (s, Rule::Image(cond.occupied(s))))
        .collect();
    let sys = ConstrainedSystem::new(delta, bc_reader(bc), &rules);
    let frame = delta.frame().clone();
    sys.count(limits, image_key(&frame, &sites))
}

/// The finite-volume second-layer kernel `γ'_{ω_{Δ^c},Λ}(·|ω'_{Δ\Λ})` on `Λ`.
///
/// `cond` is the second-layer conditioning on a subset of `Δ \ Λ`, `bc` the
/// first layer outside `Δ`.
pub fn exact_second_layer_conditional(
    p: f64,
    lambda: &Region,
    delta: &Region,
    cond: &Configuration,
    bc: &BoundaryCondition,
    limits: &EnumLimits,
) -> Result<KernelTable, OracleError> {
    check_probability(p)?;
    if !lambda.is_subset(delta) {
        return Err(OracleError::Invalid("Λ must lie inside Δ".into()));
    }
    if !cond.carrier().is_subset(&delta.difference(lambda)) {
        return Err(OracleError::Invalid("conditioning must lie inside Δ \\ Λ".into()));
    }
    second_layer_counts(delta, cond, bc, lambda, limits)?.to_kernel(lambda, p)
}

/// Law of `T(σ)` on `window` under Bernoulli(p), enumerating `σ` on the
/// extension of the window.
pub fn exact_mu_prime(
    p: f64,
    window: &Region,
    limits: &EnumLimits,
) -> Result<KernelTable, OracleError> {
    check_probability(p)?;
    let ext = window.extension_in_frame();
    if !window.has_margin() {
        return Err(OracleError::Invalid("window needs a margin inside its frame".into()));
    }
    let cond = Configuration::empty(Region::empty(window.frame().clone()));
    let bc = BoundaryCondition::none(window.frame().clone());
    second_layer_counts(&ext, &cond, &bc, window, limits)?.to_kernel(window, p)
}

/// Integer counts for both sides of the unfixing identity, reusable for any `p`.
#[derive(Debug, Clone)]
pub struct UnfixingCounts {
    pub d: usize,
    pub l: i64,
    pub shift: Vec<i64>,
    /// Enumeration of `C_L` with `T(σ) = ω'^*_Q 0'_{B\Q} 1'_{C_L\B}`.
    pub star: CountTable,
    /// Enumeration of `C_L` with `T(σ) = 0'_Q 0'_{B\Q} 1'_{C_L\B}`.
    pub empty: CountTable,
    /// `ν_B` with all-ones exterior, keyed by `σ_Q`.
    pub nu: CountTable,
    /// Key of `ω^0_Q` in the `ν_B` table.
    pub ground_key: u64,
}

/// Both sides of the unfixing identity at one `p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnfixingValues {
    pub lhs: f64,
    pub rhs: f64,
    /// `ν_B(σ_Q = ω^0_Q)`.
    pub nu_ground: f64,
}

impl UnfixingValues {
    pub fn relative_error(&self) -> f64 {
        (self.lhs - self.rhs).abs() / self.rhs.abs()
    }
}

impl UnfixingCounts {
    /// `B = B_L + shift`; `C_L` covers `B_L` and `B_L + e` with
    /// `e = shift`, or `e_1` when the shift is zero.
    pub fn compute(
        d: usize,
        l: i64,
        shift: &[i64],
        limits: &EnumLimits,
    ) -> Result<UnfixingCounts, OracleError> {
        let b = crate::lattice::loophole_volume(l, d, shift)?;
        let frame = b.frame().clone();
        let e = if shift.iter().all(|&x| x == 0) {
            unit_vector(d, 0)
        } else {
            shift.to_vec()
        };
        let base = loophole_shape_in(frame.clone(), l, &vec![0; d])?;
        let moved = loophole_shape_in(frame.clone(), l, &e)?;
        let cover = cover_volume(&base, &moved);
        let q = observation_window_in(frame.clone());
        let shell = cover.difference(&b);
        for s in shell.iter() {
            let has_partner = frame
                .directions()
                .any(|dir| frame.step(s, dir).is_some_and(|n| shell.contains(n)));
            if !has_partner {
                return Err(OracleError::Invalid(format!(
                    "site {s} of C_L \\ B has no neighbor in C_L \\ B"
                )));
            }
        }
        let star_q = crate::config::reference_pattern_in(frame.clone()).0;
        let zeros = BoundaryCondition::none(frame.clone());
        let conditioning = |q_pattern: &Configuration| {
            let rest = Configuration::from_fn(cover.difference(&q), |s| shell.contains(s));
            q_pattern.join(&rest)
        };
        let key_window = Region::empty(frame.clone());
        let star = second_layer_counts(&cover, &conditioning(&star_q)?, &zeros, &key_window, limits)?;
        let empty_q = Configuration::empty(q.clone());
        let empty =
            second_layer_counts(&cover, &conditioning(&empty_q)?, &zeros, &key_window, limits)?;
        let ones = BoundaryCondition::ones_outside(&b);
        let nu = nu_counts(&b, &ones, &q, limits)?;
        let ground =
            crate::lattice::checkerboard(&q, crate::lattice::CheckerboardType::Type0);
        Ok(UnfixingCounts {
            d,
            l,
            shift: shift.to_vec(),
            star,
            empty,
            nu,
            ground_key: ground.pattern_key(&q),
        })
    }

    pub fn evaluate(&self, p: f64) -> Result<UnfixingValues, OracleError> {
        check_probability(p)?;
        if p <= 0.0 || p >= 1.0 {
            return Err(ConfigError::BadProbability(p).into());
        }
        let den = self.empty.log_total(p);
        if den == f64::NEG_INFINITY {
            return Err(OracleError::ZeroDenominator);
        }
        let lhs = (self.star.log_total(p) - den).exp();
        let nu_ground = (self.nu.log_mass(self.ground_key, p) - self.nu.log_total(p)).exp();
        Ok(UnfixingValues {
            lhs,
            rhs: p / (1.0 - p) * nu_ground,
            nu_ground,
        })
    }
}

/// Both sides of the unfixing identity for `B_L + shift`.
pub fn verify_unfixing(
    p: f64,
    d: usize,
    l: i64,
    shift: &[i64],
    limits: &EnumLimits,
) -> Result<UnfixingValues, OracleError> {
    UnfixingCounts::compute(d, l, shift, limits)?.evaluate(p)
}

/// Second-layer kernel on `a` given `omega` on the rest of `frame_region`,
/// with the first layer empty outside `frame_region`.
fn frame_kernel(
    p: f64,
    a: &Region,
    frame_region: &Region,
    omega: &Configuration,
    limits: &EnumLimits,
) -> Result<KernelTable, OracleError> {
    let cond = omega.restrict(&frame_region.difference(a))?;
    let bc = BoundaryCondition::all_zeros(frame_region.complement());
    exact_second_layer_conditional(p, a, frame_region, &cond, &bc, limits)
}

/// Max over `ω_Λ` of `|∫ γ_Δ(dη|ω̂) γ_Λ(ω_Λ|η) − γ_Δ(ω_Λ|ω̂)|` for kernels of
/// the finite system on `frame_region` with empty first layer outside.
pub fn exact_kernel_consistency_check(
    p: f64,
    lambda: &Region,
    delta: &Region,
    frame_region: &Region,
    omega_hat: &Configuration,
    limits: &EnumLimits,
) -> Result<f64, OracleError> {
    if !lambda.is_subset(delta) || !delta.is_subset(frame_region) {
        return Err(OracleError::Invalid("need Λ ⊆ Δ ⊆ frame region".into()));
    }
    let outer = frame_kernel(p, delta, frame_region, omega_hat, limits)?;
    let direct = outer.marginal(lambda)?;
    let rest = omega_hat.restrict(&frame_region.difference(delta))?;
    let mut composed: BTreeMap<u64, f64> = BTreeMap::new();
    for (&key, &weight) in &outer.patterns {
        let eta = config_from_key(delta, key).join(&rest)?;
        let inner = frame_kernel(p, lambda, frame_region, &eta, limits)?;
        for (&k, &pr) in &inner.patterns {
            *composed.entry(k).or_insert(0.0) += weight * pr;
        }
    }
    let keys: std::collections::BTreeSet<u64> =
        composed.keys().chain(direct.patterns.keys()).copied().collect();
    Ok(keys
        .into_iter()
        .map(|k| (composed.get(&k).copied().unwrap_or(0.0) - direct.prob(k)).abs())
        .fold(0.0, f64::max))
}

/// Max deviation of `γ_Λ(ω_{Λ^c}|ω̂)` from `1{ω_{Λ^c} = ω̂_{Λ^c}}`, with the
/// kernel's joint law of `T(σ)` taken over the whole of `frame_region`.
pub fn exact_properness_check(
    p: f64,
    lambda: &Region,
    frame_region: &Region,
    omega_hat: &Configuration,
    limits: &EnumLimits,
) -> Result<f64, OracleError> {
    let rest_region = frame_region.difference(lambda);
    let cond = omega_hat.restrict(&rest_region)?;
    let bc = BoundaryCondition::all_zeros(frame_region.complement());
    let joint = second_layer_counts(frame_region, &cond, &bc, frame_region, limits)?
        .to_kernel(frame_region, p)?;
    let outside = joint.marginal(&rest_region)?;
    let expected = cond.pattern_key(&rest_region);
    let mut dev: f64 = 0.0;
    for (&k, &pr) in &outside.patterns {
        let target = if k == expected { 1.0 } else { 0.0 };
        dev = dev.max((pr - target).abs());
    }
    dev = dev.max((outside.prob(expected) - 1.0).abs());
    Ok(dev)
}

/// Max over `ω'_W` of `|Σ μ'(ω'_{W\Λ}) γ_Λ(ω'_Λ|ω'_{W\Λ}) − μ'(ω'_W)|`, with
/// kernels enumerating the first layer on the extension of `W`.
pub fn exact_dlr_check(
    p: f64,
    lambda: &Region,
    window: &Region,
    limits: &EnumLimits,
) -> Result<f64, OracleError> {
    if !lambda.is_subset(window) {
        return Err(OracleError::Invalid("Λ must lie inside the window".into()));
    }
    let mu = exact_mu_prime(p, window, limits)?;
    let outer_region = window.difference(lambda);
    let mu_outer = mu.marginal(&outer_region)?;
    let ext = window.extension_in_frame();
    let bc = BoundaryCondition::none(window.frame().clone());
    let mut dev: f64 = 0.0;
    for (&k, &w) in &mu_outer.patterns {
        let cond = config_from_key(&outer_region, k);
        let kernel = exact_second_layer_conditional(p, lambda, &ext, &cond, &bc, limits)?;
        for (&kl, &pr) in &kernel.patterns {
            let full = cond.join(&config_from_key(lambda, kl))?;
            let target = mu.prob(full.pattern_key(window));
            dev = dev.max((w * pr - target).abs());
        }
    }
    // patterns of μ' missed by the kernels
    for (&k, &pr) in &mu.patterns {
        let full = config_from_key(window, k);
        let cond = full.restrict(&outer_region)?;
        if mu_outer.prob(cond.pattern_key(&outer_region)) == 0.0 {
            dev = dev.max(pr);
        }
    }
    Ok(dev)
}

/// Total-variation distance between the single-site kernels `γ^S_i` under
/// the two exterior configurations that differ only at `j`, maximized over
/// the remaining sites of the `3^d` neighborhood of `i`.
///
/// Each kernel is evaluated from its defining ratio of Bernoulli weights
/// times feasibility indicators.
pub fn single_site_tv(p: f64, s_area: &Region, i: Site, j: Site) -> Result<f64, OracleError> {
    check_probability(p)?;
    let frame = s_area.frame().clone();
    if !s_area.contains(i) {
        return Err(OracleError::Invalid("site i must lie in S".into()));
    }
    let center = frame.coords(i);
    let nbhd = Region::from_predicate(frame.clone(), |x| {
        x.iter().zip(&center).all(|(a, b)| (a - b).abs() <= 1)
    });
    let single = Region::from_sites(frame.clone(), [i]);
    let ext_region = nbhd.difference(&single);
    // the kernel at i only reads its neighborhood
    if !ext_region.contains(j) {
        return Ok(0.0);
    }
    let others: Vec<Site> = ext_region.iter().filter(|&s| s != j).collect();
    let kernel_one = |ext: &Configuration| -> Result<f64, OracleError> {
        let mut mass = [0.0f64; 2];
        for val in [false, true] {
            let mut cfg = Configuration::empty(single.clone());
            cfg.set(i, val)?;
            let bc = BoundaryCondition::explicit(ext.clone());
            let feasible = crate::config::is_t_feasible_within(&cfg, &bc, &single, s_area)?;
            let weight = if val { p } else { 1.0 - p };
            mass[val as usize] = if feasible { weight } else { 0.0 };
        }
        Ok(mass[1] / (mass[0] + mass[1]))
    };
    let mut best: f64 = 0.0;
    for bits in 0u64..(1 << others.len()) {
        let occupied = |s: Site, j_value: bool| {
            if s == j {
                return j_value;
            }
            let b = others.binary_search(&s).expect("neighborhood site");
            (bits >> b) & 1 == 1
        };
        let a = Configuration::from_fn(ext_region.clone(), |s| occupied(s, false));
        let b = Configuration::from_fn(ext_region.clone(), |s| occupied(s, true));
        // two-point laws: TV is the difference of the occupation probabilities
        best = best.max((kernel_one(&a)? - kernel_one(&b)?).abs());
    }
    Ok(best)
}

/// The set of sites where the first layer is free given a second-layer
/// pattern on `window`: `window \ fixed_area`.
pub fn unfixed_area(second_layer: &Configuration) -> Result<Region, OracleError> {
    Ok(second_layer.carrier().difference(&fixed_area(second_layer)?))
}
