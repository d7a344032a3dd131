//! Single-site heat-bath dynamics for the isolation-constrained first layer.
//!
//! A chain updates the sites of `Δ ∩ S` in raster order. A site with an
//! occupied visible neighbor is set to 0; otherwise it becomes 1 with
//! probability `p`. Sites outside `S` are invisible (read as 0) and sites
//! outside `Δ ∩ S` are frozen.

use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{check_probability, BoundaryCondition, ConfigError, Configuration};
use crate::lattice::{
    checkerboard_value, loophole_volume, observation_window_in, CheckerboardType, LatticeBox,
    LatticeError, Region, Site,
};

/// Number of batches for batch-means error bars.
pub const BATCHES: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error("need sweeps > burn_in and at least {BATCHES} measured sweeps (sweeps {sweeps}, burn-in {burn_in})")]
    BadSweeps { sweeps: u64, burn_in: u64 },
    #[error("need at least one replica")]
    NoReplicas,
    #[error("region has {0} sites; exact transition matrices support at most 12")]
    RegionTooLarge(usize),
    #[error("{0}")]
    Invalid(String),
}

/// Initial state of the updated sites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Init {
    /// Type-0 for unshifted loophole volumes, type-1 for shifted ones.
    Auto,
    Checkerboard(CheckerboardType),
    Empty,
    /// Independent Bernoulli(p) draws.
    Random,
}

impl std::str::FromStr for Init {
    type Err = SamplerError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" => Ok(Init::Auto),
            "type0" | "type-0" => Ok(Init::Checkerboard(CheckerboardType::Type0)),
            "type1" | "type-1" => Ok(Init::Checkerboard(CheckerboardType::Type1)),
            "empty" => Ok(Init::Empty),
            "random" => Ok(Init::Random),
            other => Err(SamplerError::Invalid(format!("unknown init {other:?}"))),
        }
    }
}

/// What a chain updates and what it sees.
#[derive(Debug, Clone)]
pub struct ChainSpec {
    frame: Arc<LatticeBox>,
    active: Region,
    visible: Option<Region>,
    frozen: Vec<u8>,
    default_init: CheckerboardType,
}

impl ChainSpec {
    /// `ν` on `region` with the boundary condition frozen outside.
    pub fn nu(region: &Region, bc: &BoundaryCondition) -> Result<ChainSpec, SamplerError> {
        if region.frame() != bc.carrier().frame() {
            return Err(ConfigError::FrameMismatch.into());
        }
        if !region.is_disjoint(bc.carrier()) {
            return Err(ConfigError::OverlappingBoundary.into());
        }
        let frame = region.frame().clone();
        let frozen = frame
            .sites()
            .map(|s| (bc.carrier().contains(s) && bc.occupied(s)) as u8)
            .collect();
        Ok(ChainSpec {
            frame,
            active: region.clone(),
            visible: None,
            frozen,
            default_init: CheckerboardType::Type0,
        })
    }

    /// `ν_{B_L + shift}` with all-ones exterior.
    pub fn loophole(d: usize, l: i64, shift: &[i64]) -> Result<ChainSpec, SamplerError> {
        let b = loophole_volume(l, d, shift)?;
        let mut spec = Self::nu(&b, &BoundaryCondition::ones_outside(&b))?;
        if shift.iter().any(|&x| x != 0) {
            spec.default_init = CheckerboardType::Type1;
        }
        Ok(spec)
    }

    /// `γ^S_Δ(·|ω)`: updates `Δ ∩ S`, sees only `S`, freezes `ω` elsewhere
    /// (sites missing from `frozen` read as 0).
    pub fn gamma_s(
        s_area: &Region,
        delta: &Region,
        frozen: &Configuration,
    ) -> Result<ChainSpec, SamplerError> {
        if s_area.frame() != delta.frame() || delta.frame() != frozen.frame() {
            return Err(ConfigError::FrameMismatch.into());
        }
        let frame = delta.frame().clone();
        let values = frame
            .sites()
            .map(|s| (frozen.carrier().contains(s) && frozen.occupied(s)) as u8)
            .collect();
        Ok(ChainSpec {
            frame,
            active: delta.intersection(s_area),
            visible: Some(s_area.clone()),
            frozen: values,
            default_init: CheckerboardType::Type0,
        })
    }

    pub fn frame(&self) -> &Arc<LatticeBox> {
        &self.frame
    }

    pub fn active(&self) -> &Region {
        &self.active
    }
}

/// Probability that a site becomes occupied under a heat-bath update.
#[inline]
pub fn heat_bath_occupation(p: f64, occupied_neighbor: bool) -> f64 {
    if occupied_neighbor {
        0.0
    } else {
        p
    }
}

/// A running chain.
#[derive(Debug, Clone)]
pub struct ChainState {
    frame: Arc<LatticeBox>,
    /// One cell per frame site plus a trailing always-empty sentinel.
    occ: Vec<u8>,
    /// Visible neighbors per site; invisible or out-of-frame ones point at
    /// the sentinel.
    nbrs: Vec<u32>,
    degree: usize,
    active: Vec<u32>,
    p: f64,
    threshold: u64,
    rng: ChaCha8Rng,
    sweeps: u64,
    cursor: usize,
}

fn threshold(p: f64) -> u64 {
    (p * (1u64 << 53) as f64) as u64
}

impl ChainState {
    pub fn new(
        spec: &ChainSpec,
        p: f64,
        init: Init,
        seed: u64,
        replica: u64,
    ) -> Result<ChainState, SamplerError> {
        check_probability(p)?;
        let frame = spec.frame.clone();
        let n = frame.len();
        let table = frame.neighbor_table();
        let degree = table.degree();
        let mut nbrs = table.raw().to_vec();
        if let Some(vis) = &spec.visible {
            for cell in nbrs.iter_mut() {
                if (*cell as usize) < n && !vis.contains(*cell as usize) {
                    *cell = n as u32;
                }
            }
        }
        let mut occ = spec.frozen.clone();
        occ.push(0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(replica);
        let active: Vec<u32> = spec.active.iter().map(|s| s as u32).collect();
        let kind = match init {
            Init::Auto => Some(spec.default_init),
            Init::Checkerboard(k) => Some(k),
            _ => None,
        };
        let thr = threshold(p);
        for &s in &active {
            let s = s as usize;
            occ[s] = match (init, kind) {
                (_, Some(k)) => checkerboard_value(&frame, s, k) as u8,
                (Init::Random, _) => ((rng.next_u64() >> 11) < thr) as u8,
                _ => 0,
            };
        }
        let mut state = ChainState {
            frame,
            occ,
            nbrs,
            degree,
            active,
            p,
            threshold: thr,
            rng,
            sweeps: 0,
            cursor: 0,
        };
        state.repair();
        Ok(state)
    }

    /// Greedy raster-order removal of ones that touch a visible one.
    fn repair(&mut self) {
        for k in 0..self.active.len() {
            let s = self.active[k] as usize;
            if self.occ[s] == 1 && self.has_occupied_neighbor(s) {
                self.occ[s] = 0;
            }
        }
    }

    #[inline(always)]
    fn has_occupied_neighbor(&self, s: Site) -> bool {
        let row = &self.nbrs[s * self.degree..(s + 1) * self.degree];
        row.iter().any(|&n| self.occ[n as usize] != 0)
    }

    /// Resamples the next site in raster order.
    pub fn mcmc_step(&mut self) {
        if self.active.is_empty() {
            return;
        }
        let s = self.active[self.cursor] as usize;
        self.update(s);
        self.cursor += 1;
        if self.cursor == self.active.len() {
            self.cursor = 0;
            self.sweeps += 1;
        }
    }

    #[inline(always)]
    fn update(&mut self, s: Site) {
        self.occ[s] = if self.has_occupied_neighbor(s) {
            0
        } else {
            ((self.rng.next_u64() >> 11) < self.threshold) as u8
        };
    }

    /// One full raster sweep over the updated sites.
    pub fn sweep(&mut self) {
        for k in self.cursor..self.active.len() {
            let s = self.active[k] as usize;
            self.update(s);
        }
        self.cursor = 0;
        self.sweeps += 1;
    }

    pub fn sweeps(&self) -> u64 {
        self.sweeps
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn frame(&self) -> &Arc<LatticeBox> {
        &self.frame
    }

    #[inline]
    pub fn occupied(&self, site: Site) -> bool {
        self.occ[site] != 0
    }

    /// Every updated one has no visible occupied neighbor.
    pub fn is_feasible(&self) -> bool {
        self.active
            .iter()
            .all(|&s| self.occ[s as usize] == 0 || !self.has_occupied_neighbor(s as usize))
    }

    /// Current values on `region`.
    pub fn configuration(&self, region: &Region) -> Configuration {
        Configuration::from_fn(region.clone(), |s| self.occ[s] != 0)
    }
}

/// Monte Carlo estimate with batch-means error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
    /// Effective sample size, at most the number of measured sweeps.
    pub ess: f64,
    pub sweeps: u64,
}

impl Estimate {
    /// Batch-means estimate from equal-length batch averages.
    pub fn from_batches(batch_means: &[f64], per_batch: u64, sample_var: f64) -> Estimate {
        let b = batch_means.len() as f64;
        let n = per_batch * batch_means.len() as u64;
        let mean = batch_means.iter().sum::<f64>() / b;
        let var_b = batch_means.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (b - 1.0);
        let se = (var_b / b).sqrt();
        let ess = if se > 0.0 {
            (sample_var / (se * se)).min(n as f64)
        } else {
            n as f64
        };
        Estimate {
            value: mean,
            se,
            ess,
            sweeps: n,
        }
    }

    /// Mean of independent replica estimates.
    pub fn combine(parts: &[Estimate]) -> Estimate {
        let r = parts.len() as f64;
        Estimate {
            value: parts.iter().map(|e| e.value).sum::<f64>() / r,
            se: parts.iter().map(|e| e.se * e.se).sum::<f64>().sqrt() / r,
            ess: parts.iter().map(|e| e.ess).sum(),
            sweeps: parts.iter().map(|e| e.sweeps).sum(),
        }
    }
}

/// Run lengths, seeding and initialization of a sampling job.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerOptions {
    /// Total sweeps per replica, burn-in included.
    pub sweeps: u64,
    pub burn_in: u64,
    pub seed: u64,
    pub replicas: u64,
    pub init: Init,
}

impl SamplerOptions {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.sweeps <= self.burn_in || self.sweeps - self.burn_in < BATCHES as u64 {
            return Err(SamplerError::BadSweeps {
                sweeps: self.sweeps,
                burn_in: self.burn_in,
            });
        }
        if self.replicas == 0 {
            return Err(SamplerError::NoReplicas);
        }
        Ok(())
    }
}

/// Runs the replicas of a chain and estimates `k` observables recorded
/// once per sweep.
pub fn run_observables<F>(
    spec: &ChainSpec,
    p: f64,
    opts: &SamplerOptions,
    k: usize,
    observe: F,
) -> Result<Vec<Estimate>, SamplerError>
where
    F: Fn(&ChainState, &mut [f64]) + Sync,
{
    opts.validate()?;
    check_probability(p)?;
    let measured = opts.sweeps - opts.burn_in;
    let per_batch = measured / BATCHES as u64;
    // leftover sweeps extend the burn-in
    let burn = opts.sweeps - per_batch * BATCHES as u64;
    let runs: Vec<Result<Vec<Estimate>, SamplerError>> = (0..opts.replicas)
        .into_par_iter()
        .map(|replica| {
            let mut chain = ChainState::new(spec, p, opts.init, opts.seed, replica)?;
            for _ in 0..burn {
                chain.sweep();
            }
            let mut batch = vec![vec![0.0f64; BATCHES]; k];
            let mut sum = vec![0.0f64; k];
            let mut sum_sq = vec![0.0f64; k];
            let mut obs = vec![0.0f64; k];
            for b in 0..BATCHES {
                for _ in 0..per_batch {
                    chain.sweep();
                    observe(&chain, &mut obs);
                    for i in 0..k {
                        batch[i][b] += obs[i];
                        sum[i] += obs[i];
                        sum_sq[i] += obs[i] * obs[i];
                    }
                }
            }
            let n = (per_batch * BATCHES as u64) as f64;
            Ok((0..k)
                .map(|i| {
                    let means: Vec<f64> = batch[i].iter().map(|x| x / per_batch as f64).collect();
                    let mean = sum[i] / n;
                    let var = (sum_sq[i] / n - mean * mean).max(0.0) * n / (n - 1.0);
                    Estimate::from_batches(&means, per_batch, var)
                })
                .collect())
        })
        .collect();
    let runs: Vec<Vec<Estimate>> = runs.into_iter().collect::<Result<_, _>>()?;
    Ok((0..k)
        .map(|i| Estimate::combine(&runs.iter().map(|r| r[i]).collect::<Vec<_>>()))
        .collect())
}

/// `ν_{B_L + shift}(ω_0 = 1)` in `d` dimensions.
pub fn estimate_origin_occupation(
    p: f64,
    d: usize,
    l: i64,
    shift: &[i64],
    opts: &SamplerOptions,
) -> Result<Estimate, SamplerError> {
    let spec = ChainSpec::loophole(d, l, shift)?;
    let origin = spec
        .frame()
        .site(&vec![0; d])
        .expect("loophole frame contains the origin");
    Ok(run_observables(&spec, p, opts, 1, |c, out| {
        out[0] = c.occupied(origin) as u8 as f64
    })?[0])
}

/// Origin occupation and `σ_Q = ω^0_Q` frequency for `ν_{B_L + shift}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopholeEstimates {
    pub origin: Estimate,
    pub ground_q: Estimate,
}

pub fn estimate_loophole(
    p: f64,
    d: usize,
    l: i64,
    shift: &[i64],
    opts: &SamplerOptions,
) -> Result<LoopholeEstimates, SamplerError> {
    let spec = ChainSpec::loophole(d, l, shift)?;
    let frame = spec.frame().clone();
    let origin = frame.site(&vec![0; d]).expect("origin");
    let q: Vec<(Site, bool)> = observation_window_in(frame.clone())
        .iter()
        .map(|s| (s, checkerboard_value(&frame, s, CheckerboardType::Type0)))
        .collect();
    let est = run_observables(&spec, p, opts, 2, |c, out| {
        out[0] = c.occupied(origin) as u8 as f64;
        out[1] = q.iter().all(|&(s, v)| c.occupied(s) == v) as u8 as f64;
    })?;
    Ok(LoopholeEstimates {
        origin: est[0],
        ground_q: est[1],
    })
}

/// Chain samples of `γ^S_Δ(·|ω)` on `Δ`, one per sweep after burn-in.
pub struct GammaSamples {
    chain: ChainState,
    delta: Region,
    remaining: u64,
}

impl Iterator for GammaSamples {
    type Item = Configuration;
    fn next(&mut self) -> Option<Configuration> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        self.chain.sweep();
        Some(self.chain.configuration(&self.delta))
    }
}

pub fn sample_gamma_s(
    p: f64,
    s_area: &Region,
    delta: &Region,
    frozen: &Configuration,
    sweeps: u64,
    burn_in: u64,
    seed: u64,
) -> Result<GammaSamples, SamplerError> {
    let spec = ChainSpec::gamma_s(s_area, delta, frozen)?;
    let mut chain = ChainState::new(&spec, p, Init::Empty, seed, 0)?;
    for _ in 0..burn_in {
        chain.sweep();
    }
    Ok(GammaSamples {
        chain,
        delta: delta.clone(),
        remaining: sweeps,
    })
}

/// One row of an order-parameter scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderParameter {
    pub p: f64,
    /// `ν_{B_L}(ω_0 = 1)`.
    pub plain: Estimate,
    /// `ν_{B_L + e_1}(ω_0 = 1)`.
    pub shifted: Estimate,
}

impl OrderParameter {
    pub fn gap(&self) -> f64 {
        self.shifted.value - self.plain.value
    }

    pub fn gap_se(&self) -> f64 {
        self.plain.se.hypot(self.shifted.se)
    }
}

/// Origin occupations of `B_L` and `B_L + e_1` across `p_grid`.
pub fn order_parameter_scan(
    p_grid: &[f64],
    d: usize,
    l: i64,
    opts: &SamplerOptions,
) -> Result<Vec<OrderParameter>, SamplerError> {
    if p_grid.is_empty() {
        return Err(SamplerError::Invalid("empty p grid".into()));
    }
    let mut e1 = vec![0; d];
    e1[0] = 1;
    p_grid
        .iter()
        .map(|&p| {
            Ok(OrderParameter {
                p,
                plain: estimate_origin_occupation(p, d, l, &vec![0; d], opts)?,
                shifted: estimate_origin_occupation(p, d, l, &e1, opts)?,
            })
        })
        .collect()
}

/// Exact transition matrix of one raster sweep over `region` (at most 12
/// sites) with `bc` frozen. States are keyed by the region's pattern key.
pub fn sweep_transition_matrix(
    p: f64,
    region: &Region,
    bc: &BoundaryCondition,
) -> Result<Vec<Vec<f64>>, SamplerError> {
    check_probability(p)?;
    let n = region.len();
    if n > 12 {
        return Err(SamplerError::RegionTooLarge(n));
    }
    let frame = region.frame().clone();
    let sites = region.sites();
    let states = 1usize << n;
    let outside = |y: Site| bc.carrier().contains(y) && bc.occupied(y);
    let mut matrix: Vec<Vec<f64>> = (0..states)
        .map(|i| {
            let mut row = vec![0.0; states];
            row[i] = 1.0;
            row
        })
        .collect();
    for (b, &s) in sites.iter().enumerate() {
        // single-site kernel at s
        let mut step = vec![vec![0.0; states]; states];
        for (from, row) in step.iter_mut().enumerate() {
            let value = |y: Site| match sites.binary_search(&y) {
                Ok(i) => (from >> i) & 1 == 1,
                Err(_) => outside(y),
            };
            let touched = frame
                .directions()
                .any(|dir| frame.step(s, dir).is_some_and(value));
            let one = heat_bath_occupation(p, touched);
            row[from | (1 << b)] += one;
            row[from & !(1 << b)] += 1.0 - one;
        }
        matrix = matrix
            .iter()
            .map(|row| {
                let mut out = vec![0.0; states];
                for (mid, &w) in row.iter().enumerate() {
                    if w != 0.0 {
                        for (to, &t) in step[mid].iter().enumerate() {
                            out[to] += w * t;
                        }
                    }
                }
                out
            })
            .collect();
    }
    Ok(matrix)
}
