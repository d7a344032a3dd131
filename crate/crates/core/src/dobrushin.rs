//! Dobrushin interdependence for the first-layer constraint specification
//! and the decay of boundary influence on second-layer kernels.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{check_probability, BoundaryCondition, ConfigError, Configuration};
use crate::exact_oracle::{exact_second_layer_conditional, EnumLimits, OracleError};
use crate::lattice::{LatticeBox, LatticeError, Region, Site};

/// Tail mass below which the Neumann series is truncated.
pub const SERIES_TOLERANCE: f64 = 1e-15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DobrushinError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("need 0 <= p < 1, got {0}")]
    BadP(f64),
    #[error("rate c = {c} violates p e^c < 1/(2d) for p = {p}, d = {d}")]
    BadRate { p: f64, d: usize, c: f64 },
    #[error("need Λ ⊆ Δ with Λ nonempty")]
    BadRegions,
    #[error("{0}")]
    Invalid(String),
}

/// Sparse `C_ij` on an index set `S`: `p` for neighbors in `S`, else 0.
#[derive(Debug, Clone)]
pub struct DobrushinMatrix {
    pub s_area: Region,
    pub p: f64,
}

pub fn dobrushin_matrix(p: f64, s_area: &Region) -> Result<DobrushinMatrix, DobrushinError> {
    if !(0.0..1.0).contains(&p) {
        return Err(DobrushinError::BadP(p));
    }
    Ok(DobrushinMatrix {
        s_area: s_area.clone(),
        p,
    })
}

impl DobrushinMatrix {
    pub fn entry(&self, i: Site, j: Site) -> f64 {
        if !self.s_area.contains(i) || !self.s_area.contains(j) {
            return 0.0;
        }
        let frame = self.s_area.frame();
        let adjacent = frame.directions().any(|dir| frame.step(i, dir) == Some(j));
        if adjacent {
            self.p
        } else {
            0.0
        }
    }

    /// Nonzero entries of row `i`.
    pub fn row(&self, i: Site) -> Vec<(Site, f64)> {
        let frame = self.s_area.frame();
        if !self.s_area.contains(i) {
            return Vec::new();
        }
        frame
            .directions()
            .filter_map(|dir| frame.step(i, dir))
            .filter(|&j| self.s_area.contains(j))
            .map(|j| (j, self.p))
            .collect()
    }

    pub fn row_sum(&self, i: Site) -> f64 {
        self.row(i).iter().map(|(_, c)| c).sum()
    }

    pub fn max_row_sum(&self) -> f64 {
        self.s_area
            .iter()
            .map(|i| self.row_sum(i))
            .fold(0.0, f64::max)
    }

    pub fn is_symmetric(&self) -> bool {
        self.s_area
            .iter()
            .all(|i| self.row(i).iter().all(|&(j, c)| self.entry(j, i) == c))
    }
}

/// Worst-case row sum `c(p) = 2dp` and whether it certifies uniqueness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DobrushinConstant {
    pub value: f64,
    pub uniqueness: bool,
}

pub fn dobrushin_constant(p: f64, d: usize) -> Result<DobrushinConstant, DobrushinError> {
    check_probability(p)?;
    if d == 0 {
        return Err(LatticeError::ZeroDimension.into());
    }
    let value = (2 * d) as f64 * p;
    Ok(DobrushinConstant {
        value,
        uniqueness: value < 1.0,
    })
}

/// Default decay rate `c* = ½ ln(1/(2dp))`.
pub fn default_rate(p: f64, d: usize) -> Result<f64, DobrushinError> {
    if !(p > 0.0) {
        return Err(DobrushinError::Invalid(
            "the automatic rate needs p > 0; pass a rate explicitly".into(),
        ));
    }
    let c = 0.5 * (1.0 / (2.0 * d as f64 * p)).ln();
    if !(c > 0.0) {
        return Err(DobrushinError::BadRate { p, d, c });
    }
    Ok(c)
}

/// Closed-form and numeric influence bounds between `Λ` and `Δ^c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub lambda_size: usize,
    /// `s(Λ, Δ^c)`, the ℓ∞ distance.
    pub distance: i64,
    pub rate: f64,
    /// `|Λ| (1 - 2dp e^c)^{-1} e^{-c s}`.
    pub closed_form: f64,
    /// `Σ_{i∈Λ, j∉Δ} (Σ_n C^n)_{ij}` with `S = Z^d`, truncated.
    pub numeric: f64,
    pub truncation_order: usize,
    /// Partial sums after each order `0..=truncation_order`.
    pub partial_sums: Vec<f64>,
}

/// Influence bound `D(Λ, Δ)` for the worst case `S = Z^d`.
pub fn decay_bound(
    lambda: &Region,
    delta: &Region,
    p: f64,
    rate: Option<f64>,
) -> Result<DecayReport, DobrushinError> {
    if !(0.0..1.0).contains(&p) {
        return Err(DobrushinError::BadP(p));
    }
    if lambda.is_empty() || !lambda.is_subset(delta) {
        return Err(DobrushinError::BadRegions);
    }
    let frame = lambda.frame().clone();
    let d = frame.dim();
    let c = match rate {
        Some(c) => c,
        None => default_rate(p, d)?,
    };
    let growth = 2.0 * d as f64 * p;
    if !(c > 0.0) || growth * c.exp() >= 1.0 {
        return Err(DobrushinError::BadRate { p, d, c });
    }
    let distance = outside_distance(lambda, delta);
    let n_lambda = lambda.len();
    let closed_form = n_lambda as f64 / (1.0 - growth * c.exp()) * (-c * distance as f64).exp();

    // smallest order whose tail |Λ| g^{N+1} / (1 - g) is below tolerance
    let mut order = 0usize;
    while growth > 0.0
        && n_lambda as f64 * growth.powi(order as i32 + 1) / (1.0 - growth) >= SERIES_TOLERANCE
    {
        order += 1;
    }
    let big = Arc::new(frame.padded(order + 1));
    let lam = lambda.embed(big.clone())?;
    let del = delta.embed(big.clone())?;
    let table = big.neighbor_table();
    let n = big.len();
    let mut u: Vec<f64> = (0..n).map(|s| lam.contains(s) as u8 as f64).collect();
    let outside: Vec<bool> = (0..n).map(|s| !del.contains(s)).collect();
    let mut partial = Vec::with_capacity(order + 1);
    let mut acc = 0.0;
    for k in 0..=order {
        if k > 0 {
            u = (0..n)
                .into_par_iter()
                .map(|s| {
                    p * table
                        .of(s)
                        .iter()
                        .filter(|&&t| (t as usize) < n)
                        .map(|&t| u[t as usize])
                        .sum::<f64>()
                })
                .collect();
        }
        acc += u
            .iter()
            .zip(&outside)
            .filter(|(_, &o)| o)
            .map(|(x, _)| x)
            .sum::<f64>();
        partial.push(acc);
    }
    Ok(DecayReport {
        lambda_size: n_lambda,
        distance,
        rate: c,
        closed_form,
        numeric: acc,
        truncation_order: order,
        partial_sums: partial,
    })
}

/// `s(Λ, Δ^c)`: the ℓ∞ distance from `Λ` to the nearest site outside `Δ`
/// in `Z^d`, computed in the frame grown by one layer.
fn outside_distance(lambda: &Region, delta: &Region) -> i64 {
    let frame = Arc::new(lambda.frame().padded(1));
    let lam = lambda.embed(frame.clone()).expect("padded frame");
    let del = delta.embed(frame).expect("padded frame");
    lam.linf_distance(&del.complement()).expect("nonempty")
}

/// Corridor geometry for measuring boundary influence on the kernel at
/// the origin.
///
/// The second layer is 1' everywhere except on a corridor `U` running from
/// `e_1` along the first axis with the given width along the second, and on
/// its outer boundary, where it is 0'. The first layer on `U` is free, so
/// the kernel at the origin feels the boundary condition through `U` only.
#[derive(Debug, Clone)]
pub struct CorridorInstance {
    pub frame: Arc<LatticeBox>,
    pub lambda: Region,
    pub corridor: Region,
    pub second_layer: Configuration,
}

impl CorridorInstance {
    pub fn new(d: usize, reach: i64, width: i64) -> Result<CorridorInstance, DobrushinError> {
        if d < 2 || width < 1 || reach < 1 {
            return Err(DobrushinError::Invalid(
                "corridor needs d >= 2, width >= 1, reach >= 1".into(),
            ));
        }
        let frame = Arc::new(LatticeBox::cube(d, -reach - 2, reach + 2)?);
        let origin = frame.site(&vec![0; d]).expect("origin");
        let lambda = Region::from_sites(frame.clone(), [origin]);
        let corridor = Region::from_predicate(frame.clone(), |x| {
            x[0] >= 1 && x[1] >= 0 && x[1] < width && x[2..].iter().all(|&c| c == 0)
        });
        let shell = corridor.outer_boundary_in_frame().difference(&lambda);
        let empty = corridor.union(&shell).union(&lambda);
        let second_layer =
            Configuration::from_fn(lambda.complement(), |s| !empty.contains(s));
        Ok(CorridorInstance {
            frame,
            lambda,
            corridor,
            second_layer,
        })
    }

    /// First-layer configurations outside `delta` compatible with the
    /// second layer: 1 on 1' sites, 0 on the shell, and the given values on
    /// the corridor beyond `delta`.
    fn exterior(&self, delta: &Region, corridor_value: impl Fn(Site) -> bool) -> BoundaryCondition {
        let outside = delta.complement();
        BoundaryCondition::explicit(Configuration::from_fn(outside, |s| {
            if self.corridor.contains(s) {
                corridor_value(s)
            } else {
                self.second_layer.occupied(s)
            }
        }))
    }
}

/// One row of the quasilocality table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuasilocalityRow {
    pub r: i64,
    /// Largest kernel difference over patterns and exterior pairs.
    pub measured: f64,
    pub bound: f64,
}

/// Boundary influence on the second-layer kernel at the origin for
/// `Δ = [-r, r]^d`, against the decay bound with `s = r + 1`.
///
/// Exteriors agree inside `Δ` and differ on the corridor beyond it: all
/// empty, all occupied (the corridor continued as 1'), and `trials` random
/// hard-core fillings.
pub fn empirical_quasilocality(
    p: f64,
    d: usize,
    r_list: &[i64],
    trials: usize,
    seed: u64,
    width: i64,
    limits: &EnumLimits,
) -> Result<Vec<QuasilocalityRow>, DobrushinError> {
    let constant = dobrushin_constant(p, d)?;
    if !constant.uniqueness {
        return Err(DobrushinError::Invalid(format!(
            "quasilocality check needs 2dp < 1, got {}",
            constant.value
        )));
    }
    let reach = r_list.iter().copied().max().unwrap_or(1) + 3;
    let inst = CorridorInstance::new(d, reach, width)?;
    let frame = inst.frame.clone();
    let rate = default_rate(p, d)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    r_list
        .iter()
        .map(|&r| {
            let delta = Region::cube_in(frame.clone(), -r, r);
            let cond = inst.second_layer.restrict(&delta.difference(&inst.lambda))?;
            let beyond: Vec<Site> = inst.corridor.difference(&delta).sites();
            let mut exteriors = vec![
                inst.exterior(&delta, |_| false),
                inst.exterior(&delta, |_| true),
            ];
            for _ in 0..trials {
                let mut filled = Region::empty(frame.clone());
                for &s in &beyond {
                    let blocked = frame
                        .directions()
                        .any(|dir| frame.step(s, dir).is_some_and(|n| filled.contains(n)));
                    if !blocked && rng.random::<f64>() < 0.5 {
                        filled.insert(s);
                    }
                }
                exteriors.push(inst.exterior(&delta, |s| filled.contains(s)));
            }
            let kernels = exteriors
                .iter()
                .map(|bc| {
                    exact_second_layer_conditional(p, &inst.lambda, &delta, &cond, bc, limits)
                })
                .collect::<Result<Vec<_>, _>>()?;
            let mut measured: f64 = 0.0;
            for key in [0u64, 1] {
                let values: Vec<f64> = kernels.iter().map(|k| k.prob(key)).collect();
                let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
                measured = measured.max(hi - lo);
            }
            let report = decay_bound(&inst.lambda, &delta, p, Some(rate))?;
            Ok(QuasilocalityRow {
                r,
                measured,
                bound: report.closed_form,
            })
        })
        .collect()
}

/// Least-squares slope of `ln(measured)` against `r` over rows with a
/// positive measurement.
pub fn log_slope(rows: &[QuasilocalityRow]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|row| row.measured > 0.0)
        .map(|row| (row.r as f64, row.measured.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}
