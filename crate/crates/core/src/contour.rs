//! Contours of isolation-constrained configurations.
//!
//! `Γ(ω)` is the set of empty sites with an empty neighbor. Away from `Γ`
//! every configuration is one of the two checkerboards, so each connected
//! piece of the complement carries a checkerboard label.

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{is_t_feasible, BoundaryCondition, ConfigError, Configuration};
use crate::constrained_sampler::{run_observables, ChainSpec, Estimate, SamplerError, SamplerOptions};
use crate::exact_oracle::{exact_nu, EnumLimits, OracleError};
use crate::lattice::{loophole_volume, unit_vector, CheckerboardType, LatticeBox, LatticeError, Region, Site};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContourError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("configuration has adjacent occupied sites; contours need isolated ones")]
    NotIsolated,
    #[error("contour weight needs 0 < p < 1, got {0}")]
    DegenerateP(f64),
    #[error("complement component touching the contour at both parities")]
    InconsistentLabel,
    #[error("{0}")]
    Invalid(String),
}

/// `Γ(ω)` together with the carrier it was extracted from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContourSet {
    pub sites: Region,
    pub carrier: Region,
}

/// A connected component of the complement of a contour.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    pub sites: Region,
    pub label: Option<CheckerboardType>,
}

/// A connected component `γ` of `Γ`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Contour {
    pub support: Region,
    /// Label of the outer complement component.
    pub label: Option<CheckerboardType>,
    pub interiors: Vec<Component>,
}

impl Contour {
    pub fn size(&self) -> usize {
        self.support.len()
    }

    /// Interior components labeled with the opposite type.
    pub fn bad_interiors(&self) -> impl Iterator<Item = &Component> {
        self.interiors
            .iter()
            .filter(move |c| c.label.is_some() && c.label != self.label)
    }
}

fn value_in(config: &Configuration, bc: &BoundaryCondition, s: Site) -> Option<bool> {
    if config.carrier().contains(s) {
        Some(config.occupied(s))
    } else if bc.carrier().contains(s) {
        Some(bc.occupied(s))
    } else {
        None
    }
}

/// `Γ(ω)`: carrier sites `x` with `ω_x = 0` and a neighbor `y` in the
/// carrier or the boundary condition with `ω_y = 0`.
pub fn extract_gamma(
    config: &Configuration,
    bc: &BoundaryCondition,
) -> Result<ContourSet, ContourError> {
    if !is_t_feasible(config, bc, config.carrier())? {
        return Err(ContourError::NotIsolated);
    }
    let frame = config.frame().clone();
    let sites = Region::from_sites(
        frame.clone(),
        config.carrier().iter().filter(|&x| {
            !config.occupied(x)
                && frame.directions().any(|dir| {
                    frame
                        .step(x, dir)
                        .is_some_and(|y| value_in(config, bc, y) == Some(false))
                })
        }),
    );
    Ok(ContourSet {
        sites,
        carrier: config.carrier().clone(),
    })
}

/// Nearest-neighbor connected components of `region`, each in increasing
/// site order, listed by smallest site.
pub fn components(region: &Region) -> Vec<Region> {
    let frame = region.frame().clone();
    let mut seen = Region::empty(frame.clone());
    let mut out = Vec::new();
    for start in region.iter() {
        if seen.contains(start) {
            continue;
        }
        let mut comp = Region::empty(frame.clone());
        let mut queue = VecDeque::from([start]);
        seen.insert(start);
        while let Some(x) = queue.pop_front() {
            comp.insert(x);
            for dir in frame.directions() {
                if let Some(y) = frame.step(x, dir) {
                    if region.contains(y) && !seen.contains(y) {
                        seen.insert(y);
                        queue.push_back(y);
                    }
                }
            }
        }
        out.push(comp);
    }
    out
}

/// Label read off the sites of `comp` adjacent to `wall`: those sites are
/// occupied, so the label is the type with ones at their parity.
fn label_from_wall(
    frame: &LatticeBox,
    comp: &Region,
    wall: &Region,
) -> Result<Option<CheckerboardType>, ContourError> {
    let mut parity = None;
    for x in comp.iter() {
        let touches = frame
            .directions()
            .any(|dir| frame.step(x, dir).is_some_and(|y| wall.contains(y)));
        if touches {
            let px = frame.parity(x);
            match parity {
                None => parity = Some(px),
                Some(q) if q != px => return Err(ContourError::InconsistentLabel),
                _ => {}
            }
        }
    }
    Ok(parity.map(CheckerboardType::with_ones_at))
}

/// Splits `Γ` into contours with their complement components.
///
/// The outer component of a contour is the one reaching outside the
/// carrier; its label is read from the carrier sites next to the contour.
pub fn split_contours(gamma: &ContourSet) -> Result<Vec<Contour>, ContourError> {
    let frame = gamma.sites.frame().clone();
    let mut out = Vec::new();
    for support in components(&gamma.sites) {
        let rest = support.complement();
        let mut interiors = Vec::new();
        let mut label = None;
        for comp in components(&rest) {
            let inner = comp.is_subset(&gamma.carrier) && !touches_frame_edge(&frame, &comp);
            let in_carrier = comp.intersection(&gamma.carrier);
            let comp_label = label_from_wall(&frame, &in_carrier, &support)?;
            if inner {
                interiors.push(Component {
                    sites: comp,
                    label: comp_label,
                });
            } else if comp_label.is_some() {
                if label.is_some() && label != comp_label {
                    return Err(ContourError::InconsistentLabel);
                }
                label = comp_label;
            }
        }
        out.push(Contour {
            support,
            label,
            interiors,
        });
    }
    Ok(out)
}

fn touches_frame_edge(frame: &LatticeBox, region: &Region) -> bool {
    region
        .iter()
        .any(|x| frame.directions().any(|dir| frame.step(x, dir).is_none()))
}

/// Rebuilds the configuration from `Γ`: each complement component is the
/// checkerboard whose ones sit next to `Γ`; a component away from `Γ` takes
/// the type compatible with occupied boundary sites, else `fallback`.
pub fn configuration_from_gamma(
    gamma: &ContourSet,
    bc: &BoundaryCondition,
    fallback: CheckerboardType,
) -> Result<Configuration, ContourError> {
    let frame = gamma.carrier.frame().clone();
    let mut cfg = Configuration::empty(gamma.carrier.clone());
    for comp in components(&gamma.carrier.difference(&gamma.sites)) {
        let mut label = label_from_wall(&frame, &comp, &gamma.sites)?;
        if label.is_none() {
            let bc_ones = Region::from_sites(
                frame.clone(),
                bc.carrier().iter().filter(|&s| bc.occupied(s)),
            );
            // sites next to an occupied boundary site are empty
            label = label_from_wall(&frame, &comp, &bc_ones)?.map(CheckerboardType::flipped);
        }
        let kind = label.unwrap_or(fallback);
        for x in comp.iter() {
            cfg.set(x, kind.occupied_at_parity(frame.parity(x)))?;
        }
    }
    Ok(cfg)
}

/// `ρ(γ) = (1 - p)^{|γ|}`, the Bernoulli weight of the empty contour.
pub fn contour_weight(size: usize, p: f64) -> Result<f64, ContourError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(ContourError::DegenerateP(p));
    }
    Ok((1.0 - p).powi(size as i32))
}

/// Peierls bound `((1-p)/p)^{size/(2d+1)}`; trivial (1, flagged) for `p ≤ 1/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeierlsBound {
    pub value: f64,
    pub trivial: bool,
}

pub fn peierls_bound(p: f64, d: usize, size: usize) -> Result<PeierlsBound, ContourError> {
    crate::config::check_probability(p)?;
    if d == 0 {
        return Err(LatticeError::ZeroDimension.into());
    }
    if p <= 0.5 {
        return Ok(PeierlsBound {
            value: 1.0,
            trivial: true,
        });
    }
    let value = if size % (2 * d + 1) == 0 {
        ((1.0 - p) / p).powi((size / (2 * d + 1)) as i32)
    } else {
        ((1.0 - p) / p).powf(size as f64 / (2 * d + 1) as f64)
    };
    Ok(PeierlsBound {
        value,
        trivial: false,
    })
}

/// `γ_e = (γ \ ∪(W_j + e)) ∪ ∪(W_j \ (W_j + e))` over the bad interiors
/// `W_j`, with the number of shifted components. Without bad interiors
/// `γ_e = γ`.
pub fn shift_interior(contour: &Contour, e: &[i64]) -> Result<(Region, usize), ContourError> {
    crate::lattice::check_shift(contour.support.frame().dim(), e)?;
    let bad: Vec<&Component> = contour.bad_interiors().collect();
    let mut result = contour.support.clone();
    for w in &bad {
        let moved = w.sites.translate(e)?;
        result = result.difference(&moved).union(&w.sites.difference(&moved));
    }
    Ok((result, bad.len()))
}

/// Sites of `region` without a neighbor in `region`.
pub fn isolated_sites(region: &Region) -> Region {
    let frame = region.frame().clone();
    Region::from_sites(
        frame.clone(),
        region.iter().filter(|&x| {
            !frame
                .directions()
                .any(|dir| frame.step(x, dir).is_some_and(|y| region.contains(y)))
        }),
    )
}

/// Small contours of the type-0 phase next to the origin, by size: the
/// star of the removed one at `e_1` (size `2d+1`), the stars at `e_1` and
/// `e_2` (size `4d`), and the stars at `±e_1` (size `4d+1`).
pub fn canonical_contours(frame: &Arc<LatticeBox>) -> Vec<(usize, Region)> {
    let d = frame.dim();
    let star = |center: &[i64]| -> Region {
        let mut r = Region::empty(frame.clone());
        if let Some(s) = frame.site(center) {
            r.insert(s);
            for dir in frame.directions() {
                if let Some(n) = frame.step(s, dir) {
                    r.insert(n);
                }
            }
        }
        r
    };
    let e1 = unit_vector(d, 0);
    let minus_e1: Vec<i64> = e1.iter().map(|x| -x).collect();
    let mut out = vec![(2 * d + 1, star(&e1))];
    if d >= 2 {
        let e2 = unit_vector(d, 1);
        out.push((4 * d, star(&e1).union(&star(&e2))));
    }
    out.push((4 * d + 1, star(&e1).union(&star(&minus_e1))));
    out.sort_by_key(|(n, _)| *n);
    out
}

/// `γ` is a whole contour of `Γ(ω)`: `γ ⊆ Γ` and no outer-boundary site of
/// `γ` is in `Γ`.
pub fn is_exact_contour(gamma: &Region, gamma_set: &Region) -> bool {
    gamma.is_subset(gamma_set) && gamma.outer_boundary_in_frame().is_disjoint(gamma_set)
}

/// One row of a contour frequency table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContourRow {
    pub size: usize,
    pub frequency: Estimate,
    pub bound: f64,
}

/// Frequencies of the canonical contours under `ν_{B_L}` (all-ones
/// exterior), with the Peierls bound for each size. Sizes in `sizes`
/// without a canonical shape get an exact zero frequency.
pub fn empirical_contour_check(
    p: f64,
    d: usize,
    l: i64,
    sizes: &[usize],
    opts: &SamplerOptions,
) -> Result<Vec<ContourRow>, ContourError> {
    if p <= 0.5 {
        return Err(ContourError::Invalid("the contour check needs p > 1/2".into()));
    }
    let spec = ChainSpec::loophole(d, l, &vec![0; d])?;
    let frame = spec.frame().clone();
    let shapes = canonical_contours(&frame);
    let probes: Vec<(Vec<Site>, Vec<Site>)> = shapes
        .iter()
        .map(|(_, g)| (g.sites(), g.outer_boundary_in_frame().sites()))
        .collect();
    let table = frame.neighbor_table();
    let in_gamma = |c: &crate::constrained_sampler::ChainState, x: Site| {
        !c.occupied(x)
            && table
                .of(x)
                .iter()
                .any(|&y| (y as usize) < frame.len() && !c.occupied(y as usize))
    };
    let est = run_observables(&spec, p, opts, probes.len(), |c, out| {
        for (k, (inside, shell)) in probes.iter().enumerate() {
            let hit = inside.iter().all(|&x| in_gamma(c, x))
                && shell.iter().all(|&x| !in_gamma(c, x));
            out[k] = hit as u8 as f64;
        }
    })?;
    sizes
        .iter()
        .map(|&size| {
            let bound = peierls_bound(p, d, size)?.value;
            let frequency = match shapes.iter().position(|(n, _)| *n == size) {
                Some(k) => est[k],
                None => Estimate {
                    value: 0.0,
                    se: 0.0,
                    ess: est[0].ess,
                    sweeps: est[0].sweeps,
                },
            };
            Ok(ContourRow {
                size,
                frequency,
                bound,
            })
        })
        .collect()
}

/// Exact `ν_{B_L}(γ is a contour of Γ)` with all-ones exterior.
pub fn exact_contour_probability(
    p: f64,
    d: usize,
    l: i64,
    gamma: &Region,
    limits: &EnumLimits,
) -> Result<f64, ContourError> {
    let b = loophole_volume(l, d, &vec![0; d])?;
    let gamma = gamma.embed(b.frame().clone())?;
    let bc = BoundaryCondition::ones_outside(&b);
    Ok(exact_nu(
        p,
        &b,
        &bc,
        |cfg| match extract_gamma(cfg, &bc) {
            Ok(set) => is_exact_contour(&gamma, &set.sites),
            Err(_) => false,
        },
        limits,
    )?)
}
