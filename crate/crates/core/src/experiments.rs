//! Experiment drivers: the conditional-probability jump between the two
//! loophole volumes, the decay of boundary influence in the uniqueness
//! regime, and the phase scan over `p`.

use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{check_probability, ConfigError};
use crate::constrained_sampler::{
    estimate_loophole, order_parameter_scan, Estimate, OrderParameter, SamplerError,
    SamplerOptions,
};
use crate::dobrushin::{
    default_rate, dobrushin_constant, empirical_quasilocality, log_slope, DobrushinConstant,
    DobrushinError, QuasilocalityRow,
};
use crate::exact_oracle::{EnumLimits, OracleError, UnfixingCounts};
use crate::lattice::{unit_vector, LatticeError};
use crate::record::{ExperimentRecord, Quantity};
use crate::runtime::split_seed;

/// Gap, net of three standard errors, above which a scan point counts as
/// evidence of the symmetry-broken regime.
pub const EVIDENCE_GAP: f64 = 0.5;

/// Relative agreement required between the two sides of the unfixing
/// identity in exact mode.
pub const IDENTITY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Dobrushin(#[from] DobrushinError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JumpMode {
    Exact,
    Mcmc,
}

impl FromStr for JumpMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "exact" => Ok(JumpMode::Exact),
            "mcmc" => Ok(JumpMode::Mcmc),
            other => Err(format!("unknown mode `{other}` (exact or mcmc)")),
        }
    }
}

impl JumpMode {
    fn name(self) -> &'static str {
        match self {
            JumpMode::Exact => "exact",
            JumpMode::Mcmc => "mcmc",
        }
    }
}

/// One volume of the jump experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpSide {
    /// `(p/(1-p)) ν_B(σ_Q = ω^0_Q)`.
    pub ratio: Estimate,
    /// `ν_B(σ_Q = ω^0_Q)`.
    pub nu_ground: Estimate,
    /// Probability of the phase opposite to the one the volume selects at
    /// the origin: `ν_{B_L}(ω_0 = 1)` or `ν_{B_L+e}(ω_0 = 0)`.
    pub wrong_phase: Estimate,
    /// Second-layer conditional ratio, exact mode only.
    pub mu_ratio: Option<f64>,
}

impl JumpSide {
    pub fn relative_error(&self) -> Option<f64> {
        self.mu_ratio
            .map(|m| (m - self.ratio.value).abs() / self.ratio.value.abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpRow {
    pub l: i64,
    /// `B_L`; `None` when the volume is too small for the window.
    pub plain: Option<JumpSide>,
    /// `B_L + e_1`.
    pub shifted: Option<JumpSide>,
}

impl JumpRow {
    /// `ratio(B_L) - ratio(B_L + e)` and its standard error.
    pub fn gap(&self) -> Option<(f64, f64)> {
        let (a, b) = (self.plain?, self.shifted?);
        Some((
            a.ratio.value - b.ratio.value,
            a.ratio.se.hypot(b.ratio.se),
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpReport {
    pub p: f64,
    pub d: usize,
    pub mode: JumpMode,
    pub seed: u64,
    pub rows: Vec<JumpRow>,
    /// Empirical proxy for `ε(p)`: the largest wrong-phase probability
    /// over all volumes measured.
    pub epsilon_hat: Estimate,
    /// `(p/(1-p)) (1 - |Q| ε̂)`, expected below the `B_L` ratios.
    pub lower_bracket: f64,
    /// `(p/(1-p)) ε̂`, expected above the `B_L + e` ratios.
    pub upper_bracket: f64,
    pub wall_time_s: f64,
}

fn exact_estimate(value: f64) -> Estimate {
    Estimate {
        value,
        se: 0.0,
        ess: 0.0,
        sweeps: 0,
    }
}

fn scaled(e: Estimate, k: f64) -> Estimate {
    Estimate {
        value: e.value * k,
        se: e.se * k,
        ..e
    }
}

fn complement(e: Estimate) -> Estimate {
    Estimate {
        value: 1.0 - e.value,
        ..e
    }
}

fn exact_side(
    p: f64,
    d: usize,
    l: i64,
    shift: &[i64],
    limits: &EnumLimits,
) -> Result<Option<JumpSide>, ExperimentError> {
    let counts = match UnfixingCounts::compute(d, l, shift, limits) {
        Ok(c) => c,
        Err(OracleError::Lattice(LatticeError::VolumeTooSmall(_))) => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let values = counts.evaluate(p)?;
    // the origin is the middle site of the 3^d window
    let origin_bit = ((3u64.pow(d as u32) - 1) / 2) as u32;
    let log_total = counts.nu.log_total(p);
    let origin_one: f64 = counts
        .nu
        .keys()
        .filter(|k| k >> origin_bit & 1 == 1)
        .map(|k| (counts.nu.log_mass(k, p) - log_total).exp())
        .sum();
    let shifted = shift.iter().any(|&x| x != 0);
    let wrong = if shifted { 1.0 - origin_one } else { origin_one };
    Ok(Some(JumpSide {
        ratio: exact_estimate(values.rhs),
        nu_ground: exact_estimate(values.nu_ground),
        wrong_phase: exact_estimate(wrong),
        mu_ratio: Some(values.lhs),
    }))
}

fn mcmc_side(
    p: f64,
    d: usize,
    l: i64,
    shift: &[i64],
    opts: &SamplerOptions,
) -> Result<Option<JumpSide>, ExperimentError> {
    let label = shift.iter().any(|&x| x != 0) as u64;
    let opts = SamplerOptions {
        seed: split_seed(opts.seed, &[l as u64, label]),
        ..*opts
    };
    let est = match estimate_loophole(p, d, l, shift, &opts) {
        Ok(e) => e,
        Err(SamplerError::Lattice(LatticeError::VolumeTooSmall(_))) => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let wrong = if label == 1 {
        complement(est.origin)
    } else {
        est.origin
    };
    Ok(Some(JumpSide {
        ratio: scaled(est.ground_q, p / (1.0 - p)),
        nu_ground: est.ground_q,
        wrong_phase: wrong,
        mu_ratio: None,
    }))
}

/// Ratio pairs for `B_L` and `B_L + e_1` at every `L`. Exact mode
/// enumerates both sides of the unfixing identity; MCMC mode estimates the
/// groundstate probability with the constrained sampler. The run length
/// and seed come from `opts`; exact mode ignores them.
pub fn run_jump_experiment(
    p: f64,
    d: usize,
    l_list: &[i64],
    mode: JumpMode,
    opts: &SamplerOptions,
    limits: &EnumLimits,
) -> Result<JumpReport, ExperimentError> {
    check_probability(p)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(ConfigError::BadProbability(p).into());
    }
    if l_list.is_empty() {
        return Err(ExperimentError::Invalid("empty list of volume sizes".into()));
    }
    if mode == JumpMode::Mcmc {
        opts.validate()?;
    }
    let start = Instant::now();
    let zero = vec![0i64; d];
    let e1 = unit_vector(d, 0);
    let rows = l_list
        .par_iter()
        .map(|&l| {
            let side = |shift: &[i64]| match mode {
                JumpMode::Exact => exact_side(p, d, l, shift, limits),
                JumpMode::Mcmc => mcmc_side(p, d, l, shift, opts),
            };
            Ok(JumpRow {
                l,
                plain: side(&zero)?,
                shifted: side(&e1)?,
            })
        })
        .collect::<Result<Vec<JumpRow>, ExperimentError>>()?;
    let epsilon_hat = rows
        .iter()
        .flat_map(|r| [r.plain, r.shifted])
        .flatten()
        .map(|s| s.wrong_phase)
        .fold(exact_estimate(0.0), |a, b| if b.value > a.value { b } else { a });
    let odds = p / (1.0 - p);
    let q_size = 3f64.powi(d as i32);
    Ok(JumpReport {
        p,
        d,
        mode,
        seed: opts.seed,
        rows,
        epsilon_hat,
        lower_bracket: odds * (1.0 - q_size * epsilon_hat.value),
        upper_bracket: odds * epsilon_hat.value,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

fn quantity(e: Estimate, mode: JumpMode) -> Quantity {
    match mode {
        JumpMode::Exact => Quantity::Exact {
            value: e.value,
            tolerance: IDENTITY_TOLERANCE * e.value.abs(),
        },
        JumpMode::Mcmc => Quantity::Stochastic {
            value: e.value,
            se: e.se,
        },
    }
}

impl JumpReport {
    /// One record per `L`.
    pub fn records(&self) -> Vec<ExperimentRecord> {
        let seed = (self.mode == JumpMode::Mcmc).then_some(self.seed);
        self.rows
            .iter()
            .map(|row| {
                let mut rec = ExperimentRecord::new("jump", self.mode.name(), seed)
                    .param("p", self.p)
                    .param("d", self.d as f64)
                    .param("L", row.l as f64)
                    .result("epsilon_hat", quantity(self.epsilon_hat, self.mode))
                    .result("lower_bracket", Quantity::Bound { value: self.lower_bracket })
                    .result("upper_bracket", Quantity::Bound { value: self.upper_bracket });
                for (name, side) in [("plain", row.plain), ("shifted", row.shifted)] {
                    let Some(s) = side else { continue };
                    rec = rec
                        .result(&format!("ratio_{name}"), quantity(s.ratio, self.mode))
                        .result(&format!("nu_ground_{name}"), quantity(s.nu_ground, self.mode))
                        .result(&format!("wrong_phase_{name}"), quantity(s.wrong_phase, self.mode));
                    if let Some(m) = s.mu_ratio {
                        rec = rec.result(
                            &format!("mu_ratio_{name}"),
                            Quantity::Exact {
                                value: m,
                                tolerance: IDENTITY_TOLERANCE * m.abs(),
                            },
                        );
                    }
                }
                if let Some((gap, se)) = row.gap() {
                    let q = match self.mode {
                        JumpMode::Exact => Quantity::Exact {
                            value: gap,
                            tolerance: IDENTITY_TOLERANCE * gap.abs(),
                        },
                        JumpMode::Mcmc => Quantity::Stochastic { value: gap, se },
                    };
                    rec = rec.result("gap", q);
                }
                rec.wall_time_s = self.wall_time_s;
                rec
            })
            .collect()
    }
}

/// Boundary-influence table of the corridor instance with its fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayExperiment {
    pub p: f64,
    pub d: usize,
    pub width: i64,
    pub trials: usize,
    pub seed: u64,
    pub rate: f64,
    pub rows: Vec<QuasilocalityRow>,
    /// Least-squares slope of `ln(measured)` against `r`.
    pub slope: Option<f64>,
    pub wall_time_s: f64,
}

pub fn run_decay_experiment(
    p: f64,
    d: usize,
    r_list: &[i64],
    trials: usize,
    width: i64,
    seed: u64,
    limits: &EnumLimits,
) -> Result<DecayExperiment, ExperimentError> {
    let start = Instant::now();
    let rows = empirical_quasilocality(p, d, r_list, trials, seed, width, limits)?;
    Ok(DecayExperiment {
        p,
        d,
        width,
        trials,
        seed,
        rate: default_rate(p, d)?,
        slope: log_slope(&rows),
        rows,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

impl DecayExperiment {
    /// One record per `r`; the fitted slope rides on every row.
    pub fn records(&self) -> Vec<ExperimentRecord> {
        self.rows
            .iter()
            .map(|row| {
                let mut rec = ExperimentRecord::new("decay", "exact", Some(self.seed))
                    .param("p", self.p)
                    .param("d", self.d as f64)
                    .param("r", row.r as f64)
                    .param("width", self.width as f64)
                    .param("trials", self.trials as f64)
                    .param("rate", self.rate)
                    .result(
                        "measured",
                        Quantity::Exact {
                            value: row.measured,
                            tolerance: 1e-12,
                        },
                    )
                    .result("bound", Quantity::Bound { value: row.bound })
                    .label(if row.measured <= row.bound { "within-bound" } else { "exceeds-bound" });
                if let Some(s) = self.slope {
                    rec = rec.result("log_slope", Quantity::Bound { value: s });
                }
                rec.wall_time_s = self.wall_time_s;
                rec
            })
            .collect()
    }
}

/// Regime suggested for one `p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Band {
    /// Certified by the Dobrushin condition `2dp < 1`.
    Gibbs,
    /// Symmetry-breaking gap beyond [`EVIDENCE_GAP`] by three standard
    /// errors. Evidence only, never a proof.
    NonGibbsEvidence,
    Undetermined,
}

impl Band {
    pub fn name(self) -> &'static str {
        match self {
            Band::Gibbs => "gibbs",
            Band::NonGibbsEvidence => "non-gibbs-evidence",
            Band::Undetermined => "undetermined",
        }
    }
}

/// The Dobrushin certificate decides the Gibbs band; the sampler only
/// ever supplies evidence for the other one, and never below `1/(2d)`.
pub fn classify(p: f64, d: usize, order: &OrderParameter, dob: &DobrushinConstant) -> Band {
    if dob.uniqueness {
        Band::Gibbs
    } else if p > 1.0 / (2.0 * d as f64) && order.gap() - 3.0 * order.gap_se() > EVIDENCE_GAP {
        Band::NonGibbsEvidence
    } else {
        Band::Undetermined
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseRow {
    pub order: OrderParameter,
    pub dobrushin: DobrushinConstant,
    pub band: Band,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseScan {
    pub d: usize,
    pub l: i64,
    pub seed: u64,
    pub rows: Vec<PhaseRow>,
    pub wall_time_s: f64,
}

/// Order-parameter gap and Dobrushin flag at every `p`, each point on its
/// own seed split from `opts.seed` and `p`.
pub fn run_phase_scan(
    p_grid: &[f64],
    d: usize,
    l: i64,
    opts: &SamplerOptions,
) -> Result<PhaseScan, ExperimentError> {
    if p_grid.is_empty() {
        return Err(ExperimentError::Invalid("empty p grid".into()));
    }
    if let Some(p) = p_grid.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
        return Err(ConfigError::BadProbability(*p).into());
    }
    let start = Instant::now();
    let rows = p_grid
        .par_iter()
        .map(|&p| {
            let point = SamplerOptions {
                seed: split_seed(opts.seed, &[p.to_bits()]),
                ..*opts
            };
            let order = order_parameter_scan(&[p], d, l, &point)?[0];
            let dobrushin = dobrushin_constant(p, d)?;
            Ok(PhaseRow {
                order,
                dobrushin,
                band: classify(p, d, &order, &dobrushin),
            })
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;
    Ok(PhaseScan {
        d,
        l,
        seed: opts.seed,
        rows,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

impl PhaseScan {
    pub fn records(&self) -> Vec<ExperimentRecord> {
        self.rows
            .iter()
            .map(|row| {
                let o = row.order;
                let mut rec = ExperimentRecord::new("scan", "mcmc", Some(self.seed))
                    .param("p", o.p)
                    .param("d", self.d as f64)
                    .param("L", self.l as f64)
                    .result("origin_plain", Quantity::Stochastic { value: o.plain.value, se: o.plain.se })
                    .result(
                        "origin_shifted",
                        Quantity::Stochastic { value: o.shifted.value, se: o.shifted.se },
                    )
                    .result("gap", Quantity::Stochastic { value: o.gap(), se: o.gap_se() })
                    .result("dobrushin_constant", Quantity::Bound { value: row.dobrushin.value })
                    .label(row.band.name());
                rec.wall_time_s = self.wall_time_s;
                rec
            })
            .collect()
    }
}
