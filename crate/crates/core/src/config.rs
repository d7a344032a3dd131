//! Occupancy configurations, boundary conditions and the thinning map that
//! removes isolated occupied sites.

use std::sync::Arc;

use fixedbitset::FixedBitSet;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::lattice::{
    checkerboard_value, dump_bits, header_line, parse_bits, parse_header, CheckerboardType,
    LatticeBox, LatticeError, Region, Site,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error("site {0} is not in the carrier")]
    OutsideCarrier(Site),
    #[error("probability {0} is outside [0, 1]")]
    BadProbability(f64),
    #[error("regions live in different frames")]
    FrameMismatch,
    #[error("boundary condition overlaps the configuration carrier")]
    OverlappingBoundary,
    #[error("region is not contained in the carrier")]
    NotInCarrier,
    #[error("occupied site {0} is isolated, so the configuration is not a thinning image")]
    IsolatedSite(Site),
    #[error("the reference pattern needs d >= 2, got d = {0}")]
    DimensionTooSmall(usize),
}

pub fn check_probability(p: f64) -> Result<(), ConfigError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(ConfigError::BadProbability(p))
    }
}

/// Occupation bits on a carrier region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Configuration {
    carrier: Region,
    occ: FixedBitSet,
}

impl Configuration {
    pub fn empty(carrier: Region) -> Self {
        let n = carrier.frame().len();
        Configuration {
            carrier,
            occ: FixedBitSet::with_capacity(n),
        }
    }

    pub fn full(carrier: Region) -> Self {
        let mut c = Self::empty(carrier);
        c.occ = c.carrier.bits().clone();
        c
    }

    /// Occupation given by `occupied` on the carrier sites.
    pub fn from_fn(carrier: Region, mut occupied: impl FnMut(Site) -> bool) -> Self {
        let mut c = Self::empty(carrier);
        for s in c.carrier.sites() {
            if occupied(s) {
                c.occ.insert(s);
            }
        }
        c
    }

    pub fn carrier(&self) -> &Region {
        &self.carrier
    }

    pub fn frame(&self) -> &Arc<LatticeBox> {
        self.carrier.frame()
    }

    pub fn get(&self, site: Site) -> Result<bool, ConfigError> {
        if !self.carrier.contains(site) {
            return Err(ConfigError::OutsideCarrier(site));
        }
        Ok(self.occ.contains(site))
    }

    #[inline]
    pub fn occupied(&self, site: Site) -> bool {
        self.occ.contains(site)
    }

    pub fn set(&mut self, site: Site, value: bool) -> Result<(), ConfigError> {
        if !self.carrier.contains(site) {
            return Err(ConfigError::OutsideCarrier(site));
        }
        self.occ.set(site, value);
        Ok(())
    }

    pub(crate) fn set_unchecked(&mut self, site: Site, value: bool) {
        self.occ.set(site, value);
    }

    pub fn occupied_sites(&self) -> Region {
        Region::from_sites(self.frame().clone(), self.occ.ones())
    }

    pub fn count_ones(&self) -> usize {
        self.occ.count_ones(..)
    }

    /// Restriction to a sub-region of the carrier.
    pub fn restrict(&self, region: &Region) -> Result<Configuration, ConfigError> {
        if !region.is_subset(&self.carrier) {
            return Err(ConfigError::NotInCarrier);
        }
        let mut occ = self.occ.clone();
        occ.intersect_with(region.bits());
        Ok(Configuration {
            carrier: region.clone(),
            occ,
        })
    }

    /// Re-index into a larger frame.
    pub fn embed(&self, frame: Arc<LatticeBox>) -> Result<Configuration, ConfigError> {
        let carrier = self.carrier.embed(frame.clone())?;
        let occ = self.occupied_sites().embed(frame)?;
        Ok(Configuration {
            carrier,
            occ: occ.bits().clone(),
        })
    }

    /// Concatenation of two configurations on disjoint carriers.
    pub fn join(&self, other: &Configuration) -> Result<Configuration, ConfigError> {
        if self.frame() != other.frame() {
            return Err(ConfigError::FrameMismatch);
        }
        if !self.carrier.is_disjoint(&other.carrier) {
            return Err(ConfigError::OverlappingBoundary);
        }
        let mut occ = self.occ.clone();
        occ.union_with(&other.occ);
        Ok(Configuration {
            carrier: self.carrier.union(&other.carrier),
            occ,
        })
    }

    /// Bits of the configuration on `window`, one per window site in
    /// increasing site order, packed into a `u64` (bit `i` = `i`-th site).
    pub fn pattern_key(&self, window: &Region) -> u64 {
        let mut key = 0u64;
        for (i, s) in window.iter().enumerate() {
            if self.occ.contains(s) {
                key |= 1 << i;
            }
        }
        key
    }

    /// Text form: the region header, the carrier dump, then the occupancy dump.
    pub fn to_text(&self) -> String {
        let frame = self.frame();
        let mut out = header_line(frame);
        out.push('\n');
        out.push_str(&dump_bits(frame, |s| self.carrier.contains(s)));
        out.push_str(&dump_bits(frame, |s| self.occ.contains(s)));
        out
    }

    pub fn from_text(text: &str) -> Result<Configuration, ConfigError> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines
            .next()
            .ok_or_else(|| LatticeError::Parse("missing header".into()))?;
        let frame = Arc::new(parse_header(header)?);
        let member = parse_bits(&frame, &mut lines)?;
        let mut occ = parse_bits(&frame, &mut lines)?;
        occ.intersect_with(&member);
        Ok(Configuration {
            carrier: Region::from_sites(frame, member.ones()),
            occ,
        })
    }
}

/// Frozen occupation outside a configuration's carrier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundaryCondition {
    values: Configuration,
}

impl BoundaryCondition {
    /// The all-one configuration on `carrier`.
    pub fn all_ones(carrier: Region) -> Self {
        BoundaryCondition {
            values: Configuration::full(carrier),
        }
    }

    pub fn all_zeros(carrier: Region) -> Self {
        BoundaryCondition {
            values: Configuration::empty(carrier),
        }
    }

    /// No boundary sites at all: everything outside the carrier reads as empty.
    pub fn none(frame: Arc<LatticeBox>) -> Self {
        Self::all_zeros(Region::empty(frame))
    }

    pub fn explicit(values: Configuration) -> Self {
        BoundaryCondition { values }
    }

    /// All ones on every site of the frame outside `inside`.
    pub fn ones_outside(inside: &Region) -> Self {
        Self::all_ones(inside.complement())
    }

    pub fn carrier(&self) -> &Region {
        self.values.carrier()
    }

    pub fn values(&self) -> &Configuration {
        &self.values
    }

    pub fn occupied(&self, site: Site) -> bool {
        self.values.occupied(site)
    }
}

/// A configuration decorated by a boundary condition; sites beyond both read as 0.
#[derive(Clone, Copy)]
pub struct Environment<'a> {
    config: &'a Configuration,
    bc: &'a BoundaryCondition,
}

impl<'a> Environment<'a> {
    pub fn new(
        config: &'a Configuration,
        bc: &'a BoundaryCondition,
    ) -> Result<Environment<'a>, ConfigError> {
        if config.frame() != bc.carrier().frame() {
            return Err(ConfigError::FrameMismatch);
        }
        if !config.carrier().is_disjoint(bc.carrier()) {
            return Err(ConfigError::OverlappingBoundary);
        }
        Ok(Environment { config, bc })
    }

    #[inline]
    pub fn value(&self, site: Site) -> bool {
        if self.config.carrier.contains(site) {
            self.config.occupied(site)
        } else {
            self.bc.carrier().contains(site) && self.bc.occupied(site)
        }
    }

    pub fn frame(&self) -> &LatticeBox {
        self.config.frame()
    }

    pub fn has_occupied_neighbor(&self, site: Site) -> bool {
        let frame = self.frame();
        frame
            .directions()
            .any(|dir| frame.step(site, dir).is_some_and(|n| self.value(n)))
    }
}

/// Projection to the non-isolates: `x` stays occupied iff it is occupied
/// and has at least one occupied neighbor.
pub fn thin(config: &Configuration, bc: &BoundaryCondition) -> Result<Configuration, ConfigError> {
    let env = Environment::new(config, bc)?;
    let mut out = Configuration::empty(config.carrier.clone());
    for s in config.occ.ones() {
        if env.has_occupied_neighbor(s) {
            out.occ.insert(s);
        }
    }
    Ok(out)
}

pub fn is_isolated(
    config: &Configuration,
    bc: &BoundaryCondition,
    site: Site,
) -> Result<bool, ConfigError> {
    let env = Environment::new(config, bc)?;
    if !config.carrier.contains(site) {
        return Err(ConfigError::OutsideCarrier(site));
    }
    Ok(config.occupied(site) && !env.has_occupied_neighbor(site))
}

/// Every occupied site of `region` has no occupied neighbor.
pub fn is_t_feasible(
    config: &Configuration,
    bc: &BoundaryCondition,
    region: &Region,
) -> Result<bool, ConfigError> {
    let env = Environment::new(config, bc)?;
    if !region.is_subset(&config.carrier) {
        return Err(ConfigError::NotInCarrier);
    }
    Ok(region
        .iter()
        .all(|s| !config.occupied(s) || !env.has_occupied_neighbor(s)))
}

/// Feasibility on `region ∩ unfixed`, counting only neighbors inside `unfixed`.
pub fn is_t_feasible_within(
    config: &Configuration,
    bc: &BoundaryCondition,
    region: &Region,
    unfixed: &Region,
) -> Result<bool, ConfigError> {
    let env = Environment::new(config, bc)?;
    let area = region.intersection(unfixed);
    if !area.is_subset(&config.carrier) {
        return Err(ConfigError::NotInCarrier);
    }
    let frame = config.frame();
    let feasible = area.iter().all(|s| {
        !config.occupied(s)
            || !frame.directions().any(|dir| {
                frame
                    .step(s, dir)
                    .is_some_and(|n| unfixed.contains(n) && env.value(n))
            })
    });
    Ok(feasible)
}

/// Uniform draw in `[0, 1)` for one site, independent of the order of draws.
fn site_uniform(rng: &mut ChaCha8Rng, site: Site) -> f64 {
    rng.set_word_pos(2 * site as u128);
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// I.i.d. Bernoulli(p) occupation on `region`. Each site's bit depends only
/// on `(seed, site)`.
pub fn sample_bernoulli(p: f64, region: &Region, seed: u64) -> Result<Configuration, ConfigError> {
    check_probability(p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = Configuration::empty(region.clone());
    for s in region.iter() {
        if site_uniform(&mut rng, s) < p {
            cfg.occ.insert(s);
        }
    }
    Ok(cfg)
}

/// Probability that a given site is occupied and isolated: `p (1-p)^{2d}`.
pub fn isolated_site_probability(p: f64, d: usize) -> Result<f64, ConfigError> {
    check_probability(p)?;
    if d == 0 {
        return Err(LatticeError::ZeroDimension.into());
    }
    Ok(p * (1.0 - p).powi(2 * d as i32))
}

/// Sites where the first layer is determined by a thinning image: its
/// occupied sites together with their unoccupied neighbors in the carrier.
pub fn fixed_area(second_layer: &Configuration) -> Result<Region, ConfigError> {
    let frame = second_layer.frame().clone();
    let mut area = Region::empty(frame.clone());
    for s in second_layer.occ.ones() {
        let mut has_partner = false;
        area.insert(s);
        for dir in frame.directions() {
            if let Some(n) = frame.step(s, dir) {
                if second_layer.carrier.contains(n) {
                    area.insert(n);
                    has_partner |= second_layer.occupied(n);
                }
            }
        }
        if !has_partner {
            return Err(ConfigError::IsolatedSite(s));
        }
    }
    Ok(area)
}

/// Second-layer configuration on the `3^d` window around the origin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecondLayerPattern(pub Configuration);

/// The type-0 checkerboard on the `3^d` window with an extra one at the origin.
pub fn reference_pattern(d: usize) -> Result<SecondLayerPattern, ConfigError> {
    if d < 2 {
        return Err(ConfigError::DimensionTooSmall(d));
    }
    let frame = Arc::new(LatticeBox::cube(d, -1, 1)?);
    Ok(reference_pattern_in(frame))
}

/// [`reference_pattern`] placed in a frame containing the window.
pub fn reference_pattern_in(frame: Arc<LatticeBox>) -> SecondLayerPattern {
    let q = crate::lattice::observation_window_in(frame.clone());
    let origin = frame
        .site(&vec![0; frame.dim()])
        .expect("frame contains the origin");
    SecondLayerPattern(Configuration::from_fn(q, |s| {
        s == origin || checkerboard_value(&frame, s, CheckerboardType::Type0)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::checkerboard;

    fn sq(lo: i64, hi: i64) -> Arc<LatticeBox> {
        Arc::new(LatticeBox::cube(2, lo, hi).unwrap())
    }

    fn from_rows(frame: Arc<LatticeBox>, rows: &[&str]) -> Configuration {
        let text: String = rows.concat();
        let bits: Vec<bool> = text.chars().map(|c| c == '1').collect();
        Configuration::from_fn(Region::full(frame), |s| bits[s])
    }

    #[test]
    fn thin_basic_cases() {
        let f = sq(0, 2);
        let none = BoundaryCondition::none(f.clone());
        let empty = Configuration::empty(Region::full(f.clone()));
        assert_eq!(thin(&empty, &none).unwrap(), empty);
        let single = from_rows(f.clone(), &["000", "010", "000"]);
        assert_eq!(thin(&single, &none).unwrap(), empty);
        let domino = from_rows(f.clone(), &["000", "011", "000"]);
        assert_eq!(thin(&domino, &none).unwrap(), domino);
    }

    #[test]
    fn isolation_respects_boundary_condition() {
        let f = sq(-1, 1);
        let center = Region::cube_in(f.clone(), 0, 0);
        let c = Configuration::full(center.clone());
        let o = f.site(&[0, 0]).unwrap();
        assert!(is_isolated(&c, &BoundaryCondition::all_zeros(center.complement()), o).unwrap());
        assert!(!is_isolated(&c, &BoundaryCondition::ones_outside(&center), o).unwrap());
        let e = Configuration::empty(center.clone());
        assert!(!is_isolated(&e, &BoundaryCondition::none(f.clone()), o).unwrap());
        assert_eq!(
            is_isolated(&e, &BoundaryCondition::none(f), 0),
            Err(ConfigError::OutsideCarrier(0))
        );
    }

    #[test]
    fn feasibility_examples() {
        let f = sq(0, 3);
        let all = Region::full(f.clone());
        let none = BoundaryCondition::none(f.clone());
        assert!(is_t_feasible(&Configuration::empty(all.clone()), &none, &all).unwrap());
        let pair = from_rows(f.clone(), &["0000", "0110", "0000", "0000"]);
        assert!(!is_t_feasible(&pair, &none, &all).unwrap());
        let b = crate::lattice::loophole_volume(3, 2, &[0, 0]).unwrap();
        let cb = checkerboard(&b, CheckerboardType::Type0);
        assert!(is_t_feasible(&cb, &BoundaryCondition::ones_outside(&b), &b).unwrap());
        let cb1 = checkerboard(&b, CheckerboardType::Type1);
        assert!(!is_t_feasible(&cb1, &BoundaryCondition::ones_outside(&b), &b).unwrap());
    }

    #[test]
    fn bernoulli_extremes_and_density() {
        let r = Region::full(sq(0, 9));
        assert_eq!(sample_bernoulli(0.0, &r, 7).unwrap().count_ones(), 0);
        assert_eq!(sample_bernoulli(1.0, &r, 7).unwrap().count_ones(), 100);
        assert!(sample_bernoulli(1.5, &r, 7).is_err());
        let big = Region::full(sq(0, 999));
        let ones = sample_bernoulli(0.5, &big, 11).unwrap().count_ones();
        assert!((ones as f64 / 1e6 - 0.5).abs() < 0.002);
    }

    #[test]
    fn bernoulli_is_order_independent() {
        let f = sq(0, 9);
        let whole = sample_bernoulli(0.3, &Region::full(f.clone()), 5).unwrap();
        let part_region = Region::cube_in(f, 2, 5);
        let part = sample_bernoulli(0.3, &part_region, 5).unwrap();
        for s in part_region.iter() {
            assert_eq!(part.occupied(s), whole.occupied(s));
        }
    }

    #[test]
    fn isolated_probability_values() {
        assert_eq!(isolated_site_probability(0.0, 3).unwrap(), 0.0);
        assert_eq!(isolated_site_probability(0.5, 2).unwrap(), 0.03125);
    }

    #[test]
    fn fixed_area_examples() {
        let f = sq(0, 3);
        let all = Region::full(f.clone());
        assert!(fixed_area(&Configuration::empty(all.clone())).unwrap().is_empty());
        let domino = from_rows(f.clone(), &["0000", "0110", "0000", "0000"]);
        assert_eq!(fixed_area(&domino).unwrap().len(), 8);
        assert_eq!(fixed_area(&Configuration::full(all.clone())).unwrap(), all);
        let single = from_rows(f, &["0000", "0100", "0000", "0000"]);
        assert!(matches!(fixed_area(&single), Err(ConfigError::IsolatedSite(_))));
    }

    #[test]
    fn reference_pattern_is_plus_sign() {
        let pat = reference_pattern(2).unwrap().0;
        let frame = pat.frame().clone();
        let rows: Vec<String> = (-1..=1)
            .map(|x| {
                (-1..=1)
                    .map(|y| if pat.occupied(frame.site(&[x, y]).unwrap()) { '1' } else { '0' })
                    .collect()
            })
            .collect();
        assert_eq!(rows, vec!["010", "111", "010"]);
        // embedded in empty surroundings nothing is isolated
        let big = sq(-3, 3);
        let emb = pat.embed(big.clone()).unwrap();
        let bc = BoundaryCondition::all_zeros(emb.carrier().complement());
        assert_eq!(thin(&emb, &bc).unwrap(), emb);
        assert!(reference_pattern(1).is_err());
        let p3 = reference_pattern(3).unwrap().0;
        assert_eq!(p3.count_ones(), 15);
    }

    #[test]
    fn configuration_text_round_trip() {
        let f = sq(0, 2);
        let c = from_rows(f.clone(), &["010", "111", "000"])
            .restrict(&Region::cube_in(f, 0, 1))
            .unwrap();
        assert_eq!(Configuration::from_text(&c.to_text()).unwrap(), c);
    }
}
