//! Finite boxes of Z^d, regions inside them, and the geometric constructions
//! used throughout: boundary decomposition, checkerboards and the loophole
//! volumes that select one of the two checkerboard phases.
//!
//! Sites are linear indices into a [`LatticeBox`], lexicographic over the
//! axes with the last axis running fastest. A [`Region`] stores one
//! membership bit per site of its parent box.

use std::fmt;
use std::sync::Arc;

use fixedbitset::FixedBitSet;
use thiserror::Error;

/// Linear index of a site inside a [`LatticeBox`].
pub type Site = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("expected {expected} coordinates, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("side length along axis {axis} must be positive, got {side}")]
    NonPositiveSide { axis: usize, side: i64 },
    #[error("site {0} is outside the box")]
    SiteOutOfBox(Site),
    #[error("coordinates {0:?} are outside the box")]
    CoordsOutOfBox(Vec<i64>),
    #[error("region must be nonempty")]
    EmptyRegion,
    #[error("shift must be zero or a unit lattice vector, got {0:?}")]
    BadShift(Vec<i64>),
    #[error("L = {0} is too small for the volume to contain the observation window and the neighbors of its odd sites")]
    VolumeTooSmall(i64),
    #[error("malformed region text: {0}")]
    Parse(String),
}

/// An axis-aligned box `corner + [0, sides)` in Z^d.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LatticeBox {
    corner: Vec<i64>,
    sides: Vec<usize>,
    strides: Vec<usize>,
    len: usize,
}

/// One of the `2d` lattice directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Direction {
    pub axis: usize,
    pub positive: bool,
}

/// In-box neighbors of a site together with the directions that leave the box.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighbors {
    pub inside: Vec<Site>,
    pub outward: Vec<Direction>,
}

impl LatticeBox {
    pub fn new(dim: usize, sides: &[i64], corner: &[i64]) -> Result<Self, LatticeError> {
        if dim == 0 {
            return Err(LatticeError::ZeroDimension);
        }
        for v in [sides.len(), corner.len()] {
            if v != dim {
                return Err(LatticeError::DimensionMismatch { expected: dim, got: v });
            }
        }
        let mut usides = Vec::with_capacity(dim);
        for (axis, &side) in sides.iter().enumerate() {
            if side <= 0 {
                return Err(LatticeError::NonPositiveSide { axis, side });
            }
            usides.push(side as usize);
        }
        let mut strides = vec![1usize; dim];
        for a in (0..dim.saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * usides[a + 1];
        }
        let len = usides.iter().product();
        Ok(LatticeBox {
            corner: corner.to_vec(),
            sides: usides,
            strides,
            len,
        })
    }

    /// The cube `[lo, hi]^d`.
    pub fn cube(dim: usize, lo: i64, hi: i64) -> Result<Self, LatticeError> {
        Self::new(dim, &vec![hi - lo + 1; dim], &vec![lo; dim])
    }

    pub fn dim(&self) -> usize {
        self.sides.len()
    }

    pub fn corner(&self) -> &[i64] {
        &self.corner
    }

    pub fn sides(&self) -> &[usize] {
        &self.sides
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn sites(&self) -> std::ops::Range<Site> {
        0..self.len
    }

    /// Largest coordinate along each axis.
    pub fn upper(&self) -> Vec<i64> {
        self.corner
            .iter()
            .zip(&self.sides)
            .map(|(&c, &s)| c + s as i64 - 1)
            .collect()
    }

    pub fn coords(&self, site: Site) -> Vec<i64> {
        let mut out = vec![0; self.dim()];
        self.write_coords(site, &mut out);
        out
    }

    pub fn write_coords(&self, site: Site, out: &mut [i64]) {
        let mut rem = site;
        for a in 0..self.dim() {
            let q = rem / self.strides[a];
            rem %= self.strides[a];
            out[a] = self.corner[a] + q as i64;
        }
    }

    pub fn site(&self, coords: &[i64]) -> Option<Site> {
        if coords.len() != self.dim() {
            return None;
        }
        let mut idx = 0usize;
        for a in 0..self.dim() {
            let off = coords[a] - self.corner[a];
            if off < 0 || off as usize >= self.sides[a] {
                return None;
            }
            idx += off as usize * self.strides[a];
        }
        Some(idx)
    }

    pub fn contains_coords(&self, coords: &[i64]) -> bool {
        self.site(coords).is_some()
    }

    pub fn contains_box(&self, other: &LatticeBox) -> bool {
        other.dim() == self.dim()
            && self.contains_coords(other.corner())
            && self.contains_coords(&other.upper())
    }

    /// Neighbor of `site` in direction `dir`, if it is inside the box.
    pub fn step(&self, site: Site, dir: Direction) -> Option<Site> {
        let q = (site / self.strides[dir.axis]) % self.sides[dir.axis];
        if dir.positive {
            (q + 1 < self.sides[dir.axis]).then(|| site + self.strides[dir.axis])
        } else {
            (q > 0).then(|| site - self.strides[dir.axis])
        }
    }

    pub fn directions(&self) -> impl Iterator<Item = Direction> {
        let d = self.dim();
        (0..d).flat_map(|axis| {
            [false, true]
                .into_iter()
                .map(move |positive| Direction { axis, positive })
        })
    }

    pub fn neighbors(&self, site: Site) -> Result<Neighbors, LatticeError> {
        if site >= self.len {
            return Err(LatticeError::SiteOutOfBox(site));
        }
        let mut inside = Vec::with_capacity(2 * self.dim());
        let mut outward = Vec::new();
        for dir in self.directions() {
            match self.step(site, dir) {
                Some(n) => inside.push(n),
                None => outward.push(dir),
            }
        }
        Ok(Neighbors { inside, outward })
    }

    /// Flat neighbor table with `2d` slots per site; out-of-box slots hold
    /// `self.len()`, so callers can keep one always-empty sentinel cell.
    pub fn neighbor_table(&self) -> NeighborTable {
        let deg = 2 * self.dim();
        let mut idx = Vec::with_capacity(self.len * deg);
        for s in self.sites() {
            for dir in self.directions() {
                idx.push(self.step(s, dir).unwrap_or(self.len) as u32);
            }
        }
        NeighborTable {
            degree: deg,
            sentinel: self.len,
            idx,
        }
    }

    /// Same box grown by `k` sites on every side.
    pub fn padded(&self, k: usize) -> LatticeBox {
        let sides: Vec<i64> = self.sides.iter().map(|&s| (s + 2 * k) as i64).collect();
        let corner: Vec<i64> = self.corner.iter().map(|&c| c - k as i64).collect();
        LatticeBox::new(self.dim(), &sides, &corner).expect("padding keeps sides positive")
    }

    /// Parity of the coordinate sum, 0 for even and 1 for odd.
    pub fn parity(&self, site: Site) -> u8 {
        let mut rem = site;
        let mut sum = 0i64;
        for a in 0..self.dim() {
            let q = rem / self.strides[a];
            rem %= self.strides[a];
            sum += self.corner[a] + q as i64;
        }
        sum.rem_euclid(2) as u8
    }

    /// Shortest box containing both.
    pub fn hull(&self, other: &LatticeBox) -> LatticeBox {
        let lo: Vec<i64> = self
            .corner
            .iter()
            .zip(other.corner())
            .map(|(a, b)| *a.min(b))
            .collect();
        let hi: Vec<i64> = self
            .upper()
            .iter()
            .zip(other.upper())
            .map(|(a, b)| *a.max(&b))
            .collect();
        let sides: Vec<i64> = lo.iter().zip(&hi).map(|(l, h)| h - l + 1).collect();
        LatticeBox::new(self.dim(), &sides, &lo).expect("hull of valid boxes")
    }
}

/// Precomputed nearest-neighbor indices; see [`LatticeBox::neighbor_table`].
#[derive(Debug, Clone)]
pub struct NeighborTable {
    degree: usize,
    sentinel: usize,
    idx: Vec<u32>,
}

impl NeighborTable {
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn sentinel(&self) -> usize {
        self.sentinel
    }

    #[inline]
    pub fn of(&self, site: Site) -> &[u32] {
        &self.idx[site * self.degree..(site + 1) * self.degree]
    }

    pub fn raw(&self) -> &[u32] {
        &self.idx
    }
}

/// The two checkerboard groundstates. Type 0 leaves the origin empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum CheckerboardType {
    Type0,
    Type1,
}

impl CheckerboardType {
    /// Occupation of a site of the given parity under this groundstate.
    pub fn occupied_at_parity(self, parity: u8) -> bool {
        match self {
            CheckerboardType::Type0 => parity == 1,
            CheckerboardType::Type1 => parity == 0,
        }
    }

    /// The groundstate whose ones sit at `parity`.
    pub fn with_ones_at(parity: u8) -> Self {
        if parity == 1 {
            CheckerboardType::Type0
        } else {
            CheckerboardType::Type1
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            CheckerboardType::Type0 => CheckerboardType::Type1,
            CheckerboardType::Type1 => CheckerboardType::Type0,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            CheckerboardType::Type0 => 0,
            CheckerboardType::Type1 => 1,
        }
    }
}

/// A subset of a parent [`LatticeBox`].
#[derive(Clone, PartialEq, Eq)]
pub struct Region {
    frame: Arc<LatticeBox>,
    bits: FixedBitSet,
}

impl fmt::Debug for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Region")
            .field("corner", &self.frame.corner)
            .field("sides", &self.frame.sides)
            .field("len", &self.len())
            .finish()
    }
}

/// Result of [`Region::boundary_decompose`]. All four parts live in the
/// parent box padded by one site, so the outer boundary is always representable.
#[derive(Debug, Clone)]
pub struct BoundaryDecomposition {
    pub interior: Region,
    pub inner_boundary: Region,
    pub outer_boundary: Region,
    pub extension: Region,
}

impl Region {
    pub fn empty(frame: Arc<LatticeBox>) -> Self {
        let n = frame.len();
        Region {
            frame,
            bits: FixedBitSet::with_capacity(n),
        }
    }

    pub fn full(frame: Arc<LatticeBox>) -> Self {
        let mut r = Self::empty(frame);
        r.bits.insert_range(..);
        r
    }

    pub fn from_predicate(frame: Arc<LatticeBox>, mut pred: impl FnMut(&[i64]) -> bool) -> Self {
        let mut r = Self::empty(frame);
        let mut c = vec![0; r.frame.dim()];
        for s in r.frame.sites() {
            r.frame.write_coords(s, &mut c);
            if pred(&c) {
                r.bits.insert(s);
            }
        }
        r
    }

    pub fn from_sites(frame: Arc<LatticeBox>, sites: impl IntoIterator<Item = Site>) -> Self {
        let mut r = Self::empty(frame);
        for s in sites {
            r.bits.insert(s);
        }
        r
    }

    pub fn from_coords<'a>(
        frame: Arc<LatticeBox>,
        coords: impl IntoIterator<Item = &'a [i64]>,
    ) -> Result<Self, LatticeError> {
        let mut r = Self::empty(frame);
        for c in coords {
            let s = r
                .frame
                .site(c)
                .ok_or_else(|| LatticeError::CoordsOutOfBox(c.to_vec()))?;
            r.bits.insert(s);
        }
        Ok(r)
    }

    /// The cube `[lo, hi]^d` as a region of `frame`.
    pub fn cube_in(frame: Arc<LatticeBox>, lo: i64, hi: i64) -> Self {
        Self::from_predicate(frame, |c| c.iter().all(|&x| lo <= x && x <= hi))
    }

    pub fn frame(&self) -> &Arc<LatticeBox> {
        &self.frame
    }

    pub fn bits(&self) -> &FixedBitSet {
        &self.bits
    }

    #[inline]
    pub fn contains(&self, site: Site) -> bool {
        self.bits.contains(site)
    }

    pub fn contains_coords(&self, coords: &[i64]) -> bool {
        self.frame.site(coords).is_some_and(|s| self.bits.contains(s))
    }

    pub fn insert(&mut self, site: Site) {
        self.bits.insert(site);
    }

    pub fn remove(&mut self, site: Site) {
        self.bits.set(site, false);
    }

    pub fn len(&self) -> usize {
        self.bits.count_ones(..)
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_clear()
    }

    /// Member sites in increasing (lexicographic) order.
    pub fn iter(&self) -> impl Iterator<Item = Site> + '_ {
        self.bits.ones()
    }

    pub fn sites(&self) -> Vec<Site> {
        self.bits.ones().collect()
    }

    fn same_frame(&self, other: &Region) {
        assert!(
            Arc::ptr_eq(&self.frame, &other.frame) || *self.frame == *other.frame,
            "set operation on regions of different frames"
        );
    }

    pub fn union(&self, other: &Region) -> Region {
        self.same_frame(other);
        let mut bits = self.bits.clone();
        bits.union_with(&other.bits);
        Region {
            frame: self.frame.clone(),
            bits,
        }
    }

    pub fn intersection(&self, other: &Region) -> Region {
        self.same_frame(other);
        let mut bits = self.bits.clone();
        bits.intersect_with(&other.bits);
        Region {
            frame: self.frame.clone(),
            bits,
        }
    }

    pub fn difference(&self, other: &Region) -> Region {
        self.same_frame(other);
        let mut bits = self.bits.clone();
        bits.difference_with(&other.bits);
        Region {
            frame: self.frame.clone(),
            bits,
        }
    }

    /// Complement inside the frame.
    pub fn complement(&self) -> Region {
        let mut bits = self.bits.clone();
        bits.toggle_range(..);
        Region {
            frame: self.frame.clone(),
            bits,
        }
    }

    pub fn is_subset(&self, other: &Region) -> bool {
        self.same_frame(other);
        self.bits.is_subset(&other.bits)
    }

    pub fn is_disjoint(&self, other: &Region) -> bool {
        self.same_frame(other);
        self.bits.is_disjoint(&other.bits)
    }

    /// Re-index into another frame that contains every member site.
    pub fn embed(&self, frame: Arc<LatticeBox>) -> Result<Region, LatticeError> {
        let mut out = Region::empty(frame);
        let mut c = vec![0; self.frame.dim()];
        for s in self.iter() {
            self.frame.write_coords(s, &mut c);
            let t = out
                .frame
                .site(&c)
                .ok_or_else(|| LatticeError::CoordsOutOfBox(c.clone()))?;
            out.bits.insert(t);
        }
        Ok(out)
    }

    /// Translate by `shift`, staying in the same frame.
    pub fn translate(&self, shift: &[i64]) -> Result<Region, LatticeError> {
        let mut out = Region::empty(self.frame.clone());
        let mut c = vec![0; self.frame.dim()];
        for s in self.iter() {
            self.frame.write_coords(s, &mut c);
            for (x, dx) in c.iter_mut().zip(shift) {
                *x += dx;
            }
            let t = self
                .frame
                .site(&c)
                .ok_or_else(|| LatticeError::CoordsOutOfBox(c.clone()))?;
            out.bits.insert(t);
        }
        Ok(out)
    }

    /// Member sites all of whose `2d` lattice neighbors are members.
    /// `outside_member` says whether positions beyond the frame count as members.
    pub fn interior_with(&self, outside_member: bool) -> Region {
        let mut out = Region::empty(self.frame.clone());
        for s in self.iter() {
            let all_in = self.frame.directions().all(|dir| match self.frame.step(s, dir) {
                Some(n) => self.bits.contains(n),
                None => outside_member,
            });
            if all_in {
                out.bits.insert(s);
            }
        }
        out
    }

    /// Interior `R^o` (positions beyond the frame are non-members).
    pub fn interior(&self) -> Region {
        self.interior_with(false)
    }

    /// Inner boundary `∂_- R = R \ R^o`.
    pub fn inner_boundary(&self) -> Region {
        self.difference(&self.interior())
    }

    /// Sites of the frame adjacent to the region but not in it. Only exact
    /// when the region keeps a margin of one site from the frame edge.
    pub fn outer_boundary_in_frame(&self) -> Region {
        let mut out = Region::empty(self.frame.clone());
        for s in self.iter() {
            for dir in self.frame.directions() {
                if let Some(n) = self.frame.step(s, dir) {
                    if !self.bits.contains(n) {
                        out.bits.insert(n);
                    }
                }
            }
        }
        out
    }

    /// `R ∪ ∂_+ R`, clipped to the frame.
    pub fn extension_in_frame(&self) -> Region {
        self.union(&self.outer_boundary_in_frame())
    }

    /// True when no member touches the frame edge.
    pub fn has_margin(&self) -> bool {
        self.iter().all(|s| {
            self.frame
                .directions()
                .all(|dir| self.frame.step(s, dir).is_some())
        })
    }

    pub fn boundary_decompose(&self) -> Result<BoundaryDecomposition, LatticeError> {
        if self.is_empty() {
            return Err(LatticeError::EmptyRegion);
        }
        let frame = Arc::new(self.frame.padded(1));
        let r = self.embed(frame)?;
        let interior = r.interior();
        let inner_boundary = r.difference(&interior);
        let outer_boundary = r.outer_boundary_in_frame();
        let extension = r.union(&outer_boundary);
        Ok(BoundaryDecomposition {
            interior,
            inner_boundary,
            outer_boundary,
            extension,
        })
    }

    /// Minimal ℓ∞ distance between a member and a site of `other`
    /// (`None` if either is empty).
    pub fn linf_distance(&self, other: &Region) -> Option<i64> {
        let mut a = vec![0; self.frame.dim()];
        let mut b = vec![0; other.frame.dim()];
        let mut best: Option<i64> = None;
        for s in self.iter() {
            self.frame.write_coords(s, &mut a);
            for t in other.iter() {
                other.frame.write_coords(t, &mut b);
                let dist = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).max().unwrap_or(0);
                best = Some(best.map_or(dist, |v| v.min(dist)));
            }
        }
        best
    }

    /// Text form: a header `d=<d> corner=<c,..> sides=<s,..>` followed by
    /// one line of 0/1 characters per last-axis row, rows in lexicographic order.
    pub fn to_text(&self) -> String {
        let mut out = header_line(&self.frame);
        out.push('\n');
        out.push_str(&dump_bits(&self.frame, |s| self.contains(s)));
        out
    }

    pub fn from_text(text: &str) -> Result<Region, LatticeError> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines
            .next()
            .ok_or_else(|| LatticeError::Parse("missing header".into()))?;
        let frame = Arc::new(parse_header(header)?);
        let bits = parse_bits(&frame, &mut lines)?;
        Ok(Region { frame, bits })
    }
}

pub(crate) fn header_line(frame: &LatticeBox) -> String {
    let join = |v: Vec<String>| v.join(",");
    format!(
        "d={} corner={} sides={}",
        frame.dim(),
        join(frame.corner().iter().map(|x| x.to_string()).collect()),
        join(frame.sides().iter().map(|x| x.to_string()).collect()),
    )
}

pub(crate) fn parse_header(line: &str) -> Result<LatticeBox, LatticeError> {
    let mut d = None;
    let mut corner = None;
    let mut sides = None;
    let nums = |v: &str| -> Result<Vec<i64>, LatticeError> {
        v.split(',')
            .map(|t| {
                t.trim()
                    .parse::<i64>()
                    .map_err(|e| LatticeError::Parse(format!("bad integer {t:?}: {e}")))
            })
            .collect()
    };
    for tok in line.split_whitespace() {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| LatticeError::Parse(format!("bad header token {tok:?}")))?;
        match k {
            "d" => {
                d = Some(
                    v.parse::<usize>()
                        .map_err(|e| LatticeError::Parse(format!("bad dimension: {e}")))?,
                )
            }
            "corner" => corner = Some(nums(v)?),
            "sides" => sides = Some(nums(v)?),
            other => return Err(LatticeError::Parse(format!("unknown header key {other:?}"))),
        }
    }
    let (d, corner, sides) = match (d, corner, sides) {
        (Some(d), Some(c), Some(s)) => (d, c, s),
        _ => return Err(LatticeError::Parse("header needs d, corner and sides".into())),
    };
    LatticeBox::new(d, &sides, &corner)
}

pub(crate) fn dump_bits(frame: &LatticeBox, bit: impl Fn(Site) -> bool) -> String {
    let row = *frame.sides().last().expect("dim >= 1");
    let mut out = String::with_capacity(frame.len() + frame.len() / row);
    for s in frame.sites() {
        out.push(if bit(s) { '1' } else { '0' });
        if (s + 1) % row == 0 {
            out.push('\n');
        }
    }
    out
}

pub(crate) fn parse_bits<'a>(
    frame: &LatticeBox,
    lines: &mut impl Iterator<Item = &'a str>,
) -> Result<FixedBitSet, LatticeError> {
    let row = *frame.sides().last().expect("dim >= 1");
    let rows = frame.len() / row;
    let mut bits = FixedBitSet::with_capacity(frame.len());
    for r in 0..rows {
        let line = lines
            .next()
            .ok_or_else(|| LatticeError::Parse(format!("expected {rows} rows, got {r}")))?;
        if line.len() != row {
            return Err(LatticeError::Parse(format!(
                "row {r} has {} entries, expected {row}",
                line.len()
            )));
        }
        for (i, ch) in line.chars().enumerate() {
            match ch {
                '0' => {}
                '1' => bits.insert(r * row + i),
                other => return Err(LatticeError::Parse(format!("unexpected character {other:?}"))),
            }
        }
    }
    Ok(bits)
}

/// Validates a shift: the zero vector or a unit lattice vector.
pub fn check_shift(dim: usize, shift: &[i64]) -> Result<(), LatticeError> {
    if shift.len() != dim {
        return Err(LatticeError::DimensionMismatch {
            expected: dim,
            got: shift.len(),
        });
    }
    let l1: i64 = shift.iter().map(|x| x.abs()).sum();
    if l1 > 1 {
        return Err(LatticeError::BadShift(shift.to_vec()));
    }
    Ok(())
}

/// Unit vector along `axis`.
pub fn unit_vector(dim: usize, axis: usize) -> Vec<i64> {
    let mut e = vec![0; dim];
    e[axis] = 1;
    e
}

fn coord_parity(c: &[i64]) -> u8 {
    c.iter().sum::<i64>().rem_euclid(2) as u8
}

/// The type-0 loophole volume `B_L + shift`, as a region of `frame`.
///
/// `B_L` keeps every even site of `[-L, L]^d` and the odd sites of
/// `[-L+1, L-1]^d`: the cube with the checkerboard ones stripped from its
/// outer shell, so the type-0 groundstate fits an all-ones exterior.
/// The observation window and the neighbors of its odd sites must lie inside.
pub fn loophole_in(
    frame: Arc<LatticeBox>,
    l: i64,
    shift: &[i64],
) -> Result<Region, LatticeError> {
    let region = loophole_shape_in(frame.clone(), l, shift)?;
    let q = observation_window_in(frame.clone());
    let q_ones = Region::from_sites(
        frame.clone(),
        q.iter().filter(|&s| frame.parity(s) == 1),
    );
    let needed = q.union(&q_ones.extension_in_frame());
    if l < 2 || !needed.is_subset(&region) {
        return Err(LatticeError::VolumeTooSmall(l));
    }
    Ok(region)
}

/// [`loophole_in`] without the requirement that the volume contain the
/// observation window.
pub fn loophole_shape_in(
    frame: Arc<LatticeBox>,
    l: i64,
    shift: &[i64],
) -> Result<Region, LatticeError> {
    let d = frame.dim();
    check_shift(d, shift)?;
    let mut base = vec![0i64; d];
    let region = Region::from_predicate(frame, |c| {
        for a in 0..d {
            base[a] = c[a] - shift[a];
        }
        let m = base.iter().map(|x| x.abs()).max().unwrap_or(0);
        if coord_parity(&base) == 0 {
            m <= l
        } else {
            m < l
        }
    });
    if region.len() != loophole_size(d, l) {
        return Err(LatticeError::CoordsOutOfBox(shift.to_vec()));
    }
    Ok(region)
}

fn loophole_size(d: usize, l: i64) -> usize {
    // even sites of [-L, L]^d plus odd sites of [-L+1, L-1]^d
    let count = |lo: i64, hi: i64, parity: u8| -> usize {
        let mut n = 0usize;
        let side = (hi - lo + 1).max(0) as usize;
        let total = side.pow(d as u32);
        let mut c = vec![0i64; d];
        for idx in 0..total {
            let mut rem = idx;
            for a in (0..d).rev() {
                c[a] = lo + (rem % side) as i64;
                rem /= side;
            }
            if coord_parity(&c) == parity {
                n += 1;
            }
        }
        n
    };
    count(-l, l, 0) + count(-l + 1, l - 1, 1)
}

/// `B_L + shift` inside its own frame `[-L-4, L+4]^d`, large enough for
/// the surrounding `C_L` layers.
pub fn loophole_volume(l: i64, dim: usize, shift: &[i64]) -> Result<Region, LatticeError> {
    if dim == 0 {
        return Err(LatticeError::ZeroDimension);
    }
    if l < 2 {
        return Err(LatticeError::VolumeTooSmall(l));
    }
    let frame = Arc::new(LatticeBox::cube(dim, -l - 4, l + 4)?);
    loophole_in(frame, l, shift)
}

/// The `3^d` observation window around the origin as a region of `frame`.
pub fn observation_window_in(frame: Arc<LatticeBox>) -> Region {
    Region::cube_in(frame, -1, 1)
}

/// `C_L`: the bounding box of `B_L ∪ (B_L + e)` padded by a layer of
/// thickness two, clipped to the frame.
pub fn cover_volume(b: &Region, b_shifted: &Region) -> Region {
    let union = b.union(b_shifted);
    let frame = union.frame().clone();
    let d = frame.dim();
    let mut lo = vec![i64::MAX; d];
    let mut hi = vec![i64::MIN; d];
    let mut c = vec![0i64; d];
    for s in union.iter() {
        frame.write_coords(s, &mut c);
        for a in 0..d {
            lo[a] = lo[a].min(c[a]);
            hi[a] = hi[a].max(c[a]);
        }
    }
    Region::from_predicate(frame, |x| (0..d).all(|a| x[a] >= lo[a] - 2 && x[a] <= hi[a] + 2))
}

/// The checkerboard groundstate of the given type restricted to `region`.
pub fn checkerboard(region: &Region, kind: CheckerboardType) -> crate::config::Configuration {
    let frame = region.frame().clone();
    let mut cfg = crate::config::Configuration::empty(region.clone());
    for s in region.iter() {
        if checkerboard_value(&frame, s, kind) {
            cfg.set_unchecked(s, true);
        }
    }
    cfg
}

/// Checkerboard occupation of `site`.
pub fn checkerboard_value(frame: &LatticeBox, site: Site, kind: CheckerboardType) -> bool {
    kind.occupied_at_parity(frame.parity(site))
}

impl fmt::Display for CheckerboardType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "type-{}", self.tag())
    }
}
