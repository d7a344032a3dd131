//! Contour structure checked exhaustively on a 5x5 window inside the
//! type-0 phase.

use std::collections::BTreeSet;
use std::sync::Arc;

use gibbslab::config::{is_t_feasible, BoundaryCondition, Configuration};
use gibbslab::contour::*;
use gibbslab::exact_oracle::{enumerate_constrained, Constraint, EnumLimits};
use gibbslab::lattice::*;

struct Window {
    frame: Arc<LatticeBox>,
    inner: Region,
    bc: BoundaryCondition,
}

fn window() -> Window {
    let frame = Arc::new(LatticeBox::cube(2, -4, 4).unwrap());
    let inner = Region::cube_in(frame.clone(), -2, 2);
    let bc = BoundaryCondition::explicit(checkerboard(&inner.complement(), CheckerboardType::Type0));
    Window { frame, inner, bc }
}

/// Every isolation-feasible filling of the window, completed by the
/// type-0 checkerboard to a configuration of the whole frame.
fn fillings(w: &Window) -> Vec<(Configuration, Configuration)> {
    let outside = checkerboard(&w.inner.complement(), CheckerboardType::Type0);
    enumerate_constrained(&w.inner, &w.bc, Constraint::Isolation, &EnumLimits::default())
        .unwrap()
        .into_iter()
        .map(|c| {
            let full = c.join(&outside).unwrap();
            (c, full)
        })
        .collect()
}

fn contours_of(full: &Configuration) -> Vec<Contour> {
    let none = BoundaryCondition::none(full.frame().clone());
    split_contours(&extract_gamma(full, &none).unwrap()).unwrap()
}

fn directions(d: usize) -> Vec<Vec<i64>> {
    (0..d)
        .flat_map(|a| {
            let e = unit_vector(d, a);
            let m: Vec<i64> = e.iter().map(|x| -x).collect();
            [e, m]
        })
        .collect()
}

#[test]
fn no_contour_of_size_seven_in_the_plane() {
    let w = window();
    let mut sizes = BTreeSet::new();
    for (_, full) in fillings(&w) {
        for c in contours_of(&full) {
            sizes.insert(c.size());
        }
    }
    assert!(!sizes.contains(&7), "sizes {sizes:?}");
    for s in [5, 8, 9] {
        assert!(sizes.contains(&s), "sizes {sizes:?}");
    }
    assert_eq!(sizes.iter().next(), Some(&5));
}

#[test]
fn contour_set_determines_the_configuration() {
    let w = window();
    let all = fillings(&w);
    assert_eq!(all.len(), 5922);
    for (c, _) in &all {
        let gamma = extract_gamma(c, &w.bc).unwrap();
        let back = configuration_from_gamma(&gamma, &w.bc, CheckerboardType::Type0).unwrap();
        assert_eq!(&back, c);
        assert_eq!(extract_gamma(&back, &w.bc).unwrap(), gamma);
    }
}

#[test]
fn shifting_bad_interiors_preserves_size_and_feasibility() {
    let w = window();
    let mut checked = 0;
    for (_, full) in fillings(&w) {
        for c in contours_of(&full) {
            let good = c.label.expect("outer component is labeled");
            let bad: Vec<&Component> = c.bad_interiors().collect();
            for e in directions(2) {
                let (gamma_e, moved) = shift_interior(&c, &e).unwrap();
                assert_eq!(gamma_e.len(), c.size());
                assert_eq!(moved, bad.len());
                if bad.is_empty() {
                    assert_eq!(gamma_e, c.support);
                    continue;
                }
                // good checkerboard on γ_e, bad interiors moved by e, the rest kept
                let reference = Configuration::from_fn(full.carrier().clone(), |x| {
                    if gamma_e.contains(x) {
                        return checkerboard_value(&w.frame, x, good);
                    }
                    let back: Vec<i64> = w.frame.coords(x).iter().zip(&e).map(|(a, b)| a - b).collect();
                    let from = w.frame.site(&back);
                    match from {
                        Some(y) if bad.iter().any(|b| b.sites.contains(y)) => full.occupied(y),
                        _ => full.occupied(x),
                    }
                });
                let none = BoundaryCondition::none(w.frame.clone());
                assert!(is_t_feasible(&reference, &none, reference.carrier()).unwrap());
                checked += 1;
            }
        }
    }
    assert!(checked > 0);
}

#[test]
fn flipped_origin_is_one_contour_around_a_bad_interior() {
    let w = window();
    let origin = w.frame.site(&[0, 0]).unwrap();
    // the origin's neighbors emptied and the origin occupied
    let full = Configuration::from_fn(Region::full(w.frame.clone()), |x| {
        let c = w.frame.coords(x);
        match c[0].abs() + c[1].abs() {
            0 => true,
            1 => false,
            _ => checkerboard_value(&w.frame, x, CheckerboardType::Type0),
        }
    });
    let cs = contours_of(&full);
    assert_eq!(cs.len(), 1);
    let c = &cs[0];
    assert_eq!(c.size(), 12);
    assert_eq!(c.label, Some(CheckerboardType::Type0));
    assert_eq!(c.interiors.len(), 1);
    assert_eq!(c.interiors[0].label, Some(CheckerboardType::Type1));
    assert_eq!(c.interiors[0].sites.sites(), vec![origin]);
    let (gamma_e, _) = shift_interior(c, &[1, 0]).unwrap();
    assert!(gamma_e.contains(origin));
    assert!(!gamma_e.contains(w.frame.site(&[1, 0]).unwrap()));
}

#[test]
fn nested_bad_square_and_its_shift() {
    // type 1 on |x|∞ <= 1, empty ring at 2, type 0 beyond
    let frame = Arc::new(LatticeBox::cube(2, -6, 6).unwrap());
    let full = Configuration::from_fn(Region::full(frame.clone()), |x| {
        let c = frame.coords(x);
        let m = c[0].abs().max(c[1].abs());
        match m {
            0 | 1 => checkerboard_value(&frame, x, CheckerboardType::Type1),
            2 => false,
            _ => checkerboard_value(&frame, x, CheckerboardType::Type0),
        }
    });
    let cs = contours_of(&full);
    assert_eq!(cs.len(), 1);
    let c = &cs[0];
    assert_eq!(c.label, Some(CheckerboardType::Type0));
    let bad: Vec<&Component> = c.bad_interiors().collect();
    assert!(!bad.is_empty());
    assert!(bad.iter().all(|b| b.label == Some(CheckerboardType::Type1)));
    for e in directions(2) {
        let (gamma_e, _) = shift_interior(c, &e).unwrap();
        assert_eq!(gamma_e.len(), c.size());
        // the shift leaves zeros of γ_e without a neighbor in γ_e
        assert!(!isolated_sites(&gamma_e).is_empty());
        // and a positive fraction of γ_e lies on the good sublattice
        let good = gamma_e
            .iter()
            .filter(|&x| checkerboard_value(&frame, x, CheckerboardType::Type0))
            .count();
        assert!(5 * good >= gamma_e.len(), "{good} of {}", gamma_e.len());
    }
}
