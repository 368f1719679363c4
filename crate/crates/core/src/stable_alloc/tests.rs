use super::*;
use crate::allocation::Entry;
use crate::measures::CurveDensity;
use alloc::vec;

fn pt(w: &Window, c: &[f64]) -> Point {
    w.point(c).unwrap()
}

fn atoms(w: &Window, list: &[(&[f64], f64)]) -> AtomMeasure {
    AtomMeasure::new(
        list.iter()
            .map(|(c, m)| Atom {
                location: pt(w, c),
                mass: *m,
            })
            .collect(),
    )
    .unwrap()
}

#[test]
fn single_atom_claims_everything() {
    let w = Window::plane(2.0, 2.0).unwrap();
    let nu = Measure::lebesgue(w, 1.0).unwrap();
    let mu = atoms(&w, &[(&[0.3, 0.7], 4.0)]);
    let out = run_stable_allocation(&nu, &mu, 1.0, 0.1, &StableParams::default()).unwrap();
    assert_eq!(out.converged_stage(), 1);
    assert!((out.allocation.cell_masses(1)[0] - 4.0).abs() < 1e-12);
    assert!(out.allocation.unallocated_mass() < 1e-12);
    assert!(out.exhausted.is_empty());
}

#[test]
fn claim_covers_whole_space_with_max_radius() {
    let w = Window::line(1.0).unwrap();
    let els = elementize(&Measure::lebesgue(w, 1.0).unwrap(), 0.01).unwrap();
    let a = Atom {
        location: pt(&w, &[0.505]),
        mass: 1.0,
    };
    let c = claim_set(&a, 1.0, &els, &w, &[], 1e-9).unwrap();
    assert_eq!(c.claimed.len(), els.len());
    assert!((c.claim_radius - 0.5).abs() < 1e-9);
    let mass: f64 = c.claimed.iter().map(|&(id, f)| f * els[id].mass).sum();
    assert!((mass - 1.0).abs() < 1e-12);
}

#[test]
fn insufficient_mass_is_exhausted() {
    let w = Window::line(1.0).unwrap();
    let els = elementize(&Measure::lebesgue(w, 0.4).unwrap(), 0.1).unwrap();
    let a = Atom {
        location: pt(&w, &[0.5]),
        mass: 1.0,
    };
    assert!(matches!(
        claim_set(&a, 1.0, &els, &w, &[], 1e-9),
        Err(Error::Exhausted { .. })
    ));
}

#[test]
fn circle_claim_is_half_the_circle_from_the_pole() {
    let w = Window::plane(1.0, 1.0).unwrap();
    let centre = pt(&w, &[0.5, 0.5]);
    let r = 0.3;
    let density = 2.0 / (2.0 * core::f64::consts::PI * r);
    let curve = CurveDensity::circle(&w, &centre, r, density).unwrap();
    let nu = Measure::new(w, vec![crate::measures::Component::Curve(curve)]).unwrap();
    let els = elementize(&nu, 0.01).unwrap();
    let a = Atom {
        location: centre,
        mass: 1.0,
    };
    let c = claim_set(&a, 1.0, &els, &w, &[], 1e-9).unwrap();
    let mass: f64 = c.claimed.iter().map(|&(id, f)| f * els[id].mass).sum();
    assert!((mass - 1.0).abs() < 1e-12);
    assert!((c.claim_radius - r).abs() < 1e-9);
    assert!(c.boundary_group > 1);
    // the pole (centre - r e1) is claimed first, the antipode is not claimed
    let first = els[c.claimed[0].0].location;
    assert!(first.x() < 0.5 - 0.29);
    assert!(c
        .claimed
        .iter()
        .all(|&(id, _)| els[id].location.x() < 0.5 + 1e-9 || els[id].location.y() < 0.5));
}

#[test]
fn two_symmetric_atoms_split_the_line() {
    let w = Window::line(1.0).unwrap();
    let nu = Measure::lebesgue(w, 1.0).unwrap();
    let mu = atoms(&w, &[(&[0.0], 0.5), (&[0.5], 0.5)]);
    let out = run_stable_allocation(&nu, &mu, 1.0, 0.01, &StableParams::default()).unwrap();
    let cells = out.allocation.cell_masses(2);
    assert!((cells[0] - 0.5).abs() < 1e-12 && (cells[1] - 0.5).abs() < 1e-12);
    for e in &out.allocation.entries {
        let x = e.element.location.x();
        let d = e.dominant().unwrap().dest;
        let expect = usize::from((0.25..0.75).contains(&x));
        assert_eq!(d, expect, "element at {x}");
    }
}

#[test]
fn appetite_half_leaves_half_unallocated() {
    let w = Window::plane(4.0, 4.0).unwrap();
    let mu = atoms(
        &w,
        &[
            (&[0.31, 0.52], 3.0),
            (&[2.77, 1.13], 5.0),
            (&[1.49, 3.21], 8.0),
        ],
    );
    let nu = Measure::lebesgue(w, 1.0).unwrap();
    let out = run_stable_allocation(&nu, &mu, 0.5, 0.05, &StableParams::default()).unwrap();
    let cells = out.allocation.cell_masses(3);
    for (c, a) in cells.iter().zip(mu.atoms()) {
        assert!((c - 0.5 * a.mass).abs() < 1e-9);
    }
    assert!((out.allocation.unallocated_mass() - 8.0).abs() < 1e-9);
    verify_appetite(&out.allocation, &mu, 0.5, 1e-9).unwrap();
}

#[test]
fn competing_atoms_reach_exact_saturation() {
    let w = Window::plane(3.0, 3.0).unwrap();
    let mu = atoms(
        &w,
        &[
            (&[0.4, 0.4], 1.0),
            (&[0.6, 0.45], 2.0),
            (&[0.5, 0.7], 1.0),
            (&[2.1, 2.2], 3.0),
            (&[1.5, 0.1], 2.0),
        ],
    );
    let nu = Measure::lebesgue(w, 1.0).unwrap();
    let out = run_stable_allocation(&nu, &mu, 1.0, 0.05, &StableParams::default()).unwrap();
    assert!(out.converged_stage() > 1);
    let cells = out.allocation.cell_masses(5);
    for (c, a) in cells.iter().zip(mu.atoms()) {
        assert!((c - a.mass).abs() < 1e-9, "{c} vs {}", a.mass);
    }
    assert!(out.allocation.unallocated_mass() < 1e-9);
    for s in out.stages.windows(2) {
        assert!(s[1].rejected_mass >= s[0].rejected_mass - 1e-12);
    }
}

#[test]
fn stability_no_element_prefers_a_hungry_or_farther_atom() {
    let w = Window::plane(2.0, 2.0).unwrap();
    let mu = atoms(
        &w,
        &[(&[0.2, 0.3], 0.7), (&[0.5, 0.35], 1.1), (&[1.6, 1.2], 0.9)],
    );
    let nu = Measure::lebesgue(w, 0.6).unwrap();
    let out = run_stable_allocation(&nu, &mu, 1.0, 0.05, &StableParams::default()).unwrap();
    // total source 2.4 < 2.7: every element fully used, some atom hungry
    assert!(out.allocation.unallocated_mass() < 1e-9);
    assert!(!out.exhausted.is_empty());
    verify_appetite(&out.allocation, &mu, 1.0, 1e-9).unwrap();
}

#[test]
fn budget_exhaustion_is_reported() {
    let w = Window::plane(3.0, 3.0).unwrap();
    let mu = atoms(
        &w,
        &[(&[0.4, 0.4], 1.0), (&[0.6, 0.45], 2.0), (&[0.5, 0.7], 1.0)],
    );
    let nu = Measure::lebesgue(w, 1.0).unwrap();
    let params = StableParams {
        max_stages: Some(1),
        ..StableParams::default()
    };
    assert!(matches!(
        run_stable_allocation(&nu, &mu, 1.0, 0.05, &params),
        Err(Error::NonConverged { stages: 1, .. })
    ));
}

fn hand_built(w: Window, dests: &[(usize, f64)], offered: f64) -> Allocation {
    let entries = dests
        .iter()
        .enumerate()
        .map(|(i, &(d, m))| Entry {
            element: MassElement::new(i, pt(&w, &[i as f64 * 0.1]), offered),
            offered,
            pieces: vec![crate::allocation::Piece {
                dest: d,
                location: pt(&w, &[0.0]),
                mass: m,
                provenance: crate::allocation::Provenance::Disc,
            }],
        })
        .collect();
    Allocation::new(w, entries)
}

#[test]
fn verify_flags_overfilled_atom() {
    let w = Window::line(1.0).unwrap();
    let mu = atoms(&w, &[(&[0.0], 0.1), (&[0.5], 1.0)]);
    let a = hand_built(w, &[(0, 0.1), (0, 0.1), (1, 0.1)], 0.1);
    match verify_appetite(&a, &mu, 1.0, 1e-9) {
        Err(Error::Violation {
            rule,
            atoms,
            elements,
        }) => {
            assert_eq!(rule, crate::error::AppetiteRule::OverFilled);
            assert_eq!(atoms, vec![0]);
            assert_eq!(elements, vec![0, 1]);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn verify_flags_starving_atom_with_leftover() {
    let w = Window::line(1.0).unwrap();
    let mu = atoms(&w, &[(&[0.0], 1.0)]);
    let a = hand_built(w, &[(0, 0.05), (0, 0.1)], 0.1);
    match verify_appetite(&a, &mu, 1.0, 1e-9) {
        Err(Error::Violation {
            rule,
            atoms,
            elements,
        }) => {
            assert_eq!(rule, crate::error::AppetiteRule::StarvingWithLeftover);
            assert_eq!(atoms, vec![0]);
            assert_eq!(elements, vec![0]);
        }
        other => panic!("{other:?}"),
    }
}
