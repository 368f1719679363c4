use alloc::vec::Vec;

use crate::allocation::Allocation;
use crate::error::{AppetiteRule, Error, Result};
use crate::measures::AtomMeasure;

/// Outcome of a successful appetite check.
#[derive(Debug, Clone, PartialEq)]
pub struct AppetiteReport {
    pub cell_masses: Vec<f64>,
    pub unallocated_mass: f64,
    pub saturated_atoms: usize,
    pub max_overfill: f64,
}

/// Checks the appetite bound (no atom receives more than `alpha` times its
/// mass) and the no-waste rule (unallocated mass and a hungry atom never
/// coexist). `tol` is an absolute mass tolerance.
pub fn verify_appetite(
    a: &Allocation,
    mu: &AtomMeasure,
    alpha: f64,
    tol: f64,
) -> Result<AppetiteReport> {
    let atoms = mu.atoms();
    let cells = a.cell_masses(atoms.len());
    let over: Vec<usize> = (0..atoms.len())
        .filter(|&j| cells[j] > alpha * atoms[j].mass + tol)
        .collect();
    if !over.is_empty() {
        let elements = a
            .entries
            .iter()
            .filter(|e| e.pieces.iter().any(|p| over.contains(&p.dest)))
            .map(|e| e.element.id)
            .collect();
        return Err(Error::Violation {
            rule: AppetiteRule::OverFilled,
            atoms: over,
            elements,
        });
    }
    let hungry: Vec<usize> = (0..atoms.len())
        .filter(|&j| cells[j] < alpha * atoms[j].mass - tol)
        .collect();
    let unallocated = a.unallocated_mass();
    if unallocated > tol && !hungry.is_empty() {
        let elements = a
            .entries
            .iter()
            .filter(|e| e.unallocated() > 0.0)
            .map(|e| e.element.id)
            .collect();
        return Err(Error::Violation {
            rule: AppetiteRule::StarvingWithLeftover,
            atoms: hungry,
            elements,
        });
    }
    let max_overfill = (0..atoms.len())
        .map(|j| cells[j] - alpha * atoms[j].mass)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(AppetiteReport {
        saturated_atoms: atoms.len() - hungry.len(),
        cell_masses: cells,
        unallocated_mass: unallocated,
        max_overfill,
    })
}
