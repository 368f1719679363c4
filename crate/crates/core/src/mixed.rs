//! General destinations: atoms by layers, the diffuse rest by quantile
//! transport of the leftover source, plus the routing between pipelines and
//! the product construction for line-supported destinations.

use alloc::string::String;
use alloc::vec::Vec;

use crate::allocation::{Allocation, Entry, Piece, Provenance};
use crate::error::{config, Error, Result};
use crate::layered::{allocate_layered, LayeredOutcome, LayeredParams};
use crate::measures::{elementize, AtomMeasure, MassElement, Measure, Point, Window};
use crate::quantile::{
    build_aux_explicit, build_aux_poisson, build_aux_threshold, transport_elements,
    voronoi_weighted, AuxiliaryProcess, QuantileOutcome, QuantileParams,
};
use crate::stable_alloc::{allocate_elements, locate, StableOutcome, StableParams};

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDestination {
    pub eta_disc: AtomMeasure,
    pub eta_diff: Measure,
}

pub fn split_measure(eta: &Measure) -> SplitDestination {
    SplitDestination {
        eta_disc: eta.discrete_part(),
        eta_diff: eta.diffuse_part(),
    }
}

/// Where the auxiliary points come from.
#[derive(Debug, Clone, PartialEq)]
pub enum ChiConfig {
    None,
    /// Destination atoms heavier than `c`; `None` means half the largest atom.
    Threshold {
        c: Option<f64>,
    },
    Poisson {
        intensity: f64,
        seed: u64,
    },
    Explicit(Vec<Point>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChiSpec {
    pub config: ChiConfig,
    /// Weight the points by the destination mass of their Voronoi cells.
    pub voronoi: bool,
}

impl Default for ChiSpec {
    fn default() -> Self {
        ChiSpec {
            config: ChiConfig::None,
            voronoi: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pipeline {
    Layered,
    Mixed,
    Quantile,
}

impl Pipeline {
    pub fn as_str(&self) -> &'static str {
        match self {
            Pipeline::Layered => "layered",
            Pipeline::Mixed => "mixed",
            Pipeline::Quantile => "quantile",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MixedParams {
    pub layered: LayeredParams,
    pub quantile: QuantileParams,
}

/// Result of any pipeline. Destination indices below `eta_disc.len()` are
/// atoms; `eta_disc.len() + k` is element `k` of the elementized diffuse part.
#[derive(Debug, Clone)]
pub struct CombinedAllocation {
    pub pipeline: Pipeline,
    pub allocation: Allocation,
    pub split: SplitDestination,
    pub layered: Option<LayeredOutcome>,
    pub quantile: Option<QuantileOutcome>,
    /// Elements of the diffuse destination part.
    pub eta_elements: Vec<MassElement>,
    /// Source elements that sent some mass to an atom.
    pub disc_elements: Vec<usize>,
    /// Leftover source mass minus diffuse destination mass after the atoms.
    pub diffuse_discrepancy: f64,
    pub warnings: Vec<String>,
}

impl CombinedAllocation {
    /// Every element's DISC and DIFF shares fill disjoint parts of its mass.
    pub fn partition_is_exact(&self) -> bool {
        self.allocation.entries.iter().all(|e| {
            let disc: f64 = e
                .pieces
                .iter()
                .filter(|p| p.provenance == Provenance::Disc)
                .map(|p| p.mass)
                .sum();
            let diff: f64 = e
                .pieces
                .iter()
                .filter(|p| p.provenance == Provenance::Diff)
                .map(|p| p.mass)
                .sum();
            disc + diff <= e.offered * (1.0 + 1e-9) + 1e-15
                && e.pieces.iter().all(|p| {
                    (p.provenance == Provenance::Disc) == (p.dest < self.split.eta_disc.len())
                })
        })
    }

    pub fn atom_count(&self) -> usize {
        self.split.eta_disc.len()
    }
}

fn build_chi(
    spec: &ChiSpec,
    w: &Window,
    eta_disc: &AtomMeasure,
    eta_elements: &[MassElement],
) -> Result<AuxiliaryProcess> {
    let base = match &spec.config {
        ChiConfig::None => return Err(Error::NoAuxChi),
        ChiConfig::Threshold { c } => {
            if eta_disc.is_empty() {
                return Err(Error::NoAuxChi);
            }
            build_aux_threshold(eta_disc, c.unwrap_or(0.5 * eta_disc.max_mass()))?
        }
        ChiConfig::Poisson { intensity, seed } => build_aux_poisson(w, *intensity, *seed)?,
        ChiConfig::Explicit(points) => build_aux_explicit(points)?,
    };
    if spec.voronoi {
        voronoi_weighted(w, &base, eta_elements)
    } else {
        Ok(base)
    }
}

fn check_totals(xi: &Measure, eta: &Measure) -> Result<()> {
    if !xi.is_diffuse() {
        return config("the source must be diffuse");
    }
    if xi.window() != eta.window() {
        return config("source and destination live on different windows");
    }
    let (a, b) = (xi.total_mass(), eta.total_mass());
    if (a - b).abs() > 1e-9 * a.max(b) {
        return config(alloc::format!(
            "source mass {a} and destination mass {b} must be equal"
        ));
    }
    Ok(())
}

/// Atoms first by layers, then the leftover source onto the diffuse part.
pub fn run_mixed(
    xi: &Measure,
    eta: &Measure,
    chi: &ChiSpec,
    resolution: f64,
    params: &MixedParams,
) -> Result<CombinedAllocation> {
    check_totals(xi, eta)?;
    let split = split_measure(eta);
    if split.eta_disc.is_empty() {
        return config("the destination has no atoms; use the quantile pipeline");
    }
    let w = xi.window();
    let xs = elementize(xi, resolution)?;
    let layered = allocate_layered(w, &xs, &split.eta_disc, &params.layered)?;
    let mut warnings = layered.warnings.clone();
    let n_atoms = split.eta_disc.len();

    // the pool the atoms left over
    let pool: Vec<MassElement> = layered
        .allocation
        .entries
        .iter()
        .map(|e| {
            let mut el = e.element;
            el.remaining = (e.offered - e.allocated()).max(0.0);
            el
        })
        .collect();
    let eta_elements = if split.eta_diff.total_mass() > 0.0 {
        elementize(&split.eta_diff, resolution)?
    } else {
        Vec::new()
    };
    let pool_mass: f64 = pool.iter().map(|e| e.remaining).sum();
    let diff_mass = split.eta_diff.total_mass();
    let diffuse_discrepancy = pool_mass - diff_mass;

    let mut entries: Vec<Entry> = layered.allocation.entries.clone();
    let quantile = if eta_elements.is_empty() {
        None
    } else {
        let chi_spec = match chi.config {
            ChiConfig::None => ChiSpec {
                config: ChiConfig::Threshold { c: None },
                voronoi: chi.voronoi,
            },
            _ => chi.clone(),
        };
        let aux = build_chi(&chi_spec, w, &split.eta_disc, &eta_elements)?;
        let q = transport_elements(w, &pool, &eta_elements, &aux, &params.quantile)?;
        for (entry, qe) in entries.iter_mut().zip(&q.allocation.entries) {
            entry.pieces.extend(qe.pieces.iter().map(|p| Piece {
                dest: n_atoms + p.dest,
                ..*p
            }));
        }
        Some(q)
    };
    if diffuse_discrepancy.abs() > 1e-9 * xi.total_mass() {
        warnings.push(alloc::format!(
            "leftover source mass {pool_mass} differs from diffuse destination mass {diff_mass}"
        ));
    }
    let disc_elements = entries
        .iter()
        .filter(|e| e.pieces.iter().any(|p| p.provenance == Provenance::Disc))
        .map(|e| e.element.id)
        .collect();
    Ok(CombinedAllocation {
        pipeline: Pipeline::Mixed,
        allocation: Allocation::new(*w, entries),
        split,
        layered: Some(layered),
        quantile,
        eta_elements,
        disc_elements,
        diffuse_discrepancy,
        warnings,
    })
}

/// Routes to the layered, mixed or quantile pipeline by the type of `eta`.
pub fn dispatch(
    xi: &Measure,
    eta: &Measure,
    chi: &ChiSpec,
    resolution: f64,
    params: &MixedParams,
) -> Result<CombinedAllocation> {
    check_totals(xi, eta)?;
    let split = split_measure(eta);
    let w = xi.window();
    if split.eta_disc.is_empty() {
        if matches!(chi.config, ChiConfig::None | ChiConfig::Threshold { .. }) {
            return Err(Error::NoAuxChi);
        }
        let xs = elementize(xi, resolution)?;
        let ys = elementize(&split.eta_diff, resolution)?;
        let aux = build_chi(chi, w, &split.eta_disc, &ys)?;
        let q = transport_elements(w, &xs, &ys, &aux, &params.quantile)?;
        let mut warnings = Vec::new();
        if q.allocation.unallocated_mass() > 1e-9 * xi.total_mass() {
            warnings.push(alloc::format!(
                "{} source mass left unallocated",
                q.allocation.unallocated_mass()
            ));
        }
        return Ok(CombinedAllocation {
            pipeline: Pipeline::Quantile,
            allocation: q.allocation.clone(),
            split,
            layered: None,
            quantile: Some(q),
            eta_elements: ys,
            disc_elements: Vec::new(),
            diffuse_discrepancy: 0.0,
            warnings,
        });
    }
    if split.eta_diff.total_mass() == 0.0 {
        let xs = elementize(xi, resolution)?;
        let l = allocate_layered(w, &xs, &split.eta_disc, &params.layered)?;
        let disc_elements = l
            .allocation
            .entries
            .iter()
            .filter(|e| !e.pieces.is_empty())
            .map(|e| e.element.id)
            .collect();
        return Ok(CombinedAllocation {
            pipeline: Pipeline::Layered,
            allocation: l.allocation.clone(),
            split,
            warnings: l.warnings.clone(),
            layered: Some(l),
            quantile: None,
            eta_elements: Vec::new(),
            disc_elements,
            diffuse_discrepancy: 0.0,
        });
    }
    run_mixed(xi, eta, chi, resolution, params)
}

/// `(x, y) -> (x, tau1(y))`, with `tau1` the stable allocation of Lebesgue
/// measure on the second axis to the points `n` of that axis.
#[derive(Debug, Clone)]
pub struct ProductAllocation {
    pub window: Window,
    pub axis: Window,
    pub points: AtomMeasure,
    pub elements: Vec<MassElement>,
    pub resolution: f64,
    pub tau1: StableOutcome,
}

impl ProductAllocation {
    /// Image of a point; the first coordinate is kept exactly.
    pub fn map(&self, p: &Point) -> Point {
        let y = p.y();
        let h = self.axis.side(0) / self.elements.len() as f64;
        let k = (libm::floor(y / h) as usize).min(self.elements.len() - 1);
        let u = ((y - k as f64 * h) / h).clamp(0.0, 1.0 - 1e-15);
        let dest = locate(&self.tau1.allocation, k, u)
            .unwrap_or(self.tau1.allocation.entries[k].element.location);
        self.window.wrap_raw([p.x(), dest.x()])
    }

    /// The product allocation of an elementized two-dimensional Lebesgue
    /// measure with the given density.
    pub fn allocation(&self, density: f64) -> Result<Allocation> {
        let h = self.axis.side(0) / self.elements.len() as f64;
        let cols = libm::ceil(self.window.side(0) / self.resolution - 1e-9) as usize;
        let width = self.window.side(0) / cols as f64;
        // cell rows must match the axis elements for an exact product
        let rows = self.elements.len();
        let mut entries = Vec::with_capacity(rows * cols);
        for j in 0..rows {
            let axis_entry = &self.tau1.allocation.entries[j];
            for i in 0..cols {
                let id = j * cols + i;
                let x = (i as f64 + 0.5) * width;
                let loc = self.window.point(&[x, (j as f64 + 0.5) * h])?;
                let mass = density * width * h;
                let pieces = axis_entry
                    .pieces
                    .iter()
                    .map(|p| Piece {
                        dest: p.dest,
                        location: self.window.wrap_raw([x, p.location.x()]),
                        mass: mass * p.mass / axis_entry.offered,
                        provenance: Provenance::Disc,
                    })
                    .collect();
                entries.push(Entry {
                    element: MassElement::new(id, loc, mass),
                    offered: mass,
                    pieces,
                });
            }
        }
        Ok(Allocation::new(self.window, entries))
    }
}

pub fn product_allocation(
    n: &AtomMeasure,
    window: &Window,
    resolution: f64,
    params: &StableParams,
) -> Result<ProductAllocation> {
    if window.dim() != 2 {
        return config("the product allocation needs a two-dimensional window");
    }
    if n.is_empty() {
        return config("the product allocation needs at least one point");
    }
    let axis = Window::line(window.side(1))?;
    if n.atoms().iter().any(|a| a.location.dim() != 1) {
        return config("product points live on the second axis (one coordinate each)");
    }
    let lebesgue = Measure::lebesgue(axis, 1.0)?;
    let elements = elementize(&lebesgue, resolution)?;
    let alpha = axis.side(0) / n.total_mass();
    let tau1 = allocate_elements(&axis, &elements, n, alpha, params)?;
    Ok(ProductAllocation {
        window: *window,
        axis,
        points: n.clone(),
        elements,
        resolution,
        tau1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{Atom, Component, GridDensity};
    use alloc::vec;

    fn atom_at(w: &Window, c: &[f64], mass: f64) -> Component {
        Component::Atoms(
            AtomMeasure::new(vec![Atom {
                location: w.point(c).unwrap(),
                mass,
            }])
            .unwrap(),
        )
    }

    #[test]
    fn split_examples() {
        let w = Window::plane(2.0, 1.0).unwrap();
        let atoms = Measure::new(w, vec![atom_at(&w, &[0.5, 0.5], 1.0)]).unwrap();
        let s = split_measure(&atoms);
        assert_eq!(s.eta_disc.total_mass(), 1.0);
        assert_eq!(s.eta_diff.total_mass(), 0.0);
        let dens = Measure::lebesgue(w, 1.0).unwrap();
        let s = split_measure(&dens);
        assert!(s.eta_disc.is_empty());
        assert_eq!(s.eta_diff, dens);
        let both = Measure::new(
            w,
            vec![
                atom_at(&w, &[0.5, 0.5], 1.0),
                Component::Grid(GridDensity::uniform(&w, 0.5).unwrap()),
            ],
        )
        .unwrap();
        let s = split_measure(&both);
        assert_eq!(
            s.eta_disc.total_mass() + s.eta_diff.total_mass(),
            both.total_mass()
        );
    }

    #[test]
    fn routing() {
        let w = Window::plane(2.0, 1.0).unwrap();
        let xi = Measure::lebesgue(w, 1.0).unwrap();
        let disc = Measure::new(w, vec![atom_at(&w, &[0.5, 0.5], 2.0)]).unwrap();
        let out = dispatch(
            &xi,
            &disc,
            &ChiSpec::default(),
            0.1,
            &MixedParams::default(),
        )
        .unwrap();
        assert_eq!(out.pipeline, Pipeline::Layered);
        assert!((out.allocation.cell_masses(1)[0] - 2.0).abs() < 1e-9);

        let diff = Measure::lebesgue(w, 1.0).unwrap();
        for chi in [ChiConfig::None, ChiConfig::Threshold { c: None }] {
            let spec = ChiSpec {
                config: chi,
                voronoi: false,
            };
            assert_eq!(
                dispatch(&xi, &diff, &spec, 0.1, &MixedParams::default()).unwrap_err(),
                Error::NoAuxChi
            );
        }
        let spec = ChiSpec {
            config: ChiConfig::Poisson {
                intensity: 2.0,
                seed: 4,
            },
            voronoi: false,
        };
        let out = dispatch(&xi, &diff, &spec, 0.1, &MixedParams::default()).unwrap();
        assert_eq!(out.pipeline, Pipeline::Quantile);

        let mixed = Measure::new(
            w,
            vec![
                atom_at(&w, &[0.5, 0.5], 1.0),
                Component::Grid(GridDensity::uniform(&w, 0.5).unwrap()),
            ],
        )
        .unwrap();
        let out = dispatch(
            &xi,
            &mixed,
            &ChiSpec::default(),
            0.1,
            &MixedParams::default(),
        )
        .unwrap();
        assert_eq!(out.pipeline, Pipeline::Mixed);
        assert!(out.partition_is_exact());
    }

    #[test]
    fn unequal_totals_are_rejected() {
        let w = Window::plane(2.0, 1.0).unwrap();
        let xi = Measure::lebesgue(w, 1.0).unwrap();
        let eta = Measure::new(w, vec![atom_at(&w, &[0.5, 0.5], 1.0)]).unwrap();
        assert!(matches!(
            dispatch(&xi, &eta, &ChiSpec::default(), 0.1, &MixedParams::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn product_with_one_point_flattens_onto_it() {
        let w = Window::plane(2.0, 1.0).unwrap();
        let axis = Window::line(1.0).unwrap();
        let n = AtomMeasure::unit(&[axis.point(&[0.3]).unwrap()]).unwrap();
        let prod = product_allocation(&n, &w, 0.05, &StableParams::default()).unwrap();
        for (x, y) in [(0.1, 0.9), (1.7, 0.31), (0.0, 0.0)] {
            let img = prod.map(&w.point(&[x, y]).unwrap());
            assert_eq!(img.x(), x);
            assert_eq!(img.y(), 0.3);
        }
    }

    #[test]
    fn product_with_two_points_gives_equal_strips() {
        let w = Window::plane(1.0, 1.0).unwrap();
        let axis = Window::line(1.0).unwrap();
        let n = AtomMeasure::unit(&[axis.point(&[0.25]).unwrap(), axis.point(&[0.75]).unwrap()])
            .unwrap();
        let prod = product_allocation(&n, &w, 0.05, &StableParams::default()).unwrap();
        let a = prod.allocation(1.0).unwrap();
        let cells = a.cell_masses(2);
        assert!((cells[0] - 0.5).abs() < 1e-9 && (cells[1] - 0.5).abs() < 1e-9);
        assert_eq!(prod.map(&w.point(&[0.4, 0.1]).unwrap()).y(), 0.25);
        assert_eq!(prod.map(&w.point(&[0.4, 0.6]).unwrap()).y(), 0.75);
    }
}
