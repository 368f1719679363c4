//! Diffuse-to-diffuse transport through an auxiliary point process.
//!
//! Source and destination mass are both allocated to the points of `chi`,
//! which pairs every source cell with a destination cell. Inside a pair the
//! mass is moved by monotone rearrangement along a one-dimensional order: the
//! bit-interleaving key of each location, taken relative to the cell's point.

use alloc::vec;
use alloc::vec::Vec;

use crate::allocation::{Allocation, Entry, Piece, Provenance};
use crate::error::{config, Error, Result};
use crate::measures::{
    elementize, lex_cmp, Atom, AtomMeasure, MassElement, Measure, Point, Window, MAX_DIM,
};
use crate::sampling::{poisson_atoms, rng_from_seed};
use crate::stable_alloc::{allocate_elements, StableParams};

/// How the auxiliary points were obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AuxSource {
    /// Atoms of the destination heavier than `c`.
    Threshold { c: f64 },
    /// An independent Poisson sample.
    Poisson { intensity: f64, seed: u64 },
    /// Points given by the caller.
    Explicit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliaryProcess {
    pub points: AtomMeasure,
    pub source: AuxSource,
    /// Points weighted by the destination mass of their Voronoi cells.
    pub voronoi_weighted: bool,
}

pub fn build_aux_threshold(eta_disc: &AtomMeasure, c: f64) -> Result<AuxiliaryProcess> {
    if !(c > 0.0) {
        return config(alloc::format!("threshold must be positive, got {c}"));
    }
    let pts: Vec<Point> = eta_disc
        .atoms()
        .iter()
        .filter(|a| a.mass > c)
        .map(|a| a.location)
        .collect();
    if pts.is_empty() {
        return Err(Error::EmptyChi);
    }
    Ok(AuxiliaryProcess {
        points: AtomMeasure::unit(&pts)?,
        source: AuxSource::Threshold { c },
        voronoi_weighted: false,
    })
}

pub fn build_aux_poisson(w: &Window, intensity: f64, seed: u64) -> Result<AuxiliaryProcess> {
    if !(intensity > 0.0 && intensity.is_finite()) {
        return config(alloc::format!(
            "intensity must be positive, got {intensity}"
        ));
    }
    let points = poisson_atoms(w, intensity, None, &mut rng_from_seed(seed))?;
    if points.is_empty() {
        return Err(Error::EmptyChi);
    }
    Ok(AuxiliaryProcess {
        points,
        source: AuxSource::Poisson { intensity, seed },
        voronoi_weighted: false,
    })
}

pub fn build_aux_explicit(points: &[Point]) -> Result<AuxiliaryProcess> {
    if points.is_empty() {
        return Err(Error::EmptyChi);
    }
    Ok(AuxiliaryProcess {
        points: AtomMeasure::unit(points)?,
        source: AuxSource::Explicit,
        voronoi_weighted: false,
    })
}

/// Index of the point nearest to `p`; ties go to the lexicographically
/// smaller displacement, then to the lower index.
pub fn nearest_point(w: &Window, points: &[Atom], p: &Point) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    let mut best_disp = [0.0; MAX_DIM];
    for (i, a) in points.iter().enumerate() {
        let disp = w.displacement(p, &a.location);
        let d: f64 = disp.iter().map(|x| x * x).sum();
        if d < best_d || (d == best_d && lex_cmp(&disp, &best_disp).is_lt()) {
            best = i;
            best_d = d;
            best_disp = disp;
        }
    }
    best
}

/// Bit-interleaving order on a window: the normalized coordinates are cut to
/// `bits` binary digits each and interleaved, first axis first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiMap {
    pub bits: u32,
    pub window: Window,
}

pub const DEFAULT_PHI_BITS: u32 = 30;

impl PhiMap {
    pub fn new(window: Window, bits: u32) -> Result<Self> {
        if bits == 0 || bits as usize * window.dim() > 64 {
            return config(alloc::format!(
                "{bits} bits per coordinate do not fit a 64-bit key in dimension {}",
                window.dim()
            ));
        }
        Ok(PhiMap { bits, window })
    }

    fn total_bits(&self) -> u32 {
        self.bits * self.window.dim() as u32
    }

    fn quantize(&self, c: f64, side: f64) -> u64 {
        let cells = libm::ldexp(1.0, self.bits as i32);
        let q = libm::floor(c / side * cells);
        if q <= 0.0 {
            0
        } else if q >= cells - 1.0 {
            (1u64 << (self.bits - 1) << 1).wrapping_sub(1)
        } else {
            q as u64
        }
    }

    /// Key of local coordinates in `[0, side)`.
    pub fn key_local(&self, local: &[f64; MAX_DIM]) -> u64 {
        let d = self.window.dim();
        let q: [u64; MAX_DIM] = core::array::from_fn(|k| {
            if k < d {
                self.quantize(local[k], self.window.side(k))
            } else {
                0
            }
        });
        if d == 1 {
            return q[0];
        }
        let mut key = 0u64;
        for b in (0..self.bits).rev() {
            for qk in q.iter().take(d) {
                key = (key << 1) | ((qk >> b) & 1);
            }
        }
        key
    }

    /// Key of a canonical point.
    pub fn key(&self, p: &Point) -> u64 {
        self.key_local(&p.raw())
    }

    pub fn key_inverse(&self, key: u64) -> Point {
        let d = self.window.dim();
        let mut q = [0u64; MAX_DIM];
        if d == 1 {
            q[0] = key;
        } else {
            for b in 0..self.bits {
                for k in 0..d {
                    let shift = b * d as u32 + (d - 1 - k) as u32;
                    q[k] |= ((key >> shift) & 1) << b;
                }
            }
        }
        let coords: [f64; MAX_DIM] = core::array::from_fn(|k| {
            if k < d {
                libm::ldexp(q[k] as f64, -(self.bits as i32)) * self.window.side(k)
            } else {
                0.0
            }
        });
        self.window.wrap_raw(coords)
    }

    /// The key as a real in `[0, 1)`; exact while the key has at most 53 bits.
    pub fn phi(&self, p: &Point) -> f64 {
        libm::ldexp(self.key(p) as f64, -(self.total_bits() as i32))
    }

    pub fn phi_inverse(&self, u: f64) -> Result<Point> {
        if !(0.0..1.0).contains(&u) {
            return Err(Error::Domain(alloc::format!("{u} is outside [0, 1)")));
        }
        let key = libm::floor(libm::ldexp(u, self.total_bits() as i32));
        Ok(self.key_inverse(key as u64))
    }
}

/// Source and destination cells of every auxiliary point.
#[derive(Debug, Clone)]
pub struct CellPairing {
    pub chi: AuxiliaryProcess,
    /// Source elements allocated to the auxiliary points.
    pub source: Allocation,
    /// Destination elements allocated (or Voronoi-assigned) to the points.
    pub destination: Allocation,
    pub source_stages: usize,
    pub destination_stages: usize,
    pub tie_breaks: usize,
}

impl CellPairing {
    pub fn source_cell_masses(&self) -> Vec<f64> {
        self.source.cell_masses(self.chi.points.len())
    }

    pub fn destination_cell_masses(&self) -> Vec<f64> {
        self.destination.cell_masses(self.chi.points.len())
    }
}

/// Whole-element assignment of `elements` to their nearest auxiliary point.
fn voronoi_assign(w: &Window, elements: &[MassElement], points: &AtomMeasure) -> Allocation {
    let entries = elements
        .iter()
        .map(|e| {
            let s = nearest_point(w, points.atoms(), &e.location);
            Entry {
                element: *e,
                offered: e.remaining,
                pieces: vec![Piece {
                    dest: s,
                    location: points.atoms()[s].location,
                    mass: e.remaining,
                    provenance: Provenance::Diff,
                }],
            }
        })
        .collect();
    Allocation::new(*w, entries)
}

/// Reweights `chi` by the destination mass of each point's Voronoi cell.
pub fn voronoi_weighted(
    w: &Window,
    chi: &AuxiliaryProcess,
    eta_elements: &[MassElement],
) -> Result<AuxiliaryProcess> {
    let cells = voronoi_assign(w, eta_elements, &chi.points).cell_masses(chi.points.len());
    let atoms: Vec<Atom> = chi
        .points
        .atoms()
        .iter()
        .zip(&cells)
        .filter(|(_, &m)| m > 0.0)
        .map(|(a, &m)| Atom {
            location: a.location,
            mass: m,
        })
        .collect();
    if atoms.is_empty() {
        return Err(Error::EmptyChi);
    }
    Ok(AuxiliaryProcess {
        points: AtomMeasure::new(atoms)?,
        source: chi.source,
        voronoi_weighted: true,
    })
}

/// Allocates both pools to the points of `chi`, each rescaled to the mass of `chi`.
pub fn pair_cells(
    w: &Window,
    xi_elements: &[MassElement],
    eta_elements: &[MassElement],
    chi: &AuxiliaryProcess,
    params: &StableParams,
) -> Result<CellPairing> {
    if chi.points.is_empty() {
        return Err(Error::EmptyChi);
    }
    let chi_total = chi.points.total_mass();
    let xi_total: f64 = xi_elements.iter().map(|e| e.remaining).sum();
    let eta_total: f64 = eta_elements.iter().map(|e| e.remaining).sum();
    if !(xi_total > 0.0 && eta_total > 0.0) {
        return config("quantile transport needs positive source and destination mass");
    }
    let src = allocate_elements(w, xi_elements, &chi.points, xi_total / chi_total, params)?;
    let (destination, destination_stages, dst_ties) = if chi.voronoi_weighted {
        (voronoi_assign(w, eta_elements, &chi.points), 0, 0)
    } else {
        let dst = allocate_elements(w, eta_elements, &chi.points, eta_total / chi_total, params)?;
        let stages = dst.converged_stage();
        (dst.allocation, stages, dst.tie_breaks)
    };
    let (source_stages, src_ties) = (src.converged_stage(), src.tie_breaks);
    let mut source = src.allocation;
    for e in &mut source.entries {
        for p in &mut e.pieces {
            p.provenance = Provenance::Diff;
        }
    }
    Ok(CellPairing {
        chi: chi.clone(),
        source,
        destination,
        source_stages,
        destination_stages,
        tie_breaks: src_ties + dst_ties,
    })
}

/// One moved piece of source mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransportRow {
    pub element: usize,
    pub source: Point,
    pub mass: f64,
    pub chi: usize,
    /// Index of the destination element.
    pub dest_element: usize,
    pub dest: Point,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellReport {
    pub chi: usize,
    pub source_mass: f64,
    pub destination_mass: f64,
    /// Kolmogorov distance of the mid-mass levels from uniform.
    pub uniformity: f64,
}

#[derive(Debug, Clone)]
pub struct QuantileOutcome {
    pub allocation: Allocation,
    pub pairing: CellPairing,
    pub rows: Vec<TransportRow>,
    pub cells: Vec<CellReport>,
    /// Single transport point of each source element (from its largest piece).
    pub points: Vec<Option<Point>>,
}

impl QuantileOutcome {
    pub fn transport(&self, element: usize) -> Option<Point> {
        self.points.get(element).copied().flatten()
    }
}

#[derive(Debug, Clone, Copy)]
struct Slice {
    key: u64,
    element: usize,
    mass: f64,
}

fn cell_slices(a: &Allocation, chi: &AtomMeasure, phi: &PhiMap) -> Vec<Vec<Slice>> {
    let w = &a.window;
    let mut cells: Vec<Vec<Slice>> = vec![Vec::new(); chi.len()];
    for (i, e) in a.entries.iter().enumerate() {
        for p in &e.pieces {
            if p.mass <= 0.0 {
                continue;
            }
            let s = &chi.atoms()[p.dest].location;
            cells[p.dest].push(Slice {
                key: phi.key_local(&w.local(s, &e.element.location)),
                element: i,
                mass: p.mass,
            });
        }
    }
    for c in &mut cells {
        c.sort_by(|x, y| x.key.cmp(&y.key).then(x.element.cmp(&y.element)));
    }
    cells
}

/// Moves every source cell onto its destination cell by monotone
/// rearrangement along `phi`.
pub fn transport(pairing: CellPairing, phi: &PhiMap) -> Result<QuantileOutcome> {
    let chi = &pairing.chi.points;
    let src_cells = cell_slices(&pairing.source, chi, phi);
    let dst_cells = cell_slices(&pairing.destination, chi, phi);
    let src_total = pairing.source.offered_mass();
    let dst_total = pairing.destination.offered_mass();
    let n_src = pairing.source.entries.len();
    let mut pieces: Vec<Vec<Piece>> = vec![Vec::new(); n_src];
    let mut rows = Vec::new();
    let mut cells = Vec::with_capacity(chi.len());
    // (piece mass, point) of the largest piece seen per source element
    let mut best: Vec<(f64, Option<Point>)> = vec![(0.0, None); n_src];
    for (s, (src, dst)) in src_cells.iter().zip(&dst_cells).enumerate() {
        let a: f64 = src.iter().map(|x| x.mass).sum();
        let b: f64 = dst.iter().map(|x| x.mass).sum();
        // both cells should carry the same share of their totals
        let (ua, ub) = (a / src_total, b / dst_total);
        if (ua - ub).abs() > 1e-8 * ua.max(ub) + 1e-12 {
            return Err(Error::Pairing {
                cell: s,
                source: a,
                destination: b,
            });
        }
        if src.is_empty() || dst.is_empty() {
            cells.push(CellReport {
                chi: s,
                source_mass: a,
                destination_mass: b,
                uniformity: 0.0,
            });
            continue;
        }
        let dest_levels: Vec<f64> = dst
            .iter()
            .scan(0.0, |acc, x| {
                *acc += x.mass;
                Some(*acc / b)
            })
            .collect();
        let dest_point = |j: usize| pairing.destination.entries[dst[j].element].element.location;
        let mut j = 0;
        let mut level = 0.0;
        let mut uniformity = 0.0f64;
        for (i, x) in src.iter().enumerate() {
            let lo = level;
            let hi = if i + 1 == src.len() {
                1.0
            } else {
                level + x.mass / a
            };
            // mid-mass level of this slice decides its single transport point
            let mid = 0.5 * (lo + hi);
            uniformity = uniformity.max((mid - lo).max(hi - mid));
            let jm = dest_levels.partition_point(|&v| v < mid).min(dst.len() - 1);
            if x.mass > best[x.element].0 {
                best[x.element] = (x.mass, Some(dest_point(jm)));
            }
            // split [lo, hi) over the destination level intervals
            let mut from = lo;
            while from < hi {
                let to = if j + 1 == dst.len() {
                    hi
                } else {
                    hi.min(dest_levels[j])
                };
                if to > from {
                    let m = (to - from) * a;
                    let location = dest_point(j);
                    pieces[x.element].push(Piece {
                        dest: dst[j].element,
                        location,
                        mass: m,
                        provenance: Provenance::Diff,
                    });
                    rows.push(TransportRow {
                        element: pairing.source.entries[x.element].element.id,
                        source: pairing.source.entries[x.element].element.location,
                        mass: m,
                        chi: s,
                        dest_element: pairing.destination.entries[dst[j].element].element.id,
                        dest: location,
                    });
                }
                from = to;
                if from < hi {
                    j += 1;
                }
            }
            level = hi;
        }
        cells.push(CellReport {
            chi: s,
            source_mass: a,
            destination_mass: b,
            uniformity,
        });
    }
    let entries = pairing
        .source
        .entries
        .iter()
        .zip(pieces)
        .map(|(e, p)| Entry {
            element: e.element,
            offered: e.offered,
            pieces: p,
        })
        .collect();
    Ok(QuantileOutcome {
        allocation: Allocation::new(pairing.source.window, entries),
        points: best.into_iter().map(|b| b.1).collect(),
        rows,
        cells,
        pairing,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileParams {
    pub phi_bits: u32,
    pub stable: StableParams,
}

impl Default for QuantileParams {
    fn default() -> Self {
        QuantileParams {
            phi_bits: DEFAULT_PHI_BITS,
            stable: StableParams::default(),
        }
    }
}

/// Pairs and transports two element pools.
pub fn transport_elements(
    w: &Window,
    xi_elements: &[MassElement],
    eta_elements: &[MassElement],
    chi: &AuxiliaryProcess,
    params: &QuantileParams,
) -> Result<QuantileOutcome> {
    let phi = PhiMap::new(*w, params.phi_bits)?;
    let pairing = pair_cells(w, xi_elements, eta_elements, chi, &params.stable)?;
    transport(pairing, &phi)
}

/// Elementizes two diffuse measures and transports one onto the other.
pub fn run_quantile(
    xi: &Measure,
    eta: &Measure,
    chi: &AuxiliaryProcess,
    resolution: f64,
    params: &QuantileParams,
) -> Result<QuantileOutcome> {
    if !xi.is_diffuse() || !eta.is_diffuse() {
        return config("quantile transport runs between diffuse measures");
    }
    if xi.window() != eta.window() {
        return config("source and destination live on different windows");
    }
    let xs = elementize(xi, resolution)?;
    let ys = elementize(eta, resolution)?;
    transport_elements(xi.window(), &xs, &ys, chi, params)
}
