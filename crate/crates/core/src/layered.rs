//! Discrete destinations handled one mass layer at a time.
//!
//! Layer `n` holds the atoms whose mass lies in `[1/n, 1/(n-1))`. Layers run
//! in increasing `n`, each as a stable allocation against the source mass the
//! earlier layers left over.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::allocation::{Allocation, Entry};
use crate::error::{config, Result};
use crate::measures::{elementize, Atom, AtomMeasure, MassElement, Measure, Window};
use crate::stable_alloc::{allocate_elements, StableParams};

pub const DEFAULT_N_MAX: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// Layer number, starting at 1.
    pub n: usize,
    pub atoms: AtomMeasure,
    /// Index of each layer atom in the decomposed measure.
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerDecomposition {
    /// Layers `1..=n_max`, empty ones included.
    pub layers: Vec<Layer>,
    pub residual_mass: f64,
    pub residual_atoms: Vec<usize>,
}

/// Layer number of an atom of mass `m`, or `None` below `1/n_max`.
pub fn layer_of(m: f64, n_max: usize) -> Option<usize> {
    if m >= 1.0 {
        return Some(1);
    }
    let mut n = libm::ceil(1.0 / m) as usize;
    while 1.0 / (n as f64) > m {
        n += 1;
    }
    while n > 1 && m >= 1.0 / ((n - 1) as f64) {
        n -= 1;
    }
    (n <= n_max).then_some(n)
}

pub fn decompose_layers(eta: &AtomMeasure, n_max: usize) -> LayerDecomposition {
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); n_max];
    let mut residual_atoms = Vec::new();
    for (i, a) in eta.atoms().iter().enumerate() {
        match layer_of(a.mass, n_max) {
            Some(n) => buckets[n - 1].push(i),
            None => residual_atoms.push(i),
        }
    }
    let layers = buckets
        .into_iter()
        .enumerate()
        .map(|(k, indices)| {
            let atoms: Vec<Atom> = indices.iter().map(|&i| eta.atoms()[i]).collect();
            Layer {
                n: k + 1,
                atoms: AtomMeasure::new(atoms).expect("atoms of a valid measure"),
                indices,
            }
        })
        .collect();
    LayerDecomposition {
        layers,
        residual_mass: residual_atoms.iter().map(|&i| eta.atoms()[i].mass).sum(),
        residual_atoms,
    }
}

/// Part of an element's mass used by one layer, as fractions of its mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Restriction {
    pub element: usize,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    pub n: usize,
    pub atoms: usize,
    pub allocated_mass: f64,
    /// Source mass still unused after this layer.
    pub remaining_pool_mass: f64,
    pub stages: usize,
    pub tie_breaks: usize,
    /// The source mass this layer took.
    pub restriction: Vec<Restriction>,
}

#[derive(Debug, Clone)]
pub struct LayeredOutcome {
    pub allocation: Allocation,
    pub decomposition: LayerDecomposition,
    pub trace: Vec<LayerTrace>,
    pub warnings: Vec<String>,
}

impl LayeredOutcome {
    /// True when no element fraction is used by two layers.
    pub fn restrictions_disjoint(&self) -> bool {
        let mut spans: Vec<(usize, f64, f64)> = self
            .trace
            .iter()
            .flat_map(|t| t.restriction.iter().map(|r| (r.element, r.lo, r.hi)))
            .collect();
        spans.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        spans
            .windows(2)
            .all(|p| p[0].0 != p[1].0 || p[0].2 <= p[1].1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayeredParams {
    pub n_max: usize,
    pub stable: StableParams,
}

impl Default for LayeredParams {
    fn default() -> Self {
        LayeredParams {
            n_max: DEFAULT_N_MAX,
            stable: StableParams::default(),
        }
    }
}

/// Layered allocation of the pool `elements` (their `remaining` mass) to `eta`.
/// Destination indices of the result refer to atoms of `eta`.
pub fn allocate_layered(
    w: &Window,
    elements: &[MassElement],
    eta: &AtomMeasure,
    params: &LayeredParams,
) -> Result<LayeredOutcome> {
    if params.n_max == 0 {
        return config("n_max must be at least 1");
    }
    let decomposition = decompose_layers(eta, params.n_max);
    let mut pool: Vec<MassElement> = elements.to_vec();
    let mut entries: Vec<Entry> = elements
        .iter()
        .map(|e| Entry {
            element: *e,
            offered: e.remaining,
            pieces: Vec::new(),
        })
        .collect();
    let mut trace = Vec::new();
    for layer in decomposition.layers.iter().filter(|l| !l.atoms.is_empty()) {
        let out = allocate_elements(w, &pool, &layer.atoms, 1.0, &params.stable)?;
        let mut restriction = Vec::new();
        let mut allocated_mass = 0.0;
        for (k, entry) in out.allocation.entries.iter().enumerate() {
            if entry.pieces.is_empty() {
                continue;
            }
            let e = &mut pool[k];
            let taken = entry.allocated().min(e.remaining);
            let lo = (e.mass - e.remaining) / e.mass;
            e.remaining = if taken >= e.remaining {
                0.0
            } else {
                e.remaining - taken
            };
            let hi = (e.mass - e.remaining) / e.mass;
            restriction.push(Restriction {
                element: e.id,
                lo,
                hi,
            });
            allocated_mass += taken;
            for p in &entry.pieces {
                let mut piece = *p;
                piece.dest = layer.indices[p.dest];
                entries[k].pieces.push(piece);
            }
        }
        trace.push(LayerTrace {
            n: layer.n,
            atoms: layer.atoms.len(),
            allocated_mass,
            remaining_pool_mass: pool.iter().map(|e| e.remaining).sum(),
            stages: out.converged_stage(),
            tie_breaks: out.tie_breaks,
            restriction,
        });
    }
    let mut warnings = Vec::new();
    if decomposition.residual_mass > 0.0 {
        warnings.push(alloc::format!(
            "{} atoms of total mass {} lie below 1/{} and stay unallocated",
            decomposition.residual_atoms.len(),
            decomposition.residual_mass,
            params.n_max
        ));
    }
    Ok(LayeredOutcome {
        allocation: Allocation::new(*w, entries),
        decomposition,
        trace,
        warnings,
    })
}

/// Elementizes the diffuse `xi` and allocates it layer by layer to `eta`.
pub fn run_layered(
    xi: &Measure,
    eta: &AtomMeasure,
    resolution: f64,
    params: &LayeredParams,
) -> Result<LayeredOutcome> {
    if !xi.is_diffuse() {
        return config("the source of a layered allocation must be diffuse");
    }
    let (source, target) = (xi.total_mass(), eta.total_mass());
    if source < target * (1.0 - 1e-9) {
        return config(alloc::format!(
            "source mass {source} is smaller than destination mass {target}"
        ));
    }
    let elements = elementize(xi, resolution)?;
    allocate_layered(xi.window(), &elements, eta, params)
}
