//! Point-optimal stable allocation with appetite.
//!
//! Every atom claims the nearest not-yet-rejecting mass until it has gathered
//! `alpha` times its own mass; equidistant mass is taken in cap-recursion
//! order and the marginal element is split. Every element then keeps its
//! nearest claimer and rejects the others, and the claims are redone against
//! the grown rejection sets until nothing changes.
//!
//! Elements are divisible. A claim on an element always covers a prefix
//! `[0, f]` of its (pool) mass; because every part of an element sees the
//! same distances, the portion `(f_prev_max, f]` goes to the claimer whose
//! prefix first reaches it, and every rejection set is again a prefix.

mod appetite;
mod order;

use alloc::vec;
use alloc::vec::Vec;

pub use appetite::{verify_appetite, AppetiteReport};
pub(crate) use order::sort_grouped;
use order::ProximityOrder;

use crate::allocation::{Allocation, Entry, Piece, Provenance};
use crate::error::{config, Error, Result};
use crate::measures::{
    default_tie_tolerance, elementize, lex_cmp, Atom, AtomMeasure, MassElement, Measure, Point,
    Window,
};

#[derive(Debug, Clone, PartialEq)]
pub struct StableParams {
    /// Stage budget; `None` means ten stages per atom.
    pub max_stages: Option<usize>,
    /// Distance tolerance for ties; `None` means `1e-9` times the largest side.
    pub tie_tolerance: Option<f64>,
    /// Assert the nesting and shortlist-distance invariants after every stage.
    pub check_invariants: bool,
}

impl Default for StableParams {
    fn default() -> Self {
        StableParams {
            max_stages: None,
            tie_tolerance: None,
            check_invariants: true,
        }
    }
}

/// The claim of one atom against an element set: element ids with the
/// claimed prefix fraction of each element's remaining mass.
#[derive(Debug, Clone, PartialEq)]
pub struct ClaimSet {
    pub owner: usize,
    pub claimed: Vec<(usize, f64)>,
    pub claim_radius: f64,
    /// Size of the equidistant group the claim ends in (more than one means
    /// the cap recursion decided the order).
    pub boundary_group: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtomClaim {
    /// Number of order positions covered; the last one possibly in part.
    pub len: usize,
    /// Claimed prefix fraction of the last covered element.
    pub last_fraction: f64,
    pub radius: f64,
    pub exhausted: bool,
    pub boundary_group: u32,
}

impl AtomClaim {
    fn fraction_at(&self, pos: usize) -> f64 {
        if pos + 1 == self.len {
            self.last_fraction
        } else {
            1.0
        }
    }

    fn contains(&self, other: &AtomClaim) -> bool {
        self.len > other.len
            || (self.len == other.len && self.last_fraction >= other.last_fraction - 1e-12)
    }
}

/// Per-stage summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageDiagnostics {
    pub stage: usize,
    pub rejected_mass: f64,
    pub unsaturated_atoms: usize,
    pub tie_breaks: usize,
    pub changed_atoms: usize,
}

/// The claim, rejection and shortlist state after a stage.
#[derive(Debug, Clone, Default)]
pub struct StageState {
    pub stage: usize,
    claims: Vec<AtomClaim>,
    /// Per atom, rejected prefix fraction per order position.
    rejections: Vec<Vec<f64>>,
    /// Per active element: nearest claimer and its distance.
    shortlist: Vec<Option<(usize, f64)>>,
    /// Per active element: claimer atoms sorted by index (nesting checks).
    claimers: Vec<Vec<u32>>,
}

impl StageState {
    pub fn claims(&self) -> &[AtomClaim] {
        &self.claims
    }

    /// Nearest claiming atom of each active element (order of `active`).
    pub fn shortlist(&self) -> Vec<Option<usize>> {
        self.shortlist.iter().map(|s| s.map(|x| x.0)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct StableOutcome {
    pub allocation: Allocation,
    pub stages: Vec<StageDiagnostics>,
    pub exhausted: Vec<usize>,
    pub tie_breaks: usize,
}

impl StableOutcome {
    pub fn converged_stage(&self) -> usize {
        self.stages.last().map_or(0, |s| s.stage)
    }
}

/// Drives the stage recursion over a fixed element pool (each element's
/// `remaining` mass) and a fixed atom list.
pub struct StableAllocator<'a> {
    window: Window,
    atoms: &'a [Atom],
    elements: &'a [MassElement],
    active: Vec<u32>,
    /// Position of each element in `active`, or `u32::MAX`.
    slot: Vec<u32>,
    alpha: f64,
    tol: f64,
    check: bool,
    orders: Vec<ProximityOrder>,
    /// Per atom and order position, the lost prefix the last claim assumed.
    assumed: Vec<Vec<f64>>,
    unstable: usize,
    state: StageState,
    /// Previous stage's claimers per active element, nearest first:
    /// (atom, order position, claimed fraction, distance).
    held_off: Vec<u32>,
    held: Vec<(u32, u32, f64, f64)>,
    portions: Vec<(u32, u32, f64)>,
}

impl<'a> StableAllocator<'a> {
    pub fn new(
        window: Window,
        atoms: &'a [Atom],
        elements: &'a [MassElement],
        alpha: f64,
        params: &StableParams,
    ) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return config(alloc::format!("appetite must be positive, got {alpha}"));
        }
        for a in atoms {
            window.check(&a.location)?;
        }
        for e in elements {
            window.check(&e.location)?;
            if !(e.remaining >= 0.0 && e.remaining <= e.mass) {
                return config("element remaining mass must lie in [0, mass]");
            }
        }
        let tol = params
            .tie_tolerance
            .unwrap_or_else(|| default_tie_tolerance(&window));
        let active: Vec<u32> = elements
            .iter()
            .enumerate()
            .filter(|(_, e)| e.remaining > 0.0)
            .map(|(i, _)| i as u32)
            .collect();
        let mut slot = vec![u32::MAX; elements.len()];
        for (s, &i) in active.iter().enumerate() {
            slot[i as usize] = s as u32;
        }
        let orders = atoms
            .iter()
            .map(|a| ProximityOrder::new(&window, &a.location, elements, &active, tol))
            .collect();
        Ok(StableAllocator {
            window,
            atoms,
            elements,
            active,
            slot,
            alpha,
            tol,
            check: params.check_invariants,
            orders,
            assumed: vec![Vec::new(); atoms.len()],
            unstable: 0,
            state: StageState {
                stage: 0,
                claims: vec![
                    AtomClaim {
                        len: 0,
                        last_fraction: 1.0,
                        radius: 0.0,
                        exhausted: false,
                        boundary_group: 0,
                    };
                    atoms.len()
                ],
                rejections: vec![Vec::new(); atoms.len()],
                shortlist: Vec::new(),
                claimers: Vec::new(),
            },
            held_off: Vec::new(),
            held: Vec::new(),
            portions: Vec::new(),
        })
    }

    pub fn state(&self) -> &StageState {
        &self.state
    }

    fn pool(&self, idx: u32) -> f64 {
        self.elements[idx as usize].remaining
    }

    fn compute_claim(&mut self, j: usize) -> AtomClaim {
        let target = self.alpha * self.atoms[j].mass;
        // summation noise must not turn into slivers of the next element
        let slack = 1e-10 * target;
        let mut cum = 0.0;
        let mut pos = 0;
        self.assumed[j].clear();
        loop {
            if cum >= target - slack && pos > 0 {
                return self.claim_upto(j, pos, 1.0, false);
            }
            if !self.orders[j].ensure(pos + 1) {
                let exhausted = cum < target - slack;
                return self.claim_upto(j, pos, 1.0, exhausted);
            }
            let c = *self.orders[j].get(pos);
            let m = self.pool(c.idx);
            // rejections only grow: mass a nearer atom already holds is lost anyway
            let r = self.state.rejections[j]
                .get(pos)
                .copied()
                .unwrap_or(0.0)
                .max(self.held_by_nearer(j, &c));
            self.assumed[j].push(r);
            let avail = m * (1.0 - r);
            if cum + avail >= target {
                let f = (r + (target - cum) / m).min(1.0);
                return self.claim_upto(j, pos + 1, f, false);
            }
            cum += avail;
            pos += 1;
        }
    }

    fn held_by_nearer(&self, j: usize, c: &order::Candidate) -> f64 {
        if self.held_off.is_empty() {
            return 0.0;
        }
        let s = self.slot[c.idx as usize] as usize;
        let list = &self.held[self.held_off[s] as usize..self.held_off[s + 1] as usize];
        let mut reach = 0.0f64;
        for &(k, _, f, d) in list {
            if k as usize == j || d > c.dist + self.tol {
                break;
            }
            let nearer = d < c.dist - self.tol || {
                let z = &self.elements[c.idx as usize].location;
                let dk = self
                    .window
                    .displacement(z, &self.atoms[k as usize].location);
                let dj = self.window.displacement(z, &self.atoms[j].location);
                lex_cmp(&dk, &dj).then((k as usize).cmp(&j)).is_lt()
            };
            if nearer {
                reach = reach.max(f);
            }
        }
        reach
    }

    fn claim_upto(&self, j: usize, len: usize, last_fraction: f64, exhausted: bool) -> AtomClaim {
        let (radius, group) = if len == 0 {
            (0.0, 0)
        } else {
            let o = &self.orders[j];
            (o.get(len - 1).dist, o.group_size(len - 1))
        };
        AtomClaim {
            len,
            last_fraction,
            radius,
            exhausted,
            boundary_group: group,
        }
    }

    /// Runs one stage of claims, shortlisting and rejections. Returns the
    /// stage diagnostics and whether a fixed point was reached.
    pub fn run_stage(&mut self) -> Result<(StageDiagnostics, bool)> {
        let n_atoms = self.atoms.len();
        let n_active = self.active.len();
        let stage = self.state.stage + 1;
        let mut tie_breaks = 0;

        // 1. claims against the previous rejections and holdings
        for j in 0..n_atoms {
            let claim = self.compute_claim(j);
            if self.check && stage > 1 && !claim.contains(&self.state.claims[j]) {
                return Err(Error::Invariant(alloc::format!(
                    "stage {stage}: claim of atom {j} shrank"
                )));
            }
            self.state.claims[j] = claim;
        }
        for c in &self.state.claims {
            if c.boundary_group > 1 && !c.exhausted {
                tie_breaks += 1;
            }
        }

        // 2. every claimed element keeps its nearest claimer
        let mut counts = vec![0u32; n_active + 1];
        for j in 0..n_atoms {
            for pos in 0..self.state.claims[j].len {
                let s = self.slot[self.orders[j].get(pos).idx as usize];
                counts[s as usize + 1] += 1;
            }
        }
        for s in 0..n_active {
            counts[s + 1] += counts[s];
        }
        let mut fill = counts.clone();
        // (atom, position, claimed fraction, distance)
        let mut claims_of: Vec<(u32, u32, f64, f64)> =
            vec![(0, 0, 0.0, 0.0); counts[n_active] as usize];
        for j in 0..n_atoms {
            let claim = self.state.claims[j];
            for pos in 0..claim.len {
                let c = self.orders[j].get(pos);
                let s = self.slot[c.idx as usize] as usize;
                claims_of[fill[s] as usize] =
                    (j as u32, pos as u32, claim.fraction_at(pos), c.dist);
                fill[s] += 1;
            }
        }

        let mut unstable = vec![0usize; n_atoms];
        let mut new_rej: Vec<Vec<f64>> =
            self.state.claims.iter().map(|c| vec![0.0; c.len]).collect();
        let mut shortlist = vec![None; n_active];
        let mut claimers: Vec<Vec<u32>> = if self.check {
            vec![Vec::new(); n_active]
        } else {
            Vec::new()
        };
        self.portions.clear();
        for s in 0..n_active {
            let list = &mut claims_of[counts[s] as usize..counts[s + 1] as usize];
            if list.is_empty() {
                continue;
            }
            let e_idx = self.active[s];
            if list.len() > 1 {
                let w = self.window;
                let loc = self.elements[e_idx as usize].location;
                let atoms = self.atoms;
                let groups = sort_grouped(
                    list,
                    |c| c.3,
                    self.tol,
                    |g, _| {
                        g.sort_by(|a, b| {
                            let da = w.displacement(&loc, &atoms[a.0 as usize].location);
                            let db = w.displacement(&loc, &atoms[b.0 as usize].location);
                            lex_cmp(&da, &db).then(a.0.cmp(&b.0))
                        })
                    },
                );
                if groups[0] > 1 {
                    tie_breaks += 1;
                }
            }
            shortlist[s] = Some((list[0].0 as usize, list[0].3));
            let m = self.pool(e_idx);
            let mut reach = 0.0f64;
            for &(j, pos, f, _) in list.iter() {
                // the claim is final once every lost prefix was foreseen
                if self.assumed[j as usize].get(pos as usize).copied() != Some(reach) {
                    unstable[j as usize] += 1;
                }
                if f > reach {
                    self.portions.push((e_idx, j, (f - reach) * m));
                }
                new_rej[j as usize][pos as usize] = f.min(reach);
                reach = reach.max(f);
            }
            if self.check {
                let mut ids: Vec<u32> = list.iter().map(|c| c.0).collect();
                ids.sort_unstable();
                claimers[s] = ids;
            }
        }

        // 3. rejections, change detection and the nesting checks
        let mut rejected_mass = 0.0;
        for j in 0..n_atoms {
            let old = &self.state.rejections[j];
            let new = &new_rej[j];
            for (pos, &r) in new.iter().enumerate() {
                let prev = old.get(pos).copied().unwrap_or(0.0);
                if self.check && r < prev - 1e-12 {
                    return Err(Error::Invariant(alloc::format!(
                        "stage {stage}: rejection set of atom {j} shrank at position {pos}"
                    )));
                }
                if r > 0.0 {
                    rejected_mass += r * self.pool(self.orders[j].get(pos).idx);
                }
            }
        }
        if self.check && stage > 1 {
            for s in 0..n_active {
                let prev = &self.state.claimers[s];
                let now = &claimers[s];
                let mut it = now.iter();
                if !prev.iter().all(|p| it.any(|q| q == p)) {
                    return Err(Error::Invariant(alloc::format!(
                        "stage {stage}: claimer set of element {} shrank",
                        self.elements[self.active[s] as usize].id
                    )));
                }
                if let (Some((_, d_prev)), Some((_, d_now))) =
                    (self.state.shortlist[s], shortlist[s])
                {
                    if d_now > d_prev {
                        return Err(Error::Invariant(alloc::format!(
                            "stage {stage}: shortlist distance of element {} grew",
                            self.elements[self.active[s] as usize].id
                        )));
                    }
                } else if self.state.shortlist[s].is_some() {
                    return Err(Error::Invariant(alloc::format!(
                        "stage {stage}: element {} lost its shortlist",
                        self.elements[self.active[s] as usize].id
                    )));
                }
            }
        }
        self.state.rejections = new_rej;
        self.held_off = counts;
        self.held = claims_of;
        self.state.shortlist = shortlist;
        self.state.claimers = claimers;
        self.state.stage = stage;

        let changed_atoms = unstable.iter().filter(|&&u| u > 0).count();
        self.unstable = unstable.iter().sum();
        let diag = StageDiagnostics {
            stage,
            rejected_mass,
            unsaturated_atoms: self.state.claims.iter().filter(|c| c.exhausted).count(),
            tie_breaks,
            changed_atoms,
        };
        Ok((diag, self.unstable == 0))
    }

    /// Iterates stages to a fixed point.
    pub fn run(mut self, max_stages: Option<usize>) -> Result<StableOutcome> {
        let budget = max_stages.unwrap_or(10 * self.atoms.len().max(1));
        let mut stages = Vec::new();
        if self.atoms.is_empty() {
            return Ok(self.finish(stages));
        }
        loop {
            let (diag, fixed) = self.run_stage()?;
            stages.push(diag);
            if fixed {
                return Ok(self.finish(stages));
            }
            if stages.len() >= budget {
                return Err(Error::NonConverged {
                    stages: stages.len(),
                    changed_elements: self.unstable,
                });
            }
        }
    }

    fn finish(self, stages: Vec<StageDiagnostics>) -> StableOutcome {
        let mut pieces: Vec<Vec<Piece>> = vec![Vec::new(); self.elements.len()];
        for &(e, j, mass) in &self.portions {
            pieces[e as usize].push(Piece {
                dest: j as usize,
                location: self.atoms[j as usize].location,
                mass,
                provenance: Provenance::Disc,
            });
        }
        let entries = self
            .elements
            .iter()
            .zip(pieces)
            .map(|(e, p)| Entry {
                element: *e,
                offered: e.remaining,
                pieces: p,
            })
            .collect();
        let exhausted = self
            .state
            .claims
            .iter()
            .enumerate()
            .filter(|(_, c)| c.exhausted)
            .map(|(j, _)| j)
            .collect();
        StableOutcome {
            allocation: Allocation::new(self.window, entries),
            exhausted,
            tie_breaks: stages.last().map_or(0, |s| s.tie_breaks),
            stages,
        }
    }

    /// Materializes the current claim of atom `j` as element ids and fractions.
    pub fn claim_set(&self, j: usize) -> ClaimSet {
        let c = self.state.claims[j];
        let claimed = (0..c.len)
            .map(|pos| {
                let cand = self.orders[j].get(pos);
                (cand.id, c.fraction_at(pos))
            })
            .collect();
        ClaimSet {
            owner: j,
            claimed,
            claim_radius: c.radius,
            boundary_group: c.boundary_group as usize,
        }
    }
}

/// Claim of a single atom against `elements` (their remaining masses), with
/// `rejected` listing element indices and the prefix fraction of each that
/// already rejected this atom.
pub fn claim_set(
    atom: &Atom,
    alpha: f64,
    elements: &[MassElement],
    w: &Window,
    rejected: &[(usize, f64)],
    tie_tolerance: f64,
) -> Result<ClaimSet> {
    let atoms = core::slice::from_ref(atom);
    let params = StableParams {
        tie_tolerance: Some(tie_tolerance),
        ..StableParams::default()
    };
    let mut engine = StableAllocator::new(*w, atoms, elements, alpha, &params)?;
    if !rejected.is_empty() {
        let order = &mut engine.orders[0];
        order.ensure(order.total());
        let mut rej = vec![0.0; order.total()];
        for pos in 0..order.total() {
            let idx = order.get(pos).idx as usize;
            if let Some(&(_, f)) = rejected.iter().find(|(i, _)| *i == idx) {
                rej[pos] = f;
            }
        }
        engine.state.rejections[0] = rej;
    }
    let claim = engine.compute_claim(0);
    if claim.exhausted {
        let available: f64 = elements.iter().map(|e| e.remaining).sum::<f64>()
            - rejected
                .iter()
                .map(|&(i, f)| f * elements[i].remaining)
                .sum::<f64>();
        return Err(Error::Exhausted {
            available,
            target: alpha * atom.mass,
        });
    }
    engine.state.claims[0] = claim;
    Ok(engine.claim_set(0))
}

/// Stable allocation of an element pool to atoms with appetite `alpha`.
pub fn allocate_elements(
    w: &Window,
    elements: &[MassElement],
    atoms: &AtomMeasure,
    alpha: f64,
    params: &StableParams,
) -> Result<StableOutcome> {
    StableAllocator::new(*w, atoms.atoms(), elements, alpha, params)?.run(params.max_stages)
}

/// Elementizes the diffuse `nu` at `resolution` and allocates it to `mu`.
pub fn run_stable_allocation(
    nu: &Measure,
    mu: &AtomMeasure,
    alpha: f64,
    resolution: f64,
    params: &StableParams,
) -> Result<StableOutcome> {
    if !nu.is_diffuse() {
        return config("the source of a stable allocation must be diffuse");
    }
    let elements = elementize(nu, resolution)?;
    allocate_elements(nu.window(), &elements, mu, alpha, params)
}

/// Destination of the element containing `p`, choosing among split pieces by
/// the fraction `u` in `[0, 1)` of the element's offered mass.
pub fn locate(alloc: &Allocation, element: usize, u: f64) -> Option<Point> {
    let e = alloc.entries.get(element)?;
    let mut acc = 0.0;
    let target = u * e.offered;
    for p in &e.pieces {
        acc += p.mass;
        if target < acc {
            return Some(p.location);
        }
    }
    None
}

#[cfg(test)]
mod tests;
