//! Per-atom claim order: elements sorted by distance, with equidistant groups
//! ordered by the cap recursion (distance to the lexicographically lowest
//! point of the sphere, then of the cap boundary, and so on down the
//! dimensions).

use alloc::vec::Vec;

use crate::measures::{lex_cmp, MassElement, Point, Window, MAX_DIM};

/// Sorts `items` by `key`, groups runs whose keys stay within `tol` of the
/// first key of the run, and lets `refine` reorder each group of size > 1.
/// Returns the group lengths in order.
pub(crate) fn sort_grouped<T>(
    items: &mut [T],
    key: impl Fn(&T) -> f64,
    tol: f64,
    mut refine: impl FnMut(&mut [T], f64),
) -> Vec<usize> {
    items.sort_by(|a, b| key(a).total_cmp(&key(b)));
    let mut groups = Vec::new();
    let mut start = 0;
    while start < items.len() {
        let k0 = key(&items[start]);
        let mut end = start + 1;
        while end < items.len() && key(&items[end]) - k0 <= tol {
            end += 1;
        }
        if end - start > 1 {
            refine(&mut items[start..end], k0);
        }
        groups.push(end - start);
        start = end;
    }
    groups
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Candidate {
    pub idx: u32,
    pub dist: f64,
    pub disp: [f64; MAX_DIM],
    pub id: usize,
}

/// Orders a tie group lying on the sphere of radius `radius` around the
/// centre. Displacements are relative to the centre.
pub(crate) fn cap_order(group: &mut [Candidate], radius: f64, dim: usize, tol: f64) {
    // level-1 pole: lexicographically lowest point of the sphere
    let mut pole = [0.0; MAX_DIM];
    pole[0] = -radius;
    let d1 = |c: &Candidate| dist_to(&c.disp, &pole, dim);
    sort_grouped(group, d1, tol, |sub, cap_radius| {
        if dim >= 2 {
            // the cap boundary is two points symmetric about the first axis;
            // its lexicographically lowest one has the negative second coordinate
            let a = -radius + cap_radius * cap_radius / (2.0 * radius);
            let b = libm::sqrt((radius * radius - a * a).max(0.0));
            let pole2 = [a, -b];
            let d2 = |c: &Candidate| dist_to(&c.disp, &pole2, dim);
            sort_grouped(sub, d2, tol, |rest, _| {
                rest.sort_by(|x, y| lex_cmp(&x.disp, &y.disp).then(x.id.cmp(&y.id)))
            });
        } else {
            sub.sort_by_key(|x| x.id);
        }
    });
}

fn dist_to(a: &[f64; MAX_DIM], b: &[f64; MAX_DIM], dim: usize) -> f64 {
    let sq: f64 = (0..dim).map(|k| (a[k] - b[k]) * (a[k] - b[k])).sum();
    libm::sqrt(sq)
}

/// Lazily sorted claim order of the active elements around one centre.
#[derive(Debug, Clone)]
pub(crate) struct ProximityOrder {
    sorted: Vec<Candidate>,
    /// Size of the tie group each sorted position belongs to.
    group_size: Vec<u32>,
    rest: Vec<Candidate>,
    tol: f64,
    dim: usize,
}

impl ProximityOrder {
    pub fn new(
        w: &Window,
        centre: &Point,
        elements: &[MassElement],
        active: &[u32],
        tol: f64,
    ) -> Self {
        let rest = active
            .iter()
            .map(|&i| {
                let e = &elements[i as usize];
                let disp = w.displacement(centre, &e.location);
                let dist = libm::sqrt((0..w.dim()).map(|k| disp[k] * disp[k]).sum());
                Candidate {
                    idx: i,
                    dist,
                    disp,
                    id: e.id,
                }
            })
            .collect();
        ProximityOrder {
            sorted: Vec::new(),
            group_size: Vec::new(),
            rest,
            tol,
            dim: w.dim(),
        }
    }

    pub fn total(&self) -> usize {
        self.sorted.len() + self.rest.len()
    }

    /// Makes at least `n` positions available; false if fewer elements exist.
    pub fn ensure(&mut self, n: usize) -> bool {
        while self.sorted.len() < n && !self.rest.is_empty() {
            let want = (n - self.sorted.len()).max(self.sorted.len()).max(64);
            self.extend(want);
        }
        self.sorted.len() >= n
    }

    fn extend(&mut self, want: usize) {
        let cmp = |a: &Candidate, b: &Candidate| a.dist.total_cmp(&b.dist);
        let mut chunk: Vec<Candidate> = if want >= self.rest.len() {
            core::mem::take(&mut self.rest)
        } else {
            self.rest.select_nth_unstable_by(want, cmp);
            let next_min = self.rest[want].dist;
            let mut head: Vec<Candidate> = self.rest.drain(..want).collect();
            head.sort_by(cmp);
            // keep every tie group whole: leave anything near the cut for later
            let keep = head.partition_point(|c| c.dist < next_min - self.tol);
            if keep == 0 {
                // a single huge tie group: take everything
                self.rest.extend(head);
                core::mem::take(&mut self.rest)
            } else {
                self.rest.extend(head.drain(keep..));
                head
            }
        };
        let (tol, dim) = (self.tol, self.dim);
        let groups = sort_grouped(
            &mut chunk,
            |c| c.dist,
            tol,
            |g, r| cap_order(g, r, dim, tol),
        );
        for g in groups {
            for _ in 0..g {
                self.group_size.push(g as u32);
            }
        }
        self.sorted.extend(chunk);
    }

    pub fn get(&self, pos: usize) -> &Candidate {
        &self.sorted[pos]
    }

    pub fn group_size(&self, pos: usize) -> u32 {
        self.group_size[pos]
    }
}
