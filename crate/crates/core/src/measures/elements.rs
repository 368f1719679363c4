use alloc::vec::Vec;

use super::measure::{Component, Measure};
use super::window::{Point, Window, MAX_DIM};
use crate::error::{config, Error, Result};

/// A quantized parcel of diffuse mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassElement {
    pub id: usize,
    pub location: Point,
    pub mass: f64,
    /// Mass not yet handed out by an earlier allocation pass.
    pub remaining: f64,
}

impl MassElement {
    pub fn new(id: usize, location: Point, mass: f64) -> Self {
        MassElement {
            id,
            location,
            mass,
            remaining: mass,
        }
    }
}

/// Default tie tolerance for "distance exactly s": `1e-9` times the largest side.
pub fn default_tie_tolerance(w: &Window) -> f64 {
    1e-9 * w.max_side()
}

/// Splits the diffuse components of `m` into elements of extent at most
/// `resolution`, located at cell or arc midpoints. The last element absorbs
/// the summation rounding so that the element masses add up to
/// `m.total_mass()` exactly.
pub fn elementize(m: &Measure, resolution: f64) -> Result<Vec<MassElement>> {
    if !(resolution > 0.0 && resolution.is_finite()) {
        return config(alloc::format!(
            "resolution must be positive, got {resolution}"
        ));
    }
    if m.has_atoms() {
        return config("atoms are never elementized; pass the diffuse part only");
    }
    let w = m.window();
    let mut out: Vec<MassElement> = Vec::new();
    for c in m.components() {
        match c {
            Component::Atoms(_) => {}
            Component::Grid(g) => {
                let mut n = [1usize; MAX_DIM];
                for (k, n_k) in n.iter_mut().enumerate().take(w.dim()) {
                    *n_k = cells_for(w.side(k), resolution);
                }
                let h: [f64; MAX_DIM] = core::array::from_fn(|k| {
                    if k < w.dim() {
                        w.side(k) / n[k] as f64
                    } else {
                        1.0
                    }
                });
                for j in 0..n[1] {
                    for i in 0..n[0] {
                        let idx = [i, j];
                        let mut lo = [0.0; 2];
                        let mut hi = [1.0; 2];
                        let mut mid = [0.0; MAX_DIM];
                        for k in 0..w.dim() {
                            lo[k] = idx[k] as f64 * h[k];
                            hi[k] = if idx[k] + 1 == n[k] {
                                w.side(k)
                            } else {
                                (idx[k] + 1) as f64 * h[k]
                            };
                            mid[k] = (idx[k] as f64 + 0.5) * h[k];
                        }
                        let mass = g.mass_in_plain_box(w, &lo, &hi);
                        if mass > 0.0 {
                            out.push(MassElement::new(out.len(), w.wrap_raw(mid), mass));
                        }
                    }
                }
            }
            Component::Curve(cd) => {
                for piece in cd.pieces() {
                    let len = piece.length();
                    let mass = piece.mass();
                    if mass <= 0.0 {
                        continue;
                    }
                    let n = cells_for(len, resolution);
                    let each = mass / n as f64;
                    for i in 0..n {
                        let t = (i as f64 + 0.5) / n as f64;
                        let loc = w.wrap_raw(piece.at(t));
                        out.push(MassElement::new(out.len(), loc, each));
                    }
                }
            }
        }
    }
    if let Some(last) = out.len().checked_sub(1) {
        let total = m.total_mass();
        let others: f64 = out[..last].iter().map(|e| e.mass).sum();
        let absorbed = total - others;
        if !(absorbed > 0.0) {
            return config("rounding absorption left the last element without mass");
        }
        out[last].mass = absorbed;
        out[last].remaining = absorbed;
    }
    Ok(out)
}

fn cells_for(extent: f64, resolution: f64) -> usize {
    let n = libm::ceil(extent / resolution - 1e-9);
    (n as usize).max(1)
}

/// Mass (or remaining mass) of the elements within `radius` of `center`.
pub fn ball_mass(
    elements: &[MassElement],
    w: &Window,
    center: &Point,
    radius: f64,
    use_remaining: bool,
) -> f64 {
    elements
        .iter()
        .filter(|e| w.dist(center, &e.location) <= radius)
        .map(|e| if use_remaining { e.remaining } else { e.mass })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadiusSearch {
    pub radius: f64,
    /// Remaining mass strictly inside the radius.
    pub interior_mass: f64,
    /// Indices of the elements at distance exactly `radius` (within tolerance).
    pub tie_set: Vec<usize>,
}

/// Smallest element distance at which the cumulative remaining mass reaches
/// `target`.
pub fn radius_search(
    elements: &[MassElement],
    w: &Window,
    center: &Point,
    target: f64,
    tie_tolerance: f64,
) -> Result<RadiusSearch> {
    let available: f64 = elements.iter().map(|e| e.remaining).sum();
    if available < target {
        return Err(Error::Exhausted { available, target });
    }
    let mut by_dist: Vec<(f64, usize)> = elements
        .iter()
        .enumerate()
        .filter(|(_, e)| e.remaining > 0.0)
        .map(|(i, e)| (w.dist(center, &e.location), i))
        .collect();
    by_dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut interior = 0.0;
    let mut start = 0;
    while start < by_dist.len() {
        let d0 = by_dist[start].0;
        let mut end = start;
        let mut group = 0.0;
        while end < by_dist.len() && by_dist[end].0 - d0 <= tie_tolerance {
            group += elements[by_dist[end].1].remaining;
            end += 1;
        }
        if interior + group >= target {
            return Ok(RadiusSearch {
                radius: d0,
                interior_mass: interior,
                tie_set: by_dist[start..end].iter().map(|p| p.1).collect(),
            });
        }
        interior += group;
        start = end;
    }
    Err(Error::Exhausted { available, target })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::measure::{CurveDensity, CurvePiece, GridDensity};
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn elementize_examples() {
        let w = Window::plane(1.0, 1.0).unwrap();
        let leb = Measure::lebesgue(w, 1.0).unwrap();
        let els = elementize(&leb, 0.5).unwrap();
        assert_eq!(els.len(), 4);
        assert!(els.iter().all(|e| e.mass == 0.25));

        let seg = CurveDensity::new(
            &w,
            vec![CurvePiece::Segment {
                start: [0.0, 0.5],
                end: [1.0, 0.5],
                density: 2.0,
            }],
        )
        .unwrap();
        let sm = Measure::new(w, vec![Component::Curve(seg.clone())]).unwrap();
        let els = elementize(&sm, 0.25).unwrap();
        assert_eq!(els.len(), 4);
        assert!(els.iter().all(|e| e.mass == 0.5));

        let mix = Measure::new(
            w,
            vec![
                Component::Grid(GridDensity::uniform(&w, 1.0).unwrap()),
                Component::Curve(seg),
            ],
        )
        .unwrap();
        let els = elementize(&mix, 0.5).unwrap();
        // the segment splits into 2 parcels at resolution 0.5
        assert_eq!(els.len(), 6);
        let els = {
            let mut v = elementize(&Measure::lebesgue(w, 1.0).unwrap(), 0.5).unwrap();
            let seg_els = elementize(&sm, 0.25).unwrap();
            v.extend(seg_els);
            v
        };
        assert_eq!(els.len(), 8);
        let total: f64 = els.iter().map(|e| e.mass).sum();
        assert_eq!(total, 3.0);
    }

    #[test]
    fn elementize_rejects_bad_input() {
        let w = Window::line(1.0).unwrap();
        let leb = Measure::lebesgue(w, 1.0).unwrap();
        assert!(matches!(elementize(&leb, 0.0), Err(Error::Config(_))));
        assert!(matches!(elementize(&leb, -1.0), Err(Error::Config(_))));
        let atoms = Measure::atoms(
            w,
            crate::AtomMeasure::unit(&[w.point(&[0.5]).unwrap()]).unwrap(),
        )
        .unwrap();
        assert!(elementize(&atoms, 0.1).is_err());
    }

    #[test]
    fn ball_mass_examples() {
        let w = Window::plane(1.0, 1.0).unwrap();
        let els = elementize(&Measure::lebesgue(w, 1.0).unwrap(), 0.5).unwrap();
        let c = w.point(&[0.1, 0.1]).unwrap();
        assert_eq!(ball_mass(&els, &w, &c, 0.0, false), 0.0);
        let c = w.point(&[0.25, 0.25]).unwrap();
        assert_eq!(ball_mass(&els, &w, &c, 0.1, false), 0.25);
        assert_eq!(ball_mass(&els, &w, &c, w.diameter(), false), 1.0);
    }

    #[test]
    fn radius_search_examples() {
        let w = Window::line(1.5).unwrap();
        let els = vec![
            MassElement::new(0, w.point(&[0.25]).unwrap(), 0.5),
            MassElement::new(1, w.point(&[-0.25]).unwrap(), 0.5),
        ];
        let origin = w.point(&[0.0]).unwrap();
        let r = radius_search(&els, &w, &origin, 1.0, 1e-9).unwrap();
        assert_eq!(r.radius, 0.25);
        assert_eq!(r.interior_mass, 0.0);
        assert_eq!(r.tie_set.len(), 2);

        let w = Window::line(2.0).unwrap();
        let single = vec![MassElement::new(0, w.point(&[0.3]).unwrap(), 1.0)];
        let r = radius_search(&single, &w, &origin, 0.5, 1e-9).unwrap();
        assert!((r.radius - 0.3).abs() < 1e-15);
        assert_eq!(r.interior_mass, 0.0);
        assert_eq!(r.tie_set, vec![0]);

        let two = vec![
            MassElement::new(0, w.point(&[0.1]).unwrap(), 0.2),
            MassElement::new(1, w.point(&[0.2]).unwrap(), 0.2),
        ];
        let r = radius_search(&two, &w, &origin, 0.3, 1e-9).unwrap();
        assert!((r.radius - 0.2).abs() < 1e-15);
        assert_eq!(r.interior_mass, 0.2);
        assert_eq!(r.tie_set, vec![1]);

        assert!(matches!(
            radius_search(&two, &w, &origin, 0.5, 1e-9),
            Err(Error::Exhausted { .. })
        ));
    }

    proptest! {
        #[test]
        fn elementize_conserves_mass_exactly(
            nx in 1usize..7, ny in 1usize..7,
            vals in proptest::collection::vec(0.0f64..3.0, 49),
            res in 0.03f64..0.8,
            heights in proptest::collection::vec(0.0f64..2.0, 0..3),
        ) {
            let w = Window::plane(2.5, 2.0).unwrap();
            let g = GridDensity::from_values(&w, &[nx, ny], vals[..nx * ny].to_vec()).unwrap();
            let mut comps = vec![Component::Grid(g)];
            if !heights.is_empty() {
                comps.push(Component::Curve(CurveDensity::horizontal_lines(&w, &heights, 0.4).unwrap()));
            }
            let m = Measure::new(w, comps).unwrap();
            prop_assume!(m.total_mass() > 0.0);
            let els = elementize(&m, res).unwrap();
            let total: f64 = els.iter().map(|e| e.mass).sum();
            prop_assert_eq!(total, m.total_mass());
            prop_assert!(els.iter().all(|e| e.mass > 0.0 && e.remaining == e.mass));
        }

        #[test]
        fn ball_mass_monotone(
            cx in 0.0f64..2.0, cy in 0.0f64..2.0,
            r1 in 0.0f64..1.5, r2 in 0.0f64..1.5,
        ) {
            let w = Window::plane(2.0, 2.0).unwrap();
            let els = elementize(&Measure::lebesgue(w, 1.0).unwrap(), 0.2).unwrap();
            let c = w.point(&[cx, cy]).unwrap();
            let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            prop_assert!(ball_mass(&els, &w, &c, lo, true) <= ball_mass(&els, &w, &c, hi, true));
            let all = ball_mass(&els, &w, &c, w.diameter(), true);
            prop_assert!((all - 4.0).abs() < 1e-12);
        }

        #[test]
        fn radius_search_brackets_target(
            cx in 0.0f64..2.0, cy in 0.0f64..2.0, target in 0.01f64..3.9,
        ) {
            let w = Window::plane(2.0, 2.0).unwrap();
            let els = elementize(&Measure::lebesgue(w, 1.0).unwrap(), 0.25).unwrap();
            let c = w.point(&[cx, cy]).unwrap();
            let r = radius_search(&els, &w, &c, target, 1e-9).unwrap();
            let ties: f64 = r.tie_set.iter().map(|&i| els[i].remaining).sum();
            prop_assert!(r.interior_mass < target);
            prop_assert!(target <= r.interior_mass + ties + 1e-12);
        }
    }
}
