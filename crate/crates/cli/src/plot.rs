//! SVG cell maps: each element coloured by a cell label, atoms as dots.

use std::fmt::Write as _;

use diffalloc_core::{Allocation, AtomMeasure};

/// Fill of elements that kept most of their mass.
pub const UNALLOCATED_COLOUR: &str = "#d9d9d9";

const TARGET_WIDTH: f64 = 640.0;

fn colour(dest: usize) -> String {
    let hue = (dest as f64 * 137.507_764_050_037_85) % 360.0;
    let light = [48, 62, 38][dest % 3];
    format!("hsl({hue:.1},65%,{light}%)")
}

/// Label of each element: the destination that received more than half of
/// its mass, or `None`.
pub fn dominant_labels(a: &Allocation) -> Vec<Option<usize>> {
    a.entries
        .iter()
        .map(|e| match e.dominant() {
            Some(p) if p.mass * 2.0 > e.offered => Some(p.dest),
            _ => None,
        })
        .collect()
}

/// `cell` is the drawn extent of an element along each axis; unlabelled
/// elements get [`UNALLOCATED_COLOUR`].
pub fn cell_svg(
    a: &Allocation,
    labels: &[Option<usize>],
    atoms: &AtomMeasure,
    cell: [f64; 2],
) -> String {
    let w = &a.window;
    let (width, height) = if w.dim() == 2 {
        (w.side(0), w.side(1))
    } else {
        (w.side(0), w.side(0) / 20.0)
    };
    let s = TARGET_WIDTH / width;
    let ch = if w.dim() == 2 { cell[1] } else { height };
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0}\" height=\"{:.0}\" viewBox=\"0 0 {:.3} {:.3}\">\n",
        width * s,
        height * s,
        width * s,
        height * s
    );
    let _ = writeln!(
        out,
        "<rect x=\"0\" y=\"0\" width=\"{:.3}\" height=\"{:.3}\" fill=\"white\"/>",
        width * s,
        height * s
    );
    for (e, label) in a.entries.iter().zip(labels) {
        let fill = label.map_or_else(|| UNALLOCATED_COLOUR.to_string(), colour);
        let x = e.element.location.x() - cell[0] / 2.0;
        let y = if w.dim() == 2 {
            height - e.element.location.y() - ch / 2.0
        } else {
            0.0
        };
        let _ = writeln!(
            out,
            "<rect x=\"{:.3}\" y=\"{:.3}\" width=\"{:.3}\" height=\"{:.3}\" fill=\"{fill}\"/>",
            x * s,
            y * s,
            cell[0] * s,
            ch * s
        );
    }
    for a in atoms.atoms() {
        let y = if w.dim() == 2 {
            height - a.location.y()
        } else {
            height / 2.0
        };
        let _ = writeln!(
            out,
            "<circle cx=\"{:.3}\" cy=\"{:.3}\" r=\"3\" fill=\"black\"/>",
            a.location.x() * s,
            y * s
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use diffalloc_core::stable_alloc::{run_stable_allocation, StableParams};
    use diffalloc_core::{Measure, Window};

    #[test]
    fn unallocated_elements_use_the_reserved_colour() {
        let w = Window::plane(2.0, 1.0).unwrap();
        let eta = AtomMeasure::unit(&[w.point(&[0.5, 0.5]).unwrap()]).unwrap();
        let xi = Measure::lebesgue(w, 1.0).unwrap();
        let out = run_stable_allocation(&xi, &eta, 1.0, 0.25, &StableParams::default()).unwrap();
        let labels = dominant_labels(&out.allocation);
        let svg = cell_svg(&out.allocation, &labels, &eta, [0.25, 0.25]);
        assert!(svg.contains(UNALLOCATED_COLOUR));
        assert!(svg.contains(&colour(0)));
        assert_eq!(svg.matches("<circle").count(), 1);
        assert!(svg.ends_with("</svg>\n"));
    }

    #[test]
    fn colours_differ_between_neighbours() {
        for d in 0..50 {
            assert_ne!(colour(d), colour(d + 1));
        }
    }
}
