use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use super::window::{Point, Window, MAX_DIM};
use crate::error::{config, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub location: Point,
    pub mass: f64,
}

/// A finite list of weighted points with distinct locations.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AtomMeasure {
    atoms: Vec<Atom>,
}

impl AtomMeasure {
    /// Builds the measure, merging atoms that share a location.
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        let mut merged: Vec<Atom> = Vec::with_capacity(atoms.len());
        for a in atoms {
            if !(a.mass > 0.0 && a.mass.is_finite()) {
                return config(alloc::format!("atom mass must be positive, got {}", a.mass));
            }
            if let Some(dim) = merged.first().map(|m| m.location.dim()) {
                if dim != a.location.dim() {
                    return config("atoms of mixed dimension");
                }
            }
            match merged.iter_mut().find(|m| m.location == a.location) {
                Some(m) => m.mass += a.mass,
                None => merged.push(a),
            }
        }
        Ok(AtomMeasure { atoms: merged })
    }

    pub fn empty() -> Self {
        AtomMeasure { atoms: Vec::new() }
    }

    /// Unit-mass atoms at the given points.
    pub fn unit(points: &[Point]) -> Result<Self> {
        Self::new(
            points
                .iter()
                .map(|&location| Atom {
                    location,
                    mass: 1.0,
                })
                .collect(),
        )
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass).sum()
    }

    pub fn max_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass).fold(0.0, f64::max)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        AtomMeasure {
            atoms: self
                .atoms
                .iter()
                .map(|a| Atom {
                    location: a.location,
                    mass: a.mass * factor,
                })
                .collect(),
        }
    }

    fn mass_in(&self, w: &Window, b: &TorusBox) -> f64 {
        self.atoms
            .iter()
            .filter(|a| b.contains(w, &a.location))
            .map(|a| a.mass)
            .sum()
    }
}

/// Piecewise-constant density on a regular grid covering the window.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    cells: [usize; MAX_DIM],
    /// Row-major, first axis fastest.
    density: Vec<f64>,
}

impl GridDensity {
    pub fn from_values(w: &Window, cells: &[usize], density: Vec<f64>) -> Result<Self> {
        if cells.len() != w.dim() {
            return config("grid resolution must give one cell count per axis");
        }
        let mut c = [1usize; MAX_DIM];
        for (k, &n) in cells.iter().enumerate() {
            if n == 0 {
                return config("grid needs at least one cell per axis");
            }
            c[k] = n;
        }
        let count: usize = c.iter().product();
        if density.len() != count {
            return config(alloc::format!(
                "grid has {count} cells but {} densities",
                density.len()
            ));
        }
        if density.iter().any(|d| !(*d >= 0.0 && d.is_finite())) {
            return config("grid densities must be finite and nonnegative");
        }
        Ok(GridDensity { cells: c, density })
    }

    /// Constant density over the whole window (a multiple of Lebesgue measure).
    pub fn uniform(w: &Window, density: f64) -> Result<Self> {
        let cells = vec![1usize; w.dim()];
        Self::from_values(w, &cells, vec![density])
    }

    /// Density sampled at cell centres.
    pub fn from_fn(w: &Window, cells: &[usize], f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        if cells.len() != w.dim() {
            return config("grid resolution must give one cell count per axis");
        }
        let mut c = [1usize; MAX_DIM];
        c[..cells.len()].copy_from_slice(cells);
        let mut values = Vec::with_capacity(c.iter().product());
        for j in 0..c[1] {
            for i in 0..c[0] {
                let idx = [i, j];
                let mut centre = [0.0; MAX_DIM];
                for k in 0..w.dim() {
                    centre[k] = (idx[k] as f64 + 0.5) * w.side(k) / c[k] as f64;
                }
                values.push(f(&centre[..w.dim()]));
            }
        }
        Self::from_values(w, cells, values)
    }

    fn shifted(&self, w: &Window, v: &[f64; MAX_DIM]) -> Result<Self> {
        if self.density.iter().all(|d| *d == self.density[0]) {
            return Ok(self.clone());
        }
        let mut steps = [0usize; MAX_DIM];
        for k in 0..w.dim() {
            let h = w.side(k) / self.cells[k] as f64;
            let m = v[k] / h;
            if m != libm::round(m) {
                return config("a non-constant grid can only be shifted by whole cells");
            }
            steps[k] = libm::fmod(
                libm::fmod(m, self.cells[k] as f64) + self.cells[k] as f64,
                self.cells[k] as f64,
            ) as usize;
        }
        let (n0, n1) = (self.cells[0], self.cells[1]);
        let mut density = vec![0.0; self.density.len()];
        for j in 0..n1 {
            for i in 0..n0 {
                density[((j + steps[1]) % n1) * n0 + (i + steps[0]) % n0] =
                    self.density[j * n0 + i];
            }
        }
        Ok(GridDensity {
            cells: self.cells,
            density,
        })
    }

    pub fn cells(&self) -> &[usize; MAX_DIM] {
        &self.cells
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn max_density(&self) -> f64 {
        self.density.iter().copied().fold(0.0, f64::max)
    }

    pub fn total_mass(&self, w: &Window) -> f64 {
        let cell_volume: f64 = (0..w.dim())
            .map(|k| w.side(k) / self.cells[k] as f64)
            .product();
        self.density.iter().map(|d| d * cell_volume).sum()
    }

    pub(crate) fn value(&self, i: usize, j: usize) -> f64 {
        self.density[j * self.cells[0] + i]
    }

    /// Mass of an axis-aligned box that does not wrap: `[lo, hi)` with
    /// `0 <= lo <= hi <= side` on every axis.
    pub(crate) fn mass_in_plain_box(&self, w: &Window, lo: &[f64; 2], hi: &[f64; 2]) -> f64 {
        let mut overlaps: [Vec<(usize, f64)>; 2] = [Vec::new(), Vec::new()];
        for k in 0..MAX_DIM {
            if k >= w.dim() {
                overlaps[k].push((0, 1.0));
                continue;
            }
            let n = self.cells[k];
            let h = w.side(k) / n as f64;
            let first = ((lo[k] / h) as usize).min(n - 1);
            let last = (libm::ceil(hi[k] / h) as usize).clamp(first + 1, n);
            for i in first..last {
                let a = (i as f64 * h).max(lo[k]);
                let b = ((i + 1) as f64 * h).min(hi[k]);
                if b > a {
                    overlaps[k].push((i, b - a));
                }
            }
        }
        let mut total = 0.0;
        for &(j, wy) in &overlaps[1] {
            for &(i, wx) in &overlaps[0] {
                total += self.value(i, j) * wx * wy;
            }
        }
        total
    }

    fn mass_in(&self, w: &Window, b: &TorusBox) -> f64 {
        b.plain_parts(w)
            .iter()
            .map(|(lo, hi)| self.mass_in_plain_box(w, lo, hi))
            .sum()
    }
}

/// One piece of a lower-dimensional diffuse measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CurvePiece {
    /// Straight segment between unwrapped endpoints, constant mass per length.
    Segment {
        start: [f64; MAX_DIM],
        end: [f64; MAX_DIM],
        density: f64,
    },
    /// Circular arc `centre + radius (cos t, sin t)` for `t` in `[start_angle, end_angle]`.
    Arc {
        centre: [f64; MAX_DIM],
        radius: f64,
        start_angle: f64,
        end_angle: f64,
        density: f64,
    },
}

impl CurvePiece {
    pub fn length(&self) -> f64 {
        match *self {
            CurvePiece::Segment { start, end, .. } => {
                let dx = end[0] - start[0];
                let dy = end[1] - start[1];
                libm::sqrt(dx * dx + dy * dy)
            }
            CurvePiece::Arc {
                radius,
                start_angle,
                end_angle,
                ..
            } => radius * (end_angle - start_angle),
        }
    }

    pub fn density(&self) -> f64 {
        match *self {
            CurvePiece::Segment { density, .. } | CurvePiece::Arc { density, .. } => density,
        }
    }

    pub fn mass(&self) -> f64 {
        self.density() * self.length()
    }

    /// Unwrapped position at arc-length fraction `t` in `[0, 1]`.
    pub fn at(&self, t: f64) -> [f64; MAX_DIM] {
        match *self {
            CurvePiece::Segment { start, end, .. } => [
                start[0] + t * (end[0] - start[0]),
                start[1] + t * (end[1] - start[1]),
            ],
            CurvePiece::Arc {
                centre,
                radius,
                start_angle,
                end_angle,
                ..
            } => {
                let a = start_angle + t * (end_angle - start_angle);
                [
                    centre[0] + radius * libm::cos(a),
                    centre[1] + radius * libm::sin(a),
                ]
            }
        }
    }

    fn validate(&self, w: &Window) -> Result<()> {
        if !(self.density() >= 0.0 && self.density().is_finite()) {
            return config("curve density must be finite and nonnegative");
        }
        match *self {
            CurvePiece::Segment { .. } => {
                if !(self.length() > 0.0) {
                    return config("segment must have positive length");
                }
            }
            CurvePiece::Arc {
                radius,
                start_angle,
                end_angle,
                ..
            } => {
                if w.dim() != 2 {
                    return config("arcs need a two-dimensional window");
                }
                if !(radius > 0.0) {
                    return config("arc radius must be positive");
                }
                if !(end_angle > start_angle) || end_angle - start_angle > 2.0 * PI + 1e-12 {
                    return config("arc angle interval must be nonempty and at most a full turn");
                }
            }
        }
        Ok(())
    }

    /// Arc-length parameter intervals (fractions in `[0,1]`) lying inside a
    /// plain (non-wrapping) box translated by `offset`.
    fn param_inside(&self, lo: &[f64; 2], hi: &[f64; 2], dim: usize) -> f64 {
        match *self {
            CurvePiece::Segment { start, end, .. } => {
                let (mut t0, mut t1) = (0.0f64, 1.0f64);
                for k in 0..dim {
                    let d = end[k] - start[k];
                    if d == 0.0 {
                        if start[k] < lo[k] || start[k] >= hi[k] {
                            return 0.0;
                        }
                    } else {
                        let a = (lo[k] - start[k]) / d;
                        let b = (hi[k] - start[k]) / d;
                        let (a, b) = if a < b { (a, b) } else { (b, a) };
                        t0 = t0.max(a);
                        t1 = t1.min(b);
                    }
                }
                (t1 - t0).max(0.0)
            }
            CurvePiece::Arc {
                centre,
                radius,
                start_angle,
                end_angle,
                ..
            } => {
                let mut cuts: Vec<f64> = vec![start_angle, end_angle];
                let span = end_angle - start_angle;
                for k in 0..2 {
                    for edge in [lo[k], hi[k]] {
                        let c = (edge - centre[k]) / radius;
                        if c.abs() > 1.0 {
                            continue;
                        }
                        // solutions of cos(t) = c (k = 0) or sin(t) = c (k = 1)
                        let base = if k == 0 { libm::acos(c) } else { libm::asin(c) };
                        let sols = if k == 0 {
                            [base, -base]
                        } else {
                            [base, PI - base]
                        };
                        for s in sols {
                            let mut t = s;
                            // bring into [start_angle, start_angle + 2pi)
                            t -= 2.0 * PI * libm::floor((t - start_angle) / (2.0 * PI));
                            if t > start_angle && t < end_angle {
                                cuts.push(t);
                            }
                        }
                    }
                }
                cuts.sort_by(f64::total_cmp);
                let mut inside = 0.0;
                for pair in cuts.windows(2) {
                    let (a, b) = (pair[0], pair[1]);
                    if b <= a {
                        continue;
                    }
                    let m = 0.5 * (a + b);
                    let x = centre[0] + radius * libm::cos(m);
                    let y = centre[1] + radius * libm::sin(m);
                    if x >= lo[0] && x < hi[0] && y >= lo[1] && y < hi[1] {
                        inside += b - a;
                    }
                }
                inside / span
            }
        }
    }

    fn bbox(&self) -> ([f64; 2], [f64; 2]) {
        match *self {
            CurvePiece::Segment { start, end, .. } => (
                [start[0].min(end[0]), start[1].min(end[1])],
                [start[0].max(end[0]), start[1].max(end[1])],
            ),
            CurvePiece::Arc { centre, radius, .. } => (
                [centre[0] - radius, centre[1] - radius],
                [centre[0] + radius, centre[1] + radius],
            ),
        }
    }

    fn mass_in(&self, w: &Window, b: &TorusBox) -> f64 {
        let (blo, bhi) = self.bbox();
        let dim = w.dim();
        // periodic images of the box that can meet the curve's bounding box
        let mut ranges = [(0i64, 0i64); 2];
        for k in 0..dim {
            let side = w.side(k);
            let first = libm::floor((blo[k] - b.lo[k] - b.size[k]) / side) as i64;
            let last = libm::ceil((bhi[k] - b.lo[k]) / side) as i64;
            ranges[k] = (first, last);
        }
        let mut frac = 0.0;
        for iy in ranges[1].0..=ranges[1].1 {
            for ix in ranges[0].0..=ranges[0].1 {
                let shift = [ix as f64 * w.side(0), iy as f64 * w.side(1.min(dim - 1))];
                let mut lo = [0.0; 2];
                let mut hi = [0.0; 2];
                for k in 0..dim {
                    lo[k] = b.lo[k] + shift[k];
                    hi[k] = lo[k] + b.size[k];
                }
                if dim == 1 {
                    lo[1] = f64::NEG_INFINITY;
                    hi[1] = f64::INFINITY;
                }
                frac += self.param_inside(&lo, &hi, dim);
            }
        }
        frac * self.mass()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CurveDensity {
    pieces: Vec<CurvePiece>,
}

impl CurveDensity {
    pub fn new(w: &Window, pieces: Vec<CurvePiece>) -> Result<Self> {
        for p in &pieces {
            p.validate(w)?;
        }
        Ok(CurveDensity { pieces })
    }

    /// A full circle of the given radius and linear density.
    pub fn circle(w: &Window, centre: &Point, radius: f64, density: f64) -> Result<Self> {
        Self::new(
            w,
            vec![CurvePiece::Arc {
                centre: centre.raw(),
                radius,
                start_angle: 0.0,
                end_angle: 2.0 * PI,
                density,
            }],
        )
    }

    /// Full-width lines parallel to the first axis at the given heights.
    pub fn horizontal_lines(w: &Window, heights: &[f64], density: f64) -> Result<Self> {
        let pieces = heights
            .iter()
            .map(|&y| CurvePiece::Segment {
                start: [0.0, y],
                end: [w.side(0), y],
                density,
            })
            .collect();
        Self::new(w, pieces)
    }

    pub fn pieces(&self) -> &[CurvePiece] {
        &self.pieces
    }

    pub fn total_mass(&self) -> f64 {
        self.pieces.iter().map(|p| p.mass()).sum()
    }

    fn mass_in(&self, w: &Window, b: &TorusBox) -> f64 {
        self.pieces.iter().map(|p| p.mass_in(w, b)).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Component {
    Atoms(AtomMeasure),
    Grid(GridDensity),
    Curve(CurveDensity),
}

impl Component {
    pub fn is_diffuse(&self) -> bool {
        !matches!(self, Component::Atoms(_))
    }
}

/// A finite mixture of atoms, grid densities and curve densities on a window.
#[derive(Debug, Clone, PartialEq)]
pub struct Measure {
    window: Window,
    components: Vec<Component>,
}

impl Measure {
    pub fn new(window: Window, components: Vec<Component>) -> Result<Self> {
        for c in &components {
            match c {
                Component::Atoms(a) => {
                    if a.atoms().iter().any(|x| x.location.dim() != window.dim()) {
                        return config("atom dimension does not match the window");
                    }
                }
                Component::Grid(g) => {
                    let used: usize = g.cells()[..window.dim()].iter().product();
                    if used != g.density().len() {
                        return config("grid does not match the window dimension");
                    }
                }
                Component::Curve(c) => {
                    for p in c.pieces() {
                        p.validate(&window)?;
                    }
                }
            }
        }
        Ok(Measure { window, components })
    }

    pub fn zero(window: Window) -> Self {
        Measure {
            window,
            components: Vec::new(),
        }
    }

    pub fn lebesgue(window: Window, density: f64) -> Result<Self> {
        let g = GridDensity::uniform(&window, density)?;
        Self::new(window, vec![Component::Grid(g)])
    }

    pub fn atoms(window: Window, atoms: AtomMeasure) -> Result<Self> {
        Self::new(window, vec![Component::Atoms(atoms)])
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn total_mass(&self) -> f64 {
        self.components
            .iter()
            .map(|c| match c {
                Component::Atoms(a) => a.total_mass(),
                Component::Grid(g) => g.total_mass(&self.window),
                Component::Curve(c) => c.total_mass(),
            })
            .sum()
    }

    pub fn has_atoms(&self) -> bool {
        self.components
            .iter()
            .any(|c| matches!(c, Component::Atoms(a) if !a.is_empty()))
    }

    pub fn is_diffuse(&self) -> bool {
        !self.has_atoms()
    }

    /// The union of all atom components.
    pub fn discrete_part(&self) -> AtomMeasure {
        let mut all = Vec::new();
        for c in &self.components {
            if let Component::Atoms(a) = c {
                all.extend_from_slice(a.atoms());
            }
        }
        AtomMeasure::new(all).unwrap_or_default()
    }

    /// The measure without its atom components.
    pub fn diffuse_part(&self) -> Measure {
        Measure {
            window: self.window,
            components: self
                .components
                .iter()
                .filter(|c| c.is_diffuse())
                .cloned()
                .collect(),
        }
    }

    /// Multiplies every component by `factor`.
    pub fn scaled(&self, factor: f64) -> Measure {
        let components = self
            .components
            .iter()
            .map(|c| match c {
                Component::Atoms(a) => Component::Atoms(a.scaled(factor)),
                Component::Grid(g) => Component::Grid(GridDensity {
                    cells: g.cells,
                    density: g.density.iter().map(|d| d * factor).collect(),
                }),
                Component::Curve(cd) => Component::Curve(CurveDensity {
                    pieces: cd
                        .pieces
                        .iter()
                        .map(|p| match *p {
                            CurvePiece::Segment {
                                start,
                                end,
                                density,
                            } => CurvePiece::Segment {
                                start,
                                end,
                                density: density * factor,
                            },
                            CurvePiece::Arc {
                                centre,
                                radius,
                                start_angle,
                                end_angle,
                                density,
                            } => CurvePiece::Arc {
                                centre,
                                radius,
                                start_angle,
                                end_angle,
                                density: density * factor,
                            },
                        })
                        .collect(),
                }),
            })
            .collect();
        Measure {
            window: self.window,
            components,
        }
    }

    /// Translates the measure by `v`. Non-constant grids move only by whole
    /// cells.
    pub fn shifted(&self, v: &[f64; MAX_DIM]) -> Result<Measure> {
        let w = &self.window;
        let mut components = Vec::with_capacity(self.components.len());
        for c in &self.components {
            components.push(match c {
                Component::Atoms(a) => Component::Atoms(AtomMeasure::new(
                    a.atoms()
                        .iter()
                        .map(|x| Atom {
                            location: w.shift(&x.location, v),
                            mass: x.mass,
                        })
                        .collect(),
                )?),
                Component::Grid(g) => Component::Grid(g.shifted(w, v)?),
                Component::Curve(cd) => {
                    let mv = |p: [f64; MAX_DIM]| -> [f64; MAX_DIM] {
                        core::array::from_fn(|k| p[k] + v[k])
                    };
                    Component::Curve(CurveDensity {
                        pieces: cd
                            .pieces
                            .iter()
                            .map(|p| match *p {
                                CurvePiece::Segment {
                                    start,
                                    end,
                                    density,
                                } => CurvePiece::Segment {
                                    start: mv(start),
                                    end: mv(end),
                                    density,
                                },
                                CurvePiece::Arc {
                                    centre,
                                    radius,
                                    start_angle,
                                    end_angle,
                                    density,
                                } => CurvePiece::Arc {
                                    centre: mv(centre),
                                    radius,
                                    start_angle,
                                    end_angle,
                                    density,
                                },
                            })
                            .collect(),
                    })
                }
            });
        }
        Ok(Measure {
            window: self.window,
            components,
        })
    }

    /// Mass of a (possibly wrapping) box on the torus.
    pub fn mass_in_box(&self, b: &TorusBox) -> f64 {
        let w = &self.window;
        self.components
            .iter()
            .map(|c| match c {
                Component::Atoms(a) => a.mass_in(w, b),
                Component::Grid(g) => g.mass_in(w, b),
                Component::Curve(cd) => cd.mass_in(w, b),
            })
            .sum()
    }
}

/// Axis-aligned half-open box `[lo, lo + size)` on the torus; may wrap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorusBox {
    pub lo: [f64; MAX_DIM],
    pub size: [f64; MAX_DIM],
}

impl TorusBox {
    pub fn new(w: &Window, lo: &Point, size: &[f64]) -> Result<Self> {
        w.check(lo)?;
        if size.len() != w.dim() {
            return config("box size must give one extent per axis");
        }
        let mut s = [0.0; MAX_DIM];
        for k in 0..w.dim() {
            if !(size[k] >= 0.0 && size[k] <= w.side(k)) {
                return config("box extent must lie in [0, side]");
            }
            s[k] = size[k];
        }
        Ok(TorusBox {
            lo: lo.raw(),
            size: s,
        })
    }

    /// The whole window.
    pub fn full(w: &Window) -> Self {
        let mut size = [0.0; MAX_DIM];
        size[..w.dim()].copy_from_slice(w.sides());
        TorusBox {
            lo: [0.0; MAX_DIM],
            size,
        }
    }

    pub fn contains(&self, w: &Window, p: &Point) -> bool {
        (0..w.dim()).all(|k| {
            let side = w.side(k);
            let mut d = p.raw()[k] - self.lo[k];
            if d < 0.0 {
                d += side;
            }
            if d >= side {
                d -= side;
            }
            d < self.size[k] || self.size[k] >= side
        })
    }

    /// Splits the box into at most `2^dim` non-wrapping boxes in canonical coordinates.
    pub(crate) fn plain_parts(&self, w: &Window) -> Vec<([f64; 2], [f64; 2])> {
        let mut per_axis: [Vec<(f64, f64)>; 2] = [Vec::new(), Vec::new()];
        for k in 0..MAX_DIM {
            if k >= w.dim() {
                per_axis[k].push((0.0, 1.0));
                continue;
            }
            let side = w.side(k);
            let a = self.lo[k];
            let b = a + self.size[k];
            if self.size[k] >= side {
                per_axis[k].push((0.0, side));
            } else if b <= side {
                per_axis[k].push((a, b));
            } else {
                per_axis[k].push((a, side));
                per_axis[k].push((0.0, b - side));
            }
        }
        let mut out = Vec::new();
        for &(y0, y1) in &per_axis[1] {
            for &(x0, x1) in &per_axis[0] {
                out.push(([x0, y0], [x1, y1]));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square() -> Window {
        Window::plane(1.0, 1.0).unwrap()
    }

    #[test]
    fn shifted_moves_mass_with_the_boxes() {
        let w = Window::plane(4.0, 2.0).unwrap();
        let g = GridDensity::from_fn(&w, &[4, 2], |c| c[0] + 2.0 * c[1]).unwrap();
        let centre = w.point(&[3.5, 1.0]).unwrap();
        let m = Measure::new(
            w,
            vec![
                Component::Grid(g),
                Component::Curve(CurveDensity::circle(&w, &centre, 0.4, 1.0).unwrap()),
                Component::Atoms(AtomMeasure::unit(&[w.point(&[0.25, 1.75]).unwrap()]).unwrap()),
            ],
        )
        .unwrap();
        let v = [1.0, 1.0];
        let s = m.shifted(&v).unwrap();
        assert!((s.total_mass() - m.total_mass()).abs() < 1e-12);
        for (lo, size) in [
            ([0.0, 0.0], [1.0, 1.0]),
            ([3.2, 1.5], [1.3, 0.9]),
            ([1.0, 0.5], [2.0, 1.0]),
        ] {
            let b = TorusBox::new(&w, &w.point(&lo).unwrap(), &size).unwrap();
            let moved = w.shift(&w.point(&lo).unwrap(), &v);
            let bs = TorusBox::new(&w, &moved, &size).unwrap();
            assert!((m.mass_in_box(&b) - s.mass_in_box(&bs)).abs() < 1e-9);
        }
        assert!(m.shifted(&[0.5, 0.0]).is_err());
    }

    #[test]
    fn total_mass_examples() {
        let w = Window::plane(2.0, 2.0).unwrap();
        let leb = Measure::lebesgue(w, 1.0).unwrap();
        assert_eq!(leb.total_mass(), 4.0);

        let line = Window::line(1.0).unwrap();
        let atoms = AtomMeasure::new(vec![
            Atom {
                location: line.point(&[0.0]).unwrap(),
                mass: 1.5,
            },
            Atom {
                location: line.point(&[0.5]).unwrap(),
                mass: 0.5,
            },
        ])
        .unwrap();
        assert_eq!(Measure::atoms(line, atoms).unwrap().total_mass(), 2.0);

        let w = unit_square();
        let c = w.point(&[0.5, 0.5]).unwrap();
        let circle = CurveDensity::circle(&w, &c, 0.25, 1.0).unwrap();
        assert!((circle.total_mass() - core::f64::consts::FRAC_PI_2).abs() < 1e-7);
    }

    #[test]
    fn duplicate_atoms_merge() {
        let w = Window::line(1.0).unwrap();
        let p = w.point(&[0.3]).unwrap();
        let a = AtomMeasure::new(vec![
            Atom {
                location: p,
                mass: 1.0,
            },
            Atom {
                location: p,
                mass: 2.0,
            },
        ])
        .unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a.total_mass(), 3.0);
        assert!(AtomMeasure::new(vec![Atom {
            location: p,
            mass: 0.0
        }])
        .is_err());
    }

    #[test]
    fn mixture_is_additive() {
        let w = Window::plane(3.0, 2.0).unwrap();
        let g = GridDensity::from_fn(&w, &[6, 4], |c| 1.0 + c[0] * c[1]).unwrap();
        let lines = CurveDensity::horizontal_lines(&w, &[0.3, 1.7], 0.7).unwrap();
        let atoms = AtomMeasure::new(vec![Atom {
            location: w.point(&[1.0, 1.0]).unwrap(),
            mass: 0.25,
        }])
        .unwrap();
        let parts = [g.total_mass(&w), lines.total_mass(), atoms.total_mass()];
        let m = Measure::new(
            w,
            vec![
                Component::Grid(g),
                Component::Curve(lines),
                Component::Atoms(atoms),
            ],
        )
        .unwrap();
        let sum: f64 = parts.iter().sum();
        assert!((m.total_mass() - sum).abs() <= 1e-12 * sum);
        assert!((m.discrete_part().total_mass() - 0.25).abs() < 1e-15);
        assert!((m.diffuse_part().total_mass() - (parts[0] + parts[1])).abs() < 1e-12);
    }

    #[test]
    fn box_mass_matches_totals_on_full_window() {
        let w = Window::plane(3.0, 2.0).unwrap();
        let c = w.point(&[2.8, 1.9]).unwrap();
        let m = Measure::new(
            w,
            vec![
                Component::Grid(GridDensity::from_fn(&w, &[5, 3], |c| c[0] + 0.5).unwrap()),
                Component::Curve(CurveDensity::circle(&w, &c, 0.4, 2.0).unwrap()),
                Component::Curve(
                    CurveDensity::new(
                        &w,
                        vec![CurvePiece::Segment {
                            start: [2.5, 0.5],
                            end: [4.0, 1.5],
                            density: 1.0,
                        }],
                    )
                    .unwrap(),
                ),
            ],
        )
        .unwrap();
        let full = m.mass_in_box(&TorusBox::full(&w));
        assert!(
            (full - m.total_mass()).abs() < 1e-9,
            "{full} vs {}",
            m.total_mass()
        );
    }

    #[test]
    fn wrapping_box_partitions_mass() {
        // four boxes tiling the torus with a seam at (2.2, 0.7)
        let w = Window::plane(3.0, 2.0).unwrap();
        let c = w.point(&[0.1, 0.1]).unwrap();
        let m = Measure::new(
            w,
            vec![
                Component::Grid(GridDensity::from_fn(&w, &[7, 3], |c| 1.0 + c[1]).unwrap()),
                Component::Curve(CurveDensity::circle(&w, &c, 0.5, 1.0).unwrap()),
                Component::Curve(CurveDensity::horizontal_lines(&w, &[0.25, 1.0], 1.5).unwrap()),
            ],
        )
        .unwrap();
        let seam = [2.2, 0.7];
        let mut sum = 0.0;
        for (x0, sx) in [(seam[0], 1.3), (seam[0] + 1.3 - 3.0, 1.7)] {
            for (y0, sy) in [(seam[1], 0.9), (seam[1] + 0.9, 1.1)] {
                let lo = w.point(&[x0, y0]).unwrap();
                sum += m.mass_in_box(&TorusBox::new(&w, &lo, &[sx, sy]).unwrap());
            }
        }
        // the circle is tangent to a seam; rounding of the edge moves ~1e-8 of arc
        assert!((sum - m.total_mass()).abs() < 1e-7);
    }

    #[test]
    fn quarter_circle_box() {
        let w = Window::plane(4.0, 4.0).unwrap();
        let c = w.point(&[2.0, 2.0]).unwrap();
        let circle = Measure::new(
            w,
            vec![Component::Curve(
                CurveDensity::circle(&w, &c, 1.0, 1.0).unwrap(),
            )],
        )
        .unwrap();
        let lo = w.point(&[2.0, 2.0]).unwrap();
        let q = circle.mass_in_box(&TorusBox::new(&w, &lo, &[2.0, 2.0]).unwrap());
        assert!((q - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn grid_partial_box() {
        let w = Window::line(2.0).unwrap();
        let g = Measure::new(
            w,
            vec![Component::Grid(
                GridDensity::from_values(&w, &[2], vec![1.0, 3.0]).unwrap(),
            )],
        )
        .unwrap();
        let lo = w.point(&[0.5]).unwrap();
        let b = TorusBox::new(&w, &lo, &[1.0]).unwrap();
        assert!((g.mass_in_box(&b) - 2.0).abs() < 1e-15);
        // wraps from 1.5 to 0.5
        let lo = w.point(&[1.5]).unwrap();
        let b = TorusBox::new(&w, &lo, &[1.0]).unwrap();
        assert!((g.mass_in_box(&b) - 2.0).abs() < 1e-15);
    }
}
