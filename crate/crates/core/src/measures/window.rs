use core::cmp::Ordering;

use crate::error::{config, Result};

/// Largest supported dimension.
pub const MAX_DIM: usize = 2;

/// A periodic window (flat torus) with one period per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    dim: usize,
    sides: [f64; MAX_DIM],
}

impl Window {
    pub fn new(sides: &[f64]) -> Result<Self> {
        if sides.is_empty() || sides.len() > MAX_DIM {
            return config(alloc::format!(
                "window dimension must be 1 or 2, got {}",
                sides.len()
            ));
        }
        let mut s = [0.0; MAX_DIM];
        for (k, &side) in sides.iter().enumerate() {
            if !(side > 0.0 && side.is_finite()) {
                return config(alloc::format!(
                    "window side {k} must be positive, got {side}"
                ));
            }
            s[k] = side;
        }
        Ok(Window {
            dim: sides.len(),
            sides: s,
        })
    }

    pub fn line(side: f64) -> Result<Self> {
        Self::new(&[side])
    }

    pub fn plane(width: f64, height: f64) -> Result<Self> {
        Self::new(&[width, height])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sides(&self) -> &[f64] {
        &self.sides[..self.dim]
    }

    pub fn side(&self, axis: usize) -> f64 {
        self.sides[axis]
    }

    pub fn max_side(&self) -> f64 {
        self.sides().iter().copied().fold(0.0, f64::max)
    }

    pub fn volume(&self) -> f64 {
        self.sides().iter().product()
    }

    /// Length of the longest shortest path on the torus.
    pub fn diameter(&self) -> f64 {
        let sq: f64 = self.sides().iter().map(|s| 0.25 * s * s).sum();
        libm::sqrt(sq)
    }

    /// Canonical point for the given coordinates (reduced modulo the sides).
    pub fn point(&self, coords: &[f64]) -> Result<Point> {
        if coords.len() != self.dim {
            return config(alloc::format!(
                "point has {} coordinates in a {}-dimensional window",
                coords.len(),
                self.dim
            ));
        }
        let mut c = [0.0; MAX_DIM];
        for (k, &x) in coords.iter().enumerate() {
            if !x.is_finite() {
                return config("point coordinate is not finite");
            }
            c[k] = x;
        }
        Ok(self.wrap_raw(c))
    }

    /// Reduces raw coordinates into `[0, side)` on every axis.
    pub(crate) fn wrap_raw(&self, mut c: [f64; MAX_DIM]) -> Point {
        for k in 0..self.dim {
            c[k] = reduce(c[k], self.sides[k]);
        }
        for x in c.iter_mut().skip(self.dim) {
            *x = 0.0;
        }
        Point {
            coords: c,
            dim: self.dim as u8,
        }
    }

    /// Shortest displacement vector `to - from` over periodic images,
    /// each component in `(-side/2, side/2]`.
    pub fn displacement(&self, from: &Point, to: &Point) -> [f64; MAX_DIM] {
        let mut d = [0.0; MAX_DIM];
        for k in 0..self.dim {
            let side = self.sides[k];
            let mut v = to.coords[k] - from.coords[k];
            if v > 0.5 * side {
                v -= side;
            } else if v <= -0.5 * side {
                v += side;
            }
            d[k] = v;
        }
        d
    }

    /// Distance without the dimension check; callers guarantee both points
    /// belong to this window.
    pub(crate) fn dist(&self, p: &Point, q: &Point) -> f64 {
        let d = self.displacement(p, q);
        let sq: f64 = d[..self.dim].iter().map(|v| v * v).sum();
        libm::sqrt(sq)
    }

    /// Translates a point by `v` and reduces it.
    pub fn shift(&self, p: &Point, v: &[f64; MAX_DIM]) -> Point {
        let mut c = p.coords;
        for k in 0..self.dim {
            c[k] += v[k];
        }
        self.wrap_raw(c)
    }

    /// Coordinates of `p - origin` reduced into `[0, side)`.
    pub fn local(&self, origin: &Point, p: &Point) -> [f64; MAX_DIM] {
        let mut c = [0.0; MAX_DIM];
        for k in 0..self.dim {
            c[k] = reduce(p.coords[k] - origin.coords[k], self.sides[k]);
        }
        c
    }

    pub(crate) fn check(&self, p: &Point) -> Result<()> {
        if p.dim() != self.dim {
            return config(alloc::format!(
                "dimension mismatch: point is {}-dimensional, window is {}-dimensional",
                p.dim(),
                self.dim
            ));
        }
        Ok(())
    }
}

fn reduce(x: f64, side: f64) -> f64 {
    let mut r = libm::fmod(x, side);
    if r < 0.0 {
        r += side;
    }
    // tiny negative inputs round up to `side`
    if r >= side {
        0.0
    } else {
        r
    }
}

/// A location in a periodic window, stored as its canonical representative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    coords: [f64; MAX_DIM],
    dim: u8,
}

impl Point {
    pub fn coords(&self) -> &[f64] {
        &self.coords[..self.dim as usize]
    }

    pub fn raw(&self) -> [f64; MAX_DIM] {
        self.coords
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn x(&self) -> f64 {
        self.coords[0]
    }

    pub fn y(&self) -> f64 {
        self.coords[1]
    }

    /// Lexicographic comparison of canonical coordinates.
    pub fn lex_cmp(&self, other: &Point) -> Ordering {
        lex_cmp(&self.coords, &other.coords)
    }
}

pub(crate) fn lex_cmp(a: &[f64; MAX_DIM], b: &[f64; MAX_DIM]) -> Ordering {
    for k in 0..MAX_DIM {
        match a[k].total_cmp(&b[k]) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

/// Euclidean distance between `p` and `q` minimized over periodic images.
pub fn torus_distance(p: &Point, q: &Point, w: &Window) -> Result<f64> {
    w.check(p)?;
    w.check(q)?;
    Ok(w.dist(p, q))
}
