//! Cumulative mass functions, quantiles and the first-crossing interval
//! allocation on a line.

use alloc::vec::Vec;

use crate::error::{config, Error, Result};
use crate::measures::{Component, CurvePiece, Measure};

/// Right-continuous, nondecreasing, piecewise-linear function with jumps.
///
/// At knot `k` the function jumps from `before[k]` to `at[k]`; between knots
/// it is linear from `at[k]` to `before[k + 1]`. It equals `before[0]` left of
/// the first knot and `at[last]` right of the last one.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulativeFunction {
    knots: Vec<f64>,
    before: Vec<f64>,
    at: Vec<f64>,
}

/// Mass spread uniformly over `[start, end]`, or an atom when `start == end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassInterval {
    pub start: f64,
    pub end: f64,
    pub mass: f64,
}

impl CumulativeFunction {
    /// Sum of the cumulative functions of the given pieces.
    pub fn from_intervals(pieces: &[MassInterval]) -> Result<Self> {
        // (position, slope change, jump)
        let mut events: Vec<(f64, f64, f64)> = Vec::with_capacity(2 * pieces.len());
        for p in pieces {
            if !(p.mass >= 0.0 && p.mass.is_finite()) || !(p.end >= p.start) {
                return config("mass intervals need start <= end and finite nonnegative mass");
            }
            if p.mass == 0.0 {
                continue;
            }
            if p.end == p.start {
                events.push((p.start, 0.0, p.mass));
            } else {
                let slope = p.mass / (p.end - p.start);
                events.push((p.start, slope, 0.0));
                events.push((p.end, -slope, 0.0));
            }
        }
        events.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut f = CumulativeFunction {
            knots: Vec::new(),
            before: Vec::new(),
            at: Vec::new(),
        };
        let (mut value, mut slope) = (0.0f64, 0.0f64);
        let mut i = 0;
        while i < events.len() {
            let x = events[i].0;
            if let Some(&last) = f.knots.last() {
                value += slope * (x - last);
            }
            let left = value;
            while i < events.len() && events[i].0 == x {
                slope += events[i].1;
                value += events[i].2;
                i += 1;
            }
            if slope.abs() < 1e-12 * (1.0 + value) {
                slope = 0.0;
            }
            f.knots.push(x);
            f.before.push(left);
            f.at.push(value);
        }
        // the last knot carries the exact total
        if let Some(last) = f.at.last_mut() {
            let total: f64 = pieces.iter().map(|p| p.mass).sum();
            let jump = *last - f.before[f.before.len() - 1];
            *last = total;
            let n = f.before.len();
            f.before[n - 1] = total - jump;
        }
        Ok(f)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn total(&self) -> f64 {
        self.at.last().copied().unwrap_or(0.0)
    }

    /// `G(y)`: mass of `(-inf, y]`.
    pub fn value(&self, y: f64) -> f64 {
        let k = self.knots.partition_point(|&x| x <= y);
        if k == 0 {
            return self.before.first().copied().unwrap_or(0.0);
        }
        self.segment_value(k - 1, y)
    }

    /// `G(y-)`: mass of `(-inf, y)`.
    pub fn value_left(&self, y: f64) -> f64 {
        let k = self.knots.partition_point(|&x| x < y);
        if k == 0 {
            return self.before.first().copied().unwrap_or(0.0);
        }
        self.segment_value(k - 1, y)
    }

    /// Value at `y` on the linear piece starting at knot `k` (`y >= knots[k]`).
    fn segment_value(&self, k: usize, y: f64) -> f64 {
        if y == self.knots[k] || k + 1 == self.knots.len() {
            return self.at[k];
        }
        let (x0, x1) = (self.knots[k], self.knots[k + 1]);
        let (v0, v1) = (self.at[k], self.before[k + 1]);
        (v0 + (v1 - v0) * (y - x0) / (x1 - x0)).min(v1)
    }

    /// Generalized inverse `inf { y : G(y) >= u }`.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        let total = self.total();
        if !(u >= 0.0 && u <= total * (1.0 + 1e-12)) {
            return Err(Error::Domain(alloc::format!(
                "quantile level {u} outside [0, {total}]"
            )));
        }
        if self.knots.is_empty() {
            return Err(Error::Domain("quantile of the zero measure".into()));
        }
        let u = u.min(total);
        let k = self.at.partition_point(|&v| v < u);
        let k = k.min(self.knots.len() - 1);
        if k == 0 || self.before[k] < u {
            return Ok(self.knots[k]);
        }
        // u lies on the linear piece between knots k-1 and k
        let (x0, x1) = (self.knots[k - 1], self.knots[k]);
        let (v0, v1) = (self.at[k - 1], self.before[k]);
        if v1 <= v0 {
            return Ok(x1);
        }
        Ok((x0 + (x1 - x0) * (u - v0) / (v1 - v0)).clamp(x0, x1))
    }
}

/// Mass intervals of a one-dimensional measure in coordinates measured from
/// `origin` into the window, so every interval lies in `[0, side]`.
pub fn line_intervals(m: &Measure, origin: f64) -> Result<Vec<MassInterval>> {
    let w = m.window();
    if w.dim() != 1 {
        return config("expected a one-dimensional measure");
    }
    let side = w.side(0);
    let local = |x: f64| {
        let mut r = libm::fmod(x - origin, side);
        if r < 0.0 {
            r += side;
        }
        if r >= side {
            0.0
        } else {
            r
        }
    };
    let mut out = Vec::new();
    // split a window interval [a, b) at the origin seam
    let mut push = |a: f64, len: f64, mass: f64| {
        let s = local(a);
        if s + len <= side {
            out.push(MassInterval {
                start: s,
                end: s + len,
                mass,
            });
        } else {
            let first = side - s;
            out.push(MassInterval {
                start: s,
                end: side,
                mass: mass * first / len,
            });
            out.push(MassInterval {
                start: 0.0,
                end: len - first,
                mass: mass * (len - first) / len,
            });
        }
    };
    for c in m.components() {
        match c {
            Component::Atoms(a) => {
                for atom in a.atoms() {
                    push(atom.location.x(), 0.0, atom.mass);
                }
            }
            Component::Grid(g) => {
                let n = g.cells()[0];
                let h = side / n as f64;
                for (i, &d) in g.density().iter().enumerate() {
                    if d > 0.0 {
                        push(i as f64 * h, h, d * h);
                    }
                }
            }
            Component::Curve(cd) => {
                for p in cd.pieces() {
                    if let CurvePiece::Segment {
                        start,
                        end,
                        density,
                    } = *p
                    {
                        let (a, b) = (start[0].min(end[0]), start[0].max(end[0]));
                        let mut len = b - a;
                        let mut a = a;
                        // a segment longer than the window wraps onto itself
                        while len > side {
                            push(a, side, density * side);
                            a += side;
                            len -= side;
                        }
                        if len > 0.0 {
                            push(a, len, density * len);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Exact cumulative mass function of a one-dimensional measure, measured
/// from `origin` (which becomes coordinate 0).
pub fn cdf(m: &Measure, origin: f64) -> Result<CumulativeFunction> {
    CumulativeFunction::from_intervals(&line_intervals(m, origin)?)
}

/// Generalized inverse of `g` at level `u`.
pub fn quantile(g: &CumulativeFunction, u: f64) -> Result<f64> {
    g.quantile(u)
}

/// `integral of min(f, g)` over the line for two piecewise-constant densities
/// given as (non-atomic) mass intervals.
pub fn shared_mass(a: &[MassInterval], b: &[MassInterval]) -> f64 {
    let mut cuts: Vec<f64> = a.iter().chain(b).flat_map(|p| [p.start, p.end]).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let density_at = |list: &[MassInterval], x: f64| -> f64 {
        list.iter()
            .filter(|p| p.end > p.start && p.start <= x && x < p.end)
            .map(|p| p.mass / (p.end - p.start))
            .sum()
    };
    cuts.windows(2)
        .map(|c| {
            let mid = 0.5 * (c[0] + c[1]);
            density_at(a, mid).min(density_at(b, mid)) * (c[1] - c[0])
        })
        .sum()
}

/// Checks that `xi` and `eta` put no common mass anywhere, up to `1e-6` of
/// their total mass. Atoms of `eta` never overlap the diffuse `xi`.
pub fn check_singular(xi: &Measure, eta: &Measure) -> Result<()> {
    let a = line_intervals(xi, 0.0)?;
    let b: Vec<MassInterval> = line_intervals(&eta.diffuse_part(), 0.0)?;
    let shared = shared_mass(&a, &b);
    let total = xi.total_mass() + eta.total_mass();
    if shared > 1e-6 * total {
        return Err(Error::SingularityViolation {
            shared_mass: shared,
            total,
        });
    }
    Ok(())
}

/// First-crossing allocation on a non-periodic line:
/// `inf { t > x : xi([x, t]) <= eta([x, t]) }`, or `None` when the scan leaves
/// the window before a crossing.
///
/// The window `[0, side)` of `xi` is read without wrap-around. With
/// `require_singular`, the measures are first checked for common mass.
pub fn interval_allocation(
    xi: &Measure,
    eta: &Measure,
    x: f64,
    require_singular: bool,
) -> Result<Option<f64>> {
    if !xi.is_diffuse() {
        return config("the source of an interval allocation must be diffuse");
    }
    if xi.window() != eta.window() {
        return config("source and destination live on different windows");
    }
    if require_singular {
        check_singular(xi, eta)?;
    }
    let f = cdf(xi, 0.0)?;
    let g = cdf(eta, 0.0)?;
    Ok(first_crossing(&f, &g, x, xi.window().side(0)))
}

/// First `t > x` (up to `end`) with `F(t) - F(x-) <= G(t) - G(x-)`.
pub fn first_crossing(
    f: &CumulativeFunction,
    g: &CumulativeFunction,
    x: f64,
    end: f64,
) -> Option<f64> {
    let (f0, g0) = (f.value_left(x), g.value_left(x));
    let d = |t: f64| (f.value(t) - f0) - (g.value(t) - g0);
    let d_left = |t: f64| (f.value_left(t) - f0) - (g.value_left(t) - g0);
    if g.value(x) > g0 {
        // an atom at x absorbs the site at once
        return Some(x);
    }
    let mut cuts: Vec<f64> = f
        .knots()
        .iter()
        .chain(g.knots())
        .copied()
        .filter(|&t| t > x && t < end)
        .collect();
    cuts.push(end);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut p = x;
    let mut dp = d(x);
    for q in cuts {
        // D is linear on (p, q), from dp to dq
        let dq = d_left(q);
        if dp < 0.0 || (dp == 0.0 && dq <= 0.0) {
            return Some(p);
        }
        if dq <= 0.0 {
            return Some(p + (q - p) * dp / (dp - dq));
        }
        if q >= end {
            break;
        }
        let at = d(q);
        if at <= 0.0 {
            return Some(q);
        }
        p = q;
        dp = at;
    }
    None
}
