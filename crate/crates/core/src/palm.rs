//! Monte Carlo checks of balance, of the extra-point shift coupling for
//! Poisson destinations, and of translation equivariance.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::allocation::Allocation;
use crate::error::{config, Error, Result};
use crate::measures::{elementize, Measure, Point, TorusBox, Window, MAX_DIM};
use crate::sampling::{derive_seed, poisson_points, rng_from_seed, SimRng};
use crate::stable_alloc::{allocate_elements, locate, StableParams};

#[derive(Debug, Clone, PartialEq)]
pub struct RegionBalance {
    pub region: TorusBox,
    pub image_mass: f64,
    pub eta_mass: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalanceReport {
    pub regions: Vec<RegionBalance>,
    /// Largest `|image - eta|` over the regions, relative to the total of `eta`.
    pub max_relative: f64,
    pub unallocated_mass: f64,
    /// `|allocated - eta total| / eta total`.
    pub full_window: f64,
}

/// Compares the image of the source with `eta` on each region.
pub fn balance_check(alloc: &Allocation, eta: &Measure, regions: &[TorusBox]) -> BalanceReport {
    let total = eta.total_mass();
    let scale = if total > 0.0 { total } else { 1.0 };
    let regions: Vec<RegionBalance> = regions
        .iter()
        .map(|b| RegionBalance {
            region: *b,
            image_mass: alloc.image_mass_in_box(b),
            eta_mass: eta.mass_in_box(b),
        })
        .collect();
    let max_relative = regions
        .iter()
        .map(|r| (r.image_mass - r.eta_mass).abs() / scale)
        .fold(0.0, f64::max);
    BalanceReport {
        regions,
        max_relative,
        unallocated_mass: alloc.unallocated_mass(),
        full_window: (alloc.allocated_mass() - total).abs() / scale,
    }
}

/// Random boxes with uniform corners and extents in `[min_side, side]`.
pub fn random_boxes(w: &Window, count: usize, min_side: f64, rng: &mut SimRng) -> Vec<TorusBox> {
    (0..count)
        .map(|_| {
            let mut lo = [0.0; MAX_DIM];
            let mut size = [0.0; MAX_DIM];
            for k in 0..w.dim() {
                let side = w.side(k);
                lo[k] = rng.random::<f64>() * side;
                let m = min_side.min(side);
                size[k] = m + rng.random::<f64>() * (side - m);
            }
            let lo = w.wrap_raw(lo);
            TorusBox::new(w, &lo, &size[..w.dim()]).expect("box fits the window")
        })
        .collect()
}

/// Asymptotic Kolmogorov distribution tail `P(K > lambda)`.
pub fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = libm::exp(-2.0 * kf * kf * lambda * lambda);
        sum += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub distance: f64,
    pub p_value: f64,
}

/// Two-sample Kolmogorov-Smirnov test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return config("both samples must be nonempty");
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return config("samples must not contain NaN");
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = libm::sqrt(na * nb / (na + nb));
    let lambda = (ne + 0.12 + 0.11 / ne) * d;
    Ok(KsResult {
        distance: d,
        p_value: kolmogorov_tail(lambda),
    })
}

/// Statistic of a point configuration seen from the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Statistic {
    /// Points within distance `radius`, the origin point included.
    CountInBall { radius: f64 },
    /// Distance from the origin point to the nearest other point.
    NearestDistance,
}

impl Statistic {
    pub fn name(&self) -> String {
        match self {
            Statistic::CountInBall { radius } => alloc::format!("count_in_ball(r={radius})"),
            Statistic::NearestDistance => String::from("nearest_distance"),
        }
    }

    /// `dists` holds the distances from the origin point to the other points.
    fn eval(&self, dists: impl Iterator<Item = f64>) -> f64 {
        match self {
            Statistic::CountInBall { radius } => 1.0 + dists.filter(|d| d <= radius).count() as f64,
            Statistic::NearestDistance => dists.fold(f64::INFINITY, f64::min),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtraPointParams {
    pub window: Window,
    pub intensity: f64,
    pub samples: usize,
    pub seed: u64,
    pub resolution: f64,
    pub statistic: Statistic,
    /// The test passes when the p-value is at least this.
    pub threshold: f64,
    pub stable: StableParams,
}

impl ExtraPointParams {
    pub fn new(window: Window, intensity: f64, samples: usize, seed: u64) -> Self {
        ExtraPointParams {
            window,
            intensity,
            samples,
            seed,
            resolution: 0.1,
            statistic: Statistic::CountInBall { radius: 1.0 },
            threshold: 0.01,
            stable: StableParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub samples: usize,
    /// Samples dropped because the allocation did not converge or was empty.
    pub excluded: usize,
    pub statistic: String,
    pub reference: Vec<f64>,
    pub shifted: Vec<f64>,
    pub ks_distance: f64,
    pub p_value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl ExperimentReport {
    pub fn mean_reference(&self) -> f64 {
        mean(&self.reference)
    }

    pub fn mean_shifted(&self) -> f64 {
        mean(&self.shifted)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Statistic of a fresh Poisson sample with an extra point at the origin.
pub fn reference_sample(p: &ExtraPointParams, seed: u64) -> Result<f64> {
    let w = &p.window;
    let mut rng = rng_from_seed(seed);
    let origin = w.point(&[0.0; MAX_DIM][..w.dim()])?;
    let pts = poisson_points(w, p.intensity, None, &mut rng)?;
    Ok(p.statistic.eval(pts.iter().map(|q| w.dist(&origin, q))))
}

/// Statistic of the Poisson sample recentred at the destination of the
/// element containing the origin, or `None` for an excluded sample.
pub fn shifted_sample(p: &ExtraPointParams, seed: u64) -> Result<Option<f64>> {
    let w = &p.window;
    let mut rng = rng_from_seed(seed);
    let pts = poisson_points(w, p.intensity, None, &mut rng)?;
    if pts.is_empty() {
        return Ok(None);
    }
    let eta = crate::measures::AtomMeasure::unit(&pts)?;
    let xi = Measure::lebesgue(*w, eta.total_mass() / w.volume())?;
    let elements = elementize(&xi, p.resolution)?;
    let out = match allocate_elements(w, &elements, &eta, 1.0, &p.stable) {
        Ok(o) => o,
        Err(Error::NonConverged { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    // element 0 is the cell with its lower corner at the origin
    let Some(centre) = locate(&out.allocation, 0, 0.5) else {
        return Ok(None);
    };
    let mut at_centre = false;
    let dists = eta.atoms().iter().filter_map(|a| {
        if !at_centre && a.location == centre {
            at_centre = true;
            None
        } else {
            Some(w.dist(&centre, &a.location))
        }
    });
    Ok(Some(p.statistic.eval(dists)))
}

/// Compares the recentred ensemble with the extra-point reference ensemble.
pub fn extra_point_experiment(p: &ExtraPointParams) -> Result<ExperimentReport> {
    if p.samples < 100 {
        return config("the extra-point experiment needs at least 100 samples");
    }
    let mut shifted = Vec::with_capacity(p.samples);
    let mut reference = Vec::with_capacity(p.samples);
    let mut excluded = 0;
    for i in 0..p.samples as u64 {
        match shifted_sample(p, derive_seed(p.seed, 2 * i))? {
            Some(v) => shifted.push(v),
            None => excluded += 1,
        }
        reference.push(reference_sample(p, derive_seed(p.seed, 2 * i + 1))?);
    }
    report(p, shifted, reference, excluded)
}

/// Builds the report from precomputed per-sample statistics.
pub fn report(
    p: &ExtraPointParams,
    shifted: Vec<f64>,
    reference: Vec<f64>,
    excluded: usize,
) -> Result<ExperimentReport> {
    let ks = ks_two_sample(&shifted, &reference)?;
    Ok(ExperimentReport {
        samples: reference.len(),
        excluded,
        statistic: p.statistic.name(),
        ks_distance: ks.distance,
        p_value: ks.p_value,
        threshold: p.threshold,
        pass: ks.p_value >= p.threshold,
        reference,
        shifted,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub repetitions: usize,
    pub rejections: usize,
    pub rate: f64,
    /// Three-sigma binomial band around the nominal level.
    pub band: (f64, f64),
    pub pass: bool,
}

/// Rejection rate of the test between two independent reference ensembles.
pub fn null_calibration(p: &ExtraPointParams, repetitions: usize) -> Result<CalibrationReport> {
    if repetitions == 0 {
        return config("null calibration needs at least one repetition");
    }
    let mut rejections = 0;
    for r in 0..repetitions as u64 {
        let master = derive_seed(p.seed ^ 0x6e75_6c6c, r);
        let mut a = Vec::with_capacity(p.samples);
        let mut b = Vec::with_capacity(p.samples);
        for i in 0..p.samples as u64 {
            a.push(reference_sample(p, derive_seed(master, 2 * i))?);
            b.push(reference_sample(p, derive_seed(master, 2 * i + 1))?);
        }
        if ks_two_sample(&a, &b)?.p_value < p.threshold {
            rejections += 1;
        }
    }
    let n = repetitions as f64;
    let sigma = libm::sqrt(p.threshold * (1.0 - p.threshold) / n);
    let band = (
        (p.threshold - 3.0 * sigma).max(0.0),
        p.threshold + 3.0 * sigma,
    );
    let rate = rejections as f64 / n;
    Ok(CalibrationReport {
        repetitions,
        rejections,
        rate,
        band,
        pass: rate >= band.0 && rate <= band.1,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivarianceReport {
    pub elements: usize,
    /// Elements of the base run with no exactly shifted counterpart.
    pub unmatched: usize,
    /// Matched elements whose pieces differ after shifting.
    pub mismatches: usize,
    pub max_mass_difference: f64,
    pub tie_breaks_base: usize,
    pub tie_breaks_shifted: usize,
    pub exact: bool,
    /// Exact, or inexact with tie-breaks firing in some run.
    pub pass: bool,
}

fn key(p: &Point) -> [u64; MAX_DIM] {
    let r = p.raw();
    [r[0].to_bits(), r[1].to_bits()]
}

/// Compares `shifted` with `base` translated by `v`. Element locations and
/// destinations must agree bit for bit, piece masses within `mass_tol`.
pub fn compare_shifted(
    base: &Allocation,
    shifted: &Allocation,
    v: &[f64; MAX_DIM],
    mass_tol: f64,
) -> (usize, usize, f64) {
    let w = &base.window;
    let index: BTreeMap<[u64; MAX_DIM], usize> = shifted
        .entries
        .iter()
        .enumerate()
        .map(|(k, e)| (key(&e.element.location), k))
        .collect();
    let mut unmatched = 0;
    let mut mismatches = 0;
    let mut max_diff: f64 = 0.0;
    for e in &base.entries {
        let moved = w.shift(&e.element.location, v);
        let Some(&k) = index.get(&key(&moved)) else {
            unmatched += 1;
            continue;
        };
        let s = &shifted.entries[k];
        let same = e.pieces.len() == s.pieces.len()
            && e.pieces.iter().zip(&s.pieces).all(|(a, b)| {
                let d = (a.mass - b.mass).abs();
                max_diff = max_diff.max(d);
                w.shift(&a.location, v) == b.location && d <= mass_tol * e.offered.max(1e-300)
            });
        if !same {
            mismatches += 1;
        }
    }
    (unmatched, mismatches, max_diff)
}

/// Runs a scenario unshifted and shifted by `v` and compares the two.
/// `run` returns the allocation and its tie-break count for a given shift.
pub fn equivariance_check<F>(
    run: F,
    v: &[f64; MAX_DIM],
    mass_tol: f64,
) -> Result<EquivarianceReport>
where
    F: Fn(&[f64; MAX_DIM]) -> Result<(Allocation, usize)>,
{
    let (base, tb0) = run(&[0.0; MAX_DIM])?;
    let (moved, tb1) = run(v)?;
    let (unmatched, mismatches, max_mass_difference) = compare_shifted(&base, &moved, v, mass_tol);
    let exact = unmatched == 0 && mismatches == 0 && base.entries.len() == moved.entries.len();
    Ok(EquivarianceReport {
        elements: base.entries.len(),
        unmatched,
        mismatches,
        max_mass_difference,
        tie_breaks_base: tb0,
        tie_breaks_shifted: tb1,
        exact,
        pass: exact || tb0 + tb1 > 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{Atom, AtomMeasure};
    use crate::stable_alloc::run_stable_allocation;
    use alloc::vec;

    #[test]
    fn kolmogorov_tail_values() {
        assert!((kolmogorov_tail(1.36) - 0.0494).abs() < 1e-3);
        assert!((kolmogorov_tail(1.63) - 0.0098).abs() < 1e-3);
        assert_eq!(kolmogorov_tail(0.0), 1.0);
        assert!(kolmogorov_tail(5.0) < 1e-20);
    }

    #[test]
    fn ks_identical_and_disjoint() {
        let a: Vec<f64> = (0..200).map(|i| i as f64).collect();
        let r = ks_two_sample(&a, &a).unwrap();
        assert_eq!(r.distance, 0.0);
        assert_eq!(r.p_value, 1.0);
        let b: Vec<f64> = (0..200).map(|i| 1000.0 + i as f64).collect();
        let r = ks_two_sample(&a, &b).unwrap();
        assert_eq!(r.distance, 1.0);
        assert!(r.p_value < 1e-20);
        assert!(ks_two_sample(&[], &a).is_err());
    }

    #[test]
    fn ks_handles_ties() {
        let a = [1.0, 1.0, 2.0, 2.0];
        let b = [1.0, 2.0, 2.0, 2.0];
        assert!((ks_two_sample(&a, &b).unwrap().distance - 0.25).abs() < 1e-15);
    }

    #[test]
    fn statistic_counts_the_origin() {
        let s = Statistic::CountInBall { radius: 1.0 };
        assert_eq!(s.eval([0.5, 1.0, 1.5].into_iter()), 3.0);
        assert_eq!(Statistic::NearestDistance.eval([0.7, 0.2].into_iter()), 0.2);
    }

    fn two_atoms() -> (Window, AtomMeasure) {
        let w = Window::plane(2.0, 1.0).unwrap();
        let eta = AtomMeasure::new(vec![
            Atom {
                location: w.point(&[0.5, 0.5]).unwrap(),
                mass: 1.0,
            },
            Atom {
                location: w.point(&[1.5, 0.5]).unwrap(),
                mass: 1.0,
            },
        ])
        .unwrap();
        (w, eta)
    }

    #[test]
    fn balance_of_an_exact_allocation() {
        let (w, eta) = two_atoms();
        let xi = Measure::lebesgue(w, 1.0).unwrap();
        let out = run_stable_allocation(&xi, &eta, 1.0, 0.125, &StableParams::default()).unwrap();
        let eta_m = Measure::atoms(w, eta.clone()).unwrap();
        let atom_box = TorusBox::new(&w, &eta.atoms()[0].location, &[0.01, 0.01]).unwrap();
        let rep = balance_check(&out.allocation, &eta_m, &[atom_box, TorusBox::full(&w)]);
        assert!(rep.max_relative <= 1e-6);
        assert!(rep.full_window <= 1e-12);
        assert!(rep.unallocated_mass <= 1e-12);
    }

    #[test]
    fn full_window_equals_unallocated_share() {
        let (w, eta) = two_atoms();
        let xi = Measure::lebesgue(w, 1.0).unwrap();
        let out = run_stable_allocation(&xi, &eta, 0.5, 0.125, &StableParams::default()).unwrap();
        let eta_m = Measure::atoms(w, eta).unwrap();
        let rep = balance_check(&out.allocation, &eta_m, &[TorusBox::full(&w)]);
        assert!((rep.full_window - rep.unallocated_mass / 2.0).abs() < 1e-12);
    }

    #[test]
    fn random_boxes_fit() {
        let w = Window::plane(4.0, 2.0).unwrap();
        let mut rng = rng_from_seed(3);
        for b in random_boxes(&w, 50, 0.5, &mut rng) {
            assert!(b.size[0] >= 0.5 && b.size[0] <= 4.0);
            assert!(b.size[1] >= 0.5 && b.size[1] <= 2.0);
        }
    }

    #[test]
    fn zero_shift_is_exact() {
        let (w, eta) = two_atoms();
        let xi = Measure::lebesgue(w, 1.0).unwrap();
        let run = |_: &[f64; MAX_DIM]| {
            let o = run_stable_allocation(&xi, &eta, 1.0, 0.125, &StableParams::default())?;
            Ok((o.allocation, o.tie_breaks))
        };
        let rep = equivariance_check(run, &[0.0; MAX_DIM], 0.0).unwrap();
        assert!(rep.exact && rep.pass);
    }

    #[test]
    fn too_few_samples_is_an_error() {
        let p = ExtraPointParams::new(Window::plane(8.0, 8.0).unwrap(), 1.0, 10, 1);
        assert!(extra_point_experiment(&p).is_err());
    }

    #[test]
    fn reference_mean_matches_the_palm_count() {
        let mut p = ExtraPointParams::new(Window::plane(8.0, 8.0).unwrap(), 1.0, 2000, 11);
        p.statistic = Statistic::CountInBall { radius: 1.0 };
        let v: Vec<f64> = (0..2000u64)
            .map(|i| reference_sample(&p, derive_seed(5, i)).unwrap())
            .collect();
        let m = mean(&v);
        // 1 + pi with standard error sqrt(pi / 2000) ~ 0.04
        assert!((m - (1.0 + core::f64::consts::PI)).abs() < 0.16, "{m}");
    }
}
