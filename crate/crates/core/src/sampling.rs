//! Seeded sampling of Poisson point processes on a window.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{config, Result};
use crate::measures::{AtomMeasure, Point, Window, MAX_DIM};

/// The generator used for every random draw in the crate.
pub type SimRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent sub-seed number `index` of `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index.wrapping_add(1));
    rng.random()
}

/// Poisson-distributed count with the given mean.
pub fn poisson_count(mean: f64, rng: &mut SimRng) -> Result<u64> {
    if !(mean >= 0.0 && mean.is_finite()) {
        return config(alloc::format!(
            "Poisson mean must be finite and nonnegative, got {mean}"
        ));
    }
    if mean == 0.0 {
        return Ok(0);
    }
    let d = Poisson::new(mean).map_err(|e| crate::Error::Config(alloc::format!("{e}")))?;
    Ok(d.sample(rng) as u64)
}

/// Uniform point in the window. With `quantum`, coordinates are rounded down
/// to multiples of it (dyadic quanta keep shifted copies bit-exact).
pub fn uniform_point(w: &Window, quantum: Option<f64>, rng: &mut SimRng) -> Point {
    let mut c = [0.0; MAX_DIM];
    for (k, ck) in c.iter_mut().enumerate().take(w.dim()) {
        let mut v = rng.random::<f64>() * w.side(k);
        if let Some(q) = quantum {
            v = libm::floor(v / q) * q;
        }
        *ck = v;
    }
    w.point(&c[..w.dim()])
        .expect("coordinates match the window")
}

/// Homogeneous Poisson process of the given intensity on the window.
pub fn poisson_points(
    w: &Window,
    intensity: f64,
    quantum: Option<f64>,
    rng: &mut SimRng,
) -> Result<Vec<Point>> {
    let n = poisson_count(intensity * w.volume(), rng)?;
    Ok((0..n).map(|_| uniform_point(w, quantum, rng)).collect())
}

/// Unit-mass atoms at a Poisson sample; coincident points merge.
pub fn poisson_atoms(
    w: &Window,
    intensity: f64,
    quantum: Option<f64>,
    rng: &mut SimRng,
) -> Result<AtomMeasure> {
    AtomMeasure::unit(&poisson_points(w, intensity, quantum, rng)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_sample() {
        let w = Window::plane(4.0, 4.0).unwrap();
        let a = poisson_points(&w, 2.0, None, &mut rng_from_seed(9)).unwrap();
        let b = poisson_points(&w, 2.0, None, &mut rng_from_seed(9)).unwrap();
        assert_eq!(a, b);
        assert_ne!(
            a,
            poisson_points(&w, 2.0, None, &mut rng_from_seed(10)).unwrap()
        );
    }

    #[test]
    fn derived_seeds_differ() {
        let s: Vec<u64> = (0..100).map(|i| derive_seed(5, i)).collect();
        for i in 0..s.len() {
            for j in i + 1..s.len() {
                assert_ne!(s[i], s[j]);
            }
        }
        assert_eq!(derive_seed(5, 3), derive_seed(5, 3));
    }

    #[test]
    fn quantized_points_are_multiples() {
        let w = Window::line(8.0).unwrap();
        let q = 1.0 / 1024.0;
        for p in poisson_points(&w, 5.0, Some(q), &mut rng_from_seed(1)).unwrap() {
            let k = p.x() / q;
            assert_eq!(k, libm::floor(k));
        }
    }
}
