//! Synthetic phantoms and Poisson degradation.

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::linops::LinearOperator;
use crate::vector::GridVector;

/// Smooth positive field with crater-like radial bumps, values in `[0.1, 1]`.
pub fn crater_phantom(side: usize) -> GridVector {
    // (centre x, centre y, radius, depth) in unit coordinates
    const CRATERS: [(f64, f64, f64, f64); 5] = [
        (0.50, 0.48, 0.26, 1.0),
        (0.22, 0.24, 0.11, 0.7),
        (0.78, 0.30, 0.09, 0.8),
        (0.28, 0.78, 0.13, 0.6),
        (0.80, 0.76, 0.07, 0.9),
    ];
    let n = side as f64;
    let values = (0..side * side)
        .map(|i| {
            let y = ((i / side) as f64 + 0.5) / n;
            let x = ((i % side) as f64 + 0.5) / n;
            let mut v = 0.35 + 0.1 * (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin();
            for &(cx, cy, r, depth) in &CRATERS {
                let rho = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt() / r;
                // bright rim, dark floor, small central peak
                let rim = (-((rho - 1.0) / 0.18).powi(2)).exp();
                let floor = if rho < 1.0 { -0.25 * (1.0 - rho * rho) } else { 0.0 };
                let peak = 0.3 * (-(rho / 0.12).powi(2)).exp();
                v += depth * (0.45 * rim + floor + peak);
            }
            v.clamp(0.1, 1.0)
        })
        .collect();
    GridVector::square(values, side)
}

/// Nested discs with piecewise constant values in `(0, 1)` on a faint
/// background.
pub fn disc_phantom(side: usize) -> GridVector {
    // (centre x, centre y, radius, value); later discs overwrite earlier ones
    const DISCS: [(f64, f64, f64, f64); 6] = [
        (0.50, 0.50, 0.45, 0.30),
        (0.50, 0.50, 0.38, 0.55),
        (0.40, 0.42, 0.14, 0.90),
        (0.64, 0.58, 0.10, 0.15),
        (0.45, 0.68, 0.07, 0.75),
        (0.62, 0.34, 0.05, 0.95),
    ];
    let n = side as f64;
    let values = (0..side * side)
        .map(|i| {
            let y = ((i / side) as f64 + 0.5) / n;
            let x = ((i % side) as f64 + 0.5) / n;
            DISCS
                .iter()
                .filter(|&&(cx, cy, r, _)| (x - cx).powi(2) + (y - cy).powi(2) <= r * r)
                .last()
                .map_or(0.02, |d| d.3)
        })
        .collect();
    GridVector::square(values, side)
}

/// Blocky sprite on a 15 x 15 template, resampled to `side` by nearest
/// neighbour.
pub fn sprite_phantom(side: usize) -> GridVector {
    const TEMPLATE: [&str; 15] = [
        "...............",
        ".....#####.....",
        "....#########..",
        "....ooo@@o@....",
        "...o@o@@@o@@@..",
        "...o@oo@@@o@@@.",
        "...oo@@@@oooo..",
        ".....@@@@@@@...",
        "....oo#ooo#....",
        "...ooo#ooo#ooo.",
        "..oooo#####oooo",
        "..@@o#@###@#o@@",
        "..@@@######@@@.",
        "....###...###..",
        "...ooo.....ooo.",
    ];
    let values = (0..side * side)
        .map(|i| {
            let r = (i / side) * 15 / side;
            let c = (i % side) * 15 / side;
            match TEMPLATE[r].as_bytes()[c] {
                b'#' => 1.0,
                b'@' => 0.65,
                b'o' => 0.35,
                _ => 0.0,
            }
        })
        .collect();
    GridVector::square(values, side)
}

/// Seeded Poisson sampler: sequential inversion for means below 30, the
/// PTRS transformed-rejection method otherwise.
pub struct PoissonSampler {
    rng: ChaCha20Rng,
}

impl PoissonSampler {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha20Rng::seed_from_u64(seed) }
    }

    pub fn sample(&mut self, mean: f64) -> u64 {
        if !(mean > 0.0) {
            return 0;
        }
        if mean < 30.0 {
            self.inversion(mean)
        } else {
            self.ptrs(mean)
        }
    }

    fn inversion(&mut self, mean: f64) -> u64 {
        let u: f64 = self.rng.gen();
        let mut k = 0u64;
        let mut p = (-mean).exp();
        let mut cdf = p;
        while u > cdf {
            k += 1;
            p *= mean / k as f64;
            cdf += p;
            if p == 0.0 && cdf < u {
                break;
            }
        }
        k
    }

    fn ptrs(&mut self, mean: f64) -> u64 {
        let slam = mean.sqrt();
        let loglam = mean.ln();
        let b = 0.931 + 2.53 * slam;
        let a = -0.059 + 0.02483 * b;
        let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
        let v_r = 0.9277 - 3.6224 / (b - 2.0);
        loop {
            let u = self.rng.gen::<f64>() - 0.5;
            let v: f64 = self.rng.gen();
            let us = 0.5 - u.abs();
            let k = ((2.0 * a / us + b) * u + mean + 0.43).floor();
            if us >= 0.07 && v <= v_r {
                return k as u64;
            }
            if k < 0.0 || (us < 0.013 && v > us) {
                continue;
            }
            let lhs = v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln();
            let rhs = -mean + k * loglam - libm::lgamma(k + 1.0);
            if lhs <= rhs {
                return k as u64;
            }
        }
    }
}

/// `b_i = Poisson(lambda (A clean)_i) / lambda`. An infinite `lambda`
/// gives the noiseless `A clean`. Zero entries are replaced by
/// `1e-8 * mean(b)`.
pub fn poisson_degrade(clean: &[f64], op: &LinearOperator, lambda: f64, seed: u64) -> Result<Vec<f64>> {
    if !(lambda > 0.0) {
        return Err(Error::Arg(format!("noise level must be positive, got {lambda}")));
    }
    let mean = op.apply(clean)?;
    if mean.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::Arg("A clean must be nonnegative".into()));
    }
    let mut b: Vec<f64> = if lambda.is_infinite() {
        mean
    } else {
        let mut sampler = PoissonSampler::new(seed);
        mean.iter().map(|&m| sampler.sample(lambda * m) as f64 / lambda).collect()
    };
    let avg = b.iter().sum::<f64>() / b.len().max(1) as f64;
    if !(avg > 0.0) {
        return Err(Error::Arg("degraded data is identically zero".into()));
    }
    let floor = 1e-8 * avg;
    let mut zeros = 0usize;
    for v in b.iter_mut().filter(|v| **v == 0.0) {
        *v = floor;
        zeros += 1;
    }
    if zeros > 0 {
        info!("replaced {zeros} zero measurements by {floor:e}");
    }
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phantoms_in_range() {
        let c = crater_phantom(63);
        assert!(c.iter().all(|&v| (0.1..=1.0).contains(&v)));
        let d = disc_phantom(63);
        assert!(d.iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(d.iter().any(|&v| v > 0.5));
        let s = sprite_phantom(15);
        assert!(s.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(s.len(), 225);
    }

    #[test]
    fn sampler_moments() {
        for mean in [0.5, 4.0, 29.0, 30.0, 250.0, 1e5] {
            let mut s = PoissonSampler::new(11);
            let n = 20000;
            let draws: Vec<f64> = (0..n).map(|_| s.sample(mean) as f64).collect();
            let m = draws.iter().sum::<f64>() / n as f64;
            let var = draws.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (mean / n as f64).sqrt();
            assert!((m - mean).abs() < 4.0 * se, "mean {mean}: sample mean {m}");
            assert!((var / mean - 1.0).abs() < 0.1, "mean {mean}: sample variance {var}");
        }
    }

    #[test]
    fn degrade_is_seeded() {
        let op = LinearOperator::Identity(49);
        let x = crater_phantom(7);
        let a = poisson_degrade(&x, &op, 20.0, 3).unwrap();
        let b = poisson_degrade(&x, &op, 20.0, 3).unwrap();
        let c = poisson_degrade(&x, &op, 20.0, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.iter().all(|&v| v > 0.0));
        assert!(poisson_degrade(&x, &op, 0.0, 3).is_err());
    }
}
