//! Scalar samplers used by the electronic stage.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Rates at or above this use the rounded normal approximation.
pub const POISSON_NORMAL_THRESHOLD: f64 = 50.0;

/// One Poisson draw. Exact CDF inversion below the threshold, otherwise
/// `round(Normal(λ, √λ))` clamped at zero. Non-positive rates give 0.
pub fn poisson<R: Rng + ?Sized>(rng: &mut R, lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 0.0;
    }
    if lambda < POISSON_NORMAL_THRESHOLD {
        let u: f64 = rng.random();
        let mut k = 0.0;
        let mut p = (-lambda).exp();
        let mut cdf = p;
        while u > cdf {
            k += 1.0;
            p *= lambda / k;
            cdf += p;
            if p == 0.0 {
                break;
            }
        }
        k
    } else {
        let z: f64 = StandardNormal.sample(rng);
        (lambda + lambda.sqrt() * z).round().max(0.0)
    }
}

pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn moments(lambda: f64, n: usize) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(lambda as u64);
        let xs: Vec<f64> = (0..n).map(|_| poisson(&mut rng, lambda)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (mean, var)
    }

    #[test]
    fn poisson_moments_within_five_sigma() {
        let n = 100_000;
        for lambda in [10.0, 1e3, 1e5] {
            let (mean, var) = moments(lambda, n);
            // se(mean) = sqrt(λ/n); se(var) ≈ λ·sqrt(2/n) for large λ, plus the λ/n kurtosis term
            let se_mean = (lambda / n as f64).sqrt();
            let se_var = (lambda * lambda * 2.0 / n as f64 + lambda / n as f64).sqrt();
            assert!((mean - lambda).abs() < 5.0 * se_mean, "λ={lambda} mean={mean}");
            assert!((var - lambda).abs() < 5.0 * se_var, "λ={lambda} var={var}");
        }
    }

    #[test]
    fn small_rate_pmf_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 200_000;
        let zeros = (0..n).filter(|_| poisson(&mut rng, 2.0) == 0.0).count();
        let p0 = (-2.0f64).exp();
        let se = (p0 * (1.0 - p0) / n as f64).sqrt();
        assert!((zeros as f64 / n as f64 - p0).abs() < 5.0 * se);
    }

    #[test]
    fn nonpositive_rate_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(poisson(&mut rng, 0.0), 0.0);
        assert_eq!(poisson(&mut rng, -3.0), 0.0);
    }
}
