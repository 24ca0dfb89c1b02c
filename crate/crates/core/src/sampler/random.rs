use rand::Rng;
use rand_distr::{Distribution, Gamma, OpenClosed01};

/// `Gamma(shape, rate)` draw.
pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    Gamma::new(shape, 1.0 / rate)
        .expect("gamma parameters must be positive and finite")
        .sample(rng)
}

/// `log X` for `X ~ Gamma(shape, rate)`, accurate for tiny shapes where `X`
/// itself underflows: `X = Y U^{1/shape}` with `Y ~ Gamma(shape + 1)`.
pub fn sample_log_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    if shape >= 1.0 {
        return sample_gamma(shape, 1.0, rng).ln() - rate.ln();
    }
    let y = sample_gamma(shape + 1.0, 1.0, rng);
    let u: f64 = OpenClosed01.sample(rng);
    y.ln() + u.ln() / shape - rate.ln()
}

/// `IG(shape, scale)` draw, the reciprocal of `Gamma(shape, scale)`.
pub fn sample_inv_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    1.0 / sample_gamma(shape, scale, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn log_gamma_moments_for_small_shape() {
        // E[log X] = digamma(a) - log(rate)
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, rate) = (0.05, 2.0);
        let n = 200_000;
        let mean: f64 = (0..n).map(|_| sample_log_gamma(a, rate, &mut rng)).sum::<f64>() / n as f64;
        let expect = statrs::function::gamma::digamma(a) - rate.ln();
        // var(log X) = trigamma(0.05) ~ 401
        let se = (401.0f64 / n as f64).sqrt();
        assert!((mean - expect).abs() < 4.0 * se, "{mean} vs {expect}");
    }

    #[test]
    fn log_gamma_is_finite_for_tiny_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let v = sample_log_gamma(1e-4, 1.0, &mut rng);
            assert!(v.is_finite());
        }
    }

    #[test]
    fn inverse_gamma_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| sample_inv_gamma(5.0, 8.0, &mut rng)).sum::<f64>() / n as f64;
        // mean 2, var 4/3
        assert!((mean - 2.0).abs() < 4.0 * (4.0f64 / 3.0 / n as f64).sqrt());
    }
}
