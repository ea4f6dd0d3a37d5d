//! Small distribution helpers used by the sampler.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::erf::erfc;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `ln Phi(x)`, accurate in the lower tail.
pub fn log_normal_cdf(x: f64) -> f64 {
    if x > -30.0 {
        normal_cdf(x).ln()
    } else {
        // Asymptotic Mills-ratio expansion.
        let x2 = x * x;
        -0.5 * x2 - (-x).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() + (1.0 - 1.0 / x2 + 3.0 / (x2 * x2)).ln()
    }
}

/// Log mass of `N(mean, sd^2)` on `[lo, hi]`.
pub fn log_interval_mass(mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    let a = (lo - mean) / sd;
    let b = (hi - mean) / sd;
    // Use the tail with better precision.
    let mass = if a > 0.0 {
        normal_cdf(-a) - normal_cdf(-b)
    } else {
        normal_cdf(b) - normal_cdf(a)
    };
    mass.max(f64::MIN_POSITIVE).ln()
}

/// Draw from `N(mean, sd^2)` truncated to `[lo, hi]` (`hi` may be infinite).
pub fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    debug_assert!(lo < hi && sd > 0.0);
    let a = (lo - mean) / sd;
    let b = (hi - mean) / sd;
    let z = if b - a < 1.0 || (a > 0.5 && b.is_finite() && b - a < a) {
        uniform_rejection(rng, a, b)
    } else if a > 0.5 {
        exponential_rejection(rng, a, b)
    } else if b < -0.5 {
        -exponential_rejection(rng, -b, -a)
    } else {
        loop {
            let z: f64 = rng.sample(StandardNormal);
            if z >= a && z <= b {
                break z;
            }
        }
    };
    (mean + sd * z).clamp(lo, hi)
}

/// Uniform proposal on `[a, b]`, accepted with the density ratio to its max.
fn uniform_rejection<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    let peak = if a > 0.0 {
        a * a
    } else if b < 0.0 {
        b * b
    } else {
        0.0
    };
    loop {
        let z = a + (b - a) * rng.random::<f64>();
        let u: f64 = rng.random();
        if u.ln() <= 0.5 * (peak - z * z) {
            break z;
        }
    }
}

/// Robert's translated-exponential sampler for the tail `[a, b]`, `a > 0`.
fn exponential_rejection<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    let rate = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let z = a - (1.0 - rng.random::<f64>()).ln() / rate;
        if z > b {
            continue;
        }
        let u: f64 = rng.random();
        if u.ln() <= -0.5 * (z - rate).powi(2) {
            break z;
        }
    }
}

/// Draw from `IG(shape, scale)`, density proportional to `x^{-shape-1} e^{-scale/x}`.
pub fn inverse_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, scale: f64) -> f64 {
    let g = Gamma::new(shape, 1.0 / scale).expect("valid inverse-gamma parameters");
    1.0 / g.sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cdf_landmarks() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((normal_cdf(1.959963984540054) - 0.975).abs() < 1e-10);
        assert!((log_normal_cdf(-40.0) - (-804.608_442_013_754)).abs() < 1e-6);
        assert!((log_normal_cdf(-29.9) - normal_cdf(-29.9).ln()).abs() < 1e-6);
    }

    #[test]
    fn interval_mass_matches_cdf_difference() {
        let m = log_interval_mass(0.2, 0.5, -0.1, 0.4).exp();
        let want = normal_cdf((0.4 - 0.2) / 0.5) - normal_cdf((-0.1 - 0.2) / 0.5);
        assert!((m - want).abs() < 1e-14);
    }

    fn check_truncated_moments(mean: f64, sd: f64, lo: f64, hi: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 200_000;
        let mut s = 0.0;
        for _ in 0..n {
            let x = truncated_normal(&mut rng, mean, sd, lo, hi);
            assert!(x >= lo && x <= hi);
            s += x;
        }
        // Analytic mean: mean + sd (pdf(a) - pdf(b)) / Z.
        let pdf = |z: f64| if z.is_finite() { (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt() } else { 0.0 };
        let a = (lo - mean) / sd;
        let b = (hi - mean) / sd;
        let z = log_interval_mass(mean, sd, lo, hi).exp();
        let want = mean + sd * (pdf(a) - pdf(b)) / z;
        let got = s / n as f64;
        assert!((got - want).abs() < 0.01 * sd, "mean {got} vs {want} for ({mean},{sd},[{lo},{hi}])");
    }

    #[test]
    fn truncated_normal_moments() {
        check_truncated_moments(1.0, 1.0, 0.0, f64::INFINITY);
        check_truncated_moments(-3.0, 1.0, 0.0, f64::INFINITY);
        check_truncated_moments(0.5, 0.01, 0.0, 1.0);
        check_truncated_moments(0.0, 1.0, 0.2, 0.3);
        check_truncated_moments(0.0, 1.0, 2.0, 6.0);
        check_truncated_moments(0.0, 1.0, -6.0, -2.0);
        check_truncated_moments(0.9, 0.1, 0.0, 1.0);
    }

    #[test]
    fn inverse_gamma_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200_000;
        let s: f64 = (0..n).map(|_| inverse_gamma(&mut rng, 5.0, 2.0)).sum();
        assert!((s / n as f64 - 0.5).abs() < 0.01);
    }
}
