//! Inverse-transform and rejection samplers used by the simulator and the
//! pseudo-population generators.
//!
//! Hand-rolled so that draws depend only on the substream, not on the
//! algorithm choices of an external crate.

use rand::Rng;

/// Uniform draw on the open interval (0, 1).
#[inline]
pub fn open_unit<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.gen();
        if u > 0.0 && u < 1.0 {
            return u;
        }
    }
}

/// Exp(1) via inverse transform.
#[inline]
pub fn exp1<R: Rng>(rng: &mut R) -> f64 {
    -open_unit(rng).ln()
}

/// Standard normal via Box–Muller (one value per call).
#[inline]
pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1 = open_unit(rng);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Poisson via Knuth multiplication (fine for the small means used here).
pub fn poisson<R: Rng>(rng: &mut R, mean: f64) -> u64 {
    debug_assert!(mean >= 0.0);
    if mean == 0.0 {
        return 0;
    }
    if mean < 30.0 {
        let limit = (-mean).exp();
        let mut k = 0u64;
        let mut p = 1.0;
        loop {
            p *= open_unit(rng);
            if p <= limit {
                return k;
            }
            k += 1;
        }
    }
    // Normal approximation tail guard for large means (not hit at desk scale).
    let z = standard_normal(rng);
    (mean + z * mean.sqrt()).round().max(0.0) as u64
}

/// Gamma(shape, scale) via Marsaglia–Tsang, with the `U^{1/shape}` boost for
/// shape < 1.
pub fn gamma<R: Rng>(rng: &mut R, shape: f64, scale: f64) -> f64 {
    debug_assert!(shape > 0.0 && scale > 0.0);
    if shape < 1.0 {
        let boost = open_unit(rng).powf(1.0 / shape);
        return gamma(rng, shape + 1.0, scale) * boost;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let z = standard_normal(rng);
        let v = 1.0 + c * z;
        if v <= 0.0 {
            continue;
        }
        let v3 = v * v * v;
        let u = open_unit(rng);
        if u.ln() < 0.5 * z * z + d - d * v3 + d * v3.ln() {
            return d * v3 * scale;
        }
    }
}

/// Geometric number of failures before the first success:
/// `P(Z = k) = (1 - p)^k p` for `k = 0, 1, 2, ...`, so `E[Z] = (1-p)/p`.
pub fn geometric_failures<R: Rng>(rng: &mut R, p: f64) -> u64 {
    debug_assert!(p > 0.0 && p <= 1.0);
    if p >= 1.0 {
        return 0;
    }
    let u = open_unit(rng);
    (u.ln() / (1.0 - p).ln()).floor().max(0.0) as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::streams::substream;

    #[test]
    fn samplers_match_first_moments() {
        let mut rng = substream(7, &[0]);
        let n = 200_000;
        let mean = |f: &mut dyn FnMut() -> f64| {
            let mut acc = 0.0;
            for _ in 0..n {
                acc += f();
            }
            acc / n as f64
        };
        let m_exp = mean(&mut || exp1(&mut rng));
        assert!((m_exp - 1.0).abs() < 0.01, "exp mean {m_exp}");
        let m_norm = mean(&mut || standard_normal(&mut rng));
        assert!(m_norm.abs() < 0.01, "normal mean {m_norm}");
        let m_pois = mean(&mut || poisson(&mut rng, 2.5) as f64);
        assert!((m_pois - 2.5).abs() < 0.02, "poisson mean {m_pois}");
        let m_gamma = mean(&mut || gamma(&mut rng, 1.7, 2.0));
        assert!((m_gamma - 3.4).abs() < 0.04, "gamma mean {m_gamma}");
        let m_geo = mean(&mut || geometric_failures(&mut rng, 0.4) as f64);
        assert!((m_geo - 1.5).abs() < 0.03, "geometric mean {m_geo}");
    }

    #[test]
    fn geometric_degenerate_at_p_one() {
        let mut rng = substream(7, &[1]);
        for _ in 0..100 {
            assert_eq!(geometric_failures(&mut rng, 1.0), 0);
        }
    }
}
