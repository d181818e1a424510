//! Standard normal helpers with tail-safe logarithms.
//!
//! The pairwise likelihood evaluates `log Φ(d)` and the inverse Mills ratio
//! `φ(d)/Φ(d)` at arguments that can reach several hundred in magnitude when
//! coefficients are large. Both are built on the scaled complementary error
//! function `erfcx(t) = exp(t²) erfc(t)`, which stays finite where `Φ`
//! itself underflows.

use errorfunctions::RealErrorFunctions;
use statrs::function::erf::erfc_inv;
use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

/// `√(2/π)`.
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

#[inline]
pub fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

#[inline]
pub fn cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Quantile function `Φ⁻¹(p)` for `p ∈ (0, 1)`.
///
/// The `erfc_inv` starting value is only good to about 1e-11, so two Halley
/// steps against [`cdf`] follow.
pub fn quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    let mut q = -SQRT_2 * erfc_inv(2.0 * p);
    for _ in 0..2 {
        let d = pdf(q);
        if !(d > 0.0) {
            break;
        }
        let u = (cdf(q) - p) / d;
        q -= u / (1.0 + 0.5 * q * u);
    }
    q
}

/// `log Φ(x)`, finite for every finite `x`.
pub fn log_cdf(x: f64) -> f64 {
    log_cdf_and_ratio(x).0
}

/// Inverse Mills ratio `φ(x)/Φ(x)`.
pub fn inv_mills(x: f64) -> f64 {
    log_cdf_and_ratio(x).1
}

/// Returns `(log Φ(x), φ(x)/Φ(x))`.
///
/// For `x <= 0`, `Φ(x) = ½ erfcx(−x/√2) e^{−x²/2}`, so the logarithm and the
/// ratio need no exponential at all. For `x > 0` the upper tail is formed
/// the same way and enters through `log1p`.
#[inline]
pub fn log_cdf_and_ratio(x: f64) -> (f64, f64) {
    if x <= 0.0 {
        let e = (-x * FRAC_1_SQRT_2).erfcx();
        ((0.5 * e).ln() - 0.5 * x * x, SQRT_2_OVER_PI / e)
    } else {
        let g = (-0.5 * x * x).exp();
        let upper = 0.5 * (x * FRAC_1_SQRT_2).erfcx() * g;
        ((-upper).ln_1p(), g / (2.0 * PI).sqrt() / (1.0 - upper))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

    /// `Φ(x)/φ(x)` for `x < 0` from Laplace's continued fraction
    /// `1 / (t + 1/(t + 2/(t + 3/(t + …))))`, `t = −x`, by modified Lentz.
    fn tail_mills(x: f64) -> f64 {
        let t = -x;
        let tiny = 1e-300;
        let mut f = t;
        let mut c = t;
        let mut d = 0.0;
        for k in 1..2000 {
            let a = k as f64;
            d = t + a * d;
            if d.abs() < tiny {
                d = tiny;
            }
            d = 1.0 / d;
            c = t + a / c;
            if c.abs() < tiny {
                c = tiny;
            }
            let delta = c * d;
            f *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        1.0 / f
    }

    #[test]
    fn cdf_reference_values() {
        assert!((cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!((cdf(1.644_853_626_951_472_2) - 0.95).abs() < 1e-15);
        for (x, c) in [
            (-30.0, 4.906_713_927_148_187e-198),
            (-9.0, 1.128_588_405_953_840_6e-19),
            (-2.5, 0.006_209_665_325_776_135),
            (0.3, 0.617_911_422_188_952_64),
            (4.0, 0.999_968_328_758_166_9),
        ] {
            assert!((cdf(x) - c).abs() <= 5e-14 * c, "{x}");
        }
    }

    #[test]
    fn log_cdf_and_ratio_reference_values() {
        // high-precision reference values
        let table = [
            (-300.0, -45_006.622_732_118_663, 300.003_333_259_263_37),
            (-40.0, -804.608_442_013_753_79, 40.024_968_847_207_264),
            (-8.5, -39.197_396_428_217_669, 8.614_595_320_165_172_9),
            (-3.0, -6.607_726_221_510_349_5, 3.283_098_654_930_436_5),
            (-0.5, -1.175_911_761_593_618_6, 1.141_077_770_368_064_5),
            (0.0, -std::f64::consts::LN_2, 0.797_884_560_802_865_36),
            (0.7, -0.277_023_942_277_131_24, 0.411_924_750_419_290_65),
            (5.0, -2.866_516_129_637_633_9e-7, 1.486_719_940_904_905_7e-6),
            (12.0, -1.776_482_112_077_679e-33, 2.146_383_735_663_060_3e-32),
        ];
        for (x, l, r) in table {
            let (lx, rx) = log_cdf_and_ratio(x);
            assert!((lx - l).abs() <= 1e-14 * l.abs(), "log at {x}: {lx} vs {l}");
            assert!((rx - r).abs() <= 1e-14 * r, "ratio at {x}: {rx} vs {r}");
        }
    }

    #[test]
    fn negative_tail_matches_continued_fraction() {
        for x in [-6.0, -8.0, -11.3, -25.0, -80.0, -1e3] {
            let m = tail_mills(x);
            let (l, r) = log_cdf_and_ratio(x);
            let l_cf = -0.5 * x * x - LN_SQRT_2PI + m.ln();
            assert!((l - l_cf).abs() <= 1e-14 * l_cf.abs(), "{x}: {l} vs {l_cf}");
            assert!((r * m - 1.0).abs() < 1e-13, "{x}");
        }
    }

    #[test]
    fn agrees_with_direct_formula_where_that_is_accurate() {
        for k in -400..=400 {
            let x = k as f64 * 0.02;
            let c = cdf(x);
            let direct = if x > 0.0 { (-cdf(-x)).ln_1p() } else { c.ln() };
            let (l, r) = log_cdf_and_ratio(x);
            assert!((l - direct).abs() <= 1e-14 * direct.abs(), "{x}");
            assert!((r - pdf(x) / c).abs() <= 1e-13 * r, "{x}");
        }
    }

    #[test]
    fn extreme_tails_stay_finite() {
        for x in [-40.0, -300.0, -1e4, 40.0, 1e4] {
            let (l, r) = log_cdf_and_ratio(x);
            assert!(l.is_finite() && r.is_finite(), "x={x}");
            assert!(l <= 0.0);
        }
        // log Φ(x) ≈ -x²/2 - log(-x) - log √(2π) for very negative x
        let x: f64 = -1e3;
        let approx = -0.5 * x * x - (-x).ln() - LN_SQRT_2PI;
        assert!((log_cdf(x) - approx).abs() < 1e-5);
        // inverse Mills ratio tends to -x
        assert!((inv_mills(-1e3) - 1e3).abs() < 1e-2);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for p in [1e-10, 0.01, 0.3, 0.5, 0.77, 0.999] {
            assert!((cdf(quantile(p)) - p).abs() / p < 1e-12);
        }
    }
}
