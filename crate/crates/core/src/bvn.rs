//! Univariate and bivariate standard normal distribution functions.
//!
//! The bivariate CDF follows Genz's double-precision refinement of the
//! Drezner–Wesolowsky method: Gauss–Legendre quadrature over the arcsine
//! parameterisation for `|rho| <= 0.925`, and a series-corrected integral
//! near `|rho| = 1`. Strongly negative correlations are reflected onto the
//! positive branch with `Φ(h,k;ρ) = Φ(h) − Φ(h,−k;−ρ)`.

#![allow(clippy::excessive_precision)]

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use statrs::function::erf::{erfc, erfc_inv};

const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        1.0
    } else if x == f64::NEG_INFINITY {
        0.0
    } else {
        0.5 * erfc(-x * FRAC_1_SQRT_2)
    }
}

/// Standard normal quantile. `p` outside `(0,1)` maps to `±inf`.
pub fn norm_inv(p: f64) -> f64 {
    if p <= 0.0 {
        f64::NEG_INFINITY
    } else if p >= 1.0 {
        f64::INFINITY
    } else {
        // one Halley step polishes the erfc_inv starting point to full precision
        let x = -SQRT_2 * erfc_inv(2.0 * p);
        let e = norm_cdf(x) - p;
        let u = e * SQRT_2PI * (0.5 * x * x).exp();
        x - u / (1.0 + 0.5 * x * u)
    }
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / SQRT_2PI
}

// (weight, abscissa) on [-1, 1]; only the negative half is stored.
const GL6: [(f64, f64); 3] = [
    (0.1713244923791705e+00, -0.9324695142031522e+00),
    (0.3607615730481384e+00, -0.6612093864662647e+00),
    (0.4679139345726904e+00, -0.2386191860831970e+00),
];

const GL12: [(f64, f64); 6] = [
    (0.4717533638651177e-01, -0.9815606342467191e+00),
    (0.1069393259953183e+00, -0.9041172563704750e+00),
    (0.1600783285433464e+00, -0.7699026741943050e+00),
    (0.2031674267230659e+00, -0.5873179542866171e+00),
    (0.2334925365383547e+00, -0.3678314989981802e+00),
    (0.2491470458134029e+00, -0.1252334085114692e+00),
];

const GL20: [(f64, f64); 10] = [
    (0.1761400713915212e-01, -0.9931285991850949e+00),
    (0.4060142980038694e-01, -0.9639719272779138e+00),
    (0.6267204833410906e-01, -0.9122344282513259e+00),
    (0.8327674157670475e-01, -0.8391169718222188e+00),
    (0.1019301198172404e+00, -0.7463319064601508e+00),
    (0.1181945319615184e+00, -0.6360536807265150e+00),
    (0.1316886384491766e+00, -0.5108670019508271e+00),
    (0.1420961093183821e+00, -0.3737060887154196e+00),
    (0.1491729864726037e+00, -0.2277858511416451e+00),
    (0.1527533871307259e+00, -0.7652652113349733e-01),
];

fn rule(abs_rho: f64) -> &'static [(f64, f64)] {
    if abs_rho < 0.3 {
        &GL6
    } else if abs_rho < 0.75 {
        &GL12
    } else {
        &GL20
    }
}

/// `P(X > h, Y > k)` for `rho` in `[-0.925, 1)`; negative `rho` below
/// `-0.925` must be reflected by the caller.
fn upper_orthant(h: f64, k: f64, r: f64) -> f64 {
    let hk = h * k;
    let quad = rule(r.abs());
    if r.abs() <= 0.925 {
        let mut bvn = 0.0;
        if r != 0.0 {
            let hs = 0.5 * (h * h + k * k);
            let asr = 0.5 * r.asin();
            for &(w, x) in quad {
                for s in [-1.0, 1.0] {
                    let sn = (asr * (s * x + 1.0)).sin();
                    bvn += w * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
                }
            }
            bvn *= asr / (2.0 * PI);
        }
        return bvn + norm_cdf(-h) * norm_cdf(-k);
    }

    debug_assert!(r > 0.0);
    let mut bvn = 0.0;
    if r < 1.0 {
        let a2 = (1.0 - r) * (1.0 + r);
        let mut a = a2.sqrt();
        let b2 = (h - k) * (h - k);
        let c = (4.0 - hk) / 8.0;
        let d = (12.0 - hk) / 16.0;
        let asr = -0.5 * (b2 / a2 + hk);
        if asr > -100.0 {
            bvn = a
                * asr.exp()
                * (1.0 - c * (b2 - a2) * (1.0 - d * b2 / 5.0) / 3.0 + c * d * a2 * a2 / 5.0);
        }
        if -hk < 100.0 {
            let b = (h - k).abs();
            bvn -= (-0.5 * hk).exp()
                * SQRT_2PI
                * norm_cdf(-b / a)
                * b
                * (1.0 - c * b2 * (1.0 - d * b2 / 5.0) / 3.0);
        }
        a *= 0.5;
        for &(w, x) in quad {
            for s in [-1.0, 1.0] {
                let xs = a * (s * x + 1.0);
                let xs2 = xs * xs;
                let rs = (1.0 - xs2).sqrt();
                let asr = -0.5 * (b2 / xs2 + hk);
                if asr > -100.0 {
                    bvn += a
                        * w
                        * asr.exp()
                        * ((-hk * (1.0 - rs) / (2.0 * (1.0 + rs))).exp() / rs
                            - (1.0 + c * xs2 * (1.0 + d * xs2)));
                }
            }
        }
        bvn /= -2.0 * PI;
    }
    bvn + norm_cdf(-h.max(k))
}

/// Lower-orthant probability `Φ(h, k; rho) = P(X <= h, Y <= k)` for standard
/// normals with correlation `rho`.
pub fn bvn_cdf(h: f64, k: f64, rho: f64) -> f64 {
    if h.is_nan() || k.is_nan() || rho.is_nan() {
        return f64::NAN;
    }
    let rho = rho.clamp(-1.0, 1.0);
    if h == f64::NEG_INFINITY || k == f64::NEG_INFINITY {
        return 0.0;
    }
    if h == f64::INFINITY {
        return norm_cdf(k);
    }
    if k == f64::INFINITY {
        return norm_cdf(h);
    }
    if rho == 1.0 {
        return norm_cdf(h.min(k));
    }
    if rho == -1.0 {
        return (norm_cdf(h) - norm_cdf(-k)).max(0.0);
    }
    let p = if rho < -0.925 {
        norm_cdf(h) - upper_orthant(-h, k, -rho)
    } else {
        upper_orthant(-h, -k, rho)
    };
    p.clamp(0.0, 1.0)
}

/// `Ψ(h, k; λ) = Φ(h, k; λ) − Φ(h)Φ(k)`.
pub fn bvn_covariance(h: f64, k: f64, lambda: f64) -> f64 {
    bvn_cdf(h, k, lambda) - norm_cdf(h) * norm_cdf(k)
}
