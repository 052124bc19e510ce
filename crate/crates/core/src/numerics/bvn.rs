//! Bivariate normal distribution function (Drezner–Wesolowsky / Genz).

use std::f64::consts::PI;
use std::sync::OnceLock;

use super::normal::{std_normal_cdf, std_normal_sf};

const GL_POINTS: usize = 20;

/// Gauss–Legendre nodes and weights on [-1, 1], by Newton iteration on P_n.
pub(crate) fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2.0 * j as f64 + 1.0) * z * p1 - j as f64 * p2) / (j as f64 + 1.0);
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(GL_POINTS))
}

/// P(X > h, Y > k) for a standard bivariate normal with correlation `rho`.
pub fn bvn_upper(h: f64, k: f64, rho: f64) -> f64 {
    let rho = rho.clamp(-1.0, 1.0);
    if h == f64::INFINITY || k == f64::INFINITY {
        return 0.0;
    }
    if h == f64::NEG_INFINITY {
        return std_normal_sf(k);
    }
    if k == f64::NEG_INFINITY {
        return std_normal_sf(h);
    }
    if rho == 1.0 {
        return std_normal_sf(h.max(k));
    }
    if rho == -1.0 {
        return (std_normal_cdf(-h) - std_normal_cdf(k)).max(0.0);
    }
    let (nodes, weights) = rule();
    let hk = h * k;

    if rho.abs() < 0.925 {
        let hs = 0.5 * (h * h + k * k);
        let asr = rho.asin();
        let mut acc = 0.0;
        for (x, w) in nodes.iter().zip(weights) {
            let sn = (0.5 * asr * (x + 1.0)).sin();
            acc += w * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
        }
        return (acc * asr / (4.0 * PI) + std_normal_sf(h) * std_normal_sf(k)).clamp(0.0, 1.0);
    }

    let (k, hk) = if rho < 0.0 { (-k, -hk) } else { (k, hk) };
    let a_s = (1.0 - rho) * (1.0 + rho);
    let mut a = a_s.sqrt();
    let b_s = (h - k) * (h - k);
    let c = (4.0 - hk) / 8.0;
    let d = (12.0 - hk) / 16.0;
    let mut bvn = a
        * (-(b_s / a_s + hk) / 2.0).exp()
        * (1.0 - c * (b_s - a_s) * (1.0 - d * b_s / 5.0) / 3.0 + c * d * a_s * a_s / 5.0);
    if hk > -160.0 {
        let b = b_s.sqrt();
        bvn -= (-hk / 2.0).exp()
            * (2.0 * PI).sqrt()
            * std_normal_cdf(-b / a)
            * b
            * (1.0 - c * b_s * (1.0 - d * b_s / 5.0) / 3.0);
    }
    a /= 2.0;
    for (x, w) in nodes.iter().zip(weights) {
        let xs = (a * (x + 1.0)).powi(2);
        let rs = (1.0 - xs).sqrt();
        bvn += a
            * w
            * ((-b_s / (2.0 * xs) - hk / (1.0 + rs)).exp() / rs
                - (-(b_s / xs + hk) / 2.0).exp() * (1.0 + c * xs * (1.0 + d * xs)));
    }
    bvn = -bvn / (2.0 * PI);

    let out = if rho > 0.0 {
        bvn + std_normal_sf(h.max(k))
    } else {
        let mut v = -bvn;
        if k > h {
            v += std_normal_cdf(k) - std_normal_cdf(h);
        }
        v
    };
    out.clamp(0.0, 1.0)
}

/// P(Z1 ≤ h, Z2 ≤ k) for a standard bivariate normal with correlation `rho`.
pub fn bvn_cdf(h: f64, k: f64, rho: f64) -> f64 {
    bvn_upper(-h, -k, rho)
}
