//! Reference computations used only by the tests. None of them call into
//! the library, so they can serve as oracles for it.

#![allow(dead_code)]

use std::f64::consts::PI;

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Γ(x) for real `x` away from the poles, Lanczos with reflection.
pub fn lanczos_gamma(x: f64) -> f64 {
    if x < 0.5 {
        return PI / ((PI * x).sin() * lanczos_gamma(1.0 - x));
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    (2.0 * PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * a
}

/// Tanh-sinh quadrature of `g` on `[c, d]`, halving the step until two
/// levels agree to `rel`. Abscissae are formed from the nearer endpoint so
/// that endpoint singularities are sampled without cancellation.
pub fn tanh_sinh<G: Fn(f64) -> f64>(g: G, c: f64, d: f64, rel: f64) -> f64 {
    let w = d - c;
    let t_max = 4.5;
    let eval = |t: f64| {
        let u = 0.5 * PI * t.sinh();
        let y = if t <= 0.0 {
            c + w / (1.0 + (-2.0 * u).exp())
        } else {
            d - w / (1.0 + (2.0 * u).exp())
        };
        let ch = u.cosh();
        let jac = 0.5 * w * 0.5 * PI * t.cosh() / (ch * ch);
        if jac == 0.0 {
            0.0
        } else {
            g(y) * jac
        }
    };
    let mut h = 0.5;
    let mut prev = {
        let n = (t_max / h) as i64;
        h * (-n..=n).map(|j| eval(j as f64 * h)).sum::<f64>()
    };
    for _ in 0..10 {
        h *= 0.5;
        let n = (t_max / h) as i64;
        // only odd points are new
        let fresh: f64 = (-n..=n).filter(|j| j % 2 != 0).map(|j| eval(j as f64 * h)).sum();
        let cur = 0.5 * prev + h * fresh;
        if (cur - prev).abs() <= rel * cur.abs() {
            return cur;
        }
        prev = cur;
    }
    prev
}

/// `∫_a^b y^{α+k} dy` by quadrature. Near `y = 0` the substitution
/// `z = y^{1+α}` makes the integrand a nonnegative power of `z`.
pub fn weighted_moment_quadrature(a: f64, b: f64, alpha: f64, k: u32) -> f64 {
    let p = alpha + k as f64;
    if a >= 0.5 * b {
        return tanh_sinh(|y| y.powf(p), a, b, 1e-15);
    }
    let e = 1.0 + alpha;
    let q = k as f64 / e;
    let (z0, z1) = (a.powf(e), b.powf(e));
    tanh_sinh(|z| z.powf(q), z0, z1, 1e-15) / e
}

/// Least-squares line through `(x, y)`: `(slope, intercept, correlation)`.
pub fn least_squares(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let r = if syy == 0.0 { 0.0 } else { sxy / (sxx * syy).sqrt() };
    (slope, my - slope * mx, r)
}

pub fn loglog(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    least_squares(&logs)
}

pub fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}
