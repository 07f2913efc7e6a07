//! Gaussian expectations: Gauss–Hermite rules, composite Gauss–Legendre rules
//! on finite intervals, and normal-distribution helpers evaluated in the log
//! domain where the tails matter.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};
use std::sync::OnceLock;

use libm::erfc;
use statrs::function::erf::erfc_inv;

/// Nodes and weights of an `n`-point Gauss–Hermite rule for the weight
/// `exp(-x^2)`. Nodes are returned in descending order.
///
/// Starting points are the eigenvalues of the Jacobi matrix; each is polished
/// by Newton on the normalized Hermite recurrence, which also yields the weight.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    const PIM4: f64 = 0.751_125_544_464_942_5; // pi^(-1/4)
    let nf = n as f64;
    let off: Vec<f64> = (1..n).map(|k| (k as f64 / 2.0).sqrt()).collect();
    let mut x = symmetric_tridiagonal_eigenvalues(&vec![0.0; n], &off);
    x.sort_by(|a, b| b.total_cmp(a));
    let mut w = vec![0.0; n];
    for (xi, wi) in x.iter_mut().zip(w.iter_mut()) {
        let mut z = *xi;
        let mut pp = 0.0;
        for _ in 0..20 {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let step = p1 / pp;
            z -= step;
            if step.abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        *xi = z;
        *wi = 2.0 / (pp * pp);
    }
    (x, w)
}

/// Eigenvalues of the symmetric tridiagonal matrix with diagonal `d` and
/// off-diagonal `e` (implicit QL with Wilkinson shifts).
fn symmetric_tridiagonal_eigenvalues(d: &[f64], e: &[f64]) -> Vec<f64> {
    let n = d.len();
    let mut d = d.to_vec();
    let mut e: Vec<f64> = e.iter().copied().chain(std::iter::once(0.0)).collect();
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            assert!(iter < 60, "tridiagonal eigenvalue iteration did not converge");
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut early = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    early = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if early {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    d
}

/// Gauss–Hermite rule rescaled for `E f(Z)` with `Z ~ N(0,1)`:
/// returns `(z_i, p_i)` with `sum p_i = 1`.
#[derive(Debug, Clone)]
pub struct NormalRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl NormalRule {
    pub fn new(n: usize) -> Self {
        let (x, w) = gauss_hermite(n);
        let norm = 1.0 / PI.sqrt();
        Self {
            nodes: x.iter().map(|v| v * SQRT_2).collect(),
            weights: w.iter().map(|v| v * norm).collect(),
        }
    }

    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .filter(|(_, &p)| p > 0.0)
            .map(|(&z, &p)| p * f(z))
            .sum()
    }
}

/// Shared 200-node rule.
pub fn normal_rule_200() -> &'static NormalRule {
    static RULE: OnceLock<NormalRule> = OnceLock::new();
    RULE.get_or_init(|| NormalRule::new(200))
}

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = ((2.0 * jf - 1.0) * z * p2 - (jf - 1.0) * p3) / jf;
            }
            pp = nf * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

fn legendre16() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(16))
}

/// Integrate `f` over `[lo, hi]` with `panels` equal panels of 16-point
/// Gauss–Legendre.
pub fn integrate(f: impl Fn(f64) -> f64, lo: f64, hi: f64, panels: usize) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let (x, w) = legendre16();
    let h = (hi - lo) / panels as f64;
    let mut total = 0.0;
    for k in 0..panels {
        let a = lo + k as f64 * h;
        let mid = a + 0.5 * h;
        let mut s = 0.0;
        for (xi, wi) in x.iter().zip(w) {
            s += wi * f(mid + 0.5 * h * xi);
        }
        total += 0.5 * h * s;
    }
    total
}

/// `E[f(Z); lo < Z < hi]` for `Z ~ N(0,1)` by composite Gauss–Legendre on the
/// truncated range `[max(lo,-12), min(hi,12)]`. Suited to integrands with a
/// sharp transition that a Hermite rule would under-resolve.
pub fn normal_expect_on(f: impl Fn(f64) -> f64, lo: f64, hi: f64, panels: usize) -> f64 {
    let a = lo.max(-12.0);
    let b = hi.min(12.0);
    integrate(|z| std_normal_pdf(z) * f(z), a, b, panels)
}

pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal distribution function.
pub fn phi_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Gaussian tail `Q(x) = P(Z > x)`.
pub fn q_func(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

/// `ln Phi(x)`, accurate in both tails.
pub fn ln_phi_cdf(x: f64) -> f64 {
    if x > 0.0 {
        (-q_func(x)).ln_1p()
    } else if x > -37.0 {
        phi_cdf(x).ln()
    } else {
        // Mills-ratio asymptotic: Phi(x) ~ pdf(x)/|x| (1 - 1/x^2 + 3/x^4)
        let x2 = x * x;
        -0.5 * x2 - (-x).ln() - 0.5 * (2.0 * PI).ln() + (1.0 - 1.0 / x2 + 3.0 / (x2 * x2)).ln()
    }
}

/// Inverse Gaussian tail: `Q^{-1}(p)` for `p` in (0,1).
pub fn q_inv(p: f64) -> f64 {
    let mut x = SQRT_2 * erfc_inv(2.0 * p);
    // two Newton steps against the more accurate tail function
    for _ in 0..2 {
        let d = std_normal_pdf(x);
        if !x.is_finite() || d == 0.0 {
            break;
        }
        x += (q_func(x) - p) / d;
    }
    x
}

/// Numerically stable `ln sum exp(v_i)`.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Logistic function `1/(1+e^{-x})` without overflow.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_moments() {
        let r = NormalRule::new(200);
        let m0: f64 = r.weights.iter().sum();
        assert!((m0 - 1.0).abs() < 1e-12, "{m0}");
        assert!((r.expect(|z| z * z) - 1.0).abs() < 1e-12);
        assert!((r.expect(|z| z.powi(4)) - 3.0).abs() < 1e-11);
        assert!(r.expect(|z| z.powi(3)).abs() < 1e-12);
    }

    #[test]
    fn hermite_small_rule_exact_for_low_degree() {
        let r = NormalRule::new(5);
        // degree <= 9 exact
        assert!((r.expect(|z| z.powi(8)) - 105.0).abs() < 1e-9);
    }

    #[test]
    fn legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(16);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(30)).sum();
        assert!((s - 2.0 / 31.0).abs() < 1e-14);
        let v = integrate(|t| t.sin(), 0.0, PI, 4);
        assert!((v - 2.0).abs() < 1e-13);
    }

    #[test]
    fn normal_tail_helpers() {
        assert!((phi_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((q_func(1.959_963_984_540_054) - 0.025).abs() < 1e-13, "{}", q_func(1.959_963_984_540_054));
        assert!((q_inv(0.025) - 1.959_963_984_540_054).abs() < 1e-10);
        // tail branches agree at the switch point
        let a = phi_cdf(-36.9).ln();
        let b = ln_phi_cdf(-37.1);
        assert!(b < a && (a - b) < 10.0);
        assert!((ln_phi_cdf(40.0)).abs() < 1e-300_f64.max(1e-320) || ln_phi_cdf(40.0) <= 0.0);
        assert!((ln_phi_cdf(5.0) - (-q_func(5.0)).ln_1p()).abs() < 1e-18);
    }

    #[test]
    fn lse_and_sigmoid() {
        let v = [1000.0, 1000.0];
        assert!((log_sum_exp(&v) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!((sigmoid(0.3) + sigmoid(-0.3) - 1.0).abs() < 1e-15);
    }
}
