//! Gauss–Legendre rules and composite quadrature over chart rectangles.

use std::f64::consts::PI;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n.
        let mut t = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, t);
            dp = d;
            let dt = p / d;
            t -= dt;
            if dt.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, t);
        if d.is_finite() {
            dp = d;
        }
        let wi = 2.0 / ((1.0 - t * t) * dp * dp);
        x[i] = -t;
        x[n - 1 - i] = t;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

fn legendre(n: usize, t: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = t;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * t * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (t * p1 - p0) / (t * t - 1.0);
    (p1, d)
}

/// Fixed Gauss–Legendre rule reused across many panels.
#[derive(Clone, Debug)]
pub struct Rule {
    x: Vec<f64>,
    w: Vec<f64>,
}

impl Rule {
    pub fn new(order: usize) -> Rule {
        let (x, w) = gauss_legendre(order);
        Rule { x, w }
    }

    /// Composite rule on [a, b] with `panels` equal panels.
    pub fn integrate(&self, a: f64, b: f64, panels: usize, mut f: impl FnMut(f64) -> f64) -> f64 {
        let h = (b - a) / panels as f64;
        let mut sum = 0.0;
        for p in 0..panels {
            let lo = a + p as f64 * h;
            let mut s = 0.0;
            for (xi, wi) in self.x.iter().zip(&self.w) {
                s += wi * f(lo + 0.5 * h * (xi + 1.0));
            }
            sum += 0.5 * h * s;
        }
        sum
    }

    /// Tensor composite rule on a rectangle.
    pub fn integrate2(
        &self,
        x: (f64, f64),
        y: (f64, f64),
        panels: (usize, usize),
        mut f: impl FnMut(f64, f64) -> f64,
    ) -> f64 {
        let hx = (x.1 - x.0) / panels.0 as f64;
        let hy = (y.1 - y.0) / panels.1 as f64;
        let mut sum = 0.0;
        for px in 0..panels.0 {
            let x0 = x.0 + px as f64 * hx;
            for py in 0..panels.1 {
                let y0 = y.0 + py as f64 * hy;
                let mut s = 0.0;
                for (xi, wi) in self.x.iter().zip(&self.w) {
                    let xx = x0 + 0.5 * hx * (xi + 1.0);
                    for (yj, wj) in self.x.iter().zip(&self.w) {
                        s += wi * wj * f(xx, y0 + 0.5 * hy * (yj + 1.0));
                    }
                }
                sum += 0.25 * hx * hy * s;
            }
        }
        sum
    }

    pub fn nodes(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.x.iter().copied().zip(self.w.iter().copied())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_for_polynomials() {
        for n in [1, 2, 5, 8, 16] {
            let (x, w) = gauss_legendre(n);
            for deg in 0..2 * n {
                let q: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((q - exact).abs() < 1e-13, "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn composite_rules() {
        let r = Rule::new(8);
        let v = r.integrate(0.0, PI, 4, f64::sin);
        assert!((v - 2.0).abs() < 1e-14);
        let v2 = r.integrate2((0.0, 1.0), (0.0, 2.0), (2, 3), |x, y| x * x * y);
        assert!((v2 - 2.0 / 3.0).abs() < 1e-14);
    }
}
