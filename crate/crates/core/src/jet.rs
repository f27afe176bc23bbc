//! Forward-mode derivative arithmetic.
//!
//! Every closed-form quantity in the crate (profiles, fields, conformal
//! factors, parsed expressions) is written once against [`Real`] and then
//! evaluated with `f64` for values, [`Jet3`] for univariate derivatives up to
//! third order, or [`Jet2`] for bivariate gradients and Hessians.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Scalar arithmetic shared by plain floats and derivative jets.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn cst(v: f64) -> Self;
    fn value(&self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tan(self) -> Self {
        self.sin() / self.cos()
    }
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self {
        self.powf(0.5)
    }
    fn powf(self, p: f64) -> Self;
    fn powi(self, n: i32) -> Self;

    fn add_f(self, c: f64) -> Self {
        self + Self::cst(c)
    }
    fn mul_f(self, c: f64) -> Self {
        self * Self::cst(c)
    }
}

impl Real for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn tan(self) -> Self {
        f64::tan(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn powf(self, p: f64) -> Self {
        f64::powf(self, p)
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
}

/// Outer-function derivatives `[f, f', f'', f''']` of `x^n` at `x`.
fn powi_derivs(x: f64, n: i32) -> [f64; 4] {
    let nf = n as f64;
    let p = |k: i32| if n - k == 0 { 1.0 } else { x.powi(n - k) };
    let c1 = nf;
    let c2 = nf * (nf - 1.0);
    let c3 = nf * (nf - 1.0) * (nf - 2.0);
    [
        p(0),
        if n == 0 { 0.0 } else { c1 * p(1) },
        if c2 == 0.0 { 0.0 } else { c2 * p(2) },
        if c3 == 0.0 { 0.0 } else { c3 * p(3) },
    ]
}

fn powf_derivs(x: f64, p: f64) -> [f64; 4] {
    let v = x.powf(p);
    [
        v,
        p * v / x,
        p * (p - 1.0) * v / (x * x),
        p * (p - 1.0) * (p - 2.0) * v / (x * x * x),
    ]
}

/// Univariate Taylor jet: value and the first three derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Jet3 {
    pub d: [f64; 4],
}

impl Jet3 {
    pub fn var(x: f64) -> Self {
        Jet3 { d: [x, 1.0, 0.0, 0.0] }
    }

    pub fn constant(x: f64) -> Self {
        Jet3 { d: [x, 0.0, 0.0, 0.0] }
    }

    pub fn new(d0: f64, d1: f64, d2: f64, d3: f64) -> Self {
        Jet3 { d: [d0, d1, d2, d3] }
    }

    #[inline]
    /// Compose with an outer function given by its derivatives at `self.d[0]`.
    pub fn compose(self, f: [f64; 4]) -> Self {
        let [_, u1, u2, u3] = self.d;
        Jet3 {
            d: [
                f[0],
                f[1] * u1,
                f[2] * u1 * u1 + f[1] * u2,
                f[3] * u1 * u1 * u1 + 3.0 * f[2] * u1 * u2 + f[1] * u3,
            ],
        }
    }
}

impl Add for Jet3 {
    type Output = Jet3;
    #[inline]
    fn add(self, o: Jet3) -> Jet3 {
        let mut d = self.d;
        for (a, b) in d.iter_mut().zip(o.d) {
            *a += b;
        }
        Jet3 { d }
    }
}

impl Sub for Jet3 {
    type Output = Jet3;
    #[inline]
    fn sub(self, o: Jet3) -> Jet3 {
        let mut d = self.d;
        for (a, b) in d.iter_mut().zip(o.d) {
            *a -= b;
        }
        Jet3 { d }
    }
}

impl Neg for Jet3 {
    type Output = Jet3;
    #[inline]
    fn neg(self) -> Jet3 {
        Jet3 { d: self.d.map(|x| -x) }
    }
}

impl Mul for Jet3 {
    type Output = Jet3;
    #[inline]
    fn mul(self, o: Jet3) -> Jet3 {
        let [a0, a1, a2, a3] = self.d;
        let [b0, b1, b2, b3] = o.d;
        Jet3 {
            d: [
                a0 * b0,
                a1 * b0 + a0 * b1,
                a2 * b0 + 2.0 * a1 * b1 + a0 * b2,
                a3 * b0 + 3.0 * a2 * b1 + 3.0 * a1 * b2 + a0 * b3,
            ],
        }
    }
}

impl Div for Jet3 {
    type Output = Jet3;
    #[inline]
    fn div(self, o: Jet3) -> Jet3 {
        self * o.powi(-1)
    }
}

impl Real for Jet3 {
    fn cst(v: f64) -> Self {
        Jet3::constant(v)
    }
    fn value(&self) -> f64 {
        self.d[0]
    }
    fn sin(self) -> Self {
        let (s, c) = self.d[0].sin_cos();
        self.compose([s, c, -s, -c])
    }
    fn cos(self) -> Self {
        let (s, c) = self.d[0].sin_cos();
        self.compose([c, -s, -c, s])
    }
    fn exp(self) -> Self {
        let e = self.d[0].exp();
        self.compose([e; 4])
    }
    fn ln(self) -> Self {
        let x = self.d[0];
        self.compose([x.ln(), 1.0 / x, -1.0 / (x * x), 2.0 / (x * x * x)])
    }
    fn powf(self, p: f64) -> Self {
        self.compose(powf_derivs(self.d[0], p))
    }
    fn powi(self, n: i32) -> Self {
        self.compose(powi_derivs(self.d[0], n))
    }
}

/// Bivariate second-order jet: value, gradient and Hessian `(xx, xy, yy)`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Jet2 {
    pub v: f64,
    pub g: [f64; 2],
    pub h: [f64; 3],
}

impl Jet2 {
    pub fn constant(v: f64) -> Self {
        Jet2 { v, g: [0.0; 2], h: [0.0; 3] }
    }

    /// Coordinate variable `index` (0 or 1) at value `v`.
    pub fn var(v: f64, index: usize) -> Self {
        let mut g = [0.0; 2];
        g[index] = 1.0;
        Jet2 { v, g, h: [0.0; 3] }
    }

    /// Lift a univariate jet of a function of coordinate `index`.
    pub fn from_univariate(j: Jet3, index: usize) -> Self {
        let mut out = Jet2::constant(j.d[0]);
        out.g[index] = j.d[1];
        out.h[if index == 0 { 0 } else { 2 }] = j.d[2];
        out
    }

    pub fn hessian_det(&self) -> f64 {
        self.h[0] * self.h[2] - self.h[1] * self.h[1]
    }

    #[inline]
    /// Compose with an outer function given by its value and first two derivatives.
    pub fn compose(self, f0: f64, f1: f64, f2: f64) -> Self {
        let [gx, gy] = self.g;
        Jet2 {
            v: f0,
            g: [f1 * gx, f1 * gy],
            h: [
                f1 * self.h[0] + f2 * gx * gx,
                f1 * self.h[1] + f2 * gx * gy,
                f1 * self.h[2] + f2 * gy * gy,
            ],
        }
    }
}

impl Add for Jet2 {
    type Output = Jet2;
    #[inline]
    fn add(self, o: Jet2) -> Jet2 {
        Jet2 {
            v: self.v + o.v,
            g: [self.g[0] + o.g[0], self.g[1] + o.g[1]],
            h: [self.h[0] + o.h[0], self.h[1] + o.h[1], self.h[2] + o.h[2]],
        }
    }
}

impl Sub for Jet2 {
    type Output = Jet2;
    #[inline]
    fn sub(self, o: Jet2) -> Jet2 {
        self + (-o)
    }
}

impl Neg for Jet2 {
    type Output = Jet2;
    #[inline]
    fn neg(self) -> Jet2 {
        Jet2 { v: -self.v, g: self.g.map(|x| -x), h: self.h.map(|x| -x) }
    }
}

impl Mul for Jet2 {
    type Output = Jet2;
    #[inline]
    fn mul(self, o: Jet2) -> Jet2 {
        let (a, b) = (self, o);
        Jet2 {
            v: a.v * b.v,
            g: [a.v * b.g[0] + b.v * a.g[0], a.v * b.g[1] + b.v * a.g[1]],
            h: [
                a.v * b.h[0] + b.v * a.h[0] + 2.0 * a.g[0] * b.g[0],
                a.v * b.h[1] + b.v * a.h[1] + a.g[0] * b.g[1] + a.g[1] * b.g[0],
                a.v * b.h[2] + b.v * a.h[2] + 2.0 * a.g[1] * b.g[1],
            ],
        }
    }
}

impl Div for Jet2 {
    type Output = Jet2;
    #[inline]
    fn div(self, o: Jet2) -> Jet2 {
        self * o.powi(-1)
    }
}

impl Real for Jet2 {
    fn cst(v: f64) -> Self {
        Jet2::constant(v)
    }
    fn value(&self) -> f64 {
        self.v
    }
    fn sin(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.compose(s, c, -s)
    }
    fn cos(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.compose(c, -s, -c)
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.compose(e, e, e)
    }
    fn ln(self) -> Self {
        let x = self.v;
        self.compose(x.ln(), 1.0 / x, -1.0 / (x * x))
    }
    fn powf(self, p: f64) -> Self {
        let d = powf_derivs(self.v, p);
        self.compose(d[0], d[1], d[2])
    }
    fn powi(self, n: i32) -> Self {
        let d = powi_derivs(self.v, n);
        self.compose(d[0], d[1], d[2])
    }
}
