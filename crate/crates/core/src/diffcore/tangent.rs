use std::ops::{Add, Div, Mul, Neg, Sub};

use super::real::{Lift, Real};

/// A value together with `N` directional derivatives (forward mode).
///
/// The inner scalar may itself be an adjoint variable, which gives exact
/// parameter gradients of quantities that contain input derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tangent<S, const N: usize> {
    pub v: S,
    pub d: [S; N],
}

impl<S: Real, const N: usize> Tangent<S, N> {
    #[inline]
    pub fn constant(v: S) -> Self {
        Self { v, d: [S::zero(); N] }
    }

    #[inline]
    pub fn new(v: S, d: [S; N]) -> Self {
        Self { v, d }
    }

    /// Seeds `v` with the unit tangent along direction `k`.
    #[inline]
    pub fn seeded(v: S, k: usize) -> Self {
        let mut d = [S::zero(); N];
        d[k] = S::cst(1.0);
        Self { v, d }
    }

    #[inline]
    fn chain(self, value: S, slope: S) -> Self {
        Self {
            v: value,
            d: self.d.map(|di| slope * di),
        }
    }
}

impl<S: Real, const N: usize> Add for Tangent<S, N> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        Self {
            v: self.v + rhs.v,
            d: std::array::from_fn(|k| self.d[k] + rhs.d[k]),
        }
    }
}

impl<S: Real, const N: usize> Sub for Tangent<S, N> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        Self {
            v: self.v - rhs.v,
            d: std::array::from_fn(|k| self.d[k] - rhs.d[k]),
        }
    }
}

impl<S: Real, const N: usize> Mul for Tangent<S, N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        Self {
            v: self.v * rhs.v,
            d: std::array::from_fn(|k| self.d[k] * rhs.v + self.v * rhs.d[k]),
        }
    }
}

impl<S: Real, const N: usize> Div for Tangent<S, N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let v = self.v / rhs.v;
        Self {
            v,
            d: std::array::from_fn(|k| (self.d[k] - v * rhs.d[k]) / rhs.v),
        }
    }
}

impl<S: Real, const N: usize> Neg for Tangent<S, N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self {
            v: -self.v,
            d: self.d.map(|di| -di),
        }
    }
}

impl<S: Real, const N: usize> Real for Tangent<S, N> {
    #[inline]
    fn cst(c: f64) -> Self {
        Self::constant(S::cst(c))
    }

    #[inline]
    fn value(&self) -> f64 {
        self.v.value()
    }

    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e)
    }

    fn ln(self) -> Self {
        let l = self.v.ln();
        self.chain(l, S::cst(1.0) / self.v)
    }

    fn tanh(self) -> Self {
        let th = self.v.tanh();
        self.chain(th, S::cst(1.0) - th * th)
    }

    fn sin(self) -> Self {
        self.chain(self.v.sin(), self.v.cos())
    }

    fn cos(self) -> Self {
        self.chain(self.v.cos(), -self.v.sin())
    }

    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, S::cst(0.5) / s)
    }

    fn sigmoid(self) -> Self {
        let s = self.v.sigmoid();
        self.chain(s, s * (S::cst(1.0) - s))
    }

    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Self::cst(1.0);
        }
        let slope = self.v.powi(n - 1).scale(n as f64);
        self.chain(self.v.powi(n), slope)
    }

    #[inline]
    fn scale(self, c: f64) -> Self {
        Self {
            v: self.v.scale(c),
            d: self.d.map(|di| di.scale(c)),
        }
    }

    #[inline]
    fn offset(self, c: f64) -> Self {
        Self {
            v: self.v.offset(c),
            d: self.d,
        }
    }

    fn affine<I>(bias: Self, terms: I) -> Self
    where
        I: Iterator<Item = (Self, Self)> + Clone,
    {
        let v = S::affine(bias.v, terms.clone().map(|(w, x)| (w.v, x.v)));
        let d = std::array::from_fn(|k| {
            S::affine(
                bias.d[k],
                terms.clone().flat_map(move |(w, x)| [(w.v, x.d[k]), (w.d[k], x.v)]),
            )
        });
        Self { v, d }
    }

    fn affine_cst<I>(bias: f64, terms: I) -> Self
    where
        I: Iterator<Item = (f64, Self)> + Clone,
    {
        let v = S::affine_cst(bias, terms.clone().map(|(c, x)| (c, x.v)));
        let d = std::array::from_fn(|k| S::affine_cst(0.0, terms.clone().map(move |(c, x)| (c, x.d[k]))));
        Self { v, d }
    }
}

impl<S: Real, const N: usize> Lift<Tangent<S, N>> for Tangent<S, N> {
    #[inline]
    fn lift(self) -> Self {
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type T3 = Tangent<f64, 3>;

    #[test]
    fn product_rule() {
        // x1 * t at x1 = 2, t = 3, seeded along t
        let x = Tangent::<f64, 1>::constant(2.0);
        let t = Tangent::<f64, 1>::seeded(3.0, 0);
        let y = x * t;
        assert_eq!(y.v, 6.0);
        assert_eq!(y.d[0], 2.0);
    }

    #[test]
    fn constant_has_zero_derivative() {
        let y = T3::cst(5.0);
        assert_eq!(y.d, [0.0; 3]);
    }

    #[test]
    fn cubic_derivatives_are_exact() {
        // f(x, y) = x^3 y - 2 x y^2 + 7
        let f = |x: T3, y: T3| x.powi(3) * y - (x * y * y).scale(2.0) + T3::cst(7.0);
        let (x0, y0) = (1.7, -0.4);
        let r = f(T3::seeded(x0, 0), T3::seeded(y0, 1));
        let dx = 3.0 * x0 * x0 * y0 - 2.0 * y0 * y0;
        let dy = x0.powi(3) - 4.0 * x0 * y0;
        assert!(((r.d[0] - dx) / dx).abs() < 1e-12);
        assert!(((r.d[1] - dy) / dy).abs() < 1e-12);
        assert_eq!(r.d[2], 0.0);
    }

    #[test]
    fn affine_matches_expanded() {
        let w = [T3::seeded(0.3, 0), T3::cst(-1.2)];
        let x = [T3::seeded(2.0, 1), T3::seeded(0.7, 2)];
        let b = T3::cst(0.1);
        let fused = T3::affine(b, w.iter().copied().zip(x.iter().copied()));
        let plain = b + w[0] * x[0] + w[1] * x[1];
        assert!((fused.v - plain.v).abs() < 1e-15);
        for k in 0..3 {
            assert!((fused.d[k] - plain.d[k]).abs() < 1e-15);
        }
    }
}
