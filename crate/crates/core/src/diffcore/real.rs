use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

use num_traits::Float;

/// Scalar abstraction shared by plain floats, tangent bundles and adjoint
/// variables. Every model in this crate is written once against this trait.
///
/// Comparisons go through [`Real::value`]; code that branches on the value
/// differentiates only the active branch.
pub trait Real:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn cst(c: f64) -> Self;
    fn value(&self) -> f64;

    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn sqrt(self) -> Self;
    fn sigmoid(self) -> Self;
    fn powi(self, n: i32) -> Self;

    fn zero() -> Self {
        Self::cst(0.0)
    }

    fn silu(self) -> Self {
        self * self.sigmoid()
    }

    fn scale(self, c: f64) -> Self {
        self * Self::cst(c)
    }

    fn offset(self, c: f64) -> Self {
        self + Self::cst(c)
    }

    /// `bias + Σ w·x`. Adjoint variables record this as a single node.
    fn affine<I>(bias: Self, terms: I) -> Self
    where
        I: Iterator<Item = (Self, Self)> + Clone,
    {
        terms.fold(bias, |acc, (w, x)| acc + w * x)
    }

    /// `bias + Σ c·x` with constant coefficients.
    fn affine_cst<I>(bias: f64, terms: I) -> Self
    where
        I: Iterator<Item = (f64, Self)> + Clone,
    {
        terms.fold(Self::cst(bias), |acc, (c, x)| acc + x.scale(c))
    }

    fn sum<I>(terms: I) -> Self
    where
        I: Iterator<Item = Self> + Clone,
    {
        Self::affine_cst(0.0, terms.map(|x| (1.0, x)))
    }
}

impl<F: Float + Debug + 'static> Real for F {
    #[inline]
    fn cst(c: f64) -> Self {
        F::from(c).expect("constant not representable")
    }
    #[inline]
    fn value(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
    #[inline]
    fn exp(self) -> Self {
        Float::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        Float::ln(self)
    }
    #[inline]
    fn tanh(self) -> Self {
        Float::tanh(self)
    }
    #[inline]
    fn sin(self) -> Self {
        Float::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        Float::cos(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        Float::sqrt(self)
    }
    #[inline]
    fn sigmoid(self) -> Self {
        F::one() / (F::one() + Float::exp(-self))
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        Float::powi(self, n)
    }
    #[inline]
    fn scale(self, c: f64) -> Self {
        self * Self::cst(c)
    }
}

/// Conversion of a parameter value into the scalar type of an evaluation.
///
/// Plain `f64` parameters become constants; adjoint leaves are embedded
/// without copying the parameter vector.
pub trait Lift<S>: Copy {
    fn lift(self) -> S;
}

impl<S: Real> Lift<S> for f64 {
    #[inline]
    fn lift(self) -> S {
        S::cst(self)
    }
}

impl Lift<f32> for f32 {
    #[inline]
    fn lift(self) -> f32 {
        self
    }
}
