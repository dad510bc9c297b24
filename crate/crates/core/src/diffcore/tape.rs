use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::real::{Lift, Real};
use super::tangent::Tangent;

const CONST: u32 = u32::MAX;

/// Recording of elementary operations for one reverse sweep.
///
/// Every node stores its value and a list of `(parent, partial)` entries.
/// Nodes are appended in evaluation order so a single backward pass over the
/// node list in reverse visits every node after all of its consumers.
#[derive(Default)]
pub struct Tape {
    inner: RefCell<Inner>,
}

#[derive(Default)]
struct Inner {
    values: Vec<f64>,
    ends: Vec<u32>,
    parents: Vec<u32>,
    partials: Vec<f64>,
    adjoints: Vec<f64>,
    scratch: Vec<(u32, f64)>,
}

impl Inner {
    #[inline]
    fn push(&mut self, value: f64) -> u32 {
        let idx = self.values.len() as u32;
        self.values.push(value);
        self.ends.push(self.parents.len() as u32);
        idx
    }

    #[inline]
    fn entry(&mut self, parent: u32, partial: f64) {
        self.parents.push(parent);
        self.partials.push(partial);
    }
}

impl Tape {
    fn take_scratch(&self) -> Vec<(u32, f64)> {
        std::mem::take(&mut self.inner.borrow_mut().scratch)
    }

    /// Records a node from entries gathered while its inputs were evaluated.
    fn push_gathered(&self, val: f64, mut entries: Vec<(u32, f64)>) -> u32 {
        let mut inner = self.inner.borrow_mut();
        inner.parents.extend(entries.iter().map(|e| e.0));
        inner.partials.extend(entries.iter().map(|e| e.1));
        let idx = inner.push(val);
        entries.clear();
        inner.scratch = entries;
        idx
    }

    pub fn new() -> Self {
        Self::default()
    }

    /// Independent variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        let idx = self.inner.borrow_mut().push(value);
        Var {
            tape: Some(self),
            idx,
            val: value,
        }
    }

    pub fn vars(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops every node recorded after `mark` (a previous [`Tape::len`]).
    pub fn rewind(&self, mark: usize) {
        let mut inner = self.inner.borrow_mut();
        if mark >= inner.values.len() {
            return;
        }
        let entries = if mark == 0 { 0 } else { inner.ends[mark - 1] as usize };
        inner.values.truncate(mark);
        inner.ends.truncate(mark);
        inner.parents.truncate(entries);
        inner.partials.truncate(entries);
    }

    pub fn clear(&self) {
        self.rewind(0);
    }

    /// Index of the first node holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.inner.borrow().values.iter().position(|v| !v.is_finite())
    }

    /// Reverse sweep seeded with `seed` at `output`; adds the adjoints of
    /// nodes `0..grad.len()` (the leaves registered first) into `grad`.
    pub fn accumulate(&self, output: Var<'_>, seed: f64, grad: &mut [f64]) {
        if output.idx == CONST {
            return;
        }
        let mut guard = self.inner.borrow_mut();
        let inner = &mut *guard;
        let n = output.idx as usize + 1;
        inner.adjoints.clear();
        inner.adjoints.resize(n, 0.0);
        inner.adjoints[n - 1] = seed;
        let Inner {
            ends,
            parents,
            partials,
            adjoints,
            ..
        } = inner;
        for i in (0..n).rev() {
            let a = adjoints[i];
            if a == 0.0 {
                continue;
            }
            let start = if i == 0 { 0 } else { ends[i - 1] as usize };
            let end = ends[i] as usize;
            for (&p, &w) in parents[start..end].iter().zip(&partials[start..end]) {
                adjoints[p as usize] += a * w;
            }
        }
        let m = grad.len().min(n);
        for (g, a) in grad[..m].iter_mut().zip(&adjoints[..m]) {
            *g += a;
        }
    }

    /// Gradient of `output` with respect to the first `n_leaves` nodes.
    pub fn gradient(&self, output: Var<'_>, n_leaves: usize) -> Vec<f64> {
        let mut grad = vec![0.0; n_leaves];
        self.accumulate(output, 1.0, &mut grad);
        grad
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.inner.borrow();
        f.debug_struct("Tape")
            .field("nodes", &inner.values.len())
            .field("entries", &inner.parents.len())
            .finish()
    }
}

/// Reverse-mode scalar bound to a [`Tape`]. Constants carry no tape and never
/// produce nodes.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: Option<&'t Tape>,
    idx: u32,
    val: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.idx == CONST {
            write!(f, "Var(const {})", self.val)
        } else {
            write!(f, "Var(#{} = {})", self.idx, self.val)
        }
    }
}

impl<'t> Var<'t> {
    #[inline]
    pub fn constant(val: f64) -> Self {
        Var {
            tape: None,
            idx: CONST,
            val,
        }
    }

    #[inline]
    pub fn is_constant(&self) -> bool {
        self.idx == CONST
    }

    #[inline]
    pub fn index(&self) -> Option<usize> {
        (!self.is_constant()).then_some(self.idx as usize)
    }

    #[inline]
    fn unary(self, val: f64, partial: f64) -> Self {
        match self.tape {
            None => Var::constant(val),
            Some(tape) => {
                let mut inner = tape.inner.borrow_mut();
                inner.entry(self.idx, partial);
                let idx = inner.push(val);
                Var {
                    tape: Some(tape),
                    idx,
                    val,
                }
            }
        }
    }

    #[inline]
    fn binary(self, rhs: Self, val: f64, da: f64, db: f64) -> Self {
        let tape = match self.tape.or(rhs.tape) {
            None => return Var::constant(val),
            Some(t) => t,
        };
        let mut inner = tape.inner.borrow_mut();
        if self.idx != CONST {
            inner.entry(self.idx, da);
        }
        if rhs.idx != CONST {
            inner.entry(rhs.idx, db);
        }
        let idx = inner.push(val);
        Var {
            tape: Some(tape),
            idx,
            val,
        }
    }
}

impl Add for Var<'_> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        if rhs.is_constant() && rhs.val == 0.0 {
            return self;
        }
        if self.is_constant() && self.val == 0.0 {
            return rhs;
        }
        self.binary(rhs, self.val + rhs.val, 1.0, 1.0)
    }
}

impl Sub for Var<'_> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        if rhs.is_constant() && rhs.val == 0.0 {
            return self;
        }
        self.binary(rhs, self.val - rhs.val, 1.0, -1.0)
    }
}

impl Mul for Var<'_> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        if (self.is_constant() && self.val == 0.0) || (rhs.is_constant() && rhs.val == 0.0) {
            return Var::constant(0.0);
        }
        if rhs.is_constant() && rhs.val == 1.0 {
            return self;
        }
        if self.is_constant() && self.val == 1.0 {
            return rhs;
        }
        self.binary(rhs, self.val * rhs.val, rhs.val, self.val)
    }
}

impl Div for Var<'_> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        if self.is_constant() && self.val == 0.0 && rhs.val != 0.0 {
            return Var::constant(0.0);
        }
        let q = self.val / rhs.val;
        self.binary(rhs, q, 1.0 / rhs.val, -q / rhs.val)
    }
}

impl Neg for Var<'_> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        self.unary(-self.val, -1.0)
    }
}

impl Real for Var<'_> {
    #[inline]
    fn cst(c: f64) -> Self {
        Var::constant(c)
    }

    #[inline]
    fn value(&self) -> f64 {
        self.val
    }

    fn exp(self) -> Self {
        let e = self.val.exp();
        self.unary(e, e)
    }

    fn ln(self) -> Self {
        self.unary(self.val.ln(), 1.0 / self.val)
    }

    fn tanh(self) -> Self {
        let th = self.val.tanh();
        self.unary(th, 1.0 - th * th)
    }

    fn sin(self) -> Self {
        self.unary(self.val.sin(), self.val.cos())
    }

    fn cos(self) -> Self {
        self.unary(self.val.cos(), -self.val.sin())
    }

    fn sqrt(self) -> Self {
        let s = self.val.sqrt();
        self.unary(s, 0.5 / s)
    }

    fn sigmoid(self) -> Self {
        let s = self.val.sigmoid();
        self.unary(s, s * (1.0 - s))
    }

    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Var::constant(1.0);
        }
        self.unary(self.val.powi(n), n as f64 * self.val.powi(n - 1))
    }

    #[inline]
    fn scale(self, c: f64) -> Self {
        if c == 1.0 {
            return self;
        }
        if c == 0.0 {
            return Var::constant(0.0);
        }
        self.unary(self.val * c, c)
    }

    #[inline]
    fn offset(self, c: f64) -> Self {
        if c == 0.0 {
            return self;
        }
        self.unary(self.val + c, 1.0)
    }

    // Terms may record nodes themselves, so entries are gathered without
    // holding the tape borrow and written once the inputs are all evaluated.
    fn affine<I>(bias: Self, terms: I) -> Self
    where
        I: Iterator<Item = (Self, Self)> + Clone,
    {
        let mut tape = bias.tape;
        let mut entries = tape.map(Tape::take_scratch).unwrap_or_default();
        if !bias.is_constant() {
            entries.push((bias.idx, 1.0));
        }
        let mut val = bias.val;
        for (w, x) in terms {
            val += w.val * x.val;
            if tape.is_none() {
                tape = w.tape.or(x.tape);
                if let Some(t) = tape {
                    entries = t.take_scratch();
                }
            }
            if !w.is_constant() && x.val != 0.0 {
                entries.push((w.idx, x.val));
            }
            if !x.is_constant() && w.val != 0.0 {
                entries.push((x.idx, w.val));
            }
        }
        match tape {
            None => Var::constant(val),
            Some(t) => Var {
                tape: Some(t),
                idx: t.push_gathered(val, entries),
                val,
            },
        }
    }

    fn affine_cst<I>(bias: f64, terms: I) -> Self
    where
        I: Iterator<Item = (f64, Self)> + Clone,
    {
        let mut tape: Option<&Tape> = None;
        let mut entries = Vec::new();
        let mut val = bias;
        for (c, x) in terms {
            val += c * x.val;
            if tape.is_none() {
                tape = x.tape;
                if let Some(t) = tape {
                    entries = t.take_scratch();
                }
            }
            if !x.is_constant() && c != 0.0 {
                entries.push((x.idx, c));
            }
        }
        match tape {
            None => Var::constant(val),
            Some(t) => Var {
                tape: Some(t),
                idx: t.push_gathered(val, entries),
                val,
            },
        }
    }
}

impl<'t> Lift<Var<'t>> for Var<'t> {
    #[inline]
    fn lift(self) -> Var<'t> {
        self
    }
}

impl<'t, const N: usize> Lift<Tangent<Var<'t>, N>> for Var<'t> {
    #[inline]
    fn lift(self) -> Tangent<Var<'t>, N> {
        Tangent::constant(self)
    }
}
