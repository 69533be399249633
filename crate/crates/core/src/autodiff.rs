//! Minimal reverse-mode automatic differentiation on a flat tape.
//!
//! The variational objectives are written generically over [`Real`] so the
//! same code path produces values (`f64`) and exact gradients ([`Ad`]).
//! Constants are spawned from an existing value (`x.c(2.0)`) so generic code
//! never needs a handle on the tape itself.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Scalar abstraction shared by plain evaluation and differentiation.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// A constant living in the same computation context as `self`.
    fn c(self, v: f64) -> Self;
    /// Current numeric value.
    fn val(self) -> f64;
    fn ln(self) -> Self;
    fn exp(self) -> Self;
    /// Multiply by a constant.
    fn scale(self, k: f64) -> Self;
    /// Add a constant.
    fn shift(self, k: f64) -> Self;
    /// `max(self, k)`; gradient is zero on the flat side.
    fn floor_at(self, k: f64) -> Self;
    /// Clamp to `[lo, hi]`; gradient is zero outside.
    fn clamp_c(self, lo: f64, hi: f64) -> Self;
    fn sq(self) -> Self {
        self * self
    }
}

impl Real for f64 {
    fn c(self, v: f64) -> Self {
        v
    }
    fn val(self) -> f64 {
        self
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn scale(self, k: f64) -> Self {
        self * k
    }
    fn shift(self, k: f64) -> Self {
        self + k
    }
    fn floor_at(self, k: f64) -> Self {
        self.max(k)
    }
    fn clamp_c(self, lo: f64, hi: f64) -> Self {
        self.clamp(lo, hi)
    }
}

#[derive(Clone, Copy)]
struct Node {
    parents: [u32; 2],
    weights: [f64; 2],
}

/// Tape of elementary operations.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, parents: [u32; 2], weights: [f64; 2]) -> u32 {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len() as u32;
        nodes.push(Node { parents, weights });
        idx
    }

    /// Register an independent variable.
    pub fn var(&self, value: f64) -> Ad<'_> {
        let idx = self.push([0, 0], [0.0, 0.0]);
        Ad {
            tape: self,
            idx,
            value,
        }
    }

    /// Register a slice of independent variables.
    pub fn vars(&self, values: &[f64]) -> Vec<Ad<'_>> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    /// Reverse sweep: gradient of `output` with respect to every tape node.
    /// Index the result by `Ad::index`.
    pub fn gradient(&self, output: Ad<'_>) -> Vec<f64> {
        let nodes = self.nodes.borrow();
        let mut adj = vec![0.0; nodes.len()];
        adj[output.idx as usize] = 1.0;
        for i in (0..nodes.len()).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let n = nodes[i];
            for s in 0..2 {
                let w = n.weights[s];
                if w != 0.0 {
                    adj[n.parents[s] as usize] += a * w;
                }
            }
        }
        adj
    }
}

/// A differentiable scalar bound to a [`Tape`].
#[derive(Clone, Copy)]
pub struct Ad<'t> {
    tape: &'t Tape,
    idx: u32,
    value: f64,
}

impl<'t> Ad<'t> {
    pub fn index(self) -> usize {
        self.idx as usize
    }

    fn unary(self, value: f64, dv: f64) -> Self {
        let idx = self.tape.push([self.idx, 0], [dv, 0.0]);
        Ad {
            tape: self.tape,
            idx,
            value,
        }
    }

    fn binary(self, rhs: Self, value: f64, dl: f64, dr: f64) -> Self {
        debug_assert!(std::ptr::eq(self.tape, rhs.tape));
        let idx = self.tape.push([self.idx, rhs.idx], [dl, dr]);
        Ad {
            tape: self.tape,
            idx,
            value,
        }
    }
}

impl<'t> Add for Ad<'t> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        self.binary(rhs, self.value + rhs.value, 1.0, 1.0)
    }
}

impl<'t> Sub for Ad<'t> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self.binary(rhs, self.value - rhs.value, 1.0, -1.0)
    }
}

impl<'t> Mul for Ad<'t> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        self.binary(rhs, self.value * rhs.value, rhs.value, self.value)
    }
}

impl<'t> Div for Ad<'t> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        self.binary(
            rhs,
            self.value / rhs.value,
            1.0 / rhs.value,
            -self.value / (rhs.value * rhs.value),
        )
    }
}

impl<'t> Neg for Ad<'t> {
    type Output = Self;
    fn neg(self) -> Self {
        self.unary(-self.value, -1.0)
    }
}

impl<'t> Real for Ad<'t> {
    fn c(self, v: f64) -> Self {
        let idx = self.tape.push([0, 0], [0.0, 0.0]);
        Ad {
            tape: self.tape,
            idx,
            value: v,
        }
    }
    fn val(self) -> f64 {
        self.value
    }
    fn ln(self) -> Self {
        self.unary(self.value.ln(), 1.0 / self.value)
    }
    fn exp(self) -> Self {
        let e = self.value.exp();
        self.unary(e, e)
    }
    fn scale(self, k: f64) -> Self {
        self.unary(self.value * k, k)
    }
    fn shift(self, k: f64) -> Self {
        self.unary(self.value + k, 1.0)
    }
    fn floor_at(self, k: f64) -> Self {
        if self.value >= k {
            self
        } else {
            self.unary(k, 0.0)
        }
    }
    fn clamp_c(self, lo: f64, hi: f64) -> Self {
        if self.value < lo {
            self.unary(lo, 0.0)
        } else if self.value > hi {
            self.unary(hi, 0.0)
        } else {
            self
        }
    }
}

/// Numerically stable log-sum-exp; the max is kept as a tape variable so the
/// gradient is exact.
pub fn logsumexp<R: Real>(terms: &[R]) -> R {
    debug_assert!(!terms.is_empty());
    let mut arg = 0;
    for (i, t) in terms.iter().enumerate() {
        if t.val() > terms[arg].val() {
            arg = i;
        }
    }
    let m = terms[arg];
    if !m.val().is_finite() {
        // All -inf (or a NaN slipped in); avoid inf - inf.
        return m;
    }
    let mut sum = m.c(0.0);
    for t in terms {
        sum = sum + (*t - m).exp();
    }
    m + sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut a = x.to_vec();
                let mut b = x.to_vec();
                a[i] += h;
                b[i] -= h;
                (f(&a) - f(&b)) / (2.0 * h)
            })
            .collect()
    }

    fn test_fn<R: Real>(x: &[R]) -> R {
        let a = x[0] * x[1] + x[0].sq().scale(0.5);
        let b = (x[1].shift(2.0)).ln() * x[2].exp();
        let c = logsumexp(&[x[0], x[1], x[2].scale(3.0)]);
        a + b / (x[0].sq().shift(1.0)) - c
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let x = [0.3, -0.7, 0.9];
        let tape = Tape::new();
        let vars = tape.vars(&x);
        let out = test_fn(&vars);
        assert!((out.val() - test_fn(&x[..])).abs() < 1e-14);
        let adj = tape.gradient(out);
        let g: Vec<f64> = vars.iter().map(|v| adj[v.index()]).collect();
        let gfd = fd(|x| test_fn(x), &x, 1e-6);
        for (a, b) in g.iter().zip(&gfd) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
    }

    #[test]
    fn floor_and_clamp_gradients() {
        let tape = Tape::new();
        let v = tape.var(-5.0);
        let out = v.floor_at(-1.0);
        assert_eq!(out.val(), -1.0);
        let adj = tape.gradient(out);
        assert_eq!(adj[v.index()], 0.0);

        let tape = Tape::new();
        let v = tape.var(0.5);
        let out = v.clamp_c(0.0, 1.0).scale(3.0);
        let adj = tape.gradient(out);
        assert_eq!(adj[v.index()], 3.0);
    }

    #[test]
    fn logsumexp_all_neg_inf() {
        let terms = [f64::NEG_INFINITY, f64::NEG_INFINITY];
        assert_eq!(logsumexp(&terms), f64::NEG_INFINITY);
    }
}
