//! Scalar abstraction shared by plain `f64` evaluation and exact
//! second-order forward differentiation.
//!
//! Model code (power injections, fault-on Taylor series, Lyapunov energy) is
//! written once against [`Real`] and evaluated either on `f64` or on
//! [`Dual2`], which carries a dense gradient and Hessian with respect to a
//! small set of seeded variables.

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Real:
    Clone
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn constant(v: f64) -> Self;
    fn value(&self) -> f64;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn sqrt(&self) -> Self;

    fn zero() -> Self {
        Self::constant(0.0)
    }

    fn sin_cos(&self) -> (Self, Self) {
        (self.sin(), self.cos())
    }

    fn square(&self) -> Self {
        self.clone() * self.clone()
    }
}

impl Real for f64 {
    fn constant(v: f64) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn sin(&self) -> Self {
        f64::sin(*self)
    }
    fn cos(&self) -> Self {
        f64::cos(*self)
    }
    fn sqrt(&self) -> Self {
        f64::sqrt(*self)
    }
    fn sin_cos(&self) -> (Self, Self) {
        f64::sin_cos(*self)
    }
}

/// Value, gradient and (dense, row-major) Hessian of a scalar with respect
/// to `n` seeded variables. Constants carry empty derivative storage.
#[derive(Clone, PartialEq)]
pub struct Dual2 {
    pub v: f64,
    g: Vec<f64>,
    h: Vec<f64>,
}

impl fmt::Debug for Dual2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Dual2({}, n={})", self.v, self.g.len())
    }
}

impl Dual2 {
    /// The `k`-th of `n` independent variables at value `v`.
    pub fn variable(v: f64, k: usize, n: usize) -> Self {
        let mut g = vec![0.0; n];
        g[k] = 1.0;
        Dual2 { v, g, h: vec![0.0; n * n] }
    }

    pub fn seed(values: &[f64]) -> Vec<Dual2> {
        let n = values.len();
        values.iter().enumerate().map(|(k, &v)| Self::variable(v, k, n)).collect()
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn grad(&self, n: usize) -> Vec<f64> {
        if self.g.is_empty() {
            vec![0.0; n]
        } else {
            self.g.clone()
        }
    }

    /// Hessian entry; zero for constants.
    pub fn hess(&self, i: usize, j: usize) -> f64 {
        if self.g.is_empty() {
            0.0
        } else {
            self.h[i * self.g.len() + j]
        }
    }

    fn chain(&self, f0: f64, f1: f64, f2: f64) -> Dual2 {
        let n = self.g.len();
        if n == 0 {
            return Dual2::constant(f0);
        }
        let g: Vec<f64> = self.g.iter().map(|gi| f1 * gi).collect();
        let mut h = Vec::with_capacity(n * n);
        for i in 0..n {
            let gi = self.g[i];
            let row = &self.h[i * n..(i + 1) * n];
            for j in 0..n {
                h.push(f1 * row[j] + f2 * gi * self.g[j]);
            }
        }
        Dual2 { v: f0, g, h }
    }

    fn scale(mut self, s: f64) -> Dual2 {
        self.v *= s;
        self.g.iter_mut().for_each(|x| *x *= s);
        self.h.iter_mut().for_each(|x| *x *= s);
        self
    }

    fn recip(&self) -> Dual2 {
        let u = self.v;
        self.chain(1.0 / u, -1.0 / (u * u), 2.0 / (u * u * u))
    }
}

impl Real for Dual2 {
    fn constant(v: f64) -> Self {
        Dual2 { v, g: Vec::new(), h: Vec::new() }
    }
    fn value(&self) -> f64 {
        self.v
    }
    fn sin(&self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(s, c, -s)
    }
    fn cos(&self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(c, -s, -c)
    }
    fn sqrt(&self) -> Self {
        let r = self.v.sqrt();
        self.chain(r, 0.5 / r, -0.25 / (r * self.v))
    }
    fn sin_cos(&self) -> (Self, Self) {
        let (s, c) = self.v.sin_cos();
        (self.chain(s, c, -s), self.chain(c, -s, -c))
    }
}

fn zip_add(a: &mut Vec<f64>, b: &[f64], sign: f64) {
    if b.is_empty() {
        return;
    }
    if a.is_empty() {
        a.extend(b.iter().map(|x| sign * x));
    } else {
        a.iter_mut().zip(b).for_each(|(x, y)| *x += sign * y);
    }
}

impl Add for Dual2 {
    type Output = Dual2;
    fn add(mut self, rhs: Dual2) -> Dual2 {
        self.v += rhs.v;
        zip_add(&mut self.g, &rhs.g, 1.0);
        zip_add(&mut self.h, &rhs.h, 1.0);
        self
    }
}

impl Sub for Dual2 {
    type Output = Dual2;
    fn sub(mut self, rhs: Dual2) -> Dual2 {
        self.v -= rhs.v;
        zip_add(&mut self.g, &rhs.g, -1.0);
        zip_add(&mut self.h, &rhs.h, -1.0);
        self
    }
}

impl Mul for Dual2 {
    type Output = Dual2;
    fn mul(self, rhs: Dual2) -> Dual2 {
        match (self.g.is_empty(), rhs.g.is_empty()) {
            (true, _) => rhs.scale(self.v),
            (_, true) => self.scale(rhs.v),
            _ => {
                let n = self.g.len();
                let (a, b) = (self.v, rhs.v);
                let g: Vec<f64> = self.g.iter().zip(&rhs.g).map(|(ga, gb)| a * gb + b * ga).collect();
                let mut h = Vec::with_capacity(n * n);
                for i in 0..n {
                    for j in 0..n {
                        let k = i * n + j;
                        h.push(
                            a * rhs.h[k]
                                + b * self.h[k]
                                + self.g[i] * rhs.g[j]
                                + rhs.g[i] * self.g[j],
                        );
                    }
                }
                Dual2 { v: a * b, g, h }
            }
        }
    }
}

impl Div for Dual2 {
    type Output = Dual2;
    fn div(self, rhs: Dual2) -> Dual2 {
        if rhs.g.is_empty() {
            let s = 1.0 / rhs.v;
            return self.scale(s);
        }
        self * rhs.recip()
    }
}

impl Neg for Dual2 {
    type Output = Dual2;
    fn neg(self) -> Dual2 {
        self.scale(-1.0)
    }
}

impl Add<f64> for Dual2 {
    type Output = Dual2;
    fn add(mut self, rhs: f64) -> Dual2 {
        self.v += rhs;
        self
    }
}

impl Sub<f64> for Dual2 {
    type Output = Dual2;
    fn sub(mut self, rhs: f64) -> Dual2 {
        self.v -= rhs;
        self
    }
}

impl Mul<f64> for Dual2 {
    type Output = Dual2;
    fn mul(self, rhs: f64) -> Dual2 {
        self.scale(rhs)
    }
}

impl Div<f64> for Dual2 {
    type Output = Dual2;
    fn div(self, rhs: f64) -> Dual2 {
        self.scale(1.0 / rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f<T: Real>(x: &[T]) -> T {
        // x0^2 sin(x1) / (1 + x0 x1) + sqrt(x1)
        let num = x[0].square() * x[1].sin();
        let den = x[0].clone() * x[1].clone() + 1.0;
        num / den + x[1].sqrt()
    }

    #[test]
    fn derivatives_match_central_differences() {
        let p = [0.7, 1.3];
        let d = f(&Dual2::seed(&p));
        let h = 1e-5;
        for i in 0..2 {
            let mut a = p;
            let mut b = p;
            a[i] += h;
            b[i] -= h;
            let fd = (f(&a) - f(&b)) / (2.0 * h);
            assert!((d.grad(2)[i] - fd).abs() < 1e-8);
            for j in 0..2 {
                let ga = f(&Dual2::seed(&a)).grad(2)[j];
                let gb = f(&Dual2::seed(&b)).grad(2)[j];
                let fd2 = (ga - gb) / (2.0 * h);
                assert!((d.hess(i, j) - fd2).abs() < 1e-7, "{i}{j}");
            }
        }
        assert!((d.v - f(&p)).abs() < 1e-15);
    }

    #[test]
    fn constants_mix_with_variables() {
        let x = Dual2::variable(2.0, 0, 1);
        let c = Dual2::constant(3.0);
        let y = (c.clone() * x.clone()) / c + Dual2::constant(1.0) - x;
        assert_eq!(y.v, 1.0);
        assert_eq!(y.grad(1), vec![0.0]);
    }
}
