//! Scalar abstraction over plain `f64` and `Jet`.
//!
//! Every model-space formula is written once against this trait, so the same
//! code path produces plain values and truncated Taylor expansions.

use crate::error::Result;
use crate::jet::Jet;

pub trait Scalar: Clone + std::fmt::Debug + Send + Sync {
    /// Order-zero part of the quantity.
    fn value(&self) -> f64;
    /// A constant with the same shape as `self`.
    fn lift(&self, v: f64) -> Self;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn neg(&self) -> Self;
    fn scale(&self, k: f64) -> Self;
    fn div(&self, o: &Self) -> Result<Self>;
    fn sqrt(&self) -> Result<Self>;
    fn recip(&self) -> Result<Self>;
    fn add_assign(&mut self, o: &Self);
    fn sub_assign(&mut self, o: &Self);
    /// `self += a * b`.
    fn mul_acc(&mut self, a: &Self, b: &Self);
    /// `self -= a * b`.
    fn mul_sub_acc(&mut self, a: &Self, b: &Self);
}

impl Scalar for f64 {
    fn value(&self) -> f64 {
        *self
    }
    fn lift(&self, v: f64) -> f64 {
        v
    }
    fn add(&self, o: &f64) -> f64 {
        self + o
    }
    fn sub(&self, o: &f64) -> f64 {
        self - o
    }
    fn mul(&self, o: &f64) -> f64 {
        self * o
    }
    fn neg(&self) -> f64 {
        -self
    }
    fn scale(&self, k: f64) -> f64 {
        self * k
    }
    fn div(&self, o: &f64) -> Result<f64> {
        if o.abs() < 1e-300 {
            return Err(crate::error::QcError::ZeroDivisor(
                "division by (numerically) zero scalar".into(),
            ));
        }
        Ok(self / o)
    }
    fn sqrt(&self) -> Result<f64> {
        if *self <= 0.0 {
            return Err(crate::error::QcError::DomainError(format!(
                "sqrt of non-positive value {self}"
            )));
        }
        Ok(f64::sqrt(*self))
    }
    fn recip(&self) -> Result<f64> {
        1.0.div(self)
    }
    fn add_assign(&mut self, o: &f64) {
        *self += o;
    }
    fn sub_assign(&mut self, o: &f64) {
        *self -= o;
    }
    fn mul_acc(&mut self, a: &f64, b: &f64) {
        *self += a * b;
    }
    fn mul_sub_acc(&mut self, a: &f64, b: &f64) {
        *self -= a * b;
    }
}

impl Scalar for Jet {
    fn value(&self) -> f64 {
        Jet::value(self)
    }
    fn lift(&self, v: f64) -> Jet {
        Jet::lift(self, v)
    }
    fn add(&self, o: &Jet) -> Jet {
        Jet::add(self, o)
    }
    fn sub(&self, o: &Jet) -> Jet {
        Jet::sub(self, o)
    }
    fn mul(&self, o: &Jet) -> Jet {
        Jet::mul(self, o)
    }
    fn neg(&self) -> Jet {
        Jet::neg(self)
    }
    fn scale(&self, k: f64) -> Jet {
        Jet::scale(self, k)
    }
    fn div(&self, o: &Jet) -> Result<Jet> {
        Jet::div(self, o)
    }
    fn sqrt(&self) -> Result<Jet> {
        Jet::sqrt(self)
    }
    fn recip(&self) -> Result<Jet> {
        Jet::recip(self)
    }
    fn add_assign(&mut self, o: &Jet) {
        Jet::add_assign(self, o);
    }
    fn sub_assign(&mut self, o: &Jet) {
        Jet::sub_assign(self, o);
    }
    fn mul_acc(&mut self, a: &Jet, b: &Jet) {
        Jet::mul_acc(self, a, b);
    }
    fn mul_sub_acc(&mut self, a: &Jet, b: &Jet) {
        Jet::mul_sub_acc(self, a, b);
    }
}

/// Inner product of two component slices.
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut acc = a[0].lift(0.0);
    for (x, y) in a.iter().zip(b) {
        acc.mul_acc(x, y);
    }
    acc
}

/// `out += k * v` componentwise.
pub fn axpy<S: Scalar>(out: &mut [S], v: &[S], k: &S) {
    for (o, x) in out.iter_mut().zip(v) {
        o.mul_acc(k, x);
    }
}
