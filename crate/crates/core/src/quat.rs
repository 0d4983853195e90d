//! Quaternion algebra over a generic scalar.
//!
//! The group law, contact forms and conformal transforms of the model spaces
//! are quaternionic formulas. Making the algebra generic over [`Scalar`] lets
//! the same formulas run on plain values and on jets, so pullbacks can be
//! differentiated without a second implementation.

use crate::error::{QcError, Result};
use crate::scalar::Scalar;

/// A quaternion `re + im[0] i + im[1] j + im[2] k`.
#[derive(Clone, Debug)]
pub struct Quaternion<S: Scalar> {
    pub re: S,
    pub im: [S; 3],
}

/// A purely imaginary quaternion, kept as a distinct type because the group
/// vertical layer lives in Im H.
#[derive(Clone, Debug)]
pub struct ImQuaternion<S: Scalar>(pub [S; 3]);

impl<S: Scalar> Quaternion<S> {
    pub fn new(re: S, i: S, j: S, k: S) -> Self {
        Quaternion { re, im: [i, j, k] }
    }

    /// Constant quaternion shaped like `template`.
    pub fn from_f64(template: &S, c: [f64; 4]) -> Self {
        Quaternion {
            re: template.lift(c[0]),
            im: [template.lift(c[1]), template.lift(c[2]), template.lift(c[3])],
        }
    }

    pub fn zero_like(template: &S) -> Self {
        Self::from_f64(template, [0.0; 4])
    }

    pub fn one_like(template: &S) -> Self {
        Self::from_f64(template, [1.0, 0.0, 0.0, 0.0])
    }

    pub fn from_im(im: &ImQuaternion<S>) -> Self {
        Quaternion {
            re: im.0[0].lift(0.0),
            im: im.0.clone(),
        }
    }

    pub fn conj(&self) -> Self {
        Quaternion {
            re: self.re.clone(),
            im: [self.im[0].neg(), self.im[1].neg(), self.im[2].neg()],
        }
    }

    pub fn add(&self, o: &Self) -> Self {
        Quaternion {
            re: self.re.add(&o.re),
            im: [
                self.im[0].add(&o.im[0]),
                self.im[1].add(&o.im[1]),
                self.im[2].add(&o.im[2]),
            ],
        }
    }

    pub fn sub(&self, o: &Self) -> Self {
        Quaternion {
            re: self.re.sub(&o.re),
            im: [
                self.im[0].sub(&o.im[0]),
                self.im[1].sub(&o.im[1]),
                self.im[2].sub(&o.im[2]),
            ],
        }
    }

    pub fn neg(&self) -> Self {
        Quaternion {
            re: self.re.neg(),
            im: [self.im[0].neg(), self.im[1].neg(), self.im[2].neg()],
        }
    }

    pub fn scale(&self, k: f64) -> Self {
        Quaternion {
            re: self.re.scale(k),
            im: [
                self.im[0].scale(k),
                self.im[1].scale(k),
                self.im[2].scale(k),
            ],
        }
    }

    pub fn scale_s(&self, k: &S) -> Self {
        Quaternion {
            re: self.re.mul(k),
            im: [self.im[0].mul(k), self.im[1].mul(k), self.im[2].mul(k)],
        }
    }

    /// Hamilton product. Non-commutative.
    pub fn mul(&self, o: &Self) -> Self {
        let (a, b) = (self, o);
        let mut re = a.re.mul(&b.re);
        re.mul_sub_acc(&a.im[0], &b.im[0]);
        re.mul_sub_acc(&a.im[1], &b.im[1]);
        re.mul_sub_acc(&a.im[2], &b.im[2]);

        // i component: a0 b1 + a1 b0 + a2 b3 - a3 b2
        let mut i = a.re.mul(&b.im[0]);
        i.mul_acc(&a.im[0], &b.re);
        i.mul_acc(&a.im[1], &b.im[2]);
        i.mul_sub_acc(&a.im[2], &b.im[1]);

        let mut j = a.re.mul(&b.im[1]);
        j.mul_acc(&a.im[1], &b.re);
        j.mul_acc(&a.im[2], &b.im[0]);
        j.mul_sub_acc(&a.im[0], &b.im[2]);

        let mut k = a.re.mul(&b.im[2]);
        k.mul_acc(&a.im[2], &b.re);
        k.mul_acc(&a.im[0], &b.im[1]);
        k.mul_sub_acc(&a.im[1], &b.im[0]);

        Quaternion { re, im: [i, j, k] }
    }

    pub fn norm_sq(&self) -> S {
        let mut n = self.re.mul(&self.re);
        for c in &self.im {
            n.mul_acc(c, c);
        }
        n
    }

    pub fn norm(&self) -> Result<S> {
        self.norm_sq().sqrt()
    }

    /// Multiplicative inverse, `conj(a) / |a|^2`.
    pub fn inv(&self) -> Result<Self> {
        let nsq = self.norm_sq();
        if nsq.value().sqrt() < 1e-300 {
            return Err(QcError::ZeroDivisor("inverse of zero quaternion".into()));
        }
        let inv_nsq = nsq.recip()?;
        Ok(self.conj().scale_s(&inv_nsq))
    }

    pub fn im_part(&self) -> ImQuaternion<S> {
        ImQuaternion(self.im.clone())
    }

    pub fn components(&self) -> [S; 4] {
        [
            self.re.clone(),
            self.im[0].clone(),
            self.im[1].clone(),
            self.im[2].clone(),
        ]
    }
}

impl<S: Scalar> ImQuaternion<S> {
    pub fn zero_like(template: &S) -> Self {
        ImQuaternion([template.lift(0.0), template.lift(0.0), template.lift(0.0)])
    }

    pub fn add(&self, o: &Self) -> Self {
        ImQuaternion([
            self.0[0].add(&o.0[0]),
            self.0[1].add(&o.0[1]),
            self.0[2].add(&o.0[2]),
        ])
    }

    pub fn sub(&self, o: &Self) -> Self {
        ImQuaternion([
            self.0[0].sub(&o.0[0]),
            self.0[1].sub(&o.0[1]),
            self.0[2].sub(&o.0[2]),
        ])
    }

    pub fn neg(&self) -> Self {
        ImQuaternion([self.0[0].neg(), self.0[1].neg(), self.0[2].neg()])
    }

    pub fn scale(&self, k: f64) -> Self {
        ImQuaternion([self.0[0].scale(k), self.0[1].scale(k), self.0[2].scale(k)])
    }

    pub fn norm_sq(&self) -> S {
        let mut n = self.0[0].mul(&self.0[0]);
        n.mul_acc(&self.0[1], &self.0[1]);
        n.mul_acc(&self.0[2], &self.0[2]);
        n
    }
}

/// A vector of quaternions, the `H^n` model coordinate.
#[derive(Clone, Debug)]
pub struct QVector<S: Scalar>(pub Vec<Quaternion<S>>);

impl<S: Scalar> QVector<S> {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn add(&self, o: &Self) -> Self {
        QVector(self.0.iter().zip(&o.0).map(|(a, b)| a.add(b)).collect())
    }

    pub fn neg(&self) -> Self {
        QVector(self.0.iter().map(|a| a.neg()).collect())
    }

    pub fn scale(&self, k: f64) -> Self {
        QVector(self.0.iter().map(|a| a.scale(k)).collect())
    }

    /// Hermitian pairing `sum_l a_l * conj(b_l)`.
    pub fn dot_conj(&self, o: &Self) -> Quaternion<S> {
        let mut acc = Quaternion::zero_like(&self.0[0].re);
        for (a, b) in self.0.iter().zip(&o.0) {
            acc = acc.add(&a.mul(&b.conj()));
        }
        acc
    }

    /// `sum_l |a_l|^2`, the real part of the Hermitian square.
    pub fn norm_sq(&self) -> S {
        let mut acc = self.0[0].re.lift(0.0);
        for a in &self.0 {
            acc.add_assign(&a.norm_sq());
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(c: [f64; 4]) -> Quaternion<f64> {
        Quaternion::new(c[0], c[1], c[2], c[3])
    }

    #[test]
    fn imaginary_unit_products() {
        let i = q([0.0, 1.0, 0.0, 0.0]);
        let j = q([0.0, 0.0, 1.0, 0.0]);
        let k = i.mul(&j);
        assert_eq!(k.components(), [0.0, 0.0, 0.0, 1.0]);
        let one = q([1.0, 0.0, 0.0, 0.0]);
        let any = q([0.3, -1.2, 0.5, 2.0]);
        let p = one.mul(&any);
        assert_eq!(p.components(), any.components());
    }

    #[test]
    fn bilinear_expansion() {
        // (1+i)(1+j) = 1 + i + j + k
        let a = q([1.0, 1.0, 0.0, 0.0]);
        let b = q([1.0, 0.0, 1.0, 0.0]);
        assert_eq!(a.mul(&b).components(), [1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn inverses() {
        let i = q([0.0, 1.0, 0.0, 0.0]);
        assert_eq!(i.inv().unwrap().components(), [0.0, -1.0, 0.0, 0.0]);
        let two = q([2.0, 0.0, 0.0, 0.0]);
        assert_eq!(two.inv().unwrap().components(), [0.5, 0.0, 0.0, 0.0]);
        let a = q([1.0, 1.0, 0.0, 0.0]);
        let inv = a.inv().unwrap();
        assert_eq!(inv.components(), [0.5, -0.5, 0.0, 0.0]);
        let p = a.mul(&inv).components();
        assert!((p[0] - 1.0).abs() < 1e-15);
        for c in &p[1..] {
            assert!(c.abs() < 1e-15);
        }
    }

    #[test]
    fn inverse_of_zero_fails() {
        let z = q([0.0; 4]);
        assert!(z.inv().is_err());
    }

    #[test]
    fn im_part_examples() {
        let a = q([1.0, 2.0, 0.0, 0.0]);
        assert_eq!(a.im_part().0, [2.0, 0.0, 0.0]);
        let b = q([0.4, -0.3, 1.7, 0.2]);
        let real = b.mul(&b.conj());
        let im = real.im_part();
        for c in im.0 {
            assert!(c.abs() < 1e-15);
        }
        let i = q([0.0, 1.0, 0.0, 0.0]);
        let j = q([0.0, 0.0, 1.0, 0.0]);
        assert_eq!(i.mul(&j).im_part().0, [0.0, 0.0, 1.0]);
    }
}
