//! Truncated multivariate Taylor arithmetic ("jets").
//!
//! A `Jet` holds the Taylor coefficients of a scalar quantity at a base point,
//! up to a fixed total degree in a fixed number of ambient variables. Composing
//! jets through `+ - * / sqrt` yields the truncated expansion of the composed
//! function, so extracted derivatives are exact to roundoff for the algebraic
//! pipelines used by the model spaces.
//!
//! Storage is dense over all monomials of total degree <= order, enumerated
//! degree-major. The per-(dim, order) index tables are built once and cached.

use crate::error::{QcError, Result};
use once_cell::sync::Lazy;
use std::collections::HashMap;
use std::sync::{Arc, RwLock};

pub const MAX_ORDER: usize = 4;

/// Index tables for one (dim, order) combination.
pub struct JetShape {
    pub dim: usize,
    pub order: usize,
    /// Exponent vectors, degree-major; within a degree the first variable varies slowest.
    pub monomials: Vec<Vec<u8>>,
    /// Number of monomials of total degree <= d, for d = 0..=order.
    pub len_up_to: Vec<usize>,
    /// For each left index i: list of (j, k) with deg_i + deg_j <= order and
    /// monomial(k) = monomial(i) + monomial(j).
    mul: Vec<Vec<(u32, u32)>>,
    /// Per variable l: entry t gives (source index of monomial_t + e_l, factor
    /// beta_l + 1) so that d/dx_l maps coefficient arrays in place.
    deriv: Vec<Vec<(u32, f64)>>,
    rank: HashMap<Vec<u8>, u32>,
}

fn enumerate_degree(dim: usize, degree: usize, prefix: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
    if prefix.len() == dim - 1 {
        let mut v = prefix.clone();
        v.push(degree as u8);
        out.push(v);
        return;
    }
    for e in (0..=degree).rev() {
        prefix.push(e as u8);
        enumerate_degree(dim, degree - e, prefix, out);
        prefix.pop();
    }
}

impl JetShape {
    fn build(dim: usize, order: usize) -> Self {
        assert!(dim >= 1 && order <= MAX_ORDER);
        let mut monomials = Vec::new();
        let mut len_up_to = Vec::with_capacity(order + 1);
        for d in 0..=order {
            let mut block = Vec::new();
            enumerate_degree(dim, d, &mut Vec::new(), &mut block);
            monomials.extend(block);
            len_up_to.push(monomials.len());
        }
        let mut rank = HashMap::with_capacity(monomials.len());
        for (i, m) in monomials.iter().enumerate() {
            rank.insert(m.clone(), i as u32);
        }
        let mut mul = vec![Vec::new(); monomials.len()];
        for (i, mi) in monomials.iter().enumerate() {
            let di: usize = mi.iter().map(|&e| e as usize).sum();
            for (j, mj) in monomials.iter().enumerate() {
                let dj: usize = mj.iter().map(|&e| e as usize).sum();
                if di + dj > order {
                    continue;
                }
                let sum: Vec<u8> = mi.iter().zip(mj).map(|(a, b)| a + b).collect();
                mul[i].push((j as u32, rank[&sum]));
            }
        }
        let mut deriv = vec![Vec::new(); dim];
        let keep = if order == 0 { 0 } else { len_up_to[order - 1] };
        for (l, table) in deriv.iter_mut().enumerate() {
            table.reserve(keep);
            for m in monomials.iter().take(keep) {
                let mut up = m.clone();
                up[l] += 1;
                table.push((rank[&up], up[l] as f64));
            }
        }
        JetShape {
            dim,
            order,
            monomials,
            len_up_to,
            mul,
            deriv,
            rank,
        }
    }

    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    pub fn rank_of(&self, idx: &[u8]) -> Option<u32> {
        self.rank.get(idx).copied()
    }
}

static SHAPES: Lazy<RwLock<HashMap<(usize, usize), Arc<JetShape>>>> =
    Lazy::new(|| RwLock::new(HashMap::new()));

pub fn shape(dim: usize, order: usize) -> Arc<JetShape> {
    if let Some(s) = SHAPES.read().unwrap().get(&(dim, order)) {
        return s.clone();
    }
    let built = Arc::new(JetShape::build(dim, order));
    SHAPES
        .write()
        .unwrap()
        .entry((dim, order))
        .or_insert(built)
        .clone()
}

/// Truncated Taylor expansion of a scalar at a point.
///
/// `c[k]` is the Taylor coefficient of `monomials[k]`, i.e. the partial
/// derivative divided by the multi-index factorial.
///
/// `valid` tracks how many total degrees of the stored coefficients are
/// trustworthy. A formal derivative loses one degree: its top coefficients
/// would need information beyond the truncation, so they are stored as zeros
/// and must never be read. Arithmetic propagates the minimum, and extraction
/// panics on a request beyond `valid` — an under-seeded pipeline fails fast
/// instead of producing silently wrong derivatives.
#[derive(Clone)]
pub struct Jet {
    pub shape: Arc<JetShape>,
    pub valid: usize,
    pub c: Vec<f64>,
}

impl std::fmt::Debug for Jet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Jet(dim={}, order={}, valid={}, value={})",
            self.shape.dim,
            self.shape.order,
            self.valid,
            self.c[0]
        )
    }
}

impl Jet {
    pub fn constant(dim: usize, order: usize, v: f64) -> Jet {
        let sh = shape(dim, order);
        let mut c = vec![0.0; sh.len()];
        c[0] = v;
        Jet {
            shape: sh,
            valid: order,
            c,
        }
    }

    /// Coordinate jet: value `v`, unit first derivative in direction `var`.
    pub fn variable(dim: usize, order: usize, var: usize, v: f64) -> Jet {
        let mut j = Jet::constant(dim, order, v);
        if order >= 1 {
            j.c[1 + var] = 1.0;
        }
        j
    }

    /// Zero jet sharing this jet's shape tables (no registry lookup).
    /// Constants are exact, so they are valid to the full order.
    pub fn zero_like(&self) -> Jet {
        Jet {
            shape: self.shape.clone(),
            valid: self.shape.order,
            c: vec![0.0; self.c.len()],
        }
    }

    /// Constant jet sharing this jet's shape tables.
    pub fn lift(&self, v: f64) -> Jet {
        let mut j = self.zero_like();
        j.c[0] = v;
        j
    }

    pub fn dim(&self) -> usize {
        self.shape.dim
    }

    pub fn order(&self) -> usize {
        self.shape.order
    }

    pub fn value(&self) -> f64 {
        self.c[0]
    }

    /// Coefficients of total degree <= `deg` are trustworthy.
    pub fn assert_valid(&self, deg: usize) {
        assert!(
            deg <= self.valid,
            "requested degree {deg} exceeds valid jet order {} (shape order {})",
            self.valid,
            self.shape.order
        );
    }

    /// First-derivative coefficient in direction `var`.
    pub fn d1(&self, var: usize) -> f64 {
        self.assert_valid(1);
        self.c[1 + var]
    }

    fn assert_same(&self, o: &Jet) {
        assert!(
            Arc::ptr_eq(&self.shape, &o.shape)
                || (self.shape.dim == o.shape.dim && self.shape.order == o.shape.order),
            "jet shape mismatch: ({},{}) vs ({},{})",
            self.shape.dim,
            self.shape.order,
            o.shape.dim,
            o.shape.order
        );
    }

    pub fn add(&self, o: &Jet) -> Jet {
        self.assert_same(o);
        let mut c = self.c.clone();
        for (a, b) in c.iter_mut().zip(&o.c) {
            *a += b;
        }
        Jet {
            shape: self.shape.clone(),
            valid: self.valid.min(o.valid),
            c,
        }
    }

    pub fn sub(&self, o: &Jet) -> Jet {
        self.assert_same(o);
        let mut c = self.c.clone();
        for (a, b) in c.iter_mut().zip(&o.c) {
            *a -= b;
        }
        Jet {
            shape: self.shape.clone(),
            valid: self.valid.min(o.valid),
            c,
        }
    }

    pub fn neg(&self) -> Jet {
        let c = self.c.iter().map(|a| -a).collect();
        Jet {
            shape: self.shape.clone(),
            valid: self.valid,
            c,
        }
    }

    pub fn scale(&self, k: f64) -> Jet {
        let c = self.c.iter().map(|a| a * k).collect();
        Jet {
            shape: self.shape.clone(),
            valid: self.valid,
            c,
        }
    }

    pub fn add_assign(&mut self, o: &Jet) {
        self.assert_same(o);
        self.valid = self.valid.min(o.valid);
        for (a, b) in self.c.iter_mut().zip(&o.c) {
            *a += b;
        }
    }

    pub fn sub_assign(&mut self, o: &Jet) {
        self.assert_same(o);
        self.valid = self.valid.min(o.valid);
        for (a, b) in self.c.iter_mut().zip(&o.c) {
            *a -= b;
        }
    }

    pub fn scale_assign(&mut self, k: f64) {
        for a in self.c.iter_mut() {
            *a *= k;
        }
    }

    /// `self += k * o`.
    pub fn add_scaled_assign(&mut self, o: &Jet, k: f64) {
        self.assert_same(o);
        self.valid = self.valid.min(o.valid);
        for (a, b) in self.c.iter_mut().zip(&o.c) {
            *a += k * b;
        }
    }

    pub fn mul(&self, o: &Jet) -> Jet {
        self.assert_same(o);
        let mut out = self.zero_like();
        out.mul_acc(self, o);
        out
    }

    /// `self += a * b`, the workhorse of every contraction.
    pub fn mul_acc(&mut self, a: &Jet, b: &Jet) {
        a.assert_same(b);
        self.valid = self.valid.min(a.valid).min(b.valid);
        let table = &self.shape.mul;
        for (i, &ai) in a.c.iter().enumerate() {
            if ai == 0.0 {
                continue;
            }
            for &(j, k) in &table[i] {
                self.c[k as usize] += ai * b.c[j as usize];
            }
        }
    }

    /// `self -= a * b`.
    pub fn mul_sub_acc(&mut self, a: &Jet, b: &Jet) {
        a.assert_same(b);
        self.valid = self.valid.min(a.valid).min(b.valid);
        let table = &self.shape.mul;
        for (i, &ai) in a.c.iter().enumerate() {
            if ai == 0.0 {
                continue;
            }
            for &(j, k) in &table[i] {
                self.c[k as usize] -= ai * b.c[j as usize];
            }
        }
    }

    /// Multiplicative inverse via the truncated geometric series.
    pub fn recip(&self) -> Result<Jet> {
        let b0 = self.c[0];
        if b0.abs() < 1e-300 {
            return Err(QcError::ZeroDivisor("jet reciprocal of value-zero jet".into()));
        }
        // self = b0 (1 + u) with u nilpotent after truncation.
        let mut u = self.scale(1.0 / b0);
        u.c[0] = 0.0;
        // 1 - u + u^2 - u^3 + u^4, evaluated by Horner.
        let order = self.shape.order;
        let mut acc = self.lift(1.0);
        for _ in 0..order {
            let mut next = self.lift(1.0);
            next.mul_sub_acc(&u, &acc);
            acc = next;
        }
        Ok(acc.scale(1.0 / b0))
    }

    pub fn div(&self, o: &Jet) -> Result<Jet> {
        Ok(self.mul(&o.recip()?))
    }

    /// Truncated Taylor expansion of the square root.
    pub fn sqrt(&self) -> Result<Jet> {
        let b0 = self.c[0];
        if b0 <= 0.0 {
            return Err(QcError::DomainError(format!(
                "jet sqrt of non-positive value {b0}"
            )));
        }
        let mut u = self.scale(1.0 / b0);
        u.c[0] = 0.0;
        // (1+u)^{1/2} by binomial series, enough terms for order <= 4.
        const COEF: [f64; 5] = [1.0, 0.5, -0.125, 0.0625, -0.0390625];
        let order = self.shape.order;
        let mut acc = self.lift(COEF[order]);
        for d in (0..order).rev() {
            let mut next = self.lift(COEF[d]);
            next.mul_acc(&u, &acc);
            acc = next;
        }
        Ok(acc.scale(b0.sqrt()))
    }

    /// Partial derivative as a jet (order drops by one in content; the shape
    /// is kept, upper coefficients are zero).
    pub fn derivative(&self, var: usize) -> Jet {
        assert!(
            self.valid >= 1,
            "formal derivative of a jet with no valid derivative content"
        );
        let mut out = self.zero_like();
        out.valid = self.valid - 1;
        let table = &self.shape.deriv[var];
        for (t, &(src, factor)) in table.iter().enumerate() {
            out.c[t] = self.c[src as usize] * factor;
        }
        out
    }

    /// The derivative value for a multi-index: Taylor coefficient times the
    /// multi-index factorial.
    pub fn derivative_value(&self, idx: &[u8]) -> Result<f64> {
        if idx.len() != self.shape.dim {
            return Err(QcError::UsageError(format!(
                "multi-index length {} does not match jet dimension {}",
                idx.len(),
                self.shape.dim
            )));
        }
        let total: usize = idx.iter().map(|&e| e as usize).sum();
        if total > self.shape.order {
            return Err(QcError::UsageError(format!(
                "multi-index degree {} exceeds jet order {}",
                total, self.shape.order
            )));
        }
        self.assert_valid(total);
        let k = self.shape.rank_of(idx).ok_or_else(|| {
            QcError::UsageError("multi-index not present in jet shape".into())
        })?;
        let mut fact = 1.0;
        for &e in idx {
            for f in 2..=(e as u64) {
                fact *= f as f64;
            }
        }
        Ok(self.c[k as usize] * fact)
    }
}

/// Coordinate jets seeding a point, for orders 1..=4.
pub fn jet_seed(point: &[f64], order: usize) -> Result<Vec<Jet>> {
    if !(1..=MAX_ORDER).contains(&order) {
        return Err(QcError::UsageError(format!(
            "jet order must lie in [1, {MAX_ORDER}], got {order}"
        )));
    }
    Ok(point
        .iter()
        .enumerate()
        .map(|(i, &v)| Jet::variable(point.len(), order, i, v))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_square_matches_polynomial_derivatives() {
        let x = &jet_seed(&[2.0], 2).unwrap()[0];
        let f = x.mul(x);
        assert_eq!(f.value(), 4.0);
        assert_eq!(f.derivative_value(&[1]).unwrap(), 4.0);
        assert_eq!(f.derivative_value(&[2]).unwrap(), 2.0);
    }

    #[test]
    fn seed_reciprocal_derivatives() {
        let x = &jet_seed(&[1.0], 3).unwrap()[0];
        let one = Jet::constant(1, 3, 1.0);
        let f = one.div(x).unwrap();
        let d: Vec<f64> = (0..=3)
            .map(|k| f.derivative_value(&[k as u8]).unwrap())
            .collect();
        assert_eq!(d, vec![1.0, -1.0, 2.0, -6.0]);
    }

    #[test]
    fn seed_sqrt_derivatives() {
        let x = &jet_seed(&[4.0], 3).unwrap()[0];
        let f = x.sqrt().unwrap();
        let d: Vec<f64> = (0..=3)
            .map(|k| f.derivative_value(&[k as u8]).unwrap())
            .collect();
        let expect = [2.0, 0.25, -1.0 / 32.0, 3.0 / 256.0];
        for (a, b) in d.iter().zip(expect) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }

    #[test]
    fn division_by_self_is_constant_one() {
        let x = &jet_seed(&[3.7], 3).unwrap()[0];
        let f = x.div(x).unwrap();
        assert!((f.value() - 1.0).abs() < 1e-15);
        for &c in &f.c[1..] {
            assert!(c.abs() < 1e-15);
        }
    }

    #[test]
    fn sqrt_of_square_recovers_coordinate() {
        let x = &jet_seed(&[5.0], 3).unwrap()[0];
        let f = x.mul(x).sqrt().unwrap();
        let d: Vec<f64> = (0..=3)
            .map(|k| f.derivative_value(&[k as u8]).unwrap())
            .collect();
        let expect = [5.0, 1.0, 0.0, 0.0];
        for (a, b) in d.iter().zip(expect) {
            assert!((a - b).abs() < 1e-13, "{a} vs {b}");
        }
    }

    #[test]
    fn product_difference_of_squares() {
        let s = jet_seed(&[1.3, -0.7], 3).unwrap();
        let (x, y) = (&s[0], &s[1]);
        let lhs = x.add(y).mul(&x.sub(y));
        let rhs = x.mul(x).sub(&y.mul(y));
        for (a, b) in lhs.c.iter().zip(&rhs.c) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn mixed_derivative_extraction() {
        // f = x^2 y at (1, 1): d^3 f / dx^2 dy = 2.
        let s = jet_seed(&[1.0, 1.0], 3).unwrap();
        let f = s[0].mul(&s[0]).mul(&s[1]);
        assert_eq!(f.derivative_value(&[2, 1]).unwrap(), 2.0);
        assert_eq!(f.derivative_value(&[0, 0]).unwrap(), 1.0);
    }

    #[test]
    fn cubic_third_derivative() {
        let x = &jet_seed(&[2.0], 3).unwrap()[0];
        let f = x.mul(x).mul(x);
        assert_eq!(f.derivative_value(&[3]).unwrap(), 6.0);
    }

    #[test]
    fn seed_rejects_out_of_range_order() {
        assert!(jet_seed(&[0.0], 0).is_err());
        assert!(jet_seed(&[0.0], 5).is_err());
    }

    #[test]
    fn sqrt_rejects_nonpositive_value() {
        let j = Jet::constant(2, 2, -1.0);
        assert!(j.sqrt().is_err());
    }

    #[test]
    fn recip_rejects_zero_value() {
        let j = Jet::constant(2, 2, 0.0);
        assert!(j.recip().is_err());
    }

    #[test]
    fn derivative_jet_shifts_coefficients() {
        let s = jet_seed(&[1.5, 2.5], 3).unwrap();
        let f = s[0].mul(&s[0]).mul(&s[1]); // x^2 y
        let fx = f.derivative(0); // 2xy
        assert!((fx.value() - 2.0 * 1.5 * 2.5).abs() < 1e-14);
        assert!((fx.d1(0) - 2.0 * 2.5).abs() < 1e-14);
        assert!((fx.d1(1) - 2.0 * 1.5).abs() < 1e-14);
    }
}
