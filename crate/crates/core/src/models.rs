//! The two built-in model spaces and their structure frames.
//!
//! * the quaternionic Heisenberg group `H^n x Im H` with its standard contact
//!   form `Theta = (dw - q dq^bar + dq q^bar) / 2` and flat left-invariant
//!   metric, in ambient coordinates `(q_1..q_n, w)` of dimension `4n + 3`;
//! * the unit sphere in `H^{n+1}` with the contact form induced from the
//!   ambient quaternionic structure, in ambient coordinates of dimension
//!   `4n + 4`. Every field on the sphere is extended zero-homogeneously so
//!   that jet differentiation along the sphere is exact.
//!
//! From the contact form alone, the Reeb fields are recovered pointwise by a
//! linear solve, the horizontal space as a kernel, the metric scale by a
//! one-time calibration, and the almost complex structures from the exterior
//! derivative of the contact form.

use crate::error::{QcError, Result};
use crate::jet::{jet_seed, Jet};
use crate::linalg::{gram_schmidt, nullspace, solve, Mat};
use crate::quat::{ImQuaternion, QVector, Quaternion};
use crate::scalar::{dot, Scalar};
use once_cell::sync::OnceCell;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Heisenberg,
    Sphere,
}

/// Contact-form scale on the sphere. `Sasakian` is the unit normalization in
/// which the structure constants of the eigenvalue checks hold; `Paper` is
/// twice that, the scale in which the Cayley-transform factor is stated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    Sasakian,
    Paper,
}

/// A point of the Heisenberg group: `q` in `H^n`, `w` in `Im H`.
#[derive(Clone, Debug)]
pub struct HeisPoint {
    pub n: usize,
    pub coords: Vec<f64>,
}

/// A point of the unit sphere in `H^{n+1}`: `(q', p')` with `|q'|^2 + |p'|^2 = 1`.
#[derive(Clone, Debug)]
pub struct SpherePoint {
    pub n: usize,
    pub coords: Vec<f64>,
}

impl HeisPoint {
    pub fn new(n: usize, coords: Vec<f64>) -> Self {
        assert_eq!(coords.len(), 4 * n + 3);
        HeisPoint { n, coords }
    }

    pub fn from_parts(q: &QVector<f64>, omega: &ImQuaternion<f64>) -> Self {
        let n = q.len();
        let mut coords = Vec::with_capacity(4 * n + 3);
        for quat in &q.0 {
            coords.extend_from_slice(&quat.components());
        }
        coords.extend_from_slice(&omega.0);
        HeisPoint { n, coords }
    }

    pub fn q(&self) -> QVector<f64> {
        QVector(
            (0..self.n)
                .map(|l| quat_at(&self.coords, l))
                .collect(),
        )
    }

    pub fn omega(&self) -> ImQuaternion<f64> {
        let b = 4 * self.n;
        ImQuaternion([self.coords[b], self.coords[b + 1], self.coords[b + 2]])
    }
}

impl SpherePoint {
    pub fn new(n: usize, coords: Vec<f64>) -> Result<Self> {
        if coords.len() != 4 * n + 4 {
            return Err(QcError::UsageError("sphere point has 4n+4 coordinates".into()));
        }
        let r2: f64 = coords.iter().map(|c| c * c).sum();
        if (r2 - 1.0).abs() > 1e-12 {
            return Err(QcError::DomainError(format!(
                "point lies off the unit sphere: |x|^2 = {r2}"
            )));
        }
        Ok(SpherePoint { n, coords })
    }

    /// The `H^n` part.
    pub fn qp(&self) -> (QVector<f64>, Quaternion<f64>) {
        let q = QVector((0..self.n).map(|l| quat_at(&self.coords, l)).collect());
        let p = quat_at(&self.coords, self.n);
        (q, p)
    }
}

/// Quaternion slot `l` of a coordinate vector.
pub fn quat_at<S: Scalar>(coords: &[S], l: usize) -> Quaternion<S> {
    Quaternion {
        re: coords[4 * l].clone(),
        im: [
            coords[4 * l + 1].clone(),
            coords[4 * l + 2].clone(),
            coords[4 * l + 3].clone(),
        ],
    }
}

/// Serialized point: flat ambient coordinates plus the model identifier.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PointRecord {
    pub model: ModelKind,
    pub n: usize,
    pub coords: Vec<f64>,
}

// ---------------------------------------------------------------------------
// Group operations on the Heisenberg model
// ---------------------------------------------------------------------------

/// Group law `(q_o, w_o) . (q, w) = (q_o + q, w + w_o + 2 Im(q_o q^bar))`.
pub fn group_mul(a: &HeisPoint, b: &HeisPoint) -> HeisPoint {
    assert_eq!(a.n, b.n, "group elements must share n");
    let (qo, wo) = (a.q(), a.omega());
    let (q, w) = (b.q(), b.omega());
    let qsum = qo.add(&q);
    let cross = qo.dot_conj(&q).im_part().scale(2.0);
    let wsum = w.add(&wo).add(&cross);
    HeisPoint::from_parts(&qsum, &wsum)
}

pub fn group_inv(a: &HeisPoint) -> HeisPoint {
    HeisPoint::from_parts(&a.q().neg(), &a.omega().neg())
}

/// Parabolic dilation `(q, w) -> (t q, t^2 w)`.
pub fn dilate(a: &HeisPoint, t: f64) -> HeisPoint {
    HeisPoint::from_parts(&a.q().scale(t), &a.omega().scale(t * t))
}

/// Homogeneous gauge `N(q, w) = (|q|^4 + |w|^2)^{1/4}`.
pub fn gauge_norm(a: &HeisPoint) -> f64 {
    let q2 = a.q().norm_sq();
    let w2 = a.omega().norm_sq();
    (q2 * q2 + w2).powf(0.25)
}

// ---------------------------------------------------------------------------
// Contact forms
// ---------------------------------------------------------------------------

/// Im(e_c * conj(x)) for the four unit quaternions e_c, as rows. `x = (a,b,c,d)`.
fn im_unit_conj<S: Scalar>(x: &Quaternion<S>) -> [[S; 3]; 4] {
    let (a, b, c, d) = (
        x.re.clone(),
        x.im[0].clone(),
        x.im[1].clone(),
        x.im[2].clone(),
    );
    [
        [b.neg(), c.neg(), d.neg()],
        [a.clone(), d.clone(), c.neg()],
        [d.neg(), a.clone(), b.clone()],
        [c.clone(), b.neg(), a],
    ]
}

/// The three contact covectors of the Heisenberg model at `coords`:
/// `Theta_s(v) = v_w^s / 2 + Im_s(v_q . q^bar)`.
pub fn theta_covectors<S: Scalar>(n: usize, coords: &[S]) -> [Vec<S>; 3] {
    let m = 4 * n + 3;
    assert_eq!(coords.len(), m);
    let zero = coords[0].lift(0.0);
    let mut out = [
        vec![zero.clone(); m],
        vec![zero.clone(); m],
        vec![zero; m],
    ];
    for l in 0..n {
        let q = quat_at(coords, l);
        let rows = im_unit_conj(&q);
        for (c, row) in rows.iter().enumerate() {
            for s in 0..3 {
                out[s][4 * l + c] = row[s].clone();
            }
        }
    }
    for s in 0..3 {
        out[s][4 * n + s] = coords[0].lift(0.5);
    }
    out
}

/// The contact covectors of the sphere model extended zero-homogeneously:
/// `eta_s(v) = k Im_s(sum_l v_l x_l^bar) / |x|^2`, with `k = 1` for the
/// Sasakian normalization and `k = 2` for the doubled one.
pub fn sphere_eta_covectors<S: Scalar>(
    n: usize,
    coords: &[S],
    normalization: Normalization,
) -> Result<[Vec<S>; 3]> {
    let m = 4 * n + 4;
    assert_eq!(coords.len(), m);
    let k = match normalization {
        Normalization::Sasakian => 1.0,
        Normalization::Paper => 2.0,
    };
    let r2 = dot(coords, coords);
    let inv_r2 = r2.recip()?;
    let zero = coords[0].lift(0.0);
    let mut out = [
        vec![zero.clone(); m],
        vec![zero.clone(); m],
        vec![zero; m],
    ];
    for l in 0..=n {
        let x = quat_at(coords, l);
        let rows = im_unit_conj(&x);
        for (c, row) in rows.iter().enumerate() {
            for s in 0..3 {
                out[s][4 * l + c] = row[s].mul(&inv_r2).scale(k);
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Model descriptor
// ---------------------------------------------------------------------------

/// An immutable model descriptor: which space, which size, which contact-form
/// scale, and the metric calibration factor fixed at construction.
#[derive(Debug)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub n: usize,
    pub normalization: Normalization,
    pub calibration: f64,
    /// Normalized scalar curvature of the canonical connection, computed once
    /// on demand by the connection layer.
    pub(crate) s_cache: OnceCell<f64>,
}

impl ModelSpec {
    pub fn heisenberg(n: usize) -> Result<ModelSpec> {
        Self::validate_n(n)?;
        let mut spec = ModelSpec {
            kind: ModelKind::Heisenberg,
            n,
            normalization: Normalization::Sasakian,
            calibration: 1.0,
            s_cache: OnceCell::new(),
        };
        spec.calibration = spec.compute_calibration()?;
        Ok(spec)
    }

    pub fn sphere(n: usize, normalization: Normalization) -> Result<ModelSpec> {
        Self::validate_n(n)?;
        let mut spec = ModelSpec {
            kind: ModelKind::Sphere,
            n,
            normalization,
            calibration: 1.0,
            s_cache: OnceCell::new(),
        };
        spec.calibration = spec.compute_calibration()?;
        Ok(spec)
    }

    fn validate_n(n: usize) -> Result<()> {
        if !(1..=3).contains(&n) {
            return Err(QcError::Config(format!("supported n is 1..=3, got {n}")));
        }
        Ok(())
    }

    pub fn ambient_dim(&self) -> usize {
        match self.kind {
            ModelKind::Heisenberg => 4 * self.n + 3,
            ModelKind::Sphere => 4 * self.n + 4,
        }
    }

    pub fn horiz_dim(&self) -> usize {
        4 * self.n
    }

    /// A generic base point for one-time calibrations.
    pub fn canonical_point(&self) -> Vec<f64> {
        match self.kind {
            ModelKind::Heisenberg => {
                let mut x = vec![0.0; self.ambient_dim()];
                for (i, c) in x.iter_mut().enumerate() {
                    *c = 0.05 * (i as f64 + 1.0);
                }
                x
            }
            ModelKind::Sphere => {
                let mut x: Vec<f64> = (0..self.ambient_dim())
                    .map(|i| 1.0 + 0.1 * i as f64)
                    .collect();
                let r = x.iter().map(|c| c * c).sum::<f64>().sqrt();
                for c in x.iter_mut() {
                    *c /= r;
                }
                x
            }
        }
    }

    /// Contact covectors at jet-valued coordinates, in this model's
    /// normalization.
    pub fn eta<S: Scalar>(&self, coords: &[S]) -> Result<[Vec<S>; 3]> {
        match self.kind {
            ModelKind::Heisenberg => Ok(theta_covectors(self.n, coords)),
            ModelKind::Sphere => sphere_eta_covectors(self.n, coords, self.normalization),
        }
    }

    /// Uncalibrated base metric on ambient vectors (valid on horizontal and
    /// tangential arguments).
    fn g0(&self, coords: &[Jet], u: &[Jet], v: &[Jet]) -> Result<Jet> {
        match self.kind {
            ModelKind::Heisenberg => {
                let nq = 4 * self.n;
                Ok(dot(&u[..nq], &v[..nq]))
            }
            ModelKind::Sphere => {
                let r2 = dot(coords, coords);
                dot(u, v).div(&r2)
            }
        }
    }

    /// The calibrated metric scale `g = calibration * g0`.
    fn g_h(&self, coords: &[Jet], u: &[Jet], v: &[Jet]) -> Result<Jet> {
        Ok(self.g0(coords, u, v)?.scale(self.calibration))
    }

    /// One-time homothety factor making the almost complex structures square
    /// to minus the identity in the calibrated metric.
    fn compute_calibration(&self) -> Result<f64> {
        let x0 = self.canonical_point();
        let xs = jet_seed(&x0, 1)?;
        let eta = self.eta(&xs)?;
        let deta = exterior_derivative_forms(&eta);
        let hbasis = self.horizontal_kernel_basis(&xs, &eta)?;
        let frame = gram_schmidt(
            &hbasis,
            |u, v| self.g0(&xs, u, v).expect("g0 on kernel basis"),
            1e-8,
        )?;
        let hd = self.horiz_dim();
        // B[b][a] = (1/2) d eta_1(e_a, e_b) in the uncalibrated orthonormal frame.
        let mut b = vec![vec![0.0; hd]; hd];
        for a in 0..hd {
            for bb in 0..hd {
                b[bb][a] = 0.5 * eval_two_form(&deta[0], &frame[a], &frame[bb]).value();
            }
        }
        // c^2 from B^2 = -c^2 Id.
        let mut trace = 0.0;
        for a in 0..hd {
            let mut diag = 0.0;
            for k in 0..hd {
                diag += b[a][k] * b[k][a];
            }
            trace += diag;
        }
        let c2 = -trace / hd as f64;
        if c2 <= 0.0 {
            return Err(QcError::ModelAssumption(
                "complex-structure calibration produced a non-positive square".into(),
            ));
        }
        let c = c2.sqrt();
        // Isotropy check: B^2 must be a multiple of the identity.
        for a in 0..hd {
            for bb in 0..hd {
                let mut v = 0.0;
                for k in 0..hd {
                    v += b[a][k] * b[k][bb];
                }
                let expect = if a == bb { -c2 } else { 0.0 };
                if (v - expect).abs() > 1e-8 * c2.max(1.0) {
                    return Err(QcError::ModelAssumption(format!(
                        "complex-structure square deviates from a homothety at ({a},{bb})"
                    )));
                }
            }
        }
        Ok(c)
    }

    /// Basis of `ker eta_1 ^ ker eta_2 ^ ker eta_3` (intersected with the
    /// sphere tangent space for the sphere model).
    fn horizontal_kernel_basis(&self, coords: &[Jet], eta: &[Vec<Jet>; 3]) -> Result<Vec<Vec<Jet>>> {
        let m = coords.len();
        let mut rows: Vec<Vec<Jet>> = Vec::new();
        if self.kind == ModelKind::Sphere {
            rows.push(coords.to_vec());
        }
        for e in eta {
            rows.push(e.clone());
        }
        let basis = nullspace(&Mat::from_rows(rows))?;
        if basis.len() != self.horiz_dim() {
            return Err(QcError::DegenerateStructure(format!(
                "horizontal kernel has dimension {}, expected {} (ambient {m})",
                basis.len(),
                self.horiz_dim()
            )));
        }
        Ok(basis)
    }

    /// Reeb fields at jet coordinates. For each k the square system
    /// `{tangency, eta_s(xi) = delta_sk, d eta_k(xi, h_j) = 0}` has a unique
    /// solution, which is the Reeb field; the remaining structure conditions
    /// are verified by the check suites.
    pub fn reeb_jets(
        &self,
        coords: &[Jet],
        eta: &[Vec<Jet>; 3],
        deta: &[Vec<Vec<Jet>>; 3],
        hbasis: &[Vec<Jet>],
    ) -> Result<([Vec<Jet>; 3], f64)> {
        let m = coords.len();
        let zero = coords[0].lift(0.0);
        let mut worst_cond: f64 = 1.0;
        let mut xi: [Vec<Jet>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for k in 0..3 {
            let mut rows: Vec<Vec<Jet>> = Vec::with_capacity(m);
            let mut rhs: Vec<Jet> = Vec::with_capacity(m);
            if self.kind == ModelKind::Sphere {
                rows.push(coords.to_vec());
                rhs.push(zero.lift(0.0));
            }
            for s in 0..3 {
                rows.push(eta[s].clone());
                rhs.push(zero.lift(if s == k { 1.0 } else { 0.0 }));
            }
            for h in hbasis {
                // coefficient of xi^i is sum_b d eta_k[i][b] h^b
                let mut row = vec![zero.lift(0.0); m];
                for (i, r) in row.iter_mut().enumerate() {
                    for (b, hb) in h.iter().enumerate() {
                        r.mul_acc(&deta[k][i][b], hb);
                    }
                }
                rows.push(row);
                rhs.push(zero.lift(0.0));
            }
            if rows.len() != m {
                return Err(QcError::DegenerateStructure(format!(
                    "reeb system has {} rows for ambient dimension {m}",
                    rows.len()
                )));
            }
            let (sol, cond) = solve(&Mat::from_rows(rows), &[rhs])?;
            if cond > 1e12 {
                return Err(QcError::DegenerateStructure(format!(
                    "reeb system condition proxy {cond:.3e} exceeds 1e12"
                )));
            }
            worst_cond = worst_cond.max(cond);
            xi[k] = sol.into_iter().next().unwrap();
        }
        Ok((xi, worst_cond))
    }

    /// Full frame construction at a plain point.
    pub fn frame_at(&self, x: &[f64], order: usize) -> Result<FrameData> {
        let xs = jet_seed(x, order)?;
        self.frame_at_jets(&xs)
    }

    /// Full frame construction at jet coordinates.
    pub fn frame_at_jets(&self, xs: &[Jet]) -> Result<FrameData> {
        let m = self.ambient_dim();
        assert_eq!(xs.len(), m);
        let eta = self.eta(xs)?;
        let deta = exterior_derivative_forms(&eta);
        let hbasis = self.horizontal_kernel_basis(xs, &eta)?;
        let (xi, reeb_cond) = self.reeb_jets(xs, &eta, &deta, &hbasis)?;
        let horiz = gram_schmidt(
            &hbasis,
            |u, v| self.g_h(xs, u, v).expect("metric on kernel basis"),
            1e-8,
        )?;
        let hd = self.horiz_dim();
        // omega_s(e_a, e_b) = (1/2) d eta_s(e_a, e_b); I_s e_a = sum_b omega_s(e_a, e_b) e_b.
        let zero = xs[0].lift(0.0);
        let mut omega_f: [Mat<Jet>; 3] = [
            Mat::zeros(&zero, hd, hd),
            Mat::zeros(&zero, hd, hd),
            Mat::zeros(&zero, hd, hd),
        ];
        for s in 0..3 {
            for a in 0..hd {
                for b in (a + 1)..hd {
                    let v = eval_two_form(&deta[s], &horiz[a], &horiz[b]).scale(0.5);
                    omega_f[s].set(b, a, v.neg());
                    omega_f[s].set(a, b, v);
                }
            }
        }
        Ok(FrameData {
            kind: self.kind,
            n: self.n,
            normalization: self.normalization,
            calibration: self.calibration,
            x: xs.to_vec(),
            eta,
            deta,
            xi,
            horiz,
            omega_f,
            reeb_cond,
        })
    }
}

/// `d sigma[i][j] = d_i sigma_j - d_j sigma_i` for each of the three covectors.
pub fn exterior_derivative_forms(eta: &[Vec<Jet>; 3]) -> [Vec<Vec<Jet>>; 3] {
    let m = eta[0].len();
    let build = |e: &Vec<Jet>| -> Vec<Vec<Jet>> {
        let mut d = vec![vec![e[0].lift(0.0); m]; m];
        for i in 0..m {
            for j in 0..m {
                if i == j {
                    continue;
                }
                d[i][j] = e[j].derivative(i).sub(&e[i].derivative(j));
            }
        }
        d
    };
    [build(&eta[0]), build(&eta[1]), build(&eta[2])]
}

/// Evaluate an ambient 2-form (given as its coefficient matrix) on two vectors.
pub fn eval_two_form(form: &[Vec<Jet>], u: &[Jet], v: &[Jet]) -> Jet {
    let mut acc = u[0].lift(0.0);
    for (i, ui) in u.iter().enumerate() {
        let mut row = u[0].lift(0.0);
        for (j, vj) in v.iter().enumerate() {
            row.mul_acc(&form[i][j], vj);
        }
        acc.mul_acc(ui, &row);
    }
    acc
}

/// Covector applied to a vector.
pub fn eval_covector<S: Scalar>(cov: &[S], v: &[S]) -> S {
    dot(cov, v)
}

// ---------------------------------------------------------------------------
// FrameData
// ---------------------------------------------------------------------------

/// Everything the structure determines pointwise: contact covectors, Reeb
/// fields, an orthonormal horizontal frame, the fundamental 2-forms on the
/// frame, and the metric data, all jet-valued so downstream layers can
/// differentiate through the frame.
pub struct FrameData {
    pub kind: ModelKind,
    pub n: usize,
    pub normalization: Normalization,
    pub calibration: f64,
    pub x: Vec<Jet>,
    pub eta: [Vec<Jet>; 3],
    pub deta: [Vec<Vec<Jet>>; 3],
    pub xi: [Vec<Jet>; 3],
    pub horiz: Vec<Vec<Jet>>,
    /// omega_s on the horizontal frame: entry (a, b) is omega_s(e_a, e_b).
    pub omega_f: [Mat<Jet>; 3],
    pub reeb_cond: f64,
}

impl FrameData {
    pub fn ambient_dim(&self) -> usize {
        self.x.len()
    }

    pub fn horiz_dim(&self) -> usize {
        self.horiz.len()
    }

    /// Frame matrix of the almost complex structure: `I_s e_a = sum_b [I_s]_{ba} e_b`
    /// with `[I_s]_{ba} = omega_s(e_a, e_b)`.
    pub fn i_matrix(&self, s: usize) -> Vec<Vec<f64>> {
        let hd = self.horiz_dim();
        let mut m = vec![vec![0.0; hd]; hd];
        for (a, row) in m.iter_mut().enumerate() {
            for (b, v) in row.iter_mut().enumerate() {
                // row index b of I_s in column a is omega(a, b); transpose here
                // so m[a][b] is the matrix entry [I_s]_{ab} = omega_s(e_b, e_a).
                *v = self.omega_f[s].at(b, a).value();
            }
        }
        m
    }

    /// `I_s` applied to a horizontal frame coefficient vector.
    pub fn apply_i(&self, s: usize, coeffs: &[f64]) -> Vec<f64> {
        let hd = self.horiz_dim();
        let mut out = vec![0.0; hd];
        for b in 0..hd {
            let mut acc = 0.0;
            for a in 0..hd {
                acc += self.omega_f[s].at(a, b).value() * coeffs[a];
            }
            out[b] = acc;
        }
        out
    }

    /// Tangential projection (identity on the group; radial removal on the sphere).
    pub fn project_tangent(&self, v: &[Jet]) -> Result<Vec<Jet>> {
        match self.kind {
            ModelKind::Heisenberg => Ok(v.to_vec()),
            ModelKind::Sphere => {
                let r2 = dot(&self.x, &self.x);
                let coeff = dot(v, &self.x).div(&r2)?;
                let mut out = v.to_vec();
                for (o, xc) in out.iter_mut().zip(&self.x) {
                    o.mul_sub_acc(&coeff, xc);
                }
                Ok(out)
            }
        }
    }

    /// Projection onto the horizontal space along vertical (and radial) parts.
    pub fn project_horizontal(&self, v: &[Jet]) -> Result<Vec<Jet>> {
        let mut out = self.project_tangent(v)?;
        for s in 0..3 {
            let coeff = eval_covector(&self.eta[s], v);
            for (o, xic) in out.iter_mut().zip(&self.xi[s]) {
                o.mul_sub_acc(&coeff, xic);
            }
        }
        Ok(out)
    }

    /// The base horizontal metric `g` on ambient vectors already lying in `H`.
    pub fn g_metric(&self, u: &[Jet], v: &[Jet]) -> Result<Jet> {
        match self.kind {
            ModelKind::Heisenberg => {
                let nq = 4 * self.n;
                Ok(dot(&u[..nq], &v[..nq]).scale(self.calibration))
            }
            ModelKind::Sphere => {
                let r2 = dot(&self.x, &self.x);
                Ok(dot(u, v).div(&r2)?.scale(self.calibration))
            }
        }
    }

    /// The full model metric `h = g(P_H ., P_H .) + sum eta_s eta_s` extended
    /// by the radial square on the sphere so it is ambient positive definite.
    pub fn h_metric(&self, u: &[Jet], v: &[Jet]) -> Result<Jet> {
        let pu = self.project_horizontal(u)?;
        let pv = self.project_horizontal(v)?;
        let mut acc = self.g_metric(&pu, &pv)?;
        for s in 0..3 {
            let a = eval_covector(&self.eta[s], u);
            let b = eval_covector(&self.eta[s], v);
            acc.mul_acc(&a, &b);
        }
        if self.kind == ModelKind::Sphere {
            let r2 = dot(&self.x, &self.x);
            let a = dot(u, &self.x).div(&r2)?;
            let b = dot(v, &self.x);
            let rad = a.mul(&b).div(&r2)?;
            // dr(u) dr(v) = (u.x)(v.x)/|x|^2 at |x|=1; the extra 1/|x|^2 keeps
            // the extension zero-homogeneous.
            acc.add_assign(&rad.mul(&r2).div(&r2)?);
        }
        Ok(acc)
    }

    /// Ambient matrix of `h`.
    pub fn h_matrix(&self) -> Result<Mat<Jet>> {
        let m = self.ambient_dim();
        let zero = self.x[0].lift(0.0);
        // Assemble from the covector pieces instead of m^2 full calls:
        // h = g(P., P.) + eta eta + dr dr.
        let mut basis = Vec::with_capacity(m);
        for i in 0..m {
            let mut e = vec![zero.lift(0.0); m];
            e[i] = zero.lift(1.0);
            basis.push(e);
        }
        let proj: Vec<Vec<Jet>> = basis
            .iter()
            .map(|e| self.project_horizontal(e))
            .collect::<Result<_>>()?;
        let mut h = Mat::zeros(&zero, m, m);
        for i in 0..m {
            for j in i..m {
                let mut acc = self.g_metric(&proj[i], &proj[j])?;
                for s in 0..3 {
                    acc.mul_acc(&self.eta[s][i], &self.eta[s][j]);
                }
                if self.kind == ModelKind::Sphere {
                    let r2 = dot(&self.x, &self.x);
                    let t = self.x[i].mul(&self.x[j]).div(&r2)?;
                    acc.add_assign(&t);
                }
                h.set(i, j, acc.clone());
                if i != j {
                    h.set(j, i, acc);
                }
            }
        }
        Ok(h)
    }

    /// Values of the full frame: horizontal vectors then the three Reeb fields.
    pub fn full_frame(&self) -> Vec<&Vec<Jet>> {
        let mut out: Vec<&Vec<Jet>> = self.horiz.iter().collect();
        out.extend(self.xi.iter());
        out
    }
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

/// Uniform point on the unit sphere from a normalized standard Gaussian.
pub fn sample_sphere<R: Rng>(rng: &mut R, n: usize) -> SpherePoint {
    let m = 4 * n + 4;
    loop {
        let mut v: Vec<f64> = (0..m).map(|_| gaussian(rng)).collect();
        let r2: f64 = v.iter().map(|c| c * c).sum();
        if r2 < 1e-6 {
            continue;
        }
        let r = r2.sqrt();
        for c in v.iter_mut() {
            *c /= r;
        }
        return SpherePoint { n, coords: v };
    }
}

/// Uniform point of the group in `[-1, 1]^{4n+3}`, optionally rejecting a
/// gauge ball around the origin (needed when the suite applies the inversion).
pub fn sample_heis<R: Rng>(rng: &mut R, n: usize, min_gauge: Option<f64>) -> HeisPoint {
    loop {
        let coords: Vec<f64> = (0..4 * n + 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p = HeisPoint { n, coords };
        if let Some(g) = min_gauge {
            if gauge_norm(&p) < g {
                continue;
            }
        }
        return p;
    }
}

/// Marsaglia polar Gaussian; keeps the sampling independent of distribution
/// crates so seeded streams stay stable.
fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.gen_range(-1.0..1.0);
        let v: f64 = rng.gen_range(-1.0..1.0);
        let s = u * u + v * v;
        if s > 0.0 && s < 1.0 {
            return u * (-2.0 * s.ln() / s).sqrt();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn heis_point(n: usize, q: &[[f64; 4]], w: [f64; 3]) -> HeisPoint {
        let qv = QVector(
            q.iter()
                .map(|c| Quaternion::new(c[0], c[1], c[2], c[3]))
                .collect(),
        );
        HeisPoint::from_parts(&qv, &ImQuaternion(w))
    }

    #[test]
    fn group_vertical_layer_is_abelian() {
        let a = heis_point(1, &[[0.0; 4]], [1.0, 0.0, 0.0]);
        let b = heis_point(1, &[[0.0; 4]], [0.0, 1.0, 0.0]);
        let c = group_mul(&a, &b);
        assert_eq!(c.omega().0, [1.0, 1.0, 0.0]);
        assert!(c.q().norm_sq() == 0.0);
    }

    #[test]
    fn group_inverse_cancels() {
        let a = heis_point(2, &[[0.3, -0.2, 0.9, 0.1], [0.0, 1.0, 0.0, -0.4]], [0.5, -0.7, 0.2]);
        let e = group_mul(&a, &group_inv(&a));
        for c in &e.coords {
            assert!(c.abs() < 1e-15);
        }
    }

    #[test]
    fn group_cross_term() {
        // (1, 0) . (i, 0) = (1 + i, -2i): 2 Im(1 . conj(i)) = -2i.
        let a = heis_point(1, &[[1.0, 0.0, 0.0, 0.0]], [0.0; 3]);
        let b = heis_point(1, &[[0.0, 1.0, 0.0, 0.0]], [0.0; 3]);
        let c = group_mul(&a, &b);
        assert_eq!(c.q().0[0].components(), [1.0, 1.0, 0.0, 0.0]);
        assert_eq!(c.omega().0, [-2.0, 0.0, 0.0]);
    }

    #[test]
    fn gauge_norm_examples() {
        let unit_q = heis_point(1, &[[1.0, 0.0, 0.0, 0.0]], [0.0; 3]);
        assert!((gauge_norm(&unit_q) - 1.0).abs() < 1e-15);
        let vert = heis_point(1, &[[0.0; 4]], [0.0, 3.0, 4.0]);
        assert!((gauge_norm(&vert) - 5.0_f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn gauge_norm_is_one_homogeneous() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let p = sample_heis(&mut rng, 2, None);
            let lhs = gauge_norm(&dilate(&p, 2.0));
            let rhs = 2.0 * gauge_norm(&p);
            assert!((lhs - rhs).abs() < 1e-12 * (1.0 + rhs.abs()));
        }
    }

    #[test]
    fn dilations_are_group_automorphisms() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let a = sample_heis(&mut rng, 2, None);
            let b = sample_heis(&mut rng, 2, None);
            let t = 1.7;
            let lhs = dilate(&group_mul(&a, &b), t);
            let rhs = group_mul(&dilate(&a, t), &dilate(&b, t));
            for (x, y) in lhs.coords.iter().zip(&rhs.coords) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn theta_at_origin_is_half_dw() {
        let p = heis_point(1, &[[0.0; 4]], [0.0; 3]);
        let th = theta_covectors(1, &p.coords);
        for s in 0..3 {
            for (i, c) in th[s].iter().enumerate() {
                let expect = if i == 4 + s { 0.5 } else { 0.0 };
                assert_eq!(*c, expect);
            }
        }
    }

    #[test]
    fn theta_vertical_coefficient_everywhere() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let p = sample_heis(&mut rng, 2, None);
            let th = theta_covectors(2, &p.coords);
            for s in 0..3 {
                assert_eq!(th[s][8 + s], 0.5);
            }
        }
    }

    #[test]
    fn sphere_eta_kills_radial_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..10 {
            let p = sample_sphere(&mut rng, 2, );
            let eta = sphere_eta_covectors(2, &p.coords, Normalization::Paper).unwrap();
            for s in 0..3 {
                let r: f64 = eta[s]
                    .iter()
                    .zip(&p.coords)
                    .map(|(c, x)| c * x)
                    .sum();
                assert!(r.abs() < 1e-13);
            }
        }
    }

    #[test]
    fn sphere_eta_at_unit_p() {
        // At (q', p') = (0, 1) the doubled form is 2 Im(dp'):
        // coefficient 2 on the imaginary p-components.
        let mut coords = vec![0.0; 12];
        coords[8] = 1.0;
        let eta = sphere_eta_covectors(2, &coords, Normalization::Paper).unwrap();
        for s in 0..3 {
            for (i, c) in eta[s].iter().enumerate() {
                let expect = if i == 9 + s { 2.0 } else { 0.0 };
                assert!((c - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn sasakian_is_half_paper() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = sample_sphere(&mut rng, 1);
        let paper = sphere_eta_covectors(1, &p.coords, Normalization::Paper).unwrap();
        let sas = sphere_eta_covectors(1, &p.coords, Normalization::Sasakian).unwrap();
        for s in 0..3 {
            for (a, b) in paper[s].iter().zip(&sas[s]) {
                assert!((a - 2.0 * b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn calibration_is_unity_for_both_models() {
        let heis = ModelSpec::heisenberg(2).unwrap();
        assert!((heis.calibration - 1.0).abs() < 1e-10, "{}", heis.calibration);
        let sph = ModelSpec::sphere(2, Normalization::Sasakian).unwrap();
        assert!((sph.calibration - 1.0).abs() < 1e-10, "{}", sph.calibration);
        let sph2 = ModelSpec::sphere(2, Normalization::Paper).unwrap();
        assert!((sph2.calibration - 2.0).abs() < 1e-10, "{}", sph2.calibration);
    }

    #[test]
    fn heisenberg_reeb_fields_are_vertical() {
        let spec = ModelSpec::heisenberg(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..5 {
            let p = sample_heis(&mut rng, 2, None);
            let frame = spec.frame_at(&p.coords, 1).unwrap();
            for s in 0..3 {
                for (i, c) in frame.xi[s].iter().enumerate() {
                    let expect = if i == 8 + s { 2.0 } else { 0.0 };
                    assert!(
                        (c.value() - expect).abs() < 1e-10,
                        "xi[{s}][{i}] = {}",
                        c.value()
                    );
                }
            }
        }
    }

    #[test]
    fn sphere_reeb_fields_match_quaternion_action() {
        let spec = ModelSpec::sphere(2, Normalization::Sasakian).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let units = [
            Quaternion::new(0.0, 1.0, 0.0, 0.0),
            Quaternion::new(0.0, 0.0, 1.0, 0.0),
            Quaternion::new(0.0, 0.0, 0.0, 1.0),
        ];
        for _ in 0..3 {
            let p = sample_sphere(&mut rng, 2);
            let frame = spec.frame_at(&p.coords, 1).unwrap();
            for s in 0..3 {
                for l in 0..3 {
                    let xl = quat_at(&p.coords, l);
                    let expect = units[s].mul(&xl).components();
                    for c in 0..4 {
                        let got = frame.xi[s][4 * l + c].value();
                        assert!(
                            (got - expect[c]).abs() < 1e-9,
                            "xi_{s} slot {l} comp {c}: {got} vs {}",
                            expect[c]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn frame_is_orthonormal_and_complex_structures_multiply() {
        for spec in [
            ModelSpec::heisenberg(2).unwrap(),
            ModelSpec::sphere(2, Normalization::Sasakian).unwrap(),
        ] {
            let x = spec.canonical_point();
            let frame = spec.frame_at(&x, 1).unwrap();
            let hd = frame.horiz_dim();
            for a in 0..hd {
                for b in 0..hd {
                    let g = frame
                        .g_metric(&frame.horiz[a], &frame.horiz[b])
                        .unwrap()
                        .value();
                    let expect = if a == b { 1.0 } else { 0.0 };
                    assert!((g - expect).abs() < 1e-10);
                }
            }
            let i1 = frame.i_matrix(0);
            let i2 = frame.i_matrix(1);
            let i3 = frame.i_matrix(2);
            for a in 0..hd {
                for b in 0..hd {
                    let mut prod = 0.0;
                    let mut sq = 0.0;
                    for k in 0..hd {
                        prod += i1[a][k] * i2[k][b];
                        sq += i1[a][k] * i1[k][b];
                    }
                    let expect_sq = if a == b { -1.0 } else { 0.0 };
                    assert!((prod - i3[a][b]).abs() < 1e-9, "I1 I2 != I3 at ({a},{b})");
                    assert!((sq - expect_sq).abs() < 1e-9, "I1^2 != -id at ({a},{b})");
                }
            }
        }
    }
}
