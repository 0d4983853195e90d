//! Conformal transforms between the model spaces and their certificates.
//!
//! The Cayley transforms identify the sphere minus a pole with the group (via
//! its Siegel-domain presentation), the inversion is their composition, and
//! every map in sight multiplies the contact form by a positive factor and a
//! pointwise rotation of the Im H slots. A certificate fit recovers that
//! factor and rotation numerically from the jet pullback and reports the
//! residual, so conformality is a measured quantity rather than an assumption.

use crate::error::{QcError, Result};
use crate::jet::{jet_seed, Jet};
use crate::linalg::{solve, symmetric_eigen, Mat};
use crate::models::{
    gauge_norm, quat_at, sphere_eta_covectors, theta_covectors, HeisPoint, Normalization,
    SpherePoint,
};
use crate::quat::{ImQuaternion, QVector, Quaternion};
use crate::scalar::Scalar;

// ---------------------------------------------------------------------------
// Coordinate maps, generic over the scalar so they can be differentiated
// ---------------------------------------------------------------------------

/// Split group coordinates into the quaternion vector and vertical part.
fn split_group<S: Scalar>(n: usize, coords: &[S]) -> (QVector<S>, ImQuaternion<S>) {
    let q = QVector((0..n).map(|l| quat_at(coords, l)).collect());
    let w = ImQuaternion([
        coords[4 * n].clone(),
        coords[4 * n + 1].clone(),
        coords[4 * n + 2].clone(),
    ]);
    (q, w)
}

fn join_group<S: Scalar>(q: &QVector<S>, w: &ImQuaternion<S>) -> Vec<S> {
    let mut out = Vec::with_capacity(4 * q.len() + 3);
    for quat in &q.0 {
        out.extend_from_slice(&quat.components());
    }
    out.extend_from_slice(&w.0);
    out
}

/// The Siegel coordinate `p = |q|^2 - w` of a group point.
fn siegel_p<S: Scalar>(q: &QVector<S>, w: &ImQuaternion<S>) -> Quaternion<S> {
    Quaternion {
        re: q.norm_sq(),
        im: [w.0[0].neg(), w.0[1].neg(), w.0[2].neg()],
    }
}

/// Group law on scalar coordinates: left factor `a`, right factor `x`.
pub fn group_mul_s<S: Scalar>(n: usize, a: &[S], x: &[S]) -> Vec<S> {
    let (qa, wa) = split_group(n, a);
    let (qx, wx) = split_group(n, x);
    let qsum = qa.add(&qx);
    let cross = qa.dot_conj(&qx).im_part().scale(2.0);
    let wsum = wx.add(&wa).add(&cross);
    join_group(&qsum, &wsum)
}

/// One conformal generator or model identification.
#[derive(Clone, Debug, PartialEq)]
pub enum MapKind {
    /// Left translation by a fixed group element (ambient coordinates).
    Translate(Vec<f64>),
    /// Parabolic dilation `(q, w) -> (t q, t^2 w)`.
    Dilate(f64),
    /// Inversion with respect to the unit gauge sphere.
    Invert,
    /// Sphere minus south pole to the group.
    Cayley,
    /// Sphere minus north pole to the group.
    Cayley2,
    /// Group to the sphere minus the south pole.
    CayleyInv,
}

impl MapKind {
    /// Whether the map starts on the sphere (otherwise on the group).
    pub fn domain_is_sphere(&self) -> bool {
        matches!(self, MapKind::Cayley | MapKind::Cayley2)
    }

    pub fn range_is_sphere(&self) -> bool {
        matches!(self, MapKind::CayleyInv)
    }

    pub fn eval<S: Scalar>(&self, n: usize, coords: &[S]) -> Result<Vec<S>> {
        match self {
            MapKind::Translate(a) => {
                let template = coords[0].lift(0.0);
                let a_s: Vec<S> = a.iter().map(|v| template.lift(*v)).collect();
                Ok(group_mul_s(n, &a_s, coords))
            }
            MapKind::Dilate(t) => {
                let (q, w) = split_group(n, coords);
                Ok(join_group(&q.scale(*t), &w.scale(t * t)))
            }
            MapKind::Invert => {
                let (q, w) = split_group(n, coords);
                let p = siegel_p(&q, &w);
                let nsq4 = p.norm_sq(); // |q|^4 + |w|^2
                if nsq4.value() < 1e-32 {
                    return Err(QcError::Singularity(
                        "inversion at the gauge origin".into(),
                    ));
                }
                let pinv = p.inv()?;
                let qs = QVector(
                    q.0.iter()
                        .map(|ql| pinv.mul(ql).neg())
                        .collect(),
                );
                let inv_nsq4 = nsq4.recip()?;
                let ws = ImQuaternion([
                    w.0[0].mul(&inv_nsq4).neg(),
                    w.0[1].mul(&inv_nsq4).neg(),
                    w.0[2].mul(&inv_nsq4).neg(),
                ]);
                Ok(join_group(&qs, &ws))
            }
            MapKind::Cayley => cayley_generic(n, coords, false),
            MapKind::Cayley2 => cayley_generic(n, coords, true),
            MapKind::CayleyInv => {
                let (q, w) = split_group(n, coords);
                let p = siegel_p(&q, &w);
                let one = Quaternion::one_like(&coords[0]);
                let denom = one.add(&p);
                if denom.norm_sq().value() < 1e-16 {
                    return Err(QcError::Singularity(
                        "inverse Cayley transform at an excluded point".into(),
                    ));
                }
                let dinv = denom.inv()?;
                let qp: Vec<Quaternion<S>> =
                    q.0.iter().map(|ql| dinv.mul(ql).scale(2.0)).collect();
                let pp = dinv.mul(&one.sub(&p));
                let mut out = Vec::with_capacity(4 * n + 4);
                for quat in &qp {
                    out.extend_from_slice(&quat.components());
                }
                out.extend_from_slice(&pp.components());
                Ok(out)
            }
        }
    }
}

/// Shared body of the two Cayley transforms: `north = false` maps
/// `(q', p') |-> ((1 + p')^{-1} q', (1 + p')^{-1}(1 - p'))`, `north = true`
/// maps `(q', p') |-> (-(1 - p')^{-1} q', (1 - p')^{-1}(1 + p'))`; both return
/// direct-product coordinates `(q, w = -Im p)`.
fn cayley_generic<S: Scalar>(n: usize, coords: &[S], north: bool) -> Result<Vec<S>> {
    let qp = QVector((0..n).map(|l| quat_at(coords, l)).collect());
    let p = quat_at(coords, n);
    let one = Quaternion::one_like(&coords[0]);
    let (denom, numer) = if north {
        (one.sub(&p), one.add(&p))
    } else {
        (one.add(&p), one.sub(&p))
    };
    if denom.norm_sq().value().sqrt() < 1e-8 {
        return Err(QcError::Singularity(
            "Cayley transform at its excluded pole".into(),
        ));
    }
    let dinv = denom.inv()?;
    let sign = if north { -1.0 } else { 1.0 };
    let q = QVector(
        qp.0.iter()
            .map(|ql| dinv.mul(ql).scale(sign))
            .collect(),
    );
    let p_siegel = dinv.mul(&numer);
    let w = ImQuaternion([
        p_siegel.im[0].neg(),
        p_siegel.im[1].neg(),
        p_siegel.im[2].neg(),
    ]);
    Ok(join_group(&q, &w))
}

// Convenience point-level wrappers.

pub fn cayley(p: &SpherePoint) -> Result<HeisPoint> {
    let out = MapKind::Cayley.eval(p.n, &p.coords)?;
    Ok(HeisPoint::new(p.n, out))
}

pub fn cayley2(p: &SpherePoint) -> Result<HeisPoint> {
    let out = MapKind::Cayley2.eval(p.n, &p.coords)?;
    Ok(HeisPoint::new(p.n, out))
}

pub fn cayley_inv(p: &HeisPoint) -> Result<SpherePoint> {
    let out = MapKind::CayleyInv.eval(p.n, &p.coords)?;
    SpherePoint::new(p.n, out)
}

pub fn inversion(p: &HeisPoint) -> Result<HeisPoint> {
    if gauge_norm(p) < 1e-8 {
        return Err(QcError::Singularity("inversion at the gauge origin".into()));
    }
    let out = MapKind::Invert.eval(p.n, &p.coords)?;
    Ok(HeisPoint::new(p.n, out))
}

/// The Siegel coordinate of a group point, value level.
pub fn siegel_coordinate(p: &HeisPoint) -> Quaternion<f64> {
    let (q, w) = split_group(p.n, &p.coords);
    siegel_p(&q, &w)
}

// ---------------------------------------------------------------------------
// Pipelines
// ---------------------------------------------------------------------------

/// A composition of generators applied left to right.
#[derive(Clone, Debug, PartialEq)]
pub struct Pipeline {
    pub n: usize,
    pub maps: Vec<MapKind>,
}

impl Pipeline {
    pub fn new(n: usize, maps: Vec<MapKind>) -> Result<Pipeline> {
        // domain/range chaining must be consistent
        let mut on_sphere_opt: Option<bool> = None;
        for m in &maps {
            let dom = m.domain_is_sphere();
            if let Some(cur) = on_sphere_opt {
                if cur != dom {
                    return Err(QcError::Config(
                        "pipeline stages do not chain: domain mismatch".into(),
                    ));
                }
            }
            on_sphere_opt = Some(m.range_is_sphere());
        }
        Ok(Pipeline { n, maps })
    }

    pub fn domain_is_sphere(&self) -> bool {
        self.maps.first().map(|m| m.domain_is_sphere()).unwrap_or(false)
    }

    pub fn range_is_sphere(&self) -> bool {
        self.maps.last().map(|m| m.range_is_sphere()).unwrap_or(false)
    }

    pub fn eval<S: Scalar>(&self, coords: &[S]) -> Result<Vec<S>> {
        let mut cur = coords.to_vec();
        for m in &self.maps {
            cur = m.eval(self.n, &cur)?;
        }
        Ok(cur)
    }

    /// Parse `"translate(...)|invert|dilate(t)"` with left-to-right
    /// application order.
    pub fn parse(n: usize, text: &str) -> Result<Pipeline> {
        let mut maps = Vec::new();
        for raw in text.split('|') {
            let stage = raw.trim();
            let (name, args) = match stage.find('(') {
                Some(open) => {
                    if !stage.ends_with(')') {
                        return Err(QcError::Config(format!(
                            "malformed pipeline stage '{stage}'"
                        )));
                    }
                    (
                        &stage[..open],
                        stage[open + 1..stage.len() - 1]
                            .split(',')
                            .filter(|s| !s.trim().is_empty())
                            .map(|s| {
                                s.trim().parse::<f64>().map_err(|_| {
                                    QcError::Config(format!("bad number in stage '{stage}'"))
                                })
                            })
                            .collect::<Result<Vec<f64>>>()?,
                    )
                }
                None => (stage, Vec::new()),
            };
            let map = match name {
                "translate" => {
                    if args.len() != 4 * n + 3 {
                        return Err(QcError::Config(format!(
                            "translate needs {} coordinates, got {}",
                            4 * n + 3,
                            args.len()
                        )));
                    }
                    MapKind::Translate(args)
                }
                "dilate" => {
                    if args.len() != 1 || args[0] <= 0.0 {
                        return Err(QcError::Config(
                            "dilate needs one positive argument".into(),
                        ));
                    }
                    MapKind::Dilate(args[0])
                }
                "invert" => MapKind::Invert,
                "cayley" => MapKind::Cayley,
                "cayley2" => MapKind::Cayley2,
                "cayley_inv" => MapKind::CayleyInv,
                other => {
                    return Err(QcError::Config(format!("unknown pipeline stage '{other}'")))
                }
            };
            maps.push(map);
        }
        Pipeline::new(n, maps)
    }
}

// ---------------------------------------------------------------------------
// Conformality certificates
// ---------------------------------------------------------------------------

/// The measured conformal data of a map at a point: the positive factor and
/// the unit rotor acting on the Im H slots as `v -> rotor^bar v rotor`.
#[derive(Clone, Debug)]
pub struct ConformalCertificate {
    pub factor: f64,
    pub rotor: Quaternion<f64>,
    pub residual: f64,
}

/// Homogeneous rotation matrix of `v -> q v q^bar`.
fn rot_matrix_homogeneous(q: &[f64; 4]) -> [[f64; 3]; 3] {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    [
        [
            w * w + x * x - y * y - z * z,
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            w * w - x * x + y * y - z * z,
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            w * w - x * x - y * y + z * z,
        ],
    ]
}

/// Best (factor, rotor) fit of `pulled_s = factor * (rotor^bar source rotor)_s`
/// in the least-squares sense, by the quaternion eigenvalue method.
pub fn fit_certificate(pulled: &[Vec<f64>; 3], source: &[Vec<f64>; 3]) -> Result<ConformalCertificate> {
    let m = pulled[0].len();
    // correlation B_{st} = <pulled_s, source_t>
    let mut b = [[0.0f64; 3]; 3];
    for s in 0..3 {
        for t in 0..3 {
            let mut acc = 0.0;
            for i in 0..m {
                acc += pulled[s][i] * source[t][i];
            }
            b[s][t] = acc;
        }
    }
    // maximize tr(R(q) B) over unit quaternions by polarizing the quadratic
    // form and taking the top eigenvector.
    let f = |q: [f64; 4]| -> f64 {
        let r = rot_matrix_homogeneous(&q);
        let mut acc = 0.0;
        for s in 0..3 {
            for t in 0..3 {
                acc += r[s][t] * b[t][s];
            }
        }
        acc
    };
    let mut k = vec![vec![0.0; 4]; 4];
    for u in 0..4 {
        let mut eu = [0.0; 4];
        eu[u] = 1.0;
        k[u][u] = f(eu);
    }
    for u in 0..4 {
        for v in (u + 1)..4 {
            let mut e = [0.0; 4];
            e[u] = 1.0;
            e[v] = 1.0;
            let mut eu = [0.0; 4];
            eu[u] = 1.0;
            let mut ev = [0.0; 4];
            ev[v] = 1.0;
            let kuv = 0.5 * (f(e) - f(eu) - f(ev));
            k[u][v] = kuv;
            k[v][u] = kuv;
        }
    }
    let (vals, vecs) = symmetric_eigen(&k);
    let mut best = 0;
    for i in 1..4 {
        if vals[i] > vals[best] {
            best = i;
        }
    }
    let mut q = [vecs[0][best], vecs[1][best], vecs[2][best], vecs[3][best]];
    let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
    for c in q.iter_mut() {
        *c /= norm;
    }
    // canonical representative: non-negative real part
    if q[0] < 0.0 {
        for c in q.iter_mut() {
            *c = -*c;
        }
    }
    let r = rot_matrix_homogeneous(&q);
    // factor = tr(R B) / |source|^2
    let mut trace = 0.0;
    for s in 0..3 {
        for t in 0..3 {
            trace += r[s][t] * b[t][s];
        }
    }
    let mut source_sq = 0.0;
    let mut scale: f64 = 0.0;
    for s in 0..3 {
        for i in 0..m {
            source_sq += source[s][i] * source[s][i];
            scale = scale.max(pulled[s][i].abs());
        }
    }
    if source_sq <= 0.0 {
        return Err(QcError::FitError("source forms vanish at the point".into()));
    }
    let factor = trace / source_sq;
    // rotated source: (rotor^bar v rotor)_s = sum_t R(q)^T ... with lambda = q,
    // the action on components is R(q)^T applied to the (row) triple.
    let mut residual: f64 = 0.0;
    for s in 0..3 {
        for i in 0..m {
            let mut rot = 0.0;
            for t in 0..3 {
                rot += r[t][s] * source[t][i];
            }
            residual = residual.max((pulled[s][i] - factor * rot).abs());
        }
    }
    residual /= 1.0 + scale;
    if residual > 1e-4 {
        return Err(QcError::FitError(format!(
            "certificate residual {residual:.3e} exceeds 1e-4: the map is not conformal here"
        )));
    }
    let rotor = Quaternion::new(q[0], q[1], q[2], q[3]);
    Ok(ConformalCertificate {
        factor,
        rotor,
        residual,
    })
}

/// Pull the target contact forms of a pipeline back through its differential
/// at `x` and fit the conformality certificate against the source forms.
pub fn pullback_certificate(pipe: &Pipeline, x: &[f64]) -> Result<ConformalCertificate> {
    let n = pipe.n;
    let xs = jet_seed(x, 1)?;
    let fx = pipe.eval(&xs)?;
    let m_src = x.len();
    let fx_values: Vec<f64> = fx.iter().map(|c| c.value()).collect();
    let target: [Vec<f64>; 3] = if pipe.range_is_sphere() {
        sphere_eta_covectors(n, &fx_values, Normalization::Paper)?
    } else {
        theta_covectors(n, &fx_values)
    };
    let source: [Vec<f64>; 3] = if pipe.domain_is_sphere() {
        sphere_eta_covectors(n, x, Normalization::Paper)?
    } else {
        theta_covectors(n, x)
    };
    // (F^* phi)_s[i] = sum_k phi_s[k] dF^k/dx^i
    let mut pulled: [Vec<f64>; 3] = [vec![0.0; m_src], vec![0.0; m_src], vec![0.0; m_src]];
    for s in 0..3 {
        for i in 0..m_src {
            let mut acc = 0.0;
            for (k, fk) in fx.iter().enumerate() {
                acc += target[s][k] * fk.d1(i);
            }
            pulled[s][i] = acc;
        }
    }
    fit_certificate(&pulled, &source)
}

// ---------------------------------------------------------------------------
// The quartic conformal-factor family
// ---------------------------------------------------------------------------

/// Parameters of the quartic conformal factor
/// `mu(q, w) = c0 [ (sigma + |q + q0|^2)^2 + |w + w0 + 2 Im(q0 q^bar)|^2 ]`.
#[derive(Clone, Debug)]
pub struct LiouvilleParams {
    pub c0: f64,
    pub sigma: f64,
    pub q0: QVector<f64>,
    pub w0: ImQuaternion<f64>,
}

pub fn liouville_mu(params: &LiouvilleParams, p: &HeisPoint) -> f64 {
    let q = p.q();
    let w = p.omega();
    let qs = q.add(&params.q0);
    let first = params.sigma + qs.norm_sq();
    let cross = params.q0.dot_conj(&q).im_part().scale(2.0);
    let wsum = w.add(&params.w0).add(&cross);
    params.c0 * (first * first + wsum.norm_sq())
}

/// Gauss-Newton fit of `(c0, q0, w0)` at fixed `sigma`, minimizing relative
/// residuals of `mu` against measured values. Returns the fitted parameters
/// and the worst relative residual.
pub fn fit_liouville(
    points: &[HeisPoint],
    measured: &[f64],
    init: &LiouvilleParams,
) -> Result<(LiouvilleParams, f64)> {
    let n = points[0].n;
    let np = 1 + 4 * n + 3;
    let pack = |p: &LiouvilleParams| -> Vec<f64> {
        let mut v = vec![p.c0];
        for q in &p.q0.0 {
            v.extend_from_slice(&q.components());
        }
        v.extend_from_slice(&p.w0.0);
        v
    };
    let unpack = |v: &[f64]| -> LiouvilleParams {
        let q0 = QVector(
            (0..n)
                .map(|l| {
                    Quaternion::new(
                        v[1 + 4 * l],
                        v[2 + 4 * l],
                        v[3 + 4 * l],
                        v[4 + 4 * l],
                    )
                })
                .collect(),
        );
        let b = 1 + 4 * n;
        LiouvilleParams {
            c0: v[0],
            sigma: init.sigma,
            q0,
            w0: ImQuaternion([v[b], v[b + 1], v[b + 2]]),
        }
    };
    let residuals = |v: &[f64]| -> Vec<f64> {
        let params = unpack(v);
        points
            .iter()
            .zip(measured)
            .map(|(p, m)| liouville_mu(&params, p) / m - 1.0)
            .collect()
    };
    let mut theta = pack(init);
    for _ in 0..60 {
        let r = residuals(&theta);
        let rnorm: f64 = r.iter().map(|x| x * x).sum::<f64>();
        if rnorm < 1e-28 {
            break;
        }
        // numeric Jacobian
        let mut jt_j = Mat::zeros(&0.0, np, np);
        let mut jt_r = vec![0.0; np];
        let mut jac = vec![vec![0.0; np]; r.len()];
        for c in 0..np {
            let hstep = 1e-6 * (1.0 + theta[c].abs());
            let mut tp = theta.clone();
            tp[c] += hstep;
            let rp = residuals(&tp);
            for (row, (a, b)) in rp.iter().zip(&r).enumerate() {
                jac[row][c] = (a - b) / hstep;
            }
        }
        for a in 0..np {
            for bcol in 0..np {
                let mut acc = 0.0;
                for row in &jac {
                    acc += row[a] * row[bcol];
                }
                // light damping keeps the normal equations well posed
                if a == bcol {
                    acc += 1e-12;
                }
                jt_j.set(a, bcol, acc);
            }
            let mut acc = 0.0;
            for (row, rv) in jac.iter().zip(&r) {
                acc += row[a] * rv;
            }
            jt_r[a] = acc;
        }
        let (delta, _) = solve(&jt_j, &[jt_r])?;
        let mut max_step: f64 = 0.0;
        for (t, d) in theta.iter_mut().zip(&delta[0]) {
            *t -= d;
            max_step = max_step.max(d.abs());
        }
        if max_step < 1e-15 {
            break;
        }
    }
    let r = residuals(&theta);
    let worst = r.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    Ok((unpack(&theta), worst))
}

// ---------------------------------------------------------------------------
// The conformal curvature specialization
// ---------------------------------------------------------------------------

/// The conformal curvature combination for vanishing torsion and scalar
/// constant two, evaluated from a caller-provided curvature on horizontal
/// frame slots:
/// `W(X,Y,Z,V) = [R(X,Y,Z,V) + sum_s R(I_s X, I_s Y, Z, V)] / 4
///  + g(X,Z) g(Y,V) - g(Y,Z) g(X,V)
///  + sum_s [omega_s(X,Z) omega_s(Y,V) - omega_s(Y,Z) omega_s(X,V)]`.
pub fn wqc_combination(
    hd: usize,
    i_mats: &[Vec<Vec<f64>>],
    omega_vals: &[Vec<f64>],
    r: &dyn Fn(usize, usize, usize, usize) -> f64,
    a: usize,
    b: usize,
    c: usize,
    d: usize,
) -> f64 {
    let mut curv = r(a, b, c, d);
    for (s, i_s) in i_mats.iter().enumerate() {
        let _ = s;
        for aa in 0..hd {
            let ca = i_s[aa][a];
            if ca == 0.0 {
                continue;
            }
            for bb in 0..hd {
                let cb = i_s[bb][b];
                if cb != 0.0 {
                    curv += ca * cb * r(aa, bb, c, d);
                }
            }
        }
    }
    let g = |x: usize, y: usize| if x == y { 1.0 } else { 0.0 };
    let mut v = curv / 4.0 + g(a, c) * g(b, d) - g(b, c) * g(a, d);
    for om in omega_vals {
        v += om[a * hd + c] * om[b * hd + d] - om[b * hd + c] * om[a * hd + d];
    }
    v
}

/// `W^{qc}` from a geometry context on the unit-normalized sphere. Errors if
/// the scalar curvature is not the value the specialization assumes.
pub fn wqc(
    ctx: &crate::biquard::GeometryContext,
    a: usize,
    b: usize,
    c: usize,
    d: usize,
) -> Result<f64> {
    if (ctx.s_scalar() - 2.0).abs() > 1e-6 {
        return Err(QcError::UsageError(format!(
            "conformal-curvature specialization needs S = 2, got {}",
            ctx.s_scalar()
        )));
    }
    let hd = ctx.horiz_dim();
    let i_mats: Vec<Vec<Vec<f64>>> = (0..3).map(|s| ctx.frame.i_matrix(s)).collect();
    let omega_vals: Vec<Vec<f64>> = (0..3)
        .map(|s| {
            let mut o = vec![0.0; hd * hd];
            for x in 0..hd {
                for y in 0..hd {
                    o[x * hd + y] = ctx.frame.omega_f[s].at(x, y).value();
                }
            }
            o
        })
        .collect();
    Ok(wqc_combination(
        hd,
        &i_mats,
        &omega_vals,
        &|x, y, z, v| ctx.r_frame(x, y, z, v),
        a,
        b,
        c,
        d,
    ))
}
