//! The canonical connection of the model structures and its curvature.
//!
//! Both built-in models are torsion-normalized Einstein structures, so the
//! full torsion of the canonical connection is known in closed form up to the
//! normalized scalar curvature S:
//!
//! * horizontal arguments: `T(X, Y) = 2 sum_s omega_s(X, Y) xi_s`,
//! * mixed arguments: `T(xi, X) = 0`,
//! * vertical arguments: `T(xi_i, xi_j) = -S xi_k`.
//!
//! The connection is assembled from the Levi-Civita connection of the full
//! metric by the standard prescribed-torsion correction. S itself is needed
//! for the vertical-vertical part, which no horizontal curvature component
//! touches, so the construction runs in two passes: pass one omits the
//! vertical torsion and already determines the horizontal curvature trace
//! that defines S; pass two completes the connection and re-derives S from
//! the assembled torsion as a consistency check.

use crate::error::{QcError, Result};
use crate::jet::Jet;
use crate::linalg::{invert, Mat};
use crate::models::{FrameData, ModelSpec};
use crate::tensor::lie_bracket;
use once_cell::sync::OnceCell;
use std::sync::Arc;

/// Flat `[k][i][j]` index for an ambient rank-3 coefficient block.
#[inline]
fn idx3(m: usize, k: usize, i: usize, j: usize) -> usize {
    (k * m + i) * m + j
}

/// Flat `[i][j][k][l]` index for the (0,4) curvature block.
#[inline]
fn idx4(m: usize, i: usize, j: usize, k: usize, l: usize) -> usize {
    ((i * m + j) * m + k) * m + l
}

/// Connection and curvature data at one point of one model.
pub struct GeometryContext {
    pub spec: Arc<ModelSpec>,
    pub frame: FrameData,
    pub order: usize,
    m: usize,
    /// Ambient metric and inverse, jet-valued.
    pub h: Mat<Jet>,
    pub hinv: Mat<Jet>,
    /// Connection coefficients `Gamma^k_{ij}` of the canonical connection.
    pub gamma: Vec<Jet>,
    /// Levi-Civita coefficients of the full metric.
    pub gamma_lc: Vec<Jet>,
    /// Normalized scalar curvature from the pass-one horizontal trace.
    pub s_pass1: f64,
    /// The same constant re-derived from the assembled vertical torsion.
    pub s_pass2: f64,
    /// Frame field values (rows: e_1..e_{4n}, xi_1..xi_3).
    frame_values: Vec<Vec<f64>>,
    h_values: Vec<f64>,
    curv_frame: OnceCell<Vec<f64>>,
    curv_frame_lc: OnceCell<Vec<f64>>,
    nabla_frame_jets: OnceCell<Vec<Vec<Vec<Jet>>>>,
    gamma_frame_jets: OnceCell<Vec<Jet>>,
    torsion_endo_jets: OnceCell<Vec<Vec<Jet>>>,
    torsion_frame: OnceCell<Vec<f64>>,
}

impl GeometryContext {
    /// Two-pass construction at a point. Requires jet order >= 2 so the
    /// pass-one scalar curvature exists.
    pub fn build(spec: &Arc<ModelSpec>, x: &[f64], order: usize) -> Result<GeometryContext> {
        if order < 3 {
            return Err(QcError::UsageError(
                "two-pass connection construction requires jet order >= 3".into(),
            ));
        }
        Self::build_inner(spec, x, order, None)
    }

    /// Construction with a trusted scalar-curvature value, for operator
    /// pipelines that need only first derivatives of the connection. The
    /// value must come from [`scalar_curvature`], which is itself produced by
    /// the two-pass route.
    pub fn build_with_s(
        spec: &Arc<ModelSpec>,
        x: &[f64],
        order: usize,
        s: f64,
    ) -> Result<GeometryContext> {
        Self::build_inner(spec, x, order, Some(s))
    }

    fn build_inner(
        spec: &Arc<ModelSpec>,
        x: &[f64],
        order: usize,
        trusted_s: Option<f64>,
    ) -> Result<GeometryContext> {
        let frame = spec.frame_at(x, order)?;
        let m = frame.ambient_dim();
        let h = frame.h_matrix()?;
        let hinv = invert(&h)?;
        let lc_low = christoffel_lower(&h);
        let gamma_lc = raise_lower_block(&hinv, &lc_low);

        let omega_amb = ambient_omegas(&frame)?;
        let mut t_low = horizontal_torsion_lower(&frame, &omega_amb);
        let k_low = contorsion_lower(&t_low, m);
        let mut total_low = lc_low;
        for (t, k) in total_low.iter_mut().zip(&k_low) {
            t.add_assign(k);
        }
        let gamma1 = raise_lower_block(&hinv, &total_low);

        // Pass 1: horizontal curvature trace gives S (skipped when a trusted
        // value from the two-pass route is supplied).
        let s_pass1 = match trusted_s {
            Some(s) => s,
            None => {
                let r4 = curvature04_values(&gamma1, &h, m);
                let fv = frame_values(&frame);
                let rf = frame_curvature(&r4, &fv, m);
                let hd = frame.horiz_dim();
                let ff = hd + 3;
                let mut trace = 0.0;
                for a in 0..hd {
                    for b in 0..hd {
                        trace += rf[idx4(ff, b, a, a, b)];
                    }
                }
                let n = frame.n as f64;
                trace / (8.0 * n * (n + 2.0))
            }
        };
        // The vertical-vertical torsion ansatz presumes the vertical brackets
        // have no horizontal part.
        let vertical_h_norm = {
            let mut worst: f64 = 0.0;
            for i in 0..3 {
                for j in i + 1..3 {
                    let br = lie_bracket(&frame.xi[i], &frame.xi[j]);
                    let brh = frame.project_horizontal(&br)?;
                    let nsq = frame.g_metric(&brh, &brh)?.value().max(0.0);
                    worst = worst.max(nsq.sqrt());
                }
            }
            worst
        };
        if vertical_h_norm > 1e-8 {
            return Err(QcError::ModelAssumption(format!(
                "vertical brackets have horizontal part {vertical_h_norm:.3e}"
            )));
        }
        let s_used = s_pass1;

        // Pass 2: add the vertical-vertical torsion and correct the connection.
        let zero = frame.x[0].lift(0.0);
        let mut dt_low = vec![zero.lift(0.0); m * m * m];
        vertical_torsion_lower(&frame, s_used, &mut dt_low);
        let dk_low = contorsion_lower(&dt_low, m);
        let dgamma = raise_lower_block(&hinv, &dk_low);
        let mut gamma = gamma1;
        for (g, d) in gamma.iter_mut().zip(&dgamma) {
            g.add_assign(d);
        }
        for (t, d) in t_low.iter_mut().zip(&dt_low) {
            t.add_assign(d);
        }

        let fv = frame_values(&frame);
        let mut h_values = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                h_values[i * m + j] = h.at(i, j).value();
            }
        }

        let mut ctx = GeometryContext {
            spec: spec.clone(),
            frame,
            order,
            m,
            h,
            hinv,
            gamma,
            gamma_lc,
            s_pass1,
            s_pass2: f64::NAN,
            frame_values: fv,
            h_values,
            curv_frame: OnceCell::new(),
            curv_frame_lc: OnceCell::new(),
            nabla_frame_jets: OnceCell::new(),
            gamma_frame_jets: OnceCell::new(),
            torsion_endo_jets: OnceCell::new(),
            torsion_frame: OnceCell::new(),
        };

        // Re-derive S from the assembled torsion: S = -h(T(xi_1, xi_2), xi_3).
        let hd = ctx.frame.horiz_dim();
        let t12 = ctx.measured_torsion_vec(hd, hd + 1);
        let xi3 = &ctx.frame_values[hd + 2];
        let mut s2 = 0.0;
        for i in 0..m {
            for j in 0..m {
                s2 -= ctx.h_values[i * m + j] * t12[i] * xi3[j];
            }
        }
        ctx.s_pass2 = s2;
        if trusted_s.is_none() && order >= 2 && (ctx.s_pass1 - ctx.s_pass2).abs() > 1e-7 {
            return Err(QcError::ModelAssumption(format!(
                "scalar curvature passes disagree: {} vs {}",
                ctx.s_pass1, ctx.s_pass2
            )));
        }
        Ok(ctx)
    }

    pub fn ambient_dim(&self) -> usize {
        self.m
    }

    pub fn horiz_dim(&self) -> usize {
        self.frame.horiz_dim()
    }

    pub fn full_dim(&self) -> usize {
        self.frame.horiz_dim() + 3
    }

    /// The normalized scalar curvature used downstream.
    pub fn s_scalar(&self) -> f64 {
        self.s_pass1
    }

    /// Value components of frame field `A` (horizontal first, then Reeb).
    pub fn frame_value(&self, a: usize) -> &[f64] {
        &self.frame_values[a]
    }

    pub fn h_value(&self, i: usize, j: usize) -> f64 {
        self.h_values[i * self.m + j]
    }

    /// `h(u, v)` for value-level ambient vectors.
    pub fn h_dot(&self, u: &[f64], v: &[f64]) -> f64 {
        let m = self.m;
        let mut acc = 0.0;
        for i in 0..m {
            if u[i] == 0.0 {
                continue;
            }
            let mut row = 0.0;
            for j in 0..m {
                row += self.h_values[i * m + j] * v[j];
            }
            acc += u[i] * row;
        }
        acc
    }

    /// Covariant derivative of a jet-valued field along a jet-valued vector,
    /// with the canonical connection. One jet order is consumed.
    pub fn nabla(&self, u: &[Jet], v: &[Jet]) -> Vec<Jet> {
        self.nabla_with(&self.gamma, u, v)
    }

    /// Same with the Levi-Civita connection.
    pub fn nabla_lc(&self, u: &[Jet], v: &[Jet]) -> Vec<Jet> {
        self.nabla_with(&self.gamma_lc, u, v)
    }

    fn nabla_with(&self, gamma: &[Jet], u: &[Jet], v: &[Jet]) -> Vec<Jet> {
        let m = self.m;
        let mut out = Vec::with_capacity(m);
        for k in 0..m {
            let mut acc = u[0].lift(0.0);
            for i in 0..m {
                let mut inner = v[k].derivative(i);
                for j in 0..m {
                    inner.mul_acc(&gamma[idx3(m, k, i, j)], &v[j]);
                }
                acc.mul_acc(&u[i], &inner);
            }
            out.push(acc);
        }
        out
    }

    /// Value components of the covariant derivative of frame field `B` along
    /// frame field `A`.
    pub fn nabla_frame_value(&self, gamma_lc: bool, a: usize, b: usize) -> Vec<f64> {
        let m = self.m;
        let gamma = if gamma_lc { &self.gamma_lc } else { &self.gamma };
        let u = &self.frame_values[a];
        let vjet = self.frame_field(b);
        let mut out = vec![0.0; m];
        for k in 0..m {
            let mut acc = 0.0;
            for i in 0..m {
                if u[i] == 0.0 {
                    continue;
                }
                let mut inner = vjet[k].d1(i);
                for j in 0..m {
                    inner += self.gamma_value(gamma, k, i, j) * vjet[j].value();
                }
                acc += u[i] * inner;
            }
            out[k] = acc;
        }
        out
    }

    #[inline]
    fn gamma_value(&self, gamma: &[Jet], k: usize, i: usize, j: usize) -> f64 {
        gamma[idx3(self.m, k, i, j)].value()
    }

    /// Frame field `A` as jet components.
    pub fn frame_field(&self, a: usize) -> &Vec<Jet> {
        let hd = self.frame.horiz_dim();
        if a < hd {
            &self.frame.horiz[a]
        } else {
            &self.frame.xi[a - hd]
        }
    }

    /// Jet components of `nabla_{E_A} E_B` for all frame pairs, cached.
    pub fn nabla_frame_jets(&self) -> &Vec<Vec<Vec<Jet>>> {
        self.nabla_frame_jets.get_or_init(|| {
            let ff = self.full_dim();
            let mut out = Vec::with_capacity(ff);
            for a in 0..ff {
                let ua = self.frame_field(a).clone();
                let mut row = Vec::with_capacity(ff);
                for b in 0..ff {
                    row.push(self.nabla(&ua, self.frame_field(b)));
                }
                out.push(row);
            }
            out
        })
    }

    /// Frame connection coefficients `h(nabla_{E_A} E_B, E_D)` as jet
    /// functions, flat `[(a * ff + b) * ff + d]`, cached.
    pub fn gamma_frame_jets(&self) -> &Vec<Jet> {
        self.gamma_frame_jets.get_or_init(|| {
            let ff = self.full_dim();
            let m = self.m;
            let nfj = self.nabla_frame_jets();
            // lowered frame covectors h(., E_D)
            let zero = self.frame.x[0].lift(0.0);
            let mut lowered = vec![vec![zero.lift(0.0); m]; ff];
            for (d, low) in lowered.iter_mut().enumerate() {
                let ed = self.frame_field(d);
                for (i, li) in low.iter_mut().enumerate() {
                    for j in 0..m {
                        li.mul_acc(self.h.at(i, j), &ed[j]);
                    }
                }
            }
            let mut out = vec![zero.lift(0.0); ff * ff * ff];
            for a in 0..ff {
                for b in 0..ff {
                    for d in 0..ff {
                        let mut acc = zero.lift(0.0);
                        for i in 0..m {
                            acc.mul_acc(&nfj[a][b][i], &lowered[d][i]);
                        }
                        out[(a * ff + b) * ff + d] = acc;
                    }
                }
            }
            out
        })
    }

    /// Torsion endomorphism matrices `h(T(xi_s, e_a), e_b)` as jet functions,
    /// one flat `hd x hd` block per s, cached.
    pub fn torsion_endo_jets(&self) -> &Vec<Vec<Jet>> {
        self.torsion_endo_jets.get_or_init(|| {
            let hd = self.frame.horiz_dim();
            let ff = self.full_dim();
            let m = self.m;
            let nfj = self.nabla_frame_jets();
            let zero = self.frame.x[0].lift(0.0);
            // lowered horizontal frame covectors
            let mut lowered = vec![vec![zero.lift(0.0); m]; hd];
            for (b, low) in lowered.iter_mut().enumerate() {
                let eb = self.frame_field(b);
                for (i, li) in low.iter_mut().enumerate() {
                    for j in 0..m {
                        li.mul_acc(self.h.at(i, j), &eb[j]);
                    }
                }
            }
            let mut out = Vec::with_capacity(3);
            for s in 0..3 {
                let xi_idx = hd + s;
                let mut block = vec![zero.lift(0.0); hd * hd];
                for a in 0..hd {
                    let br = lie_bracket(self.frame_field(xi_idx), self.frame_field(a));
                    for b in 0..hd {
                        let mut acc = zero.lift(0.0);
                        for i in 0..m {
                            acc.mul_acc(&nfj[xi_idx][a][i], &lowered[b][i]);
                            acc.mul_sub_acc(&nfj[a][xi_idx][i], &lowered[b][i]);
                            acc.mul_sub_acc(&br[i], &lowered[b][i]);
                        }
                        // matrix entry [T_s]_{ba} stored bilinearly at (a, b)
                        block[a * hd + b] = acc;
                    }
                }
                out.push(block);
            }
            out
        })
    }

    /// Measured torsion `T(E_A, E_B)` of the assembled connection, value level.
    pub fn measured_torsion_vec(&self, a: usize, b: usize) -> Vec<f64> {
        let nab = self.nabla_frame_value(false, a, b);
        let nba = self.nabla_frame_value(false, b, a);
        let br = lie_bracket(self.frame_field(a), self.frame_field(b));
        (0..self.m)
            .map(|k| nab[k] - nba[k] - br[k].value())
            .collect()
    }

    /// Frame components `h(T(E_A, E_B), E_C)` of the measured torsion, cached.
    pub fn torsion_frame(&self) -> &Vec<f64> {
        self.torsion_frame.get_or_init(|| {
            let ff = self.full_dim();
            let mut out = vec![0.0; ff * ff * ff];
            for a in 0..ff {
                for b in (a + 1)..ff {
                    let t = self.measured_torsion_vec(a, b);
                    for c in 0..ff {
                        let v = self.h_dot(&t, &self.frame_values[c]);
                        out[(a * ff + b) * ff + c] = v;
                        out[(b * ff + a) * ff + c] = -v;
                    }
                }
            }
            out
        })
    }

    pub fn torsion_frame_at(&self, a: usize, b: usize, c: usize) -> f64 {
        let ff = self.full_dim();
        self.torsion_frame()[(a * ff + b) * ff + c]
    }

    /// Frame components of the (0,4) curvature of the canonical connection,
    /// `R(E_A, E_B, E_C, E_D)`, cached.
    pub fn curvature(&self) -> &Vec<f64> {
        self.curv_frame.get_or_init(|| {
            let r4 = curvature04_values(&self.gamma, &self.h, self.m);
            frame_curvature(&r4, &self.frame_values, self.m)
        })
    }

    /// Frame components of the Levi-Civita curvature of the full metric.
    pub fn curvature_lc(&self) -> &Vec<f64> {
        self.curv_frame_lc.get_or_init(|| {
            let r4 = curvature04_values(&self.gamma_lc, &self.h, self.m);
            frame_curvature(&r4, &self.frame_values, self.m)
        })
    }

    pub fn r_frame(&self, a: usize, b: usize, c: usize, d: usize) -> f64 {
        let ff = self.full_dim();
        self.curvature()[idx4(ff, a, b, c, d)]
    }

    pub fn r_frame_lc(&self, a: usize, b: usize, c: usize, d: usize) -> f64 {
        let ff = self.full_dim();
        self.curvature_lc()[idx4(ff, a, b, c, d)]
    }

    /// Riemannian scalar curvature of the full metric.
    pub fn riemannian_scalar(&self) -> f64 {
        let ff = self.full_dim();
        let mut acc = 0.0;
        for a in 0..ff {
            for b in 0..ff {
                acc += self.r_frame_lc(b, a, a, b);
            }
        }
        acc
    }

    /// sp(1) connection one-forms evaluated on frame field `A`:
    /// `alpha_k(E_A) = h(nabla_{E_A} xi_i, xi_j)` for (i, j, k) cyclic.
    pub fn alpha(&self, a: usize) -> [f64; 3] {
        let hd = self.frame.horiz_dim();
        let mut out = [0.0; 3];
        for k in 0..3 {
            let (i, j) = ((k + 1) % 3, (k + 2) % 3);
            let nxi = self.nabla_frame_value(false, a, hd + i);
            out[k] = self.h_dot(&nxi, &self.frame_values[hd + j]);
        }
        out
    }

    /// All curvature contractions in one pass.
    pub fn contractions(&self) -> CurvatureData {
        let hd = self.frame.horiz_dim();
        let ff = hd + 3;
        let n = self.frame.n as f64;
        let rf = self.curvature();
        let i_mats: Vec<Vec<Vec<f64>>> = (0..3).map(|s| self.frame.i_matrix(s)).collect();

        let mut ric = vec![0.0; ff * ff];
        for a in 0..ff {
            for b in 0..ff {
                let mut acc = 0.0;
                for e in 0..hd {
                    acc += rf[idx4(ff, e, a, b, e)];
                }
                ric[a * ff + b] = acc;
            }
        }
        let mut s_trace = 0.0;
        for a in 0..hd {
            s_trace += ric[a * ff + a];
        }
        let s = s_trace / (8.0 * n * (n + 2.0));

        // rho_s(A,B) = (1/4n) R(A,B,e_a, I_s e_a); zeta_s(A,B) = (1/4n) R(e_a,A,B,I_s e_a).
        let mut rho = vec![vec![0.0; ff * ff]; 3];
        let mut zeta = vec![vec![0.0; ff * ff]; 3];
        for s_idx in 0..3 {
            for aa in 0..ff {
                for bb in 0..ff {
                    let mut acc_r = 0.0;
                    let mut acc_z = 0.0;
                    for a in 0..hd {
                        for b in 0..hd {
                            let coeff = i_mats[s_idx][b][a];
                            if coeff == 0.0 {
                                continue;
                            }
                            acc_r += coeff * rf[idx4(ff, aa, bb, a, b)];
                            acc_z += coeff * rf[idx4(ff, a, aa, bb, b)];
                        }
                    }
                    rho[s_idx][aa * ff + bb] = acc_r / (4.0 * n);
                    zeta[s_idx][aa * ff + bb] = acc_z / (4.0 * n);
                }
            }
        }

        let (t0, u) = self.torsion_components();
        CurvatureData {
            hd,
            s,
            ric,
            rho,
            zeta,
            t0,
            u,
        }
    }

    /// Invariant torsion components from the measured torsion endomorphisms.
    pub fn torsion_components(&self) -> (Vec<f64>, Vec<f64>) {
        let hd = self.frame.horiz_dim();
        let mut endos = Vec::with_capacity(3);
        for s in 0..3 {
            let mut m_s = vec![vec![0.0; hd]; hd];
            for a in 0..hd {
                let t = self.measured_torsion_vec(hd + s, a);
                for (b, row) in m_s.iter_mut().enumerate() {
                    row[a] = self.h_dot(&t, &self.frame_values[b]);
                }
            }
            endos.push(m_s);
        }
        let i_mats: Vec<Vec<Vec<f64>>> = (0..3).map(|s| self.frame.i_matrix(s)).collect();
        torsion_split(&endos, &i_mats)
    }
}

/// Split the three torsion endomorphism matrices into the invariant bilinear
/// forms: the symmetric parts assemble `T0(X,Y) = g((sum_s T0_s I_s) X, Y)`,
/// the skew parts all determine the same commuting tensor `u` via
/// `b_i = I_i u`, and `U(X,Y) = g(u X, Y)`.
pub fn torsion_split(
    endos: &[Vec<Vec<f64>>],
    i_mats: &[Vec<Vec<f64>>],
) -> (Vec<f64>, Vec<f64>) {
    let hd = endos[0].len();
    let mut t0_bilinear = vec![0.0; hd * hd];
    let mut u_mat = vec![vec![0.0; hd]; hd];
    for s in 0..3 {
        let m_s = &endos[s];
        let i_s = &i_mats[s];
        // symmetric / skew split
        let mut sym = vec![vec![0.0; hd]; hd];
        let mut skew = vec![vec![0.0; hd]; hd];
        for a in 0..hd {
            for b in 0..hd {
                sym[a][b] = 0.5 * (m_s[a][b] + m_s[b][a]);
                skew[a][b] = 0.5 * (m_s[a][b] - m_s[b][a]);
            }
        }
        // contribution g((T0_s I_s) X, Y): matrix sym * I_s, bilinear entry (a,b)
        // is column a, row b of the product.
        for a in 0..hd {
            for b in 0..hd {
                let mut acc = 0.0;
                for k in 0..hd {
                    acc += sym[b][k] * i_s[k][a];
                }
                t0_bilinear[a * hd + b] += acc;
            }
        }
        // u = -I_s skew, averaged over s.
        for a in 0..hd {
            for b in 0..hd {
                let mut acc = 0.0;
                for k in 0..hd {
                    acc -= i_s[a][k] * skew[k][b];
                }
                u_mat[a][b] += acc / 3.0;
            }
        }
    }
    let mut u_bilinear = vec![0.0; hd * hd];
    for a in 0..hd {
        for b in 0..hd {
            u_bilinear[a * hd + b] = u_mat[b][a];
        }
    }
    (t0_bilinear, u_bilinear)
}

/// Curvature contractions and torsion components at a point.
pub struct CurvatureData {
    pub hd: usize,
    /// Normalized scalar curvature.
    pub s: f64,
    /// `Ric(E_A, E_B)` over the full frame.
    pub ric: Vec<f64>,
    /// Ricci two-forms over the full frame.
    pub rho: Vec<Vec<f64>>,
    /// Ricci-type tensors `zeta_s` over the full frame.
    pub zeta: Vec<Vec<f64>>,
    /// Invariant symmetric torsion component on the horizontal frame.
    pub t0: Vec<f64>,
    /// Invariant commuting torsion component on the horizontal frame.
    pub u: Vec<f64>,
}

impl CurvatureData {
    pub fn ric_at(&self, a: usize, b: usize) -> f64 {
        self.ric[a * (self.hd + 3) + b]
    }

    pub fn rho_at(&self, s: usize, a: usize, b: usize) -> f64 {
        self.rho[s][a * (self.hd + 3) + b]
    }

    pub fn zeta_at(&self, s: usize, a: usize, b: usize) -> f64 {
        self.zeta[s][a * (self.hd + 3) + b]
    }

    pub fn t0_at(&self, a: usize, b: usize) -> f64 {
        self.t0[a * self.hd + b]
    }

    pub fn u_at(&self, a: usize, b: usize) -> f64 {
        self.u[a * self.hd + b]
    }

    pub fn t0_norm(&self) -> f64 {
        self.t0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn u_norm(&self) -> f64 {
        self.u.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Lichnerowicz-type curvature bound evaluated on a horizontal coefficient
    /// vector: `L(X, X) = 2(n+2) S g(X,X) + a_n T0(X,X) + b_n U(X,X)`.
    pub fn lichnerowicz(&self, n: usize, x_coeffs: &[f64]) -> Result<f64> {
        if n < 2 {
            return Err(QcError::UsageError(
                "the Lichnerowicz form coefficient is singular at n = 1".into(),
            ));
        }
        let nf = n as f64;
        let alpha = 2.0 * (2.0 * nf + 3.0) * (nf + 2.0) / (2.0 * nf + 1.0);
        let beta = 4.0 * (2.0 * nf - 1.0) * (nf + 2.0) * (nf + 2.0)
            / ((2.0 * nf + 1.0) * (nf - 1.0));
        let gxx: f64 = x_coeffs.iter().map(|c| c * c).sum();
        let mut t0xx = 0.0;
        let mut uxx = 0.0;
        for a in 0..self.hd {
            for b in 0..self.hd {
                t0xx += x_coeffs[a] * x_coeffs[b] * self.t0_at(a, b);
                uxx += x_coeffs[a] * x_coeffs[b] * self.u_at(a, b);
            }
        }
        Ok(2.0 * (nf + 2.0) * self.s * gxx + alpha * t0xx + beta * uxx)
    }
}

/// Cached normalized scalar curvature of a model, computed by the two-pass
/// construction at the canonical point.
pub fn scalar_curvature(spec: &Arc<ModelSpec>) -> Result<f64> {
    if let Some(s) = spec.s_cache.get() {
        return Ok(*s);
    }
    let ctx = GeometryContext::build(spec, &spec.canonical_point(), 3)?;
    let s = ctx.s_scalar();
    let _ = spec.s_cache.set(s);
    Ok(s)
}

// ---------------------------------------------------------------------------
// Assembly helpers
// ---------------------------------------------------------------------------

/// Lowered Levi-Civita coefficients
/// `Gamma_{ijk} = (d_i h_jk + d_j h_ik - d_k h_ij) / 2`, flat `[i][j][k]`.
fn christoffel_lower(h: &Mat<Jet>) -> Vec<Jet> {
    let m = h.rows;
    let zero = h.at(0, 0).lift(0.0);
    let mut out = vec![zero; m * m * m];
    for i in 0..m {
        for j in i..m {
            for k in 0..m {
                let mut v = h.at(j, k).derivative(i);
                v.add_assign(&h.at(i, k).derivative(j));
                v.sub_assign(&h.at(i, j).derivative(k));
                let v = v.scale(0.5);
                out[idx3(m, i, j, k)] = v.clone();
                if i != j {
                    out[idx3(m, j, i, k)] = v;
                }
            }
        }
    }
    out
}

/// Raise the last slot of a lowered `[i][j][k]` block into `Gamma^k_{ij}`,
/// flat `[k][i][j]`.
fn raise_lower_block(hinv: &Mat<Jet>, low: &[Jet]) -> Vec<Jet> {
    let m = hinv.rows;
    let zero = hinv.at(0, 0).lift(0.0);
    let mut out = vec![zero; m * m * m];
    for i in 0..m {
        for j in 0..m {
            for k in 0..m {
                let mut acc = hinv.at(0, 0).lift(0.0);
                for l in 0..m {
                    acc.mul_acc(hinv.at(k, l), &low[idx3(m, i, j, l)]);
                }
                out[idx3(m, k, i, j)] = acc;
            }
        }
    }
    out
}

/// Ambient coefficient matrices of the fundamental 2-forms:
/// `omega_s(u, v) = d eta_s(P_H u, P_H v) / 2`.
pub fn ambient_omegas(frame: &FrameData) -> Result<[Mat<Jet>; 3]> {
    let m = frame.ambient_dim();
    let zero = frame.x[0].lift(0.0);
    // columns of the horizontal projector
    let mut proj: Vec<Vec<Jet>> = Vec::with_capacity(m);
    for i in 0..m {
        let mut e = vec![zero.lift(0.0); m];
        e[i] = zero.lift(1.0);
        proj.push(frame.project_horizontal(&e)?);
    }
    let mut out: [Mat<Jet>; 3] = [
        Mat::zeros(&zero, m, m),
        Mat::zeros(&zero, m, m),
        Mat::zeros(&zero, m, m),
    ];
    for s in 0..3 {
        // tmp[a][j] = sum_b deta[a][b] proj[j][b]
        let mut tmp = vec![vec![zero.lift(0.0); m]; m];
        for a in 0..m {
            for j in 0..m {
                let mut acc = zero.lift(0.0);
                for b in 0..m {
                    acc.mul_acc(&frame.deta[s][a][b], &proj[j][b]);
                }
                tmp[a][j] = acc;
            }
        }
        for i in 0..m {
            for j in 0..m {
                let mut acc = zero.lift(0.0);
                for a in 0..m {
                    acc.mul_acc(&proj[i][a], &tmp[a][j]);
                }
                out[s].set(i, j, acc.scale(0.5));
            }
        }
    }
    Ok(out)
}

/// Lowered horizontal torsion `T(u, v, w) = 2 sum_s omega_s(u, v) eta_s(w)`.
fn horizontal_torsion_lower(frame: &FrameData, omega_amb: &[Mat<Jet>; 3]) -> Vec<Jet> {
    let m = frame.ambient_dim();
    let zero = frame.x[0].lift(0.0);
    let mut out = vec![zero; m * m * m];
    for i in 0..m {
        for j in 0..m {
            for s in 0..3 {
                let o = omega_amb[s].at(i, j);
                for k in 0..m {
                    let mut term = frame.x[0].lift(0.0);
                    term.mul_acc(o, &frame.eta[s][k]);
                    out[idx3(m, i, j, k)].add_assign(&term.scale(2.0));
                }
            }
        }
    }
    out
}

/// Lowered vertical-vertical torsion
/// `T(u, v, w) += -S sum_cyc (eta_i ^ eta_j)(u, v) eta_k(w)`.
fn vertical_torsion_lower(frame: &FrameData, s_value: f64, out: &mut [Jet]) {
    let m = frame.ambient_dim();
    for (ii, jj, kk) in [(0usize, 1usize, 2usize), (1, 2, 0), (2, 0, 1)] {
        for i in 0..m {
            for j in 0..m {
                // (eta_ii ^ eta_jj)(d_i, d_j)
                let mut wedge = frame.x[0].lift(0.0);
                wedge.mul_acc(&frame.eta[ii][i], &frame.eta[jj][j]);
                wedge.mul_sub_acc(&frame.eta[jj][i], &frame.eta[ii][j]);
                let wedge = wedge.scale(-s_value);
                for k in 0..m {
                    out[idx3(m, i, j, k)].mul_acc(&wedge, &frame.eta[kk][k]);
                }
            }
        }
    }
}

/// Contorsion `K(u,v,w) = (T(u,v,w) - T(v,w,u) + T(w,u,v)) / 2` from a lowered
/// torsion block.
fn contorsion_lower(t_low: &[Jet], m: usize) -> Vec<Jet> {
    let zero = t_low[0].lift(0.0);
    let mut out = vec![zero; m * m * m];
    for i in 0..m {
        for j in 0..m {
            for k in 0..m {
                let mut v = t_low[idx3(m, i, j, k)].clone();
                v.sub_assign(&t_low[idx3(m, j, k, i)]);
                v.add_assign(&t_low[idx3(m, k, i, j)]);
                out[idx3(m, i, j, k)] = v.scale(0.5);
            }
        }
    }
    out
}

/// Value-level (0,4) curvature of a connection given by jet Christoffels:
/// `R(d_i, d_j, d_k, d_l) = h_{lm} (d_i G^m_{jk} - d_j G^m_{ik}
///  + G^p_{jk} G^m_{ip} - G^p_{ik} G^m_{jp})`.
fn curvature04_values(gamma: &[Jet], h: &Mat<Jet>, m: usize) -> Vec<f64> {
    let mut gv = vec![0.0; m * m * m];
    for (t, g) in gv.iter_mut().zip(gamma) {
        *t = g.value();
    }
    let mut hv = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            hv[i * m + j] = h.at(i, j).value();
        }
    }
    let mut upper = vec![0.0; m * m * m]; // R^l_{ijk} for i<j, antisym in (i,j)
    let mut out = vec![0.0; m * m * m * m];
    for i in 0..m {
        for j in (i + 1)..m {
            for k in 0..m {
                for l in 0..m {
                    let mut v = gamma[idx3(m, l, j, k)].d1(i) - gamma[idx3(m, l, i, k)].d1(j);
                    for p in 0..m {
                        v += gv[idx3(m, p, j, k)] * gv[idx3(m, l, i, p)]
                            - gv[idx3(m, p, i, k)] * gv[idx3(m, l, j, p)];
                    }
                    upper[idx3(m, l, j, k)] = v; // reuse as scratch keyed on (l, j, k)
                }
                for l in 0..m {
                    let mut acc = 0.0;
                    for mm in 0..m {
                        acc += hv[l * m + mm] * upper[idx3(m, mm, j, k)];
                    }
                    out[idx4(m, i, j, k, l)] = acc;
                    out[idx4(m, j, i, k, l)] = -acc;
                }
            }
        }
    }
    out
}

fn frame_values(frame: &FrameData) -> Vec<Vec<f64>> {
    frame
        .full_frame()
        .iter()
        .map(|f| f.iter().map(|c| c.value()).collect())
        .collect()
}

/// Contract an ambient (0,4) block with frame vectors on all four slots.
fn frame_curvature(r4: &[f64], fv: &[Vec<f64>], m: usize) -> Vec<f64> {
    let ff = fv.len();
    // stage 1: contract last slot
    let mut s1 = vec![0.0; m * m * m * ff];
    for i in 0..m {
        for j in 0..m {
            for k in 0..m {
                let base = ((i * m + j) * m + k) * m;
                for (d, f) in fv.iter().enumerate() {
                    let mut acc = 0.0;
                    for l in 0..m {
                        acc += r4[base + l] * f[l];
                    }
                    s1[((i * m + j) * m + k) * ff + d] = acc;
                }
            }
        }
    }
    // stage 2: slot 3
    let mut s2 = vec![0.0; m * m * ff * ff];
    for i in 0..m {
        for j in 0..m {
            for (c, f) in fv.iter().enumerate() {
                for d in 0..ff {
                    let mut acc = 0.0;
                    for k in 0..m {
                        acc += s1[((i * m + j) * m + k) * ff + d] * f[k];
                    }
                    s2[((i * m + j) * ff + c) * ff + d] = acc;
                }
            }
        }
    }
    // stage 3: slot 2
    let mut s3 = vec![0.0; m * ff * ff * ff];
    for i in 0..m {
        for (b, f) in fv.iter().enumerate() {
            for c in 0..ff {
                for d in 0..ff {
                    let mut acc = 0.0;
                    for j in 0..m {
                        acc += s2[((i * m + j) * ff + c) * ff + d] * f[j];
                    }
                    s3[((i * ff + b) * ff + c) * ff + d] = acc;
                }
            }
        }
    }
    // stage 4: slot 1
    let mut out = vec![0.0; ff * ff * ff * ff];
    for (a, f) in fv.iter().enumerate() {
        for b in 0..ff {
            for c in 0..ff {
                for d in 0..ff {
                    let mut acc = 0.0;
                    for i in 0..m {
                        acc += s3[((i * ff + b) * ff + c) * ff + d] * f[i];
                    }
                    out[((a * ff + b) * ff + c) * ff + d] = acc;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{sample_heis, sample_sphere, Normalization};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn heis_ctx(n: usize, seed: u64) -> GeometryContext {
        let spec = Arc::new(ModelSpec::heisenberg(n).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = sample_heis(&mut rng, n, None);
        GeometryContext::build(&spec, &p.coords, 3).unwrap()
    }

    fn sphere_ctx(n: usize, seed: u64) -> GeometryContext {
        let spec = Arc::new(ModelSpec::sphere(n, Normalization::Sasakian).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = sample_sphere(&mut rng, n);
        GeometryContext::build(&spec, &p.coords, 3).unwrap()
    }

    #[test]
    fn cylinder_machinery_reproduces_round_s3() {
        use crate::jet::jet_seed;
        let x0 = {
            let raw = [0.3, -0.5, 0.7, 0.4];
            let r = raw.iter().map(|c| c * c).sum::<f64>().sqrt();
            raw.iter().map(|c| c / r).collect::<Vec<f64>>()
        };
        let m = 4;
        let xs = jet_seed(&x0, 2).unwrap();
        let mut r2 = xs[0].lift(0.0);
        for x in &xs {
            r2.mul_acc(x, x);
        }
        let r2inv = r2.recip().unwrap();
        let mut h = Mat::zeros(&xs[0].lift(0.0), m, m);
        for i in 0..m {
            for j in 0..m {
                let xx = xs[i].mul(&xs[j]).mul(&r2inv);
                let delta = if i == j { 1.0 } else { 0.0 };
                let mut v = xs[0].lift(delta).sub(&xx).mul(&r2inv);
                v.add_assign(&xx);
                h.set(i, j, v);
            }
        }
        let hinv = invert(&h).unwrap();
        let low = christoffel_lower(&h);
        let gamma = raise_lower_block(&hinv, &low);
        let r4 = curvature04_values(&gamma, &h, m);
        // Euclidean-orthonormal tangent basis at x0.
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for i in 0..m {
            let mut e = vec![0.0; m];
            e[i] = 1.0;
            let d: f64 = e.iter().zip(&x0).map(|(a, b)| a * b).sum();
            for (c, xc) in e.iter_mut().zip(&x0) {
                *c -= d * xc;
            }
            for prev in &basis {
                let d: f64 = e.iter().zip(prev).map(|(a, b)| a * b).sum();
                for (c, pc) in e.iter_mut().zip(prev) {
                    *c -= d * pc;
                }
            }
            let nrm: f64 = e.iter().map(|c| c * c).sum::<f64>().sqrt();
            if nrm > 1e-8 {
                for c in e.iter_mut() {
                    *c /= nrm;
                }
                basis.push(e);
            }
        }
        assert_eq!(basis.len(), 3);
        let fr = frame_curvature(&r4, &basis, m);
        let ff = 3;
        let mut scal = 0.0;
        for a in 0..ff {
            for b in 0..ff {
                scal += fr[idx4(ff, b, a, a, b)];
            }
        }
        assert!((scal - 6.0).abs() < 1e-8, "Scal(S^3) = {scal}");
    }

    #[test]
    fn flat_model_has_zero_curvature_and_s() {
        let ctx = heis_ctx(2, 21);
        assert!(ctx.s_scalar().abs() < 1e-9, "S = {}", ctx.s_scalar());
        let ff = ctx.full_dim();
        let mut worst: f64 = 0.0;
        for a in 0..ff {
            for b in 0..ff {
                for c in 0..ff {
                    for d in 0..ff {
                        worst = worst.max(ctx.r_frame(a, b, c, d).abs());
                    }
                }
            }
        }
        assert!(worst < 1e-9, "max |R| = {worst}");
    }

    #[test]
    fn sphere_scalar_curvature_is_two() {
        let ctx = sphere_ctx(2, 22);
        assert!(
            (ctx.s_scalar() - 2.0).abs() < 1e-8,
            "S = {}",
            ctx.s_scalar()
        );
        assert!(
            (ctx.s_pass1 - ctx.s_pass2).abs() < 1e-7,
            "pass disagreement {} vs {}",
            ctx.s_pass1,
            ctx.s_pass2
        );
    }

    #[test]
    fn sphere_riemannian_scalar_curvature() {
        let ctx = sphere_ctx(2, 23);
        let scal = ctx.riemannian_scalar();
        assert!((scal - 110.0).abs() < 1e-6, "Scal^h = {scal}");
    }

    #[test]
    fn sphere_ricci_is_einstein() {
        let ctx = sphere_ctx(2, 24);
        let cd = ctx.contractions();
        let hd = ctx.horiz_dim();
        for a in 0..hd {
            for b in 0..hd {
                let expect = if a == b { 16.0 } else { 0.0 };
                assert!(
                    (cd.ric_at(a, b) - expect).abs() < 1e-7,
                    "Ric({a},{b}) = {}",
                    cd.ric_at(a, b)
                );
            }
        }
        assert!(cd.t0_norm() < 1e-9);
        assert!(cd.u_norm() < 1e-9);
    }

    #[test]
    fn connection_is_metric_and_reproduces_torsion() {
        for ctx in [heis_ctx(2, 25), sphere_ctx(2, 26)] {
            let ff = ctx.full_dim();
            // metric compatibility on frame fields: A h(B,C) = h(nab_A B, C) + h(B, nab_A C)
            let mut worst: f64 = 0.0;
            for a in 0..ff.min(5) {
                let ua = ctx.frame_field(a).clone();
                for b in 0..ff {
                    for c in b..ff {
                        let hbc = {
                            // h(B, C) as a function
                            let mut acc = ctx.frame.x[0].lift(0.0);
                            let fb = ctx.frame_field(b);
                            let fc = ctx.frame_field(c);
                            for i in 0..ctx.m {
                                for j in 0..ctx.m {
                                    let hij = ctx.h.at(i, j);
                                    let mut t = fb[i].mul(&fc[j]);
                                    t = t.mul(hij);
                                    acc.add_assign(&t);
                                }
                            }
                            acc
                        };
                        let mut dir = 0.0;
                        for i in 0..ctx.m {
                            dir += ua[i].value() * hbc.d1(i);
                        }
                        let nab_b = ctx.nabla_frame_value(false, a, b);
                        let nab_c = ctx.nabla_frame_value(false, a, c);
                        let rhs = ctx.h_dot(&nab_b, &ctx.frame_value(c))
                            + ctx.h_dot(&ctx.frame_value(b), &nab_c);
                        worst = worst.max((dir - rhs).abs());
                    }
                }
            }
            assert!(worst < 1e-9, "metric compatibility residual {worst}");

            // measured torsion matches the prescription
            let hd = ctx.horiz_dim();
            let mut worst_t: f64 = 0.0;
            for a in 0..hd {
                for b in 0..hd {
                    for s in 0..3 {
                        let measured = ctx.torsion_frame_at(a, b, hd + s);
                        let expect = 2.0 * ctx.frame.omega_f[s].at(a, b).value();
                        worst_t = worst_t.max((measured - expect).abs());
                    }
                    for c in 0..hd {
                        worst_t = worst_t.max(ctx.torsion_frame_at(a, b, c).abs());
                    }
                }
                for s in 0..3 {
                    for c in 0..ff {
                        worst_t = worst_t.max(ctx.torsion_frame_at(hd + s, a, c).abs());
                    }
                }
            }
            let t123 = ctx.torsion_frame_at(hd, hd + 1, hd + 2);
            worst_t = worst_t.max((t123 + ctx.s_scalar()).abs());
            assert!(worst_t < 1e-8, "torsion self-consistency residual {worst_t}");
        }
    }

    #[test]
    fn connection_preserves_splitting_and_sp1_structure() {
        let ctx = sphere_ctx(2, 27);
        let ff = ctx.full_dim();
        let hd = ctx.horiz_dim();
        let mut worst: f64 = 0.0;
        for a in 0..ff {
            for b in 0..hd {
                let nab = ctx.nabla_frame_value(false, a, b);
                for s in 0..3 {
                    worst = worst.max(ctx.h_dot(&nab, &ctx.frame_value(hd + s)).abs());
                }
            }
            for s in 0..3 {
                let nxi = ctx.nabla_frame_value(false, a, hd + s);
                for b in 0..hd {
                    worst = worst.max(ctx.h_dot(&nxi, &ctx.frame_value(b)).abs());
                }
            }
        }
        assert!(worst < 1e-9, "H+V preservation residual {worst}");

        // nabla xi_i = -alpha_j xi_k + alpha_k xi_j
        let mut worst_xi: f64 = 0.0;
        for a in 0..ff {
            let al = ctx.alpha(a);
            for i in 0..3 {
                let (j, k) = ((i + 1) % 3, (i + 2) % 3);
                let nxi = ctx.nabla_frame_value(false, a, hd + i);
                for t in 0..3 {
                    let got = ctx.h_dot(&nxi, &ctx.frame_value(hd + t));
                    let expect = if t == k {
                        -al[j]
                    } else if t == j {
                        al[k]
                    } else {
                        0.0
                    };
                    worst_xi = worst_xi.max((got - expect).abs());
                }
            }
        }
        assert!(worst_xi < 1e-9, "reeb covariant derivative residual {worst_xi}");
    }

    #[test]
    fn synthetic_torsion_split_recovers_parts() {
        // Build psi_s = sym_s + I_s u with a shared commuting symmetric u and
        // check the split returns them.
        let spec = Arc::new(ModelSpec::heisenberg(2).unwrap());
        let frame = spec.frame_at(&spec.canonical_point(), 1).unwrap();
        let hd = frame.horiz_dim();
        let i_mats: Vec<Vec<Vec<f64>>> = (0..3).map(|s| frame.i_matrix(s)).collect();
        // u = c * (I_1 J_1 + ...) must commute with all I_s; the identity does.
        let mut u_true = vec![vec![0.0; hd]; hd];
        for (a, row) in u_true.iter_mut().enumerate() {
            row[a] = 0.3;
        }
        let mut endos = Vec::new();
        for s in 0..3 {
            let mut m_s = vec![vec![0.0; hd]; hd];
            // symmetric part: anticommuting with I_s is not needed for the
            // split itself; use a generic symmetric matrix.
            let mut seed = 1.0 + s as f64;
            for a in 0..hd {
                for b in a..hd {
                    seed = (seed * 37.0 + 11.0) % 23.0;
                    let v = seed / 11.5 - 1.0;
                    m_s[a][b] += v;
                    m_s[b][a] += v;
                }
            }
            // plus I_s u
            for a in 0..hd {
                for b in 0..hd {
                    let mut acc = 0.0;
                    for k in 0..hd {
                        acc += i_mats[s][a][k] * u_true[k][b];
                    }
                    m_s[a][b] += acc;
                }
            }
            endos.push(m_s);
        }
        let (_t0, u_bil) = torsion_split(&endos, &i_mats);
        for a in 0..hd {
            for b in 0..hd {
                let expect = u_true[b][a];
                assert!(
                    (u_bil[a * hd + b] - expect).abs() < 1e-12,
                    "u({a},{b}) = {} vs {expect}",
                    u_bil[a * hd + b]
                );
            }
        }
    }

    #[test]
    fn lichnerowicz_values_on_sphere() {
        let ctx = sphere_ctx(2, 28);
        let cd = ctx.contractions();
        let hd = ctx.horiz_dim();
        let mut x = vec![0.0; hd];
        x[0] = 1.0;
        let l = cd.lichnerowicz(2, &x).unwrap();
        assert!((l - 16.0).abs() < 1e-7, "L(X,X) = {l}");
        let zero = vec![0.0; hd];
        assert_eq!(cd.lichnerowicz(2, &zero).unwrap(), 0.0);
        let x2: Vec<f64> = x.iter().map(|c| 2.0 * c).collect();
        let l2 = cd.lichnerowicz(2, &x2).unwrap();
        assert!((l2 - 4.0 * l).abs() < 1e-7);
        assert!(cd.lichnerowicz(1, &x).is_err());
    }
}
