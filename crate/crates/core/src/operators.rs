//! Differential operators on scalar fields over the model spaces.
//!
//! Everything is driven by jets: a scalar field is evaluated once as a jet at
//! the base point, and the frame fields plus connection coefficients of a
//! [`GeometryContext`] convert jet data into covariant derivatives of any
//! order the seed supports.

use crate::biquard::GeometryContext;
use crate::error::{QcError, Result};
use crate::jet::Jet;
use crate::models::{sample_sphere, ModelKind, ModelSpec, SpherePoint};
use crate::scalar::Scalar;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldFamily {
    Linear,
    Quadratic,
    Cubic,
}

/// An ambient polynomial test function. On the sphere the field is restricted
/// by composing with the radial normalization, so jets taken in the ambient
/// coordinates differentiate the restriction.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScalarField {
    pub family: FieldFamily,
    /// Monomials as variable-index lists (length = degree) with coefficients.
    pub terms: Vec<(Vec<usize>, f64)>,
}

impl ScalarField {
    pub fn constant(c: f64) -> ScalarField {
        ScalarField {
            family: FieldFamily::Linear,
            terms: vec![(vec![], c)],
        }
    }

    /// The linear coordinate function `x_i`.
    pub fn coordinate(i: usize) -> ScalarField {
        ScalarField {
            family: FieldFamily::Linear,
            terms: vec![(vec![i], 1.0)],
        }
    }

    pub fn from_terms(family: FieldFamily, terms: Vec<(Vec<usize>, f64)>) -> ScalarField {
        ScalarField { family, terms }
    }

    /// Seeded random polynomial with coefficients in [-1, 1]: all linear
    /// monomials plus a sparse selection of higher ones.
    pub fn seeded<R: Rng>(family: FieldFamily, m: usize, rng: &mut R) -> ScalarField {
        let mut terms: Vec<(Vec<usize>, f64)> = Vec::new();
        for i in 0..m {
            terms.push((vec![i], rng.gen_range(-1.0..1.0)));
        }
        let degree = match family {
            FieldFamily::Linear => 1,
            FieldFamily::Quadratic => 2,
            FieldFamily::Cubic => 3,
        };
        for d in 2..=degree {
            for _ in 0..2 * m {
                let mut idx: Vec<usize> = (0..d).map(|_| rng.gen_range(0..m)).collect();
                idx.sort_unstable();
                terms.push((idx, rng.gen_range(-1.0..1.0)));
            }
        }
        ScalarField { family, terms }
    }

    /// Evaluate on scalar coordinates (no model restriction).
    pub fn eval_raw<S: Scalar>(&self, coords: &[S]) -> S {
        let mut acc = coords[0].lift(0.0);
        for (idx, c) in &self.terms {
            match idx.len() {
                0 => acc = acc.add(&coords[0].lift(*c)),
                1 => acc = acc.add(&coords[idx[0]].scale(*c)),
                _ => {
                    let mut mono = coords[idx[0]].clone();
                    for &v in &idx[1..] {
                        mono = mono.mul(&coords[v]);
                    }
                    acc = acc.add(&mono.scale(*c));
                }
            }
        }
        acc
    }

    /// Evaluate with the model's restriction (radial normalization on the
    /// sphere; identity on the group).
    pub fn eval<S: Scalar>(&self, spec: &ModelSpec, coords: &[S]) -> Result<S> {
        match spec.kind {
            ModelKind::Heisenberg => Ok(self.eval_raw(coords)),
            ModelKind::Sphere => {
                let mut r2 = coords[0].lift(0.0);
                for c in coords {
                    r2.mul_acc(c, c);
                }
                let rinv = r2.sqrt()?.recip()?;
                let normalized: Vec<S> = coords.iter().map(|c| c.mul(&rinv)).collect();
                Ok(self.eval_raw(&normalized))
            }
        }
    }
}

/// Frame-level first and second covariant derivatives of a scalar, as values.
pub struct HessianData {
    /// Full frame size `4n + 3`.
    pub ff: usize,
    pub hd: usize,
    pub f_value: f64,
    /// `nabla^2 f(E_A, E_B)`.
    pub hess: Vec<f64>,
    /// `df(E_A)` over the full frame.
    pub df_frame: Vec<f64>,
}

impl HessianData {
    pub fn at(&self, a: usize, b: usize) -> f64 {
        self.hess[a * self.ff + b]
    }

    pub fn df(&self, a: usize) -> f64 {
        self.df_frame[a]
    }

    /// `df(xi_s)`.
    pub fn dxi(&self, s: usize) -> f64 {
        self.df_frame[self.hd + s]
    }

    /// Horizontal gradient coefficients in the frame.
    pub fn grad_h(&self) -> &[f64] {
        &self.df_frame[..self.hd]
    }

    pub fn grad_norm_sq(&self) -> f64 {
        self.grad_h().iter().map(|c| c * c).sum()
    }

    /// `sub-Laplacian = - trace_H of the Hessian`.
    pub fn sublaplacian(&self) -> f64 {
        -(0..self.hd).map(|a| self.at(a, a)).sum::<f64>()
    }
}

/// All per-(point, field) operator state, built lazily.
pub struct FieldOps<'a> {
    pub ctx: &'a GeometryContext,
    /// Field value as a jet at the point.
    pub u: Jet,
    /// Ambient partial derivatives of the field.
    pub du: Vec<Jet>,
    /// `E_B(u)` as jet functions over the full frame.
    pub frame_d: Vec<Jet>,
    hess: once_cell::sync::OnceCell<HessianData>,
    hess_field: once_cell::sync::OnceCell<Vec<Jet>>,
}

impl<'a> FieldOps<'a> {
    pub fn new(ctx: &'a GeometryContext, field: &ScalarField) -> Result<FieldOps<'a>> {
        let u = field.eval(&ctx.spec, &ctx.frame.x)?;
        Self::from_jet(ctx, u)
    }

    /// Operator pipeline over an arbitrary scalar jet (used for derived
    /// scalars like `|grad f|^2`).
    pub fn from_jet(ctx: &'a GeometryContext, u: Jet) -> Result<FieldOps<'a>> {
        let m = ctx.ambient_dim();
        let du: Vec<Jet> = (0..m).map(|i| u.derivative(i)).collect();
        let ff = ctx.full_dim();
        let mut frame_d = Vec::with_capacity(ff);
        for a in 0..ff {
            let ea = ctx.frame_field(a);
            let mut acc = u.lift(0.0);
            for i in 0..m {
                acc.mul_acc(&ea[i], &du[i]);
            }
            frame_d.push(acc);
        }
        Ok(FieldOps {
            ctx,
            u,
            du,
            frame_d,
            hess: once_cell::sync::OnceCell::new(),
            hess_field: once_cell::sync::OnceCell::new(),
        })
    }

    pub fn value(&self) -> f64 {
        self.u.value()
    }

    /// Frame-level Hessian and gradient values.
    pub fn hessian(&self) -> &HessianData {
        self.hess.get_or_init(|| {
            let ff = self.ctx.full_dim();
            let hd = self.ctx.horiz_dim();
            let m = self.ctx.ambient_dim();
            let mut hess = vec![0.0; ff * ff];
            let mut df_frame = vec![0.0; ff];
            for a in 0..ff {
                df_frame[a] = self.frame_d[a].value();
            }
            for a in 0..ff {
                let ea = self.ctx.frame_value(a);
                for b in 0..ff {
                    let mut v = 0.0;
                    for i in 0..m {
                        if ea[i] != 0.0 {
                            v += ea[i] * self.frame_d[b].d1(i);
                        }
                    }
                    let nab = self.ctx.nabla_frame_value(false, a, b);
                    for k in 0..m {
                        v -= nab[k] * self.du[k].value();
                    }
                    hess[a * ff + b] = v;
                }
            }
            HessianData {
                ff,
                hd,
                f_value: self.u.value(),
                hess,
                df_frame,
            }
        })
    }

    pub fn sublaplacian(&self) -> f64 {
        self.hessian().sublaplacian()
    }

    /// `nabla^2 f(E_A, E_B)` as jet functions (for third derivatives).
    pub fn hessian_field(&self) -> &Vec<Jet> {
        self.hess_field.get_or_init(|| {
            let ff = self.ctx.full_dim();
            let m = self.ctx.ambient_dim();
            let nfj = self.ctx.nabla_frame_jets();
            let mut out = Vec::with_capacity(ff * ff);
            for a in 0..ff {
                let ea = self.ctx.frame_field(a);
                for b in 0..ff {
                    let mut acc = self.u.lift(0.0);
                    for i in 0..m {
                        acc.mul_acc(&ea[i], &self.frame_d[b].derivative(i));
                    }
                    for k in 0..m {
                        acc.mul_sub_acc(&nfj[a][b][k], &self.du[k]);
                    }
                    out.push(acc);
                }
            }
            out
        })
    }

    pub fn hess_field_at(&self, a: usize, b: usize) -> &Jet {
        &self.hessian_field()[a * self.ctx.full_dim() + b]
    }

    /// Third covariant derivative `nabla^3 f(E_A, E_B, E_C)` as a value:
    /// `E_A(nabla^2 f(B, C)) - nabla^2 f(nabla_A B, C) - nabla^2 f(B, nabla_A C)`.
    pub fn nabla3(&self, a: usize, b: usize, c: usize) -> f64 {
        let ff = self.ctx.full_dim();
        let m = self.ctx.ambient_dim();
        let hf = self.hessian_field();
        let hd_vals = self.hessian();
        let ea = self.ctx.frame_value(a);
        let mut v = 0.0;
        for i in 0..m {
            if ea[i] != 0.0 {
                v += ea[i] * hf[b * ff + c].d1(i);
            }
        }
        // expand nabla_A B and nabla_A C in the frame
        for (slot, other) in [(b, c), (c, b)] {
            let nab = self.ctx.nabla_frame_value(false, a, slot);
            for d in 0..ff {
                let coeff = self.ctx.h_dot(&nab, self.ctx.frame_value(d));
                if coeff != 0.0 {
                    let h2 = if slot == b {
                        hd_vals.at(d, other)
                    } else {
                        hd_vals.at(other, d)
                    };
                    v -= coeff * h2;
                }
            }
        }
        v
    }

    /// Riemannian (Levi-Civita) Hessian over the full frame, direct route.
    pub fn riemannian_hessian_direct(&self) -> Vec<f64> {
        let ff = self.ctx.full_dim();
        let m = self.ctx.ambient_dim();
        let mut out = vec![0.0; ff * ff];
        for a in 0..ff {
            let ea = self.ctx.frame_value(a);
            for b in 0..ff {
                let mut v = 0.0;
                for i in 0..m {
                    if ea[i] != 0.0 {
                        v += ea[i] * self.frame_d[b].d1(i);
                    }
                }
                let nab = self.ctx.nabla_frame_value(true, a, b);
                for k in 0..m {
                    v -= nab[k] * self.du[k].value();
                }
                out[a * ff + b] = v;
            }
        }
        out
    }

    /// Riemannian Hessian assembled from the canonical-connection Hessian and
    /// the torsion correction
    /// `(nabla^h)^2 f(A,B) = nabla^2 f(A,B)
    ///   + [T(A,B,df) - T(B,df,A) + T(df,A,B)] / 2`.
    pub fn riemannian_hessian_corrected(&self) -> Vec<f64> {
        let ff = self.ctx.full_dim();
        let hd = self.hessian();
        let mut out = vec![0.0; ff * ff];
        for a in 0..ff {
            for b in 0..ff {
                let mut corr = 0.0;
                for c in 0..ff {
                    let dfc = hd.df(c);
                    if dfc == 0.0 {
                        continue;
                    }
                    corr += dfc
                        * (self.ctx.torsion_frame_at(a, b, c)
                            - self.ctx.torsion_frame_at(b, c, a)
                            + self.ctx.torsion_frame_at(c, a, b));
                }
                out[a * ff + b] = hd.at(a, b) + 0.5 * corr;
            }
        }
        out
    }

    /// Riemannian Laplacian, independent Levi-Civita trace over the full frame.
    pub fn riemannian_laplacian(&self) -> f64 {
        let ff = self.ctx.full_dim();
        let rh = self.riemannian_hessian_direct();
        -(0..ff).map(|a| rh[a * ff + a]).sum::<f64>()
    }

    /// The third-order one-form on the horizontal frame:
    /// `P(X) = nabla^3 f(X, e_b, e_b) + sum_t nabla^3 f(I_t X, e_b, I_t e_b)
    ///  - 4 n S df(X) + 4 n T0(X, grad f) - (8n(n-2)/(n-1)) U(X, grad f)`.
    pub fn p_form_values(&self) -> Result<Vec<f64>> {
        let n = self.ctx.frame.n;
        if n < 2 {
            return Err(QcError::UsageError(
                "the third-order one-form has a singular coefficient at n = 1".into(),
            ));
        }
        let hd = self.ctx.horiz_dim();
        let nf = n as f64;
        let s = self.ctx.s_scalar();
        let hdata = self.hessian();
        let (t0, uu) = self.ctx.torsion_components();
        let i_mats: Vec<Vec<Vec<f64>>> = (0..3).map(|s| self.ctx.frame.i_matrix(s)).collect();
        // nabla^3 on horizontal triples
        let mut n3 = vec![0.0; hd * hd * hd];
        for a in 0..hd {
            for b in 0..hd {
                for c in 0..hd {
                    n3[(a * hd + b) * hd + c] = self.nabla3(a, b, c);
                }
            }
        }
        let grad = hdata.grad_h();
        let mut out = vec![0.0; hd];
        for a in 0..hd {
            let mut v = 0.0;
            for b in 0..hd {
                v += n3[(a * hd + b) * hd + b];
            }
            for i_t in &i_mats {
                for c in 0..hd {
                    let ca = i_t[c][a];
                    if ca == 0.0 {
                        continue;
                    }
                    for b in 0..hd {
                        for d in 0..hd {
                            let db = i_t[d][b];
                            if db != 0.0 {
                                v += ca * db * n3[(c * hd + b) * hd + d];
                            }
                        }
                    }
                }
            }
            v -= 4.0 * nf * s * hdata.df(a);
            let mut t0x = 0.0;
            let mut ux = 0.0;
            for b in 0..hd {
                t0x += t0[a * hd + b] * grad[b];
                ux += uu[a * hd + b] * grad[b];
            }
            v += 4.0 * nf * t0x;
            v -= 8.0 * nf * (nf - 2.0) / (nf - 1.0) * ux;
            out[a] = v;
        }
        Ok(out)
    }

    /// The fourth-order operator `C f = (nabla_{e_a} P)(e_a)`, the divergence
    /// of the third-order one-form. Requires order-4 jets.
    pub fn c_operator(&self) -> Result<f64> {
        let n = self.ctx.frame.n;
        if n < 2 {
            return Err(QcError::UsageError(
                "the fourth-order operator has a singular coefficient at n = 1".into(),
            ));
        }
        let p_field = self.p_form_field()?;
        let hd = self.ctx.horiz_dim();
        let m = self.ctx.ambient_dim();
        let p_values: Vec<f64> = p_field.iter().map(|p| p.value()).collect();
        let mut div = 0.0;
        for a in 0..hd {
            let ea = self.ctx.frame_value(a);
            for i in 0..m {
                if ea[i] != 0.0 {
                    div += ea[i] * p_field[a].d1(i);
                }
            }
            // - P(nabla_{e_a} e_a), horizontal expansion
            let nab = self.ctx.nabla_frame_value(false, a, a);
            for d in 0..hd {
                let coeff = self.ctx.h_dot(&nab, self.ctx.frame_value(d));
                div -= coeff * p_values[d];
            }
        }
        Ok(div)
    }

    /// The third-order one-form on horizontal frame fields, as jet functions.
    pub fn p_form_field(&self) -> Result<Vec<Jet>> {
        let n = self.ctx.frame.n;
        if n < 2 {
            return Err(QcError::UsageError(
                "the third-order one-form has a singular coefficient at n = 1".into(),
            ));
        }
        let nf = n as f64;
        let hd = self.ctx.horiz_dim();
        let ff = self.ctx.full_dim();
        let m = self.ctx.ambient_dim();
        let s = self.ctx.s_scalar();
        let hf = self.hessian_field();
        let nfj = self.ctx.nabla_frame_jets();
        let gf = self.ctx.gamma_frame_jets();
        // nabla^3 f(A, B, C) as jets, horizontal triples only.
        let mut n3 = Vec::with_capacity(hd * hd * hd);
        for a in 0..hd {
            let ea = self.ctx.frame_field(a);
            for b in 0..hd {
                for c in 0..hd {
                    let mut acc = self.u.lift(0.0);
                    for i in 0..m {
                        acc.mul_acc(&ea[i], &hf[b * ff + c].derivative(i));
                    }
                    for d in 0..ff {
                        acc.mul_sub_acc(&gf[(a * ff + b) * ff + d], &hf[d * ff + c]);
                        acc.mul_sub_acc(&gf[(a * ff + c) * ff + d], &hf[b * ff + d]);
                    }
                    n3.push(acc);
                }
            }
        }
        // measured torsion fields T0(e_a, grad f), U(e_a, grad f)
        let (t0f, uf) = self.torsion_contraction_fields()?;
        let mut out = Vec::with_capacity(hd);
        for a in 0..hd {
            let mut acc = self.u.lift(0.0);
            for b in 0..hd {
                acc.add_assign(&n3[(a * hd + b) * hd + b]);
            }
            for t in 0..3 {
                let i_t = &self.ctx.frame.omega_f[t];
                for c in 0..hd {
                    // [I_t]_{ca} = omega_t(e_a, e_c)
                    let ca = i_t.at(a, c);
                    for b in 0..hd {
                        for d in 0..hd {
                            let db = i_t.at(b, d);
                            let mut term = ca.mul(db);
                            term = term.mul(&n3[(c * hd + b) * hd + d]);
                            acc.add_assign(&term);
                        }
                    }
                }
            }
            acc.add_scaled_assign(&self.frame_d[a], -4.0 * nf * s);
            acc.add_scaled_assign(&t0f[a], 4.0 * nf);
            acc.add_scaled_assign(&uf[a], -8.0 * nf * (nf - 2.0) / (nf - 1.0));
            out.push(acc);
        }
        Ok(out)
    }

    /// Jet functions of `T0(e_a, grad f)` and `U(e_a, grad f)` from the
    /// measured torsion endomorphisms (identically zero on the models, kept in
    /// the pipeline so the divergence differentiates the defined object).
    fn torsion_contraction_fields(&self) -> Result<(Vec<Jet>, Vec<Jet>)> {
        let hd = self.ctx.horiz_dim();
        let endos = self.ctx.torsion_endo_jets();
        let zero = self.u.lift(0.0);
        let mut t0_bil = vec![zero.lift(0.0); hd * hd];
        let mut u_mat = vec![zero.lift(0.0); hd * hd];
        for s in 0..3 {
            let mut sym = vec![zero.lift(0.0); hd * hd];
            let mut skew = vec![zero.lift(0.0); hd * hd];
            for a in 0..hd {
                for b in 0..hd {
                    sym[a * hd + b] = endos[s][a * hd + b].add(&endos[s][b * hd + a]).scale(0.5);
                    skew[a * hd + b] = endos[s][a * hd + b].sub(&endos[s][b * hd + a]).scale(0.5);
                }
            }
            // [I_s]_{ab} as jets is omega_s(e_b, e_a).
            let om = &self.ctx.frame.omega_f[s];
            for a in 0..hd {
                for b in 0..hd {
                    // t0_bilinear(a,b) += (sym * I_s)[b][a]
                    let mut acc = zero.lift(0.0);
                    for k in 0..hd {
                        acc.mul_acc(&sym[b * hd + k], om.at(a, k));
                    }
                    t0_bil[a * hd + b].add_assign(&acc);
                    // u -= I_s skew / 3: [u]_{ab}
                    let mut uacc = zero.lift(0.0);
                    for k in 0..hd {
                        uacc.mul_acc(om.at(k, a), &skew[k * hd + b]);
                    }
                    u_mat[a * hd + b].sub_assign(&uacc.scale(1.0 / 3.0));
                }
            }
        }
        // contract with the horizontal gradient field coefficients
        let mut t0_out = Vec::with_capacity(hd);
        let mut u_out = Vec::with_capacity(hd);
        for a in 0..hd {
            let mut t0_acc = zero.lift(0.0);
            let mut u_acc = zero.lift(0.0);
            for b in 0..hd {
                t0_acc.mul_acc(&t0_bil[a * hd + b], &self.frame_d[b]);
                // U bilinear (a,b) = [u]_{ba}
                u_acc.mul_acc(&u_mat[b * hd + a], &self.frame_d[b]);
            }
            t0_out.push(t0_acc);
            u_out.push(u_acc);
        }
        Ok((t0_out, u_out))
    }

    /// Invariant decomposition of the horizontal Hessian: the eigenvalue-3
    /// part, the eigenvalue minus-1 part, and the trace-free 3-part
    /// `(..)_{[3]} + (Delta f / 4n) g`.
    pub fn hess_decompose(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let hd = self.ctx.horiz_dim();
        let n = self.ctx.frame.n as f64;
        let hdata = self.hessian();
        let ff = hdata.ff;
        let i_mats: Vec<Vec<Vec<f64>>> = (0..3).map(|s| self.ctx.frame.i_matrix(s)).collect();
        let mut part3 = vec![0.0; hd * hd];
        let mut part_m1 = vec![0.0; hd * hd];
        for a in 0..hd {
            for b in 0..hd {
                let mut acc = hdata.hess[a * ff + b];
                for i_s in &i_mats {
                    for c in 0..hd {
                        let ca = i_s[c][a];
                        if ca == 0.0 {
                            continue;
                        }
                        for d in 0..hd {
                            let db = i_s[d][b];
                            if db != 0.0 {
                                acc += ca * db * hdata.hess[c * ff + d];
                            }
                        }
                    }
                }
                part3[a * hd + b] = acc / 4.0;
                part_m1[a * hd + b] = hdata.hess[a * ff + b] - acc / 4.0;
            }
        }
        let lap = hdata.sublaplacian();
        let mut part30 = part3.clone();
        for a in 0..hd {
            part30[a * hd + a] += lap / (4.0 * n);
        }
        (part3, part_m1, part30)
    }
}

// ---------------------------------------------------------------------------
// Monte-Carlo integration on the sphere
// ---------------------------------------------------------------------------

pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub samples: usize,
    /// `estimate / stderr`, the statistic tested against the 3-sigma gate.
    pub z: f64,
}

const MC_BATCH: usize = 64;

/// Mean of a pointwise integrand over uniform sphere samples. The volume
/// density of the structure form is a constant multiple of the round one
/// (verified by the check suites), so vanishing-integral identities reduce to
/// a vanishing mean. Batches own derived RNG streams, so the result is
/// deterministic for a given seed regardless of thread scheduling.
pub fn mc_integrate<F>(n: usize, samples: usize, seed: u64, integrand: F) -> Result<McEstimate>
where
    F: Fn(&SpherePoint) -> Result<f64> + Sync,
{
    let batches = samples.div_ceil(MC_BATCH);
    let partials: Vec<Result<(f64, f64, usize)>> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64 + 1);
            let count = MC_BATCH.min(samples - b * MC_BATCH);
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for _ in 0..count {
                let p = sample_sphere(&mut rng, n);
                let v = integrand(&p)?;
                sum += v;
                sum_sq += v * v;
            }
            Ok((sum, sum_sq, count))
        })
        .collect();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut count = 0usize;
    for p in partials {
        let (s, s2, c) = p?;
        sum += s;
        sum_sq += s2;
        count += c;
    }
    let mean = sum / count as f64;
    let var = (sum_sq / count as f64 - mean * mean).max(0.0);
    let stderr = (var / count as f64).sqrt();
    let z = if stderr > 0.0 { mean / stderr } else { 0.0 };
    Ok(McEstimate {
        estimate: mean,
        stderr,
        samples: count,
        z,
    })
}
