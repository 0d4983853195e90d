//! Pointwise tensor calculus on ambient-coordinate fields, plus the
//! Sp(n)Sp(1)-invariant decomposition of horizontal endomorphisms.

use crate::error::Result;
use crate::jet::Jet;
use crate::models::FrameData;

/// Lie bracket of two vector fields given by jet-valued ambient components:
/// `[A, B]^k = A^i d_i B^k - B^i d_i A^k`. The result loses one jet order.
pub fn lie_bracket(a: &[Jet], b: &[Jet]) -> Vec<Jet> {
    let m = a.len();
    let mut out = vec![a[0].lift(0.0); m];
    for k in 0..m {
        let mut acc = a[0].lift(0.0);
        for i in 0..m {
            acc.mul_acc(&a[i], &b[k].derivative(i));
            acc.mul_sub_acc(&b[i], &a[k].derivative(i));
        }
        out[k] = acc;
    }
    out
}

/// Exterior derivative of a covector field on coordinate slots:
/// `d sigma(d_i, d_j) = d_i sigma_j - d_j sigma_i`.
pub fn exterior_d(sigma: &[Jet]) -> Vec<Vec<Jet>> {
    let m = sigma.len();
    let mut out = vec![vec![sigma[0].lift(0.0); m]; m];
    for i in 0..m {
        for j in 0..m {
            if i != j {
                out[i][j] = sigma[j].derivative(i).sub(&sigma[i].derivative(j));
            }
        }
    }
    out
}

/// The two invariant parts of a horizontal endomorphism (given as a frame
/// matrix acting on coefficient columns).
#[derive(Clone, Debug)]
pub struct EndoDecomposition {
    pub part3: Vec<Vec<f64>>,
    pub part_minus1: Vec<Vec<f64>>,
}

fn mat_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i][k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i][j] += aik * b[k][j];
            }
        }
    }
    out
}

/// Projection onto the Casimir eigenspaces: the eigenvalue-3 part is
/// `(Psi - sum_s I_s Psi I_s) / 4`, the eigenvalue -1 part the complement.
pub fn casimir_project(psi: &[Vec<f64>], frame: &FrameData) -> Result<EndoDecomposition> {
    let hd = frame.horiz_dim();
    let i_mats: Vec<Vec<Vec<f64>>> = (0..3).map(|s| frame.i_matrix(s)).collect();
    let mut part3 = vec![vec![0.0; hd]; hd];
    for s in 0..3 {
        let ipi = mat_mul(&i_mats[s], &mat_mul(psi, &i_mats[s]));
        for a in 0..hd {
            for b in 0..hd {
                part3[a][b] -= ipi[a][b];
            }
        }
    }
    let mut part_minus1 = vec![vec![0.0; hd]; hd];
    for a in 0..hd {
        for b in 0..hd {
            part3[a][b] = (part3[a][b] + psi[a][b]) / 4.0;
            part_minus1[a][b] = psi[a][b] - part3[a][b];
        }
    }
    Ok(EndoDecomposition { part3, part_minus1 })
}

/// Casimir operator `Upsilon(Psi) = -sum_s I_s Psi I_s` on frame matrices.
pub fn casimir_apply(psi: &[Vec<f64>], frame: &FrameData) -> Vec<Vec<f64>> {
    let hd = frame.horiz_dim();
    let mut out = vec![vec![0.0; hd]; hd];
    for s in 0..3 {
        let i_s = frame.i_matrix(s);
        let ipi = mat_mul(&i_s, &mat_mul(psi, &i_s));
        for a in 0..hd {
            for b in 0..hd {
                out[a][b] -= ipi[a][b];
            }
        }
    }
    out
}

pub fn frobenius(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x * y).sum::<f64>())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jet::jet_seed;
    use crate::models::{ModelSpec, Normalization};

    #[test]
    fn coordinate_fields_commute() {
        let xs = jet_seed(&[0.3, -0.4, 0.9], 2).unwrap();
        let zero = xs[0].lift(0.0);
        let one = xs[0].lift(1.0);
        let a = vec![one.clone(), zero.clone(), zero.clone()];
        let b = vec![zero.clone(), one.clone(), zero.clone()];
        for c in lie_bracket(&a, &b) {
            assert_eq!(c.value(), 0.0);
        }
    }

    #[test]
    fn bracket_of_linear_fields() {
        // A = x d_y, B = y d_x: [A,B] = x d_x(y d_x)... check against the
        // classical result [x d_y, y d_x] = x d_x - y d_y evaluated pointwise.
        let xs = jet_seed(&[2.0, 3.0], 2).unwrap();
        let zero = xs[0].lift(0.0);
        let a = vec![zero.clone(), xs[0].clone()];
        let b = vec![xs[1].clone(), zero.clone()];
        let br = lie_bracket(&a, &b);
        assert!((br[0].value() - 2.0).abs() < 1e-14);
        assert!((br[1].value() + 3.0).abs() < 1e-14);
    }

    #[test]
    fn d_of_constant_covector_vanishes_and_d_squared_zero() {
        let xs = jet_seed(&[0.7, -0.2], 3).unwrap();
        let sigma = vec![xs[0].lift(4.0), xs[0].lift(-1.0)];
        for row in exterior_d(&sigma) {
            for c in row {
                assert_eq!(c.value(), 0.0);
            }
        }
        // d(dF) = 0 for quadratic F = x^2 y ... work with dF = (2xy, x^2).
        let two_xy = xs[0].mul(&xs[1]).scale(2.0);
        let x2 = xs[0].mul(&xs[0]);
        let df = vec![two_xy, x2];
        let ddf = exterior_d(&df);
        for row in ddf {
            for c in row {
                assert!(c.value().abs() < 1e-14);
            }
        }
    }

    #[test]
    fn casimir_identity_is_pure_3_and_omega_is_pure_minus1() {
        let spec = ModelSpec::sphere(2, Normalization::Sasakian).unwrap();
        let frame = spec.frame_at(&spec.canonical_point(), 1).unwrap();
        let hd = frame.horiz_dim();
        let mut ident = vec![vec![0.0; hd]; hd];
        for (i, row) in ident.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        let dec = casimir_project(&ident, &frame).unwrap();
        for a in 0..hd {
            for b in 0..hd {
                assert!((dec.part3[a][b] - ident[a][b]).abs() < 1e-11);
                assert!(dec.part_minus1[a][b].abs() < 1e-11);
            }
        }
        for s in 0..3 {
            let i_s = frame.i_matrix(s);
            let dec = casimir_project(&i_s, &frame).unwrap();
            for a in 0..hd {
                for b in 0..hd {
                    assert!(dec.part3[a][b].abs() < 1e-11);
                    assert!((dec.part_minus1[a][b] - i_s[a][b]).abs() < 1e-11);
                }
            }
        }
    }

    #[test]
    fn casimir_projection_is_idempotent_and_orthogonal() {
        let spec = ModelSpec::heisenberg(1).unwrap();
        let frame = spec.frame_at(&spec.canonical_point(), 1).unwrap();
        let hd = frame.horiz_dim();
        let mut psi = vec![vec![0.0; hd]; hd];
        let mut seed = 1.0;
        for row in psi.iter_mut() {
            for v in row.iter_mut() {
                seed = (seed * 997.0 + 13.0) % 101.0;
                *v = seed / 50.0 - 1.0;
            }
        }
        let dec = casimir_project(&psi, &frame).unwrap();
        let again3 = casimir_project(&dec.part3, &frame).unwrap();
        for a in 0..hd {
            for b in 0..hd {
                let sum = dec.part3[a][b] + dec.part_minus1[a][b];
                assert!((sum - psi[a][b]).abs() < 1e-11);
                assert!((again3.part3[a][b] - dec.part3[a][b]).abs() < 1e-11);
                assert!(again3.part_minus1[a][b].abs() < 1e-11);
            }
        }
        assert!(frobenius(&dec.part3, &dec.part_minus1).abs() < 1e-11);
        // Eigenvalue equations for the Casimir operator.
        let u3 = casimir_apply(&dec.part3, &frame);
        let um = casimir_apply(&dec.part_minus1, &frame);
        for a in 0..hd {
            for b in 0..hd {
                assert!((u3[a][b] - 3.0 * dec.part3[a][b]).abs() < 1e-11);
                assert!((um[a][b] + dec.part_minus1[a][b]).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn symmetric_3_part_is_trace_multiple_at_n1() {
        let spec = ModelSpec::heisenberg(1).unwrap();
        let frame = spec.frame_at(&spec.canonical_point(), 1).unwrap();
        let hd = frame.horiz_dim();
        let mut psi = vec![vec![0.0; hd]; hd];
        let mut seed = 3.0;
        for a in 0..hd {
            for b in a..hd {
                seed = (seed * 31.0 + 7.0) % 17.0;
                let v = seed / 8.0 - 1.0;
                psi[a][b] = v;
                psi[b][a] = v;
            }
        }
        let dec = casimir_project(&psi, &frame).unwrap();
        let trace: f64 = (0..hd).map(|a| psi[a][a]).sum();
        for a in 0..hd {
            for b in 0..hd {
                let expect = if a == b { trace / 4.0 } else { 0.0 };
                assert!(
                    (dec.part3[a][b] - expect).abs() < 1e-11,
                    "({a},{b}): {} vs {expect}",
                    dec.part3[a][b]
                );
            }
        }
    }
}
