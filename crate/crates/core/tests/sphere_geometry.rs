//! Closed-form cross-checks of the assembled sphere geometry.

use qcgeom::jet::jet_seed;
use qcgeom::models::{quat_at, ModelSpec, Normalization};
use qcgeom::quat::Quaternion;

/// The assembled ambient metric must agree with the closed-form product
/// metric (round pullback plus radial square) on every trustworthy jet
/// coefficient.
#[test]
fn h_matrix_matches_cylinder_closed_form() {
    let spec = ModelSpec::sphere(2, Normalization::Sasakian).unwrap();
    let x0 = spec.canonical_point();
    let m = spec.ambient_dim();
    let frame = spec.frame_at(&x0, 3).unwrap();
    let h = frame.h_matrix().unwrap();
    let xs = jet_seed(&x0, 3).unwrap();
    let mut r2 = xs[0].lift(0.0);
    for x in &xs {
        r2.mul_acc(x, x);
    }
    let r2inv = r2.recip().unwrap();
    let mut worst = 0.0_f64;
    for i in 0..m {
        for j in 0..m {
            let xx = xs[i].mul(&xs[j]).mul(&r2inv);
            let delta = if i == j { 1.0 } else { 0.0 };
            let mut expect = xs[0].lift(delta).sub(&xx).mul(&r2inv);
            expect.add_assign(&xx);
            let got = h.at(i, j);
            let upto = got.shape.len_up_to[got.valid];
            for t in 0..upto {
                worst = worst.max((got.c[t] - expect.c[t]).abs());
            }
        }
    }
    assert!(worst < 1e-10, "worst valid-coefficient deviation {worst}");
}

/// The solved Reeb fields agree with left quaternion multiplication as jets.
#[test]
fn reeb_jets_match_quaternion_action() {
    let spec = ModelSpec::sphere(1, Normalization::Sasakian).unwrap();
    let x0 = spec.canonical_point();
    let frame = spec.frame_at(&x0, 3).unwrap();
    let xs = jet_seed(&x0, 3).unwrap();
    let zero = xs[0].lift(0.0);
    let units = [
        Quaternion::from_f64(&zero, [0.0, 1.0, 0.0, 0.0]),
        Quaternion::from_f64(&zero, [0.0, 0.0, 1.0, 0.0]),
        Quaternion::from_f64(&zero, [0.0, 0.0, 0.0, 1.0]),
    ];
    let mut worst = 0.0_f64;
    for s in 0..3 {
        for l in 0..2 {
            let xl = quat_at(&xs, l);
            let expect = units[s].mul(&xl).components();
            for c in 0..4 {
                let got = &frame.xi[s][4 * l + c];
                let upto = got.shape.len_up_to[got.valid];
                for t in 0..upto {
                    worst = worst.max((got.c[t] - expect[c].c[t]).abs());
                }
            }
        }
    }
    assert!(worst < 1e-10, "worst reeb jet deviation {worst}");
}
