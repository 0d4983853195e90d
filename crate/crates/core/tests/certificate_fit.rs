use qcgeom::conformal::fit_certificate;
use qcgeom::quat::Quaternion;

#[test]
fn fit_recovers_known_rotor() {
    // Build M_s[i] as the components of lambda^bar v_i lambda by direct
    // quaternion arithmetic, then check the fit returns lambda.
    let lambda = {
        let q = Quaternion::new(0.8, 0.1, -0.3, 0.5);
        let n = q.norm().unwrap();
        q.scale(1.0 / n)
    };
    let m = 7;
    let mut source: [Vec<f64>; 3] = [vec![0.0; m], vec![0.0; m], vec![0.0; m]];
    let mut seed = 0.37_f64;
    for s in 0..3 {
        for i in 0..m {
            seed = (seed * 97.0 + 13.0) % 11.0;
            source[s][i] = seed / 5.5 - 1.0;
        }
    }
    let factor = 2.3;
    let mut pulled: [Vec<f64>; 3] = [vec![0.0; m], vec![0.0; m], vec![0.0; m]];
    for i in 0..m {
        let v = Quaternion::new(0.0, source[0][i], source[1][i], source[2][i]);
        let w = lambda.conj().mul(&v).mul(&lambda).scale(factor);
        pulled[0][i] = w.im[0];
        pulled[1][i] = w.im[1];
        pulled[2][i] = w.im[2];
    }
    let cert = fit_certificate(&pulled, &source).unwrap();
    println!("expected lambda {:?}", lambda.components());
    println!("fitted   rotor  {:?}", cert.rotor.components());
    println!("factor {} vs {}", cert.factor, factor);
    assert!(cert.residual < 1e-12);
    for (a, b) in cert.rotor.components().iter().zip(lambda.components()) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}
