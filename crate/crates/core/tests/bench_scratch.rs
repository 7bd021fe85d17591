use std::time::Instant;
use flatpde_core::corpus::corpus;
use flatpde_core::jetspace::{integrability_residuals, JetContext};
use flatpde_core::cubic::*;
use flatpde_core::transform::*;
use flatpde_core::auxiliary::*;

#[test]
#[ignore]
fn timing() {
    for n in [2usize, 3] {
        let ctx = JetContext::new(n).unwrap();
        let t0 = Instant::now();
        let ts = corpus(&ctx, 20, 1, 2);
        println!("n={n} corpus: {:?}", t0.elapsed());
        let mut stage = |name: &str, f: &mut dyn FnMut()| {
            let t = Instant::now();
            f();
            println!("n={n} {name}: {:?}", t.elapsed());
        };
        let mut sqs = Vec::new();
        stage("squares", &mut || { sqs = ts.iter().map(squares).collect(); });
        let mut syss = Vec::new();
        stage("synthesize", &mut || { syss = sqs.iter().map(synthesize_from_squares).collect(); });
        stage("integrability", &mut || {
            for s in &syss { assert!(integrability_residuals(s).all_zero()); }
        });
        let mut cs = Vec::new();
        stage("extract", &mut || {
            cs = syss.iter().map(|s| extract_cubic(s).unwrap()).collect();
            for (c, sq) in cs.iter().zip(&sqs) { assert_eq!(c, &ghlm_from_square_table(sq)); }
        });
        stage("flatness", &mut || {
            for c in &cs { assert!(flatness_residuals(c).all_zero()); }
        });
        stage("derived", &mut || {
            for c in &cs { assert!(derived_flatness_residuals(c).all_zero()); }
        });
        stage("chern", &mut || {
            for s in &syss { assert!(chern_tensor_at_identity(s).is_zero()); }
        });
        stage("pullback", &mut || {
            for (t, s) in ts.iter().zip(&syss) {
                let r = pullback_residual(t, s).unwrap();
                assert!(r.iter().flatten().all(|e| e.is_zero()));
            }
        });
        stage("cross_diff", &mut || {
            for sq in &sqs {
                let p = pi_from_squares(sq);
                assert!(cross_diff_residuals(&p).values().all(|e| e.is_zero()));
            }
        });
        stage("quasi+theta", &mut || {
            for sq in &sqs {
                let c = ghlm_from_square_table(sq);
                let th = theta_from_squares(sq);
                assert_eq!(quasi_invert(&c, &th), pi_from_squares(sq));
                assert!(theta_system_residuals(&c, &th).all_zero());
            }
        });
        stage("compat", &mut || {
            for sq in &sqs {
                let c = ghlm_from_square_table(sq);
                let r = compat_residuals(&c).unwrap();
                assert!(r.theta_clean && r.all_zero());
            }
        });
    }
}
