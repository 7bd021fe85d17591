//! Fixed-seed corpus of nondegenerate point transformations: the identity
//! plus sparse random polynomial perturbations with small integer
//! coefficients.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::jetspace::JetContext;
use crate::symcore::{Polynomial, RationalExpr, Scalar};
use crate::transform::PointTransformation;

/// Draws `count` transformations, the first being the identity. Each
/// component is its coordinate plus a few random monomials of total degree
/// at most `max_degree` with coefficients in `-2..=2`; draws with an
/// identically vanishing Jacobian are rejected and redrawn.
pub fn corpus(ctx: &JetContext, count: usize, seed: u64, max_degree: u32) -> Vec<PointTransformation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    out.push(PointTransformation::identity(ctx.clone()));
    while out.len() < count {
        if let Some(t) = draw(ctx, &mut rng, max_degree) {
            out.push(t);
        }
    }
    out
}

fn draw(ctx: &JetContext, rng: &mut ChaCha8Rng, max_degree: u32) -> Option<PointTransformation> {
    let uni = ctx.universe().clone();
    let n = ctx.n();
    let monos = point_monomials(ctx, max_degree);
    let mut component = |base: RationalExpr| -> RationalExpr {
        let picks = rng.gen_range(0..=2usize);
        let mut p = base;
        for _ in 0..picks {
            let mono = &monos[rng.gen_range(0..monos.len())];
            let coeff: i64 = *[-2, -1, 1, 2].iter().nth(rng.gen_range(0..4)).unwrap();
            let term = RationalExpr::from_poly(mono.scale(&Scalar::from(num_bigint::BigInt::from(coeff))));
            p = &p + &term;
        }
        p
    };
    let x: Vec<RationalExpr> =
        (1..=n).map(|i| component(RationalExpr::var(&uni, uni.x(i)))).collect();
    let y = component(RationalExpr::var(&uni, uni.y()));
    PointTransformation::new(ctx.clone(), x, y).ok()
}

/// All monomials in the base and dependent variables of total degree
/// between one and `max_degree`.
fn point_monomials(ctx: &JetContext, max_degree: u32) -> Vec<Polynomial> {
    let uni = ctx.universe().clone();
    let n = ctx.n();
    let vars: Vec<_> = (1..=n).map(|i| uni.x(i)).chain(std::iter::once(uni.y())).collect();
    let mut out = Vec::new();
    let mut exps = vec![0u32; vars.len()];
    fn rec(
        uni: &std::sync::Arc<crate::symcore::VarUniverse>,
        vars: &[crate::symcore::Var],
        pos: usize,
        left: u32,
        exps: &mut Vec<u32>,
        out: &mut Vec<Polynomial>,
    ) {
        if pos == vars.len() {
            if exps.iter().any(|&e| e > 0) {
                let mut p = Polynomial::one(uni);
                for (v, &e) in vars.iter().zip(exps.iter()) {
                    p = &p * &Polynomial::var_pow(uni, *v, e);
                }
                out.push(p);
            }
            return;
        }
        for e in 0..=left {
            exps[pos] = e;
            rec(uni, vars, pos + 1, left - e, exps, out);
            exps[pos] = 0;
        }
    }
    rec(&uni, &vars, 0, max_degree, &mut exps, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_deterministic_and_nondegenerate() {
        let ctx = JetContext::new(2).unwrap();
        let a = corpus(&ctx, 8, 1, 2);
        let b = corpus(&ctx, 8, 1, 2);
        assert_eq!(a.len(), 8);
        for (s, t) in a.iter().zip(&b) {
            assert_eq!(s, t);
            assert!(!s.jacobian().is_zero());
        }
        assert_eq!(a[0], PointTransformation::identity(ctx));
    }

    #[test]
    fn different_seeds_differ() {
        let ctx = JetContext::new(2).unwrap();
        let a = corpus(&ctx, 6, 1, 2);
        let b = corpus(&ctx, 6, 2, 2);
        assert_ne!(a, b);
    }
}
