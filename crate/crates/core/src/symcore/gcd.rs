//! Multivariate polynomial gcd by content/primitive-part recursion.
//!
//! The public entry point works over the rationals, where the gcd is only
//! defined up to a nonzero rational unit; the representative returned has
//! coprime integer coefficients and a positive leading coefficient. The
//! recursion views a polynomial as univariate in a chosen main variable with
//! polynomial coefficients, splits off the content, and runs a primitive
//! pseudo-remainder sequence on the primitive parts.

use std::collections::BTreeMap;

use crate::symcore::poly::{Mono, Polynomial};
use crate::symcore::vars::Var;

/// Gcd over the rational function field's coefficient ring: the returned
/// polynomial is integer-primitive with positive leading coefficient, and
/// `gcd(p, 0) = primitive(p)`, `gcd(0, 0) = 0`.
pub fn gcd(a: &Polynomial, b: &Polynomial) -> Polynomial {
    if a.is_zero() {
        return b.primitive_part().0;
    }
    if b.is_zero() {
        return a.primitive_part().0;
    }
    let pa = a.primitive_part().0;
    let pb = b.primitive_part().0;
    if pa.as_constant().is_some() || pb.as_constant().is_some() {
        return Polynomial::one(a.universe());
    }
    gcd_primitive(&pa, &pb)
}

/// True when `gcd(a, b)` is a constant. Slightly cheaper than computing the
/// gcd and inspecting it, and reads better at call sites.
pub fn coprime(a: &Polynomial, b: &Polynomial) -> bool {
    gcd(a, b).is_one()
}

fn gcd_primitive(a: &Polynomial, b: &Polynomial) -> Polynomial {
    // Variables that can possibly occur in a common divisor.
    let uni = a.universe();
    let common: Vec<Var> = uni.vars().filter(|&v| a.mentions(v) && b.mentions(v)).collect();
    if common.is_empty() {
        return Polynomial::one(uni);
    }
    // Frequent case in practice: one operand divides the other (powers of a
    // shared denominator base). One sparse division attempt is cheap.
    if a.total_degree() <= b.total_degree() {
        if b.div_exact(a).is_some() {
            return a.clone();
        }
    } else if a.div_exact(b).is_some() {
        return b.clone();
    }
    let v = *common
        .iter()
        .min_by_key(|&&v| (a.degree_in(v).min(b.degree_in(v)), v))
        .unwrap();

    let (cont_a, prim_a) = content_in(a, v);
    let (cont_b, prim_b) = content_in(b, v);
    let outer = gcd(&cont_a, &cont_b);

    let inner = prs_gcd(&prim_a, &prim_b, v);
    let g = &outer * &inner;
    g.primitive_part().0
}

/// Primitive pseudo-remainder sequence on polynomials that are primitive
/// with respect to `v`; returns their gcd (primitive in `v`).
fn prs_gcd(a: &Polynomial, b: &Polynomial, v: Var) -> Polynomial {
    let (mut f, mut g) = if a.degree_in(v) >= b.degree_in(v) {
        (a.clone(), b.clone())
    } else {
        (b.clone(), a.clone())
    };
    loop {
        let r = pseudo_rem(&f, &g, v);
        if r.is_zero() {
            return g.primitive_part().0;
        }
        if r.degree_in(v) == 0 {
            // Common factors free of v would have shown up in the contents.
            return Polynomial::one(a.universe());
        }
        f = g;
        g = primitive_in(&r, v);
    }
}

/// Pseudo-remainder of `f` by `g` in the variable `v` (contents discarded
/// by the caller, so the exact leading-coefficient power is irrelevant).
fn pseudo_rem(f: &Polynomial, g: &Polynomial, v: Var) -> Polynomial {
    let dg = g.degree_in(v);
    let lc_g = coeff_in(g, v, dg);
    let mut r = f.clone();
    while !r.is_zero() {
        let dr = r.degree_in(v);
        if dr < dg {
            break;
        }
        let lc_r = coeff_in(&r, v, dr);
        let shift = Polynomial::var_pow(f.universe(), v, dr - dg);
        // r <- lc_g * r - lc_r * v^(dr-dg) * g
        r = &(&lc_g * &r) - &(&(&lc_r * &shift) * g);
    }
    r
}

/// Coefficient of `v^e` in `f`, as a polynomial in the remaining variables.
fn coeff_in(f: &Polynomial, v: Var, e: u32) -> Polynomial {
    let uni = f.universe();
    let mut out = Polynomial::zero(uni);
    for (m, c) in f.terms() {
        if m.exp(v) == e {
            let mut exps = m.exps().to_vec();
            exps[v.index()] = 0;
            out.add_term(mono_from(exps), c.clone());
        }
    }
    out
}

fn mono_from(exps: Vec<u32>) -> Mono {
    Mono::from_boxed(exps.into_boxed_slice())
}

/// Content and primitive part with respect to the main variable `v`:
/// the content is the gcd of the `v`-coefficients (a polynomial in the
/// other variables), and `f = content * primitive`.
pub fn content_in(f: &Polynomial, v: Var) -> (Polynomial, Polynomial) {
    let uni = f.universe();
    let mut by_deg: BTreeMap<u32, Polynomial> = BTreeMap::new();
    for (m, c) in f.terms() {
        let e = m.exp(v);
        let mut exps = m.exps().to_vec();
        exps[v.index()] = 0;
        by_deg
            .entry(e)
            .or_insert_with(|| Polynomial::zero(uni))
            .add_term(mono_from(exps), c.clone());
    }
    let mut cont = Polynomial::zero(uni);
    for p in by_deg.values() {
        cont = gcd(&cont, p);
        if cont.is_one() {
            break;
        }
    }
    if cont.is_one() {
        return (cont, f.clone());
    }
    let prim = f.div_exact(&cont).expect("content divides");
    (cont, prim)
}

fn primitive_in(f: &Polynomial, v: Var) -> Polynomial {
    content_in(f, v).1
}

/// Least common multiple, normalized like [`gcd`]. `lcm(p, 0) = 0`.
pub fn lcm(a: &Polynomial, b: &Polynomial) -> Polynomial {
    if a.is_zero() || b.is_zero() {
        return Polynomial::zero(a.universe());
    }
    let g = gcd(a, b);
    let q = a.div_exact(&g).expect("gcd divides");
    (&q * b).primitive_part().0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symcore::poly::scalar_int;
    use crate::symcore::vars::VarUniverse;

    #[test]
    fn univariate_common_factor() {
        let u = VarUniverse::new(2);
        let x = Polynomial::var(&u, u.x(1));
        let one = Polynomial::one(&u);
        let p = &(&x * &x) - &one; // (x-1)(x+1)
        let q = &(&x * &x) - &(&x + &x); // hmm: x^2 - 2x = x(x-2)
        assert_eq!(gcd(&p, &(&x - &one)), &x - &one);
        assert!(coprime(&q, &(&x + &one)));
    }

    #[test]
    fn multivariate_content_is_found() {
        let u = VarUniverse::new(2);
        let x = Polynomial::var(&u, u.x(1));
        let y = Polynomial::var(&u, u.y());
        let f = &y * &(&x + &y); // y(x+y)
        let g = &(&y * &y) * &(&x - &y); // y^2 (x-y)
        assert_eq!(gcd(&f, &g), y);
    }

    #[test]
    fn shared_multivariate_factor() {
        let u = VarUniverse::new(2);
        let x1 = Polynomial::var(&u, u.x(1));
        let x2 = Polynomial::var(&u, u.x(2));
        let y = Polynomial::var(&u, u.y());
        let d = &(&x1 * &x2) + &(&y * &y); // irreducible-ish shared factor
        let f = &d * &(&x1 + &y);
        let g = &d * &(&x2 - &y.scale(&scalar_int(3)));
        assert_eq!(gcd(&f, &g), d.primitive_part().0);
    }

    #[test]
    fn rational_coefficients_are_normalized_away() {
        let u = VarUniverse::new(2);
        let x = Polynomial::var(&u, u.x(1));
        let half_x = x.scale(&crate::symcore::poly::scalar(1, 2));
        assert_eq!(gcd(&half_x, &x), x);
    }
}
