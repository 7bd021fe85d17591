//! Exact multivariate rational functions in canonical form.
//!
//! Canonical form: the denominator is a nonzero polynomial with coprime
//! integer coefficients and positive leading coefficient, the numerator and
//! denominator share no polynomial factor, and zero is `0/1`. Two values
//! are mathematically equal exactly when their components are equal, so
//! structural equality is semantic equality.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::Arc;

use num_traits::{One, Zero};

use crate::symcore::gcd::gcd;
use crate::symcore::poly::{Polynomial, Scalar};
use crate::symcore::vars::{same_universe, Var, VarUniverse};
use crate::symcore::SymError;

#[derive(Clone, PartialEq, Eq)]
pub struct RationalExpr {
    num: Polynomial,
    den: Polynomial,
}

impl RationalExpr {
    pub fn zero(uni: &Arc<VarUniverse>) -> Self {
        RationalExpr { num: Polynomial::zero(uni), den: Polynomial::one(uni) }
    }

    pub fn one(uni: &Arc<VarUniverse>) -> Self {
        Self::from_poly(Polynomial::one(uni))
    }

    pub fn constant(uni: &Arc<VarUniverse>, c: Scalar) -> Self {
        Self::from_poly(Polynomial::constant(uni, c))
    }

    pub fn int(uni: &Arc<VarUniverse>, c: i64) -> Self {
        Self::constant(uni, crate::symcore::poly::scalar_int(c))
    }

    pub fn rational(uni: &Arc<VarUniverse>, num: i64, den: i64) -> Self {
        Self::constant(uni, crate::symcore::poly::scalar(num, den))
    }

    pub fn var(uni: &Arc<VarUniverse>, v: Var) -> Self {
        Self::from_poly(Polynomial::var(uni, v))
    }

    pub fn from_poly(num: Polynomial) -> Self {
        let den = Polynomial::one(num.universe());
        RationalExpr { num, den }
    }

    /// Builds `num / den`, reducing to canonical form.
    pub fn new(num: Polynomial, den: Polynomial) -> Result<Self, SymError> {
        if den.is_zero() {
            return Err(SymError::DivisionByZeroExpr);
        }
        Ok(Self::normalized(num, den))
    }

    fn normalized(num: Polynomial, den: Polynomial) -> Self {
        debug_assert!(!den.is_zero());
        if num.is_zero() {
            return Self::zero(num.universe());
        }
        let (mut num, mut den) = (num, den);
        if den.as_constant().is_none() {
            let g = gcd(&num, &den);
            if !g.is_one() {
                num = num.div_exact(&g).expect("gcd divides numerator");
                den = den.div_exact(&g).expect("gcd divides denominator");
            }
        }
        // Scale so the denominator is integer-primitive with positive lead.
        let (den_prim, c) = den.primitive_part();
        let num = num.scale(&(Scalar::one() / c));
        RationalExpr { num, den: den_prim }
    }

    pub fn universe(&self) -> &Arc<VarUniverse> {
        self.num.universe()
    }

    pub fn numerator(&self) -> &Polynomial {
        &self.num
    }

    pub fn denominator(&self) -> &Polynomial {
        &self.den
    }

    /// Authoritative zero test: the canonical numerator is zero.
    pub fn is_zero(&self) -> bool {
        self.num.is_zero()
    }

    pub fn is_one(&self) -> bool {
        self.num.is_one() && self.den.is_one()
    }

    pub fn as_constant(&self) -> Option<Scalar> {
        if !self.den.is_one() {
            return None;
        }
        self.num.as_constant()
    }

    pub fn is_polynomial(&self) -> bool {
        self.den.is_one()
    }

    pub fn mentions(&self, v: Var) -> bool {
        self.num.mentions(v) || self.den.mentions(v)
    }

    pub fn mentions_any(&self, vars: impl Iterator<Item = Var> + Clone) -> bool {
        self.num.mentions_any(vars.clone()) || self.den.mentions_any(vars)
    }

    pub fn recip(&self) -> Result<Self, SymError> {
        if self.is_zero() {
            return Err(SymError::DivisionByZeroExpr);
        }
        Ok(Self::normalized(self.den.clone(), self.num.clone()))
    }

    pub fn try_div(&self, rhs: &Self) -> Result<Self, SymError> {
        if rhs.is_zero() {
            return Err(SymError::DivisionByZeroExpr);
        }
        Ok(Self::normalized(&self.num * &rhs.den, &self.den * &rhs.num))
    }

    pub fn pow(&self, e: u32) -> Self {
        // Components stay canonical under powering: coprimality and the
        // primitive positive denominator are preserved.
        RationalExpr { num: self.num.pow(e), den: self.den.pow(e) }
    }

    pub fn scale(&self, c: &Scalar) -> Self {
        if c.is_zero() {
            return Self::zero(self.universe());
        }
        Self::normalized(self.num.scale(c), self.den.clone())
    }

    /// Partial derivative by the quotient rule, canonicalized.
    pub fn derivative(&self, v: Var) -> Self {
        assert!(v.index() < self.universe().width(), "variable outside universe");
        if !self.den.mentions(v) {
            // Denominator constant in v: differentiate the numerator only.
            return Self::normalized(self.num.derivative(v), self.den.clone());
        }
        let dn = self.num.derivative(v);
        let dd = self.den.derivative(v);
        let num = &(&dn * &self.den) - &(&self.num * &dd);
        let den = &self.den * &self.den;
        Self::normalized(num, den)
    }

    /// Simultaneous substitution of variables by rational expressions.
    pub fn substitute(&self, bindings: &BTreeMap<Var, RationalExpr>) -> Result<Self, SymError> {
        if bindings.is_empty() {
            return Ok(self.clone());
        }
        let num = subst_poly(&self.num, bindings);
        let den = subst_poly(&self.den, bindings);
        if den.is_zero() {
            return Err(SymError::SubstitutionSingularity);
        }
        num.try_div(&den)
    }

    /// View in an extension of this expression's universe.
    pub fn embed(&self, target: &Arc<VarUniverse>) -> Self {
        RationalExpr { num: self.num.embed(target), den: self.den.embed(target) }
    }

    /// View in a prefix universe; fails when a dropped variable occurs.
    pub fn restrict(&self, target: &Arc<VarUniverse>) -> Option<Self> {
        Some(RationalExpr { num: self.num.restrict(target)?, den: self.den.restrict(target)? })
    }

    /// Sum with a single final reduction; use for long alternating sums.
    pub fn sum<'a>(uni: &Arc<VarUniverse>, terms: impl IntoIterator<Item = &'a RationalExpr>) -> Self {
        let mut acc_num = Polynomial::zero(uni);
        let mut acc_den = Polynomial::one(uni);
        for t in terms {
            assert!(same_universe(uni, t.universe()), "universe mismatch");
            if t.is_zero() {
                continue;
            }
            if acc_den == t.den {
                acc_num = &acc_num + &t.num;
                continue;
            }
            let g = gcd(&acc_den, &t.den);
            let da = t.den.div_exact(&g).expect("gcd divides");
            let db = acc_den.div_exact(&g).expect("gcd divides");
            acc_num = &(&acc_num * &da) + &(&t.num * &db);
            acc_den = &acc_den * &da;
        }
        Self::normalized(acc_num, acc_den)
    }

    /// `sum(a_i * b_i)` with a single final reduction.
    pub fn dot<'a>(
        uni: &Arc<VarUniverse>,
        pairs: impl IntoIterator<Item = (&'a RationalExpr, &'a RationalExpr)>,
    ) -> Self {
        let products: Vec<RationalExpr> = pairs
            .into_iter()
            .map(|(a, b)| {
                assert!(same_universe(uni, a.universe()) && same_universe(uni, b.universe()));
                RationalExpr { num: &a.num * &b.num, den: &a.den * &b.den }
            })
            .collect();
        Self::sum_owned(uni, products)
    }

    fn sum_owned(uni: &Arc<VarUniverse>, terms: Vec<RationalExpr>) -> Self {
        let mut acc_num = Polynomial::zero(uni);
        let mut acc_den = Polynomial::one(uni);
        for t in terms {
            if t.num.is_zero() {
                continue;
            }
            if acc_den == t.den {
                acc_num = &acc_num + &t.num;
                continue;
            }
            let g = gcd(&acc_den, &t.den);
            let da = t.den.div_exact(&g).expect("gcd divides");
            let db = acc_den.div_exact(&g).expect("gcd divides");
            acc_num = &(&acc_num * &da) + &(&t.num * &db);
            acc_den = &acc_den * &da;
        }
        Self::normalized(acc_num, acc_den)
    }
}

/// Substitutes into a polynomial, producing an unreduced fraction pair
/// folded over a common denominator.
fn subst_poly(p: &Polynomial, bindings: &BTreeMap<Var, RationalExpr>) -> RationalExpr {
    let uni = p.universe();
    for (v, img) in bindings {
        assert!(v.index() < uni.width(), "binding variable outside universe");
        assert!(same_universe(uni, img.universe()), "binding universe mismatch");
    }
    // Power cache per bound variable.
    let mut pow_cache: BTreeMap<(Var, u32), RationalExpr> = BTreeMap::new();
    let mut pow = |v: Var, e: u32, img: &RationalExpr| -> RationalExpr {
        pow_cache.entry((v, e)).or_insert_with(|| img.pow(e)).clone()
    };
    let mut terms: Vec<RationalExpr> = Vec::with_capacity(p.num_terms());
    for (m, c) in p.terms() {
        let mut kept = Polynomial::constant(uni, c.clone());
        let mut frac = RationalExpr::one(uni);
        for v in uni.vars() {
            let e = m.exp(v);
            if e == 0 {
                continue;
            }
            match bindings.get(&v) {
                Some(img) => {
                    let q = pow(v, e, img);
                    frac = RationalExpr { num: &frac.num * &q.num, den: &frac.den * &q.den };
                }
                None => kept = &kept * &Polynomial::var_pow(uni, v, e),
            }
        }
        terms.push(RationalExpr { num: &kept * &frac.num, den: frac.den });
    }
    RationalExpr::sum_owned(uni, terms)
}

impl Add for &RationalExpr {
    type Output = RationalExpr;
    fn add(self, rhs: &RationalExpr) -> RationalExpr {
        assert!(same_universe(self.universe(), rhs.universe()), "universe mismatch");
        if self.is_zero() {
            return rhs.clone();
        }
        if rhs.is_zero() {
            return self.clone();
        }
        if self.den == rhs.den {
            return RationalExpr::normalized(&self.num + &rhs.num, self.den.clone());
        }
        let g = gcd(&self.den, &rhs.den);
        let da = rhs.den.div_exact(&g).expect("gcd divides");
        let db = self.den.div_exact(&g).expect("gcd divides");
        let num = &(&self.num * &da) + &(&rhs.num * &db);
        let den = &self.den * &da;
        RationalExpr::normalized(num, den)
    }
}

impl Sub for &RationalExpr {
    type Output = RationalExpr;
    fn sub(self, rhs: &RationalExpr) -> RationalExpr {
        self + &-rhs
    }
}

impl Neg for &RationalExpr {
    type Output = RationalExpr;
    fn neg(self) -> RationalExpr {
        RationalExpr { num: -&self.num, den: self.den.clone() }
    }
}

impl Mul for &RationalExpr {
    type Output = RationalExpr;
    fn mul(self, rhs: &RationalExpr) -> RationalExpr {
        assert!(same_universe(self.universe(), rhs.universe()), "universe mismatch");
        if self.is_zero() || rhs.is_zero() {
            return RationalExpr::zero(self.universe());
        }
        // Cross-reduce before multiplying to keep products small.
        let g1 = gcd(&self.num, &rhs.den);
        let g2 = gcd(&rhs.num, &self.den);
        let a = self.num.div_exact(&g1).expect("gcd divides");
        let d = rhs.den.div_exact(&g1).expect("gcd divides");
        let c = rhs.num.div_exact(&g2).expect("gcd divides");
        let b = self.den.div_exact(&g2).expect("gcd divides");
        RationalExpr::normalized(&a * &c, &b * &d)
    }
}

impl Div for &RationalExpr {
    type Output = RationalExpr;
    fn div(self, rhs: &RationalExpr) -> RationalExpr {
        self.try_div(rhs).expect("division by zero expression")
    }
}

impl fmt::Debug for RationalExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for RationalExpr {
    /// Renders in the CLI expression grammar; parses back to an equal value.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den.is_one() {
            return write!(f, "{}", self.num);
        }
        write!(f, "({})/({})", self.num, self.den)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symcore::poly::scalar_int;

    fn u2() -> Arc<VarUniverse> {
        VarUniverse::new(2)
    }

    #[test]
    fn additive_inverse_is_canonical_zero() {
        let u = u2();
        let x = RationalExpr::var(&u, u.x(1));
        let z = &x - &x;
        assert!(z.is_zero());
        assert_eq!(z, RationalExpr::zero(&u));
    }

    #[test]
    fn multiplicative_inverse_cancels() {
        let u = u2();
        let one_plus_x = &RationalExpr::one(&u) + &RationalExpr::var(&u, u.x(1));
        let inv = one_plus_x.recip().unwrap();
        assert!((&inv * &one_plus_x).is_one());
    }

    #[test]
    fn division_reduces_like_long_division() {
        let u = u2();
        let x = RationalExpr::var(&u, u.x(1));
        let one = RationalExpr::one(&u);
        let p = &(&x * &x) - &one;
        let d = &x - &one;
        assert_eq!(&p / &d, &x + &one);
    }

    #[test]
    fn division_by_canonical_zero_is_an_error() {
        let u = u2();
        let x = RationalExpr::var(&u, u.x(1));
        let z = &x - &x;
        assert!(matches!(x.try_div(&z), Err(SymError::DivisionByZeroExpr)));
    }

    #[test]
    fn quotient_rule() {
        let u = u2();
        let x = RationalExpr::var(&u, u.x(1));
        let one = RationalExpr::one(&u);
        let f = one.try_div(&(&one + &x)).unwrap();
        let df = f.derivative(u.x(1));
        let expected = (&-&one).try_div(&(&(&one + &x) * &(&one + &x))).unwrap();
        assert_eq!(df, expected);
    }

    #[test]
    fn substitution_detects_singularities() {
        let u = u2();
        let x = RationalExpr::var(&u, u.x(1));
        let y = RationalExpr::var(&u, u.y());
        let f = RationalExpr::one(&u).try_div(&(&y - &x)).unwrap();
        let mut b = BTreeMap::new();
        b.insert(u.y(), x.clone());
        assert!(matches!(f.substitute(&b), Err(SymError::SubstitutionSingularity)));
    }

    #[test]
    fn empty_substitution_is_identity() {
        let u = u2();
        let e = &RationalExpr::var(&u, u.x(1)) + &RationalExpr::var(&u, u.y());
        assert_eq!(e.substitute(&BTreeMap::new()).unwrap(), e);
    }

    #[test]
    fn denominator_sign_is_normalized() {
        let u = u2();
        let x = Polynomial::var(&u, u.x(1));
        let num = Polynomial::one(&u);
        let den = x.scale(&scalar_int(-2));
        let f = RationalExpr::new(num, den).unwrap();
        assert_eq!(f.denominator(), &x);
        assert_eq!(f.numerator(), &Polynomial::constant(&u, crate::symcore::poly::scalar(-1, 2)));
    }
}
