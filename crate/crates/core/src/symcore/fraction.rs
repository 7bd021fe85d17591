//! Common-denominator evaluation frames.
//!
//! Long residual combinations (total derivatives, quadratic contractions,
//! family sums) are computed as polynomial numerators over a fixed power of
//! one shared denominator and normalized exactly once at the end. This
//! keeps every intermediate step gcd-free, which matters because most
//! residuals collapse to zero and would otherwise pay repeatedly for
//! discovering trivial gcds of large polynomials.

use std::sync::Arc;

use crate::symcore::gcd::lcm;
use crate::symcore::poly::Polynomial;
use crate::symcore::ratexpr::RationalExpr;
use crate::symcore::vars::{Var, VarUniverse};

/// A shared denominator for a family of expressions, with helpers to view
/// each expression as a numerator over the denominator or its square.
pub struct CommonDen {
    uni: Arc<VarUniverse>,
    den: Polynomial,
    den_sq: Polynomial,
}

impl CommonDen {
    pub fn of<'a>(
        uni: &Arc<VarUniverse>,
        exprs: impl IntoIterator<Item = &'a RationalExpr>,
    ) -> CommonDen {
        let mut den = Polynomial::one(uni);
        for e in exprs {
            if e.denominator().is_one() {
                continue;
            }
            den = lcm(&den, e.denominator());
        }
        let den_sq = &den * &den;
        CommonDen { uni: Arc::clone(uni), den, den_sq }
    }

    pub fn universe(&self) -> &Arc<VarUniverse> {
        &self.uni
    }

    pub fn den(&self) -> &Polynomial {
        &self.den
    }

    /// Numerator of `e` over the shared denominator.
    pub fn num(&self, e: &RationalExpr) -> Polynomial {
        let f = self.den.div_exact(e.denominator()).expect("denominator divides the frame");
        e.numerator() * &f
    }

    /// Numerator over the squared denominator of the derivative of a
    /// first-power numerator: `d(n / D) = (n' D - n D') / D^2`.
    pub fn deriv_num(&self, num: &Polynomial, v: Var) -> Polynomial {
        let dd = self.den.derivative(v);
        if dd.is_zero() {
            return &num.derivative(v) * &self.den;
        }
        &(&num.derivative(v) * &self.den) - &(num * &dd)
    }

    /// Lifts a first-power numerator to the squared-denominator view.
    pub fn promote(&self, num: &Polynomial) -> Polynomial {
        num * &self.den
    }

    /// Final single normalization of a first-power numerator.
    pub fn finish(&self, num: Polynomial) -> RationalExpr {
        RationalExpr::new(num, self.den.clone()).expect("denominator nonzero")
    }

    /// Final single normalization of a squared-power numerator.
    pub fn finish_sq(&self, num: Polynomial) -> RationalExpr {
        RationalExpr::new(num, self.den_sq.clone()).expect("denominator nonzero")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symcore::vars::VarUniverse;

    #[test]
    fn frame_matches_generic_arithmetic() {
        let u = VarUniverse::new(2);
        let x = RationalExpr::var(&u, u.x(1));
        let y = RationalExpr::var(&u, u.y());
        let one = RationalExpr::one(&u);
        let f = (&y + &one).try_div(&(&x + &one)).unwrap();
        let g = x.clone();
        let frame = CommonDen::of(&u, [&f, &g]);
        // f * g + f via the frame, squared view.
        let nf = frame.num(&f);
        let ng = frame.num(&g);
        let combo = &(&nf * &ng) + &frame.promote(&nf);
        let expected = &(&f * &g) + &f;
        assert_eq!(frame.finish_sq(combo), expected);
        // Derivative via the frame.
        let d = frame.finish_sq(frame.deriv_num(&nf, u.x(1)));
        assert_eq!(d, f.derivative(u.x(1)));
    }
}
