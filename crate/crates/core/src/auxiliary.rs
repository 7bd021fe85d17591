//! The auxiliary-system machinery: the Pi table and its integrability
//! relations, the split into six index families, the principal unknowns and
//! the quasi-inversion of the square-to-tables map, the gradient system for
//! the principal unknowns, and its compatibility residuals with the
//! principal unknowns eliminated.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::cubic::CubicForm;
use crate::jetspace::JetContext;
use crate::symcore::{scalar, scalar_int, Polynomial, RationalExpr, Var, VarUniverse};
use crate::transform::SquareTable;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AuxError {
    #[error("principal unknowns failed to cancel from a compatibility residual")]
    ThetaNotEliminated,
}

/// Auxiliary unknowns: one entry per `(j1 <= j2, k1)` with all indices in
/// `1..=n+1` and the dependent variable as the top slot; symmetric in the
/// lower pair by storage.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PiTable {
    ctx: JetContext,
    entries: Vec<RationalExpr>,
}

impl PiTable {
    pub fn from_fn(ctx: JetContext, f: impl Fn(usize, usize, usize) -> RationalExpr) -> Self {
        let n = ctx.n();
        let mut entries = Vec::with_capacity(SquareTable::entry_count(n));
        for (j1, j2) in ctx.pairs_ext() {
            for k1 in 1..=n + 1 {
                entries.push(f(j1, j2, k1));
            }
        }
        PiTable { ctx, entries }
    }

    pub fn ctx(&self) -> &JetContext {
        &self.ctx
    }

    pub fn n(&self) -> usize {
        self.ctx.n()
    }

    /// Entry `(j1, j2, k1)`, mirrored in the lower pair.
    pub fn get(&self, j1: usize, j2: usize, k1: usize) -> &RationalExpr {
        let n = self.n();
        debug_assert!((1..=n + 1).contains(&k1));
        &self.entries[self.ctx.pair_index_ext(j1, j2) * (n + 1) + (k1 - 1)]
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize, usize), &RationalExpr)> {
        let n = self.n();
        self.ctx
            .pairs_ext()
            .flat_map(move |(j1, j2)| (1..=n + 1).map(move |k1| (j1, j2, k1)))
            .zip(self.entries.iter())
    }
}

/// Adopts the square functions as the auxiliary unknowns.
pub fn pi_from_squares(sq: &SquareTable) -> PiTable {
    PiTable::from_fn(sq.ctx().clone(), |j1, j2, k1| sq.get(j1, j2, k1).clone())
}

/// Numerators of a Pi table over a shared denominator frame.
struct PiFrame {
    frame: crate::symcore::CommonDen,
    nums: Vec<Polynomial>,
    stride: usize,
}

impl PiFrame {
    fn new(p: &PiTable) -> Self {
        let uni = p.ctx().universe().clone();
        let frame = crate::symcore::CommonDen::of(&uni, p.iter().map(|(_, e)| e));
        let nums = p.iter().map(|(_, e)| frame.num(e)).collect();
        PiFrame { frame, nums, stride: p.n() + 1 }
    }

    fn get<'a>(&'a self, p: &PiTable, j1: usize, j2: usize, k1: usize) -> &'a Polynomial {
        &self.nums[p.ctx().pair_index_ext(j1, j2) * self.stride + (k1 - 1)]
    }
}

/// Integrability residuals of the auxiliary system, for all
/// `j1, k1 in 1..=n+1` and `j2 < j3 in 1..=n+1`, with the derivative by the
/// top index meaning the derivative by the dependent variable:
/// `dPi[k1][j1][j2]/dx[j3] - dPi[k1][j1][j3]/dx[j2]
///  + sum_k2 (Pi[k2][j1][j2] Pi[k1][j3][k2] - Pi[k2][j1][j3] Pi[k1][j2][k2])`.
pub fn cross_diff_residuals(
    p: &PiTable,
) -> BTreeMap<(usize, usize, usize, usize), RationalExpr> {
    let ctx = p.ctx().clone();
    let n = ctx.n();
    let top = n + 1;
    let pf = PiFrame::new(p);
    let mut out = BTreeMap::new();
    for j1 in 1..=top {
        for j2 in 1..=top {
            for j3 in j2 + 1..=top {
                for k1 in 1..=top {
                    let mut t = pf.frame.deriv_num(pf.get(p, j1, j2, k1), ctx.base_var(j3));
                    t = &t - &pf.frame.deriv_num(pf.get(p, j1, j3, k1), ctx.base_var(j2));
                    for k2 in 1..=top {
                        t = &t + &(pf.get(p, j1, j2, k2) * pf.get(p, j3, k2, k1));
                        t = &t - &(pf.get(p, j1, j3, k2) * pf.get(p, j2, k2, k1));
                    }
                    out.insert((j1, j2, j3, k1), pf.frame.finish_sq(t));
                }
            }
        }
    }
    out
}

/// The six displayed index families of the auxiliary integrability
/// relations, oriented left side minus right side of each display. Each
/// entry re-indexes one [`cross_diff_residuals`] entry.
#[derive(Clone, Debug)]
pub struct SixFamilies {
    /// `(j1, j2 < j3)`, all base.
    pub fam1: BTreeMap<(usize, usize, usize), RationalExpr>,
    /// `(j1, j2)`, derivative pair split between base and dependent.
    pub fam2: BTreeMap<(usize, usize), RationalExpr>,
    /// `(j1)`.
    pub fam3: BTreeMap<usize, RationalExpr>,
    /// `(j1, j2 < j3, k1)`, all base.
    pub fam4: BTreeMap<(usize, usize, usize, usize), RationalExpr>,
    /// `(j1, j2, k1)`.
    pub fam5: BTreeMap<(usize, usize, usize), RationalExpr>,
    /// `(j1, k1)`.
    pub fam6: BTreeMap<(usize, usize), RationalExpr>,
}

impl SixFamilies {
    pub fn all_zero(&self) -> bool {
        self.fam1.values().all(RationalExpr::is_zero)
            && self.fam2.values().all(RationalExpr::is_zero)
            && self.fam3.values().all(RationalExpr::is_zero)
            && self.fam4.values().all(RationalExpr::is_zero)
            && self.fam5.values().all(RationalExpr::is_zero)
            && self.fam6.values().all(RationalExpr::is_zero)
    }

    pub fn negated(&self) -> SixFamilies {
        SixFamilies {
            fam1: self.fam1.iter().map(|(k, e)| (*k, -e)).collect(),
            fam2: self.fam2.iter().map(|(k, e)| (*k, -e)).collect(),
            fam3: self.fam3.iter().map(|(k, e)| (*k, -e)).collect(),
            fam4: self.fam4.iter().map(|(k, e)| (*k, -e)).collect(),
            fam5: self.fam5.iter().map(|(k, e)| (*k, -e)).collect(),
            fam6: self.fam6.iter().map(|(k, e)| (*k, -e)).collect(),
        }
    }
}

/// Splits the integrability relations along base versus dependent indices,
/// reproducing the six displayed families. The two marked products of the
/// third family cancel; [`family3_marked_products`] exposes them for the
/// symbolic cancellation check.
pub fn split_families(p: &PiTable) -> SixFamilies {
    let ctx = p.ctx().clone();
    let uni = ctx.universe().clone();
    let n = ctx.n();
    let top = n + 1;
    let x = |j: usize| ctx.base_var(j);
    let y = uni.y();
    let pf = PiFrame::new(p);
    let pg = |j1: usize, j2: usize, k1: usize| pf.get(p, j1, j2, k1);

    let mut fam1 = BTreeMap::new();
    let mut fam2 = BTreeMap::new();
    let mut fam3 = BTreeMap::new();
    let mut fam4 = BTreeMap::new();
    let mut fam5 = BTreeMap::new();
    let mut fam6 = BTreeMap::new();

    for j1 in 1..=n {
        for j2 in 1..=n {
            for j3 in j2 + 1..=n {
                // Family 1: top component, base derivative pair.
                let mut t = &pf.frame.deriv_num(pg(j1, j2, top), x(j3))
                    - &pf.frame.deriv_num(pg(j1, j3, top), x(j2));
                for k2 in 1..=n {
                    t = &t + &(pg(j1, j2, k2) * pg(j3, k2, top));
                    t = &t - &(pg(j1, j3, k2) * pg(j2, k2, top));
                }
                t = &t + &(pg(j1, j2, top) * pg(j3, top, top));
                t = &t - &(pg(j1, j3, top) * pg(j2, top, top));
                fam1.insert((j1, j2, j3), pf.frame.finish_sq(t));

                // Family 4: base component, base derivative pair.
                for k1 in 1..=n {
                    let mut t = &pf.frame.deriv_num(pg(j1, j2, k1), x(j3))
                        - &pf.frame.deriv_num(pg(j1, j3, k1), x(j2));
                    for k2 in 1..=n {
                        t = &t + &(pg(j1, j2, k2) * pg(j3, k2, k1));
                        t = &t - &(pg(j1, j3, k2) * pg(j2, k2, k1));
                    }
                    t = &t + &(pg(j1, j2, top) * pg(j3, top, k1));
                    t = &t - &(pg(j1, j3, top) * pg(j2, top, k1));
                    fam4.insert((j1, j2, j3, k1), pf.frame.finish_sq(t));
                }
            }
        }
    }

    for j1 in 1..=n {
        for j2 in 1..=n {
            // Family 2: top component, mixed derivative pair.
            let mut t = &pf.frame.deriv_num(pg(j1, j2, top), y)
                - &pf.frame.deriv_num(pg(j1, top, top), x(j2));
            for k2 in 1..=n {
                t = &t + &(pg(j1, j2, k2) * pg(top, k2, top));
                t = &t - &(pg(j1, top, k2) * pg(j2, k2, top));
            }
            t = &t + &(pg(j1, j2, top) * pg(top, top, top));
            t = &t - &(pg(j1, top, top) * pg(j2, top, top));
            fam2.insert((j1, j2), pf.frame.finish_sq(t));

            // Family 5: base component, mixed derivative pair.
            for k1 in 1..=n {
                let mut t = &pf.frame.deriv_num(pg(j1, j2, k1), y)
                    - &pf.frame.deriv_num(pg(j1, top, k1), x(j2));
                for k2 in 1..=n {
                    t = &t + &(pg(j1, j2, k2) * pg(top, k2, k1));
                    t = &t - &(pg(j1, top, k2) * pg(j2, k2, k1));
                }
                t = &t + &(pg(j1, j2, top) * pg(top, top, k1));
                t = &t - &(pg(j1, top, top) * pg(j2, top, k1));
                fam5.insert((j1, j2, k1), pf.frame.finish_sq(t));
            }
        }
    }

    for j1 in 1..=n {
        // Family 3: top component, dependent derivative pair. The two
        // marked products cancel and are written out regardless.
        let mut t = &pf.frame.deriv_num(pg(j1, top, top), y)
            - &pf.frame.deriv_num(pg(top, top, top), x(j1));
        for k2 in 1..=n {
            t = &t + &(pg(j1, top, k2) * pg(top, k2, top));
            t = &t - &(pg(top, top, k2) * pg(j1, k2, top));
        }
        t = &t + &(pg(j1, top, top) * pg(top, top, top));
        t = &t - &(pg(top, top, top) * pg(j1, top, top));
        fam3.insert(j1, pf.frame.finish_sq(t));

        // Family 6: base component, dependent derivative pair.
        for k1 in 1..=n {
            let mut t = &pf.frame.deriv_num(pg(j1, top, k1), y)
                - &pf.frame.deriv_num(pg(top, top, k1), x(j1));
            for k2 in 1..=n {
                t = &t + &(pg(j1, top, k2) * pg(top, k2, k1));
                t = &t - &(pg(top, top, k2) * pg(j1, k2, k1));
            }
            t = &t + &(pg(j1, top, top) * pg(top, top, k1));
            t = &t - &(pg(top, top, top) * pg(j1, top, k1));
            fam6.insert((j1, k1), pf.frame.finish_sq(t));
        }
    }

    SixFamilies { fam1, fam2, fam3, fam4, fam5, fam6 }
}

/// The two marked products in the third family's display; they are equal,
/// so the family simplifies by their cancellation.
pub fn family3_marked_products(p: &PiTable, j1: usize) -> (RationalExpr, RationalExpr) {
    let top = p.n() + 1;
    (
        p.get(j1, top, top) * p.get(top, top, top),
        p.get(top, top, top) * p.get(j1, top, top),
    )
}

/// The principal unknowns: the n+1 distinguished diagonal entries of the
/// square (or Pi) table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ThetaFields {
    ctx: JetContext,
    theta: Vec<RationalExpr>,
}

impl ThetaFields {
    pub fn new(ctx: JetContext, theta: Vec<RationalExpr>) -> Self {
        assert_eq!(theta.len(), ctx.n() + 1, "expected n + 1 principal unknowns");
        ThetaFields { ctx, theta }
    }

    pub fn zero(ctx: JetContext) -> Self {
        let z = RationalExpr::zero(ctx.universe());
        let len = ctx.n() + 1;
        ThetaFields { ctx, theta: vec![z; len] }
    }

    pub fn ctx(&self) -> &JetContext {
        &self.ctx
    }

    /// `Theta[j]` for `j` in `1..=n+1`.
    pub fn get(&self, j: usize) -> &RationalExpr {
        &self.theta[j - 1]
    }
}

/// Reads the principal unknowns off a square table: the diagonal entries
/// with matching upper index.
pub fn theta_from_squares(sq: &SquareTable) -> ThetaFields {
    let n = sq.n();
    let theta = (1..=n + 1).map(|j| sq.get(j, j, j).clone()).collect();
    ThetaFields::new(sq.ctx().clone(), theta)
}

/// Quasi-inversion of the square-to-tables map: reconstructs the full Pi
/// table from the coefficient tables and the principal unknowns.
pub fn quasi_invert(c: &CubicForm, th: &ThetaFields) -> PiTable {
    let ctx = c.ctx().clone();
    assert!(ctx == *th.ctx(), "tables and principal unknowns share a context");
    let uni = ctx.universe().clone();
    let n = ctx.n();
    let top = n + 1;
    let half = scalar(1, 2);
    PiTable::from_fn(ctx.clone(), |j1, j2, k1| {
        let mut t: Vec<RationalExpr> = Vec::new();
        if j2 <= n && k1 <= n {
            // Both lower indices base, base component.
            t.push(c.h(k1, j1, j2).clone());
            if k1 == j1 {
                t.push(-&c.h(j2, j2, j2).scale(&half));
                t.push(th.get(j2).scale(&half));
            }
            if k1 == j2 {
                t.push(-&c.h(j1, j1, j1).scale(&half));
                t.push(th.get(j1).scale(&half));
            }
        } else if j1 <= n && j2 == top && k1 <= n {
            t.push(c.l(k1, j1).scale(&half));
            if k1 == j1 {
                t.push(th.get(top).scale(&half));
            }
        } else if j1 == top && j2 == top && k1 <= n {
            t.push(c.m(k1).clone());
        } else if j2 <= n && k1 == top {
            t.push(-c.g(j1, j2));
        } else if j1 <= n && j2 == top && k1 == top {
            t.push(-&c.h(j1, j1, j1).scale(&half));
            t.push(th.get(j1).scale(&half));
        } else {
            // (top, top, top): the top principal unknown itself.
            t.push(th.get(top).clone());
        }
        RationalExpr::sum(&uni, t.iter())
    })
}

/// The six families of the auxiliary integrability relations after
/// substituting the quasi-inversion, oriented so the first family
/// reproduces the first flatness family verbatim; the remaining families
/// carry the principal unknowns and their derivatives, computed
/// symbolically from `th`.
pub fn six_family_residuals(c: &CubicForm, th: &ThetaFields) -> SixFamilies {
    split_families(&quasi_invert(c, th)).negated()
}

/// Right-hand side of the gradient formula for `Theta[j1]` in the base
/// direction `x[j2]`.
pub fn theta_grad_x_rhs(c: &CubicForm, th: &ThetaFields, j1: usize, j2: usize) -> RationalExpr {
    let ctx = c.ctx();
    let uni = ctx.universe().clone();
    let n = ctx.n();
    let top = n + 1;
    let half = scalar(1, 2);
    let y = uni.y();
    let mut t: Vec<RationalExpr> = vec![
        c.g(j1, j2).derivative(y).scale(&scalar_int(-2)),
        c.h(j1, j1, j1).derivative(uni.x(j2)),
    ];
    for k in 1..=n {
        t.push(c.g(j2, k) * c.l(k, j1));
        t.push(-&(c.h(k, j1, j2) * c.h(k, k, k)));
        t.push(c.h(k, j1, j2) * th.get(k));
    }
    t.push((c.h(j1, j1, j1) * c.h(j2, j2, j2)).scale(&half));
    t.push(-&(c.g(j1, j2) * th.get(top)));
    t.push(-&(c.h(j1, j1, j1) * th.get(j2)).scale(&half));
    t.push(-&(c.h(j2, j2, j2) * th.get(j1)).scale(&half));
    t.push((th.get(j1) * th.get(j2)).scale(&half));
    RationalExpr::sum(&uni, t.iter())
}

/// Right-hand side of the gradient formula for `Theta[j1]` in the
/// dependent direction.
pub fn theta_grad_y_rhs(c: &CubicForm, th: &ThetaFields, j1: usize) -> RationalExpr {
    let ctx = c.ctx();
    let uni = ctx.universe().clone();
    let n = ctx.n();
    let top = n + 1;
    let half = scalar(1, 2);
    let y = uni.y();
    let mut t: Vec<RationalExpr> = vec![
        c.h(j1, j1, j1).derivative(y).scale(&scalar(-1, 3)),
        c.l(j1, j1).derivative(uni.x(j1)).scale(&scalar(2, 3)),
        (c.g(j1, j1) * c.m(j1)).scale(&scalar(4, 3)),
    ];
    for l in 1..=n {
        t.push((c.g(j1, l) * c.m(l)).scale(&scalar(2, 3)));
        t.push(-&(c.h(l, l, l) * c.l(l, j1)).scale(&half));
        t.push((c.h(j1, j1, l) * c.l(l, j1)).scale(&scalar(2, 3)));
        t.push(-&(c.h(l, j1, j1) * c.l(j1, l)).scale(&scalar(2, 3)));
        t.push((c.l(l, j1) * th.get(l)).scale(&half));
    }
    t.push(-&(c.h(j1, j1, j1) * th.get(top)).scale(&half));
    t.push((th.get(j1) * th.get(top)).scale(&half));
    RationalExpr::sum(&uni, t.iter())
}

/// Right-hand side of the gradient formula for the top principal unknown
/// in the base direction `x[j1]`.
pub fn theta_grad_x_top_rhs(c: &CubicForm, th: &ThetaFields, j1: usize) -> RationalExpr {
    let ctx = c.ctx();
    let uni = ctx.universe().clone();
    let n = ctx.n();
    let top = n + 1;
    let half = scalar(1, 2);
    let third = scalar(1, 3);
    let y = uni.y();
    let mut t: Vec<RationalExpr> = vec![
        c.h(j1, j1, j1).derivative(y).scale(&scalar(-2, 3)),
        c.l(j1, j1).derivative(uni.x(j1)).scale(&third),
        (c.g(j1, j1) * c.m(j1)).scale(&scalar(2, 3)),
    ];
    for l in 1..=n {
        t.push((c.g(j1, l) * c.m(l)).scale(&scalar(4, 3)));
        t.push(-&(c.h(l, l, l) * c.l(l, j1)).scale(&half));
        t.push((c.h(j1, j1, l) * c.l(l, j1)).scale(&third));
        t.push(-&(c.h(l, j1, j1) * c.l(j1, l)).scale(&third));
        t.push((c.l(l, j1) * th.get(l)).scale(&half));
    }
    t.push(-&(c.h(j1, j1, j1) * th.get(top)).scale(&half));
    t.push((th.get(j1) * th.get(top)).scale(&half));
    RationalExpr::sum(&uni, t.iter())
}

/// Right-hand side of the gradient formula for the top principal unknown
/// in the dependent direction; one formula per auxiliary base index `j1`,
/// all agreeing on solutions.
pub fn theta_grad_y_top_rhs(c: &CubicForm, th: &ThetaFields, j1: usize) -> RationalExpr {
    let ctx = c.ctx();
    let uni = ctx.universe().clone();
    let n = ctx.n();
    let top = n + 1;
    let half = scalar(1, 2);
    let y = uni.y();
    let mut t: Vec<RationalExpr> = vec![
        -&c.l(j1, j1).derivative(y),
        c.m(j1).derivative(uni.x(j1)).scale(&scalar_int(2)),
    ];
    for l in 1..=n {
        t.push((c.h(j1, j1, l) * c.m(l)).scale(&scalar_int(2)));
        t.push(-&(c.h(l, l, l) * c.m(l)));
        t.push(-&(c.l(l, j1) * c.l(j1, l)).scale(&half));
        t.push(c.m(l) * th.get(l));
    }
    t.push((th.get(top) * th.get(top)).scale(&half));
    RationalExpr::sum(&uni, t.iter())
}

/// Residuals of the gradient system for the principal unknowns: each
/// derivative of `th` minus its displayed right-hand side.
#[derive(Clone, Debug)]
pub struct ThetaSystemResiduals {
    /// `(j1, j2)`: base gradient of `Theta[j1]`.
    pub xgrad: BTreeMap<(usize, usize), RationalExpr>,
    /// `(j1)`: dependent gradient of `Theta[j1]`.
    pub ygrad: BTreeMap<usize, RationalExpr>,
    /// `(j1)`: base gradient of the top unknown.
    pub xtop: BTreeMap<usize, RationalExpr>,
    /// `(j1)`: dependent gradient of the top unknown, one per formula.
    pub ytop: BTreeMap<usize, RationalExpr>,
}

impl ThetaSystemResiduals {
    pub fn all_zero(&self) -> bool {
        self.xgrad.values().all(RationalExpr::is_zero)
            && self.ygrad.values().all(RationalExpr::is_zero)
            && self.xtop.values().all(RationalExpr::is_zero)
            && self.ytop.values().all(RationalExpr::is_zero)
    }
}

pub fn theta_system_residuals(c: &CubicForm, th: &ThetaFields) -> ThetaSystemResiduals {
    let ctx = c.ctx();
    let uni = ctx.universe().clone();
    let n = ctx.n();
    let top = n + 1;
    let y = uni.y();
    let mut xgrad = BTreeMap::new();
    let mut ygrad = BTreeMap::new();
    let mut xtop = BTreeMap::new();
    let mut ytop = BTreeMap::new();
    for j1 in 1..=n {
        for j2 in 1..=n {
            let lhs = th.get(j1).derivative(uni.x(j2));
            xgrad.insert((j1, j2), &lhs - &theta_grad_x_rhs(c, th, j1, j2));
        }
        ygrad.insert(j1, &th.get(j1).derivative(y) - &theta_grad_y_rhs(c, th, j1));
        xtop.insert(j1, &th.get(top).derivative(uni.x(j1)) - &theta_grad_x_top_rhs(c, th, j1));
        ytop.insert(j1, &th.get(top).derivative(y) - &theta_grad_y_top_rhs(c, th, j1));
    }
    ThetaSystemResiduals { xgrad, ygrad, xtop, ytop }
}

/// Compatibility residuals of the gradient system, with the principal
/// unknowns eliminated: cross derivatives of the gradient formulas are
/// formed formally, every derivative of a principal unknown is replaced by
/// its gradient formula again, and the leftover monomials carrying a
/// principal-unknown symbol are split off. Their coefficients are exact
/// combinations of the first-order flatness residuals, so they vanish on
/// any tables satisfying the flatness system; `theta_clean` records whether
/// they vanished for the given input.
#[derive(Clone, Debug)]
pub struct CompatResiduals {
    /// `(j1, j2 < j3)`: base/base cross derivatives of the base gradients.
    pub fam1: BTreeMap<(usize, usize, usize), RationalExpr>,
    /// `(j1, j2)`: dependent/base cross derivatives.
    pub fam2: BTreeMap<(usize, usize), RationalExpr>,
    /// `(j1 < j2)`: base/base cross derivatives of the top gradients.
    pub fam3: BTreeMap<(usize, usize), RationalExpr>,
    /// `(j2)`: dependent/base cross derivatives of the top gradients.
    pub fam4: BTreeMap<usize, RationalExpr>,
    /// True when every principal-unknown symbol cancelled outright.
    pub theta_clean: bool,
}

impl CompatResiduals {
    pub fn all_zero(&self) -> bool {
        self.fam1.values().all(RationalExpr::is_zero)
            && self.fam2.values().all(RationalExpr::is_zero)
            && self.fam3.values().all(RationalExpr::is_zero)
            && self.fam4.values().all(RationalExpr::is_zero)
    }
}

/// Derivation operators and gradient tables over a parameter-extended
/// universe in which the principal unknowns are opaque symbols.
///
/// All table entries share one polynomial denominator base `d`, so the
/// whole derivation runs on numerators over fixed powers of `d`: the
/// gradient formulas are numerators over `d^2`, their derivations
/// numerators over `d^4`, and no intermediate reduction is ever needed.
struct ThetaDerivation {
    ctx: JetContext,
    theta_vars: Vec<Var>,
    /// Common denominator of every table entry.
    den: Polynomial,
    den_sq: Polynomial,
    /// Numerators over `den^2`: gradients of symbol `a` in direction
    /// `x[b]`, flattened `(a - 1) * n + (b - 1)` with the top symbol after
    /// the base ones.
    grad_x_num: Vec<Vec<Polynomial>>,
    grad_y_num: Vec<Polynomial>,
}

impl ThetaDerivation {
    fn new(c: &CubicForm) -> Self {
        let n = c.n();
        let names: Vec<String> = (1..=n + 1).map(|a| format!("th{a}")).collect();
        let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let uni_ext: Arc<VarUniverse> = c.ctx().universe().extend_params(&name_refs);
        let ctx = JetContext::over(uni_ext.clone()).expect("n unchanged");
        let c_ext = c.embed(&ctx);
        let theta_vars: Vec<Var> =
            names.iter().map(|s| uni_ext.lookup(s).expect("parameter present")).collect();
        let th = ThetaFields::new(
            ctx.clone(),
            theta_vars.iter().map(|&v| RationalExpr::var(&uni_ext, v)).collect(),
        );

        // Common denominator of the table entries.
        let mut den = Polynomial::one(&uni_ext);
        for e in c_ext.entries() {
            den = crate::symcore::lcm(&den, e.denominator());
        }
        let den_sq = &den * &den;

        let over_d2 = |e: RationalExpr| -> Polynomial {
            let f = den_sq.div_exact(e.denominator()).expect("common denominator");
            e.numerator() * &f
        };

        let mut grad_x_num: Vec<Vec<Polynomial>> = Vec::with_capacity(n + 1);
        for a in 1..=n {
            grad_x_num
                .push((1..=n).map(|b| over_d2(theta_grad_x_rhs(&c_ext, &th, a, b))).collect());
        }
        grad_x_num.push((1..=n).map(|b| over_d2(theta_grad_x_top_rhs(&c_ext, &th, b))).collect());
        let mut grad_y_num: Vec<Polynomial> =
            (1..=n).map(|a| over_d2(theta_grad_y_rhs(&c_ext, &th, a))).collect();
        // Canonical choice of the auxiliary index for the top dependent
        // gradient: the first base index. The symbol-carrying part of the
        // formula does not depend on that choice.
        grad_y_num.push(over_d2(theta_grad_y_top_rhs(&c_ext, &th, 1)));

        ThetaDerivation { ctx, theta_vars, den, den_sq, grad_x_num, grad_y_num }
    }

    /// Numerator over `den^2` of the gradient of symbol `a` (1-based,
    /// top = n+1) in direction `x[b]`.
    fn grad_x(&self, a: usize, b: usize) -> &Polynomial {
        &self.grad_x_num[a - 1][b - 1]
    }

    fn grad_y(&self, a: usize) -> &Polynomial {
        &self.grad_y_num[a - 1]
    }

    /// Numerator over `den^4` of the total derivative of `g / den^2` along
    /// the given base variable, substituting the gradient formulas for the
    /// symbol derivatives.
    fn derive_num(&self, g: &Polynomial, along: Var, grad_of_symbol: impl Fn(usize) -> Polynomial) -> Polynomial {
        let dden = self.den.derivative(along);
        let mut out = &(&g.derivative(along) * &self.den_sq)
            - &(&(g * &self.den).scale(&scalar_int(2)) * &dden);
        for (i, &v) in self.theta_vars.iter().enumerate() {
            let dg = g.derivative(v);
            if dg.is_zero() {
                continue;
            }
            out = &out + &(&dg * &grad_of_symbol(i + 1));
        }
        out
    }

    fn d_x_num(&self, g: &Polynomial, b: usize) -> Polynomial {
        self.derive_num(g, self.ctx.universe().x(b), |a| self.grad_x(a, b).clone())
    }

    fn d_y_num(&self, g: &Polynomial) -> Polynomial {
        self.derive_num(g, self.ctx.universe().y(), |a| self.grad_y(a).clone())
    }

    /// Splits a numerator over `den^4` into its symbol-free residual
    /// (restricted to the original universe) and a flag for leftovers.
    fn split_free(&self, num: &Polynomial, target: &Arc<VarUniverse>) -> (RationalExpr, bool) {
        let uni = self.ctx.universe();
        let mut free = Polynomial::zero(uni);
        let mut leftover = false;
        for (m, coef) in num.terms() {
            if self.theta_vars.iter().all(|&v| m.exp(v) == 0) {
                free.add_term(m.clone(), coef.clone());
            } else {
                leftover = true;
            }
        }
        let den4 = &self.den_sq * &self.den_sq;
        let part = RationalExpr::new(free, den4)
            .expect("denominator nonzero")
            .restrict(target)
            .expect("free part lives in the base universe");
        (part, leftover)
    }
}

pub fn compat_residuals(c: &CubicForm) -> Result<CompatResiduals, AuxError> {
    let n = c.n();
    let target = c.ctx().universe().clone();
    let der = ThetaDerivation::new(c);
    let top = n + 1;

    let mut fam1 = BTreeMap::new();
    let mut fam2 = BTreeMap::new();
    let mut fam3 = BTreeMap::new();
    let mut fam4 = BTreeMap::new();
    let mut leftover = false;

    let mut split = |num: Polynomial| {
        let (free, had) = der.split_free(&num, &target);
        leftover |= had;
        free
    };

    for j1 in 1..=n {
        for j2 in 1..=n {
            for j3 in j2 + 1..=n {
                let r = &der.d_x_num(der.grad_x(j1, j2), j3) - &der.d_x_num(der.grad_x(j1, j3), j2);
                fam1.insert((j1, j2, j3), split(r));
            }
        }
    }
    for j1 in 1..=n {
        for j2 in 1..=n {
            let r = &der.d_y_num(der.grad_x(j1, j2)) - &der.d_x_num(der.grad_y(j1), j2);
            fam2.insert((j1, j2), split(r));
        }
    }
    for j1 in 1..=n {
        for j2 in j1 + 1..=n {
            let r = &der.d_x_num(der.grad_x(top, j1), j2) - &der.d_x_num(der.grad_x(top, j2), j1);
            fam3.insert((j1, j2), split(r));
        }
    }
    for j2 in 1..=n {
        let r = &der.d_y_num(der.grad_x(top, j2)) - &der.d_x_num(der.grad_y(top), j2);
        fam4.insert(j2, split(r));
    }
    drop(split);

    if leftover && crate::cubic::flatness_residuals(c).all_zero() {
        // On tables satisfying the flatness system the symbol coefficients
        // are forced to vanish; survival means a transcription bug.
        return Err(AuxError::ThetaNotEliminated);
    }
    Ok(CompatResiduals { fam1, fam2, fam3, fam4, theta_clean: !leftover })
}

/// The displayed expanded form of the first compatibility family, taken
/// verbatim apart from restoring two elided summation signs; kept as a
/// regression anchor against the mechanically derived family.
pub fn compat_family1_display(c: &CubicForm, j1: usize, j2: usize, j3: usize) -> RationalExpr {
    let ctx = c.ctx();
    let uni = ctx.universe().clone();
    let n = ctx.n();
    let y = uni.y();
    let x = |j: usize| uni.x(j);
    let half = scalar(1, 2);
    let third = scalar(1, 3);
    let two_thirds = scalar(2, 3);
    let four_thirds = scalar(4, 3);

    let mut t: Vec<RationalExpr> = vec![
        c.g(j1, j2).derivative(x(j3)).derivative(y).scale(&scalar_int(-2)),
        c.g(j1, j3).derivative(x(j2)).derivative(y).scale(&scalar_int(2)),
        -&(&c.g(j1, j2).derivative(y) * c.h(j3, j3, j3)),
        &c.g(j1, j3).derivative(y) * c.h(j2, j2, j2),
        -&(&c.h(j2, j2, j2).derivative(y) * c.g(j1, j3)).scale(&two_thirds),
        (&c.h(j3, j3, j3).derivative(y) * c.g(j1, j2)).scale(&two_thirds),
        -&(&c.l(j3, j3).derivative(x(j3)) * c.g(j1, j2)).scale(&two_thirds),
        (&c.l(j2, j2).derivative(x(j2)) * c.g(j1, j3)).scale(&two_thirds),
        -&(&(c.g(j1, j2) * c.g(j3, j3)) * c.m(j3)).scale(&two_thirds),
        (&(c.g(j1, j3) * c.g(j2, j2)) * c.m(j2)).scale(&two_thirds),
    ];
    for l in 1..=n {
        t.push(-&(&c.g(j3, l).derivative(x(j2)) * c.l(l, j1)));
        t.push(&c.g(j2, l).derivative(x(j3)) * c.l(l, j1));
        t.push((c.g(l, j3) * c.h(l, j1, j2)).scale(&scalar_int(-2)));
        t.push((c.g(l, j2) * c.h(l, j1, j3)).scale(&scalar_int(2)));
        t.push(-&(&c.h(l, j1, j2).derivative(x(j3)) * c.h(l, l, l)));
        t.push(&c.h(l, j1, j3).derivative(x(j2)) * c.h(l, l, l));
        t.push(-&(&c.l(l, j1).derivative(x(j2)) * c.g(j3, l)));
        t.push(&c.l(l, j1).derivative(x(j3)) * c.g(j2, l));
        t.push(-&(&(c.g(j1, j2) * c.g(j3, l)) * c.m(l)).scale(&four_thirds));
        t.push((&(c.g(j1, j3) * c.g(j2, l)) * c.m(l)).scale(&four_thirds));
        t.push(-&(&(c.g(j3, l) * c.h(j1, j1, j1)) * c.l(l, j2)).scale(&half));
        t.push((&(c.g(j2, l) * c.h(j1, j1, j1)) * c.l(l, j3)).scale(&half));
        t.push(-&(&(c.g(j3, l) * c.h(j2, j2, j2)) * c.l(l, j1)).scale(&half));
        t.push((&(c.g(j2, l) * c.h(j3, j3, j3)) * c.l(l, j1)).scale(&half));
        t.push(-&(&(c.g(j1, j3) * c.h(l, l, l)) * c.l(l, j2)).scale(&half));
        t.push((&(c.g(j1, j2) * c.h(l, l, l)) * c.l(l, j3)).scale(&half));
        t.push(-&(&(c.g(j1, j2) * c.h(j3, j3, l)) * c.l(l, j3)).scale(&third));
        t.push((&(c.g(j1, j3) * c.h(j2, j2, l)) * c.l(l, j2)).scale(&third));
        t.push(-&(&(c.g(j1, j3) * c.h(l, j2, j2)) * c.l(j2, l)).scale(&third));
        t.push((&(c.g(j1, j2) * c.h(l, j3, j3)) * c.l(j3, l)).scale(&third));
        for p in 1..=n {
            t.push(-&(&(c.g(j2, p) * c.h(l, j1, j3)) * c.l(p, l)));
            t.push(&(c.g(j3, p) * c.h(l, j1, j2)) * c.l(p, l));
            t.push(-&(&(c.h(l, j1, j2) * c.h(p, l, j3)) * c.h(p, p, p)));
            t.push(&(c.h(l, j1, j3) * c.h(p, l, j2)) * c.h(p, p, p));
        }
    }
    RationalExpr::sum(&uni, t.iter())
}
