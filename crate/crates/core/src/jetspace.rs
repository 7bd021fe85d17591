//! Second-order jet-space scaffolding: PDE systems, total differentiation
//! operators, and complete-integrability residuals.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::symcore::{same_universe, Polynomial, RationalExpr, Var, VarUniverse};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum JetError {
    #[error("the theory requires at least two independent variables, got n = {0}")]
    NRequiresAtLeastTwo(usize),
    #[error("index {index} out of range 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },
    #[error("right-hand sides must be symmetric: entry ({0},{1}) differs from ({1},{0})")]
    NotSymmetric(usize, usize),
    #[error("entry ({0},{1}) mentions a second-order jet variable")]
    MentionsSecondJet(usize, usize),
    #[error("entry ({0},{1}) lives in a different universe")]
    UniverseMismatch(usize, usize),
}

/// Dimension plus the variable universe, with the convention that the index
/// n+1 aliases the dependent variable.
#[derive(Clone, Debug)]
pub struct JetContext {
    n: usize,
    uni: Arc<VarUniverse>,
}

impl PartialEq for JetContext {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && same_universe(&self.uni, &other.uni)
    }
}

impl Eq for JetContext {}

impl JetContext {
    pub fn new(n: usize) -> Result<Self, JetError> {
        if n < 2 {
            return Err(JetError::NRequiresAtLeastTwo(n));
        }
        Ok(JetContext { n, uni: VarUniverse::new(n) })
    }

    /// Context over an existing universe (e.g. one extended with symbolic
    /// constants).
    pub fn over(uni: Arc<VarUniverse>) -> Result<Self, JetError> {
        let n = uni.n();
        if n < 2 {
            return Err(JetError::NRequiresAtLeastTwo(n));
        }
        Ok(JetContext { n, uni })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn universe(&self) -> &Arc<VarUniverse> {
        &self.uni
    }

    /// `x[i]` for `i <= n`, `y` for `i = n+1`.
    pub fn base_var(&self, i: usize) -> Var {
        self.uni.x_or_y(i)
    }

    pub fn check_index(&self, j: usize) -> Result<(), JetError> {
        if (1..=self.n).contains(&j) {
            Ok(())
        } else {
            Err(JetError::IndexOutOfRange { index: j, max: self.n })
        }
    }

    /// Upper-triangle pairs `(i, j)`, `1 <= i <= j <= n`.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (1..=self.n).flat_map(move |i| (i..=self.n).map(move |j| (i, j)))
    }

    /// Upper-triangle pairs of the extended range `1..=n+1`.
    pub fn pairs_ext(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (1..=self.n + 1).flat_map(move |i| (i..=self.n + 1).map(move |j| (i, j)))
    }

    pub(crate) fn pair_index(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        debug_assert!(1 <= i && j <= self.n);
        (i - 1) * (2 * self.n + 2 - i) / 2 + (j - i)
    }

    pub(crate) fn pair_index_ext(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        let m = self.n + 1;
        debug_assert!(1 <= i && j <= m);
        (i - 1) * (2 * m + 2 - i) / 2 + (j - i)
    }
}

/// A completely integrable-looking second-order system: the symmetric array
/// of right-hand sides over base, dependent and gradient variables only.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PdeSystem {
    ctx: JetContext,
    /// Upper triangle, indexed by `JetContext::pair_index`.
    f: Vec<RationalExpr>,
}

impl PdeSystem {
    /// Builds from the full n x n array, rejecting non-symmetric input and
    /// entries that mention second-order jet variables.
    pub fn new(ctx: JetContext, full: Vec<Vec<RationalExpr>>) -> Result<Self, JetError> {
        let n = ctx.n();
        assert_eq!(full.len(), n, "expected {n} rows");
        for (i, row) in full.iter().enumerate() {
            assert_eq!(row.len(), n, "expected {n} columns in row {i}");
        }
        for i in 1..=n {
            for j in i + 1..=n {
                if full[i - 1][j - 1] != full[j - 1][i - 1] {
                    return Err(JetError::NotSymmetric(i, j));
                }
            }
        }
        let mut f = Vec::with_capacity(n * (n + 1) / 2);
        for (i, j) in ctx.pairs() {
            f.push(full[i - 1][j - 1].clone());
        }
        Self::from_upper(ctx, f)
    }

    /// Builds from the upper triangle in `pairs()` order.
    pub fn from_upper(ctx: JetContext, f: Vec<RationalExpr>) -> Result<Self, JetError> {
        let n = ctx.n();
        assert_eq!(f.len(), n * (n + 1) / 2, "expected one entry per pair");
        for ((i, j), e) in ctx.pairs().zip(&f) {
            if !same_universe(e.universe(), ctx.universe()) {
                return Err(JetError::UniverseMismatch(i, j));
            }
            if e.mentions_any(ctx.universe().jet2_vars()) {
                return Err(JetError::MentionsSecondJet(i, j));
            }
        }
        Ok(PdeSystem { ctx, f })
    }

    /// The flat system: all right-hand sides zero.
    pub fn flat(ctx: JetContext) -> Self {
        let len = ctx.n() * (ctx.n() + 1) / 2;
        let zero = RationalExpr::zero(ctx.universe());
        PdeSystem { ctx, f: vec![zero; len] }
    }

    pub fn ctx(&self) -> &JetContext {
        &self.ctx
    }

    pub fn n(&self) -> usize {
        self.ctx.n()
    }

    /// `F[j1][j2]`, mirrored across the diagonal.
    pub fn f(&self, j1: usize, j2: usize) -> &RationalExpr {
        &self.f[self.ctx.pair_index(j1, j2)]
    }

    pub fn entries(&self) -> impl Iterator<Item = ((usize, usize), &RationalExpr)> {
        self.ctx.pairs().zip(self.f.iter())
    }

    pub fn is_flat_zero(&self) -> bool {
        self.f.iter().all(RationalExpr::is_zero)
    }

    /// Substitutes every second-jet variable `d2y[i][j]` by `F[i][j]` in an
    /// expression over the full jet space.
    pub fn substitute_second_jets(&self, e: &RationalExpr) -> RationalExpr {
        let uni = self.ctx.universe();
        let mut bindings = BTreeMap::new();
        for (i, j) in self.ctx.pairs() {
            bindings.insert(uni.jet2(i, j), self.f(i, j).clone());
        }
        e.substitute(&bindings)
            .expect("right-hand sides are jet2-free, substitution cannot pinch a denominator to zero")
    }
}

/// Total differentiation through the system: the derivation sending an
/// expression `e(x, y, dy)` to
/// `de/dx[j] + dy[j] * de/dy + sum_l F[j][l] * de/ddy[l]`.
pub fn total_derivative(sys: &PdeSystem, e: &RationalExpr, j: usize) -> Result<RationalExpr, JetError> {
    sys.ctx().check_index(j)?;
    let uni = sys.ctx().universe();
    debug_assert!(
        !e.mentions_any(uni.jet2_vars()),
        "total derivative input must not mention second-order jets"
    );
    let n = sys.n();
    let dyj = RationalExpr::var(uni, uni.jet1(j));
    let mut terms: Vec<(RationalExpr, RationalExpr)> = Vec::with_capacity(n + 2);
    terms.push((RationalExpr::one(uni), e.derivative(uni.x(j))));
    terms.push((dyj, e.derivative(uni.y())));
    for l in 1..=n {
        terms.push((sys.f(j, l).clone(), e.derivative(uni.jet1(l))));
    }
    Ok(RationalExpr::dot(uni, terms.iter().map(|(a, b)| (a, b))))
}

/// Total differentiation with explicit second jets: the derivation sending
/// `e(x, y, dy)` to `de/dx[k] + dy[k] * de/dy + sum_l d2y[k][l] * de/ddy[l]`.
/// Unlike [`total_derivative`] it does not substitute any system's
/// right-hand sides; the second-jet variables appear in the result.
pub fn formal_total_derivative(ctx: &JetContext, e: &RationalExpr, k: usize) -> Result<RationalExpr, JetError> {
    ctx.check_index(k)?;
    let uni = ctx.universe();
    let n = ctx.n();
    let dyk = RationalExpr::var(uni, uni.jet1(k));
    let mut terms: Vec<(RationalExpr, RationalExpr)> = Vec::with_capacity(n + 2);
    terms.push((RationalExpr::one(uni), e.derivative(uni.x(k))));
    terms.push((dyk, e.derivative(uni.y())));
    for l in 1..=n {
        let d2 = RationalExpr::var(uni, uni.jet2(k, l));
        terms.push((d2, e.derivative(uni.jet1(l))));
    }
    Ok(RationalExpr::dot(uni, terms.iter().map(|(a, b)| (a, b))))
}

/// The complete-integrability residuals `D_{j3} F[j1][j2] - D_{j2} F[j1][j3]`
/// for `j2 < j3`; the system is completely integrable exactly when all of
/// them vanish.
#[derive(Clone, Debug)]
pub struct IntegrabilityResiduals {
    /// Keyed by `(j1, j2, j3)` with `j2 < j3`.
    pub residuals: BTreeMap<(usize, usize, usize), RationalExpr>,
}

impl IntegrabilityResiduals {
    pub fn all_zero(&self) -> bool {
        self.residuals.values().all(RationalExpr::is_zero)
    }

    /// Reconstructs the full antisymmetric tensor entry for any `(j2, j3)`.
    pub fn get(&self, j1: usize, j2: usize, j3: usize) -> RationalExpr {
        use std::cmp::Ordering;
        match j2.cmp(&j3) {
            Ordering::Less => self.residuals[&(j1, j2, j3)].clone(),
            Ordering::Equal => {
                let uni = self.residuals.values().next().expect("n >= 2 gives entries").universe();
                RationalExpr::zero(uni)
            }
            Ordering::Greater => -&self.residuals[&(j1, j3, j2)],
        }
    }
}

pub fn integrability_residuals(sys: &PdeSystem) -> IntegrabilityResiduals {
    let n = sys.n();
    let uni = sys.ctx().universe().clone();
    // One shared denominator for all right-hand sides; every residual is a
    // polynomial numerator over its square, normalized once. The fast path
    // needs the denominator free of gradient variables (always the case
    // for synthesized and gradient-cubic systems).
    let frame = crate::symcore::CommonDen::of(&uni, sys.entries().map(|(_, e)| e));
    if frame.den().mentions_any(uni.jet1_vars()) {
        let mut residuals = BTreeMap::new();
        for j1 in 1..=n {
            for j2 in 1..=n {
                for j3 in j2 + 1..=n {
                    let a = total_derivative(sys, sys.f(j1, j2), j3).expect("index in range");
                    let b = total_derivative(sys, sys.f(j1, j3), j2).expect("index in range");
                    residuals.insert((j1, j2, j3), &a - &b);
                }
            }
        }
        return IntegrabilityResiduals { residuals };
    }

    let nums: Vec<Polynomial> = sys.entries().map(|(_, e)| frame.num(e)).collect();
    let fnum = |j1: usize, j2: usize| &nums[sys.ctx().pair_index(j1, j2)];
    let dyp = |i: usize| Polynomial::var(&uni, uni.jet1(i));

    // Numerator over den^2 of the total derivative of F[a][b] along j.
    let d_num = |j: usize, a: usize, b: usize| -> Polynomial {
        let e = fnum(a, b);
        let mut out = frame.deriv_num(e, uni.x(j));
        out = &out + &(&dyp(j) * &frame.deriv_num(e, uni.y()));
        for l in 1..=n {
            out = &out + &(fnum(j, l) * &e.derivative(uni.jet1(l)));
        }
        out
    };

    let mut residuals = BTreeMap::new();
    for j1 in 1..=n {
        for j2 in 1..=n {
            for j3 in j2 + 1..=n {
                let num = &d_num(j3, j1, j2) - &d_num(j2, j1, j3);
                residuals.insert((j1, j2, j3), frame.finish_sq(num));
            }
        }
    }
    IntegrabilityResiduals { residuals }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symcore::RationalExpr;

    fn ctx2() -> JetContext {
        JetContext::new(2).unwrap()
    }

    /// n = 2 system with F[1][1] = y, other entries zero.
    fn sys_f11_y() -> PdeSystem {
        let ctx = ctx2();
        let uni = ctx.universe().clone();
        let y = RationalExpr::var(&uni, uni.y());
        let z = RationalExpr::zero(&uni);
        PdeSystem::new(ctx, vec![vec![y, z.clone()], vec![z.clone(), z.clone()]]).unwrap()
    }

    #[test]
    fn n_must_be_at_least_two() {
        assert!(matches!(JetContext::new(1), Err(JetError::NRequiresAtLeastTwo(1))));
        assert!(JetContext::new(2).is_ok());
    }

    #[test]
    fn asymmetric_systems_are_rejected() {
        let ctx = ctx2();
        let uni = ctx.universe().clone();
        let one = RationalExpr::one(&uni);
        let z = RationalExpr::zero(&uni);
        let r = PdeSystem::new(ctx, vec![vec![z.clone(), one], vec![z.clone(), z.clone()]]);
        assert!(matches!(r, Err(JetError::NotSymmetric(1, 2))));
    }

    #[test]
    fn jet2_entries_are_rejected() {
        let ctx = ctx2();
        let uni = ctx.universe().clone();
        let bad = RationalExpr::var(&uni, uni.jet2(1, 1));
        let z = RationalExpr::zero(&uni);
        let r = PdeSystem::new(ctx, vec![vec![bad, z.clone()], vec![z.clone(), z.clone()]]);
        assert!(matches!(r, Err(JetError::MentionsSecondJet(1, 1))));
    }

    #[test]
    fn derivative_of_dependent_is_gradient_entry() {
        let sys = sys_f11_y();
        let uni = sys.ctx().universe().clone();
        let y = RationalExpr::var(&uni, uni.y());
        for j in 1..=2 {
            assert_eq!(
                total_derivative(&sys, &y, j).unwrap(),
                RationalExpr::var(&uni, uni.jet1(j))
            );
        }
    }

    #[test]
    fn derivative_of_gradient_entry_is_rhs() {
        let sys = sys_f11_y();
        let uni = sys.ctx().universe().clone();
        for j in 1..=2 {
            for l in 1..=2 {
                let dyl = RationalExpr::var(&uni, uni.jet1(l));
                assert_eq!(total_derivative(&sys, &dyl, j).unwrap(), *sys.f(j, l));
            }
        }
    }

    #[test]
    fn leibniz_on_a_product() {
        // D_1(x[1] * dy[1]) with F[1][1] = y: dy[1] + x[1] * y.
        let sys = sys_f11_y();
        let uni = sys.ctx().universe().clone();
        let x1 = RationalExpr::var(&uni, uni.x(1));
        let dy1 = RationalExpr::var(&uni, uni.jet1(1));
        let y = RationalExpr::var(&uni, uni.y());
        let e = &x1 * &dy1;
        let expected = &dy1 + &(&x1 * &y);
        assert_eq!(total_derivative(&sys, &e, 1).unwrap(), expected);
    }

    #[test]
    fn out_of_range_index_is_an_error() {
        let sys = sys_f11_y();
        let uni = sys.ctx().universe().clone();
        let y = RationalExpr::var(&uni, uni.y());
        assert!(matches!(
            total_derivative(&sys, &y, 3),
            Err(JetError::IndexOutOfRange { index: 3, max: 2 })
        ));
    }

    #[test]
    fn flat_system_is_integrable() {
        let sys = PdeSystem::flat(ctx2());
        assert!(integrability_residuals(&sys).all_zero());
    }

    #[test]
    fn f11_equals_y_fails_integrability_with_named_residual() {
        let sys = sys_f11_y();
        let uni = sys.ctx().universe().clone();
        let res = integrability_residuals(&sys);
        // D_2(F^{1,1}) - D_1(F^{1,2}) = D_2(y) = dy[2].
        assert_eq!(res.residuals[&(1, 1, 2)], RationalExpr::var(&uni, uni.jet1(2)));
        assert!(!res.all_zero());
    }

    #[test]
    fn residual_count_matches_enumeration() {
        let sys = PdeSystem::flat(ctx2());
        assert_eq!(integrability_residuals(&sys).residuals.len(), 2);
        let ctx3 = JetContext::new(3).unwrap();
        let sys3 = PdeSystem::flat(ctx3);
        assert_eq!(integrability_residuals(&sys3).residuals.len(), 3 * 3);
    }

    #[test]
    fn antisymmetry_by_reconstruction() {
        let sys = sys_f11_y();
        let res = integrability_residuals(&sys);
        let a = res.get(1, 1, 2);
        let b = res.get(1, 2, 1);
        assert_eq!(a, -&b);
        assert!(res.get(1, 1, 1).is_zero());
    }
}
