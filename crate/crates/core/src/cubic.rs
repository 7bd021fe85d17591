//! The constrained cubic right-hand-side shape and the flatness criterion:
//! detecting and extracting the coefficient tables G, H, L, M, evaluating
//! the four first-order flatness systems, machine-deriving those systems
//! from complete integrability as an independent oracle, and computing the
//! curvature-type obstruction tensor at the identity fiber.

use std::collections::BTreeMap;
use std::fmt;

use crate::jetspace::{integrability_residuals, JetContext, PdeSystem};
use crate::symcore::{
    same_universe, scalar, scalar_int, solve_linear, LinearSolution, Mono, Polynomial,
    RationalExpr, Scalar,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CubicError {
    #[error("coefficient table entry mentions jet variables")]
    EntryMentionsJets,
    #[error("polynomial has gradient degree above three")]
    DegreeTooHigh,
}

/// Exponent vector over the gradient variables, naming a witness monomial.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JetMonomial(pub Vec<u32>);

impl fmt::Display for JetMonomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.iter().all(|&e| e == 0) {
            return write!(f, "1");
        }
        let mut first = true;
        for (i, &e) in self.0.iter().enumerate() {
            if e == 0 {
                continue;
            }
            if !first {
                write!(f, "*")?;
            }
            write!(f, "dy[{}]", i + 1)?;
            if e > 1 {
                write!(f, "^{e}")?;
            }
            first = false;
        }
        Ok(())
    }
}

/// Why a system is not of the constrained cubic shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NotCubicWitness {
    /// A right-hand side is not polynomial in the gradient variables.
    JetDenominator { pair: (usize, usize) },
    /// A right-hand side has gradient degree above three.
    DegreeTooHigh { pair: (usize, usize), monomial: JetMonomial },
    /// A gradient monomial the shape cannot produce carries a nonzero
    /// coefficient.
    UnreachableMonomial { pair: (usize, usize), monomial: JetMonomial },
}

impl fmt::Display for NotCubicWitness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NotCubicWitness::JetDenominator { pair } => {
                write!(f, "F[{}][{}] has a gradient-dependent denominator", pair.0, pair.1)
            }
            NotCubicWitness::DegreeTooHigh { pair, monomial } => {
                write!(f, "F[{}][{}] carries {monomial} of degree > 3", pair.0, pair.1)
            }
            NotCubicWitness::UnreachableMonomial { pair, monomial } => {
                write!(f, "coefficient equation of {monomial} in F[{}][{}] is violated", pair.0, pair.1)
            }
        }
    }
}

/// Coefficient tables of the constrained cubic shape. All entries are
/// functions of the base and dependent variables only; `G` is symmetric and
/// `H` is symmetric in its lower pair, both by storage.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CubicForm {
    ctx: JetContext,
    g: Vec<RationalExpr>,
    h: Vec<RationalExpr>,
    l: Vec<RationalExpr>,
    m: Vec<RationalExpr>,
}

impl CubicForm {
    pub fn zero(ctx: JetContext) -> Self {
        let n = ctx.n();
        let np = n * (n + 1) / 2;
        let z = RationalExpr::zero(ctx.universe());
        CubicForm {
            ctx,
            g: vec![z.clone(); np],
            h: vec![z.clone(); n * np],
            l: vec![z.clone(); n * n],
            m: vec![z; n],
        }
    }

    /// Builds from table accessors `G[j1][j2]`, `H[k][j1][j2]`, `L[k][j]`,
    /// `M[k]`; only `j1 <= j2` slots are read, so symmetry holds by
    /// construction.
    pub fn from_tables(
        ctx: JetContext,
        g: impl Fn(usize, usize) -> RationalExpr,
        h: impl Fn(usize, usize, usize) -> RationalExpr,
        l: impl Fn(usize, usize) -> RationalExpr,
        m: impl Fn(usize) -> RationalExpr,
    ) -> Result<Self, CubicError> {
        let n = ctx.n();
        let np = n * (n + 1) / 2;
        let check = |e: RationalExpr| -> Result<RationalExpr, CubicError> {
            let uni = ctx.universe();
            assert!(same_universe(e.universe(), uni), "universe mismatch");
            if e.mentions_any(uni.jet1_vars()) || e.mentions_any(uni.jet2_vars()) {
                return Err(CubicError::EntryMentionsJets);
            }
            Ok(e)
        };
        let mut out = Self::zero(ctx.clone());
        for (idx, (j1, j2)) in ctx.pairs().enumerate() {
            out.g[idx] = check(g(j1, j2))?;
            for k in 1..=n {
                out.h[(k - 1) * np + idx] = check(h(k, j1, j2))?;
            }
        }
        for k in 1..=n {
            for j in 1..=n {
                out.l[(k - 1) * n + (j - 1)] = check(l(k, j))?;
            }
        }
        for k in 1..=n {
            out.m[k - 1] = check(m(k))?;
        }
        Ok(out)
    }

    pub fn ctx(&self) -> &JetContext {
        &self.ctx
    }

    pub fn n(&self) -> usize {
        self.ctx.n()
    }

    pub fn g(&self, j1: usize, j2: usize) -> &RationalExpr {
        &self.g[self.ctx.pair_index(j1, j2)]
    }

    pub fn h(&self, k: usize, j1: usize, j2: usize) -> &RationalExpr {
        let np = self.n() * (self.n() + 1) / 2;
        &self.h[(k - 1) * np + self.ctx.pair_index(j1, j2)]
    }

    pub fn l(&self, k: usize, j: usize) -> &RationalExpr {
        &self.l[(k - 1) * self.n() + (j - 1)]
    }

    pub fn m(&self, k: usize) -> &RationalExpr {
        &self.m[k - 1]
    }

    pub fn is_zero(&self) -> bool {
        self.g.iter().chain(&self.h).chain(&self.l).chain(&self.m).all(RationalExpr::is_zero)
    }

    /// Number of component functions in the four tables.
    pub fn component_count(n: usize) -> usize {
        let np = n * (n + 1) / 2;
        np + n * np + n * n + n
    }

    /// All table entries in storage order.
    pub fn entries(&self) -> impl Iterator<Item = &RationalExpr> {
        self.g.iter().chain(&self.h).chain(&self.l).chain(&self.m)
    }

    /// View in a context over an extension of this form's universe.
    pub fn embed(&self, target: &JetContext) -> CubicForm {
        assert_eq!(self.n(), target.n());
        let uni = target.universe();
        CubicForm {
            ctx: target.clone(),
            g: self.g.iter().map(|e| e.embed(uni)).collect(),
            h: self.h.iter().map(|e| e.embed(uni)).collect(),
            l: self.l.iter().map(|e| e.embed(uni)).collect(),
            m: self.m.iter().map(|e| e.embed(uni)).collect(),
        }
    }
}

/// Expands the coefficient tables into the symmetric right-hand-side array.
pub fn expand_cubic(c: &CubicForm) -> PdeSystem {
    let ctx = c.ctx().clone();
    let uni = ctx.universe().clone();
    let n = ctx.n();
    let half = scalar(1, 2);
    let dy = |i: usize| RationalExpr::var(&uni, uni.jet1(i));
    let mut entries = Vec::new();
    for (j1, j2) in ctx.pairs() {
        let mut terms: Vec<RationalExpr> = vec![c.g(j1, j2).clone()];
        for k in 1..=n {
            let inner = RationalExpr::sum(
                &uni,
                [
                    &c.h(k, j1, j2).clone(),
                    &(&dy(j1) * c.l(k, j2)).scale(&half),
                    &(&dy(j2) * c.l(k, j1)).scale(&half),
                    &(&(&dy(j1) * &dy(j2)) * c.m(k)),
                ]
                .into_iter()
                .cloned()
                .collect::<Vec<_>>()
                .iter(),
            );
            terms.push(&dy(k) * &inner);
        }
        entries.push(RationalExpr::sum(&uni, terms.iter()));
    }
    PdeSystem::from_upper(ctx, entries).expect("expansion is symmetric and jet2-free")
}

/// All gradient exponent vectors of total degree <= 3, graded then lex.
fn jet_monomials_up_to_cubic(n: usize) -> Vec<Vec<u32>> {
    fn rec(n: usize, pos: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if pos == n {
            out.push(cur.clone());
            return;
        }
        for e in 0..=left {
            cur.push(e);
            rec(n, pos + 1, left - e, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, 0, 3, &mut Vec::new(), &mut out);
    out.sort_by(|a, b| {
        let (da, db) = (a.iter().sum::<u32>(), b.iter().sum::<u32>());
        da.cmp(&db).then_with(|| a.cmp(b))
    });
    out
}

/// Splits `e` into gradient-monomial coefficients over the base variables;
/// `None` when `e` is not polynomial in the gradient.
pub fn jet_coefficients(
    ctx: &JetContext,
    e: &RationalExpr,
) -> Option<BTreeMap<Vec<u32>, RationalExpr>> {
    let uni = ctx.universe();
    if e.denominator().mentions_any(uni.jet1_vars()) || e.mentions_any(uni.jet2_vars()) {
        return None;
    }
    let n = ctx.n();
    let mut nums: BTreeMap<Vec<u32>, Polynomial> = BTreeMap::new();
    for (m, coef) in e.numerator().terms() {
        let jet_part: Vec<u32> = (1..=n).map(|i| m.exp(uni.jet1(i))).collect();
        let mut rest = m.exps().to_vec();
        for i in 1..=n {
            rest[uni.jet1(i).index()] = 0;
        }
        nums.entry(jet_part)
            .or_insert_with(|| Polynomial::zero(uni))
            .add_term(Mono::from_boxed(rest.into_boxed_slice()), coef.clone());
    }
    let mut out = BTreeMap::new();
    for (k, num) in nums {
        if num.is_zero() {
            continue;
        }
        out.insert(k, RationalExpr::new(num, e.denominator().clone()).expect("denominator nonzero"));
    }
    Some(out)
}

/// Inverse problem: recover the coefficient tables from a system, or
/// explain why the system is not of the constrained shape. The map from
/// tables to gradient-monomial coefficients is one global linear system
/// over the rational-function field, solved exactly; inconsistency reports
/// the violated monomial equation.
pub fn extract_cubic(sys: &PdeSystem) -> Result<CubicForm, NotCubicWitness> {
    let ctx = sys.ctx().clone();
    let uni = ctx.universe().clone();
    let n = ctx.n();
    let np = n * (n + 1) / 2;

    let g_idx = |j1: usize, j2: usize| ctx.pair_index(j1, j2);
    let h_idx = |k: usize, j1: usize, j2: usize| np + (k - 1) * np + ctx.pair_index(j1, j2);
    let l_idx = |k: usize, j: usize| np + n * np + (k - 1) * n + (j - 1);
    let m_idx = |k: usize| np + n * np + n * n + (k - 1);
    let unknowns = CubicForm::component_count(n);

    let monos = jet_monomials_up_to_cubic(n);
    let mono_pos: BTreeMap<Vec<u32>, usize> =
        monos.iter().enumerate().map(|(i, m)| (m.clone(), i)).collect();

    let mut rows: Vec<Vec<RationalExpr>> = Vec::new();
    let mut rhs: Vec<RationalExpr> = Vec::new();
    let mut labels: Vec<((usize, usize), Vec<u32>)> = Vec::new();

    let zero = RationalExpr::zero(&uni);
    let one = scalar_int(1);
    let half = scalar(1, 2);

    for (j1, j2) in ctx.pairs() {
        let coeffs = match jet_coefficients(&ctx, sys.f(j1, j2)) {
            Some(c) => c,
            None => return Err(NotCubicWitness::JetDenominator { pair: (j1, j2) }),
        };
        for (mono, c) in &coeffs {
            if mono.iter().sum::<u32>() > 3 && !c.is_zero() {
                return Err(NotCubicWitness::DegreeTooHigh {
                    pair: (j1, j2),
                    monomial: JetMonomial(mono.clone()),
                });
            }
        }
        let base = rows.len();
        for mono in &monos {
            rows.push(vec![zero.clone(); unknowns]);
            rhs.push(coeffs.get(mono).cloned().unwrap_or_else(|| zero.clone()));
            labels.push(((j1, j2), mono.clone()));
        }
        let mut add = |mono: Vec<u32>, col: usize, w: &Scalar| {
            let r = base + mono_pos[&mono];
            rows[r][col] = &rows[r][col] + &RationalExpr::constant(&uni, w.clone());
        };
        let unit = vec![0u32; n];
        let bump = |m: &[u32], i: usize| {
            let mut v = m.to_vec();
            v[i - 1] += 1;
            v
        };
        add(unit.clone(), g_idx(j1, j2), &one);
        for k in 1..=n {
            add(bump(&unit, k), h_idx(k, j1, j2), &one);
            add(bump(&bump(&unit, k), j1), l_idx(k, j2), &half);
            add(bump(&bump(&unit, k), j2), l_idx(k, j1), &half);
            add(bump(&bump(&bump(&unit, k), j1), j2), m_idx(k), &one);
        }
    }

    match solve_linear(&rows, &rhs) {
        LinearSolution::Unique(sol) => Ok(CubicForm::from_tables(
            ctx.clone(),
            |j1, j2| sol[g_idx(j1, j2)].clone(),
            |k, j1, j2| sol[h_idx(k, j1, j2)].clone(),
            |k, j| sol[l_idx(k, j)].clone(),
            |k| sol[m_idx(k)].clone(),
        )
        .expect("solution entries are gradient-free")),
        LinearSolution::Inconsistent { row } => {
            let (pair, mono) = labels[row].clone();
            Err(NotCubicWitness::UnreachableMonomial { pair, monomial: JetMonomial(mono) })
        }
        LinearSolution::Underdetermined { .. } => {
            unreachable!("the table-to-coefficient map is injective")
        }
    }
}

/// The symmetrized coefficient conditions equivalent to the vanishing of a
/// gradient polynomial of degree at most three, keyed by sorted index
/// tuples: constant, linear, symmetrized quadratic, symmetrized cubic.
#[derive(Clone, Debug)]
pub struct CoefficientConditions {
    pub constant: RationalExpr,
    pub linear: BTreeMap<usize, RationalExpr>,
    pub quadratic: BTreeMap<(usize, usize), RationalExpr>,
    pub cubic: BTreeMap<(usize, usize, usize), RationalExpr>,
}

impl CoefficientConditions {
    pub fn all_zero(&self) -> bool {
        self.constant.is_zero()
            && self.linear.values().all(RationalExpr::is_zero)
            && self.quadratic.values().all(RationalExpr::is_zero)
            && self.cubic.values().all(RationalExpr::is_zero)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Vec<usize>, &RationalExpr)> {
        std::iter::once((Vec::new(), &self.constant))
            .chain(self.linear.iter().map(|(k, e)| (vec![*k], e)))
            .chain(self.quadratic.iter().map(|(k, e)| (vec![k.0, k.1], e)))
            .chain(self.cubic.iter().map(|(k, e)| (vec![k.0, k.1, k.2], e)))
    }
}

/// Reads off the symmetrized coefficient conditions of a gradient
/// polynomial of degree at most three. The condition attached to a sorted
/// tuple is the monomial coefficient weighted by the number of index
/// arrangements collapsing onto that monomial: a repeated pair weighs
/// twice, a repeated triple six times.
pub fn coefficient_annihilation(
    ctx: &JetContext,
    p: &RationalExpr,
) -> Result<CoefficientConditions, CubicError> {
    let uni = ctx.universe().clone();
    assert!(
        !p.denominator().mentions_any(uni.jet1_vars()) && !p.mentions_any(uni.jet2_vars()),
        "input must be polynomial in the gradient variables"
    );
    let n = ctx.n();
    let coeffs = jet_coefficients(ctx, p).expect("checked polynomial in gradient");
    let zero = || RationalExpr::zero(&uni);
    let mut out = CoefficientConditions {
        constant: zero(),
        linear: (1..=n).map(|k| (k, zero())).collect(),
        quadratic: (1..=n).flat_map(|a| (a..=n).map(move |b| (a, b))).map(|k| (k, zero())).collect(),
        cubic: (1..=n)
            .flat_map(|a| (a..=n).flat_map(move |b| (b..=n).map(move |c| (a, b, c))))
            .map(|k| (k, zero()))
            .collect(),
    };
    for (mono, c) in coeffs {
        let deg: u32 = mono.iter().sum();
        if deg > 3 {
            return Err(CubicError::DegreeTooHigh);
        }
        let mut tuple = Vec::new();
        for (i, &e) in mono.iter().enumerate() {
            for _ in 0..e {
                tuple.push(i + 1);
            }
        }
        // Permutations of positions fixing the sorted tuple.
        let mut weight = 1u64;
        let mut run = 1u64;
        for w in tuple.windows(2) {
            if w[0] == w[1] {
                run += 1;
                weight *= run;
            } else {
                run = 1;
            }
        }
        let weighted = c.scale(&scalar_int(weight as i64));
        match tuple.len() {
            0 => out.constant = weighted,
            1 => {
                out.linear.insert(tuple[0], weighted);
            }
            2 => {
                out.quadratic.insert((tuple[0], tuple[1]), weighted);
            }
            3 => {
                out.cubic.insert((tuple[0], tuple[1], tuple[2]), weighted);
            }
            _ => unreachable!(),
        }
    }
    Ok(out)
}

/// The four displayed families of first-order conditions on the tables,
/// evaluated verbatim. Keys carry `j2 < j3`; symmetrized upper indices are
/// stored sorted.
#[derive(Clone, Debug)]
pub struct FlatnessResiduals {
    pub fam1: BTreeMap<(usize, usize, usize), RationalExpr>,
    pub fam2: BTreeMap<(usize, usize, usize, usize), RationalExpr>,
    pub fam3: BTreeMap<(usize, usize, usize, usize, usize), RationalExpr>,
    pub fam4: BTreeMap<(usize, usize, usize, usize, usize, usize), RationalExpr>,
}

impl FlatnessResiduals {
    pub fn all_zero(&self) -> bool {
        self.fam1.values().all(RationalExpr::is_zero)
            && self.fam2.values().all(RationalExpr::is_zero)
            && self.fam3.values().all(RationalExpr::is_zero)
            && self.fam4.values().all(RationalExpr::is_zero)
    }

    /// First nonzero condition in canonical order (family, then key).
    pub fn first_nonzero(&self) -> Option<(&'static str, Vec<usize>, &RationalExpr)> {
        for (k, e) in &self.fam1 {
            if !e.is_zero() {
                return Some(("I'", vec![k.0, k.1, k.2], e));
            }
        }
        for (k, e) in &self.fam2 {
            if !e.is_zero() {
                return Some(("II'", vec![k.0, k.1, k.2, k.3], e));
            }
        }
        for (k, e) in &self.fam3 {
            if !e.is_zero() {
                return Some(("III'", vec![k.0, k.1, k.2, k.3, k.4], e));
            }
        }
        for (k, e) in &self.fam4 {
            if !e.is_zero() {
                return Some(("IV'", vec![k.0, k.1, k.2, k.3, k.4, k.5], e));
            }
        }
        None
    }

    pub fn counts(&self) -> [(usize, usize); 4] {
        let count = |it: &mut dyn Iterator<Item = &RationalExpr>| {
            let mut z = 0;
            let mut nz = 0;
            for e in it {
                if e.is_zero() {
                    z += 1;
                } else {
                    nz += 1;
                }
            }
            (z, nz)
        };
        [
            count(&mut self.fam1.values()),
            count(&mut self.fam2.values()),
            count(&mut self.fam3.values()),
            count(&mut self.fam4.values()),
        ]
    }
}

fn delta(a: usize, b: usize) -> bool {
    a == b
}

/// Evaluates the four displayed first-order families on concrete tables.
///
/// Family I:   d_{x^{j3}} G_{j1 j2} - d_{x^{j2}} G_{j1 j3}
///             + sum_k H^k_{j1 j2} G_{k j3} - sum_k H^k_{j1 j3} G_{k j2}.
/// Families II-IV follow their displayed forms, with the two-index
/// Kronecker symbols read as products of plain deltas and the one garbled
/// subscript in the first term of family III read as the second
/// symmetrized index (the reading is proven against the derived oracle in
/// the test suite).
///
/// Every residual is assembled as a polynomial numerator over the square
/// of the tables' common denominator and normalized once.
pub fn flatness_residuals(c: &CubicForm) -> FlatnessResiduals {
    let ctx = c.ctx().clone();
    let uni = ctx.universe().clone();
    let n = ctx.n();
    let x = |j: usize| uni.x(j);
    let yv = uni.y();
    let half = scalar(1, 2);
    let quarter = scalar(1, 4);

    let frame = crate::symcore::CommonDen::of(&uni, c.entries());
    let np = n * (n + 1) / 2;
    let nums: Vec<Polynomial> = c.entries().map(|e| frame.num(e)).collect();
    let g = |j1: usize, j2: usize| &nums[ctx.pair_index(j1, j2)];
    let h = |k: usize, j1: usize, j2: usize| &nums[np + (k - 1) * np + ctx.pair_index(j1, j2)];
    let l = |k: usize, j: usize| &nums[np + n * np + (k - 1) * n + (j - 1)];
    let m = |k: usize| &nums[np + n * np + n * n + (k - 1)];

    let mut fam1 = BTreeMap::new();
    let mut fam2 = BTreeMap::new();
    let mut fam3 = BTreeMap::new();
    let mut fam4 = BTreeMap::new();

    for j1 in 1..=n {
        for j2 in 1..=n {
            for j3 in j2 + 1..=n {
                let mut t = frame.deriv_num(g(j1, j2), x(j3));
                t = &t - &frame.deriv_num(g(j1, j3), x(j2));
                for k1 in 1..=n {
                    t = &t + &(h(k1, j1, j2) * g(k1, j3));
                    t = &t - &(h(k1, j1, j3) * g(k1, j2));
                }
                fam1.insert((j1, j2, j3), frame.finish_sq(t));

                for k1 in 1..=n {
                    let mut t = Polynomial::zero(&uni);
                    if delta(j3, k1) {
                        t = &t + &frame.deriv_num(g(j1, j2), yv);
                    }
                    if delta(j2, k1) {
                        t = &t - &frame.deriv_num(g(j1, j3), yv);
                    }
                    t = &t + &frame.deriv_num(h(k1, j1, j2), x(j3));
                    t = &t - &frame.deriv_num(h(k1, j1, j3), x(j2));
                    t = &t + &(g(j1, j3) * l(k1, j2)).scale(&half);
                    t = &t - &(g(j1, j2) * l(k1, j3)).scale(&half);
                    if delta(j1, k1) {
                        for k2 in 1..=n {
                            t = &t + &(g(k2, j3) * l(k2, j2)).scale(&half);
                            t = &t - &(g(k2, j2) * l(k2, j3)).scale(&half);
                        }
                    }
                    if delta(j2, k1) {
                        for k2 in 1..=n {
                            t = &t + &(g(k2, j3) * l(k2, j1)).scale(&half);
                        }
                    }
                    if delta(j3, k1) {
                        for k2 in 1..=n {
                            t = &t - &(g(k2, j2) * l(k2, j1)).scale(&half);
                        }
                    }
                    for k2 in 1..=n {
                        t = &t + &(h(k1, k2, j3) * h(k2, j1, j2));
                        t = &t - &(h(k1, k2, j2) * h(k2, j1, j3));
                    }
                    fam2.insert((j1, j2, j3, k1), frame.finish_sq(t));
                }

                for ka in 1..=n {
                    for kb in ka..=n {
                        let mut t = Polynomial::zero(&uni);
                        for (k1, k2) in [(ka, kb), (kb, ka)] {
                            if delta(j3, k2) {
                                t = &t + &frame.deriv_num(h(k1, j1, j2), yv);
                            }
                            if delta(j2, k2) {
                                t = &t - &frame.deriv_num(h(k1, j1, j3), yv);
                            }
                            if delta(j2, k2) {
                                t = &t + &frame.deriv_num(l(k1, j1), x(j3)).scale(&half);
                            }
                            if delta(j3, k2) {
                                t = &t - &frame.deriv_num(l(k1, j1), x(j2)).scale(&half);
                            }
                            if delta(j1, k2) {
                                t = &t + &frame.deriv_num(l(k1, j2), x(j3)).scale(&half);
                                t = &t - &frame.deriv_num(l(k1, j3), x(j2)).scale(&half);
                            }
                            if delta(j2, k2) {
                                t = &t + &(g(j1, j3) * m(k1));
                            }
                            if delta(j3, k2) {
                                t = &t - &(g(j1, j2) * m(k1));
                            }
                            if delta(j1, k1) && delta(j2, k2) {
                                for k3 in 1..=n {
                                    t = &t + &(g(k3, j3) * m(k3));
                                }
                            }
                            if delta(j1, k1) && delta(j3, k2) {
                                for k3 in 1..=n {
                                    t = &t - &(g(k3, j2) * m(k3));
                                }
                            }
                            if delta(j1, k1) {
                                for k3 in 1..=n {
                                    t = &t + &(h(k2, k3, j3) * l(k3, j2)).scale(&half);
                                    t = &t - &(h(k2, k3, j2) * l(k3, j3)).scale(&half);
                                }
                            }
                            if delta(j2, k1) {
                                for k3 in 1..=n {
                                    t = &t + &(h(k2, k3, j3) * l(k3, j1)).scale(&half);
                                }
                            }
                            if delta(j3, k1) {
                                for k3 in 1..=n {
                                    t = &t - &(h(k2, k3, j2) * l(k3, j1)).scale(&half);
                                }
                            }
                            if delta(j3, k1) {
                                for k3 in 1..=n {
                                    t = &t + &(h(k3, j1, j2) * l(k2, k3)).scale(&half);
                                }
                            }
                            if delta(j2, k1) {
                                for k3 in 1..=n {
                                    t = &t - &(h(k3, j1, j3) * l(k2, k3)).scale(&half);
                                }
                            }
                        }
                        fam3.insert((j1, j2, j3, ka, kb), frame.finish_sq(t));
                    }
                }

                for ka in 1..=n {
                    for kb in ka..=n {
                        for kc in kb..=n {
                            let mut t = Polynomial::zero(&uni);
                            for (k1, k2, k3) in permutations3(ka, kb, kc) {
                                if delta(j3, k3) && delta(j1, k2) {
                                    t = &t + &frame.deriv_num(l(k1, j2), yv).scale(&half);
                                }
                                if delta(j2, k3) && delta(j1, k2) {
                                    t = &t - &frame.deriv_num(l(k1, j3), yv).scale(&half);
                                }
                                if delta(j2, k3) && delta(j1, k2) {
                                    t = &t + &frame.deriv_num(m(k1), x(j3));
                                }
                                if delta(j3, k3) && delta(j1, k2) {
                                    t = &t - &frame.deriv_num(m(k1), x(j2));
                                }
                                if delta(j2, k3) && delta(j1, k1) {
                                    for k4 in 1..=n {
                                        t = &t + &(h(k2, k4, j3) * m(k4));
                                    }
                                }
                                if delta(j3, k3) && delta(j1, k1) {
                                    for k4 in 1..=n {
                                        t = &t - &(h(k2, k4, j2) * m(k4));
                                    }
                                }
                                if delta(j1, k1) && delta(j3, k3) {
                                    for k4 in 1..=n {
                                        t = &t + &(l(k2, k4) * l(k4, j2)).scale(&quarter);
                                    }
                                }
                                if delta(j1, k1) && delta(j2, k3) {
                                    for k4 in 1..=n {
                                        t = &t - &(l(k2, k4) * l(k4, j3)).scale(&quarter);
                                    }
                                }
                            }
                            fam4.insert((j1, j2, j3, ka, kb, kc), frame.finish_sq(t));
                        }
                    }
                }
            }
        }
    }
    FlatnessResiduals { fam1, fam2, fam3, fam4 }
}

fn permutations3(a: usize, b: usize, c: usize) -> [(usize, usize, usize); 6] {
    [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]
}

/// Per-triple symmetrized conditions derived mechanically from complete
/// integrability of the expanded system: the independent oracle behind the
/// displayed families.
#[derive(Clone, Debug)]
pub struct DerivedConditions {
    pub per_triple: BTreeMap<(usize, usize, usize), CoefficientConditions>,
}

impl DerivedConditions {
    pub fn all_zero(&self) -> bool {
        self.per_triple.values().all(CoefficientConditions::all_zero)
    }
}

pub fn derived_flatness_residuals(c: &CubicForm) -> DerivedConditions {
    let sys = expand_cubic(c);
    let res = integrability_residuals(&sys);
    let mut per_triple = BTreeMap::new();
    for (key, r) in &res.residuals {
        let conds = coefficient_annihilation(sys.ctx(), r)
            .expect("integrability residuals of the cubic shape have degree <= 3");
        per_triple.insert(*key, conds);
    }
    DerivedConditions { per_triple }
}

/// The curvature-type obstruction tensor at the identity fiber. Vanishes
/// exactly when the right-hand sides have the constrained cubic shape.
#[derive(Clone, Debug)]
pub struct ChernTensor {
    n: usize,
    s: Vec<RationalExpr>,
}

impl ChernTensor {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Entry `S^{alpha sigma}_{beta rho}`, all indices in `1..=n`.
    pub fn get(&self, alpha: usize, sigma: usize, beta: usize, rho: usize) -> &RationalExpr {
        let n = self.n;
        &self.s[(((alpha - 1) * n + (sigma - 1)) * n + (beta - 1)) * n + (rho - 1)]
    }

    pub fn is_zero(&self) -> bool {
        self.s.iter().all(RationalExpr::is_zero)
    }

    pub fn entries(&self) -> impl Iterator<Item = ((usize, usize, usize, usize), &RationalExpr)> {
        let n = self.n;
        (1..=n)
            .flat_map(move |a| {
                (1..=n).flat_map(move |s| {
                    (1..=n).flat_map(move |b| (1..=n).map(move |r| (a, s, b, r)))
                })
            })
            .zip(self.s.iter())
    }

    /// Pair-swap symmetry `S^{as}_{br} = S^{sa}_{rb}`.
    pub fn is_pair_symmetric(&self) -> bool {
        let n = self.n;
        for a in 1..=n {
            for s in 1..=n {
                for b in 1..=n {
                    for r in 1..=n {
                        if self.get(a, s, b, r) != self.get(s, a, r, b) {
                            return false;
                        }
                    }
                }
            }
        }
        true
    }
}

pub fn chern_tensor_at_identity(sys: &PdeSystem) -> ChernTensor {
    let ctx = sys.ctx();
    let uni = ctx.universe().clone();
    let n = ctx.n();
    let frame = crate::symcore::CommonDen::of(&uni, sys.entries().map(|(_, e)| e));
    let dy = |i: usize| uni.jet1(i);

    // When the shared denominator carries gradient variables the cheap
    // numerator-only derivatives below do not apply; fall back to generic
    // arithmetic (entries are small in that regime).
    if frame.den().mentions_any(uni.jet1_vars()) {
        return chern_tensor_generic(sys);
    }

    // Second gradient derivatives of the numerators, all over the shared
    // denominator.
    let nums: Vec<Polynomial> = sys.entries().map(|(_, e)| frame.num(e)).collect();
    let f2 = |g: usize, d: usize, e1: usize, e2: usize| -> Polynomial {
        nums[ctx.pair_index(g, d)].derivative(dy(e1)).derivative(dy(e2))
    };
    let mut tr: BTreeMap<(usize, usize), Polynomial> = BTreeMap::new();
    for b in 1..=n {
        for a in 1..=n {
            let mut t = Polynomial::zero(&uni);
            for g in 1..=n {
                t = &t + &f2(g, b, g, a);
            }
            tr.insert((b, a), t);
        }
    }
    let mut full_trace = Polynomial::zero(&uni);
    for g in 1..=n {
        for d in 1..=n {
            full_trace = &full_trace + &f2(g, d, g, d);
        }
    }

    let inv_np2 = scalar(1, (n + 2) as i64);
    let inv_np1np2 = scalar(1, ((n + 1) * (n + 2)) as i64);

    let mut s = Vec::with_capacity(n * n * n * n);
    for alpha in 1..=n {
        for sigma in 1..=n {
            for beta in 1..=n {
                for rho in 1..=n {
                    let mut t = Polynomial::zero(&uni);
                    if delta(sigma, rho) {
                        t = &t + &tr[&(beta, alpha)].scale(&inv_np2);
                    }
                    if delta(alpha, rho) {
                        t = &t + &tr[&(beta, sigma)].scale(&inv_np2);
                    }
                    if delta(sigma, beta) {
                        t = &t + &tr[&(rho, alpha)].scale(&inv_np2);
                    }
                    if delta(alpha, beta) {
                        t = &t + &tr[&(rho, sigma)].scale(&inv_np2);
                    }
                    let mut w = 0i64;
                    if delta(sigma, rho) && delta(alpha, beta) {
                        w += 1;
                    }
                    if delta(alpha, rho) && delta(sigma, beta) {
                        w += 1;
                    }
                    if w != 0 {
                        t = &t - &full_trace.scale(&(&inv_np1np2 * &scalar_int(w)));
                    }
                    t = &t - &f2(beta, rho, alpha, sigma);
                    s.push(frame.finish(t));
                }
            }
        }
    }
    ChernTensor { n, s }
}

fn chern_tensor_generic(sys: &PdeSystem) -> ChernTensor {
    let ctx = sys.ctx();
    let uni = ctx.universe().clone();
    let n = ctx.n();
    let dy = |i: usize| uni.jet1(i);
    let f2 = |g: usize, d: usize, e1: usize, e2: usize| -> RationalExpr {
        sys.f(g, d).derivative(dy(e1)).derivative(dy(e2))
    };
    let mut tr: BTreeMap<(usize, usize), RationalExpr> = BTreeMap::new();
    for b in 1..=n {
        for a in 1..=n {
            let terms: Vec<RationalExpr> = (1..=n).map(|g| f2(g, b, g, a)).collect();
            tr.insert((b, a), RationalExpr::sum(&uni, terms.iter()));
        }
    }
    let full: Vec<RationalExpr> = (1..=n)
        .flat_map(|g| (1..=n).map(move |d| (g, d)))
        .map(|(g, d)| f2(g, d, g, d))
        .collect();
    let full_trace = RationalExpr::sum(&uni, full.iter());

    let inv_np2 = scalar(1, (n + 2) as i64);
    let inv_np1np2 = scalar(1, ((n + 1) * (n + 2)) as i64);

    let mut s = Vec::with_capacity(n * n * n * n);
    for alpha in 1..=n {
        for sigma in 1..=n {
            for beta in 1..=n {
                for rho in 1..=n {
                    let mut terms: Vec<RationalExpr> = Vec::new();
                    if delta(sigma, rho) {
                        terms.push(tr[&(beta, alpha)].scale(&inv_np2));
                    }
                    if delta(alpha, rho) {
                        terms.push(tr[&(beta, sigma)].scale(&inv_np2));
                    }
                    if delta(sigma, beta) {
                        terms.push(tr[&(rho, alpha)].scale(&inv_np2));
                    }
                    if delta(alpha, beta) {
                        terms.push(tr[&(rho, sigma)].scale(&inv_np2));
                    }
                    let mut w = 0i64;
                    if delta(sigma, rho) && delta(alpha, beta) {
                        w += 1;
                    }
                    if delta(alpha, rho) && delta(sigma, beta) {
                        w += 1;
                    }
                    if w != 0 {
                        terms.push(-&full_trace.scale(&(&inv_np1np2 * &scalar_int(w))));
                    }
                    terms.push(-&f2(beta, rho, alpha, sigma));
                    s.push(RationalExpr::sum(&uni, terms.iter()));
                }
            }
        }
    }
    ChernTensor { n, s }
}

/// Verdict of the flatness decision procedure.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FlatnessVerdict {
    Flat,
    NotCubic(NotCubicWitness),
    CubicButNotIntegrable { family: &'static str, index: Vec<usize>, value: RationalExpr },
}

/// Point-equivalence to the flat system: the shape extraction must succeed
/// and all four first-order families must vanish. Witnesses name the first
/// failing condition in canonical order.
pub fn is_flat(sys: &PdeSystem) -> FlatnessVerdict {
    match extract_cubic(sys) {
        Err(w) => FlatnessVerdict::NotCubic(w),
        Ok(c) => {
            let res = flatness_residuals(&c);
            match res.first_nonzero() {
                None => FlatnessVerdict::Flat,
                Some((family, index, value)) => {
                    FlatnessVerdict::CubicButNotIntegrable { family, index, value: value.clone() }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symcore::RationalExpr;

    fn ctx2() -> JetContext {
        JetContext::new(2).unwrap()
    }

    fn dy(ctx: &JetContext, i: usize) -> RationalExpr {
        let uni = ctx.universe();
        RationalExpr::var(uni, uni.jet1(i))
    }

    #[test]
    fn expand_zero_tables_gives_flat_system() {
        let c = CubicForm::zero(ctx2());
        assert!(expand_cubic(&c).is_flat_zero());
    }

    #[test]
    fn expand_pure_m_table() {
        let ctx = ctx2();
        let uni = ctx.universe().clone();
        let one = RationalExpr::one(&uni);
        let z = RationalExpr::zero(&uni);
        let c = CubicForm::from_tables(
            ctx.clone(),
            |_, _| z.clone(),
            |_, _, _| z.clone(),
            |_, _| z.clone(),
            |k| if k == 1 { one.clone() } else { z.clone() },
        )
        .unwrap();
        let sys = expand_cubic(&c);
        let d1 = dy(&ctx, 1);
        let d2 = dy(&ctx, 2);
        assert_eq!(*sys.f(1, 1), d1.pow(3));
        assert_eq!(*sys.f(1, 2), &d1.pow(2) * &d2);
        assert_eq!(*sys.f(2, 2), &d1 * &d2.pow(2));
    }

    #[test]
    fn expand_pure_l_table() {
        let ctx = ctx2();
        let uni = ctx.universe().clone();
        let two = RationalExpr::int(&uni, 2);
        let z = RationalExpr::zero(&uni);
        let c = CubicForm::from_tables(
            ctx.clone(),
            |_, _| z.clone(),
            |_, _, _| z.clone(),
            |k, j| if k == 1 && j == 1 { two.clone() } else { z.clone() },
            |_| z.clone(),
        )
        .unwrap();
        let sys = expand_cubic(&c);
        let d1 = dy(&ctx, 1);
        let d2 = dy(&ctx, 2);
        assert_eq!(*sys.f(1, 1), d1.pow(2).scale(&scalar_int(2)));
        assert_eq!(*sys.f(1, 2), &d1 * &d2);
        assert!(sys.f(2, 2).is_zero());
    }

    #[test]
    fn extract_zero_system_gives_zero_tables() {
        let sys = PdeSystem::flat(ctx2());
        let c = extract_cubic(&sys).unwrap();
        assert!(c.is_zero());
    }

    #[test]
    fn extract_round_trip() {
        let ctx = ctx2();
        let uni = ctx.universe().clone();
        let z = RationalExpr::zero(&uni);
        let x2sq = RationalExpr::var(&uni, uni.x(2)).pow(2);
        let yv = RationalExpr::var(&uni, uni.y());
        let c = CubicForm::from_tables(
            ctx,
            |j1, j2| if (j1, j2) == (1, 1) { x2sq.clone() } else { z.clone() },
            |k, j1, j2| if (k, j1, j2) == (1, 1, 2) { yv.clone() } else { z.clone() },
            |_, _| z.clone(),
            |_| z.clone(),
        )
        .unwrap();
        let back = extract_cubic(&expand_cubic(&c)).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unreachable_monomial_is_rejected_with_witness() {
        let ctx = ctx2();
        let sq = dy(&ctx, 2).pow(2);
        let z = RationalExpr::zero(ctx.universe());
        let sys =
            PdeSystem::new(ctx, vec![vec![sq, z.clone()], vec![z.clone(), z.clone()]]).unwrap();
        match extract_cubic(&sys) {
            Err(NotCubicWitness::UnreachableMonomial { pair, monomial }) => {
                assert_eq!(pair, (1, 1));
                assert_eq!(monomial.0, vec![0, 2]);
            }
            other => panic!("expected unreachable-monomial witness, got {other:?}"),
        }
    }

    #[test]
    fn quartic_is_rejected_as_too_high() {
        let ctx = ctx2();
        let q = dy(&ctx, 1).pow(4);
        let z = RationalExpr::zero(ctx.universe());
        let sys =
            PdeSystem::new(ctx, vec![vec![q, z.clone()], vec![z.clone(), z.clone()]]).unwrap();
        assert!(matches!(
            extract_cubic(&sys),
            Err(NotCubicWitness::DegreeTooHigh { pair: (1, 1), .. })
        ));
    }

    #[test]
    fn annihilation_of_antisymmetric_quadratic_is_zero() {
        // dy[1]*dy[2] - dy[2]*dy[1] is the zero polynomial.
        let ctx = ctx2();
        let p = &(&dy(&ctx, 1) * &dy(&ctx, 2)) - &(&dy(&ctx, 2) * &dy(&ctx, 1));
        let conds = coefficient_annihilation(&ctx, &p).unwrap();
        assert!(conds.all_zero());
    }

    #[test]
    fn annihilation_weights_repeated_indices() {
        let ctx = ctx2();
        let p = &dy(&ctx, 1).pow(2) * &dy(&ctx, 2);
        let conds = coefficient_annihilation(&ctx, &p).unwrap();
        assert_eq!(conds.cubic[&(1, 1, 2)], RationalExpr::int(ctx.universe(), 2));
        let q = dy(&ctx, 1).pow(3);
        let conds = coefficient_annihilation(&ctx, &q).unwrap();
        assert_eq!(conds.cubic[&(1, 1, 1)], RationalExpr::int(ctx.universe(), 6));
    }

    #[test]
    fn annihilation_of_a_constant() {
        let ctx = ctx2();
        let five = RationalExpr::int(ctx.universe(), 5);
        let conds = coefficient_annihilation(&ctx, &five).unwrap();
        assert_eq!(conds.constant, five);
        assert!(conds.linear.values().all(RationalExpr::is_zero));
    }

    #[test]
    fn annihilation_rejects_quartics() {
        let ctx = ctx2();
        let q = dy(&ctx, 1).pow(4);
        assert!(matches!(coefficient_annihilation(&ctx, &q), Err(CubicError::DegreeTooHigh)));
    }

    #[test]
    fn zero_tables_have_zero_residuals_everywhere() {
        let c = CubicForm::zero(ctx2());
        assert!(flatness_residuals(&c).all_zero());
        assert!(derived_flatness_residuals(&c).all_zero());
    }

    #[test]
    fn g11_equals_y_violates_family_two() {
        let ctx = ctx2();
        let uni = ctx.universe().clone();
        let yv = RationalExpr::var(&uni, uni.y());
        let z = RationalExpr::zero(&uni);
        let c = CubicForm::from_tables(
            ctx,
            |j1, j2| if (j1, j2) == (1, 1) { yv.clone() } else { z.clone() },
            |_, _, _| z.clone(),
            |_, _| z.clone(),
            |_| z.clone(),
        )
        .unwrap();
        let res = flatness_residuals(&c);
        assert!(res.fam1.values().all(RationalExpr::is_zero));
        // The only surviving contribution is the dependent-variable
        // derivative of G[1][1] at (j1,j2,j3,k1) = (1,1,2,2).
        assert_eq!(res.fam2[&(1, 1, 2, 2)], RationalExpr::one(&uni));
        assert!(!res.all_zero());
        // The derived oracle must flag the same tables.
        assert!(!derived_flatness_residuals(&c).all_zero());
    }

    #[test]
    fn flat_system_is_flat() {
        let sys = PdeSystem::flat(ctx2());
        assert_eq!(is_flat(&sys), FlatnessVerdict::Flat);
    }

    #[test]
    fn f11_equals_y_is_cubic_but_not_integrable() {
        let ctx = ctx2();
        let uni = ctx.universe().clone();
        let yv = RationalExpr::var(&uni, uni.y());
        let z = RationalExpr::zero(&uni);
        let sys =
            PdeSystem::new(ctx, vec![vec![yv, z.clone()], vec![z.clone(), z.clone()]]).unwrap();
        match is_flat(&sys) {
            FlatnessVerdict::CubicButNotIntegrable { family, index, value } => {
                assert_eq!(family, "II'");
                assert_eq!(index, vec![1, 1, 2, 2]);
                assert_eq!(value, RationalExpr::one(&uni));
            }
            other => panic!("expected cubic-but-not-integrable, got {other:?}"),
        }
    }

    #[test]
    fn chern_tensor_of_flat_system_is_zero() {
        let sys = PdeSystem::flat(ctx2());
        assert!(chern_tensor_at_identity(&sys).is_zero());
    }

    #[test]
    fn chern_tensor_of_quartic_is_nonzero() {
        let ctx = ctx2();
        let q = dy(&ctx, 1).pow(4);
        let z = RationalExpr::zero(ctx.universe());
        let sys =
            PdeSystem::new(ctx, vec![vec![q, z.clone()], vec![z.clone(), z.clone()]]).unwrap();
        let s = chern_tensor_at_identity(&sys);
        assert!(!s.is_zero());
        assert!(s.is_pair_symmetric());
    }

    #[test]
    fn chern_tensor_vanishes_on_cubic_shapes() {
        let ctx = ctx2();
        let uni = ctx.universe().clone();
        let z = RationalExpr::zero(&uni);
        let two = RationalExpr::int(&uni, 2);
        let c = CubicForm::from_tables(
            ctx,
            |_, _| z.clone(),
            |_, _, _| z.clone(),
            |k, j| if (k, j) == (1, 1) { two.clone() } else { z.clone() },
            |k| if k == 1 { RationalExpr::one(&uni) } else { z.clone() },
        )
        .unwrap();
        let s = chern_tensor_at_identity(&expand_cubic(&c));
        assert!(s.is_zero());
    }
}
