//! Point transformations and their jet prolongations: Jacobian and
//! modified-Jacobian determinants, the square functions, synthesis of
//! flat-equivalent systems, pull-back verification, and the second-order
//! prolongation of vector fields.

use std::sync::Arc;

use crate::cubic::CubicForm;
use crate::jetspace::{formal_total_derivative, JetContext, PdeSystem};
use crate::symcore::{
    determinant, same_universe, scalar, scalar_int, solve_linear, LinearSolution, RationalExpr,
    Var, VarUniverse,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransformError {
    #[error("the Jacobian determinant vanishes identically")]
    DegenerateJacobian,
    #[error("component mentions jet variables")]
    ComponentMentionsJets,
}

fn check_point_function(uni: &Arc<VarUniverse>, e: &RationalExpr) -> Result<(), TransformError> {
    assert!(same_universe(e.universe(), uni), "universe mismatch");
    if e.mentions_any(uni.jet1_vars()) || e.mentions_any(uni.jet2_vars()) {
        return Err(TransformError::ComponentMentionsJets);
    }
    Ok(())
}

/// An invertible change of coordinates `(x, y) -> (X(x, y), Y(x, y))`;
/// invertibility is witnessed by a not-identically-zero Jacobian
/// determinant, checked at construction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PointTransformation {
    ctx: JetContext,
    x: Vec<RationalExpr>,
    y: RationalExpr,
    jac: RationalExpr,
}

impl PointTransformation {
    pub fn new(ctx: JetContext, x: Vec<RationalExpr>, y: RationalExpr) -> Result<Self, TransformError> {
        let n = ctx.n();
        assert_eq!(x.len(), n, "expected {n} target components");
        let uni = ctx.universe();
        for e in x.iter().chain(std::iter::once(&y)) {
            check_point_function(uni, e)?;
        }
        let jac = jacobian_of(&ctx, &x, &y);
        if jac.is_zero() {
            return Err(TransformError::DegenerateJacobian);
        }
        Ok(PointTransformation { ctx, x, y, jac })
    }

    pub fn identity(ctx: JetContext) -> Self {
        let uni = ctx.universe().clone();
        let x = (1..=ctx.n()).map(|i| RationalExpr::var(&uni, uni.x(i))).collect();
        let y = RationalExpr::var(&uni, uni.y());
        Self::new(ctx, x, y).expect("identity is nondegenerate")
    }

    pub fn ctx(&self) -> &JetContext {
        &self.ctx
    }

    pub fn n(&self) -> usize {
        self.ctx.n()
    }

    /// Target component `X[l]` for `l <= n`, `Y` for `l = n+1`.
    pub fn component(&self, l: usize) -> &RationalExpr {
        if l == self.n() + 1 {
            &self.y
        } else {
            &self.x[l - 1]
        }
    }

    pub fn x_component(&self, l: usize) -> &RationalExpr {
        &self.x[l - 1]
    }

    pub fn y_component(&self) -> &RationalExpr {
        &self.y
    }

    /// The (n+1) x (n+1) Jacobian determinant, rows `X[1]..X[n], Y`,
    /// columns the derivatives by `x[1]..x[n], y`.
    pub fn jacobian(&self) -> &RationalExpr {
        &self.jac
    }

    /// First derivative of component `r` by the aliased base variable `c`.
    fn d1(&self, r: usize, c: usize) -> RationalExpr {
        self.component(r).derivative(self.ctx.base_var(c))
    }

    /// Second derivative of component `r` by the aliased pair `(a, b)`.
    fn d2(&self, r: usize, a: usize, b: usize) -> RationalExpr {
        self.component(r).derivative(self.ctx.base_var(a)).derivative(self.ctx.base_var(b))
    }
}

fn jacobian_of(ctx: &JetContext, x: &[RationalExpr], y: &RationalExpr) -> RationalExpr {
    let n = ctx.n();
    let comp = |r: usize| if r == n + 1 { y } else { &x[r - 1] };
    let m: Vec<Vec<RationalExpr>> = (1..=n + 1)
        .map(|r| (1..=n + 1).map(|c| comp(r).derivative(ctx.base_var(c))).collect())
        .collect();
    determinant(&m).expect("square by construction")
}

/// The modified-Jacobian ratios: entry `(j1, j2, k1)` is the Jacobian with
/// its `k1`-th column of first derivatives replaced by the column of second
/// derivatives by the aliased pair `(j1, j2)`, divided by the Jacobian.
/// All indices range over `1..=n+1` with the dependent variable as the top
/// slot; the table is symmetric in `(j1, j2)`.
#[derive(Clone, Debug)]
pub struct SquareTable {
    ctx: JetContext,
    entries: Vec<RationalExpr>,
}

impl SquareTable {
    pub fn ctx(&self) -> &JetContext {
        &self.ctx
    }

    pub fn n(&self) -> usize {
        self.ctx.n()
    }

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

    /// Total number of entries, `(n+1) * (n+1)(n+2)/2`.
    pub fn entry_count(n: usize) -> usize {
        (n + 1) * (n + 1) * (n + 2) / 2
    }
}

/// Computes the full square table of a transformation. Each modified
/// determinant is expanded along its replaced column, reusing the signed
/// cofactors of the base Jacobian matrix.
pub fn squares(t: &PointTransformation) -> SquareTable {
    let ctx = t.ctx().clone();
    let uni = ctx.universe().clone();
    let n = ctx.n();
    let m = n + 1;

    let mut cof = vec![vec![RationalExpr::zero(&uni); m]; m];
    for r in 1..=m {
        for c in 1..=m {
            let sub: Vec<Vec<RationalExpr>> = (1..=m)
                .filter(|&rr| rr != r)
                .map(|rr| (1..=m).filter(|&cc| cc != c).map(|cc| t.d1(rr, cc)).collect())
                .collect();
            let minor = determinant(&sub).expect("square by construction");
            cof[r - 1][c - 1] = if (r + c) % 2 == 0 { minor } else { -&minor };
        }
    }

    let mut entries = Vec::with_capacity(SquareTable::entry_count(n));
    for (j1, j2) in ctx.pairs_ext() {
        let col: Vec<RationalExpr> = (1..=m).map(|r| t.d2(r, j1, j2)).collect();
        for k1 in 1..=m {
            let modified =
                RationalExpr::dot(&uni, col.iter().zip(cof.iter().map(|row| &row[k1 - 1])));
            entries.push(&modified / t.jacobian());
        }
    }
    SquareTable { ctx, entries }
}

/// Builds the system whose solutions are exactly the functions carried to
/// affine functions by the transformation: gradient-cubic right-hand sides
/// with square-function coefficients.
pub fn synthesize(t: &PointTransformation) -> PdeSystem {
    synthesize_from_squares(&squares(t))
}

pub fn synthesize_from_squares(sq: &SquareTable) -> PdeSystem {
    let ctx = sq.ctx().clone();
    let uni = ctx.universe().clone();
    let n = ctx.n();
    let top = n + 1;
    let half = scalar(1, 2);
    let dy = |i: usize| RationalExpr::var(&uni, uni.jet1(i));
    let mut entries = Vec::new();
    for (j1, j2) in ctx.pairs() {
        let mut terms: Vec<RationalExpr> = vec![-sq.get(j1, j2, top)];
        for k1 in 1..=n {
            let mut constant = vec![sq.get(j1, j2, k1).clone()];
            if k1 == j1 {
                constant.push(-sq.get(j2, top, top));
            }
            if k1 == j2 {
                constant.push(-sq.get(j1, top, top));
            }
            let mut lin1 = vec![sq.get(j2, top, k1).clone()];
            if k1 == j2 {
                lin1.push(-&sq.get(top, top, top).scale(&half));
            }
            let mut lin2 = vec![sq.get(j1, top, k1).clone()];
            if k1 == j1 {
                lin2.push(-&sq.get(top, top, top).scale(&half));
            }
            let constant = RationalExpr::sum(&uni, constant.iter());
            let lin1 = RationalExpr::sum(&uni, lin1.iter());
            let lin2 = RationalExpr::sum(&uni, lin2.iter());
            let bracket_terms = [
                constant,
                &dy(j1) * &lin1,
                &dy(j2) * &lin2,
                &(&dy(j1) * &dy(j2)) * sq.get(top, top, k1),
            ];
            let bracket = RationalExpr::sum(&uni, bracket_terms.iter());
            terms.push(&dy(k1) * &bracket);
        }
        entries.push(RationalExpr::sum(&uni, terms.iter()));
    }
    PdeSystem::from_upper(ctx, entries).expect("synthesized entries are jet2-free")
}

/// Reads the coefficient tables directly off the square table.
pub fn ghlm_from_squares(t: &PointTransformation) -> CubicForm {
    ghlm_from_square_table(&squares(t))
}

pub fn ghlm_from_square_table(sq: &SquareTable) -> CubicForm {
    let ctx = sq.ctx().clone();
    let n = ctx.n();
    let top = n + 1;
    let uni = ctx.universe().clone();
    CubicForm::from_tables(
        ctx.clone(),
        |j1, j2| -sq.get(j1, j2, top),
        |k, j1, j2| {
            let mut terms = vec![sq.get(j1, j2, k).clone()];
            if k == j1 {
                terms.push(-sq.get(j2, top, top));
            }
            if k == j2 {
                terms.push(-sq.get(j1, top, top));
            }
            RationalExpr::sum(&uni, terms.iter())
        },
        |k, j| {
            let mut terms = vec![sq.get(j, top, k).scale(&scalar_int(2))];
            if k == j {
                terms.push(-sq.get(top, top, top));
            }
            RationalExpr::sum(&uni, terms.iter())
        },
        |k| sq.get(top, top, k).clone(),
    )
    .expect("square functions are jet-free")
}

/// The pulled-back flatness relations: for each `k` the vector equation
/// `D_k(DX) . Y_X - D_k(DY)` with the target gradient `Y_X` solved exactly
/// from `DX . Y_X = DY`, and every second-jet variable then replaced by the
/// system's right-hand side. The result is an n x n array indexed `(k, i)`,
/// symmetric in its indices, and zero exactly when the transformation maps
/// `sys` to the flat system.
pub fn pullback_residual(
    t: &PointTransformation,
    sys: &PdeSystem,
) -> Result<Vec<Vec<RationalExpr>>, TransformError> {
    let ctx = t.ctx().clone();
    assert!(ctx == *sys.ctx(), "transformation and system contexts differ");
    let uni = ctx.universe().clone();
    let n = ctx.n();

    let dx: Vec<Vec<RationalExpr>> = (1..=n)
        .map(|i| {
            (1..=n)
                .map(|j| formal_total_derivative(&ctx, t.x_component(j), i).expect("index in range"))
                .collect()
        })
        .collect();
    let dyv: Vec<RationalExpr> = (1..=n)
        .map(|i| formal_total_derivative(&ctx, t.y_component(), i).expect("index in range"))
        .collect();

    let yx = match solve_linear(&dx, &dyv) {
        LinearSolution::Unique(sol) => sol,
        _ => return Err(TransformError::DegenerateJacobian),
    };

    let mut out = Vec::with_capacity(n);
    for k in 1..=n {
        let mut row = Vec::with_capacity(n);
        for i in 1..=n {
            let mut terms: Vec<RationalExpr> = Vec::with_capacity(n + 1);
            for j in 1..=n {
                let dkdx =
                    formal_total_derivative(&ctx, &dx[i - 1][j - 1], k).expect("index in range");
                terms.push(&dkdx * &yx[j - 1]);
            }
            terms.push(-&formal_total_derivative(&ctx, &dyv[i - 1], k).expect("index in range"));
            let raw = RationalExpr::sum(&uni, terms.iter());
            row.push(sys.substitute_second_jets(&raw));
        }
        out.push(row);
    }
    Ok(out)
}

/// An infinitesimal point transformation: generator coefficients in the
/// base and dependent directions, functions of `(x, y)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VectorField {
    ctx: JetContext,
    xi: Vec<RationalExpr>,
    eta: RationalExpr,
}

impl VectorField {
    pub fn new(ctx: JetContext, xi: Vec<RationalExpr>, eta: RationalExpr) -> Result<Self, TransformError> {
        assert_eq!(xi.len(), ctx.n(), "expected one coefficient per base variable");
        let uni = ctx.universe();
        for e in xi.iter().chain(std::iter::once(&eta)) {
            check_point_function(uni, e)?;
        }
        Ok(VectorField { ctx, xi, eta })
    }

    pub fn ctx(&self) -> &JetContext {
        &self.ctx
    }

    pub fn xi(&self, k: usize) -> &RationalExpr {
        &self.xi[k - 1]
    }

    pub fn eta(&self) -> &RationalExpr {
        &self.eta
    }
}

/// Second-order prolongation coefficients of a vector field: the symmetric
/// array of coefficients on the Hessian directions, gradient-cubic.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SecondProlongation {
    ctx: JetContext,
    y2: Vec<RationalExpr>,
}

impl SecondProlongation {
    pub fn get(&self, j1: usize, j2: usize) -> &RationalExpr {
        &self.y2[self.ctx.pair_index(j1, j2)]
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), &RationalExpr)> {
        self.ctx.pairs().zip(self.y2.iter())
    }

    pub fn is_zero(&self) -> bool {
        self.y2.iter().all(RationalExpr::is_zero)
    }
}

/// Closed-form second-order prolongation coefficients, with the two-index
/// Kronecker symbols read as products of plain deltas.
pub fn prolong2(v: &VectorField) -> SecondProlongation {
    let ctx = v.ctx().clone();
    let uni = ctx.universe().clone();
    let n = ctx.n();
    let x = |j: usize| uni.x(j);
    let yv = uni.y();
    let dy = |i: usize| RationalExpr::var(&uni, uni.jet1(i));
    let d2 = |e: &RationalExpr, a: Var, b: Var| e.derivative(a).derivative(b);

    let mut y2 = Vec::new();
    for (j1, j2) in ctx.pairs() {
        let mut terms: Vec<RationalExpr> = vec![d2(v.eta(), x(j1), x(j2))];
        for k1 in 1..=n {
            let mut bracket: Vec<RationalExpr> = Vec::new();
            if k1 == j1 {
                bracket.push(d2(v.eta(), x(j2), yv));
            }
            if k1 == j2 {
                bracket.push(d2(v.eta(), x(j1), yv));
            }
            bracket.push(-&d2(v.xi(k1), x(j1), x(j2)));
            terms.push(&dy(k1) * &RationalExpr::sum(&uni, bracket.iter()));
        }
        for k1 in 1..=n {
            for k2 in 1..=n {
                let mut bracket: Vec<RationalExpr> = Vec::new();
                if k1 == j1 && k2 == j2 {
                    bracket.push(d2(v.eta(), yv, yv));
                }
                if k1 == j1 {
                    bracket.push(-&d2(v.xi(k2), x(j2), yv));
                }
                if k1 == j2 {
                    bracket.push(-&d2(v.xi(k2), x(j1), yv));
                }
                if bracket.is_empty() {
                    continue;
                }
                terms.push(&(&dy(k1) * &dy(k2)) * &RationalExpr::sum(&uni, bracket.iter()));
            }
        }
        // The cubic sum collapses onto k1 = j1, k2 = j2.
        for k3 in 1..=n {
            let coef = -&d2(v.xi(k3), yv, yv);
            terms.push(&(&(&dy(j1) * &dy(j2)) * &dy(k3)) * &coef);
        }
        y2.push(RationalExpr::sum(&uni, terms.iter()));
    }
    SecondProlongation { ctx, y2 }
}

/// A column of a 3 x 3 modified Jacobian determinant for n = 2: either the
/// first derivatives by one aliased variable or the second derivatives by
/// an aliased pair.
#[derive(Clone, Copy, Debug)]
pub enum ColumnSpec {
    First(usize),
    Second(usize, usize),
}

/// Modified Jacobian determinant for n = 2 with explicit columns.
pub fn modified_det_n2(t: &PointTransformation, cols: [ColumnSpec; 3]) -> RationalExpr {
    assert_eq!(t.n(), 2, "explicit display is for n = 2");
    let m: Vec<Vec<RationalExpr>> = (1..=3)
        .map(|r| {
            cols.iter()
                .map(|c| match *c {
                    ColumnSpec::First(a) => t.d1(r, a),
                    ColumnSpec::Second(a, b) => t.d2(r, a, b),
                })
                .collect()
        })
        .collect();
    determinant(&m).expect("3 x 3 by construction")
}

/// The three expanded determinantal identities for n = 2: combinations of
/// modified Jacobian determinants and jet monomials that vanish identically
/// once every second-jet variable is replaced by the synthesized right-hand
/// side. The stray mixed-derivative entry in the third display is corrected
/// to the `(2,2)` pair throughout its column, matching the translation
/// dictionary between the prolongation coefficients and the determinants.
pub fn hessian_determinant_identities_n2(
    t: &PointTransformation,
    sys: &PdeSystem,
) -> [RationalExpr; 3] {
    let ctx = t.ctx().clone();
    let uni = ctx.universe().clone();
    assert_eq!(ctx.n(), 2);
    let dy = |i: usize| RationalExpr::var(&uni, uni.jet1(i));
    let jet2 = |i: usize, j: usize| RationalExpr::var(&uni, uni.jet2(i, j));
    use ColumnSpec::{First, Second};
    let y = 3usize;
    let det = |cols: [ColumnSpec; 3]| modified_det_n2(t, cols);
    let two = scalar_int(2);

    let e1 = {
        let terms = [
            &jet2(1, 1) * t.jacobian(),
            det([First(1), First(2), Second(1, 1)]),
            &dy(1)
                * &(&det([First(1), First(2), Second(1, y)]).scale(&two)
                    - &det([Second(1, 1), First(2), First(y)])),
            &dy(2) * &-&det([First(1), Second(1, 1), First(y)]),
            &(&dy(1) * &dy(1))
                * &(&det([First(1), First(2), Second(y, y)])
                    - &det([Second(1, y), First(2), First(y)]).scale(&two)),
            &(&dy(1) * &dy(2)) * &-&det([First(1), Second(1, y), First(y)]).scale(&two),
            &(&dy(1) * &(&dy(1) * &dy(1))) * &-&det([Second(y, y), First(2), First(y)]),
            &(&(&dy(1) * &dy(1)) * &dy(2)) * &-&det([First(1), Second(y, y), First(y)]),
        ];
        RationalExpr::sum(&uni, terms.iter())
    };

    let e2 = {
        let mixed = [
            det([First(1), First(2), Second(y, y)]),
            -&det([Second(1, y), First(2), First(y)]),
            -&det([First(1), Second(2, y), First(y)]),
        ];
        let terms = [
            &jet2(1, 2) * t.jacobian(),
            det([First(1), First(2), Second(1, 2)]),
            &dy(1)
                * &(&det([First(1), First(2), Second(2, y)])
                    - &det([Second(1, 2), First(2), First(y)])),
            &dy(2)
                * &(&det([First(1), First(2), Second(1, y)])
                    - &det([First(1), Second(1, 2), First(y)])),
            &(&dy(1) * &dy(1)) * &-&det([Second(2, y), First(2), First(y)]),
            &(&dy(1) * &dy(2)) * &RationalExpr::sum(&uni, mixed.iter()),
            &(&dy(2) * &dy(2)) * &-&det([First(1), Second(1, y), First(y)]),
            &(&(&dy(1) * &dy(1)) * &dy(2)) * &-&det([Second(y, y), First(2), First(y)]),
            &(&dy(1) * &(&dy(2) * &dy(2))) * &-&det([First(1), Second(y, y), First(y)]),
        ];
        RationalExpr::sum(&uni, terms.iter())
    };

    let e3 = {
        let terms = [
            &jet2(2, 2) * t.jacobian(),
            det([First(1), First(2), Second(2, 2)]),
            &dy(1) * &-&det([Second(2, 2), First(2), First(y)]),
            &dy(2)
                * &(&det([First(1), First(2), Second(2, y)]).scale(&two)
                    - &det([First(1), Second(2, 2), First(y)])),
            &(&dy(1) * &dy(2)) * &-&det([Second(2, y), First(2), First(y)]).scale(&two),
            &(&dy(2) * &dy(2))
                * &(&det([First(1), First(2), Second(y, y)])
                    - &det([First(1), Second(2, y), First(y)]).scale(&two)),
            &(&dy(1) * &(&dy(2) * &dy(2))) * &-&det([Second(y, y), First(2), First(y)]),
            &(&dy(2) * &(&dy(2) * &dy(2))) * &-&det([First(1), Second(y, y), First(y)]),
        ];
        RationalExpr::sum(&uni, terms.iter())
    };

    [
        sys.substitute_second_jets(&e1),
        sys.substitute_second_jets(&e2),
        sys.substitute_second_jets(&e3),
    ]
}

/// The displayed n = 2 specialization of the synthesized system, written
/// term by term with explicit square functions.
pub fn synthesized_system_n2_explicit(t: &PointTransformation) -> [RationalExpr; 3] {
    assert_eq!(t.n(), 2);
    let sq = squares(t);
    let uni = t.ctx().universe().clone();
    let dy = |i: usize| RationalExpr::var(&uni, uni.jet1(i));
    let two = scalar_int(2);
    let y = 3usize;
    let s = |a: usize, b: usize, k: usize| sq.get(a, b, k).clone();

    let f11 = {
        let terms = [
            -&s(1, 1, 3),
            &dy(1) * &(&s(1, 1, 1) - &s(1, y, 3).scale(&two)),
            &dy(2) * &s(1, 1, 2),
            &(&dy(1) * &dy(1)) * &(&s(1, y, 1).scale(&two) - &s(y, y, 3)),
            &(&dy(1) * &dy(2)) * &s(1, y, 2).scale(&two),
            &(&dy(1) * &(&dy(1) * &dy(1))) * &s(y, y, 1),
            &(&(&dy(1) * &dy(1)) * &dy(2)) * &s(y, y, 2),
        ];
        RationalExpr::sum(&uni, terms.iter())
    };
    let f12 = {
        let mixed = [-&s(y, y, 3), s(1, y, 1), s(2, y, 2)];
        let terms = [
            -&s(1, 2, 3),
            &dy(1) * &(&s(1, 2, 1) - &s(2, y, 3)),
            &dy(2) * &(&s(1, 2, 2) - &s(1, y, 3)),
            &(&dy(1) * &dy(1)) * &s(2, y, 1),
            &(&dy(1) * &dy(2)) * &RationalExpr::sum(&uni, mixed.iter()),
            &(&dy(2) * &dy(2)) * &s(1, y, 2),
            &(&(&dy(1) * &dy(1)) * &dy(2)) * &s(y, y, 1),
            &(&dy(1) * &(&dy(2) * &dy(2))) * &s(y, y, 2),
        ];
        RationalExpr::sum(&uni, terms.iter())
    };
    let f22 = {
        let terms = [
            -&s(2, 2, 3),
            &dy(1) * &s(2, 2, 1),
            &dy(2) * &(&s(2, 2, 2) - &s(2, y, 3).scale(&two)),
            &(&dy(1) * &dy(2)) * &s(2, y, 1).scale(&two),
            &(&dy(2) * &dy(2)) * &(&s(2, y, 2).scale(&two) - &s(y, y, 3)),
            &(&dy(1) * &(&dy(2) * &dy(2))) * &s(y, y, 1),
            &(&dy(2) * &(&dy(2) * &dy(2))) * &s(y, y, 2),
        ];
        RationalExpr::sum(&uni, terms.iter())
    };
    [f11, f12, f22]
}

/// The displayed n = 2 specialization of the second prolongation, written
/// term by term.
pub fn prolong2_n2_explicit(v: &VectorField) -> [RationalExpr; 3] {
    let ctx = v.ctx().clone();
    assert_eq!(ctx.n(), 2);
    let uni = ctx.universe().clone();
    let x = |j: usize| uni.x(j);
    let yv = uni.y();
    let dy = |i: usize| RationalExpr::var(&uni, uni.jet1(i));
    let d2 = |e: &RationalExpr, a: Var, b: Var| e.derivative(a).derivative(b);
    let two = scalar_int(2);

    let eta = v.eta();
    let xi1 = v.xi(1);
    let xi2 = v.xi(2);

    let y11 = {
        let terms = [
            d2(eta, x(1), x(1)),
            &dy(1) * &(&d2(eta, x(1), yv).scale(&two) - &d2(xi1, x(1), x(1))),
            &dy(2) * &-&d2(xi2, x(1), x(1)),
            &(&dy(1) * &dy(1)) * &(&d2(eta, yv, yv) - &d2(xi1, x(1), yv).scale(&two)),
            &(&dy(1) * &dy(2)) * &-&d2(xi2, x(1), yv).scale(&two),
            &(&dy(1) * &(&dy(1) * &dy(1))) * &-&d2(xi1, yv, yv),
            &(&(&dy(1) * &dy(1)) * &dy(2)) * &-&d2(xi2, yv, yv),
        ];
        RationalExpr::sum(&uni, terms.iter())
    };
    let y12 = {
        let mixed = [d2(eta, yv, yv), -&d2(xi1, x(1), yv), -&d2(xi2, x(2), yv)];
        let terms = [
            d2(eta, x(1), x(2)),
            &dy(1) * &(&d2(eta, x(2), yv) - &d2(xi1, x(1), x(2))),
            &dy(2) * &(&d2(eta, x(1), yv) - &d2(xi2, x(1), x(2))),
            &(&dy(1) * &dy(1)) * &-&d2(xi1, x(2), yv),
            &(&dy(1) * &dy(2)) * &RationalExpr::sum(&uni, mixed.iter()),
            &(&dy(2) * &dy(2)) * &-&d2(xi2, x(1), yv),
            &(&(&dy(1) * &dy(1)) * &dy(2)) * &-&d2(xi1, yv, yv),
            &(&dy(1) * &(&dy(2) * &dy(2))) * &-&d2(xi2, yv, yv),
        ];
        RationalExpr::sum(&uni, terms.iter())
    };
    let y22 = {
        let terms = [
            d2(eta, x(2), x(2)),
            &dy(1) * &-&d2(xi1, x(2), x(2)),
            &dy(2) * &(&d2(eta, x(2), yv).scale(&two) - &d2(xi2, x(2), x(2))),
            &(&dy(1) * &dy(2)) * &-&d2(xi1, x(2), yv).scale(&two),
            &(&dy(2) * &dy(2)) * &(&d2(eta, yv, yv) - &d2(xi2, x(2), yv).scale(&two)),
            &(&dy(1) * &(&dy(2) * &dy(2))) * &-&d2(xi1, yv, yv),
            &(&dy(2) * &(&dy(2) * &dy(2))) * &-&d2(xi2, yv, yv),
        ];
        RationalExpr::sum(&uni, terms.iter())
    };
    [y11, y12, y22]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cubic::{expand_cubic, extract_cubic};
    use crate::jetspace::integrability_residuals;
    use crate::symcore::RationalExpr;

    fn ctx2() -> JetContext {
        JetContext::new(2).unwrap()
    }

    /// X = id, Y = y + x1^2.
    fn shift_by_square() -> PointTransformation {
        let ctx = ctx2();
        let uni = ctx.universe().clone();
        let x1 = RationalExpr::var(&uni, uni.x(1));
        let x2 = RationalExpr::var(&uni, uni.x(2));
        let y = RationalExpr::var(&uni, uni.y());
        PointTransformation::new(ctx, vec![x1.clone(), x2], &y + &x1.pow(2)).unwrap()
    }

    /// X = id, Y = y (1 + x1).
    fn scale_by_one_plus_x1() -> PointTransformation {
        let ctx = ctx2();
        let uni = ctx.universe().clone();
        let x1 = RationalExpr::var(&uni, uni.x(1));
        let x2 = RationalExpr::var(&uni, uni.x(2));
        let y = RationalExpr::var(&uni, uni.y());
        let yy = &y * &(&RationalExpr::one(&uni) + &x1);
        PointTransformation::new(ctx, vec![x1, x2], yy).unwrap()
    }

    #[test]
    fn identity_jacobian_is_one() {
        let t = PointTransformation::identity(ctx2());
        assert!(t.jacobian().is_one());
    }

    #[test]
    fn triangular_jacobian() {
        let t = scale_by_one_plus_x1();
        let uni = t.ctx().universe().clone();
        let expected = &RationalExpr::one(&uni) + &RationalExpr::var(&uni, uni.x(1));
        assert_eq!(*t.jacobian(), expected);
    }

    #[test]
    fn shear_jacobian_is_one() {
        let ctx = ctx2();
        let uni = ctx.universe().clone();
        let x1 = RationalExpr::var(&uni, uni.x(1));
        let x2 = RationalExpr::var(&uni, uni.x(2));
        let y = RationalExpr::var(&uni, uni.y());
        let t = PointTransformation::new(ctx, vec![&x1 + &x2, x2], y).unwrap();
        assert!(t.jacobian().is_one());
    }

    #[test]
    fn degenerate_transformations_are_rejected() {
        let ctx = ctx2();
        let uni = ctx.universe().clone();
        let x1 = RationalExpr::var(&uni, uni.x(1));
        let y = RationalExpr::var(&uni, uni.y());
        let r = PointTransformation::new(ctx, vec![x1.clone(), x1], y);
        assert!(matches!(r, Err(TransformError::DegenerateJacobian)));
    }

    #[test]
    fn identity_squares_vanish() {
        let t = PointTransformation::identity(ctx2());
        assert!(squares(&t).iter().all(|(_, e)| e.is_zero()));
    }

    #[test]
    fn squares_of_shift_by_square() {
        let t = shift_by_square();
        let sq = squares(&t);
        for ((j1, j2, k1), e) in sq.iter() {
            if (j1, j2, k1) == (1, 1, 3) {
                assert_eq!(*e, RationalExpr::int(t.ctx().universe(), 2));
            } else {
                assert!(e.is_zero(), "unexpected nonzero square at ({j1},{j2},{k1}): {e}");
            }
        }
    }

    #[test]
    fn squares_of_scale_transformation() {
        let t = scale_by_one_plus_x1();
        let uni = t.ctx().universe().clone();
        let sq = squares(&t);
        let expected = RationalExpr::one(&uni)
            .try_div(&(&RationalExpr::one(&uni) + &RationalExpr::var(&uni, uni.x(1))))
            .unwrap();
        for ((j1, j2, k1), e) in sq.iter() {
            if (j1, j2, k1) == (1, 3, 3) {
                assert_eq!(*e, expected);
            } else {
                assert!(e.is_zero(), "unexpected nonzero square at ({j1},{j2},{k1}): {e}");
            }
        }
    }

    #[test]
    fn synthesize_identity_is_flat() {
        let t = PointTransformation::identity(ctx2());
        assert!(synthesize(&t).is_flat_zero());
    }

    #[test]
    fn synthesize_shift_by_square() {
        let t = shift_by_square();
        let sys = synthesize(&t);
        assert_eq!(*sys.f(1, 1), RationalExpr::int(t.ctx().universe(), -2));
        assert!(sys.f(1, 2).is_zero());
        assert!(sys.f(2, 2).is_zero());
    }

    #[test]
    fn synthesize_scale_transformation() {
        let t = scale_by_one_plus_x1();
        let uni = t.ctx().universe().clone();
        let sys = synthesize(&t);
        let dy1 = RationalExpr::var(&uni, uni.jet1(1));
        let dy2 = RationalExpr::var(&uni, uni.jet1(2));
        let denom = &RationalExpr::one(&uni) + &RationalExpr::var(&uni, uni.x(1));
        assert_eq!(*sys.f(1, 1), dy1.scale(&scalar_int(-2)).try_div(&denom).unwrap());
        // Solutions are y = (a + b x1 + c x2)/(1 + x1), whose mixed second
        // derivative is -c/(1+x1)^2, so the off-diagonal entry is forced.
        assert_eq!(*sys.f(1, 2), dy2.scale(&scalar_int(-1)).try_div(&denom).unwrap());
        assert!(sys.f(2, 2).is_zero());
    }

    #[test]
    fn tables_from_squares_match_extraction() {
        for t in [shift_by_square(), scale_by_one_plus_x1()] {
            let sys = synthesize(&t);
            let c = extract_cubic(&sys).unwrap();
            assert_eq!(c, ghlm_from_squares(&t));
            assert_eq!(expand_cubic(&c), sys);
        }
    }

    #[test]
    fn ghlm_worked_instances() {
        let t = shift_by_square();
        let c = ghlm_from_squares(&t);
        assert_eq!(*c.g(1, 1), RationalExpr::int(t.ctx().universe(), -2));
        assert!(c.g(1, 2).is_zero() && c.g(2, 2).is_zero());
        assert!((1..=2).all(|k| (1..=2).all(|j| c.l(k, j).is_zero())));

        let t = scale_by_one_plus_x1();
        let uni = t.ctx().universe().clone();
        let c = ghlm_from_squares(&t);
        let denom = &RationalExpr::one(&uni) + &RationalExpr::var(&uni, uni.x(1));
        let expected = RationalExpr::int(&uni, -2).try_div(&denom).unwrap();
        assert_eq!(*c.h(1, 1, 1), expected);
        assert!(c.g(1, 1).is_zero());
    }

    #[test]
    fn synthesized_systems_are_integrable() {
        for t in [shift_by_square(), scale_by_one_plus_x1()] {
            assert!(integrability_residuals(&synthesize(&t)).all_zero());
        }
    }

    #[test]
    fn pullback_of_matching_system_vanishes() {
        let t = PointTransformation::identity(ctx2());
        let sys = PdeSystem::flat(ctx2());
        let r = pullback_residual(&t, &sys).unwrap();
        assert!(r.iter().flatten().all(RationalExpr::is_zero));

        let t = shift_by_square();
        let sys = synthesize(&t);
        let r = pullback_residual(&t, &sys).unwrap();
        assert!(r.iter().flatten().all(RationalExpr::is_zero));
    }

    #[test]
    fn pullback_against_wrong_system_reports_the_obstruction() {
        let t = shift_by_square();
        let flat = PdeSystem::flat(ctx2());
        let r = pullback_residual(&t, &flat).unwrap();
        // The (k, i) = (1, 1) entry keeps the constant second derivative.
        assert_eq!(r[0][0], RationalExpr::int(t.ctx().universe(), -2));
        assert_eq!(r[0][1], r[1][0]);
    }

    #[test]
    fn prolongation_of_scaling_field_vanishes() {
        let ctx = ctx2();
        let uni = ctx.universe().clone();
        let x1 = RationalExpr::var(&uni, uni.x(1));
        let x2 = RationalExpr::var(&uni, uni.x(2));
        let y = RationalExpr::var(&uni, uni.y());
        let v = VectorField::new(ctx, vec![x1, x2], y).unwrap();
        assert!(prolong2(&v).is_zero());
    }

    #[test]
    fn prolongation_worked_instance() {
        let ctx = ctx2();
        let uni = ctx.universe().clone();
        let x1y = &RationalExpr::var(&uni, uni.x(1)) * &RationalExpr::var(&uni, uni.y());
        let z = RationalExpr::zero(&uni);
        let v = VectorField::new(ctx, vec![x1y, z.clone()], z).unwrap();
        let p = prolong2(&v);
        let dy1 = RationalExpr::var(&uni, uni.jet1(1));
        assert_eq!(*p.get(1, 1), dy1.pow(2).scale(&scalar_int(-2)));
    }

    #[test]
    fn explicit_n2_prolongation_matches_general_formula() {
        let ctx = ctx2();
        let uni = ctx.universe().clone();
        let x1 = RationalExpr::var(&uni, uni.x(1));
        let x2 = RationalExpr::var(&uni, uni.x(2));
        let y = RationalExpr::var(&uni, uni.y());
        let v = VectorField::new(
            ctx,
            vec![&x1.pow(2) + &(&x2 * &y), &y.pow(2) - &x1],
            &(&x1 * &x2) * &y,
        )
        .unwrap();
        let p = prolong2(&v);
        let [e11, e12, e22] = prolong2_n2_explicit(&v);
        assert_eq!(*p.get(1, 1), e11);
        assert_eq!(*p.get(1, 2), e12);
        assert_eq!(*p.get(2, 2), e22);
    }

    #[test]
    fn explicit_n2_synthesis_matches_general_formula() {
        for t in [shift_by_square(), scale_by_one_plus_x1()] {
            let sys = synthesize(&t);
            let [f11, f12, f22] = synthesized_system_n2_explicit(&t);
            assert_eq!(*sys.f(1, 1), f11);
            assert_eq!(*sys.f(1, 2), f12);
            assert_eq!(*sys.f(2, 2), f22);
        }
    }

    #[test]
    fn determinant_identities_vanish_on_synthesized_systems() {
        for t in [shift_by_square(), scale_by_one_plus_x1()] {
            let sys = synthesize(&t);
            for e in hessian_determinant_identities_n2(&t, &sys) {
                assert!(e.is_zero(), "identity failed: {e}");
            }
        }
    }
}
