//! Exact determinants and linear solving over the rational-function field.

use std::sync::Arc;

use crate::symcore::gcd::lcm;
use crate::symcore::poly::Polynomial;
use crate::symcore::ratexpr::RationalExpr;
use crate::symcore::vars::VarUniverse;
use crate::symcore::SymError;

/// Exact determinant: cofactor expansion for k <= 3, fraction-free Bareiss
/// elimination on a denominator-cleared polynomial matrix for k >= 4.
pub fn determinant(m: &[Vec<RationalExpr>]) -> Result<RationalExpr, SymError> {
    let k = m.len();
    if k == 0 || m.iter().any(|row| row.len() != k) {
        return Err(SymError::NonSquareMatrix);
    }
    let uni = Arc::clone(m[0][0].universe());
    Ok(match k {
        1 => m[0][0].clone(),
        2 => &(&m[0][0] * &m[1][1]) - &(&m[0][1] * &m[1][0]),
        3 => det3(&uni, m),
        _ => det_bareiss(&uni, m),
    })
}

fn det3(uni: &Arc<VarUniverse>, m: &[Vec<RationalExpr>]) -> RationalExpr {
    let minor = |r: usize, c: usize| -> RationalExpr {
        let rows: Vec<usize> = (0..3).filter(|&i| i != r).collect();
        let cols: Vec<usize> = (0..3).filter(|&j| j != c).collect();
        &(&m[rows[0]][cols[0]] * &m[rows[1]][cols[1]]) - &(&m[rows[0]][cols[1]] * &m[rows[1]][cols[0]])
    };
    let mut terms = Vec::new();
    for c in 0..3 {
        let cof = minor(0, c);
        let signed = if c == 1 { -&m[0][c] } else { m[0][c].clone() };
        terms.push((signed, cof));
    }
    RationalExpr::dot(uni, terms.iter().map(|(a, b)| (a, b)))
}

fn det_bareiss(uni: &Arc<VarUniverse>, m: &[Vec<RationalExpr>]) -> RationalExpr {
    let k = m.len();
    // Clear denominators row by row; det = det(poly matrix) / prod(row lcms).
    let mut rows: Vec<Vec<Polynomial>> = Vec::with_capacity(k);
    let mut scale = Polynomial::one(uni);
    for row in m {
        let mut d = Polynomial::one(uni);
        for e in row {
            d = lcm(&d, e.denominator());
        }
        let cleared: Vec<Polynomial> = row
            .iter()
            .map(|e| {
                let f = d.div_exact(e.denominator()).expect("lcm divisible by denominator");
                e.numerator() * &f
            })
            .collect();
        scale = &scale * &d;
        rows.push(cleared);
    }

    let mut sign_flip = false;
    let mut prev = Polynomial::one(uni);
    for step in 0..k {
        if rows[step][step].is_zero() {
            match (step + 1..k).find(|&r| !rows[r][step].is_zero()) {
                Some(r) => {
                    rows.swap(step, r);
                    sign_flip = !sign_flip;
                }
                None => return RationalExpr::zero(uni),
            }
        }
        if step == k - 1 {
            break;
        }
        for i in step + 1..k {
            for j in step + 1..k {
                let t = &(&rows[step][step] * &rows[i][j]) - &(&rows[i][step] * &rows[step][j]);
                rows[i][j] = t.div_exact(&prev).expect("Bareiss division is exact");
            }
            rows[i][step] = Polynomial::zero(uni);
        }
        prev = rows[step][step].clone();
    }
    let mut det = rows[k - 1][k - 1].clone();
    if sign_flip {
        det = -&det;
    }
    RationalExpr::new(det, scale).expect("row scale is nonzero")
}

/// Outcome of exact Gaussian elimination on `A x = b`.
pub enum LinearSolution {
    /// The unique solution.
    Unique(Vec<RationalExpr>),
    /// No solution; carries the index of the offending input row.
    Inconsistent { row: usize },
    /// Infinitely many solutions: a particular solution (free variables set
    /// to one) plus a kernel basis vector per free variable.
    Underdetermined { particular: Vec<RationalExpr>, kernel: Vec<Vec<RationalExpr>> },
}

/// Solves `A x = b` by exact Gaussian elimination. Columns are eliminated
/// left to right; within a column the pivot is the nonzero entry of lowest
/// total degree (numerator plus denominator), ties broken by lowest row
/// index.
pub fn solve_linear(a: &[Vec<RationalExpr>], b: &[RationalExpr]) -> LinearSolution {
    assert!(!a.is_empty(), "empty system");
    assert_eq!(a.len(), b.len(), "row count mismatch");
    let rows = a.len();
    let cols = a[0].len();
    assert!(a.iter().all(|r| r.len() == cols), "ragged matrix");
    let uni = Arc::clone(if cols > 0 { a[0][0].universe() } else { b[0].universe() });

    let mut m: Vec<Vec<RationalExpr>> = a.to_vec();
    let mut rhs: Vec<RationalExpr> = b.to_vec();
    // Original row index per working row, for inconsistency reporting.
    let mut origin: Vec<usize> = (0..rows).collect();

    let mut pivot_of_col: Vec<Option<usize>> = vec![None; cols];
    let mut used_rows = vec![false; rows];

    for col in 0..cols {
        let deg = |e: &RationalExpr| e.numerator().total_degree() + e.denominator().total_degree();
        let pivot = (0..rows)
            .filter(|&r| !used_rows[r] && !m[r][col].is_zero())
            .min_by_key(|&r| (deg(&m[r][col]), r));
        let Some(p) = pivot else { continue };
        pivot_of_col[col] = Some(p);
        used_rows[p] = true;
        let inv = m[p][col].recip().expect("pivot is nonzero");
        for j in 0..cols {
            m[p][j] = &m[p][j] * &inv;
        }
        rhs[p] = &rhs[p] * &inv;
        for r in 0..rows {
            if r == p || m[r][col].is_zero() {
                continue;
            }
            let f = m[r][col].clone();
            for j in 0..cols {
                m[r][j] = &m[r][j] - &(&f * &m[p][j]);
            }
            rhs[r] = &rhs[r] - &(&f * &rhs[p]);
        }
    }

    for r in 0..rows {
        if !used_rows[r] && !rhs[r].is_zero() {
            return LinearSolution::Inconsistent { row: origin[r] };
        }
    }
    let _ = &mut origin;

    let free_cols: Vec<usize> = (0..cols).filter(|&c| pivot_of_col[c].is_none()).collect();
    if free_cols.is_empty() {
        let mut x = vec![RationalExpr::zero(&uni); cols];
        for col in 0..cols {
            let p = pivot_of_col[col].unwrap();
            x[col] = rhs[p].clone();
        }
        return LinearSolution::Unique(x);
    }

    let one = RationalExpr::one(&uni);
    let solve_with = |free_vals: &dyn Fn(usize) -> RationalExpr, rhs_on: bool| -> Vec<RationalExpr> {
        let mut x = vec![RationalExpr::zero(&uni); cols];
        for &c in &free_cols {
            x[c] = free_vals(c);
        }
        for col in 0..cols {
            if let Some(p) = pivot_of_col[col] {
                let mut v = if rhs_on { rhs[p].clone() } else { RationalExpr::zero(&uni) };
                for &fc in &free_cols {
                    if !m[p][fc].is_zero() {
                        v = &v - &(&m[p][fc] * &x[fc]);
                    }
                }
                x[col] = v;
            }
        }
        x
    };

    let particular = solve_with(&|_| one.clone(), true);
    let kernel = free_cols
        .iter()
        .map(|&fc| {
            solve_with(
                &|c| if c == fc { one.clone() } else { RationalExpr::zero(&uni) },
                false,
            )
        })
        .collect();
    LinearSolution::Underdetermined { particular, kernel }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symcore::vars::VarUniverse;

    fn u() -> Arc<VarUniverse> {
        VarUniverse::new(2)
    }

    #[test]
    fn identity_determinants() {
        let u = u();
        let id3: Vec<Vec<RationalExpr>> = (0..3)
            .map(|i| (0..3).map(|j| RationalExpr::int(&u, (i == j) as i64)).collect())
            .collect();
        assert!(determinant(&id3).unwrap().is_one());
    }

    #[test]
    fn lower_triangular_cofactor_case() {
        let u = u();
        let y = RationalExpr::var(&u, u.y());
        let one_plus_x = &RationalExpr::one(&u) + &RationalExpr::var(&u, u.x(1));
        let z = RationalExpr::zero(&u);
        let one = RationalExpr::one(&u);
        let m = vec![
            vec![one.clone(), z.clone(), z.clone()],
            vec![z.clone(), one.clone(), z.clone()],
            vec![y, z.clone(), one_plus_x.clone()],
        ];
        assert_eq!(determinant(&m).unwrap(), one_plus_x);
    }

    #[test]
    fn zero_row_kills_determinant() {
        let u = u();
        let z = RationalExpr::zero(&u);
        let one = RationalExpr::one(&u);
        let two = RationalExpr::int(&u, 2);
        let m = vec![
            vec![z.clone(), z.clone(), z.clone()],
            vec![z.clone(), one.clone(), z.clone()],
            vec![two, z.clone(), one.clone()],
        ];
        assert!(determinant(&m).unwrap().is_zero());
    }

    #[test]
    fn bareiss_matches_cofactor_on_4x4() {
        let u = u();
        let x = RationalExpr::var(&u, u.x(1));
        let y = RationalExpr::var(&u, u.y());
        let one = RationalExpr::one(&u);
        // Block diagonal: det = (x*x - y) * (1*x - y*1)
        let z = RationalExpr::zero(&u);
        let m = vec![
            vec![x.clone(), y.clone(), z.clone(), z.clone()],
            vec![one.clone(), x.clone(), z.clone(), z.clone()],
            vec![z.clone(), z.clone(), one.clone(), y.clone()],
            vec![z.clone(), z.clone(), one.clone(), x.clone()],
        ];
        let expected = &(&(&x * &x) - &y) * &(&x - &y);
        assert_eq!(determinant(&m).unwrap(), expected);
    }

    #[test]
    fn non_square_is_an_error() {
        let u = u();
        let one = RationalExpr::one(&u);
        assert!(matches!(determinant(&[vec![one.clone()], vec![one]]), Err(SymError::NonSquareMatrix)));
    }

    #[test]
    fn solve_identity_returns_rhs() {
        let u = u();
        let one = RationalExpr::one(&u);
        let z = RationalExpr::zero(&u);
        let x = RationalExpr::var(&u, u.x(1));
        let a = vec![vec![one.clone(), z.clone()], vec![z.clone(), one.clone()]];
        let b = vec![x.clone(), one.clone()];
        match solve_linear(&a, &b) {
            LinearSolution::Unique(sol) => assert_eq!(sol, b),
            _ => panic!("expected unique solution"),
        }
    }

    #[test]
    fn inconsistent_rows_are_reported() {
        let u = u();
        let one = RationalExpr::one(&u);
        let a = vec![vec![one.clone()], vec![one.clone()]];
        let b = vec![one.clone(), RationalExpr::int(&u, 2)];
        match solve_linear(&a, &b) {
            LinearSolution::Inconsistent { row } => assert_eq!(row, 1),
            _ => panic!("expected inconsistency"),
        }
    }

    #[test]
    fn underdetermined_uses_unit_free_variables() {
        let u = u();
        let x = RationalExpr::var(&u, u.x(1));
        let one = RationalExpr::one(&u);
        let a = vec![vec![x.clone(), one.clone()]];
        let b = vec![&x + &one];
        match solve_linear(&a, &b) {
            LinearSolution::Underdetermined { particular, kernel } => {
                assert_eq!(particular, vec![one.clone(), one.clone()]);
                assert_eq!(kernel.len(), 1);
                // A . k = x * (-1/x) + 1 * 1 = 0.
                assert_eq!(kernel[0][0], (&-&one).try_div(&x).unwrap());
                assert_eq!(kernel[0][1], one);
            }
            _ => panic!("expected underdetermined"),
        }
    }
}
