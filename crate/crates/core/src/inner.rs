//! Inner convex solve: `min_p ½‖A p − b‖² + ½ ridge ‖p‖²` s.t. `G p = c`, `H p ≤ d`.
//!
//! Uses the Goldfarb–Idnani dual active-set method, which starts from the
//! unconstrained minimiser and needs no feasible initial point. The final
//! working set is re-solved directly so the returned triple is exact to
//! rounding on that set.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::design::IntegratedDesign;
use crate::error::{Error, Result};
use crate::problem::ConstraintSet;

#[derive(Debug, Clone)]
pub struct InnerSolution {
    pub p: DVector<f64>,
    /// Equality multipliers, stationarity `L_pp p − Aᵀb + Gᵀλ + Hᵀμ = 0`.
    pub lambda: DVector<f64>,
    /// Inequality multipliers, zero where inactive.
    pub mu: DVector<f64>,
    pub active: Vec<bool>,
    pub objective: f64,
    pub ridge: f64,
    /// Set when any inequality is active at the optimum.
    pub regularity_warning: bool,
    pub phi_snapshot: DVector<f64>,
    lpp: DMatrix<f64>,
    factor_lpp: Cholesky<f64, Dyn>,
    /// Working rows `[G; H_active]`.
    working: DMatrix<f64>,
    factor_schur: Option<Cholesky<f64, Dyn>>,
    slack: DVector<f64>,
    eq_matrix: DMatrix<f64>,
    ineq_matrix: DMatrix<f64>,
}

/// Solution of the linearised KKT system
/// `[L  Gᵀ  Hᵀ; G 0 0; diag(μ)H 0 diag(h)] w = r` with `h = H p − d`.
#[derive(Debug, Clone, PartialEq)]
pub struct KktTangent {
    pub w1: DVector<f64>,
    pub w2: DVector<f64>,
    pub w3: DVector<f64>,
}

/// Feasibility slack below which an inequality counts as active.
const ACTIVE_TOL: f64 = 1e-10;

fn factor(m: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if m.nrows() == 0 {
        return Ok(Cholesky::new(m).expect("empty matrix"));
    }
    let c = Cholesky::new(m).ok_or(Error::Singular {
        condition: f64::INFINITY,
    })?;
    let condition = condition_of(&c);
    if !condition.is_finite() || condition > 1e18 {
        return Err(Error::Singular { condition });
    }
    Ok(c)
}

fn condition_of(c: &Cholesky<f64, Dyn>) -> f64 {
    let l = c.l_dirty().diagonal();
    let (lo, hi) = l.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    (hi / lo).powi(2)
}

/// Minimiser of `½pᵀQp − qᵀp` subject to `N p = r` for the given rows.
/// Returns `p` and multipliers `u` with `Q p − q = Nᵀ u`.
fn solve_on_rows(
    chol: &Cholesky<f64, Dyn>,
    q: &DVector<f64>,
    n: &DMatrix<f64>,
    r: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let p0 = chol.solve(q);
    if n.nrows() == 0 {
        return Ok((p0, DVector::zeros(0)));
    }
    let x = chol.solve(&n.transpose());
    let s = n * &x;
    let sc = Cholesky::new(s.clone()).ok_or(Error::Singular {
        condition: f64::INFINITY,
    })?;
    // N(p0 + X u) = r  with Q p − q = Nᵀ u  =>  p = p0 + X u
    let u = sc.solve(&(r - n * &p0));
    Ok((p0 + &x * &u, u))
}

/// Solves the inner problem for one design.
pub fn solve_inner(design: &IntegratedDesign, constraints: &ConstraintSet, ridge: f64) -> Result<InnerSolution> {
    let n = design.n_cols();
    if constraints.n_linear() != n {
        return Err(Error::DimensionMismatch(format!(
            "constraints cover {} linear parameters, design has {n}",
            constraints.n_linear()
        )));
    }
    if !(ridge >= 0.0) {
        return Err(Error::InvalidOption(format!("ridge must be nonnegative, got {ridge}")));
    }
    if !design.is_finite() {
        return Err(Error::NonFiniteBasis {
            basis: usize::MAX,
            experiment: usize::MAX,
            node: usize::MAX,
        });
    }
    let mut lpp = design.gram();
    for i in 0..n {
        lpp[(i, i)] += ridge;
    }
    let q = design.at_b();
    let chol = factor(lpp.clone())?;
    let g = &constraints.eq_matrix;
    let c = &constraints.eq_rhs;
    let h = &constraints.ineq_matrix;
    let d = &constraints.ineq_rhs;
    let me = g.nrows();
    let mi = h.nrows();

    // Goldfarb–Idnani with constraints in the form a_iᵀp ≥ b_i for
    // inequalities (a = −H_i, b = −d_i); equalities are never dropped.
    let mut working: Vec<usize> = Vec::new(); // inequality indices
    let eq_and = |w: &[usize]| -> (DMatrix<f64>, DVector<f64>) {
        let mut rows = DMatrix::zeros(me + w.len(), n);
        let mut rhs = DVector::zeros(me + w.len());
        rows.rows_mut(0, me).copy_from(g);
        rhs.rows_mut(0, me).copy_from(c);
        for (k, &i) in w.iter().enumerate() {
            rows.row_mut(me + k).copy_from(&h.row(i));
            rhs[me + k] = d[i];
        }
        (rows, rhs)
    };
    let (n0, r0) = eq_and(&working);
    let (mut p, _) = solve_on_rows(&chol, &q, &n0, &r0)?;
    // multipliers of working inequalities in the ≥ form (= μ)
    let mut u: Vec<f64> = Vec::new();
    let max_iter = 10 * (n + mi + 10);
    let mut iter = 0;
    loop {
        iter += 1;
        if iter > max_iter {
            return Err(Error::Infeasible(format!(
                "active-set iteration did not settle in {max_iter} steps"
            )));
        }
        // most violated inequality
        let mut worst: Option<(usize, f64)> = None;
        for i in 0..mi {
            if working.contains(&i) {
                continue;
            }
            let row = h.row(i);
            let viol = row.dot(&p.transpose()) - d[i];
            let tol = 1e-12 * (1.0 + d[i].abs() + row.norm() * p.norm());
            if viol > tol && worst.is_none_or(|(_, v)| viol > v) {
                worst = Some((i, viol));
            }
        }
        let Some((k, _)) = worst else { break };
        let a_k = -h.row(k).transpose();
        let mut t_added = 0.0; // multiplier of k accumulated during drops
        loop {
            let (nw, _) = eq_and(&working);
            // z = primal direction, r = dual direction
            let qa = chol.solve(&a_k);
            let (z, r) = if nw.nrows() == 0 {
                (qa.clone(), DVector::zeros(0))
            } else {
                let x = chol.solve(&nw.transpose());
                let s = &nw * &x;
                let sc = Cholesky::new(s).ok_or(Error::Singular {
                    condition: f64::INFINITY,
                })?;
                let r = sc.solve(&(&nw * &qa));
                (&qa - &x * &r, r)
            };
            // working rows hold H_i while the ≥ form uses −H_i
            let r_ineq: Vec<f64> = (0..working.len()).map(|k2| -r[me + k2]).collect();
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for (k2, &rv) in r_ineq.iter().enumerate() {
                if rv > 0.0 {
                    let t = u[k2] / rv;
                    if t < t1 {
                        t1 = t;
                        drop = Some(k2);
                    }
                }
            }
            let s_k = a_k.dot(&p) + d[k];
            let za = z.dot(&a_k);
            // z vanishes when a_k is spanned by the working normals; in
            // floating point it only shrinks to about eps times the
            // conditioning, hence the loose cutoff
            let z_small = z.norm() <= 1e-9 * qa.norm();
            let t2 = if z_small || za <= 0.0 { f64::INFINITY } else { -s_k / za };
            let t = t1.min(t2);
            if !t.is_finite() {
                return Err(Error::Infeasible(format!(
                    "inequality {k} cannot be satisfied together with the working set"
                )));
            }
            for (k2, rv) in r_ineq.iter().enumerate() {
                u[k2] -= t * rv;
            }
            t_added += t;
            if t2 <= t1 {
                p += &z * t;
                working.push(k);
                u.push(t_added);
                break;
            }
            if !z_small {
                p += &z * t;
            }
            let l = drop.unwrap();
            working.remove(l);
            u.remove(l);
        }
    }

    // polish on the final working set
    working.sort_unstable();
    let (nw, rw) = eq_and(&working);
    let (mut p, mut uw) = solve_on_rows(&chol, &q, &nw, &rw)?;
    // Two refinement sweeps with the stationarity residual taken through A
    // rather than the Gram matrix, which recovers most of the accuracy lost
    // to forming AᵀA.
    for _ in 0..2 {
        let mut grad = design.transpose_apply(&design.residuals(&p));
        grad.axpy(ridge, &p, 1.0);
        let rho = nw.tr_mul(&uw) - grad;
        let feas = &rw - &nw * &p;
        let (dp, du) = solve_on_rows(&chol, &rho, &nw, &feas)?;
        p += dp;
        uw += du;
    }
    let scale = 1.0 + p.amax();
    let eq_gap = (g * &p - c).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let ineq_gap = (h * &p - d).iter().fold(0.0f64, |m, &v| m.max(v));
    if eq_gap.max(ineq_gap) > 1e-8 * scale {
        return Err(Error::Infeasible(format!(
            "constraint violation {:.1e} at the final working set",
            eq_gap.max(ineq_gap)
        )));
    }
    // Q p − q = Nᵀ u_w  and stationarity Q p − q + Gᵀλ + Hᵀμ = 0
    let lambda = DVector::from_fn(me, |i, _| -uw[i]);
    let mut mu = DVector::zeros(mi);
    let mut active = vec![false; mi];
    for (k2, &i) in working.iter().enumerate() {
        mu[i] = (-uw[me + k2]).max(0.0);
        active[i] = true;
    }
    let slack = h * &p - d;
    let factor_schur = if nw.nrows() == 0 {
        None
    } else {
        let x = chol.solve(&nw.transpose());
        Some(factor(&nw * x)?)
    };
    let objective = design.loss(&p, ridge);
    let regularity_warning = active.iter().any(|&a| a);
    Ok(InnerSolution {
        p,
        lambda,
        mu,
        active,
        objective,
        ridge,
        regularity_warning,
        phi_snapshot: design.phi().clone(),
        lpp,
        factor_lpp: chol,
        working: nw,
        factor_schur,
        slack,
        eq_matrix: g.clone(),
        ineq_matrix: h.clone(),
    })
}

impl InnerSolution {
    /// `AᵀA + ridge·I`
    pub fn lpp(&self) -> &DMatrix<f64> {
        &self.lpp
    }

    /// Working constraint rows `[G; H_active]`.
    pub fn working_rows(&self) -> &DMatrix<f64> {
        &self.working
    }

    /// `H p − d`
    pub fn slack(&self) -> &DVector<f64> {
        &self.slack
    }

    pub fn condition_estimate(&self) -> f64 {
        condition_of(&self.factor_lpp)
    }

    pub fn solve_lpp(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.factor_lpp.solve(rhs)
    }

    /// Stationarity, feasibility and complementarity residual norms.
    pub fn kkt_residual(&self, design: &IntegratedDesign, constraints: &ConstraintSet) -> KktResidual {
        let stat = &self.lpp * &self.p - design.at_b()
            + constraints.eq_matrix.transpose() * &self.lambda
            + constraints.ineq_matrix.transpose() * &self.mu;
        let eq = &constraints.eq_matrix * &self.p - &constraints.eq_rhs;
        let h = &constraints.ineq_matrix * &self.p - &constraints.ineq_rhs;
        KktResidual {
            stationarity: stat.norm(),
            equality: eq.amax(),
            inequality: h.iter().fold(0.0f64, |a, &v| a.max(v)),
            complementarity: self.mu.iter().zip(h.iter()).fold(0.0f64, |a, (m, v)| a.max((m * v).abs())),
            dual: self.mu.iter().fold(0.0f64, |a, &m| a.max(-m)),
        }
    }

    /// Solves the linearised KKT system with right-hand side `(r1, r2, r3)`.
    ///
    /// Active rows are eliminated as extra equalities (strict complementarity);
    /// inactive rows are divided through by their slack.
    pub fn solve_tangent(&self, r1: &DVector<f64>, r2: &DVector<f64>, r3: &DVector<f64>) -> Result<KktTangent> {
        let n = self.p.len();
        let me = self.lambda.len();
        let mi = self.mu.len();
        if r1.len() != n || r2.len() != me || r3.len() != mi {
            return Err(Error::DimensionMismatch(format!(
                "tangent right-hand side has blocks ({}, {}, {}), expected ({n}, {me}, {mi})",
                r1.len(),
                r2.len(),
                r3.len()
            )));
        }
        let active: Vec<usize> = (0..mi).filter(|&i| self.active[i]).collect();
        // inactive rows: w3_i = (r3_i − μ_i H_i w1)/h_i with μ_i = 0
        let mut w3 = DVector::zeros(mi);
        let mut rhs1 = r1.clone();
        for i in 0..mi {
            if !self.active[i] {
                let hi = self.slack[i];
                if hi.abs() <= ACTIVE_TOL {
                    return Err(Error::Singular { condition: f64::INFINITY });
                }
                w3[i] = r3[i] / hi;
                rhs1 -= self.ineq_matrix.row(i).transpose() * w3[i];
            }
        }
        let mut r_e = DVector::zeros(me + active.len());
        r_e.rows_mut(0, me).copy_from(r2);
        for (k, &i) in active.iter().enumerate() {
            r_e[me + k] = if self.mu[i] > 0.0 { r3[i] / self.mu[i] } else { 0.0 };
        }
        let linv_r = self.factor_lpp.solve(&rhs1);
        let (w1, w_e) = match &self.factor_schur {
            None => (linv_r, DVector::zeros(0)),
            Some(s) => {
                let w_e = s.solve(&(&self.working * &linv_r - &r_e));
                let w1 = self.factor_lpp.solve(&(&rhs1 - self.working.transpose() * &w_e));
                (w1, w_e)
            }
        };
        let w2 = DVector::from_fn(me, |i, _| w_e[i]);
        for (k, &i) in active.iter().enumerate() {
            w3[i] = w_e[me + k];
        }
        Ok(KktTangent { w1, w2, w3 })
    }

    /// Dense KKT matrix `[L Gᵀ Hᵀ; G 0 0; diag(μ)H 0 diag(h)]`.
    pub fn kkt_matrix(&self) -> DMatrix<f64> {
        let n = self.p.len();
        let me = self.lambda.len();
        let mi = self.mu.len();
        let mut m = DMatrix::zeros(n + me + mi, n + me + mi);
        m.view_mut((0, 0), (n, n)).copy_from(&self.lpp);
        m.view_mut((0, n), (n, me)).copy_from(&self.eq_matrix.transpose());
        m.view_mut((0, n + me), (n, mi)).copy_from(&self.ineq_matrix.transpose());
        m.view_mut((n, 0), (me, n)).copy_from(&self.eq_matrix);
        for i in 0..mi {
            for j in 0..n {
                m[(n + me + i, j)] = self.mu[i] * self.ineq_matrix[(i, j)];
            }
            m[(n + me + i, n + me + i)] = self.slack[i];
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResidual {
    pub stationarity: f64,
    pub equality: f64,
    /// Largest positive `(H p − d)_i`.
    pub inequality: f64,
    pub complementarity: f64,
    /// Largest negative multiplier magnitude.
    pub dual: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dense(a: DMatrix<f64>, b: Vec<f64>) -> IntegratedDesign {
        IntegratedDesign::from_dense(a, DVector::from_vec(b), DVector::zeros(0)).unwrap()
    }

    #[test]
    fn identity_design_returns_data() {
        let d = dense(DMatrix::identity(3, 3), vec![1.0, 2.0, 3.0]);
        let sol = solve_inner(&d, &ConstraintSet::unconstrained(3, 0), 0.0).unwrap();
        assert!((sol.p.clone() - DVector::from_vec(vec![1.0, 2.0, 3.0])).norm() < 1e-14);
        assert!(sol.lambda.is_empty() && sol.mu.is_empty());
        assert!(!sol.regularity_warning);
    }

    #[test]
    fn symmetric_projection_onto_equality() {
        let d = dense(DMatrix::identity(2, 2), vec![0.0, 0.0]);
        let cons = ConstraintSet::unconstrained(2, 0)
            .with_equalities(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), DVector::from_vec(vec![1.0]))
            .unwrap();
        let sol = solve_inner(&d, &cons, 0.0).unwrap();
        assert!((sol.p[0] - 0.5).abs() < 1e-14 && (sol.p[1] - 0.5).abs() < 1e-14);
        assert!((sol.lambda[0] + 0.5).abs() < 1e-14);
    }

    #[test]
    fn scalar_nonnegativity_is_active() {
        // min ½(p + 1)² s.t. p ≥ 0
        let d = dense(DMatrix::identity(1, 1), vec![-1.0]);
        let cons = ConstraintSet::unconstrained(1, 0).with_nonnegative_p().unwrap();
        let sol = solve_inner(&d, &cons, 0.0).unwrap();
        assert!(sol.p[0].abs() < 1e-14);
        assert!((sol.mu[0] - 1.0).abs() < 1e-14);
        assert!(sol.active[0]);
        assert!(sol.regularity_warning);
    }

    #[test]
    fn zero_design_is_singular() {
        let d = dense(DMatrix::zeros(3, 2), vec![1.0, 0.0, 0.0]);
        let err = solve_inner(&d, &ConstraintSet::unconstrained(2, 0), 0.0).unwrap_err();
        assert!(matches!(err, Error::Singular { .. }));
    }

    #[test]
    fn equality_unreachable_with_nonnegative_p_is_infeasible() {
        // gᵀp = 0.3 needs some p_i < 0 since every g_i ≤ 0
        let mut a = DMatrix::zeros(8, 4);
        a[(0, 1)] = 0.49;
        a[(1, 0)] = -0.34;
        a[(2, 2)] = 0.92;
        a[(3, 3)] = 0.67;
        let d = dense(a, vec![0.0, 0.0, 0.0, 0.0, -0.6, 0.0, 0.0, 0.0]);
        let g = DMatrix::from_row_slice(1, 4, &[-0.475, 0.0, -0.552, -0.0024]);
        let cons = ConstraintSet::unconstrained(4, 0)
            .with_equalities(g, DVector::from_vec(vec![0.3]))
            .unwrap()
            .with_nonnegative_p()
            .unwrap();
        let err = solve_inner(&d, &cons, 1e-3).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)));
    }

    #[test]
    fn conflicting_inequalities_are_infeasible() {
        let d = dense(DMatrix::identity(1, 1), vec![0.0]);
        // p ≤ −1 and −p ≤ −1 (p ≥ 1)
        let cons = ConstraintSet::unconstrained(1, 0)
            .with_inequalities(DMatrix::from_column_slice(2, 1, &[1.0, -1.0]), DVector::from_vec(vec![-1.0, -1.0]))
            .unwrap();
        assert!(matches!(solve_inner(&d, &cons, 0.0), Err(Error::Infeasible(_))));
    }

    /// Equality-constrained least squares through an orthonormal nullspace basis.
    fn nullspace_oracle(a: &DMatrix<f64>, b: &DVector<f64>, g: &DMatrix<f64>, c: &DVector<f64>, ridge: f64) -> DVector<f64> {
        let n = a.ncols();
        let mut q = a.transpose() * a;
        for i in 0..n {
            q[(i, i)] += ridge;
        }
        let rhs = a.transpose() * b;
        if g.nrows() == 0 {
            return q.lu().solve(&rhs).unwrap();
        }
        // eigenvectors of GᵀG for the smallest eigenvalues span null(G);
        // nalgebra's SVD loses orthogonality inside a repeated zero block
        let eig = nalgebra::linalg::SymmetricEigen::new(g.transpose() * g);
        let u = eig.eigenvectors;
        let sv = eig.eigenvalues;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| sv[j].partial_cmp(&sv[i]).unwrap());
        let me = g.nrows();
        let z = DMatrix::from_fn(n, n - me, |i, j| u[(i, order[me + j])]);
        let p0 = g.clone().pseudo_inverse(1e-14).unwrap() * c;
        let red = z.transpose() * &q * &z;
        let y = red.lu().solve(&(z.transpose() * (rhs - &q * &p0))).unwrap();
        p0 + z * y
    }

    /// Enumerates every active subset of a small inequality set.
    fn enumeration_oracle(q: &DMatrix<f64>, rhs: &DVector<f64>, h: &DMatrix<f64>, d: &DVector<f64>) -> DVector<f64> {
        let n = q.nrows();
        let m = h.nrows();
        let mut best: Option<(f64, DVector<f64>)> = None;
        for mask in 0..(1u32 << m) {
            let idx: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
            let k = idx.len();
            let mut kkt = DMatrix::zeros(n + k, n + k);
            kkt.view_mut((0, 0), (n, n)).copy_from(q);
            let mut r = DVector::zeros(n + k);
            r.rows_mut(0, n).copy_from(rhs);
            for (j, &i) in idx.iter().enumerate() {
                for c in 0..n {
                    kkt[(n + j, c)] = h[(i, c)];
                    kkt[(c, n + j)] = h[(i, c)];
                }
                r[n + j] = d[i];
            }
            let Some(sol) = kkt.lu().solve(&r) else { continue };
            let p = sol.rows(0, n).into_owned();
            let feasible = (h * &p - d).iter().all(|&v| v <= 1e-9);
            let dual_ok = (0..k).all(|j| sol[n + j] >= -1e-9);
            if feasible && dual_ok {
                let f = 0.5 * p.dot(&(q * &p)) - rhs.dot(&p);
                if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
                    best = Some((f, p));
                }
            }
        }
        best.unwrap().1
    }

    fn matrix(rows: usize, cols: usize, v: Vec<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, &v)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn equality_instances_match_nullspace_oracle(
            a in prop::collection::vec(-1.0f64..1.0, 8 * 4),
            b in prop::collection::vec(-1.0f64..1.0, 8),
            g in prop::collection::vec(-1.0f64..1.0, 2 * 4),
            c in prop::collection::vec(-1.0f64..1.0, 2),
            ridge in 0.0f64..0.1,
        ) {
            let a = matrix(8, 4, a);
            let b = DVector::from_vec(b);
            let g = matrix(2, 4, g);
            let c = DVector::from_vec(c);
            prop_assume!(crate::problem::numerical_rank(&g) == 2);
            prop_assume!(crate::problem::numerical_rank(&a) == 4);
            let expected = nullspace_oracle(&a, &b, &g, &c, ridge);
            // a loose inequality that stays inactive
            let h = DMatrix::from_fn(1, 4, |_, j| if j == 0 { 1.0 } else { 0.0 });
            let d = DVector::from_vec(vec![expected[0].abs() + 1.0]);
            let cons = ConstraintSet::unconstrained(4, 0)
                .with_equalities(g.clone(), c.clone()).unwrap()
                .with_inequalities(h, d).unwrap();
            let design = IntegratedDesign::from_dense(a, b.clone(), DVector::zeros(0)).unwrap();
            let sol = solve_inner(&design, &cons, ridge).unwrap();
            prop_assert!((&sol.p - &expected).norm() <= 1e-8 * (1.0 + expected.norm()));
            prop_assert!(!sol.active[0]);
            let res = sol.kkt_residual(&design, &cons);
            prop_assert!(res.stationarity <= 1e-8 * (1.0 + design.at_b().norm()));
        }

        #[test]
        fn inequality_instances_match_enumeration(
            a in prop::collection::vec(-1.0f64..1.0, 6 * 3),
            b in prop::collection::vec(-2.0f64..2.0, 6),
            h in prop::collection::vec(-1.0f64..1.0, 4 * 3),
            d in prop::collection::vec(0.0f64..0.5, 4),
        ) {
            let a = matrix(6, 3, a);
            prop_assume!(crate::problem::numerical_rank(&a) == 3);
            let b = DVector::from_vec(b);
            let h = matrix(4, 3, h);
            // p = 0 is feasible since d ≥ 0
            let d = DVector::from_vec(d);
            let design = IntegratedDesign::from_dense(a.clone(), b.clone(), DVector::zeros(0)).unwrap();
            let cons = ConstraintSet::unconstrained(3, 0).with_inequalities(h.clone(), d.clone()).unwrap();
            let sol = solve_inner(&design, &cons, 0.0).unwrap();
            let q = a.transpose() * &a;
            let expected = enumeration_oracle(&q, &(a.transpose() * &b), &h, &d);
            prop_assert!((&sol.p - &expected).norm() <= 1e-8 * (1.0 + expected.norm()));
            let res = sol.kkt_residual(&design, &cons);
            prop_assert!(res.stationarity <= 1e-8 * (1.0 + design.at_b().norm()));
            prop_assert!(res.inequality <= 1e-10);
            prop_assert!(res.complementarity <= 1e-8);
            prop_assert!(sol.mu.iter().all(|&m| m >= 0.0));
        }

        #[test]
        fn objective_grows_with_ridge(
            a in prop::collection::vec(-1.0f64..1.0, 6 * 3),
            b in prop::collection::vec(-1.0f64..1.0, 6),
            r1 in 0.0f64..1.0,
            dr in 0.0f64..1.0,
        ) {
            let design = IntegratedDesign::from_dense(matrix(6, 3, a), DVector::from_vec(b), DVector::zeros(0)).unwrap();
            let cons = ConstraintSet::unconstrained(3, 0).with_nonnegative_p().unwrap();
            let lo = solve_inner(&design, &cons, r1 + 1e-3);
            let hi = solve_inner(&design, &cons, r1 + 1e-3 + dr);
            if let (Ok(lo), Ok(hi)) = (lo, hi) {
                prop_assert!(hi.objective >= lo.objective - 1e-12);
            }
        }

        #[test]
        fn redundant_inequality_changes_nothing(
            a in prop::collection::vec(-1.0f64..1.0, 6 * 3),
            b in prop::collection::vec(-1.0f64..1.0, 6),
        ) {
            let a = matrix(6, 3, a);
            prop_assume!(crate::problem::numerical_rank(&a) == 3);
            let design = IntegratedDesign::from_dense(a, DVector::from_vec(b), DVector::zeros(0)).unwrap();
            let base = ConstraintSet::unconstrained(3, 0).with_nonnegative_p().unwrap();
            // −p0 − p1 ≤ 0 is implied by p ≥ 0
            let mut h = base.ineq_matrix.clone().insert_row(3, 0.0);
            h[(3, 0)] = -1.0;
            h[(3, 1)] = -1.0;
            let d = DVector::zeros(4);
            let extra = ConstraintSet::unconstrained(3, 0).with_inequalities(h, d).unwrap();
            let p1 = solve_inner(&design, &base, 0.0).unwrap().p;
            let p2 = solve_inner(&design, &extra, 0.0).unwrap().p;
            prop_assert!((p1 - p2).norm() <= 1e-10);
        }
    }
}
