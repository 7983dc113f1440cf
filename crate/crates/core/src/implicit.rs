//! Forward-mode derivatives of the inner solution `(p*, λ*, μ*)` in phi.
//!
//! Differentiating the KKT conditions gives `M w = −v` where `M` is the KKT
//! matrix held (in factored form) by [`InnerSolution`]. Constraints are affine
//! in `p` and independent of phi, so only the stationarity block of `v` is
//! nonzero: `L_pφ v = dA_vᵀ(A p − b) + Aᵀ(dA_v p)`.

use nalgebra::{DMatrix, DVector};

use crate::design::{DesignDerivative, DesignJacobian, IntegratedDesign};
use crate::error::{Error, Result};
use crate::inner::{InnerSolution, KktTangent};

/// `(dp*, dλ*, dμ*)` along one direction.
pub type KktJvpResult = KktTangent;

fn check_fresh(sol: &InnerSolution, phi: &DVector<f64>) -> Result<()> {
    if sol.phi_snapshot.len() != phi.len() || sol.phi_snapshot.iter().zip(phi.iter()).any(|(a, b)| a != b) {
        return Err(Error::StaleFactorization);
    }
    Ok(())
}

/// `L_pφ v` for one direction.
pub fn lpphi_jvp(sol: &InnerSolution, design: &IntegratedDesign, d_design: &DesignDerivative) -> DVector<f64> {
    let r = design.residuals(&sol.p);
    let dap = d_design.apply(design, &sol.p);
    d_design.transpose_apply(design, &r) + design.transpose_apply(&dap)
}

pub fn kkt_jvp(sol: &InnerSolution, design: &IntegratedDesign, d_design: &DesignDerivative) -> Result<KktJvpResult> {
    check_fresh(sol, design.phi())?;
    check_fresh(sol, d_design.phi())?;
    if d_design.features().len() != design.features().len() {
        return Err(Error::DimensionMismatch(format!(
            "design derivative covers {} experiments, design has {}",
            d_design.features().len(),
            design.features().len()
        )));
    }
    let v1 = lpphi_jvp(sol, design, d_design);
    sol.solve_tangent(&-v1, &DVector::zeros(sol.lambda.len()), &DVector::zeros(sol.mu.len()))
}

/// Contractions of the design Jacobian against the residual and the design,
/// shared by the gradient, `L_pφ` and the Gauss–Newton curvature.
#[derive(Debug, Clone)]
pub struct JacobianProducts {
    /// `Σ_e Σ_k D_e[k, a] (R_e C)[k, j]` per pair `a = (j, m)`.
    pub dr: DVector<f64>,
    /// `Σ_e F_eᵀ D_e`, `n × n_pairs`.
    pub fd: DMatrix<f64>,
    /// `Σ_e D_eᵀ D_e`, `n_pairs × n_pairs`.
    pub dd: DMatrix<f64>,
}

pub fn jacobian_products(design: &IntegratedDesign, jac: &DesignJacobian, p: &DVector<f64>) -> JacobianProducts {
    let pairs = jac.pairs();
    let np = pairs.len();
    let n = design.n_cols();
    let c = design.loadings();
    let residuals = design.residuals(p);
    let mut dr = DVector::zeros(np);
    let mut fd = DMatrix::zeros(n, np);
    let mut dd = DMatrix::zeros(np, np);
    for ((d, f), r) in jac.columns().iter().zip(design.features()).zip(&residuals) {
        // R_e C : T × n
        let rc = r * c;
        for (a, &(j, _)) in pairs.iter().enumerate() {
            dr[a] += d.column(a).dot(&rc.column(j));
        }
        fd += f.tr_mul(d);
        dd += d.tr_mul(d);
    }
    JacobianProducts { dr, fd, dd }
}

/// Envelope gradient `∂L/∂φ` at fixed `p`: `g_m = (A p − b)ᵀ (dA_m p)`.
pub fn envelope_gradient(jac: &DesignJacobian, prod: &JacobianProducts, p: &DVector<f64>, n_phi: usize) -> DVector<f64> {
    let mut g = DVector::zeros(n_phi);
    for (a, &(j, m)) in jac.pairs().iter().enumerate() {
        g[m] += p[j] * prod.dr[a];
    }
    g
}

/// `L_pφ` as an `n × n_phi` matrix.
pub fn lpphi_matrix(
    design: &IntegratedDesign,
    jac: &DesignJacobian,
    prod: &JacobianProducts,
    p: &DVector<f64>,
    n_phi: usize,
) -> DMatrix<f64> {
    let cross = design.cross();
    let mut l = DMatrix::zeros(design.n_cols(), n_phi);
    for (a, &(j, m)) in jac.pairs().iter().enumerate() {
        l[(j, m)] += prod.dr[a];
        if p[j] != 0.0 {
            for i in 0..design.n_cols() {
                l[(i, m)] += p[j] * cross[(i, j)] * prod.fd[(i, a)];
            }
        }
    }
    l
}

/// `Σ_e (dA p)ᵀ (dA p)` over all phi pairs, i.e. `J_φᵀ J_φ` at fixed `p`.
pub fn gauss_newton_phi(
    design: &IntegratedDesign,
    jac: &DesignJacobian,
    prod: &JacobianProducts,
    p: &DVector<f64>,
    n_phi: usize,
) -> DMatrix<f64> {
    let cross = design.cross();
    let pairs = jac.pairs();
    let mut gn = DMatrix::zeros(n_phi, n_phi);
    for (a, &(j, m)) in pairs.iter().enumerate() {
        if p[j] == 0.0 {
            continue;
        }
        for (b, &(k, m2)) in pairs.iter().enumerate() {
            gn[(m, m2)] += p[j] * p[k] * cross[(j, k)] * prod.dd[(a, b)];
        }
    }
    gn
}

/// `dp*/dφ` by sweeping unit directions through the cached factorization.
/// Also returns `dλ*/dφ` and `dμ*/dφ`.
pub fn solution_jacobian(sol: &InnerSolution, lpphi: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let n_phi = lpphi.ncols();
    let mut dp = DMatrix::zeros(sol.p.len(), n_phi);
    let mut dl = DMatrix::zeros(sol.lambda.len(), n_phi);
    let mut dm = DMatrix::zeros(sol.mu.len(), n_phi);
    let z2 = DVector::zeros(sol.lambda.len());
    let z3 = DVector::zeros(sol.mu.len());
    for m in 0..n_phi {
        let w = sol.solve_tangent(&-lpphi.column(m).into_owned(), &z2, &z3)?;
        dp.set_column(m, &w.w1);
        dl.set_column(m, &w.w2);
        dm.set_column(m, &w.w3);
    }
    Ok((dp, dl, dm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::Workspace;
    use crate::expr::Expr;
    use crate::inner::solve_inner;
    use crate::problem::{validate_problem, BasisField, ConstraintSet, ModelStructure, Trajectory};
    use proptest::prelude::*;

    #[test]
    fn scalar_solution_tracks_phi() {
        // A = 1/φ, b = 1 gives p* = φ
        let phi = 1.7;
        let pv = DVector::from_vec(vec![phi]);
        let design = IntegratedDesign::from_dense(DMatrix::from_element(1, 1, 1.0 / phi), DVector::from_vec(vec![1.0]), pv.clone()).unwrap();
        let sol = solve_inner(&design, &ConstraintSet::unconstrained(1, 1), 0.0).unwrap();
        for v in [1.0, -0.3, 2.5] {
            let dd = DesignDerivative::from_dense(DMatrix::from_element(1, 1, -v / (phi * phi)), DVector::from_vec(vec![v]), pv.clone());
            let w = kkt_jvp(&sol, &design, &dd).unwrap();
            assert!((w.w1[0] - v).abs() < 1e-12);
        }
    }

    #[test]
    fn stale_factorization_is_rejected() {
        let design = IntegratedDesign::from_dense(DMatrix::identity(2, 2), DVector::from_vec(vec![1.0, 2.0]), DVector::from_vec(vec![1.0])).unwrap();
        let sol = solve_inner(&design, &ConstraintSet::unconstrained(2, 1), 0.0).unwrap();
        let moved = IntegratedDesign::from_dense(DMatrix::identity(2, 2), DVector::from_vec(vec![1.0, 2.0]), DVector::from_vec(vec![1.1])).unwrap();
        let dd = DesignDerivative::from_dense(DMatrix::identity(2, 2), DVector::from_vec(vec![1.0]), DVector::from_vec(vec![1.1]));
        assert_eq!(kkt_jvp(&sol, &moved, &dd).unwrap_err(), Error::StaleFactorization);
    }

    fn dense_oracle(sol: &InnerSolution, design: &IntegratedDesign, dd: &DesignDerivative) -> DVector<f64> {
        let (a, b) = design.to_dense();
        let da = dd.to_dense(design);
        let v1 = da.transpose() * (&a * &sol.p - &b) + a.transpose() * (&da * &sol.p);
        let mut rhs = DVector::zeros(sol.p.len() + sol.lambda.len() + sol.mu.len());
        rhs.rows_mut(0, sol.p.len()).copy_from(&-v1);
        sol.kkt_matrix().lu().solve(&rhs).unwrap()
    }

    fn kkt_condition(sol: &InnerSolution) -> f64 {
        let sv = sol.kkt_matrix().svd(false, false).singular_values;
        sv.max() / sv.min()
    }

    fn stacked(w: &KktJvpResult) -> DVector<f64> {
        let mut out = DVector::zeros(w.w1.len() + w.w2.len() + w.w3.len());
        out.rows_mut(0, w.w1.len()).copy_from(&w.w1);
        out.rows_mut(w.w1.len(), w.w2.len()).copy_from(&w.w2);
        out.rows_mut(w.w1.len() + w.w2.len(), w.w3.len()).copy_from(&w.w3);
        out
    }

    fn instance(a: Vec<f64>, b: Vec<f64>, da: Vec<f64>) -> (IntegratedDesign, DesignDerivative) {
        let phi = DVector::from_vec(vec![0.5]);
        let design = IntegratedDesign::from_dense(DMatrix::from_row_slice(8, 4, &a), DVector::from_vec(b), phi.clone()).unwrap();
        let dd = DesignDerivative::from_dense(DMatrix::from_row_slice(8, 4, &da), DVector::from_vec(vec![1.0]), phi);
        (design, dd)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn reduced_path_matches_full_kkt_solve(
            a in prop::collection::vec(-1.0f64..1.0, 32),
            b in prop::collection::vec(-1.0f64..1.0, 8),
            da in prop::collection::vec(-1.0f64..1.0, 32),
            g in prop::collection::vec(-1.0f64..1.0, 4),
        ) {
            let (design, dd) = instance(a, b, da);
            let cons = ConstraintSet::unconstrained(4, 1)
                .with_equalities(DMatrix::from_row_slice(1, 4, &g), DVector::from_vec(vec![0.3])).unwrap()
                .with_nonnegative_p().unwrap();
            let Ok(sol) = solve_inner(&design, &cons, 1e-3) else { return Ok(()) };
            // strict complementarity
            prop_assume!((0..4).all(|i| if sol.active[i] { sol.mu[i] > 1e-6 } else { sol.slack()[i] < -1e-6 }));
            // no backward-stable solve beats eps times the conditioning
            prop_assume!(kkt_condition(&sol) <= 1e8);
            let w = kkt_jvp(&sol, &design, &dd).unwrap();
            let oracle = dense_oracle(&sol, &design, &dd);
            let got = stacked(&w);
            prop_assert!((&got - &oracle).norm() <= 1e-8 * (1.0 + oracle.norm()));
            // residual of the full system
            let lhs = sol.kkt_matrix() * &got;
            let mut rhs = DVector::zeros(got.len());
            rhs.rows_mut(0, 4).copy_from(&-lpphi_jvp(&sol, &design, &dd));
            prop_assert!((lhs - &rhs).norm() <= 1e-8 * (1.0 + rhs.norm()));
        }

        #[test]
        fn equality_only_paths_agree(
            a in prop::collection::vec(-1.0f64..1.0, 32),
            b in prop::collection::vec(-1.0f64..1.0, 8),
            da in prop::collection::vec(-1.0f64..1.0, 32),
            g in prop::collection::vec(-1.0f64..1.0, 8),
        ) {
            let (design, dd) = instance(a, b, da);
            let gm = DMatrix::from_row_slice(2, 4, &g);
            prop_assume!(crate::problem::numerical_rank(&gm) == 2);
            let cons = ConstraintSet::unconstrained(4, 1).with_equalities(gm, DVector::from_vec(vec![0.3, -0.1])).unwrap();
            let sol = solve_inner(&design, &cons, 1e-2).unwrap();
            prop_assume!(kkt_condition(&sol) <= 1e6);
            let w = kkt_jvp(&sol, &design, &dd).unwrap();
            let oracle = dense_oracle(&sol, &design, &dd);
            prop_assert!((stacked(&w) - &oracle).norm() <= 1e-10 * (1.0 + oracle.norm()));
        }

        #[test]
        fn jvp_is_linear_in_direction(
            a in prop::collection::vec(-1.0f64..1.0, 32),
            b in prop::collection::vec(-1.0f64..1.0, 8),
            d1 in prop::collection::vec(-1.0f64..1.0, 32),
            d2 in prop::collection::vec(-1.0f64..1.0, 32),
            alpha in -2.0f64..2.0,
            beta in -2.0f64..2.0,
        ) {
            let (design, dd1) = instance(a, b, d1.clone());
            let phi = design.phi().clone();
            let m1 = DMatrix::from_row_slice(8, 4, &d1);
            let m2 = DMatrix::from_row_slice(8, 4, &d2);
            let dd2 = DesignDerivative::from_dense(m2.clone(), DVector::from_vec(vec![1.0]), phi.clone());
            let dd12 = DesignDerivative::from_dense(m1 * alpha + m2 * beta, DVector::from_vec(vec![1.0]), phi);
            let cons = ConstraintSet::unconstrained(4, 1).with_nonnegative_p().unwrap();
            let sol = solve_inner(&design, &cons, 1e-3).unwrap();
            let w1 = stacked(&kkt_jvp(&sol, &design, &dd1).unwrap());
            let w2 = stacked(&kkt_jvp(&sol, &design, &dd2).unwrap());
            let w12 = stacked(&kkt_jvp(&sol, &design, &dd12).unwrap());
            let combo = w1 * alpha + w2 * beta;
            prop_assert!((w12 - &combo).norm() <= 1e-10 * (1.0 + combo.norm()));
        }

        #[test]
        fn inactive_rows_contribute_nothing(
            a in prop::collection::vec(-1.0f64..1.0, 32),
            b in prop::collection::vec(-1.0f64..1.0, 8),
            da in prop::collection::vec(-1.0f64..1.0, 32),
        ) {
            let (design, dd) = instance(a, b, da);
            let bare = ConstraintSet::unconstrained(4, 1);
            let sol0 = solve_inner(&design, &bare, 1e-3).unwrap();
            // rows that are slack at the unconstrained optimum
            let h = DMatrix::identity(4, 4);
            let d = sol0.p.map(|v| v.abs() + 1.0);
            let cons = bare.clone().with_inequalities(h, d).unwrap();
            let sol = solve_inner(&design, &cons, 1e-3).unwrap();
            prop_assert!(sol.active.iter().all(|a| !a));
            let w0 = kkt_jvp(&sol0, &design, &dd).unwrap();
            let w = kkt_jvp(&sol, &design, &dd).unwrap();
            prop_assert!((&w.w1 - &w0.w1).norm() <= 1e-10 * (1.0 + w0.w1.norm()));
        }
    }

    fn workspace() -> Workspace {
        // x(t) = 2 exp(-t) + 0.5 on [0, 3]
        let times: Vec<f64> = (0..=60).map(|k| k as f64 * 0.05).collect();
        let states = DMatrix::from_fn(1, times.len(), |_, k| 2.0 * (-times[k]).exp() + 0.5);
        let basis = vec![
            BasisField::on_state("const", vec![Expr::c(1.0)], 1, 0, 1.0),
            BasisField::on_state("mm", vec![Expr::saturating(0, 0)], 1, 0, 1.0),
            BasisField::on_state("pow", vec![Expr::x(0).powe(Expr::param(1))], 1, 0, 1.0),
        ];
        let model = ModelStructure::new(1, basis, vec!["K".into(), "a".into()]);
        let cons = ConstraintSet::unconstrained(3, 2)
            .with_equalities(DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]), DVector::from_vec(vec![0.2]))
            .unwrap();
        Workspace::new(validate_problem(model, cons, vec![Trajectory::new(times, states)]).unwrap()).unwrap()
    }

    #[test]
    fn jvp_matches_finite_differences_of_inner_solution() {
        let ws = workspace();
        let cons = ws.problem().constraints().clone();
        let phi = DVector::from_vec(vec![0.8, 1.3]);
        let design = ws.assemble(&phi).unwrap();
        let sol = solve_inner(&design, &cons, 1e-4).unwrap();
        let h = 1e-5;
        for m in 0..2 {
            let v = DVector::from_fn(2, |i, _| if i == m { 1.0 } else { 0.0 });
            let dd = ws.design_jvp(&phi, &v).unwrap();
            let w = kkt_jvp(&sol, &design, &dd).unwrap();
            let step = h * phi[m].abs().max(1.0);
            let solve = |x: &DVector<f64>| solve_inner(&ws.assemble(x).unwrap(), &cons, 1e-4).unwrap();
            let plus = solve(&(&phi + &v * step));
            let minus = solve(&(&phi - &v * step));
            let fd = (plus.p - minus.p) / (2.0 * step);
            assert!((&w.w1 - &fd).norm() <= 1e-6 * (1.0 + fd.norm()), "m={m}: {} vs {}", w.w1, fd);
            let fdl = (plus.lambda - minus.lambda) / (2.0 * step);
            assert!((&w.w2 - &fdl).norm() <= 1e-6 * (1.0 + fdl.norm()));
        }
    }

    #[test]
    fn structured_products_match_dense_algebra() {
        let ws = workspace();
        let cons = ws.problem().constraints().clone();
        let phi = DVector::from_vec(vec![0.8, 1.3]);
        let design = ws.assemble(&phi).unwrap();
        let sol = solve_inner(&design, &cons, 1e-4).unwrap();
        let jac = ws.design_jacobian(&phi).unwrap();
        let prod = jacobian_products(&design, &jac, &sol.p);
        let lp = lpphi_matrix(&design, &jac, &prod, &sol.p, 2);
        let g = envelope_gradient(&jac, &prod, &sol.p, 2);
        let gn = gauss_newton_phi(&design, &jac, &prod, &sol.p, 2);
        let (a, b) = design.to_dense();
        let r = &a * &sol.p - &b;
        let mut dap = DMatrix::zeros(a.nrows(), 2);
        for m in 0..2 {
            let v = DVector::from_fn(2, |i, _| if i == m { 1.0 } else { 0.0 });
            let dd = ws.design_jvp(&phi, &v).unwrap();
            let da = dd.to_dense(&design);
            assert!((lp.column(m) - lpphi_jvp(&sol, &design, &dd)).norm() < 1e-10 * (1.0 + lp.norm()));
            dap.set_column(m, &(&da * &sol.p));
            assert!((g[m] - r.dot(&dap.column(m))).abs() < 1e-10 * (1.0 + g[m].abs()));
        }
        assert!((gn - dap.transpose() * &dap).norm() < 1e-10 * (1.0 + dap.norm_squared()));
        let (dp, _, _) = solution_jacobian(&sol, &lp).unwrap();
        for m in 0..2 {
            let v = DVector::from_fn(2, |i, _| if i == m { 1.0 } else { 0.0 });
            let w = kkt_jvp(&sol, &design, &ws.design_jvp(&phi, &v).unwrap()).unwrap();
            assert!((dp.column(m) - w.w1).norm() < 1e-10 * (1.0 + dp.norm()));
        }
    }
}
