//! Outer problem over phi: value, envelope gradient, Hessian approximations,
//! and a box-constrained trust-region Newton iteration.

use log::debug;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::design::{DesignJacobian, IntegratedDesign, Workspace};
use crate::error::{Error, Result};
use crate::implicit::{
    envelope_gradient, gauss_newton_phi, jacobian_products, lpphi_matrix, solution_jacobian, JacobianProducts,
};
use crate::inner::{solve_inner, InnerSolution};
use crate::problem::{ConvergenceFlag, ParameterEstimate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianMode {
    /// `(dp/dφ)ᵀ L_pp (dp/dφ) + J_φᵀJ_φ`
    #[default]
    Paper,
    /// `L_φp (dp/dφ) + ∂²L/∂φ²`, the second term by central differences of
    /// the fixed-`p` gradient.
    ExactChain,
    /// Gauss–Newton on the reduced residual `A(φ) p*(φ) − b`.
    GaussNewton,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OuterOptions {
    pub max_iterations: usize,
    /// On the projected gradient in scaled variables, relative to `max(1, |f|)`.
    pub gradient_tolerance: f64,
    /// Trust radius in scaled variables (`φ_i / s_i`, `s_i = |φ0_i|` or 1).
    pub initial_radius: f64,
    pub max_radius: f64,
    pub min_radius: f64,
    pub expansion: f64,
    pub contraction: f64,
    pub hessian_mode: HessianMode,
    pub ridge: f64,
}

impl Default for OuterOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            gradient_tolerance: 1e-10,
            initial_radius: 0.5,
            max_radius: 1e3,
            min_radius: 1e-12,
            expansion: 2.0,
            contraction: 0.25,
            hessian_mode: HessianMode::Paper,
            ridge: 0.0,
        }
    }
}

impl OuterOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gradient_tolerance", self.gradient_tolerance),
            ("initial_radius", self.initial_radius),
            ("max_radius", self.max_radius),
            ("min_radius", self.min_radius),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::InvalidOption(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.expansion > 1.0) {
            return Err(Error::InvalidOption(format!("expansion must exceed 1, got {}", self.expansion)));
        }
        if !(self.contraction > 0.0 && self.contraction < 1.0) {
            return Err(Error::InvalidOption(format!(
                "contraction must lie in (0, 1), got {}",
                self.contraction
            )));
        }
        if !(self.ridge >= 0.0) {
            return Err(Error::InvalidOption(format!("ridge must be nonnegative, got {}", self.ridge)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct OuterEvaluation {
    pub objective: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
    pub inner: InnerSolution,
    pub dp_dphi: DMatrix<f64>,
    pub design: IntegratedDesign,
}

/// Objective only: one assembly and one inner solve.
pub fn outer_objective(ws: &Workspace, phi: &DVector<f64>, ridge: f64) -> Result<(f64, InnerSolution)> {
    let design = ws.assemble(phi)?;
    let sol = solve_inner(&design, ws.problem().constraints(), ridge)?;
    Ok((sol.objective, sol))
}

/// Gradient of the loss in phi with `p` frozen.
fn fixed_p_gradient(ws: &Workspace, phi: &DVector<f64>, p: &DVector<f64>) -> Result<DVector<f64>> {
    let design = ws.assemble(phi)?;
    let jac = ws.design_jacobian(phi)?;
    let prod = jacobian_products(&design, &jac, p);
    Ok(envelope_gradient(&jac, &prod, p, phi.len()))
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// `Aᵀ(dA_m p)` for every `m`.
fn design_times_dap(design: &IntegratedDesign, jac: &DesignJacobian, prod: &JacobianProducts, p: &DVector<f64>, n_phi: usize) -> DMatrix<f64> {
    let cross = design.cross();
    let mut k = DMatrix::zeros(design.n_cols(), n_phi);
    for (a, &(j, m)) in jac.pairs().iter().enumerate() {
        if p[j] != 0.0 {
            for i in 0..design.n_cols() {
                k[(i, m)] += p[j] * cross[(i, j)] * prod.fd[(i, a)];
            }
        }
    }
    k
}

pub fn outer_eval(ws: &Workspace, phi: &DVector<f64>, ridge: f64, mode: HessianMode) -> Result<OuterEvaluation> {
    ws.problem().check_phi(phi)?;
    let n_phi = phi.len();
    let design = ws.assemble(phi)?;
    let inner = solve_inner(&design, ws.problem().constraints(), ridge)?;
    let p = &inner.p;
    let jac = ws.design_jacobian(phi)?;
    let prod = jacobian_products(&design, &jac, p);
    let gradient = envelope_gradient(&jac, &prod, p, n_phi);
    let lpphi = lpphi_matrix(&design, &jac, &prod, p, n_phi);
    let (dp_dphi, _, _) = solution_jacobian(&inner, &lpphi)?;
    let mut hessian = match mode {
        HessianMode::Paper => {
            dp_dphi.transpose() * inner.lpp() * &dp_dphi + gauss_newton_phi(&design, &jac, &prod, p, n_phi)
        }
        HessianMode::GaussNewton => {
            let k = design_times_dap(&design, &jac, &prod, p, n_phi);
            let cross = k.transpose() * &dp_dphi;
            gauss_newton_phi(&design, &jac, &prod, p, n_phi)
                + &cross
                + cross.transpose()
                + dp_dphi.transpose() * inner.lpp() * &dp_dphi
        }
        HessianMode::ExactChain => {
            let (lo, hi) = ws.problem().phi_bounds();
            let mut second = DMatrix::zeros(n_phi, n_phi);
            for m in 0..n_phi {
                let h = 1e-5 * phi[m].abs().max(1.0);
                let up = (phi[m] + h).min(hi[m]);
                let down = (phi[m] - h).max(lo[m]);
                let mut xp = phi.clone();
                let mut xm = phi.clone();
                xp[m] = up;
                xm[m] = down;
                let gp = if up > phi[m] { fixed_p_gradient(ws, &xp, p)? } else { gradient.clone() };
                let gm = if down < phi[m] { fixed_p_gradient(ws, &xm, p)? } else { gradient.clone() };
                second.set_column(m, &((gp - gm) / (up - down)));
            }
            lpphi.transpose() * &dp_dphi + second
        }
    };
    symmetrize(&mut hessian);
    Ok(OuterEvaluation {
        objective: inner.objective,
        gradient,
        hessian,
        inner,
        dp_dphi,
        design,
    })
}

/// Minimises `gᵀd + ½dᵀHd` over `‖d‖ ≤ radius` exactly via an eigendecomposition.
pub fn trust_region_step(g: &DVector<f64>, h: &DMatrix<f64>, radius: f64) -> DVector<f64> {
    let n = g.len();
    if n == 0 {
        return DVector::zeros(0);
    }
    let eig = SymmetricEigen::new(h.clone());
    let q = &eig.eigenvectors;
    let lam = &eig.eigenvalues;
    let gq = q.transpose() * g;
    let lmin = lam.min();
    let lmax = lam.amax().max(1e-300);
    let tiny = 1e-12 * lmax;
    let step_at = |sigma: f64| -> DVector<f64> {
        let coef = DVector::from_fn(n, |i, _| {
            let den = lam[i] + sigma;
            if den.abs() <= tiny {
                0.0
            } else {
                -gq[i] / den
            }
        });
        q * coef
    };
    // interior Newton (pseudo-inverse when H is singular but PSD)
    if lmin >= -tiny {
        let d = step_at(0.0);
        if d.norm() <= radius {
            return d;
        }
    }
    let lo = (-lmin).max(0.0);
    let d_lo = step_at(lo);
    // the hard case needs g orthogonal to the lowest eigenspace
    let orthogonal = (0..n).all(|i| (lam[i] + lo).abs() > tiny || gq[i].abs() <= 1e-10 * g.norm());
    if orthogonal && d_lo.norm() < radius {
        // hard case: move along the lowest eigenvector to the boundary
        let imin = lam.imin();
        let v = q.column(imin).into_owned();
        let a = d_lo.norm_squared();
        let b = 2.0 * d_lo.dot(&v);
        let c = radius * radius;
        let tau = (-b + (b * b + 4.0 * (c - a)).sqrt()) / 2.0;
        return d_lo + v * tau;
    }
    let mut a = lo;
    let mut b = lo + g.norm() / radius + lmax;
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if step_at(mid).norm() > radius {
            a = mid;
        } else {
            b = mid;
        }
        if b - a <= 1e-15 * b.max(1e-300) {
            break;
        }
    }
    step_at(b)
}

fn model_decrease(g: &DVector<f64>, h: &DMatrix<f64>, d: &DVector<f64>) -> f64 {
    -(g.dot(d) + 0.5 * d.dot(&(h * d)))
}

/// Box-constrained trust-region Newton iteration on phi.
pub fn optimize_outer(ws: &Workspace, phi0: &DVector<f64>, options: &OuterOptions) -> Result<ParameterEstimate> {
    options.validate()?;
    let problem = ws.problem();
    problem.check_phi(phi0)?;
    let n_phi = phi0.len();
    let ridge = options.ridge;
    if n_phi == 0 {
        let (loss, sol) = outer_objective(ws, phi0, ridge)?;
        return Ok(ParameterEstimate {
            p: sol.p.clone(),
            phi: phi0.clone(),
            loss,
            iterations: 0,
            convergence_flag: if sol.regularity_warning {
                ConvergenceFlag::RegularityWarning
            } else {
                ConvergenceFlag::Converged
            },
            loss_trace: vec![loss],
        });
    }
    let (lo, hi) = problem.phi_bounds();
    let scale = DVector::from_fn(n_phi, |i, _| if phi0[i] != 0.0 { phi0[i].abs() } else { 1.0 });
    let lo_s = lo.component_div(&scale);
    let hi_s = hi.component_div(&scale);
    let mut y = phi0.component_div(&scale);
    let mut phi = phi0.clone();
    let mut eval = outer_eval(ws, phi0, ridge, options.hessian_mode)?;
    let mut trace = vec![eval.objective];
    // objective at p = 0; sets the rounding floor of the objective
    let data_scale = 0.5 * eval.design.targets().iter().map(|t| t.norm_squared()).sum::<f64>();
    let mut radius = options.initial_radius;
    // multiplier on the Hessian, lowered when steps keep over-delivering
    let mut curvature = 1.0;
    let mut flag = ConvergenceFlag::MaxIter;
    let mut iterations = 0;

    for iter in 0..options.max_iterations {
        let g = eval.gradient.component_mul(&scale);
        let h = DMatrix::from_fn(n_phi, n_phi, |i, j| curvature * eval.hessian[(i, j)] * scale[i] * scale[j]);
        let projected = DVector::from_fn(n_phi, |i, _| (y[i] - g[i]).clamp(lo_s[i], hi_s[i]) - y[i]);
        if projected.norm() <= options.gradient_tolerance * eval.objective.abs().max(1.0) {
            flag = ConvergenceFlag::Converged;
            break;
        }
        iterations = iter + 1;
        // variables held at a bound by the gradient are fixed for this step
        let free: Vec<usize> = (0..n_phi)
            .filter(|&i| !((y[i] <= lo_s[i] && g[i] > 0.0) || (y[i] >= hi_s[i] && g[i] < 0.0)))
            .collect();
        let gf = DVector::from_fn(free.len(), |i, _| g[free[i]]);
        let hf = DMatrix::from_fn(free.len(), free.len(), |i, j| h[(free[i], free[j])]);
        let project = |d_free: &DVector<f64>| -> DVector<f64> {
            let mut d = DVector::zeros(n_phi);
            for (k, &i) in free.iter().enumerate() {
                d[i] = (y[i] + d_free[k]).clamp(lo_s[i], hi_s[i]) - y[i];
            }
            d
        };
        let mut step = project(&trust_region_step(&gf, &hf, radius));
        let mut predicted = model_decrease(&g, &h, &step);
        if !(predicted > 0.0) {
            // projected Cauchy step along the free steepest descent direction
            let gn = gf.norm();
            let curv = gf.dot(&(&hf * &gf));
            let mut t = radius / gn;
            if curv > 0.0 {
                t = t.min(gn * gn / curv);
            }
            step = project(&(-&gf * t));
            predicted = model_decrease(&g, &h, &step);
        }
        let step_norm = step.norm();
        let trial_y = &y + &step;
        let trial_phi = DVector::from_fn(n_phi, |i, _| (trial_y[i] * scale[i]).clamp(lo[i], hi[i]));
        let trial = if predicted > 0.0 {
            outer_objective(ws, &trial_phi, ridge).ok()
        } else {
            None
        };
        let actual = trial.as_ref().map(|(f, _)| eval.objective - f);
        let rho = match actual {
            Some(a) => a / predicted,
            None => f64::NEG_INFINITY,
        };
        debug!(
            "outer iter {iter}: f = {:.6e}, |pg| = {:.3e}, radius = {:.3e}, rho = {rho:.3}",
            eval.objective,
            projected.norm(),
            radius
        );
        if rho < 0.25 {
            radius = options.contraction * radius.min(step_norm.max(options.min_radius));
            curvature = (2.0 * curvature).min(1.0);
        } else if rho > 0.75 && step_norm >= 0.99 * radius {
            radius = (options.expansion * radius).min(options.max_radius);
        }
        if rho > 0.25 && step_norm < 0.99 * radius {
            // On a quadratic rho = 2 − (true curvature)/(model curvature)
            // along the step; rescale so the next model matches.
            curvature = (curvature * (2.0 - rho).clamp(0.1, 2.0)).clamp(1e-8, 1.0);
        }
        if rho > 1e-4 && actual.unwrap_or(0.0) >= 0.0 {
            y = trial_y;
            phi = trial_phi.clone();
            eval = outer_eval(ws, &trial_phi, ridge, options.hessian_mode)?;
            trace.push(eval.objective);
        } else if predicted <= 1e-12 * eval.objective.abs() + 1e-15 * data_scale || step_norm <= f64::EPSILON * (1.0 + y.norm()) {
            // the model promises less than the objective's rounding noise
            flag = ConvergenceFlag::Converged;
            break;
        }
        if radius < options.min_radius {
            flag = ConvergenceFlag::LineSearchFailure;
            break;
        }
    }
    if flag == ConvergenceFlag::Converged && eval.inner.regularity_warning {
        flag = ConvergenceFlag::RegularityWarning;
    }
    Ok(ParameterEstimate {
        p: eval.inner.p.clone(),
        phi,
        loss: eval.objective,
        iterations,
        convergence_flag: flag,
        loss_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;
    use crate::problem::{validate_problem, BasisField, ConstraintSet, ModelStructure, Problem, Trajectory};
    use proptest::prelude::*;

    /// dx/dt = p e^{−φ t}, x(0) = 1, so x(t) = 1 + p/φ (1 − e^{−φ t}).
    fn decay_problem(p: f64, phi: f64) -> Problem {
        let times: Vec<f64> = (0..=100).map(|k| k as f64 * 0.02).collect();
        let states = DMatrix::from_fn(1, times.len(), |_, k| 1.0 + p / phi * (1.0 - (-phi * times[k]).exp()));
        let basis = vec![BasisField::on_state("decay", vec![(-(Expr::param(0) * Expr::Time)).exp()], 1, 0, 1.0)];
        let model = ModelStructure::new(1, basis, vec!["phi".into()]);
        let cons = ConstraintSet::unconstrained(1, 1)
            .with_phi_bounds(DVector::from_vec(vec![0.01]), DVector::from_vec(vec![10.0]))
            .unwrap();
        validate_problem(model, cons, vec![Trajectory::new(times, states)]).unwrap()
    }

    #[test]
    fn gradient_vanishes_at_truth_on_noiseless_data() {
        let ws = Workspace::new(decay_problem(1.5, 0.8)).unwrap();
        let ev = outer_eval(&ws, &DVector::from_vec(vec![0.8]), 0.0, HessianMode::Paper).unwrap();
        assert!(ev.gradient.norm() <= 1e-3 * (1.0 + ev.objective.abs()));
        assert!((ev.inner.p[0] - 1.5).abs() < 1e-6);
    }

    #[test]
    fn recovers_decay_rate_from_perturbed_start() {
        let ws = Workspace::new(decay_problem(1.5, 0.8)).unwrap();
        for mode in [HessianMode::Paper, HessianMode::ExactChain, HessianMode::GaussNewton] {
            let opts = OuterOptions {
                hessian_mode: mode,
                ..OuterOptions::default()
            };
            let est = optimize_outer(&ws, &DVector::from_vec(vec![1.1]), &opts).unwrap();
            assert_eq!(est.convergence_flag, ConvergenceFlag::Converged, "{mode:?}");
            assert!((est.phi[0] - 0.8).abs() < 1e-5, "{mode:?}: {}", est.phi[0]);
            assert!((est.p[0] - 1.5).abs() < 1e-5);
            assert!(est.loss_trace.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    fn three_param_workspace() -> Workspace {
        // two saturating terms and a power law, noisy-free synthetic data
        let times: Vec<f64> = (0..=80).map(|k| k as f64 * 0.05).collect();
        let states = DMatrix::from_fn(2, times.len(), |s, k| {
            let t = times[k];
            if s == 0 {
                2.0 * (-0.7 * t).exp() + 0.3
            } else {
                1.0 + 0.5 * (1.3 * t).sin()
            }
        });
        let basis = vec![
            BasisField::on_state("a", vec![Expr::saturating(0, 0)], 2, 0, -1.0),
            BasisField::on_state("b", vec![Expr::x(1), Expr::saturating(0, 1)], 2, 1, 1.0),
            BasisField::on_state("c", vec![Expr::x(1).powe(Expr::param(2))], 2, 0, 1.0),
            BasisField::on_state("d", vec![Expr::x(0)], 2, 1, -1.0),
        ];
        let model = ModelStructure::new(2, basis, vec!["K1".into(), "K2".into(), "n".into()]);
        let cons = ConstraintSet::unconstrained(4, 3)
            .with_phi_bounds(DVector::from_vec(vec![1e-3, 1e-3, 0.1]), DVector::from_vec(vec![10.0, 10.0, 4.0]))
            .unwrap();
        Workspace::new(validate_problem(model, cons, vec![Trajectory::new(times, states)]).unwrap()).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn envelope_gradient_matches_finite_differences(
            k1 in 0.2f64..2.0, k2 in 0.2f64..2.0, n in 0.5f64..2.5,
            v in prop::collection::vec(-1.0f64..1.0, 3),
        ) {
            let ws = three_param_workspace();
            let phi = DVector::from_vec(vec![k1, k2, n]);
            let ev = outer_eval(&ws, &phi, 1e-6, HessianMode::Paper).unwrap();
            let v = DVector::from_vec(v);
            prop_assume!(v.norm() > 0.1);
            let h = 1e-5;
            let f = |x: &DVector<f64>| outer_objective(&ws, x, 1e-6).unwrap().0;
            let fd = (f(&(&phi + &v * h)) - f(&(&phi - &v * h))) / (2.0 * h);
            let an = ev.gradient.dot(&v);
            prop_assert!((fd - an).abs() <= 1e-5 * (an.abs() + ev.gradient.norm() * v.norm()) + 1e-12,
                "fd {fd} analytic {an}");
        }

        #[test]
        fn hessians_are_symmetric_and_paper_term_is_psd(
            k1 in 0.2f64..2.0, k2 in 0.2f64..2.0, n in 0.5f64..2.5,
        ) {
            let ws = three_param_workspace();
            let phi = DVector::from_vec(vec![k1, k2, n]);
            for mode in [HessianMode::Paper, HessianMode::ExactChain, HessianMode::GaussNewton] {
                let ev = outer_eval(&ws, &phi, 1e-6, mode).unwrap();
                prop_assert!((&ev.hessian - ev.hessian.transpose()).norm() <= 1e-10 * (1.0 + ev.hessian.norm()));
                let coupling = ev.dp_dphi.transpose() * ev.inner.lpp() * &ev.dp_dphi;
                let emin = SymmetricEigen::new(coupling.clone()).eigenvalues.min();
                prop_assert!(emin >= -1e-10 * (1.0 + coupling.norm()));
            }
        }

        #[test]
        fn exact_chain_matches_derivative_of_gradient(
            k1 in 0.2f64..2.0, k2 in 0.2f64..2.0, n in 0.5f64..2.5,
        ) {
            let ws = three_param_workspace();
            let phi = DVector::from_vec(vec![k1, k2, n]);
            let ev = outer_eval(&ws, &phi, 1e-6, HessianMode::ExactChain).unwrap();
            let h = 1e-5;
            let g = |x: &DVector<f64>| outer_eval(&ws, x, 1e-6, HessianMode::Paper).unwrap().gradient;
            let mut fd = DMatrix::zeros(3, 3);
            for m in 0..3 {
                let mut e = DVector::zeros(3);
                e[m] = h;
                fd.set_column(m, &((g(&(&phi + &e)) - g(&(&phi - &e))) / (2.0 * h)));
            }
            prop_assert!((&ev.hessian - &fd).norm() <= 1e-4 * (1.0 + fd.norm()), "{} vs {}", ev.hessian, fd);
        }

        #[test]
        fn iterates_respect_bounds_and_never_increase(
            k1 in 0.01f64..5.0, k2 in 0.01f64..5.0, n in 0.2f64..3.5,
        ) {
            let ws = three_param_workspace();
            let opts = OuterOptions { max_iterations: 30, ..OuterOptions::default() };
            let est = optimize_outer(&ws, &DVector::from_vec(vec![k1, k2, n]), &opts).unwrap();
            let (lo, hi) = ws.problem().phi_bounds();
            for i in 0..3 {
                prop_assert!(est.phi[i] >= lo[i] && est.phi[i] <= hi[i]);
            }
            prop_assert!(est.loss_trace.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn quadratic_landscape_converges_in_two_steps() {
        // A(φ) = ∫x + φ∫x² with p pinned to 1: the loss is quadratic in φ
        let times: Vec<f64> = (0..=40).map(|k| k as f64 * 0.05).collect();
        let states = DMatrix::from_fn(1, times.len(), |_, k| (-times[k]).exp());
        let basis = vec![BasisField::on_state(
            "lin",
            vec![Expr::x(0) + Expr::param(0) * Expr::x(0) * Expr::x(0)],
            1,
            0,
            1.0,
        )];
        let model = ModelStructure::new(1, basis, vec!["phi".into()]);
        let cons = ConstraintSet::unconstrained(1, 1)
            .with_equalities(DMatrix::from_element(1, 1, 1.0), DVector::from_vec(vec![1.0]))
            .unwrap();
        let ws = Workspace::new(validate_problem(model, cons, vec![Trajectory::new(times, states)]).unwrap()).unwrap();
        let opts = OuterOptions {
            initial_radius: 1e6,
            max_radius: 1e8,
            ..OuterOptions::default()
        };
        for start in [-50.0, -3.0, 0.5, 7.0, 200.0] {
            let est = optimize_outer(&ws, &DVector::from_vec(vec![start]), &opts).unwrap();
            assert_eq!(est.convergence_flag, ConvergenceFlag::Converged);
            assert!(est.iterations <= 2, "start {start}: {} iterations", est.iterations);
        }
    }

    #[test]
    fn no_nonlinear_parameters_is_a_single_inner_solve() {
        let times: Vec<f64> = (0..=20).map(|k| k as f64 * 0.1).collect();
        let states = DMatrix::from_fn(1, times.len(), |_, k| (-0.5 * times[k]).exp());
        let basis = vec![BasisField::on_state("x", vec![Expr::x(0)], 1, 0, 1.0)];
        let model = ModelStructure::new(1, basis, vec![]);
        let ws = Workspace::new(validate_problem(model, ConstraintSet::unconstrained(1, 0), vec![Trajectory::new(times, states)]).unwrap()).unwrap();
        let est = optimize_outer(&ws, &DVector::zeros(0), &OuterOptions::default()).unwrap();
        assert_eq!(est.iterations, 0);
        assert!((est.p[0] + 0.5).abs() < 1e-5);
    }

    #[test]
    fn trust_region_step_satisfies_optimality_conditions() {
        let h = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, -1.0, 0.3, 0.0, 0.3, 0.5]);
        let g = DVector::from_vec(vec![1.0, -0.5, 0.2]);
        for radius in [0.1, 1.0, 10.0] {
            let d = trust_region_step(&g, &h, radius);
            assert!((d.norm() - radius).abs() < 1e-8 * radius);
            // (H + σI) d = −g for a single σ ≥ −λ_min
            let hd = &h * &d + &g;
            let sigma = -hd.dot(&d) / d.norm_squared();
            assert!((hd + &d * sigma).norm() < 1e-7);
            let lmin = SymmetricEigen::new(h.clone()).eigenvalues.min();
            assert!(sigma >= -lmin - 1e-8);
        }
        // interior Newton step
        let spd = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let g2 = DVector::from_vec(vec![1.0, 2.0]);
        let d = trust_region_step(&g2, &spd, 10.0);
        assert!((&spd * &d + &g2).norm() < 1e-12);
        // hard case: gradient orthogonal to the negative-curvature direction
        let hard = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 2.0]);
        let g3 = DVector::from_vec(vec![0.0, 1.0]);
        let d = trust_region_step(&g3, &hard, 2.0);
        assert!((d.norm() - 2.0).abs() < 1e-10);
        assert!(d[0].abs() > 1.0);
    }
}
