//! Shared data model: trajectories, model structures, constraint sets and the
//! validated problem handle every other module consumes.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dual::Scalar;
use crate::error::{Error, Result};
use crate::expr::{EvalPoint, Expr};

/// Measurements of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// `n_states × n_times`.
    pub states: DMatrix<f64>,
    /// Constant per-state value for `t <= 0` (delay problems only).
    pub history: Option<Vec<f64>>,
    pub exogenous: BTreeMap<String, f64>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: DMatrix<f64>) -> Self {
        Self {
            times,
            states,
            history: None,
            exogenous: BTreeMap::new(),
        }
    }

    pub fn with_history(mut self, history: Vec<f64>) -> Self {
        self.history = Some(history);
        self
    }

    pub fn with_exogenous(mut self, name: &str, value: f64) -> Self {
        self.exogenous.insert(name.to_string(), value);
        self
    }

    pub fn n_states(&self) -> usize {
        self.states.nrows()
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn span(&self) -> f64 {
        match (self.times.first(), self.times.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    pub(crate) fn check_times(&self) -> Result<()> {
        for (index, w) in self.times.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(Error::NonMonotoneTimes { index: index + 1 });
            }
        }
        Ok(())
    }
}

/// One column of the model: `theta_j(x, phi) = loading_j * prod(factors)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisField {
    pub name: String,
    pub factors: Vec<Expr>,
    /// Constant direction in state space (length `n_states`).
    pub loading: Vec<f64>,
}

impl BasisField {
    pub fn new(name: impl Into<String>, factors: Vec<Expr>, loading: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            factors,
            loading,
        }
    }

    /// Unit loading on one state with the given sign.
    pub fn on_state(
        name: impl Into<String>,
        factors: Vec<Expr>,
        n_states: usize,
        state: usize,
        sign: f64,
    ) -> Self {
        let mut loading = vec![0.0; n_states];
        loading[state] = sign;
        Self::new(name, factors, loading)
    }

    pub fn feature<S: Scalar>(&self, pt: &EvalPoint<'_, S>) -> S {
        let mut acc = S::constant(1.0);
        for f in &self.factors {
            acc = acc * f.eval(pt);
        }
        acc
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelStructure {
    pub n_states: usize,
    pub basis: Vec<BasisField>,
    pub nonlinear_names: Vec<String>,
    /// Phi indices that are time delays.
    pub delays: Vec<usize>,
    /// Names of exogenous constants, resolved per trajectory.
    pub exogenous: Vec<String>,
    /// `n_states × n_rates` when the basis is organised per reaction rate.
    pub stoich: Option<DMatrix<f64>>,
}

impl ModelStructure {
    pub fn new(n_states: usize, basis: Vec<BasisField>, nonlinear_names: Vec<String>) -> Self {
        Self {
            n_states,
            basis,
            nonlinear_names,
            delays: Vec::new(),
            exogenous: Vec::new(),
            stoich: None,
        }
    }

    pub fn with_delays(mut self, delays: Vec<usize>) -> Self {
        self.delays = delays;
        self
    }

    pub fn with_exogenous(mut self, names: &[&str]) -> Self {
        self.exogenous = names.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn with_stoich(mut self, stoich: DMatrix<f64>) -> Self {
        self.stoich = Some(stoich);
        self
    }

    pub fn n_linear(&self) -> usize {
        self.basis.len()
    }

    pub fn n_nonlinear(&self) -> usize {
        self.nonlinear_names.len()
    }

    pub fn linear_names(&self) -> Vec<String> {
        self.basis.iter().map(|b| b.name.clone()).collect()
    }

    pub fn has_delays(&self) -> bool {
        !self.delays.is_empty()
    }

    /// Phi index → delay slot, `usize::MAX` for ordinary parameters.
    pub fn delay_slots(&self) -> Vec<usize> {
        let mut slots = vec![usize::MAX; self.n_nonlinear()];
        for (slot, &d) in self.delays.iter().enumerate() {
            if d < slots.len() {
                slots[d] = slot;
            }
        }
        slots
    }

    /// Loadings as an `n_states × n_linear` matrix.
    pub fn loading_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_states, self.n_linear(), |s, j| self.basis[j].loading[s])
    }

    /// Right-hand side `sum_j p_j loading_j feature_j`.
    pub fn rhs(&self, pt: &EvalPoint<'_, f64>, p: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (field, &pj) in self.basis.iter().zip(p) {
            if pj == 0.0 {
                continue;
            }
            let f = pj * field.feature(pt);
            for (o, &c) in out.iter_mut().zip(&field.loading) {
                if c != 0.0 {
                    *o += c * f;
                }
            }
        }
    }

    fn check(&self) -> Result<()> {
        let n_phi = self.n_nonlinear();
        if self.n_states == 0 {
            return Err(Error::InvalidModel("model has no states".into()));
        }
        if self.basis.is_empty() {
            return Err(Error::EmptyModel);
        }
        let mut seen = BTreeSet::new();
        for &d in &self.delays {
            if d >= n_phi {
                return Err(Error::InvalidModel(format!(
                    "delay index {d} is not a phi index (n_nonlinear = {n_phi})"
                )));
            }
            if !seen.insert(d) {
                return Err(Error::InvalidModel(format!("delay index {d} listed twice")));
            }
        }
        for (j, field) in self.basis.iter().enumerate() {
            if field.loading.len() != self.n_states {
                return Err(Error::DimensionMismatch(format!(
                    "basis {j} loading has length {} but n_states = {}",
                    field.loading.len(),
                    self.n_states
                )));
            }
            let mut delays = BTreeSet::new();
            for f in &field.factors {
                f.check_indices(self.n_states, n_phi, self.exogenous.len())
                    .map_err(|e| Error::InvalidModel(format!("basis {j}: {e}")))?;
                f.collect_delays(&mut delays);
            }
            if let Some(d) = delays.iter().find(|d| !seen.contains(d)) {
                return Err(Error::InvalidModel(format!(
                    "basis {j} delays by phi[{d}] which is not declared as a delay"
                )));
            }
        }
        if let Some(s) = &self.stoich {
            if s.nrows() != self.n_states {
                return Err(Error::DimensionMismatch(format!(
                    "stoichiometric matrix has {} rows but n_states = {}",
                    s.nrows(),
                    self.n_states
                )));
            }
        }
        Ok(())
    }
}

/// Affine constraints on `p` and box bounds on `phi`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    /// `G p = c`
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    /// `H p <= d`
    pub ineq_matrix: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
    pub phi_lower: DVector<f64>,
    pub phi_upper: DVector<f64>,
}

impl ConstraintSet {
    pub fn unconstrained(n_linear: usize, n_nonlinear: usize) -> Self {
        Self {
            eq_matrix: DMatrix::zeros(0, n_linear),
            eq_rhs: DVector::zeros(0),
            ineq_matrix: DMatrix::zeros(0, n_linear),
            ineq_rhs: DVector::zeros(0),
            phi_lower: DVector::from_element(n_nonlinear, f64::NEG_INFINITY),
            phi_upper: DVector::from_element(n_nonlinear, f64::INFINITY),
        }
    }

    pub fn with_equalities(mut self, g: DMatrix<f64>, c: DVector<f64>) -> Result<Self> {
        if g.ncols() != self.n_linear() || g.nrows() != c.len() {
            return Err(Error::DimensionMismatch(format!(
                "equality matrix is {}x{} with rhs {}, expected ?x{}",
                g.nrows(),
                g.ncols(),
                c.len(),
                self.n_linear()
            )));
        }
        if g.nrows() > g.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} equalities exceed {} linear parameters",
                g.nrows(),
                g.ncols()
            )));
        }
        let rank = numerical_rank(&g);
        if rank < g.nrows() {
            return Err(Error::RankDeficientEqualities {
                rows: g.nrows(),
                rank,
            });
        }
        self.eq_matrix = g;
        self.eq_rhs = c;
        Ok(self)
    }

    pub fn with_inequalities(mut self, h: DMatrix<f64>, d: DVector<f64>) -> Result<Self> {
        if h.ncols() != self.n_linear() || h.nrows() != d.len() {
            return Err(Error::DimensionMismatch(format!(
                "inequality matrix is {}x{} with rhs {}, expected ?x{}",
                h.nrows(),
                h.ncols(),
                d.len(),
                self.n_linear()
            )));
        }
        self.ineq_matrix = h;
        self.ineq_rhs = d;
        Ok(self)
    }

    /// `p >= 0` written as `-I p <= 0`.
    pub fn with_nonnegative_p(self) -> Result<Self> {
        let n = self.n_linear();
        self.with_inequalities(-DMatrix::identity(n, n), DVector::zeros(n))
    }

    pub fn with_phi_bounds(mut self, lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != self.n_nonlinear() || upper.len() != self.n_nonlinear() {
            return Err(Error::DimensionMismatch(format!(
                "phi bounds have lengths {}/{} but n_nonlinear = {}",
                lower.len(),
                upper.len(),
                self.n_nonlinear()
            )));
        }
        if let Some(i) = (0..lower.len()).find(|&i| !(lower[i] <= upper[i])) {
            return Err(Error::InvalidOption(format!(
                "phi bound {i}: lower {} > upper {}",
                lower[i], upper[i]
            )));
        }
        self.phi_lower = lower;
        self.phi_upper = upper;
        Ok(self)
    }

    pub fn n_linear(&self) -> usize {
        self.eq_matrix.ncols()
    }

    pub fn n_nonlinear(&self) -> usize {
        self.phi_lower.len()
    }

    pub fn n_eq(&self) -> usize {
        self.eq_matrix.nrows()
    }

    pub fn n_ineq(&self) -> usize {
        self.ineq_matrix.nrows()
    }
}

pub(crate) fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    let tol = smax * (m.nrows().max(m.ncols()) as f64) * 1e-12;
    sv.iter().filter(|&&s| s > tol).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergenceFlag {
    Converged,
    MaxIter,
    LineSearchFailure,
    RegularityWarning,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterEstimate {
    pub p: DVector<f64>,
    pub phi: DVector<f64>,
    pub loss: f64,
    pub iterations: usize,
    pub convergence_flag: ConvergenceFlag,
    /// Objective after each accepted step, starting with the initial point.
    pub loss_trace: Vec<f64>,
}

/// A validated, immutable problem: one model, one constraint set, many experiments.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    model: Arc<ModelStructure>,
    constraints: ConstraintSet,
    data: Vec<Trajectory>,
    exo_values: Vec<Vec<f64>>,
}

impl Problem {
    pub fn model(&self) -> &ModelStructure {
        &self.model
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    pub fn data(&self) -> &[Trajectory] {
        &self.data
    }

    pub fn exogenous_values(&self, experiment: usize) -> &[f64] {
        &self.exo_values[experiment]
    }

    pub fn n_linear(&self) -> usize {
        self.model.n_linear()
    }

    pub fn n_nonlinear(&self) -> usize {
        self.model.n_nonlinear()
    }

    /// Box bounds on phi with delays clamped to `[0, shortest span]`.
    pub fn phi_bounds(&self) -> (DVector<f64>, DVector<f64>) {
        let mut lo = self.constraints.phi_lower.clone();
        let mut hi = self.constraints.phi_upper.clone();
        let span = self
            .data
            .iter()
            .map(Trajectory::span)
            .fold(f64::INFINITY, f64::min);
        for &d in &self.model.delays {
            lo[d] = lo[d].max(0.0);
            hi[d] = hi[d].min(span);
        }
        (lo, hi)
    }

    pub fn check_phi(&self, phi: &DVector<f64>) -> Result<()> {
        if phi.len() != self.n_nonlinear() {
            return Err(Error::DimensionMismatch(format!(
                "phi has length {} but n_nonlinear = {}",
                phi.len(),
                self.n_nonlinear()
            )));
        }
        let (lo, hi) = self.phi_bounds();
        for i in 0..phi.len() {
            if !(phi[i] >= lo[i] && phi[i] <= hi[i]) {
                return Err(Error::OutOfBounds {
                    index: i,
                    value: phi[i],
                    lower: lo[i],
                    upper: hi[i],
                });
            }
        }
        Ok(())
    }

    /// Rows of the stacked design: `sum_e n_states * (n_times_e - 1)`.
    pub fn n_rows(&self) -> usize {
        self.data
            .iter()
            .map(|t| t.n_states() * (t.n_times() - 1))
            .sum()
    }
}

/// Checks dimensions and invariants and returns an immutable problem handle.
pub fn validate_problem(
    model: ModelStructure,
    constraints: ConstraintSet,
    data: Vec<Trajectory>,
) -> Result<Problem> {
    if data.is_empty() {
        return Err(Error::NoData);
    }
    model.check()?;
    let n = model.n_linear();
    let n_phi = model.n_nonlinear();
    if constraints.n_linear() != n || constraints.ineq_matrix.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "constraints are over {} linear parameters but the model has {n}",
            constraints.n_linear()
        )));
    }
    if constraints.eq_rhs.len() != constraints.n_eq()
        || constraints.ineq_rhs.len() != constraints.n_ineq()
    {
        return Err(Error::DimensionMismatch(
            "constraint right-hand side lengths do not match their matrices".into(),
        ));
    }
    if constraints.n_eq() > n {
        return Err(Error::DimensionMismatch(format!(
            "{} equalities exceed {n} linear parameters",
            constraints.n_eq()
        )));
    }
    let rank = numerical_rank(&constraints.eq_matrix);
    if rank < constraints.n_eq() {
        return Err(Error::RankDeficientEqualities {
            rows: constraints.n_eq(),
            rank,
        });
    }
    if constraints.phi_lower.len() != n_phi || constraints.phi_upper.len() != n_phi {
        return Err(Error::DimensionMismatch(format!(
            "phi bounds have length {} but the model has {n_phi} nonlinear parameters",
            constraints.phi_lower.len()
        )));
    }

    let mut exo_values = Vec::with_capacity(data.len());
    for (e, traj) in data.iter().enumerate() {
        if traj.n_states() != model.n_states {
            return Err(Error::DimensionMismatch(format!(
                "trajectory {e} has {} states but the model has {}",
                traj.n_states(),
                model.n_states
            )));
        }
        if traj.states.ncols() != traj.n_times() {
            return Err(Error::DimensionMismatch(format!(
                "trajectory {e} has {} columns for {} sample times",
                traj.states.ncols(),
                traj.n_times()
            )));
        }
        if traj.n_times() < 2 {
            return Err(Error::TooFewSamples {
                got: traj.n_times(),
                need: 2,
            });
        }
        traj.check_times()?;
        match (&traj.history, model.has_delays()) {
            (None, true) => return Err(Error::MissingHistory { experiment: e }),
            (Some(_), false) => return Err(Error::UnexpectedHistory { experiment: e }),
            (Some(h), true) if h.len() != model.n_states => {
                return Err(Error::DimensionMismatch(format!(
                    "trajectory {e} history has length {}",
                    h.len()
                )))
            }
            _ => {}
        }
        if traj.states.iter().any(|v| !v.is_finite()) {
            return Err(Error::DimensionMismatch(format!(
                "trajectory {e} contains non-finite measurements"
            )));
        }
        let mut values = Vec::with_capacity(model.exogenous.len());
        for name in &model.exogenous {
            match traj.exogenous.get(name) {
                Some(v) => values.push(*v),
                None => {
                    return Err(Error::MissingExogenous {
                        experiment: e,
                        name: name.clone(),
                    })
                }
            }
        }
        exo_values.push(values);
    }

    let problem = Problem {
        model: Arc::new(model),
        constraints,
        data,
        exo_values,
    };
    check_finite_basis(&problem)?;
    Ok(problem)
}

/// Evaluates every basis field on every measured sample at a probe phi.
fn check_finite_basis(problem: &Problem) -> Result<()> {
    let model = problem.model();
    let (lo, hi) = problem.phi_bounds();
    let probe: Vec<f64> = (0..model.n_nonlinear())
        .map(|i| 1.0f64.clamp(lo[i], hi[i]))
        .collect();
    let slots = model.delay_slots();
    for (e, traj) in problem.data().iter().enumerate() {
        // delayed arguments are probed at the current sample
        let mut delayed = Vec::with_capacity(model.delays.len() * model.n_states);
        for k in 0..traj.n_times() {
            let state: Vec<f64> = traj.states.column(k).iter().cloned().collect();
            delayed.clear();
            for _ in &model.delays {
                delayed.extend_from_slice(&state);
            }
            let pt = EvalPoint {
                time: traj.times[k],
                state: &state,
                delayed: &delayed,
                delay_slot: &slots,
                n_states: model.n_states,
                phi: &probe,
                exo: problem.exogenous_values(e),
            };
            for (j, field) in model.basis.iter().enumerate() {
                if !field.feature(&pt).is_finite() {
                    return Err(Error::NonFiniteBasis {
                        basis: j,
                        experiment: e,
                        node: k,
                    });
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_model() -> ModelStructure {
        ModelStructure::new(1, vec![BasisField::on_state("k", vec![Expr::x(0)], 1, 0, 1.0)], vec![])
    }

    fn traj() -> Trajectory {
        let times: Vec<f64> = (0..5).map(|i| i as f64 * 0.1).collect();
        let states = DMatrix::from_fn(1, 5, |_, k| (times[k]).exp());
        Trajectory::new(times, states)
    }

    #[test]
    fn zero_trajectories_is_no_data() {
        let err = validate_problem(linear_model(), ConstraintSet::unconstrained(1, 0), vec![]);
        assert_eq!(err.unwrap_err(), Error::NoData);
    }

    #[test]
    fn duplicated_equality_rows_are_rank_deficient() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        let err = ConstraintSet::unconstrained(2, 0)
            .with_equalities(g, DVector::from_vec(vec![1.0, 2.0]))
            .unwrap_err();
        assert!(matches!(err, Error::RankDeficientEqualities { rows: 2, rank: 1 }));
        assert!(err.to_string().contains("rank-deficient equalities"));
    }

    #[test]
    fn delay_without_history_is_rejected() {
        let model = ModelStructure::new(
            1,
            vec![BasisField::on_state("k", vec![Expr::delayed(0, 0)], 1, 0, 1.0)],
            vec!["tau".into()],
        )
        .with_delays(vec![0]);
        let err = validate_problem(model, ConstraintSet::unconstrained(1, 1), vec![traj()]);
        assert_eq!(err.unwrap_err(), Error::MissingHistory { experiment: 0 });
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let err = validate_problem(linear_model(), ConstraintSet::unconstrained(2, 0), vec![traj()]);
        assert!(matches!(err.unwrap_err(), Error::DimensionMismatch(_)));
    }

    #[test]
    fn validation_is_idempotent() {
        let p = validate_problem(linear_model(), ConstraintSet::unconstrained(1, 0), vec![traj()])
            .unwrap();
        let again = validate_problem(
            p.model().clone(),
            p.constraints().clone(),
            p.data().to_vec(),
        )
        .unwrap();
        assert_eq!(p, again);
    }

    #[test]
    fn non_finite_basis_is_caught() {
        let model = ModelStructure::new(
            1,
            vec![BasisField::on_state("k", vec![Expr::c(1.0) / Expr::x(0)], 1, 0, 1.0)],
            vec![],
        );
        let mut t = traj();
        t.states[(0, 2)] = 0.0;
        let err = validate_problem(model, ConstraintSet::unconstrained(1, 0), vec![t]);
        assert!(matches!(
            err.unwrap_err(),
            Error::NonFiniteBasis { basis: 0, experiment: 0, node: 2 }
        ));
    }

    #[test]
    fn delay_bounds_are_clamped_to_span() {
        let model = ModelStructure::new(
            1,
            vec![BasisField::on_state("k", vec![Expr::delayed(0, 0)], 1, 0, 1.0)],
            vec!["tau".into()],
        )
        .with_delays(vec![0]);
        let p = validate_problem(
            model,
            ConstraintSet::unconstrained(1, 1),
            vec![traj().with_history(vec![1.0])],
        )
        .unwrap();
        let (lo, hi) = p.phi_bounds();
        assert_eq!(lo[0], 0.0);
        assert!((hi[0] - 0.4).abs() < 1e-15);
    }
}
