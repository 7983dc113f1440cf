//! Integrated design `A(phi)` and target `b`, plus their derivatives in phi.
//!
//! Every basis field is `loading_j * g_j(x, phi)`, so the stacked design
//! column `j` is `loading_j ⊗ F[:, j]` where `F[k, j] = ∫_{t_0}^{t_k} g_j`.
//! The design is stored in that factored form per experiment; the dense
//! stacked matrix (rows ordered experiment, time, state) is available through
//! [`IntegratedDesign::to_dense`].

use std::collections::BTreeSet;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dual::{Dual, Scalar};
use crate::error::{Error, Result};
use crate::expr::EvalPoint;
use crate::interp::{fit_interpolants, InterpolantSet, QuadratureGrid};
use crate::problem::Problem;

#[derive(Debug, Clone)]
pub struct IntegratedDesign {
    loadings: Arc<DMatrix<f64>>,
    /// `loadingsᵀ loadings`
    cross: Arc<DMatrix<f64>>,
    features: Vec<DMatrix<f64>>,
    targets: Vec<DMatrix<f64>>,
    phi: DVector<f64>,
}

/// Directional derivative `dA_v` of the design; `db_v` is identically zero.
#[derive(Debug, Clone)]
pub struct DesignDerivative {
    features: Vec<DMatrix<f64>>,
    direction: DVector<f64>,
    phi: DVector<f64>,
}

/// Sparse Jacobian of the design features: one column per (basis, phi) pair
/// where the basis field actually depends on that phi.
#[derive(Debug, Clone)]
pub struct DesignJacobian {
    pairs: Vec<(usize, usize)>,
    columns: Vec<DMatrix<f64>>,
    phi: DVector<f64>,
}

impl IntegratedDesign {
    /// Wraps a dense `A`, `b` as a single-state, single-experiment design.
    pub fn from_dense(a: DMatrix<f64>, b: DVector<f64>, phi: DVector<f64>) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(Error::DimensionMismatch(format!(
                "A has {} rows but b has length {}",
                a.nrows(),
                b.len()
            )));
        }
        let n = a.ncols();
        let loadings = DMatrix::from_element(1, n, 1.0);
        let cross = loadings.tr_mul(&loadings);
        Ok(Self {
            loadings: Arc::new(loadings),
            cross: Arc::new(cross),
            features: vec![a],
            targets: vec![DMatrix::from_column_slice(b.len(), 1, b.as_slice())],
            phi,
        })
    }

    pub fn n_cols(&self) -> usize {
        self.loadings.ncols()
    }

    pub fn n_states(&self) -> usize {
        self.loadings.nrows()
    }

    pub fn n_rows(&self) -> usize {
        self.features.iter().map(|f| f.nrows()).sum::<usize>() * self.n_states()
    }

    pub fn phi(&self) -> &DVector<f64> {
        &self.phi
    }

    pub fn features(&self) -> &[DMatrix<f64>] {
        &self.features
    }

    pub fn targets(&self) -> &[DMatrix<f64>] {
        &self.targets
    }

    pub fn loadings(&self) -> &DMatrix<f64> {
        &self.loadings
    }

    pub fn cross(&self) -> &DMatrix<f64> {
        &self.cross
    }

    pub fn is_finite(&self) -> bool {
        self.features.iter().all(|f| f.iter().all(|v| v.is_finite()))
    }

    /// Dense stacked `A` and `b`.
    pub fn to_dense(&self) -> (DMatrix<f64>, DVector<f64>) {
        let ns = self.n_states();
        let mut a = DMatrix::zeros(self.n_rows(), self.n_cols());
        let mut b = DVector::zeros(self.n_rows());
        let mut row = 0;
        for (f, t) in self.features.iter().zip(&self.targets) {
            for k in 0..f.nrows() {
                for s in 0..ns {
                    for j in 0..self.n_cols() {
                        a[(row, j)] = self.loadings[(s, j)] * f[(k, j)];
                    }
                    b[row] = t[(k, s)];
                    row += 1;
                }
            }
        }
        (a, b)
    }

    /// `AᵀA`
    pub fn gram(&self) -> DMatrix<f64> {
        let n = self.n_cols();
        let mut g = DMatrix::zeros(n, n);
        for f in &self.features {
            g += f.tr_mul(f);
        }
        g.component_mul_assign(&self.cross);
        g
    }

    /// `Aᵀb`
    pub fn at_b(&self) -> DVector<f64> {
        self.transpose_apply(&self.targets)
    }

    /// `Aᵀy` for a stacked vector given per experiment as `T_e × n_states`.
    pub fn transpose_apply(&self, ys: &[DMatrix<f64>]) -> DVector<f64> {
        transpose_apply(&self.loadings, &self.features, ys)
    }

    /// `A p` per experiment.
    pub fn apply(&self, p: &DVector<f64>) -> Vec<DMatrix<f64>> {
        apply(&self.loadings, &self.features, p)
    }

    /// `A p - b` per experiment.
    pub fn residuals(&self, p: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let mut r = self.apply(p);
        for (ri, ti) in r.iter_mut().zip(&self.targets) {
            *ri -= ti;
        }
        r
    }

    /// `½‖A p − b‖² + ½ ridge ‖p‖²`
    pub fn loss(&self, p: &DVector<f64>, ridge: f64) -> f64 {
        let rss: f64 = self.residuals(p).iter().map(|r| r.norm_squared()).sum();
        0.5 * rss + 0.5 * ridge * p.norm_squared()
    }
}

impl DesignDerivative {
    /// Wraps a dense `dA_v` matching [`IntegratedDesign::from_dense`].
    pub fn from_dense(da: DMatrix<f64>, direction: DVector<f64>, phi: DVector<f64>) -> Self {
        Self {
            features: vec![da],
            direction,
            phi,
        }
    }

    pub fn features(&self) -> &[DMatrix<f64>] {
        &self.features
    }

    pub fn direction(&self) -> &DVector<f64> {
        &self.direction
    }

    pub fn phi(&self) -> &DVector<f64> {
        &self.phi
    }

    /// `dA_v p` per experiment.
    pub fn apply(&self, design: &IntegratedDesign, p: &DVector<f64>) -> Vec<DMatrix<f64>> {
        apply(&design.loadings, &self.features, p)
    }

    /// `dA_vᵀ y`
    pub fn transpose_apply(&self, design: &IntegratedDesign, ys: &[DMatrix<f64>]) -> DVector<f64> {
        transpose_apply(&design.loadings, &self.features, ys)
    }

    pub fn to_dense(&self, design: &IntegratedDesign) -> DMatrix<f64> {
        let d = IntegratedDesign {
            features: self.features.clone(),
            ..design.clone()
        };
        d.to_dense().0
    }

    pub fn is_zero(&self) -> bool {
        self.features.iter().all(|f| f.iter().all(|v| *v == 0.0))
    }
}

impl DesignJacobian {
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Per experiment `T_e × n_pairs`.
    pub fn columns(&self) -> &[DMatrix<f64>] {
        &self.columns
    }

    pub fn phi(&self) -> &DVector<f64> {
        &self.phi
    }

    /// Contracts the Jacobian with a direction.
    pub fn directional(&self, v: &DVector<f64>, n_cols: usize) -> DesignDerivative {
        let features = self
            .columns
            .iter()
            .map(|d| {
                let mut f = DMatrix::zeros(d.nrows(), n_cols);
                for (a, &(j, m)) in self.pairs.iter().enumerate() {
                    if v[m] != 0.0 {
                        f.column_mut(j).axpy(v[m], &d.column(a), 1.0);
                    }
                }
                f
            })
            .collect();
        DesignDerivative {
            features,
            direction: v.clone(),
            phi: self.phi.clone(),
        }
    }
}

fn apply(loadings: &DMatrix<f64>, features: &[DMatrix<f64>], p: &DVector<f64>) -> Vec<DMatrix<f64>> {
    // W = diag(p) Cᵀ (n × n_states)
    let mut w = loadings.transpose();
    for (j, mut row) in w.row_iter_mut().enumerate() {
        row *= p[j];
    }
    features.iter().map(|f| f * &w).collect()
}

fn transpose_apply(
    loadings: &DMatrix<f64>,
    features: &[DMatrix<f64>],
    ys: &[DMatrix<f64>],
) -> DVector<f64> {
    let n = loadings.ncols();
    let mut acc = DMatrix::zeros(n, loadings.nrows());
    for (f, y) in features.iter().zip(ys) {
        acc += f.tr_mul(y);
    }
    DVector::from_fn(n, |j, _| {
        (0..loadings.nrows())
            .map(|s| loadings[(s, j)] * acc[(j, s)])
            .sum()
    })
}

#[derive(Debug, Clone)]
struct ColumnPlan {
    invariant: Vec<usize>,
    varying: Vec<usize>,
    varying_params: BTreeSet<usize>,
    deps: Vec<usize>,
}

#[derive(Debug, Clone)]
struct ExperimentCache {
    interp: InterpolantSet,
    grid: QuadratureGrid,
    /// `n_nodes × n_states`, node-major.
    node_states: Vec<f64>,
    targets: DMatrix<f64>,
    /// `∫ prod(varying factors)` for columns whose varying part is phi-free.
    static_integrals: Vec<Option<Vec<f64>>>,
}

/// Interpolated delayed states at every node, laid out `[node][slot][state]`.
struct DelayedNodes {
    values: Vec<f64>,
    derivs: Vec<f64>,
}

/// A validated problem with fitted interpolants and the phi-independent
/// parts of the design precomputed.
#[derive(Debug, Clone)]
pub struct Workspace {
    problem: Problem,
    loadings: Arc<DMatrix<f64>>,
    cross: Arc<DMatrix<f64>>,
    plans: Vec<ColumnPlan>,
    experiments: Vec<ExperimentCache>,
    delay_slots: Vec<usize>,
}

impl Workspace {
    /// Fits interpolants to every trajectory of the problem.
    pub fn new(problem: Problem) -> Result<Self> {
        let interps = problem
            .data()
            .par_iter()
            .map(fit_interpolants)
            .collect::<Result<Vec<_>>>()?;
        Self::with_interpolants(problem, interps)
    }

    pub fn with_interpolants(problem: Problem, interps: Vec<InterpolantSet>) -> Result<Self> {
        if interps.len() != problem.data().len() {
            return Err(Error::DimensionMismatch(format!(
                "{} interpolant sets for {} trajectories",
                interps.len(),
                problem.data().len()
            )));
        }
        let model = problem.model();
        let ns = model.n_states;
        let loadings = model.loading_matrix();
        let cross = loadings.tr_mul(&loadings);
        let plans: Vec<ColumnPlan> = model
            .basis
            .iter()
            .map(|field| {
                let mut plan = ColumnPlan {
                    invariant: Vec::new(),
                    varying: Vec::new(),
                    varying_params: BTreeSet::new(),
                    deps: Vec::new(),
                };
                let mut deps = BTreeSet::new();
                for (i, f) in field.factors.iter().enumerate() {
                    f.collect_params(&mut deps);
                    if f.is_time_invariant() {
                        plan.invariant.push(i);
                    } else {
                        plan.varying.push(i);
                        f.collect_params(&mut plan.varying_params);
                    }
                }
                plan.deps = deps.into_iter().collect();
                plan
            })
            .collect();
        let delay_slots = model.delay_slots();

        let mut experiments = Vec::with_capacity(interps.len());
        for (e, (traj, interp)) in problem.data().iter().zip(interps).enumerate() {
            let grid = QuadratureGrid::simpson_refined(&traj.times)?;
            let nodes = grid.nodes();
            let mut node_states = vec![0.0; nodes.len() * ns];
            let mut scratch = vec![0.0; ns];
            for (i, &t) in nodes.iter().enumerate() {
                interp.query_all(t, &mut node_states[i * ns..(i + 1) * ns], &mut scratch)?;
            }
            // measured values at the sample instants, not the spline
            for k in 0..traj.n_times() {
                for s in 0..ns {
                    node_states[2 * k * ns + s] = traj.states[(s, k)];
                }
            }
            let t_count = traj.n_times() - 1;
            let targets = DMatrix::from_fn(t_count, ns, |k, s| {
                traj.states[(s, k + 1)] - traj.states[(s, 0)]
            });
            let mut cache = ExperimentCache {
                interp,
                grid,
                node_states,
                targets,
                static_integrals: vec![None; plans.len()],
            };
            for (j, plan) in plans.iter().enumerate() {
                if plan.varying_params.is_empty() {
                    let exo = problem.exogenous_values(e);
                    let phi = vec![0.0; model.n_nonlinear()];
                    let vals =
                        varying_node_values::<f64>(&problem, plan, j, e, &cache, None, &phi, exo, &delay_slots)?;
                    cache.static_integrals[j] = Some(cache.grid.cumulate(&vals));
                }
            }
            experiments.push(cache);
        }

        Ok(Self {
            problem,
            loadings: Arc::new(loadings),
            cross: Arc::new(cross),
            plans,
            experiments,
            delay_slots,
        })
    }

    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn interpolants(&self, experiment: usize) -> &InterpolantSet {
        &self.experiments[experiment].interp
    }

    /// Phi indices each basis field depends on.
    pub fn dependencies(&self, column: usize) -> &[usize] {
        &self.plans[column].deps
    }

    fn delayed_nodes(&self, e: usize, phi: &[f64]) -> Result<Option<DelayedNodes>> {
        let model = self.problem.model();
        if !model.has_delays() {
            return Ok(None);
        }
        let cache = &self.experiments[e];
        let ns = model.n_states;
        let nd = model.delays.len();
        let nodes = cache.grid.nodes();
        let mut values = vec![0.0; nodes.len() * nd * ns];
        let mut derivs = vec![0.0; nodes.len() * nd * ns];
        for (i, &t) in nodes.iter().enumerate() {
            for (slot, &d) in model.delays.iter().enumerate() {
                let off = (i * nd + slot) * ns;
                cache.interp.query_all(
                    t - phi[d],
                    &mut values[off..off + ns],
                    &mut derivs[off..off + ns],
                )?;
            }
        }
        Ok(Some(DelayedNodes { values, derivs }))
    }

    fn check_phi_len(&self, phi: &DVector<f64>) -> Result<()> {
        if phi.len() != self.problem.n_nonlinear() {
            return Err(Error::DimensionMismatch(format!(
                "phi has length {} but the model has {} nonlinear parameters",
                phi.len(),
                self.problem.n_nonlinear()
            )));
        }
        Ok(())
    }

    fn empty_design(&self, phi: &DVector<f64>, features: Vec<DMatrix<f64>>) -> IntegratedDesign {
        IntegratedDesign {
            loadings: self.loadings.clone(),
            cross: self.cross.clone(),
            features,
            targets: self.experiments.iter().map(|c| c.targets.clone()).collect(),
            phi: phi.clone(),
        }
    }

    /// Builds `A(phi)` and `b`.
    pub fn assemble(&self, phi: &DVector<f64>) -> Result<IntegratedDesign> {
        self.check_phi_len(phi)?;
        let n = self.plans.len();
        let features = (0..self.experiments.len())
            .into_par_iter()
            .map(|e| {
                let cache = &self.experiments[e];
                let exo = self.problem.exogenous_values(e);
                let delayed = self.delayed_nodes(e, phi.as_slice())?;
                let mut f = DMatrix::zeros(cache.targets.nrows(), n);
                for (j, plan) in self.plans.iter().enumerate() {
                    let scale: f64 = invariant_value(&self.problem, plan, j, phi.as_slice(), exo, &self.delay_slots);
                    if !scale.is_finite() {
                        return Err(Error::NonFiniteBasis {
                            basis: j,
                            experiment: e,
                            node: 0,
                        });
                    }
                    let integral = match &cache.static_integrals[j] {
                        Some(v) => v.clone(),
                        None => {
                            let vals = varying_node_values::<f64>(
                                &self.problem,
                                plan,
                                j,
                                e,
                                cache,
                                delayed.as_ref(),
                                phi.as_slice(),
                                exo,
                                &self.delay_slots,
                            )?;
                            cache.grid.cumulate(&vals)
                        }
                    };
                    for (k, v) in integral.iter().enumerate() {
                        f[(k, j)] = scale * v;
                    }
                }
                Ok(f)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.empty_design(phi, features))
    }

    /// `dA/dphi · v` evaluated in one forward-mode pass.
    pub fn design_jvp(&self, phi: &DVector<f64>, v: &DVector<f64>) -> Result<DesignDerivative> {
        self.check_phi_len(phi)?;
        self.check_phi_len(v)?;
        let n = self.plans.len();
        let phi_dual: Vec<Dual> = phi.iter().zip(v.iter()).map(|(&a, &b)| Dual::new(a, b)).collect();
        let features = (0..self.experiments.len())
            .into_par_iter()
            .map(|e| {
                let cache = &self.experiments[e];
                let exo = self.problem.exogenous_values(e);
                let delayed = self.delayed_nodes(e, phi.as_slice())?;
                let mut f = DMatrix::zeros(cache.targets.nrows(), n);
                for (j, plan) in self.plans.iter().enumerate() {
                    if plan.deps.iter().all(|&m| v[m] == 0.0) {
                        continue;
                    }
                    let scale: Dual = invariant_value(&self.problem, plan, j, &phi_dual, exo, &self.delay_slots);
                    let touched = plan.varying_params.iter().any(|&m| v[m] != 0.0);
                    let (re, eps) = if touched {
                        let vals = varying_node_values::<Dual>(
                            &self.problem,
                            plan,
                            j,
                            e,
                            cache,
                            delayed.as_ref(),
                            &phi_dual,
                            exo,
                            &self.delay_slots,
                        )?;
                        split_cumulate(&cache.grid, &vals)
                    } else {
                        let re = static_or_plain(self, plan, j, e, cache, delayed.as_ref(), phi)?;
                        let eps = vec![0.0; re.len()];
                        (re, eps)
                    };
                    for k in 0..re.len() {
                        f[(k, j)] = scale.eps * re[k] + scale.re * eps[k];
                    }
                }
                Ok(f)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DesignDerivative {
            features,
            direction: v.clone(),
            phi: phi.clone(),
        })
    }

    /// Derivative of every feature column with respect to every phi it depends on.
    pub fn design_jacobian(&self, phi: &DVector<f64>) -> Result<DesignJacobian> {
        self.check_phi_len(phi)?;
        let pairs: Vec<(usize, usize)> = self
            .plans
            .iter()
            .enumerate()
            .flat_map(|(j, plan)| plan.deps.iter().map(move |&m| (j, m)))
            .collect();
        let columns = (0..self.experiments.len())
            .into_par_iter()
            .map(|e| {
                let cache = &self.experiments[e];
                let exo = self.problem.exogenous_values(e);
                let delayed = self.delayed_nodes(e, phi.as_slice())?;
                let mut d = DMatrix::zeros(cache.targets.nrows(), pairs.len());
                let mut a = 0;
                for (j, plan) in self.plans.iter().enumerate() {
                    if plan.deps.is_empty() {
                        continue;
                    }
                    let re = static_or_plain(self, plan, j, e, cache, delayed.as_ref(), phi)?;
                    for &m in &plan.deps {
                        let seeded: Vec<Dual> = phi
                            .iter()
                            .enumerate()
                            .map(|(i, &x)| Dual::new(x, if i == m { 1.0 } else { 0.0 }))
                            .collect();
                        let scale: Dual = invariant_value(&self.problem, plan, j, &seeded, exo, &self.delay_slots);
                        let mut col = d.column_mut(a);
                        if scale.eps != 0.0 {
                            col.axpy(scale.eps, &DVector::from_column_slice(&re), 0.0);
                        }
                        if plan.varying_params.contains(&m) {
                            let vals = varying_node_values::<Dual>(
                                &self.problem,
                                plan,
                                j,
                                e,
                                cache,
                                delayed.as_ref(),
                                &seeded,
                                exo,
                                &self.delay_slots,
                            )?;
                            let eps: Vec<f64> = vals.iter().map(|x| x.eps).collect();
                            let ieps = cache.grid.cumulate(&eps);
                            for (k, v) in ieps.iter().enumerate() {
                                col[k] += scale.re * v;
                            }
                        }
                        a += 1;
                    }
                }
                Ok(d)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DesignJacobian {
            pairs,
            columns,
            phi: phi.clone(),
        })
    }
}

fn split_cumulate(grid: &QuadratureGrid, vals: &[Dual]) -> (Vec<f64>, Vec<f64>) {
    let re: Vec<f64> = vals.iter().map(|x| x.re).collect();
    let eps: Vec<f64> = vals.iter().map(|x| x.eps).collect();
    (grid.cumulate(&re), grid.cumulate(&eps))
}

fn static_or_plain(
    ws: &Workspace,
    plan: &ColumnPlan,
    j: usize,
    e: usize,
    cache: &ExperimentCache,
    delayed: Option<&DelayedNodes>,
    phi: &DVector<f64>,
) -> Result<Vec<f64>> {
    match &cache.static_integrals[j] {
        Some(v) => Ok(v.clone()),
        None => {
            let vals = varying_node_values::<f64>(
                &ws.problem,
                plan,
                j,
                e,
                cache,
                delayed,
                phi.as_slice(),
                ws.problem.exogenous_values(e),
                &ws.delay_slots,
            )?;
            Ok(cache.grid.cumulate(&vals))
        }
    }
}

/// Lifts a plain value into the scalar type, carrying a tangent when `S` is dual.
trait Lift: Scalar {
    fn lift(value: f64, tangent: f64) -> Self;
    fn tangent(self) -> f64;
}

impl Lift for f64 {
    #[inline]
    fn lift(value: f64, _: f64) -> Self {
        value
    }
    #[inline]
    fn tangent(self) -> f64 {
        0.0
    }
}

impl Lift for Dual {
    #[inline]
    fn lift(value: f64, tangent: f64) -> Self {
        Dual::new(value, tangent)
    }
    #[inline]
    fn tangent(self) -> f64 {
        self.eps
    }
}

fn invariant_value<S: Lift>(
    problem: &Problem,
    plan: &ColumnPlan,
    j: usize,
    phi: &[S],
    exo: &[f64],
    delay_slots: &[usize],
) -> S {
    let field = &problem.model().basis[j];
    let pt = EvalPoint {
        time: 0.0,
        state: &[],
        delayed: &[],
        delay_slot: delay_slots,
        n_states: problem.model().n_states,
        phi,
        exo,
    };
    let mut acc = S::constant(1.0);
    for &i in &plan.invariant {
        acc = acc * field.factors[i].eval(&pt);
    }
    acc
}

/// Product of the time-varying factors of column `j` at every quadrature node.
#[allow(clippy::too_many_arguments)]
fn varying_node_values<S: Lift>(
    problem: &Problem,
    plan: &ColumnPlan,
    j: usize,
    e: usize,
    cache: &ExperimentCache,
    delayed: Option<&DelayedNodes>,
    phi: &[S],
    exo: &[f64],
    delay_slots: &[usize],
) -> Result<Vec<S>> {
    let model = problem.model();
    let field = &model.basis[j];
    let ns = model.n_states;
    let nd = model.delays.len();
    let nodes = cache.grid.nodes();
    let mut out = Vec::with_capacity(nodes.len());
    if plan.varying.is_empty() {
        out.resize(nodes.len(), S::constant(1.0));
        return Ok(out);
    }
    let mut state: Vec<S> = vec![S::constant(0.0); ns];
    let mut dstate: Vec<S> = vec![S::constant(0.0); nd * ns];
    // tangent of phi[d] drives the delayed state through -dPsi/dt
    let delay_tangent: Vec<f64> = model.delays.iter().map(|&d| phi[d].tangent()).collect();
    for (i, &t) in nodes.iter().enumerate() {
        for s in 0..ns {
            state[s] = S::constant(cache.node_states[i * ns + s]);
        }
        if let Some(dn) = delayed {
            for slot in 0..nd {
                for s in 0..ns {
                    let off = (i * nd + slot) * ns + s;
                    dstate[slot * ns + s] =
                        S::lift(dn.values[off], -dn.derivs[off] * delay_tangent[slot]);
                }
            }
        }
        let pt = EvalPoint {
            time: t,
            state: &state,
            delayed: &dstate,
            delay_slot: delay_slots,
            n_states: ns,
            phi,
            exo,
        };
        let mut acc = S::constant(1.0);
        for &f in &plan.varying {
            acc = acc * field.factors[f].eval(&pt);
        }
        if !acc.value().is_finite() {
            return Err(Error::NonFiniteBasis {
                basis: j,
                experiment: e,
                node: i,
            });
        }
        out.push(acc);
    }
    Ok(out)
}
