//! Candidate-library construction over a fixed stoichiometric matrix and the
//! sequential-threshold sparse regression loop built on the outer optimizer.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design::Workspace;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::outer::{optimize_outer, OuterOptions};
use crate::problem::{
    validate_problem, BasisField, ConstraintSet, ConvergenceFlag, ModelStructure, ParameterEstimate, Problem,
    Trajectory,
};

pub const GAS_CONSTANT: f64 = 8.314;
pub const REFERENCE_TEMPERATURE: f64 = 373.0;
/// Upper bound placed on every activation energy.
pub const MAX_ENERGY: f64 = 5e5;

/// Temperature dependence attached to every library term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arrhenius {
    pub temperature: String,
    pub gas_constant: f64,
    pub reference_temperature: f64,
}

impl Default for Arrhenius {
    fn default() -> Self {
        Self {
            temperature: "T".into(),
            gas_constant: GAS_CONSTANT,
            reference_temperature: REFERENCE_TEMPERATURE,
        }
    }
}

/// Polynomial candidate terms per reaction rate.
#[derive(Debug, Clone, PartialEq)]
pub struct LibrarySpec {
    pub n_states: usize,
    /// 1 (linear terms only) or 2 (linear and pairwise products).
    pub degree: usize,
    /// `n_states × n_rates`.
    pub stoich: DMatrix<f64>,
    pub arrhenius: Option<Arrhenius>,
}

impl LibrarySpec {
    pub fn new(stoich: DMatrix<f64>, degree: usize, arrhenius: Option<Arrhenius>) -> Result<Self> {
        if !(1..=2).contains(&degree) {
            return Err(Error::InvalidOption(format!("library degree must be 1 or 2, got {degree}")));
        }
        if stoich.nrows() == 0 || stoich.ncols() == 0 {
            return Err(Error::DimensionMismatch("stoichiometric matrix is empty".into()));
        }
        Ok(Self {
            n_states: stoich.nrows(),
            degree,
            stoich,
            arrhenius,
        })
    }

    pub fn n_rates(&self) -> usize {
        self.stoich.ncols()
    }

    pub fn n_terms(&self) -> usize {
        let n = self.n_states;
        if self.degree == 1 {
            n
        } else {
            n + n * (n + 1) / 2
        }
    }

    pub fn n_candidates(&self) -> usize {
        self.n_terms() * self.n_rates()
    }

    /// Index of the product `x_i x_j` for `i <= j`.
    pub fn quadratic_index(&self, i: usize, j: usize) -> Result<usize> {
        let n = self.n_states;
        if self.degree < 2 {
            return Err(Error::InvalidIndex("library has no quadratic terms".into()));
        }
        if i > j || j >= n {
            return Err(Error::InvalidIndex(format!("({i}, {j}) needs i <= j < {n}")));
        }
        Ok(n + (2 * n + 1 - i) * i / 2 + (j - i))
    }

    /// States entering term `t`: one for linear terms, two for products.
    pub fn term_states(&self, t: usize) -> Result<Vec<usize>> {
        let n = self.n_states;
        if t >= self.n_terms() {
            return Err(Error::InvalidIndex(format!("term {t} out of range (0..{})", self.n_terms())));
        }
        if t < n {
            return Ok(vec![t]);
        }
        let mut rest = t - n;
        for i in 0..n {
            let row = n - i;
            if rest < row {
                return Ok(vec![i, i + rest]);
            }
            rest -= row;
        }
        unreachable!()
    }

    pub fn term_label(&self, t: usize) -> String {
        match self.term_states(t) {
            Ok(s) if s.len() == 1 => format!("x{}", s[0]),
            Ok(s) => format!("x{}*x{}", s[0], s[1]),
            Err(_) => format!("?{t}"),
        }
    }

    fn monomial(&self, t: usize) -> Result<Expr> {
        let s = self.term_states(t)?;
        Ok(if s.len() == 1 {
            Expr::x(s[0])
        } else {
            Expr::x(s[0]) * Expr::x(s[1])
        })
    }

    /// Flat mask index of `(rate, term)`.
    pub fn flat(&self, rate: usize, term: usize) -> usize {
        rate * self.n_terms() + term
    }
}

/// Index of the product `x_i x_j` in the eleven-species library.
pub fn term_index(i: usize, j: usize) -> Result<usize> {
    if i > j || j > 10 {
        return Err(Error::InvalidIndex(format!("({i}, {j}) needs 0 <= i <= j <= 10")));
    }
    Ok(11 + (23 - i) * i / 2 + (j - i))
}

/// A validated problem over a (possibly masked) library.
#[derive(Debug, Clone)]
pub struct DiscoveryProblem {
    pub problem: Problem,
    /// `(rate, term)` of every linear coefficient, in parameter order.
    pub columns: Vec<(usize, usize)>,
    pub warnings: Vec<String>,
}

/// Library model restricted to `mask` (all terms when `None`), before any
/// data is attached. With Arrhenius weights, the activation energy of
/// column `c` is `phi[c]`.
#[derive(Debug, Clone)]
pub struct LibraryModel {
    pub model: ModelStructure,
    pub constraints: ConstraintSet,
    /// `(rate, term)` of every linear coefficient, in parameter order.
    pub columns: Vec<(usize, usize)>,
}

pub fn library_model(library: &LibrarySpec, mask: Option<&[bool]>) -> Result<LibraryModel> {
    let total = library.n_candidates();
    if let Some(m) = mask {
        if m.len() != total {
            return Err(Error::DimensionMismatch(format!(
                "mask has {} entries but the library has {total}",
                m.len()
            )));
        }
    }
    let n_terms = library.n_terms();
    let mut columns = Vec::new();
    let mut basis = Vec::new();
    let mut energies = Vec::new();
    for rate in 0..library.n_rates() {
        let loading: Vec<f64> = library.stoich.column(rate).iter().cloned().collect();
        for term in 0..n_terms {
            if mask.is_some_and(|m| !m[library.flat(rate, term)]) {
                continue;
            }
            let mut factors = Vec::with_capacity(2);
            if let Some(a) = &library.arrhenius {
                factors.push(Expr::arrhenius(energies.len(), 0, a.gas_constant, a.reference_temperature));
                energies.push(format!("E_r{}_{}", rate + 1, term));
            }
            factors.push(library.monomial(term)?);
            basis.push(BasisField::new(format!("k_r{}_{}", rate + 1, term), factors, loading.clone()));
            columns.push((rate, term));
        }
    }
    if basis.is_empty() {
        return Err(Error::EmptyModel);
    }
    let n_phi = energies.len();
    let mut model = ModelStructure::new(library.n_states, basis, energies).with_stoich(library.stoich.clone());
    if let Some(a) = &library.arrhenius {
        model = model.with_exogenous(&[a.temperature.as_str()]);
    }
    let constraints = ConstraintSet::unconstrained(columns.len(), n_phi).with_phi_bounds(
        DVector::from_element(n_phi, 0.0),
        DVector::from_element(n_phi, MAX_ENERGY),
    )?;
    Ok(LibraryModel {
        model,
        constraints,
        columns,
    })
}

/// Attaches data to the library model restricted to `mask`.
pub fn build_discovery_problem(
    data: Vec<Trajectory>,
    library: &LibrarySpec,
    mask: Option<&[bool]>,
) -> Result<DiscoveryProblem> {
    let lm = library_model(library, mask)?;
    let mut warnings = Vec::new();
    if let Some(a) = &library.arrhenius {
        let all_reference = data.iter().all(|t| {
            t.exogenous
                .get(&a.temperature)
                .is_some_and(|&v| (v - a.reference_temperature).abs() <= 1e-12)
        });
        if all_reference {
            warnings.push(format!(
                "every trajectory is at the reference temperature {} K; activation energies are not identifiable",
                a.reference_temperature
            ));
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let problem = validate_problem(lm.model, lm.constraints, data)?;
    Ok(DiscoveryProblem {
        problem,
        columns: lm.columns,
        warnings,
    })
}

/// How the optimizer's stopping rule tightens from round to round.
/// The last stage repeats once the schedule is exhausted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// Gradient tolerance per round.
    ToleranceSchedule(Vec<f64>),
    /// Iteration cap per round; `None` runs to convergence.
    IterationSchedule(Vec<Option<usize>>),
}

impl Default for Criterion {
    fn default() -> Self {
        Criterion::ToleranceSchedule(vec![1e-3, 1e-5, 1e-7])
    }
}

impl Criterion {
    fn len(&self) -> usize {
        match self {
            Criterion::ToleranceSchedule(v) => v.len(),
            Criterion::IterationSchedule(v) => v.len(),
        }
    }

    fn apply(&self, stage: usize, base: &OuterOptions) -> OuterOptions {
        let mut o = base.clone();
        match self {
            Criterion::ToleranceSchedule(v) => o.gradient_tolerance = v[stage.min(v.len() - 1)],
            Criterion::IterationSchedule(v) => {
                if let Some(n) = v[stage.min(v.len() - 1)] {
                    o.max_iterations = n;
                }
            }
        }
        o
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscoveryConfig {
    pub epsilon: f64,
    pub ridge: f64,
    pub criterion: Criterion,
    pub seed: u64,
    pub max_rounds: usize,
    /// Range of the uniform draw for initial activation energies.
    pub energy_init: [f64; 2],
    pub outer: OuterOptions,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            ridge: 1e-6,
            criterion: Criterion::default(),
            seed: 0,
            max_rounds: 500,
            energy_init: [1e4, 1e5],
            outer: OuterOptions::default(),
        }
    }
}

impl DiscoveryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidOption(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if !(self.ridge >= 0.0) {
            return Err(Error::InvalidOption(format!("ridge must be >= 0, got {}", self.ridge)));
        }
        if self.criterion.len() == 0 {
            return Err(Error::InvalidOption("criterion schedule is empty".into()));
        }
        if let Criterion::ToleranceSchedule(v) = &self.criterion {
            if v.iter().any(|t| !(*t > 0.0)) {
                return Err(Error::InvalidOption("tolerances must be positive".into()));
            }
        }
        if !(self.energy_init[0] >= 0.0 && self.energy_init[0] <= self.energy_init[1]) {
            return Err(Error::InvalidOption("energy_init must be an increasing pair of non-negative values".into()));
        }
        self.outer.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscoveryStatus {
    Running,
    Converged,
    AllEliminated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryState {
    /// One flag per `(rate, term)`, rate-major.
    pub active_mask: Vec<bool>,
    pub epsilon: f64,
    pub ridge: f64,
    pub criterion: Criterion,
    pub round: usize,
    pub status: DiscoveryStatus,
}

impl DiscoveryState {
    pub fn n_active(&self) -> usize {
        self.active_mask.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub support: Vec<(usize, usize)>,
    pub k: Vec<f64>,
    pub energies: Vec<f64>,
    pub loss: f64,
    pub iterations: usize,
    pub convergence_flag: ConvergenceFlag,
    pub eliminated: usize,
}

#[derive(Debug, Clone)]
pub struct DiscoveryOutcome {
    /// Estimate on the surviving support; `None` when everything was eliminated.
    pub estimate: Option<ParameterEstimate>,
    pub columns: Vec<(usize, usize)>,
    pub state: DiscoveryState,
    pub rounds: Vec<RoundRecord>,
    pub warnings: Vec<String>,
}

impl DiscoveryOutcome {
    /// The final estimate, or an error when the threshold removed every term.
    pub fn estimate(&self) -> Result<&ParameterEstimate> {
        self.estimate.as_ref().ok_or(Error::AllEliminated {
            epsilon: self.state.epsilon,
        })
    }

    /// Final coefficient of `(rate, term)`, zero when the term was eliminated.
    pub fn coefficient(&self, rate: usize, term: usize) -> f64 {
        match (&self.estimate, self.columns.iter().position(|&c| c == (rate, term))) {
            (Some(est), Some(i)) => est.p[i],
            _ => 0.0,
        }
    }

    /// Final activation energy of `(rate, term)` when the library has one.
    pub fn energy(&self, rate: usize, term: usize) -> Option<f64> {
        let est = self.estimate.as_ref()?;
        let i = self.columns.iter().position(|&c| c == (rate, term))?;
        est.phi.get(i).copied()
    }
}

/// Alternates optimization and thresholding of `|k| <= epsilon` until no
/// coefficient is removed or none remain.
pub fn stlsq_discover(data: &[Trajectory], library: &LibrarySpec, config: &DiscoveryConfig) -> Result<DiscoveryOutcome> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = DiscoveryState {
        active_mask: vec![true; library.n_candidates()],
        epsilon: config.epsilon,
        ridge: config.ridge,
        criterion: config.criterion.clone(),
        round: 0,
        status: DiscoveryStatus::Running,
    };
    let mut base = config.outer.clone();
    base.ridge = config.ridge;
    let last_stage = config.criterion.len() - 1;
    let has_energy = library.arrhenius.is_some();

    // initial energies, indexed by flat (rate, term)
    let mut energy_guess: Vec<f64> = (0..library.n_candidates())
        .map(|_| {
            if has_energy {
                rng.gen_range(config.energy_init[0]..=config.energy_init[1])
            } else {
                0.0
            }
        })
        .collect();

    let mut rounds = Vec::new();
    let mut warnings = Vec::new();
    loop {
        if state.round >= config.max_rounds {
            return Err(Error::InvalidOption(format!(
                "discovery did not settle within {} rounds",
                config.max_rounds
            )));
        }
        let dp = build_discovery_problem(data.to_vec(), library, Some(&state.active_mask))?;
        if state.round == 0 {
            warnings = dp.warnings.clone();
        }
        let ws = Workspace::new(dp.problem.clone())?;
        let phi0 = DVector::from_iterator(
            if has_energy { dp.columns.len() } else { 0 },
            dp.columns
                .iter()
                .filter(|_| has_energy)
                .map(|&(r, t)| energy_guess[library.flat(r, t)]),
        );
        let stage = state.round.min(last_stage);
        let mut est = optimize_outer(&ws, &phi0, &config.criterion.apply(stage, &base))?;
        let mut survivors: Vec<bool> = est.p.iter().map(|v| v.abs() > config.epsilon).collect();
        let mut eliminated = survivors.iter().filter(|&&b| !b).count();
        if eliminated == 0 && stage < last_stage {
            // nothing left to prune: finish this support at the tightest stage
            est = optimize_outer(&ws, &est.phi, &config.criterion.apply(last_stage, &base))?;
            survivors = est.p.iter().map(|v| v.abs() > config.epsilon).collect();
            eliminated = survivors.iter().filter(|&&b| !b).count();
        }
        state.round += 1;
        log::info!(
            "discovery round {}: {} active, {} eliminated, loss {:.3e}",
            state.round,
            dp.columns.len(),
            eliminated,
            est.loss
        );
        rounds.push(RoundRecord {
            round: state.round,
            support: dp.columns.clone(),
            k: est.p.iter().cloned().collect(),
            energies: est.phi.iter().cloned().collect(),
            loss: est.loss,
            iterations: est.iterations,
            convergence_flag: est.convergence_flag,
            eliminated,
        });
        for (i, &(r, t)) in dp.columns.iter().enumerate() {
            let f = library.flat(r, t);
            if has_energy {
                energy_guess[f] = est.phi[i];
            }
            if !survivors[i] {
                state.active_mask[f] = false;
            }
        }
        if eliminated == dp.columns.len() {
            state.status = DiscoveryStatus::AllEliminated;
            return Ok(DiscoveryOutcome {
                estimate: None,
                columns: Vec::new(),
                state,
                rounds,
                warnings,
            });
        }
        if eliminated == 0 {
            state.status = DiscoveryStatus::Converged;
            return Ok(DiscoveryOutcome {
                estimate: Some(est),
                columns: dp.columns,
                state,
                rounds,
                warnings,
            });
        }
    }
}
