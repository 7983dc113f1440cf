use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Experiment, ProblemSpec};
use crate::discovery::{library_model, Arrhenius, LibrarySpec};
use crate::error::Result;
use crate::expr::Expr;
use crate::problem::{BasisField, ConstraintSet, ModelStructure};

fn names(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

fn loading(n: usize, entries: &[(usize, f64)]) -> Vec<f64> {
    let mut v = vec![0.0; n];
    for &(s, c) in entries {
        v[s] = c;
    }
    v
}

fn x(i: usize) -> Expr {
    Expr::x(i)
}

fn q(i: usize) -> Expr {
    Expr::param(i)
}

fn one() -> Expr {
    Expr::c(1.0)
}

/// Calcium oscillator: eleven rate constants, six saturation constants.
pub fn calcium() -> Result<ProblemSpec> {
    let n = 4;
    let k = names("k", 11);
    let b = |j: usize, f: Vec<Expr>, l: &[(usize, f64)]| BasisField::new(k[j].clone(), f, loading(n, l));
    let basis = vec![
        b(0, vec![], &[(0, 1.0)]),
        b(1, vec![x(0)], &[(0, 1.0)]),
        b(2, vec![x(1), Expr::saturating(0, 0)], &[(0, -1.0)]),
        b(3, vec![x(2), Expr::saturating(0, 1)], &[(0, -1.0)]),
        b(4, vec![x(0)], &[(1, 1.0)]),
        b(5, vec![Expr::saturating(1, 2)], &[(1, -1.0)]),
        b(6, vec![x(1), x(2), Expr::saturating(3, 3)], &[(2, 1.0), (3, -1.0)]),
        b(7, vec![x(1)], &[(2, 1.0)]),
        b(8, vec![x(0)], &[(2, 1.0)]),
        b(9, vec![Expr::saturating(2, 4)], &[(2, -1.0)]),
        b(10, vec![Expr::saturating(2, 5)], &[(2, -1.0), (3, 1.0)]),
    ];
    let model = ModelStructure::new(n, basis, names("Km", 6));
    let constraints = ConstraintSet::unconstrained(11, 6)
        .with_phi_bounds(DVector::from_element(6, 1e-8), DVector::from_element(6, f64::INFINITY))?;
    Ok(ProblemSpec {
        name: "calcium".into(),
        model,
        constraints,
        true_p: DVector::from_vec(vec![0.09, 2.0, 1.27, 3.73, 1.27, 32.24, 2.0, 0.05, 13.58, 153.0, 4.85]),
        true_phi: DVector::from_vec(vec![0.19, 0.73, 29.09, 2.67, 0.16, 0.05]),
        experiments: vec![Experiment {
            initial: vec![0.12, 0.31, 0.0058, 4.3],
            exogenous: vec![],
        }],
        t_end: 60.0,
        dt: 0.1,
        library: None,
        support: vec![],
    })
}

/// Three-gene metabolic pathway driven by substrate `S` and product `P`.
pub fn mendes() -> Result<ProblemSpec> {
    let n = 8;
    let (s, p) = (Expr::exo(0), Expr::exo(1));
    let k = names("k", 15);
    let b = |j: usize, f: Vec<Expr>, l: &[(usize, f64)]| BasisField::new(k[j].clone(), f, loading(n, l));
    // 1 / (1 + (P/qa)^qb + (qc/act)^qd)
    let gene = |a: usize, act: Expr| {
        one() / (one() + (p.clone() / q(a)).powe(q(a + 1)) + (q(a + 2) / act).powe(q(a + 3)))
    };
    // (1/qa)(u - v) / (1 + u/qa + v/qb)
    let transport = |a: usize, u: Expr, v: Expr| {
        (one() / q(a)) * (u.clone() - v.clone()) / (one() + u / q(a) + v / q(a + 1))
    };
    let basis = vec![
        b(0, vec![gene(0, s.clone())], &[(0, 1.0)]),
        b(1, vec![x(0)], &[(0, -1.0)]),
        b(2, vec![gene(4, x(6))], &[(1, 1.0)]),
        b(3, vec![x(1)], &[(1, -1.0)]),
        b(4, vec![gene(8, x(7))], &[(2, 1.0)]),
        b(5, vec![x(2)], &[(2, -1.0)]),
        b(6, vec![Expr::saturating(0, 12)], &[(3, 1.0)]),
        b(7, vec![x(3)], &[(3, -1.0)]),
        b(8, vec![Expr::saturating(1, 13)], &[(4, 1.0)]),
        b(9, vec![x(4)], &[(4, -1.0)]),
        b(10, vec![Expr::saturating(2, 14)], &[(5, 1.0)]),
        b(11, vec![x(5)], &[(5, -1.0)]),
        b(12, vec![x(3), transport(15, s.clone(), x(6))], &[(6, 1.0)]),
        b(13, vec![x(4), transport(17, x(6), x(7))], &[(6, -1.0), (7, 1.0)]),
        b(14, vec![x(5), transport(19, x(7), p.clone())], &[(7, -1.0)]),
    ];
    let model = ModelStructure::new(n, basis, names("q", 21)).with_exogenous(&["S", "P"]);
    let constraints = ConstraintSet::unconstrained(15, 21)
        .with_nonnegative_p()?
        .with_phi_bounds(DVector::from_element(21, 1e-6), DVector::from_element(21, 1e3))?;
    let mut true_p = vec![1.0; 15];
    true_p[6..12].iter_mut().for_each(|v| *v = 0.1);
    let true_phi: Vec<f64> = (0..21).map(|i| if i < 12 && i % 2 == 1 { 2.0 } else { 1.0 }).collect();
    let initial = vec![0.66667, 0.57254, 0.41758, 0.4, 0.36409, 0.29457, 1.419, 0.93464];
    let mut experiments = Vec::new();
    for sv in [0.1, 0.46416, 2.15, 10.0] {
        for pv in [0.05, 0.13572, 0.3684, 1.0] {
            experiments.push(Experiment {
                initial: initial.clone(),
                exogenous: vec![("S".into(), sv), ("P".into(), pv)],
            });
        }
    }
    Ok(ProblemSpec {
        name: "mendes".into(),
        model,
        constraints,
        true_p: DVector::from_vec(true_p),
        true_phi: DVector::from_vec(true_phi),
        experiments,
        t_end: 60.0,
        dt: 0.1,
        library: None,
        support: vec![],
    })
}

/// Epidemic model with an incubation delay and a recovery delay.
pub fn km_dde() -> Result<ProblemSpec> {
    let n = 3;
    let k = names("k", 6);
    let b = |j: usize, f: Vec<Expr>, l: &[(usize, f64)]| BasisField::new(k[j].clone(), f, loading(n, l));
    let basis = vec![
        b(0, vec![x(0), Expr::delayed(1, 0)], &[(0, -1.0)]),
        b(1, vec![Expr::delayed(1, 1)], &[(0, 1.0)]),
        b(2, vec![x(0), Expr::delayed(1, 0)], &[(1, 1.0)]),
        b(3, vec![x(1)], &[(1, -1.0)]),
        b(4, vec![x(1)], &[(2, 1.0)]),
        b(5, vec![Expr::delayed(1, 1)], &[(2, -1.0)]),
    ];
    let model = ModelStructure::new(n, basis, vec!["tau1".into(), "tau2".into()]).with_delays(vec![0, 1]);
    Ok(ProblemSpec {
        name: "km_dde".into(),
        model,
        constraints: ConstraintSet::unconstrained(6, 2),
        true_p: DVector::from_vec(vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]),
        true_phi: DVector::from_vec(vec![1.0, 10.0]),
        experiments: vec![Experiment {
            initial: vec![5.0, 0.1, 1.0],
            exogenous: vec![],
        }],
        t_end: 60.0,
        dt: 0.1,
        library: None,
        support: vec![],
    })
}

/// Stoichiometry of the six esterification reactions over eleven species.
pub fn carboxylic_stoich() -> DMatrix<f64> {
    DMatrix::from_row_slice(
        11,
        6,
        &[
            0., 0., -1., 0., -1., 0., //
            0., -1., 0., -1., 0., 0., //
            0., 0., 1., 0., 0., 0., //
            -1., 1., 0., -1., 1., 1., //
            1., -1., 1., 1., -1., 0., //
            -1., 0., 0., 0., 0., 0., //
            0., 1., -1., 0., 0., 0., //
            0., 0., 0., 1., 0., 0., //
            0., 0., 0., 0., 1., -1., //
            0., 0., 0., 0., 0., 1., //
            1., 0., 0., 0., 0., -1., //
        ],
    )
}

/// `(rate, library term, k at 373 K, activation energy)` of every true
/// term; reverse reactions carry a negative coefficient.
pub const CARBOXYLIC_TABLE: [(usize, usize, f64, f64); 12] = [
    (0, 43, 0.3, 9.48e4),
    (0, 55, -1.2, 8.58e4),
    (1, 25, 0.4, 6.59e4),
    (1, 44, -0.6, 2.77e4),
    (2, 17, 1.1, 10.9e4),
    (2, 34, -0.7, 4.05e4),
    (3, 24, 0.9, 4.88e4),
    (3, 52, -0.1, 5.59e4),
    (4, 15, 1.0, 7.74e4),
    (4, 46, -0.5, 1.14e4),
    (5, 47, -0.8, 3.46e4),
    (5, 73, 0.2, 10.9e4),
];

pub fn carboxylic(seed: u64) -> Result<ProblemSpec> {
    carboxylic_with(30, seed)
}

/// Esterification network with `n_experiments` random initial conditions
/// drawn from `U(4, 10)` and temperatures cycled over five values.
pub fn carboxylic_with(n_experiments: usize, seed: u64) -> Result<ProblemSpec> {
    let library = LibrarySpec::new(carboxylic_stoich(), 2, Some(Arrhenius::default()))?;
    let mut mask = vec![false; library.n_candidates()];
    for &(r, t, _, _) in &CARBOXYLIC_TABLE {
        mask[library.flat(r, t)] = true;
    }
    let lm = library_model(&library, Some(&mask))?;
    let lookup = |c: &(usize, usize)| {
        CARBOXYLIC_TABLE
            .iter()
            .find(|e| (e.0, e.1) == *c)
            .expect("true support column")
    };
    let true_p = DVector::from_iterator(lm.columns.len(), lm.columns.iter().map(|c| lookup(c).2));
    let true_phi = DVector::from_iterator(lm.columns.len(), lm.columns.iter().map(|c| lookup(c).3));
    let temperatures = [370.0, 375.0, 380.0, 385.0, 373.0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let experiments = (0..n_experiments)
        .map(|e| Experiment {
            initial: (0..11).map(|_| rng.gen_range(4.0..10.0)).collect(),
            exogenous: vec![("T".into(), temperatures[e % temperatures.len()])],
        })
        .collect();
    Ok(ProblemSpec {
        name: "carboxylic".into(),
        model: lm.model,
        constraints: lm.constraints,
        true_p,
        true_phi,
        experiments,
        t_end: 10.0,
        dt: 0.05,
        library: Some(library),
        support: lm.columns,
    })
}

/// Sparse two-species chain `x0 -> x1 -> ∅` written over a degree-two
/// library with one rate per species.
pub fn two_state() -> Result<ProblemSpec> {
    let library = LibrarySpec::new(DMatrix::identity(2, 2), 2, None)?;
    let truth = [(0, 0, -0.5), (1, 0, 0.5), (1, 1, -0.3)];
    let mut mask = vec![false; library.n_candidates()];
    for &(r, t, _) in &truth {
        mask[library.flat(r, t)] = true;
    }
    let lm = library_model(&library, Some(&mask))?;
    let true_p = DVector::from_iterator(
        lm.columns.len(),
        lm.columns
            .iter()
            .map(|c| truth.iter().find(|e| (e.0, e.1) == *c).unwrap().2),
    );
    let experiments = [[1.0, 0.5], [2.0, 1.0], [0.5, 2.0]]
        .iter()
        .map(|ic| Experiment {
            initial: ic.to_vec(),
            exogenous: vec![],
        })
        .collect();
    Ok(ProblemSpec {
        name: "two_state".into(),
        model: lm.model,
        constraints: lm.constraints,
        true_p,
        true_phi: DVector::zeros(0),
        experiments,
        t_end: 10.0,
        dt: 0.05,
        library: Some(library),
        support: lm.columns,
    })
}
