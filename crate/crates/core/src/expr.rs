//! Expression trees for basis features.
//!
//! A basis feature is a product of [`Expr`] factors. Factors that reference
//! neither time nor state are constant over a trajectory and are pulled out
//! of the time integrals when the design is assembled.

use std::collections::BTreeSet;
use std::ops::{Add, Div, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::dual::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Const(f64),
    Time,
    State(usize),
    /// State `state` evaluated at `t - phi[delay]`.
    Delayed { state: usize, delay: usize },
    Param(usize),
    Exo(usize),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Exp(Box<Expr>),
}

/// Everything an expression may read at one quadrature node.
pub struct EvalPoint<'a, S> {
    pub time: f64,
    pub state: &'a [S],
    /// Delayed states, `n_states` per delay slot.
    pub delayed: &'a [S],
    /// Maps a phi index to its delay slot (`usize::MAX` if not a delay).
    pub delay_slot: &'a [usize],
    pub n_states: usize,
    pub phi: &'a [S],
    pub exo: &'a [f64],
}

impl Expr {
    pub fn c(value: f64) -> Expr {
        Expr::Const(value)
    }

    pub fn x(state: usize) -> Expr {
        Expr::State(state)
    }

    pub fn delayed(state: usize, delay: usize) -> Expr {
        Expr::Delayed { state, delay }
    }

    pub fn param(index: usize) -> Expr {
        Expr::Param(index)
    }

    pub fn exo(index: usize) -> Expr {
        Expr::Exo(index)
    }

    pub fn powe(self, exponent: Expr) -> Expr {
        Expr::Pow(Box::new(self), Box::new(exponent))
    }

    pub fn powi(self, exponent: i32) -> Expr {
        match exponent {
            0 => Expr::Const(1.0),
            1 => self,
            n => {
                let mut acc = self.clone();
                for _ in 1..n {
                    acc = acc * self.clone();
                }
                acc
            }
        }
    }

    pub fn exp(self) -> Expr {
        Expr::Exp(Box::new(self))
    }

    /// Saturating Michaelis-Menten factor `x / (x + K)`.
    pub fn saturating(state: usize, half: usize) -> Expr {
        Expr::x(state) / (Expr::x(state) + Expr::param(half))
    }

    /// Arrhenius weight `exp(-E/R (1/T - 1/T_ref))`.
    pub fn arrhenius(energy: usize, temperature: usize, gas_constant: f64, t_ref: f64) -> Expr {
        let dt = Expr::c(1.0) / Expr::exo(temperature) - Expr::c(1.0) / Expr::c(t_ref);
        (-(Expr::param(energy) / Expr::c(gas_constant)) * dt).exp()
    }

    pub fn eval<S: Scalar>(&self, pt: &EvalPoint<'_, S>) -> S {
        match self {
            Expr::Const(v) => S::constant(*v),
            Expr::Time => S::constant(pt.time),
            Expr::State(i) => pt.state[*i],
            Expr::Delayed { state, delay } => {
                pt.delayed[pt.delay_slot[*delay] * pt.n_states + *state]
            }
            Expr::Param(m) => pt.phi[*m],
            Expr::Exo(k) => S::constant(pt.exo[*k]),
            Expr::Add(a, b) => a.eval(pt) + b.eval(pt),
            Expr::Sub(a, b) => a.eval(pt) - b.eval(pt),
            Expr::Mul(a, b) => a.eval(pt) * b.eval(pt),
            Expr::Div(a, b) => a.eval(pt) / b.eval(pt),
            Expr::Pow(a, b) => a.eval(pt).pow(b.eval(pt)),
            Expr::Neg(a) => -a.eval(pt),
            Expr::Exp(a) => a.eval(pt).exp(),
        }
    }

    /// True when the expression reads neither time nor any state.
    pub fn is_time_invariant(&self) -> bool {
        match self {
            Expr::Time | Expr::State(_) | Expr::Delayed { .. } => false,
            Expr::Const(_) | Expr::Param(_) | Expr::Exo(_) => true,
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) | Expr::Pow(a, b) => {
                a.is_time_invariant() && b.is_time_invariant()
            }
            Expr::Neg(a) | Expr::Exp(a) => a.is_time_invariant(),
        }
    }

    /// Collects every phi index the expression depends on, delays included.
    pub fn collect_params(&self, out: &mut BTreeSet<usize>) {
        match self {
            Expr::Param(m) => {
                out.insert(*m);
            }
            Expr::Delayed { delay, .. } => {
                out.insert(*delay);
            }
            Expr::Const(_) | Expr::Time | Expr::State(_) | Expr::Exo(_) => {}
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) | Expr::Pow(a, b) => {
                a.collect_params(out);
                b.collect_params(out);
            }
            Expr::Neg(a) | Expr::Exp(a) => a.collect_params(out),
        }
    }

    pub fn collect_delays(&self, out: &mut BTreeSet<usize>) {
        match self {
            Expr::Delayed { delay, .. } => {
                out.insert(*delay);
            }
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) | Expr::Pow(a, b) => {
                a.collect_delays(out);
                b.collect_delays(out);
            }
            Expr::Neg(a) | Expr::Exp(a) => a.collect_delays(out),
            _ => {}
        }
    }

    /// Checks that every index is in range.
    pub fn check_indices(&self, n_states: usize, n_phi: usize, n_exo: usize) -> Result<(), String> {
        match self {
            Expr::State(i) if *i >= n_states => Err(format!("state index {i} >= {n_states}")),
            Expr::Delayed { state, .. } if *state >= n_states => {
                Err(format!("delayed state index {state} >= {n_states}"))
            }
            Expr::Delayed { delay, .. } if *delay >= n_phi => {
                Err(format!("delay index {delay} >= {n_phi}"))
            }
            Expr::Param(m) if *m >= n_phi => Err(format!("phi index {m} >= {n_phi}")),
            Expr::Exo(k) if *k >= n_exo => Err(format!("exogenous index {k} >= {n_exo}")),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) | Expr::Pow(a, b) => {
                a.check_indices(n_states, n_phi, n_exo)?;
                b.check_indices(n_states, n_phi, n_exo)
            }
            Expr::Neg(a) | Expr::Exp(a) => a.check_indices(n_states, n_phi, n_exo),
            _ => Ok(()),
        }
    }
}

macro_rules! binop {
    ($trait:ident, $method:ident, $variant:ident) => {
        impl $trait for Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                Expr::$variant(Box::new(self), Box::new(rhs))
            }
        }
    };
}

binop!(Add, add, Add);
binop!(Sub, sub, Sub);
binop!(Mul, mul, Mul);
binop!(Div, div, Div);

impl Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::Neg(Box::new(self))
    }
}
