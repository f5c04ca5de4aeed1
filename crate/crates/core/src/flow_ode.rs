//! Fixed-grid integration of a conditional probability-flow ODE
//! `dx/dλ = u(x, λ | conditions)` from λ = 0 to λ = 1.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::scalar::Real;

/// Sampling steps used by default.
pub const DEFAULT_STEPS: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("steps must be >= 1")]
    NoSteps,
    #[error("vector field returned a non-finite value at step {step} (λ = {lambda})")]
    NonFinite { step: usize, lambda: f64 },
    #[error("vector field returned {got} values for a state of {expected}")]
    Shape { expected: usize, got: usize },
}

/// Current state of a trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowState<T> {
    pub x: Vec<T>,
    pub lambda: T,
}

/// Conditional velocity field. `C` is passed through untouched.
pub trait VectorField<T, C: ?Sized> {
    fn velocity(&self, x: &[T], lambda: T, conditions: &C) -> Vec<T>;
}

impl<T, C: ?Sized, F> VectorField<T, C> for F
where
    F: Fn(&[T], T, &C) -> Vec<T>,
{
    fn velocity(&self, x: &[T], lambda: T, conditions: &C) -> Vec<T> {
        self(x, lambda, conditions)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Euler,
    /// Explicit trapezoid (predictor-corrector), second order.
    Heun,
}

fn eval<T: Real, C: ?Sized, F: VectorField<T, C> + ?Sized>(
    field: &F,
    x: &[T],
    lambda: T,
    cond: &C,
    step: usize,
) -> Result<Vec<T>, OdeError> {
    let u = field.velocity(x, lambda, cond);
    if u.len() != x.len() {
        return Err(OdeError::Shape {
            expected: x.len(),
            got: u.len(),
        });
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(OdeError::NonFinite {
            step,
            lambda: lambda.to_f64_lossy(),
        });
    }
    Ok(u)
}

/// Integrates from `x0` at λ = 0 to λ = 1 in `steps` uniform steps.
pub fn integrate<T: Real, C: ?Sized, F: VectorField<T, C> + ?Sized>(
    field: &F,
    x0: &[T],
    conditions: &C,
    steps: usize,
    method: Method,
) -> Result<Vec<T>, OdeError> {
    if steps == 0 {
        return Err(OdeError::NoSteps);
    }
    let n = T::from_usize_lossy(steps);
    let h = T::one() / n;
    let half = T::lit(0.5);
    let mut state = FlowState {
        x: x0.to_vec(),
        lambda: T::zero(),
    };
    for step in 0..steps {
        let lam = T::from_usize_lossy(step) / n;
        let next = T::from_usize_lossy(step + 1) / n;
        let k1 = eval(field, &state.x, lam, conditions, step)?;
        match method {
            Method::Euler => {
                for (x, u) in state.x.iter_mut().zip(&k1) {
                    *x += h * *u;
                }
            }
            Method::Heun => {
                let pred: Vec<T> = state.x.iter().zip(&k1).map(|(x, u)| *x + h * *u).collect();
                let k2 = eval(field, &pred, next, conditions, step)?;
                for ((x, a), b) in state.x.iter_mut().zip(&k1).zip(&k2) {
                    *x += h * half * (*a + *b);
                }
            }
        }
        state.lambda = next;
    }
    Ok(state.x)
}

/// Integrates each sample independently.
pub fn integrate_batch<T: Real, C: ?Sized, F: VectorField<T, C> + ?Sized>(
    field: &F,
    batch: &[Vec<T>],
    conditions: &C,
    steps: usize,
    method: Method,
) -> Result<Vec<Vec<T>>, OdeError> {
    batch
        .iter()
        .map(|x0| integrate(field, x0, conditions, steps, method))
        .collect()
}

/// Seeded `N(0, I)` initial state.
pub fn gaussian_init<T: Real>(len: usize, seed: u64) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            T::lit(z)
        })
        .collect()
}
