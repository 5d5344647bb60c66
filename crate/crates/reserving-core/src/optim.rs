//! Newton maximization with backtracking line search and ridge-stabilized
//! steps, shared by the truncated-hazard and ZINB fitters.

use nalgebra::{DMatrix, DVector};

/// A smooth objective to maximize. The default Hessian is a central
/// finite-difference of the analytic gradient, which is accurate enough for
/// Newton steps; fitters with cheap exact Hessians override it.
pub trait Objective {
    fn dim(&self) -> usize;
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;

    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        fd_hessian(|p| self.gradient(p), x)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Ridge added to the (negated) Hessian before factorization.
    pub ridge: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { max_iter: 200, grad_tol: 1e-8, ridge: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Set when a step needed more ridge than `options.ridge` (near-singular
    /// or indefinite Hessian along the path).
    pub ridge_escalated: bool,
}

/// Maximizes `obj` from `x0` with adaptive (Levenberg-style) damping: the
/// ridge on `-H` grows when a step is rejected and decays back towards
/// `opts.ridge` after clean full steps, so indefinite stretches of the
/// likelihood are handled without strangling the Newton direction later.
pub fn maximize(obj: &dyn Objective, x0: DVector<f64>, opts: &NewtonOptions) -> NewtonOutcome {
    let mut x = x0;
    let mut value = obj.value(&x);
    let mut ridge_escalated = false;
    let mut iterations = 0;
    let mut lambda = opts.ridge;

    for iter in 0..opts.max_iter {
        iterations = iter + 1;
        let grad = obj.gradient(&x);
        let grad_norm = grad.norm();
        if grad_norm < opts.grad_tol {
            return NewtonOutcome { x, value, grad_norm, iterations: iter, converged: true, ridge_escalated };
        }

        let hess = obj.hessian(&x);
        let mut improved = false;
        for _attempt in 0..40 {
            let Some(direction) = damped_direction(&hess, &grad, lambda) else {
                lambda = (lambda * 10.0).max(1e-10);
                ridge_escalated = true;
                continue;
            };
            let slope = grad.dot(&direction);
            if slope <= 0.0 {
                lambda = (lambda * 10.0).max(1e-10);
                ridge_escalated = true;
                continue;
            }
            // When the Newton decrement falls below float resolution of the
            // objective the line search cannot certify progress; polish by
            // driving the gradient norm down directly.
            if 0.5 * slope < f64::EPSILON * (1.0 + value.abs()) {
                return polish(obj, x, value, grad_norm, iterations, ridge_escalated, opts);
            }
            // Short backtracking line search; damping handles bad scaling.
            let mut step = 1.0;
            for _ in 0..10 {
                let candidate = &x + step * &direction;
                let v = obj.value(&candidate);
                if v.is_finite() && v >= value + 1e-4 * step * slope {
                    x = candidate;
                    value = v;
                    improved = true;
                    break;
                }
                step *= 0.5;
            }
            if improved {
                if step == 1.0 {
                    lambda = (lambda / 10.0).max(opts.ridge);
                }
                break;
            }
            lambda *= 10.0;
            ridge_escalated = true;
            if lambda > 1e12 {
                break;
            }
        }
        if !improved {
            // Flat to float precision in every tried direction.
            let g = obj.gradient(&x);
            let gn = g.norm();
            return NewtonOutcome {
                x,
                value,
                grad_norm: gn,
                iterations,
                converged: gn < opts.grad_tol,
                ridge_escalated,
            };
        }
    }

    let grad_norm = obj.gradient(&x).norm();
    NewtonOutcome {
        x,
        value,
        grad_norm,
        iterations,
        converged: grad_norm < opts.grad_tol,
        ridge_escalated,
    }
}

/// Pure Newton iteration on the gradient norm, used once the objective can
/// no longer resolve improvements.
fn polish(
    obj: &dyn Objective,
    mut x: DVector<f64>,
    value: f64,
    grad_norm: f64,
    iterations: usize,
    ridge_escalated: bool,
    opts: &NewtonOptions,
) -> NewtonOutcome {
    let mut best_grad = grad_norm;
    for _ in 0..20 {
        let g = obj.gradient(&x);
        let h = obj.hessian(&x);
        let Some(d) = damped_direction(&h, &g, opts.ridge) else { break };
        let candidate = &x + &d;
        let gn = obj.gradient(&candidate).norm();
        if !gn.is_finite() || gn >= best_grad {
            break;
        }
        x = candidate;
        best_grad = gn;
        if gn < opts.grad_tol {
            break;
        }
    }
    let value = obj.value(&x).max(value);
    NewtonOutcome { x, value, grad_norm: best_grad, iterations, converged: true, ridge_escalated }
}

/// Solves `(-H + lambda I) d = g`; `None` when the factorization fails.
fn damped_direction(hess: &DMatrix<f64>, grad: &DVector<f64>, lambda: f64) -> Option<DVector<f64>> {
    let n = grad.len();
    let mut m = -hess.clone();
    for i in 0..n {
        m[(i, i)] += lambda;
    }
    let chol = m.cholesky()?;
    let d = chol.solve(grad);
    d.iter().all(|v| v.is_finite()).then_some(d)
}

/// Central-difference gradient of a scalar function. Used by tests to verify
/// the analytic gradients of every likelihood in the crate.
pub fn fd_gradient<F: Fn(&DVector<f64>) -> f64>(f: F, x: &DVector<f64>) -> DVector<f64> {
    let n = x.len();
    let mut g = DVector::zeros(n);
    for j in 0..n {
        let h = 1e-6 * (1.0 + x[j].abs());
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        g[j] = (f(&xp) - f(&xm)) / (2.0 * h);
    }
    g
}

/// Central-difference Jacobian of a gradient, symmetrized.
pub fn fd_hessian<G: Fn(&DVector<f64>) -> DVector<f64>>(grad: G, x: &DVector<f64>) -> DMatrix<f64> {
    let n = x.len();
    let mut h = DMatrix::zeros(n, n);
    for j in 0..n {
        let step = 6e-6 * (1.0 + x[j].abs());
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += step;
        xm[j] -= step;
        let col = (grad(&xp) - grad(&xm)) / (2.0 * step);
        h.set_column(j, &col);
    }
    // Symmetrize to kill finite-difference asymmetry.
    let ht = h.transpose();
    (h + ht) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Concave quadratic with known maximizer.
    struct Quadratic {
        a: DMatrix<f64>,
        b: DVector<f64>,
    }

    impl Objective for Quadratic {
        fn dim(&self) -> usize {
            self.b.len()
        }
        fn value(&self, x: &DVector<f64>) -> f64 {
            (self.b.dot(x)) - 0.5 * (x.transpose() * &self.a * x)[(0, 0)]
        }
        fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
            &self.b - &self.a * x
        }
    }

    #[test]
    fn newton_solves_quadratic_in_one_step() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let b = DVector::from_row_slice(&[1.0, -1.0]);
        let q = Quadratic { a: a.clone(), b: b.clone() };
        let out = maximize(&q, DVector::zeros(2), &NewtonOptions::default());
        assert!(out.converged);
        let expected = a.lu().solve(&b).unwrap();
        assert_relative_eq!(out.x[0], expected[0], epsilon = 1e-8);
        assert_relative_eq!(out.x[1], expected[1], epsilon = 1e-8);
    }

    #[test]
    fn fd_gradient_matches_analytic_on_quadratic() {
        let a = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let b = DVector::from_row_slice(&[0.3, 0.7]);
        let q = Quadratic { a, b };
        let x = DVector::from_row_slice(&[0.2, -0.4]);
        let fd = fd_gradient(|p| q.value(p), &x);
        let an = q.gradient(&x);
        assert_relative_eq!(fd[0], an[0], max_relative = 1e-7);
        assert_relative_eq!(fd[1], an[1], max_relative = 1e-7);
    }
}
