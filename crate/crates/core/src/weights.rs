//! Annotation weights `λ` and penalty multipliers `φ_j = exp(Σ_l λ_l A_jl / d)`.
//!
//! Given coefficient magnitudes `b_j = Σ_k |β_{j+kp}|`, the weights maximize
//!
//! ```text
//! f(λ) = −n λ₀ Σ_j φ_j(λ) b_j − ‖λ‖² / (2τ²)
//! ```
//!
//! which is strictly concave. The `Σ_j log φ_j` term of the full posterior is
//! identically zero because every annotation column sums to zero.

use nalgebra::{DMatrix, DVector};

/// Exponents of `φ` are clamped to this magnitude.
pub const EXPONENT_CLAMP: f64 = 30.0;
const GRAD_TOL: f64 = 1e-8;
const MAX_NEWTON: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct PenaltyState {
    pub lambda_anno: DVector<f64>,
    pub phi: DVector<f64>,
    pub d: f64,
    pub tau2: f64,
    pub lambda0: f64,
}

impl PenaltyState {
    /// `λ = 0`, `φ = 1`.
    pub fn neutral(p: usize, n_annotations: usize, d: f64, tau2: f64, lambda0: f64) -> Self {
        Self {
            lambda_anno: DVector::zeros(n_annotations),
            phi: DVector::from_element(p, 1.0),
            d,
            tau2,
            lambda0,
        }
    }

    pub fn with_lambda0(mut self, lambda0: f64) -> Self {
        self.lambda0 = lambda0;
        self
    }
}

/// Default scaling `d = √L` (1 when there are no annotations).
pub fn default_d(n_annotations: usize) -> f64 {
    (n_annotations.max(1) as f64).sqrt()
}

fn exponents(lambda: &DVector<f64>, a: &DMatrix<f64>, d: f64) -> DVector<f64> {
    if a.ncols() == 0 {
        return DVector::zeros(a.nrows());
    }
    (a * lambda / d).map(|e| e.clamp(-EXPONENT_CLAMP, EXPONENT_CLAMP))
}

pub fn compute_phi(lambda: &DVector<f64>, a: &DMatrix<f64>, d: f64) -> DVector<f64> {
    exponents(lambda, a, d).map(f64::exp)
}

/// Reduced log-posterior in `λ`.
#[allow(clippy::too_many_arguments)]
pub fn objective(
    lambda: &DVector<f64>,
    beta_abs_sums: &DVector<f64>,
    a: &DMatrix<f64>,
    n: usize,
    lambda0: f64,
    d: f64,
    tau2: f64,
) -> f64 {
    let phi = compute_phi(lambda, a, d);
    -(n as f64) * lambda0 * phi.dot(beta_abs_sums) - lambda.norm_squared() / (2.0 * tau2)
}

/// Analytic gradient and Hessian of [`objective`]. Clamped rows contribute
/// nothing, matching the flat clamped exponent.
pub fn gradient_hessian(
    lambda: &DVector<f64>,
    beta_abs_sums: &DVector<f64>,
    a: &DMatrix<f64>,
    n: usize,
    lambda0: f64,
    d: f64,
    tau2: f64,
) -> (DVector<f64>, DMatrix<f64>) {
    let l = a.ncols();
    let raw = a * lambda / d;
    let scale = n as f64 * lambda0;
    // w_j = n λ₀ φ_j b_j for unclamped rows.
    let w = DVector::from_fn(a.nrows(), |j, _| {
        if raw[j].abs() > EXPONENT_CLAMP {
            0.0
        } else {
            scale * raw[j].exp() * beta_abs_sums[j]
        }
    });
    let grad = -(a.tr_mul(&w) / d) - lambda / tau2;
    let mut hess = DMatrix::zeros(l, l);
    for j in 0..a.nrows() {
        if w[j] == 0.0 {
            continue;
        }
        let row = a.row(j);
        for r in 0..l {
            for c in 0..l {
                hess[(r, c)] -= w[j] * row[r] * row[c] / (d * d);
            }
        }
    }
    for r in 0..l {
        hess[(r, r)] -= 1.0 / tau2;
    }
    (grad, hess)
}

/// Newton ascent with backtracking. Returns the updated state with `φ`
/// recomputed from the new `λ`; the objective never decreases.
pub fn maximize_lambda(
    state: &PenaltyState,
    beta_abs_sums: &DVector<f64>,
    a: &DMatrix<f64>,
    n: usize,
) -> PenaltyState {
    let mut out = state.clone();
    if a.ncols() == 0 {
        out.phi = DVector::from_element(a.nrows(), 1.0);
        return out;
    }
    let f = |lam: &DVector<f64>| objective(lam, beta_abs_sums, a, n, state.lambda0, state.d, state.tau2);
    let mut lambda = state.lambda_anno.clone();
    let mut value = f(&lambda);
    for _ in 0..MAX_NEWTON {
        let (grad, hess) = gradient_hessian(&lambda, beta_abs_sums, a, n, state.lambda0, state.d, state.tau2);
        if grad.amax() < GRAD_TOL {
            break;
        }
        let neg_h = -&hess;
        let step = match neg_h.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => &grad / (1.0 + hess.norm()),
        };
        let slope = grad.dot(&step);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &lambda + &step * t;
            let v = f(&cand);
            if v >= value + 1e-4 * t * slope {
                lambda = cand;
                value = v;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    out.phi = compute_phi(&lambda, a, state.d);
    out.lambda_anno = lambda;
    out
}
