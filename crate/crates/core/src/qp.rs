//! Gradient projection by non-negative quadratic programming.
//!
//! Replay-constrained updates are computed by projecting the new-data
//! gradient `g` onto the set of directions with non-negative inner product
//! against one or more memory gradients. The multi-constraint case is solved
//! through its dual (a non-negative QP over the Gram matrix of the memory
//! gradients); the single-constraint case has a closed-form scalar dual and
//! supports a slack `xi` that relaxes the constraint to `<w, r> >= -xi`.

use crate::real::{dot, norm_sq, Real};

/// Flat gradient (or update direction) over all model parameters.
///
/// Entries are validated finite and non-empty on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct GradVec<F: Real> {
    values: Vec<F>,
}

impl<F: Real> GradVec<F> {
    pub fn new(values: Vec<F>) -> Result<Self, QpError> {
        if values.is_empty() {
            return Err(QpError::EmptyVector);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(QpError::NonFinite { index: i });
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[F] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<F> {
        self.values
    }

    pub fn dot(&self, other: &Self) -> F {
        debug_assert_eq!(self.len(), other.len());
        dot(&self.values, &other.values)
    }

    pub fn norm_sq(&self) -> F {
        norm_sq(&self.values)
    }

    pub fn norm(&self) -> F {
        self.norm_sq().sqrt()
    }
}

/// Solution of the dual problem `min 1/2 v'Av + b'v, v >= 0`.
#[derive(Debug, Clone)]
pub struct DualSolution<F: Real> {
    /// Non-negative dual coefficients, one per constraint.
    pub coefficients: Vec<F>,
    /// Dual objective at the solution.
    pub objective: F,
    /// Coordinate-descent sweeps used.
    pub iterations: usize,
    /// True iff the KKT residual fell below the configured tolerance.
    pub converged: bool,
}

/// Solver settings shared by all projections.
#[derive(Debug, Clone)]
pub struct QpConfig<F: Real> {
    /// KKT residual threshold.
    pub tolerance: F,
    /// Maximum coordinate-descent sweeps.
    pub max_iterations: usize,
    /// Slack `xi >= 0` of the relaxed single constraint.
    pub slack: F,
}

impl<F: Real> Default for QpConfig<F> {
    fn default() -> Self {
        // 1e-10 in the f64 lane; widened for scalars that cannot resolve it.
        let base = F::of(1e-10);
        let floor = F::epsilon() * F::of(8.0);
        Self {
            tolerance: if base > floor { base } else { floor },
            max_iterations: 10_000,
            slack: F::zero(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum QpError {
    /// Residual still above tolerance after the sweep budget.
    NonConvergence { iterations: usize, residual: f64 },
    DimensionMismatch { expected: usize, got: usize },
    /// A reference gradient has zero norm and cannot constrain anything.
    ZeroNormReference { index: usize },
    NonFinite { index: usize },
    EmptyVector,
}

impl std::fmt::Display for QpError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            QpError::NonConvergence {
                iterations,
                residual,
            } => write!(
                f,
                "dual solver did not converge after {iterations} sweeps (residual {residual:e})"
            ),
            QpError::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            QpError::ZeroNormReference { index } => {
                write!(f, "reference gradient {index} has zero norm")
            }
            QpError::NonFinite { index } => write!(f, "non-finite value at index {index}"),
            QpError::EmptyVector => write!(f, "empty vector"),
        }
    }
}

impl std::error::Error for QpError {}

/// Solves `min 1/2 v'Av + b'v  s.t. v >= 0` by projected cyclic coordinate
/// descent with exact one-dimensional minimization per coordinate.
///
/// `gram` is `A` in row-major order (`k*k` entries, symmetric PSD by the
/// caller's guarantee); `linear` is `b`. Convergence is declared when the
/// KKT residual `max_i max(-v_i, -(Av+b)_i, |v_i * (Av+b)_i|)` drops below
/// `cfg.tolerance`.
pub fn solve_nonneg_qp<F: Real>(
    gram: &[F],
    linear: &[F],
    cfg: &QpConfig<F>,
) -> Result<DualSolution<F>, QpError> {
    let k = linear.len();
    if k == 0 {
        return Err(QpError::DimensionMismatch {
            expected: 1,
            got: 0,
        });
    }
    if gram.len() != k * k {
        return Err(QpError::DimensionMismatch {
            expected: k * k,
            got: gram.len(),
        });
    }
    debug_assert!(
        (0..k).all(|i| (0..k).all(|j| (gram[i * k + j] - gram[j * k + i]).abs() <= F::of(1e-12))),
        "gram matrix must be symmetric"
    );

    let mut v = vec![F::zero(); k];
    let mut residual = kkt_residual(gram, linear, &v);
    if residual <= cfg.tolerance {
        return Ok(DualSolution {
            objective: dual_objective(gram, linear, &v),
            coefficients: v,
            iterations: 0,
            converged: true,
        });
    }

    for sweep in 1..=cfg.max_iterations {
        for i in 0..k {
            let a_ii = gram[i * k + i];
            if a_ii <= F::zero() {
                // PSD with zero diagonal forces a zero row; the coordinate
                // contributes nothing and stays at the bound.
                v[i] = F::zero();
                continue;
            }
            let mut off = F::zero();
            for j in 0..k {
                if j != i {
                    off += gram[i * k + j] * v[j];
                }
            }
            let candidate = (-linear[i] - off) / a_ii;
            v[i] = if candidate > F::zero() {
                candidate
            } else {
                F::zero()
            };
        }
        residual = kkt_residual(gram, linear, &v);
        if residual <= cfg.tolerance {
            return Ok(DualSolution {
                objective: dual_objective(gram, linear, &v),
                coefficients: v,
                iterations: sweep,
                converged: true,
            });
        }
    }

    Err(QpError::NonConvergence {
        iterations: cfg.max_iterations,
        residual: residual.as_f64(),
    })
}

/// KKT residual of `min 1/2 v'Av + b'v, v >= 0` at `v`: the worst violation
/// of primal feasibility, dual feasibility `(Av+b) >= 0`, and complementary
/// slackness `v_i (Av+b)_i = 0`.
pub fn kkt_residual<F: Real>(gram: &[F], linear: &[F], v: &[F]) -> F {
    let k = linear.len();
    let mut worst = F::zero();
    for i in 0..k {
        let mut w = linear[i];
        for j in 0..k {
            w += gram[i * k + j] * v[j];
        }
        let primal = -v[i];
        let dual = -w;
        let comp = (v[i] * w).abs();
        for cand in [primal, dual, comp] {
            if cand > worst {
                worst = cand;
            }
        }
    }
    worst
}

fn dual_objective<F: Real>(gram: &[F], linear: &[F], v: &[F]) -> F {
    let k = linear.len();
    let mut quad = F::zero();
    for i in 0..k {
        for j in 0..k {
            quad += v[i] * gram[i * k + j] * v[j];
        }
    }
    quad * F::of(0.5) + dot(linear, v)
}

/// Projects `g` to the closest direction with `<w, r_i> >= 0` for every
/// reference gradient, via the dual QP over the references' Gram matrix.
/// Recovery is `w = sum_i v_i r_i + g`.
///
/// When every constraint already holds the input is returned unchanged,
/// bit for bit.
pub fn project_multi<F: Real>(
    g: &GradVec<F>,
    refs: &[GradVec<F>],
    cfg: &QpConfig<F>,
) -> Result<GradVec<F>, QpError> {
    if refs.is_empty() {
        return Err(QpError::DimensionMismatch {
            expected: 1,
            got: 0,
        });
    }
    for (i, r) in refs.iter().enumerate() {
        if r.len() != g.len() {
            return Err(QpError::DimensionMismatch {
                expected: g.len(),
                got: r.len(),
            });
        }
        if r.norm_sq() == F::zero() {
            return Err(QpError::ZeroNormReference { index: i });
        }
    }

    let dots: Vec<F> = refs.iter().map(|r| r.dot(g)).collect();
    if dots.iter().all(|&d| d >= F::zero()) {
        // v = 0 is dual optimal; hand back g untouched.
        return Ok(g.clone());
    }

    let k = refs.len();
    let mut gram = vec![F::zero(); k * k];
    for i in 0..k {
        for j in i..k {
            let v = refs[i].dot(&refs[j]);
            gram[i * k + j] = v;
            gram[j * k + i] = v;
        }
    }
    let dual = solve_nonneg_qp(&gram, &dots, cfg)?;

    let mut out = g.as_slice().to_vec();
    for (coef, r) in dual.coefficients.iter().zip(refs) {
        if *coef != F::zero() {
            for (o, &ri) in out.iter_mut().zip(r.as_slice()) {
                *o += *coef * ri;
            }
        }
    }
    GradVec::new(out)
}

/// Scalar dual coefficient of the single relaxed constraint
/// `<w, r> >= -xi`: `v = max(0, -(<g, r> + xi) / <r, r>)`.
pub fn single_constraint_coefficient<F: Real>(
    g: &GradVec<F>,
    reference: &GradVec<F>,
    slack: F,
) -> Result<F, QpError> {
    if reference.len() != g.len() {
        return Err(QpError::DimensionMismatch {
            expected: g.len(),
            got: reference.len(),
        });
    }
    let denom = reference.norm_sq();
    if denom == F::zero() {
        return Err(QpError::ZeroNormReference { index: 0 });
    }
    let numer = -(g.dot(reference) + slack);
    Ok(if numer > F::zero() {
        numer / denom
    } else {
        F::zero()
    })
}

/// Single-constraint projection `w = v r + g` with the closed-form scalar
/// dual. With `v = 0` the input is returned unchanged, bit for bit; with
/// `v > 0` the result sits on the relaxed boundary `<w, r> = -xi`.
pub fn project_single<F: Real>(
    g: &GradVec<F>,
    reference: &GradVec<F>,
    cfg: &QpConfig<F>,
) -> Result<GradVec<F>, QpError> {
    let v = single_constraint_coefficient(g, reference, cfg.slack)?;
    if v == F::zero() {
        return Ok(g.clone());
    }
    let out: Vec<F> = g
        .as_slice()
        .iter()
        .zip(reference.as_slice())
        .map(|(&gi, &ri)| v * ri + gi)
        .collect();
    GradVec::new(out)
}
