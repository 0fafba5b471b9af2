//! Randomized self-checks of the projection solver against independent
//! oracles.
//!
//! Two oracles certify solutions without touching the coordinate-descent
//! path: an exact active-set enumeration (solves each candidate KKT
//! equality system by Gaussian elimination) and a dense-grid search over
//! the primal box. The check harness runs seeded random instances through
//! an injectable solver so a broken implementation can be exercised.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::qp::{kkt_residual, solve_nonneg_qp, DualSolution, GradVec, QpConfig, QpError};
use crate::real::{dot, norm, norm_sq};

/// Solver signature accepted by the harness; production passes
/// [`solve_nonneg_qp`], tests may inject a faulty stand-in.
pub type DualSolver = dyn Fn(&[f64], &[f64], &QpConfig<f64>) -> Result<DualSolution<f64>, QpError>;

/// One random projection instance.
#[derive(Debug, Clone)]
pub struct QpInstance {
    pub gradient: Vec<f64>,
    pub references: Vec<Vec<f64>>,
}

/// Outcome of a check run.
#[derive(Debug, Clone)]
pub struct QpCheckReport {
    pub trials: usize,
    /// Worst KKT residual over all converged dual solutions.
    pub max_kkt_residual: f64,
    /// Worst |objective - oracle objective| over the small-instance suite.
    pub max_optimality_gap: f64,
    /// Most negative constraint inner product over the feasibility suite.
    pub worst_constraint_residual: f64,
    /// Human-readable dumps of every violating instance.
    pub violations: Vec<String>,
}

impl QpCheckReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

pub const KKT_RESIDUAL_LIMIT: f64 = 1e-8;
pub const OPTIMALITY_GAP_LIMIT: f64 = 1e-4;
pub const CONSTRAINT_RESIDUAL_LIMIT: f64 = -1e-8;

/// Exact oracle: enumerate every active set, solve the equality-constrained
/// KKT system, keep the feasible stationary points, return the best.
///
/// Returns `(omega, objective)` with objective `||omega - g||^2`.
pub fn enumeration_oracle(g: &[f64], refs: &[Vec<f64>]) -> Option<(Vec<f64>, f64)> {
    let k = refs.len();
    let mut best: Option<(Vec<f64>, f64)> = None;
    let feas_tol = 1e-9;

    for mask in 0..(1u32 << k) {
        let active: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        let omega = if active.is_empty() {
            g.to_vec()
        } else {
            // Solve (R_S R_S') v = -R_S g, then omega = g + R_S' v.
            let m = active.len();
            let mut mat = vec![0.0; m * m];
            let mut rhs = vec![0.0; m];
            for (a, &i) in active.iter().enumerate() {
                for (b, &j) in active.iter().enumerate() {
                    mat[a * m + b] = dot(&refs[i], &refs[j]);
                }
                rhs[a] = -dot(&refs[i], g);
            }
            let v = match solve_dense(&mut mat, &mut rhs) {
                Some(v) => v,
                None => continue,
            };
            // Dual feasibility: multipliers of active constraints must be
            // non-negative.
            if v.iter().any(|&vi| vi < -feas_tol) {
                continue;
            }
            let mut omega = g.to_vec();
            for (a, &i) in active.iter().enumerate() {
                for (o, &ri) in omega.iter_mut().zip(&refs[i]) {
                    *o += v[a] * ri;
                }
            }
            omega
        };

        let feasible = refs
            .iter()
            .all(|r| dot(&omega, r) >= -feas_tol * norm(r) * norm(&omega).max(1.0));
        if !feasible {
            continue;
        }
        let obj = distance_sq(&omega, g);
        if best.as_ref().map_or(true, |(_, b)| obj < *b) {
            best = Some((omega, obj));
        }
    }
    best
}

/// Brute-force oracle: the best feasible point of a uniform lattice over
/// `[lo, hi]^dim`. Every lattice point is tested against every constraint.
pub fn grid_oracle(
    g: &[f64],
    refs: &[Vec<f64>],
    lo: f64,
    hi: f64,
    points_per_dim: usize,
) -> Option<(Vec<f64>, f64)> {
    assert!(points_per_dim >= 2);
    let dim = g.len();
    let step = (hi - lo) / (points_per_dim - 1) as f64;
    let mut idx = vec![0usize; dim];
    let mut point = vec![lo; dim];
    let mut best: Option<(Vec<f64>, f64)> = None;

    loop {
        for d in 0..dim {
            point[d] = lo + idx[d] as f64 * step;
        }
        if refs.iter().all(|r| dot(&point, r) >= 0.0) {
            let obj = distance_sq(&point, g);
            if best.as_ref().map_or(true, |(_, b)| obj < *b) {
                best = Some((point.clone(), obj));
            }
        }
        // Advance the mixed-radix counter.
        let mut d = 0;
        loop {
            if d == dim {
                return best;
            }
            idx[d] += 1;
            if idx[d] < points_per_dim {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

/// Gaussian elimination with partial pivoting on a dense row-major system.
/// Consumes its inputs; returns `None` for a (numerically) singular matrix.
fn solve_dense(mat: &mut [f64], rhs: &mut [f64]) -> Option<Vec<f64>> {
    let n = rhs.len();
    debug_assert_eq!(mat.len(), n * n);
    for col in 0..n {
        let pivot = (col..n).max_by(|&a, &b| {
            mat[a * n + col]
                .abs()
                .partial_cmp(&mat[b * n + col].abs())
                .unwrap()
        })?;
        if mat[pivot * n + col].abs() < 1e-12 {
            return None;
        }
        if pivot != col {
            for j in 0..n {
                mat.swap(col * n + j, pivot * n + j);
            }
            rhs.swap(col, pivot);
        }
        for row in col + 1..n {
            let f = mat[row * n + col] / mat[col * n + col];
            for j in col..n {
                mat[row * n + j] -= f * mat[col * n + j];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = rhs[row];
        for j in row + 1..n {
            acc -= mat[row * n + j] * x[j];
        }
        x[row] = acc / mat[row * n + row];
    }
    Some(x)
}

fn distance_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Draws a random instance with entries in `[-1, 1]`. With `conditioned`
/// set, references are re-drawn until they have norm at least 0.3 and
/// pairwise |cosine| at most 0.95, keeping the enumeration oracle's linear
/// systems well behaved.
pub fn random_instance(
    rng: &mut ChaCha8Rng,
    dim: usize,
    n_refs: usize,
    conditioned: bool,
) -> QpInstance {
    let draw_vec = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..dim).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect()
    };
    let gradient = draw_vec(rng);
    let mut references: Vec<Vec<f64>> = Vec::with_capacity(n_refs);
    while references.len() < n_refs {
        let r = draw_vec(rng);
        let n = norm(&r);
        if n < 0.3 {
            continue;
        }
        if conditioned
            && references
                .iter()
                .any(|p| (dot(p, &r) / (norm(p) * n)).abs() > 0.95)
        {
            continue;
        }
        references.push(r);
    }
    QpInstance {
        gradient,
        references,
    }
}

fn dump_instance(label: &str, inst: &QpInstance, detail: &str) -> String {
    format!(
        "{label}: {detail}\n  g = {:?}\n  refs = {:?}",
        inst.gradient, inst.references
    )
}

/// Runs both random-instance suites through `solver`.
///
/// Suite 1 (`trials` instances, dim <= 3, <= 2 constraints): dual KKT
/// checks, optimality against the enumeration oracle, and domination of
/// every feasible grid point. Suite 2 (`trials` instances, dim <= 16,
/// <= 5 constraints): recovered projections satisfy every constraint.
pub fn run_qp_check_with(trials: usize, seed: u64, solver: &DualSolver) -> QpCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = QpConfig::<f64>::default();
    let mut report = QpCheckReport {
        trials,
        max_kkt_residual: 0.0,
        max_optimality_gap: 0.0,
        worst_constraint_residual: 0.0,
        violations: Vec::new(),
    };

    // Suite 1: small instances with exact certification.
    for trial in 0..trials {
        let dim = rng.gen_range(1..=3);
        let n_refs = rng.gen_range(1..=2.min(dim));
        let inst = random_instance(&mut rng, dim, n_refs, true);
        match project_with(&inst, &cfg, solver) {
            Ok((omega, dual)) => {
                let gram = gram_of(&inst.references);
                let dots: Vec<f64> = inst
                    .references
                    .iter()
                    .map(|r| dot(r, &inst.gradient))
                    .collect();
                let resid = kkt_residual(&gram, &dots, &dual.coefficients).max(0.0);
                report.max_kkt_residual = report.max_kkt_residual.max(resid);
                if resid > KKT_RESIDUAL_LIMIT || !dual.converged {
                    report.violations.push(dump_instance(
                        &format!("suite1 trial {trial}"),
                        &inst,
                        &format!("KKT residual {resid:e} above {KKT_RESIDUAL_LIMIT:e}"),
                    ));
                }
                let obj = distance_sq(&omega, &inst.gradient);
                if let Some((_, oracle_obj)) =
                    enumeration_oracle(&inst.gradient, &inst.references)
                {
                    let gap = (obj - oracle_obj).abs();
                    report.max_optimality_gap = report.max_optimality_gap.max(gap);
                    if gap > OPTIMALITY_GAP_LIMIT {
                        report.violations.push(dump_instance(
                            &format!("suite1 trial {trial}"),
                            &inst,
                            &format!("optimality gap {gap:e} above {OPTIMALITY_GAP_LIMIT:e}"),
                        ));
                    }
                }
                if let Some((_, grid_obj)) =
                    grid_oracle(&inst.gradient, &inst.references, -3.5, 3.5, 41)
                {
                    if obj > grid_obj + 1e-9 {
                        report.violations.push(dump_instance(
                            &format!("suite1 trial {trial}"),
                            &inst,
                            &format!(
                                "objective {obj:.12} beaten by grid point at {grid_obj:.12}"
                            ),
                        ));
                    }
                }
            }
            Err(e) => report.violations.push(dump_instance(
                &format!("suite1 trial {trial}"),
                &inst,
                &format!("solver error: {e}"),
            )),
        }
    }

    // Suite 2: larger instances, feasibility of the recovered projection.
    for trial in 0..trials {
        let dim = rng.gen_range(2..=16);
        let n_refs = rng.gen_range(1..=5);
        let inst = random_instance(&mut rng, dim, n_refs, false);
        match project_with(&inst, &cfg, solver) {
            Ok((omega, _)) => {
                for r in &inst.references {
                    let resid = dot(&omega, r);
                    report.worst_constraint_residual =
                        report.worst_constraint_residual.min(resid);
                    if resid < CONSTRAINT_RESIDUAL_LIMIT {
                        report.violations.push(dump_instance(
                            &format!("suite2 trial {trial}"),
                            &inst,
                            &format!("constraint residual {resid:e}"),
                        ));
                        break;
                    }
                }
            }
            Err(e) => report.violations.push(dump_instance(
                &format!("suite2 trial {trial}"),
                &inst,
                &format!("solver error: {e}"),
            )),
        }
    }

    report
}

/// Runs the suites with the production solver.
pub fn run_qp_check(trials: usize, seed: u64) -> QpCheckReport {
    run_qp_check_with(trials, seed, &|gram, linear, cfg| {
        solve_nonneg_qp(gram, linear, cfg)
    })
}

/// Dual solve + primal recovery through an injected solver, mirroring the
/// production projection path (including the inactive shortcut).
fn project_with(
    inst: &QpInstance,
    cfg: &QpConfig<f64>,
    solver: &DualSolver,
) -> Result<(Vec<f64>, DualSolution<f64>), QpError> {
    let dots: Vec<f64> = inst
        .references
        .iter()
        .map(|r| dot(r, &inst.gradient))
        .collect();
    if dots.iter().all(|&d| d >= 0.0) {
        return Ok((
            inst.gradient.clone(),
            DualSolution {
                coefficients: vec![0.0; inst.references.len()],
                objective: 0.0,
                iterations: 0,
                converged: true,
            },
        ));
    }
    let gram = gram_of(&inst.references);
    let dual = solver(&gram, &dots, cfg)?;
    let mut omega = inst.gradient.clone();
    for (coef, r) in dual.coefficients.iter().zip(&inst.references) {
        for (o, ri) in omega.iter_mut().zip(r) {
            *o += coef * ri;
        }
    }
    Ok((omega, dual))
}

fn gram_of(refs: &[Vec<f64>]) -> Vec<f64> {
    let k = refs.len();
    let mut gram = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            gram[i * k + j] = dot(&refs[i], &refs[j]);
        }
    }
    gram
}

/// Convenience wrapper used by tests comparing projections against oracles.
pub fn projection_objective(omega: &GradVec<f64>, g: &GradVec<f64>) -> f64 {
    distance_sq(omega.as_slice(), g.as_slice())
}

/// Feasibility residual of a projection: the most negative inner product
/// against any reference, normalized by nothing (absolute scale).
pub fn worst_residual(omega: &GradVec<f64>, refs: &[GradVec<f64>]) -> f64 {
    refs.iter()
        .map(|r| dot(omega.as_slice(), r.as_slice()))
        .fold(f64::INFINITY, f64::min)
}

/// Reference norm guard used by instance consumers.
pub fn min_ref_norm(refs: &[Vec<f64>]) -> f64 {
    refs.iter().map(|r| norm_sq(r).sqrt()).fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracles_agree_on_hand_case() {
        // g=(-1,-1) against both axes: optimum is the origin, objective 2.
        let g = vec![-1.0, -1.0];
        let refs = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let (omega, obj) = enumeration_oracle(&g, &refs).unwrap();
        assert!(omega.iter().all(|x| x.abs() < 1e-12));
        assert!((obj - 2.0).abs() < 1e-12);

        let (_, grid_obj) = grid_oracle(&g, &refs, -2.0, 2.0, 201).unwrap();
        assert!((grid_obj - 2.0).abs() < 1e-12); // origin is a lattice point
    }

    #[test]
    fn oracles_agree_randomly() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let dim = rng.gen_range(1..=2);
            let refs = rng.gen_range(1..=dim);
            let inst = random_instance(&mut rng, dim, refs, true);
            let (_, enum_obj) = enumeration_oracle(&inst.gradient, &inst.references).unwrap();
            let (_, grid_obj) =
                grid_oracle(&inst.gradient, &inst.references, -3.5, 3.5, 281).unwrap();
            // The grid can only be worse, and not by more than its resolution
            // allows.
            assert!(grid_obj >= enum_obj - 1e-9);
            assert!(grid_obj - enum_obj < 0.15, "grid {grid_obj} enum {enum_obj}");
        }
    }

    #[test]
    fn clean_solver_passes() {
        let report = run_qp_check(50, 42);
        assert!(report.passed(), "violations: {:?}", report.violations);
        assert!(report.max_kkt_residual <= KKT_RESIDUAL_LIMIT);
        assert!(report.max_optimality_gap <= OPTIMALITY_GAP_LIMIT);
        assert!(report.worst_constraint_residual >= CONSTRAINT_RESIDUAL_LIMIT);
    }

    #[test]
    fn faulty_solver_is_caught() {
        // Corrupt every dual coefficient; the KKT and optimality checks
        // must flag it.
        let faulty: &DualSolver = &|gram, linear, cfg| {
            let mut sol = solve_nonneg_qp(gram, linear, cfg)?;
            for c in &mut sol.coefficients {
                *c += 0.25;
            }
            Ok(sol)
        };
        let report = run_qp_check_with(25, 42, faulty);
        assert!(!report.passed());
        assert!(report.violations.iter().any(|v| v.contains("g =")));
    }

    #[test]
    fn solve_dense_solves() {
        let mut mat = vec![2.0, 1.0, 1.0, 3.0];
        let mut rhs = vec![5.0, 10.0];
        let x = solve_dense(&mut mat, &mut rhs).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12);
        assert!((x[1] - 3.0).abs() < 1e-12);
        let mut sing = vec![1.0, 2.0, 2.0, 4.0];
        let mut rhs2 = vec![1.0, 2.0];
        assert!(solve_dense(&mut sing, &mut rhs2).is_none());
    }
}
