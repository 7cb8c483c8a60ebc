//! Dense convex QP: `min ½xᵀHx + cᵀx` s.t. `Ax ≤ b`, `lower ≤ x ≤ upper`.
//!
//! Solved with a Mehrotra predictor-corrector interior-point method; the
//! interior solution is then polished on its active set with a proximal
//! equality-constrained solve so that setpoints come out to machine
//! precision. Infeasibility is confirmed with an elastic phase-one problem.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub rows: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub names: Vec<String>,
    pub row_names: Vec<String>,
    /// Constant added to the reported objective.
    pub offset: f64,
}

impl QpProblem {
    pub fn new(n: usize) -> Self {
        Self {
            hessian: DMatrix::zeros(n, n),
            linear: DVector::zeros(n),
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
            rows: DMatrix::zeros(0, n),
            rhs: DVector::zeros(0),
            names: (0..n).map(|i| format!("x{i}")).collect(),
            row_names: Vec::new(),
            offset: 0.0,
        }
    }

    pub fn n_vars(&self) -> usize {
        self.linear.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rhs.len()
    }

    /// Appends `coeffs · x ≤ rhs` given as sparse `(column, value)` pairs.
    pub fn add_row(&mut self, name: impl Into<String>, coeffs: &[(usize, f64)], rhs: f64) {
        let n = self.n_vars();
        let m = self.n_rows();
        let rows = std::mem::replace(&mut self.rows, DMatrix::zeros(0, 0));
        let mut rows = rows.resize_vertically(m + 1, 0.0);
        for &(c, v) in coeffs {
            rows[(m, c)] += v;
        }
        debug_assert_eq!(rows.ncols(), n);
        self.rows = rows;
        let rhs_vec = std::mem::replace(&mut self.rhs, DVector::zeros(0));
        let mut rhs_vec = rhs_vec.resize_vertically(m + 1, 0.0);
        rhs_vec[m] = rhs;
        self.rhs = rhs_vec;
        self.row_names.push(name.into());
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * (&self.hessian * x).dot(x) + self.linear.dot(x) + self.offset
    }

    /// All constraints, bounds included, as one `G x ≤ h` system plus a label
    /// per row.
    fn stacked(&self) -> (DMatrix<f64>, DVector<f64>, Vec<String>) {
        let n = self.n_vars();
        let mut g_rows: Vec<(Vec<(usize, f64)>, f64, String)> = Vec::new();
        for r in 0..self.n_rows() {
            let coeffs = (0..n).map(|c| (c, self.rows[(r, c)])).collect();
            g_rows.push((coeffs, self.rhs[r], self.row_names[r].clone()));
        }
        for i in 0..n {
            if self.upper[i].is_finite() {
                g_rows.push((vec![(i, 1.0)], self.upper[i], format!("{} <= ub", self.names[i])));
            }
            if self.lower[i].is_finite() {
                g_rows.push((vec![(i, -1.0)], -self.lower[i], format!("{} >= lb", self.names[i])));
            }
        }
        let m = g_rows.len();
        let mut g = DMatrix::zeros(m, n);
        let mut h = DVector::zeros(m);
        let mut labels = Vec::with_capacity(m);
        for (r, (coeffs, rhs, label)) in g_rows.into_iter().enumerate() {
            for (c, v) in coeffs {
                g[(r, c)] = v;
            }
            h[r] = rhs;
            labels.push(label);
        }
        (g, h, labels)
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.n_vars();
        if self.hessian.shape() != (n, n)
            || self.lower.len() != n
            || self.upper.len() != n
            || self.rows.ncols() != n
            || self.row_names.len() != self.n_rows()
        {
            return Err(QpError::Shape);
        }
        let finite = self.hessian.iter().chain(self.linear.iter()).chain(self.rows.iter()).chain(self.rhs.iter());
        if finite.into_iter().any(|v| !v.is_finite()) {
            return Err(QpError::NonFinite);
        }
        for i in 0..n {
            if self.lower[i] > self.upper[i] {
                return Err(QpError::Infeasible {
                    row: format!("{} bounds", self.names[i]),
                    violation: self.lower[i] - self.upper[i],
                });
            }
        }
        if (&self.hessian - self.hessian.transpose()).amax() > 1e-12 * (1.0 + self.hessian.amax()) {
            return Err(QpError::NotConvex);
        }
        let eig = self.hessian.clone().symmetric_eigenvalues();
        if eig.iter().any(|e| *e < -1e-10 * (1.0 + self.hessian.amax())) {
            return Err(QpError::NotConvex);
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum QpError {
    #[error("inconsistent problem dimensions")]
    Shape,
    #[error("problem data contains non-finite values")]
    NonFinite,
    #[error("Hessian is not symmetric positive semidefinite")]
    NotConvex,
    #[error("problem is infeasible; most violated constraint '{row}' by {violation:.3e}")]
    Infeasible { row: String, violation: f64 },
    #[error("interior-point method failed to converge after {iterations} iterations")]
    NotConverged { iterations: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QpStatus {
    Optimal,
    /// Interior solution accepted without a successful active-set polish.
    OptimalUnpolished,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Multipliers of `rows` (general constraints only).
    pub row_duals: DVector<f64>,
    pub objective: f64,
    pub status: QpStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub complementarity: f64,
    /// Names of general rows active at the solution.
    pub active_rows: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub polish: bool,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self { max_iterations: 200, tolerance: 1e-11, polish: true }
    }
}

struct Kkt {
    x: DVector<f64>,
    z: DVector<f64>,
    s: DVector<f64>,
    iterations: usize,
    converged: bool,
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut alpha = 1.0f64;
    for (vi, di) in v.iter().zip(dv.iter()) {
        if *di < 0.0 {
            alpha = alpha.min(-vi / di);
        }
    }
    alpha
}

fn factor(k: DMatrix<f64>) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let scale = k.diagonal().amax().max(1.0);
    let mut reg = 0.0;
    for _ in 0..8 {
        let mut kk = k.clone();
        for d in 0..kk.nrows() {
            kk[(d, d)] += reg;
        }
        if let Some(ch) = kk.cholesky() {
            return Some(ch);
        }
        reg = if reg == 0.0 { 1e-14 * scale } else { reg * 100.0 };
    }
    None
}

fn interior_point(
    hmat: &DMatrix<f64>,
    c: &DVector<f64>,
    g: &DMatrix<f64>,
    h: &DVector<f64>,
    opts: &QpOptions,
) -> Kkt {
    let n = c.len();
    let m = h.len();
    let gt = g.transpose();
    let mut x = DVector::zeros(n);
    let mut s = DVector::from_fn(m, |i, _| (h[i] - g.row(i).dot(&x.transpose())).max(1.0));
    let mut z = DVector::from_element(m, 1.0);
    let scale = 1.0 + c.amax().max(h.amax()).max(hmat.amax());
    let tol = opts.tolerance * scale;

    if m == 0 {
        // unconstrained: solve H x = -c directly
        let x = factor(hmat.clone()).map(|ch| ch.solve(&(-c))).unwrap_or(x);
        let converged = (hmat * &x + c).amax() <= tol;
        return Kkt { x, z, s, iterations: 1, converged };
    }

    // best iterate by scaled worst residual; late iterations can lose
    // accuracy once the barrier weights become extreme
    let mut best: Option<(f64, DVector<f64>, DVector<f64>, DVector<f64>)> = None;
    let mut since_best = 0;
    for it in 0..opts.max_iterations {
        let r_d = hmat * &x + c + &gt * &z;
        let r_p = g * &x + &s - h;
        let mu = s.dot(&z) / m as f64;
        if r_d.amax() <= tol && r_p.amax() <= tol && mu <= tol * 1e-2 {
            return Kkt { x, z, s, iterations: it, converged: true };
        }
        let merit = (r_d.amax() / tol).max(r_p.amax() / tol).max(mu / (tol * 1e-2));
        if best.as_ref().map_or(true, |b| merit < b.0) {
            best = Some((merit, x.clone(), z.clone(), s.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > STALL_ITERATIONS {
                break;
            }
        }
        let w = z.component_div(&s);
        let mut k = hmat.clone();
        let gw = DMatrix::from_fn(m, n, |i, j| g[(i, j)] * w[i]);
        k += &gt * &gw;
        let Some(chol) = factor(k) else {
            break;
        };
        let solve = |r_c: &DVector<f64>| {
            // (H + GᵀWG) dx = -r_d - Gᵀ(W r_p - S⁻¹ r_c)
            let inner = w.component_mul(&r_p) - r_c.component_div(&s);
            let rhs = -&r_d - &gt * inner;
            let dx = chol.solve(&rhs);
            let dz = w.component_mul(&(g * &dx + &r_p)) - r_c.component_div(&s);
            let ds = -(r_c + s.component_mul(&dz)).component_div(&z);
            (dx, dz, ds)
        };
        let rc_aff = s.component_mul(&z);
        let (_, dz_a, ds_a) = solve(&rc_aff);
        let a_p = max_step(&s, &ds_a);
        let a_d = max_step(&z, &dz_a);
        let mu_aff = (&s + &ds_a * a_p).dot(&(&z + &dz_a * a_d)) / m as f64;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
        let rc = &rc_aff + ds_a.component_mul(&dz_a) - DVector::from_element(m, sigma * mu);
        let (dx, dz, ds) = solve(&rc);
        let a_p = (0.99 * max_step(&s, &ds)).min(1.0);
        let a_d = (0.99 * max_step(&z, &dz)).min(1.0);
        let a = a_p.min(a_d);
        x += &dx * a;
        s += &ds * a;
        z += &dz * a;
        if x.iter().chain(s.iter()).chain(z.iter()).any(|v| !v.is_finite()) {
            break;
        }
    }
    match best {
        Some((_, x, z, s)) => Kkt { x, z, s, iterations: opts.max_iterations, converged: false },
        None => Kkt { x, z, s, iterations: opts.max_iterations, converged: false },
    }
}

/// Iterations without a better iterate before the interior loop gives up.
const STALL_ITERATIONS: usize = 15;

/// Proximal solve of the equality problem on `active` rows.
fn polish(
    hmat: &DMatrix<f64>,
    c: &DVector<f64>,
    g: &DMatrix<f64>,
    h: &DVector<f64>,
    active: &[usize],
    x0: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = c.len();
    let na = active.len();
    let delta = 1e-9;
    let mut kkt = DMatrix::zeros(n + na, n + na);
    kkt.view_mut((0, 0), (n, n)).copy_from(hmat);
    for d in 0..n {
        kkt[(d, d)] += delta;
    }
    for (a, &r) in active.iter().enumerate() {
        for j in 0..n {
            kkt[(n + a, j)] = g[(r, j)];
            kkt[(j, n + a)] = g[(r, j)];
        }
        kkt[(n + a, n + a)] = -delta;
    }
    let lu = kkt.lu();
    let mut x = x0.clone();
    let mut y = DVector::zeros(na);
    for _ in 0..50 {
        let mut rhs = DVector::zeros(n + na);
        for j in 0..n {
            rhs[j] = -c[j] + delta * x[j];
        }
        for (a, &r) in active.iter().enumerate() {
            rhs[n + a] = h[r] - delta * y[a];
        }
        let sol = lu.solve(&rhs)?;
        let nx = sol.rows(0, n).into_owned();
        let ny = sol.rows(n, na).into_owned();
        let change = (&nx - &x).amax().max(if na > 0 { (&ny - &y).amax() } else { 0.0 });
        x = nx;
        y = ny;
        if change < 1e-15 * (1.0 + x.amax()) {
            break;
        }
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return None;
    }
    Some((x, y))
}

fn residuals(
    hmat: &DMatrix<f64>,
    c: &DVector<f64>,
    g: &DMatrix<f64>,
    h: &DVector<f64>,
    x: &DVector<f64>,
    z: &DVector<f64>,
) -> (f64, f64, f64) {
    let slack = h - g * x;
    let primal = slack.iter().fold(0.0f64, |acc, s| acc.max(-s));
    let dual = (hmat * x + c + g.transpose() * z).amax();
    let compl = slack.iter().zip(z.iter()).fold(0.0f64, |acc, (s, zi)| acc.max((s * zi).abs()));
    (primal, dual, compl)
}

/// Minimizes the total violation to locate the constraint that makes the
/// problem infeasible.
fn phase_one(g: &DMatrix<f64>, h: &DVector<f64>, labels: &[String]) -> Option<(String, f64)> {
    let (m, n) = g.shape();
    let mut ge = DMatrix::zeros(2 * m, n + m);
    let mut he = DVector::zeros(2 * m);
    for r in 0..m {
        for j in 0..n {
            ge[(r, j)] = g[(r, j)];
        }
        ge[(r, n + r)] = -1.0;
        he[r] = h[r];
        ge[(m + r, n + r)] = -1.0;
    }
    let mut hess = DMatrix::zeros(n + m, n + m);
    for d in 0..n {
        hess[(d, d)] = 1e-10;
    }
    let mut cost = DVector::zeros(n + m);
    for r in 0..m {
        cost[n + r] = 1.0;
    }
    let opts = QpOptions { max_iterations: 300, tolerance: 1e-10, polish: false };
    let sol = interior_point(&hess, &cost, &ge, &he, &opts);
    let t = sol.x.rows(n, m);
    let (row, violation) =
        t.iter().enumerate().fold((0, 0.0f64), |acc, (r, v)| if *v > acc.1 { (r, *v) } else { acc });
    (violation > 1e-7).then(|| (labels[row].clone(), violation))
}

/// Puts variables held by an active one-variable row exactly on that row.
fn snap_single_variable_rows(g: &DMatrix<f64>, h: &DVector<f64>, active: &[usize], x: &mut DVector<f64>) {
    for &r in active {
        let mut nz = (0..g.ncols()).filter(|&j| g[(r, j)] != 0.0);
        if let (Some(j), None) = (nz.next(), nz.next()) {
            let target = h[r] / g[(r, j)];
            if (x[j] - target).abs() <= 1e-9 * (1.0 + target.abs()) {
                x[j] = target;
            }
        }
    }
}

pub fn solve_qp(p: &QpProblem) -> Result<QpSolution, QpError> {
    solve_qp_with(p, &QpOptions::default())
}

pub fn solve_qp_with(p: &QpProblem, opts: &QpOptions) -> Result<QpSolution, QpError> {
    p.validate()?;
    let (g, h, labels) = p.stacked();
    let hmat = &p.hessian;
    let c = &p.linear;
    let kkt = interior_point(hmat, c, &g, &h, opts);
    if !kkt.converged {
        if let Some((row, violation)) = phase_one(&g, &h, &labels) {
            return Err(QpError::Infeasible { row, violation });
        }
        // feasible but the interior iterate stalled: accept it only if it is
        // accurate enough
        let (pr, dr, co) = residuals(hmat, c, &g, &h, &kkt.x, &kkt.z);
        if !(pr <= 1e-8 && dr <= 1e-6 && co <= 1e-6) {
            return Err(QpError::NotConverged { iterations: kkt.iterations });
        }
    }

    let mut x = kkt.x.clone();
    let mut z = kkt.z.clone();
    let mut status = QpStatus::OptimalUnpolished;
    if opts.polish {
        let active: Vec<usize> = (0..h.len()).filter(|&i| kkt.z[i] > kkt.s[i]).collect();
        if let Some((px, py)) = polish(hmat, c, &g, &h, &active, &kkt.x) {
            let mut pz = DVector::zeros(h.len());
            for (a, &r) in active.iter().enumerate() {
                pz[r] = py[a];
            }
            let (pr, dr, _) = residuals(hmat, c, &g, &h, &px, &pz);
            let dual_ok = py.iter().all(|v| *v >= -1e-9);
            let obj_ok = p.objective(&px) <= p.objective(&kkt.x) + 1e-9 * (1.0 + p.objective(&kkt.x).abs());
            if pr <= 1e-9 && dr <= 1e-8 && dual_ok && obj_ok {
                x = px;
                snap_single_variable_rows(&g, &h, &active, &mut x);
                z = pz.map(|v| v.max(0.0));
                status = QpStatus::Optimal;
            }
        }
    }
    let (primal_residual, dual_residual, complementarity) = residuals(hmat, c, &g, &h, &x, &z);
    let m_rows = p.n_rows();
    let row_duals = z.rows(0, m_rows).into_owned();
    let slack = &p.rhs - &p.rows * &x;
    let active_rows = (0..m_rows)
        .filter(|&r| slack[r].abs() <= 1e-8 * (1.0 + p.rhs[r].abs()))
        .map(|r| p.row_names[r].clone())
        .collect();
    Ok(QpSolution {
        objective: p.objective(&x),
        x,
        row_duals,
        status,
        iterations: kkt.iterations,
        primal_residual,
        dual_residual,
        complementarity,
        active_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(target: f64, ub: f64) -> QpProblem {
        // (x - target)^2 = ½·2x² - 2 target x + target²
        let mut p = QpProblem::new(1);
        p.hessian[(0, 0)] = 2.0;
        p.linear[0] = -2.0 * target;
        p.offset = target * target;
        p.add_row("cap", &[(0, 1.0)], ub);
        p
    }

    #[test]
    fn scalar_clamp() {
        let sol = solve_qp(&scalar(1.0, 0.5)).unwrap();
        assert_eq!(sol.x[0], 0.5);
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.objective - 0.25).abs() < 1e-15);
        assert_eq!(sol.active_rows, vec!["cap".to_string()]);
    }

    #[test]
    fn interior_optimum() {
        let mut p = QpProblem::new(2);
        p.hessian[(0, 0)] = 2.0;
        p.hessian[(1, 1)] = 2.0;
        p.linear[0] = -2.0;
        p.add_row("sum", &[(0, 1.0), (1, 1.0)], 1.0);
        let sol = solve_qp(&p).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-15);
        assert!(sol.x[1].abs() < 1e-15);
    }

    #[test]
    fn infeasible_reports_row() {
        let mut p = QpProblem::new(1);
        p.hessian[(0, 0)] = 1.0;
        p.lower[0] = 0.0;
        p.add_row("too-low", &[(0, 1.0)], -1.0);
        match solve_qp(&p) {
            Err(QpError::Infeasible { violation, .. }) => assert!(violation > 0.25),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn rejects_indefinite() {
        let mut p = QpProblem::new(1);
        p.hessian[(0, 0)] = -1.0;
        assert!(matches!(solve_qp(&p), Err(QpError::NotConvex)));
    }

    #[test]
    fn unconstrained() {
        let mut p = QpProblem::new(2);
        p.hessian = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        p.linear = DVector::from_vec(vec![1.0, -1.0]);
        let sol = solve_qp(&p).unwrap();
        let grad = &p.hessian * &sol.x + &p.linear;
        assert!(grad.amax() < 1e-12);
    }
}
