use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::qp::{solve_qp, QpError, QpProblem, QpSolution, QpStatus};
use super::ControlError;

/// A controllable PV plant at a non-slack bus (load index).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PvPlant {
    pub node: usize,
    pub s_max: f64,
    pub pf_min: f64,
}

impl PvPlant {
    /// Reactive-to-active ratio allowed by the minimum power factor.
    pub fn zeta(&self) -> f64 {
        ((1.0 - self.pf_min * self.pf_min) / (self.pf_min * self.pf_min)).sqrt()
    }

    fn validate(&self) -> Result<(), ControlError> {
        if !(self.s_max > 0.0 && self.s_max.is_finite()) {
            return Err(ControlError::Input(format!("plant at node {}: s_max must be > 0", self.node)));
        }
        if !(self.pf_min > 0.0 && self.pf_min <= 1.0) {
            return Err(ControlError::Input(format!(
                "plant at node {}: pf_min must lie in (0, 1]",
                self.node
            )));
        }
        Ok(())
    }
}

/// Linearized voltage model of one constrained node.
///
/// Coefficient vectors are indexed by load index over all non-slack buses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeConstraint {
    pub node: usize,
    pub v_prev: f64,
    pub kp: Vec<f64>,
    pub kq: Vec<f64>,
    pub dkp: Vec<f64>,
    pub dkq: Vec<f64>,
    pub omega: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoltageConstraintSet {
    pub v_min: f64,
    pub v_max: f64,
    pub nodes: Vec<NodeConstraint>,
}

/// How the per-plant protection rows of the robust counterpart are written.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtectionForm {
    /// `z_i + g_ij ≥ ΔK^P_ij y^p_j + ΔK^Q_ij y^q_j`: each plant is one
    /// uncertain unit, so a budget equal to the plant count protects the whole
    /// coefficient box.
    #[default]
    Combined,
    /// Two rows sharing `g_ij`, one per envelope (`y^p` and `y^q`).
    SharedMax,
    /// Two rows sharing `g_ij`, both against `y^p`.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispatchOptions {
    /// Facets of the inscribed polygon replacing the apparent-power circle.
    pub capability_facets: usize,
    pub weight_p: f64,
    pub weight_q: f64,
    pub protection: ProtectionForm,
}

impl Default for DispatchOptions {
    fn default() -> Self {
        Self { capability_facets: 16, weight_p: 1.0, weight_q: 1.0, protection: ProtectionForm::Combined }
    }
}

/// A dispatch QP together with the layout needed to decode it.
#[derive(Debug, Clone)]
pub struct DispatchProblem {
    pub qp: QpProblem,
    pub n_plants: usize,
    pub robust: bool,
}

/// Current operating point of each plant and its available power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantInputs {
    pub p_mpp: f64,
    pub p_prev: f64,
    pub q_prev: f64,
}

fn check_inputs(
    plants: &[PvPlant],
    inputs: &[PlantInputs],
    vset: &VoltageConstraintSet,
) -> Result<(), ControlError> {
    if plants.len() != inputs.len() {
        return Err(ControlError::Input("one input record per plant required".into()));
    }
    for p in plants {
        p.validate()?;
    }
    if inputs.iter().any(|i| !(i.p_mpp >= 0.0) || !i.p_prev.is_finite() || !i.q_prev.is_finite()) {
        return Err(ControlError::Input("MPP availability must be >= 0 and finite".into()));
    }
    if !(vset.v_min < vset.v_max) {
        return Err(ControlError::Input("v_min must be below v_max".into()));
    }
    for nc in &vset.nodes {
        for pl in plants {
            if pl.node >= nc.kp.len() || pl.node >= nc.kq.len() {
                return Err(ControlError::MissingCoefficients(nc.node));
            }
        }
        if nc.dkp.iter().chain(&nc.dkq).any(|d| !(*d >= 0.0)) {
            return Err(ControlError::Input(format!("node {}: negative half-width", nc.node)));
        }
        if !(nc.v_prev.is_finite()) {
            return Err(ControlError::Input(format!("node {}: non-finite voltage", nc.node)));
        }
    }
    Ok(())
}

/// Variables `[P_1..P_n, Q_1..Q_n]` with the plant constraints and the
/// linearized voltage rows. Robust auxiliaries are appended by the caller.
fn base_problem(
    plants: &[PvPlant],
    inputs: &[PlantInputs],
    opts: &DispatchOptions,
    n_vars: usize,
) -> QpProblem {
    let n = plants.len();
    let mut qp = QpProblem::new(n_vars);
    for (j, (pl, inp)) in plants.iter().zip(inputs).enumerate() {
        // w_p (P - P̂)² + w_q Q²
        qp.hessian[(j, j)] = 2.0 * opts.weight_p;
        qp.hessian[(n + j, n + j)] = 2.0 * opts.weight_q;
        qp.linear[j] = -2.0 * opts.weight_p * inp.p_mpp;
        qp.offset += opts.weight_p * inp.p_mpp * inp.p_mpp;
        qp.names[j] = format!("P[{}]", pl.node);
        qp.names[n + j] = format!("Q[{}]", pl.node);
        qp.lower[j] = 0.0;
        qp.upper[j] = inp.p_mpp;
        qp.lower[n + j] = -pl.s_max;
        qp.upper[n + j] = pl.s_max;

        let facets = opts.capability_facets.max(4);
        let radius = pl.s_max * (PI / facets as f64).cos();
        for k in 0..facets {
            let theta = (2 * k + 1) as f64 * PI / facets as f64;
            let (a, b) = (theta.cos(), theta.sin());
            qp.add_row(format!("cap[{}]#{k}", pl.node), &[(j, a), (n + j, b)], radius);
        }
        let zeta = pl.zeta();
        qp.add_row(format!("pf+[{}]", pl.node), &[(n + j, 1.0), (j, -zeta)], 0.0);
        qp.add_row(format!("pf-[{}]", pl.node), &[(n + j, -1.0), (j, -zeta)], 0.0);
    }
    qp
}

/// Rows `V_prev + K^P ΔP + K^Q ΔQ (± protection) ≤ V_max` and the mirrored
/// lower-bound rows. `protection` lists extra `(column, coefficient)` terms.
fn voltage_rows(
    qp: &mut QpProblem,
    plants: &[PvPlant],
    inputs: &[PlantInputs],
    vset: &VoltageConstraintSet,
    protection: impl Fn(usize) -> Vec<(usize, f64)>,
) {
    let n = plants.len();
    for (i, nc) in vset.nodes.iter().enumerate() {
        let mut base = nc.v_prev;
        let mut coeffs = Vec::with_capacity(2 * n);
        for (j, (pl, inp)) in plants.iter().zip(inputs).enumerate() {
            let (kp, kq) = (nc.kp[pl.node], nc.kq[pl.node]);
            base -= kp * inp.p_prev + kq * inp.q_prev;
            coeffs.push((j, kp));
            coeffs.push((n + j, kq));
        }
        let extra = protection(i);
        let mut upper = coeffs.clone();
        upper.extend(extra.iter().copied());
        qp.add_row(format!("vmax[{}]", nc.node), &upper, vset.v_max - base);
        let mut lower: Vec<(usize, f64)> = coeffs.iter().map(|&(c, v)| (c, -v)).collect();
        lower.extend(extra.iter().copied());
        qp.add_row(format!("vmin[{}]", nc.node), &lower, base - vset.v_min);
    }
}

/// Dispatch with estimated coefficients taken at face value.
pub fn build_nonrobust(
    plants: &[PvPlant],
    inputs: &[PlantInputs],
    vset: &VoltageConstraintSet,
    opts: &DispatchOptions,
) -> Result<DispatchProblem, ControlError> {
    check_inputs(plants, inputs, vset)?;
    let n = plants.len();
    let mut qp = base_problem(plants, inputs, opts, 2 * n);
    voltage_rows(&mut qp, plants, inputs, vset, |_| Vec::new());
    Ok(DispatchProblem { qp, n_plants: n, robust: false })
}

/// Robust counterpart under interval coefficients with a per-node budget.
///
/// Adds envelopes `y^p_j ≥ |ΔP_j|`, `y^q_j ≥ |ΔQ_j|`, a budget variable `z_i`
/// and per-plant excess `g_ij` so that each voltage row is tightened by
/// `Ω_i z_i + Σ_j g_ij`.
pub fn build_robust(
    plants: &[PvPlant],
    inputs: &[PlantInputs],
    vset: &VoltageConstraintSet,
    opts: &DispatchOptions,
) -> Result<DispatchProblem, ControlError> {
    check_inputs(plants, inputs, vset)?;
    let n = plants.len();
    let m = vset.nodes.len();
    for nc in &vset.nodes {
        if !(nc.omega >= 0.0 && nc.omega <= n as f64) {
            return Err(ControlError::Input(format!(
                "node {}: budget {} outside [0, {n}]",
                nc.node, nc.omega
            )));
        }
    }
    let yp = |j: usize| 2 * n + j;
    let yq = |j: usize| 3 * n + j;
    let z = |i: usize| 4 * n + i;
    let g = |i: usize, j: usize| 4 * n + m + i * n + j;
    let n_vars = 4 * n + m + m * n;
    let mut qp = base_problem(plants, inputs, opts, n_vars);

    let mut yp_max = vec![0.0; n];
    let mut yq_max = vec![0.0; n];
    for (j, (pl, inp)) in plants.iter().zip(inputs).enumerate() {
        yp_max[j] = inp.p_mpp.max(pl.s_max) + inp.p_prev.abs() + 1.0;
        yq_max[j] = pl.s_max + inp.q_prev.abs() + 1.0;
        qp.names[yp(j)] = format!("yp[{}]", pl.node);
        qp.names[yq(j)] = format!("yq[{}]", pl.node);
        qp.lower[yp(j)] = 0.0;
        qp.upper[yp(j)] = yp_max[j];
        qp.lower[yq(j)] = 0.0;
        qp.upper[yq(j)] = yq_max[j];
        qp.add_row(format!("env+p[{}]", pl.node), &[(j, 1.0), (yp(j), -1.0)], inp.p_prev);
        qp.add_row(format!("env-p[{}]", pl.node), &[(j, -1.0), (yp(j), -1.0)], -inp.p_prev);
        qp.add_row(format!("env+q[{}]", pl.node), &[(n + j, 1.0), (yq(j), -1.0)], inp.q_prev);
        qp.add_row(format!("env-q[{}]", pl.node), &[(n + j, -1.0), (yq(j), -1.0)], -inp.q_prev);
    }
    for (i, nc) in vset.nodes.iter().enumerate() {
        let mut z_max: f64 = 0.0;
        for (j, pl) in plants.iter().enumerate() {
            let (dp, dq) = (nc.dkp[pl.node], nc.dkq[pl.node]);
            let g_max = match opts.protection {
                ProtectionForm::Combined => dp * yp_max[j] + dq * yq_max[j],
                ProtectionForm::SharedMax => (dp * yp_max[j]).max(dq * yq_max[j]),
                ProtectionForm::Literal => (dp * yp_max[j]).max(dq * yp_max[j]),
            };
            z_max = z_max.max(g_max);
            qp.names[g(i, j)] = format!("g[{},{}]", nc.node, pl.node);
            qp.lower[g(i, j)] = 0.0;
            qp.upper[g(i, j)] = g_max + 1.0;
            let tag = format!("[{},{}]", nc.node, pl.node);
            match opts.protection {
                ProtectionForm::Combined => qp.add_row(
                    format!("prot{tag}"),
                    &[(yp(j), dp), (yq(j), dq), (z(i), -1.0), (g(i, j), -1.0)],
                    0.0,
                ),
                ProtectionForm::SharedMax | ProtectionForm::Literal => {
                    let q_env = if opts.protection == ProtectionForm::Literal { yp(j) } else { yq(j) };
                    qp.add_row(format!("prot-p{tag}"), &[(yp(j), dp), (z(i), -1.0), (g(i, j), -1.0)], 0.0);
                    qp.add_row(format!("prot-q{tag}"), &[(q_env, dq), (z(i), -1.0), (g(i, j), -1.0)], 0.0);
                }
            }
        }
        qp.names[z(i)] = format!("z[{}]", nc.node);
        qp.lower[z(i)] = 0.0;
        qp.upper[z(i)] = z_max + 1.0;
    }
    voltage_rows(&mut qp, plants, inputs, vset, |i| {
        let mut extra = vec![(z(i), vset.nodes[i].omega)];
        extra.extend((0..n).map(|j| (g(i, j), 1.0)));
        extra
    });
    Ok(DispatchProblem { qp, n_plants: n, robust: true })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecisionStatus {
    Optimal,
    OptimalUnpolished,
    /// The problem was infeasible and the fallback action was applied.
    Infeasible { row: String },
}

/// Setpoints for each plant, in plant order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlDecision {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub objective: f64,
    pub status: DecisionStatus,
    pub iterations: usize,
    pub active: Vec<String>,
}

impl ControlDecision {
    /// Leaves every plant at its available power with zero reactive output.
    pub fn uncurtailed(inputs: &[PlantInputs]) -> Self {
        Self {
            p: inputs.iter().map(|i| i.p_mpp).collect(),
            q: vec![0.0; inputs.len()],
            objective: 0.0,
            status: DecisionStatus::Optimal,
            iterations: 0,
            active: Vec::new(),
        }
    }

    /// Full curtailment.
    pub fn curtail_all(n: usize, row: String) -> Self {
        Self {
            p: vec![0.0; n],
            q: vec![0.0; n],
            objective: f64::NAN,
            status: DecisionStatus::Infeasible { row },
            iterations: 0,
            active: Vec::new(),
        }
    }

    fn from_solution(sol: &QpSolution, n: usize) -> Self {
        Self {
            p: sol.x.rows(0, n).iter().copied().collect(),
            q: sol.x.rows(n, n).iter().copied().collect(),
            objective: sol.objective,
            status: match sol.status {
                QpStatus::Optimal => DecisionStatus::Optimal,
                QpStatus::OptimalUnpolished => DecisionStatus::OptimalUnpolished,
            },
            iterations: sol.iterations,
            active: sol.active_rows.clone(),
        }
    }
}

/// Solves a dispatch problem and decodes the plant setpoints.
pub fn solve_dispatch(problem: &DispatchProblem) -> Result<ControlDecision, QpError> {
    let sol = solve_qp(&problem.qp)?;
    Ok(ControlDecision::from_solution(&sol, problem.n_plants))
}

/// Injections for the next load flow: plants are capped at their setpoint
/// (and at the power actually available), their reactive output is kept
/// inside the power-factor cone of the delivered active power, and every other
/// bus follows its profile.
pub fn apply_decision(
    decision: &ControlDecision,
    plants: &[PvPlant],
    mpp_now: &[f64],
    load_p: &[f64],
    load_q: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let mut p = load_p.to_vec();
    let mut q = load_q.to_vec();
    for (j, pl) in plants.iter().enumerate() {
        let delivered = decision.p[j].min(mpp_now[j]).max(0.0);
        let cone = pl.zeta() * delivered;
        p[pl.node] += delivered;
        q[pl.node] += decision.q[j].clamp(-cone, cone);
    }
    (p, q)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plant(node: usize) -> PvPlant {
        PvPlant { node, s_max: 1.0, pf_min: 0.9 }
    }

    fn inputs(p_mpp: f64) -> PlantInputs {
        PlantInputs { p_mpp, p_prev: p_mpp, q_prev: 0.0 }
    }

    fn single_node(v_prev: f64, k: f64, dk: f64, omega: f64) -> VoltageConstraintSet {
        VoltageConstraintSet {
            v_min: 0.97,
            v_max: 1.03,
            nodes: vec![NodeConstraint {
                node: 0,
                v_prev,
                kp: vec![k],
                kq: vec![k / 2.0],
                dkp: vec![dk],
                dkq: vec![dk / 2.0],
                omega,
            }],
        }
    }

    #[test]
    fn no_voltage_rows_tracks_mpp() {
        let vset = VoltageConstraintSet { v_min: 0.97, v_max: 1.03, nodes: vec![] };
        let prob = build_nonrobust(&[plant(0)], &[inputs(0.6)], &vset, &Default::default()).unwrap();
        let d = solve_dispatch(&prob).unwrap();
        assert_eq!(d.p, vec![0.6]);
        assert!(d.q[0].abs() < 1e-12);
    }

    #[test]
    fn zero_availability() {
        let vset = single_node(1.0, 0.05, 0.0, 0.0);
        let prob = build_nonrobust(&[plant(0)], &[inputs(0.0)], &vset, &Default::default()).unwrap();
        let d = solve_dispatch(&prob).unwrap();
        assert_eq!(d.p, vec![0.0]);
        assert!(d.q[0].abs() < 1e-12);
    }

    #[test]
    fn binding_upper_voltage_curtails() {
        let vset = single_node(1.05, 0.1, 0.0, 0.0);
        let prob = build_nonrobust(&[plant(0)], &[inputs(0.8)], &vset, &Default::default()).unwrap();
        let d = solve_dispatch(&prob).unwrap();
        let v = 1.05 + 0.1 * (d.p[0] - 0.8) + 0.05 * d.q[0];
        assert!((v - 1.03).abs() < 1e-9);
        assert!(d.p[0] < 0.8);
        assert!(d.q[0] < 0.0);
        assert!(d.q[0].abs() <= plants_zeta() * d.p[0] + 1e-9);
    }

    fn plants_zeta() -> f64 {
        plant(0).zeta()
    }

    #[test]
    fn robust_is_more_conservative() {
        let nr = build_nonrobust(&[plant(0)], &[inputs(0.8)], &single_node(1.05, 0.1, 0.0, 0.0), &Default::default())
            .unwrap();
        let r = build_robust(&[plant(0)], &[inputs(0.8)], &single_node(1.05, 0.1, 0.02, 1.0), &Default::default())
            .unwrap();
        let dn = solve_dispatch(&nr).unwrap();
        let dr = solve_dispatch(&r).unwrap();
        assert!(dr.p[0] <= dn.p[0] + 1e-9);
    }

    #[test]
    fn rejects_negative_half_width() {
        let vset = single_node(1.0, 0.1, -0.01, 1.0);
        assert!(build_robust(&[plant(0)], &[inputs(0.5)], &vset, &Default::default()).is_err());
    }

    #[test]
    fn apply_caps_at_available_power() {
        let d = ControlDecision {
            p: vec![0.5],
            q: vec![-0.3],
            objective: 0.0,
            status: DecisionStatus::Optimal,
            iterations: 0,
            active: vec![],
        };
        let (p, q) = apply_decision(&d, &[plant(1)], &[0.2], &[-0.1, 0.0], &[-0.02, 0.0]);
        assert_eq!(p, vec![-0.1, 0.2]);
        assert!((q[1] + 0.2 * plant(1).zeta()).abs() < 1e-15);
        let full = ControlDecision::curtail_all(1, "x".into());
        let (p, q) = apply_decision(&full, &[plant(1)], &[0.2], &[0.0, 0.0], &[0.0, 0.0]);
        assert_eq!((p[1], q[1]), (0.0, 0.0));
    }
}
