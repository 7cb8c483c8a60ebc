use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{GridError, NetworkModel};

/// Newton-Raphson settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadFlowOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for LoadFlowOptions {
    fn default() -> Self {
        Self { tolerance: 1e-10, max_iterations: 50 }
    }
}

/// A converged load-flow solution.
///
/// `v` and `i` cover every bus in bus-list order; `p` and `q` are the
/// specified injections of the non-slack buses in load-index order.
#[derive(Debug, Clone, PartialEq)]
pub struct GridState {
    pub v: Vec<Complex64>,
    pub i: Vec<Complex64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub iterations: usize,
    pub mismatch: f64,
}

impl GridState {
    /// Voltage magnitudes of the non-slack buses in load-index order.
    pub fn node_voltages(&self, model: &NetworkModel) -> Vec<f64> {
        model.non_slack_positions().iter().map(|&p| self.v[p].norm()).collect()
    }

    /// Complex power injected at the slack bus.
    pub fn slack_power(&self, model: &NetworkModel) -> Complex64 {
        let s = model.slack_position();
        self.v[s] * self.i[s].conj()
    }
}

fn injections(y: &DMatrix<Complex64>, v: &[Complex64]) -> (Vec<Complex64>, Vec<Complex64>) {
    let n = v.len();
    let mut current = vec![Complex64::new(0.0, 0.0); n];
    for (r, cur) in current.iter_mut().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for c in 0..n {
            acc += y[(r, c)] * v[c];
        }
        *cur = acc;
    }
    let power = v.iter().zip(&current).map(|(vi, ii)| vi * ii.conj()).collect();
    (current, power)
}

/// Polar power-flow Jacobian restricted to the non-slack buses.
///
/// Row blocks are [P; Q] mismatches, column blocks [angle; magnitude].
pub(crate) fn polar_jacobian(
    y: &DMatrix<Complex64>,
    v: &[Complex64],
    current: &[Complex64],
    nodes: &[usize],
) -> DMatrix<f64> {
    let n = nodes.len();
    let j = Complex64::new(0.0, 1.0);
    let mut jac = DMatrix::zeros(2 * n, 2 * n);
    for (a, &r) in nodes.iter().enumerate() {
        for (b, &c) in nodes.iter().enumerate() {
            let unit_c = v[c] / v[c].norm();
            let mut ds_dva = -(y[(r, c)] * v[c]).conj();
            let mut ds_dvm = v[r] * (y[(r, c)] * unit_c).conj();
            if r == c {
                ds_dva += current[r].conj();
                ds_dvm += current[r].conj() * unit_c;
            }
            ds_dva *= j * v[r];
            jac[(a, b)] = ds_dva.re;
            jac[(a, n + b)] = ds_dvm.re;
            jac[(n + a, b)] = ds_dva.im;
            jac[(n + a, n + b)] = ds_dvm.im;
        }
    }
    jac
}

/// Solves the balanced AC power flow with full Newton-Raphson from a flat start.
///
/// `p` and `q` are the non-slack injections (generation positive) in load-index
/// order.
pub fn solve_load_flow(
    model: &NetworkModel,
    p: &[f64],
    q: &[f64],
) -> Result<GridState, GridError> {
    solve_load_flow_with(model, p, q, LoadFlowOptions::default())
}

pub fn solve_load_flow_with(
    model: &NetworkModel,
    p: &[f64],
    q: &[f64],
    opts: LoadFlowOptions,
) -> Result<GridState, GridError> {
    solve_load_flow_from(model, p, q, None, opts)
}

/// Newton-Raphson started from `initial` (bus-list order) instead of a flat
/// profile. The slack entry is reset to the slack voltage.
pub fn solve_load_flow_from(
    model: &NetworkModel,
    p: &[f64],
    q: &[f64],
    initial: Option<&[Complex64]>,
    opts: LoadFlowOptions,
) -> Result<GridState, GridError> {
    let nodes = model.non_slack_positions();
    let n = nodes.len();
    if p.len() != n || q.len() != n {
        return Err(GridError::Input(format!(
            "expected {n} injections, got p={} q={}",
            p.len(),
            q.len()
        )));
    }
    if p.iter().chain(q).any(|x| !x.is_finite()) {
        return Err(GridError::Input("non-finite injection".into()));
    }
    let y = model.admittance();
    let slack = model.slack_voltage();
    let mut v = match initial {
        Some(v0) if v0.len() == model.n_buses() && v0.iter().all(|x| x.norm() > 0.0) => v0.to_vec(),
        Some(v0) => {
            return Err(GridError::Input(format!(
                "initial guess has {} entries for {} buses",
                v0.len(),
                model.n_buses()
            )))
        }
        None => vec![slack; model.n_buses()],
    };
    v[model.slack_position()] = slack;
    let mut mismatch = DVector::zeros(2 * n);

    for iteration in 0..=opts.max_iterations {
        let (current, power) = injections(y, &v);
        for (a, &r) in nodes.iter().enumerate() {
            mismatch[a] = p[a] - power[r].re;
            mismatch[n + a] = q[a] - power[r].im;
        }
        let worst = mismatch.amax();
        if !worst.is_finite() {
            return Err(GridError::NotConverged { iterations: iteration, mismatch: worst });
        }
        if worst < opts.tolerance {
            return Ok(GridState {
                v,
                i: current,
                p: p.to_vec(),
                q: q.to_vec(),
                iterations: iteration,
                mismatch: worst,
            });
        }
        if iteration == opts.max_iterations {
            return Err(GridError::NotConverged { iterations: iteration, mismatch: worst });
        }
        let jac = polar_jacobian(y, &v, &current, nodes);
        let step = jac
            .lu()
            .solve(&mismatch)
            .ok_or(GridError::NotConverged { iterations: iteration, mismatch: worst })?;
        for (a, &r) in nodes.iter().enumerate() {
            let vm = v[r].norm() + step[n + a];
            let va = v[r].arg() + step[a];
            if vm <= 0.0 {
                return Err(GridError::NotConverged { iterations: iteration, mismatch: worst });
            }
            v[r] = Complex64::from_polar(vm, va);
        }
    }
    unreachable!("loop returns on the last iteration")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Branch, Bus};

    pub(crate) fn two_bus(r: f64, x: f64) -> NetworkModel {
        NetworkModel::new(
            vec![Bus { id: 1, is_slack: true }, Bus { id: 2, is_slack: false }],
            vec![Branch { from: 0, to: 1, r_pu: r, x_pu: x, b_pu: 0.0 }],
            1e5,
            400.0,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn no_load_is_flat() {
        let net = two_bus(0.01, 0.1);
        let st = solve_load_flow(&net, &[0.0], &[0.0]).unwrap();
        assert_eq!(st.iterations, 0);
        for v in &st.v {
            assert_eq!(*v, net.slack_voltage());
        }
        for i in &st.i {
            assert_eq!(i.norm(), 0.0);
        }
    }

    #[test]
    fn two_bus_matches_closed_form() {
        let (r, x) = (0.01, 0.1);
        let net = two_bus(r, x);
        let st = solve_load_flow(&net, &[-0.5], &[0.0]).unwrap();
        // |V2|^4 + (2(R Pl + X Ql) - V1^2)|V2|^2 + (R^2 + X^2)(Pl^2 + Ql^2) = 0
        let (pl, ql) = (0.5, 0.0);
        let b = 2.0 * (r * pl + x * ql) - 1.0;
        let c = (r * r + x * x) * (pl * pl + ql * ql);
        let u = (-b + (b * b - 4.0 * c).sqrt()) / 2.0;
        assert!((st.v[1].norm() - u.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn diverges_beyond_nose() {
        let net = two_bus(0.01, 0.1);
        let err = solve_load_flow(&net, &[-20.0], &[-10.0]).unwrap_err();
        assert!(matches!(err, GridError::NotConverged { .. }));
    }

    #[test]
    fn wrong_length_rejected() {
        let net = two_bus(0.01, 0.1);
        assert!(matches!(solve_load_flow(&net, &[0.0, 0.0], &[0.0]), Err(GridError::Input(_))));
    }
}
