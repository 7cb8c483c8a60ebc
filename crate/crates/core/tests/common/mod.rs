#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use rand::seq::index::sample;

use voltsense::control::{
    build_nonrobust, build_robust, solve_dispatch, ControlDecision, DispatchOptions, NodeConstraint,
    PlantInputs, PvPlant, QpProblem, VoltageConstraintSet,
};
use voltsense::grid::{solve_load_flow, true_sensitivities, NetworkModel, SensitivityMatrix};
use voltsense::harness::bundled::bundled_network;

pub fn feeder(name: &str) -> NetworkModel {
    bundled_network(name, 100e3, 400.0, 1.0).unwrap()
}

/// Light load, heavy load and strong reverse flow at the far end.
pub fn operating_points(model: &NetworkModel) -> Vec<(Vec<f64>, Vec<f64>)> {
    let n = model.n_nodes();
    let light = (vec![-0.01; n], vec![-0.003; n]);
    let heavy = (vec![-0.04; n], vec![-0.015; n]);
    let mut pv = vec![-0.02; n];
    pv[n - 1] = 0.3;
    if n > 2 {
        pv[n - 2] = 0.2;
    }
    let reverse = (pv, vec![-0.005; n]);
    vec![light, heavy, reverse]
}

/// Central differences of the load flow, written out independently of the
/// library helper.
pub fn central_differences(model: &NetworkModel, p: &[f64], q: &[f64], step: f64) -> SensitivityMatrix {
    let n = model.n_nodes();
    let mut kp = DMatrix::zeros(n, n);
    let mut kq = DMatrix::zeros(n, n);
    for j in 0..n {
        for reactive in [false, true] {
            let shifted = |sign: f64| {
                let (mut pp, mut qq) = (p.to_vec(), q.to_vec());
                if reactive {
                    qq[j] += sign * step;
                } else {
                    pp[j] += sign * step;
                }
                solve_load_flow(model, &pp, &qq).unwrap().node_voltages(model)
            };
            let (up, down) = (shifted(1.0), shifted(-1.0));
            for i in 0..n {
                let d = (up[i] - down[i]) / (2.0 * step);
                if reactive {
                    kq[(i, j)] = d;
                } else {
                    kp[(i, j)] = d;
                }
            }
        }
    }
    SensitivityMatrix { kp, kq }
}

/// A strictly convex QP with `m` random rows, feasible by construction.
pub fn random_qp(rng: &mut ChaCha8Rng, n: usize, m: usize) -> QpProblem {
    let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let mut qp = QpProblem::new(n);
    qp.hessian = a.transpose() * &a + DMatrix::identity(n, n) * 0.1;
    qp.linear = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
    let x0 = DVector::from_fn(n, |_, _| rng.gen_range(-0.5..0.5));
    for r in 0..m {
        let g: Vec<(usize, f64)> = (0..n).map(|c| (c, rng.gen_range(-1.0..1.0))).collect();
        let at_x0: f64 = g.iter().map(|&(c, v)| v * x0[c]).sum();
        qp.add_row(format!("r{r}"), &g, at_x0 + rng.gen_range(0.0..0.5));
    }
    qp
}

/// Exhaustive active-set oracle for small QPs without variable bounds:
/// tries every working set, keeps the KKT point with nonnegative multipliers
/// and the lowest objective.
pub fn active_set_oracle(qp: &QpProblem) -> DVector<f64> {
    let n = qp.n_vars();
    let m = qp.n_rows();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << m) {
        let set: Vec<usize> = (0..m).filter(|r| mask & (1 << r) != 0).collect();
        let k = set.len();
        if k > n {
            continue;
        }
        let mut kkt = DMatrix::zeros(n + k, n + k);
        let mut rhs = DVector::zeros(n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&qp.hessian);
        for c in 0..n {
            rhs[c] = -qp.linear[c];
        }
        for (a, &r) in set.iter().enumerate() {
            for c in 0..n {
                kkt[(n + a, c)] = qp.rows[(r, c)];
                kkt[(c, n + a)] = qp.rows[(r, c)];
            }
            rhs[n + a] = qp.rhs[r];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        let x = sol.rows(0, n).into_owned();
        if set.iter().enumerate().any(|(a, _)| sol[n + a] < -1e-10) {
            continue;
        }
        let feasible = (0..m).all(|r| (qp.rows.row(r) * &x)[0] <= qp.rhs[r] + 1e-9);
        if !feasible {
            continue;
        }
        let f = qp.objective(&x);
        if best.as_ref().map_or(true, |(b, _)| f < *b) {
            best = Some((f, x));
        }
    }
    best.expect("feasible QP has a KKT point").1
}

/// Three plants on random buses of the 18-bus feeder with random operating
/// points near the upper voltage limit.
pub struct Instance {
    pub plants: Vec<PvPlant>,
    pub inputs: Vec<PlantInputs>,
    pub vset: VoltageConstraintSet,
}

pub fn sensitivities() -> SensitivityMatrix {
    let model = feeder("feeder18");
    let n = model.n_nodes();
    let mut p = vec![-0.02; n];
    for j in [n - 1, n - 2, n - 4] {
        p[j] = 0.35;
    }
    let st = solve_load_flow(&model, &p, &vec![-0.005; n]).unwrap();
    true_sensitivities(&model, &st).unwrap()
}

fn widths(rng: &mut ChaCha8Rng, k: &[f64], rel: f64) -> Vec<f64> {
    k.iter().map(|v| v.abs() * rel * rng.gen_range(0.5..1.0)).collect()
}

pub fn dispatch_instance(rng: &mut ChaCha8Rng, k: &SensitivityMatrix, rel_dk: f64, omega: Option<f64>) -> Instance {
    let n = k.n_nodes();
    let nodes: Vec<usize> = sample(rng, n, 3).into_iter().collect();
    let plants: Vec<PvPlant> =
        nodes.iter().map(|&node| PvPlant { node, s_max: 0.45, pf_min: 0.9 }).collect();
    let inputs: Vec<PlantInputs> = (0..3)
        .map(|_| {
            let p_mpp = rng.gen_range(0.1..0.4);
            PlantInputs { p_mpp, p_prev: p_mpp * rng.gen_range(0.6..1.0), q_prev: 0.0 }
        })
        .collect();
    let constraints = nodes
        .iter()
        .map(|&i| {
            let kp: Vec<f64> = k.kp.row(i).iter().copied().collect();
            let kq: Vec<f64> = k.kq.row(i).iter().copied().collect();
            NodeConstraint {
                node: i,
                v_prev: rng.gen_range(1.015..1.035),
                dkp: widths(rng, &kp, rel_dk),
                dkq: widths(rng, &kq, rel_dk),
                kp,
                kq,
                omega: omega.unwrap_or_else(|| rng.gen_range(0.0..3.0)),
            }
        })
        .collect();
    Instance { plants, inputs, vset: VoltageConstraintSet { v_min: 0.97, v_max: 1.03, nodes: constraints } }
}

pub fn solve_instance(inst: &Instance, robust: bool) -> ControlDecision {
    let opts = DispatchOptions::default();
    let problem = if robust {
        build_robust(&inst.plants, &inst.inputs, &inst.vset, &opts)
    } else {
        build_nonrobust(&inst.plants, &inst.inputs, &inst.vset, &opts)
    }
    .unwrap();
    solve_dispatch(&problem).unwrap()
}

pub fn setpoint_gap(a: &ControlDecision, b: &ControlDecision) -> f64 {
    a.p.iter().chain(&a.q).zip(b.p.iter().chain(&b.q)).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

pub fn worst_vertex_violation(inst: &Instance, d: &ControlDecision) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for nc in &inst.vset.nodes {
        for mask in 0u32..64 {
            let mut v = nc.v_prev;
            for (j, (pl, inp)) in inst.plants.iter().zip(&inst.inputs).enumerate() {
                let sp = if mask & (1 << (2 * j)) != 0 { 1.0 } else { -1.0 };
                let sq = if mask & (1 << (2 * j + 1)) != 0 { 1.0 } else { -1.0 };
                let kp = nc.kp[pl.node] + sp * nc.dkp[pl.node];
                let kq = nc.kq[pl.node] + sq * nc.dkq[pl.node];
                v += kp * (d.p[j] - inp.p_prev) + kq * (d.q[j] - inp.q_prev);
            }
            worst = worst.max(v - inst.vset.v_max).max(inst.vset.v_min - v);
        }
    }
    worst
}

/// Relative L2 distance.
pub fn rel_err(truth: &[f64], est: &[f64]) -> f64 {
    let num: f64 = truth.iter().zip(est).map(|(t, e)| (t - e) * (t - e)).sum::<f64>().sqrt();
    let den: f64 = truth.iter().map(|t| t * t).sum::<f64>().sqrt();
    num / den
}

pub fn manifest_dir() -> std::path::PathBuf {
    std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}
