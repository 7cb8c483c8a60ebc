use std::collections::{BTreeMap, VecDeque};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use num_complex::Complex64;
use sha2::{Digest, Sha256};

use super::bundled::bundled_csv;
use super::config::{Cadence, ControlMode, InfeasiblePolicy, ScenarioConfig, ScorePoints};
use super::output::{inventory, FileEntry, RunManifest, Sink};
use super::report::{NodeScores, RunReport, SeedScores, VariantReport};
use super::synthetic::{synthetic_profiles, MppSeries};
use super::HarnessError;
use crate::control::{
    apply_decision, build_nonrobust, build_robust, solve_dispatch, ControlDecision, DecisionStatus,
    DispatchOptions, NodeConstraint, PlantInputs, PvPlant, QpError, VoltageConstraintSet,
};
use crate::estimation::{
    difference_row, CoefficientEstimate, EstimatorState, NormalEquations, OnlineEstimator, Variant,
};
use crate::grid::{
    solve_load_flow_from, true_sensitivities, GridState, LoadFlowOptions, NetworkModel,
    SensitivityMatrix,
};
use crate::measurement::{corrupt_sample, exact_sample, MeasurementSample, NoiseSource, Profiles};
use crate::metrics::{cwc, picp, pinaw, rmse, ControlAccumulator, IntervalSeries};

/// A validated configuration with its network and input series loaded.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub cfg: ScenarioConfig,
    pub model: NetworkModel,
    /// Uncontrolled injections (loads), aligned to the model's load index.
    pub loads: Profiles,
    /// Available PV power in plant order.
    pub mpp: MppSeries,
    pub plants: Vec<PvPlant>,
    /// Load indices of the buses whose coefficients are estimated.
    pub monitored: Vec<usize>,
    pub network_sha256: String,
    pub profiles_sha256: String,
}

impl Scenario {
    pub fn prepare(cfg: &ScenarioConfig) -> Result<Self, HarnessError> {
        cfg.validate()?;
        let net = &cfg.network;
        let (buses_csv, branches_csv) = match (&net.feeder, &net.buses, &net.branches) {
            (Some(name), _, _) => {
                let (a, b) = bundled_csv(name)?;
                (a.to_string(), b.to_string())
            }
            (None, Some(b), Some(br)) => (read(b)?, read(br)?),
            _ => return Err(HarnessError::Config("network: no feeder given".into())),
        };
        let model = NetworkModel::from_csv_str(&buses_csv, &branches_csv, net.base_va, net.base_v, net.slack_vm)?;
        let network_sha256 = {
            let mut h = Sha256::new();
            h.update(buses_csv.as_bytes());
            h.update(b"\n");
            h.update(branches_csv.as_bytes());
            h.update(format!("{}|{}|{}", net.base_va, net.base_v, net.slack_vm).as_bytes());
            format!("{:x}", h.finalize())
        };

        let mut plants = Vec::with_capacity(cfg.pv.len());
        for p in &cfg.pv {
            let node = model
                .node_index(p.bus)
                .ok_or_else(|| HarnessError::Config(format!("pv: bus {} is not a non-slack bus", p.bus)))?;
            plants.push(PvPlant { node, s_max: p.s_max, pf_min: p.pf_min });
        }
        let plant_buses: Vec<usize> = cfg.pv.iter().map(|p| p.bus).collect();

        let (loads, mpp) = match &cfg.profiles.file {
            Some(path) => {
                let loads = Profiles::from_csv_path(path)?.aligned_to(&model)?;
                let mpp = match &cfg.profiles.mpp_file {
                    Some(m) => MppSeries::from_csv_path(m)?.reordered(&plant_buses)?,
                    None if plants.is_empty() => {
                        MppSeries::new(Vec::new(), loads.times().to_vec(), Vec::new())?
                    }
                    None => return Err(HarnessError::Config("profiles.mpp_file is required with pv plants".into())),
                };
                if mpp.times() != loads.times() {
                    return Err(HarnessError::Config("profiles and mpp series have different timestamps".into()));
                }
                (loads, mpp)
            }
            None => synthetic_profiles(&model, &cfg.pv, &cfg.profiles.synthetic, cfg.sample_period_s)?,
        };
        if loads.len() < 2 {
            return Err(HarnessError::Config("profiles need at least two samples".into()));
        }
        if loads.times().windows(2).any(|w| w[1] - w[0] != cfg.sample_period_s) {
            return Err(HarnessError::Config(format!(
                "profile timestamps are not spaced by sample_period_s = {}",
                cfg.sample_period_s
            )));
        }
        let profiles_sha256 = {
            let mut h = Sha256::new();
            for k in 0..loads.len() {
                h.update(loads.times()[k].to_le_bytes());
                for x in loads.p(k).iter().chain(loads.q(k)).chain(mpp.at(k)) {
                    h.update(x.to_le_bytes());
                }
            }
            format!("{:x}", h.finalize())
        };

        let monitored = if cfg.estimation.monitored.is_empty() {
            if plants.is_empty() {
                (0..model.n_nodes()).collect()
            } else {
                plants.iter().map(|p| p.node).collect()
            }
        } else {
            cfg.estimation
                .monitored
                .iter()
                .map(|b| {
                    model
                        .node_index(*b)
                        .ok_or_else(|| HarnessError::Config(format!("estimation.monitored: unknown bus {b}")))
                })
                .collect::<Result<_, _>>()?
        };
        Ok(Self {
            cfg: cfg.clone(),
            model,
            loads,
            mpp,
            plants,
            monitored,
            network_sha256,
            profiles_sha256,
        })
    }

    fn bus_of(&self, load_index: usize) -> usize {
        self.model.node_ids()[load_index]
    }
}

fn read(p: &Path) -> Result<String, HarnessError> {
    std::fs::read_to_string(p).map_err(|e| HarnessError::Config(format!("{}: {e}", p.display())))
}

#[derive(Default)]
struct ScoreAcc {
    truth: Vec<f64>,
    est: Vec<f64>,
    half: Vec<f64>,
    row_err2: f64,
    row_true2: f64,
    row_inside: usize,
    row_count: usize,
}

impl ScoreAcc {
    fn push(&mut self, est: &CoefficientEstimate, truth: &SensitivityMatrix, i: usize) {
        self.truth.push(truth.kp[(i, i)]);
        self.est.push(est.kp[i]);
        self.half.push(est.dkp[i]);
        let n = est.n_nodes();
        for j in 0..n {
            for (e, d, t) in [(est.kp[j], est.dkp[j], truth.kp[(i, j)]), (est.kq[j], est.dkq[j], truth.kq[(i, j)])] {
                self.row_err2 += (e - t) * (e - t);
                self.row_true2 += t * t;
                self.row_inside += ((e - t).abs() <= d) as usize;
                self.row_count += 1;
            }
        }
    }

    fn scores(&self, cfg: &ScenarioConfig) -> Option<NodeScores> {
        if self.truth.is_empty() {
            return None;
        }
        let series = IntervalSeries::new(self.truth.clone(), self.est.clone(), self.half.clone()).ok()?;
        let c = picp(&series);
        let w = pinaw(&series).ok()?;
        Some(NodeScores {
            points: series.len(),
            rmse: rmse(&self.truth, &self.est).ok()?,
            picp: c,
            pinaw: w,
            cwc: cwc(c, w, &cfg.metrics.cwc()),
            rmse_row: (self.row_err2 / self.row_true2).sqrt(),
            picp_row: self.row_inside as f64 / self.row_count as f64,
        })
    }
}

/// One noise realization with its estimators.
struct Lane {
    seed: u64,
    noise: NoiseSource,
    prev: Option<MeasurementSample>,
    offline: Vec<NormalEquations>,
    /// `[variant][monitored]`
    est: Vec<Vec<Option<OnlineEstimator>>>,
    latest: Vec<Vec<Option<CoefficientEstimate>>>,
    scores: Vec<Vec<ScoreAcc>>,
}

/// Result of a completed run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub manifest: Option<RunManifest>,
    pub out_dir: Option<PathBuf>,
}

fn stage(stage: &'static str, t: u64) -> impl Fn(String) -> HarnessError {
    move |message| HarnessError::Stage { stage, t, message }
}

fn mean_rows(ring: &VecDeque<Vec<f64>>) -> Vec<f64> {
    let n = ring.front().map_or(0, |r| r.len());
    let mut out = vec![0.0; n];
    for r in ring {
        for (o, x) in out.iter_mut().zip(r) {
            *o += x;
        }
    }
    let k = ring.len().max(1) as f64;
    out.iter_mut().for_each(|o| *o /= k);
    out
}

fn push_ring(ring: &mut VecDeque<Vec<f64>>, row: Vec<f64>, cap: usize) {
    ring.push_back(row);
    while ring.len() > cap {
        ring.pop_front();
    }
}

/// Runs the full pipeline in memory, streaming logs into `sink`.
pub(crate) fn simulate_into(sc: &Scenario, sink: &mut Sink) -> Result<RunReport, HarnessError> {
    let cfg = &sc.cfg;
    let model = &sc.model;
    let n = model.n_nodes();
    let dim = 2 * n;
    let it = cfg.it_class()?;
    let variants: Vec<(String, Variant)> = cfg.variants()?;
    let mode = cfg.control.mode;
    let control_slot = if mode == ControlMode::Off {
        None
    } else {
        let label = cfg.control_variant()?;
        variants.iter().position(|(l, _)| *l == label)
    };
    let node_ids = model.node_ids();
    let node_ids_u32: Vec<u32> = node_ids.iter().map(|&b| b as u32).collect();
    let times = sc.loads.times();
    let t0 = times[0];
    let dt = cfg.sample_period_s;
    let loop_start = t0 + (cfg.estimation.offline_h * 3600.0).round() as u64;
    if loop_start > *times.last().unwrap() {
        return Err(HarnessError::Config(format!(
            "profiles end before the {} h offline period is over",
            cfg.estimation.offline_h
        )));
    }
    let window_samples = (cfg.estimation.window_s / dt) as usize;
    let period = cfg.control.period_s;
    let period_samples = (period / dt) as usize;
    let metric_lo = t0 as f64 + cfg.metrics.window_h[0] * 3600.0;
    let metric_hi = t0 as f64 + cfg.metrics.window_h[1] * 3600.0;
    let in_window = |t: u64| (t as f64) >= metric_lo && (t as f64) <= metric_hi;
    let every = cfg.output.voltage_every_s;
    let lf_opts = LoadFlowOptions::default();
    let np = sc.plants.len();
    let n_pv = np as f64;
    let avg_n = cfg.control.voltage_avg_samples;

    let mut seeds = vec![cfg.seed];
    seeds.extend(cfg.extra_seeds.iter().copied());
    let mut lanes: Vec<Lane> = seeds
        .iter()
        .map(|&seed| Lane {
            seed,
            noise: NoiseSource::new(seed, n).with_phase_noise(cfg.measurement.phase_noise),
            prev: None,
            offline: sc.monitored.iter().map(|_| NormalEquations::new(dim)).collect(),
            est: variants
                .iter()
                .map(|(_, v)| {
                    sc.monitored
                        .iter()
                        .map(|&i| match v {
                            Variant::Ls => Some(OnlineEstimator::window(i, window_samples, cfg.estimation.lambda)),
                            _ => None,
                        })
                        .collect()
                })
                .collect(),
            latest: variants.iter().map(|_| sc.monitored.iter().map(|_| None).collect()).collect(),
            scores: variants.iter().map(|_| sc.monitored.iter().map(|_| ScoreAcc::default()).collect()).collect(),
        })
        .collect();

    let mut acc = ControlAccumulator::new(&node_ids_u32, cfg.control.v_min, cfg.control.v_max, model.base_va);
    let mut decision: Option<ControlDecision> = None;
    let mut decisions = 0usize;
    let mut fallback_steps = 0usize;
    let mut v_ring: VecDeque<Vec<f64>> = VecDeque::with_capacity(avg_n + 1);
    let mut p_ring: VecDeque<Vec<f64>> = VecDeque::with_capacity(avg_n + 1);
    let mut q_ring: VecDeque<Vec<f64>> = VecDeque::with_capacity(avg_n + 1);
    let mut fixed_truth: Option<SensitivityMatrix> = None;
    let mut warm: Option<Vec<Complex64>> = None;
    let mut h = DVector::zeros(dim);
    let mut p_inj = vec![0.0; n];
    let mut q_inj = vec![0.0; n];
    let mut pv_p = vec![0.0; np];
    let mut pv_q = vec![0.0; np];
    let dispatch_opts = DispatchOptions {
        capability_facets: cfg.control.capability_facets,
        weight_p: cfg.control.weight_p,
        weight_q: cfg.control.weight_q,
        protection: cfg.control.protection,
    };

    for k in 0..times.len() {
        let t = times[k];
        let mpp_now = sc.mpp.at(k);
        match (&decision, mode != ControlMode::Off && t > loop_start) {
            (Some(d), true) => {
                let (p, q) = apply_decision(d, &sc.plants, mpp_now, sc.loads.p(k), sc.loads.q(k));
                p_inj.copy_from_slice(&p);
                q_inj.copy_from_slice(&q);
                for (j, pl) in sc.plants.iter().enumerate() {
                    pv_p[j] = p[pl.node] - sc.loads.p(k)[pl.node];
                    pv_q[j] = q[pl.node] - sc.loads.q(k)[pl.node];
                }
            }
            _ => {
                p_inj.copy_from_slice(sc.loads.p(k));
                q_inj.copy_from_slice(sc.loads.q(k));
                for (j, pl) in sc.plants.iter().enumerate() {
                    p_inj[pl.node] += mpp_now[j];
                    pv_p[j] = mpp_now[j];
                    pv_q[j] = 0.0;
                }
            }
        }
        let state: GridState = solve_load_flow_from(model, &p_inj, &q_inj, warm.as_deref(), lf_opts)
            .map_err(|e| stage("load flow", t)(e.to_string()))?;
        let true_v = state.node_voltages(model);
        if every > 0 && (t - t0) % every == 0 {
            sink.voltages(t, &true_v)?;
        }
        if t >= loop_start {
            acc.push(&true_v, mpp_now, &pv_p, &pv_q, dt as f64);
        }

        let refresh = t >= loop_start && (t - loop_start) % period == 0;
        let score_now = in_window(t) && (refresh || cfg.metrics.points == ScorePoints::Sample);
        let init_now = t >= loop_start && lanes[0].est.iter().flatten().any(|e| e.is_none());

        for (li, lane) in lanes.iter_mut().enumerate() {
            let sample = corrupt_sample(model, &state, &it, &mut lane.noise, t)
                .map_err(|e| stage("measurement", t)(e.to_string()))?;
            if init_now {
                for (vi, (_, v)) in variants.iter().enumerate() {
                    if matches!(v, Variant::Ls) {
                        continue;
                    }
                    for (m, &i) in sc.monitored.iter().enumerate() {
                        let ne = &lane.offline[m];
                        let lambda = cfg.estimation.lambda.unwrap_or_else(|| ne.default_lambda()).max(1e-12);
                        let init: EstimatorState =
                            ne.solve(lambda, i).map_err(|e| stage("offline estimation", t)(e.to_string()))?;
                        let sw = cfg.estimation.sigma_weight_for(v, cfg.recursive_steps());
                        lane.est[vi][m] = Some(OnlineEstimator::recursive(init, v.clone(), sw));
                    }
                }
            }
            if let Some(prev) = &lane.prev {
                difference_row(prev, &sample, &mut h);
                let step_recursive = match cfg.estimation.cadence {
                    Cadence::PerSample => true,
                    Cadence::PerRefresh => refresh,
                };
                for (m, &i) in sc.monitored.iter().enumerate() {
                    let gamma = sample.v[i] - prev.v[i];
                    if t < loop_start {
                        lane.offline[m].push(&h, gamma);
                    }
                    for vi in 0..variants.len() {
                        if let Some(e) = &mut lane.est[vi][m] {
                            let is_window = matches!(e, OnlineEstimator::Window { .. });
                            if is_window || (t >= loop_start && step_recursive) {
                                e.push(&h, gamma).map_err(|e| stage("estimation", t)(e.to_string()))?;
                            }
                        }
                    }
                }
            }
            if li == 0 && mode != ControlMode::Off {
                let row = if mode == ControlMode::ModelBased {
                    true_v.clone()
                } else {
                    sc.monitored.iter().map(|&i| sample.v[i]).collect()
                };
                push_ring(&mut v_ring, row, avg_n);
            }
            lane.prev = Some(sample);
        }
        if mode != ControlMode::Off {
            push_ring(&mut p_ring, pv_p.clone(), avg_n);
            push_ring(&mut q_ring, pv_q.clone(), avg_n);
        }

        if !(refresh || score_now) {
            warm = Some(state.v);
            continue;
        }
        let truth = true_sensitivities(model, &state).map_err(|e| stage("sensitivities", t)(e.to_string()))?;
        for lane in lanes.iter_mut() {
            for (vi, (label, _)) in variants.iter().enumerate() {
                for (m, &i) in sc.monitored.iter().enumerate() {
                    let Some(e) = &lane.est[vi][m] else { continue };
                    let est = e.estimate().map_err(|e| stage("estimation", t)(e.to_string()))?;
                    if score_now {
                        lane.scores[vi][m].push(&est, &truth, i);
                    }
                    if refresh {
                        let row_truth = truth.row(i);
                        let row_est: Vec<f64> = est.kp.iter().chain(&est.kq).copied().collect();
                        let row_rmse = rmse(&row_truth, &row_est).unwrap_or(f64::NAN);
                        sink.estimate(
                            m,
                            t,
                            lane.seed,
                            label,
                            (est.kp[i], est.dkp[i], est.kq[i], est.dkq[i]),
                            (truth.kp[(i, i)], truth.kq[(i, i)]),
                            row_rmse,
                        )?;
                        lane.latest[vi][m] = Some(est);
                    }
                }
            }
        }

        if refresh && mode != ControlMode::Off {
            let horizon_end = (k + period_samples).min(times.len() - 1);
            let forecast: Vec<f64> = (0..np)
                .map(|j| (k + 1..=horizon_end).map(|kk| sc.mpp.at(kk)[j]).fold(mpp_now[j], f64::max))
                .collect();
            let p_prev = mean_rows(&p_ring);
            let q_prev = mean_rows(&q_ring);
            let inputs: Vec<PlantInputs> = (0..np)
                .map(|j| PlantInputs { p_mpp: forecast[j], p_prev: p_prev[j], q_prev: q_prev[j] })
                .collect();
            let v_avg = mean_rows(&v_ring);
            let omega_for = |bus: usize| {
                cfg.control.omega_nodes.get(&bus.to_string()).copied().or(cfg.control.omega).unwrap_or(n_pv)
            };
            let nodes: Vec<NodeConstraint> = if mode == ControlMode::ModelBased {
                if fixed_truth.is_none() || cfg.control.recompute_true {
                    fixed_truth = Some(truth.clone());
                }
                let tr = fixed_truth.as_ref().unwrap();
                (0..n)
                    .map(|i| NodeConstraint {
                        node: node_ids[i],
                        v_prev: v_avg[i],
                        kp: tr.kp.row(i).iter().copied().collect(),
                        kq: tr.kq.row(i).iter().copied().collect(),
                        dkp: vec![0.0; n],
                        dkq: vec![0.0; n],
                        omega: 0.0,
                    })
                    .collect()
            } else {
                let slot = control_slot.expect("control variant resolved");
                sc.monitored
                    .iter()
                    .enumerate()
                    .map(|(m, &i)| {
                        let est = lanes[0].latest[slot][m].clone().ok_or_else(|| {
                            HarnessError::Stage { stage: "control", t, message: "no coefficient estimate".into() }
                        })?;
                        Ok(NodeConstraint {
                            node: node_ids[i],
                            v_prev: v_avg[m],
                            kp: est.kp,
                            kq: est.kq,
                            dkp: est.dkp,
                            dkq: est.dkq,
                            omega: omega_for(node_ids[i]),
                        })
                    })
                    .collect::<Result<_, HarnessError>>()?
            };
            let vset = VoltageConstraintSet { v_min: cfg.control.v_min, v_max: cfg.control.v_max, nodes };
            let problem = match mode {
                ControlMode::Robust => build_robust(&sc.plants, &inputs, &vset, &dispatch_opts),
                _ => build_nonrobust(&sc.plants, &inputs, &vset, &dispatch_opts),
            }
            .map_err(|e| HarnessError::Config(format!("control at t = {t} s: {e}")))?;
            let d = match solve_dispatch(&problem) {
                Ok(d) => d,
                Err(e) => {
                    let row = match &e {
                        QpError::Infeasible { row, .. } => row.clone(),
                        other => format!("solver: {other}"),
                    };
                    match cfg.control.on_infeasible {
                        InfeasiblePolicy::Abort => {
                            return Err(match e {
                                QpError::Infeasible { row, .. } => HarnessError::Infeasible { t, row },
                                other => stage("control", t)(other.to_string()),
                            })
                        }
                        InfeasiblePolicy::Curtail => {
                            fallback_steps += 1;
                            ControlDecision::curtail_all(np, row)
                        }
                    }
                }
            };
            decisions += 1;
            let status = match &d.status {
                DecisionStatus::Optimal => "optimal".to_string(),
                DecisionStatus::OptimalUnpolished => "optimal-unpolished".to_string(),
                DecisionStatus::Infeasible { .. } => "curtailed-fallback".to_string(),
            };
            let stats = serde_json::json!({
                "t_s": t,
                "status": status,
                "iterations": d.iterations,
                "objective": if d.objective.is_finite() { serde_json::json!(d.objective) } else { serde_json::Value::Null },
                "active": d.active,
                "infeasible_row": match &d.status { DecisionStatus::Infeasible { row } => serde_json::json!(row), _ => serde_json::Value::Null },
            });
            let curtailed = acc.clone().finish().curtailed_kwh;
            sink.decision(t, &d.p, &d.q, &forecast, curtailed, &status, stats)?;
            decision = Some(d);
        }
        warm = Some(state.v);
    }

    let mut estimation = BTreeMap::new();
    for (vi, (label, _)) in variants.iter().enumerate() {
        let per_seed = lanes
            .iter()
            .map(|lane| SeedScores {
                seed: lane.seed,
                nodes: sc
                    .monitored
                    .iter()
                    .enumerate()
                    .filter_map(|(m, &i)| lane.scores[vi][m].scores(cfg).map(|s| (sc.bus_of(i).to_string(), s)))
                    .collect(),
            })
            .collect();
        estimation.insert(label.clone(), VariantReport::from_seeds(per_seed));
    }
    Ok(RunReport {
        mode: mode.label().into(),
        it_class: cfg.measurement.it_class.clone(),
        seeds,
        window_h: cfg.metrics.window_h,
        estimation,
        control: acc.finish(),
        decisions,
        fallback_steps,
    })
}

/// Runs a prepared scenario without writing files.
pub fn simulate(sc: &Scenario) -> Result<RunReport, HarnessError> {
    simulate_into(sc, &mut Sink::disabled())
}

/// Prepares, runs and (when an output directory is configured) persists a
/// scenario with its manifest.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunOutcome, HarnessError> {
    let wall = Instant::now();
    let mut timings = BTreeMap::new();
    let t_setup = Instant::now();
    let sc = Scenario::prepare(cfg)?;
    timings.insert("setup".to_string(), t_setup.elapsed().as_secs_f64());

    let monitored_ids: Vec<usize> = sc.monitored.iter().map(|&i| sc.bus_of(i)).collect();
    let plant_ids: Vec<usize> = cfg.pv.iter().map(|p| p.bus).collect();
    let mut sink = match &cfg.output.dir {
        Some(dir) => Sink::open(
            dir,
            &sc.model.node_ids(),
            &monitored_ids,
            &plant_ids,
            cfg.output.voltage_every_s > 0,
            cfg.control.mode != ControlMode::Off,
        )?,
        None => Sink::disabled(),
    };
    let t_sim = Instant::now();
    let result = simulate_into(&sc, &mut sink);
    timings.insert("simulate".to_string(), t_sim.elapsed().as_secs_f64());
    let report = match result {
        Ok(r) => r,
        Err(e) => {
            // keep the partial logs
            let _ = sink.close();
            return Err(e);
        }
    };
    let t_write = Instant::now();
    sink.write_text("report.json", &report.to_json())?;
    sink.write_text("report.csv", &report.to_csv())?;
    sink.write_text("config.toml", &cfg.to_toml_string())?;
    let (dir, names) = sink.close()?;
    let Some(dir) = dir else {
        return Ok(RunOutcome { report, manifest: None, out_dir: None });
    };
    let files: Vec<FileEntry> = inventory(&dir, &names)?;
    timings.insert("write".to_string(), t_write.elapsed().as_secs_f64());
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        extra_seeds: cfg.extra_seeds.clone(),
        config: cfg.clone(),
        network_sha256: sc.network_sha256.clone(),
        profiles_sha256: sc.profiles_sha256.clone(),
        wall_clock_s: wall.elapsed().as_secs_f64(),
        timings_s: timings,
        files,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(dir.join("manifest.json"), text)?;
    Ok(RunOutcome { report, manifest: Some(manifest), out_dir: Some(dir) })
}

/// Open-loop dataset: the input series plus true and noisy measurements side
/// by side, with the seed in a JSON sidecar.
pub fn generate_dataset(cfg: &ScenarioConfig, dir: &Path) -> Result<Vec<String>, HarnessError> {
    let sc = Scenario::prepare(cfg)?;
    std::fs::create_dir_all(dir)?;
    let model = &sc.model;
    let n = model.n_nodes();
    let it = cfg.it_class()?;
    let ids = model.node_ids();
    let mut names = Vec::new();

    sc.loads.write_csv(std::fs::File::create(dir.join("profiles.csv"))?)?;
    names.push("profiles.csv".to_string());
    if !sc.plants.is_empty() {
        sc.mpp.write_csv(std::fs::File::create(dir.join("mpp.csv"))?)?;
        names.push("mpp.csv".to_string());
    }
    let mut w = std::io::BufWriter::with_capacity(1 << 16, std::fs::File::create(dir.join("dataset.csv"))?);
    write!(w, "t_s")?;
    for quantity in ["v", "p", "q"] {
        for id in &ids {
            write!(w, ",{quantity}_true_{id},{quantity}_meas_{id}")?;
        }
    }
    writeln!(w)?;
    let mut noise = NoiseSource::new(cfg.seed, n).with_phase_noise(cfg.measurement.phase_noise);
    let mut warm: Option<Vec<Complex64>> = None;
    let mut p = vec![0.0; n];
    for k in 0..sc.loads.len() {
        let t = sc.loads.times()[k];
        p.copy_from_slice(sc.loads.p(k));
        for (j, pl) in sc.plants.iter().enumerate() {
            p[pl.node] += sc.mpp.at(k)[j];
        }
        let state = solve_load_flow_from(model, &p, sc.loads.q(k), warm.as_deref(), LoadFlowOptions::default())
            .map_err(|e| stage("load flow", t)(e.to_string()))?;
        let exact = exact_sample(model, &state, t);
        let meas = corrupt_sample(model, &state, &it, &mut noise, t).map_err(|e| stage("measurement", t)(e.to_string()))?;
        write!(w, "{t}")?;
        for (a, b) in [(&exact.v, &meas.v), (&exact.p, &meas.p), (&exact.q, &meas.q)] {
            for i in 0..n {
                write!(w, ",{},{}", a[i], b[i])?;
            }
        }
        writeln!(w)?;
        warm = Some(state.v);
    }
    w.flush()?;
    names.push("dataset.csv".to_string());
    let sidecar = serde_json::json!({
        "seed": cfg.seed,
        "it_class": cfg.measurement.it_class,
        "phase_noise": cfg.measurement.phase_noise,
        "samples": sc.loads.len(),
        "profiles_sha256": sc.profiles_sha256,
        "network_sha256": sc.network_sha256,
    });
    std::fs::write(dir.join("dataset.json"), serde_json::to_string_pretty(&sidecar).expect("json"))?;
    names.push("dataset.json".to_string());
    Ok(names)
}
