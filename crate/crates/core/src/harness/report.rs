use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::output::RunManifest;
use super::HarnessError;
use crate::metrics::ControlReport;

/// Interval metrics of one monitored node. The plain fields score the
/// self-coefficient `K^P_ii`; the `_row` fields score the whole row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeScores {
    pub points: usize,
    pub rmse: f64,
    pub picp: f64,
    pub pinaw: f64,
    pub cwc: f64,
    pub rmse_row: f64,
    pub picp_row: f64,
}

impl NodeScores {
    pub fn mean<'a>(items: impl IntoIterator<Item = &'a NodeScores>) -> Option<NodeScores> {
        let items: Vec<&NodeScores> = items.into_iter().collect();
        if items.is_empty() {
            return None;
        }
        let k = items.len() as f64;
        let avg = |f: fn(&NodeScores) -> f64| items.iter().map(|s| f(s)).sum::<f64>() / k;
        Some(NodeScores {
            points: items.iter().map(|s| s.points).sum(),
            rmse: avg(|s| s.rmse),
            picp: avg(|s| s.picp),
            pinaw: avg(|s| s.pinaw),
            cwc: avg(|s| s.cwc),
            rmse_row: avg(|s| s.rmse_row),
            picp_row: avg(|s| s.picp_row),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedScores {
    pub seed: u64,
    pub nodes: BTreeMap<String, NodeScores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub per_seed: Vec<SeedScores>,
    /// Seed averages per bus.
    pub nodes: BTreeMap<String, NodeScores>,
    /// Average over seeds and buses.
    pub mean: Option<NodeScores>,
}

impl VariantReport {
    pub fn from_seeds(per_seed: Vec<SeedScores>) -> Self {
        let mut buses: Vec<&String> = per_seed.iter().flat_map(|s| s.nodes.keys()).collect();
        buses.sort();
        buses.dedup();
        let nodes: BTreeMap<String, NodeScores> = buses
            .into_iter()
            .filter_map(|b| NodeScores::mean(per_seed.iter().filter_map(|s| s.nodes.get(b))).map(|m| (b.clone(), m)))
            .collect();
        let mean = NodeScores::mean(per_seed.iter().flat_map(|s| s.nodes.values()));
        Self { per_seed, nodes, mean }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: String,
    pub it_class: String,
    pub seeds: Vec<u64>,
    pub window_h: [f64; 2],
    pub estimation: BTreeMap<String, VariantReport>,
    /// Voltage and energy statistics from the start of the second stage.
    pub control: ControlReport,
    pub decisions: usize,
    pub fallback_steps: usize,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Flat form: one line per variant, seed and bus.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,it_class,mode,seed,bus,points,rmse,picp,pinaw,cwc,rmse_row,picp_row\n");
        for (variant, rep) in &self.estimation {
            for seed in &rep.per_seed {
                for (bus, n) in &seed.nodes {
                    let _ = writeln!(
                        s,
                        "{variant},{},{},{},{bus},{},{},{},{},{},{},{}",
                        self.it_class, self.mode, seed.seed, n.points, n.rmse, n.picp, n.pinaw, n.cwc, n.rmse_row, n.picp_row
                    );
                }
            }
        }
        s
    }

    pub fn read(dir: &Path) -> Result<Self, HarnessError> {
        let path = dir.join("report.json");
        let text = std::fs::read_to_string(&path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub run: String,
    pub mode: String,
    pub it_class: String,
    pub variant: String,
    pub scores: Option<NodeScores>,
    pub max_voltage: f64,
    pub violation_steps: u64,
    pub curtailed_kwh: f64,
    pub node_max_v: BTreeMap<String, f64>,
    /// Per-bus max-voltage difference against the first run.
    pub node_max_v_delta: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    /// `metric` (rmse, picp, pinaw, cwc) laid out as variant × IT class.
    pub fn grid(&self, metric: &str) -> (Vec<String>, Vec<String>, Vec<Vec<Option<f64>>>) {
        let mut variants: Vec<String> = self.rows.iter().map(|r| r.variant.clone()).collect();
        let mut classes: Vec<String> = self.rows.iter().map(|r| r.it_class.clone()).collect();
        variants.sort();
        variants.dedup();
        classes.sort();
        classes.dedup();
        let pick = |s: &NodeScores| match metric {
            "picp" => s.picp,
            "pinaw" => s.pinaw,
            "cwc" => s.cwc,
            _ => s.rmse,
        };
        let cells = variants
            .iter()
            .map(|v| {
                classes
                    .iter()
                    .map(|c| {
                        self.rows
                            .iter()
                            .find(|r| &r.variant == v && &r.it_class == c)
                            .and_then(|r| r.scores.as_ref().map(pick))
                    })
                    .collect()
            })
            .collect();
        (variants, classes, cells)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "run,mode,it_class,variant,rmse,picp,pinaw,cwc,max_v,violations,curtailed_kwh,max_v_delta");
        for r in &self.rows {
            let sc = r.scores.as_ref();
            let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
            let delta = r.node_max_v_delta.values().fold(None, |m: Option<f64>, d| Some(m.map_or(*d, |m| m.max(*d))));
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{:.6},{},{:.3},{}",
                r.run,
                r.mode,
                r.it_class,
                r.variant,
                f(sc.map(|x| x.rmse)),
                f(sc.map(|x| x.picp)),
                f(sc.map(|x| x.pinaw)),
                f(sc.map(|x| x.cwc)),
                r.max_voltage,
                r.violation_steps,
                r.curtailed_kwh,
                f(delta)
            );
        }
        s
    }
}

/// Aligns the reports of several runs of the same network and profiles.
pub fn compare_runs(dirs: &[PathBuf]) -> Result<Comparison, HarnessError> {
    let mut loaded = Vec::new();
    for d in dirs {
        let manifest = RunManifest::read(d)?;
        manifest.verify(d)?;
        loaded.push((d, manifest, RunReport::read(d)?));
    }
    if let Some((d0, m0, _)) = loaded.first() {
        let mut diffs = Vec::new();
        for (d, m, _) in &loaded[1..] {
            if m.network_sha256 != m0.network_sha256 {
                diffs.push(format!("{}: network differs from {}", d.display(), d0.display()));
            }
            if m.profiles_sha256 != m0.profiles_sha256 {
                diffs.push(format!("{}: profiles differ from {}", d.display(), d0.display()));
            }
        }
        if !diffs.is_empty() {
            return Err(HarnessError::Config(format!("runs are not comparable: {}", diffs.join("; "))));
        }
    }
    let base: BTreeMap<String, f64> = loaded
        .first()
        .map(|(_, _, r)| r.control.nodes.iter().map(|n| (n.node.to_string(), n.v_max)).collect())
        .unwrap_or_default();
    let mut rows = Vec::new();
    for (d, _, rep) in &loaded {
        let node_max_v: BTreeMap<String, f64> = rep.control.nodes.iter().map(|n| (n.node.to_string(), n.v_max)).collect();
        let node_max_v_delta: BTreeMap<String, f64> =
            node_max_v.iter().filter_map(|(k, v)| base.get(k).map(|b| (k.clone(), v - b))).collect();
        let run = d.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| d.display().to_string());
        let variants: Vec<(&String, &VariantReport)> = rep.estimation.iter().collect();
        let base_row = |variant: String, scores: Option<NodeScores>| ComparisonRow {
            run: run.clone(),
            mode: rep.mode.clone(),
            it_class: rep.it_class.clone(),
            variant,
            scores,
            max_voltage: rep.control.max_voltage,
            violation_steps: rep.control.violation_steps,
            curtailed_kwh: rep.control.curtailed_kwh,
            node_max_v: node_max_v.clone(),
            node_max_v_delta: node_max_v_delta.clone(),
        };
        if variants.is_empty() {
            rows.push(base_row("-".into(), None));
        }
        for (v, vr) in variants {
            rows.push(base_row(v.clone(), vr.mean.clone()));
        }
    }
    Ok(Comparison { rows })
}
