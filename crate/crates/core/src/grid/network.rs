use std::collections::VecDeque;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::GridError;

/// A bus as listed in `buses.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub is_slack: bool,
}

/// A series branch with a pi-model shunt, all values in per-unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub r_pu: f64,
    pub x_pu: f64,
    #[serde(default)]
    pub b_pu: f64,
}

impl Branch {
    pub fn series_admittance(&self) -> Complex64 {
        Complex64::new(1.0, 0.0) / Complex64::new(self.r_pu, self.x_pu)
    }
}

/// Bus/branch description of a feeder with its dense admittance matrix.
///
/// Buses keep the order of the input file. Internally the non-slack buses are
/// addressed by their position among non-slack buses ("load index"), which is
/// the indexing used by every per-node vector in the crate.
#[derive(Debug, Clone)]
pub struct NetworkModel {
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    pub base_va: f64,
    pub base_v: f64,
    pub slack_vm: f64,
    slack: usize,
    non_slack: Vec<usize>,
    y: DMatrix<Complex64>,
}

impl NetworkModel {
    pub fn new(
        buses: Vec<Bus>,
        branches: Vec<Branch>,
        base_va: f64,
        base_v: f64,
        slack_vm: f64,
    ) -> Result<Self, GridError> {
        if !(base_va > 0.0 && base_v > 0.0) {
            return Err(GridError::Model("base power and base voltage must be positive".into()));
        }
        if !(slack_vm > 0.0 && slack_vm.is_finite()) {
            return Err(GridError::Model(format!("invalid slack voltage {slack_vm}")));
        }
        let slacks: Vec<usize> =
            buses.iter().enumerate().filter(|(_, b)| b.is_slack).map(|(i, _)| i).collect();
        if slacks.len() != 1 {
            return Err(GridError::Model(format!(
                "expected exactly one slack bus, found {}",
                slacks.len()
            )));
        }
        let slack = slacks[0];
        let y = build_admittance(&buses, &branches)?;
        let non_slack = (0..buses.len()).filter(|&i| i != slack).collect();
        Ok(Self { buses, branches, base_va, base_v, slack_vm, slack, non_slack, y })
    }

    /// Reads `buses.csv` and `branches.csv` from the given paths.
    pub fn from_csv(
        buses: impl AsRef<Path>,
        branches: impl AsRef<Path>,
        base_va: f64,
        base_v: f64,
        slack_vm: f64,
    ) -> Result<Self, GridError> {
        let b = std::fs::read_to_string(buses.as_ref())
            .map_err(|e| GridError::Io(format!("{}: {e}", buses.as_ref().display())))?;
        let br = std::fs::read_to_string(branches.as_ref())
            .map_err(|e| GridError::Io(format!("{}: {e}", branches.as_ref().display())))?;
        Self::from_csv_str(&b, &br, base_va, base_v, slack_vm)
    }

    pub fn from_csv_str(
        buses_csv: &str,
        branches_csv: &str,
        base_va: f64,
        base_v: f64,
        slack_vm: f64,
    ) -> Result<Self, GridError> {
        let (buses, branches) = parse_network_csv(buses_csv, branches_csv)?;
        Self::new(buses, branches, base_va, base_v, slack_vm)
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn admittance(&self) -> &DMatrix<Complex64> {
        &self.y
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    /// Number of non-slack buses.
    pub fn n_nodes(&self) -> usize {
        self.non_slack.len()
    }

    /// Position of the slack bus in the bus list.
    pub fn slack_position(&self) -> usize {
        self.slack
    }

    /// Bus-list positions of the non-slack buses, in load-index order.
    pub fn non_slack_positions(&self) -> &[usize] {
        &self.non_slack
    }

    /// Bus ids of the non-slack buses, in load-index order.
    pub fn node_ids(&self) -> Vec<usize> {
        self.non_slack.iter().map(|&p| self.buses[p].id).collect()
    }

    /// Load index of a non-slack bus id.
    pub fn node_index(&self, bus_id: usize) -> Option<usize> {
        self.non_slack.iter().position(|&p| self.buses[p].id == bus_id)
    }

    pub fn position_of(&self, bus_id: usize) -> Option<usize> {
        self.buses.iter().position(|b| b.id == bus_id)
    }

    pub fn slack_voltage(&self) -> Complex64 {
        Complex64::new(self.slack_vm, 0.0)
    }
}

#[derive(Debug, Deserialize)]
struct BusRecord {
    id: usize,
    is_slack: String,
}

fn parse_flag(s: &str) -> Result<bool, GridError> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Ok(true),
        "0" | "false" | "no" => Ok(false),
        other => Err(GridError::Parse(format!("invalid is_slack value '{other}'"))),
    }
}

pub(crate) fn parse_network_csv(
    buses_csv: &str,
    branches_csv: &str,
) -> Result<(Vec<Bus>, Vec<Branch>), GridError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(buses_csv.as_bytes());
    let mut buses = Vec::new();
    for (line, rec) in rdr.deserialize::<BusRecord>().enumerate() {
        let rec = rec.map_err(|e| GridError::Parse(format!("buses.csv row {}: {e}", line + 2)))?;
        buses.push(Bus { id: rec.id, is_slack: parse_flag(&rec.is_slack)? });
    }
    let mut rdr =
        csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(branches_csv.as_bytes());
    let mut branches = Vec::new();
    for (line, rec) in rdr.deserialize::<Branch>().enumerate() {
        let rec =
            rec.map_err(|e| GridError::Parse(format!("branches.csv row {}: {e}", line + 2)))?;
        branches.push(rec);
    }
    // branch endpoints in the files are bus ids; translate to positions
    let mut translated = Vec::with_capacity(branches.len());
    for br in branches {
        let from = buses
            .iter()
            .position(|b| b.id == br.from)
            .ok_or_else(|| GridError::Model(format!("branch references unknown bus {}", br.from)))?;
        let to = buses
            .iter()
            .position(|b| b.id == br.to)
            .ok_or_else(|| GridError::Model(format!("branch references unknown bus {}", br.to)))?;
        translated.push(Branch { from, to, ..br });
    }
    Ok((buses, translated))
}

/// Assembles the bus admittance matrix.
///
/// Branch endpoints are bus-list positions. Parallel branches add up.
pub fn build_admittance(buses: &[Bus], branches: &[Branch]) -> Result<DMatrix<Complex64>, GridError> {
    let n = buses.len();
    if n == 0 {
        return Err(GridError::Model("network has no buses".into()));
    }
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    let mut adjacency = vec![Vec::new(); n];
    for (k, br) in branches.iter().enumerate() {
        if br.from >= n || br.to >= n {
            return Err(GridError::Model(format!("branch {k} endpoint out of range")));
        }
        if br.from == br.to {
            return Err(GridError::Model(format!("branch {k} is a self-loop")));
        }
        let valid = br.r_pu.is_finite() && br.x_pu.is_finite() && br.b_pu.is_finite();
        if !valid || br.r_pu < 0.0 || (br.r_pu == 0.0 && br.x_pu == 0.0) {
            return Err(GridError::Model(format!(
                "branch {k} has invalid impedance r={} x={}",
                br.r_pu, br.x_pu
            )));
        }
        let ys = br.series_admittance();
        let half_shunt = Complex64::new(0.0, br.b_pu / 2.0);
        y[(br.from, br.from)] += ys + half_shunt;
        y[(br.to, br.to)] += ys + half_shunt;
        y[(br.from, br.to)] -= ys;
        y[(br.to, br.from)] -= ys;
        adjacency[br.from].push(br.to);
        adjacency[br.to].push(br.from);
    }

    let root = buses.iter().position(|b| b.is_slack).unwrap_or(0);
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([root]);
    seen[root] = true;
    while let Some(u) = queue.pop_front() {
        for &v in &adjacency[u] {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    if let Some(orphan) = seen.iter().position(|s| !s) {
        return Err(GridError::Model(format!(
            "disconnected network: bus {} is unreachable from the slack",
            buses[orphan].id
        )));
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn single_lossless_branch() {
        let buses = vec![Bus { id: 1, is_slack: true }, Bus { id: 2, is_slack: false }];
        let branches = vec![Branch { from: 0, to: 1, r_pu: 0.0, x_pu: 0.1, b_pu: 0.0 }];
        let y = build_admittance(&buses, &branches).unwrap();
        let expected = [[c(0.0, -10.0), c(0.0, 10.0)], [c(0.0, 10.0), c(0.0, -10.0)]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((y[(i, j)] - expected[i][j]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_branch_list_is_disconnected() {
        let buses = vec![Bus { id: 1, is_slack: true }, Bus { id: 2, is_slack: false }];
        let err = build_admittance(&buses, &[]).unwrap_err();
        assert!(err.to_string().contains("disconnected"), "{err}");
    }

    #[test]
    fn parallel_branches_add() {
        let buses = vec![Bus { id: 1, is_slack: true }, Bus { id: 2, is_slack: false }];
        let br = Branch { from: 0, to: 1, r_pu: 0.1, x_pu: 0.2, b_pu: 0.0 };
        let single = build_admittance(&buses, &[br]).unwrap();
        let double = build_admittance(&buses, &[br, br]).unwrap();
        assert!((double[(0, 1)] - single[(0, 1)] * 2.0).norm() < 1e-12);
    }

    #[test]
    fn zero_impedance_rejected() {
        let buses = vec![Bus { id: 1, is_slack: true }, Bus { id: 2, is_slack: false }];
        let br = Branch { from: 0, to: 1, r_pu: 0.0, x_pu: 0.0, b_pu: 0.0 };
        assert!(build_admittance(&buses, &[br]).is_err());
        let br = Branch { from: 0, to: 1, r_pu: -0.1, x_pu: 0.1, b_pu: 0.0 };
        assert!(build_admittance(&buses, &[br]).is_err());
    }

    #[test]
    fn two_slacks_rejected() {
        let buses = vec![Bus { id: 1, is_slack: true }, Bus { id: 2, is_slack: true }];
        let br = Branch { from: 0, to: 1, r_pu: 0.1, x_pu: 0.1, b_pu: 0.0 };
        assert!(NetworkModel::new(buses, vec![br], 1e5, 400.0, 1.0).is_err());
    }

    #[test]
    fn csv_ids_map_to_positions() {
        let buses = "id,is_slack\n10,1\n20,0\n30,0\n";
        let branches = "from,to,r_pu,x_pu,b_pu\n10,20,0.1,0.1,0\n20,30,0.1,0.2,0.0\n";
        let net = NetworkModel::from_csv_str(buses, branches, 1e5, 400.0, 1.0).unwrap();
        assert_eq!(net.node_ids(), vec![20, 30]);
        assert_eq!(net.branches()[1].from, 1);
        assert_eq!(net.node_index(30), Some(1));
        assert_eq!(net.node_index(10), None);
    }
}
