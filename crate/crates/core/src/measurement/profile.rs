use std::io::{Read, Write};

use super::MeasurementError;
use crate::grid::NetworkModel;

/// Per-node injection time series (per-unit, generation positive).
///
/// Values are stored row-major: step `k` occupies `k*n .. (k+1)*n` in load
/// index order of the network they were aligned to.
#[derive(Debug, Clone, PartialEq)]
pub struct Profiles {
    node_ids: Vec<usize>,
    t: Vec<u64>,
    p: Vec<f64>,
    q: Vec<f64>,
}

impl Profiles {
    pub fn new(
        node_ids: Vec<usize>,
        t: Vec<u64>,
        p: Vec<f64>,
        q: Vec<f64>,
    ) -> Result<Self, MeasurementError> {
        let n = node_ids.len();
        if p.len() != t.len() * n || q.len() != t.len() * n {
            return Err(MeasurementError::Profile(format!(
                "profile has {} steps x {} nodes but {} P and {} Q values",
                t.len(),
                n,
                p.len(),
                q.len()
            )));
        }
        if t.windows(2).any(|w| w[1] <= w[0]) {
            return Err(MeasurementError::Profile("timestamps must be strictly increasing".into()));
        }
        if p.iter().chain(&q).any(|x| !x.is_finite()) {
            return Err(MeasurementError::Profile("non-finite injection".into()));
        }
        Ok(Self { node_ids, t, p, q })
    }

    /// Constant injections repeated for `steps` one-second samples.
    pub fn constant(node_ids: Vec<usize>, p: &[f64], q: &[f64], steps: usize) -> Self {
        let t = (0..steps as u64).collect();
        let p = p.iter().copied().cycle().take(p.len() * steps).collect();
        let q = q.iter().copied().cycle().take(q.len() * steps).collect();
        Self { node_ids, t, p, q }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn n_nodes(&self) -> usize {
        self.node_ids.len()
    }

    pub fn node_ids(&self) -> &[usize] {
        &self.node_ids
    }

    pub fn times(&self) -> &[u64] {
        &self.t
    }

    pub fn p(&self, k: usize) -> &[f64] {
        let n = self.n_nodes();
        &self.p[k * n..(k + 1) * n]
    }

    pub fn q(&self, k: usize) -> &[f64] {
        let n = self.n_nodes();
        &self.q[k * n..(k + 1) * n]
    }

    /// Reorders columns to the load-index order of `model`; every non-slack
    /// bus must be present exactly once.
    pub fn aligned_to(&self, model: &NetworkModel) -> Result<Self, MeasurementError> {
        let ids = model.node_ids();
        if ids.len() != self.node_ids.len() {
            return Err(MeasurementError::Profile(format!(
                "profile covers {} buses, network has {} non-slack buses",
                self.node_ids.len(),
                ids.len()
            )));
        }
        let mut perm = Vec::with_capacity(ids.len());
        for id in &ids {
            let col = self.node_ids.iter().position(|x| x == id).ok_or_else(|| {
                MeasurementError::Profile(format!("profile has no column for bus {id}"))
            })?;
            perm.push(col);
        }
        let n = ids.len();
        let mut p = Vec::with_capacity(self.p.len());
        let mut q = Vec::with_capacity(self.q.len());
        for k in 0..self.len() {
            let (pr, qr) = (self.p(k), self.q(k));
            p.extend(perm.iter().map(|&c| pr[c]));
            q.extend(perm.iter().map(|&c| qr[c]));
        }
        debug_assert_eq!(p.len(), self.len() * n);
        Ok(Self { node_ids: ids, t: self.t.clone(), p, q })
    }

    /// Parses `t_s,p_<bus>...,q_<bus>...` CSV.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self, MeasurementError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| MeasurementError::Profile(e.to_string()))?.clone();
        if headers.get(0) != Some("t_s") {
            return Err(MeasurementError::Profile("first column must be t_s".into()));
        }
        let mut p_cols = Vec::new();
        let mut q_cols = Vec::new();
        for (c, h) in headers.iter().enumerate().skip(1) {
            let (kind, id) = h
                .split_once('_')
                .ok_or_else(|| MeasurementError::Profile(format!("bad column name '{h}'")))?;
            let id: usize =
                id.parse().map_err(|_| MeasurementError::Profile(format!("bad bus id in '{h}'")))?;
            match kind {
                "p" => p_cols.push((id, c)),
                "q" => q_cols.push((id, c)),
                _ => return Err(MeasurementError::Profile(format!("bad column name '{h}'"))),
            }
        }
        let node_ids: Vec<usize> = p_cols.iter().map(|(id, _)| *id).collect();
        let q_index: Vec<usize> = node_ids
            .iter()
            .map(|id| {
                q_cols.iter().find(|(q, _)| q == id).map(|(_, c)| *c).ok_or_else(|| {
                    MeasurementError::Profile(format!("missing q_{id} column"))
                })
            })
            .collect::<Result<_, _>>()?;
        if q_cols.len() != node_ids.len() {
            return Err(MeasurementError::Profile("q columns without matching p columns".into()));
        }
        let (mut t, mut p, mut q) = (Vec::new(), Vec::new(), Vec::new());
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| MeasurementError::Profile(format!("row {}: {e}", row + 2)))?;
            let num = |c: usize| -> Result<f64, MeasurementError> {
                rec.get(c).and_then(|s| s.parse::<f64>().ok()).ok_or_else(|| {
                    MeasurementError::Profile(format!("row {} column {}: not a number", row + 2, c + 1))
                })
            };
            let ts = rec
                .get(0)
                .and_then(|s| s.parse::<u64>().ok())
                .ok_or_else(|| MeasurementError::Profile(format!("row {}: bad t_s", row + 2)))?;
            t.push(ts);
            for &(_, c) in &p_cols {
                p.push(num(c)?);
            }
            for &c in &q_index {
                q.push(num(c)?);
            }
        }
        Self::new(node_ids, t, p, q)
    }

    pub fn from_csv_path(path: &std::path::Path) -> Result<Self, MeasurementError> {
        let f = std::fs::File::open(path)
            .map_err(|e| MeasurementError::Profile(format!("{}: {e}", path.display())))?;
        Self::from_csv_reader(std::io::BufReader::new(f))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(w);
        write!(w, "t_s")?;
        for id in &self.node_ids {
            write!(w, ",p_{id}")?;
        }
        for id in &self.node_ids {
            write!(w, ",q_{id}")?;
        }
        writeln!(w)?;
        for k in 0..self.len() {
            write!(w, "{}", self.t[k])?;
            for x in self.p(k).iter().chain(self.q(k)) {
                write!(w, ",{x:e}")?;
            }
            writeln!(w)?;
        }
        w.flush()
    }
}
