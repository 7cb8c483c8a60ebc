use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{HarnessError, ScenarioConfig};

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, HarnessError> {
    let mut f = File::open(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Provenance record written next to the outputs of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub seed: u64,
    pub extra_seeds: Vec<u64>,
    pub config: ScenarioConfig,
    pub network_sha256: String,
    pub profiles_sha256: String,
    pub wall_clock_s: f64,
    pub timings_s: BTreeMap<String, f64>,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    pub fn read(dir: &Path) -> Result<Self, HarnessError> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))
    }

    /// Recomputes every listed checksum.
    pub fn verify(&self, dir: &Path) -> Result<(), HarnessError> {
        for f in &self.files {
            let actual = sha256_file(&dir.join(&f.name))?;
            if actual != f.sha256 {
                return Err(HarnessError::Io(format!("checksum mismatch for {}", f.name)));
            }
        }
        Ok(())
    }
}

/// Streaming writers for the per-run CSV logs. Without a directory every
/// call is a no-op.
pub(crate) struct Sink {
    dir: Option<PathBuf>,
    voltages: Option<BufWriter<File>>,
    estimates: Vec<BufWriter<File>>,
    decisions: Option<BufWriter<File>>,
    stats: Vec<serde_json::Value>,
    names: Vec<String>,
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, HarnessError> {
    let path = dir.join(name);
    let f = File::create(&path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    Ok(BufWriter::with_capacity(1 << 16, f))
}

impl Sink {
    pub fn disabled() -> Self {
        Self { dir: None, voltages: None, estimates: Vec::new(), decisions: None, stats: Vec::new(), names: Vec::new() }
    }

    pub fn open(
        dir: &Path,
        node_ids: &[usize],
        monitored_ids: &[usize],
        plant_ids: &[usize],
        voltages: bool,
        control: bool,
    ) -> Result<Self, HarnessError> {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io(format!("{}: {e}", dir.display())))?;
        let mut sink = Self::disabled();
        sink.dir = Some(dir.to_path_buf());
        if voltages {
            let mut w = create(dir, "voltages.csv")?;
            write!(w, "t_s")?;
            for id in node_ids {
                write!(w, ",v_{id}")?;
            }
            writeln!(w)?;
            sink.voltages = Some(w);
            sink.names.push("voltages.csv".into());
        }
        for id in monitored_ids {
            let name = format!("estimates_{id}.csv");
            let mut w = create(dir, &name)?;
            writeln!(w, "t_s,seed,variant,kp_self,dkp_self,kq_self,dkq_self,true_kp_self,true_kq_self,row_rmse")?;
            sink.estimates.push(w);
            sink.names.push(name);
        }
        if control {
            let mut w = create(dir, "decisions.csv")?;
            write!(w, "t_s")?;
            for id in plant_ids {
                write!(w, ",p_set_{id},q_set_{id},p_mpp_{id}")?;
            }
            writeln!(w, ",curtailed_kwh,status")?;
            sink.decisions = Some(w);
            sink.names.push("decisions.csv".into());
        }
        Ok(sink)
    }

    pub fn voltages(&mut self, t: u64, v: &[f64]) -> Result<(), HarnessError> {
        if let Some(w) = &mut self.voltages {
            write!(w, "{t}")?;
            for x in v {
                write!(w, ",{x}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    pub fn estimate(
        &mut self,
        slot: usize,
        t: u64,
        seed: u64,
        variant: &str,
        est: (f64, f64, f64, f64),
        truth: (f64, f64),
        row_rmse: f64,
    ) -> Result<(), HarnessError> {
        if let Some(w) = self.estimates.get_mut(slot) {
            writeln!(
                w,
                "{t},{seed},{variant},{},{},{},{},{},{},{row_rmse}",
                est.0, est.1, est.2, est.3, truth.0, truth.1
            )?;
        }
        Ok(())
    }

    pub fn decision(
        &mut self,
        t: u64,
        p: &[f64],
        q: &[f64],
        mpp: &[f64],
        curtailed_kwh: f64,
        status: &str,
        stats: serde_json::Value,
    ) -> Result<(), HarnessError> {
        if let Some(w) = &mut self.decisions {
            write!(w, "{t}")?;
            for j in 0..p.len() {
                write!(w, ",{},{},{}", p[j], q[j], mpp[j])?;
            }
            writeln!(w, ",{curtailed_kwh},{status}")?;
            self.stats.push(stats);
        }
        Ok(())
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<(), HarnessError> {
        if let Some(dir) = &self.dir {
            let mut w = create(dir, name)?;
            w.write_all(text.as_bytes())?;
            w.flush()?;
            self.names.push(name.into());
        }
        Ok(())
    }

    /// Flushes everything and returns the emitted file names, solver stats
    /// included.
    pub fn close(mut self) -> Result<(Option<PathBuf>, Vec<String>), HarnessError> {
        if let Some(w) = &mut self.voltages {
            w.flush()?;
        }
        for w in &mut self.estimates {
            w.flush()?;
        }
        if let Some(w) = &mut self.decisions {
            w.flush()?;
        }
        if self.decisions.is_some() {
            let stats = std::mem::take(&mut self.stats);
            let text = serde_json::to_string_pretty(&stats).expect("stats serialize");
            self.write_text("solver_stats.json", &text)?;
        }
        Ok((self.dir.clone(), std::mem::take(&mut self.names)))
    }
}

/// Checksums of emitted files, in emission order.
pub(crate) fn inventory(dir: &Path, names: &[String]) -> Result<Vec<FileEntry>, HarnessError> {
    names
        .iter()
        .map(|name| {
            let path = dir.join(name);
            let bytes = std::fs::metadata(&path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?.len();
            Ok(FileEntry { name: name.clone(), sha256: sha256_file(&path)?, bytes })
        })
        .collect()
}
