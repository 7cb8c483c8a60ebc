use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::{PvConfig, SyntheticConfig};
use super::HarnessError;
use crate::grid::NetworkModel;
use crate::measurement::Profiles;

/// Available PV power per plant, row-major by time step.
#[derive(Debug, Clone, PartialEq)]
pub struct MppSeries {
    buses: Vec<usize>,
    t: Vec<u64>,
    values: Vec<f64>,
}

impl MppSeries {
    pub fn new(buses: Vec<usize>, t: Vec<u64>, values: Vec<f64>) -> Result<Self, HarnessError> {
        if values.len() != buses.len() * t.len() {
            return Err(HarnessError::Config("mpp series has the wrong number of values".into()));
        }
        if values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(HarnessError::Config("mpp values must be finite and >= 0".into()));
        }
        Ok(Self { buses, t, values })
    }

    pub fn buses(&self) -> &[usize] {
        &self.buses
    }

    pub fn times(&self) -> &[u64] {
        &self.t
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn at(&self, k: usize) -> &[f64] {
        let n = self.buses.len();
        &self.values[k * n..(k + 1) * n]
    }

    /// Columns reordered to `buses`.
    pub fn reordered(&self, buses: &[usize]) -> Result<Self, HarnessError> {
        let perm: Vec<usize> = buses
            .iter()
            .map(|b| {
                self.buses
                    .iter()
                    .position(|x| x == b)
                    .ok_or_else(|| HarnessError::Config(format!("mpp series has no column for bus {b}")))
            })
            .collect::<Result<_, _>>()?;
        let mut values = Vec::with_capacity(self.t.len() * buses.len());
        for k in 0..self.len() {
            let row = self.at(k);
            values.extend(perm.iter().map(|&c| row[c]));
        }
        Ok(Self { buses: buses.to_vec(), t: self.t.clone(), values })
    }

    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self, HarnessError> {
        let bad = |m: String| HarnessError::Config(format!("mpp file: {m}"));
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
        if headers.get(0) != Some("t_s") {
            return Err(bad("first column must be t_s".into()));
        }
        let mut buses = Vec::new();
        for h in headers.iter().skip(1) {
            let id = h
                .strip_prefix("mpp_")
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad(format!("unexpected column '{h}'")))?;
            buses.push(id);
        }
        let mut t = Vec::new();
        let mut values = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let parse = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("row {}: {e}", line + 2)));
            t.push(rec.get(0).unwrap_or("").parse::<u64>().map_err(|e| bad(format!("row {}: {e}", line + 2)))?);
            for c in 1..=buses.len() {
                values.push(parse(rec.get(c).unwrap_or(""))?);
            }
        }
        Self::new(buses, t, values)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self, HarnessError> {
        let f = std::fs::File::open(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_csv_reader(std::io::BufReader::new(f))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(w);
        write!(w, "t_s")?;
        for b in &self.buses {
            write!(w, ",mpp_{b}")?;
        }
        writeln!(w)?;
        for k in 0..self.len() {
            write!(w, "{}", self.t[k])?;
            for v in self.at(k) {
                write!(w, ",{v:e}")?;
            }
            writeln!(w)?;
        }
        w.flush()
    }
}

fn bump(h: f64, centre: f64, width: f64) -> f64 {
    let mut d = (h - centre).rem_euclid(24.0);
    if d > 12.0 {
        d -= 24.0;
    }
    (-(d / width).powi(2)).exp()
}

/// Residential demand shape with morning, midday and evening peaks.
pub fn load_shape(hour: f64) -> f64 {
    0.35 + 0.35 * bump(hour, 7.5, 1.2) + 0.2 * bump(hour, 12.5, 2.0) + 0.65 * bump(hour, 19.5, 1.8)
}

/// Clear-sky PV shape, zero outside 06:00-18:00.
pub fn clear_sky(hour: f64) -> f64 {
    let h = hour.rem_euclid(24.0);
    if h <= 6.0 || h >= 18.0 {
        0.0
    } else {
        (PI * (h - 6.0) / 12.0).sin().powf(1.2)
    }
}

struct Ar1 {
    phi: f64,
    sigma: f64,
    x: f64,
}

impl Ar1 {
    fn stationary(phi: f64, std: f64) -> Self {
        Self { phi, sigma: std * (1.0 - phi * phi).sqrt(), x: 0.0 }
    }

    fn step(&mut self, rng: &mut ChaCha8Rng) -> f64 {
        let w: f64 = rng.sample(StandardNormal);
        self.x = self.phi * self.x + self.sigma * w;
        self.x
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Seeded load and MPP series at a fixed sample period.
///
/// Buses with a plant carry no load. Loads follow a daily shape scaled per
/// bus, modulated by AR(1) factors; MPP is a clear-sky curve times a cloud
/// factor mixing a shared and a plant-specific process.
pub fn synthetic_profiles(
    model: &NetworkModel,
    plants: &[PvConfig],
    cfg: &SyntheticConfig,
    period_s: u64,
) -> Result<(Profiles, MppSeries), HarnessError> {
    let ids = model.node_ids();
    let n = ids.len();
    let steps = (cfg.days as u64 * 86_400 / period_s) as usize;
    let t: Vec<u64> = (0..steps as u64).map(|k| k * period_s).collect();
    let dt = period_s as f64;
    // per-second persistence, rescaled to the sample period
    let phi = |per_second: f64| per_second.powf(dt);

    let mut setup = stream(cfg.seed, 0);
    let is_pv: Vec<bool> = ids.iter().map(|id| plants.iter().any(|p| p.bus == *id)).collect();
    let scale: Vec<f64> = (0..n)
        .map(|i| if is_pv[i] { 0.0 } else { setup.gen_range(cfg.load_min..=cfg.load_max) })
        .collect();
    let shift: Vec<f64> = (0..n).map(|_| setup.gen_range(-0.5..=0.5)).collect();
    let tan_phi = (1.0 - cfg.load_pf * cfg.load_pf).sqrt() / cfg.load_pf;

    let mut p = vec![0.0; steps * n];
    let mut q = vec![0.0; steps * n];
    for i in 0..n {
        if scale[i] == 0.0 {
            continue;
        }
        let mut rng = stream(cfg.seed, 1 + i as u64);
        let mut fp = Ar1::stationary(phi(0.9), cfg.load_fluctuation / (1.0 - 0.81f64).sqrt());
        let mut fq = Ar1::stationary(phi(0.9), cfg.load_q_fluctuation / (1.0 - 0.81f64).sqrt());
        for k in 0..steps {
            let hour = t[k] as f64 / 3600.0 + shift[i];
            let a = fp.step(&mut rng);
            let b = fq.step(&mut rng);
            let pk = scale[i] * load_shape(hour) * (1.0 + a).max(0.1);
            p[k * n + i] = -pk;
            q[k * n + i] = -pk * tan_phi * (1.0 + b).max(0.0);
        }
    }
    let loads = Profiles::new(ids.clone(), t.clone(), p, q).map_err(HarnessError::from)?;

    let np = plants.len();
    let mut values = vec![0.0; steps * np];
    let mut common_rng = stream(cfg.seed, 1000);
    let mut common = Ar1::stationary(phi(0.995), 1.0);
    let mut local: Vec<(ChaCha8Rng, Ar1)> =
        (0..np).map(|j| (stream(cfg.seed, 1001 + j as u64), Ar1::stationary(phi(0.9), 1.0))).collect();
    for k in 0..steps {
        let hour = t[k] as f64 / 3600.0;
        let c = common.step(&mut common_rng);
        for (j, pl) in plants.iter().enumerate() {
            let (rng, ar) = &mut local[j];
            let l = ar.step(rng);
            let cloud = (1.0 - cfg.cloud_common * c.abs() - cfg.cloud_local * l.abs()).clamp(0.05, 1.0);
            values[k * np + j] = cfg.pv_peak * pl.s_max * clear_sky(hour) * cloud;
        }
    }
    let mpp = MppSeries::new(plants.iter().map(|p| p.bus).collect(), t, values)?;
    Ok((loads, mpp))
}
