use super::HarnessError;
use crate::grid::NetworkModel;

const FEEDER4: (&str, &str) =
    (include_str!("../../data/feeder4/buses.csv"), include_str!("../../data/feeder4/branches.csv"));
const FEEDER18: (&str, &str) =
    (include_str!("../../data/feeder18/buses.csv"), include_str!("../../data/feeder18/branches.csv"));

pub const BUNDLED_FEEDERS: [&str; 2] = ["feeder4", "feeder18"];

/// `buses.csv` and `branches.csv` contents of a bundled feeder.
pub fn bundled_csv(name: &str) -> Result<(&'static str, &'static str), HarnessError> {
    match name {
        "feeder4" => Ok(FEEDER4),
        "feeder18" => Ok(FEEDER18),
        other => Err(HarnessError::Config(format!(
            "network.feeder: unknown bundled feeder '{other}' (feeder4, feeder18)"
        ))),
    }
}

pub fn bundled_network(
    name: &str,
    base_va: f64,
    base_v: f64,
    slack_vm: f64,
) -> Result<NetworkModel, HarnessError> {
    let (b, br) = bundled_csv(name)?;
    Ok(NetworkModel::from_csv_str(b, br, base_va, base_v, slack_vm)?)
}
