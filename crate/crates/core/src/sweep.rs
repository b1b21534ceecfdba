//! Parameter sweeps over a base scenario.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::routing::Protocol;
use crate::scenario::ScenarioConfig;
use crate::sim::{run_scenario, RunResult, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    PauseTime,
    SpeedMax,
    FlowCount,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::PauseTime => "pause_time_s",
            SweepParam::SpeedMax => "speed_max",
            SweepParam::FlowCount => "flow_count",
        }
    }

    fn apply(self, cfg: &mut ScenarioConfig, value: f64) {
        match self {
            SweepParam::PauseTime => cfg.pause_time_s = value,
            SweepParam::SpeedMax => {
                cfg.speed_max = value;
                cfg.speed_min = cfg.speed_min.min(value);
            }
            SweepParam::FlowCount => cfg.flow_count = value.round() as u32,
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pause_time_s" | "pause" => Ok(SweepParam::PauseTime),
            "speed_max" | "speed" => Ok(SweepParam::SpeedMax),
            "flow_count" | "flows" => Ok(SweepParam::FlowCount),
            _ => Err(format!(
                "unknown sweep parameter `{s}` (expected pause_time_s, speed_max or flow_count)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
    pub protocols: Vec<Protocol>,
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("sweep needs at least one value")]
    NoValues,
    #[error("sweep needs at least one seed")]
    NoSeeds,
    #[error("sweep needs at least one protocol")]
    NoProtocols,
    #[error("{param} = {value}, seed {seed}, {protocol}: {source}")]
    Run {
        param: SweepParam,
        value: f64,
        seed: u64,
        protocol: Protocol,
        source: SimError,
    },
}

/// One finished cell of a sweep.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: f64,
    pub result: RunResult,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), SweepError> {
        if self.values.is_empty() {
            return Err(SweepError::NoValues);
        }
        if self.seeds.is_empty() {
            return Err(SweepError::NoSeeds);
        }
        if self.protocols.is_empty() {
            return Err(SweepError::NoProtocols);
        }
        Ok(())
    }

    /// Number of cells in the Cartesian product.
    pub fn cells(&self) -> usize {
        self.values.len() * self.seeds.len() * self.protocols.len()
    }
}

fn protocol_rank(spec: &SweepSpec, p: Protocol) -> usize {
    spec.protocols.iter().position(|q| *q == p).unwrap_or(usize::MAX)
}

/// Runs every (protocol, value, seed) cell in parallel and returns the rows
/// sorted by protocol order, value, then seed.
pub fn sweep(spec: &SweepSpec, base: &ScenarioConfig) -> Result<Vec<SweepRow>, SweepError> {
    spec.validate()?;
    let mut cells = Vec::with_capacity(spec.cells());
    for &protocol in &spec.protocols {
        for &value in &spec.values {
            for &seed in &spec.seeds {
                cells.push((protocol, value, seed));
            }
        }
    }
    let mut rows = cells
        .into_par_iter()
        .map(|(protocol, value, seed)| {
            let mut cfg = base.clone();
            cfg.protocol = protocol;
            cfg.seed = seed;
            spec.param.apply(&mut cfg, value);
            run_scenario(&cfg, false)
                .map(|result| SweepRow { value, result })
                .map_err(|source| SweepError::Run {
                    param: spec.param,
                    value,
                    seed,
                    protocol,
                    source,
                })
        })
        .collect::<Result<Vec<_>, _>>()?;
    rows.sort_by(|a, b| {
        protocol_rank(spec, a.result.protocol)
            .cmp(&protocol_rank(spec, b.result.protocol))
            .then(a.value.total_cmp(&b.value))
            .then(a.result.seed.cmp(&b.result.seed))
    });
    Ok(rows)
}

/// Sweep rows as CSV, with the swept parameter's value in the first column.
pub fn to_csv(spec: &SweepSpec, rows: &[SweepRow]) -> String {
    let mut out = format!("{},{}\n", spec.param, crate::sim::CSV_HEADER);
    for r in rows {
        out.push_str(&format!("{},{}\n", r.value, r.result.csv_row()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ScenarioConfig {
        ScenarioConfig::parse(
            "node_count = 8\narea_x = 300\narea_y = 300\nsim_duration_s = 6\nflow_count = 2\nflow_start_jitter_s = 1\n",
        )
        .unwrap()
    }

    #[test]
    fn empty_seed_list_is_rejected() {
        let spec = SweepSpec {
            param: SweepParam::PauseTime,
            values: vec![0.0],
            seeds: vec![],
            protocols: vec![Protocol::Srvnp],
        };
        assert!(matches!(sweep(&spec, &tiny()), Err(SweepError::NoSeeds)));
    }

    #[test]
    fn cell_count_and_order() {
        let spec = SweepSpec {
            param: SweepParam::PauseTime,
            values: vec![5.0, 0.0],
            seeds: vec![3, 1],
            protocols: vec![Protocol::Srvnp, Protocol::AodvBaseline],
        };
        let rows = sweep(&spec, &tiny()).unwrap();
        assert_eq!(rows.len(), 8);
        let keys: Vec<(Protocol, f64, u64)> = rows
            .iter()
            .map(|r| (r.result.protocol, r.value, r.result.seed))
            .collect();
        assert_eq!(keys[0], (Protocol::Srvnp, 0.0, 1));
        assert_eq!(keys[1], (Protocol::Srvnp, 0.0, 3));
        assert_eq!(keys[2], (Protocol::Srvnp, 5.0, 1));
        assert_eq!(keys[4], (Protocol::AodvBaseline, 0.0, 1));
        assert_eq!(to_csv(&spec, &rows).lines().count(), 9);
    }

    #[test]
    fn parameter_names_parse() {
        assert_eq!("pause_time_s".parse::<SweepParam>(), Ok(SweepParam::PauseTime));
        assert!("pause_time".parse::<SweepParam>().is_err());
    }
}
