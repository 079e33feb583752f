use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Parse(format!("unknown split {other:?}"))),
        }
    }
}

/// One logged observation of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub run_id: String,
    pub mode: String,
    pub seed: u64,
    pub step: usize,
    pub split: Split,
    pub task_loss: f64,
    pub error_rate: f64,
    pub wall_clock_s: f64,
}

/// One point of an exported loss-surface slice `l_phi(y_fixed, f)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotRow {
    pub run_id: String,
    pub seed: u64,
    pub step: usize,
    pub y_fixed: f64,
    pub f: f64,
    pub loss: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    /// Seconds since the run started.
    #[default]
    Wall,
    /// A fixed increment per reading; makes output files reproducible byte for byte.
    Logical,
}

/// Strictly increasing per-run timestamps.
#[derive(Debug)]
pub struct RunClock {
    mode: ClockMode,
    start: Instant,
    last: f64,
    ticks: u64,
}

pub const LOGICAL_TICK_S: f64 = 1e-3;

impl RunClock {
    pub fn start(mode: ClockMode) -> Self {
        RunClock {
            mode,
            start: Instant::now(),
            last: f64::NEG_INFINITY,
            ticks: 0,
        }
    }

    pub fn now(&mut self) -> f64 {
        self.ticks += 1;
        let t = match self.mode {
            ClockMode::Logical => self.ticks as f64 * LOGICAL_TICK_S,
            ClockMode::Wall => {
                let t = self.start.elapsed().as_secs_f64();
                if t > self.last {
                    t
                } else {
                    self.last + 1e-9
                }
            }
        };
        self.last = t;
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clocks_increase() {
        for mode in [ClockMode::Wall, ClockMode::Logical] {
            let mut c = RunClock::start(mode);
            let mut prev = c.now();
            for _ in 0..1000 {
                let t = c.now();
                assert!(t > prev);
                prev = t;
            }
        }
    }

    #[test]
    fn split_names_round_trip() {
        for s in [Split::Train, Split::Valid, Split::Test] {
            assert_eq!(s.as_str().parse::<Split>().unwrap(), s);
        }
        assert!("dev".parse::<Split>().is_err());
    }
}
