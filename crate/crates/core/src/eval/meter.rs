use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Work counters. They only ever grow.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostMeter {
    env_steps: u64,
    collision_checks: u64,
    successes: u64,
}

impl CostMeter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn collision_checks(&self) -> u64 {
        self.collision_checks
    }

    pub fn successes(&self) -> u64 {
        self.successes
    }

    pub fn add_env_steps(&mut self, n: u64) {
        self.env_steps += n;
    }

    pub fn add_collision_checks(&mut self, n: u64) {
        self.collision_checks += n;
    }

    pub fn add_successes(&mut self, n: u64) {
        self.successes += n;
    }

    /// Adds another meter's counts.
    pub fn absorb(&mut self, other: &CostMeter) {
        self.env_steps += other.env_steps;
        self.collision_checks += other.collision_checks;
        self.successes += other.successes;
    }

    /// Environment steps plus collision checks; each method spends only
    /// one of the two kinds.
    pub fn total_cost(&self) -> u64 {
        self.env_steps + self.collision_checks
    }

    pub fn log_cost_per_success(&self) -> LogCost {
        LogCost::per_success(self.total_cost(), self.successes)
    }
}

/// `log10(cost / successes)`, or the infinity marker when nothing
/// succeeded. Serializes as a number or the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LogCost {
    Finite(f64),
    Infinite,
}

impl LogCost {
    pub fn per_success(total_cost: u64, successes: u64) -> Self {
        if successes == 0 {
            LogCost::Infinite
        } else {
            LogCost::Finite((total_cost as f64 / successes as f64).log10())
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            LogCost::Finite(v) => Some(*v),
            LogCost::Infinite => None,
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, LogCost::Infinite)
    }
}

/// Tables print the marker as `-`.
impl fmt::Display for LogCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LogCost::Finite(v) => write!(f, "{v:.3}"),
            LogCost::Infinite => f.write_str("-"),
        }
    }
}

impl Serialize for LogCost {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            LogCost::Finite(v) => s.serialize_f64(*v),
            LogCost::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for LogCost {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(LogCost::Finite(v)),
            Raw::Text(t) if t == "inf" => Ok(LogCost::Infinite),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("expected a number or \"inf\", got {t:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_cost_arithmetic() {
        assert!((LogCost::per_success(20_000, 1).value().unwrap() - 20_000f64.log10()).abs() < 1e-12);
        let one = LogCost::per_success(20_000, 1).value().unwrap();
        let two = LogCost::per_success(20_000, 2).value().unwrap();
        assert!((one - two - 2f64.log10()).abs() < 1e-12);
        assert!(LogCost::per_success(5, 0).is_infinite());
        assert_eq!(LogCost::Infinite.to_string(), "-");
    }

    #[test]
    fn serde_marker() {
        assert_eq!(serde_json::to_string(&LogCost::Infinite).unwrap(), "\"inf\"");
        let back: LogCost = serde_json::from_str("4.5").unwrap();
        assert_eq!(back, LogCost::Finite(4.5));
        let inf: LogCost = serde_json::from_str("\"inf\"").unwrap();
        assert!(inf.is_infinite());
    }

    #[test]
    fn meters_merge() {
        let mut a = CostMeter::new();
        a.add_env_steps(3);
        let mut b = CostMeter::new();
        b.add_collision_checks(4);
        b.add_successes(1);
        a.absorb(&b);
        assert_eq!((a.env_steps(), a.collision_checks(), a.successes(), a.total_cost()), (3, 4, 1, 7));
    }
}
