use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use crate::set::StructureKind;
use crate::Error;

/// Operation mix as percentages of updates, contains and range queries,
/// written `U-C-RQ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Mix {
    pub updates: u8,
    pub contains: u8,
    pub rqs: u8,
}

impl Mix {
    pub fn new(updates: u8, contains: u8, rqs: u8) -> Result<Self, Error> {
        let total = updates as u32 + contains as u32 + rqs as u32;
        if total != 100 {
            return Err(Error::InvalidConfig(format!(
                "mix {updates}-{contains}-{rqs} sums to {total}, not 100"
            )));
        }
        Ok(Mix { updates, contains, rqs })
    }

    /// The mixes of the standard experiment grid.
    pub fn grid() -> [Mix; 4] {
        [
            Mix { updates: 2, contains: 88, rqs: 10 },
            Mix { updates: 10, contains: 80, rqs: 10 },
            Mix { updates: 50, contains: 40, rqs: 10 },
            Mix { updates: 90, contains: 0, rqs: 10 },
        ]
    }
}

impl fmt::Display for Mix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}-{}", self.updates, self.contains, self.rqs)
    }
}

impl FromStr for Mix {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let bad = || Error::InvalidConfig(format!("mix {s:?} is not of the form U-C-RQ"));
        let parts: Vec<&str> = s.split('-').collect();
        let [u, c, r] = parts.as_slice() else { return Err(bad()) };
        let p = |x: &str| x.trim().parse::<u8>().map_err(|_| bad());
        Mix::new(p(u)?, p(c)?, p(r)?)
    }
}

/// How long each worker runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunLength {
    Timed(Duration),
    /// A fixed operation count per worker, for reproducible runs.
    OpsPerThread(u64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkloadConfig {
    pub ds: StructureKind,
    pub threads: usize,
    pub length: RunLength,
    pub mix: Mix,
    /// Keys are drawn uniformly from `0..key_range`.
    pub key_range: u64,
    pub rq_size: u64,
    pub seed: u64,
    /// Range queries advance the clock instead of updates.
    pub rq_advance: bool,
    /// Log every operation and check the logs after the run.
    pub validate: bool,
    /// Replace range queries with unsynchronized traversals.
    pub unsafe_rq: bool,
    /// Background cleanup period; `None` disables the cleaner.
    pub cleanup_interval: Option<Duration>,
    pub epoch_advance_threshold: usize,
}

impl WorkloadConfig {
    /// Default key range for a structure at full scale.
    pub fn default_key_range(ds: StructureKind) -> u64 {
        match ds {
            StructureKind::List => 10_000,
            StructureKind::SkipList | StructureKind::Bst => 1_000_000,
        }
    }

    pub fn new(ds: StructureKind) -> Self {
        WorkloadConfig {
            ds,
            threads: 1,
            length: RunLength::Timed(Duration::from_secs(3)),
            mix: Mix::grid()[1],
            key_range: Self::default_key_range(ds),
            rq_size: 50,
            seed: 1,
            rq_advance: false,
            validate: false,
            unsafe_rq: false,
            cleanup_interval: Some(Duration::from_millis(10)),
            epoch_advance_threshold: 64,
        }
    }

    pub fn check(&self) -> Result<(), Error> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        Mix::new(self.mix.updates, self.mix.contains, self.mix.rqs)?;
        if self.threads == 0 {
            return bad("at least one thread is required".into());
        }
        if self.threads > 1024 {
            return bad(format!("{} threads is more than the supported 1024", self.threads));
        }
        if self.rq_size == 0 {
            return bad("range size must be positive".into());
        }
        if self.key_range < 2 || self.key_range < 2 * self.rq_size {
            return bad(format!(
                "key range {} must be at least 2 and at least twice the range size {}",
                self.key_range, self.rq_size
            ));
        }
        if self.key_range > i64::MAX as u64 / 2 {
            return bad(format!("key range {} is too large", self.key_range));
        }
        match self.length {
            RunLength::Timed(d) if d.is_zero() => bad("duration must be positive".into()),
            RunLength::OpsPerThread(0) => bad("operation count must be positive".into()),
            _ => Ok(()),
        }
    }

    pub fn workload(&self) -> String {
        self.mix.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mix_parses_and_prints() {
        let m: Mix = "50-40-10".parse().unwrap();
        assert_eq!(m, Mix { updates: 50, contains: 40, rqs: 10 });
        assert_eq!(m.to_string(), "50-40-10");
        assert!("50-40-9".parse::<Mix>().is_err());
        assert!("50-50".parse::<Mix>().is_err());
        assert!("a-b-c".parse::<Mix>().is_err());
    }

    #[test]
    fn config_checks() {
        let mut c = WorkloadConfig::new(StructureKind::List);
        c.check().unwrap();
        c.key_range = 99;
        assert!(c.check().is_err());
        c.key_range = 100;
        c.check().unwrap();
        c.threads = 0;
        assert!(c.check().is_err());
    }
}
