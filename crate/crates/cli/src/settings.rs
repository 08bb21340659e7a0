//! Failure classes, config-file/flag merging and seeding.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;

use anyhow::anyhow;

use annokn_core::pipeline::parse_key_values;
use annokn_core::Error;

use crate::output::Inputs;
use crate::Tuning;

/// Exit code 2 for bad input or configuration, 1 for anything that fails
/// after the inputs were accepted.
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

pub type CmdResult<T> = Result<T, Failure>;

pub fn usage(msg: impl Display) -> Failure {
    Failure::Usage(anyhow!("{msg}"))
}

pub trait Classify<T> {
    /// Every error is a usage error (loading and validating inputs).
    fn usage(self, context: &str) -> CmdResult<T>;
    /// Input-shaped errors map to usage, the rest to runtime.
    fn classify(self) -> CmdResult<T>;
}

impl<T> Classify<T> for annokn_core::Result<T> {
    fn usage(self, context: &str) -> CmdResult<T> {
        self.map_err(|e| Failure::Usage(anyhow::Error::new(e).context(context.to_string())))
    }

    fn classify(self) -> CmdResult<T> {
        self.map_err(|e| {
            if e.is_input_error() {
                Failure::Usage(e.into())
            } else {
                Failure::Runtime(e.into())
            }
        })
    }
}

impl<T> Classify<T> for std::io::Result<T> {
    fn usage(self, context: &str) -> CmdResult<T> {
        self.map_err(|e| Failure::Usage(anyhow::Error::new(e).context(context.to_string())))
    }

    fn classify(self) -> CmdResult<T> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

/// Resolved key = value settings: config file first, then flags on top.
#[derive(Debug, Default)]
pub struct Settings {
    pub map: BTreeMap<String, String>,
    pub seed: u64,
    pub seed_generated: bool,
}

impl Settings {
    pub fn load(config: Option<&Path>, inputs: &mut Inputs) -> CmdResult<BTreeMap<String, String>> {
        let Some(path) = config else {
            return Ok(BTreeMap::new());
        };
        let bytes = inputs.read(path)?;
        let text = String::from_utf8(bytes).map_err(|_| usage(format!("{} is not UTF-8 text", path.display())))?;
        parse_key_values(&text).usage(&format!("reading {}", path.display()))
    }

    pub fn new(mut map: BTreeMap<String, String>, tuning: &Tuning, flags: &[(&str, Option<String>)]) -> CmdResult<Self> {
        let common = [
            ("seed", tuning.seed.map(|v| v.to_string())),
            ("d", tuning.d.map(|v| v.to_string())),
            ("tau2", tuning.tau2.map(|v| v.to_string())),
            ("lambda0_grid", tuning.lambda0_grid.clone()),
        ];
        for (k, v) in common.iter().chain(flags) {
            if let Some(v) = v {
                map.insert(k.to_string(), v.clone());
            }
        }
        let (seed, seed_generated) = match map.get("seed") {
            Some(v) => (v.parse().map_err(|_| usage(format!("invalid value '{v}' for key 'seed'")))?, false),
            None => {
                let s: u64 = rand::random();
                println!("generated seed: {s}");
                map.insert("seed".into(), s.to_string());
                (s, true)
            }
        };
        Ok(Self {
            map,
            seed,
            seed_generated,
        })
    }

    pub fn get<T: std::str::FromStr>(&self, key: &str) -> CmdResult<Option<T>> {
        self.map
            .get(key)
            .map(|v| v.parse().map_err(|_| usage(format!("invalid value '{v}' for key '{key}'"))))
            .transpose()
    }
}

/// Pins the worker pool size. Must run before any parallel work.
pub fn init_threads(threads: Option<usize>) -> CmdResult<usize> {
    if threads == Some(0) {
        return Err(usage("--threads must be at least 1"));
    }
    #[cfg(feature = "parallel")]
    {
        if let Some(k) = threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build_global()
                .map_err(|e| Failure::Runtime(e.into()))?;
        }
        Ok(rayon::current_num_threads())
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        Ok(1)
    }
}

pub fn dims(what: &str, left: usize, right: usize) -> Failure {
    Failure::Usage(Error::DimensionMismatch {
        what: what.into(),
        left,
        right,
    }
    .into())
}
