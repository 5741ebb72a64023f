//! Persistent critical-value cache stored as an append-only CSV ledger.
//!
//! Each row records one simulated critical value together with every setting
//! that determines it. Floats are written in Rust's shortest round-trip form,
//! so a value read back is bit-identical to the value that was stored.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use snoopband::bands::{kernel_fingerprint, CritVal};
use snoopband::critval::Sides;
use snoopband::kernels::KernelSpec;
use thiserror::Error;

pub const LEDGER_HEADER: &str = "fingerprint,order,sides,alpha,ratio,reps,grid_per_log,seed,critval,mc_se";

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cache {path}, line {line}: {msg}")]
    Corrupt { path: String, line: usize, msg: String },
}

/// Everything that determines a simulated critical value.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheKey {
    pub fingerprint: String,
    pub order: usize,
    pub sides: Sides,
    pub alpha: f64,
    pub ratio: f64,
    pub reps: usize,
    pub grid_per_log: usize,
    pub seed: u64,
}

impl CacheKey {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kstar: &KernelSpec,
        order: usize,
        sides: Sides,
        alpha: f64,
        ratio: f64,
        reps: usize,
        grid_per_log: usize,
        seed: u64,
    ) -> Self {
        CacheKey { fingerprint: fingerprint(kstar), order, sides, alpha, ratio, reps, grid_per_log, seed }
    }

    fn matches(&self, other: &CacheKey) -> bool {
        self.fingerprint == other.fingerprint
            && self.order == other.order
            && self.sides == other.sides
            && self.alpha.to_bits() == other.alpha.to_bits()
            && self.ratio.to_bits() == other.ratio.to_bits()
            && self.reps == other.reps
            && self.grid_per_log == other.grid_per_log
            && self.seed == other.seed
    }
}

/// SHA-256 of the kernel's support and piecewise-polynomial coefficients.
pub fn fingerprint(k: &KernelSpec) -> String {
    let digest = Sha256::digest(kernel_fingerprint(k).as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug)]
pub struct CritValLedger {
    path: PathBuf,
    entries: Vec<(CacheKey, CritVal)>,
    pub hits: usize,
    pub misses: usize,
}

impl CritValLedger {
    /// Loads the ledger at `path`; a missing file is an empty ledger.
    pub fn open(path: &Path) -> Result<Self, CacheError> {
        let io = |source| CacheError::Io { path: path.display().to_string(), source };
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(io(e)),
        };
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line == LEDGER_HEADER {
                continue;
            }
            let corrupt =
                |msg: &str| CacheError::Corrupt { path: path.display().to_string(), line: i + 1, msg: msg.to_string() };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 10 {
                return Err(corrupt("expected 10 fields"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| corrupt("bad number"));
            let int = |s: &str| s.parse::<u64>().map_err(|_| corrupt("bad integer"));
            let key = CacheKey {
                fingerprint: f[0].to_string(),
                order: int(f[1])? as usize,
                sides: f[2].parse().map_err(|_| corrupt("bad sides"))?,
                alpha: num(f[3])?,
                ratio: num(f[4])?,
                reps: int(f[5])? as usize,
                grid_per_log: int(f[6])? as usize,
                seed: int(f[7])?,
            };
            let value = CritVal { value: num(f[8])?, mc_se: num(f[9])? };
            entries.push((key, value));
        }
        Ok(CritValLedger { path: path.to_path_buf(), entries, hits: 0, misses: 0 })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lookup(&self, key: &CacheKey) -> Option<CritVal> {
        self.entries.iter().find(|(k, _)| k.matches(key)).map(|(_, v)| *v)
    }

    /// Returns the cached value for `key` or computes, appends and returns it.
    pub fn get_or_insert_with<E>(
        &mut self,
        key: CacheKey,
        compute: impl FnOnce() -> Result<CritVal, E>,
    ) -> Result<CritVal, E>
    where
        E: From<CacheError>,
    {
        if let Some(v) = self.lookup(&key) {
            self.hits += 1;
            return Ok(v);
        }
        self.misses += 1;
        let v = compute()?;
        self.append(&key, v)?;
        self.entries.push((key, v));
        Ok(v)
    }

    fn append(&self, key: &CacheKey, v: CritVal) -> Result<(), CacheError> {
        let io = |source| CacheError::Io { path: self.path.display().to_string(), source };
        let fresh = std::fs::metadata(&self.path).map_or(true, |m| m.len() == 0);
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path).map_err(io)?;
        if fresh {
            writeln!(f, "{LEDGER_HEADER}").map_err(io)?;
        }
        writeln!(
            f,
            "{},{},{},{:?},{:?},{},{},{},{:?},{:?}",
            key.fingerprint,
            key.order,
            key.sides,
            key.alpha,
            key.ratio,
            key.reps,
            key.grid_per_log,
            key.seed,
            v.value,
            v.mc_se
        )
        .map_err(io)
    }
}
