//! Flat `key = value` experiment configuration with strict key validation.
//!
//! The format is intentionally line-oriented and diffable: one `key = value`
//! pair per line, `#` comments, blank lines ignored. Unknown keys are
//! rejected so that typos fail fast instead of silently running defaults.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

/// Resolved run settings after merging defaults, config file, and flags
/// (flags win over the file, the file wins over defaults).
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub threads: usize,
    pub metrics: Vec<String>,
    pub n_outer: usize,
    pub n_prior: usize,
    pub n_posterior: usize,
    pub replicates: usize,
    pub eps: f64,
    pub sample_sizes: Vec<usize>,
    pub k_list: Vec<usize>,
    pub thresholds: Vec<f64>,
    pub ba_samples: usize,
    pub icnn_outer: usize,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            seed: 0,
            out_dir: PathBuf::from("."),
            threads: 1,
            metrics: Vec::new(),
            n_outer: 200,
            n_prior: 500,
            n_posterior: 500,
            replicates: 100,
            eps: 0.01,
            sample_sizes: vec![200, 1000, 5000],
            k_list: vec![2, 4, 6, 8],
            thresholds: vec![0.5, 0.8, 0.9],
            ba_samples: 4000,
            icnn_outer: 50,
        }
    }
}

const KNOWN_KEYS: &[&str] = &[
    "seed",
    "out",
    "threads",
    "metrics",
    "n_outer",
    "n_prior",
    "n_posterior",
    "replicates",
    "eps",
    "sample_sizes",
    "k",
    "thresholds",
    "ba_samples",
    "icnn_outer",
];

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|_| format!("bad value for `{key}`: {s}")))
        .collect()
}

/// Parse a config file body into a key map, rejecting unknown keys and
/// malformed lines.
pub fn parse_config(body: &str) -> Result<BTreeMap<String, String>, String> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in body.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected `key = value`, got `{line}`", lineno + 1))?;
        let key = key.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(format!("line {}: unknown key `{key}`", lineno + 1));
        }
        if map.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(format!("line {}: duplicate key `{key}`", lineno + 1));
        }
    }
    Ok(map)
}

impl RunSettings {
    /// Apply parsed config-file values on top of the defaults.
    pub fn apply(&mut self, map: &BTreeMap<String, String>) -> Result<(), String> {
        for (key, value) in map {
            match key.as_str() {
                "seed" => self.seed = value.parse().map_err(|_| bad(key, value))?,
                "out" => self.out_dir = PathBuf::from(value),
                "threads" => self.threads = value.parse().map_err(|_| bad(key, value))?,
                "metrics" => self.metrics = parse_list(key, value)?,
                "n_outer" => self.n_outer = value.parse().map_err(|_| bad(key, value))?,
                "n_prior" => self.n_prior = value.parse().map_err(|_| bad(key, value))?,
                "n_posterior" => self.n_posterior = value.parse().map_err(|_| bad(key, value))?,
                "replicates" => self.replicates = value.parse().map_err(|_| bad(key, value))?,
                "eps" => self.eps = value.parse().map_err(|_| bad(key, value))?,
                "sample_sizes" => self.sample_sizes = parse_list(key, value)?,
                "k" => self.k_list = parse_list(key, value)?,
                "thresholds" => self.thresholds = parse_list(key, value)?,
                "ba_samples" => self.ba_samples = value.parse().map_err(|_| bad(key, value))?,
                "icnn_outer" => self.icnn_outer = value.parse().map_err(|_| bad(key, value))?,
                _ => unreachable!("parse_config validated the key set"),
            }
        }
        if self.threads == 0 {
            return Err("threads must be >= 1".into());
        }
        if self.n_outer == 0 || self.n_prior == 0 || self.n_posterior == 0 {
            return Err("Monte Carlo budgets must be >= 1".into());
        }
        Ok(())
    }

    /// The flat key = value echo written into every manifest.
    pub fn manifest_echo(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "out = {}", self.out_dir.display());
        let _ = writeln!(s, "threads = {}", self.threads);
        let _ = writeln!(s, "metrics = {}", self.metrics.join(","));
        let _ = writeln!(s, "n_outer = {}", self.n_outer);
        let _ = writeln!(s, "n_prior = {}", self.n_prior);
        let _ = writeln!(s, "n_posterior = {}", self.n_posterior);
        let _ = writeln!(s, "replicates = {}", self.replicates);
        let _ = writeln!(s, "eps = {}", self.eps);
        let _ = writeln!(
            s,
            "sample_sizes = {}",
            self.sample_sizes.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
        );
        let _ = writeln!(
            s,
            "k = {}",
            self.k_list.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
        );
        let _ = writeln!(
            s,
            "thresholds = {}",
            self.thresholds.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
        );
        let _ = writeln!(s, "ba_samples = {}", self.ba_samples);
        let _ = writeln!(s, "icnn_outer = {}", self.icnn_outer);
        s
    }
}

fn bad(key: &str, value: &str) -> String {
    format!("bad value for `{key}`: {value}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_lists() {
        let map = parse_config("# header\nseed = 7\nk = 2, 4,6\n\nmetrics = w1,kl\n").unwrap();
        let mut s = RunSettings::default();
        s.apply(&map).unwrap();
        assert_eq!(s.seed, 7);
        assert_eq!(s.k_list, vec![2, 4, 6]);
        assert_eq!(s.metrics, vec!["w1", "kl"]);
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        assert!(parse_config("sede = 7\n").is_err());
        assert!(parse_config("seed = 7\nseed = 8\n").is_err());
        assert!(parse_config("just a line\n").is_err());
    }

    #[test]
    fn rejects_bad_values() {
        let mut s = RunSettings::default();
        s.apply(&parse_config("seed = seven\n").unwrap()).unwrap_err();
        s.apply(&parse_config("threads = 0\n").unwrap()).unwrap_err();
    }
}
