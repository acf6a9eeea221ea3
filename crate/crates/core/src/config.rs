//! Run configuration and its key-value file format.
//!
//! ```text
//! # comment
//! input = points.jsonl
//! bins = 400          # alias: m
//! ref_count = 3       # alias: R; or `ref_all = true`
//! window = 10         # alias: W
//! lookback = 1        # alias: Q
//! rho = 0.05
//! ```

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{PipelineParams, ReferenceWindow, ThresholdMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub dims: usize,
    pub threads: Option<usize>,
    pub seed: u64,
    pub write_grids: bool,
    #[serde(flatten)]
    pub params: PipelineParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: None,
            out_dir: PathBuf::from("out"),
            dims: 2,
            threads: None,
            seed: 0,
            write_grids: true,
            params: PipelineParams::default(),
        }
    }
}

/// Splits a key-value document into `(line, key, value)` triples.
pub fn parse_pairs(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {line_no}: expected `key = value`"))
        })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Config(format!("line {line_no}: empty key")));
        }
        out.push((line_no, key.to_string(), value.trim().to_string()));
    }
    Ok(out)
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

impl RunConfig {
    /// Parses a config document on top of the defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (line, key, value) in parse_pairs(text)? {
            self.set(&key, &value)
                .map_err(|e| Error::Config(format!("line {line}: {e}")))?;
        }
        Ok(())
    }

    /// Sets one option by name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let p = &mut self.params;
        match key {
            "input" => self.input = Some(PathBuf::from(value)),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "dims" | "n" => self.dims = parse_value(key, value)?,
            "threads" => self.threads = Some(parse_value(key, value)?),
            "seed" => self.seed = parse_value(key, value)?,
            "write_grids" => self.write_grids = parse_bool(key, value)?,
            "bins" | "m" => p.bins = parse_value(key, value)?,
            "ref_count" | "R" => p.reference = ReferenceWindow::Count(parse_value(key, value)?),
            "ref_all" => {
                if parse_bool(key, value)? {
                    p.reference = ReferenceWindow::All;
                }
            }
            "window" | "W" => p.window = parse_value(key, value)?,
            "lookback" | "Q" => p.lookback = parse_value(key, value)?,
            "rho" => p.rho = parse_value(key, value)?,
            "min_sigma" => p.min_sigma = parse_value(key, value)?,
            "max_sigma" => p.max_sigma = parse_value(key, value)?,
            "num_sigma" => p.num_sigma = parse_value(key, value)?,
            "truncate" => p.truncate = parse_value(key, value)?,
            "overlap" => p.overlap = parse_value(key, value)?,
            "threshold" => {
                p.threshold = match value {
                    "stack" => ThresholdMode::Stack,
                    "slice" => ThresholdMode::Slice,
                    "corpus" => ThresholdMode::Corpus,
                    _ => return Err(Error::Config(format!("threshold: unknown scope {value:?}"))),
                }
            }
            "link_dist" | "d" => p.link_dist = Some(parse_value(key, value)?),
            "min_appearances" => p.min_appearances = parse_value(key, value)?,
            "min_points" => p.min_points = parse_value(key, value)?,
            "periods" => {
                p.targets = Some(
                    value
                        .split(',')
                        .map(|s| parse_value(key, s.trim()))
                        .collect::<Result<_>>()?,
                )
            }
            "dedup" => p.dedup = parse_bool(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims == 0 {
            return Err(Error::Config("dims must be positive".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be positive".into()));
        }
        self.params.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_published_settings() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.params.bins, 400);
        assert_eq!(cfg.params.rho, 0.05);
        assert_eq!(cfg.params.window, 10);
        assert_eq!(cfg.params.lookback, 1);
    }

    #[test]
    fn parses_keys_and_aliases() {
        let cfg = RunConfig::from_text(
            "# rediscovery preset\nW = 30\nQ = 20  # long gaps\nref_all = true\nrho=0.2\nperiods = 3, 5\n",
        )
        .unwrap();
        assert_eq!(cfg.params.window, 30);
        assert_eq!(cfg.params.lookback, 20);
        assert_eq!(cfg.params.reference, ReferenceWindow::All);
        assert_eq!(cfg.params.rho, 0.2);
        assert_eq!(cfg.params.targets, Some(vec![3, 5]));
    }

    #[test]
    fn reports_bad_lines() {
        let err = RunConfig::from_text("bins = 10\nnonsense\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(RunConfig::from_text("bins = ten").is_err());
        assert!(RunConfig::from_text("colour = red").is_err());
        assert!(RunConfig::from_text("rho = 2").unwrap().validate().is_err());
    }
}
