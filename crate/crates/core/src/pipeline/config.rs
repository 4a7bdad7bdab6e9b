//! Flat `key = value` configuration with `#` comments.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::cluster::Ridge;
use crate::distance::Metric;
use crate::error::invalid;
use crate::{Error, Result};

pub const KEYS: [&str; 18] = [
    "knn_k",
    "q",
    "kmeans_k_min",
    "kmeans_k_max",
    "distance_metric",
    "sinkhorn_epsilon",
    "sinkhorn_tol",
    "sinkhorn_max_iter",
    "gw_outer_iter",
    "gw_epsilon",
    "tsne_perplexity",
    "tsne_iters",
    "ridge",
    "seed",
    "preprocess_grid",
    "data_dir",
    "out_dir",
    "title",
];

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub knn_k: usize,
    pub q: usize,
    pub kmeans_k_min: usize,
    pub kmeans_k_max: usize,
    pub distance_metric: Metric,
    pub sinkhorn_epsilon: f64,
    pub sinkhorn_tol: f64,
    pub sinkhorn_max_iter: usize,
    pub gw_outer_iter: usize,
    pub gw_epsilon: f64,
    pub tsne_perplexity: f64,
    pub tsne_iters: usize,
    pub ridge: Ridge,
    pub seed: u64,
    /// Sum-pool attribution maps onto `(rows, cols)` before comparing them.
    pub preprocess_grid: Option<(usize, usize)>,
    pub data_dir: PathBuf,
    pub out_dir: Option<PathBuf>,
    pub title: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            knn_k: 10,
            q: 32,
            kmeans_k_min: 2,
            kmeans_k_max: 30,
            distance_metric: Metric::Euclidean,
            sinkhorn_epsilon: 1e-2,
            sinkhorn_tol: 1e-7,
            sinkhorn_max_iter: 10_000,
            gw_outer_iter: 50,
            gw_epsilon: 1e-3,
            tsne_perplexity: 30.0,
            tsne_iters: 1000,
            ridge: Ridge::Auto,
            seed: 0,
            preprocess_grid: None,
            data_dir: PathBuf::from("."),
            out_dir: None,
            title: String::new(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &'static str, value: &str) -> Result<T> {
    value.parse().map_err(|_| invalid(key, format!("cannot parse `{value}`")))
}

fn static_key(key: &str) -> Option<&'static str> {
    KEYS.iter().copied().find(|k| *k == key)
}

impl PipelineConfig {
    /// Parses configuration text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("config line {}: expected `key = value`", lineno + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Sets one key from its textual value. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let Some(k) = static_key(key) else {
            return Err(Error::Format(format!("unknown config key `{key}`")));
        };
        match k {
            "knn_k" => self.knn_k = parse_num(k, value)?,
            "q" => self.q = parse_num(k, value)?,
            "kmeans_k_min" => self.kmeans_k_min = parse_num(k, value)?,
            "kmeans_k_max" => self.kmeans_k_max = parse_num(k, value)?,
            "distance_metric" => self.distance_metric = value.parse()?,
            "sinkhorn_epsilon" => self.sinkhorn_epsilon = parse_num(k, value)?,
            "sinkhorn_tol" => self.sinkhorn_tol = parse_num(k, value)?,
            "sinkhorn_max_iter" => self.sinkhorn_max_iter = parse_num(k, value)?,
            "gw_outer_iter" => self.gw_outer_iter = parse_num(k, value)?,
            "gw_epsilon" => self.gw_epsilon = parse_num(k, value)?,
            "tsne_perplexity" => self.tsne_perplexity = parse_num(k, value)?,
            "tsne_iters" => self.tsne_iters = parse_num(k, value)?,
            "ridge" => self.ridge = value.parse()?,
            "seed" => self.seed = parse_num(k, value)?,
            "preprocess_grid" => {
                self.preprocess_grid = match value {
                    "" | "off" | "none" => None,
                    v => {
                        let (a, b) = v
                            .split_once(',')
                            .ok_or_else(|| invalid("preprocess_grid", "expected `rows,cols` or `off`"))?;
                        Some((parse_num(k, a.trim())?, parse_num(k, b.trim())?))
                    }
                }
            }
            "data_dir" => self.data_dir = PathBuf::from(value),
            "out_dir" => self.out_dir = Some(PathBuf::from(value)),
            _ => self.title = value.to_string(),
        }
        Ok(())
    }

    /// Checks every numeric range the stages rely on.
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(name, "must be positive"))
            }
        };
        if self.knn_k == 0 {
            return Err(invalid("knn_k", "must be at least 1"));
        }
        if self.q < 2 {
            return Err(invalid("q", "must be at least 2"));
        }
        if self.kmeans_k_min < 2 || self.kmeans_k_max < self.kmeans_k_min {
            return Err(invalid("kmeans_k_min", "need 2 <= kmeans_k_min <= kmeans_k_max"));
        }
        positive("sinkhorn_epsilon", self.sinkhorn_epsilon)?;
        positive("sinkhorn_tol", self.sinkhorn_tol)?;
        positive("gw_epsilon", self.gw_epsilon)?;
        positive("tsne_perplexity", self.tsne_perplexity)?;
        if self.tsne_perplexity <= 1.0 {
            return Err(invalid("tsne_perplexity", "must exceed 1"));
        }
        if self.sinkhorn_max_iter == 0 || self.gw_outer_iter == 0 || self.tsne_iters == 0 {
            return Err(invalid("sinkhorn_max_iter", "iteration counts must be positive"));
        }
        if let Some((a, b)) = self.preprocess_grid {
            if a == 0 || b == 0 {
                return Err(invalid("preprocess_grid", "cells must be non-empty"));
            }
        }
        Ok(())
    }

    /// `out_dir`, falling back to `SPRAY_OUT_DIR`.
    pub fn resolved_out_dir(&self) -> Result<PathBuf> {
        if let Some(d) = &self.out_dir {
            return Ok(d.clone());
        }
        match std::env::var_os("SPRAY_OUT_DIR") {
            Some(d) if !d.is_empty() => Ok(PathBuf::from(d)),
            _ => Err(invalid("out_dir", "not set and SPRAY_OUT_DIR is empty")),
        }
    }

    /// Canonical text of the keys that influence results, in a fixed order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let grid = self.preprocess_grid.map_or("off".to_string(), |(a, b)| format!("{a},{b}"));
        let _ = writeln!(s, "knn_k = {}", self.knn_k);
        let _ = writeln!(s, "q = {}", self.q);
        let _ = writeln!(s, "kmeans_k_min = {}", self.kmeans_k_min);
        let _ = writeln!(s, "kmeans_k_max = {}", self.kmeans_k_max);
        let _ = writeln!(s, "distance_metric = {}", self.distance_metric.name());
        let _ = writeln!(s, "sinkhorn_epsilon = {}", self.sinkhorn_epsilon);
        let _ = writeln!(s, "sinkhorn_tol = {}", self.sinkhorn_tol);
        let _ = writeln!(s, "sinkhorn_max_iter = {}", self.sinkhorn_max_iter);
        let _ = writeln!(s, "gw_outer_iter = {}", self.gw_outer_iter);
        let _ = writeln!(s, "gw_epsilon = {}", self.gw_epsilon);
        let _ = writeln!(s, "tsne_perplexity = {}", self.tsne_perplexity);
        let _ = writeln!(s, "tsne_iters = {}", self.tsne_iters);
        let _ = writeln!(s, "ridge = {}", self.ridge);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "preprocess_grid = {grid}");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let cfg = PipelineConfig::parse(
            "# analysis\nknn_k = 8\nq=16 # trailing\n\ndistance_metric = gromov\nridge = 0\npreprocess_grid = 20, 20\nout_dir = /tmp/x\n",
        )
        .unwrap();
        assert_eq!(cfg.knn_k, 8);
        assert_eq!(cfg.q, 16);
        assert_eq!(cfg.distance_metric, Metric::GromovWasserstein);
        assert_eq!(cfg.ridge, Ridge::Fixed(0.0));
        assert_eq!(cfg.preprocess_grid, Some((20, 20)));
        assert_eq!(cfg.out_dir, Some(PathBuf::from("/tmp/x")));
        assert_eq!(cfg.kmeans_k_max, 30);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(PipelineConfig::parse("knn = 3").is_err());
        assert!(PipelineConfig::parse("knn_k 3").is_err());
        assert!(PipelineConfig::parse("knn_k = three").is_err());
        assert!(PipelineConfig::parse("ridge = -1").is_err());
    }

    #[test]
    fn canonical_text_round_trips() {
        let mut cfg = PipelineConfig::default();
        cfg.set("tsne_perplexity", "12.5").unwrap();
        cfg.set("preprocess_grid", "7,7").unwrap();
        let back = PipelineConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn validation_ranges() {
        let mut cfg = PipelineConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.kmeans_k_min = 1;
        assert!(cfg.validate().is_err());
        let cfg = PipelineConfig { tsne_perplexity: 0.5, ..PipelineConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
