//! Network description files.
//!
//! A single document (TOML or JSON) carries the topology and parameters:
//!
//! ```toml
//! classes = 2
//! pools = 2
//! edges = [[1, 1], [2, 1], [1, 2]]   # 1-indexed [class, pool] pairs
//! lambda = [1.5, 0.5]
//! nu = [1.0, 0.5]
//! nu_hat = [1.0, 0.0]                # optional, defaults to zeros
//!
//! [mu]                               # per-edge rates, keys "class-pool"
//! "1-1" = 1.0
//! "2-1" = 1.0
//! "1-2" = 2.0
//! ```
//!
//! JSON uses the same keys. The format is sniffed from the first
//! non-whitespace byte (`{` means JSON).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{LimitParams, NetworkError, Topology};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("bad config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Raw document shape prior to validation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub classes: usize,
    pub pools: usize,
    /// 1-indexed `[class, pool]` pairs.
    pub edges: Vec<[usize; 2]>,
    pub lambda: Vec<f64>,
    /// Per-edge service rates keyed `"class-pool"` (1-indexed).
    pub mu: BTreeMap<String, f64>,
    pub nu: Vec<f64>,
    #[serde(default)]
    pub lambda_hat: Option<Vec<f64>>,
    #[serde(default)]
    pub mu_hat: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    pub nu_hat: Option<Vec<f64>>,
}

impl NetworkConfig {
    /// Parses TOML or JSON text (sniffed by the first non-whitespace byte).
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let trimmed = text.trim_start();
        if trimmed.starts_with('{') {
            serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
        } else {
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Validates into a topology plus limiting parameters.
    pub fn build(&self) -> Result<(Topology, LimitParams), ConfigError> {
        let mut edges = Vec::with_capacity(self.edges.len());
        for &[i, j] in &self.edges {
            if i == 0 || j == 0 {
                return Err(ConfigError::Invalid(format!(
                    "edge [{i}, {j}] must be 1-indexed"
                )));
            }
            edges.push((i - 1, j - 1));
        }
        let topo = Topology::validate(self.classes, self.pools, &edges)?;

        let edge_key = |i: usize, j: usize| format!("{}-{}", i + 1, j + 1);
        let mut mu = vec![0.0; topo.num_edges()];
        for (k, &(i, j)) in topo.edges().iter().enumerate() {
            let key = edge_key(i, j);
            mu[k] = *self.mu.get(&key).ok_or_else(|| {
                ConfigError::Invalid(format!("mu is missing edge \"{key}\""))
            })?;
        }
        for key in self.mu.keys() {
            let ok = topo
                .edges()
                .iter()
                .any(|&(i, j)| edge_key(i, j) == *key);
            if !ok {
                return Err(ConfigError::Invalid(format!(
                    "mu has key \"{key}\" which is not an edge"
                )));
            }
        }
        let mut mu_hat = vec![0.0; topo.num_edges()];
        if let Some(map) = &self.mu_hat {
            for (key, &v) in map {
                let k = topo
                    .edges()
                    .iter()
                    .position(|&(i, j)| edge_key(i, j) == *key)
                    .ok_or_else(|| {
                        ConfigError::Invalid(format!(
                            "mu_hat has key \"{key}\" which is not an edge"
                        ))
                    })?;
                mu_hat[k] = v;
            }
        }
        let lambda_hat = self
            .lambda_hat
            .clone()
            .unwrap_or_else(|| vec![0.0; self.classes]);
        let nu_hat = self.nu_hat.clone().unwrap_or_else(|| vec![0.0; self.pools]);
        let params = LimitParams::new(
            &topo,
            self.lambda.clone(),
            mu,
            self.nu.clone(),
            lambda_hat,
            mu_hat,
            nu_hat,
        )?;
        Ok((topo, params))
    }

    /// Stable digest of the canonical JSON form, recorded in reports so
    /// experiments are reproducible from (config, seed).
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let canon = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(canon.as_bytes());
        let out = hasher.finalize();
        out.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// The reference N-network used throughout the docs and tests.
pub fn reference_n_network_toml() -> &'static str {
    r#"
classes = 2
pools = 2
edges = [[1, 1], [2, 1], [1, 2]]
lambda = [1.5, 0.5]
nu = [1.0, 0.5]
nu_hat = [1.0, 0.0]

[mu]
"1-1" = 1.0
"2-1" = 1.0
"1-2" = 2.0
"#
}
