//! Network topology and parameter sequences.
//!
//! A parallel server network is a bipartite graph between `m` customer
//! classes and `J` server pools. The edge set carries the service rates:
//! class `i` can be served in pool `j` iff `(i, j)` is an edge. Everything
//! downstream (fluid equilibrium, drift matrices, simulation) requires the
//! graph to be a tree, so `|edges| = m + J - 1` and the graph is connected.
//!
//! First-order parameters `(lambda, mu, nu)` describe the limiting system;
//! second-order parameters `(lambda_hat, mu_hat, nu_hat)` describe the
//! square-root-scale perturbations of the n-th system:
//!
//! ```text
//! lambda_i^n = n lambda_i + sqrt(n) lambda_hat_i
//! mu_ij^n    = mu_ij + mu_hat_ij / sqrt(n)
//! N_j^n      = round(n nu_j + sqrt(n) nu_hat_j)
//! ```

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("graph is not a tree: {0}")]
    NotATree(String),
    #[error("{0}")]
    EmptyStar(String),
    #[error("invalid parameter: {0}")]
    BadParameter(String),
    #[error("nonpositive rate at scale n={n}: {what}")]
    NonpositiveRate { n: u64, what: String },
}

/// Validated bipartite tree of customer classes and server pools.
///
/// Edges are kept in canonical order (sorted by class, then pool) and all
/// per-edge vectors in this crate are aligned with that order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Topology {
    m: usize,
    pools: usize,
    edges: Vec<(usize, usize)>,
    pools_of_class: Vec<Vec<usize>>,
    classes_of_pool: Vec<Vec<usize>>,
}

impl Topology {
    /// Validates a raw bipartite graph given as 0-indexed `(class, pool)` pairs.
    pub fn validate(
        m: usize,
        pools: usize,
        raw_edges: &[(usize, usize)],
    ) -> Result<Self, NetworkError> {
        if m == 0 || pools == 0 {
            return Err(NetworkError::BadParameter(
                "need at least one class and one pool".into(),
            ));
        }
        if m.saturating_add(pools) > 100_000 {
            return Err(NetworkError::BadParameter(format!(
                "{m} classes + {pools} pools exceeds the supported size"
            )));
        }
        let mut edges: Vec<(usize, usize)> = raw_edges.to_vec();
        edges.sort_unstable();
        edges.dedup();
        if edges.len() != raw_edges.len() {
            return Err(NetworkError::NotATree("duplicate edges".into()));
        }
        for &(i, j) in &edges {
            if i >= m || j >= pools {
                return Err(NetworkError::BadParameter(format!(
                    "edge ({i}, {j}) out of range for {m} classes, {pools} pools"
                )));
            }
        }
        if edges.len() != m + pools - 1 {
            return Err(NetworkError::NotATree(format!(
                "tree on {} vertices needs {} edges, got {}",
                m + pools,
                m + pools - 1,
                edges.len()
            )));
        }
        // With |E| = |V| - 1, connectivity (checked by union-find) rules out cycles.
        let mut uf: Vec<usize> = (0..m + pools).collect();
        fn find(uf: &mut Vec<usize>, a: usize) -> usize {
            let mut r = a;
            while uf[r] != r {
                r = uf[r];
            }
            let mut a = a;
            while uf[a] != r {
                let next = uf[a];
                uf[a] = r;
                a = next;
            }
            r
        }
        for &(i, j) in &edges {
            let (ri, rj) = (find(&mut uf, i), find(&mut uf, m + j));
            uf[ri] = rj;
        }
        let root = find(&mut uf, 0);
        for v in 1..m + pools {
            if find(&mut uf, v) != root {
                return Err(NetworkError::NotATree("graph is disconnected".into()));
            }
        }

        let mut pools_of_class = vec![Vec::new(); m];
        let mut classes_of_pool = vec![Vec::new(); pools];
        for &(i, j) in &edges {
            pools_of_class[i].push(j);
            classes_of_pool[j].push(i);
        }
        for (i, js) in pools_of_class.iter().enumerate() {
            if js.is_empty() {
                return Err(NetworkError::EmptyStar(format!("class {i} has no pools")));
            }
        }
        for (j, is) in classes_of_pool.iter().enumerate() {
            if is.is_empty() {
                return Err(NetworkError::EmptyStar(format!("pool {j} has no classes")));
            }
        }
        Ok(Self {
            m,
            pools,
            edges,
            pools_of_class,
            classes_of_pool,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.m
    }

    pub fn num_pools(&self) -> usize {
        self.pools
    }

    /// Edges in canonical `(class, pool)` order.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Pools serving class `i`.
    pub fn pools_of(&self, class: usize) -> &[usize] {
        &self.pools_of_class[class]
    }

    /// Classes served by pool `j`.
    pub fn classes_of(&self, pool: usize) -> &[usize] {
        &self.classes_of_pool[pool]
    }

    /// Canonical index of edge `(class, pool)`, if present.
    pub fn edge_index(&self, class: usize, pool: usize) -> Option<usize> {
        self.edges.binary_search(&(class, pool)).ok()
    }

    pub fn has_edge(&self, class: usize, pool: usize) -> bool {
        self.edge_index(class, pool).is_some()
    }

    /// Degree-based structure tags; see [`classify`].
    pub fn pool_degree(&self, pool: usize) -> usize {
        self.classes_of_pool[pool].len()
    }
}

/// First- and second-order limiting parameters attached to a topology.
#[derive(Debug, Clone, Serialize)]
pub struct LimitParams {
    /// Per-class arrival rate, `> 0`.
    pub lambda: Vec<f64>,
    /// Per-edge service rate (canonical edge order), `> 0`.
    pub mu: Vec<f64>,
    /// Per-pool fluid staffing fraction, `> 0`.
    pub nu: Vec<f64>,
    /// Second-order arrival coefficients (any sign).
    pub lambda_hat: Vec<f64>,
    /// Second-order service-rate coefficients per edge.
    pub mu_hat: Vec<f64>,
    /// Second-order staffing coefficients per pool.
    pub nu_hat: Vec<f64>,
}

impl LimitParams {
    pub fn new(
        topo: &Topology,
        lambda: Vec<f64>,
        mu: Vec<f64>,
        nu: Vec<f64>,
        lambda_hat: Vec<f64>,
        mu_hat: Vec<f64>,
        nu_hat: Vec<f64>,
    ) -> Result<Self, NetworkError> {
        let (m, j, e) = (topo.num_classes(), topo.num_pools(), topo.num_edges());
        let check_len = |name: &str, got: usize, want: usize| {
            if got != want {
                Err(NetworkError::BadParameter(format!(
                    "{name} has length {got}, expected {want}"
                )))
            } else {
                Ok(())
            }
        };
        check_len("lambda", lambda.len(), m)?;
        check_len("mu", mu.len(), e)?;
        check_len("nu", nu.len(), j)?;
        check_len("lambda_hat", lambda_hat.len(), m)?;
        check_len("mu_hat", mu_hat.len(), e)?;
        check_len("nu_hat", nu_hat.len(), j)?;
        if let Some(i) = lambda.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(NetworkError::BadParameter(format!(
                "lambda[{i}] must be positive and finite"
            )));
        }
        if let Some(k) = mu.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
            let (i, j) = topo.edges()[k];
            return Err(NetworkError::BadParameter(format!(
                "mu on edge ({i}, {j}) must be positive and finite"
            )));
        }
        if let Some(j) = nu.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(NetworkError::BadParameter(format!(
                "nu[{j}] must be positive and finite"
            )));
        }
        for (name, vals) in [
            ("lambda_hat", &lambda_hat),
            ("mu_hat", &mu_hat),
            ("nu_hat", &nu_hat),
        ] {
            if let Some(k) = vals.iter().position(|v| !v.is_finite()) {
                return Err(NetworkError::BadParameter(format!(
                    "{name}[{k}] must be finite"
                )));
            }
        }
        Ok(Self {
            lambda,
            mu,
            nu,
            lambda_hat,
            mu_hat,
            nu_hat,
        })
    }

    /// Service rate on edge `(class, pool)`; zero off edges.
    pub fn mu_at(&self, topo: &Topology, class: usize, pool: usize) -> f64 {
        topo.edge_index(class, pool).map_or(0.0, |k| self.mu[k])
    }

    /// Realizes the n-th system: `lambda^n`, `mu^n` and integer pool sizes.
    ///
    /// Pool sizes use round-half-up of `n nu_j + sqrt(n) nu_hat_j`, which
    /// keeps the residual of the staffing limit below `1/sqrt(n)`.
    pub fn at_scale(&self, topo: &Topology, n: u64) -> Result<ScaledParams, NetworkError> {
        if n == 0 {
            return Err(NetworkError::BadParameter("scale n must be >= 1".into()));
        }
        let nf = n as f64;
        let sqrt_n = nf.sqrt();
        let lambda_n: Vec<f64> = self
            .lambda
            .iter()
            .zip(&self.lambda_hat)
            .map(|(l, lh)| nf * l + sqrt_n * lh)
            .collect();
        if let Some(i) = lambda_n.iter().position(|v| !(*v > 0.0)) {
            return Err(NetworkError::NonpositiveRate {
                n,
                what: format!("lambda^n[{i}] = {}", lambda_n[i]),
            });
        }
        let mu_n: Vec<f64> = self
            .mu
            .iter()
            .zip(&self.mu_hat)
            .map(|(m, mh)| m + mh / sqrt_n)
            .collect();
        if let Some(k) = mu_n.iter().position(|v| !(*v > 0.0)) {
            let (i, j) = topo.edges()[k];
            return Err(NetworkError::NonpositiveRate {
                n,
                what: format!("mu^n on edge ({i}, {j}) = {}", mu_n[k]),
            });
        }
        let pool_sizes: Vec<i64> = self
            .nu
            .iter()
            .zip(&self.nu_hat)
            .map(|(v, vh)| (nf * v + sqrt_n * vh + 0.5).floor() as i64)
            .collect();
        if let Some(j) = pool_sizes.iter().position(|&s| s < 1) {
            return Err(NetworkError::NonpositiveRate {
                n,
                what: format!("N^n[{j}] = {}", pool_sizes[j]),
            });
        }
        Ok(ScaledParams {
            n,
            lambda_n,
            mu_n,
            pool_sizes,
        })
    }
}

/// Parameters of the n-th system.
#[derive(Debug, Clone, Serialize)]
pub struct ScaledParams {
    pub n: u64,
    pub lambda_n: Vec<f64>,
    /// Per-edge rates in canonical order.
    pub mu_n: Vec<f64>,
    /// Integer server counts per pool.
    pub pool_sizes: Vec<i64>,
}

impl ScaledParams {
    pub fn sqrt_n(&self) -> f64 {
        (self.n as f64).sqrt()
    }

    pub fn mu_n_at(&self, topo: &Topology, class: usize, pool: usize) -> f64 {
        topo.edge_index(class, pool).map_or(0.0, |k| self.mu_n[k])
    }

    pub fn total_servers(&self) -> i64 {
        self.pool_sizes.iter().sum()
    }
}

/// Structure flags that decide which closed-form drift and which stability
/// theorems apply. Both flags can hold simultaneously (e.g. an N-network
/// with `mu_12 = mu_11`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct NetworkClass {
    /// The unique non-leaf pool, when there is exactly one (or `J = 1`).
    pub dominant_pool: Option<usize>,
    /// Service rates depend on the class only: `mu_ij = mu_i` on every edge.
    pub class_dependent: bool,
}

impl NetworkClass {
    pub fn is_covered(&self) -> bool {
        self.dominant_pool.is_some() || self.class_dependent
    }

    pub fn tag(&self) -> &'static str {
        match (self.dominant_pool, self.class_dependent) {
            (Some(_), true) => "dominant-pool+class-dependent",
            (Some(_), false) => "dominant-pool",
            (None, true) => "class-dependent",
            (None, false) => "general-tree",
        }
    }
}

/// Classifies the network into the families with a diagonal `B_1`.
///
/// Dominant pool: exactly one pool with degree >= 2 (the single non-leaf
/// server node), or a single pool. Class-dependent: `mu_ij` constant across
/// each class's edges.
pub fn classify(topo: &Topology, params: &LimitParams) -> NetworkClass {
    let dominant_pool = if topo.num_pools() == 1 {
        Some(0)
    } else {
        let non_leaf: Vec<usize> = (0..topo.num_pools())
            .filter(|&j| topo.pool_degree(j) >= 2)
            .collect();
        if non_leaf.len() == 1 {
            Some(non_leaf[0])
        } else {
            None
        }
    };
    let class_dependent = (0..topo.num_classes()).all(|i| {
        let mut rates = topo
            .pools_of(i)
            .iter()
            .map(|&j| params.mu_at(topo, i, j));
        let first = rates.next().expect("validated class has an edge");
        rates.all(|r| (r - first).abs() <= 1e-12 * (1.0 + first.abs()))
    });
    NetworkClass {
        dominant_pool,
        class_dependent,
    }
}

/// Is this the two-class, two-pool "N" topology (one shared pool, one
/// private pool for class 1)?
pub fn is_n_network(topo: &Topology) -> bool {
    topo.num_classes() == 2 && topo.num_pools() == 2 && topo.num_edges() == 3
}
