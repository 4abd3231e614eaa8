//! Scheduling actions and the policy catalog.
//!
//! An action assigns in-service counts to edges subject to the balance
//! constraints `q_i = x_i - sum_j z_ij >= 0`, `y_j = N_j - sum_i z_ij >= 0`,
//! with work conservation `q_i y_j = 0` on every edge. System-wide work
//! conserving (SWC) actions additionally minimize the number of idle servers
//! (equivalently, they attain `theta* = min over actions of <e,q> ^ <e,y>`).
//!
//! The SWC selector used here breaks ties by minimal L1 deviation from the
//! previous allocation (a min-cost max-flow), which yields a deterministic
//! stationary Markov policy with stable sample paths.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::FlowNetwork;
use crate::network::Topology;
use crate::statics::{PhiMap, ScaleData};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("infeasible action: {0}")]
    InfeasibleAction(String),
    #[error("policy requires an N-network: {0}")]
    PolicyTopologyMismatch(String),
    #[error("invalid control point: {0}")]
    BadControl(String),
}

/// Head-count state of the n-th system.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SystemState {
    pub x: Vec<i64>,
    pub n: u64,
}

impl SystemState {
    pub fn new(x: Vec<i64>, n: u64) -> Result<Self, PolicyError> {
        if x.iter().any(|&v| v < 0) {
            return Err(PolicyError::InfeasibleAction(
                "head counts must be nonnegative".into(),
            ));
        }
        Ok(Self { x, n })
    }
}

/// Per-edge in-service counts in canonical edge order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Allocation {
    pub z: Vec<i64>,
}

impl Allocation {
    pub fn zero(topo: &Topology) -> Self {
        Self {
            z: vec![0; topo.num_edges()],
        }
    }

    pub fn queues(&self, topo: &Topology, x: &[i64]) -> Vec<i64> {
        let mut q = x.to_vec();
        for (k, &(i, _)) in topo.edges().iter().enumerate() {
            q[i] -= self.z[k];
        }
        q
    }

    pub fn idleness(&self, topo: &Topology, pool_sizes: &[i64]) -> Vec<i64> {
        let mut y = pool_sizes.to_vec();
        for (k, &(_, j)) in topo.edges().iter().enumerate() {
            y[j] -= self.z[k];
        }
        y
    }

    pub fn total_in_service(&self) -> i64 {
        self.z.iter().sum()
    }

    /// Checks membership in the work-conserving action space at `x`.
    pub fn validate_action(
        &self,
        topo: &Topology,
        x: &[i64],
        pool_sizes: &[i64],
    ) -> Result<(), PolicyError> {
        if self.z.iter().any(|&v| v < 0) {
            return Err(PolicyError::InfeasibleAction("negative z".into()));
        }
        let q = self.queues(topo, x);
        let y = self.idleness(topo, pool_sizes);
        if let Some(i) = q.iter().position(|&v| v < 0) {
            return Err(PolicyError::InfeasibleAction(format!(
                "queue of class {i} negative"
            )));
        }
        if let Some(j) = y.iter().position(|&v| v < 0) {
            return Err(PolicyError::InfeasibleAction(format!(
                "idleness of pool {j} negative"
            )));
        }
        for &(i, j) in topo.edges() {
            if q[i] > 0 && y[j] > 0 {
                return Err(PolicyError::InfeasibleAction(format!(
                    "work conservation broken on edge ({i}, {j})"
                )));
            }
        }
        Ok(())
    }
}

/// Unscaled `theta = <e,q> ^ <e,y>` of a state-action pair.
pub fn theta_unscaled(topo: &Topology, x: &[i64], pool_sizes: &[i64], z: &Allocation) -> i64 {
    let q: i64 = z.queues(topo, x).iter().sum();
    let y: i64 = z.idleness(topo, pool_sizes).iter().sum();
    q.min(y)
}

/// Diffusion-scale `theta_hat(x_hat, z_hat)`; errors when the action is
/// outside the work-conserving action space.
pub fn theta_hat(
    scale: &ScaleData,
    topo: &Topology,
    x: &[i64],
    z: &Allocation,
) -> Result<f64, PolicyError> {
    z.validate_action(topo, x, &scale.scaled.pool_sizes)?;
    Ok(theta_unscaled(topo, x, &scale.scaled.pool_sizes, z) as f64 / scale.sqrt_n())
}

/// `theta_hat*`: minimum of `theta_hat` over the action space, attained by
/// any allocation maximizing total in-service counts.
pub fn theta_star_hat(scale: &ScaleData, topo: &Topology, x: &[i64]) -> f64 {
    let z = max_service_allocation(topo, x, &scale.scaled.pool_sizes, None);
    theta_unscaled(topo, x, &scale.scaled.pool_sizes, &z) as f64 / scale.sqrt_n()
}

/// Maximizes total in-service counts subject to row caps `x` and column caps
/// `pool_sizes`; among maximizers, minimizes the L1 deviation from `prev`
/// when given, else prefers low canonical edge ranks.
pub fn max_service_allocation(
    topo: &Topology,
    x: &[i64],
    pool_sizes: &[i64],
    prev: Option<&Allocation>,
) -> Allocation {
    let m = topo.num_classes();
    let num_pools = topo.num_pools();
    let (source, sink) = (0, 1 + m + num_pools);
    let mut net = FlowNetwork::new(m + num_pools + 2);
    for (i, &xi) in x.iter().enumerate() {
        net.add_arc(source, 1 + i, xi.max(0), 0);
    }
    for (j, &nj) in pool_sizes.iter().enumerate() {
        net.add_arc(1 + m + j, sink, nj.max(0), 0);
    }
    let cap = x.iter().map(|v| v.max(&0)).sum::<i64>();
    let mut edge_arcs: Vec<(usize, Option<usize>)> = Vec::with_capacity(topo.num_edges());
    for (k, &(i, j)) in topo.edges().iter().enumerate() {
        match prev {
            Some(p) => {
                // Units kept below prev are free; growth beyond prev costs 1.
                // Minimizing sum (z - prev)^+ is equivalent to minimizing the
                // L1 deviation among max-flow solutions.
                let keep = net.add_arc(1 + i, 1 + m + j, p.z[k], 0);
                let grow = net.add_arc(1 + i, 1 + m + j, cap, 1);
                edge_arcs.push((keep, Some(grow)));
            }
            None => {
                let arc = net.add_arc(1 + i, 1 + m + j, cap, k as i64);
                edge_arcs.push((arc, None));
            }
        }
    }
    net.run(source, sink);
    let z = edge_arcs
        .iter()
        .map(|&(a, b)| net.flow_on(a) + b.map_or(0, |b| net.flow_on(b)))
        .collect();
    Allocation { z }
}

/// Named scheduling policies.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub enum PolicyKind {
    /// System-wide work conserving (minimize idle servers).
    Swc,
    /// N-network static priority: class 2 has priority in the shared pool,
    /// class 1 prefers its private pool.
    StaticPriorityN,
    /// Longest-queue freest-server load balancing, reconstructed as an
    /// event-driven heuristic.
    LqfsLb,
    /// Realizes fixed queue/idleness splits `(u^c, u^s)` through the tree map.
    Constant { uc: Vec<f64>, us: Vec<f64> },
}

/// How SWC breaks ties among idle-server minimizers.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
pub enum TieBreak {
    /// Minimal L1 deviation from the previous allocation.
    #[default]
    PrevAllocation,
    /// Prefer low canonical edge ranks, ignoring history.
    CanonicalOrder,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    pub tie_break: TieBreak,
}

impl PolicySpec {
    pub fn swc() -> Self {
        Self {
            kind: PolicyKind::Swc,
            tie_break: TieBreak::default(),
        }
    }

    /// Parses the CLI form: `swc`, `swc:canonical` (history-free tie-break),
    /// `priority-n`, `lqfs-lb`, or `constant:<uc_1,..,uc_m;us_1,..,us_J>`.
    pub fn parse_flag(s: &str) -> Result<Self, PolicyError> {
        let s = s.trim();
        if s == "swc:canonical" {
            return Ok(Self {
                kind: PolicyKind::Swc,
                tie_break: TieBreak::CanonicalOrder,
            });
        }
        let kind = match s {
            "swc" => PolicyKind::Swc,
            "priority-n" => PolicyKind::StaticPriorityN,
            "lqfs-lb" => PolicyKind::LqfsLb,
            _ => {
                let rest = s
                    .strip_prefix("constant:")
                    .ok_or_else(|| PolicyError::BadControl(format!("unknown policy `{s}`")))?;
                let (uc_str, us_str) = rest.split_once(';').ok_or_else(|| {
                    PolicyError::BadControl("constant control needs `uc;us`".into())
                })?;
                let parse_vec = |part: &str| -> Result<Vec<f64>, PolicyError> {
                    part.split(',')
                        .map(|t| {
                            t.trim()
                                .parse::<f64>()
                                .map_err(|e| PolicyError::BadControl(format!("bad number: {e}")))
                        })
                        .collect()
                };
                PolicyKind::Constant {
                    uc: parse_vec(uc_str)?,
                    us: parse_vec(us_str)?,
                }
            }
        };
        Ok(Self {
            kind,
            tie_break: TieBreak::default(),
        })
    }
}

/// Checks that `u` lies on the probability simplex.
pub fn validate_simplex(u: &[f64], what: &str) -> Result<(), PolicyError> {
    if u.is_empty() {
        return Err(PolicyError::BadControl(format!("{what} is empty")));
    }
    if u.iter().any(|&v| v < -1e-12 || !v.is_finite()) {
        return Err(PolicyError::BadControl(format!(
            "{what} has negative or non-finite entries"
        )));
    }
    let s: f64 = u.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(PolicyError::BadControl(format!(
            "{what} sums to {s}, expected 1"
        )));
    }
    Ok(())
}

/// Applies a policy at a state, given the previous allocation.
pub fn apply_policy(
    spec: &PolicySpec,
    topo: &Topology,
    scale: &ScaleData,
    phi: &PhiMap,
    x: &[i64],
    prev: &Allocation,
) -> Result<Allocation, PolicyError> {
    let pool_sizes = &scale.scaled.pool_sizes;
    match &spec.kind {
        PolicyKind::Swc => {
            let prev_opt = match spec.tie_break {
                TieBreak::PrevAllocation => Some(prev),
                TieBreak::CanonicalOrder => None,
            };
            Ok(max_service_allocation(topo, x, pool_sizes, prev_opt))
        }
        PolicyKind::StaticPriorityN => static_priority_n(topo, x, pool_sizes),
        PolicyKind::LqfsLb => {
            // As a state-to-action map the heuristic degenerates to its
            // steady reconstruction: a fresh SWC assignment. The event-driven
            // realization lives in the simulator.
            Ok(max_service_allocation(topo, x, pool_sizes, Some(prev)))
        }
        PolicyKind::Constant { uc, us } => constant_control(topo, scale, phi, x, uc, us),
    }
}

/// Classifies the N-network roles: (shared pool, private pool, class served
/// only by the shared pool, class served by both).
pub fn n_network_roles(topo: &Topology) -> Result<(usize, usize, usize, usize), PolicyError> {
    if !crate::network::is_n_network(topo) {
        return Err(PolicyError::PolicyTopologyMismatch(format!(
            "{} classes, {} pools, {} edges",
            topo.num_classes(),
            topo.num_pools(),
            topo.num_edges()
        )));
    }
    let shared = (0..2)
        .find(|&j| topo.pool_degree(j) == 2)
        .expect("N-network has a degree-2 pool");
    let private = 1 - shared;
    let both = topo.classes_of(private)[0];
    let only = 1 - both;
    Ok((shared, private, only, both))
}

fn static_priority_n(
    topo: &Topology,
    x: &[i64],
    pool_sizes: &[i64],
) -> Result<Allocation, PolicyError> {
    let (shared, private, only, both) = n_network_roles(topo)?;
    let mut z = vec![0i64; topo.num_edges()];
    let k_only_shared = topo.edge_index(only, shared).unwrap();
    let k_both_private = topo.edge_index(both, private).unwrap();
    let k_both_shared = topo.edge_index(both, shared).unwrap();
    z[k_only_shared] = x[only].min(pool_sizes[shared]);
    z[k_both_private] = x[both].min(pool_sizes[private]);
    z[k_both_shared] = (x[both] - z[k_both_private]).min(pool_sizes[shared] - z[k_only_shared]);
    Ok(Allocation { z })
}

fn constant_control(
    topo: &Topology,
    scale: &ScaleData,
    phi: &PhiMap,
    x: &[i64],
    uc: &[f64],
    us: &[f64],
) -> Result<Allocation, PolicyError> {
    validate_simplex(uc, "u^c")?;
    validate_simplex(us, "u^s")?;
    if uc.len() != topo.num_classes() || us.len() != topo.num_pools() {
        return Err(PolicyError::BadControl(
            "control dimensions do not match the network".into(),
        ));
    }
    let pool_sizes = &scale.scaled.pool_sizes;
    // Total in-service count cannot exceed the SWC optimum; realize the
    // requested splits at that service level.
    let swc = max_service_allocation(topo, x, pool_sizes, None);
    let served = swc.total_in_service();
    let total_q = x.iter().sum::<i64>() - served;
    let total_y = pool_sizes.iter().sum::<i64>() - served;

    let q_target = largest_remainder(uc, total_q);
    let y_target = largest_remainder(us, total_y);
    let alpha: Vec<f64> = x
        .iter()
        .zip(&q_target)
        .map(|(&a, &b)| (a - b) as f64)
        .collect();
    let beta: Vec<f64> = pool_sizes
        .iter()
        .zip(&y_target)
        .map(|(&a, &b)| (a - b) as f64)
        .collect();
    let real = phi.apply(&alpha, &beta);

    // Largest-remainder rounding per pool column.
    let mut z = vec![0i64; topo.num_edges()];
    for j in 0..topo.num_pools() {
        let cols: Vec<usize> = topo
            .classes_of(j)
            .iter()
            .map(|&i| topo.edge_index(i, j).unwrap())
            .collect();
        let vals: Vec<f64> = cols.iter().map(|&k| real[k]).collect();
        let target = pool_sizes[j] - y_target[j];
        let rounded = largest_remainder_signed(&vals, target);
        for (&k, v) in cols.iter().zip(rounded) {
            z[k] = v;
        }
    }

    // Greedy repair to the feasible action space.
    for v in z.iter_mut() {
        *v = (*v).max(0);
    }
    let mut alloc = Allocation { z };
    // Row caps.
    let mut q = alloc.queues(topo, x);
    for (k, &(i, _)) in topo.edges().iter().enumerate() {
        while q[i] < 0 && alloc.z[k] > 0 {
            alloc.z[k] -= 1;
            q[i] += 1;
        }
    }
    // Column caps.
    let mut y = alloc.idleness(topo, pool_sizes);
    for (k, &(_, j)) in topo.edges().iter().enumerate() {
        while y[j] < 0 && alloc.z[k] > 0 {
            alloc.z[k] -= 1;
            y[j] += 1;
        }
    }
    // Work conservation: no queue next to an idle eligible server.
    let mut q = alloc.queues(topo, x);
    let mut y = alloc.idleness(topo, pool_sizes);
    for (k, &(i, j)) in topo.edges().iter().enumerate() {
        let add = q[i].min(y[j]).max(0);
        alloc.z[k] += add;
        q[i] -= add;
        y[j] -= add;
    }
    debug_assert!(alloc.validate_action(topo, x, pool_sizes).is_ok());
    Ok(alloc)
}

/// Rounds `total * weights` to integers summing to `total`.
fn largest_remainder(weights: &[f64], total: i64) -> Vec<i64> {
    let vals: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    largest_remainder_signed(&vals, total)
}

/// Rounds reals to integers with the prescribed sum, adjusting the entries
/// with the largest remainders first.
fn largest_remainder_signed(vals: &[f64], total: i64) -> Vec<i64> {
    let mut out: Vec<i64> = vals.iter().map(|v| v.floor() as i64).collect();
    let mut deficit = total - out.iter().sum::<i64>();
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = vals[a] - vals[a].floor();
        let rb = vals[b] - vals[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut idx = 0;
    while deficit > 0 && !order.is_empty() {
        out[order[idx % order.len()]] += 1;
        deficit -= 1;
        idx += 1;
    }
    let mut idx = 0;
    while deficit < 0 && !order.is_empty() {
        let pos = order[order.len() - 1 - (idx % order.len())];
        out[pos] -= 1;
        deficit += 1;
        idx += 1;
    }
    out
}

/// Incremental SWC state for event-driven simulation.
///
/// Keeps a maximal allocation across unit arrivals/departures with one BFS
/// augmentation per event; the shortest augmenting path is also the minimal
/// L1 perturbation of the previous allocation.
#[derive(Debug, Clone)]
pub struct SwcEngine {
    pub z: Vec<i64>,
    q: Vec<i64>,
    y: Vec<i64>,
}

impl SwcEngine {
    pub fn new(topo: &Topology, x: &[i64], pool_sizes: &[i64]) -> Self {
        let alloc = max_service_allocation(topo, x, pool_sizes, None);
        let q = alloc.queues(topo, x);
        let y = alloc.idleness(topo, pool_sizes);
        Self { z: alloc.z, q, y }
    }

    pub fn allocation(&self) -> Allocation {
        Allocation { z: self.z.clone() }
    }

    pub fn queues(&self) -> &[i64] {
        &self.q
    }

    pub fn idleness(&self) -> &[i64] {
        &self.y
    }

    pub fn total_queue(&self) -> i64 {
        self.q.iter().sum()
    }

    pub fn total_idle(&self) -> i64 {
        self.y.iter().sum()
    }

    pub fn on_arrival(&mut self, topo: &Topology, class: usize) {
        self.q[class] += 1;
        self.augment_from(topo, class);
    }

    /// Departure of a customer in service on edge `k`.
    pub fn on_departure(&mut self, topo: &Topology, k: usize) {
        debug_assert!(self.z[k] > 0);
        let (_, j) = topo.edges()[k];
        self.z[k] -= 1;
        self.y[j] += 1;
        // The freed capacity may admit one more queued customer somewhere.
        for i in 0..self.q.len() {
            if self.q[i] > 0 && self.augment_from(topo, i) {
                break;
            }
        }
    }

    /// Tracks `x_class += 1` regardless of where the driving policy put the
    /// customer (used to shadow theta* under non-SWC policies).
    pub fn on_class_increment(&mut self, topo: &Topology, class: usize) {
        self.on_arrival(topo, class);
    }

    /// Tracks `x_class -= 1`: removes a queued customer if any, else frees a
    /// server on the first busy edge of the class.
    pub fn on_class_decrement(&mut self, topo: &Topology, class: usize) {
        if self.q[class] > 0 {
            self.q[class] -= 1;
            return;
        }
        let k = topo
            .pools_of(class)
            .iter()
            .map(|&j| topo.edge_index(class, j).unwrap())
            .find(|&k| self.z[k] > 0)
            .expect("decrement requires a customer present");
        self.on_departure(topo, k);
    }

    /// BFS for an alternating path class -> pool -> class -> ... -> idle pool;
    /// applies the augmentation if found.
    fn augment_from(&mut self, topo: &Topology, start: usize) -> bool {
        if self.q[start] == 0 {
            return false;
        }
        let m = topo.num_classes();
        let num_pools = topo.num_pools();
        // parent_edge[pool j] = edge used to reach j; parent_pool[class i].
        let mut seen_class = vec![false; m];
        let mut seen_pool = vec![false; num_pools];
        let mut parent_edge_of_pool = vec![usize::MAX; num_pools];
        let mut parent_edge_of_class = vec![usize::MAX; m];
        seen_class[start] = true;
        let mut frontier = vec![start];
        let mut target_pool = None;
        'bfs: while !frontier.is_empty() {
            let mut next = Vec::new();
            for &i in &frontier {
                for &j in topo.pools_of(i) {
                    if seen_pool[j] {
                        continue;
                    }
                    seen_pool[j] = true;
                    parent_edge_of_pool[j] = topo.edge_index(i, j).unwrap();
                    if self.y[j] > 0 {
                        target_pool = Some(j);
                        break 'bfs;
                    }
                    for &i2 in topo.classes_of(j) {
                        if seen_class[i2] {
                            continue;
                        }
                        let k = topo.edge_index(i2, j).unwrap();
                        if self.z[k] > 0 {
                            seen_class[i2] = true;
                            parent_edge_of_class[i2] = k;
                            next.push(i2);
                        }
                    }
                }
            }
            frontier = next;
        }
        let Some(mut j) = target_pool else {
            return false;
        };
        // Walk back, shifting one unit along the path.
        self.y[j] -= 1;
        loop {
            let k_in = parent_edge_of_pool[j];
            let (i, _) = topo.edges()[k_in];
            self.z[k_in] += 1;
            if i == start {
                self.q[start] -= 1;
                return true;
            }
            let k_out = parent_edge_of_class[i];
            debug_assert!(self.z[k_out] > 0);
            self.z[k_out] -= 1;
            j = topo.edges()[k_out].1;
        }
    }
}
