//! Simulation and exact generator of the n-th system.
//!
//! The head-count process is Markov once a scheduling policy fixes the
//! allocation as a function of state: class-`i` arrivals occur at rate
//! `lambda^n_i` and service completions on edge `(i, j)` at rate
//! `mu^n_ij z_ij`. Simulation therefore works at generator level (no
//! per-customer bookkeeping), which is exactly the law the controlled
//! generator defines.
//!
//! Diffusion-scaled quantities are reported against the centering carried by
//! [`ScaleData`]; in the shifted convention the constant part of the drift is
//! `-(rho_n/m) B1^n e` instead of `ell^n`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::network::Topology;
use crate::policies::{
    max_service_allocation, Allocation, PolicyError, PolicyKind, PolicySpec, SwcEngine, TieBreak,
};
use crate::statics::{ScaleData, StaticData};
use crate::stats::{BatchMeans, Estimate, TailGrid, WeightedHistogram};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("invalid simulation setup: {0}")]
    BadConfig(String),
    #[error("state {x_hat:?} is not on the diffusion-scale lattice S^n (residual {residual:.3e})")]
    OffLattice { x_hat: Vec<f64>, residual: f64 },
}

/// A diffusion-scaled state together with its scale index.
#[derive(Debug, Clone, Serialize)]
pub struct ScaledState {
    pub x_hat: Vec<f64>,
    pub n: u64,
}

impl ScaledState {
    pub fn from_lattice(scale: &ScaleData, x: &[i64]) -> Self {
        Self {
            x_hat: scale.x_hat(x),
            n: scale.n,
        }
    }

    /// Checks membership in `S^n` and returns the integer head counts.
    pub fn to_lattice(&self, scale: &ScaleData) -> Result<Vec<i64>, SimError> {
        let nf = scale.n as f64;
        let s = nf.sqrt();
        let mut x = Vec::with_capacity(self.x_hat.len());
        for (xh, xb) in self.x_hat.iter().zip(&scale.centering.x_bar) {
            let raw = s * xh + nf * xb;
            let rounded = raw.round();
            if (raw - rounded).abs() > 1e-6 || rounded < 0.0 {
                return Err(SimError::OffLattice {
                    x_hat: self.x_hat.clone(),
                    residual: (raw - rounded).abs(),
                });
            }
            x.push(rounded as i64);
        }
        Ok(x)
    }
}

/// One CTMC transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Event {
    Arrival { class: usize },
    /// Service completion on a canonical edge index.
    Departure { edge: usize },
}

/// Samples the next event and holding time at `(x, z)`.
///
/// The total rate is `sum_i lambda^n_i + sum_(i,j) mu^n_ij z_ij`; arrivals
/// are always possible, so the rate never vanishes.
pub fn step_ctmc(
    topo: &Topology,
    scale: &ScaleData,
    z: &Allocation,
    rng: &mut impl Rng,
) -> (Event, f64) {
    let lambda = &scale.scaled.lambda_n;
    let mu = &scale.scaled.mu_n;
    let mut total = 0.0;
    for &l in lambda {
        total += l;
    }
    for (k, &zk) in z.z.iter().enumerate() {
        if zk > 0 {
            total += mu[k] * zk as f64;
        }
    }
    let dt = -rng.gen::<f64>().max(f64::MIN_POSITIVE).ln() / total;
    let mut pick = rng.gen::<f64>() * total;
    for (i, &l) in lambda.iter().enumerate() {
        if pick < l {
            return (Event::Arrival { class: i }, dt);
        }
        pick -= l;
    }
    for (k, &zk) in z.z.iter().enumerate() {
        if zk > 0 {
            let r = mu[k] * zk as f64;
            if pick < r {
                return (Event::Departure { edge: k }, dt);
            }
            pick -= r;
        }
    }
    // Floating-point slack lands on the last active rate.
    let last = (0..z.z.len())
        .rev()
        .find(|&k| z.z[k] > 0)
        .map(|k| Event::Departure { edge: k })
        .unwrap_or(Event::Arrival {
            class: topo.num_classes() - 1,
        });
    (last, dt)
}

/// Per-replication simulation options.
#[derive(Debug, Clone)]
pub struct CtmcRunConfig {
    pub horizon: f64,
    /// Defaults to 20% of the horizon.
    pub burn_in: Option<f64>,
    pub seed: u64,
    /// RNG stream index (replication number).
    pub stream: u64,
    pub record_path: bool,
    /// Radii for the `||x_hat||_1` tail grid.
    pub tail_radii: Vec<f64>,
    /// Initial head counts; defaults to the centering `round(n x_bar)`.
    pub x0: Option<Vec<i64>>,
    /// Abort threshold: `||x||_1 > guard * sqrt(n)` flags suspected transience.
    pub transience_guard: f64,
    /// Number of evenly spaced `(t, <e, x(t)>)` checkpoints to record.
    pub checkpoints: usize,
}

impl CtmcRunConfig {
    pub fn new(horizon: f64, seed: u64) -> Self {
        Self {
            horizon,
            burn_in: None,
            seed,
            stream: 0,
            record_path: false,
            tail_radii: Vec::new(),
            x0: None,
            transience_guard: 1e6,
            checkpoints: 0,
        }
    }
}

/// Full event path (opt-in; summaries are always produced).
#[derive(Debug, Clone, Serialize)]
pub struct CtmcPath {
    pub times: Vec<f64>,
    pub states: Vec<Vec<i64>>,
    pub allocations: Vec<Vec<i64>>,
    pub seed: u64,
    pub stream: u64,
}

/// Time-weighted summaries of one replication.
#[derive(Debug, Clone, Serialize)]
pub struct CtmcSummary {
    pub rep: u64,
    pub n: u64,
    pub seed: u64,
    pub events: u64,
    pub time_simulated: f64,
    pub burn_in: f64,
    /// `<e, x_hat>^+` time-average with batch-means error.
    pub mean_ex_pos: Estimate,
    /// `<e, x_hat>^-` time-average with batch-means error.
    pub mean_ex_neg: Estimate,
    pub second_moment_ex_pos: Estimate,
    pub second_moment_ex_neg: Estimate,
    /// `(1 + <e, B1^{-1} B2 u^s>) <e, x_hat>^-` (stationary idleness integrand).
    pub mean_weighted_idleness: Estimate,
    pub mean_xhat: Vec<f64>,
    /// p50/p90/p99 of `<e, x_hat>^+` and `<e, x_hat>^-`.
    pub quantiles_ex_pos: [f64; 3],
    pub quantiles_ex_neg: [f64; 3],
    /// Fraction of time with `theta_hat* > 0` (outside the JWC-matching region).
    pub occupancy_theta_pos: f64,
    pub mean_theta_hat: f64,
    pub tail_radii: Vec<f64>,
    pub tail_survival: Vec<f64>,
    pub tail_visits: Vec<u64>,
    /// Evenly spaced `(t, <e, x(t)>)` samples of the raw head-count total.
    pub checkpoints: Vec<(f64, f64)>,
    pub final_x: Vec<i64>,
    pub transience_suspected: bool,
}

pub struct CtmcOutput {
    pub summary: CtmcSummary,
    pub path: Option<CtmcPath>,
}

enum PolicyEngine {
    /// Incremental SWC with prev-allocation tie-break.
    Swc(SwcEngine),
    /// Policies recomputed from state at every event.
    Stateless(PolicySpec),
    /// Event-driven longest-queue freest-server heuristic.
    Lqfs(LqfsEngine),
}

impl PolicyEngine {
    fn allocation(&self) -> Allocation {
        match self {
            PolicyEngine::Swc(e) => e.allocation(),
            PolicyEngine::Lqfs(e) => Allocation { z: e.z.clone() },
            PolicyEngine::Stateless(_) => unreachable!("stateless engines recompute"),
        }
    }

    /// Advances the engine past `event` (state `x` is already updated) and
    /// returns the new allocation.
    fn apply_event(
        &mut self,
        topo: &Topology,
        scale: &ScaleData,
        data: &StaticData,
        x: &[i64],
        event: Event,
        prev: &Allocation,
    ) -> Result<Allocation, PolicyError> {
        match self {
            PolicyEngine::Swc(e) => {
                match event {
                    Event::Arrival { class } => e.on_arrival(topo, class),
                    Event::Departure { edge } => e.on_departure(topo, edge),
                }
                Ok(e.allocation())
            }
            PolicyEngine::Lqfs(e) => {
                match event {
                    Event::Arrival { class } => e.on_arrival(topo, class),
                    Event::Departure { edge } => e.on_departure(topo, edge),
                }
                Ok(Allocation { z: e.z.clone() })
            }
            PolicyEngine::Stateless(spec) => {
                crate::policies::apply_policy(spec, topo, scale, &data.phi, x, prev)
            }
        }
    }
}

/// Longest-queue freest-server load balancing, reconstructed event by event:
/// arrivals go to the eligible pool with the most idle servers (ties by
/// index) or queue; a freed server takes from the longest eligible queue
/// (ties by index) or idles.
#[derive(Debug, Clone)]
struct LqfsEngine {
    z: Vec<i64>,
    q: Vec<i64>,
    y: Vec<i64>,
}

impl LqfsEngine {
    fn new(topo: &Topology, x: &[i64], pool_sizes: &[i64]) -> Self {
        let alloc = max_service_allocation(topo, x, pool_sizes, None);
        let q = alloc.queues(topo, x);
        let y = alloc.idleness(topo, pool_sizes);
        Self { z: alloc.z, q, y }
    }

    fn on_arrival(&mut self, topo: &Topology, class: usize) {
        let mut best: Option<usize> = None;
        for &j in topo.pools_of(class) {
            if self.y[j] > 0 && best.map_or(true, |b| self.y[j] > self.y[b]) {
                best = Some(j);
            }
        }
        match best {
            Some(j) => {
                let k = topo.edge_index(class, j).unwrap();
                self.z[k] += 1;
                self.y[j] -= 1;
            }
            None => self.q[class] += 1,
        }
    }

    fn on_departure(&mut self, topo: &Topology, edge: usize) {
        debug_assert!(self.z[edge] > 0);
        let (_, j) = topo.edges()[edge];
        self.z[edge] -= 1;
        let mut longest: Option<usize> = None;
        for &i in topo.classes_of(j) {
            if self.q[i] > 0 && longest.map_or(true, |b| self.q[i] > self.q[b]) {
                longest = Some(i);
            }
        }
        match longest {
            Some(i) => {
                let k = topo.edge_index(i, j).unwrap();
                self.z[k] += 1;
                self.q[i] -= 1;
            }
            None => self.y[j] += 1,
        }
    }
}

/// Simulates one replication of the n-th system under a policy.
pub fn simulate_ctmc(
    data: &StaticData,
    scale: &ScaleData,
    policy: &PolicySpec,
    cfg: &CtmcRunConfig,
) -> Result<CtmcOutput, SimError> {
    if cfg.horizon < 0.0 {
        return Err(SimError::BadConfig("horizon must be nonnegative".into()));
    }
    let topo = &data.topo;
    let pool_sizes = scale.scaled.pool_sizes.clone();
    let burn_in = cfg.burn_in.unwrap_or(0.2 * cfg.horizon);
    if burn_in > cfg.horizon {
        return Err(SimError::BadConfig("burn-in exceeds horizon".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(cfg.stream);

    let mut x: Vec<i64> = match &cfg.x0 {
        Some(x0) => {
            if x0.len() != topo.num_classes() || x0.iter().any(|&v| v < 0) {
                return Err(SimError::BadConfig("bad initial state".into()));
            }
            x0.clone()
        }
        None => scale.lattice_state(&vec![0.0; topo.num_classes()]),
    };

    let mut engine = match &policy.kind {
        PolicyKind::Swc if policy.tie_break == TieBreak::PrevAllocation => {
            PolicyEngine::Swc(SwcEngine::new(topo, &x, &pool_sizes))
        }
        PolicyKind::LqfsLb => PolicyEngine::Lqfs(LqfsEngine::new(topo, &x, &pool_sizes)),
        _ => PolicyEngine::Stateless(policy.clone()),
    };
    // Shadow SWC engine tracks theta* for any policy.
    let mut shadow = SwcEngine::new(topo, &x, &pool_sizes);

    let mut alloc = match &engine {
        PolicyEngine::Stateless(spec) => crate::policies::apply_policy(
            spec,
            topo,
            scale,
            &data.phi,
            &x,
            &Allocation::zero(topo),
        )?,
        other => other.allocation(),
    };

    let m = topo.num_classes();
    let sqrt_n = scale.sqrt_n();
    let span = (cfg.horizon - burn_in).max(f64::MIN_POSITIVE);
    let batches = 20.min((span.floor() as usize).max(2));
    let mut bm_ex_pos = BatchMeans::new(burn_in, cfg.horizon, batches);
    let mut bm_ex_neg = BatchMeans::new(burn_in, cfg.horizon, batches);
    let mut bm_ex_pos2 = BatchMeans::new(burn_in, cfg.horizon, batches);
    let mut bm_ex_neg2 = BatchMeans::new(burn_in, cfg.horizon, batches);
    let mut bm_weighted_idle = BatchMeans::new(burn_in, cfg.horizon, batches);
    let mut bm_theta = BatchMeans::new(burn_in, cfg.horizon, batches);
    let mut occupancy = 0.0_f64;
    let mut weight_total = 0.0_f64;
    let mut mean_xhat = vec![crate::stats::WeightedMoments::default(); m];
    let mut hist_pos = WeightedHistogram::new(0.0, 50.0, 5000);
    let mut hist_neg = WeightedHistogram::new(0.0, 50.0, 5000);
    let mut tail = TailGrid::new(cfg.tail_radii.clone());

    let mut path = cfg.record_path.then(|| CtmcPath {
        times: vec![0.0],
        states: vec![x.clone()],
        allocations: vec![alloc.z.clone()],
        seed: cfg.seed,
        stream: cfg.stream,
    });

    let mut t = 0.0_f64;
    let mut events = 0_u64;
    let mut transience_suspected = false;
    let guard = cfg.transience_guard * sqrt_n;
    let mut checkpoints: Vec<(f64, f64)> = Vec::with_capacity(cfg.checkpoints);
    let checkpoint_dt = if cfg.checkpoints > 0 {
        cfg.horizon / cfg.checkpoints as f64
    } else {
        f64::INFINITY
    };
    let mut next_checkpoint = 0.0_f64;

    while t < cfg.horizon {
        while t >= next_checkpoint && checkpoints.len() < cfg.checkpoints {
            checkpoints.push((next_checkpoint, x.iter().sum::<i64>() as f64));
            next_checkpoint += checkpoint_dt;
        }
        let (event, dt) = step_ctmc(topo, scale, &alloc, &mut rng);
        let dwell_end = (t + dt).min(cfg.horizon);
        let dwell = dwell_end - t;
        if dwell > 0.0 && dwell_end > burn_in {
            let start = t.max(burn_in);
            let w = dwell_end - start;
            let x_hat = scale.x_hat(&x);
            let ex: f64 = x_hat.iter().sum();
            let ex_pos = ex.max(0.0);
            let ex_neg = (-ex).max(0.0);
            bm_ex_pos.record(start, w, ex_pos);
            bm_ex_neg.record(start, w, ex_neg);
            bm_ex_pos2.record(start, w, ex_pos * ex_pos);
            bm_ex_neg2.record(start, w, ex_neg * ex_neg);
            let theta_star = shadow.total_queue().min(shadow.total_idle()) as f64 / sqrt_n;
            bm_theta.record(start, w, theta_star);
            // Idleness split of the *policy* allocation weights the integrand.
            let y = alloc.idleness(topo, &pool_sizes);
            let ytot: i64 = y.iter().sum();
            let weight = if ytot > 0 {
                let us: Vec<f64> = y.iter().map(|&v| v as f64 / ytot as f64).collect();
                1.0 + data.drift.idleness_weight(&us)
            } else {
                1.0
            };
            bm_weighted_idle.record(start, w, weight * ex_neg);
            if theta_star > 0.0 {
                occupancy += w;
            }
            weight_total += w;
            for (i, &v) in x_hat.iter().enumerate() {
                mean_xhat[i].record(v, w);
            }
            hist_pos.record(ex_pos, w);
            hist_neg.record(ex_neg, w);
            if !tail.radii.is_empty() {
                let norm1: f64 = x_hat.iter().map(|v| v.abs()).sum();
                tail.record(norm1, w);
            }
        }
        t += dt;
        if t >= cfg.horizon {
            break;
        }
        events += 1;

        match event {
            Event::Arrival { class } => {
                x[class] += 1;
                shadow.on_class_increment(topo, class);
            }
            Event::Departure { edge } => {
                let (i, _) = topo.edges()[edge];
                x[i] -= 1;
                shadow.on_class_decrement(topo, i);
            }
        }
        alloc = engine.apply_event(topo, scale, data, &x, event, &alloc)?;
        debug_assert!(alloc.validate_action(topo, &x, &pool_sizes).is_ok());

        if let Some(p) = path.as_mut() {
            p.times.push(t);
            p.states.push(x.clone());
            p.allocations.push(alloc.z.clone());
        }
        let norm1: i64 = x.iter().sum();
        if (norm1 as f64) > guard {
            transience_suspected = true;
            break;
        }
    }

    let summary = CtmcSummary {
        rep: cfg.stream,
        n: scale.n,
        seed: cfg.seed,
        events,
        time_simulated: t.min(cfg.horizon),
        burn_in,
        mean_ex_pos: bm_ex_pos.estimate(),
        mean_ex_neg: bm_ex_neg.estimate(),
        second_moment_ex_pos: bm_ex_pos2.estimate(),
        second_moment_ex_neg: bm_ex_neg2.estimate(),
        mean_weighted_idleness: bm_weighted_idle.estimate(),
        mean_xhat: mean_xhat.iter().map(|a| a.mean()).collect(),
        quantiles_ex_pos: [
            hist_pos.quantile(0.5),
            hist_pos.quantile(0.9),
            hist_pos.quantile(0.99),
        ],
        quantiles_ex_neg: [
            hist_neg.quantile(0.5),
            hist_neg.quantile(0.9),
            hist_neg.quantile(0.99),
        ],
        occupancy_theta_pos: if weight_total > 0.0 {
            occupancy / weight_total
        } else {
            f64::NAN
        },
        mean_theta_hat: bm_theta.estimate().mean,
        tail_radii: tail.radii.clone(),
        tail_survival: if tail.total_weight > 0.0 {
            tail.survival()
        } else {
            vec![]
        },
        tail_visits: tail.visits_above.clone(),
        checkpoints,
        final_x: x,
        transience_suspected,
    };
    Ok(CtmcOutput { summary, path })
}

/// Runs independent replications in parallel; replication `k` uses RNG
/// stream `k`, so results are reproducible regardless of thread scheduling.
pub fn simulate_ctmc_reps(
    data: &StaticData,
    scale: &ScaleData,
    policy: &PolicySpec,
    base: &CtmcRunConfig,
    reps: u64,
) -> Result<Vec<CtmcSummary>, SimError> {
    let outs: Result<Vec<_>, SimError> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut cfg = base.clone();
            cfg.stream = r;
            cfg.record_path = false;
            simulate_ctmc(data, scale, policy, &cfg).map(|o| o.summary)
        })
        .collect();
    outs
}

/// The constant part of the prelimit drift under the active centering:
/// `ell^n` unshifted, `-(rho_n/m) B1^n e` shifted.
pub fn effective_ell(scale: &ScaleData) -> Vec<f64> {
    if scale.centering.shifted {
        let m = scale.ell_n.len() as f64;
        scale
            .drift_n
            .mul_b1(&vec![1.0; scale.ell_n.len()])
            .iter()
            .map(|v| -scale.rho_n / m * v)
            .collect()
    } else {
        scale.ell_n.clone()
    }
}

/// The two drift representations of a state-action pair, which must agree.
#[derive(Debug, Clone, Serialize)]
pub struct DriftDecomposition {
    /// Direct form `b^n_i = ell^n_i - sum_j mu^n_ij z_hat_ij`.
    pub b: Vec<f64>,
    /// Queue split (uniform when no queue).
    pub uc: Vec<f64>,
    /// Idleness split (uniform when no idleness).
    pub us: Vec<f64>,
    pub theta_hat: f64,
    /// Structured form through `B1`, `B2` and the splits.
    pub b_structured: Vec<f64>,
}

/// Computes the prelimit drift both directly and through its `(u, theta)`
/// decomposition, checking that the two agree to 1e-10.
pub fn prelimit_drift(
    data: &StaticData,
    scale: &ScaleData,
    x: &[i64],
    z: &Allocation,
) -> Result<DriftDecomposition, SimError> {
    let topo = &data.topo;
    z.validate_action(topo, x, &scale.scaled.pool_sizes)?;
    let m = topo.num_classes();
    let sqrt_n = scale.sqrt_n();
    let x_hat = scale.x_hat(x);
    let z_hat = scale.z_hat(&z.z);
    let ell = effective_ell(scale);

    let mut b = ell.clone();
    for (k, &(i, _)) in topo.edges().iter().enumerate() {
        b[i] -= scale.scaled.mu_n[k] * z_hat[k];
    }

    let q = z.queues(topo, x);
    let y = z.idleness(topo, &scale.scaled.pool_sizes);
    let q_tot: i64 = q.iter().sum();
    let y_tot: i64 = y.iter().sum();
    let theta_hat = q_tot.min(y_tot) as f64 / sqrt_n;
    let uc: Vec<f64> = if q_tot > 0 {
        q.iter().map(|&v| v as f64 / q_tot as f64).collect()
    } else {
        vec![1.0 / m as f64; m]
    };
    let us: Vec<f64> = if y_tot > 0 {
        y.iter().map(|&v| v as f64 / y_tot as f64).collect()
    } else {
        vec![1.0 / topo.num_pools() as f64; topo.num_pools()]
    };

    let ex: f64 = x_hat.iter().sum();
    let ex_pos = ex.max(0.0);
    let ex_neg = (-ex).max(0.0);
    let centered: Vec<f64> = x_hat
        .iter()
        .zip(&uc)
        .map(|(&xi, &u)| xi - ex_pos * u)
        .collect();
    let b1x = scale.drift_n.mul_b1(&centered);
    let b2u = scale.drift_n.mul_b2(&us);
    let b1u = scale.drift_n.mul_b1(&uc);
    let b_structured: Vec<f64> = (0..m)
        .map(|i| ell[i] - b1x[i] + b2u[i] * ex_neg + theta_hat * (b1u[i] + b2u[i]))
        .collect();

    for i in 0..m {
        let gap = (b[i] - b_structured[i]).abs();
        debug_assert!(
            gap <= 1e-10 * (1.0 + b[i].abs()),
            "drift representations disagree at class {i}: {} vs {}",
            b[i],
            b_structured[i]
        );
        if gap > 1e-8 * (1.0 + b[i].abs()) {
            return Err(SimError::BadConfig(format!(
                "drift representations disagree at class {i}: {} vs {}",
                b[i], b_structured[i]
            )));
        }
    }
    Ok(DriftDecomposition {
        b,
        uc,
        us,
        theta_hat,
        b_structured,
    })
}

/// Applies the exact controlled generator of the diffusion-scaled process to
/// `f` at `(x, z)`:
///
/// ```text
/// L^n f(x_hat) = sum_i lambda^n_i [f(x_hat + e_i/sqrt n) - f(x_hat)]
///              + sum_(i,j) mu^n_ij z_ij [f(x_hat - e_i/sqrt n) - f(x_hat)] .
/// ```
pub fn prelimit_generator_apply(
    f: &dyn Fn(&[f64]) -> f64,
    data: &StaticData,
    scale: &ScaleData,
    x: &[i64],
    z: &Allocation,
) -> f64 {
    let topo = &data.topo;
    let sqrt_n = scale.sqrt_n();
    let x_hat = scale.x_hat(x);
    let f0 = f(&x_hat);
    let m = topo.num_classes();
    let mut up = vec![0.0; m];
    let mut down = vec![0.0; m];
    let mut buf = x_hat.clone();
    for i in 0..m {
        buf[i] = x_hat[i] + 1.0 / sqrt_n;
        up[i] = f(&buf) - f0;
        buf[i] = x_hat[i] - 1.0 / sqrt_n;
        down[i] = f(&buf) - f0;
        buf[i] = x_hat[i];
    }
    let mut total = 0.0;
    for i in 0..m {
        total += scale.scaled.lambda_n[i] * up[i];
    }
    for (k, &(i, _)) in topo.edges().iter().enumerate() {
        if z.z[k] > 0 {
            total += scale.scaled.mu_n[k] * z.z[k] as f64 * down[i];
        }
    }
    total
}
