//! The limiting controlled diffusion.
//!
//! State lives in `R^m`; the control `u = (u^c, u^s)` picks how queueing and
//! idleness split across classes and pools. The drift is
//!
//! ```text
//! b(x, u) = ell - B1 (x - <e,x>^+ u^c) + B2 u^s <e,x>^- ,
//! ```
//!
//! equivalently `b_i = ell_i - sum_j mu_ij Phi_ij(x - <e,x>^+ u^c, -<e,x>^- u^s)`,
//! and the diffusion matrix is constant with `a = diag(2 lambda)`. The
//! centered convention translates the origin so that `ell = -(rho/m) B1 e`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::policies::{validate_simplex, PolicyError};
use crate::statics::StaticData;
use crate::stats::{BatchMeans, Estimate, TailGrid, WeightedHistogram};

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error(transparent)]
    Control(#[from] PolicyError),
    #[error("invalid simulation setup: {0}")]
    BadConfig(String),
}

/// A point of the control set: a pair of simplex vectors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlPoint {
    pub uc: Vec<f64>,
    pub us: Vec<f64>,
}

impl ControlPoint {
    pub fn new(uc: Vec<f64>, us: Vec<f64>) -> Result<Self, PolicyError> {
        validate_simplex(&uc, "u^c")?;
        validate_simplex(&us, "u^s")?;
        Ok(Self { uc, us })
    }

    /// Vertex pair `(e_i, e_j)`.
    pub fn vertex(m: usize, num_pools: usize, i: usize, j: usize) -> Self {
        let mut uc = vec![0.0; m];
        let mut us = vec![0.0; num_pools];
        uc[i] = 1.0;
        us[j] = 1.0;
        Self { uc, us }
    }

    pub fn uniform(m: usize, num_pools: usize) -> Self {
        Self {
            uc: vec![1.0 / m as f64; m],
            us: vec![1.0 / num_pools as f64; num_pools],
        }
    }
}

/// Stationary Markov controls exposed by the CLI.
#[derive(Debug, Clone, Serialize)]
pub enum MarkovControl {
    Constant(ControlPoint),
    /// Sign-regime heuristic mimicking the reference SWC selector in the
    /// limit: queue mass follows the largest coordinate; idleness sits in
    /// the last pool, matching the selector's fill order (augmenting paths
    /// claim low-index pools first, so residual idleness accumulates in the
    /// highest-index pool).
    MimicSwc,
}

impl MarkovControl {
    pub fn parse_flag(s: &str, m: usize, num_pools: usize) -> Result<Self, PolicyError> {
        let s = s.trim();
        if s == "mimic-swc" {
            return Ok(MarkovControl::MimicSwc);
        }
        let rest = s
            .strip_prefix("constant:")
            .ok_or_else(|| PolicyError::BadControl(format!("unknown control `{s}`")))?;
        let (uc_str, us_str) = rest
            .split_once(';')
            .ok_or_else(|| PolicyError::BadControl("constant control needs `uc;us`".into()))?;
        let parse = |part: &str| -> Result<Vec<f64>, PolicyError> {
            part.split(',')
                .map(|t| {
                    t.trim()
                        .parse::<f64>()
                        .map_err(|e| PolicyError::BadControl(format!("bad number: {e}")))
                })
                .collect()
        };
        let point = ControlPoint::new(parse(uc_str)?, parse(us_str)?)?;
        if point.uc.len() != m || point.us.len() != num_pools {
            return Err(PolicyError::BadControl(
                "control dimensions do not match the network".into(),
            ));
        }
        Ok(MarkovControl::Constant(point))
    }

    pub fn at(&self, spec: &DiffusionSpec<'_>, x: &[f64]) -> ControlPoint {
        match self {
            MarkovControl::Constant(u) => u.clone(),
            MarkovControl::MimicSwc => {
                let m = x.len();
                let num_pools = spec.data.num_pools();
                let ex: f64 = x.iter().sum();
                let uc = if ex > 0.0 {
                    let mut i_star = 0;
                    for i in 1..m {
                        if x[i] > x[i_star] {
                            i_star = i;
                        }
                    }
                    let mut uc = vec![0.0; m];
                    uc[i_star] = 1.0;
                    uc
                } else {
                    vec![1.0 / m as f64; m]
                };
                let mut us = vec![0.0; num_pools];
                us[num_pools - 1] = 1.0;
                ControlPoint { uc, us }
            }
        }
    }
}

/// Drift/diffusion data of the limit SDE.
#[derive(Debug, Clone)]
pub struct DiffusionSpec<'a> {
    pub data: &'a StaticData,
    /// Use the translated origin with `ell = -(rho/m) B1 e`.
    pub centered: bool,
    /// Diagonal of `sigma`: `sqrt(2 lambda_i)`.
    pub sigma: Vec<f64>,
}

impl<'a> DiffusionSpec<'a> {
    pub fn new(data: &'a StaticData, centered: bool) -> Self {
        let sigma = data.params.lambda.iter().map(|l| (2.0 * l).sqrt()).collect();
        Self {
            data,
            centered,
            sigma,
        }
    }

    /// `a = sigma sigma^T` diagonal.
    pub fn a_diag(&self) -> Vec<f64> {
        self.sigma.iter().map(|s| s * s).collect()
    }

    pub fn effective_ell(&self) -> Vec<f64> {
        if self.centered {
            let m = self.data.num_classes() as f64;
            self.data
                .drift
                .mul_b1(&vec![1.0; self.data.num_classes()])
                .iter()
                .map(|v| -self.data.rho / m * v)
                .collect()
        } else {
            self.data.ell.clone()
        }
    }

    /// Drift via the tree map, cross-checked against the class-specialized
    /// closed form whenever one applies.
    pub fn drift(&self, x: &[f64], u: &ControlPoint) -> Vec<f64> {
        let b = self.drift_phi_form(x, u);
        #[cfg(debug_assertions)]
        {
            if let Some(closed) = self.drift_closed_form(x, u) {
                for i in 0..b.len() {
                    debug_assert!(
                        (b[i] - closed[i]).abs() <= 1e-10 * (1.0 + b[i].abs()),
                        "drift forms disagree at class {i}: {} vs {}",
                        b[i],
                        closed[i]
                    );
                }
            }
        }
        b
    }

    /// `b_i = ell_i - sum_j mu_ij Phi_ij(x - <e,x>^+ u^c, -<e,x>^- u^s)`.
    pub fn drift_phi_form(&self, x: &[f64], u: &ControlPoint) -> Vec<f64> {
        let data = self.data;
        let ex: f64 = x.iter().sum();
        let ex_pos = ex.max(0.0);
        let ex_neg = (-ex).max(0.0);
        let alpha: Vec<f64> = x
            .iter()
            .zip(&u.uc)
            .map(|(&xi, &ui)| xi - ex_pos * ui)
            .collect();
        let beta: Vec<f64> = u.us.iter().map(|&uj| -ex_neg * uj).collect();
        let vals = data.phi.apply(&alpha, &beta);
        let mut b = self.effective_ell();
        for (k, &(i, _)) in data.topo.edges().iter().enumerate() {
            b[i] -= data.params.mu[k] * vals[k];
        }
        b
    }

    /// Class-specialized closed forms (dominant pool / class-dependent).
    pub fn drift_closed_form(&self, x: &[f64], u: &ControlPoint) -> Option<Vec<f64>> {
        let data = self.data;
        let ell = self.effective_ell();
        let ex: f64 = x.iter().sum();
        let ex_pos = ex.max(0.0);
        let ex_neg = (-ex).max(0.0);
        if let Some(p) = data.class.dominant_pool {
            let mut b = vec![0.0; data.num_classes()];
            for i in 0..data.num_classes() {
                let mu_i1 = data.params.mu_at(&data.topo, i, p);
                let mut leaf = 0.0;
                for &j in data.topo.pools_of(i) {
                    if j != p {
                        let eta = data.params.mu_at(&data.topo, i, j) / mu_i1;
                        leaf += mu_i1 * (eta - 1.0) * u.us[j] * ex_neg;
                    }
                }
                b[i] = ell[i] - mu_i1 * (x[i] - u.uc[i] * ex_pos) + leaf;
            }
            Some(b)
        } else if data.class.class_dependent {
            let mut b = vec![0.0; data.num_classes()];
            for i in 0..data.num_classes() {
                let mu_i = data.params.mu[data
                    .topo
                    .edge_index(i, data.topo.pools_of(i)[0])
                    .unwrap()];
                b[i] = ell[i] - mu_i * (x[i] - u.uc[i] * ex_pos);
            }
            Some(b)
        } else {
            None
        }
    }

    /// `L_u f(x) = (1/2) tr(a grad^2 f) + <b(x,u), grad f>` for diagonal `a`.
    pub fn generator_apply(&self, f: &dyn C2Fn, x: &[f64], u: &ControlPoint) -> f64 {
        let m = x.len();
        let mut grad = vec![0.0; m];
        let mut hess = vec![0.0; m];
        f.gradient(x, &mut grad);
        f.hessian_diag(x, &mut hess);
        let b = self.drift(x, u);
        let a = self.a_diag();
        let mut total = 0.0;
        for i in 0..m {
            total += 0.5 * a[i] * hess[i] + b[i] * grad[i];
        }
        total
    }
}

/// Twice continuously differentiable scalar function with diagonal Hessian
/// access (the diffusion matrix is diagonal, so mixed terms never enter the
/// generator).
pub trait C2Fn {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], out: &mut [f64]);
    fn hessian_diag(&self, x: &[f64], out: &mut [f64]);
}

/// Central finite differences for functions without analytic derivatives.
pub struct FiniteDiff<F: Fn(&[f64]) -> f64>(pub F);

impl<F: Fn(&[f64]) -> f64> C2Fn for FiniteDiff<F> {
    fn value(&self, x: &[f64]) -> f64 {
        (self.0)(x)
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let mut buf = x.to_vec();
        for i in 0..x.len() {
            let h = 1e-5 * (1.0 + x[i].abs());
            buf[i] = x[i] + h;
            let up = (self.0)(&buf);
            buf[i] = x[i] - h;
            let down = (self.0)(&buf);
            buf[i] = x[i];
            out[i] = (up - down) / (2.0 * h);
        }
    }

    fn hessian_diag(&self, x: &[f64], out: &mut [f64]) {
        let f0 = (self.0)(x);
        let mut buf = x.to_vec();
        for i in 0..x.len() {
            let h = 1e-5 * (1.0 + x[i].abs());
            buf[i] = x[i] + h;
            let up = (self.0)(&buf);
            buf[i] = x[i] - h;
            let down = (self.0)(&buf);
            buf[i] = x[i];
            out[i] = (up + down - 2.0 * f0) / (h * h);
        }
    }
}

/// Euler-Maruyama run options.
#[derive(Debug, Clone)]
pub struct SdeRunConfig {
    pub horizon: f64,
    pub step: f64,
    pub burn_in: Option<f64>,
    pub seed: u64,
    pub stream: u64,
    pub x0: Vec<f64>,
    pub record_path: bool,
    pub tail_radii: Vec<f64>,
}

impl SdeRunConfig {
    pub fn new(horizon: f64, step: f64, seed: u64, m: usize) -> Self {
        Self {
            horizon,
            step,
            burn_in: None,
            seed,
            stream: 0,
            x0: vec![0.0; m],
            record_path: false,
            tail_radii: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SdeSummary {
    pub rep: u64,
    pub seed: u64,
    pub steps: u64,
    pub horizon: f64,
    pub burn_in: f64,
    pub mean_ex_pos: Estimate,
    pub mean_ex_neg: Estimate,
    pub second_moment_ex_pos: Estimate,
    pub second_moment_ex_neg: Estimate,
    /// `(1 + <e, B1^{-1} B2 u^s(x)>) <e,x>^-` time-average.
    pub mean_weighted_idleness: Estimate,
    pub mean_x: Vec<f64>,
    pub quantiles_ex_pos: [f64; 3],
    pub quantiles_ex_neg: [f64; 3],
    pub tail_radii: Vec<f64>,
    pub tail_survival: Vec<f64>,
    pub tail_visits: Vec<u64>,
    pub final_x: Vec<f64>,
    /// Set when `step * |b|` exceeded 0.5 somewhere along the path.
    pub step_too_large: bool,
}

pub struct SdeOutput {
    pub summary: SdeSummary,
    pub path: Option<Vec<(f64, Vec<f64>)>>,
}

/// Simulates the controlled diffusion under a Markov control.
pub fn simulate_sde(
    spec: &DiffusionSpec<'_>,
    control: &MarkovControl,
    cfg: &SdeRunConfig,
) -> Result<SdeOutput, DiffusionError> {
    let m = spec.data.num_classes();
    if cfg.x0.len() != m {
        return Err(DiffusionError::BadConfig("x0 dimension mismatch".into()));
    }
    let drift_fn = |x: &[f64]| {
        let u = control.at(spec, x);
        let b = spec.drift(x, &u);
        (b, u)
    };
    simulate_sde_generic(spec, drift_fn, cfg)
}

/// Euler-Maruyama with an arbitrary drift map (used directly by tests that
/// reduce the integrator to known one-dimensional diffusions).
pub fn simulate_sde_generic<F>(
    spec: &DiffusionSpec<'_>,
    drift_fn: F,
    cfg: &SdeRunConfig,
) -> Result<SdeOutput, DiffusionError>
where
    F: Fn(&[f64]) -> (Vec<f64>, ControlPoint),
{
    if cfg.step <= 0.0 || cfg.horizon < cfg.step {
        return Err(DiffusionError::BadConfig(
            "need step > 0 and horizon >= step".into(),
        ));
    }
    let m = cfg.x0.len();
    let h = cfg.step;
    let sqrt_h = h.sqrt();
    let burn_in = cfg.burn_in.unwrap_or(0.2 * cfg.horizon);
    if burn_in > cfg.horizon {
        return Err(DiffusionError::BadConfig("burn-in exceeds horizon".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(cfg.stream);

    let steps_total = (cfg.horizon / h).floor() as u64;
    let batches = 20;
    let mut bm_ex_pos = BatchMeans::new(burn_in, cfg.horizon, batches);
    let mut bm_ex_neg = BatchMeans::new(burn_in, cfg.horizon, batches);
    let mut bm_ex_pos2 = BatchMeans::new(burn_in, cfg.horizon, batches);
    let mut bm_ex_neg2 = BatchMeans::new(burn_in, cfg.horizon, batches);
    let mut bm_weighted = BatchMeans::new(burn_in, cfg.horizon, batches);
    let mut mean_x = vec![crate::stats::WeightedMoments::default(); m];
    let mut hist_pos = WeightedHistogram::new(0.0, 50.0, 5000);
    let mut hist_neg = WeightedHistogram::new(0.0, 50.0, 5000);
    let mut tail = TailGrid::new(cfg.tail_radii.clone());
    let mut path = cfg.record_path.then(Vec::new);

    let mut x = cfg.x0.clone();
    let mut step_too_large = false;
    let mut t = 0.0;
    for _ in 0..steps_total {
        let (b, u) = drift_fn(&x);
        if b.iter().any(|v| h * v.abs() > 0.5) {
            step_too_large = true;
        }
        if t >= burn_in {
            let ex: f64 = x.iter().sum();
            let ex_pos = ex.max(0.0);
            let ex_neg = (-ex).max(0.0);
            bm_ex_pos.record(t, h, ex_pos);
            bm_ex_neg.record(t, h, ex_neg);
            bm_ex_pos2.record(t, h, ex_pos * ex_pos);
            bm_ex_neg2.record(t, h, ex_neg * ex_neg);
            let weight = 1.0 + spec.data.drift.idleness_weight(&u.us);
            bm_weighted.record(t, h, weight * ex_neg);
            for (i, &v) in x.iter().enumerate() {
                mean_x[i].record(v, h);
            }
            hist_pos.record(ex_pos, h);
            hist_neg.record(ex_neg, h);
            if !tail.radii.is_empty() {
                let norm1: f64 = x.iter().map(|v| v.abs()).sum();
                tail.record(norm1, h);
            }
        }
        if let Some(p) = path.as_mut() {
            p.push((t, x.clone()));
        }
        for i in 0..m {
            let noise: f64 = rng.sample(StandardNormal);
            x[i] += b[i] * h + spec.sigma[i] * sqrt_h * noise;
        }
        t += h;
    }
    if let Some(p) = path.as_mut() {
        p.push((t, x.clone()));
    }

    let summary = SdeSummary {
        rep: cfg.stream,
        seed: cfg.seed,
        steps: steps_total,
        horizon: cfg.horizon,
        burn_in,
        mean_ex_pos: bm_ex_pos.estimate(),
        mean_ex_neg: bm_ex_neg.estimate(),
        second_moment_ex_pos: bm_ex_pos2.estimate(),
        second_moment_ex_neg: bm_ex_neg2.estimate(),
        mean_weighted_idleness: bm_weighted.estimate(),
        mean_x: mean_x.iter().map(|a| a.mean()).collect(),
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
        tail_radii: tail.radii.clone(),
        tail_survival: if tail.total_weight > 0.0 {
            tail.survival()
        } else {
            vec![]
        },
        tail_visits: tail.visits_above.clone(),
        final_x: x,
        step_too_large,
    };
    Ok(SdeOutput { summary, path })
}

/// Default step `0.01 / max mu`: stiffness is set by the largest service rate.
pub fn default_step(data: &StaticData) -> f64 {
    let mu_max = data
        .params
        .mu
        .iter()
        .fold(0.0_f64, |acc, &v| acc.max(v))
        .max(1e-12);
    0.01 / mu_max
}

/// Parallel replications on separate RNG streams.
pub fn simulate_sde_reps(
    spec: &DiffusionSpec<'_>,
    control: &MarkovControl,
    base: &SdeRunConfig,
    reps: u64,
) -> Result<Vec<SdeSummary>, DiffusionError> {
    (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut cfg = base.clone();
            cfg.stream = r;
            cfg.record_path = false;
            simulate_sde(spec, control, &cfg).map(|o| o.summary)
        })
        .collect()
}
