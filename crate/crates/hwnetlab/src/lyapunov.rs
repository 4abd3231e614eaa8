//! Lyapunov machinery: the smoothed positive part `psi`, the exponential
//! Lyapunov function `V = V1 + V2`, numerical Foster-Lyapunov drift
//! certificates for the diffusion limit and the n-th system, the transience
//! test function, and the structural constants `kappa`, `kappa_tilde`, `n0`.
//!
//! The certificates are sampling-based: states are drawn on radial shells
//! (geometric radii times seeded random directions, plus directions targeted
//! into the cones `K_delta^+/-`), and controls range over all simplex vertex
//! pairs, which suffices because the drift is affine in the control.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::diffusion::{C2Fn, ControlPoint, DiffusionSpec};
use crate::policies::{max_service_allocation, theta_unscaled};
use crate::prelimit::{effective_ell, prelimit_generator_apply};
use crate::statics::{ScaleData, StaticData, StaticsError};
use crate::stats::{linear_fit, LinearFit};

#[derive(Debug, Error)]
pub enum CertifyError {
    #[error("certificate not applicable: {0}")]
    NotApplicable(String),
    #[error("certification failed: {0}")]
    CertificationFailed(String),
    #[error("n = {n} is not above n0 = {n0}")]
    NBelowN0 { n: u64, n0: u64 },
    #[error("beta = {beta} outside the admissible range (0, {max})")]
    BetaOutOfRange { beta: f64, max: f64 },
    #[error("subset enumeration infeasible for {0} pools")]
    TooManyPools(usize),
    #[error(transparent)]
    Statics(#[from] StaticsError),
}

// ---------------------------------------------------------------------------
// The smoothed positive part
// ---------------------------------------------------------------------------

/// `psi`: convex C^2 function equal to `-1/2` below `-1`, to `t` above `0`,
/// and to `(t+1)^3 - (t+1)^4/2 - 1/2` in between.
pub fn psi(t: f64) -> f64 {
    if t <= -1.0 {
        -0.5
    } else if t >= 0.0 {
        t
    } else {
        let s = t + 1.0;
        s * s * s - 0.5 * s * s * s * s - 0.5
    }
}

pub fn psi_d1(t: f64) -> f64 {
    if t <= -1.0 {
        0.0
    } else if t >= 0.0 {
        1.0
    } else {
        let s = t + 1.0;
        3.0 * s * s - 2.0 * s * s * s
    }
}

pub fn psi_d2(t: f64) -> f64 {
    if !(-1.0..0.0).contains(&t) {
        0.0
    } else {
        let s = t + 1.0;
        6.0 * s - 6.0 * s * s
    }
}

/// `psi_eps(t) = psi(eps t)` with chain-rule derivatives.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SmoothedPositivePart {
    pub epsilon: f64,
}

impl SmoothedPositivePart {
    pub fn new(epsilon: f64) -> Self {
        assert!(epsilon > 0.0);
        Self { epsilon }
    }

    pub fn value(&self, t: f64) -> f64 {
        psi(self.epsilon * t)
    }

    pub fn d1(&self, t: f64) -> f64 {
        self.epsilon * psi_d1(self.epsilon * t)
    }

    pub fn d2(&self, t: f64) -> f64 {
        self.epsilon * self.epsilon * psi_d2(self.epsilon * t)
    }
}

/// `psi_eps` and its first two derivatives, selected by `order`.
pub fn psi_eval(t: f64, epsilon: f64, order: u8) -> f64 {
    let p = SmoothedPositivePart::new(epsilon);
    match order {
        0 => p.value(t),
        1 => p.d1(t),
        2 => p.d2(t),
        _ => panic!("order must be 0, 1 or 2"),
    }
}

// ---------------------------------------------------------------------------
// The Lyapunov function V = exp(theta Psi(-x)) + exp(Psi(x))
// ---------------------------------------------------------------------------

/// Parameters of `V`: the tilt `epsilon`, the weight `theta`, and the
/// diagonal of `B1` (the limit's or the n-th system's, as appropriate).
#[derive(Debug, Clone, Serialize)]
pub struct LyapunovConfig {
    pub epsilon: f64,
    pub theta: f64,
    pub mu_tilde: Vec<f64>,
}

impl LyapunovConfig {
    /// The limit calibration:
    /// `eps = (rho/3m) (sum_i lambda_i (3 mu_i + 2) / mu_i^2)^{-1}`.
    pub fn limit(data: &StaticData, theta: Option<f64>) -> Result<Self, CertifyError> {
        if !data.class.is_covered() {
            return Err(CertifyError::NotApplicable(
                "general-tree networks are outside the covered classes".into(),
            ));
        }
        if data.rho <= 0.0 {
            return Err(CertifyError::NotApplicable(format!(
                "spare capacity rho = {} is not positive",
                data.rho
            )));
        }
        let mu_tilde = data.drift.diag();
        let m = mu_tilde.len() as f64;
        let denom: f64 = data
            .params
            .lambda
            .iter()
            .zip(&mu_tilde)
            .map(|(&l, &mt)| l * (3.0 * mt + 2.0) / (mt * mt))
            .sum();
        let epsilon = data.rho / (3.0 * m) / denom;
        let theta = theta.unwrap_or_else(|| theta_threshold(data, &data.params.mu));
        Ok(Self {
            epsilon,
            theta,
            mu_tilde,
        })
    }

    /// The n-th system calibration with the extra `exp(-n^{-1/2} sum 1/mu_i)`
    /// factor and the rates of the n-th system.
    pub fn prelimit(
        data: &StaticData,
        scale: &ScaleData,
        theta: Option<f64>,
    ) -> Result<Self, CertifyError> {
        if !data.class.is_covered() {
            return Err(CertifyError::NotApplicable(
                "general-tree networks are outside the covered classes".into(),
            ));
        }
        if scale.rho_n <= 0.0 {
            return Err(CertifyError::NotApplicable(format!(
                "spare capacity rho_n = {} is not positive at n = {}",
                scale.rho_n, scale.n
            )));
        }
        let mu_tilde = scale.drift_n.diag();
        let m = mu_tilde.len() as f64;
        let nf = scale.n as f64;
        let denom: f64 = scale
            .scaled
            .lambda_n
            .iter()
            .zip(&mu_tilde)
            .map(|(&l, &mt)| (l / nf) * (3.0 * mt + 2.0) / (mt * mt))
            .sum();
        let damp = (-(1.0 / nf.sqrt()) * mu_tilde.iter().map(|m| 1.0 / m).sum::<f64>()).exp();
        let epsilon = scale.rho_n / (3.0 * m) / denom * damp;
        let theta = theta.unwrap_or_else(|| theta_threshold(data, &scale.scaled.mu_n));
        Ok(Self {
            epsilon,
            theta,
            mu_tilde,
        })
    }

    pub fn m(&self) -> usize {
        self.mu_tilde.len()
    }

    /// `Psi(x) = sum_i psi_eps(x_i) / mu_i`.
    pub fn big_psi(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.mu_tilde)
            .map(|(&xi, &mt)| psi(self.epsilon * xi) / mt)
            .sum()
    }

    pub fn log_v1(&self, x: &[f64]) -> f64 {
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        self.theta * self.big_psi(&neg)
    }

    pub fn log_v2(&self, x: &[f64]) -> f64 {
        self.big_psi(x)
    }

    /// `(V1, V2, V)` in linear space; overflows to infinity far out, where
    /// the ratio forms below must be used instead.
    pub fn value(&self, x: &[f64]) -> (f64, f64, f64) {
        let v1 = self.log_v1(x).exp();
        let v2 = self.log_v2(x).exp();
        (v1, v2, v1 + v2)
    }

    /// Per-coordinate `d/dx_i log V1` and `d/dx_i log V2`.
    pub fn grad_logs(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let eps = self.epsilon;
        let g1 = x
            .iter()
            .zip(&self.mu_tilde)
            .map(|(&xi, &mt)| -self.theta * eps * psi_d1(-eps * xi) / mt)
            .collect();
        let g2 = x
            .iter()
            .zip(&self.mu_tilde)
            .map(|(&xi, &mt)| eps * psi_d1(eps * xi) / mt)
            .collect();
        (g1, g2)
    }

    /// Per-coordinate `d^2/dx_i^2 log V1` and `log V2`.
    pub fn hess_logs(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let eps = self.epsilon;
        let h1 = x
            .iter()
            .zip(&self.mu_tilde)
            .map(|(&xi, &mt)| self.theta * eps * eps * psi_d2(-eps * xi) / mt)
            .collect();
        let h2 = x
            .iter()
            .zip(&self.mu_tilde)
            .map(|(&xi, &mt)| eps * eps * psi_d2(eps * xi) / mt)
            .collect();
        (h1, h2)
    }

    /// Softmax weights `(V1/V, V2/V)` computed in log space.
    pub fn weights(&self, x: &[f64]) -> (f64, f64) {
        let w1 = self.log_v1(x);
        let w2 = self.log_v2(x);
        let m = w1.max(w2);
        let e1 = (w1 - m).exp();
        let e2 = (w2 - m).exp();
        (e1 / (e1 + e2), e2 / (e1 + e2))
    }

    /// `<b, grad V_k> / V_k` for `k = 1, 2`.
    pub fn drift_ratios(&self, x: &[f64], b: &[f64]) -> (f64, f64) {
        let (g1, g2) = self.grad_logs(x);
        let f1 = b.iter().zip(&g1).map(|(a, c)| a * c).sum();
        let f2 = b.iter().zip(&g2).map(|(a, c)| a * c).sum();
        (f1, f2)
    }

    /// `L V_k / V_k` given drift `b` and diffusion diagonal `a`.
    pub fn generator_ratios(&self, x: &[f64], b: &[f64], a: &[f64]) -> (f64, f64) {
        let (g1, g2) = self.grad_logs(x);
        let (h1, h2) = self.hess_logs(x);
        let mut r1 = 0.0;
        let mut r2 = 0.0;
        for i in 0..x.len() {
            r1 += 0.5 * a[i] * (g1[i] * g1[i] + h1[i]) + b[i] * g1[i];
            r2 += 0.5 * a[i] * (g2[i] * g2[i] + h2[i]) + b[i] * g2[i];
        }
        (r1, r2)
    }

    /// `L V / V` combining the two parts with their softmax weights.
    pub fn generator_ratio(&self, x: &[f64], b: &[f64], a: &[f64]) -> f64 {
        let (p1, p2) = self.weights(x);
        let (r1, r2) = self.generator_ratios(x, b, a);
        p1 * r1 + p2 * r2
    }

    /// Value, gradient and diagonal Hessian of `V` (with the two parts),
    /// in linear space.
    pub fn eval(&self, x: &[f64]) -> LyapunovEval {
        let (v1, v2, v) = self.value(x);
        let (g1, g2) = self.grad_logs(x);
        let (h1, h2) = self.hess_logs(x);
        let m = x.len();
        let mut grad = vec![0.0; m];
        let mut hess_diag = vec![0.0; m];
        for i in 0..m {
            grad[i] = v1 * g1[i] + v2 * g2[i];
            hess_diag[i] = v1 * (g1[i] * g1[i] + h1[i]) + v2 * (g2[i] * g2[i] + h2[i]);
        }
        LyapunovEval {
            v1,
            v2,
            v,
            grad,
            hess_diag,
        }
    }
}

/// Full derivative bundle of `V = V1 + V2` at a point.
#[derive(Debug, Clone, Serialize)]
pub struct LyapunovEval {
    pub v1: f64,
    pub v2: f64,
    pub v: f64,
    pub grad: Vec<f64>,
    pub hess_diag: Vec<f64>,
}

/// Class-specific sufficient threshold `theta_0`.
///
/// N-network: `2 (eta v 1/eta)` with `eta` the ratio of the shared class's
/// two rates; dominant pool: `2 max_i mu_i1 / min_i mu_i1`;
/// class-dependent: `2 mu_max / mu_min`.
pub fn theta_threshold(data: &StaticData, mu: &[f64]) -> f64 {
    let topo = &data.topo;
    if let Ok((shared, private, _only, both)) = crate::policies::n_network_roles(topo) {
        let eta = mu[topo.edge_index(both, private).unwrap()]
            / mu[topo.edge_index(both, shared).unwrap()];
        return 2.0 * eta.max(1.0 / eta);
    }
    if let Some(p) = data.class.dominant_pool {
        let rates: Vec<f64> = (0..topo.num_classes())
            .map(|i| mu[topo.edge_index(i, p).unwrap()])
            .collect();
        let max = rates.iter().fold(f64::MIN, |a, &b| a.max(b));
        let min = rates.iter().fold(f64::MAX, |a, &b| a.min(b));
        return 2.0 * max / min;
    }
    // Class-dependent: per-class rates.
    let rates: Vec<f64> = (0..topo.num_classes())
        .map(|i| mu[topo.edge_index(i, topo.pools_of(i)[0]).unwrap()])
        .collect();
    let max = rates.iter().fold(f64::MIN, |a, &b| a.max(b));
    let min = rates.iter().fold(f64::MAX, |a, &b| a.min(b));
    2.0 * max / min
}

/// `V` as a C^2 function for generator evaluation at moderate `x`.
pub struct LyapunovFn<'a>(pub &'a LyapunovConfig);

impl C2Fn for LyapunovFn<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        let (_, _, v) = self.0.value(x);
        v
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let (v1, v2, _) = self.0.value(x);
        let (g1, g2) = self.0.grad_logs(x);
        for i in 0..x.len() {
            out[i] = v1 * g1[i] + v2 * g2[i];
        }
    }

    fn hessian_diag(&self, x: &[f64], out: &mut [f64]) {
        let (v1, v2, _) = self.0.value(x);
        let (g1, g2) = self.0.grad_logs(x);
        let (h1, h2) = self.0.hess_logs(x);
        for i in 0..x.len() {
            out[i] = v1 * (g1[i] * g1[i] + h1[i]) + v2 * (g2[i] * g2[i] + h2[i]);
        }
    }
}

// ---------------------------------------------------------------------------
// Sampling plans
// ---------------------------------------------------------------------------

/// Radial-shell sampling plan shared by the certificates.
#[derive(Debug, Clone, Serialize)]
pub struct SamplePlan {
    /// Largest `||x||_1` sampled.
    pub radius: f64,
    /// Number of geometric shells.
    pub shells: usize,
    /// Random directions per shell (on top of targeted cone directions).
    pub directions: usize,
    pub seed: u64,
    /// Cone apertures for the region checks.
    pub delta_grid: Vec<f64>,
    /// Fraction of the radius beyond which `L V + decay V` must be negative.
    pub core_fraction: f64,
}

impl SamplePlan {
    pub fn new(radius: f64) -> Self {
        Self {
            radius,
            shells: 24,
            directions: 32,
            seed: 0x9e3779b9,
            delta_grid: vec![0.9, 0.95, 0.99],
            core_fraction: 0.5,
        }
    }
}

/// L1-normalized directions: random, cone-targeted for each delta (both
/// signs), and the coordinate axes.
fn sample_directions(plan: &SamplePlan, m: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut dirs = Vec::new();
    let normalize = |mut d: Vec<f64>| -> Option<Vec<f64>> {
        let n1: f64 = d.iter().map(|v| v.abs()).sum();
        if n1 < 1e-12 {
            return None;
        }
        d.iter_mut().for_each(|v| *v /= n1);
        Some(d)
    };
    for i in 0..m {
        let mut d = vec![0.0; m];
        d[i] = 1.0;
        dirs.push(d.clone());
        d[i] = -1.0;
        dirs.push(d);
    }
    for _ in 0..plan.directions {
        let d: Vec<f64> = (0..m)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        if let Some(d) = normalize(d) {
            dirs.push(d);
        }
    }
    // Cone-targeted directions: convex blends of +-e/m with random noise so
    // that <e,d> >= delta ||d||_1 (resp. <= -delta) is guaranteed.
    for &delta in &plan.delta_grid {
        for sign in [1.0, -1.0] {
            for _ in 0..plan.directions / 2 {
                let g: Vec<f64> = (0..m)
                    .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                    .collect();
                let Some(g) = normalize(g) else { continue };
                let w_min = (1.0 + delta) / 2.0;
                let w = w_min + (1.0 - w_min) * rng.gen::<f64>();
                let d: Vec<f64> = g
                    .iter()
                    .map(|&gi| sign * w / m as f64 + (1.0 - w) * gi)
                    .collect();
                if let Some(d) = normalize(d) {
                    dirs.push(d);
                }
            }
        }
    }
    dirs
}

fn shell_radii(plan: &SamplePlan) -> Vec<f64> {
    let r_min = (plan.radius / 100.0).max(0.5);
    if plan.shells == 1 {
        return vec![plan.radius];
    }
    (0..plan.shells)
        .map(|k| r_min * (plan.radius / r_min).powf(k as f64 / (plan.shells - 1) as f64))
        .collect()
}

fn vertex_controls(m: usize, num_pools: usize) -> Vec<ControlPoint> {
    let mut out = Vec::with_capacity(m * num_pools);
    for i in 0..m {
        for j in 0..num_pools {
            out.push(ControlPoint::vertex(m, num_pools, i, j));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Drift certificates
// ---------------------------------------------------------------------------

/// Outcome of a numerical Foster-Lyapunov check.
///
/// `c0` is the smallest constant making `L V <= c0 - decay V` hold on every
/// sample. The certificate passes when (i) `L V + decay V` is negative (up
/// to slack) beyond `core_fraction * radius`, (ii) the cone inequality
/// `<b, grad V2>/V2 <= -cone_decay` holds at every `K_delta^+` sample, and
/// (iii) the shell maxima of `<b, grad V>/V` decay with radius (negative
/// fitted slope).
#[derive(Debug, Clone, Serialize)]
pub struct DriftCertificate {
    pub n: Option<u64>,
    pub c0: f64,
    pub decay: f64,
    pub radius: f64,
    pub samples: usize,
    /// Max of `L V / V + decay` (minus slack) over samples beyond the core cut.
    pub max_violation: f64,
    /// Largest sampled radius where `L V + decay V > 0`.
    pub core_radius: f64,
    /// Fit of shell maxima of `<b, grad V>/V` against radius (outer 3/4).
    pub linear_decay_fit: Option<LinearFit>,
    /// Max excess of `<b, grad V2>/V2 + cone_decay` over `K_delta^+` samples.
    pub cone_max_excess: f64,
    pub cone_decay: f64,
    /// Per-delta: does `V2 >= V1^2` hold on sampled `K_delta^+` outside the core?
    pub v2_dominates_on_cone: Vec<(f64, bool)>,
    pub theta: f64,
    pub epsilon: f64,
    /// Informational: does the certificate survive with `theta_0 / 4`?
    /// (The threshold is sufficient, not necessary.)
    pub quarter_theta_passed: Option<bool>,
    pub witness: Option<(Vec<f64>, usize)>,
    pub passed: bool,
}

/// Numerically certifies `L_u V <= C0 - (rho eps / 3m) V` for the diffusion
/// limit, over shell samples and all vertex controls.
pub fn certify_drift_diffusion(
    data: &StaticData,
    cfg: &LyapunovConfig,
    plan: &SamplePlan,
) -> Result<DriftCertificate, CertifyError> {
    if data.rho <= 0.0 {
        return Err(CertifyError::NotApplicable(format!(
            "rho = {} is not positive",
            data.rho
        )));
    }
    if !data.class.is_covered() {
        return Err(CertifyError::NotApplicable(
            "drift certification covers dominant-pool and class-dependent networks only".into(),
        ));
    }
    let m = data.num_classes();
    let spec = DiffusionSpec::new(data, true);
    let a = spec.a_diag();
    let decay = data.rho * cfg.epsilon / (3.0 * m as f64);
    let cone_decay = data.rho * cfg.epsilon / m as f64;
    let controls = vertex_controls(m, data.num_pools());

    let run = |c: &LyapunovConfig| {
        certify_generic(c, plan, None, decay, cone_decay, &controls, |x, u| {
            let b = spec.drift(x, u);
            let gen_ratio = c.generator_ratio(x, &b, &a);
            let (f1, f2) = c.drift_ratios(x, &b);
            let (p1, p2) = c.weights(x);
            PointEval {
                gen_ratio,
                drift_ratio_v: p1 * f1 + p2 * f2,
                drift_ratio_v2: f2,
            }
        })
    };
    let mut cert = run(cfg)?;
    // Informational sharpness probe at a quarter of the threshold.
    let quarter = LyapunovConfig {
        epsilon: cfg.epsilon,
        theta: cfg.theta / 4.0,
        mu_tilde: cfg.mu_tilde.clone(),
    };
    cert.quarter_theta_passed = run(&quarter).ok().map(|c| c.passed);
    Ok(cert)
}

/// Numerically certifies the prelimit drift inequality
/// `L^n V <= C0 - (rho_n eps_n / 4m) V` on lattice states of `S^n` under the
/// SWC action, and checks the `kappa` mismatch bound at every state.
///
/// `force` skips the `n > n0` admissibility guard; the inequality is still
/// evaluated honestly, the guard only encodes the sufficiency threshold of
/// the underlying estimates.
pub fn certify_drift_prelimit(
    data: &StaticData,
    scale: &ScaleData,
    cfg: &LyapunovConfig,
    plan: &SamplePlan,
    force: bool,
) -> Result<DriftCertificate, CertifyError> {
    if scale.rho_n <= 0.0 {
        return Err(CertifyError::NotApplicable(format!(
            "rho_n = {} is not positive at n = {}",
            scale.rho_n, scale.n
        )));
    }
    if !data.class.is_covered() {
        return Err(CertifyError::NotApplicable(
            "drift certification covers dominant-pool and class-dependent networks only".into(),
        ));
    }
    if !scale.centering.shifted {
        return Err(CertifyError::NotApplicable(
            "prelimit certification requires the shifted centering".into(),
        ));
    }
    let kappa = kappa_and_n0(data, scale.n)?;
    if let Some(n0) = kappa.n0 {
        if scale.n <= n0 && !force {
            return Err(CertifyError::NBelowN0 { n: scale.n, n0 });
        }
    }
    let m = data.num_classes();
    let decay = scale.rho_n * cfg.epsilon / (4.0 * m as f64);
    let cone_decay = scale.rho_n * cfg.epsilon / (2.0 * m as f64);
    let topo = &data.topo;
    let pool_sizes = scale.scaled.pool_sizes.clone();
    let kappa_bound = kappa.kappa.unwrap_or(0.0);

    // One evaluation per lattice state: the SWC action is a function of the
    // state, so the control axis collapses to a single entry. Requested
    // sample points are snapped onto the lattice S^n (which is bounded below
    // by x >= 0) and classified by their actual scaled coordinates.
    let controls = vec![ControlPoint::uniform(m, data.num_pools())];
    let vfun = LyapunovFn(cfg);
    let mut kappa_witness = None;
    let cert = certify_generic_mapped(
        cfg,
        plan,
        Some(scale.n),
        decay,
        cone_decay,
        &controls,
        &|x_hat_req| {
            let x = scale.lattice_state(x_hat_req);
            scale.x_hat(&x)
        },
        |x_hat, _u| {
            let x = scale
                .lattice_state(x_hat)
                .iter()
                .map(|&v| v.max(0))
                .collect::<Vec<_>>();
            let z = max_service_allocation(topo, &x, &pool_sizes, None);
            let theta = theta_unscaled(topo, &x, &pool_sizes, &z) as f64 / scale.sqrt_n();
            let pos: f64 = x_hat.iter().map(|v| v.max(0.0)).sum();
            let neg: f64 = x_hat.iter().map(|v| (-v).max(0.0)).sum();
            if theta > kappa_bound * pos.min(neg) + 1e-9 && kappa_witness.is_none() {
                kappa_witness = Some((x_hat.to_vec(), theta));
            }
            let (_, _, v) = cfg.value(x_hat);
            let lv = prelimit_generator_apply(&|y| vfun.value(y), data, scale, &x, &z);
            // Drift ratios for the cone and linear-decay checks.
            let mut b = effective_ell(scale);
            let z_hat = scale.z_hat(&z.z);
            for (k, &(i, _)) in topo.edges().iter().enumerate() {
                b[i] -= scale.scaled.mu_n[k] * z_hat[k];
            }
            let (f1, f2) = cfg.drift_ratios(x_hat, &b);
            let (p1, p2) = cfg.weights(x_hat);
            PointEval {
                gen_ratio: lv / v,
                drift_ratio_v: p1 * f1 + p2 * f2,
                drift_ratio_v2: f2,
            }
        },
    )?;
    if let Some((x_hat, theta)) = kappa_witness {
        return Err(CertifyError::CertificationFailed(format!(
            "kappa mismatch bound violated at {x_hat:?}: theta* = {theta}"
        )));
    }
    Ok(cert)
}

struct PointEval {
    /// `L V / V` (the exact generator for the prelimit).
    gen_ratio: f64,
    /// `<b, grad V> / V`.
    drift_ratio_v: f64,
    /// `<b, grad V2> / V2`.
    drift_ratio_v2: f64,
}

fn certify_generic<F>(
    cfg: &LyapunovConfig,
    plan: &SamplePlan,
    n: Option<u64>,
    decay: f64,
    cone_decay: f64,
    controls: &[ControlPoint],
    eval: F,
) -> Result<DriftCertificate, CertifyError>
where
    F: FnMut(&[f64], &ControlPoint) -> PointEval,
{
    certify_generic_mapped(cfg, plan, n, decay, cone_decay, controls, &|x| x.to_vec(), eval)
}

/// Shared certificate loop. `map_point` snaps a requested sample onto the
/// actual state space (identity for the diffusion, lattice rounding for the
/// n-th system); all bookkeeping uses the mapped point.
#[allow(clippy::too_many_arguments)]
fn certify_generic_mapped<F>(
    cfg: &LyapunovConfig,
    plan: &SamplePlan,
    n: Option<u64>,
    decay: f64,
    cone_decay: f64,
    controls: &[ControlPoint],
    map_point: &dyn Fn(&[f64]) -> Vec<f64>,
    mut eval: F,
) -> Result<DriftCertificate, CertifyError>
where
    F: FnMut(&[f64], &ControlPoint) -> PointEval,
{
    let m = cfg.m();
    let radii = shell_radii(plan);
    let dirs = sample_directions(plan, m);
    let core_cut = plan.core_fraction * plan.radius;
    let delta_min = plan
        .delta_grid
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);

    let mut c0 = 0.0_f64;
    let mut samples = 0_usize;
    let mut max_violation = f64::NEG_INFINITY;
    let mut core_radius = 0.0_f64;
    let mut cone_max_excess = f64::NEG_INFINITY;
    let mut witness = None;
    let mut shell_max: Vec<(f64, f64)> = Vec::new();
    let mut v2_dom: Vec<(f64, bool)> = plan.delta_grid.iter().map(|&d| (d, true)).collect();

    let mut points: Vec<Vec<f64>> = vec![map_point(&vec![0.0; m])];
    let mut seen = std::collections::BTreeSet::new();
    for &r in &radii {
        for d in &dirs {
            let req: Vec<f64> = d.iter().map(|&v| v * r).collect();
            let mapped = map_point(&req);
            let key: Vec<i64> = mapped.iter().map(|v| (v * 1e9).round() as i64).collect();
            if seen.insert(key) {
                points.push(mapped);
            }
        }
    }

    for x in &points {
        let norm1: f64 = x.iter().map(|v| v.abs()).sum();
        let ex: f64 = x.iter().sum();
        let in_cone_pos = norm1 > 0.0 && ex >= delta_min * norm1;
        let mut worst_here = f64::NEG_INFINITY;
        for (ui, u) in controls.iter().enumerate() {
            let ev = eval(x, u);
            samples += 1;
            let excess = ev.gen_ratio + decay;
            worst_here = worst_here.max(ev.drift_ratio_v);
            if excess > 0.0 {
                // Positive part: contributes to C0 (in linear space) and, in
                // the far region, counts as a violation.
                let logv = cfg.log_v1(x).max(cfg.log_v2(x));
                if logv < 700.0 {
                    let (_, _, v) = cfg.value(x);
                    c0 = c0.max(excess * v);
                } else {
                    return Err(CertifyError::CertificationFailed(format!(
                        "unbounded positive drift at {x:?} (log V = {logv:.1})"
                    )));
                }
                core_radius = core_radius.max(norm1);
            }
            if norm1 > core_cut {
                let slack = 1e-8 * (1.0 + ev.gen_ratio.abs());
                let viol = excess - slack;
                if viol > max_violation {
                    max_violation = viol;
                    if viol > 0.0 {
                        witness = Some((x.clone(), ui));
                    }
                }
            }
            if in_cone_pos {
                let slack = 1e-8 * (1.0 + ev.drift_ratio_v2.abs());
                let cone_excess = ev.drift_ratio_v2 + cone_decay - slack;
                if cone_excess > cone_max_excess {
                    cone_max_excess = cone_excess;
                    if cone_excess > 0.0 && witness.is_none() {
                        witness = Some((x.clone(), ui));
                    }
                }
            }
        }
        if norm1 > 0.0 {
            shell_max.push((norm1, worst_here));
        }
        // V2 >= V1^2 on K_delta^+ outside the core, per cone aperture.
        for (delta, ok) in v2_dom.iter_mut() {
            if ex >= *delta * norm1 && norm1 > core_cut && cfg.log_v2(x) < 2.0 * cfg.log_v1(x) {
                *ok = false;
            }
        }
    }

    // Linear decay of the drift part: fit shell maxima against radius over
    // the outer three quarters.
    let mut by_radius = std::collections::BTreeMap::<u64, f64>::new();
    for (r, v) in &shell_max {
        let key = (r * 1e6) as u64;
        let e = by_radius.entry(key).or_insert(f64::NEG_INFINITY);
        *e = e.max(*v);
    }
    let xs: Vec<f64> = by_radius.keys().map(|&k| k as f64 / 1e6).collect();
    let ys: Vec<f64> = by_radius.values().cloned().collect();
    let outer: Vec<usize> = (0..xs.len())
        .filter(|&i| xs[i] >= plan.radius * 0.25)
        .collect();
    let fit = linear_fit(
        &outer.iter().map(|&i| xs[i]).collect::<Vec<_>>(),
        &outer.iter().map(|&i| ys[i]).collect::<Vec<_>>(),
    );

    let negativity_ok = max_violation <= 0.0 && core_radius <= core_cut;
    let cone_ok = cone_max_excess <= 0.0;
    let slope_ok = fit.map_or(false, |f| f.slope < 0.0);
    let passed = negativity_ok && cone_ok && slope_ok;

    Ok(DriftCertificate {
        n,
        c0,
        decay,
        radius: plan.radius,
        samples,
        max_violation,
        core_radius,
        linear_decay_fit: fit,
        cone_max_excess,
        cone_decay,
        v2_dominates_on_cone: v2_dom,
        theta: cfg.theta,
        epsilon: cfg.epsilon,
        quarter_theta_passed: None,
        witness: if passed { None } else { witness },
        passed,
    })
}

// ---------------------------------------------------------------------------
// Transience certificate
// ---------------------------------------------------------------------------

/// `H(x) = tanh(beta <e, B1^{-1} x>)` as a C^2 function.
pub struct TransienceFn {
    pub beta: f64,
    /// `w = B1^{-T} e`, so `<e, B1^{-1} x> = <w, x>`.
    pub w: Vec<f64>,
}

impl TransienceFn {
    pub fn new(data: &StaticData, beta: f64) -> Self {
        let w = solve_b1_transpose(data, &vec![1.0; data.num_classes()]);
        Self { beta, w }
    }

    fn s(&self, x: &[f64]) -> f64 {
        self.beta * self.w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
    }

    /// `H(x + step e_i) - H(x)` via `tanh a - tanh b = sinh(a-b)/(cosh a cosh b)`,
    /// which stays exact where naive tanh differences saturate to zero.
    pub fn increment(&self, x: &[f64], i: usize, step: f64) -> f64 {
        let b = self.s(x);
        let d = self.beta * self.w[i] * step;
        let a = b + d;
        d.sinh() / (a.cosh() * b.cosh())
    }
}

impl C2Fn for TransienceFn {
    fn value(&self, x: &[f64]) -> f64 {
        self.s(x).tanh()
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let s = self.s(x);
        let sech2 = 1.0 / (s.cosh() * s.cosh());
        for i in 0..x.len() {
            out[i] = self.beta * sech2 * self.w[i];
        }
    }

    fn hessian_diag(&self, x: &[f64], out: &mut [f64]) {
        let s = self.s(x);
        let sech2 = 1.0 / (s.cosh() * s.cosh());
        let t = s.tanh();
        for i in 0..x.len() {
            out[i] = -2.0 * self.beta * self.beta * t * sech2 * self.w[i] * self.w[i];
        }
    }
}

/// Solves `B1^T w = rhs` by back substitution in the triangular order.
fn solve_b1_transpose(data: &StaticData, rhs: &[f64]) -> Vec<f64> {
    let order = &data.drift.class_order;
    let b1 = &data.drift.b1;
    let mut w = vec![0.0; rhs.len()];
    for (pos, &i) in order.iter().enumerate().rev() {
        let mut s = rhs[i];
        for &k in order.iter().skip(pos + 1) {
            s -= b1[k][i] * w[k];
        }
        w[i] = s / b1[i][i];
    }
    w
}

#[derive(Debug, Clone, Serialize)]
pub struct TransienceReport {
    pub beta: f64,
    pub beta_max: f64,
    pub samples: usize,
    /// Min of `L_u H` over diffusion samples and vertex controls (must be > 0).
    pub min_margin_diffusion: f64,
    /// Min of `L^n H` over lattice samples under SWC, when `n` was given.
    pub min_margin_prelimit: Option<f64>,
    pub n: Option<u64>,
    pub passed: bool,
}

/// Verifies the submartingale property of the transience test function when
/// the spare capacity is negative.
pub fn transience_certificate(
    data: &StaticData,
    beta: f64,
    plan: &SamplePlan,
    n: Option<u64>,
) -> Result<TransienceReport, CertifyError> {
    if data.rho >= 0.0 {
        return Err(CertifyError::NotApplicable(format!(
            "transience requires rho < 0, got {}",
            data.rho
        )));
    }
    let spec = DiffusionSpec::new(data, false);
    let m = data.num_classes();
    // beta_max = <e, B1^{-1} ell> / |sigma^T B1^{-1} e|^2.
    let w = solve_b1_transpose(data, &vec![1.0; m]);
    let sigma_norm2: f64 = spec
        .a_diag()
        .iter()
        .zip(&w)
        .map(|(&a, &wi)| a * wi * wi)
        .sum();
    let e_b1_ell: f64 = data.drift.solve_b1(&data.ell)?.iter().sum();
    let beta_max = e_b1_ell / sigma_norm2;
    if !(beta > 0.0 && beta < beta_max) {
        return Err(CertifyError::BetaOutOfRange {
            beta,
            max: beta_max,
        });
    }

    let h = TransienceFn::new(data, beta);
    let radii = shell_radii(plan);
    let dirs = sample_directions(plan, m);
    let controls = vertex_controls(m, data.num_pools());
    let mut min_margin = f64::INFINITY;
    let mut samples = 0;
    for &r in &radii {
        for d in &dirs {
            let x: Vec<f64> = d.iter().map(|&v| v * r).collect();
            for u in &controls {
                let val = spec.generator_apply(&h, &x, u);
                min_margin = min_margin.min(val);
                samples += 1;
            }
        }
    }

    let min_margin_prelimit = match n {
        Some(n) => {
            let scale = data.at_scale(n, false)?;
            if scale.rho_n >= 0.0 {
                return Err(CertifyError::NotApplicable(format!(
                    "prelimit transience requires rho_n < 0, got {} at n = {n}",
                    scale.rho_n
                )));
            }
            let mut min_pre = f64::INFINITY;
            let step = 1.0 / scale.sqrt_n();
            for &r in &radii {
                for d in &dirs {
                    let x_hat_req: Vec<f64> = d.iter().map(|&v| v * r).collect();
                    let x = scale.lattice_state(&x_hat_req);
                    let x_hat = scale.x_hat(&x);
                    let z =
                        max_service_allocation(&data.topo, &x, &scale.scaled.pool_sizes, None);
                    // Exact generator with saturation-safe tanh increments.
                    let mut val = 0.0;
                    for i in 0..m {
                        val += scale.scaled.lambda_n[i] * h.increment(&x_hat, i, step);
                    }
                    for (k, &(i, _)) in data.topo.edges().iter().enumerate() {
                        if z.z[k] > 0 {
                            val += scale.scaled.mu_n[k] * z.z[k] as f64
                                * h.increment(&x_hat, i, -step);
                        }
                    }
                    min_pre = min_pre.min(val);
                    samples += 1;
                }
            }
            Some(min_pre)
        }
        None => None,
    };

    let passed = min_margin > 0.0 && min_margin_prelimit.map_or(true, |v| v > 0.0);
    Ok(TransienceReport {
        beta,
        beta_max,
        samples,
        min_margin_diffusion: min_margin,
        min_margin_prelimit,
        n,
        passed,
    })
}

// ---------------------------------------------------------------------------
// kappa, kappa_tilde, n0
// ---------------------------------------------------------------------------

/// Structural constants bounding the idle/queue mismatch of SWC actions.
#[derive(Debug, Clone, Serialize)]
pub struct KappaBounds {
    /// Worst ratio of equilibrium allocations over proper pool subsets;
    /// `None` for single-pool networks (where `theta* = 0` always).
    pub kappa: Option<f64>,
    /// The subset attaining `kappa`.
    pub kappa_subset: Vec<usize>,
    /// Improved constant from the total-server bound.
    pub kappa_tilde: f64,
    /// Sufficiency threshold of the prelimit estimates; `None` when no
    /// formula applies (general trees) or the scan cannot terminate
    /// (`rho <= 0`).
    pub n0: Option<u64>,
    pub n: u64,
}

/// Computes `kappa`, `kappa_tilde` and `n0` at scale `n` using the shifted
/// centering of the n-th system.
pub fn kappa_and_n0(data: &StaticData, n: u64) -> Result<KappaBounds, CertifyError> {
    let num_pools = data.num_pools();
    if num_pools > 20 {
        return Err(CertifyError::TooManyPools(num_pools));
    }
    let scale = data.at_scale(n, true)?;
    let z_bar = &scale.centering.z_bar;
    let topo = &data.topo;

    let mut kappa: Option<f64> = None;
    let mut kappa_subset = Vec::new();
    if num_pools > 1 {
        for mask in 1u32..(1u32 << num_pools) - 1 {
            let subset: Vec<usize> = (0..num_pools).filter(|&j| mask >> j & 1 == 1).collect();
            let mut inner = 0.0; // edges into the subset from classes that see it
            let mut outer = 0.0; // edges from those classes to other pools
            for (k, &(i, j)) in topo.edges().iter().enumerate() {
                let class_sees_subset =
                    topo.pools_of(i).iter().any(|p| mask >> *p & 1 == 1);
                if !class_sees_subset {
                    continue;
                }
                if mask >> j & 1 == 1 {
                    inner += z_bar[k];
                } else {
                    outer += z_bar[k];
                }
            }
            if inner <= 0.0 {
                continue;
            }
            let ratio = inner / (inner + outer);
            if kappa.map_or(true, |k| ratio > k) {
                kappa = Some(ratio);
                kappa_subset = subset;
            }
        }
    }

    let total_servers: i64 = scale.scaled.pool_sizes.iter().sum();
    let min_zbar = z_bar.iter().cloned().fold(f64::INFINITY, f64::min);
    let kappa_tilde = n as f64 * min_zbar / total_servers as f64;

    let n0 = compute_n0(data);
    Ok(KappaBounds {
        kappa,
        kappa_subset,
        kappa_tilde,
        n0,
        n: scale.n,
    })
}

/// Scans the defining inequality of `n0`:
/// dominant pool: `1/sqrt(n) >= eps_n min_i zbar^n_{i, pool}`;
/// class-dependent: `1/sqrt(n) >= (eps_n / 2m) min_(i~j) zbar^n_ij`.
fn compute_n0(data: &StaticData) -> Option<u64> {
    if !data.class.is_covered() || data.rho <= 0.0 {
        return None;
    }
    let m = data.num_classes() as f64;
    // The limit value of the right-hand side sets a safe scan horizon.
    let eps_inf = LyapunovConfig::limit(data, Some(1.0)).ok()?.epsilon;
    let rhs_limit = match data.class.dominant_pool {
        Some(p) => {
            let min_z = data
                .topo
                .edges()
                .iter()
                .zip(&data.fluid.z_star)
                .filter(|(&(_, j), _)| j == p)
                .map(|(_, &z)| z)
                .fold(f64::INFINITY, f64::min);
            eps_inf * min_z
        }
        None => {
            let min_z = data
                .fluid
                .z_star
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            eps_inf / (2.0 * m) * min_z
        }
    };
    if rhs_limit <= 0.0 {
        return None;
    }
    let cap = ((4.0 / (rhs_limit * rhs_limit)).ceil() as u64).max(64);
    let mut n0 = 0u64;
    for n in 1..=cap {
        let bad = match data.at_scale(n, true) {
            Err(_) => true,
            Ok(scale) => match LyapunovConfig::prelimit(data, &scale, Some(1.0)) {
                Err(_) => true,
                Ok(cfg) => {
                    let rhs = match data.class.dominant_pool {
                        Some(p) => {
                            let min_z = data
                                .topo
                                .edges()
                                .iter()
                                .zip(&scale.centering.z_bar)
                                .filter(|(&(_, j), _)| j == p)
                                .map(|(_, &z)| z)
                                .fold(f64::INFINITY, f64::min);
                            cfg.epsilon * min_z
                        }
                        None => {
                            let min_z = scale
                                .centering
                                .z_bar
                                .iter()
                                .cloned()
                                .fold(f64::INFINITY, f64::min);
                            cfg.epsilon / (2.0 * m) * min_z
                        }
                    };
                    1.0 / (n as f64).sqrt() >= rhs
                }
            },
        };
        if bad {
            n0 = n;
        }
    }
    Some(n0)
}

/// Largest sampled radius within which every lattice state admits a jointly
/// work conserving SWC action (`theta* = 0`); an empirical stand-in for the
/// non-constructive `M0 sqrt(n)` bound. Radii are measured at the actual
/// lattice points (the lattice is bounded below by `x >= 0`).
pub fn estimate_jwc_radius(data: &StaticData, scale: &ScaleData, plan: &SamplePlan) -> f64 {
    let dirs = sample_directions(plan, data.num_classes());
    let mut min_mismatch = f64::INFINITY;
    let mut max_clean: f64 = 0.0;
    for &r in &shell_radii(plan) {
        for d in &dirs {
            let req: Vec<f64> = d.iter().map(|&v| v * r).collect();
            let x = scale.lattice_state(&req);
            let x_hat = scale.x_hat(&x);
            let norm1: f64 = x_hat.iter().map(|v| v.abs()).sum();
            let z = max_service_allocation(&data.topo, &x, &scale.scaled.pool_sizes, None);
            if theta_unscaled(&data.topo, &x, &scale.scaled.pool_sizes, &z) > 0 {
                min_mismatch = min_mismatch.min(norm1);
            } else if norm1 < min_mismatch {
                max_clean = max_clean.max(norm1);
            }
        }
    }
    max_clean.min(min_mismatch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{LimitParams, Topology};

    fn reference() -> StaticData {
        let topo = Topology::validate(2, 2, &[(0, 0), (1, 0), (0, 1)]).unwrap();
        let params = LimitParams::new(
            &topo,
            vec![1.5, 0.5],
            vec![1.0, 2.0, 1.0],
            vec![1.0, 0.5],
            vec![0.0, 0.0],
            vec![0.0, 0.0, 0.0],
            vec![1.0, 0.0],
        )
        .unwrap();
        StaticData::compute(topo, params).unwrap()
    }

    #[test]
    fn psi_anchor_values() {
        assert_eq!(psi(-1.0), -0.5);
        assert_eq!(psi(-5.0), -0.5);
        assert_eq!(psi(0.0), 0.0);
        assert_eq!(psi(2.0), 2.0);
    }

    #[test]
    fn psi_is_c2_at_knots() {
        for knot in [-1.0_f64, 0.0] {
            // Values and first derivatives match across the knot.
            assert!((psi(knot - 1e-12) - psi(knot + 1e-12)).abs() < 1e-11);
            assert!((psi_d1(knot - 1e-12) - psi_d1(knot + 1e-12)).abs() < 1e-9);
            // One-sided second differences converge to the same value.
            for grid in [1e-3, 1e-4] {
                let left = (psi(knot) - 2.0 * psi(knot - grid) + psi(knot - 2.0 * grid))
                    / (grid * grid);
                let right = (psi(knot + 2.0 * grid) - 2.0 * psi(knot + grid) + psi(knot))
                    / (grid * grid);
                assert!(
                    (left - right).abs() < 40.0 * grid,
                    "psi'' mismatch at {knot}: {left} vs {right} (grid {grid})"
                );
            }
        }
    }

    #[test]
    fn psi_second_derivative_bounded() {
        let eps = 0.25;
        let p = SmoothedPositivePart::new(eps);
        let bound = 1.5 * eps * eps;
        let mut max_seen: f64 = 0.0;
        let mut t = -8.0;
        while t <= 2.0 {
            max_seen = max_seen.max(p.d2(t));
            t += 1e-4;
        }
        assert!(max_seen <= bound + 1e-12, "{max_seen} > {bound}");
        // The bound is attained (at eps t = -1/2).
        assert!(max_seen > 0.99 * bound);
    }

    #[test]
    fn psi_slope_product_minimum() {
        // min over t of psi_eps'(t) t = -3 (39 + 55 sqrt 33) / 4096 at
        // eps t = -(1 + sqrt 33) / 16, independent of eps.
        let expected = -3.0 * (39.0 + 55.0 * 33.0_f64.sqrt()) / 4096.0;
        let argmin = -(1.0 + 33.0_f64.sqrt()) / 16.0;
        for eps in [1.0, 0.25, 1.0 / 60.0] {
            let p = SmoothedPositivePart::new(eps);
            let mut min_seen = f64::INFINITY;
            let mut arg_seen = 0.0;
            let mut s = -1.0;
            while s <= 0.0 {
                let t = s / eps;
                let val = p.d1(t) * t;
                if val < min_seen {
                    min_seen = val;
                    arg_seen = s;
                }
                s += 1e-6;
            }
            assert!(
                (min_seen - expected).abs() < 1e-9,
                "eps {eps}: min {min_seen} vs {expected}"
            );
            assert!((arg_seen - argmin).abs() < 1e-4);
            assert!(min_seen >= -0.5);
        }
    }

    #[test]
    fn psi_slope_inequality_holds_exactly() {
        // sum_i psi_eps'(x_i) x_i >= eps ||x^+||_1 - m/2.
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100_000 {
            let m = rng.gen_range(1..=4);
            let eps = rng.gen_range(0.01..1.0);
            let p = SmoothedPositivePart::new(eps);
            let x: Vec<f64> = (0..m).map(|_| rng.gen_range(-100.0..100.0)).collect();
            let lhs: f64 = x.iter().map(|&xi| p.d1(xi) * xi).sum();
            let pos: f64 = x.iter().map(|v| v.max(0.0)).sum();
            assert!(
                lhs >= eps * pos - m as f64 / 2.0 - 1e-12,
                "violated at {x:?} eps {eps}"
            );
        }
    }

    #[test]
    fn limit_epsilon_reference_value() {
        let data = reference();
        let cfg = LyapunovConfig::limit(&data, None).unwrap();
        assert!((cfg.epsilon - 1.0 / 60.0).abs() < 1e-12);
        assert!(
            (cfg.theta - 4.0).abs() < 1e-12,
            "theta0 = 2 (eta v 1/eta) = 4"
        );
    }

    #[test]
    fn v_at_anchor_points() {
        let data = reference();
        let cfg = LyapunovConfig::limit(&data, None).unwrap();
        let (v1, v2, v) = cfg.value(&[0.0, 0.0]);
        assert!((v1 - 1.0).abs() < 1e-12);
        assert!((v2 - 1.0).abs() < 1e-12);
        assert!((v - 2.0).abs() < 1e-12);
        // x = (60, 0): Psi(x) = psi(1) + psi(0) = 1; Psi(-x) = psi(-1) + psi(0) = -1/2.
        let (v1, v2, _) = cfg.value(&[60.0, 0.0]);
        assert!((v2 - 1.0_f64.exp()).abs() < 1e-10);
        assert!((v1 - (-0.5 * cfg.theta).exp()).abs() < 1e-10);
    }

    #[test]
    fn v_gradient_matches_finite_differences() {
        use rand::Rng;
        let data = reference();
        let cfg = LyapunovConfig::limit(&data, None).unwrap();
        let f = LyapunovFn(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x = [rng.gen_range(-80.0..80.0), rng.gen_range(-80.0..80.0)];
            let mut grad = [0.0; 2];
            f.gradient(&x, &mut grad);
            for i in 0..2 {
                let h = 1e-6 * (1.0 + x[i].abs());
                let mut xp = x;
                xp[i] += h;
                let mut xm = x;
                xm[i] -= h;
                let fd = (f.value(&xp) - f.value(&xm)) / (2.0 * h);
                let rel = (grad[i] - fd).abs() / (1.0 + fd.abs());
                assert!(rel < 1e-6, "grad mismatch at {x:?}: {} vs {fd}", grad[i]);
            }
        }
    }

    #[test]
    fn psi_sum_inequality_on_negative_halfspace() {
        // sum psi_eps(x_i) <= sum psi_eps(-x_i) whenever <e,x> <= 0.
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = SmoothedPositivePart::new(0.1);
        for _ in 0..10_000 {
            let mut x = [rng.gen_range(-30.0..30.0), rng.gen_range(-30.0..30.0)];
            if x[0] + x[1] > 0.0 {
                x[0] = -x[0];
                x[1] = -x[1];
            }
            let lhs: f64 = x.iter().map(|&v| p.value(v)).sum();
            let rhs: f64 = x.iter().map(|&v| p.value(-v)).sum();
            assert!(lhs <= rhs + 1e-12, "x = {x:?}");
        }
    }

    #[test]
    fn second_order_bound_calibration() {
        // (1/2) tr(a grad^2 V2) <= (rho eps / 4m) V2 with eps from the limit
        // calibration; direct numerical check of the epsilon choice.
        use rand::Rng;
        let data = reference();
        let cfg = LyapunovConfig::limit(&data, None).unwrap();
        let a: Vec<f64> = data.params.lambda.iter().map(|l| 2.0 * l).collect();
        let bound = data.rho * cfg.epsilon / (4.0 * 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10_000 {
            let x = [rng.gen_range(-150.0..150.0), rng.gen_range(-150.0..150.0)];
            let (_, g2) = cfg.grad_logs(&x);
            let (_, h2) = cfg.hess_logs(&x);
            let ratio: f64 = (0..2)
                .map(|i| 0.5 * a[i] * (g2[i] * g2[i] + h2[i]))
                .sum();
            assert!(ratio <= bound + 1e-15, "x = {x:?}: {ratio} > {bound}");
        }
    }

    #[test]
    fn cone_boundary_identity() {
        // On the boundary of K_delta^+: <e,x^+> = (1+delta)/2 ||x||_1.
        for delta in [0.3_f64, 0.9] {
            let b = 1.0;
            let a = b * (1.0 + delta) / (1.0 - delta);
            let x = [a, -b];
            let norm1 = x[0].abs() + x[1].abs();
            let pos = a;
            assert!((pos - (1.0 + delta) / 2.0 * norm1).abs() < 1e-10);
        }
    }

    #[test]
    fn transience_certificate_reference_negative() {
        let topo = Topology::validate(2, 2, &[(0, 0), (1, 0), (0, 1)]).unwrap();
        let params = LimitParams::new(
            &topo,
            vec![1.5, 0.5],
            vec![1.0, 2.0, 1.0],
            vec![1.0, 0.5],
            vec![0.0, 0.0],
            vec![0.0, 0.0, 0.0],
            vec![-1.0, 0.0],
        )
        .unwrap();
        let data = StaticData::compute(topo, params).unwrap();
        assert!((data.rho + 1.0).abs() < 1e-12);
        // beta_max = <e, B1^{-1} ell> / |sigma^T B1^{-1} e|^2 = 1 / 4.
        let mut plan = SamplePlan::new(50.0);
        plan.shells = 10;
        plan.directions = 12;
        let report = transience_certificate(&data, 0.12, &plan, None).unwrap();
        assert!((report.beta_max - 0.25).abs() < 1e-12);
        assert!(report.passed, "margin {}", report.min_margin_diffusion);
        // Out-of-range betas are rejected (the boundary itself sits on float
        // rounding, so probe strictly outside).
        assert!(matches!(
            transience_certificate(&data, 0.2501, &plan, None),
            Err(CertifyError::BetaOutOfRange { .. })
        ));
        assert!(matches!(
            transience_certificate(&data, 0.0, &plan, None),
            Err(CertifyError::BetaOutOfRange { .. })
        ));
    }

    #[test]
    fn transience_rejects_positive_rho() {
        let data = reference();
        let plan = SamplePlan::new(20.0);
        assert!(matches!(
            transience_certificate(&data, 0.1, &plan, None),
            Err(CertifyError::NotApplicable(_))
        ));
    }

    #[test]
    fn kappa_reference_network() {
        let data = reference();
        let k = kappa_and_n0(&data, 100).unwrap();
        // Subsets {shared pool}: (0.55 + 0.55) / (1.1 + 0.5); {private}: 0.5 / 1.05.
        let expect = (1.1_f64 / 1.6).max(0.5 / 1.05);
        assert!((k.kappa.unwrap() - expect).abs() < 1e-12);
        assert!(k.kappa_tilde > 0.0 && k.kappa_tilde < 1.0);
        assert!(k.n0.is_some());
    }

    #[test]
    fn kappa_degenerates_for_single_pool() {
        let topo = Topology::validate(2, 1, &[(0, 0), (1, 0)]).unwrap();
        let params = LimitParams::new(
            &topo,
            vec![1.0, 1.0],
            vec![1.0, 1.0],
            vec![2.0],
            vec![0.0; 2],
            vec![0.0; 2],
            vec![1.0],
        )
        .unwrap();
        let data = StaticData::compute(topo, params).unwrap();
        let k = kappa_and_n0(&data, 100).unwrap();
        assert!(k.kappa.is_none());
    }

    #[test]
    fn n0_scan_consistent_with_definition() {
        let data = reference();
        let n0 = compute_n0(&data).unwrap();
        let check = |n: u64| -> bool {
            let scale = data.at_scale(n, true).unwrap();
            let cfg = LyapunovConfig::prelimit(&data, &scale, Some(1.0)).unwrap();
            let p = data.class.dominant_pool.unwrap();
            let min_z = data
                .topo
                .edges()
                .iter()
                .zip(&scale.centering.z_bar)
                .filter(|(&(_, j), _)| j == p)
                .map(|(_, &z)| z)
                .fold(f64::INFINITY, f64::min);
            1.0 / (n as f64).sqrt() >= cfg.epsilon * min_z
        };
        assert!(check(n0), "n0 = {n0} should satisfy the defining inequality");
        for n in n0 + 1..n0 + 50 {
            assert!(!check(n), "n = {n} > n0 = {n0} should fail the inequality");
        }
    }

    #[test]
    fn jwc_region_contains_a_ball() {
        // All sampled SWC actions inside the estimated radius are JWC, and
        // the mismatch for the reference network starts near
        // sqrt(n)(z_bar_11 + z_bar_21-ish) ~ 11-16 at n = 100.
        let data = reference();
        let scale = data.at_scale(100, true).unwrap();
        let plan = SamplePlan::new(50.0);
        let r = estimate_jwc_radius(&data, &scale, &plan);
        assert!(
            (5.0..25.0).contains(&r),
            "estimated JWC radius {r} outside the expected band"
        );
    }

    #[test]
    fn theta_quarter_threshold_constructible() {
        // The certificates report the theta0/4 probe; pin its construction.
        let data = reference();
        let full = LyapunovConfig::limit(&data, None).unwrap();
        let quarter = LyapunovConfig::limit(&data, Some(full.theta / 4.0)).unwrap();
        assert!(quarter.theta < full.theta);
    }
}
