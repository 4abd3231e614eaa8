//! Command-line laboratory for parallel server networks in the
//! Halfin-Whitt regime.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use hwnetlab::config::NetworkConfig;
use hwnetlab::diffusion::{
    default_step, simulate_sde, simulate_sde_reps, DiffusionSpec, MarkovControl, SdeRunConfig,
};
use hwnetlab::experiments::{
    idleness_identity, interchange_of_limits, run_tails, transience_slope, RunMeta, Tolerances,
};
use hwnetlab::lyapunov::{
    certify_drift_diffusion, certify_drift_prelimit, estimate_jwc_radius, kappa_and_n0,
    transience_certificate, LyapunovConfig, SamplePlan,
};
use hwnetlab::policies::PolicySpec;
use hwnetlab::prelimit::{simulate_ctmc, simulate_ctmc_reps, CtmcRunConfig};
use hwnetlab::statics::StaticData;

#[derive(Parser)]
#[command(
    name = "hwnetlab",
    about = "Multiclass multi-pool queueing networks in the Halfin-Whitt regime: \
             statics, simulation, and stability certificates",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print fluid equilibrium, Phi/B matrices, second-order drift and
    /// spare capacity as JSON.
    Statics {
        config: PathBuf,
        /// Also evaluate rho_n at these scales (comma separated).
        #[arg(long, value_delimiter = ',')]
        n: Vec<u64>,
    },
    /// Simulate the n-th system CTMC under a scheduling policy.
    SimulateCtmc {
        config: PathBuf,
        #[arg(long)]
        n: u64,
        /// swc | priority-n | lqfs-lb | constant:<uc;us>
        #[arg(long, default_value = "swc")]
        policy: String,
        #[arg(long, default_value_t = 1000.0)]
        horizon: f64,
        /// Defaults to 20% of the horizon.
        #[arg(long)]
        burn_in: Option<f64>,
        #[arg(long, default_value_t = 1)]
        reps: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Use the shifted (translated-origin) centering.
        #[arg(long)]
        shifted: bool,
        /// Tail grid radii for ||x_hat||_1 (comma separated).
        #[arg(long, value_delimiter = ',')]
        tail_radii: Vec<f64>,
        /// Write the full event path of replication 0 as CSV.
        #[arg(long)]
        dump_path: Option<PathBuf>,
    },
    /// Simulate the limiting controlled diffusion (Euler-Maruyama).
    SimulateSde {
        config: PathBuf,
        /// constant:<uc;us> | mimic-swc
        #[arg(long, default_value = "mimic-swc")]
        control: String,
        #[arg(long, default_value_t = 1000.0)]
        horizon: f64,
        /// Defaults to 0.01 / max mu.
        #[arg(long)]
        step: Option<f64>,
        #[arg(long)]
        burn_in: Option<f64>,
        #[arg(long, default_value_t = 1)]
        reps: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Use the centered drift (origin translated by zeta).
        #[arg(long)]
        centered: bool,
        #[arg(long, value_delimiter = ',')]
        tail_radii: Vec<f64>,
        #[arg(long)]
        dump_path: Option<PathBuf>,
    },
    /// Drift or transience certificates (JSON to stdout).
    Certify {
        config: PathBuf,
        /// Certify the diffusion limit.
        #[arg(long, conflicts_with = "n")]
        limit: bool,
        /// Certify the n-th system at this scale.
        #[arg(long)]
        n: Option<u64>,
        #[arg(long, default_value_t = 200.0)]
        radius: f64,
        /// "auto" uses the class-specific theta_0.
        #[arg(long, default_value = "auto")]
        theta: String,
        /// drift | transience
        #[arg(long, default_value = "drift")]
        mode: String,
        /// Transience tilt; "auto" takes the midpoint of the admissible range.
        #[arg(long, default_value = "auto")]
        beta: String,
        /// Evaluate the prelimit certificate even when n <= n0.
        #[arg(long)]
        force_below_n0: bool,
        #[arg(long, default_value_t = 0x9e3779b9)]
        seed: u64,
    },
    /// Statistical experiments; exit code 0 iff the verdict passes.
    Experiment {
        /// idleness | tails | transience | interchange
        kind: String,
        config: PathBuf,
        #[arg(long)]
        n: Option<u64>,
        #[arg(long, value_delimiter = ',')]
        n_grid: Vec<u64>,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        sde_horizon: Option<f64>,
        #[arg(long)]
        step: Option<f64>,
        #[arg(long, default_value_t = 20)]
        reps: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "swc")]
        policy: String,
        #[arg(long, default_value = "mimic-swc")]
        control: String,
        /// Tail radii (tails experiment).
        #[arg(long, value_delimiter = ',')]
        radii: Vec<f64>,
        /// Write raw estimates as CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[command(flatten)]
        tols: TolArgs,
    },
}

#[derive(Args)]
struct TolArgs {
    /// Relative tolerance for the idleness identity.
    #[arg(long, default_value_t = 0.05)]
    idleness_tol: f64,
    /// Minimum R^2 for tail fits.
    #[arg(long, default_value_t = 0.9)]
    tail_r2: f64,
}

impl TolArgs {
    fn build(&self) -> Tolerances {
        Tolerances {
            idleness_rel_tol: self.idleness_tol,
            tail_r2_min: self.tail_r2,
            ..Tolerances::default()
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
    }
}

fn load(config: &PathBuf) -> Result<(NetworkConfig, StaticData), Box<dyn std::error::Error>> {
    let cfg = NetworkConfig::load(config)?;
    let (topo, params) = cfg.build()?;
    let data = StaticData::compute(topo, params)?;
    Ok((cfg, data))
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

#[derive(Serialize)]
struct StaticsReport<'a> {
    config_digest: String,
    class: &'a hwnetlab::network::NetworkClass,
    class_tag: &'static str,
    xi_star: &'a [f64],
    x_star: &'a [f64],
    z_star: &'a [f64],
    fluid_residual: f64,
    edges: Vec<[usize; 2]>,
    b1: &'a [Vec<f64>],
    b2: &'a [Vec<f64>],
    dropped_pool: usize,
    ell: &'a [f64],
    rho: f64,
    rho_n: Vec<(u64, f64)>,
    warnings: Vec<String>,
}

fn run(cli: Cli) -> Result<ExitCode, Box<dyn std::error::Error>> {
    match cli.command {
        Command::Statics { config, n } => {
            let (cfg, data) = load(&config)?;
            let mut rho_n = Vec::new();
            for &nv in &n {
                let sd = data.at_scale(nv, false)?;
                rho_n.push((nv, sd.rho_n));
            }
            let mut warnings = Vec::new();
            if !data.class.is_covered() {
                warnings.push(
                    "general-tree network: the uniform stability theory does not cover \
                     this class; rho and the B matrices are still reported"
                        .to_string(),
                );
            }
            let report = StaticsReport {
                config_digest: cfg.digest(),
                class: &data.class,
                class_tag: data.class.tag(),
                xi_star: &data.fluid.xi,
                x_star: &data.fluid.x_star,
                z_star: &data.fluid.z_star,
                fluid_residual: data.fluid.residual,
                edges: data
                    .topo
                    .edges()
                    .iter()
                    .map(|&(i, j)| [i + 1, j + 1])
                    .collect(),
                b1: &data.drift.b1,
                b2: &data.drift.b2,
                dropped_pool: data.drift.dropped_pool + 1,
                ell: &data.ell,
                rho: data.rho,
                rho_n,
                warnings,
            };
            print_json(&report);
            Ok(ExitCode::SUCCESS)
        }

        Command::SimulateCtmc {
            config,
            n,
            policy,
            horizon,
            burn_in,
            reps,
            seed,
            shifted,
            tail_radii,
            dump_path,
        } => {
            let (_, data) = load(&config)?;
            let scale = data.at_scale(n, shifted)?;
            let spec = PolicySpec::parse_flag(&policy)?;
            let mut run_cfg = CtmcRunConfig::new(horizon, seed);
            run_cfg.burn_in = burn_in;
            run_cfg.tail_radii = tail_radii;
            if let Some(path_file) = dump_path {
                let mut cfg0 = run_cfg.clone();
                cfg0.record_path = true;
                let out = simulate_ctmc(&data, &scale, &spec, &cfg0)?;
                let path = out.path.expect("requested path");
                let mut csv = String::from("t");
                for i in 0..data.num_classes() {
                    csv.push_str(&format!(",x{}", i + 1));
                }
                for &(i, j) in data.topo.edges() {
                    csv.push_str(&format!(",z{}-{}", i + 1, j + 1));
                }
                csv.push('\n');
                for k in 0..path.times.len() {
                    csv.push_str(&format!("{}", path.times[k]));
                    for v in &path.states[k] {
                        csv.push_str(&format!(",{v}"));
                    }
                    for v in &path.allocations[k] {
                        csv.push_str(&format!(",{v}"));
                    }
                    csv.push('\n');
                }
                std::fs::write(&path_file, csv)?;
                println!("{}", serde_json::to_string(&out.summary)?);
                for r in 1..reps {
                    let mut cfg_r = run_cfg.clone();
                    cfg_r.stream = r;
                    let out = simulate_ctmc(&data, &scale, &spec, &cfg_r)?;
                    println!("{}", serde_json::to_string(&out.summary)?);
                }
            } else {
                for s in simulate_ctmc_reps(&data, &scale, &spec, &run_cfg, reps)? {
                    println!("{}", serde_json::to_string(&s)?);
                }
            }
            Ok(ExitCode::SUCCESS)
        }

        Command::SimulateSde {
            config,
            control,
            horizon,
            step,
            burn_in,
            reps,
            seed,
            centered,
            tail_radii,
            dump_path,
        } => {
            let (_, data) = load(&config)?;
            let spec = DiffusionSpec::new(&data, centered);
            let ctrl = MarkovControl::parse_flag(&control, data.num_classes(), data.num_pools())?;
            let h = step.unwrap_or_else(|| default_step(&data));
            let mut run_cfg = SdeRunConfig::new(horizon, h, seed, data.num_classes());
            run_cfg.burn_in = burn_in;
            run_cfg.tail_radii = tail_radii;
            if let Some(path_file) = dump_path {
                let mut cfg0 = run_cfg.clone();
                cfg0.record_path = true;
                let out = simulate_sde(&spec, &ctrl, &cfg0)?;
                let mut csv = String::from("t");
                for i in 0..data.num_classes() {
                    csv.push_str(&format!(",x{}", i + 1));
                }
                csv.push('\n');
                for (t, x) in out.path.expect("requested path") {
                    csv.push_str(&format!("{t}"));
                    for v in x {
                        csv.push_str(&format!(",{v}"));
                    }
                    csv.push('\n');
                }
                std::fs::write(&path_file, csv)?;
                println!("{}", serde_json::to_string(&out.summary)?);
                for r in 1..reps {
                    let mut cfg_r = run_cfg.clone();
                    cfg_r.stream = r;
                    let out = simulate_sde(&spec, &ctrl, &cfg_r)?;
                    println!("{}", serde_json::to_string(&out.summary)?);
                }
            } else {
                for s in simulate_sde_reps(&spec, &ctrl, &run_cfg, reps)? {
                    println!("{}", serde_json::to_string(&s)?);
                }
            }
            Ok(ExitCode::SUCCESS)
        }

        Command::Certify {
            config,
            limit,
            n,
            radius,
            theta,
            mode,
            beta,
            force_below_n0,
            seed,
        } => {
            let (cfg_doc, data) = load(&config)?;
            let mut plan = SamplePlan::new(radius);
            plan.seed = seed;
            let theta_opt = match theta.as_str() {
                "auto" => None,
                other => Some(other.parse::<f64>()?),
            };
            match mode.as_str() {
                "drift" => {
                    if limit || n.is_none() {
                        let lcfg = LyapunovConfig::limit(&data, theta_opt)?;
                        let cert = certify_drift_diffusion(&data, &lcfg, &plan)?;
                        let passed = cert.passed;
                        print_json(&serde_json::json!({
                            "config_digest": cfg_doc.digest(),
                            "target": "diffusion-limit",
                            "certificate": cert,
                        }));
                        return Ok(if passed {
                            ExitCode::SUCCESS
                        } else {
                            ExitCode::FAILURE
                        });
                    }
                    let nv = n.unwrap();
                    let scale = data.at_scale(nv, true)?;
                    let lcfg = LyapunovConfig::prelimit(&data, &scale, theta_opt)?;
                    let kappa = kappa_and_n0(&data, nv)?;
                    let jwc = estimate_jwc_radius(&data, &scale, &plan);
                    let cert =
                        certify_drift_prelimit(&data, &scale, &lcfg, &plan, force_below_n0)?;
                    let passed = cert.passed;
                    print_json(&serde_json::json!({
                        "config_digest": cfg_doc.digest(),
                        "target": format!("prelimit-n{nv}"),
                        "kappa_bounds": kappa,
                        "estimated_jwc_radius": jwc,
                        "certificate": cert,
                    }));
                    Ok(if passed {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::FAILURE
                    })
                }
                "transience" => {
                    let beta_val = match beta.as_str() {
                        "auto" => {
                            // Midpoint of the admissible range, read off a
                            // deliberately out-of-range probe.
                            match transience_certificate(&data, f64::MAX, &plan, None) {
                                Err(hwnetlab::lyapunov::CertifyError::BetaOutOfRange {
                                    max,
                                    ..
                                }) => max / 2.0,
                                other => {
                                    return Err(format!(
                                        "cannot determine admissible beta range: {other:?}"
                                    )
                                    .into())
                                }
                            }
                        }
                        other => other.parse::<f64>()?,
                    };
                    let report = transience_certificate(&data, beta_val, &plan, n)?;
                    let passed = report.passed;
                    print_json(&serde_json::json!({
                        "config_digest": cfg_doc.digest(),
                        "target": "transience",
                        "report": report,
                    }));
                    Ok(if passed {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::FAILURE
                    })
                }
                other => Err(format!("unknown certify mode `{other}`").into()),
            }
        }

        Command::Experiment {
            kind,
            config,
            n,
            n_grid,
            horizon,
            sde_horizon,
            step,
            reps,
            seed,
            policy,
            control,
            radii,
            csv,
            tols,
        } => {
            let (cfg_doc, data) = load(&config)?;
            let meta = RunMeta {
                config_digest: cfg_doc.digest(),
                seed,
            };
            let tol = tols.build();
            let policy = PolicySpec::parse_flag(&policy)?;
            let control =
                MarkovControl::parse_flag(&control, data.num_classes(), data.num_pools())?;
            let report = match kind.as_str() {
                "idleness" => idleness_identity(
                    &data,
                    &control,
                    horizon.unwrap_or(10_000.0),
                    step,
                    reps,
                    &meta,
                    &tol,
                )?,
                "tails" => {
                    let radii = if radii.is_empty() {
                        vec![0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0]
                    } else {
                        radii
                    };
                    run_tails(
                        &data,
                        n.ok_or("tails experiment needs --n")?,
                        &policy,
                        horizon.unwrap_or(2_000.0),
                        reps,
                        radii,
                        &meta,
                        &tol,
                    )?
                }
                "transience" => transience_slope(
                    &data,
                    n.ok_or("transience experiment needs --n")?,
                    &policy,
                    horizon.unwrap_or(1_000.0),
                    reps,
                    &meta,
                    &tol,
                )?,
                "interchange" => {
                    let grid = if n_grid.is_empty() {
                        vec![25, 100, 400]
                    } else {
                        n_grid
                    };
                    interchange_of_limits(
                        &data,
                        &grid,
                        &policy,
                        &control,
                        horizon.unwrap_or(1_000.0),
                        sde_horizon.unwrap_or(5_000.0),
                        reps,
                        &meta,
                        &tol,
                    )?
                }
                other => return Err(format!("unknown experiment `{other}`").into()),
            };
            if let Some(csv_path) = csv {
                std::fs::write(&csv_path, hwnetlab::experiments::estimates_csv(&report))?;
            }
            let passed = report.verdict.passed();
            print_json(&report);
            Ok(if passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
    }
}
