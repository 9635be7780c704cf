//! `ising`: command-line front end over the toolkit's environments, droplet
//! geometry, exact oracles, cluster dynamics, coarse graining and the
//! experiment harness. Every subcommand prints a JSON (or CSV) summary to
//! stdout or `--out`, and exits nonzero on any invariant violation.

use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde_json::json;

use dilute_ising::coarse::{box_flow, classify_boxes, phase_labels};
use dilute_ising::fk::{es_equivalence_check, sw_step, tau_estimator, EdgeConfig, TauPath};
use dilute_ising::geom::Fv;
use dilute_ising::gibbs::{exact_generator_gap, exact_gibbs, GibbsSpec};
use dilute_ising::glauber::{
    cftp_sample, hitting_time, run, GapBudget, gap_estimate, GraphicalNoise, HitOutcome,
    SpaceTimeRegion, StDynamics, UpdateRule,
};
use dilute_ising::harness::{
    catalyst_ab, conductive_grid_experiment, nucleation_scan, plant_and_grow, ExperimentConfig,
    WindowMassRule,
};
use dilute_ising::lattice::{
    carve_catalyst, gen_environment, read_snapshot, write_snapshot, Bc, Environment,
    LatticeRegion, Scales, Sign,
};
use dilute_ising::wulff::{
    critical_values, default_b_grid, energy_curve, lambda2, optimize_theta, SurfaceTensionModel,
};
use dilute_ising::Pt;

#[derive(Parser)]
#[command(
    name = "ising",
    version,
    about = "Metastability toolkit for the dilute Ising model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate quenched dilution environments
    Env {
        #[command(subcommand)]
        cmd: EnvCmd,
    },
    /// Droplet energetics from a surface-tension model
    Wulff {
        #[command(subcommand)]
        cmd: WulffCmd,
    },
    /// Exact small-system references
    Oracle {
        #[command(subcommand)]
        cmd: OracleCmd,
    },
    /// Random-cluster sampling and surface-tension estimation
    Fk {
        #[command(subcommand)]
        cmd: FkCmd,
    },
    /// Single-site heat-bath dynamics
    Glauber {
        #[command(subcommand)]
        cmd: GlauberCmd,
    },
    /// Mesoscopic box classification of a configuration
    Cg {
        #[command(subcommand)]
        cmd: CgCmd,
    },
    /// End-to-end experiments driven by a TOML config
    Exp {
        #[command(subcommand)]
        cmd: ExpCmd,
    },
}

#[derive(Subcommand)]
enum EnvCmd {
    /// Sample couplings on a centered box and write a binary snapshot
    Gen {
        #[arg(long, default_value_t = 2)]
        dim: usize,
        /// Side of the centered lattice box
        #[arg(long)]
        size: u64,
        /// Edge retention probability
        #[arg(long, default_value_t = 1.0)]
        p: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Carve a catalyst cone at the origin: "theta,bmax[,ax,ay,az]"
        #[arg(long)]
        catalyst: Option<String>,
        /// Mesoscopic box side used when discretizing the carved sector
        #[arg(long, default_value_t = 1)]
        k: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Flags shared by the droplet-geometry subcommands.
#[derive(Args)]
struct WulffArgs {
    /// Surface-tension model: "iso:t" or "l1aniso:t"
    #[arg(long, default_value = "iso:1.0")]
    tau: String,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long, default_value_t = 1.0)]
    mstar: f64,
    /// Cone angle; 2*pi is full space
    #[arg(long, default_value_t = 2.0 * std::f64::consts::PI)]
    theta: f64,
}

#[derive(Subcommand)]
enum WulffCmd {
    /// Droplet energy over a size grid, as CSV
    Curve {
        #[command(flatten)]
        common: WulffArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Critical size, zero-energy size and activation energy
    Critical {
        #[command(flatten)]
        common: WulffArgs,
    },
    /// Relaxation exponent at a cone angle and dilution gain
    Lambda2 {
        #[command(flatten)]
        common: WulffArgs,
        #[arg(long, default_value_t = 0.0)]
        cdil: f64,
    },
    /// Minimize the relaxation exponent over cone angles
    OptTheta {
        #[command(flatten)]
        common: WulffArgs,
        /// Dilution parameter in (0, 1); sets the gain log(1/(1-p))
        #[arg(long)]
        p: f64,
        /// Grid resolution over (0, pi)
        #[arg(long, default_value_t = 64)]
        grid: usize,
    },
}

/// Flags shared by every subcommand that builds a Gibbs specification.
#[derive(Args)]
struct SpecArgs {
    /// Environment snapshot file
    #[arg(long)]
    env: PathBuf,
    #[arg(long)]
    beta: f64,
    #[arg(long, default_value_t = 0.0)]
    h: f64,
    /// Boundary condition: free | plus | minus | interface[:nx,ny,nz]
    #[arg(long, default_value = "free")]
    bc: String,
}

#[derive(Subcommand)]
enum OracleCmd {
    /// Exact Gibbs marginals by enumeration
    Gibbs {
        #[command(flatten)]
        spec: SpecArgs,
    },
    /// Exact heat-bath generator spectral gap
    Gap {
        #[command(flatten)]
        spec: SpecArgs,
    },
}

#[derive(Subcommand)]
enum FkCmd {
    /// Swendsen-Wang sampling from the all-plus start
    Sw {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long, default_value_t = 200)]
        sweeps: usize,
        #[arg(long, default_value_t = 50)]
        burn_in: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Finite-volume surface tension of a strip
    Tau {
        /// Environment snapshot file
        #[arg(long)]
        env: PathBuf,
        #[arg(long)]
        beta: f64,
        /// Cross-section side of the strip
        #[arg(long)]
        cross: u64,
        /// Interface normal "nx,ny[,nz]"
        #[arg(long, default_value = "0,1")]
        normal: String,
        /// Monte Carlo sweeps; omit for exact enumeration
        #[arg(long)]
        sweeps: Option<usize>,
        #[arg(long, default_value_t = 200)]
        burn_in: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Bond-spin equivalence check by exhaustive enumeration
    Escheck {
        #[command(flatten)]
        spec: SpecArgs,
    },
}

#[derive(Subcommand)]
enum GlauberCmd {
    /// Drive a trajectory and record the magnetization
    Run {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 100.0)]
        tcap: f64,
        /// Snapshot spacing along the trajectory
        #[arg(long, default_value_t = 1.0)]
        snapshot_every: f64,
        /// Initial configuration: minus | plus
        #[arg(long, default_value = "minus")]
        init: String,
    },
    /// One perfect equilibrium sample by coupling from the past
    Cftp {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 30)]
        max_doublings: u32,
    },
    /// Relaxation-rate estimate from equilibrium autocorrelation
    Gap {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 400.0)]
        tcap: f64,
        #[arg(long, default_value_t = 48)]
        replicas: usize,
    },
    /// First time the window's plus mass reaches a threshold, from all-minus
    Hit {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1000.0)]
        tcap: f64,
        /// Mesoscopic box side
        #[arg(long, default_value_t = 1)]
        k: u64,
        /// Plus-mass fraction of the window volume that counts as a hit
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Reference magnetization for profile renormalization
        #[arg(long, default_value_t = 1.0)]
        mstar: f64,
    },
}

/// Flags shared by the coarse-graining subcommands.
#[derive(Args)]
struct CgArgs {
    /// Environment snapshot file
    #[arg(long)]
    snapshot: PathBuf,
    /// Mesoscopic box side
    #[arg(long, short = 'K', default_value_t = 4)]
    k: u64,
    /// Reference density of the crossing cluster
    #[arg(long, default_value_t = 1.0)]
    mstar: f64,
    /// Spin configuration as a JSON array of +-1; all-plus when absent
    #[arg(long)]
    spins: Option<PathBuf>,
}

#[derive(Subcommand)]
enum CgCmd {
    /// Good/bad box classification
    Classify {
        #[command(flatten)]
        common: CgArgs,
        /// Density tolerance in (0, 1]
        #[arg(long, default_value_t = 1.0)]
        eps: f64,
    },
    /// Phase labels per box (classification at tolerance 1)
    Labels {
        #[command(flatten)]
        common: CgArgs,
    },
    /// Max box-disjoint plus-to-minus paths over the labeled boxes
    Flow {
        #[command(flatten)]
        common: CgArgs,
    },
}

#[derive(Subcommand)]
enum ExpCmd {
    /// Hitting-time scan over the field strengths
    Nucleate {
        #[command(flatten)]
        common: ExpArgs,
    },
    /// Noise-paired A/B comparison against a carved catalyst
    Catalyst {
        #[command(flatten)]
        common: ExpArgs,
    },
    /// Planted-droplet growth races
    Grow {
        #[command(flatten)]
        common: ExpArgs,
        /// Planted sizes; defaults to the config's b_plant
        #[arg(long = "b")]
        b_plants: Vec<f64>,
    },
    /// Directed growth on the rescaled cell lattice
    Grid {
        #[command(flatten)]
        common: ExpArgs,
    },
}

#[derive(Args)]
struct ExpArgs {
    /// TOML experiment configuration
    #[arg(long)]
    config: PathBuf,
    /// Output directory for JSONL runs, CSV summaries and snapshots
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Env { cmd } => env_cmd(cmd),
        Command::Wulff { cmd } => wulff_cmd(cmd),
        Command::Oracle { cmd } => oracle_cmd(cmd),
        Command::Fk { cmd } => fk_cmd(cmd),
        Command::Glauber { cmd } => glauber_cmd(cmd),
        Command::Cg { cmd } => cg_cmd(cmd),
        Command::Exp { cmd } => exp_cmd(cmd),
    }
}

fn centered_box(dim: usize, side: u64) -> Result<LatticeRegion> {
    let half = (side / 2) as i64;
    let lo = if dim == 3 { [-half, -half, -half] } else { [-half, -half, 0] };
    let size = if dim == 3 { [side; 3] } else { [side, side, 1] };
    Ok(LatticeRegion::box_region(dim, lo, size)?)
}

fn load_env(path: &PathBuf) -> Result<Arc<Environment>> {
    let mut file = fs::File::open(path).with_context(|| format!("open {}", path.display()))?;
    Ok(Arc::new(read_snapshot(&mut file)?))
}

fn parse_bc(s: &str) -> Result<Bc> {
    if let Some(rest) = s.strip_prefix("interface") {
        let normal = match rest.strip_prefix(':') {
            None if rest.is_empty() => [0.0, 1.0, 0.0],
            Some(list) => parse_fv(list)?,
            _ => bail!("malformed boundary condition {s:?}"),
        };
        return Ok(Bc::Interface { normal });
    }
    match s {
        "free" => Ok(Bc::Free),
        "plus" => Ok(Bc::Uniform(Sign::Plus)),
        "minus" => Ok(Bc::Uniform(Sign::Minus)),
        _ => bail!("unknown boundary condition {s:?}; try free | plus | minus | interface"),
    }
}

fn parse_fv(s: &str) -> Result<Fv> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().with_context(|| format!("number {t:?}")))
        .collect::<Result<_>>()?;
    if parts.len() < 2 || parts.len() > 3 {
        bail!("expected 2 or 3 comma-separated numbers, got {s:?}");
    }
    Ok([parts[0], parts[1], parts.get(2).copied().unwrap_or(0.0)])
}

fn parse_tau(s: &str) -> Result<SurfaceTensionModel> {
    let (kind, value) = s.split_once(':').unwrap_or((s, "1.0"));
    let t: f64 = value.trim().parse().with_context(|| format!("tension value {value:?}"))?;
    if !(t > 0.0) {
        bail!("surface tension scale must be positive, got {t}");
    }
    match kind {
        "iso" => Ok(SurfaceTensionModel::isotropic(t)),
        "l1aniso" => Ok(SurfaceTensionModel::l1_anisotropic(t)),
        _ => bail!("unknown tension model {kind:?}; try iso:t | l1aniso:t"),
    }
}

fn print_json(value: serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(&value)?);
    Ok(())
}

fn spec_from(args: &SpecArgs) -> Result<(Arc<Environment>, GibbsSpec)> {
    let env = load_env(&args.env)?;
    let spec = GibbsSpec::new(env.clone(), args.beta, args.h, parse_bc(&args.bc)?)?;
    Ok((env, spec))
}

fn env_cmd(cmd: EnvCmd) -> Result<()> {
    let EnvCmd::Gen { dim, size, p, seed, catalyst, k, out } = cmd;
    let region = Arc::new(centered_box(dim, size)?);
    let mut env = gen_environment(region, p, seed)?;
    if let Some(spec) = &catalyst {
        let parts: Vec<&str> = spec.split(',').collect();
        if parts.len() != 2 && parts.len() != 2 + dim {
            bail!("--catalyst wants theta,bmax[,anchor coordinates], got {spec:?}");
        }
        let theta: f64 = parts[0].trim().parse().context("catalyst theta")?;
        let b_max: f64 = parts[1].trim().parse().context("catalyst bmax")?;
        let mut anchor: Pt = [0, 0, 0];
        for (a, part) in anchor.iter_mut().zip(&parts[2..]) {
            *a = part.trim().parse().context("catalyst anchor")?;
        }
        let scales = Scales::explicit(0.1, k, size)?;
        env = carve_catalyst(&env, theta, b_max, anchor, &scales)?;
    }
    let mut file = fs::File::create(&out).with_context(|| format!("create {}", out.display()))?;
    write_snapshot(&env, &mut file)?;
    print_json(json!({
        "dim": dim,
        "size": size,
        "p": p,
        "seed": seed,
        "vertices": env.region.len(),
        "edges": env.region.n_edges(),
        "open_edges": env.open_count(),
        "carved_edges": env.carved_count,
        "out": out,
    }))
}

fn wulff_cmd(cmd: WulffCmd) -> Result<()> {
    match cmd {
        WulffCmd::Curve { common, out } => {
            let model = parse_tau(&common.tau)?;
            let crit =
                critical_values(&model, common.dim, common.theta, common.beta, common.mstar)?;
            let grid = default_b_grid(2.0 * crit.b_root);
            let curve =
                energy_curve(&model, common.dim, common.theta, common.beta, common.mstar, &grid)?;
            let mut text = String::from("b,energy\n");
            for (b, e) in &curve {
                text.push_str(&format!("{b},{e}\n"));
            }
            match out {
                Some(path) => fs::write(&path, text)
                    .with_context(|| format!("write {}", path.display()))?,
                None => print!("{text}"),
            }
            Ok(())
        }
        WulffCmd::Critical { common } => {
            let model = parse_tau(&common.tau)?;
            let crit =
                critical_values(&model, common.dim, common.theta, common.beta, common.mstar)?;
            print_json(json!({
                "dim": crit.dim,
                "theta": crit.theta,
                "beta": crit.beta,
                "m_star": crit.m_star,
                "unit_surface_energy": crit.f1,
                "b_c": crit.b_c,
                "b_root": crit.b_root,
                "e_c": crit.e_c,
                "diameter_c": crit.diameter_c,
            }))
        }
        WulffCmd::Lambda2 { common, cdil } => {
            let model = parse_tau(&common.tau)?;
            let crit =
                critical_values(&model, common.dim, common.theta, common.beta, common.mstar)?;
            let value = lambda2(common.theta, crit.e_c, cdil, common.dim)?;
            print_json(json!({
                "theta": common.theta,
                "e_c": crit.e_c,
                "c_dil": cdil,
                "lambda2": value,
            }))
        }
        WulffCmd::OptTheta { common, p, grid } => {
            let model = parse_tau(&common.tau)?;
            if grid < 2 {
                bail!("need at least 2 grid angles");
            }
            let angles: Vec<f64> = (1..=grid)
                .map(|i| std::f64::consts::PI * i as f64 / (grid + 1) as f64)
                .collect();
            let opt = optimize_theta(&model, common.dim, common.beta, common.mstar, p, &angles)?;
            print_json(json!({
                "theta_star": opt.theta_star,
                "lambda2_star": opt.lambda2_star,
                "ratio_to_full_space": opt.ratio_to_full_space,
                "scaling_slope": opt.scaling_slope,
                "grid": opt.grid,
            }))
        }
    }
}

fn oracle_cmd(cmd: OracleCmd) -> Result<()> {
    match cmd {
        OracleCmd::Gibbs { spec } => {
            let (env, spec) = spec_from(&spec)?;
            let exact = exact_gibbs(&spec)?;
            let site_plus: Vec<f64> =
                (0..env.region.len() as u32).map(|v| exact.site_plus_marginal(v)).collect();
            print_json(json!({
                "n": exact.n,
                "log_z": exact.log_z,
                "magnetization": exact.magnetization(),
                "site_plus": site_plus,
            }))
        }
        OracleCmd::Gap { spec } => {
            let (_, spec) = spec_from(&spec)?;
            let gap = exact_generator_gap(&spec)?;
            print_json(json!({ "gap": gap }))
        }
    }
}

fn fk_cmd(cmd: FkCmd) -> Result<()> {
    match cmd {
        FkCmd::Sw { spec, sweeps, burn_in, seed } => {
            let (env, spec) = spec_from(&spec)?;
            if sweeps == 0 {
                bail!("need at least one sweep");
            }
            let n = env.region.len();
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let mut spins = vec![1i8; n];
            let mut kept = 0usize;
            let mut sum_m = 0.0;
            let mut sum_abs = 0.0;
            let mut omega = EdgeConfig {
                real: vec![false; env.region.n_edges()],
                ghost: vec![false; n],
            };
            for sweep in 0..burn_in + sweeps {
                let (next_omega, next_spins) = sw_step(&spec, &spins, &mut rng)?;
                omega = next_omega;
                spins = next_spins;
                if sweep >= burn_in {
                    let m = spins.iter().map(|&s| s as f64).sum::<f64>() / n as f64;
                    sum_m += m;
                    sum_abs += m.abs();
                    kept += 1;
                }
            }
            let open_real = omega.real.iter().filter(|&&b| b).count();
            print_json(json!({
                "sweeps": sweeps,
                "burn_in": burn_in,
                "mean_magnetization": sum_m / kept as f64,
                "mean_abs_magnetization": sum_abs / kept as f64,
                "final_magnetization":
                    spins.iter().map(|&s| s as f64).sum::<f64>() / n as f64,
                "final_open_real_edges": open_real,
            }))
        }
        FkCmd::Tau { env, beta, cross, normal, sweeps, burn_in, seed } => {
            let env = load_env(&env)?;
            let normal = parse_fv(&normal)?;
            let path = match sweeps {
                None => TauPath::Exact,
                Some(sweeps) => TauPath::Mc { sweeps, burn_in, seed },
            };
            let est = tau_estimator(&env, beta, cross, normal, path)?;
            print_json(json!({
                "tau": est.value,
                "std_error": est.std_error,
                "disconnect_events": est.disconnect_events,
                "lower_bound_only": est.lower_bound_only,
            }))
        }
        FkCmd::Escheck { spec } => {
            let (_, spec) = spec_from(&spec)?;
            let report = es_equivalence_check(&spec)?;
            print_json(json!({
                "max_marginal_err": report.max_marginal_err,
                "marginal_ok": report.marginal_ok,
                "admissible_checked": report.admissible_checked,
                "admissible_ok": report.admissible_ok,
            }))
        }
    }
}

fn glauber_cmd(cmd: GlauberCmd) -> Result<()> {
    match cmd {
        GlauberCmd::Run { spec, seed, tcap, snapshot_every, init } => {
            let (env, spec) = spec_from(&spec)?;
            if !(tcap > 0.0) || !(snapshot_every > 0.0) {
                bail!("tcap and snapshot spacing must be positive");
            }
            let xi = match init.as_str() {
                "minus" => vec![-1i8; env.region.len()],
                "plus" => vec![1i8; env.region.len()],
                _ => bail!("unknown initial configuration {init:?}; try minus | plus"),
            };
            let st = SpaceTimeRegion::constant(env.region.clone(), 0.0, tcap)?;
            let dynamics = StDynamics::new(
                st,
                env.clone(),
                spec.beta,
                spec.h,
                spec.bc.clone(),
                UpdateRule::HeatBath,
            )?;
            let mut times = Vec::new();
            let mut t = snapshot_every;
            while t < tcap {
                times.push(t);
                t += snapshot_every;
            }
            times.push(tcap);
            let noise = GraphicalNoise::new(seed);
            let traj = run(&dynamics, 0.0, &xi, tcap, &noise, &times)?;
            let n = env.region.len() as f64;
            let series: Vec<(f64, f64)> = traj
                .snapshots
                .iter()
                .map(|(t, s)| (*t, s.iter().map(|&v| v as f64).sum::<f64>() / n))
                .collect();
            print_json(json!({
                "events_applied": traj.events_applied,
                "final_time": traj.final_time,
                "final_magnetization":
                    traj.final_spins.iter().map(|&v| v as f64).sum::<f64>() / n,
                "magnetization": series,
            }))
        }
        GlauberCmd::Cftp { spec, seed, max_doublings } => {
            let (env, spec) = spec_from(&spec)?;
            let sample = cftp_sample(&spec, seed, max_doublings)?;
            let n = env.region.len() as f64;
            print_json(json!({
                "magnetization": sample.iter().map(|&v| v as f64).sum::<f64>() / n,
                "plus_fraction":
                    sample.iter().filter(|&&v| v == 1).count() as f64 / n,
            }))
        }
        GlauberCmd::Gap { spec, seed, tcap, replicas } => {
            let (_, spec) = spec_from(&spec)?;
            let budget =
                GapBudget { replicas, t_run: tcap, seed, ..GapBudget::default() };
            let est = gap_estimate(&spec, &budget)?;
            print_json(json!({
                "gap": est.value,
                "std_error": est.std_error,
                "flagged": est.flagged,
            }))
        }
        GlauberCmd::Hit { spec, seed, tcap, k, threshold, mstar } => {
            let (env, spec) = spec_from(&spec)?;
            let (lo, hi) = env.region.bounding_box();
            let side = (hi[0] - lo[0] + 1) as u64;
            let scales = Scales::explicit(spec.h.max(0.1), k, side)?;
            let dim = env.region.dim();
            let volume = env.region.len() as f64 / (side as f64).powi(dim as i32);
            let mut rule = WindowMassRule::new(
                scales,
                mstar,
                env.region.points().to_vec(),
                threshold * volume,
            );
            let noise = GraphicalNoise::new(seed);
            let outcome = hitting_time(&spec, &mut rule, &noise, tcap)?;
            let (label, time) = match outcome {
                HitOutcome::Hit(t) => ("hit", t),
                HitOutcome::Censored(t) => ("censored", t),
            };
            print_json(json!({ "outcome": label, "time": time, "t_cap": tcap }))
        }
    }
}

fn cg_cmd(cmd: CgCmd) -> Result<()> {
    let (common, eps) = match &cmd {
        CgCmd::Classify { common, eps } => (common, *eps),
        CgCmd::Labels { common } | CgCmd::Flow { common } => (common, 1.0),
    };
    let env = load_env(&common.snapshot)?;
    let region = &env.region;
    let sigma: Vec<i8> = match &common.spins {
        None => vec![1; region.len()],
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("read {}", path.display()))?;
            let spins: Vec<i8> = serde_json::from_str(&text).context("spins JSON array")?;
            if spins.len() != region.len() || spins.iter().any(|&s| s != 1 && s != -1) {
                bail!(
                    "spins must be {} entries of +-1 in region order",
                    region.len()
                );
            }
            spins
        }
    };
    // The maximal bond configuration consistent with (J, sigma): every open
    // coupling whose endpoints agree.
    let real: Vec<bool> = region
        .edges()
        .iter()
        .enumerate()
        .map(|(ei, e)| {
            env.open(ei as u32)
                && match (e.ia, e.ib) {
                    (Some(a), Some(b)) => sigma[a as usize] == sigma[b as usize],
                    _ => false,
                }
        })
        .collect();
    let omega = EdgeConfig { real, ghost: vec![false; region.len()] };
    let (blo, bhi) = region.bounding_box();
    let side = (bhi[0] - blo[0] + 1) as u64;
    let scales = Scales::explicit(0.1, common.k, side)?;
    let class = classify_boxes(&env, &omega, &sigma, &scales, eps, common.mstar)?;

    match cmd {
        CgCmd::Classify { .. } => {
            let good = class.good_count();
            let boxes: Vec<serde_json::Value> = class
                .boxes
                .iter()
                .zip(class.decomp.boxes.iter())
                .map(|(report, info)| {
                    json!({
                        "index": info.index,
                        "interior": report.interior,
                        "good": report.good,
                        "density": report.density,
                        "cluster_id": report.cluster_id,
                    })
                })
                .collect();
            print_json(json!({
                "k": common.k,
                "eps": eps,
                "m_star": common.mstar,
                "boxes": class.boxes.len(),
                "good": good,
                "bad": class.boxes.len() - good,
                "reports": boxes,
            }))
        }
        CgCmd::Labels { .. } => {
            let labeling = phase_labels(&class, &sigma);
            let plus = labeling.labels.iter().filter(|&&l| l == 1).count();
            let minus = labeling.labels.iter().filter(|&&l| l == -1).count();
            print_json(json!({
                "k": common.k,
                "m_star": common.mstar,
                "plus": plus,
                "minus": minus,
                "zero": labeling.labels.len() - plus - minus,
                "labels": labeling.labels,
                "indices": labeling.indices,
            }))
        }
        CgCmd::Flow { .. } => {
            let labeling = phase_labels(&class, &sigma);
            let members: Vec<u32> = (0..labeling.labels.len() as u32).collect();
            let flow = box_flow(&labeling, &members);
            print_json(json!({
                "k": common.k,
                "m_star": common.mstar,
                "boxes": labeling.labels.len(),
                "flow": flow,
            }))
        }
    }
}

fn exp_cmd(cmd: ExpCmd) -> Result<()> {
    let common = match &cmd {
        ExpCmd::Nucleate { common }
        | ExpCmd::Catalyst { common }
        | ExpCmd::Grid { common } => common,
        ExpCmd::Grow { common, .. } => common,
    };
    let text = fs::read_to_string(&common.config)
        .with_context(|| format!("read {}", common.config.display()))?;
    let mut config = ExperimentConfig::from_toml(&text)?;
    if let Some(dir) = &common.out {
        config.out_dir = Some(dir.clone());
    }
    match cmd {
        ExpCmd::Nucleate { .. } => {
            let (report, _) = nucleation_scan(&config)?;
            print_json(serde_json::to_value(&report)?)
        }
        ExpCmd::Catalyst { .. } => {
            let (report, _) = catalyst_ab(&config)?;
            print_json(serde_json::to_value(&report)?)
        }
        ExpCmd::Grow { b_plants, .. } => {
            let sizes = if b_plants.is_empty() {
                vec![config.droplet_sizes()?.2]
            } else {
                b_plants
            };
            let (reports, _) = plant_and_grow(&config, &sizes)?;
            print_json(serde_json::to_value(&reports)?)
        }
        ExpCmd::Grid { .. } => {
            let (report, _) = conductive_grid_experiment(&config)?;
            print_json(serde_json::to_value(&report)?)
        }
    }
}
