//! End-to-end experiments: nucleation-rate scans over the field strength,
//! noise-paired catalyst A/B comparisons, planted-droplet growth races, and
//! the rescaled-lattice directed-growth bookkeeping, with deterministic
//! per-run records, JSONL/CSV persistence, and content-addressed
//! environment snapshots.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::PathBuf;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coarse::profile_integral;
use crate::error::{Error, Result};
use crate::geom::{add, Pt, Sector};
use crate::gibbs::GibbsSpec;
use crate::glauber::{
    first_passage, hitting_time, run, GraphicalNoise, HitOutcome, SpaceTimeRegion,
    StDynamics, StopRule, UpdateRule,
};
use crate::lattice::{
    box_decomposition, carve_catalyst, discretize, gen_environment, snapshot_bytes, Bc,
    BoxDecomposition, Environment, LatticeRegion, Scales, Sign,
};
use crate::rng::{purpose, stream};
use crate::stats::{censored_quantile, censored_summary, lsq_line, nearest_rank, sign_test_ge,
    Censored, CensoredSummary};
use crate::wulff::{critical_values, onsager_tau_axis, wulff_shape, SurfaceTensionModel};

const OBSERVABLES: &[&str] = &["magnetization", "window_mass"];
const BOOTSTRAP_RESAMPLES: usize = 1000;
const CI_LEVEL: f64 = 0.95;

fn d_dimension() -> usize {
    2
}
fn d_lattice() -> u64 {
    32
}
fn d_p() -> f64 {
    1.0
}
fn d_beta() -> f64 {
    1.2
}
fn d_h_values() -> Vec<f64> {
    vec![0.5, 0.35, 0.25]
}
fn d_theta() -> f64 {
    std::f64::consts::FRAC_PI_2
}
fn d_seeds() -> Vec<u64> {
    (1..=20).collect()
}
fn d_env_seed() -> u64 {
    1
}
fn d_t_cap() -> f64 {
    400.0
}
fn d_k() -> u64 {
    4
}
fn d_m_star() -> f64 {
    1.0
}
fn d_stop_threshold() -> f64 {
    0.5
}
fn d_cell() -> u64 {
    8
}
fn d_cell_period() -> f64 {
    4.0
}

/// Flat experiment configuration; every field has a desk-scale default, so
/// a TOML document only needs the fields it overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "d_dimension")]
    pub dimension: usize,
    /// Side of the centered lattice box; the macroscopic unit is one side.
    #[serde(default = "d_lattice")]
    pub lattice: u64,
    #[serde(default = "d_p")]
    pub p: f64,
    #[serde(default = "d_beta")]
    pub beta: f64,
    #[serde(default = "d_h_values")]
    pub h_values: Vec<f64>,
    /// Catalyst cone angle.
    #[serde(default = "d_theta")]
    pub theta: f64,
    /// Smallest droplet size the harness treats as formed; defaults to the
    /// critical size computed from the surface-tension model.
    #[serde(default)]
    pub b_min: Option<f64>,
    /// Carved catalyst size; defaults to the zero-energy droplet size.
    #[serde(default)]
    pub b_max: Option<f64>,
    /// Planted droplet size for the directed-growth grid; defaults to
    /// 1.5x the zero-energy size.
    #[serde(default)]
    pub b_plant: Option<f64>,
    #[serde(default = "d_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "d_env_seed")]
    pub env_seed: u64,
    #[serde(default = "d_t_cap")]
    pub t_cap: f64,
    /// Mesoscopic box side for profiles and stop predicates.
    #[serde(default = "d_k")]
    pub k: u64,
    /// Side of the central observation window; defaults to lattice / 2.
    #[serde(default)]
    pub window: Option<u64>,
    /// Reference magnetization for profile renormalization; 1.0 makes the
    /// window mass the literal plus fraction.
    #[serde(default = "d_m_star")]
    pub m_star: f64,
    /// Stop when the window's plus mass reaches this fraction of its volume.
    #[serde(default = "d_stop_threshold")]
    pub stop_threshold: f64,
    /// Observable time series recorded per run (costs a second pass).
    #[serde(default)]
    pub observables: Vec<String>,
    /// Rescaled-cell side in lattice units (directed-growth grid).
    #[serde(default = "d_cell")]
    pub cell: u64,
    /// Time per rescaled-cell generation.
    #[serde(default = "d_cell_period")]
    pub cell_period: f64,
    /// Output directory for JSONL records, CSV summaries and snapshots;
    /// absent means in-memory only.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Format(format!("config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(Error::invalid(m));
        if !(2..=3).contains(&self.dimension) {
            return invalid(format!("dimension {} not in 2..=3", self.dimension));
        }
        if self.lattice < 4 || self.lattice % 2 != 0 {
            return invalid(format!("lattice side {} must be even and >= 4", self.lattice));
        }
        if self.k == 0 || self.lattice % self.k != 0 {
            return invalid(format!("box side {} must divide the lattice side", self.k));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return invalid(format!("p={} not in (0, 1]", self.p));
        }
        if !(self.beta > 0.0) {
            return invalid(format!("beta={} must be positive", self.beta));
        }
        if self.h_values.is_empty() || self.h_values.iter().any(|&h| !(h > 0.0)) {
            return invalid("h_values must be nonempty and positive".to_string());
        }
        if !(self.theta > 0.0 && self.theta <= 2.0 * std::f64::consts::PI) {
            return invalid(format!("theta={} not in (0, 2*pi]", self.theta));
        }
        for b in [self.b_min, self.b_max, self.b_plant].into_iter().flatten() {
            if !(b >= 0.0) {
                return invalid(format!("droplet size {b} must be >= 0"));
            }
        }
        if self.seeds.is_empty() {
            return invalid("seeds list must be nonempty".to_string());
        }
        if !(self.t_cap >= 0.0 && self.t_cap.is_finite()) {
            return invalid(format!("t_cap={} must be finite and >= 0", self.t_cap));
        }
        let w = self.window_side();
        if w == 0 || w > self.lattice {
            return invalid(format!("window side {w} not in 1..=lattice"));
        }
        if !(self.m_star > 0.0 && self.m_star <= 1.0) {
            return invalid(format!("m_star={} not in (0, 1]", self.m_star));
        }
        if !(self.stop_threshold > 0.0 && self.stop_threshold <= 1.0) {
            return invalid(format!("stop_threshold={} not in (0, 1]", self.stop_threshold));
        }
        for obs in &self.observables {
            if !OBSERVABLES.contains(&obs.as_str()) {
                return invalid(format!("unknown observable {obs:?}; try {OBSERVABLES:?}"));
            }
        }
        if self.cell < 2 || !(self.cell_period > 0.0) {
            return invalid("rescaled cells need side >= 2 and a positive period".to_string());
        }
        Ok(())
    }

    pub fn window_side(&self) -> u64 {
        self.window.unwrap_or(self.lattice / 2)
    }

    /// The centered simulation box.
    pub fn region(&self) -> Result<Arc<LatticeRegion>> {
        Ok(Arc::new(centered_box(self.dimension, self.lattice)?))
    }

    /// The centered observation window.
    pub fn window_region(&self) -> Result<LatticeRegion> {
        centered_box(self.dimension, self.window_side())
    }

    pub fn scales(&self, h: f64) -> Result<Scales> {
        Scales::explicit(h, self.k, self.lattice)
    }

    pub fn environment(&self) -> Result<Arc<Environment>> {
        Ok(Arc::new(gen_environment(self.region()?, self.p, self.env_seed)?))
    }

    /// Identity of a (config, experiment) pair for record provenance. The
    /// output directory is excluded: it does not affect what was simulated.
    pub fn hash(&self, experiment: &str) -> String {
        let mut physics = self.clone();
        physics.out_dir = None;
        let mut hasher = Sha256::new();
        hasher.update(experiment.as_bytes());
        hasher.update([0]);
        hasher.update(serde_json::to_vec(&physics).expect("config serializes"));
        hex(&hasher.finalize())
    }

    /// Surface-tension model behind the droplet-size defaults: isotropic
    /// with the undiluted axis tension at this beta.
    pub fn tension_model(&self) -> SurfaceTensionModel {
        SurfaceTensionModel::isotropic(onsager_tau_axis(self.beta).max(1e-6))
    }

    /// (b_min, b_max, b_plant) with absent entries filled from the droplet
    /// energetics: the critical size, the zero-energy size, and 1.5x the
    /// zero-energy size.
    pub fn droplet_sizes(&self) -> Result<(f64, f64, f64)> {
        match (self.b_min, self.b_max, self.b_plant) {
            (Some(a), Some(b), Some(c)) => Ok((a, b, c)),
            _ => {
                let crit = critical_values(
                    &self.tension_model(),
                    self.dimension,
                    self.theta,
                    self.beta,
                    self.m_star,
                )?;
                Ok((
                    self.b_min.unwrap_or(crit.b_c),
                    self.b_max.unwrap_or(crit.b_root),
                    self.b_plant.unwrap_or(1.5 * crit.b_root),
                ))
            }
        }
    }
}

fn centered_box(dim: usize, side: u64) -> Result<LatticeRegion> {
    let half = (side / 2) as i64;
    let lo = if dim == 3 { [-half, -half, -half] } else { [-half, -half, 0] };
    let size = if dim == 3 { [side; 3] } else { [side, side, 1] };
    LatticeRegion::box_region(dim, lo, size)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// One completed run: the outcome, optional observable series, and the
/// provenance needed to replay it bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub experiment: String,
    pub config_hash: String,
    pub seed: u64,
    pub h: f64,
    /// Distinguishes paired arms or scan points within one experiment.
    pub arm: Option<String>,
    pub outcome_time: f64,
    pub censored: bool,
    /// Observable name -> (time, value) series.
    pub series: BTreeMap<String, Vec<(f64, f64)>>,
    /// Content hash of the environment snapshot.
    pub env_snapshot: String,
}

/// Output locations for one experiment invocation. Without a directory the
/// sink only computes snapshot hashes.
pub struct OutputSink {
    dir: Option<PathBuf>,
}

impl OutputSink {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        if let Some(dir) = &config.out_dir {
            fs::create_dir_all(dir.join("snapshots"))?;
        }
        Ok(OutputSink { dir: config.out_dir.clone() })
    }

    /// Store a content-addressed environment snapshot; returns its hash.
    pub fn store_snapshot(&self, env: &Environment) -> Result<String> {
        let bytes = snapshot_bytes(env)?;
        let hash = hex(&Sha256::digest(&bytes));
        if let Some(dir) = &self.dir {
            let path = dir.join("snapshots").join(format!("{hash}.bin"));
            if !path.exists() {
                fs::write(path, bytes)?;
            }
        }
        Ok(hash)
    }

    /// Append records to `<experiment>_runs.jsonl`, one JSON object per line.
    pub fn write_runs(&self, experiment: &str, records: &[RunRecord]) -> Result<()> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let mut file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join(format!("{experiment}_runs.jsonl")))?;
        for rec in records {
            let line = serde_json::to_string(rec)
                .map_err(|e| Error::Format(format!("record: {e}")))?;
            writeln!(file, "{line}")?;
        }
        Ok(())
    }

    /// Write (overwrite) a CSV summary table.
    pub fn write_csv(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let mut out = header.join(",");
        out.push('\n');
        for row in rows {
            debug_assert_eq!(row.len(), header.len());
            out.push_str(&row.join(","));
            out.push('\n');
        }
        fs::write(dir.join(format!("{name}.csv")), out)?;
        Ok(())
    }
}

fn split(outcome: HitOutcome) -> Censored {
    match outcome {
        HitOutcome::Hit(t) => (t, false),
        HitOutcome::Censored(t) => (t, true),
    }
}

fn csv_f(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else if x.is_nan() {
        "nan".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

/// Plus mass of the renormalized magnetization profile restricted to a
/// window, tracked incrementally; holds when the integral (in macroscopic
/// volume units) reaches the threshold. Matches `profile_integral` over the
/// same window exactly.
pub struct WindowMassRule {
    scales: Scales,
    m_star: f64,
    pub threshold: f64,
    window: Vec<Pt>,
    decomp: Option<BoxDecomposition>,
    /// Window vertices per box ordinal.
    weight: Vec<f64>,
    sums: Vec<f64>,
    integral: f64,
    cell: f64,
}

impl WindowMassRule {
    pub fn new(scales: Scales, m_star: f64, window: Vec<Pt>, threshold: f64) -> Self {
        WindowMassRule {
            scales,
            m_star,
            threshold,
            window,
            decomp: None,
            weight: Vec::new(),
            sums: Vec::new(),
            integral: 0.0,
            cell: 0.0,
        }
    }

    pub fn integral(&self) -> f64 {
        self.integral
    }

    fn den(&self, ord: usize) -> f64 {
        if self.decomp.as_ref().unwrap().boxes[ord].interior {
            self.m_star
        } else {
            1.0
        }
    }
}

impl StopRule for WindowMassRule {
    fn start(&mut self, region: &LatticeRegion, spins: &[i8]) {
        let d = box_decomposition(region, self.scales.k).expect("box decomposition");
        self.cell = (self.scales.n as f64).powi(region.dim() as i32).recip();
        self.weight = vec![0.0; d.boxes.len()];
        for p in &self.window {
            let v = region.idx(*p).expect("window vertex inside the region");
            self.weight[d.vertex_box[v as usize] as usize] += 1.0;
        }
        self.sums = d
            .boxes
            .iter()
            .map(|b| b.verts.iter().map(|&v| spins[v as usize] as f64).sum())
            .collect();
        self.decomp = Some(d);
        let d = self.decomp.as_ref().unwrap();
        self.integral = (0..d.boxes.len())
            .map(|i| {
                let n = d.boxes[i].verts.len() as f64;
                self.weight[i] * self.cell * (1.0 + self.sums[i] / n / self.den(i)) / 2.0
            })
            .sum();
    }

    fn flip(&mut self, v: u32, new: i8) {
        let d = self.decomp.as_ref().unwrap();
        let ord = d.vertex_box[v as usize] as usize;
        let n = d.boxes[ord].verts.len() as f64;
        self.sums[ord] += 2.0 * new as f64;
        self.integral += self.weight[ord] * self.cell * new as f64 / (n * self.den(ord));
    }

    fn holds(&self) -> bool {
        self.integral >= self.threshold - 1e-12
    }
}

/// Growth race: stops when the watched window's plus mass leaves the band
/// `(lo, hi)`.
pub struct RaceRule {
    pub mass: WindowMassRule,
    pub lo: f64,
    pub hi: f64,
}

impl StopRule for RaceRule {
    fn start(&mut self, region: &LatticeRegion, spins: &[i8]) {
        self.mass.start(region, spins);
    }

    fn flip(&mut self, v: u32, new: i8) {
        self.mass.flip(v, new);
    }

    fn holds(&self) -> bool {
        self.mass.integral() >= self.hi - 1e-12 || self.mass.integral() <= self.lo + 1e-12
    }
}

/// Observable series along the trajectory that `noise` induces from `xi`,
/// sampled on a uniform grid of 33 times in `[0, t_end]`.
fn record_series(
    config: &ExperimentConfig,
    spec: &GibbsSpec,
    xi: &[i8],
    noise: &GraphicalNoise,
    t_end: f64,
) -> Result<BTreeMap<String, Vec<(f64, f64)>>> {
    let mut series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    if config.observables.is_empty() {
        return Ok(series);
    }
    let region = spec.region();
    let scales = config.scales(spec.h)?;
    let window = config.window_region()?;
    let mut frames: Vec<(f64, Vec<i8>)> = vec![(0.0, xi.to_vec())];
    if t_end > 0.0 {
        let times: Vec<f64> = (1..=32).map(|j| t_end * j as f64 / 32.0).collect();
        let st = SpaceTimeRegion::constant(spec.env.region.clone(), 0.0, t_end)?;
        let dynamics = StDynamics::new(
            st,
            spec.env.clone(),
            spec.beta,
            spec.h,
            spec.bc.clone(),
            UpdateRule::HeatBath,
        )?;
        let traj = run(&dynamics, 0.0, xi, t_end, noise, &times)?;
        frames.extend(traj.snapshots);
    }
    for obs in &config.observables {
        let mut points = Vec::with_capacity(frames.len());
        for (t, spins) in &frames {
            let value = match obs.as_str() {
                "magnetization" => {
                    spins.iter().map(|&s| s as f64).sum::<f64>() / spins.len() as f64
                }
                "window_mass" => {
                    profile_integral(region, spins, &scales, config.m_star, &window)?
                }
                _ => unreachable!("validated observable"),
            };
            points.push((*t, value));
        }
        series.insert(obs.clone(), points);
    }
    Ok(series)
}

/// Least-squares slope with a stratified bootstrap interval.
#[derive(Debug, Clone, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub ci: (f64, f64),
    /// Cells entering the fit.
    pub points: usize,
    /// Bootstrap resamples that produced a usable refit.
    pub resamples_used: usize,
}

/// Fit `y = ln(median)` against `x` over cells of censored observations,
/// excluding cells whose median is beyond the cap. The interval is a
/// percentile bootstrap, resampling within each cell.
fn slope_fit(cells: &[(f64, Vec<Censored>)], seed: u64) -> Result<Option<SlopeFit>> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut included = Vec::new();
    for (x, obs) in cells {
        let m = censored_quantile(obs, 0.5)?;
        if m.is_finite() && m > 0.0 {
            xs.push(*x);
            ys.push(m.ln());
            included.push(obs.clone());
        }
    }
    if xs.len() < 2 {
        return Ok(None);
    }
    let (slope, intercept) = lsq_line(&xs, &ys)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut slopes = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    let mut bx = Vec::new();
    let mut by = Vec::new();
    for _ in 0..BOOTSTRAP_RESAMPLES {
        bx.clear();
        by.clear();
        for (i, obs) in included.iter().enumerate() {
            let resample: Vec<Censored> =
                (0..obs.len()).map(|_| obs[rng.gen_range(0..obs.len())]).collect();
            let m = censored_quantile(&resample, 0.5)?;
            if m.is_finite() && m > 0.0 {
                bx.push(xs[i]);
                by.push(m.ln());
            }
        }
        if bx.len() >= 2 {
            if let Ok((s, _)) = lsq_line(&bx, &by) {
                slopes.push(s);
            }
        }
    }
    let resamples_used = slopes.len();
    let ci = if resamples_used >= 2 {
        slopes.sort_by(f64::total_cmp);
        let tail = (1.0 - CI_LEVEL) / 2.0;
        (nearest_rank(&slopes, tail)?, nearest_rank(&slopes, 1.0 - tail)?)
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(Some(SlopeFit { slope, intercept, ci, points: xs.len(), resamples_used }))
}

fn bootstrap_seed(config: &ExperimentConfig, tag: u64, index: u64) -> u64 {
    stream(config.env_seed, purpose::EXPERIMENT, &[tag, index]).gen()
}

/// One field strength's hitting-time statistics.
#[derive(Debug, Clone, Serialize)]
pub struct NucleationCell {
    pub h: f64,
    pub summary: CensoredSummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct NucleationReport {
    pub config_hash: String,
    pub cells: Vec<NucleationCell>,
    /// ln(median hitting time) against h^{-(d-1)}; None when fewer than two
    /// cells have an observable median.
    pub fit: Option<SlopeFit>,
}

/// Scan the field strengths: per h, the censored hitting-time summary of
/// the window-mass stop predicate over all seeds, plus the relaxation-rate
/// fit of ln(median) against h^{-(d-1)}.
pub fn nucleation_scan(config: &ExperimentConfig) -> Result<(NucleationReport, Vec<RunRecord>)> {
    config.validate()?;
    let sink = OutputSink::new(config)?;
    let env = config.environment()?;
    let env_hash = sink.store_snapshot(&env)?;
    let hash = config.hash("nucleate");
    let window = config.window_region()?;
    let region = config.region()?;
    for p in window.points() {
        if !region.contains(*p) {
            return Err(Error::invalid("window exceeds the lattice".to_string()));
        }
    }

    let mut cells = Vec::new();
    let mut records = Vec::new();
    let mut fit_cells = Vec::new();
    for (hi, &h) in config.h_values.iter().enumerate() {
        let scales = config.scales(h)?;
        let spec = GibbsSpec::new(env.clone(), config.beta, h, Bc::Uniform(Sign::Minus))?;
        let threshold =
            config.stop_threshold * window.len() as f64 * cell_volume(config);
        let outcomes: Vec<(Censored, RunRecord)> = config
            .seeds
            .par_iter()
            .map(|&seed| -> Result<(Censored, RunRecord)> {
                let noise = GraphicalNoise::new(seed);
                let mut rule = WindowMassRule::new(
                    scales,
                    config.m_star,
                    window.points().to_vec(),
                    threshold,
                );
                let out = split(hitting_time(&spec, &mut rule, &noise, config.t_cap)?);
                let xi = vec![-1i8; region.len()];
                let series = record_series(config, &spec, &xi, &noise, out.0)?;
                let record = RunRecord {
                    experiment: "nucleate".to_string(),
                    config_hash: hash.clone(),
                    seed,
                    h,
                    arm: None,
                    outcome_time: out.0,
                    censored: out.1,
                    series,
                    env_snapshot: env_hash.clone(),
                };
                Ok((out, record))
            })
            .collect::<Result<_>>()?;
        let obs: Vec<Censored> = outcomes.iter().map(|(o, _)| *o).collect();
        records.extend(outcomes.into_iter().map(|(_, r)| r));
        let summary = censored_summary(
            &obs,
            BOOTSTRAP_RESAMPLES,
            bootstrap_seed(config, 0xCE11, hi as u64),
            CI_LEVEL,
        )?;
        let x = h.powi(-(config.dimension as i32 - 1));
        fit_cells.push((x, obs));
        cells.push(NucleationCell { h, summary });
    }
    let fit = slope_fit(&fit_cells, bootstrap_seed(config, 0x510F, 0))?;

    sink.write_runs("nucleate", &records)?;
    let rows: Vec<Vec<String>> = cells
        .iter()
        .map(|c| {
            vec![
                csv_f(c.h),
                c.summary.n.to_string(),
                csv_f(c.summary.censor_rate),
                csv_f(c.summary.q1),
                csv_f(c.summary.median),
                csv_f(c.summary.q3),
                csv_f(c.summary.ci.0),
                csv_f(c.summary.ci.1),
            ]
        })
        .collect();
    sink.write_csv(
        "nucleate_summary",
        &["h", "n", "censor_rate", "q1", "median", "q3", "ci_lo", "ci_hi"],
        &rows,
    )?;
    Ok((NucleationReport { config_hash: hash, cells, fit }, records))
}

fn cell_volume(config: &ExperimentConfig) -> f64 {
    (config.lattice as f64).powi(config.dimension as i32).recip()
}

#[derive(Debug, Clone, Serialize)]
pub struct CatalystReport {
    pub config_hash: String,
    pub theta: f64,
    pub b_max: f64,
    pub h: f64,
    pub carved_edges: u64,
    pub pairs: usize,
    /// Pairs with a decidable order (not both censored, not exactly tied).
    pub informative: usize,
    pub carved_not_later: usize,
    pub ties: usize,
    /// One-sided sign test: chance of at least this many carved wins under
    /// the no-effect null.
    pub p_value: f64,
    pub median_uncarved: f64,
    pub median_carved: f64,
    /// carved / uncarved.
    pub median_ratio: f64,
    pub ratio_ci: (f64, f64),
    pub replay_verified: bool,
    pub verdict: String,
}

/// Noise-paired A/B comparison of the bare environment against the same
/// environment with a carved catalyst cone at the origin. The stop
/// predicate is the plus mass inside the cone's mouth (the carved sector
/// itself), an increasing event, so the per-noise comparison is meaningful.
pub fn catalyst_ab(config: &ExperimentConfig) -> Result<(CatalystReport, Vec<RunRecord>)> {
    config.validate()?;
    let sink = OutputSink::new(config)?;
    let env = config.environment()?;
    let h = config.h_values[0];
    let scales = config.scales(h)?;
    let (_, b_max, _) = config.droplet_sizes()?;
    let anchor: Pt = [0, 0, 0];
    let carved_env =
        Arc::new(carve_catalyst(&env, config.theta, b_max, anchor, &scales)?);
    let hash = config.hash("catalyst");
    let hash_a = sink.store_snapshot(&env)?;
    let hash_b = sink.store_snapshot(&carved_env)?;

    // The cone's mouth: the sector that was carved, as the observation
    // window shared by both arms.
    let sector = Sector { dim: config.dimension, theta: config.theta, b: b_max };
    let mouth = discretize(&sector, &scales)?;
    let region = config.region()?;
    let mouth_pts: Vec<Pt> = mouth.points().iter().map(|&p| add(p, anchor)).collect();
    // An empty mouth means nothing was carved and nothing to observe inside
    // the cone; fall back to the central window so both (identical) arms
    // still produce a verdict.
    let window_pts = if mouth_pts.is_empty() {
        config.window_region()?.points().to_vec()
    } else {
        mouth_pts
    };
    for p in &window_pts {
        if !region.contains(*p) {
            return Err(Error::OutOfBounds("cone mouth exceeds the lattice".to_string()));
        }
    }
    let threshold = config.stop_threshold * window_pts.len() as f64 * cell_volume(config);

    let spec_a = GibbsSpec::new(env.clone(), config.beta, h, Bc::Uniform(Sign::Minus))?;
    let spec_b = GibbsSpec::new(carved_env.clone(), config.beta, h, Bc::Uniform(Sign::Minus))?;
    let run_pair = |seed: u64| -> Result<(Censored, Censored)> {
        let noise = GraphicalNoise::new(seed);
        let mut rule_a = WindowMassRule::new(
            scales,
            config.m_star,
            window_pts.clone(),
            threshold,
        );
        let a = split(hitting_time(&spec_a, &mut rule_a, &noise, config.t_cap)?);
        let mut rule_b = WindowMassRule::new(
            scales,
            config.m_star,
            window_pts.clone(),
            threshold,
        );
        let b = split(hitting_time(&spec_b, &mut rule_b, &noise, config.t_cap)?);
        Ok((a, b))
    };
    let pairs: Vec<(u64, (Censored, Censored))> = config
        .seeds
        .par_iter()
        .map(|&seed| Ok((seed, run_pair(seed)?)))
        .collect::<Result<_>>()?;

    // Pairing discipline: replay the first pair and demand bit-equality.
    let replayed = run_pair(pairs[0].0)?;
    if replayed != pairs[0].1 {
        return Err(Error::Invariant(
            "paired replay diverged; runs are not deterministic in (config, seed)".to_string(),
        ));
    }

    let mut records = Vec::new();
    let mut carved_wins = 0usize;
    let mut ties = 0usize;
    let mut obs_a = Vec::new();
    let mut obs_b = Vec::new();
    for (seed, ((ta, ca), (tb, cb))) in &pairs {
        obs_a.push((*ta, *ca));
        obs_b.push((*tb, *cb));
        match (ca, cb) {
            (true, true) => ties += 1,
            (true, false) => carved_wins += 1,
            (false, true) => {}
            (false, false) => {
                if tb < ta {
                    carved_wins += 1;
                } else if tb == ta {
                    ties += 1;
                }
            }
        }
        for (arm, t, c, snap) in
            [("uncarved", ta, ca, &hash_a), ("carved", tb, cb, &hash_b)]
        {
            records.push(RunRecord {
                experiment: "catalyst".to_string(),
                config_hash: hash.clone(),
                seed: *seed,
                h,
                arm: Some(arm.to_string()),
                outcome_time: *t,
                censored: *c,
                series: BTreeMap::new(),
                env_snapshot: snap.clone(),
            });
        }
    }
    let informative = pairs.len() - ties;
    let p_value = if informative == 0 {
        1.0
    } else {
        sign_test_ge(carved_wins as u64, informative as u64)?
    };
    let median_uncarved = censored_quantile(&obs_a, 0.5)?;
    let median_carved = censored_quantile(&obs_b, 0.5)?;
    let median_ratio = if median_uncarved.is_infinite() && median_carved.is_infinite() {
        f64::NAN
    } else {
        median_carved / median_uncarved
    };
    // Percentile bootstrap of the ratio over pairs.
    let paired: Vec<(Censored, Censored)> = pairs.iter().map(|(_, p)| *p).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(bootstrap_seed(config, 0xCA7A, 0));
    let mut ratios = Vec::new();
    for _ in 0..BOOTSTRAP_RESAMPLES {
        let sample: Vec<(Censored, Censored)> =
            (0..paired.len()).map(|_| paired[rng.gen_range(0..paired.len())]).collect();
        let ma = censored_quantile(&sample.iter().map(|s| s.0).collect::<Vec<_>>(), 0.5)?;
        let mb = censored_quantile(&sample.iter().map(|s| s.1).collect::<Vec<_>>(), 0.5)?;
        let r = mb / ma;
        if !r.is_nan() {
            ratios.push(r);
        }
    }
    let ratio_ci = if ratios.len() >= 2 {
        ratios.sort_by(f64::total_cmp);
        let tail = (1.0 - CI_LEVEL) / 2.0;
        (nearest_rank(&ratios, tail)?, nearest_rank(&ratios, 1.0 - tail)?)
    } else {
        (f64::NAN, f64::NAN)
    };
    let verdict = if informative == 0 {
        "undetermined"
    } else if p_value < 0.05 {
        "carved-arm-faster"
    } else {
        "no-effect-detected"
    };

    let report = CatalystReport {
        config_hash: hash,
        theta: config.theta,
        b_max,
        h,
        carved_edges: carved_env.carved_count,
        pairs: pairs.len(),
        informative,
        carved_not_later: carved_wins,
        ties,
        p_value,
        median_uncarved,
        median_carved,
        median_ratio,
        ratio_ci,
        replay_verified: true,
        verdict: verdict.to_string(),
    };
    sink.write_runs("catalyst", &records)?;
    let rows: Vec<Vec<String>> = pairs
        .iter()
        .map(|(seed, ((ta, ca), (tb, cb)))| {
            vec![
                seed.to_string(),
                csv_f(*ta),
                ca.to_string(),
                csv_f(*tb),
                cb.to_string(),
            ]
        })
        .collect();
    sink.write_csv(
        "catalyst_pairs",
        &["seed", "t_uncarved", "censored_uncarved", "t_carved", "censored_carved"],
        &rows,
    )?;
    Ok((report, records))
}

/// Outcome counts of the growth race at one planted size.
#[derive(Debug, Clone, Serialize)]
pub struct GrowReport {
    pub b_plant: f64,
    pub droplet_vertices: usize,
    /// Initial plus mass (macroscopic units).
    pub planted_mass: f64,
    pub grew: usize,
    pub shrank: usize,
    pub undecided: usize,
    pub grow_fraction: f64,
    /// Sign test against the fair null among decided runs, each direction.
    pub p_grow: f64,
    pub p_shrink: f64,
}

/// Plant the full-space droplet shape at each size, run the growth race
/// from +1-on-droplet / -1-elsewhere under minus boundary, and classify
/// each seed: grew (watched plus mass reached double the planted mass) or
/// shrank (fell to half) before the cap. The race watches a window of three
/// times the droplet's extent per axis (clipped to the lattice), so distant
/// thermal flips do not decide a small droplet's fate; an empty plant
/// watches the whole region.
pub fn plant_and_grow(
    config: &ExperimentConfig,
    b_plants: &[f64],
) -> Result<(Vec<GrowReport>, Vec<RunRecord>)> {
    config.validate()?;
    if b_plants.is_empty() {
        return Err(Error::invalid("need at least one planted size".to_string()));
    }
    let sink = OutputSink::new(config)?;
    let env = config.environment()?;
    let env_hash = sink.store_snapshot(&env)?;
    let hash = config.hash("grow");
    let region = config.region()?;
    let h = config.h_values[0];
    let scales = config.scales(h)?;
    let spec = GibbsSpec::new(env.clone(), config.beta, h, Bc::Uniform(Sign::Minus))?;
    let model = config.tension_model();

    let mut reports = Vec::new();
    let mut records = Vec::new();
    for &b in b_plants {
        if !(b >= 0.0) {
            return Err(Error::invalid(format!("planted size {b} must be >= 0")));
        }
        let droplet: Vec<Pt> = if b == 0.0 {
            Vec::new()
        } else {
            let shape =
                wulff_shape(&model, config.dimension, 2.0 * std::f64::consts::PI, b)?;
            let pts = discretize(&shape, &scales)?.points().to_vec();
            for p in &pts {
                if !region.contains(*p) {
                    return Err(Error::OutOfBounds(format!(
                        "planted droplet of size {b} does not fit the lattice"
                    )));
                }
            }
            pts
        };
        let mut xi = vec![-1i8; region.len()];
        for p in &droplet {
            xi[region.idx(*p).unwrap() as usize] = 1;
        }
        let window: Vec<Pt> = if droplet.is_empty() {
            region.points().to_vec()
        } else {
            let mut lo = [i64::MAX; 3];
            let mut hi = [i64::MIN; 3];
            for p in &droplet {
                for a in 0..config.dimension {
                    lo[a] = lo[a].min(p[a]);
                    hi[a] = hi[a].max(p[a]);
                }
            }
            let margin: Vec<i64> = (0..config.dimension)
                .map(|a| (hi[a] - lo[a] + 1).max(2 * scales.k as i64))
                .collect();
            region
                .points()
                .iter()
                .copied()
                .filter(|p| {
                    (0..config.dimension)
                        .all(|a| p[a] >= lo[a] - margin[a] && p[a] <= hi[a] + margin[a])
                })
                .collect()
        };
        // Planted mass from the same incremental rule the race uses.
        let mut probe = WindowMassRule::new(scales, config.m_star, window.clone(), f64::INFINITY);
        probe.start(&region, &xi);
        let planted = probe.integral();
        let (lo, hi) = if planted > 0.0 {
            // Growing means doubling, but by at least four microscopic
            // spins, so a single-flip excursion cannot decide the race for
            // near-pointlike plants.
            let floor = 4.0 * cell_volume(config);
            (planted / 2.0, (2.0 * planted).max(planted + floor))
        } else {
            // Nothing planted: "grew" means one mesoscopic box of plus
            // phase appeared (bare nucleation); nothing can shrink.
            (f64::NEG_INFINITY, scales.box_macro_volume(config.dimension))
        };

        let runs: Vec<(Censored, bool)> = config
            .seeds
            .par_iter()
            .map(|&seed| -> Result<(Censored, bool)> {
                let noise = GraphicalNoise::new(seed);
                let mut race = RaceRule {
                    mass: WindowMassRule::new(
                        scales,
                        config.m_star,
                        window.clone(),
                        f64::INFINITY,
                    ),
                    lo,
                    hi,
                };
                let out = split(first_passage(&spec, &xi, &mut race, &noise, config.t_cap)?);
                let grew = !out.1 && race.mass.integral() >= hi - 1e-12;
                Ok((out, grew))
            })
            .collect::<Result<_>>()?;

        let grew = runs.iter().filter(|(o, g)| !o.1 && *g).count();
        let shrank = runs.iter().filter(|(o, g)| !o.1 && !*g).count();
        let undecided = runs.len() - grew - shrank;
        let decided = grew + shrank;
        for (&seed, (out, g)) in config.seeds.iter().zip(&runs) {
            let noise = GraphicalNoise::new(seed);
            let series = record_series(config, &spec, &xi, &noise, out.0)?;
            records.push(RunRecord {
                experiment: "grow".to_string(),
                config_hash: hash.clone(),
                seed,
                h,
                arm: Some(format!(
                    "b={b};{}",
                    if out.1 {
                        "undecided"
                    } else if *g {
                        "grew"
                    } else {
                        "shrank"
                    }
                )),
                outcome_time: out.0,
                censored: out.1,
                series,
                env_snapshot: env_hash.clone(),
            });
        }
        reports.push(GrowReport {
            b_plant: b,
            droplet_vertices: droplet.len(),
            planted_mass: planted,
            grew,
            shrank,
            undecided,
            grow_fraction: grew as f64 / runs.len() as f64,
            p_grow: if decided == 0 {
                1.0
            } else {
                sign_test_ge(grew as u64, decided as u64)?
            },
            p_shrink: if decided == 0 {
                1.0
            } else {
                sign_test_ge(shrank as u64, decided as u64)?
            },
        });
    }
    sink.write_runs("grow", &records)?;
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            vec![
                csv_f(r.b_plant),
                r.droplet_vertices.to_string(),
                csv_f(r.planted_mass),
                r.grew.to_string(),
                r.shrank.to_string(),
                r.undecided.to_string(),
                csv_f(r.grow_fraction),
                csv_f(r.p_grow),
                csv_f(r.p_shrink),
            ]
        })
        .collect();
    sink.write_csv(
        "grow_summary",
        &[
            "b_plant",
            "droplet_vertices",
            "planted_mass",
            "grew",
            "shrank",
            "undecided",
            "grow_fraction",
            "p_grow",
            "p_shrink",
        ],
        &rows,
    )?;
    Ok((reports, records))
}

/// One seed's directed-growth outcome on the rescaled lattice.
#[derive(Debug, Clone, Serialize)]
pub struct GridRun {
    pub seed: u64,
    /// occupation[g][cell ordinal] for generations 1..=G.
    pub occupation: Vec<Vec<bool>>,
    /// Cells per unit time along the growth cluster's sup-norm front.
    pub front_speed: f64,
    pub reached_far_corner: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GridReport {
    pub config_hash: String,
    pub cells_per_axis: u64,
    pub generations: usize,
    pub cell_period: f64,
    pub b_plant: f64,
    /// Rescaled coordinates of every cell, ordinal order.
    pub cells: Vec<Pt>,
    pub planted_cell: Pt,
    pub far_cell: Pt,
    pub runs: Vec<GridRun>,
    /// Fraction of seeds whose occupation contains a directed path from the
    /// planted cell to the far corner.
    pub path_fraction: f64,
    pub median_front_speed: f64,
}

/// Rescaled-lattice growth: plant a droplet in the lowest-corner cell and
/// record, per space-time cell `(x, i)`, whether the plus mass filled the
/// cell by its end time `i * cell_period`. A cell counts as reachable when
/// an occupied chain of unit steps (in the rescaled metric) leads to it
/// from the planted cell, one step per generation.
pub fn conductive_grid_experiment(
    config: &ExperimentConfig,
) -> Result<(GridReport, Vec<RunRecord>)> {
    config.validate()?;
    if config.lattice % config.cell != 0 {
        return Err(Error::invalid(format!(
            "cell side {} must divide the lattice side {}",
            config.cell, config.lattice
        )));
    }
    let m = config.lattice / config.cell;
    if m < 3 {
        return Err(Error::TooLarge(format!(
            "domain holds only {m}x{m} rescaled cells; need at least 3x3"
        )));
    }
    let sink = OutputSink::new(config)?;
    let env = config.environment()?;
    let env_hash = sink.store_snapshot(&env)?;
    let hash = config.hash("grid");
    let region = config.region()?;
    let h = config.h_values[0];
    let scales = config.scales(h)?;
    let (_, _, b_plant) = config.droplet_sizes()?;

    // Cell geometry: cells tile the region from its low corner.
    let dim = config.dimension;
    let (region_lo, _) = region.bounding_box();
    let mut cells: Vec<Pt> = Vec::new();
    let mi = m as i64;
    for cz in 0..if dim == 3 { mi } else { 1 } {
        for cy in 0..mi {
            for cx in 0..mi {
                cells.push([cx, cy, cz]);
            }
        }
    }
    cells.sort_unstable();
    let cell_regions: Vec<LatticeRegion> = cells
        .iter()
        .map(|c| {
            let lo = [
                region_lo[0] + c[0] * config.cell as i64,
                region_lo[1] + c[1] * config.cell as i64,
                if dim == 3 { region_lo[2] + c[2] * config.cell as i64 } else { 0 },
            ];
            let size =
                if dim == 3 { [config.cell; 3] } else { [config.cell, config.cell, 1] };
            LatticeRegion::box_region(dim, lo, size)
        })
        .collect::<Result<_>>()?;
    let planted_cell: Pt = [0, 0, 0];
    let far_cell: Pt = if dim == 3 { [mi - 1; 3] } else { [mi - 1, mi - 1, 0] };

    // Planted droplet at the planted cell's center.
    let planted_region = &cell_regions[0];
    let (plo, phi) = planted_region.bounding_box();
    let anchor: Pt = [
        (plo[0] + phi[0]) / 2,
        (plo[1] + phi[1]) / 2,
        if dim == 3 { (plo[2] + phi[2]) / 2 } else { 0 },
    ];
    let shape = wulff_shape(
        &config.tension_model(),
        dim,
        2.0 * std::f64::consts::PI,
        b_plant,
    )?;
    let droplet: Vec<Pt> =
        discretize(&shape, &scales)?.points().iter().map(|&p| add(p, anchor)).collect();
    for p in &droplet {
        if !region.contains(*p) {
            return Err(Error::OutOfBounds(format!(
                "planted droplet of size {b_plant} does not fit its cell's corner"
            )));
        }
    }
    let mut xi = vec![-1i8; region.len()];
    for p in &droplet {
        xi[region.idx(*p).unwrap() as usize] = 1;
    }

    let generations = (config.t_cap / config.cell_period).floor() as usize;
    let threshold_frac = config.stop_threshold;
    let cell_vol = config.cell.pow(dim as u32) as f64 * cell_volume(config);

    let runs: Vec<GridRun> = config
        .seeds
        .par_iter()
        .map(|&seed| -> Result<GridRun> {
            let noise = GraphicalNoise::new(seed);
            let mut occupation = Vec::with_capacity(generations);
            if generations > 0 {
                let t_end = generations as f64 * config.cell_period;
                let times: Vec<f64> =
                    (1..=generations).map(|i| i as f64 * config.cell_period).collect();
                let st = SpaceTimeRegion::constant(env.region.clone(), 0.0, t_end)?;
                let dynamics = StDynamics::new(
                    st,
                    env.clone(),
                    config.beta,
                    h,
                    Bc::Uniform(Sign::Minus),
                    UpdateRule::HeatBath,
                )?;
                let traj = run(&dynamics, 0.0, &xi, t_end, &noise, &times)?;
                for (_, spins) in &traj.snapshots {
                    let mut row = Vec::with_capacity(cells.len());
                    for cr in &cell_regions {
                        let mass =
                            profile_integral(&region, spins, &scales, config.m_star, cr)?;
                        row.push(mass >= threshold_frac * cell_vol - 1e-12);
                    }
                    occupation.push(row);
                }
            }
            // Directed reachability, one rescaled step per generation.
            let ord: BTreeMap<Pt, usize> =
                cells.iter().enumerate().map(|(i, &c)| (c, i)).collect();
            let mut reachable: Vec<bool> = vec![false; cells.len()];
            reachable[ord[&planted_cell]] = true;
            let mut reached_far = false;
            let mut front = Vec::new();
            for (g, row) in occupation.iter().enumerate() {
                let mut next = vec![false; cells.len()];
                for (i, &c) in cells.iter().enumerate() {
                    if !row[i] {
                        continue;
                    }
                    let near = |j: usize| {
                        let a = cells[j];
                        (0..dim).map(|k| (a[k] - c[k]).abs()).sum::<i64>() <= 1
                    };
                    if (0..cells.len()).any(|j| reachable[j] && near(j)) {
                        next[i] = true;
                    }
                }
                reachable = next;
                if reachable[ord[&far_cell]] {
                    reached_far = true;
                }
                let dist = cells
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| reachable[*i])
                    .map(|(_, c)| (0..dim).map(|k| (c[k] - planted_cell[k]).abs()).max().unwrap())
                    .max();
                if let Some(d) = dist {
                    front.push(((g + 1) as f64 * config.cell_period, d as f64));
                }
            }
            let front_speed = if front.len() >= 2 {
                let xs: Vec<f64> = front.iter().map(|p| p.0).collect();
                let ys: Vec<f64> = front.iter().map(|p| p.1).collect();
                lsq_line(&xs, &ys).map(|(s, _)| s).unwrap_or(0.0)
            } else {
                0.0
            };
            Ok(GridRun { seed, occupation, front_speed, reached_far_corner: reached_far })
        })
        .collect::<Result<_>>()?;

    let records: Vec<RunRecord> = runs
        .iter()
        .map(|r| RunRecord {
            experiment: "grid".to_string(),
            config_hash: hash.clone(),
            seed: r.seed,
            h,
            arm: None,
            outcome_time: generations as f64 * config.cell_period,
            censored: !r.reached_far_corner,
            series: BTreeMap::new(),
            env_snapshot: env_hash.clone(),
        })
        .collect();
    let path_fraction =
        runs.iter().filter(|r| r.reached_far_corner).count() as f64 / runs.len() as f64;
    let mut speeds: Vec<f64> = runs.iter().map(|r| r.front_speed).collect();
    speeds.sort_by(f64::total_cmp);
    let median_front_speed = nearest_rank(&speeds, 0.5)?;

    sink.write_runs("grid", &records)?;
    let rows: Vec<Vec<String>> = runs
        .iter()
        .map(|r| {
            vec![
                r.seed.to_string(),
                r.reached_far_corner.to_string(),
                csv_f(r.front_speed),
            ]
        })
        .collect();
    sink.write_csv("grid_summary", &["seed", "reached_far_corner", "front_speed"], &rows)?;

    Ok((
        GridReport {
            config_hash: hash,
            cells_per_axis: m,
            generations,
            cell_period: config.cell_period,
            b_plant,
            cells,
            planted_cell,
            far_cell,
            runs,
            path_fraction,
            median_front_speed,
        },
        records,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn base_config() -> ExperimentConfig {
        ExperimentConfig {
            lattice: 12,
            beta: 0.8,
            p: 1.0,
            h_values: vec![1.2, 0.8],
            seeds: (1..=6).collect(),
            t_cap: 80.0,
            k: 4,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn config_toml_round_trip_and_validation() {
        let config = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(config, ExperimentConfig::default());
        assert_eq!(config.window_side(), config.lattice / 2);

        let text = "lattice = 16\nbeta = 1.5\nh_values = [0.3]\nseeds = [1, 2, 3]\n";
        let config = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(config.lattice, 16);
        assert_eq!(config.seeds, vec![1, 2, 3]);
        let round = ExperimentConfig::from_toml(&config.to_toml().unwrap()).unwrap();
        assert_eq!(round, config);

        // Unknown keys and invariant violations are rejected.
        assert!(ExperimentConfig::from_toml("latice = 16").is_err());
        assert!(ExperimentConfig::from_toml("lattice = 7").is_err());
        assert!(ExperimentConfig::from_toml("k = 5").is_err());
        assert!(ExperimentConfig::from_toml("p = 0.0").is_err());
        assert!(ExperimentConfig::from_toml("h_values = []").is_err());
        assert!(ExperimentConfig::from_toml("seeds = []").is_err());
        assert!(ExperimentConfig::from_toml("observables = [\"energy\"]").is_err());
        assert!(ExperimentConfig::from_toml("m_star = 1.5").is_err());

        // Distinct configs hash differently; experiments partition the space.
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.t_cap += 1.0;
        assert_ne!(a.hash("nucleate"), b.hash("nucleate"));
        assert_ne!(a.hash("nucleate"), a.hash("catalyst"));
    }

    #[test]
    fn window_rule_tracks_profile_integral() {
        let region = centered_box(2, 12).unwrap();
        let scales = Scales::explicit(0.3, 4, 12).unwrap();
        let window = LatticeRegion::box_region(2, [-2, -3, 0], [5, 6, 1]).unwrap();
        let mut spins = vec![-1i8; region.len()];
        let mut rule =
            WindowMassRule::new(scales, 0.7, window.points().to_vec(), 0.5);
        rule.start(&region, &spins);
        let direct = |s: &[i8]| profile_integral(&region, s, &scales, 0.7, &window).unwrap();
        assert!((rule.integral() - direct(&spins)).abs() < 1e-12);

        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..400 {
            let v = rng.gen_range(0..region.len());
            spins[v] = -spins[v];
            rule.flip(v as u32, spins[v]);
            assert!((rule.integral() - direct(&spins)).abs() < 1e-9);
        }
        // Threshold semantics at m* = 1: the integral is the literal plus
        // volume, so an all-plus state meets a full-window threshold.
        let plus = vec![1i8; region.len()];
        let vol = window.len() as f64 / 144.0;
        let mut rule = WindowMassRule::new(scales, 1.0, window.points().to_vec(), vol);
        rule.start(&region, &plus);
        assert!((rule.integral() - vol).abs() < 1e-12);
        assert!(rule.holds());
    }

    #[test]
    fn nucleation_scan_structure_and_determinism() {
        let tmp = tempfile::tempdir().unwrap();
        let mut config = base_config();
        config.out_dir = Some(tmp.path().to_path_buf());
        let (report, records) = nucleation_scan(&config).unwrap();

        assert_eq!(report.cells.len(), 2);
        assert_eq!(records.len(), 12);
        for cell in &report.cells {
            assert_eq!(cell.summary.n, 6);
            assert!(cell.summary.censor_rate < 1.0, "expected hits at h={}", cell.h);
            assert!(cell.summary.median.is_finite() && cell.summary.median > 0.0);
            assert!(cell.summary.ci.0 <= cell.summary.median);
        }
        let fit = report.fit.as_ref().expect("two finite cells fit a line");
        assert_eq!(fit.points, 2);
        assert!(fit.resamples_used > 500);
        assert!(fit.ci.0 <= fit.slope && fit.slope <= fit.ci.1);

        // Determinism: the whole report replays bit-exactly.
        let mut config2 = config.clone();
        config2.out_dir = None;
        let (report2, records2) = nucleation_scan(&config2).unwrap();
        assert_eq!(records, records2);
        assert_eq!(
            serde_json::to_string(&report).unwrap(),
            serde_json::to_string(&report2).unwrap()
        );

        // Persistence: JSONL lines match the records; CSV has one row per h.
        let lines = std::fs::read_to_string(tmp.path().join("nucleate_runs.jsonl")).unwrap();
        let parsed: Vec<RunRecord> =
            lines.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(parsed, records);
        let csv = std::fs::read_to_string(tmp.path().join("nucleate_summary.csv")).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("h,n,censor_rate"));
        // One snapshot, content-addressed.
        let snaps: Vec<_> =
            std::fs::read_dir(tmp.path().join("snapshots")).unwrap().collect();
        assert_eq!(snaps.len(), 1);
    }

    #[test]
    fn nucleation_records_series_when_asked() {
        let mut config = base_config();
        config.h_values = vec![1.2];
        config.seeds = vec![5];
        config.observables = vec!["magnetization".to_string(), "window_mass".to_string()];
        let (_, records) = nucleation_scan(&config).unwrap();
        let series = &records[0].series;
        let mag = &series["magnetization"];
        assert_eq!(mag.len(), 33);
        assert!((mag[0].1 + 1.0).abs() < 1e-12, "starts all-minus");
        assert!(mag.last().unwrap().1 > mag[0].1, "field pushes the mean up");
        let mass = &series["window_mass"];
        assert!(mass.windows(2).all(|w| w[0].0 < w[1].0));
        // The stop predicate was plus fraction >= 1/2 of the window; by the
        // hit time the recorded mass is near or past the threshold.
        let window_vol = 36.0 / 144.0;
        assert!(mass.last().unwrap().1 >= 0.4 * window_vol);
    }

    #[test]
    fn zero_cap_censors_everything() {
        let mut config = base_config();
        config.t_cap = 0.0;
        config.h_values = vec![0.8, 0.5];
        let (report, records) = nucleation_scan(&config).unwrap();
        assert!(records.iter().all(|r| r.censored && r.outcome_time == 0.0));
        for cell in &report.cells {
            assert_eq!(cell.summary.censor_rate, 1.0);
            assert!(cell.summary.median.is_infinite());
        }
        assert!(report.fit.is_none(), "all-censored cells are excluded from the fit");
    }

    #[test]
    fn catalyst_pairs_and_verdict() {
        let tmp = tempfile::tempdir().unwrap();
        let mut config = base_config();
        config.lattice = 16;
        config.beta = 1.2;
        config.h_values = vec![1.0];
        config.k = 1;
        // A 120-degree cone: its boundary has irrational slope, so the
        // discretized sector has vertices whose neighbors leave the cone
        // and the carving set is provably nonempty.
        config.theta = 2.0 * std::f64::consts::FRAC_PI_3;
        config.b_max = Some(0.3);
        config.seeds = (1..=8).collect();
        config.t_cap = 120.0;
        config.out_dir = Some(tmp.path().to_path_buf());
        let (report, records) = catalyst_ab(&config).unwrap();

        assert!(report.carved_edges > 0, "the sector should carve edges");
        assert_eq!(report.pairs, 8);
        assert_eq!(report.informative + report.ties, 8);
        assert!(report.carved_not_later <= report.informative);
        assert!((0.0..=1.0).contains(&report.p_value));
        assert!(report.replay_verified);
        assert!(report.median_ratio > 0.0);
        assert_eq!(records.len(), 16);
        assert!(["carved-arm-faster", "no-effect-detected", "undetermined"]
            .contains(&report.verdict.as_str()));
        // Two distinct environments, both stored.
        let snaps: Vec<_> =
            std::fs::read_dir(tmp.path().join("snapshots")).unwrap().collect();
        assert_eq!(snaps.len(), 2);
        let arms: std::collections::BTreeSet<_> =
            records.iter().filter_map(|r| r.arm.clone()).collect();
        assert_eq!(arms.len(), 2);
    }

    #[test]
    fn catalyst_with_nothing_carved_is_a_tie() {
        let mut config = base_config();
        config.lattice = 16;
        config.h_values = vec![1.5];
        config.b_max = Some(0.02); // sector too small to hold any box
        config.seeds = (1..=4).collect();
        let (report, _) = catalyst_ab(&config).unwrap();
        assert_eq!(report.carved_edges, 0);
        assert_eq!(report.ties, report.pairs);
        assert_eq!(report.informative, 0);
        assert_eq!(report.p_value, 1.0);
        assert_eq!(report.verdict, "undetermined");
        // Identical arms, full hits: the medians agree exactly.
        assert_eq!(report.median_uncarved, report.median_carved);
        assert!((report.median_ratio - 1.0).abs() < 1e-12);
    }

    #[test]
    fn planted_droplets_grow_or_shrink_by_regime() {
        let mut config = base_config();
        config.lattice = 12;
        config.k = 2;
        config.beta = 1.0;
        config.seeds = (1..=6).collect();
        config.t_cap = 120.0;

        // Strong field: a planted half-width droplet engulfs the lattice.
        config.h_values = vec![1.2];
        let (reports, records) = plant_and_grow(&config, &[0.3]).unwrap();
        let r = &reports[0];
        assert!(r.droplet_vertices > 0);
        assert!(r.planted_mass > 0.0);
        assert_eq!(r.grew, 6, "strong field must grow: {r:?}");
        assert!(r.p_grow < 0.05);
        assert_eq!(records.len(), 6);
        assert!(records.iter().all(|rec| rec.arm.as_deref().unwrap().contains("grew")));

        // Negligible field at low temperature: the droplet dissolves before
        // any fluctuation can double its mass.
        config.h_values = vec![0.02];
        config.beta = 2.5;
        let (reports, _) = plant_and_grow(&config, &[0.3]).unwrap();
        let r = &reports[0];
        assert_eq!(r.shrank, 6, "tiny droplet must dissolve: {r:?}");
        assert!(r.p_shrink < 0.05);

        // Nothing planted: the race waits for bare nucleation.
        config.h_values = vec![1.2];
        config.beta = 1.0;
        let (reports, _) = plant_and_grow(&config, &[0.0]).unwrap();
        let r = &reports[0];
        assert_eq!(r.droplet_vertices, 0);
        assert_eq!(r.planted_mass, 0.0);
        assert_eq!(r.shrank, 0, "nothing can shrink below an empty plant");
        assert_eq!(r.grew, 6, "strong field nucleates within the cap");

        // A droplet larger than the lattice is rejected.
        assert!(plant_and_grow(&config, &[40.0]).is_err());
    }

    #[test]
    fn grid_requires_three_cells_and_detects_growth() {
        let mut config = base_config();
        config.lattice = 18;
        config.k = 2;
        config.cell = 6;
        config.beta = 1.0;
        config.h_values = vec![2.0];
        config.b_plant = Some(0.4);
        config.cell_period = 3.0;
        // The far corner sits at rescaled l1 distance 4, so it needs at
        // least four generations of aligned occupation; seven generations
        // leave room for a patchy first row.
        config.t_cap = 21.0;
        config.seeds = vec![1, 2, 3];

        let (report, records) = conductive_grid_experiment(&config).unwrap();
        assert_eq!(report.cells_per_axis, 3);
        assert_eq!(report.generations, 7);
        assert_eq!(report.cells.len(), 9);
        assert_eq!(records.len(), 3);
        for run in &report.runs {
            assert_eq!(run.occupation.len(), 7);
            assert!(run.occupation.iter().all(|row| row.len() == 9));
        }
        // A strong field fills everything: directed growth reaches the far
        // corner for every seed, at positive front speed.
        assert_eq!(report.path_fraction, 1.0, "{report:?}");
        assert!(report.median_front_speed > 0.0);
        assert!(report.runs.iter().all(|r| r.reached_far_corner));

        // Cap shorter than one period: no generations, nothing reached.
        let mut short = config.clone();
        short.t_cap = 2.0;
        let (report, _) = conductive_grid_experiment(&short).unwrap();
        assert_eq!(report.generations, 0);
        assert!(report.runs.iter().all(|r| r.occupation.is_empty()));
        assert_eq!(report.path_fraction, 0.0);

        // Too few cells.
        let mut small = config.clone();
        small.lattice = 12;
        small.cell = 6;
        assert!(conductive_grid_experiment(&small).is_err());

        // Cell side must tile the lattice.
        let mut ragged = config.clone();
        ragged.cell = 5;
        assert!(conductive_grid_experiment(&ragged).is_err());
    }
}
