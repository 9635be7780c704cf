//! Heat-bath Glauber dynamics from a graphical construction: rate-1 Poisson
//! clocks with uniform marks per vertex, replayable over arbitrary
//! space-time regions, plus monotone coupling, coupling-from-the-past,
//! block dynamics, and relaxation/hitting-time measurement.
//!
//! # Graphical construction
//!
//! Each lattice vertex carries a rate-1 Poisson process with i.i.d.
//! uniform[0,1] marks, generated lazily per unit time window from a
//! counter-based stream keyed by (seed, vertex, window). At an event at `x`
//! with mark `U`, the spin is resampled from the single-site conditional:
//! `sigma(x) = +1` iff `U > 1 - q` with `q` the conditional plus
//! probability. The mark rule makes the update a monotone function of the
//! neighborhood, so trajectories with shared noise and ordered inputs stay
//! ordered pointwise.
//!
//! # Space-time regions
//!
//! A region is a sequence of slabs with strictly increasing times; slab `i`
//! is active on `[t_i, t_{i+1})`. Vertices joining or leaving the active
//! slab are reset to the ambient reference configuration (the initial
//! configuration on the start slab, boundary values elsewhere); transitions
//! at a timestamp precede Poisson events at the same timestamp.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::geom::Pt;
use crate::gibbs::{heat_bath_plus_prob, local_energies, GibbsSpec};
use crate::lattice::{
    box_decomposition, gen_environment, restrict_environment, Bc, BoxDecomposition, EdgeZeta,
    Environment, LatticeRegion, Scales, Sign,
};
use crate::rng::{purpose, stream, zigzag};

/// One clock ring: an event time and its uniform mark.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoissonEvent {
    pub t: f64,
    pub mark: f64,
}

/// Lazy per-vertex event streams, deterministic given the seed and
/// consistent under window restriction: querying any interval regenerates
/// exactly the events of the unit windows it meets.
#[derive(Debug, Clone, Copy)]
pub struct GraphicalNoise {
    pub seed: u64,
}

impl GraphicalNoise {
    pub fn new(seed: u64) -> Self {
        GraphicalNoise { seed }
    }

    /// Events of the unit window `[k, k+1)`, sorted by time.
    fn window(&self, v: Pt, k: i64) -> Vec<PoissonEvent> {
        let mut r = stream(
            self.seed,
            purpose::CLOCK,
            &[zigzag(v[0]), zigzag(v[1]), zigzag(v[2]), zigzag(k)],
        );
        let n = Poisson::new(1.0).unwrap().sample(&mut r) as usize;
        let mut ev: Vec<PoissonEvent> = (0..n)
            .map(|_| PoissonEvent { t: k as f64 + r.gen::<f64>(), mark: r.gen::<f64>() })
            .collect();
        ev.sort_by(|a, b| a.t.total_cmp(&b.t));
        ev
    }

    /// Events of `v` with times in `[t0, t1)`, sorted.
    pub fn events(&self, v: Pt, t0: f64, t1: f64) -> Vec<PoissonEvent> {
        let mut out = Vec::new();
        if t1 <= t0 {
            return out;
        }
        let mut k = t0.floor() as i64;
        while (k as f64) < t1 {
            for e in self.window(v, k) {
                if e.t >= t0 && e.t < t1 {
                    out.push(e);
                }
            }
            k += 1;
        }
        out
    }
}

/// Conditional probability that a heat-bath update at `x` lands on plus.
pub fn heat_bath_prob(x: u32, spins: &[i8], spec: &GibbsSpec) -> f64 {
    let (e_plus, e_minus) = local_energies(&spec.env, spec.resolved(), spec.h, spins, x);
    heat_bath_plus_prob(spec.beta, e_plus, e_minus)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateRule {
    HeatBath,
    /// Propose a flip, accept with probability `min(1, exp(-beta dH))`.
    /// Not monotone; excluded from coupling-based operations.
    Metropolis,
}

/// Slabs with strictly increasing transition times; slab `i` is active on
/// `[times[i], times[i+1])`.
#[derive(Debug, Clone)]
pub struct SpaceTimeRegion {
    pub slabs: Vec<Arc<LatticeRegion>>,
    pub times: Vec<f64>,
}

impl SpaceTimeRegion {
    pub fn new(slabs: Vec<Arc<LatticeRegion>>, times: Vec<f64>) -> Result<Self> {
        if slabs.is_empty() || times.len() != slabs.len() + 1 {
            return Err(Error::invalid(format!(
                "need n+1 times for n slabs, got {} slabs and {} times",
                slabs.len(),
                times.len()
            )));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("slab times must strictly increase".to_string()));
        }
        let dim = slabs[0].dim();
        if slabs.iter().any(|s| s.dim() != dim) {
            return Err(Error::invalid("slabs must share a dimension".to_string()));
        }
        Ok(SpaceTimeRegion { slabs, times })
    }

    /// A single slab over `[t0, t1)`.
    pub fn constant(region: Arc<LatticeRegion>, t0: f64, t1: f64) -> Result<Self> {
        SpaceTimeRegion::new(vec![region], vec![t0, t1])
    }

    /// Shrinking pyramid: centered cubes of radius `r0, r0-1, ..., 0` on a
    /// uniform time grid over `[t0, t1]`.
    pub fn pyramid(dim: usize, center: Pt, r0: u64, t0: f64, t1: f64) -> Result<Self> {
        let mut slabs = Vec::new();
        for i in 0..=r0 {
            let r = (r0 - i) as i64;
            let mut lo = [0i64; 3];
            let mut size = [1u64; 3];
            for a in 0..dim {
                lo[a] = center[a] - r;
                size[a] = 2 * r as u64 + 1;
            }
            slabs.push(Arc::new(LatticeRegion::box_region(dim, lo, size)?));
        }
        let n = slabs.len();
        let times = (0..=n).map(|i| t0 + (t1 - t0) * i as f64 / n as f64).collect();
        SpaceTimeRegion::new(slabs, times)
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Active slab at time `t`; the final time maps to the last slab.
    pub fn slab_at(&self, t: f64) -> Option<usize> {
        if t < self.start() || t > self.end() {
            return None;
        }
        if t == self.end() {
            return Some(self.slabs.len() - 1);
        }
        Some(self.times[1..].partition_point(|&u| u <= t))
    }

    pub fn constant_slabs(&self) -> bool {
        self.slabs[1..].iter().all(|s| s.points() == self.slabs[0].points())
    }

    /// Union of all slabs.
    pub fn ambient_region(&self) -> Result<Arc<LatticeRegion>> {
        if self.constant_slabs() {
            return Ok(self.slabs[0].clone());
        }
        let mut pts: Vec<Pt> = self.slabs.iter().flat_map(|s| s.points().iter().copied()).collect();
        pts.sort_unstable();
        pts.dedup();
        Ok(Arc::new(LatticeRegion::from_points(self.slabs[0].dim(), pts)?))
    }
}

/// A space-time region bound to an environment, inverse temperature, field,
/// boundary condition and update rule. The Gibbs specification lives on the
/// ambient region (the union of all slabs).
#[derive(Debug, Clone)]
pub struct StDynamics {
    pub st: SpaceTimeRegion,
    pub spec: GibbsSpec,
    pub rule: UpdateRule,
    /// Per slab: ambient indices of the slab's vertices, ascending.
    slab_map: Vec<Vec<u32>>,
    /// Boundary values for ambient vertices outside the start slab; None
    /// when the slabs are constant (never needed then).
    template: Option<Vec<i8>>,
}

impl StDynamics {
    pub fn new(
        st: SpaceTimeRegion,
        env: Arc<Environment>,
        beta: f64,
        h: f64,
        bc: Bc,
        rule: UpdateRule,
    ) -> Result<Self> {
        let ambient = st.ambient_region()?;
        if env.region.points() != ambient.points() {
            return Err(Error::invalid(
                "environment region must equal the union of the slabs".to_string(),
            ));
        }
        let slab_map: Vec<Vec<u32>> = st
            .slabs
            .iter()
            .map(|s| s.points().iter().map(|p| env.region.idx(*p).unwrap()).collect())
            .collect();
        let template = if st.constant_slabs() {
            None
        } else {
            let mut t = Vec::with_capacity(env.region.len());
            for &p in env.region.points() {
                match env.region.zeta_value(&bc, p) {
                    Some(v) => t.push(v),
                    None => {
                        return Err(Error::Unsupported(
                            "changing slabs need a boundary condition with frozen spin values"
                                .to_string(),
                        ))
                    }
                }
            }
            Some(t)
        };
        let spec = GibbsSpec::new(env, beta, h, bc)?;
        Ok(StDynamics { st, spec, rule, slab_map, template })
    }

    pub fn ambient(&self) -> &LatticeRegion {
        self.spec.region()
    }

    /// Ambient reference configuration: `xi` on the start slab, boundary
    /// values elsewhere. Enter/leave resets restore these values.
    fn ambient_init(&self, start_slab: usize, xi: &[i8]) -> Result<Vec<i8>> {
        let map = &self.slab_map[start_slab];
        if xi.len() != map.len() {
            return Err(Error::invalid(format!(
                "initial configuration has {} spins, start slab has {}",
                xi.len(),
                map.len()
            )));
        }
        if xi.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::invalid("spins must be +1 or -1".to_string()));
        }
        let mut init = match &self.template {
            Some(t) => t.clone(),
            None => vec![0; self.ambient().len()],
        };
        for (k, &v) in map.iter().enumerate() {
            init[v as usize] = xi[k];
        }
        Ok(init)
    }
}

/// One trajectory on the ambient region.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub initial: Vec<i8>,
    pub events_applied: u64,
    /// Requested-time snapshots of the ambient configuration.
    pub snapshots: Vec<(f64, Vec<i8>)>,
    pub final_spins: Vec<i8>,
    pub final_time: f64,
}

fn apply_event(spec: &GibbsSpec, rule: UpdateRule, sigma: &mut [i8], v: u32, mark: f64) {
    match rule {
        UpdateRule::HeatBath => {
            let q = heat_bath_prob(v, sigma, spec);
            sigma[v as usize] = if mark > 1.0 - q { 1 } else { -1 };
        }
        UpdateRule::Metropolis => {
            let (e_plus, e_minus) = local_energies(&spec.env, spec.resolved(), spec.h, sigma, v);
            let cur = sigma[v as usize];
            let d = if cur > 0 { e_minus - e_plus } else { e_plus - e_minus };
            let acc = (-spec.beta * d).exp().min(1.0);
            if mark < acc {
                sigma[v as usize] = -cur;
            }
        }
    }
}

/// Drive any number of chains over the same space-time geometry with shared
/// noise. `after` runs after every event (vertex in ambient indices) and
/// every transition (vertex = u32::MAX); returning true stops the drive.
#[allow(clippy::too_many_arguments)]
fn drive(
    geom: &StDynamics,
    specs: &[&GibbsSpec],
    rule: UpdateRule,
    sigmas: &mut [Vec<i8>],
    inits: &[Vec<i8>],
    start: f64,
    t_end: f64,
    noise: &GraphicalNoise,
    snap_times: &[f64],
    mut after: impl FnMut(&[Vec<i8>], f64, u32) -> Result<bool>,
) -> Result<(u64, Vec<(f64, Vec<i8>)>, f64)> {
    let st = &geom.st;
    let amb = geom.ambient();
    let s_idx = st.slab_at(start).ok_or_else(|| {
        Error::invalid(format!("start time {start} outside [{}, {}]", st.start(), st.end()))
    })?;
    if t_end < start || t_end > st.end() {
        return Err(Error::invalid(format!("end time {t_end} outside [{start}, {}]", st.end())));
    }
    debug_assert!(snap_times.windows(2).all(|w| w[0] <= w[1]));

    let mut events_applied = 0u64;
    let mut snapshots = Vec::new();
    let mut snap_iter = snap_times.iter().copied().filter(|&t| t >= start && t <= t_end).peekable();
    let mut buf: Vec<(f64, u32, f64)> = Vec::new();

    let mut slab = s_idx;
    loop {
        let seg_a = start.max(st.times[slab]);
        let seg_b = t_end.min(st.times[slab + 1]);
        let verts = &geom.slab_map[slab];
        if seg_b > seg_a {
            let mut k = seg_a.floor() as i64;
            while (k as f64) < seg_b {
                let wa = seg_a.max(k as f64);
                let wb = seg_b.min((k + 1) as f64);
                buf.clear();
                for &vi in verts {
                    let p = amb.pt(vi);
                    for e in noise.window(p, k) {
                        if e.t >= wa && e.t < wb {
                            buf.push((e.t, vi, e.mark));
                        }
                    }
                }
                buf.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                for &(t, vi, mark) in &buf {
                    while let Some(&ts) = snap_iter.peek() {
                        if ts < t {
                            snapshots.push((ts, sigmas[0].clone()));
                            snap_iter.next();
                        } else {
                            break;
                        }
                    }
                    for (c, spec) in specs.iter().enumerate() {
                        apply_event(spec, rule, &mut sigmas[c], vi, mark);
                    }
                    events_applied += 1;
                    if after(sigmas, t, vi)? {
                        while let Some(&ts) = snap_iter.peek() {
                            if ts <= t_end {
                                snapshots.push((ts, sigmas[0].clone()));
                                snap_iter.next();
                            } else {
                                break;
                            }
                        }
                        return Ok((events_applied, snapshots, t));
                    }
                }
                k += 1;
            }
        }
        // Transition at seg end, if the run continues past it.
        if st.times[slab + 1] <= t_end && slab + 1 < st.slabs.len() {
            let t_tr = st.times[slab + 1];
            while let Some(&ts) = snap_iter.peek() {
                if ts < t_tr {
                    snapshots.push((ts, sigmas[0].clone()));
                    snap_iter.next();
                } else {
                    break;
                }
            }
            let cur = &geom.slab_map[slab];
            let next = &geom.slab_map[slab + 1];
            // Vertices entering or leaving reset to the reference values.
            let mut in_next = vec![false; amb.len()];
            for &v in next {
                in_next[v as usize] = true;
            }
            for &v in cur {
                if !in_next[v as usize] {
                    for (c, init) in inits.iter().enumerate() {
                        sigmas[c][v as usize] = init[v as usize];
                    }
                }
            }
            let mut in_cur = vec![false; amb.len()];
            for &v in cur {
                in_cur[v as usize] = true;
            }
            for &v in next {
                if !in_cur[v as usize] {
                    for (c, init) in inits.iter().enumerate() {
                        sigmas[c][v as usize] = init[v as usize];
                    }
                }
            }
            if after(sigmas, t_tr, u32::MAX)? {
                return Ok((events_applied, snapshots, t_tr));
            }
            slab += 1;
        } else {
            break;
        }
    }
    while let Some(&ts) = snap_iter.peek() {
        if ts <= t_end {
            snapshots.push((ts, sigmas[0].clone()));
            snap_iter.next();
        } else {
            break;
        }
    }
    Ok((events_applied, snapshots, t_end))
}

/// Run the dynamics from `(start, xi)` (xi on the slab active at `start`)
/// until `t_end`, recording ambient snapshots at the requested times.
pub fn run(
    dynamics: &StDynamics,
    start: f64,
    xi: &[i8],
    t_end: f64,
    noise: &GraphicalNoise,
    snap_times: &[f64],
) -> Result<Trajectory> {
    let s_idx = dynamics.st.slab_at(start).ok_or_else(|| {
        Error::invalid(format!(
            "start time {start} outside [{}, {}]",
            dynamics.st.start(),
            dynamics.st.end()
        ))
    })?;
    let init = dynamics.ambient_init(s_idx, xi)?;
    let mut sigmas = vec![init.clone()];
    let inits = vec![init.clone()];
    let (events_applied, snapshots, final_time) = drive(
        dynamics,
        &[&dynamics.spec],
        dynamics.rule,
        &mut sigmas,
        &inits,
        start,
        t_end,
        noise,
        snap_times,
        |_, _, _| Ok(false),
    )?;
    Ok(Trajectory {
        initial: init,
        events_applied,
        snapshots,
        final_spins: sigmas.pop().unwrap(),
        final_time,
    })
}

/// Restriction of a configuration to a sub-region by vertex lookup.
pub fn restrict_config(config: &[i8], from: &LatticeRegion, to: &LatticeRegion) -> Result<Vec<i8>> {
    to.points()
        .iter()
        .map(|&p| {
            from.idx(p)
                .map(|i| config[i as usize])
                .ok_or_else(|| Error::invalid(format!("vertex {p:?} missing from host region")))
        })
        .collect()
}

/// Frozen-spin comparison of two boundary conditions on the same region:
/// per boundary edge, minus <= dropped <= plus.
fn bc_leq(low: &GibbsSpec, high: &GibbsSpec) -> bool {
    let eff = |z: &EdgeZeta| match z {
        EdgeZeta::Interior => 2i8,
        EdgeZeta::Spin(Sign::Plus) => 1,
        EdgeZeta::Drop => 0,
        EdgeZeta::Spin(Sign::Minus) => -1,
        EdgeZeta::Wired(_) => 3,
    };
    low.resolved()
        .zeta
        .iter()
        .zip(high.resolved().zeta.iter())
        .all(|(l, h)| match (eff(l), eff(h)) {
            (2, 2) => true,
            (2, _) | (_, 2) | (3, _) | (_, 3) => false,
            (a, b) => a <= b,
        })
}

/// Run two chains with shared noise and ordered inputs, asserting the
/// pointwise order after every event and transition. Requires heat-bath
/// updates, a shared environment and equal temperatures.
#[allow(clippy::too_many_arguments)]
pub fn monotone_couple(
    low: &StDynamics,
    high: &StDynamics,
    xi_low: &[i8],
    xi_high: &[i8],
    start: f64,
    t_end: f64,
    noise: &GraphicalNoise,
) -> Result<(Trajectory, Trajectory)> {
    if low.rule != UpdateRule::HeatBath || high.rule != UpdateRule::HeatBath {
        return Err(Error::Unsupported("monotone coupling needs heat-bath updates".to_string()));
    }
    if !Arc::ptr_eq(&low.spec.env, &high.spec.env) {
        return Err(Error::invalid("coupled chains must share an environment".to_string()));
    }
    if low.spec.beta != high.spec.beta {
        return Err(Error::invalid("coupled chains must share beta".to_string()));
    }
    if low.spec.h > high.spec.h {
        return Err(Error::invalid("field of the low chain exceeds the high chain".to_string()));
    }
    if !bc_leq(&low.spec, &high.spec) {
        return Err(Error::invalid("boundary conditions are not ordered".to_string()));
    }
    if low.st.times != high.st.times
        || low
            .st
            .slabs
            .iter()
            .zip(high.st.slabs.iter())
            .any(|(a, b)| a.points() != b.points())
    {
        return Err(Error::invalid("coupled chains must share the space-time region".to_string()));
    }
    let s_idx = low.st.slab_at(start).ok_or_else(|| {
        Error::invalid(format!("start time {start} outside the region window"))
    })?;
    let init_low = low.ambient_init(s_idx, xi_low)?;
    let init_high = high.ambient_init(s_idx, xi_high)?;
    if init_low.iter().zip(init_high.iter()).any(|(a, b)| a > b) {
        return Err(Error::invalid("initial configurations are not ordered".to_string()));
    }
    let mut sigmas = vec![init_low.clone(), init_high.clone()];
    let inits = vec![init_low.clone(), init_high.clone()];
    let (events_applied, _, final_time) = drive(
        low,
        &[&low.spec, &high.spec],
        UpdateRule::HeatBath,
        &mut sigmas,
        &inits,
        start,
        t_end,
        noise,
        &[],
        |s, t, v| {
            if s[0].iter().zip(s[1].iter()).any(|(a, b)| a > b) {
                return Err(Error::Invariant(format!(
                    "monotonicity violated at time {t} (vertex {v})"
                )));
            }
            Ok(false)
        },
    )?;
    let hi = sigmas.pop().unwrap();
    let lo = sigmas.pop().unwrap();
    let traj = |init: Vec<i8>, fin: Vec<i8>| Trajectory {
        initial: init,
        events_applied,
        snapshots: Vec::new(),
        final_spins: fin,
        final_time,
    };
    Ok((traj(init_low, lo), traj(init_high, hi)))
}

/// Perfect sampling by coupling from the past: double the window backwards
/// until the all-plus and all-minus chains, driven by the same absolute
/// noise on `[-T, 0)`, coalesce at time zero.
pub fn cftp_sample(spec: &GibbsSpec, seed: u64, max_doublings: u32) -> Result<Vec<i8>> {
    let region_arc = spec.env.region.clone();
    let n = region_arc.len();
    let noise = GraphicalNoise::new(seed);
    for k in 0..=max_doublings {
        let t0 = -(2f64.powi(k as i32));
        let st = SpaceTimeRegion::constant(region_arc.clone(), t0, 0.0)?;
        let dynamics = StDynamics {
            st,
            spec: spec.clone(),
            rule: UpdateRule::HeatBath,
            slab_map: vec![(0..n as u32).collect()],
            template: None,
        };
        let mut sigmas = vec![vec![-1i8; n], vec![1i8; n]];
        let inits = sigmas.clone();
        drive(
            &dynamics,
            &[spec, spec],
            UpdateRule::HeatBath,
            &mut sigmas,
            &inits,
            t0,
            0.0,
            &noise,
            &[],
            |s, t, v| {
                debug_assert!(
                    s[0].iter().zip(s[1].iter()).all(|(a, b)| a <= b),
                    "sandwich broken at {t} (vertex {v})"
                );
                Ok(false)
            },
        )?;
        if sigmas[0] == sigmas[1] {
            return Ok(sigmas.pop().unwrap());
        }
    }
    Err(Error::Timeout(format!(
        "no coalescence within window 2^{max_doublings}; consider a larger budget"
    )))
}

/// Overlapping concentric sup-norm annuli of the given width covering the
/// region, consecutive rings overlapping by half a width.
pub fn annulus_blocks(
    region: &Arc<LatticeRegion>,
    width: u64,
) -> Result<Vec<Arc<LatticeRegion>>> {
    if width < 2 {
        return Err(Error::invalid("annulus width must be at least 2".to_string()));
    }
    let dim = region.dim();
    let (lo, hi) = region.bounding_box();
    let center: Vec<f64> = (0..dim).map(|a| (lo[a] as f64 + hi[a] as f64) / 2.0).collect();
    let dist = |p: Pt| -> f64 {
        (0..dim).map(|a| (p[a] as f64 - center[a]).abs()).fold(0.0, f64::max)
    };
    let r_max = region.points().iter().map(|&p| dist(p)).fold(0.0, f64::max);
    let half = width as f64 / 2.0;
    let mut blocks = Vec::new();
    let mut j = 0;
    loop {
        let a = j as f64 * half;
        if a > r_max {
            break;
        }
        let b = a + width as f64;
        let pts: Vec<Pt> =
            region.points().iter().copied().filter(|&p| dist(p) >= a && dist(p) < b).collect();
        if !pts.is_empty() {
            blocks.push(Arc::new(LatticeRegion::from_points(dim, pts)?));
        }
        j += 1;
    }
    Ok(blocks)
}

/// Block dynamics: each block carries a rate-1 clock; at a ring the block is
/// resampled from its conditional Gibbs measure given the current exterior,
/// via nested coupling-from-the-past.
pub fn block_dynamics(
    spec: &GibbsSpec,
    blocks: &[Arc<LatticeRegion>],
    xi: &[i8],
    t_end: f64,
    seed: u64,
    max_doublings: u32,
) -> Result<Trajectory> {
    let region = spec.region();
    if xi.len() != region.len() {
        return Err(Error::invalid("initial configuration size mismatch".to_string()));
    }
    if t_end < 0.0 {
        return Err(Error::invalid("negative time window".to_string()));
    }
    // Per-block clock events with one nested-sampler seed each.
    let mut events: Vec<(f64, usize, u64)> = Vec::new();
    for j in 0..blocks.len() {
        let mut k = 0i64;
        while (k as f64) < t_end {
            let mut r = stream(seed, purpose::BLOCK, &[j as u64, k as u64]);
            let n = Poisson::new(1.0).unwrap().sample(&mut r) as usize;
            for _ in 0..n {
                let t = k as f64 + r.gen::<f64>();
                let sub = r.gen::<u64>();
                if t < t_end {
                    events.push((t, j, sub));
                }
            }
            k += 1;
        }
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut sigma = xi.to_vec();
    for &(_, j, sub) in &events {
        let block = &blocks[j];
        let mut map = BTreeMap::new();
        for e in block.edges() {
            let Some((_, out)) = e.boundary_parts() else { continue };
            if let Some(oi) = region.idx(out) {
                map.insert(out, Sign::of(sigma[oi as usize]));
            } else if let Some(ei) = region.edge_index(e.a, e.axis) {
                if let EdgeZeta::Spin(s) = spec.resolved().zeta[ei as usize] {
                    map.insert(out, s);
                }
            }
        }
        let env_b = Arc::new(restrict_environment(&spec.env, block.clone())?);
        let spec_b = GibbsSpec::new(env_b, spec.beta, spec.h, Bc::Map(map))?;
        let fresh = cftp_sample(&spec_b, sub, max_doublings)?;
        for (bi, &p) in block.points().iter().enumerate() {
            sigma[region.idx(p).unwrap() as usize] = fresh[bi];
        }
    }
    Ok(Trajectory {
        initial: xi.to_vec(),
        events_applied: events.len() as u64,
        snapshots: Vec::new(),
        final_spins: sigma,
        final_time: t_end,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct GapBudget {
    pub replicas: usize,
    pub t_run: f64,
    pub seed: u64,
    pub max_doublings: u32,
}

impl Default for GapBudget {
    fn default() -> Self {
        GapBudget { replicas: 48, t_run: 400.0, seed: 1, max_doublings: 30 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GapEstimate {
    pub value: f64,
    pub std_error: f64,
    /// Budget too small for a stable fit.
    pub flagged: bool,
}

/// Relaxation-rate estimate from the exponential decay of the total
/// magnetization autocorrelation in equilibrium: replicas start from perfect
/// samples, record the magnetization on a unit time grid, and the decay rate
/// is fitted on pooled autocorrelations with jackknife error bars.
pub fn gap_estimate(spec: &GibbsSpec, budget: &GapBudget) -> Result<GapEstimate> {
    use rayon::prelude::*;
    let t_len = budget.t_run as usize;
    if budget.replicas < 8 || t_len < 16 {
        return Err(Error::invalid("need at least 8 replicas and 16 time units".to_string()));
    }
    let series: Vec<Vec<f64>> = (0..budget.replicas)
        .into_par_iter()
        .map(|r| -> Result<Vec<f64>> {
            let mut sr = stream(budget.seed, purpose::EXPERIMENT, &[r as u64]);
            let noise_seed: u64 = sr.gen();
            let mut sigma = cftp_sample(spec, noise_seed, budget.max_doublings)?;
            let noise = GraphicalNoise::new(noise_seed);
            let snap_times: Vec<f64> = (0..=t_len).map(|t| t as f64).collect();
            let st = SpaceTimeRegion::constant(spec.env.region.clone(), 0.0, t_len as f64 + 1.0)?;
            let dynamics = StDynamics {
                st,
                spec: spec.clone(),
                rule: UpdateRule::HeatBath,
                slab_map: vec![(0..spec.region().len() as u32).collect()],
                template: None,
            };
            let mut sigmas = vec![std::mem::take(&mut sigma)];
            let inits = sigmas.clone();
            let (_, snaps, _) = drive(
                &dynamics,
                &[spec],
                UpdateRule::HeatBath,
                &mut sigmas,
                &inits,
                0.0,
                t_len as f64,
                &noise,
                &snap_times,
                |_, _, _| Ok(false),
            )?;
            Ok(snaps
                .iter()
                .map(|(_, s)| s.iter().map(|&x| x as f64).sum::<f64>())
                .collect())
        })
        .collect::<Result<_>>()?;

    // Pooled autocorrelation over a lag grid, then a log-linear fit on the
    // window where the decay is resolved. Per-replica partial sums make the
    // leave-one-out recomputation cheap: with the pooled mean mu,
    // sum (x_t - mu)(x_{t+k} - mu) = s2[k] - mu (head[k] + tail[k]) + n_k mu^2.
    let k_max = (t_len / 4).min(256);
    struct Parts {
        s2: Vec<f64>,
        head: Vec<f64>,
        tail: Vec<f64>,
        sum: f64,
        len: f64,
    }
    let parts: Vec<Parts> = series
        .iter()
        .map(|s| {
            let mut p = Parts {
                s2: vec![0.0; k_max + 1],
                head: vec![0.0; k_max + 1],
                tail: vec![0.0; k_max + 1],
                sum: s.iter().sum(),
                len: s.len() as f64,
            };
            for k in 0..=k_max {
                for t in 0..s.len() - k {
                    p.s2[k] += s[t] * s[t + k];
                    p.head[k] += s[t];
                    p.tail[k] += s[t + k];
                }
            }
            p
        })
        .collect();
    let rho_from = |skip: Option<usize>| -> Vec<f64> {
        let mut mean = 0.0;
        let mut cnt = 0.0;
        for (r, p) in parts.iter().enumerate() {
            if Some(r) == skip {
                continue;
            }
            mean += p.sum;
            cnt += p.len;
        }
        mean /= cnt;
        let mut rho = vec![0.0; k_max + 1];
        for k in 0..=k_max {
            let mut num = 0.0;
            let mut pairs = 0.0;
            for (r, p) in parts.iter().enumerate() {
                if Some(r) == skip {
                    continue;
                }
                let n_k = p.len - k as f64;
                num += p.s2[k] - mean * (p.head[k] + p.tail[k]) + n_k * mean * mean;
                pairs += n_k;
            }
            rho[k] = num / pairs;
        }
        let r0 = rho[0];
        rho.iter().map(|&x| x / r0).collect()
    };
    let rho = rho_from(None);
    let k_lo = (1..=k_max).find(|&k| rho[k] <= 0.6).unwrap_or(1);
    let k_hi_opt = (k_lo..=k_max).find(|&k| rho[k] <= 0.25);
    let k_hi = k_hi_opt.unwrap_or(k_max).max(k_lo + 1);
    let fit = |rho: &[f64]| -> f64 {
        let pts: Vec<(f64, f64)> = (k_lo..=k_hi)
            .filter(|&k| rho[k] > 0.02)
            .map(|k| (k as f64, rho[k].ln()))
            .collect();
        if pts.len() < 2 {
            return f64::NAN;
        }
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        -(n * sxy - sx * sy) / (n * sxx - sx * sx)
    };
    let value = fit(&rho);
    let jack: Vec<f64> =
        (0..budget.replicas).map(|r| fit(&rho_from(Some(r)))).filter(|v| v.is_finite()).collect();
    let m = jack.len() as f64;
    let jmean = jack.iter().sum::<f64>() / m;
    let var = jack.iter().map(|v| (v - jmean).powi(2)).sum::<f64>() * (m - 1.0) / m;
    let std_error = var.sqrt();
    let flagged =
        !value.is_finite() || k_hi_opt.is_none() || std_error > 0.25 * value.abs() || m < 8.0;
    Ok(GapEstimate { value, std_error, flagged })
}

/// Stopping predicate evaluated incrementally along a trajectory. Rules
/// used in noise-paired A/B comparisons must be increasing events so the
/// monotone coupling fixes the direction of the comparison; one-shot
/// classifiers (growth races) may stop on any condition.
pub trait StopRule {
    fn start(&mut self, region: &LatticeRegion, spins: &[i8]);
    /// Called when the spin at `v` has changed to `new`.
    fn flip(&mut self, v: u32, new: i8);
    fn holds(&self) -> bool;
}

/// Holds when every spin of the observation window is plus.
pub struct AllPlusOn {
    verts: Vec<u32>,
    in_window: Vec<bool>,
    minus: usize,
}

impl AllPlusOn {
    pub fn new(verts: Vec<u32>) -> Self {
        AllPlusOn { verts, in_window: Vec::new(), minus: 0 }
    }
}

impl StopRule for AllPlusOn {
    fn start(&mut self, region: &LatticeRegion, spins: &[i8]) {
        self.in_window = vec![false; region.len()];
        for &v in &self.verts {
            self.in_window[v as usize] = true;
        }
        self.minus = self.verts.iter().filter(|&&v| spins[v as usize] < 0).count();
    }

    fn flip(&mut self, v: u32, new: i8) {
        if self.in_window[v as usize] {
            if new < 0 {
                self.minus += 1;
            } else {
                self.minus -= 1;
            }
        }
    }

    fn holds(&self) -> bool {
        self.minus == 0
    }
}

/// Holds when the renormalized magnetization profile integrates to at least
/// the threshold (in macroscopic volume units).
pub struct ProfileMassRule {
    scales: Scales,
    m_star: f64,
    pub threshold: f64,
    decomp: Option<BoxDecomposition>,
    weight: f64,
    sums: Vec<f64>,
    integral: f64,
}

impl ProfileMassRule {
    pub fn new(scales: Scales, m_star: f64, threshold: f64) -> Self {
        ProfileMassRule {
            scales,
            m_star,
            threshold,
            decomp: None,
            weight: 0.0,
            sums: Vec::new(),
            integral: 0.0,
        }
    }

    fn den(&self, ord: usize) -> f64 {
        let b = &self.decomp.as_ref().unwrap().boxes[ord];
        if b.interior {
            self.m_star
        } else {
            1.0
        }
    }

    pub fn integral(&self) -> f64 {
        self.integral
    }
}

impl StopRule for ProfileMassRule {
    fn start(&mut self, region: &LatticeRegion, spins: &[i8]) {
        let d = box_decomposition(region, self.scales.k).expect("box decomposition");
        self.weight = self.scales.box_macro_volume(region.dim());
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
                self.weight * (1.0 + self.sums[i] / n / self.den(i)) / 2.0
            })
            .sum();
    }

    fn flip(&mut self, v: u32, new: i8) {
        let d = self.decomp.as_ref().unwrap();
        let ord = d.vertex_box[v as usize] as usize;
        let n = d.boxes[ord].verts.len() as f64;
        self.sums[ord] += 2.0 * new as f64;
        self.integral += self.weight * new as f64 / (n * self.den(ord));
    }

    fn holds(&self) -> bool {
        self.integral >= self.threshold - 1e-12
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HitOutcome {
    Hit(f64),
    Censored(f64),
}

/// First event time, starting from all-minus at time zero, at which the
/// predicate holds; censored at `t_cap`.
pub fn hitting_time(
    spec: &GibbsSpec,
    stop: &mut dyn StopRule,
    noise: &GraphicalNoise,
    t_cap: f64,
) -> Result<HitOutcome> {
    first_passage(spec, &vec![-1i8; spec.region().len()], stop, noise, t_cap)
}

/// First event time, starting from `xi` at time zero, at which the
/// predicate holds; censored at `t_cap`.
pub fn first_passage(
    spec: &GibbsSpec,
    xi: &[i8],
    stop: &mut dyn StopRule,
    noise: &GraphicalNoise,
    t_cap: f64,
) -> Result<HitOutcome> {
    let region = spec.region();
    let n = region.len();
    if xi.len() != n || xi.iter().any(|&s| s != 1 && s != -1) {
        return Err(Error::invalid("initial configuration must be +-1 on the region".to_string()));
    }
    let sigma = xi.to_vec();
    stop.start(region, &sigma);
    if stop.holds() {
        return Ok(HitOutcome::Hit(0.0));
    }
    if t_cap <= 0.0 {
        return Ok(HitOutcome::Censored(t_cap));
    }
    let st = SpaceTimeRegion::constant(spec.env.region.clone(), 0.0, t_cap)?;
    let dynamics = StDynamics {
        st,
        spec: spec.clone(),
        rule: UpdateRule::HeatBath,
        slab_map: vec![(0..n as u32).collect()],
        template: None,
    };
    let mut sigmas = vec![sigma];
    let inits = sigmas.clone();
    let mut prev = inits[0].clone();
    let mut hit = None;
    drive(
        &dynamics,
        &[spec],
        UpdateRule::HeatBath,
        &mut sigmas,
        &inits,
        0.0,
        t_cap,
        noise,
        &[],
        |s, t, v| {
            if v != u32::MAX {
                let new = s[0][v as usize];
                if new != prev[v as usize] {
                    prev[v as usize] = new;
                    stop.flip(v, new);
                    if stop.holds() {
                        hit = Some(t);
                        return Ok(true);
                    }
                }
            }
            Ok(false)
        },
    )?;
    Ok(match hit {
        Some(t) => HitOutcome::Hit(t),
        None => HitOutcome::Censored(t_cap),
    })
}

/// Outcome of the space-time concatenation identity check.
#[derive(Debug, Clone, Copy)]
pub struct ConcatReport {
    /// First run forgets its initial configuration by the junction time.
    pub premise_initial: bool,
    /// Second run forgets its start time by the final time.
    pub premise_second: bool,
    /// Set when both premises held and the concatenated identity was
    /// checked (a violation is an invariant error instead).
    pub verified: Option<bool>,
}

/// Replay check of the concatenation identity: with the first region's
/// slabs contained in the second region's union and the top slab equal to
/// the second region's start slab, coalescence of each run forces the
/// concatenated run to end exactly like the second run. Violations with
/// both premises holding are invariant errors.
#[allow(clippy::too_many_arguments)]
pub fn concatenation_check(
    gamma: &SpaceTimeRegion,
    delta: &SpaceTimeRegion,
    p: f64,
    env_seed: u64,
    beta: f64,
    h: f64,
    bc: Bc,
    xi: &[i8],
    noise: &GraphicalNoise,
) -> Result<ConcatReport> {
    let gm = gamma.slabs.last().unwrap();
    let d0 = &delta.slabs[0];
    if gm.points() != d0.points() {
        return Err(Error::invalid(
            "top slab of the first region must equal the second region's start slab".to_string(),
        ));
    }
    let t_m = gamma.times[gamma.times.len() - 2];
    let t_m1 = gamma.end();
    if delta.start() != t_m || delta.times[1] < t_m1 {
        return Err(Error::invalid(
            "second region must start at the first region's top-slab time".to_string(),
        ));
    }
    let delta_union = delta.ambient_region()?;
    for s in &gamma.slabs {
        if s.points().iter().any(|p| delta_union.idx(*p).is_none()) {
            return Err(Error::invalid(
                "first region's slabs must lie inside the second region's union".to_string(),
            ));
        }
    }

    let build = |st: SpaceTimeRegion| -> Result<StDynamics> {
        let amb = st.ambient_region()?;
        let env = Arc::new(gen_environment(amb, p, env_seed)?);
        StDynamics::new(st, env, beta, h, bc.clone(), UpdateRule::HeatBath)
    };
    let dyn_g = build(gamma.clone())?;
    let dyn_d = build(delta.clone())?;
    // Concatenated region: the first region's slabs, then the second's
    // (skipping its start slab when the junction interval is empty).
    let mut slabs = gamma.slabs.clone();
    let mut times = gamma.times.clone();
    if delta.times[1] > t_m1 {
        slabs.push(delta.slabs[0].clone());
    } else {
        times.pop();
    }
    slabs.extend(delta.slabs[1..].iter().cloned());
    times.extend(delta.times[1..].iter().copied());
    let dyn_c = build(SpaceTimeRegion::new(slabs, times)?)?;

    let plus = |r: &LatticeRegion| vec![1i8; r.len()];
    let a = run(&dyn_g, gamma.start(), xi, t_m1, noise, &[])?;
    let b = run(&dyn_g, t_m, &plus(gm), t_m1, noise, &[])?;
    let premise_initial = restrict_config(&a.final_spins, dyn_g.ambient(), gm)?
        == restrict_config(&b.final_spins, dyn_g.ambient(), gm)?;

    let dn = delta.slabs.last().unwrap();
    let u_n = delta.times[delta.times.len() - 2];
    let c = run(&dyn_d, delta.start(), &plus(d0), delta.end(), noise, &[])?;
    let d = run(&dyn_d, u_n, &plus(dn), delta.end(), noise, &[])?;
    let premise_second = restrict_config(&c.final_spins, dyn_d.ambient(), dn)?
        == restrict_config(&d.final_spins, dyn_d.ambient(), dn)?;

    let mut verified = None;
    if premise_initial && premise_second {
        let e = run(&dyn_c, gamma.start(), xi, delta.end(), noise, &[])?;
        let ok = restrict_config(&e.final_spins, dyn_c.ambient(), dn)?
            == restrict_config(&d.final_spins, dyn_d.ambient(), dn)?;
        if !ok {
            return Err(Error::Invariant(
                "concatenated run disagrees with the second-region run".to_string(),
            ));
        }
        verified = Some(true);
    }
    Ok(ConcatReport { premise_initial, premise_second, verified })
}
