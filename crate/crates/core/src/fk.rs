//! Random-cluster representation with a ghost vertex, cluster analytics,
//! conditional spin assignment, Swendsen-Wang sweeps and the finite-volume
//! surface-tension estimator.
//!
//! # Graph conventions
//!
//! The bond process lives on the region's edges (interior and boundary, with
//! free-part boundary edges removed) plus one ghost edge per vertex. An open
//! real edge with coupling J = 1 appears with probability `1 - exp(-beta)`;
//! a ghost edge with probability `1 - exp(-beta h)`. Clusters connected to
//! the plus boundary or the ghost form the plus side; clusters connected to
//! the minus boundary form the minus side; a configuration is supported when
//! the two sides are disconnected.
//!
//! # Spin assignment
//!
//! Sampling spins given bonds uses the real-cluster view (ghost edges
//! closed): clusters touching a pinned boundary take its sign, and each free
//! real cluster V is plus with probability `exp(beta h |V|) / (1 + exp(beta
//! h |V|))`, which is the ghost-edge marginal integrated out. The equivalence
//! check enumerates the full joint (ghost edges explicit, free clusters as
//! fair coins) as an independent route.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::geom::Fv;
use crate::gibbs::{exact_gibbs, GibbsSpec};
use crate::lattice::{Bc, EdgeZeta, Environment, LatticeRegion, ResolvedBc, Sign};

/// Union-find with path halving and union by rank.
#[derive(Debug, Clone)]
pub(crate) struct Uf {
    parent: Vec<u32>,
    rank: Vec<u8>,
}

impl Uf {
    pub(crate) fn new(n: usize) -> Self {
        Uf { parent: (0..n as u32).collect(), rank: vec![0; n] }
    }

    pub(crate) fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let g = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = g;
            x = g;
        }
        x
    }

    pub(crate) fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        let (hi, lo) = if self.rank[ra as usize] >= self.rank[rb as usize] { (ra, rb) } else { (rb, ra) };
        self.parent[lo as usize] = hi;
        if self.rank[hi as usize] == self.rank[lo as usize] {
            self.rank[hi as usize] += 1;
        }
    }
}

/// Bond configuration: real edges aligned with the region's canonical edge
/// order, ghost edges aligned with the vertex order. Dropped (free-part)
/// boundary edges and closed-coupling edges must stay closed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeConfig {
    pub real: Vec<bool>,
    pub ghost: Vec<bool>,
}

impl EdgeConfig {
    pub fn closed(region: &LatticeRegion) -> Self {
        EdgeConfig { real: vec![false; region.n_edges()], ghost: vec![false; region.len()] }
    }

    /// Open bonds require positive bond probability: J = 1 for real edges
    /// (and the edge present in the wired graph), h > 0 for ghost edges.
    pub fn validate(&self, env: &Environment, resolved: &ResolvedBc, h: f64) -> Result<()> {
        if self.real.len() != env.region.n_edges() || self.ghost.len() != env.region.len() {
            return Err(Error::invalid("bond configuration shape mismatch".to_string()));
        }
        for (ei, &open) in self.real.iter().enumerate() {
            if open && !env.open(ei as u32) {
                return Err(Error::Invariant(format!("open bond on closed coupling, edge {ei}")));
            }
            if open && matches!(resolved.zeta[ei], EdgeZeta::Drop) {
                return Err(Error::Invariant(format!("open bond on dropped boundary edge {ei}")));
            }
        }
        if h == 0.0 && self.ghost.iter().any(|&g| g) {
            return Err(Error::Invariant("open ghost edge at h = 0".to_string()));
        }
        Ok(())
    }
}

/// Side of a vertex in the full bond configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Plus,
    Minus,
    /// Ordinal of a cluster connected to neither side.
    Free(u32),
}

/// Cluster decomposition of a bond configuration under a resolved boundary
/// condition, in both the full view (ghost edges active) and the real view
/// (ghost edges closed).
#[derive(Debug, Clone)]
pub struct ClusterPartition {
    /// Full-view label per vertex.
    pub label: Vec<Side>,
    /// Number of free clusters in the full view.
    pub n_free: usize,
    /// Plus and minus sides are not connected.
    pub supported: bool,
    /// Real-view cluster ordinal per vertex.
    pub real_id: Vec<u32>,
    /// Region vertices per real cluster.
    pub real_sizes: Vec<u32>,
    /// Boundary pin per real cluster, if any.
    pub real_pin: Vec<Option<Sign>>,
}

// Element layout of the union-find: vertices, then the plus side (boundary
// plus ghost), the minus side, and two wired supernodes at the next slots.
const S_PLUS: usize = 0;
const S_MINUS: usize = 1;
const S_WIRED0: usize = 2;

fn link_edges(uf: &mut Uf, n: u32, env: &Environment, resolved: &ResolvedBc, real: &[bool]) {
    for (ei, e) in env.region.edges().iter().enumerate() {
        if !real[ei] {
            continue;
        }
        debug_assert!(env.open(ei as u32), "open bond on closed coupling");
        match resolved.zeta[ei] {
            EdgeZeta::Interior => uf.union(e.ia.unwrap(), e.ib.unwrap()),
            EdgeZeta::Spin(s) => {
                let (inside, _) = e.boundary_parts().unwrap();
                let sup = if s == Sign::Plus { S_PLUS } else { S_MINUS };
                uf.union(inside, n + sup as u32);
            }
            EdgeZeta::Wired(id) => {
                let (inside, _) = e.boundary_parts().unwrap();
                uf.union(inside, n + S_WIRED0 as u32 + id as u32);
            }
            EdgeZeta::Drop => debug_assert!(false, "open bond on dropped edge"),
        }
    }
}

pub fn clusters(env: &Environment, resolved: &ResolvedBc, omega: &EdgeConfig) -> ClusterPartition {
    let region = &env.region;
    let n = region.len() as u32;

    // Full view: ghost edges wire vertices to the plus side.
    let mut full = Uf::new(n as usize + 4);
    link_edges(&mut full, n, env, resolved, &omega.real);
    for (v, &g) in omega.ghost.iter().enumerate() {
        if g {
            full.union(v as u32, n + S_PLUS as u32);
        }
    }
    let root_p = full.find(n + S_PLUS as u32);
    let root_m = full.find(n + S_MINUS as u32);
    let supported = root_p != root_m;

    let mut label = Vec::with_capacity(n as usize);
    let mut free_ordinal: std::collections::HashMap<u32, u32> = std::collections::HashMap::new();
    for v in 0..n {
        let r = full.find(v);
        if r == root_p {
            label.push(Side::Plus);
        } else if r == root_m {
            label.push(Side::Minus);
        } else {
            let next = free_ordinal.len() as u32;
            let ord = *free_ordinal.entry(r).or_insert(next);
            label.push(Side::Free(ord));
        }
    }
    let n_free = free_ordinal.len();

    // Real view: same edges, no ghost.
    let mut real = Uf::new(n as usize + 4);
    link_edges(&mut real, n, env, resolved, &omega.real);
    let rp = real.find(n + S_PLUS as u32);
    let rm = real.find(n + S_MINUS as u32);
    let mut real_id = Vec::with_capacity(n as usize);
    let mut ordinals: std::collections::HashMap<u32, u32> = std::collections::HashMap::new();
    let mut real_sizes = Vec::new();
    let mut real_pin: Vec<Option<Sign>> = Vec::new();
    for v in 0..n {
        let r = real.find(v);
        let next = ordinals.len() as u32;
        let ord = *ordinals.entry(r).or_insert(next);
        if ord as usize == real_sizes.len() {
            real_sizes.push(0);
            real_pin.push(if r == rp {
                Some(Sign::Plus)
            } else if r == rm {
                Some(Sign::Minus)
            } else {
                None
            });
        }
        real_sizes[ord as usize] += 1;
        real_id.push(ord);
    }

    ClusterPartition { label, n_free, supported, real_id, real_sizes, real_pin }
}

/// Bond probability of a unit-coupling real edge.
pub fn real_bond_prob(beta: f64) -> f64 {
    -(-beta).exp_m1()
}

/// Bond probability of a ghost edge.
pub fn ghost_bond_prob(beta: f64, h: f64) -> f64 {
    -(-beta * h).exp_m1()
}

/// Sample spins given bonds: pinned real clusters take the boundary sign,
/// each free real cluster of size s is plus with probability
/// `1/(1 + exp(-beta h s))`, independently (one draw per free cluster, in
/// cluster-ordinal order).
pub fn assign_spins(
    part: &ClusterPartition,
    beta: f64,
    h: f64,
    rng: &mut impl Rng,
) -> Result<Vec<i8>> {
    if !part.supported {
        return Err(Error::invalid(
            "configuration connects the plus and minus sides (outside the support)".to_string(),
        ));
    }
    let mut cluster_spin = Vec::with_capacity(part.real_sizes.len());
    for (c, &pin) in part.real_pin.iter().enumerate() {
        let s = match pin {
            Some(s) => s.val(),
            None => {
                let p_plus = 1.0 / (1.0 + (-beta * h * part.real_sizes[c] as f64).exp());
                if rng.gen::<f64>() < p_plus {
                    1
                } else {
                    -1
                }
            }
        };
        cluster_spin.push(s);
    }
    Ok(part.real_id.iter().map(|&c| cluster_spin[c as usize]).collect())
}

/// One Swendsen-Wang sweep: open each agreeing unit-coupling edge with
/// probability `1 - exp(-beta)` (boundary edges agree when the inside spin
/// matches the frozen exterior spin), resample spins from the real clusters,
/// then draw ghost edges conditionally on the new spins. The returned pair is
/// a sample of the joint bond-spin measure once the chain is stationary.
pub fn sw_step(
    spec: &GibbsSpec,
    spins: &[i8],
    rng: &mut impl Rng,
) -> Result<(EdgeConfig, Vec<i8>)> {
    let region = spec.region();
    debug_assert_eq!(spins.len(), region.len());
    let resolved = spec.resolved();
    let p_real = real_bond_prob(spec.beta);
    let mut real = vec![false; region.n_edges()];
    for (ei, e) in region.edges().iter().enumerate() {
        if !spec.env.open(ei as u32) {
            continue;
        }
        let agree = match resolved.zeta[ei] {
            EdgeZeta::Interior => spins[e.ia.unwrap() as usize] == spins[e.ib.unwrap() as usize],
            EdgeZeta::Spin(s) => {
                let (inside, _) = e.boundary_parts().unwrap();
                spins[inside as usize] == s.val()
            }
            EdgeZeta::Drop => continue,
            EdgeZeta::Wired(_) => unreachable!("spin-side specs have no wired parts"),
        };
        if agree && rng.gen::<f64>() < p_real {
            real[ei] = true;
        }
    }
    let omega = EdgeConfig { real, ghost: vec![false; region.len()] };
    let part = clusters(&spec.env, resolved, &omega);
    let new_spins = assign_spins(&part, spec.beta, spec.h, rng)?;
    let mut ghost = vec![false; region.len()];
    if spec.h > 0.0 {
        let p_g = ghost_bond_prob(spec.beta, spec.h);
        for (v, g) in ghost.iter_mut().enumerate() {
            if new_spins[v] > 0 && rng.gen::<f64>() < p_g {
                *g = true;
            }
        }
    }
    Ok((EdgeConfig { real: omega.real, ghost }, new_spins))
}

/// Openable real edges: unit coupling and not dropped by a free part.
fn openable_edges(env: &Environment, resolved: &ResolvedBc) -> Vec<u32> {
    (0..env.region.n_edges() as u32)
        .filter(|&ei| env.open(ei) && !matches!(resolved.zeta[ei as usize], EdgeZeta::Drop))
        .collect()
}

/// Exhaustive bond-measure distribution over real and ghost edges:
/// weight `2^(free clusters) * prod p^omega (1-p)^(1-omega)` restricted to
/// supported configurations. Capped at 16 openable real edges and 22 total
/// binary degrees of freedom.
pub fn exact_fk(
    env: &Environment,
    resolved: &ResolvedBc,
    beta: f64,
    h: f64,
) -> Result<Vec<(EdgeConfig, f64)>> {
    let open_idx = openable_edges(env, resolved);
    let n = env.region.len();
    let ghost_bits = if h > 0.0 { n } else { 0 };
    if open_idx.len() > 16 {
        return Err(Error::TooLarge(format!("{} openable edges > 16", open_idx.len())));
    }
    if open_idx.len() + ghost_bits > 22 {
        return Err(Error::TooLarge(format!(
            "{} binary degrees of freedom > 22",
            open_idx.len() + ghost_bits
        )));
    }
    let p_r = real_bond_prob(beta);
    let p_g = ghost_bond_prob(beta, h);
    let mut out = Vec::new();
    let mut total = 0.0;
    for mask in 0..1u64 << (open_idx.len() + ghost_bits) {
        let mut cfg = EdgeConfig::closed(&env.region);
        let mut w = 1.0;
        for (k, &ei) in open_idx.iter().enumerate() {
            if mask >> k & 1 == 1 {
                cfg.real[ei as usize] = true;
                w *= p_r;
            } else {
                w *= 1.0 - p_r;
            }
        }
        for v in 0..ghost_bits {
            if mask >> (open_idx.len() + v) & 1 == 1 {
                cfg.ghost[v] = true;
                w *= p_g;
            } else {
                w *= 1.0 - p_g;
            }
        }
        let part = clusters(env, resolved, &cfg);
        if !part.supported {
            continue;
        }
        w *= (part.n_free as f64).exp2();
        total += w;
        out.push((cfg, w));
    }
    if total <= 0.0 {
        return Err(Error::Invariant("empty bond-measure support".to_string()));
    }
    for (_, w) in &mut out {
        *w /= total;
    }
    Ok(out)
}

/// Outcome of the joint-measure equivalence check.
#[derive(Debug, Clone)]
pub struct EsReport {
    /// Largest deviation between the bond-marginal spin law and the directly
    /// enumerated Gibbs law.
    pub max_marginal_err: f64,
    pub marginal_ok: bool,
    /// Sampled full bond configurations whose admissible-spin count was
    /// verified against `2^(free clusters)` (0 outside the support).
    pub admissible_checked: usize,
    pub admissible_ok: bool,
}

/// Spin mask compatible with a bond configuration: every open real edge
/// agrees (boundary edges against the frozen spin), every open ghost edge has
/// a plus endpoint.
fn compatible(
    env: &Environment,
    resolved: &ResolvedBc,
    cfg: &EdgeConfig,
    mask: usize,
) -> bool {
    let sp = |v: u32| mask >> v & 1 == 1;
    for (ei, e) in env.region.edges().iter().enumerate() {
        if !cfg.real[ei] {
            continue;
        }
        let ok = match resolved.zeta[ei] {
            EdgeZeta::Interior => sp(e.ia.unwrap()) == sp(e.ib.unwrap()),
            EdgeZeta::Spin(s) => sp(e.boundary_parts().unwrap().0) == (s == Sign::Plus),
            _ => false,
        };
        if !ok {
            return false;
        }
    }
    cfg.ghost.iter().enumerate().all(|(v, &g)| !g || sp(v as u32))
}

/// Verify the joint bond-spin construction against direct enumeration: the
/// spin marginal of the bond measure must reproduce the Gibbs law to 1e-10,
/// and each sampled bond configuration must admit exactly `2^(free
/// clusters)` compatible spin configurations (none outside the support).
pub fn es_equivalence_check(spec: &GibbsSpec) -> Result<EsReport> {
    let env = &spec.env;
    let region = spec.region();
    let resolved = spec.resolved();
    let n = region.len();
    if n > 10 {
        return Err(Error::TooLarge(format!("equivalence check needs <= 10 vertices, got {n}")));
    }
    let open_idx = openable_edges(env, resolved);
    if open_idx.len() > 16 {
        return Err(Error::TooLarge(format!(
            "equivalence check needs <= 16 openable edges, got {}",
            open_idx.len()
        )));
    }

    // Route 1: sum the joint over real bonds with the ghost edges integrated
    // out per spin (a minus spin forces its ghost edge closed, weight
    // exp(-beta h) each; a plus spin sums to 1).
    let p_r = real_bond_prob(spec.beta);
    let mut s = vec![0.0f64; 1 << n];
    for rmask in 0..1u64 << open_idx.len() {
        let mut cfg = EdgeConfig::closed(region);
        let mut w = 1.0;
        for (k, &ei) in open_idx.iter().enumerate() {
            if rmask >> k & 1 == 1 {
                cfg.real[ei as usize] = true;
                w *= p_r;
            } else {
                w *= 1.0 - p_r;
            }
        }
        let part = clusters(env, resolved, &cfg);
        if !part.supported {
            // A cluster touching both boundary sides admits no spin
            // configuration: open edges would demand both signs at once.
            continue;
        }
        // Per-cluster member lists for the compatibility scan.
        let mut members: Vec<Vec<u32>> = vec![Vec::new(); part.real_sizes.len()];
        for (v, &c) in part.real_id.iter().enumerate() {
            members[c as usize].push(v as u32);
        }
        'mask: for mask in 0..1usize << n {
            for (c, mem) in members.iter().enumerate() {
                let first = mask >> mem[0] & 1 == 1;
                if let Some(pin) = part.real_pin[c] {
                    if first != (pin == Sign::Plus) {
                        continue 'mask;
                    }
                }
                for &v in &mem[1..] {
                    if (mask >> v & 1 == 1) != first {
                        continue 'mask;
                    }
                }
            }
            let minus = n as u32 - (mask as u64).count_ones();
            s[mask] += w * (-spec.beta * spec.h * minus as f64).exp();
        }
    }
    let total: f64 = s.iter().sum();
    let oracle = exact_gibbs(spec)?;
    let mut max_err: f64 = 0.0;
    for (mask, &v) in s.iter().enumerate() {
        max_err = max_err.max((v / total - oracle.prob(mask)).abs());
    }

    // Route 2: sampled full configurations, counting compatible spins
    // directly from the edge constraints.
    let mut rng = ChaCha12Rng::seed_from_u64(0xE5);
    let ghost_bits = if spec.h > 0.0 { n } else { 0 };
    let samples = 512;
    let mut admissible_ok = true;
    for _ in 0..samples {
        let mut cfg = EdgeConfig::closed(region);
        for &ei in &open_idx {
            cfg.real[ei as usize] = rng.gen::<bool>();
        }
        for v in 0..ghost_bits {
            cfg.ghost[v] = rng.gen::<bool>();
        }
        let part = clusters(env, resolved, &cfg);
        let expected: u64 = if part.supported { 1 << part.n_free } else { 0 };
        let count = (0..1usize << n).filter(|&m| compatible(env, resolved, &cfg, m)).count();
        if count as u64 != expected {
            admissible_ok = false;
        }
    }

    Ok(EsReport {
        max_marginal_err: max_err,
        marginal_ok: max_err < 1e-10,
        admissible_checked: samples,
        admissible_ok,
    })
}

/// How to evaluate the surface-tension estimator.
#[derive(Debug, Clone, Copy)]
pub enum TauPath {
    /// Exact enumeration (spin route), feasible up to 20 sites.
    Exact,
    /// Bond-measure sampling under all-plus boundary at h = 0, counting
    /// interface-disconnection events.
    Mc { sweeps: usize, burn_in: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy)]
pub struct TauEstimate {
    pub value: f64,
    /// Batch-means standard error (sampling path only).
    pub std_error: Option<f64>,
    pub disconnect_events: Option<u64>,
    /// No disconnection event was observed; `value` is only a lower bound.
    pub lower_bound_only: bool,
}

/// Finite-volume surface tension of a strip: `(cross)^-(d-1) * log(Z_plus /
/// Z_interface)` at h = 0, equivalently the same prefactor times
/// `log(1/P(top and bottom boundaries disconnected))` under the all-plus
/// bond measure. `cross` is the lattice cross-section side and `normal` the
/// interface normal (frozen exterior spins are plus where `y·normal >= 0`).
pub fn tau_estimator(
    env: &std::sync::Arc<Environment>,
    beta: f64,
    cross: u64,
    normal: Fv,
    path: TauPath,
) -> Result<TauEstimate> {
    let region = &env.region;
    let dim = region.dim();
    let denom = (cross as f64).powi(dim as i32 - 1);
    if cross == 0 {
        return Err(Error::invalid("cross-section side must be positive".to_string()));
    }
    match path {
        TauPath::Exact => {
            let plus = GibbsSpec::new(env.clone(), beta, 0.0, Bc::Uniform(Sign::Plus))?;
            let iface = GibbsSpec::new(env.clone(), beta, 0.0, Bc::Interface { normal })?;
            let zp = exact_gibbs(&plus)?.log_z;
            let zi = exact_gibbs(&iface)?.log_z;
            Ok(TauEstimate {
                value: (zp - zi) / denom,
                std_error: None,
                disconnect_events: None,
                lower_bound_only: false,
            })
        }
        TauPath::Mc { sweeps, burn_in, seed } => {
            if dim == 2 && cross > 64 || region.len() > 64 * 64 {
                return Err(Error::TooLarge(
                    "sampling path is capped at cross-section 64 in d = 2".to_string(),
                ));
            }
            if sweeps == 0 {
                return Err(Error::invalid("need at least one sweep".to_string()));
            }
            let spec = GibbsSpec::new(env.clone(), beta, 0.0, Bc::Uniform(Sign::Plus))?;
            let iface = region.resolve_bc(&Bc::Interface { normal });
            let mut rng = crate::rng::stream(seed, crate::rng::purpose::SW, &[cross]);
            let mut spins = vec![1i8; region.len()];
            for _ in 0..burn_in {
                spins = sw_step(&spec, &spins, &mut rng)?.1;
            }
            let n_batches = 20.min(sweeps);
            let mut batch_hits = vec![0u64; n_batches];
            let mut events = 0u64;
            for t in 0..sweeps {
                let (omega, next) = sw_step(&spec, &spins, &mut rng)?;
                spins = next;
                // Disconnection of the interface sides in the sampled bonds.
                let part = clusters(env, &iface, &omega);
                if part.supported {
                    events += 1;
                    batch_hits[t * n_batches / sweeps] += 1;
                }
            }
            if events == 0 {
                return Ok(TauEstimate {
                    value: (sweeps as f64).ln() / denom,
                    std_error: None,
                    disconnect_events: Some(0),
                    lower_bound_only: true,
                });
            }
            let q = events as f64 / sweeps as f64;
            let value = (1.0 / q).ln() / denom;
            // Batch means absorb sweep-to-sweep correlation.
            let per = sweeps as f64 / n_batches as f64;
            let rates: Vec<f64> = batch_hits.iter().map(|&h| h as f64 / per).collect();
            let mean: f64 = rates.iter().sum::<f64>() / n_batches as f64;
            let var: f64 =
                rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n_batches as f64 - 1.0);
            let se_q = (var / n_batches as f64).sqrt();
            Ok(TauEstimate {
                value,
                std_error: Some(se_q / q / denom),
                disconnect_events: Some(events),
                lower_bound_only: false,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{gen_environment, LatticeRegion, PartRule};
    use std::sync::Arc;

    fn env_box(dim: usize, side: u64, p: f64, seed: u64) -> Arc<Environment> {
        let r = Arc::new(LatticeRegion::box_region(dim, [0; 3], [side; 3]).unwrap());
        Arc::new(gen_environment(r, p, seed).unwrap())
    }

    fn two_site_env() -> Arc<Environment> {
        let r = Arc::new(LatticeRegion::from_points(2, vec![[0, 0, 0], [1, 0, 0]]).unwrap());
        Arc::new(gen_environment(r, 1.0, 0).unwrap())
    }

    #[test]
    fn cluster_reference_points() {
        let env = env_box(2, 2, 1.0, 1);
        let resolved = env.region.resolve_bc(&Bc::Free);
        // All closed: every vertex its own free cluster.
        let part = clusters(&env, &resolved, &EdgeConfig::closed(&env.region));
        assert_eq!(part.n_free, 4);
        assert!(part.supported);
        assert_eq!(part.real_sizes, vec![1, 1, 1, 1]);

        // All real edges open: one cluster.
        let mut cfg = EdgeConfig::closed(&env.region);
        for (ei, z) in resolved.zeta.iter().enumerate() {
            if matches!(z, EdgeZeta::Interior) {
                cfg.real[ei] = true;
            }
        }
        let part = clusters(&env, &resolved, &cfg);
        assert_eq!(part.n_free, 1);
        assert_eq!(part.real_sizes, vec![4]);

        // Two sites, one edge.
        let env2 = two_site_env();
        let res2 = env2.region.resolve_bc(&Bc::Free);
        let closed = EdgeConfig::closed(&env2.region);
        assert_eq!(clusters(&env2, &res2, &closed).n_free, 2);
        let mut open = closed.clone();
        let ei = env2.region.edge_index([0, 0, 0], 0).unwrap() as usize;
        open.real[ei] = true;
        assert_eq!(clusters(&env2, &res2, &open).n_free, 1);
    }

    #[test]
    fn ghost_and_boundary_sides() {
        let env = env_box(2, 2, 1.0, 1);
        let resolved = env.region.resolve_bc(&Bc::Uniform(Sign::Plus));
        // A ghost edge pulls its vertex into the plus side.
        let mut cfg = EdgeConfig::closed(&env.region);
        cfg.ghost[0] = true;
        let part = clusters(&env, &resolved, &cfg);
        assert_eq!(part.label[0], Side::Plus);
        assert_eq!(part.n_free, 3);
        // The real view ignores the ghost: vertex 0 is still a free real
        // cluster of size 1.
        assert_eq!(part.real_pin[part.real_id[0] as usize], None);

        // A plus boundary bond pins in both views.
        let mut cfg = EdgeConfig::closed(&env.region);
        let be = env
            .region
            .edges()
            .iter()
            .position(|e| !e.is_interior())
            .unwrap();
        cfg.real[be] = true;
        let part = clusters(&env, &resolved, &cfg);
        let inside = env.region.edges()[be].boundary_parts().unwrap().0;
        assert_eq!(part.label[inside as usize], Side::Plus);
        assert_eq!(part.real_pin[part.real_id[inside as usize] as usize], Some(Sign::Plus));
    }

    #[test]
    fn mixed_boundary_support_detection() {
        // 1x2 column with an interface: bottom vertex boundary is minus,
        // top is plus; connecting both sides through the column leaves the
        // support.
        let r = Arc::new(LatticeRegion::from_points(2, vec![[0, 0, 0], [0, 1, 0]]).unwrap());
        let env = Arc::new(gen_environment(r, 1.0, 0).unwrap());
        let resolved = env.region.resolve_bc(&Bc::Interface { normal: [0.0, 1.0, 0.0] });
        let mut cfg = EdgeConfig::closed(&env.region);
        for (ei, z) in resolved.zeta.iter().enumerate() {
            match z {
                EdgeZeta::Interior | EdgeZeta::Spin(_) => cfg.real[ei] = true,
                _ => {}
            }
        }
        let part = clusters(&env, &resolved, &cfg);
        assert!(!part.supported);
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        assert!(assign_spins(&part, 1.0, 0.0, &mut rng).is_err());
    }

    #[test]
    fn spin_assignment_laws() {
        let env = two_site_env();
        let resolved = env.region.resolve_bc(&Bc::Free);
        let mut open = EdgeConfig::closed(&env.region);
        let ei = env.region.edge_index([0, 0, 0], 0).unwrap() as usize;
        open.real[ei] = true;
        let part = clusters(&env, &resolved, &open);

        // h = 0: the single free cluster is a fair coin.
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let mut plus = 0;
        let n = 20000;
        for _ in 0..n {
            let s = assign_spins(&part, 1.3, 0.0, &mut rng).unwrap();
            assert_eq!(s[0], s[1]);
            if s[0] > 0 {
                plus += 1;
            }
        }
        let frac = plus as f64 / n as f64;
        assert!((frac - 0.5).abs() < 3.0 * 0.5 / (n as f64).sqrt(), "fair-coin fraction {frac}");

        // Size-2 cluster at beta h = ln(3)/2: P(+) = 3/4. A single vertex at
        // beta h = ln 3 gives the same odds.
        let bh = 3f64.ln() / 2.0;
        let mut plus = 0;
        for _ in 0..n {
            let s = assign_spins(&part, 1.0, bh, &mut rng).unwrap();
            if s[0] > 0 {
                plus += 1;
            }
        }
        let frac = plus as f64 / n as f64;
        assert!(
            (frac - 0.75).abs() < 3.0 * (0.75f64 * 0.25 / n as f64).sqrt(),
            "weighted-coin fraction {frac}"
        );

        // Enormous field: free clusters become plus.
        let s = assign_spins(&part, 1.0, 700.0, &mut rng).unwrap();
        assert_eq!(s, vec![1, 1]);
    }

    #[test]
    fn sw_step_limits() {
        // Vanishing temperature: no edge ever opens, spins are fair coins.
        let env = env_box(2, 2, 1.0, 3);
        let spec = GibbsSpec::new(env.clone(), 1e-300, 0.0, Bc::Free).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let mut spins = vec![1i8; 4];
        for _ in 0..200 {
            let (omega, next) = sw_step(&spec, &spins, &mut rng).unwrap();
            assert!(omega.real.iter().all(|&b| !b));
            assert!(omega.ghost.iter().all(|&g| !g));
            spins = next;
        }

        // Frozen limit with plus boundary: the chain absorbs at all-plus.
        let spec = GibbsSpec::new(env, 50.0, 0.0, Bc::Uniform(Sign::Plus)).unwrap();
        let mut spins = vec![1i8; 4];
        for _ in 0..100 {
            let (_, next) = sw_step(&spec, &spins, &mut rng).unwrap();
            spins = next;
            assert_eq!(spins, vec![1, 1, 1, 1]);
        }
    }

    #[test]
    fn sw_step_preserves_gibbs() {
        // 2x2 free patch with field: empirical state frequencies over a long
        // run match the enumerated law within batched 3-sigma bands.
        let env = env_box(2, 2, 1.0, 5);
        let spec = GibbsSpec::new(env, 1.0, 0.3, Bc::Free).unwrap();
        let oracle = exact_gibbs(&spec).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let mut spins = vec![1i8; 4];
        let sweeps = 200_000usize;
        let burn = 1000;
        for _ in 0..burn {
            spins = sw_step(&spec, &spins, &mut rng).unwrap().1;
        }
        let n_batches = 20;
        let mut counts = vec![[0u64; 16]; n_batches];
        for t in 0..sweeps {
            spins = sw_step(&spec, &spins, &mut rng).unwrap().1;
            let mask = crate::gibbs::spins_mask(&spins);
            counts[t * n_batches / sweeps][mask] += 1;
        }
        let per = sweeps as f64 / n_batches as f64;
        for mask in 0..16 {
            let rates: Vec<f64> = counts.iter().map(|c| c[mask] as f64 / per).collect();
            let mean = rates.iter().sum::<f64>() / n_batches as f64;
            let var = rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>()
                / (n_batches as f64 - 1.0);
            let se = (var / n_batches as f64).sqrt();
            let diff = (mean - oracle.prob(mask)).abs();
            assert!(
                diff < 3.0 * se + 1e-4,
                "state {mask}: {mean} vs {} (se {se})",
                oracle.prob(mask)
            );
        }
    }

    #[test]
    fn es_check_two_site_closed_forms() {
        // Single unit edge, free boundary, h = 0: P(agree) = 1/(1+exp(-beta))
        // and the bond marginal of the edge is (1-exp(-beta))/(1+exp(-beta)).
        let env = two_site_env();
        let beta = 0.9;
        let spec = GibbsSpec::new(env.clone(), beta, 0.0, Bc::Free).unwrap();
        let report = es_equivalence_check(&spec).unwrap();
        assert!(report.marginal_ok, "marginal err {}", report.max_marginal_err);
        assert!(report.admissible_ok);

        let g = exact_gibbs(&spec).unwrap();
        let p_agree = g.prob(0b00) + g.prob(0b11);
        assert!((p_agree - 1.0 / (1.0 + (-beta).exp())).abs() < 1e-12);

        let resolved = env.region.resolve_bc(&Bc::Free);
        let dist = exact_fk(&env, &resolved, beta, 0.0).unwrap();
        let ei = env.region.edge_index([0, 0, 0], 0).unwrap() as usize;
        let p_open: f64 =
            dist.iter().filter(|(c, _)| c.real[ei]).map(|&(_, w)| w).sum();
        let expect = (1.0 - (-beta).exp()) / (1.0 + (-beta).exp());
        assert!((p_open - expect).abs() < 1e-12, "bond marginal {p_open} vs {expect}");
    }

    #[test]
    fn es_check_battery_of_boundaries() {
        // Fields, dilution and every boundary family on 2x2 and 1x3 patches.
        let cases: Vec<(Arc<Environment>, f64, f64, Bc)> = vec![
            (env_box(2, 2, 1.0, 7), 1.2, 0.0, Bc::Uniform(Sign::Plus)),
            (env_box(2, 2, 1.0, 7), 1.2, 0.4, Bc::Uniform(Sign::Minus)),
            (env_box(2, 2, 0.6, 8), 0.8, 0.7, Bc::Free),
            (env_box(2, 2, 1.0, 7), 1.0, 0.0, Bc::Interface { normal: [0.0, 1.0, 0.0] }),
            (env_box(2, 2, 0.7, 9), 2.0, 0.2, Bc::Interface { normal: [1.0, 0.0, 0.0] }),
        ];
        for (env, beta, h, bc) in cases {
            let spec = GibbsSpec::new(env, beta, h, bc.clone()).unwrap();
            let report = es_equivalence_check(&spec).unwrap();
            assert!(
                report.marginal_ok && report.admissible_ok,
                "bc {bc:?}, beta {beta}, h {h}: {report:?}"
            );
        }
    }

    #[test]
    fn es_check_flip_symmetry_at_zero_field() {
        let env = env_box(2, 2, 0.8, 10);
        let plus = GibbsSpec::new(env.clone(), 1.1, 0.0, Bc::Uniform(Sign::Plus)).unwrap();
        let minus = GibbsSpec::new(env, 1.1, 0.0, Bc::Uniform(Sign::Minus)).unwrap();
        assert!(es_equivalence_check(&plus).unwrap().marginal_ok);
        assert!(es_equivalence_check(&minus).unwrap().marginal_ok);
        let gp = exact_gibbs(&plus).unwrap();
        let gm = exact_gibbs(&minus).unwrap();
        for mask in 0..16usize {
            assert!((gp.prob(mask) - gm.prob(!mask & 15)).abs() < 1e-14);
        }
    }

    #[test]
    fn mixed_support_excludes_crossings() {
        // Interface on a 2x2 patch: every supported configuration separates
        // the two boundary sides, exhaustively.
        let env = env_box(2, 2, 1.0, 7);
        let resolved = env.region.resolve_bc(&Bc::Interface { normal: [0.0, 1.0, 0.0] });
        let dist = exact_fk(&env, &resolved, 1.0, 0.0).unwrap();
        for (cfg, w) in &dist {
            assert!(*w > 0.0);
            let part = clusters(&env, &resolved, cfg);
            assert!(part.supported);
        }
        // At least one crossing configuration was excluded.
        let all = 1u64 << openable_edges(&env, &resolved).len();
        assert!((dist.len() as u64) < all);
    }

    /// Increasing subsets of the k-bit hypercube, by brute force.
    fn increasing_events(k: usize) -> Vec<u32> {
        assert!(k <= 4);
        let m = 1usize << k;
        let mut up = vec![0u32; m];
        for a in 0..m {
            for b in 0..m {
                if a & b == a {
                    up[a] |= 1 << b;
                }
            }
        }
        (0..1u32 << m)
            .filter(|&ev| (0..m).all(|a| ev >> a & 1 == 0 || up[a] & ev == up[a]))
            .collect()
    }

    #[test]
    fn bond_measure_monotone_in_couplings_and_field() {
        // Project the bond law onto four designated real edges and compare
        // across (J, h) pairs on every increasing event of the 4-cube.
        let events = increasing_events(4);
        assert_eq!(events.len(), 168);

        let env_lo = env_box(2, 2, 0.55, 11); // random couplings
        let env_hi = env_box(2, 2, 1.0, 11); // all couplings present
        let interior: Vec<usize> = env_hi
            .region
            .edges()
            .iter()
            .enumerate()
            .filter(|(_, e)| e.is_interior())
            .map(|(i, _)| i)
            .collect();
        assert_eq!(interior.len(), 4);

        let project = |env: &Arc<Environment>, h: f64| -> Vec<f64> {
            let resolved = env.region.resolve_bc(&Bc::Free);
            let dist = exact_fk(env, &resolved, 1.0, h).unwrap();
            let mut q = vec![0.0; 16];
            for (cfg, w) in dist {
                let mut m = 0usize;
                for (k, &ei) in interior.iter().enumerate() {
                    if cfg.real[ei] {
                        m |= 1 << k;
                    }
                }
                q[m] += w;
            }
            q
        };

        let checks = [
            (project(&env_lo, 0.0), project(&env_hi, 0.0)),
            (project(&env_hi, 0.0), project(&env_hi, 0.5)),
            (project(&env_lo, 0.2), project(&env_hi, 0.6)),
        ];
        for (lo, hi) in &checks {
            for &ev in &events {
                let pl: f64 = (0..16).filter(|&m| ev >> m & 1 == 1).map(|m| lo[m]).sum();
                let ph: f64 = (0..16).filter(|&m| ev >> m & 1 == 1).map(|m| hi[m]).sum();
                assert!(pl <= ph + 1e-12, "event {ev:#06x}: {pl} > {ph}");
            }
        }
    }

    #[test]
    fn tau_exact_reference_points() {
        // Near-zero temperature ratio degenerates: both partition functions
        // count the same configurations, so tau ~ 0.
        let env = env_box(2, 2, 1.0, 12);
        let t = tau_estimator(&env, 1e-12, 2, [0.0, 1.0, 0.0], TauPath::Exact).unwrap();
        assert!(t.value.abs() < 1e-10, "tau {}", t.value);

        // Monotone in beta on a fixed strip.
        let mut last = -1.0;
        for beta in [0.5, 1.0, 2.0] {
            let t = tau_estimator(&env, beta, 2, [0.0, 1.0, 0.0], TauPath::Exact).unwrap();
            assert!(t.value >= last - 1e-12, "beta {beta}: {} < {last}", t.value);
            assert!(t.value >= -1e-12);
            last = t.value;
        }
    }

    #[test]
    fn tau_spin_and_bond_routes_agree() {
        // The interface partition-function ratio must equal the probability
        // of boundary-side disconnection under the all-plus bond measure.
        for (p, seed, beta) in [(1.0, 0, 1.0), (0.7, 3, 1.4)] {
            let env = env_box(2, 2, p, seed);
            let exact = tau_estimator(&env, beta, 2, [0.0, 1.0, 0.0], TauPath::Exact).unwrap();
            let plus = env.region.resolve_bc(&Bc::Uniform(Sign::Plus));
            let iface = env.region.resolve_bc(&Bc::Interface { normal: [0.0, 1.0, 0.0] });
            let dist = exact_fk(&env, &plus, beta, 0.0).unwrap();
            let mut q = 0.0;
            for (cfg, w) in &dist {
                if clusters(&env, &iface, cfg).supported {
                    q += w;
                }
            }
            let bond_route = (1.0 / q).ln() / 2.0;
            assert!(
                (exact.value - bond_route).abs() < 1e-10,
                "p={p}, beta={beta}: {} vs {bond_route}",
                exact.value
            );
        }
    }

    #[test]
    fn tau_mc_agrees_with_exact() {
        let env = env_box(2, 2, 1.0, 12);
        let beta = 1.0;
        let exact = tau_estimator(&env, beta, 2, [0.0, 1.0, 0.0], TauPath::Exact).unwrap();
        let mc = tau_estimator(
            &env,
            beta,
            2,
            [0.0, 1.0, 0.0],
            TauPath::Mc { sweeps: 40_000, burn_in: 500, seed: 99 },
        )
        .unwrap();
        assert!(!mc.lower_bound_only);
        let se = mc.std_error.unwrap();
        assert!(
            (mc.value - exact.value).abs() < 3.0 * se,
            "mc {} vs exact {} (se {se})",
            mc.value,
            exact.value
        );
    }

    #[test]
    fn wired_parts_identify_boundary() {
        // A wired outer part merges clusters touching the boundary without
        // pinning them: the merged cluster stays free and counts once.
        let env = env_box(2, 2, 1.0, 13);
        let resolved = env
            .region
            .resolve_bc(&Bc::TwoPart { inner: PartRule::Free, outer: PartRule::Wired });
        let mut cfg = EdgeConfig::closed(&env.region);
        // Open two boundary bonds on opposite corners.
        let mut picked = 0;
        for (ei, e) in env.region.edges().iter().enumerate() {
            if !e.is_interior() && picked < 2 {
                if matches!(resolved.zeta[ei], EdgeZeta::Wired(_)) {
                    cfg.real[ei] = true;
                    picked += 1;
                }
            }
        }
        assert_eq!(picked, 2);
        let part = clusters(&env, &resolved, &cfg);
        assert!(part.supported);
        // All four vertices: the two wired-touching ones share a cluster.
        let wired_cluster: Vec<usize> = (0..4)
            .filter(|&v| part.real_sizes[part.real_id[v] as usize] == 2)
            .collect();
        assert_eq!(wired_cluster.len(), 2);
        assert_eq!(part.n_free, 3);
        let mut rng = ChaCha12Rng::seed_from_u64(14);
        let spins = assign_spins(&part, 1.0, 0.0, &mut rng).unwrap();
        assert_eq!(spins[wired_cluster[0]], spins[wired_cluster[1]]);
    }

    #[test]
    fn sampled_bonds_respect_couplings() {
        // Swendsen-Wang never opens a closed-coupling or dropped edge and
        // never opens ghosts at h = 0.
        let env = env_box(2, 3, 0.5, 15);
        let spec = GibbsSpec::new(env.clone(), 1.5, 0.0, Bc::Free).unwrap();
        let resolved = spec.resolved().clone();
        let mut rng = ChaCha12Rng::seed_from_u64(16);
        let mut spins = vec![1i8; env.region.len()];
        for _ in 0..300 {
            let (omega, next) = sw_step(&spec, &spins, &mut rng).unwrap();
            omega.validate(&env, &resolved, 0.0).unwrap();
            spins = next;
        }
    }
}
