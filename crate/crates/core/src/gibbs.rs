//! Exact finite-volume computations: Hamiltonian evaluation, full enumeration
//! of the Gibbs measure, the heat-bath generator spectrum, and mesoscopic
//! magnetization profiles. These are the brute-force oracles the stochastic
//! modules are tested against, so everything here favors transparency over
//! speed and refuses inputs past hard size caps.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::lattice::{
    box_decomposition, Bc, EdgeZeta, Environment, LatticeRegion, Nbr, ResolvedBc, Scales,
};
use crate::geom::Pt;

/// Hard cap for full-measure enumeration (2^20 configurations).
pub const MAX_EXACT_SITES: usize = 20;
/// Hard cap for dense generator spectra (4096 x 4096 symmetric eigenproblem).
pub const MAX_GENERATOR_SITES: usize = 12;

/// Parameters of a finite-volume Gibbs measure. Resolves and validates the
/// boundary condition once at construction.
#[derive(Debug, Clone)]
pub struct GibbsSpec {
    pub env: Arc<Environment>,
    pub beta: f64,
    pub h: f64,
    pub bc: Bc,
    resolved: ResolvedBc,
}

impl GibbsSpec {
    pub fn new(env: Arc<Environment>, beta: f64, h: f64, bc: Bc) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::invalid(format!("inverse temperature beta={beta} must be > 0")));
        }
        if !(h >= 0.0) {
            return Err(Error::invalid(format!("external field h={h} must be >= 0")));
        }
        let resolved = env.region.resolve_bc(&bc);
        if resolved.has_wired() {
            return Err(Error::Unsupported(
                "wired boundary parts have no spin-side Hamiltonian".to_string(),
            ));
        }
        Ok(GibbsSpec { env, beta, h, bc, resolved })
    }

    pub fn region(&self) -> &LatticeRegion {
        &self.env.region
    }

    pub fn resolved(&self) -> &ResolvedBc {
        &self.resolved
    }
}

/// Energy of a configuration: one unit per open edge with disagreeing
/// endpoints (boundary edges compare against the frozen exterior spin and
/// free boundary edges are omitted), plus `h` per minus spin.
pub fn hamiltonian(spec: &GibbsSpec, spins: &[i8]) -> f64 {
    let region = spec.region();
    debug_assert_eq!(spins.len(), region.len());
    let mut h = 0.0;
    for (ei, e) in region.edges().iter().enumerate() {
        if !spec.env.open(ei as u32) {
            continue;
        }
        match spec.resolved.zeta[ei] {
            EdgeZeta::Interior => {
                if spins[e.ia.unwrap() as usize] != spins[e.ib.unwrap() as usize] {
                    h += 1.0;
                }
            }
            EdgeZeta::Spin(s) => {
                let (inside, _) = e.boundary_parts().unwrap();
                if spins[inside as usize] != s.val() {
                    h += 1.0;
                }
            }
            EdgeZeta::Drop => {}
            EdgeZeta::Wired(_) => unreachable!("rejected at construction"),
        }
    }
    let minus = spins.iter().filter(|&&s| s < 0).count();
    h + spec.h * minus as f64
}

/// Decode configuration index: bit `v` set means vertex `v` is plus.
pub fn mask_spins(mask: usize, n: usize) -> Vec<i8> {
    (0..n).map(|v| if mask >> v & 1 == 1 { 1 } else { -1 }).collect()
}

pub fn spins_mask(spins: &[i8]) -> usize {
    spins.iter().enumerate().fold(0, |m, (v, &s)| if s > 0 { m | 1 << v } else { m })
}

/// Normalize log-weights into probabilities via log-sum-exp.
pub fn normalize_log_weights(lw: &[f64]) -> (f64, Vec<f64>) {
    let m = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = lw.iter().map(|&w| (w - m).exp()).sum();
    let log_z = m + sum.ln();
    (log_z, lw.iter().map(|&w| (w - log_z).exp()).collect())
}

/// Fully enumerated finite-volume Gibbs measure.
#[derive(Debug, Clone)]
pub struct ExactGibbs {
    pub n: usize,
    pub log_z: f64,
    /// Indexed by configuration mask; sums to 1 within 1e-12.
    pub probs: Vec<f64>,
}

impl ExactGibbs {
    pub fn prob(&self, mask: usize) -> f64 {
        self.probs[mask]
    }

    pub fn expectation(&self, f: impl Fn(usize) -> f64) -> f64 {
        self.probs.iter().enumerate().map(|(m, &p)| p * f(m)).sum()
    }

    /// Probability of an event given by its indicator on masks.
    pub fn event_prob(&self, pred: impl Fn(usize) -> bool) -> f64 {
        self.probs.iter().enumerate().filter(|&(m, _)| pred(m)).map(|(_, &p)| p).sum()
    }

    /// Mean per-site magnetization E[sum sigma] / n.
    pub fn magnetization(&self) -> f64 {
        self.expectation(|m| {
            let plus = (m & ((1usize << self.n) - 1)).count_ones() as f64;
            (2.0 * plus - self.n as f64) / self.n as f64
        })
    }

    pub fn site_plus_marginal(&self, v: u32) -> f64 {
        self.event_prob(|m| m >> v & 1 == 1)
    }

    /// Conditional plus probability at `v` given the other spins of `mask`.
    pub fn conditional_plus(&self, v: u32, mask: usize) -> f64 {
        let plus = self.probs[mask | 1 << v];
        let minus = self.probs[mask & !(1 << v)];
        plus / (plus + minus)
    }
}

pub fn exact_gibbs(spec: &GibbsSpec) -> Result<ExactGibbs> {
    let n = spec.region().len();
    if n > MAX_EXACT_SITES {
        return Err(Error::TooLarge(format!(
            "exact enumeration needs |region| <= {MAX_EXACT_SITES}, got {n}"
        )));
    }
    let mut lw = Vec::with_capacity(1 << n);
    for mask in 0..1usize << n {
        let spins = mask_spins(mask, n);
        lw.push(-spec.beta * hamiltonian(spec, &spins));
    }
    let (log_z, probs) = normalize_log_weights(&lw);
    Ok(ExactGibbs { n, log_z, probs })
}

/// Numerically stable heat-bath plus-probability given the local energies of
/// the two values at one site: sigma(beta (e_minus - e_plus)).
pub fn heat_bath_plus_prob(beta: f64, e_plus: f64, e_minus: f64) -> f64 {
    let d = beta * (e_minus - e_plus);
    if d >= 0.0 {
        1.0 / (1.0 + (-d).exp())
    } else {
        let e = d.exp();
        e / (1.0 + e)
    }
}

/// Local energies (e_plus, e_minus) of the two candidate values at vertex `v`
/// given the rest of the configuration: open disagreeing incident edges plus
/// the field term for the minus value.
pub fn local_energies(
    env: &Environment,
    resolved: &ResolvedBc,
    h: f64,
    spins: &[i8],
    v: u32,
) -> (f64, f64) {
    let region = &env.region;
    let mut e_plus = 0.0;
    let mut e_minus = h;
    for &(ei, nbr) in region.adj(v) {
        if !env.open(ei) {
            continue;
        }
        let other = match resolved.zeta[ei as usize] {
            EdgeZeta::Interior => match nbr {
                Nbr::In(u) => spins[u as usize],
                Nbr::Out(_) => unreachable!("interior edge with exterior neighbor"),
            },
            EdgeZeta::Spin(s) => s.val(),
            EdgeZeta::Drop => continue,
            EdgeZeta::Wired(_) => continue,
        };
        if other < 0 {
            e_plus += 1.0;
        } else {
            e_minus += 1.0;
        }
    }
    (e_plus, e_minus)
}

/// Similarity-symmetrized heat-bath generator: rate-1 clocks, flip rates
/// from the conditional Gibbs distribution, off-diagonals
/// `sqrt(c_v(m) c_v(m^v))` so detailed balance is used structurally.
fn symmetrized_generator(spec: &GibbsSpec) -> Result<DMatrix<f64>> {
    let n = spec.region().len();
    if n > MAX_GENERATOR_SITES {
        return Err(Error::TooLarge(format!(
            "generator spectrum needs |region| <= {MAX_GENERATOR_SITES}, got {n}"
        )));
    }
    if n == 0 {
        return Err(Error::invalid("empty region has no dynamics".to_string()));
    }
    let states = 1usize << n;
    let mut s = DMatrix::<f64>::zeros(states, states);
    let mut spins = vec![0i8; n];
    for mask in 0..states {
        for (v, sp) in spins.iter_mut().enumerate() {
            *sp = if mask >> v & 1 == 1 { 1 } else { -1 };
        }
        let mut total = 0.0;
        for v in 0..n {
            let (ep, em) = local_energies(&spec.env, &spec.resolved, spec.h, &spins, v as u32);
            let p_plus = heat_bath_plus_prob(spec.beta, ep, em);
            // Rate of flipping v is the conditional probability of the
            // opposite value.
            let rate = if mask >> v & 1 == 1 { 1.0 - p_plus } else { p_plus };
            total += rate;
            let other = mask ^ (1 << v);
            if other > mask {
                // The partner rate is the conditional probability of this
                // value.
                let partner = if mask >> v & 1 == 1 { p_plus } else { 1.0 - p_plus };
                let val = (rate * partner).sqrt();
                s[(mask, other)] = val;
                s[(other, mask)] = val;
            }
        }
        s[(mask, mask)] = -total;
    }
    Ok(s)
}

/// Spectral gap of the single-site heat-bath generator: the smallest nonzero
/// eigenvalue of -L.
pub fn exact_generator_gap(spec: &GibbsSpec) -> Result<f64> {
    let s = symmetrized_generator(spec)?;
    let eig = s.symmetric_eigen();
    let mut ev: Vec<f64> = eig.eigenvalues.iter().map(|&l| -l).collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    debug_assert!(ev[0].abs() < 1e-8, "kernel eigenvalue {} not ~ 0", ev[0]);
    Ok(ev[1])
}

/// Stationary law of the heat-bath generator, recovered from its spectrum:
/// the kernel eigenvector of the symmetrized form is sqrt(pi) up to sign, so
/// the law is its entrywise square. Indexed like `ExactGibbs::probs`.
pub fn generator_stationary(spec: &GibbsSpec) -> Result<Vec<f64>> {
    let s = symmetrized_generator(spec)?;
    let eig = s.symmetric_eigen();
    let kernel = (0..eig.eigenvalues.len())
        .min_by(|&a, &b| {
            eig.eigenvalues[a].abs().partial_cmp(&eig.eigenvalues[b].abs()).unwrap()
        })
        .unwrap();
    debug_assert!(eig.eigenvalues[kernel].abs() < 1e-8);
    let v = eig.eigenvectors.column(kernel);
    let total: f64 = v.iter().map(|x| x * x).sum();
    Ok(v.iter().map(|x| x * x / total).collect())
}

/// One mesoscopic box of a magnetization profile.
#[derive(Debug, Clone, Copy)]
pub struct ProfileBox {
    pub index: Pt,
    pub value: f64,
    pub interior: bool,
}

/// Per-box renormalized magnetization: 1 marks plus phase, 0 minus phase.
#[derive(Debug, Clone)]
pub struct Profile {
    pub k: u64,
    pub dim: usize,
    /// Sorted by box index.
    pub boxes: Vec<ProfileBox>,
}

impl Profile {
    pub fn value(&self, index: Pt) -> Option<f64> {
        self.boxes.binary_search_by_key(&index, |b| b.index).ok().map(|i| self.boxes[i].value)
    }

    /// Integral over the box cover in macroscopic volume units: each box
    /// contributes value * (K/N)^d.
    pub fn integral(&self, scales: &Scales) -> f64 {
        let w = scales.box_macro_volume(self.dim);
        self.boxes.iter().map(|b| b.value * w).sum()
    }
}

/// Profile value per box: (1 + avg/m*) / 2 on boxes fully inside the region,
/// (1 + avg) / 2 otherwise. The average runs over the box's region vertices;
/// boxes that miss the region entirely do not appear.
pub fn magnetization_profile(
    region: &LatticeRegion,
    spins: &[i8],
    scales: &Scales,
    m_star: f64,
) -> Result<Profile> {
    if !(m_star > 0.0 && m_star <= 1.0) {
        return Err(Error::invalid(format!("spontaneous magnetization m*={m_star} not in (0, 1]")));
    }
    if spins.len() != region.len() {
        return Err(Error::invalid("spin vector length does not match region".to_string()));
    }
    let bd = box_decomposition(region, scales.k)?;
    let mut boxes = Vec::with_capacity(bd.boxes.len());
    for b in &bd.boxes {
        let sum: i64 = b.verts.iter().map(|&v| spins[v as usize] as i64).sum();
        let avg = sum as f64 / b.verts.len() as f64;
        let value = if b.interior { 0.5 * (1.0 + avg / m_star) } else { 0.5 * (1.0 + avg) };
        boxes.push(ProfileBox { index: b.index, value, interior: b.interior });
    }
    Ok(Profile { k: scales.k, dim: region.dim(), boxes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{gen_environment, LatticeRegion, Sign};
    use std::sync::Arc;

    fn box_env(dim: usize, side: u64, p: f64, seed: u64) -> Arc<Environment> {
        let r = Arc::new(LatticeRegion::box_region(dim, [0; 3], [side; 3]).unwrap());
        Arc::new(gen_environment(r, p, seed).unwrap())
    }

    #[test]
    fn hamiltonian_reference_points() {
        let env = box_env(2, 3, 1.0, 1);
        let n = env.region.len();
        let h = 0.7;

        let spec = GibbsSpec::new(env.clone(), 1.0, h, Bc::Uniform(Sign::Plus)).unwrap();
        assert_eq!(hamiltonian(&spec, &vec![1i8; n]), 0.0);

        let spec_m = GibbsSpec::new(env.clone(), 1.0, h, Bc::Uniform(Sign::Minus)).unwrap();
        assert_eq!(hamiltonian(&spec_m, &vec![-1i8; n]), h * n as f64);

        // Single minus at the center of a 3x3 all-plus sea, p = 1: four
        // broken bonds plus one field unit.
        let center = env.region.idx([1, 1, 0]).unwrap() as usize;
        let mut spins = vec![1i8; n];
        spins[center] = -1;
        assert_eq!(hamiltonian(&spec, &spins), 4.0 + h);

        // Free boundary drops boundary edges: all-minus costs only field.
        let spec_f = GibbsSpec::new(env, 1.0, h, Bc::Free).unwrap();
        assert_eq!(hamiltonian(&spec_f, &vec![-1i8; n]), h * n as f64);
    }

    #[test]
    fn single_site_two_state_law() {
        let r = Arc::new(LatticeRegion::from_points(2, vec![[0, 0, 0]]).unwrap());
        let env = Arc::new(gen_environment(r, 1.0, 0).unwrap());
        for (beta, h) in [(1.0, 0.5), (2.0, 0.1), (0.3, 2.0)] {
            let spec = GibbsSpec::new(env.clone(), beta, h, Bc::Free).unwrap();
            let g = exact_gibbs(&spec).unwrap();
            let expect = 1.0 / (1.0 + (-beta * h).exp());
            assert!((g.site_plus_marginal(0) - expect).abs() < 1e-14, "beta={beta}, h={h}");
        }
    }

    #[test]
    fn infinite_temperature_limit_is_uniform() {
        // beta -> 0 is outside the validated domain, so check tiny beta
        // against the uniform law instead.
        let env = box_env(2, 2, 1.0, 3);
        let spec = GibbsSpec::new(env, 1e-14, 0.0, Bc::Uniform(Sign::Plus)).unwrap();
        let g = exact_gibbs(&spec).unwrap();
        for &p in &g.probs {
            assert!((p - 1.0 / 16.0).abs() < 1e-12);
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        let env = box_env(2, 3, 0.7, 5);
        let spec = GibbsSpec::new(env, 2.0, 0.4, Bc::Uniform(Sign::Plus)).unwrap();
        let g = exact_gibbs(&spec).unwrap();
        let sum: f64 = g.probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        // Extreme beta exercises the log-sum-exp path.
        let env = box_env(2, 3, 1.0, 5);
        let spec = GibbsSpec::new(env, 16.0, 0.0, Bc::Uniform(Sign::Plus)).unwrap();
        let g = exact_gibbs(&spec).unwrap();
        let sum: f64 = g.probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(g.probs[(1 << g.n) - 1] > 0.99);
    }

    #[test]
    fn two_by_two_plus_boundary_magnetization() {
        // Independent 16-term route: group configurations of the 2x2 patch
        // with plus boundary, p = 1, h = 0, beta = 1 by energy.
        // m minus spins cost 2m boundary units; interior disagreements are
        // 2, 2, 4 for one minus, adjacent pair, diagonal pair.
        let e4: f64 = (-4.0f64).exp();
        let e6: f64 = (-6.0f64).exp();
        let e8: f64 = (-8.0f64).exp();
        let z = 1.0 + 4.0 * e4 + 4.0 * e6 + 7.0 * e8;
        let expect = (4.0 + 8.0 * e4 - 12.0 * e8) / (4.0 * z);

        let env = box_env(2, 2, 1.0, 9);
        let spec = GibbsSpec::new(env, 1.0, 0.0, Bc::Uniform(Sign::Plus)).unwrap();
        let g = exact_gibbs(&spec).unwrap();
        assert!((g.magnetization() - expect).abs() < 1e-13, "{} vs {expect}", g.magnetization());

        // Second independent route inside the test: raw Boltzmann sum without
        // log-sum-exp, straight from per-mask Hamiltonians.
        let mut z2 = 0.0;
        let mut m2 = 0.0;
        for mask in 0..16usize {
            let spins = mask_spins(mask, 4);
            let w = (-hamiltonian(&spec, &spins)).exp();
            z2 += w;
            m2 += w * (2.0 * mask.count_ones() as f64 - 4.0) / 4.0;
        }
        assert!((g.magnetization() - m2 / z2).abs() < 1e-13);
    }

    #[test]
    fn gibbs_invariant_under_energy_shift() {
        let lw = [-3.0, -1.5, 0.2, -0.7];
        let (_, p1) = normalize_log_weights(&lw);
        let shifted: Vec<f64> = lw.iter().map(|w| w + 250.0).collect();
        let (_, p2) = normalize_log_weights(&shifted);
        for (a, b) in p1.iter().zip(&p2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn generator_gap_reference_points() {
        // Single vertex: two-state chain whose rates sum to 1.
        let r = Arc::new(LatticeRegion::from_points(2, vec![[0, 0, 0]]).unwrap());
        let env = Arc::new(gen_environment(r, 1.0, 0).unwrap());
        for (beta, h) in [(1.0, 0.8), (3.0, 0.0), (0.5, 2.0)] {
            let spec = GibbsSpec::new(env.clone(), beta, h, Bc::Free).unwrap();
            let gap = exact_generator_gap(&spec).unwrap();
            assert!((gap - 1.0).abs() < 1e-10, "beta={beta}, h={h}: gap {gap}");
        }

        // Near-zero beta, several vertices: product of independent two-state
        // chains, gap 1.
        let env = box_env(2, 2, 1.0, 2);
        let spec = GibbsSpec::new(env, 1e-12, 0.0, Bc::Free).unwrap();
        let gap = exact_generator_gap(&spec).unwrap();
        assert!((gap - 1.0).abs() < 1e-9, "gap {gap}");

        // Isolated vertices at any beta: dilution p handled by closing all
        // edges via a two-point region with no interior edge open.
        let r = Arc::new(LatticeRegion::from_points(2, vec![[0, 0, 0], [5, 5, 0]]).unwrap());
        let env = Arc::new(gen_environment(r, 1.0, 0).unwrap());
        let spec = GibbsSpec::new(env, 2.0, 0.3, Bc::Free).unwrap();
        let gap = exact_generator_gap(&spec).unwrap();
        assert!((gap - 1.0).abs() < 1e-10, "gap {gap}");
    }

    #[test]
    fn generator_gap_positive_and_detailed_balance() {
        let env = box_env(2, 2, 0.7, 11);
        let spec = GibbsSpec::new(env.clone(), 1.5, 0.2, Bc::Uniform(Sign::Plus)).unwrap();
        let gap = exact_generator_gap(&spec).unwrap();
        assert!(gap > 0.0);

        // Detailed balance via the unsymmetrized rates against the exact
        // measure: pi(m) c(m -> m') == pi(m') c(m' -> m).
        let g = exact_gibbs(&spec).unwrap();
        let n = g.n;
        let mut max_viol: f64 = 0.0;
        let mut row_sums_ok = true;
        for mask in 0..1usize << n {
            let spins = mask_spins(mask, n);
            let mut total = 0.0;
            for v in 0..n {
                let (ep, em) = local_energies(&spec.env, spec.resolved(), spec.h, &spins, v as u32);
                let pp = heat_bath_plus_prob(spec.beta, ep, em);
                let rate = if mask >> v & 1 == 1 { 1.0 - pp } else { pp };
                total += rate;
                let other = mask ^ (1 << v);
                let spins2 = mask_spins(other, n);
                let (ep2, em2) =
                    local_energies(&spec.env, spec.resolved(), spec.h, &spins2, v as u32);
                let pp2 = heat_bath_plus_prob(spec.beta, ep2, em2);
                let back = if other >> v & 1 == 1 { 1.0 - pp2 } else { pp2 };
                max_viol = max_viol.max((g.prob(mask) * rate - g.prob(other) * back).abs());
            }
            // Row sum of L is rate out minus rate out = 0 by construction;
            // check the off-diagonal total is finite and positive.
            row_sums_ok &= total > 0.0 && total.is_finite();
        }
        assert!(row_sums_ok);
        assert!(max_viol < 1e-12, "detailed balance violation {max_viol}");
    }

    #[test]
    fn generator_kernel_recovers_the_gibbs_law() {
        for (p, beta, h, bc) in [
            (1.0, 1.2, 0.3, Bc::Uniform(Sign::Plus)),
            (0.7, 0.8, 0.0, Bc::Free),
            (1.0, 2.0, 0.5, Bc::Uniform(Sign::Minus)),
        ] {
            let env = box_env(2, 2, p, 11);
            let spec = GibbsSpec::new(env, beta, h, bc).unwrap();
            let pi = generator_stationary(&spec).unwrap();
            let g = exact_gibbs(&spec).unwrap();
            let max_err = pi
                .iter()
                .zip(g.probs.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(max_err < 1e-10, "stationary law off by {max_err}");
        }
    }

    #[test]
    fn gap_matches_conditional_flip_construction() {
        // The generator built from local energies must agree with rates read
        // off the exact conditional distribution.
        let env = box_env(2, 2, 1.0, 4);
        let spec = GibbsSpec::new(env, 1.2, 0.5, Bc::Uniform(Sign::Minus)).unwrap();
        let g = exact_gibbs(&spec).unwrap();
        for mask in 0..1usize << g.n {
            let spins = mask_spins(mask, g.n);
            for v in 0..g.n {
                let (ep, em) = local_energies(&spec.env, spec.resolved(), spec.h, &spins, v as u32);
                let pp = heat_bath_plus_prob(spec.beta, ep, em);
                let cond = g.conditional_plus(v as u32, mask);
                assert!((pp - cond).abs() < 1e-12, "mask {mask}, v {v}: {pp} vs {cond}");
            }
        }
    }

    #[test]
    fn profile_reference_points() {
        let region = LatticeRegion::box_region(2, [-1, -1, 0], [4, 4, 1]).unwrap();
        let scales = Scales::explicit(0.5, 2, 4).unwrap();
        let n = region.len();

        let p = magnetization_profile(&region, &vec![1i8; n], &scales, 1.0).unwrap();
        assert!(p.boxes.iter().all(|b| (b.value - 1.0).abs() < 1e-15));

        let p = magnetization_profile(&region, &vec![-1i8; n], &scales, 1.0).unwrap();
        assert!(p.boxes.iter().all(|b| b.value.abs() < 1e-15));

        // Half-plus / half-minus split along x: profile is the indicator of
        // the plus half, and its integral is half the covered volume.
        let spins: Vec<i8> =
            region.points().iter().map(|p| if p[0] >= 1 { 1 } else { -1 }).collect();
        let p = magnetization_profile(&region, &spins, &scales, 1.0).unwrap();
        for b in &p.boxes {
            let expect = if b.index[0] == 1 { 1.0 } else { 0.0 };
            assert!((b.value - expect).abs() < 1e-15, "box {:?}", b.index);
        }
        let total_cover = p.boxes.len() as f64 * scales.box_macro_volume(2);
        assert!((p.integral(&scales) - total_cover / 2.0).abs() < 1e-12);

        assert!(magnetization_profile(&region, &spins, &scales, 0.0).is_err());
    }

    /// All increasing events of a tiny system, as bitmasks over config masks:
    /// event A is increasing iff it contains every dominating config of each
    /// member.
    fn increasing_events(n: usize) -> Vec<u32> {
        assert!(n <= 4);
        let configs = 1usize << n;
        // up[m] = set of configs whose plus-set contains m's.
        let mut up = vec![0u32; configs];
        for m in 0..configs {
            for sup in 0..configs {
                if sup & m == m {
                    up[m] |= 1 << sup;
                }
            }
        }
        let mut events = Vec::new();
        'outer: for a in 0..1u32 << configs {
            for m in 0..configs {
                if a >> m & 1 == 1 && up[m] & a != up[m] {
                    continue 'outer;
                }
            }
            events.push(a);
        }
        events
    }

    #[test]
    fn stochastic_ordering_on_all_increasing_events() {
        // Field and boundary monotonicity of the exact measure, checked
        // against every increasing event (Dedekind enumeration, n = 4).
        let events = increasing_events(4);
        assert_eq!(events.len(), 168, "Dedekind count for n = 4");
        for (p, seed) in [(1.0, 0), (0.6, 7), (0.8, 13)] {
            let env = box_env(2, 2, p, seed);
            let mk = |h: f64, bc: Bc| {
                exact_gibbs(&GibbsSpec::new(env.clone(), 1.3, h, bc).unwrap()).unwrap()
            };
            let cases = [
                (mk(0.1, Bc::Uniform(Sign::Minus)), mk(0.4, Bc::Uniform(Sign::Minus))),
                (mk(0.1, Bc::Uniform(Sign::Minus)), mk(0.1, Bc::Uniform(Sign::Plus))),
                (mk(0.2, Bc::Uniform(Sign::Minus)), mk(0.5, Bc::Uniform(Sign::Plus))),
                (
                    mk(0.3, Bc::Interface { normal: [1.0, 0.0, 0.0] }),
                    mk(0.3, Bc::Uniform(Sign::Plus)),
                ),
            ];
            for (lo, hi) in &cases {
                for &a in &events {
                    let pl = lo.event_prob(|m| a >> m & 1 == 1);
                    let ph = hi.event_prob(|m| a >> m & 1 == 1);
                    assert!(
                        pl <= ph + 1e-12,
                        "increasing event {a:#06x}: {pl} > {ph} (p={p}, seed={seed})"
                    );
                }
            }
        }
    }
}
