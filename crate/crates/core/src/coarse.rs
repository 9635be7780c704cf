//! Mesoscopic coarse graining: good/bad box classification of an edge
//! configuration, phase labels carried by box-crossing clusters, layer
//! profiles with spanning detection, and the maximal number of disjoint
//! box paths between the plus and minus phases (an integer max-flow).
//!
//! Boxes follow the centered grid of [`box_of`]: box `i` covers
//! `K i + [-K/2, K/2)^d`. A box not entirely contained in the region is
//! automatically bad. For an interior box, the crossing cluster is the
//! unique real cluster of the configuration restricted to the box that
//! meets all `2d` inner faces (no such cluster, or more than one, leaves it
//! empty). A box is good at tolerance `eps` when (i) its crossing cluster
//! is joined by an open edge to the crossing cluster of every neighboring
//! interior box, (ii) every residual cluster (the configuration off the
//! union of all crossing clusters) meeting the box has sup-norm diameter at
//! most `K/2`, and (iii) the region-wide cluster containing the crossing
//! cluster covers a fraction of the box within `[m*(1-eps), m*(1+eps)]`.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fk::{EdgeConfig, Uf};
use crate::geom::{Fv, Pt};
use crate::gibbs::magnetization_profile;
use crate::lattice::{
    box_decomposition, box_of, BoxDecomposition, Environment, LatticeRegion, Nbr, Scales,
};
use crate::wulff::ShapeSpec;

/// Classification outcome for one mesoscopic box.
#[derive(Debug, Clone)]
pub struct BoxReport {
    /// Box lies entirely inside the region.
    pub interior: bool,
    pub good: bool,
    /// Vertices of the crossing cluster (empty when none or not unique).
    pub crossing: Vec<u32>,
    /// Fraction of the box covered by the region-wide cluster containing
    /// the crossing cluster.
    pub density: f64,
    /// Union-find root of that region-wide cluster.
    pub cluster_id: Option<u32>,
}

#[derive(Debug, Clone)]
pub struct BoxClassification {
    pub eps_cg: f64,
    pub m_star: f64,
    pub decomp: BoxDecomposition,
    pub boxes: Vec<BoxReport>,
}

impl BoxClassification {
    pub fn good_count(&self) -> usize {
        self.boxes.iter().filter(|b| b.good).count()
    }
}

/// Roots of a union-find over the open interior edges, restricted to
/// vertices accepted by `keep`.
fn cluster_roots(
    region: &LatticeRegion,
    open: &[bool],
    keep: impl Fn(u32) -> bool,
) -> Vec<u32> {
    let n = region.len();
    let mut uf = Uf::new(n);
    for (ei, e) in region.edges().iter().enumerate() {
        if !open[ei] || !e.is_interior() {
            continue;
        }
        let (a, b) = (e.ia.unwrap(), e.ib.unwrap());
        if keep(a) && keep(b) {
            uf.union(a, b);
        }
    }
    (0..n as u32).map(|v| uf.find(v)).collect()
}

/// Classify every box of the decomposition at tolerance `eps_cg`.
///
/// `sigma` is carried along for the admissibility contract with the edge
/// configuration (checked in debug builds); the classification itself
/// depends only on the open real edges.
pub fn classify_boxes(
    env: &Environment,
    omega: &EdgeConfig,
    sigma: &[i8],
    scales: &Scales,
    eps_cg: f64,
    m_star: f64,
) -> Result<BoxClassification> {
    let region = &env.region;
    if omega.real.len() != region.edges().len() {
        return Err(Error::invalid("edge configuration does not match the region".to_string()));
    }
    if sigma.len() != region.len() {
        return Err(Error::invalid("spin configuration does not match the region".to_string()));
    }
    if !(eps_cg > 0.0 && eps_cg <= 1.0) || !(m_star > 0.0 && m_star <= 1.0) {
        return Err(Error::invalid("need eps_cg and m_star in (0, 1]".to_string()));
    }
    #[cfg(debug_assertions)]
    for (ei, e) in region.edges().iter().enumerate() {
        if omega.real[ei] && e.is_interior() {
            debug_assert_eq!(
                sigma[e.ia.unwrap() as usize],
                sigma[e.ib.unwrap() as usize],
                "open edge joins unequal spins"
            );
        }
    }

    let k = scales.k;
    let dim = region.dim();
    let decomp = box_decomposition(region, k)?;
    let full = (k as usize).pow(dim as u32);

    // Crossing cluster per box, from the restriction of the configuration
    // to the box: the unique in-box cluster meeting all 2d faces.
    let crossings: Vec<Vec<u32>> = decomp
        .boxes
        .par_iter()
        .map(|b| {
            if !b.interior {
                return Vec::new();
            }
            let verts = &b.verts; // ascending region indices
            let local = |v: u32| verts.binary_search(&v).ok();
            let mut uf = Uf::new(verts.len());
            for (li, &v) in verts.iter().enumerate() {
                for &(ei, nb) in region.adj(v) {
                    let Nbr::In(u) = nb else { continue };
                    if omega.real[ei as usize] && u > v {
                        if let Some(lu) = local(u) {
                            uf.union(li as u32, lu as u32);
                        }
                    }
                }
            }
            // Face contact per root.
            let kk = k as i64;
            let mut touch: HashMap<u32, u32> = HashMap::new();
            for (li, &v) in verts.iter().enumerate() {
                let p = region.pt(v);
                let mut mask = 0u32;
                for a in 0..dim {
                    if p[a] == b.lo[a] {
                        mask |= 1 << (2 * a);
                    }
                    if p[a] == b.lo[a] + kk - 1 {
                        mask |= 1 << (2 * a + 1);
                    }
                }
                if mask != 0 {
                    *touch.entry(uf.find(li as u32)).or_insert(0) |= mask;
                }
            }
            let all = (1u32 << (2 * dim)) - 1;
            let roots: Vec<u32> =
                touch.iter().filter(|(_, &m)| m == all).map(|(&r, _)| r).collect();
            if roots.len() != 1 {
                return Vec::new();
            }
            let root = roots[0];
            verts
                .iter()
                .enumerate()
                .filter(|(li, _)| uf.find(*li as u32) == root)
                .map(|(_, &v)| v)
                .collect()
        })
        .collect();

    // Region-wide clusters and the residual clusters (everything off the
    // union of the crossing clusters).
    let mut in_crossing = vec![false; region.len()];
    for c in &crossings {
        for &v in c {
            in_crossing[v as usize] = true;
        }
    }
    let global = cluster_roots(region, &omega.real, |_| true);
    let residual = cluster_roots(region, &omega.real, |v| !in_crossing[v as usize]);
    // Sup-norm diameter per residual root.
    let mut spread: HashMap<u32, ([i64; 3], [i64; 3])> = HashMap::new();
    for v in 0..region.len() as u32 {
        if in_crossing[v as usize] {
            continue;
        }
        let p = region.pt(v);
        let e = spread.entry(residual[v as usize]).or_insert((p, p));
        for a in 0..dim {
            e.0[a] = e.0[a].min(p[a]);
            e.1[a] = e.1[a].max(p[a]);
        }
    }
    let diameter = |root: u32| -> i64 {
        let (lo, hi) = spread[&root];
        (0..dim).map(|a| hi[a] - lo[a]).max().unwrap_or(0)
    };

    // Which crossing cluster a vertex belongs to (box ordinal + 1).
    let mut crossing_of = vec![0u32; region.len()];
    for (ord, c) in crossings.iter().enumerate() {
        for &v in c {
            crossing_of[v as usize] = ord as u32 + 1;
        }
    }

    let boxes: Vec<BoxReport> = decomp
        .boxes
        .par_iter()
        .enumerate()
        .map(|(ord, b)| {
            let crossing = crossings[ord].clone();
            if !b.interior {
                return BoxReport {
                    interior: false,
                    good: false,
                    crossing,
                    density: 0.0,
                    cluster_id: None,
                };
            }
            let (density, cluster_id) = match crossing.first() {
                Some(&v0) => {
                    let gid = global[v0 as usize];
                    let count =
                        b.verts.iter().filter(|&&v| global[v as usize] == gid).count();
                    (count as f64 / full as f64, Some(gid))
                }
                None => (0.0, None),
            };
            let mut good = !crossing.is_empty();
            // (i) joined to every neighboring interior box's crossing cluster.
            if good {
                let mut linked: Vec<u32> = Vec::new();
                for &v in &crossing {
                    for &(ei, nb) in region.adj(v) {
                        let Nbr::In(u) = nb else { continue };
                        if omega.real[ei as usize] && crossing_of[u as usize] != 0 {
                            linked.push(crossing_of[u as usize] - 1);
                        }
                    }
                }
                for a in 0..dim {
                    for dir in [-1i64, 1] {
                        let mut j = b.index;
                        j[a] += dir;
                        let Some(jo) = decomp.ordinal(j) else { continue };
                        if !decomp.boxes[jo].interior {
                            continue;
                        }
                        if crossings[jo].is_empty() || !linked.contains(&(jo as u32)) {
                            good = false;
                        }
                    }
                }
            }
            // (ii) residual clusters meeting the box stay small.
            if good {
                for &v in &b.verts {
                    if !in_crossing[v as usize] && 2 * diameter(residual[v as usize]) > k as i64
                    {
                        good = false;
                        break;
                    }
                }
            }
            // (iii) density window around the spontaneous magnetization.
            if good {
                let count = density * full as f64;
                let lo = full as f64 * m_star * (1.0 - eps_cg);
                let hi = full as f64 * m_star * (1.0 + eps_cg);
                if count < lo - 1e-9 || count > hi + 1e-9 {
                    good = false;
                }
            }
            BoxReport { interior: true, good, crossing, density, cluster_id }
        })
        .collect();

    Ok(BoxClassification { eps_cg, m_star, decomp, boxes })
}

/// Phase labels per box: the sign carried by the crossing cluster of a
/// 1-good box, zero otherwise.
#[derive(Debug, Clone)]
pub struct PhaseLabeling {
    /// Label per box ordinal: +1, -1 or 0.
    pub labels: Vec<i8>,
    /// Box grid index per ordinal (for adjacency).
    pub indices: Vec<Pt>,
}

pub fn phase_labels(class: &BoxClassification, sigma: &[i8]) -> PhaseLabeling {
    assert!(
        (class.eps_cg - 1.0).abs() < 1e-12,
        "phase labels are defined from the classification at tolerance 1"
    );
    let labels = class
        .boxes
        .iter()
        .map(|b| {
            if !b.good {
                return 0;
            }
            let s = sigma[b.crossing[0] as usize];
            debug_assert!(
                b.crossing.iter().all(|&v| sigma[v as usize] == s),
                "crossing cluster carries a non-constant spin"
            );
            s
        })
        .collect();
    PhaseLabeling { labels, indices: class.decomp.boxes.iter().map(|b| b.index).collect() }
}

/// Concentric mesoscopic layers; `layers[0]` is the outermost.
#[derive(Debug, Clone)]
pub struct MesoLayers {
    /// Box ordinals per layer.
    pub layers: Vec<Vec<u32>>,
}

/// Bin interior boxes into annular layers of one gauge body: layer `l`
/// (1-based, outermost first) holds the boxes whose macroscopic center has
/// gauge value in `[b2 - 2lK/(wN), b2 - 2(l-1)K/(wN))`, with `w` the
/// sup-norm distance from the origin to the unit gauge surface. The layer
/// count is `floor((b2 - b1) N w / (2K))`.
pub fn annulus_layers(
    decomp: &BoxDecomposition,
    scales: &Scales,
    gauge: &dyn Fn(Fv) -> f64,
    b1: f64,
    b2: f64,
    w: f64,
) -> Result<MesoLayers> {
    if !(b2 > b1 && b1 >= 0.0 && w > 0.0) {
        return Err(Error::invalid("need 0 <= b1 < b2 and w > 0".to_string()));
    }
    let kf = scales.k as f64;
    let nf = scales.n as f64;
    let s = ((b2 - b1) * nf * w / (2.0 * kf)).floor() as usize;
    if s == 0 {
        return Err(Error::invalid(
            "annulus thinner than one mesoscopic layer; increase b2 - b1 or N".to_string(),
        ));
    }
    let width = 2.0 * kf / (w * nf);
    let mut layers = vec![Vec::new(); s];
    for (ord, b) in decomp.boxes.iter().enumerate() {
        if !b.interior {
            continue;
        }
        let mut c = [0.0; 3];
        for a in 0..decomp.dim {
            c[a] = (b.lo[a] as f64 + kf / 2.0) / nf;
        }
        let g = gauge(c);
        if g >= b2 {
            continue;
        }
        let l = ((b2 - g) / width).floor() as usize;
        if l < s {
            layers[l].push(ord as u32);
        }
    }
    if let Some(l) = layers.iter().position(|v| v.is_empty()) {
        return Err(Error::invalid(format!(
            "mesoscopic layer {} is empty; the box grid is too coarse for the annulus",
            l + 1
        )));
    }
    Ok(MesoLayers { layers })
}

/// Gauge of a shape family: the size parameter `b` at which the family
/// member's boundary passes through the point.
pub fn shape_gauge(shape: &ShapeSpec) -> impl Fn(Fv) -> f64 + '_ {
    let b = shape.b;
    move |x: Fv| {
        let norm = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let u = [x[0] / norm, x[1] / norm, x[2] / norm];
        b * norm / shape.radial_extent(u)
    }
}

/// Per-layer label counts: `counts[l] = (plus, minus, zero)`.
pub fn layer_profile(labeling: &PhaseLabeling, layers: &MesoLayers) -> Vec<(u32, u32, u32)> {
    layers
        .layers
        .iter()
        .map(|layer| {
            let mut c = (0, 0, 0);
            for &ord in layer {
                match labeling.labels[ord as usize] {
                    1 => c.0 += 1,
                    -1 => c.1 += 1,
                    _ => c.2 += 1,
                }
            }
            c
        })
        .collect()
}

/// Maximal number of box-disjoint paths between plus-labeled and
/// minus-labeled boxes within the member set, by integer max-flow with unit
/// vertex capacities (each box split into an in/out node pair).
pub fn box_flow(labeling: &PhaseLabeling, members: &[u32]) -> u32 {
    let m = members.len();
    let pos: HashMap<Pt, usize> =
        members.iter().enumerate().map(|(i, &o)| (labeling.indices[o as usize], i)).collect();
    struct Arc {
        to: usize,
        cap: u32,
        rev: usize,
    }
    let mut g: Vec<Vec<Arc>> = (0..2 * m + 2).map(|_| Vec::new()).collect();
    let (s, t) = (2 * m, 2 * m + 1);
    let add = |g: &mut Vec<Vec<Arc>>, u: usize, v: usize| {
        let ru = g[v].len();
        let rv = g[u].len();
        g[u].push(Arc { to: v, cap: 1, rev: ru });
        g[v].push(Arc { to: u, cap: 0, rev: rv });
    };
    for (i, &ord) in members.iter().enumerate() {
        add(&mut g, 2 * i, 2 * i + 1);
        match labeling.labels[ord as usize] {
            1 => add(&mut g, s, 2 * i),
            -1 => add(&mut g, 2 * i + 1, t),
            _ => {}
        }
        let idx = labeling.indices[ord as usize];
        for a in 0..3 {
            for dir in [-1i64, 1] {
                let mut j = idx;
                j[a] += dir;
                if let Some(&pj) = pos.get(&j) {
                    add(&mut g, 2 * i + 1, 2 * pj);
                }
            }
        }
    }
    // Edmonds-Karp; every augmenting path carries exactly one unit.
    let mut flow = 0;
    loop {
        let mut prev: Vec<Option<(usize, usize)>> = vec![None; g.len()];
        let mut queue = std::collections::VecDeque::from([s]);
        'bfs: while let Some(u) = queue.pop_front() {
            for (ai, arc) in g[u].iter().enumerate() {
                if arc.cap > 0 && prev[arc.to].is_none() && arc.to != s {
                    prev[arc.to] = Some((u, ai));
                    if arc.to == t {
                        break 'bfs;
                    }
                    queue.push_back(arc.to);
                }
            }
        }
        if prev[t].is_none() {
            return flow;
        }
        let mut v = t;
        while v != s {
            let (u, ai) = prev[v].unwrap();
            g[u][ai].cap -= 1;
            let rev = g[u][ai].rev;
            g[v][rev].cap += 1;
            v = u;
        }
        flow += 1;
    }
}

/// Spanning test over the leading layers plus the disjoint-path count over
/// the union of all layers: the profile spans when every one of the first
/// `leading` layers contains a minus or zero label.
pub fn spanning_and_flow(
    labeling: &PhaseLabeling,
    layers: &MesoLayers,
    leading: usize,
) -> Result<(bool, u32)> {
    if layers.layers.is_empty() || leading == 0 || leading > layers.layers.len() {
        return Err(Error::invalid(format!(
            "need 1 <= leading <= {} layers, got {leading}",
            layers.layers.len()
        )));
    }
    for layer in &layers.layers {
        for &ord in layer {
            if ord as usize >= labeling.labels.len() {
                return Err(Error::invalid("layer refers to a box outside the labeling".to_string()));
            }
        }
    }
    let profile = layer_profile(labeling, layers);
    let spanning = profile[..leading].iter().all(|&(_, minus, zero)| minus + zero > 0);
    let mut members: Vec<u32> = layers.layers.iter().flatten().copied().collect();
    members.sort_unstable();
    members.dedup();
    let flow = box_flow(labeling, &members);
    Ok((spanning, flow))
}

/// Lebesgue integral of the piecewise-constant renormalized magnetization
/// profile over a window (a sub-region): each vertex contributes the value
/// of its box times the macroscopic cell volume `N^{-d}`.
pub fn profile_integral(
    region: &LatticeRegion,
    sigma: &[i8],
    scales: &Scales,
    m_star: f64,
    window: &LatticeRegion,
) -> Result<f64> {
    let profile = magnetization_profile(region, sigma, scales, m_star)?;
    let dim = region.dim();
    let cell = (scales.n as f64).powi(dim as i32).recip();
    let mut total = 0.0;
    for &p in window.points() {
        if region.idx(p).is_none() {
            return Err(Error::invalid(format!("window vertex {p:?} outside the region")));
        }
        let value = profile
            .value(box_of(p, scales.k, dim))
            .ok_or_else(|| Error::Invariant("window box missing from profile".to_string()))?;
        total += value * cell;
    }
    Ok(total)
}
