//! Finite hypercubic lattice regions, Bernoulli dilution environments,
//! mesoscopic box decompositions, shape discretization and catalyst carving.
//!
//! # Geometry conventions
//!
//! A region is an arbitrary finite set of integer points in dimension 2 or 3.
//! Its edge set contains every nearest-neighbor pair with at least one
//! endpoint inside; edges with exactly one endpoint inside are boundary
//! edges. Edges are enumerated canonically: sorted by the lexicographically
//! smaller endpoint, then by axis (+e1, +e2, +e3). That order is the wire
//! format for snapshots and the key for dilution variables, so an edge keeps
//! its coupling when the region is extended.
//!
//! Mesoscopic boxes follow the half-open convention: the box with index
//! `i in Z^d` and side `K` is `[-K/2, K/2)^d + K i` intersected with the
//! lattice. A continuous shape `S` discretizes to the union of boxes whose
//! macroscopic footprint `K i / N + [-K/(2N), K/(2N)]^d` lies inside `S`.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::io::{Read, Write};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::geom::{add, dot, in_cone, sub, to_f, unit, ContinuousShape, Fv, Pt, Sector, MAX_DIM};
use crate::rng::{purpose, stream, zigzag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn val(self) -> i8 {
        match self {
            Sign::Plus => 1,
            Sign::Minus => -1,
        }
    }

    pub fn of(v: i8) -> Sign {
        if v > 0 {
            Sign::Plus
        } else {
            Sign::Minus
        }
    }
}

/// Boundary rule for one part of the boundary (used by the two-part taxonomy).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PartRule {
    Plus,
    Minus,
    Free,
    /// All boundary vertices of the part are identified into one unpinned
    /// cluster. Meaningful for the random-cluster side only.
    Wired,
}

/// Boundary condition zeta, frozen outside the region.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Bc {
    /// Pretend the boundary is empty: boundary edges drop out of the energy.
    Free,
    Uniform(Sign),
    /// zeta(y) = +1 iff y . normal >= 0, else -1. Ties take plus.
    Interface { normal: Fv },
    /// Inner part = exterior vertices in bounded holes of the region,
    /// outer part = the unbounded exterior component.
    TwoPart { inner: PartRule, outer: PartRule },
    /// Explicit frozen spins per exterior vertex; unlisted vertices act as a
    /// free part. Used for conditioning a sub-region on a host configuration.
    Map(BTreeMap<Pt, Sign>),
}

/// Per-edge boundary class after resolving a `Bc` against a region.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeZeta {
    Interior,
    /// Boundary edge whose outside endpoint carries this frozen spin.
    Spin(Sign),
    /// Boundary edge dropped by a free part.
    Drop,
    /// Boundary edge attached to wired supernode `id`.
    Wired(u8),
}

#[derive(Debug, Clone)]
pub struct ResolvedBc {
    /// Aligned with the region's canonical edge order.
    pub zeta: Vec<EdgeZeta>,
    /// Number of wired supernodes in use (0, 1 or 2).
    pub n_wired: u8,
}

impl ResolvedBc {
    pub fn has_wired(&self) -> bool {
        self.n_wired > 0
    }
}

/// One nearest-neighbor edge `{a, a + e_axis}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    /// Lexicographically smaller endpoint; may lie outside the region.
    pub a: Pt,
    pub axis: u8,
    /// Region index of `a` when inside.
    pub ia: Option<u32>,
    /// Region index of `a + e_axis` when inside.
    pub ib: Option<u32>,
}

impl Edge {
    pub fn b(&self) -> Pt {
        add(self.a, unit(self.axis as usize))
    }

    pub fn is_interior(&self) -> bool {
        self.ia.is_some() && self.ib.is_some()
    }

    /// For a boundary edge: (inside index, outside point).
    pub fn boundary_parts(&self) -> Option<(u32, Pt)> {
        match (self.ia, self.ib) {
            (Some(i), None) => Some((i, self.b())),
            (None, Some(i)) => Some((i, self.a)),
            _ => None,
        }
    }
}

/// Neighbor reference from a vertex along one incident edge.
#[derive(Debug, Clone, Copy)]
pub enum Nbr {
    In(u32),
    Out(Pt),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
pub struct BoxDesc {
    pub lo: Pt,
    pub size: [u64; 3],
}

#[derive(Debug)]
pub struct LatticeRegion {
    dim: usize,
    points: Vec<Pt>,
    index: HashMap<Pt, u32>,
    edges: Vec<Edge>,
    adj: Vec<SmallVec<[(u32, Nbr); 6]>>,
    bbox: (Pt, Pt),
    box_desc: Option<BoxDesc>,
}

impl LatticeRegion {
    /// Region from an explicit point set. Points must be distinct and must
    /// not use coordinates beyond `dim`.
    pub fn from_points(dim: usize, mut points: Vec<Pt>) -> Result<Self> {
        if !(2..=MAX_DIM).contains(&dim) {
            return Err(Error::invalid(format!("dimension {dim} not in 2..=3")));
        }
        for p in &points {
            if p[dim..].iter().any(|&c| c != 0) {
                return Err(Error::invalid(format!(
                    "point {p:?} uses coordinates beyond dimension {dim}"
                )));
            }
        }
        points.sort_unstable();
        points.dedup();
        let index: HashMap<Pt, u32> =
            points.iter().enumerate().map(|(i, &p)| (p, i as u32)).collect();

        let mut edges = Vec::with_capacity(points.len() * dim * 2);
        for (i, &p) in points.iter().enumerate() {
            for axis in 0..dim {
                let b = add(p, unit(axis));
                edges.push(Edge {
                    a: p,
                    axis: axis as u8,
                    ia: Some(i as u32),
                    ib: index.get(&b).copied(),
                });
                let a2 = sub(p, unit(axis));
                if !index.contains_key(&a2) {
                    edges.push(Edge { a: a2, axis: axis as u8, ia: None, ib: Some(i as u32) });
                }
            }
        }
        edges.sort_unstable_by_key(|e| (e.a, e.axis));

        let mut adj: Vec<SmallVec<[(u32, Nbr); 6]>> = vec![SmallVec::new(); points.len()];
        for (ei, e) in edges.iter().enumerate() {
            let (bpt, apt) = (e.b(), e.a);
            if let Some(ia) = e.ia {
                let nbr = match e.ib {
                    Some(ib) => Nbr::In(ib),
                    None => Nbr::Out(bpt),
                };
                adj[ia as usize].push((ei as u32, nbr));
            }
            if let Some(ib) = e.ib {
                let nbr = match e.ia {
                    Some(ia) => Nbr::In(ia),
                    None => Nbr::Out(apt),
                };
                adj[ib as usize].push((ei as u32, nbr));
            }
        }

        let mut lo = [i64::MAX; 3];
        let mut hi = [i64::MIN; 3];
        for p in &points {
            for k in 0..MAX_DIM {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        if points.is_empty() {
            lo = [0; 3];
            hi = [-1; 3];
        }

        Ok(LatticeRegion { dim, points, index, edges, adj, bbox: (lo, hi), box_desc: None })
    }

    /// Axis-aligned box `prod_k [lo_k, lo_k + size_k)`.
    pub fn box_region(dim: usize, lo: Pt, size: [u64; 3]) -> Result<Self> {
        if size[..dim].iter().any(|&s| s == 0) {
            return Err(Error::invalid("box region with zero side".to_string()));
        }
        let mut pts = Vec::new();
        let s = |k: usize| if k < dim { size[k] as i64 } else { 1 };
        for x in lo[0]..lo[0] + s(0) {
            for y in lo[1]..lo[1] + s(1) {
                for z in lo[2]..lo[2] + s(2) {
                    pts.push(if dim == 2 { [x, y, 0] } else { [x, y, z] });
                }
            }
        }
        let mut r = Self::from_points(dim, pts)?;
        r.box_desc = Some(BoxDesc { lo, size: [size[0], size[1], if dim == 3 { size[2] } else { 1 }] });
        Ok(r)
    }

    /// Square/cube of side `side` centered so coordinates run over
    /// `[-side/2, side/2)`, convenient for symmetric experiments.
    pub fn centered_cube(dim: usize, side: u64) -> Result<Self> {
        let half = (side as i64) / 2;
        let lo = if dim == 2 { [-half, -half, 0] } else { [-half; 3] };
        Self::box_region(dim, lo, [side; 3])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Pt] {
        &self.points
    }

    pub fn contains(&self, p: Pt) -> bool {
        self.index.contains_key(&p)
    }

    pub fn idx(&self, p: Pt) -> Option<u32> {
        self.index.get(&p).copied()
    }

    pub fn pt(&self, i: u32) -> Pt {
        self.points[i as usize]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn adj(&self, v: u32) -> &[(u32, Nbr)] {
        &self.adj[v as usize]
    }

    /// Inclusive bounding box of the point set.
    pub fn bounding_box(&self) -> (Pt, Pt) {
        self.bbox
    }

    pub fn box_desc(&self) -> Option<BoxDesc> {
        self.box_desc
    }

    pub fn edge_index(&self, a: Pt, axis: u8) -> Option<u32> {
        self.edges.binary_search_by_key(&(a, axis), |e| (e.a, e.axis)).ok().map(|i| i as u32)
    }

    /// Splits the exterior into the unbounded component (`false`) and bounded
    /// holes (`true`) by flood fill over the bounding box grown by one.
    fn hole_map(&self) -> HashMap<Pt, bool> {
        let (lo, hi) = self.bbox;
        let lo1 = sub(lo, [1, 1, if self.dim == 3 { 1 } else { 0 }]);
        let hi1 = add(hi, [1, 1, if self.dim == 3 { 1 } else { 0 }]);
        let inside_frame = |p: Pt| (0..self.dim).all(|k| lo1[k] <= p[k] && p[k] <= hi1[k]);
        let on_frame_border = |p: Pt| (0..self.dim).any(|k| p[k] == lo1[k] || p[k] == hi1[k]);

        let mut outer: HashMap<Pt, bool> = HashMap::new();
        let mut queue = VecDeque::new();
        // Seed from every frame-border cell outside the region.
        let frame_iter = |k: usize| lo1[k]..=hi1[k];
        for x in frame_iter(0) {
            for y in frame_iter(1) {
                let zr = if self.dim == 3 { lo1[2]..=hi1[2] } else { 0..=0 };
                for z in zr {
                    let p = [x, y, z];
                    if on_frame_border(p) && !self.contains(p) {
                        if outer.insert(p, false).is_none() {
                            queue.push_back(p);
                        }
                    }
                }
            }
        }
        while let Some(p) = queue.pop_front() {
            for axis in 0..self.dim {
                for q in [add(p, unit(axis)), sub(p, unit(axis))] {
                    if inside_frame(q) && !self.contains(q) && !outer.contains_key(&q) {
                        outer.insert(q, false);
                        queue.push_back(q);
                    }
                }
            }
        }
        // Anything else in the frame that is outside the region is a hole.
        let mut holes = outer;
        for x in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                let zr = if self.dim == 3 { lo[2]..=hi[2] } else { 0..=0 };
                for z in zr {
                    let p = [x, y, z];
                    if !self.contains(p) {
                        holes.entry(p).or_insert(true);
                    }
                }
            }
        }
        holes
    }

    /// Resolve a boundary condition into per-edge classes.
    pub fn resolve_bc(&self, bc: &Bc) -> ResolvedBc {
        let mut zeta = vec![EdgeZeta::Interior; self.edges.len()];
        let holes = match bc {
            Bc::TwoPart { .. } => Some(self.hole_map()),
            _ => None,
        };
        let mut used_wired = [false; 2];
        for (ei, e) in self.edges.iter().enumerate() {
            let Some((_, out)) = e.boundary_parts() else { continue };
            zeta[ei] = match bc {
                Bc::Free => EdgeZeta::Drop,
                Bc::Uniform(s) => EdgeZeta::Spin(*s),
                Bc::Interface { normal } => {
                    if dot(to_f(out), *normal, self.dim) >= 0.0 {
                        EdgeZeta::Spin(Sign::Plus)
                    } else {
                        EdgeZeta::Spin(Sign::Minus)
                    }
                }
                Bc::TwoPart { inner, outer } => {
                    let is_hole = holes.as_ref().and_then(|m| m.get(&out)).copied().unwrap_or(false);
                    let (rule, id) = if is_hole { (inner, 0u8) } else { (outer, 1u8) };
                    match rule {
                        PartRule::Plus => EdgeZeta::Spin(Sign::Plus),
                        PartRule::Minus => EdgeZeta::Spin(Sign::Minus),
                        PartRule::Free => EdgeZeta::Drop,
                        PartRule::Wired => {
                            used_wired[id as usize] = true;
                            EdgeZeta::Wired(id)
                        }
                    }
                }
                Bc::Map(m) => match m.get(&out) {
                    Some(s) => EdgeZeta::Spin(*s),
                    None => EdgeZeta::Drop,
                },
            };
        }
        let n_wired = match (used_wired[0], used_wired[1]) {
            (false, false) => 0,
            (true, true) => 2,
            _ => 1,
        };
        // Compact wired ids so a single wired part uses id 0.
        if n_wired == 1 && used_wired[1] {
            for z in zeta.iter_mut() {
                if let EdgeZeta::Wired(id) = z {
                    *id = 0;
                }
            }
        }
        ResolvedBc { zeta, n_wired }
    }

    /// Frozen exterior spin at `y` for boundary conditions that define one.
    pub fn zeta_value(&self, bc: &Bc, y: Pt) -> Option<i8> {
        match bc {
            Bc::Free => None,
            Bc::Uniform(s) => Some(s.val()),
            Bc::Interface { normal } => {
                Some(if dot(to_f(y), *normal, self.dim) >= 0.0 { 1 } else { -1 })
            }
            Bc::TwoPart { inner, outer } => {
                let is_hole = self.hole_map().get(&y).copied().unwrap_or(false);
                match if is_hole { inner } else { outer } {
                    PartRule::Plus => Some(1),
                    PartRule::Minus => Some(-1),
                    PartRule::Free | PartRule::Wired => None,
                }
            }
            Bc::Map(m) => m.get(&y).map(|s| s.val()),
        }
    }
}

/// Field scale plus the derived mesoscopic (`K`) and macroscopic (`N`)
/// lattice scales. `K` always divides `N`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Scales {
    pub h: f64,
    pub k: u64,
    pub n: u64,
}

impl Scales {
    /// Canonical scales for a field `h in (0, 1]`:
    /// `K = floor(h^(-1/(2d)))`, `N = K floor(h^(-1)/K)`.
    pub fn from_h(h: f64, dim: usize) -> Result<Self> {
        if !(h > 0.0 && h <= 1.0) {
            return Err(Error::invalid(format!("field scale h={h} not in (0, 1]")));
        }
        let k = h.powf(-1.0 / (2.0 * dim as f64)).floor() as u64;
        let k = k.max(1);
        let n = k * ((1.0 / h) / k as f64).floor() as u64;
        Scales::explicit(h, k, n)
    }

    pub fn explicit(h: f64, k: u64, n: u64) -> Result<Self> {
        if k == 0 || n == 0 || n % k != 0 {
            return Err(Error::invalid(format!("scales k={k}, n={n}: need k >= 1 and k | n")));
        }
        Ok(Scales { h, k, n })
    }

    /// Lattice points per mesoscopic box.
    pub fn box_volume(&self, dim: usize) -> u64 {
        self.k.pow(dim as u32)
    }

    /// Macroscopic volume of one mesoscopic box, (K/N)^d.
    pub fn box_macro_volume(&self, dim: usize) -> f64 {
        (self.k as f64 / self.n as f64).powi(dim as i32)
    }
}

/// Index of the mesoscopic box containing lattice point `v`.
pub fn box_of(v: Pt, k: u64, dim: usize) -> Pt {
    let k = k as i64;
    let mut i = [0i64; 3];
    for a in 0..dim {
        i[a] = (v[a] + k / 2).div_euclid(k);
    }
    i
}

/// Low lattice corner of box `i`.
pub fn box_lo(i: Pt, k: u64, dim: usize) -> Pt {
    let k = k as i64;
    let mut lo = [0i64; 3];
    for a in 0..dim {
        lo[a] = k * i[a] - k / 2;
    }
    lo
}

/// Union of mesoscopic boxes whose macroscopic footprint lies inside `shape`.
pub fn discretize(shape: &dyn ContinuousShape, scales: &Scales) -> Result<LatticeRegion> {
    let dim = shape.dim();
    if !(2..=MAX_DIM).contains(&dim) {
        return Err(Error::invalid(format!("dimension {dim} not in 2..=3")));
    }
    let (lo, hi) = shape.bbox();
    let n = scales.n as f64;
    let k = scales.k as i64;
    let kf = scales.k as f64;

    let mut pts = Vec::new();
    let lo_i = |a: usize| ((lo[a] * n) / kf).floor() as i64 - 1;
    let hi_i = |a: usize| ((hi[a] * n) / kf).ceil() as i64 + 1;
    let z_range = if dim == 3 { (lo_i(2), hi_i(2)) } else { (0, 0) };
    for ix in lo_i(0)..=hi_i(0) {
        for iy in lo_i(1)..=hi_i(1) {
            for iz in z_range.0..=z_range.1 {
                let i = [ix, iy, iz];
                let mut flo = [0.0; 3];
                let mut fhi = [0.0; 3];
                for a in 0..dim {
                    flo[a] = (kf * i[a] as f64 - kf / 2.0) / n;
                    fhi[a] = (kf * i[a] as f64 + kf / 2.0) / n;
                }
                if shape.footprint_inside(flo, fhi) {
                    let blo = box_lo(i, scales.k, dim);
                    let s = |a: usize| if a < dim { k } else { 1 };
                    for dx in 0..s(0) {
                        for dy in 0..s(1) {
                            for dz in 0..s(2) {
                                pts.push(add(blo, [dx, dy, dz]));
                            }
                        }
                    }
                }
            }
        }
    }
    LatticeRegion::from_points(dim, pts)
}

/// Quenched dilution field over a region's edges. `carved` records the edges
/// forced closed by catalyst conditioning; all other edges are i.i.d.
/// Bernoulli(p) keyed by (seed, edge), so the field is stable under region
/// extension.
#[derive(Debug, Clone)]
pub struct Environment {
    pub region: Arc<LatticeRegion>,
    pub p: f64,
    pub seed: u64,
    j: Vec<u64>,
    carved: Vec<u64>,
    pub carved_count: u64,
}

fn bit_get(words: &[u64], i: usize) -> bool {
    words[i / 64] >> (i % 64) & 1 == 1
}

fn bit_set(words: &mut [u64], i: usize, v: bool) {
    if v {
        words[i / 64] |= 1 << (i % 64);
    } else {
        words[i / 64] &= !(1 << (i % 64));
    }
}

impl Environment {
    pub fn open(&self, e: u32) -> bool {
        bit_get(&self.j, e as usize)
    }

    pub fn is_carved(&self, e: u32) -> bool {
        bit_get(&self.carved, e as usize)
    }

    pub fn open_count(&self) -> u64 {
        self.j.iter().map(|w| w.count_ones() as u64).sum()
    }
}

pub fn gen_environment(region: Arc<LatticeRegion>, p: f64, seed: u64) -> Result<Environment> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::invalid(format!("dilution probability p={p} not in (0, 1]")));
    }
    let words = region.n_edges().div_ceil(64);
    let mut j = vec![0u64; words];
    for (ei, e) in region.edges().iter().enumerate() {
        let mut r = stream(
            seed,
            purpose::EDGE_J,
            &[zigzag(e.a[0]), zigzag(e.a[1]), zigzag(e.a[2]), e.axis as u64],
        );
        if r.gen::<f64>() < p {
            bit_set(&mut j, ei, true);
        }
    }
    Ok(Environment { region, p, seed, j, carved: vec![0u64; words], carved_count: 0 })
}

/// Environment on a sub-region inheriting the parent's couplings edge by
/// edge, including carved edges. Every edge of `sub` (boundary included)
/// must exist in the parent region.
pub fn restrict_environment(parent: &Environment, sub: Arc<LatticeRegion>) -> Result<Environment> {
    let words = sub.n_edges().div_ceil(64);
    let mut j = vec![0u64; words];
    let mut carved = vec![0u64; words];
    let mut carved_count = 0;
    for (ei, e) in sub.edges().iter().enumerate() {
        let Some(pi) = parent.region.edge_index(e.a, e.axis) else {
            return Err(Error::invalid(format!(
                "edge {:?} axis {} of the sub-region is not covered by the parent",
                e.a, e.axis
            )));
        };
        bit_set(&mut j, ei, parent.open(pi));
        if parent.is_carved(pi) {
            bit_set(&mut carved, ei, true);
            carved_count += 1;
        }
    }
    Ok(Environment { region: sub, p: parent.p, seed: parent.seed, j, carved, carved_count })
}

/// Force closed every edge `{x, y}` with `x` in the discretized Wulff sector
/// `W_theta(b_max) + anchor` and `y` outside the cone `A_theta + anchor`
/// (continuous membership at `(y - anchor)/N`). Carving is idempotent.
pub fn carve_catalyst(
    env: &Environment,
    theta: f64,
    b_max: f64,
    anchor: Pt,
    scales: &Scales,
) -> Result<Environment> {
    let dim = env.region.dim();
    if !(theta > 0.0 && theta <= std::f64::consts::PI) {
        return Err(Error::invalid(format!("cone angle theta={theta} not in (0, pi]")));
    }
    if b_max <= 0.0 {
        return Err(Error::invalid(format!("catalyst size b_max={b_max} must be positive")));
    }
    let sector = Sector { dim, theta, b: b_max };
    let wd = discretize(&sector, scales)?;
    let mut wset: HashMap<Pt, ()> = HashMap::with_capacity(wd.len());
    for &p in wd.points() {
        let t = add(p, anchor);
        if !env.region.contains(t) {
            return Err(Error::OutOfBounds(format!(
                "carved catalyst vertex {t:?} falls outside the environment region"
            )));
        }
        wset.insert(t, ());
    }

    let nf = scales.n as f64;
    let outside_cone = |y: Pt| {
        let rel = sub(y, anchor);
        let x = [rel[0] as f64 / nf, rel[1] as f64 / nf, rel[2] as f64 / nf];
        !in_cone(x, dim, theta)
    };

    let mut out = env.clone();
    for (ei, e) in env.region.edges().iter().enumerate() {
        let (a, b) = (e.a, e.b());
        let carve = (wset.contains_key(&a) && outside_cone(b))
            || (wset.contains_key(&b) && outside_cone(a));
        if carve && !bit_get(&out.carved, ei) {
            bit_set(&mut out.carved, ei, true);
            bit_set(&mut out.j, ei, false);
            out.carved_count += 1;
        }
    }
    Ok(out)
}

/// One mesoscopic box intersecting a region.
#[derive(Debug, Clone)]
pub struct MesoBox {
    pub index: Pt,
    pub lo: Pt,
    /// True iff all K^d lattice points of the box belong to the region.
    pub interior: bool,
    /// Region vertex indices inside the box.
    pub verts: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct BoxDecomposition {
    pub k: u64,
    pub dim: usize,
    /// Sorted by box index.
    pub boxes: Vec<MesoBox>,
    /// Region vertex -> ordinal into `boxes`.
    pub vertex_box: Vec<u32>,
}

impl BoxDecomposition {
    pub fn ordinal(&self, index: Pt) -> Option<usize> {
        self.boxes.binary_search_by_key(&index, |b| b.index).ok()
    }
}

pub fn box_decomposition(region: &LatticeRegion, k: u64) -> Result<BoxDecomposition> {
    if k == 0 {
        return Err(Error::invalid("box side k must be >= 1".to_string()));
    }
    let dim = region.dim();
    let mut groups: HashMap<Pt, Vec<u32>> = HashMap::new();
    for (vi, &p) in region.points().iter().enumerate() {
        groups.entry(box_of(p, k, dim)).or_default().push(vi as u32);
    }
    let mut keys: Vec<Pt> = groups.keys().copied().collect();
    keys.sort_unstable();
    let full = k.pow(dim as u32) as usize;
    let mut boxes = Vec::with_capacity(keys.len());
    let mut vertex_box = vec![0u32; region.len()];
    for (ord, &idx) in keys.iter().enumerate() {
        let verts = groups.remove(&idx).unwrap();
        for &v in &verts {
            vertex_box[v as usize] = ord as u32;
        }
        boxes.push(MesoBox { index: idx, lo: box_lo(idx, k, dim), interior: verts.len() == full, verts });
    }
    Ok(BoxDecomposition { k, dim, boxes, vertex_box })
}

const SNAPSHOT_MAGIC: &[u8; 8] = b"DILSNP01";

/// Serialize an environment over an axis-aligned box region.
///
/// Layout: magic, dim (u32), per-axis lo (i64) and size (u64), p (f64),
/// seed (u64), carved count (u64), edge count (u64), then the coupling bitmap
/// and the carved bitmap in canonical edge order, LSB first within each byte.
pub fn write_snapshot(env: &Environment, w: &mut impl Write) -> Result<()> {
    let desc = env.region.box_desc().ok_or_else(|| {
        Error::Unsupported("snapshots require an axis-aligned box region".to_string())
    })?;
    let dim = env.region.dim();
    w.write_all(SNAPSHOT_MAGIC)?;
    w.write_all(&(dim as u32).to_le_bytes())?;
    for a in 0..dim {
        w.write_all(&desc.lo[a].to_le_bytes())?;
        w.write_all(&desc.size[a].to_le_bytes())?;
    }
    w.write_all(&env.p.to_le_bytes())?;
    w.write_all(&env.seed.to_le_bytes())?;
    w.write_all(&env.carved_count.to_le_bytes())?;
    let ne = env.region.n_edges();
    w.write_all(&(ne as u64).to_le_bytes())?;
    for words in [&env.j, &env.carved] {
        let mut bytes = vec![0u8; ne.div_ceil(8)];
        for i in 0..ne {
            if bit_get(words, i) {
                bytes[i / 8] |= 1 << (i % 8);
            }
        }
        w.write_all(&bytes)?;
    }
    Ok(())
}

pub fn snapshot_bytes(env: &Environment) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_snapshot(env, &mut buf)?;
    Ok(buf)
}

pub fn read_snapshot(r: &mut impl Read) -> Result<Environment> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(Error::Format("bad snapshot magic".to_string()));
    }
    let mut u32b = [0u8; 4];
    let mut u64b = [0u8; 8];
    r.read_exact(&mut u32b)?;
    let dim = u32::from_le_bytes(u32b) as usize;
    if !(2..=MAX_DIM).contains(&dim) {
        return Err(Error::Format(format!("snapshot dimension {dim} not in 2..=3")));
    }
    let mut lo = [0i64; 3];
    let mut size = [1u64; 3];
    for a in 0..dim {
        r.read_exact(&mut u64b)?;
        lo[a] = i64::from_le_bytes(u64b);
        r.read_exact(&mut u64b)?;
        size[a] = u64::from_le_bytes(u64b);
    }
    r.read_exact(&mut u64b)?;
    let p = f64::from_le_bytes(u64b);
    r.read_exact(&mut u64b)?;
    let seed = u64::from_le_bytes(u64b);
    r.read_exact(&mut u64b)?;
    let carved_count = u64::from_le_bytes(u64b);
    r.read_exact(&mut u64b)?;
    let ne = u64::from_le_bytes(u64b) as usize;

    let region = Arc::new(LatticeRegion::box_region(dim, lo, size)?);
    if region.n_edges() != ne {
        return Err(Error::Format(format!(
            "snapshot edge count {ne} does not match region ({})",
            region.n_edges()
        )));
    }
    let mut read_bitmap = || -> Result<Vec<u64>> {
        let mut bytes = vec![0u8; ne.div_ceil(8)];
        r.read_exact(&mut bytes)?;
        let mut words = vec![0u64; ne.div_ceil(64)];
        for i in 0..ne {
            if bytes[i / 8] >> (i % 8) & 1 == 1 {
                bit_set(&mut words, i, true);
            }
        }
        Ok(words)
    };
    let j = read_bitmap()?;
    let carved = read_bitmap()?;
    let carved_pop: u64 = carved.iter().map(|w| w.count_ones() as u64).sum();
    if carved_pop != carved_count {
        return Err(Error::Format("carved bitmap does not match header count".to_string()));
    }
    for i in 0..ne {
        if bit_get(&carved, i) && bit_get(&j, i) {
            return Err(Error::Format(format!("carved edge {i} is open")));
        }
    }
    Ok(Environment { region, p, seed, j, carved, carved_count })
}
