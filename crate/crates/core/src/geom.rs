//! Integer lattice points and continuous shapes used for discretization.
//!
//! Points are fixed-size `[i64; 3]` with only the first `dim` coordinates in
//! use; unused coordinates are always zero so points hash and compare cheaply
//! regardless of dimension.

pub const MAX_DIM: usize = 3;

/// Lattice point. Coordinates beyond the active dimension must stay zero.
pub type Pt = [i64; 3];

/// Continuous point in R^d, same fixed-size convention.
pub type Fv = [f64; 3];

pub fn pt2(x: i64, y: i64) -> Pt {
    [x, y, 0]
}

pub fn pt3(x: i64, y: i64, z: i64) -> Pt {
    [x, y, z]
}

pub fn add(a: Pt, b: Pt) -> Pt {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: Pt, b: Pt) -> Pt {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Unit step along `axis`.
pub fn unit(axis: usize) -> Pt {
    let mut p = [0; 3];
    p[axis] = 1;
    p
}

pub fn l1(a: Pt, b: Pt) -> i64 {
    (0..MAX_DIM).map(|k| (a[k] - b[k]).abs()).sum()
}

pub fn linf(a: Pt, b: Pt) -> i64 {
    (0..MAX_DIM).map(|k| (a[k] - b[k]).abs()).max().unwrap()
}

pub fn to_f(p: Pt) -> Fv {
    [p[0] as f64, p[1] as f64, p[2] as f64]
}

pub fn norm2(x: Fv, dim: usize) -> f64 {
    x[..dim].iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dot(a: Fv, b: Fv, dim: usize) -> f64 {
    (0..dim).map(|k| a[k] * b[k]).sum()
}

/// Membership test for the linear cone with apex at the origin, axis e_1 and
/// opening angle `theta`: x_1 >= |x| cos(theta/2). `theta = 2*pi` is all of
/// R^d (the test is vacuous because cos(pi) = -1).
pub fn in_cone(x: Fv, dim: usize, theta: f64) -> bool {
    x[0] >= norm2(x, dim) * (theta / 2.0).cos()
}

/// A continuous region of R^d that can be rasterized into mesoscopic boxes.
///
/// `footprint_inside` decides whether an axis-aligned closed box lies fully
/// inside the shape. The default tests the 2^d corners, which is exact for
/// convex shapes; non-convex shapes must override it.
pub trait ContinuousShape {
    fn dim(&self) -> usize;
    fn contains(&self, x: Fv) -> bool;
    /// Conservative bounding box (lo, hi).
    fn bbox(&self) -> (Fv, Fv);

    fn footprint_inside(&self, lo: Fv, hi: Fv) -> bool {
        let d = self.dim();
        for mask in 0..(1u32 << d) {
            let mut c = [0.0; 3];
            for k in 0..d {
                c[k] = if mask >> k & 1 == 1 { hi[k] } else { lo[k] };
            }
            if !self.contains(c) {
                return false;
            }
        }
        true
    }
}

/// Closed axis-aligned box [lo, hi].
#[derive(Debug, Clone)]
pub struct AxisBox {
    pub dim: usize,
    pub lo: Fv,
    pub hi: Fv,
}

impl AxisBox {
    pub fn centered(dim: usize, half: f64) -> Self {
        AxisBox { dim, lo: [-half; 3], hi: [half; 3] }
    }
}

impl ContinuousShape for AxisBox {
    fn dim(&self) -> usize {
        self.dim
    }
    fn contains(&self, x: Fv) -> bool {
        (0..self.dim).all(|k| self.lo[k] <= x[k] && x[k] <= self.hi[k])
    }
    fn bbox(&self) -> (Fv, Fv) {
        (self.lo, self.hi)
    }
}

/// Closed Euclidean ball.
#[derive(Debug, Clone)]
pub struct Ball {
    pub dim: usize,
    pub center: Fv,
    pub radius: f64,
}

impl ContinuousShape for Ball {
    fn dim(&self) -> usize {
        self.dim
    }
    fn contains(&self, x: Fv) -> bool {
        let mut s = 0.0;
        for k in 0..self.dim {
            let d = x[k] - self.center[k];
            s += d * d;
        }
        s <= self.radius * self.radius
    }
    fn bbox(&self) -> (Fv, Fv) {
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for k in 0..self.dim {
            lo[k] = self.center[k] - self.radius;
            hi[k] = self.center[k] + self.radius;
        }
        (lo, hi)
    }
}

/// A single point; discretizes to the empty region.
#[derive(Debug, Clone)]
pub struct PointShape {
    pub dim: usize,
    pub at: Fv,
}

impl ContinuousShape for PointShape {
    fn dim(&self) -> usize {
        self.dim
    }
    fn contains(&self, x: Fv) -> bool {
        (0..self.dim).all(|k| x[k] == self.at[k])
    }
    fn bbox(&self) -> (Fv, Fv) {
        (self.at, self.at)
    }
}

/// Sector of a ball inside the cone A_theta, volume-normalized so that
/// `Sector{theta, b}` has volume b^d. This is the Wulff shape of an isotropic
/// surface tension restricted to the cone; the radius solves
/// (angular volume coefficient) * R^d = b^d.
#[derive(Debug, Clone)]
pub struct Sector {
    pub dim: usize,
    pub theta: f64,
    pub b: f64,
}

impl Sector {
    pub fn radius(&self) -> f64 {
        let coeff = match self.dim {
            2 => {
                if self.theta >= 2.0 * std::f64::consts::PI {
                    std::f64::consts::PI
                } else {
                    self.theta / 2.0
                }
            }
            3 => {
                // Solid angle 2*pi*(1 - cos(theta/2)), full sphere at theta = 2*pi.
                let omega = if self.theta >= 2.0 * std::f64::consts::PI {
                    4.0 * std::f64::consts::PI
                } else {
                    2.0 * std::f64::consts::PI * (1.0 - (self.theta / 2.0).cos())
                };
                omega / 3.0
            }
            d => panic!("sector only defined for d in {{2,3}}, got {d}"),
        };
        self.b * coeff.powf(-1.0 / self.dim as f64)
    }
}

impl ContinuousShape for Sector {
    fn dim(&self) -> usize {
        self.dim
    }
    fn contains(&self, x: Fv) -> bool {
        norm2(x, self.dim) <= self.radius() && in_cone(x, self.dim, self.theta)
    }
    fn bbox(&self) -> (Fv, Fv) {
        let r = self.radius();
        (
            [-r, -r, if self.dim == 3 { -r } else { 0.0 }],
            [r, r, if self.dim == 3 { r } else { 0.0 }],
        )
    }
}

/// Shape translated by a continuous offset.
pub struct Translate<S> {
    pub inner: S,
    pub by: Fv,
}

impl<S: ContinuousShape> ContinuousShape for Translate<S> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn contains(&self, x: Fv) -> bool {
        let mut y = x;
        for k in 0..self.inner.dim() {
            y[k] -= self.by[k];
        }
        self.inner.contains(y)
    }
    fn bbox(&self) -> (Fv, Fv) {
        let (mut lo, mut hi) = self.inner.bbox();
        for k in 0..self.inner.dim() {
            lo[k] += self.by[k];
            hi[k] += self.by[k];
        }
        (lo, hi)
    }
    fn footprint_inside(&self, lo: Fv, hi: Fv) -> bool {
        let mut l = lo;
        let mut h = hi;
        for k in 0..self.inner.dim() {
            l[k] -= self.by[k];
            h[k] -= self.by[k];
        }
        self.inner.footprint_inside(l, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cone_membership_basic() {
        // Quarter-opening cone around e1.
        let th = std::f64::consts::FRAC_PI_2;
        assert!(in_cone([1.0, 0.0, 0.0], 2, th));
        assert!(!in_cone([0.0, 1.0, 0.0], 2, th));
        // Boundary ray at angle theta/2 is included.
        let a = th / 2.0;
        assert!(in_cone([a.cos(), a.sin(), 0.0], 2, th));
        // Full-space cone accepts everything.
        assert!(in_cone([-5.0, 2.0, 0.0], 2, 2.0 * std::f64::consts::PI));
    }

    #[test]
    fn sector_volume_normalization() {
        // d=2: area of the sector should be b^2.
        let s = Sector { dim: 2, theta: 1.3, b: 2.0 };
        let r = s.radius();
        let area = 0.5 * 1.3 * r * r;
        assert!((area - 4.0).abs() < 1e-12);

        let s3 = Sector { dim: 3, theta: 0.9, b: 1.5 };
        let r3 = s3.radius();
        let omega = 2.0 * std::f64::consts::PI * (1.0 - (0.45f64).cos());
        assert!((omega / 3.0 * r3.powi(3) - 1.5f64.powi(3)).abs() < 1e-12);
    }

    #[test]
    fn corner_footprint_on_ball() {
        let b = Ball { dim: 2, center: [0.0; 3], radius: 1.0 };
        assert!(b.footprint_inside([-0.5, -0.5, 0.0], [0.5, 0.5, 0.0]));
        assert!(!b.footprint_inside([-0.9, -0.9, 0.0], [0.9, 0.9, 0.0]));
    }
}
