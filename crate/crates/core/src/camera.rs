//! Pinhole camera with a five-coefficient lens distortion model.
//!
//! Distortion is applied on the normalized image plane in three steps:
//!
//! ```text
//! an = (a - cx) / fx,  bn = (b - cy) / fy,  r = sqrt(an² + bn²)
//! dr = 1 + k1·r² + k2·r⁴ + k3·r⁶
//! dt = 2·p1·an + 2·p2·bn
//! an' = an·(dr + dt) + p1·r²,  bn' = bn·(dr + dt) + p2·r²
//! a' = an'·fx + cx,  b' = bn'·fy + cy
//! ```
//!
//! The tangential part is *not* the Brown-Conrady form used by OpenCV: the
//! tangential term `dt` scales the point together with the radial factor and
//! the `p·r²` offsets are added per axis. Everything that generates distorted
//! tasks goes through [`distort_normalized`], so this form is what the
//! lifter is trained and evaluated against.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum depth accepted by [`project`], in millimeters.
pub const DEFAULT_Z_MIN: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = Intrinsics { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    /// 1000×1000 frame, 1000 px focal length, centered principal point.
    pub const fn synthetic_default() -> Self {
        Intrinsics {
            fx: 1000.0,
            fy: 1000.0,
            cx: 500.0,
            cy: 500.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::invalid(format!("non-finite intrinsics {self:?}")));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::invalid(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        Ok(())
    }
}

impl Default for Intrinsics {
    fn default() -> Self {
        Self::synthetic_default()
    }
}

/// Radial (`k1..k3`) and tangential (`p1, p2`) lens coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistortionParams {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub p1: f64,
    pub p2: f64,
}

impl DistortionParams {
    pub const ZERO: DistortionParams = DistortionParams::new(0.0, 0.0, 0.0, 0.0, 0.0);

    pub const fn new(k1: f64, k2: f64, k3: f64, p1: f64, p2: f64) -> Self {
        DistortionParams { k1, k2, k3, p1, p2 }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.k1, self.k2, self.k3, self.p1, self.p2]
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::invalid(format!("non-finite distortion {self:?}")))
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_array().iter().all(|&v| v == 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PixelPoint {
    pub a: f64,
    pub b: f64,
}

impl PixelPoint {
    pub const fn new(a: f64, b: f64) -> Self {
        PixelPoint { a, b }
    }

    fn is_finite(&self) -> bool {
        self.a.is_finite() && self.b.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NormalizedPoint {
    pub an: f64,
    pub bn: f64,
}

impl NormalizedPoint {
    pub const fn new(an: f64, bn: f64) -> Self {
        NormalizedPoint { an, bn }
    }

    pub fn r2(&self) -> f64 {
        self.an * self.an + self.bn * self.bn
    }

    /// Distance from the optical center on the normalized plane.
    pub fn r(&self) -> f64 {
        self.r2().sqrt()
    }

    fn is_finite(&self) -> bool {
        self.an.is_finite() && self.bn.is_finite()
    }
}

pub fn normalize(p: PixelPoint, k: &Intrinsics) -> Result<NormalizedPoint> {
    if !p.is_finite() {
        return Err(Error::invalid(format!("non-finite pixel {p:?}")));
    }
    Ok(NormalizedPoint {
        an: (p.a - k.cx) / k.fx,
        bn: (p.b - k.cy) / k.fy,
    })
}

pub fn distort_normalized(n: NormalizedPoint, d: &DistortionParams) -> Result<NormalizedPoint> {
    if !n.is_finite() {
        return Err(Error::invalid(format!("non-finite normalized point {n:?}")));
    }
    d.validate()?;
    Ok(distort_unchecked(n, d))
}

#[inline]
pub(crate) fn distort_unchecked(n: NormalizedPoint, d: &DistortionParams) -> NormalizedPoint {
    let r2 = n.r2();
    let r4 = r2 * r2;
    let r6 = r4 * r2;
    let dr = 1.0 + d.k1 * r2 + d.k2 * r4 + d.k3 * r6;
    let dt = 2.0 * d.p1 * n.an + 2.0 * d.p2 * n.bn;
    NormalizedPoint {
        an: n.an * (dr + dt) + d.p1 * r2,
        bn: n.bn * (dr + dt) + d.p2 * r2,
    }
}

pub fn unnormalize(n: NormalizedPoint, k: &Intrinsics) -> Result<PixelPoint> {
    if !n.is_finite() {
        return Err(Error::invalid(format!("non-finite normalized point {n:?}")));
    }
    Ok(PixelPoint {
        a: n.an * k.fx + k.cx,
        b: n.bn * k.fy + k.cy,
    })
}

pub fn distort_pixel(p: PixelPoint, k: &Intrinsics, d: &DistortionParams) -> Result<PixelPoint> {
    let n = normalize(p, k)?;
    // Skip the round trip so zero distortion is exactly the identity.
    if *d == DistortionParams::ZERO {
        return Ok(p);
    }
    let nd = distort_normalized(n, d)?;
    unnormalize(nd, k)
}

/// Pinhole projection of a camera-frame point (mm) using [`DEFAULT_Z_MIN`].
pub fn project(j: [f64; 3], k: &Intrinsics) -> Result<PixelPoint> {
    project_with_min(j, k, DEFAULT_Z_MIN)
}

pub fn project_with_min(j: [f64; 3], k: &Intrinsics, z_min: f64) -> Result<PixelPoint> {
    let [x, y, z] = j;
    if !(x.is_finite() && y.is_finite() && z.is_finite()) {
        return Err(Error::invalid(format!("non-finite 3D point {j:?}")));
    }
    if z <= z_min {
        return Err(Error::DegenerateDepth { z, z_min });
    }
    Ok(PixelPoint {
        a: k.fx * x / z + k.cx,
        b: k.fy * y / z + k.cy,
    })
}

/// Recovers the undistorted normalized point that maps onto `q`.
///
/// Damped Newton on the 2-vector residual `distort(n) - q`, started at `q`.
/// The step is halved whenever it fails to reduce the residual norm.
pub fn invert_distortion(
    q: NormalizedPoint,
    d: &DistortionParams,
    tol: f64,
    max_iter: usize,
) -> Result<NormalizedPoint> {
    if !q.is_finite() {
        return Err(Error::invalid(format!("non-finite normalized point {q:?}")));
    }
    d.validate()?;
    let residual_of = |n: NormalizedPoint| {
        let f = distort_unchecked(n, d);
        (f.an - q.an, f.bn - q.bn)
    };
    let norm = |(x, y): (f64, f64)| x.hypot(y);

    let mut n = q;
    let mut res = residual_of(n);
    for _ in 0..max_iter {
        if norm(res) < tol {
            return Ok(n);
        }
        let [[j00, j01], [j10, j11]] = distortion_jacobian(n, d);
        let det = j00 * j11 - j01 * j10;
        if det == 0.0 || !det.is_finite() {
            break;
        }
        let dx = (j11 * res.0 - j01 * res.1) / det;
        let dy = (-j10 * res.0 + j00 * res.1) / det;

        let mut step = 1.0;
        let current = norm(res);
        loop {
            let cand = NormalizedPoint::new(n.an - step * dx, n.bn - step * dy);
            let cand_res = residual_of(cand);
            if norm(cand_res) < current {
                n = cand;
                res = cand_res;
                break;
            }
            step *= 0.5;
            if step < 1e-12 {
                return Err(Error::NoConvergence {
                    iterations: max_iter,
                    residual: current,
                });
            }
        }
    }
    let r = norm(res);
    if r < tol {
        Ok(n)
    } else {
        Err(Error::NoConvergence {
            iterations: max_iter,
            residual: r,
        })
    }
}

/// Jacobian of [`distort_normalized`] with respect to `(an, bn)`.
fn distortion_jacobian(n: NormalizedPoint, d: &DistortionParams) -> [[f64; 2]; 2] {
    let (x, y) = (n.an, n.bn);
    let r2 = n.r2();
    let dr = 1.0 + d.k1 * r2 + d.k2 * r2 * r2 + d.k3 * r2 * r2 * r2;
    let ddr_dr2 = d.k1 + 2.0 * d.k2 * r2 + 3.0 * d.k3 * r2 * r2;
    let dt = 2.0 * d.p1 * x + 2.0 * d.p2 * y;
    let m = dr + dt;
    // d(m)/dx, d(m)/dy
    let dm_dx = ddr_dr2 * 2.0 * x + 2.0 * d.p1;
    let dm_dy = ddr_dr2 * 2.0 * y + 2.0 * d.p2;
    [
        [m + x * dm_dx + d.p1 * 2.0 * x, x * dm_dy + d.p1 * 2.0 * y],
        [y * dm_dx + d.p2 * 2.0 * x, m + y * dm_dy + d.p2 * 2.0 * y],
    ]
}
