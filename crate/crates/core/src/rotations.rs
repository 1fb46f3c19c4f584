//! Rotations in SO(3), Euler conversion, geodesic distance and the
//! viewpoint × in-plane candidate lattice used for initialization.
//!
//! A [`Rotation`] is stored as a unit quaternion with `w >= 0`, so the double
//! cover never leaks into serialized output. The Euler convention is ZYX,
//! `R = Rz(gamma) * Ry(beta) * Rx(alpha)`: the outermost factor turns about the
//! camera's optical axis, which makes `gamma` the in-plane angle.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{Matrix3, Quaternion, Rotation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Tolerance used when accepting a matrix as a rotation.
const ORTHONORMAL_TOL: f64 = 1e-6;

/// An element of SO(3).
#[derive(Clone, Copy, PartialEq)]
pub struct Rotation {
    q: UnitQuaternion<f64>,
}

impl fmt::Debug for Rotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [w, x, y, z] = self.quaternion();
        write!(f, "Rotation(w: {w:.6}, x: {x:.6}, y: {y:.6}, z: {z:.6})")
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Self {
            q: UnitQuaternion::identity(),
        }
    }

    fn canonical(q: UnitQuaternion<f64>) -> Self {
        let c = q.quaternion().coords;
        // first non-zero of (w, x, y, z) positive
        let lead = [c.w, c.x, c.y, c.z]
            .into_iter()
            .find(|v| *v != 0.0)
            .unwrap_or(1.0);
        let q = if lead < 0.0 {
            UnitQuaternion::new_unchecked(-q.into_inner())
        } else {
            q
        };
        Self { q }
    }

    /// Builds a rotation from a (not necessarily normalized) quaternion `(w, x, y, z)`.
    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let q = Quaternion::new(w, x, y, z);
        let n = q.norm();
        if !n.is_finite() || n < 1e-12 {
            return Err(Error::invalid("quaternion must be finite and non-zero"));
        }
        Ok(Self::canonical(UnitQuaternion::from_quaternion(q)))
    }

    /// Accepts a matrix that is orthonormal with determinant +1 within 1e-6.
    pub fn from_matrix(m: &Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("rotation matrix has non-finite entries"));
        }
        let err = (m.transpose() * m - Matrix3::identity()).abs().max();
        if err > ORTHONORMAL_TOL || (m.determinant() - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::invalid(format!(
                "matrix is not a rotation (orthonormality error {err:.3e}, det {:.6})",
                m.determinant()
            )));
        }
        let r = Rotation3::from_matrix_unchecked(*m);
        Ok(Self::canonical(UnitQuaternion::from_rotation_matrix(&r)))
    }

    /// Row-major 3×3 input.
    pub fn from_row_major(v: &[f64; 9]) -> Result<Self> {
        Self::from_matrix(&Matrix3::from_row_slice(v))
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Result<Self> {
        let n = axis.norm();
        if !n.is_finite() || n < 1e-12 || !angle.is_finite() {
            return Err(Error::invalid("axis must be finite and non-zero"));
        }
        Ok(Self::canonical(UnitQuaternion::from_axis_angle(
            &Unit::new_unchecked(axis / n),
            angle,
        )))
    }

    /// Exponential map of a rotation vector (axis × angle).
    pub fn exp(v: &Vector3<f64>) -> Self {
        Self::canonical(UnitQuaternion::from_scaled_axis(*v))
    }

    /// Rotation vector with angle in `[0, π]`.
    pub fn log(&self) -> Vector3<f64> {
        self.q.scaled_axis()
    }

    pub fn about_x(angle: f64) -> Self {
        Self::exp(&Vector3::new(angle, 0.0, 0.0))
    }

    pub fn about_y(angle: f64) -> Self {
        Self::exp(&Vector3::new(0.0, angle, 0.0))
    }

    pub fn about_z(angle: f64) -> Self {
        Self::exp(&Vector3::new(0.0, 0.0, angle))
    }

    /// `(w, x, y, z)` with `w >= 0`.
    pub fn quaternion(&self) -> [f64; 4] {
        let c = self.q.quaternion();
        [c.w, c.i, c.j, c.k]
    }

    pub fn unit_quaternion(&self) -> &UnitQuaternion<f64> {
        &self.q
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        *self.q.to_rotation_matrix().matrix()
    }

    pub fn row_major(&self) -> [f64; 9] {
        let m = self.matrix();
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    pub fn inverse(&self) -> Self {
        Self::canonical(self.q.inverse())
    }

    /// `self * other`: apply `other` first.
    pub fn compose(&self, other: &Rotation) -> Self {
        Self::canonical(UnitQuaternion::new_normalize(
            self.q.into_inner() * other.q.into_inner(),
        ))
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.q * v
    }

    /// Rotation angle in radians, `[0, π]`.
    pub fn angle(&self) -> f64 {
        geodesic_distance(&Rotation::identity(), self)
    }
}

impl Serialize for Rotation {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.row_major().serialize(serializer)
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RotationRepr {
    Flat(Vec<f64>),
    Nested(Vec<Vec<f64>>),
    Quaternion { quaternion: [f64; 4] },
}

impl<'de> Deserialize<'de> for Rotation {
    /// Accepts a row-major matrix (flat 9 or nested 3×3), a bare `[w, x, y, z]`
    /// quaternion, or `{"quaternion": [w, x, y, z]}`.
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let repr = RotationRepr::deserialize(deserializer)?;
        let r = match repr {
            RotationRepr::Flat(v) if v.len() == 9 => {
                Rotation::from_row_major(&v.try_into().unwrap())
            }
            RotationRepr::Flat(v) if v.len() == 4 => Rotation::from_quaternion(v[0], v[1], v[2], v[3]),
            RotationRepr::Flat(v) => {
                return Err(D::Error::custom(format!(
                    "rotation needs 9 (matrix) or 4 (quaternion) values, got {}",
                    v.len()
                )))
            }
            RotationRepr::Nested(rows) => {
                if rows.len() != 3 || rows.iter().any(|r| r.len() != 3) {
                    return Err(D::Error::custom("nested rotation matrix must be 3x3"));
                }
                let flat: Vec<f64> = rows.into_iter().flatten().collect();
                Rotation::from_row_major(&flat.try_into().unwrap())
            }
            RotationRepr::Quaternion { quaternion: q } => {
                Rotation::from_quaternion(q[0], q[1], q[2], q[3])
            }
        };
        r.map_err(D::Error::custom)
    }
}

/// Angle of `aᵀb` in radians, in `[0, π]`.
///
/// The cosine `(tr(aᵀb) - 1) / 2` is clamped to `[-1, 1]` and paired with the
/// sine from the skew part so that small angles keep full precision.
pub fn geodesic_distance(a: &Rotation, b: &Rotation) -> f64 {
    let m = a.matrix().transpose() * b.matrix();
    let cos = ((m.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let skew = Vector3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    );
    let sin = (skew.norm() / 2.0).min(1.0);
    sin.atan2(cos)
}

/// [`geodesic_distance`] divided by π, i.e. a score in `[0, 1]`.
pub fn normalized_geodesic_distance(a: &Rotation, b: &Rotation) -> f64 {
    geodesic_distance(a, b) / PI
}

/// ZYX Euler angles in radians: `R = Rz(gamma) * Ry(beta) * Rx(alpha)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EulerAngles {
    /// Azimuth-like angle about x.
    pub alpha: f64,
    /// Elevation-like angle about y; gimbal lock at ±π/2.
    pub beta: f64,
    /// In-plane angle about the optical axis z.
    pub gamma: f64,
}

impl EulerAngles {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Self {
        Self { alpha, beta, gamma }
    }

    pub fn to_rotation(&self) -> Rotation {
        Rotation::about_z(self.gamma)
            .compose(&Rotation::about_y(self.beta))
            .compose(&Rotation::about_x(self.alpha))
    }

    pub fn from_rotation(r: &Rotation) -> Self {
        let m = r.matrix();
        let beta = (-m[(2, 0)]).clamp(-1.0, 1.0).asin();
        let alpha = m[(2, 1)].atan2(m[(2, 2)]);
        let gamma = m[(1, 0)].atan2(m[(0, 0)]);
        Self { alpha, beta, gamma }
    }
}

/// Geodesic distance after zeroing the in-plane Euler angle of both rotations.
///
/// Unreliable near gimbal lock (`|beta| -> π/2`), where the split between
/// `alpha` and `gamma` is not unique.
pub fn inplane_omitted_distance(a: &Rotation, b: &Rotation) -> f64 {
    let strip = |r: &Rotation| {
        let e = EulerAngles::from_rotation(r);
        EulerAngles::new(e.alpha, e.beta, 0.0).to_rotation()
    };
    geodesic_distance(&strip(a), &strip(b))
}

/// `exp([delta]×) * p`: a perturbation expressed in the camera frame.
pub fn local_retract(p: &Rotation, delta: &Vector3<f64>) -> Rotation {
    Rotation::exp(delta).compose(p)
}

/// Viewpoint × in-plane lattice size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeSpec {
    /// Number of viewpoints on the sphere.
    pub m: usize,
    /// Number of in-plane angles per viewpoint.
    pub n: usize,
}

impl LatticeSpec {
    pub fn new(m: usize, n: usize) -> Result<Self> {
        let s = Self { m, n };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 {
            return Err(Error::invalid(format!(
                "lattice counts must be positive (m={}, n={})",
                self.m, self.n
            )));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.m * self.n
    }
}

impl Default for LatticeSpec {
    fn default() -> Self {
        Self { m: 200, n: 20 }
    }
}

/// `m` near-uniform unit directions: `z` evenly spaced in `(-1, 1)`, azimuth
/// advancing by the golden angle.
pub fn fibonacci_viewpoints(m: usize) -> Result<Vec<Vector3<f64>>> {
    if m == 0 {
        return Err(Error::invalid("fibonacci lattice needs at least one point"));
    }
    let golden_angle = PI * (3.0 - 5f64.sqrt());
    Ok((0..m)
        .map(|i| {
            let z = 1.0 - (2 * i + 1) as f64 / m as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden_angle * i as f64;
            Vector3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect())
}

/// Rotation that brings the object-frame direction `dir` onto the optical axis
/// `(0, 0, 1)`, with camera-up following world-up `(0, -1, 0)` projected onto
/// the view plane (world-x near the poles). `view_rotation((0,0,1))` is the identity.
pub fn view_rotation(dir: &Vector3<f64>) -> Rotation {
    let z = dir.normalize();
    let world_up = Vector3::new(0.0, -1.0, 0.0);
    let reference = if world_up.dot(&z).abs() > 1.0 - 1e-9 {
        Vector3::new(1.0, 0.0, 0.0)
    } else {
        world_up
    };
    let up = (reference - z * reference.dot(&z)).normalize();
    let y = -up;
    let x = y.cross(&z);
    let m = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    Rotation::canonical(UnitQuaternion::from_rotation_matrix(
        &Rotation3::from_matrix_unchecked(m),
    ))
}

/// `m * n` candidates, viewpoint-major: `Rz(2πk/n) * view_rotation(d_i)`.
pub fn candidate_poses(spec: &LatticeSpec) -> Result<Vec<Rotation>> {
    spec.validate()?;
    let views = fibonacci_viewpoints(spec.m)?;
    let mut out = Vec::with_capacity(spec.total());
    for d in &views {
        let base = view_rotation(d);
        for k in 0..spec.n {
            let gamma = 2.0 * PI * k as f64 / spec.n as f64;
            out.push(Rotation::about_z(gamma).compose(&base));
        }
    }
    Ok(out)
}
