//! Exact 6-DOF rigid-motion arithmetic for camera ego-motion.
//!
//! Coordinate convention (documented because every instruction rendered for a
//! synthesizer depends on it): right-handed camera frame, +x right, +y up,
//! +z forward into the scene. Rotations are applied intrinsically in the
//! order yaw, pitch, roll with these signs:
//!
//! * yaw: about the up axis, positive turns the camera right,
//! * pitch: about the right axis, positive tilts the camera up,
//! * roll: about the forward axis, positive rolls clockwise as seen by the
//!   camera.
//!
//! Translations are in meters, angles in degrees. All identities hold to
//! 1e-9 in double precision.

// Index loops read closer to the matrix math than iterator chains here.
#![allow(clippy::needless_range_loop)]

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for matrix identities (orthonormality, round-trips).
pub const MATRIX_TOLERANCE: f64 = 1e-9;

/// Pitch proximity to ±90° that is treated as gimbal lock.
pub const GIMBAL_LOCK_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Error)]
pub enum GeometryError {
    #[error("non-finite motion field: {0}")]
    InvalidMotion(String),
    #[error("transform violates orthonormality: {0}")]
    InvalidTransform(String),
    /// Pitch within [`GIMBAL_LOCK_EPSILON`] of ±90°. The payload carries the
    /// conventional resolution: roll set to 0 and the residual folded into yaw.
    #[error("gimbal lock at pitch {}°; roll folded into yaw", .resolved.pitch)]
    GimbalLock { resolved: CameraMotion },
}

/// A 6-DOF camera ego-motion: translation in meters, rotation in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraMotion {
    /// Meters along the camera's right axis.
    pub dx: f64,
    /// Meters along the camera's up axis.
    pub dy: f64,
    /// Meters along the camera's forward axis.
    pub dz: f64,
    /// Degrees, positive = turn right.
    pub yaw: f64,
    /// Degrees, positive = tilt up.
    pub pitch: f64,
    /// Degrees, positive = clockwise as seen by the camera.
    pub roll: f64,
}

impl CameraMotion {
    pub const IDENTITY: CameraMotion = CameraMotion {
        dx: 0.0,
        dy: 0.0,
        dz: 0.0,
        yaw: 0.0,
        pitch: 0.0,
        roll: 0.0,
    };

    pub fn new(dx: f64, dy: f64, dz: f64, yaw: f64, pitch: f64, roll: f64) -> Self {
        Self {
            dx,
            dy,
            dz,
            yaw,
            pitch,
            roll,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.dx, self.dy, self.dz, self.yaw, self.pitch, self.roll]
            .iter()
            .all(|v| v.is_finite())
    }

    fn check_finite(&self) -> Result<(), GeometryError> {
        for (name, v) in [
            ("dx", self.dx),
            ("dy", self.dy),
            ("dz", self.dz),
            ("yaw", self.yaw),
            ("pitch", self.pitch),
            ("roll", self.roll),
        ] {
            if !v.is_finite() {
                return Err(GeometryError::InvalidMotion(format!("{name}={v}")));
            }
        }
        Ok(())
    }

    /// Wraps each angle into the half-open interval (-180, 180]. Translations
    /// are unchanged. Idempotent.
    pub fn normalize(&self) -> Result<CameraMotion, GeometryError> {
        self.check_finite()?;
        Ok(CameraMotion {
            dx: self.dx,
            dy: self.dy,
            dz: self.dz,
            yaw: wrap_angle(self.yaw),
            pitch: wrap_angle(self.pitch),
            roll: wrap_angle(self.roll),
        })
    }

    /// Realizes the motion as a rigid transform mapping coordinates in the
    /// moved camera frame back into the starting frame.
    pub fn to_transform(&self) -> Result<PoseTransform, GeometryError> {
        self.check_finite()?;
        let rotation = rotation_from_angles(self.yaw, self.pitch, self.roll);
        Ok(PoseTransform {
            rotation,
            translation: [self.dx, self.dy, self.dz],
        })
    }

    /// First `self`, then `other` in the ego frame reached by `self`.
    pub fn compose(&self, other: &CameraMotion) -> Result<CameraMotion, GeometryError> {
        self.check_finite()?;
        other.check_finite()?;
        let t = self.to_transform()?.matmul(&other.to_transform()?);
        Ok(motion_from_transform_folded(&t))
    }

    /// The motion undoing `self`: `compose(m, invert(m))` is the identity.
    pub fn invert(&self) -> Result<CameraMotion, GeometryError> {
        self.check_finite()?;
        let t = self.to_transform()?.inverse();
        Ok(motion_from_transform_folded(&t))
    }
}

impl Default for CameraMotion {
    fn default() -> Self {
        Self::IDENTITY
    }
}

/// Rigid transform: orthonormal rotation (det +1 within 1e-9) plus a
/// translation in meters. Also used for absolute camera-to-world poses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseTransform {
    /// Row-major 3×3 rotation.
    pub rotation: [[f64; 3]; 3],
    /// Meters.
    pub translation: [f64; 3],
}

impl PoseTransform {
    pub const IDENTITY: PoseTransform = PoseTransform {
        rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        translation: [0.0, 0.0, 0.0],
    };

    /// Builds from a row-major 4×4 homogeneous matrix (bottom row ignored).
    pub fn from_matrix4(m: &[f64; 16]) -> Self {
        PoseTransform {
            rotation: [
                [m[0], m[1], m[2]],
                [m[4], m[5], m[6]],
                [m[8], m[9], m[10]],
            ],
            translation: [m[3], m[7], m[11]],
        }
    }

    pub fn matmul(&self, other: &PoseTransform) -> PoseTransform {
        let mut rotation = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                rotation[i][j] = (0..3).map(|k| self.rotation[i][k] * other.rotation[k][j]).sum();
            }
        }
        PoseTransform {
            rotation,
            translation: add3(&self.apply_rotation(&other.translation), &self.translation),
        }
    }

    pub fn inverse(&self) -> PoseTransform {
        let rt = transpose(&self.rotation);
        let t = mat_vec(&rt, &self.translation);
        PoseTransform {
            rotation: rt,
            translation: [-t[0], -t[1], -t[2]],
        }
    }

    pub fn apply_rotation(&self, v: &[f64; 3]) -> [f64; 3] {
        mat_vec(&self.rotation, v)
    }

    /// Maps a point expressed in the moved frame into the starting frame.
    pub fn apply(&self, p: &[f64; 3]) -> [f64; 3] {
        add3(&self.apply_rotation(p), &self.translation)
    }

    pub fn determinant(&self) -> f64 {
        let r = &self.rotation;
        r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
    }

    /// R·Rᵀ == I and det == +1, both within `tol`.
    pub fn is_orthonormal(&self, tol: f64) -> bool {
        let rt = transpose(&self.rotation);
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| self.rotation[i][k] * rt[k][j]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                if (dot - expect).abs() > tol {
                    return false;
                }
            }
        }
        (self.determinant() - 1.0).abs() <= tol
    }

    /// Recovers the 6-DOF motion, or reports gimbal lock at |pitch| = 90°
    /// with the roll-folded resolution as payload.
    pub fn to_motion(&self) -> Result<CameraMotion, GeometryError> {
        if !self.translation.iter().chain(self.rotation.iter().flatten()).all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidTransform("non-finite entry".into()));
        }
        if !self.is_orthonormal(MATRIX_TOLERANCE) {
            return Err(GeometryError::InvalidTransform(format!(
                "det={:.12}",
                self.determinant()
            )));
        }
        let r = &self.rotation;
        let sp = r[1][2].clamp(-1.0, 1.0);
        let cp = (1.0 - sp * sp).sqrt();
        let [tx, ty, tz] = self.translation;
        if cp < GIMBAL_LOCK_EPSILON.to_radians() {
            // Yaw and roll act about the same axis here; fold into yaw.
            let yaw = if sp > 0.0 {
                f64::atan2(-r[0][1], r[0][0])
            } else {
                f64::atan2(r[0][1], r[0][0])
            };
            let resolved = CameraMotion {
                dx: tx,
                dy: ty,
                dz: tz,
                yaw: wrap_angle(yaw.to_degrees()),
                pitch: if sp > 0.0 { 90.0 } else { -90.0 },
                roll: 0.0,
            };
            return Err(GeometryError::GimbalLock { resolved });
        }
        let pitch = sp.asin().to_degrees();
        let yaw = f64::atan2(r[0][2], r[2][2]).to_degrees();
        let roll = f64::atan2(-r[1][0], r[1][1]).to_degrees();
        Ok(CameraMotion {
            dx: tx + 0.0,
            dy: ty + 0.0,
            dz: tz + 0.0,
            yaw: wrap_angle(yaw),
            pitch: wrap_angle(pitch),
            roll: wrap_angle(roll),
        })
    }
}

impl Default for PoseTransform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

/// Like [`PoseTransform::to_motion`] but silently accepts the gimbal-lock
/// resolution; used by `compose`/`invert`, whose contracts have no error.
pub(crate) fn motion_from_transform_folded(t: &PoseTransform) -> CameraMotion {
    match t.to_motion() {
        Ok(m) => m,
        Err(GeometryError::GimbalLock { resolved }) => resolved,
        // compose/invert only build transforms from finite motions.
        Err(_) => unreachable!("transform built from finite motions"),
    }
}

/// Wraps degrees into (-180, 180]. Non-zero values already in range pass
/// through bit-exact so normalization never perturbs on-grid angles; -0.0
/// maps to +0.0.
pub fn wrap_angle(deg: f64) -> f64 {
    if deg > -180.0 && deg <= 180.0 {
        return deg + 0.0;
    }
    let w = deg.rem_euclid(360.0);
    if w > 180.0 {
        w - 360.0
    } else {
        w
    }
}

/// R = Ry(yaw) · Rx(-pitch) · Rz(-roll) in standard right-hand matrices,
/// which realizes the sign convention in the module docs.
fn rotation_from_angles(yaw_deg: f64, pitch_deg: f64, roll_deg: f64) -> [[f64; 3]; 3] {
    let (sy, cy) = yaw_deg.to_radians().sin_cos();
    let (sp, cp) = pitch_deg.to_radians().sin_cos();
    let (sr, cr) = roll_deg.to_radians().sin_cos();
    // Ry(y) · Rx(-p) · Rz(-r), expanded.
    [
        [
            cy * cr + sy * sp * sr,
            cy * sr - sy * sp * cr,
            sy * cp,
        ],
        [-cp * sr, cp * cr, sp],
        [
            -sy * cr + cy * sp * sr,
            -sy * sr - cy * sp * cr,
            cy * cp,
        ],
    ]
}

fn transpose(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = m[j][i];
        }
    }
    out
}

fn mat_vec(m: &[[f64; 3]; 3], v: &[f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

fn add3(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn assert_motion_close(a: &CameraMotion, b: &CameraMotion, tol: f64) {
        for (name, x, y) in [
            ("dx", a.dx, b.dx),
            ("dy", a.dy, b.dy),
            ("dz", a.dz, b.dz),
            ("yaw", a.yaw, b.yaw),
            ("pitch", a.pitch, b.pitch),
            ("roll", a.roll, b.roll),
        ] {
            // Compare angles on the circle so 180 vs -180 is a zero gap.
            let diff = if matches!(name, "yaw" | "pitch" | "roll") {
                wrap_angle(x - y).abs().min(360.0 - wrap_angle(x - y).abs())
            } else {
                (x - y).abs()
            };
            assert!(diff <= tol, "{name}: {x} vs {y} (diff {diff:e})");
        }
    }

    fn assert_transform_close(a: &PoseTransform, b: &PoseTransform, tol: f64) {
        for i in 0..3 {
            for j in 0..3 {
                assert!(
                    (a.rotation[i][j] - b.rotation[i][j]).abs() <= tol,
                    "rotation[{i}][{j}]"
                );
            }
            assert!((a.translation[i] - b.translation[i]).abs() <= tol, "t[{i}]");
        }
    }

    /// Independent axis-angle (Rodrigues) rotation, used only as an oracle.
    fn axis_angle(axis: [f64; 3], deg: f64) -> [[f64; 3]; 3] {
        let th = deg.to_radians();
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        let (x, y, z) = (axis[0] / n, axis[1] / n, axis[2] / n);
        let (s, c) = th.sin_cos();
        let v = 1.0 - c;
        [
            [c + x * x * v, x * y * v - z * s, x * z * v + y * s],
            [y * x * v + z * s, c + y * y * v, y * z * v - x * s],
            [z * x * v - y * s, z * y * v + x * s, c + z * z * v],
        ]
    }

    fn seeded_motion(rng: &mut ChaCha8Rng) -> CameraMotion {
        CameraMotion {
            dx: rng.random_range(-10.0..10.0),
            dy: rng.random_range(-10.0..10.0),
            dz: rng.random_range(-10.0..10.0),
            yaw: rng.random_range(-179.0..179.0),
            // Stay clear of the gimbal-lock band.
            pitch: rng.random_range(-85.0..85.0),
            roll: rng.random_range(-179.0..179.0),
        }
    }

    #[test]
    fn normalize_wraps_angles() {
        let m = CameraMotion::new(0.0, 0.0, 0.0, 270.0, 0.0, 0.0).normalize().unwrap();
        assert_eq!(m.yaw, -90.0);
        let m = CameraMotion::new(0.0, 0.0, 0.0, -180.0, 0.0, 0.0).normalize().unwrap();
        assert_eq!(m.yaw, 180.0);
        let id = CameraMotion::IDENTITY.normalize().unwrap();
        assert_eq!(id, CameraMotion::IDENTITY);
    }

    #[test]
    fn normalize_is_idempotent() {
        let m = CameraMotion::new(1.0, -2.0, 3.0, 723.4, -271.0, 180.0);
        let once = m.normalize().unwrap();
        let twice = once.normalize().unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn normalize_rejects_non_finite() {
        let m = CameraMotion::new(f64::NAN, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert!(matches!(m.normalize(), Err(GeometryError::InvalidMotion(_))));
        let m = CameraMotion::new(0.0, 0.0, 0.0, f64::INFINITY, 0.0, 0.0);
        assert!(matches!(m.normalize(), Err(GeometryError::InvalidMotion(_))));
    }

    #[test]
    fn identity_round_trip() {
        let t = CameraMotion::IDENTITY.to_transform().unwrap();
        assert_transform_close(&t, &PoseTransform::IDENTITY, 0.0);
        let m = PoseTransform::IDENTITY.to_motion().unwrap();
        assert_eq!(m, CameraMotion::IDENTITY);
    }

    #[test]
    fn yaw_matches_axis_angle_oracle() {
        let t = CameraMotion::new(0.0, 0.0, 0.0, 90.0, 0.0, 0.0).to_transform().unwrap();
        let oracle = axis_angle([0.0, 1.0, 0.0], 90.0);
        for i in 0..3 {
            for j in 0..3 {
                assert!((t.rotation[i][j] - oracle[i][j]).abs() < MATRIX_TOLERANCE);
            }
        }
    }

    #[test]
    fn pitch_tilts_up_and_roll_is_clockwise() {
        // Positive pitch must take the forward axis toward +y.
        let t = CameraMotion::new(0.0, 0.0, 0.0, 0.0, 45.0, 0.0).to_transform().unwrap();
        let fwd = t.apply_rotation(&[0.0, 0.0, 1.0]);
        assert!(fwd[1] > 0.5, "forward axis y-component: {}", fwd[1]);
        // Positive roll must tip the up axis toward +x (clockwise for the camera).
        let t = CameraMotion::new(0.0, 0.0, 0.0, 0.0, 0.0, 30.0).to_transform().unwrap();
        let up = t.apply_rotation(&[0.0, 1.0, 0.0]);
        assert!(up[0] > 0.4, "up axis x-component: {}", up[0]);
    }

    #[test]
    fn pitch_round_trip() {
        let m = CameraMotion::new(0.0, 0.0, 0.0, 0.0, 45.0, 0.0);
        let back = m.to_transform().unwrap().to_motion().unwrap();
        assert_motion_close(&back, &m, MATRIX_TOLERANCE);
    }

    #[test]
    fn mixed_round_trip() {
        let m = CameraMotion::new(1.0, 0.0, 0.0, 30.0, 10.0, -5.0);
        let back = m.to_transform().unwrap().to_motion().unwrap();
        assert_motion_close(&back, &m, MATRIX_TOLERANCE);
    }

    #[test]
    fn gimbal_lock_folds_roll_into_yaw() {
        let m = CameraMotion::new(0.0, 0.0, 0.0, 40.0, 90.0, 10.0);
        let t = m.to_transform().unwrap();
        match t.to_motion() {
            Err(GeometryError::GimbalLock { resolved }) => {
                assert_eq!(resolved.roll, 0.0);
                assert_eq!(resolved.pitch, 90.0);
                // At +90° pitch the matrix depends only on yaw - roll.
                assert!((resolved.yaw - 30.0).abs() < 1e-9, "yaw={}", resolved.yaw);
                let rebuilt = resolved.to_transform().unwrap();
                assert_transform_close(&rebuilt, &t, MATRIX_TOLERANCE);
            }
            other => panic!("expected gimbal lock, got {other:?}"),
        }
    }

    #[test]
    fn to_motion_rejects_non_orthonormal() {
        let mut t = PoseTransform::IDENTITY;
        t.rotation[0][0] = 2.0;
        assert!(matches!(t.to_motion(), Err(GeometryError::InvalidTransform(_))));
    }

    #[test]
    fn compose_with_identity_normalizes() {
        let m = CameraMotion::new(1.0, 2.0, 3.0, 200.0, 0.0, 0.0);
        let c = m.compose(&CameraMotion::IDENTITY).unwrap();
        assert_motion_close(&c, &m.normalize().unwrap(), MATRIX_TOLERANCE);
    }

    #[test]
    fn compose_inverse_rotations_cancel() {
        let a = CameraMotion::new(0.0, 0.0, 0.0, 20.0, 0.0, 0.0);
        let b = CameraMotion::new(0.0, 0.0, 0.0, -20.0, 0.0, 0.0);
        let c = a.compose(&b).unwrap();
        assert_motion_close(&c, &CameraMotion::IDENTITY, MATRIX_TOLERANCE);
    }

    #[test]
    fn compose_moves_along_rotated_axis() {
        // Yaw right 90°, then forward 1 m: ends up 1 m along the original +x.
        let a = CameraMotion::new(0.0, 0.0, 0.0, 90.0, 0.0, 0.0);
        let b = CameraMotion::new(0.0, 0.0, 1.0, 0.0, 0.0, 0.0);
        let c = a.compose(&b).unwrap();
        let oracle = a.to_transform().unwrap().matmul(&b.to_transform().unwrap());
        assert_transform_close(&c.to_transform().unwrap(), &oracle, MATRIX_TOLERANCE);
        assert!((c.dx - 1.0).abs() < MATRIX_TOLERANCE);
        assert!(c.dz.abs() < MATRIX_TOLERANCE);
    }

    #[test]
    fn invert_pure_translation() {
        let m = CameraMotion::new(2.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let inv = m.invert().unwrap();
        assert_motion_close(
            &inv,
            &CameraMotion::new(-2.0, 0.0, 0.0, 0.0, 0.0, 0.0),
            MATRIX_TOLERANCE,
        );
        let id = CameraMotion::IDENTITY.invert().unwrap();
        assert_motion_close(&id, &CameraMotion::IDENTITY, MATRIX_TOLERANCE);
    }

    #[test]
    fn seeded_group_laws() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let m = seeded_motion(&mut rng);
            let id = m.compose(&m.invert().unwrap()).unwrap();
            assert_motion_close(&id, &CameraMotion::IDENTITY, 1e-9);
            let back = m.to_transform().unwrap().to_motion().unwrap();
            assert_motion_close(&back, &m.normalize().unwrap(), 1e-9);
        }
    }

    #[test]
    fn seeded_associativity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let (a, b, c) = (
                seeded_motion(&mut rng),
                seeded_motion(&mut rng),
                seeded_motion(&mut rng),
            );
            let left = a.compose(&b).unwrap().compose(&c).unwrap();
            let right = a.compose(&b.compose(&c).unwrap()).unwrap();
            assert_transform_close(
                &left.to_transform().unwrap(),
                &right.to_transform().unwrap(),
                1e-9,
            );
        }
    }

    #[test]
    fn to_transform_output_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..200 {
            let t = seeded_motion(&mut rng).to_transform().unwrap();
            assert!(t.is_orthonormal(MATRIX_TOLERANCE));
        }
    }
}
