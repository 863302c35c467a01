//! Euler-angle and axis-angle rotation kernel.
//!
//! Orientations are Euler triples `(alpha, beta, gamma)` realized as the
//! extrinsic x-y-z composition `R = Rz(gamma) * Ry(beta) * Rx(alpha)`. The
//! camera looks along the fixed world axis `(0, 0, 1)`, so a change in
//! `gamma` alone is an in-plane image rotation.
//!
//! Canonical ranges are `alpha, gamma in [-pi, pi)` and
//! `beta in [-pi/2, pi/2)`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Name of the fixed Euler convention, recorded in every config and output.
pub const CONVENTION: &str = "extrinsic-xyz";

/// Default camera axis.
pub const CAMERA_AXIS: [f64; 3] = [0.0, 0.0, 1.0];

/// Below this angle the rotation axis is undefined and reported as `(0, 0, 1)`.
pub const EPS_AXIS: f64 = 1e-8;

/// Angles closer than this to pi take their axis from the symmetric part.
const NEAR_PI_BAND: f64 = 0.5;

const ORTHO_TOL: f64 = 1e-9;

/// Largest representable beta strictly below pi/2.
const BETA_MAX: f64 = f64::from_bits(FRAC_PI_2.to_bits() - 1);

pub type Mat3 = [[f64; 3]; 3];
pub type Vec3 = [f64; 3];

/// An Euler-angle orientation in canonical ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Orientation {
    alpha: f64,
    beta: f64,
    gamma: f64,
}

impl Orientation {
    pub const IDENTITY: Orientation = Orientation {
        alpha: 0.0,
        beta: 0.0,
        gamma: 0.0,
    };

    /// Builds an orientation from raw radians, wrapping into canonical ranges.
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        wrap([alpha, beta, gamma])
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.alpha, self.beta, self.gamma]
    }

    pub fn to_matrix(&self) -> RotationMatrix {
        euler_to_matrix(self)
    }
}

impl<'de> Deserialize<'de> for Orientation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            alpha: f64,
            beta: f64,
            gamma: f64,
        }
        let raw = Raw::deserialize(d)?;
        Orientation::new(raw.alpha, raw.beta, raw.gamma).map_err(serde::de::Error::custom)
    }
}

fn in_half_open(x: f64, lo: f64, hi: f64) -> bool {
    x >= lo && x < hi
}

/// Wraps a single periodic angle into `[-pi, pi)`.
pub fn wrap_angle(x: f64) -> f64 {
    if in_half_open(x, -PI, PI) {
        return x;
    }
    let y = (x + PI).rem_euclid(TAU) - PI;
    if y >= PI {
        y - TAU
    } else if y < -PI {
        -PI
    } else {
        y
    }
}

/// Maps a raw Euler triple into canonical ranges without changing the rotation
/// it denotes.
///
/// A beta outside `[-pi/2, pi/2)` is folded with the identity
/// `(a, b, g) ~ (a + pi, pi - b, g + pi)`. The single gimbal-lock value
/// `beta = pi/2` is moved to the nearest float below it.
pub fn wrap(raw: [f64; 3]) -> Result<Orientation> {
    let [a, b, g] = raw;
    if !(a.is_finite() && b.is_finite() && g.is_finite()) {
        return Err(Error::invalid(format!(
            "orientation must be finite, got ({a}, {b}, {g})"
        )));
    }
    let (mut a, mut b, mut g) = (a, wrap_angle(b), g);
    if b >= FRAC_PI_2 {
        a += PI;
        b = PI - b;
        g += PI;
    } else if b < -FRAC_PI_2 {
        a += PI;
        b = -PI - b;
        g += PI;
    }
    if b >= FRAC_PI_2 {
        b = BETA_MAX;
    }
    Ok(Orientation {
        alpha: wrap_angle(a),
        beta: b,
        gamma: wrap_angle(g),
    })
}

/// A proper orthonormal 3x3 matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Mat3);

impl RotationMatrix {
    pub const IDENTITY: RotationMatrix = RotationMatrix([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    /// Validates orthonormality and a positive unit determinant.
    pub fn from_rows(rows: Mat3) -> Result<Self> {
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("rotation matrix has non-finite entries"));
        }
        let gram = mat_mul(&transpose(&rows), &rows);
        for (i, row) in gram.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let expected = if i == j { 1.0 } else { 0.0 };
                if (v - expected).abs() > ORTHO_TOL {
                    return Err(Error::invalid(format!(
                        "matrix is not orthonormal: (R^T R)[{i}][{j}] = {v}"
                    )));
                }
            }
        }
        let det = determinant(&rows);
        if (det - 1.0).abs() > ORTHO_TOL {
            return Err(Error::invalid(format!("matrix is not a proper rotation: det = {det}")));
        }
        Ok(RotationMatrix(rows))
    }

    pub fn rows(&self) -> &Mat3 {
        &self.0
    }

    pub fn transpose(&self) -> RotationMatrix {
        RotationMatrix(transpose(&self.0))
    }

    pub fn compose(&self, rhs: &RotationMatrix) -> RotationMatrix {
        RotationMatrix(mat_mul(&self.0, &rhs.0))
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        let m = &self.0;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    /// Frobenius norm of the difference.
    pub fn distance(&self, other: &RotationMatrix) -> f64 {
        frobenius_distance(&self.0, &other.0)
    }

    pub fn to_axis_angle(&self) -> AxisAngle {
        axis_angle_of(&self.0)
    }
}

/// Unit axis and rotation angle in `[0, pi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisAngle {
    pub axis: Vec3,
    pub angle: f64,
}

impl AxisAngle {
    /// True when the angle is too small for the axis to carry information.
    pub fn axis_is_arbitrary(&self) -> bool {
        self.angle < EPS_AXIS
    }

    /// Rodrigues' formula.
    pub fn to_matrix(&self) -> RotationMatrix {
        let [x, y, z] = self.axis;
        let (s, c) = self.angle.sin_cos();
        let k: Mat3 = [[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]];
        let k2 = mat_mul(&k, &k);
        let mut r = RotationMatrix::IDENTITY.0;
        for i in 0..3 {
            for j in 0..3 {
                r[i][j] += s * k[i][j] + (1.0 - c) * k2[i][j];
            }
        }
        RotationMatrix(r)
    }
}

pub fn rot_x(t: f64) -> RotationMatrix {
    let (s, c) = t.sin_cos();
    RotationMatrix([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
}

pub fn rot_y(t: f64) -> RotationMatrix {
    let (s, c) = t.sin_cos();
    RotationMatrix([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
}

pub fn rot_z(t: f64) -> RotationMatrix {
    let (s, c) = t.sin_cos();
    RotationMatrix([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
}

/// `Rz(gamma) * Ry(beta) * Rx(alpha)`, expanded in closed form.
pub fn euler_to_matrix(theta: &Orientation) -> RotationMatrix {
    let (sa, ca) = theta.alpha.sin_cos();
    let (sb, cb) = theta.beta.sin_cos();
    let (sg, cg) = theta.gamma.sin_cos();
    RotationMatrix([
        [cg * cb, cg * sb * sa - sg * ca, cg * sb * ca + sg * sa],
        [sg * cb, sg * sb * sa + cg * ca, sg * sb * ca - cg * sa],
        [-sb, cb * sa, cb * ca],
    ])
}

/// Axis-angle decomposition of a validated rotation matrix.
pub fn matrix_to_axis_angle(rows: &Mat3) -> Result<AxisAngle> {
    Ok(RotationMatrix::from_rows(*rows)?.to_axis_angle())
}

fn axis_angle_of(m: &Mat3) -> AxisAngle {
    // Skew part: 2 sin(phi) * axis.
    let skew = [m[2][1] - m[1][2], m[0][2] - m[2][0], m[1][0] - m[0][1]];
    let cos_phi = ((m[0][0] + m[1][1] + m[2][2] - 1.0) / 2.0).clamp(-1.0, 1.0);
    let sin_phi = (norm(&skew) / 2.0).min(1.0);
    let angle = sin_phi.atan2(cos_phi);

    if angle < EPS_AXIS {
        return AxisAngle {
            axis: CAMERA_AXIS,
            angle,
        };
    }
    if angle < PI - NEAR_PI_BAND {
        return AxisAngle {
            axis: scale(&skew, 1.0 / norm(&skew)),
            angle,
        };
    }

    // Symmetric part: (R + R^T)/2 - cos(phi) I = (1 - cos(phi)) e e^T.
    // Pivot on the largest diagonal entry.
    let one_minus_cos = 1.0 - cos_phi;
    let mut b = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            b[i][j] = (m[i][j] + m[j][i]) / 2.0;
        }
        b[i][i] -= cos_phi;
    }
    let pivot = (0..3).max_by(|&i, &j| b[i][i].total_cmp(&b[j][j])).unwrap_or(0);
    let col = [b[0][pivot], b[1][pivot], b[2][pivot]];
    let mut axis = scale(&col, 1.0 / norm(&col));
    // e e^T fixes the axis up to sign; the skew part picks it.
    if dot(&axis, &skew) < 0.0 {
        axis = scale(&axis, -1.0);
    }
    debug_assert!(one_minus_cos > 0.0);
    AxisAngle { axis, angle }
}

/// Rotation carrying the seed pose onto the query pose, in world frame:
/// `R(theta) * R(theta_s)^T`.
pub fn axis_angle_between(theta: &Orientation, theta_s: &Orientation) -> AxisAngle {
    euler_to_matrix(theta)
        .compose(&euler_to_matrix(theta_s).transpose())
        .to_axis_angle()
}

pub(crate) fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

pub(crate) fn transpose(a: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in a.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            out[j][i] = *v;
        }
    }
    out
}

fn determinant(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

pub(crate) fn frobenius_distance(a: &Mat3, b: &Mat3) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm(a: &Vec3) -> f64 {
    dot(a, a).sqrt()
}

fn scale(a: &Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn orientation() -> impl Strategy<Value = Orientation> {
        (-PI..PI, -FRAC_PI_2..FRAC_PI_2, -PI..PI).prop_map(|(a, b, g)| Orientation::new(a, b, g).unwrap())
    }

    fn assert_mat_close(a: &RotationMatrix, b: &RotationMatrix, tol: f64) {
        let d = a.distance(b);
        assert!(d <= tol, "matrices differ by {d}: {a:?} vs {b:?}");
    }

    #[test]
    fn zero_euler_is_identity() {
        assert_mat_close(&euler_to_matrix(&Orientation::IDENTITY), &RotationMatrix::IDENTITY, 0.0);
    }

    #[test]
    fn quarter_gamma_sends_x_to_y() {
        let r = euler_to_matrix(&Orientation::new(0.0, 0.0, FRAC_PI_2).unwrap());
        let col = r.apply(&[1.0, 0.0, 0.0]);
        assert_abs_diff_eq!(col[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(col[1], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(col[2], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn closed_form_matches_single_axis_product() {
        let theta = Orientation::new(0.3, -0.2, 1.1).unwrap();
        let oracle = rot_z(1.1).compose(&rot_y(-0.2)).compose(&rot_x(0.3));
        assert_mat_close(&euler_to_matrix(&theta), &oracle, 1e-15);
    }

    #[test]
    fn non_finite_orientation_rejected() {
        assert!(matches!(
            Orientation::new(f64::NAN, 0.0, 0.0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(Orientation::new(0.0, f64::INFINITY, 0.0).is_err());
    }

    #[test]
    fn wrap_examples() {
        let w = wrap([3.0 * PI, 0.0, 0.0]).unwrap();
        assert_eq!(w.alpha(), -PI);
        let w = wrap([0.1, 0.2, -0.3]).unwrap();
        assert_eq!(w.as_array(), [0.1, 0.2, -0.3]);
        let w = wrap([TAU + 0.5, 0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(w.alpha(), 0.5, epsilon = 1e-15);
        assert_eq!(wrap([PI, 0.0, 0.0]).unwrap().alpha(), -PI);
    }

    #[test]
    fn beta_fold_preserves_rotation() {
        for raw in [
            [0.4, 2.0, -1.0],
            [-2.5, -1.9, 3.0],
            [1.0, 4.0, 0.2],
            [0.0, FRAC_PI_2, 0.0],
        ] {
            let w = wrap(raw).unwrap();
            assert!(in_half_open(w.beta(), -FRAC_PI_2, FRAC_PI_2), "{w:?}");
            let oracle = rot_z(raw[2]).compose(&rot_y(raw[1])).compose(&rot_x(raw[0]));
            assert_mat_close(&euler_to_matrix(&w), &oracle, 1e-12);
        }
    }

    #[test]
    fn identity_decomposes_to_zero_angle() {
        let aa = RotationMatrix::IDENTITY.to_axis_angle();
        assert_eq!(aa.angle, 0.0);
        assert_eq!(aa.axis, [0.0, 0.0, 1.0]);
        assert!(aa.axis_is_arbitrary());
    }

    #[test]
    fn quarter_z_decomposes() {
        let aa = rot_z(FRAC_PI_2).to_axis_angle();
        assert_abs_diff_eq!(aa.angle, FRAC_PI_2, epsilon = 1e-15);
        assert_abs_diff_eq!(aa.axis[2], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn half_turn_axis_from_symmetric_part() {
        let axis = {
            let v = [1.0, -2.0, 0.5];
            scale(&v, 1.0 / norm(&v))
        };
        for angle in [PI, PI - 1e-7, PI - 0.3] {
            let r = AxisAngle { axis, angle }.to_matrix();
            let back = r.to_axis_angle();
            assert_abs_diff_eq!(back.angle, angle, epsilon = 1e-9);
            assert_mat_close(&back.to_matrix(), &r, 1e-12);
        }
    }

    #[test]
    fn non_orthonormal_rejected() {
        let skewed = [[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(matches!(matrix_to_axis_angle(&skewed), Err(Error::InvalidArgument(_))));
        let reflection = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]];
        assert!(matrix_to_axis_angle(&reflection).is_err());
    }

    #[test]
    fn pure_gamma_difference_is_about_camera_axis() {
        let seed = Orientation::new(0.0, 0.0, 0.4).unwrap();
        let theta = Orientation::new(0.0, 0.0, 0.4 - 0.9).unwrap();
        let aa = axis_angle_between(&theta, &seed);
        assert_abs_diff_eq!(aa.angle, 0.9, epsilon = 1e-12);
        assert_abs_diff_eq!(aa.axis[2].abs(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn relative_angle_matches_trace_oracle() {
        let a = Orientation::new(0.7, -0.4, 2.2).unwrap();
        let b = Orientation::new(-1.3, 0.9, -0.6).unwrap();
        let rel = mat_mul(euler_to_matrix(&a).rows(), &transpose(euler_to_matrix(&b).rows()));
        let oracle = ((rel[0][0] + rel[1][1] + rel[2][2] - 1.0) / 2.0)
            .clamp(-1.0, 1.0)
            .acos();
        assert_abs_diff_eq!(axis_angle_between(&a, &b).angle, oracle, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn wrap_is_idempotent(a in -50.0..50.0f64, b in -50.0..50.0f64, g in -50.0..50.0f64) {
            let once = wrap([a, b, g]).unwrap();
            let twice = wrap(once.as_array()).unwrap();
            prop_assert_eq!(once, twice);
            prop_assert!(in_half_open(once.alpha(), -PI, PI));
            prop_assert!(in_half_open(once.beta(), -FRAC_PI_2, FRAC_PI_2));
            prop_assert!(in_half_open(once.gamma(), -PI, PI));
        }

        #[test]
        fn self_relative_angle_is_zero(t in orientation()) {
            prop_assert!(axis_angle_between(&t, &t).angle < 1e-12);
        }

        #[test]
        fn relative_angle_is_symmetric(a in orientation(), b in orientation()) {
            let ab = axis_angle_between(&a, &b).angle;
            let ba = axis_angle_between(&b, &a).angle;
            prop_assert!((ab - ba).abs() <= 1e-10);
        }

        #[test]
        fn composition_with_inverse_is_identity(t in orientation()) {
            let r = euler_to_matrix(&t);
            prop_assert!(r.compose(&r.transpose()).distance(&RotationMatrix::IDENTITY) <= 1e-10);
        }

        #[test]
        fn rodrigues_round_trip(t in orientation()) {
            let r = euler_to_matrix(&t);
            let aa = r.to_axis_angle();
            prop_assert!((0.0..=PI).contains(&aa.angle));
            prop_assert!((norm(&aa.axis) - 1.0).abs() <= 1e-12);
            prop_assert!(aa.to_matrix().distance(&r) <= 1e-9);
        }
    }
}
