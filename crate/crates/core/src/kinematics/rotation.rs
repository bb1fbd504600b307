//! Rotation representations: the continuous 6D form (first two columns of a
//! rotation matrix), axis-angle, and the XYZ Euler triple used by the
//! virtual root joints.

use nalgebra::{Matrix3, Rotation3, Vector3};

use super::KinematicsError;

/// Minimum angle between the two 6D columns before the representation is
/// considered degenerate.
pub const MIN_COLUMN_ANGLE: f64 = 1e-8;

fn split(r: &[f64; 6]) -> (Vector3<f64>, Vector3<f64>) {
    (
        Vector3::new(r[0], r[1], r[2]),
        Vector3::new(r[3], r[4], r[5]),
    )
}

fn check_non_degenerate(a1: &Vector3<f64>, a2: &Vector3<f64>) -> Result<(), KinematicsError> {
    let n1 = a1.norm();
    let n2 = a2.norm();
    if !(n1.is_finite() && n2.is_finite()) || n1 == 0.0 || n2 == 0.0 {
        return Err(KinematicsError::DegenerateRotation);
    }
    let sin = a1.cross(a2).norm() / (n1 * n2);
    if sin < MIN_COLUMN_ANGLE.sin() {
        return Err(KinematicsError::DegenerateRotation);
    }
    Ok(())
}

/// Gram-Schmidt orthonormalization anchored on the first column.
pub fn rot6d_to_matrix(r: &[f64; 6]) -> Result<Matrix3<f64>, KinematicsError> {
    let (a1, a2) = split(r);
    check_non_degenerate(&a1, &a2)?;
    let b1 = a1.normalize();
    let b2 = (a2 - b1 * b1.dot(&a2)).normalize();
    let b3 = b1.cross(&b2);
    Ok(Matrix3::from_columns(&[b1, b2, b3]))
}

pub fn matrix_to_rot6d(m: &Matrix3<f64>) -> [f64; 6] {
    [
        m[(0, 0)],
        m[(1, 0)],
        m[(2, 0)],
        m[(0, 1)],
        m[(1, 1)],
        m[(2, 1)],
    ]
}

/// Derivatives of [`rot6d_to_matrix`] with respect to each of the six inputs.
pub fn rot6d_matrix_derivatives(r: &[f64; 6]) -> Result<[Matrix3<f64>; 6], KinematicsError> {
    let (a1, a2) = split(r);
    check_non_degenerate(&a1, &a2)?;
    let n1 = a1.norm();
    let b1 = a1 / n1;
    let proj1 = (Matrix3::identity() - b1 * b1.transpose()) / n1;
    let u2 = a2 - b1 * b1.dot(&a2);
    let n2 = u2.norm();
    let b2 = u2 / n2;
    let proj2 = (Matrix3::identity() - b2 * b2.transpose()) / n2;

    let mut out = [Matrix3::zeros(); 6];
    for (k, slot) in out.iter_mut().enumerate() {
        let mut da1 = Vector3::zeros();
        let mut da2 = Vector3::zeros();
        if k < 3 {
            da1[k] = 1.0;
        } else {
            da2[k - 3] = 1.0;
        }
        let db1 = proj1 * da1;
        let du2 = da2 - db1 * b1.dot(&a2) - b1 * (db1.dot(&a2) + b1.dot(&da2));
        let db2 = proj2 * du2;
        let db3 = db1.cross(&b2) + b1.cross(&db2);
        *slot = Matrix3::from_columns(&[db1, db2, db3]);
    }
    Ok(out)
}

pub fn axis_angle_to_matrix(aa: &Vector3<f64>) -> Matrix3<f64> {
    Rotation3::from_scaled_axis(*aa).into_inner()
}

pub fn matrix_to_axis_angle(m: &Matrix3<f64>) -> Vector3<f64> {
    Rotation3::from_matrix_unchecked(*m).scaled_axis()
}

pub fn axis_angle_to_rot6d(aa: &Vector3<f64>) -> [f64; 6] {
    matrix_to_rot6d(&axis_angle_to_matrix(aa))
}

pub fn rot6d_to_axis_angle(r: &[f64; 6]) -> Result<Vector3<f64>, KinematicsError> {
    Ok(matrix_to_axis_angle(&rot6d_to_matrix(r)?))
}

pub fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// `Rx(a) * Ry(b) * Rz(c)`, the composite of the three virtual root joints.
pub fn euler_xyz_to_matrix(e: &Vector3<f64>) -> Matrix3<f64> {
    rot_x(e[0]) * rot_y(e[1]) * rot_z(e[2])
}

/// Inverse of [`euler_xyz_to_matrix`] on the principal branch `b ∈ [-π/2, π/2]`.
pub fn matrix_to_euler_xyz(m: &Matrix3<f64>) -> Vector3<f64> {
    let b = m[(0, 2)].clamp(-1.0, 1.0).asin();
    if m[(0, 2)].abs() < 1.0 - 1e-12 {
        let a = (-m[(1, 2)]).atan2(m[(2, 2)]);
        let c = (-m[(0, 1)]).atan2(m[(0, 0)]);
        Vector3::new(a, b, c)
    } else {
        // gimbal lock: fold everything into the first angle
        let a = m[(1, 0)].atan2(m[(1, 1)]);
        Vector3::new(a, b, 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
        let axis = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let angle = rng.gen_range(0.0..std::f64::consts::PI);
        axis_angle_to_matrix(&(axis.normalize() * angle))
    }

    #[test]
    fn identity_rot6d() {
        let m = rot6d_to_matrix(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(m, Matrix3::identity());
    }

    #[test]
    fn half_turn_about_z() {
        let r = axis_angle_to_rot6d(&Vector3::new(0.0, 0.0, std::f64::consts::PI));
        let m = rot6d_to_matrix(&r).unwrap();
        assert_relative_eq!(
            m,
            Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0)),
            epsilon = 1e-15
        );
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        assert!(matches!(
            rot6d_to_matrix(&[0.0; 6]),
            Err(KinematicsError::DegenerateRotation)
        ));
        assert!(rot6d_to_matrix(&[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]).is_err());
        assert!(rot6d_to_matrix(&[1.0, 0.0, 0.0, 1.0, 1e-10, 0.0]).is_err());
        assert!(rot6d_to_matrix(&[1.0, 0.0, 0.0, 1.0, 1e-6, 0.0]).is_ok());
    }

    #[test]
    fn round_trip_random_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let m = random_rotation(&mut rng);
            let back = rot6d_to_matrix(&matrix_to_rot6d(&m)).unwrap();
            assert!((back - m).norm() <= 1e-12);
        }
    }

    #[test]
    fn normalized_input_round_trips() {
        let r = [0.3, -2.0, 0.5, 1.0, 0.2, -0.7];
        let m = rot6d_to_matrix(&r).unwrap();
        let again = rot6d_to_matrix(&matrix_to_rot6d(&m)).unwrap();
        assert_relative_eq!(m, again, epsilon = 1e-15);
        assert_relative_eq!(m.determinant(), 1.0, epsilon = 1e-14);
        assert_relative_eq!(m.transpose() * m, Matrix3::identity(), epsilon = 1e-14);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let r = [0.3, -2.0, 0.5, 1.0, 0.2, -0.7];
        let d = rot6d_matrix_derivatives(&r).unwrap();
        let h = 1e-6;
        for k in 0..6 {
            let mut rp = r;
            let mut rm = r;
            rp[k] += h;
            rm[k] -= h;
            let fd = (rot6d_to_matrix(&rp).unwrap() - rot6d_to_matrix(&rm).unwrap()) / (2.0 * h);
            assert_relative_eq!(d[k], fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn euler_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let e = Vector3::new(
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-3.0..3.0),
            );
            let m = euler_xyz_to_matrix(&e);
            let back = matrix_to_euler_xyz(&m);
            assert_relative_eq!(euler_xyz_to_matrix(&back), m, epsilon = 1e-12);
        }
    }

    #[test]
    fn axis_angle_round_trip() {
        let aa = Vector3::new(0.2, -0.4, 1.1);
        let back = rot6d_to_axis_angle(&axis_angle_to_rot6d(&aa)).unwrap();
        assert_relative_eq!(aa, back, epsilon = 1e-12);
    }
}
