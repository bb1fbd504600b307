//! Spatial (6-D) vectors in `(angular, linear)` order and the Plücker
//! transforms between link frames.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};

use crate::kinematics::LinkInertial;

pub type SpatialVector = Vector6<f64>;

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn top(v: &SpatialVector) -> Vector3<f64> {
    Vector3::new(v[0], v[1], v[2])
}

fn bottom(v: &SpatialVector) -> Vector3<f64> {
    Vector3::new(v[3], v[4], v[5])
}

fn join(a: &Vector3<f64>, b: &Vector3<f64>) -> SpatialVector {
    SpatialVector::new(a.x, a.y, a.z, b.x, b.y, b.z)
}

/// `v x m` for motion vectors.
pub fn cross_motion(v: &SpatialVector, m: &SpatialVector) -> SpatialVector {
    let (w, u) = (top(v), bottom(v));
    let (mw, mu) = (top(m), bottom(m));
    join(&w.cross(&mw), &(w.cross(&mu) + u.cross(&mw)))
}

/// `v x* f` for force vectors.
pub fn cross_force(v: &SpatialVector, f: &SpatialVector) -> SpatialVector {
    let (w, u) = (top(v), bottom(v));
    let (n, fl) = (top(f), bottom(f));
    join(&(w.cross(&n) + u.cross(&fl)), &w.cross(&fl))
}

/// Motion transform from a parent frame to a child frame whose origin is
/// at `p` and whose axes are `r`, both expressed in the parent frame.
pub fn motion_transform(r: &Matrix3<f64>, p: &Vector3<f64>) -> Matrix6<f64> {
    let rt = r.transpose();
    let mut x = Matrix6::zeros();
    x.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
    x.fixed_view_mut::<3, 3>(3, 3).copy_from(&rt);
    x.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-rt * skew(p)));
    x
}

/// Spatial inertia about the link origin.
pub fn spatial_inertia(li: &LinkInertial) -> Matrix6<f64> {
    let m = li.mass;
    let c = skew(&li.com);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&(li.inertia - m * c * c));
    out.fixed_view_mut::<3, 3>(0, 3).copy_from(&(m * c));
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-m * c));
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&(Matrix3::identity() * m));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transform_composes_like_frames() {
        let r1 = crate::kinematics::rotation::rot_z(0.3);
        let p1 = Vector3::new(0.1, -0.2, 0.3);
        let r2 = crate::kinematics::rotation::rot_x(-0.7);
        let p2 = Vector3::new(0.0, 0.5, 0.1);
        let x12 = motion_transform(&r2, &p2) * motion_transform(&r1, &p1);
        let direct = motion_transform(&(r1 * r2), &(p1 + r1 * p2));
        assert!((x12 - direct).norm() < 1e-14);
    }

    #[test]
    fn inertia_is_symmetric_and_gives_kinetic_energy() {
        let li = LinkInertial {
            mass: 2.0,
            com: Vector3::new(0.1, 0.2, -0.1),
            inertia: Matrix3::from_diagonal(&Vector3::new(0.01, 0.02, 0.03)),
        };
        let i = spatial_inertia(&li);
        assert!((i - i.transpose()).norm() < 1e-15);
        // pure translation: energy is m v^2 / 2
        let v = SpatialVector::new(0.0, 0.0, 0.0, 1.0, 2.0, 3.0);
        assert!((0.5 * v.dot(&(i * v)) - 14.0).abs() < 1e-12);
    }

    #[test]
    fn cross_products_are_dual() {
        let v = SpatialVector::new(0.1, 0.2, 0.3, -0.4, 0.5, 0.6);
        let m = SpatialVector::new(1.0, -1.0, 0.5, 0.2, 0.3, -0.7);
        let f = SpatialVector::new(0.3, 0.1, -0.2, 0.9, -0.5, 0.4);
        // <v x* f, m> = -<f, v x m>
        assert!((cross_force(&v, &f).dot(&m) + f.dot(&cross_motion(&v, &m))).abs() < 1e-14);
    }
}
