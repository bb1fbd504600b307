use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use super::EvalError;

/// Relative eigenvalue below which a neighborhood counts as rank deficient.
const RANK_TOL: f64 = 1e-10;

/// Indices of the `k` points nearest to `cloud[i]`, itself included. Ties
/// resolve to the lower index.
pub(crate) fn knn(cloud: &[Vector3<f64>], i: usize, k: usize) -> Vec<usize> {
    let p = cloud[i];
    let mut d: Vec<(f64, usize)> = cloud.iter().enumerate().map(|(j, q)| ((q - p).norm_squared(), j)).collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < d.len() {
        d.select_nth_unstable_by(k - 1, cmp);
        d.truncate(k);
    }
    d.sort_by(cmp);
    d.into_iter().map(|(_, j)| j).collect()
}

fn plane_normal(points: &[Vector3<f64>]) -> Option<Vector3<f64>> {
    let n = points.len() as f64;
    let mean = points.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov / n);
    let mut order = [0usize, 1, 2];
    order.sort_by(|a, b| eig.eigenvalues[*a].total_cmp(&eig.eigenvalues[*b]));
    let (small, mid, large) = (order[0], order[1], order[2]);
    if !(eig.eigenvalues[large] > 0.0) || eig.eigenvalues[mid] <= RANK_TOL * eig.eigenvalues[large] {
        return None;
    }
    Some(eig.eigenvectors.column(small).normalize())
}

/// Unit normals from least-squares planes through each point's `k` nearest
/// neighbors, oriented away from the cloud centroid. `None` marks a
/// neighborhood that does not span a plane.
///
/// When a normal is perpendicular to the centroid direction the sign is
/// chosen so that its largest component is positive.
pub fn estimate_normals(cloud: &[[f64; 3]], k: usize) -> Result<Vec<Option<Vector3<f64>>>, EvalError> {
    if k < 3 || cloud.len() <= k {
        return Err(EvalError::Task(format!(
            "normal estimation needs k >= 3 and more than k points (k = {k}, {} points)",
            cloud.len()
        )));
    }
    let pts: Vec<Vector3<f64>> = cloud.iter().map(|p| Vector3::from(*p)).collect();
    if pts.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(EvalError::Task("cloud has non-finite points".into()));
    }
    let centroid = pts.iter().sum::<Vector3<f64>>() / pts.len() as f64;
    Ok((0..pts.len())
        .map(|i| {
            let hood: Vec<Vector3<f64>> = knn(&pts, i, k).into_iter().map(|j| pts[j]).collect();
            plane_normal(&hood).map(|n| {
                let out = pts[i] - centroid;
                let s = n.dot(&out);
                let flip = if s.abs() > 1e-12 * out.norm() {
                    s < 0.0
                } else {
                    n[n.iamax()] < 0.0
                };
                if flip {
                    -n
                } else {
                    n
                }
            })
        })
        .collect())
}
