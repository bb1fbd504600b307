//! Primitive object shapes and surface point sampling.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Shape {
    Sphere { radius: f64 },
    Box { half_extents: [f64; 3] },
    /// Axis along z.
    Cylinder { radius: f64, half_height: f64 },
}

impl Shape {
    pub fn validate(&self) -> Result<(), String> {
        let ok = match self {
            Shape::Sphere { radius } => *radius > 0.0 && radius.is_finite(),
            Shape::Box { half_extents } => half_extents.iter().all(|h| *h > 0.0 && h.is_finite()),
            Shape::Cylinder { radius, half_height } => [radius, half_height].iter().all(|v| **v > 0.0 && v.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(format!("shape dimensions must be positive: {self:?}"))
        }
    }

    /// Outward unit normal of the surface point closest to `p`.
    pub fn normal_at(&self, p: &Vector3<f64>) -> Vector3<f64> {
        match self {
            Shape::Sphere { .. } => p.normalize(),
            Shape::Box { half_extents } => {
                let mut best = 0;
                let mut gap = f64::INFINITY;
                for a in 0..3 {
                    let g = half_extents[a] - p[a].abs();
                    if g < gap {
                        gap = g;
                        best = a;
                    }
                }
                let mut n = Vector3::zeros();
                n[best] = p[best].signum();
                n
            }
            Shape::Cylinder { radius, half_height } => {
                let radial = Vector3::new(p.x, p.y, 0.0);
                if radius - radial.norm() < half_height - p.z.abs() {
                    radial.normalize()
                } else {
                    Vector3::new(0.0, 0.0, p.z.signum())
                }
            }
        }
    }

    /// Distance from `p` to the surface (negative inside).
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        match self {
            Shape::Sphere { radius } => p.norm() - radius,
            Shape::Box { half_extents } => {
                let h = Vector3::from(*half_extents);
                let q = p.abs() - h;
                q.map(|v| v.max(0.0)).norm() + q.max().min(0.0)
            }
            Shape::Cylinder { radius, half_height } => {
                let (a, b) = (p.xy().norm() - radius, p.z.abs() - half_height);
                a.max(0.0).hypot(b.max(0.0)) + a.max(b).min(0.0)
            }
        }
    }

    /// Largest distance from the center to the surface.
    pub fn bounding_radius(&self) -> f64 {
        match self {
            Shape::Sphere { radius } => *radius,
            Shape::Box { half_extents } => Vector3::from(*half_extents).norm(),
            Shape::Cylinder { radius, half_height } => radius.hypot(*half_height),
        }
    }

    pub fn surface_area(&self) -> f64 {
        use std::f64::consts::PI;
        match self {
            Shape::Sphere { radius } => 4.0 * PI * radius * radius,
            Shape::Box { half_extents: h } => 8.0 * (h[0] * h[1] + h[1] * h[2] + h[0] * h[2]),
            Shape::Cylinder { radius, half_height } => 2.0 * PI * radius * (radius + 2.0 * half_height),
        }
    }

    /// `n` surface points in the object frame. Spheres use a Fibonacci
    /// lattice; boxes and cylinders are sampled uniformly by area with a
    /// seeded rng.
    pub fn sample_surface(&self, n: usize, seed: u64) -> Vec<[f64; 3]> {
        match self {
            Shape::Sphere { radius } => fibonacci_sphere(n, *radius),
            Shape::Box { half_extents } => box_surface(n, half_extents, seed),
            Shape::Cylinder { radius, half_height } => cylinder_surface(n, *radius, *half_height, seed),
        }
    }
}

pub fn fibonacci_sphere(n: usize, radius: f64) -> Vec<[f64; 3]> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            [radius * r * phi.cos(), radius * r * phi.sin(), radius * z]
        })
        .collect()
}

fn box_surface(n: usize, h: &[f64; 3], seed: u64) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // face pairs normal to x, y, z
    let areas = [h[1] * h[2], h[0] * h[2], h[0] * h[1]];
    let total: f64 = areas.iter().sum();
    (0..n)
        .map(|_| {
            let mut pick = rng.gen::<f64>() * total;
            let mut axis = 2;
            for (a, area) in areas.iter().enumerate() {
                if pick < *area {
                    axis = a;
                    break;
                }
                pick -= area;
            }
            let side = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let mut p = [0.0; 3];
            for (d, v) in p.iter_mut().enumerate() {
                *v = if d == axis { side * h[d] } else { rng.gen_range(-h[d]..=h[d]) };
            }
            p
        })
        .collect()
}

fn cylinder_surface(n: usize, r: f64, h: f64, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = 2.0 * h;
    let caps = r;
    (0..n)
        .map(|_| {
            let theta = rng.gen_range(0.0..std::f64::consts::TAU);
            if rng.gen::<f64>() * (side + caps) < side {
                [r * theta.cos(), r * theta.sin(), rng.gen_range(-h..=h)]
            } else {
                let rho = r * rng.gen::<f64>().sqrt();
                let z = if rng.gen::<bool>() { h } else { -h };
                [rho * theta.cos(), rho * theta.sin(), z]
            }
        })
        .collect()
}
