//! Small vector helpers, curve interpolation and sphere stamping.

use crate::volume::{BinaryMask, Dims, Grid};

pub type Vec3 = [f64; 3];

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn dist(a: Vec3, b: Vec3) -> f64 {
    norm(sub(a, b))
}

#[inline]
pub fn dist2(a: Vec3, b: Vec3) -> f64 {
    let d = sub(a, b);
    dot(d, d)
}

/// Unit vector along `a`, or `None` for a (near) zero vector.
pub fn normalize(a: Vec3) -> Option<Vec3> {
    let n = norm(a);
    (n > 1e-12).then(|| scale(a, 1.0 / n))
}

pub fn lerp(a: Vec3, b: Vec3, t: f64) -> Vec3 {
    add(a, scale(sub(b, a), t))
}

pub fn to_f64(c: [usize; 3]) -> Vec3 {
    [c[0] as f64, c[1] as f64, c[2] as f64]
}

/// Cubic Hermite point between `p0` and `p1` with end derivatives `m0`, `m1`.
pub fn hermite(p0: Vec3, m0: Vec3, p1: Vec3, m1: Vec3, t: f64) -> Vec3 {
    let t2 = t * t;
    let t3 = t2 * t;
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + t;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    let mut out = [0.0; 3];
    for k in 0..3 {
        out[k] = h00 * p0[k] + h10 * m0[k] + h01 * p1[k] + h11 * m1[k];
    }
    out
}

/// Samples a Hermite curve densely enough that consecutive samples are at
/// most `step` apart (the endpoints are always included).
pub fn sample_hermite(p0: Vec3, m0: Vec3, p1: Vec3, m1: Vec3, step: f64) -> Vec<Vec3> {
    // The curve length is bounded by the control polygon.
    let bound = dist(p0, p1) + norm(m0) / 3.0 + norm(m1) / 3.0;
    let n = ((bound / step).ceil() as usize).max(1) * 2;
    (0..=n)
        .map(|i| hermite(p0, m0, p1, m1, i as f64 / n as f64))
        .collect()
}

/// Catmull-Rom spline through `points`. `start_tangent`, when given, is the
/// unit direction at the first point; otherwise a one-sided difference.
pub fn catmull_rom(points: &[Vec3], start_tangent: Option<Vec3>, step: f64) -> Vec<Vec3> {
    match points.len() {
        0 => return Vec::new(),
        1 => return points.to_vec(),
        _ => {}
    }
    let n = points.len();
    let tangent = |i: usize| -> Vec3 {
        if i == 0 {
            match start_tangent {
                Some(t) => scale(t, dist(points[0], points[1])),
                None => sub(points[1], points[0]),
            }
        } else if i == n - 1 {
            sub(points[n - 1], points[n - 2])
        } else {
            scale(sub(points[i + 1], points[i - 1]), 0.5)
        }
    };
    let mut out = vec![points[0]];
    for i in 0..n - 1 {
        let seg = sample_hermite(points[i], tangent(i), points[i + 1], tangent(i + 1), step);
        out.extend_from_slice(&seg[1..]);
    }
    out
}

/// Resamples a polyline so consecutive points are at most `step` apart, with
/// radii linearly interpolated along the way.
pub fn densify(path: &[Vec3], radii: &[f64], step: f64) -> Vec<(Vec3, f64)> {
    assert_eq!(path.len(), radii.len());
    let mut out = Vec::new();
    for i in 0..path.len() {
        if i == 0 {
            out.push((path[0], radii[0]));
            continue;
        }
        let d = dist(path[i - 1], path[i]);
        let n = ((d / step).ceil() as usize).max(1);
        for k in 1..=n {
            let t = k as f64 / n as f64;
            out.push((lerp(path[i - 1], path[i], t), radii[i - 1] + (radii[i] - radii[i - 1]) * t));
        }
    }
    out
}

/// Union of balls (voxel-unit centers and radii) as a mask over `dims`.
pub fn stamp_spheres(dims: Dims, spacing: [f64; 3], spheres: &[(Vec3, f64)]) -> BinaryMask {
    let mut m = BinaryMask::empty(dims, spacing);
    let g = Grid::new(dims);
    for &(c, r) in spheres {
        if r.is_nan() || r <= 0.0 {
            continue;
        }
        let r2 = r * r + 1e-9;
        let lo: Vec<i64> = (0..3).map(|a| (c[a] - r).ceil().max(0.0) as i64).collect();
        let hi: Vec<i64> = (0..3)
            .map(|a| (c[a] + r).floor().min(dims[a] as f64 - 1.0) as i64)
            .collect();
        for z in lo[2]..=hi[2] {
            let dz = z as f64 - c[2];
            for y in lo[1]..=hi[1] {
                let dy = y as f64 - c[1];
                let rem = r2 - dz * dz - dy * dy;
                if rem < 0.0 {
                    continue;
                }
                for x in lo[0]..=hi[0] {
                    let dx = x as f64 - c[0];
                    if dx * dx <= rem {
                        m.set_index(g.index(x as usize, y as usize, z as usize), true);
                    }
                }
            }
        }
    }
    m
}

/// Tube along `path` with per-point radii: spheres every half voxel.
pub fn stamp_tube(dims: Dims, spacing: [f64; 3], path: &[Vec3], radii: &[f64]) -> BinaryMask {
    stamp_spheres(dims, spacing, &densify(path, radii, 0.5))
}

/// Total polyline length.
pub fn path_length(path: &[Vec3]) -> f64 {
    path.windows(2).map(|w| dist(w[0], w[1])).sum()
}

/// Eigenvalues of a symmetric 3x3 matrix in descending order, by the
/// trigonometric closed form.
pub fn symmetric_eigenvalues(m: [[f64; 3]; 3]) -> [f64; 3] {
    let off = m[0][1].powi(2) + m[0][2].powi(2) + m[1][2].powi(2);
    if off == 0.0 {
        let mut d = [m[0][0], m[1][1], m[2][2]];
        d.sort_by(|a, b| b.total_cmp(a));
        return d;
    }
    let q = (m[0][0] + m[1][1] + m[2][2]) / 3.0;
    let p = (((m[0][0] - q).powi(2) + (m[1][1] - q).powi(2) + (m[2][2] - q).powi(2) + 2.0 * off) / 6.0).sqrt();
    let b: Vec<Vec<f64>> = (0..3)
        .map(|i| (0..3).map(|j| (m[i][j] - if i == j { q } else { 0.0 }) / p).collect())
        .collect();
    let det = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1]) - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
        + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
    let phi = (det / 2.0).clamp(-1.0, 1.0).acos() / 3.0;
    let l1 = q + 2.0 * p * phi.cos();
    let l3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    [l1, 3.0 * q - l1 - l3, l3]
}
