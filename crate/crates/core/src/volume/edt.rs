//! Exact Euclidean distance transform (separable lower-envelope algorithm of
//! Felzenszwalb and Huttenlocher), with per-axis weights for anisotropic grids.

use super::{BinaryMask, Dims, Grid};

/// Squared distance from every voxel to the nearest feature voxel.
///
/// `weights` are the per-axis voxel edge lengths. When `oob_feature` is set,
/// every voxel outside the grid counts as a feature. Voxels with no reachable
/// feature get `f64::INFINITY`.
pub fn squared_edt(features: &[bool], dims: Dims, weights: [f64; 3], oob_feature: bool) -> Vec<f64> {
    if oob_feature {
        let pdims = [dims[0] + 2, dims[1] + 2, dims[2] + 2];
        let pg = Grid::new(pdims);
        let g = Grid::new(dims);
        let mut padded = vec![true; pg.len()];
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    padded[pg.index(x + 1, y + 1, z + 1)] = features[g.index(x, y, z)];
                }
            }
        }
        let full = squared_edt(&padded, pdims, weights, false);
        let mut out = vec![0.0; g.len()];
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    out[g.index(x, y, z)] = full[pg.index(x + 1, y + 1, z + 1)];
                }
            }
        }
        return out;
    }

    let g = Grid::new(dims);
    let mut d: Vec<f64> = features
        .iter()
        .map(|&f| if f { 0.0 } else { f64::INFINITY })
        .collect();
    let maxn = *dims.iter().max().unwrap_or(&0);
    let mut line = vec![0.0; maxn];
    let mut out = vec![0.0; maxn];
    let mut v = Vec::with_capacity(maxn);
    let mut z = Vec::with_capacity(maxn + 1);

    for axis in 0..3 {
        let n = dims[axis];
        let stride = match axis {
            0 => 1,
            1 => dims[0],
            _ => dims[0] * dims[1],
        };
        let w2 = weights[axis] * weights[axis];
        for start in 0..g.len() {
            // Visit each line once, from its first element.
            if (start / stride) % n != 0 {
                continue;
            }
            for k in 0..n {
                line[k] = d[start + k * stride];
            }
            envelope_1d(&line[..n], w2, &mut out[..n], &mut v, &mut z);
            for k in 0..n {
                d[start + k * stride] = out[k];
            }
        }
    }
    d
}

fn envelope_1d(f: &[f64], w2: f64, out: &mut [f64], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    v.clear();
    z.clear();
    for q in 0..f.len() {
        if f[q].is_infinite() {
            continue;
        }
        let fq = f[q] + w2 * (q * q) as f64;
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let fp = f[p] + w2 * (p * p) as f64;
                    let s = (fq - fp) / (2.0 * w2 * (q - p) as f64);
                    if s <= *z.last().unwrap() {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (p, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < p as f64 {
            k += 1;
        }
        let d = p as f64 - v[k] as f64;
        *o = w2 * d * d + f[v[k]];
    }
}

/// Distance in millimeters from every voxel center to the nearest set voxel
/// center of `mask` (0 on the mask, infinity when the mask is empty).
pub fn distance_to_set_mm(mask: &BinaryMask) -> Vec<f64> {
    squared_edt(mask.bits(), mask.dims(), mask.spacing(), false)
        .into_iter()
        .map(f64::sqrt)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(features: &[bool], dims: Dims, w: [f64; 3]) -> Vec<f64> {
        let g = Grid::new(dims);
        (0..g.len())
            .map(|i| {
                let a = g.coords(i);
                (0..g.len())
                    .filter(|&j| features[j])
                    .map(|j| {
                        let b = g.coords(j);
                        (0..3)
                            .map(|k| ((a[k] as f64 - b[k] as f64) * w[k]).powi(2))
                            .sum::<f64>()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    #[test]
    fn matches_brute_force_anisotropic() {
        let dims = [5, 4, 3];
        let mut seed = 7u64;
        let feats: Vec<bool> = (0..60)
            .map(|_| {
                seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (seed >> 33).is_multiple_of(5)
            })
            .collect();
        let w = [0.7, 1.3, 2.1];
        let fast = squared_edt(&feats, dims, w, false);
        let slow = brute(&feats, dims, w);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn no_features_is_infinite() {
        let d = squared_edt(&[false; 8], [2, 2, 2], [1.0; 3], false);
        assert!(d.iter().all(|v| v.is_infinite()));
    }
}
