//! Space-filling sample generators for the initial design.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::Hyperbox;
use crate::error::{Error, Result};

/// Latin hypercube sample: each of the N equal-width strata per dimension
/// contains exactly one point, uniformly placed within its stratum.
pub fn lhs_sample(bx: &Hyperbox, n: usize, seed: u64) -> Vec<Vec<f64>> {
    assert!(n >= 1, "lhs_sample needs n >= 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = bx.dim();
    let mut strata: Vec<Vec<usize>> = Vec::with_capacity(dim);
    for _ in 0..dim {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        strata.push(perm);
    }
    (0..n)
        .map(|k| {
            (0..dim)
                .map(|d| {
                    if bx.is_frozen(d) {
                        bx.lower[d]
                    } else {
                        let u: f64 = rng.gen();
                        bx.lower[d] + (strata[d][k] as f64 + u) / n as f64 * bx.width(d)
                    }
                })
                .collect()
        })
        .collect()
}

/// Full factorial grid including the box endpoints.
pub fn grid_sample(bx: &Hyperbox, points_per_dim: usize) -> Result<Vec<Vec<f64>>> {
    if points_per_dim < 2 {
        return Err(Error::InvalidArgument(
            "grid_sample needs at least 2 points per dimension".into(),
        ));
    }
    let dim = bx.dim();
    let mut points = vec![vec![]];
    for d in 0..dim {
        let mut next = Vec::with_capacity(points.len() * points_per_dim);
        for p in &points {
            for i in 0..points_per_dim {
                let mut q = p.clone();
                let t = i as f64 / (points_per_dim - 1) as f64;
                q.push(bx.lower[d] + t * bx.width(d));
                next.push(q);
            }
        }
        points = next;
    }
    Ok(points)
}

/// Independent uniform samples over the box.
pub fn uniform_sample(bx: &Hyperbox, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            (0..bx.dim())
                .map(|d| {
                    if bx.is_frozen(d) {
                        bx.lower[d]
                    } else {
                        rng.gen_range(bx.lower[d]..bx.upper[d])
                    }
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(n: usize) -> Hyperbox {
        Hyperbox::new(vec![0.0; n], vec![1.0; n]).unwrap()
    }

    #[test]
    fn lhs_single_point_inside() {
        let bx = Hyperbox::new(vec![-1.0, 2.0], vec![1.0, 3.0]).unwrap();
        let pts = lhs_sample(&bx, 1, 7);
        assert_eq!(pts.len(), 1);
        assert!(bx.contains(&pts[0]));
    }

    #[test]
    fn lhs_stratification_one_dimensional() {
        let bx = unit(1);
        let pts = lhs_sample(&bx, 4, 13);
        let mut counts = [0usize; 4];
        for p in &pts {
            counts[(p[0] * 4.0).floor() as usize] += 1;
        }
        assert_eq!(counts, [1, 1, 1, 1]);
    }

    #[test]
    fn lhs_per_dimension_histogram() {
        let bx = unit(2);
        let n = 100;
        let pts = lhs_sample(&bx, n, 99);
        for d in 0..2 {
            let mut counts = vec![0usize; n];
            for p in &pts {
                let bin = ((p[d] * n as f64).floor() as usize).min(n - 1);
                counts[bin] += 1;
            }
            assert!(counts.iter().all(|c| *c == 1), "dim {d}: {counts:?}");
        }
    }

    #[test]
    fn lhs_deterministic_per_seed() {
        let bx = unit(3);
        assert_eq!(lhs_sample(&bx, 10, 5), lhs_sample(&bx, 10, 5));
        assert_ne!(lhs_sample(&bx, 10, 5), lhs_sample(&bx, 10, 6));
    }

    #[test]
    fn grid_includes_corners() {
        let bx = unit(2);
        let pts = grid_sample(&bx, 3).unwrap();
        assert_eq!(pts.len(), 9);
        for corner in [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]] {
            assert!(pts.iter().any(|p| p[0] == corner[0] && p[1] == corner[1]));
        }
        assert!(grid_sample(&bx, 1).is_err());
    }

    #[test]
    fn uniform_stays_inside_and_is_centered() {
        let bx = Hyperbox::new(vec![-2.0, 1.0], vec![2.0, 5.0]).unwrap();
        let n = 1000;
        let pts = uniform_sample(&bx, n, 3);
        assert!(pts.iter().all(|p| bx.contains(p)));
        // per-dimension means within 3 sigma of the box midpoints
        for d in 0..2 {
            let mean = pts.iter().map(|p| p[d]).sum::<f64>() / n as f64;
            let mid = 0.5 * (bx.lower[d] + bx.upper[d]);
            let sigma = bx.width(d) / (12.0f64).sqrt() / (n as f64).sqrt();
            assert!((mean - mid).abs() < 3.0 * sigma, "dim {d}: {mean} vs {mid}");
        }
    }
}
