//! Seeded random smooth test functions: sums of gaussian bumps restricted to
//! a node mask.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grid::{Grid, GridFunction};

/// Draws random bump sums supported on the `free` nodes.
#[derive(Debug, Clone)]
pub struct BumpSampler {
    rng: ChaCha8Rng,
    centers: Vec<[f64; 2]>,
    free: Vec<bool>,
    scale: f64,
    /// Allow negative amplitudes.
    pub signed: bool,
    pub max_bumps: usize,
}

impl BumpSampler {
    pub fn new(grid: &Grid, free: &[bool], seed: u64) -> BumpSampler {
        let free: Vec<bool> = free.iter().enumerate().map(|(k, &b)| b && !grid.is_boundary(k)).collect();
        let centers: Vec<[f64; 2]> = (0..grid.len()).filter(|&k| free[k]).map(|k| grid.position(k)).collect();
        assert!(!centers.is_empty(), "sampler needs at least one free node");
        let dim = grid.dim();
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for c in &centers {
            for d in 0..dim {
                lo[d] = lo[d].min(c[d]);
                hi[d] = hi[d].max(c[d]);
            }
        }
        let scale = (0..dim).map(|d| hi[d] - lo[d]).fold(0.0, f64::max).max(grid.spacing()[0]);
        BumpSampler { rng: ChaCha8Rng::seed_from_u64(seed), centers, free, scale, signed: true, max_bumps: 4 }
    }

    pub fn positive(mut self) -> Self {
        self.signed = false;
        self
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn sample(&mut self, grid: &Grid) -> GridFunction {
        let bumps = self.rng.gen_range(1..=self.max_bumps);
        let params: Vec<([f64; 2], f64, f64)> = (0..bumps)
            .map(|_| {
                let c = self.centers[self.rng.gen_range(0..self.centers.len())];
                let w = self.scale * self.rng.gen_range(0.05..0.4);
                let amp = if self.signed { self.rng.gen_range(-1.0..1.0) } else { self.rng.gen_range(0.2..1.0) };
                (c, w, amp)
            })
            .collect();
        let mut u = GridFunction::zeros(grid.len());
        for k in 0..grid.len() {
            if !self.free[k] {
                continue;
            }
            let x = grid.position(k);
            u[k] = params
                .iter()
                .map(|(c, w, amp)| {
                    let r2: f64 = (0..grid.dim()).map(|d| (x[d] - c[d]).powi(2)).sum();
                    amp * (-r2 / (w * w)).exp()
                })
                .sum();
        }
        if u.iter().all(|&x| x == 0.0) {
            let k = (0..grid.len()).find(|&k| self.free[k]).unwrap();
            u[k] = 1.0;
        }
        u
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;

    #[test]
    fn samples_respect_mask_and_seed() {
        let g = build_grid(1, &[(-2.0, 2.0)], &[81]).unwrap();
        let free: Vec<bool> = (0..81).map(|k| g.position(k)[0].abs() < 1.0).collect();
        let mut s1 = BumpSampler::new(&g, &free, 7);
        let mut s2 = BumpSampler::new(&g, &free, 7);
        for _ in 0..10 {
            let u = s1.sample(&g);
            assert_eq!(u, s2.sample(&g));
            assert!(u.iter().zip(&free).all(|(x, &f)| f || *x == 0.0));
            assert!(u.iter().any(|&x| x != 0.0));
        }
        let mut pos = BumpSampler::new(&g, &free, 3).positive();
        assert!(pos.sample(&g).iter().all(|&x| x >= 0.0));
    }
}
