//! Scatterer descriptions and their rasterization onto grids.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Grid, PermittivityMap};

/// Homogeneous disc.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Circle {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    pub eps: Complex64,
}

impl Circle {
    fn overlaps(&self, other: &Circle) -> bool {
        (self.cx - other.cx).hypot(self.cy - other.cy) < self.radius + other.radius
    }
}

/// One random-circle scatterer.
#[derive(Debug, Clone, PartialEq)]
pub struct ScattererSpec {
    pub circles: Vec<Circle>,
    pub seed: u64,
}

/// Ranges for random circles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircleRanges {
    pub radius: (f64, f64),
    pub eps_re: (f64, f64),
    /// Upper bound of `Im εr`; zero for lossless media.
    pub eps_im_max: f64,
    pub max_circles: usize,
}

/// Derives the seed of sample `index` from a dataset seed.
pub fn sample_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One scatterer with 1 to `max_circles` non-overlapping discs inside the
/// square `[-side/2, side/2]²`.
pub fn random_scatterer(seed: u64, ranges: &CircleRanges, side: f64) -> ScattererSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.random_range(1..=ranges.max_circles.max(1));
    let mut circles: Vec<Circle> = Vec::with_capacity(count);
    let mut attempts = 0;
    while circles.len() < count && attempts < 200 {
        attempts += 1;
        let radius = rng.random_range(ranges.radius.0..=ranges.radius.1);
        let reach = 0.5 * side - radius;
        let cx = rng.random_range(-reach..=reach);
        let cy = rng.random_range(-reach..=reach);
        let re = rng.random_range(ranges.eps_re.0..=ranges.eps_re.1);
        let im = if ranges.eps_im_max > 0.0 { rng.random_range(0.0..=ranges.eps_im_max) } else { 0.0 };
        let c = Circle { cx, cy, radius, eps: Complex64::new(re, im) };
        if circles.iter().all(|o| !o.overlaps(&c)) {
            circles.push(c);
        }
    }
    ScattererSpec { circles, seed }
}

/// `n` scatterers with seeds derived from `seed`.
pub fn gen_random_circles(n: usize, seed: u64, ranges: &CircleRanges, side: f64) -> Vec<ScattererSpec> {
    (0..n as u64).map(|i| random_scatterer(sample_seed(seed, i), ranges, side)).collect()
}

/// Permittivity on `grid`, each cell weighted by the fraction of its
/// `supersample × supersample` sub-points inside each disc.
pub fn rasterize_circles(circles: &[Circle], grid: &Grid, supersample: usize) -> PermittivityMap {
    let ss = supersample.max(1);
    let h = grid.cell_side;
    let mut values = vec![Complex64::new(1.0, 0.0); grid.len()];
    for (m, center) in grid.centers.iter().enumerate() {
        for c in circles {
            let d = (center.x - c.cx).hypot(center.y - c.cy);
            // cells entirely outside or inside need no sub-sampling
            let half_diag = h * std::f64::consts::FRAC_1_SQRT_2;
            if d >= c.radius + half_diag {
                continue;
            }
            let frac = if d + half_diag <= c.radius {
                1.0
            } else {
                let mut inside = 0;
                for i in 0..ss {
                    for j in 0..ss {
                        let x = center.x + h * ((j as f64 + 0.5) / ss as f64 - 0.5);
                        let y = center.y + h * ((i as f64 + 0.5) / ss as f64 - 0.5);
                        if (x - c.cx).hypot(y - c.cy) <= c.radius {
                            inside += 1;
                        }
                    }
                }
                inside as f64 / (ss * ss) as f64
            };
            values[m] += frac * (c.eps - 1.0);
        }
    }
    PermittivityMap { n: grid.n, values }
}

/// Binary support of a bitmap: pixels above half its maximum.
pub fn threshold(bitmap: &[u8]) -> Vec<bool> {
    let max = bitmap.iter().copied().max().unwrap_or(0);
    bitmap.iter().map(|&p| max > 0 && p as f64 > 0.5 * max as f64).collect()
}

/// Rotates a mask counter-clockwise by `degrees` about its center with
/// nearest-neighbor sampling. Quarter turns are exact index permutations.
pub fn rotate_nearest(mask: &[bool], rows: usize, cols: usize, degrees: f64) -> Vec<bool> {
    assert_eq!(mask.len(), rows * cols, "mask size");
    let turns = degrees / 90.0;
    if (turns - turns.round()).abs() < 1e-12 && rows == cols {
        let q = (turns.round() as i64).rem_euclid(4);
        let n = rows;
        return (0..n * n)
            .map(|k| {
                let (r, c) = (k / n, k % n);
                // row index grows downwards, so a counter-clockwise turn maps
                // output (r, c) back to source (c, n-1-r)
                let (sr, sc) = match q {
                    0 => (r, c),
                    1 => (c, n - 1 - r),
                    2 => (n - 1 - r, n - 1 - c),
                    _ => (n - 1 - c, r),
                };
                mask[sr * n + sc]
            })
            .collect();
    }
    let (s, co) = degrees.to_radians().sin_cos();
    let (yc, xc) = ((rows as f64 - 1.0) / 2.0, (cols as f64 - 1.0) / 2.0);
    (0..rows * cols)
        .map(|k| {
            let (r, c) = ((k / cols) as f64, (k % cols) as f64);
            // image y points down: use (x, -y) coordinates for the rotation
            let (x, y) = (c - xc, yc - r);
            let (sx, sy) = (co * x + s * y, -s * x + co * y);
            let (sr, sc) = ((yc - sy).round(), (sx + xc).round());
            if sr < 0.0 || sc < 0.0 || sr >= rows as f64 || sc >= cols as f64 {
                false
            } else {
                mask[sr as usize * cols + sc as usize]
            }
        })
        .collect()
}

/// Rasterizes a bitmap profile onto an `n × n` grid spanning the DOI.
///
/// The bitmap is thresholded at half its maximum, rotated, then resampled by
/// nearest neighbor so that it fills the domain. Bitmap row 0 is the top
/// (largest `y`) of the domain. Covered cells take `eps`, the rest stay 1.
pub fn rasterize_profile(bitmap: &[u8], rows: usize, cols: usize, eps: Complex64, rotation: f64, n: usize) -> PermittivityMap {
    let mask = rotate_nearest(&threshold(bitmap), rows, cols, rotation);
    let mut values = vec![Complex64::new(1.0, 0.0); n * n];
    for gr in 0..n {
        for gc in 0..n {
            // grid row 0 is the bottom of the domain
            let br = (((n - 1 - gr) as f64 + 0.5) * rows as f64 / n as f64).floor() as usize;
            let bc = ((gc as f64 + 0.5) * cols as f64 / n as f64).floor() as usize;
            if mask[br.min(rows - 1) * cols + bc.min(cols - 1)] {
                values[gr * n + gc] = eps;
            }
        }
    }
    PermittivityMap { n, values }
}
