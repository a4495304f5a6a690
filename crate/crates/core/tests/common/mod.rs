//! Reference implementations and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use se3_scale::fbc::Tractogram;
use se3_scale::kernel::{kernel_two_point, DiffusionParams, Section};
use se3_scale::{FodField, GridSpec, KernelTable, SphereSampling};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn random_field(grid: GridSpec, sphere: Arc<SphereSampling>, seed: u64) -> FodField {
    let mut r = rng(seed);
    let values = (0..grid.len() * sphere.len()).map(|_| r.gen_range(0.0..1.0)).collect();
    FodField::new(grid, sphere, values).unwrap()
}

/// Six nested loops over output voxel, target, offset and source with zero
/// padding: `W(y, n_i) = Σ_o Σ_j k(o, i, j) w_j U(y - o, n_j)`.
pub fn naive_convolve(k: &KernelTable, u: &FodField) -> Vec<f64> {
    let grid = u.grid();
    let [nx, ny, nz] = grid.dims().map(|d| d as i64);
    let n = u.sphere().len();
    let w = u.sphere().weights();
    let r = k.radius() as i64;
    let mut out = vec![0.0; u.values().len()];
    for i in 0..n {
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let mut acc = 0.0;
                    for oz in -r..=r {
                        for oy in -r..=r {
                            for ox in -r..=r {
                                let (sx, sy, sz) = (x - ox, y - oy, z - oz);
                                if sx < 0 || sy < 0 || sz < 0 || sx >= nx || sy >= ny || sz >= nz {
                                    continue;
                                }
                                for j in 0..n {
                                    acc += k.get([ox, oy, oz], i, j)
                                        * w[j]
                                        * u.get([sx as usize, sy as usize, sz as usize], j);
                                }
                            }
                        }
                    }
                    out[u.index([x as usize, y as usize, z as usize], i)] = acc;
                }
            }
        }
    }
    out
}

/// Plain double loop over all ordered point pairs.
pub fn naive_density(tr: &Tractogram, p: &DiffusionParams) -> Vec<f64> {
    let pts: Vec<_> = tr
        .fibers()
        .iter()
        .flat_map(|f| f.points().iter().zip(f.tangents()))
        .collect();
    let n = pts.len() as f64;
    pts.iter()
        .map(|(ya, na)| {
            pts.iter()
                .map(|(yb, nb)| {
                    kernel_two_point(ya, na, yb, nb, p, Section::New)
                        + kernel_two_point(ya, na, yb, &nb.negated(), p, Section::New)
                })
                .sum::<f64>()
                / n
        })
        .collect()
}

pub fn max_relative_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale.max(f64::MIN_POSITIVE)
}

pub fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}
