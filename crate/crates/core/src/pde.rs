//! Explicit finite-difference solver for
//! `∂W/∂t = D33 (n·∇)² W + D44 Δ_LB W` on voxel grid × sphere sampling.
//!
//! It produces discrete impulse responses that serve as a reference for the
//! analytic kernel and for the convolution machinery.

use std::sync::Arc;

use rayon::prelude::*;

use crate::convolution::{shift_twist_convolve_with, Boundary, FodField, KernelTable};
use crate::discretization::{GridSpec, SphereSampling};
use crate::kernel::DiffusionParams;
use crate::lie_se3::Vec3;
use crate::Error;

/// Discrete Laplace–Beltrami operator: cotangent edge weights divided by the
/// Voronoi area of the row vertex.
#[derive(Clone, Debug)]
pub struct LbOperator {
    diag: Vec<f64>,
    rows: Vec<Vec<(usize, f64)>>,
    weights: Vec<f64>,
}

/// Builds the cotangent Laplacian of the sampling's triangle mesh.
pub fn build_lb_operator(sphere: &SphereSampling) -> LbOperator {
    let n = sphere.len();
    let pts: Vec<Vec3> = sphere.points().iter().map(|p| *p.vector()).collect();
    let mut edge_weight = std::collections::BTreeMap::<(usize, usize), f64>::new();
    for t in sphere.triangles() {
        for k in 0..3 {
            let (a, b, c) = (t[k], t[(k + 1) % 3], t[(k + 2) % 3]);
            let u = pts[b] - pts[a];
            let v = pts[c] - pts[a];
            let cot = u.dot(&v) / u.cross(&v).norm();
            *edge_weight.entry((b.min(c), b.max(c))).or_insert(0.0) += 0.5 * cot;
        }
    }
    let weights = sphere.weights().to_vec();
    let mut rows = vec![Vec::new(); n];
    let mut diag = vec![0.0; n];
    for (&(i, j), &w) in &edge_weight {
        rows[i].push((j, w / weights[i]));
        rows[j].push((i, w / weights[j]));
        diag[i] -= w / weights[i];
        diag[j] -= w / weights[j];
    }
    for r in rows.iter_mut() {
        r.sort_by_key(|e| e.0);
    }
    LbOperator { diag, rows, weights }
}

impl LbOperator {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    /// Off-diagonal entries `(column, value)` of row `i`.
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    /// Dense copy, row-major.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut r = vec![0.0; n];
                r[i] = self.diag[i];
                for &(j, v) in &self.rows[i] {
                    r[j] = v;
                }
                r
            })
            .collect()
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.diag[i] * f[i] + self.rows[i].iter().map(|&(j, v)| v * f[j]).sum::<f64>())
            .collect()
    }

    /// Largest eigenvalue magnitude of `-L`, by power iteration in the
    /// weighted inner product (in which `L` is self-adjoint).
    pub fn lambda_max(&self) -> f64 {
        let n = self.len();
        if n == 0 {
            return 0.0;
        }
        let w = &self.weights;
        let norm = |v: &[f64]| v.iter().zip(w).map(|(a, b)| a * a * b).sum::<f64>().sqrt();
        let mut v: Vec<f64> = (0..n).map(|i| ((i * 7919) % 13) as f64 - 5.9).collect();
        let mut lambda = 0.0;
        for _ in 0..2000 {
            let nv = norm(&v);
            v.iter_mut().for_each(|x| *x /= nv);
            let lv: Vec<f64> = self.apply(&v).into_iter().map(|x| -x).collect();
            let next: f64 = v.iter().zip(&lv).zip(w).map(|((a, b), c)| a * b * c).sum();
            let converged = (next - lambda).abs() <= 1e-13 * next.abs();
            lambda = next;
            v = lv;
            if converged {
                break;
            }
        }
        lambda
    }
}

/// Time stepping configuration. `steps · dt` must equal the evolution time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvolutionConfig {
    pub dt: f64,
    pub steps: usize,
    pub boundary: Boundary,
}

/// `0.9 · min(h²/(6 D33), 1/(D44 λ_max))`
pub fn max_stable_dt(p: &DiffusionParams, spacing: f64, lb: &LbOperator) -> f64 {
    let spatial = spacing * spacing / (2.0 * 3.0 * p.d33());
    let angular = 1.0 / (p.d44() * lb.lambda_max());
    0.9 * spatial.min(angular)
}

impl EvolutionConfig {
    /// Fewest equal steps within the stability bound that reach `p.t()`.
    pub fn auto(p: &DiffusionParams, spacing: f64, lb: &LbOperator, boundary: Boundary) -> Self {
        let dt_max = max_stable_dt(p, spacing, lb);
        let steps = ((p.t() / dt_max).ceil() as usize).max(1);
        EvolutionConfig {
            dt: p.t() / steps as f64,
            steps,
            boundary,
        }
    }

    /// `steps = t / dt` for a user supplied `dt` (which must divide `t`).
    pub fn with_dt(p: &DiffusionParams, dt: f64, boundary: Boundary) -> Result<Self, Error> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        let steps = (p.t() / dt).round().max(1.0) as usize;
        let cfg = EvolutionConfig { dt, steps, boundary };
        cfg.check_time(p)?;
        Ok(cfg)
    }

    fn check_time(&self, p: &DiffusionParams) -> Result<(), Error> {
        let reached = self.dt * self.steps as f64;
        if (reached - p.t()).abs() > 1e-9 * p.t() {
            return Err(Error::InvalidParameter(format!(
                "{} steps of {} reach t = {reached}, expected {}",
                self.steps,
                self.dt,
                p.t()
            )));
        }
        Ok(())
    }
}

/// One trilinear sample at fractional voxel offset.
type Stencil = Vec<([i64; 3], f64)>;

fn trilinear(offset: &Vec3) -> Stencil {
    let mut taps = Vec::with_capacity(8);
    let base = offset.map(f64::floor);
    let frac = offset - base;
    for corner in 0..8 {
        let mut w = 1.0;
        let mut d = [0i64; 3];
        for axis in 0..3 {
            let up = corner >> axis & 1 == 1;
            w *= if up { frac[axis] } else { 1.0 - frac[axis] };
            d[axis] = base[axis] as i64 + up as i64;
        }
        if w != 0.0 {
            taps.push((d, w));
        }
    }
    taps
}

/// Reusable forward-Euler integrator for a fixed grid, sampling and parameter set.
pub struct Evolver {
    grid: GridSpec,
    sphere: Arc<SphereSampling>,
    params: DiffusionParams,
    cfg: EvolutionConfig,
    lb: LbOperator,
    stencils: Vec<(Stencil, Stencil)>,
}

impl Evolver {
    pub fn new(
        grid: GridSpec,
        sphere: Arc<SphereSampling>,
        params: DiffusionParams,
        cfg: EvolutionConfig,
    ) -> Result<Self, Error> {
        let lb = build_lb_operator(&sphere);
        Self::with_operator(grid, sphere, params, cfg, lb)
    }

    fn with_operator(
        grid: GridSpec,
        sphere: Arc<SphereSampling>,
        params: DiffusionParams,
        cfg: EvolutionConfig,
        lb: LbOperator,
    ) -> Result<Self, Error> {
        cfg.check_time(&params)?;
        let dt_max = max_stable_dt(&params, grid.spacing(), &lb);
        if cfg.dt > dt_max * (1.0 + 1e-12) {
            return Err(Error::Unstable { dt: cfg.dt, dt_max });
        }
        let stencils = sphere
            .points()
            .iter()
            .map(|n| (trilinear(n.vector()), trilinear(&-n.vector())))
            .collect();
        Ok(Evolver {
            grid,
            sphere,
            params,
            cfg,
            lb,
            stencils,
        })
    }

    pub fn config(&self) -> &EvolutionConfig {
        &self.cfg
    }

    pub fn run(&self, u0: &FodField) -> Result<FodField, Error> {
        if u0.grid() != &self.grid || u0.sphere().as_ref() != self.sphere.as_ref() {
            return Err(Error::SphereMismatch("field does not match the evolver's grid and sampling".into()));
        }
        let mut cur = u0.values().to_vec();
        let mut next = vec![0.0; cur.len()];
        for _ in 0..self.cfg.steps {
            self.step(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        FodField::new(self.grid, self.sphere.clone(), cur)
    }

    fn step(&self, cur: &[f64], next: &mut [f64]) {
        let plane_len = self.grid.len();
        let [nx, ny, nz] = self.grid.dims().map(|d| d as i64);
        let h = self.grid.spacing();
        let spatial = self.cfg.dt * self.params.d33() / (h * h);
        let angular = self.cfg.dt * self.params.d44();
        let boundary = self.cfg.boundary;
        let sample = |plane: &[f64], x: i64, y: i64, z: i64| -> f64 {
            match boundary {
                Boundary::Zero => {
                    if x < 0 || y < 0 || z < 0 || x >= nx || y >= ny || z >= nz {
                        0.0
                    } else {
                        plane[((z * ny + y) * nx + x) as usize]
                    }
                }
                Boundary::Periodic => {
                    let (x, y, z) = (x.rem_euclid(nx), y.rem_euclid(ny), z.rem_euclid(nz));
                    plane[((z * ny + y) * nx + x) as usize]
                }
            }
        };
        next.par_chunks_mut(plane_len).enumerate().for_each(|(i, out)| {
            let plane = &cur[i * plane_len..(i + 1) * plane_len];
            let (plus, minus) = &self.stencils[i];
            let lb_row = self.lb.row(i);
            let lb_diag = self.lb.diagonal()[i];
            for z in 0..nz {
                for y in 0..ny {
                    for x in 0..nx {
                        let idx = ((z * ny + y) * nx + x) as usize;
                        let center = plane[idx];
                        let mut line = -2.0 * center;
                        for (d, w) in plus.iter().chain(minus) {
                            line += w * sample(plane, x + d[0], y + d[1], z + d[2]);
                        }
                        let mut lb = lb_diag * center;
                        for &(j, v) in lb_row {
                            lb += v * cur[j * plane_len + idx];
                        }
                        out[idx] = center + spatial * line + angular * lb;
                    }
                }
            }
        });
    }
}

/// Forward-Euler evolution of `u0` up to time `p.t()`.
pub fn evolve(u0: &FodField, p: &DiffusionParams, cfg: &EvolutionConfig) -> Result<FodField, Error> {
    Evolver::new(*u0.grid(), u0.sphere().clone(), *p, *cfg)?.run(u0)
}

/// Evolution of a unit-mass delta at the grid center, orientation nearest `e_z`.
pub fn impulse_response(
    p: &DiffusionParams,
    grid: GridSpec,
    sphere: Arc<SphereSampling>,
    cfg: &EvolutionConfig,
) -> Result<FodField, Error> {
    let source = sphere.nearest(&Vec3::z());
    let u0 = FodField::delta(grid, sphere, grid.center(), source);
    evolve(&u0, p, cfg)
}

/// Kernel table of the discrete evolution operator: one impulse response per
/// source orientation, scaled by the voxel volume so that
/// `shift_twist_convolve` reproduces `evolve`.
///
/// Responses are computed with zero boundary on a cube large enough that they
/// never reach it, then cropped to `radius` (default: the full support,
/// `cfg.steps`). Columns are not renormalized.
pub fn kernel_table_from_pde(
    p: &DiffusionParams,
    sphere: Arc<SphereSampling>,
    spacing: f64,
    cfg: &EvolutionConfig,
    radius: Option<usize>,
) -> Result<KernelTable, Error> {
    let support = cfg.steps.max(1);
    let radius = radius.unwrap_or(support);
    let grid_radius = support.max(radius) + 1;
    let side = 2 * grid_radius + 1;
    let grid = GridSpec::new([side; 3], spacing)?;
    let local = EvolutionConfig {
        boundary: Boundary::Zero,
        ..*cfg
    };
    let evolver = Evolver::new(grid, sphere.clone(), *p, local)?;
    let n = sphere.len();
    let window = (2 * radius + 1).pow(3);
    let vol = grid.voxel_volume();
    let c = grid_radius as i64;
    let r = radius as i64;
    let columns: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let delta = FodField::delta(grid, sphere.clone(), grid.center(), j);
            let resp = evolver.run(&delta)?;
            let mut col = vec![0.0; window * n];
            for i in 0..n {
                let mut o = 0;
                for dz in -r..=r {
                    for dy in -r..=r {
                        for dx in -r..=r {
                            let at = [c + dx, c + dy, c + dz].map(|v| v as usize);
                            col[i * window + o] = vol * resp.get(at, i);
                            o += 1;
                        }
                    }
                }
            }
            Ok(col)
        })
        .collect::<Result<_, Error>>()?;
    KernelTable::from_values(radius, spacing, sphere, columns.concat())
}

/// Pearson correlation coefficient.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    sab / (saa * sbb).sqrt()
}

/// `‖a - b‖₂ / ‖b‖₂`
pub fn relative_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

/// Agreement between the analytic kernel and the discrete impulse response.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleComparison {
    pub correlation: f64,
    pub relative_l2: f64,
    pub source: usize,
}

/// Compares the analytic table column of the source orientation nearest `e_z`
/// against the (volume-scaled) impulse response on the offsets `[-r, r]³`.
pub fn compare_with_analytic(analytic: &KernelTable, p: &DiffusionParams, cfg: &EvolutionConfig) -> Result<OracleComparison, Error> {
    let sphere = analytic.sphere().clone();
    let pde = kernel_column_from_pde(p, sphere.clone(), analytic.spacing(), cfg, analytic.radius())?;
    let source = sphere.nearest(&Vec3::z());
    let col = analytic.column(source);
    Ok(OracleComparison {
        correlation: pearson(col, &pde),
        relative_l2: relative_l2(col, &pde),
        source,
    })
}

fn kernel_column_from_pde(
    p: &DiffusionParams,
    sphere: Arc<SphereSampling>,
    spacing: f64,
    cfg: &EvolutionConfig,
    radius: usize,
) -> Result<Vec<f64>, Error> {
    // Mass farther than eight spatial standard deviations is negligible, so
    // the zero boundary may sit closer than the stencil's reach.
    let sigma = (2.0 * p.d33() * p.t()).sqrt() / spacing;
    let margin = (8.0 * sigma).ceil() as usize;
    let grid_radius = cfg.steps.min(radius + margin).max(radius) + 1;
    let grid = GridSpec::new([2 * grid_radius + 1; 3], spacing)?;
    let local = EvolutionConfig {
        boundary: Boundary::Zero,
        ..*cfg
    };
    let resp = impulse_response(p, grid, sphere.clone(), &local)?;
    let n = sphere.len();
    let vol = grid.voxel_volume();
    let (c, r) = (grid_radius as i64, radius as i64);
    let mut col = Vec::with_capacity((2 * radius + 1).pow(3) * n);
    for i in 0..n {
        for dz in -r..=r {
            for dy in -r..=r {
                for dx in -r..=r {
                    let at = [c + dx, c + dy, c + dz].map(|v| v as usize);
                    col.push(vol * resp.get(at, i));
                }
            }
        }
    }
    Ok(col)
}

/// Relative L2 difference between direct evolution of `u` and its
/// convolution with `table`, over voxels unaffected by the boundary
/// (all voxels for a periodic boundary).
pub fn consistency_residual(table: &KernelTable, u: &FodField, p: &DiffusionParams, cfg: &EvolutionConfig) -> Result<f64, Error> {
    let direct = evolve(u, p, cfg)?;
    let conv = shift_twist_convolve_with(table, u, cfg.boundary)?;
    let grid = u.grid();
    let depth = match cfg.boundary {
        Boundary::Periodic => 0,
        Boundary::Zero => cfg.steps,
    };
    let dims = grid.dims();
    let interior: Vec<usize> = (0..grid.len())
        .filter(|&idx| {
            let c = grid.coords(idx);
            (0..3).all(|a| c[a] >= depth && c[a] + depth < dims[a])
        })
        .collect();
    if interior.is_empty() {
        return Err(Error::InvalidParameter("grid has no interior voxels for this many steps".into()));
    }
    let n = u.sphere().len();
    let pick = |f: &FodField| -> Vec<f64> {
        (0..n)
            .flat_map(|i| interior.iter().map(move |&idx| (i, idx)))
            .map(|(i, idx)| f.values()[i * grid.len() + idx])
            .collect()
    };
    Ok(relative_l2(&pick(&conv), &pick(&direct)))
}
