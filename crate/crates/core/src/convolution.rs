//! Discrete shift-twist convolution of orientation fields on a voxel grid.

use std::sync::Arc;

use rayon::prelude::*;

use crate::discretization::{GridSpec, SphereSampling};
use crate::kernel::{kernel_quotient, kernel_two_point, DiffusionParams, Section};
use crate::lie_se3::{Orientation, Vec3};
use crate::Error;

/// Default cap for the automatically chosen truncation radius.
pub const DEFAULT_RADIUS_CAP: usize = 5;

/// How samples outside the grid are treated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Boundary {
    /// Samples outside the grid are zero.
    Zero,
    /// The grid wraps around in every axis.
    Periodic,
}

/// A nonnegative field over voxel grid × sphere sampling.
///
/// Values are stored x-fastest, then y, z, with the orientation index slowest.
#[derive(Clone, Debug, PartialEq)]
pub struct FodField {
    grid: GridSpec,
    sphere: Arc<SphereSampling>,
    values: Vec<f64>,
}

impl FodField {
    pub fn new(grid: GridSpec, sphere: Arc<SphereSampling>, values: Vec<f64>) -> Result<Self, Error> {
        let expected = grid.len() * sphere.len();
        if values.len() != expected {
            return Err(Error::InvalidParameter(format!(
                "field has {} values, grid × sphere needs {expected}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "field values must be finite and nonnegative, found {v}"
            )));
        }
        Ok(FodField {
            grid,
            sphere,
            values,
        })
    }

    pub fn zeros(grid: GridSpec, sphere: Arc<SphereSampling>) -> Self {
        let values = vec![0.0; grid.len() * sphere.len()];
        FodField {
            grid,
            sphere,
            values,
        }
    }

    /// Unit-mass delta at voxel `at` and orientation `orientation`:
    /// value `1/(voxel volume · w_i)`.
    pub fn delta(grid: GridSpec, sphere: Arc<SphereSampling>, at: [usize; 3], orientation: usize) -> Self {
        let mut f = FodField::zeros(grid, sphere);
        let w = f.sphere.weights()[orientation];
        let idx = f.index(at, orientation);
        f.values[idx] = 1.0 / (grid.voxel_volume() * w);
        f
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn sphere(&self) -> &Arc<SphereSampling> {
        &self.sphere
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn index(&self, at: [usize; 3], orientation: usize) -> usize {
        orientation * self.grid.len() + self.grid.index(at[0], at[1], at[2])
    }

    pub fn get(&self, at: [usize; 3], orientation: usize) -> f64 {
        self.values[self.index(at, orientation)]
    }

    /// Values of one orientation over the whole grid.
    pub fn plane(&self, orientation: usize) -> &[f64] {
        let n = self.grid.len();
        &self.values[orientation * n..(orientation + 1) * n]
    }

    /// `Σ U(y, n_i) w_i · voxel volume`
    pub fn mass(&self) -> f64 {
        let vol = self.grid.voxel_volume();
        self.values
            .chunks(self.grid.len())
            .zip(self.sphere.weights())
            .map(|(plane, w)| plane.iter().sum::<f64>() * w)
            .sum::<f64>()
            * vol
    }
}

/// Tabulated two-point kernel `k(offset, n_target, n_source)` on the voxel
/// offsets `[-r, r]³`.
///
/// Entries are stored offset-fastest (x, y, z), then target, then source
/// orientation. Alongside the density values the table keeps the transition
/// weights `k · w_source` used by the convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelTable {
    radius: usize,
    spacing: f64,
    sphere: Arc<SphereSampling>,
    values: Vec<f64>,
    transition: Vec<f64>,
    column_mass: Vec<f64>,
}

impl KernelTable {
    fn empty(radius: usize, spacing: f64, sphere: Arc<SphereSampling>) -> Self {
        let len = offset_count(radius) * sphere.len() * sphere.len();
        KernelTable {
            radius,
            spacing,
            column_mass: vec![0.0; sphere.len()],
            sphere,
            values: vec![0.0; len],
            transition: vec![0.0; len],
        }
    }

    /// Table from raw entries (layout as in [`KernelTable::values`]), without
    /// normalization.
    pub fn from_values(
        radius: usize,
        spacing: f64,
        sphere: Arc<SphereSampling>,
        values: Vec<f64>,
    ) -> Result<Self, Error> {
        let mut table = KernelTable::empty(radius, spacing, sphere);
        if values.len() != table.values.len() {
            return Err(Error::InvalidParameter(format!(
                "kernel table needs {} values, got {}",
                table.values.len(),
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "kernel values must be finite and nonnegative, found {v}"
            )));
        }
        table.values = values;
        table.refresh();
        Ok(table)
    }

    /// The table of the identity operator: all weight at offset 0, `i = j`.
    pub fn identity(radius: usize, spacing: f64, sphere: Arc<SphereSampling>) -> Self {
        let mut table = KernelTable::empty(radius, spacing, sphere);
        let center = table.offset_index([0, 0, 0]);
        for j in 0..table.orientations() {
            let idx = table.index(center, j, j);
            table.values[idx] = 1.0 / table.sphere.weights()[j];
            table.transition[idx] = 1.0;
            table.column_mass[j] = spacing.powi(3);
        }
        table
    }

    fn refresh(&mut self) {
        let n = self.orientations();
        let s = offset_count(self.radius);
        let vol = self.spacing.powi(3);
        let weights = self.sphere.weights().to_vec();
        for j in 0..n {
            let col = &self.values[j * n * s..(j + 1) * n * s];
            self.column_mass[j] = column_integral(col, &weights, s) * vol;
            for (t, v) in self.transition[j * n * s..(j + 1) * n * s].iter_mut().zip(col) {
                *t = v * weights[j];
            }
        }
    }

    /// Rescales every source column to unit discrete mass
    /// `Σ_offsets Σ_targets k · w_target = 1`.
    pub fn normalize(&mut self) {
        let n = self.orientations();
        let s = offset_count(self.radius);
        let weights = self.sphere.weights().to_vec();
        let column_mass = self.column_mass.clone();
        for col in self.values.chunks_mut(n * s) {
            let total = column_integral(col, &weights, s);
            if total > 0.0 {
                col.iter_mut().for_each(|v| *v /= total);
            }
        }
        self.refresh();
        self.column_mass = column_mass;
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn sphere(&self) -> &Arc<SphereSampling> {
        &self.sphere
    }

    pub fn orientations(&self) -> usize {
        self.sphere.len()
    }

    pub fn offsets(&self) -> usize {
        offset_count(self.radius)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mass of each source column before normalization, `Σ k w · voxel volume`.
    pub fn column_mass(&self) -> &[f64] {
        &self.column_mass
    }

    /// Mean pre-normalization column mass.
    pub fn mass(&self) -> f64 {
        self.column_mass.iter().sum::<f64>() / self.column_mass.len() as f64
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn offset_index(&self, offset: [i64; 3]) -> usize {
        let side = 2 * self.radius + 1;
        let r = self.radius as i64;
        let [x, y, z] = offset.map(|c| (c + r) as usize);
        (z * side + y) * side + x
    }

    pub fn offset(&self, index: usize) -> [i64; 3] {
        let side = 2 * self.radius + 1;
        let r = self.radius as i64;
        [index % side, (index / side) % side, index / (side * side)].map(|c| c as i64 - r)
    }

    pub fn index(&self, offset_index: usize, target: usize, source: usize) -> usize {
        (source * self.orientations() + target) * self.offsets() + offset_index
    }

    pub fn get(&self, offset: [i64; 3], target: usize, source: usize) -> f64 {
        self.values[self.index(self.offset_index(offset), target, source)]
    }

    /// All entries of one source orientation, offset-fastest then target.
    pub fn column(&self, source: usize) -> &[f64] {
        let len = self.offsets() * self.orientations();
        &self.values[source * len..(source + 1) * len]
    }

    /// Aliases the table onto a periodic cube of odd side `period`: offsets
    /// congruent modulo `period` are summed into `[-r, r]³`, `r = period / 2`.
    /// Periodic convolution on such a grid is unchanged by folding.
    pub fn fold_periodic(&self, period: usize) -> Result<KernelTable, Error> {
        if period.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!("fold period must be odd, got {period}")));
        }
        let r = period / 2;
        let mut folded = KernelTable::empty(r, self.spacing, self.sphere.clone());
        let n = self.orientations();
        let wrap = |c: i64| (c + r as i64).rem_euclid(period as i64) - r as i64;
        for o in 0..self.offsets() {
            let target = folded.offset_index(self.offset(o).map(wrap));
            for j in 0..n {
                for i in 0..n {
                    let at = folded.index(target, i, j);
                    folded.values[at] += self.values[self.index(o, i, j)];
                }
            }
        }
        folded.refresh();
        folded.column_mass = self.column_mass.clone();
        Ok(folded)
    }

    /// `Σ_offsets Σ_targets k · w_target` per source column.
    pub fn column_sums(&self) -> Vec<f64> {
        let weights = self.sphere.weights();
        self.values
            .chunks(self.offsets() * self.orientations())
            .map(|col| column_integral(col, weights, self.offsets()))
            .collect()
    }
}

fn offset_count(radius: usize) -> usize {
    (2 * radius + 1).pow(3)
}

fn column_integral(col: &[f64], weights: &[f64], offsets: usize) -> f64 {
    col.chunks(offsets)
        .zip(weights)
        .map(|(target, w)| target.iter().sum::<f64>() * w)
        .sum()
}

/// Tabulates `k(o·spacing, n_i, 0, n_j)` and normalizes each source column.
pub fn build_kernel_table(
    p: &DiffusionParams,
    section: Section,
    radius: usize,
    sphere: Arc<SphereSampling>,
    spacing: f64,
) -> Result<KernelTable, Error> {
    if radius < 1 {
        return Err(Error::InvalidParameter("kernel radius must be ≥ 1".into()));
    }
    if !(spacing.is_finite() && spacing > 0.0) {
        return Err(Error::InvalidParameter(format!("spacing must be positive, got {spacing}")));
    }
    let mut table = KernelTable::empty(radius, spacing, sphere);
    let n = table.orientations();
    let s = table.offsets();
    let offsets: Vec<Vec3> = (0..s)
        .map(|o| Vec3::from(table.offset(o).map(|c| c as f64 * spacing)))
        .collect();
    let points = table.sphere.points().to_vec();
    let origin = Vec3::zeros();
    table
        .values
        .par_chunks_mut(n * s)
        .enumerate()
        .for_each(|(j, col)| {
            let source = &points[j];
            for (i, target) in points.iter().enumerate() {
                for (o, y) in offsets.iter().enumerate() {
                    col[i * s + o] = kernel_two_point(y, target, &origin, source, p, section);
                }
            }
        });
    table.refresh();
    table.normalize();
    Ok(table)
}

/// Smallest radius (at least 1, at most `cap`) whose window holds 99% of the
/// analytic kernel mass at the given parameters.
pub fn default_radius(
    p: &DiffusionParams,
    section: Section,
    sphere: &SphereSampling,
    spacing: f64,
    cap: usize,
) -> usize {
    const MAX_PROBE: i64 = 40;
    let vol = spacing.powi(3);
    let shell_mass = |r: i64| -> f64 {
        let mut total = 0.0;
        for z in -r..=r {
            for y in -r..=r {
                for x in -r..=r {
                    if x.abs().max(y.abs()).max(z.abs()) != r {
                        continue;
                    }
                    let pos = Vec3::new(x as f64, y as f64, z as f64) * spacing;
                    for (n, w) in sphere.points().iter().zip(sphere.weights()) {
                        total += kernel_quotient(&pos, n, p, section) * w;
                    }
                }
            }
        }
        total * vol
    };
    let mut cumulative = vec![shell_mass(0)];
    for r in 1..=MAX_PROBE {
        let shell = shell_mass(r);
        let total = cumulative[r as usize - 1] + shell;
        cumulative.push(total);
        if r as usize >= cap && shell <= 1e-9 * total {
            break;
        }
    }
    let total = *cumulative.last().unwrap_or(&0.0);
    let r = cumulative
        .iter()
        .position(|&m| m >= 0.99 * total)
        .unwrap_or(cap);
    r.clamp(1, cap.max(1))
}

/// `W(y, n_i) = Σ_o Σ_j k(o, i, j) U(y - o, n_j) w_j` with zero padding.
pub fn shift_twist_convolve(k: &KernelTable, u: &FodField) -> Result<FodField, Error> {
    shift_twist_convolve_with(k, u, Boundary::Zero)
}

/// Shift-twist convolution with an explicit boundary treatment.
///
/// Every output element accumulates its terms offset-major, then by source
/// orientation, so results do not depend on the number of worker threads.
pub fn shift_twist_convolve_with(k: &KernelTable, u: &FodField, boundary: Boundary) -> Result<FodField, Error> {
    if k.sphere.as_ref() != u.sphere.as_ref() {
        return Err(Error::SphereMismatch(format!(
            "kernel has {} orientations, field has {}",
            k.orientations(),
            u.sphere.len()
        )));
    }
    if k.spacing != u.grid.spacing() {
        return Err(Error::InvalidParameter(format!(
            "kernel spacing {} differs from grid spacing {}",
            k.spacing,
            u.grid.spacing()
        )));
    }
    let grid = u.grid;
    let plane_len = grid.len();
    let n = k.orientations();
    let mut out = vec![0.0; plane_len * n];
    out.par_chunks_mut(plane_len).enumerate().for_each(|(i, plane)| {
        for o in 0..k.offsets() {
            let offset = k.offset(o);
            for j in 0..n {
                let c = k.transition[k.index(o, i, j)];
                if c == 0.0 {
                    continue;
                }
                accumulate_shifted(plane, u.plane(j), c, offset, grid.dims(), boundary);
            }
        }
    });
    Ok(FodField {
        grid,
        sphere: u.sphere.clone(),
        values: out,
    })
}

/// `out[y] += c · src[y - offset]`
fn accumulate_shifted(out: &mut [f64], src: &[f64], c: f64, offset: [i64; 3], dims: [usize; 3], boundary: Boundary) {
    let [nx, ny, nz] = dims.map(|d| d as i64);
    let [ox, oy, oz] = offset;
    for z in 0..nz {
        let Some(sz) = shift(z, oz, nz, boundary) else { continue };
        for y in 0..ny {
            let Some(sy) = shift(y, oy, ny, boundary) else { continue };
            let row_out = ((z * ny + y) * nx) as usize;
            let row_src = ((sz * ny + sy) * nx) as usize;
            match boundary {
                Boundary::Zero => {
                    let lo = ox.max(0);
                    let hi = (nx + ox).min(nx);
                    for x in lo..hi {
                        out[row_out + x as usize] += c * src[row_src + (x - ox) as usize];
                    }
                }
                Boundary::Periodic => {
                    for x in 0..nx {
                        let sx = (x - ox).rem_euclid(nx);
                        out[row_out + x as usize] += c * src[row_src + sx as usize];
                    }
                }
            }
        }
    }
}

fn shift(coord: i64, offset: i64, len: i64, boundary: Boundary) -> Option<i64> {
    let s = coord - offset;
    match boundary {
        Boundary::Zero => (0..len).contains(&s).then_some(s),
        Boundary::Periodic => Some(s.rem_euclid(len)),
    }
}

/// Enhancement: convolution with the analytic kernel table. `radius = None`
/// picks [`default_radius`].
pub fn enhance(
    u: &FodField,
    p: &DiffusionParams,
    radius: Option<usize>,
    section: Section,
    boundary: Boundary,
) -> Result<FodField, Error> {
    let spacing = u.grid.spacing();
    let radius = radius.unwrap_or_else(|| default_radius(p, section, &u.sphere, spacing, DEFAULT_RADIUS_CAP));
    let table = build_kernel_table(p, section, radius, u.sphere.clone(), spacing)?;
    shift_twist_convolve_with(&table, u, boundary)
}

/// Index of the sample matching `R n` for every sample `n`, if the sampling is
/// closed under the rotation.
pub fn sphere_permutation(sphere: &SphereSampling, rotate: impl Fn(&Vec3) -> Vec3) -> Option<Vec<usize>> {
    sphere
        .points()
        .iter()
        .map(|n: &Orientation| sphere.find(&rotate(n.vector()), 1e-9))
        .collect()
}
