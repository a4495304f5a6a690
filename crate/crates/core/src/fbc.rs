//! Fiber-to-bundle coherence (FBC).
//!
//! Every streamline point `(y, ±n)` becomes a delta in ℝ³⋊S²; the density
//! `W = p_t ∗ U` is evaluated back at the fiber points with the symmetric
//! two-point kernel, so each unordered pair of points needs one evaluation.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::kernel::{kernel_two_point, DiffusionParams, Section};
use crate::lie_se3::{Orientation, Vec3};
use crate::Error;

/// Consecutive points closer than this are merged at ingestion.
pub const DUPLICATE_TOLERANCE: f64 = 1e-9;

/// Default half-width of the local FBC window, in points.
pub const DEFAULT_WINDOW: usize = 5;

const TILE: usize = 64;

/// An ordered polyline with one unit tangent per point.
#[derive(Clone, Debug, PartialEq)]
pub struct Streamline {
    points: Vec<Vec3>,
    tangents: Vec<Orientation>,
}

impl Streamline {
    /// Drops consecutive duplicate points, then derives tangents.
    pub fn new(points: Vec<Vec3>) -> Result<Self, Error> {
        let points = remove_duplicates(points, DUPLICATE_TOLERANCE);
        let tangents = compute_tangents(&points)?;
        Ok(Streamline { points, tangents })
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn tangents(&self) -> &[Orientation] {
        &self.tangents
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub fn remove_duplicates(points: Vec<Vec3>, tol: f64) -> Vec<Vec3> {
    let mut out: Vec<Vec3> = Vec::with_capacity(points.len());
    for p in points {
        if out.last().is_none_or(|q| (p - q).norm() > tol) {
            out.push(p);
        }
    }
    out
}

/// Forward differences `(p_{j+1} - p_j)/‖·‖`; the last point reuses the
/// previous tangent.
pub fn compute_tangents(points: &[Vec3]) -> Result<Vec<Orientation>, Error> {
    if points.len() < 2 {
        return Err(Error::DegenerateFiber { fiber: 0 });
    }
    let mut tangents = points
        .windows(2)
        .map(|w| Orientation::new(w[1] - w[0]).map_err(|_| Error::DegenerateFiber { fiber: 0 }))
        .collect::<Result<Vec<_>, _>>()?;
    tangents.push(tangents[tangents.len() - 1]);
    Ok(tangents)
}

/// A set of streamlines.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Tractogram {
    fibers: Vec<Streamline>,
}

impl Tractogram {
    pub fn new(fibers: Vec<Streamline>) -> Self {
        Tractogram { fibers }
    }

    /// Builds streamlines from raw point lists; errors name the failing fiber.
    pub fn from_point_lists(lists: Vec<Vec<Vec3>>) -> Result<Self, Error> {
        let fibers = lists
            .into_iter()
            .enumerate()
            .map(|(i, pts)| {
                Streamline::new(pts).map_err(|e| match e {
                    Error::DegenerateFiber { .. } => Error::DegenerateFiber { fiber: i },
                    other => other,
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Tractogram { fibers })
    }

    pub fn fibers(&self) -> &[Streamline] {
        &self.fibers
    }

    pub fn len(&self) -> usize {
        self.fibers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fibers.is_empty()
    }

    pub fn n_total(&self) -> usize {
        self.fibers.iter().map(Streamline::len).sum()
    }

    /// Index of the first point of each fiber in the global point order.
    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.fibers
            .iter()
            .map(|f| {
                let start = acc;
                acc += f.len();
                start
            })
            .collect()
    }
}

/// Density at every fiber point (global point order) and the number of
/// pair evaluations spent on it.
#[derive(Clone, Debug, PartialEq)]
pub struct PointDensity {
    pub values: Vec<f64>,
    pub pair_evaluations: u64,
}

#[derive(Clone, Copy)]
struct Sample {
    y: Vec3,
    n: Orientation,
}

/// Representative of `±n`: the first nonzero component among z, y, x is
/// positive. Negative zeros are cleared.
fn canonical_sign(n: &Orientation) -> Orientation {
    let v = n.vector();
    let flip = [v.z, v.y, v.x]
        .into_iter()
        .find(|c| *c != 0.0)
        .is_some_and(|c| c < 0.0);
    let v = if flip { -v } else { *v };
    Orientation::from_unit_unchecked(v.map(|c| c + 0.0))
}

fn sample_order(a: &Sample, b: &Sample) -> Ordering {
    let ka = [a.y.x, a.y.y, a.y.z, a.n.vector().x, a.n.vector().y, a.n.vector().z];
    let kb = [b.y.x, b.y.y, b.y.z, b.n.vector().x, b.n.vector().y, b.n.vector().z];
    ka.iter()
        .zip(&kb)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// `Σ_σ k(a, σ b)`, evaluated in a content-determined order so the value is
/// bitwise symmetric in its arguments.
fn pair_value(a: &Sample, b: &Sample, p: &DiffusionParams) -> f64 {
    let (first, second) = match sample_order(a, b) {
        Ordering::Greater => (b, a),
        _ => (a, b),
    };
    kernel_two_point(&first.y, &first.n, &second.y, &second.n, p, Section::New)
        + kernel_two_point(&first.y, &first.n, &second.y, &second.n.negated(), p, Section::New)
}

/// `W(y_a, n_a) = (1/N_tot) Σ_b Σ_{σ=±1} k(y_a, n_a, y_b, σ n_b)` at every
/// fiber point, with one kernel-pair evaluation per unordered pair
/// (self pairs included).
///
/// Sums are accumulated exactly and rounded once, so the result does not
/// depend on the order of fibers, the signs of tangents or the thread count.
pub fn fiber_density(tr: &Tractogram, p: &DiffusionParams) -> Result<PointDensity, Error> {
    let n_total = tr.n_total();
    if n_total == 0 {
        return Err(Error::EmptyTractogram);
    }
    let samples: Vec<Sample> = tr
        .fibers
        .iter()
        .flat_map(|f| f.points.iter().zip(&f.tangents))
        .map(|(y, n)| Sample {
            y: *y,
            n: canonical_sign(n),
        })
        .collect();

    let blocks = n_total.div_ceil(TILE);
    let block = |b: usize| b * TILE..((b + 1) * TILE).min(n_total);
    let mut acc = vec![ExactSum::default(); n_total];
    let mut evaluations = 0u64;
    for col in 0..blocks {
        let tiles: Vec<(usize, Vec<f64>)> = (0..=col)
            .into_par_iter()
            .map(|row| {
                let mut tile = Vec::with_capacity(TILE * TILE);
                for a in block(row) {
                    for b in block(col) {
                        if b >= a {
                            tile.push(pair_value(&samples[a], &samples[b], p));
                        }
                    }
                }
                (row, tile)
            })
            .collect();
        for (row, tile) in tiles {
            let mut values = tile.into_iter();
            for a in block(row) {
                for b in block(col) {
                    if b < a {
                        continue;
                    }
                    let e = values.next().expect("tile size");
                    evaluations += 1;
                    acc[a].add(e);
                    if a != b {
                        acc[b].add(e);
                    }
                }
            }
        }
    }
    let scale = n_total as f64;
    Ok(PointDensity {
        values: acc.iter().map(|s| s.value() / scale).collect(),
        pair_evaluations: evaluations,
    })
}

/// Local FBC window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Window {
    /// The whole fiber.
    Whole,
    /// `2w + 1` points centered on each point, clipped at the fiber ends.
    HalfWidth(usize),
}

/// Per-point and per-fiber coherence scores.
#[derive(Clone, Debug, PartialEq)]
pub struct FbcResult {
    pub point_density: Vec<f64>,
    /// Sum of the point densities of each fiber.
    pub fiber_fbc: Vec<f64>,
    /// `fiber_fbc / N_i`
    pub normalized_fbc: Vec<f64>,
    /// Windowed sums, in global point order.
    pub local_fbc: Vec<f64>,
    /// Minimum local FBC of each fiber.
    pub min_local_fbc: Vec<f64>,
}

pub fn fbc_scores(tr: &Tractogram, density: &[f64], window: Window) -> Result<FbcResult, Error> {
    if density.len() != tr.n_total() {
        return Err(Error::InvalidParameter(format!(
            "{} densities for {} fiber points",
            density.len(),
            tr.n_total()
        )));
    }
    if window == Window::HalfWidth(0) {
        return Err(Error::InvalidParameter("local FBC window must be ≥ 1".into()));
    }
    let mut fiber_fbc = Vec::with_capacity(tr.len());
    let mut normalized_fbc = Vec::with_capacity(tr.len());
    let mut local_fbc = Vec::with_capacity(density.len());
    let mut min_local_fbc = Vec::with_capacity(tr.len());
    for (fiber, start) in tr.fibers.iter().zip(tr.offsets()) {
        let d = &density[start..start + fiber.len()];
        let total: f64 = d.iter().sum();
        fiber_fbc.push(total);
        normalized_fbc.push(total / d.len() as f64);
        let local: Vec<f64> = match window {
            Window::Whole => vec![total; d.len()],
            Window::HalfWidth(w) => (0..d.len())
                .map(|j| d[j.saturating_sub(w)..(j + w + 1).min(d.len())].iter().sum())
                .collect(),
        };
        min_local_fbc.push(local.iter().copied().fold(f64::INFINITY, f64::min));
        local_fbc.extend(local);
    }
    Ok(FbcResult {
        point_density: density.to_vec(),
        fiber_fbc,
        normalized_fbc,
        local_fbc,
        min_local_fbc,
    })
}

/// Score used to keep or drop a fiber.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FilterMode {
    /// Length-normalized fiber FBC.
    PerFiber,
    /// Minimum local FBC along the fiber.
    PerPointMin,
}

/// Keeps the fibers whose score is at least `threshold`.
pub fn filter_tractogram(tr: &Tractogram, result: &FbcResult, threshold: f64, mode: FilterMode) -> Tractogram {
    let scores = match mode {
        FilterMode::PerFiber => &result.normalized_fbc,
        FilterMode::PerPointMin => &result.min_local_fbc,
    };
    Tractogram::new(
        tr.fibers
            .iter()
            .zip(scores)
            .filter(|(_, s)| **s >= threshold)
            .map(|(f, _)| f.clone())
            .collect(),
    )
}

/// Exact floating-point accumulator with a correctly rounded result
/// (Shewchuk's nonoverlapping partials, as in Python's `math.fsum`).
#[derive(Clone, Debug, Default)]
pub struct ExactSum {
    partials: Vec<f64>,
}

impl ExactSum {
    pub fn add(&mut self, mut x: f64) {
        let mut i = 0;
        for j in 0..self.partials.len() {
            let mut y = self.partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        self.partials.truncate(i);
        self.partials.push(x);
    }

    pub fn value(&self) -> f64 {
        let p = &self.partials;
        let mut n = p.len();
        if n == 0 {
            return 0.0;
        }
        n -= 1;
        let mut hi = p[n];
        let mut lo = 0.0;
        while n > 0 {
            let x = hi;
            n -= 1;
            let y = p[n];
            hi = x + y;
            let yr = hi - x;
            lo = y - yr;
            if lo != 0.0 {
                break;
            }
        }
        if n > 0 && ((lo < 0.0 && p[n - 1] < 0.0) || (lo > 0.0 && p[n - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            if y == x - hi {
                hi = x;
            }
        }
        hi
    }
}

/// Synthetic bundle: `count` parallel straight fibers along z on an xy lattice
/// with the given spacing, plus one fiber that starts at the bundle axis and
/// leaves it at 45° from its midpoint. Points are one length unit apart and
/// every fiber has `length + 1` of them.
///
/// Returns the tractogram and the index of the diverging fiber (the last one).
pub fn synthetic_bundle(count: usize, length: usize, spacing: f64) -> (Tractogram, usize) {
    let cols = (count as f64).sqrt().ceil() as usize;
    let mut lists = Vec::with_capacity(count + 1);
    for f in 0..count {
        let (x, y) = ((f % cols) as f64 * spacing, (f / cols) as f64 * spacing);
        lists.push((0..=length).map(|k| Vec3::new(x, y, k as f64)).collect::<Vec<_>>());
    }
    let rows = count.div_ceil(cols);
    let (cx, cy) = ((cols as f64 - 1.0) / 2.0 * spacing, (rows as f64 - 1.0) / 2.0 * spacing);
    let half = length / 2;
    let step = std::f64::consts::FRAC_1_SQRT_2;
    let mut outlier: Vec<Vec3> = (0..=half).map(|k| Vec3::new(cx, cy, k as f64)).collect();
    for k in 1..=(length - half) {
        let s = k as f64 * step;
        outlier.push(Vec3::new(cx + s, cy, half as f64 + s));
    }
    lists.push(outlier);
    let tr = Tractogram::from_point_lists(lists).expect("synthetic fibers are valid");
    (tr, count)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_line_tangents() {
        let pts: Vec<Vec3> = (0..5).map(|k| Vec3::new(1.0, 2.0, k as f64 * 0.5)).collect();
        let t = compute_tangents(&pts).unwrap();
        assert_eq!(t.len(), 5);
        assert!(t.iter().all(|n| *n.vector() == Vec3::z()));
    }

    #[test]
    fn corner_tangents() {
        let pts = vec![Vec3::zeros(), Vec3::x(), Vec3::new(1.0, 1.0, 0.0), Vec3::new(1.0, 2.0, 0.0)];
        let t = compute_tangents(&pts).unwrap();
        assert_eq!(*t[0].vector(), Vec3::x());
        assert_eq!(*t[1].vector(), Vec3::y());
        assert_eq!(t[3], t[2]);
    }

    #[test]
    fn degenerate_fibers() {
        assert!(matches!(
            Streamline::new(vec![Vec3::zeros(), Vec3::new(0.0, 0.0, 1e-12)]),
            Err(Error::DegenerateFiber { .. })
        ));
        let err = Tractogram::from_point_lists(vec![
            vec![Vec3::zeros(), Vec3::x()],
            vec![Vec3::x()],
        ])
        .unwrap_err();
        assert!(matches!(err, Error::DegenerateFiber { fiber: 1 }));
        let s = Streamline::new(vec![Vec3::zeros(), Vec3::zeros(), Vec3::x()]).unwrap();
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn empty_tractogram_is_rejected() {
        let p = DiffusionParams::new(1.0, 0.02, 2.0).unwrap();
        assert!(matches!(fiber_density(&Tractogram::default(), &p), Err(Error::EmptyTractogram)));
    }

    #[test]
    fn exact_sum_is_correctly_rounded() {
        let total = |xs: &[f64]| {
            let mut s = ExactSum::default();
            xs.iter().for_each(|&x| s.add(x));
            s.value()
        };
        assert_eq!(total(&[0.1; 10]), 1.0);
        let xs = [1e100, 1.0, -1e100, 1e-100, 1e50, -1.0, -1e50];
        assert_eq!(total(&xs), 1e-100);
        let mut rev = xs;
        rev.reverse();
        assert_eq!(total(&rev), 1e-100);
        assert_eq!(total(&[1.0, 2.0f64.powi(-53), 2.0f64.powi(-106)]), 1.0 + 2.0f64.powi(-52));
        assert_eq!(total(&[]), 0.0);
    }

    #[test]
    fn canonical_sign_is_flip_invariant() {
        for v in [Vec3::new(0.3, -0.2, 0.9), Vec3::new(0.6, -0.8, 0.0), Vec3::new(-1.0, 0.0, 0.0)] {
            let n = Orientation::new(v).unwrap();
            assert_eq!(canonical_sign(&n), canonical_sign(&n.negated()));
        }
    }

    #[test]
    fn two_identical_fibers_get_identical_densities() {
        let p = DiffusionParams::new(1.0, 0.02, 2.0).unwrap();
        let pts = vec![Vec3::zeros(), Vec3::new(0.0, 0.5, 1.0)];
        let tr = Tractogram::from_point_lists(vec![pts.clone(), pts]).unwrap();
        let d = fiber_density(&tr, &p).unwrap();
        assert_eq!(d.values[0], d.values[2]);
        assert_eq!(d.values[1], d.values[3]);
        assert_eq!(d.pair_evaluations, 10);
    }

    #[test]
    fn whole_window_and_filter_edges() {
        let (tr, _) = synthetic_bundle(4, 6, 1.0);
        let density: Vec<f64> = (0..tr.n_total()).map(|i| 1.0 + i as f64).collect();
        let r = fbc_scores(&tr, &density, Window::Whole).unwrap();
        let first: f64 = density[..tr.fibers()[0].len()].iter().sum();
        assert_eq!(r.fiber_fbc[0], first);
        assert_eq!(r.local_fbc[0], first);
        assert!(fbc_scores(&tr, &density, Window::HalfWidth(0)).is_err());
        assert_eq!(filter_tractogram(&tr, &r, 0.0, FilterMode::PerFiber), tr);
        let max = r.normalized_fbc.iter().copied().fold(0.0, f64::max);
        assert!(filter_tractogram(&tr, &r, max * 2.0, FilterMode::PerFiber).is_empty());
    }

    #[test]
    fn clipped_local_window() {
        let tr = Tractogram::from_point_lists(vec![(0..4).map(|k| Vec3::new(0.0, 0.0, k as f64)).collect()]).unwrap();
        let r = fbc_scores(&tr, &[1.0, 2.0, 3.0, 4.0], Window::HalfWidth(1)).unwrap();
        assert_eq!(r.local_fbc, vec![3.0, 6.0, 9.0, 7.0]);
        assert_eq!(r.min_local_fbc, vec![3.0]);
        assert_eq!(r.normalized_fbc, vec![2.5]);
    }
}
