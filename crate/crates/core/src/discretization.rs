//! Sphere samplings with spherical-Voronoi quadrature weights, and the voxel
//! grid convention.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::Write;

use crate::lie_se3::{Orientation, Vec3};
use crate::Error;

pub const MAX_LEVEL: u32 = 5;

/// Which base polyhedron a sampling was subdivided from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SphereKind {
    Icosphere(u8),
    Octasphere(u8),
    Custom,
}

/// Points on S² with quadrature weights and triangle connectivity.
#[derive(Clone, Debug, PartialEq)]
pub struct SphereSampling {
    kind: SphereKind,
    points: Vec<Orientation>,
    weights: Vec<f64>,
    triangles: Vec<[usize; 3]>,
    antipodal: Option<Vec<usize>>,
}

impl SphereSampling {
    /// Subdivided icosahedron with `10·4^level + 2` vertices.
    ///
    /// The base icosahedron has 2-fold symmetry axes along x, y and z, so from
    /// level 1 on the sampling contains `±e_z`.
    pub fn icosphere(level: u32) -> Result<Self, Error> {
        if level > MAX_LEVEL {
            return Err(Error::LevelTooLarge(level));
        }
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        let vertices = vec![
            Vec3::new(-1.0, phi, 0.0),
            Vec3::new(1.0, phi, 0.0),
            Vec3::new(-1.0, -phi, 0.0),
            Vec3::new(1.0, -phi, 0.0),
            Vec3::new(0.0, -1.0, phi),
            Vec3::new(0.0, 1.0, phi),
            Vec3::new(0.0, -1.0, -phi),
            Vec3::new(0.0, 1.0, -phi),
            Vec3::new(phi, 0.0, -1.0),
            Vec3::new(phi, 0.0, 1.0),
            Vec3::new(-phi, 0.0, -1.0),
            Vec3::new(-phi, 0.0, 1.0),
        ];
        let faces = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        let (v, f) = subdivide_n(vertices, faces, level);
        Ok(Self::from_mesh(SphereKind::Icosphere(level as u8), v, f))
    }

    /// Subdivided octahedron with `4^(level+1) + 2` vertices; invariant under
    /// quarter turns about the coordinate axes.
    pub fn octasphere(level: u32) -> Result<Self, Error> {
        if level > MAX_LEVEL {
            return Err(Error::LevelTooLarge(level));
        }
        let vertices = vec![
            Vec3::x(),
            -Vec3::x(),
            Vec3::y(),
            -Vec3::y(),
            Vec3::z(),
            -Vec3::z(),
        ];
        let faces = vec![
            [0, 2, 4],
            [2, 1, 4],
            [1, 3, 4],
            [3, 0, 4],
            [2, 0, 5],
            [1, 2, 5],
            [3, 1, 5],
            [0, 3, 5],
        ];
        let (v, f) = subdivide_n(vertices, faces, level);
        Ok(Self::from_mesh(SphereKind::Octasphere(level as u8), v, f))
    }

    /// Builds a sampling from a closed triangle mesh whose vertices lie on (or
    /// are projected to) the unit sphere. Weights are spherical Voronoi areas.
    pub fn from_mesh(kind: SphereKind, vertices: Vec<Vec3>, mut triangles: Vec<[usize; 3]>) -> Self {
        let points: Vec<Vec3> = vertices.iter().map(|v| v.normalize()).collect();
        for t in triangles.iter_mut() {
            let (a, b, c) = (points[t[0]], points[t[1]], points[t[2]]);
            if (b - a).cross(&(c - a)).dot(&(a + b + c)) < 0.0 {
                t.swap(1, 2);
            }
        }
        let weights = voronoi_areas(&points, &triangles);
        SphereSampling {
            kind,
            points: points.into_iter().map(Orientation::from_unit_unchecked).collect(),
            weights,
            triangles,
            antipodal: None,
        }
    }

    pub fn kind(&self) -> SphereKind {
        self.kind
    }

    /// Subdivision level when this is an icosphere.
    pub fn icosphere_level(&self) -> Option<u8> {
        match self.kind {
            SphereKind::Icosphere(l) => Some(l),
            _ => None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Orientation] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn antipodal_map(&self) -> Option<&[usize]> {
        self.antipodal.as_deref()
    }

    /// Unique undirected edges of the mesh, `(i, j)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<(usize, usize)> = self
            .triangles
            .iter()
            .flat_map(|t| [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])])
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    /// Index of the sample closest to `n`.
    pub fn nearest(&self, n: &Vec3) -> usize {
        let mut best = 0;
        let mut best_dot = f64::NEG_INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d = p.vector().dot(n);
            if d > best_dot {
                best_dot = d;
                best = i;
            }
        }
        best
    }

    /// Index of a sample within `tol` radians of `n`, if any.
    pub fn find(&self, n: &Vec3, tol: f64) -> Option<usize> {
        let i = self.nearest(n);
        let target = Orientation::new(*n).ok()?;
        (self.points[i].angle_to(&target) <= tol).then_some(i)
    }

    /// Pairs every point with its antipode.
    pub fn antipodalize(mut self) -> Result<Self, Error> {
        let mut map = Vec::with_capacity(self.len());
        for (i, p) in self.points.iter().enumerate() {
            let j = self
                .find(&(-p.vector()), 1e-9)
                .ok_or(Error::NoAntipode { index: i })?;
            map.push(j);
        }
        self.antipodal = Some(map);
        Ok(self)
    }

    /// Writes `index n_x n_y n_z weight` rows.
    pub fn write_table<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# index\tn_x\tn_y\tn_z\tweight")?;
        for (i, (p, w)) in self.points.iter().zip(&self.weights).enumerate() {
            let v = p.vector();
            writeln!(out, "{i}\t{}\t{}\t{}\t{}", v.x, v.y, v.z, w)?;
        }
        Ok(())
    }
}

fn subdivide_n(mut vertices: Vec<Vec3>, mut faces: Vec<[usize; 3]>, level: u32) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    for v in vertices.iter_mut() {
        *v = v.normalize();
    }
    for _ in 0..level {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vec3>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                verts.push((verts[a] + verts[b]).normalize());
                verts.len() - 1
            })
        };
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    (vertices, faces)
}

/// Signed area of the spherical triangle `abc` (positive when counter-clockwise
/// seen from outside).
fn spherical_triangle_area(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    let det = a.dot(&b.cross(c));
    let denom = 1.0 + a.dot(b) + b.dot(c) + c.dot(a);
    2.0 * det.atan2(denom)
}

/// Spherical Voronoi cell areas. Each triangle is split at its circumcenter
/// and edge midpoints into six pieces, two per corner.
fn voronoi_areas(points: &[Vec3], triangles: &[[usize; 3]]) -> Vec<f64> {
    let mut areas = vec![0.0; points.len()];
    for t in triangles {
        let [a, b, c] = t.map(|i| points[i]);
        let mut cc = (b - a).cross(&(c - a)).normalize();
        if cc.dot(&(a + b + c)) < 0.0 {
            cc = -cc;
        }
        for k in 0..3 {
            let v = points[t[k]];
            let next = points[t[(k + 1) % 3]];
            let prev = points[t[(k + 2) % 3]];
            let m_next = (v + next).normalize();
            let m_prev = (v + prev).normalize();
            areas[t[k]] += spherical_triangle_area(&v, &m_next, &cc)
                + spherical_triangle_area(&v, &cc, &m_prev);
        }
    }
    areas
}

/// Total solid angle, 4π.
pub const FULL_SPHERE: f64 = 4.0 * PI;

/// Regular voxel grid with isotropic spacing. Linear indices run x-fastest.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    dims: [usize; 3],
    spacing: f64,
}

impl GridSpec {
    pub fn new(dims: [usize; 3], spacing: f64) -> Result<Self, Error> {
        if dims.contains(&0) {
            return Err(Error::InvalidParameter(format!("grid dims must be ≥ 1, got {dims:?}")));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::InvalidParameter(format!("grid spacing must be positive, got {spacing}")));
        }
        Ok(GridSpec { dims, spacing })
    }

    /// Cube of side `2·radius + 1` with unit spacing.
    pub fn cube(radius: usize) -> Self {
        GridSpec::new([2 * radius + 1; 3], 1.0).expect("valid cube grid")
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing().powi(3)
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    pub fn coords(&self, index: usize) -> [usize; 3] {
        let x = index % self.dims[0];
        let y = (index / self.dims[0]) % self.dims[1];
        let z = index / (self.dims[0] * self.dims[1]);
        [x, y, z]
    }

    pub fn center(&self) -> [usize; 3] {
        self.dims.map(|d| d / 2)
    }
}
