//! Gaussian estimates of the hypo-elliptic diffusion kernel built from the
//! SE(3) logarithm, and their restriction to ℝ³⋊S² through a section.

use std::f64::consts::PI;

use crate::discretization::SphereSampling;
use crate::lie_se3::{LieCoefficients, Orientation, RigidMotion, Rotation, Vec3};
use crate::Error;

/// Spatial diffusivity `d33`, angular diffusivity `d44` (= `d55`) and
/// evolution time `t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiffusionParams {
    d33: f64,
    d44: f64,
    t: f64,
}

impl DiffusionParams {
    pub fn new(d33: f64, d44: f64, t: f64) -> Result<Self, Error> {
        for (name, v) in [("d33", d33), ("d44", d44), ("t", t)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(DiffusionParams { d33, d44, t })
    }

    pub fn d33(&self) -> f64 {
        self.d33
    }

    pub fn d44(&self) -> f64 {
        self.d44
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn with_t(&self, t: f64) -> Result<Self, Error> {
        DiffusionParams::new(self.d33, self.d44, t)
    }

    /// `(4π t² D33 D44)⁻²`, the kernel value at the identity.
    pub fn prefactor(&self) -> f64 {
        let s = 4.0 * PI * self.t * self.t * self.d33 * self.d44;
        1.0 / (s * s)
    }
}

/// Choice of the free angle α in the representative rotation
/// `R_z(γ) R_y(β) R_z(α)` of an orientation `n(β, γ)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Section {
    /// α = -γ, invariant under inversion.
    New,
    /// α = 0.
    Zero,
}

impl Section {
    /// The rotation representing `n` on this section; it maps `e_z` to `n`.
    pub fn representative(&self, n: &Orientation) -> Rotation {
        let (beta, gamma) = n.beta_gamma();
        let alpha = match self {
            Section::New => -gamma,
            Section::Zero => 0.0,
        };
        Rotation::euler_zyz(gamma, beta, alpha)
    }
}

/// Smoothed weighted modulus of the logarithm:
///
/// `⁴√( (c1² + c2²)/(D33 D44) + c6²/D44 + (c3²/D33 + (c4² + c5²)/D44)² )`
pub fn weighted_modulus(c: &LieCoefficients, p: &DiffusionParams) -> f64 {
    weighted_modulus_squared(c, p).sqrt()
}

fn weighted_modulus_squared(c: &LieCoefficients, p: &DiffusionParams) -> f64 {
    let [c1, c2, c3, c4, c5, c6] = c.to_array();
    let inner = c3 * c3 / p.d33 + (c4 * c4 + c5 * c5) / p.d44;
    ((c1 * c1 + c2 * c2) / (p.d33 * p.d44) + c6 * c6 / p.d44 + inner * inner).sqrt()
}

/// Kernel estimate on the group: `(4π t² D33 D44)⁻² exp(-|log g|²/(4t))`.
pub fn kernel_log(g: &RigidMotion, p: &DiffusionParams) -> f64 {
    let m2 = weighted_modulus_squared(&g.log(), p);
    p.prefactor() * (-m2 / (4.0 * p.t)).exp()
}

/// Kernel on ℝ³⋊S²: the group estimate at `(y, R_n)` with `R_n` taken from
/// `section`.
pub fn kernel_quotient(y: &Vec3, n: &Orientation, p: &DiffusionParams, section: Section) -> f64 {
    kernel_log(&RigidMotion::new(*y, section.representative(n)), p)
}

/// Two-point kernel `k(y, n, y2, n2) = p(R_{n2}ᵀ(y - y2), R_{n2}ᵀ n)`.
pub fn kernel_two_point(
    y: &Vec3,
    n: &Orientation,
    y2: &Vec3,
    n2: &Orientation,
    p: &DiffusionParams,
    section: Section,
) -> f64 {
    let r2 = section.representative(n2);
    let rel_y = r2.apply_inverse(&(y - y2));
    let rel_n = Orientation::from_unit_unchecked(r2.apply_inverse(n.vector()));
    kernel_quotient(&rel_y, &rel_n, p, section)
}

/// Σ |k(y, n, 0, e_z) - k(0, e_z, y, n)| over the integer grid `[-r, r]³` and
/// all sampled orientations.
pub fn asymmetry_sum(
    grid_radius: u32,
    sphere: &SphereSampling,
    p: &DiffusionParams,
    section: Section,
) -> f64 {
    let r = grid_radius as i64;
    let origin = Vec3::zeros();
    let ez = Orientation::e_z();
    let mut total = 0.0;
    for z in -r..=r {
        for yy in -r..=r {
            for x in -r..=r {
                let y = Vec3::new(x as f64, yy as f64, z as f64);
                for n in sphere.points() {
                    let forward = kernel_two_point(&y, n, &origin, &ez, p, section);
                    let backward = kernel_two_point(&origin, &ez, &y, n, p, section);
                    total += (forward - backward).abs();
                }
            }
        }
    }
    total
}
