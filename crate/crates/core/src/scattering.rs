//! Two-body scattering for radial repulsive potentials.
//!
//! All quantities are microscopic and dimensionless. For relative speed
//! `|w|` and impact parameter `r` the relative motion obeys `ÿ = -∇φ(y)`,
//! the turning radius `ρ⋆` is the largest root of
//! `1 - 2ψ(ρ)/|w|² - r²/ρ²`, and the deviation angle is
//!
//! ```text
//! θ = π - 2 ∫_{ρ⋆}^∞ r dρ / (ρ² √(1 - 2ψ(ρ)/|w|² - r²/ρ²)).
//! ```
//!
//! With `y = ρ⋆/ρ` and `b = r/ρ⋆` the integral becomes
//! `θ/2 = ∫₀¹ [1/√A - 1/√(A+q)] dy` with `A = 1 - y²` and
//! `q = 2(ψ(ρ⋆) - ψ(ρ⋆/y)) / (|w|² b²)`. The bracket is evaluated as
//! `q / (√A √(A+q) (√A + √(A+q)))`, which keeps full relative accuracy for
//! grazing encounters, and `y = 1 - u²` removes the endpoint singularity.
//! Where a truncated potential vanishes (`ρ ≥ R`) the bracket integrates in
//! closed form.

use crate::error::{invalid, Error, Result};
use crate::potentials::RadialPotential;
use crate::quadrature::{integrate, QuadOptions};
use crate::vec3::Vec3;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

const GL8_NODES: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329_0,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL8_WEIGHTS: [f64; 4] = [
    0.362_683_783_378_362_0,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Which particle recoils in a binary encounter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kinematics {
    /// Both particles recoil; momentum and energy of the pair are conserved.
    EqualMass,
    /// The background particle keeps its velocity; the tagged particle's
    /// velocity relative to it is rotated by `θ`.
    FixedScatterer,
}

/// Orthonormal completion `(b₁, b₂)` of `ŵ`, obtained by Gram–Schmidt
/// against the coordinate axis least aligned with `w`.
pub fn plane_basis(w_hat: Vec3) -> [Vec3; 2] {
    let a = w_hat.0.map(f64::abs);
    let mut k = 0;
    for i in 1..3 {
        if a[i] < a[k] {
            k = i;
        }
    }
    let mut e = Vec3::ZERO;
    e.0[k] = 1.0;
    let b1 = (e - w_hat * e.dot(w_hat))
        .normalized()
        .expect("least aligned axis is never parallel to a unit vector");
    let b2 = w_hat.cross(b1);
    [b1, b2]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpactGeometry {
    pub r: f64,
    pub zeta: f64,
    /// Relative velocity `v⋆ - v`.
    pub w: Vec3,
    pub basis: [Vec3; 2],
}

impl ImpactGeometry {
    pub fn new(r: f64, zeta: f64, w: Vec3) -> Result<Self> {
        if !(r >= 0.0 && r.is_finite()) {
            return Err(invalid(format!("impact parameter must be nonnegative, got {r}")));
        }
        let w_hat = w
            .normalized()
            .ok_or_else(|| invalid("relative velocity must be nonzero"))?;
        Ok(Self {
            r,
            zeta: zeta.rem_euclid(2.0 * PI),
            w,
            basis: plane_basis(w_hat),
        })
    }

    /// Geometry of an encounter from the offset `x⋆ - x` of the background
    /// particle relative to the tagged one, in units of the interaction
    /// scale. `r` is the length of the offset's component orthogonal to `w`
    /// and `ζ` its azimuth in the plane basis.
    pub fn from_offset(offset: Vec3, w: Vec3) -> Result<Self> {
        let w_hat = w
            .normalized()
            .ok_or_else(|| invalid("relative velocity must be nonzero"))?;
        let perp = offset - w_hat * offset.dot(w_hat);
        let basis = plane_basis(w_hat);
        let zeta = perp.dot(basis[1]).atan2(perp.dot(basis[0])).rem_euclid(2.0 * PI);
        Ok(Self {
            r: perp.norm(),
            zeta: if zeta >= 2.0 * PI { 0.0 } else { zeta },
            w,
            basis,
        })
    }

    /// In-plane unit vector `ê(ζ) = cos ζ b₁ + sin ζ b₂`.
    pub fn direction(&self) -> Vec3 {
        self.basis[0] * self.zeta.cos() + self.basis[1] * self.zeta.sin()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterOutcome {
    pub theta: f64,
    pub rho_star: f64,
    /// Tagged velocity after the equal-mass map.
    pub v_prime: Vec3,
    /// Background velocity after the equal-mass map.
    pub v_star_prime: Vec3,
    /// Tagged velocity when the background particle does not recoil.
    pub v_prime_fixed: Vec3,
    /// Time spent with separation below the cutoff radius.
    pub tau_star: Option<f64>,
    pub nu: Vec3,
}

impl ScatterOutcome {
    pub fn tagged_velocity(&self, kinematics: Kinematics) -> Vec3 {
        match kinematics {
            Kinematics::EqualMass => self.v_prime,
            Kinematics::FixedScatterer => self.v_prime_fixed,
        }
    }
}

fn is_inert(p: &RadialPotential, r: f64) -> bool {
    p.is_free() || p.range().is_some_and(|range| r >= range)
}

/// Largest root of `1 - 2ψ(ρ)/|w|² - r²/ρ²`.
pub fn closest_approach(p: &RadialPotential, r: f64, speed: f64) -> Result<f64> {
    if !(speed > 0.0 && speed.is_finite()) {
        return Err(invalid(format!("relative speed must be positive, got {speed}")));
    }
    if !(r >= 0.0 && r.is_finite()) {
        return Err(invalid(format!("impact parameter must be nonnegative, got {r}")));
    }
    if is_inert(p, r) {
        return Ok(r);
    }
    let w2 = speed * speed;
    let h = |rho: f64| rho * rho * (1.0 - 2.0 * p.psi(rho) / w2) - r * r;
    let dh = |rho: f64| 2.0 * rho * (1.0 - 2.0 * p.psi(rho) / w2) - 2.0 * rho * rho * p.dpsi(rho) / w2;

    let mut lo = if r > 0.0 {
        r
    } else {
        let mut lo = 1.0;
        let mut halvings = 0;
        while h(lo) > 0.0 {
            lo *= 0.5;
            halvings += 1;
            if halvings > 1000 {
                return Err(Error::Bracketing {
                    what: "closest approach (inner)",
                    limit: lo,
                });
            }
        }
        lo
    };
    let limit = 1e6 * r.max(1.0);
    let mut hi = 2.0 * r.max(1.0);
    while h(hi) <= 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > limit {
            return Err(Error::Bracketing {
                what: "closest approach",
                limit,
            });
        }
    }
    while hi - lo > 1e-3 * hi {
        let mid = 0.5 * (lo + hi);
        if h(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mut rho = 0.5 * (lo + hi);
    for _ in 0..100 {
        let f = h(rho);
        if f > 0.0 {
            hi = rho;
        } else {
            lo = rho;
        }
        let d = dh(rho);
        let mut next = rho - f / d;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        let done = (next - rho).abs() <= 4.0 * f64::EPSILON * rho || hi - lo <= 4.0 * f64::EPSILON * hi;
        rho = next;
        if done {
            break;
        }
    }
    // a root exact to working precision leaves a residual of order
    // |F'(ρ)| ρ ε_mach, which exceeds 1e-12 at very small |w|
    let residual = (1.0 - 2.0 * p.psi(rho) / w2 - (r / rho).powi(2)).abs();
    let slope = (-2.0 * p.dpsi(rho) / w2 + 2.0 * r * r / rho.powi(3)).abs();
    let requested = 1e-12f64.max(8.0 * f64::EPSILON * rho * slope);
    if residual > requested {
        return Err(Error::ToleranceNotMet {
            what: "closest approach residual",
            requested,
            achieved: residual,
        });
    }
    Ok(rho)
}

/// `ψ(ρ⋆) - ψ(ρ⋆ + h)` for `h ≥ 0`. Close to `ρ⋆` the drop is integrated
/// from the force with Gauss–Legendre panels split at the potential's
/// seams, so it carries relative rather than absolute accuracy. The offset
/// is passed directly so that it is never recovered by cancellation.
fn energy_drop(p: &RadialPotential, rho_star: f64, psi_star: f64, h: f64) -> f64 {
    if h <= 0.0 {
        return 0.0;
    }
    if h >= 0.1 * rho_star {
        return psi_star - p.psi(rho_star + h);
    }
    let mut total = 0.0;
    let mut a = 0.0;
    let breaks = p.breakpoints();
    let mut k = breaks.partition_point(|&b| b <= rho_star);
    loop {
        let b = if k < breaks.len() && breaks[k] - rho_star < h {
            breaks[k] - rho_star
        } else {
            h
        };
        let c = rho_star + 0.5 * (a + b);
        let half = 0.5 * (b - a);
        let mut s = 0.0;
        for (x, wgt) in GL8_NODES.iter().zip(GL8_WEIGHTS) {
            s += wgt * (p.dpsi(c - half * x) + p.dpsi(c + half * x));
        }
        total -= half * s;
        if b >= h {
            break;
        }
        a = b;
        k += 1;
    }
    total.max(0.0)
}

/// Deviation angle with its quadrature error estimate.
pub fn deviation_angle_with_error(p: &RadialPotential, r: f64, speed: f64, tol: f64) -> Result<(f64, f64)> {
    if !(1e-14..=1e-4).contains(&tol) {
        return Err(invalid(format!("angle tolerance {tol:e} outside [1e-14, 1e-4]")));
    }
    let rho_star = closest_approach(p, r, speed)?;
    if is_inert(p, r) {
        return Ok((0.0, 0.0));
    }
    if r == 0.0 {
        return Ok((PI, 0.0));
    }
    let w2 = speed * speed;
    let b2 = (r / rho_star).powi(2);
    let psi_star = p.psi(rho_star);

    // Beyond the range the potential vanishes: y < y_lo contributes in
    // closed form.
    let (y_lo, closed) = match p.range() {
        Some(range) if range > rho_star => {
            let a = rho_star / range;
            let q0 = 2.0 * psi_star / (w2 * b2);
            let arg = a * q0 / ((1.0 + q0).sqrt() * ((1.0 + q0 - a * a).sqrt() + (1.0 - a * a).sqrt()));
            (a, arg.min(1.0).asin())
        }
        _ => (0.0, 0.0),
    };
    let u_max = (1.0 - y_lo).sqrt();
    let integrand = |u: f64| {
        let y = 1.0 - u * u;
        if y <= 0.0 {
            return 0.0;
        }
        let q = 2.0 * energy_drop(p, rho_star, psi_star, rho_star * u * u / y) / (w2 * b2);
        let sa = u * (2.0 - u * u).sqrt();
        let saq = (sa * sa + q).sqrt();
        if saq == 0.0 {
            return 0.0;
        }
        2.0 * q / ((2.0 - u * u).sqrt() * saq * (sa + saq))
    };
    let res = integrate(integrand, 0.0, u_max, QuadOptions::absolute(0.5 * tol), "deviation angle")?;
    let theta = (2.0 * (closed + res.value)).clamp(0.0, PI);
    Ok((theta, 2.0 * res.error))
}

/// Deviation angle `θ(r, |w|) ∈ [0, π]`.
pub fn deviation_angle(p: &RadialPotential, r: f64, speed: f64, tol: f64) -> Result<f64> {
    deviation_angle_with_error(p, r, speed, tol).map(|(theta, _)| theta)
}

/// Unit vector `ν = sin(θ/2) ŵ - cos(θ/2) ê(ζ)`.
pub fn scattering_vector(theta: f64, geometry: &ImpactGeometry) -> Vec3 {
    let w_hat = geometry.w.normalized().expect("geometry has nonzero w");
    let half = 0.5 * theta;
    w_hat * half.sin() - geometry.direction() * half.cos()
}

/// Equal-mass map `(v, v⋆) ↦ (v + (w·ν)ν, v⋆ - (w·ν)ν)` with `w = v⋆ - v`.
pub fn apply_map(nu: Vec3, v: Vec3, v_star: Vec3) -> (Vec3, Vec3) {
    let k = (v_star - v).dot(nu);
    (v + nu * k, v_star - nu * k)
}

fn scatter_impl(
    p: &RadialPotential,
    g: &ImpactGeometry,
    v: Vec3,
    v_star: Vec3,
    tol: f64,
    with_time: bool,
) -> Result<ScatterOutcome> {
    let w = v_star - v;
    let speed = w.norm();
    if speed == 0.0 {
        return Err(invalid("scattering requires v != v_star"));
    }
    if (g.w - w).norm() > 1e-12 * speed {
        return Err(invalid("geometry relative velocity does not match v_star - v"));
    }
    let (theta, _) = deviation_angle_with_error(p, g.r, speed, tol)?;
    let rho_star = closest_approach(p, g.r, speed)?;
    let nu = scattering_vector(theta, g);
    // w·ν = |w| sin(θ/2) exactly, since ê ⟂ w; the dot product would lose
    // the grazing transfer to round-off
    let k = speed * (0.5 * theta).sin();
    let transfer = nu * k;
    let tau_star = if with_time && p.range().is_some() {
        Some(scattering_time(p, g.r, speed, tol.max(1e-12))?)
    } else {
        None
    };
    Ok(ScatterOutcome {
        theta,
        rho_star,
        v_prime: v + transfer,
        v_star_prime: v_star - transfer,
        v_prime_fixed: v + transfer * 2.0,
        tau_star,
        nu,
    })
}

/// Full binary encounter, including the scattering time when the potential
/// has finite range.
pub fn scatter(p: &RadialPotential, g: &ImpactGeometry, v: Vec3, v_star: Vec3, tol: f64) -> Result<ScatterOutcome> {
    scatter_impl(p, g, v, v_star, tol, true)
}

/// As [`scatter`] without the scattering-time quadrature.
pub fn scatter_velocities(
    p: &RadialPotential,
    g: &ImpactGeometry,
    v: Vec3,
    v_star: Vec3,
    tol: f64,
) -> Result<ScatterOutcome> {
    scatter_impl(p, g, v, v_star, tol, false)
}

/// Time spent at separation below the range `R` of a finite-range
/// potential: `2 ∫_{ρ⋆}^R dρ / (|w| √F)`.
pub fn scattering_time(p: &RadialPotential, r: f64, speed: f64, tol: f64) -> Result<f64> {
    let range = p
        .cutoff_radius()
        .or(p.range())
        .ok_or_else(|| invalid("scattering time needs a truncated or compactly supported potential"))?;
    if !(speed > 0.0 && speed.is_finite()) {
        return Err(invalid(format!("relative speed must be positive, got {speed}")));
    }
    if r >= range {
        return Ok(0.0);
    }
    if p.is_free() {
        return Ok(2.0 * (range * range - r * r).sqrt() / speed);
    }
    let rho_star = closest_approach(p, r, speed)?;
    if rho_star >= range {
        return Ok(0.0);
    }
    let w2 = speed * speed;
    let psi_star = p.psi(rho_star);
    let len = range - rho_star;
    let integrand = |u: f64| {
        let d = len * u * u;
        let rho = rho_star + d;
        let f = 2.0 * energy_drop(p, rho_star, psi_star, d) / w2
            + r * r * d * (rho + rho_star) / (rho_star * rho_star * rho * rho);
        if f <= 0.0 {
            return 0.0;
        }
        4.0 * len * u / (speed * f.sqrt())
    };
    let scale = 2.0 * range / speed;
    let res = integrate(integrand, 0.0, 1.0, QuadOptions::new(tol * scale, tol), "scattering time")?;
    Ok(res.value)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct AngleGap {
    pub theta: f64,
    pub theta_r: f64,
    pub gap: f64,
}

/// Deviation angles of `p` and of its truncation at `R`, and their
/// difference `θ - θ^R`.
pub fn angle_gap(p: &RadialPotential, radius: f64, r: f64, speed: f64, tol: f64) -> Result<AngleGap> {
    let base = p.untruncated();
    let cut = crate::potentials::truncate(&base, radius)?;
    let theta = deviation_angle(&base, r, speed, tol)?;
    let theta_r = deviation_angle(&cut, r, speed, tol)?;
    Ok(AngleGap {
        theta,
        theta_r,
        gap: theta - theta_r,
    })
}

/// `κ(r, R) = R^{-s} (1/(1 - r²/R²) + r / ((R-1)(1 - r²/(R-1)²)^{3/2}))`.
pub fn kappa(r: f64, radius: f64, s: f64) -> Result<f64> {
    if !(r >= 0.0 && r < radius - 1.0) {
        return Err(invalid(format!("kappa requires 0 <= r < R - 1, got r = {r}, R = {radius}")));
    }
    let inner = radius - 1.0;
    let first = 1.0 / (1.0 - (r / radius).powi(2));
    let second = r / (inner * (1.0 - (r / inner).powi(2)).powf(1.5));
    Ok(radius.powf(-s) * (first + second))
}
