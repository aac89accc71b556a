//! Velocity and position densities for the background and the tagged
//! particle, with samplers and the mean relative speed used by the loss rate.

use crate::error::{invalid, Result};
use crate::rng::SimRng;
use crate::vec3::Vec3;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;
use std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VelocityDensity {
    /// Gaussian with covariance `temperature · I` centred at `drift`.
    Maxwellian {
        temperature: f64,
        #[serde(default)]
        drift: Vec3,
    },
    /// Uniform on the ball of the given radius.
    UniformBall {
        radius: f64,
        #[serde(default)]
        center: Vec3,
    },
    /// Dirac mass.
    Point { v: Vec3 },
}

/// Moments relevant to admissibility of a background density.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MomentReport {
    /// `∫ (1 + |v|²) g`.
    pub weighted_mass: f64,
    /// `ess sup (1 + |v|⁵) g`, infinite for a point mass.
    pub weighted_sup: f64,
}

fn unit_vector(rng: &mut SimRng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        if let Some(u) = v.normalized() {
            return u;
        }
    }
}

fn gaussian(rng: &mut SimRng) -> Vec3 {
    Vec3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    )
}

/// `E|d + σZ|` for a standard Gaussian vector `Z` and `|d| = dist`.
fn maxwellian_mean_distance(dist: f64, sigma: f64) -> f64 {
    let lambda = dist / sigma;
    let c = (2.0 / PI).sqrt();
    if lambda < 1e-6 {
        return sigma * c * (2.0 + lambda * lambda / 3.0);
    }
    sigma * (c * (-0.5 * lambda * lambda).exp() + (lambda + 1.0 / lambda) * erf(lambda / 2f64.sqrt()))
}

/// `E|d - U|` for `U` uniform on the ball of radius `a` and `|d| = dist`.
fn ball_mean_distance(dist: f64, a: f64) -> f64 {
    if dist >= a {
        dist + a * a / (5.0 * dist)
    } else {
        0.75 * a + dist * dist / (2.0 * a) - dist.powi(4) / (20.0 * a.powi(3))
    }
}

impl VelocityDensity {
    pub fn validate(&self) -> Result<()> {
        match *self {
            VelocityDensity::Maxwellian { temperature, drift } => {
                if !(temperature > 0.0 && temperature.is_finite()) || !drift.is_finite() {
                    return Err(invalid(format!("maxwellian temperature must be positive, got {temperature}")));
                }
            }
            VelocityDensity::UniformBall { radius, center } => {
                if !(radius > 0.0 && radius.is_finite()) || !center.is_finite() {
                    return Err(invalid(format!("uniform ball radius must be positive, got {radius}")));
                }
            }
            VelocityDensity::Point { v } => {
                if !v.is_finite() {
                    return Err(invalid("point velocity must be finite"));
                }
            }
        }
        Ok(())
    }

    /// Centre of symmetry.
    pub fn center(&self) -> Vec3 {
        match *self {
            VelocityDensity::Maxwellian { drift, .. } => drift,
            VelocityDensity::UniformBall { center, .. } => center,
            VelocityDensity::Point { v } => v,
        }
    }

    pub fn sample(&self, rng: &mut SimRng) -> Vec3 {
        match *self {
            VelocityDensity::Maxwellian { temperature, drift } => drift + gaussian(rng) * temperature.sqrt(),
            VelocityDensity::UniformBall { radius, center } => {
                let u: f64 = rng.random();
                center + unit_vector(rng) * (radius * u.cbrt())
            }
            VelocityDensity::Point { v } => v,
        }
    }

    /// Sample from `|v - c| g(v) / E|v - c|`, with `c` the centre.
    pub fn sample_size_biased(&self, rng: &mut SimRng) -> Vec3 {
        match *self {
            VelocityDensity::Maxwellian { temperature, drift } => {
                // |u|² / (2T) ~ Gamma(2, 1)
                let g: f64 = Gamma::new(2.0, 1.0).expect("valid gamma").sample(rng);
                drift + unit_vector(rng) * (2.0 * temperature * g).sqrt()
            }
            VelocityDensity::UniformBall { radius, center } => {
                let u: f64 = rng.random();
                center + unit_vector(rng) * (radius * u.powf(0.25))
            }
            VelocityDensity::Point { v } => v,
        }
    }

    /// `E|v⋆ - c|` under this density.
    pub fn mean_centered_speed(&self) -> f64 {
        match *self {
            VelocityDensity::Maxwellian { temperature, .. } => 2.0 * (2.0 * temperature / PI).sqrt(),
            VelocityDensity::UniformBall { radius, .. } => 0.75 * radius,
            VelocityDensity::Point { .. } => 0.0,
        }
    }

    /// `E|v⋆|`.
    pub fn mean_speed(&self) -> f64 {
        self.mean_relative_speed(Vec3::ZERO)
    }

    /// `E|v - v⋆|` in closed form.
    pub fn mean_relative_speed(&self, v: Vec3) -> f64 {
        let dist = (v - self.center()).norm();
        match *self {
            VelocityDensity::Maxwellian { temperature, .. } => maxwellian_mean_distance(dist, temperature.sqrt()),
            VelocityDensity::UniformBall { radius, .. } => ball_mean_distance(dist, radius),
            VelocityDensity::Point { .. } => dist,
        }
    }

    /// `E|v⋆|²`.
    pub fn second_moment(&self) -> f64 {
        let c2 = self.center().norm2();
        match *self {
            VelocityDensity::Maxwellian { temperature, .. } => c2 + 3.0 * temperature,
            VelocityDensity::UniformBall { radius, .. } => c2 + 0.6 * radius * radius,
            VelocityDensity::Point { .. } => c2,
        }
    }

    /// Probability density at `v`; `None` for the point mass.
    pub fn pdf(&self, v: Vec3) -> Option<f64> {
        let d2 = (v - self.center()).norm2();
        match *self {
            VelocityDensity::Maxwellian { temperature, .. } => {
                Some((-0.5 * d2 / temperature).exp() / (2.0 * PI * temperature).powf(1.5))
            }
            VelocityDensity::UniformBall { radius, .. } => {
                Some(if d2 <= radius * radius {
                    3.0 / (4.0 * PI * radius.powi(3))
                } else {
                    0.0
                })
            }
            VelocityDensity::Point { .. } => None,
        }
    }

    /// CDF of `|v - c|`.
    pub fn centered_speed_cdf(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        match *self {
            VelocityDensity::Maxwellian { temperature, .. } => {
                let x = s / temperature.sqrt();
                erf(x / 2f64.sqrt()) - (2.0 / PI).sqrt() * x * (-0.5 * x * x).exp()
            }
            VelocityDensity::UniformBall { radius, .. } => (s / radius).min(1.0).powi(3),
            VelocityDensity::Point { .. } => 1.0,
        }
    }

    pub fn moments(&self) -> MomentReport {
        let weighted_mass = 1.0 + self.second_moment();
        let weighted_sup = match *self {
            VelocityDensity::Maxwellian { temperature, drift } => {
                // maximise (1 + |v|⁵) e^{-|v - u|²/2T} along the drift ray
                let sigma = temperature.sqrt();
                let mut best: f64 = 0.0;
                let hi = drift.norm() + 12.0 * sigma;
                for i in 0..=4000 {
                    let r = hi * i as f64 / 4000.0;
                    let d = (r - drift.norm()).abs();
                    let val = (1.0 + r.powi(5)) * (-0.5 * d * d / temperature).exp();
                    best = best.max(val);
                }
                best / (2.0 * PI * temperature).powf(1.5)
            }
            VelocityDensity::UniformBall { radius, center } => {
                (1.0 + (center.norm() + radius).powi(5)) * 3.0 / (4.0 * PI * radius.powi(3))
            }
            VelocityDensity::Point { .. } => f64::INFINITY,
        };
        MomentReport {
            weighted_mass,
            weighted_sup,
        }
    }

    /// True when the density is essentially bounded with the `(1 + |v|⁵)`
    /// weight.
    pub fn is_bounded(&self) -> bool {
        self.moments().weighted_sup.is_finite()
    }
}

/// Position density of the tagged particle on the unit torus.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PositionDensity {
    Uniform,
    /// Uniform on the box `[lo, hi]` inside `[0, 1]³`.
    Box { lo: Vec3, hi: Vec3 },
}

impl PositionDensity {
    pub fn validate(&self) -> Result<()> {
        if let PositionDensity::Box { lo, hi } = *self {
            for i in 0..3 {
                if !(0.0 <= lo[i] && lo[i] < hi[i] && hi[i] <= 1.0) {
                    return Err(invalid("position box must satisfy 0 <= lo < hi <= 1 componentwise"));
                }
            }
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut SimRng) -> Vec3 {
        match *self {
            PositionDensity::Uniform => Vec3::new(rng.random(), rng.random(), rng.random()).wrap_unit(),
            PositionDensity::Box { lo, hi } => {
                let u = Vec3::new(rng.random(), rng.random(), rng.random());
                Vec3::new(
                    lo[0] + (hi[0] - lo[0]) * u[0],
                    lo[1] + (hi[1] - lo[1]) * u[1],
                    lo[2] + (hi[2] - lo[2]) * u[2],
                )
                .wrap_unit()
            }
        }
    }
}

/// Product density `f₀(x, v)` of the tagged particle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialDensity {
    pub position: PositionDensity,
    pub velocity: VelocityDensity,
}

impl InitialDensity {
    pub fn validate(&self) -> Result<()> {
        self.position.validate()?;
        self.velocity.validate()
    }

    pub fn sample(&self, rng: &mut SimRng) -> (Vec3, Vec3) {
        let x = self.position.sample(rng);
        let v = self.velocity.sample(rng);
        (x, v)
    }
}
