//! Test functions and phase-space binnings shared by the density
//! estimators.

use crate::error::{invalid, Result};
use crate::vec3::Vec3;
use serde::{Deserialize, Serialize};

/// Velocity test functions `h(v)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestFunction {
    /// `exp(-|v - c|² / (2 w²))`.
    GaussianBump { center: Vec3, width: f64 },
    /// `(1 - |v|²/a²)^k` inside the ball of radius `a`.
    PolyCutoff { degree: u32, radius: f64 },
    /// Indicator of the box `[lo, hi]`.
    Indicator { lo: Vec3, hi: Vec3 },
}

impl TestFunction {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::GaussianBump { width, center } if *width > 0.0 && center.is_finite() => Ok(()),
            Self::PolyCutoff { degree, radius } if *degree >= 1 && *radius > 0.0 => Ok(()),
            Self::Indicator { lo, hi } if (0..3).all(|i| lo[i] < hi[i]) => Ok(()),
            other => Err(invalid(format!("malformed test function {other:?}"))),
        }
    }

    pub fn eval(&self, v: Vec3) -> f64 {
        match *self {
            Self::GaussianBump { center, width } => (-(v - center).norm2() / (2.0 * width * width)).exp(),
            Self::PolyCutoff { degree, radius } => {
                let q = 1.0 - v.norm2() / (radius * radius);
                if q > 0.0 {
                    q.powi(degree as i32)
                } else {
                    0.0
                }
            }
            Self::Indicator { lo, hi } => {
                if (0..3).all(|i| lo[i] <= v[i] && v[i] < hi[i]) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// `∇_v h`, or `None` for the indicator.
    pub fn gradient(&self, v: Vec3) -> Option<Vec3> {
        match *self {
            Self::GaussianBump { center, width } => {
                let d = v - center;
                Some(d * (-self.eval(v) / (width * width)))
            }
            Self::PolyCutoff { degree, radius } => {
                let a2 = radius * radius;
                let q = 1.0 - v.norm2() / a2;
                if q <= 0.0 {
                    return Some(Vec3::ZERO);
                }
                let k = degree as f64;
                Some(v * (-2.0 * k * q.powi(degree as i32 - 1) / a2))
            }
            Self::Indicator { .. } => None,
        }
    }

    /// `sup |∇_v h|`, or `None` when `h` is not Lipschitz.
    pub fn gradient_bound(&self) -> Option<f64> {
        match *self {
            // maximum of (r/w²) e^{-r²/2w²} at r = w
            Self::GaussianBump { width, .. } => Some((-0.5f64).exp() / width),
            Self::PolyCutoff { degree, radius } => {
                let k = degree as f64;
                if degree == 1 {
                    return Some(2.0 / radius);
                }
                // maximum of 2k r/a² (1 - r²/a²)^{k-1} at r = a/√(2k-1)
                let m = 2.0 * k - 1.0;
                Some(2.0 * k / (radius * m.sqrt()) * (1.0 - 1.0 / m).powf(k - 1.0))
            }
            Self::Indicator { .. } => None,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::GaussianBump { width, .. } => format!("gaussian_bump(w={width})"),
            Self::PolyCutoff { degree, radius } => format!("poly_cutoff(k={degree},a={radius})"),
            Self::Indicator { .. } => "indicator".to_string(),
        }
    }
}

/// Product binning of the torus and a velocity cube `[-vmax, vmax]³`, with
/// one overflow bin for velocities outside the cube.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Binning {
    pub position_bins: usize,
    pub velocity_bins: usize,
    pub vmax: f64,
}

impl Binning {
    pub fn validate(&self) -> Result<()> {
        if self.velocity_bins == 0 || !(self.vmax > 0.0) {
            return Err(invalid("binning needs velocity bins and a positive vmax"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.position_bins.max(1).pow(3) * self.velocity_bins.pow(3) + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, x: Vec3, v: Vec3) -> usize {
        let nv = self.velocity_bins;
        let mut iv = 0;
        for i in 0..3 {
            let u = (v[i] + self.vmax) / (2.0 * self.vmax);
            if !(0.0..1.0).contains(&u) {
                return self.len() - 1;
            }
            iv = iv * nv + ((u * nv as f64) as usize).min(nv - 1);
        }
        let np = self.position_bins.max(1);
        let xw = x.wrap_unit();
        let mut ip = 0;
        for i in 0..3 {
            ip = ip * np + ((xw[i] * np as f64) as usize).min(np - 1);
        }
        ip * nv.pow(3) + iv
    }
}
