//! Minimal three-vector used for positions and velocities.

use serde::{Deserialize, Serialize};
use std::ops::{Add, AddAssign, Div, Index, Mul, Neg, Sub, SubAssign};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec3(pub [f64; 3]);

impl Vec3 {
    pub const ZERO: Vec3 = Vec3([0.0; 3]);

    #[inline]
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3([x, y, z])
    }

    #[inline]
    pub fn dot(self, o: Vec3) -> f64 {
        self.0[0] * o.0[0] + self.0[1] * o.0[1] + self.0[2] * o.0[2]
    }

    #[inline]
    pub fn cross(self, o: Vec3) -> Vec3 {
        let [a0, a1, a2] = self.0;
        let [b0, b1, b2] = o.0;
        Vec3([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0])
    }

    #[inline]
    pub fn norm2(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.norm2().sqrt()
    }

    /// Unit vector in the same direction; `None` for the zero vector.
    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        if n > 0.0 && n.is_finite() {
            Some(self / n)
        } else {
            None
        }
    }

    pub fn max_abs_diff(self, o: Vec3) -> f64 {
        (0..3).map(|i| (self.0[i] - o.0[i]).abs()).fold(0.0, f64::max)
    }

    /// Reduce every component to `[0, 1)`.
    #[inline]
    pub fn wrap_unit(self) -> Vec3 {
        Vec3(self.0.map(wrap_coordinate))
    }

    /// Representative of `self` modulo `Z^3` with every component in `[-1/2, 1/2)`.
    ///
    /// For a displacement on the unit torus this is the minimum-image vector.
    #[inline]
    pub fn min_image(self) -> Vec3 {
        Vec3(self.0.map(|c| c - (c + 0.5).floor()))
    }

    pub fn is_finite(self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }
}

#[inline]
fn wrap_coordinate(c: f64) -> f64 {
    let w = c - c.floor();
    // c slightly negative can round to exactly 1.0
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    #[inline]
    fn add(self, o: Vec3) -> Vec3 {
        Vec3([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    #[inline]
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn mul(self, k: f64) -> Vec3 {
        Vec3([self.0[0] * k, self.0[1] * k, self.0[2] * k])
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    #[inline]
    fn mul(self, v: Vec3) -> Vec3 {
        v * self
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn div(self, k: f64) -> Vec3 {
        Vec3([self.0[0] / k, self.0[1] / k, self.0[2] / k])
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    #[inline]
    fn neg(self) -> Vec3 {
        Vec3([-self.0[0], -self.0[1], -self.0[2]])
    }
}

impl AddAssign for Vec3 {
    #[inline]
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl SubAssign for Vec3 {
    #[inline]
    fn sub_assign(&mut self, o: Vec3) {
        *self = *self - o;
    }
}

impl Index<usize> for Vec3 {
    type Output = f64;
    #[inline]
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn min_image_is_shortest_representative() {
        let d = Vec3::new(0.9, -0.7, 0.2).min_image();
        assert!((d[0] + 0.1).abs() < 1e-15);
        assert!((d[1] - 0.3).abs() < 1e-15);
        assert!((d[2] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn wrap_stays_in_unit_interval() {
        let w = Vec3::new(-1e-18, 3.25, -2.5).wrap_unit();
        for c in w.0 {
            assert!((0.0..1.0).contains(&c));
        }
    }
}
