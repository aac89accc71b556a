//! Dormand–Prince 5(4) embedded Runge–Kutta integrator with cubic Hermite
//! dense output.

use crate::error::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[derive(Clone, Copy, Debug)]
pub struct Dopri5 {
    pub atol: f64,
    pub rtol: f64,
    pub h_min: f64,
}

/// Outcome of one trial step. `dydt1` is the right-hand side at the new
/// point (first-same-as-last), so an accepted step costs six evaluations.
#[derive(Clone, Copy, Debug)]
pub struct Attempt<const N: usize> {
    pub y1: [f64; N],
    pub dydt1: [f64; N],
    /// Scaled RMS error; the step is acceptable when `err <= 1`.
    pub err: f64,
}

#[inline]
fn lin<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for (c, k) in terms {
        if *c != 0.0 {
            let hc = h * c;
            for i in 0..N {
                out[i] += hc * k[i];
            }
        }
    }
    out
}

impl Dopri5 {
    pub fn new(atol: f64, rtol: f64) -> Self {
        Self {
            atol,
            rtol,
            h_min: 1e-14,
        }
    }

    pub fn attempt<const N: usize, F>(&self, f: &F, t: f64, y: &[f64; N], k1: &[f64; N], h: f64) -> Attempt<N>
    where
        F: Fn(f64, &[f64; N]) -> [f64; N],
    {
        let k2 = f(t + C2 * h, &lin(y, h, &[(A21, k1)]));
        let k3 = f(t + C3 * h, &lin(y, h, &[(A31, k1), (A32, &k2)]));
        let k4 = f(t + C4 * h, &lin(y, h, &[(A41, k1), (A42, &k2), (A43, &k3)]));
        let k5 = f(
            t + C5 * h,
            &lin(y, h, &[(A51, k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
        );
        let k6 = f(
            t + h,
            &lin(y, h, &[(A61, k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]),
        );
        let y1 = lin(y, h, &[(A71, k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
        let k7 = f(t + h, &y1);
        let mut acc = 0.0;
        for i in 0..N {
            let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = self.atol + self.rtol * y[i].abs().max(y1[i].abs());
            acc += (e / sc) * (e / sc);
        }
        Attempt {
            y1,
            dydt1: k7,
            err: (acc / N as f64).sqrt(),
        }
    }

    /// Step size proposal after an attempt with scaled error `err`.
    pub fn propose(&self, h: f64, err: f64) -> f64 {
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h * factor
    }

    /// Integrate from `t0` to `t1`, calling `observer(t, y, dydt)` after every
    /// accepted step. `h_max` bounds the step length.
    pub fn integrate<const N: usize, F, O>(
        &self,
        f: F,
        t0: f64,
        y0: [f64; N],
        t1: f64,
        h_max: f64,
        mut observer: O,
    ) -> Result<[f64; N]>
    where
        F: Fn(f64, &[f64; N]) -> [f64; N],
        O: FnMut(f64, &[f64; N], &[f64; N]),
    {
        let mut t = t0;
        let mut y = y0;
        let mut k1 = f(t, &y);
        let mut h = (t1 - t0).min(h_max).min(1e-3 * (t1 - t0).abs().max(1e-12));
        while t < t1 {
            h = h.min(t1 - t).min(h_max);
            let att = self.attempt(&f, t, &y, &k1, h);
            if att.err <= 1.0 {
                t = if t + h >= t1 { t1 } else { t + h };
                y = att.y1;
                k1 = att.dydt1;
                observer(t, &y, &k1);
            }
            let next = self.propose(h, att.err);
            if att.err > 1.0 && next < self.h_min {
                return Err(Error::StepUnderflow { t, h: next });
            }
            h = next;
        }
        Ok(y)
    }
}

/// Cubic Hermite interpolant on a step of length `h` at fraction `theta`.
#[inline]
pub fn hermite<const N: usize>(
    y0: &[f64; N],
    f0: &[f64; N],
    y1: &[f64; N],
    f1: &[f64; N],
    h: f64,
    theta: f64,
) -> [f64; N] {
    let t2 = theta * theta;
    let t3 = t2 * theta;
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + theta;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    let mut out = [0.0; N];
    for i in 0..N {
        out[i] = h00 * y0[i] + h10 * h * f0[i] + h01 * y1[i] + h11 * h * f1[i];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_oscillator_period() {
        let solver = Dopri5::new(1e-12, 1e-12);
        let y = solver
            .integrate(
                |_, y: &[f64; 2]| [y[1], -y[0]],
                0.0,
                [1.0, 0.0],
                2.0 * std::f64::consts::PI,
                1.0,
                |_, _, _| {},
            )
            .unwrap();
        assert!((y[0] - 1.0).abs() < 1e-9 && y[1].abs() < 1e-9, "{y:?}");
    }

    #[test]
    fn hermite_reproduces_cubics() {
        // y = t^3 on [0, 2]
        let y = hermite(&[0.0], &[0.0], &[8.0], &[12.0], 2.0, 0.25);
        assert!((y[0] - 0.125).abs() < 1e-14);
    }
}
