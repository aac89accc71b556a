//! Monte Carlo realization of the cutoff linear Boltzmann equation as a
//! Markov jump process whose sample paths are marked trees.
//!
//! Partner proposals arrive at the majorant rate `πR²(|v - c| + E|v⋆ - c|)`,
//! where `c` is the centre of `g`, with `v⋆` drawn from the mixture of `g`
//! and its size-biased version. Accepting with probability
//! `|v - v⋆| / (|v - c| + |v⋆ - c|)` thins them to jumps at rate `ν(v)` with
//! partner density proportional to `g(v⋆)|v - v⋆|`.

use crate::density::{InitialDensity, VelocityDensity};
use crate::dynamics::PhaseState;
use crate::error::{invalid, Error, Result};
use crate::observables::{Binning, TestFunction};
use crate::potentials::RadialPotential;
use crate::rng::{substream, Domain, SimRng};
use crate::scattering::Kinematics;
use crate::stats::jackknife_mean_se;
use crate::trees::{collide, MarkedTree, TreeNode};
use crate::vec3::Vec3;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const MAX_PROPOSALS: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LbeConfig {
    /// Cross-section radius `R`.
    pub radius: f64,
    pub kinematics: Kinematics,
    pub angle_tol: f64,
}

/// Loss rate `ν(v) = πR² E_g|v - v⋆|` and its majorant.
#[derive(Clone, Copy, Debug)]
pub struct LossRate<'a> {
    pub g: &'a VelocityDensity,
    pub radius: f64,
}

impl LossRate<'_> {
    pub fn nu(&self, v: Vec3) -> f64 {
        PI * self.radius * self.radius * self.g.mean_relative_speed(v)
    }

    /// `πR²(V + E|v⋆|) ≥ sup_{|v| ≤ V} ν(v)`.
    pub fn majorant(&self, speed: f64) -> f64 {
        PI * self.radius * self.radius * (speed + self.g.mean_speed())
    }

    /// Majorant centred on `g`, used by the sampler.
    pub fn centered_majorant(&self, v: Vec3) -> f64 {
        PI * self.radius * self.radius * ((v - self.g.center()).norm() + self.g.mean_centered_speed())
    }

    /// `πR² max(0, |v| - E|v⋆|)`.
    pub fn lower_bound(&self, v: Vec3) -> f64 {
        PI * self.radius * self.radius * (v.norm() - self.g.mean_speed()).max(0.0)
    }
}

pub fn loss_rate(g: &VelocityDensity, radius: f64, v: Vec3) -> Result<f64> {
    g.validate()?;
    if !(radius > 0.0) {
        return Err(invalid("cross-section radius must be positive"));
    }
    Ok(LossRate { g, radius }.nu(v))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jump {
    pub v_star: Vec3,
    pub r: f64,
    pub zeta: f64,
    pub proposals: usize,
}

/// One partner proposal and its acceptance.
#[inline]
fn propose_partner(rng: &mut SimRng, g: &VelocityDensity, v: Vec3, a: f64, m: f64) -> (Vec3, bool) {
    let c = g.center();
    let v_star = if rng.random::<f64>() * (a + m) < a {
        g.sample(rng)
    } else {
        g.sample_size_biased(rng)
    };
    let denom = a + (v_star - c).norm();
    let accept = denom > 0.0 && rng.random::<f64>() * denom < (v - v_star).norm();
    (v_star, accept)
}

#[inline]
fn impact(rng: &mut SimRng, radius: f64) -> (f64, f64) {
    let r = radius * rng.random::<f64>().sqrt();
    let zeta = 2.0 * PI * rng.random::<f64>();
    (r, zeta)
}

/// Draws `(v⋆, r, ζ)` with density proportional to `g(v⋆)|v - v⋆| r` on
/// `ℝ³ × [0, R]` and `ζ` uniform.
pub fn sample_jump(rng: &mut SimRng, g: &VelocityDensity, radius: f64, v: Vec3) -> Result<Jump> {
    let a = (v - g.center()).norm();
    let m = g.mean_centered_speed();
    if a + m == 0.0 {
        return Err(invalid("loss rate vanishes: no jump possible"));
    }
    for k in 1..=MAX_PROPOSALS {
        let (v_star, accept) = propose_partner(rng, g, v, a, m);
        if accept {
            let (r, zeta) = impact(rng, radius);
            return Ok(Jump {
                v_star,
                r,
                zeta,
                proposals: k,
            });
        }
    }
    Err(Error::RejectionOverrun(MAX_PROPOSALS))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpWalker {
    pub state: PhaseState,
    pub tree: MarkedTree,
    pub weight: f64,
    /// Time and position at the most recent jump, from which free transport
    /// is measured.
    pub anchor: (f64, Vec3),
    pub proposals: u64,
}

impl JumpWalker {
    pub fn new(x0: Vec3, v0: Vec3) -> Self {
        Self {
            state: PhaseState { x: x0, v: v0, t: 0.0 },
            tree: MarkedTree::new(x0, v0),
            weight: 1.0,
            anchor: (0.0, x0),
            proposals: 0,
        }
    }
}

/// Advances a walker to time `horizon` through free flights and jumps.
pub fn evolve_walker(
    rng: &mut SimRng,
    mut w: JumpWalker,
    cfg: &LbeConfig,
    g: &VelocityDensity,
    p: &RadialPotential,
    horizon: f64,
) -> Result<JumpWalker> {
    if horizon < w.state.t {
        return Err(invalid("horizon precedes the walker's time"));
    }
    let c = g.center();
    let m = g.mean_centered_speed();
    let area = PI * cfg.radius * cfg.radius;
    let mut t = w.state.t;
    let mut v = w.state.v;
    let mut rejected_run = 0usize;
    loop {
        let a = (v - c).norm();
        let rate = area * (a + m);
        if rate == 0.0 {
            break;
        }
        let wait = -(1.0 - rng.random::<f64>()).ln() / rate;
        if t + wait >= horizon {
            break;
        }
        t += wait;
        w.proposals += 1;
        let (v_star, accept) = propose_partner(rng, g, v, a, m);
        if !accept {
            rejected_run += 1;
            if rejected_run >= MAX_PROPOSALS {
                return Err(Error::RejectionOverrun(MAX_PROPOSALS));
            }
            continue;
        }
        rejected_run = 0;
        let (r, zeta) = impact(rng, cfg.radius);
        let node = TreeNode { t, r, zeta, v: v_star };
        let (t0, x0) = w.anchor;
        let x = (x0 + v * (t - t0)).wrap_unit();
        v = collide(p, &node, v, cfg.kinematics, cfg.angle_tol)?;
        w.anchor = (t, x);
        w.tree.nodes.push(node);
    }
    let (t0, x0) = w.anchor;
    w.state = PhaseState {
        x: (x0 + v * (horizon - t0)).wrap_unit(),
        v,
        t: horizon,
    };
    Ok(w)
}

/// Evolves `n` walkers drawn from `f0` to each of `times` (ascending),
/// returning the walker states at every time. Walker `i` uses its own
/// substream, so results do not depend on the thread count.
pub fn run_walkers(
    cfg: &LbeConfig,
    g: &VelocityDensity,
    p: &RadialPotential,
    f0: &InitialDensity,
    n: usize,
    seed: u64,
    times: &[f64],
) -> Result<Vec<Vec<JumpWalker>>> {
    g.validate()?;
    f0.validate()?;
    if times.windows(2).any(|w| w[1] < w[0]) || times.first().is_some_and(|t| *t < 0.0) {
        return Err(invalid("snapshot times must be nonnegative and ascending"));
    }
    let paths: Vec<Vec<JumpWalker>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, Domain::Walker, i as u64);
            let (x0, v0) = f0.sample(&mut rng);
            let mut w = JumpWalker::new(x0, v0);
            let mut out = Vec::with_capacity(times.len());
            for &t in times {
                w = evolve_walker(&mut rng, w, cfg, g, p, t)?;
                out.push(w.clone());
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    // transpose to one ensemble per time
    let mut by_time: Vec<Vec<JumpWalker>> = (0..times.len()).map(|_| Vec::with_capacity(n)).collect();
    for path in paths {
        for (k, w) in path.into_iter().enumerate() {
            by_time[k].push(w);
        }
    }
    Ok(by_time)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub samples: usize,
    /// Bin probabilities, when a binning was given.
    pub histogram: Vec<f64>,
    pub histogram_se: Vec<f64>,
    /// `(⟨f, h⟩, standard error)` per test function.
    pub weak: Vec<(f64, f64)>,
}

/// Histogram and weak integrals of an ensemble of phase-space points, with
/// binomial and jackknife standard errors.
pub fn estimate_density(states: &[(Vec3, Vec3)], binning: Option<&Binning>, tests: &[TestFunction]) -> Result<DensityEstimate> {
    let n = states.len();
    if n < 100 {
        return Err(invalid(format!("need at least 100 samples, got {n}")));
    }
    let nf = n as f64;
    let (histogram, histogram_se) = match binning {
        Some(b) => {
            b.validate()?;
            let mut counts = vec![0u64; b.len()];
            for &(x, v) in states {
                counts[b.index(x, v)] += 1;
            }
            let p: Vec<f64> = counts.iter().map(|&c| c as f64 / nf).collect();
            let se = p.iter().map(|&q| (q * (1.0 - q) / nf).sqrt()).collect();
            (p, se)
        }
        None => (Vec::new(), Vec::new()),
    };
    let weak = tests
        .iter()
        .map(|h| {
            let vals: Vec<f64> = states.iter().map(|&(_, v)| h.eval(v)).collect();
            (vals.iter().sum::<f64>() / nf, jackknife_mean_se(&vals, 20))
        })
        .collect();
    Ok(DensityEstimate {
        samples: n,
        histogram,
        histogram_se,
        weak,
    })
}
