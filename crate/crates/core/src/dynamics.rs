//! Tagged-particle molecular dynamics on the unit torus.
//!
//! The tagged particle obeys `ẍ = -(1/ε) Σ_j ∇φ((x - x_j(t))/ε)` with
//! minimum-image separations, while background particles move on straight
//! lines. Away from every background particle the motion is free and is
//! advanced analytically up to the exact time at which some particle enters
//! the interaction radius. Inside, a Dormand–Prince integrator takes over,
//! the step being clamped to `ε / (4 · max relative speed)`.
//!
//! Near collisions (separation below `Rε`) are logged with entry and exit
//! times located by bisection on the dense output.

use crate::density::VelocityDensity;
use crate::error::{invalid, Error, Result};
use crate::ode::{hermite, Dopri5};
use crate::potentials::RadialPotential;
use crate::rng::SimRng;
use crate::vec3::Vec3;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Force magnitudes below this are treated as zero in the dynamics.
pub const FORCE_THRESHOLD: f64 = 1e-16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub ode_atol: f64,
    pub ode_rtol: f64,
    /// Quadrature tolerance for deviation angles.
    pub angle: f64,
    /// Time resolution of event boundaries.
    pub event_time: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            ode_atol: 1e-11,
            ode_rtol: 1e-11,
            angle: 1e-10,
            event_time: 1e-10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub epsilon: f64,
    pub n_background: usize,
    pub horizon: f64,
    /// Stretched exponent entering `R(ε) = ε^{-1/(3+γ)}` and `b(ε)`.
    pub gamma: f64,
    pub s: f64,
    pub seed: u64,
    pub tolerances: Tolerances,
    /// Constant of `b(ε) = C_b exp(-C_b ε^{-γ/(3+γ)})`.
    pub c_b: f64,
    /// Overrides the exponent `1/(3+γ)` of `R(ε)`.
    pub r_exponent: Option<f64>,
    /// Number of uniform sampling intervals on `[0, T]`.
    pub samples: usize,
}

impl SimConfig {
    /// Configuration with `N = round(ε^{-2})` and default constants.
    pub fn new(epsilon: f64, horizon: f64, gamma: f64, s: f64, seed: u64) -> Result<Self> {
        let cfg = Self {
            epsilon,
            n_background: (epsilon.powi(-2)).round() as usize,
            horizon,
            gamma,
            s,
            seed,
            tolerances: Tolerances::default(),
            c_b: 1.0,
            r_exponent: None,
            samples: 64,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(invalid(format!("epsilon must lie in (0, 1), got {}", self.epsilon)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(invalid(format!("horizon must be positive, got {}", self.horizon)));
        }
        if !(self.gamma > 0.0) {
            return Err(invalid(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.c_b > 0.0) {
            return Err(invalid(format!("C_b must be positive, got {}", self.c_b)));
        }
        if self.samples == 0 {
            return Err(invalid("need at least one sampling interval"));
        }
        let reach = self.radius() * self.epsilon;
        if !(reach < 0.25) {
            return Err(invalid(format!("R·ε = {reach} must be below 1/4")));
        }
        if self.radius() <= 1.0 {
            return Err(invalid(format!("cutoff radius R = {} must exceed 1", self.radius())));
        }
        let xi = self.xi();
        if !(xi > 0.0 && xi <= 1.0) {
            return Err(invalid(format!("no-overlap probability {xi} outside (0, 1]")));
        }
        Ok(())
    }

    pub fn radius_exponent(&self) -> f64 {
        self.r_exponent.unwrap_or(1.0 / (3.0 + self.gamma))
    }

    /// `R(ε) = ε^{-1/(3+γ)}`.
    pub fn radius(&self) -> f64 {
        self.epsilon.powf(-self.radius_exponent())
    }

    /// Collision-count bound `M(ε) = |log ε|`.
    pub fn max_collisions(&self) -> f64 {
        self.epsilon.ln().abs()
    }

    /// Speed bound `V₂(ε) = |log ε|`.
    pub fn v2(&self) -> f64 {
        self.epsilon.ln().abs()
    }

    /// Relative-speed lower bound `V₁(ε) = 1/|log ε|`.
    pub fn v1(&self) -> f64 {
        1.0 / self.epsilon.ln().abs()
    }

    /// Time-gap bound `δ(ε) = √ε`.
    pub fn delta(&self) -> f64 {
        self.epsilon.sqrt()
    }

    /// Trajectory-divergence bound `b(ε)`.
    pub fn b(&self) -> f64 {
        let e = self.gamma / (3.0 + self.gamma);
        self.c_b * (-self.c_b * self.epsilon.powf(-e)).exp()
    }

    /// Probability that no background particle starts within `Rε` of the
    /// tagged particle, `(1 - (4/3)π R³ε³)^N`.
    pub fn xi(&self) -> f64 {
        let ball = 4.0 / 3.0 * PI * (self.radius() * self.epsilon).powi(3);
        (self.n_background as f64 * (-ball).ln_1p()).exp()
    }

    /// Uniform sampling times `kT/n`, `k = 0..=n`.
    pub fn sample_times(&self) -> Vec<f64> {
        (0..=self.samples)
            .map(|k| self.horizon * k as f64 / self.samples as f64)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub x: Vec3,
    pub v: Vec3,
    pub t: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackgroundParticle {
    /// Position at `t = 0`.
    pub x: Vec3,
    pub v: Vec3,
}

impl BackgroundParticle {
    #[inline]
    pub fn position(&self, t: f64) -> Vec3 {
        self.x + self.v * t
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Background {
    pub particles: Vec<BackgroundParticle>,
}

impl Background {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// True when some particle starts strictly within `radius` of `x`.
    pub fn overlaps(&self, x: Vec3, radius: f64) -> bool {
        self.particles.iter().any(|p| (p.x - x).min_image().norm() < radius)
    }
}

/// Draws `N` background particles i.i.d. uniform in space and from `g` in
/// velocity. With an exclusion point, positions closer than `Rε` to it are
/// redrawn, which conditions each particle on not overlapping the tagged
/// particle initially.
pub fn sample_background(
    cfg: &SimConfig,
    g: &VelocityDensity,
    exclusion: Option<Vec3>,
    rng: &mut SimRng,
) -> Result<Background> {
    g.validate()?;
    let reach = cfg.radius() * cfg.epsilon;
    if exclusion.is_some() && 4.0 / 3.0 * PI * reach.powi(3) >= 0.5 {
        return Err(invalid("exclusion ball covers at least half of the torus"));
    }
    let mut particles = Vec::with_capacity(cfg.n_background);
    for _ in 0..cfg.n_background {
        let x = loop {
            let x = Vec3::new(rng.random(), rng.random(), rng.random()).wrap_unit();
            match exclusion {
                Some(x0) if (x - x0).min_image().norm() < reach => continue,
                _ => break x,
            }
        };
        particles.push(BackgroundParticle { x, v: g.sample(rng) });
    }
    Ok(Background { particles })
}

/// One logged near collision with a background particle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NearCollision {
    pub particle: usize,
    pub t_entry: f64,
    pub t_exit: f64,
    /// False when the horizon was reached inside the collision.
    pub complete: bool,
    /// Minimum macroscopic separation during the collision.
    pub min_separation: f64,
    /// `x_j - x` (minimum image) at entry.
    pub offset_entry: Vec3,
    pub v_entry: Vec3,
    pub v_exit: Vec3,
    pub background_velocity: Vec3,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub x: Vec3,
    pub v: Vec3,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub rk_steps: usize,
    pub rejected_steps: usize,
    pub free_segments: usize,
    pub max_speed: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RunOptions {
    /// Keep every accepted integrator state in [`Trajectory::steps`].
    pub record_steps: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub events: Vec<NearCollision>,
    pub final_state: PhaseState,
    /// Some background particle started within `Rε`.
    pub initial_overlap: bool,
    /// Macroscopic radius beyond which forces were neglected.
    pub force_radius: f64,
    pub stats: RunStats,
    /// Accepted integrator states, when requested.
    pub steps: Vec<Sample>,
}

impl Trajectory {
    /// Dense sample closest in time to `t`.
    pub fn sample_at(&self, t: f64) -> Option<&Sample> {
        self.samples
            .iter()
            .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
    }
}

/// Acceleration of the tagged particle at time `t` from the listed
/// background particles.
#[inline]
fn acceleration(p: &RadialPotential, eps: f64, bg: &[BackgroundParticle], ids: &[usize], t: f64, x: Vec3, cut: f64) -> Vec3 {
    let mut acc = Vec3::ZERO;
    for &j in ids {
        let d = (x - bg[j].position(t)).min_image();
        let dist = d.norm();
        if dist >= cut || dist == 0.0 {
            continue;
        }
        let rho = dist / eps;
        let f = p.dpsi(rho);
        acc -= d * (f / (eps * dist));
    }
    acc
}

/// First time `τ ∈ [0, span]` at which `|min_image(c + u τ)| ≤ a`, if any.
/// Requires `a < 1/4`.
fn first_entry(c: Vec3, u: Vec3, a: f64, span: f64) -> Option<f64> {
    let speed = u.norm();
    if c.min_image().norm() <= a {
        return Some(0.0);
    }
    if speed == 0.0 {
        return None;
    }
    let chunk = 0.25 / speed;
    let a2 = a * a;
    let uu = speed * speed;
    let mut t0 = 0.0;
    while t0 < span {
        let len = chunk.min(span - t0);
        let base = (c + u * t0).min_image();
        let mut best: Option<f64> = None;
        for kx in -1..=1 {
            for ky in -1..=1 {
                for kz in -1..=1 {
                    let d = base - Vec3::new(kx as f64, ky as f64, kz as f64);
                    let b = d.dot(u);
                    if b >= 0.0 {
                        continue;
                    }
                    let cc = d.norm2() - a2;
                    let disc = b * b - uu * cc;
                    if disc < 0.0 {
                        continue;
                    }
                    // smaller root, written to avoid cancellation
                    let s = cc / (-b + disc.sqrt());
                    if (0.0..=len).contains(&s) && best.is_none_or(|x| s < x) {
                        best = Some(s);
                    }
                }
            }
        }
        if let Some(s) = best {
            return Some(t0 + s);
        }
        t0 += len;
    }
    None
}

/// Integration engine for one trajectory.
struct Engine<'a> {
    cfg: &'a SimConfig,
    p: &'a RadialPotential,
    bg: &'a [BackgroundParticle],
    solver: Dopri5,
    eps: f64,
    /// Macroscopic interaction radius used to switch between free flight
    /// and integration.
    reach: f64,
    /// Forces are exactly zero (or negligible) beyond this.
    force_cut: f64,
    event_radius: f64,
    all_pairs: bool,
    max_bg_speed: f64,
    samples: Vec<Sample>,
    sample_times: Vec<f64>,
    next_sample: usize,
    events: Vec<NearCollision>,
    open: Vec<Option<NearCollision>>,
    stats: RunStats,
    record_steps: bool,
    steps: Vec<Sample>,
}

impl<'a> Engine<'a> {
    fn new(cfg: &'a SimConfig, bg: &'a Background, p: &'a RadialPotential, opts: RunOptions) -> Self {
        let eps = cfg.epsilon;
        let event_radius = cfg.radius() * eps;
        let micro = p.force_negligible_radius(FORCE_THRESHOLD);
        let force_cut = if p.is_free() { 0.0 } else { micro * eps };
        let reach = force_cut.max(event_radius * (1.0 + 1e-6));
        let all_pairs = reach >= 0.24;
        let max_bg_speed = bg.particles.iter().map(|q| q.v.norm()).fold(0.0, f64::max);
        Self {
            cfg,
            p,
            bg: &bg.particles,
            solver: Dopri5::new(cfg.tolerances.ode_atol, cfg.tolerances.ode_rtol),
            eps,
            reach: if all_pairs { 0.5 } else { reach },
            force_cut: if all_pairs { f64::INFINITY } else { force_cut },
            event_radius,
            all_pairs,
            max_bg_speed,
            samples: Vec::new(),
            sample_times: cfg.sample_times(),
            next_sample: 0,
            events: Vec::new(),
            open: (0..bg.particles.len()).map(|_| None).collect(),
            stats: RunStats::default(),
            record_steps: opts.record_steps,
            steps: Vec::new(),
        }
    }

    fn separation(&self, j: usize, t: f64, x: Vec3) -> Vec3 {
        (self.bg[j].position(t) - x).min_image()
    }

    fn record_free_samples(&mut self, t0: f64, x0: Vec3, v: Vec3, t1: f64) {
        while self.next_sample < self.sample_times.len() && self.sample_times[self.next_sample] <= t1 {
            let ts = self.sample_times[self.next_sample];
            self.samples.push(Sample {
                t: ts,
                x: (x0 + v * (ts - t0)).wrap_unit(),
                v,
            });
            self.next_sample += 1;
        }
    }

    fn open_event(&mut self, j: usize, t: f64, x: Vec3, v: Vec3) {
        let d = self.separation(j, t, x);
        self.open[j] = Some(NearCollision {
                particle: j,
                t_entry: t,
                t_exit: t,
                complete: false,
                min_separation: d.norm(),
                offset_entry: d,
                v_entry: v,
                v_exit: v,
            background_velocity: self.bg[j].v,
        });
    }

    fn close_event(&mut self, j: usize, t: f64, v: Vec3, complete: bool) {
        if let Some(mut ev) = self.open[j].take() {
            ev.t_exit = t;
            ev.v_exit = v;
            ev.complete = complete;
            self.events.push(ev);
        }
    }

    /// Earliest entry into the interaction radius during free flight from
    /// `(t, x, v)`, limited to `span`.
    fn next_entry(&self, t: f64, x: Vec3, v: Vec3, span: f64) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for (j, q) in self.bg.iter().enumerate() {
            let c = q.position(t) - x;
            let limit = best.map_or(span, |b| b.0);
            if let Some(tau) = first_entry(c, q.v - v, self.reach, limit) {
                if best.is_none_or(|b| tau < b.0) {
                    best = Some((tau, j));
                }
            }
        }
        best
    }

    fn candidates(&self, t: f64, x: Vec3, radius: f64) -> Vec<usize> {
        if self.all_pairs {
            return (0..self.bg.len()).collect();
        }
        (0..self.bg.len())
            .filter(|&j| self.separation(j, t, x).norm() < radius)
            .collect()
    }

    fn run(mut self, x0: Vec3, v0: Vec3) -> Result<Trajectory> {
        let horizon = self.cfg.horizon;
        let mut t = 0.0;
        let mut x = x0.wrap_unit();
        let mut v = v0;
        self.stats.max_speed = v.norm();

        let mut initial_overlap = false;
        for j in 0..self.bg.len() {
            if self.separation(j, 0.0, x).norm() < self.event_radius {
                initial_overlap = true;
                self.open_event(j, 0.0, x, v);
            }
        }

        let inside_any = |eng: &Self, t: f64, x: Vec3| {
            eng.all_pairs || (0..eng.bg.len()).any(|j| eng.separation(j, t, x).norm() < eng.reach)
        };

        let mut interacting = inside_any(&self, t, x);
        while t < horizon {
            if !interacting {
                self.stats.free_segments += 1;
                let span = horizon - t;
                match self.next_entry(t, x, v, span) {
                    Some((tau, _)) if t + tau < horizon => {
                        let t1 = t + tau;
                        self.record_free_samples(t, x, v, t1);
                        x = (x + v * tau).wrap_unit();
                        t = t1;
                        interacting = true;
                    }
                    _ => {
                        self.record_free_samples(t, x, v, horizon);
                        x = (x + v * span).wrap_unit();
                        t = horizon;
                    }
                }
            } else {
                let (t1, x1, v1) = self.integrate_phase(t, x, v)?;
                t = t1;
                x = x1;
                v = v1;
                interacting = false;
            }
        }
        // sampling times equal to the horizon that were not reached by a
        // free segment
        self.record_free_samples(t, x, v, horizon);
        for j in 0..self.bg.len() {
            if self.open[j].is_some() {
                self.close_event(j, horizon, v, false);
            }
        }
        self.events.sort_by(|a, b| a.t_entry.total_cmp(&b.t_entry).then(a.particle.cmp(&b.particle)));
        Ok(Trajectory {
            samples: self.samples,
            events: self.events,
            final_state: PhaseState { x, v, t: horizon },
            initial_overlap,
            force_radius: self.force_cut,
            stats: self.stats,
            steps: self.steps,
        })
    }

    /// Integrates until no background particle is within reach, or the
    /// horizon. Returns the final `(t, x, v)`.
    fn integrate_phase(&mut self, t0: f64, x0: Vec3, v0: Vec3) -> Result<(f64, Vec3, Vec3)> {
        let horizon = self.cfg.horizon;
        let eps = self.eps;
        let skin = if self.all_pairs { f64::INFINITY } else { self.reach.max(0.02) };
        let mut ids = self.candidates(t0, x0, self.reach + skin);
        let mut budget = skin;

        let p = self.p;
        let bg = self.bg;
        let cut = self.force_cut;
        let mut t = t0;
        let mut y = [x0[0], x0[1], x0[2], v0[0], v0[1], v0[2]];
        let rhs_for = |ids: &Vec<usize>| {
            let ids = ids.clone();
            move |t: f64, y: &[f64; 6]| {
                let a = acceleration(p, eps, bg, &ids, t, Vec3::new(y[0], y[1], y[2]), cut);
                [y[3], y[4], y[5], a[0], a[1], a[2]]
            }
        };
        let mut rhs = rhs_for(&ids);
        let mut k1 = rhs(t, &y);
        let mut h = eps / (4.0 * (Vec3::new(y[3], y[4], y[5]).norm() + self.max_bg_speed).max(1e-3));
        // at least one step is taken so that a phase entered exactly on the
        // reach sphere makes progress
        let mut first = true;

        loop {
            let x = Vec3::new(y[0], y[1], y[2]);
            let v = Vec3::new(y[3], y[4], y[5]);
            // closest active particle and fastest relative motion
            let mut dmin = f64::INFINITY;
            let mut vrel: f64 = 1e-3;
            for &j in &ids {
                let d = self.separation(j, t, x).norm();
                if d < dmin {
                    dmin = d;
                }
                if d < self.reach {
                    vrel = vrel.max((bg[j].v - v).norm());
                }
            }
            if !first && !self.all_pairs && dmin >= self.reach {
                return Ok((t, x.wrap_unit(), v));
            }
            if t >= horizon {
                return Ok((t, x.wrap_unit(), v));
            }
            let clamp = if dmin < 2.0 * self.event_radius || self.all_pairs {
                eps.max(0.5 * dmin) / (4.0 * vrel)
            } else {
                eps / (4.0 * vrel)
            };
            let h_try = h.min(clamp).min(horizon - t).min(budget / (v.norm() + self.max_bg_speed + 1e-12));
            let att = self.solver.attempt(&rhs, t, &y, &k1, h_try);
            if att.err > 1.0 {
                self.stats.rejected_steps += 1;
                h = self.solver.propose(h_try, att.err);
                if h < self.solver.h_min {
                    return Err(Error::StepUnderflow { t, h });
                }
                continue;
            }
            self.stats.rk_steps += 1;
            first = false;
            let t1 = if t + h_try >= horizon { horizon } else { t + h_try };
            let y1 = att.y1;
            let k2 = att.dydt1;
            self.scan_step(&ids, t, &y, &k1, t1, &y1, &k2);
            self.sample_step(t, &y, &k1, t1, &y1, &k2);
            let v1 = Vec3::new(y1[3], y1[4], y1[5]);
            if self.record_steps {
                self.steps.push(Sample {
                    t: t1,
                    x: Vec3::new(y1[0], y1[1], y1[2]).wrap_unit(),
                    v: v1,
                });
            }
            self.stats.max_speed = self.stats.max_speed.max(v1.norm());
            budget -= (t1 - t) * (v.norm().max(v1.norm()) * 1.1 + self.max_bg_speed);
            t = t1;
            // wrapping leaves the minimum-image force unchanged
            let xw = Vec3::new(y1[0], y1[1], y1[2]).wrap_unit();
            y = [xw[0], xw[1], xw[2], y1[3], y1[4], y1[5]];
            k1 = k2;
            h = self.solver.propose(h_try, att.err);
            if budget <= 0.0 {
                ids = self.candidates(t, xw, self.reach + skin);
                budget = skin;
                rhs = rhs_for(&ids);
                k1 = rhs(t, &y);
            }
        }
    }

    fn dense(&self, t0: f64, y0: &[f64; 6], f0: &[f64; 6], t1: f64, y1: &[f64; 6], f1: &[f64; 6], t: f64) -> (Vec3, Vec3) {
        let h = t1 - t0;
        let theta = if h > 0.0 { (t - t0) / h } else { 0.0 };
        let y = hermite(y0, f0, y1, f1, h, theta);
        (Vec3::new(y[0], y[1], y[2]), Vec3::new(y[3], y[4], y[5]))
    }

    fn sample_step(&mut self, t0: f64, y0: &[f64; 6], f0: &[f64; 6], t1: f64, y1: &[f64; 6], f1: &[f64; 6]) {
        while self.next_sample < self.sample_times.len() && self.sample_times[self.next_sample] <= t1 {
            let ts = self.sample_times[self.next_sample].max(t0);
            let (x, v) = self.dense(t0, y0, f0, t1, y1, f1, ts);
            self.samples.push(Sample {
                t: self.sample_times[self.next_sample],
                x: x.wrap_unit(),
                v,
            });
            self.next_sample += 1;
        }
    }

    /// Detects entries into and exits from the event radius within one
    /// accepted step and tracks minimum separations.
    #[allow(clippy::too_many_arguments)]
    fn scan_step(&mut self, ids: &[usize], t0: f64, y0: &[f64; 6], f0: &[f64; 6], t1: f64, y1: &[f64; 6], f1: &[f64; 6]) {
        const SUB: usize = 8;
        let r = self.event_radius;
        let h = t1 - t0;
        let x0 = Vec3::new(y0[0], y0[1], y0[2]);
        let v0 = Vec3::new(y0[3], y0[4], y0[5]);
        let v1 = Vec3::new(y1[3], y1[4], y1[5]);
        let vt = v0.norm().max(v1.norm()) * 1.5;
        let tol = self.cfg.tolerances.event_time;

        // (particle, crossings as (time, entering), minima per inside interval)
        let mut updates: Vec<(usize, Vec<(f64, bool)>, Vec<f64>)> = Vec::new();
        for &j in ids {
            let was_inside = self.open[j].is_some();
            let vrel = vt + self.bg[j].v.norm();
            if !was_inside && self.separation(j, t0, x0).norm() > r + h * vrel {
                continue;
            }
            let sep = |t: f64| {
                let (x, _) = self.dense(t0, y0, f0, t1, y1, f1, t);
                self.separation(j, t, x).norm()
            };
            let mut crossings = Vec::new();
            let mut inside = was_inside;
            let mut prev_t = t0;
            let mut prev_s = sep(t0);
            for k in 1..=SUB {
                let tk = if k == SUB { t1 } else { t0 + h * k as f64 / SUB as f64 };
                let sk = sep(tk);
                if (sk < r) != inside {
                    let tc = bisect_crossing(&sep, r, prev_t, tk, inside, tol);
                    inside = sk < r;
                    crossings.push((tc, inside));
                } else if !inside && prev_s.min(sk) - r < vrel * (tk - prev_t) {
                    // the separation may dip below r between sub-samples
                    let (tm, sm) = golden_min(&sep, prev_t, tk, tol);
                    if sm < r {
                        let ta = bisect_crossing(&sep, r, prev_t, tm, false, tol);
                        let tb = bisect_crossing(&sep, r, tm, tk, true, tol);
                        crossings.push((ta, true));
                        crossings.push((tb, false));
                    }
                }
                prev_t = tk;
                prev_s = sk;
            }
            if !was_inside && crossings.is_empty() {
                continue;
            }
            // minimum separation over every inside interval within the step
            let mut bounds = Vec::new();
            let mut a = if was_inside { Some(t0) } else { None };
            for &(tc, entering) in &crossings {
                if entering {
                    a = Some(tc);
                } else if let Some(s) = a.take() {
                    bounds.push((s, tc));
                }
            }
            if let Some(s) = a {
                bounds.push((s, t1));
            }
            let minima = bounds
                .iter()
                .map(|&(a, b)| {
                    let (_, m) = golden_min(&sep, a, b, tol);
                    m.min(sep(a)).min(sep(b))
                })
                .collect();
            updates.push((j, crossings, minima));
        }

        for (j, crossings, minima) in updates {
            let mut minima = minima.into_iter();
            if self.open[j].is_some() {
                let m = minima.next().unwrap_or(f64::INFINITY);
                if let Some(ev) = self.open[j].as_mut() {
                    ev.min_separation = ev.min_separation.min(m);
                }
            }
            for (tc, entering) in crossings {
                let (x, v) = self.dense(t0, y0, f0, t1, y1, f1, tc);
                if entering {
                    self.open_event(j, tc, x, v);
                    let m = minima.next().unwrap_or(f64::INFINITY);
                    if let Some(ev) = self.open[j].as_mut() {
                        ev.min_separation = ev.min_separation.min(m);
                    }
                } else {
                    self.close_event(j, tc, v, true);
                }
            }
        }
    }
}

/// Time in `[a, b]` at which `sep` crosses `r`, given whether the start is
/// inside.
fn bisect_crossing<F: Fn(f64) -> f64>(sep: &F, r: f64, mut a: f64, mut b: f64, start_inside: bool, tol: f64) -> f64 {
    while b - a > tol {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if (sep(m) < r) == start_inside {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Golden-section search for the minimum of `f` on `[a, b]`.
fn golden_min<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
        if d - c <= 0.0 {
            break;
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Runs the tagged particle from `(x0, v0)` over `[0, T]` against `bg`.
pub fn run_trajectory(cfg: &SimConfig, bg: &Background, p: &RadialPotential, x0: Vec3, v0: Vec3) -> Result<Trajectory> {
    run_trajectory_with(cfg, bg, p, x0, v0, RunOptions::default())
}

pub fn run_trajectory_with(
    cfg: &SimConfig,
    bg: &Background,
    p: &RadialPotential,
    x0: Vec3,
    v0: Vec3,
    opts: RunOptions,
) -> Result<Trajectory> {
    cfg.validate()?;
    if !x0.is_finite() || !v0.is_finite() {
        return Err(invalid("initial state must be finite"));
    }
    Engine::new(cfg, bg, p, opts).run(x0, v0)
}

/// One adaptive step of at most `dt_max`, summing minimum-image forces over
/// the whole background. Returns the new state.
pub fn step_tagged(
    state: &PhaseState,
    bg: &Background,
    p: &RadialPotential,
    eps: f64,
    dt_max: f64,
    tol: f64,
) -> Result<PhaseState> {
    if !(dt_max > 0.0) {
        return Err(invalid("dt_max must be positive"));
    }
    let ids: Vec<usize> = (0..bg.len()).collect();
    let cut = if p.is_free() { 0.0 } else { p.force_negligible_radius(FORCE_THRESHOLD) * eps };
    let rhs = |t: f64, y: &[f64; 6]| {
        let a = acceleration(p, eps, &bg.particles, &ids, t, Vec3::new(y[0], y[1], y[2]), cut.min(0.5));
        [y[3], y[4], y[5], a[0], a[1], a[2]]
    };
    let solver = Dopri5::new(tol, tol);
    let y = [state.x[0], state.x[1], state.x[2], state.v[0], state.v[1], state.v[2]];
    let k1 = rhs(state.t, &y);
    let mut h = dt_max;
    loop {
        let att = solver.attempt(&rhs, state.t, &y, &k1, h);
        if att.err <= 1.0 {
            let y1 = att.y1;
            return Ok(PhaseState {
                x: Vec3::new(y1[0], y1[1], y1[2]).wrap_unit(),
                v: Vec3::new(y1[3], y1[4], y1[5]),
                t: state.t + h,
            });
        }
        h = solver.propose(h, att.err);
        if h < solver.h_min {
            return Err(Error::StepUnderflow { t: state.t, h });
        }
    }
}

/// Energy `½|v|² + Σ_j φ((x - x_j)/ε)` of the tagged particle.
pub fn tagged_energy(state: &PhaseState, bg: &Background, p: &RadialPotential, eps: f64) -> f64 {
    let mut e = 0.5 * state.v.norm2();
    for q in &bg.particles {
        let d = (state.x - q.position(state.t)).min_image().norm() / eps;
        e += p.psi(d);
    }
    e
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::{make_compact_core, make_free, make_power_law, make_stretched_exponential, truncate};
    use crate::rng::{substream, Domain};
    use crate::scattering::{scatter, ImpactGeometry, Kinematics};

    fn config(eps: f64, horizon: f64, samples: usize) -> SimConfig {
        let mut cfg = SimConfig::new(eps, horizon, 0.5, 4.0, 7).unwrap();
        cfg.samples = samples;
        cfg
    }

    fn single(x: Vec3, v: Vec3) -> Background {
        Background {
            particles: vec![BackgroundParticle { x, v }],
        }
    }

    #[test]
    fn derived_parameters() {
        let cfg = SimConfig::new(0.01, 1.0, 1.0, 4.0, 0).unwrap();
        assert_eq!(cfg.n_background, 10_000);
        assert!((cfg.radius() - 0.01f64.powf(-0.25)).abs() < 1e-12);
        assert!((cfg.max_collisions() - 100f64.ln()).abs() < 1e-12);
        assert!((cfg.v1() * cfg.v2() - 1.0).abs() < 1e-12);
        assert!((cfg.delta() - 0.1).abs() < 1e-12);
        assert!((cfg.b() - (-(100f64).powf(0.25)).exp()).abs() < 1e-15);
        assert!(SimConfig::new(0.3, 1.0, 0.5, 4.0, 0).is_err());
    }

    #[test]
    fn free_motion_is_a_straight_line() {
        let cfg = config(0.05, 2.0, 16);
        let mut rng = substream(3, Domain::Background, 0);
        let g = VelocityDensity::Maxwellian {
            temperature: 1.0,
            drift: Vec3::ZERO,
        };
        let bg = sample_background(&cfg, &g, None, &mut rng).unwrap();
        let x0 = Vec3::new(0.1, 0.2, 0.3);
        let v0 = Vec3::new(0.7, -1.3, 2.1);
        let tr = run_trajectory(&cfg, &bg, &make_free(), x0, v0).unwrap();
        assert_eq!(tr.samples.len(), 17);
        for s in &tr.samples {
            let expect = (x0 + v0 * s.t).wrap_unit();
            assert!((s.x - expect).min_image().norm() < 1e-12);
            assert_eq!(s.v, v0);
        }
        let st = step_tagged(&PhaseState { x: x0, v: v0, t: 0.0 }, &bg, &make_free(), 0.05, 0.3, 1e-10).unwrap();
        assert!((st.x - (x0 + v0 * 0.3).wrap_unit()).min_image().norm() < 1e-12);
    }

    #[test]
    fn event_times_match_free_chords() {
        // with no force, near collisions are exact chord crossings of the ball
        let cfg = config(0.05, 1.0, 4);
        let re = cfg.radius() * cfg.epsilon;
        let xj = Vec3::new(0.5, 0.5, 0.5);
        let vj = Vec3::new(0.0, 0.3, 0.0);
        let bg = single(xj, vj);
        let x0 = Vec3::new(0.2, 0.45, 0.5);
        let v0 = Vec3::new(1.0, 0.3, 0.02);
        let tr = run_trajectory(&cfg, &bg, &make_free(), x0, v0).unwrap();
        assert_eq!(tr.events.len(), 1);
        let ev = tr.events[0];
        let c = xj - x0;
        let u = vj - v0;
        let (a, b, cc) = (u.norm2(), c.dot(u), c.norm2() - re * re);
        let disc = (b * b - a * cc).sqrt();
        let (t_in, t_out) = ((-b - disc) / a, (-b + disc) / a);
        assert!((ev.t_entry - t_in).abs() < 1e-9, "{} vs {t_in}", ev.t_entry);
        assert!((ev.t_exit - t_out).abs() < 1e-9, "{} vs {t_out}", ev.t_exit);
        let closest = (c - u * (c.dot(u) / a)).norm();
        assert!((ev.min_separation - closest).abs() < 1e-9);
        assert!(ev.complete);
    }

    fn fixed_scatter_run(p: &RadialPotential, eps: f64, r: f64, speed: f64) -> (Trajectory, ScatterOutcomeCheck) {
        let mut cfg = config(eps, 1.0, 2000);
        let xj = Vec3::new(0.5, 0.5, 0.5);
        let start = 0.2;
        cfg.horizon = 2.0 * start / speed;
        let bg = single(xj, Vec3::ZERO);
        let x0 = Vec3::new(0.5 - start, 0.5 + 0.6 * r * eps, 0.5 - 0.8 * r * eps);
        let v0 = Vec3::new(speed, 0.0, 0.0);
        let tr = run_trajectory_with(&cfg, &bg, p, x0, v0, RunOptions { record_steps: true }).unwrap();
        let geom = ImpactGeometry::from_offset((xj - x0) / eps, -v0).unwrap();
        let out = scatter(p, &geom, v0, Vec3::ZERO, 1e-12).unwrap();
        (
            tr,
            ScatterOutcomeCheck {
                v_out: out.tagged_velocity(Kinematics::FixedScatterer),
                tau: out.tau_star,
            },
        )
    }

    struct ScatterOutcomeCheck {
        v_out: Vec3,
        tau: Option<f64>,
    }

    #[test]
    fn single_scatterer_matches_scattering_map() {
        let eps = 0.02;
        let cfg = config(eps, 1.0, 1);
        let p = truncate(&make_power_law(4.0).unwrap(), cfg.radius()).unwrap();
        for &r in &[0.0, 0.3, 0.9, 1.5, cfg.radius() - 0.5] {
            let (tr, oracle) = fixed_scatter_run(&p, eps, r, 1.3);
            let v_end = tr.final_state.v;
            assert!((v_end - oracle.v_out).norm() < 1e-6, "r={r}: {v_end:?} vs {:?}", oracle.v_out);
            // sojourn in the ball of radius R is the scattering time
            let ev = tr.events[0];
            let tau = oracle.tau.unwrap();
            assert!(((ev.t_exit - ev.t_entry) / eps - tau).abs() < 1e-6 * tau.max(1.0), "r={r}");
        }
    }

    #[test]
    fn energy_is_conserved_against_fixed_scatterer() {
        let eps = 0.02;
        let radius = config(eps, 1.0, 1).radius();
        for p in [
            make_stretched_exponential(1.0, 0.5).unwrap(),
            truncate(&make_power_law(4.0).unwrap(), radius).unwrap(),
        ] {
            let (tr, _) = fixed_scatter_run(&p, eps, 0.4, 1.0);
            assert!(tr.steps.len() > 20);
            let bg = single(Vec3::new(0.5, 0.5, 0.5), Vec3::ZERO);
            let e0 = tagged_energy(&PhaseState { x: tr.samples[0].x, v: tr.samples[0].v, t: 0.0 }, &bg, &p, eps);
            let mut worst: f64 = 0.0;
            for s in &tr.steps {
            let e = tagged_energy(&PhaseState { x: s.x, v: s.v, t: s.t }, &bg, &p, eps);
                worst = worst.max(((e - e0) / e0).abs());
            }
            assert!(worst < 1e-8, "{}: relative energy drift {worst}", p.name());
        }
    }

    #[test]
    fn time_reversal_returns_to_start() {
        let cfg = {
            let mut c = config(0.05, 0.6, 4);
            c.n_background = 400;
            c
        };
        let mut rng = substream(11, Domain::Background, 0);
        let g = VelocityDensity::UniformBall {
            radius: 1.0,
            center: Vec3::ZERO,
        };
        let frozen = Background {
            particles: sample_background(&cfg, &g, Some(Vec3::new(0.1, 0.1, 0.1)), &mut rng)
                .unwrap()
                .particles
                .into_iter()
                .map(|q| BackgroundParticle { x: q.x, v: Vec3::ZERO })
                .collect(),
        };
        let p = truncate(&make_power_law(4.0).unwrap(), cfg.radius()).unwrap();
        let x0 = Vec3::new(0.1, 0.1, 0.1);
        let v0 = Vec3::new(1.1, 0.7, -0.4);
        let fwd = run_trajectory(&cfg, &frozen, &p, x0, v0).unwrap();
        assert!(!fwd.events.is_empty(), "test needs at least one collision");
        let back = run_trajectory(&cfg, &frozen, &p, fwd.final_state.x, -fwd.final_state.v).unwrap();
        assert!((back.final_state.x - x0).min_image().norm() < 1e-6);
        assert!((back.final_state.v + v0).norm() < 1e-6);
    }

    #[test]
    fn moving_scatterer_is_galilean() {
        // a uniformly moving scatterer acts on v - v_j as a fixed one does
        let eps = 0.02;
        let cfg = config(eps, 0.5, 2);
        let p = make_compact_core(2.0).unwrap();
        let vj = Vec3::new(0.2, -0.4, 0.1);
        let xj = Vec3::new(0.5, 0.5, 0.5);
        let x0 = Vec3::new(0.35, 0.505, 0.49);
        let v0 = Vec3::new(1.0, 0.0, 0.0) + vj;
        let moving = run_trajectory(&cfg, &single(xj, vj), &p, x0, v0).unwrap();
        let fixed = run_trajectory(&cfg, &single(xj, Vec3::ZERO), &p, x0, v0 - vj).unwrap();
        assert_eq!(moving.events.len(), 1);
        assert!((moving.final_state.v - vj - fixed.final_state.v).norm() < 1e-8);
    }

    #[test]
    fn background_exclusion_and_overlap_rate() {
        let cfg = config(0.05, 1.0, 1);
        let g = VelocityDensity::Point { v: Vec3::ZERO };
        let x0 = Vec3::new(0.3, 0.3, 0.3);
        let mut rng = substream(5, Domain::Background, 0);
        let bg = sample_background(&cfg, &g, Some(x0), &mut rng).unwrap();
        assert_eq!(bg.len(), cfg.n_background);
        assert!(!bg.overlaps(x0, cfg.radius() * cfg.epsilon));
        let trials = 4000;
        let mut clean = 0;
        for k in 0..trials {
            let mut rng = substream(5, Domain::Background, k + 1);
            let bg = sample_background(&cfg, &g, None, &mut rng).unwrap();
            if !bg.overlaps(x0, cfg.radius() * cfg.epsilon) {
                clean += 1;
            }
        }
        let (lo, hi) = crate::stats::wilson_interval(clean, trials, 3.0);
        assert!(lo <= cfg.xi() && cfg.xi() <= hi, "xi {} not in [{lo}, {hi}]", cfg.xi());
    }
}
