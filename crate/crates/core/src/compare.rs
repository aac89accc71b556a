//! Distances between densities, collision-operator gaps with the explicit
//! `C₁(R)` bound, and trajectory divergence between a long-range potential
//! and its truncation.

use crate::density::{InitialDensity, VelocityDensity};
use crate::dynamics::{run_trajectory, sample_background, Background, SimConfig, Trajectory};
use crate::error::{invalid, Result};
use crate::observables::{Binning, TestFunction};
use crate::potentials::{truncate, RadialPotential};
use crate::quadrature::{integrate, QuadOptions};
use crate::rng::{substream, Domain, SimRng};
use crate::scattering::{deviation_angle, kappa, scattering_vector, ImpactGeometry, Kinematics};
use crate::stats::{jackknife_mean_se, median, percentile, wilson_interval};
use crate::trees::{classify_trajectory, Fraction};
use crate::vec3::Vec3;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakGap {
    pub label: String,
    pub gap: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub tv_binned: f64,
    /// 95 % bootstrap percentile interval.
    pub tv_ci: (f64, f64),
    pub weak_gaps: Vec<WeakGap>,
    pub samples_a: usize,
    pub samples_b: usize,
    pub bins: usize,
    /// More than 10 % of occupied bins hold fewer than 5 samples.
    pub low_occupancy: bool,
}

fn histogram(states: &[(Vec3, Vec3)], binning: &Binning) -> Vec<f64> {
    let mut h = vec![0.0; binning.len()];
    let w = 1.0 / states.len() as f64;
    for &(x, v) in states {
        h[binning.index(x, v)] += w;
    }
    h
}

/// `½ Σ |p - q|`.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Total variation between two empirical distributions of counts.
pub fn count_tv(a: &[usize], b: &[usize]) -> f64 {
    let top = a.iter().chain(b).copied().max().unwrap_or(0);
    let mut pa = vec![0.0; top + 1];
    let mut pb = vec![0.0; top + 1];
    for &n in a {
        pa[n] += 1.0 / a.len() as f64;
    }
    for &n in b {
        pb[n] += 1.0 / b.len() as f64;
    }
    total_variation(&pa, &pb)
}

/// Binned total variation with a bootstrap interval, and weak gaps
/// `|⟨f_A - f_B, h⟩|` with combined jackknife errors.
pub fn density_distance(
    a: &[(Vec3, Vec3)],
    b: &[(Vec3, Vec3)],
    binning: &Binning,
    tests: &[TestFunction],
    bootstrap: usize,
    rng: &mut SimRng,
) -> Result<DistanceReport> {
    binning.validate()?;
    if a.len() < 2 || b.len() < 2 {
        return Err(invalid("ensembles need at least two samples"));
    }
    let ha = histogram(a, binning);
    let hb = histogram(b, binning);
    let tv = total_variation(&ha, &hb);

    let mut boots = Vec::with_capacity(bootstrap);
    let mut ra = Vec::with_capacity(a.len());
    let mut rb = Vec::with_capacity(b.len());
    for _ in 0..bootstrap {
        ra.clear();
        rb.clear();
        ra.extend((0..a.len()).map(|_| a[rng.random_range(0..a.len())]));
        rb.extend((0..b.len()).map(|_| b[rng.random_range(0..b.len())]));
        boots.push(total_variation(&histogram(&ra, binning), &histogram(&rb, binning)));
    }
    boots.sort_by(f64::total_cmp);
    let tv_ci = if boots.is_empty() {
        (tv, tv)
    } else {
        (percentile(&boots, 0.025), percentile(&boots, 0.975))
    };

    let weak_gaps = tests
        .iter()
        .map(|h| {
            let va: Vec<f64> = a.iter().map(|&(_, v)| h.eval(v)).collect();
            let vb: Vec<f64> = b.iter().map(|&(_, v)| h.eval(v)).collect();
            let ma = va.iter().sum::<f64>() / va.len() as f64;
            let mb = vb.iter().sum::<f64>() / vb.len() as f64;
            let se = (jackknife_mean_se(&va, 20).powi(2) + jackknife_mean_se(&vb, 20).powi(2)).sqrt();
            WeakGap {
                label: h.label(),
                gap: (ma - mb).abs(),
                stderr: se,
            }
        })
        .collect();

    let counts: Vec<(f64, f64)> = ha
        .iter()
        .zip(&hb)
        .map(|(p, q)| (p * a.len() as f64, q * b.len() as f64))
        .collect();
    let occupied = counts.iter().filter(|(x, y)| *x > 0.0 || *y > 0.0).count();
    let sparse = counts
        .iter()
        .filter(|(x, y)| (*x > 0.0 || *y > 0.0) && (x.round() < 5.0 || y.round() < 5.0))
        .count();
    Ok(DistanceReport {
        tv_binned: tv,
        tv_ci,
        weak_gaps,
        samples_a: a.len(),
        samples_b: b.len(),
        bins: binning.len(),
        low_occupancy: occupied > 0 && sparse as f64 > 0.1 * occupied as f64,
    })
}

/// The five terms of `C₁(R)` with `C = 1` and `η = 1/ln R`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct C1Terms {
    pub radius: f64,
    pub eta: f64,
    /// Split point `R - 1 - 1/η`.
    pub split: f64,
    pub kappa_term: f64,
    pub tail_term: f64,
    pub third: f64,
    pub fourth: f64,
    pub fifth: f64,
    /// `∫(1 + |v|²) g`.
    pub moment: f64,
    pub total: f64,
}

/// `∫_A^∞ r dr / (1 + η² r^s)`.
pub fn grazing_tail_integral(a: f64, eta: f64, s: f64) -> Result<f64> {
    if s == 4.0 {
        return Ok((0.5 * PI - (eta * a * a).atan()) / (2.0 * eta));
    }
    // r = A/t maps the tail onto (0, 1]
    let c = eta * eta * a.powf(s);
    let f = |t: f64| if t == 0.0 { 0.0 } else { a * a * t.powf(s - 3.0) / (t.powf(s) + c) };
    Ok(integrate(f, 0.0, 1.0, QuadOptions::new(1e-14, 1e-12), "grazing tail")?.value)
}

pub fn c1_formula(radius: f64, s: f64, g_moment: f64) -> Result<C1Terms> {
    if !(s > 2.0) {
        return Err(invalid(format!("decay exponent must exceed 2, got {s}")));
    }
    if !(radius > std::f64::consts::E) {
        return Err(invalid(format!("C₁ needs R > e, got {radius}")));
    }
    let ln_r = radius.ln();
    let eta = 1.0 / ln_r;
    let split = radius - 1.0 - 1.0 / eta;
    if !(split > 0.0) {
        return Err(invalid(format!("split point R - 1 - ln R is not positive for R = {radius}")));
    }
    let kappa_int = integrate(
        |r: f64| r * kappa(r, radius, s).unwrap_or(0.0),
        0.0,
        split,
        QuadOptions::new(0.0, 1e-12),
        "C1 kappa term",
    )?
    .value;
    let kappa_term = kappa_int / (eta * eta);
    let tail_term = grazing_tail_integral(split, eta, s)?;
    let third = 1.0 / (radius.powf(s - 1.5) * ln_r.powf(3.5));
    let inner = radius - 1.0;
    let log_int = -0.5 * radius * radius * (1.0 - (inner / radius).powi(2)).ln();
    let fourth = log_int / (radius.powf(s) * ln_r.powi(3));
    let fifth = (PI / s) / (2.0 * PI / s).sin() / ln_r.powi(3);
    let total = (kappa_term + tail_term + third + fourth + fifth) * g_moment;
    Ok(C1Terms {
        radius,
        eta,
        split,
        kappa_term,
        tail_term,
        third,
        fourth,
        fifth,
        moment: g_moment,
        total,
    })
}

/// Mixture proposal for impact parameters: area-uniform on `[0, r0]` and
/// log-uniform on `[r0, r_max]`, each with probability one half.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpactProposal {
    pub r0: f64,
    pub r_max: f64,
}

impl ImpactProposal {
    pub fn sample(&self, rng: &mut SimRng) -> f64 {
        let u: f64 = rng.random();
        if rng.random::<f64>() < 0.5 {
            self.r0 * u.sqrt()
        } else {
            self.r0 * (self.r_max / self.r0).powf(u)
        }
    }

    pub fn density(&self, r: f64) -> f64 {
        if r <= self.r0 {
            r / (self.r0 * self.r0)
        } else {
            0.5 / (r * (self.r_max / self.r0).ln())
        }
    }
}

/// One collision operator entering a weak form: a potential, and an
/// optional cap on impact parameters.
#[derive(Clone, Debug)]
pub struct OperatorSide {
    pub potential: RadialPotential,
    pub radius: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakFormEstimate {
    pub value: f64,
    pub stderr: f64,
}

/// Weak-form estimates from one set of common random numbers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakForms {
    pub sides: Vec<WeakFormEstimate>,
    /// Estimates of `⟨L_i f - L_j f, h⟩` for consecutive pairs.
    pub differences: Vec<WeakFormEstimate>,
    pub samples: usize,
    pub proposal: ImpactProposal,
    /// Largest single-sample share of the summed magnitude, per side.
    pub max_weight_share: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeakFormOptions {
    pub samples: usize,
    pub seed: u64,
    pub kinematics: Kinematics,
    pub angle_tol: f64,
    pub proposal: ImpactProposal,
}

#[inline]
fn test_increment(h: &TestFunction, v: Vec3, delta: Vec3) -> f64 {
    // tiny increments are linearized to avoid cancellation in h(v+δ) - h(v)
    match h.gradient(v) {
        Some(grad) if delta.norm() < 1e-7 => grad.dot(delta),
        _ => h.eval(v + delta) - h.eval(v),
    }
}

/// Monte Carlo estimates of `⟨L f, h⟩ = ∫ f(v) g(v⋆) |w| (h(v') - h(v)) dS`
/// for each side, with all sides sharing `(v, v⋆, r, ζ)` draws.
pub fn weak_forms(f: &[Vec3], g: &VelocityDensity, h: &TestFunction, sides: &[OperatorSide], opts: &WeakFormOptions) -> Result<WeakForms> {
    if f.is_empty() {
        return Err(invalid("empty f ensemble"));
    }
    let scale = match opts.kinematics {
        Kinematics::EqualMass => 1.0,
        Kinematics::FixedScatterer => 2.0,
    };
    const BLOCK: usize = 4096;
    let blocks = opts.samples.div_ceil(BLOCK);
    let per_block: Vec<Vec<Vec<f64>>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(opts.seed, Domain::OperatorMc, b as u64);
            let n = BLOCK.min(opts.samples - b * BLOCK);
            let mut out = vec![Vec::with_capacity(n); sides.len()];
            for _ in 0..n {
                let v = f[rng.random_range(0..f.len())];
                let v_star = g.sample(&mut rng);
                let r = opts.proposal.sample(&mut rng);
                let zeta = 2.0 * PI * rng.random::<f64>();
                let w = v_star - v;
                let speed = w.norm();
                if speed == 0.0 {
                    out.iter_mut().for_each(|o| o.push(0.0));
                    continue;
                }
                let geom = ImpactGeometry::new(r, zeta, w)?;
                let weight = 2.0 * PI * r / opts.proposal.density(r);
                for (side, o) in sides.iter().zip(out.iter_mut()) {
                    if side.radius.is_some_and(|cap| r >= cap) {
                        o.push(0.0);
                        continue;
                    }
                    let theta = deviation_angle(&side.potential, r, speed, opts.angle_tol)?;
                    let nu = scattering_vector(theta, &geom);
                    let delta = nu * (scale * speed * (0.5 * theta).sin());
                    o.push(speed * test_increment(h, v, delta) * weight);
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut columns: Vec<Vec<f64>> = vec![Vec::with_capacity(opts.samples); sides.len()];
    for block in per_block {
        for (col, part) in columns.iter_mut().zip(block) {
            col.extend(part);
        }
    }
    let estimate = |xs: &[f64]| {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        WeakFormEstimate {
            value: m,
            stderr: (var / n).sqrt(),
        }
    };
    let sides_est = columns.iter().map(|c| estimate(c)).collect();
    let differences = columns
        .windows(2)
        .map(|pair| {
            let d: Vec<f64> = pair[0].iter().zip(&pair[1]).map(|(a, b)| a - b).collect();
            estimate(&d)
        })
        .collect();
    let max_weight_share = columns
        .iter()
        .map(|c| {
            let total: f64 = c.iter().map(|x| x.abs()).sum();
            let top = c.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            if total > 0.0 {
                top / total
            } else {
                0.0
            }
        })
        .collect();
    Ok(WeakForms {
        sides: sides_est,
        differences,
        samples: opts.samples,
        proposal: opts.proposal,
        max_weight_share,
    })
}

/// Impact parameter beyond which grazing collisions contribute less than
/// `budget` to a weak form, assuming `θ ∝ r^{-s}` past `r_ref`.
pub fn grazing_cutoff(p: &RadialPotential, h: &TestFunction, kinematics: Kinematics, budget: f64) -> Result<f64> {
    let s = p.meta().s;
    let grad = h.gradient_bound().unwrap_or(1.0);
    let k = match kinematics {
        Kinematics::EqualMass => 1.0,
        Kinematics::FixedScatterer => 2.0,
    };
    // |w| |Δh| ≤ k ‖∇h‖ |w|² θ and |w|² θ is speed independent at large r
    let r_ref = 1e3;
    let c = deviation_angle(p, r_ref, 1.0, 1e-12)? * r_ref.powf(s);
    let tail = |r: f64| 2.0 * PI * k * grad * c * r.powf(2.0 - s) / (s - 2.0);
    let mut r = r_ref;
    while tail(r) > budget && r < 1e12 {
        r *= 2.0;
    }
    Ok(r)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorGap {
    pub radius: f64,
    /// `⟨L^R f - L f, h⟩`.
    pub gap: WeakFormEstimate,
    pub long: WeakFormEstimate,
    pub short: WeakFormEstimate,
    pub c1: C1Terms,
    pub gradient_bound: f64,
    /// `∫(1 + |v|²) f` over the ensemble.
    pub moment: f64,
    /// `C₁(R) ‖∇h‖ ∫(1 + |v|²) f`.
    pub bound: f64,
    /// `|⟨L^R f, h⟩| / (‖∇h‖ ∫(1 + |v|²) f)`.
    pub c2_estimate: f64,
    pub r_max: f64,
    pub samples: usize,
    pub max_weight_share: Vec<f64>,
}

impl OperatorGap {
    /// `|gap| ≤ bound` up to two standard errors.
    pub fn within_bound(&self) -> bool {
        self.gap.value.abs() - 2.0 * self.gap.stderr <= self.bound
    }
}

/// Empirical gap between the cut-off and long-range collision operators
/// tested against `h`, together with the `C₁(R)` bound.
pub fn operator_gap(
    f: &[Vec3],
    g: &VelocityDensity,
    p: &RadialPotential,
    radius: f64,
    h: &TestFunction,
    opts: &WeakFormOptions,
) -> Result<OperatorGap> {
    let grad = h
        .gradient_bound()
        .ok_or_else(|| invalid("operator gap needs a Lipschitz test function"))?;
    let short = truncate(p, radius)?;
    let sides = [
        OperatorSide {
            potential: short,
            radius: Some(radius),
        },
        OperatorSide {
            potential: p.clone(),
            radius: None,
        },
    ];
    let wf = weak_forms(f, g, h, &sides, opts)?;
    let moment = f.iter().map(|v| 1.0 + v.norm2()).sum::<f64>() / f.len() as f64;
    let c1 = c1_formula(radius, p.meta().s, g.moments().weighted_mass)?;
    Ok(OperatorGap {
        radius,
        gap: wf.differences[0],
        long: wf.sides[1],
        short: wf.sides[0],
        bound: c1.total * grad * moment,
        c2_estimate: wf.sides[0].value.abs() / (grad * moment),
        c1,
        gradient_bound: grad,
        moment,
        r_max: opts.proposal.r_max,
        samples: opts.samples,
        max_weight_share: wf.max_weight_share,
    })
}

/// `C₂` estimates `|⟨L^R f, h⟩| / (‖∇h‖ ∫(1 + |v|²) f)` for several radii
/// from common random numbers.
pub fn c2_estimates(
    f: &[Vec3],
    g: &VelocityDensity,
    p: &RadialPotential,
    radii: &[f64],
    h: &TestFunction,
    opts: &WeakFormOptions,
) -> Result<Vec<f64>> {
    let grad = h
        .gradient_bound()
        .ok_or_else(|| invalid("C₂ needs a Lipschitz test function"))?;
    let sides = radii
        .iter()
        .map(|&r| {
            Ok(OperatorSide {
                potential: truncate(p, r)?,
                radius: Some(r),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let wf = weak_forms(f, g, h, &sides, opts)?;
    let moment = f.iter().map(|v| 1.0 + v.norm2()).sum::<f64>() / f.len() as f64;
    Ok(wf.sides.iter().map(|e| e.value.abs() / (grad * moment)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    /// `sup_t |x - x^R| + |v - v^R|` over common sample times.
    pub sup_gap: f64,
    pub gaps: Vec<(f64, f64)>,
    /// Both runs log the same near collisions in the same order.
    pub same_collisions: bool,
}

/// Compares sample paths of the same initial data under `p` and `p_short`.
pub fn compare_paths(long: &Trajectory, short: &Trajectory) -> Divergence {
    let gaps: Vec<(f64, f64)> = long
        .samples
        .iter()
        .zip(&short.samples)
        .map(|(a, b)| (a.t, (a.x - b.x).min_image().norm() + (a.v - b.v).norm()))
        .collect();
    let ids = |t: &Trajectory| t.events.iter().map(|e| e.particle).collect::<Vec<_>>();
    Divergence {
        sup_gap: gaps.iter().fold(0.0, |m, g| m.max(g.1)),
        gaps,
        same_collisions: ids(long) == ids(short),
    }
}

pub fn divergence(
    cfg: &SimConfig,
    bg: &Background,
    x0: Vec3,
    v0: Vec3,
    p: &RadialPotential,
    p_short: &RadialPotential,
) -> Result<Divergence> {
    let long = run_trajectory(cfg, bg, p, x0, v0)?;
    let short = run_trajectory(cfg, bg, p_short, x0, v0)?;
    Ok(compare_paths(&long, &short))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceRow {
    pub epsilon: f64,
    pub seed: u64,
    pub radius: f64,
    pub b: f64,
    pub trajectories: usize,
    pub matched: usize,
    pub median: f64,
    /// Distribution-free 95 % interval for the median.
    pub median_ci: (f64, f64),
    pub max: f64,
    pub differing: Fraction,
    pub outside_r: Fraction,
}

/// Order-statistic confidence interval for the median of sorted data.
fn median_ci(sorted: &[f64]) -> (f64, f64) {
    let n = sorted.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let half = 0.5 * n as f64;
    let spread = 0.98 * (n as f64).sqrt();
    let lo = ((half - spread).floor().max(0.0)) as usize;
    let hi = ((half + spread).ceil() as usize).min(n - 1);
    (sorted[lo], sorted[hi])
}

/// Summarizes paired runs: each entry is the path comparison and whether
/// the short-range tree lies in the restriction set.
pub fn divergence_row(cfg: &SimConfig, runs: &[(Divergence, bool)]) -> DivergenceRow {
    let n = runs.len();
    let mut matched: Vec<f64> = runs.iter().filter(|(d, _)| d.same_collisions).map(|(d, _)| d.sup_gap).collect();
    matched.sort_by(f64::total_cmp);
    let differing = runs.iter().filter(|(d, _)| !d.same_collisions).count() as u64;
    let outside = runs.iter().filter(|(_, r)| !r).count() as u64;
    DivergenceRow {
        epsilon: cfg.epsilon,
        seed: cfg.seed,
        radius: cfg.radius(),
        b: cfg.b(),
        trajectories: n,
        matched: matched.len(),
        median: if matched.is_empty() { f64::NAN } else { median(&matched) },
        median_ci: median_ci(&matched),
        max: matched.last().copied().unwrap_or(f64::NAN),
        differing: Fraction::new(differing, n as u64),
        outside_r: Fraction::new(outside, n as u64),
    }
}

/// Initial data and background of trajectory `i` in a cell. Shared by every
/// consumer so paired runs see identical randomness.
pub fn cell_member(cfg: &SimConfig, g: &VelocityDensity, f0: &InitialDensity, i: usize) -> Result<(Vec3, Vec3, Background)> {
    let mut rng = substream(cfg.seed, Domain::Tagged, i as u64);
    let (x0, v0) = f0.sample(&mut rng);
    let mut bg_rng = substream(cfg.seed, Domain::Background, i as u64);
    let bg = sample_background(cfg, g, Some(x0), &mut bg_rng)?;
    Ok((x0, v0, bg))
}

/// One `(ε, seed)` cell: `n` trajectories under `p` and its truncation at
/// `R(ε)`, each with its own background.
pub fn divergence_cell(
    cfg: &SimConfig,
    p: &RadialPotential,
    g: &VelocityDensity,
    f0: &InitialDensity,
    n: usize,
) -> Result<DivergenceRow> {
    let p_short = truncate(p, cfg.radius())?;
    let runs: Vec<(Divergence, bool)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (x0, v0, bg) = cell_member(cfg, g, f0, i)?;
            let long = run_trajectory(cfg, &bg, p, x0, v0)?;
            let short = run_trajectory(cfg, &bg, &p_short, x0, v0)?;
            let in_r = classify_trajectory(&short, cfg)?.in_r_eps;
            Ok((compare_paths(&long, &short), in_r))
        })
        .collect::<Result<_>>()?;
    Ok(divergence_row(cfg, &runs))
}

/// Divergence table over an `ε` grid and seeds; `base` supplies everything
/// but `ε`, `N` and the seed.
pub fn divergence_sweep(
    base: &SimConfig,
    epsilons: &[f64],
    seeds: &[u64],
    p: &RadialPotential,
    g: &VelocityDensity,
    f0: &InitialDensity,
    n: usize,
) -> Result<Vec<DivergenceRow>> {
    let mut rows = Vec::new();
    for &eps in epsilons {
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.epsilon = eps;
            cfg.n_background = (eps.powi(-2)).round() as usize;
            cfg.seed = seed;
            cfg.validate()?;
            rows.push(divergence_cell(&cfg, p, g, f0, n)?);
        }
    }
    Ok(rows)
}

/// Wilson interval helper re-exported for report writers.
pub fn proportion_ci(successes: u64, n: u64) -> (f64, f64) {
    wilson_interval(successes, n, 1.959_963_984_540_054)
}
