//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line to
//! the real stdout (bypassing libtest capture) and then asserts.
//!
//! Desk-scale parameters are fixed here; heavy ensembles shared by two
//! criteria are computed once.

use rand::Rng;
use rayleigh_core::campaign::{self, md_cell, MdCell, Subcommand};
use rayleigh_core::compare::{
    c1_formula, c2_estimates, density_distance, divergence_sweep, grazing_cutoff, operator_gap, ImpactProposal,
    WeakFormOptions,
};
use rayleigh_core::config::RunConfig;
use rayleigh_core::density::{InitialDensity, PositionDensity, VelocityDensity};
use rayleigh_core::dynamics::{
    run_trajectory, run_trajectory_with, tagged_energy, Background, BackgroundParticle, PhaseState, RunOptions, SimConfig,
};
use rayleigh_core::lbe::{evolve_walker, loss_rate, run_walkers, JumpWalker, LbeConfig};
use rayleigh_core::observables::{Binning, TestFunction};
use rayleigh_core::ode::Dopri5;
use rayleigh_core::potentials::{
    make_compact_core, make_free, make_power_law, make_stretched_exponential, truncate, RadialPotential,
};
use rayleigh_core::rng::{substream, Domain};
use rayleigh_core::scattering::{
    angle_gap, deviation_angle, scatter, scattering_time, ImpactGeometry, Kinematics,
};
use rayleigh_core::stats::{chi_square_gof, ks_one_sample, log_log_slope, mean};
use rayleigh_core::trees::{measure_excluded, rejection_acceptance};
use rayleigh_core::Vec3;
use std::f64::consts::PI;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

const GRID: [f64; 3] = [0.1, 0.05, 0.025];
const SEEDS: [u64; 3] = [1, 2, 3];

fn report(n: u32, pass: bool, detail: String) {
    let line = format!("criterion {n:>2}: {} {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(pass, "criterion {n} failed: {detail}");
}

fn strictly_decreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] < w[0])
}

fn maxwellian() -> VelocityDensity {
    VelocityDensity::Maxwellian {
        temperature: 1.0,
        drift: Vec3::ZERO,
    }
}

fn box_initial() -> InitialDensity {
    InitialDensity {
        position: PositionDensity::Box {
            lo: Vec3::new(0.375, 0.375, 0.375),
            hi: Vec3::new(0.625, 0.625, 0.625),
        },
        velocity: maxwellian(),
    }
}

fn gaussian_vec(rng: &mut impl Rng) -> Vec3 {
    let n = rand_distr::StandardNormal;
    Vec3::new(rng.sample(n), rng.sample(n), rng.sample(n))
}

#[test]
fn criterion_01_scattering_conservation() {
    let start = Instant::now();
    let p = make_power_law(4.0).unwrap();
    let mut rng = substream(1, Domain::Misc, 1);
    let mut worst = [0.0f64; 4];
    for _ in 0..10_000 {
        let v = gaussian_vec(&mut rng);
        let v_star = gaussian_vec(&mut rng);
        let r = 3.0 * rng.random::<f64>();
        let zeta = 2.0 * PI * rng.random::<f64>();
        let geom = ImpactGeometry::new(r, zeta, v_star - v).unwrap();
        let out = scatter(&p, &geom, v, v_star, 1e-12).unwrap();
        let scale = v.norm() + v_star.norm();
        let e0 = v.norm2() + v_star.norm2();
        worst[0] = worst[0].max((out.v_prime + out.v_star_prime - v - v_star).norm() / scale);
        worst[1] = worst[1].max((out.v_prime.norm2() + out.v_star_prime.norm2() - e0).abs() / e0);
        worst[2] = worst[2].max((out.nu.norm() - 1.0).abs());
        let w = (v_star - v).norm();
        worst[3] = worst[3].max(((out.v_star_prime - out.v_prime).norm() - w).abs() / w);
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst.iter().all(|&e| e < 1e-12) && secs < 10.0;
    report(
        1,
        pass,
        format!(
            "momentum {:.1e}, energy {:.1e}, |nu| {:.1e}, |w| {:.1e} over 1e4 collisions in {secs:.1} s",
            worst[0], worst[1], worst[2], worst[3]
        ),
    );
}

/// Deflection of `ÿ = -∇ψ(|y|)` in the collision plane, started far away.
fn ode_deflection(p: &RadialPotential, r: f64, speed: f64) -> f64 {
    let start = 1e4;
    let f = |_t: f64, y: &[f64; 4]| {
        let rho = (y[0] * y[0] + y[1] * y[1]).sqrt();
        let a = -p.dpsi(rho) / rho;
        [y[2], y[3], a * y[0], a * y[1]]
    };
    let solver = Dopri5::new(1e-13, 1e-13);
    let y = solver
        .integrate(f, 0.0, [start, -r, -speed, 0.0], 2.0 * start / speed, 50.0, |_, _, _| {})
        .unwrap();
    let cos = -y[2] / (y[2] * y[2] + y[3] * y[3]).sqrt();
    cos.clamp(-1.0, 1.0).acos()
}

#[test]
fn criterion_02_quadrature_vs_trajectory() {
    let start = Instant::now();
    let p = make_power_law(4.0).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..10 {
        let r = 0.1 + 0.4 * i as f64;
        for j in 0..10 {
            let speed = 0.3 + 0.3 * j as f64;
            let quad = deviation_angle(&p, r, speed, 1e-12).unwrap();
            worst = worst.max((quad - ode_deflection(&p, r, speed)).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(2, worst < 1e-6 && secs < 120.0, format!("max |theta_quad - theta_ode| = {worst:.2e} on 10x10 grid in {secs:.1} s"));
}

#[test]
fn criterion_03_free_and_head_on() {
    let free = make_free();
    let potentials = [
        make_power_law(4.0).unwrap(),
        make_stretched_exponential(1.0, 1.0).unwrap(),
        make_compact_core(2.0).unwrap(),
        truncate(&make_power_law(4.0).unwrap(), 10.0).unwrap(),
    ];
    let mut free_err: f64 = 0.0;
    let mut head_err: f64 = 0.0;
    for speed in [0.05, 0.3, 1.0, 2.5, 10.0] {
        for r in [0.0, 0.2, 1.0, 7.0, 100.0] {
            free_err = free_err.max(deviation_angle(&free, r, speed, 1e-12).unwrap().abs());
        }
        for p in &potentials {
            head_err = head_err.max((deviation_angle(p, 0.0, speed, 1e-12).unwrap() - PI).abs());
        }
    }
    report(
        3,
        free_err <= 1e-10 && head_err <= 1e-10,
        format!("free |theta| {free_err:.1e}, head-on |theta - pi| {head_err:.1e}"),
    );
}

#[test]
fn criterion_04_bracketing_and_grazing_decay() {
    let start = Instant::now();
    let radius = 10.0;
    let eta = 1.0 / f64::ln(radius);
    let p = make_power_law(4.0).unwrap();
    // bracketing sweep: 40 impact parameters x 25 speeds
    let mut violations = 0;
    let mut worst_excess: f64 = 0.0;
    for i in 0..40 {
        let r = 0.05 + 14.95 * i as f64 / 39.0;
        for j in 0..25 {
            let speed = eta + (4.0 - eta) * j as f64 / 24.0;
            let a = angle_gap(&p, radius, r, speed, 1e-12).unwrap();
            let ok = a.theta_r >= 0.0 && a.theta_r <= a.theta && a.theta <= PI;
            if !ok {
                violations += 1;
                worst_excess = worst_excess.max(a.theta_r - a.theta);
            }
        }
    }
    // grazing product over r in [rho2, 1e3]
    let rho2 = p.meta().rho2.max(1e-3);
    let rs: Vec<f64> = (0..=60).map(|k| rho2 * (1e3 / rho2).powf(k as f64 / 60.0)).collect();
    let mut product_max: f64 = 0.0;
    let mut tail_ratio: f64 = 0.0;
    for speed in [eta, 1.0, 3.0] {
        let prod: Vec<f64> = rs
            .iter()
            .map(|&r| deviation_angle(&p, r, speed, 1e-12).unwrap() * (1.0 + eta * eta * r.powi(4)))
            .collect();
        product_max = product_max.max(prod.iter().cloned().fold(0.0, f64::max));
        let last: Vec<f64> = rs.iter().zip(&prod).filter(|(r, _)| **r >= 1e2).map(|(_, v)| *v).collect();
        let (lo, hi) = last.iter().fold((f64::MAX, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
        tail_ratio = tail_ratio.max(hi / lo);
    }
    let bounded = product_max.is_finite() && tail_ratio < 2.0;
    // gap decay beyond R, last decade of [R, 1e3]
    let decade: Vec<f64> = (0..=20).map(|k| 1e2 * 10f64.powf(k as f64 / 20.0)).collect();
    let mut slope_max = f64::MIN;
    for speed in [eta, 1.0, 3.0] {
        let gaps: Vec<f64> = decade
            .iter()
            .map(|&r| angle_gap(&p, radius, r, speed, 1e-12).unwrap().gap)
            .collect();
        slope_max = slope_max.max(log_log_slope(&decade, &gaps));
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = violations == 0 && bounded && slope_max <= -3.5 && secs < 300.0;
    report(
        4,
        pass,
        format!(
            "bracketing violations {violations}/1000 (max theta_R - theta {worst_excess:.2e}); \
             grazing product max {product_max:.3e}, last-decade spread {tail_ratio:.3}; \
             gap slope {slope_max:.3}; {secs:.1} s"
        ),
    );
}

#[test]
fn criterion_05_c1_decay_and_c2_uniformity() {
    let g = VelocityDensity::UniformBall {
        radius: 1.0,
        center: Vec3::ZERO,
    };
    let moment = g.moments().weighted_mass;
    let c1: Vec<f64> = [10.0, 1e2, 1e3, 1e4]
        .iter()
        .map(|&r| c1_formula(r, 4.0, moment).unwrap().total)
        .collect();
    let p = make_power_law(4.0).unwrap();
    let h = TestFunction::GaussianBump {
        center: Vec3::new(0.5, 0.0, 0.0),
        width: 0.8,
    };
    let mut rng = substream(5, Domain::Misc, 0);
    let f: Vec<Vec3> = (0..10_000).map(|_| maxwellian().sample(&mut rng)).collect();
    let opts = WeakFormOptions {
        samples: 200_000,
        seed: 5,
        kinematics: Kinematics::EqualMass,
        angle_tol: 1e-10,
        proposal: ImpactProposal { r0: 10.0, r_max: 80.0 },
    };
    let c2 = c2_estimates(&f, &g, &p, &[10.0, 20.0, 40.0, 80.0], &h, &opts).unwrap();
    let (lo, hi) = c2.iter().fold((f64::MAX, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
    let spread = (hi - lo) / mean(&c2);
    report(
        5,
        strictly_decreasing(&c1) && spread < 0.1,
        format!("C1 at R=1e1..1e4: {c1:?}; C2 over R=10..80: {c2:.5?}, relative spread {spread:.4}"),
    );
}

#[test]
fn criterion_06_scattering_time_shape() {
    let base = make_power_law(4.0).unwrap();
    let mut maxima = Vec::new();
    for radius in [5.0, 10.0, 20.0] {
        let eta = 1.0 / f64::ln(radius);
        let p = truncate(&base, radius).unwrap();
        let mut m: f64 = 0.0;
        for i in 0..40 {
            let r = (radius - 1e-3) * i as f64 / 39.0;
            for j in 0..20 {
                let speed = eta * (1.0 + 9.0 * j as f64 / 19.0);
                let tau = scattering_time(&p, r, speed, 1e-10).unwrap();
                m = m.max(tau * eta / radius);
            }
        }
        maxima.push(m);
    }
    let (lo, hi) = maxima.iter().fold((f64::MAX, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
    report(
        6,
        hi / lo <= 2.0 && hi <= 10.0,
        format!("max tau*eta/R at R=5,10,20: {maxima:.4?} (eta = 1/ln R), ratio {:.3}", hi / lo),
    );
}

fn lone(x: Vec3, v: Vec3) -> Background {
    Background {
        particles: vec![BackgroundParticle { x, v }],
    }
}

#[test]
fn criterion_07_md_integrator() {
    let start = Instant::now();
    let eps = 0.02;
    let mut cfg = SimConfig::new(eps, 1.0, 1.0, 4.0, 7).unwrap();
    cfg.samples = 4;
    let radius = cfg.radius();
    let short = truncate(&make_power_law(4.0).unwrap(), radius).unwrap();
    let xj = Vec3::new(0.5, 0.5, 0.5);

    // energy against a stationary scatterer over one encounter
    let mut drift: f64 = 0.0;
    for p in [&short, &make_stretched_exponential(1.0, 1.0).unwrap()] {
        let speed = 1.0;
        let x0 = Vec3::new(0.3, 0.5 + 0.24 * eps, 0.5 - 0.32 * eps);
        let v0 = Vec3::new(speed, 0.0, 0.0);
        let mut c = cfg.clone();
        c.horizon = 0.4 / speed;
        let bg = lone(xj, Vec3::ZERO);
        let tr = run_trajectory_with(&c, &bg, p, x0, v0, RunOptions { record_steps: true }).unwrap();
        let e0 = tagged_energy(&PhaseState { x: x0, v: v0, t: 0.0 }, &bg, p, eps);
        for s in &tr.steps {
            let e = tagged_energy(&PhaseState { x: s.x, v: s.v, t: s.t }, &bg, p, eps);
            drift = drift.max(((e - e0) / e0).abs());
        }
    }

    // time reversal through a moving background
    let g = VelocityDensity::UniformBall {
        radius: 1.0,
        center: Vec3::ZERO,
    };
    let mut rc = SimConfig::new(0.05, 0.6, 1.0, 4.0, 11).unwrap();
    rc.samples = 4;
    let rp = truncate(&make_power_law(4.0).unwrap(), rc.radius()).unwrap();
    let mut rng = substream(11, Domain::Background, 0);
    let x0 = Vec3::new(0.1, 0.1, 0.1);
    let v0 = Vec3::new(1.1, 0.7, -0.4);
    let bg = rayleigh_core::dynamics::sample_background(&rc, &g, Some(x0), &mut rng).unwrap();
    let fwd = run_trajectory(&rc, &bg, &rp, x0, v0).unwrap();
    let reversed = Background {
        particles: bg
            .particles
            .iter()
            .map(|q| BackgroundParticle {
                x: q.position(rc.horizon),
                v: -q.v,
            })
            .collect(),
    };
    let back = run_trajectory(&rc, &reversed, &rp, fwd.final_state.x, -fwd.final_state.v).unwrap();
    let reversal = (back.final_state.x - x0).min_image().norm() + (back.final_state.v + v0).norm();

    // event-log velocity change against the scattering map
    let mut map_err: f64 = 0.0;
    let mut mrng = substream(7, Domain::Misc, 7);
    let mut events = 0;
    for _ in 0..20 {
        let vj = gaussian_vec(&mut mrng) * 0.3;
        let dir = gaussian_vec(&mut mrng).normalized().unwrap();
        let speed = 0.5 + 1.5 * mrng.random::<f64>();
        let v0 = vj + dir * speed;
        let r = (radius - 0.2) * mrng.random::<f64>();
        let e = plane(dir);
        let zeta = 2.0 * PI * mrng.random::<f64>();
        let offset = (e[0] * zeta.cos() + e[1] * zeta.sin()) * (r * eps);
        // start 0.2 upstream of the encounter
        let x0 = xj - dir * 0.2 - offset;
        let mut c = cfg.clone();
        c.horizon = 0.4 / speed;
        let tr = run_trajectory(&c, &lone(xj, vj), &short, x0.wrap_unit(), v0).unwrap();
        for ev in &tr.events {
            let geom = ImpactGeometry::from_offset(ev.offset_entry / eps, ev.background_velocity - ev.v_entry).unwrap();
            let out = scatter(&short, &geom, ev.v_entry, ev.background_velocity, 1e-12).unwrap();
            let predicted = out.tagged_velocity(Kinematics::FixedScatterer);
            map_err = map_err.max((ev.v_exit - predicted).norm());
            events += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = drift < 1e-8 && reversal < 1e-6 && map_err < 1e-4 && events >= 20 && secs < 60.0;
    report(
        7,
        pass,
        format!(
            "energy drift {drift:.2e}; time reversal {reversal:.2e} over {} events; \
             event map error {map_err:.2e} over {events} encounters; {secs:.1} s",
            fwd.events.len()
        ),
    );
}

fn plane(dir: Vec3) -> [Vec3; 2] {
    rayleigh_core::scattering::plane_basis(dir)
}

#[test]
fn criterion_08_divergence_trend() {
    let start = Instant::now();
    let p = make_stretched_exponential(1.0, 1.0).unwrap();
    let mut base = SimConfig::new(0.1, 0.5, 1.0, 4.0, 1).unwrap();
    base.samples = 16;
    let rows = divergence_sweep(&base, &GRID, &SEEDS, &p, &maxwellian(), &box_initial(), 100).unwrap();
    let medians: Vec<f64> = GRID
        .iter()
        .map(|&e| {
            let per_seed: Vec<f64> = rows.iter().filter(|r| r.epsilon == e).map(|r| r.median).collect();
            mean(&per_seed)
        })
        .collect();
    let matched: Vec<usize> = GRID
        .iter()
        .map(|&e| rows.iter().filter(|r| r.epsilon == e).map(|r| r.matched).sum())
        .collect();
    let secs = start.elapsed().as_secs_f64();
    report(
        8,
        strictly_decreasing(&medians) && medians.iter().all(|m| m.is_finite()) && secs < 1800.0,
        format!("mean over seeds of median matched divergence at eps=0.1,0.05,0.025: {medians:?} (matched {matched:?} of 300); {secs:.0} s"),
    );
}

#[test]
fn criterion_09_jump_process() {
    let g = maxwellian();
    // waiting times and impact parameters at a fixed velocity: a free
    // potential leaves v unchanged, so the jump rate is constant
    let radius = 2.0;
    let lc = LbeConfig {
        radius,
        kinematics: Kinematics::EqualMass,
        angle_tol: 1e-10,
    };
    let v = Vec3::new(1.0, 0.0, 0.0);
    let nu = loss_rate(&g, radius, v).unwrap();
    let mut rng = substream(9, Domain::Walker, 0);
    let w = evolve_walker(&mut rng, JumpWalker::new(Vec3::ZERO, v), &lc, &g, &make_free(), 100_500.0 / nu).unwrap();
    let times: Vec<f64> = w.tree.nodes.iter().map(|n| n.t).collect();
    let waits: Vec<f64> = std::iter::once(times[0])
        .chain(times.windows(2).map(|p| p[1] - p[0]))
        .take(100_000)
        .collect();
    let ks_wait = ks_one_sample(&waits, |t| 1.0 - (-nu * t).exp());
    let radii: Vec<f64> = w.tree.nodes.iter().take(100_000).map(|n| n.r).collect();
    let ks_r = ks_one_sample(&radii, |r| (r / radius).powi(2));

    // equilibrium: Maxwellian f0 velocity marginal equal to g
    let p = truncate(&make_stretched_exponential(1.0, 1.0).unwrap(), 3.0).unwrap();
    let f0 = InitialDensity {
        position: PositionDensity::Uniform,
        velocity: g,
    };
    let eq = LbeConfig {
        radius: 3.0,
        kinematics: Kinematics::EqualMass,
        angle_tol: 1e-10,
    };
    let n = 20_000;
    let snaps = run_walkers(&eq, &g, &p, &f0, n, 9, &[0.1, 0.2]).unwrap();
    let conserved = snaps.iter().all(|s| s.len() == n && s.iter().map(|w| w.weight).sum::<f64>() == n as f64);
    let last = &snaps[1];
    let jumps = last.iter().map(|w| w.tree.n()).sum::<usize>() as f64 / n as f64;
    let mut counts = [0u64; 20];
    for w in last {
        let u = g.centered_speed_cdf(w.state.v.norm());
        counts[((u * 20.0) as usize).min(19)] += 1;
    }
    let chi = chi_square_gof(&counts, &[0.05; 20]);
    let pass = ks_wait.p_value > 0.01 && ks_r.p_value > 0.01 && conserved && chi.p_value > 0.01 && waits.len() == 100_000;
    report(
        9,
        pass,
        format!(
            "waiting-time KS p = {:.3}, impact KS p = {:.3} (1e5 jumps); walkers conserved: {conserved}; \
             equilibrium chi-square p = {:.3} after {jumps:.1} jumps per walker",
            ks_wait.p_value, ks_r.p_value, chi.p_value
        ),
    );
}

/// Short-range MD ensembles on the `ε` grid, shared by criteria 10 and 11.
const MD_TRAJECTORIES: usize = 10_000;
const WALKERS: usize = 10_000;
const HORIZON: f64 = 0.5;

fn md_cells() -> &'static Vec<(f64, u64, MdCell)> {
    static CELLS: OnceLock<Vec<(f64, u64, MdCell)>> = OnceLock::new();
    CELLS.get_or_init(|| {
        let p = make_stretched_exponential(1.0, 1.0).unwrap();
        let mut out = Vec::new();
        for &eps in &GRID {
            for &seed in &SEEDS {
                let mut sim = SimConfig::new(eps, HORIZON, 1.0, 4.0, seed).unwrap();
                sim.samples = 2;
                let cell = md_cell(&sim, &p, &maxwellian(), &box_initial(), MD_TRAJECTORIES, 0).unwrap();
                out.push((eps, seed, cell));
            }
        }
        out
    })
}

fn acceptance_tests() -> Vec<TestFunction> {
    vec![
        TestFunction::GaussianBump {
            center: Vec3::ZERO,
            width: 1.0,
        },
        TestFunction::GaussianBump {
            center: Vec3::new(1.0, 0.0, 0.0),
            width: 0.7,
        },
        TestFunction::PolyCutoff { degree: 2, radius: 2.5 },
    ]
}

#[test]
fn criterion_10_md_vs_jump_process() {
    let start = Instant::now();
    let p = make_stretched_exponential(1.0, 1.0).unwrap();
    let tests = acceptance_tests();
    let binning = Binning {
        position_bins: 1,
        velocity_bins: 4,
        vmax: 3.0,
    };
    let mut tv = vec![Vec::new(); GRID.len()];
    let mut weak = vec![vec![Vec::new(); tests.len()]; GRID.len()];
    for (eps, seed, cell) in md_cells() {
        let k = GRID.iter().position(|e| e == eps).unwrap();
        let radius = cell.cfg.radius();
        let lc = LbeConfig {
            radius,
            kinematics: Kinematics::FixedScatterer,
            angle_tol: 1e-10,
        };
        let short = truncate(&p, radius).unwrap();
        let walkers = run_walkers(&lc, &maxwellian(), &short, &box_initial(), WALKERS, *seed, &[HORIZON / 2.0]).unwrap();
        let lbe: Vec<(Vec3, Vec3)> = walkers[0].iter().map(|w| (w.state.x, w.state.v)).collect();
        let mut rng = substream(*seed, Domain::Bootstrap, k as u64);
        let d = density_distance(&cell.mid_states(), &lbe, &binning, &tests, 0, &mut rng).unwrap();
        tv[k].push(d.tv_binned);
        for (j, wg) in d.weak_gaps.iter().enumerate() {
            weak[k][j].push(wg.gap.abs());
        }
    }
    let tv_mean: Vec<f64> = tv.iter().map(|v| mean(v)).collect();
    let weak_mean: Vec<Vec<f64>> = (0..tests.len()).map(|j| weak.iter().map(|w| mean(&w[j])).collect()).collect();
    let secs = start.elapsed().as_secs_f64();
    let pass = strictly_decreasing(&tv_mean) && weak_mean.iter().all(|w| strictly_decreasing(w)) && secs < 7200.0;
    report(
        10,
        pass,
        format!(
            "seed-mean binned TV at eps=0.1,0.05,0.025: {tv_mean:.4?}; weak gaps {weak_mean:.4?} \
             (1e4 MD, 1e4 walkers, 3 seeds); {secs:.0} s"
        ),
    );
}

#[test]
fn criterion_11_excluded_sets() {
    let mut outside_g = Vec::new();
    let mut outside_r = Vec::new();
    let mut xi_detail = Vec::new();
    let mut xi_ok = true;
    for &eps in &GRID {
        let classes: Vec<_> = md_cells()
            .iter()
            .filter(|(e, _, _)| *e == eps)
            .flat_map(|(_, _, c)| c.classes.iter().copied())
            .collect();
        let cfg = &md_cells().iter().find(|(e, _, _)| *e == eps).unwrap().2.cfg;
        let rep = measure_excluded(cfg, &classes);
        outside_g.push(rep.outside_good.estimate);
        outside_r.push(rep.outside_r.estimate);
        let trials = 20_000;
        let acc = rejection_acceptance(cfg, trials, 11);
        let se = (acc.estimate * (1.0 - acc.estimate) / trials as f64).sqrt();
        let z = (cfg.xi() - acc.estimate).abs() / se;
        xi_ok &= z <= 3.0;
        xi_detail.push(format!("{:.4} vs {:.4} (z {z:.2})", cfg.xi(), acc.estimate));
    }
    let pass = strictly_decreasing(&outside_g) && strictly_decreasing(&outside_r) && xi_ok;
    report(
        11,
        pass,
        format!(
            "outside G at eps=0.1,0.05,0.025: {outside_g:.4?}; outside R: {outside_r:.4?}; \
             xi vs rejection acceptance: {}",
            xi_detail.join(", ")
        ),
    );
}

#[test]
fn criterion_12_operator_gap_bound() {
    let start = Instant::now();
    let p = make_power_law(4.0).unwrap();
    let g = VelocityDensity::UniformBall {
        radius: 1.0,
        center: Vec3::ZERO,
    };
    let h = TestFunction::GaussianBump {
        center: Vec3::new(0.5, 0.0, 0.0),
        width: 0.8,
    };
    let mut rng = substream(12, Domain::Misc, 0);
    let f: Vec<Vec3> = (0..10_000).map(|_| maxwellian().sample(&mut rng)).collect();
    let r_max = grazing_cutoff(&p, &h, Kinematics::EqualMass, 1e-10).unwrap().min(1e8);
    let opts = WeakFormOptions {
        samples: 1_000_000,
        seed: 12,
        kinematics: Kinematics::EqualMass,
        angle_tol: 1e-10,
        proposal: ImpactProposal { r0: 10.0, r_max },
    };
    let mut pass = true;
    let mut rows = Vec::new();
    for radius in [10.0, 20.0, 40.0] {
        let gap = operator_gap(&f, &g, &p, radius, &h, &opts).unwrap();
        pass &= gap.within_bound();
        rows.push(format!(
            "R={radius}: |gap| {:.3e} +- {:.1e} <= {:.3e}",
            gap.gap.value.abs(),
            gap.gap.stderr,
            gap.bound
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    report(12, pass && secs < 600.0, format!("{}; r_max {r_max:.2e}; {secs:.0} s", rows.join("; ")));
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    walkdir::WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().is_file())
        .map(|e| e.path().strip_prefix(root).unwrap().to_path_buf())
        .collect()
}

#[test]
fn criterion_13_sweep_determinism() {
    let shipped = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
    let mut doc: toml::Table = toml::from_str(&std::fs::read_to_string(shipped).unwrap()).unwrap();
    let mut set = |section: &str, key: &str, value: toml::Value| {
        let mut table = &mut doc;
        for part in section.split('.') {
            table = table.get_mut(part).unwrap().as_table_mut().unwrap();
        }
        table.insert(key.into(), value);
    };
    set("scaling", "horizon", toml::Value::Float(0.1));
    set("md", "trajectories", toml::Value::Integer(40));
    set("lbe", "walkers", toml::Value::Integer(400));
    set("compare", "divergence_trajectories", toml::Value::Integer(10));
    set("compare.operator", "mc_samples", toml::Value::Integer(4000));
    set("compare.operator", "f_samples", toml::Value::Integer(200));
    let cfg = RunConfig::parse(&toml::to_string(&doc).unwrap()).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    campaign::run(Subcommand::Sweep, &cfg, a.path()).unwrap();
    campaign::run(Subcommand::Sweep, &cfg, b.path()).unwrap();
    let files = files_under(a.path());
    let same_inventory = files == files_under(b.path());
    let differing: Vec<String> = files
        .iter()
        .filter(|f| f.as_os_str() != "timing.json")
        .filter(|f| std::fs::read(a.path().join(f)).ok() != std::fs::read(b.path().join(f)).ok())
        .map(|f| f.display().to_string())
        .collect();
    report(
        13,
        same_inventory && differing.is_empty(),
        format!(
            "{} files compared across two sweeps; differing: {differing:?}",
            files.len() - 1
        ),
    );
}
