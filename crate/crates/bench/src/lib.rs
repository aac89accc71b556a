//! Criterion benchmarks for the hot paths: deviation angles, one MD
//! trajectory, jump-process walkers and the weak-form Monte Carlo.

use criterion::{BenchmarkId, Criterion};
use rayleigh_core::compare::{weak_forms, ImpactProposal, OperatorSide, WeakFormOptions};
use rayleigh_core::density::{InitialDensity, PositionDensity, VelocityDensity};
use rayleigh_core::dynamics::{run_trajectory, sample_background, SimConfig};
use rayleigh_core::lbe::{evolve_walker, JumpWalker, LbeConfig};
use rayleigh_core::observables::TestFunction;
use rayleigh_core::potentials::{make_power_law, make_stretched_exponential, truncate};
use rayleigh_core::rng::{substream, Domain};
use rayleigh_core::scattering::{deviation_angle, Kinematics};
use rayleigh_core::Vec3;
use std::hint::black_box;

fn maxwellian() -> VelocityDensity {
    VelocityDensity::Maxwellian {
        temperature: 1.0,
        drift: Vec3::ZERO,
    }
}

pub fn scattering(c: &mut Criterion) {
    let p = make_power_law(4.0).unwrap();
    let cut = truncate(&p, 20.0).unwrap();
    let mut group = c.benchmark_group("deviation_angle");
    for r in [0.5, 5.0, 50.0] {
        group.bench_with_input(BenchmarkId::new("power_law", r), &r, |b, &r| {
            b.iter(|| deviation_angle(&p, black_box(r), 1.0, 1e-10).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("truncated", r), &r, |b, &r| {
            b.iter(|| deviation_angle(&cut, black_box(r), 1.0, 1e-10).unwrap())
        });
    }
    group.finish();
}

pub fn dynamics(c: &mut Criterion) {
    let p = make_stretched_exponential(1.0, 1.0).unwrap();
    let g = maxwellian();
    let mut group = c.benchmark_group("md_trajectory");
    group.sample_size(10);
    for eps in [0.1, 0.05] {
        let mut cfg = SimConfig::new(eps, 0.25, 1.0, 4.0, 1).unwrap();
        cfg.samples = 4;
        let short = truncate(&p, cfg.radius()).unwrap();
        let x0 = Vec3::new(0.5, 0.5, 0.5);
        let bg = sample_background(&cfg, &g, Some(x0), &mut substream(1, Domain::Background, 0)).unwrap();
        group.bench_with_input(BenchmarkId::new("short", eps), &eps, |b, _| {
            b.iter(|| run_trajectory(&cfg, &bg, &short, x0, Vec3::new(1.0, 0.2, -0.3)).unwrap())
        });
    }
    group.finish();
}

pub fn jump_process(c: &mut Criterion) {
    let p = make_stretched_exponential(1.0, 1.0).unwrap();
    let g = maxwellian();
    let radius = 2.0;
    let short = truncate(&p, radius).unwrap();
    let cfg = LbeConfig {
        radius,
        kinematics: Kinematics::FixedScatterer,
        angle_tol: 1e-10,
    };
    let f0 = InitialDensity {
        position: PositionDensity::Uniform,
        velocity: g,
    };
    c.bench_function("walker_to_t1", |b| {
        let mut k = 0u64;
        b.iter(|| {
            k += 1;
            let mut rng = substream(3, Domain::Walker, k);
            let (x, v) = f0.sample(&mut rng);
            evolve_walker(&mut rng, JumpWalker::new(x, v), &cfg, &g, &short, 1.0).unwrap()
        })
    });
}

pub fn operator_mc(c: &mut Criterion) {
    let p = make_power_law(4.0).unwrap();
    let g = maxwellian();
    let h = TestFunction::GaussianBump {
        center: Vec3::ZERO,
        width: 1.0,
    };
    let f = vec![Vec3::new(0.3, 0.0, 0.1), Vec3::new(-0.2, 0.5, 0.0)];
    let sides = [
        OperatorSide {
            potential: truncate(&p, 10.0).unwrap(),
            radius: Some(10.0),
        },
        OperatorSide {
            potential: p.clone(),
            radius: None,
        },
    ];
    let opts = WeakFormOptions {
        samples: 1000,
        seed: 1,
        kinematics: Kinematics::EqualMass,
        angle_tol: 1e-10,
        proposal: ImpactProposal { r0: 10.0, r_max: 1e4 },
    };
    let mut group = c.benchmark_group("weak_forms");
    group.sample_size(10);
    group.bench_function("1000_samples", |b| {
        b.iter(|| weak_forms(&f, &g, &h, &sides, &opts).unwrap())
    });
    group.finish();
}
