//! Campaign runner behind the command-line subcommands: executes a
//! [`RunConfig`] and writes CSV / JSON-lines artifacts plus a manifest.
//!
//! Wall-clock data goes to `timing.json` only, so every other file is a
//! pure function of the config and the code version.

use crate::compare::{
    c1_formula, c2_estimates, cell_member, compare_paths, count_tv, density_distance, divergence_row, grazing_cutoff,
    operator_gap, C1Terms, DistanceReport, Divergence, DivergenceRow, ImpactProposal, OperatorGap, WeakFormOptions,
};
use crate::config::RunConfig;
use crate::density::VelocityDensity;
use crate::dynamics::{run_trajectory, SimConfig, Trajectory};
use crate::error::{Error, Result};
use crate::lbe::{estimate_density, run_walkers, JumpWalker, LbeConfig};
use crate::potentials::{make_free, truncate, validate_admissibility, RadialPotential, SampleGrid};
use crate::rng::{substream, Domain};
use crate::scattering::{
    angle_gap, closest_approach, deviation_angle, scatter, scattering_time, ImpactGeometry,
};
use crate::trees::{
    classify_trajectory, lambda_bound, measure_excluded, rejection_acceptance, restriction_radius, tree_from_events,
    ExcludedReport, Fraction, TreeClassification,
};
use crate::vec3::Vec3;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    Scatter,
    SimulateMd,
    SimulateLbe,
    Compare,
    Sweep,
    Validate,
}

impl Subcommand {
    pub fn name(&self) -> &'static str {
        match self {
            Subcommand::Scatter => "scatter",
            Subcommand::SimulateMd => "simulate-md",
            Subcommand::SimulateLbe => "simulate-lbe",
            Subcommand::Compare => "compare",
            Subcommand::Sweep => "sweep",
            Subcommand::Validate => "validate",
        }
    }
}

/// Files written (relative to the output directory) and threshold
/// violations found by `validate`.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Outcome {
    pub files: Vec<String>,
    pub violations: Vec<String>,
}

/// Background-rejection trials behind the empirical `ξ`.
pub const XI_TRIALS: u64 = 4000;

struct Sink {
    root: PathBuf,
    files: Vec<String>,
}

fn fmt(x: f64) -> String {
    format!("{x}")
}

impl Sink {
    fn path(&mut self, rel: &str) -> Result<PathBuf> {
        let p = self.root.join(rel);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir)?;
        }
        self.files.push(rel.to_string());
        Ok(p)
    }

    fn csv(&mut self, rel: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
        let path = self.path(rel)?;
        let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
        w.write_record(header).map_err(csv_err)?;
        for row in rows {
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let path = self.path(rel)?;
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    fn lines(&mut self, rel: &str, lines: impl IntoIterator<Item = String>) -> Result<()> {
        let path = self.path(rel)?;
        let mut f = std::io::BufWriter::new(fs::File::create(path)?);
        for l in lines {
            writeln!(f, "{l}")?;
        }
        f.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Derived scaling quantities for one `ε`.
#[derive(Clone, Debug, Serialize)]
pub struct Derived {
    pub epsilon: f64,
    pub n_background: usize,
    pub radius: f64,
    pub radius_exponent: f64,
    pub max_collisions: f64,
    pub v1: f64,
    pub v2: f64,
    pub delta: f64,
    pub b: f64,
    pub xi: f64,
    pub restriction_radius: f64,
    pub lambda_bound: f64,
}

impl Derived {
    pub fn of(cfg: &SimConfig) -> Self {
        Derived {
            epsilon: cfg.epsilon,
            n_background: cfg.n_background,
            radius: cfg.radius(),
            radius_exponent: cfg.radius_exponent(),
            max_collisions: cfg.max_collisions(),
            v1: cfg.v1(),
            v2: cfg.v2(),
            delta: cfg.delta(),
            b: cfg.b(),
            xi: cfg.xi(),
            restriction_radius: restriction_radius(cfg),
            lambda_bound: lambda_bound(cfg),
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    schema_version: u32,
    subcommand: &'static str,
    config_hash: String,
    config: String,
    derived: Vec<Derived>,
    seeds: &'a [u64],
    rng: &'static str,
    files: &'a [String],
    violations: &'a [String],
}

#[derive(Serialize)]
struct Timing {
    subcommand: &'static str,
    started_unix: f64,
    wall_clock_seconds: f64,
    workers: usize,
}

const RNG_NOTE: &str = "ChaCha8 keyed by splitmix64(seed ^ splitmix64(domain)); stream id = trajectory or walker index; \
domains: background=1, tagged=2, walker=3, operator_mc=4, bootstrap=5, misc=6";

/// Runs one subcommand and writes all artifacts under `out`.
pub fn run(cmd: Subcommand, cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    cfg.validate()?;
    let started = Instant::now();
    let started_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0);
    fs::create_dir_all(out)?;
    let mut sink = Sink {
        root: out.to_path_buf(),
        files: Vec::new(),
    };
    let violations = match cmd {
        Subcommand::Scatter => scatter_cmd(cfg, &mut sink).map(|_| Vec::new()),
        Subcommand::SimulateMd => simulate_md(cfg, &mut sink).map(|_| Vec::new()),
        Subcommand::SimulateLbe => simulate_lbe(cfg, &mut sink).map(|_| Vec::new()),
        Subcommand::Compare => compare_cmd(cfg, &mut sink).map(|_| Vec::new()),
        Subcommand::Sweep => sweep_cmd(cfg, &mut sink).map(|_| Vec::new()),
        Subcommand::Validate => validate_cmd(cfg, &mut sink),
    }?;
    let derived = cfg
        .scaling
        .epsilons
        .iter()
        .map(|&e| cfg.sim_config(e, cfg.seeds[0]).map(|c| Derived::of(&c)))
        .collect::<Result<Vec<_>>>()?;
    let mut files = sink.files.clone();
    files.sort();
    let manifest = Manifest {
        tool: "rayleigh",
        version: env!("CARGO_PKG_VERSION"),
        schema_version: cfg.schema_version,
        subcommand: cmd.name(),
        config_hash: cfg.hash(),
        config: cfg.canonical(),
        derived,
        seeds: &cfg.seeds,
        rng: RNG_NOTE,
        files: &files,
        violations: &violations,
    };
    sink.json("manifest.json", &manifest)?;
    let timing = Timing {
        subcommand: cmd.name(),
        started_unix,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        workers: rayon::current_num_threads(),
    };
    sink.json("timing.json", &timing)?;
    Ok(Outcome {
        files: sink.files,
        violations,
    })
}

fn cell_name(eps: f64, seed: u64) -> String {
    format!("eps_{eps}_seed_{seed}")
}

fn scatter_cmd(cfg: &RunConfig, sink: &mut Sink) -> Result<()> {
    let p = cfg.potential.build()?;
    let sim = cfg.sim_config(cfg.scaling.epsilons[0], cfg.seeds[0])?;
    let radius = cfg.potential.cutoff().unwrap_or_else(|| sim.radius());
    let cut = truncate(&p, radius)?;
    let tol = cfg.tolerances.angle;
    let mut rows = Vec::new();
    for &r in &cfg.scatter.impact {
        for &w in &cfg.scatter.speeds {
            let gap = angle_gap(&p, radius, r, w, tol)?;
            let rho = closest_approach(&p, r, w)?;
            let tau = scattering_time(&cut, r, w, tol)?;
            rows.push(vec![fmt(r), fmt(w), fmt(gap.theta), fmt(gap.theta_r), fmt(rho), fmt(tau), fmt(gap.gap)]);
        }
    }
    sink.csv(
        "scatter.csv",
        &["r", "w", "theta", "theta_R", "rho_star", "tau_star", "gap"],
        rows,
    )
}

/// Short-range ensemble of one `(ε, seed)` cell, with the first
/// `paired` members also run under the long-range potential.
pub struct MdCell {
    pub cfg: SimConfig,
    pub short: Vec<Trajectory>,
    pub classes: Vec<TreeClassification>,
    pub paired: Vec<(Divergence, bool)>,
    /// Long-range states at `T/2` for the paired members.
    pub long_mid: Vec<(Vec3, Vec3)>,
}

impl MdCell {
    pub fn mid_states(&self) -> Vec<(Vec3, Vec3)> {
        let k = self.cfg.samples / 2;
        self.short.iter().map(|t| (t.samples[k].x, t.samples[k].v)).collect()
    }

    /// Near collisions up to `T/2`.
    pub fn mid_counts(&self) -> Vec<usize> {
        let half = 0.5 * self.cfg.horizon;
        self.short
            .iter()
            .map(|t| t.events.iter().filter(|e| e.t_entry <= half).count())
            .collect()
    }
}

pub fn md_cell(
    sim: &SimConfig,
    p: &RadialPotential,
    g: &VelocityDensity,
    f0: &crate::density::InitialDensity,
    n: usize,
    paired: usize,
) -> Result<MdCell> {
    let short_p = truncate(p, sim.radius())?;
    let k = sim.samples / 2;
    let runs: Vec<(Trajectory, TreeClassification, Option<(Divergence, (Vec3, Vec3))>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (x0, v0, bg) = cell_member(sim, g, f0, i)?;
            let short = run_trajectory(sim, &bg, &short_p, x0, v0)?;
            let class = classify_trajectory(&short, sim)?;
            let pair = if i < paired {
                let long = run_trajectory(sim, &bg, p, x0, v0)?;
                let mid = (long.samples[k].x, long.samples[k].v);
                Some((compare_paths(&long, &short), mid))
            } else {
                None
            };
            Ok((short, class, pair))
        })
        .collect::<Result<_>>()?;
    let mut cell = MdCell {
        cfg: sim.clone(),
        short: Vec::with_capacity(n),
        classes: Vec::with_capacity(n),
        paired: Vec::new(),
        long_mid: Vec::new(),
    };
    for (traj, class, pair) in runs {
        if let Some((d, mid)) = pair {
            cell.paired.push((d, class.in_r_eps));
            cell.long_mid.push(mid);
        }
        cell.short.push(traj);
        cell.classes.push(class);
    }
    Ok(cell)
}

fn lbe_ensemble(cfg: &RunConfig, sim: &SimConfig, p: &RadialPotential, radius: f64) -> Result<Vec<Vec<JumpWalker>>> {
    let short = truncate(p, radius)?;
    let lc = LbeConfig {
        radius,
        kinematics: cfg.lbe.kinematics,
        angle_tol: cfg.tolerances.angle,
    };
    let times: Vec<f64> = (0..=cfg.lbe.snapshots)
        .map(|k| sim.horizon * k as f64 / cfg.lbe.snapshots as f64)
        .collect();
    run_walkers(&lc, &cfg.background, &short, &cfg.initial, cfg.lbe.walkers, sim.seed, &times)
}

fn state_rows(id_states: impl Iterator<Item = (usize, f64, Vec3, Vec3)>) -> Vec<Vec<String>> {
    id_states
        .map(|(i, t, x, v)| {
            vec![
                i.to_string(),
                fmt(t),
                fmt(x[0]),
                fmt(x[1]),
                fmt(x[2]),
                fmt(v[0]),
                fmt(v[1]),
                fmt(v[2]),
            ]
        })
        .collect()
}

const STATE_HEADER: [&str; 8] = ["id", "t", "x", "y", "z", "vx", "vy", "vz"];

const CLASS_HEADER: [&str; 12] = [
    "id",
    "good_dynamics",
    "good_tree",
    "in_r_eps",
    "velocity_separation",
    "time_separation",
    "no_initial_overlap",
    "no_recollision",
    "speed_bound",
    "separation_bound",
    "count_bound",
    "gap_bound",
];

fn class_rows(classes: &[TreeClassification]) -> Vec<Vec<String>> {
    classes
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let b = |x: bool| (x as u8).to_string();
            vec![
                i.to_string(),
                b(c.good_dynamics),
                b(c.good_tree),
                b(c.in_r_eps),
                b(c.dynamics.velocity_separation),
                b(c.dynamics.time_separation),
                b(c.dynamics.no_initial_overlap),
                b(c.dynamics.no_recollision),
                b(c.tree.speed_bound),
                b(c.tree.separation_bound),
                b(c.tree.count_bound),
                b(c.tree.gap_bound),
            ]
        })
        .collect()
}

#[derive(Serialize)]
struct ExcludedSummary<'a> {
    epsilon: f64,
    seed: u64,
    report: &'a ExcludedReport,
    xi: f64,
    xi_empirical: Fraction,
}

fn simulate_md(cfg: &RunConfig, sink: &mut Sink) -> Result<()> {
    let p = cfg.potential.build()?;
    for &eps in &cfg.scaling.epsilons {
        for &seed in &cfg.seeds {
            let sim = cfg.sim_config(eps, seed)?;
            let cell = md_cell(&sim, &p, &cfg.background, &cfg.initial, cfg.md.trajectories, 0)?;
            let dir = format!("md/{}", cell_name(eps, seed));
            let rows = state_rows(
                cell.short
                    .iter()
                    .enumerate()
                    .flat_map(|(i, t)| t.samples.iter().map(move |s| (i, s.t, s.x, s.v))),
            );
            sink.csv(&format!("{dir}/samples.csv"), &STATE_HEADER, rows)?;
            let events = cell
                .short
                .iter()
                .enumerate()
                .map(|(i, t)| serde_json::json!({ "id": i, "events": t.events }).to_string());
            sink.lines(&format!("{dir}/events.jsonl"), events)?;
            let trees = cell
                .short
                .iter()
                .map(|t| tree_from_events(t, &sim).map(|tree| tree.to_json_line()))
                .collect::<Result<Vec<_>>>()?;
            sink.lines(&format!("{dir}/trees.jsonl"), trees)?;
            sink.csv(&format!("{dir}/classification.csv"), &CLASS_HEADER, class_rows(&cell.classes))?;
            let report = measure_excluded(&sim, &cell.classes);
            let summary = ExcludedSummary {
                epsilon: eps,
                seed,
                report: &report,
                xi: sim.xi(),
                xi_empirical: rejection_acceptance(&sim, XI_TRIALS, seed),
            };
            sink.json(&format!("{dir}/excluded.json"), &summary)?;
        }
    }
    Ok(())
}

fn simulate_lbe(cfg: &RunConfig, sink: &mut Sink) -> Result<()> {
    let p = cfg.potential.build()?;
    let binning = cfg.compare.binning;
    for &eps in &cfg.scaling.epsilons {
        for &seed in &cfg.seeds {
            let sim = cfg.sim_config(eps, seed)?;
            let snaps = lbe_ensemble(cfg, &sim, &p, sim.radius())?;
            let dir = format!("lbe/{}", cell_name(eps, seed));
            let rows = state_rows(
                snaps
                    .iter()
                    .flat_map(|ens| ens.iter().enumerate().map(|(i, w)| (i, w.state.t, w.state.x, w.state.v))),
            );
            sink.csv(&format!("{dir}/walkers.csv"), &STATE_HEADER, rows)?;
            let last = snaps.last().expect("at least one snapshot");
            sink.lines(&format!("{dir}/trees.jsonl"), last.iter().map(|w| w.tree.to_json_line()))?;
            let mut est_rows = Vec::new();
            let mut weak_rows = Vec::new();
            for ens in &snaps {
                let t = ens[0].state.t;
                let states: Vec<(Vec3, Vec3)> = ens.iter().map(|w| (w.state.x, w.state.v)).collect();
                let est = estimate_density(&states, Some(&binning), &cfg.compare.tests)?;
                for (bin, (v, se)) in est.histogram.iter().zip(&est.histogram_se).enumerate() {
                    est_rows.push(vec![fmt(t), bin.to_string(), fmt(*v), fmt(*se)]);
                }
                for (h, (v, se)) in cfg.compare.tests.iter().zip(&est.weak) {
                    weak_rows.push(vec![fmt(t), h.label(), fmt(*v), fmt(*se)]);
                }
            }
            sink.csv(&format!("{dir}/estimates.csv"), &["t", "bin", "value", "stderr"], est_rows)?;
            sink.csv(&format!("{dir}/weak.csv"), &["t", "test", "value", "stderr"], weak_rows)?;
        }
    }
    Ok(())
}

/// Weak means of the four densities of the comparison pipeline at `T/2`:
/// long-range MD, short-range MD, cutoff jump process at `R(ε)`, and the
/// reference jump process.
#[derive(Clone, Debug, Serialize)]
pub struct PipelineRow {
    pub test: String,
    pub long_md: f64,
    pub short_md: f64,
    pub lbe: f64,
    pub reference: f64,
    pub end_to_end: f64,
    pub stage_sum: f64,
    pub triangle_holds: bool,
}

/// Everything computed for one `(ε, seed)` cell by `compare` and `sweep`.
pub struct CellReport {
    pub sim: SimConfig,
    pub distance: DistanceReport,
    pub count_tv: f64,
    pub pipeline: Vec<PipelineRow>,
    pub divergence: DivergenceRow,
    pub excluded: ExcludedReport,
    pub xi_empirical: Fraction,
    pub md_mid: Vec<(Vec3, Vec3)>,
    pub lbe_mid: Vec<(Vec3, Vec3)>,
}

fn weak_mean(states: &[(Vec3, Vec3)], h: &crate::observables::TestFunction) -> f64 {
    if states.is_empty() {
        return f64::NAN;
    }
    states.iter().map(|&(_, v)| h.eval(v)).sum::<f64>() / states.len() as f64
}

pub fn compare_cell(cfg: &RunConfig, eps: f64, seed: u64, index: u64) -> Result<CellReport> {
    let p = cfg.potential.build()?;
    let sim = cfg.sim_config(eps, seed)?;
    let md = md_cell(
        &sim,
        &p,
        &cfg.background,
        &cfg.initial,
        cfg.md.trajectories,
        cfg.compare.divergence_trajectories,
    )?;
    let half = cfg.lbe.snapshots / 2;
    let lbe = lbe_ensemble(cfg, &sim, &p, sim.radius())?;
    let reference = lbe_ensemble(cfg, &sim, &p, cfg.lbe.reference_radius)?;
    let lbe_mid: Vec<(Vec3, Vec3)> = lbe[half].iter().map(|w| (w.state.x, w.state.v)).collect();
    let ref_mid: Vec<(Vec3, Vec3)> = reference[half].iter().map(|w| (w.state.x, w.state.v)).collect();
    let md_mid = md.mid_states();
    let mut rng = substream(seed, Domain::Bootstrap, index);
    let distance = density_distance(
        &md_mid,
        &lbe_mid,
        &cfg.compare.binning,
        &cfg.compare.tests,
        cfg.compare.bootstrap,
        &mut rng,
    )?;
    let lbe_counts: Vec<usize> = lbe[half].iter().map(|w| w.tree.n()).collect();
    let ctv = count_tv(&md.mid_counts(), &lbe_counts);
    let pipeline = cfg
        .compare
        .tests
        .iter()
        .map(|h| {
            let a = weak_mean(&md.long_mid, h);
            let b = weak_mean(&md_mid, h);
            let c = weak_mean(&lbe_mid, h);
            let d = weak_mean(&ref_mid, h);
            let end_to_end = (a - d).abs();
            let stage_sum = (a - b).abs() + (b - c).abs() + (c - d).abs();
            PipelineRow {
                test: h.label(),
                long_md: a,
                short_md: b,
                lbe: c,
                reference: d,
                end_to_end,
                stage_sum,
                triangle_holds: !(end_to_end > stage_sum * (1.0 + 1e-12)),
            }
        })
        .collect();
    Ok(CellReport {
        divergence: divergence_row(&sim, &md.paired),
        excluded: measure_excluded(&sim, &md.classes),
        xi_empirical: rejection_acceptance(&sim, XI_TRIALS, seed),
        sim,
        distance,
        count_tv: ctv,
        pipeline,
        md_mid,
        lbe_mid,
    })
}

const DISTANCE_HEADER: [&str; 11] = [
    "epsilon",
    "seed",
    "radius",
    "tv",
    "tv_lo",
    "tv_hi",
    "count_tv",
    "low_occupancy",
    "bins",
    "samples_md",
    "samples_lbe",
];

fn distance_row(c: &CellReport) -> Vec<String> {
    let d = &c.distance;
    vec![
        fmt(c.sim.epsilon),
        c.sim.seed.to_string(),
        fmt(c.sim.radius()),
        fmt(d.tv_binned),
        fmt(d.tv_ci.0),
        fmt(d.tv_ci.1),
        fmt(c.count_tv),
        d.low_occupancy.to_string(),
        d.bins.to_string(),
        d.samples_a.to_string(),
        d.samples_b.to_string(),
    ]
}

const WEAK_HEADER: [&str; 12] = [
    "epsilon",
    "seed",
    "test",
    "gap",
    "stderr",
    "long_md",
    "short_md",
    "lbe",
    "reference",
    "end_to_end",
    "stage_sum",
    "triangle_holds",
];

fn weak_rows(c: &CellReport) -> Vec<Vec<String>> {
    c.distance
        .weak_gaps
        .iter()
        .zip(&c.pipeline)
        .map(|(g, p)| {
            vec![
                fmt(c.sim.epsilon),
                c.sim.seed.to_string(),
                g.label.clone(),
                fmt(g.gap),
                fmt(g.stderr),
                fmt(p.long_md),
                fmt(p.short_md),
                fmt(p.lbe),
                fmt(p.reference),
                fmt(p.end_to_end),
                fmt(p.stage_sum),
                p.triangle_holds.to_string(),
            ]
        })
        .collect()
}

const DIVERGENCE_HEADER: [&str; 14] = [
    "epsilon",
    "seed",
    "radius",
    "b",
    "trajectories",
    "matched",
    "median",
    "median_lo",
    "median_hi",
    "max",
    "differing",
    "differing_lo",
    "differing_hi",
    "outside_r",
];

fn divergence_csv_row(d: &DivergenceRow) -> Vec<String> {
    vec![
        fmt(d.epsilon),
        d.seed.to_string(),
        fmt(d.radius),
        fmt(d.b),
        d.trajectories.to_string(),
        d.matched.to_string(),
        fmt(d.median),
        fmt(d.median_ci.0),
        fmt(d.median_ci.1),
        fmt(d.max),
        fmt(d.differing.estimate),
        fmt(d.differing.ci.0),
        fmt(d.differing.ci.1),
        fmt(d.outside_r.estimate),
    ]
}

const EXCLUDED_HEADER: [&str; 19] = [
    "epsilon",
    "seed",
    "trees",
    "bad_dynamics",
    "outside_good",
    "outside_good_lo",
    "outside_good_hi",
    "outside_r",
    "outside_r_lo",
    "outside_r_hi",
    "good_outside_r",
    "fail_time_separation",
    "fail_recollision",
    "fail_count",
    "fail_gap",
    "lambda_bound",
    "xi",
    "xi_empirical",
    "xi_stderr",
];

fn excluded_row(c: &CellReport) -> Vec<String> {
    let e = &c.excluded;
    let x = &c.xi_empirical;
    let se = (x.estimate * (1.0 - x.estimate) / x.total as f64).sqrt();
    vec![
        fmt(c.sim.epsilon),
        c.sim.seed.to_string(),
        e.trees.to_string(),
        fmt(e.bad_dynamics.estimate),
        fmt(e.outside_good.estimate),
        fmt(e.outside_good.ci.0),
        fmt(e.outside_good.ci.1),
        fmt(e.outside_r.estimate),
        fmt(e.outside_r.ci.0),
        fmt(e.outside_r.ci.1),
        fmt(e.good_outside_r.estimate),
        fmt(e.fail_time_separation.estimate),
        fmt(e.fail_recollision.estimate),
        fmt(e.fail_count.estimate),
        fmt(e.fail_gap.estimate),
        fmt(e.lambda_bound),
        fmt(c.sim.xi()),
        fmt(x.estimate),
        fmt(se),
    ]
}

/// Operator gaps and `C₂` estimates over the configured radii.
pub fn operator_campaign(cfg: &RunConfig) -> Result<(Vec<OperatorGap>, Vec<f64>)> {
    let op = &cfg.compare.operator;
    let p = cfg.potential.build()?;
    let h = &cfg.compare.tests[op.test];
    let mut rng = substream(cfg.seeds[0], Domain::Misc, 0);
    let f: Vec<Vec3> = (0..op.f_samples).map(|_| op.f.sample(&mut rng)).collect();
    let r_max = grazing_cutoff(&p, h, op.kinematics, 1e-10)?.min(1e8).max(op.r0 * 2.0);
    let opts = WeakFormOptions {
        samples: op.mc_samples,
        seed: cfg.seeds[0],
        kinematics: op.kinematics,
        angle_tol: cfg.tolerances.angle,
        proposal: ImpactProposal { r0: op.r0, r_max },
    };
    let gaps = op
        .radii
        .iter()
        .map(|&r| operator_gap(&f, &cfg.background, &p, r, h, &opts))
        .collect::<Result<Vec<_>>>()?;
    let c2 = c2_estimates(&f, &cfg.background, &p, &op.radii, h, &opts)?;
    Ok((gaps, c2))
}

fn c1_rows(cfg: &RunConfig) -> Result<Vec<C1Terms>> {
    let s = cfg.potential.build()?.meta().s;
    let moment = cfg.background.moments().weighted_mass;
    let mut radii: Vec<f64> = cfg.compare.operator.radii.clone();
    radii.extend([10.0, 1e2, 1e3, 1e4]);
    radii.sort_by(f64::total_cmp);
    radii.dedup();
    radii.iter().map(|&r| c1_formula(r, s, moment)).collect()
}

fn compare_cmd(cfg: &RunConfig, sink: &mut Sink) -> Result<()> {
    let mut cells = Vec::new();
    let mut index = 0;
    for &eps in &cfg.scaling.epsilons {
        for &seed in &cfg.seeds {
            cells.push(compare_cell(cfg, eps, seed, index)?);
            index += 1;
        }
    }
    sink.csv("distance.csv", &DISTANCE_HEADER, cells.iter().map(distance_row))?;
    sink.csv("weak_gaps.csv", &WEAK_HEADER, cells.iter().flat_map(weak_rows))?;
    sink.csv(
        "divergence.csv",
        &DIVERGENCE_HEADER,
        cells.iter().map(|c| divergence_csv_row(&c.divergence)),
    )?;
    sink.csv("excluded.csv", &EXCLUDED_HEADER, cells.iter().map(excluded_row))?;

    let (gaps, c2) = operator_campaign(cfg)?;
    sink.csv(
        "operator_gap.csv",
        &[
            "radius",
            "gap",
            "gap_stderr",
            "long",
            "short",
            "c1",
            "gradient_bound",
            "moment",
            "bound",
            "within_bound",
            "c2",
            "r_max",
            "samples",
        ],
        gaps.iter().zip(&c2).map(|(g, c2)| {
            vec![
                fmt(g.radius),
                fmt(g.gap.value),
                fmt(g.gap.stderr),
                fmt(g.long.value),
                fmt(g.short.value),
                fmt(g.c1.total),
                fmt(g.gradient_bound),
                fmt(g.moment),
                fmt(g.bound),
                g.within_bound().to_string(),
                fmt(*c2),
                fmt(g.r_max),
                g.samples.to_string(),
            ]
        }),
    )?;
    let c1 = c1_rows(cfg)?;
    sink.csv(
        "c1.csv",
        &["radius", "eta", "split", "kappa_term", "tail_term", "third", "fourth", "fifth", "moment", "total"],
        c1.iter().map(|t| {
            vec![
                fmt(t.radius),
                fmt(t.eta),
                fmt(t.split),
                fmt(t.kappa_term),
                fmt(t.tail_term),
                fmt(t.third),
                fmt(t.fourth),
                fmt(t.fifth),
                fmt(t.moment),
                fmt(t.total),
            ]
        }),
    )?;
    let summary = serde_json::json!({
        "config_hash": cfg.hash(),
        "seeds": cfg.seeds,
        "tolerances": cfg.tolerances,
        "tv_note": "binned TV of phase-space marginals at T/2 plus TV of near-collision counts; tree-space TV is not estimated",
        "cells": cells.iter().map(|c| serde_json::json!({
            "epsilon": c.sim.epsilon,
            "seed": c.sim.seed,
            "derived": Derived::of(&c.sim),
            "tv": c.distance.tv_binned,
            "tv_ci": c.distance.tv_ci,
            "count_tv": c.count_tv,
            "low_occupancy": c.distance.low_occupancy,
            "triangle_holds": c.pipeline.iter().all(|p| p.triangle_holds),
        })).collect::<Vec<_>>(),
        "operator_gap": gaps,
        "c2": c2,
    });
    sink.json("summary.json", &summary)
}

fn sweep_cmd(cfg: &RunConfig, sink: &mut Sink) -> Result<()> {
    let mut summary_rows = Vec::new();
    let mut index = 0;
    for &eps in &cfg.scaling.epsilons {
        let dir = format!("cells/eps_{eps}");
        let mut cells = Vec::new();
        for &seed in &cfg.seeds {
            let c = compare_cell(cfg, eps, seed, index)?;
            index += 1;
            let t = 0.5 * cfg.scaling.horizon;
            sink.csv(
                &format!("{dir}/md_mid_seed_{seed}.csv"),
                &STATE_HEADER,
                state_rows(c.md_mid.iter().enumerate().map(|(i, &(x, v))| (i, t, x, v))),
            )?;
            sink.csv(
                &format!("{dir}/lbe_mid_seed_{seed}.csv"),
                &STATE_HEADER,
                state_rows(c.lbe_mid.iter().enumerate().map(|(i, &(x, v))| (i, t, x, v))),
            )?;
            cells.push(c);
        }
        sink.csv(&format!("{dir}/distance.csv"), &DISTANCE_HEADER, cells.iter().map(distance_row))?;
        sink.csv(&format!("{dir}/weak_gaps.csv"), &WEAK_HEADER, cells.iter().flat_map(weak_rows))?;
        sink.csv(
            &format!("{dir}/divergence.csv"),
            &DIVERGENCE_HEADER,
            cells.iter().map(|c| divergence_csv_row(&c.divergence)),
        )?;
        sink.csv(&format!("{dir}/excluded.csv"), &EXCLUDED_HEADER, cells.iter().map(excluded_row))?;
        for c in &cells {
            summary_rows.push(vec![
                fmt(eps),
                c.sim.seed.to_string(),
                fmt(c.sim.radius()),
                fmt(c.distance.tv_binned),
                fmt(c.count_tv),
                fmt(c.distance.weak_gaps.iter().map(|g| g.gap).fold(0.0, f64::max)),
                fmt(c.divergence.median),
                fmt(c.divergence.differing.estimate),
                fmt(c.excluded.outside_good.estimate),
                fmt(c.excluded.outside_r.estimate),
                fmt(c.sim.xi()),
                fmt(c.xi_empirical.estimate),
            ]);
        }
    }
    sink.csv(
        "summary.csv",
        &[
            "epsilon",
            "seed",
            "radius",
            "tv",
            "count_tv",
            "max_weak_gap",
            "divergence_median",
            "differing",
            "outside_good",
            "outside_r",
            "xi",
            "xi_empirical",
        ],
        summary_rows,
    )?;
    let summary = serde_json::json!({
        "config_hash": cfg.hash(),
        "seeds": cfg.seeds,
        "epsilons": cfg.scaling.epsilons,
        "tolerances": cfg.tolerances,
    });
    sink.json("summary.json", &summary)
}

#[derive(Serialize)]
struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

/// Quick admissibility and exactness checks; failures are threshold
/// violations rather than errors.
fn validate_cmd(cfg: &RunConfig, sink: &mut Sink) -> Result<Vec<String>> {
    let p = cfg.potential.build()?;
    let mut checks = Vec::new();
    let adm = validate_admissibility(&p, &SampleGrid::default());
    checks.push(Check {
        name: "potential_admissible",
        pass: adm.all_pass(),
        detail: {
            let failed: Vec<String> = adm
                .checks
                .iter()
                .filter(|c| !c.pass)
                .map(|c| format!("{:?} at rho = {:?}", c.condition, c.worst_violation.map(|v| v.rho)))
                .collect();
            if failed.is_empty() {
                format!("{} conditions hold", adm.checks.len())
            } else {
                failed.join("; ")
            }
        },
    });
    let m = cfg.background.moments();
    checks.push(Check {
        name: "background_moments",
        pass: m.weighted_mass.is_finite() && m.weighted_sup.is_finite(),
        detail: format!("int (1+|v|^2) g = {}, sup (1+|v|^5) g = {}", m.weighted_mass, m.weighted_sup),
    });

    // conservation over random binary collisions
    let tol = cfg.tolerances.angle;
    let mut rng = substream(cfg.seeds[0], Domain::Misc, 1);
    let sim = cfg.sim_config(cfg.scaling.epsilons[0], cfg.seeds[0])?;
    let cut = truncate(&p, sim.radius())?;
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let v = Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let vs = Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let r = sim.radius() * rng.random::<f64>().sqrt();
        let geom = ImpactGeometry::new(r, 2.0 * PI * rng.random::<f64>(), vs - v)?;
        let o = scatter(&cut, &geom, v, vs, tol)?;
        let scale = 1.0 + v.norm2() + vs.norm2();
        let mom = ((o.v_prime + o.v_star_prime) - (v + vs)).norm() / scale.sqrt();
        let en = ((o.v_prime.norm2() + o.v_star_prime.norm2()) - (v.norm2() + vs.norm2())).abs() / scale;
        worst = worst.max(mom).max(en).max((o.nu.norm() - 1.0).abs());
    }
    checks.push(Check {
        name: "scattering_conservation",
        pass: worst < 1e-12,
        detail: format!("worst relative defect {worst:e}"),
    });
    let mut head_on: f64 = 0.0;
    let mut free: f64 = 0.0;
    for &w in &cfg.scatter.speeds {
        head_on = head_on.max((deviation_angle(&cut, 0.0, w, tol)? - PI).abs());
        free = free.max(deviation_angle(&make_free(), 0.7, w, tol)?.abs());
    }
    checks.push(Check {
        name: "head_on_and_free",
        pass: head_on < 1e-10 && free < 1e-10,
        detail: format!("|theta(0) - pi| = {head_on:e}, free theta = {free:e}"),
    });
    let c1: Vec<f64> = [10.0, 1e2, 1e3, 1e4]
        .iter()
        .map(|&r| c1_formula(r, p.meta().s, 1.0).map(|t| t.total))
        .collect::<Result<_>>()?;
    checks.push(Check {
        name: "c1_decreasing",
        pass: c1.windows(2).all(|w| w[1] < w[0]),
        detail: format!("{c1:?}"),
    });
    let violations = checks
        .iter()
        .filter(|c| !c.pass)
        .map(|c| format!("{}: {}", c.name, c.detail))
        .collect();
    sink.json("validate.json", &checks)?;
    Ok(violations)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> RunConfig {
        let mut cfg = RunConfig::parse(include_str!("../../../configs/default.toml")).unwrap();
        cfg.seeds = vec![7];
        cfg.scaling.epsilons = vec![0.1];
        cfg.scaling.horizon = 0.1;
        cfg.md.trajectories = 6;
        cfg.md.samples = 2;
        cfg.lbe.walkers = 200;
        cfg.lbe.snapshots = 2;
        cfg.compare.divergence_trajectories = 3;
        cfg.compare.bootstrap = 5;
        cfg.compare.operator.mc_samples = 200;
        cfg.compare.operator.f_samples = 50;
        cfg.compare.operator.radii = vec![10.0];
        cfg
    }

    #[test]
    fn validate_default_has_no_violations() {
        let dir = tempfile::tempdir().unwrap();
        let out = run(Subcommand::Validate, &tiny(), dir.path()).unwrap();
        assert!(out.violations.is_empty(), "{:?}", out.violations);
        assert!(dir.path().join("manifest.json").exists());
    }

    #[test]
    fn every_subcommand_writes_its_files() {
        let cfg = tiny();
        for cmd in [
            Subcommand::Scatter,
            Subcommand::SimulateMd,
            Subcommand::SimulateLbe,
            Subcommand::Compare,
        ] {
            let dir = tempfile::tempdir().unwrap();
            let out = run(cmd, &cfg, dir.path()).unwrap();
            for f in &out.files {
                assert!(dir.path().join(f).exists(), "{f}");
            }
            assert!(out.files.len() >= 3, "{:?}", out.files);
        }
    }
}
