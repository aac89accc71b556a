//! Marked collision trees: extraction from short-range trajectories,
//! replay through the scattering map, and good-tree classification.

use crate::dynamics::{SimConfig, Trajectory};
use crate::error::{invalid, Error, Result};
use crate::potentials::RadialPotential;
use crate::rng::{substream, Domain};
use crate::scattering::{scatter_velocities, ImpactGeometry, Kinematics};
use crate::stats::wilson_interval;
use crate::vec3::Vec3;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// One collision marker `(t, r, ζ, v⋆)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "NodeRepr", into = "NodeRepr")]
pub struct TreeNode {
    pub t: f64,
    pub r: f64,
    pub zeta: f64,
    /// Velocity of the colliding background particle.
    pub v: Vec3,
}

type NodeRepr = (f64, f64, f64, Vec3);

impl From<NodeRepr> for TreeNode {
    fn from((t, r, zeta, v): NodeRepr) -> Self {
        Self { t, r, zeta, v }
    }
}

impl From<TreeNode> for NodeRepr {
    fn from(n: TreeNode) -> Self {
        (n.t, n.r, n.zeta, n.v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkedTree {
    /// Initial position and velocity.
    pub root: (Vec3, Vec3),
    pub nodes: Vec<TreeNode>,
}

impl MarkedTree {
    pub fn new(x0: Vec3, v0: Vec3) -> Self {
        Self {
            root: (x0, v0),
            nodes: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    /// Time of the last collision, 0 for the bare root.
    pub fn tau(&self) -> f64 {
        self.nodes.last().map_or(0.0, |n| n.t)
    }

    pub fn final_marker(&self) -> Option<&TreeNode> {
        self.nodes.last()
    }

    /// The tree with its final node removed.
    pub fn parent(&self) -> Option<MarkedTree> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut t = self.clone();
        t.nodes.pop();
        Some(t)
    }

    /// Checks ordering of collision times and the range of `r` and `ζ`.
    pub fn validate(&self, radius: f64) -> Result<()> {
        let mut prev = f64::NEG_INFINITY;
        for (i, n) in self.nodes.iter().enumerate() {
            if !(n.t > prev) {
                return Err(invalid(format!("node {i}: collision times must increase strictly")));
            }
            if !(0.0..=radius).contains(&n.r) {
                return Err(invalid(format!("node {i}: r = {} outside [0, {radius}]", n.r)));
            }
            if !(0.0..2.0 * PI).contains(&n.zeta) {
                return Err(invalid(format!("node {i}: zeta = {} outside [0, 2π)", n.zeta)));
            }
            prev = n.t;
        }
        Ok(())
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trees serialize")
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        Ok(serde_json::from_str(line)?)
    }
}

/// Builds the marked tree of a trajectory run under the truncated
/// potential: one node per near collision, with `r` and `ζ` read from the
/// separation at entry projected orthogonally to the relative velocity.
pub fn extract_tree(traj: &Trajectory, cfg: &SimConfig) -> Result<MarkedTree> {
    for pair in traj.events.windows(2) {
        if pair[1].t_entry < pair[0].t_exit {
            return Err(Error::OverlappingEvents {
                first: pair[0].particle,
                second: pair[1].particle,
                t: pair[1].t_entry,
            });
        }
    }
    tree_from_events(traj, cfg)
}

/// Builds the tree from the event log without the overlap check.
pub fn tree_from_events(traj: &Trajectory, cfg: &SimConfig) -> Result<MarkedTree> {
    let first = traj
        .samples
        .first()
        .ok_or_else(|| invalid("trajectory has no samples"))?;
    let mut tree = MarkedTree::new(first.x, first.v);
    let radius = cfg.radius();
    for ev in &traj.events {
        let w = ev.background_velocity - ev.v_entry;
        let geom = ImpactGeometry::from_offset(ev.offset_entry / cfg.epsilon, w)?;
        tree.nodes.push(TreeNode {
            t: ev.t_entry,
            r: geom.r.min(radius),
            zeta: geom.zeta,
            v: ev.background_velocity,
        });
    }
    Ok(tree)
}

/// Velocities along a replayed tree.
#[derive(Clone, Debug, PartialEq)]
pub struct Replay {
    pub x: Vec3,
    pub v: Vec3,
    /// Tagged velocity just before each collision.
    pub pre: Vec<Vec3>,
    /// Tagged velocity just after each collision.
    pub post: Vec<Vec3>,
}

/// One jump of the Boltzmann dynamics: the velocity after colliding with
/// marker `node` at pre-collision velocity `v`.
pub fn collide(p: &RadialPotential, node: &TreeNode, v: Vec3, kinematics: Kinematics, tol: f64) -> Result<Vec3> {
    let w = node.v - v;
    if w.norm() == 0.0 {
        return Ok(v);
    }
    let geom = ImpactGeometry::new(node.r, node.zeta, w)?;
    Ok(scatter_velocities(p, &geom, v, node.v, tol)?.tagged_velocity(kinematics))
}

/// Replays root and nodes through free transport and the scattering map up
/// to time `t`.
pub fn replay_tree(tree: &MarkedTree, p: &RadialPotential, kinematics: Kinematics, tol: f64, t: f64) -> Result<Replay> {
    let (mut x, mut v) = tree.root;
    let mut now = 0.0;
    let mut pre = Vec::with_capacity(tree.n());
    let mut post = Vec::with_capacity(tree.n());
    for node in tree.nodes.iter().take_while(|n| n.t <= t) {
        x = (x + v * (node.t - now)).wrap_unit();
        now = node.t;
        pre.push(v);
        v = collide(p, node, v, kinematics, tol)?;
        post.push(v);
    }
    x = (x + v * (t - now)).wrap_unit();
    Ok(Replay { x, v, pre, post })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DynamicsFlags {
    pub velocity_separation: bool,
    pub time_separation: bool,
    pub no_initial_overlap: bool,
    pub no_recollision: bool,
}

impl DynamicsFlags {
    pub fn all(&self) -> bool {
        self.velocity_separation && self.time_separation && self.no_initial_overlap && self.no_recollision
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeFlags {
    pub speed_bound: bool,
    pub separation_bound: bool,
    pub count_bound: bool,
    pub gap_bound: bool,
}

impl TreeFlags {
    pub fn all(&self) -> bool {
        self.speed_bound && self.separation_bound && self.count_bound && self.gap_bound
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeClassification {
    pub dynamics: DynamicsFlags,
    pub tree: TreeFlags,
    pub good_dynamics: bool,
    pub good_tree: bool,
    pub in_r_eps: bool,
}

/// Upper limit on impact parameters in the restriction set,
/// `R - (b/ε)(1 + 1/V₁)`.
pub fn restriction_radius(cfg: &SimConfig) -> f64 {
    cfg.radius() - cfg.b() / cfg.epsilon * (1.0 + 1.0 / cfg.v1())
}

/// Evaluates the good-tree conditions given the tagged velocities before
/// and after each collision and the dynamical flags.
pub fn classify_with(tree: &MarkedTree, pre: &[Vec3], post: &[Vec3], dynamics: DynamicsFlags, cfg: &SimConfig) -> TreeClassification {
    let v2 = cfg.v2();
    let v1 = cfg.v1();
    let speed_bound = tree.root.1.norm() <= v2
        && post.iter().all(|v| v.norm() <= v2)
        && tree.nodes.iter().all(|n| n.v.norm() <= v2);
    let separation_bound = tree.nodes.iter().zip(pre).all(|(n, v)| (*v - n.v).norm() >= v1);
    let count_bound = tree.n() as f64 <= cfg.max_collisions();
    let gap_bound = tree.nodes.windows(2).all(|w| w[1].t - w[0].t > cfg.delta());
    let flags = TreeFlags {
        speed_bound,
        separation_bound,
        count_bound,
        gap_bound,
    };
    let good_dynamics = dynamics.all();
    let good_tree = good_dynamics && flags.all();
    let limit = restriction_radius(cfg);
    let in_r_eps = good_tree && tree.nodes.iter().all(|n| n.r <= limit);
    TreeClassification {
        dynamics,
        tree: flags,
        good_dynamics,
        good_tree,
        in_r_eps,
    }
}

/// Classifies a tree extracted from `traj`.
///
/// Near collisions are logged for every background particle, so a particle
/// appearing in two events is a recollision and a particle absent from the
/// log never came within `Rε`.
/// Classifies a trajectory directly. Overlapping events, which make
/// `extract_tree` fail, show up as failed time separation.
pub fn classify_trajectory(traj: &Trajectory, cfg: &SimConfig) -> Result<TreeClassification> {
    let tree = tree_from_events(traj, cfg)?;
    Ok(classify(&tree, traj, cfg))
}

pub fn classify(tree: &MarkedTree, traj: &Trajectory, cfg: &SimConfig) -> TreeClassification {
    let pre: Vec<Vec3> = traj.events.iter().map(|e| e.v_entry).collect();
    let post: Vec<Vec3> = traj.events.iter().map(|e| e.v_exit).collect();
    let mut seen: Vec<usize> = traj.events.iter().map(|e| e.particle).collect();
    seen.sort_unstable();
    let unique = seen.windows(2).all(|w| w[0] != w[1]);
    let dynamics = DynamicsFlags {
        velocity_separation: traj.events.iter().all(|e| (e.v_entry - e.background_velocity).norm() > 0.0),
        time_separation: traj.events.windows(2).all(|w| w[1].t_entry > w[0].t_exit) && traj.events.iter().all(|e| e.complete),
        no_initial_overlap: !traj.initial_overlap,
        no_recollision: unique,
    };
    classify_with(tree, &pre, &post, dynamics, cfg)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fraction {
    pub count: u64,
    pub total: u64,
    pub estimate: f64,
    /// 95 % Wilson interval.
    pub ci: (f64, f64),
}

impl Fraction {
    pub fn new(count: u64, total: u64) -> Self {
        Self {
            count,
            total,
            estimate: if total == 0 { 0.0 } else { count as f64 / total as f64 },
            ci: wilson_interval(count, total, 1.959_963_984_540_054),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcludedReport {
    pub trees: u64,
    pub bad_dynamics: Fraction,
    pub outside_good: Fraction,
    /// Good trees outside the restriction set, over all trees.
    pub good_outside_r: Fraction,
    pub outside_r: Fraction,
    pub fail_velocity_separation: Fraction,
    pub fail_time_separation: Fraction,
    pub fail_initial_overlap: Fraction,
    pub fail_recollision: Fraction,
    pub fail_speed: Fraction,
    pub fail_separation: Fraction,
    pub fail_count: Fraction,
    pub fail_gap: Fraction,
    /// Analytic bound `V₂ Σ_{k=1}^{⌊M⌋} (T V₂ b (1 + 1/V₁))^k` on the measure
    /// of good trees outside the restriction set.
    pub lambda_bound: f64,
}

/// Acceptance rate of whole-configuration rejection: uniform backgrounds
/// are kept only when no particle lies within `Rε` of a uniform tagged
/// position. Its expectation is `ξ(ε, R)`.
pub fn rejection_acceptance(cfg: &SimConfig, trials: u64, seed: u64) -> Fraction {
    let reach = cfg.radius() * cfg.epsilon;
    let accepted = (0..trials)
        .into_par_iter()
        .filter(|&k| {
            let mut rng = substream(seed, Domain::Misc, k);
            let x0 = Vec3::new(rng.random(), rng.random(), rng.random());
            (0..cfg.n_background).all(|_| {
                let x = Vec3::new(rng.random(), rng.random(), rng.random());
                (x - x0).min_image().norm() >= reach
            })
        })
        .count() as u64;
    Fraction::new(accepted, trials)
}

pub fn lambda_bound(cfg: &SimConfig) -> f64 {
    let q = cfg.horizon * cfg.v2() * cfg.b() * (1.0 + 1.0 / cfg.v1());
    let m = cfg.max_collisions().floor() as i32;
    cfg.v2() * (1..=m).map(|k| q.powi(k)).sum::<f64>()
}

pub fn measure_excluded(cfg: &SimConfig, ensemble: &[TreeClassification]) -> ExcludedReport {
    let total = ensemble.len() as u64;
    let count = |f: &dyn Fn(&TreeClassification) -> bool| Fraction::new(ensemble.iter().filter(|c| f(c)).count() as u64, total);
    ExcludedReport {
        trees: total,
        bad_dynamics: count(&|c| !c.good_dynamics),
        outside_good: count(&|c| !c.good_tree),
        good_outside_r: count(&|c| c.good_tree && !c.in_r_eps),
        outside_r: count(&|c| !c.in_r_eps),
        fail_velocity_separation: count(&|c| !c.dynamics.velocity_separation),
        fail_time_separation: count(&|c| !c.dynamics.time_separation),
        fail_initial_overlap: count(&|c| !c.dynamics.no_initial_overlap),
        fail_recollision: count(&|c| !c.dynamics.no_recollision),
        fail_speed: count(&|c| !c.tree.speed_bound),
        fail_separation: count(&|c| !c.tree.separation_bound),
        fail_count: count(&|c| !c.tree.count_bound),
        fail_gap: count(&|c| !c.tree.gap_bound),
        lambda_bound: lambda_bound(cfg),
    }
}
