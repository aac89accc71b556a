//! Run configuration: a single TOML file describing potentials, densities,
//! the `ε` grid, tolerances and Monte Carlo sizes.
//!
//! Every derived parameter is recomputed from the file, so a config plus a
//! code version reproduces every reported number.

use crate::density::{InitialDensity, VelocityDensity};
use crate::dynamics::{SimConfig, Tolerances};
use crate::error::{Error, Result};
use crate::observables::{Binning, TestFunction};
use crate::potentials::{make_power_law, make_stretched_exponential, truncate, RadialPotential};
use crate::scattering::Kinematics;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::ops::Range;
use std::path::Path;
use toml::Spanned;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    /// `ψ(ρ) = ρ^{-s}`.
    PowerLaw {
        s: f64,
        #[serde(default)]
        cutoff: Option<f64>,
    },
    /// Stretched exponential with constant `c` and exponent `γ`.
    StretchedExp {
        c: f64,
        gamma: f64,
        #[serde(default)]
        cutoff: Option<f64>,
    },
}

impl PotentialSpec {
    pub fn build(&self) -> Result<RadialPotential> {
        match *self {
            PotentialSpec::PowerLaw { s, .. } => make_power_law(s),
            PotentialSpec::StretchedExp { c, gamma, .. } => make_stretched_exponential(c, gamma),
        }
    }

    pub fn cutoff(&self) -> Option<f64> {
        match *self {
            PotentialSpec::PowerLaw { cutoff, .. } | PotentialSpec::StretchedExp { cutoff, .. } => cutoff,
        }
    }

    pub fn gamma(&self) -> Option<f64> {
        match *self {
            PotentialSpec::StretchedExp { gamma, .. } => Some(gamma),
            PotentialSpec::PowerLaw { .. } => None,
        }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingSpec {
    pub epsilons: Vec<f64>,
    pub horizon: f64,
    /// `γ` in `R = ε^{-1/(3+γ)}`; taken from the potential when it has one.
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default = "one")]
    pub c_b: f64,
    #[serde(default)]
    pub r_exponent: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdSpec {
    pub trajectories: usize,
    /// Sample intervals on `[0, T]`; must be even so `T/2` is a sample time.
    pub samples: usize,
}

fn fixed_scatterer() -> Kinematics {
    Kinematics::FixedScatterer
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LbeSpec {
    pub walkers: usize,
    /// Snapshot intervals on `[0, T]`.
    pub snapshots: usize,
    #[serde(default = "fixed_scatterer")]
    pub kinematics: Kinematics,
    /// Cutoff of the reference solver standing in for the uncut equation.
    pub reference_radius: f64,
}

fn ten() -> f64 {
    10.0
}

fn equal_mass() -> Kinematics {
    Kinematics::EqualMass
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSpec {
    pub radii: Vec<f64>,
    pub mc_samples: usize,
    /// Index into `compare.tests`.
    pub test: usize,
    /// Velocity density playing the role of `f`.
    pub f: VelocityDensity,
    /// Ensemble size drawn from `f`.
    pub f_samples: usize,
    #[serde(default = "ten")]
    pub r0: f64,
    #[serde(default = "equal_mass")]
    pub kinematics: Kinematics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSpec {
    pub binning: Binning,
    pub bootstrap: usize,
    pub tests: Vec<TestFunction>,
    /// Paired long/short trajectories per `(ε, seed)` cell.
    pub divergence_trajectories: usize,
    pub operator: OperatorSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScatterSpec {
    pub impact: Vec<f64>,
    pub speeds: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seeds: Vec<u64>,
    pub output_dir: String,
    pub potential: PotentialSpec,
    pub background: VelocityDensity,
    pub initial: InitialDensity,
    pub scaling: ScalingSpec,
    #[serde(default)]
    pub tolerances: Tolerances,
    pub md: MdSpec,
    pub lbe: LbeSpec,
    pub compare: CompareSpec,
    pub scatter: ScatterSpec,
}

/// Section spans kept alongside the parsed config for error messages.
#[derive(Deserialize)]
struct Located {
    schema_version: Spanned<toml::Value>,
    seeds: Spanned<toml::Value>,
    potential: Spanned<toml::Value>,
    background: Spanned<toml::Value>,
    initial: Spanned<toml::Value>,
    scaling: Spanned<toml::Value>,
    #[serde(default)]
    tolerances: Option<Spanned<toml::Value>>,
    md: Spanned<toml::Value>,
    lbe: Spanned<toml::Value>,
    compare: Spanned<toml::Value>,
    scatter: Spanned<toml::Value>,
}

fn line_of(text: &str, span: Range<usize>) -> usize {
    text[..span.start.min(text.len())].matches('\n').count() + 1
}

fn config_error(text: &str, span: Option<Range<usize>>, section: &str, msg: impl std::fmt::Display) -> Error {
    match span {
        Some(s) => Error::Config(format!("line {}: [{section}] {msg}", line_of(text, s))),
        None => Error::Config(format!("[{section}] {msg}")),
    }
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Parses and validates; errors carry the line of the offending section.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of(text, s));
            let msg = e.message().trim().to_string();
            match line {
                Some(l) => Error::Config(format!("line {l}: {msg}")),
                None => Error::Config(msg),
            }
        })?;
        let spans: Option<Located> = toml::from_str(text).ok();
        cfg.validate_located(text, spans.as_ref())?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_located("", None)
    }

    fn validate_located(&self, text: &str, spans: Option<&Located>) -> Result<()> {
        let at = |f: fn(&Located) -> Range<usize>| spans.map(f);
        let fail = |span, section: &str, msg: String| Err(config_error(text, span, section, msg));
        if self.schema_version != SCHEMA_VERSION {
            return fail(
                at(|l| l.schema_version.span()),
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            );
        }
        if self.seeds.is_empty() {
            return fail(at(|l| l.seeds.span()), "seeds", "at least one seed is required".into());
        }
        let pot_span = at(|l| l.potential.span());
        let p = self.potential.build().map_err(|e| config_error(text, pot_span.clone(), "potential", e))?;
        if let Some(c) = self.potential.cutoff() {
            truncate(&p, c).map_err(|e| config_error(text, pot_span.clone(), "potential", e))?;
        }
        self.background
            .validate()
            .map_err(|e| config_error(text, at(|l| l.background.span()), "background", e))?;
        if !self.background.is_bounded() {
            return fail(
                at(|l| l.background.span()),
                "background",
                "ess sup (1 + |v|^5) g must be finite".into(),
            );
        }
        self.initial
            .validate()
            .map_err(|e| config_error(text, at(|l| l.initial.span()), "initial", e))?;
        let scaling = at(|l| l.scaling.span());
        if self.scaling.epsilons.is_empty() {
            return fail(scaling, "scaling", "epsilon grid is empty".into());
        }
        if self.potential.gamma().is_none() && self.scaling.gamma.is_none() {
            return fail(scaling, "scaling", "gamma is required for potentials without one".into());
        }
        for &eps in &self.scaling.epsilons {
            self.sim_config(eps, self.seeds[0])
                .map_err(|e| config_error(text, scaling.clone(), "scaling", e))?;
        }
        let tol = &self.tolerances;
        if [tol.ode_atol, tol.ode_rtol, tol.angle, tol.event_time]
            .iter()
            .any(|t| !(*t > 0.0 && *t < 1e-2))
        {
            return fail(
                spans.and_then(|l| l.tolerances.as_ref().map(|t| t.span())),
                "tolerances",
                "tolerances must lie in (0, 1e-2)".into(),
            );
        }
        let md = at(|l| l.md.span());
        if self.md.trajectories == 0 || self.md.samples < 2 || self.md.samples % 2 != 0 {
            return fail(md, "md", "need trajectories >= 1 and an even samples count >= 2".into());
        }
        let lbe = at(|l| l.lbe.span());
        if self.lbe.walkers < 100 || self.lbe.snapshots < 2 || self.lbe.snapshots % 2 != 0 {
            return fail(lbe, "lbe", "need walkers >= 100 and an even snapshots count >= 2".into());
        }
        if !(self.lbe.reference_radius > 1.0) {
            return fail(lbe, "lbe", "reference_radius must exceed 1".into());
        }
        let cmp = at(|l| l.compare.span());
        self.compare
            .binning
            .validate()
            .map_err(|e| config_error(text, cmp.clone(), "compare", e))?;
        for h in &self.compare.tests {
            h.validate().map_err(|e| config_error(text, cmp.clone(), "compare", e))?;
        }
        let op = &self.compare.operator;
        if op.test >= self.compare.tests.len() {
            return fail(cmp, "compare", format!("operator test index {} out of range", op.test));
        }
        if self.compare.tests[op.test].gradient_bound().is_none() {
            return fail(cmp, "compare", "operator test function must be Lipschitz".into());
        }
        if op.radii.iter().any(|r| !(*r > std::f64::consts::E)) || op.mc_samples < 2 || op.f_samples == 0 {
            return fail(cmp, "compare", "operator radii must exceed e and sample counts be positive".into());
        }
        op.f.validate().map_err(|e| config_error(text, cmp.clone(), "compare", e))?;
        let sc = at(|l| l.scatter.span());
        if self.scatter.impact.iter().any(|r| !(*r >= 0.0)) || self.scatter.speeds.iter().any(|w| !(*w > 0.0)) {
            return fail(sc, "scatter", "impact parameters must be >= 0 and speeds > 0".into());
        }
        Ok(())
    }

    /// `γ` entering `R(ε)`.
    pub fn gamma(&self) -> f64 {
        self.potential.gamma().or(self.scaling.gamma).unwrap_or(1.0)
    }

    pub fn sim_config(&self, epsilon: f64, seed: u64) -> Result<SimConfig> {
        let p_s = match self.potential {
            PotentialSpec::PowerLaw { s, .. } => s,
            PotentialSpec::StretchedExp { .. } => 4.0,
        };
        let mut cfg = SimConfig::new(epsilon, self.scaling.horizon, self.gamma(), p_s, seed)?;
        cfg.c_b = self.scaling.c_b;
        cfg.r_exponent = self.scaling.r_exponent;
        cfg.tolerances = self.tolerances;
        cfg.samples = self.md.samples;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical TOML rendering used for hashing and echoing.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}
