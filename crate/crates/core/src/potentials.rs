//! Radial repulsive pair potentials, their smooth truncation and the
//! admissibility checks applied to them.
//!
//! A potential is a radial profile `ψ(ρ)` together with metadata describing
//! its decay (exponent `s`, stretched exponent `γ`, radii `ρ₁`, `ρ₂`) and an
//! optional cutoff radius `R`. Truncated potentials are `Λ^R ψ` where `Λ^R`
//! is a quintic smoothstep falling from 1 at `R - 1` to 0 at `R`.

use crate::error::{invalid, Result};
use crate::quadrature::kronrod21;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

/// A radial function `ψ` with its derivative.
pub trait RadialProfile: Send + Sync + fmt::Debug {
    fn value(&self, rho: f64) -> f64;
    fn derivative(&self, rho: f64) -> f64;
    /// Radius beyond which the profile vanishes identically, if any.
    fn support(&self) -> Option<f64> {
        None
    }
    /// Radii where the profile is only finitely smooth.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
    fn name(&self) -> &str;
}

/// `ψ ≡ 0`.
#[derive(Clone, Copy, Debug)]
pub struct Free;

impl RadialProfile for Free {
    fn value(&self, _rho: f64) -> f64 {
        0.0
    }
    fn derivative(&self, _rho: f64) -> f64 {
        0.0
    }
    fn support(&self) -> Option<f64> {
        Some(0.0)
    }
    fn name(&self) -> &str {
        "free"
    }
}

/// `ψ(ρ) = ρ^{-s}`.
#[derive(Clone, Copy, Debug)]
pub struct PowerLaw {
    pub s: f64,
}

impl RadialProfile for PowerLaw {
    fn value(&self, rho: f64) -> f64 {
        rho.powf(-self.s)
    }
    fn derivative(&self, rho: f64) -> f64 {
        -self.s * rho.powf(-self.s - 1.0)
    }
    fn name(&self) -> &str {
        "power_law"
    }
}

/// `ψ(ρ) = (1/ρ - 1/ρ_c)³` for `ρ < ρ_c`, zero beyond. Twice continuously
/// differentiable with compact support.
#[derive(Clone, Copy, Debug)]
pub struct CompactCore {
    pub radius: f64,
}

impl RadialProfile for CompactCore {
    fn value(&self, rho: f64) -> f64 {
        if rho >= self.radius {
            0.0
        } else {
            (1.0 / rho - 1.0 / self.radius).powi(3)
        }
    }
    fn derivative(&self, rho: f64) -> f64 {
        if rho >= self.radius {
            0.0
        } else {
            -3.0 * (1.0 / rho - 1.0 / self.radius).powi(2) / (rho * rho)
        }
    }
    fn support(&self) -> Option<f64> {
        Some(self.radius)
    }
    fn breakpoints(&self) -> Vec<f64> {
        vec![self.radius]
    }
    fn name(&self) -> &str {
        "compact_core"
    }
}

/// Quintic smoothstep rising from 0 at `u = 0` to 1 at `u = 1`.
#[inline]
fn smoothstep(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else if u >= 1.0 {
        1.0
    } else {
        u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)
    }
}

#[inline]
fn smoothstep_derivative(u: f64) -> f64 {
    if u <= 0.0 || u >= 1.0 {
        0.0
    } else {
        30.0 * u * u * (1.0 - u) * (1.0 - u)
    }
}

/// Stretched-exponential force tail `prefactor · exp(-rate ρ^{3/2+γ})` for
/// `ρ ≥ ρ₂`, blended on `[ρ₂/2, ρ₂]` into the force of a `core · ρ^{-3}`
/// core. The energy is the integral of the force from infinity, tabulated
/// at construction and evaluated by cubic Hermite interpolation.
#[derive(Clone, Debug)]
pub struct StretchedExponential {
    pub prefactor: f64,
    pub rate: f64,
    pub gamma: f64,
    pub rho2: f64,
    pub core: f64,
    exponent: f64,
    grid_start: f64,
    grid_step: f64,
    table: Vec<f64>,
    core_offset: f64,
}

const TABLE_STEP: f64 = 2.5e-4;
const TAIL_EXPONENT_LIMIT: f64 = 700.0;

impl StretchedExponential {
    pub fn new(prefactor: f64, rate: f64, gamma: f64, rho2: f64) -> Result<Self> {
        if !(prefactor > 0.0 && prefactor.is_finite()) {
            return Err(invalid(format!("stretched exponential prefactor must be positive, got {prefactor}")));
        }
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(invalid(format!("stretched exponential rate must be positive, got {rate}")));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(invalid(format!("stretched exponent gamma must be positive, got {gamma}")));
        }
        if !(rho2 > 0.0 && rho2.is_finite()) {
            return Err(invalid(format!("blend radius must be positive, got {rho2}")));
        }
        let exponent = 1.5 + gamma;
        let grid_start = 0.5 * rho2;
        // past this radius the tail force is below exp(-700)
        let rho_hi = (TAIL_EXPONENT_LIMIT / rate).powf(1.0 / exponent).max(rho2 * 1.5);
        let n = ((rho_hi - grid_start) / TABLE_STEP).ceil() as usize;
        let grid_step = (rho_hi - grid_start) / n as f64;
        let mut pot = Self {
            prefactor,
            rate,
            gamma,
            rho2,
            core: 1.0,
            exponent,
            grid_start,
            grid_step,
            table: vec![0.0; n + 1],
            core_offset: 0.0,
        };
        let mut acc = pot.far_tail(rho_hi);
        pot.table[n] = acc;
        for i in (0..n).rev() {
            let a = grid_start + i as f64 * grid_step;
            let b = a + grid_step;
            let (panel, _) = kronrod21(&|r| pot.force(r), a, b);
            acc += panel;
            pot.table[i] = acc;
        }
        pot.core_offset = pot.table[0] - pot.core * grid_start.powi(-3);
        Ok(pot)
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    fn tail_force(&self, rho: f64) -> f64 {
        self.prefactor * (-self.rate * rho.powf(self.exponent)).exp()
    }

    /// Force magnitude `-ψ'(ρ)`.
    pub fn force(&self, rho: f64) -> f64 {
        let lo = self.grid_start;
        if rho >= self.rho2 {
            return self.tail_force(rho);
        }
        let core = 3.0 * self.core * rho.powi(-4);
        if rho <= lo {
            return core;
        }
        let chi = smoothstep((rho - lo) / (self.rho2 - lo));
        (1.0 - chi) * core + chi * self.tail_force(rho)
    }

    // leading asymptotic of ∫_ρ^∞ P exp(-c t^a) dt
    fn far_tail(&self, rho: f64) -> f64 {
        self.tail_force(rho) / (self.rate * self.exponent * rho.powf(self.exponent - 1.0))
    }

    fn grid_end(&self) -> f64 {
        self.grid_start + self.grid_step * (self.table.len() - 1) as f64
    }
}

impl RadialProfile for StretchedExponential {
    fn value(&self, rho: f64) -> f64 {
        if rho <= self.grid_start {
            return self.core * rho.powi(-3) + self.core_offset;
        }
        if rho >= self.grid_end() {
            return self.far_tail(rho);
        }
        let pos = (rho - self.grid_start) / self.grid_step;
        let i = (pos.floor() as usize).min(self.table.len() - 2);
        let a = self.grid_start + i as f64 * self.grid_step;
        let b = a + self.grid_step;
        let h = self.grid_step;
        let t = (rho - a) / h;
        let (y0, y1) = (self.table[i], self.table[i + 1]);
        let (d0, d1) = (-self.force(a), -self.force(b));
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * h * d0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * h * d1
    }
    fn derivative(&self, rho: f64) -> f64 {
        -self.force(rho)
    }
    fn breakpoints(&self) -> Vec<f64> {
        vec![self.grid_start, self.rho2]
    }
    fn name(&self) -> &str {
        "stretched_exp"
    }
}

/// Decay bound asserted for `ρ > ρ₂`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecayBound {
    /// `ψ ≤ ρ^{-s}` and `-ψ' ≤ s ρ^{-s-1}`.
    Power { s: f64 },
    /// `-ψ' ≤ prefactor · exp(-rate ρ^{3/2+γ})`.
    StretchedExp { prefactor: f64, rate: f64, gamma: f64 },
    /// No decay claim.
    None,
}

/// Admissibility metadata attached to a potential.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialMeta {
    /// Power-law decay exponent used by the angle estimates.
    pub s: f64,
    pub gamma: Option<f64>,
    /// `ψ' + ψ ≤ 0` is claimed on `(0, ρ₁)`.
    pub rho1: f64,
    /// The decay bound is claimed beyond `ρ₂`.
    pub rho2: f64,
    pub decay: DecayBound,
}

/// The smooth radial cutoff `Λ^R`, equal to 1 on `[0, R-1]` and 0 on `[R, ∞)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffProfile {
    pub radius: f64,
}

impl CutoffProfile {
    pub fn new(radius: f64) -> Result<Self> {
        if !(radius > 1.0 && radius.is_finite()) {
            return Err(invalid(format!("cutoff radius must exceed 1, got {radius}")));
        }
        Ok(Self { radius })
    }

    /// `1 - S(ρ - (R - 1)) = S(R - ρ)` by symmetry of the quintic step,
    /// which keeps relative accuracy as `ρ → R`.
    #[inline]
    pub fn lambda(&self, rho: f64) -> f64 {
        smoothstep(self.radius - rho)
    }

    #[inline]
    pub fn derivative(&self, rho: f64) -> f64 {
        -smoothstep_derivative(rho - (self.radius - 1.0))
    }

    /// Inner radius `R - 1` of the transition layer.
    pub fn inner(&self) -> f64 {
        self.radius - 1.0
    }
}

#[derive(Clone, Debug)]
pub struct RadialPotential {
    profile: Arc<dyn RadialProfile>,
    meta: PotentialMeta,
    cutoff: Option<CutoffProfile>,
    breaks: Vec<f64>,
}

fn collect_breaks(profile: &dyn RadialProfile, cutoff: Option<CutoffProfile>) -> Vec<f64> {
    let mut b = profile.breakpoints();
    if let Some(c) = cutoff {
        b.push(c.inner());
        b.push(c.radius);
    }
    b.sort_by(f64::total_cmp);
    b.dedup();
    b
}

/// Builds `ψ(ρ) = ρ^{-s}` with `ρ₁ = s`, `ρ₂ = 1`.
pub fn make_power_law(s: f64) -> Result<RadialPotential> {
    if !(s > 2.0 && s.is_finite()) {
        return Err(invalid(format!("power-law exponent must exceed 2, got {s}")));
    }
    Ok(RadialPotential::from_profile(
        Arc::new(PowerLaw { s }),
        PotentialMeta {
            s,
            gamma: None,
            rho1: s,
            rho2: 1.0,
            decay: DecayBound::Power { s },
        },
    ))
}

/// Stretched-exponential potential with a single constant used both as
/// prefactor and rate, `ρ₂ = 1`, and a `ρ^{-3}` core.
pub fn make_stretched_exponential(c: f64, gamma: f64) -> Result<RadialPotential> {
    make_stretched_exponential_with(c, c, gamma, 1.0)
}

pub fn make_stretched_exponential_with(prefactor: f64, rate: f64, gamma: f64, rho2: f64) -> Result<RadialPotential> {
    let profile = StretchedExponential::new(prefactor, rate, gamma, rho2)?;
    Ok(RadialPotential::from_profile(
        Arc::new(profile),
        PotentialMeta {
            s: 4.0,
            gamma: Some(gamma),
            rho1: 3.0,
            rho2,
            decay: DecayBound::StretchedExp { prefactor, rate, gamma },
        },
    ))
}

/// Compactly supported core, used where truncation must not change the
/// dynamics.
pub fn make_compact_core(radius: f64) -> Result<RadialPotential> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(invalid(format!("support radius must be positive, got {radius}")));
    }
    Ok(RadialPotential::from_profile(
        Arc::new(CompactCore { radius }),
        PotentialMeta {
            s: 4.0,
            gamma: None,
            rho1: 0.0,
            rho2: radius,
            decay: DecayBound::Power { s: 4.0 },
        },
    ))
}

pub fn make_free() -> RadialPotential {
    RadialPotential::from_profile(
        Arc::new(Free),
        PotentialMeta {
            s: 4.0,
            gamma: None,
            rho1: 0.0,
            rho2: 0.0,
            decay: DecayBound::None,
        },
    )
}

/// Applies the smooth cutoff at radius `R`.
pub fn truncate(p: &RadialPotential, radius: f64) -> Result<RadialPotential> {
    if p.cutoff.is_some() {
        return Err(invalid("potential is already truncated"));
    }
    let cutoff = Some(CutoffProfile::new(radius)?);
    Ok(RadialPotential {
        profile: Arc::clone(&p.profile),
        meta: p.meta,
        cutoff,
        breaks: collect_breaks(p.profile.as_ref(), cutoff),
    })
}

impl RadialPotential {
    pub fn from_profile(profile: Arc<dyn RadialProfile>, meta: PotentialMeta) -> Self {
        let breaks = collect_breaks(profile.as_ref(), None);
        Self {
            profile,
            meta,
            cutoff: None,
            breaks,
        }
    }

    /// Sorted radii where `ψ` is only finitely smooth (blend and cutoff seams).
    pub fn breakpoints(&self) -> &[f64] {
        &self.breaks
    }

    pub fn meta(&self) -> &PotentialMeta {
        &self.meta
    }

    pub fn name(&self) -> &str {
        self.profile.name()
    }

    pub fn cutoff(&self) -> Option<&CutoffProfile> {
        self.cutoff.as_ref()
    }

    pub fn cutoff_radius(&self) -> Option<f64> {
        self.cutoff.map(|c| c.radius)
    }

    /// The same potential without its cutoff.
    pub fn untruncated(&self) -> RadialPotential {
        RadialPotential::from_profile(Arc::clone(&self.profile), self.meta)
    }

    pub fn is_free(&self) -> bool {
        self.profile.support() == Some(0.0)
    }

    /// Radius beyond which the potential vanishes identically.
    pub fn range(&self) -> Option<f64> {
        match (self.profile.support(), self.cutoff) {
            (Some(s), Some(c)) => Some(s.min(c.radius)),
            (Some(s), None) => Some(s),
            (None, Some(c)) => Some(c.radius),
            (None, None) => None,
        }
    }

    /// Energy `ψ(ρ)` (or `Λ^R ψ` when truncated).
    #[inline]
    pub fn psi(&self, rho: f64) -> f64 {
        match self.cutoff {
            None => self.profile.value(rho),
            Some(c) => {
                if rho <= c.inner() {
                    self.profile.value(rho)
                } else if rho >= c.radius {
                    0.0
                } else {
                    c.lambda(rho) * self.profile.value(rho)
                }
            }
        }
    }

    /// Radial derivative `dψ/dρ`.
    #[inline]
    pub fn dpsi(&self, rho: f64) -> f64 {
        match self.cutoff {
            None => self.profile.derivative(rho),
            Some(c) => {
                if rho <= c.inner() {
                    self.profile.derivative(rho)
                } else if rho >= c.radius {
                    0.0
                } else {
                    c.lambda(rho) * self.profile.derivative(rho) + c.derivative(rho) * self.profile.value(rho)
                }
            }
        }
    }

    /// Smallest radius past which `|ψ'|` stays below `threshold`, located on
    /// a geometric scan then refined by bisection. Equals the range for
    /// potentials of bounded support.
    pub fn force_negligible_radius(&self, threshold: f64) -> f64 {
        let mut hi = 1.0;
        while self.dpsi(hi).abs() >= threshold {
            hi *= 2.0;
            if let Some(r) = self.range() {
                if hi >= r {
                    return r;
                }
            }
            if hi > 1e12 {
                return hi;
            }
        }
        let mut lo = hi / 2.0;
        while lo > 1e-12 && self.dpsi(lo).abs() < threshold {
            hi = lo;
            lo /= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.dpsi(mid).abs() < threshold {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        match self.range() {
            Some(r) => hi.min(r),
            None => hi,
        }
    }
}

/// Geometric sample grid on `[rho_min, rho_max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleGrid {
    pub rho_min: f64,
    pub rho_max: f64,
    pub points: usize,
}

impl Default for SampleGrid {
    fn default() -> Self {
        Self {
            rho_min: 1e-3,
            rho_max: 1e3,
            points: 2000,
        }
    }
}

impl SampleGrid {
    pub fn nodes(&self) -> Vec<f64> {
        let n = self.points.max(2);
        let ratio = (self.rho_max / self.rho_min).ln();
        (0..n)
            .map(|i| self.rho_min * (ratio * i as f64 / (n - 1) as f64).exp())
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub rho: f64,
    /// Amount by which the condition fails at `rho` (positive).
    pub excess: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Radial,
    StrictlyDecreasing,
    Limits,
    CoreInequality,
    Decay,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConditionCheck {
    pub condition: Condition,
    pub pass: bool,
    pub first_violation: Option<Violation>,
    pub worst_violation: Option<Violation>,
}

#[derive(Clone, Debug, Serialize)]
pub struct AdmissibilityReport {
    pub checks: Vec<ConditionCheck>,
}

impl AdmissibilityReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn get(&self, condition: Condition) -> &ConditionCheck {
        self.checks
            .iter()
            .find(|c| c.condition == condition)
            .expect("every condition is reported")
    }
}

#[derive(Default)]
struct Tracker {
    first: Option<Violation>,
    worst: Option<Violation>,
}

impl Tracker {
    fn record(&mut self, rho: f64, excess: f64) {
        if excess > 0.0 {
            let v = Violation { rho, excess };
            if self.first.is_none() {
                self.first = Some(v);
            }
            if self.worst.is_none_or(|w| excess > w.excess) {
                self.worst = Some(v);
            }
        }
    }

    fn finish(self, condition: Condition) -> ConditionCheck {
        ConditionCheck {
            condition,
            pass: self.first.is_none(),
            first_violation: self.first,
            worst_violation: self.worst,
        }
    }
}

/// Decay-bound excess at a single radius; positive means violated.
pub fn decay_excess(p: &RadialPotential, rho: f64) -> f64 {
    let force = -p.dpsi(rho);
    match p.meta.decay {
        DecayBound::Power { s } => {
            let psi_excess = p.psi(rho) - rho.powf(-s);
            let force_excess = force - s * rho.powf(-s - 1.0);
            psi_excess.max(force_excess)
        }
        DecayBound::StretchedExp { prefactor, rate, gamma } => {
            let bound = prefactor * (-rate * rho.powf(1.5 + gamma)).exp();
            // equality holds on the tail; allow rounding
            force - bound * (1.0 + 1e-12)
        }
        DecayBound::None => 0.0,
    }
}

/// Samples each admissibility condition on the grid. Failures are recorded
/// in the report.
pub fn validate_admissibility(p: &RadialPotential, grid: &SampleGrid) -> AdmissibilityReport {
    let nodes = grid.nodes();
    let values: Vec<f64> = nodes.iter().map(|&r| p.psi(r)).collect();

    let radial = Tracker::default().finish(Condition::Radial);

    let mut decreasing = Tracker::default();
    for i in 1..nodes.len() {
        let (a, b) = (values[i - 1], values[i]);
        if a == 0.0 && b == 0.0 {
            // both underflowed; nothing to compare
            continue;
        }
        if b >= a {
            decreasing.record(nodes[i], (b - a).max(f64::MIN_POSITIVE));
        }
    }

    let mut limits = Tracker::default();
    let reference = p.psi(1.0);
    let first = values[0];
    let last = *values.last().unwrap();
    if !(first.is_finite() && first >= 1e2 * reference && first > 0.0) || first.is_nan() {
        limits.record(nodes[0], (1e2 * reference - first).abs().max(f64::MIN_POSITIVE));
    }
    if !(last <= 1e-2 * reference) {
        limits.record(*nodes.last().unwrap(), (last - 1e-2 * reference).abs().max(f64::MIN_POSITIVE));
    }

    let mut core = Tracker::default();
    let mut decay = Tracker::default();
    for (&rho, &psi) in nodes.iter().zip(&values) {
        if rho < p.meta.rho1 {
            let lhs = p.dpsi(rho) + psi;
            core.record(rho, lhs);
        }
        if rho > p.meta.rho2 {
            decay.record(rho, decay_excess(p, rho));
        }
    }

    AdmissibilityReport {
        checks: vec![
            radial,
            decreasing.finish(Condition::StrictlyDecreasing),
            limits.finish(Condition::Limits),
            core.finish(Condition::CoreInequality),
            decay.finish(Condition::Decay),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::function::gamma::{gamma, gamma_ur};

    #[derive(Debug)]
    struct Exponential;
    impl RadialProfile for Exponential {
        fn value(&self, rho: f64) -> f64 {
            (-rho).exp()
        }
        fn derivative(&self, rho: f64) -> f64 {
            -(-rho).exp()
        }
        fn name(&self) -> &str {
            "exp"
        }
    }

    #[derive(Debug)]
    struct Coulomb;
    impl RadialProfile for Coulomb {
        fn value(&self, rho: f64) -> f64 {
            1.0 / rho
        }
        fn derivative(&self, rho: f64) -> f64 {
            -1.0 / (rho * rho)
        }
        fn name(&self) -> &str {
            "coulomb"
        }
    }

    fn meta_s4() -> PotentialMeta {
        PotentialMeta {
            s: 4.0,
            gamma: None,
            rho1: 0.0,
            rho2: 1.0,
            decay: DecayBound::Power { s: 4.0 },
        }
    }

    #[test]
    fn power_law_values() {
        let p = make_power_law(4.0).unwrap();
        assert_eq!(p.psi(1.0), 1.0);
        assert_eq!(p.dpsi(1.0), -4.0);
        assert_eq!(p.psi(2.0), 1.0 / 16.0);
        assert_eq!(p.meta().rho1, 4.0);
        assert_eq!(p.meta().rho2, 1.0);
        assert!(make_power_law(2.0).is_err());
        assert!(make_power_law(1.5).is_err());
    }

    #[test]
    fn core_inequality_for_cubic_power() {
        let p = make_power_law(3.0).unwrap();
        let lhs = p.dpsi(0.5) + p.psi(0.5);
        assert!((lhs - (-40.0)).abs() < 1e-12);
    }

    #[test]
    fn power_law_is_admissible() {
        let report = validate_admissibility(&make_power_law(4.0).unwrap(), &SampleGrid::default());
        assert!(report.all_pass(), "{report:?}");
    }

    #[test]
    fn exponential_fails_blow_up() {
        let p = RadialPotential::from_profile(Arc::new(Exponential), meta_s4());
        let report = validate_admissibility(&p, &SampleGrid::default());
        let limits = report.get(Condition::Limits);
        assert!(!limits.pass);
        assert_eq!(limits.first_violation.unwrap().rho, 1e-3);
    }

    #[test]
    fn coulomb_with_claimed_fast_decay_fails() {
        let p = RadialPotential::from_profile(Arc::new(Coulomb), meta_s4());
        assert!(decay_excess(&p, 2.0) > 0.0);
        // force ρ^-2 = 0.25 against 4ρ^-5 = 0.125 at ρ = 2
        assert!((-p.dpsi(2.0) - 0.25).abs() < 1e-15);
        let report = validate_admissibility(&p, &SampleGrid::default());
        assert!(!report.get(Condition::Decay).pass);
    }

    #[test]
    fn truncation_plateaus_and_seams() {
        let p = make_power_law(4.0).unwrap();
        let r = 6.0;
        let t = truncate(&p, r).unwrap();
        for rho in [0.3, 1.0, 2.5, 4.9, 5.0] {
            assert_eq!(t.psi(rho), p.psi(rho));
            assert_eq!(t.dpsi(rho), p.dpsi(rho));
        }
        for rho in [6.0, 6.5, 100.0] {
            assert_eq!(t.psi(rho), 0.0);
            assert_eq!(t.dpsi(rho), 0.0);
        }
        // C² across both seams: one-sided second differences agree
        let h = 1e-4;
        for seam in [r - 1.0, r] {
            let second = |x: f64| (t.psi(x + h) - 2.0 * t.psi(x) + t.psi(x - h)) / (h * h);
            let left = second(seam - 2.0 * h);
            let right = second(seam + 2.0 * h);
            assert!((left - right).abs() < 1e-3 * (1.0 + left.abs()), "{seam}: {left} {right}");
        }
        assert!(truncate(&t, 8.0).is_err());
        assert!(truncate(&p, 1.0).is_err());
    }

    #[test]
    fn truncated_sup_bounded_by_inner_value() {
        let p = make_power_law(4.0).unwrap();
        let t = truncate(&p, 5.0).unwrap();
        let bound = p.psi(4.0);
        for i in 0..=1000 {
            let rho = 4.0 + i as f64 / 1000.0;
            assert!(t.psi(rho).abs() <= bound);
        }
    }

    #[test]
    fn cutoff_profile_is_monotone_in_unit_interval() {
        let c = CutoffProfile::new(10.0).unwrap();
        let mut prev = 1.0;
        for i in 0..=1000 {
            let rho = 9.0 + i as f64 / 1000.0;
            let l = c.lambda(rho);
            assert!((0.0..=1.0).contains(&l));
            assert!(l <= prev);
            prev = l;
        }
        assert_eq!(c.lambda(9.0), 1.0);
        assert_eq!(c.lambda(10.0), 0.0);
    }

    #[test]
    fn force_matches_central_difference() {
        let potentials = [
            make_power_law(4.0).unwrap(),
            make_stretched_exponential(1.0, 1.0).unwrap(),
            truncate(&make_power_law(4.0).unwrap(), 8.0).unwrap(),
        ];
        for p in &potentials {
            for i in 0..200 {
                let rho = 0.05 * (1.03f64).powi(i);
                if rho > 6.0 {
                    break;
                }
                // skip the blend and cutoff seams
                if [0.5, 1.0, 7.0, 8.0].iter().any(|s| (rho - s).abs() < 1e-3) {
                    continue;
                }
                let h = 1e-5 * rho;
                let cd = (p.psi(rho + h) - p.psi(rho - h)) / (2.0 * h);
                let exact = p.dpsi(rho);
                assert!(
                    (cd - exact).abs() <= 1e-6 * exact.abs().max(1e-300) + 1e-12,
                    "{} at {rho}: {cd} vs {exact}",
                    p.name()
                );
            }
        }
    }

    #[test]
    fn stretched_tail_matches_incomplete_gamma() {
        let (c, gamma_exp): (f64, f64) = (1.0, 1.0);
        let p = make_stretched_exponential(c, gamma_exp).unwrap();
        let a: f64 = 1.5 + gamma_exp;
        for rho in [1.0f64, 1.3, 2.0, 3.0] {
            // ∫_ρ^∞ c e^{-c t^a} dt = c / (a c^{1/a}) Γ(1/a, c ρ^a)
            let s = 1.0 / a;
            let exact = c / (a * c.powf(s)) * gamma_ur(s, c * rho.powf(a)) * gamma(s);
            let got = p.psi(rho);
            assert!((got - exact).abs() <= 1e-10 * exact, "{rho}: {got} vs {exact}");
        }
    }

    #[test]
    fn stretched_value_at_blend_radius_two_resolutions() {
        let p = make_stretched_exponential(1.0, 1.0).unwrap();
        let rho2 = p.meta().rho2;
        let force = |r: f64| -p.dpsi(r);
        let upper = 14.0;
        let panels = |n: usize| -> f64 {
            let h = (upper - rho2) / n as f64;
            (0..n)
                .map(|i| kronrod21(&force, rho2 + i as f64 * h, rho2 + (i + 1) as f64 * h).0)
                .sum()
        };
        let coarse = panels(200);
        let fine = panels(400);
        assert!((coarse - fine).abs() < 1e-10);
        assert!((p.psi(rho2) - fine).abs() < 1e-10);
    }

    #[test]
    fn stretched_exponential_is_admissible() {
        let p = make_stretched_exponential(1.0, 1.0).unwrap();
        let report = validate_admissibility(&p, &SampleGrid::default());
        assert!(report.all_pass(), "{report:#?}");
        assert!(p.psi(10.0) < p.psi(5.0));
        // the tail force equals its bound
        let rho = 2.0 * p.meta().rho2;
        assert!((-p.dpsi(rho) - (-(rho.powf(2.5))).exp()).abs() < 1e-16);
    }

    #[test]
    fn cutoff_ordering_in_radius() {
        let p = make_power_law(4.0).unwrap();
        let a = truncate(&p, 5.0).unwrap();
        let b = truncate(&p, 7.0).unwrap();
        for i in 0..2000 {
            let rho = 0.01 + i as f64 * 0.004;
            assert!(a.psi(rho) <= b.psi(rho) && b.psi(rho) <= p.psi(rho));
        }
    }

    #[test]
    fn negligible_force_radius() {
        let p = make_power_law(4.0).unwrap();
        let r = p.force_negligible_radius(1e-16);
        assert!(((4.0 / 1e-16f64).powf(0.2) - r).abs() / r < 1e-9);
        let t = truncate(&p, 5.0).unwrap();
        assert_eq!(t.force_negligible_radius(1e-16), 5.0);
    }
}
