//! Single-pipe hydraulics: Darcy friction, minor losses, valve throttling and
//! pressure-driven demand outflow.
//!
//! Heads are pressures in Pa, flows are m^3/s.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fom::PipeGeometry;

/// Flow floor used inside resistance and gradient evaluations.
pub const Q_MIN: f64 = 1e-8;

/// Reynolds number separating the laminar and turbulent friction laws.
pub const LAMINAR_LIMIT: f64 = 2400.0;

/// Width of the pressure band (Pa) over which the demand law is blended to zero.
pub const DEMAND_SMOOTHING: f64 = 100.0;

/// Default fully-closed valve area (m^2).
pub const DEFAULT_CLOSED_AREA: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluidProperties {
    /// kg/m^3
    pub density: f64,
    /// m^2/s
    pub kinematic_viscosity: f64,
}

impl Default for FluidProperties {
    fn default() -> Self {
        Self {
            density: 998.2,
            kinematic_viscosity: 1.0e-6,
        }
    }
}

impl FluidProperties {
    pub fn validate(&self) -> Result<()> {
        if !(self.density > 0.0 && self.density.is_finite()) {
            return Err(Error::Config(format!("density must be positive, got {}", self.density)));
        }
        if !(self.kinematic_viscosity > 0.0 && self.kinematic_viscosity.is_finite()) {
            return Err(Error::Config(format!(
                "kinematic viscosity must be positive, got {}",
                self.kinematic_viscosity
            )));
        }
        Ok(())
    }
}

/// Throttling valve with an opening area affine in its control signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Valve {
    pub discharge_coefficient: f64,
    pub area_open: f64,
    pub area_closed: f64,
    pub opening: f64,
}

impl Valve {
    pub fn validate(&self) -> Result<()> {
        if !(self.discharge_coefficient > 0.0) {
            return Err(Error::Config("valve discharge coefficient must be positive".into()));
        }
        validate_areas(self.area_open, self.area_closed)
    }
}

fn validate_areas(area_open: f64, area_closed: f64) -> Result<()> {
    if !(area_closed > 0.0 && area_closed.is_finite()) {
        return Err(Error::Config(format!("fully closed area must be positive, got {area_closed}")));
    }
    if !(area_open >= area_closed && area_open.is_finite()) {
        return Err(Error::Config(format!(
            "fully open area {area_open} must be at least the closed area {area_closed}"
        )));
    }
    Ok(())
}

/// Result of mapping a control signal to an opening area.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValveArea {
    pub area: f64,
    /// Set when the signal was outside `[0, 1]` and got clamped.
    pub clamped: bool,
}

/// `a_v = a_fc + u (a_fo - a_fc)` with `u` clamped to `[0, 1]`.
pub fn valve_area(area_open: f64, area_closed: f64, signal: f64) -> ValveArea {
    let clamped = !(0.0..=1.0).contains(&signal);
    if clamped {
        log::warn!("valve signal {signal} outside [0, 1], clamped");
    }
    let u = if signal.is_nan() { 0.0 } else { signal.clamp(0.0, 1.0) };
    ValveArea {
        area: area_closed + u * (area_open - area_closed),
        clamped,
    }
}

/// Hydraulic description of one pipe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HydraulicLink {
    pub geometry: PipeGeometry,
    /// Absolute roughness (m).
    pub roughness: f64,
    /// Lumped minor-loss coefficient.
    pub minor_loss: f64,
    pub valve: Option<Valve>,
}

impl HydraulicLink {
    pub fn validate(&self) -> Result<()> {
        if !(self.roughness >= 0.0) {
            return Err(Error::Config("roughness must be non-negative".into()));
        }
        if !(self.minor_loss >= 0.0) {
            return Err(Error::Config("minor loss coefficient must be non-negative".into()));
        }
        if let Some(v) = &self.valve {
            v.validate()?;
        }
        Ok(())
    }

    pub fn relative_roughness(&self) -> f64 {
        self.roughness / self.geometry.inner_diameter
    }
}

/// `Re = |q| d / (a nu)`
pub fn reynolds(q: f64, link: &HydraulicLink, fluid: &FluidProperties) -> f64 {
    q.abs() * link.geometry.inner_diameter / (link.geometry.cross_section * fluid.kinematic_viscosity)
}

/// Haaland's explicit approximation of the turbulent Darcy friction factor.
pub fn haaland(re: f64, rel_roughness: f64) -> f64 {
    let inv_sqrt = -1.8 * ((rel_roughness / 3.7).powf(1.11) + 6.9 / re).log10();
    1.0 / (inv_sqrt * inv_sqrt)
}

/// Colebrook-White residual in the `1/sqrt(f)` form.
pub fn colebrook_residual(f: f64, re: f64, rel_roughness: f64) -> f64 {
    let x = 1.0 / f.sqrt();
    x + 2.0 * (rel_roughness / 3.7 + 2.51 * x / re).log10()
}

/// Root of the Colebrook-White equation by Newton iteration on `x = 1/sqrt(f)`,
/// started from Haaland's formula.
pub fn colebrook(re: f64, rel_roughness: f64) -> f64 {
    let mut x = 1.0 / haaland(re, rel_roughness).sqrt();
    let k = 2.0 / std::f64::consts::LN_10;
    for _ in 0..50 {
        let s = rel_roughness / 3.7 + 2.51 * x / re;
        let g = x + 2.0 * s.log10();
        let dg = 1.0 + k * (2.51 / re) / s;
        let step = g / dg;
        x -= step;
        if step.abs() <= 4.0 * f64::EPSILON * x {
            break;
        }
    }
    1.0 / (x * x)
}

/// Darcy friction factor: `64/Re` below [`LAMINAR_LIMIT`], Colebrook-White above.
///
/// Returns infinity at `Re = 0`; callers floor the flow before getting here.
pub fn friction_factor(re: f64, rel_roughness: f64) -> f64 {
    if re <= 0.0 {
        f64::INFINITY
    } else if re < LAMINAR_LIMIT {
        64.0 / re
    } else {
        colebrook(re, rel_roughness)
    }
}

/// `df/dRe` of [`friction_factor`].
pub fn friction_factor_derivative(re: f64, rel_roughness: f64) -> f64 {
    if re < LAMINAR_LIMIT {
        -64.0 / (re * re)
    } else {
        let f = colebrook(re, rel_roughness);
        let x = 1.0 / f.sqrt();
        let k = 2.0 / std::f64::consts::LN_10;
        let s = rel_roughness / 3.7 + 2.51 * x / re;
        let g_x = 1.0 + k * (2.51 / re) / s;
        let g_re = -k * (2.51 * x / (re * re)) / s;
        let dx = -g_re / g_x;
        -2.0 * dx / (x * x * x)
    }
}

/// Breakdown of the total pipe resistance `r_p` (Pa s^2/m^6).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resistance {
    pub friction: f64,
    pub minor: f64,
    pub valve: f64,
    pub friction_factor: f64,
    pub reynolds: f64,
}

impl Resistance {
    pub fn total(&self) -> f64 {
        self.friction + self.minor + self.valve
    }
}

fn resistance_parts(q: f64, link: &HydraulicLink, fluid: &FluidProperties) -> Result<Resistance> {
    let g = &link.geometry;
    let dyn_pressure = fluid.density / (2.0 * g.cross_section * g.cross_section);
    let re = reynolds(q.abs().max(Q_MIN), link, fluid);
    let f = friction_factor(re, link.relative_roughness());
    let valve = match &link.valve {
        Some(v) => {
            let area = valve_area(v.area_open, v.area_closed, v.opening).area;
            if area <= 0.0 {
                return Err(Error::Config(format!("valve area {area} must be positive")));
            }
            let k = 1.0 / (v.discharge_coefficient * area);
            fluid.density * k * k
        }
        None => 0.0,
    };
    Ok(Resistance {
        friction: dyn_pressure * f * g.length() / g.inner_diameter,
        minor: dyn_pressure * link.minor_loss,
        valve,
        friction_factor: f,
        reynolds: re,
    })
}

/// Total flow resistance
/// `r_p = rho/(2a^2) f L/d + rho/(2a^2) k_min + rho (1/(c_d a_v))^2`.
pub fn pipe_resistance(q: f64, link: &HydraulicLink, fluid: &FluidProperties) -> Result<f64> {
    resistance_parts(q, link, fluid).map(|r| r.total())
}

/// Detailed resistance terms, see [`pipe_resistance`].
pub fn pipe_resistance_parts(q: f64, link: &HydraulicLink, fluid: &FluidProperties) -> Result<Resistance> {
    resistance_parts(q, link, fluid)
}

/// Signed head loss `r_p(q) max(|q|, q_min) q` and its derivative with respect to `q`.
pub fn head_loss(q: f64, link: &HydraulicLink, fluid: &FluidProperties) -> Result<(f64, f64)> {
    let parts = resistance_parts(q, link, fluid)?;
    let r = parts.total();
    let mag = q.abs().max(Q_MIN);
    let dh = r * mag * q;
    let slope = if q.abs() < Q_MIN {
        r * Q_MIN
    } else {
        // d/dq [r(|q|) |q| q] = 2 r |q| + dr/d|q| q^2
        let g = &link.geometry;
        let k_f = fluid.density / (2.0 * g.cross_section * g.cross_section) * g.length() / g.inner_diameter;
        let dre_dq = g.inner_diameter / (g.cross_section * fluid.kinematic_viscosity);
        let df = friction_factor_derivative(parts.reynolds, link.relative_roughness());
        2.0 * r * mag + k_f * df * dre_dq * q * q
    };
    Ok((dh, slope))
}

/// Pressure-driven outflow at a node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandPoint {
    pub node: String,
    pub emitter_coefficient: f64,
    pub area_open: f64,
    pub area_closed: f64,
    pub opening: f64,
}

impl DemandPoint {
    pub fn validate(&self) -> Result<()> {
        if !(self.emitter_coefficient > 0.0) {
            return Err(Error::Config(format!(
                "emitter coefficient at node '{}' must be positive",
                self.node
            )));
        }
        validate_areas(self.area_open, self.area_closed)
    }
}

/// Demand outflow `c_e a_v(u_d) sqrt(2 h / rho)` and `dq/dh`.
///
/// Zero for `h <= 0`; on `(0, DEMAND_SMOOTHING)` a cubic Hermite blend keeps the
/// slope bounded.
pub fn demand_flow(demand: &DemandPoint, head: f64, fluid: &FluidProperties) -> (f64, f64) {
    if head <= 0.0 {
        return (0.0, 0.0);
    }
    let area = valve_area(demand.area_open, demand.area_closed, demand.opening).area;
    let k = demand.emitter_coefficient * area * (2.0 / fluid.density).sqrt();
    if head >= DEMAND_SMOOTHING {
        let s = head.sqrt();
        (k * s, 0.5 * k / s)
    } else {
        // p(0) = p'(0) = 0, value and slope matched at the band edge
        let edge = k * DEMAND_SMOOTHING.sqrt();
        let t = head / DEMAND_SMOOTHING;
        let q = edge * t * t * (2.5 - 1.5 * t);
        let dq = edge * t * (5.0 - 4.5 * t) / DEMAND_SMOOTHING;
        (q, dq)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn link(length: f64, d: f64, k_min: f64, valve: Option<Valve>) -> HydraulicLink {
        HydraulicLink {
            geometry: PipeGeometry::circular(length, d, 10).unwrap(),
            roughness: 1.5e-6,
            minor_loss: k_min,
            valve,
        }
    }

    fn fluid() -> FluidProperties {
        FluidProperties {
            density: 1000.0,
            kinematic_viscosity: 1e-6,
        }
    }

    #[test]
    fn reynolds_definition() {
        let l = HydraulicLink {
            geometry: PipeGeometry::new(1.0, 0.02, std::f64::consts::PI * 1e-4, 10).unwrap(),
            roughness: 0.0,
            minor_loss: 0.0,
            valve: None,
        };
        assert_eq!(reynolds(0.0, &l, &fluid()), 0.0);
        let q = 0.05 * std::f64::consts::PI * 1e-4;
        assert!((reynolds(q, &l, &fluid()) - 1000.0).abs() < 1e-9);
        assert!((reynolds(2.0 * q, &l, &fluid()) - 2.0 * reynolds(q, &l, &fluid())).abs() < 1e-9);
        assert_eq!(reynolds(-q, &l, &fluid()), reynolds(q, &l, &fluid()));
    }

    #[test]
    fn laminar_branch_exact() {
        assert_eq!(friction_factor(1600.0, 1e-3), 0.04);
        assert_eq!(friction_factor(0.0, 0.0), f64::INFINITY);
    }

    fn colebrook_bisection(re: f64, rr: f64) -> f64 {
        let (mut lo, mut hi) = (0.005_f64, 0.1_f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if colebrook_residual(lo, re, rr) * colebrook_residual(mid, re, rr) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn colebrook_root_against_bisection() {
        // frozen from an independent bisection run over [0.005, 0.1]
        const FROZEN: f64 = 0.018513866077471637;
        let f = friction_factor(1e5, 1e-4);
        assert!((f - FROZEN).abs() < 1e-14);
        assert!((colebrook_bisection(1e5, 1e-4) - FROZEN).abs() < 1e-14);
        assert!(colebrook_residual(f, 1e5, 1e-4).abs() <= 1e-10);
        assert!((haaland(1e5, 1e-4) - FROZEN).abs() / FROZEN < 0.02);
    }

    #[test]
    fn friction_derivative_matches_finite_difference() {
        for &(re, rr) in &[(1000.0, 0.0), (5e3, 1e-4), (2e5, 1e-3)] {
            let h = re * 1e-6;
            let fd = (friction_factor(re + h, rr) - friction_factor(re - h, rr)) / (2.0 * h);
            let an = friction_factor_derivative(re, rr);
            assert!((fd - an).abs() <= 1e-6 * an.abs(), "{re}: {fd} vs {an}");
        }
    }

    #[test]
    fn valve_area_map() {
        assert_eq!(valve_area(1e-4, 1e-9, 0.0).area, 1e-9);
        assert_eq!(valve_area(1e-4, 1e-9, 1.0).area, 1e-4);
        assert!((valve_area(1e-4, 0.0, 0.5).area - 5e-5).abs() < 1e-20);
        let c = valve_area(1e-4, 1e-9, 1.3);
        assert!(c.clamped && c.area == 1e-4);
        assert!(!valve_area(1e-4, 1e-9, 0.3).clamped);
    }

    #[test]
    fn valve_term_dominates_when_nearly_closed() {
        let v = Valve {
            discharge_coefficient: 0.6,
            area_open: 1e-4,
            area_closed: 1e-9,
            opening: 0.0,
        };
        let l = link(2.0, 0.02, 0.0, Some(v));
        let r = pipe_resistance(1e-6, &l, &fluid()).unwrap();
        let expected = 1000.0 / (0.6f64 * 1e-9).powi(2);
        assert!((r - expected).abs() / expected < 1e-9);
    }

    #[test]
    fn laminar_head_loss_is_hagen_poiseuille() {
        let l = link(5.0, 0.01, 0.0, None);
        let f = fluid();
        let q = 2e-6; // Re ~ 255
        assert!(reynolds(q, &l, &f) < LAMINAR_LIMIT);
        let (dh, slope) = head_loss(q, &l, &f).unwrap();
        let mu = f.density * f.kinematic_viscosity;
        let hp = 128.0 * mu * 5.0 * q / (std::f64::consts::PI * 0.01f64.powi(4));
        assert!((dh - hp).abs() / hp < 1e-12);
        // linear law: slope equals dh/q
        assert!((slope - hp / q).abs() / (hp / q) < 1e-12);
    }

    #[test]
    fn resistance_monotone_in_valve_opening() {
        let f = fluid();
        let mut last = f64::INFINITY;
        for k in 0..=10 {
            let v = Valve {
                discharge_coefficient: 0.7,
                area_open: 2e-4,
                area_closed: 1e-9,
                opening: k as f64 / 10.0,
            };
            let r = pipe_resistance(5e-5, &link(3.0, 0.02, 1.5, Some(v)), &f).unwrap();
            assert!(r <= last);
            last = r;
        }
    }

    #[test]
    fn head_loss_is_odd_and_slope_matches() {
        let l = link(10.0, 0.02, 2.0, None);
        let f = fluid();
        for &q in &[3e-7, 1e-5, 2e-4, 1e-3] {
            let (a, _) = head_loss(q, &l, &f).unwrap();
            let (b, _) = head_loss(-q, &l, &f).unwrap();
            assert_eq!(a, -b);
            let h = q * 1e-6;
            let fd = (head_loss(q + h, &l, &f).unwrap().0 - head_loss(q - h, &l, &f).unwrap().0) / (2.0 * h);
            let (_, an) = head_loss(q, &l, &f).unwrap();
            assert!((fd - an).abs() <= 1e-5 * an, "q={q}: {fd} vs {an}");
        }
        assert!(pipe_resistance(0.0, &l, &f).unwrap() > 0.0);
    }

    fn demand(opening: f64) -> DemandPoint {
        DemandPoint {
            node: "n".into(),
            emitter_coefficient: 0.6,
            area_open: 2e-5,
            area_closed: 1e-12,
            opening,
        }
    }

    #[test]
    fn demand_law() {
        let f = fluid();
        assert_eq!(demand_flow(&demand(1.0), 0.0, &f).0, 0.0);
        assert_eq!(demand_flow(&demand(1.0), -50.0, &f).0, 0.0);
        let (q1, _) = demand_flow(&demand(1.0), 1e4, &f);
        let (q4, _) = demand_flow(&demand(1.0), 4e4, &f);
        assert!((q4 - 2.0 * q1).abs() < 1e-15);
        assert!(demand_flow(&demand(0.0), 1e5, &f).0 < 1e-10);
    }

    #[test]
    fn demand_derivative_and_monotonicity() {
        let f = fluid();
        let d = demand(0.7);
        let mut last = 0.0;
        for k in 0..400 {
            let h = k as f64 * 1.0;
            let (q, _) = demand_flow(&d, h, &f);
            assert!(q >= last);
            last = q;
        }
        for &h in &[150.0, 1e3, 5e4, 3e5] {
            let e = h * 1e-6;
            let fd = (demand_flow(&d, h + e, &f).0 - demand_flow(&d, h - e, &f).0) / (2.0 * e);
            let an = demand_flow(&d, h, &f).1;
            assert!((fd - an).abs() <= 1e-6 * an);
        }
        // continuity at the smoothing edge
        let below = demand_flow(&d, DEMAND_SMOOTHING - 1e-9, &f);
        let above = demand_flow(&d, DEMAND_SMOOTHING + 1e-9, &f);
        assert!((below.0 - above.0).abs() < 1e-12);
        assert!((below.1 - above.1).abs() < 1e-9 * above.1);
    }
}
