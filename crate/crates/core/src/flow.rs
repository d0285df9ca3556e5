//! Semi-implicit integration of `0 ∈ ∂φ₁(x) + ∂φ₂(x) + DF(x)(ẋ)`.
//!
//! Each step solves `F(x_{k+1}) = F(x_k) − h·v_k` with `v_k` a selected
//! subgradient at `x_k`, so that `F(x_k) − F(x₀) + Σ_{j<k} h_j v_j` telescopes
//! to the accumulated inner-solver error. Steps are halved until the discrete
//! energy inequality
//!
//! ```text
//! ρ_h ‖x_{k+1} − x_k‖² / h ≤ φ(x_k) − φ(x_{k+1}) + slack
//! ```
//!
//! holds, with `ρ_h = ρ(1 − h/2)` for the nominal step `h`. The explicit
//! subgradient term loses `O(h)` of the continuous modulus; on
//! `φ = ½xᵀQx, F = ∇φ` the inequality is tight exactly at `ρ(1 − h/2)`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::operator::{local_inverse, OperatorSpec};
use crate::problem::{
    check_plr, eval_phi, subgrad_select, ObjectiveSplit, Region, SelectionRule,
};
use crate::smoothing::{default_lambda0, mollify_phi2, moreau_grad, moreau_value, EnvelopeParams, MollifierParams};
use crate::{Error, Result, Vector};

pub const DEFAULT_STAGES: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FlowMode {
    Direct,
    /// Integrate the smoothed system for each `λ` of a decreasing schedule;
    /// the returned trajectory is the run at the smallest `λ`. An empty
    /// schedule means [`DEFAULT_STAGES`] geometric stages below the
    /// problem's `λ₀`.
    Homotopy { lambda_schedule: Vec<f64> },
}

impl FlowMode {
    /// Geometric schedule `λ_j = 2^{-j} λ₀` for `j = 1..=stages`.
    pub fn geometric(lambda0: f64, stages: usize) -> Self {
        FlowMode::Homotopy {
            lambda_schedule: (1..=stages).map(|j| lambda0 * 0.5f64.powi(j as i32)).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub step_h: f64,
    pub t_end: f64,
    pub selection: SelectionRule,
    pub mode: FlowMode,
    pub inverse_tol: f64,
    pub energy_slack: f64,
    pub max_halvings: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            step_h: 1e-3,
            t_end: 5.0,
            selection: SelectionRule::default(),
            mode: FlowMode::Direct,
            inverse_tol: 1e-12,
            energy_slack: 1e-12,
            max_halvings: 40,
        }
    }
}

impl FlowConfig {
    pub fn with_step(mut self, step_h: f64, t_end: f64) -> Self {
        self.step_h = step_h;
        self.t_end = t_end;
        self
    }

    pub fn with_selection(mut self, selection: SelectionRule) -> Self {
        self.selection = selection;
        self
    }

    /// Checks the configuration against the operator modulus `rho`.
    pub fn validate(&self, rho: f64) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigError(m));
        if !(self.step_h > 0.0 && self.step_h.is_finite()) {
            return bad(format!("step_h must be positive, got {}", self.step_h));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return bad(format!("t_end must be positive, got {}", self.t_end));
        }
        if self.step_h > self.t_end {
            return bad("step_h must not exceed t_end".into());
        }
        if !(self.inverse_tol > 0.0) {
            return bad("inverse_tol must be positive".into());
        }
        if self.inverse_tol >= self.step_h * rho {
            return bad(format!(
                "inverse_tol {} must stay below step_h·rho = {}",
                self.inverse_tol,
                self.step_h * rho
            ));
        }
        if !(self.energy_slack >= 0.0) {
            return bad("energy_slack must be nonnegative".into());
        }
        if !(self.selection.tie_tolerance >= 0.0) {
            return bad("tie_tolerance must be nonnegative".into());
        }
        if let FlowMode::Homotopy { lambda_schedule } = &self.mode {
            if lambda_schedule.iter().any(|l| !(*l > 0.0)) || lambda_schedule.windows(2).any(|w| w[1] >= w[0]) {
                return bad("lambda_schedule must be a decreasing sequence of positive reals".into());
            }
        }
        Ok(())
    }

    /// Sets one field from its textual `key=value` form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = |v: &str| -> Result<f64> {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::ConfigError(format!("`{key}` expects a number, got `{v}`")))
        };
        match key.trim() {
            "step_h" | "h" => self.step_h = num(value)?,
            "t_end" => self.t_end = num(value)?,
            "selection" => self.selection.kind = value.parse()?,
            "tie_tolerance" => self.selection.tie_tolerance = num(value)?,
            "inverse_tol" => self.inverse_tol = num(value)?,
            "energy_slack" => self.energy_slack = num(value)?,
            "max_halvings" => {
                self.max_halvings = value
                    .trim()
                    .parse()
                    .map_err(|_| Error::ConfigError(format!("`max_halvings` expects a count, got `{value}`")))?
            }
            "mode" => {
                self.mode = match value.trim() {
                    "direct" => FlowMode::Direct,
                    "homotopy" => match &self.mode {
                        FlowMode::Homotopy { .. } => self.mode.clone(),
                        FlowMode::Direct => FlowMode::Homotopy {
                            lambda_schedule: Vec::new(),
                        },
                    },
                    other => return Err(Error::ConfigError(format!("unknown mode `{other}`"))),
                }
            }
            "lambda_schedule" => {
                let schedule = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(num)
                    .collect::<Result<Vec<_>>>()?;
                self.mode = FlowMode::Homotopy {
                    lambda_schedule: schedule,
                };
            }
            other => return Err(Error::ConfigError(format!("unknown configuration key `{other}`"))),
        }
        Ok(())
    }

    /// Applies a flat `key = value` document (`#` starts a comment).
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::ConfigError(format!("line {}: expected key = value", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    /// The flat `key = value` form read by [`FlowConfig::apply_text`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("step_h = {}\n", self.step_h));
        s.push_str(&format!("t_end = {}\n", self.t_end));
        s.push_str(&format!("selection = {}\n", self.selection.kind));
        s.push_str(&format!("tie_tolerance = {}\n", self.selection.tie_tolerance));
        match &self.mode {
            FlowMode::Direct => s.push_str("mode = direct\n"),
            FlowMode::Homotopy { lambda_schedule } => {
                s.push_str("mode = homotopy\n");
                let l: Vec<String> = lambda_schedule.iter().map(|l| l.to_string()).collect();
                s.push_str(&format!("lambda_schedule = {}\n", l.join(",")));
            }
        }
        s.push_str(&format!("inverse_tol = {}\n", self.inverse_tol));
        s.push_str(&format!("energy_slack = {}\n", self.energy_slack));
        s.push_str(&format!("max_halvings = {}\n", self.max_halvings));
        s
    }
}

/// Recorded run. Index `k` of every per-state sequence refers to `x_k`;
/// `selections[k]` is the subgradient used for the step leaving `x_k` (for the
/// final state, the selection there).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
    pub selections: Vec<Vector>,
    pub phi_values: Vec<f64>,
    pub energy: Vec<f64>,
    pub integral_residuals: Vec<f64>,
    /// Kink-crossing flags: the selection jumped when leaving `x_k`.
    pub events: Vec<bool>,
    /// Modulus used in the discrete energy, `ρ(1 − h/2)`.
    pub energy_rho: f64,
    pub halvings: usize,
    pub inverse_iterations: usize,
    /// `(λ, x(t_end))` per homotopy stage; empty for direct runs.
    pub stage_endpoints: Vec<(f64, Vector)>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last_state(&self) -> &Vector {
        self.states.last().expect("trajectory is never empty")
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, |x| x.len())
    }

    pub fn event_indices(&self) -> Vec<usize> {
        self.events
            .iter()
            .enumerate()
            .filter_map(|(k, e)| e.then_some(k))
            .collect()
    }

    /// `Σ ‖x_{k+1} − x_k‖` along the run.
    pub fn path_length(&self) -> f64 {
        self.states.windows(2).map(|w| (&w[1] - &w[0]).norm()).sum()
    }

    /// Writes `t,x_1..x_d,phi,energy,residual,selection_norm,event_flag`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let d = self.dim();
        let mut header = vec!["t".to_string()];
        header.extend((1..=d).map(|i| format!("x_{i}")));
        header.extend(
            ["phi", "energy", "residual", "selection_norm", "event_flag"]
                .iter()
                .map(|s| s.to_string()),
        );
        w.write_record(&header)?;
        for k in 0..self.len() {
            let mut row = Vec::with_capacity(d + 6);
            row.push(self.times[k].to_string());
            row.extend(self.states[k].iter().map(|v| v.to_string()));
            row.push(self.phi_values[k].to_string());
            row.push(self.energy[k].to_string());
            row.push(self.integral_residuals[k].to_string());
            row.push(self.selections[k].norm().to_string());
            row.push(u8::from(self.events[k]).to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Columns read back from a trajectory CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryTable {
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
    pub phi_values: Vec<f64>,
}

pub fn read_trajectory_csv<R: Read>(input: R) -> Result<TrajectoryTable> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let d = headers.iter().filter(|h| h.starts_with("x_")).count();
    let phi_col = headers
        .iter()
        .position(|h| h == "phi")
        .ok_or_else(|| Error::ConfigError("trajectory CSV has no `phi` column".into()))?;
    let parse = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::ConfigError(format!("bad number `{s}` in trajectory CSV")))
    };
    let mut table = TrajectoryTable {
        times: Vec::new(),
        states: Vec::new(),
        phi_values: Vec::new(),
    };
    for rec in r.records() {
        let rec = rec?;
        table.times.push(parse(&rec[0])?);
        let x = (1..=d).map(|i| parse(&rec[i])).collect::<Result<Vec<_>>>()?;
        table.states.push(Vector::from_vec(x));
        table.phi_values.push(parse(&rec[phi_col])?);
    }
    Ok(table)
}

/// One semi-implicit step with the configured selection rule.
pub fn step(op: &OperatorSpec, obj: &ObjectiveSplit, x_k: &Vector, h: f64, cfg: &FlowConfig) -> Result<Vector> {
    let v = subgrad_select(obj, x_k, &cfg.selection)?;
    let y = op.apply(x_k) - &v * h;
    let x_next = local_inverse(op, &y, x_k, cfg.inverse_tol)?.point;
    if !obj.domain_region.contains(&x_next) {
        return Err(Error::RegionExit { time: h });
    }
    Ok(x_next)
}

struct Selection {
    v: Vector,
    multivalued: bool,
}

/// Integrates from `x0` over `[0, t_end]`.
pub fn integrate(op: &OperatorSpec, obj: &ObjectiveSplit, x0: &Vector, cfg: &FlowConfig) -> Result<Trajectory> {
    cfg.validate(op.rho)?;
    if !obj.domain_region.contains(x0) {
        return Err(Error::RegionExit { time: 0.0 });
    }
    if !eval_phi(obj, x0).is_finite() {
        return Err(Error::InvalidParameter("x0 must lie in dom φ".into()));
    }
    match &cfg.mode {
        FlowMode::Direct => {
            let rule = cfg.selection.clone();
            run(
                op,
                obj,
                x0,
                cfg,
                |x| {
                    let set = obj.subdifferential(x, rule.tie_tolerance)?;
                    Ok(Selection {
                        v: subgrad_select(obj, x, &rule)?,
                        multivalued: set.is_multivalued(),
                    })
                },
                |x| eval_phi(obj, x),
            )
        }
        FlowMode::Homotopy { lambda_schedule } => integrate_homotopy(op, obj, x0, cfg, lambda_schedule),
    }
}

/// Localization used by the homotopy mode: a ball around `x0` covering the region.
pub fn homotopy_localization(obj: &ObjectiveSplit, x0: &Vector) -> (Vector, f64) {
    let radius = match &obj.domain_region {
        Region::Box { lower, upper } => x0
            .iter()
            .zip(lower.iter().zip(upper))
            .map(|(x, (lo, hi))| (x - lo).abs().max((hi - x).abs()).powi(2))
            .sum::<f64>()
            .sqrt(),
        Region::Ball { center, radius } => (x0 - Vector::from_column_slice(center)).norm() + radius,
    };
    (x0.clone(), radius)
}

/// `λ₀` for the homotopy localization, from a sampled plr constant.
pub fn homotopy_lambda0(obj: &ObjectiveSplit, x0: &Vector) -> Result<f64> {
    let (center, radius) = homotopy_localization(obj, x0);
    let c = check_plr(obj, &center, radius, 1000)?.c_estimate;
    Ok(default_lambda0(c, 2.0 * radius))
}

fn integrate_homotopy(
    op: &OperatorSpec,
    obj: &ObjectiveSplit,
    x0: &Vector,
    cfg: &FlowConfig,
    schedule: &[f64],
) -> Result<Trajectory> {
    let (center, radius) = homotopy_localization(obj, x0);
    let lambda0 = homotopy_lambda0(obj, x0)?;
    let auto;
    let schedule = if schedule.is_empty() {
        auto = (1..=DEFAULT_STAGES).map(|j| lambda0 * 0.5f64.powi(j as i32)).collect::<Vec<_>>();
        &auto[..]
    } else {
        schedule
    };
    if schedule[0] >= lambda0 {
        return Err(Error::ConfigError(format!(
            "homotopy schedule starts at {} but must stay below λ₀ = {lambda0}",
            schedule[0]
        )));
    }
    let mut endpoints = Vec::with_capacity(schedule.len());
    let mut last = None;
    for &lambda in schedule {
        let env = EnvelopeParams::new(lambda, lambda0, center.clone(), radius)?;
        let moll = MollifierParams::new(lambda, obj.dim)?;
        let smoothed = |x: &Vector| -> Result<f64> {
            Ok(moreau_value(obj, &env, x)? + mollify_phi2(obj, &moll, x, false)?.0)
        };
        let traj = run(
            op,
            obj,
            x0,
            cfg,
            |x| {
                let g1 = moreau_grad(obj, &env, x)?;
                let (_, g2) = mollify_phi2(obj, &moll, x, true)?;
                Ok(Selection {
                    v: g1 + g2.expect("gradient requested"),
                    multivalued: false,
                })
            },
            |x| smoothed(x).unwrap_or(f64::INFINITY),
        )?;
        endpoints.push((lambda, traj.last_state().clone()));
        last = Some(traj);
    }
    let mut traj = last.expect("schedule is nonempty");
    traj.stage_endpoints = endpoints;
    Ok(traj)
}

fn run(
    op: &OperatorSpec,
    obj: &ObjectiveSplit,
    x0: &Vector,
    cfg: &FlowConfig,
    mut select: impl FnMut(&Vector) -> Result<Selection>,
    objective: impl Fn(&Vector) -> f64,
) -> Result<Trajectory> {
    let rho_h = (op.rho * (1.0 - 0.5 * cfg.step_h)).max(0.0);
    let fx0 = op.apply(x0);
    let phi0 = eval_phi(obj, x0);
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![x0.clone()],
        selections: Vec::new(),
        phi_values: vec![phi0],
        energy: vec![phi0],
        integral_residuals: vec![0.0],
        events: Vec::new(),
        energy_rho: rho_h,
        halvings: 0,
        inverse_iterations: 0,
        stage_endpoints: Vec::new(),
    };

    let mut x = x0.clone();
    let mut t = 0.0;
    let mut drift = Vector::zeros(x0.len());
    let mut dissipated = 0.0;
    let mut prev: Option<Selection> = None;
    let end_tol = 1e-12 * cfg.t_end.max(1.0);

    while cfg.t_end - t > end_tol {
        let sel = select(&x)?;
        let event = prev.as_ref().is_some_and(|p| {
            let scale = p.v.norm().max(sel.v.norm());
            p.multivalued != sel.multivalued || (&sel.v - &p.v).norm() > 0.5 * scale
        });
        let nominal = if event { 0.5 * cfg.step_h } else { cfg.step_h };
        let mut h = nominal.min(cfg.t_end - t);
        let f_cur = objective(&x);
        let fx = op.apply(&x);

        let mut accepted = None;
        let mut worst_margin = f64::NEG_INFINITY;
        for halving in 0..=cfg.max_halvings {
            let y = &fx - &sel.v * h;
            let sol = local_inverse(op, &y, &x, cfg.inverse_tol)?;
            traj.inverse_iterations += sol.iterations;
            let x_new = sol.point;
            if !obj.domain_region.contains(&x_new) {
                return Err(Error::RegionExit { time: t + h });
            }
            let f_new = objective(&x_new);
            let dx2 = (&x_new - &x).norm_squared();
            let margin = f_cur - f_new - rho_h * dx2 / h;
            if margin >= -cfg.energy_slack {
                traj.halvings += halving;
                accepted = Some((x_new, dx2));
                break;
            }
            worst_margin = margin;
            h *= 0.5;
        }
        let Some((x_new, dx2)) = accepted else {
            return Err(Error::EnergyViolation {
                time: t,
                halvings: cfg.max_halvings,
                margin: worst_margin,
            });
        };

        drift.axpy(h, &sel.v, 1.0);
        dissipated += dx2 / h;
        t += h;
        let phi = eval_phi(obj, &x_new);
        let residual = (op.apply(&x_new) - &fx0 + &drift).norm();

        traj.selections.push(sel.v.clone());
        traj.events.push(event);
        traj.times.push(t);
        traj.phi_values.push(phi);
        traj.energy.push(rho_h * dissipated + phi);
        traj.integral_residuals.push(residual);
        traj.states.push(x_new.clone());
        x = x_new;
        prev = Some(sel);
    }
    let last = select(&x)?;
    traj.selections.push(last.v);
    traj.events.push(false);
    Ok(traj)
}

/// `max_k ‖F(x_k) − F(x₀) + Σ_{j<k} h_j v_j‖`, recomputed from the states.
pub fn integral_residual(op: &OperatorSpec, traj: &Trajectory) -> f64 {
    if traj.is_empty() {
        return 0.0;
    }
    let fx0 = op.apply(&traj.states[0]);
    let mut drift = Vector::zeros(fx0.len());
    let mut worst: f64 = 0.0;
    for k in 1..traj.len() {
        let h = traj.times[k] - traj.times[k - 1];
        drift.axpy(h, &traj.selections[k - 1], 1.0);
        worst = worst.max((op.apply(&traj.states[k]) - &fx0 + &drift).norm());
    }
    worst
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyReport {
    pub rho: f64,
    pub tolerance: f64,
    /// `min_{s<t} [φ(x_s) − φ(x_t) − ρ Σ_{s≤j<t} ‖Δx_j‖²/h_j]`; `+∞` for a single state.
    pub worst_margin: f64,
    pub violating_pair: Option<(usize, usize)>,
}

impl EnergyReport {
    pub fn passed(&self) -> bool {
        self.worst_margin >= -self.tolerance
    }
}

/// Checks the discrete energy inequality over every index pair `s < t`.
pub fn energetic_check(traj: &Trajectory, rho: f64, tolerance: f64) -> EnergyReport {
    let mut worst = f64::INFINITY;
    let mut pair = None;
    let mut worst_pair = (0, 0);
    let mut dissipated = 0.0;
    // Running minimum of E_s = ρ·C_s + φ_s over s < t.
    let mut best_s = (traj.phi_values.first().copied().unwrap_or(0.0), 0usize);
    for k in 1..traj.len() {
        let h = traj.times[k] - traj.times[k - 1];
        dissipated += (&traj.states[k] - &traj.states[k - 1]).norm_squared() / h;
        let e_t = rho * dissipated + traj.phi_values[k];
        let margin = best_s.0 - e_t;
        if margin < worst {
            worst = margin;
            worst_pair = (best_s.1, k);
        }
        if e_t < best_s.0 {
            best_s = (e_t, k);
        }
    }
    if worst < -tolerance {
        pair = Some(worst_pair);
    }
    EnergyReport {
        rho,
        tolerance,
        worst_margin: worst,
        violating_pair: pair,
    }
}
