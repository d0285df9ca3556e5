//! Benchmark problems with analytic references, and the structured-text
//! registry format used to extend them.
//!
//! Every problem assumes linear lower growth of `φ`; user-supplied registry
//! entries are not checked for it.

use std::collections::HashSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::analysis::KLParams;
use crate::flow::FlowConfig;
use crate::operator::OperatorSpec;
use crate::problem::oracles::{l1_subdifferential, min_abs_pair, min_abs_pair_subdifferential, soft_threshold};
use crate::problem::{ObjectiveSplit, Region, SelectionRule, Subdifferential};
use crate::{Error, Result, Vector};

/// Regime a problem's default run must be classified as.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExpectedRegime {
    /// `T*` within `steps · h`.
    FiniteTime { t_star: f64, steps: f64 },
    /// `alpha` within `rel_tolerance` when given; any rate otherwise.
    Exponential { alpha: Option<f64>, rel_tolerance: f64 },
    /// Trajectory and optional value-gap exponents within `rel_tolerance`.
    Polynomial {
        exponent: f64,
        value_exponent: Option<f64>,
        rel_tolerance: f64,
    },
}

impl ExpectedRegime {
    pub fn name(&self) -> &'static str {
        match self {
            ExpectedRegime::FiniteTime { .. } => "finite_time",
            ExpectedRegime::Exponential { .. } => "exponential",
            ExpectedRegime::Polynomial { .. } => "polynomial",
        }
    }
}

/// Closed-form trajectories of the continuous flow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClosedForm {
    /// `x(t) = e^{−t} x₀`.
    ExpDecay,
    /// `x(t) = sign(x₀)·max(|x₀| − t, 0)`, per coordinate.
    UnitSpeed,
    /// `x(t) = x₀(1 + 8x₀²t)^{−1/2}`.
    Quartic,
    /// `x(t) = s·min{t, 1}`.
    Branch { sign: f64 },
    /// `x(t) = clamp(c + (x₀ − c)e^{−t}, lower, upper)`.
    ClampedRelaxation { center: Vec<f64>, lower: Vec<f64>, upper: Vec<f64> },
}

impl ClosedForm {
    pub fn eval(&self, t: f64, x0: &Vector) -> Vector {
        match self {
            ClosedForm::ExpDecay => x0 * (-t).exp(),
            ClosedForm::UnitSpeed => x0.map(|v| v.signum() * (v.abs() - t).max(0.0)),
            ClosedForm::Quartic => x0.map(|v| v / (1.0 + 8.0 * v * v * t).sqrt()),
            ClosedForm::Branch { sign } => Vector::from_element(x0.len(), sign * t.min(1.0)),
            ClosedForm::ClampedRelaxation { center, lower, upper } => Vector::from_fn(x0.len(), |i, _| {
                (center[i] + (x0[i] - center[i]) * (-t).exp()).clamp(lower[i], upper[i])
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub minimizer: Vector,
    /// Further minimizers reachable under other selections.
    #[serde(default)]
    pub alternate_minimizers: Vec<Vector>,
    pub trajectory: Option<ClosedForm>,
    pub regime: ExpectedRegime,
    pub kl: Option<KLParams>,
    /// Radius on which strong metric subregularity is certified.
    pub subregularity_radius: Option<f64>,
}

impl Reference {
    /// The reference minimizer closest to `x`.
    pub fn nearest_minimizer(&self, x: &Vector) -> &Vector {
        std::iter::once(&self.minimizer)
            .chain(&self.alternate_minimizers)
            .min_by(|a, b| (*a - x).norm().total_cmp(&(*b - x).norm()))
            .expect("at least one minimizer")
    }
}

#[derive(Clone, Debug)]
pub struct ZooProblem {
    pub name: String,
    pub summary: String,
    pub objective: ObjectiveSplit,
    pub operator: OperatorSpec,
    pub x0_default: Vector,
    pub default_config: FlowConfig,
    pub reference: Option<Reference>,
}

impl ZooProblem {
    pub fn dim(&self) -> usize {
        self.objective.dim
    }
}

/// Catalog line for `zoo list`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CatalogEntry {
    pub name: String,
    pub dim: usize,
    pub operator: String,
    pub regime: Option<String>,
    pub summary: String,
}

pub fn zoo_list(problems: &[ZooProblem]) -> Vec<CatalogEntry> {
    problems
        .iter()
        .map(|p| CatalogEntry {
            name: p.name.clone(),
            dim: p.dim(),
            operator: p.operator.name.clone(),
            regime: p.reference.as_ref().map(|r| r.regime.name().to_string()),
            summary: p.summary.clone(),
        })
        .collect()
}

pub fn find<'a>(problems: &'a [ZooProblem], name: &str) -> Result<&'a ZooProblem> {
    problems
        .iter()
        .find(|p| p.name == name)
        .ok_or_else(|| Error::UnknownProblem(name.to_string()))
}

/// Building blocks for `φ₁`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case")]
pub enum Phi1Spec {
    Zero,
    /// `½ Σ qᵢ xᵢ²` with `qᵢ > 0`.
    QuadraticDiag { diag: Vec<f64> },
    /// `w‖x‖₁`.
    L1 {
        #[serde(default = "one")]
        weight: f64,
    },
    /// `Σ xᵢ⁴`.
    Quartic,
    /// `½‖x − c‖² + δ_{[lower, upper]}(x)`.
    BoxQuadratic { center: Vec<f64>, lower: Vec<f64>, upper: Vec<f64> },
    /// `½‖x‖² + a Σ (1 − cos 2xᵢ)`, weakly convex with modulus `max(0, 4a − 1)`.
    Ripple { amplitude: f64 },
}

/// Building blocks for `φ₂`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case")]
pub enum Phi2Spec {
    Zero,
    /// `w Σ Huber_δ(xᵢ)`.
    Huber { delta: f64, weight: f64 },
    /// `min{|x − 1|, |x + 1|}` (1-D).
    MinAbsPair,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case")]
pub enum OperatorKind {
    Identity,
    /// `F(x) = A x`, rows of `A`.
    Linear { matrix: Vec<Vec<f64>> },
    /// `F(x)ᵢ = xᵢ + a sin xᵢ`.
    SinMonotone { amplitude: f64 },
}

fn one() -> f64 {
    1.0
}

fn check_len(what: &str, v: &[f64], dim: usize) -> Result<()> {
    if v.len() != dim {
        return Err(Error::InvalidParameter(format!("{what} has length {} but dimension is {dim}", v.len())));
    }
    Ok(())
}

impl Phi1Spec {
    pub fn build(&self, obj: ObjectiveSplit) -> Result<ObjectiveSplit> {
        let dim = obj.dim;
        Ok(match self.clone() {
            Phi1Spec::Zero => obj,
            Phi1Spec::QuadraticDiag { diag } => {
                check_len("diag", &diag, dim)?;
                if diag.iter().any(|q| *q <= 0.0) {
                    return Err(Error::InvalidParameter("quadratic weights must be positive".into()));
                }
                let q = Vector::from_vec(diag);
                let (qv, qs, qp) = (q.clone(), q.clone(), q);
                obj.with_phi1(
                    move |x| 0.5 * x.component_mul(x).dot(&qv),
                    move |x, _| Subdifferential::singleton(x.component_mul(&qs)),
                )
                .with_phi1_prox(move |l, x| x.zip_map(&qp, |xi, qi| xi / (1.0 + l * qi)))
            }
            Phi1Spec::L1 { weight } => {
                if weight <= 0.0 {
                    return Err(Error::InvalidParameter("l1 weight must be positive".into()));
                }
                obj.with_phi1(
                    move |x| weight * x.abs().sum(),
                    move |x, tie| {
                        let s = l1_subdifferential(x, tie);
                        Subdifferential::from_vertices(s.vertices.into_iter().map(|v| v * weight).collect())
                    },
                )
                .with_phi1_prox(move |l, x| soft_threshold(l * weight, x))
            }
            Phi1Spec::Quartic => obj.with_phi1(
                |x| x.iter().map(|v| v.powi(4)).sum(),
                |x, _| Subdifferential::singleton(x.map(|v| 4.0 * v.powi(3))),
            ),
            Phi1Spec::BoxQuadratic { center, lower, upper } => {
                check_len("center", &center, dim)?;
                check_len("lower", &lower, dim)?;
                check_len("upper", &upper, dim)?;
                if lower.iter().zip(&upper).any(|(l, u)| l >= u) {
                    return Err(Error::InvalidParameter("box needs lower < upper".into()));
                }
                let c = Vector::from_vec(center);
                let (lo, hi) = (Vector::from_vec(lower), Vector::from_vec(upper));
                let (cv, lov, hiv) = (c.clone(), lo.clone(), hi.clone());
                let (cs, los, his) = (c.clone(), lo.clone(), hi.clone());
                obj.with_phi1(
                    move |x| {
                        let inside = (0..x.len()).all(|i| x[i] >= lov[i] && x[i] <= hiv[i]);
                        if inside {
                            0.5 * (x - &cv).norm_squared()
                        } else {
                            f64::INFINITY
                        }
                    },
                    move |x, tie| {
                        let d = x.len();
                        if (0..d).any(|i| x[i] < los[i] - tie || x[i] > his[i] + tie) {
                            return Subdifferential::empty();
                        }
                        let mut rays = Vec::new();
                        for i in 0..d {
                            let axis = |s: f64| Vector::from_fn(d, |k, _| if k == i { s } else { 0.0 });
                            if x[i] <= los[i] + tie {
                                rays.push(axis(-1.0));
                            }
                            if x[i] >= his[i] - tie {
                                rays.push(axis(1.0));
                            }
                        }
                        Subdifferential::singleton(x - &cs).with_rays(rays)
                    },
                )
                .with_phi1_prox(move |l, x| {
                    let y = (x + &c * l) / (1.0 + l);
                    Vector::from_fn(y.len(), |i, _| y[i].clamp(lo[i], hi[i]))
                })
            }
            Phi1Spec::Ripple { amplitude } => obj.with_phi1(
                move |x| 0.5 * x.norm_squared() + amplitude * x.iter().map(|v| 1.0 - (2.0 * v).cos()).sum::<f64>(),
                move |x, _| Subdifferential::singleton(x.map(|v| v + 2.0 * amplitude * (2.0 * v).sin())),
            ),
        })
    }
}

impl Phi2Spec {
    pub fn build(&self, obj: ObjectiveSplit) -> Result<ObjectiveSplit> {
        let dim = obj.dim;
        Ok(match *self {
            Phi2Spec::Zero => obj,
            Phi2Spec::Huber { delta, weight } => {
                if delta <= 0.0 || weight <= 0.0 {
                    return Err(Error::InvalidParameter("huber needs δ > 0 and weight > 0".into()));
                }
                let huber = move |t: f64| {
                    if t.abs() <= delta {
                        t * t / (2.0 * delta)
                    } else {
                        t.abs() - 0.5 * delta
                    }
                };
                obj.with_phi2(
                    move |x| weight * x.iter().map(|t| huber(*t)).sum::<f64>(),
                    move |x, _| Subdifferential::singleton(x.map(|t| weight * (t / delta).clamp(-1.0, 1.0))),
                    move |_, _| weight * (dim as f64).sqrt(),
                )
            }
            Phi2Spec::MinAbsPair => {
                if dim != 1 {
                    return Err(Error::InvalidParameter("min_abs_pair is one-dimensional".into()));
                }
                obj.with_phi2(min_abs_pair, min_abs_pair_subdifferential, |_, _| 1.0)
            }
        })
    }
}

impl OperatorKind {
    pub fn build(&self, dim: usize) -> Result<OperatorSpec> {
        match self {
            OperatorKind::Identity => Ok(OperatorSpec::identity(dim)),
            OperatorKind::Linear { matrix } => {
                if matrix.len() != dim || matrix.iter().any(|r| r.len() != dim) {
                    return Err(Error::InvalidParameter(format!("operator matrix must be {dim}×{dim}")));
                }
                let a = DMatrix::from_fn(dim, dim, |i, j| matrix[i][j]);
                OperatorSpec::linear("linear", a)
            }
            OperatorKind::SinMonotone { amplitude } => OperatorSpec::sin_monotone(dim, *amplitude),
        }
    }
}

fn assemble(
    region: Region,
    phi1: &Phi1Spec,
    phi2: &Phi2Spec,
    operator: &OperatorKind,
) -> Result<(ObjectiveSplit, OperatorSpec)> {
    let dim = region.dim();
    let obj = phi2.build(phi1.build(ObjectiveSplit::new(region))?)?;
    Ok((obj, operator.build(dim)?))
}

/// The default zoo.
pub fn builtin() -> Vec<ZooProblem> {
    let build = |name: &str,
                 summary: &str,
                 region: Region,
                 phi1: Phi1Spec,
                 phi2: Phi2Spec,
                 operator: OperatorKind,
                 x0: Vector,
                 default_config: FlowConfig,
                 reference: Reference| {
        let (objective, operator) =
            assemble(region, &phi1, &phi2, &operator).expect("builtin problems are well formed");
        ZooProblem {
            name: name.to_string(),
            summary: summary.to_string(),
            objective,
            operator,
            x0_default: x0,
            default_config,
            reference: Some(reference),
        }
    };
    let cfg = |h: f64, t_end: f64| FlowConfig::default().with_step(h, t_end);
    let v = |xs: &[f64]| Vector::from_column_slice(xs);
    let box_center = vec![2.0, -0.5];
    let (box_lo, box_hi) = (vec![0.0, 0.0], vec![1.0, 1.0]);

    vec![
        build(
            "quadratic_newton",
            "½xᵀQx with Q = diag(1, 4) and F = ∇φ: x(t) = e^{−t}x₀",
            Region::cube(2, 10.0),
            Phi1Spec::QuadraticDiag { diag: vec![1.0, 4.0] },
            Phi2Spec::Zero,
            OperatorKind::Linear {
                matrix: vec![vec![1.0, 0.0], vec![0.0, 4.0]],
            },
            v(&[1.0, 1.0]),
            cfg(1e-3, 20.0),
            Reference {
                minimizer: Vector::zeros(2),
                alternate_minimizers: Vec::new(),
                trajectory: Some(ClosedForm::ExpDecay),
                regime: ExpectedRegime::Exponential {
                    alpha: Some(1.0),
                    rel_tolerance: 0.05,
                },
                kl: Some(KLParams { theta: 0.5, m: 2.0, eta: 0.5 }),
                subregularity_radius: Some(1.0),
            },
        ),
        build(
            "quadratic_precond",
            "½‖x‖² with the nonsymmetric operator F(x) = [[2,1],[0,2]]x",
            Region::cube(2, 10.0),
            Phi1Spec::QuadraticDiag { diag: vec![1.0, 1.0] },
            Phi2Spec::Zero,
            OperatorKind::Linear {
                matrix: vec![vec![2.0, 1.0], vec![0.0, 2.0]],
            },
            v(&[1.0, 1.0]),
            cfg(1e-3, 40.0),
            Reference {
                minimizer: Vector::zeros(2),
                alternate_minimizers: Vec::new(),
                trajectory: None,
                regime: ExpectedRegime::Exponential {
                    alpha: None,
                    rel_tolerance: 0.0,
                },
                kl: Some(KLParams {
                    theta: 0.5,
                    m: 2f64.sqrt(),
                    eta: 0.5,
                }),
                subregularity_radius: Some(1.0),
            },
        ),
        build(
            "abs_value",
            "|x| with F = id: reaches 0 at t = |x₀|",
            Region::cube(1, 5.0),
            Phi1Spec::L1 { weight: 1.0 },
            Phi2Spec::Zero,
            OperatorKind::Identity,
            v(&[1.0]),
            cfg(1e-3, 2.0),
            Reference {
                minimizer: Vector::zeros(1),
                alternate_minimizers: Vec::new(),
                trajectory: Some(ClosedForm::UnitSpeed),
                regime: ExpectedRegime::FiniteTime {
                    t_star: 1.0,
                    steps: 2.0,
                },
                kl: Some(KLParams { theta: 0.0, m: 1.0, eta: 0.5 }),
                subregularity_radius: Some(0.5),
            },
        ),
        build(
            "quartic",
            "x⁴ with F = id: x(t) = x₀(1 + 8x₀²t)^{−1/2}",
            Region::cube(1, 5.0),
            Phi1Spec::Quartic,
            Phi2Spec::Zero,
            OperatorKind::Identity,
            v(&[1.0]),
            cfg(0.05, 1e4),
            Reference {
                minimizer: Vector::zeros(1),
                alternate_minimizers: Vec::new(),
                trajectory: Some(ClosedForm::Quartic),
                regime: ExpectedRegime::Polynomial {
                    exponent: -0.5,
                    value_exponent: Some(-2.0),
                    rel_tolerance: 0.1,
                },
                kl: Some(KLParams {
                    theta: 0.75,
                    m: 1.0,
                    eta: 0.5,
                }),
                subregularity_radius: None,
            },
        ),
        build(
            "nonunique_min",
            "min{|x−1|, |x+1|} from x₀ = 0: both ±min{t, 1} solve the inclusion",
            Region::cube(1, 3.0),
            Phi1Spec::Zero,
            Phi2Spec::MinAbsPair,
            OperatorKind::Identity,
            v(&[0.0]),
            cfg(1e-3, 2.0).with_selection(SelectionRule::sign_bias(1)),
            Reference {
                minimizer: v(&[1.0]),
                alternate_minimizers: vec![v(&[-1.0])],
                trajectory: Some(ClosedForm::Branch { sign: 1.0 }),
                regime: ExpectedRegime::FiniteTime {
                    t_star: 1.0,
                    steps: 2.0,
                },
                kl: Some(KLParams { theta: 0.0, m: 1.0, eta: 0.5 }),
                subregularity_radius: Some(0.5),
            },
        ),
        build(
            "huber_composite",
            "weakly convex ½x² + 0.3(1 − cos 2x) plus 0.5·Huber₀.₁, F(x) = x + 0.5 sin x",
            Region::cube(1, 5.0),
            Phi1Spec::Ripple { amplitude: 0.3 },
            Phi2Spec::Huber {
                delta: 0.1,
                weight: 0.5,
            },
            OperatorKind::SinMonotone { amplitude: 0.5 },
            v(&[1.0]),
            cfg(1e-3, 5.0),
            Reference {
                minimizer: Vector::zeros(1),
                alternate_minimizers: Vec::new(),
                trajectory: None,
                regime: ExpectedRegime::Exponential {
                    alpha: None,
                    rel_tolerance: 0.0,
                },
                kl: Some(KLParams {
                    theta: 0.5,
                    m: 1.0,
                    eta: 0.05,
                }),
                subregularity_radius: Some(0.05),
            },
        ),
        build(
            "constrained_box",
            "½‖x − c‖² on [0,1]², c = (2, −0.5): x* = (1, 0) reached at t = ln 2.6",
            Region::cube(2, 2.0),
            Phi1Spec::BoxQuadratic {
                center: box_center.clone(),
                lower: box_lo.clone(),
                upper: box_hi.clone(),
            },
            Phi2Spec::Zero,
            OperatorKind::Identity,
            v(&[0.2, 0.8]),
            cfg(1e-3, 2.0),
            Reference {
                minimizer: v(&[1.0, 0.0]),
                alternate_minimizers: Vec::new(),
                trajectory: Some(ClosedForm::ClampedRelaxation {
                    center: box_center,
                    lower: box_lo,
                    upper: box_hi,
                }),
                regime: ExpectedRegime::FiniteTime {
                    t_star: 2.6f64.ln(),
                    steps: 2.0,
                },
                kl: Some(KLParams { theta: 0.0, m: 2.0, eta: 0.5 }),
                subregularity_radius: Some(0.5),
            },
        ),
    ]
}

/// One `[[problem]]` table of a registry file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistryEntry {
    pub name: String,
    pub dimension: usize,
    #[serde(default)]
    pub summary: String,
    pub phi1: Phi1Spec,
    #[serde(default = "phi2_zero")]
    pub phi2: Phi2Spec,
    #[serde(default = "operator_identity")]
    pub operator: OperatorKind,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub x0: Vec<f64>,
    /// Flat `key = value` overrides of the default flow configuration.
    #[serde(default)]
    pub config: std::collections::BTreeMap<String, toml::Value>,
}

fn phi2_zero() -> Phi2Spec {
    Phi2Spec::Zero
}

fn operator_identity() -> OperatorKind {
    OperatorKind::Identity
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegistryFile {
    #[serde(default)]
    problem: Vec<RegistryEntry>,
}

impl RegistryEntry {
    pub fn build(&self) -> Result<ZooProblem> {
        let d = self.dimension;
        if d == 0 {
            return Err(Error::InvalidParameter(format!("{}: dimension must be positive", self.name)));
        }
        check_len("lower", &self.lower, d)?;
        check_len("upper", &self.upper, d)?;
        check_len("x0", &self.x0, d)?;
        let region = Region::Box {
            lower: self.lower.clone(),
            upper: self.upper.clone(),
        };
        let (objective, operator) = assemble(region, &self.phi1, &self.phi2, &self.operator)?;
        let mut default_config = FlowConfig::default();
        for (key, value) in &self.config {
            let text = match value {
                toml::Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            default_config.set(key, &text)?;
        }
        Ok(ZooProblem {
            name: self.name.clone(),
            summary: self.summary.clone(),
            objective,
            operator,
            x0_default: Vector::from_vec(self.x0.clone()),
            default_config,
            reference: None,
        })
    }
}

/// Parses a registry file; an empty file is an empty catalog.
pub fn parse_registry(text: &str) -> Result<Vec<ZooProblem>> {
    let file: RegistryFile = toml::from_str(text)?;
    let mut seen = HashSet::new();
    for e in &file.problem {
        if !seen.insert(e.name.as_str()) {
            return Err(Error::DuplicateName(e.name.clone()));
        }
    }
    file.problem.iter().map(RegistryEntry::build).collect()
}

/// Builtins followed by the registry entries; names must stay unique.
pub fn with_registry(text: &str) -> Result<Vec<ZooProblem>> {
    let mut all = builtin();
    for p in parse_registry(text)? {
        if all.iter().any(|q| q.name == p.name) {
            return Err(Error::DuplicateName(p.name));
        }
        all.push(p);
    }
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{eval_phi, stationarity_residual};

    #[test]
    fn builtin_catalog_and_references() {
        let zoo = builtin();
        let names: Vec<_> = zoo_list(&zoo).into_iter().map(|e| e.name).collect();
        for n in [
            "quadratic_newton",
            "quadratic_precond",
            "abs_value",
            "quartic",
            "nonunique_min",
            "huber_composite",
            "constrained_box",
        ] {
            assert!(names.iter().any(|m| m == n), "{n} missing");
        }
        for p in &zoo {
            let r = p.reference.as_ref().unwrap();
            let res = stationarity_residual(&p.objective, &r.minimizer).unwrap();
            assert!(res <= 1e-10, "{}: residual {res}", p.name);
            assert!(eval_phi(&p.objective, &p.x0_default).is_finite());
            assert!(p.objective.domain_region.contains(&p.x0_default));
        }
    }

    #[test]
    fn closed_forms() {
        let x0 = Vector::from_element(1, 1.0);
        assert_eq!(ClosedForm::UnitSpeed.eval(0.25, &x0)[0], 0.75);
        assert_eq!(ClosedForm::UnitSpeed.eval(3.0, &x0)[0], 0.0);
        assert!((ClosedForm::Quartic.eval(1.0, &x0)[0] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(ClosedForm::Branch { sign: -1.0 }.eval(0.5, &x0)[0], -0.5);
    }

    #[test]
    fn registry_parsing() {
        assert!(parse_registry("").unwrap().is_empty());
        let text = r#"
            [[problem]]
            name = "scaled_abs"
            dimension = 1
            phi1 = { id = "l1", weight = 2.0 }
            lower = [-3.0]
            upper = [3.0]
            x0 = [1.0]
            config = { step_h = 0.01, t_end = 1.0 }
        "#;
        let p = parse_registry(text).unwrap();
        assert_eq!(p[0].name, "scaled_abs");
        assert_eq!(p[0].default_config.step_h, 0.01);
        assert_eq!(eval_phi(&p[0].objective, &Vector::from_element(1, -1.5)), 3.0);
        let dup = format!("{text}\n{text}");
        assert!(matches!(parse_registry(&dup), Err(Error::DuplicateName(n)) if n == "scaled_abs"));
        let clash = text.replace("scaled_abs", "quartic");
        assert!(matches!(with_registry(&clash), Err(Error::DuplicateName(_))));
    }

    #[test]
    fn registry_rejects_bad_shapes() {
        let text = r#"
            [[problem]]
            name = "bad"
            dimension = 2
            phi1 = { id = "quartic" }
            lower = [-1.0]
            upper = [1.0, 1.0]
            x0 = [0.0, 0.0]
        "#;
        assert!(matches!(parse_registry(text), Err(Error::InvalidParameter(_))));
    }
}
