//! Proximal maps, Moreau envelopes and mollifier smoothing.
//!
//! The envelope is taken of the truncated function
//! `φ̄₁ = φ₁ + δ(·, B[x̄, R])`, where `x̄` and `R` are the localization center
//! and radius of [`EnvelopeParams`]. Closed-form proxes are used whenever
//! their answer lands in the truncation ball, since the unconstrained
//! minimizer is then also the constrained one.

use std::io::Write;
use std::sync::Arc;

use rand::rngs::StdRng;
use rand::SeedableRng;
use serde::Serialize;

use crate::problem::{sample_in_ball, ObjectiveSplit, SelectionRule};
use crate::quadrature::gauss_legendre;
use crate::{Error, Result, Vector};

const GRID_POINTS: usize = 2001;
const GOLDEN_ITERS: usize = 200;
const MULTISTARTS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnvelopeParams {
    pub lambda: f64,
    pub lambda0: f64,
    pub localization_center: Vector,
    pub localization_radius: f64,
}

impl EnvelopeParams {
    pub fn new(lambda: f64, lambda0: f64, localization_center: Vector, localization_radius: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda < lambda0) {
            return Err(Error::InvalidParameter(format!(
                "envelope parameter must satisfy 0 < λ < λ₀ (λ = {lambda}, λ₀ = {lambda0})"
            )));
        }
        if localization_radius <= 0.0 {
            return Err(Error::InvalidParameter("localization radius must be positive".into()));
        }
        Ok(Self {
            lambda,
            lambda0,
            localization_center,
            localization_radius,
        })
    }

    /// Same localization, different `λ`.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(
            lambda,
            self.lambda0,
            self.localization_center.clone(),
            self.localization_radius,
        )
    }
}

/// `λ₀ = min(1/(4c+1), s₀/4)` from a hypomonotonicity constant `c` and the
/// localization diameter `s₀`.
pub fn default_lambda0(c: f64, s0: f64) -> f64 {
    (1.0 / (4.0 * c + 1.0)).min(s0 / 4.0)
}

/// Prox-Lipschitz constant `1/(1 − λc)` of the truncated function when `λc < 1`.
pub fn prox_lipschitz_bound(lambda: f64, c: f64) -> f64 {
    1.0 / (1.0 - lambda * c).max(f64::EPSILON)
}

/// Result of a prox evaluation. `certified` is false when the answer comes
/// from the multistart local search in dimension > 1.
#[derive(Clone, Debug, PartialEq)]
pub struct ProxPoint {
    pub point: Vector,
    pub certified: bool,
}

fn truncated_value(obj: &ObjectiveSplit, params: &EnvelopeParams, z: &Vector) -> f64 {
    if (z - &params.localization_center).norm() > params.localization_radius * (1.0 + 1e-12) {
        f64::INFINITY
    } else {
        obj.phi1(z)
    }
}

fn check_localization(params: &EnvelopeParams, x: &Vector) -> Result<()> {
    let distance = (x - &params.localization_center).norm();
    if distance > params.localization_radius {
        return Err(Error::OutsideLocalization {
            distance,
            radius: params.localization_radius,
        });
    }
    Ok(())
}

/// Minimizer of `z ↦ φ̄₁(z) + ‖x − z‖²/(2λ)`.
pub fn prox(obj: &ObjectiveSplit, params: &EnvelopeParams, x: &Vector) -> Result<Vector> {
    prox_with_status(obj, params, x).map(|p| p.point)
}

pub fn prox_with_status(obj: &ObjectiveSplit, params: &EnvelopeParams, x: &Vector) -> Result<ProxPoint> {
    check_localization(params, x)?;
    if let Some(p) = &obj.phi1_prox {
        let z = p(params.lambda, x);
        if (&z - &params.localization_center).norm() <= params.localization_radius && obj.phi1(&z).is_finite() {
            return Ok(ProxPoint {
                point: z,
                certified: true,
            });
        }
    }
    if obj.dim == 1 {
        prox_scalar(obj, params, x).map(|point| ProxPoint { point, certified: true })
    } else {
        prox_multistart(obj, params, x).map(|point| ProxPoint {
            point,
            certified: false,
        })
    }
}

fn prox_objective(obj: &ObjectiveSplit, params: &EnvelopeParams, x: &Vector, z: &Vector) -> f64 {
    let f = truncated_value(obj, params, z);
    if f == f64::INFINITY {
        return f64::INFINITY;
    }
    f + (x - z).norm_squared() / (2.0 * params.lambda)
}

/// Grid scan over the truncation interval followed by golden-section search
/// inside the bracket around the best grid point.
fn prox_scalar(obj: &ObjectiveSplit, params: &EnvelopeParams, x: &Vector) -> Result<Vector> {
    let c = params.localization_center[0];
    let r = params.localization_radius;
    let (lo, hi) = (c - r, c + r);
    let g = |t: f64| prox_objective(obj, params, x, &Vector::from_element(1, t));
    let step = (hi - lo) / (GRID_POINTS - 1) as f64;
    let mut best = (f64::INFINITY, 0usize);
    for i in 0..GRID_POINTS {
        let v = g(lo + step * i as f64);
        if v < best.0 {
            best = (v, i);
        }
    }
    if !best.0.is_finite() {
        return Err(Error::SolverDivergence(
            "prox search found no finite objective value in the localization ball".into(),
        ));
    }
    let i = best.1;
    let a = lo + step * i.saturating_sub(1) as f64;
    let b = lo + step * (i + 1).min(GRID_POINTS - 1) as f64;
    let t = golden_section(g, a, b, 1e-15 * (1.0 + c.abs() + r));
    // Keep the grid point if the refinement wandered onto a worse value.
    let t = if g(t) <= best.0 { t } else { lo + step * i as f64 };
    Ok(Vector::from_element(1, t))
}

/// Golden-section minimization of a unimodal function on `[a, b]`.
pub fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..GOLDEN_ITERS {
        if (b - a).abs() <= tol {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        c
    } else {
        d
    }
}

fn project_ball(z: &Vector, center: &Vector, radius: f64) -> Vector {
    let d = z - center;
    let n = d.norm();
    if n <= radius {
        z.clone()
    } else {
        center + d * (radius / n)
    }
}

/// Projected subgradient descent with backtracking from several starts.
fn prox_multistart(obj: &ObjectiveSplit, params: &EnvelopeParams, x: &Vector) -> Result<Vector> {
    let center = &params.localization_center;
    let radius = params.localization_radius;
    let mut rng = StdRng::seed_from_u64(0x5eed);
    let mut starts = vec![project_ball(x, center, radius), center.clone()];
    while starts.len() < MULTISTARTS {
        starts.push(center + sample_in_ball(obj.dim, radius, &mut rng));
    }
    let rule = SelectionRule::min_norm();
    let lambda = params.lambda;
    let mut best: Option<(f64, Vector)> = None;
    for mut z in starts {
        let mut fz = prox_objective(obj, params, x, &z);
        if !fz.is_finite() {
            continue;
        }
        let mut t = lambda;
        for _ in 0..500 {
            let s = (obj.phi1_subgrad)(&z, rule.tie_tolerance);
            if s.is_empty() {
                break;
            }
            let g = s.min_norm_element() + (&z - x) / lambda;
            if g.norm() < 1e-14 {
                break;
            }
            let mut accepted = false;
            for _ in 0..40 {
                let cand = project_ball(&(&z - &g * t), center, radius);
                let fc = prox_objective(obj, params, x, &cand);
                if fc < fz {
                    accepted = (&cand - &z).norm() > 1e-15;
                    z = cand;
                    fz = fc;
                    t *= 1.5;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if best.as_ref().is_none_or(|(fb, _)| fz < *fb) {
            best = Some((fz, z));
        }
    }
    best.map(|(_, z)| z).ok_or_else(|| {
        Error::SolverDivergence("no multistart point has a finite prox objective".into())
    })
}

/// `e_λφ̄₁(x) = φ̄₁(P_λ(x)) + ‖x − P_λ(x)‖²/(2λ)`.
pub fn moreau_value(obj: &ObjectiveSplit, params: &EnvelopeParams, x: &Vector) -> Result<f64> {
    let z = prox(obj, params, x)?;
    Ok(truncated_value(obj, params, &z) + (x - &z).norm_squared() / (2.0 * params.lambda))
}

/// `∇e_λφ̄₁(x) = (x − P_λ(x))/λ`.
pub fn moreau_grad(obj: &ObjectiveSplit, params: &EnvelopeParams, x: &Vector) -> Result<Vector> {
    let z = prox(obj, params, x)?;
    Ok((x - z) / params.lambda)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MollifierParams {
    pub lambda: f64,
    pub n_nodes: usize,
    pub normalization: f64,
    pub dim: usize,
    /// Unit-ball nodes with normalised weights.
    #[serde(skip)]
    rule: Arc<Vec<(Vector, f64)>>,
}

/// Unnormalised bump `exp(1/(‖z‖² − 1))` on the open unit ball.
pub fn bump(r2: f64) -> f64 {
    if r2 >= 1.0 {
        0.0
    } else {
        (1.0 / (r2 - 1.0)).exp()
    }
}

const MC_SAMPLES: usize = 20_000;

impl MollifierParams {
    /// 64-node tensor Gauss–Legendre rule for `dim ≤ 3`.
    pub fn new(lambda: f64, dim: usize) -> Result<Self> {
        Self::with_nodes(lambda, dim, 64)
    }

    pub fn with_nodes(lambda: f64, dim: usize, n_nodes: usize) -> Result<Self> {
        if lambda <= 0.0 || dim == 0 || n_nodes == 0 {
            return Err(Error::InvalidParameter(
                "mollifier needs λ > 0, dim ≥ 1 and at least one node".into(),
            ));
        }
        let mut params = Self {
            lambda,
            n_nodes,
            normalization: 1.0,
            dim,
            rule: Arc::new(Vec::new()),
        };
        let raw = params.nodes();
        let mass: f64 = raw.iter().map(|(_, w)| w).sum();
        params.normalization = mass;
        params.rule = Arc::new(raw.into_iter().map(|(z, w)| (z, w / mass)).collect());
        Ok(params)
    }

    /// Quadrature nodes `z` in the unit ball with weights `W·bump(z)`
    /// (unnormalised). Monte Carlo with fixed seed above three dimensions.
    fn nodes(&self) -> Vec<(Vector, f64)> {
        if self.dim <= 3 {
            let (x, w) = gauss_legendre(self.n_nodes);
            let mut out = Vec::new();
            let n = self.n_nodes;
            let total = n.pow(self.dim as u32);
            for flat in 0..total {
                let mut idx = flat;
                let mut z = Vector::zeros(self.dim);
                let mut weight = 1.0;
                for k in 0..self.dim {
                    let i = idx % n;
                    idx /= n;
                    z[k] = x[i];
                    weight *= w[i];
                }
                let b = bump(z.norm_squared());
                if b > 0.0 {
                    out.push((z, weight * b));
                }
            }
            out
        } else {
            let mut rng = StdRng::seed_from_u64(0xb0b);
            (0..MC_SAMPLES)
                .map(|_| {
                    let z = sample_in_ball(self.dim, 1.0, &mut rng);
                    let b = bump(z.norm_squared());
                    (z, b)
                })
                .collect()
        }
    }
}

/// `φ₂^λ(x) = ∫ φ₂(x − λz) ψ(z) dz` and, on request, its gradient obtained by
/// differentiating the quadrature sum: `Σ wᵢ ψ(zᵢ) ∇φ₂(x − λzᵢ)`.
pub fn mollify_phi2(
    obj: &ObjectiveSplit,
    mparams: &MollifierParams,
    x: &Vector,
    want_gradient: bool,
) -> Result<(f64, Option<Vector>)> {
    if !obj.domain_region.contains_ball(x, mparams.lambda) {
        return Err(Error::RegionViolation {
            radius: mparams.lambda,
        });
    }
    let mut grad = want_gradient.then(|| Vector::zeros(x.len()));
    if obj.phi2_is_zero {
        return Ok((0.0, grad));
    }
    let rule = SelectionRule::min_norm();
    let mut value = 0.0;
    for (z, w) in mparams.rule.iter() {
        let y = x - z * mparams.lambda;
        value += w * obj.phi2(&y);
        if let Some(g) = grad.as_mut() {
            g.axpy(*w, &obj.phi2_subgrad_select(&y, &rule), 1.0);
        }
    }
    Ok((value, grad))
}

/// Writes `lambda,x_1..x_d,value,grad_1..grad_d` rows for every `(λ, x)` pair.
pub fn write_envelope_csv<W: Write>(
    obj: &ObjectiveSplit,
    base: &EnvelopeParams,
    lambdas: &[f64],
    points: &[Vector],
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let d = obj.dim;
    let mut header = vec!["lambda".to_string()];
    header.extend((1..=d).map(|i| format!("x_{i}")));
    header.push("value".into());
    header.extend((1..=d).map(|i| format!("grad_{i}")));
    w.write_record(&header)?;
    for &lambda in lambdas {
        let params = base.with_lambda(lambda)?;
        for x in points {
            let value = moreau_value(obj, &params, x)?;
            let grad = moreau_grad(obj, &params, x)?;
            let mut row = vec![lambda.to_string()];
            row.extend(x.iter().map(|v| v.to_string()));
            row.push(value.to_string());
            row.extend(grad.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::oracles::{l1_subdifferential, soft_threshold};
    use crate::problem::{Region, Subdifferential};
    use approx::assert_abs_diff_eq;
    use nalgebra::dvector;

    fn params(lambda: f64) -> EnvelopeParams {
        EnvelopeParams::new(lambda, 2.0, dvector![0.0], 10.0).unwrap()
    }

    fn abs_obj(with_prox: bool) -> ObjectiveSplit {
        let o = ObjectiveSplit::new(Region::cube(1, 20.0)).with_phi1(|x| x.abs().sum(), l1_subdifferential);
        if with_prox {
            o.with_phi1_prox(soft_threshold)
        } else {
            o
        }
    }

    fn half_sq() -> ObjectiveSplit {
        ObjectiveSplit::new(Region::cube(1, 20.0))
            .with_phi1(|x| 0.5 * x.norm_squared(), |x, _| Subdifferential::singleton(x.clone()))
    }

    #[test]
    fn envelope_params_validate() {
        assert!(EnvelopeParams::new(1.0, 1.0, dvector![0.0], 1.0).is_err());
        assert!(EnvelopeParams::new(0.5, 1.0, dvector![0.0], 0.0).is_err());
        assert!(EnvelopeParams::new(0.5, 1.0, dvector![0.0], 1.0).is_ok());
    }

    #[test]
    fn abs_prox_closed_form_and_search_agree() {
        // Independent check: golden section directly on |z| + (2 − z)²/(2·0.5).
        let oracle = golden_section(|z| z.abs() + (2.0 - z).powi(2), -5.0, 5.0, 1e-14);
        assert_abs_diff_eq!(oracle, 1.5, epsilon = 1e-7);
        let p = prox(&abs_obj(true), &params(0.5), &dvector![2.0]).unwrap();
        assert_eq!(p[0], 1.5);
        let p = prox(&abs_obj(false), &params(0.5), &dvector![2.0]).unwrap();
        assert_abs_diff_eq!(p[0], 1.5, epsilon = 1e-7);
    }

    #[test]
    fn half_square_envelope() {
        let obj = half_sq();
        let p = params(1.0);
        let x = dvector![3.0];
        assert_abs_diff_eq!(prox(&obj, &p, &x).unwrap()[0], 1.5, epsilon = 1e-7);
        assert_abs_diff_eq!(moreau_value(&obj, &p, &x).unwrap(), 2.25, epsilon = 1e-12);
        assert_abs_diff_eq!(moreau_grad(&obj, &p, &x).unwrap()[0], 1.5, epsilon = 1e-7);
    }

    #[test]
    fn abs_envelope_is_huber() {
        let obj = abs_obj(true);
        let p = params(0.5);
        assert_abs_diff_eq!(moreau_value(&obj, &p, &dvector![2.0]).unwrap(), 1.75, epsilon = 1e-15);
        assert_abs_diff_eq!(moreau_grad(&obj, &p, &dvector![2.0]).unwrap()[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn fixed_point_at_minimizer() {
        for obj in [abs_obj(true), abs_obj(false), half_sq()] {
            let p = params(0.7);
            let x = dvector![0.0];
            assert_abs_diff_eq!(prox(&obj, &p, &x).unwrap()[0], 0.0, epsilon = 1e-9);
            assert_abs_diff_eq!(moreau_value(&obj, &p, &x).unwrap(), 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(moreau_grad(&obj, &p, &x).unwrap()[0], 0.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn outside_localization_is_rejected() {
        let p = EnvelopeParams::new(0.5, 1.0, dvector![0.0], 1.0).unwrap();
        assert!(matches!(
            prox(&abs_obj(true), &p, &dvector![3.0]),
            Err(Error::OutsideLocalization { .. })
        ));
    }

    #[test]
    fn nowhere_finite_phi1_diverges() {
        let obj = ObjectiveSplit::new(Region::cube(1, 5.0)).with_phi1(|_| f64::INFINITY, |_, _| Subdifferential::empty());
        assert!(matches!(
            prox(&obj, &params(0.5), &dvector![0.0]),
            Err(Error::SolverDivergence(_))
        ));
    }

    #[test]
    fn multistart_prox_in_two_dimensions() {
        let obj = ObjectiveSplit::new(Region::cube(2, 20.0)).with_phi1(|x| x.abs().sum(), l1_subdifferential);
        let p = EnvelopeParams::new(0.5, 2.0, dvector![0.0, 0.0], 10.0).unwrap();
        let out = prox_with_status(&obj, &p, &dvector![2.0, -0.2]).unwrap();
        assert!(!out.certified);
        assert_abs_diff_eq!(out.point[0], 1.5, epsilon = 1e-6);
        assert_abs_diff_eq!(out.point[1], 0.0, epsilon = 1e-6);
    }

    #[test]
    fn mollifier_mass_and_linear_exactness() {
        let m = MollifierParams::new(0.3, 1).unwrap();
        let mass: f64 = m.rule.iter().map(|(_, w)| w).sum();
        assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-12);
        let obj = ObjectiveSplit::new(Region::cube(1, 5.0)).with_phi2(
            |x| 2.0 * x[0],
            |_, _| Subdifferential::singleton(dvector![2.0]),
            |_, _| 2.0,
        );
        let (v, g) = mollify_phi2(&obj, &m, &dvector![0.7], true).unwrap();
        assert_abs_diff_eq!(v, 1.4, epsilon = 1e-12);
        assert_abs_diff_eq!(g.unwrap()[0], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn mollifier_region_violation() {
        let obj = ObjectiveSplit::new(Region::cube(1, 1.0));
        let m = MollifierParams::new(0.5, 1).unwrap();
        assert!(matches!(
            mollify_phi2(&obj, &m, &dvector![0.8], false),
            Err(Error::RegionViolation { .. })
        ));
    }

    #[test]
    fn envelope_csv_has_header_and_rows() {
        let mut buf = Vec::new();
        write_envelope_csv(&abs_obj(true), &params(0.5), &[0.5, 0.25], &[dvector![2.0], dvector![0.1]], &mut buf)
            .unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "lambda,x_1,value,grad_1");
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[1], "0.5,2,1.75,1");
    }
}
