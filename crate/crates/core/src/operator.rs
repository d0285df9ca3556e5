//! The preconditioning map `F`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::rngs::StdRng;
use rand::SeedableRng;

use crate::problem::{sample_unit_direction, Region};
use crate::{Error, Result, Vector};

pub type EvalFn = Arc<dyn Fn(&Vector) -> Vector + Send + Sync>;
pub type DirectionalFn = Arc<dyn Fn(&Vector, &Vector) -> Vector + Send + Sync>;

/// Default first step of the one-sided difference quotients.
pub const DEFAULT_H0: f64 = 1e-3;

const MAX_INVERSE_ITERS: usize = 100_000;
const STALL_LIMIT: usize = 10;

#[derive(Clone)]
pub struct OperatorSpec {
    pub name: String,
    pub dim: usize,
    pub eval: EvalFn,
    pub directional: Option<DirectionalFn>,
    /// Lower-definiteness modulus `ρ`.
    pub rho: f64,
    /// Lipschitz constant `L` on the region of interest.
    pub lipschitz: f64,
}

impl fmt::Debug for OperatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OperatorSpec")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("rho", &self.rho)
            .field("lipschitz", &self.lipschitz)
            .field("has_directional", &self.directional.is_some())
            .finish()
    }
}

impl OperatorSpec {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        eval: impl Fn(&Vector) -> Vector + Send + Sync + 'static,
        rho: f64,
        lipschitz: f64,
    ) -> Result<Self> {
        if !(rho > 0.0 && rho <= lipschitz) {
            return Err(Error::InvalidParameter(format!(
                "operator constants must satisfy 0 < ρ ≤ L (ρ = {rho}, L = {lipschitz})"
            )));
        }
        Ok(Self {
            name: name.into(),
            dim,
            eval: Arc::new(eval),
            directional: None,
            rho,
            lipschitz,
        })
    }

    pub fn with_directional(mut self, d: impl Fn(&Vector, &Vector) -> Vector + Send + Sync + 'static) -> Self {
        self.directional = Some(Arc::new(d));
        self
    }

    pub fn identity(dim: usize) -> Self {
        Self::new("identity", dim, |x| x.clone(), 1.0, 1.0)
            .expect("identity constants are valid")
            .with_directional(|_, v| v.clone())
    }

    /// `F(x) = A x`; `ρ = λ_min((A + Aᵀ)/2)` and `L = ‖A‖₂`.
    pub fn linear(name: impl Into<String>, a: DMatrix<f64>) -> Result<Self> {
        let sym = (&a + a.transpose()) * 0.5;
        let rho = SymmetricEigen::new(sym).eigenvalues.min();
        let lipschitz = a.singular_values().max();
        let dim = a.nrows();
        let a_eval = a.clone();
        Ok(Self::new(name, dim, move |x| &a_eval * x, rho, lipschitz.max(rho))?.with_directional(move |_, v| &a * v))
    }

    /// Componentwise `F(x)ᵢ = xᵢ + a·sin(xᵢ)` with `0 ≤ a < 1`.
    pub fn sin_monotone(dim: usize, amplitude: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&amplitude) {
            return Err(Error::InvalidParameter("sin amplitude must lie in [0, 1)".into()));
        }
        Ok(Self::new(
            "sin_monotone",
            dim,
            move |x| x.map(|t| t + amplitude * t.sin()),
            1.0 - amplitude,
            1.0 + amplitude,
        )?
        .with_directional(move |x, v| v.zip_map(x, |vi, xi| vi * (1.0 + amplitude * xi.cos()))))
    }

    pub fn apply(&self, x: &Vector) -> Vector {
        (self.eval)(x)
    }
}

/// `1.5 ×` the largest difference slope `‖F(x)−F(y)‖/‖x−y‖` over sampled pairs.
pub fn estimate_lipschitz(
    eval: &(dyn Fn(&Vector) -> Vector + Send + Sync),
    region: &Region,
    n_pairs: usize,
    seed: u64,
) -> f64 {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut best: f64 = 0.0;
    for _ in 0..n_pairs {
        let x = region.sample(&mut rng);
        let y = region.sample(&mut rng);
        let d = (&x - &y).norm();
        if d > 0.0 {
            best = best.max((eval(&x) - eval(&y)).norm() / d);
        }
    }
    1.5 * best
}

/// Directional derivative estimate with the spread of its two finest
/// extrapolations.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionalEstimate {
    pub value: Vector,
    pub confidence: f64,
}

/// `DF(x)(v)`: the analytic directional map when present, otherwise the
/// one-sided limit of `(F(x+tv) − F(x))/t` by Richardson extrapolation over
/// `t ∈ {h0, h0/2, h0/4}`.
pub fn graph_derivative(op: &OperatorSpec, x: &Vector, v: &Vector, h0: f64) -> Result<DirectionalEstimate> {
    if let Some(d) = &op.directional {
        return Ok(DirectionalEstimate {
            value: d(x, v),
            confidence: 0.0,
        });
    }
    let fx = op.apply(x);
    let quotient = |t: f64| (op.apply(&(x + v * t)) - &fx) / t;
    let d0 = quotient(h0);
    let d1 = quotient(h0 / 2.0);
    let d2 = quotient(h0 / 4.0);
    let r_coarse = &d1 * 2.0 - &d0;
    let r_fine = &d2 * 2.0 - &d1;
    let spread = (&r_fine - &r_coarse).norm();
    if spread > 1e-4 * (1.0 + v.norm()) {
        return Err(Error::NonConvergentLimit { spread });
    }
    Ok(DirectionalEstimate {
        value: (r_fine * 4.0 - r_coarse) / 3.0,
        confidence: spread,
    })
}

/// Columns `DF(x)(eᵢ)`.
pub fn jacobian(op: &OperatorSpec, x: &Vector) -> Result<DMatrix<f64>> {
    let d = x.len();
    let mut j = DMatrix::zeros(d, d);
    for i in 0..d {
        let e = Vector::from_fn(d, |k, _| if k == i { 1.0 } else { 0.0 });
        j.set_column(i, &graph_derivative(op, x, &e, DEFAULT_H0)?.value);
    }
    Ok(j)
}

/// Minimum of `⟨v, DF(x)(v)⟩` over sampled points `x` and unit directions `v`.
///
/// Each sample evaluates the coordinate axes (both signs), a few random unit
/// directions, and the minimal eigenvector of the symmetrised Jacobian; every
/// candidate is evaluated through [`graph_derivative`], so the returned value
/// is always an observed quadratic form.
pub fn lower_definite_probe(op: &OperatorSpec, region: &Region, n_samples: usize, seed: u64) -> Result<f64> {
    if n_samples == 0 {
        return Err(Error::InvalidParameter("lower_definite_probe needs at least one sample".into()));
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let d = op.dim;
    let points: Vec<Vector> = if d == 1 {
        match region {
            Region::Box { lower, upper } => (0..n_samples)
                .map(|i| {
                    let s = (i as f64 + 0.5) / n_samples as f64;
                    Vector::from_element(1, lower[0] + s * (upper[0] - lower[0]))
                })
                .collect(),
            Region::Ball { .. } => (0..n_samples).map(|_| region.sample(&mut rng)).collect(),
        }
    } else {
        (0..n_samples).map(|_| region.sample(&mut rng)).collect()
    };

    let mut best = f64::INFINITY;
    for x in &points {
        let mut dirs: Vec<Vector> = Vec::new();
        for i in 0..d {
            let e = Vector::from_fn(d, |k, _| if k == i { 1.0 } else { 0.0 });
            dirs.push(-&e);
            dirs.push(e);
        }
        if d > 1 {
            for _ in 0..8 {
                dirs.push(sample_unit_direction(d, &mut rng));
            }
            let j = jacobian(op, x)?;
            let eig = SymmetricEigen::new((&j + j.transpose()) * 0.5);
            let k = eig.eigenvalues.imin();
            let u = eig.eigenvectors.column(k).into_owned();
            dirs.push(-&u);
            dirs.push(u);
        }
        for v in &dirs {
            let dv = graph_derivative(op, x, v, DEFAULT_H0)?;
            best = best.min(v.dot(&dv.value) / v.norm_squared());
        }
    }
    Ok(best)
}

/// Output of [`local_inverse`].
#[derive(Clone, Debug, PartialEq)]
pub struct InverseSolution {
    pub point: Vector,
    pub iterations: usize,
    pub residual: f64,
}

/// Solves `F(x) = y` near `x_guess` to `‖F(x) − y‖ ≤ tol`.
///
/// The base iteration is the contraction `z ← z − (ρ/L²)(F(z) − y)`. When an
/// analytic directional map is available a damped Newton step is tried first
/// and kept only if it lowers the residual.
pub fn local_inverse(op: &OperatorSpec, y: &Vector, x_guess: &Vector, tol: f64) -> Result<InverseSolution> {
    let step = op.rho / (op.lipschitz * op.lipschitz);
    let mut z = x_guess.clone();
    let mut r = op.apply(&z) - y;
    let mut rn = r.norm();
    let mut stalled = 0;
    for iter in 0..MAX_INVERSE_ITERS {
        if rn <= tol {
            return Ok(InverseSolution {
                point: z,
                iterations: iter,
                residual: rn,
            });
        }
        let mut next = None;
        if op.directional.is_some() {
            if let Some(delta) = jacobian(op, &z).ok().and_then(|j| j.lu().solve(&(-&r))) {
                let mut t = 1.0;
                for _ in 0..4 {
                    let cand = &z + &delta * t;
                    let rc = op.apply(&cand) - y;
                    let rcn = rc.norm();
                    if rcn < rn {
                        next = Some((cand, rc, rcn));
                        break;
                    }
                    t *= 0.5;
                }
            }
        }
        let (cand, rc, rcn) = next.unwrap_or_else(|| {
            let cand = &z - &r * step;
            let rc = op.apply(&cand) - y;
            let rcn = rc.norm();
            (cand, rc, rcn)
        });
        if rcn < rn {
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= STALL_LIMIT {
                return Err(Error::SolverDivergence(format!(
                    "local inverse residual stalled at {rcn:e} (tolerance {tol:e})"
                )));
            }
        }
        z = cand;
        r = rc;
        rn = rcn;
    }
    Err(Error::MaxIterations(MAX_INVERSE_ITERS))
}

/// `B/A + √(C/A)`: every real `x` with `Ax² ≤ Bx + C` satisfies `|x| ≤` this.
pub fn bound_from_quadratic(a: f64, b: f64, c: f64) -> Result<f64> {
    if a == 0.0 {
        return Err(Error::DegenerateCoefficient);
    }
    if a < 0.0 || b < 0.0 || c < 0.0 {
        return Err(Error::InvalidParameter("quadratic bound needs A > 0 and B, C ≥ 0".into()));
    }
    Ok(b / a + (c / a).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{dmatrix, dvector};

    fn abs_op() -> OperatorSpec {
        OperatorSpec::new("abs", 1, |x| x.abs(), 1.0, 1.0).unwrap()
    }

    #[test]
    fn linear_directional_is_exact() {
        let a = dmatrix![2.0, 1.0; 0.0, 2.0];
        let op = OperatorSpec::linear("A", a.clone()).unwrap();
        let v = dvector![0.3, -1.2];
        let d = graph_derivative(&op, &dvector![5.0, 1.0], &v, DEFAULT_H0).unwrap();
        assert_eq!(d.value, &a * &v);
    }

    #[test]
    fn abs_difference_limits() {
        let op = abs_op();
        let d = graph_derivative(&op, &dvector![1.0], &dvector![2.0], DEFAULT_H0).unwrap();
        assert_abs_diff_eq!(d.value[0], 2.0, epsilon = 1e-12);
        let d = graph_derivative(&op, &dvector![0.0], &dvector![1.0], DEFAULT_H0).unwrap();
        assert_abs_diff_eq!(d.value[0], 1.0, epsilon = 1e-12);
        // Both one-sided limits at the kink are +1 for |·|.
        let d = graph_derivative(&op, &dvector![0.0], &dvector![-1.0], DEFAULT_H0).unwrap();
        assert_abs_diff_eq!(d.value[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn near_kink_quotients_do_not_settle() {
        let op = abs_op();
        let err = graph_derivative(&op, &dvector![2e-4], &dvector![-1.0], DEFAULT_H0).unwrap_err();
        assert!(matches!(err, Error::NonConvergentLimit { .. }));
    }

    #[test]
    fn identity_probe_is_one() {
        let rho = lower_definite_probe(&OperatorSpec::identity(3), &Region::cube(3, 1.0), 20, 1).unwrap();
        assert_abs_diff_eq!(rho, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn sin_probe_minimum() {
        let op = OperatorSpec::new("sin", 1, |x| x.map(|t| t + 0.5 * t.sin()), 0.5, 1.5).unwrap();
        let region = Region::Box {
            lower: vec![0.0],
            upper: vec![2.0 * std::f64::consts::PI],
        };
        let rho = lower_definite_probe(&op, &region, 1000, 0).unwrap();
        assert_abs_diff_eq!(rho, 0.5, epsilon = 1e-4);
    }

    #[test]
    fn inverse_examples() {
        let op = OperatorSpec::new("2x", 1, |x| x * 2.0, 2.0, 2.0).unwrap();
        let s = local_inverse(&op, &dvector![3.0], &dvector![0.0], 1e-12).unwrap();
        assert_abs_diff_eq!(s.point[0], 1.5, epsilon = 1e-12);

        // Bisection oracle for x + 0.5 sin x = 1 on [0, 1].
        let g = |x: f64| x + 0.5 * x.sin() - 1.0;
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                hi = mid
            } else {
                lo = mid
            }
        }
        let root = 0.5 * (lo + hi);
        let op = OperatorSpec::sin_monotone(1, 0.5).unwrap();
        let s = local_inverse(&op, &dvector![1.0], &dvector![0.0], 1e-13).unwrap();
        assert_abs_diff_eq!(s.point[0], root, epsilon = 1e-10);
        assert!((s.point[0] - 0.684_04).abs() < 1e-5);

        // Contraction only (no directional map).
        let op = OperatorSpec::new("sin", 1, |x| x.map(|t| t + 0.5 * t.sin()), 0.5, 1.5).unwrap();
        let s = local_inverse(&op, &dvector![1.0], &dvector![0.0], 1e-13).unwrap();
        assert_abs_diff_eq!(s.point[0], root, epsilon = 1e-10);
        assert!(s.iterations > 1);
    }

    #[test]
    fn inverse_detects_stalling() {
        // Claimed constants are wrong for a decreasing map; the contraction
        // walks the wrong way.
        let op = OperatorSpec::new("neg", 1, |x| -x, 1.0, 1.0).unwrap();
        assert!(matches!(
            local_inverse(&op, &dvector![1.0], &dvector![0.0], 1e-12),
            Err(Error::SolverDivergence(_))
        ));
    }

    #[test]
    fn quadratic_bound_examples() {
        assert_eq!(bound_from_quadratic(1.0, 2.0, 0.0).unwrap(), 2.0);
        assert_eq!(bound_from_quadratic(1.0, 0.0, 4.0).unwrap(), 2.0);
        assert_eq!(bound_from_quadratic(2.0, 2.0, 2.0).unwrap(), 2.0);
        let root = (2.0 + 20f64.sqrt()) / 4.0;
        assert!(root <= 2.0 && (root - 1.618).abs() < 1e-3);
        assert!(matches!(bound_from_quadratic(0.0, 1.0, 1.0), Err(Error::DegenerateCoefficient)));
    }

    #[test]
    fn operator_constants_validated() {
        assert!(OperatorSpec::new("bad", 1, |x| x.clone(), 2.0, 1.0).is_err());
        assert!(OperatorSpec::sin_monotone(1, 1.0).is_err());
    }

    #[test]
    fn lipschitz_estimate_inflates() {
        let l = estimate_lipschitz(&|x: &Vector| x * 3.0, &Region::cube(2, 1.0), 1000, 3);
        assert_abs_diff_eq!(l, 4.5, epsilon = 1e-9);
    }
}
