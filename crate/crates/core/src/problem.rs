//! Composite objectives `φ = φ₁ + φ₂` and their first-order oracles.
//!
//! Subdifferentials are set-valued. Oracles return a finite description of
//! the set: a list of vertices whose convex hull is the (Clarke) subdifferential
//! sample, plus optional rays for normal-cone directions of extended-valued
//! terms. In one dimension and for the polyhedral oracles of the zoo this
//! description is exact, so distances to the set are exact as well.

use std::fmt;
use std::sync::Arc;

use rand::rngs::StdRng;
use rand::{RngExt, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::hull::min_norm_point;
use crate::{Error, Result, Vector};

/// Default distance below which two branches or a point and a kink count as tied.
pub const DEFAULT_TIE_TOLERANCE: f64 = 1e-9;

pub type ValueFn = Arc<dyn Fn(&Vector) -> f64 + Send + Sync>;
pub type ProxFn = Arc<dyn Fn(f64, &Vector) -> Vector + Send + Sync>;
/// Subdifferential oracle; the second argument is the tie tolerance used to
/// decide whether the query point sits on a kink.
pub type SubdiffFn = Arc<dyn Fn(&Vector, f64) -> Subdifferential + Send + Sync>;
/// Local Lipschitz bound over the ball `(center, radius)`.
pub type LipschitzFn = Arc<dyn Fn(&Vector, f64) -> f64 + Send + Sync>;

/// Finite description `conv(vertices) + cone(rays)` of a subdifferential.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Subdifferential {
    pub vertices: Vec<Vector>,
    pub rays: Vec<Vector>,
}

impl Subdifferential {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn singleton(v: Vector) -> Self {
        Self {
            vertices: vec![v],
            rays: Vec::new(),
        }
    }

    pub fn from_vertices(vertices: Vec<Vector>) -> Self {
        Self {
            vertices,
            rays: Vec::new(),
        }
    }

    pub fn with_rays(mut self, rays: Vec<Vector>) -> Self {
        self.rays = rays;
        self
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// True when the set has more than one element.
    pub fn is_multivalued(&self) -> bool {
        self.vertices.len() > 1 || !self.rays.is_empty()
    }

    /// Minkowski sum; vertices are all pairwise sums, rays are concatenated.
    pub fn minkowski_sum(&self, other: &Subdifferential) -> Subdifferential {
        let mut vertices = Vec::with_capacity(self.vertices.len() * other.vertices.len());
        for a in &self.vertices {
            for b in &other.vertices {
                let s = a + b;
                if !vertices.contains(&s) {
                    vertices.push(s);
                }
            }
        }
        let mut rays = self.rays.clone();
        rays.extend(other.rays.iter().cloned());
        Subdifferential { vertices, rays }
    }

    /// Minimum-norm element of the set. Panics on an empty set.
    pub fn min_norm_element(&self) -> Vector {
        min_norm_point(&self.vertices, &self.rays)
    }

    /// `dist(0; self)`.
    pub fn distance_to_zero(&self) -> f64 {
        self.min_norm_element().norm()
    }
}

/// Open region `Ω` housing the level set of the initial point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Region {
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

impl Region {
    pub fn cube(dim: usize, half_width: f64) -> Self {
        Region::Box {
            lower: vec![-half_width; dim],
            upper: vec![half_width; dim],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Region::Box { lower, .. } => lower.len(),
            Region::Ball { center, .. } => center.len(),
        }
    }

    pub fn contains(&self, x: &Vector) -> bool {
        match self {
            Region::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(xi, (lo, hi))| xi > lo && xi < hi),
            Region::Ball { center, radius } => {
                let c = Vector::from_column_slice(center);
                (x - c).norm() < *radius
            }
        }
    }

    /// Whether the closed ball `B_r[x]` lies inside the region.
    pub fn contains_ball(&self, x: &Vector, r: f64) -> bool {
        match self {
            Region::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(xi, (lo, hi))| xi - r > *lo && xi + r < *hi),
            Region::Ball { center, radius } => {
                let c = Vector::from_column_slice(center);
                (x - c).norm() + r < *radius
            }
        }
    }

    pub fn center(&self) -> Vector {
        match self {
            Region::Box { lower, upper } => {
                Vector::from_iterator(lower.len(), lower.iter().zip(upper).map(|(a, b)| 0.5 * (a + b)))
            }
            Region::Ball { center, .. } => Vector::from_column_slice(center),
        }
    }

    /// Radius of the largest ball around `x` inside the region (0 when outside).
    pub fn inner_radius(&self, x: &Vector) -> f64 {
        match self {
            Region::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(xi, (lo, hi))| (xi - lo).min(hi - xi))
                .fold(f64::INFINITY, f64::min)
                .max(0.0),
            Region::Ball { center, radius } => {
                let c = Vector::from_column_slice(center);
                (radius - (x - c).norm()).max(0.0)
            }
        }
    }

    /// Uniform sample from the region.
    pub fn sample(&self, rng: &mut StdRng) -> Vector {
        match self {
            Region::Box { lower, upper } => Vector::from_iterator(
                lower.len(),
                lower
                    .iter()
                    .zip(upper)
                    .map(|(lo, hi)| rng.random_range(*lo..*hi)),
            ),
            Region::Ball { center, radius } => {
                let c = Vector::from_column_slice(center);
                c + sample_in_ball(center.len(), *radius, rng)
            }
        }
    }
}

/// Uniform sample from the centred ball of the given radius.
pub fn sample_in_ball(dim: usize, radius: f64, rng: &mut StdRng) -> Vector {
    loop {
        let v = Vector::from_iterator(dim, (0..dim).map(|_| rng.random_range(-1.0..1.0)));
        let n = v.norm();
        if n <= 1.0 && (dim == 1 || n > 0.0) {
            return v * radius;
        }
    }
}

/// Uniform sample from the unit sphere.
pub fn sample_unit_direction(dim: usize, rng: &mut StdRng) -> Vector {
    loop {
        let v = Vector::from_iterator(dim, (0..dim).map(|_| rng.random_range(-1.0..1.0)));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Deterministic rule picking one subgradient out of a set-valued oracle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionRule {
    pub kind: SelectionKind,
    pub tie_tolerance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionKind {
    /// Minimum-norm element of the sampled Minkowski sum.
    MinNorm,
    /// Lexicographically smallest vertex.
    Lexicographic,
    /// Vertex with the given index (wrapped around the vertex count).
    FixedIndex(usize),
    /// Vertex whose descent direction `−g` points toward `sign · (1, …, 1)`,
    /// provided it actually decreases `φ`; otherwise falls back to `MinNorm`.
    SignBias(i8),
}

impl SelectionRule {
    pub fn new(kind: SelectionKind) -> Self {
        Self {
            kind,
            tie_tolerance: DEFAULT_TIE_TOLERANCE,
        }
    }

    pub fn min_norm() -> Self {
        Self::new(SelectionKind::MinNorm)
    }

    pub fn sign_bias(sign: i8) -> Self {
        Self::new(SelectionKind::SignBias(sign.signum()))
    }

    fn descent_probe(&self) -> f64 {
        (100.0 * self.tie_tolerance).max(1e-8)
    }
}

impl Default for SelectionRule {
    fn default() -> Self {
        Self::min_norm()
    }
}

impl fmt::Display for SelectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectionKind::MinNorm => write!(f, "min_norm"),
            SelectionKind::Lexicographic => write!(f, "lexicographic"),
            SelectionKind::FixedIndex(i) => write!(f, "fixed_index:{i}"),
            SelectionKind::SignBias(s) if *s >= 0 => write!(f, "sign_bias:+"),
            SelectionKind::SignBias(_) => write!(f, "sign_bias:-"),
        }
    }
}

impl std::str::FromStr for SelectionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::ConfigError(format!("unknown selection rule `{s}`"));
        match s {
            "min_norm" | "MinNorm" => Ok(SelectionKind::MinNorm),
            "lexicographic" | "Lexicographic" => Ok(SelectionKind::Lexicographic),
            _ => {
                let (head, arg) = s.split_once(':').ok_or_else(bad)?;
                match head {
                    "fixed_index" => arg
                        .trim()
                        .parse()
                        .map(SelectionKind::FixedIndex)
                        .map_err(|_| bad()),
                    "sign_bias" => match arg.trim() {
                        "+" | "+1" | "1" => Ok(SelectionKind::SignBias(1)),
                        "-" | "-1" => Ok(SelectionKind::SignBias(-1)),
                        _ => Err(bad()),
                    },
                    _ => Err(bad()),
                }
            }
        }
    }
}

/// Oracle bundle for `φ₁` (lsc, possibly extended-valued) and `φ₂` (locally Lipschitz).
#[derive(Clone)]
pub struct ObjectiveSplit {
    pub dim: usize,
    pub phi1_value: ValueFn,
    pub phi1_prox: Option<ProxFn>,
    pub phi1_subgrad: SubdiffFn,
    pub phi2_value: ValueFn,
    /// Candidate Clarke subgradients of `φ₂`; selection happens in
    /// [`ObjectiveSplit::phi2_subgrad_select`].
    pub phi2_subgrad: SubdiffFn,
    pub phi2_lipschitz_bound: LipschitzFn,
    /// Set while `φ₂` is the constructor's zero function.
    pub phi2_is_zero: bool,
    pub domain_region: Region,
}

impl fmt::Debug for ObjectiveSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ObjectiveSplit")
            .field("dim", &self.dim)
            .field("has_prox", &self.phi1_prox.is_some())
            .field("domain_region", &self.domain_region)
            .finish_non_exhaustive()
    }
}

impl ObjectiveSplit {
    /// Objective with `φ₁ = φ₂ = 0` on the given region.
    pub fn new(domain_region: Region) -> Self {
        let dim = domain_region.dim();
        let zero_sub: SubdiffFn = Arc::new(move |_, _| Subdifferential::singleton(Vector::zeros(dim)));
        Self {
            dim,
            phi1_value: Arc::new(|_| 0.0),
            phi1_prox: Some(Arc::new(|_, x| x.clone())),
            phi1_subgrad: zero_sub.clone(),
            phi2_value: Arc::new(|_| 0.0),
            phi2_subgrad: zero_sub,
            phi2_lipschitz_bound: Arc::new(|_, _| 0.0),
            phi2_is_zero: true,
            domain_region,
        }
    }

    /// Replaces `φ₁`; the prox is cleared and must be re-attached with
    /// [`ObjectiveSplit::with_phi1_prox`] when a closed form exists.
    pub fn with_phi1(
        mut self,
        value: impl Fn(&Vector) -> f64 + Send + Sync + 'static,
        subgrad: impl Fn(&Vector, f64) -> Subdifferential + Send + Sync + 'static,
    ) -> Self {
        self.phi1_value = Arc::new(value);
        self.phi1_subgrad = Arc::new(subgrad);
        self.phi1_prox = None;
        self
    }

    pub fn with_phi1_prox(mut self, prox: impl Fn(f64, &Vector) -> Vector + Send + Sync + 'static) -> Self {
        self.phi1_prox = Some(Arc::new(prox));
        self
    }

    pub fn without_phi1_prox(mut self) -> Self {
        self.phi1_prox = None;
        self
    }

    pub fn with_phi2(
        mut self,
        value: impl Fn(&Vector) -> f64 + Send + Sync + 'static,
        subgrad: impl Fn(&Vector, f64) -> Subdifferential + Send + Sync + 'static,
        lipschitz: impl Fn(&Vector, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.phi2_value = Arc::new(value);
        self.phi2_subgrad = Arc::new(subgrad);
        self.phi2_lipschitz_bound = Arc::new(lipschitz);
        self.phi2_is_zero = false;
        self
    }

    pub fn phi1(&self, x: &Vector) -> f64 {
        (self.phi1_value)(x)
    }

    pub fn phi2(&self, x: &Vector) -> f64 {
        (self.phi2_value)(x)
    }

    /// Sampled `∂φ₂(x)`; an empty oracle answer is read as `{0}`.
    pub fn phi2_subdifferential(&self, x: &Vector, tie_tolerance: f64) -> Subdifferential {
        let s = (self.phi2_subgrad)(x, tie_tolerance);
        if s.is_empty() {
            Subdifferential::singleton(Vector::zeros(self.dim))
        } else {
            s
        }
    }

    /// Sampled `∂φ₁(x) + ∂φ₂(x)`.
    pub fn subdifferential(&self, x: &Vector, tie_tolerance: f64) -> Result<Subdifferential> {
        let s1 = (self.phi1_subgrad)(x, tie_tolerance);
        if s1.is_empty() {
            return Err(Error::EmptySubdifferential);
        }
        Ok(s1.minkowski_sum(&self.phi2_subdifferential(x, tie_tolerance)))
    }

    /// One Clarke subgradient of `φ₂` chosen by `rule`.
    pub fn phi2_subgrad_select(&self, x: &Vector, rule: &SelectionRule) -> Vector {
        let set = self.phi2_subdifferential(x, rule.tie_tolerance);
        select_from(&set, x, rule, |y| self.phi2(y))
    }
}

/// `φ(x) = φ₁(x) + φ₂(x)`; `+∞` from `φ₁` propagates.
pub fn eval_phi(obj: &ObjectiveSplit, x: &Vector) -> f64 {
    let v1 = obj.phi1(x);
    if v1 == f64::INFINITY {
        return f64::INFINITY;
    }
    v1 + obj.phi2(x)
}

/// One element of the sampled `∂φ₁(x) + ∂φ₂(x)`, chosen by `rule`.
pub fn subgrad_select(obj: &ObjectiveSplit, x: &Vector, rule: &SelectionRule) -> Result<Vector> {
    let set = obj.subdifferential(x, rule.tie_tolerance)?;
    Ok(select_from(&set, x, rule, |y| eval_phi(obj, y)))
}

fn select_from(set: &Subdifferential, x: &Vector, rule: &SelectionRule, value: impl Fn(&Vector) -> f64) -> Vector {
    match rule.kind {
        SelectionKind::MinNorm => set.min_norm_element(),
        SelectionKind::Lexicographic => set
            .vertices
            .iter()
            .min_by(|a, b| {
                a.iter()
                    .zip(b.iter())
                    .map(|(p, q)| p.total_cmp(q))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .cloned()
            .unwrap_or_else(|| set.min_norm_element()),
        SelectionKind::FixedIndex(i) => set.vertices[i % set.vertices.len()].clone(),
        SelectionKind::SignBias(sign) => {
            let sign = if sign >= 0 { 1.0 } else { -1.0 };
            // Alignment of the descent direction −g with sign·(1,…,1).
            let mut ranked: Vec<(f64, &Vector)> =
                set.vertices.iter().map(|g| (-sign * g.sum(), g)).collect();
            ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
            let base = value(x);
            let probe = rule.descent_probe();
            for (alignment, g) in ranked {
                if alignment <= 0.0 {
                    break;
                }
                let n = g.norm();
                if n == 0.0 {
                    continue;
                }
                if value(&(x - g * (probe / n))) < base {
                    return g.clone();
                }
            }
            set.min_norm_element()
        }
    }
}

/// `dist(0; ∂φ₁(x) + ∂φ₂(x))` over the sampled hull.
pub fn stationarity_residual(obj: &ObjectiveSplit, x: &Vector) -> Result<f64> {
    stationarity_residual_with(obj, x, DEFAULT_TIE_TOLERANCE)
}

pub fn stationarity_residual_with(obj: &ObjectiveSplit, x: &Vector, tie_tolerance: f64) -> Result<f64> {
    Ok(obj.subdifferential(x, tie_tolerance)?.distance_to_zero())
}

/// Sampled hypomonotonicity certificate for `∂φ₁` on a ball.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlrCertificate {
    pub center: Vector,
    pub radius: f64,
    pub c_estimate: f64,
    pub n_pairs: usize,
    /// `(x₁, ζ₁, x₂, ζ₂)` realising the largest required constant.
    pub worst_pair: Option<(Vector, Vector, Vector, Vector)>,
}

impl PlrCertificate {
    /// Slack of the hypomonotone inequality at one pair; nonnegative when the
    /// certificate covers it.
    pub fn margin(&self, x1: &Vector, z1: &Vector, x2: &Vector, z2: &Vector) -> f64 {
        let dx = x1 - x2;
        (z1 - z2).dot(&dx) + self.c_estimate * (1.0 + z1.norm() + z2.norm()) * dx.norm_squared()
    }
}

/// Smallest `c` with `⟨ζ₁−ζ₂, x₁−x₂⟩ ≥ −c(1+‖ζ₁‖+‖ζ₂‖)‖x₁−x₂‖²` over sampled pairs.
pub fn check_plr(obj: &ObjectiveSplit, center: &Vector, radius: f64, n_pairs: usize) -> Result<PlrCertificate> {
    check_plr_seeded(obj, center, radius, n_pairs, 0)
}

pub fn check_plr_seeded(
    obj: &ObjectiveSplit,
    center: &Vector,
    radius: f64,
    n_pairs: usize,
    seed: u64,
) -> Result<PlrCertificate> {
    if radius <= 0.0 || n_pairs < 2 {
        return Err(Error::InvalidParameter("check_plr needs radius > 0 and n_pairs >= 2".into()));
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let tol = DEFAULT_TIE_TOLERANCE;
    let samples = |x: &Vector| -> Vec<Vector> {
        let s = (obj.phi1_subgrad)(x, tol);
        let mut out = s.vertices.clone();
        for v in &s.vertices {
            for r in &s.rays {
                out.push(v + r);
            }
        }
        out
    };

    let mut c_max: f64 = 0.0;
    let mut worst = None;
    let mut any = false;
    for k in 0..n_pairs {
        let x1 = if k == 0 {
            center.clone()
        } else {
            center + sample_in_ball(center.len(), radius, &mut rng)
        };
        let x2 = center + sample_in_ball(center.len(), radius, &mut rng);
        let dx = &x1 - &x2;
        let d2 = dx.norm_squared();
        if d2 == 0.0 {
            continue;
        }
        let (s1, s2) = (samples(&x1), samples(&x2));
        for z1 in &s1 {
            for z2 in &s2 {
                any = true;
                let inner = (z1 - z2).dot(&dx);
                let needed = -inner / ((1.0 + z1.norm() + z2.norm()) * d2);
                if needed > c_max {
                    c_max = needed;
                    worst = Some((x1.clone(), z1.clone(), x2.clone(), z2.clone()));
                }
            }
        }
    }
    if !any {
        return Err(Error::EmptySubdifferential);
    }
    Ok(PlrCertificate {
        center: center.clone(),
        radius,
        c_estimate: c_max,
        n_pairs,
        worst_pair: worst,
    })
}

/// Reusable oracle pieces for the zoo and for tests.
pub mod oracles {
    use super::*;

    /// Sign-type subdifferential of `|t|` in one coordinate.
    pub fn abs_slopes(t: f64, tie: f64) -> Vec<f64> {
        if t.abs() <= tie {
            vec![-1.0, 1.0]
        } else {
            vec![t.signum()]
        }
    }

    /// Subdifferential of `‖x‖₁` as the box of per-coordinate slopes.
    pub fn l1_subdifferential(x: &Vector, tie: f64) -> Subdifferential {
        let mut vertices = vec![Vector::zeros(x.len())];
        for i in 0..x.len() {
            let slopes = abs_slopes(x[i], tie);
            let mut next = Vec::with_capacity(vertices.len() * slopes.len());
            for v in &vertices {
                for s in &slopes {
                    let mut w = v.clone();
                    w[i] = *s;
                    next.push(w);
                }
            }
            vertices = next;
        }
        Subdifferential::from_vertices(vertices)
    }

    /// Componentwise soft thresholding, the prox of `‖·‖₁`.
    pub fn soft_threshold(lambda: f64, x: &Vector) -> Vector {
        x.map(|t| t.signum() * (t.abs() - lambda).max(0.0))
    }

    /// `min{|x−1|, |x+1|}` (1-D).
    pub fn min_abs_pair(x: &Vector) -> f64 {
        (x[0] - 1.0).abs().min((x[0] + 1.0).abs())
    }

    /// Limiting subgradients of `min{|x−1|, |x+1|}`: slopes of every branch
    /// active within the tie tolerance.
    pub fn min_abs_pair_subdifferential(x: &Vector, tie: f64) -> Subdifferential {
        let t = x[0];
        let (a, b) = ((t - 1.0).abs(), (t + 1.0).abs());
        let mut slopes = Vec::new();
        if a <= b + tie {
            slopes.extend(abs_slopes(t - 1.0, tie));
        }
        if b <= a + tie {
            slopes.extend(abs_slopes(t + 1.0, tie));
        }
        slopes.sort_by(f64::total_cmp);
        slopes.dedup();
        Subdifferential::from_vertices(slopes.into_iter().map(|s| Vector::from_element(1, s)).collect())
    }
}
