//! Minimum-norm points of `conv(vertices) + cone(rays)`.

use nalgebra::{DMatrix, DVector};

use crate::Vector;

/// Minimum-norm element of `conv(vertices) + cone(rays)`.
///
/// One-dimensional sets and a single vertex with axis-aligned rays are
/// solved in closed form; everything else goes through a Wolfe-style active
/// set on the convex weights.
pub(crate) fn min_norm_point(vertices: &[Vector], rays: &[Vector]) -> Vector {
    assert!(!vertices.is_empty(), "min_norm_point needs at least one vertex");
    let dim = vertices[0].len();
    if rays.is_empty() && vertices.len() == 1 {
        return vertices[0].clone();
    }
    if dim == 1 {
        return Vector::from_element(1, min_norm_interval(vertices, rays));
    }
    if vertices.len() == 1 && rays.iter().all(is_axis_aligned) {
        return clip_along_axes(&vertices[0], rays);
    }
    min_norm_active_set(vertices, rays)
}

fn min_norm_interval(vertices: &[Vector], rays: &[Vector]) -> f64 {
    let mut lo = vertices.iter().map(|v| v[0]).fold(f64::INFINITY, f64::min);
    let mut hi = vertices.iter().map(|v| v[0]).fold(f64::NEG_INFINITY, f64::max);
    for r in rays {
        if r[0] > 0.0 {
            hi = f64::INFINITY;
        } else if r[0] < 0.0 {
            lo = f64::NEG_INFINITY;
        }
    }
    0.0_f64.clamp(lo, hi)
}

fn is_axis_aligned(r: &Vector) -> bool {
    r.iter().filter(|c| **c != 0.0).count() == 1
}

fn clip_along_axes(g: &Vector, rays: &[Vector]) -> Vector {
    let mut out = g.clone();
    for i in 0..g.len() {
        let up = rays.iter().any(|r| r[i] > 0.0);
        let down = rays.iter().any(|r| r[i] < 0.0);
        let gi = g[i];
        out[i] = match (up, down) {
            (true, true) => 0.0,
            (true, false) if gi < 0.0 => 0.0,
            (false, true) if gi > 0.0 => 0.0,
            _ => gi,
        };
    }
    out
}

/// Wolfe-style primal active set for `min ‖M c‖` subject to
/// `Σ_vertices c = 1`, `c ≥ 0`, where the columns of `M` are the vertices
/// followed by the normalised rays.
fn min_norm_active_set(vertices: &[Vector], rays: &[Vector]) -> Vector {
    let dim = vertices[0].len();
    let nv = vertices.len();
    let cols: Vec<Vector> = vertices
        .iter()
        .cloned()
        .chain(rays.iter().filter(|r| r.norm() > 0.0).map(|r| r.normalize()))
        .collect();
    let n = cols.len();
    let scale = 1.0 + cols.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let tol = 1e-14 * scale * scale;
    let point_of = |c: &DVector<f64>| {
        let mut p = Vector::zeros(dim);
        for (j, col) in cols.iter().enumerate() {
            if c[j] != 0.0 {
                p.axpy(c[j], col, 1.0);
            }
        }
        p
    };

    let start = (0..nv)
        .min_by(|&i, &j| cols[i].norm_squared().total_cmp(&cols[j].norm_squared()))
        .unwrap();
    let mut c = DVector::zeros(n);
    c[start] = 1.0;
    let mut support = vec![start];

    for _ in 0..100 * (n + 1) {
        let p = point_of(&c);
        let pp = p.norm_squared();
        // Most violated optimality condition: p·v ≥ ‖p‖² for vertices, p·r ≥ 0 for rays.
        let entering = (0..n)
            .filter(|j| !support.contains(j))
            .map(|j| (j, cols[j].dot(&p) - if j < nv { pp } else { 0.0 }))
            .filter(|&(_, g)| g < -tol)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        let Some((j, _)) = entering else { break };
        support.push(j);

        // Minor cycle: move towards the affine minimiser on the support,
        // dropping coefficients that hit zero on the way.
        loop {
            let z = affine_minimizer(&cols, nv, &support);
            if z.iter().all(|&v| v > 0.0) {
                for (k, &j) in support.iter().enumerate() {
                    c[j] = z[k];
                }
                break;
            }
            let (mut theta, mut blocking) = (f64::INFINITY, 0);
            for (k, &j) in support.iter().enumerate() {
                if z[k] <= 0.0 {
                    let t = c[j] / (c[j] - z[k]);
                    if t < theta {
                        (theta, blocking) = (t, j);
                    }
                }
            }
            for (k, &j) in support.iter().enumerate() {
                c[j] += theta * (z[k] - c[j]);
            }
            c[blocking] = 0.0;
            support.retain(|&j| c[j] > 0.0);
            for j in 0..n {
                if !support.contains(&j) {
                    c[j] = 0.0;
                }
            }
        }
    }
    let mass: f64 = c.rows(0, nv).sum();
    point_of(&c) / if mass > 0.0 { mass } else { 1.0 }
}

/// Minimiser of `‖Σ_{j∈S} c_j m_j‖` subject to `Σ_{vertices in S} c_j = 1`
/// (signs unconstrained), from the KKT system; least-norm when singular.
fn affine_minimizer(cols: &[Vector], nv: usize, support: &[usize]) -> DVector<f64> {
    let s = support.len();
    let mut kkt = DMatrix::zeros(s + 1, s + 1);
    for (a, &i) in support.iter().enumerate() {
        for (b, &j) in support.iter().enumerate() {
            kkt[(a, b)] = cols[i].dot(&cols[j]);
        }
        if i < nv {
            kkt[(a, s)] = 1.0;
            kkt[(s, a)] = 1.0;
        }
    }
    let mut rhs = DVector::zeros(s + 1);
    rhs[s] = 1.0;
    let sol = kkt
        .svd(true, true)
        .solve(&rhs, 1e-13)
        .expect("svd was computed with both factors");
    sol.rows(0, s).into_owned()
}


#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dvector;

    #[test]
    fn interval_contains_zero() {
        let v = [dvector![-1.0], dvector![1.0]];
        assert_eq!(min_norm_point(&v, &[])[0], 0.0);
    }

    #[test]
    fn interval_positive_side() {
        let v = [dvector![0.5], dvector![2.0]];
        assert_eq!(min_norm_point(&v, &[])[0], 0.5);
        assert_eq!(min_norm_point(&v, &[dvector![-1.0]])[0], 0.0);
    }

    #[test]
    fn axis_rays_clip_outward_components() {
        let g = dvector![-1.0, 0.5];
        let rays = [dvector![1.0, 0.0], dvector![0.0, -1.0]];
        let p = min_norm_point(std::slice::from_ref(&g), &rays);
        assert_eq!(p, dvector![0.0, 0.0]);
        let p = min_norm_point(std::slice::from_ref(&g), &rays[..1]);
        assert_eq!(p, dvector![0.0, 0.5]);
    }

    #[test]
    fn segment_projection_in_plane() {
        // Segment from (1, -1) to (1, 1): nearest point to the origin is (1, 0).
        let v = [dvector![1.0, -1.0], dvector![1.0, 1.0]];
        let p = min_norm_point(&v, &[]);
        assert_abs_diff_eq!(p[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(p[1], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn triangle_containing_origin() {
        let v = [dvector![1.0, 0.0], dvector![-1.0, 1.0], dvector![-1.0, -1.0]];
        let p = min_norm_point(&v, &[]);
        assert!(p.norm() < 1e-12, "{p}");
    }

    #[test]
    fn thin_triangle_containing_origin() {
        let v = [
            dvector![0.4204992267497104, -2.317172840880002],
            dvector![-0.5015551338458206, 2.9047767393469495],
            dvector![-0.29939145712451265, 1.5373178148946716],
        ];
        assert!(min_norm_point(&v, &[]).norm() < 1e-12);
    }

    #[test]
    fn oblique_ray_from_vertex() {
        // {(2, 1) + t(-1, -1)}: nearest point to the origin is (0.5, -0.5).
        let p = min_norm_point(&[dvector![2.0, 1.0]], &[dvector![-1.0, -1.0]]);
        assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], -0.5, epsilon = 1e-12);
    }
}
