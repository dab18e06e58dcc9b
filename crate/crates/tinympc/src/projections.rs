//! Closed-form Euclidean projections for the slack update, plus sphere
//! obstacle linearization.
//!
//! All projections are idempotent and nonexpansive. Multiple state
//! constraints at one knot are handled by a single sequential pass in a
//! fixed order — box, then hyperplanes, then half-spaces — so the
//! last-applied constraint is satisfied exactly and the ADMM outer loop
//! absorbs the remaining mismatch.

use nalgebra::DVector;
use thiserror::Error;

use crate::problem::{BoxBounds, ConstraintSet, HalfSpace, Hyperplane};

#[derive(Debug, Error, PartialEq)]
pub enum ProjectionError {
    #[error("position estimate coincides with the obstacle center")]
    DegenerateGeometry,
}

/// Per-knot view of the state constraints, in projection order.
#[derive(Debug, Clone, Copy)]
pub struct StepConstraints<'a> {
    pub state_box: Option<&'a BoxBounds>,
    pub planes: &'a [Hyperplane],
    pub halfspaces: &'a [HalfSpace],
}

impl ConstraintSet {
    /// Projection inputs for state knot `k`.
    pub fn step(&self, k: usize) -> StepConstraints<'_> {
        StepConstraints {
            state_box: self.state_box.as_ref(),
            planes: self.planes_at(k),
            halfspaces: self.halfspaces_at(k),
        }
    }
}

pub(crate) fn project_box_in_place(v: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..v.len() {
        v[i] = v[i].clamp(lo[i], hi[i]);
    }
}

pub(crate) fn project_halfspace_in_place(v: &mut [f64], hs: &HalfSpace) {
    let a = hs.a.as_slice();
    let dot: f64 = a.iter().zip(v.iter()).map(|(ai, vi)| ai * vi).sum();
    if dot <= hs.b {
        return;
    }
    let scale = (dot - hs.b) / hs.a.norm_squared();
    for i in 0..v.len() {
        v[i] -= scale * a[i];
    }
}

pub(crate) fn project_hyperplane_in_place(v: &mut [f64], pl: &Hyperplane) {
    let a = pl.a.as_slice();
    let dot: f64 = a.iter().zip(v.iter()).map(|(ai, vi)| ai * vi).sum();
    let scale = (dot - pl.b) / pl.a.norm_squared();
    for i in 0..v.len() {
        v[i] -= scale * a[i];
    }
}

pub(crate) fn project_state_set_in_place(v: &mut [f64], step: &StepConstraints<'_>) {
    if let Some(bx) = step.state_box {
        project_box_in_place(v, bx.lo.as_slice(), bx.hi.as_slice());
    }
    for pl in step.planes {
        project_hyperplane_in_place(v, pl);
    }
    for hs in step.halfspaces {
        project_halfspace_in_place(v, hs);
    }
}

/// Elementwise clamp of `v` to `[lo, hi]`.
pub fn project_box(v: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
    let mut out = v.clone();
    project_box_in_place(out.as_mut_slice(), lo.as_slice(), hi.as_slice());
    out
}

/// Euclidean projection onto `{x : a . x <= b}`; points already inside are
/// returned unchanged.
pub fn project_halfspace(v: &DVector<f64>, hs: &HalfSpace) -> DVector<f64> {
    let mut out = v.clone();
    project_halfspace_in_place(out.as_mut_slice(), hs);
    out
}

/// Euclidean projection onto the plane `{x : a . x = b}` (unconditional).
pub fn project_hyperplane(v: &DVector<f64>, a: &DVector<f64>, b: f64) -> DVector<f64> {
    let mut out = v.clone();
    project_hyperplane_in_place(
        out.as_mut_slice(),
        &Hyperplane {
            a: a.clone(),
            b,
        },
    );
    out
}

/// Sequential projection pass over one knot's state constraints: box clamp,
/// then each hyperplane, then each half-space.
pub fn project_state_set(v: &DVector<f64>, step: &StepConstraints<'_>) -> DVector<f64> {
    let mut out = v.clone();
    project_state_set_in_place(out.as_mut_slice(), step);
    out
}

/// Tangent-plane linearization of a spherical keep-out region.
///
/// The keep-out `|p - c| >= radius` is replaced by the half-space
/// `a . p <= b` tangent at the ray from the center toward `pos_estimate`:
/// `a = -(pos_estimate - c)/|pos_estimate - c|`, `b = a . c - radius`. The
/// returned half-space acts on the position coordinates only; use
/// [`HalfSpace::embed`] to lift it into the full state dimension.
pub fn linearize_sphere_obstacle(
    pos_estimate: &DVector<f64>,
    center: &DVector<f64>,
    radius: f64,
) -> Result<HalfSpace, ProjectionError> {
    let offset = pos_estimate - center;
    let dist = offset.norm();
    if dist <= 1e-9 {
        return Err(ProjectionError::DegenerateGeometry);
    }
    let a = -offset / dist;
    let b = a.dot(center) - radius;
    Ok(HalfSpace { a, b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn vec2(x: f64, y: f64) -> DVector<f64> {
        DVector::from_column_slice(&[x, y])
    }

    #[test]
    fn box_clamps_outside_points() {
        let lo = vec2(-1.0, -1.0);
        let hi = vec2(1.0, 1.0);
        assert_eq!(project_box(&vec2(2.0, -3.0), &lo, &hi), vec2(1.0, -1.0));
        assert_eq!(project_box(&vec2(0.3, 0.4), &lo, &hi), vec2(0.3, 0.4));
    }

    #[test]
    fn box_handles_one_sided_bounds() {
        let lo = vec2(f64::NEG_INFINITY, 0.0);
        let hi = vec2(0.0, f64::INFINITY);
        assert_eq!(project_box(&vec2(5.0, -5.0), &lo, &hi), vec2(0.0, 0.0));
    }

    #[test]
    fn halfspace_drops_violating_coordinate() {
        let hs = HalfSpace::new(vec2(1.0, 0.0), 0.0);
        assert_eq!(project_halfspace(&vec2(2.0, 3.0), &hs), vec2(0.0, 3.0));
        assert_eq!(project_halfspace(&vec2(-1.0, 3.0), &hs), vec2(-1.0, 3.0));
    }

    #[test]
    fn hyperplane_places_point_on_plane() {
        let a = DVector::from_column_slice(&[1.0, 0.0, 0.0]);
        let v = DVector::from_column_slice(&[0.3, 1.0, 2.0]);
        let p = project_hyperplane(&v, &a, 0.0);
        assert_relative_eq!(p[0], 0.0);
        assert_relative_eq!(p[1], 1.0);
        assert_relative_eq!(p[2], 2.0);
        // Already on the plane: unchanged.
        let q = project_hyperplane(&p, &a, 0.0);
        assert_eq!(p, q);
    }

    #[test]
    fn hyperplane_distance_identity() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let a = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0f64));
            if a.norm() < 1e-3 {
                continue;
            }
            let b = rng.random_range(-1.0..1.0);
            let v = DVector::from_fn(3, |_, _| rng.random_range(-5.0..5.0f64));
            let p = project_hyperplane(&v, &a, b);
            let dist = (v.clone() - &p).norm();
            assert_relative_eq!(dist, (a.dot(&v) - b).abs() / a.norm(), epsilon = 1e-12);
        }
    }

    #[test]
    fn state_set_empty_is_identity() {
        let step = StepConstraints {
            state_box: None,
            planes: &[],
            halfspaces: &[],
        };
        let v = vec2(3.0, -7.0);
        assert_eq!(project_state_set(&v, &step), v);
    }

    #[test]
    fn state_set_single_halfspace_matches_direct_projection() {
        let hs = vec![HalfSpace::new(vec2(0.6, -0.8), 0.25)];
        let step = StepConstraints {
            state_box: None,
            planes: &[],
            halfspaces: &hs,
        };
        let v = vec2(3.0, -7.0);
        assert_eq!(project_state_set(&v, &step), project_halfspace(&v, &hs[0]));
    }

    #[test]
    fn state_set_axis_aligned_box_and_halfspace_is_exact() {
        // Half-space normal aligned with a box axis: the sequential pass
        // equals the exact projection onto the intersection.
        let bx = BoxBounds::new(vec2(-1.0, -1.0), vec2(1.0, 1.0));
        let hs = vec![HalfSpace::new(vec2(1.0, 0.0), 0.5)];
        let step = StepConstraints {
            state_box: Some(&bx),
            planes: &[],
            halfspaces: &hs,
        };
        let v = vec2(2.0, 0.3);
        let p = project_state_set(&v, &step);
        assert_relative_eq!(p[0], 0.5);
        assert_relative_eq!(p[1], 0.3);
    }

    #[test]
    fn obstacle_linearization_keep_out_plane() {
        // Center at origin, radius 1, vehicle at (2, 0, 0): keep-out becomes
        // x >= 1, i.e. a = (-1, 0, 0), b = -1.
        let c = DVector::from_column_slice(&[0.0, 0.0, 0.0]);
        let p = DVector::from_column_slice(&[2.0, 0.0, 0.0]);
        let hs = linearize_sphere_obstacle(&p, &c, 1.0).unwrap();
        assert_relative_eq!(hs.a[0], -1.0);
        assert_relative_eq!(hs.a[1], 0.0);
        assert_relative_eq!(hs.a[2], 0.0);
        assert_relative_eq!(hs.b, -1.0);
    }

    #[test]
    fn obstacle_linearization_surface_point_is_tangent() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let c = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0f64));
            let dir = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0f64));
            if dir.norm() < 1e-3 {
                continue;
            }
            let r = rng.random_range(0.1..2.0);
            let surface = &c + dir.normalize() * r;
            let hs = linearize_sphere_obstacle(&surface, &c, r).unwrap();
            // The estimate lies on the boundary of its own linearization.
            assert_relative_eq!(hs.a.dot(&surface), hs.b, epsilon = 1e-12);
        }
    }

    #[test]
    fn estimate_outside_sphere_satisfies_own_constraint() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let c = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0f64));
            let p = DVector::from_fn(3, |_, _| rng.random_range(-4.0..4.0f64));
            let r = rng.random_range(0.1..1.0);
            if (&p - &c).norm() <= r {
                continue;
            }
            let hs = linearize_sphere_obstacle(&p, &c, r).unwrap();
            assert!(hs.a.dot(&p) <= hs.b + 1e-12);
        }
    }

    #[test]
    fn degenerate_estimate_is_an_error() {
        let c = DVector::from_column_slice(&[1.0, 2.0, 3.0]);
        assert_eq!(
            linearize_sphere_obstacle(&c.clone(), &c, 0.5),
            Err(ProjectionError::DegenerateGeometry)
        );
    }

    #[test]
    fn embed_places_coordinates_at_offset() {
        let hs = HalfSpace::new(vec2(1.0, -2.0), 3.0);
        let full = hs.embed(5, 2);
        assert_eq!(full.a.as_slice(), &[0.0, 0.0, 1.0, -2.0, 0.0]);
        assert_eq!(full.b, 3.0);
    }

    proptest! {
        #[test]
        fn box_projection_is_idempotent_and_feasible(
            vx in -10.0..10.0f64, vy in -10.0..10.0f64,
            l in -2.0..0.0f64, h in 0.0..2.0f64,
        ) {
            let lo = vec2(l, l);
            let hi = vec2(h, h);
            let v = vec2(vx, vy);
            let p = project_box(&v, &lo, &hi);
            prop_assert_eq!(project_box(&p, &lo, &hi), p.clone());
            prop_assert!(p.iter().zip(lo.iter()).all(|(x, l)| x >= l));
            prop_assert!(p.iter().zip(hi.iter()).all(|(x, h)| x <= h));
        }

        #[test]
        fn halfspace_projection_is_nonexpansive(
            ax in -1.0..1.0f64, ay in -1.0..1.0f64, b in -1.0..1.0f64,
            v1x in -5.0..5.0f64, v1y in -5.0..5.0f64,
            v2x in -5.0..5.0f64, v2y in -5.0..5.0f64,
        ) {
            prop_assume!(ax.abs() + ay.abs() > 1e-3);
            let hs = HalfSpace::new(vec2(ax, ay), b);
            let v1 = vec2(v1x, v1y);
            let v2 = vec2(v2x, v2y);
            let p1 = project_halfspace(&v1, &hs);
            let p2 = project_halfspace(&v2, &hs);
            prop_assert!((p1 - p2).norm() <= (v1 - v2).norm() + 1e-12);
        }

        #[test]
        fn halfspace_projection_lands_on_boundary(
            ax in -1.0..1.0f64, ay in -1.0..1.0f64, b in -1.0..1.0f64,
            vx in -5.0..5.0f64, vy in -5.0..5.0f64,
        ) {
            prop_assume!(ax.abs() + ay.abs() > 1e-3);
            let hs = HalfSpace::new(vec2(ax, ay), b);
            let v = vec2(vx, vy);
            prop_assume!(hs.a.dot(&v) > hs.b);
            let p = project_halfspace(&v, &hs);
            prop_assert!((hs.a.dot(&p) - hs.b).abs() < 1e-12);
        }
    }
}
