//! Euclidean projections onto the convex sets the algorithm, the oracle and
//! the scenarios need: boxes, halfspaces and their intersections.
//!
//! Intersections are projected with Dykstra's algorithm, which converges to
//! the true Euclidean projection (plain alternating projections only reach
//! some point of the intersection).

use crate::error::{Error, Result};
use crate::linalg::{dot, norm_sq};
use crate::scalar::Scalar;

pub const DEFAULT_MEMBERSHIP_TOL: f64 = 1e-9;
pub const DYKSTRA_TOL: f64 = 1e-10;
pub const DYKSTRA_MAX_SWEEPS: usize = 10_000;

#[derive(Clone, Debug, PartialEq)]
pub enum ConvexSet<T> {
    WholeSpace,
    Box { lower: Vec<T>, upper: Vec<T> },
    /// `{x : normal·x ≤ offset}`
    Halfspace { normal: Vec<T>, offset: T },
    Intersection(Vec<ConvexSet<T>>),
}

#[derive(Clone, Copy, Debug)]
pub struct DykstraOptions<T> {
    pub tol: T,
    pub max_sweeps: usize,
}

impl<T: Scalar> Default for DykstraOptions<T> {
    fn default() -> Self {
        Self {
            tol: T::tol_floor(DYKSTRA_TOL, 16.0),
            max_sweeps: DYKSTRA_MAX_SWEEPS,
        }
    }
}

impl<T: Scalar> ConvexSet<T> {
    pub fn boxed(lower: Vec<T>, upper: Vec<T>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                found: upper.len(),
            });
        }
        if let Some(k) = lower.iter().zip(&upper).position(|(l, u)| !(l <= u)) {
            return Err(Error::InvalidSet(format!(
                "box lower bound exceeds upper bound in coordinate {k}"
            )));
        }
        Ok(ConvexSet::Box { lower, upper })
    }

    pub fn halfspace(normal: Vec<T>, offset: T) -> Result<Self> {
        if norm_sq(&normal) == T::zero() || !offset.is_finite() {
            return Err(Error::InvalidSet("halfspace normal must be nonzero and offset finite".into()));
        }
        Ok(ConvexSet::Halfspace { normal, offset })
    }

    /// Intersection; nested intersections are flattened, and boxes together
    /// with halfspaces whose normal has a single nonzero entry are merged into
    /// one box.
    pub fn intersection(members: Vec<ConvexSet<T>>) -> Result<Self> {
        let mut flat = Vec::with_capacity(members.len());
        for m in members {
            match m {
                ConvexSet::Intersection(inner) => flat.extend(inner),
                ConvexSet::WholeSpace => {}
                other => flat.push(other),
            }
        }
        let dims: Vec<usize> = flat.iter().filter_map(ConvexSet::dim).collect();
        if let Some(&d) = dims.first() {
            if let Some(&bad) = dims.iter().find(|&&x| x != d) {
                return Err(Error::DimensionMismatch { expected: d, found: bad });
            }
            flat = merge_bounds(flat, d)?;
        }
        Ok(match flat.len() {
            0 => ConvexSet::WholeSpace,
            1 => flat.pop().expect("one member"),
            _ => ConvexSet::Intersection(flat),
        })
    }

    /// Ambient dimension, if the set fixes one.
    pub fn dim(&self) -> Option<usize> {
        match self {
            ConvexSet::WholeSpace => None,
            ConvexSet::Box { lower, .. } => Some(lower.len()),
            ConvexSet::Halfspace { normal, .. } => Some(normal.len()),
            ConvexSet::Intersection(m) => m.iter().find_map(ConvexSet::dim),
        }
    }

    fn check_dim(&self, point: &[T]) -> Result<()> {
        match self.dim() {
            Some(d) if d != point.len() => Err(Error::DimensionMismatch {
                expected: d,
                found: point.len(),
            }),
            _ => Ok(()),
        }
    }

    pub fn project(&self, point: &[T]) -> Result<Vec<T>> {
        self.project_with(point, &DykstraOptions::default())
    }

    pub fn project_with(&self, point: &[T], opts: &DykstraOptions<T>) -> Result<Vec<T>> {
        self.check_dim(point)?;
        match self {
            ConvexSet::WholeSpace => Ok(point.to_vec()),
            ConvexSet::Box { lower, upper } => Ok(point
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(&p, (&l, &u))| p.max(l).min(u))
                .collect()),
            ConvexSet::Halfspace { normal, offset } => {
                let excess = dot(normal, point) - *offset;
                if excess <= T::zero() {
                    Ok(point.to_vec())
                } else {
                    let k = excess / norm_sq(normal);
                    Ok(point.iter().zip(normal).map(|(&p, &a)| p - k * a).collect())
                }
            }
            ConvexSet::Intersection(members) => match members.as_slice() {
                [ConvexSet::Box { lower, upper }, ConvexSet::Halfspace { normal, offset }]
                | [ConvexSet::Halfspace { normal, offset }, ConvexSet::Box { lower, upper }] => {
                    box_halfspace(lower, upper, normal, *offset, point)
                }
                _ => dykstra(members, point, opts),
            },
        }
    }

    pub fn contains(&self, point: &[T], tol: T) -> Result<bool> {
        self.check_dim(point)?;
        Ok(match self {
            ConvexSet::WholeSpace => true,
            ConvexSet::Box { lower, upper } => point
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(&p, (&l, &u))| p >= l - tol && p <= u + tol),
            ConvexSet::Halfspace { normal, offset } => {
                // distance to the boundary plane, so tol is a length
                let excess = (dot(normal, point) - *offset) / norm_sq(normal).sqrt();
                excess <= tol
            }
            ConvexSet::Intersection(members) => {
                for m in members {
                    if !m.contains(point, tol)? {
                        return Ok(false);
                    }
                }
                true
            }
        })
    }
}

fn merge_bounds<T: Scalar>(members: Vec<ConvexSet<T>>, dim: usize) -> Result<Vec<ConvexSet<T>>> {
    let mut lower = vec![T::neg_infinity(); dim];
    let mut upper = vec![T::infinity(); dim];
    let mut merged = 0;
    let mut rest = Vec::with_capacity(members.len());
    for m in members {
        match m {
            ConvexSet::Box { lower: l, upper: u } => {
                for k in 0..dim {
                    lower[k] = lower[k].max(l[k]);
                    upper[k] = upper[k].min(u[k]);
                }
                merged += 1;
            }
            ConvexSet::Halfspace { normal, offset } if normal.iter().filter(|&&a| a != T::zero()).count() == 1 => {
                let k = normal.iter().position(|&a| a != T::zero()).expect("one nonzero entry");
                let bound = offset / normal[k];
                if normal[k] > T::zero() {
                    upper[k] = upper[k].min(bound);
                } else {
                    lower[k] = lower[k].max(bound);
                }
                merged += 1;
            }
            other => rest.push(other),
        }
    }
    if merged == 0 {
        return Ok(rest);
    }
    if let Some(k) = (0..dim).find(|&k| lower[k] > upper[k]) {
        return Err(Error::InvalidSet(format!("empty intersection in coordinate {k}")));
    }
    rest.insert(0, ConvexSet::Box { lower, upper });
    Ok(rest)
}

/// Exact projection onto `{l ≤ x ≤ u, aᵀx ≤ b}`: `x(λ) = clamp(p − λa)` with
/// the multiplier `λ ≥ 0` found on the piecewise-linear map `λ ↦ aᵀx(λ)`.
/// Dykstra only converges sublinearly when the halfspace barely touches the box.
fn box_halfspace<T: Scalar>(lower: &[T], upper: &[T], normal: &[T], offset: T, point: &[T]) -> Result<Vec<T>> {
    let at = |lambda: T| -> Vec<T> {
        point
            .iter()
            .zip(normal)
            .zip(lower.iter().zip(upper))
            .map(|((&p, &a), (&l, &u))| (p - lambda * a).max(l).min(u))
            .collect()
    };
    let excess = |lambda: T| dot(normal, &at(lambda)) - offset;
    let g0 = excess(T::zero());
    if g0 <= T::zero() {
        return Ok(at(T::zero()));
    }
    let mut knots: Vec<T> = Vec::with_capacity(2 * point.len());
    for ((&p, &a), (&l, &u)) in point.iter().zip(normal).zip(lower.iter().zip(upper)) {
        if a != T::zero() {
            for bound in [l, u] {
                let k = (p - bound) / a;
                if k > T::zero() && k.is_finite() {
                    knots.push(k);
                }
            }
        }
    }
    knots.sort_by(|a, b| a.partial_cmp(b).expect("finite knots"));
    let (mut lo, mut g_lo) = (T::zero(), g0);
    for k in knots {
        let g = excess(k);
        if g <= T::zero() {
            // linear between consecutive knots
            let lambda = lo + g_lo * (k - lo) / (g_lo - g);
            return Ok(at(lambda));
        }
        lo = k;
        g_lo = g;
    }
    Err(Error::InvalidSet("box and halfspace do not intersect".into()))
}

fn dykstra<T: Scalar>(members: &[ConvexSet<T>], point: &[T], opts: &DykstraOptions<T>) -> Result<Vec<T>> {
    let n = point.len();
    let mut x = point.to_vec();
    let mut increments = vec![vec![T::zero(); n]; members.len()];
    let mut residual = T::infinity();
    for _sweep in 0..opts.max_sweeps {
        let mut moved = T::zero();
        for (set, inc) in members.iter().zip(increments.iter_mut()) {
            let shifted: Vec<T> = x.iter().zip(inc.iter()).map(|(&a, &b)| a + b).collect();
            let y = set.project_with(&shifted, opts)?;
            for k in 0..n {
                inc[k] = shifted[k] - y[k];
                let d = y[k] - x[k];
                moved = moved + d * d;
            }
            x = y;
        }
        residual = moved.sqrt();
        if residual <= opts.tol {
            return Ok(x);
        }
    }
    Err(Error::NonConvergent {
        sweeps: opts.max_sweeps,
        residual: residual.as_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box() -> ConvexSet<f64> {
        ConvexSet::boxed(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap()
    }

    #[test]
    fn box_clamps() {
        assert_eq!(unit_box().project(&[1.5, 0.5]).unwrap(), vec![1.0, 0.5]);
    }

    #[test]
    fn halfspace_drops_orthogonally() {
        let h = ConvexSet::halfspace(vec![1.0, 0.0], 0.0).unwrap();
        assert_eq!(h.project(&[2.0, 3.0]).unwrap(), vec![0.0, 3.0]);
        assert_eq!(h.project(&[-2.0, 3.0]).unwrap(), vec![-2.0, 3.0]);
    }

    #[test]
    fn box_and_halfspace_intersection() {
        // min ‖x − (2,2)‖ s.t. x ∈ [0,2]², x₁ + x₂ ≤ 1. KKT: x = (2,2) − λ(1,1),
        // active halfspace gives 4 − 2λ = 1, λ = 3/2, x = (1/2, 1/2) inside the box.
        let set = ConvexSet::intersection(vec![
            ConvexSet::boxed(vec![0.0, 0.0], vec![2.0, 2.0]).unwrap(),
            ConvexSet::halfspace(vec![1.0, 1.0], 1.0).unwrap(),
        ])
        .unwrap();
        let p: Vec<f64> = set.project(&[2.0, 2.0]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-9 && (p[1] - 0.5).abs() < 1e-9, "{p:?}");
        assert!(set.contains(&p, 1e-9).unwrap());
    }

    #[test]
    fn intersection_with_corner_solution() {
        // point far below-left: the box corner (0,0) is the projection
        let set = ConvexSet::intersection(vec![
            ConvexSet::boxed(vec![0.0, 0.0], vec![2.0, 2.0]).unwrap(),
            ConvexSet::halfspace(vec![1.0, 1.0], 1.0).unwrap(),
        ])
        .unwrap();
        let p: Vec<f64> = set.project(&[-3.0, -1.0]).unwrap();
        assert!(p[0].abs() < 1e-9 && p[1].abs() < 1e-9);
    }

    #[test]
    fn halfspace_touching_box_corner() {
        // the only feasible point is the corner (0, 0)
        let set = ConvexSet::intersection(vec![
            ConvexSet::boxed(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap(),
            ConvexSet::halfspace(vec![1.0, 1.0], 0.0).unwrap(),
        ])
        .unwrap();
        assert_eq!(set.project(&[3.0, 0.5]).unwrap(), vec![0.0, 0.0]);
        let disjoint = ConvexSet::intersection(vec![
            ConvexSet::boxed(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap(),
            ConvexSet::halfspace(vec![1.0, 1.0], -0.5).unwrap(),
        ])
        .unwrap();
        assert!(disjoint.project(&[3.0, 0.5]).is_err());
    }

    #[test]
    fn empty_intersection_does_not_converge() {
        let set = ConvexSet::intersection(vec![
            ConvexSet::halfspace(vec![1.0, 1.0], 0.0).unwrap(),
            ConvexSet::halfspace(vec![-1.0, -1.0], -1.0).unwrap(),
        ])
        .unwrap();
        let opts = DykstraOptions { tol: 1e-10, max_sweeps: 200 };
        assert!(matches!(
            set.project_with(&[0.5, 0.0], &opts),
            Err(Error::NonConvergent { .. })
        ));
    }

    #[test]
    fn contains_tolerance_semantics() {
        let b = ConvexSet::boxed(vec![0.0], vec![1.0]).unwrap();
        assert!(b.contains(&[0.5], 0.0).unwrap());
        assert!(b.contains(&[1.0 + 1e-12], 1e-9).unwrap());
        let h = ConvexSet::halfspace(vec![1.0], 0.0).unwrap();
        assert!(!h.contains(&[1e-3], 1e-9).unwrap());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        assert_eq!(
            unit_box().project(&[1.0]).unwrap_err(),
            Error::DimensionMismatch { expected: 2, found: 1 }
        );
        assert!(unit_box().contains(&[1.0, 2.0, 3.0], 0.0).is_err());
    }

    #[test]
    fn invalid_box_rejected() {
        assert!(ConvexSet::boxed(vec![1.0], vec![0.0]).is_err());
        assert!(ConvexSet::<f64>::halfspace(vec![0.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn nested_intersections_flatten() {
        let inner = ConvexSet::intersection(vec![unit_box(), ConvexSet::WholeSpace]).unwrap();
        assert_eq!(inner, unit_box());
        let outer = ConvexSet::intersection(vec![
            ConvexSet::Intersection(vec![unit_box(), ConvexSet::halfspace(vec![1.0, 1.0], 0.5).unwrap()]),
            ConvexSet::halfspace(vec![1.0, -1.0], 0.5).unwrap(),
        ])
        .unwrap();
        match outer {
            ConvexSet::Intersection(m) => assert_eq!(m.len(), 3),
            _ => panic!("expected intersection"),
        }
    }

    #[test]
    fn coordinate_halfspaces_merge_into_box() {
        let set = ConvexSet::intersection(vec![
            unit_box(),
            ConvexSet::halfspace(vec![2.0, 0.0], 1.0).unwrap(),
            ConvexSet::halfspace(vec![0.0, -1.0], -0.25).unwrap(),
        ])
        .unwrap();
        assert_eq!(set, ConvexSet::boxed(vec![0.0, 0.25], vec![0.5, 1.0]).unwrap());
        let empty = ConvexSet::intersection(vec![unit_box(), ConvexSet::halfspace(vec![-1.0, 0.0], -2.0).unwrap()]);
        assert!(empty.is_err());
    }

    #[test]
    fn works_in_f32() {
        let b = ConvexSet::<f32>::boxed(vec![0.0], vec![1.0]).unwrap();
        assert_eq!(b.project(&[2.0]).unwrap(), vec![1.0f32]);
    }
}
