//! Concrete local costs and aggregation maps.

use crate::linalg::{axpy, dot, norm, sub, Matrix};
use crate::problem::{Aggregation, LocalCost};
use crate::scalar::Scalar;

/// `f(x, σ) = ½ xᵀPx + qᵀx + k + (c/2)‖σ − b‖²`
#[derive(Clone, Debug)]
pub struct QuadraticCost<T> {
    pub hessian: Matrix<T>,
    pub linear: Vec<T>,
    pub constant: T,
    pub coupling: T,
    pub target: Vec<T>,
}

impl<T: Scalar> QuadraticCost<T> {
    /// `½‖x − anchor‖² + (c/2)‖σ − target‖²`
    pub fn tracking(anchor: Vec<T>, coupling: T, target: Vec<T>) -> Self {
        let n = anchor.len();
        let half = T::lit(0.5);
        Self {
            hessian: Matrix::identity(n),
            constant: half * dot(&anchor, &anchor),
            linear: anchor.into_iter().map(|a| -a).collect(),
            coupling,
            target,
        }
    }
}

impl<T: Scalar> LocalCost<T> for QuadraticCost<T> {
    fn value(&self, x: &[T], sigma: &[T]) -> T {
        let half = T::lit(0.5);
        let hx = self.hessian.mul_vec(x);
        let e = sub(sigma, &self.target);
        half * dot(x, &hx) + dot(&self.linear, x) + self.constant + half * self.coupling * dot(&e, &e)
    }

    fn grad_x(&self, x: &[T], _sigma: &[T]) -> Vec<T> {
        let mut g = self.hessian.mul_vec(x);
        axpy(&mut g, T::one(), &self.linear);
        g
    }

    fn grad_sigma(&self, _x: &[T], sigma: &[T]) -> Vec<T> {
        sigma
            .iter()
            .zip(&self.target)
            .map(|(&s, &b)| self.coupling * (s - b))
            .collect()
    }
}

/// Huber-smoothed Euclidean norm with radius `r`: `‖v‖²/(2r)` inside the
/// ball, `‖v‖ − r/2` outside. Continuously differentiable with
/// `1/r`-Lipschitz gradient.
pub fn huber<T: Scalar>(v: &[T], radius: T) -> T {
    let n = norm(v);
    if n <= radius {
        n * n / (T::lit(2.0) * radius)
    } else {
        n - radius / T::lit(2.0)
    }
}

pub fn huber_grad<T: Scalar>(v: &[T], radius: T) -> Vec<T> {
    let n = norm(v).max(radius);
    v.iter().map(|&x| x / n).collect()
}

/// `f(x, σ) = H(x − anchor) + w·H(σ − target)` with `H` the Huber-smoothed norm.
#[derive(Clone, Debug)]
pub struct HuberTrackingCost<T> {
    pub anchor: Vec<T>,
    pub target: Vec<T>,
    pub weight: T,
    pub radius: T,
}

impl<T: Scalar> LocalCost<T> for HuberTrackingCost<T> {
    fn value(&self, x: &[T], sigma: &[T]) -> T {
        huber(&sub(x, &self.anchor), self.radius) + self.weight * huber(&sub(sigma, &self.target), self.radius)
    }

    fn grad_x(&self, x: &[T], _sigma: &[T]) -> Vec<T> {
        huber_grad(&sub(x, &self.anchor), self.radius)
    }

    fn grad_sigma(&self, _x: &[T], sigma: &[T]) -> Vec<T> {
        huber_grad(&sub(sigma, &self.target), self.radius)
            .into_iter()
            .map(|g| g * self.weight)
            .collect()
    }
}

/// `φ(x) = Bx + r` with `B ∈ ℝ^{d×n}`.
#[derive(Clone, Debug)]
pub struct LinearAggregation<T> {
    matrix: Matrix<T>,
    offset: Vec<T>,
}

impl<T: Scalar> LinearAggregation<T> {
    pub fn new(matrix: Matrix<T>, offset: Vec<T>) -> Self {
        assert_eq!(matrix.rows(), offset.len(), "offset must have one entry per output");
        Self { matrix, offset }
    }

    /// `φ(x) = βx`
    pub fn scaled_identity(dim: usize, beta: T) -> Self {
        Self {
            matrix: Matrix::scaled_identity(dim, beta),
            offset: vec![T::zero(); dim],
        }
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.matrix
    }

    pub fn offset(&self) -> &[T] {
        &self.offset
    }
}

impl<T: Scalar> Aggregation<T> for LinearAggregation<T> {
    fn dim_in(&self) -> usize {
        self.matrix.cols()
    }

    fn dim_out(&self) -> usize {
        self.matrix.rows()
    }

    fn apply(&self, x: &[T]) -> Vec<T> {
        let mut y = self.matrix.mul_vec(x);
        axpy(&mut y, T::one(), &self.offset);
        y
    }

    fn jacobian(&self, _x: &[T]) -> Matrix<T> {
        self.matrix.transpose()
    }

    fn jacobian_apply(&self, _x: &[T], v: &[T]) -> Vec<T> {
        self.matrix.tr_mul_vec(v)
    }
}
