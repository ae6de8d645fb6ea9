//! Reference computations shared by the integration suites. Nothing here
//! calls into the solver, projection or stability code of the crate.

#![allow(dead_code)]

use aggtrack::algorithm::RoundRecord;
use aggtrack::problem::ProblemInstant;
use aggtrack::scenarios::quadratic::QuadraticFamily;
use nalgebra::{DMatrix, DVector, Matrix3};

/// Stacked data of a quadratic instance at round `t`: the cost is
/// `½xᵀHx + gᵀx + const` over the box `[lo, hi]` (±∞ when unconstrained).
pub struct StackedQp {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
    pub dims: Vec<usize>,
}

pub fn stacked_qp(fam: &QuadraticFamily, t: usize) -> StackedQp {
    let agents = fam.agents();
    let n = agents.len() as f64;
    let dims: Vec<usize> = agents.iter().map(|a| a.hessian.rows()).collect();
    let total: usize = dims.iter().sum();
    let d = fam.target_at(t).len();
    let mut big_b = DMatrix::zeros(d, total);
    let mut h = DMatrix::zeros(total, total);
    let mut q = DVector::zeros(total);
    let mut lo = DVector::from_element(total, f64::NEG_INFINITY);
    let mut hi = DVector::from_element(total, f64::INFINITY);
    let mut r_bar = DVector::zeros(d);
    let mut off = 0;
    for (i, a) in agents.iter().enumerate() {
        let ni = dims[i];
        for r in 0..ni {
            for c in 0..ni {
                h[(off + r, off + c)] = a.hessian[(r, c)];
            }
            q[off + r] = fam.linear_at(i, t)[r];
            if let Some((l, u)) = &a.bounds {
                lo[off + r] = l[r];
                hi[off + r] = u[r];
            }
        }
        for r in 0..d {
            for c in 0..ni {
                big_b[(r, off + c)] = a.agg[(r, c)];
            }
        }
        r_bar += DVector::from_vec(fam.offset_at(i, t)) / n;
        off += ni;
    }
    // σ = Bx/N + r̄ and Σ_i (c_i/2)‖σ − b‖²
    let sum_c: f64 = agents.iter().map(|a| a.coupling).sum();
    let b = DVector::from_vec(fam.target_at(t));
    let bt = big_b.transpose();
    h += &bt * &big_b * (sum_c / (n * n));
    let g = q + &bt * (r_bar - b) * (sum_c / n);
    StackedQp { h, g, lo, hi, dims }
}

/// Minimizer of a strictly convex box-constrained QP by enumerating every
/// assignment of each coordinate to {free, lower, upper} and keeping the one
/// satisfying the KKT conditions.
pub fn kkt_box_qp(qp: &StackedQp) -> DVector<f64> {
    let n = qp.g.len();
    if qp.lo.iter().chain(qp.hi.iter()).all(|b| !b.is_finite()) {
        return qp.h.clone().lu().solve(&(-&qp.g)).expect("nonsingular Hessian");
    }
    assert!(n <= 8, "enumeration is exponential");
    let mut best: Option<(f64, DVector<f64>)> = None;
    let combos = 3usize.pow(n as u32);
    'outer: for code in 0..combos {
        let mut state = vec![0u8; n];
        let mut c = code;
        for s in state.iter_mut() {
            *s = (c % 3) as u8;
            c /= 3;
        }
        let mut x = DVector::zeros(n);
        for k in 0..n {
            match state[k] {
                1 if qp.lo[k].is_finite() => x[k] = qp.lo[k],
                2 if qp.hi[k].is_finite() => x[k] = qp.hi[k],
                0 => {}
                _ => continue 'outer,
            }
        }
        let free: Vec<usize> = (0..n).filter(|&k| state[k] == 0).collect();
        if !free.is_empty() {
            let hff = DMatrix::from_fn(free.len(), free.len(), |r, c| qp.h[(free[r], free[c])]);
            let rhs = DVector::from_fn(free.len(), |r, _| {
                let k = free[r];
                -qp.g[k] - (0..n).filter(|j| state[*j] != 0).map(|j| qp.h[(k, j)] * x[j]).sum::<f64>()
            });
            let Some(sol) = hff.lu().solve(&rhs) else { continue };
            for (r, &k) in free.iter().enumerate() {
                x[k] = sol[r];
            }
        }
        let grad = &qp.h * &x + &qp.g;
        let tol = 1e-10 * (1.0 + grad.amax());
        let ok = (0..n).all(|k| match state[k] {
            0 => x[k] >= qp.lo[k] - 1e-12 && x[k] <= qp.hi[k] + 1e-12,
            1 => grad[k] >= -tol,
            _ => grad[k] <= tol,
        });
        if ok {
            let f = 0.5 * x.dot(&(&qp.h * &x)) + qp.g.dot(&x);
            if best.as_ref().map_or(true, |(bf, _)| f < *bf) {
                best = Some((f, x));
            }
        }
    }
    best.expect("a strictly convex QP has a KKT point").1
}

pub fn unstack(x: &DVector<f64>, dims: &[usize]) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut off = 0;
    for &n in dims {
        out.push(x.rows(off, n).iter().copied().collect());
        off += n;
    }
    out
}

pub fn stack(x: &[Vec<f64>]) -> DVector<f64> {
    DVector::from_iterator(x.iter().map(Vec::len).sum(), x.iter().flatten().copied())
}

/// Comparison matrices written out entry by entry.
pub struct Comparison {
    pub m: Matrix3<f64>,
    pub b: Matrix3<f64>,
}

pub fn comparison_matrices(mu: f64, l1: f64, l2: f64, l3: f64, rho: f64, alpha: f64, delta: f64) -> Comparison {
    let k = l2 + l2 * l3;
    #[rustfmt::skip]
    let m0 = Matrix3::new(
        1.0, 0.0, 0.0,
        0.0, rho, 0.0,
        0.0, 2.0 * l2, rho,
    );
    #[rustfmt::skip]
    let e = Matrix3::new(
        -mu * alpha, alpha * l1, alpha * l3,
        2.0 * l3 + alpha * l1 * l3 + alpha * l1 * l3 * l3, alpha * l1 * l3, alpha * l3 * l3,
        (2.0 + alpha * l1 + alpha * l1) * k, alpha * l1 * k, alpha * l3 * k,
    );
    #[rustfmt::skip]
    let b = Matrix3::new(
        1.0, 0.0, 0.0,
        0.0, 1.0, 1.0,
        0.0, 1.0, l2,
    );
    Comparison { m: m0 + e * delta, b }
}

pub fn spectral_radius(m: &Matrix3<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Relative deviations `‖s̄ − σ(x)‖/max(1, ‖σ(x)‖)` and
/// `‖ȳ − mean ∇₂f_i(x_i, s_i)‖/max(1, ‖·‖)` of one round.
pub fn tracking_deviation(rec: &RoundRecord<f64>, instant: &ProblemInstant<f64>) -> (f64, f64) {
    let n = rec.x.len();
    let d = rec.s[0].len();
    let mut sigma = vec![0.0; d];
    let mut grad = vec![0.0; d];
    let mut s_bar = vec![0.0; d];
    let mut y_bar = vec![0.0; d];
    for i in 0..n {
        let agent = instant.agent(i);
        let phi = agent.aggregation.apply(&rec.x[i]);
        let g2 = agent.cost.grad_sigma(&rec.x[i], &rec.s[i]);
        for k in 0..d {
            sigma[k] += phi[k] / n as f64;
            grad[k] += g2[k] / n as f64;
            s_bar[k] += rec.s[i][k] / n as f64;
            y_bar[k] += rec.y[i][k] / n as f64;
        }
    }
    let rel = |a: &[f64], b: &[f64]| {
        let diff = a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
        let scale = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
        diff / scale
    };
    (rel(&s_bar, &sigma), rel(&y_bar, &grad))
}

/// Coefficient of determination of the least-squares line through `(x, y)`.
pub fn r_squared(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    (1.0 - ss_res / ss_tot, slope)
}
