//! Clamped cubic B-spline least-squares fitting with pinned endpoints.

use crate::scalar::Real;

const DEGREE: usize = 3;

/// Clamped cubic B-spline over `[knots[3], knots[n]]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CubicBSpline<T> {
    knots: Vec<T>,
    control: Vec<T>,
}

impl<T: Real> CubicBSpline<T> {
    /// Uniform clamped knot vector over `[lo, hi]` for `n_ctrl` control points.
    pub fn clamped_knots(lo: T, hi: T, n_ctrl: usize) -> Vec<T> {
        assert!(n_ctrl > DEGREE, "need at least {} control points", DEGREE + 1);
        let interior = n_ctrl - DEGREE - 1;
        let mut knots = vec![lo; DEGREE + 1];
        for k in 1..=interior {
            knots.push(lo + (hi - lo) * T::of_usize(k) / T::of_usize(interior + 1));
        }
        knots.extend(std::iter::repeat_n(hi, DEGREE + 1));
        knots
    }

    pub fn new(knots: Vec<T>, control: Vec<T>) -> Self {
        assert_eq!(knots.len(), control.len() + DEGREE + 1);
        Self { knots, control }
    }

    pub fn control_points(&self) -> &[T] {
        &self.control
    }

    pub fn eval(&self, u: T) -> T {
        let span = find_span(&self.knots, self.control.len(), u);
        let basis = basis_functions(&self.knots, span, u);
        (0..=DEGREE)
            .map(|i| basis[i] * self.control[span - DEGREE + i])
            .sum()
    }
}

/// Knot span index `s` with `knots[s] <= u < knots[s + 1]`, clamped to the last span.
fn find_span<T: Real>(knots: &[T], n_ctrl: usize, u: T) -> usize {
    let last = n_ctrl - 1;
    if u >= knots[last + 1] {
        return last;
    }
    if u <= knots[DEGREE] {
        return DEGREE;
    }
    let (mut lo, mut hi) = (DEGREE, last + 1);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if u < knots[mid] {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

/// The four non-vanishing cubic basis values on `span` (Cox-de Boor).
fn basis_functions<T: Real>(knots: &[T], span: usize, u: T) -> [T; DEGREE + 1] {
    let mut n = [T::zero(); DEGREE + 1];
    let mut left = [T::zero(); DEGREE + 1];
    let mut right = [T::zero(); DEGREE + 1];
    n[0] = T::one();
    for j in 1..=DEGREE {
        left[j] = u - knots[span + 1 - j];
        right[j] = knots[span + j] - u;
        let mut saved = T::zero();
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let temp = if denom == T::zero() { T::zero() } else { n[r] / denom };
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    n
}

/// Least-squares clamped cubic fit of `(params[k], values[k])` with the first
/// and last control points pinned to the first and last values, so the curve
/// interpolates both endpoints exactly.
///
/// `penalty` weights squared second differences of the control points; it
/// keeps the system well posed across gaps in `params`.
pub fn fit_pinned<T: Real>(params: &[T], values: &[T], n_ctrl: usize, penalty: T) -> CubicBSpline<T> {
    assert_eq!(params.len(), values.len());
    assert!(params.len() >= 2 && n_ctrl > DEGREE);
    let lo = params[0];
    let hi = params[params.len() - 1];
    let knots = CubicBSpline::clamped_knots(lo, hi, n_ctrl);
    let first = values[0];
    let last = values[values.len() - 1];

    // Normal equations over all control points, banded with half-width 3.
    let mut mat = vec![vec![T::zero(); n_ctrl]; n_ctrl];
    let mut rhs = vec![T::zero(); n_ctrl];
    for (u, y) in params.iter().zip(values.iter()) {
        let span = find_span(&knots, n_ctrl, *u);
        let b = basis_functions(&knots, span, *u);
        for i in 0..=DEGREE {
            let gi = span - DEGREE + i;
            rhs[gi] += b[i] * *y;
            for j in 0..=DEGREE {
                mat[gi][span - DEGREE + j] += b[i] * b[j];
            }
        }
    }
    let stencil = [T::one(), -(T::one() + T::one()), T::one()];
    for k in 0..n_ctrl.saturating_sub(2) {
        for a in 0..3 {
            for b in 0..3 {
                mat[k + a][k + b] += penalty * stencil[a] * stencil[b];
            }
        }
    }

    // Move the pinned columns to the right-hand side and solve for the rest.
    let free = n_ctrl - 2;
    let mut sub = vec![vec![T::zero(); free]; free];
    let mut sub_rhs = vec![T::zero(); free];
    for i in 0..free {
        let gi = i + 1;
        sub_rhs[i] = rhs[gi] - mat[gi][0] * first - mat[gi][n_ctrl - 1] * last;
        sub[i][..free].copy_from_slice(&mat[gi][1..(free + 1)]);
    }
    let interior = solve_banded_spd(sub, sub_rhs, DEGREE);

    let mut control = Vec::with_capacity(n_ctrl);
    control.push(first);
    control.extend(interior);
    control.push(last);
    CubicBSpline::new(knots, control)
}

/// Gaussian elimination restricted to a band of half-width `band`. The matrix
/// is symmetric positive definite, so no pivoting is needed.
fn solve_banded_spd<T: Real>(mut a: Vec<Vec<T>>, mut b: Vec<T>, band: usize) -> Vec<T> {
    let n = b.len();
    for k in 0..n {
        let end = (k + band + 1).min(n);
        for i in (k + 1)..end {
            let f = a[i][k] / a[k][k];
            if f == T::zero() {
                continue;
            }
            for j in k..end {
                let akj = a[k][j];
                a[i][j] -= f * akj;
            }
            let bk = b[k];
            b[i] -= f * bk;
        }
    }
    let mut x = vec![T::zero(); n];
    for k in (0..n).rev() {
        let end = (k + band + 1).min(n);
        let s: T = ((k + 1)..end).map(|j| a[k][j] * x[j]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    x
}
