//! Small dense-vector helpers; summation order is fixed (index order) so that
//! repeated evaluations are bit-identical.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `x += alpha * g`, in place.
pub fn axpy(x: &mut [f64], alpha: f64, g: &[f64]) {
    debug_assert_eq!(x.len(), g.len());
    for (xi, gi) in x.iter_mut().zip(g) {
        *xi += alpha * gi;
    }
}
