//! Dense vector helpers. Model vectors are plain `Vec<f64>`.

/// Dense real parameter vector.
pub type ModelVector = Vec<f64>;

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

pub fn sub(a: &[f64], b: &[f64]) -> ModelVector {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Row-major `d x d` matrix times vector.
pub fn mat_vec(a: &[f64], x: &[f64]) -> ModelVector {
    let d = x.len();
    debug_assert_eq!(a.len(), d * d);
    a.chunks_exact(d).map(|row| dot(row, x)).collect()
}

/// Mean of equally sized vectors, summed in slice order.
///
/// Accumulates offsets from the first vector, so a set of identical inputs
/// averages to exactly that input.
pub fn mean(vectors: &[&[f64]]) -> ModelVector {
    let first = vectors[0];
    let inv = 1.0 / vectors.len() as f64;
    let mut offset = vec![0.0; first.len()];
    for v in &vectors[1..] {
        for ((o, x), f) in offset.iter_mut().zip(v.iter()).zip(first) {
            *o += x - f;
        }
    }
    first.iter().zip(&offset).map(|(f, o)| f + o * inv).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_of_identical_vectors_is_exact() {
        let v = vec![0.1, 0.7, -1.3e-7];
        let refs: Vec<&[f64]> = (0..10).map(|_| v.as_slice()).collect();
        assert_eq!(mean(&refs), v);
    }

    #[test]
    fn mean_of_two() {
        let a = [1.0, 2.0];
        let b = [3.0, -2.0];
        assert_eq!(mean(&[&a, &b]), vec![2.0, 0.0]);
    }

    #[test]
    fn mat_vec_row_major() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mat_vec(&a, &[1.0, 1.0]), vec![3.0, 7.0]);
    }
}
