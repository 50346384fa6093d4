//! Central finite differences, used as an oracle for the reverse pass.

use crate::tape::Mat;

/// Gradient of `f` at `x` by central differences with step `h`.
pub fn central_gradient(x: &Mat, h: f64, mut f: impl FnMut(&Mat) -> f64) -> Mat {
    let mut grad = Mat::zeros(x.dim());
    let mut probe = x.clone();
    for (idx, g) in grad.indexed_iter_mut() {
        let orig = probe[idx];
        probe[idx] = orig + h;
        let plus = f(&probe);
        probe[idx] = orig - h;
        let minus = f(&probe);
        probe[idx] = orig;
        *g = (plus - minus) / (2.0 * h);
    }
    grad
}

/// `max |a - b| / max(max |b|, floor)`: a relative error that does not blow
/// up on entries that are individually near zero.
pub fn relative_error(a: &Mat, b: &Mat, floor: f64) -> f64 {
    assert_eq!(a.dim(), b.dim());
    let scale = b.iter().fold(floor, |m, x| m.max(x.abs()));
    let diff = a
        .iter()
        .zip(b.iter())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    diff / scale
}

/// Cosine similarity of two arrays viewed as flat vectors.
pub fn cosine(a: &Mat, b: &Mat) -> f64 {
    let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 && nb == 0.0 {
        1.0
    } else {
        dot / (na * nb).max(f64::MIN_POSITIVE)
    }
}
