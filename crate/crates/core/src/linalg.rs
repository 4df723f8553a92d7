//! Small dense linear-algebra helpers shared by the spectrum and manifold code.

use nalgebra::{DMatrix, DVector};
use serde::ser::{SerializeSeq, Serializer};

/// Orthonormal basis of the column span, by thin QR. Columns whose `R`
/// diagonal falls below `rank_tol * max|R_ii|` are dropped.
pub fn orthonormalize(a: &DMatrix<f64>, rank_tol: f64) -> DMatrix<f64> {
    if a.ncols() == 0 {
        return DMatrix::zeros(a.nrows(), 0);
    }
    let qr = a.clone().qr();
    let q = qr.q();
    let r = qr.r();
    let k = r.nrows().min(r.ncols());
    let scale = (0..k).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    let keep: Vec<usize> = (0..k).filter(|&i| r[(i, i)].abs() > rank_tol * scale).collect();
    let mut out = DMatrix::zeros(a.nrows(), keep.len());
    for (j, &i) in keep.iter().enumerate() {
        out.set_column(j, &q.column(i));
    }
    out
}

/// Singular triplets sorted by decreasing singular value.
pub struct SortedSvd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v: DMatrix<f64>,
}

pub fn sorted_svd(a: &DMatrix<f64>) -> SortedSvd {
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V^T");
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    let mut us = DMatrix::zeros(u.nrows(), order.len());
    let mut vs = DMatrix::zeros(vt.ncols(), order.len());
    for (k, &i) in order.iter().enumerate() {
        us.set_column(k, &u.column(i));
        vs.set_column(k, &vt.row(i).transpose());
    }
    SortedSvd { u: us, singular_values: DVector::from_iterator(order.len(), order.iter().map(|&i| s[i])), v: vs }
}

/// Leading `k` left singular vectors.
///
/// The SVD result is polished by two steps of subspace iteration with
/// `A A^T`: for very ill-conditioned inputs the small-matrix SVD can return
/// singular vectors that are off by far more than the spectral gap implies.
pub fn leading_left_singular(a: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let svd = sorted_svd(a);
    let mut u = svd.u.columns(0, k).into_owned();
    let scale = a.amax();
    if k == 0 || !(scale > 0.0) || !scale.is_finite() {
        return u;
    }
    let b = a / scale;
    for _ in 0..2 {
        let next = orthonormalize(&(&b * (b.transpose() * &u)), 1e-300);
        if next.ncols() < k {
            break;
        }
        u = next;
    }
    u
}

/// Orthonormal basis of the orthogonal complement of the span of `q`
/// (assumed orthonormal) in `R^n`.
pub fn orthogonal_complement(q: &DMatrix<f64>) -> DMatrix<f64> {
    let n = q.nrows();
    let k = q.ncols();
    if k == 0 {
        return DMatrix::identity(n, n);
    }
    if k >= n {
        return DMatrix::zeros(n, 0);
    }
    // Householder QR of [q | I]: the trailing columns of Q complete q.
    let mut a = DMatrix::zeros(n, n + k);
    a.columns_mut(0, k).copy_from(q);
    a.columns_mut(k, n).fill_with_identity();
    let full = a.qr().q();
    full.columns(k, n - k).into_owned()
}

/// Principal angles (radians, ascending) between the spans of two
/// orthonormal bases.
pub fn principal_angles(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    if a.ncols() == 0 || b.ncols() == 0 {
        return Vec::new();
    }
    let m = a.transpose() * b;
    let s = m.singular_values();
    let mut angles: Vec<f64> = s.iter().map(|c| c.clamp(-1.0, 1.0).acos()).collect();
    // acos is ill-conditioned near 1; recover small angles from the sine side.
    let residual = b - a * (a.transpose() * b);
    let sines = residual.singular_values();
    let mut small: Vec<f64> = sines.iter().map(|v| v.clamp(0.0, 1.0).asin()).collect();
    angles.sort_by(f64::total_cmp);
    small.sort_by(f64::total_cmp);
    angles
        .iter()
        .enumerate()
        .map(|(i, &a)| if a < 0.5 { small.get(i).copied().unwrap_or(a) } else { a })
        .collect()
}

/// Largest principal angle: the gap between two equal-dimension subspaces.
pub fn subspace_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    if a.ncols() != b.ncols() {
        return std::f64::consts::FRAC_PI_2;
    }
    principal_angles(a, b).into_iter().fold(0.0, f64::max)
}

/// Flips column signs so that the entry of largest magnitude is positive.
pub fn normalize_signs(q: &mut DMatrix<f64>) {
    for mut col in q.column_iter_mut() {
        let imax = col.iamax();
        if col[imax] < 0.0 {
            col.neg_mut();
        }
    }
}

/// Ordinary least-squares line fit with the slope's standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_std_error: f64,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> Option<LineFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_std_error = if n > 2 {
        let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
        (rss / (nf - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Some(LineFit { slope, intercept, slope_std_error })
}

/// Least squares `min |X c - y|` via SVD; `None` when `X` is rank deficient
/// at relative tolerance `rcond`.
pub fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>, rcond: f64) -> Option<(DVector<f64>, f64)> {
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin < rcond * smax {
        return None;
    }
    let c = svd.solve(y, 0.0).ok()?;
    Some((c, smin / smax))
}

/// Serializes a vector as a plain sequence of numbers.
pub fn ser_vector<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(v.iter())
}

pub fn ser_vectors<S: Serializer>(vs: &[DVector<f64>], s: S) -> Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(vs.len()))?;
    for v in vs {
        seq.serialize_element(v.as_slice())?;
    }
    seq.end()
}

/// Serializes a matrix as a sequence of rows.
pub fn ser_matrix<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for row in m.row_iter() {
        seq.serialize_element(&row.iter().copied().collect::<Vec<f64>>())?;
    }
    seq.end()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complement_and_angles() {
        let a = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let c = orthogonal_complement(&a);
        assert_eq!(c.ncols(), 2);
        assert!((a.transpose() * &c).norm() < 1e-15);
        let angles = principal_angles(&a, &c);
        let r = DMatrix::from_column_slice(2, 1, &[0.4f64.cos(), 0.4f64.sin()]);
        let rc = orthogonal_complement(&r);
        assert!((r.transpose() * &rc).norm() < 1e-15 && (rc.norm() - 1.0).abs() < 1e-15);
        assert!((angles[0] - std::f64::consts::FRAC_PI_2).abs() < 1e-12);

        let t: f64 = 1e-9;
        let b = DMatrix::from_column_slice(3, 1, &[t.cos(), t.sin(), 0.0]);
        assert!((subspace_distance(&a, &b) - t).abs() < 1e-18);
    }

    #[test]
    fn sorted_svd_orders_values() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 5.0, 3.0]));
        let s = sorted_svd(&m);
        assert_eq!(s.singular_values.as_slice(), &[5.0, 3.0, 1.0]);
        assert!((s.u[(1, 0)].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn line_fit_recovers_exact_slope() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        let f = fit_line(&x, &y).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-14);
        assert!(f.slope_std_error < 1e-12);
        assert!(fit_line(&[1.0, 1.0], &[0.0, 1.0]).is_none());
    }

    #[test]
    fn orthonormalize_drops_dependent_columns() {
        let a = DMatrix::from_column_slice(3, 2, &[1.0, 1.0, 0.0, 2.0, 2.0, 0.0]);
        let q = orthonormalize(&a, 1e-12);
        assert_eq!(q.ncols(), 1);
    }
}
