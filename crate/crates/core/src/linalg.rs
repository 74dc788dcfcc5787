use nalgebra::{DMatrix, DVector};

pub(crate) const RIDGE: f64 = 1e-6;

/// Least-squares solution of `x·w ≈ y` for row-major `x` (`rows×cols`).
///
/// Uses a Householder QR when the system is overdetermined and well
/// conditioned; otherwise solves the ridge normal equations
/// `(xᵀx + λI)w = xᵀy` with `λ = RIDGE`. The flag reports the fallback.
pub(crate) fn least_squares(rows: usize, cols: usize, x: &[f64], y: &[f64]) -> (Vec<f64>, bool) {
    debug_assert_eq!(x.len(), rows * cols);
    debug_assert_eq!(y.len(), rows);
    let a = DMatrix::from_row_slice(rows, cols, x);
    let b = DVector::from_column_slice(y);
    if rows >= cols {
        let qr = a.clone().qr();
        let r = qr.r();
        let diag: Vec<f64> = (0..cols).map(|i| r[(i, i)].abs()).collect();
        let max = diag.iter().cloned().fold(0.0, f64::max);
        let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        if max > 0.0 && min > 1e-10 * max {
            let qtb = qr.q().transpose() * &b;
            if let Some(w) = r.solve_upper_triangular(&qtb) {
                if w.iter().all(|v| v.is_finite()) {
                    return (w.as_slice().to_vec(), false);
                }
            }
        }
    }
    let mut ata = a.transpose() * &a;
    for i in 0..cols {
        ata[(i, i)] += RIDGE;
    }
    let atb = a.transpose() * b;
    let w = ata
        .cholesky()
        .map(|c| c.solve(&atb))
        .unwrap_or_else(|| DVector::zeros(cols));
    (w.as_slice().to_vec(), true)
}
