//! Small fixed-size linear algebra for the 3x3 rate and covariance matrices.

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn mat_vec(a: &Mat3, v: &Vec3) -> Vec3 {
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = (0..3).map(|k| a[i][k] * v[k]).sum();
    }
    out
}

pub fn transpose(a: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

pub fn det3(a: &Mat3) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

/// Inverse by the adjugate; errors when |det| is below `min_det`.
pub fn inv3(a: &Mat3, min_det: f64) -> Result<Mat3> {
    let d = det3(a);
    if !d.is_finite() || d.abs() < min_det {
        return Err(Error::Singular(format!("3x3 determinant {d:.3e}")));
    }
    let inv_d = 1.0 / d;
    let mut out = [[0.0; 3]; 3];
    out[0][0] = (a[1][1] * a[2][2] - a[1][2] * a[2][1]) * inv_d;
    out[0][1] = (a[0][2] * a[2][1] - a[0][1] * a[2][2]) * inv_d;
    out[0][2] = (a[0][1] * a[1][2] - a[0][2] * a[1][1]) * inv_d;
    out[1][0] = (a[1][2] * a[2][0] - a[1][0] * a[2][2]) * inv_d;
    out[1][1] = (a[0][0] * a[2][2] - a[0][2] * a[2][0]) * inv_d;
    out[1][2] = (a[0][2] * a[1][0] - a[0][0] * a[1][2]) * inv_d;
    out[2][0] = (a[1][0] * a[2][1] - a[1][1] * a[2][0]) * inv_d;
    out[2][1] = (a[0][1] * a[2][0] - a[0][0] * a[2][1]) * inv_d;
    out[2][2] = (a[0][0] * a[1][1] - a[0][1] * a[1][0]) * inv_d;
    Ok(out)
}

/// Solve A x = b by Gaussian elimination with partial pivoting.
pub fn solve3(a: &Mat3, b: &Vec3) -> Result<Vec3> {
    let mut m = *a;
    let mut v = *b;
    for col in 0..3 {
        let piv = (col..3)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        if m[piv][col].abs() < 1e-300 {
            return Err(Error::Singular("pivot vanished in 3x3 solve".into()));
        }
        m.swap(col, piv);
        v.swap(col, piv);
        for row in (col + 1)..3 {
            let f = m[row][col] / m[col][col];
            for k in col..3 {
                m[row][k] -= f * m[col][k];
            }
            v[row] -= f * v[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let mut acc = v[row];
        for k in (row + 1)..3 {
            acc -= m[row][k] * x[k];
        }
        x[row] = acc / m[row][row];
    }
    if x.iter().any(|t| !t.is_finite()) {
        return Err(Error::Singular("non-finite solution in 3x3 solve".into()));
    }
    Ok(x)
}

/// Cholesky factor of a symmetric matrix; `None` when not positive definite.
pub fn cholesky3(a: &Mat3) -> Option<Mat3> {
    let mut l = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..=i {
            let mut acc = a[i][j];
            for k in 0..j {
                acc -= l[i][k] * l[j][k];
            }
            if i == j {
                if acc <= 0.0 {
                    return None;
                }
                l[i][j] = acc.sqrt();
            } else {
                l[i][j] = acc / l[j][j];
            }
        }
    }
    Some(l)
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: Mat3 = [[2.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 1.5]];

    #[test]
    fn inverse_times_matrix_is_identity() {
        let inv = inv3(&A, 1e-300).unwrap();
        let prod = mat_mul(&A, &inv);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((prod[i][j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn solve_matches_inverse() {
        let b = [1.0, -2.0, 0.7];
        let x = solve3(&A, &b).unwrap();
        let y = mat_vec(&inv3(&A, 1e-300).unwrap(), &b);
        for k in 0..3 {
            assert!((x[k] - y[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_rejected() {
        let s: Mat3 = [[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 1.0, 1.0]];
        assert!(inv3(&s, 1e-12).is_err());
        assert!(solve3(&s, &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn cholesky_detects_definiteness() {
        assert!(cholesky3(&A).is_some());
        let not_pd: Mat3 = [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(cholesky3(&not_pd).is_none());
    }

    #[test]
    fn det_of_triangular() {
        let t: Mat3 = [[2.0, 5.0, 1.0], [0.0, 3.0, 9.0], [0.0, 0.0, 4.0]];
        assert!((det3(&t) - 24.0).abs() < 1e-13);
    }
}
