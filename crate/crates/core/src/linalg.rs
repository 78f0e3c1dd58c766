use nalgebra::{DMatrix, DVector};

use crate::error::{EngineError, Result};

/// Relative singular-value threshold below which the design is rank deficient.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug)]
pub(crate) struct LeastSquares {
    pub beta: DVector<f64>,
    /// `(XᵀX)⁻¹ = R⁻¹R⁻ᵀ` from the QR factor.
    pub xtx_inv: DMatrix<f64>,
}

/// Solves `min ‖Xβ − y‖` via Householder QR after a rank check on the
/// singular values of `R`. On rank deficiency the columns participating in
/// each near-null direction are named using `labels`.
pub(crate) fn least_squares(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    labels: &[String],
) -> Result<LeastSquares> {
    let (n, p) = x.shape();
    if n < p {
        return Err(EngineError::TooFewRows { n, p });
    }
    let qr = x.clone().qr();
    let r = qr.r();

    let svd = r.clone().svd(false, true);
    let s_max = svd.singular_values.max();
    let v_t = svd.v_t.as_ref().expect("requested V");
    let mut dependent = std::collections::BTreeSet::new();
    for (k, s) in svd.singular_values.iter().enumerate() {
        if s.is_nan() || *s <= RANK_TOL * s_max {
            let v = v_t.row(k);
            let scale = v.amax();
            for (j, vj) in v.iter().enumerate() {
                if vj.abs() > 1e-6 * scale {
                    dependent.insert(j);
                }
            }
        }
    }
    if s_max == 0.0 || !dependent.is_empty() {
        let columns = if dependent.is_empty() {
            labels.to_vec()
        } else {
            dependent.into_iter().map(|j| labels[j].clone()).collect()
        };
        return Err(EngineError::RankDeficient { columns });
    }

    let mut qty = y.clone();
    qr.q_tr_mul(&mut qty);
    let qty = qty.rows(0, p).into_owned();
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| EngineError::RankDeficient {
            columns: labels.to_vec(),
        })?;
    let beta = &r_inv * qty;
    let xtx_inv = symmetrize(&(&r_inv * r_inv.transpose()));
    Ok(LeastSquares { beta, xtx_inv })
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub(crate) fn check_symmetric(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if !m.is_square() {
        return Err(EngineError::NotSymmetric(format!("{what} is not square")));
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-10 * scale {
                return Err(EngineError::NotSymmetric(format!(
                    "{what}: entries ({i},{j}) and ({j},{i}) differ"
                )));
            }
        }
    }
    Ok(())
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub(crate) fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    check_symmetric(m, what)?;
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| EngineError::NotPositiveDefinite(what.to_string()))?;
    Ok(symmetrize(&chol.inverse()))
}

/// Quadratic form `aᵀ M b`.
pub(crate) fn bilinear(a: &[f64], m: &DMatrix<f64>, b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (i, ai) in a.iter().enumerate() {
        if *ai == 0.0 {
            continue;
        }
        let mut row = 0.0;
        for (j, bj) in b.iter().enumerate() {
            row += m[(i, j)] * bj;
        }
        acc += ai * row;
    }
    acc
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        let x = DMatrix::from_row_slice(4, 2, &[1., 0., 1., 0., 1., 1., 1., 1.]);
        let y = DVector::from_vec(vec![1., 3., 4., 6.]);
        let ls = least_squares(&x, &y, &["a".into(), "b".into()]).unwrap();
        assert!((ls.beta[0] - 2.0).abs() < 1e-12);
        assert!((ls.beta[1] - 3.0).abs() < 1e-12);
        // (XᵀX)⁻¹ with XᵀX = [[4,2],[2,2]]
        let expected = DMatrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 1.0]);
        assert!((ls.xtx_inv - expected).amax() < 1e-12);
    }

    #[test]
    fn names_dependent_columns() {
        // c = 2a; b independent
        let x = DMatrix::from_row_slice(4, 3, &[1., 0., 2., 1., 1., 2., 1., 0., 2., 1., 1., 2.]);
        let y = DVector::from_vec(vec![1., 2., 3., 4.]);
        let err = least_squares(&x, &y, &["a".into(), "b".into(), "c".into()]).unwrap_err();
        match err {
            EngineError::RankDeficient { columns } => assert_eq!(columns, vec!["a", "c"]),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn spd_inverse_rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1., 2., 2., 1.]);
        assert!(matches!(
            spd_inverse(&m, "m"),
            Err(EngineError::NotPositiveDefinite(_))
        ));
        let m = DMatrix::from_row_slice(2, 2, &[1., 0.5, 0.0, 1.]);
        assert!(matches!(
            spd_inverse(&m, "m"),
            Err(EngineError::NotSymmetric(_))
        ));
    }
}
