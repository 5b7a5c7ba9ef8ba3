use nalgebra::DMatrix;

use super::{NumError, NumResult};

/// Exact zero-order-hold discretization.
///
/// Exponentiates the augmented generator `[[Ac, Bc], [0, 0]]·Ts`; the top
/// blocks of the result are `(Ad, Bd)`. The exponential is nalgebra's
/// scaling-and-squaring Padé(13) implementation.
pub fn zoh_discretize(ac: &DMatrix<f64>, bc: &DMatrix<f64>, ts: f64) -> NumResult<(DMatrix<f64>, DMatrix<f64>)> {
    let n = ac.nrows();
    let m = bc.ncols();
    if !ac.is_square() || bc.nrows() != n {
        return Err(NumError::DimensionMismatch(format!("Ac {:?}, Bc {:?}", ac.shape(), bc.shape())));
    }
    if !(ts > 0.0) || !ts.is_finite() {
        return Err(NumError::InvalidProblem(format!("sampling time must be positive, got {ts}")));
    }
    let mut gen = DMatrix::zeros(n + m, n + m);
    gen.view_mut((0, 0), (n, n)).copy_from(&(ac * ts));
    gen.view_mut((0, n), (n, m)).copy_from(&(bc * ts));
    let e = gen.exp();
    if !e.iter().all(|v| v.is_finite()) {
        return Err(NumError::NumericalFailure("matrix exponential overflowed".into()));
    }
    Ok((e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, m)).into_owned()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn nilpotent_zero_generator() {
        let (ad, bd) = zoh_discretize(&DMatrix::zeros(2, 2), &dmatrix![1.0; 2.0], 0.3).unwrap();
        assert!((ad - DMatrix::identity(2, 2)).amax() < 1e-15);
        assert!((bd - dmatrix![0.3; 0.6]).amax() < 1e-15);
    }

    #[test]
    fn scalar_closed_form() {
        let (ad, bd) = zoh_discretize(&dmatrix![-0.7], &dmatrix![1.0], 0.25).unwrap();
        let e = (-0.7f64 * 0.25).exp();
        assert!((ad[(0, 0)] - e).abs() < 1e-14);
        assert!((bd[(0, 0)] - (e - 1.0) / -0.7).abs() < 1e-14);
    }

    #[test]
    fn rejects_nonpositive_step() {
        assert!(zoh_discretize(&dmatrix![0.0], &dmatrix![1.0], 0.0).is_err());
    }
}
