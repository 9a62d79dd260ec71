//! Closed-form squared 2-Wasserstein distance between Gaussians.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Symmetric PSD square root through an eigendecomposition, with negative
/// eigenvalues clamped to zero.
pub fn psd_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = a.clone().symmetric_eigen();
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

fn check_psd(c: &DMatrix<f64>, name: &str) -> Result<()> {
    if !c.is_square() {
        return Err(Error::Contract(format!("{name} is not square")));
    }
    let scale = 1.0 + c.amax();
    if (c - c.transpose()).amax() > 1e-12 * scale {
        return Err(Error::Contract(format!("{name} is not symmetric")));
    }
    let min = c.clone().symmetric_eigen().eigenvalues.min();
    if min < -1e-10 * scale {
        return Err(Error::Contract(format!(
            "{name} is not positive semidefinite (eigenvalue {min:e})"
        )));
    }
    Ok(())
}

/// `|m1 - m2|^2 + tr(C1 + C2 - 2 (C2^1/2 C1 C2^1/2)^1/2)`.
pub fn w2sq_gaussian(m1: &DVector<f64>, c1: &DMatrix<f64>, m2: &DVector<f64>, c2: &DMatrix<f64>) -> Result<f64> {
    let d = m1.len();
    if m2.len() != d || c1.nrows() != d || c2.nrows() != d {
        return Err(Error::Contract(format!(
            "gaussian parameters disagree on dimension {d}"
        )));
    }
    check_psd(c1, "first covariance")?;
    check_psd(c2, "second covariance")?;
    let r2 = psd_sqrt(c2);
    let cross = psd_sqrt(&(&r2 * c1 * &r2));
    let trace = (c1 + c2 - cross * 2.0).trace();
    Ok((m1 - m2).norm_squared() + trace.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_gaussians() {
        let m = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let c = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.0, 0.2, 0.1, 0.2, 0.7]);
        assert!(w2sq_gaussian(&m, &c, &m, &c).unwrap().abs() < 1e-12);
    }

    #[test]
    fn unit_covariances_shifted_by_e1() {
        let c = DMatrix::identity(2, 2);
        let v = w2sq_gaussian(
            &DVector::from_vec(vec![0.0, 0.0]),
            &c,
            &DVector::from_vec(vec![1.0, 0.0]),
            &c,
        )
        .unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_dimensional_scales() {
        // (sqrt(4) - sqrt(1))^2
        let z = DVector::from_vec(vec![0.0]);
        let v = w2sq_gaussian(
            &z,
            &DMatrix::from_element(1, 1, 4.0),
            &z,
            &DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn commuting_covariances_reduce_to_root_differences() {
        let z = DVector::zeros(2);
        let c1 = DMatrix::from_diagonal(&DVector::from_vec(vec![9.0, 1.0]));
        let c2 = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]));
        let v = w2sq_gaussian(&z, &c1, &z, &c2).unwrap();
        assert!((v - (4.0 + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn rejects_indefinite_matrix() {
        let z = DVector::zeros(2);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 3.0, 1.0]);
        let ok = DMatrix::identity(2, 2);
        assert!(matches!(w2sq_gaussian(&z, &bad, &z, &ok), Err(Error::Contract(_))));
    }
}
