use ndarray::{ArrayD, ArrayViewD};
use serde::{Deserialize, Serialize};

use super::{same_shape, NumericsError};

/// Which image the noise is interpolated against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    /// The supervised target `y`, consistent with the `ε − y` velocity.
    #[default]
    Target,
    /// The conditioning input `x`, as the interpolation is literally written.
    Input,
}

/// How a squared error is reduced to a scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

/// Pick the clean endpoint for the configured interpolation.
pub fn interpolation_endpoint<'a>(endpoint: Endpoint, input: ArrayViewD<'a, f64>, target: ArrayViewD<'a, f64>) -> ArrayViewD<'a, f64> {
    match endpoint {
        Endpoint::Target => target,
        Endpoint::Input => input,
    }
}

/// `z_t = (1 − t)·clean + t·ε`.
pub fn flow_interpolate(clean: ArrayViewD<f64>, eps: ArrayViewD<f64>, t: f64) -> Result<ArrayD<f64>, NumericsError> {
    same_shape(clean.shape(), eps.shape())?;
    if !(0.0..=1.0).contains(&t) {
        return Err(NumericsError::Domain(format!("t = {t} outside [0, 1]")));
    }
    let mut z = clean.to_owned();
    z.zip_mut_with(&eps, |c, &e| *c = (1.0 - t) * *c + t * e);
    Ok(z)
}

/// Squared deviation of the predicted velocity `ν` from `ε − y`.
pub fn flow_matching_loss(
    nu: ArrayViewD<f64>,
    eps: ArrayViewD<f64>,
    y: ArrayViewD<f64>,
    reduction: Reduction,
) -> Result<f64, NumericsError> {
    same_shape(nu.shape(), eps.shape())?;
    same_shape(nu.shape(), y.shape())?;
    if nu.is_empty() {
        return Err(NumericsError::Empty);
    }
    let sum: f64 = ndarray::Zip::from(&nu)
        .and(&eps)
        .and(&y)
        .fold(0.0, |acc, &n, &e, &t| acc + (n - (e - t)).powi(2));
    Ok(match reduction {
        Reduction::Mean => sum / nu.len() as f64,
        Reduction::Sum => sum,
    })
}

/// Target implied by a velocity prediction: `ŷ = ε − ν`.
pub fn predicted_target(eps: ArrayViewD<f64>, nu: ArrayViewD<f64>) -> Result<ArrayD<f64>, NumericsError> {
    same_shape(eps.shape(), nu.shape())?;
    Ok(&eps - &nu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr0, Array, IxDyn};

    #[test]
    fn interpolation_endpoints() {
        let y = Array::from_shape_vec(IxDyn(&[2, 2]), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let e = Array::from_shape_vec(IxDyn(&[2, 2]), vec![-1.0, 0.5, 0.0, 9.0]).unwrap();
        assert_eq!(flow_interpolate(y.view(), e.view(), 0.0).unwrap(), y);
        assert_eq!(flow_interpolate(y.view(), e.view(), 1.0).unwrap(), e);
        let mid = flow_interpolate(arr0(0.0).into_dyn().view(), arr0(2.0).into_dyn().view(), 0.5).unwrap();
        assert_eq!(mid.into_iter().next(), Some(1.0));
        assert!(flow_interpolate(y.view(), e.view(), 1.5).is_err());
        let x = Array::zeros(IxDyn(&[2, 2]));
        assert_eq!(interpolation_endpoint(Endpoint::Input, x.view(), y.view()), x.view());
        assert_eq!(interpolation_endpoint(Endpoint::Target, x.view(), y.view()), y.view());
    }

    #[test]
    fn loss_closed_forms() {
        let y = Array::from_shape_fn(IxDyn(&[3, 4]), |i| (i[0] * 4 + i[1]) as f64 * 0.1);
        let e = Array::from_shape_fn(IxDyn(&[3, 4]), |i| (i[0] as f64 - i[1] as f64).sin());
        let exact = &e - &y;
        assert_eq!(flow_matching_loss(exact.view(), e.view(), y.view(), Reduction::Mean).unwrap(), 0.0);
        let off = &exact + 0.3;
        let l = flow_matching_loss(off.view(), e.view(), y.view(), Reduction::Mean).unwrap();
        assert!((l - 0.09).abs() < 1e-15);
        let s = flow_matching_loss(off.view(), e.view(), y.view(), Reduction::Sum).unwrap();
        assert!((s - 12.0 * 0.09).abs() < 1e-14);
        let yhat = predicted_target(e.view(), exact.view()).unwrap();
        assert!(yhat.iter().zip(y.iter()).all(|(a, b)| (a - b).abs() < 1e-15));
        let bad = Array::zeros(IxDyn(&[4, 3]));
        assert!(matches!(flow_matching_loss(bad.view(), e.view(), y.view(), Reduction::Mean), Err(NumericsError::Shape(..))));
    }
}
