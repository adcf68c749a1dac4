use super::Parameterized;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Tensor name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
}

impl GradCheckReport {
    pub fn within(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

const REL_FLOOR: f64 = 1e-6;

/// Compares analytic gradients against central differences, coordinate by
/// coordinate over every parameter of `model`.
///
/// `loss` must return the scalar objective and accumulate its gradient into
/// the parameters (i.e. run its own backward pass). The relative error of a
/// coordinate is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn grad_check<M, F>(model: &mut M, mut loss: F, step: f64) -> Result<GradCheckReport>
where
    M: Parameterized + ?Sized,
    F: FnMut(&mut M) -> Result<f64>,
{
    model.zero_grad();
    let base = loss(model)?;
    if !base.is_finite() {
        return Err(Error::Numeric(format!("loss is {base}")));
    }
    let mut analytic: Vec<(String, Vec<f64>)> = Vec::new();
    model.visit(&mut |p| analytic.push((p.name().to_string(), p.grad.clone())));

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    for (tensor, (name, grads)) in analytic.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            if !a.is_finite() {
                return Err(Error::Numeric(format!("analytic gradient of `{name}`[{i}] is {a}")));
            }
            let original = read(model, tensor, i);
            write(model, tensor, i, original + step);
            let plus = loss(model)?;
            write(model, tensor, i, original - step);
            let minus = loss(model)?;
            write(model, tensor, i, original);
            let numeric = (plus - minus) / (2.0 * step);
            if !numeric.is_finite() {
                return Err(Error::Numeric(format!("finite difference of `{name}`[{i}] is {numeric}")));
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.coordinates += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), i));
            }
        }
    }
    model.zero_grad();
    Ok(report)
}

fn read<M: Parameterized + ?Sized>(model: &M, tensor: usize, i: usize) -> f64 {
    let mut k = 0;
    let mut out = 0.0;
    model.visit(&mut |p| {
        if k == tensor {
            out = p.value[i];
        }
        k += 1;
    });
    out
}

fn write<M: Parameterized + ?Sized>(model: &mut M, tensor: usize, i: usize, value: f64) {
    let mut k = 0;
    model.visit_mut(&mut |p| {
        if k == tensor {
            p.value[i] = value;
        }
        k += 1;
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamTensor;

    #[test]
    fn square_norm_matches_to_high_precision() {
        let mut w = ParamTensor::from_values("w", &[3], vec![0.3, -1.2, 2.5]).unwrap();
        let report = grad_check(
            &mut w,
            |p| {
                let f = p.value.iter().map(|v| v * v).sum();
                for i in 0..p.len() {
                    p.grad[i] += 2.0 * p.value[i];
                }
                Ok(f)
            },
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-9, "{report:?}");
        assert_eq!(report.coordinates, 3);
    }

    #[test]
    fn constant_function_has_zero_error() {
        let mut w = ParamTensor::from_values("w", &[2], vec![1.0, 2.0]).unwrap();
        let report = grad_check(&mut w, |_| Ok(4.2), 1e-5).unwrap();
        assert_eq!(report.max_rel_error, 0.0);
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let mut w = ParamTensor::from_values("w", &[1], vec![1.0]).unwrap();
        let report = grad_check(
            &mut w,
            |p| {
                p.grad[0] += 3.0 * p.value[0];
                Ok(p.value[0] * p.value[0])
            },
            1e-5,
        )
        .unwrap();
        assert!(!report.within(1e-4));
        assert_eq!(report.worst, Some(("w".to_string(), 0)));
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let mut w = ParamTensor::from_values("w", &[1], vec![1.0]).unwrap();
        assert!(matches!(grad_check(&mut w, |_| Ok(f64::NAN), 1e-5), Err(Error::Numeric(_))));
    }
}
