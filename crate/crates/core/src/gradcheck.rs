//! Central finite-difference validation of reverse-mode gradients.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Entry with the largest relative error, if any entries exist.
    pub worst: Option<GradCheckEntry>,
    pub entries_checked: usize,
}

/// `|a - n| / max(1, |a|, |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Compares the analytic gradient of `build_loss` with central differences
/// over every entry of every parameter tensor.
///
/// `build_loss` receives a fresh graph with one leaf per tensor in `params`
/// (same order) and returns the scalar loss node.
pub fn grad_check<F>(
    names: &[&str],
    params: &[Tensor],
    eps: f64,
    build_loss: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>, &[NodeId]) -> Result<NodeId>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::Config(format!(
            "eps must be in (0, 1e-2], got {eps}"
        )));
    }
    if names.len() != params.len() {
        return Err(Error::Config(format!(
            "{} names for {} parameter tensors",
            names.len(),
            params.len()
        )));
    }

    let analytic = {
        let mut g = Graph::new();
        let leaves: Vec<NodeId> = params.iter().map(|p| g.param(p)).collect();
        let loss = build_loss(&mut g, &leaves)?;
        g.backward(loss)?;
        leaves.iter().map(|&l| g.grad(l)).collect::<Vec<_>>()
    };

    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let leaves: Vec<NodeId> = values.iter().map(|p| g.param(p)).collect();
        let loss = build_loss(&mut g, &leaves)?;
        g.value(loss)
            .item()
            .ok_or_else(|| Error::NonScalarLoss(g.value(loss).shape().to_vec()))
    };

    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        entries_checked: 0,
    };
    for (p, name) in names.iter().enumerate() {
        for i in 0..params[p].len() {
            let original = params[p].data()[i];
            work[p].data_mut()[i] = original + eps;
            let plus = eval(&work)?;
            work[p].data_mut()[i] = original - eps;
            let minus = eval(&work)?;
            work[p].data_mut()[i] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[p].data()[i];
            if !numeric.is_finite() || !a.is_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient check at {name}[{i}]: analytic {a}, numeric {numeric}"
                )));
            }
            let rel_error = relative_error(a, numeric);
            report.entries_checked += 1;
            if report.worst.is_none() || rel_error > report.max_rel_error {
                report.max_rel_error = rel_error;
                report.worst = Some(GradCheckEntry {
                    param: name.to_string(),
                    index: i,
                    analytic: a,
                    numeric,
                    rel_error,
                });
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_function_has_zero_error() {
        let w = Tensor::vector(vec![0.4, -0.2]);
        let report = grad_check(&["w"], &[w], 1e-5, |g, _leaves| {
            Ok(g.constant(Tensor::scalar(7.0)))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-8);
        assert_eq!(report.entries_checked, 2);
    }

    #[test]
    fn rejects_out_of_range_eps() {
        let w = Tensor::scalar(1.0);
        let build = |g: &mut Graph<'_>, l: &[NodeId]| g.square(l[0]);
        assert!(grad_check(&["w"], std::slice::from_ref(&w), 0.0, build).is_err());
        assert!(grad_check(&["w"], &[w], 0.5, build).is_err());
    }

    #[test]
    fn non_finite_reports_the_entry() {
        let w = Tensor::vector(vec![1.0, f64::NAN]);
        let err = grad_check(&["weights"], &[w], 1e-5, |g, l| {
            let s = g.square(l[0])?;
            g.sum(s)
        })
        .unwrap_err();
        assert!(err.to_string().contains("weights[0]") || err.to_string().contains("weights[1]"));
    }
}
