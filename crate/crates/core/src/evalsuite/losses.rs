use agri_autograd::Var;

use super::EvalError;

/// `N x C x H x W` logits as `(N*H*W) x C` rows, pixel-major in the same
/// order as a flattened `N x H x W` label array.
pub fn dense_logits_rows(logits: &Var) -> Var {
    let s = logits.shape().to_vec();
    logits.permute(&[0, 2, 3, 1]).reshape(&[s[0] * s[2] * s[3], s[1]])
}

/// Log-probability of the true class for every non-ignored row.
fn true_class_log_probs(logits: &Var, labels: &[usize], ignore_index: Option<usize>) -> Result<Var, EvalError> {
    if logits.ndim() != 2 || logits.shape()[0] != labels.len() {
        return Err(EvalError::Config(format!(
            "logits {:?} do not match {} labels",
            logits.shape(),
            labels.len()
        )));
    }
    let classes = logits.shape()[1];
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        if Some(l) == ignore_index {
            continue;
        }
        if l >= classes {
            return Err(EvalError::LabelOutOfRange { label: l, classes });
        }
        rows.push(i);
        targets.push(l);
    }
    if rows.is_empty() {
        return Err(EvalError::NoLabeledPixels);
    }
    // ignored rows never enter the graph, so they cannot reach the gradient
    Ok(logits.index_select(&rows).log_softmax_last().gather_cols(&targets))
}

/// Mean cross-entropy over non-ignored rows of `M x C` logits.
pub fn cross_entropy(logits: &Var, labels: &[usize], ignore_index: Option<usize>) -> Result<Var, EvalError> {
    Ok(true_class_log_probs(logits, labels, ignore_index)?.mean_all().neg())
}

/// Mean of `-(1 - p)^gamma * ln p` over non-ignored rows, `p` being the
/// true-class probability.
pub fn focal_loss(logits: &Var, labels: &[usize], gamma: f64, ignore_index: Option<usize>) -> Result<Var, EvalError> {
    if !(gamma >= 0.0) {
        return Err(EvalError::Config(format!("focal gamma must be non-negative, got {gamma}")));
    }
    let logp = true_class_log_probs(logits, labels, ignore_index)?;
    if gamma == 0.0 {
        return Ok(logp.mean_all().neg());
    }
    let weight = logp.exp().neg().add_scalar(1.0).relu().powf(gamma);
    Ok(weight.mul(&logp).mean_all().neg())
}

#[cfg(test)]
mod tests {
    use super::*;
    use agri_autograd::array;

    #[test]
    fn single_pixel_focal_value() {
        // two equal logits give p = 0.5
        let logits = Var::constant(array(&[1, 2], vec![0.3, 0.3]));
        let v = focal_loss(&logits, &[1], 2.0, None).unwrap().item();
        assert!((v - 0.25 * 2f64.ln()).abs() < 1e-12);
        assert!(matches!(cross_entropy(&logits, &[255], Some(255)), Err(EvalError::NoLabeledPixels)));
    }
}
