use agri_autograd::{array, Var};
use ndarray::Array2;

use super::{ContrastError, PixelPairSet};

fn check_finite<'a>(what: &str, mut data: impl Iterator<Item = &'a f64>) -> Result<(), ContrastError> {
    if data.all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ContrastError::NonFinite(what.into()))
    }
}

/// Batch-mean InfoNCE. `q` and `k_pos` are `N x D`, `negatives` is `K x D`;
/// the positive logit sits in column 0. An empty negative set gives 0.
pub fn info_nce(q: &Var, k_pos: &Var, negatives: &Array2<f64>, temperature: f64) -> Result<Var, ContrastError> {
    if !(temperature > 0.0) {
        return Err(ContrastError::Config(format!("temperature must be positive, got {temperature}")));
    }
    check_finite("query", q.data().iter())?;
    check_finite("positive key", k_pos.data().iter())?;
    check_finite("negatives", negatives.iter())?;
    if q.shape() != k_pos.shape() || q.ndim() != 2 {
        return Err(ContrastError::Shape(format!("query {:?} vs key {:?}", q.shape(), k_pos.shape())));
    }
    let pos = q.mul(k_pos).sum_axes(&[1], true);
    let logits = if negatives.nrows() == 0 {
        pos
    } else {
        if negatives.ncols() != q.shape()[1] {
            return Err(ContrastError::Shape(format!("negatives are {}-wide", negatives.ncols())));
        }
        let neg_t = negatives.t().as_standard_layout().into_owned().into_dyn();
        Var::cat(&[pos, q.matmul(&Var::constant(neg_t))], 1)
    };
    Ok(logits.scale(1.0 / temperature).log_softmax_last().narrow(1, 0, 1).mean_all().neg())
}

/// InfoNCE for a single query, as a plain number.
pub fn info_nce_value(q: &[f64], k_pos: &[f64], negatives: &Array2<f64>, temperature: f64) -> Result<f64, ContrastError> {
    let qv = Var::constant(array(&[1, q.len()], q.to_vec()));
    let kv = Var::constant(array(&[1, k_pos.len()], k_pos.to_vec()));
    Ok(info_nce(&qv, &kv, negatives, temperature)?.item())
}

/// Flatten `N x D x h x w` into `(N*h*w) x D` rows.
fn pixel_rows(map: &Var) -> Var {
    let s = map.shape().to_vec();
    map.reshape(&[s[0], s[1], s[2] * s[3]]).permute(&[0, 2, 1]).reshape(&[s[0] * s[2] * s[3], s[1]])
}

/// Symmetric pixel loss: mean over matched pairs `(i, j)` of
/// `-cos(smooth_a_i, map_b_j) - cos(smooth_b_j, map_a_i)`. `pairs[n]`
/// holds the pairs of sample `n`. With no pairs the loss is 0.
pub fn pixpro_loss(
    smooth_a: &Var,
    map_b: &Var,
    smooth_b: &Var,
    map_a: &Var,
    pairs: &[PixelPairSet],
) -> Result<(Var, usize), ContrastError> {
    let sa = smooth_a.shape();
    let sb = map_b.shape();
    if sa.len() != 4 || sb.len() != 4 || smooth_b.shape() != sb || map_a.shape() != sa || sa[1] != sb[1] {
        return Err(ContrastError::Shape(format!("pixel maps {sa:?} and {sb:?}")));
    }
    if pairs.len() != sa[0] {
        return Err(ContrastError::Shape(format!("{} pair sets for a batch of {}", pairs.len(), sa[0])));
    }
    let (la, lb) = (sa[2] * sa[3], sb[2] * sb[3]);
    let mut ia = Vec::new();
    let mut ib = Vec::new();
    for (n, set) in pairs.iter().enumerate() {
        for &(i, j) in &set.pairs {
            ia.push(n * la + i);
            ib.push(n * lb + j);
        }
    }
    if ia.is_empty() {
        return Ok((Var::scalar(0.0), 0));
    }
    let unit = |m: &Var, idx: &[usize]| pixel_rows(m).index_select(idx).l2_normalize_last(1e-12);
    let c1 = unit(smooth_a, &ia).mul(&unit(map_b, &ib)).sum_axes(&[1], false);
    let c2 = unit(smooth_b, &ib).mul(&unit(map_a, &ia)).sum_axes(&[1], false);
    Ok((c1.add(&c2).mean_all().neg(), ia.len()))
}
