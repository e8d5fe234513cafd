//! Normalisation and softmax-family operations.

use ndarray::{ArrayD, IxDyn};

use crate::var::{Array, Var};

/// Batch statistics produced by a training-mode batch-norm call.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance (used for running estimates).
    pub var: Vec<f64>,
}

fn rows_last(v: &Var) -> (usize, usize) {
    let d = *v.shape().last().expect("rank >= 1");
    (v.len() / d.max(1), d)
}

impl Var {
    pub fn softmax_last(&self) -> Var {
        let (m, d) = rows_last(self);
        let x = self.data();
        let mut out = vec![0.0; m * d];
        for r in 0..m {
            let row = &x[r * d..(r + 1) * d];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for (o, &v) in out[r * d..(r + 1) * d].iter_mut().zip(row) {
                *o = (v - mx).exp();
                s += *o;
            }
            out[r * d..(r + 1) * d].iter_mut().for_each(|o| *o /= s);
        }
        let value = ArrayD::from_shape_vec(IxDyn(self.shape()), out).unwrap();
        Var::from_op(value, vec![self.clone()], move |g, _, y| {
            let (gs, ys) = (g.as_slice().unwrap(), y.as_slice().unwrap());
            let mut dx = vec![0.0; m * d];
            for r in 0..m {
                let dot: f64 = (0..d).map(|i| gs[r * d + i] * ys[r * d + i]).sum();
                for i in 0..d {
                    dx[r * d + i] = ys[r * d + i] * (gs[r * d + i] - dot);
                }
            }
            vec![Some(ArrayD::from_shape_vec(IxDyn(y.shape()), dx).unwrap())]
        })
    }

    pub fn log_softmax_last(&self) -> Var {
        let (m, d) = rows_last(self);
        let x = self.data();
        let mut out = vec![0.0; m * d];
        for r in 0..m {
            let row = &x[r * d..(r + 1) * d];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|&v| (v - mx).exp()).sum::<f64>().ln();
            for i in 0..d {
                out[r * d + i] = row[i] - lse;
            }
        }
        let value = ArrayD::from_shape_vec(IxDyn(self.shape()), out).unwrap();
        Var::from_op(value, vec![self.clone()], move |g, _, y| {
            let (gs, ys) = (g.as_slice().unwrap(), y.as_slice().unwrap());
            let mut dx = vec![0.0; m * d];
            for r in 0..m {
                let gsum: f64 = gs[r * d..(r + 1) * d].iter().sum();
                for i in 0..d {
                    dx[r * d + i] = gs[r * d + i] - ys[r * d + i].exp() * gsum;
                }
            }
            vec![Some(ArrayD::from_shape_vec(IxDyn(y.shape()), dx).unwrap())]
        })
    }

    /// Normalise each vector along the last axis to unit length. Vectors with
    /// norm below `eps` are divided by `eps` instead, so zero stays zero.
    pub fn l2_normalize_last(&self, eps: f64) -> Var {
        let (m, d) = rows_last(self);
        let x = self.data();
        let mut out = vec![0.0; m * d];
        let mut norms = vec![0.0; m];
        for r in 0..m {
            let n = x[r * d..(r + 1) * d].iter().map(|v| v * v).sum::<f64>().sqrt();
            norms[r] = n;
            let den = n.max(eps);
            for i in 0..d {
                out[r * d + i] = x[r * d + i] / den;
            }
        }
        let value = ArrayD::from_shape_vec(IxDyn(self.shape()), out).unwrap();
        Var::from_op(value, vec![self.clone()], move |g, _, y| {
            let (gs, ys) = (g.as_slice().unwrap(), y.as_slice().unwrap());
            let mut dx = vec![0.0; m * d];
            for r in 0..m {
                if norms[r] < eps {
                    for i in 0..d {
                        dx[r * d + i] = gs[r * d + i] / eps;
                    }
                    continue;
                }
                let dot: f64 = (0..d).map(|i| gs[r * d + i] * ys[r * d + i]).sum();
                for i in 0..d {
                    dx[r * d + i] = (gs[r * d + i] - ys[r * d + i] * dot) / norms[r];
                }
            }
            vec![Some(ArrayD::from_shape_vec(IxDyn(y.shape()), dx).unwrap())]
        })
    }

    /// Zero-mean, unit-variance along the last axis (no affine part).
    pub fn layer_norm_last(&self, eps: f64) -> Var {
        let (m, d) = rows_last(self);
        let x = self.data();
        let mut out = vec![0.0; m * d];
        let mut inv_std = vec![0.0; m];
        for r in 0..m {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            inv_std[r] = 1.0 / (var + eps).sqrt();
            for i in 0..d {
                out[r * d + i] = (row[i] - mean) * inv_std[r];
            }
        }
        let value = ArrayD::from_shape_vec(IxDyn(self.shape()), out).unwrap();
        Var::from_op(value, vec![self.clone()], move |g, _, y| {
            let (gs, ys) = (g.as_slice().unwrap(), y.as_slice().unwrap());
            let mut dx = vec![0.0; m * d];
            for r in 0..m {
                let gr = &gs[r * d..(r + 1) * d];
                let yr = &ys[r * d..(r + 1) * d];
                let gmean = gr.iter().sum::<f64>() / d as f64;
                let gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                for i in 0..d {
                    dx[r * d + i] = inv_std[r] * (gr[i] - gmean - yr[i] * gy);
                }
            }
            vec![Some(ArrayD::from_shape_vec(IxDyn(y.shape()), dx).unwrap())]
        })
    }

    /// Training-mode batch normalisation over every axis except axis 1.
    /// `gamma`/`beta` have shape `[C]`.
    pub fn batch_norm_train(&self, gamma: &Var, beta: &Var, eps: f64) -> (Var, BatchStats) {
        let shape = self.shape().to_vec();
        assert!(shape.len() >= 2, "batch norm needs [N, C, ...]");
        let (n, c) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        let count = n * inner;
        assert!(count > 1, "batch norm needs more than one value per channel");
        let x = self.data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for b in 0..n {
            for ch in 0..c {
                let s = &x[(b * c + ch) * inner..(b * c + ch + 1) * inner];
                mean[ch] += s.iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        for b in 0..n {
            for ch in 0..c {
                let s = &x[(b * c + ch) * inner..(b * c + ch + 1) * inner];
                var[ch] += s.iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
            }
        }
        let biased: Vec<f64> = var.iter().map(|v| v / count as f64).collect();
        let unbiased: Vec<f64> = var.iter().map(|v| v / (count - 1) as f64).collect();
        let inv_std: Vec<f64> = biased.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (gm, bt) = (gamma.data(), beta.data());
        let mut xhat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * inner;
                for i in base..base + inner {
                    xhat[i] = (x[i] - mean[ch]) * inv_std[ch];
                    out[i] = xhat[i] * gm[ch] + bt[ch];
                }
            }
        }
        let value = ArrayD::from_shape_vec(IxDyn(&shape), out).unwrap();
        let stats = BatchStats { mean, var: unbiased };
        let y = Var::from_op(
            value,
            vec![self.clone(), gamma.clone(), beta.clone()],
            move |g, p, _| {
                let gs = g.as_slice().unwrap();
                let gm = p[1].data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for b in 0..n {
                    for ch in 0..c {
                        let base = (b * c + ch) * inner;
                        for i in base..base + inner {
                            dgamma[ch] += gs[i] * xhat[i];
                            dbeta[ch] += gs[i];
                        }
                    }
                }
                let dx = p[0].requires_grad().then(|| {
                    let mut dx = vec![0.0; gs.len()];
                    let m = count as f64;
                    for b in 0..n {
                        for ch in 0..c {
                            let base = (b * c + ch) * inner;
                            // sum(dxhat) = gamma*dbeta, sum(dxhat*xhat) = gamma*dgamma
                            let k = gm[ch] * inv_std[ch] / m;
                            for i in base..base + inner {
                                dx[i] = k * (m * gs[i] - dbeta[ch] - xhat[i] * dgamma[ch]);
                            }
                        }
                    }
                    ArrayD::from_shape_vec(IxDyn(&shape), dx).unwrap()
                });
                vec![
                    dx,
                    Some(ArrayD::from_shape_vec(IxDyn(&[c]), dgamma).unwrap()),
                    Some(ArrayD::from_shape_vec(IxDyn(&[c]), dbeta).unwrap()),
                ]
            },
        );
        (y, stats)
    }

    /// Inference-mode batch normalisation with fixed statistics.
    pub fn batch_norm_eval(&self, gamma: &Var, beta: &Var, mean: &Array, var: &Array, eps: f64) -> Var {
        let c = self.shape()[1];
        let mut bshape = vec![1; self.ndim()];
        bshape[1] = c;
        let inv = var.mapv(|v| 1.0 / (v + eps).sqrt());
        let scale = gamma.mul(&Var::constant(inv)).reshape(&bshape);
        let shift = beta
            .sub(&Var::constant(mean.clone()).mul(&scale.reshape(&[c])))
            .reshape(&bshape);
        self.mul(&scale).add(&shift)
    }
}
