//! Spatial operations on `[N, C, H, W]` tensors.

use ndarray::{ArrayD, IxDyn};

use crate::linalg::gemm;
use crate::var::Var;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub stride: usize,
    pub padding: usize,
}

pub(crate) fn out_size(input: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (input + 2 * padding - kernel) / stride + 1
}

struct ConvDims {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

impl ConvDims {
    fn ckk(&self) -> usize {
        self.c * self.kh * self.kw
    }
    fn cols(&self) -> usize {
        self.n * self.ho * self.wo
    }
}

/// Unfold input patches into a `[C*kh*kw, N*Ho*Wo]` matrix.
fn im2col(x: &[f64], d: &ConvDims) -> Vec<f64> {
    let hw_out = d.ho * d.wo;
    let ncols = d.cols();
    let mut cols = vec![0.0; d.ckk() * ncols];
    for c in 0..d.c {
        for i in 0..d.kh {
            for j in 0..d.kw {
                let row = (c * d.kh + i) * d.kw + j;
                let dst_row = &mut cols[row * ncols..(row + 1) * ncols];
                for n in 0..d.n {
                    let src = &x[(n * d.c + c) * d.h * d.w..(n * d.c + c + 1) * d.h * d.w];
                    let dst = &mut dst_row[n * hw_out..(n + 1) * hw_out];
                    for oh in 0..d.ho {
                        let ih = (oh * d.stride + i) as isize - d.pad as isize;
                        if ih < 0 || ih >= d.h as isize {
                            continue;
                        }
                        let src_row = &src[ih as usize * d.w..(ih as usize + 1) * d.w];
                        let dst_row = &mut dst[oh * d.wo..(oh + 1) * d.wo];
                        for (ow, v) in dst_row.iter_mut().enumerate() {
                            let iw = (ow * d.stride + j) as isize - d.pad as isize;
                            if iw >= 0 && iw < d.w as isize {
                                *v = src_row[iw as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Fold a column matrix back, accumulating overlapping patches.
fn col2im(cols: &[f64], d: &ConvDims) -> Vec<f64> {
    let hw_out = d.ho * d.wo;
    let ncols = d.cols();
    let mut x = vec![0.0; d.n * d.c * d.h * d.w];
    for c in 0..d.c {
        for i in 0..d.kh {
            for j in 0..d.kw {
                let row = (c * d.kh + i) * d.kw + j;
                let src_row = &cols[row * ncols..(row + 1) * ncols];
                for n in 0..d.n {
                    let dst = &mut x[(n * d.c + c) * d.h * d.w..(n * d.c + c + 1) * d.h * d.w];
                    let src = &src_row[n * hw_out..(n + 1) * hw_out];
                    for oh in 0..d.ho {
                        let ih = (oh * d.stride + i) as isize - d.pad as isize;
                        if ih < 0 || ih >= d.h as isize {
                            continue;
                        }
                        for ow in 0..d.wo {
                            let iw = (ow * d.stride + j) as isize - d.pad as isize;
                            if iw >= 0 && iw < d.w as isize {
                                dst[ih as usize * d.w + iw as usize] += src[oh * d.wo + ow];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// `[O, N*HW]` -> `[N, O, HW]`.
fn om_to_nchw(m: &[f64], n: usize, o: usize, hw: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * o * hw];
    for oc in 0..o {
        let src = &m[oc * n * hw..(oc + 1) * n * hw];
        for b in 0..n {
            out[(b * o + oc) * hw..(b * o + oc + 1) * hw].copy_from_slice(&src[b * hw..(b + 1) * hw]);
        }
    }
    out
}

/// `[N, O, HW]` -> `[O, N*HW]`.
fn nchw_to_om(x: &[f64], n: usize, o: usize, hw: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * o * hw];
    for b in 0..n {
        for oc in 0..o {
            out[oc * n * hw + b * hw..oc * n * hw + (b + 1) * hw]
                .copy_from_slice(&x[(b * o + oc) * hw..(b * o + oc + 1) * hw]);
        }
    }
    out
}

impl Var {
    /// Cross-correlation of `[N, C, H, W]` with weights `[O, C, kh, kw]`.
    pub fn conv2d(&self, weight: &Var, geom: Conv2dGeometry) -> Var {
        assert_eq!(self.ndim(), 4, "conv2d input must be NCHW, got {:?}", self.shape());
        assert_eq!(weight.ndim(), 4);
        let (n, c, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2], self.shape()[3]);
        let (o, wc, kh, kw) = (weight.shape()[0], weight.shape()[1], weight.shape()[2], weight.shape()[3]);
        assert_eq!(c, wc, "conv2d channel mismatch: input {c}, weight {wc}");
        assert!(h + 2 * geom.padding >= kh && w + 2 * geom.padding >= kw, "kernel larger than padded input");
        let d = ConvDims {
            n,
            c,
            h,
            w,
            kh,
            kw,
            ho: out_size(h, kh, geom.stride, geom.padding),
            wo: out_size(w, kw, geom.stride, geom.padding),
            stride: geom.stride,
            pad: geom.padding,
        };
        let pointwise = kh == 1 && kw == 1 && geom.stride == 1 && geom.padding == 0;
        let cols = if pointwise {
            nchw_to_om(self.data(), n, c, h * w)
        } else {
            im2col(self.data(), &d)
        };
        let hw = d.ho * d.wo;
        let mut om = vec![0.0; o * d.cols()];
        gemm(o, d.ckk(), d.cols(), weight.data(), false, &cols, false, &mut om, 0.0);
        let value = ArrayD::from_shape_vec(IxDyn(&[n, o, d.ho, d.wo]), om_to_nchw(&om, n, o, hw)).unwrap();
        Var::from_op(value, vec![self.clone(), weight.clone()], move |g, p, _| {
            let g_om = nchw_to_om(g.as_slice().unwrap(), d.n, o, hw);
            let gx = p[0].requires_grad().then(|| {
                let mut dcols = vec![0.0; d.ckk() * d.cols()];
                gemm(d.ckk(), o, d.cols(), p[1].data(), true, &g_om, false, &mut dcols, 0.0);
                let dx = if pointwise {
                    om_to_nchw(&dcols, d.n, d.c, d.h * d.w)
                } else {
                    col2im(&dcols, &d)
                };
                ArrayD::from_shape_vec(IxDyn(&[d.n, d.c, d.h, d.w]), dx).unwrap()
            });
            let gw = p[1].requires_grad().then(|| {
                let mut dw = vec![0.0; o * d.ckk()];
                gemm(o, d.cols(), d.ckk(), &g_om, false, &cols, true, &mut dw, 0.0);
                ArrayD::from_shape_vec(IxDyn(&[o, d.c, d.kh, d.kw]), dw).unwrap()
            });
            vec![gx, gw]
        })
    }

    /// Max pooling with a square window. Padding cells never win.
    pub fn max_pool2d(&self, kernel: usize, stride: usize, padding: usize) -> Var {
        assert_eq!(self.ndim(), 4);
        let (n, c, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2], self.shape()[3]);
        let ho = out_size(h, kernel, stride, padding);
        let wo = out_size(w, kernel, stride, padding);
        let x = self.data();
        let mut out = vec![f64::NEG_INFINITY; n * c * ho * wo];
        let mut arg = vec![0usize; n * c * ho * wo];
        for plane in 0..n * c {
            let src = &x[plane * h * w..(plane + 1) * h * w];
            for oh in 0..ho {
                for ow in 0..wo {
                    let o_idx = plane * ho * wo + oh * wo + ow;
                    for i in 0..kernel {
                        let ih = (oh * stride + i) as isize - padding as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        for j in 0..kernel {
                            let iw = (ow * stride + j) as isize - padding as isize;
                            if iw < 0 || iw >= w as isize {
                                continue;
                            }
                            let s = ih as usize * w + iw as usize;
                            if src[s] > out[o_idx] {
                                out[o_idx] = src[s];
                                arg[o_idx] = plane * h * w + s;
                            }
                        }
                    }
                }
            }
        }
        let value = ArrayD::from_shape_vec(IxDyn(&[n, c, ho, wo]), out).unwrap();
        Var::from_op(value, vec![self.clone()], move |g, p, _| {
            let mut dx = vec![0.0; p[0].len()];
            for (gi, &a) in g.iter().zip(arg.iter()) {
                dx[a] += gi;
            }
            vec![Some(ArrayD::from_shape_vec(IxDyn(p[0].shape()), dx).unwrap())]
        })
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample_nearest(&self, factor: usize) -> Var {
        assert_eq!(self.ndim(), 4);
        let (n, c, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2], self.shape()[3]);
        let (ho, wo) = (h * factor, w * factor);
        let x = self.data();
        let mut out = vec![0.0; n * c * ho * wo];
        for plane in 0..n * c {
            for oh in 0..ho {
                for ow in 0..wo {
                    out[plane * ho * wo + oh * wo + ow] = x[plane * h * w + (oh / factor) * w + ow / factor];
                }
            }
        }
        let value = ArrayD::from_shape_vec(IxDyn(&[n, c, ho, wo]), out).unwrap();
        Var::from_op(value, vec![self.clone()], move |g, _, _| {
            let gs = g.as_slice().unwrap();
            let mut dx = vec![0.0; n * c * h * w];
            for plane in 0..n * c {
                for oh in 0..ho {
                    for ow in 0..wo {
                        dx[plane * h * w + (oh / factor) * w + ow / factor] += gs[plane * ho * wo + oh * wo + ow];
                    }
                }
            }
            vec![Some(ArrayD::from_shape_vec(IxDyn(&[n, c, h, w]), dx).unwrap())]
        })
    }
}
