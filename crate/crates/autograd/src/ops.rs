//! Elementwise, reduction and shape operations.

use ndarray::{ArrayD, Axis, IxDyn, Slice, Zip};

use crate::var::{Array, Var};

/// Sum `g` down to `shape`, undoing numpy-style broadcasting.
pub(crate) fn reduce_to_shape(mut g: Array, shape: &[usize]) -> Array {
    if g.shape() == shape {
        return g;
    }
    while g.ndim() > shape.len() {
        g = g.sum_axis(Axis(0));
    }
    for (i, &d) in shape.iter().enumerate() {
        if d == 1 && g.shape()[i] != 1 {
            g = g.sum_axis(Axis(i)).insert_axis(Axis(i));
        }
    }
    g
}

fn unary<F, D>(x: &Var, f: F, df: D) -> Var
where
    F: Fn(f64) -> f64,
    // derivative given (input, output)
    D: Fn(f64, f64) -> f64 + 'static,
{
    let value = x.value().mapv(f);
    Var::from_op(value, vec![x.clone()], move |g, p, out| {
        let mut dx = g.clone();
        Zip::from(&mut dx)
            .and(p[0].value())
            .and(out)
            .for_each(|d, &xi, &yi| *d *= df(xi, yi));
        vec![Some(dx)]
    })
}

impl Var {
    pub fn add(&self, other: &Var) -> Var {
        let value = self.value() + other.value();
        Var::from_op(value, vec![self.clone(), other.clone()], |g, p, _| {
            vec![
                Some(reduce_to_shape(g.clone(), p[0].shape())),
                Some(reduce_to_shape(g.clone(), p[1].shape())),
            ]
        })
    }

    pub fn sub(&self, other: &Var) -> Var {
        let value = self.value() - other.value();
        Var::from_op(value, vec![self.clone(), other.clone()], |g, p, _| {
            vec![
                Some(reduce_to_shape(g.clone(), p[0].shape())),
                Some(reduce_to_shape(-g, p[1].shape())),
            ]
        })
    }

    pub fn mul(&self, other: &Var) -> Var {
        let value = self.value() * other.value();
        Var::from_op(value, vec![self.clone(), other.clone()], |g, p, _| {
            let ga = p[0].requires_grad().then(|| reduce_to_shape(g * p[1].value(), p[0].shape()));
            let gb = p[1].requires_grad().then(|| reduce_to_shape(g * p[0].value(), p[1].shape()));
            vec![ga, gb]
        })
    }

    pub fn div(&self, other: &Var) -> Var {
        let value = self.value() / other.value();
        Var::from_op(value, vec![self.clone(), other.clone()], |g, p, out| {
            let ga = p[0].requires_grad().then(|| reduce_to_shape(g / p[1].value(), p[0].shape()));
            let gb = p[1]
                .requires_grad()
                .then(|| reduce_to_shape(-(g * out) / p[1].value(), p[1].shape()));
            vec![ga, gb]
        })
    }

    pub fn add_scalar(&self, c: f64) -> Var {
        let value = self.value() + c;
        Var::from_op(value, vec![self.clone()], |g, _, _| vec![Some(g.clone())])
    }

    pub fn scale(&self, c: f64) -> Var {
        let value = self.value() * c;
        Var::from_op(value, vec![self.clone()], move |g, _, _| vec![Some(g * c)])
    }

    pub fn neg(&self) -> Var {
        self.scale(-1.0)
    }

    pub fn relu(&self) -> Var {
        unary(self, |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn exp(&self) -> Var {
        unary(self, f64::exp, |_, y| y)
    }

    pub fn ln(&self) -> Var {
        unary(self, f64::ln, |x, _| 1.0 / x)
    }

    pub fn sqrt(&self) -> Var {
        unary(self, f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn square(&self) -> Var {
        unary(self, |x| x * x, |x, _| 2.0 * x)
    }

    pub fn tanh(&self) -> Var {
        unary(self, f64::tanh, |_, y| 1.0 - y * y)
    }

    /// `x^p` with `0^0 = 1`. The derivative at `x = 0` is taken as 0 when it
    /// would otherwise be infinite.
    pub fn powf(&self, p: f64) -> Var {
        unary(
            self,
            move |x| if p == 0.0 { 1.0 } else { x.powf(p) },
            move |x, _| {
                if p == 0.0 {
                    0.0
                } else if x == 0.0 {
                    if p == 1.0 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    p * x.powf(p - 1.0)
                }
            },
        )
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&self) -> Var {
        const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
        unary(
            self,
            |x| 0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh()),
            |x, _| {
                let inner = C * (x + 0.044715 * x * x * x);
                let t = inner.tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x)
            },
        )
    }

    pub fn sum_all(&self) -> Var {
        let value = ArrayD::from_elem(IxDyn(&[]), self.value().sum());
        Var::from_op(value, vec![self.clone()], |g, p, _| {
            vec![Some(ArrayD::from_elem(p[0].value().raw_dim(), g.sum()))]
        })
    }

    pub fn mean_all(&self) -> Var {
        let n = self.len().max(1) as f64;
        self.sum_all().scale(1.0 / n)
    }

    /// Sum over the listed axes. With `keepdim` the reduced axes stay as size 1.
    pub fn sum_axes(&self, axes: &[usize], keepdim: bool) -> Var {
        let mut sorted = axes.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let mut value = self.value().clone();
        for &a in sorted.iter().rev() {
            value = value.sum_axis(Axis(a));
            if keepdim {
                value = value.insert_axis(Axis(a));
            }
        }
        Var::from_op(value, vec![self.clone()], move |g, p, _| {
            let mut g = g.clone();
            if !keepdim {
                for &a in &sorted {
                    g = g.insert_axis(Axis(a));
                }
            }
            let full = g.broadcast(p[0].value().raw_dim()).expect("broadcast back").to_owned();
            vec![Some(full)]
        })
    }

    pub fn mean_axes(&self, axes: &[usize], keepdim: bool) -> Var {
        let n: usize = axes.iter().map(|&a| self.shape()[a]).product();
        self.sum_axes(axes, keepdim).scale(1.0 / n.max(1) as f64)
    }

    pub fn reshape(&self, shape: &[usize]) -> Var {
        let value = self
            .value()
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order(IxDyn(shape))
            .unwrap_or_else(|e| panic!("reshape {:?} -> {:?}: {e}", self.shape(), shape));
        Var::from_op(value, vec![self.clone()], |g, p, _| {
            vec![Some(
                g.as_standard_layout()
                    .into_owned()
                    .into_shape_with_order(p[0].value().raw_dim())
                    .expect("reshape back"),
            )]
        })
    }

    pub fn flatten_from(&self, axis: usize) -> Var {
        let mut shape: Vec<usize> = self.shape()[..axis].to_vec();
        shape.push(self.shape()[axis..].iter().product());
        self.reshape(&shape)
    }

    pub fn permute(&self, axes: &[usize]) -> Var {
        let value = self.value().clone().permuted_axes(IxDyn(axes)).as_standard_layout().into_owned();
        let mut inverse = vec![0; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        Var::from_op(value, vec![self.clone()], move |g, _, _| {
            vec![Some(g.clone().permuted_axes(IxDyn(&inverse)).as_standard_layout().into_owned())]
        })
    }

    /// Sub-range `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Var {
        let value = self
            .value()
            .slice_axis(Axis(axis), Slice::from(start..start + len))
            .to_owned();
        Var::from_op(value, vec![self.clone()], move |g, p, _| {
            let mut full = ArrayD::zeros(p[0].value().raw_dim());
            full.slice_axis_mut(Axis(axis), Slice::from(start..start + len)).assign(g);
            vec![Some(full)]
        })
    }

    pub fn cat(parts: &[Var], axis: usize) -> Var {
        assert!(!parts.is_empty(), "cat of zero tensors");
        let views: Vec<_> = parts.iter().map(|p| p.value().view()).collect();
        let value = ndarray::concatenate(Axis(axis), &views).expect("cat shape mismatch");
        let sizes: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        Var::from_op(value, parts.to_vec(), move |g, _, _| {
            let mut offset = 0;
            sizes
                .iter()
                .map(|&s| {
                    let piece = g.slice_axis(Axis(axis), Slice::from(offset..offset + s)).to_owned();
                    offset += s;
                    Some(piece)
                })
                .collect()
        })
    }

    /// Rows `idx` along axis 0 (repeats allowed).
    pub fn index_select(&self, idx: &[usize]) -> Var {
        let value = self.value().select(Axis(0), idx);
        let idx = idx.to_vec();
        Var::from_op(value, vec![self.clone()], move |g, p, _| {
            let mut full: Array = ArrayD::zeros(p[0].value().raw_dim());
            for (k, &i) in idx.iter().enumerate() {
                let mut row = full.index_axis_mut(Axis(0), i);
                row += &g.index_axis(Axis(0), k);
            }
            vec![Some(full)]
        })
    }

    /// For a `[M, C]` tensor, picks element `idx[m]` of every row, giving `[M]`.
    pub fn gather_cols(&self, idx: &[usize]) -> Var {
        assert_eq!(self.ndim(), 2);
        let (m, c) = (self.shape()[0], self.shape()[1]);
        assert_eq!(idx.len(), m);
        let data = self.data();
        let value: Vec<f64> = idx.iter().enumerate().map(|(r, &j)| data[r * c + j]).collect();
        let idx = idx.to_vec();
        Var::from_op(
            ArrayD::from_shape_vec(IxDyn(&[m]), value).unwrap(),
            vec![self.clone()],
            move |g, _, _| {
                let mut full = vec![0.0; m * c];
                let gs = g.as_slice().unwrap();
                for (r, &j) in idx.iter().enumerate() {
                    full[r * c + j] = gs[r];
                }
                vec![Some(ArrayD::from_shape_vec(IxDyn(&[m, c]), full).unwrap())]
            },
        )
    }

    /// Cyclic shift by `shift` positions along `axis` (positive moves toward
    /// higher indices).
    pub fn roll(&self, axis: usize, shift: isize) -> Var {
        let value = roll_array(self.value(), axis, shift);
        Var::from_op(value, vec![self.clone()], move |g, _, _| vec![Some(roll_array(g, axis, -shift))])
    }

    /// Broadcast to a larger shape (numpy rules).
    pub fn broadcast_to(&self, shape: &[usize]) -> Var {
        let value = self
            .value()
            .broadcast(IxDyn(shape))
            .unwrap_or_else(|| panic!("cannot broadcast {:?} to {:?}", self.shape(), shape))
            .to_owned();
        Var::from_op(value, vec![self.clone()], |g, p, _| {
            vec![Some(reduce_to_shape(g.clone(), p[0].shape()))]
        })
    }
}

fn roll_array(a: &Array, axis: usize, shift: isize) -> Array {
    let n = a.shape()[axis] as isize;
    if n == 0 {
        return a.clone();
    }
    let s = shift.rem_euclid(n) as usize;
    if s == 0 {
        return a.clone();
    }
    let n = n as usize;
    let head = a.slice_axis(Axis(axis), Slice::from(n - s..n));
    let tail = a.slice_axis(Axis(axis), Slice::from(0..n - s));
    ndarray::concatenate(Axis(axis), &[head, tail]).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_add_reduces_gradient() {
        let a = Var::leaf(ArrayD::from_shape_vec(IxDyn(&[2, 3]), vec![1.0; 6]).unwrap());
        let b = Var::leaf(ArrayD::from_shape_vec(IxDyn(&[1, 3]), vec![1.0, 2.0, 3.0]).unwrap());
        let g = a.add(&b).sum_all().backward();
        assert_eq!(g.get(&b).unwrap().as_slice().unwrap(), &[2.0, 2.0, 2.0]);
        assert_eq!(g.get(&a).unwrap().shape(), &[2, 3]);
    }

    #[test]
    fn roll_round_trips() {
        let a = ArrayD::from_shape_vec(IxDyn(&[5]), vec![0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        let r = roll_array(&a, 0, 2);
        assert_eq!(r.as_slice().unwrap(), &[3.0, 4.0, 0.0, 1.0, 2.0]);
        assert_eq!(roll_array(&r, 0, -2), a);
    }

    #[test]
    fn pow_zero_exponent_is_one_everywhere() {
        let x = Var::leaf(ArrayD::from_shape_vec(IxDyn(&[3]), vec![0.0, 0.5, 2.0]).unwrap());
        let y = x.powf(0.0);
        assert_eq!(y.data(), &[1.0, 1.0, 1.0]);
        let g = y.sum_all().backward();
        assert!(g.get(&x).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shared_subexpression_accumulates() {
        let x = Var::leaf(ArrayD::from_elem(IxDyn(&[]), 3.0));
        let y = x.mul(&x).add(&x);
        let g = y.backward();
        assert_eq!(g.get(&x).unwrap().sum(), 7.0);
    }
}
