//! Matrix products backed by `matrixmultiply`.

use ndarray::{ArrayD, IxDyn};

use crate::var::{Array, Var};

/// `c = alpha * op(a) * op(b) + beta * c` on row-major buffers.
/// `ta`/`tb` request a transposed read of `a`/`b`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: buffer lengths are checked above and strides describe a
    // row-major (or transposed row-major) layout of exactly those sizes.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Var {
    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&self, other: &Var) -> Var {
        assert_eq!(self.ndim(), 2, "matmul lhs must be 2-d, got {:?}", self.shape());
        assert_eq!(other.ndim(), 2, "matmul rhs must be 2-d, got {:?}", other.shape());
        let (m, k) = (self.shape()[0], self.shape()[1]);
        let (k2, n) = (other.shape()[0], other.shape()[1]);
        assert_eq!(k, k2, "matmul inner dims {:?} x {:?}", self.shape(), other.shape());
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.data(), false, other.data(), false, &mut out, 0.0);
        let value = ArrayD::from_shape_vec(IxDyn(&[m, n]), out).unwrap();
        Var::from_op(value, vec![self.clone(), other.clone()], move |g, p, _| {
            let gs = g.as_slice().unwrap();
            let ga = p[0].requires_grad().then(|| {
                let mut da = vec![0.0; m * k];
                gemm(m, n, k, gs, false, p[1].data(), true, &mut da, 0.0);
                ArrayD::from_shape_vec(IxDyn(&[m, k]), da).unwrap()
            });
            let gb = p[1].requires_grad().then(|| {
                let mut db = vec![0.0; k * n];
                gemm(k, m, n, p[0].data(), true, gs, false, &mut db, 0.0);
                ArrayD::from_shape_vec(IxDyn(&[k, n]), db).unwrap()
            });
            vec![ga, gb]
        })
    }

    /// Batched product `[b, m, k] x [b, k, n] -> [b, m, n]`.
    pub fn bmm(&self, other: &Var) -> Var {
        assert_eq!(self.ndim(), 3);
        assert_eq!(other.ndim(), 3);
        let (bs, m, k) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let n = other.shape()[2];
        assert_eq!(other.shape()[0], bs);
        assert_eq!(other.shape()[1], k);
        let mut out = vec![0.0; bs * m * n];
        let (a, b) = (self.data(), other.data());
        for i in 0..bs {
            gemm(
                m,
                k,
                n,
                &a[i * m * k..(i + 1) * m * k],
                false,
                &b[i * k * n..(i + 1) * k * n],
                false,
                &mut out[i * m * n..(i + 1) * m * n],
                0.0,
            );
        }
        let value = ArrayD::from_shape_vec(IxDyn(&[bs, m, n]), out).unwrap();
        Var::from_op(value, vec![self.clone(), other.clone()], move |g, p, _| {
            let gs = g.as_slice().unwrap();
            let (a, b) = (p[0].data(), p[1].data());
            let ga = p[0].requires_grad().then(|| {
                let mut da = vec![0.0; bs * m * k];
                for i in 0..bs {
                    gemm(
                        m,
                        n,
                        k,
                        &gs[i * m * n..(i + 1) * m * n],
                        false,
                        &b[i * k * n..(i + 1) * k * n],
                        true,
                        &mut da[i * m * k..(i + 1) * m * k],
                        0.0,
                    );
                }
                ArrayD::from_shape_vec(IxDyn(&[bs, m, k]), da).unwrap()
            });
            let gb = p[1].requires_grad().then(|| {
                let mut db = vec![0.0; bs * k * n];
                for i in 0..bs {
                    gemm(
                        k,
                        m,
                        n,
                        &a[i * m * k..(i + 1) * m * k],
                        true,
                        &gs[i * m * n..(i + 1) * m * n],
                        false,
                        &mut db[i * k * n..(i + 1) * k * n],
                        0.0,
                    );
                }
                ArrayD::from_shape_vec(IxDyn(&[bs, k, n]), db).unwrap()
            });
            vec![ga, gb]
        })
    }

    /// 2-d transpose.
    pub fn t(&self) -> Var {
        assert_eq!(self.ndim(), 2);
        self.permute(&[1, 0])
    }
}

/// Convenience for building arrays in tests and small helpers.
pub fn array(shape: &[usize], data: Vec<f64>) -> Array {
    ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape/data length mismatch")
}
