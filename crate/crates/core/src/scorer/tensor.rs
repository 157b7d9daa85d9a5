//! Dense `channels × height × width` tensors and the handful of kernels the
//! scorer needs: same-padded convolution via im2col + GEMM, SiLU, 2×2
//! average pooling and nearest-neighbor upsampling, each with its adjoint.

use std::fmt::Debug;

use num_traits::Float;

pub trait Real: Float + Default + Debug + Send + Sync + std::iter::Sum + 'static {
    /// `c ← alpha·op(a)·op(b) + beta·c` with `op(a)` m×k and `op(b)` k×n, all row-major.
    #[allow(clippy::too_many_arguments)]
    fn gemm(m: usize, k: usize, n: usize, alpha: Self, a: &[Self], trans_a: bool, b: &[Self], trans_b: bool, beta: Self, c: &mut [Self]);

    fn real(v: f64) -> Self;

    fn as_f64(self) -> f64;
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                trans_a: bool,
                b: &[Self],
                trans_b: bool,
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
                let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
                // SAFETY: slice lengths checked above; strides describe the stated layouts.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
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

            fn real(v: f64) -> Self {
                v as $t
            }

            fn as_f64(self) -> f64 {
                self as f64
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![T::zero(); c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), c * h * w, "tensor data length");
        Self { c, h, w, data }
    }

    pub fn hw(&self) -> usize {
        self.h * self.w
    }

    pub fn concat(a: &Self, b: &Self) -> Self {
        assert_eq!((a.h, a.w), (b.h, b.w));
        let mut data = a.data.clone();
        data.extend_from_slice(&b.data);
        Self::from_vec(a.c + b.c, a.h, a.w, data)
    }

    /// Splits along channels into the first `c` channels and the rest.
    pub fn split(&self, c: usize) -> (Self, Self) {
        let n = c * self.hw();
        (
            Self::from_vec(c, self.h, self.w, self.data[..n].to_vec()),
            Self::from_vec(self.c - c, self.h, self.w, self.data[n..].to_vec()),
        )
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.data.len(), other.data.len());
        Self::from_vec(
            self.c,
            self.h,
            self.w,
            self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        )
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_vec(self.c, self.h, self.w, self.data.iter().map(|&a| f(a)).collect())
    }
}

pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

pub fn silu<T: Real>(x: T) -> T {
    x * sigmoid(x)
}

pub fn silu_grad<T: Real>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::one() + x * (T::one() - s))
}

/// Gathers `k × k` neighborhoods (zero padded) into a `(c·k·k) × (h·w)` matrix.
pub fn im2col<T: Real>(x: &Tensor<T>, k: usize) -> Vec<T> {
    let (h, w) = (x.h, x.w);
    let hw = h * w;
    let pad = (k / 2) as isize;
    let mut cols = vec![T::zero(); x.c * k * k * hw];
    for ch in 0..x.c {
        let plane = &x.data[ch * hw..(ch + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src_row = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let out_row = &mut dst[y * w..(y + 1) * w];
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize) as usize;
                    for xx in x0..x1 {
                        out_row[xx] = src_row[(xx as isize + dx) as usize];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input grid.
pub fn col2im<T: Real>(cols: &[T], c: usize, h: usize, w: usize, k: usize) -> Tensor<T> {
    let hw = h * w;
    let pad = (k / 2) as isize;
    let mut out = Tensor::zeros(c, h, w);
    for ch in 0..c {
        let plane = &mut out.data[ch * hw..(ch + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize) as usize;
                    for xx in x0..x1 {
                        let t = &mut plane[sy as usize * w + (xx as isize + dx) as usize];
                        *t = *t + src[y * w + xx];
                    }
                }
            }
        }
    }
    out
}

/// Stride-1 same-padded convolution. Parameters live in one flat buffer:
/// weights `[cout, cin·k·k]` at `w_off`, then biases `[cout]` at `b_off`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub w_off: usize,
    pub b_off: usize,
}

impl Conv {
    pub fn new(cin: usize, cout: usize, k: usize, offset: &mut usize) -> Self {
        let w_off = *offset;
        let b_off = w_off + cout * cin * k * k;
        *offset = b_off + cout;
        Self {
            cin,
            cout,
            k,
            w_off,
            b_off,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.cin * self.k * self.k
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.fan_in()
    }

    pub fn param_range(&self) -> std::ops::Range<usize> {
        self.w_off..self.b_off + self.cout
    }

    pub fn forward<T: Real>(&self, params: &[T], x: &Tensor<T>) -> Tensor<T> {
        debug_assert_eq!(x.c, self.cin);
        let hw = x.hw();
        let mut out = Tensor::zeros(self.cout, x.h, x.w);
        for o in 0..self.cout {
            let b = params[self.b_off + o];
            out.data[o * hw..(o + 1) * hw].iter_mut().for_each(|v| *v = b);
        }
        let weights = &params[self.w_off..self.w_off + self.weight_len()];
        let fan = self.fan_in();
        if self.k == 1 {
            T::gemm(self.cout, fan, hw, T::one(), weights, false, &x.data, false, T::one(), &mut out.data);
        } else {
            let cols = im2col(x, self.k);
            T::gemm(self.cout, fan, hw, T::one(), weights, false, &cols, false, T::one(), &mut out.data);
        }
        out
    }

    /// Accumulates parameter gradients into `grads` and returns the input gradient.
    pub fn backward<T: Real>(&self, params: &[T], grads: &mut [T], x: &Tensor<T>, d_out: &Tensor<T>) -> Tensor<T> {
        let hw = x.hw();
        let fan = self.fan_in();
        for o in 0..self.cout {
            let s: T = d_out.data[o * hw..(o + 1) * hw].iter().copied().sum();
            grads[self.b_off + o] = grads[self.b_off + o] + s;
        }
        let cols_owned;
        let cols: &[T] = if self.k == 1 {
            &x.data
        } else {
            cols_owned = im2col(x, self.k);
            &cols_owned
        };
        let dw = &mut grads[self.w_off..self.w_off + self.weight_len()];
        T::gemm(self.cout, hw, fan, T::one(), &d_out.data, false, cols, true, T::one(), dw);
        let weights = &params[self.w_off..self.w_off + self.weight_len()];
        let mut dcols = vec![T::zero(); fan * hw];
        T::gemm(fan, self.cout, hw, T::one(), weights, true, &d_out.data, false, T::zero(), &mut dcols);
        if self.k == 1 {
            Tensor::from_vec(self.cin, x.h, x.w, dcols)
        } else {
            col2im(&dcols, self.cin, x.h, x.w, self.k)
        }
    }
}

pub fn avg_pool2<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (x.h / 2, x.w / 2);
    let quarter = T::real(0.25);
    let mut out = Tensor::zeros(x.c, h, w);
    for c in 0..x.c {
        let src = &x.data[c * x.hw()..(c + 1) * x.hw()];
        for y in 0..h {
            for xx in 0..w {
                let i = 2 * y * x.w + 2 * xx;
                out.data[(c * h + y) * w + xx] = (src[i] + src[i + 1] + src[i + x.w] + src[i + x.w + 1]) * quarter;
            }
        }
    }
    out
}

pub fn avg_pool2_backward<T: Real>(d_out: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (d_out.h * 2, d_out.w * 2);
    let quarter = T::real(0.25);
    let mut out = Tensor::zeros(d_out.c, h, w);
    for c in 0..d_out.c {
        for y in 0..h {
            for x in 0..w {
                out.data[(c * h + y) * w + x] = d_out.data[(c * d_out.h + y / 2) * d_out.w + x / 2] * quarter;
            }
        }
    }
    out
}

pub fn upsample2<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (x.h * 2, x.w * 2);
    let mut out = Tensor::zeros(x.c, h, w);
    for c in 0..x.c {
        for y in 0..h {
            for xx in 0..w {
                out.data[(c * h + y) * w + xx] = x.data[(c * x.h + y / 2) * x.w + xx / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward<T: Real>(d_out: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (d_out.h / 2, d_out.w / 2);
    let mut out = Tensor::zeros(d_out.c, h, w);
    for c in 0..d_out.c {
        for y in 0..d_out.h {
            for x in 0..d_out.w {
                let t = &mut out.data[(c * h + y / 2) * w + x / 2];
                *t = *t + d_out.data[(c * d_out.h + y) * d_out.w + x];
            }
        }
    }
    out
}
