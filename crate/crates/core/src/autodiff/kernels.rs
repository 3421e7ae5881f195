//! Raw numeric kernels shared by the forward and backward passes.

use super::tensor::Scalar;

/// `out += a · b` for row-major `a: [m, k]`, `b: [k, n]`.
pub(crate) fn mm_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out += a · bᵀ` for `a: [m, n]`, `b: [k, n]`, `out: [m, k]`.
pub(crate) fn mm_nt_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = T::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            out[i * k + p] += acc;
        }
    }
}

/// `out += aᵀ · b` for `a: [m, k]`, `b: [m, n]`, `out: [k, n]`.
pub(crate) fn mm_tn_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// Swap the last two axes of a batch of `[rows, cols]` matrices.
pub(crate) fn transpose_last2<T: Scalar>(
    data: &[T],
    batch: usize,
    rows: usize,
    cols: usize,
) -> Vec<T> {
    let mut out = vec![T::zero(); data.len()];
    let plane = rows * cols;
    for b in 0..batch {
        let src = &data[b * plane..(b + 1) * plane];
        let dst = &mut out[b * plane..(b + 1) * plane];
        for r in 0..rows {
            for c in 0..cols {
                dst[c * rows + r] = src[r * cols + c];
            }
        }
    }
    out
}

/// (outer, len, inner) decomposition of a shape around `axis`.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) const GELU_C: f64 = 0.797_884_560_802_865_4;
pub(crate) const GELU_K: f64 = 0.044_715;

#[inline]
pub(crate) fn gelu<T: Scalar>(x: T) -> T {
    let c = T::lit(GELU_C);
    let k = T::lit(GELU_K);
    let half = T::lit(0.5);
    half * x * (T::one() + (c * (x + k * x * x * x)).tanh())
}

#[inline]
pub(crate) fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::lit(GELU_C);
    let k = T::lit(GELU_K);
    let half = T::lit(0.5);
    let u = c * (x + k * x * x * x);
    let th = u.tanh();
    let du = c * (T::one() + T::lit(3.0) * k * x * x);
    half * (T::one() + th) + half * x * (T::one() - th * th) * du
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Plan for numpy-style broadcasting of a binary elementwise op.
#[derive(Clone, Debug)]
pub(crate) struct Broadcast {
    pub out_shape: Vec<usize>,
    mode: Mode,
    na: usize,
    nb: usize,
    a_strides: Vec<usize>,
    b_strides: Vec<usize>,
}

#[derive(Clone, Copy, Debug)]
enum Mode {
    Same,
    /// `b` repeats along leading dims of `a`.
    BSuffix,
    /// `a` repeats along leading dims of `b`.
    ASuffix,
    General,
}

fn strip_leading_ones(s: &[usize]) -> &[usize] {
    let first = s.iter().position(|&d| d != 1).unwrap_or(s.len());
    &s[first..]
}

fn padded_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let nd = out.len();
    let off = nd - shape.len();
    let mut strides = vec![0usize; nd];
    let mut acc = 1usize;
    for d in (0..shape.len()).rev() {
        strides[off + d] = if shape[d] == 1 { 0 } else { acc };
        acc *= shape[d];
    }
    strides
}

impl Broadcast {
    pub fn new(a: &[usize], b: &[usize]) -> Option<Self> {
        let nd = a.len().max(b.len());
        let mut out_shape = vec![0usize; nd];
        for (i, o) in out_shape.iter_mut().enumerate() {
            let da = if i < nd - a.len() {
                1
            } else {
                a[i - (nd - a.len())]
            };
            let db = if i < nd - b.len() {
                1
            } else {
                b[i - (nd - b.len())]
            };
            *o = if da == db || db == 1 {
                da
            } else if da == 1 {
                db
            } else {
                return None;
            };
        }
        let na: usize = a.iter().product();
        let nb: usize = b.iter().product();
        let mode = if a == b {
            Mode::Same
        } else if a == out_shape.as_slice() && out_shape.ends_with(strip_leading_ones(b)) {
            Mode::BSuffix
        } else if b == out_shape.as_slice() && out_shape.ends_with(strip_leading_ones(a)) {
            Mode::ASuffix
        } else {
            Mode::General
        };
        let a_strides = padded_strides(a, &out_shape);
        let b_strides = padded_strides(b, &out_shape);
        Some(Broadcast {
            out_shape,
            mode,
            na,
            nb,
            a_strides,
            b_strides,
        })
    }

    pub fn numel(&self) -> usize {
        self.out_shape.iter().product()
    }

    /// Calls `f(out_index, a_index, b_index)` for every output element.
    pub fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        let n = self.numel();
        match self.mode {
            Mode::Same => (0..n).for_each(|i| f(i, i, i)),
            Mode::BSuffix => (0..n).for_each(|i| f(i, i, i % self.nb)),
            Mode::ASuffix => (0..n).for_each(|i| f(i, i % self.na, i)),
            Mode::General => {
                let nd = self.out_shape.len();
                let mut idx = vec![0usize; nd];
                let (mut ia, mut ib) = (0usize, 0usize);
                for i in 0..n {
                    f(i, ia, ib);
                    for d in (0..nd).rev() {
                        idx[d] += 1;
                        ia += self.a_strides[d];
                        ib += self.b_strides[d];
                        if idx[d] < self.out_shape[d] {
                            break;
                        }
                        ia -= self.a_strides[d] * idx[d];
                        ib -= self.b_strides[d] * idx[d];
                        idx[d] = 0;
                    }
                }
            }
        }
    }
}
