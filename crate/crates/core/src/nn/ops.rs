//! Tensor kernels with hand-written backward passes.
//!
//! All activations are NHWC (`batch, height, width, channels`) in standard
//! layout. Convolution kernels are `(k, k, in, out)`; transposed-convolution
//! kernels are `(in, 2, 2, out)` so both reshape to a GEMM operand without a
//! copy.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array4, ArrayView1, ArrayView2, ArrayView4, ArrayViewMut2, Axis};

use crate::scalar::Scalar;

/// Upper bound on the number of elements in one im2col tile.
const IM2COL_TILE: usize = 1 << 21;

fn rows_per_tile(width: usize, patch: usize) -> usize {
    (IM2COL_TILE / (width * patch).max(1)).max(1)
}

/// Fill `cols` with the `k x k` patches of output rows `y0..y1`.
fn im2col<T: Scalar>(
    x: &[T],
    (h, w, c): (usize, usize, usize),
    k: usize,
    y0: usize,
    y1: usize,
    cols: &mut [T],
) {
    let pad = (k / 2) as isize;
    let patch = k * k * c;
    for y in y0..y1 {
        for xx in 0..w {
            let row = ((y - y0) * w + xx) * patch;
            for ky in 0..k {
                let sy = y as isize + ky as isize - pad;
                for kx in 0..k {
                    let sx = xx as isize + kx as isize - pad;
                    let dst = row + (ky * k + kx) * c;
                    if sy < 0 || sy >= h as isize || sx < 0 || sx >= w as isize {
                        cols[dst..dst + c].fill(T::zero());
                    } else {
                        let src = (sy as usize * w + sx as usize) * c;
                        cols[dst..dst + c].copy_from_slice(&x[src..src + c]);
                    }
                }
            }
        }
    }
}

/// Scatter-add patch gradients back onto the input grid (adjoint of `im2col`).
fn col2im_add<T: Scalar>(
    cols: &[T],
    (h, w, c): (usize, usize, usize),
    k: usize,
    y0: usize,
    y1: usize,
    dx: &mut [T],
) {
    let pad = (k / 2) as isize;
    let patch = k * k * c;
    for y in y0..y1 {
        for xx in 0..w {
            let row = ((y - y0) * w + xx) * patch;
            for ky in 0..k {
                let sy = y as isize + ky as isize - pad;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let sx = xx as isize + kx as isize - pad;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let src = row + (ky * k + kx) * c;
                    let dst = (sy as usize * w + sx as usize) * c;
                    for (d, s) in dx[dst..dst + c].iter_mut().zip(&cols[src..src + c]) {
                        *d += *s;
                    }
                }
            }
        }
    }
}

fn add_bias_relu<T: Scalar>(mut out: ArrayViewMut2<T>, bias: ArrayView1<T>, relu: bool) {
    for mut row in out.rows_mut() {
        row += &bias;
        if relu {
            row.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
        }
    }
}

/// Stride-1 convolution with `same` zero padding and an odd kernel size.
pub fn conv2d_forward<T: Scalar>(
    x: ArrayView4<T>,
    kernel: ArrayView4<T>,
    bias: ArrayView1<T>,
    relu: bool,
) -> Array4<T> {
    let (n, h, w, c) = x.dim();
    let (k, _, kc, f) = kernel.dim();
    assert_eq!(kc, c, "conv2d: kernel expects {kc} channels, input has {c}");
    assert!(k % 2 == 1, "conv2d: kernel size must be odd");
    let x = x.as_standard_layout();
    let kernel = kernel.as_standard_layout();
    let wmat = kernel.view().into_shape_with_order((k * k * c, f)).unwrap();
    let mut out = Array4::<T>::zeros((n, h, w, f));
    let patch = k * k * c;
    let tile_rows = rows_per_tile(w, patch);
    let mut cols = Array2::<T>::zeros((tile_rows.min(h) * w, patch));

    for b in 0..n {
        let xb = x.index_axis(Axis(0), b);
        let xs = xb.as_slice().unwrap();
        let mut ob = out.index_axis_mut(Axis(0), b);
        let mut ob = ob.view_mut().into_shape_with_order((h * w, f)).unwrap();
        if k == 1 {
            let xm = xb.view().into_shape_with_order((h * w, c)).unwrap();
            general_mat_mul(T::one(), &xm, &wmat, T::zero(), &mut ob);
        } else {
            let mut y0 = 0;
            while y0 < h {
                let y1 = (y0 + tile_rows).min(h);
                let rows = (y1 - y0) * w;
                let mut tile = cols.slice_mut(s![..rows, ..]);
                im2col(xs, (h, w, c), k, y0, y1, tile.as_slice_mut().unwrap());
                let mut dst = ob.slice_mut(s![y0 * w..y1 * w, ..]);
                general_mat_mul(T::one(), &tile, &wmat, T::zero(), &mut dst);
                y0 = y1;
            }
        }
        add_bias_relu(ob, bias, relu);
    }
    out
}

/// Gradient of the pre-activation given the post-activation output.
fn relu_mask<T: Scalar>(out: ArrayView4<T>, dout: ArrayView4<T>, relu: bool) -> Array4<T> {
    if !relu {
        return dout.to_owned();
    }
    let mut d = dout.to_owned();
    ndarray::Zip::from(&mut d).and(&out).for_each(|g, &o| {
        if o <= T::zero() {
            *g = T::zero();
        }
    });
    d
}

/// Gradients of a convolution layer.
pub struct ConvGrads<T> {
    pub dx: Option<Array4<T>>,
    pub dkernel: Option<Array4<T>>,
    pub dbias: Option<Array1<T>>,
}

/// Backward pass of [`conv2d_forward`]. `out` is the forward output (used
/// for the ReLU mask).
pub fn conv2d_backward<T: Scalar>(
    x: ArrayView4<T>,
    kernel: ArrayView4<T>,
    out: ArrayView4<T>,
    dout: ArrayView4<T>,
    relu: bool,
    need_dx: bool,
    need_params: bool,
) -> ConvGrads<T> {
    let (n, h, w, c) = x.dim();
    let (k, _, _, f) = kernel.dim();
    let x = x.as_standard_layout();
    let kernel = kernel.as_standard_layout();
    let wmat = kernel.view().into_shape_with_order((k * k * c, f)).unwrap();
    let dpre = relu_mask(out, dout, relu);
    let patch = k * k * c;

    let mut dx = need_dx.then(|| Array4::<T>::zeros((n, h, w, c)));
    let mut dw = need_params.then(|| Array2::<T>::zeros((patch, f)));
    let dbias = need_params.then(|| {
        dpre.view()
            .into_shape_with_order((n * h * w, f))
            .unwrap()
            .sum_axis(Axis(0))
    });

    let tile_rows = rows_per_tile(w, patch);
    let mut cols = Array2::<T>::zeros((tile_rows.min(h) * w, patch));
    for b in 0..n {
        let xb = x.index_axis(Axis(0), b);
        let xs = xb.as_slice().unwrap();
        let gb = dpre.index_axis(Axis(0), b);
        let gm = gb.into_shape_with_order((h * w, f)).unwrap();
        if k == 1 {
            let xm = xb.view().into_shape_with_order((h * w, c)).unwrap();
            if let Some(dw) = dw.as_mut() {
                general_mat_mul(T::one(), &xm.t(), &gm, T::one(), dw);
            }
            if let Some(dx) = dx.as_mut() {
                let mut dxb = dx.index_axis_mut(Axis(0), b);
                let mut dxm = dxb.view_mut().into_shape_with_order((h * w, c)).unwrap();
                general_mat_mul(T::one(), &gm, &wmat.t(), T::zero(), &mut dxm);
            }
            continue;
        }
        let mut y0 = 0;
        while y0 < h {
            let y1 = (y0 + tile_rows).min(h);
            let rows = (y1 - y0) * w;
            let g_tile = gm.slice(s![y0 * w..y1 * w, ..]);
            if let Some(dw) = dw.as_mut() {
                let mut tile = cols.slice_mut(s![..rows, ..]);
                im2col(xs, (h, w, c), k, y0, y1, tile.as_slice_mut().unwrap());
                general_mat_mul(T::one(), &tile.t(), &g_tile, T::one(), dw);
            }
            if let Some(dx) = dx.as_mut() {
                let mut tile = cols.slice_mut(s![..rows, ..]);
                general_mat_mul(T::one(), &g_tile, &wmat.t(), T::zero(), &mut tile);
                let mut dxb = dx.index_axis_mut(Axis(0), b);
                col2im_add(
                    tile.as_slice().unwrap(),
                    (h, w, c),
                    k,
                    y0,
                    y1,
                    dxb.as_slice_mut().unwrap(),
                );
            }
            y0 = y1;
        }
    }

    ConvGrads {
        dx,
        dkernel: dw.map(|m| m.into_shape_with_order((k, k, c, f)).unwrap()),
        dbias,
    }
}

/// 2x2, stride-2 transposed convolution (exact 2x upsampling).
pub fn conv_transpose2x2_forward<T: Scalar>(
    x: ArrayView4<T>,
    kernel: ArrayView4<T>,
    bias: ArrayView1<T>,
    relu: bool,
) -> Array4<T> {
    let (n, h, w, c) = x.dim();
    let (kc, _, _, f) = kernel.dim();
    assert_eq!(kc, c, "conv_transpose: kernel expects {kc} channels, input has {c}");
    let x = x.as_standard_layout();
    let kernel = kernel.as_standard_layout();
    let wmat = kernel.view().into_shape_with_order((c, 4 * f)).unwrap();
    let mut out = Array4::<T>::zeros((n, 2 * h, 2 * w, f));
    let mut y4 = Array2::<T>::zeros((h * w, 4 * f));
    for b in 0..n {
        let xm = x.index_axis(Axis(0), b).into_shape_with_order((h * w, c)).unwrap();
        general_mat_mul(T::one(), &xm, &wmat, T::zero(), &mut y4);
        let mut ob = out.index_axis_mut(Axis(0), b);
        for y in 0..h {
            for xx in 0..w {
                let src = y4.row(y * w + xx);
                for dy in 0..2 {
                    for dx in 0..2 {
                        let seg = src.slice(s![(dy * 2 + dx) * f..(dy * 2 + dx + 1) * f]);
                        let mut dst = ob.slice_mut(s![2 * y + dy, 2 * xx + dx, ..]);
                        dst.assign(&seg);
                        dst += &bias;
                        if relu {
                            dst.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn conv_transpose2x2_backward<T: Scalar>(
    x: ArrayView4<T>,
    kernel: ArrayView4<T>,
    out: ArrayView4<T>,
    dout: ArrayView4<T>,
    relu: bool,
    need_dx: bool,
    need_params: bool,
) -> ConvGrads<T> {
    let (n, h, w, c) = x.dim();
    let f = kernel.dim().3;
    let x = x.as_standard_layout();
    let kernel = kernel.as_standard_layout();
    let wmat = kernel.view().into_shape_with_order((c, 4 * f)).unwrap();
    let dpre = relu_mask(out, dout, relu);

    let mut dx = need_dx.then(|| Array4::<T>::zeros((n, h, w, c)));
    let mut dw = need_params.then(|| Array2::<T>::zeros((c, 4 * f)));
    let dbias = need_params.then(|| {
        dpre.view()
            .into_shape_with_order((n * 4 * h * w, f))
            .unwrap()
            .sum_axis(Axis(0))
    });
    let mut g4 = Array2::<T>::zeros((h * w, 4 * f));
    for b in 0..n {
        let gb = dpre.index_axis(Axis(0), b);
        for y in 0..h {
            for xx in 0..w {
                let mut dst = g4.row_mut(y * w + xx);
                for dy in 0..2 {
                    for dxx in 0..2 {
                        dst.slice_mut(s![(dy * 2 + dxx) * f..(dy * 2 + dxx + 1) * f])
                            .assign(&gb.slice(s![2 * y + dy, 2 * xx + dxx, ..]));
                    }
                }
            }
        }
        let xm = x.index_axis(Axis(0), b).into_shape_with_order((h * w, c)).unwrap();
        if let Some(dw) = dw.as_mut() {
            general_mat_mul(T::one(), &xm.t(), &g4, T::one(), dw);
        }
        if let Some(dx) = dx.as_mut() {
            let mut dxb = dx.index_axis_mut(Axis(0), b);
            let mut dxm = dxb.view_mut().into_shape_with_order((h * w, c)).unwrap();
            general_mat_mul(T::one(), &g4, &wmat.t(), T::zero(), &mut dxm);
        }
    }
    ConvGrads {
        dx,
        dkernel: dw.map(|m| m.into_shape_with_order((c, 2, 2, f)).unwrap()),
        dbias,
    }
}

/// 2x2, stride-2 max pooling. Returns the pooled tensor and, per output
/// element, the argmax position inside its window (`dy * 2 + dx`). Ties go
/// to the first position in row-major order.
pub fn max_pool2x2_forward<T: Scalar>(x: ArrayView4<T>) -> (Array4<T>, Array4<u8>) {
    let (n, h, w, c) = x.dim();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Array4::<T>::zeros((n, oh, ow, c));
    let mut idx = Array4::<u8>::zeros((n, oh, ow, c));
    for b in 0..n {
        for y in 0..oh {
            for xx in 0..ow {
                for ch in 0..c {
                    let mut best = x[[b, 2 * y, 2 * xx, ch]];
                    let mut arg = 0u8;
                    for p in 1..4u8 {
                        let v = x[[b, 2 * y + (p as usize >> 1), 2 * xx + (p as usize & 1), ch]];
                        if v > best {
                            best = v;
                            arg = p;
                        }
                    }
                    out[[b, y, xx, ch]] = best;
                    idx[[b, y, xx, ch]] = arg;
                }
            }
        }
    }
    (out, idx)
}

/// Place each value at its recorded argmax inside a zeroed 2x-larger grid.
/// Also the backward pass of max pooling.
pub fn max_unpool2x2<T: Scalar>(x: ArrayView4<T>, idx: ArrayView4<u8>) -> Array4<T> {
    let (n, h, w, c) = x.dim();
    assert_eq!(idx.dim(), x.dim(), "unpool: indices do not match input");
    let mut out = Array4::<T>::zeros((n, 2 * h, 2 * w, c));
    for ((b, y, xx, ch), &v) in x.indexed_iter() {
        let p = idx[[b, y, xx, ch]] as usize;
        out[[b, 2 * y + (p >> 1), 2 * xx + (p & 1), ch]] = v;
    }
    out
}

/// Read the values at the recorded argmax positions (adjoint of
/// [`max_unpool2x2`]).
pub fn gather_pool2x2<T: Scalar>(x: ArrayView4<T>, idx: ArrayView4<u8>) -> Array4<T> {
    let (n, h, w, c) = idx.dim();
    assert_eq!(x.dim(), (n, 2 * h, 2 * w, c), "gather: indices do not match input");
    Array4::from_shape_fn((n, h, w, c), |(b, y, xx, ch)| {
        let p = idx[[b, y, xx, ch]] as usize;
        x[[b, 2 * y + (p >> 1), 2 * xx + (p & 1), ch]]
    })
}

pub fn concat_channels<T: Scalar>(a: ArrayView4<T>, b: ArrayView4<T>) -> Array4<T> {
    ndarray::concatenate(Axis(3), &[a, b]).expect("concat: spatial dims differ")
}

/// Per-pixel softmax over the channel axis.
pub fn softmax_forward<T: Scalar>(z: ArrayView4<T>) -> Array4<T> {
    let mut out = z.to_owned();
    for mut lane in out.lanes_mut(Axis(3)) {
        let m = lane.fold(T::neg_infinity(), |a, &b| a.max(b));
        lane.mapv_inplace(|v| (v - m).exp());
        let sum = lane.sum();
        lane.mapv_inplace(|v| v / sum);
    }
    out
}

/// `dz_k = p_k (g_k - sum_j g_j p_j)` per pixel.
pub fn softmax_backward<T: Scalar>(p: ArrayView4<T>, dp: ArrayView4<T>) -> Array4<T> {
    let mut dz = dp.to_owned();
    for (mut g, pl) in dz.lanes_mut(Axis(3)).into_iter().zip(p.lanes(Axis(3))) {
        let dot = g.iter().zip(pl.iter()).fold(T::zero(), |a, (&gi, &pi)| a + gi * pi);
        g.zip_mut_with(&pl, |gi, &pi| *gi = pi * (*gi - dot));
    }
    dz
}

/// View an NHWC tensor's image `b` as a `(pixels, channels)` matrix.
pub fn pixels_by_channels<'a, T>(x: ArrayView4<'a, T>, b: usize) -> ArrayView2<'a, T> {
    let (_, h, w, c) = x.dim();
    x.index_axis_move(Axis(0), b)
        .into_shape_with_order((h * w, c))
        .expect("standard layout")
}
