//! Same-padding 2-D convolution over channel-major (`C x H x W`) buffers,
//! lowered to matrix products through im2col.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

/// Spatial geometry shared by every layer of one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Geometry {
    pub height: usize,
    pub width: usize,
}

impl Geometry {
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
}

/// Expands `input` (`channels x H x W`) into a `(channels*k*k) x (H*W)` patch
/// matrix with zero padding of `k / 2`.
pub(crate) fn im2col(input: &[f64], channels: usize, geo: Geometry, k: usize) -> Vec<f64> {
    let (h, w) = (geo.height, geo.width);
    let hw = geo.pixels();
    let pad = (k / 2) as isize;
    let mut cols = vec![0.0; channels * k * k * hw];
    for ci in 0..channels {
        let plane = &input[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            let dy = ky as isize - pad;
            for kx in 0..k {
                let dx = kx as isize - pad;
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                // Output columns whose source column stays inside the image.
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src_start = (sy as usize) * w + (x_lo as isize + dx) as usize;
                    let len = x_hi - x_lo;
                    dst[y * w + x_lo..y * w + x_hi].copy_from_slice(&plane[src_start..src_start + len]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input grid.
pub(crate) fn col2im_add(cols: &[f64], channels: usize, geo: Geometry, k: usize, out: &mut [f64]) {
    let (h, w) = (geo.height, geo.width);
    let hw = geo.pixels();
    let pad = (k / 2) as isize;
    for ci in 0..channels {
        let plane = &mut out[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            let dy = ky as isize - pad;
            for kx in 0..k {
                let dx = kx as isize - pad;
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst_start = (sy as usize) * w + (x_lo as isize + dx) as usize;
                    let len = x_hi - x_lo;
                    for (d, s) in plane[dst_start..dst_start + len]
                        .iter_mut()
                        .zip(&src[y * w + x_lo..y * w + x_hi])
                    {
                        *d += s;
                    }
                }
            }
        }
    }
}

fn view(data: &[f64], rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((rows, cols), data).expect("buffer matches matrix shape")
}

fn view_mut(data: &mut [f64], rows: usize, cols: usize) -> ArrayViewMut2<'_, f64> {
    ArrayViewMut2::from_shape((rows, cols), data).expect("buffer matches matrix shape")
}

/// Patch matrix for a layer; a 1x1 kernel needs no expansion.
fn patches<'a>(input: &'a [f64], in_ch: usize, geo: Geometry, k: usize, scratch: &'a mut Vec<f64>) -> &'a [f64] {
    if k == 1 {
        input
    } else {
        *scratch = im2col(input, in_ch, geo, k);
        scratch
    }
}

/// `out = W * patches(input) + b`, with `W` stored as `out_ch x (in_ch*k*k)`.
pub(crate) fn conv_forward(
    weight: &[f64],
    bias: &[f64],
    input: &[f64],
    in_ch: usize,
    out_ch: usize,
    geo: Geometry,
    k: usize,
) -> Vec<f64> {
    let hw = geo.pixels();
    let mut scratch = Vec::new();
    let cols = patches(input, in_ch, geo, k, &mut scratch);
    let mut out = vec![0.0; out_ch * hw];
    for (row, &b) in out.chunks_exact_mut(hw).zip(bias) {
        row.fill(b);
    }
    general_mat_mul(
        1.0,
        &view(weight, out_ch, in_ch * k * k),
        &view(cols, in_ch * k * k, hw),
        1.0,
        &mut view_mut(&mut out, out_ch, hw),
    );
    out
}

/// Accumulates weight and bias gradients for one layer and, when requested,
/// returns the gradient with respect to the layer input.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    weight: &[f64],
    input: &[f64],
    grad_out: &[f64],
    in_ch: usize,
    out_ch: usize,
    geo: Geometry,
    k: usize,
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
    need_input_grad: bool,
) -> Option<Vec<f64>> {
    let hw = geo.pixels();
    let ckk = in_ch * k * k;
    let mut scratch = Vec::new();
    let cols = patches(input, in_ch, geo, k, &mut scratch);
    let dout = view(grad_out, out_ch, hw);

    general_mat_mul(
        1.0,
        &dout,
        &view(cols, ckk, hw).t(),
        1.0,
        &mut view_mut(grad_weight, out_ch, ckk),
    );
    for (gb, row) in grad_bias.iter_mut().zip(grad_out.chunks_exact(hw)) {
        *gb += row.iter().sum::<f64>();
    }

    if !need_input_grad {
        return None;
    }
    let mut dcols = vec![0.0; ckk * hw];
    general_mat_mul(
        1.0,
        &view(weight, out_ch, ckk).t(),
        &dout,
        0.0,
        &mut view_mut(&mut dcols, ckk, hw),
    );
    if k == 1 {
        return Some(dcols);
    }
    let mut dinput = vec![0.0; in_ch * hw];
    col2im_add(&dcols, in_ch, geo, k, &mut dinput);
    Some(dinput)
}
