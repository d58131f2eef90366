//! Three stride-2 convolution blocks, global average pooling and a linear
//! projection, with hand-written backpropagation.
//!
//! Parameter layout (row-major throughout):
//!
//! ```text
//! for block k in 0..3:  weight[c_out][c_in][3][3], bias[c_out]
//! projection:           weight[dim][c_last], bias[dim]
//! ```
//!
//! Each block is `conv3x3(stride 2, zero pad 1) + bias -> ReLU`, so a
//! `size x size` input reaches the pooling layer at `size / 8`.

use matrixmultiply::dgemm;

use crate::dataset::Image;

const K: usize = 3;
pub(crate) const BLOCKS: usize = 3;

#[derive(Debug, Clone, Copy)]
struct ConvShape {
    c_in: usize,
    c_out: usize,
    h_in: usize,
    w_in: usize,
    h_out: usize,
    w_out: usize,
    w_offset: usize,
    b_offset: usize,
}

impl ConvShape {
    fn patch(&self) -> usize {
        self.c_in * K * K
    }

    fn positions(&self) -> usize {
        self.h_out * self.w_out
    }
}

#[derive(Debug, Clone)]
pub(crate) struct TinyConv {
    convs: [ConvShape; BLOCKS],
    dim: usize,
    fc_w: usize,
    fc_b: usize,
    params: usize,
    size: usize,
}

/// Closed-form parameter count.
pub fn tiny_conv_param_count(widths: [usize; BLOCKS], dim: usize) -> usize {
    let mut c_in = 3;
    let mut n = 0;
    for w in widths {
        n += w * c_in * K * K + w;
        c_in = w;
    }
    n + dim * c_in + dim
}

/// Scratch buffers for one image. Reused across images to avoid allocation.
#[derive(Debug, Default)]
pub(crate) struct Workspace {
    input: Vec<f64>,
    cols: [Vec<f64>; BLOCKS],
    acts: [Vec<f64>; BLOCKS],
    pooled: Vec<f64>,
    d_act: Vec<f64>,
    d_cols: Vec<f64>,
    d_prev: Vec<f64>,
}

impl TinyConv {
    pub(crate) fn new(widths: [usize; BLOCKS], dim: usize, size: usize) -> Self {
        let mut offset = 0;
        let mut c_in = 3;
        let mut side = size;
        let convs = widths.map(|c_out| {
            let shape = ConvShape {
                c_in,
                c_out,
                h_in: side,
                w_in: side,
                h_out: side.div_ceil(2),
                w_out: side.div_ceil(2),
                w_offset: offset,
                b_offset: offset + c_out * c_in * K * K,
            };
            offset = shape.b_offset + c_out;
            c_in = c_out;
            side = shape.h_out;
            shape
        });
        let fc_w = offset;
        let fc_b = fc_w + dim * c_in;
        let params = fc_b + dim;
        debug_assert_eq!(params, tiny_conv_param_count(widths, dim));
        Self {
            convs,
            dim,
            fc_w,
            fc_b,
            params,
            size,
        }
    }

    #[cfg(test)]
    pub(crate) fn param_count(&self) -> usize {
        self.params
    }

    /// Fan-in of each weight tensor, in layout order: three conv blocks then
    /// the projection. Used by initialization.
    pub(crate) fn weight_blocks(&self) -> Vec<(std::ops::Range<usize>, usize, bool)> {
        let mut out: Vec<_> = self
            .convs
            .iter()
            .map(|c| (c.w_offset..c.b_offset, c.patch(), true))
            .collect();
        out.push((self.fc_w..self.fc_b, self.convs[BLOCKS - 1].c_out, false));
        out
    }

    pub(crate) fn projection_range(&self) -> std::ops::Range<usize> {
        self.fc_w..self.params
    }

    fn load_input(&self, image: &Image, ws: &mut Workspace) {
        let hw = self.size * self.size;
        ws.input.resize(3 * hw, 0.0);
        // HWC [0,1] -> CHW [-1,1]
        for (p, rgb) in image.pixels().chunks_exact(3).enumerate() {
            for c in 0..3 {
                ws.input[c * hw + p] = 2.0 * f64::from(rgb[c]) - 1.0;
            }
        }
    }

    /// Forward pass; leaves every intermediate needed by [`Self::backward`]
    /// in `ws`.
    pub(crate) fn forward(&self, params: &[f64], image: &Image, ws: &mut Workspace, out: &mut [f64]) {
        self.load_input(image, ws);
        for b in 0..BLOCKS {
            let shape = self.convs[b];
            let (before, after) = ws.acts.split_at_mut(b);
            let input: &[f64] = if b == 0 { &ws.input } else { &before[b - 1] };
            im2col(&shape, input, &mut ws.cols[b]);
            let act = &mut after[0];
            act.resize(shape.c_out * shape.positions(), 0.0);
            let bias = &params[shape.b_offset..shape.b_offset + shape.c_out];
            let p = shape.positions();
            for (c, row) in act.chunks_exact_mut(p).enumerate() {
                row.fill(bias[c]);
            }
            unsafe {
                dgemm(
                    shape.c_out,
                    shape.patch(),
                    p,
                    1.0,
                    params[shape.w_offset..].as_ptr(),
                    shape.patch() as isize,
                    1,
                    ws.cols[b].as_ptr(),
                    p as isize,
                    1,
                    1.0,
                    act.as_mut_ptr(),
                    p as isize,
                    1,
                );
            }
            for v in act.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }

        let last = self.convs[BLOCKS - 1];
        let p = last.positions();
        ws.pooled.clear();
        ws.pooled.extend(
            ws.acts[BLOCKS - 1]
                .chunks_exact(p)
                .map(|row| row.iter().sum::<f64>() / p as f64),
        );
        let c = last.c_out;
        for (d, o) in out.iter_mut().enumerate().take(self.dim) {
            let w = &params[self.fc_w + d * c..self.fc_w + (d + 1) * c];
            *o = params[self.fc_b + d] + w.iter().zip(&ws.pooled).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// Accumulates `d loss / d params` into `grad`, given `d loss / d output`
    /// for the image most recently passed to [`Self::forward`] with `ws`.
    pub(crate) fn backward(&self, params: &[f64], ws: &mut Workspace, d_out: &[f64], grad: &mut [f64]) {
        let last = self.convs[BLOCKS - 1];
        let c = last.c_out;
        for d in 0..self.dim {
            let g = d_out[d];
            grad[self.fc_b + d] += g;
            let gw = &mut grad[self.fc_w + d * c..self.fc_w + (d + 1) * c];
            for (gw, x) in gw.iter_mut().zip(&ws.pooled) {
                *gw += g * x;
            }
        }
        // gradient at the last block's output (through the pooling)
        let p = last.positions();
        ws.d_act.clear();
        ws.d_act.resize(c * p, 0.0);
        for ch in 0..c {
            let mut g = 0.0;
            for d in 0..self.dim {
                g += params[self.fc_w + d * c + ch] * d_out[d];
            }
            let g = g / p as f64;
            ws.d_act[ch * p..(ch + 1) * p].fill(g);
        }

        for b in (0..BLOCKS).rev() {
            let shape = self.convs[b];
            let p = shape.positions();
            let act = &ws.acts[b];
            for (g, a) in ws.d_act.iter_mut().zip(act) {
                if *a <= 0.0 {
                    *g = 0.0;
                }
            }
            for ch in 0..shape.c_out {
                grad[shape.b_offset + ch] += ws.d_act[ch * p..(ch + 1) * p].iter().sum::<f64>();
            }
            // dW += dAct · colsᵀ
            unsafe {
                dgemm(
                    shape.c_out,
                    p,
                    shape.patch(),
                    1.0,
                    ws.d_act.as_ptr(),
                    p as isize,
                    1,
                    ws.cols[b].as_ptr(),
                    1,
                    p as isize,
                    1.0,
                    grad[shape.w_offset..].as_mut_ptr(),
                    shape.patch() as isize,
                    1,
                );
            }
            if b == 0 {
                break;
            }
            // dCols = Wᵀ · dAct
            ws.d_cols.clear();
            ws.d_cols.resize(shape.patch() * p, 0.0);
            unsafe {
                dgemm(
                    shape.patch(),
                    shape.c_out,
                    p,
                    1.0,
                    params[shape.w_offset..].as_ptr(),
                    1,
                    shape.patch() as isize,
                    ws.d_act.as_ptr(),
                    p as isize,
                    1,
                    0.0,
                    ws.d_cols.as_mut_ptr(),
                    p as isize,
                    1,
                );
            }
            col2im(&shape, &ws.d_cols, &mut ws.d_prev);
            std::mem::swap(&mut ws.d_act, &mut ws.d_prev);
        }
    }
}

fn im2col(s: &ConvShape, input: &[f64], cols: &mut Vec<f64>) {
    let p = s.positions();
    cols.clear();
    cols.resize(s.patch() * p, 0.0);
    for c in 0..s.c_in {
        let plane = &input[c * s.h_in * s.w_in..(c + 1) * s.h_in * s.w_in];
        for ky in 0..K {
            for kx in 0..K {
                let row = &mut cols[((c * K + ky) * K + kx) * p..][..p];
                for oy in 0..s.h_out {
                    let iy = (2 * oy + ky) as isize - 1;
                    if iy < 0 || iy >= s.h_in as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * s.w_in..(iy as usize + 1) * s.w_in];
                    let dst = &mut row[oy * s.w_out..(oy + 1) * s.w_out];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (2 * ox + kx) as isize - 1;
                        if ix >= 0 && ix < s.w_in as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
}

fn col2im(s: &ConvShape, cols: &[f64], out: &mut Vec<f64>) {
    let p = s.positions();
    out.clear();
    out.resize(s.c_in * s.h_in * s.w_in, 0.0);
    for c in 0..s.c_in {
        let plane = &mut out[c * s.h_in * s.w_in..(c + 1) * s.h_in * s.w_in];
        for ky in 0..K {
            for kx in 0..K {
                let row = &cols[((c * K + ky) * K + kx) * p..][..p];
                for oy in 0..s.h_out {
                    let iy = (2 * oy + ky) as isize - 1;
                    if iy < 0 || iy >= s.h_in as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * s.w_in..(iy as usize + 1) * s.w_in];
                    let src = &row[oy * s.w_out..(oy + 1) * s.w_out];
                    for (ox, g) in src.iter().enumerate() {
                        let ix = (2 * ox + kx) as isize - 1;
                        if ix >= 0 && ix < s.w_in as isize {
                            dst[ix as usize] += g;
                        }
                    }
                }
            }
        }
    }
}
