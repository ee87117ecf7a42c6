//! Direct (loop) kernels for convolution, pooling and dense layers.
//!
//! Feature maps are single samples laid out `[channels, height, width]`.

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad - self.k) / self.stride + 1
    }

    /// Output columns `ox` whose input column `ox*stride + kx - pad` is in range.
    #[inline]
    fn col_range(&self, kx: usize) -> (usize, usize) {
        let out_w = self.out_w();
        // smallest ox with ox*stride + kx >= pad
        let lo = if kx >= self.pad { 0 } else { (self.pad - kx).div_ceil(self.stride) };
        // largest ox with ox*stride + kx - pad <= in_w - 1
        let lim = self.in_w + self.pad - 1;
        if kx > lim {
            return (0, 0);
        }
        let hi = ((lim - kx) / self.stride + 1).min(out_w);
        (lo.min(hi), hi)
    }

    #[inline]
    fn in_row(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = oy * self.stride + ky;
        if iy < self.pad || iy - self.pad >= self.in_h {
            None
        } else {
            Some(iy - self.pad)
        }
    }
}

pub(crate) fn conv2d_forward(
    g: &ConvGeom,
    input: &[f32],
    weight: &[f32],
    bias: &[f32],
) -> Vec<f32> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut out = vec![0.0f32; g.out_c * oh * ow];
    for o in 0..g.out_c {
        let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
        plane.iter_mut().for_each(|v| *v = bias[o]);
        for c in 0..g.in_c {
            let src = &input[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let w = weight[((o * g.in_c + c) * g.k + ky) * g.k + kx];
                    let (lo, hi) = g.col_range(kx);
                    if lo >= hi {
                        continue;
                    }
                    for oy in 0..oh {
                        let Some(iy) = g.in_row(oy, ky) else { continue };
                        let row = &src[iy * g.in_w..(iy + 1) * g.in_w];
                        let dst = &mut plane[oy * ow..(oy + 1) * ow];
                        if g.stride == 1 {
                            let base = lo + kx - g.pad;
                            for (d, s) in dst[lo..hi].iter_mut().zip(&row[base..base + hi - lo]) {
                                *d += w * s;
                            }
                        } else {
                            for ox in lo..hi {
                                dst[ox] += w * row[ox * g.stride + kx - g.pad];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(grad_input, grad_weight, grad_bias)`; `grad_input` is skipped
/// when `need_input` is false.
pub(crate) fn conv2d_backward(
    g: &ConvGeom,
    input: &[f32],
    weight: &[f32],
    grad_out: &[f32],
    need_input: bool,
) -> (Option<Vec<f32>>, Vec<f32>, Vec<f32>) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut gw = vec![0.0f32; weight.len()];
    let mut gb = vec![0.0f32; g.out_c];
    let mut gi = need_input.then(|| vec![0.0f32; input.len()]);
    for o in 0..g.out_c {
        let gplane = &grad_out[o * oh * ow..(o + 1) * oh * ow];
        gb[o] = gplane.iter().sum();
        for c in 0..g.in_c {
            let off = c * g.in_h * g.in_w;
            let src = &input[off..off + g.in_h * g.in_w];
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let widx = ((o * g.in_c + c) * g.k + ky) * g.k + kx;
                    let w = weight[widx];
                    let (lo, hi) = g.col_range(kx);
                    if lo >= hi {
                        continue;
                    }
                    let mut acc = 0.0f32;
                    for oy in 0..oh {
                        let Some(iy) = g.in_row(oy, ky) else { continue };
                        let grow = &gplane[oy * ow..(oy + 1) * ow];
                        let row = &src[iy * g.in_w..(iy + 1) * g.in_w];
                        if g.stride == 1 {
                            let base = lo + kx - g.pad;
                            acc += grow[lo..hi]
                                .iter()
                                .zip(&row[base..base + hi - lo])
                                .map(|(a, b)| a * b)
                                .sum::<f32>();
                            if let Some(gi) = gi.as_mut() {
                                let dst = &mut gi[off + iy * g.in_w..off + (iy + 1) * g.in_w];
                                for (d, s) in dst[base..base + hi - lo].iter_mut().zip(&grow[lo..hi]) {
                                    *d += w * s;
                                }
                            }
                        } else {
                            for ox in lo..hi {
                                let ix = ox * g.stride + kx - g.pad;
                                acc += grow[ox] * row[ix];
                                if let Some(gi) = gi.as_mut() {
                                    gi[off + iy * g.in_w + ix] += w * grow[ox];
                                }
                            }
                        }
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
    (gi, gw, gb)
}

/// 2x2 max pooling with stride 2 (trailing odd row/column dropped).
/// Returns the pooled map and the flat input index of each maximum.
pub(crate) fn maxpool2_forward(c: usize, h: usize, w: usize, input: &[f32]) -> (Vec<f32>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = usize::MAX;
                let mut bv = f32::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let idx = ch * h * w + (2 * oy + dy) * w + 2 * ox + dx;
                        if input[idx] > bv || best == usize::MAX {
                            bv = input[idx];
                            best = idx;
                        }
                    }
                }
                out.push(bv);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

/// `y = W x + b` with `W` laid out `[out, in]`.
pub(crate) fn linear_forward(input: &[f32], weight: &[f32], bias: &[f32]) -> Vec<f32> {
    let n_in = input.len();
    bias.iter()
        .enumerate()
        .map(|(o, b)| {
            b + weight[o * n_in..(o + 1) * n_in]
                .iter()
                .zip(input)
                .map(|(w, x)| w * x)
                .sum::<f32>()
        })
        .collect()
}
