//! Dense kernels for the toy detector. Activations are channel-major
//! (`C x H x W`) `f64` buffers.

/// `c = alpha * op(a) * op(b) + beta * c`, with `op(a)` of shape `m x k`,
/// `op(b)` of shape `k x n`, all row-major.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every index the strides reach is
    // inside the corresponding slice.
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

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
}

impl ConvGeometry {
    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let span = self.dilation * (self.kernel - 1) + 1;
        (
            (h + 2 * self.pad - span) / self.stride + 1,
            (w + 2 * self.pad - span) / self.stride + 1,
        )
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    /// Unfolds the input into a `(Cin*k*k) x (Ho*Wo)` matrix.
    pub fn im2col(&self, input: &[f64], h: usize, w: usize) -> Vec<f64> {
        let (ho, wo) = self.output_size(h, w);
        let p = ho * wo;
        let mut cols = vec![0.0; self.patch_len() * p];
        for c in 0..self.in_channels {
            let plane = &input[c * h * w..(c + 1) * h * w];
            for ky in 0..self.kernel {
                for kx in 0..self.kernel {
                    let row = (c * self.kernel + ky) * self.kernel + kx;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ky * self.dilation) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..wo {
                            let ix = (ox * self.stride + kx * self.dilation) as isize - self.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[oy * wo + ox] = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    /// Adjoint of [`im2col`](Self::im2col): accumulates column gradients
    /// back onto the input plane.
    pub fn col2im(&self, dcols: &[f64], h: usize, w: usize, dinput: &mut [f64]) {
        let (ho, wo) = self.output_size(h, w);
        let p = ho * wo;
        for c in 0..self.in_channels {
            let plane = &mut dinput[c * h * w..(c + 1) * h * w];
            for ky in 0..self.kernel {
                for kx in 0..self.kernel {
                    let row = (c * self.kernel + ky) * self.kernel + kx;
                    let src = &dcols[row * p..(row + 1) * p];
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ky * self.dilation) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..wo {
                            let ix = (ox * self.stride + kx * self.dilation) as isize - self.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                plane[iy as usize * w + ix as usize] += src[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Returns `(output, cols)`; output is `Cout x (Ho*Wo)` before activation.
    pub fn forward(&self, input: &[f64], h: usize, w: usize, weight: &[f64], bias: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let cols = self.im2col(input, h, w);
        let (ho, wo) = self.output_size(h, w);
        let p = ho * wo;
        let mut out = vec![0.0; self.out_channels * p];
        for (o, row) in out.chunks_exact_mut(p).enumerate() {
            row.fill(bias[o]);
        }
        gemm(self.out_channels, self.patch_len(), p, weight, false, &cols, false, 1.0, &mut out);
        (out, cols)
    }

    /// Accumulates weight/bias gradients; returns the input gradient when
    /// `need_input` is set.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        dout: &[f64],
        cols: &[f64],
        h: usize,
        w: usize,
        weight: &[f64],
        dweight: &mut [f64],
        dbias: &mut [f64],
        need_input: bool,
    ) -> Option<Vec<f64>> {
        let (ho, wo) = self.output_size(h, w);
        let p = ho * wo;
        let k = self.patch_len();
        gemm(self.out_channels, p, k, dout, false, cols, true, 1.0, dweight);
        for (o, row) in dout.chunks_exact(p).enumerate() {
            dbias[o] += row.iter().sum::<f64>();
        }
        if !need_input {
            return None;
        }
        let mut dcols = vec![0.0; k * p];
        gemm(k, self.out_channels, p, weight, true, dout, false, 0.0, &mut dcols);
        let mut dinput = vec![0.0; self.in_channels * h * w];
        self.col2im(&dcols, h, w, &mut dinput);
        Some(dinput)
    }
}

pub fn relu_inplace(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes gradient entries where the post-activation value is not positive.
pub fn relu_backward(dout: &mut [f64], activated: &[f64]) {
    for (g, &a) in dout.iter_mut().zip(activated) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Batched affine map: `y[n x out] = x[n x in] * W^T + b`.
pub fn linear_forward(x: &[f64], n: usize, weight: &[f64], bias: &[f64], out_dim: usize) -> Vec<f64> {
    let in_dim = weight.len() / out_dim;
    let mut y = vec![0.0; n * out_dim];
    for row in y.chunks_exact_mut(out_dim) {
        row.copy_from_slice(bias);
    }
    gemm(n, in_dim, out_dim, x, false, weight, true, 1.0, &mut y);
    y
}

/// Accumulates parameter gradients and returns `dx`.
pub fn linear_backward(
    dy: &[f64],
    x: &[f64],
    n: usize,
    weight: &[f64],
    dweight: &mut [f64],
    dbias: &mut [f64],
    out_dim: usize,
) -> Vec<f64> {
    let in_dim = weight.len() / out_dim;
    gemm(out_dim, n, in_dim, dy, true, x, false, 1.0, dweight);
    for row in dy.chunks_exact(out_dim) {
        for (b, g) in dbias.iter_mut().zip(row) {
            *b += g;
        }
    }
    let mut dx = vec![0.0; n * in_dim];
    gemm(n, out_dim, in_dim, dy, false, weight, false, 0.0, &mut dx);
    dx
}

/// Bilinear sampling plan for one region: for every output bin the list of
/// `(feature-map position, weight)` pairs, shared by all channels.
#[derive(Debug, Clone)]
pub struct RoiPlan {
    pub bins: Vec<Vec<(usize, f64)>>,
}

/// RoIAlign over a `C x H x W` map; `region` is in feature-map coordinates
/// (`x1, y1, x2, y2`), pooled to `grid_h x grid_w` bins with
/// `samples x samples` bilinear taps per bin.
pub fn roi_align_plan(region: [f64; 4], h: usize, w: usize, grid_h: usize, grid_w: usize, samples: usize) -> RoiPlan {
    let [x1, y1, x2, y2] = region;
    let bin_w = (x2 - x1).max(1e-6) / grid_w as f64;
    let bin_h = (y2 - y1).max(1e-6) / grid_h as f64;
    let norm = 1.0 / (samples * samples) as f64;
    let mut bins = Vec::with_capacity(grid_h * grid_w);
    for by in 0..grid_h {
        for bx in 0..grid_w {
            let mut taps: Vec<(usize, f64)> = Vec::with_capacity(4 * samples * samples);
            for sy in 0..samples {
                let y = y1 + bin_h * (by as f64 + (sy as f64 + 0.5) / samples as f64);
                for sx in 0..samples {
                    let x = x1 + bin_w * (bx as f64 + (sx as f64 + 0.5) / samples as f64);
                    bilinear_taps(y, x, h, w, norm, &mut taps);
                }
            }
            bins.push(taps);
        }
    }
    RoiPlan { bins }
}

fn bilinear_taps(y: f64, x: f64, h: usize, w: usize, scale: f64, taps: &mut Vec<(usize, f64)>) {
    if y < -1.0 || y > h as f64 || x < -1.0 || x > w as f64 {
        return;
    }
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let ly = y - y0 as f64;
    let lx = x - x0 as f64;
    let (hy, hx) = (1.0 - ly, 1.0 - lx);
    taps.push((y0 * w + x0, hy * hx * scale));
    taps.push((y0 * w + x1, hy * lx * scale));
    taps.push((y1 * w + x0, ly * hx * scale));
    taps.push((y1 * w + x1, ly * lx * scale));
}

impl RoiPlan {
    /// Pooled vector laid out channel-major: `c * bins + bin`.
    pub fn pool(&self, fmap: &[f64], channels: usize, plane: usize, out: &mut [f64]) {
        let nb = self.bins.len();
        for c in 0..channels {
            let src = &fmap[c * plane..(c + 1) * plane];
            for (b, taps) in self.bins.iter().enumerate() {
                out[c * nb + b] = taps.iter().map(|&(p, wt)| src[p] * wt).sum();
            }
        }
    }

    pub fn pool_backward(&self, dpooled: &[f64], channels: usize, plane: usize, dfmap: &mut [f64]) {
        let nb = self.bins.len();
        for c in 0..channels {
            let dst = &mut dfmap[c * plane..(c + 1) * plane];
            for (b, taps) in self.bins.iter().enumerate() {
                let g = dpooled[c * nb + b];
                if g != 0.0 {
                    for &(p, wt) in taps {
                        dst[p] += g * wt;
                    }
                }
            }
        }
    }
}
