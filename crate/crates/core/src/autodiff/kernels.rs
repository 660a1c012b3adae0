//! Raw numeric kernels behind the tape primitives.
//!
//! Convolution runs as im2col + GEMM. [`conv2d_direct`] is the plain
//! seven-loop definition, kept as the reference the fast path is tested against.

/// Geometry of a 2-D convolution over NCHW input with OIHW weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub height: usize,
    pub width: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        (
            (self.height + 2 * self.padding - self.kernel) / self.stride + 1,
            (self.width + 2 * self.padding - self.kernel) / self.stride + 1,
        )
    }

    fn col_rows(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }
}

/// `c = a' * b' + beta * c` where `'` is an optional transpose; `a'` is m×k, `b'` is k×n.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: bounds asserted above; strides describe row-major (or transposed) views
    // that stay within the asserted lengths.
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

fn im2col(g: &ConvGeom, x: &[f64], col: &mut [f64]) {
    let (ho, wo) = g.out_hw();
    let k = g.kernel;
    let plane = ho * wo;
    for c in 0..g.in_ch {
        let xc = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut col[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    let out_row = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= g.height as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src = &xc[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, v) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        *v = if ix < 0 || ix >= g.width as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add(g: &ConvGeom, col: &[f64], dx: &mut [f64]) {
    let (ho, wo) = g.out_hw();
    let k = g.kernel;
    let plane = ho * wo;
    for c in 0..g.in_ch {
        let dxc = &mut dx[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &col[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut dxc[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix >= 0 && ix < g.width as isize {
                            dst[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward(g: &ConvGeom, x: &[f64], w: &[f64]) -> Vec<f64> {
    let (ho, wo) = g.out_hw();
    let plane = ho * wo;
    let rows = g.col_rows();
    let in_len = g.in_ch * g.height * g.width;
    let out_len = g.out_ch * plane;
    let mut col = vec![0.0; rows * plane];
    let mut out = vec![0.0; g.batch * out_len];
    for b in 0..g.batch {
        im2col(g, &x[b * in_len..(b + 1) * in_len], &mut col);
        gemm(
            g.out_ch,
            rows,
            plane,
            w,
            false,
            &col,
            false,
            0.0,
            &mut out[b * out_len..(b + 1) * out_len],
        );
    }
    out
}

/// Returns (dx, dw) given the upstream gradient `dy`.
pub fn conv2d_backward(g: &ConvGeom, x: &[f64], w: &[f64], dy: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (ho, wo) = g.out_hw();
    let plane = ho * wo;
    let rows = g.col_rows();
    let in_len = g.in_ch * g.height * g.width;
    let out_len = g.out_ch * plane;
    let mut col = vec![0.0; rows * plane];
    let mut dcol = vec![0.0; rows * plane];
    let mut dx = vec![0.0; g.batch * in_len];
    let mut dw = vec![0.0; w.len()];
    for b in 0..g.batch {
        let dyb = &dy[b * out_len..(b + 1) * out_len];
        im2col(g, &x[b * in_len..(b + 1) * in_len], &mut col);
        gemm(g.out_ch, plane, rows, dyb, false, &col, true, 1.0, &mut dw);
        gemm(rows, g.out_ch, plane, w, true, dyb, false, 0.0, &mut dcol);
        col2im_add(g, &dcol, &mut dx[b * in_len..(b + 1) * in_len]);
    }
    (dx, dw)
}

/// Reference convolution straight from the definition.
pub fn conv2d_direct(g: &ConvGeom, x: &[f64], w: &[f64]) -> Vec<f64> {
    let (ho, wo) = g.out_hw();
    let k = g.kernel;
    let mut out = vec![0.0; g.batch * g.out_ch * ho * wo];
    for b in 0..g.batch {
        for o in 0..g.out_ch {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for c in 0..g.in_ch {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                                let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                                if iy < 0
                                    || ix < 0
                                    || iy >= g.height as isize
                                    || ix >= g.width as isize
                                {
                                    continue;
                                }
                                let xv = x[((b * g.in_ch + c) * g.height + iy as usize) * g.width
                                    + ix as usize];
                                let wv = w[((o * g.in_ch + c) * k + ky) * k + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((b * g.out_ch + o) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    out
}

/// Max pooling over NCHW without padding; returns values and the flat input index of each max.
pub fn maxpool2d_forward(
    x: &[f64],
    planes: usize,
    height: usize,
    width: usize,
    window: usize,
    stride: usize,
) -> (Vec<f64>, Vec<usize>) {
    let ho = (height - window) / stride + 1;
    let wo = (width - window) / stride + 1;
    let mut out = Vec::with_capacity(planes * ho * wo);
    let mut arg = Vec::with_capacity(planes * ho * wo);
    for p in 0..planes {
        let base = p * height * width;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = base + oy * stride * width + ox * stride;
                for ky in 0..window {
                    for kx in 0..window {
                        let i = base + (oy * stride + ky) * width + ox * stride + kx;
                        // first maximum wins on ties
                        if x[i] > best {
                            best = x[i];
                            best_i = i;
                        }
                    }
                }
                out.push(best);
                arg.push(best_i);
            }
        }
    }
    (out, arg)
}
