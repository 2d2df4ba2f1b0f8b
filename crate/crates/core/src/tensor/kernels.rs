//! Raw slice kernels shared by tape ops: strided GEMM, im2col convolution
//! in NHWC layout and 2×2 average pooling.

use super::Scalar;

/// `out (+)= op(a) · op(b)` with `op(a)` of shape `m×k` and `op(b)` of shape `k×n`.
///
/// `a` is stored `[m,k]` (or `[k,m]` when `trans_a`), `b` is stored `[k,n]`
/// (or `[n,k]` when `trans_b`), `out` is `[m,n]` row-major.
#[allow(clippy::too_many_arguments)]
pub fn gemm<S: Scalar>(
    a: &[S],
    b: &[S],
    out: &mut [S],
    m: usize,
    k: usize,
    n: usize,
    trans_a: bool,
    trans_b: bool,
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && out.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let beta = if accumulate { S::ONE } else { S::ZERO };
    if k == 0 {
        if !accumulate {
            out[..m * n].iter_mut().for_each(|v| *v = S::ZERO);
        }
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths checked above; `out` is a distinct &mut borrow.
    unsafe {
        S::gemm(
            m,
            k,
            n,
            S::ONE,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a stride-1, zero-padded ("same") square convolution in NHWC.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub height: usize,
    pub width: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
}

impl ConvGeom {
    pub fn pad(&self) -> usize {
        self.kernel / 2
    }

    /// Columns of the im2col matrix, i.e. the fan-in `C_in·k·k`.
    pub fn patch(&self) -> usize {
        self.kernel * self.kernel * self.c_in
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
}

/// Unfold one `[H,W,C_in]` image into `[H·W, k·k·C_in]`.
pub fn im2col<S: Scalar>(img: &[S], g: &ConvGeom, col: &mut [S]) {
    let (h, w, c, k) = (g.height, g.width, g.c_in, g.kernel);
    let pad = g.pad() as isize;
    let patch = g.patch();
    for y in 0..h {
        for x in 0..w {
            let row = &mut col[(y * w + x) * patch..(y * w + x + 1) * patch];
            for ky in 0..k {
                let sy = y as isize + ky as isize - pad;
                for kx in 0..k {
                    let sx = x as isize + kx as isize - pad;
                    let dst = &mut row[(ky * k + kx) * c..(ky * k + kx + 1) * c];
                    if sy < 0 || sy >= h as isize || sx < 0 || sx >= w as isize {
                        dst.iter_mut().for_each(|v| *v = S::ZERO);
                    } else {
                        let off = (sy as usize * w + sx as usize) * c;
                        dst.copy_from_slice(&img[off..off + c]);
                    }
                }
            }
        }
    }
}

/// Fold `[H·W, k·k·C_in]` column gradients back into an image gradient (accumulating).
pub fn col2im<S: Scalar>(col: &[S], g: &ConvGeom, img: &mut [S]) {
    let (h, w, c, k) = (g.height, g.width, g.c_in, g.kernel);
    let pad = g.pad() as isize;
    let patch = g.patch();
    for y in 0..h {
        for x in 0..w {
            let row = &col[(y * w + x) * patch..(y * w + x + 1) * patch];
            for ky in 0..k {
                let sy = y as isize + ky as isize - pad;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let sx = x as isize + kx as isize - pad;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let src = &row[(ky * k + kx) * c..(ky * k + kx + 1) * c];
                    let off = (sy as usize * w + sx as usize) * c;
                    for (d, &s) in img[off..off + c].iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// Forward convolution of a batch. `weight` is `[C_out, k, k, C_in]`.
pub fn conv2d_forward<S: Scalar>(x: &[S], weight: &[S], batch: usize, g: &ConvGeom) -> Vec<S> {
    let (px, patch) = (g.pixels(), g.patch());
    let in_len = px * g.c_in;
    let out_len = px * g.c_out;
    let mut out = vec![S::ZERO; batch * out_len];
    let mut col = vec![S::ZERO; px * patch];
    for b in 0..batch {
        im2col(&x[b * in_len..(b + 1) * in_len], g, &mut col);
        gemm(
            &col,
            weight,
            &mut out[b * out_len..(b + 1) * out_len],
            px,
            patch,
            g.c_out,
            false,
            true,
            false,
        );
    }
    out
}

/// Gradients of a batched convolution with respect to input and weight.
pub fn conv2d_backward<S: Scalar>(
    x: &[S],
    weight: &[S],
    grad_out: &[S],
    batch: usize,
    g: &ConvGeom,
    want_dx: bool,
    want_dw: bool,
) -> (Option<Vec<S>>, Option<Vec<S>>) {
    let (px, patch) = (g.pixels(), g.patch());
    let in_len = px * g.c_in;
    let out_len = px * g.c_out;
    let mut dx = want_dx.then(|| vec![S::ZERO; batch * in_len]);
    let mut dw = want_dw.then(|| vec![S::ZERO; g.c_out * patch]);
    let mut col = vec![S::ZERO; px * patch];
    for b in 0..batch {
        let go = &grad_out[b * out_len..(b + 1) * out_len];
        if let Some(dw) = dw.as_mut() {
            im2col(&x[b * in_len..(b + 1) * in_len], g, &mut col);
            // dW[c_out, patch] += go^T[c_out, px] · col[px, patch]
            gemm(go, &col, dw, g.c_out, px, patch, true, false, true);
        }
        if let Some(dx) = dx.as_mut() {
            // dcol[px, patch] = go[px, c_out] · W[c_out, patch]
            gemm(go, weight, &mut col, px, g.c_out, patch, false, false, false);
            col2im(&col, g, &mut dx[b * in_len..(b + 1) * in_len]);
        }
    }
    (dx, dw)
}

/// 2×2 mean pooling over `[B,H,W,C]`.
pub fn avg_pool2_forward<S: Scalar>(x: &[S], b: usize, h: usize, w: usize, c: usize) -> Vec<S> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = S::from_f64(0.25);
    let mut out = vec![S::ZERO; b * oh * ow * c];
    for n in 0..b {
        for y in 0..oh {
            for xx in 0..ow {
                let o = ((n * oh + y) * ow + xx) * c;
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let i = ((n * h + 2 * y + dy) * w + 2 * xx + dx) * c;
                    for ch in 0..c {
                        out[o + ch] += x[i + ch];
                    }
                }
                for ch in 0..c {
                    out[o + ch] *= quarter;
                }
            }
        }
    }
    out
}

pub fn avg_pool2_backward<S: Scalar>(g: &[S], b: usize, h: usize, w: usize, c: usize) -> Vec<S> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = S::from_f64(0.25);
    let mut dx = vec![S::ZERO; b * h * w * c];
    for n in 0..b {
        for y in 0..oh {
            for xx in 0..ow {
                let o = ((n * oh + y) * ow + xx) * c;
                for (dy, dxo) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let i = ((n * h + 2 * y + dy) * w + 2 * xx + dxo) * c;
                    for ch in 0..c {
                        dx[i + ch] = g[o + ch] * quarter;
                    }
                }
            }
        }
    }
    dx
}
