//! Forward and backward compute kernels.
//!
//! All kernels take raw slices plus explicit dims and write into
//! caller-allocated buffers. Parallel sections split the output into
//! disjoint chunks, so results are bitwise identical for any thread count.

use rayon::prelude::*;

#[derive(Clone, Copy, Debug)]
pub struct Dims5 {
    pub b: usize,
    pub c: usize,
    pub l: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims5 {
    pub fn numel(&self) -> usize {
        self.b * self.c * self.l * self.h * self.w
    }
    pub fn plane(&self) -> usize {
        self.l * self.h * self.w
    }
}

/// Output extent of a stride/pad convolution along one axis.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if kernel > padded || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Cross-correlation forward. `w` has dims `[co, ci, kt, kh, kw]`.
#[allow(clippy::too_many_arguments)]
pub fn conv3d_fwd(
    x: &[f64],
    xd: Dims5,
    w: &[f64],
    co: usize,
    k: [usize; 3],
    bias: Option<&[f64]>,
    stride: [usize; 3],
    pad: [usize; 3],
    out: &mut [f64],
    od: Dims5,
) {
    if stride == [1, 1, 1] {
        conv3d_fwd_s1(x, xd, w, co, k, bias, pad, out, od);
        return;
    }
    // General-stride scalar path; only exercised by small test shapes.
    let (kt, kh, kw) = (k[0], k[1], k[2]);
    out.par_chunks_mut(od.plane()).enumerate().for_each(|(bc, chunk)| {
        let (b, c_out) = (bc / co, bc % co);
        for lo in 0..od.l {
            for ho in 0..od.h {
                for wo in 0..od.w {
                    let mut acc = bias.map_or(0.0, |bv| bv[c_out]);
                    for ci in 0..xd.c {
                        for dt in 0..kt {
                            let li = (lo * stride[0] + dt).wrapping_sub(pad[0]);
                            if li >= xd.l {
                                continue;
                            }
                            for dh in 0..kh {
                                let hi = (ho * stride[1] + dh).wrapping_sub(pad[1]);
                                if hi >= xd.h {
                                    continue;
                                }
                                for dw in 0..kw {
                                    let wi = (wo * stride[2] + dw).wrapping_sub(pad[2]);
                                    if wi >= xd.w {
                                        continue;
                                    }
                                    let xi = (((b * xd.c + ci) * xd.l + li) * xd.h + hi) * xd.w + wi;
                                    let wiidx = (((c_out * xd.c + ci) * kt + dt) * kh + dh) * kw + dw;
                                    acc += x[xi] * w[wiidx];
                                }
                            }
                        }
                    }
                    chunk[(lo * od.h + ho) * od.w + wo] = acc;
                }
            }
        }
    });
}

/// Stride-1 path: row-sliced multiply-accumulate over the fastest axis.
#[allow(clippy::too_many_arguments)]
fn conv3d_fwd_s1(
    x: &[f64],
    xd: Dims5,
    w: &[f64],
    co: usize,
    k: [usize; 3],
    bias: Option<&[f64]>,
    pad: [usize; 3],
    out: &mut [f64],
    od: Dims5,
) {
    let (kt, kh, kw) = (k[0], k[1], k[2]);
    let (pt, ph, pw) = (pad[0], pad[1], pad[2]);
    out.par_chunks_mut(od.plane()).enumerate().for_each(|(bc, chunk)| {
        let (b, c_out) = (bc / co, bc % co);
        chunk.fill(bias.map_or(0.0, |bv| bv[c_out]));
        for lo in 0..od.l {
            for ho in 0..od.h {
                let orow = &mut chunk[(lo * od.h + ho) * od.w..][..od.w];
                for ci in 0..xd.c {
                    for dt in 0..kt {
                        let li = (lo + dt).wrapping_sub(pt);
                        if li >= xd.l {
                            continue;
                        }
                        for dh in 0..kh {
                            let hi = (ho + dh).wrapping_sub(ph);
                            if hi >= xd.h {
                                continue;
                            }
                            let xrow = &x[(((b * xd.c + ci) * xd.l + li) * xd.h + hi) * xd.w..][..xd.w];
                            let wrow = &w[(((c_out * xd.c + ci) * kt + dt) * kh + dh) * kw..][..kw];
                            if kw == 3 && pw == 1 && od.w == xd.w && od.w >= 2 {
                                // Fused 3-tap pass over the row.
                                let (w0, w1, w2) = (wrow[0], wrow[1], wrow[2]);
                                let n = od.w;
                                orow[0] += w1 * xrow[0] + w2 * xrow[1];
                                for wi in 1..n - 1 {
                                    orow[wi] += w0 * xrow[wi - 1] + w1 * xrow[wi] + w2 * xrow[wi + 1];
                                }
                                orow[n - 1] += w0 * xrow[n - 2] + w1 * xrow[n - 1];
                                continue;
                            }
                            for (dw, &wv) in wrow.iter().enumerate() {
                                // wo + dw - pw must land in [0, xd.w)
                                let lo_w = pw.saturating_sub(dw);
                                let hi_w = (xd.w + pw - dw).min(od.w);
                                if lo_w >= hi_w {
                                    continue;
                                }
                                let src = &xrow[lo_w + dw - pw..hi_w + dw - pw];
                                for (o, &xv) in orow[lo_w..hi_w].iter_mut().zip(src) {
                                    *o += wv * xv;
                                }
                            }
                        }
                    }
                }
            }
        }
    });
}

/// Backward of [`conv3d_fwd`] w.r.t. input, weight and bias (stride 1 only
/// on the fast paths; general stride falls back to a scalar scatter).
#[allow(clippy::too_many_arguments)]
pub fn conv3d_bwd(
    x: &[f64],
    xd: Dims5,
    w: &[f64],
    co: usize,
    k: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
    go: &[f64],
    od: Dims5,
    mut gx: Option<&mut [f64]>,
    mut gw: Option<&mut [f64]>,
    gb: Option<&mut [f64]>,
) {
    if let Some(gb) = gb {
        for b in 0..od.b {
            for c in 0..co {
                let plane = &go[(b * co + c) * od.plane()..][..od.plane()];
                gb[c] += plane.iter().sum::<f64>();
            }
        }
    }
    if stride == [1, 1, 1] {
        let (kt, kh, kw) = (k[0], k[1], k[2]);
        let (pt, ph, pw) = (pad[0], pad[1], pad[2]);
        if let Some(gx) = gx {
            gx.par_chunks_mut(xd.plane()).enumerate().for_each(|(bc, chunk)| {
                let (b, ci) = (bc / xd.c, bc % xd.c);
                for li in 0..xd.l {
                    for hi in 0..xd.h {
                        let gxrow = &mut chunk[(li * xd.h + hi) * xd.w..][..xd.w];
                        for c_out in 0..co {
                            for dt in 0..kt {
                                let lo = (li + pt).wrapping_sub(dt);
                                if lo >= od.l {
                                    continue;
                                }
                                for dh in 0..kh {
                                    let ho = (hi + ph).wrapping_sub(dh);
                                    if ho >= od.h {
                                        continue;
                                    }
                                    let gorow = &go[(((b * co + c_out) * od.l + lo) * od.h + ho) * od.w..][..od.w];
                                    let wrow = &w[(((c_out * xd.c + ci) * kt + dt) * kh + dh) * kw..][..kw];
                                    if kw == 3 && pw == 1 && od.w == xd.w && xd.w >= 2 {
                                        // gx[w] += w0 go[w+1] + w1 go[w] + w2 go[w-1].
                                        let (w0, w1, w2) = (wrow[0], wrow[1], wrow[2]);
                                        let n = xd.w;
                                        gxrow[0] += w0 * gorow[1] + w1 * gorow[0];
                                        for wi in 1..n - 1 {
                                            gxrow[wi] += w0 * gorow[wi + 1] + w1 * gorow[wi] + w2 * gorow[wi - 1];
                                        }
                                        gxrow[n - 1] += w1 * gorow[n - 1] + w2 * gorow[n - 2];
                                        continue;
                                    }
                                    for (dw, &wv) in wrow.iter().enumerate() {
                                        // wi + pw - dw must land in [0, od.w)
                                        let lo_i = dw.saturating_sub(pw);
                                        let hi_i = (od.w + dw - pw).min(xd.w);
                                        if lo_i >= hi_i {
                                            continue;
                                        }
                                        let src = &gorow[lo_i + pw - dw..hi_i + pw - dw];
                                        for (g, &gv) in chunkrow(gxrow, lo_i, hi_i).iter_mut().zip(src) {
                                            *g += wv * gv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            });
        }
        if let Some(gw) = gw {
            let wslice = xd.c * kt * kh * kw;
            gw.par_chunks_mut(wslice).enumerate().for_each(|(c_out, gwc)| {
                for b in 0..od.b {
                    for ci in 0..xd.c {
                        for dt in 0..kt {
                            for dh in 0..kh {
                                for lo in 0..od.l {
                                    let li = (lo + dt).wrapping_sub(pt);
                                    if li >= xd.l {
                                        continue;
                                    }
                                    for ho in 0..od.h {
                                        let hi = (ho + dh).wrapping_sub(ph);
                                        if hi >= xd.h {
                                            continue;
                                        }
                                        let gorow = &go[(((b * co + c_out) * od.l + lo) * od.h + ho) * od.w..][..od.w];
                                        let xrow = &x[(((b * xd.c + ci) * xd.l + li) * xd.h + hi) * xd.w..][..xd.w];
                                        let gwrow = &mut gwc[((ci * kt + dt) * kh + dh) * kw..][..kw];
                                        if kw == 3 && pw == 1 && od.w == xd.w && od.w >= 2 {
                                            // Three tap dots in one pass.
                                            let n = od.w;
                                            let (mut a0, mut a1, mut a2) = (0.0, 0.0, 0.0);
                                            a1 += gorow[0] * xrow[0];
                                            a2 += gorow[0] * xrow[1];
                                            for wi in 1..n - 1 {
                                                let g = gorow[wi];
                                                a0 += g * xrow[wi - 1];
                                                a1 += g * xrow[wi];
                                                a2 += g * xrow[wi + 1];
                                            }
                                            a0 += gorow[n - 1] * xrow[n - 2];
                                            a1 += gorow[n - 1] * xrow[n - 1];
                                            gwrow[0] += a0;
                                            gwrow[1] += a1;
                                            gwrow[2] += a2;
                                            continue;
                                        }
                                        for (dw, gw_tap) in gwrow.iter_mut().enumerate() {
                                            let lo_w = pw.saturating_sub(dw);
                                            let hi_w = (xd.w + pw - dw).min(od.w);
                                            if lo_w >= hi_w {
                                                continue;
                                            }
                                            let acc: f64 = gorow[lo_w..hi_w]
                                                .iter()
                                                .zip(&xrow[lo_w + dw - pw..hi_w + dw - pw])
                                                .map(|(&g, &xv)| g * xv)
                                                .sum();
                                            *gw_tap += acc;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            });
        }
        return;
    }

    // General stride: scalar scatter, sequential.
    let (kt, kh, kw) = (k[0], k[1], k[2]);
    for b in 0..od.b {
        for c_out in 0..co {
            for lo in 0..od.l {
                for ho in 0..od.h {
                    for wo in 0..od.w {
                        let g = go[(((b * co + c_out) * od.l + lo) * od.h + ho) * od.w + wo];
                        for ci in 0..xd.c {
                            for dt in 0..kt {
                                let li = (lo * stride[0] + dt).wrapping_sub(pad[0]);
                                if li >= xd.l {
                                    continue;
                                }
                                for dh in 0..kh {
                                    let hi = (ho * stride[1] + dh).wrapping_sub(pad[1]);
                                    if hi >= xd.h {
                                        continue;
                                    }
                                    for dw in 0..kw {
                                        let wi = (wo * stride[2] + dw).wrapping_sub(pad[2]);
                                        if wi >= xd.w {
                                            continue;
                                        }
                                        let xi = (((b * xd.c + ci) * xd.l + li) * xd.h + hi) * xd.w + wi;
                                        let wiidx = (((c_out * xd.c + ci) * kt + dt) * kh + dh) * kw + dw;
                                        if let Some(gx) = gx.as_deref_mut() {
                                            gx[xi] += g * w[wiidx];
                                        }
                                        if let Some(gw) = gw.as_deref_mut() {
                                            gw[wiidx] += g * x[xi];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn chunkrow(row: &mut [f64], lo: usize, hi: usize) -> &mut [f64] {
    &mut row[lo..hi]
}

/// Transposed convolution forward. `w` has dims `[ci, co, kt, kh, kw]`;
/// output extent = `(in - 1) * stride + kernel` per spatial axis.
#[allow(clippy::too_many_arguments)]
pub fn conv_transpose3d_fwd(
    x: &[f64],
    xd: Dims5,
    w: &[f64],
    co: usize,
    k: [usize; 3],
    bias: Option<&[f64]>,
    stride: [usize; 3],
    out: &mut [f64],
    od: Dims5,
) {
    let (kt, kh, kw) = (k[0], k[1], k[2]);
    out.par_chunks_mut(od.plane()).enumerate().for_each(|(bc, chunk)| {
        let (b, c_out) = (bc / co, bc % co);
        chunk.fill(bias.map_or(0.0, |bv| bv[c_out]));
        for ci in 0..xd.c {
            for li in 0..xd.l {
                for hi in 0..xd.h {
                    let xrow = &x[(((b * xd.c + ci) * xd.l + li) * xd.h + hi) * xd.w..][..xd.w];
                    for dt in 0..kt {
                        let lo = li * stride[0] + dt;
                        for dh in 0..kh {
                            let ho = hi * stride[1] + dh;
                            let obase = (lo * od.h + ho) * od.w;
                            for dw in 0..kw {
                                let wv = w[(((ci * co + c_out) * kt + dt) * kh + dh) * kw + dw];
                                for (wi, &xv) in xrow.iter().enumerate() {
                                    chunk[obase + wi * stride[2] + dw] += wv * xv;
                                }
                            }
                        }
                    }
                }
            }
        }
    });
}

/// Backward of [`conv_transpose3d_fwd`].
#[allow(clippy::too_many_arguments)]
pub fn conv_transpose3d_bwd(
    x: &[f64],
    xd: Dims5,
    w: &[f64],
    co: usize,
    k: [usize; 3],
    stride: [usize; 3],
    go: &[f64],
    od: Dims5,
    gx: Option<&mut [f64]>,
    gw: Option<&mut [f64]>,
    gb: Option<&mut [f64]>,
) {
    let (kt, kh, kw) = (k[0], k[1], k[2]);
    if let Some(gb) = gb {
        for b in 0..od.b {
            for c in 0..co {
                gb[c] += go[(b * co + c) * od.plane()..][..od.plane()].iter().sum::<f64>();
            }
        }
    }
    if let Some(gx) = gx {
        gx.par_chunks_mut(xd.plane()).enumerate().for_each(|(bc, chunk)| {
            let (b, ci) = (bc / xd.c, bc % xd.c);
            for li in 0..xd.l {
                for hi in 0..xd.h {
                    let gxrow = &mut chunk[(li * xd.h + hi) * xd.w..][..xd.w];
                    for c_out in 0..co {
                        for dt in 0..kt {
                            let lo = li * stride[0] + dt;
                            for dh in 0..kh {
                                let ho = hi * stride[1] + dh;
                                let gobase = (((b * co + c_out) * od.l + lo) * od.h + ho) * od.w;
                                for dw in 0..kw {
                                    let wv = w[(((ci * co + c_out) * kt + dt) * kh + dh) * kw + dw];
                                    for (wi, g) in gxrow.iter_mut().enumerate() {
                                        *g += wv * go[gobase + wi * stride[2] + dw];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    }
    if let Some(gw) = gw {
        let wslice = co * kt * kh * kw;
        gw.par_chunks_mut(wslice).enumerate().for_each(|(ci, gwc)| {
            for b in 0..xd.b {
                for c_out in 0..co {
                    for li in 0..xd.l {
                        for hi in 0..xd.h {
                            let xrow = &x[(((b * xd.c + ci) * xd.l + li) * xd.h + hi) * xd.w..][..xd.w];
                            for dt in 0..kt {
                                let lo = li * stride[0] + dt;
                                for dh in 0..kh {
                                    let ho = hi * stride[1] + dh;
                                    let gobase = (((b * co + c_out) * od.l + lo) * od.h + ho) * od.w;
                                    for dw in 0..kw {
                                        let acc: f64 = xrow
                                            .iter()
                                            .enumerate()
                                            .map(|(wi, &xv)| xv * go[gobase + wi * stride[2] + dw])
                                            .sum();
                                        gwc[((c_out * kt + dt) * kh + dh) * kw + dw] += acc;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    }
}

/// Max pooling with kernel = stride = `(1, 2, 2)`. Ties resolve to the first
/// element in row-major scan order. Returns flat argmax indices into `x`.
pub fn maxpool3d_fwd(x: &[f64], xd: Dims5, out: &mut [f64], od: Dims5, argmax: &mut [u32]) {
    for b in 0..xd.b {
        for c in 0..xd.c {
            let xbase = (b * xd.c + c) * xd.plane();
            let obase = (b * od.c + c) * od.plane();
            for l in 0..od.l {
                for ho in 0..od.h {
                    for wo in 0..od.w {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = 0usize;
                        for dh in 0..2 {
                            for dw in 0..2 {
                                let idx = xbase + (l * xd.h + 2 * ho + dh) * xd.w + 2 * wo + dw;
                                if x[idx] > best {
                                    best = x[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        let o = obase + (l * od.h + ho) * od.w + wo;
                        out[o] = best;
                        argmax[o] = best_idx as u32;
                    }
                }
            }
        }
    }
}

pub fn maxpool3d_bwd(go: &[f64], argmax: &[u32], gx: &mut [f64]) {
    for (g, &idx) in go.iter().zip(argmax) {
        gx[idx as usize] += g;
    }
}

/// Group normalization over each `(batch, group)` block, then per-channel affine.
/// Writes saved `mean` and `inv_std` per block for the backward pass.
#[allow(clippy::too_many_arguments)]
pub fn group_norm_fwd(
    x: &[f64],
    xd: Dims5,
    groups: usize,
    eps: f64,
    gamma: &[f64],
    beta: &[f64],
    out: &mut [f64],
    mean: &mut [f64],
    inv_std: &mut [f64],
) {
    let cg = xd.c / groups;
    let spatial = xd.l * xd.h * xd.w;
    let block = cg * spatial;
    out.par_chunks_mut(block)
        .zip(mean.par_iter_mut())
        .zip(inv_std.par_iter_mut())
        .enumerate()
        .for_each(|(bg, ((chunk, mu_out), istd_out))| {
            let g = bg % groups;
            let base = bg * block;
            let xs = &x[base..base + block];
            let mu = xs.iter().sum::<f64>() / block as f64;
            let var = xs.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>() / block as f64;
            let istd = 1.0 / (var + eps).sqrt();
            *mu_out = mu;
            *istd_out = istd;
            for c_off in 0..cg {
                let ch = g * cg + c_off;
                let (ga, be) = (gamma[ch], beta[ch]);
                for (o, &xv) in chunk[c_off * spatial..(c_off + 1) * spatial]
                    .iter_mut()
                    .zip(&xs[c_off * spatial..(c_off + 1) * spatial])
                {
                    *o = (xv - mu) * istd * ga + be;
                }
            }
        });
}

#[allow(clippy::too_many_arguments)]
pub fn group_norm_bwd(
    x: &[f64],
    xd: Dims5,
    groups: usize,
    gamma: &[f64],
    mean: &[f64],
    inv_std: &[f64],
    go: &[f64],
    gx: Option<&mut [f64]>,
    ggamma: Option<&mut [f64]>,
    gbeta: Option<&mut [f64]>,
) {
    let cg = xd.c / groups;
    let spatial = xd.l * xd.h * xd.w;
    let block = cg * spatial;
    let mut ggamma = ggamma;
    let mut gbeta = gbeta;
    if let Some(gx) = gx {
        // dL/dxhat = go * gamma; dx = istd * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
        gx.par_chunks_mut(block).enumerate().for_each(|(bg, chunk)| {
            let g = bg % groups;
            let base = bg * block;
            let mu = mean[bg];
            let istd = inv_std[bg];
            let mut sum_dxhat = 0.0;
            let mut sum_dxhat_xhat = 0.0;
            for c_off in 0..cg {
                let row = base + c_off * spatial;
                let ga = gamma[g * cg + c_off];
                for i in 0..spatial {
                    let dxhat = go[row + i] * ga;
                    let xhat = (x[row + i] - mu) * istd;
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                }
            }
            let m_dxhat = sum_dxhat / block as f64;
            let m_dxhat_xhat = sum_dxhat_xhat / block as f64;
            for c_off in 0..cg {
                let row = base + c_off * spatial;
                let ga = gamma[g * cg + c_off];
                for (i, gv) in chunk[c_off * spatial..(c_off + 1) * spatial].iter_mut().enumerate() {
                    let dxhat = go[row + i] * ga;
                    let xhat = (x[row + i] - mu) * istd;
                    *gv += istd * (dxhat - m_dxhat - xhat * m_dxhat_xhat);
                }
            }
        });
    }
    for b in 0..xd.b {
        for g in 0..groups {
            let base = (b * xd.c + g * cg) * spatial;
            let mu = mean[b * groups + g];
            let istd = inv_std[b * groups + g];
            if let Some(gg) = ggamma.as_deref_mut() {
                for c_off in 0..cg {
                    let row = base + c_off * spatial;
                    let acc: f64 = (0..spatial)
                        .map(|i| go[row + i] * (x[row + i] - mu) * istd)
                        .sum();
                    gg[g * cg + c_off] += acc;
                }
            }
            if let Some(gb) = gbeta.as_deref_mut() {
                for c_off in 0..cg {
                    let row = base + c_off * spatial;
                    gb[g * cg + c_off] += go[row..row + spatial].iter().sum::<f64>();
                }
            }
        }
    }
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// `y = x @ w^T + b` with `x: (B, D_in)`, `w: (D_out, D_in)`.
pub fn linear_fwd(x: &[f64], b_rows: usize, din: usize, w: &[f64], dout: usize, bias: Option<&[f64]>, out: &mut [f64]) {
    for r in 0..b_rows {
        let xrow = &x[r * din..][..din];
        let orow = &mut out[r * dout..][..dout];
        for (j, o) in orow.iter_mut().enumerate() {
            let wrow = &w[j * din..][..din];
            let mut acc = bias.map_or(0.0, |bv| bv[j]);
            for (xv, wv) in xrow.iter().zip(wrow) {
                acc += xv * wv;
            }
            *o = acc;
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn linear_bwd(
    x: &[f64],
    b_rows: usize,
    din: usize,
    w: &[f64],
    dout: usize,
    go: &[f64],
    gx: Option<&mut [f64]>,
    gw: Option<&mut [f64]>,
    gb: Option<&mut [f64]>,
) {
    if let Some(gx) = gx {
        for r in 0..b_rows {
            let gxrow = &mut gx[r * din..][..din];
            let gorow = &go[r * dout..][..dout];
            for (j, &g) in gorow.iter().enumerate() {
                let wrow = &w[j * din..][..din];
                for (gv, &wv) in gxrow.iter_mut().zip(wrow) {
                    *gv += g * wv;
                }
            }
        }
    }
    if let Some(gw) = gw {
        for r in 0..b_rows {
            let xrow = &x[r * din..][..din];
            let gorow = &go[r * dout..][..dout];
            for (j, &g) in gorow.iter().enumerate() {
                let gwrow = &mut gw[j * din..][..din];
                for (gv, &xv) in gwrow.iter_mut().zip(xrow) {
                    *gv += g * xv;
                }
            }
        }
    }
    if let Some(gb) = gb {
        for r in 0..b_rows {
            for (j, &g) in go[r * dout..][..dout].iter().enumerate() {
                gb[j] += g;
            }
        }
    }
}
