"""Dense 3D-convolution kernels (same-padding, stride 1) on zero-padded buffers.

All heavy loops are JIT-compiled with numba and run single-threaded with a
fixed accumulation order, so results are bitwise reproducible for identical
inputs. Buffers use a widened layout so the (h, w) plane of one frame can be
walked as a single flat strip:

  - padded source slabs:  rows = H + kh (incl. one trailing guard row),
    cols = W + kw - 1, real data at origin (ph, pw)
  - output slabs:         rows = H, cols = W + kw - 1, the last kw - 1
    columns of every row are scratch and must be ignored by callers

The flat layout lets the innermost loops run over ``H * Wb`` contiguous
elements per (channel, tap) pair, which is what the vectorizer needs. The
3x3 spatial fast paths additionally block output channels (8/4/1) so source
rows are reused from registers.
"""

from __future__ import annotations

import numpy as np
from numba import njit


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------

@njit(cache=True, fastmath=True)
def _fwd_s3(xp, w, bias, out, H, W):
    B, Co, T = out.shape[0], out.shape[1], out.shape[2]
    Wb = xp.shape[4]
    Ci, kt = w.shape[1], w.shape[2]
    n = H * Wb
    ns = xp.shape[3] * Wb
    a0 = np.empty(n, dtype=xp.dtype)
    a1 = np.empty(n, dtype=xp.dtype)
    a2 = np.empty(n, dtype=xp.dtype)
    a3 = np.empty(n, dtype=xp.dtype)
    a4 = np.empty(n, dtype=xp.dtype)
    a5 = np.empty(n, dtype=xp.dtype)
    a6 = np.empty(n, dtype=xp.dtype)
    a7 = np.empty(n, dtype=xp.dtype)
    for bb in range(B):
        for t in range(T):
            co = 0
            while co + 8 <= Co:
                for i in range(n):
                    a0[i] = bias[co]
                    a1[i] = bias[co + 1]
                    a2[i] = bias[co + 2]
                    a3[i] = bias[co + 3]
                    a4[i] = bias[co + 4]
                    a5[i] = bias[co + 5]
                    a6[i] = bias[co + 6]
                    a7[i] = bias[co + 7]
                for ci in range(Ci):
                    for dt in range(kt):
                        src = xp[bb, ci, t + dt].reshape(ns)
                        for dh in range(3):
                            base = dh * Wb
                            w00 = w[co, ci, dt, dh, 0]; w01 = w[co, ci, dt, dh, 1]; w02 = w[co, ci, dt, dh, 2]
                            w10 = w[co + 1, ci, dt, dh, 0]; w11 = w[co + 1, ci, dt, dh, 1]; w12 = w[co + 1, ci, dt, dh, 2]
                            w20 = w[co + 2, ci, dt, dh, 0]; w21 = w[co + 2, ci, dt, dh, 1]; w22 = w[co + 2, ci, dt, dh, 2]
                            w30 = w[co + 3, ci, dt, dh, 0]; w31 = w[co + 3, ci, dt, dh, 1]; w32 = w[co + 3, ci, dt, dh, 2]
                            w40 = w[co + 4, ci, dt, dh, 0]; w41 = w[co + 4, ci, dt, dh, 1]; w42 = w[co + 4, ci, dt, dh, 2]
                            w50 = w[co + 5, ci, dt, dh, 0]; w51 = w[co + 5, ci, dt, dh, 1]; w52 = w[co + 5, ci, dt, dh, 2]
                            w60 = w[co + 6, ci, dt, dh, 0]; w61 = w[co + 6, ci, dt, dh, 1]; w62 = w[co + 6, ci, dt, dh, 2]
                            w70 = w[co + 7, ci, dt, dh, 0]; w71 = w[co + 7, ci, dt, dh, 1]; w72 = w[co + 7, ci, dt, dh, 2]
                            for i in range(n):
                                s0 = src[base + i]
                                s1 = src[base + i + 1]
                                s2 = src[base + i + 2]
                                a0[i] += w00 * s0 + w01 * s1 + w02 * s2
                                a1[i] += w10 * s0 + w11 * s1 + w12 * s2
                                a2[i] += w20 * s0 + w21 * s1 + w22 * s2
                                a3[i] += w30 * s0 + w31 * s1 + w32 * s2
                                a4[i] += w40 * s0 + w41 * s1 + w42 * s2
                                a5[i] += w50 * s0 + w51 * s1 + w52 * s2
                                a6[i] += w60 * s0 + w61 * s1 + w62 * s2
                                a7[i] += w70 * s0 + w71 * s1 + w72 * s2
                for j in range(8):
                    if j == 0:
                        a = a0
                    elif j == 1:
                        a = a1
                    elif j == 2:
                        a = a2
                    elif j == 3:
                        a = a3
                    elif j == 4:
                        a = a4
                    elif j == 5:
                        a = a5
                    elif j == 6:
                        a = a6
                    else:
                        a = a7
                    ob = out[bb, co + j, t]
                    for h in range(H):
                        base = h * Wb
                        for x in range(W):
                            ob[h, x] = a[base + x]
                co += 8
            while co + 4 <= Co:
                for i in range(n):
                    a0[i] = bias[co]
                    a1[i] = bias[co + 1]
                    a2[i] = bias[co + 2]
                    a3[i] = bias[co + 3]
                for ci in range(Ci):
                    for dt in range(kt):
                        src = xp[bb, ci, t + dt].reshape(ns)
                        for dh in range(3):
                            base = dh * Wb
                            w00 = w[co, ci, dt, dh, 0]; w01 = w[co, ci, dt, dh, 1]; w02 = w[co, ci, dt, dh, 2]
                            w10 = w[co + 1, ci, dt, dh, 0]; w11 = w[co + 1, ci, dt, dh, 1]; w12 = w[co + 1, ci, dt, dh, 2]
                            w20 = w[co + 2, ci, dt, dh, 0]; w21 = w[co + 2, ci, dt, dh, 1]; w22 = w[co + 2, ci, dt, dh, 2]
                            w30 = w[co + 3, ci, dt, dh, 0]; w31 = w[co + 3, ci, dt, dh, 1]; w32 = w[co + 3, ci, dt, dh, 2]
                            for i in range(n):
                                s0 = src[base + i]
                                s1 = src[base + i + 1]
                                s2 = src[base + i + 2]
                                a0[i] += w00 * s0 + w01 * s1 + w02 * s2
                                a1[i] += w10 * s0 + w11 * s1 + w12 * s2
                                a2[i] += w20 * s0 + w21 * s1 + w22 * s2
                                a3[i] += w30 * s0 + w31 * s1 + w32 * s2
                for j in range(4):
                    if j == 0:
                        a = a0
                    elif j == 1:
                        a = a1
                    elif j == 2:
                        a = a2
                    else:
                        a = a3
                    ob = out[bb, co + j, t]
                    for h in range(H):
                        base = h * Wb
                        for x in range(W):
                            ob[h, x] = a[base + x]
                co += 4
            while co + 2 <= Co:
                for i in range(n):
                    a0[i] = bias[co]
                    a1[i] = bias[co + 1]
                for ci in range(Ci):
                    for dt in range(kt):
                        src = xp[bb, ci, t + dt].reshape(ns)
                        for dh in range(3):
                            base = dh * Wb
                            w00 = w[co, ci, dt, dh, 0]; w01 = w[co, ci, dt, dh, 1]; w02 = w[co, ci, dt, dh, 2]
                            w10 = w[co + 1, ci, dt, dh, 0]; w11 = w[co + 1, ci, dt, dh, 1]; w12 = w[co + 1, ci, dt, dh, 2]
                            for i in range(n):
                                s0 = src[base + i]
                                s1 = src[base + i + 1]
                                s2 = src[base + i + 2]
                                a0[i] += w00 * s0 + w01 * s1 + w02 * s2
                                a1[i] += w10 * s0 + w11 * s1 + w12 * s2
                for j in range(2):
                    a = a0 if j == 0 else a1
                    ob = out[bb, co + j, t]
                    for h in range(H):
                        base = h * Wb
                        for x in range(W):
                            ob[h, x] = a[base + x]
                co += 2
            while co < Co:
                for i in range(n):
                    a0[i] = bias[co]
                for ci in range(Ci):
                    for dt in range(kt):
                        src = xp[bb, ci, t + dt].reshape(ns)
                        for dh in range(3):
                            base = dh * Wb
                            w00 = w[co, ci, dt, dh, 0]; w01 = w[co, ci, dt, dh, 1]; w02 = w[co, ci, dt, dh, 2]
                            for i in range(n):
                                a0[i] += w00 * src[base + i] + w01 * src[base + i + 1] + w02 * src[base + i + 2]
                ob = out[bb, co, t]
                for h in range(H):
                    base = h * Wb
                    for x in range(W):
                        ob[h, x] = a0[base + x]
                co += 1


@njit(cache=True, fastmath=True)
def _fwd_any(xp, w, bias, out, H, W):
    B, Co, T = out.shape[0], out.shape[1], out.shape[2]
    Wb = xp.shape[4]
    Ci, kt, kh, kw = w.shape[1], w.shape[2], w.shape[3], w.shape[4]
    n = H * Wb
    ns = xp.shape[3] * Wb
    acc = np.empty(n, dtype=xp.dtype)
    for bb in range(B):
        for t in range(T):
            for co in range(Co):
                for i in range(n):
                    acc[i] = bias[co]
                for ci in range(Ci):
                    for dt in range(kt):
                        src = xp[bb, ci, t + dt].reshape(ns)
                        for dh in range(kh):
                            for dw in range(kw):
                                off = dh * Wb + dw
                                wv = w[co, ci, dt, dh, dw]
                                for i in range(n):
                                    acc[i] += wv * src[i + off]
                ob = out[bb, co, t]
                for h in range(H):
                    base = h * Wb
                    for x in range(W):
                        ob[h, x] = acc[base + x]


# ---------------------------------------------------------------------------
# backward w.r.t. weights
# ---------------------------------------------------------------------------

@njit(cache=True, fastmath=True)
def _bwd_weights_s3(xp, dyp, dw, H, W):
    B, Co, T, _, Wb = dyp.shape
    Ci, kt = dw.shape[1], dw.shape[2]
    n = H * Wb
    ns = xp.shape[3] * Wb
    for bb in range(B):
        for t in range(T):
            for ci in range(Ci):
                for dt in range(kt):
                    src = xp[bb, ci, t + dt].reshape(ns)
                    for dh in range(3):
                        base = dh * Wb
                        co = 0
                        while co + 4 <= Co:
                            d0 = dyp[bb, co, t].reshape(n)
                            d1 = dyp[bb, co + 1, t].reshape(n)
                            d2 = dyp[bb, co + 2, t].reshape(n)
                            d3 = dyp[bb, co + 3, t].reshape(n)
                            zero = src[0] - src[0]
                            g00 = zero; g01 = zero; g02 = zero
                            g10 = zero; g11 = zero; g12 = zero
                            g20 = zero; g21 = zero; g22 = zero
                            g30 = zero; g31 = zero; g32 = zero
                            for i in range(n):
                                s0 = src[base + i]
                                s1 = src[base + i + 1]
                                s2 = src[base + i + 2]
                                v0 = d0[i]; v1 = d1[i]; v2 = d2[i]; v3 = d3[i]
                                g00 += v0 * s0; g01 += v0 * s1; g02 += v0 * s2
                                g10 += v1 * s0; g11 += v1 * s1; g12 += v1 * s2
                                g20 += v2 * s0; g21 += v2 * s1; g22 += v2 * s2
                                g30 += v3 * s0; g31 += v3 * s1; g32 += v3 * s2
                            dw[co, ci, dt, dh, 0] += g00; dw[co, ci, dt, dh, 1] += g01; dw[co, ci, dt, dh, 2] += g02
                            dw[co + 1, ci, dt, dh, 0] += g10; dw[co + 1, ci, dt, dh, 1] += g11; dw[co + 1, ci, dt, dh, 2] += g12
                            dw[co + 2, ci, dt, dh, 0] += g20; dw[co + 2, ci, dt, dh, 1] += g21; dw[co + 2, ci, dt, dh, 2] += g22
                            dw[co + 3, ci, dt, dh, 0] += g30; dw[co + 3, ci, dt, dh, 1] += g31; dw[co + 3, ci, dt, dh, 2] += g32
                            co += 4
                        while co + 2 <= Co:
                            d0 = dyp[bb, co, t].reshape(n)
                            d1 = dyp[bb, co + 1, t].reshape(n)
                            zero = src[0] - src[0]
                            g00 = zero; g01 = zero; g02 = zero
                            g10 = zero; g11 = zero; g12 = zero
                            for i in range(n):
                                s0 = src[base + i]
                                s1 = src[base + i + 1]
                                s2 = src[base + i + 2]
                                v0 = d0[i]; v1 = d1[i]
                                g00 += v0 * s0; g01 += v0 * s1; g02 += v0 * s2
                                g10 += v1 * s0; g11 += v1 * s1; g12 += v1 * s2
                            dw[co, ci, dt, dh, 0] += g00; dw[co, ci, dt, dh, 1] += g01; dw[co, ci, dt, dh, 2] += g02
                            dw[co + 1, ci, dt, dh, 0] += g10; dw[co + 1, ci, dt, dh, 1] += g11; dw[co + 1, ci, dt, dh, 2] += g12
                            co += 2
                        while co < Co:
                            d0 = dyp[bb, co, t].reshape(n)
                            zero = src[0] - src[0]
                            g00 = zero; g01 = zero; g02 = zero
                            for i in range(n):
                                v0 = d0[i]
                                g00 += v0 * src[base + i]
                                g01 += v0 * src[base + i + 1]
                                g02 += v0 * src[base + i + 2]
                            dw[co, ci, dt, dh, 0] += g00
                            dw[co, ci, dt, dh, 1] += g01
                            dw[co, ci, dt, dh, 2] += g02
                            co += 1


@njit(cache=True, fastmath=True)
def _bwd_weights_any(xp, dyp, dw, H, W):
    B, Co, T, _, Wb = dyp.shape
    Ci, kt, kh, kw = dw.shape[1], dw.shape[2], dw.shape[3], dw.shape[4]
    n = H * Wb
    ns = xp.shape[3] * Wb
    for bb in range(B):
        for t in range(T):
            for ci in range(Ci):
                for dt in range(kt):
                    src = xp[bb, ci, t + dt].reshape(ns)
                    for dh in range(kh):
                        for dw_ in range(kw):
                            off = dh * Wb + dw_
                            for co in range(Co):
                                d0 = dyp[bb, co, t].reshape(n)
                                g = src[0] - src[0]
                                for i in range(n):
                                    g += d0[i] * src[i + off]
                                dw[co, ci, dt, dh, dw_] += g


# ---------------------------------------------------------------------------
# grouped temporal compression
# ---------------------------------------------------------------------------

@njit(cache=True, fastmath=True)
def tcl_forward_kernel(x, w, out):
    """x (M, N, G, S); out (M, N, S) with out[m,n] = sum_j w[j] * x[m,n,j]."""
    M, N, G, S = x.shape
    for m in range(M):
        for nn in range(N):
            o = out[m, nn]
            x2 = x[m, nn]
            for s_ in range(S):
                o[s_] = w[0] * x2[0, s_]
            for j in range(1, G):
                wj = w[j]
                xj = x2[j]
                for s_ in range(S):
                    o[s_] += wj * xj[s_]


@njit(cache=True, fastmath=True)
def tcl_backward_kernel(x, w, g, dx, dw):
    M, N, G, S = x.shape
    for m in range(M):
        for nn in range(N):
            gg = g[m, nn]
            x2 = x[m, nn]
            d2 = dx[m, nn]
            for j in range(G):
                wj = w[j]
                xj = x2[j]
                dj = d2[j]
                acc = w[0] - w[0]
                for s_ in range(S):
                    dj[s_] = wj * gg[s_]
                    acc += gg[s_] * xj[s_]
                dw[j] += acc


# ---------------------------------------------------------------------------
# elementwise / pooling kernels
# ---------------------------------------------------------------------------

@njit(cache=True, fastmath=True)
def leaky_forward(x, slope, out):
    for i in range(x.shape[0]):
        v = x[i]
        out[i] = v if v > 0 else v * slope


@njit(cache=True, fastmath=True)
def leaky_backward(x, g, slope, out):
    for i in range(x.shape[0]):
        out[i] = g[i] if x[i] > 0 else g[i] * slope


@njit(cache=True)
def pool2x2_forward(x, out, idx):
    """2x2 stride-2 max over the trailing axes of (M, H, W); partial windows
    at odd edges; idx records the winning corner (row-major, first wins)."""
    M, H, W = x.shape
    Ho, Wo = out.shape[1], out.shape[2]
    for m in range(M):
        for ho in range(Ho):
            h0 = 2 * ho
            has_h1 = h0 + 1 < H
            for wo in range(Wo):
                w0 = 2 * wo
                best = x[m, h0, w0]
                bi = 0
                if w0 + 1 < W and x[m, h0, w0 + 1] > best:
                    best = x[m, h0, w0 + 1]
                    bi = 1
                if has_h1:
                    if x[m, h0 + 1, w0] > best:
                        best = x[m, h0 + 1, w0]
                        bi = 2
                    if w0 + 1 < W and x[m, h0 + 1, w0 + 1] > best:
                        best = x[m, h0 + 1, w0 + 1]
                        bi = 3
                out[m, ho, wo] = best
                idx[m, ho, wo] = bi


@njit(cache=True)
def pool2x2_backward(g, idx, dx):
    M, Ho, Wo = g.shape
    for m in range(M):
        for ho in range(Ho):
            for wo in range(Wo):
                bi = idx[m, ho, wo]
                dx[m, 2 * ho + (bi >> 1), 2 * wo + (bi & 1)] = g[m, ho, wo]


# ---------------------------------------------------------------------------
# host-side wrappers
# ---------------------------------------------------------------------------

def _padded_source(x: np.ndarray, kt: int, kh: int, kw: int) -> np.ndarray:
    """Copy (B, C, T, H, W) into the guarded padded layout used by the kernels."""
    B, C, T, H, W = x.shape
    pt, ph, pw = (kt - 1) // 2, (kh - 1) // 2, (kw - 1) // 2
    xp = np.zeros((B, C, T + 2 * pt, H + kh, W + 2 * pw), dtype=x.dtype)
    xp[:, :, pt:pt + T, ph:ph + H, pw:pw + W] = x
    return xp


def _run_forward(xp, w, bias, B, T, H, W):
    Co = w.shape[0]
    out = np.empty((B, Co, T, H, W), dtype=xp.dtype)
    if w.shape[3] == 3 and w.shape[4] == 3:
        _fwd_s3(xp, w, bias, out, H, W)
    else:
        _fwd_any(xp, w, bias, out, H, W)
    return out


def conv3d_forward(x: np.ndarray, w: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Same-padded stride-1 3D convolution; returns (B, Co, T, H, W)."""
    B, Ci, T, H, W = x.shape
    xp = _padded_source(x, w.shape[2], w.shape[3], w.shape[4])
    return _run_forward(xp, w, bias, B, T, H, W)


def conv3d_forward_padded(x, w, bias):
    """As conv3d_forward but also returns the padded source for backward reuse."""
    B, Ci, T, H, W = x.shape
    xp = _padded_source(x, w.shape[2], w.shape[3], w.shape[4])
    return _run_forward(xp, w, bias, B, T, H, W), xp


def conv3d_backward(xp: np.ndarray, w: np.ndarray, dy: np.ndarray,
                    need_dx: bool):
    """Gradients of conv3d_forward.

    xp is the padded source kept from the forward pass; dy is the upstream
    gradient in compact (B, Co, T, H, W) layout. Returns (dx, dw, db) with
    dx None when need_dx is False.
    """
    B, Co, T, H, W = dy.shape
    Ci, kt, kh, kw = w.shape[1], w.shape[2], w.shape[3], w.shape[4]
    dyp = np.zeros((B, Co, T, H, W + kw - 1), dtype=dy.dtype)
    dyp[..., :W] = dy
    dwg = np.zeros_like(w)
    if kh == 3 and kw == 3:
        _bwd_weights_s3(xp, dyp, dwg, H, W)
    else:
        _bwd_weights_any(xp, dyp, dwg, H, W)
    db = dy.sum(axis=(0, 2, 3, 4))
    dx = None
    if need_dx:
        # under same-padding, dX is a forward conv of dY with the
        # channel-transposed, axis-flipped kernel
        w_flip = np.ascontiguousarray(
            w.transpose(1, 0, 2, 3, 4)[:, :, ::-1, ::-1, ::-1])
        dx = conv3d_forward(dy, w_flip,
                            np.zeros(Ci, dtype=w.dtype))
    return dx, dwg, db
