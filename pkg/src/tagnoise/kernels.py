"""Hot numeric kernels: 2-D convolution, batch normalisation, average pooling.

Two convolution routes share one contract (cross-correlation, zero padding,
integer stride, float64):

* ``direct``: naive nested loops. Kept as the readable reference and as the
  oracle for the fast route.
* ``im2col``: per-sample patch matrix in (C*kh*kw, Ho*Wo) layout followed by a
  BLAS GEMM. This is what the models use.

Every ``*_nb`` loop kernel has a ``*_np`` twin with identical semantics. The
loop versions are compiled with numba when it is importable and
``TAGNOISE_DISABLE_NUMBA`` is unset; otherwise the numpy twins are bound
instead and the direct convolution runs as plain Python (tiny shapes only).
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._accel import HAVE_NUMBA, njit


def out_extent(size, k, pad, stride):
    return (size + 2 * pad - k) // stride + 1


@njit
def _direct_fwd(x, w, b, pad, stride, out):
    N, C, H, W = x.shape
    K, kh, kw = w.shape[0], w.shape[2], w.shape[3]
    Ho, Wo = out.shape[2], out.shape[3]
    for n in range(N):
        for k in range(K):
            for y in range(Ho):
                for xx in range(Wo):
                    acc = b[k]
                    for c in range(C):
                        for i in range(kh):
                            sy = y * stride + i - pad
                            if sy < 0 or sy >= H:
                                continue
                            for j in range(kw):
                                sx = xx * stride + j - pad
                                if sx < 0 or sx >= W:
                                    continue
                                acc += w[k, c, i, j] * x[n, c, sy, sx]
                    out[n, k, y, xx] = acc


@njit
def _direct_bwd(x, w, g, pad, stride, dx, dw, db):
    N, C, H, W = x.shape
    K, kh, kw = w.shape[0], w.shape[2], w.shape[3]
    Ho, Wo = g.shape[2], g.shape[3]
    for n in range(N):
        for k in range(K):
            for y in range(Ho):
                for xx in range(Wo):
                    gv = g[n, k, y, xx]
                    db[k] += gv
                    for c in range(C):
                        for i in range(kh):
                            sy = y * stride + i - pad
                            if sy < 0 or sy >= H:
                                continue
                            for j in range(kw):
                                sx = xx * stride + j - pad
                                if sx < 0 or sx >= W:
                                    continue
                                dw[k, c, i, j] += gv * x[n, c, sy, sx]
                                dx[n, c, sy, sx] += gv * w[k, c, i, j]


@njit
def _valid_range(size, out_size, offset, stride):
    # output positions o with 0 <= o*stride + offset < size
    lo = 0
    while lo < out_size and lo * stride + offset < 0:
        lo += 1
    hi = out_size
    while hi > lo and (hi - 1) * stride + offset >= size:
        hi -= 1
    return lo, hi


@njit
def _im2col_nb(x, n0, n1, kh, kw, pad, stride, Ho, Wo, cols):
    # samples n0..n1-1 of x (N, C, H, W) -> cols (C*kh*kw, (n1-n0)*Ho*Wo)
    C, H, W = x.shape[1], x.shape[2], x.shape[3]
    L = Ho * Wo
    for n in range(n0, n1):
        off = (n - n0) * L
        for c in range(C):
            for i in range(kh):
                ylo, yhi = _valid_range(H, Ho, i - pad, stride)
                for j in range(kw):
                    xlo, xhi = _valid_range(W, Wo, j - pad, stride)
                    r = (c * kh + i) * kw + j
                    row = cols[r]
                    row[off : off + ylo * Wo] = 0.0
                    row[off + yhi * Wo : off + L] = 0.0
                    for y in range(ylo, yhi):
                        src = x[n, c, y * stride + i - pad]
                        base = off + y * Wo
                        for xx in range(xlo):
                            row[base + xx] = 0.0
                        for xx in range(xhi, Wo):
                            row[base + xx] = 0.0
                        s0 = j - pad
                        for xx in range(xlo, xhi):
                            row[base + xx] = src[xx * stride + s0]


@njit
def _col2im_nb(dcols, n0, n1, kh, kw, pad, stride, Ho, Wo, dx):
    C, H, W = dx.shape[1], dx.shape[2], dx.shape[3]
    L = Ho * Wo
    for n in range(n0, n1):
        off = (n - n0) * L
        for c in range(C):
            for i in range(kh):
                ylo, yhi = _valid_range(H, Ho, i - pad, stride)
                for j in range(kw):
                    xlo, xhi = _valid_range(W, Wo, j - pad, stride)
                    row = dcols[(c * kh + i) * kw + j]
                    s0 = j - pad
                    for y in range(ylo, yhi):
                        dst = dx[n, c, y * stride + i - pad]
                        base = off + y * Wo
                        for xx in range(xlo, xhi):
                            dst[xx * stride + s0] += row[base + xx]


def _im2col_np(x, n0, n1, kh, kw, pad, stride, Ho, Wo, cols):
    xs = x[n0:n1]
    if pad:
        xs = np.pad(xs, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xs, (kh, kw), axis=(2, 3))
    win = win[:, :, : (Ho - 1) * stride + 1 : stride, : (Wo - 1) * stride + 1 : stride]
    # (n, C, Ho, Wo, kh, kw) -> (C, kh, kw, n, Ho, Wo)
    cols.reshape(x.shape[1], kh, kw, n1 - n0, Ho, Wo)[...] = win.transpose(1, 4, 5, 0, 2, 3)


def _col2im_np(dcols, n0, n1, kh, kw, pad, stride, Ho, Wo, dx):
    C, H, W = dx.shape[1:]
    buf = np.zeros((n1 - n0, C, H + 2 * pad, W + 2 * pad))
    d = dcols.reshape(C, kh, kw, n1 - n0, Ho, Wo)
    for i in range(kh):
        for j in range(kw):
            buf[:, :, i : i + (Ho - 1) * stride + 1 : stride,
                j : j + (Wo - 1) * stride + 1 : stride] += d[:, i, j].transpose(1, 0, 2, 3)
    dx[n0:n1] += buf[:, :, pad : pad + H, pad : pad + W]


if HAVE_NUMBA:
    im2col, col2im = _im2col_nb, _col2im_nb
else:
    im2col, col2im = _im2col_np, _col2im_np

# Upper bound on patch-matrix entries per GEMM; samples are processed in
# chunks that respect it (at least one sample per chunk).
COLS_BUDGET = 1 << 20


def _chunks(N, rows, L):
    step = max(1, min(N, COLS_BUDGET // max(1, rows * L)))
    for n0 in range(0, N, step):
        yield n0, min(N, n0 + step)


def _check(x, w, b=None):
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ValueError(f"conv2d shape mismatch: input {x.shape}, kernel {w.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise ValueError(f"conv2d shape mismatch: kernel {w.shape}, bias {b.shape}")


def _geometry(x, w, pad, stride):
    Ho = out_extent(x.shape[2], w.shape[2], pad, stride)
    Wo = out_extent(x.shape[3], w.shape[3], pad, stride)
    if Ho < 1 or Wo < 1:
        raise ValueError(f"conv2d kernel {w.shape} larger than padded input {x.shape}")
    return Ho, Wo


def conv2d_direct(x, w, b, pad=0, stride=1):
    _check(x, w, b)
    Ho, Wo = _geometry(x, w, pad, stride)
    out = np.empty((x.shape[0], w.shape[0], Ho, Wo))
    _direct_fwd(np.ascontiguousarray(x), np.ascontiguousarray(w),
                np.ascontiguousarray(b), pad, stride, out)
    return out


def conv2d_direct_backward(x, w, g, pad=0, stride=1, need_dx=True):
    dx = np.zeros(x.shape)
    dw = np.zeros(w.shape)
    db = np.zeros(w.shape[0])
    _direct_bwd(np.ascontiguousarray(x), np.ascontiguousarray(w),
                np.ascontiguousarray(g), pad, stride, dx, dw, db)
    return dx, dw, db


def conv2d_im2col(x, w, b, pad=0, stride=1, keep_cols=False):
    """GEMM convolution. With ``keep_cols`` also return the patch matrices,
    which ``conv2d_im2col_backward`` accepts to skip re-gathering them."""
    _check(x, w, b)
    N, C = x.shape[:2]
    K, _, kh, kw = w.shape
    Ho, Wo = _geometry(x, w, pad, stride)
    L = Ho * Wo
    x = np.ascontiguousarray(x)
    w2 = np.ascontiguousarray(w.reshape(K, -1))
    rows = C * kh * kw
    out = np.empty((N, K, L))
    kept = []
    for n0, n1 in _chunks(N, rows, L):
        cols = np.empty((rows, (n1 - n0) * L))
        im2col(x, n0, n1, kh, kw, pad, stride, Ho, Wo, cols)
        out[n0:n1] = (w2 @ cols).reshape(K, n1 - n0, L).transpose(1, 0, 2)
        if keep_cols:
            kept.append(cols)
    out += b[None, :, None]
    out = out.reshape(N, K, Ho, Wo)
    return (out, kept) if keep_cols else out


def conv2d_im2col_backward(x, w, g, pad=0, stride=1, need_dx=True, cols_cache=None):
    N, C = x.shape[:2]
    K, _, kh, kw = w.shape
    Ho, Wo = g.shape[2:]
    L = Ho * Wo
    rows = C * kh * kw
    x = np.ascontiguousarray(x)
    w2t = np.ascontiguousarray(w.reshape(K, -1).T)
    g3 = g.reshape(N, K, L)
    dw = np.zeros((K, rows))
    dx = np.zeros(x.shape) if need_dx else None
    for idx, (n0, n1) in enumerate(_chunks(N, rows, L)):
        gk = np.ascontiguousarray(g3[n0:n1].transpose(1, 0, 2)).reshape(K, -1)
        if cols_cache is not None:
            cols = cols_cache[idx]
        else:
            cols = np.empty((rows, (n1 - n0) * L))
            im2col(x, n0, n1, kh, kw, pad, stride, Ho, Wo, cols)
        dw += gk @ cols.T
        if need_dx:
            col2im(w2t @ gk, n0, n1, kh, kw, pad, stride, Ho, Wo, dx)
    return dx, dw.reshape(w.shape), g3.sum(axis=(0, 2))


METHODS = {
    "direct": (conv2d_direct, conv2d_direct_backward),
    "im2col": (conv2d_im2col, conv2d_im2col_backward),
}


def conv2d_forward(x, w, b, pad=0, stride=1, method="im2col"):
    return METHODS[method][0](x, w, b, pad, stride)


def conv2d_backward(x, w, g, pad=0, stride=1, method="im2col", need_dx=True):
    """Return ``(dx, dw, db)`` for upstream gradient ``g``; ``dx`` may be skipped."""
    return METHODS[method][1](x, w, g, pad, stride, need_dx)


# -- batch normalisation over (N, C, L) views, L = H*W ------------------------

@njit
def _bn_stats_nb(x, mean, var):
    N, C, L = x.shape
    m = N * L
    for c in range(C):
        s = 0.0
        for n in range(N):
            for i in range(L):
                s += x[n, c, i]
        mu = s / m
        ss = 0.0
        for n in range(N):
            for i in range(L):
                d = x[n, c, i] - mu
                ss += d * d
        mean[c] = mu
        var[c] = ss / m


@njit
def _bn_apply_nb(x, mean, inv_std, gamma, beta, xhat, out):
    N, C, L = x.shape
    for n in range(N):
        for c in range(C):
            mu, s, ga, be = mean[c], inv_std[c], gamma[c], beta[c]
            for i in range(L):
                h = (x[n, c, i] - mu) * s
                xhat[n, c, i] = h
                out[n, c, i] = h * ga + be


@njit
def _bn_backward_nb(g, xhat, gamma, inv_std, training, dx, dgamma, dbeta):
    N, C, L = g.shape
    m = N * L
    for c in range(C):
        sg = 0.0
        sgx = 0.0
        for n in range(N):
            for i in range(L):
                sg += g[n, c, i]
                sgx += g[n, c, i] * xhat[n, c, i]
        dgamma[c] = sgx
        dbeta[c] = sg
        k = gamma[c] * inv_std[c]
        if training:
            a = sg / m
            b = sgx / m
            for n in range(N):
                for i in range(L):
                    dx[n, c, i] = k * (g[n, c, i] - a - xhat[n, c, i] * b)
        else:
            for n in range(N):
                for i in range(L):
                    dx[n, c, i] = k * g[n, c, i]


def _bn_stats_np(x, mean, var):
    mean[:] = x.mean(axis=(0, 2))
    var[:] = x.var(axis=(0, 2))


def _bn_apply_np(x, mean, inv_std, gamma, beta, xhat, out):
    xhat[...] = (x - mean[:, None]) * inv_std[:, None]
    out[...] = xhat * gamma[:, None] + beta[:, None]


def _bn_backward_np(g, xhat, gamma, inv_std, training, dx, dgamma, dbeta):
    m = g.shape[0] * g.shape[2]
    dbeta[:] = g.sum(axis=(0, 2))
    dgamma[:] = (g * xhat).sum(axis=(0, 2))
    k = (gamma * inv_std)[:, None]
    if training:
        dx[...] = k * (g - dbeta[:, None] / m - xhat * (dgamma[:, None] / m))
    else:
        dx[...] = k * g


def bn_forward(x3, gamma, beta, mean=None, var=None, eps=1e-5):
    """Normalise (N, C, L) data. Batch statistics are computed when ``mean`` is None.

    Returns ``(out, xhat, inv_std, mean, var)``.
    """
    C = x3.shape[1]
    if mean is None:
        mean, var = np.empty(C), np.empty(C)
        bn_stats(x3, mean, var)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = np.empty(x3.shape)
    out = np.empty(x3.shape)
    bn_apply(x3, mean, inv_std, gamma, beta, xhat, out)
    return out, xhat, inv_std, mean, var


def bn_backward(g3, xhat, gamma, inv_std, training):
    C = g3.shape[1]
    dx = np.empty(g3.shape)
    dgamma, dbeta = np.empty(C), np.empty(C)
    bn_bwd(np.ascontiguousarray(g3), xhat, gamma, inv_std, training, dx, dgamma, dbeta)
    return dx, dgamma, dbeta


# -- 2x2-style average pooling -------------------------------------------------

@njit
def _pool_fwd_nb(x, size, out):
    N, C, Ho, Wo = out.shape
    scale = 1.0 / (size * size)
    for n in range(N):
        for c in range(C):
            for y in range(Ho):
                for xx in range(Wo):
                    s = 0.0
                    for i in range(size):
                        for j in range(size):
                            s += x[n, c, y * size + i, xx * size + j]
                    out[n, c, y, xx] = s * scale


@njit
def _pool_bwd_nb(g, size, dx):
    N, C, Ho, Wo = g.shape
    scale = 1.0 / (size * size)
    for n in range(N):
        for c in range(C):
            for y in range(Ho):
                for xx in range(Wo):
                    v = g[n, c, y, xx] * scale
                    for i in range(size):
                        for j in range(size):
                            dx[n, c, y * size + i, xx * size + j] = v


def _pool_fwd_np(x, size, out):
    N, C, Ho, Wo = out.shape
    crop = x[:, :, : Ho * size, : Wo * size]
    out[...] = crop.reshape(N, C, Ho, size, Wo, size).mean(axis=(3, 5))


def _pool_bwd_np(g, size, dx):
    N, C, Ho, Wo = g.shape
    view = dx[:, :, : Ho * size, : Wo * size].reshape(N, C, Ho, size, Wo, size)
    view[...] = (g / (size * size))[:, :, :, None, :, None]


def avgpool_forward(x, size):
    N, C, H, W = x.shape
    out = np.empty((N, C, H // size, W // size))
    pool_fwd(np.ascontiguousarray(x), size, out)
    return out


def avgpool_backward(g, in_shape, size):
    dx = np.zeros(in_shape)
    pool_bwd(np.ascontiguousarray(g), size, dx)
    return dx


if HAVE_NUMBA:
    bn_stats, bn_apply, bn_bwd = _bn_stats_nb, _bn_apply_nb, _bn_backward_nb
    pool_fwd, pool_bwd = _pool_fwd_nb, _pool_bwd_nb
else:
    bn_stats, bn_apply, bn_bwd = _bn_stats_np, _bn_apply_np, _bn_backward_np
    pool_fwd, pool_bwd = _pool_fwd_np, _pool_bwd_np


# -- rectifier -----------------------------------------------------------------

@njit
def _relu_fwd_nb(x, out):
    for i in range(x.size):
        v = x[i]
        out[i] = v if v > 0.0 else 0.0


@njit
def _relu_bwd_nb(out, g, dx):
    for i in range(out.size):
        dx[i] = g[i] if out[i] > 0.0 else 0.0


def _relu_fwd_np(x, out):
    np.maximum(x, 0.0, out=out)


def _relu_bwd_np(out, g, dx):
    np.multiply(g, out > 0.0, out=dx)


def relu_forward(x):
    out = np.empty(x.shape)
    relu_fwd(np.ascontiguousarray(x).reshape(-1), out.reshape(-1))
    return out


def relu_backward(out, g):
    dx = np.empty(out.shape)
    relu_bwd(out.reshape(-1), np.ascontiguousarray(g).reshape(-1), dx.reshape(-1))
    return dx


if HAVE_NUMBA:
    relu_fwd, relu_bwd = _relu_fwd_nb, _relu_bwd_nb
else:
    relu_fwd, relu_bwd = _relu_fwd_np, _relu_bwd_np
