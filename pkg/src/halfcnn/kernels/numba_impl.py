"""Loop kernels compiled with numba; same contracts as :mod:`numpy_impl`."""
import numba
import numpy as np

_OPTS = {"nopython": True, "nogil": True, "cache": True, "fastmath": False}


@numba.jit(**_OPTS)
def _conv_padded(xp, w, b, h, wd):
    n_out, n_in, k_h, k_w = w.shape
    out = np.empty((n_out, h, wd))
    for o in range(n_out):
        out[o, :, :] = b[o]
        for c in range(n_in):
            for i in range(k_h):
                for j in range(k_w):
                    wt = w[o, c, i, j]
                    if wt == 0.0:
                        continue
                    for y in range(h):
                        for x in range(wd):
                            out[o, y, x] += wt * xp[c, y + i, x + j]
    return out


@numba.jit(**_OPTS)
def _conv_backward_padded(xp, w, dout):
    n_out, n_in, k_h, k_w = w.shape
    h, wd = dout.shape[1], dout.shape[2]
    dxp = np.zeros(xp.shape)
    dw = np.zeros(w.shape)
    db = np.zeros(n_out)
    for o in range(n_out):
        acc = 0.0
        for y in range(h):
            for x in range(wd):
                acc += dout[o, y, x]
        db[o] = acc
        for c in range(n_in):
            for i in range(k_h):
                for j in range(k_w):
                    wt = w[o, c, i, j]
                    s = 0.0
                    for y in range(h):
                        for x in range(wd):
                            g = dout[o, y, x]
                            s += g * xp[c, y + i, x + j]
                            dxp[c, y + i, x + j] += wt * g
                    dw[o, c, i, j] = s
    return dxp, dw, db


@numba.jit(**_OPTS)
def maxpool_forward(x, p):
    c, h, w = x.shape
    oh, ow = h // p, w // p
    out = np.empty((c, oh, ow))
    argmax = np.empty((c, oh, ow), dtype=np.int64)
    for ch in range(c):
        for by in range(oh):
            for bx in range(ow):
                best = x[ch, by * p, bx * p]
                idx = (by * p) * w + bx * p
                for dy in range(p):
                    for dx in range(p):
                        v = x[ch, by * p + dy, bx * p + dx]
                        if v > best:  # strict: ties keep the first cell
                            best = v
                            idx = (by * p + dy) * w + bx * p + dx
                out[ch, by, bx] = best
                argmax[ch, by, bx] = idx
    return out, argmax


@numba.jit(**_OPTS)
def _maxpool_backward(dout, argmax, h, w):
    c, oh, ow = dout.shape
    dx = np.zeros((c, h * w))
    for ch in range(c):
        for by in range(oh):
            for bx in range(ow):
                dx[ch, argmax[ch, by, bx]] += dout[ch, by, bx]
    return dx.reshape((c, h, w))


def _pad_same(x, k_h, k_w):
    ph, pw = (k_h - 1) // 2, (k_w - 1) // 2
    return np.pad(x, ((0, 0), (ph, ph), (pw, pw)))


def conv_forward(x, w, b):
    k_h, k_w = w.shape[2:]
    return _conv_padded(_pad_same(x, k_h, k_w), w, b, x.shape[1], x.shape[2])


def conv_backward(x, w, dout):
    k_h, k_w = w.shape[2:]
    ph, pw = (k_h - 1) // 2, (k_w - 1) // 2
    dxp, dw, db = _conv_backward_padded(_pad_same(x, k_h, k_w), w, dout)
    return np.ascontiguousarray(dxp[:, ph:ph + x.shape[1], pw:pw + x.shape[2]]), dw, db


def maxpool_backward(dout, argmax, h, w):
    return _maxpool_backward(dout, argmax, h, w)
