"""Differentiable layer functions over :class:`Tensor`.

Every function records its own backward closure; shapes follow the
N x C x H x W convention for image-like inputs.
"""
import numpy as np

from .. import kernels
from .tensor import ShapeError, Tensor, as_tensor, make_node

BCE_EPS = 1e-7
SIGMOID_EPS = 1e-12


def conv2d(x, weight, bias, padding=0, stride=1, method="im2col"):
    """Cross-correlation of ``x`` (N,C,H,W) with ``weight`` (K,C,kh,kw)."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.data.ndim != 4 or weight.data.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with kernel {weight.shape}")
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"conv2d: kernel {weight.shape} incompatible with bias {bias.shape}")
    if method == "im2col":
        out, cols = kernels.conv2d_im2col(
            x.data, weight.data, bias.data, padding, stride, keep_cols=True
        )

        def backward(g):
            return kernels.conv2d_im2col_backward(
                x.data, weight.data, g, padding, stride,
                need_dx=x.requires_grad, cols_cache=cols,
            )
    else:
        out = kernels.conv2d_forward(x.data, weight.data, bias.data, padding, stride, method)

        def backward(g):
            return kernels.conv2d_backward(
                x.data, weight.data, g, padding, stride, method, need_dx=x.requires_grad
            )

    return make_node(out, (x, weight, bias), backward)


def batchnorm(x, gamma, beta, running_mean, running_var, training,
              momentum=0.1, eps=1e-5):
    """Per-channel batch normalisation over (N, H, W) for 4-D or N for 2-D input.

    In training mode the batch statistics are used and ``running_mean`` /
    ``running_var`` (plain ndarrays) are updated in place; the running
    variance uses the unbiased estimate.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.data.ndim not in (2, 4):
        raise ShapeError(f"batchnorm expects 2-D or 4-D input, got {x.shape}")
    N, C = x.shape[:2]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError(f"batchnorm: {C} channels but gamma {gamma.shape}, beta {beta.shape}")
    x3 = np.ascontiguousarray(x.data).reshape(N, C, -1)
    m = N * x3.shape[2]
    if training:
        if m < 2:
            raise ValueError("batchnorm in train mode needs at least 2 values per channel")
        out, xhat, inv_std, mean, var = kernels.bn_forward(x3, gamma.data, beta.data, eps=eps)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var * (m / (m - 1))
    else:
        out, xhat, inv_std, _, _ = kernels.bn_forward(
            x3, gamma.data, beta.data, running_mean, running_var, eps=eps
        )

    def backward(g):
        dx, dgamma, dbeta = kernels.bn_backward(
            g.reshape(x3.shape), xhat, gamma.data, inv_std, training
        )
        return dx.reshape(x.shape), dgamma, dbeta

    return make_node(out.reshape(x.shape), (x, gamma, beta), backward)


def relu(x):
    x = as_tensor(x)
    out = kernels.relu_forward(x.data)
    return make_node(out, (x,), lambda g: (kernels.relu_backward(out, g),))


def avgpool2d(x, size=2):
    """Non-overlapping ``size`` x ``size`` mean pooling; ragged edges are dropped."""
    x = as_tensor(x)
    H, W = x.shape[2:]
    if H < size or W < size:
        raise ShapeError(f"avgpool2d: spatial extent {(H, W)} smaller than pool {size}")
    out = kernels.avgpool_forward(x.data, size)
    return make_node(out, (x,), lambda g: (kernels.avgpool_backward(g, x.shape, size),))


def global_avg_pool(x):
    x = as_tensor(x)
    N, C, H, W = x.shape
    out = x.data.mean(axis=(2, 3))
    return make_node(
        out, (x,),
        lambda g: (np.broadcast_to(g[:, :, None, None] / (H * W), x.shape).copy(),),
    )


def dense(x, weight, bias):
    """Affine map ``x @ weight + bias`` with weight of shape (in, out)."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.data.ndim != 2 or weight.shape[0] != x.shape[1] or bias.shape != (weight.shape[1],):
        raise ShapeError(
            f"dense: input {x.shape}, weight {weight.shape}, bias {bias.shape}"
        )
    out = x.data @ weight.data + bias.data
    return make_node(
        out, (x, weight, bias),
        lambda g: (g @ weight.data.T, x.data.T @ g, g.sum(axis=0)),
    )


def dropout(x, rate, training, rng=None):
    """Inverted dropout; identity (the same object) in eval mode."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return make_node(x.data * keep, (x,), lambda g: (g * keep,))


def sigmoid(x):
    x = as_tensor(x)
    p = np.empty_like(x.data)
    pos = x.data >= 0
    p[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    e = np.exp(x.data[~pos])
    p[~pos] = e / (1.0 + e)
    np.clip(p, SIGMOID_EPS, 1.0 - SIGMOID_EPS, out=p)
    return make_node(p, (x,), lambda g: (g * p * (1.0 - p),))


def bce_loss(p, y):
    """Mean binary cross-entropy over every entry; ``p`` clamped to [eps, 1-eps]."""
    p = as_tensor(p)
    y = np.asarray(y.data if isinstance(y, Tensor) else y, dtype=np.float64)
    if p.shape != y.shape:
        raise ShapeError(f"bce_loss: predictions {p.shape} vs targets {y.shape}")
    pc = np.clip(p.data, BCE_EPS, 1.0 - BCE_EPS)
    M = pc.size
    loss = -np.mean(y * np.log(pc) + (1.0 - y) * np.log1p(-pc))
    inside = (p.data > BCE_EPS) & (p.data < 1.0 - BCE_EPS)

    def backward(g):
        return (g * inside * (-(y / pc) + (1.0 - y) / (1.0 - pc)) / M,)

    return make_node(loss, (p,), backward)
