"""Independent oracles shared by the unit and acceptance tests."""
import itertools

import numpy as np

FD_STEP = 1e-5
# denominator floor so tensors whose true gradient is zero (a conv bias
# feeding batch norm) are judged on absolute error
GRAD_FLOOR = 1e-6

# one line per acceptance criterion, printed in the terminal summary
VERDICTS = []


def verdict(name, ok, detail=""):
    line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
    VERDICTS.append(line)
    print(line)
    return ok


def relative_error(analytic, numeric):
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), GRAD_FLOOR))


def gradient_check(loss_fn, tensors, max_entries=None, rng=None, step=FD_STEP):
    """Relative error per tensor between backprop and central differences.

    ``loss_fn()`` must rebuild the graph from the current ``.data`` of the
    tensors and return the scalar loss tensor. With ``max_entries`` only a
    random subset of entries per tensor is compared.
    """
    for t in tensors.values():
        t.grad = None
    loss_fn().backward()
    analytic = {k: np.zeros(t.data.shape) if t.grad is None else t.grad.copy()
                for k, t in tensors.items()}
    rng = rng or np.random.default_rng(0)
    errors = {}
    for name, t in tensors.items():
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        numeric = np.empty(idx.size)
        for j, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + step
            up = float(loss_fn().data)
            flat[i] = old - step
            down = float(loss_fn().data)
            flat[i] = old
            numeric[j] = (up - down) / (2 * step)
        errors[name] = relative_error(analytic[name].reshape(-1)[idx], numeric)
    return errors


def brute_average_precision(scores, labels):
    """Precision at every positive's rank, ranks from an explicit stable ordering."""
    n = len(scores)
    # position of item i: items with a strictly higher score, plus equal
    # scores that come earlier in the input
    ranks = [1 + sum(1 for j in range(n) if scores[j] > scores[i] or (scores[j] == scores[i] and j < i))
             for i in range(n)]
    total, n_pos = 0.0, sum(labels)
    for i in range(n):
        if labels[i]:
            hits = sum(1 for j in range(n) if labels[j] and ranks[j] <= ranks[i])
            total += hits / ranks[i]
    return total / n_pos


def brute_auc(scores, labels):
    """Pairwise count of concordant and tied (positive, negative) pairs."""
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    acc = 0.0
    for p, q in itertools.product(pos, neg):
        acc += 1.0 if p > q else 0.5 if p == q else 0.0
    return acc / (len(pos) * len(neg))


def reference_adam(theta, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Plain-loop Adam over a list of per-step gradients, returns every iterate."""
    theta = np.array(theta, dtype=np.float64)
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    out = []
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g ** 2
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        theta = theta - lr * mhat / (np.sqrt(vhat) + eps)
        out.append(theta.copy())
    return out
