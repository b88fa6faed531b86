"""Independent reference computations used as test oracles.

Nothing here imports the code paths it checks: the reference forward is a
per-sample loop written from the model equations, singular values come from
an eigen-decomposition of the explicit product, and the planner oracle
enumerates every assignment.
"""

import itertools
import math

import numpy as np


def softmax_rows(z):
    out = np.empty_like(z)
    for i in range(z.shape[0]):
        e = np.exp(z[i] - z[i].max())
        out[i] = e / e.sum()
    return out


def reference_loss(weights, adapters, xs, ys):
    """Straight-line MSE of the attention stack.

    ``weights``: list over layers of dicts ``{"q": W, ...}``;
    ``adapters``: dict ``(layer, m) -> (B, A)``.
    """
    d = weights[0]["q"].shape[0]
    total = 0.0
    count = 0
    for x, y in zip(xs, ys):
        h = x
        for layer, ws in enumerate(weights):
            eff = {}
            for m, w in ws.items():
                if (layer, m) in adapters:
                    b, a = adapters[(layer, m)]
                    w = w + b @ a
                eff[m] = w
            q, k, v = h @ eff["q"], h @ eff["k"], h @ eff["v"]
            p = softmax_rows(q @ k.T / math.sqrt(d))
            h = p @ v @ eff["o"]
        r = h - y
        total += float((r * r).sum())
        count += r.size
    return total / count


def central_difference(f, x, step=1e-5):
    """Gradient of scalar ``f`` at array ``x`` by central differences."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + step
        fp = f(x)
        x[i] = old - step
        fm = f(x)
        x[i] = old
        g[i] = (fp - fm) / (2 * step)
    return g


def brute_singular_values(b, a):
    """Singular values of the explicit product from the eigenvalues of the
    symmetric augmented matrix [[0, P], [P^T, 0]], which are +-sigma_i."""
    p = np.asarray(b) @ np.asarray(a)
    m, n = p.shape
    aug = np.zeros((m + n, m + n))
    aug[:m, m:] = p
    aug[m:, :m] = p.T
    ev = np.sort(np.linalg.eigvalsh(aug))[::-1]
    return np.abs(ev[: min(m, n)])


def loop_gradient_weight_product(w, g):
    acc = 0.0
    for wi, gi in zip(w, g):
        acc += abs(wi * gi)
    return acc / len(w)


def replay_recurrence(samples, lam1, lam2):
    """Smoothed sensitivity / uncertainty pairs after each sample."""
    s, u = 0.0, 0.0
    out = []
    for x in samples:
        s = lam1 * s + (1 - lam1) * x
        u = lam2 * u + (1 - lam2) * abs(x - s)
        out.append((s, u))
    return out


def enumerate_assignments(slots, menus, costs):
    """Every assignment of ``None`` (skip) or a menu rank to each slot, with its cost."""
    choices = [[None, *menus[s]] for s in slots]
    for combo in itertools.product(*choices):
        total = sum(costs(s, r) for s, r in zip(slots, combo) if r is not None)
        yield dict(zip(slots, combo)), total


def loop_weighted_sum(deltas, weights):
    out = np.zeros_like(deltas[0])
    for i in range(out.shape[0]):
        for j in range(out.shape[1]):
            acc = 0.0
            for dw, w in zip(deltas, weights):
                acc += w * dw[i, j]
            out[i, j] = acc
    return out
