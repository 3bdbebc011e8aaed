"""Central finite-difference checks of ``Mlp.backward``.

The scalar checked is ``sum(g * net(x))`` for a random ``g``. Nudging
``W_l[i, j]`` by ``h`` shifts column ``j`` of layer ``l``'s pre-activation
by ``h * a[:, i]`` and nothing upstream, so all nudges of one parameter
block are pushed through the remaining layers as one stacked batch.
``loop_finite_difference_error`` is the plain one-parameter-at-a-time
version, kept as a cross-check.
"""

import numpy as np

from .nn import Mlp, _squash


def _tail(net: Mlp, layer, z, dtype=np.float64):
    """Network output given the pre-activation ``z`` of ``layer``; leading axes broadcast."""
    for i in range(layer + 1, len(net.W)):
        z = np.maximum(z, 0.0) @ net.W[i].astype(dtype) + net.b[i].astype(dtype)
    parts, start = [], 0
    for size, kind in net.heads:
        parts.append(_squash(kind, z[..., start:start + size]))
        start += size
    return np.concatenate(parts, axis=-1)


def _errors(fd, g):
    denom = np.maximum(np.maximum(np.abs(fd), np.abs(g)), 1e-7)
    return np.abs(fd - g) / denom


def _rel_err(fd, g):
    return float(np.max(_errors(fd, g)))


def _random_case(sizes, heads, seed, batch):
    rng = np.random.default_rng(seed)
    net = Mlp(sizes, heads, rng=rng)
    for b in net.b:
        b[...] = rng.normal(0.0, 0.1, size=b.shape)
    x = rng.normal(size=(batch, sizes[0]))
    g = rng.normal(size=(batch, sizes[-1]))
    return net, x, g


def finite_difference_error(sizes, heads=None, seed=0, batch=3, h=1e-5, refine_above=1e-6):
    """Max elementwise relative error between backprop and central differences.

    Covers every weight, bias and input entry. Difference quotients are
    first taken in float64; entries whose error exceeds ``refine_above``
    are recomputed in extended precision, because for gradients near 1e-6
    the float64 rounding error (about eps * |loss| / h) alone approaches
    the tolerance.
    """
    net, x, g = _random_case(sizes, heads, seed, batch)
    _, cache = net.forward(x)
    grads, dx = net.backward(cache, g)

    def fd_of(z, shift, layer, dtype, gw):
        z, shift, gw = z.astype(dtype), shift.astype(dtype), gw.astype(dtype)
        up = (_tail(net, layer, z + shift, dtype) * gw).sum(axis=(-2, -1))
        down = (_tail(net, layer, z - shift, dtype) * gw).sum(axis=(-2, -1))
        return np.asarray((up - down) / (2 * dtype(h)), dtype=np.float64)

    def block_error(z, shift, layer, exact, gw):
        fd = fd_of(z, shift, layer, np.float64, gw)
        err = _errors(fd, exact)
        redo = err > refine_above
        if redo.any():
            fd[redo] = fd_of(z, shift[redo], layer, np.longdouble, gw)
            err = _errors(fd, exact)
        return float(err.max())

    worst = 0.0
    for layer, (w, b) in enumerate(zip(net.W, net.b)):
        a, z = cache["acts"][layer], cache["pre"][layer]
        fan_in, fan_out = w.shape
        # weights: perturbation k = i * fan_out + j
        n = fan_in * fan_out
        rows, cols = np.divmod(np.arange(n), fan_out)
        shift = np.zeros((n,) + z.shape)
        shift[np.arange(n), :, cols] = h * a[:, rows].T
        worst = max(worst, block_error(z, shift, layer, grads[2 * layer].reshape(-1), g))
        # biases
        shift = np.zeros((fan_out,) + z.shape)
        shift[np.arange(fan_out), :, np.arange(fan_out)] = h
        worst = max(worst, block_error(z, shift, layer, grads[2 * layer + 1], g))
    # inputs: nudging x[r, i] moves only row r of the first pre-activation
    z0 = cache["pre"][0]
    n_in = x.shape[1]
    shift = np.broadcast_to(h * net.W[0], (len(x), n_in, net.sizes[1])).reshape(-1, net.sizes[1])
    z_rows = np.repeat(z0, n_in, axis=0)
    g_rows = np.repeat(g, n_in, axis=0)
    fd = _row_fd(net, z_rows, shift, g_rows, h, np.float64)
    err = _errors(fd, dx.reshape(-1))
    redo = err > refine_above
    if redo.any():
        fd[redo] = _row_fd(net, z_rows[redo], shift[redo], g_rows[redo], h, np.longdouble)
        err = _errors(fd, dx.reshape(-1))
    return max(worst, float(err.max()))


def _row_fd(net, z, shift, g, h, dtype):
    z, shift, g = z.astype(dtype), shift.astype(dtype), g.astype(dtype)
    up = (_tail(net, 0, z + shift, dtype) * g).sum(axis=-1)
    down = (_tail(net, 0, z - shift, dtype) * g).sum(axis=-1)
    return np.asarray((up - down) / (2 * dtype(h)), dtype=np.float64)


def loop_finite_difference_error(sizes, heads=None, seed=0, batch=3, h=1e-5):
    """Same check, perturbing one stored parameter at a time and re-running ``forward``."""
    net, x, g = _random_case(sizes, heads, seed, batch)

    def loss():
        return float((net.forward(x)[0] * g).sum())

    _, cache = net.forward(x)
    grads, dx = net.backward(cache, g)
    worst = 0.0
    for p, grad in list(zip(net.params, grads)) + [(x, dx)]:
        flat, gflat = p.reshape(-1), grad.reshape(-1)
        fd = np.empty(flat.size)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = loss()
            flat[i] = old - h
            down = loss()
            flat[i] = old
            fd[i] = (up - down) / (2 * h)
        worst = max(worst, _rel_err(fd, gflat))
    return worst
