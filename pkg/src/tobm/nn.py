"""Feedforward networks with hand-written reverse mode, and Adam.

Inputs are row-major batches of shape ``(batch, features)``; a 1-D input
is treated as a batch of one. Hidden layers use ReLU. The output layer is
split into heads, each with its own squashing (identity, sigmoid, tanh).
"""

import io
import zipfile

import numpy as np

FORMAT_VERSION = 1


class ShapeMismatch(ValueError):
    pass


def _squash(kind, z):
    if kind == "identity":
        return z
    if kind == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    if kind == "tanh":
        return np.tanh(z)
    raise ValueError(f"unknown activation {kind!r}")


def _squash_grad(kind, z, y):
    if kind == "identity":
        return np.ones_like(z)
    if kind == "sigmoid":
        return y * (1.0 - y)
    if kind == "tanh":
        return 1.0 - y * y
    raise ValueError(f"unknown activation {kind!r}")


class Mlp:
    def __init__(self, sizes, heads=None, rng=None, out_scale=1.0):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError("need at least input and output sizes, all positive")
        self.sizes = sizes
        self.heads = list(heads) if heads else [(sizes[-1], "identity")]
        if sum(h[0] for h in self.heads) != sizes[-1]:
            raise ShapeMismatch("head sizes must sum to the output size")
        rng = rng if rng is not None else np.random.default_rng(0)
        self._alloc()
        for i, (w, fan_in) in enumerate(zip(self.W, sizes[:-1])):
            last = i == len(sizes) - 2
            scale = np.sqrt(2.0 / fan_in) * (out_scale if last else 1.0)
            w[...] = rng.normal(0.0, scale, size=w.shape)

    def _alloc(self, flat=None):
        # all parameters live in one contiguous vector; W and b are views into it
        n = sum(a * b + b for a, b in zip(self.sizes[:-1], self.sizes[1:]))
        self.flat = np.zeros(n) if flat is None else flat
        self.W, self.b = [], []
        pos = 0
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            self.W.append(self.flat[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out))
            pos += fan_in * fan_out
            self.b.append(self.flat[pos:pos + fan_out])
            pos += fan_out

    @property
    def params(self):
        out = []
        for w, b in zip(self.W, self.b):
            out += [w, b]
        return out

    def copy(self):
        new = Mlp.__new__(Mlp)
        new.sizes = list(self.sizes)
        new.heads = list(self.heads)
        new._alloc(self.flat.copy())
        return new

    def forward(self, x):
        """Returns ``(output, cache)``; ``cache`` keeps inputs and pre-activations."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[1] != self.sizes[0]:
            raise ShapeMismatch(f"input width {x.shape[1]} != {self.sizes[0]}")
        acts, pre = [x], []
        h = x
        n_layers = len(self.W)
        for i, (w, b) in enumerate(zip(self.W, self.b)):
            z = h @ w + b
            pre.append(z)
            h = np.maximum(z, 0.0) if i < n_layers - 1 else z
            acts.append(h)
        outs, start = [], 0
        for size, kind in self.heads:
            outs.append(_squash(kind, z[:, start:start + size]))
            start += size
        y = np.concatenate(outs, axis=1)
        return y, {"acts": acts, "pre": pre, "y": y}

    def backward(self, cache, grad_out, param_grads=True):
        """Gradients of ``sum(grad_out * output)``: ``(param_grads, input_grad)``.

        With ``param_grads=False`` only the input gradient is computed and
        the first element is ``None``.
        """
        grad_out = np.asarray(grad_out, dtype=float)
        y, pre, acts = cache["y"], cache["pre"], cache["acts"]
        if grad_out.ndim == 1:
            grad_out = grad_out[None, :]
        if grad_out.shape != y.shape:
            raise ShapeMismatch(f"grad shape {grad_out.shape} != output {y.shape}")
        z_last = pre[-1]
        parts, start = [], 0
        for size, kind in self.heads:
            sl = slice(start, start + size)
            parts.append(grad_out[:, sl] * _squash_grad(kind, z_last[:, sl], y[:, sl]))
            start += size
        dz = np.concatenate(parts, axis=1)
        grads = [None] * (2 * len(self.W)) if param_grads else None
        for i in range(len(self.W) - 1, -1, -1):
            if param_grads:
                grads[2 * i] = acts[i].T @ dz
                grads[2 * i + 1] = dz.sum(axis=0)
            dh = dz @ self.W[i].T
            if i > 0:
                dz = dh * (pre[i - 1] > 0)
        return grads, dh

    def flatten(self, grads):
        """Parameter-gradient list as one vector matching ``flat``."""
        return np.concatenate([g.ravel() for g in grads])

    def all_finite(self):
        return bool(np.isfinite(self.flat).all())


def soft_update(target: Mlp, source: Mlp, tau):
    """target <- tau * source + (1 - tau) * target, in place."""
    t, s = target.flat, source.flat
    if t.shape != s.shape:
        raise ShapeMismatch("soft update between differently shaped nets")
    if tau == 1.0:
        t[...] = s
    elif tau != 0.0:
        t *= 1.0 - tau
        t += tau * s


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, clip=None):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.clip = clip
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        if self.clip is not None:
            norm = np.sqrt(sum(float((g * g).sum()) for g in grads))
            if norm > self.clip:
                grads = [g * (self.clip / norm) for g in grads]
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1**self.t
        corr2 = 1.0 - b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)


def save_nets(path, nets: dict):
    """Write named networks to an ``.npz`` with a version and layer-size header."""
    blob = {"format_version": np.array(FORMAT_VERSION), "names": np.array(sorted(nets))}
    for name, net in nets.items():
        blob[f"{name}/sizes"] = np.array(net.sizes)
        blob[f"{name}/heads"] = np.array([f"{s}:{k}" for s, k in net.heads])
        for i, p in enumerate(net.params):
            blob[f"{name}/p{i}"] = p
    # fixed zip timestamps keep the file byte-identical across reruns
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for key, arr in blob.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arr), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{key}.npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())


def load_nets(path) -> dict:
    with np.load(path, allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        nets = {}
        for name in data["names"].tolist():
            heads = [(int(s), k) for s, k in (h.split(":") for h in data[f"{name}/heads"].tolist())]
            net = Mlp.__new__(Mlp)
            net.sizes = [int(x) for x in data[f"{name}/sizes"].tolist()]
            net.heads = heads
            net._alloc()
            for i, p in enumerate(net.params):
                p[...] = data[f"{name}/p{i}"]
            nets[name] = net
    return nets
