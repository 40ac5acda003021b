"""Small numpy neural-network substrate with hand-written backprop.

Layers cache what they need on ``forward(x)`` and accumulate parameter
gradients on ``backward(dy)``.  Pass ``keep=False`` for inference-only passes
that must not clobber the cache of a pending backward pass.
"""

from __future__ import annotations

import math
from typing import Iterable, Optional, Sequence

import numpy as np

__all__ = [
    "Dense",
    "Conv2D",
    "ReLU",
    "Identity",
    "Flatten",
    "Sequential",
    "EncoderNet",
    "ActorCritic",
    "Adam",
    "SGD",
    "NonFiniteGradientError",
    "PopArt",
    "polyak_update",
    "popart_update_and_normalize",
    "popart_rescale_head",
    "softmax",
    "log_softmax",
    "build_layer",
]


class NonFiniteGradientError(FloatingPointError):
    pass


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: list[np.ndarray] = []
        self.grads: list[np.ndarray] = []
        self.param_names: list[str] = []

    def forward(self, x: np.ndarray, keep: bool = True) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def zero_grad(self) -> None:
        for g in self.grads:
            g.fill(0.0)

    def spec(self) -> dict:
        return {"kind": self.kind}

    def astype(self, dtype) -> None:
        self.params[:] = [p.astype(dtype) for p in self.params]
        self.grads[:] = [g.astype(dtype) for g in self.grads]
        self._rebind()

    def _rebind(self) -> None:
        pass


class Dense(Layer):
    kind = "dense"

    def __init__(self, n_in: int, n_out: int, rng: Optional[np.random.Generator] = None,
                 dtype=np.float32, init_scale: Optional[float] = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        scale = np.sqrt(2.0 / n_in) if init_scale is None else init_scale
        self.W = (rng.standard_normal((n_in, n_out)) * scale).astype(dtype)
        self.b = np.zeros(n_out, dtype=dtype)
        self.params = [self.W, self.b]
        self.grads = [np.zeros_like(self.W), np.zeros_like(self.b)]
        self.param_names = ["W", "b"]
        self.n_in, self.n_out = n_in, n_out
        self._x = None

    def _rebind(self):
        self.W, self.b = self.params

    def forward(self, x, keep=True):
        if x.shape[-1] != self.n_in:
            raise ValueError(f"dense layer expects {self.n_in} features, got shape {x.shape}")
        if keep:
            self._x = x
        return x @ self.W + self.b

    def backward(self, dy):
        self.grads[0] += self._x.T @ dy
        self.grads[1] += dy.sum(axis=0)
        return dy @ self.W.T

    def spec(self):
        return {"kind": self.kind, "n_in": self.n_in, "n_out": self.n_out}


class Conv2D(Layer):
    """2-D convolution over channels-last ``(batch, height, width, channels)`` inputs.

    im2col is built from ``kernel**2`` shifted slices, so columns are ordered
    ``(ki, kj, channel)``.  The first layer of a stack can set
    ``input_grad=False`` to skip the col2im pass.
    """

    kind = "conv2d"

    def __init__(self, c_in: int, c_out: int, kernel: int = 3, stride: int = 1,
                 padding: Optional[int] = None, rng: Optional[np.random.Generator] = None,
                 dtype=np.float32, input_grad: bool = True):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.c_in, self.c_out, self.kernel, self.stride = c_in, c_out, kernel, stride
        self.padding = kernel // 2 if padding is None else padding
        self.input_grad = input_grad
        fan_in = c_in * kernel * kernel
        self.W = (rng.standard_normal((fan_in, c_out)) * np.sqrt(2.0 / fan_in)).astype(dtype)
        self.b = np.zeros(c_out, dtype=dtype)
        self.params = [self.W, self.b]
        self.grads = [np.zeros_like(self.W), np.zeros_like(self.b)]
        self.param_names = ["W", "b"]
        self._cache = None

    def _rebind(self):
        self.W, self.b = self.params

    def output_shape(self, h: int, w: int) -> tuple[int, int]:
        k, s, p = self.kernel, self.stride, self.padding
        return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1

    def forward(self, x, keep=True):
        if x.ndim != 4 or x.shape[3] != self.c_in:
            raise ValueError(f"conv layer expects (B, H, W, {self.c_in}), got shape {x.shape}")
        B, H, W, C = x.shape
        k, s, p = self.kernel, self.stride, self.padding
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x
        Ho, Wo = self.output_shape(H, W)
        cols = np.concatenate(
            [xp[:, i:i + s * (Ho - 1) + 1:s, j:j + s * (Wo - 1) + 1:s, :] for i in range(k) for j in range(k)],
            axis=3,
        ).reshape(B * Ho * Wo, k * k * C)
        out = cols @ self.W + self.b
        if keep:
            self._cache = (cols, x.shape, Ho, Wo)
        return out.reshape(B, Ho, Wo, self.c_out)

    def backward(self, dy):
        cols, (B, H, W, C), Ho, Wo = self._cache
        k, s, p = self.kernel, self.stride, self.padding
        dy2 = dy.reshape(B * Ho * Wo, self.c_out)
        self.grads[0] += cols.T @ dy2
        self.grads[1] += dy2.sum(axis=0)
        if not self.input_grad:
            return None
        dcols = (dy2 @ self.W.T).reshape(B, Ho, Wo, k * k, C)
        dxp = np.zeros((B, H + 2 * p, W + 2 * p, C), dtype=dy.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, i:i + s * (Ho - 1) + 1:s, j:j + s * (Wo - 1) + 1:s, :] += dcols[:, :, :, i * k + j, :]
        return dxp[:, p:p + H, p:p + W, :] if p else dxp

    def spec(self):
        return {"kind": self.kind, "c_in": self.c_in, "c_out": self.c_out, "kernel": self.kernel,
                "stride": self.stride, "padding": self.padding, "input_grad": self.input_grad}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, keep=True):
        if keep:
            self._mask = x > 0
        return np.maximum(x, 0)

    def backward(self, dy):
        return dy * self._mask


class Identity(Layer):
    kind = "identity"

    def forward(self, x, keep=True):
        return x

    def backward(self, dy):
        return dy


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, keep=True):
        if keep:
            self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._shape)


def build_layer(spec: dict, dtype=np.float32) -> Layer:
    kind = spec["kind"]
    if kind == "dense":
        return Dense(spec["n_in"], spec["n_out"], dtype=dtype)
    if kind == "conv2d":
        return Conv2D(spec["c_in"], spec["c_out"], spec["kernel"], spec["stride"], spec["padding"], dtype=dtype,
                      input_grad=spec.get("input_grad", True))
    return {"relu": ReLU, "identity": Identity, "flatten": Flatten}[kind]()


class Sequential:
    def __init__(self, layers: Sequence[Layer]):
        self.layers = list(layers)

    def forward(self, x, keep=True):
        for layer in self.layers:
            x = layer.forward(x, keep)
        return x

    __call__ = forward

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def named_parameters(self, prefix: str = ""):
        for i, layer in enumerate(self.layers):
            for name, p, g in zip(layer.param_names, layer.params, layer.grads):
                yield f"{prefix}{i}.{layer.kind}.{name}", p, g

    def parameters(self) -> list[np.ndarray]:
        return [p for _, p, _ in self.named_parameters()]

    def gradients(self) -> list[np.ndarray]:
        return [g for _, _, g in self.named_parameters()]

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def spec(self) -> list[dict]:
        return [layer.spec() for layer in self.layers]

    def copy_from(self, other: "Sequential") -> None:
        for p, q in zip(self.parameters(), other.parameters()):
            p[...] = q

    def astype(self, dtype):
        for layer in self.layers:
            layer.astype(dtype)

    @classmethod
    def from_spec(cls, spec: list[dict], dtype=np.float32) -> "Sequential":
        return cls([build_layer(s, dtype) for s in spec])


def mlp(sizes: Sequence[int], rng, dtype=np.float32, final_relu=False, final_scale=None) -> Sequential:
    layers: list[Layer] = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = i == len(sizes) - 2
        layers.append(Dense(a, b, rng, dtype, init_scale=final_scale if last else None))
        if not last or final_relu:
            layers.append(ReLU())
    return Sequential(layers)


class EncoderNet:
    """Conv stack over the resource image plus dense branch over the job array,
    concatenated and merged into a ``state_dim`` vector."""

    def __init__(self, image_shape: tuple[int, int], job_dim: int, rng=None, dtype=np.float32,
                 conv_channels: Sequence[int] = (8, 16), conv_strides: Sequence[int] = (1, 1),
                 job_hidden: int = 64, merge_hidden: int = 128, state_dim: int = 64,
                 input_grad: bool = False):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.image_shape = tuple(image_shape)
        self.job_dim = job_dim
        self.config = dict(conv_channels=list(conv_channels), conv_strides=list(conv_strides),
                           job_hidden=job_hidden, merge_hidden=merge_hidden, state_dim=state_dim)
        layers: list[Layer] = []
        c_in, (h, w) = 1, self.image_shape
        for i, (c, s) in enumerate(zip(conv_channels, conv_strides)):
            conv = Conv2D(c_in, c, 3, s, rng=rng, dtype=dtype, input_grad=i > 0 or input_grad)
            h, w = conv.output_shape(h, w)
            layers += [conv, ReLU()]
            c_in = c
        layers.append(Flatten())
        self.conv = Sequential(layers)
        self.conv_out = c_in * h * w
        self.jobs = mlp([job_dim, job_hidden], rng, dtype, final_relu=True)
        self.merge = mlp([self.conv_out + job_hidden, merge_hidden, state_dim], rng, dtype, final_relu=True)
        self.state_dim = state_dim
        self._split = self.conv_out

    def forward(self, image, jobs, keep=True):
        if image.ndim == 3:
            image = image[..., None]
        a = self.conv.forward(image, keep)
        b = self.jobs.forward(jobs, keep)
        return self.merge.forward(np.concatenate([a, b], axis=1), keep)

    __call__ = forward

    def backward(self, dz):
        dm = self.merge.backward(dz)
        dimg = self.conv.backward(dm[:, : self._split])
        djobs = self.jobs.backward(dm[:, self._split:])
        return (None if dimg is None else dimg[..., 0]), djobs

    def named_parameters(self, prefix="encoder."):
        yield from self.conv.named_parameters(prefix + "conv.")
        yield from self.jobs.named_parameters(prefix + "jobs.")
        yield from self.merge.named_parameters(prefix + "merge.")

    def parameters(self):
        return [p for _, p, _ in self.named_parameters()]

    def zero_grad(self):
        for part in (self.conv, self.jobs, self.merge):
            part.zero_grad()

    def copy_from(self, other):
        for p, q in zip(self.parameters(), other.parameters()):
            p[...] = q

    def spec(self):
        return {"image_shape": list(self.image_shape), "job_dim": self.job_dim, **self.config}


class SGD:
    def __init__(self, named_params, lr: float = 1e-2):
        self.entries = list(named_params)
        self.lr = lr

    def step(self):
        _check_finite(self.entries)
        for _, p, g in self.entries:
            p -= self.lr * g


class Adam:
    """Adaptive-moment optimizer with bias-corrected first and second moments."""

    def __init__(self, named_params, lr: float = 3e-4, betas=(0.9, 0.999), eps: float = 1e-8,
                 grad_clip: Optional[float] = None):
        self.entries = list(named_params)
        self.lr, self.betas, self.eps, self.grad_clip = lr, betas, eps, grad_clip
        self.m = [np.zeros_like(p) for _, p, _ in self.entries]
        self.v = [np.zeros_like(p) for _, p, _ in self.entries]
        self.t = 0

    def step(self):
        _check_finite(self.entries)
        scale = 1.0
        if self.grad_clip is not None:
            norm = math.sqrt(sum(float(np.vdot(g, g)) for _, _, g in self.entries))
            if norm > self.grad_clip:
                scale = self.grad_clip / norm
        self.t += 1
        b1, b2 = self.betas
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for (_, p, g), m, v in zip(self.entries, self.m, self.v):
            if scale != 1.0:
                g = g * scale
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


def _check_finite(entries):
    for name, _, g in entries:
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient in {name}")


def polyak_update(target, online, tau: float):
    """``target <- (1 - tau) * target + tau * online`` for matching parameter lists."""
    if not 0 < tau <= 1:
        raise ValueError(f"tau must be in (0, 1], got {tau}")
    tp = target.parameters() if hasattr(target, "parameters") else list(target)
    op = online.parameters() if hasattr(online, "parameters") else list(online)
    if len(tp) != len(op):
        raise ValueError("target and online networks have different parameter counts")
    for t, o in zip(tp, op):
        if t.shape != o.shape:
            raise ValueError(f"shape mismatch {t.shape} vs {o.shape}")
        if tau == 1:
            t[...] = o
        else:
            t *= 1 - tau
            t += tau * o
    return target


class PopArt:
    """Running mean/std of value targets.

    Updates use the debiased step size ``beta / (1 - (1 - beta)**t)`` so the
    first update takes the batch statistics outright.
    """

    def __init__(self, beta: float = 3e-4, sigma_min: float = 1e-4):
        self.beta, self.sigma_min = beta, sigma_min
        self.mu, self.nu, self.count = 0.0, 1.0, 0

    @property
    def sigma(self) -> float:
        return float(np.sqrt(max(self.nu - self.mu ** 2, self.sigma_min ** 2)))

    def update(self, targets) -> tuple[float, float]:
        """Fold a batch of targets into the statistics; returns the old ``(mu, sigma)``."""
        targets = np.asarray(targets, dtype=np.float64)
        old = (self.mu, self.sigma)
        self.count += 1
        step = self.beta / (1.0 - (1.0 - self.beta) ** self.count)
        self.mu += step * (float(targets.mean()) - self.mu)
        self.nu += step * (float((targets ** 2).mean()) - self.nu)
        return old

    def normalize(self, y):
        return (np.asarray(y) - self.mu) / self.sigma

    def denormalize(self, q):
        return np.asarray(q) * self.sigma + self.mu

    def state_dict(self) -> dict:
        return {"beta": self.beta, "sigma_min": self.sigma_min, "mu": self.mu, "nu": self.nu, "count": self.count}

    def load_state_dict(self, d: dict) -> None:
        self.beta, self.sigma_min = d["beta"], d["sigma_min"]
        self.mu, self.nu, self.count = d["mu"], d["nu"], d["count"]


def popart_rescale_head(head: Dense, old_stats: tuple[float, float], new_stats: tuple[float, float]) -> None:
    """Rescale a final linear layer so ``sigma * out + mu`` is unchanged."""
    mu_old, sigma_old = old_stats
    mu_new, sigma_new = new_stats
    head.W *= sigma_old / sigma_new
    head.b[...] = (sigma_old * head.b + mu_old - mu_new) / sigma_new


def popart_update_and_normalize(stats: PopArt, targets, heads: Iterable[Dense] = ()):
    old = stats.update(targets)
    new = (stats.mu, stats.sigma)
    for head in heads:
        popart_rescale_head(head, old, new)
    return stats.normalize(targets)


def _head(state_dim, hidden, n_out, rng, dtype):
    return mlp([state_dim, hidden, n_out], rng, dtype, final_scale=0.01)


class ActorCritic:
    """Shared encoder, actor head, critic ensemble, target copies and PopArt stats."""

    def __init__(self, image_shape, job_dim: int, n_actions: int, seed: int = 0, dtype=np.float32,
                 n_critics: int = 2, head_hidden: int = 64, popart_beta: float = 3e-4,
                 sigma_min: float = 1e-4, **encoder_kw):
        self.n_actions, self.n_critics, self.dtype = n_actions, n_critics, np.dtype(dtype)
        self.head_hidden = head_hidden
        seqs = np.random.SeedSequence(seed).spawn(2 + n_critics)
        rngs = [np.random.default_rng(s) for s in seqs]
        self.encoder = EncoderNet(image_shape, job_dim, rngs[0], dtype, **encoder_kw)
        d = self.encoder.state_dim
        self.actor = _head(d, head_hidden, n_actions, rngs[1], dtype)
        self.critics = [_head(d, head_hidden, n_actions, r, dtype) for r in rngs[2:]]
        self.target_encoder = EncoderNet(image_shape, job_dim, None, dtype, **encoder_kw)
        self.target_encoder.copy_from(self.encoder)
        self.target_critics = [_head(d, head_hidden, n_actions, None, dtype) for _ in self.critics]
        for t, c in zip(self.target_critics, self.critics):
            t.copy_from(c)
        self.popart = PopArt(popart_beta, sigma_min)
        self._encoder_kw = encoder_kw

    # parameter groups
    def actor_parameters(self):
        yield from self.actor.named_parameters("actor.")

    def critic_parameters(self):
        for i, c in enumerate(self.critics):
            yield from c.named_parameters(f"critic{i}.")

    def encoder_parameters(self):
        yield from self.encoder.named_parameters()

    def zero_grad(self):
        self.encoder.zero_grad()
        self.actor.zero_grad()
        for c in self.critics:
            c.zero_grad()

    def heads_last_layers(self):
        return [c.layers[-1] for c in self.critics] + [t.layers[-1] for t in self.target_critics]

    def target_modules(self):
        return [self.target_encoder] + self.target_critics

    def online_modules(self):
        return [self.encoder] + self.critics

    def soft_update(self, tau: float) -> None:
        for t, o in zip(self.target_modules(), self.online_modules()):
            polyak_update(t, o, tau)

    def policy_logits(self, image, jobs):
        return self.actor.forward(self.encoder.forward(image, jobs, keep=False), keep=False)

    def q_values(self, image, jobs, target=False, normalized=False):
        enc = self.target_encoder if target else self.encoder
        heads = self.target_critics if target else self.critics
        z = enc.forward(image, jobs, keep=False)
        qs = np.stack([h.forward(z, keep=False) for h in heads])
        return qs if normalized else self.popart.denormalize(qs)

    def spec(self) -> dict:
        return {
            "encoder": self.encoder.spec(),
            "n_actions": self.n_actions,
            "n_critics": self.n_critics,
            "head_hidden": self.head_hidden,
            "dtype": self.dtype.name,
            "actor_layers": self.actor.spec(),
            "critic_layers": self.critics[0].spec(),
        }

    def all_arrays(self) -> list[tuple[str, np.ndarray]]:
        out = [(n, p) for n, p, _ in self.encoder_parameters()]
        out += [(n, p) for n, p, _ in self.actor_parameters()]
        out += [(n, p) for n, p, _ in self.critic_parameters()]
        out += [("target." + n, p) for n, p, _ in self.target_encoder.named_parameters()]
        for i, c in enumerate(self.target_critics):
            out += [(f"target.{n}", p) for n, p, _ in c.named_parameters(f"critic{i}.")]
        return out

    @classmethod
    def from_spec(cls, spec: dict, dtype=None) -> "ActorCritic":
        enc = dict(spec["encoder"])
        image_shape, job_dim = enc.pop("image_shape"), enc.pop("job_dim")
        return cls(image_shape, job_dim, spec["n_actions"], 0, dtype or spec["dtype"],
                   spec["n_critics"], spec["head_hidden"], **enc)

    def copy_from(self, other: "ActorCritic") -> None:
        for (_, p), (_, q) in zip(self.all_arrays(), other.all_arrays()):
            p[...] = q
        self.popart.load_state_dict(other.popart.state_dict())
