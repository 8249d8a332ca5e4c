"""AdamW with decoupled weight decay and named per-group learning rates.

The protocol trains two groups: classification head + pooling query at one
learning rate, adapter/router parameters at a tenth of it. The decay step
multiplies parameters by (1 - lr * wd) before the moment update, so wd=0
reproduces plain Adam bit for bit.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class AdamW:
    def __init__(
        self,
        groups: dict[str, dict[str, Tensor]],
        lrs: dict[str, float],
        weight_decay: float = 0.01,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        for name in groups:
            if name not in lrs:
                raise ValueError(f"no learning rate for group {name!r}")
        self.groups = {g: dict(params) for g, params in groups.items()}
        self.lrs = dict(lrs)
        self.weight_decay = float(weight_decay)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        for params in self.groups.values():
            for name, t in params.items():
                self.m[name] = np.zeros_like(t.data)
                self.v[name] = np.zeros_like(t.data)

    def zero_grad(self) -> None:
        for params in self.groups.values():
            for t in params.values():
                t.zero_grad()

    def clip_global_norm(self, max_norm: float) -> float:
        """Scale all gradients so their joint L2 norm is at most max_norm.
        Returns the pre-clip norm. No-op when max_norm <= 0."""
        sq = 0.0
        for params in self.groups.values():
            for t in params.values():
                sq += float(np.dot(t.grad.ravel(), t.grad.ravel()))
        total = float(np.sqrt(sq))
        if max_norm > 0 and total > max_norm:
            scale = max_norm / (total + 1e-6)
            for params in self.groups.values():
                for t in params.values():
                    t.grad *= scale
        return total

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for gname, params in self.groups.items():
            lr = self.lrs[gname]
            for name, p in params.items():
                g = p.grad
                if g is None:
                    raise ValueError(f"parameter {name!r} has no gradient buffer")
                p.data *= 1.0 - lr * self.weight_decay
                m = self.m[name]
                v = self.v[name]
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * (g * g)
                p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    # checkpoint support -----------------------------------------------------

    def state_tensors(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for name in self.m:
            out[f"opt.m.{name}"] = self.m[name]
            out[f"opt.v.{name}"] = self.v[name]
        return out

    def load_state(self, tensors: dict[str, np.ndarray], step_count: int) -> None:
        for name in self.m:
            self.m[name][...] = tensors[f"opt.m.{name}"]
            self.v[name][...] = tensors[f"opt.v.{name}"]
        self.step_count = int(step_count)


def adamw_step(state: AdamW) -> None:
    """One optimizer step over the parameters registered in `state`."""
    state.step()
