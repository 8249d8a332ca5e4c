"""Low-rank adapters: the single-adapter baseline, the K-expert bank with its
soft router, and the combined mixture layer.

The mixture layer computes, per input row x,

    h = W0 x + sum_i g_i(x) * s * B_i (A_i x)

with gates g(x) = softmax(W2 relu(W1 x + b1) + b2) over the K experts. The
gates are soft — every expert contributes on every input, there is no top-k
truncation — and they are learned purely from the task loss. W0 stays frozen;
only the expert pairs and the router train.

The expert scaling s defaults to alpha/rank so that a K=1 mixture collapses
exactly to the plain low-rank adapter baseline.
"""

from __future__ import annotations

import numpy as np

from .rng import RngStream
from .tensor import ShapeError, Tensor, relu_backward, softmax, softmax_backward


class LoraAdapter:
    """Single low-rank update: delta(x) = (alpha/rank) * B (A x).

    A is rank x d_in, B is d_out x rank. B starts at zero so a fresh adapter
    is an exact no-op.
    """

    def __init__(self, d_in: int, d_out: int, rank: int = 8, alpha: float = 16.0):
        if rank < 1 or rank > min(d_in, d_out):
            raise ValueError(f"rank {rank} out of range for ({d_in}, {d_out})")
        self.d_in = d_in
        self.d_out = d_out
        self.rank = rank
        self.alpha = float(alpha)
        self.A = Tensor.zeros((rank, d_in), requires_grad=True)
        self.B = Tensor.zeros((d_out, rank), requires_grad=True)

    @property
    def scaling(self) -> float:
        return self.alpha / self.rank

    def init(self, rng: RngStream) -> None:
        self.A.data[...] = rng.normal(0.0, 1.0 / np.sqrt(self.d_in), self.A.shape)
        self.B.data.fill(0.0)

    def delta(self, x: np.ndarray) -> np.ndarray:
        """Adapter contribution for a batch of rows x (N x d_in)."""
        return self.scaling * ((x @ self.A.data.T) @ self.B.data.T)

    def delta_backward(self, grad_out: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Accumulate A/B gradients; returns the gradient w.r.t. x."""
        u = x @ self.A.data.T
        gv = self.scaling * grad_out
        self.B.grad += gv.T @ u
        gu = gv @ self.B.data
        self.A.grad += gu.T @ x
        return gu @ self.A.data

    def parameters(self) -> dict[str, Tensor]:
        return {"lora.A": self.A, "lora.B": self.B}


def lora_forward(adapter: LoraAdapter, w0: Tensor, x) -> Tensor:
    """Baseline adapted output h = W0 x + (alpha/rank) B A x for rows of x."""
    xv = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if xv.ndim == 1:
        xv = xv[None, :]
    if xv.shape[1] != w0.shape[1]:
        raise ShapeError(f"lora_forward: x has {xv.shape[1]} columns, W0 is {w0.shape}")
    return Tensor(xv @ w0.data.T + adapter.delta(xv))


class ExpertBank:
    """K low-rank expert pairs sharing one (rank, d_in, d_out) signature."""

    def __init__(self, num_experts: int, d_in: int, d_out: int, rank: int = 8):
        if num_experts < 1:
            raise ValueError("expert bank needs at least one expert")
        if rank < 1 or rank > min(d_in, d_out):
            raise ValueError(f"rank {rank} out of range for ({d_in}, {d_out})")
        self.num_experts = num_experts
        self.d_in = d_in
        self.d_out = d_out
        self.rank = rank
        self.A = [Tensor.zeros((rank, d_in), requires_grad=True) for _ in range(num_experts)]
        self.B = [Tensor.zeros((d_out, rank), requires_grad=True) for _ in range(num_experts)]

    def init(self, rng: RngStream) -> None:
        # A_i ~ N(0, 1/d_in), B_i = 0: the mixture starts as an exact no-op.
        for i in range(self.num_experts):
            self.A[i].data[...] = rng.normal(
                0.0, 1.0 / np.sqrt(self.d_in), self.A[i].shape
            )
            self.B[i].data.fill(0.0)

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i in range(self.num_experts):
            out[f"experts.{i}.A"] = self.A[i]
            out[f"experts.{i}.B"] = self.B[i]
        return out


class Router:
    """Two-layer MLP with softmax head producing a simplex over experts."""

    def __init__(self, d_in: int, num_experts: int, hidden: int = 256):
        self.d_in = d_in
        self.num_experts = num_experts
        self.hidden = hidden
        self.W1 = Tensor.zeros((hidden, d_in), requires_grad=True)
        self.b1 = Tensor.zeros((hidden,), requires_grad=True)
        self.W2 = Tensor.zeros((num_experts, hidden), requires_grad=True)
        self.b2 = Tensor.zeros((num_experts,), requires_grad=True)

    def init(self, rng: RngStream) -> None:
        self.W1.data[...] = rng.normal(0.0, np.sqrt(2.0 / self.d_in), self.W1.shape)
        self.b1.data.fill(0.0)
        self.W2.data[...] = rng.normal(0.0, np.sqrt(2.0 / self.hidden), self.W2.shape)
        self.b2.data.fill(0.0)

    def forward(self, x) -> Tensor:
        gates, _ = self.forward_cached(x)
        return Tensor(gates)

    def forward_cached(self, x) -> tuple[np.ndarray, dict]:
        xv = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
        if xv.ndim != 2 or xv.shape[1] != self.d_in:
            raise ShapeError(f"router: expected (N, {self.d_in}), got {xv.shape}")
        pre = xv @ self.W1.data.T + self.b1.data
        hid = np.maximum(pre, 0.0)
        logits = hid @ self.W2.data.T + self.b2.data
        gates = softmax(logits, axis=1).data
        return gates, {"x": xv, "pre": pre, "hid": hid, "gates": gates}

    def backward(self, cache: dict, grad_gates: np.ndarray) -> np.ndarray:
        glogits = softmax_backward(grad_gates, cache["gates"], axis=1)
        self.W2.grad += glogits.T @ cache["hid"]
        self.b2.grad += glogits.sum(axis=0)
        ghid = glogits @ self.W2.data
        gpre = relu_backward(ghid, cache["pre"])
        self.W1.grad += gpre.T @ cache["x"]
        self.b1.grad += gpre.sum(axis=0)
        return gpre @ self.W1.data

    def parameters(self) -> dict[str, Tensor]:
        return {
            "router.W1": self.W1,
            "router.b1": self.b1,
            "router.W2": self.W2,
            "router.b2": self.b2,
        }


def router_forward(router: Router, x) -> Tensor:
    return router.forward(x)


class MolreLayer:
    """Frozen base weight plus a routed bank of low-rank experts.

    `w0` never receives gradients. `expert_scale` multiplies every expert
    contribution; the default alpha/rank makes the K=1 case reproduce the
    plain adapter baseline bit for bit.
    """

    def __init__(
        self,
        w0: Tensor,
        bank: ExpertBank,
        router: Router,
        expert_scale: float | None = None,
        alpha: float = 16.0,
    ):
        if bank.num_experts != router.num_experts:
            raise ValueError(
                f"bank has {bank.num_experts} experts, router routes {router.num_experts}"
            )
        if w0.shape != (bank.d_out, bank.d_in):
            raise ShapeError(f"W0 shape {w0.shape} != ({bank.d_out}, {bank.d_in})")
        if router.d_in != bank.d_in:
            raise ShapeError("router input dim differs from expert input dim")
        self.w0 = w0  # frozen: grad buffer intentionally absent
        self.w0.grad = None
        self.bank = bank
        self.router = router
        self.expert_scale = float(
            expert_scale if expert_scale is not None else alpha / bank.rank
        )

    @classmethod
    def identity(
        cls,
        dim: int,
        num_experts: int,
        rank: int = 8,
        router_hidden: int = 256,
        expert_scale: float | None = None,
        alpha: float = 16.0,
    ) -> "MolreLayer":
        """Mixture over the identity base map — a pure feature adapter."""
        bank = ExpertBank(num_experts, dim, dim, rank)
        router = Router(dim, num_experts, router_hidden)
        return cls(Tensor(np.eye(dim)), bank, router, expert_scale, alpha)

    def init(self, rng: RngStream) -> None:
        self.bank.init(rng.child("experts"))
        self.router.init(rng.child("router"))

    def forward(self, x) -> Tensor:
        out, _ = self.forward_cached(x)
        return Tensor(out)

    def forward_cached(self, x) -> tuple[np.ndarray, dict]:
        xv = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
        if xv.ndim != 2 or xv.shape[1] != self.bank.d_in:
            raise ShapeError(f"mixture: expected (N, {self.bank.d_in}), got {xv.shape}")
        gates, rcache = self.router.forward_cached(xv)
        out = xv @ self.w0.data.T
        s = self.expert_scale
        us, vs = [], []
        for i in range(self.bank.num_experts):
            u = xv @ self.bank.A[i].data.T
            v = u @ self.bank.B[i].data.T
            out += (s * gates[:, i:i + 1]) * v
            us.append(u)
            vs.append(v)
        return out, {"x": xv, "router": rcache, "gates": gates, "u": us, "v": vs}

    def backward(self, cache: dict, grad_out: np.ndarray) -> np.ndarray:
        xv, gates = cache["x"], cache["gates"]
        s = self.expert_scale
        gx = grad_out @ self.w0.data  # frozen W0 still propagates to x
        ggates = np.empty_like(gates)
        for i in range(self.bank.num_experts):
            gv = (s * gates[:, i:i + 1]) * grad_out
            self.bank.B[i].grad += gv.T @ cache["u"][i]
            gu = gv @ self.bank.B[i].data
            self.bank.A[i].grad += gu.T @ xv
            gx += gu @ self.bank.A[i].data
            ggates[:, i] = s * (grad_out * cache["v"][i]).sum(axis=1)
        gx += self.router.backward(cache["router"], ggates)
        return gx

    def parameters(self) -> dict[str, Tensor]:
        out = dict(self.bank.parameters())
        out.update(self.router.parameters())
        return out


def molre_forward(layer: MolreLayer, x) -> Tensor:
    return layer.forward(x)


def init_adapter_params(bank: ExpertBank, router: Router, rng: RngStream) -> None:
    """Initialize a bank/router pair so the mixture starts as W0 exactly."""
    bank.init(rng.child("experts"))
    router.init(rng.child("router"))


def count_molre_params(
    d_in: int, d_out: int, num_experts: int, rank: int, router_hidden: int
) -> int:
    """Trainable parameter count of one mixture layer (experts + router)."""
    if min(d_in, d_out, num_experts, rank, router_hidden) < 1:
        raise ValueError("all dimensions must be positive")
    experts = num_experts * (rank * d_in + d_out * rank)
    router = (router_hidden * d_in + router_hidden) + (
        num_experts * router_hidden + num_experts
    )
    return experts + router
