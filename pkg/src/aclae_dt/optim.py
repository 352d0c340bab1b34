"""First-order optimizers operating in place on tensor parameters."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor

OPTIMIZERS = ("Adam", "RMSProp", "AdaDelta", "SGD")

DEFAULT_LR = {"Adam": 1e-3, "RMSProp": 1e-3, "AdaDelta": 1.0, "SGD": 1e-2}

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
RMSPROP_RHO = 0.9
RMSPROP_EPS = 1e-8
ADADELTA_RHO = 0.95
ADADELTA_EPS = 1e-6


class NonFiniteGradient(FloatingPointError):
    pass


class Optimizer:
    """Holds per-parameter state for one of the supported update rules.

    ``AdaDelta`` multiplies its unit-free update by ``lr``, so ``lr=1`` is
    the original rule.
    """

    def __init__(self, kind: str, params: list[Tensor], lr: float | None = None):
        if kind not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {kind!r}; expected one of {OPTIMIZERS}")
        self.kind = kind
        self.params = list(params)
        self.lr = DEFAULT_LR[kind] if lr is None else float(lr)
        self.t = 0
        self.state = [dict() for _ in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def grads(self) -> list[np.ndarray]:
        return [np.zeros_like(p.data) if p.grad is None else p.grad for p in self.params]

    def clip_grad_norm(self, max_norm: float) -> float:
        """Rescale all gradients so their joint L2 norm is at most ``max_norm``."""
        total = float(np.sqrt(sum(float((g * g).sum()) for g in self.grads())))
        if not np.isfinite(total):
            raise NonFiniteGradient("gradient norm is not finite")
        if total > max_norm:
            scale = max_norm / total
            for p in self.params:
                if p.grad is not None:
                    p.grad = p.grad * scale
        return total

    def step(self) -> None:
        self.t += 1
        for idx, (p, st) in enumerate(zip(self.params, self.state)):
            if p.grad is None:
                continue
            g = p.grad
            if not np.isfinite(g).all():
                raise NonFiniteGradient(f"non-finite gradient in parameter #{idx} shape {p.shape}")
            p.data = p.data - self._update(g, st)

    def _update(self, g: np.ndarray, st: dict) -> np.ndarray:
        lr = self.lr
        if self.kind == "SGD":
            return lr * g
        if self.kind == "Adam":
            b1, b2 = ADAM_BETAS
            m = st["m"] = b1 * st.get("m", 0.0) + (1 - b1) * g
            v = st["v"] = b2 * st.get("v", 0.0) + (1 - b2) * g * g
            m_hat = m / (1 - b1 ** self.t)
            v_hat = v / (1 - b2 ** self.t)
            return lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        if self.kind == "RMSProp":
            v = st["v"] = RMSPROP_RHO * st.get("v", 0.0) + (1 - RMSPROP_RHO) * g * g
            return lr * g / (np.sqrt(v) + RMSPROP_EPS)
        # AdaDelta
        rho, eps = ADADELTA_RHO, ADADELTA_EPS
        eg = st["eg"] = rho * st.get("eg", 0.0) + (1 - rho) * g * g
        ex = st.get("ex", 0.0)
        dx = np.sqrt(ex + eps) / np.sqrt(eg + eps) * g
        st["ex"] = rho * ex + (1 - rho) * dx * dx
        return lr * dx

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Flat view of optimizer state for checkpointing."""
        out = {}
        for idx, st in enumerate(self.state):
            for key, val in sorted(st.items()):
                out[f"{idx}.{key}"] = np.asarray(val, dtype=np.float64)
        return out

    def load_state_arrays(self, arrays: dict, t: int) -> None:
        self.t = t
        self.state = [dict() for _ in self.params]
        for name, val in arrays.items():
            idx, key = name.split(".", 1)
            self.state[int(idx)][key] = np.array(val, dtype=np.float64)


def optimizer_step(kind: str, params: list[Tensor], lr: float | None = None,
                   optimizer: Optimizer | None = None) -> Optimizer:
    """Apply one update to ``params`` using their populated ``.grad``; returns the optimizer."""
    opt = optimizer or Optimizer(kind, params, lr)
    opt.step()
    return opt
