"""Ensemble Q-functions: K value heads over a shared trunk, each with its own backup length.

Two backends share one interface:

* :class:`TabularQ` - a ``(K, n_states, n_actions)`` table indexed by one-hot
  observations.
* :class:`MLPQ` - fully-connected ReLU trunk followed by K linear heads,
  trained by hand-written backprop with SGD or Adam.

Target snapshots are frozen parameter copies with the same ``forward``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from mbdqn.envelope import EnvelopeError, read_envelope, write_envelope


class ShapeError(ValueError):
    pass


class PoisonedTargetError(ValueError):
    """A batch carried a NaN or infinite target and was rejected."""


class NotApplicableError(TypeError):
    """The requested operation has no meaning for this backend."""


@dataclass(frozen=True)
class HeadSpec:
    backup_length: int

    def __post_init__(self):
        if int(self.backup_length) < 1:
            raise ValueError(f"backup_length must be >= 1, got {self.backup_length}")


def head_specs(*backups: int) -> list[HeadSpec]:
    return [HeadSpec(int(n)) for n in backups]


class TargetSnapshot:
    """Immutable copy of an ensemble's parameters.

    Arrays are copied and flagged read-only, so nothing done to the live
    model afterwards can reach them.
    """

    def __init__(self, owner: "EnsembleQFunction", epoch: int = 0):
        self._forward = owner._forward_with
        self.obs_dim = owner.obs_dim
        self.n_actions = owner.n_actions
        self.n_heads = owner.n_heads
        self.epoch = epoch
        params = []
        for p in owner.params():
            c = p.copy()
            c.flags.writeable = False
            params.append(c)
        self.params = tuple(params)

    def forward(self, obs) -> np.ndarray:
        return self._forward(self.params, obs)

    def __eq__(self, other):
        if not isinstance(other, TargetSnapshot) or len(self.params) != len(other.params):
            return NotImplemented
        return all(np.array_equal(a, b) for a, b in zip(self.params, other.params))


class EnsembleQFunction:
    """Shared behaviour of the ensemble backends.

    ``forward`` returns ``(K, n_actions)`` for one observation and
    ``(K, B, n_actions)`` for a ``(B, obs_dim)`` batch.
    """

    kind = "base"

    def __init__(self, obs_dim: int, n_actions: int, specs: Sequence[HeadSpec]):
        if n_actions < 2:
            raise ValueError("need at least two actions")
        if len(specs) < 1:
            raise ValueError("need at least one head")
        self.obs_dim = int(obs_dim)
        self.n_actions = int(n_actions)
        self.head_specs = list(specs)

    @property
    def n_heads(self) -> int:
        return len(self.head_specs)

    def params(self) -> list[np.ndarray]:
        raise NotImplementedError

    def _forward_with(self, params, obs) -> np.ndarray:
        raise NotImplementedError

    def forward(self, obs) -> np.ndarray:
        return self._forward_with(self.params(), obs)

    def _check_obs(self, obs) -> tuple[np.ndarray, bool]:
        x = np.asarray(obs, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.obs_dim:
            raise ShapeError(f"expected observations with {self.obs_dim} components, got shape {np.shape(obs)}")
        return x, single

    def _check_batch(self, head, obs, actions, targets):
        if not 0 <= head < self.n_heads:
            raise IndexError(f"head {head} out of range for {self.n_heads} heads")
        x, _ = self._check_obs(obs)
        actions = np.asarray(actions, dtype=np.int64).reshape(-1)
        targets = np.asarray(targets, dtype=np.float64).reshape(-1)
        if len(actions) != len(x) or len(targets) != len(x):
            raise ShapeError("obs, actions and targets must have matching batch sizes")
        if not np.all(np.isfinite(targets)):
            raise PoisonedTargetError("non-finite target in batch")
        return x, actions, targets

    def head_update(self, head: int, obs, actions, targets, lr: float) -> float:
        raise NotImplementedError

    def sync_targets(self, epoch: int = 0) -> TargetSnapshot:
        return TargetSnapshot(self, epoch)

    def gradient_check(self, obs, action, target, head: int = 0, eps: float = 1e-5) -> float:
        raise NotApplicableError(f"{self.kind} backend has no gradient surface")

    def save(self, path) -> None:
        arrays = {f"p{i}": p for i, p in enumerate(self.params())}
        arrays["meta"] = np.array(
            [self.obs_dim, self.n_actions] + [s.backup_length for s in self.head_specs], dtype=np.float64
        )
        write_envelope(path, f"qfunction/{self.kind}", arrays)

    def load(self, path) -> None:
        """Load parameters saved by :meth:`save`; every shape must match this model."""
        kind, arrays = read_envelope(path)
        if kind != f"qfunction/{self.kind}":
            raise EnvelopeError(f"checkpoint holds {kind!r}, model is {self.kind!r}")
        own = self.params()
        if len(arrays) != len(own) + 1:
            raise ShapeError(f"checkpoint has {len(arrays) - 1} parameter arrays, model has {len(own)}")
        for i, p in enumerate(own):
            src = arrays[f"p{i}"]
            if src.shape != p.shape:
                raise ShapeError(f"parameter {i}: checkpoint shape {src.shape} != model shape {p.shape}")
        for i, p in enumerate(own):
            p[...] = arrays[f"p{i}"]


class TabularQ(EnsembleQFunction):
    """Lookup-table ensemble. Observations must be one-hot over ``obs_dim`` states.

    ``head_update`` moves each visited entry towards the mean target of the
    batch elements that hit it: ``Q += lr * mean(y - Q)``; with ``lr=1`` a
    single sample sets the entry exactly to its target.
    """

    kind = "tabular"

    def __init__(self, obs_dim, n_actions, specs, init_value=0.0, init_noise=0.0, rng=None):
        super().__init__(obs_dim, n_actions, specs)
        self.table = np.full((self.n_heads, self.obs_dim, self.n_actions), float(init_value))
        if init_noise > 0:
            rng = np.random.default_rng() if rng is None else rng
            self.table += rng.uniform(-init_noise, init_noise, size=self.table.shape)

    def params(self):
        return [self.table]

    def states(self, obs) -> tuple[np.ndarray, bool]:
        x, single = self._check_obs(obs)
        return np.argmax(x, axis=1), single

    def _forward_with(self, params, obs):
        s, single = self.states(obs)
        out = params[0][:, s, :]
        return out[:, 0, :] if single else out

    def head_update(self, head, obs, actions, targets, lr):
        x, actions, targets = self._check_batch(head, obs, actions, targets)
        s = np.argmax(x, axis=1)
        table = self.table[head]
        err = targets - table[s, actions]
        loss = float(np.mean(err**2))
        flat = s * self.n_actions + actions
        sums = np.bincount(flat, weights=err, minlength=table.size)
        counts = np.bincount(flat, minlength=table.size)
        hit = counts > 0
        step = table.reshape(-1)
        step[hit] += lr * sums[hit] / counts[hit]
        return loss


class MLPQ(EnsembleQFunction):
    """ReLU trunk + K linear heads, trained on per-head mean squared TD error.

    Parameter layout from :meth:`params`: ``W0, b0, ..., W_{L-1}, b_{L-1}``
    for the trunk followed by the stacked heads ``head_W (K, H, A)`` and
    ``head_b (K, A)``. ``hidden_sizes=()`` gives linear heads on the raw
    observation with no trunk.
    """

    kind = "mlp"

    def __init__(
        self,
        obs_dim,
        n_actions,
        specs,
        hidden_sizes=(64,),
        rng=None,
        optimizer="sgd",
        normalize_trunk=True,
        init_value=0.0,
        adam_betas=(0.9, 0.999),
        adam_eps=1e-8,
    ):
        super().__init__(obs_dim, n_actions, specs)
        if optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {optimizer!r}")
        rng = np.random.default_rng() if rng is None else rng
        self.hidden_sizes = tuple(int(h) for h in hidden_sizes)
        self.optimizer = optimizer
        self.normalize_trunk = normalize_trunk
        self.trunk = []
        fan_in = self.obs_dim
        for width in self.hidden_sizes:
            bound = 1.0 / np.sqrt(fan_in)
            self.trunk.append(rng.uniform(-bound, bound, size=(fan_in, width)))
            self.trunk.append(rng.uniform(-bound, bound, size=width))
            fan_in = width
        bound = 1.0 / np.sqrt(fan_in)
        self.head_W = rng.uniform(-bound, bound, size=(self.n_heads, fan_in, self.n_actions))
        # init_value shifts every head's output, e.g. to start from pessimistic estimates
        self.head_b = rng.uniform(-bound, bound, size=(self.n_heads, self.n_actions)) + float(init_value)
        self._betas = adam_betas
        self._adam_eps = adam_eps
        self._m = [np.zeros_like(p) for p in self.params()]
        self._v = [np.zeros_like(p) for p in self.params()]
        self._t_trunk = 0
        self._t_head = np.zeros(self.n_heads, dtype=np.int64)

    def params(self):
        return [*self.trunk, self.head_W, self.head_b]

    @property
    def trunk_params(self) -> list[np.ndarray]:
        return self.trunk

    def head_params(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        return self.head_W[k], self.head_b[k]

    @staticmethod
    def _features(trunk, x):
        acts = [x]
        h = x
        for i in range(0, len(trunk), 2):
            h = np.maximum(h @ trunk[i] + trunk[i + 1], 0.0)
            acts.append(h)
        return acts

    def _forward_with(self, params, obs):
        x, single = self._check_obs(obs)
        h = self._features(params[:-2], x)[-1]
        # per-head matmul keeps outputs bitwise equal to the ones head_update sees
        out = np.stack([h @ w + b for w, b in zip(params[-2], params[-1])])
        return out[:, 0, :] if single else out

    def loss_and_grads(self, head, obs, actions, targets, params=None):
        """Mean squared error of one head and its exact gradient w.r.t. every parameter.

        Gradients for other heads' slices are zero. No scaling is applied here.
        """
        x, actions, targets = self._check_batch(head, obs, actions, targets)
        params = self.params() if params is None else params
        trunk, hW, hb = params[:-2], params[-2], params[-1]
        acts = self._features(trunk, x)
        h = acts[-1]
        q = h @ hW[head] + hb[head]
        rows = np.arange(len(x))
        diff = q[rows, actions] - targets
        loss = float(np.mean(diff**2))

        dq = np.zeros_like(q)
        dq[rows, actions] = 2.0 * diff / len(x)
        g_hW = np.zeros_like(hW)
        g_hb = np.zeros_like(hb)
        g_hW[head] = h.T @ dq
        g_hb[head] = dq.sum(axis=0)

        g_trunk = [None] * len(trunk)
        dh = dq @ hW[head].T
        for i in range(len(trunk) - 2, -1, -2):
            dh = dh * (acts[i // 2 + 1] > 0)
            g_trunk[i] = acts[i // 2].T @ dh
            g_trunk[i + 1] = dh.sum(axis=0)
            dh = dh @ trunk[i].T
        return loss, [*g_trunk, g_hW, g_hb]

    def head_update(self, head, obs, actions, targets, lr):
        loss, grads = self.loss_and_grads(head, obs, actions, targets)
        scale = 1.0 / self.n_heads if self.normalize_trunk else 1.0
        n_trunk = len(self.trunk)
        params = self.params()
        if self.optimizer == "sgd":
            for p, g in zip(params[:n_trunk], grads[:n_trunk]):
                p -= lr * scale * g
            self.head_W[head] -= lr * grads[-2][head]
            self.head_b[head] -= lr * grads[-1][head]
            return loss

        self._t_trunk += 1
        self._t_head[head] += 1
        for i in range(n_trunk):
            self._adam(params[i], scale * grads[i], i, self._t_trunk, lr, (slice(None),))
        for i in (n_trunk, n_trunk + 1):
            self._adam(params[i], grads[i], i, self._t_head[head], lr, (head,))
        return loss

    def _adam(self, p, g, i, t, lr, idx):
        b1, b2 = self._betas
        m, v = self._m[i], self._v[i]
        m[idx] = b1 * m[idx] + (1 - b1) * g[idx]
        v[idx] = b2 * v[idx] + (1 - b2) * g[idx] ** 2
        m_hat = m[idx] / (1 - b1**t)
        v_hat = v[idx] / (1 - b2**t)
        p[idx] -= lr * m_hat / (np.sqrt(v_hat) + self._adam_eps)

    def gradient_check(self, obs, action, target, head=0, eps=1e-5):
        """Worst relative deviation between analytic and central-difference gradients.

        Deviation per parameter array is ``|g_a - g_n|_2 / (|g_a|_2 + |g_n|_2)``,
        defined as 0 when both gradient norms are below ``1e-10`` (round-off level).
        """
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        actions = np.atleast_1d(action)
        targets = np.atleast_1d(np.asarray(target, dtype=np.float64))
        params = [p.copy() for p in self.params()]
        _, analytic = self.loss_and_grads(head, obs, actions, targets, params=params)

        def loss_at():
            trunk, hW, hb = params[:-2], params[-2], params[-1]
            h = self._features(trunk, obs)[-1]
            q = h @ hW[head] + hb[head]
            return float(np.mean((q[np.arange(len(obs)), actions] - targets) ** 2))

        worst = 0.0
        for p, g in zip(params, analytic):
            num = np.zeros_like(p)
            flat_p = p.reshape(-1)
            flat_n = num.reshape(-1)
            for j in range(flat_p.size):
                old = flat_p[j]
                flat_p[j] = old + eps
                up = loss_at()
                flat_p[j] = old - eps
                down = loss_at()
                flat_p[j] = old
                flat_n[j] = (up - down) / (2 * eps)
            denom = np.linalg.norm(g) + np.linalg.norm(num)
            if denom > 1e-10:
                worst = max(worst, float(np.linalg.norm(g - num) / denom))
        return worst


def build_qfunction(backend: str, obs_dim: int, n_actions: int, specs, rng=None, **kwargs) -> EnsembleQFunction:
    if backend == "tabular":
        return TabularQ(obs_dim, n_actions, specs, rng=rng, **kwargs)
    if backend == "mlp":
        return MLPQ(obs_dim, n_actions, specs, rng=rng, **kwargs)
    raise ValueError(f"unknown backend {backend!r}")
