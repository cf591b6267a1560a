"""1-Lipschitz network built from SLL residual layers and a unit-norm affine head.

Every stage is 1-Lipschitz for any finite parameter values, so the network is
1-Lipschitz by construction (in normalized coordinates). Gradients are derived
by hand for this architecture only; there is no general autodiff here.

Row-wise products go through :func:`rowwise_matmul`, which evaluates fixed-size
padded blocks. With a fixed GEMM shape the BLAS accumulation order per output
element does not depend on the other rows, so evaluating a batch gives exactly
the same bits as evaluating its points one at a time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import NormalizeTransform

BLOCK_ROWS = 256


class ValidationError(ValueError):
    """Raised for invalid parameters or shapes."""


class StaleCacheError(RuntimeError):
    """Raised when a backward pass receives a cache from a different forward pass."""


def rowwise_matmul(X: np.ndarray, M: np.ndarray) -> np.ndarray:
    """``X @ M`` evaluated in padded blocks of ``BLOCK_ROWS`` rows."""
    n = X.shape[0]
    out = np.empty((n, M.shape[1]))
    for start in range(0, n, BLOCK_ROWS):
        blk = X[start:start + BLOCK_ROWS]
        if blk.shape[0] < BLOCK_ROWS:
            pad = np.zeros((BLOCK_ROWS, X.shape[1]))
            pad[:blk.shape[0]] = blk
            out[start:start + blk.shape[0]] = (pad @ M)[:blk.shape[0]]
        else:
            out[start:start + BLOCK_ROWS] = blk @ M
    return out


def _check_finite(name: str, a: np.ndarray) -> None:
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{name} contains non-finite values")


@dataclass
class TapeCache:
    """Intermediates of one SLL forward pass, needed by the backward pass."""

    layer_id: int
    version: int
    X: np.ndarray
    Z: np.ndarray  # pre-activations X W + b
    U: np.ndarray  # T^-1 relu(Z)
    t: np.ndarray  # diagonal of T
    inv_t: np.ndarray


class SllLayer:
    """Residual layer ``x -> x - 2 W T^-1 relu(W^T x + b)``.

    ``T`` is diagonal with ``T_ii = sum_j |(W^T W)_ij exp(q_j - q_i)|``. A
    channel with ``T_ii == 0`` (zero column of ``W``) contributes nothing.
    """

    def __init__(self, W, b, q):
        self.W = np.array(W, dtype=np.float64)
        self.b = np.array(b, dtype=np.float64)
        self.q = np.array(q, dtype=np.float64)
        k = self.W.shape[0]
        if self.W.ndim != 2 or self.W.shape != (k, k) or k < 1:
            raise ValidationError(f"W must be square, got shape {self.W.shape}")
        if self.b.shape != (k,) or self.q.shape != (k,):
            raise ValidationError(
                f"b and q must have shape ({k},), got {self.b.shape} and {self.q.shape}")
        for name, a in (("W", self.W), ("b", self.b), ("q", self.q)):
            _check_finite(name, a)
        self.version = 0

    @property
    def k(self) -> int:
        return self.W.shape[0]

    def params(self) -> list[np.ndarray]:
        return [self.W, self.b, self.q]

    def scaling_diag(self) -> np.ndarray:
        G = self.W.T @ self.W
        E = np.exp(self.q[None, :] - self.q[:, None])
        t = np.abs(G * E).sum(axis=1)
        _check_finite("T", t)
        return t

    def forward(self, X: np.ndarray, keep: bool = False):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.k:
            raise ValidationError(f"expected input of shape (m, {self.k}), got {X.shape}")
        t = self.scaling_diag()
        inv_t = np.divide(1.0, t, out=np.zeros_like(t), where=t > 0)
        Z = rowwise_matmul(X, self.W) + self.b
        U = np.maximum(Z, 0.0) * inv_t
        Y = X - 2.0 * rowwise_matmul(U, self.W.T)
        if not keep:
            return Y
        return Y, TapeCache(id(self), self.version, X, Z, U, t, inv_t)

    def backward(self, cache: TapeCache, dY: np.ndarray):
        """Return ``(dX, dW, db, dq)`` for output cotangent ``dY``.

        Parameter gradients are summed over the batch. The dependence of T on
        W and q is included; subgradients of |.| and relu at 0 are 0.
        """
        if cache.layer_id != id(self) or cache.version != self.version:
            raise StaleCacheError("cache was produced by another layer or older parameters")
        dY = np.asarray(dY, dtype=np.float64)
        if dY.shape != cache.X.shape:
            raise StaleCacheError(f"dY shape {dY.shape} does not match cached batch {cache.X.shape}")
        W, q = self.W, self.q
        dU = -2.0 * rowwise_matmul(dY, W)
        S = np.maximum(cache.Z, 0.0)
        dZ = dU * cache.inv_t * (cache.Z > 0)
        dX = dY + rowwise_matmul(dZ, W.T)
        db = dZ.sum(axis=0)
        dW = cache.X.T @ dZ - 2.0 * (dY.T @ cache.U)

        # T path: U = S / t
        dt = -(dU * S).sum(axis=0) * cache.inv_t ** 2
        G = W.T @ W
        E = np.exp(q[None, :] - q[:, None])
        M = dt[:, None] * np.abs(G) * E
        dG = dt[:, None] * np.sign(G) * E
        dW += W @ (dG + dG.T)
        dq = M.sum(axis=0) - M.sum(axis=1)
        return dX, dW, db, dq


class AffineHead:
    """Unit-norm affine readout ``x -> w.x / ||w|| + b``."""

    def __init__(self, w, b=0.0):
        self.w = np.array(w, dtype=np.float64).reshape(-1)
        self.b = np.array(b, dtype=np.float64).reshape(1)
        _check_finite("head w", self.w)
        _check_finite("head b", self.b)
        if not np.linalg.norm(self.w) > 0:
            raise ValidationError("head weight vector must be nonzero")

    def params(self) -> list[np.ndarray]:
        return [self.w, self.b]

    def unit(self) -> np.ndarray:
        nrm = np.linalg.norm(self.w)
        if not nrm > 0:
            raise ValidationError("head weight vector must be nonzero")
        return self.w / nrm

    def forward(self, X: np.ndarray) -> np.ndarray:
        return rowwise_matmul(np.asarray(X, dtype=np.float64), self.unit()[:, None])[:, 0] + self.b[0]

    def backward(self, X: np.ndarray, df: np.ndarray):
        """Return ``(dX, dw, db)`` for per-row output cotangents ``df``."""
        nrm = np.linalg.norm(self.w)
        u = self.w / nrm
        dX = df[:, None] * u[None, :]
        proj = rowwise_matmul(X, u[:, None])[:, 0]
        dw = (df @ X - (df @ proj) * u) / nrm
        return dX, dw, np.array([df.sum()])


def sll_forward(layer: SllLayer, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return layer.forward(x.reshape(1, -1))[0] if x.ndim == 1 else layer.forward(x)


def head_forward(head: AffineHead, x) -> float:
    return float(head.forward(np.asarray(x, dtype=np.float64).reshape(1, -1))[0])


@dataclass
class NetTape:
    Z0: np.ndarray
    caches: list
    H: np.ndarray  # input of the head


class LipNet:
    """``head . layers . zero-pad . normalize``; the input fills the first n channels."""

    def __init__(self, input_dim: int, layers: list[SllLayer], head: AffineHead,
                 norm: NormalizeTransform | None = None, meta: dict | None = None):
        if input_dim not in (2, 3):
            raise ValidationError(f"input_dim must be 2 or 3, got {input_dim}")
        k = head.w.shape[0]
        if k < input_dim:
            raise ValidationError(f"width k={k} smaller than input_dim={input_dim}")
        for i, layer in enumerate(layers):
            if layer.k != k:
                raise ValidationError(f"layer {i} has width {layer.k}, expected {k}")
        self.input_dim = input_dim
        self.layers = list(layers)
        self.head = head
        self.norm = norm if norm is not None else NormalizeTransform.identity(input_dim)
        if self.norm.dim != input_dim:
            raise ValidationError("normalization dimension does not match input_dim")
        self.meta = dict(meta or {})

    @property
    def k(self) -> int:
        return self.head.w.shape[0]

    @property
    def depth(self) -> int:
        return len(self.layers)

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        out.extend(self.head.params())
        return out

    def bump_version(self) -> None:
        for layer in self.layers:
            layer.version += 1

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])

    def set_flat(self, theta: np.ndarray) -> None:
        i = 0
        for p in self.params():
            p[...] = theta[i:i + p.size].reshape(p.shape)
            i += p.size
        self.bump_version()

    def _pad(self, Z: np.ndarray) -> np.ndarray:
        Z = np.asarray(Z, dtype=np.float64)
        if Z.ndim != 2 or Z.shape[1] != self.input_dim:
            raise ValidationError(f"expected points of shape (m, {self.input_dim}), got {Z.shape}")
        H = np.zeros((Z.shape[0], self.k))
        H[:, :self.input_dim] = Z
        return H

    # Normalized-space evaluation (the training domain D)

    def forward_normalized(self, Z: np.ndarray) -> np.ndarray:
        H = self._pad(Z)
        for layer in self.layers:
            H = layer.forward(H)
        return self.head.forward(H)

    def forward_tape(self, Z: np.ndarray):
        H = self._pad(Z)
        caches = []
        for layer in self.layers:
            H, c = layer.forward(H, keep=True)
            caches.append(c)
        return self.head.forward(H), NetTape(np.asarray(Z, dtype=np.float64), caches, H)

    def backward(self, tape: NetTape, df: np.ndarray):
        """Backpropagate per-point cotangents ``df``.

        Returns ``(dZ, grads)``: input gradients in normalized coordinates (one
        row per point) and parameter gradients summed over the batch, ordered
        like :meth:`params`.
        """
        df = np.asarray(df, dtype=np.float64).reshape(-1)
        if df.shape[0] != tape.H.shape[0]:
            raise StaleCacheError("df length does not match the taped batch")
        dH, dw, dbh = self.head.backward(tape.H, df)
        layer_grads = []
        for layer, cache in zip(reversed(self.layers), reversed(tape.caches)):
            dH, dW, db, dq = layer.backward(cache, dH)
            layer_grads.append((dW, db, dq))
        grads = []
        for g in reversed(layer_grads):
            grads.extend(g)
        grads.extend([dw, dbh])
        return dH[:, :self.input_dim], grads

    def grad_normalized(self, Z: np.ndarray) -> np.ndarray:
        f, tape = self.forward_tape(Z)
        dZ, _ = self.backward(tape, np.ones_like(f))
        return dZ

    # Raw-coordinate evaluation

    def __call__(self, X) -> np.ndarray:
        return self.value(X)

    def value(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        out = self.forward_normalized(self.norm.apply(np.atleast_2d(X)))
        return out[0] if single else out

    def grad(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        g = self.grad_normalized(self.norm.apply(np.atleast_2d(X))) * self.norm.scale
        return g[0] if single else g


def net_eval(net: LipNet, x) -> np.ndarray:
    return net.value(x)


def net_grad_input(net: LipNet, x) -> np.ndarray:
    return net.grad(x)


def net_backward_params(net: LipNet, tape: NetTape, df) -> list[np.ndarray]:
    return net.backward(tape, df)[1]


def init_net(input_dim: int, k: int = 128, depth: int = 20, seed: int = 0,
             norm: NormalizeTransform | None = None, meta: dict | None = None) -> LipNet:
    """Random network: W ~ U[-sqrt(1/k), sqrt(1/k)], b = q = 0, head w ~ N(0, 1), head b = 0."""
    if k < input_dim:
        raise ValidationError(f"k={k} must be at least input_dim={input_dim}")
    if depth < 0:
        raise ValidationError("depth must be non-negative")
    rng = np.random.default_rng(seed)
    a = np.sqrt(1.0 / k)
    layers = [SllLayer(rng.uniform(-a, a, size=(k, k)), np.zeros(k), np.zeros(k))
              for _ in range(depth)]
    w = rng.standard_normal(k)
    while not np.linalg.norm(w) > 0:
        w = rng.standard_normal(k)
    return LipNet(input_dim, layers, AffineHead(w, 0.0), norm=norm, meta=meta)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        """In-place bias-corrected Adam update of ``params``."""
        if len(params) != len(grads):
            raise ValidationError("params and grads have different lengths")
        for p, g in zip(params, grads):
            if p.shape != np.shape(g):
                raise ValidationError(f"gradient shape {np.shape(g)} does not match {p.shape}")
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(state: AdamState, params, grads) -> None:
    state.step(params, grads)
