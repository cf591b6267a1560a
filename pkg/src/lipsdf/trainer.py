"""Training loop, checkpoints (LNDF1 weight files) and training logs."""

from __future__ import annotations

import csv
import json
import struct
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .geometry import LabeledDataset, NormalizeTransform
from .lipnet import AdamState, AffineHead, LipNet, SllLayer, init_net
from .losses import HkrConfig, fit_loss, hkr_loss

MAGIC = b"LNDF"
VERSION = 1


class TrainingDiverged(RuntimeError):
    pass


class WeightFileError(ValueError):
    pass


@dataclass
class TrainConfig:
    depth: int = 20
    k: int = 128
    margin: float = 1e-2
    lam: float = 100.0
    loss: str = "hkr"
    epochs: int = 1000
    batch_size: int = 512  # per class in hkr mode
    lr: float = 1e-3
    seed: int = 0
    checkpoint_every: int = 0
    checkpoint_path: str | None = None

    def __post_init__(self):
        if self.loss not in ("hkr", "fit"):
            raise ValueError(f"loss must be 'hkr' or 'fit', got {self.loss!r}")
        for name in ("k", "batch_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("depth", "epochs", "checkpoint_every"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        HkrConfig(self.margin, self.lam)

    @classmethod
    def from_mapping(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        d = {("lam" if k == "lambda" else k): v for k, v in d.items()}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def load_config(path) -> dict:
    """Read a JSON or TOML config mirroring :class:`TrainConfig`."""
    path = Path(path)
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


@dataclass
class EpochRecord:
    epoch: int
    kr: float
    hinge: float
    total: float
    misclassification: float
    wall_time: float


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def to_csv(self, path, include_time: bool = False) -> None:
        names = ["epoch", "kr", "hinge", "total", "misclassification"]
        if include_time:
            names.append("wall_time")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(names)
            for r in self.records:
                wr.writerow([r.epoch] + [repr(float(getattr(r, n))) for n in names[1:]])


def _meta(cfg: TrainConfig, dataset: LabeledDataset, norm: NormalizeTransform) -> dict:
    return {"input_dim": dataset.dim, "k": cfg.k, "depth": cfg.depth, "mode": dataset.mode,
            "margin": cfg.margin, "lambda": cfg.lam, "norm": norm.to_dict(),
            "loss": cfg.loss, "padding": "input in channels [0, input_dim), zeros elsewhere"}


def train(dataset: LabeledDataset, cfg: TrainConfig, norm: NormalizeTransform | None = None,
          callback=None) -> tuple[LipNet, TrainLog]:
    """Fit a fresh network to ``dataset``; returns the net (embedding ``norm``) and the log.

    ``callback(epoch, net, record)`` runs after every epoch.
    """
    if cfg.loss == "fit" and dataset.s_true is None:
        raise ValueError("loss=fit needs ground-truth distances (s_true) in the dataset")
    norm = norm or NormalizeTransform.identity(dataset.dim)
    net = init_net(dataset.dim, cfg.k, cfg.depth, cfg.seed, norm, _meta(cfg, dataset, norm))
    hkr = HkrConfig(cfg.margin, cfg.lam)
    opt = AdamState(lr=cfg.lr)
    rng = np.random.default_rng([cfg.seed, 1])
    log = TrainLog()
    neg = np.flatnonzero(dataset.y < 0)
    pos = np.flatnonzero(dataset.y > 0)
    if cfg.loss == "hkr" and (len(neg) == 0 or len(pos) == 0):
        raise ValueError("hkr training needs both labels in the dataset")
    params = net.params()
    t0 = time.perf_counter()

    for epoch in range(1, cfg.epochs + 1):
        if cfg.loss == "hkr":
            pn, pp = rng.permutation(neg), rng.permutation(pos)
            n_per = min(len(pn), len(pp))
            bs = cfg.batch_size
            batches = [np.concatenate([pn[s:s + bs], pp[s:s + bs]]) for s in range(0, n_per, bs)]
        else:
            perm = rng.permutation(len(dataset))
            bs = 2 * cfg.batch_size
            batches = [perm[s:s + bs] for s in range(0, len(perm), bs)]

        sums = np.zeros(3)
        wrong = seen = 0
        for bi, idx in enumerate(batches):
            X, y = dataset.X[idx], dataset.y[idx]
            f, tape = net.forward_tape(X)
            rep = hkr_loss(f, y, hkr)
            if cfg.loss == "fit":
                total, grad = fit_loss(f, dataset.s_true[idx])
            else:
                total, grad = rep.total, rep.grad
            if not np.isfinite(total) or not np.all(np.isfinite(grad)):
                norms = [float(np.linalg.norm(p)) for p in params]
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch {bi}; parameter norms {norms}")
            _, grads = net.backward(tape, grad)
            with np.errstate(over="ignore", invalid="ignore"):
                opt.step(params, grads)
            if not all(np.all(np.isfinite(p)) for p in params):
                norms = [float(np.linalg.norm(p)) for p in params]
                raise TrainingDiverged(
                    f"non-finite parameters after epoch {epoch}, batch {bi}; parameter norms {norms}")
            net.bump_version()
            sums += len(idx) * np.array([rep.kr, rep.hinge, total])
            wrong += int(np.sum(y * f < 0))
            seen += len(idx)
        kr, hinge, total = sums / max(seen, 1)
        rec = EpochRecord(epoch, kr, hinge, total, wrong / max(seen, 1), time.perf_counter() - t0)
        log.records.append(rec)
        if callback is not None:
            callback(epoch, net, rec)
        if cfg.checkpoint_every and cfg.checkpoint_path and epoch % cfg.checkpoint_every == 0:
            checkpoint(net, cfg.checkpoint_path)
    return net, log


# ---------------------------------------------------------------------------
# LNDF1 weight files


def _payload_size(k: int, depth: int) -> int:
    return depth * (k * k + 2 * k) + k + 1


def to_bytes(net: LipNet) -> bytes:
    meta = dict(net.meta)
    meta.update({"input_dim": net.input_dim, "k": net.k, "depth": net.depth,
                 "norm": net.norm.to_dict()})
    meta.setdefault("mode", "signed")
    meta.setdefault("margin", HkrConfig().margin)
    meta.setdefault("lambda", HkrConfig().lam)
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = []
    for layer in net.layers:
        parts += [layer.W.ravel(), layer.b, layer.q]
    parts += [net.head.w, net.head.b]
    payload = np.concatenate(parts).astype("<f8").tobytes()
    return MAGIC + struct.pack("<I", VERSION) + struct.pack("<Q", len(blob)) + blob + payload


def from_bytes(data: bytes) -> LipNet:
    if len(data) < 16 or data[:4] != MAGIC:
        raise WeightFileError("not an LNDF weight file (bad magic)")
    (version,) = struct.unpack("<I", data[4:8])
    if version != VERSION:
        raise WeightFileError(f"unsupported LNDF version {version}")
    (n_json,) = struct.unpack("<Q", data[8:16])
    if 16 + n_json > len(data):
        raise WeightFileError("truncated metadata")
    try:
        meta = json.loads(data[16:16 + n_json].decode("utf-8"))
        k, depth, n = int(meta["k"]), int(meta["depth"]), int(meta["input_dim"])
        norm = NormalizeTransform.from_dict(meta["norm"])
    except (ValueError, KeyError, TypeError) as exc:
        raise WeightFileError(f"bad metadata: {exc}") from None
    payload = data[16 + n_json:]
    expected = _payload_size(k, depth) * 8
    if len(payload) != expected:
        raise WeightFileError(
            f"payload has {len(payload)} bytes, metadata (k={k}, depth={depth}) implies {expected}")
    theta = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    layers, i = [], 0
    for _ in range(depth):
        W = theta[i:i + k * k].reshape(k, k)
        i += k * k
        b, q = theta[i:i + k], theta[i + k:i + 2 * k]
        i += 2 * k
        layers.append(SllLayer(W, b, q))
    head = AffineHead(theta[i:i + k], theta[i + k])
    return LipNet(n, layers, head, norm, meta)


def checkpoint(net: LipNet, path) -> None:
    Path(path).write_bytes(to_bytes(net))


def restore(path) -> LipNet:
    return from_bytes(Path(path).read_bytes())


__all__ = ["TrainConfig", "TrainLog", "EpochRecord", "TrainingDiverged", "WeightFileError",
           "train", "checkpoint", "restore", "load_config", "to_bytes", "from_bytes"]
