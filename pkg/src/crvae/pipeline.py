"""Two-stage training, window sampling, generation and checkpoint files.

Phase I runs SGD on every main parameter except the decoder input weights,
which take a grouped ISTA step; the compensation VAE is fit on the detached
residuals of the same batch. Phase II freezes the zero groups found in
phase I and continues with plain SGD.

Randomness is split into named streams of one seed (``init``, ``data``,
``reparam``, ``comp``) so that toggling the compensation network leaves
every draw seen by the main model untouched.
"""

from __future__ import annotations

import json
import logging
import math
import os
import struct
import tempfile
import warnings
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .datagen import Dataset
from .numcore import ContractError, DomainError, Rng
from .objective import comp_graph, crvae_graph, group_penalty
from .optim import apply_mask, ista_step
from .recnet import CAUSAL_WEIGHT, CrvaeModel, ModelSpec, causal_matrix, init_model, rollout

log = logging.getLogger(__name__)

MAGIC = b"CRVAE"
FORMAT_VERSION = 1


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid config: " + "; ".join(self.problems))


class TrainingError(RuntimeError):
    """Training diverged; ``last_good`` holds the model from the last finite epoch."""

    def __init__(self, msg, last_good=None):
        super().__init__(msg)
        self.last_good = last_good


class CheckpointError(ValueError):
    """Malformed or truncated checkpoint file."""


class CheckpointVersionError(CheckpointError):
    pass


@dataclass
class TrainConfig:
    tau: int = 10
    lam: float = 0.005
    gamma: float = 0.5
    lr: float = 0.5
    lr_comp: float = 0.1
    batch_size: int = 256
    epochs_phase1: int = 60
    epochs_phase2: int = 10
    hidden: int = 64
    latent: int | None = None
    layers: int = 2
    cell: str = "gru"
    seed: int = 0
    encoder_mode: str = "unidirectional"
    compensation: bool = True
    sparsity_range: tuple | None = None
    patience: int = 5
    generation_init: str = "projected"
    clip_grad: float | None = 0.5
    kl_weight: float | None = 1.0

    def __post_init__(self):
        if self.sparsity_range is not None:
            self.sparsity_range = tuple(float(v) for v in self.sparsity_range)
        self.validate()

    def validate(self):
        problems = []
        if not isinstance(self.tau, int) or self.tau < 1:
            problems.append("tau must be an integer >= 1")
        if not isinstance(self.batch_size, int) or self.batch_size < 1:
            problems.append("batch_size must be an integer >= 1")
        for name in ("lam", "gamma", "lr", "lr_comp"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not v > 0:
                problems.append(f"{name} must be > 0")
        for name in ("epochs_phase1", "epochs_phase2", "patience"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 0:
                problems.append(f"{name} must be a non-negative integer")
        if not isinstance(self.hidden, int) or self.hidden < 1:
            problems.append("hidden must be a positive integer")
        if not isinstance(self.layers, int) or self.layers < 1:
            problems.append("layers must be a positive integer")
        if self.cell not in ("gru", "vanilla"):
            problems.append("cell must be 'gru' or 'vanilla'")
        if self.encoder_mode not in ("unidirectional", "overlap"):
            problems.append("encoder_mode must be 'unidirectional' or 'overlap'")
        if self.generation_init not in ("projected", "direct"):
            problems.append("generation_init must be 'projected' or 'direct'")
        if self.clip_grad is not None and (not isinstance(self.clip_grad, (int, float))
                                           or not self.clip_grad > 0):
            problems.append("clip_grad must be > 0 or null")
        if self.kl_weight is not None and (not isinstance(self.kl_weight, (int, float))
                                           or not self.kl_weight > 0):
            problems.append("kl_weight must be > 0 or null")
        if self.sparsity_range is not None:
            lo, hi = self.sparsity_range
            if not 0 <= lo <= hi <= 1:
                problems.append("sparsity_range must satisfy 0 <= lo <= hi <= 1")
        if problems:
            raise ConfigError(problems)

    def kl_weight_for(self, n_series: int) -> float:
        """The KL multiplier; ``None`` means one over the (τ+1)·M averaged elements."""
        if self.kl_weight is None:
            return 1.0 / ((self.tau + 1) * n_series)
        return float(self.kl_weight)

    def model_spec(self, n_series: int) -> ModelSpec:
        return ModelSpec(n_series=n_series, tau=self.tau, hidden=self.hidden,
                         latent=self.latent, layers=self.layers, cell=self.cell)

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["sparsity_range"] is not None:
            d["sparsity_range"] = list(d["sparsity_range"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        problems = [f"unknown key {k!r}" for k in sorted(set(d) - known)]
        try:
            cfg = cls(**{k: v for k, v in d.items() if k in known})
        except ConfigError as exc:
            problems += exc.problems
        except (TypeError, ValueError) as exc:
            problems.append(str(exc))
        if problems:
            raise ConfigError(problems)
        return cfg


@dataclass
class TrainResult:
    model: CrvaeModel
    config: TrainConfig
    history: list = field(default_factory=list)
    phase: str = "init"


def sample_windows(data: np.ndarray, tau: int, batch_size: int, rng: Rng) -> np.ndarray:
    """Draw ``batch_size`` contiguous windows of 2τ+2 steps, start uniform on [0, T−2τ−2]."""
    data = np.asarray(data, dtype=float)
    T = data.shape[0]
    width = 2 * tau + 2
    if T < width:
        raise ContractError(f"series of length {T} is shorter than one window ({width})")
    starts = rng.integers(T - width + 1, batch_size)
    return data[starts[:, None] + np.arange(width)[None, :]]


def sparsity(model: CrvaeModel) -> float:
    """Fraction of candidate edges whose group is non-zero."""
    return float(np.mean(causal_matrix(model) > 0))


def clip_grads(grads: dict, max_norm: float | None) -> dict:
    """Rescale every gradient tensor whose Euclidean norm exceeds ``max_norm``."""
    if max_norm is None:
        return grads
    out = {}
    for name, g in grads.items():
        n = float(np.sqrt(np.sum(g * g)))
        out[name] = g * (max_norm / n) if n > max_norm else g
    return out


def _sgd(params, grads, names, lr):
    for name in names:
        params[name] -= lr * grads[name]


def _batch_step(model, windows, cfg, phase, streams, main, comp):
    klw = cfg.kl_weight_for(model.spec.n_series)
    g, loss, recon, kl, res = crvae_graph(model, windows, streams["reparam"], cfg.encoder_mode,
                                          kl_weight=klw)
    if not math.isfinite(loss.item()):
        raise FloatingPointError("non-finite loss")
    g.tape.backward(loss)
    grads = clip_grads(g.grads(), cfg.clip_grad)
    _sgd(model.params, grads, main, cfg.lr)
    if phase == "phase1":
        model.params[CAUSAL_WEIGHT] = ista_step(
            model.params[CAUSAL_WEIGHT], grads[CAUSAL_WEIGHT], cfg.gamma, cfg.lam)
    else:
        model.params[CAUSAL_WEIGHT] -= cfg.lr * grads[CAUSAL_WEIGHT] * model.mask[..., None]
    comp_total = 0.0
    if cfg.compensation:
        resid = res.target - res.pred.data
        cg, closs, _, _ = comp_graph(model, resid, streams["comp"], kl_weight=klw)
        cg.tape.backward(closs)
        _sgd(model.params, clip_grads(cg.grads(), cfg.clip_grad), comp, cfg.lr_comp)
        comp_total = closs.item()
    return np.array([recon.item(), kl.item(), loss.item(), comp_total])


def _train_epochs(model, data, cfg, n_epochs, phase, streams, history, start_epoch=0):
    main = [n for n in model.main_names() if n != CAUSAL_WEIGHT]
    comp = model.comp_names()
    width = 2 * cfg.tau + 2
    n_batches = max(1, math.ceil((data.shape[0] - width + 1) / cfg.batch_size))
    in_range = 0
    last_good = model.copy()
    for epoch in range(start_epoch, start_epoch + n_epochs):
        acc = np.zeros(4)
        for _ in range(n_batches):
            windows = sample_windows(data, cfg.tau, cfg.batch_size, streams["data"])
            try:
                acc += _batch_step(model, windows, cfg, phase, streams, main, comp)
            except (DomainError, FloatingPointError) as err:
                raise TrainingError(f"{err} in {phase} epoch {epoch}", last_good) from err
        acc /= n_batches
        pen = group_penalty(model)
        frac = sparsity(model)
        lam = cfg.lam if phase == "phase1" else 0.0
        history.append({"phase": phase, "epoch": epoch, "recon": acc[0], "kl": acc[1],
                        "convex": acc[2], "penalty": pen, "total": acc[2] + lam * pen,
                        "comp": acc[3], "sparsity": frac})
        log.info("%s epoch %d convex %.5f sparsity %.3f", phase, epoch, acc[2], frac)
        if not all(math.isfinite(v) for v in acc):
            raise TrainingError(f"non-finite loss in {phase} epoch {epoch}", last_good)
        last_good = model.copy()
        if phase == "phase1" and cfg.sparsity_range is not None:
            lo, hi = cfg.sparsity_range
            in_range = in_range + 1 if lo <= frac <= hi else 0
            if in_range >= cfg.patience:
                break
    return model


def make_streams(seed: int) -> dict:
    root = Rng(seed)
    return {name: root.child(name) for name in ("init", "data", "reparam", "comp")}


def train_phase1(model: CrvaeModel, data, config: TrainConfig, streams=None,
                 history=None) -> CrvaeModel:
    data = data.observations if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    streams = streams if streams is not None else make_streams(config.seed)
    history = history if history is not None else []
    return _train_epochs(model, data, config, config.epochs_phase1, "phase1", streams, history)


def freeze_and_prune(model: CrvaeModel) -> CrvaeModel:
    """Set the mask from the current non-zero groups and zero the rest."""
    model.mask = causal_matrix(model) > 0
    if not model.mask.any():
        warnings.warn("every candidate edge was pruned; the decoder ignores its inputs",
                      RuntimeWarning, stacklevel=2)
    return apply_mask(model)


def train_phase2(model: CrvaeModel, data, config: TrainConfig, streams=None,
                 history=None) -> CrvaeModel:
    data = data.observations if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    streams = streams if streams is not None else make_streams(config.seed)
    history = history if history is not None else []
    start = history[-1]["epoch"] + 1 if history else 0
    return _train_epochs(model, data, config, config.epochs_phase2, "phase2", streams,
                         history, start_epoch=start)


def train(data, config: TrainConfig) -> TrainResult:
    """Both phases from a fresh model, as in the two-stage procedure."""
    obs = data.observations if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    streams = make_streams(config.seed)
    model = init_model(config.model_spec(obs.shape[1]), streams["init"])
    result = TrainResult(model, config)
    train_phase1(model, obs, config, streams, result.history)
    result.phase = "phase1"
    freeze_and_prune(model)
    result.phase = "pruned"
    if config.epochs_phase2 > 0:
        train_phase2(model, obs, config, streams, result.history)
        result.phase = "phase2"
    return result


def generate(model: CrvaeModel, length: int, rng: Rng, compensation: bool = True,
             init: str = "projected") -> np.ndarray:
    """One synthetic series of ``length`` steps (length×M)."""
    return rollout(model, length, 1, rng, compensation=compensation, init=init)[0]


def generate_batch(model: CrvaeModel, length: int, count: int, rng: Rng,
                   compensation: bool = True, init: str = "projected") -> np.ndarray:
    """``count`` independent series, count×length×M."""
    if count < 1:
        raise ContractError("count must be at least 1")
    return rollout(model, length, count, rng, compensation=compensation, init=init)


# -- checkpoint container ---------------------------------------------------------
#
#   b"CRVAE" | u32 version | u32 n | n bytes JSON header | u32 tensor count
#   per tensor: u16 name length | name (utf-8) | u8 rank | rank × u64 extents
#               | prod(extents) × f64
#   all integers and floats little-endian


def _pack_tensor(name: str, arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    raw = name.encode("utf-8")
    head = struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + arr.tobytes()


def save_checkpoint(path, model: CrvaeModel, config: TrainConfig | None = None,
                    history=None, phase: str = "") -> None:
    """Write atomically: a temp file in the target directory, then rename."""
    spec = model.spec
    header = {"spec": asdict(spec), "config": config.to_dict() if config else None,
              "phase": phase, "history": history or []}
    body = json.dumps(header, sort_keys=True).encode("utf-8")
    tensors = dict(sorted(model.params.items()))
    tensors["mask"] = model.mask.astype(float)
    chunks = [MAGIC, struct.pack("<I", FORMAT_VERSION), struct.pack("<I", len(body)), body,
              struct.pack("<I", len(tensors))]
    chunks += [_pack_tensor(k, v) for k, v in tensors.items()]
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(b"".join(chunks))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("checkpoint is truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> TrainResult:
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a CRVAE checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint format version {version}, this reader supports {FORMAT_VERSION}")
    (n,) = r.unpack("<I")
    try:
        header = json.loads(r.take(n).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt header: {exc}") from None
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (ln,) = r.unpack("<H")
        name = r.take(ln).decode("utf-8")
        (rank,) = r.unpack("<B")
        shape = r.unpack(f"<{rank}Q")
        size = int(np.prod(shape)) if rank else 1
        tensors[name] = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(shape).astype(float)
    if r.pos != len(r.buf):
        raise CheckpointError("trailing bytes after last tensor")
    try:
        spec = ModelSpec(**header["spec"])
        mask = tensors.pop("mask") > 0.5
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"incomplete checkpoint: {exc}") from None
    model = CrvaeModel(spec, tensors, mask)
    cfg = TrainConfig.from_dict(header["config"]) if header.get("config") else None
    return TrainResult(model, cfg, header.get("history", []), header.get("phase", ""))
