"""Multi-head recurrent VAE with a Granger-structured decoder.

Parameters live in one flat ``dict[str, ndarray]`` so optimizers and
checkpoints can walk them by name. Input weight matrices are stored as
``(in, gates·H)`` so that a step is ``x @ W``; decoder heads carry a leading
head axis, e.g. ``dec.l0.w_in`` has shape ``(M, M, gates·H)`` and row ``v`` of
head ``p`` is the group of weights through which series ``v`` enters head
``p``. That group's Euclidean norm is the causal score of edge v → p.

Naming::

    enc.l{k}.{w_in,w_h,b_in,b_h}        encoder cell, layer k
    enc.{w_mu,b_mu,w_sigma,b_sigma}     posterior projections
    dec.{w_re,b_re}                     latent → initial state, shared by heads
    dec.l{k}.{w_in,w_h,b_in,b_h}        all heads, stacked on axis 0
    dec.{w_out,b_out}                   (M, H, 1), (M, 1, 1)
    comp.enc.*, comp.dec.*              compensation VAE (single M-output decoder)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .numcore import ContractError, Rng, Tape, Tensor

CELL_GATES = {"gru": 3, "vanilla": 1}
MAIN_PREFIXES = ("enc.", "dec.")
COMP_PREFIX = "comp."
CAUSAL_WEIGHT = "dec.l0.w_in"


@dataclass
class ModelSpec:
    n_series: int
    tau: int = 10
    hidden: int = 64
    latent: int | None = None
    layers: int = 2
    cell: str = "gru"

    def __post_init__(self):
        if self.latent is None:
            self.latent = self.hidden
        if self.cell not in CELL_GATES:
            raise ContractError(f"unknown cell kind {self.cell!r}")
        if self.n_series < 1 or self.tau < 1 or self.hidden < 1 or self.layers < 1:
            raise ContractError("n_series, tau, hidden and layers must be positive")

    @property
    def gates(self) -> int:
        return CELL_GATES[self.cell]


@dataclass
class CrvaeModel:
    spec: ModelSpec
    params: dict
    mask: np.ndarray = None

    def __post_init__(self):
        M = self.spec.n_series
        if self.mask is None:
            self.mask = np.ones((M, M), dtype=bool)

    def copy(self) -> "CrvaeModel":
        return CrvaeModel(self.spec, {k: v.copy() for k, v in self.params.items()},
                          self.mask.copy())

    def main_names(self) -> list:
        return [k for k in self.params if k.startswith(MAIN_PREFIXES)]

    def comp_names(self) -> list:
        return [k for k in self.params if k.startswith(COMP_PREFIX)]


def _cell_shapes(prefix, n_in, spec, heads=None):
    G, H = spec.gates, spec.hidden
    lead = () if heads is None else (heads,)
    shapes = {}
    for k in range(spec.layers):
        width = n_in if k == 0 else H
        shapes[f"{prefix}.l{k}.w_in"] = lead + (width, G * H)
        shapes[f"{prefix}.l{k}.w_h"] = lead + (H, G * H)
        shapes[f"{prefix}.l{k}.b_in"] = lead + (1, G * H)
        shapes[f"{prefix}.l{k}.b_h"] = lead + (1, G * H)
    return shapes


def param_shapes(spec: ModelSpec) -> dict:
    M, H, Z = spec.n_series, spec.hidden, spec.latent
    shapes = {}
    for root in ("", "comp."):
        shapes.update(_cell_shapes(f"{root}enc", M, spec))
        shapes[f"{root}enc.w_mu"] = (H, Z)
        shapes[f"{root}enc.b_mu"] = (Z,)
        shapes[f"{root}enc.w_sigma"] = (H, Z)
        shapes[f"{root}enc.b_sigma"] = (Z,)
        shapes[f"{root}dec.w_re"] = (Z, H)
        shapes[f"{root}dec.b_re"] = (H,)
    shapes.update(_cell_shapes("dec", M, spec, heads=M))
    shapes["dec.w_out"] = (M, H, 1)
    shapes["dec.b_out"] = (M, 1, 1)
    shapes.update(_cell_shapes("comp.dec", M, spec))
    shapes["comp.dec.w_out"] = (H, M)
    shapes["comp.dec.b_out"] = (M,)
    return shapes


def init_model(spec: ModelSpec, rng: Rng) -> CrvaeModel:
    """Uniform in [−1/√H, 1/√H] for every tensor."""
    bound = 1.0 / np.sqrt(spec.hidden)
    params = {}
    for name, shape in param_shapes(spec).items():
        params[name] = (2.0 * rng.uniform(shape) - 1.0) * bound
    return CrvaeModel(spec, params)


def zero_model(spec: ModelSpec) -> CrvaeModel:
    return CrvaeModel(spec, {k: np.zeros(s) for k, s in param_shapes(spec).items()})


class Graph:
    """Binds a model's parameters to a tape for one forward pass.

    Without a tape every parameter is a constant and no graph is recorded.
    """

    def __init__(self, model: CrvaeModel, tape: Tape | None = None, names=None):
        self.model = model
        self.tape = tape
        self.leaves = {}
        if tape is not None:
            for name in (names if names is not None else model.params):
                self.leaves[name] = tape.leaf(model.params[name], name)

    def __getitem__(self, name) -> Tensor:
        t = self.leaves.get(name)
        return t if t is not None else Tensor(self.model.params[name])

    def grads(self) -> dict:
        return {name: self.tape.grad(t) for name, t in self.leaves.items()}


def _step(spec, g, prefix, x, states):
    """Advance every layer of a stacked cell by one step; returns new states."""
    cell = nc.gru_cell if spec.cell == "gru" else nc.rnn_cell
    new = []
    inp = x
    for k in range(spec.layers):
        p = f"{prefix}.l{k}"
        h = cell(inp, states[k], g[f"{p}.w_in"], g[f"{p}.w_h"], g[f"{p}.b_in"], g[f"{p}.b_h"])
        new.append(h)
        inp = h
    return new


def _run_encoder(spec, g, prefix, segment):
    seg = nc.as_tensor(segment)
    B, L, _ = seg.shape
    states = [Tensor(np.zeros((B, spec.hidden)))] * spec.layers
    for t in range(L):
        states = _step(spec, g, prefix, seg[:, t, :], states)
    h = states[-1]
    mu = h @ g[f"{prefix}.w_mu"] + g[f"{prefix}.b_mu"]
    log_sigma = h @ g[f"{prefix}.w_sigma"] + g[f"{prefix}.b_sigma"]
    return mu, log_sigma


def _batched(x, ndim):
    x = np.asarray(x, dtype=float) if not isinstance(x, Tensor) else x
    shape = x.shape
    if len(shape) == ndim - 1:
        return (x.data if isinstance(x, Tensor) else x)[None], True
    if len(shape) != ndim:
        raise ContractError(f"expected {ndim - 1}- or {ndim}-d input, got shape {shape}")
    return (x.data if isinstance(x, Tensor) else x), False


def encode(model: CrvaeModel, x_past, graph: Graph | None = None, expected_len=None):
    """Run the encoder over ``x_past`` ((τ+1)×M, or batched B×(τ+1)×M).

    Returns ``(mu, log_sigma)`` as arrays, or Tensors when ``graph`` is given.
    """
    spec = model.spec
    want = spec.tau + 1 if expected_len is None else expected_len
    arr, single = _batched(x_past, 3)
    if arr.shape[1] != want or arr.shape[2] != spec.n_series:
        raise ContractError(f"encoder segment must be {want}×{spec.n_series}, got {arr.shape[1:]}")
    g = graph if graph is not None else Graph(model)
    mu, log_sigma = _run_encoder(spec, g, "enc", arr)
    if graph is not None:
        return mu, log_sigma
    if single:
        return mu.data[0], log_sigma.data[0]
    return mu.data, log_sigma.data


def _initial_state(g, prefix, z):
    return nc.tanh(nc.as_tensor(z) @ g[f"{prefix}.w_re"] + g[f"{prefix}.b_re"])


def _decode_heads(spec, g, s0, teacher):
    """Teacher-forced multi-head rollout. ``teacher``: B×L×M; returns B×L×M."""
    B, L, M = teacher.shape
    # every head starts from the same state; (1, B, H) broadcasts over heads
    states = [nc.reshape(s0, (1, B, spec.hidden))] * spec.layers
    outs = []
    for t in range(L):
        x = Tensor(teacher[None, :, t, :])
        states = _step(spec, g, "dec", x, states)
        y = states[-1] @ g["dec.w_out"] + g["dec.b_out"]       # (M, B, 1)
        outs.append(y)
    y = nc.stack(outs, axis=0)                                  # (L, M, B, 1)
    y = nc.reshape(y, (L, M, B))
    return _transpose_lmb(y)


def _transpose_lmb(y):
    # (L, M, B) -> (B, L, M)
    L, M, B = y.shape
    out = np.transpose(y.data, (2, 0, 1))
    return nc._record("transpose", out, (y,), lambda gr: (np.transpose(gr, (1, 2, 0)),))


def decode(model: CrvaeModel, z, x_teacher, graph: Graph | None = None):
    """Teacher-forced decoder pass.

    ``x_teacher`` is x_{t−τ−1:t−1} with its first row already zeroed; shape
    (τ+1)×M or B×(τ+1)×M. ``z`` is the latent sample (H_z, or B×H_z).
    """
    spec = model.spec
    teacher, single = _batched(x_teacher, 3)
    zarr = z if isinstance(z, Tensor) else np.asarray(z, dtype=float)
    if zarr.shape[-1] != spec.latent:
        raise ContractError(f"latent must have width {spec.latent}, got {zarr.shape[-1]}")
    if single and not isinstance(zarr, Tensor):
        zarr = zarr.reshape(1, -1)
    if teacher.shape[2] != spec.n_series:
        raise ContractError(f"teacher input must have {spec.n_series} series")
    g = graph if graph is not None else Graph(model)
    s0 = _initial_state(g, "dec", zarr)
    y = _decode_heads(spec, g, s0, teacher)
    if graph is not None:
        return y
    return y.data[0] if single else y.data


def split_window(window: np.ndarray, tau: int, encoder_mode: str = "unidirectional"):
    """Cut B×(2τ+2)×M windows into (encoder input, teacher input, target).

    The encoder reads the first τ+1 points; in ``overlap`` mode it reads
    x_{t−τ:t−1} instead, the same steps the decoder is fed.
    """
    w = np.asarray(window, dtype=float)
    if w.ndim == 2:
        w = w[None]
    if w.shape[1] != 2 * tau + 2:
        raise ContractError(f"window length must be 2τ+2 = {2 * tau + 2}, got {w.shape[1]}")
    target = w[:, tau + 1:]
    teacher = np.concatenate([np.zeros_like(w[:, :1]), w[:, tau + 1:2 * tau + 1]], axis=1)
    if encoder_mode == "unidirectional":
        enc_in = w[:, :tau + 1]
    elif encoder_mode == "overlap":
        enc_in = w[:, tau + 1:2 * tau + 1]
    else:
        raise ContractError(f"unknown encoder mode {encoder_mode!r}")
    return enc_in, teacher, target


@dataclass
class ForwardResult:
    pred: object
    mu: object
    log_sigma: object
    z: object
    target: np.ndarray = field(repr=False, default=None)


def forward(model: CrvaeModel, window, rng: Rng | None = None, graph: Graph | None = None,
            encoder_mode: str = "unidirectional", deterministic: bool = False) -> ForwardResult:
    """Encode, reparameterize (z = μ + σ ⊙ ε) and decode a batch of windows.

    ``deterministic`` forces ε = 0. Otherwise ε is drawn from ``rng``.
    """
    spec = model.spec
    w = np.asarray(window, dtype=float)
    single = w.ndim == 2
    if w.ndim not in (2, 3) or w.shape[-2] < 2 * spec.tau + 2:
        raise ContractError(f"window must hold 2τ+2 = {2 * spec.tau + 2} observations")
    enc_in, teacher, target = split_window(w, spec.tau, encoder_mode)
    g = graph if graph is not None else Graph(model)
    mu, log_sigma = encode(model, enc_in, graph=g, expected_len=enc_in.shape[1])
    if deterministic:
        z = mu
    else:
        if rng is None:
            raise ContractError("forward needs an Rng unless deterministic=True")
        eps = rng.normal(mu.shape)
        z = mu + nc.exp(log_sigma) * eps
    pred = decode(model, z, teacher, graph=g)
    if graph is None:
        if single:
            return ForwardResult(pred.data[0] if isinstance(pred, Tensor) else pred[0],
                                 mu.data[0], log_sigma.data[0], z.data[0], target[0])
        return ForwardResult(pred if not isinstance(pred, Tensor) else pred.data,
                             mu.data, log_sigma.data, z.data, target)
    return ForwardResult(pred, mu, log_sigma, z, target)


def _comp_decode_teacher(spec, g, s0, teacher):
    B, L, M = teacher.shape
    states = [s0] * spec.layers
    outs = []
    for t in range(L):
        states = _step(spec, g, "comp.dec", Tensor(teacher[:, t, :]), states)
        outs.append(states[-1] @ g["comp.dec.w_out"] + g["comp.dec.b_out"])
    y = nc.stack(outs, axis=1)                                     # (B, L, M)
    return y


def comp_forward(model: CrvaeModel, eps_segment, rng: Rng | None = None,
                 graph: Graph | None = None, deterministic: bool = False):
    """Compensation VAE on a residual segment ε_{t−τ:t} ((τ+1)×M or batched).

    The encoder reads the segment; the decoder reconstructs the same segment
    from its zero-prefixed shift. Returns ``(eps_hat, mu, log_sigma)``.
    """
    spec = model.spec
    seg, single = _batched(eps_segment, 3)
    if not np.all(np.isfinite(seg)):
        raise ContractError("residuals must be finite")
    if seg.shape[1] != spec.tau + 1 or seg.shape[2] != spec.n_series:
        raise ContractError(f"residual segment must be {spec.tau + 1}×{spec.n_series}")
    g = graph if graph is not None else Graph(model)
    mu, log_sigma = _run_encoder(spec, g, "comp.enc", seg)
    if deterministic:
        z = mu
    else:
        if rng is None:
            raise ContractError("comp_forward needs an Rng unless deterministic=True")
        z = mu + nc.exp(log_sigma) * rng.normal(mu.shape)
    s0 = _initial_state(g, "comp.dec", z)
    teacher = np.concatenate([np.zeros_like(seg[:, :1]), seg[:, :-1]], axis=1)
    y = _comp_decode_teacher(spec, g, s0, teacher)
    if graph is not None:
        return y, mu, log_sigma
    if single:
        return y.data[0], mu.data[0], log_sigma.data[0]
    return y.data, mu.data, log_sigma.data


def causal_matrix(model: CrvaeModel) -> np.ndarray:
    """scores[p, v] = ‖first-layer input weights carrying series v into head p‖₂."""
    w = model.params[CAUSAL_WEIGHT]
    return np.sqrt(np.sum(w * w, axis=-1))


# -- free-running rollouts ------------------------------------------------------


def rollout(model: CrvaeModel, length: int, n: int, rng: Rng, compensation: bool = True,
            init: str = "projected") -> np.ndarray:
    """Generate ``n`` sequences of ``length`` steps, shape n×length×M.

    The main decoder starts from tanh(U_re·z + b_re) (``init="projected"``) or
    from a standard-normal state (``init="direct"``), with a zero first input.
    Each generated observation is the head outputs plus, when enabled, the
    compensation decoder's output for that step; it is fed back as the next
    input. The compensation decoder feeds back its own outputs.
    """
    if length < 1:
        raise ContractError("length must be at least 1")
    spec = model.spec
    g = Graph(model)
    H, M = spec.hidden, spec.n_series
    main_rng, comp_rng = rng.child("main"), rng.child("comp")
    if init == "projected":
        s0 = _initial_state(g, "dec", main_rng.normal((n, spec.latent))).data
    elif init == "direct":
        s0 = main_rng.normal((n, H))
    else:
        raise ContractError(f"unknown init {init!r}")
    states = [Tensor(s0[None])] * spec.layers
    x = np.zeros((n, M))
    if compensation:
        cs = [_initial_state(g, "comp.dec", comp_rng.normal((n, spec.latent)))] * spec.layers
        ce = np.zeros((n, M))
    out = np.empty((n, length, M))
    for t in range(length):
        states = _step(spec, g, "dec", Tensor(x[None]), states)
        y = (states[-1] @ g["dec.w_out"] + g["dec.b_out"]).data[..., 0].T   # (n, M)
        if compensation:
            cs = _step(spec, g, "comp.dec", Tensor(ce), cs)
            ce = (cs[-1] @ g["comp.dec.w_out"] + g["comp.dec.b_out"]).data
            y = y + ce
        out[:, t] = y
        x = y
    return out
