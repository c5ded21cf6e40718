"""Training objectives: penalized negative ELBO and the compensation VAE loss.

Both losses are minimized. Reconstruction is the mean squared error (a
unit-variance Gaussian likelihood up to constants); the KL term is summed over
latent units and averaged over the batch. ``kl_weight`` multiplies the KL term;
1 gives the losses as written, 1/((τ+1)·M) puts the KL on the same per-element
footing as the averaged reconstruction, which is the full ELBO up to a constant
factor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .numcore import DimensionError, Rng, Tape, Tensor
from .recnet import CrvaeModel, Graph, causal_matrix, comp_forward, forward


@dataclass(frozen=True)
class LossBreakdown:
    recon: float
    kl: float
    penalty: float
    lam: float
    total: float
    kl_weight: float = 1.0

    @property
    def convex(self) -> float:
        """The smooth part, recon + kl_weight·kl."""
        return self.recon + self.kl_weight * self.kl


def kl_standard_normal(mu, log_var):
    """KL(N(μ, diag e^{log_var}) ‖ N(0, I)), summed over the last axis, mean over the rest."""
    tracked = isinstance(mu, Tensor) or isinstance(log_var, Tensor)
    mu, log_var = nc.as_tensor(mu), nc.as_tensor(log_var)
    terms = nc.square(mu) + nc.exp(log_var) - 1.0 - log_var
    per = nc.sum(terms, axis=-1)
    out = nc.mul(nc.mean(per), 0.5)
    return out if tracked else max(out.item(), 0.0)


def reconstruction(pred, target):
    tracked = isinstance(pred, Tensor)
    pred, target = nc.as_tensor(pred), nc.as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"prediction {pred.shape} and target {target.shape} differ")
    out = nc.mean(nc.square(pred - target))
    return out if tracked else out.item()


def group_penalty(model: CrvaeModel) -> float:
    """Sum of group norms of the decoder input weights (group lasso)."""
    return float(np.sum(causal_matrix(model)))


def crvae_graph(model: CrvaeModel, window, rng: Rng | None, encoder_mode="unidirectional",
                deterministic=False, kl_weight: float = 1.0):
    """Record recon + kl on a fresh tape over the main parameters.

    Returns ``(graph, convex_loss, recon, kl, result)``.
    """
    tape = Tape()
    g = Graph(model, tape, model.main_names())
    res = forward(model, window, rng=rng, graph=g, encoder_mode=encoder_mode,
                  deterministic=deterministic)
    recon = reconstruction(res.pred, res.target)
    kl = kl_standard_normal(res.mu, nc.mul(res.log_sigma, 2.0))
    return g, recon + _weighted(kl, kl_weight), recon, kl, res


def _weighted(kl, w):
    return kl if w == 1.0 else nc.mul(kl, w)


def crvae_loss(model: CrvaeModel, window, lam: float, rng: Rng | None = None,
               encoder_mode="unidirectional", deterministic=False,
               kl_weight: float = 1.0) -> LossBreakdown:
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    _, _, recon, kl, _ = crvae_graph(model, window, rng, encoder_mode, deterministic)
    pen = group_penalty(model)
    r, k = recon.item(), kl.item()
    return LossBreakdown(r, k, pen, lam, r + kl_weight * k + lam * pen, kl_weight)


def comp_graph(model: CrvaeModel, eps_segment, rng: Rng | None, deterministic=False,
               kl_weight: float = 1.0):
    tape = Tape()
    g = Graph(model, tape, model.comp_names())
    eps = np.asarray(eps_segment, dtype=float)
    eps_hat, mu, log_sigma = comp_forward(model, eps, rng=rng, graph=g,
                                          deterministic=deterministic)
    target = eps if eps.ndim == 3 else eps[None]
    recon = reconstruction(eps_hat, target)
    kl = kl_standard_normal(mu, nc.mul(log_sigma, 2.0))
    return g, recon + _weighted(kl, kl_weight), recon, kl


def comp_loss(model: CrvaeModel, eps_segment, rng: Rng | None = None,
              deterministic=False, kl_weight: float = 1.0) -> LossBreakdown:
    _, _, recon, kl = comp_graph(model, eps_segment, rng, deterministic)
    r, k = recon.item(), kl.item()
    return LossBreakdown(r, k, 0.0, 0.0, r + kl_weight * k, kl_weight)
