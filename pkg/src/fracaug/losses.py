"""Margin cross-entropy losses for two-class logits, with analytic gradients."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, ContractError

logger = logging.getLogger(__name__)

MARGIN_KINDS = ("softmax", "lmcl", "ldam", "wdml")


def _margin_ce_terms(s, y: int, m: float, weight: float):
    s = np.asarray(s, dtype=np.float64)
    z = s.copy()
    z[y] -= m
    zmax = z.max()
    e = np.exp(z - zmax)
    total = e.sum()
    p = e / total
    loss = weight * (np.log(total) + zmax - z[y])
    grad = weight * p
    grad[y] -= weight
    # d loss / d m = -d loss / d z_y
    dm = -grad[y]
    return float(loss), grad, float(dm)


def margin_ce(s, y: int, m: float = 0.0, weight: float = 1.0):
    """Weighted cross-entropy with margin ``m`` subtracted from the true logit.

    Returns ``(loss, dloss/ds)``.
    """
    if not np.isfinite(m):
        raise ContractError(f"margin must be finite, got {m}")
    if weight <= 0:
        raise ContractError(f"weight must be positive, got {weight}")
    loss, grad, _ = _margin_ce_terms(s, int(y), float(m), float(weight))
    return loss, grad


def distance_margin_grad(o, o_prime):
    """``m = (1 - cos(o, o')) / 2`` and its gradients w.r.t. both vectors."""
    o = np.asarray(o, dtype=np.float64)
    op = np.asarray(o_prime, dtype=np.float64)
    no, nop = np.linalg.norm(o), np.linalg.norm(op)
    if no == 0 or nop == 0:
        logger.warning("zero graph embedding; distance margin set to 0")
        return 0.0, np.zeros_like(o), np.zeros_like(op)
    cos = float(o @ op) / (no * nop)
    dcos_do = op / (no * nop) - cos * o / no**2
    dcos_dop = o / (no * nop) - cos * op / nop**2
    return (1.0 - cos) / 2.0, -0.5 * dcos_do, -0.5 * dcos_dop


def distance_margin(o, o_prime) -> float:
    return distance_margin_grad(o, o_prime)[0]


def ldam_margins(class_counts, scale: float = 0.5):
    """Class margins ``scale / N_c**0.25``; rarer classes get larger margins."""
    counts = np.asarray(class_counts, dtype=np.float64)
    if np.any(counts < 1):
        raise ContractError(f"class counts must be >= 1, got {class_counts}")
    return tuple(float(scale / c**0.25) for c in counts)


@dataclass
class WdmlResult:
    loss: float
    margins: np.ndarray
    grad_s: list = field(default_factory=list)
    grad_o: list = field(default_factory=list)
    grad_o_prime: list = field(default_factory=list)


@dataclass(frozen=True)
class MarginSpec:
    kind: str = "wdml"
    m_fixed: float = 0.35
    ldam_scale: float = 0.5

    def __post_init__(self):
        if self.kind not in MARGIN_KINDS:
            raise ConfigError(f"unknown margin kind {self.kind!r}; expected one of {MARGIN_KINDS}")
        if self.m_fixed < 0:
            raise ConfigError(f"m_fixed must be >= 0, got {self.m_fixed}")
        if self.ldam_scale <= 0:
            raise ConfigError(f"ldam_scale must be positive, got {self.ldam_scale}")


def _class_weights(labels, class_counts):
    n0, n1 = class_counts
    present = set(int(y) for y in labels)
    for cls, count in ((0, n0), (1, n1)):
        if cls in present and count < 1:
            raise ConfigError(f"class {cls} absent from the training counts {class_counts}")
    return [1.0 / class_counts[int(y)] for y in labels]


def margin_batch(outputs, outputs_frac, labels, class_counts,
                 spec: MarginSpec = MarginSpec()) -> WdmlResult:
    """Class-weighted margin loss summed over a batch.

    ``outputs`` and ``outputs_frac`` are aligned lists of ``(logits,
    embedding)`` for the original graphs and their generated variants.
    The margined softmax acts on the original logits; the margin is the
    per-sample cosine distance (``wdml``), a constant (``lmcl``), the
    class margin (``ldam``) or zero (``softmax``).
    """
    if not (len(outputs) == len(outputs_frac) == len(labels)):
        raise ContractError("outputs, outputs_frac and labels must be aligned")
    weights = _class_weights(labels, class_counts)
    ldam = ldam_margins(class_counts, spec.ldam_scale) if spec.kind == "ldam" else None
    result = WdmlResult(0.0, np.zeros(len(labels)))
    for i, ((s, o), (_, op), y, w) in enumerate(zip(outputs, outputs_frac, labels, weights)):
        y = int(y)
        if spec.kind == "wdml":
            m, dm_do, dm_dop = distance_margin_grad(o, op)
        else:
            if spec.kind == "ldam":
                m = ldam[y]
            elif spec.kind == "lmcl":
                m = spec.m_fixed
            else:
                m = 0.0
            dm_do, dm_dop = np.zeros(np.shape(o)), np.zeros(np.shape(op))
        loss, gs, dl_dm = _margin_ce_terms(s, y, m, w)
        result.loss += loss
        result.margins[i] = m
        result.grad_s.append(gs)
        result.grad_o.append(dl_dm * dm_do)
        result.grad_o_prime.append(dl_dm * dm_dop)
    return result


def wdml_batch(outputs, outputs_frac, labels, class_counts) -> WdmlResult:
    """Weighted distance-aware margin loss (sum over samples, weight ``1/N_y``)."""
    return margin_batch(outputs, outputs_frac, labels, class_counts, MarginSpec("wdml"))


def balanced_weights(labels, class_counts):
    """Per-sample weights ``N / (2 N_y)`` for class-balanced cross-entropy."""
    n = sum(class_counts)
    return [n / (2.0 * class_counts[int(y)]) for y in labels]
