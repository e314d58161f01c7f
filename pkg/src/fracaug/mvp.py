"""Mutual-verification pseudo-labeling and its correlated-error simulation."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, ContractError, DomainError

ABSTAIN = -1


@dataclass(frozen=True)
class MvpConfig:
    """Thresholds on the anomaly probability: normal below ``tau_n``, anomalous above ``tau_a``."""

    tau_n: float = 0.05
    tau_a: float = 0.95
    mutual: bool = True

    def __post_init__(self):
        if not (0 < self.tau_n < 1 and 0 < self.tau_a < 1):
            raise ConfigError(f"thresholds must lie in (0, 1), got {self.tau_n}, {self.tau_a}")
        if not self.tau_n < self.tau_a:
            raise ConfigError(f"tau_n ({self.tau_n}) must be below tau_a ({self.tau_a})")


def pseudo_label(p: float, p_prime: float, cfg: MvpConfig = MvpConfig()) -> int:
    """0 if both views are confidently normal, 1 if both are confidently anomalous."""
    if p <= cfg.tau_n and p_prime <= cfg.tau_n:
        return 0
    if p >= cfg.tau_a and p_prime >= cfg.tau_a:
        return 1
    return ABSTAIN


def single_view_label(p: float, cfg: MvpConfig = MvpConfig()) -> int:
    if p <= cfg.tau_n:
        return 0
    if p >= cfg.tau_a:
        return 1
    return ABSTAIN


@dataclass(frozen=True)
class LedgerEntry:
    round: int
    graph_id: int
    label: int
    p: float
    p_prime: float
    epoch: int


@dataclass
class PseudoLabelLedger:
    entries: list[LedgerEntry] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def round_entries(self, rnd: int) -> list[LedgerEntry]:
        return [e for e in self.entries if e.round == rnd]

    def counts(self) -> dict[int, dict[str, int]]:
        out: dict[int, dict[str, int]] = {}
        for e in self.entries:
            c = out.setdefault(e.round, {"normal": 0, "anomalous": 0})
            c["anomalous" if e.label == 1 else "normal"] += 1
        return out

    def write_jsonl(self, path) -> Path:
        path = Path(path)
        with open(path, "w") as fh:
            for e in self.entries:
                fh.write(json.dumps(asdict(e)) + "\n")
        return path


def expand_training_set(train_ids, train_labels, unlabeled_ids, scores, scores_frac,
                        cfg: MvpConfig, ledger: PseudoLabelLedger, rnd: int = 0, epoch: int = 0):
    """Training view with confidently pseudo-labeled graphs appended.

    Receives no ground truth for ``unlabeled_ids``. A graph already
    labeled in round ``rnd`` keeps its first assignment. Returns
    ``(ids, labels)``.
    """
    train_ids = list(train_ids)
    if set(train_ids) & set(unlabeled_ids):
        raise ContractError("unlabeled ids overlap the training set")
    if not (len(unlabeled_ids) == len(scores) == len(scores_frac)):
        raise ContractError("unlabeled ids and score arrays must be aligned")
    seen = {e.graph_id for e in ledger.round_entries(rnd)}
    for gid, p, pf in zip(unlabeled_ids, scores, scores_frac):
        gid = int(gid)
        label = pseudo_label(p, pf, cfg) if cfg.mutual else single_view_label(p, cfg)
        if label == ABSTAIN:
            continue
        if gid in seen:
            ledger.notes.append(f"round {rnd}: graph {gid} already pseudo-labeled; skipped")
            continue
        ledger.entries.append(LedgerEntry(rnd, gid, label, float(p), float(pf), epoch))
        seen.add(gid)
    current = ledger.round_entries(rnd)
    ids = train_ids + [e.graph_id for e in current]
    labels = list(train_labels) + [e.label for e in current]
    return ids, labels


# ---------------------------------------------------------------------------
# correlated-error simulation


def joint_error_rate(delta: float, rho: float) -> float:
    return delta * delta + rho * delta * (1.0 - delta)


def feasible_rho_range(delta: float) -> tuple[float, float]:
    return max(-delta / (1.0 - delta), -(1.0 - delta) / delta), 1.0


def prop1_simulate(delta: float, rho: float, trials: int = 1_000_000, seed: int = 0) -> dict:
    """Monte-Carlo check of the joint error rate of two correlated views.

    Draws pairs of Bernoulli(``delta``) error indicators with correlation
    ``rho`` from their exact joint table and compares the frequency of
    "both wrong" with ``delta**2 + rho * delta * (1 - delta)`` inside a
    four-standard-error band.
    """
    if not 0 < delta < 1:
        raise DomainError(f"delta must lie in (0, 1), got {delta}")
    lo, hi = feasible_rho_range(delta)
    if not lo - 1e-12 <= rho <= hi + 1e-12:
        raise DomainError(f"rho={rho} infeasible for delta={delta}; need {lo:.6g} <= rho <= {hi}")
    if trials < 10_000:
        raise DomainError(f"need at least 10^4 trials, got {trials}")
    p11 = joint_error_rate(delta, rho)
    p10 = p01 = delta - p11
    p00 = 1.0 - p11 - p10 - p01
    table = np.clip(np.array([p00, p01, p10, p11]), 0.0, None)
    rng = np.random.default_rng(seed)
    cells = rng.choice(4, size=trials, p=table / table.sum())
    err_a = (cells >= 2)
    err_b = (cells % 2 == 1)
    both = err_a & err_b
    empirical = float(both.mean())
    sigma = math.sqrt(p11 * (1.0 - p11) / trials)
    var_joint = float(both.var())
    emp_rho = float(np.corrcoef(err_a, err_b)[0, 1]) if 0 < err_a.mean() < 1 and 0 < err_b.mean() < 1 else float("nan")
    return {
        "delta": delta,
        "rho": rho,
        "trials": trials,
        "seed": seed,
        "empirical_joint": empirical,
        "analytic_joint": p11,
        "sigma": sigma,
        "z_score": (empirical - p11) / sigma if sigma > 0 else 0.0,
        "empirical_marginals": [float(err_a.mean()), float(err_b.mean())],
        "empirical_rho": emp_rho,
        # the proposition's stated factor, and the conditional ratio P(both) / P(one)
        "reduction_factor": delta + rho * delta * (1.0 - delta),
        "error_ratio": p11 / delta,
        "variance_ratio": var_joint / (delta * (1.0 - delta)),
        "pass": bool(abs(empirical - p11) <= 4.0 * sigma),
    }
