from fractions import Fraction

import numpy as np
import pytest

from fracaug.exceptions import ContractError, UndefinedMetricError
from fracaug.metrics import auprc, auroc, evaluate, macro_f1


def brute_auroc(s, y):
    pos = [a for a, t in zip(s, y) if t == 1]
    neg = [a for a, t in zip(s, y) if t == 0]
    wins = sum(Fraction(1) if p > q else Fraction(1, 2) if p == q else Fraction(0) for p in pos for q in neg)
    return wins / (len(pos) * len(neg))


def brute_auprc(s, y):
    n_pos = sum(y)
    ap, prev = Fraction(0), Fraction(0)
    for t in sorted(set(s), reverse=True):
        tp = sum(1 for a, b in zip(s, y) if a >= t and b == 1)
        k = sum(1 for a in s if a >= t)
        recall = Fraction(tp, n_pos)
        ap += (recall - prev) * Fraction(tp, k)
        prev = recall
    return ap


def test_against_brute_force_with_ties(rng):
    for _ in range(200):
        s = rng.integers(0, 6, size=20) / 5.0  # coarse grid forces ties
        y = rng.integers(0, 2, size=20)
        if y.sum() in (0, 20):
            y[0], y[1] = 0, 1
        assert auroc(s, y) == pytest.approx(float(brute_auroc(list(s), list(y))), abs=1e-15)
        assert auprc(s, y) == pytest.approx(float(brute_auprc(list(s), list(y))), abs=1e-15)


def test_examples():
    assert auroc([0.1, 0.9], [0, 1]) == 1.0
    assert auroc([0.9, 0.1], [0, 1]) == 0.0
    assert auroc([0.5, 0.5], [0, 1]) == 0.5
    assert auprc([0.9, 0.8, 0.1], [1, 0, 1]) == pytest.approx(0.5 + 0.5 * 2 / 3)
    assert auprc([0.5] * 4, [1, 0, 0, 0]) == 0.25


def test_macro_f1():
    assert macro_f1([0.9, 0.1], [1, 0]) == 1.0
    assert macro_f1([0.9, 0.9], [1, 0]) == pytest.approx((2 / 3 + 0) / 2)
    assert macro_f1([0.5], [1]) == 1.0
    out = evaluate([0.2, 0.7, 0.6], [0, 1, 0])
    assert set(out) == {"auroc", "auprc", "f1"}


def test_errors():
    with pytest.raises(UndefinedMetricError):
        auroc([0.1, 0.2], [1, 1])
    with pytest.raises(UndefinedMetricError):
        auprc([0.1, 0.2], [0, 0])
    with pytest.raises(ContractError):
        auroc([0.1], [0, 1])
    with pytest.raises(ContractError):
        auroc([0.1, 0.2], [0, 2])
