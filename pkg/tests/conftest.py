"""Shared fixtures: toy datasets, trained toy models, brute-force oracles."""

from __future__ import annotations

import numpy as np
import pytest

from tabmt.codec import fit_categorical
from tabmt.model import ModelConfig, TabMTModel
from tabmt.schema import TokenTable
from tabmt.training import TrainConfig, train

N_TOY = 5000
TOY_K = 4

# Acceptance-criterion result lines, echoed after the run summary where
# pytest's output capture cannot swallow them.
_acceptance_lines: list[str] = []


def record_acceptance(line: str):
    _acceptance_lines.append(line)


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)


def make_toy_tokens(kind: str, seed: int = 1, n: int = N_TOY) -> TokenTable:
    """Two categorical fields with a known joint.

    deterministic: B == A; noisy: B == A with prob 0.7, else one of the
    other three values uniformly.
    """
    rng = np.random.default_rng(seed)
    a = rng.integers(0, TOY_K, n)
    if kind == "deterministic":
        b = a.copy()
    elif kind == "noisy":
        b = a.copy()
        flip = rng.random(n) >= 0.7
        shift = rng.integers(1, TOY_K, n)
        b[flip] = (a[flip] + shift[flip]) % TOY_K
    else:
        raise ValueError(kind)
    return TokenTable(schema=None, tokens=np.stack([a, b], axis=1))


def toy_codecs():
    return [fit_categorical(list("abcd")), fit_categorical(list("pqrs"))]


def train_toy(tokens: TokenTable, width=32, depth=2, heads=4, steps=600,
              seed=0) -> TabMTModel:
    model = TabMTModel(toy_codecs(), ModelConfig(width=width, depth=depth,
                                                 heads=heads), seed=seed)
    train(model, tokens, TrainConfig(batch_size=256, max_steps=steps,
                                     warmup_steps=50, seed=seed))
    return model


@pytest.fixture(scope="session")
def toy_deterministic() -> TokenTable:
    return make_toy_tokens("deterministic")


@pytest.fixture(scope="session")
def toy_noisy() -> TokenTable:
    return make_toy_tokens("noisy")


@pytest.fixture(scope="session")
def trained_toy_model(toy_deterministic) -> TabMTModel:
    """Small model trained to convergence on the deterministic toy."""
    return train_toy(toy_deterministic)


# ---- brute-force oracles -------------------------------------------------

def dp_kmeans_1d(values: np.ndarray, k: int) -> tuple[float, list[np.ndarray]]:
    """Exact 1-D k-means via dynamic programming over sorted splits.

    Returns the optimal within-cluster sum of squares and the clusters.
    Feasible only for small inputs; used purely as a test oracle.
    """
    xs = np.sort(np.asarray(values, dtype=np.float64))
    n = len(xs)
    pref = np.concatenate([[0.0], np.cumsum(xs)])
    pref2 = np.concatenate([[0.0], np.cumsum(xs * xs)])

    def cost(i, j):
        # WCSS of xs[i:j]
        m = j - i
        s = pref[j] - pref[i]
        s2 = pref2[j] - pref2[i]
        return s2 - s * s / m

    inf = float("inf")
    dp = np.full((k + 1, n + 1), inf)
    cut = np.zeros((k + 1, n + 1), dtype=int)
    dp[0, 0] = 0.0
    for c in range(1, k + 1):
        for j in range(c, n + 1):
            for i in range(c - 1, j):
                v = dp[c - 1, i] + cost(i, j)
                if v < dp[c, j]:
                    dp[c, j] = v
                    cut[c, j] = i
    best_c = int(np.argmin(dp[1: k + 1, n])) + 1
    clusters = []
    j = n
    for c in range(best_c, 0, -1):
        i = cut[c, j]
        clusters.append(xs[i:j])
        j = i
    clusters.reverse()
    return float(dp[best_c, n]), clusters


def brute_dcr(synth: np.ndarray, train_vec: np.ndarray) -> float:
    dists = []
    for s in synth:
        dists.append(min(float(np.sqrt(((s - t) ** 2).sum())) for t in train_vec))
    return float(np.median(dists))


def brute_precision_recall(real: np.ndarray, synth: np.ndarray, k: int = 3
                           ) -> tuple[float, float]:
    def radii(points):
        out = []
        for i, p in enumerate(points):
            ds = sorted(
                float(np.sqrt(((p - q) ** 2).sum()))
                for j, q in enumerate(points) if j != i
            )
            out.append(ds[k - 1])
        return out

    def covered(queries, centers, rads):
        hits = 0
        for q in queries:
            for c, r in zip(centers, rads):
                if float(np.sqrt(((q - c) ** 2).sum())) <= r:
                    hits += 1
                    break
        return hits / len(queries)

    real_r = radii(real)
    synth_r = radii(synth)
    return covered(synth, real, real_r), covered(real, synth, synth_r)
