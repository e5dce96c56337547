"""Per-field value/token codecs.

Categorical fields get a first-occurrence vocabulary. Continuous fields
are quantized with deterministic 1-D Lloyd k-means (quantile init) and
carry the min-max ratio vector used by the ordered embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .schema import (
    CATEGORICAL,
    CONTINUOUS,
    MISSING,
    RawTable,
    SchemaError,
    TableSchema,
    TokenTable,
)


class CodecError(ValueError):
    pass


@dataclass(frozen=True)
class CategoricalCodec:
    values: tuple

    @property
    def cardinality(self) -> int:
        return len(self.values)

    @property
    def index(self) -> dict:
        return {v: i for i, v in enumerate(self.values)}

    def encode(self, v) -> int:
        try:
            return self.values.index(v)
        except ValueError:
            raise CodecError(f"value {v!r} not in categorical vocabulary")

    def decode(self, t: int):
        if not 0 <= t < len(self.values):
            raise CodecError(f"token {t} out of range 0..{len(self.values) - 1}")
        return self.values[t]


@dataclass(frozen=True)
class ContinuousCodec:
    centers: np.ndarray
    ratios: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "centers", np.asarray(self.centers, dtype=np.float64))
        object.__setattr__(self, "ratios", np.asarray(self.ratios, dtype=np.float64))
        if np.any(np.diff(self.centers) <= 0):
            raise CodecError("cluster centers must be strictly increasing")

    @property
    def cardinality(self) -> int:
        return len(self.centers)

    def encode(self, x: float) -> int:
        if not np.isfinite(x):
            raise CodecError(f"cannot encode non-finite value {x!r}")
        # Ties go to the lower-index center.
        d = np.abs(self.centers - x)
        return int(np.argmin(d))

    def encode_many(self, xs: np.ndarray) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.float64)
        if not np.all(np.isfinite(xs)):
            raise CodecError("cannot encode non-finite values")
        d = np.abs(xs[:, None] - self.centers[None, :])
        return np.argmin(d, axis=1)

    def decode(self, t: int) -> float:
        if not 0 <= t < len(self.centers):
            raise CodecError(f"token {t} out of range 0..{len(self.centers) - 1}")
        return float(self.centers[t])


def _ratios(centers: np.ndarray) -> np.ndarray:
    if len(centers) == 1:
        # Degenerate field: min == max, pin the ratio to 0.
        return np.zeros(1)
    return (centers - centers[0]) / (centers[-1] - centers[0])


# Exact DP is affordable up to this many distinct values; beyond it Lloyd's
# algorithm with quantile init is used.
_EXACT_DP_MAX_DISTINCT = 64


def _dp_kmeans_1d(unique_vals: np.ndarray, counts: np.ndarray, k: int) -> np.ndarray:
    """Optimal 1-D k-means over weighted distinct values (interval DP)."""
    n = len(unique_vals)
    w = counts.astype(np.float64)
    pw = np.concatenate([[0.0], np.cumsum(w)])
    ps = np.concatenate([[0.0], np.cumsum(w * unique_vals)])
    ps2 = np.concatenate([[0.0], np.cumsum(w * unique_vals**2)])

    def seg_cost(i: np.ndarray, j: int) -> np.ndarray:
        # WCSS of unique_vals[i:j] with weights; i is a vector.
        m = pw[j] - pw[i]
        s = ps[j] - ps[i]
        s2 = ps2[j] - ps2[i]
        return s2 - s * s / m

    inf = np.inf
    dp = np.full((k + 1, n + 1), inf)
    cut = np.zeros((k + 1, n + 1), dtype=int)
    dp[0, 0] = 0.0
    for c in range(1, k + 1):
        for j in range(c, n + 1):
            i = np.arange(c - 1, j)
            cand = dp[c - 1, i] + seg_cost(i, j)
            best = int(np.argmin(cand))
            dp[c, j] = cand[best]
            cut[c, j] = i[best]
    centers = []
    j = n
    for c in range(k, 0, -1):
        i = cut[c, j]
        seg_w = pw[j] - pw[i]
        centers.append((ps[j] - ps[i]) / seg_w)
        j = i
    return np.array(sorted(centers))


def _lloyd_1d(values: np.ndarray, k: int, max_iter: int = 200, tol: float = 1e-10
              ) -> np.ndarray:
    """Deterministic 1-D Lloyd's algorithm with quantile initialization."""
    xs = np.sort(values)
    centers = np.quantile(xs, (np.arange(k) + 0.5) / k)
    for _ in range(max_iter):
        d = np.abs(xs[:, None] - centers[None, :])
        assign = np.argmin(d, axis=1)
        new_centers = centers.copy()
        for c in range(k):
            members = xs[assign == c]
            if len(members):
                new_centers[c] = members.mean()
            else:
                # Reseed an empty cluster at the point farthest from its center.
                far = int(np.argmax(np.min(d, axis=1)))
                new_centers[c] = xs[far]
        new_centers = np.sort(new_centers)
        if np.max(np.abs(new_centers - centers)) < tol:
            centers = new_centers
            break
        centers = new_centers
    return centers


def fit_continuous(values, max_bins: int, seed: int = 0) -> ContinuousCodec:
    """Quantize a continuous column to at most ``max_bins`` centers."""
    xs = np.asarray([v for v in values if v is not MISSING], dtype=np.float64)
    if xs.size == 0:
        raise CodecError("cannot fit a codec on an empty column")
    if max_bins < 1:
        raise CodecError("max_bins must be >= 1")
    distinct, counts = np.unique(xs, return_counts=True)
    if len(distinct) <= max_bins:
        centers = distinct
    elif len(distinct) <= _EXACT_DP_MAX_DISTINCT:
        centers = np.unique(_dp_kmeans_1d(distinct, counts, max_bins))
    else:
        centers = np.unique(_lloyd_1d(xs, max_bins))
    return ContinuousCodec(centers=centers, ratios=_ratios(centers))


def fit_categorical(values) -> CategoricalCodec:
    """Tokens in first-occurrence order, bijective on observed values."""
    seen = []
    seen_set = set()
    for v in values:
        if v is MISSING:
            continue
        if v not in seen_set:
            seen.append(v)
            seen_set.add(v)
    if not seen:
        raise CodecError("cannot fit a codec on an empty column")
    return CategoricalCodec(values=tuple(seen))


FieldCodec = CategoricalCodec | ContinuousCodec


def fit_codecs(table: RawTable, seed: int = 0) -> list[FieldCodec]:
    codecs: list[FieldCodec] = []
    for j, fs in enumerate(table.schema.fields):
        col = table.column(j)
        if fs.kind == CONTINUOUS:
            codecs.append(fit_continuous(col, fs.max_bins, seed=seed))
        else:
            codecs.append(fit_categorical(col))
    return codecs


def encode_table(table: RawTable, codecs: list[FieldCodec]) -> TokenTable:
    n, l = table.n_rows, table.schema.n_fields
    tokens = np.zeros((n, l), dtype=np.int64)
    missing = np.zeros((n, l), dtype=bool)
    for j, codec in enumerate(codecs):
        sentinel = codec.cardinality
        for i, row in enumerate(table.cells):
            v = row[j]
            if v is MISSING:
                tokens[i, j] = sentinel
                missing[i, j] = True
            else:
                tokens[i, j] = codec.encode(v)
    return TokenTable(schema=table.schema, tokens=tokens, missing=missing)


def decode_table(table: TokenTable, codecs: list[FieldCodec]) -> RawTable:
    cells = []
    for i in range(table.n_rows):
        row = []
        for j, codec in enumerate(codecs):
            if table.missing[i, j]:
                row.append(MISSING)
            else:
                row.append(codec.decode(int(table.tokens[i, j])))
        cells.append(row)
    return RawTable(schema=table.schema, cells=cells)


def codec_to_json(codec: FieldCodec) -> dict:
    if isinstance(codec, CategoricalCodec):
        return {"kind": "categorical", "values": list(codec.values)}
    return {"kind": "continuous", "centers": codec.centers.tolist()}


def codec_from_json(obj: dict) -> FieldCodec:
    if obj["kind"] == "categorical":
        return CategoricalCodec(values=tuple(obj["values"]))
    centers = np.asarray(obj["centers"], dtype=np.float64)
    return ContinuousCodec(centers=centers, ratios=_ratios(centers))
