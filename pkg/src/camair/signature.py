"""Truncated path signatures and log-signatures of multi-channel streams.

A discrete stream is read as a piecewise-linear path. Each linear segment
with increment ``delta`` has exact level-n term ``delta^(tensor n) / n!``;
segments combine through Chen's relation (the graded tensor product), so no
numerical quadrature is involved. Level n is stored as the C-order
flattening of a (d,)*n tensor; the level-0 scalar is fixed at 1 and kept
implicit.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .datamodel import HourKey, read_csv_rows, write_csv
from .errors import (
    DepthZeroError,
    EmptyPathError,
    InsufficientIncrementsError,
    ShapeMismatchError,
    ValidationError,
)
from .flows import HourlyFlowTensor

DEFAULT_DEPTH = 3


def sig_length(channels: int, depth: int) -> int:
    """Number of coefficients across levels 1..depth: sum of d^n."""
    return sum(channels ** n for n in range(1, depth + 1))


def _validate_levels(levels, channels, depth):
    if depth < 1:
        raise DepthZeroError("depth must be >= 1")
    if len(levels) != depth:
        raise ValidationError(f"expected {depth} levels, got {len(levels)}")
    out = []
    for n, lvl in enumerate(levels, start=1):
        arr = np.asarray(lvl, dtype=float)
        if arr.shape != (channels ** n,):
            raise ValidationError(
                f"level {n} must have {channels ** n} entries, got {arr.shape}")
        arr.setflags(write=False)
        out.append(arr)
    return tuple(out)


@dataclass(frozen=True, eq=False)
class SignatureVector:
    """Signature truncated at tensor depth N; levels 1..N, level 0 == 1."""

    depth: int
    channels: int
    levels: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(self, "levels",
                           _validate_levels(self.levels, self.channels, self.depth))

    @property
    def data(self) -> np.ndarray:
        return np.concatenate(self.levels)

    def level(self, n: int) -> np.ndarray:
        if not 1 <= n <= self.depth:
            raise ValidationError(f"level {n} outside 1..{self.depth}")
        return self.levels[n - 1]


@dataclass(frozen=True, eq=False)
class LogSignatureVector:
    """Truncated tensor logarithm of a signature, in full tensor coordinates."""

    depth: int
    channels: int
    levels: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(self, "levels",
                           _validate_levels(self.levels, self.channels, self.depth))

    @property
    def data(self) -> np.ndarray:
        return np.concatenate(self.levels)


def _zero_levels(channels: int, depth: int) -> list[np.ndarray]:
    return [np.zeros(channels ** n) for n in range(1, depth + 1)]


def _graded_product(a: Sequence[np.ndarray], b: Sequence[np.ndarray],
                    channels: int, depth: int) -> list[np.ndarray]:
    """Product of two unit-free tensor series (levels 1..depth), truncated."""
    out = _zero_levels(channels, depth)
    for i, ai in enumerate(a, start=1):
        if i >= depth + 1:
            break
        for j, bj in enumerate(b, start=1):
            if i + j > depth:
                break
            out[i + j - 1] += np.multiply.outer(ai, bj).ravel()
    return out


def identity_signature(channels: int, depth: int) -> SignatureVector:
    """Signature of the trivial path: 1 at level 0, zero elsewhere."""
    return SignatureVector(depth, channels, _zero_levels(channels, depth))


def _segment_levels(delta: np.ndarray, depth: int) -> list[np.ndarray]:
    # tensor exponential of a straight segment: delta^(x n) / n!
    levels = [np.asarray(delta, dtype=float)]
    for n in range(2, depth + 1):
        levels.append(np.multiply.outer(levels[-1], delta).ravel() / n)
    return levels


def chen_concat(sig_a: SignatureVector, sig_b: SignatureVector) -> SignatureVector:
    """Signature of the concatenated path: graded tensor product of the two."""
    if sig_a.channels != sig_b.channels or sig_a.depth != sig_b.depth:
        raise ShapeMismatchError(
            f"cannot concatenate signatures with (d={sig_a.channels}, N={sig_a.depth}) "
            f"and (d={sig_b.channels}, N={sig_b.depth})")
    d, depth = sig_a.channels, sig_a.depth
    cross = _graded_product(sig_a.levels, sig_b.levels, d, depth)
    levels = [sig_a.levels[n] + sig_b.levels[n] + cross[n] for n in range(depth)]
    return SignatureVector(depth, d, levels)


def signature(path, depth: int) -> SignatureVector:
    """Truncated signature of a piecewise-linear path given as (T, d) samples."""
    if depth < 1:
        raise DepthZeroError("depth must be >= 1")
    arr = np.asarray(path, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] < 2:
        raise EmptyPathError("path needs at least two samples")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("path has non-finite entries")
    d = arr.shape[1]
    levels = _zero_levels(d, depth)
    for delta in np.diff(arr, axis=0):
        seg = _segment_levels(delta, depth)
        cross = _graded_product(levels, seg, d, depth)
        levels = [levels[n] + seg[n] + cross[n] for n in range(depth)]
    return SignatureVector(depth, d, levels)


def log_signature(sig: SignatureVector) -> LogSignatureVector:
    """Tensor logarithm, truncated at the signature's depth:
    sum over n of (-1)^(n-1)/n times the n-th power of (S - 1)."""
    d, depth = sig.channels, sig.depth
    x = [np.array(lvl) for lvl in sig.levels]
    acc = [np.array(lvl) for lvl in x]
    out = [np.array(lvl) for lvl in x]
    for n in range(2, depth + 1):
        acc = _graded_product(acc, x, d, depth)
        coeff = (-1.0) ** (n - 1) / n
        for k in range(depth):
            out[k] += coeff * acc[k]
    return LogSignatureVector(depth, d, out)


def signature_exp(logsig: LogSignatureVector) -> SignatureVector:
    """Tensor exponential, truncated: inverse of log_signature."""
    d, depth = logsig.channels, logsig.depth
    x = [np.array(lvl) for lvl in logsig.levels]
    acc = [np.array(lvl) for lvl in x]
    out = [np.array(lvl) for lvl in x]
    for n in range(2, depth + 1):
        acc = _graded_product(acc, x, d, depth)
        inv_fact = 1.0 / math.factorial(n)
        for k in range(depth):
            out[k] += inv_fact * acc[k]
    return SignatureVector(depth, d, out)


def hourly_signature(tensor: HourlyFlowTensor, camera_id: str,
                     depth: int = DEFAULT_DEPTH, cumulative: bool = True) -> SignatureVector:
    """Signature of one camera's 13-channel hourly stream.

    By default the per-file counts are turned into a running-sum path with a
    zero basepoint, so level 1 equals the hour's channel totals; pass
    ``cumulative=False`` to take the raw per-file values as path samples.
    """
    if tensor.files_per_hour < 2:
        raise InsufficientIncrementsError(
            f"need at least 2 file increments, got {tensor.files_per_hour}")
    values = tensor.values[tensor.camera_index(camera_id)]
    if cumulative:
        path = np.vstack([np.zeros(values.shape[1]), np.cumsum(values, axis=0)])
    else:
        path = values
    return signature(path, depth)


# ---------------------------------------------------------------------------
# signatures.csv
# ---------------------------------------------------------------------------

def sig_column_names(channels: int, depth: int) -> list[str]:
    names = []
    for n in range(1, depth + 1):
        for idx in itertools.product(range(channels), repeat=n):
            names.append("sig_" + str(n) + "_" + "_".join(map(str, idx)))
    return names


def write_signatures(path, rows: Iterable[tuple[HourKey, str, SignatureVector]],
                     channels: int, depth: int, comment: str | None = None) -> None:
    header = ["hour", "date", "camera_id", *sig_column_names(channels, depth)]
    write_csv(path, header,
              ([hour.hour, hour.date.isoformat(), camera_id, *sig.data]
               for hour, camera_id, sig in rows), comment=comment)


def load_signatures(path, channels: int, depth: int):
    """Yield (hour, camera_id, data vector) rows from signatures.csv."""
    names = sig_column_names(channels, depth)
    _, rows = read_csv_rows(path)
    out = []
    for i, row in enumerate(rows, start=2):
        try:
            hour = HourKey.parse(row["date"], row["hour"])
            data = np.array([float(row[c]) for c in names])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"{path}:{i}: bad signature row ({exc})") from exc
        out.append((hour, row["camera_id"], data))
    return out
