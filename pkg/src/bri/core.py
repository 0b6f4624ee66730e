"""Shared domain types: observed study, parameter vectors, RNG streams and
the coarsening schedule."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import LengthMismatch, NonBinaryAssignment, NonFiniteOutcome

_MASK64 = (1 << 64) - 1


def _readonly(x):
    x = np.array(x, copy=True)
    x.setflags(write=False)
    return x


@dataclass(frozen=True, eq=False)
class ObservedStudy:
    """Fixed observed data: assignments ``a``, observed outcomes ``y`` and
    optional covariates ``X``.

    Build instances with :func:`validate_study`; the constructor does not
    check its inputs.
    """

    a: np.ndarray
    y: np.ndarray
    X: Optional[np.ndarray] = None
    n: int = 0
    n0: int = 0
    n1: int = 0
    degenerate: bool = False

    def __eq__(self, other):
        if not isinstance(other, ObservedStudy):
            return NotImplemented
        same_x = (self.X is None and other.X is None) or (
            self.X is not None and other.X is not None
            and np.array_equal(self.X, other.X))
        return (np.array_equal(self.a, other.a) and np.array_equal(self.y, other.y)
                and same_x and (self.n, self.n0, self.n1, self.degenerate)
                == (other.n, other.n0, other.n1, other.degenerate))

    __hash__ = None

    @property
    def treated(self):
        return self.a == 1

    @property
    def control(self):
        return self.a == 0

    @property
    def pi(self):
        """Observed treated fraction ``n1 / n``."""
        return self.n1 / self.n

    def with_outcomes(self, y):
        return validate_study(self.a, y, self.X)


def validate_study(a, y, X=None) -> ObservedStudy:
    """Validate raw inputs and return an :class:`ObservedStudy`.

    A study where one group is empty is returned with ``degenerate=True``
    rather than rejected, since statistics of the treated outcomes alone
    remain well defined.
    """
    a_arr = np.asarray(a)
    y_arr = np.asarray(y, dtype=float)
    if a_arr.ndim != 1 or y_arr.ndim != 1:
        raise LengthMismatch("a and y must be one-dimensional")
    if a_arr.size == 0:
        raise LengthMismatch("empty study")
    if a_arr.shape != y_arr.shape:
        raise LengthMismatch(f"len(a)={a_arr.size} but len(y)={y_arr.size}")
    if not np.all((a_arr == 0) | (a_arr == 1)):
        bad = np.flatnonzero((a_arr != 0) & (a_arr != 1))
        raise NonBinaryAssignment(f"assignments must be 0/1; offending index {int(bad[0])}")
    if not np.all(np.isfinite(y_arr)):
        raise NonFiniteOutcome("outcomes must be finite")
    a_int = a_arr.astype(np.int8)
    X_arr = None
    if X is not None:
        X_arr = np.asarray(X, dtype=float)
        if X_arr.ndim == 1:
            X_arr = X_arr[:, None]
        if X_arr.shape[0] != a_int.size:
            raise LengthMismatch(f"X has {X_arr.shape[0]} rows, expected {a_int.size}")
        X_arr = _readonly(X_arr)
    n = int(a_int.size)
    n1 = int(a_int.sum())
    n0 = n - n1
    return ObservedStudy(a=_readonly(a_int), y=_readonly(y_arr), X=X_arr, n=n,
                         n0=n0, n1=n1, degenerate=(n0 == 0 or n1 == 0))


@dataclass(frozen=True, eq=False)
class ParamVector:
    values: np.ndarray
    names: tuple = ()

    def __post_init__(self):
        vals = np.atleast_1d(np.asarray(self.values, dtype=float))
        if vals.ndim != 1 or vals.size < 1:
            raise ValueError("parameter vector must be a non-empty 1-d array")
        if not np.all(np.isfinite(vals)):
            raise ValueError("parameter values must be finite")
        names = tuple(self.names) or tuple(f"theta{i}" for i in range(vals.size))
        if len(names) != vals.size:
            raise ValueError("one name per coordinate required")
        object.__setattr__(self, "values", _readonly(vals))
        object.__setattr__(self, "names", names)

    def __len__(self):
        return self.values.size

    def __getitem__(self, key):
        if isinstance(key, str):
            return float(self.values[self.names.index(key)])
        return self.values[key]

    def as_dict(self):
        return {k: float(v) for k, v in zip(self.names, self.values)}


def as_values(theta) -> np.ndarray:
    """Plain float array from a ParamVector, sequence or scalar."""
    if isinstance(theta, ParamVector):
        return np.asarray(theta.values, dtype=float)
    return np.atleast_1d(np.asarray(theta, dtype=float))


def _hash64(*parts: bytes) -> int:
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        h.update(p)
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream keyed by ``(seed, stream_id)``.

    Backed by the Philox bit generator, whose 128-bit key is the pair of
    64-bit integers. Equal keys give bit-identical sequences. Child streams
    are derived by hashing, so draws never depend on scheduling order.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "seed", int(self.seed) & _MASK64)
        object.__setattr__(self, "stream_id", int(self.stream_id) & _MASK64)

    def generator(self) -> np.random.Generator:
        key = self.seed | (self.stream_id << 64)
        return np.random.Generator(np.random.Philox(key=key))

    def spawn(self, i: int) -> "RngStream":
        """Child stream number ``i``."""
        sid = _hash64(b"spawn", struct.pack("<QQ", self.stream_id, int(i) & _MASK64))
        return RngStream(self.seed, sid)

    def keyed(self, values) -> "RngStream":
        """Child stream keyed by the bit pattern of a float vector."""
        vals = np.ascontiguousarray(np.atleast_1d(np.asarray(values, dtype=np.float64)))
        # -0.0 and 0.0 are the same parameter value
        vals = vals + 0.0
        sid = _hash64(b"keyed", struct.pack("<Q", self.stream_id), vals.tobytes())
        return RngStream(self.seed, sid)

    def named(self, label: str) -> "RngStream":
        sid = _hash64(b"named", struct.pack("<Q", self.stream_id), label.encode())
        return RngStream(self.seed, sid)


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError("expected an RngStream or numpy Generator")


@dataclass(frozen=True)
class CoarseningSchedule:
    """Neighborhood half-width schedule ``eps(n) = n ** -alpha``."""

    p: int
    alpha: float
    gamma: float

    def eps(self, n) -> float:
        return float(n) ** (-self.alpha)


def coarsening_schedule(p: int) -> CoarseningSchedule:
    """Error-optimal coarsening exponents for a ``p``-dimensional statistic.

    The approximation error of the normalized neighborhood probability is
    bounded by ``n ** gamma`` with
    ``gamma = max(p (alpha - 1/2) - 1/2, 1/2 - alpha)``; equating the two
    branches gives ``alpha = (2 + p) / (2 (p + 1))`` and
    ``gamma = -1 / (2 (p + 1))``.
    """
    if int(p) != p or p < 1:
        raise ValueError("p must be a positive integer")
    p = int(p)
    alpha = (2 + p) / (2 * (p + 1))
    gamma = -1.0 / (2 * (p + 1))
    return CoarseningSchedule(p=p, alpha=alpha, gamma=gamma)


def names_for(theta, default: Sequence[str] = ()) -> tuple:
    if isinstance(theta, ParamVector):
        return theta.names
    return tuple(default)
