"""Empirical and quantized probability measures.

Quantized measures live on a :class:`StateGrid`: ``m`` cells per coordinate
over the box ``[-L, L]^d``, where the outermost cells extend to infinity so
that every point of R^d has a cell.  A :class:`QuantizedMeasure` is a
composition of the integer ``n`` over the ``m**d`` cells.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog
from scipy.sparse import coo_matrix

from ._backend import kernels
from .errors import ConfigError, SizeError

EXACT_W1_MAX_ATOMS = 512
ENUMERATION_CAP = 200_000
# distances closer than this count as ties
TIE_TOL = 1e-9


class EmpiricalMeasure:
    """Weighted atoms in R^d.

    ``atoms`` is ``(K, d)`` and ``weights`` sums to one.  Without weights the
    measure is uniform, the usual particle estimate ``(1/N) sum delta_X``.
    """

    __slots__ = ("atoms", "weights")

    def __init__(self, atoms, weights=None):
        atoms = np.array(atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        if atoms.ndim != 2 or atoms.shape[0] == 0:
            raise ConfigError("an empirical measure needs a nonempty (K, d) atom array")
        if not np.all(np.isfinite(atoms)):
            raise ConfigError("atoms must be finite")
        if weights is None:
            weights = np.full(atoms.shape[0], 1.0 / atoms.shape[0])
        weights = np.array(weights, dtype=float).reshape(-1)
        if weights.shape[0] != atoms.shape[0]:
            raise ConfigError("one weight per atom is required")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ConfigError("weights must be nonnegative and sum to 1")
        atoms.setflags(write=False)
        weights.setflags(write=False)
        self.atoms = atoms
        self.weights = weights

    @classmethod
    def dirac(cls, x):
        return cls(np.atleast_1d(np.asarray(x, dtype=float))[None, :])

    @property
    def dim(self):
        return self.atoms.shape[1]

    def __len__(self):
        return self.atoms.shape[0]

    def mean(self):
        return self.weights @ self.atoms

    def second_moment(self):
        return float(self.weights @ np.sum(self.atoms ** 2, axis=1))

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"x{i}" for i in range(self.dim)] + ["weight"])
        for a, p in zip(self.atoms, self.weights):
            w.writerow([format(v, ".17g") for v in a] + [format(p, ".17g")])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        rows = list(csv.reader(io.StringIO(text)))
        data = np.array([[float(v) for v in r] for r in rows[1:]])
        return cls(data[:, :-1], data[:, -1])


def _w1_1d(mu, nu):
    ia = np.argsort(mu.atoms[:, 0], kind="stable")
    ib = np.argsort(nu.atoms[:, 0], kind="stable")
    return kernels.w1_sorted_1d(mu.atoms[ia, 0], mu.weights[ia], nu.atoms[ib, 0], nu.weights[ib])


def w1_lp(a, wa, b, wb):
    """W1 by solving the transport linear program (HiGHS).

    Works in any dimension.  Used for d >= 2 and as the oracle for the 1-d
    quantile coupling.
    """
    a = np.asarray(a, dtype=float).reshape(len(wa), -1)
    b = np.asarray(b, dtype=float).reshape(len(wb), -1)
    n, m = len(wa), len(wb)
    cost = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1).ravel()
    rows = np.concatenate([np.repeat(np.arange(n), m), n + np.tile(np.arange(m), n)])
    cols = np.concatenate([np.arange(n * m), np.arange(n * m)])
    A = coo_matrix((np.ones(2 * n * m), (rows, cols)), shape=(n + m, n * m)).tocsr()
    rhs = np.concatenate([wa, wb])
    # one marginal constraint is redundant; dropping it keeps HiGHS happy
    res = linprog(cost, A_eq=A[:-1], b_eq=rhs[:-1], bounds=(0, None), method="highs")
    if res.status != 0:
        raise ArithmeticError(f"transport LP failed: {res.message}")
    return float(res.fun)


def wasserstein1(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """Exact Wasserstein-1 distance with Euclidean ground cost.

    In one dimension this is the quantile coupling; otherwise the transport
    problem is solved exactly (as an assignment when both measures are
    uniform with equal support size).
    """
    if mu.dim != nu.dim:
        raise ConfigError(f"dimension mismatch: {mu.dim} vs {nu.dim}")
    if mu.dim == 1:
        return _w1_1d(mu, nu)
    if len(mu) > EXACT_W1_MAX_ATOMS or len(nu) > EXACT_W1_MAX_ATOMS:
        raise SizeError(f"exact W1 in d={mu.dim} is limited to {EXACT_W1_MAX_ATOMS} atoms per measure")
    if (len(mu) == len(nu) and np.allclose(mu.weights, mu.weights[0], rtol=0, atol=0)
            and np.allclose(nu.weights, nu.weights[0], rtol=0, atol=0)):
        cost = np.linalg.norm(mu.atoms[:, None, :] - nu.atoms[None, :, :], axis=-1)
        r, c = linear_sum_assignment(cost)
        return float(cost[r, c].sum() / len(mu))
    return w1_lp(mu.atoms, mu.weights, nu.atoms, nu.weights)


@dataclass(frozen=True)
class StateGrid:
    """Uniform cells over ``[-L, L]^d`` with unbounded boundary cells."""

    L: float
    m: int
    dim: int = 1

    def __post_init__(self):
        if not (self.L > 0 and math.isfinite(self.L)):
            raise ConfigError("truncation half-width L must be positive")
        if int(self.m) < 1 or int(self.dim) < 1:
            raise ConfigError("cell count and dimension must be positive")

    @cached_property
    def edges(self):
        """Finite cell edges of one coordinate, length ``m + 1``."""
        return np.linspace(-self.L, self.L, self.m + 1)

    @cached_property
    def axis_centers(self):
        e = self.edges
        return 0.5 * (e[:-1] + e[1:])

    @property
    def n_cells(self):
        return self.m ** self.dim

    @cached_property
    def centers(self):
        """Cell representatives in flat (row-major) cell order, ``(m**d, d)``."""
        mesh = np.meshgrid(*([self.axis_centers] * self.dim), indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)

    @property
    def width(self):
        return 2.0 * self.L / self.m

    @property
    def cell_diameter(self):
        return self.width * math.sqrt(self.dim)

    def axis_index(self, x):
        """Per-coordinate cell index; points outside the box go to the edge cells."""
        idx = np.searchsorted(self.edges[1:-1], np.asarray(x, dtype=float), side="right")
        return idx

    def cell_index(self, x):
        """Flat cell index of points ``(..., d)``."""
        idx = self.axis_index(x)
        flat = np.zeros(idx.shape[:-1], dtype=np.int64)
        for k in range(self.dim):
            flat = flat * self.m + idx[..., k]
        return flat

    def cell_masses(self, atoms, weights=None, axis=-2):
        """Mass per cell of one or a batch of point clouds ``(..., K, d)``."""
        cells = self.cell_index(np.asarray(atoms, dtype=float))
        K = cells.shape[-1]
        lead = cells.shape[:-1]
        flat = cells.reshape(-1, K)
        if weights is None:
            w = np.full(flat.shape, 1.0 / K)
        else:
            w = np.broadcast_to(np.asarray(weights, dtype=float), cells.shape).reshape(-1, K)
        out = np.zeros((flat.shape[0], self.n_cells))
        rows = np.repeat(np.arange(flat.shape[0]), K)
        np.add.at(out, (rows, flat.ravel()), w.ravel())
        return out.reshape(lead + (self.n_cells,))

    def to_dict(self):
        return {"L": self.L, "m": self.m, "dim": self.dim}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["L"]), int(d["m"]), int(d.get("dim", 1)))


@dataclass(frozen=True)
class QuantizedMeasure:
    """Integer counts per grid cell summing to the denominator ``n``."""

    counts: tuple

    def __post_init__(self):
        c = tuple(int(v) for v in self.counts)
        if not c or min(c) < 0 or sum(c) < 1:
            raise ConfigError("counts must be nonnegative with a positive total")
        object.__setattr__(self, "counts", c)

    @property
    def n(self):
        return sum(self.counts)

    def probabilities(self):
        return np.array(self.counts, dtype=float) / self.n

    def to_dict(self, grid=None):
        d = {"counts": list(self.counts)}
        if grid is not None:
            d["grid"] = grid.to_dict()
        return d


def largest_remainder(masses, n):
    """Round a probability vector to a composition of ``n``.

    Floors of ``n * masses`` are topped up one unit at a time in order of
    decreasing remainder, lowest index first among equal remainders.
    """
    masses = np.asarray(masses, dtype=float)
    scaled = masses * n
    base = np.floor(scaled).astype(np.int64)
    short = n - int(base.sum())
    if short > 0:
        rem = scaled - base
        order = np.lexsort((np.arange(len(rem)), -rem))
        base[order[:short]] += 1
    elif short < 0:
        # masses summing slightly above 1 after rounding noise
        order = np.lexsort((np.arange(len(base)), scaled - base))
        for i in order:
            if short == 0:
                break
            if base[i] > 0:
                base[i] -= 1
                short += 1
    return base


def quantize(mu: EmpiricalMeasure, grid: StateGrid, n: int) -> QuantizedMeasure:
    """Cell masses of ``mu`` rounded to a composition of ``n``."""
    if n < 1:
        raise ConfigError("denominator n must be >= 1")
    if mu.dim != grid.dim:
        raise ConfigError("measure and grid dimensions differ")
    masses = grid.cell_masses(mu.atoms, mu.weights)
    return QuantizedMeasure(tuple(largest_remainder(masses, n)))


def dequantize(q: QuantizedMeasure, grid: StateGrid) -> EmpiricalMeasure:
    if len(q.counts) != grid.n_cells:
        raise ConfigError("count vector does not match the grid")
    return EmpiricalMeasure(grid.centers, q.probabilities())


def n_compositions(n, cells):
    return math.comb(n + cells - 1, cells - 1)


def compositions(n, cells, cap=ENUMERATION_CAP):
    """All compositions of ``n`` into ``cells`` parts as an int array.

    Rows are in ascending lexicographic order: ``(0, ..., 0, n)`` first and
    ``(n, 0, ..., 0)`` last.
    """
    total = n_compositions(n, cells)
    if total > cap:
        raise SizeError(f"{total} quantized measures exceed the enumeration cap {cap}")
    out = np.zeros((total, cells), dtype=np.int64)
    row = 0

    def rec(prefix, remaining, k):
        nonlocal row
        if k == cells - 1:
            out[row, :k] = prefix
            out[row, k] = remaining
            row += 1
            return
        for v in range(remaining + 1):
            rec(prefix + [v], remaining - v, k + 1)

    rec([], n, 0)
    return out


def enumerate_quantized(grid: StateGrid, n: int, cap: int = ENUMERATION_CAP):
    return [QuantizedMeasure(tuple(r)) for r in compositions(n, grid.n_cells, cap)]


def _first_min(d):
    return int(np.flatnonzero(d <= d.min() + TIE_TOL)[0])


class MeasureIndex:
    """The enumerated quantized measures of a grid with W1-nearest lookup."""

    def __init__(self, grid: StateGrid, n: int, cap: int = ENUMERATION_CAP):
        if n < 1:
            raise ConfigError("denominator n must be >= 1")
        self.grid = grid
        self.n = n
        self.comps = compositions(n, grid.n_cells, cap)
        self._codes = self._encode(self.comps)
        self._order = np.argsort(self._codes)
        if grid.dim == 1:
            self._gaps = np.diff(grid.axis_centers)
        else:
            c = grid.centers
            self._ground = np.linalg.norm(c[:, None, :] - c[None, :, :], axis=-1)

    def __len__(self):
        return self.comps.shape[0]

    def _encode(self, comps):
        code = np.zeros(comps.shape[:-1], dtype=np.int64)
        for k in range(comps.shape[-1]):
            code = code * (self.n + 1) + comps[..., k]
        return code

    def index_of(self, comps):
        """Row index of compositions ``(..., cells)`` in the enumeration."""
        codes = self._encode(np.asarray(comps, dtype=np.int64))
        pos = np.searchsorted(self._codes[self._order], codes)
        return self._order[pos]

    def probabilities(self):
        return self.comps / float(self.n)

    def project(self, masses):
        """Indices of the W1-nearest enumerated measures to cell-mass vectors.

        Ties go to the lexicographically smallest count vector, which is
        also the earliest in enumeration order.  In one dimension W1 on the
        grid is ``sum_j gap_j |F_p(j) - F_q(j)|`` over cumulative masses, so
        the minimiser rounds every cumulative mass to the nearest multiple
        of ``1/n``, halves downward.
        """
        masses = np.asarray(masses, dtype=float)
        if self.grid.dim == 1:
            cum = np.cumsum(masses, axis=-1)
            C = np.ceil(cum * self.n - 0.5 - TIE_TOL).astype(np.int64)
            C = np.clip(C, 0, self.n)
            C[..., -1] = self.n
            C = np.maximum.accumulate(C, axis=-1)
            comps = np.diff(C, axis=-1, prepend=0)
            return self.index_of(comps)
        return self.project_bruteforce(masses)

    def distances(self, masses):
        """W1 from one cell-mass vector to every enumerated measure."""
        masses = np.asarray(masses, dtype=float)
        probs = self.probabilities()
        if self.grid.dim == 1:
            diff = np.cumsum(masses)[None, :-1] - np.cumsum(probs, axis=1)[:, :-1]
            return np.abs(diff) @ self._gaps
        return np.array([self._grid_w1(masses, q) for q in probs])

    def _grid_w1(self, p, q):
        sp, sq = np.nonzero(p > 0)[0], np.nonzero(q > 0)[0]
        c = self.grid.centers
        return w1_lp(c[sp], p[sp] / p[sp].sum(), c[sq], q[sq])

    def project_bruteforce(self, masses):
        masses = np.asarray(masses, dtype=float)
        flat = masses.reshape(-1, masses.shape[-1])
        out = np.array([_first_min(self.distances(p)) for p in flat], dtype=np.int64)
        return out.reshape(masses.shape[:-1])
