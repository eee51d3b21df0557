"""Iterated Lie bracket families and numerical rank checks.

`generate_LN` closes the diffusion fields under bracketing with the drift
and with each other, breadth first: level 0 holds V1..Vm, and level k+1
holds the brackets of every level-k member with each of V0..Vm, simplified,
with syntactic zeros and syntactic duplicates dropped.  `span_dimension`
evaluates a family at a point and reports the numerical rank of the
d x |family| matrix.  `full_weak_hoermander_check` searches for the
smallest depth at which the family spans the full state space at every
time on a grid over one period.

All members carry bracket words such as "[V0,[V0,V1]]" for reporting, and
have time component identically zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field as _field
from typing import Optional

import numpy as np

from .expr import SymVectorField, is_zero, lie_bracket
from .model import ModelSpec, symbolic_fields, x_star

__all__ = [
    "BracketSet", "RankReport", "CheckReport",
    "generate_LN", "span_dimension", "full_weak_hoermander_check",
]

DEFAULT_TOL = 1e-8
DEFAULT_MAX_NODES = 500_000


@dataclass(frozen=True)
class BracketSet:
    """Bracket family up to iteration depth N over a d-dimensional state.

    `levels[k]` holds the members first produced at depth k; `fields` is
    their concatenation.  Every member has zero time component.
    """

    dim: int
    N: int
    levels: tuple

    def __post_init__(self):
        for lvl in self.levels:
            for member in lvl:
                if not is_zero(member.components[0]):
                    raise ValueError(f"member {member.word} transports time")

    @property
    def fields(self) -> tuple:
        return tuple(f for lvl in self.levels for f in lvl)

    def __len__(self) -> int:
        return sum(len(lvl) for lvl in self.levels)


def _extend_level(v_all, level, seen, max_nodes):
    """Brackets of `level` members with each of v_all, new unique ones."""
    out = []
    for L in level:
        for j, V in enumerate(v_all):
            word = f"[{L.word},V{j}]" if j else f"[V0,{L.word}]"
            if j == 0:
                # the drift transports time, so it goes in the first slot
                b = lie_bracket(v_all[0], L, max_nodes=max_nodes, word=word)
            else:
                b = lie_bracket(L, V, max_nodes=max_nodes, word=word)
            if b.is_zero():
                continue
            key = b.components
            if key in seen:
                continue
            seen.add(key)
            out.append(b)
    return tuple(out)


def generate_LN(v0: SymVectorField, vs, N: int,
                max_nodes: int = DEFAULT_MAX_NODES) -> BracketSet:
    """Close {V1..Vm} under bracketing with V0..Vm up to depth N."""
    if N < 0:
        raise ValueError("N must be >= 0")
    vs = tuple(vs)
    if not vs:
        raise ValueError("at least one diffusion field is required")
    dim = v0.dim
    if any(v.dim != dim for v in vs):
        raise ValueError("all fields must share one dimension")
    v_all = (v0,) + vs
    seen = {v.components for v in vs}
    levels = [vs]
    for _ in range(N):
        nxt = _extend_level(v_all, levels[-1], seen, max_nodes)
        levels.append(nxt)
        if not nxt:
            break
    return BracketSet(dim=dim, N=N, levels=tuple(levels))


def extend(bs: BracketSet, v0: SymVectorField, vs,
           max_nodes: int = DEFAULT_MAX_NODES) -> BracketSet:
    """The depth-(N+1) family grown from an existing one."""
    v_all = (v0,) + tuple(vs)
    seen = {f.components for f in bs.fields}
    nxt = _extend_level(v_all, bs.levels[-1], seen, max_nodes) if bs.levels[-1] else ()
    return BracketSet(dim=bs.dim, N=bs.N + 1, levels=bs.levels + (nxt,))


@dataclass(frozen=True)
class RankReport:
    s: float
    x: tuple
    N: int
    dim: int
    singular_values: tuple
    tol: float
    rank: int

    def __post_init__(self):
        if self.rank > self.dim:
            raise ValueError("rank cannot exceed the state dimension")

    @property
    def full(self) -> bool:
        return self.rank == self.dim

    @property
    def verdict(self) -> str:
        return "full" if self.full else "deficient"


def _evaluation_matrix(bs: BracketSet, s: float, x, compiled=None) -> np.ndarray:
    cols = []
    members = bs.fields
    fns = compiled if compiled is not None else [m.evaluate for m in members]
    xt = tuple(float(a) for a in x)
    for fn in fns:
        cols.append(fn(s, xt))
    return np.array(cols, dtype=float).T


def _rank_from_matrix(mat: np.ndarray, tol: float):
    sv = np.linalg.svd(mat, compute_uv=False)
    smax = max(float(sv[0]) if sv.size else 0.0, 1e-300)
    rank = int(np.count_nonzero(sv > tol * smax))
    return sv, rank


def span_dimension(bs: BracketSet, s: float, x, tol: float = DEFAULT_TOL) -> RankReport:
    """Numerical rank of the family evaluated at (s, x)."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    mat = _evaluation_matrix(bs, s, x)
    sv, rank = _rank_from_matrix(mat, tol)
    return RankReport(s=float(s), x=tuple(float(a) for a in x), N=bs.N,
                      dim=bs.dim, singular_values=tuple(float(a) for a in sv),
                      tol=tol, rank=rank)


@dataclass(frozen=True)
class CheckReport:
    """Outcome of the minimal-depth search at one state point."""

    x: tuple
    dim: int
    N_max: int
    tol: float
    grid: tuple
    minimal_N: Optional[int]
    # per depth: {N: ((s, rank, singular_values), ...)}
    details: dict = _field(repr=False, default_factory=dict)

    @property
    def established(self) -> bool:
        return self.minimal_N is not None

    def failing_times(self, N: int) -> tuple:
        return tuple(s for s, rank, _ in self.details.get(N, ())
                     if rank < self.dim)

    def summary(self) -> str:
        head = (f"full span at N = {self.minimal_N}" if self.established
                else f"not established up to N = {self.N_max}")
        return f"{head} (dim {self.dim}, {len(self.grid)} grid times, tol {self.tol:g})"


def full_weak_hoermander_check(spec: ModelSpec, x=None, N_max: int = 6,
                               time_grid_size: int = 64, tol: float = DEFAULT_TOL,
                               extra_times=(), max_nodes: int = DEFAULT_MAX_NODES) -> CheckReport:
    """Smallest N with full rank at every grid time, or "not established".

    The grid is `time_grid_size` equispaced times over one period plus any
    `extra_times`; x defaults to the model's distinguished point.
    """
    if x is None:
        x = x_star(spec)
    v0, v1 = symbolic_fields(spec)
    T = spec.period
    grid = [i * T / time_grid_size for i in range(time_grid_size)]
    grid.extend(float(s) for s in extra_times)
    grid = tuple(sorted(set(grid)))
    details = {}
    minimal = None
    bs = generate_LN(v0, (v1,), 0, max_nodes=max_nodes)
    fns = [m.compiled() for m in bs.fields]
    for N in range(1, N_max + 1):
        bs = extend(bs, v0, (v1,), max_nodes=max_nodes)
        if not bs.levels[-1]:
            # the closure stabilised below full rank; deeper N cannot help
            break
        fns.extend(m.compiled() for m in bs.levels[-1])
        rows = []
        all_full = True
        for s in grid:
            mat = _evaluation_matrix(bs, s, x, compiled=fns)
            sv, rank = _rank_from_matrix(mat, tol)
            rows.append((s, rank, tuple(float(a) for a in sv)))
            all_full = all_full and rank == bs.dim
        details[N] = tuple(rows)
        if all_full:
            minimal = N
            break
    return CheckReport(x=tuple(float(a) for a in np.asarray(x)), dim=spec.dim,
                       N_max=N_max, tol=tol, grid=grid, minimal_N=minimal,
                       details=details)
