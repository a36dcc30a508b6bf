"""Square-lattice geometry for quarter-turn symmetric states.

The rotation acts on indices by ``L(i, j) = (j, 1 - i)``, a clockwise quarter
turn about the cell corner ``(1/2, 1/2)``.  The wedge

    Lambda = {(i, j) : i >= 1, 2 - i <= j <= i}

is a fundamental domain: ``Z^2`` is the disjoint union of ``L^k(Lambda)`` for
``k = 0..3``.  A field defined on the wedge is extended to the whole lattice by
giving the copy of site ``p`` at ``L^k(p)`` the same radius and a phase shifted
by ``k * pi / 2``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np


class DomainError(ValueError):
    """Raised when an index or parameter lies outside the admissible domain."""


class SiteIndex(NamedTuple):
    i: int
    j: int


class Direction(enum.IntEnum):
    RIGHT = 0
    UP = 1
    LEFT = 2
    DOWN = 3

    @property
    def offset(self) -> tuple[int, int]:
        return _OFFSETS[self]


_OFFSETS = {
    Direction.RIGHT: (1, 0),
    Direction.UP: (0, 1),
    Direction.LEFT: (-1, 0),
    Direction.DOWN: (0, -1),
}


class NeighborKind(enum.Enum):
    INTERIOR = "interior"
    ROTATED = "rotated"
    TRUNCATED = "truncated"


@dataclass(frozen=True)
class NeighborRecord:
    """Where the value of one neighbour of a wedge site comes from.

    ``quarter_turns`` is the ``k`` with ``L^k(target)`` equal to the raw
    neighbour; the neighbour's phase is ``theta[target] + k*pi/2``.
    Interior records have ``k = 0``; truncated records have no target.
    """

    kind: NeighborKind
    target: SiteIndex | None = None
    quarter_turns: int = 0

    @property
    def phase_offset(self) -> float:
        return self.quarter_turns * np.pi / 2


TRUNCATED = NeighborRecord(NeighborKind.TRUNCATED)


def rotate_index(s: tuple[int, int], times: int = 1) -> SiteIndex:
    """Apply ``L(i, j) = (j, 1 - i)`` ``times`` times (negative = inverse)."""
    i, j = s
    for _ in range(times % 4):
        i, j = j, 1 - i
    return SiteIndex(i, j)


def wedge_contains(s: tuple[int, int]) -> bool:
    i, j = s
    return i >= 1 and 2 - i <= j <= i


def wedge_preimage(s: tuple[int, int]) -> tuple[SiteIndex, int]:
    """Return ``(p, k)`` with ``p`` in the infinite wedge and ``L^k(p) == s``."""
    p = SiteIndex(*s)
    for k in range(4):
        if wedge_contains(p):
            return p, k
        p = rotate_index(p, -1)
    raise AssertionError(f"{s} lies in no rotated copy of the wedge")  # pragma: no cover


def partition_class(s: tuple[int, int]) -> int:
    """Index ``k`` of the rotated wedge copy ``L^k(Lambda)`` containing ``s``."""
    return wedge_preimage(s)[1]


@dataclass(frozen=True)
class WedgeTruncation:
    """The truncated wedge ``Lambda_N`` (columns ``1..N``) with resolved neighbours.

    Sites are stored in lexicographic ``(i, j)`` order; that order fixes the
    layout of every per-site vector in the package.  The ``link_*`` arrays list
    every non-truncated neighbour record as ``(source, target, quarter_turns)``
    in site order, then direction order.
    """

    N: int
    sites: tuple[SiteIndex, ...]
    neighbors: tuple[tuple[NeighborRecord, ...], ...]
    index: dict[SiteIndex, int] = field(repr=False, compare=False)
    link_src: np.ndarray = field(repr=False, compare=False)
    link_dst: np.ndarray = field(repr=False, compare=False)
    link_turns: np.ndarray = field(repr=False, compare=False)
    link_dir: np.ndarray = field(repr=False, compare=False)

    @property
    def size(self) -> int:
        return len(self.sites)

    @property
    def columns(self) -> np.ndarray:
        """Column index ``i`` of every site, as float for weighting."""
        return np.array([s.i for s in self.sites], dtype=float)

    @property
    def link_offsets(self) -> np.ndarray:
        return self.link_turns * (np.pi / 2)

    def contains(self, s: tuple[int, int]) -> bool:
        return wedge_contains(s) and s[0] <= self.N

    def site_index(self, s: tuple[int, int]) -> int:
        try:
            return self.index[SiteIndex(*s)]
        except KeyError:
            raise DomainError(f"site {tuple(s)} is not in the wedge with N={self.N}") from None

    def to_json(self) -> dict:
        return {
            "N": self.N,
            "sites": [[s.i, s.j] for s in self.sites],
            "neighbors": {
                f"{s.i},{s.j}": {
                    d.name.lower(): _record_json(rec)
                    for d, rec in zip(Direction, recs)
                }
                for s, recs in zip(self.sites, self.neighbors)
            },
        }


def _record_json(rec: NeighborRecord) -> dict:
    out: dict = {"kind": rec.kind.value}
    if rec.target is not None:
        out["target"] = [rec.target.i, rec.target.j]
    if rec.kind is NeighborKind.ROTATED:
        out["quarter_turns"] = rec.quarter_turns
    return out


def _resolve(N: int, s: SiteIndex, d: Direction) -> NeighborRecord:
    di, dj = d.offset
    raw = SiteIndex(s.i + di, s.j + dj)
    if wedge_contains(raw):
        return NeighborRecord(NeighborKind.INTERIOR, raw, 0) if raw.i <= N else TRUNCATED
    p, k = wedge_preimage(raw)
    if p.i > N:
        return TRUNCATED
    return NeighborRecord(NeighborKind.ROTATED, p, k)


def build_wedge(N: int) -> WedgeTruncation:
    if int(N) != N or N < 1:
        raise DomainError(f"wedge size must be a positive integer, got {N!r}")
    N = int(N)
    sites = tuple(SiteIndex(i, j) for i in range(1, N + 1) for j in range(2 - i, i + 1))
    index = {s: k for k, s in enumerate(sites)}
    neighbors = tuple(tuple(_resolve(N, s, d) for d in Direction) for s in sites)

    src, dst, turns, dirs = [], [], [], []
    for a, recs in enumerate(neighbors):
        for d, rec in zip(Direction, recs):
            if rec.kind is NeighborKind.TRUNCATED:
                continue
            src.append(a)
            dst.append(index[rec.target])
            turns.append(rec.quarter_turns)
            dirs.append(int(d))

    def frozen(values, dtype):
        arr = np.asarray(values, dtype=dtype)
        arr.setflags(write=False)
        return arr

    return WedgeTruncation(
        N=N,
        sites=sites,
        neighbors=neighbors,
        index=index,
        link_src=frozen(src, np.intp),
        link_dst=frozen(dst, np.intp),
        link_turns=frozen(turns, np.intp),
        link_dir=frozen(dirs, np.intp),
    )


def resolve_neighbor(w: WedgeTruncation, s: tuple[int, int], direction: Direction) -> NeighborRecord:
    return w.neighbors[w.site_index(s)][Direction(direction)]


def square_sites(L: int) -> list[SiteIndex]:
    """Sites of the square ``{1-L..L}^2`` in lexicographic order."""
    return [SiteIndex(i, j) for i in range(1 - L, L + 1) for j in range(1 - L, L + 1)]
