"""Exact integer geometry on the discrete grid.

Points are integer pairs ``(x, y)``.  A grid of side ``n`` holds the points
with ``0 <= x, y < n``; intermediate solver values may lie anywhere on the
integer plane and are range-checked only when placed on a grid.

Four constraint kinds relate points:

* ``M(A, B, C)``  -- B is the midpoint of segment AC.
* ``R(A, B, C, D)`` -- A, B span an axis of symmetry; C and D reflect
  each other across it.
* ``S(A, B, C, D)`` -- the vertices form a square in this cyclic order.
  The orientation convention is fixed: with ``rot90(x, y) = (-y, x)``,
  ``C = B + rot90(B - A)`` and ``D = A + rot90(B - A)``.
* ``T(A, B, C, D)`` -- the vector D - C is a translation of B - A.

Every kind is functionally determined: once a *determining subset* of its
arguments is known, the remaining (*dependent*) arguments are unique, and
:func:`resolve_constraint` computes them exactly.  All arithmetic is integer
or rational; a non-integer result is an error, never rounded.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .errors import (
    DegeneracyError,
    GridRangeError,
    IntegralityError,
    InconsistencyError,
    MissingAssignmentError,
    UnderdeterminedError,
)

Point = tuple[int, int]
Assignment = dict[str, Point]

KINDS = ("M", "R", "S", "T")
ARITY = {"M": 3, "R": 4, "S": 4, "T": 4}

#: Long names used by the solver-log format.
KIND_NAMES = {"M": "MIDPOINT", "R": "REFLECTION", "S": "SQUARE", "T": "TRANSLATION"}
KIND_FROM_NAME = {v: k for k, v in KIND_NAMES.items()}

#: Valid determining slot subsets per kind (slot indices into ``args``).
#: M: any 2 of 3.  T: any 3 of 4.  R: both axis points plus one reflected
#: point (an unknown axis point is underdetermined).  S: any vertex pair,
#: adjacent or diagonal.
DETERMINING_SUBSETS: dict[str, tuple[tuple[int, ...], ...]] = {
    "M": ((0, 1), (0, 2), (1, 2)),
    "R": ((0, 1, 2), (0, 1, 3)),
    "S": ((0, 1), (1, 2), (2, 3), (0, 3), (0, 2), (1, 3)),
    "T": ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)),
}

#: Adjacent square slot pairs in cycle order (P immediately precedes Q).
_SQUARE_ADJACENT = {(0, 1): (2, 3), (1, 2): (3, 0), (2, 3): (0, 1), (0, 3): (1, 2)}
_SQUARE_DIAGONAL = ((0, 2), (1, 3))


@dataclass(frozen=True, slots=True)
class Constraint:
    """A typed constraint over named variables; argument order is significant."""

    kind: str
    args: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown constraint kind {self.kind!r}")
        if len(self.args) != ARITY[self.kind]:
            raise ValueError(
                f"{self.kind} takes {ARITY[self.kind]} arguments, got {len(self.args)}"
            )
        if not isinstance(self.args, tuple):
            object.__setattr__(self, "args", tuple(self.args))


def point_to_index(p: Point, n: int) -> int:
    """Map a grid point to its class index ``x + y * n``."""
    x, y = p
    if not (0 <= x < n and 0 <= y < n):
        raise GridRangeError(f"point {p} outside {n}x{n} grid")
    return x + y * n


def index_to_point(index: int, n: int) -> Point:
    """Inverse of :func:`point_to_index`."""
    if not (0 <= index < n * n):
        raise GridRangeError(f"index {index} outside {n}x{n} grid")
    return (index % n, index // n)


def rot90(v: Point) -> Point:
    """Rotate a vector by 90 degrees counterclockwise."""
    return (-v[1], v[0])


def _add(a: Point, b: Point) -> Point:
    return (a[0] + b[0], a[1] + b[1])


def _sub(a: Point, b: Point) -> Point:
    return (a[0] - b[0], a[1] - b[1])


def _cross(a: Point, b: Point) -> int:
    return a[0] * b[1] - a[1] * b[0]


def _dot(a: Point, b: Point) -> int:
    return a[0] * b[0] + a[1] * b[1]


def _halve(p: Point, context: str) -> Point:
    if p[0] % 2 or p[1] % 2:
        raise IntegralityError(f"{context}: {p} is not divisible by 2")
    return (p[0] // 2, p[1] // 2)


def check_constraint(c: Constraint, a: Assignment) -> bool:
    """Exact predicate check; every argument of ``c`` must be assigned."""
    try:
        pts = [a[v] for v in c.args]
    except KeyError as exc:
        raise MissingAssignmentError(
            f"variable {exc.args[0]!r} of {c.kind}{c.args} is unassigned"
        ) from None
    if c.kind == "M":
        pa, pb, pc = pts
        return (2 * pb[0], 2 * pb[1]) == (pa[0] + pc[0], pa[1] + pc[1])
    if c.kind == "T":
        pa, pb, pc, pd = pts
        return _sub(pd, pc) == _sub(pb, pa)
    if c.kind == "S":
        pa, pb, pc, pd = pts
        side = _sub(pb, pa)
        if side == (0, 0):
            return False
        turn = rot90(side)
        return pc == _add(pb, turn) and pd == _add(pa, turn)
    # R: axis must be non-degenerate, the midpoint of CD lies on line AB,
    # and CD is perpendicular to AB.  Both conditions stay integral because
    # the midpoint test is doubled: cross(B - A, C + D - 2A) == 0.
    pa, pb, pc, pd = pts
    axis = _sub(pb, pa)
    if axis == (0, 0):
        return False
    doubled_mid = (pc[0] + pd[0] - 2 * pa[0], pc[1] + pd[1] - 2 * pa[1])
    return _cross(axis, doubled_mid) == 0 and _dot(_sub(pd, pc), axis) == 0


def reflect_across(p: Point, a: Point, b: Point) -> Point:
    """Mirror ``p`` across the line through ``a`` and ``b`` (exact rationals)."""
    if a == b:
        raise DegeneracyError(f"reflection axis degenerate: {a} == {b}")
    ax = _sub(b, a)
    denom = ax[0] * ax[0] + ax[1] * ax[1]
    t = Fraction(_dot(_sub(p, a), ax), denom)
    rx = 2 * (a[0] + t * ax[0]) - p[0]
    ry = 2 * (a[1] + t * ax[1]) - p[1]
    if rx.denominator != 1 or ry.denominator != 1:
        raise IntegralityError(f"reflection of {p} across {a}-{b} is off-lattice")
    return (int(rx), int(ry))


def _resolve_square(known: dict[int, Point]) -> dict[int, Point]:
    slots = tuple(sorted(known))
    if slots in _SQUARE_ADJACENT:
        # Cycle order is 0->1->2->3->0; for the pair (0, 3), slot 0 follows 3.
        p_slot, q_slot = (3, 0) if slots == (0, 3) else slots
        p, q = known[p_slot], known[q_slot]
        if p == q:
            raise DegeneracyError("square side has zero length")
        turn = rot90(_sub(q, p))
        after_q, before_p = _SQUARE_ADJACENT[slots]
        return {after_q: _add(q, turn), before_p: _add(p, turn)}
    if slots in _SQUARE_DIAGONAL:
        p, r = known[slots[0]], known[slots[1]]
        if p == r:
            raise DegeneracyError("square diagonal has zero length")
        center2 = _add(p, r)  # doubled center; halved below per output
        half2 = _sub(r, p)  # doubled half-diagonal
        turn2 = rot90(half2)
        # With diagonal (0, 2): slot 1 = center - rot90(half), slot 3 = center + rot90(half).
        # With diagonal (1, 3): slot 2 = center - rot90(half), slot 0 = center + rot90(half).
        minus = _halve(_sub(center2, turn2), "square diagonal")
        plus = _halve(_add(center2, turn2), "square diagonal")
        if slots == (0, 2):
            return {1: minus, 3: plus}
        return {2: minus, 0: plus}
    raise UnderdeterminedError(f"square cannot be resolved from slots {slots}")


def resolve_slots(kind: str, known: dict[int, Point]) -> dict[int, Point]:
    """Compute dependent slot values from exactly one determining subset.

    ``known`` maps slot index -> point and its key set must equal one of the
    kind's determining subsets.  Returns values for the remaining slots only.
    """
    slots = tuple(sorted(known))
    if slots not in DETERMINING_SUBSETS[kind]:
        raise UnderdeterminedError(
            f"slots {slots} are not a determining subset of {kind}"
        )
    if kind == "M":
        if slots == (0, 2):
            return {1: _halve(_add(known[0], known[2]), "midpoint")}
        if slots == (0, 1):
            return {2: _sub((2 * known[1][0], 2 * known[1][1]), known[0])}
        return {0: _sub((2 * known[1][0], 2 * known[1][1]), known[2])}
    if kind == "T":
        if slots == (0, 1, 2):
            return {3: _add(known[2], _sub(known[1], known[0]))}
        if slots == (0, 1, 3):
            return {2: _sub(known[3], _sub(known[1], known[0]))}
        if slots == (0, 2, 3):
            return {1: _add(known[0], _sub(known[3], known[2]))}
        return {0: _sub(known[1], _sub(known[3], known[2]))}
    if kind == "R":
        dependent = 3 if slots == (0, 1, 2) else 2
        source = 2 if dependent == 3 else 3
        return {dependent: reflect_across(known[source], known[0], known[1])}
    return _resolve_square(known)


def determining_slots(c: Constraint, a: Assignment) -> tuple[int, ...]:
    """Slot indices of ``c`` whose variables are assigned in ``a``."""
    return tuple(i for i, v in enumerate(c.args) if v in a)


def resolve_constraint(c: Constraint, a: Assignment) -> Assignment:
    """Resolve the dependent variables of ``c`` from a determining assignment.

    Exactly the determining variables of ``c`` must be assigned in ``a``.
    Returns the assignment extension for the dependent variables.
    """
    known_slots = determining_slots(c, a)
    resolved = resolve_slots(c.kind, {i: a[c.args[i]] for i in known_slots})
    extension: Assignment = {}
    for slot, point in resolved.items():
        var = c.args[slot]
        if var in extension and extension[var] != point:
            raise InconsistencyError(
                f"repeated variable {var!r} resolves to both {extension[var]} and {point}"
            )
        extension[var] = point
    return extension
