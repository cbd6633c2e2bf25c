"""Exact-geometry tests, anchored by an exhaustive-search oracle."""

from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geocsp.errors import (
    DegeneracyError,
    GeoCspError,
    GridRangeError,
    IntegralityError,
    MissingAssignmentError,
    UnderdeterminedError,
)
from geocsp.geometry import (
    ARITY,
    DETERMINING_SUBSETS,
    KINDS,
    Constraint,
    check_constraint,
    index_to_point,
    point_to_index,
    resolve_constraint,
    resolve_slots,
    rot90,
)

VARS = ("a", "b", "c", "d")


def make(kind, *points):
    names = VARS[: ARITY[kind]]
    return Constraint(kind, names), dict(zip(names, points))


class TestIndexing:
    def test_worked_example(self):
        assert point_to_index((5, 2), 20) == 45

    def test_corners(self):
        assert point_to_index((0, 0), 20) == 0
        assert point_to_index((19, 19), 20) == 399

    def test_out_of_grid(self):
        with pytest.raises(GridRangeError):
            point_to_index((20, 0), 20)
        with pytest.raises(GridRangeError):
            point_to_index((0, -1), 20)
        with pytest.raises(GridRangeError):
            index_to_point(400, 20)

    @given(st.integers(2, 50), st.data())
    def test_round_trip(self, n, data):
        x = data.draw(st.integers(0, n - 1))
        y = data.draw(st.integers(0, n - 1))
        assert index_to_point(point_to_index((x, y), n), n) == (x, y)


class TestCheck:
    def test_midpoint(self):
        c, a = make("M", (0, 0), (1, 1), (2, 2))
        assert check_constraint(c, a)

    def test_square_worked_example(self):
        c, a = make("S", (2, 2), (1, 3), (0, 2), (1, 1))
        assert check_constraint(c, a)

    def test_second_square_worked_example(self):
        c, a = make("S", (2, 2), (1, 1), (2, 0), (3, 1))
        assert check_constraint(c, a)

    def test_translation_worked_example(self):
        c, a = make("T", (5, 2), (2, 2), (4, 3), (1, 3))
        assert check_constraint(c, a)

    def test_reflection_coincident_on_axis(self):
        # a point on the axis reflects to itself
        c, a = make("R", (0, 0), (0, 5), (0, 3), (0, 3))
        assert check_constraint(c, a)
        c, a = make("R", (0, 0), (0, 5), (0, 3), (0, 4))
        assert not check_constraint(c, a)

    def test_missing_assignment(self):
        c, a = make("M", (0, 0), (1, 1), (2, 2))
        del a["c"]
        with pytest.raises(MissingAssignmentError):
            check_constraint(c, a)

    def test_rot90_period_four(self):
        v = (3, -7)
        for _ in range(4):
            v = rot90(v)
        assert v == (3, -7)


class TestResolve:
    def test_square_adjacent_pair(self):
        c, _ = make("S")
        ext = resolve_constraint(Constraint("S", VARS), {"a": (2, 2), "b": (1, 3)})
        assert ext == {"c": (0, 2), "d": (1, 1)}

    def test_second_square(self):
        ext = resolve_constraint(Constraint("S", VARS), {"a": (2, 2), "b": (1, 1)})
        assert ext == {"c": (2, 0), "d": (3, 1)}

    def test_midpoint_mean(self):
        ext = resolve_constraint(Constraint("M", VARS[:3]), {"a": (0, 0), "c": (2, 4)})
        assert ext == {"b": (1, 2)}

    def test_reflection_vertical_axis(self):
        ext = resolve_constraint(
            Constraint("R", VARS), {"a": (1, 0), "b": (1, 5), "c": (0, 2)}
        )
        assert ext == {"d": (2, 2)}

    def test_midpoint_parity_error(self):
        with pytest.raises(IntegralityError):
            resolve_constraint(Constraint("M", VARS[:3]), {"a": (0, 0), "c": (1, 0)})

    def test_square_diagonal_parity_error(self):
        with pytest.raises(IntegralityError):
            resolve_constraint(Constraint("S", VARS), {"a": (0, 0), "c": (1, 0)})

    def test_off_lattice_reflection(self):
        with pytest.raises(IntegralityError):
            resolve_constraint(
                Constraint("R", VARS), {"a": (0, 0), "b": (2, 1), "c": (1, 0)}
            )

    def test_degenerate_square(self):
        with pytest.raises(DegeneracyError):
            resolve_constraint(Constraint("S", VARS), {"a": (1, 1), "b": (1, 1)})

    def test_degenerate_axis(self):
        with pytest.raises(DegeneracyError):
            resolve_constraint(
                Constraint("R", VARS), {"a": (1, 1), "b": (1, 1), "c": (0, 0)}
            )

    def test_wrong_subset_underdetermined(self):
        with pytest.raises(UnderdeterminedError):
            resolve_constraint(Constraint("T", VARS), {"a": (0, 0), "b": (1, 1)})
        # axis point of a reflection can never be dependent
        with pytest.raises(UnderdeterminedError):
            resolve_constraint(
                Constraint("R", VARS), {"b": (0, 1), "c": (1, 1), "d": (2, 2)}
            )


def brute_force(kind, det, n):
    """Unique grid completion satisfying check_constraint, or None."""
    arity = ARITY[kind]
    names = VARS[:arity]
    dep = [s for s in range(arity) if s not in det]
    solutions = []
    grid = list(product(range(n), repeat=2))
    for combo in product(grid, repeat=len(dep)):
        a = {names[s]: p for s, p in det.items()}
        a.update({names[s]: p for s, p in zip(dep, combo)})
        if check_constraint(Constraint(kind, names), a):
            solutions.append({s: a[names[s]] for s in dep})
    if not solutions:
        return None
    assert len(solutions) == 1, f"{kind} {det} has {len(solutions)} completions"
    return solutions[0]


def resolve_or_none(kind, det, n):
    """resolve_slots restricted to the grid: None when it errors or leaves it."""
    try:
        out = resolve_slots(kind, det)
    except (IntegralityError, DegeneracyError):
        return None
    if any(not (0 <= x < n and 0 <= y < n) for x, y in out.values()):
        return None
    return out


class TestBruteForceEquivalence:
    @pytest.mark.parametrize("kind", KINDS)
    def test_exhaustive_small_grid(self, kind):
        n = 3
        grid = list(product(range(n), repeat=2))
        for subset in DETERMINING_SUBSETS[kind]:
            for values in product(grid, repeat=len(subset)):
                det = dict(zip(subset, values))
                assert resolve_or_none(kind, det, n) == brute_force(kind, det, n)

    @pytest.mark.parametrize("kind", KINDS)
    def test_sampled_larger_grids(self, kind):
        rng = np.random.default_rng(20240 + ord(kind))
        for n in (5, 7):
            for subset in DETERMINING_SUBSETS[kind]:
                for _ in range(40):
                    det = {
                        s: (int(rng.integers(n)), int(rng.integers(n))) for s in subset
                    }
                    assert resolve_or_none(kind, det, n) == brute_force(kind, det, n)


@st.composite
def satisfied_constraints(draw):
    """A constraint together with a full assignment that satisfies it."""
    kind = draw(st.sampled_from(KINDS))
    subset = draw(st.sampled_from(DETERMINING_SUBSETS[kind]))
    coord = st.integers(-12, 12)
    det = {s: (draw(coord), draw(coord)) for s in subset}
    try:
        dependents = resolve_slots(kind, det)
    except GeoCspError:
        return None
    names = VARS[: ARITY[kind]]
    assignment = {names[s]: p for s, p in {**det, **dependents}.items()}
    return Constraint(kind, names), assignment, subset


class TestRoundTrip:
    @settings(max_examples=300)
    @given(satisfied_constraints())
    def test_hide_and_recover(self, case):
        if case is None:
            return
        c, full, subset = case
        assert check_constraint(c, full)
        det_vars = {c.args[s] for s in subset}
        partial = {v: p for v, p in full.items() if v in det_vars}
        recovered = resolve_constraint(c, partial)
        for v, p in recovered.items():
            assert full[v] == p

    @settings(max_examples=300)
    @given(satisfied_constraints())
    def test_resolution_satisfies_check(self, case):
        if case is None:
            return
        c, full, subset = case
        partial = {c.args[s]: full[c.args[s]] for s in subset}
        extension = resolve_constraint(c, partial)
        assert check_constraint(c, {**partial, **extension})
