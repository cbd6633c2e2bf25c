"""Solver tests: the worked three-constraint example, depths, and log round-trips."""

import pytest

from geocsp.errors import InconsistencyError, UnsolvableError
from geocsp.geometry import Constraint, point_to_index
from geocsp.solver import (
    Problem,
    emit_solver_log,
    parse_solver_log,
    point_depths,
    solve,
)


@pytest.fixture
def worked_example():
    return Problem(
        grid_side=20,
        variables=tuple("ABCDEFGH"),
        constraints=(
            Constraint("T", ("A", "B", "C", "D")),
            Constraint("S", ("B", "D", "E", "F")),
            Constraint("S", ("B", "F", "G", "H")),
        ),
        fixed={"A": (5, 2), "B": (2, 2), "C": (4, 3)},
    )


WORKED_SOLUTION = {"D": (1, 3), "E": (0, 2), "F": (1, 1), "G": (2, 0), "H": (3, 1)}


class TestSolve:
    def test_worked_example_solution(self, worked_example):
        assignment, _ = solve(worked_example)
        for var, point in WORKED_SOLUTION.items():
            assert assignment[var] == point

    def test_worked_example_depths(self, worked_example):
        depths = point_depths(worked_example)
        assert depths == {
            "A": 0, "B": 0, "C": 0,
            "D": 1, "E": 2, "F": 2, "G": 3, "H": 3,
        }

    def test_single_midpoint(self):
        p = Problem(
            grid_side=10,
            variables=("A", "B", "C"),
            constraints=(Constraint("M", ("A", "B", "C")),),
            fixed={"A": (0, 0), "C": (2, 4)},
        )
        assignment, info = solve(p)
        assert assignment["B"] == (1, 2)
        assert info.point_depth["B"] == 1
        assert info.max_depth == 1

    def test_constraint_order_is_input_order_for_roots(self):
        p = Problem(
            grid_side=10,
            variables=("A", "B", "C", "D", "E", "F"),
            constraints=(
                Constraint("M", ("A", "B", "C")),
                Constraint("M", ("D", "E", "F")),
            ),
            fixed={"A": (0, 0), "C": (2, 2), "D": (4, 4), "F": (6, 6)},
        )
        _, info = solve(p)
        assert info.constraint_order == [0, 1]

    def test_order_independence(self, worked_example):
        reference, _ = solve(worked_example)
        shuffled = Problem(
            grid_side=20,
            variables=worked_example.variables,
            constraints=worked_example.constraints[::-1],
            fixed=worked_example.fixed,
        )
        assignment, _ = solve(shuffled)
        assert assignment == reference

    def test_unsolvable(self):
        p = Problem(
            grid_side=10,
            variables=("A", "B", "C"),
            constraints=(Constraint("M", ("A", "B", "C")),),
            fixed={"A": (0, 0)},
        )
        with pytest.raises(UnsolvableError):
            solve(p)

    def test_inconsistency(self):
        # two midpoints derive B differently from the same endpoints
        p = Problem(
            grid_side=10,
            variables=("A", "B", "C", "D"),
            constraints=(
                Constraint("M", ("A", "B", "C")),
                Constraint("M", ("A", "B", "D")),
            ),
            fixed={"A": (0, 0), "C": (4, 0), "D": (6, 0)},
        )
        with pytest.raises(InconsistencyError):
            solve(p)

    def test_validate_accepts_labeled_worked_example(self, worked_example):
        labeled = Problem(
            grid_side=20,
            variables=worked_example.variables,
            constraints=worked_example.constraints,
            fixed=worked_example.fixed,
            labels=WORKED_SOLUTION,
        )
        labeled.validate()

    def test_validate_rejects_bad_labels(self, worked_example):
        bad = dict(WORKED_SOLUTION, D=(0, 0))
        labeled = Problem(
            grid_side=20,
            variables=worked_example.variables,
            constraints=worked_example.constraints,
            fixed=worked_example.fixed,
            labels=bad,
        )
        with pytest.raises(ValueError):
            labeled.validate()


class TestSolverLog:
    def test_single_constraint_block(self):
        p = Problem(
            grid_side=10,
            variables=("A", "B", "C"),
            constraints=(Constraint("M", ("A", "B", "C")),),
            fixed={"A": (0, 0), "C": (2, 4)},
        )
        log = emit_solver_log(p)
        lines = log.strip().split("\n")
        assert lines[0] == "MIDPOINT ( 0 1 2 ) ;"
        assert lines[1] == "fixed 0 = #0 , 2 = #42 ;"
        assert lines[2] == "Solution begins ;"
        assert lines[3] == "Con MIDPOINT ( 0 1 2 ) ;"
        assert lines[4] == "Known 0 = #0 , 2 = #42 ;"
        assert lines[5] == "Impl 1 = #21 ;"
        assert lines[6] == "Solution ends"

    def test_con_precedes_impl(self, worked_example):
        log = emit_solver_log(worked_example)
        assert log.index("Con TRANSLATION ( 0 1 2 3 ) ;") < log.index("Impl 3 = #61 ;")
        assert "SQUARE" in log and "TRANSLATION" in log

    def test_round_trip(self, worked_example):
        log = emit_solver_log(worked_example)
        parsed = parse_solver_log(log)
        assert parsed.constraints == [
            ("T", [0, 1, 2, 3]),
            ("S", [1, 3, 4, 5]),
            ("S", [1, 5, 6, 7]),
        ]
        n = worked_example.grid_side
        var_pos = {v: i for i, v in enumerate(worked_example.variables)}
        assert parsed.fixed == {
            var_pos[v]: point_to_index(p, n) for v, p in worked_example.fixed.items()
        }
        assignment, _ = solve(worked_example)
        assert parsed.solution == {
            var_pos[v]: point_to_index(p, n) for v, p in assignment.items()
        }

    def test_round_trip_generated(self):
        from geocsp.generator import generate_dataset, training_config

        problems, _ = generate_dataset(training_config(seed=42), 25)
        for p in problems:
            parsed = parse_solver_log(emit_solver_log(p))
            var_pos = {v: i for i, v in enumerate(p.variables)}
            assignment, _ = solve(p)
            assert parsed.solution == {
                var_pos[v]: point_to_index(q, p.grid_side) for v, q in assignment.items()
            }
            assert parsed.constraints == [
                (c.kind, [var_pos[v] for v in c.args]) for c in p.constraints
            ]

    def test_parse_rejects_garbage(self):
        with pytest.raises(ValueError):
            parse_solver_log("nonsense")
