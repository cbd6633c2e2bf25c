"""Deterministic full-problem solver and the textual solver-log format.

A :class:`Problem` pins a few points with position ("P") assignments and
relates the rest through typed constraints.  Because every constraint is
functionally determined by its determining variables, forward propagation to
a fixpoint recovers the unique full assignment: repeatedly pick the first
constraint (in input order) whose determining variables are all known and
resolve its dependents.  The resolution sequence, per-variable depths, and a
chain-of-thought style log of the run are all exposed.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import InconsistencyError, UnderdeterminedError, UnsolvableError
from .geometry import (
    ARITY,
    DETERMINING_SUBSETS,
    KIND_FROM_NAME,
    KIND_NAMES,
    Assignment,
    Constraint,
    Point,
    check_constraint,
    point_to_index,
    resolve_slots,
)


@dataclass(frozen=True)
class Problem:
    """A grid-sized constraint problem with fixed points and optional labels."""

    grid_side: int
    variables: tuple[str, ...]
    constraints: tuple[Constraint, ...]
    fixed: dict[str, Point]
    labels: dict[str, Point] | None = None

    @property
    def unknowns(self) -> tuple[str, ...]:
        return tuple(v for v in self.variables if v not in self.fixed)

    def full_assignment(self) -> Assignment:
        if self.labels is None:
            raise ValueError("problem carries no labels")
        return {**self.fixed, **self.labels}

    def validate(self) -> None:
        """Check the structural invariants; raises on violation."""
        n = self.grid_side
        names = set(self.variables)
        if len(names) != len(self.variables):
            raise ValueError("duplicate variable names")
        for c in self.constraints:
            missing = [v for v in c.args if v not in names]
            if missing:
                raise ValueError(f"constraint {c} uses undeclared variables {missing}")
        for v, p in self.fixed.items():
            point_to_index(p, n)
        if self.labels is not None:
            overlap = set(self.fixed) & set(self.labels)
            if overlap:
                raise ValueError(f"variables both fixed and labeled: {sorted(overlap)}")
            if set(self.fixed) | set(self.labels) != names:
                raise ValueError("fixed and labels do not cover all variables")
            for v, p in self.labels.items():
                point_to_index(p, n)
            full = self.full_assignment()
            for c in self.constraints:
                if not check_constraint(c, full):
                    raise ValueError(f"labels violate constraint {c}")


@dataclass
class DependencyInfo:
    """Resolution bookkeeping produced by :func:`solve`.

    ``constraint_order`` lists constraint indices in resolution order;
    ``point_depth`` maps each variable to the number of sequential
    resolution steps needed to derive it (fixed points have depth 0).
    """

    constraint_order: list[int] = field(default_factory=list)
    point_depth: dict[str, int] = field(default_factory=dict)
    max_depth: int = 0


@dataclass
class ResolutionStep:
    constraint_index: int
    known: list[tuple[str, Point]]  # determining variables in slot order
    implied: list[tuple[str, Point]]  # newly derived variables in slot order


def _resolvable_subset(c: Constraint, assigned: Assignment) -> tuple[int, ...] | None:
    known = frozenset(i for i, v in enumerate(c.args) if v in assigned)
    for subset in DETERMINING_SUBSETS[c.kind]:
        if frozenset(subset) <= known:
            return subset
    return None


def _solve(problem: Problem) -> tuple[Assignment, DependencyInfo, list[ResolutionStep]]:
    assignment: Assignment = dict(problem.fixed)
    info = DependencyInfo(point_depth={v: 0 for v in problem.fixed})
    steps: list[ResolutionStep] = []
    pending = list(range(len(problem.constraints)))

    while pending:
        for pos, ci in enumerate(pending):
            c = problem.constraints[ci]
            subset = _resolvable_subset(c, assignment)
            if subset is None:
                continue
            known_points = {i: assignment[c.args[i]] for i in subset}
            derived = resolve_slots(c.kind, known_points)
            depth = 1 + max(info.point_depth[c.args[i]] for i in subset)
            implied: list[tuple[str, Point]] = []
            for slot in sorted(derived):
                var, value = c.args[slot], derived[slot]
                if var in assignment:
                    if assignment[var] != value:
                        raise InconsistencyError(
                            f"{var!r} re-derived as {value}, already {assignment[var]}"
                        )
                    continue
                if any(var == seen for seen, _ in implied):
                    if dict(implied)[var] != value:
                        raise InconsistencyError(
                            f"{var!r} derived twice with conflicting values"
                        )
                    continue
                assignment[var] = value
                info.point_depth[var] = depth
                implied.append((var, value))
            # All arguments are assigned now; verify the full predicate so that
            # values known beyond the determining subset agree as well.
            if not check_constraint(c, assignment):
                raise InconsistencyError(f"constraint {c} violated by prior assignments")
            info.constraint_order.append(ci)
            steps.append(
                ResolutionStep(
                    constraint_index=ci,
                    known=[(c.args[i], assignment[c.args[i]]) for i in subset],
                    implied=implied,
                )
            )
            del pending[pos]
            break
        else:
            stuck = [str(problem.constraints[i]) for i in pending]
            raise UnsolvableError(f"fixpoint reached with unresolved constraints: {stuck}")

    unresolved = [v for v in problem.variables if v not in assignment]
    if unresolved:
        raise UnsolvableError(f"variables never derived: {unresolved}")
    info.max_depth = max(info.point_depth.values(), default=0)
    return assignment, info, steps


def solve(problem: Problem) -> tuple[Assignment, DependencyInfo]:
    """Resolve every variable of ``problem`` from its fixed points.

    Returns the unique full assignment (including the fixed points) and the
    dependency bookkeeping.  Raises :class:`UnsolvableError` when propagation
    stalls and :class:`InconsistencyError` on conflicting re-derivations.
    """
    assignment, info, _ = _solve(problem)
    return assignment, info


def point_depths(problem: Problem) -> dict[str, int]:
    """Resolution depth per variable (0 for fixed points)."""
    return solve(problem)[1].point_depth


# --------------------------------------------------------------------------
# Solver-log ("chain of thought") emission and parsing.
#
# Grammar, one clause per line, space-separated tokens, ` ;` terminators:
#
#   KIND ( v ... ) , KIND ( v ... ) ;
#   fixed v = #i , v = #i ;
#   Solution begins ;
#   Con KIND ( v ... ) ;
#   Known v = #i , v = #i ;
#   Impl v = #i ;
#   ...
#   Solution ends
#
# Variables are rendered as their numeric position in the problem's variable
# ordering and points as ``#<grid index>``.
# --------------------------------------------------------------------------


def _render_constraint(c: Constraint, var_pos: dict[str, int]) -> str:
    args = " ".join(str(var_pos[v]) for v in c.args)
    return f"{KIND_NAMES[c.kind]} ( {args} )"


def _render_bindings(pairs: list[tuple[str, Point]], var_pos: dict[str, int], n: int) -> str:
    return " , ".join(f"{var_pos[v]} = #{point_to_index(p, n)}" for v, p in pairs)


def emit_solver_log(problem: Problem) -> str:
    """Render the solver's resolution run in the textual log format."""
    _, _, steps = _solve(problem)
    n = problem.grid_side
    var_pos = {v: i for i, v in enumerate(problem.variables)}
    lines = [
        " , ".join(_render_constraint(c, var_pos) for c in problem.constraints) + " ;",
        "fixed "
        + _render_bindings([(v, problem.fixed[v]) for v in problem.variables if v in problem.fixed], var_pos, n)
        + " ;",
        "Solution begins ;",
    ]
    for step in steps:
        c = problem.constraints[step.constraint_index]
        lines.append(f"Con {_render_constraint(c, var_pos)} ;")
        lines.append("Known " + _render_bindings(step.known, var_pos, n) + " ;")
        lines.append("Impl " + _render_bindings(step.implied, var_pos, n) + " ;")
    lines.append("Solution ends")
    return "\n".join(lines) + "\n"


@dataclass
class ParsedLog:
    """Structured form of a solver log; variables are numeric positions."""

    constraints: list[tuple[str, list[int]]]
    fixed: dict[int, int]  # variable position -> grid index
    steps: list[tuple[str, list[int], dict[int, int], dict[int, int]]]
    solution: dict[int, int]  # all derived variables -> grid index


_CON_RE = re.compile(r"^(\w+) \( ((?:\d+ )*\d+) \)$")
_BIND_RE = re.compile(r"^(\d+) = #(\d+)$")


def _parse_constraint(text: str) -> tuple[str, list[int]]:
    m = _CON_RE.match(text.strip())
    if m is None:
        raise ValueError(f"malformed constraint clause: {text!r}")
    kind = KIND_FROM_NAME.get(m.group(1))
    if kind is None:
        raise ValueError(f"unknown constraint name {m.group(1)!r}")
    args = [int(tok) for tok in m.group(2).split()]
    if len(args) != ARITY[kind]:
        raise ValueError(f"{m.group(1)} with {len(args)} arguments")
    return kind, args


def _parse_bindings(text: str) -> dict[int, int]:
    out: dict[int, int] = {}
    text = text.strip()
    if not text:
        return out
    for part in text.split(" , "):
        m = _BIND_RE.match(part.strip())
        if m is None:
            raise ValueError(f"malformed binding: {part!r}")
        out[int(m.group(1))] = int(m.group(2))
    return out


def parse_solver_log(text: str) -> ParsedLog:
    """Parse a log produced by :func:`emit_solver_log`."""
    lines = [ln.rstrip() for ln in text.strip().split("\n")]
    if len(lines) < 4 or lines[2] != "Solution begins ;" or lines[-1] != "Solution ends":
        raise ValueError("log is missing the solution delimiters")
    constraints = [_parse_constraint(part) for part in lines[0].removesuffix(" ;").split(" , ")]
    if not lines[1].startswith("fixed "):
        raise ValueError("second clause must be the fixed bindings")
    fixed = _parse_bindings(lines[1].removeprefix("fixed ").removesuffix(" ;"))

    steps = []
    solution = dict(fixed)
    body = lines[3:-1]
    if len(body) % 3:
        raise ValueError("resolution clauses must come in Con/Known/Impl triplets")
    for i in range(0, len(body), 3):
        con_line, known_line, impl_line = body[i : i + 3]
        if not con_line.startswith("Con "):
            raise ValueError(f"expected Con clause, got {con_line!r}")
        kind, args = _parse_constraint(con_line.removeprefix("Con ").removesuffix(" ;"))
        if not known_line.startswith("Known "):
            raise ValueError(f"expected Known clause, got {known_line!r}")
        known = _parse_bindings(known_line.removeprefix("Known ").removesuffix(" ;"))
        if not impl_line.startswith("Impl "):
            raise ValueError(f"expected Impl clause, got {impl_line!r}")
        implied = _parse_bindings(impl_line.removeprefix("Impl ").removesuffix(" ;"))
        steps.append((kind, args, known, implied))
        solution.update(implied)
    return ParsedLog(constraints=constraints, fixed=fixed, steps=steps, solution=solution)
