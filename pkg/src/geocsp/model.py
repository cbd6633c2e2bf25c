"""Recurrent bipartite message-passing model over constraint graphs.

A problem becomes a bipartite graph between variable nodes and constraint
nodes.  One shared matrix ``W`` (grid positions x embedding dim) plays three
roles: known variables are pinned to their ``W`` rows for the whole forward
pass, predictions are scored against ``W`` as a bias-free classifier, and the
grid-structured initialization writes exact grid coordinates into it.

Each iteration first updates every constraint from the concatenation of its
four argument embeddings in argument order (three-argument constraints pad
the fourth slot with zeros) through a kind-specific cell, then updates every
unknown variable from the sum of its incident constraints' fresh hidden
states through one shared cell.  Hidden states double as the embeddings;
cell states are internal memory starting at zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .geometry import KINDS, point_to_index
from .numerics.autodiff import (
    SegmentPlan,
    Tensor,
    concat_rows,
    dropout,
    gather_rows,
    linear,
    place_rows,
    reshape,
    scatter_sum,
    slice_rows,
)
from .numerics.cells import (
    LstmParams,
    RnnParams,
    init_lstm_params,
    init_rnn_params,
    lstm_cell,
    rnn_cell,
)
from .solver import Problem

SLOTS = 4  # message width in slots; M constraints zero-pad the fourth


@dataclass
class ModelParams:
    grid_side: int
    dim: int
    cell: str
    w: Tensor
    u_c: dict[str, LstmParams | RnnParams]
    u_x: LstmParams | RnnParams

    def named_parameters(self) -> dict[str, Tensor]:
        """All trainable tensors in a stable order (checkpoint order)."""
        out = {"w": self.w}
        for kind in KINDS:
            for name, t in self.u_c[kind].tensors().items():
                out[f"u_c.{kind}.{name}"] = t
        for name, t in self.u_x.tensors().items():
            out[f"u_x.{name}"] = t
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, t in self.named_parameters().items():
            t.data[...] = arrays[name]

    def export_arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.named_parameters().items()}


def grid_init(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """Embed exact grid coordinates in the first two dimensions and rotate by
    a random orthogonal matrix (QR of a standard-normal matrix)."""
    if d < 2:
        raise ConfigError("grid initialization needs at least 2 dimensions")
    coords = np.zeros((n * n, d))
    idx = np.arange(n * n)
    coords[:, 0] = idx % n
    coords[:, 1] = idx // n
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    q = q * np.sign(np.diag(r))
    return coords @ q


def init_params(
    grid_side: int,
    dim: int = 128,
    rng: np.random.Generator | None = None,
    cell: str = "lstm",
    init_mode: str = "random",
) -> ModelParams:
    if cell not in ("lstm", "rnn"):
        raise ConfigError(f"unknown cell kind {cell!r}")
    if init_mode not in ("random", "grid"):
        raise ConfigError(f"unknown init mode {init_mode!r}")
    rng = rng or np.random.default_rng()
    n_classes = grid_side * grid_side
    if init_mode == "grid":
        w = grid_init(grid_side, dim, rng)
    else:
        w = rng.normal(0.0, 1.0 / np.sqrt(dim), size=(n_classes, dim))
    make = init_lstm_params if cell == "lstm" else init_rnn_params
    u_c = {kind: make(SLOTS * dim, dim, rng) for kind in KINDS}
    u_x = make(dim, dim, rng)
    return ModelParams(grid_side=grid_side, dim=dim, cell=cell, w=Tensor(w, requires_grad=True), u_c=u_c, u_x=u_x)


def param_count(params: ModelParams) -> tuple[int, dict[str, int]]:
    breakdown = {"embedding": params.w.data.size}
    for kind in KINDS:
        breakdown[f"u_c.{kind}"] = params.u_c[kind].count()
    breakdown["u_x"] = params.u_x.count()
    return sum(breakdown.values()), breakdown


@dataclass
class BatchGraph:
    """Block-diagonal bipartite graph for a list of problems.

    Constraint rows are grouped by kind (KINDS order, then batch order) so
    each kind's update runs as one dense cell application; ``z_perm`` maps a
    kind-grouped row back to its position in problem-major constraint order.
    Variable row ``total_vars`` is a permanent zero used for slot padding.
    """

    problems: list[Problem]
    total_vars: int
    total_constraints: int
    dummy_row: int
    kind_slices: dict[str, tuple[int, int]]
    slot_vars: np.ndarray  # (4 * total_constraints,)
    agg_src: np.ndarray  # kind-grouped constraint row per membership edge
    agg_dst: np.ndarray  # unknown-slot index per membership edge
    fixed_rows: np.ndarray
    fixed_grid_idx: np.ndarray
    unknown_rows: np.ndarray
    unknown_targets: np.ndarray | None
    unknown_slices: list[tuple[int, int]]
    constraint_meta: list[tuple[int, int]]  # kind-grouped row -> (problem, local index)
    z_perm: np.ndarray
    slot_plan: SegmentPlan = None
    agg_plan: SegmentPlan = None
    agg_src_plan: SegmentPlan = None
    fixed_plan: SegmentPlan = None

    def __post_init__(self) -> None:
        self.slot_plan = SegmentPlan(self.slot_vars)
        self.agg_plan = SegmentPlan(self.agg_dst)
        self.agg_src_plan = SegmentPlan(self.agg_src)
        self.fixed_plan = SegmentPlan(self.fixed_grid_idx)

    @property
    def n_unknowns(self) -> int:
        return len(self.unknown_rows)


def build_batch_graph(problems: list[Problem], require_labels: bool = True) -> BatchGraph:
    dims = {p.grid_side for p in problems}
    if len(dims) != 1:
        raise ConfigError(f"problems in one batch must share a grid side, got {dims}")
    n = dims.pop()

    kind_members: dict[str, list[tuple[int, int]]] = {k: [] for k in KINDS}
    var_offsets = []
    total_vars = 0
    flat_constraint_index: dict[tuple[int, int], int] = {}
    flat = 0
    for pi, p in enumerate(problems):
        var_offsets.append(total_vars)
        total_vars += len(p.variables)
        for ci, c in enumerate(p.constraints):
            kind_members[c.kind].append((pi, ci))
            flat_constraint_index[(pi, ci)] = flat
            flat += 1
    dummy_row = total_vars

    unknown_rows: list[int] = []
    unknown_targets: list[int] = []
    unknown_slices: list[tuple[int, int]] = []
    fixed_rows: list[int] = []
    fixed_grid_idx: list[int] = []
    var_row: dict[tuple[int, str], int] = {}
    unknown_slot: dict[int, int] = {}
    for pi, p in enumerate(problems):
        start = len(unknown_rows)
        for vi, v in enumerate(p.variables):
            row = var_offsets[pi] + vi
            var_row[(pi, v)] = row
            if v in p.fixed:
                fixed_rows.append(row)
                fixed_grid_idx.append(point_to_index(p.fixed[v], n))
            else:
                unknown_slot[row] = len(unknown_rows)
                unknown_rows.append(row)
                if p.labels is not None:
                    unknown_targets.append(point_to_index(p.labels[v], n))
        unknown_slices.append((start, len(unknown_rows)))
    if require_labels and len(unknown_targets) != len(unknown_rows):
        raise ConfigError("problems are missing labels")

    slot_vars: list[int] = []
    agg_src: list[int] = []
    agg_dst: list[int] = []
    kind_slices: dict[str, tuple[int, int]] = {}
    constraint_meta: list[tuple[int, int]] = []
    z_perm: list[int] = []
    row = 0
    for kind in KINDS:
        start = row
        for pi, ci in kind_members[kind]:
            c = problems[pi].constraints[ci]
            seen: set[int] = set()
            for v in c.args:
                vrow = var_row[(pi, v)]
                slot_vars.append(vrow)
                if vrow in unknown_slot and vrow not in seen:
                    seen.add(vrow)
                    agg_src.append(row)
                    agg_dst.append(unknown_slot[vrow])
            slot_vars.extend([dummy_row] * (SLOTS - len(c.args)))
            constraint_meta.append((pi, ci))
            z_perm.append(flat_constraint_index[(pi, ci)])
            row += 1
        kind_slices[kind] = (start, row)

    return BatchGraph(
        problems=list(problems),
        total_vars=total_vars,
        total_constraints=row,
        dummy_row=dummy_row,
        kind_slices=kind_slices,
        slot_vars=np.asarray(slot_vars, dtype=np.intp),
        agg_src=np.asarray(agg_src, dtype=np.intp),
        agg_dst=np.asarray(agg_dst, dtype=np.intp),
        fixed_rows=np.asarray(fixed_rows, dtype=np.intp),
        fixed_grid_idx=np.asarray(fixed_grid_idx, dtype=np.intp),
        unknown_rows=np.asarray(unknown_rows, dtype=np.intp),
        unknown_targets=np.asarray(unknown_targets, dtype=np.intp) if unknown_targets else None,
        unknown_slices=unknown_slices,
        constraint_meta=constraint_meta,
        z_perm=np.asarray(z_perm, dtype=np.intp),
    )


@dataclass
class NetworkState:
    """Initial hidden states: unknowns and constraints from the unit
    hypercube, in problem-major order; cell states start at zero."""

    x_unknown: np.ndarray
    z: np.ndarray


def init_state(graph: BatchGraph, dim: int, rngs: list[np.random.Generator]) -> NetworkState:
    """Draw fresh initial states, one rng per problem so results do not
    depend on how problems are batched."""
    if len(rngs) != len(graph.problems):
        raise ConfigError("one rng per problem required")
    xs, zs = [], []
    for p, rng in zip(graph.problems, rngs):
        xs.append(rng.uniform(0.0, 1.0, size=(len(p.unknowns), dim)))
        zs.append(rng.uniform(0.0, 1.0, size=(len(p.constraints), dim)))
    x_unknown = np.concatenate(xs, axis=0) if xs else np.zeros((0, dim))
    z_flat = np.concatenate(zs, axis=0) if zs else np.zeros((0, dim))
    return NetworkState(x_unknown=x_unknown, z=z_flat[graph.z_perm])


@dataclass
class ForwardResult:
    logits: Tensor  # (unknown count, grid classes)
    unknown_hidden: Tensor
    constraint_hidden: Tensor
    #: When tracing: decoded grid index per unknown, one entry per iteration
    #: including the initial decode (length = iterations + 1).
    trace_decodes: list[np.ndarray] = field(default_factory=list)
    trace_constraint_hidden: list[np.ndarray] = field(default_factory=list)
    trace_unknown_hidden: list[np.ndarray] = field(default_factory=list)

    def predictions(self) -> np.ndarray:
        return np.argmax(self.logits.data, axis=1) if self.logits.data.size else np.zeros(0, dtype=np.intp)


def decode_hidden(hidden: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Bias-free inner-product decoding: argmax over grid classes."""
    if hidden.shape[0] == 0:
        return np.zeros(0, dtype=np.intp)
    return np.argmax(hidden @ w.T, axis=1)


def forward(
    graph: BatchGraph,
    params: ModelParams,
    state: NetworkState,
    iterations: int,
    *,
    dropout_rate: float = 0.0,
    dropout_rng: np.random.Generator | None = None,
    training: bool = False,
    record_trace: bool = False,
    record_constraint_states: bool = False,
    record_unknown_states: bool = False,
) -> ForwardResult:
    if iterations < 0:
        raise ConfigError("iterations must be non-negative")
    use_dropout = training and dropout_rate > 0.0
    if use_dropout and dropout_rng is None:
        raise ConfigError("dropout requires an rng during training")
    d = params.dim
    rows = graph.total_vars + 1  # final row stays zero for slot padding
    is_lstm = params.cell == "lstm"

    known = gather_rows(params.w, graph.fixed_grid_idx, plan=graph.fixed_plan)
    h_u = Tensor(state.x_unknown)
    c_u = Tensor(np.zeros_like(state.x_unknown))
    z: dict[str, Tensor] = {}
    c_z: dict[str, Tensor] = {}
    for kind, (lo, hi) in graph.kind_slices.items():
        z[kind] = Tensor(state.z[lo:hi])
        c_z[kind] = Tensor(np.zeros((hi - lo, d)))

    trace_decodes: list[np.ndarray] = []
    trace_constraint_hidden: list[np.ndarray] = []
    trace_unknown_hidden: list[np.ndarray] = []
    if record_trace:
        trace_decodes.append(decode_hidden(h_u.data, params.w.data))
    if record_constraint_states:
        trace_constraint_hidden.append(_stack_z(graph, z))
    if record_unknown_states:
        trace_unknown_hidden.append(h_u.data.copy())

    for _ in range(iterations):
        x_full = place_rows(
            [(graph.fixed_rows, known), (graph.unknown_rows, h_u)], rows
        )
        slot_embs = gather_rows(x_full, graph.slot_vars, plan=graph.slot_plan)
        messages = reshape(slot_embs, (graph.total_constraints, SLOTS * d))

        for kind, (lo, hi) in graph.kind_slices.items():
            if lo == hi:
                continue
            msg_k = slice_rows(messages, lo, hi)
            if is_lstm:
                z_new, c_new = lstm_cell(msg_k, z[kind], c_z[kind], params.u_c[kind])
                c_z[kind] = c_new
            else:
                z_new = rnn_cell(msg_k, z[kind], params.u_c[kind])
            if use_dropout:
                z_new = dropout(z_new, dropout_rate, dropout_rng)
            z[kind] = z_new

        z_all = concat_rows([z[kind] for kind in KINDS if graph.kind_slices[kind][0] != graph.kind_slices[kind][1]])
        incoming = gather_rows(z_all, graph.agg_src, plan=graph.agg_src_plan)
        u_msg = scatter_sum(incoming, graph.agg_dst, graph.n_unknowns, plan=graph.agg_plan)
        if is_lstm:
            h_u, c_u = lstm_cell(u_msg, h_u, c_u, params.u_x)
        else:
            h_u = rnn_cell(u_msg, h_u, params.u_x)
        if use_dropout:
            h_u = dropout(h_u, dropout_rate, dropout_rng)

        if record_trace:
            trace_decodes.append(decode_hidden(h_u.data, params.w.data))
        if record_constraint_states:
            trace_constraint_hidden.append(_stack_z(graph, z))
        if record_unknown_states:
            trace_unknown_hidden.append(h_u.data.copy())

    nonempty = [z[k] for k in KINDS if graph.kind_slices[k][0] != graph.kind_slices[k][1]]
    return ForwardResult(
        logits=linear(h_u, params.w),
        unknown_hidden=h_u,
        constraint_hidden=concat_rows(nonempty) if nonempty else Tensor(np.zeros((0, d))),
        trace_decodes=trace_decodes,
        trace_constraint_hidden=trace_constraint_hidden,
        trace_unknown_hidden=trace_unknown_hidden,
    )


def _stack_z(graph: BatchGraph, z: dict[str, Tensor]) -> np.ndarray:
    parts = [z[kind].data for kind in KINDS if graph.kind_slices[kind][0] != graph.kind_slices[kind][1]]
    return np.concatenate(parts, axis=0) if parts else np.zeros((0, 0))
