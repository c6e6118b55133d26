"""Canonical binary program for subgraph selection, plus two exact solvers.

The instance has one variable per node and one per unordered node pair.
Selecting an edge requires both endpoints (three AND rows per edge), the
hypothesis node is forced in, and a cardinality row caps the number of
abstract facts. Edge variables carry the negated edge weights as costs,
so minimizing selects the maximum-weight subgraph.

``solve_exact`` runs depth-first branch and bound over node variables
(edge values follow as the AND of their endpoints) and is the production
path; ``solve_bruteforce`` enumerates all node subsets and serves as the
test oracle. Both apply the same deterministic tie-break: among optimal
solutions, the lexicographically smallest node assignment (by node
index, 0 before 1).

Constraint skeletons depend only on (node count, fact kinds, cap), so
they are cached and shared across the re-costed instances produced
during training.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .corpus import Fact, FactKind
from .errors import ExgraphError, ValidationError
from .graph import WeightMatrix

FEAS_TOL = 1e-9


class CallCounter:
    """Counts exact-solver invocations; pins the two-solves-per-step contract."""

    def __init__(self):
        self.count = 0

    def bump(self):
        self.count += 1

    def reset(self):
        self.count = 0


solve_counter = CallCounter()


@dataclass(frozen=True)
class ConstraintRow:
    """sum(coeffs[i] * y[indices[i]]) <= bound"""

    indices: tuple[int, ...]
    coeffs: tuple[float, ...]
    bound: float


class _Structure:
    """Row structure recovered from a canonical instance, in array form."""

    def __init__(self, num_nodes, node_var, edge_var, edge_j, edge_k, forced, caps, rows):
        self.num_nodes = num_nodes
        self.node_var = node_var          # (n,) node index -> variable index
        self.edge_var = edge_var          # (E,) variable index per edge
        self.edge_j = edge_j              # (E,) endpoint node indices
        self.edge_k = edge_k
        self.forced = forced              # node index -> forced value
        self.caps = caps                  # list of (frozenset of node indices, int bound)
        # Flattened rows for vectorized feasibility checks.
        idx, coef, ptr, bounds = [], [], [0], []
        for row in rows:
            idx.extend(row.indices)
            coef.extend(row.coeffs)
            ptr.append(len(idx))
            bounds.append(row.bound)
        self.row_idx = np.array(idx, dtype=np.int64)
        self.row_coef = np.array(coef, dtype=np.float64)
        self.row_ptr = np.array(ptr, dtype=np.int64)
        self.row_bounds = np.array(bounds, dtype=np.float64)

    def assemble(self, node_values: np.ndarray, num_vars: int) -> np.ndarray:
        """Full assignment with every edge the AND of its endpoints."""
        y = np.zeros(num_vars, dtype=np.int8)
        y[self.node_var] = node_values
        if len(self.edge_var):
            y[self.edge_var] = node_values[self.edge_j] & node_values[self.edge_k]
        return y

    def feasible(self, y: np.ndarray) -> bool:
        vals = self.row_coef * y[self.row_idx]
        cs = np.concatenate(([0.0], np.cumsum(vals)))
        lhs = cs[self.row_ptr[1:]] - cs[self.row_ptr[:-1]]
        return bool(np.all(lhs <= self.row_bounds + FEAS_TOL))


class IlpInstance:
    """Binary program in canonical <= form with node/edge variable tags."""

    def __init__(
        self,
        num_vars: int,
        cost: np.ndarray,
        rows: tuple[ConstraintRow, ...],
        var_meta: tuple[tuple, ...],
        _structure: "_Structure | None" = None,
    ):
        cost = np.asarray(cost, dtype=np.float64)
        if cost.shape != (num_vars,):
            raise ValidationError(f"cost shape {cost.shape} != ({num_vars},)")
        if not np.all(np.isfinite(cost)):
            raise ValidationError("cost vector has non-finite entries")
        if len(var_meta) != num_vars:
            raise ValidationError("need one var_meta entry per variable")
        self.num_vars = num_vars
        self.cost = cost
        self.rows = rows
        self.var_meta = var_meta
        self._structure = _structure

    def node_vars(self) -> list[int]:
        return [v for v, m in enumerate(self.var_meta) if m[0] == "node"]

    def edge_vars(self) -> list[int]:
        return [v for v, m in enumerate(self.var_meta) if m[0] == "edge"]

    def structure(self) -> "_Structure":
        if self._structure is None:
            self._structure = _parse_structure(self)
        return self._structure

    def with_cost(self, cost: np.ndarray) -> "IlpInstance":
        """Copy sharing rows and parsed structure, with a new cost vector."""
        return IlpInstance(self.num_vars, cost, self.rows, self.var_meta, self._structure or self.structure())

    def dump_lp(self) -> str:
        """Instance in LP text format, for cross-checks with external solvers."""
        def term(c, v):
            return f"{'+' if c >= 0 else '-'} {abs(c):g} y{v}"

        lines = ["Minimize", " obj: " + " ".join(term(c, v) for v, c in enumerate(self.cost) if c != 0.0)]
        lines.append("Subject To")
        for r, row in enumerate(self.rows):
            lhs = " ".join(term(c, i) for i, c in zip(row.indices, row.coeffs)) or "0 y0"
            lines.append(f" c{r}: {lhs} <= {row.bound:g}")
        lines.append("Binary")
        lines.append(" " + " ".join(f"y{v}" for v in range(self.num_vars)))
        lines.append("End")
        return "\n".join(lines)


class IlpSolution:
    """A 0/1 assignment checked feasible at construction."""

    def __init__(self, inst: IlpInstance, assignment: np.ndarray):
        assignment = np.asarray(assignment)
        if assignment.shape != (inst.num_vars,) or not np.all((assignment == 0) | (assignment == 1)):
            raise ValidationError("assignment must be a 0/1 vector over all variables")
        self.assignment = assignment.astype(np.int8)
        self.assignment.flags.writeable = False
        if not inst.structure().feasible(self.assignment):
            raise ExgraphError("infeasible assignment passed to IlpSolution")
        self.objective = float(np.dot(inst.cost, self.assignment))


def edge_var_order(n: int) -> list[tuple[int, int]]:
    """Unordered pairs (j, k), j < k, in lexicographic order."""
    return [(j, k) for j in range(n) for k in range(j + 1, n)]


def flat_weights(w: WeightMatrix) -> np.ndarray:
    """Per-variable weights in instance order: zeros for nodes, W[j,k] per edge."""
    n = w.num_nodes
    out = np.zeros(n + n * (n - 1) // 2, dtype=np.float64)
    for e, (j, k) in enumerate(edge_var_order(n)):
        out[n + e] = w.entries[j, k]
    return out


@lru_cache(maxsize=512)
def _skeleton(n: int, kinds: tuple, max_abstract: int):
    """Rows, variable tags, and parsed structure for a given shape."""
    pairs = edge_var_order(n)
    var_meta: list[tuple] = [("node", j) for j in range(n)]
    var_meta.extend(("edge", j, k) for j, k in pairs)
    rows: list[ConstraintRow] = [ConstraintRow((0,), (-1.0,), -1.0)]
    for e, (j, k) in enumerate(pairs):
        ev = n + e
        rows.append(ConstraintRow((ev, j), (1.0, -1.0), 0.0))
        rows.append(ConstraintRow((ev, k), (1.0, -1.0), 0.0))
        rows.append(ConstraintRow((ev, j, k), (-1.0, 1.0, 1.0), 1.0))
    abstract_nodes = tuple(j for j in range(1, n) if kinds[j - 1] is FactKind.ABSTRACT)
    rows.append(ConstraintRow(abstract_nodes, (1.0,) * len(abstract_nodes), float(max_abstract)))
    probe = IlpInstance(n + len(pairs), np.zeros(n + len(pairs)), tuple(rows), tuple(var_meta))
    return probe.rows, probe.var_meta, probe.structure()


def build_subgraph_ilp(w: WeightMatrix, max_abstract: int) -> IlpInstance:
    """Encode subgraph selection over ``w`` in canonical <= form.

    Variables: one per node, then one per unordered pair. Edge costs are
    the negated weights; node costs are zero. Rows: the hypothesis-node
    force, three AND rows per edge, and the abstract-cardinality cap
    (always emitted, empty when there are no abstract facts).
    """
    if max_abstract < 0:
        raise ValidationError(f"abstract-fact cap must be >= 0, got {max_abstract}")
    n = w.num_nodes
    rows, var_meta, structure = _skeleton(n, tuple(w.kinds), int(max_abstract))
    cost = -flat_weights(w)
    return IlpInstance(len(var_meta), cost, rows, var_meta, structure)


def _parse_structure(inst: IlpInstance) -> _Structure:
    node_var: dict[int, int] = {}
    edge_of: dict[int, tuple[int, int]] = {}
    for v, meta in enumerate(inst.var_meta):
        if meta[0] == "node":
            node_var[meta[1]] = v
        elif meta[0] == "edge":
            edge_of[v] = (meta[1], meta[2])
        else:
            raise ValidationError(f"unknown variable meta {meta!r}")
    n = len(node_var)
    if sorted(node_var) != list(range(n)):
        raise ValidationError("node indices must be 0..n-1")
    var_node = {v: j for j, v in node_var.items()}

    forced: dict[int, int] = {}
    caps: list[tuple[frozenset[int], int]] = []
    and_rows: dict[int, int] = {v: 0 for v in edge_of}

    for row in inst.rows:
        nz = [(i, c) for i, c in zip(row.indices, row.coeffs) if c != 0.0]
        if len(nz) == 1:
            i, c = nz[0]
            if i not in var_node:
                raise ValidationError("single-variable rows are only supported on node variables")
            ok0 = 0.0 <= row.bound + FEAS_TOL
            ok1 = c <= row.bound + FEAS_TOL
            if ok0 and ok1:
                continue
            if not ok0 and not ok1:
                raise ValidationError(f"row {row} admits no binary value")
            val = 1 if ok1 else 0
            j = var_node[i]
            if forced.get(j, val) != val:
                raise ValidationError(f"conflicting forced values for node {j}")
            forced[j] = val
        elif len(nz) == 2 and {c for _, c in nz} == {1.0, -1.0} and row.bound == 0.0:
            pos = next(i for i, c in nz if c == 1.0)
            neg = next(i for i, c in nz if c == -1.0)
            if pos in edge_of and var_node.get(neg) in edge_of[pos]:
                and_rows[pos] += 1
            else:
                raise ValidationError(f"unsupported two-variable row {row}")
        elif len(nz) == 3 and sorted(c for _, c in nz) == [-1.0, 1.0, 1.0] and row.bound == 1.0:
            ev = next(i for i, c in nz if c == -1.0)
            others = {var_node.get(i) for i, c in nz if c == 1.0}
            if ev in edge_of and others == set(edge_of[ev]):
                and_rows[ev] += 1
            else:
                raise ValidationError(f"unsupported three-variable row {row}")
        elif all(c == 1.0 for _, c in nz) and all(i in var_node for i, _ in nz):
            if not nz and row.bound < -FEAS_TOL:
                raise ValidationError(f"row {row} is infeasible")
            caps.append((frozenset(var_node[i] for i, _ in nz), int(np.floor(row.bound + FEAS_TOL))))
        else:
            raise ValidationError(f"row {row} is outside the subgraph-selection family")

    incomplete = [v for v, cnt in and_rows.items() if cnt != 3]
    if incomplete:
        raise ValidationError(f"edge variables {incomplete} lack their three AND rows")
    edge_items = sorted(edge_of.items())
    return _Structure(
        num_nodes=n,
        node_var=np.array([node_var[j] for j in range(n)], dtype=np.int64),
        edge_var=np.array([v for v, _ in edge_items], dtype=np.int64),
        edge_j=np.array([jk[0] for _, jk in edge_items], dtype=np.int64),
        edge_k=np.array([jk[1] for _, jk in edge_items], dtype=np.int64),
        forced=forced,
        caps=caps,
        rows=inst.rows,
    )


def solve_exact(inst: IlpInstance) -> IlpSolution:
    """Depth-first branch and bound over node variables.

    Presolve fixes weakly dominated nodes to 0 and strictly dominant
    uncapped nodes to 1; the search bound adds every still-attainable
    negative cost to the running objective. Leaves are compared on the
    canonical cost dot product, so results agree bitwise with the
    brute-force oracle. Supports the instance family produced by
    :func:`build_subgraph_ilp`, including re-costed copies.
    """
    solve_counter.bump()
    struct = inst.structure()
    n = struct.num_nodes
    cost = inst.cost

    node_cost = cost[struct.node_var]
    adj: list[list[tuple[int, float]]] = [[] for _ in range(n)]
    for v, j, k in zip(struct.edge_var, struct.edge_j, struct.edge_k):
        c = float(cost[v])
        adj[j].append((int(k), c))
        adj[k].append((int(j), c))

    cap_bounds = [b for _, b in struct.caps]
    in_caps: list[list[int]] = [[] for _ in range(n)]
    for ci, (members, b) in enumerate(struct.caps):
        if b < 0:
            raise ValidationError("cardinality cap below zero is infeasible")
        for j in members:
            in_caps[j].append(ci)

    state = np.full(n, -1, dtype=np.int8)
    for j, val in struct.forced.items():
        state[j] = val
        if val == 1:
            for ci in in_caps[j]:
                cap_bounds[ci] -= 1
                if cap_bounds[ci] < 0:
                    raise ExgraphError("forced nodes already violate a cardinality cap")

    _presolve(state, node_cost, adj, in_caps)

    cur = 0.0
    rem_neg = 0.0
    for j in range(n):
        if state[j] == -1 and node_cost[j] < 0.0:
            rem_neg += node_cost[j]
        elif state[j] == 1:
            cur += node_cost[j]
    for v, j, k in zip(struct.edge_var, struct.edge_j, struct.edge_k):
        if state[j] == 0 or state[k] == 0:
            continue
        c = float(cost[v])
        if state[j] == 1 and state[k] == 1:
            cur += c
        elif c < 0.0:
            rem_neg += c

    free = [j for j in range(n) if state[j] == -1]
    cap_count = [0] * len(cap_bounds)
    node_values = state.copy()

    # Greedy warm start (marginal-gain inclusion in index order) seeds the
    # pruning bound. A hair of slack keeps every equal-objective subtree
    # explorable, so the lex-smallest optimum is still the one returned.
    warm = _greedy_incumbent(state, node_cost, adj, in_caps, cap_bounds, free)
    warm_obj = float(np.dot(cost, struct.assemble(warm, inst.num_vars)))
    best_obj = warm_obj + 1e-9 * (1.0 + abs(warm_obj))
    best_assign: np.ndarray | None = None

    capped_free = [j for j in free if in_caps[j]]

    def cap_aware_bound(cur: float) -> float:
        """Tighter admissible bound: capped nodes contribute at most their
        cap-allowance best potentials instead of all of them."""
        pot = np.zeros(n)
        rest = 0.0
        for v, j, k in zip(struct.edge_var, struct.edge_j, struct.edge_k):
            sj, sk = node_values[j], node_values[k]
            if sj == 0 or sk == 0 or (sj == 1 and sk == 1):
                continue
            c = float(cost[v])
            if c >= 0.0:
                continue
            jc = sj == -1 and in_caps[j]
            kc = sk == -1 and in_caps[k]
            if jc:
                pot[j] += c
            if kc:
                pot[k] += c
            if not jc and not kc:
                rest += c
        for u in free:
            if node_values[u] != -1 or node_cost[u] >= 0.0:
                continue
            if in_caps[u]:
                pot[u] += node_cost[u]
            else:
                rest += node_cost[u]
        total = cur + rest
        for ci, (members, _) in enumerate(struct.caps):
            allowed = cap_bounds[ci] - cap_count[ci]
            if allowed <= 0:
                continue
            pots = sorted(pot[u] for u in members if node_values[u] == -1 and pot[u] < 0.0)
            total += sum(pots[:allowed])
        return total

    def dfs(depth: int, cur: float, rem_neg: float):
        nonlocal best_obj, best_assign
        if depth == len(free):
            y = struct.assemble(np.maximum(node_values, 0), inst.num_vars)
            obj = float(np.dot(cost, y))
            if obj < best_obj:
                best_obj = obj
                best_assign = y
            return
        j = free[depth]
        for val in (0, 1):
            if val == 1 and any(cap_count[ci] + 1 > cap_bounds[ci] for ci in in_caps[j]):
                continue
            new_cur = cur
            new_rem = rem_neg
            if node_cost[j] < 0.0:
                new_rem -= node_cost[j]
            if val == 1:
                new_cur += node_cost[j]
                for u, c in adj[j]:
                    if node_values[u] == 1:
                        new_cur += c
                        if c < 0.0:
                            new_rem -= c
            else:
                for u, c in adj[j]:
                    if c < 0.0 and node_values[u] != 0:
                        new_rem -= c
            if new_cur + new_rem >= best_obj:
                continue
            node_values[j] = val
            if val == 1:
                for ci in in_caps[j]:
                    cap_count[ci] += 1
            if capped_free and cap_aware_bound(new_cur) >= best_obj:
                pass
            else:
                dfs(depth + 1, new_cur, new_rem)
            if val == 1:
                for ci in in_caps[j]:
                    cap_count[ci] -= 1
            node_values[j] = -1

    dfs(0, cur, rem_neg)
    if best_assign is None:
        raise ExgraphError("search ended without a feasible solution")
    return IlpSolution(inst, best_assign)


def _greedy_incumbent(state, node_cost, adj, in_caps, cap_bounds, free) -> np.ndarray:
    """Feasible assignment from marginal-gain inclusion; the warm start."""
    values = np.maximum(state, 0)
    counts = [0] * len(cap_bounds)
    for j in free:
        if any(counts[ci] + 1 > cap_bounds[ci] for ci in in_caps[j]):
            continue
        delta = node_cost[j] + sum(c for u, c in adj[j] if values[u] == 1)
        if delta < 0.0:
            values[j] = 1
            for ci in in_caps[j]:
                counts[ci] += 1
    return values


def _presolve(state: np.ndarray, node_cost: np.ndarray, adj, in_caps) -> None:
    """Fix dominated node values in place; iterates to a fixpoint.

    A node with no strictly negative live incident edge and nonnegative
    cost is weakly dominated by exclusion, and exclusion is the
    lex-smaller choice. An uncapped node with nonpositive cost whose
    live incident edges are all nonpositive, and that strictly gains
    either from its own cost or against a node already known selected,
    belongs to every optimum.
    """
    n = len(state)
    changed = True
    while changed:
        changed = False
        for j in range(n):
            if state[j] != -1:
                continue
            if node_cost[j] >= 0.0 and not any(c < 0.0 and state[u] != 0 for u, c in adj[j]):
                state[j] = 0
                changed = True
                continue
            if in_caps[j] or node_cost[j] > 0.0:
                continue
            all_nonpos = all(c <= 0.0 or state[u] == 0 for u, c in adj[j])
            strict_gain = node_cost[j] < 0.0 or any(
                c < 0.0 and state[u] == 1 for u, c in adj[j]
            )
            if all_nonpos and strict_gain:
                state[j] = 1
                changed = True


def solve_bruteforce(inst: IlpInstance) -> IlpSolution:
    """Exhaustive enumeration over node subsets; the test oracle.

    Checks feasibility of every assembled assignment against the raw
    constraint rows and keeps the lexicographically smallest optimum.
    Refuses instances with more than 20 node variables.
    """
    struct = inst.structure()
    n = struct.num_nodes
    if n > 20:
        raise ValidationError(f"brute force refuses instances with {n} > 20 node variables")

    best_obj = np.inf
    best_assign = None
    chunk = 1 << 13
    total = 1 << n
    # Enumeration order is lexicographic over node vectors (node 0 is the
    # most significant bit), so the first strict improvement seen is the
    # lex-smallest optimum.
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total), dtype=np.int64)
        x = ((idx[:, None] >> (n - 1 - np.arange(n))[None, :]) & 1).astype(np.int8)
        y = np.zeros((len(idx), inst.num_vars), dtype=np.int8)
        y[:, struct.node_var] = x
        if len(struct.edge_var):
            y[:, struct.edge_var] = x[:, struct.edge_j] & x[:, struct.edge_k]
        feas = np.ones(len(idx), dtype=bool)
        for r in range(len(inst.rows)):
            lo, hi = struct.row_ptr[r], struct.row_ptr[r + 1]
            if hi == lo:
                feas &= 0.0 <= struct.row_bounds[r] + FEAS_TOL
                continue
            lhs = y[:, struct.row_idx[lo:hi]].astype(np.float64) @ struct.row_coef[lo:hi]
            feas &= lhs <= struct.row_bounds[r] + FEAS_TOL
        if not feas.any():
            continue
        obj = y.astype(np.float64) @ inst.cost
        obj[~feas] = np.inf
        pos = int(np.argmin(obj))  # argmin returns the first (lex-smallest) minimum
        if obj[pos] < best_obj:
            best_obj = float(obj[pos])
            best_assign = y[pos].copy()
    if best_assign is None:
        raise ExgraphError("no feasible assignment exists")
    return IlpSolution(inst, best_assign)


@dataclass(frozen=True)
class SelectedSubgraph:
    """Decoded solver output: chosen facts plus the achieved subgraph weight."""

    fact_ids: tuple[str, ...]
    weight: float


def decode_solution(inst: IlpInstance, sol: IlpSolution, facts: Sequence[Fact]) -> SelectedSubgraph:
    """Project a solution onto fact ids (ascending) and the subgraph weight."""
    struct = inst.structure()
    if struct.num_nodes != len(facts) + 1:
        raise ValidationError(
            f"instance has {struct.num_nodes} nodes but {len(facts)} facts were supplied"
        )
    if sol.assignment[struct.node_var[0]] != 1:
        raise ExgraphError("hypothesis node not selected; assignment is not a valid solution")
    chosen = [
        facts[j - 1].id for j in range(1, struct.num_nodes)
        if sol.assignment[struct.node_var[j]] == 1
    ]
    return SelectedSubgraph(tuple(sorted(chosen)), -sol.objective)
