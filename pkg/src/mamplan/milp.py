"""Mixed-integer linear programming: model container, big-M disjunctions,
and a depth-first branch-and-bound solver.

The LP relaxation at each node is handed to scipy's HiGHS dual simplex,
which returns deterministic vertex-optimal solutions; branching and
pruning live here. An external MILP engine can be plugged in through
``register_backend`` without touching the model type.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

FEAS_TOL = 1e-6
LP_FEAS_TOL = 1e-7
EPSILON_STRICT = 1e-4  # margin realizing strict inequalities as closed ones


@dataclass
class _Var:
    name: str
    lb: float
    ub: float
    is_binary: bool


@dataclass
class MilpSolution:
    status: str  # optimal | infeasible | timeout
    x: np.ndarray | None
    objective: float | None
    by_name: dict = field(default_factory=dict)
    n_nodes: int = 0
    n_lp_solves: int = 0


class MilpModel:
    """Linear model over named continuous (finite-bounded) and binary vars.

    Rows are (coeffs-by-index, relation, rhs) with relation '<=' or '==';
    '>=' rows are normalized to '<=' on entry.
    """

    def __init__(self, big_M: float = 1e4):
        if big_M <= 0:
            raise ValueError("big_M must be > 0")
        self.big_M = float(big_M)
        self.vars: list[_Var] = []
        self.rows: list[tuple[dict, str, float]] = []
        self.objective: dict[int, float] = {}
        self._dense = None

    # -- construction ------------------------------------------------------

    def add_continuous(self, name: str, lb: float, ub: float) -> int:
        if not (np.isfinite(lb) and np.isfinite(ub)) or lb > ub:
            raise ValueError(f"continuous var {name!r} needs finite bounds, got [{lb}, {ub}]")
        self.vars.append(_Var(name, float(lb), float(ub), False))
        self._dense = None
        return len(self.vars) - 1

    def add_binary(self, name: str) -> int:
        self.vars.append(_Var(name, 0.0, 1.0, True))
        self._dense = None
        return len(self.vars) - 1

    def add_constraint(self, coeffs: dict, rel: str, rhs: float) -> None:
        for j in coeffs:
            if not 0 <= j < len(self.vars):
                raise ValueError(f"constraint references unknown var index {j}")
        if rel == ">=":
            coeffs = {j: -c for j, c in coeffs.items()}
            rel, rhs = "<=", -rhs
        if rel not in ("<=", "=="):
            raise ValueError(f"unknown relation {rel!r}")
        self.rows.append((dict(coeffs), rel, float(rhs)))
        self._dense = None

    def set_objective(self, coeffs: dict) -> None:
        """Minimize sum coeffs[j] * x_j."""
        self.objective = dict(coeffs)
        self._dense = None

    def add_disjunction(self, clauses: list) -> list[int]:
        """Encode OR over clauses, each a conjunction of <=-literals.

        clauses[j] is a list of (coeffs, rhs) literals. One binary
        selector per clause relaxes its literals by big-M when inactive,
        and the cover row forces at least one active clause.
        """
        if not clauses:
            raise ValueError("disjunction needs at least one clause")
        g = sum(1 for v in self.vars if v.is_binary)
        alphas = []
        for j, clause in enumerate(clauses):
            if not clause:
                raise ValueError("empty clause in disjunction")
            a = self.add_binary(f"d{g}_{j}")
            alphas.append(a)
            for coeffs, rhs in clause:
                row = dict(coeffs)
                row[a] = row.get(a, 0.0) + self.big_M
                self.add_constraint(row, "<=", float(rhs) + self.big_M)
        self.add_constraint({a: 1.0 for a in alphas}, ">=", 1.0)
        return alphas

    # -- dense views -------------------------------------------------------

    @property
    def n_vars(self) -> int:
        return len(self.vars)

    def binary_indices(self) -> list[int]:
        return [j for j, v in enumerate(self.vars) if v.is_binary]

    def _assemble(self):
        if self._dense is not None:
            return self._dense
        n = len(self.vars)
        c = np.zeros(n)
        for j, v in self.objective.items():
            c[j] = v
        ub_rows = [(r, rhs) for r, rel, rhs in self.rows if rel == "<="]
        eq_rows = [(r, rhs) for r, rel, rhs in self.rows if rel == "=="]

        def stack(rows):
            if not rows:
                return None, None
            A = np.zeros((len(rows), n))
            b = np.empty(len(rows))
            for i, (coeffs, rhs) in enumerate(rows):
                for j, v in coeffs.items():
                    A[i, j] = v
                b[i] = rhs
            return A, b

        A_ub, b_ub = stack(ub_rows)
        A_eq, b_eq = stack(eq_rows)
        self._dense = (c, A_ub, b_ub, A_eq, b_eq)
        return self._dense

    def check_assignment(self, x: np.ndarray, tol: float = FEAS_TOL) -> list[str]:
        """Re-check every stored row and bound; returns violation messages."""
        bad = []
        for j, v in enumerate(self.vars):
            if x[j] < v.lb - tol or x[j] > v.ub + tol:
                bad.append(f"var {v.name} = {x[j]} outside [{v.lb}, {v.ub}]")
            if v.is_binary and min(abs(x[j]), abs(1 - x[j])) > tol:
                bad.append(f"binary {v.name} = {x[j]} not integral")
        for i, (coeffs, rel, rhs) in enumerate(self.rows):
            lhs = sum(c * x[j] for j, c in coeffs.items())
            if rel == "<=" and lhs > rhs + tol:
                bad.append(f"row {i}: {lhs} > {rhs}")
            if rel == "==" and abs(lhs - rhs) > tol:
                bad.append(f"row {i}: {lhs} != {rhs}")
        return bad

    def names(self) -> list[str]:
        return [v.name for v in self.vars]


def lp_solve(model: MilpModel, bound_overrides: dict | None = None):
    """Solve the LP relaxation (binaries in [0,1], optionally overridden).

    Returns ('optimal', x, objective) | ('infeasible',) | ('unbounded',).
    """
    c, A_ub, b_ub, A_eq, b_eq = model._assemble()
    bounds = [(v.lb, v.ub) for v in model.vars]
    if bound_overrides:
        for j, bd in bound_overrides.items():
            bounds[j] = bd
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                  bounds=bounds, method="highs-ds",
                  options={"primal_feasibility_tolerance": LP_FEAS_TOL,
                           "dual_feasibility_tolerance": LP_FEAS_TOL})
    if res.status == 0:
        return ("optimal", res.x, float(res.fun))
    if res.status == 2:
        return ("infeasible",)
    if res.status == 3:
        return ("unbounded",)
    return ("infeasible",)


_BACKENDS: dict = {}


def register_backend(name: str, fn) -> None:
    """Register an external MILP engine: fn(model, time_limit) -> MilpSolution."""
    _BACKENDS[name] = fn


def milp_solve(model: MilpModel, time_limit: float = 60.0,
               backend=None) -> MilpSolution:
    """Depth-first branch-and-bound over the LP relaxation.

    Branches on the most-fractional binary, exploring the 1-branch first;
    nodes are pruned against the incumbent objective. Deterministic for a
    fixed model. On timeout the best incumbent is returned with status
    'timeout'.
    """
    if backend is not None:
        fn = _BACKENDS[backend] if isinstance(backend, str) else backend
        return fn(model, time_limit)

    t_start = time.monotonic()
    bins = model.binary_indices()
    best_x = None
    best_obj = np.inf
    n_nodes = 0
    n_lp = 0
    timed_out = False
    stack: list[dict] = [{}]
    while stack:
        if time.monotonic() - t_start > time_limit:
            timed_out = True
            break
        fixed = stack.pop()
        n_nodes += 1
        res = lp_solve(model, fixed)
        n_lp += 1
        if res[0] == "unbounded":
            raise RuntimeError("LP relaxation unbounded despite finite bounds")
        if res[0] == "infeasible":
            continue
        _, x, obj = res
        if obj >= best_obj - 1e-9:
            continue
        frac = np.array([min(x[j], 1.0 - x[j]) for j in bins])
        if frac.size == 0 or frac.max() <= FEAS_TOL:
            best_obj = obj
            best_x = x.copy()
            for j in bins:
                best_x[j] = round(best_x[j])
            continue
        j = bins[int(np.argmax(frac))]
        stack.append({**fixed, j: (0.0, 0.0)})
        stack.append({**fixed, j: (1.0, 1.0)})

    if best_x is None:
        status = "timeout" if timed_out else "infeasible"
        return MilpSolution(status, None, None, {}, n_nodes, n_lp)
    status = "timeout" if timed_out else "optimal"
    by_name = {v.name: float(best_x[j]) for j, v in enumerate(model.vars)}
    return MilpSolution(status, best_x, float(best_obj), by_name, n_nodes, n_lp)


def write_lp(model: MilpModel, path: str) -> None:
    """Dump the model in LP text format for cross-checking elsewhere."""
    c, *_ = model._assemble()
    names = [v.name for v in model.vars]

    def term(j, v):
        return f"{'+' if v >= 0 else '-'} {abs(v):.12g} {names[j]}"

    lines = ["Minimize", " obj: " + " ".join(term(j, v) for j, v in sorted(model.objective.items()))]
    lines.append("Subject To")
    for i, (coeffs, rel, rhs) in enumerate(model.rows):
        expr = " ".join(term(j, v) for j, v in sorted(coeffs.items()))
        op = "<=" if rel == "<=" else "="
        lines.append(f" c{i}: {expr} {op} {rhs:.12g}")
    lines.append("Bounds")
    for v in model.vars:
        if not v.is_binary:
            lines.append(f" {v.lb:.12g} <= {v.name} <= {v.ub:.12g}")
    bins = [v.name for v in model.vars if v.is_binary]
    if bins:
        lines.append("Binaries")
        lines.append(" " + " ".join(bins))
    lines.append("End")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
