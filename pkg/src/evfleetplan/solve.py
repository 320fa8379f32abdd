"""LP core, branch-and-bound over siting binaries, and LP-file round-trip.

The LP core delegates to scipy's HiGHS backend, which meets the stated
contract (primal residual <= 1e-7, objective within 1e-6 relative).
Branch and bound is best-bound search branching on the most fractional
siting binary, ties broken by lowest candidate index, so results are
deterministic.
"""

from __future__ import annotations

import heapq
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import csr_matrix

from .errors import SolveError
from .model import MilpInstance

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
ITERATION_LIMIT = "iteration-limit"

_INT_TOL = 1e-6


@dataclass
class MilpSolution:
    values: np.ndarray  # full variable vector, kappa included
    objective: float
    status: str
    gap: float = 0.0
    iterations: int = 0
    nodes: int = 0

    def kappa(self, instance: MilpInstance) -> np.ndarray:
        return instance.kappa_values(self.values)


def _build_arrays(
    instance: MilpInstance, kappa_lo: np.ndarray, kappa_hi: np.ndarray
):
    n = instance.n_vars
    eq_rows, eq_cols, eq_vals, b_eq = [], [], [], []
    ub_rows, ub_cols, ub_vals, b_ub = [], [], [], []
    for row in instance.rows:
        if not row.coeffs:
            if row.sense == "E" and abs(row.rhs) > 0:
                return None  # structurally infeasible (demand with no variables)
            continue
        scale = 1.0 / max(abs(c) for c in row.coeffs.values())  # row equilibration
        if row.sense == "E":
            r = len(b_eq)
            for col, coef in row.coeffs.items():
                eq_rows.append(r)
                eq_cols.append(col)
                eq_vals.append(coef * scale)
            b_eq.append(row.rhs * scale)
        else:
            r = len(b_ub)
            for col, coef in row.coeffs.items():
                ub_rows.append(r)
                ub_cols.append(col)
                ub_vals.append(coef * scale)
            b_ub.append(row.rhs * scale)
    A_eq = csr_matrix((eq_vals, (eq_rows, eq_cols)), shape=(len(b_eq), n))
    A_ub = csr_matrix((ub_vals, (ub_rows, ub_cols)), shape=(len(b_ub), n))
    bounds = [(0.0, None)] * n
    for i, col in enumerate(instance.kappa_cols):
        bounds[col] = (float(kappa_lo[i]), float(kappa_hi[i]))
    return A_eq, np.array(b_eq), A_ub, np.array(b_ub), bounds


def solve_lp(
    instance: MilpInstance,
    fixed_kappa: np.ndarray | None = None,
    _kappa_bounds: tuple[np.ndarray, np.ndarray] | None = None,
) -> MilpSolution:
    """Solve the LP with siting binaries fixed, bounded, or relaxed to [0,1]."""
    nk = len(instance.kappa_cols)
    if fixed_kappa is not None:
        fixed_kappa = np.asarray(fixed_kappa, dtype=float)
        if fixed_kappa.shape != (nk,):
            raise SolveError(f"fixed kappa must have {nk} entries")
        lo = hi = fixed_kappa
    elif _kappa_bounds is not None:
        lo, hi = _kappa_bounds
    else:
        lo, hi = np.zeros(nk), np.ones(nk)

    if instance.n_vars == 0:
        return MilpSolution(np.zeros(0), 0.0, OPTIMAL)
    built = _build_arrays(instance, lo, hi)
    if built is None:
        return MilpSolution(np.zeros(instance.n_vars), float("inf"), INFEASIBLE)
    A_eq, b_eq, A_ub, b_ub, bounds = built
    res = linprog(
        instance.objective,
        A_ub=A_ub if b_ub.size else None,
        b_ub=b_ub if b_ub.size else None,
        A_eq=A_eq if b_eq.size else None,
        b_eq=b_eq if b_eq.size else None,
        bounds=bounds,
        method="highs",
    )
    if res.status == 0:
        return MilpSolution(res.x, float(res.fun), OPTIMAL, iterations=int(res.nit))
    if res.status == 2:
        return MilpSolution(np.zeros(instance.n_vars), float("inf"), INFEASIBLE)
    return MilpSolution(
        np.zeros(instance.n_vars), float("inf"), ITERATION_LIMIT, iterations=int(res.nit)
    )


def branch_and_bound(
    instance: MilpInstance, gap_tol: float = 1e-6, node_limit: int = 10_000
) -> MilpSolution:
    """Best-bound search over the siting binaries."""
    nk = len(instance.kappa_cols)
    if nk == 0:
        return solve_lp(instance)

    counter = 0
    heap: list[tuple[float, int, np.ndarray, np.ndarray]] = []
    heapq.heappush(heap, (-np.inf, counter, np.zeros(nk), np.ones(nk)))
    incumbent: MilpSolution | None = None
    inc_obj = np.inf
    nodes = 0
    iterations = 0
    lower = -np.inf

    def rel_gap(inc: float, lb: float) -> float:
        if not np.isfinite(inc):
            return np.inf
        return (inc - lb) / max(1.0, abs(inc))

    while heap:
        bound, _, lo, hi = heapq.heappop(heap)
        lower = bound if np.isfinite(bound) else lower
        if incumbent is not None and rel_gap(inc_obj, bound) <= gap_tol:
            break
        if nodes >= node_limit:
            return MilpSolution(
                incumbent.values if incumbent else np.zeros(instance.n_vars),
                inc_obj,
                ITERATION_LIMIT,
                gap=rel_gap(inc_obj, bound),
                iterations=iterations,
                nodes=nodes,
            )
        nodes += 1
        sol = solve_lp(instance, _kappa_bounds=(lo, hi))
        iterations += sol.iterations
        if sol.status != OPTIMAL:
            continue
        if incumbent is not None and sol.objective >= inc_obj - gap_tol * max(1.0, abs(inc_obj)):
            continue
        kappa = sol.kappa(instance)
        frac = np.abs(kappa - np.round(kappa))
        if frac.max(initial=0.0) <= _INT_TOL:
            values = sol.values.copy()
            values[instance.kappa_cols] = np.round(kappa)
            if sol.objective < inc_obj:
                incumbent = MilpSolution(values, sol.objective, OPTIMAL)
                inc_obj = sol.objective
            continue
        # Most fractional binary, tie -> lowest index.
        branch = int(np.argmax(np.minimum(frac, 1.0 - frac)))
        for fix in (0.0, 1.0):
            lo2, hi2 = lo.copy(), hi.copy()
            lo2[branch] = hi2[branch] = fix
            counter += 1
            heapq.heappush(heap, (sol.objective, counter, lo2, hi2))

    if incumbent is None:
        return MilpSolution(
            np.zeros(instance.n_vars), float("inf"), INFEASIBLE, nodes=nodes,
            iterations=iterations,
        )
    remaining = min((b for b, *_ in heap), default=inc_obj)
    lb = min(inc_obj, remaining) if np.isfinite(remaining) else inc_obj
    incumbent.gap = max(0.0, rel_gap(inc_obj, lb))
    incumbent.nodes = nodes
    incumbent.iterations = iterations
    return incumbent


# ---------------------------------------------------------------------------
# CPLEX LP text export and plain `name value` solution import.
# ---------------------------------------------------------------------------


def _fmt_term(coef: float, name: str, first: bool) -> str:
    coef = float(coef)
    sign = "-" if coef < 0 else ("" if first else "+")
    return f"{sign} {abs(coef)!r} {name}"


def emit_lp_file(instance: MilpInstance, path: str | Path) -> None:
    """Write the instance in CPLEX LP text format, objective named ``vht``."""
    lines: list[str] = ["Minimize"]
    terms = [
        _fmt_term(c, instance.var_names[i], i == 0)
        for i, c in enumerate(instance.objective)
        if c != 0.0
    ]
    if not terms:
        terms = [f"0 {instance.var_names[0]}"] if instance.var_names else ["0 x0"]
    lines.append(" vht: " + _wrap(terms))
    lines.append("Subject To")
    for row in instance.rows:
        if not row.coeffs:
            continue
        items = sorted(row.coeffs.items())
        terms = [
            _fmt_term(coef, instance.var_names[col], k == 0)
            for k, (col, coef) in enumerate(items)
        ]
        op = "=" if row.sense == "E" else "<="
        lines.append(f" {row.name}: " + _wrap(terms) + f" {op} {row.rhs!r}")
    if instance.kappa_cols:
        lines.append("Binary")
        lines.append(" " + " ".join(instance.var_names[c] for c in instance.kappa_cols))
    lines.append("End")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _wrap(terms: list[str], width: int = 200) -> str:
    out, cur = [], ""
    for t in terms:
        if cur and len(cur) + len(t) + 1 > width:
            out.append(cur)
            cur = t
        else:
            cur = f"{cur} {t}".strip()
    if cur:
        out.append(cur)
    return "\n  ".join(out)


def write_solution_file(
    instance: MilpInstance, solution: MilpSolution, path: str | Path
) -> None:
    """Plain-text dump, one ``name value`` line per variable plus ``vht``."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"vht {solution.objective!r}\n")
        for name, val in zip(instance.var_names, solution.values):
            fh.write(f"{name} {float(val)!r}\n")


def parse_solution_file(instance: MilpInstance, path: str | Path) -> MilpSolution:
    """Re-import a solution by variable name; unknown names are errors.

    If the file reports an objective (``vht`` line), the internally
    recomputed objective must match it within 1e-6 relative.
    """
    index = {name: i for i, name in enumerate(instance.var_names)}
    values = np.zeros(instance.n_vars)
    reported: float | None = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise SolveError(f"line {lineno}: expected 'name value'")
            name, sval = parts
            try:
                val = float(sval)
            except ValueError as exc:
                raise SolveError(f"line {lineno}: bad value {sval!r}") from exc
            if name == "vht":
                reported = val
                continue
            if name not in index:
                raise SolveError(f"line {lineno}: unknown variable {name!r}")
            values[index[name]] = val
    objective = instance.objective_value(values)
    if reported is not None:
        if abs(objective - reported) > 1e-6 * max(1.0, abs(reported)):
            raise SolveError(
                f"objective mismatch: file reports {reported}, recomputed {objective}"
            )
    return MilpSolution(values, objective, OPTIMAL)


def parse_lp_file(path: str | Path) -> MilpInstance:
    """Read a CPLEX LP text file back into a solvable instance.

    Covers the subset this package emits (linear objective, =/<=/>= rows,
    Bounds ignored beyond defaults, Binary section).  The re-imported
    instance has no layered-graph metadata attached.
    """
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("\\")]
    section = None
    obj_parts: list[str] = []
    row_parts: list[str] = []
    binaries: list[str] = []
    headers = {
        "minimize": "obj",
        "subject to": "rows",
        "st": "rows",
        "s.t.": "rows",
        "bounds": "bounds",
        "binary": "binary",
        "binaries": "binary",
        "general": "general",
        "end": "end",
    }
    for ln in lines:
        key = ln.strip().lower()
        if key in headers:
            section = headers[key]
            continue
        if section == "obj":
            obj_parts.append(ln.strip())
        elif section == "rows":
            row_parts.append(ln if ln.startswith((" ", "\t")) else ln)
        elif section == "binary":
            binaries.extend(ln.split())

    term_re = re.compile(r"([+-])?\s*(\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+)?\s*([A-Za-z_][\w.]*)")

    def parse_terms(expr: str) -> dict[str, float]:
        coeffs: dict[str, float] = {}
        for sign, coef, name in term_re.findall(expr):
            val = float(coef) if coef else 1.0
            if sign == "-":
                val = -val
            coeffs[name] = coeffs.get(name, 0.0) + val
        return coeffs

    obj_expr = " ".join(obj_parts)
    if ":" in obj_expr:
        obj_expr = obj_expr.split(":", 1)[1]
    obj_coeffs = parse_terms(obj_expr)

    # Rows: continuation lines have no ':'; stitch them to the previous row.
    stitched: list[str] = []
    for ln in row_parts:
        if ":" in ln and re.match(r"\s*[\w.]+\s*:", ln):
            stitched.append(ln.strip())
        elif stitched:
            stitched[-1] += " " + ln.strip()
        else:
            raise SolveError("constraint continuation before any named row")

    var_names: list[str] = []
    index: dict[str, int] = {}

    def col(name: str) -> int:
        if name not in index:
            index[name] = len(var_names)
            var_names.append(name)
        return index[name]

    for name in obj_coeffs:
        col(name)

    rows = []
    from .model import Row  # local import to avoid a cycle at module load

    sense_re = re.compile(r"(<=|>=|=)")
    for ln in stitched:
        rname, expr = ln.split(":", 1)
        m = sense_re.search(expr)
        if m is None:
            raise SolveError(f"row {rname.strip()!r} has no relational operator")
        lhs, op, rhs = expr[: m.start()], m.group(1), expr[m.end() :]
        coeffs_by_name = parse_terms(lhs)
        try:
            rhs_val = float(rhs)
        except ValueError as exc:
            raise SolveError(f"row {rname.strip()!r}: bad right-hand side {rhs!r}") from exc
        coeffs = {col(n): c for n, c in coeffs_by_name.items()}
        if op == ">=":
            coeffs = {c: -v for c, v in coeffs.items()}
            rhs_val = -rhs_val
            op = "<="
        rows.append(Row(rname.strip(), rname.strip().split("_")[0], "E" if op == "=" else "L", rhs_val, coeffs))

    kappa_cols = [col(b) for b in binaries]
    objective = np.zeros(len(var_names))
    for n, c in obj_coeffs.items():
        objective[index[n]] = c

    return MilpInstance(
        mlg=None,
        commodities=(),
        var_names=var_names,
        objective=objective,
        rows=rows,
        xm_cols={},
        xr_cols={},
        kappa_cols=kappa_cols,
    )
