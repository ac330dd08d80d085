"""Second-order cone programs: explicit blocks, assembly, conic solve.

The planner compiles every mission constraint into one of three block kinds
over a flat variable vector x:

- equality        E x = g
- inequality      a' x <= beta
- second-order    ||A x + b|| <= c' x + d

Blocks are stored against explicit column indices, so variables can be
appended after constraints exist (the quadratic epigraph below does this).
The numerical solve is delegated to Clarabel, an interior-point conic
solver; solution quality is always re-checked here by direct residual
evaluation, never taken from the solver's own report.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

try:
    import clarabel
except ImportError:  # pragma: no cover - hard dependency, but fail readably
    clarabel = None

#: Solution statuses, in the package's vocabulary.
OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL_FAILURE = "numerical-failure"


@dataclass(frozen=True)
class Solution:
    """Outcome of a conic solve.

    max_residual is computed by this module from the returned point and the
    stored blocks; it is meaningful only when status is "optimal".
    """

    status: str
    x: np.ndarray | None
    objective: float
    max_residual: float
    solve_time: float
    iterations: int
    solver_status: str


@dataclass
class _Block:
    kind: str  # "eq" | "ineq" | "soc"
    label: str
    cols: np.ndarray
    A: np.ndarray  # eq: (m,k) coeffs; ineq: (1,k) row; soc: (m,k)
    b: np.ndarray  # eq: rhs (m,); ineq: (ub,); soc: offset (m,)
    c: np.ndarray | None = None  # soc only, (k,)
    d: float = 0.0  # soc only


class ConeProgram:
    """Mutable SOCP model: minimize f'x subject to cone blocks."""

    def __init__(self, num_vars: int):
        if num_vars < 1:
            raise ValueError("need at least one variable")
        self.num_vars = int(num_vars)
        self._f = np.zeros(self.num_vars)
        self._blocks: list[_Block] = []

    # ------------------------------------------------------------------ model

    def add_variables(self, count: int) -> np.ndarray:
        """Append variables, returning their indices."""
        if count < 1:
            raise ValueError("count must be positive")
        idx = np.arange(self.num_vars, self.num_vars + count)
        self.num_vars += count
        self._f = np.concatenate([self._f, np.zeros(count)])
        return idx

    def add_objective(self, cols, coeffs) -> None:
        """Accumulate linear objective terms f[cols] += coeffs."""
        cols = self._check_cols(cols)
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != cols.shape:
            raise ValueError("objective coeffs and cols must match")
        np.add.at(self._f, cols, coeffs)

    def add_equality(self, A, cols, rhs, label: str = "eq") -> None:
        """Add rows A x[cols] = rhs."""
        cols = self._check_cols(cols)
        A = np.atleast_2d(np.asarray(A, dtype=float))
        rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
        if A.shape != (rhs.size, cols.size):
            raise ValueError(f"equality block shape {A.shape} != ({rhs.size}, {cols.size})")
        self._blocks.append(_Block("eq", label, cols, A, rhs))

    def add_inequality(self, row, cols, ub: float, label: str = "ineq") -> None:
        """Add one row row' x[cols] <= ub."""
        cols = self._check_cols(cols)
        row = np.atleast_2d(np.asarray(row, dtype=float))
        if row.shape != (1, cols.size):
            raise ValueError(f"inequality row shape {row.shape} != (1, {cols.size})")
        self._blocks.append(_Block("ineq", label, cols, row, np.array([float(ub)])))

    def add_soc(self, A, b, c, d: float, cols, label: str = "soc") -> None:
        """Add ||A x[cols] + b|| <= c' x[cols] + d."""
        cols = self._check_cols(cols)
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.atleast_1d(np.asarray(b, dtype=float))
        c = np.asarray(c, dtype=float)
        if A.shape[1] != cols.size or b.size != A.shape[0] or c.shape != (cols.size,):
            raise ValueError("second-order block dimensions do not match")
        self._blocks.append(_Block("soc", label, cols, A, b, c, float(d)))

    def add_quadratic_epigraph(self, G, cols, label: str = "epigraph") -> int:
        """Add a variable s with x' G'G x <= s; returns the index of s.

        Encoded as the second-order constraint ||(2 G x, s - 1)|| <= s + 1,
        which is equivalent for s >= 0 (and forces s >= 0).
        """
        cols = self._check_cols(cols)
        G = np.atleast_2d(np.asarray(G, dtype=float))
        if G.shape[1] != cols.size:
            raise ValueError(f"factor has {G.shape[1]} columns, expected {cols.size}")
        s_idx = int(self.add_variables(1)[0])
        m = G.shape[0]
        all_cols = np.concatenate([cols, [s_idx]])
        A = np.zeros((m + 1, cols.size + 1))
        A[:m, : cols.size] = 2.0 * G
        A[m, cols.size] = 1.0
        b = np.zeros(m + 1)
        b[m] = -1.0
        c = np.zeros(cols.size + 1)
        c[cols.size] = 1.0
        self._blocks.append(_Block("soc", label, all_cols, A, b, c, 1.0))
        return s_idx

    def _check_cols(self, cols) -> np.ndarray:
        cols = np.atleast_1d(np.asarray(cols, dtype=int))
        if cols.size == 0 or np.any(cols < 0) or np.any(cols >= self.num_vars):
            raise ValueError(f"column indices out of range [0, {self.num_vars})")
        if np.unique(cols).size != cols.size:
            raise ValueError("column indices must be unique within a block")
        return cols

    # ------------------------------------------------------------- inspection

    def block_labels(self) -> list[str]:
        return [blk.label for blk in self._blocks]

    def block_counts(self) -> dict[str, int]:
        """Number of blocks per label, for infeasibility diagnostics."""
        counts: dict[str, int] = {}
        for blk in self._blocks:
            counts[blk.label] = counts.get(blk.label, 0) + 1
        return counts

    def residuals(self, x: np.ndarray) -> dict[str, float]:
        """Worst violation per block label at the point x.

        Equalities contribute max |E x - g|, inequalities (a'x - ub)+, and
        second-order blocks (||A x + b|| - c'x - d)+.
        """
        x = np.asarray(x, dtype=float)
        worst: dict[str, float] = {}
        for blk in self._blocks:
            xs = x[blk.cols]
            if blk.kind == "eq":
                res = float(np.abs(blk.A @ xs - blk.b).max())
            elif blk.kind == "ineq":
                res = float(max(0.0, blk.A[0] @ xs - blk.b[0]))
            else:
                res = float(max(0.0, np.linalg.norm(blk.A @ xs + blk.b) - blk.c @ xs - blk.d))
            worst[blk.label] = max(worst.get(blk.label, 0.0), res)
        return worst

    def max_residual(self, x: np.ndarray) -> float:
        res = self.residuals(x)
        return max(res.values()) if res else 0.0

    def dump(self) -> str:
        """Plain-text listing of the model, block by block.

        Small blocks (up to 6 rows) print their full coefficients; larger
        ones print shapes and magnitudes only.
        """
        lines = [f"cone program: {self.num_vars} variables, {len(self._blocks)} blocks"]
        nz = np.flatnonzero(self._f)
        lines.append(f"objective nonzeros: {[(int(i), float(self._f[i])) for i in nz]}")
        for k, blk in enumerate(self._blocks):
            m = blk.A.shape[0] if blk.kind != "ineq" else 1
            head = f"[{k}] {blk.kind} '{blk.label}' rows={m} cols={blk.cols.tolist()}"
            lines.append(head)
            if m <= 6 and blk.cols.size <= 12:
                lines.append(f"    A={np.array2string(blk.A, precision=6, suppress_small=True)}")
                lines.append(f"    b={np.array2string(blk.b, precision=6)}")
                if blk.kind == "soc":
                    lines.append(
                        f"    c={np.array2string(blk.c, precision=6)} d={blk.d:.6g}"
                    )
            else:
                lines.append(
                    f"    |A|max={np.abs(blk.A).max():.3g} |b|max={np.abs(blk.b).max() if blk.b.size else 0:.3g}"
                )
        return "\n".join(lines)

    # ------------------------------------------------------------------ solve

    def solve(self, tol: float = 1e-8, max_iter: int = 200) -> Solution:
        """Solve with Clarabel and re-check residuals independently.

        Returns a Solution; never raises for infeasible or unbounded models,
        only for malformed input or a missing solver.
        """
        if clarabel is None:  # pragma: no cover
            raise RuntimeError("clarabel is required for ConeProgram.solve")
        if not 0 < tol < 1e-2:
            raise ValueError(f"tolerance {tol} out of range")

        A, b, cones = self._assemble()
        P = sparse.csc_matrix((self.num_vars, self.num_vars))
        settings = clarabel.DefaultSettings()
        settings.verbose = False
        settings.max_iter = int(max_iter)
        settings.max_threads = 1
        settings.tol_feas = tol
        settings.tol_gap_abs = tol
        settings.tol_gap_rel = tol

        t0 = time.perf_counter()
        raw = clarabel.DefaultSolver(P, self._f, A, b, cones, settings).solve()
        dt = time.perf_counter() - t0

        raw_status = str(raw.status)
        mapping = {
            "Solved": OPTIMAL,
            "PrimalInfeasible": INFEASIBLE,
            "AlmostPrimalInfeasible": INFEASIBLE,
            "DualInfeasible": UNBOUNDED,
            "AlmostDualInfeasible": UNBOUNDED,
        }
        status = mapping.get(raw_status, NUMERICAL_FAILURE)
        if status == OPTIMAL:
            x = np.asarray(raw.x, dtype=float)
            return Solution(
                status=status,
                x=x,
                objective=float(self._f @ x),
                max_residual=self.max_residual(x),
                solve_time=dt,
                iterations=int(raw.iterations),
                solver_status=raw_status,
            )
        return Solution(
            status=status,
            x=None,
            objective=np.nan,
            max_residual=np.inf,
            solve_time=dt,
            iterations=int(raw.iterations),
            solver_status=raw_status,
        )

    def _assemble(self):
        """Stack blocks into Clarabel's A x + s = b, s in K form."""
        rows_eq, rhs_eq = [], []
        rows_in, rhs_in = [], []
        soc_rows, soc_rhs, soc_dims = [], [], []

        def scatter(A_compact, cols):
            m = A_compact.shape[0]
            A_full = sparse.lil_matrix((m, self.num_vars))
            A_full[:, cols] = A_compact
            return A_full

        for blk in self._blocks:
            if blk.kind == "eq":
                rows_eq.append(scatter(blk.A, blk.cols))
                rhs_eq.append(blk.b)
            elif blk.kind == "ineq":
                rows_in.append(scatter(blk.A, blk.cols))
                rhs_in.append(blk.b)
            else:
                # s = b_cl - A_cl x in SOC(m+1): first entry c'x + d, rest Ax + b.
                top = scatter(-blk.c[None, :], blk.cols)
                body = scatter(-blk.A, blk.cols)
                soc_rows.append(sparse.vstack([top, body]))
                soc_rhs.append(np.concatenate([[blk.d], blk.b]))
                soc_dims.append(blk.A.shape[0] + 1)

        parts, rhs, cones = [], [], []
        if rows_eq:
            parts.append(sparse.vstack(rows_eq))
            rhs.append(np.concatenate(rhs_eq))
            cones.append(clarabel.ZeroConeT(parts[-1].shape[0]))
        if rows_in:
            parts.append(sparse.vstack(rows_in))
            rhs.append(np.concatenate(rhs_in))
            cones.append(clarabel.NonnegativeConeT(parts[-1].shape[0]))
        for rows, r, m in zip(soc_rows, soc_rhs, soc_dims):
            parts.append(rows)
            rhs.append(r)
            cones.append(clarabel.SecondOrderConeT(m))
        if not parts:
            raise ValueError("cone program has no constraints")
        A = sparse.vstack(parts).tocsc()
        b = np.concatenate(rhs)
        return A, b, cones
