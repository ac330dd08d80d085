"""Convex trajectory planning on B-spline coefficients.

Every mission requirement is compiled into a constraint on derivative
control points of the flat-output spline. Because each derivative curve
lies in the convex hull of d - r + 1 of its control points on every knot
span, a finite list of second-order cone constraints certifies the bound
for all continuous time. The compiled program minimizes the integral of
squared snap minus the sum of per-span thrust floors zeta, whose cones
linearize the body-rate bound.

Variable layout: x = [P_x (n+1), P_y (n+1), P_z (n+1), zeta (K), s_x, s_y, s_z]
with axis blocks first, then rate floors, then snap epigraph variables.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .socp import OPTIMAL, ConeProgram, Solution
from .splines import KnotVector, SplineCurve, basis_eval, clamped_uniform_knots, snap_gram
from .tracker import CbfParams


class PlanInfeasibleError(RuntimeError):
    """The compiled cone program has no solution (or the solver failed).

    Carries the solver status and the census of constraint blocks so the
    caller can see which requirement families were active.
    """

    def __init__(self, status: str, block_counts: dict[str, int]):
        self.status = status
        self.block_counts = dict(block_counts)
        census = ", ".join(f"{k}={v}" for k, v in sorted(block_counts.items()))
        super().__init__(f"plan is {status}; constraint blocks: {census}")


class MarginInfeasibleError(ValueError):
    """Tracking margins leave no room for the planner (hover excluded)."""


# --------------------------------------------------------------------- regions


@dataclass(frozen=True)
class SocSet:
    """One membership constraint ||A p + b|| <= c' p + d on a point p in R^3.

    A linear half-space is the degenerate case with zero rows in A
    (the norm of an empty vector is zero).
    """

    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: float

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float).reshape(-1, 3)
        b = np.asarray(self.b, dtype=float).reshape(-1)
        c = np.asarray(self.c, dtype=float).reshape(3)
        if b.size != A.shape[0]:
            raise ValueError("offset length must match the number of rows")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)

    @property
    def is_linear(self) -> bool:
        return self.A.shape[0] == 0 or not self.A.any()

    def margin(self, p: np.ndarray) -> np.ndarray:
        """Signed slack c'p + d - ||Ap + b||; nonnegative inside. Batched."""
        p = np.asarray(p, dtype=float)
        lhs = 0.0
        if self.A.shape[0]:
            lhs = np.linalg.norm(p @ self.A.T + self.b, axis=-1)
        return p @ self.c + self.d - lhs


@dataclass(frozen=True)
class ConvexRegion:
    """Intersection of SocSet constraints, with constructors for common shapes."""

    cones: tuple[SocSet, ...]
    name: str = ""

    @staticmethod
    def box(lo, hi, name: str = "box") -> "ConvexRegion":
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        if np.any(hi <= lo):
            raise ValueError(f"box bounds must satisfy lo < hi, got {lo} {hi}")
        empty = np.zeros((0, 3))
        cones = []
        for k in range(3):
            e = np.zeros(3)
            e[k] = 1.0
            cones.append(SocSet(empty, np.zeros(0), -e, float(hi[k])))
            cones.append(SocSet(empty, np.zeros(0), e, -float(lo[k])))
        return ConvexRegion(tuple(cones), name)

    @staticmethod
    def ball(center, radius: float, name: str = "ball") -> "ConvexRegion":
        if radius <= 0:
            raise ValueError("ball radius must be positive")
        c = np.asarray(center, dtype=float)
        return ConvexRegion((SocSet(np.eye(3), -c, np.zeros(3), float(radius)),), name)

    @staticmethod
    def ellipsoid(A, b, name: str = "ellipsoid") -> "ConvexRegion":
        """Region ||A p + b|| <= 1."""
        return ConvexRegion((SocSet(A, b, np.zeros(3), 1.0),), name)

    @staticmethod
    def halfspace(normal, offset: float, name: str = "halfspace") -> "ConvexRegion":
        """Region normal' p <= offset."""
        a = np.asarray(normal, dtype=float)
        return ConvexRegion((SocSet(np.zeros((0, 3)), np.zeros(0), -a, float(offset)),), name)

    def margin(self, p: np.ndarray) -> np.ndarray:
        """Worst slack over the member cones; nonnegative inside. Batched."""
        return np.min(np.stack([c.margin(p) for c in self.cones], axis=-1), axis=-1)


# ----------------------------------------------------------------- scenario IO


@dataclass(frozen=True)
class SafetyBounds:
    """Dynamic limits the plan must certify for all continuous time.

    tilt_max bounds |roll| and |pitch|; thrust values are mass-normalized;
    omega_max bounds the first two body rates. regions, if any, constrain
    position globally. tilt_margin is an internal offset subtracted from the
    gravity side of the tilt cone when tracking margins are applied.
    """

    v_max: float
    tilt_max: float
    thrust_min: float
    thrust_max: float
    omega_max: float
    regions: tuple[ConvexRegion, ...] = ()
    tilt_margin: float = 0.0

    def __post_init__(self):
        if self.v_max <= 0:
            raise ValueError("v_max must be positive")
        if not 0.0 < self.tilt_max <= np.pi / 2:
            raise ValueError("tilt_max must lie in (0, pi/2]")
        if not 0.0 <= self.thrust_min <= self.thrust_max:
            raise ValueError("need 0 <= thrust_min <= thrust_max")
        if self.omega_max <= 0:
            raise ValueError("omega_max must be positive")
        if self.tilt_margin < 0:
            raise ValueError("tilt_margin must be nonnegative")


@dataclass(frozen=True)
class Waypoint:
    """Pass within `radius` of `position` at time `time` (radius 0 pins it)."""

    position: np.ndarray
    time: float
    radius: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        if self.radius < 0:
            raise ValueError("waypoint radius must be nonnegative")


@dataclass(frozen=True)
class EndpointPins:
    """Pinned derivatives at t0 and tf; entry r of each tuple is order r."""

    initial: tuple[np.ndarray, ...]
    final: tuple[np.ndarray, ...]

    def __post_init__(self):
        for attr in ("initial", "final"):
            vals = tuple(np.asarray(v, dtype=float).reshape(3) for v in getattr(self, attr))
            object.__setattr__(self, attr, vals)

    @staticmethod
    def rest_to_rest(p_start, p_end, orders: int = 4) -> "EndpointPins":
        """Pin position plus zero derivatives up to the given order at both ends."""
        zeros = [np.zeros(3)] * orders
        return EndpointPins(
            initial=tuple([np.asarray(p_start, dtype=float)] + zeros),
            final=tuple([np.asarray(p_end, dtype=float)] + zeros),
        )


@dataclass(frozen=True)
class IntervalConstraint:
    """Extra requirement on a time window: position membership or a speed cap."""

    t_start: float
    t_end: float
    kind: str  # "position" | "speed"
    region: ConvexRegion | None = None
    bound: float | None = None

    def __post_init__(self):
        if self.t_end <= self.t_start:
            raise ValueError("interval must have t_start < t_end")
        if self.kind == "position":
            if self.region is None:
                raise ValueError("position interval needs a region")
        elif self.kind == "speed":
            if self.bound is None or self.bound <= 0:
                raise ValueError("speed interval needs a positive bound")
        else:
            raise ValueError(f"unknown interval kind '{self.kind}'")


@dataclass(frozen=True)
class PlanningScenario:
    """Everything the planner needs for one solve."""

    name: str
    t0: float
    tf: float
    n: int
    degree: int
    bounds: SafetyBounds
    pins: EndpointPins
    waypoints: tuple[Waypoint, ...] = ()
    intervals: tuple[IntervalConstraint, ...] = ()
    corridor: tuple[ConvexRegion, ...] | None = None
    zeta_mode: str = "per-span"
    cbf: CbfParams | None = None
    apply_tracking_margins: bool = False
    gravity: float = 9.81
    solver_tol: float = 1e-8

    def __post_init__(self):
        if self.zeta_mode not in ("per-span", "scalar"):
            raise ValueError("zeta_mode must be 'per-span' or 'scalar'")
        if self.apply_tracking_margins and self.cbf is None:
            raise ValueError("tracking margins need cbf parameters")
        if self.corridor is not None and self.n != len(self.corridor) + self.degree - 1:
            raise ValueError(
                f"corridor with {len(self.corridor)} sets needs n = "
                f"{len(self.corridor) + self.degree - 1}, got n = {self.n}"
            )


@dataclass(frozen=True)
class SolveStats:
    status: str
    solve_time: float
    iterations: int
    max_residual: float
    num_vars: int
    block_counts: dict[str, int]


@dataclass(frozen=True)
class TrajectoryPlan:
    """A solved spline plan plus its rate floors and solve diagnostics."""

    curve: SplineCurve
    zeta: np.ndarray
    zeta_mode: str
    objective: float
    snap: float
    gravity: float
    name: str
    solve_stats: SolveStats

    def flat_output(self, t: float):
        """FlatOutput record (derivatives to jerk, zero yaw) at time t."""
        from .flatness import FlatOutput

        return FlatOutput(
            r=self.curve.eval(t, 0),
            r1=self.curve.eval(t, 1),
            r2=self.curve.eval(t, 2),
            r3=self.curve.eval(t, 3),
        )

    def sample(self, ts: np.ndarray) -> dict[str, np.ndarray]:
        """Batched derivatives 0..3 at the given times."""
        return {f"r{r}": self.curve.eval(ts, r) for r in range(4)}

    def zeta_for_span(self, l: int) -> float:
        """Rate floor active on knot span l (d <= l <= n)."""
        if self.zeta_mode == "scalar":
            return float(self.zeta[0])
        return float(self.zeta[l - self.curve.knots.degree])

    def to_dict(self) -> dict:
        kv = self.curve.knots
        return {
            "format": "safeflight-plan",
            "version": 1,
            "name": self.name,
            "t0": kv.t0,
            "tf": kv.tf,
            "n": kv.n,
            "degree": kv.degree,
            "gravity": self.gravity,
            "zeta_mode": self.zeta_mode,
            "control_points": [row.tolist() for row in np.asarray(self.curve.ctrl)],
            "zeta": np.asarray(self.zeta).tolist(),
            "objective": self.objective,
            "snap": self.snap,
            "max_residual": self.solve_stats.max_residual,
        }

    @staticmethod
    def from_dict(doc: dict) -> "TrajectoryPlan":
        if doc.get("format") != "safeflight-plan":
            raise ValueError("not a plan document")
        kv = clamped_uniform_knots(doc["t0"], doc["tf"], doc["n"], doc["degree"])
        curve = SplineCurve(kv, np.asarray(doc["control_points"], dtype=float))
        stats = SolveStats(
            status="loaded",
            solve_time=0.0,
            iterations=0,
            max_residual=float(doc.get("max_residual", np.nan)),
            num_vars=0,
            block_counts={},
        )
        return TrajectoryPlan(
            curve=curve,
            zeta=np.asarray(doc["zeta"], dtype=float),
            zeta_mode=doc["zeta_mode"],
            objective=float(doc.get("objective", np.nan)),
            snap=float(doc.get("snap", np.nan)),
            gravity=float(doc["gravity"]),
            name=str(doc.get("name", "plan")),
            solve_stats=stats,
        )


# ------------------------------------------------------------------- assembly


class PlanAssembly:
    """Cone-program builder over the spline coefficient layout.

    Exposes the compile_* steps individually so constraint families can be
    tested in isolation; plan() runs the standard full pipeline.
    """

    def __init__(self, kv: KnotVector, gravity: float = 9.81):
        self.kv = kv
        self.g = float(gravity)
        self.n = kv.n
        self.cp = ConeProgram(3 * (kv.n + 1))
        self.zeta_cols = np.zeros(0, dtype=int)
        self.epigraph_cols: list[int] = []

    # -- variable addressing

    def point_cols(self, j: int) -> np.ndarray:
        """Variable indices of control point j across the three axes."""
        stride = self.n + 1
        return np.array([j, stride + j, 2 * stride + j])

    def all_point_cols(self) -> np.ndarray:
        return np.arange(3 * (self.n + 1))

    def axis_cols(self, axis: int) -> np.ndarray:
        stride = self.n + 1
        return np.arange(axis * stride, (axis + 1) * stride)

    def stacked_rows(self, w: np.ndarray) -> np.ndarray:
        """3 x 3(n+1) matrix applying the coefficient row w on each axis."""
        m = np.zeros((3, 3 * (self.n + 1)))
        for axis in range(3):
            m[axis, self.axis_cols(axis)] = w
        return m

    def dpoint_rows(self, r: int, j: int) -> np.ndarray:
        """Rows selecting derivative control point j of order r, all axes."""
        return self.stacked_rows(self.kv.derivative_matrix(r)[:, j])

    # -- membership of one linear point expression in a region

    def _add_membership(self, rows: np.ndarray, region: ConvexRegion, label: str) -> None:
        cols = self.all_point_cols()
        for cone in region.cones:
            if cone.is_linear:
                self.cp.add_inequality(-(cone.c @ rows), cols, cone.d, label)
            else:
                self.cp.add_soc(cone.A @ rows, cone.b, rows.T @ cone.c, cone.d, cols, label)

    # -- constraint families

    def compile_position(self, regions, js=None, label: str = "position") -> None:
        """Every control point (or the given ones) inside every region."""
        if js is None:
            js = range(self.n + 1)
        eye = np.eye(self.n + 1)
        for j in js:
            rows = self.stacked_rows(eye[:, j])
            for region in regions:
                self._add_membership(rows, region, label)

    def compile_velocity(self, v_max: float, js=None, label: str = "velocity") -> None:
        """||velocity point j|| <= v_max for j in 1..n (or the given ones)."""
        if js is None:
            js = range(1, self.n + 1)
        cols = self.all_point_cols()
        for j in js:
            rows = self.dpoint_rows(1, j)
            self.cp.add_soc(rows, np.zeros(3), np.zeros(cols.size), v_max, cols, label)

    def compile_tilt_cone(self, tilt_max: float, margin: float = 0.0) -> None:
        """Acceleration points inside the tilt cone of half-angle tilt_max.

        ||cot(tilt_max) * (V_j,x, V_j,y)|| <= g - margin + V_j,z for j = 2..n;
        by the flat map this bounds max(|roll|, |pitch|) over all yaw.
        """
        if margin >= self.g:
            raise MarginInfeasibleError(f"tilt margin {margin:.3f} exceeds gravity")
        cot = abs(1.0 / np.tan(tilt_max))
        cols = self.all_point_cols()
        for j in range(2, self.n + 1):
            rows = self.dpoint_rows(2, j)
            self.cp.add_soc(cot * rows[:2], np.zeros(2), rows[2], self.g - margin, cols, "tilt")

    def compile_thrust(self, thrust_min: float, thrust_max: float) -> None:
        """Thrust band on acceleration points j = 2..n.

        ||V_j + g e3|| <= thrust_max and V_j,z >= thrust_min - g.
        """
        cols = self.all_point_cols()
        b = np.array([0.0, 0.0, self.g])
        for j in range(2, self.n + 1):
            rows = self.dpoint_rows(2, j)
            self.cp.add_soc(rows, b, np.zeros(cols.size), thrust_max, cols, "thrust-upper")
            self.cp.add_inequality(-rows[2], cols, self.g - thrust_min, "thrust-lower")

    def compile_rate(self, omega_max: float, zeta_mode: str) -> np.ndarray:
        """Body-rate cones with thrust-floor variables zeta.

        Per span l: zeta_k <= g + V_j,z for the span's acceleration points
        and ||jerk point j|| <= omega_max * zeta_k for its jerk points. The
        scalar mode shares one zeta across all spans.
        """
        d = self.kv.degree
        if zeta_mode == "scalar":
            zeta = self.cp.add_variables(1)
            groups = [(int(zeta[0]), range(2, self.n + 1), range(3, self.n + 1))]
        else:
            spans = list(self.kv.nonempty_spans())
            zeta = self.cp.add_variables(len(spans))
            groups = [
                (int(zeta[k]), range(l - d + 2, l + 1), range(l - d + 3, l + 1))
                for k, l in enumerate(spans)
            ]
        pcols = self.all_point_cols()
        for z_col, lin_js, soc_js in groups:
            for j in lin_js:
                # zeta - V_j,z <= g
                row = np.zeros(pcols.size + 1)
                row[: pcols.size] = -self.dpoint_rows(2, j)[2]
                row[-1] = 1.0
                self.cp.add_inequality(row, np.concatenate([pcols, [z_col]]), self.g, "rate-floor")
            for j in soc_js:
                rows = np.zeros((3, pcols.size + 1))
                rows[:, : pcols.size] = self.dpoint_rows(3, j)
                c = np.zeros(pcols.size + 1)
                c[-1] = omega_max
                self.cp.add_soc(
                    rows, np.zeros(3), c, 0.0, np.concatenate([pcols, [z_col]]), "rate-jerk"
                )
        self.zeta_cols = zeta
        return zeta

    def compile_waypoints(self, waypoints) -> None:
        """Curve within each waypoint ball at its time (equality if radius 0)."""
        kv = self.kv
        for wp in waypoints:
            lam = basis_eval(kv, kv.degree, wp.time)
            rows = self.stacked_rows(lam)
            cols = self.all_point_cols()
            if wp.radius == 0.0:
                self.cp.add_equality(rows, cols, wp.position, "waypoint")
            else:
                self.cp.add_soc(
                    rows, -wp.position, np.zeros(cols.size), wp.radius, cols, "waypoint"
                )

    def compile_endpoints(self, pins: EndpointPins) -> None:
        """Equality pins on derivatives at t0 and tf."""
        kv = self.kv
        for t_m, values in ((kv.t0, pins.initial), (kv.tf, pins.final)):
            for r, value in enumerate(values):
                if r > kv.degree:
                    raise ValueError(f"cannot pin derivative order {r} of degree {kv.degree}")
                lam = basis_eval(kv, kv.degree - r, t_m)
                w = kv.derivative_matrix(r) @ lam
                self.cp.add_equality(self.stacked_rows(w), self.all_point_cols(), value, "endpoint")

    def compile_corridor(self, sets) -> None:
        """Sequential membership: control point j-1 in S_l for j = l..l+d.

        Requires n = len(sets) + degree - 1 so the corridor exactly covers
        the control points; consecutive sets overlap on d points, which
        makes the spline pass through the common regions in order.
        """
        d = self.kv.degree
        if self.n != len(sets) + d - 1:
            raise ValueError(
                f"corridor with {len(sets)} sets needs n = {len(sets) + d - 1}, got {self.n}"
            )
        for l, region in enumerate(sets, start=1):
            self.compile_position([region], js=range(l - 1, l + d), label="corridor")

    def compile_interval(self, ic: IntervalConstraint) -> range:
        """Window constraint via outward rounding to whole knot spans.

        Returns the range of derivative-point columns that were constrained
        (order 0 for position membership, order 1 for a speed cap).
        """
        r = 0 if ic.kind == "position" else 1
        js = interval_window_columns(self.kv, ic.t_start, ic.t_end, r)
        if ic.kind == "position":
            self.compile_position([ic.region], js=js, label="window-position")
        else:
            self.compile_velocity(ic.bound, js=js, label="window-speed")
        return js

    def compile_objective(self, zeta_cols: np.ndarray) -> None:
        """Snap epigraph per axis minus the sum of rate floors."""
        _, G = snap_gram(self.kv)
        for axis in range(3):
            s = self.cp.add_quadratic_epigraph(G, self.axis_cols(axis), "snap-epigraph")
            self.cp.add_objective([s], [1.0])
            self.epigraph_cols.append(s)
        if zeta_cols.size:
            self.cp.add_objective(zeta_cols, -np.ones(zeta_cols.size))


def interval_window_columns(kv: KnotVector, t_start: float, t_end: float, r: int) -> range:
    """Derivative-point columns governing [t_start, t_end] for order r.

    The window is rounded outward to whole knot spans; the union of the
    per-span hulls for those spans is controlled by columns
    span_lo - degree + r .. span_hi (inclusive), returned as a range.
    """
    if not kv.t0 <= t_start < t_end <= kv.tf:
        raise ValueError("window must satisfy t0 <= t_start < t_end <= tf")
    lo = kv.span_index(t_start)
    hi = int(np.searchsorted(kv.tau, t_end, side="left"))  # first knot >= t_end
    return range(lo - kv.degree + r, hi)


def compile_tracking_margins(bounds: SafetyBounds, cbf: CbfParams) -> SafetyBounds:
    """Shrink planning bounds so tracked flight still meets the originals.

    The filtered tracker deviates from the reference acceleration by at most
    4 * delta * a2 per axis, hence sqrt(3) times that in Euclidean norm. The
    thrust band shrinks by that amount and the tilt cone retreats by
    dev * (1 + sqrt(2) |cot(tilt_max)|) on its gravity side.

    Raises:
        MarginInfeasibleError: if the shrunk band cannot contain hover.
    """
    dev = 4.0 * cbf.delta * cbf.a2
    ball = float(np.sqrt(3.0) * dev)
    tilt_margin = float(dev * (1.0 + np.sqrt(2.0) * abs(1.0 / np.tan(bounds.tilt_max))))
    g = 9.81
    new_max = bounds.thrust_max - ball
    new_min = bounds.thrust_min + ball if bounds.thrust_min > 0 else bounds.thrust_min
    problems = []
    if new_max < g:
        problems.append(f"thrust_max - sqrt(3)*4*delta*a2 = {new_max:.3f} < g")
    if new_min > g:
        problems.append(f"thrust_min + sqrt(3)*4*delta*a2 = {new_min:.3f} > g")
    if bounds.tilt_margin + tilt_margin >= g:
        problems.append(f"tilt margin {tilt_margin:.3f} >= g")
    if problems:
        raise MarginInfeasibleError("; ".join(problems))
    return dataclasses.replace(
        bounds,
        thrust_max=new_max,
        thrust_min=new_min,
        tilt_margin=bounds.tilt_margin + tilt_margin,
    )


def plan(scenario: PlanningScenario) -> TrajectoryPlan:
    """Compile and solve the full planning program for a scenario.

    Raises:
        PlanInfeasibleError: infeasible, unbounded, or failed solve.
        MarginInfeasibleError: tracking margins leave no feasible band.
    """
    kv = clamped_uniform_knots(scenario.t0, scenario.tf, scenario.n, scenario.degree)
    bounds = scenario.bounds
    if scenario.apply_tracking_margins:
        bounds = compile_tracking_margins(bounds, scenario.cbf)

    asm = PlanAssembly(kv, gravity=scenario.gravity)
    if bounds.regions:
        asm.compile_position(bounds.regions)
    asm.compile_velocity(bounds.v_max)
    asm.compile_tilt_cone(bounds.tilt_max, margin=bounds.tilt_margin)
    asm.compile_thrust(bounds.thrust_min, bounds.thrust_max)
    zeta_cols = asm.compile_rate(bounds.omega_max, scenario.zeta_mode)
    asm.compile_waypoints(scenario.waypoints)
    asm.compile_endpoints(scenario.pins)
    if scenario.corridor is not None:
        asm.compile_corridor(scenario.corridor)
    for ic in scenario.intervals:
        asm.compile_interval(ic)
    asm.compile_objective(zeta_cols)

    sol: Solution = asm.cp.solve(tol=scenario.solver_tol)
    if sol.status != OPTIMAL:
        raise PlanInfeasibleError(sol.status, asm.cp.block_counts())

    ctrl = sol.x[: 3 * (kv.n + 1)].reshape(3, kv.n + 1)
    zeta = sol.x[zeta_cols]
    Q, _ = snap_gram(kv)
    snap = float(sum(ctrl[a] @ Q @ ctrl[a] for a in range(3)))
    stats = SolveStats(
        status=sol.status,
        solve_time=sol.solve_time,
        iterations=sol.iterations,
        max_residual=sol.max_residual,
        num_vars=asm.cp.num_vars,
        block_counts=asm.cp.block_counts(),
    )
    return TrajectoryPlan(
        curve=SplineCurve(kv, ctrl),
        zeta=zeta,
        zeta_mode=scenario.zeta_mode,
        objective=sol.objective,
        snap=snap,
        gravity=scenario.gravity,
        name=scenario.name,
        solve_stats=stats,
    )
