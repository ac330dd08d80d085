"""Closed-loop simulation and dense constraint verification.

Simulation integrates the translational double integrator under a
zero-order-hold virtual input with classic RK4 substeps between control
ticks. Verification re-derives every planned bound from curve samples and
the flatness maps alone -- no planner data structures are trusted -- and
reports the worst signed margin per constraint family.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .flatness import InvertedFlightError, attitude_from_virtual, tilt_thrust_rates
from .planner import ConvexRegion, EndpointPins, IntervalConstraint, SafetyBounds, TrajectoryPlan, Waypoint
from .tracker import (
    CbfParams,
    CertificateReport,
    PdGains,
    ReferencePoint,
    SafeCommand,
    TrackingState,
    barrier_values,
    cbf_faces,
    certificates,
    nominal_mu,
    safe_step,
)

# ------------------------------------------------------------------ simulation


@dataclass(frozen=True)
class SimConfig:
    """Closed-loop timing plus the starting state.

    The command is held constant between control ticks; each tick is split
    into `substeps` RK4 steps. If initial_state is None the run starts on
    the reference, shifted by the two offsets.
    """

    control_rate: float = 100.0
    substeps: int = 10
    duration: float | None = None
    initial_state: TrackingState | None = None
    initial_position_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    initial_velocity_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.control_rate <= 0 or self.substeps < 1:
            raise ValueError("control_rate must be positive and substeps >= 1")
        for attr in ("initial_position_offset", "initial_velocity_offset"):
            object.__setattr__(self, attr, np.asarray(getattr(self, attr), dtype=float).reshape(3))


@dataclass(frozen=True)
class SimTrace:
    """Per-tick record of a closed-loop run (everything shaped (M, ...))."""

    t: np.ndarray
    r: np.ndarray
    r1: np.ndarray
    ref_r: np.ndarray
    ref_r1: np.ndarray
    ref_r2: np.ndarray
    mu_nominal: np.ndarray
    mu: np.ndarray
    thrust: np.ndarray
    phi: np.ndarray
    theta: np.ndarray
    barriers: np.ndarray
    active: np.ndarray

    @property
    def position_err(self) -> np.ndarray:
        return self.r - self.ref_r

    @property
    def velocity_err(self) -> np.ndarray:
        return self.r1 - self.ref_r1

    @property
    def input_dev(self) -> np.ndarray:
        return self.mu - self.ref_r2

    def certificate(self, params: CbfParams) -> CertificateReport:
        return certificates(
            self.position_err, self.velocity_err, self.input_dev, self.barriers, params
        )

    def to_csv(self, path) -> None:
        """Columnar dump, one row per control tick."""
        header = (
            ["t", "x", "y", "z", "vx", "vy", "vz"]
            + ["ref_x", "ref_y", "ref_z", "ref_vx", "ref_vy", "ref_vz"]
            + ["ref_ax", "ref_ay", "ref_az"]
            + ["mu_nom_x", "mu_nom_y", "mu_nom_z", "mu_x", "mu_y", "mu_z"]
            + ["thrust", "phi_deg", "theta_deg"]
            + ["h_xu", "h_xl", "h_yu", "h_yl", "h_zu", "h_zl", "active_faces"]
        )
        face_names = ["x+", "x-", "y+", "y-", "z+", "z-"]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for i in range(self.t.size):
                act = ";".join(name for name, on in zip(face_names, self.active[i]) if on)
                row = (
                    [self.t[i]]
                    + list(self.r[i])
                    + list(self.r1[i])
                    + list(self.ref_r[i])
                    + list(self.ref_r1[i])
                    + list(self.ref_r2[i])
                    + list(self.mu_nominal[i])
                    + list(self.mu[i])
                    + [self.thrust[i], np.rad2deg(self.phi[i]), np.rad2deg(self.theta[i])]
                    + list(self.barriers[i])
                    + [act]
                )
                writer.writerow([f"{v:.12g}" if isinstance(v, float) else v for v in row])


def rk4_step(r: np.ndarray, r1: np.ndarray, mu: np.ndarray, dt: float):
    """One RK4 step of the double integrator under constant input.

    RK4 is exact here (the flow is polynomial in time of degree 2), so the
    step reproduces r + r1 dt + mu dt^2 / 2 to rounding error.
    """

    def f(state):
        return np.concatenate([state[3:], mu])

    x = np.concatenate([r, r1])
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return x[:3], x[3:]


def plan_reference(plan: TrajectoryPlan) -> Callable[[float], ReferencePoint]:
    """Reference sampler clamped to the plan's time range (hold at the ends)."""
    kv = plan.curve.knots

    def ref(t: float) -> ReferencePoint:
        tc = min(max(t, kv.t0), kv.tf)
        return ReferencePoint(
            r=plan.curve.eval(tc, 0), r1=plan.curve.eval(tc, 1), r2=plan.curve.eval(tc, 2)
        )

    return ref


def make_filtered_controller(
    params: CbfParams, gains: PdGains, psi: float = 0.0, g: float = 9.81
) -> Callable:
    """Nominal PD wrapped in the barrier filter."""

    def controller(t: float, state: TrackingState, ref: ReferencePoint) -> SafeCommand:
        return safe_step(state, ref, nominal_mu(state, ref, gains), params, psi, g)

    return controller


def make_unfiltered_controller(
    params: CbfParams, gains: PdGains, psi: float = 0.0, g: float = 9.81
) -> Callable:
    """Nominal PD passed straight through; barriers still recorded."""

    def controller(t: float, state: TrackingState, ref: ReferencePoint) -> SafeCommand:
        mu = nominal_mu(state, ref, gains)
        return SafeCommand(
            mu_nominal=mu,
            mu=mu,
            v=_reduced_or_none(mu, psi, g),
            faces=cbf_faces(state, ref, params),
            barriers=barrier_values(state, ref, params),
            active=np.zeros(6, dtype=bool),
        )

    return controller


def _reduced_or_none(mu: np.ndarray, psi: float, g: float):
    """Reduced input for mu, or None when mu is outside the invertible branch."""
    try:
        return attitude_from_virtual(mu, psi, g)
    except InvertedFlightError:
        return None


def simulate(
    reference: Callable[[float], ReferencePoint],
    controller: Callable[[float, TrackingState, ReferencePoint], SafeCommand],
    cfg: SimConfig,
    t0: float = 0.0,
    duration: float | None = None,
) -> SimTrace:
    """Run the closed loop and record one row per control tick.

    The command computed at tick i acts on [t_i, t_{i+1}); the recorded
    state is the one the controller saw at t_i.
    """
    span = duration if duration is not None else cfg.duration
    if span is None or span <= 0:
        raise ValueError("simulation needs a positive duration")
    h = 1.0 / cfg.control_rate
    steps = int(round(span * cfg.control_rate))
    sub = h / cfg.substeps

    if cfg.initial_state is not None:
        r = np.array(cfg.initial_state.r, dtype=float)
        r1 = np.array(cfg.initial_state.r1, dtype=float)
    else:
        start = reference(t0)
        r = np.asarray(start.r, dtype=float) + cfg.initial_position_offset
        r1 = np.asarray(start.r1, dtype=float) + cfg.initial_velocity_offset

    M = steps
    out = {
        "t": np.zeros(M),
        "r": np.zeros((M, 3)),
        "r1": np.zeros((M, 3)),
        "ref_r": np.zeros((M, 3)),
        "ref_r1": np.zeros((M, 3)),
        "ref_r2": np.zeros((M, 3)),
        "mu_nominal": np.zeros((M, 3)),
        "mu": np.zeros((M, 3)),
        "thrust": np.zeros(M),
        "phi": np.zeros(M),
        "theta": np.zeros(M),
        "barriers": np.zeros((M, 6)),
        "active": np.zeros((M, 6), dtype=bool),
    }
    for i in range(M):
        t = t0 + i * h
        ref = reference(t)
        state = TrackingState(r=r, r1=r1)
        cmd = controller(t, state, ref)
        out["t"][i] = t
        out["r"][i] = r
        out["r1"][i] = r1
        out["ref_r"][i] = ref.r
        out["ref_r1"][i] = ref.r1
        out["ref_r2"][i] = ref.r2
        out["mu_nominal"][i] = cmd.mu_nominal
        out["mu"][i] = cmd.mu
        if cmd.v is not None:
            out["thrust"][i] = cmd.v.thrust
            out["phi"][i] = cmd.v.phi
            out["theta"][i] = cmd.v.theta
        else:
            out["thrust"][i] = np.nan
            out["phi"][i] = np.nan
            out["theta"][i] = np.nan
        out["barriers"][i] = cmd.barriers
        out["active"][i] = cmd.active
        for _ in range(cfg.substeps):
            r, r1 = rk4_step(r, r1, cmd.mu, sub)
    return SimTrace(**out)


# ---------------------------------------------------------------- verification


@dataclass(frozen=True)
class ConstraintCheck:
    """Worst signed margin of one constraint family (nonnegative = satisfied)."""

    name: str
    margin: float
    worst_t: float
    detail: str = ""

    def ok(self, tol: float = 1e-6) -> bool:
        return self.margin >= -tol


@dataclass(frozen=True)
class ConstraintReport:
    checks: tuple[ConstraintCheck, ...]
    samples: int

    @property
    def min_margin(self) -> float:
        return min((c.margin for c in self.checks), default=np.inf)

    def ok(self, tol: float = 1e-6) -> bool:
        return all(c.ok(tol) for c in self.checks)

    def failing(self, tol: float = 1e-6) -> list[ConstraintCheck]:
        return [c for c in self.checks if not c.ok(tol)]

    def summary(self) -> str:
        lines = [f"{'constraint':<24} {'margin':>12}   worst t"]
        for c in self.checks:
            lines.append(f"{c.name:<24} {c.margin:>12.3e}   {c.worst_t:.3f}s {c.detail}")
        return "\n".join(lines)


def _span_samples(plan: TrajectoryPlan, samples_per_span: int) -> np.ndarray:
    """Left-closed per-span grids, plus the exact final time."""
    kv = plan.curve.knots
    parts = [
        np.linspace(kv.tau[l], kv.tau[l + 1], samples_per_span, endpoint=False)
        for l in kv.nonempty_spans()
    ]
    parts.append(np.array([kv.tf]))
    return np.concatenate(parts)


def _worst(ts: np.ndarray, margins: np.ndarray) -> tuple[float, float]:
    i = int(np.argmin(margins))
    return float(margins[i]), float(ts[i])


def verify_plan(
    plan: TrajectoryPlan,
    bounds: SafetyBounds,
    waypoints: Iterable[Waypoint] = (),
    pins: EndpointPins | None = None,
    intervals: Iterable[IntervalConstraint] = (),
    corridor: Iterable[ConvexRegion] | None = None,
    samples_per_span: int = 300,
) -> ConstraintReport:
    """Dense-sampling audit of a plan against the original requirements.

    Uses only curve evaluation and the flatness maps, so it cross-checks the
    compiled cone constraints rather than restating them. Margins are signed
    slacks; the continuous-time guarantee says none should be negative.
    """
    kv = plan.curve.knots
    g = plan.gravity
    ts = _span_samples(plan, samples_per_span)
    pos = plan.curve.eval(ts, 0)
    vel = plan.curve.eval(ts, 1)
    acc = plan.curve.eval(ts, 2)
    jerk = plan.curve.eval(ts, 3)
    thrust, phi, theta, p_rate, q_rate = tilt_thrust_rates(acc, jerk, g)

    checks: list[ConstraintCheck] = []

    speed = np.linalg.norm(vel, axis=1)
    m, wt = _worst(ts, bounds.v_max - speed)
    checks.append(ConstraintCheck("speed", m, wt, f"max {speed.max():.4f} <= {bounds.v_max}"))

    tilt = np.maximum(np.abs(phi), np.abs(theta))
    m, wt = _worst(ts, bounds.tilt_max - tilt)
    checks.append(
        ConstraintCheck("tilt", m, wt, f"max {np.rad2deg(tilt.max()):.3f} deg")
    )

    m, wt = _worst(ts, bounds.thrust_max - thrust)
    checks.append(ConstraintCheck("thrust-upper", m, wt, f"max {thrust.max():.4f}"))
    m, wt = _worst(ts, thrust - bounds.thrust_min)
    checks.append(ConstraintCheck("thrust-lower", m, wt, f"min {thrust.min():.4f}"))

    rate = np.maximum(np.abs(p_rate), np.abs(q_rate))
    m, wt = _worst(ts, bounds.omega_max - rate)
    checks.append(
        ConstraintCheck("body-rate", m, wt, f"max {np.rad2deg(rate.max()):.4f} deg/s")
    )

    for region in bounds.regions:
        m, wt = _worst(ts, region.margin(pos))
        checks.append(ConstraintCheck(f"region:{region.name or 'set'}", m, wt))

    for k, wp in enumerate(waypoints):
        err = float(np.linalg.norm(plan.curve.eval(wp.time) - wp.position))
        checks.append(
            ConstraintCheck(f"waypoint[{k}]", wp.radius - err, wp.time, f"err {err:.5f}")
        )

    if pins is not None:
        for t_m, values, side in ((kv.t0, pins.initial, "start"), (kv.tf, pins.final, "end")):
            for r, value in enumerate(values):
                err = float(np.abs(plan.curve.eval(t_m, r) - value).max())
                checks.append(ConstraintCheck(f"pin:{side}[r{r}]", -err, t_m, f"err {err:.2e}"))

    for k, ic in enumerate(intervals):
        inside = (ts >= ic.t_start) & (ts <= ic.t_end)
        if ic.kind == "position":
            m, wt = _worst(ts[inside], ic.region.margin(pos[inside]))
            checks.append(ConstraintCheck(f"window[{k}]:position", m, wt))
        else:
            m, wt = _worst(ts[inside], ic.bound - speed[inside])
            checks.append(ConstraintCheck(f"window[{k}]:speed", m, wt))

    if corridor is not None:
        d = kv.degree
        for l, region in enumerate(corridor, start=1):
            span = l + d - 1
            seg = np.linspace(kv.tau[span], kv.tau[span + 1], samples_per_span)
            m, wt = _worst(seg, region.margin(plan.curve.eval(seg, 0)))
            checks.append(ConstraintCheck(f"corridor[{l}]:{region.name or 'set'}", m, wt))

    return ConstraintReport(checks=tuple(checks), samples=ts.size)


def verify_span_minima(
    plan: TrajectoryPlan, omega_max: float, samples_per_span: int = 300
) -> ConstraintReport:
    """Check the per-span thrust floors zeta against sampled truth.

    For each span: zeta may not exceed the sampled minimum thrust, and the
    sampled maximum jerk may not exceed omega_max * zeta.
    """
    kv = plan.curve.knots
    g = plan.gravity
    checks = []
    for l in kv.nonempty_spans():
        z = plan.zeta_for_span(l)
        seg = np.linspace(kv.tau[l], kv.tau[l + 1], samples_per_span)
        acc = plan.curve.eval(seg, 2)
        jerk = plan.curve.eval(seg, 3)
        thrust = np.linalg.norm(acc + np.array([0.0, 0.0, g]), axis=1)
        m1, wt1 = _worst(seg, thrust - z)
        checks.append(ConstraintCheck(f"span[{l}]:thrust-floor", m1, wt1, f"zeta {z:.4f}"))
        jmax = np.linalg.norm(jerk, axis=1)
        m2, wt2 = _worst(seg, omega_max * z - jmax)
        checks.append(ConstraintCheck(f"span[{l}]:jerk-cone", m2, wt2))
    return ConstraintReport(checks=tuple(checks), samples=samples_per_span)
