"""Barrier-based safety filter for trajectory tracking.

The tracked vehicle is treated as a double integrator in the virtual input
mu (commanded acceleration). Six barrier functions, two per axis, keep the
position error inside the tube ||r - r_ref||_inf <= delta:

    h_q^up = delta - (q - q_ref),    h_q^low = delta + (q - q_ref).

Enforcing both at relative degree two yields, per axis, a closed interval
of admissible mu_q whose width is identically 2 * a2 * delta. The filter is
therefore a per-axis clamp of the nominal input: the exact solution of the
safety QP, no numerical solve required.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .flatness import ReducedInput, attitude_from_virtual, virtual_from_attitude


@dataclass(frozen=True)
class CbfParams:
    """Tube half-width delta and the class-K chain coefficients a1, a2.

    The error dynamics under the filter admit the decomposition
    s^2 + a1 s + a2 = (s + lambda_fast)(s + lambda_slow); real roots are
    required (a1^2 >= 4 a2) for the tube guarantee.
    """

    delta: float
    a1: float
    a2: float

    def __post_init__(self):
        if self.delta <= 0 or self.a1 <= 0 or self.a2 <= 0:
            raise ValueError("delta, a1, a2 must all be positive")
        if self.a1**2 < 4.0 * self.a2:
            raise ValueError(
                f"a1^2 = {self.a1 ** 2:.3f} < 4 a2 = {4 * self.a2:.3f}: complex error poles"
            )

    @property
    def lambda_fast(self) -> float:
        return 0.5 * (self.a1 + np.sqrt(self.a1**2 - 4.0 * self.a2))

    @property
    def lambda_slow(self) -> float:
        return 0.5 * (self.a1 - np.sqrt(self.a1**2 - 4.0 * self.a2))

    @property
    def velocity_bound(self) -> float:
        """Steady-state bound on ||de/dt||_inf inside the tube: 2 delta a2 / a1."""
        return 2.0 * self.delta * self.a2 / self.a1

    @property
    def input_deviation_bound(self) -> float:
        """Bound on ||mu* - ddot r_ref||_inf inside the tube: 4 delta a2."""
        return 4.0 * self.delta * self.a2


@dataclass(frozen=True)
class TrackingState:
    """Translational state of the tracked vehicle."""

    r: np.ndarray
    r1: np.ndarray


@dataclass(frozen=True)
class ReferencePoint:
    """Reference position, velocity, and acceleration at one control tick."""

    r: np.ndarray
    r1: np.ndarray
    r2: np.ndarray


@dataclass(frozen=True)
class CbfFace:
    """One half-space of the admissible-input box.

    side +1 encodes mu_q <= bound (upper face, from h_q^up); side -1
    encodes mu_q >= bound (lower face, from h_q^low). bound may be an
    array when the faces were built from batched states.
    """

    axis: int
    side: int
    bound: float | np.ndarray


def face_bounds(
    r, r1, ref_r, ref_r1, ref_r2, params: CbfParams
) -> tuple[np.ndarray, np.ndarray]:
    """Admissible interval [lower, upper] of mu per axis; batched over (..., 3).

    upper - lower == 2 * a2 * delta holds identically, so the filter is
    always feasible regardless of the state.
    """
    e = np.asarray(r, dtype=float) - np.asarray(ref_r, dtype=float)
    e1 = np.asarray(r1, dtype=float) - np.asarray(ref_r1, dtype=float)
    base = np.asarray(ref_r2, dtype=float) - params.a1 * e1 - params.a2 * e
    lower = base - params.a2 * params.delta
    upper = base + params.a2 * params.delta
    return lower, upper


def cbf_faces(state: TrackingState, ref: ReferencePoint, params: CbfParams) -> tuple[CbfFace, ...]:
    """The six input-box faces at the current state, ordered x+,x-,y+,y-,z+,z-."""
    lower, upper = face_bounds(state.r, state.r1, ref.r, ref.r1, ref.r2, params)
    faces = []
    for axis in range(3):
        faces.append(CbfFace(axis=axis, side=+1, bound=upper[..., axis]))
        faces.append(CbfFace(axis=axis, side=-1, bound=lower[..., axis]))
    return tuple(faces)


def filter_input(mu_nominal: np.ndarray, faces: tuple[CbfFace, ...]) -> np.ndarray:
    """Project the nominal virtual input onto the admissible box.

    The QP min ||mu - mu_nominal||^2 over the box separates by axis, so the
    exact solution is a clamp. Feasibility is structural: each axis interval
    has positive width 2 * a2 * delta by construction.
    """
    mu = np.array(mu_nominal, dtype=float, copy=True)
    lower = np.empty_like(mu)
    upper = np.empty_like(mu)
    for face in faces:
        if face.side > 0:
            upper[..., face.axis] = face.bound
        else:
            lower[..., face.axis] = face.bound
    return np.clip(mu, lower, upper)


def barrier_values(state: TrackingState, ref: ReferencePoint, params: CbfParams) -> np.ndarray:
    """The six tube barriers h, ordered like cbf_faces; nonnegative inside."""
    e = np.asarray(state.r, dtype=float) - np.asarray(ref.r, dtype=float)
    h = np.empty(e.shape[:-1] + (6,))
    for axis in range(3):
        h[..., 2 * axis] = params.delta - e[..., axis]
        h[..., 2 * axis + 1] = params.delta + e[..., axis]
    return h


@dataclass(frozen=True)
class PdGains:
    """Proportional-derivative tracking gains for the nominal controller."""

    kp: float
    kd: float

    def __post_init__(self):
        if self.kp < 0 or self.kd < 0:
            raise ValueError("gains must be nonnegative")


def nominal_mu(state: TrackingState, ref: ReferencePoint, gains: PdGains) -> np.ndarray:
    """Feedforward-plus-PD virtual input, before filtering."""
    return (
        np.asarray(ref.r2, dtype=float)
        + gains.kp * (np.asarray(ref.r, dtype=float) - np.asarray(state.r, dtype=float))
        + gains.kd * (np.asarray(ref.r1, dtype=float) - np.asarray(state.r1, dtype=float))
    )


def nominal_pd(
    state: TrackingState, ref: ReferencePoint, gains: PdGains, psi: float = 0.0, g: float = 9.81
) -> ReducedInput:
    """The nominal controller as a reduced input (thrust and attitude)."""
    return attitude_from_virtual(nominal_mu(state, ref, gains), psi, g)


@dataclass(frozen=True)
class SafeCommand:
    """Output of one filter step."""

    mu_nominal: np.ndarray
    mu: np.ndarray
    v: ReducedInput
    faces: tuple[CbfFace, ...]
    barriers: np.ndarray
    active: np.ndarray  # which of the six faces clamp mu, ordered like faces


def safe_step(
    state: TrackingState,
    ref: ReferencePoint,
    mu_nominal: np.ndarray,
    params: CbfParams,
    psi: float = 0.0,
    g: float = 9.81,
) -> SafeCommand:
    """Filter one nominal input and convert it back to thrust and attitude."""
    faces = cbf_faces(state, ref, params)
    mu = filter_input(mu_nominal, faces)
    active = np.zeros(6, dtype=bool)
    for k, face in enumerate(faces):
        active[k] = abs(float(mu[face.axis]) - float(face.bound)) <= 1e-9
    return SafeCommand(
        mu_nominal=np.asarray(mu_nominal, dtype=float),
        mu=mu,
        v=attitude_from_virtual(mu, psi, g),
        faces=faces,
        barriers=barrier_values(state, ref, params),
        active=active,
    )


@dataclass(frozen=True)
class InitialConditionReport:
    """Checks on the starting state against the tube guarantee hypotheses.

    The tube guarantee needs the state inside the tube and the mixed error
    ||de/dt + lambda e||_inf within lambda * delta for one of the two error
    poles; the velocity bound additionally needs
    ||de/dt||_inf <= 2 delta a2 / a1.
    """

    e_inf: float
    e1_inf: float
    slope_fast: float
    slope_slow: float
    params: CbfParams

    @property
    def tube_ok(self) -> bool:
        return bool(self.e_inf <= self.params.delta + 1e-12)

    @property
    def slope_ok(self) -> bool:
        lf, ls = self.params.lambda_fast, self.params.lambda_slow
        d = self.params.delta
        return bool(self.slope_fast <= lf * d + 1e-12 or self.slope_slow <= ls * d + 1e-12)

    @property
    def velocity_ok(self) -> bool:
        return bool(self.e1_inf <= self.params.velocity_bound + 1e-12)

    @property
    def ok(self) -> bool:
        return self.tube_ok and self.slope_ok


def check_initial_conditions(
    state: TrackingState, ref: ReferencePoint, params: CbfParams
) -> InitialConditionReport:
    e = np.asarray(state.r, dtype=float) - np.asarray(ref.r, dtype=float)
    e1 = np.asarray(state.r1, dtype=float) - np.asarray(ref.r1, dtype=float)
    return InitialConditionReport(
        e_inf=float(np.abs(e).max()),
        e1_inf=float(np.abs(e1).max()),
        slope_fast=float(np.abs(e1 + params.lambda_fast * e).max()),
        slope_slow=float(np.abs(e1 + params.lambda_slow * e).max()),
        params=params,
    )


@dataclass(frozen=True)
class CertificateReport:
    """Worst-case tracking quantities over a run, next to their bounds."""

    max_position_err: float
    max_velocity_err: float
    max_input_dev: float
    min_barrier: float
    position_bound: float
    velocity_bound: float
    input_bound: float

    def ok(self, position_slack: float = 0.0, velocity_slack: float = 0.0) -> bool:
        return bool(
            self.max_position_err <= self.position_bound + position_slack
            and self.max_velocity_err <= self.velocity_bound + velocity_slack
            and self.max_input_dev <= self.input_bound + 1e-12
            and self.min_barrier >= -position_slack
        )

    def to_dict(self) -> dict:
        return {
            "max_position_err": float(self.max_position_err),
            "max_velocity_err": float(self.max_velocity_err),
            "max_input_dev": float(self.max_input_dev),
            "min_barrier": float(self.min_barrier),
            "position_bound": float(self.position_bound),
            "velocity_bound": float(self.velocity_bound),
            "input_bound": float(self.input_bound),
        }


def certificates(
    position_err: np.ndarray,
    velocity_err: np.ndarray,
    input_dev: np.ndarray,
    barriers: np.ndarray,
    params: CbfParams,
) -> CertificateReport:
    """Summarize a run's error arrays against the tube and derived bounds.

    Args:
        position_err: r - r_ref per tick, shape (M, 3).
        velocity_err: dr/dt - dr_ref/dt per tick, shape (M, 3).
        input_dev: mu* - ddot r_ref per tick, shape (M, 3).
        barriers: the six h values per tick, shape (M, 6).
    """
    return CertificateReport(
        max_position_err=float(np.abs(position_err).max()),
        max_velocity_err=float(np.abs(velocity_err).max()),
        max_input_dev=float(np.abs(input_dev).max()),
        min_barrier=float(np.asarray(barriers).min()),
        position_bound=params.delta,
        velocity_bound=params.velocity_bound,
        input_bound=params.input_deviation_bound,
    )
