"""Clamped uniform B-splines: knots, basis evaluation, derivative matrices.

Flat-output trajectories are stored as degree-d B-splines over a clamped
uniform knot vector. The r-th derivative of such a curve is again a spline
over the same knots, one degree lower per derivative order, and its control
points are a fixed linear image of the original ones. That image is what
makes the whole planner convex: every derivative bound becomes a constraint
on finitely many derivative control points.

Conventions. A knot vector has v + 1 entries tau_0 <= ... <= tau_v with the
first and last knot repeated degree + 1 times and uniformly spaced interior
breakpoints. A curve of degree d over it has n + 1 control points, where
n = v - d - 1. Basis functions of degree k are indexed 0..v-k-1 and follow
the Cox-de Boor recursion with the 0/0 := 0 convention; evaluation at the
right endpoint returns left limits, so curves are defined on all of
[tau_0, tau_v].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def clamped_uniform_knots(t0: float, tf: float, n: int, degree: int) -> "KnotVector":
    """Build a clamped knot vector with uniform interior spacing.

    Args:
        t0: Start time (first knot, multiplicity degree + 1).
        tf: End time (last knot, multiplicity degree + 1).
        n: Index of the last control point; the curve has n + 1 of them.
        degree: Spline degree d >= 1. Requires n >= degree.

    Returns:
        KnotVector with v + 1 = n + degree + 2 knots.
    """
    if not np.isfinite(t0) or not np.isfinite(tf) or tf <= t0:
        raise ValueError(f"need finite t0 < tf, got [{t0}, {tf}]")
    if degree < 1:
        raise ValueError(f"degree must be >= 1, got {degree}")
    if n < degree:
        raise ValueError(f"need n >= degree for a clamped spline, got n={n}, degree={degree}")
    interior = np.linspace(t0, tf, n - degree + 2)
    tau = np.concatenate([np.full(degree, t0), interior, np.full(degree, tf)])
    return KnotVector(tau=tau, degree=degree)


@dataclass(frozen=True)
class KnotVector:
    """Non-decreasing knot sequence plus the curve degree it serves.

    Immutable after construction; derivative matrices are memoized per
    instance, so sharing one KnotVector across curves is cheap.
    """

    tau: np.ndarray
    degree: int
    _dmat_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        tau = np.asarray(self.tau, dtype=float)
        if tau.ndim != 1 or tau.size < 2 * (self.degree + 1):
            raise ValueError("knot vector too short for the given degree")
        if np.any(np.diff(tau) < 0.0):
            raise ValueError("knots must be non-decreasing")
        if tau[0] == tau[-1]:
            raise ValueError("knot vector spans zero time")
        tau = tau.copy()
        tau.setflags(write=False)
        object.__setattr__(self, "tau", tau)

    @property
    def v(self) -> int:
        """Index of the last knot."""
        return self.tau.size - 1

    @property
    def n(self) -> int:
        """Index of the last control point of a degree-d curve (n = v - d - 1)."""
        return self.v - self.degree - 1

    @property
    def t0(self) -> float:
        return float(self.tau[0])

    @property
    def tf(self) -> float:
        return float(self.tau[-1])

    def num_basis(self, degree: int) -> int:
        """Number of basis functions of the given degree over these knots."""
        return self.v - degree

    def nonempty_spans(self) -> range:
        """Indices l of the nonempty spans [tau_l, tau_{l+1}) of a clamped vector."""
        return range(self.degree, self.n + 1)

    def span_index(self, t: float) -> int:
        """Index of the nonempty span containing t; tf maps to the last one."""
        self._check_range(t)
        l = int(np.searchsorted(self.tau, t, side="right") - 1)
        return min(max(l, self.degree), self.n)

    def derivative_matrix(self, r: int) -> np.ndarray:
        """Memoized build_derivative_matrix(self, r). The array is read-only."""
        if r not in self._dmat_cache:
            B = build_derivative_matrix(self, r)
            B.setflags(write=False)
            self._dmat_cache[r] = B
        return self._dmat_cache[r]

    def _check_range(self, t) -> None:
        t = np.asarray(t)
        if np.any(t < self.tau[0]) or np.any(t > self.tau[-1]):
            raise ValueError(f"evaluation time outside [{self.t0}, {self.tf}]")


def basis_matrix(knots: KnotVector, degree: int, ts: np.ndarray) -> np.ndarray:
    """Evaluate all degree-k basis functions at many times at once.

    Args:
        knots: Knot vector (its own degree only bounds which k are valid).
        degree: Basis degree k, 0 <= k <= knots.degree.
        ts: Times inside [t0, tf], any shape; flattened to one axis.

    Returns:
        Array of shape (len(ts), v - k); row i is the basis vector at ts[i].
        At t = tf the row is the left limit (final span treated as closed).
    """
    if not 0 <= degree <= knots.degree:
        raise ValueError(f"basis degree must lie in [0, {knots.degree}], got {degree}")
    ts = np.atleast_1d(np.asarray(ts, dtype=float)).ravel()
    knots._check_range(ts)
    tau = knots.tau
    v = knots.v

    # Degree-0 indicators. The last nonempty span is closed on the right so
    # that evaluation at tf yields the left limit of every higher degree.
    B = ((tau[None, :-1] <= ts[:, None]) & (ts[:, None] < tau[None, 1:])).astype(float)
    at_end = ts == tau[-1]
    if np.any(at_end):
        last = int(np.flatnonzero(np.diff(tau) > 0.0)[-1])
        B[at_end, :] = 0.0
        B[at_end, last] = 1.0

    for k in range(1, degree + 1):
        nb = v - k
        Bk = np.zeros((ts.size, nb))
        for i in range(nb):
            den_l = tau[i + k] - tau[i]
            den_r = tau[i + k + 1] - tau[i + 1]
            acc = 0.0
            if den_l > 0.0:
                acc = (ts - tau[i]) / den_l * B[:, i]
            if den_r > 0.0:
                acc = acc + (tau[i + k + 1] - ts) / den_r * B[:, i + 1]
            Bk[:, i] = acc
        B = Bk
    return B


def basis_eval(knots: KnotVector, degree: int, t: float) -> np.ndarray:
    """All degree-k basis functions at a single time; shape (v - k,)."""
    return basis_matrix(knots, degree, np.array([t]))[0]


def build_derivative_matrix(knots: KnotVector, r: int) -> np.ndarray:
    """Matrix B_r mapping control points to r-th derivative control points.

    If P has shape (dim, n+1) then P @ B_r, of shape (dim, n+r+1), holds the
    control points of the r-th derivative curve, which has degree d - r over
    the same knots. The first r and last r columns are structurally zero
    (padding so that derivative points share the original column indexing).

    B_0 is the identity.
    """
    d = knots.degree
    n = knots.n
    tau = knots.tau
    if not 0 <= r <= d:
        raise ValueError(f"derivative order must lie in [0, {d}], got {r}")
    M = np.eye(n + 1)
    for i in range(1, r + 1):
        # Bidiagonal difference factor taking degree d-i+1 points to d-i.
        F = np.zeros((n - i + 2, n - i + 1))
        for k in range(n - i + 1):
            a = (d - i + 1) / (tau[k + d + 1] - tau[k + i])
            F[k, k] = -a
            F[k + 1, k] = a
        M = M @ F
    C = np.zeros((n - r + 1, n + r + 1))
    C[:, r : n + 1] = np.eye(n - r + 1)
    return M @ C


@dataclass(frozen=True)
class SplineCurve:
    """A vector-valued spline: knots plus control points of shape (dim, n+1)."""

    knots: KnotVector
    ctrl: np.ndarray

    def __post_init__(self) -> None:
        ctrl = np.asarray(self.ctrl, dtype=float)
        if ctrl.ndim != 2 or ctrl.shape[1] != self.knots.n + 1:
            raise ValueError(
                f"control points must have shape (dim, {self.knots.n + 1}), got {ctrl.shape}"
            )
        ctrl = ctrl.copy()
        ctrl.setflags(write=False)
        object.__setattr__(self, "ctrl", ctrl)

    @property
    def dim(self) -> int:
        return self.ctrl.shape[0]

    def eval(self, t, r: int = 0) -> np.ndarray:
        """Evaluate the r-th derivative of the curve.

        Args:
            t: Scalar time or array of times in [t0, tf].
            r: Derivative order, 0 <= r <= degree.

        Returns:
            Shape (dim,) for scalar t, else (len(t), dim).
        """
        kv = self.knots
        scalar = np.isscalar(t) or np.ndim(t) == 0
        lam = basis_matrix(kv, kv.degree - r, np.atleast_1d(t))
        vals = lam @ (self.ctrl @ kv.derivative_matrix(r)).T
        return vals[0] if scalar else vals


def curve_eval(curve: SplineCurve, r: int, t) -> np.ndarray:
    """Functional alias for SplineCurve.eval (derivative order first)."""
    return curve.eval(t, r)


@dataclass(frozen=True)
class DerivativePoints:
    """Control points of the r-th derivative curve, in original column indexing.

    points[:, j] is nonzero only for r <= j <= n; on span [tau_l, tau_{l+1})
    the derivative curve lies in the convex hull of columns l-d+r .. l.
    """

    r: int
    points: np.ndarray
    knots: KnotVector

    def span_columns(self, l: int) -> np.ndarray:
        """The d - r + 1 column indices whose hull bounds the curve on span l."""
        kv = self.knots
        if l not in kv.nonempty_spans():
            raise ValueError(f"span {l} is empty or out of range")
        return np.arange(l - kv.degree + self.r, l + 1)

    def span_points(self, l: int) -> np.ndarray:
        """Shape (dim, d - r + 1) slice of the hull points for span l."""
        return self.points[:, self.span_columns(l)]


def derivative_control_points(curve: SplineCurve, r: int) -> DerivativePoints:
    """Control points of the r-th derivative, P @ B_r."""
    pts = curve.ctrl @ curve.knots.derivative_matrix(r)
    return DerivativePoints(r=r, points=pts, knots=curve.knots)


def snap_gram(knots: KnotVector) -> tuple[np.ndarray, np.ndarray]:
    """Gram matrix of fourth-derivative inner products, and a square-root factor.

    For a single-axis curve with coefficients x over these knots,
    x @ Q @ x equals the integral of the squared fourth derivative over
    [t0, tf]. Assembled exactly by per-span Gauss-Legendre quadrature on the
    degree d-4 basis (d-3 nodes per span integrate the degree 2(d-4) products
    exactly), then conjugated with B_4.

    Returns:
        (Q, G) with Q of shape (n+1, n+1) positive semidefinite and
        G.T @ G == Q, where G keeps only eigenpairs above 1e-12 * max_eig.
    """
    d = knots.degree
    if d < 4:
        raise ValueError(f"snap Gram needs degree >= 4, got {d}")
    k = d - 4
    nodes, weights = np.polynomial.legendre.leggauss(k + 1)
    nb = knots.num_basis(k)
    W = np.zeros((nb, nb))
    tau = knots.tau
    for l in knots.nonempty_spans():
        a, b = tau[l], tau[l + 1]
        x = 0.5 * (b - a) * nodes + 0.5 * (a + b)
        w = 0.5 * (b - a) * weights
        lam = basis_matrix(knots, k, x)
        W += lam.T @ (w[:, None] * lam)
    B4 = knots.derivative_matrix(4)
    Q = B4 @ W @ B4.T
    Q = 0.5 * (Q + Q.T)
    evals, vecs = np.linalg.eigh(Q)
    keep = evals > 1e-12 * evals[-1]
    G = (vecs[:, keep] * np.sqrt(evals[keep])).T
    return Q, G
