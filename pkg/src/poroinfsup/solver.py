"""Backward Euler integration of the four-field system.

Per step the unknowns are ``(u, p_tot, p, m)`` at ``t_k``, coupled through

    E u + B^T p_tot                      = l_u
    lam B u - M p_tot - alpha M p        = l_ptot   (tested on D)
    L p + M^T (m - m_prev) / tau         = l_p      (tested on P)
    alpha B u + sigma M p - M m          = l_m      (tested on Pbar)

with Lagrange multipliers for the rigid-motion quotient and the
zero-mean constraints.  ``u``, ``p_tot`` and ``p`` are piecewise constant
in time; ``m`` is continuous and piecewise linear.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
import scipy.sparse as sp

from .assembly import OperatorSet, assemble_loads, assemble_scalar_functional
from .linalg import DEFAULT_TOL, SaddleFactorization

Field = Callable[[np.ndarray, float], np.ndarray]


@dataclass
class FourFieldTrajectory:
    """Space-time discrete trial function.

    Fields are stored at ``Q`` time quadrature points inside every interval
    (``time_points`` in [0, 1], weights ``time_weights`` summing to one);
    a backward Euler run has ``Q = 1``.  ``m`` holds the fluid content as
    it enters the algebraic constraint rows, ``dm_dt`` its time derivative,
    ``m_nodes`` its values at the time nodes.

    Shapes: ``t`` (N+1,), ``u`` (N, Q, n_u), ``p_tot`` (N, Q, n_s),
    ``p`` (N, Q, n_p), ``m`` and ``dm_dt`` (N, Q, n_s), ``m_nodes`` (N+1, n_s).
    """

    t: np.ndarray
    u: np.ndarray
    p_tot: np.ndarray
    p: np.ndarray
    m: np.ndarray
    dm_dt: np.ndarray
    m_nodes: np.ndarray
    time_points: np.ndarray = field(default_factory=lambda: np.array([1.0]))
    time_weights: np.ndarray = field(default_factory=lambda: np.array([1.0]))

    @property
    def n_steps(self) -> int:
        return len(self.t) - 1

    @property
    def tau(self) -> np.ndarray:
        return np.diff(self.t)

    @property
    def T(self) -> float:
        return float(self.t[-1] - self.t[0])

    def quadrature_weights(self) -> np.ndarray:
        """(N, Q) weights of the time integral over [0, T]."""
        return self.tau[:, None] * self.time_weights[None, :]

    def __add__(self, other: "FourFieldTrajectory") -> "FourFieldTrajectory":
        return self._combine(other, 1.0)

    def __sub__(self, other: "FourFieldTrajectory") -> "FourFieldTrajectory":
        return self._combine(other, -1.0)

    def __rmul__(self, s: float) -> "FourFieldTrajectory":
        return self.scaled(s)

    def scaled(self, s: float) -> "FourFieldTrajectory":
        return FourFieldTrajectory(self.t, s * self.u, s * self.p_tot, s * self.p, s * self.m, s * self.dm_dt,
                                   s * self.m_nodes, self.time_points, self.time_weights)

    def _combine(self, other, sign):
        if not (np.array_equal(self.t, other.t) and np.array_equal(self.time_points, other.time_points)):
            raise ValueError("trajectories live on different time grids")
        return FourFieldTrajectory(
            self.t, self.u + sign * other.u, self.p_tot + sign * other.p_tot, self.p + sign * other.p,
            self.m + sign * other.m, self.dm_dt + sign * other.dm_dt, self.m_nodes + sign * other.m_nodes,
            self.time_points, self.time_weights,
        )

    @classmethod
    def zeros_like(cls, other: "FourFieldTrajectory") -> "FourFieldTrajectory":
        return other.scaled(0.0)

    @classmethod
    def from_steps(cls, t, u, p_tot, p, m_nodes) -> "FourFieldTrajectory":
        """Backward Euler convention: one value per interval for ``u``,
        ``p_tot``, ``p``; the constraint rows see the right endpoint of m."""
        t = np.asarray(t, dtype=float)
        m_nodes = np.asarray(m_nodes, dtype=float)
        dm = np.diff(m_nodes, axis=0) / np.diff(t)[:, None]
        return cls(t, np.asarray(u)[:, None], np.asarray(p_tot)[:, None], np.asarray(p)[:, None],
                   m_nodes[1:, None], dm[:, None], m_nodes)


@dataclass(frozen=True)
class LoadData:
    """Data of the evolution problem as callables.

    ``f_u(x, t) -> (npts, 2)``, ``f_p(x, t) -> (npts,)``; ``g_u``/``g_p``
    map natural boundary labels to tractions and fluxes.  ``l0`` is the
    initial fluid content, either a scalar field ``l0(x) -> (npts,)``
    (paired with the P1 basis) or a ready functional vector on all vertices.
    """

    f_u: Field | None = None
    f_p: Field | None = None
    g_u: Mapping[str, Field] = field(default_factory=dict)
    g_p: Mapping[str, Field] = field(default_factory=dict)
    l0: Callable[[np.ndarray], np.ndarray] | np.ndarray | None = None

    def assemble(self, ops: OperatorSet, n_steps: int, time_points: int = 1) -> "AssembledLoads":
        """Piecewise constant in time loads.

        Each interval value is the ``time_points``-point Gauss average of
        the data over the interval; one point means midpoint sampling.
        """
        if n_steps < 1:
            raise ValueError("n_steps must be at least 1")
        T = ops.params.T
        t = np.linspace(0.0, T, n_steps + 1)
        gx, gw = np.polynomial.legendre.leggauss(time_points)
        gx, gw = 0.5 * (gx + 1), 0.5 * gw
        lu = np.zeros((n_steps, ops.n_u))
        lp = np.zeros((n_steps, ops.n_p))
        for k in range(n_steps):
            for s, w in zip(gx, gw):
                tk = t[k] + s * (t[k + 1] - t[k])
                vec = assemble_loads(ops.mesh, ops.dofmap, ops.bc, tk, self.f_u, self.f_p, self.g_u, self.g_p)
                lu[k] += w * vec.u
                lp[k] += w * vec.p
        if self.l0 is None:
            l0 = np.zeros(ops.n_s)
        elif callable(self.l0):
            l0 = assemble_scalar_functional(ops.mesh, self.l0)
        else:
            l0 = np.asarray(self.l0, dtype=float)
        return AssembledLoads(t, lu, lp, l0)


@dataclass
class AssembledLoads:
    """Per-step load vectors; ``l_ptot``/``l_m`` are optional data of the
    two constraint rows (zero for the physical problem)."""

    t: np.ndarray
    lu: np.ndarray
    lp: np.ndarray
    l0: np.ndarray
    l_ptot: np.ndarray | None = None
    l_m: np.ndarray | None = None

    @property
    def n_steps(self) -> int:
        return len(self.t) - 1

    def scaled(self, s: float) -> "AssembledLoads":
        opt = lambda a: None if a is None else s * a  # noqa: E731
        return AssembledLoads(self.t, s * self.lu, s * self.lp, s * self.l0, opt(self.l_ptot), opt(self.l_m))

    def __add__(self, other: "AssembledLoads") -> "AssembledLoads":
        def add(a, b):
            if a is None and b is None:
                return None
            return (0 if a is None else a) + (0 if b is None else b)

        return AssembledLoads(self.t, self.lu + other.lu, self.lp + other.lp, self.l0 + other.l0,
                              add(self.l_ptot, other.l_ptot), add(self.l_m, other.l_m))


def initial_fluid_content(ops: OperatorSet, l0: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    """Discrete m(0) from the functional ``l0`` on P1.

    When the fluid content is constrained to zero mean, ``l0`` must
    annihilate constants.
    """
    l0 = np.asarray(l0, dtype=float)
    if ops.spaces.Pbar_zero_mean:
        total = l0.sum()
        if abs(total) > tol * max(np.abs(l0).sum(), 1e-300) and abs(total) > 1e-14:
            raise ValueError(f"initial datum must have zero mean, its integral is {total:.3e}")
    return ops.riesz_Pbar(l0)


def step_matrix(ops: OperatorSet, tau: float) -> sp.csr_matrix:
    """Bordered matrix of one backward Euler step.

    Unknown order: u, p_tot, p, m, then the multipliers (rigid motions,
    mean of p_tot, mean of p, mean of m) that the spaces require.
    """
    if not tau > 0:
        raise ValueError("time step must be positive")
    prm, spc = ops.params, ops.spaces
    nu, ns, npf = ops.n_u, ops.n_s, ops.n_p
    B, M, Msp = ops.B, ops.M, ops.Msp
    rows = [
        [ops.E, B.T, None, None],
        [prm.lam * B, -M, -prm.alpha * Msp, None],
        [None, None, ops.L, Msp.T / tau],
        [prm.alpha * B, None, prm.sigma * Msp if prm.sigma else sp.csr_matrix((ns, npf)), -M],
    ]
    offsets = np.cumsum([0, nu, ns, npf, ns])
    cols = []
    if ops.rm is not None:
        C = np.zeros((offsets[-1], ops.rm.shape[1]))
        C[:nu] = ops.rm
        cols.append(C)
    for flag, block, vec in ((spc.D_zero_mean, 1, ops.mean), (spc.p_zero_mean, 2, ops.mean_p),
                             (spc.Pbar_zero_mean, 3, ops.mean)):
        if flag:
            c = np.zeros((offsets[-1], 1))
            c[offsets[block]:offsets[block + 1], 0] = vec
            cols.append(c)
    K = sp.bmat(rows, format="csr")
    if not cols:
        return K
    C = sp.csr_matrix(np.hstack(cols))
    k = C.shape[1]
    return sp.bmat([[K, C], [C.T, sp.csr_matrix((k, k))]], format="csr")


@dataclass(frozen=True)
class StepResult:
    u: np.ndarray
    p_tot: np.ndarray
    p: np.ndarray
    m: np.ndarray


class BackwardEuler:
    """Factorized step system for a fixed operator set and time step."""

    def __init__(self, ops: OperatorSet, tau: float, tol: float = DEFAULT_TOL):
        self.ops = ops
        self.tau = float(tau)
        self.tol = tol
        self.matrix = step_matrix(ops, tau)
        self.factor = SaddleFactorization(self.matrix)
        o = ops
        self._offsets = np.cumsum([0, o.n_u, o.n_s, o.n_p, o.n_s])

    def step(self, m_prev, lu, lp, l_ptot=None, l_m=None) -> StepResult:
        ops, off = self.ops, self._offsets
        rhs = np.zeros(self.matrix.shape[0])
        rhs[off[0]:off[1]] = lu
        if l_ptot is not None:
            rhs[off[1]:off[2]] = l_ptot
        rhs[off[2]:off[3]] = lp + ops.Msp.T @ m_prev / self.tau
        if l_m is not None:
            rhs[off[3]:off[4]] = l_m
        x = self.factor.solve(rhs, tol=self.tol)
        return StepResult(*(x[off[i]:off[i + 1]] for i in range(4)))


def backward_euler_step(prev_m, tau, lu, lp, ops: OperatorSet, l_ptot=None, l_m=None) -> StepResult:
    """One step from ``prev_m``; builds and factorizes the step matrix."""
    return BackwardEuler(ops, tau).step(prev_m, lu, lp, l_ptot, l_m)


def run_trajectory(ops: OperatorSet, loads: LoadData | AssembledLoads, n_steps: int | None = None,
                   tol: float = DEFAULT_TOL) -> FourFieldTrajectory:
    """Integrate from m(0) over ``n_steps`` uniform steps on [0, T]."""
    if isinstance(loads, LoadData):
        if n_steps is None:
            raise ValueError("n_steps is required for unassembled loads")
        loads = loads.assemble(ops, n_steps)
    elif n_steps is not None and n_steps != loads.n_steps:
        raise ValueError(f"loads are assembled for {loads.n_steps} steps, not {n_steps}")
    N = loads.n_steps
    if N < 1:
        raise ValueError("at least one time step is required")
    tau = float(loads.t[1] - loads.t[0])
    if not np.allclose(np.diff(loads.t), tau, rtol=1e-12, atol=0):
        raise ValueError("uniform time steps required")
    stepper = BackwardEuler(ops, tau, tol)
    u = np.zeros((N, ops.n_u))
    pt = np.zeros((N, ops.n_s))
    p = np.zeros((N, ops.n_p))
    m = np.zeros((N + 1, ops.n_s))
    m[0] = initial_fluid_content(ops, loads.l0)
    for k in range(N):
        res = stepper.step(
            m[k], loads.lu[k], loads.lp[k],
            None if loads.l_ptot is None else loads.l_ptot[k],
            None if loads.l_m is None else loads.l_m[k],
        )
        u[k], pt[k], p[k], m[k + 1] = res.u, res.p_tot, res.p, res.m
    return FourFieldTrajectory.from_steps(loads.t, u, pt, p, m)


def write_trajectory(traj: FourFieldTrajectory, directory, manifest: Mapping | None = None) -> list[Path]:
    """One CSV per field with columns (time, dof, value) plus ``manifest.json``.

    Interval-wise fields are stamped with the right endpoint of their
    interval and the first quadrature value is written.
    """
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    fields = {
        "u": (traj.t[1:], traj.u[:, 0]),
        "p_tot": (traj.t[1:], traj.p_tot[:, 0]),
        "p": (traj.t[1:], traj.p[:, 0]),
        "m": (traj.t, traj.m_nodes),
    }
    for name, (times, values) in fields.items():
        path = out / f"{name}.csv"
        with path.open("w") as fh:
            fh.write("time,dof,value\n")
            for tk, row in zip(times, values):
                for i, v in enumerate(row):
                    fh.write(f"{tk:.17g},{i},{v:.17g}\n")
        written.append(path)
    info = {"n_steps": traj.n_steps, "tau": float(traj.tau[0]), "T": traj.T}
    info.update(manifest or {})
    path = out / "manifest.json"
    path.write_text(json.dumps(info, indent=2, sort_keys=True, default=str) + "\n")
    written.append(path)
    return written
