"""Rough trial functions on the unit square.

With Neumann eigenpairs ``(lam_k, w_k)`` of ``-kappa Laplace`` and
``r_k = ceil(lam_k)``, the functions

    p_k(t) = w_k (t/T)^r_k,     m_k(t) = -lam_k T w_k (t/T)^(r_k+1) / (r_k+1)

satisfy ``dm_k/dt + L p_k = 0`` and ``m_k(0) = 0``.  Their trial norm tends
to zero while ``int ||p_k||_P^2`` tends to ``T/2``, so the energy norm of
the pressure is not controlled by the trial norm.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass

import numpy as np
import scipy.linalg as sla

from .assembly import OperatorSet
from .problem import MaterialParams, SpaceConfig, gamma
from .solver import FourFieldTrajectory

CLAMPED_NEUMANN = SpaceConfig(u_quotient_rigid_motions=False, p_zero_mean=True, D_zero_mean=True,
                              Pbar_zero_mean=True)


@dataclass(frozen=True)
class EigenMode:
    """``w(x, y) = c_i c_j cos(i pi x) cos(j pi y)``, unit L2 norm."""

    i: int
    j: int
    kappa: float = 1.0

    def __post_init__(self):
        if self.i < 0 or self.j < 0 or (self.i == 0 and self.j == 0):
            raise ValueError("mode indices must be nonnegative and not both zero")

    @property
    def lam(self) -> float:
        return self.kappa * math.pi**2 * (self.i**2 + self.j**2)

    @property
    def r(self) -> int:
        return math.ceil(self.lam)

    @property
    def scale(self) -> float:
        return (1.0 if self.i == 0 else math.sqrt(2)) * (1.0 if self.j == 0 else math.sqrt(2))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.scale * np.cos(self.i * np.pi * x[:, 0]) * np.cos(self.j * np.pi * x[:, 1])

    def grad(self, x: np.ndarray) -> np.ndarray:
        a, b = self.i * np.pi, self.j * np.pi
        return self.scale * np.column_stack([
            -a * np.sin(a * x[:, 0]) * np.cos(b * x[:, 1]),
            -b * np.cos(a * x[:, 0]) * np.sin(b * x[:, 1]),
        ])

    def pressure(self, x, t, T):
        return self(x) * (t / T) ** self.r

    def fluid_content(self, x, t, T):
        return -self.lam * T * self(x) * (t / T) ** (self.r + 1) / (self.r + 1)

    def content_rate(self, x, t, T):
        return -self.lam * self(x) * (t / T) ** self.r


def eigen_sequence(K: int, kappa: float = 1.0) -> list[EigenMode]:
    """First ``K`` modes by increasing eigenvalue, ties by ``(i, j)``."""
    if K < 1:
        raise ValueError("K must be at least 1")
    radius = 1
    while True:
        modes = [EigenMode(i, j, kappa) for i in range(radius + 1) for j in range(radius + 1)
                 if (i, j) != (0, 0) and i * i + j * j <= radius * radius]
        # every index pair with i^2 + j^2 <= radius^2 is present, so the
        # first K of them are final once there are at least K
        if len(modes) >= K:
            modes.sort(key=lambda m: (m.i**2 + m.j**2, m.i, m.j))
            return modes[:K]
        radius *= 2


@dataclass(frozen=True)
class RoughQuantities:
    lam: float
    r: int
    int_p_L2: float
    int_m_L2: float
    rough: float
    trial_sq: float
    int_P0_p: float
    antiderivative_sup: float

    @property
    def quotient(self) -> float:
        return self.rough / self.trial_sq


def rough_quantities(lam: float, T: float, params: MaterialParams,
                     spaces: SpaceConfig = CLAMPED_NEUMANN) -> RoughQuantities:
    """Closed-form time integrals of the mode with eigenvalue ``lam``.

    ``lam`` need not be a true eigenvalue.  The modes have zero mean, so
    projecting the pressure onto D leaves it unchanged.
    """
    if not lam > 0 or not T > 0:
        raise ValueError("eigenvalue and final time must be positive")
    r = math.ceil(lam)
    s = params.sigma
    int_p = T / (2 * r + 1)
    int_m = T**3 * lam**2 / ((r + 1) ** 2 * (2 * r + 3))
    cross = s * lam * T**2 / (r + 1) ** 2
    int_sp_m = s**2 * int_p + cross + int_m
    trial_sq = params.alpha**2 / (params.mu + params.lam) * int_p + gamma(params, spaces) * int_sp_m
    return RoughQuantities(
        lam=lam, r=r, int_p_L2=int_p, int_m_L2=int_m, rough=lam * T / (2 * r + 1), trial_sq=trial_sq,
        int_P0_p=T * lam / (r + 1) ** 2, antiderivative_sup=math.sqrt(lam) * T / (r + 1),
    )


TABLE_COLUMNS = ("i", "j", "lam", "r", "int_p_L2", "int_m_L2", "rough", "trial_sq", "quotient")


def verify_divergence(K: int, T: float, params: MaterialParams, kappa: float = 1.0,
                      spaces: SpaceConfig = CLAMPED_NEUMANN) -> list[dict]:
    """Table of the rough quantities along the first ``K`` eigenmodes."""
    rows = []
    for mode in eigen_sequence(K, kappa):
        q = rough_quantities(mode.lam, T, params, spaces)
        rows.append({"i": mode.i, "j": mode.j, "lam": q.lam, "r": q.r, "int_p_L2": q.int_p_L2,
                     "int_m_L2": q.int_m_L2, "rough": q.rough, "trial_sq": q.trial_sq, "quotient": q.quotient})
    return rows


def write_table(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TABLE_COLUMNS)
        for row in rows:
            writer.writerow([f"{row[c]:.17g}" if isinstance(row[c], float) else str(row[c]) for c in TABLE_COLUMNS])


# ------------------------------------------------------- discrete modes

def discrete_eigenpair(ops: OperatorSet, k: int = 1) -> tuple[float, np.ndarray]:
    """k-th nonzero eigenpair of ``L w = lam M w`` on the pressure space,
    ``w`` normalized in L2.  Dense; meant for coarse meshes."""
    L = ops.L.toarray()
    M = ops.Mp.toarray()
    vals, vecs = sla.eigh(L, M)
    start = 1 if ops.spaces.p_zero_mean else 0
    idx = start + k - 1
    w = vecs[:, idx]
    return float(vals[idx]), w / np.sqrt(w @ M @ w)


def mode_trajectory(ops: OperatorSet, lam: float, w: np.ndarray, r: int | None = None,
                    n_steps: int = 1) -> FourFieldTrajectory:
    """Rough trial function built on a discrete eigenpair (zero u, p_tot).

    Time samples are Gauss points numerous enough for every time integral
    of the trial norm to be exact.
    """
    T = ops.params.T
    r = math.ceil(lam) if r is None else r
    if not ops.spaces.p_zero_mean and len(w) != ops.n_s:
        raise ValueError("mode trajectories need a pressure space without essential dofs")
    Q = r + 2
    gx, gw = np.polynomial.legendre.leggauss(Q)
    gx, gw = 0.5 * (gx + 1), 0.5 * gw
    t = np.linspace(0.0, T, n_steps + 1)
    times = t[:-1, None] + np.diff(t)[:, None] * gx[None, :]
    s = times / T
    wf = np.zeros(ops.n_s)
    wf[ops.dofmap.p_free] = w
    p = (s**r)[..., None] * w
    m = (-lam * T * s ** (r + 1) / (r + 1))[..., None] * wf
    dm = (-lam * s**r)[..., None] * wf
    m_nodes = (-lam * T * (t / T) ** (r + 1) / (r + 1))[:, None] * wf
    N = n_steps
    return FourFieldTrajectory(t, np.zeros((N, Q, ops.n_u)), np.zeros((N, Q, ops.n_s)), p, m, dm, m_nodes,
                               gx, gw)


def as_dict(q: RoughQuantities) -> dict:
    row = asdict(q)
    row["quotient"] = q.quotient
    return row
