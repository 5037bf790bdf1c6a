"""Trial, test and data norms of discrete space-time functions.

Dual norms are Riesz solves: ``||r||_{P*}^2 = r . L^{-1} r`` and
``||r||_{U*}^2 = r . E^{-1} r`` on the constrained discrete spaces.  Time
integrals use the quadrature stored with the trajectory, which is exact
for its piecewise polynomial representation.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, fields

import numpy as np

from .assembly import OperatorSet, rigid_motions
from .solver import AssembledLoads, FourFieldTrajectory

COMPAT_TOL = 1e-10


def _check_compatible(r, kernel, what):
    r = np.asarray(r, dtype=float)
    scale = np.abs(r).sum() * np.abs(kernel).max(axis=0)
    pair = np.abs(r @ kernel)
    if np.any(pair > COMPAT_TOL * np.maximum(scale, 1e-300)) and np.any(pair > 1e-14):
        raise ValueError(f"functional does not vanish on the {what}")


def dual_norm_P(r, ops: OperatorSet, strict: bool = True) -> float:
    """Norm of the functional ``r`` (free pressure dofs) in the dual of P.

    With ``strict`` and a pure Neumann pressure space, ``r`` must vanish
    on constants; otherwise the constant component is ignored.
    """
    r = np.asarray(r, dtype=float)
    if strict and ops.spaces.p_zero_mean:
        _check_compatible(r, np.ones((len(r), 1)), "constants")
    return float(np.sqrt(max(r @ ops.solve_L(r), 0.0)))


def dual_norm_U(r, ops: OperatorSet, strict: bool = True) -> float:
    """Norm of ``r`` (free displacement dofs) in the dual of U."""
    r = np.asarray(r, dtype=float)
    if strict and ops.spaces.u_quotient_rigid_motions:
        _check_compatible(r, rigid_motions(ops.dofmap)[ops.dofmap.u_free], "rigid motions")
    return float(np.sqrt(max(r @ ops.solve_E(r), 0.0)))


def _sq_dual_P(F, ops):
    """Squared P* norms of the rows of ``F``."""
    F = np.atleast_2d(F)
    X = ops.solve_L(F.T).T
    return np.maximum(np.einsum("ij,ij->i", F, X), 0.0)


def _sq_dual_U(F, ops):
    F = np.atleast_2d(F)
    X = ops.solve_E(F.T).T
    return np.maximum(np.einsum("ij,ij->i", F, X), 0.0)


def _sq_mass(Q, M):
    Q = np.atleast_2d(Q)
    return np.einsum("ij,ij->i", Q, (M @ Q.T).T)


def _sq_energy(X, A):
    X = np.atleast_2d(X)
    return np.einsum("ij,ij->i", X, (A @ X.T).T)


def _integrate(values, weights):
    """Time integral of per-sample scalars, shapes (N, Q)."""
    return float((values * weights).sum())


def _flat(a):
    return a.reshape(-1, a.shape[-1])


def divergence(u, ops: OperatorSet) -> np.ndarray:
    """Discrete divergence of displacement coefficients: L2 projection onto D."""
    return ops.riesz_D((ops.B @ _flat(u).T)).T.reshape(u.shape[:-1] + (ops.n_s,))


def constraint_residuals(traj: FourFieldTrajectory, ops: OperatorSet):
    """Fields of the two algebraic constraint residuals at every time sample.

    Returns ``(r_ptot, r_m)`` with
    ``r_ptot = lam D u - p_tot - alpha P_D p`` in D and
    ``r_m = alpha P_Pbar D u + sigma p - m`` in Pbar.
    """
    prm = ops.params
    shape = traj.u.shape[:-1] + (ops.n_s,)
    Bu = ops.B @ _flat(traj.u).T
    Mp = ops.Msp @ _flat(traj.p).T
    f1 = prm.lam * Bu - ops.M @ _flat(traj.p_tot).T - prm.alpha * Mp
    f2 = prm.alpha * Bu + prm.sigma * Mp - ops.M @ _flat(traj.m).T
    r1 = ops.riesz_D(f1).T.reshape(shape)
    r2 = ops.riesz_Pbar(f2).T.reshape(shape)
    return r1, r2


def sup_dual_P_m(traj: FourFieldTrajectory, ops: OperatorSet):
    """Sampled sup over time of ``||m(t)||_{P*}`` (time nodes and interval
    midpoints of the nodal interpolant) and the time node attaining it."""
    nodes = traj.m_nodes
    mids = 0.5 * (nodes[1:] + nodes[:-1])
    sq_nodes = _sq_dual_P((ops.Msp.T @ nodes.T).T, ops)
    sq_mids = _sq_dual_P((ops.Msp.T @ mids.T).T, ops) if len(mids) else np.zeros(0)
    k = int(np.argmax(sq_nodes))
    return float(np.sqrt(max(sq_nodes.max(), sq_mids.max(initial=0.0)))), k


@dataclass(frozen=True)
class NormReport:
    """Squared terms of the trial norm and of its augmented variant."""

    u: float
    p_tot: float
    evolution: float
    initial: float
    constraint_ptot: float
    constraint_m: float
    lam_div_u: float
    sigma_p: float
    m_sup: float

    @property
    def trial_sq(self) -> float:
        return self.u + self.p_tot + self.evolution + self.initial + self.constraint_ptot + self.constraint_m

    @property
    def trial(self) -> float:
        return float(np.sqrt(self.trial_sq))

    @property
    def augmented_sq(self) -> float:
        """Trial norm plus the sup of m and the divergence and storage terms."""
        return self.trial_sq + self.m_sup + self.lam_div_u + self.sigma_p

    @property
    def stability_lhs_sq(self) -> float:
        """Solution side of the two-sided stability bound."""
        return self.u + self.lam_div_u + self.p_tot + self.sigma_p + self.evolution + self.m_sup

    def as_row(self) -> dict:
        row = asdict(self)
        row.update(trial_sq=self.trial_sq, augmented_sq=self.augmented_sq, stability_lhs_sq=self.stability_lhs_sq)
        return row


def trial_norm(traj: FourFieldTrajectory, ops: OperatorSet) -> NormReport:
    prm = ops.params
    w = traj.quadrature_weights()
    sh = w.shape
    u_sq = _sq_energy(_flat(traj.u), ops.E).reshape(sh)
    pt_sq = _sq_mass(_flat(traj.p_tot), ops.M).reshape(sh)
    evo = (ops.Msp.T @ _flat(traj.dm_dt).T).T + (ops.L @ _flat(traj.p).T).T
    evo_sq = _sq_dual_P(evo, ops).reshape(sh)
    m0 = ops.Msp.T @ traj.m_nodes[0]
    r1, r2 = constraint_residuals(traj, ops)
    div = divergence(traj.u, ops)
    div_sq = np.einsum("ij,ij->i", _flat(div), (ops.B @ _flat(traj.u).T).T).reshape(sh)
    p_sq = _sq_mass(_flat(traj.p), ops.Mp).reshape(sh)
    m_sup, _ = sup_dual_P_m(traj, ops)
    return NormReport(
        u=_integrate(u_sq, w),
        p_tot=_integrate(pt_sq, w) / prm.mu,
        evolution=_integrate(evo_sq, w),
        initial=float(_sq_dual_P(m0, ops)[0]),
        constraint_ptot=_integrate(_sq_mass(_flat(r1), ops.M).reshape(sh), w) / (prm.mu + prm.lam),
        constraint_m=ops.gamma * _integrate(_sq_mass(_flat(r2), ops.M).reshape(sh), w),
        lam_div_u=prm.lam * _integrate(div_sq, w),
        sigma_p=prm.sigma * _integrate(p_sq, w),
        m_sup=m_sup**2,
    )


@dataclass(frozen=True)
class DataNormReport:
    """Squared terms of the data norm."""

    l_u: float
    l_p: float
    l_0: float
    l_ptot: float
    l_m: float

    @property
    def total_sq(self) -> float:
        return self.l_u + self.l_p + self.l_0 + self.l_ptot + self.l_m

    @property
    def value(self) -> float:
        return float(np.sqrt(self.total_sq))

    def as_row(self) -> dict:
        row = asdict(self)
        row["data_sq"] = self.total_sq
        return row


def data_norm(loads: AssembledLoads, ops: OperatorSet) -> DataNormReport:
    """Data norm of piecewise constant in time loads.

    ``l_ptot``/``l_m`` are functionals on P1; their L2 representatives
    in D and Pbar enter the two weighted terms.
    """
    prm = ops.params
    tau = np.diff(loads.t)
    lu = float(tau @ _sq_dual_U(loads.lu, ops))
    lp = float(tau @ _sq_dual_P(loads.lp, ops))
    l0 = float(_sq_dual_P(loads.l0[ops.dofmap.p_free], ops)[0])
    lpt = lm = 0.0
    if loads.l_ptot is not None:
        rep = ops.riesz_D(loads.l_ptot.T).T
        lpt = float(tau @ _sq_mass(rep, ops.M)) / (prm.mu + prm.lam)
    if loads.l_m is not None:
        rep = ops.riesz_Pbar(loads.l_m.T).T
        lm = ops.gamma * float(tau @ _sq_mass(rep, ops.M))
    return DataNormReport(lu, lp, l0, lpt, lm)


def write_norm_rows(path, rows: list[dict], key: str = "experiment") -> None:
    """Flat CSV of report rows; every row must carry ``key``."""
    if not rows:
        raise ValueError("no rows to write")
    header = [key] + [k for k in rows[0] if k != key]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(row[k]) for k in header])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


REPORT_FIELDS = tuple(f.name for f in fields(NormReport))
