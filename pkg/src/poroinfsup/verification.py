"""Numerical certification of stability properties of the four-field system.

The central quantities are

* the divergence inf-sup constants ``c_h <= C_h``,
* the two-sided stability ratio ``LHS / RHS`` of solved problems,
* the quotient ``b(y1, y2) / ||y2||`` for the explicit test function,
* bounds for weaker pressure norms that do follow from the trial norm.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .assembly import OperatorSet, rigid_motions
from .linalg import SaddleFactorization, SingularMatrixError, eig_extremes
from .mesh import Mesh
from .norms import (
    _flat,
    _sq_dual_P,
    _sq_dual_U,
    _sq_energy,
    _sq_mass,
    constraint_residuals,
    data_norm,
    sup_dual_P_m,
    trial_norm,
)
from .problem import BoundaryConfig, MaterialParams, SpaceConfig, select_spaces
from .solver import FourFieldTrajectory, LoadData, run_trajectory, step_matrix

DEFAULT_GRID = {
    "lam": (1.0, 1e2, 1e4, 1e8),
    "sigma": (0.0, 1e-8, 1e-4, 1.0),
    "kappa": (1e-8, 1.0),
    "alpha": (0.1, 1.0),
}


def default_boundary() -> BoundaryConfig:
    """Unit square: clamped and drained on top, clamped and sealed elsewhere
    except that the top is traction free."""
    return BoundaryConfig({
        "bottom": ("essential", "natural"),
        "left": ("essential", "natural"),
        "right": ("essential", "natural"),
        "top": ("natural", "essential"),
    })


def parameter_grid(grid=None, mu: float = 1.0, T: float = 1.0) -> list[MaterialParams]:
    """Cartesian product of the grid axes in (lam, sigma, kappa, alpha) order."""
    grid = DEFAULT_GRID if grid is None else grid
    axes = [tuple(grid[k]) for k in ("lam", "sigma", "kappa", "alpha")]
    if any(len(a) == 0 for a in axes):
        raise ValueError("grid axes must be nonempty")
    return [MaterialParams(mu=mu, lam=l, alpha=a, sigma=s, kappa=k, T=T)
            for l, s, k, a in itertools.product(*axes)]


# ---------------------------------------------------------------- random data

def _fourier_field(rng, n_modes, n_comp):
    coef = rng.standard_normal((n_comp, n_modes + 1, n_modes + 1, 2))
    k = np.arange(n_modes + 1)

    def f(x, t=0.0):
        cx = np.cos(np.pi * np.outer(x[:, 0], k))
        cy = np.cos(np.pi * np.outer(x[:, 1], k))
        out = np.empty((len(x), n_comp))
        for c in range(n_comp):
            spatial = np.einsum("na,nb,ab->n", cx, cy, coef[c, ..., 0])
            slope = np.einsum("na,nb,ab->n", cx, cy, coef[c, ..., 1])
            out[:, c] = spatial + t * slope
        return out

    return f


def random_smooth_loads(ops: OperatorSet, seed: int, n_modes: int = 2) -> LoadData:
    """Seeded smooth loads: low order cosine series, affine in time.

    The initial datum is returned as a functional vector, with its
    constant component removed when the fluid content has zero mean.
    """
    rng = np.random.default_rng(seed)
    fu = _fourier_field(rng, n_modes, 2)
    fp = _fourier_field(rng, n_modes, 1)
    f0 = _fourier_field(rng, n_modes, 1)
    from .assembly import assemble_scalar_functional

    l0 = assemble_scalar_functional(ops.mesh, lambda x: f0(x)[:, 0])
    if ops.spaces.Pbar_zero_mean:
        l0 = l0 - ops.mean * (l0.sum() / ops.area)
    if ops.spaces.u_quotient_rigid_motions:
        raise ValueError("random loads are not made compatible with rigid motions")
    return LoadData(f_u=lambda x, t: fu(x, t), f_p=lambda x, t: fp(x, t)[:, 0], l0=l0)


def random_trajectory(ops: OperatorSet, n_steps: int, seed: int) -> FourFieldTrajectory:
    """Random discrete trial function respecting all space constraints."""
    rng = np.random.default_rng(seed)
    N = n_steps
    u = rng.standard_normal((N, ops.n_u))
    if ops.rm is not None:
        R = rigid_motions(ops.dofmap)[ops.dofmap.u_free]
        u -= (np.linalg.solve(ops.rm.T @ R, ops.rm.T @ u.T)).T @ R.T
    pt = ops.project_D(rng.standard_normal((N, ops.n_s)))
    p = rng.standard_normal((N, ops.n_p))
    if ops.spaces.p_zero_mean:
        p -= np.outer(p @ ops.mean_p / ops.mean_p.sum(), np.ones(ops.n_p))
    m = ops.project_Pbar(rng.standard_normal((N + 1, ops.n_s)))
    t = np.linspace(0.0, ops.params.T, N + 1)
    return FourFieldTrajectory.from_steps(t, u, pt, p, m)


# ------------------------------------------------------- divergence inf-sup

def div_infsup_constants(ops: OperatorSet, tol: float = 1e-10) -> tuple[float, float]:
    """Extreme eigenvalues of ``(B E^-1 B^T) q = theta (M / mu) q`` on D.

    Constants are deflated when D has zero mean.
    """
    S = spla.LinearOperator((ops.n_s, ops.n_s), matvec=lambda q: ops.B @ ops.solve_E(ops.B.T @ q),
                            matmat=lambda Q: ops.B @ ops.solve_E(ops.B.T @ Q), dtype=float)
    Mmu = ops.M / ops.params.mu
    kernel = np.ones((ops.n_s, 1)) if ops.spaces.D_zero_mean else None
    which = "smallest-nonzero" if kernel is not None else "smallest"
    c, _ = eig_extremes(S, Mmu, which=which, kernel=kernel, tol=tol)
    C, _ = eig_extremes(S, Mmu, which="largest", tol=tol)
    return c, C


# ------------------------------------------------------- test functions

@dataclass
class TestFunction:
    """Discrete test function on the trajectory's time samples.

    ``q_tot`` and ``q_m`` are fields in D and Pbar, ``n`` lives in P,
    ``n0`` is the initial-value component.
    """

    __test__ = False

    v: np.ndarray
    q_tot: np.ndarray
    q_m: np.ndarray
    n: np.ndarray
    n0: np.ndarray

    def __add__(self, other):
        return TestFunction(*(a + b for a, b in zip(self._parts(), other._parts())))

    def _parts(self):
        return (self.v, self.q_tot, self.q_m, self.n, self.n0)


def bilinear_form(traj: FourFieldTrajectory, y2: TestFunction, ops: OperatorSet) -> float:
    w = traj.quadrature_weights()
    sh = w.shape
    r1, r2 = constraint_residuals(traj, ops)
    mom = (ops.E @ _flat(traj.u).T + ops.B.T @ _flat(traj.p_tot).T).T
    evo = (ops.Msp.T @ _flat(traj.dm_dt).T + ops.L @ _flat(traj.p).T).T
    dens = (
        np.einsum("ij,ij->i", _flat(y2.v), mom)
        + np.einsum("ij,ij->i", _flat(y2.q_tot), (ops.M @ _flat(r1).T).T)
        + np.einsum("ij,ij->i", _flat(y2.q_m), (ops.M @ _flat(r2).T).T)
        + np.einsum("ij,ij->i", _flat(y2.n), evo)
    ).reshape(sh)
    return float((dens * w).sum() + y2.n0 @ (ops.Msp.T @ traj.m_nodes[0]))


def test_norm(y2: TestFunction, traj: FourFieldTrajectory, ops: OperatorSet) -> float:
    prm = ops.params
    w = traj.quadrature_weights()
    sh = w.shape
    dens = (
        _sq_energy(_flat(y2.v), ops.E)
        + _sq_energy(_flat(y2.n), ops.L)
        + (prm.mu + prm.lam) * _sq_mass(_flat(y2.q_tot), ops.M)
        + _sq_mass(_flat(y2.q_m), ops.M) / ops.gamma
    ).reshape(sh)
    total = (dens * w).sum() + y2.n0 @ (ops.L @ y2.n0)
    return float(np.sqrt(max(total, 0.0)))


test_norm.__test__ = False


def infsup_test_function(traj: FourFieldTrajectory, ops: OperatorSet, c: float, C: float,
                         s_node: int) -> TestFunction:
    """Test function cut off after time node ``s_node``.

    Components: ``u + E^-1 B^T p_tot``, the two weighted constraint
    residuals, ``L^-1 (2 m + dm/dt + L p)``, and ``2 L^-1 m(0)`` (never
    cut off).
    """
    prm = ops.params
    chi = (np.arange(traj.n_steps) < s_node).astype(float)[:, None, None]
    sh_u = traj.u.shape
    v = traj.u + ops.solve_E(ops.B.T @ _flat(traj.p_tot).T).T.reshape(sh_u)
    r1, r2 = constraint_residuals(traj, ops)
    q_tot = 4 * max(1.0, C) / (prm.mu + prm.lam) * r1
    q_m = 4 * ops.gamma / min(1.0, c) * r2
    rhs = ops.Msp.T @ _flat(2 * traj.m + traj.dm_dt).T + ops.L @ _flat(traj.p).T
    n = ops.solve_L(rhs).T.reshape(traj.p.shape)
    n0 = 2 * ops.solve_L(ops.Msp.T @ traj.m_nodes[0])
    return TestFunction(v * chi, q_tot * chi, q_m * chi, n * chi, n0)


@dataclass(frozen=True)
class InfSupResult:
    quotient: float
    bilinear: float
    test_norm: float
    augmented: float
    constant: float
    s_node: int
    degenerate: bool = False


def infsup_lower_bound(traj: FourFieldTrajectory, ops: OperatorSet, c: float, C: float) -> InfSupResult:
    """Quotient ``b(y1, y2) / ||y2||`` with ``y2 = y_{2,T} + y_{2,s}``,
    ``s`` the time node where ``||m(t)||_{P*}`` peaks.

    ``constant`` is the quotient divided by the augmented trial norm.
    """
    report = trial_norm(traj, ops)
    aug = float(np.sqrt(report.augmented_sq))
    _, s_node = sup_dual_P_m(traj, ops)
    y2 = infsup_test_function(traj, ops, c, C, traj.n_steps) + infsup_test_function(traj, ops, c, C, s_node)
    b = bilinear_form(traj, y2, ops)
    nrm = test_norm(y2, traj, ops)
    if nrm == 0.0 or aug == 0.0:
        return InfSupResult(0.0, b, nrm, aug, 0.0, s_node, degenerate=True)
    q = b / nrm
    return InfSupResult(q, b, nrm, aug, q / aug, s_node)


def residual_dual_norm(traj: FourFieldTrajectory, ops: OperatorSet) -> float:
    """``sup_{y2} b(y1, y2) / ||y2||`` computed by Riesz representation
    in the test space."""
    prm = ops.params
    w = traj.quadrature_weights()
    sh = w.shape
    r1, r2 = constraint_residuals(traj, ops)
    mom = (ops.E @ _flat(traj.u).T + ops.B.T @ _flat(traj.p_tot).T).T
    evo = (ops.Msp.T @ _flat(traj.dm_dt).T + ops.L @ _flat(traj.p).T).T
    dens = (
        _sq_dual_U(mom, ops)
        + _sq_dual_P(evo, ops)
        + _sq_mass(_flat(r1), ops.M) / (prm.mu + prm.lam)
        + ops.gamma * _sq_mass(_flat(r2), ops.M)
    ).reshape(sh)
    total = (dens * w).sum() + _sq_dual_P(ops.Msp.T @ traj.m_nodes[0], ops)[0]
    return float(np.sqrt(total))


def boundedness_constant(traj: FourFieldTrajectory, ops: OperatorSet) -> float:
    """``||b(y1, .)||_{2,*} / ||y1||_1``; bounded by the continuity constant."""
    trial = trial_norm(traj, ops).trial
    return residual_dual_norm(traj, ops) / trial if trial > 0 else 0.0


# ------------------------------------------------------- nondegeneracy

@dataclass(frozen=True)
class NondegeneracyReport:
    nonsingular: bool
    pivot_ratio: float
    min_pivot: float
    message: str = ""


def check_nondegeneracy(ops: OperatorSet, tau: float) -> NondegeneracyReport:
    """Factorize the step matrix; singularity is reported, not raised."""
    try:
        f = SaddleFactorization(step_matrix(ops, tau))
    except SingularMatrixError as exc:
        return NondegeneracyReport(False, 0.0, 0.0, str(exc))
    return NondegeneracyReport(True, f.pivot_ratio, f.min_pivot)


def broken_spaces(spaces: SpaceConfig) -> SpaceConfig:
    """The same spaces without the zero-mean constraint on the pressure."""
    return SpaceConfig(spaces.u_quotient_rigid_motions, False, spaces.D_zero_mean, spaces.Pbar_zero_mean)


# ------------------------------------------------------- pressure bounds

@dataclass(frozen=True)
class PressureBound:
    ratio: float
    numerator: float
    trial_sq: float
    gamma_inv_p: float
    degenerate: bool = False

    @property
    def storage_bound_holds(self) -> bool:
        return self.gamma_inv_p <= self.numerator * (1 + 1e-10) + 1e-300


def check_L2L2_pressure(traj: FourFieldTrajectory, ops: OperatorSet, trial_sq: float | None = None) -> PressureBound:
    """``[a int ||P_D p||^2 + sigma int ||p||^2] / ((1 + T) ||y||_1^2)``
    with ``a = alpha^2 / (mu + lam)``."""
    prm = ops.params
    w = traj.quadrature_weights()
    sh = w.shape
    pfull = np.zeros(traj.p.shape[:-1] + (ops.n_s,))
    pfull[..., ops.dofmap.p_free] = traj.p
    pd_sq = _sq_mass(_flat(ops.project_D(pfull)), ops.M).reshape(sh)
    p_sq = _sq_mass(_flat(traj.p), ops.Mp).reshape(sh)
    int_pd, int_p = float((pd_sq * w).sum()), float((p_sq * w).sum())
    num = prm.alpha**2 / (prm.mu + prm.lam) * int_pd + prm.sigma * int_p
    tsq = trial_norm(traj, ops).trial_sq if trial_sq is None else trial_sq
    ginv = int_p / ops.gamma
    if tsq == 0:
        return PressureBound(0.0, num, tsq, ginv, degenerate=True)
    return PressureBound(num / ((1 + traj.T) * tsq), num, tsq, ginv)


def _legendre_to_monomial(r: int) -> np.ndarray:
    """Matrix mapping shifted orthonormal Legendre coefficients on [0, 1]
    to monomial coefficients in s = t / T (before the 1/sqrt(T) factor)."""
    out = np.zeros((r + 1, r + 1))
    for j in range(r + 1):
        e = np.zeros(j + 1)
        e[j] = np.sqrt(2 * j + 1)
        poly = np.polynomial.Legendre(e, domain=[0, 1]).convert(kind=np.polynomial.Polynomial)
        out[: len(poly.coef), j] = poly.coef
    return out


def _time_samples(traj: FourFieldTrajectory, values: np.ndarray, n_points: int):
    """Values at an ``n_points`` Gauss rule per interval, plus weights and
    absolute times.  Exact interpolation of the stored per-interval
    polynomial."""
    gx, gw = np.polynomial.legendre.leggauss(n_points)
    gx, gw = 0.5 * (gx + 1), 0.5 * gw
    nodes = traj.time_points
    Q = len(nodes)
    if Q == 1:
        interp = np.ones((n_points, 1))
    elif n_points == Q and np.allclose(nodes, gx, rtol=0, atol=1e-14):
        # the stored samples already sit on this rule; interpolating
        # through hundreds of nodes would only overflow
        interp = np.eye(Q)
    else:
        interp = np.empty((n_points, Q))
        for j in range(Q):
            others = np.delete(nodes, j)
            interp[:, j] = np.prod((gx[:, None] - others) / (nodes[j] - others), axis=1)
    vals = np.einsum("gq,kqi->kgi", interp, values)
    tau = traj.tau
    weights = tau[:, None] * gw[None, :]
    times = traj.t[:-1, None] + tau[:, None] * gx[None, :]
    return vals, weights, times


@dataclass(frozen=True)
class TimeProjection:
    coefficients: np.ndarray
    norm_sq: float


def project_time_polynomial(traj: FourFieldTrajectory, r: int, ops: OperatorSet) -> TimeProjection:
    """L2(P)-orthogonal projection of the pressure onto polynomials of
    degree ``r`` in time.

    ``coefficients[j]`` multiplies ``(t / T)**j``; ``norm_sq`` is
    ``int_0^T ||P_r p||_P^2``.
    """
    if r not in (0, 1, 2, 3):
        raise ValueError("time degree must be 0, 1, 2 or 3")
    T = traj.T
    Q = len(traj.time_points)
    n_points = Q if (Q >= r and Q > 1) else Q + r + 1
    vals, weights, times = _time_samples(traj, traj.p, n_points)
    s = (times - traj.t[0]) / T
    phi = np.stack([
        np.sqrt((2 * j + 1) / T) * np.polynomial.legendre.legval(2 * s - 1, np.eye(r + 1)[j])
        for j in range(r + 1)
    ])
    c = np.einsum("jkg,kg,kgi->ji", phi, weights, vals)
    norm_sq = float(np.einsum("ji,ji->", c, (ops.L @ c.T).T))
    mono = _legendre_to_monomial(r) @ c / np.sqrt(T)
    return TimeProjection(mono, norm_sq)


def check_Pr_bound(traj: FourFieldTrajectory, r: int, ops: OperatorSet, trial_sq: float | None = None) -> float:
    """``int ||P_r p||_P^2 / ||y||_1^2``."""
    tsq = trial_norm(traj, ops).trial_sq if trial_sq is None else trial_sq
    proj = project_time_polynomial(traj, r, ops)
    return proj.norm_sq / tsq if tsq > 0 else 0.0


def pressure_energy_sq(traj: FourFieldTrajectory, ops: OperatorSet) -> float:
    """``int_0^T ||p||_P^2``; not controlled by the trial norm."""
    w = traj.quadrature_weights()
    return float((_sq_energy(_flat(traj.p), ops.L).reshape(w.shape) * w).sum())


def check_antiderivative(traj: FourFieldTrajectory, ops: OperatorSet, trial_sq: float | None = None) -> float:
    """``max_k ||int_0^{t_k} p||_P / ||y||_1`` over the time nodes."""
    w = traj.quadrature_weights()
    incr = np.einsum("kq,kqi->ki", w, traj.p)
    running = np.cumsum(incr, axis=0)
    sup = float(np.sqrt(_sq_energy(running, ops.L).max(initial=0.0)))
    tsq = trial_norm(traj, ops).trial_sq if trial_sq is None else trial_sq
    if tsq == 0:
        return 0.0
    return sup / np.sqrt(tsq)


# ------------------------------------------------------- sweeps

@dataclass(frozen=True)
class StabilityEntry:
    params: MaterialParams
    lhs_sq: float
    rhs_sq: float
    rows: dict = field(default_factory=dict)
    trajectory: FourFieldTrajectory | None = None

    @property
    def ratio(self) -> float:
        return self.lhs_sq / self.rhs_sq


def stability_ratio(ops: OperatorSet, loads: LoadData, n_steps: int) -> StabilityEntry:
    """Solve, then compare both sides of the two-sided stability bound."""
    assembled = loads.assemble(ops, n_steps)
    traj = run_trajectory(ops, assembled)
    report = trial_norm(traj, ops)
    data = data_norm(assembled, ops)
    if data.total_sq == 0:
        raise ValueError("stability ratio needs nonzero data")
    return StabilityEntry(ops.params, report.stability_lhs_sq, data.total_sq,
                          {**report.as_row(), **data.as_row()}, traj)


@dataclass(frozen=True)
class SweepSetup:
    mesh: Mesh
    bc: BoundaryConfig
    n_steps: int
    seed: int
    c_h: float
    C_h: float


def evaluate_point(setup: SweepSetup, params: MaterialParams) -> dict:
    """Every sweep metric at one parameter point."""
    ops = OperatorSet(setup.mesh, setup.bc, params, select_spaces(setup.bc, params))
    loads = random_smooth_loads(ops, setup.seed)
    entry = stability_ratio(ops, loads, setup.n_steps)
    traj = entry.trajectory
    tsq = entry.rows["trial_sq"]
    nd = check_nondegeneracy(ops, params.T / setup.n_steps)
    inf = infsup_lower_bound(traj, ops, setup.c_h, setup.C_h)
    press = check_L2L2_pressure(traj, ops, tsq)
    rand = random_trajectory(ops, setup.n_steps, setup.seed + 1)
    row = {
        "lam": params.lam, "sigma": params.sigma, "kappa": params.kappa, "alpha": params.alpha, "mu": params.mu,
        "gamma": ops.gamma,
        **entry.rows,
        "stability_ratio": entry.ratio,
        "nonsingular": nd.nonsingular,
        "pivot_ratio": nd.pivot_ratio,
        "infsup_quotient": inf.quotient,
        "infsup_constant": inf.constant,
        "boundedness_solution": boundedness_constant(traj, ops),
        "boundedness_random": boundedness_constant(rand, ops),
        "l2l2_ratio": press.ratio,
        "storage_bound_holds": press.storage_bound_holds,
        "antiderivative_ratio": check_antiderivative(traj, ops, tsq),
    }
    for r in (0, 1, 2):
        row[f"P{r}_ratio"] = check_Pr_bound(traj, r, ops, tsq)
    return row


def _evaluate(args):
    setup, params = args
    try:
        return evaluate_point(setup, params)
    except Exception as exc:  # reported per grid point, the sweep goes on
        return {"lam": params.lam, "sigma": params.sigma, "kappa": params.kappa, "alpha": params.alpha,
                "mu": params.mu, "error": f"{type(exc).__name__}: {exc}"}


def run_sweep(mesh: Mesh, bc: BoundaryConfig, grid: list[MaterialParams], n_steps: int, seed: int,
              sequential: bool = True, workers: int | None = None) -> tuple[list[dict], tuple[float, float]]:
    """Evaluate every grid point; rows come back in grid order."""
    ref = grid[0]
    ops = OperatorSet(mesh, bc, ref, select_spaces(bc, ref))
    c_h, C_h = div_infsup_constants(ops)
    setup = SweepSetup(mesh, bc, n_steps, seed, c_h, C_h)
    jobs = [(setup, prm) for prm in grid]
    if sequential:
        rows = [_evaluate(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_evaluate, jobs))
    return rows, (c_h, C_h)


def spread(values) -> float:
    """max / min of positive values."""
    v = np.asarray(list(values), dtype=float)
    return float(v.max() / v.min())
