"""Manufactured-solution convergence studies on the unit square.

The exact solution has a clamped displacement and a pressure with zero
normal flux; loads are derived symbolically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import sympy

from .assembly import OperatorSet, element_data
from .mesh import unit_square_mesh
from .problem import BoundaryConfig, MaterialParams, select_spaces
from .solver import LoadData, run_trajectory

TIME_PROFILES = {
    "constant": lambda t: sympy.Integer(1),
    "exp": lambda t: sympy.exp(-t),
}


def clamped_drained_free() -> BoundaryConfig:
    """Clamped displacement and homogeneous flux on the whole boundary."""
    return BoundaryConfig.uniform(("bottom", "right", "top", "left"), "essential", "natural")


@dataclass(frozen=True)
class ManufacturedSolution:
    params: MaterialParams
    u: Callable
    grad_u: Callable
    p: Callable
    grad_p: Callable
    m: Callable
    f_u: Callable
    f_p: Callable

    def loads(self) -> LoadData:
        return LoadData(f_u=self.f_u, f_p=self.f_p, l0=lambda x: self.m(x, 0.0))


def _vectorize(fn, shape):
    def wrapped(x, t):
        x = np.asarray(x, dtype=float)
        out = np.empty((len(x),) + shape)
        vals = fn(x[:, 0], x[:, 1], t)
        for idx in np.ndindex(*shape):
            out[(slice(None),) + idx] = np.broadcast_to(vals[idx[0]] if len(idx) == 1 else vals[idx[0]][idx[1]],
                                                        (len(x),))
        return out

    return wrapped


def _scalar(fn):
    def wrapped(x, t):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(fn(x[:, 0], x[:, 1], t), (len(x),)).astype(float)

    return wrapped


def manufactured_solution(params: MaterialParams, profile: str = "exp") -> ManufacturedSolution:
    """``u = g(t) (sin pi x sin pi y, sin pi x sin 2 pi y)``,
    ``p = g(t) cos pi x cos pi y``."""
    x, y, t = sympy.symbols("x y t")
    g = TIME_PROFILES[profile](t)
    pi = sympy.pi
    u = sympy.Matrix([g * sympy.sin(pi * x) * sympy.sin(pi * y), g * sympy.sin(pi * x) * sympy.sin(2 * pi * y)])
    p = g * sympy.cos(pi * x) * sympy.cos(pi * y)
    mu, lam, alpha, sigma, kappa = (sympy.nsimplify(v) for v in
                                    (params.mu, params.lam, params.alpha, params.sigma, params.kappa))
    grad = u.jacobian([x, y])
    eps = (grad + grad.T) / 2
    div = grad[0, 0] + grad[1, 1]
    p_tot = lam * div - alpha * p
    stress = 2 * mu * eps + p_tot * sympy.eye(2)
    f_u = -sympy.Matrix([sympy.diff(stress[i, 0], x) + sympy.diff(stress[i, 1], y) for i in range(2)])
    m = alpha * div + sigma * p
    f_p = sympy.diff(m, t) - kappa * (sympy.diff(p, x, 2) + sympy.diff(p, y, 2))
    grad_p = sympy.Matrix([sympy.diff(p, x), sympy.diff(p, y)])

    def lam_(expr):
        return sympy.lambdify((x, y, t), expr, "numpy")

    return ManufacturedSolution(
        params=params,
        u=_vectorize(lam_(list(u)), (2,)),
        grad_u=_vectorize(lam_(grad.tolist()), (2, 2)),
        p=_scalar(lam_(p)),
        grad_p=_vectorize(lam_(list(grad_p)), (2,)),
        m=_scalar(lam_(m)),
        f_u=_vectorize(lam_(list(f_u)), (2,)),
        f_p=_scalar(lam_(f_p)),
    )


def energy_error_u(ops: OperatorSet, u_free: np.ndarray, grad_exact: Callable, t: float) -> float:
    """``||sqrt(2 mu) eps(u_h - u)||`` by element quadrature."""
    ed = element_data(ops.mesh)
    full = ops.dofmap.expand_u(u_free)
    coef = full[:, ed.p2_dofs]  # (2, nt, 6)
    gh = np.einsum("cta,tqad->tqcd", coef, ed.p2_grads)
    ge = grad_exact(ed.qpoints.reshape(-1, 2), t).reshape(gh.shape)
    d = gh - ge
    eps = 0.5 * (d + np.swapaxes(d, -1, -2))
    dens = 2 * ops.params.mu * (eps**2).sum(axis=(-1, -2))
    return float(np.sqrt((dens * ed.wdet).sum()))


def energy_error_p(ops: OperatorSet, p_free: np.ndarray, grad_exact: Callable, t: float) -> float:
    """``||sqrt(kappa) grad(p_h - p)||`` by element quadrature."""
    ed = element_data(ops.mesh)
    full = ops.dofmap.expand_p(p_free)
    gh = np.einsum("ti,tid->td", full[ops.mesh.triangles], ed.grad_bary)[:, None, :]
    ge = grad_exact(ed.qpoints.reshape(-1, 2), t).reshape(ed.wdet.shape + (2,))
    dens = ops.params.kappa * ((gh - ge) ** 2).sum(axis=-1)
    return float(np.sqrt((dens * ed.wdet).sum()))


def _solve(n, n_steps, sol, time_points=1):
    mesh = unit_square_mesh(n)
    bc = clamped_drained_free()
    ops = OperatorSet(mesh, bc, sol.params, select_spaces(bc, sol.params))
    loads = sol.loads().assemble(ops, n_steps, time_points)
    loads.l0 = loads.l0 - ops.mean * (loads.l0.sum() / ops.area)
    return ops, run_trajectory(ops, loads)


def observed_orders(errors, factor: float = 2.0) -> list[float]:
    e = np.asarray(errors, dtype=float)
    return [float(math.log(e[i] / e[i + 1], factor)) for i in range(len(e) - 1)]


def spatial_study(params: MaterialParams, sizes=(4, 8, 16), n_steps: int = 4) -> list[dict]:
    """Errors at ``T`` of a time-independent solution under mesh halving."""
    sol = manufactured_solution(params, "constant")
    rows = []
    for n in sizes:
        ops, traj = _solve(n, n_steps, sol)
        T = params.T
        rows.append({
            "n": n,
            "h": ops.mesh.h_max(),
            "error_u": energy_error_u(ops, traj.u[-1, 0], sol.grad_u, T),
            "error_p": energy_error_p(ops, traj.p[-1, 0], sol.grad_p, T),
        })
    for key in ("error_u", "error_p"):
        orders = observed_orders([r[key] for r in rows])
        for r, o in zip(rows[1:], orders):
            r["order_" + key[-1]] = o
    return rows


def temporal_study(params: MaterialParams, n: int = 8, steps=(8, 16, 32)) -> dict:
    """Three-level estimate of the time order of the terminal fluid content.

    ``order = log2(||m_tau - m_tau/2|| / ||m_tau/2 - m_tau/4||)`` in L2.
    """
    if len(steps) != 3 or steps[1] != 2 * steps[0] or steps[2] != 2 * steps[1]:
        raise ValueError("three step counts, each doubling the previous one, are required")
    sol = manufactured_solution(params, "exp")
    finals = []
    for N in steps:
        ops, traj = _solve(n, N, sol)
        finals.append(traj.m_nodes[-1])
    d1, d2 = finals[0] - finals[1], finals[1] - finals[2]
    e1 = float(np.sqrt(d1 @ (ops.M @ d1)))
    e2 = float(np.sqrt(d2 @ (ops.M @ d2)))
    exact = sol.m(ops.mesh.vertices, params.T)
    err = [float(np.sqrt((f - exact) @ (ops.M @ (f - exact)))) for f in finals]
    return {"steps": list(steps), "diff_coarse": e1, "diff_fine": e2, "order": math.log2(e1 / e2),
            "error_vs_exact": err}
