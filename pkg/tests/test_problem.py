import pytest
from hypothesis import given, strategies as st

from conftest import SIDES, mixed_bc, uniform_bc
from poroinfsup.problem import BoundaryConfig, MaterialParams, SpaceConfig, gamma, select_spaces

positive = st.floats(1e-6, 1e6, allow_nan=False)


def test_params_validation():
    MaterialParams(1, 1, 1, 0, 1)
    for bad in (dict(mu=0), dict(lam=-1), dict(alpha=0), dict(kappa=0), dict(T=0), dict(sigma=-1e-9)):
        args = dict(mu=1, lam=1, alpha=1, sigma=0, kappa=1) | bad
        with pytest.raises(ValueError):
            MaterialParams(**args)


def test_params_replace():
    p = MaterialParams(1, 2, 3, 0.5, 4, T=2)
    q = p.replace(lam=7)
    assert (q.lam, q.mu, q.T) == (7, 1, 2)
    with pytest.raises(ValueError):
        p.replace(mu=-1)


def test_boundary_rejects_unknown_tags():
    with pytest.raises(ValueError):
        BoundaryConfig({"left": ("dirichlet", "natural")})
    with pytest.raises(ValueError):
        BoundaryConfig({})
    with pytest.raises(ValueError):
        uniform_bc("essential", "natural").check_labels(("left", "right", "top", "bottom", "hole"))


def test_spaces_neumann_pressure_clamped():
    s = select_spaces(uniform_bc("essential", "natural"), MaterialParams(1, 1, 1, 1, 1))
    assert s == SpaceConfig(False, True, True, True)


def test_spaces_clamped_drained_no_storage():
    s = select_spaces(uniform_bc("essential", "essential"), MaterialParams(1, 1, 1, 0, 1))
    assert s.D_zero_mean and s.p_zero_mean and s.Pbar_zero_mean
    assert not s.u_quotient_rigid_motions


def test_spaces_otherwise():
    bc = BoundaryConfig({"bottom": ("essential", "essential"), "right": ("natural", "natural"),
                         "top": ("natural", "natural"), "left": ("essential", "natural")})
    s = select_spaces(bc, MaterialParams(1, 1, 1, 0.3, 1))
    assert s == SpaceConfig(False, False, False, False)


def test_spaces_pure_traction():
    s = select_spaces(uniform_bc("natural", "essential"), MaterialParams(1, 1, 1, 1, 1))
    assert s.u_quotient_rigid_motions and not s.D_zero_mean


def test_gamma_examples():
    inside = SpaceConfig(False, True, True, True)
    outside = SpaceConfig(False, False, True, False)
    assert gamma(MaterialParams(1, 3, 2, 0.5, 1), inside) == 1.0
    assert gamma(MaterialParams(1, 1, 1, 0, 1), inside) == 2.0
    assert gamma(MaterialParams(1, 1, 1, 0.1, 1), outside) == pytest.approx(12.0, rel=1e-15)
    assert not outside.pbar_in_d


@given(mu=positive, lam=positive, alpha=positive, sigma=st.floats(1e-12, 1e6), kappa=positive)
def test_gamma_branch_bounds(mu, lam, alpha, sigma, kappa):
    prm = MaterialParams(mu, lam, alpha, sigma, kappa)
    elastic = (mu + lam) / alpha**2
    g_in = gamma(prm, SpaceConfig(False, True, True, True))
    g_out = gamma(prm, SpaceConfig(False, False, True, False))
    assert g_in <= min(elastic, 1 / sigma) * (1 + 1e-15)
    assert g_out >= max(elastic, 1 / sigma)
    assert g_in > 0


def test_gamma_continuous_as_storage_vanishes():
    inside = SpaceConfig(False, True, True, True)
    base = MaterialParams(1, 3, 2, 0, 1)
    limit = gamma(base, inside)
    assert gamma(base.replace(sigma=1e-12), inside) == pytest.approx(limit, rel=1e-14)


@given(u=st.lists(st.sampled_from(["essential", "natural"]), min_size=4, max_size=4),
       p=st.lists(st.sampled_from(["essential", "natural"]), min_size=4, max_size=4),
       sigma=st.sampled_from([0.0, 1e-8, 1.0]))
def test_space_invariants(u, p, sigma):
    bc = BoundaryConfig({side: (a, b) for side, a, b in zip(SIDES, u, p)})
    s = select_spaces(bc, MaterialParams(1, 1, 1, sigma, 1))
    clamped, free = all(t == "essential" for t in u), all(t == "natural" for t in u)
    p_neu = all(t == "natural" for t in p)
    assert s.D_zero_mean == clamped
    assert s.u_quotient_rigid_motions == free
    assert s.Pbar_zero_mean == (p_neu or (clamped and sigma == 0))
    assert s.p_zero_mean == (p_neu or (not p_neu and clamped and sigma == 0))
    # only whether sigma vanishes matters
    other = select_spaces(bc, MaterialParams(1, 1, 1, 0.5 if sigma else 0.0, 1))
    assert other == s


def test_mixed_bc_fixture_is_otherwise_case():
    s = select_spaces(mixed_bc(), MaterialParams(1, 1, 1, 0, 1))
    assert s == SpaceConfig(False, False, False, False)
