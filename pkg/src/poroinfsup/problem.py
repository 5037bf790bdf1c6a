"""Material parameters, boundary tagging and the resulting space constraints."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

ESSENTIAL = "essential"
NATURAL = "natural"
_TAGS = (ESSENTIAL, NATURAL)


@dataclass(frozen=True)
class MaterialParams:
    """Constant material parameters of the quasi-static Biot system.

    ``lam`` is the second Lame constant (``lambda`` is a Python keyword).
    """

    mu: float
    lam: float
    alpha: float
    sigma: float
    kappa: float
    T: float = 1.0

    def __post_init__(self):
        for name in ("mu", "lam", "alpha", "kappa", "T"):
            value = getattr(self, name)
            if not value > 0:
                raise ValueError(f"{name} must be positive, got {value!r}")
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be nonnegative, got {self.sigma!r}")

    def replace(self, **changes) -> "MaterialParams":
        values = {k: getattr(self, k) for k in ("mu", "lam", "alpha", "sigma", "kappa", "T")}
        values.update(changes)
        return MaterialParams(**values)


@dataclass(frozen=True)
class BoundaryConfig:
    """Displacement and pressure tags for every labelled boundary segment.

    ``tags`` maps a segment label to ``(displacement_tag, pressure_tag)``,
    each tag being ``"essential"`` or ``"natural"``.
    """

    tags: Mapping[str, tuple[str, str]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.tags:
            raise ValueError("boundary configuration needs at least one segment")
        clean = {}
        for label, pair in self.tags.items():
            if len(pair) != 2:
                raise ValueError(f"segment {label!r}: expected (displacement, pressure) tags")
            u_tag, p_tag = (str(t).strip().lower() for t in pair)
            for tag in (u_tag, p_tag):
                if tag not in _TAGS:
                    raise ValueError(f"segment {label!r}: unknown tag {tag!r}")
            clean[str(label)] = (u_tag, p_tag)
        object.__setattr__(self, "tags", clean)

    @classmethod
    def uniform(cls, labels: Iterable[str], displacement: str, pressure: str) -> "BoundaryConfig":
        return cls({label: (displacement, pressure) for label in labels})

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(self.tags)

    def segments(self, which: str, tag: str) -> tuple[str, ...]:
        """Labels whose ``which`` ('u' or 'p') tag equals ``tag``."""
        idx = {"u": 0, "p": 1}[which]
        return tuple(label for label, pair in self.tags.items() if pair[idx] == tag)

    def all_tagged(self, which: str, tag: str) -> bool:
        return len(self.segments(which, tag)) == len(self.tags)

    def check_labels(self, mesh_labels: Iterable[str]) -> None:
        mesh_labels = set(mesh_labels)
        missing = mesh_labels - set(self.tags)
        if missing:
            raise ValueError(f"boundary segments without tags: {sorted(missing)}")
        unknown = set(self.tags) - mesh_labels
        if unknown:
            raise ValueError(f"tags given for unknown boundary segments: {sorted(unknown)}")


@dataclass(frozen=True)
class SpaceConfig:
    u_quotient_rigid_motions: bool
    p_zero_mean: bool
    D_zero_mean: bool
    Pbar_zero_mean: bool

    @property
    def pbar_in_d(self) -> bool:
        # Pbar is contained in D unless D is L^2_0 while Pbar is all of L^2.
        return self.Pbar_zero_mean or not self.D_zero_mean


def select_spaces(bc: BoundaryConfig, params: MaterialParams) -> SpaceConfig:
    """Mean-value and quotient constraints of the four discrete fields."""
    u_clamped = bc.all_tagged("u", ESSENTIAL)
    u_free = bc.all_tagged("u", NATURAL)
    p_neumann = bc.all_tagged("p", NATURAL)
    no_storage = params.sigma == 0
    zero_mean_pressure = p_neumann or (u_clamped and no_storage)
    return SpaceConfig(
        u_quotient_rigid_motions=u_free,
        p_zero_mean=zero_mean_pressure,
        D_zero_mean=u_clamped,
        Pbar_zero_mean=zero_mean_pressure,
    )


def gamma(params: MaterialParams, spaces: SpaceConfig) -> float:
    """Weight of the fluid-content constraint residual in the trial norm."""
    elastic = (params.mu + params.lam) / params.alpha**2
    if params.sigma == 0:
        return elastic
    if spaces.pbar_in_d:
        return min(elastic, 1.0 / params.sigma)
    return elastic + 1.0 / params.sigma
