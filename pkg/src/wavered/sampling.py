"""Seeded random sampling boxes and probabilistic identity testing.

All "is this expression identically zero" questions in the toolkit go
through :func:`is_zero`: evaluate at seeded random points, compare against
a tolerance relative to the largest subterm magnitude, and resample points
that land in excluded tubes or outside an expression's domain.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .expressions import Expr, free_vars
from .jets import DomainError, OpaqueImpl, eval_scaled

DEFAULT_RANGE = (-2.0, 2.0)
DEFAULT_TUBE_RADIUS = 1e-3

COORDINATES = ("x0", "x1", "x2", "x3")


@dataclass(frozen=True)
class SamplingBox:
    """Axis-aligned box of variable ranges with excluded tubes.

    Variables without an explicit range sample from ``DEFAULT_RANGE``.  An
    exclusion is a pair (expression, radius): points where the expression's
    magnitude falls below the radius are rejected and resampled, which keeps
    samples away from singular sets.
    """

    bounds: tuple[tuple[str, tuple[float, float]], ...] = ()
    exclusions: tuple[tuple[Expr, float], ...] = ()

    @staticmethod
    def coords(
        minimum: Iterable[float] = (-2.0,) * 4,
        maximum: Iterable[float] = (2.0,) * 4,
        exclusions: Iterable[tuple[Expr, float]] = (),
    ) -> "SamplingBox":
        bounds = tuple(
            (name, (float(lo), float(hi)))
            for name, lo, hi in zip(COORDINATES, minimum, maximum)
        )
        return SamplingBox(bounds, tuple(exclusions))

    @staticmethod
    def for_vars(names: Iterable[str], lo: float = -2.0, hi: float = 2.0) -> "SamplingBox":
        return SamplingBox(tuple((n, (float(lo), float(hi))) for n in names))

    def range_for(self, name: str) -> tuple[float, float]:
        for key, rng in self.bounds:
            if key == name:
                return rng
        return DEFAULT_RANGE

    def var_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.bounds)

    def sample(self, rng: np.random.Generator, names: Iterable[str]) -> dict[str, float]:
        point = {}
        for name in names:
            lo, hi = self.range_for(name)
            point[name] = float(rng.uniform(lo, hi))
        return point

    def excluded(
        self,
        point: Mapping[str, float],
        opaque_impls: Mapping[str, OpaqueImpl] | None = None,
    ) -> bool:
        for expr, radius in self.exclusions:
            try:
                value, _ = eval_scaled(expr, point, opaque_impls)
            except DomainError:
                return True
            if abs(value) < radius:
                return True
        return False


@dataclass(frozen=True)
class ZeroVerdict:
    """Outcome of probabilistic zero-testing.

    ``status`` is "zero", "nonzero" or "undecided".  A nonzero verdict
    carries a witness point and the value found there; zero only means the
    expression stayed below tolerance at every sampled point.
    """

    status: str
    witness: dict[str, float] | None = None
    value: float | None = None
    samples_used: int = 0
    samples_failed: int = 0
    notes: tuple[str, ...] = field(default=())

    @property
    def is_zero(self) -> bool:
        return self.status == "zero"

    @property
    def is_nonzero(self) -> bool:
        return self.status == "nonzero"

    @property
    def undecided(self) -> bool:
        return self.status == "undecided"

    def to_json(self) -> dict:
        return {
            "status": self.status,
            "witness": self.witness,
            "value": self.value,
            "samples_used": self.samples_used,
            "samples_failed": self.samples_failed,
            "notes": list(self.notes),
        }


def is_zero(
    e: Expr,
    box: SamplingBox | None = None,
    trials: int = 64,
    seed: int = 0,
    atol: float = 1e-10,
    opaque_impls: Mapping[str, OpaqueImpl] | None = None,
) -> ZeroVerdict:
    """Probabilistic identity test: does ``e`` vanish on the box?

    Samples ``trials`` admissible points (resampling on domain errors and
    excluded tubes, deterministically under ``seed``).  The comparison is
    relative: a point witnesses nonzero when |e| exceeds ``atol`` times the
    largest subterm magnitude at that point.  More than 90% rejected samples
    yields "undecided".
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    box = box or SamplingBox()
    rng = np.random.default_rng(seed)
    names = sorted(free_vars(e))
    for expr, _ in box.exclusions:
        names = sorted(set(names) | free_vars(expr))

    if not names:
        # Constant expression: a single evaluation settles it.
        try:
            value, scale = eval_scaled(e, {}, opaque_impls)
        except DomainError as err:
            return ZeroVerdict("undecided", samples_failed=1, notes=(str(err),))
        if abs(value) > atol * max(1.0, scale):
            return ZeroVerdict("nonzero", witness={}, value=value, samples_used=1)
        return ZeroVerdict("zero", samples_used=1)

    good = 0
    failed = 0
    notes: list[str] = []
    max_attempts = max(10 * trials, trials + 20)
    attempts = 0
    while good < trials and attempts < max_attempts:
        attempts += 1
        point = box.sample(rng, names)
        if box.excluded(point, opaque_impls):
            failed += 1
            continue
        try:
            value, scale = eval_scaled(e, point, opaque_impls)
        except DomainError as err:
            failed += 1
            if len(notes) < 3:
                notes.append(str(err))
            continue
        good += 1
        if abs(value) > atol * max(1.0, scale):
            return ZeroVerdict(
                "nonzero",
                witness=point,
                value=value,
                samples_used=good,
                samples_failed=failed,
                notes=tuple(notes),
            )
    if good == 0 or failed > 9 * good:
        return ZeroVerdict(
            "undecided",
            samples_used=good,
            samples_failed=failed,
            notes=tuple(notes) or ("more than 90% of samples rejected",),
        )
    return ZeroVerdict("zero", samples_used=good, samples_failed=failed, notes=tuple(notes))
