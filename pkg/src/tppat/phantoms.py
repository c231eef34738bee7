"""Synthetic coefficient phantoms: smooth background plus inclusions.

A phantom field is a constant background overwritten by disk or square
inclusions, sampled at the mesh nodes. Inclusions later in the list win where
they overlap. Values are dimensionless coefficient magnitudes and must stay
within the positivity bounds enforced by CoefficientSet.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .fem import CoefficientSet
from .mesh import Mesh

SHAPES = ("disk", "square")


@dataclass
class Inclusion:
    shape: str
    center: tuple
    size: float          # radius of a disk, half-width of a square
    value: float

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValidationError(f"inclusion shape must be one of {SHAPES}, "
                                  f"got {self.shape!r}")
        if self.size <= 0.0:
            raise ValidationError("inclusion size must be positive")
        if len(self.center) != 2:
            raise ValidationError("inclusion center must be (x, y)")

    def contains(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        cx, cy = self.center
        if self.shape == "disk":
            return (x - cx) ** 2 + (y - cy) ** 2 <= self.size ** 2
        return (np.abs(x - cx) <= self.size) & (np.abs(y - cy) <= self.size)


@dataclass
class PhantomField:
    background: float
    inclusions: list = field(default_factory=list)

    def __post_init__(self):
        if self.background <= 0.0:
            raise ValidationError("phantom background must be positive")
        for inc in self.inclusions:
            if inc.value <= 0.0:
                raise ValidationError("inclusion values must be positive")

    def sample(self, mesh: Mesh) -> np.ndarray:
        x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
        out = np.full(mesh.node_count, float(self.background))
        for inc in self.inclusions:
            out[inc.contains(x, y)] = inc.value
        return out


@dataclass
class Phantom:
    """Coefficient phantom for all four fields."""

    gruneisen: PhantomField
    diffusion: PhantomField
    single_photon: PhantomField
    two_photon: PhantomField

    def coefficients(self, mesh: Mesh) -> CoefficientSet:
        return CoefficientSet(
            gruneisen=self.gruneisen.sample(mesh),
            diffusion=self.diffusion.sample(mesh),
            single_photon=self.single_photon.sample(mesh),
            two_photon=self.two_photon.sample(mesh),
        ).validate(mesh)
