"""Reference processes used by the tests and the verify-all plan."""

from __future__ import annotations

from fractions import Fraction

from .model import EXACT, ProcessSpec

HALF = Fraction(1, 2)


def spec_s(mode: str = EXACT) -> ProcessSpec:
    """Schroeder example: f1 = s1/2 + s1 s2/2, f2 = s2/2 + s1 s2/2."""
    return ProcessSpec.from_atoms(
        [{(1, 0): HALF, (1, 1): HALF}, {(0, 1): HALF, (1, 1): HALF}], mode, name="SPEC-S"
    )


def spec_b(mode: str = EXACT) -> ProcessSpec:
    """Boettcher example: f1 = s1^2/2 + s1^2 s2^2/2, f2 = s2^2/2 + s1^2 s2^2/2."""
    return ProcessSpec.from_atoms(
        [{(2, 0): HALF, (2, 2): HALF}, {(0, 2): HALF, (2, 2): HALF}], mode, name="SPEC-B"
    )


def spec_c1_fail(mode: str = EXACT) -> ProcessSpec:
    """Boettcher process whose K_1 minimizers all have spectral radius rho, so (C1) fails."""
    return ProcessSpec.from_atoms(
        [{(2, 0): HALF, (1, 1): HALF}, {(0, 2): HALF, (1, 1): HALF}], mode, name="SPEC-C1-FAIL"
    )


CORPUS = {"SPEC-S": spec_s, "SPEC-B": spec_b, "SPEC-C1-FAIL": spec_c1_fail}
