"""TOML process-spec files (schema ``spec_version = 1``).

Example::

    spec_version = 1
    name = "SPEC-S"
    mode = "exact"          # or "float"

    [[type]]                # type 1 (types are numbered from 1 in files)
    [[type.atoms]]
    k = [1, 0]
    p = "1/2"
    [[type.atoms]]
    k = [1, 1]
    p = "1/2"

    [[type]]                # type 2
    ...

Probabilities are strings holding a decimal ("0.25") or a rational ("1/4").
"""

from __future__ import annotations

from fractions import Fraction
from pathlib import Path

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from .errors import SpecStructureError
from .model import EXACT, FLOAT, ProcessSpec

SPEC_VERSION = 1


def parse_spec(data: dict, mode: str | None = None) -> ProcessSpec:
    version = data.get("spec_version")
    if version != SPEC_VERSION:
        raise SpecStructureError(f"unsupported spec_version {version!r}; expected {SPEC_VERSION}")
    mode = mode or data.get("mode", EXACT)
    if mode not in (EXACT, FLOAT):
        raise SpecStructureError(f"unknown mode {mode!r}")
    types = data.get("type")
    if not isinstance(types, list) or not types:
        raise SpecStructureError("spec needs one [[type]] table per type")
    laws = []
    for idx, entry in enumerate(types, start=1):
        atoms = entry.get("atoms")
        if not atoms:
            raise SpecStructureError(f"type {idx} has no atoms")
        law = {}
        for atom in atoms:
            k, p = atom.get("k"), atom.get("p")
            if k is None or p is None:
                raise SpecStructureError(f"type {idx}: every atom needs k and p")
            if not isinstance(p, str):
                raise SpecStructureError(f"type {idx}: probability must be a string, got {p!r}")
            try:
                prob = Fraction(p.strip())
            except (ValueError, ZeroDivisionError) as exc:
                raise SpecStructureError(f"type {idx}: cannot parse probability {p!r}") from exc
            if tuple(k) in law:
                raise SpecStructureError(f"type {idx}: duplicate atom {k}")
            law[tuple(k)] = prob
        laws.append(law)
    return ProcessSpec.from_atoms(laws, mode, name=str(data.get("name", "")))


def load_spec(path, mode: str | None = None) -> ProcessSpec:
    with open(path, "rb") as fh:
        return parse_spec(tomllib.load(fh), mode)


def dump_spec(spec: ProcessSpec) -> str:
    lines = [f"spec_version = {SPEC_VERSION}"]
    if spec.name:
        lines.append(f'name = "{spec.name}"')
    lines.append(f'mode = "{spec.mode}"')
    for law in spec.laws:
        lines += ["", "[[type]]"]
        for k, p in law.atoms:
            lines += ["[[type.atoms]]", f"k = [{', '.join(str(x) for x in k)}]", f'p = "{p}"']
    return "\n".join(lines) + "\n"


def write_spec(spec: ProcessSpec, path) -> None:
    Path(path).write_text(dump_spec(spec))
