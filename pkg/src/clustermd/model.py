"""Core domain types, periodic geometry, and input validation.

Units follow the usual MD conventions: lengths in nm, time in ps, masses in
atomic mass units u, charges in elementary charges e, energies in kJ/mol.
With these choices 1 u*nm^2/ps^2 = 1 kJ/mol exactly, so kinetic and potential
energies add without conversion factors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

# Electrostatic prefactor 1/(4 pi eps0) in kJ mol^-1 nm e^-2.
COULOMB_CONSTANT = 138.935458

# Boltzmann constant in kJ mol^-1 K^-1.
BOLTZMANN_KJ_MOL_K = 0.008314462618


class ParameterError(ValueError):
    """An argument violates an operation's contract."""


class SingularityError(RuntimeError):
    """Two distinct interacting particles sit at exactly the same point."""

    def __init__(self, message: str, i: int | None = None, j: int | None = None):
        super().__init__(message)
        self.i = i
        self.j = j


def _frozen_array(values, dtype, shape_hint=None) -> np.ndarray:
    """Coerce to a read-only contiguous array; reshape per hint when given."""
    try:
        out = np.ascontiguousarray(values, dtype=dtype)
        if shape_hint is not None:
            out = np.ascontiguousarray(out.reshape(shape_hint))
    except (TypeError, ValueError) as exc:
        raise ParameterError(f"cannot coerce array: {exc}") from exc
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class SimBox:
    """Orthorhombic simulation box, periodic in all three dimensions."""

    lengths: np.ndarray  # (3,) edge lengths in nm

    def __post_init__(self):
        lengths = _frozen_array(self.lengths, np.float64)
        if lengths.shape != (3,):
            raise ParameterError(
                f"box lengths must be a 3-vector, got shape {lengths.shape}"
            )
        object.__setattr__(self, "lengths", lengths)

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))


@dataclass(frozen=True)
class ParticleSystem:
    """Particle state plus per-particle interaction attributes.

    Arrays are stored read-only; evolution happens by constructing a new
    instance (dataclasses.replace), never by mutation in place.
    """

    positions: np.ndarray   # (n, 3) nm
    velocities: np.ndarray  # (n, 3) nm/ps
    masses: np.ndarray      # (n,) u
    charges: np.ndarray     # (n,) e
    lj_type: np.ndarray     # (n,) row indices into the LJ parameter table
    box: SimBox

    def __post_init__(self):
        object.__setattr__(
            self, "positions", _frozen_array(self.positions, np.float64, (-1, 3))
        )
        object.__setattr__(
            self, "velocities", _frozen_array(self.velocities, np.float64, (-1, 3))
        )
        object.__setattr__(self, "masses", _frozen_array(self.masses, np.float64))
        object.__setattr__(self, "charges", _frozen_array(self.charges, np.float64))
        object.__setattr__(self, "lj_type", _frozen_array(self.lj_type, np.int64))

    @property
    def n(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class NonbondedParams:
    """Cutoff scheme and interaction tables shared by kernels and oracle."""

    r_cut: float
    r_list: float
    lj_table: np.ndarray  # (t, t, 2): [epsilon kJ/mol, sigma nm] per type pair
    coulomb_scale: float = COULOMB_CONSTANT
    shift_potential: bool = False

    def __post_init__(self):
        table = _frozen_array(self.lj_table, np.float64)
        if table.ndim != 3 or table.shape[0] != table.shape[1] or table.shape[2] != 2:
            raise ParameterError(
                f"lj_table must have shape (t, t, 2), got {table.shape}"
            )
        object.__setattr__(self, "lj_table", table)
        object.__setattr__(self, "r_cut", float(self.r_cut))
        object.__setattr__(self, "r_list", float(self.r_list))

    @property
    def n_types(self) -> int:
        return self.lj_table.shape[0]


@dataclass(frozen=True)
class ForcesEnergies:
    """Force array plus accumulated energy terms from one evaluation.

    The index convention of `forces` (original or clustered order) is stated
    by whichever operation produced the instance.
    """

    forces: np.ndarray  # (n, 3) kJ mol^-1 nm^-1
    e_lj: float
    e_coulomb: float

    def __post_init__(self):
        object.__setattr__(
            self, "forces", _frozen_array(self.forces, np.float64, (-1, 3))
        )
        object.__setattr__(self, "e_lj", float(self.e_lj))
        object.__setattr__(self, "e_coulomb", float(self.e_coulomb))

    @property
    def e_potential(self) -> float:
        return self.e_lj + self.e_coulomb


def wrap_position(p, box: SimBox) -> np.ndarray:
    """Map positions into the primary cell [0, L) per dimension.

    Accepts a single 3-vector or an (n, 3) array.  Idempotent: wrapping a
    wrapped position returns it bit-for-bit.
    """
    lengths = box.lengths
    out = np.mod(np.asarray(p, dtype=np.float64), lengths)
    # np.mod of a tiny negative value can land exactly on L; fold it back.
    return np.where(out >= lengths, out - lengths, out)


def minimum_image(dr, box: SimBox) -> np.ndarray:
    """Shift a displacement by whole boxes so each component lies in [-L/2, L/2).

    Accepts a single 3-vector or an (n, 3) array.  The -L/2 boundary maps to
    -L/2, never +L/2, so every pair displacement has one canonical image.
    """
    lengths = box.lengths
    dr = np.asarray(dr, dtype=np.float64)
    out = dr - np.floor(dr / lengths + 0.5) * lengths
    # Rounding in floor() can leave a component one box off at the boundary.
    half = 0.5 * lengths
    out = np.where(out >= half, out - lengths, out)
    out = np.where(out < -half, out + lengths, out)
    return out


def validate_system(system: ParticleSystem, params: NonbondedParams) -> list[str]:
    """Collect every contract violation as a human-readable message.

    Returns an empty list when the pair (system, params) is safe to simulate.
    """
    problems: list[str] = []
    n = system.n

    if np.any(system.box.lengths <= 0.0):
        problems.append(f"box lengths must be positive, got {system.box.lengths}")
    if not np.all(np.isfinite(system.box.lengths)):
        problems.append("box lengths must be finite")

    for name in ("positions", "velocities"):
        arr = getattr(system, name)
        if arr.shape != (n, 3):
            problems.append(f"{name} must have shape ({n}, 3), got {arr.shape}")
        elif not np.all(np.isfinite(arr)):
            problems.append(f"{name} contains non-finite values")
    for name in ("masses", "charges", "lj_type"):
        arr = getattr(system, name)
        if arr.shape != (n,):
            problems.append(f"{name} must have shape ({n},), got {arr.shape}")
    if system.masses.shape == (n,) and np.any(system.masses <= 0.0):
        problems.append("masses must be strictly positive")

    t = params.n_types
    if system.lj_type.shape == (n,) and n > 0:
        tmin, tmax = int(system.lj_type.min()), int(system.lj_type.max())
        if tmin < 0 or tmax >= t:
            problems.append(
                f"lj_type values must lie in [0, {t}), got range [{tmin}, {tmax}]"
            )

    if not (0.0 < params.r_cut <= params.r_list):
        problems.append(
            f"need 0 < r_cut <= r_list, got r_cut={params.r_cut} r_list={params.r_list}"
        )
    eps = params.lj_table[:, :, 0]
    sig = params.lj_table[:, :, 1]
    if not np.array_equal(eps, eps.T) or not np.array_equal(sig, sig.T):
        problems.append("lj_table must be symmetric in the type indices")
    if np.any(eps < 0.0):
        problems.append("lj_table epsilon entries must be non-negative")
    if np.any(sig <= 0.0):
        problems.append("lj_table sigma entries must be strictly positive")

    if np.all(system.box.lengths > 0.0) and np.any(
        system.box.lengths < 2.0 * params.r_list
    ):
        problems.append(
            f"every box edge must be >= 2*r_list={2.0 * params.r_list} "
            f"for the single-image convention, got {system.box.lengths}"
        )
    return problems


def save_system(path, system: ParticleSystem, lj_table) -> None:
    """Write a system plus its LJ table as deterministic JSON."""
    table = np.asarray(lj_table, dtype=np.float64)
    doc = {
        "box": system.box.lengths.tolist(),
        "positions": system.positions.tolist(),
        "velocities": system.velocities.tolist(),
        "masses": system.masses.tolist(),
        "charges": system.charges.tolist(),
        "lj_type": system.lj_type.tolist(),
        "lj_table": table.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_system(path) -> tuple[ParticleSystem, np.ndarray]:
    """Read a system JSON file; returns (system, lj_table)."""
    with open(path) as fh:
        doc = json.load(fh)
    missing = [
        k
        for k in (
            "box",
            "positions",
            "velocities",
            "masses",
            "charges",
            "lj_type",
            "lj_table",
        )
        if k not in doc
    ]
    if missing:
        raise ParameterError(f"system file {path} missing keys: {missing}")
    system = ParticleSystem(
        positions=doc["positions"],
        velocities=doc["velocities"],
        masses=doc["masses"],
        charges=doc["charges"],
        lj_type=doc["lj_type"],
        box=SimBox(doc["box"]),
    )
    lj_table = _frozen_array(doc["lj_table"], np.float64)
    return system, lj_table
