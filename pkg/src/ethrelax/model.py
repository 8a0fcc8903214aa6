"""Spin-1/2 XXZ models for energy exchange between a left and a right part.

Basis states are N-bit integers: bit ``i`` is site ``i`` and a set bit means
spin up (+1/2).  Left sites come first (``0 .. n_left_sites - 1``), right
sites follow.  Two-dimensional lattices are numbered row-major within each
side.

Operators are never stored as matrices.  A :class:`SpinOperator` keeps the
diagonal (Ising and field terms) as a length-``2**N`` vector plus a list of
flip-flop bonds, and applies itself through the kernels in
:mod:`ethrelax.kernels`.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import kernels

__all__ = [
    "Geometry",
    "ModelSpec",
    "Bond",
    "BondGraph",
    "DisorderRealization",
    "LinearOp",
    "SpinOperator",
    "OperatorPower",
    "ModelOperators",
    "build_geometry",
    "sample_disorder",
    "assemble_operators",
    "apply_operator",
    "build_model",
    "identity",
]


class Geometry(str, enum.Enum):
    LADDER = "ladder"
    SINGLE_CONTACT = "single_contact"
    TWO_CONTACT = "two_contact"
    LATTICE2D = "lattice2d"


CHAIN_GEOMETRIES = (Geometry.LADDER, Geometry.SINGLE_CONTACT, Geometry.TWO_CONTACT)


@dataclass(frozen=True)
class ModelSpec:
    """Geometry, couplings and disorder of a two-part spin system.

    For chains ``n_left``/``n_right`` are spin counts and ``n_right`` defaults
    to ``2 * n_left``.  For ``lattice2d`` they are lattice sides and
    ``n_right`` defaults to ``n_left + 1``.
    """

    geometry: Geometry | str = Geometry.LADDER
    n_left: int = 4
    n_right: int | None = None
    J: float = 1.0
    delta: float = 0.3
    j_c: float = 0.3
    W: float = 0.0
    disorder_seed: int = 0

    def __post_init__(self):
        try:
            geom = Geometry(self.geometry)
        except ValueError:
            raise ValueError(f"unknown geometry {self.geometry!r}") from None
        object.__setattr__(self, "geometry", geom)
        if int(self.n_left) != self.n_left or self.n_left < 1:
            raise ValueError(f"n_left must be a positive integer, got {self.n_left}")
        object.__setattr__(self, "n_left", int(self.n_left))
        if geom is Geometry.LATTICE2D and self.n_left < 2:
            raise ValueError("lattice2d needs n_left >= 2")
        if self.n_right is None:
            nr = self.n_left + 1 if geom is Geometry.LATTICE2D else 2 * self.n_left
            object.__setattr__(self, "n_right", nr)
        elif int(self.n_right) != self.n_right or self.n_right < 1:
            raise ValueError(f"n_right must be a positive integer, got {self.n_right}")
        else:
            object.__setattr__(self, "n_right", int(self.n_right))
        if geom is Geometry.LATTICE2D and self.n_right < self.n_left:
            raise ValueError("lattice2d needs n_right >= n_left")
        if self.W < 0:
            raise ValueError("disorder width W must be nonnegative")

    @property
    def n_left_sites(self) -> int:
        return self.n_left**2 if self.geometry is Geometry.LATTICE2D else self.n_left

    @property
    def n_right_sites(self) -> int:
        return self.n_right**2 if self.geometry is Geometry.LATTICE2D else self.n_right

    @property
    def n_sites(self) -> int:
        return self.n_left_sites + self.n_right_sites

    @property
    def dim(self) -> int:
        return 1 << self.n_sites

    def as_dict(self) -> dict:
        return {
            "geometry": self.geometry.value,
            "n_left": self.n_left,
            "n_right": self.n_right,
            "J": self.J,
            "delta": self.delta,
            "j_c": self.j_c,
            "W": self.W,
            "disorder_seed": self.disorder_seed,
        }


@dataclass(frozen=True)
class Bond:
    site_a: int
    site_b: int
    xy_weight: float
    z_weight: float
    tag: str  # "L", "R" or "C"


@dataclass
class BondGraph:
    n_left_sites: int
    n_right_sites: int
    bonds: list[Bond]
    spec: ModelSpec | None = None

    @property
    def n_sites(self) -> int:
        return self.n_left_sites + self.n_right_sites

    def site_side(self, site: int) -> str:
        return "L" if site < self.n_left_sites else "R"

    def count(self, tag: str) -> int:
        return sum(1 for b in self.bonds if b.tag == tag)

    def tagged(self, tag: str) -> list[Bond]:
        return [b for b in self.bonds if b.tag == tag]


@dataclass
class DisorderRealization:
    fields: np.ndarray
    W: float = 0.0
    seed: int | None = None

    def __len__(self):
        return len(self.fields)


def _chain_bonds(offset, n, J, delta, tag):
    return [Bond(offset + i, offset + i + 1, J, J * delta, tag) for i in range(n - 1)]


def _lattice_bonds(offset, side, J, delta, tag):
    bonds = []
    for r in range(side):
        for c in range(side):
            s = offset + r * side + c
            if c + 1 < side:
                bonds.append(Bond(s, s + 1, J, J * delta, tag))
            if r + 1 < side:
                bonds.append(Bond(s, s + side, J, J * delta, tag))
    return bonds


def build_geometry(spec: ModelSpec) -> BondGraph:
    """Bond list for the chosen geometry.

    Chains carry ``N_j - 1`` open-boundary bonds each.  The coupling bonds
    join left site ``i`` to right site ``i`` for every ``i`` (ladder), only
    ``i = 0`` (single contact) or ``i in {0, N_L - 1}`` (two contact).  For
    ``lattice2d`` the right-edge column of the left lattice is paired row by
    row with the left-edge column of the right lattice; surplus rows of the
    larger lattice stay uncoupled.
    """
    geom = Geometry(spec.geometry)
    J, dz, jc = spec.J, spec.delta, spec.j_c
    nl, nr = spec.n_left_sites, spec.n_right_sites
    if geom is Geometry.LATTICE2D:
        if spec.n_left < 2:
            raise ValueError("lattice2d needs n_left >= 2")
        bonds = _lattice_bonds(0, spec.n_left, J, dz, "L")
        bonds += _lattice_bonds(nl, spec.n_right, J, dz, "R")
        sl, sr = spec.n_left, spec.n_right
        for k in range(min(sl, sr)):
            a = k * sl + (sl - 1)
            b = nl + k * sr
            bonds.append(Bond(a, b, jc, jc * dz, "C"))
        return BondGraph(nl, nr, bonds, spec)

    bonds = _chain_bonds(0, nl, J, dz, "L") + _chain_bonds(nl, nr, J, dz, "R")
    if geom is Geometry.LADDER:
        contacts = range(min(nl, nr))
    elif geom is Geometry.SINGLE_CONTACT:
        contacts = [0]
    elif geom is Geometry.TWO_CONTACT:
        contacts = sorted({0, nl - 1})
        if nl - 1 >= nr:
            raise ValueError("two_contact needs n_right >= n_left")
    else:  # pragma: no cover - enum is exhaustive
        raise ValueError(f"unknown geometry {geom!r}")
    bonds += [Bond(i, nl + i, jc, jc * dz, "C") for i in contacts]
    return BondGraph(nl, nr, bonds, spec)


def sample_disorder(spec: ModelSpec) -> DisorderRealization:
    """Uniform random z-fields on ``[-W/2, W/2]``, one per site."""
    n = spec.n_sites
    if spec.W == 0:
        return DisorderRealization(np.zeros(n), 0.0, spec.disorder_seed)
    rng = np.random.default_rng(np.random.SeedSequence(spec.disorder_seed, spawn_key=(0xD15,)))
    h = rng.uniform(-0.5 * spec.W, 0.5 * spec.W, size=n)
    return DisorderRealization(h, float(spec.W), spec.disorder_seed)


class LinearOp:
    """Hermitian linear map on ``(d,)`` states or ``(d, k)`` blocks.

    Subclasses implement ``_matvec`` on C-contiguous complex ``(d, k)``
    blocks; :meth:`apply` adds the fused ``c_op * A x + c_x * x + c_y * y``
    form used by the polynomial recurrences and the integrator.
    """

    name = "op"
    dim: int

    def _matvec(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _fused(self, x, out, c_op, c_x, y, c_y):
        res = self._matvec(x)
        if c_op != 1:
            res *= c_op
        if c_x != 0:
            res += c_x * x
        if y is not None and c_y != 0:
            res += c_y * y
        out[...] = res
        return out

    def apply(self, x, out=None, c_op=1.0, c_x=0.0, y=None, c_y=0.0):
        x = np.asarray(x)
        if x.shape[0] != self.dim:
            raise ValueError(f"state dimension {x.shape[0]} does not match operator dimension {self.dim}")
        vec = x.ndim == 1
        xb = np.ascontiguousarray(x.reshape(self.dim, -1), dtype=np.complex128)
        yb = None
        if y is not None:
            yb = np.ascontiguousarray(np.asarray(y).reshape(self.dim, -1), dtype=np.complex128)
        if out is None:
            ob = np.empty_like(xb)
        else:
            ob = out.reshape(self.dim, -1)
            if not ob.flags.c_contiguous or ob.dtype != np.complex128:
                raise ValueError("out must be a C-contiguous complex128 array")
        self._fused(xb, ob, c_op, c_x, yb, c_y)
        if out is not None:
            return out
        return ob[:, 0] if vec else ob

    __matmul__ = apply

    def norm_bound(self) -> float:
        raise NotImplementedError


class SpinOperator(LinearOp):
    """Sum of XXZ pair terms and z-fields, closed under linear combination.

    ``diag[s]`` is the diagonal element for basis state ``s``; each entry of
    ``masks`` is a two-bit pair mask whose flip-flop term has amplitude
    ``amps`` (already including the 1/2 from S^x S^x + S^y S^y).
    """

    def __init__(self, n_sites, diag, masks=(), amps=(), name="op"):
        self.n_sites = int(n_sites)
        self.dim = 1 << self.n_sites
        self.diag = np.ascontiguousarray(diag, dtype=np.float64)
        if self.diag.shape != (self.dim,):
            raise ValueError("diagonal has wrong length")
        merged: dict[int, float] = {}
        for m, a in zip(masks, amps):
            merged[int(m)] = merged.get(int(m), 0.0) + float(a)
        items = sorted((m, a) for m, a in merged.items() if a != 0.0)
        self.masks = np.array([m for m, _ in items], dtype=np.int64)
        self.amps = np.array([a for _, a in items], dtype=np.float64)
        self.name = name

    def _fused(self, x, out, c_op, c_x, y, c_y):
        return kernels.apply_xxz(self.diag, self.masks, self.amps, x, out, c_op, c_x, y, c_y)

    def _matvec(self, x):
        out = np.empty_like(x)
        return self._fused(x, out, 1.0, 0.0, None, 0.0)

    def norm_bound(self) -> float:
        # each flip-flop term is a partial permutation with norm 1
        return float(np.abs(self.diag).max() + np.abs(self.amps).sum())

    def _combine(self, other, sign, name):
        if not isinstance(other, SpinOperator):
            return NotImplemented
        if other.n_sites != self.n_sites:
            raise ValueError("operators act on different numbers of sites")
        return SpinOperator(
            self.n_sites,
            self.diag + sign * other.diag,
            np.concatenate([self.masks, other.masks]),
            np.concatenate([self.amps, sign * other.amps]),
            name=name,
        )

    def __add__(self, other):
        return self._combine(other, 1.0, f"({self.name}+{getattr(other, 'name', '?')})")

    def __sub__(self, other):
        return self._combine(other, -1.0, f"({self.name}-{getattr(other, 'name', '?')})")

    def __mul__(self, c):
        c = float(c)
        return SpinOperator(self.n_sites, c * self.diag, self.masks, c * self.amps, name=f"{c:g}*{self.name}")

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def shifted(self, c):
        """``self + c * identity``."""
        return SpinOperator(self.n_sites, self.diag + c, self.masks, self.amps, name=f"({self.name}{c:+g})")

    def __repr__(self):
        return f"SpinOperator({self.name!r}, n_sites={self.n_sites}, bonds={len(self.masks)})"


class OperatorPower(LinearOp):
    """``base ** power`` applied by repetition (used for D^2, D^4)."""

    def __init__(self, base: LinearOp, power: int):
        if power < 0:
            raise ValueError("power must be nonnegative")
        self.base = base
        self.power = int(power)
        self.dim = base.dim
        self.name = f"{base.name}^{power}"

    def _matvec(self, x):
        y = x.copy()
        for _ in range(self.power):
            y = self.base.apply(y)
        return y

    def norm_bound(self) -> float:
        return self.base.norm_bound() ** self.power


def identity(n_sites: int) -> SpinOperator:
    return SpinOperator(n_sites, np.ones(1 << n_sites), name="1")


def _operator_from_bonds(n_sites, bonds, fields, name, signs=None):
    if signs is None:
        signs = [1.0] * len(bonds)
    zz_a = np.array([b.site_a for b in bonds], dtype=np.int64)
    zz_b = np.array([b.site_b for b in bonds], dtype=np.int64)
    zz = np.array([s * b.z_weight for s, b in zip(signs, bonds)], dtype=np.float64)
    diag = kernels.diagonal_from_bonds(n_sites, zz_a, zz_b, zz, np.ascontiguousarray(fields, dtype=np.float64))
    masks = [(1 << b.site_a) | (1 << b.site_b) for b in bonds]
    amps = [0.5 * s * b.xy_weight for s, b in zip(signs, bonds)]
    return SpinOperator(n_sites, diag, masks, amps, name=name)


@dataclass
class ModelOperators:
    """Operator handles of one model: H_L, H_R, H_C, H = sum, D = H_L - H_R."""

    H_L: SpinOperator
    H_R: SpinOperator
    H_C: SpinOperator
    H: SpinOperator
    D: SpinOperator
    graph: BondGraph
    fields: DisorderRealization
    _powers: dict = field(default_factory=dict, repr=False)

    @property
    def dim(self) -> int:
        return self.H.dim

    @property
    def n_sites(self) -> int:
        return self.H.n_sites

    def D_power(self, p: int) -> LinearOp:
        if p == 1:
            return self.D
        if p not in self._powers:
            self._powers[p] = OperatorPower(self.D, p)
        return self._powers[p]

    def handles(self) -> dict:
        return {
            "H_L": self.H_L,
            "H_R": self.H_R,
            "H_C": self.H_C,
            "H": self.H,
            "D": self.D,
            "D2": self.D_power(2),
            "D4": self.D_power(4),
        }


def assemble_operators(graph: BondGraph, fields: DisorderRealization) -> ModelOperators:
    """Matrix-free handles for H_L, H_R, H_C, H and D."""
    n = graph.n_sites
    h = np.asarray(fields.fields, dtype=np.float64)
    if h.shape != (n,):
        raise ValueError(f"{h.shape[0]} disorder fields for {n} sites")
    nl = graph.n_left_sites
    h_left = np.where(np.arange(n) < nl, h, 0.0)
    h_right = np.where(np.arange(n) >= nl, h, 0.0)
    zero = np.zeros(n)
    H_L = _operator_from_bonds(n, graph.tagged("L"), h_left, "H_L")
    H_R = _operator_from_bonds(n, graph.tagged("R"), h_right, "H_R")
    H_C = _operator_from_bonds(n, graph.tagged("C"), zero, "H_C")
    H = H_L + H_R + H_C
    H.name = "H"
    D = H_L - H_R
    D.name = "D"
    return ModelOperators(H_L, H_R, H_C, H, D, graph, fields)


def apply_operator(op: LinearOp, psi: np.ndarray) -> np.ndarray:
    """``op @ psi`` without forming a matrix."""
    return op.apply(psi)


def build_model(spec: ModelSpec) -> ModelOperators:
    """Geometry, disorder and operators in one call."""
    return assemble_operators(build_geometry(spec), sample_disorder(spec))
