"""Exact diagonalization reference for small systems.

Everything the typicality estimators approximate is evaluated here from the
full spectrum: shell weights, diagonal matrix elements, long-time averages,
exact time evolution and the displaced-state density matrix.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .estimator import EthReport
from .funcfilter import EnergyWindow
from .model import LinearOp, SpinOperator

__all__ = [
    "DEFAULT_MAX_SITES",
    "DEGENERACY_TOL",
    "SizeCapError",
    "DegeneracyWarning",
    "SpectralData",
    "dense_matrix",
    "exact_diagonalize",
    "exact_eth_params",
    "exact_longtime_average",
    "exact_evolve",
    "exact_expectation_trace",
    "exact_mod_density",
    "function_of_matrix",
]

DEFAULT_MAX_SITES = 14
DEGENERACY_TOL = 1e-10


class SizeCapError(ValueError):
    pass


class DegeneracyWarning(UserWarning):
    pass


def dense_matrix(op: LinearOp, max_sites: int = DEFAULT_MAX_SITES) -> np.ndarray:
    """Dense matrix of ``op``; real for spin operators, complex otherwise."""
    d = op.dim
    if d > (1 << max_sites):
        raise SizeCapError(f"dimension {d} exceeds the cap of {max_sites} sites")
    if isinstance(op, SpinOperator):
        m = np.diag(op.diag.copy())
        s = np.arange(d, dtype=np.int64)
        for mask, amp in zip(op.masks, op.amps):
            sm = s & mask
            cols = s[(sm != 0) & (sm != mask)]
            m[cols ^ mask, cols] += amp
        return m
    return op.apply(np.eye(d, dtype=np.complex128))


def _as_dense(A, max_sites=DEFAULT_MAX_SITES):
    return A if isinstance(A, np.ndarray) else dense_matrix(A, max_sites)


def _degeneracy_groups(evals, tol):
    groups = []
    start = 0
    for i in range(1, len(evals) + 1):
        if i == len(evals) or evals[i] - evals[i - 1] > tol:
            if i - start > 1:
                groups.append(np.arange(start, i))
            start = i
    return groups


@dataclass
class SpectralData:
    """Full spectrum and eigenbasis of a Hermitian operator."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray = field(repr=False)
    degeneracy_groups: list = field(default_factory=list, repr=False)
    tol: float = DEGENERACY_TOL

    @property
    def dim(self) -> int:
        return self.eigenvalues.size

    def diag_elements(self, A) -> np.ndarray:
        """``A_nn = <n|A|n>`` for all eigenstates."""
        AV = A @ self.eigenvectors if isinstance(A, np.ndarray) else A.apply(self.eigenvectors.astype(complex))
        return np.einsum("in,in->n", self.eigenvectors.conj(), AV).real

    def matrix_elements(self, A) -> np.ndarray:
        """``A_mn = <m|A|n>`` in the eigenbasis."""
        V = self.eigenvectors
        AV = A @ V if isinstance(A, np.ndarray) else A.apply(V.astype(complex))
        return V.conj().T @ AV

    def levels(self):
        """Index groups of (numerically) equal eigenvalues, singletons included."""
        out = []
        gi = iter(self.degeneracy_groups)
        nxt = next(gi, None)
        n = 0
        while n < self.dim:
            if nxt is not None and nxt[0] == n:
                out.append(nxt)
                n = nxt[-1] + 1
                nxt = next(gi, None)
            else:
                out.append(np.array([n]))
                n += 1
        return out

    def block_diag_squares(self, A) -> np.ndarray:
        """Per eigenstate, ``Tr[(P A P)^2] / g`` of its degenerate block (``A_nn^2`` if nondegenerate)."""
        Ann = self.diag_elements(A)
        out = Ann**2
        if not self.degeneracy_groups:
            return out
        V = self.eigenvectors
        for g in self.degeneracy_groups:
            Vg = V[:, g]
            AVg = A @ Vg if isinstance(A, np.ndarray) else A.apply(Vg.astype(complex))
            block = Vg.conj().T @ AVg
            out[g] = np.sum(np.abs(block) ** 2) / len(g)
        return out


def exact_diagonalize(op, max_sites: int = DEFAULT_MAX_SITES, tol: float = DEGENERACY_TOL) -> SpectralData:
    """Dense symmetric eigensolver over the full ``2**N`` space."""
    n_sites = int(round(math.log2(op.shape[0] if isinstance(op, np.ndarray) else op.dim)))
    if n_sites > max_sites:
        raise SizeCapError(f"{n_sites} sites exceed the exact-diagonalization cap of {max_sites}")
    m = _as_dense(op, max_sites)
    evals, evecs = scipy.linalg.eigh(m)
    return SpectralData(evals, evecs, _degeneracy_groups(evals, tol), tol)


def exact_eth_params(
    spectral: SpectralData,
    D,
    window: EnergyWindow = EnergyWindow(),
    block_resolved: bool = True,
) -> EthReport:
    """Exact shell averages of ``D`` with Gaussian weights on the eigenvalues.

    ``slope`` is the analytic derivative ``Cov_p(E_n, D_nn) / sigma^2``.  With
    ``block_resolved`` the squared diagonal elements inside degenerate levels
    are replaced by the basis-independent block sums that a long-time
    average converges to.
    """
    E = spectral.eigenvalues
    w = np.exp(-((E - window.e_center) ** 2) / (2 * window.sigma**2))
    d_eff = float(w.sum())
    p = w / d_eff
    Dnn = spectral.diag_elements(D)
    sq = spectral.block_diag_squares(D) if block_resolved else Dnn**2
    D2nn = _d2_diag(spectral, D)
    a_bar = float(p @ Dnn)
    sigma2 = float(p @ sq - a_bar**2)
    delta2 = float(p @ D2nn - a_bar**2)
    slope = float((p @ ((E - p @ E) * Dnn)) / window.sigma**2)
    raw = math.sqrt(max(sigma2, 0.0)) - abs(slope) * window.sigma
    sp = max(raw, 0.0)
    v = sp**2 / delta2 if delta2 > 0 else math.nan
    flags = ["sigma_prime_clamped"] if raw < 0 else []
    return EthReport(
        d_eff=d_eff, a_bar=a_bar, sigma2=sigma2, slope=slope, sigma_prime=sp, delta2=delta2, v=v,
        samples=0, window=window, flags=flags,
        meta={"method": "exact", "sigma_prime_raw": raw, "degenerate_levels": len(spectral.degeneracy_groups)},
    )


def _d2_diag(spectral, D):
    V = spectral.eigenvectors
    DV = D @ V if isinstance(D, np.ndarray) else D.apply(V.astype(complex))
    return np.einsum("in,in->n", DV.conj(), DV).real


def exact_longtime_average(rho0, spectral: SpectralData, A, kind: str = "weights") -> float:
    """Infinite-time average of ``Tr[rho(t) A]``.

    ``kind`` selects how ``rho0`` is read: ``"weights"`` (populations
    ``rho_nn`` in the eigenbasis), ``"state"`` (a pure state vector) or
    ``"density"`` (a density matrix in the product basis).  Degenerate levels
    contribute ``Tr[P rho P A]``, which population weights alone cannot
    provide; a :class:`DegeneracyWarning` is issued in that case.
    """
    V = spectral.eigenvectors
    if kind == "weights":
        w = np.asarray(rho0, dtype=float)
        if w.shape != (spectral.dim,):
            raise ValueError("weights must have one entry per eigenstate")
        if spectral.degeneracy_groups:
            warnings.warn("degenerate levels present; population weights ignore coherences inside them", DegeneracyWarning)
        return float(w @ spectral.diag_elements(A))
    if kind == "state":
        psi = np.asarray(rho0)
        c = V.conj().T @ psi
        rho_e = None
    elif kind == "density":
        rho_e = V.conj().T @ np.asarray(rho0) @ V
    else:
        raise ValueError(f"unknown kind {kind!r}")
    Ae = spectral.matrix_elements(A)
    total = 0.0
    for g in spectral.levels():
        if rho_e is None:
            cg = c[g]
            total += float(np.real(cg.conj() @ Ae[np.ix_(g, g)] @ cg))
        else:
            total += float(np.real(np.trace(rho_e[np.ix_(g, g)] @ Ae[np.ix_(g, g)])))
    return total


def exact_evolve(spectral: SpectralData, psi: np.ndarray, t: float) -> np.ndarray:
    """``exp(-i H t) psi`` from the eigendecomposition."""
    V = spectral.eigenvectors
    c = V.conj().T @ psi
    phase = np.exp(-1j * spectral.eigenvalues * t)
    c = c * (phase if c.ndim == 1 else phase[:, None])
    return V @ c


def exact_expectation_trace(spectral: SpectralData, rho0: np.ndarray, A, times) -> np.ndarray:
    """``Tr[rho(t) A]`` on ``times`` for a density matrix ``rho0`` (product basis)."""
    V = spectral.eigenvectors
    E = spectral.eigenvalues
    rho_e = V.conj().T @ rho0 @ V
    Ae = spectral.matrix_elements(A)
    # Tr[rho(t) A] = sum_nm rho_nm A_mn exp(-i (E_n - E_m) t)
    M = rho_e * Ae.T
    out = np.empty(len(times))
    for i, t in enumerate(times):
        ph = np.exp(-1j * E * t)
        out[i] = float(np.real(ph @ M @ ph.conj()))
    return out


def function_of_matrix(m: np.ndarray, f) -> np.ndarray:
    """``f(m)`` for a Hermitian matrix via its eigendecomposition."""
    w, U = scipy.linalg.eigh(m)
    return (U * f(w)) @ U.conj().T


def exact_mod_density(H, D, sigma: float, beta: float, d0: float, e_center: float = 0.0):
    """Root and unit-trace density of ``exp(-((H - E)^2 + beta^2 (D - d0)^2) / (2 sigma^2))``.

    Returns ``(root, rho)`` with ``root = exp(-K / (4 sigma^2))`` unnormalized
    and ``rho = root @ root / Tr[root @ root]``.
    """
    Hm = _as_dense(H)
    Dm = _as_dense(D)
    eye = np.eye(Hm.shape[0])
    Hs = Hm - e_center * eye
    Ds = Dm - d0 * eye
    K = Hs @ Hs + beta**2 * (Ds @ Ds)
    root = function_of_matrix(0.5 * (K + K.conj().T), lambda x: np.exp(-x / (4 * sigma**2)))
    rho = root @ root
    rho /= np.trace(rho).real
    return root, rho
