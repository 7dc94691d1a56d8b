"""Single-qubit Hamiltonians, diagonalization, and truncated eigenbases.

The fluxonium Hamiltonian

    H = 4 E_C n^2 + (1/2) E_L (phi + phi_ext)^2 - E_J cos(phi)

is represented in the harmonic-oscillator basis of its LC part, with
phi_zp = (2 E_C / E_L)^(1/4), phi = phi_zp (a + a†) and
n = i (a† - a) / (2 phi_zp). The cosine is evaluated through the spectral
decomposition of phi. H is real symmetric in this basis, so eigenvectors are
real and the phase convention reduces to a sign choice.

Truncated operators are reported in the flux-displaced frame: ``phi_d`` is the
projection of phi + phi_ext, whose diagonal vanishes at the sweetspot by
parity. Couplings and drives act through these displaced operators.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_DIM_FULL = 60
_DEGENERACY_TOL = 1e-10


class QubitModelError(ValueError):
    pass


@dataclass(frozen=True)
class QubitOperators:
    """Full-basis operators and spectrum of a single qubit."""

    dim_full: int
    h: np.ndarray
    n_op: np.ndarray
    phi_op: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray
    phiext: float


@dataclass(frozen=True)
class TruncatedQubit:
    """Lowest-d eigenbasis block: diagonal spectrum plus n and phi operators."""

    dim: int
    h_d: np.ndarray
    n_d: np.ndarray
    phi_d: np.ndarray


def _fix_signs(vecs):
    # largest-|component| entry made positive; deterministic for real vectors
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def fluxonium_matrices(ec, ej, el, phiext, dim_full):
    """Raw operator matrices (h, n, phi, phi_shifted) in the LC Fock basis."""
    phi_zp = (2.0 * ec / el) ** 0.25
    a = np.diag(np.sqrt(np.arange(1, dim_full)), 1)
    phi = phi_zp * (a + a.T)
    n = 1j / (2.0 * phi_zp) * (a.T - a)
    lam, w = np.linalg.eigh(phi)
    cosphi = (w * np.cos(lam)) @ w.T
    phi_shift = phi + phiext * np.eye(dim_full)
    h = 4.0 * ec * (n @ n).real + 0.5 * el * (phi_shift @ phi_shift) - ej * cosphi
    return h, n, phi, phi_shift, cosphi


def build_fluxonium(spec, dim_full: int = DEFAULT_DIM_FULL) -> QubitOperators:
    """Diagonalize one fluxonium in the LC oscillator basis."""
    if dim_full < 10:
        raise QubitModelError("dim_full must be >= 10")
    ec, ej, el = spec.ec_eff, spec.ej_eff, spec.el_eff
    if min(ec, ej, el) <= 0:
        raise QubitModelError("fluxonium energies must be positive")
    h, n, phi, _, _ = fluxonium_matrices(ec, ej, el, spec.phiext, dim_full)
    eigvals, eigvecs = np.linalg.eigh(h)
    eigvecs = _fix_signs(eigvecs)
    return QubitOperators(dim_full=dim_full, h=h, n_op=n, phi_op=phi,
                          eigvals=eigvals, eigvecs=eigvecs, phiext=spec.phiext)


def truncate(q: QubitOperators, d: int) -> TruncatedQubit:
    """Keep the d lowest eigenpairs; ground energy subtracted."""
    if not 2 <= d <= q.dim_full:
        raise QubitModelError(f"truncated dim {d} outside [2, {q.dim_full}]")
    if d < q.dim_full and q.eigvals[d] - q.eigvals[d - 1] < _DEGENERACY_TOL:
        raise QubitModelError(
            f"degenerate eigenvalues at the truncation boundary (levels {d-1}, {d})")
    w = q.eigvecs[:, :d]
    h_d = np.diag(q.eigvals[:d] - q.eigvals[0])
    phi_shift = q.phi_op + q.phiext * np.eye(q.dim_full)
    n_d = w.conj().T @ q.n_op @ w
    phi_d = w.conj().T @ phi_shift @ w
    return TruncatedQubit(dim=d, h_d=h_d, n_d=n_d, phi_d=phi_d)


@dataclass(frozen=True)
class TruncatedDerivs:
    """First-order derivatives of (h_d, n_d, phi_d) for one device field."""

    dh_d: np.ndarray
    dn_d: np.ndarray
    dphi_d: np.ndarray


def fluxonium_param_derivs(spec, d: int, dim_full: int = DEFAULT_DIM_FULL):
    """Derivatives of the truncated operators w.r.t. the pattern (ec, ej, el).

    Uses nondegenerate eigenvalue/eigenvector perturbation theory on the full
    problem, with the operator matrices held fixed at the base point. The
    derivative is with respect to the undeviated pattern value, so the
    multiplicative deviation factor enters by the chain rule.
    """
    ec, ej, el = spec.ec_eff, spec.ej_eff, spec.el_eff
    h, n, phi, phi_shift, cosphi = fluxonium_matrices(ec, ej, el, spec.phiext, dim_full)
    eigvals, eigvecs = np.linalg.eigh(h)
    eigvecs = _fix_signs(eigvecs)
    gaps = eigvals[:, None] - eigvals[None, :]  # gaps[m, k] = E_m - E_k
    if np.any(np.abs(gaps[~np.eye(dim_full, dtype=bool)]) < _DEGENERACY_TOL):
        raise QubitModelError("degenerate single-qubit spectrum; perturbative derivative undefined")

    dh = {
        "ec": 4.0 * (n @ n).real * spec.dev_ec,
        "ej": -cosphi * spec.dev_ej,
        "el": 0.5 * (phi_shift @ phi_shift) * spec.dev_el,
    }
    out = {}
    w = eigvecs[:, :d]
    for fld, dmat in dh.items():
        g = eigvecs.T @ dmat @ eigvecs
        de = np.diag(g).copy()
        coef = np.zeros_like(g)
        mask = ~np.eye(dim_full, dtype=bool)
        coef[mask] = g[mask] / (-gaps[mask])  # <m|dH|k> / (E_k - E_m)
        dw = eigvecs @ coef[:, :d]
        dn_d = dw.conj().T @ n @ w + w.conj().T @ n @ dw
        dphi_d = dw.conj().T @ phi_shift @ w + w.conj().T @ phi_shift @ dw
        dh_d = np.diag(de[:d] - de[0])
        out[fld] = TruncatedDerivs(dh_d=dh_d, dn_d=dn_d, dphi_d=dphi_d)
    return out
