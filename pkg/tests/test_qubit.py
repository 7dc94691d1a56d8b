"""Single-qubit model against an independent phase-grid oracle."""

from dataclasses import replace

import numpy as np
import pytest
import scipy.linalg as sla

from fluxsim.graph import QubitSpec
from fluxsim.qubit import (QubitModelError, QubitOperators, build_fluxonium,
                           fluxonium_param_derivs, truncate)

from conftest import TWOPI

F2 = QubitSpec(ec=1.0 * TWOPI, ej=4.0 * TWOPI, el=1.0 * TWOPI, phiext=np.pi)


def grid_oracle_levels(ec, ej, el, phiext, n_levels=6, npts=4001, span=6 * np.pi):
    """Eigenvalues from a real-space grid with a 4th-order stencil.

    Independent of the oscillator-basis implementation: discretizes
    4 E_C n^2 + V(phi) with n^2 = -d^2/dphi^2 on a uniform grid.
    """
    phi = np.linspace(-span, span, npts)
    h = phi[1] - phi[0]
    v = 0.5 * el * (phi + phiext) ** 2 - ej * np.cos(phi)
    # pentadiagonal bands of -d^2/dphi^2 (five-point stencil)
    main = v + 4.0 * ec * (30.0 / (12.0 * h * h))
    off1 = np.full(npts - 1, -4.0 * ec * 16.0 / (12.0 * h * h))
    off2 = np.full(npts - 2, 4.0 * ec * 1.0 / (12.0 * h * h))
    bands = np.zeros((3, npts))
    bands[0] = main
    bands[1, :-1] = off1
    bands[2, :-2] = off2
    evals = sla.eig_banded(bands, lower=True, eigvals_only=True,
                           select="i", select_range=(0, n_levels - 1))
    return evals


def test_bare_frequency_vs_grid_oracle():
    q = build_fluxonium(F2, 60)
    oracle = grid_oracle_levels(F2.ec, F2.ej, F2.el, F2.phiext)
    w01 = (q.eigvals[1] - q.eigvals[0]) / TWOPI
    w01_oracle = (oracle[1] - oracle[0]) / TWOPI
    assert abs(w01 - w01_oracle) < 2e-6
    assert w01 == pytest.approx(0.58, abs=5e-3)


def test_low_levels_vs_grid_oracle():
    q = build_fluxonium(F2, 60)
    oracle = grid_oracle_levels(F2.ec, F2.ej, F2.el, F2.phiext)
    mine = q.eigvals[:6] - q.eigvals[0]
    theirs = oracle[:6] - oracle[0]
    assert np.max(np.abs(mine - theirs)) < 5e-5


def test_harmonic_limit():
    # E_J -> 0, phiext = 0: exact oscillator, gaps sqrt(8 Ec El)
    spec = QubitSpec(ec=1.0 * TWOPI, ej=1e-12, el=1.0 * TWOPI, phiext=0.0)
    q = build_fluxonium(spec, 60)
    gaps = np.diff(q.eigvals[:6])
    expected = np.sqrt(8.0 * spec.ec * spec.el)
    assert np.allclose(gaps, expected, rtol=1e-8)


def test_sweetspot_parity_of_spectrum():
    plus = build_fluxonium(F2, 60).eigvals[:6]
    minus = build_fluxonium(replace(F2, phiext=-np.pi), 60).eigvals[:6]
    assert np.allclose(plus, minus, atol=1e-10)


def test_hermiticity_and_orthonormality():
    q = build_fluxonium(F2, 60)
    assert np.allclose(q.h, q.h.conj().T, atol=1e-12 * np.linalg.norm(q.h))
    assert np.allclose(q.eigvecs.T @ q.eigvecs, np.eye(60), atol=1e-10)
    assert np.all(np.diff(q.eigvals) > -1e-12)


def test_dim_full_convergence_table_sets():
    for el in (0.9, 1.0, 1.1):
        spec = replace(F2, el=el * TWOPI)
        e60 = build_fluxonium(spec, 60).eigvals[:5]
        e80 = build_fluxonium(spec, 80).eigvals[:5]
        assert np.max(np.abs((e60 - e60[0]) - (e80 - e80[0]))) < 1e-9


def test_build_rejects_bad_inputs():
    with pytest.raises(QubitModelError):
        build_fluxonium(F2, 6)
    bad = replace(F2, dev_el=-1.0)
    with pytest.raises(QubitModelError):
        build_fluxonium(bad, 60)


def test_truncate_full_dim_preserves_spectrum():
    q = build_fluxonium(F2, 24)
    t = truncate(q, 24)
    assert np.allclose(np.diag(t.h_d), q.eigvals - q.eigvals[0], atol=1e-12)


def test_truncate_levels_and_ground():
    q = build_fluxonium(F2, 60)
    t = truncate(q, 3)
    assert t.h_d[0, 0] == 0.0
    assert np.allclose(t.h_d, np.diag(np.diag(t.h_d)))
    oracle = grid_oracle_levels(F2.ec, F2.ej, F2.el, F2.phiext)
    assert abs(t.h_d[1, 1] - (oracle[1] - oracle[0])) < 5e-5


def test_truncated_operators_hermitian():
    t = truncate(build_fluxonium(F2, 60), 4)
    assert np.allclose(t.n_d, t.n_d.conj().T, atol=1e-12)
    assert np.allclose(t.phi_d, t.phi_d.conj().T, atol=1e-12)


def test_charge_matrix_parity_selection():
    # at the sweetspot eigenstates have definite parity: <k|n|k> = 0
    t = truncate(build_fluxonium(F2, 60), 5)
    assert np.max(np.abs(np.diag(t.n_d))) < 1e-10
    assert np.max(np.abs(np.diag(t.phi_d))) < 1e-10


def test_truncate_bounds_checked():
    q = build_fluxonium(F2, 30)
    with pytest.raises(QubitModelError):
        truncate(q, 1)
    with pytest.raises(QubitModelError):
        truncate(q, 31)


def test_truncate_degenerate_boundary_rejected():
    q = build_fluxonium(F2, 30)
    rigged = QubitOperators(dim_full=30, h=q.h, n_op=q.n_op, phi_op=q.phi_op,
                            eigvals=np.concatenate([[0.0, 1.0, 1.0 + 1e-12],
                                                    q.eigvals[3:]]),
                            eigvecs=q.eigvecs, phiext=q.phiext)
    with pytest.raises(QubitModelError, match="degenerate"):
        truncate(rigged, 2)


@pytest.mark.parametrize("fld", ["ec", "ej", "el"])
def test_param_derivs_match_fd(fld):
    derivs = fluxonium_param_derivs(F2, 3, 60)[fld]
    h = 1e-4
    tp = truncate(build_fluxonium(replace(F2, **{fld: getattr(F2, fld) + h}), 60), 3)
    tm = truncate(build_fluxonium(replace(F2, **{fld: getattr(F2, fld) - h}), 60), 3)
    assert np.max(np.abs((tp.h_d - tm.h_d) / (2 * h) - derivs.dh_d)) < 1e-8
    assert np.max(np.abs((tp.n_d - tm.n_d) / (2 * h) - derivs.dn_d)) < 1e-8
    assert np.max(np.abs((tp.phi_d - tm.phi_d) / (2 * h) - derivs.dphi_d)) < 1e-8


def test_param_derivs_scale_with_deviation_factor():
    dev = replace(F2, dev_ej=1.05)
    base = fluxonium_param_derivs(F2, 3, 60)["ej"]
    scaled = fluxonium_param_derivs(dev, 3, 60)["ej"]
    # derivative w.r.t. the pattern value picks up the deviation factor via
    # the chain rule; operators themselves change too, so compare against FD
    h = 1e-4
    tp = truncate(build_fluxonium(replace(dev, ej=dev.ej + h), 60), 3)
    tm = truncate(build_fluxonium(replace(dev, ej=dev.ej - h), 60), 3)
    assert np.max(np.abs((tp.h_d - tm.h_d) / (2 * h) - scaled.dh_d)) < 1e-8
    assert not np.allclose(scaled.dh_d, base.dh_d)
