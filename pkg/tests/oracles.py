"""Reference computations that do not reuse package code paths.

Each oracle re-derives a quantity from first principles (closed forms,
scipy quadrature, dense linear algebra) so tests can compare against it.
"""

import math

import numpy as np
from scipy import integrate, linalg, special


# -- operators in the canonical ordering |1..n>, |-1..-n> -----------------------------

def hx_block(n):
    eye = np.eye(n)
    return np.block([[eye, eye], [eye, -eye]]) / math.sqrt(2)


def hy_block(n):
    eye = np.eye(n)
    return np.block([[eye, 1j * eye], [1j * eye, eye]]) / math.sqrt(2)


def phase_block(n, theta):
    return np.diag(np.r_[np.ones(n), np.full(n, np.exp(1j * theta))])


def mzi_weights(phase):
    """Amplitudes into (unaltered, arm) ports of a balanced interferometer."""
    return (1 + np.exp(1j * phase)) / 2, (1 - np.exp(1j * phase)) / 2


# -- sigma from the block algebra -----------------------------------------------------

def marginal_map(rho, n):
    """(mu1, mu2, mu3, nu1) of ``rho`` under identity, H_x, H_y with U rho U^dag."""
    out = []
    for u in (np.eye(2 * n), hx_block(n), hy_block(n)):
        r = u @ rho @ u.conj().T
        out.append(r[:n, :n])
    out.append(rho[n:, n:])
    return out


def solve_blocks(mu1, mu2, mu3, nu1):
    """Recover (rho+, rho-, sigma) by least squares on the real-linear marginal map.

    The map from the real parameters of a Hermitian ``2n x 2n`` matrix to
    the real and imaginary parts of the four marginals is assembled column
    by column from basis matrices, then inverted with ``lstsq``.
    """
    n = mu1.shape[0]
    d = 2 * n
    basis = []
    for i in range(d):
        for j in range(d):
            e = np.zeros((d, d), dtype=complex)
            if i == j:
                e[i, i] = 1
            elif i < j:
                e[i, j] = e[j, i] = 1
            else:
                e[j, i], e[i, j] = 1j, -1j
            basis.append(e)
    cols = []
    for e in basis:
        ms = marginal_map(e, n)
        cols.append(np.concatenate([np.r_[m.real.ravel(), m.imag.ravel()] for m in ms]))
    a = np.array(cols).T
    b = np.concatenate([np.r_[m.real.ravel(), m.imag.ravel()] for m in (mu1, mu2, mu3, nu1)])
    coef, *_ = np.linalg.lstsq(a, b, rcond=None)
    rho = sum(c * e for c, e in zip(coef, basis))
    return rho[:n, :n], rho[n:, n:], rho[:n, n:], np.linalg.matrix_rank(a)


# -- LG fields and kernels ------------------------------------------------------------

def lg_radial(ell, r, w0=1.0):
    a = abs(ell)
    return math.sqrt(2 / (math.pi * math.factorial(a) * w0 ** 2)) * (math.sqrt(2) * r / w0) ** a \
        * np.exp(-(r / w0) ** 2)


def lg_closed_form(ell, x, y, w0=1.0):
    r, phi = np.hypot(x, y), np.arctan2(y, x)
    return lg_radial(ell, r, w0) * np.exp(1j * ell * phi)


def hankel_kernel(ell1, ell2, kx, ky, w0=1.0):
    """``F[f_l1 f_l2^*]`` at one frequency point via a Hankel-transform quadrature.

    For ``g = R(r) exp(i m phi)`` the 2D transform with ``exp(-2 pi i k.x)`` is
    ``2 pi (-i)^m exp(i m phi_k) int R(r) J_m(2 pi k r) r dr``.
    """
    m = ell1 - ell2
    k, phik = math.hypot(kx, ky), math.atan2(ky, kx)
    integrand = lambda r: lg_radial(ell1, r, w0) * lg_radial(ell2, r, w0) * special.jv(m, 2 * math.pi * k * r) * r
    val, _ = integrate.quad(integrand, 0, 12 * w0, limit=400, epsabs=1e-14, epsrel=1e-12)
    return 2 * math.pi * (-1j) ** m * np.exp(1j * m * phik) * val


# -- state metrics ----------------------------------------------------------------------

def fidelity_sqrtm(rho, sigma):
    s = linalg.sqrtm(rho)
    return float(np.real(np.trace(linalg.sqrtm(s @ sigma @ s))) ** 2)


def random_density(dim, rank, rng):
    a = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


def random_pure(dim, rng):
    psi = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    psi /= np.linalg.norm(psi)
    return np.outer(psi, psi.conj())
