"""Truncated Fock-space oracle for the two-mode (signal + LO) algebra.

Everything here is brute force on purpose: operators are explicit matrices
and expectation values are computed directly, so the module serves as an
independent cross-check for the analytic formulas used elsewhere.

Mode ordering is signal (x) LO; basis index (n_s, n_lo) flattens as
``n_s * dim_lo + n_lo``.
"""

from __future__ import annotations

import math

import numpy as np

from cvqkd.params import ParameterError


def destroy(dim: int) -> np.ndarray:
    """Single-mode annihilation operator truncated to ``dim`` levels."""
    a = np.zeros((dim, dim), dtype=complex)
    for n in range(1, dim):
        a[n - 1, n] = math.sqrt(n)
    return a


def coherent(amp: complex, dim: int) -> np.ndarray:
    """Truncated coherent state |amp>, renormalized on the cut space."""
    n = np.arange(dim)
    log_fact = np.cumsum(np.log(np.maximum(n, 1)))
    with np.errstate(divide="ignore"):
        log_amp = n * np.log(complex(amp)) if amp != 0 else np.where(n == 0, 0, -np.inf)
    vec = np.exp(log_amp - 0.5 * log_fact - 0.5 * abs(amp) ** 2)
    vec = np.asarray(vec, dtype=complex)
    return vec / np.linalg.norm(vec)


class FockOracle:
    """Explicit two-mode Stokes operators on a truncated Fock space."""

    def __init__(self, dim_signal: int, dim_lo: int):
        if dim_signal < 2 or dim_lo < 2:
            raise ParameterError("truncation dimensions must be >= 2")
        self.dim_signal = dim_signal
        self.dim_lo = dim_lo

        a = destroy(dim_signal)
        b = destroy(dim_lo)
        i_s = np.eye(dim_signal)
        i_lo = np.eye(dim_lo)

        self.a_sig = np.kron(a, i_lo)
        self.a_lo = np.kron(i_s, b)
        self.n_sig = self.a_sig.conj().T @ self.a_sig
        self.n_lo = self.a_lo.conj().T @ self.a_lo

        adl = self.a_lo.conj().T
        ads = self.a_sig.conj().T
        self.s1 = self.n_lo - self.n_sig
        self.s2 = adl @ self.a_sig + ads @ self.a_lo
        self.s3 = 1j * (ads @ self.a_lo - adl @ self.a_sig)
        self.s0 = self.n_sig + self.n_lo

    def two_mode_coherent(self, sig_amp: complex, lo_amp: complex) -> np.ndarray:
        return np.kron(coherent(sig_amp, self.dim_signal),
                       coherent(lo_amp, self.dim_lo))

    def expect(self, op: np.ndarray, vec: np.ndarray) -> complex:
        return complex(vec.conj() @ (op @ vec))

    def matrix_element(self, bra: np.ndarray, op: np.ndarray,
                       ket: np.ndarray) -> complex:
        return complex(bra.conj() @ (op @ ket))

    def safe_mask(self) -> np.ndarray:
        """Boolean mask selecting basis states in the bottom half of both
        truncated dimensions, where ladder-operator products are exact."""
        ns = np.repeat(np.arange(self.dim_signal), self.dim_lo)
        nl = np.tile(np.arange(self.dim_lo), self.dim_signal)
        return (ns < self.dim_signal // 2) & (nl < self.dim_lo // 2)


def verify_stokes_identity(oracle: FockOracle, lo_amp: float,
                           sig_amp: float) -> float:
    """Max matrix-element residual of S2^2 + S3^2 - 2(S0 + 2 n_LO n_s) on
    the truncation-safe subspace.  Should vanish to rounding error."""
    if lo_amp ** 2 + 4 > oracle.dim_lo:
        raise ParameterError("lo_amp too large for the LO truncation")
    if sig_amp ** 2 + 4 > oracle.dim_signal:
        raise ParameterError("sig_amp too large for the signal truncation")
    lhs = oracle.s2 @ oracle.s2 + oracle.s3 @ oracle.s3
    rhs = 2.0 * (oracle.s0 + 2.0 * (oracle.n_lo @ oracle.n_sig))
    diff = lhs - rhs
    mask = oracle.safe_mask()
    return float(np.max(np.abs(diff[np.ix_(mask, mask)])))


def commutator_truncation_residual(dim: int) -> float:
    """Residual of [a, a+] - 1 away from the top Fock level."""
    a = destroy(dim)
    comm = a @ a.conj().T - a.conj().T @ a
    return float(np.max(np.abs((comm - np.eye(dim))[:dim - 1, :dim - 1])))


def source_block_states(alpha: float, eta: float):
    """Conditional signal-mode components of the entanglement-based source
    after pure loss ``eta``.

    The source superposes |alpha> and |-alpha> against an orthogonal label
    qubit; pure loss maps the cross term |a><-a| to
    exp(-2 (1-eta) alpha^2) |b><-b| with b = sqrt(eta) alpha.

    Returns ``(b, kappa)``.
    """
    if not 0.0 < eta <= 1.0:
        raise ParameterError(f"eta must be in (0, 1], got {eta}")
    b = math.sqrt(eta) * alpha
    kappa = math.exp(-2.0 * (1.0 - eta) * alpha ** 2)
    return b, kappa


def evm_from_source(alpha: float, eta: float, n_lo: float,
                    dim_signal: int = 16, dim_lo: int = 64,
                    use_s1_bound: bool = False) -> np.ndarray:
    """6x6 expectation-value matrix of the lossy entanglement-based source,
    computed entry by entry from truncated Fock operators.

    Entries are LO-normalized.  With ``use_s1_bound`` the imaginary part of
    the S2*S3 entries is replaced by the LO-monitor lower bound instead of
    the exact <S1>, mirroring what a receiver without an S1 measurement can
    assert.
    """
    lo_amp = math.sqrt(n_lo)
    if lo_amp ** 2 + 6 * lo_amp > dim_lo:
        raise ParameterError("dim_lo too small for the requested n_lo")
    orc = FockOracle(dim_signal, dim_lo)
    b, kappa = source_block_states(alpha, eta)

    psi = {0: orc.two_mode_coherent(b, lo_amp),
           1: orc.two_mode_coherent(-b, lo_amp)}
    # weight of the B-mode operator <j|rho|i> for each (i, j) qubit block
    weight = {(0, 0): 0.5, (1, 1): 0.5, (0, 1): 0.5 * kappa, (1, 0): 0.5 * kappa}

    rt = math.sqrt(n_lo)
    ops = orc
    s2s3 = ops.s2 @ ops.s3
    s3s2 = ops.s3 @ ops.s2
    sym = 0.5 * (s2s3 + s3s2)

    chi = np.zeros((6, 6), dtype=complex)
    for (i, j), w in weight.items():
        # block (i, j) holds <|i><j| (x) O> = w * <psi_i| O |psi_j>
        bra, ket = psi[i], psi[j]

        def me(op):
            return w * ops.matrix_element(bra, op, ket)

        one = me(np.eye(dim_signal * dim_lo, dtype=complex))
        m2 = me(ops.s2) / rt
        m3 = me(ops.s3) / rt
        q2 = me(ops.s2 @ ops.s2) / n_lo
        q3 = me(ops.s3 @ ops.s3) / n_lo
        c = me(sym) / n_lo
        if use_s1_bound:
            # per-block bound from the measured second moments; only defined
            # for the diagonal (directly measured) blocks
            if i == j:
                sum_norm = (q2 + q3) / w
                s1 = w * (1.0 + n_lo - sum_norm * n_lo / 2.0) / n_lo
            else:
                s1 = me(ops.s1) / n_lo
        else:
            s1 = me(ops.s1) / n_lo

        block = np.array([
            [one, m2, m3],
            [m2, q2, c + 1j * s1],
            [m3, c - 1j * s1, q3],
        ], dtype=complex)
        chi[3 * i:3 * i + 3, 3 * j:3 * j + 3] = block
    return chi
