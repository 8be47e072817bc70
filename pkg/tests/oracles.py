"""Reference implementations used as test oracles.

Nothing here imports the package's simulator: gates are rebuilt from their
textbook matrices, embedded into the full register with explicit Kronecker
products or index loops, and multiplied as dense 2^n x 2^n matrices. Noise is
applied as explicit Kraus maps on a dense density matrix. Slow on purpose;
only meant for n <= 6 or so.
"""
from __future__ import annotations

import cmath
import math
from functools import reduce

import numpy as np

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
HAD = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)
PAULIS = {"I": I2, "X": X, "Y": Y, "Z": Z}


def _sqrt_pauli(p: np.ndarray) -> np.ndarray:
    # principal square root via eigendecomposition, independent of any closed form
    w, v = np.linalg.eigh(p)
    return v @ np.diag(np.sqrt(w.astype(complex))) @ v.conj().T


W = (X + Y) / math.sqrt(2)


def one_qubit(name: str, params=()) -> np.ndarray:
    if name == "H":
        return HAD
    if name in ("X", "Y", "Z"):
        return PAULIS[name]
    if name == "SX":
        return _sqrt_pauli(X)
    if name == "SY":
        return _sqrt_pauli(Y)
    if name == "SW":
        return _sqrt_pauli(W)
    raise KeyError(name)


def two_qubit(name: str, params=()) -> np.ndarray:
    if name == "CZ":
        return np.diag([1, 1, 1, -1]).astype(complex)
    if name == "CNOT":
        return np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
    if name == "ZZ":
        (a,) = params
        zz = np.kron(Z, Z)
        # exp(-i a/2 ZZ) through the matrix exponential series of a diagonal
        return np.diag(np.exp(-0.5j * a * np.diag(zz)))
    if name == "FSIM":
        theta, phi = params
        c, s = math.cos(theta), math.sin(theta)
        return np.array(
            [[1, 0, 0, 0], [0, c, -1j * s, 0], [0, -1j * s, c, 0], [0, 0, 0, cmath.exp(-1j * phi)]],
            dtype=complex,
        )
    raise KeyError(name)


def embed_one(u: np.ndarray, q: int, n: int) -> np.ndarray:
    """Qubit 0 is the leftmost Kronecker factor (most significant bit)."""
    mats = [u if k == q else I2 for k in range(n)]
    return reduce(np.kron, mats)


def embed_two(u: np.ndarray, a: int, b: int, n: int) -> np.ndarray:
    """Dense embedding of a 4x4 gate on ordered qubits (a, b) by index loops."""
    dim = 1 << n
    out = np.zeros((dim, dim), dtype=complex)
    bit = lambda x, q: (x >> (n - 1 - q)) & 1
    for col in range(dim):
        ja = bit(col, a)
        jb = bit(col, b)
        rest = col & ~((1 << (n - 1 - a)) | (1 << (n - 1 - b)))
        for ia in (0, 1):
            for ib in (0, 1):
                row = rest | (ia << (n - 1 - a)) | (ib << (n - 1 - b))
                out[row, col] = u[2 * ia + ib, 2 * ja + jb]
    return out


def dphase(theta: float, qubits, n: int) -> np.ndarray:
    """diag exp(i theta (z . x mod 2)) with z the indicator of ``qubits``."""
    diag = np.empty(1 << n, dtype=complex)
    for x in range(1 << n):
        par = sum((x >> (n - 1 - q)) & 1 for q in qubits) % 2
        diag[x] = cmath.exp(1j * theta * par)
    return np.diag(diag)


def gate_unitary(name: str, qubits, params, n: int) -> np.ndarray:
    if name == "DPHASE":
        return dphase(params[0], qubits, n)
    if len(qubits) == 1:
        return embed_one(one_qubit(name, params), qubits[0], n)
    return embed_two(two_qubit(name, params), qubits[0], qubits[1], n)


def layer_unitary(layer, n: int) -> np.ndarray:
    u = np.eye(1 << n, dtype=complex)
    for g in layer:
        u = gate_unitary(g.name, g.qubits, g.params, n) @ u
    return u


def circuit_unitary(c) -> np.ndarray:
    u = np.eye(1 << c.n_qubits, dtype=complex)
    for layer in c.layers:
        u = layer_unitary(layer, c.n_qubits) @ u
    return u


def statevector(c) -> np.ndarray:
    return circuit_unitary(c)[:, 0]


def pauli_channel_kraus(eps: float):
    """Single-qubit channel: I with 1-eps, each of X, Y, Z with eps/3."""
    return [math.sqrt(1 - eps) * I2] + [math.sqrt(eps / 3) * P for P in (X, Y, Z)]


def apply_kraus_one(rho: np.ndarray, kraus, q: int, n: int) -> np.ndarray:
    out = np.zeros_like(rho)
    for k in kraus:
        K = embed_one(k, q, n)
        out += K @ rho @ K.conj().T
    return out


def noisy_density(c, eps: float, layers: int | None = None) -> np.ndarray:
    """Density matrix after ``layers`` layers, Pauli noise on every qubit after each layer."""
    n = c.n_qubits
    psi0 = np.zeros(1 << n, dtype=complex)
    psi0[0] = 1
    rho = np.outer(psi0, psi0.conj())
    kraus = pauli_channel_kraus(eps)
    for layer in c.layers[: (len(c.layers) if layers is None else layers)]:
        U = layer_unitary(layer, n)
        rho = U @ rho @ U.conj().T
        if eps > 0:
            for q in range(n):
                rho = apply_kraus_one(rho, kraus, q, n)
    return rho


def fidelity(psi: np.ndarray, rho: np.ndarray) -> float:
    return float(np.real(psi.conj() @ rho @ psi))


def linear_xeb_expectation(p_ideal: np.ndarray, q_sampler: np.ndarray) -> float:
    """E_{x ~ q}[2^n p(x)] - 1 computed exactly from two distributions."""
    return float(len(p_ideal) * np.dot(p_ideal, q_sampler) - 1.0)


def pauli_string_matrix(word: str) -> np.ndarray:
    return reduce(np.kron, [PAULIS[ch] for ch in word])
