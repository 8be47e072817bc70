"""Statevector simulation, Born sampling and depolarizing-noise trajectories.

States are kept as batches of shape ``(B, 2**n)`` so many trajectories are
evolved together. Noise is drawn up front for the whole batch, so results do
not depend on how the batch is chunked.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .circuit import Circuit, Gate

DEFAULT_MAX_QUBITS = 24
CAP_ENV = "RCSLAB_MAX_QUBITS"
# complex128 entries per batch chunk (~64 MB)
CHUNK_ENTRIES = 1 << 22


class ResourceLimitError(RuntimeError):
    """The requested simulation exceeds the qubit cap."""


def max_qubits() -> int:
    return int(os.environ.get(CAP_ENV, DEFAULT_MAX_QUBITS))


def check_cap(n: int) -> None:
    cap = max_qubits()
    if n > cap:
        raise ResourceLimitError(f"n={n} exceeds the statevector cap of {cap} qubits (set {CAP_ENV})")


# ------------------------------------------------------------------ gates

_S2 = 1 / math.sqrt(2)
_I2 = np.eye(2, dtype=complex)
PAULI = {
    "I": _I2,
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def _sqrt_involution(p: np.ndarray) -> np.ndarray:
    return 0.5 * (1 + 1j) * _I2 + 0.5 * (1 - 1j) * p


_ONE_QUBIT = {
    "H": np.array([[1, 1], [1, -1]], dtype=complex) * _S2,
    "SX": _sqrt_involution(PAULI["X"]),
    "SY": _sqrt_involution(PAULI["Y"]),
    "SW": _sqrt_involution((PAULI["X"] + PAULI["Y"]) * _S2),
    "X": PAULI["X"],
    "Y": PAULI["Y"],
    "Z": PAULI["Z"],
}


def gate_matrix(g: Gate) -> np.ndarray:
    """Unitary on ``g.qubits`` in the order given (first qubit most significant)."""
    if g.name in _ONE_QUBIT:
        return _ONE_QUBIT[g.name]
    if g.name == "FSIM":
        theta, phi = g.params
        c, s = math.cos(theta), math.sin(theta)
        return np.array(
            [[1, 0, 0, 0], [0, c, -1j * s, 0], [0, -1j * s, c, 0], [0, 0, 0, np.exp(-1j * phi)]],
            dtype=complex,
        )
    if g.name == "CZ":
        return np.diag([1, 1, 1, -1]).astype(complex)
    if g.name == "CNOT":
        return np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
    if g.name == "ZZ":
        (a,) = g.params
        return np.diag(np.exp(-0.5j * a * np.array([1, -1, -1, 1]))).astype(complex)
    if g.name == "DPHASE":
        k = len(g.qubits)
        idx = np.arange(1 << k)
        parity = np.array([bin(i).count("1") & 1 for i in idx])
        return np.diag(np.exp(1j * g.params[0] * parity)).astype(complex)
    raise ValueError(f"no matrix for gate {g.name}")


@lru_cache(maxsize=4096)
def _diagonal(g: Gate, n: int) -> np.ndarray | None:
    """Full-register diagonal for diagonal gates, else None."""
    if g.name not in ("CZ", "ZZ", "DPHASE", "Z"):
        return None
    idx = np.arange(1 << n, dtype=np.int64)
    bits = [(idx >> (n - 1 - q)) & 1 for q in g.qubits]
    if g.name == "DPHASE":
        parity = np.bitwise_xor.reduce(bits, axis=0) if len(bits) > 1 else bits[0]
        return np.exp(1j * g.params[0] * parity)
    if g.name == "Z":
        return 1 - 2 * bits[0].astype(complex)
    if g.name == "CZ":
        return 1 - 2 * (bits[0] & bits[1]).astype(complex)
    parity = bits[0] ^ bits[1]
    return np.exp(-0.5j * g.params[0] * (1 - 2 * parity))


def _apply_1q(psi: np.ndarray, u: np.ndarray, q: int, n: int) -> np.ndarray:
    b = psi.shape[0]
    if q == n - 1:
        return (psi.reshape(-1, 2) @ u.T).reshape(b, -1)
    return np.matmul(u, psi.reshape(b << q, 2, 1 << (n - q - 1))).reshape(b, -1)


def _apply_2q(psi: np.ndarray, u: np.ndarray, q1: int, q2: int, n: int) -> np.ndarray:
    if q1 > q2:
        perm = [0, 2, 1, 3]
        u = u[np.ix_(perm, perm)]
        q1, q2 = q2, q1
    b = psi.shape[0]
    if q2 == q1 + 1:
        return np.matmul(u, psi.reshape(b << q1, 4, 1 << (n - q2 - 1))).reshape(b, -1)
    mid, rest = 1 << (q2 - q1 - 1), 1 << (n - q2 - 1)
    v = psi.reshape(b << q1, 2, mid, 2, rest)
    w = np.moveaxis(v, 3, 2).reshape(b << q1, 4, mid * rest)
    w = np.matmul(u, w).reshape(b << q1, 2, 2, mid, rest)
    return np.ascontiguousarray(np.moveaxis(w, 2, 3)).reshape(b, -1)


_MODES = {
    "u": lambda u: u,
    "adjoint": lambda u: u.conj().T,
    "conj": lambda u: u.conj(),
    "transpose": lambda u: u.T,
}


def apply_gate(psi: np.ndarray, g: Gate, n: int, adjoint: bool = False, mode: str | None = None) -> np.ndarray:
    """Apply ``g`` to every row of a ``(B, 2**n)`` batch; may reuse ``psi``'s memory.

    ``mode`` picks the matrix actually applied: ``"u"``, ``"adjoint"``,
    ``"conj"`` or ``"transpose"``; ``adjoint=True`` is shorthand.
    """
    mode = mode or ("adjoint" if adjoint else "u")
    diag = _diagonal(g, n)
    if diag is not None:
        psi *= diag.conj() if mode in ("adjoint", "conj") else diag
        return psi
    u = _MODES[mode](gate_matrix(g))
    if len(g.qubits) == 1:
        return _apply_1q(psi, u, g.qubits[0], n)
    return _apply_2q(psi, u, g.qubits[0], g.qubits[1], n)


def apply_pauli_choices(psi: np.ndarray, choices: np.ndarray, n: int) -> None:
    """Apply per-row Paulis; ``choices[b, q]`` in {0: I, 1: X, 2: Y, 3: Z}."""
    for q in range(n):
        col = choices[:, q]
        if not col.any():
            continue
        v = psi.reshape(psi.shape[0], 1 << q, 2, 1 << (n - q - 1))
        zrows = np.flatnonzero((col == 2) | (col == 3))
        if zrows.size:
            v[zrows, :, 1, :] *= -1
        xrows = np.flatnonzero((col == 1) | (col == 2))
        if xrows.size:
            tmp = v[xrows, :, 0, :].copy()
            v[xrows, :, 0, :] = v[xrows, :, 1, :]
            v[xrows, :, 1, :] = tmp
        yrows = np.flatnonzero(col == 2)
        if yrows.size:
            v[yrows] *= 1j


# ----------------------------------------------------------------- types


@dataclass(frozen=True)
class NoiseModel:
    """Single-qubit depolarizing noise after every layer on every qubit.

    With probability ``epsilon`` a qubit receives X, Y or Z (uniformly).
    ``measurement_flip`` flips each measured bit independently when
    ``include_measurement_flip`` is set.
    """

    epsilon: float = 0.0
    include_measurement_flip: bool = False
    measurement_flip: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if not 0.0 <= self.measurement_flip <= 1.0:
            raise ValueError(f"flip probability must lie in [0, 1], got {self.measurement_flip}")

    @property
    def flip(self) -> float:
        return self.measurement_flip if self.include_measurement_flip else 0.0


NOISELESS = NoiseModel(0.0)


@dataclass(frozen=True)
class Estimate:
    value: float
    std_error: float
    n_samples: int

    @classmethod
    def from_samples(cls, values) -> "Estimate":
        values = np.asarray(values, dtype=float)
        k = values.size
        if k < 1:
            raise ValueError("cannot estimate from zero samples")
        se = float(values.std(ddof=1) / math.sqrt(k)) if k > 1 else 0.0
        return cls(float(values.mean()), se, int(k))


@dataclass
class Statevector:
    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if self.amplitudes.size != 1 << self.n_qubits:
            raise ValueError(f"expected {1 << self.n_qubits} amplitudes, got {self.amplitudes.size}")

    @property
    def probabilities(self) -> np.ndarray:
        p = np.abs(self.amplitudes) ** 2
        return p / p.sum()

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))


@dataclass
class SampleSet:
    """Measured bitstrings stored as integers (qubit 0 = most significant bit)."""

    n_qubits: int
    outcomes: np.ndarray
    circuit_id: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.outcomes = np.asarray(self.outcomes, dtype=np.int64).reshape(-1)
        if self.outcomes.size and (self.outcomes.min() < 0 or self.outcomes.max() >> self.n_qubits):
            raise ValueError(f"outcome wider than {self.n_qubits} bits")

    def __len__(self) -> int:
        return self.outcomes.size

    def bitstrings(self) -> list[str]:
        return [format(int(x), f"0{self.n_qubits}b") for x in self.outcomes]

    def bits(self) -> np.ndarray:
        """``(k, n)`` array of 0/1, column q = qubit q."""
        shifts = np.arange(self.n_qubits - 1, -1, -1, dtype=np.int64)
        return ((self.outcomes[:, None] >> shifts) & 1).astype(np.int8)


def bitstring_to_int(s: str, n: int | None = None) -> int:
    if n is not None and len(s) != n:
        raise ValueError(f"bitstring {s!r} has {len(s)} bits, expected {n}")
    if not s or set(s) - {"0", "1"}:
        raise ValueError(f"not a bitstring: {s!r}")
    return int(s, 2)


# ------------------------------------------------------------- simulation


def zero_batch(n: int, batch: int = 1) -> np.ndarray:
    psi = np.zeros((batch, 1 << n), dtype=complex)
    psi[:, 0] = 1.0
    return psi


def _ops(c: Circuit, inverse: bool = False) -> list[tuple[tuple[Gate, ...], bool]]:
    if not inverse:
        return [(layer, False) for layer in c.layers]
    return [(tuple(reversed(layer)), True) for layer in reversed(c.layers)]


def _evolve(psi, ops, n, noise_choices=None) -> np.ndarray:
    """Apply ``ops`` (layer, adjoint) in order; after layer ``l`` apply ``noise_choices[:, l]``."""
    for li, (layer, adj) in enumerate(ops):
        for g in layer:
            psi = apply_gate(psi, g, n, adjoint=adj)
        if noise_choices is not None:
            apply_pauli_choices(psi, noise_choices[:, li], n)
    return psi


def simulate(c: Circuit) -> Statevector:
    """Ideal output state ``U_C |0...0>``."""
    check_cap(c.n_qubits)
    psi = _evolve(zero_batch(c.n_qubits), _ops(c), c.n_qubits)
    return Statevector(c.n_qubits, psi[0])


def probabilities(c: Circuit) -> np.ndarray:
    return np.abs(simulate(c).amplitudes) ** 2


def probability(c: Circuit, x: str | int) -> float:
    """Born probability ``|<x|C|0>|^2``; ``x`` is a bitstring of exactly n bits or an int."""
    n = c.n_qubits
    if isinstance(x, str):
        idx = bitstring_to_int(x, n)
    else:
        idx = int(x)
        if idx < 0 or idx >> n:
            raise ValueError(f"outcome {idx} wider than n={n} bits")
    return float(abs(simulate(c).amplitudes[idx]) ** 2)


def sample_probs(p: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF draws from a probability vector."""
    cdf = np.cumsum(p)
    cdf /= cdf[-1]
    return np.minimum(np.searchsorted(cdf, rng.random(k), side="right"), p.size - 1)


def flip_bits(outcomes: np.ndarray, n: int, prob: float, rng: np.random.Generator) -> np.ndarray:
    if prob <= 0:
        return outcomes
    flips = rng.random((outcomes.size, n)) < prob
    weights = 1 << np.arange(n - 1, -1, -1, dtype=np.int64)
    return outcomes ^ (flips.astype(np.int64) @ weights)


def _sample_rows(cdf: np.ndarray, shots: int, rng: np.random.Generator) -> np.ndarray:
    """``shots`` draws per row of a row-normalised CDF matrix, row-major order."""
    rows, dim = cdf.shape
    offset = np.arange(rows)[:, None]
    u = rng.random((rows, shots)) + offset
    flat = (cdf + offset).reshape(-1)
    idx = np.searchsorted(flat, u.reshape(-1), side="right") - np.repeat(offset[:, 0], shots) * dim
    return np.clip(idx, 0, dim - 1)


def sample(psi: Statevector, k: int, rng: np.random.Generator, circuit_id: str = "") -> SampleSet:
    """``k`` i.i.d. Born-rule draws from ``psi``."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    out = sample_probs(np.abs(psi.amplitudes) ** 2, k, rng)
    return SampleSet(psi.n_qubits, out, circuit_id, {"k": k})


def draw_noise(noise: NoiseModel, batch: int, n_layers: int, n: int, rng: np.random.Generator) -> np.ndarray | None:
    """Pauli choices of shape ``(batch, n_layers, n)``, or None when noiseless."""
    if noise.epsilon <= 0 or n_layers == 0:
        return None
    hit = rng.random((batch, n_layers, n)) < noise.epsilon
    which = rng.integers(1, 4, size=(batch, n_layers, n), dtype=np.int8)
    return np.where(hit, which, 0).astype(np.int8)


def _chunks(total: int, n: int) -> Iterable[slice]:
    step = max(1, CHUNK_ENTRIES >> n)
    for start in range(0, total, step):
        yield slice(start, min(total, start + step))


def trajectory_batches(
    c: Circuit,
    noise: NoiseModel,
    n_traj: int,
    rng: np.random.Generator,
    inverse_too: bool = False,
):
    """Yield ``(slice, states)`` for ``n_traj`` noisy trajectories in memory-bounded chunks."""
    check_cap(c.n_qubits)
    n = c.n_qubits
    ops = _ops(c) + (_ops(c, inverse=True) if inverse_too else [])
    choices = draw_noise(noise, n_traj, len(ops), n, rng)
    for sl in _chunks(n_traj, n):
        psi = zero_batch(n, sl.stop - sl.start)
        psi = _evolve(psi, ops, n, None if choices is None else choices[sl])
        yield sl, psi


def noisy_trajectory(c: Circuit, noise: NoiseModel, rng: np.random.Generator) -> Statevector:
    """One pure-state trajectory of the depolarized circuit."""
    (_, psi), = trajectory_batches(c, noise, 1, rng)
    return Statevector(c.n_qubits, psi[0])


def noisy_states(c: Circuit, noise: NoiseModel, n_traj: int, rng: np.random.Generator) -> np.ndarray:
    """All trajectories at once as a ``(n_traj, 2**n)`` array.

    Trajectories sharing a noise pattern (e.g. all error-free ones) are
    simulated once and copied.
    """
    check_cap(c.n_qubits)
    n = c.n_qubits
    ops = _ops(c)
    choices = draw_noise(noise, n_traj, len(ops), n, rng)
    if choices is None:
        psi = _evolve(zero_batch(n), ops, n)
        return np.repeat(psi, n_traj, axis=0)
    flat = choices.reshape(n_traj, -1)
    uniq, inverse = np.unique(flat, axis=0, return_inverse=True)
    uniq = uniq.reshape(-1, len(ops), n)
    states = np.empty((uniq.shape[0], 1 << n), dtype=complex)
    for sl in _chunks(uniq.shape[0], n):
        states[sl] = _evolve(zero_batch(n, sl.stop - sl.start), ops, n, uniq[sl])
    return states[inverse.reshape(-1)]


def sample_noisy(
    c: Circuit,
    noise: NoiseModel,
    k: int,
    rng: np.random.Generator,
    shots_per_traj: int = 1,
) -> SampleSet:
    """``k`` samples of the noisy circuit, ``shots_per_traj`` per trajectory."""
    if k < 1 or shots_per_traj < 1:
        raise ValueError("k and shots_per_traj must be >= 1")
    if noise.epsilon == 0.0:
        shots_per_traj = k  # every trajectory is the ideal state
    n_traj = -(-k // shots_per_traj)
    parts = []
    for _, psi in trajectory_batches(c, noise, n_traj, rng):
        p = np.abs(psi) ** 2
        cdf = np.cumsum(p, axis=1)
        cdf /= cdf[:, -1:]
        parts.append(_sample_rows(cdf, shots_per_traj, rng))
    out = np.concatenate(parts)[:k]
    out = flip_bits(out, c.n_qubits, noise.flip, rng)
    return SampleSet(
        c.n_qubits, out, c.id,
        {"eps": noise.epsilon, "traj": n_traj, "shots_per_traj": shots_per_traj},
    )


def estimate_fidelity(c: Circuit, noise: NoiseModel, n_traj: int, rng: np.random.Generator) -> Estimate:
    """Trajectory estimate of ``<C|rho_C|C>``."""
    if n_traj < 2:
        raise ValueError(f"n_traj must be >= 2, got {n_traj}")
    ideal = simulate(c).amplitudes
    vals = np.empty(n_traj)
    for sl, psi in trajectory_batches(c, noise, n_traj, rng):
        vals[sl] = np.abs(psi @ ideal.conj()) ** 2
    return Estimate.from_samples(vals)


def fidelity_profile(c: Circuit, noise: NoiseModel, n_traj: int, rng: np.random.Generator,
                     depths: Sequence[int]) -> list[Estimate]:
    """Fidelity of every prefix ``c.prefix(d)`` for ``d`` in ``depths`` from shared trajectories.

    One set of trajectories runs to the deepest prefix; the estimates at
    different depths are therefore correlated but each one is unbiased.
    """
    n = c.n_qubits
    check_cap(n)
    depths = sorted(set(int(d) for d in depths))
    if depths and depths[-1] > c.depth:
        raise ValueError(f"depth {depths[-1]} exceeds circuit depth {c.depth}")
    ops = _ops(c)[: depths[-1]]
    ideal = zero_batch(n)
    ideals = {}
    for li in range(depths[-1] + 1):
        if li in depths:
            ideals[li] = ideal[0].copy()
        if li < len(ops):
            ideal = _evolve(ideal, ops[li:li + 1], n)
    choices = draw_noise(noise, n_traj, len(ops), n, rng)
    vals = {d: np.empty(n_traj) for d in depths}
    for sl in _chunks(n_traj, n):
        psi = zero_batch(n, sl.stop - sl.start)
        for li in range(depths[-1] + 1):
            if li in vals:
                vals[li][sl] = np.abs(psi @ ideals[li].conj()) ** 2
            if li < len(ops):
                psi = _evolve(psi, ops[li:li + 1], n, None if choices is None else choices[sl, li:li + 1])
    return [Estimate.from_samples(vals[d]) for d in depths]


def loschmidt_echo(c: Circuit, noise: NoiseModel, n_traj: int, rng: np.random.Generator) -> Estimate:
    """Return probability to ``|0...0>`` after running ``C`` then ``C^dagger`` with noise throughout."""
    if n_traj < 1:
        raise ValueError(f"n_traj must be >= 1, got {n_traj}")
    vals = np.empty(n_traj)
    for sl, psi in trajectory_batches(c, noise, n_traj, rng, inverse_too=True):
        vals[sl] = np.abs(psi[:, 0]) ** 2
    return Estimate.from_samples(vals)


# ------------------------------------------------------- density matrices


def _depolarize(rho: np.ndarray, q: int, n: int, eps: float) -> np.ndarray:
    """Single-qubit depolarizing channel on qubit ``q`` of a ``(2**n, 2**n)`` matrix."""
    p = 4.0 * eps / 3.0
    lo, hi = 1 << q, 1 << (n - q - 1)
    v = rho.reshape(lo, 2, hi, lo, 2, hi)
    avg = 0.5 * (v[:, 0, :, :, 0, :] + v[:, 1, :, :, 1, :])
    v *= 1.0 - p
    v[:, 0, :, :, 0, :] += p * avg
    v[:, 1, :, :, 1, :] += p * avg
    return rho


def _apply_layer_rho(rho: np.ndarray, layer, n: int, adjoint: bool = False) -> np.ndarray:
    """``rho -> W rho W^dagger`` for each gate ``W`` (or its adjoint).

    Row-wise application of ``W^*`` maps ``M`` to ``M W^dagger``; doing it to
    ``rho`` and then to the Hermitian transpose of the result gives both sides.
    """
    mode = "transpose" if adjoint else "conj"
    for g in layer:
        for _ in range(2):
            rho = apply_gate(rho, g, n, mode=mode)
            rho = np.ascontiguousarray(rho.conj().T)
    return rho


def density_profile(c: Circuit, noise: NoiseModel, depths: Sequence[int] | None = None,
                    inverse_too: bool = False) -> dict[int, np.ndarray]:
    """Exact depolarized density matrix after each requested number of layers.

    Memory is ``16 * 4**n`` bytes, so the cap applies to ``2n``.
    """
    n = c.n_qubits
    check_cap(2 * n)
    ops = _ops(c) + (_ops(c, inverse=True) if inverse_too else [])
    depths = sorted(set(depths)) if depths is not None else [len(ops)]
    if depths and depths[-1] > len(ops):
        raise ValueError(f"depth {depths[-1]} exceeds {len(ops)} layers")
    rho = np.zeros((1 << n, 1 << n), dtype=complex)
    rho[0, 0] = 1.0
    out = {}
    for li in range(depths[-1] + 1):
        if li in depths:
            out[li] = rho.copy()
        if li < depths[-1]:
            layer, adj = ops[li]
            rho = _apply_layer_rho(rho, layer, n, adjoint=adj)
            if noise.epsilon > 0:
                for q in range(n):
                    rho = _depolarize(rho, q, n, noise.epsilon)
    return out


def density_matrix(c: Circuit, noise: NoiseModel) -> np.ndarray:
    return density_profile(c, noise)[c.depth]


# ------------------------------------------------------------ file format


def write_samples(ss: SampleSet, path) -> None:
    m = ss.meta
    header = (
        f"# circuit={ss.circuit_id or '-'} n={ss.n_qubits} seed={m.get('seed', '-')} "
        f"eps={m.get('eps', 0.0)} traj={m.get('traj', 0)}"
    )
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for s in ss.bitstrings():
            fh.write(s + "\n")


def parse_header(line: str) -> dict:
    if not line.startswith("#"):
        raise ValueError(f"expected a '# key=value' header, got {line!r}")
    out = {}
    for tok in line[1:].split():
        key, sep, val = tok.partition("=")
        if not sep:
            raise ValueError(f"malformed header token {tok!r}")
        out[key] = val
    return out


def read_samples(path) -> SampleSet:
    with open(path) as fh:
        lines = [l.strip() for l in fh if l.strip()]
    if not lines:
        raise ValueError(f"{path}: empty sample file")
    head = parse_header(lines[0])
    if "n" not in head:
        raise ValueError(f"{path}: header lacks n=")
    n = int(head["n"])
    outcomes = []
    for i, s in enumerate(lines[1:], start=2):
        try:
            outcomes.append(bitstring_to_int(s, n))
        except ValueError as e:
            raise ValueError(f"{path}:{i}: {e}") from None
    meta = {}
    for key in ("seed", "eps", "traj"):
        if head.get(key, "-") != "-":
            meta[key] = float(head[key]) if key == "eps" else int(head[key])
    circuit_id = head.get("circuit", "")
    return SampleSet(n, outcomes, "" if circuit_id == "-" else circuit_id, meta)
