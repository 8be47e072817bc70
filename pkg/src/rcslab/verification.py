"""Bell-sampling purity, graph-state symmetry fidelity and planted-secret IQP checks."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .circuit import Circuit, GraphSpec, build_iqp, build_rotated_graph_state
from .simulator import (
    PAULI,
    Estimate,
    NoiseModel,
    SampleSet,
    _apply_1q,
    _ONE_QUBIT,
    _sample_rows,
    check_cap,
    noisy_states,
    parse_header,
    probabilities,
    sample_probs,
    simulate,
)

BELL_LABELS = "IXYZ"


class IndeterminateResultError(ValueError):
    """The estimate is statistically consistent with a value where the result is undefined."""


# ------------------------------------------------------------ Bell sampling


@dataclass
class BellSampleSet:
    """Pairwise Bell outcomes; ``labels[k, q]`` indexes ``"IXYZ"`` for pair ``(q, q+n)``."""

    n_qubits: int
    labels: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int8).reshape(-1, self.n_qubits)
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() > 3):
            raise ValueError("Bell labels must be codes 0..3")

    def __len__(self) -> int:
        return self.labels.shape[0]

    def strings(self) -> list[str]:
        return ["".join(BELL_LABELS[c] for c in row) for row in self.labels]


def _walsh_hadamard(a: np.ndarray, axis: int) -> np.ndarray:
    """Unnormalised Walsh-Hadamard transform along ``axis`` (length a power of two)."""
    a = np.moveaxis(a, axis, -1)
    shape = a.shape
    size = shape[-1]
    h = 1
    a = a.copy()
    while h < size:
        v = a.reshape(*shape[:-1], size // (2 * h), 2, h)
        x, y = v[..., 0, :].copy(), v[..., 1, :]
        v[..., 0, :] += y
        v[..., 1, :] = x - y
        h *= 2
    return np.moveaxis(a.reshape(shape), -1, axis)


def bell_probabilities(a: np.ndarray, b: np.ndarray, n: int) -> np.ndarray:
    """Bell-basis outcome probabilities of ``|a> (x) |b>`` for batches of state pairs.

    After CNOT(q, q+n) and H(q) the amplitude of first-copy bits ``u`` and
    second-copy bits ``y`` is ``2^{-n/2} sum_x (-1)^{u.x} a(x) b(x^y)``.
    Returns ``(B, 2**n, 2**n)`` indexed ``[batch, u, y]``.
    """
    dim = 1 << n
    x = np.arange(dim)
    m = a[:, :, None] * b[:, x[:, None] ^ x[None, :]]
    amp = _walsh_hadamard(m, axis=1) / math.sqrt(dim)
    return np.abs(amp) ** 2


def _labels_from_uy(u: np.ndarray, y: np.ndarray, n: int) -> np.ndarray:
    shifts = np.arange(n - 1, -1, -1)
    ub = (u[:, None] >> shifts) & 1
    yb = (y[:, None] >> shifts) & 1
    # (u, y): (0,0)->I, (0,1)->X, (1,1)->Y, (1,0)->Z
    table = np.array([[0, 1], [3, 2]], dtype=np.int8)
    return table[ub, yb]


def _sample_bell_rows(a: np.ndarray, b: np.ndarray, n: int, rng: np.random.Generator):
    """One exact Bell-basis draw ``(u, y)`` per row pair, without the ``4^n`` table.

    The second-copy bits ``y`` have marginal ``sum_x |a(x)|^2 |b(x^y)|^2``, an
    XOR convolution done with Walsh-Hadamard transforms; given ``y`` the
    first-copy bits follow ``|WHT(a(x) b(x^y))|^2``.
    """
    dim = 1 << n
    pa, pb = np.abs(a) ** 2, np.abs(b) ** 2
    py = _walsh_hadamard(_walsh_hadamard(pa, 1) * _walsh_hadamard(pb, 1), 1) / dim
    py = np.clip(py.real if np.iscomplexobj(py) else py, 0, None)
    cdf = np.cumsum(py, axis=1)
    cdf /= cdf[:, -1:]
    y = _sample_rows(cdf, 1, rng)
    x = np.arange(dim)
    m = a * np.take_along_axis(b, x[None, :] ^ y[:, None], axis=1)
    pu = np.abs(_walsh_hadamard(m, 1)) ** 2
    cdf = np.cumsum(pu, axis=1)
    cdf /= cdf[:, -1:]
    u = _sample_rows(cdf, 1, rng)
    return u, y


def bell_sample(
    c: Circuit,
    noise: NoiseModel,
    k: int,
    rng: np.random.Generator,
) -> BellSampleSet:
    """``k`` Bell samples, each from a fresh pair of independent noisy trajectories."""
    n = c.n_qubits
    check_cap(2 * n)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    states = noisy_states(c, noise, 2 * k, rng)
    step = max(1, (1 << 21) >> n)
    out = []
    for start in range(0, k, step):
        stop = min(k, start + step)
        u, y = _sample_bell_rows(states[2 * start:2 * stop:2], states[2 * start + 1:2 * stop:2], n, rng)
        out.append(_labels_from_uy(u, y, n))
    meta = {"eps": noise.epsilon, "traj": 2 * k}
    return BellSampleSet(n, np.concatenate(out), meta)


def estimate_purity(b: BellSampleSet) -> Estimate:
    """Mean of ``(-1)^(number of singlet labels)``: unbiased for ``tr(rho rho')``."""
    if len(b) < 2:
        raise ValueError("need at least 2 Bell samples")
    n_y = np.sum(b.labels == BELL_LABELS.index("Y"), axis=1)
    return Estimate.from_samples(1.0 - 2.0 * (n_y % 2))


def fidelity_from_bell(b: BellSampleSet | Estimate) -> Estimate:
    """Root purity with first-order error propagation."""
    p = b if isinstance(b, Estimate) else estimate_purity(b)
    if p.value <= 2 * p.std_error:
        raise IndeterminateResultError(
            f"purity {p.value:.4g} +- {p.std_error:.2g} is not positive at 2 sigma"
        )
    root = math.sqrt(p.value)
    return Estimate(root, p.std_error / (2 * root), p.n_samples)


def write_bell_samples(b: BellSampleSet, path, circuit_id: str = "") -> None:
    m = b.meta
    with open(path, "w") as fh:
        fh.write(
            f"# circuit={circuit_id or '-'} n={b.n_qubits} seed={m.get('seed', '-')} "
            f"eps={m.get('eps', 0.0)} traj={m.get('traj', 0)} pairs={b.n_qubits}\n"
        )
        for s in b.strings():
            fh.write(s + "\n")


def read_bell_samples(path) -> BellSampleSet:
    with open(path) as fh:
        lines = [l.strip() for l in fh if l.strip()]
    if not lines:
        raise ValueError(f"{path}: empty Bell sample file")
    head = parse_header(lines[0])
    n = int(head.get("pairs", head.get("n")))
    rows = []
    for i, s in enumerate(lines[1:], start=2):
        if len(s) != n or set(s) - set(BELL_LABELS):
            raise ValueError(f"{path}:{i}: expected {n} labels from {BELL_LABELS}, got {s!r}")
        rows.append([BELL_LABELS.index(ch) for ch in s])
    meta = {k: head[k] for k in ("seed", "eps", "traj") if head.get(k, "-") != "-"}
    return BellSampleSet(n, np.array(rows, dtype=np.int8).reshape(-1, n), meta)


# ------------------------------------------------------- graph symmetries


@dataclass(frozen=True)
class SymmetryOperator:
    """``sign * V P V^dagger`` with ``V = H^n Rz(theta)`` the circuit's local frame.

    ``pauli`` is the graph-state stabilizer word (one of ``IXYZ`` per qubit)
    and ``angles`` are the per-vertex Z rotations of the graph circuit.
    """

    pauli: str
    sign: int
    angles: tuple[float, ...]

    @property
    def n(self) -> int:
        return len(self.pauli)

    def local_frame(self, q: int) -> np.ndarray:
        rz = np.diag([1.0, np.exp(1j * self.angles[q])])
        return _ONE_QUBIT["H"] @ rz

    def matrix(self) -> np.ndarray:
        out = np.array([[1.0 + 0j]])
        for q, letter in enumerate(self.pauli):
            v = self.local_frame(q)
            out = np.kron(out, v @ PAULI[letter] @ v.conj().T)
        return self.sign * out


# Pauli words as (x mask, z mask, i-power) for i^p X^x Z^z; qubit q is bit q.
def _pauli_mul(a, b):
    x1, z1, p1 = a
    x2, z2, p2 = b
    p = (p1 + p2 + 2 * bin(z1 & x2).count("1")) % 4
    return x1 ^ x2, z1 ^ z2, p


def _pauli_to_word(x: int, z: int, p: int, n: int) -> tuple[str, int]:
    letters = []
    for q in range(n):
        xb, zb = (x >> q) & 1, (z >> q) & 1
        if xb and zb:
            letters.append("Y")
            p += 3  # XZ = -iY
        elif xb:
            letters.append("X")
        elif zb:
            letters.append("Z")
        else:
            letters.append("I")
    p %= 4
    if p not in (0, 2):
        raise ValueError("non-Hermitian Pauli product")
    return "".join(letters), 1 if p == 0 else -1


def _generator(g: GraphSpec, v: int) -> tuple[int, int, int]:
    z = 0
    for w in g.neighbors(v):
        z |= 1 << w
    return 1 << v, z, 0


def graph_symmetries(g: GraphSpec) -> list[SymmetryOperator]:
    """The ``n`` stabilizer generators ``X_v prod_{w in N(v)} Z_w`` in the circuit frame."""
    ops = []
    for v in range(g.n_vertices):
        word, sign = _pauli_to_word(*_generator(g, v), g.n_vertices)
        ops.append(SymmetryOperator(word, sign, g.angles))
    return ops


def stabilizer_element(g: GraphSpec, subset: int) -> SymmetryOperator:
    """Product of the generators selected by the bits of ``subset``."""
    acc = (0, 0, 0)
    for v in range(g.n_vertices):
        if (subset >> v) & 1:
            acc = _pauli_mul(acc, _generator(g, v))
    word, sign = _pauli_to_word(*acc, g.n_vertices)
    return SymmetryOperator(word, sign, g.angles)


_SDG_H = _ONE_QUBIT["H"] @ np.diag([1.0, -1j])


def measure_symmetries(
    states: np.ndarray,
    ops: Sequence[SymmetryOperator],
    rng: np.random.Generator,
) -> np.ndarray:
    """One +-1 outcome per row: row ``i`` measures ``ops[i]`` on ``states[i]``.

    The measurement uses single-qubit rotations only: undo the local frame,
    rotate each Pauli letter to Z, then take the parity of a computational
    basis sample over the support.
    """
    b, dim = states.shape
    n = ops[0].n
    psi = states.copy()
    for q in range(n):
        # all rows share the frame up to their own angles; angles are per graph
        psi = _apply_1q(psi, ops[0].local_frame(q).conj().T, q, n)
    letters = np.array([[ch for ch in op.pauli] for op in ops])
    for q in range(n):
        for letter, u in (("X", _ONE_QUBIT["H"]), ("Y", _SDG_H)):
            rows = np.flatnonzero(letters[:, q] == letter)
            if rows.size:
                psi[rows] = _apply_1q(psi[rows], u, q, n)
    p = np.abs(psi) ** 2
    cdf = np.cumsum(p, axis=1)
    cdf /= cdf[:, -1:]
    outcomes = _sample_rows(cdf, 1, rng)
    support = np.array(
        [sum(1 << (n - 1 - q) for q, ch in enumerate(op.pauli) if ch != "I") for op in ops],
        dtype=np.int64,
    )
    parity = _parity(outcomes & support)
    signs = np.array([op.sign for op in ops])
    return signs * (1 - 2 * parity)


def globally_depolarized(g: GraphSpec, p: float) -> Callable[[int, np.random.Generator], np.ndarray]:
    """State preparer for ``(1-p)|C><C| + p I/2^n`` as a mixture of pure states."""
    c = build_rotated_graph_state(g)
    ideal = simulate(c).amplitudes
    dim = ideal.size

    def prepare(k: int, rng: np.random.Generator) -> np.ndarray:
        out = np.tile(ideal, (k, 1))
        mixed = np.flatnonzero(rng.random(k) < p)
        out[mixed] = 0
        out[mixed, rng.integers(0, dim, size=mixed.size)] = 1.0
        return out

    return prepare


def estimate_fidelity_graph(
    g: GraphSpec,
    noise: NoiseModel,
    n_stabilizers: int,
    shots: int,
    rng: np.random.Generator,
    generators_only: bool = False,
    prepare: Callable[[int, np.random.Generator], np.ndarray] | None = None,
) -> Estimate:
    """Average measured symmetry expectation over random stabilizer-group elements.

    Elements are uniform over the full group (equal to the fidelity in
    expectation) unless ``generators_only``, which averages the generators.
    Every shot uses a fresh noisy trajectory, or a fresh state from
    ``prepare`` when given. The standard error treats each shot as one sample.
    """
    n = g.n_vertices
    check_cap(n)
    if n_stabilizers < 1 or shots < 1:
        raise ValueError("n_stabilizers and shots must be >= 1")
    if generators_only:
        picks = rng.integers(0, n, size=n_stabilizers)
        ops = [stabilizer_element(g, 1 << int(v)) for v in picks]
    else:
        ops = [stabilizer_element(g, int(s)) for s in rng.integers(0, 1 << n, size=n_stabilizers)]
    total = n_stabilizers * shots
    if prepare is None:
        states = noisy_states(build_rotated_graph_state(g), noise, total, rng)
    else:
        states = prepare(total, rng)
    row_ops = [op for op in ops for _ in range(shots)]
    values = np.empty(total)
    step = max(1, (1 << 22) >> n)
    for start in range(0, total, step):
        sl = slice(start, min(total, start + step))
        values[sl] = measure_symmetries(states[sl], row_ops[sl], rng)
    return Estimate.from_samples(values)


# ------------------------------------------------------- planted secrets


@dataclass
class SecretKey:
    secret: str
    planted_masks: list[str]
    planted_angle: float
    beta_honest: float
    threshold: float
    min_samples: int
    circuit_id: str = ""

    def __post_init__(self):
        if not self.secret or set(self.secret) - {"0", "1"} or "1" not in self.secret:
            raise ValueError("secret must be a nonzero bit string")

    @property
    def n(self) -> int:
        return len(self.secret)

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, text: str) -> "SecretKey":
        return cls(**json.loads(text))


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    statistic: float
    threshold: float
    p_value: float
    n_samples: int


def _parity(v: np.ndarray) -> np.ndarray:
    """Bit parity of each nonnegative int64 entry."""
    return (np.bitwise_count(np.asarray(v, dtype=np.int64)) & 1).astype(np.int64)


def _dot2(a: int, b: int) -> int:
    return bin(a & b).count("1") & 1


def _gf2_rank(rows: Sequence[int]) -> int:
    basis: list[int] = []
    for r in rows:
        for v in basis:
            r = min(r, r ^ v)
        if r:
            basis.append(r)
    return len(basis)


def parity_bias(probs: np.ndarray, secret: int) -> float:
    """``Pr[x.s = 0 mod 2]`` under a full output distribution."""
    x = np.arange(probs.size, dtype=np.int64)
    return float(probs[_parity(x & secret) == 0].sum())


def chernoff_min_samples(beta: float, threshold: float, error: float = 0.01) -> int:
    """Samples so that both Hoeffding tails at the threshold are below ``error``."""
    gap = min(beta - threshold, threshold - 0.5)
    if gap <= 0:
        raise ValueError("threshold must lie strictly between 0.5 and beta")
    return int(math.ceil(math.log(1 / error) / (2 * gap * gap)))


def plant_secret_iqp(
    n: int,
    secret: str,
    rng: np.random.Generator,
    n_planted: int = 3,
    planted_angle: float = math.pi / 8,
    n_decoys: int | None = None,
) -> tuple[Circuit, SecretKey]:
    """IQP circuit with a raised parity bias along ``secret``.

    Planted phase gates have masks ``z`` with ``z.s = 1`` (linearly
    independent, angle ``planted_angle``); decoys have ``z.s = 0`` and random
    angles and leave the bias untouched. No mask equals the secret itself. For independent planted masks the
    bias is ``(1 + cos(angle)^n_planted) / 2``. The honest bias recorded in
    the key is computed from the simulated distribution.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    if len(secret) != n or set(secret) - {"0", "1"}:
        raise ValueError(f"secret must be an {n}-bit string")
    s = int(secret, 2)
    if s == 0:
        raise ValueError("secret must be nonzero")
    if not 1 <= n_planted <= n:
        raise ValueError(f"n_planted must lie in [1, {n}]")
    n_decoys = 2 * n if n_decoys is None else n_decoys
    planted: list[int] = []
    while len(planted) < n_planted:
        z = int(rng.integers(1, 1 << n))
        if z != s and _dot2(z, s) == 1 and _gf2_rank(planted + [z]) == len(planted) + 1:
            planted.append(z)
    decoys: list[tuple[float, int]] = []
    while len(decoys) < n_decoys:
        z = int(rng.integers(1, 1 << n))
        if z != s and _dot2(z, s) == 0:
            decoys.append((float(rng.uniform(0, 2 * math.pi)), z))
    gates = [(planted_angle, z) for z in planted] + decoys
    order = rng.permutation(len(gates))
    c = build_iqp(n, [gates[i] for i in order], seed=int(rng.integers(0, 2**63 - 1)))
    beta = parity_bias(probabilities(c), s)
    threshold = 0.5 * (beta + 0.5)
    key = SecretKey(
        secret=secret,
        planted_masks=[format(z, f"0{n}b") for z in planted],
        planted_angle=planted_angle,
        beta_honest=beta,
        threshold=threshold,
        min_samples=chernoff_min_samples(beta, threshold),
        circuit_id=c.id,
    )
    return c, key


def random_secret(n: int, rng: np.random.Generator) -> str:
    return format(int(rng.integers(1, 1 << n)), f"0{n}b")


def random_iqp(n: int, rng: np.random.Generator, n_gates: int | None = None) -> Circuit:
    """IQP circuit with no planted structure: ``n_gates`` (default ``10 n``)
    phase gates on uniformly random nonzero masks with uniform angles."""
    n_gates = 10 * n if n_gates is None else n_gates
    gates = [(float(rng.uniform(0, 2 * math.pi)), int(rng.integers(1, 1 << n))) for _ in range(n_gates)]
    return build_iqp(n, gates, seed=int(rng.integers(0, 2**63 - 1)))


def empirical_bias(samples: SampleSet, secret: str) -> float:
    s = int(secret, 2)
    return float(np.mean(_parity(samples.outcomes & s) == 0))


def verify_planted(samples: SampleSet, key: SecretKey) -> Verdict:
    """Accept iff the empirical parity bias reaches the key's threshold.

    The p-value is the exact binomial tail of the observed count under a
    uniform sampler.
    """
    k = len(samples)
    if k < max(1, key.min_samples):
        raise ValueError(f"need at least {max(1, key.min_samples)} samples, got {k}")
    if samples.n_qubits != key.n:
        raise ValueError(f"samples have {samples.n_qubits} bits, key expects {key.n}")
    beta_hat = empirical_bias(samples, key.secret)
    count = int(round(beta_hat * k))
    p_value = float(stats.binom.sf(count - 1, k, 0.5))
    return Verdict(beta_hat >= key.threshold, beta_hat, key.threshold, p_value, k)


def secret_aware_spoof(key: SecretKey, k: int, rng: np.random.Generator) -> SampleSet:
    """Classical samples that pass the planted test when the secret is known.

    Draws uniform strings and fixes their parity along the secret to be even
    with probability ``beta_honest``.
    """
    n, s = key.n, int(key.secret, 2)
    x = rng.integers(0, 1 << n, size=k, dtype=np.int64)
    want_odd = rng.random(k) >= key.beta_honest
    odd = _parity(x & s).astype(bool)
    pivot = 1 << (int(s).bit_length() - 1)  # any bit inside the secret's support
    x = np.where(odd != want_odd, x ^ pivot, x)
    return SampleSet(n, x, key.circuit_id, {"strategy": "secret-aware"})


def uniform_samples(n: int, k: int, rng: np.random.Generator) -> SampleSet:
    return SampleSet(n, rng.integers(0, 1 << n, size=k, dtype=np.int64), "", {"strategy": "uniform"})


def sample_ideal(c: Circuit, k: int, rng: np.random.Generator) -> SampleSet:
    return SampleSet(c.n_qubits, sample_probs(probabilities(c), k, rng), c.id, {"strategy": "ideal"})
