"""Circuit representation, random ensembles and the text schema.

Qubit 0 is the most significant bit of a basis-state index, so the bitstring
``"0110"`` and the integer ``0b0110`` name the same basis state on 4 qubits.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

ENSEMBLES = ("grid-rcs", "rr-graph-rcs", "iqp", "rotated-graph-state", "custom")

# name -> (number of qubit slots, number of float params); None = variable (DPHASE)
GATE_ARITY = {
    "H": (1, 0),
    "SX": (1, 0),
    "SY": (1, 0),
    "SW": (1, 0),
    "X": (1, 0),
    "Y": (1, 0),
    "Z": (1, 0),
    "FSIM": (2, 2),
    "CZ": (2, 0),
    "CNOT": (2, 0),
    "ZZ": (2, 1),
    "DPHASE": (None, 1),
}


class CircuitError(ValueError):
    """Raised for circuits or graphs that violate structural invariants."""


class ParseError(ValueError):
    """Malformed circuit text. Carries the 1-based line and column."""

    def __init__(self, msg: str, line: int = 1, col: int = 1):
        super().__init__(f"line {line}, col {col}: {msg}")
        self.line = line
        self.col = col


@dataclass(frozen=True)
class Gate:
    """A single gate. ``DPHASE`` keeps its mask as the sorted tuple of qubits."""

    name: str
    qubits: tuple[int, ...]
    params: tuple[float, ...] = ()

    def __post_init__(self):
        if self.name not in GATE_ARITY:
            raise CircuitError(f"unknown gate {self.name!r}")
        nq, npar = GATE_ARITY[self.name]
        if nq is not None and len(self.qubits) != nq:
            raise CircuitError(f"{self.name} takes {nq} qubits, got {len(self.qubits)}")
        if len(self.params) != npar:
            raise CircuitError(f"{self.name} takes {npar} params, got {len(self.params)}")
        if len(set(self.qubits)) != len(self.qubits):
            raise CircuitError(f"{self.name} acts on repeated qubits {self.qubits}")
        if self.name == "DPHASE":
            if not self.qubits:
                raise CircuitError("DPHASE mask must be nonzero")
            object.__setattr__(self, "qubits", tuple(sorted(self.qubits)))

    def mask(self, n: int) -> int:
        """Integer mask with qubit q at bit ``n - 1 - q``."""
        m = 0
        for q in self.qubits:
            m |= 1 << (n - 1 - q)
        return m


def H(q: int) -> Gate:
    return Gate("H", (q,))


def SX(q: int) -> Gate:
    return Gate("SX", (q,))


def SY(q: int) -> Gate:
    return Gate("SY", (q,))


def SW(q: int) -> Gate:
    return Gate("SW", (q,))


def FSIM(q1: int, q2: int, theta: float, phi: float) -> Gate:
    return Gate("FSIM", (q1, q2), (float(theta), float(phi)))


def CZ(q1: int, q2: int) -> Gate:
    return Gate("CZ", (q1, q2))


def CNOT(control: int, target: int) -> Gate:
    return Gate("CNOT", (control, target))


def ZZ(q1: int, q2: int, angle: float = math.pi / 2) -> Gate:
    return Gate("ZZ", (q1, q2), (float(angle),))


def DPHASE(theta: float, mask: str | Iterable[int]) -> Gate:
    """Diagonal phase ``|x> -> exp(i theta (z.x mod 2)) |x>``.

    ``mask`` is either a big-endian bit string (qubit 0 leftmost) or an
    iterable of qubit indices.
    """
    if isinstance(mask, str):
        qubits = tuple(i for i, b in enumerate(mask) if b == "1")
    else:
        qubits = tuple(mask)
    return Gate("DPHASE", qubits, (float(theta),))


@dataclass(frozen=True)
class Circuit:
    n_qubits: int
    layers: tuple[tuple[Gate, ...], ...]
    ensemble: str = "custom"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(tuple(layer) for layer in self.layers))
        if not isinstance(self.n_qubits, (int, np.integer)) or self.n_qubits < 1:
            raise CircuitError(f"n_qubits must be a positive integer, got {self.n_qubits!r}")
        if self.ensemble not in ENSEMBLES:
            raise CircuitError(f"unknown ensemble tag {self.ensemble!r}")
        for li, layer in enumerate(self.layers):
            seen: set[int] = set()
            for g in layer:
                for q in g.qubits:
                    if not 0 <= q < self.n_qubits:
                        raise CircuitError(f"layer {li}: qubit {q} out of range for n={self.n_qubits}")
                    if q in seen:
                        raise CircuitError(f"layer {li}: qubit {q} used twice")
                    seen.add(q)

    @property
    def depth(self) -> int:
        return len(self.layers)

    def gates(self) -> Iterable[Gate]:
        for layer in self.layers:
            yield from layer

    def two_qubit_count(self) -> int:
        return sum(1 for g in self.gates() if len(g.qubits) == 2 and g.name != "DPHASE")

    def prefix(self, d: int) -> "Circuit":
        """The circuit made of the first ``d`` layers."""
        if not 0 <= d <= self.depth:
            raise CircuitError(f"prefix depth {d} outside [0, {self.depth}]")
        return Circuit(self.n_qubits, self.layers[:d], self.ensemble, self.seed)

    @property
    def id(self) -> str:
        return hashlib.sha256(serialize(self).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class GraphSpec:
    n_vertices: int
    edges: tuple[tuple[int, int], ...]
    angles: tuple[float, ...] = field(default=())

    def __post_init__(self):
        if self.n_vertices < 1:
            raise CircuitError("graph needs at least one vertex")
        angles = tuple(float(a) for a in self.angles) if self.angles else (0.0,) * self.n_vertices
        if len(angles) != self.n_vertices:
            raise CircuitError(f"expected {self.n_vertices} angles, got {len(angles)}")
        seen = set()
        edges = []
        for a, b in self.edges:
            a, b = int(a), int(b)
            if a == b:
                raise CircuitError(f"self-loop on vertex {a}")
            if not (0 <= a < self.n_vertices and 0 <= b < self.n_vertices):
                raise CircuitError(f"edge ({a}, {b}) references a missing vertex")
            key = (min(a, b), max(a, b))
            if key in seen:
                raise CircuitError(f"duplicate edge {key}")
            seen.add(key)
            edges.append(key)
        object.__setattr__(self, "edges", tuple(edges))
        object.__setattr__(self, "angles", angles)

    def neighbors(self, v: int) -> list[int]:
        out = []
        for a, b in self.edges:
            if a == v:
                out.append(b)
            elif b == v:
                out.append(a)
        return sorted(out)


# ---------------------------------------------------------------- ensembles


def pack_layers(pairs: Sequence[tuple[int, int]]) -> list[list[tuple[int, int]]]:
    """Greedily pack pairs into layers of qubit-disjoint pairs, keeping order."""
    layers: list[list[tuple[int, int]]] = []
    used: list[set[int]] = []
    for a, b in pairs:
        for layer, busy in zip(layers, used):
            if a not in busy and b not in busy:
                layer.append((a, b))
                busy.update((a, b))
                break
        else:
            layers.append([(a, b)])
            used.append({a, b})
    return layers


def grid_coupler_patterns(rows: int, cols: int) -> list[list[tuple[int, int]]]:
    """Four disjoint coupler sets cycling right, left, down, up.

    Horizontal couplers are split by the parity of ``row + col`` of their left
    end, vertical ones by the parity of ``row + col`` of their top end, which
    staggers neighbouring rows (columns) against each other.
    """
    idx = lambda r, c: r * cols + c  # noqa: E731
    right, left, down, up = [], [], [], []
    for r in range(rows):
        for c in range(cols - 1):
            (right if (r + c) % 2 == 0 else left).append((idx(r, c), idx(r, c + 1)))
    for r in range(rows - 1):
        for c in range(cols):
            (down if (r + c) % 2 == 0 else up).append((idx(r, c), idx(r + 1, c)))
    return [right, left, down, up]


def build_grid_rcs(
    rows: int,
    cols: int,
    depth: int,
    fsim_theta: float = math.pi / 2,
    fsim_phi: float = math.pi / 6,
    seed: int = 0,
    no_repeat: bool = False,
) -> Circuit:
    """Sycamore-style grid circuit with ``depth`` cycles.

    Each cycle is a layer of single-qubit gates drawn from {SX, SY, SW}
    followed by one FSIM coupler layer. Empty coupler layers are dropped, so a
    1x1 grid gives ``depth`` single-qubit layers. ``no_repeat`` forbids a qubit
    from drawing the same gate in consecutive cycles.
    """
    if rows < 1 or cols < 1:
        raise CircuitError(f"grid dimensions must be positive, got {rows}x{cols}")
    if depth < 0:
        raise CircuitError(f"depth must be non-negative, got {depth}")
    n = rows * cols
    rng = np.random.default_rng(seed)
    patterns = grid_coupler_patterns(rows, cols)
    singles = (SX, SY, SW)
    prev = [-1] * n
    layers: list[list[Gate]] = []
    for cycle in range(depth):
        layer = []
        for q in range(n):
            if no_repeat and prev[q] >= 0:
                k = int(rng.integers(2))
                k = k if k < prev[q] else k + 1
            else:
                k = int(rng.integers(3))
            prev[q] = k
            layer.append(singles[k](q))
        layers.append(layer)
        couplers = patterns[cycle % 4]
        if couplers:
            layers.append([FSIM(a, b, fsim_theta, fsim_phi) for a, b in couplers])
    return Circuit(n, layers, "grid-rcs", seed)


def random_regular_graph(n: int, degree: int, rng: np.random.Generator, max_tries: int = 10_000):
    """Pairing-model random regular graph, rejecting self-loops and multi-edges."""
    if degree < 0 or degree >= n or (n * degree) % 2:
        raise CircuitError(f"no {degree}-regular graph on {n} vertices")
    for _ in range(max_tries):
        stubs = np.repeat(np.arange(n), degree)
        rng.shuffle(stubs)
        pairs = stubs.reshape(-1, 2)
        if np.any(pairs[:, 0] == pairs[:, 1]):
            continue
        edges = {(int(min(a, b)), int(max(a, b))) for a, b in pairs}
        if len(edges) == len(pairs):
            return sorted(edges)
    raise CircuitError(f"failed to draw a {degree}-regular graph on {n} vertices")


def _haar_zxzxz_layers(n: int, rng: np.random.Generator) -> list[list[Gate]]:
    """Haar-random single-qubit unitaries on every qubit as RZ.SX.RZ.SX.RZ.

    Any U(2) equals, up to global phase, Rz(a) SX Rz(b) SX Rz(c). For Haar
    measure the middle angle has density sin(b')/2 with b = b' + pi.
    """
    a = rng.uniform(0, 2 * math.pi, n)
    c = rng.uniform(0, 2 * math.pi, n)
    b = np.arccos(1 - 2 * rng.random(n)) + math.pi
    rz = lambda angles: [DPHASE(float(t), (q,)) for q, t in enumerate(angles)]  # noqa: E731
    sx = [SX(q) for q in range(n)]
    return [rz(c), list(sx), rz(b), list(sx), rz(a)]


def build_rr_graph_rcs(n: int, degree: int, depth: int, seed: int = 0) -> Circuit:
    """Random-regular-graph circuit with ZZ(pi/2) couplers.

    Each depth step draws a fresh ``degree``-regular graph, applies a Haar
    single-qubit layer (stored as five elementary sublayers) and then the
    graph's edges as greedily packed ZZ layers.
    """
    if n < 2 or degree < 1 or degree >= n or (n * degree) % 2:
        raise CircuitError(f"infeasible random regular graph (n={n}, degree={degree})")
    if depth < 0:
        raise CircuitError(f"depth must be non-negative, got {depth}")
    rng = np.random.default_rng(seed)
    layers: list[list[Gate]] = []
    for _ in range(depth):
        edges = random_regular_graph(n, degree, rng)
        layers.extend(_haar_zxzxz_layers(n, rng))
        for packed in pack_layers(edges):
            layers.append([ZZ(a, b, math.pi / 2) for a, b in packed])
    return Circuit(n, layers, "rr-graph-rcs", seed)


def _mask_qubits(mask, n: int) -> tuple[int, ...]:
    if isinstance(mask, str):
        if len(mask) > n or set(mask) - {"0", "1"}:
            raise CircuitError(f"mask {mask!r} is not an n={n} bit string")
        mask = mask.zfill(n)
        return tuple(i for i, b in enumerate(mask) if b == "1")
    mask = int(mask)
    if mask < 0 or mask >> n:
        raise CircuitError(f"mask {mask:#b} wider than n={n} bits")
    return tuple(q for q in range(n) if (mask >> (n - 1 - q)) & 1)


def build_iqp(
    n: int,
    phase_gates: Sequence[tuple[float, object]],
    cnot_layers: Sequence[Sequence[tuple[int, int]]] | None = None,
    seed: int = 0,
) -> Circuit:
    """IQP circuit: H wall, diagonal phases (and CNOTs), H wall.

    ``phase_gates`` holds ``(theta, mask)`` with masks as bit strings or ints.
    ``cnot_layers[i]``, when given, is inserted after phase gate ``i``.
    """
    if n < 1:
        raise CircuitError("n must be positive")
    cnot_layers = list(cnot_layers or [])
    if len(cnot_layers) > len(phase_gates):
        raise CircuitError("more CNOT layers than phase gates")
    layers: list[list[Gate]] = [[H(q) for q in range(n)]]
    for i, (theta, mask) in enumerate(phase_gates):
        qubits = _mask_qubits(mask, n)
        if qubits:
            layers.append([DPHASE(theta, qubits)])
        if i < len(cnot_layers):
            for packed in pack_layers([tuple(p) for p in cnot_layers[i]]):
                layers.append([CNOT(a, b) for a, b in packed])
    layers.append([H(q) for q in range(n)])
    return Circuit(n, layers, "iqp", seed)


def build_rotated_graph_state(g: GraphSpec, seed: int = 0) -> Circuit:
    """H wall, CZ per edge, Z rotation by each vertex angle, H wall."""
    n = g.n_vertices
    layers: list[list[Gate]] = [[H(q) for q in range(n)]]
    for packed in pack_layers(g.edges):
        layers.append([CZ(a, b) for a, b in packed])
    rot = [DPHASE(t, (v,)) for v, t in enumerate(g.angles) if t != 0.0]
    if rot:
        layers.append(rot)
    layers.append([H(q) for q in range(n)])
    return Circuit(n, layers, "rotated-graph-state", seed)


# -------------------------------------------------------------- text schema

SCHEMA_VERSION = 1
_TOP_FIELDS = {"version", "n", "ensemble", "seed", "layers"}


def gate_to_list(g: Gate, n: int) -> list:
    if g.name == "DPHASE":
        bits = "".join("1" if q in g.qubits else "0" for q in range(n))
        return ["DPHASE", g.params[0], bits]
    return [g.name, *g.qubits, *g.params]


def circuit_to_dict(c: Circuit) -> dict:
    return {
        "version": SCHEMA_VERSION,
        "n": c.n_qubits,
        "ensemble": c.ensemble,
        "seed": c.seed,
        "layers": [[gate_to_list(g, c.n_qubits) for g in layer] for layer in c.layers],
    }


def serialize(c: Circuit) -> str:
    """One JSON document on one line."""
    return json.dumps(circuit_to_dict(c), separators=(",", ":"), allow_nan=False)


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return (isinstance(v, (int, float)) and not isinstance(v, bool)) and math.isfinite(v)


def gate_from_list(item, n: int) -> Gate:
    if not isinstance(item, list) or not item or not isinstance(item[0], str):
        raise CircuitError(f"gate must be a list starting with a name, got {item!r}")
    name, args = item[0], item[1:]
    if name not in GATE_ARITY:
        raise CircuitError(f"unknown gate {name!r}")
    if name == "DPHASE":
        if len(args) != 2 or not _is_num(args[0]) or not isinstance(args[1], str):
            raise CircuitError(f"DPHASE expects [theta, bitmask], got {args!r}")
        if len(args[1]) != n or set(args[1]) - {"0", "1"}:
            raise CircuitError(f"DPHASE mask {args[1]!r} is not {n} bits")
        return DPHASE(float(args[0]), args[1])
    nq, npar = GATE_ARITY[name]
    if len(args) != nq + npar:
        raise CircuitError(f"{name} expects {nq} qubits and {npar} params, got {args!r}")
    qubits, params = args[:nq], args[nq:]
    if not all(_is_int(q) for q in qubits):
        raise CircuitError(f"{name} qubits must be integers, got {qubits!r}")
    if not all(_is_num(p) for p in params):
        raise CircuitError(f"{name} params must be finite numbers, got {params!r}")
    return Gate(name, tuple(qubits), tuple(float(p) for p in params))


def circuit_from_dict(doc) -> Circuit:
    if not isinstance(doc, dict):
        raise CircuitError("circuit document must be an object")
    extra = set(doc) - _TOP_FIELDS
    if extra:
        raise CircuitError(f"unknown fields {sorted(extra)}")
    missing = _TOP_FIELDS - set(doc)
    if missing:
        raise CircuitError(f"missing fields {sorted(missing)}")
    if doc["version"] != SCHEMA_VERSION:
        raise CircuitError(f"unsupported schema version {doc['version']!r}")
    n = doc["n"]
    if not _is_int(n) or n < 1:
        raise CircuitError(f"n must be a positive integer, got {n!r}")
    if not _is_int(doc["seed"]):
        raise CircuitError(f"seed must be an integer, got {doc['seed']!r}")
    if not isinstance(doc["layers"], list) or not all(isinstance(l, list) for l in doc["layers"]):
        raise CircuitError("layers must be a list of lists")
    layers = [[gate_from_list(item, n) for item in layer] for layer in doc["layers"]]
    return Circuit(n, layers, doc["ensemble"], doc["seed"])


def parse(text: str) -> Circuit:
    """Inverse of :func:`serialize`; raises :class:`ParseError` with a position."""
    if not text.strip():
        raise ParseError("empty circuit document")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, e.lineno, e.colno) from None
    try:
        return circuit_from_dict(doc)
    except CircuitError as e:
        raise ParseError(str(e)) from None
