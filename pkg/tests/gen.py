"""Random circuit generator shared by the oracle tests."""
import numpy as np

from rcslab.circuit import GATE_ARITY, Circuit, Gate

ALL_GATES = sorted(GATE_ARITY)


def random_gate_circuit(n: int, n_layers: int, rng: np.random.Generator, must_include=()) -> Circuit:
    """Layers of randomly chosen gates on random disjoint qubits, angles uniform in [-pi, pi)."""
    layers = []
    pending = list(must_include)
    for _ in range(n_layers):
        free = list(rng.permutation(n))
        layer = []
        while free:
            name = pending.pop() if pending else ALL_GATES[rng.integers(len(ALL_GATES))]
            nq, npar = GATE_ARITY[name]
            if nq is None:
                nq = int(rng.integers(1, len(free) + 1))
            if nq > len(free):
                if rng.random() < 0.5:
                    break
                continue
            qs = tuple(int(q) for q in free[:nq])
            free = free[nq:]
            layer.append(Gate(name, qs, tuple(rng.uniform(-np.pi, np.pi, npar))))
            if rng.random() < 0.15:
                break
        layers.append(layer)
    return Circuit(n, layers, "custom", int(rng.integers(0, 2**62)))
