"""Exact pure-state simulation of small qubit registers.

Statevectors are dense complex128 arrays of length 2**n. Qubit ordering is
little-endian: qubit 0 is the least-significant bit of the outcome index.
Gates are applied by contracting the gate tensor against the relevant axes
of the reshaped amplitude tensor, so each gate costs O(2**n) regardless of
register size; no full 2**n x 2**n matrix is ever built here.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_QUBITS = 12
UNITARY_ATOL = 1e-10


class ConfigurationError(ValueError):
    """Raised for invalid register sizes or malformed gate specs."""


@dataclass
class StateVector:
    """Pure state of an n-qubit register.

    amps[s] is the amplitude of computational-basis state |s>, with qubit 0
    stored in the least-significant bit of s.
    """

    n: int
    amps: np.ndarray

    def norm(self) -> float:
        return float(np.sum(np.abs(self.amps) ** 2))

    def copy(self) -> "StateVector":
        return StateVector(self.n, self.amps.copy())


@dataclass
class GateOp:
    """A single- or two-qubit unitary acting on named target qubits.

    For two-qubit gates the 4x4 matrix is indexed so that targets[0]
    provides the high bit and targets[1] the low bit of the row/column
    index.
    """

    matrix: np.ndarray
    targets: tuple[int, ...]

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=complex)
        if isinstance(self.targets, int):
            self.targets = (self.targets,)
        else:
            self.targets = tuple(self.targets)
        k = len(self.targets)
        if k not in (1, 2):
            raise ConfigurationError(f"gates act on 1 or 2 qubits, got {k} targets")
        if self.matrix.shape != (2**k, 2**k):
            raise ConfigurationError(
                f"matrix shape {self.matrix.shape} does not match {k} targets"
            )
        if len(set(self.targets)) != k:
            raise ConfigurationError(f"duplicate target qubits {self.targets}")

    @property
    def kind(self) -> str:
        return "single" if len(self.targets) == 1 else "two"


def is_unitary(matrix: np.ndarray, atol: float = UNITARY_ATOL) -> bool:
    matrix = np.asarray(matrix, dtype=complex)
    ident = np.eye(matrix.shape[0])
    return bool(np.allclose(matrix.conj().T @ matrix, ident, atol=atol))


def init_zero_state(n: int) -> StateVector:
    """Allocate |0...0> on n qubits, 1 <= n <= 12."""
    if not isinstance(n, (int, np.integer)) or not 1 <= n <= MAX_QUBITS:
        raise ConfigurationError(f"qubit count must be in [1, {MAX_QUBITS}], got {n}")
    amps = np.zeros(2**n, dtype=complex)
    amps[0] = 1.0
    return StateVector(int(n), amps)


def apply_gate(state: StateVector, gate: GateOp) -> StateVector:
    """Apply a validated unitary gate, returning a new StateVector."""
    if not is_unitary(gate.matrix):
        raise ValueError("gate matrix is not unitary within 1e-10")
    for q in gate.targets:
        if not 0 <= q < state.n:
            raise IndexError(f"target qubit {q} out of range for n={state.n}")
    k = len(gate.targets)
    # Axis n-1-q of the reshaped tensor corresponds to qubit q (little-endian).
    axes = [state.n - 1 - q for q in gate.targets]
    tensor = state.amps.reshape((2,) * state.n)
    gate_tensor = gate.matrix.reshape((2,) * (2 * k))
    out = np.tensordot(gate_tensor, tensor, axes=(list(range(k, 2 * k)), axes))
    out = np.moveaxis(out, list(range(k)), axes)
    return StateVector(state.n, np.ascontiguousarray(out.reshape(-1)))


def outcome_probabilities(state: StateVector) -> np.ndarray:
    """Computational-basis probabilities p(s) = |amps[s]|^2."""
    probs = np.abs(state.amps) ** 2
    total = probs.sum()
    if abs(total - 1.0) > 1e-8:
        raise ValueError(f"state is not normalized (norm^2 = {total})")
    return probs
