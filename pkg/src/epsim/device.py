"""Device description: mode parameters and the cross-Kerr coupling graph.

All nonlinearities and couplings are quoted the way they are measured on
hardware, as frequencies in MHz (the Hamiltonian coefficient is 2*pi times
that).  Coherence times are in microseconds.  Conversion to the internal
angular units (rad/ns) happens in :mod:`epsim.dynamics`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError, StateValidationError

__all__ = ["ModeSpec", "DeviceGraph", "load_device", "default_device"]


@dataclass(frozen=True)
class ModeSpec:
    """One bosonic or two-level mode of the device.

    Parameters
    ----------
    label : str
        Mode name, e.g. ``"S1"`` or ``"Y2"``.
    dim : int
        Hilbert-space truncation (2 for transmons used as qubits).
    t1_us : float
        Energy relaxation time in microseconds.
    t2_us : float
        Free-induction (Ramsey) decay time in microseconds.  Must satisfy
        ``t2 <= 2 * t1``; cavities with unmeasured dephasing use ``2 * t1``.
    n_th : float
        Thermal occupation of the mode's environment, in [0, 1).
    self_kerr_mhz : float
        Self-Kerr coefficient in MHz (energy ``2*pi*K * n*(n-1)``).
    """

    label: str
    dim: int
    t1_us: float
    t2_us: float
    n_th: float = 0.0
    self_kerr_mhz: float = 0.0

    def __post_init__(self):
        if self.dim < 2:
            raise StateValidationError(f"mode {self.label}: dim must be >= 2, got {self.dim}")
        if self.t1_us <= 0 or self.t2_us <= 0:
            raise StateValidationError(f"mode {self.label}: T1 and T2 must be positive")
        if self.t2_us > 2 * self.t1_us + 1e-12:
            raise StateValidationError(
                f"mode {self.label}: T2={self.t2_us} exceeds 2*T1={2 * self.t1_us}"
            )
        if not 0 <= self.n_th < 1:
            raise StateValidationError(f"mode {self.label}: n_th must be in [0, 1)")

    @property
    def dephasing_rate_per_us(self) -> float:
        """Pure-dephasing rate 1/T2 - 1/(2*T1), in 1/us (non-negative)."""
        return max(0.0, 1.0 / self.t2_us - 0.5 / self.t1_us)


@dataclass(frozen=True)
class DeviceGraph:
    """Ordered set of modes plus the symmetric cross-Kerr matrix (MHz).

    The mode order fixes every tensor layout in the package; index sets in
    state operations refer to positions in this list.
    """

    modes: tuple[ModeSpec, ...]
    cross_kerr_mhz: np.ndarray = field(repr=False)

    def __post_init__(self):
        chi = np.asarray(self.cross_kerr_mhz, dtype=float)
        n = len(self.modes)
        if chi.shape != (n, n):
            raise StateValidationError(
                f"cross-Kerr matrix shape {chi.shape} does not match {n} modes"
            )
        if not np.allclose(chi, chi.T, atol=1e-12):
            raise StateValidationError("cross-Kerr matrix must be symmetric")
        chi = chi.copy()
        chi.flags.writeable = False
        object.__setattr__(self, "cross_kerr_mhz", chi)
        labels = [m.label for m in self.modes]
        if len(set(labels)) != len(labels):
            raise StateValidationError("mode labels must be unique")

    # -- lookups ----------------------------------------------------------

    def index(self, label: str) -> int:
        for i, m in enumerate(self.modes):
            if m.label == label:
                return i
        raise KeyError(f"no mode labelled {label!r}")

    def mode(self, label: str) -> ModeSpec:
        return self.modes[self.index(label)]

    def chi_mhz(self, a: str, b: str) -> float:
        """Cross-Kerr coupling between two labelled modes, in MHz."""
        return float(self.cross_kerr_mhz[self.index(a), self.index(b)])

    def dims(self, labels: "tuple[str, ...] | list[str]") -> tuple[int, ...]:
        return tuple(self.mode(lb).dim for lb in labels)

    def subgraph(self, labels: "tuple[str, ...] | list[str]") -> "DeviceGraph":
        """Device restricted to the given modes, preserving their couplings."""
        idx = [self.index(lb) for lb in labels]
        chi = self.cross_kerr_mhz[np.ix_(idx, idx)]
        return DeviceGraph(tuple(self.modes[i] for i in idx), chi)

    def with_mode(self, label: str, **overrides) -> "DeviceGraph":
        """Copy of the device with one mode's parameters replaced."""
        i = self.index(label)
        spec = self.modes[i]
        fields = {
            "label": spec.label,
            "dim": spec.dim,
            "t1_us": spec.t1_us,
            "t2_us": spec.t2_us,
            "n_th": spec.n_th,
            "self_kerr_mhz": spec.self_kerr_mhz,
        }
        fields.update(overrides)
        modes = list(self.modes)
        modes[i] = ModeSpec(**fields)
        return DeviceGraph(tuple(modes), self.cross_kerr_mhz)

    def without_thermal(self) -> "DeviceGraph":
        """Copy with all thermal occupations set to zero."""
        dev = self
        for m in self.modes:
            if m.n_th != 0.0:
                dev = dev.with_mode(m.label, n_th=0.0)
        return dev


def _device_from_dict(payload: dict) -> DeviceGraph:
    try:
        modes = tuple(
            ModeSpec(
                label=m["label"],
                dim=int(m["dim"]),
                t1_us=float(m["T1_us"]),
                t2_us=float(m["T2_us"]) if m.get("T2_us") is not None else 2.0 * float(m["T1_us"]),
                n_th=float(m.get("n_th", 0.0)),
                self_kerr_mhz=float(m.get("self_kerr_MHz", 0.0)),
            )
            for m in payload["modes"]
        )
        chi = np.asarray(payload["chi_MHz"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed device file: {exc}") from exc
    return DeviceGraph(modes, chi)


def load_device(path: "str | Path") -> DeviceGraph:
    """Load a device description from a JSON file.

    Expected schema: a ``"modes"`` array of objects with keys ``label``,
    ``dim``, ``T1_us``, ``T2_us`` (null allowed, meaning 2*T1), ``n_th``,
    ``self_kerr_MHz``; and a symmetric ``"chi_MHz"`` matrix in mode order.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"device file not found: {path}")
    with open(path) as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(
                f"device file {path}: invalid JSON at line {exc.lineno}, column {exc.colno}"
            ) from exc
    return _device_from_dict(payload)


def default_device() -> DeviceGraph:
    """The device shipped with the package (seven modes, measured couplings).

    Quantities quoted as ranges on hardware are stored as midpoints; edit a
    copy of ``device_default.json`` to override.
    """
    text = resources.files("epsim.data").joinpath("device_default.json").read_text()
    return _device_from_dict(json.loads(text))
