"""epsim: entanglement pumping and purification on bosonic logical qubits.

Library layout:

- ``device``:   mode parameters and the cross-Kerr coupling graph
- ``states``:   dense states/operators, fidelity, negativity, Bell algebra
- ``dynamics``: Hamiltonians, Lindblad integration, closed-form idle channels
- ``gates``:    rotations, dispersive CZ/CNOT, echoed-CIP re-entangling gate
- ``codes``:    Fock and binomial encodings, parity error detection
- ``purify``:   purification recurrences, twirl, error-budget algebra
- ``protocol``: pumping/error-detection experiments and lifespan sweeps
- ``grape``:    piecewise-constant pulse optimization for state transfer
- ``cli``:      the ``epsim`` command line tool
"""

from .device import DeviceGraph, ModeSpec, default_device, load_device
from .states import (
    DensityMatrix,
    PureState,
    bell_basis,
    bell_state,
    bell_weights,
    negativity,
    partial_trace,
    state_fidelity,
    tensor,
)
from .dynamics import Drive, HamiltonianSpec, IntegratorConfig, idle_channel, lindblad_evolve
from .codes import Encoding, ParityOutcome, decode, detect_error, encode
from .gates import (
    CalibrationResult,
    CipParams,
    EchoedCipChannel,
    EchoResult,
    calibrate_echo,
    cip_evolve,
    dispersive_cz,
    echoed_cip,
    logical_cnot,
    rotation,
    swap_qubit_cavity,
)
from .purify import (
    BellDiagonal,
    ErrorBudget,
    bell_step,
    budget_product,
    dejmps_twirl,
    dm_purify_step,
    f_limit,
    pump_curve,
    recurrence_werner,
    werner_ratio,
)
from .protocol import (
    ProtocolConfig,
    ProtocolTrace,
    StageDurations,
    Strategy,
    run_ep_logical,
    run_ep_physical,
    sweep_lifespan,
)
from .grape import ControlProblem, PulseSchedule, optimize, propagate

__version__ = "0.1.0"
