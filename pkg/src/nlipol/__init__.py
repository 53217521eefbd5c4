"""Polarization effects in a nonlinear (induced-coherence) Michelson interferometer.

Forward simulation of signal-photon fringes with a birefringent sample in the
idler or signal arm, and estimators that recover the sample retardation and
transmission from simulated or imported fringe scans.
"""

from nlipol.jones import (
    SampleSpec,
    double_pass_matrix,
    effective_idler_transmission,
    retardation_from_birefringence,
    rotation_matrix,
    transmission_coefficients,
    waveplate_matrix,
)
from nlipol.interference import (
    ArmGeometry,
    CorrelationValue,
    InterferometerConfig,
    SpectralModel,
    arm_phases,
    correlation,
    model_visibility,
    signal_rate,
    signal_rate_idler_sample,
    signal_rate_signal_sample,
    time_delay,
)
from nlipol.scan import (
    FringeScan,
    ScanPlan,
    balance_search,
    envelope_profile,
    read_scan_csv,
    synthesize_scan,
    write_scan_csv,
)
from nlipol.fitting import FitResult, fit_fringe, unwrap_phases, visibility_minmax
from nlipol.retardation import (
    RetardationEstimate,
    TransmissionEstimate,
    VisibilityCurve,
    estimate_transmission,
    fit_visibility_curve,
    method1_phase_shift,
    method2_visibility_ratio,
)

__version__ = "0.1.0"
