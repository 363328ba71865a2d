"""ReRAM crossbar simulation, characterization and design-space exploration."""

from .calibration import Anchor, CalibrationError, CalibrationResult, calibrate_to_anchors
from .circuit import (CellArray, CrossbarConfig, DcSolution, NodalSystem, NonConvergence, SingularSystem,
                      SolverError, SolverOptions, Termination, build_system, elmore_delay, linear_geff,
                      max_frequency, solve_dc)
from .config import ConfigError, ToolkitConfig
from .device import (CellState, DeviceParams, SinhCell, cell_current, cell_small_signal_conductance,
                     fit_sinh_params)
from .dse import (AdcEnergyModel, Constraints, DesignPoint, ExplorationResult, Grid, NoFeasiblePoint,
                  adc_energy, energy_efficiency, explore, export_heatmaps, throughput, total_power)
from .surrogate import (FingerprintMismatch, InsufficientSizes, OutOfRange, SurrogateModel, build_surrogate,
                        normalized_profile_collapse, predict_rmse_max, predict_sum_g)
from .testbench import (AdcQuantizer, CharacterizationResult, FullScaleMode, TestbenchConfig, characterize,
                        extract_geff, per_cell_rmse, quantize_current, reference_current, run_segment,
                        triangle_samples, worst_case_array_power)

__version__ = "0.1.0"
