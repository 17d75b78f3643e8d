"""Adiabatic charge pumping by sliding periodic potentials in one dimension.

Three routes to the charge pumped per cycle are implemented and compared:
Chern numbers of the filled Bloch bands, the winding of the gap-state
reflection phase (equivalently, nodes of the decaying gap solution
crossing x = 0), and the scattering-matrix line integral for a pump of
N periods between free leads.
"""
from .bands import GapCertificate, band_edges, band_table, certify_gap, common_gap, gap_interval
from .chern import ChernResult, bloch_hamiltonian, chern_numbers
from .errors import (ConfigError, GapClosedError, IllConditionedError, NumericalError, PumplineError,
                     RefinementError)
from .gapstates import GapState, PhaseTrack, gap_solutions, gap_states, node_count, phase_loop
from .potential import PRESETS, FermiPoint, PotentialSpec, load_spec
from .scattering import (ScatteringMatrix, convergence_study, limit_s_matrix, s_matrix_closed_form,
                         s_matrix_direct)
from .transfer import TransferMatrix, discriminant, monodromy, propagate
from .transport import PumpReport, charge_variance, compare, pumped_charge, winding_charge

__version__ = "0.1.0"
