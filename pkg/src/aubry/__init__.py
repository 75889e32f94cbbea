"""Numerical toolkit for Aubry-Mather objects of time-periodic
Hamiltonians on the circle: minimal action kernels, the Peierls
barrier and its critical value, Aubry / Mane / Mather sets and static
classes, a phase-space chain barrier built from budgeted
epsilon-chains, and executable symplectic-invariance checks."""

__version__ = "0.1.0"

from .action import ActionKernel, ConfigGrid, build_kernel, one_step_action
from .barrier import (AubryData, BarrierTable, StaticClassPartition,
                      aubry_momenta, mane_momenta, mane_set, mather_set,
                      peierls_barrier, projected_aubry_set, static_classes,
                      triangle_defect, weak_kam_residual)
from .critical import (ClassificationResult, CriticalResult, critical_value,
                       criticality_class, min_mean_cycle)
from .dynamics import (ExtendedState, HamiltonianModel, LagrangianView,
                       PhasePoint, circle_dist, double_well, flow_step,
                       forced_pendulum, free_particle, hamiltonian_vector_field,
                       legendre_transform, make_model, pendulum,
                       running_action, wrap_unit)
from .phase import (PhaseGraph, PhaseGrid, biasymptotic_check,
                    budget_value_iteration, build_phase_graph, phase_barrier,
                    phase_barrier_all, static_classes_phase,
                    symplectic_aubry_set, symplectic_mane_set,
                    symplectic_mather_set)
from .symplectic import (ExactMap, InvarianceReport, compose, cosine_shift,
                         exactness_certificate, identity_map,
                         invariance_report, momentum_shift_map,
                         pullback_hamiltonian)
