"""Safety filters for time-delay systems built on control barrier functionals."""
from .errors import (CbfalError, DegenerateConstraint, GradientMismatch, InvalidOverride,
                     MissingDerivativeHistory, NonFiniteState, NonMonotoneTime, NotExtendable,
                     QueryOutsideSpan, UnknownScenario)
from .functionals import (CbfalSpec, ClassKeFn, DelayStructure, DensityTerm, DoubleDensityTerm,
                          ExtendedSpec, GeneralFunctionalSpec, KernelTerm, PointWeight,
                          build_from_general, classify_relative_degree, eval_split_derivative,
                          eval_value, extend)
from .history import HistoryWindow, InitialHistory
from .integrator import ControlAffinePlant, SimConfig, SimRecord, Trajectory, simulate
from .safety_filter import FilterSpec, apply_filter

__version__ = "0.1.0"
