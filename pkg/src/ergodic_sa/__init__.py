"""Stochastic approximation driven by non-ergodic, non-Markov noise.

Subpackages are plain modules:

- :mod:`markov_core`   kernels, closed classes, stationary laws, spectral gaps
- :mod:`noise_models`  Markov, order-k template and stopped-sum noise
- :mod:`mimic`         empirical pair-marginal (mimic) kernels
- :mod:`sa_engine`     the projected recursion, schedules, martingale noise
- :mod:`meanfield`     averaged fields, RK4 integration, equilibria, tracking
- :mod:`gradient_schemes`  gradient drifts, KW and SPSA estimators
- :mod:`cli`           config-driven runner
"""
from .errors import (  # noqa: F401
    ErgodicSAError, InvalidKernel, NotClosed, NotIrreducible, ClassTooLarge, WeightMismatch, NonFiniteInput, UnresolvableLabel, StateOutOfRange, NonFiniteDrift, OutOfDomain, ClassStructureChanged, SchemaError, UnknownFamily, InvalidSchedule, UnknownPreset,
)
from .markov_core import (
    Decomposition, Kernel, communicating_classes, doeblin_decompose, invariant_mixture,
    spectral_gap, stationary_distribution,
)
from .noise_models import MarkovNoise, OrderKNoise, StoppedSumNoise, exact_mimic_kernel, kernel_at
from .sa_engine import Drift, MartingaleNoise, SaRun, StepSchedule, run_batch, run_sa, sa_step, validate_schedule
from .meanfield import AveragedField, find_equilibria, integrate_ode, tracking_error
from .config import ExperimentConfig, load_config, parse_config
from .presets import list_presets

__version__ = "0.1.0"
