"""Trans-dimensional MCMC recovery of nuclear spin baths from sparse coherence data."""
from .catalog import LatticeCatalog, load_catalog, dipolar_diamond_catalog
from .forward import ExperimentSpec, SpinBath, coherence_signal, spin_modulation, larmor
from .likelihood import LikelihoodConfig, ObservedSignal, log_likelihood
from .samplers import ChainState, ProposalConfig, TemperatureLadder, Target
from .engine import PosteriorEnsemble, ScheduleConfig, run

__version__ = "0.1.0"
