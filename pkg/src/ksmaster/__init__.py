"""Neural-network solver for the master equation of a Krusell-Smith economy.

Modules: ``measures`` (discrete wealth distributions), ``economy`` (prices,
utility, consumption rule), ``transport`` (push-forward of measures),
``neuralnet`` (value networks, Adam/L-BFGS, checkpoints), ``solver`` (Bellman
targets and the outer fixed-point loop), ``aiyagari`` (stationary baseline),
``export`` and ``cli``.
"""

from .aiyagari import AiyagariEquilibrium, equilibrium, solve_individual
from .config import ConfigError, RunConfig
from .economy import EconomyParams, consumption_rule, prices
from .measures import DiscreteMeasure, Grid, MeasureError, equal_mass_grid, project
from .neuralnet import NetSpec, TrainConfig, ValueNetwork
from .solver import FixedPointConfig, SampleConfig, frozen_measure_mode, solve
from .transport import TransportConfig, push_forward

__version__ = "0.1.0"

__all__ = [
    "AiyagariEquilibrium", "ConfigError", "DiscreteMeasure", "EconomyParams", "FixedPointConfig", "Grid",
    "MeasureError", "NetSpec", "RunConfig", "SampleConfig", "TrainConfig", "TransportConfig", "ValueNetwork",
    "consumption_rule", "equal_mass_grid", "equilibrium", "frozen_measure_mode", "prices", "project",
    "push_forward", "solve", "solve_individual",
]
