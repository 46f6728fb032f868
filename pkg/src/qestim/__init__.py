"""Quantum parameter-estimation toolbox.

Schemes bundle a probe state, parameterized dynamics, measurement, and prior;
the metrology module evaluates estimation bounds (QFIM/CFIM, Holevo and
Nagaoka bounds, Bayesian Van Trees bounds); optimization, adaptive
measurement, and error budgeting operate on the same scheme objects.

Submodules are imported lazily so the command-line entry point can configure
threading environment variables before numpy loads.
"""

__version__ = "0.1.0"

_EXPORTS = {
    # validation
    "ValidationError": "._linalg",
    # scheme building blocks
    "ProbeState": ".scheme",
    "HamiltonianSpec": ".scheme",
    "ControlSpec": ".scheme",
    "DecayChannel": ".scheme",
    "MeasurementSpec": ".scheme",
    "PriorSpec": ".scheme",
    "Scheme": ".scheme",
    "make_general_scheme": ".scheme",
    "sic_povm": ".scheme",
    "plus_state": ".scheme",
    "minus_state": ".scheme",
    "bell_state": ".scheme",
    "builtin_state": ".scheme",
    # dynamics
    "LindbladSpec": ".dynamics",
    "KrausSpec": ".dynamics",
    "Trajectory": ".dynamics",
    "evolve": ".dynamics",
    "kraus_apply": ".dynamics",
    # metrology
    "SldConfig": ".metrology",
    "BoundResult": ".metrology",
    "sld": ".metrology",
    "qfim": ".metrology",
    "cfim": ".metrology",
    "vtb": ".metrology",
    "qvtb": ".metrology",
    "hcrb": ".metrology",
    "nhb": ".metrology",
    # optimization
    "ControlOpt": ".optimize",
    "StateOpt": ".optimize",
    "MeasurementOpt": ".optimize",
    "CompOpt": ".optimize",
    "ObjectiveConfig": ".optimize",
    "GRAPE": ".optimize",
    "PSO": ".optimize",
    "DE": ".optimize",
    "OptimizationRecord": ".optimize",
    "optimize": ".optimize",
    # NV magnetometer
    "NVParams": ".nv",
    "spin1_ops": ".nv",
    "nv_hamiltonian": ".nv",
    "nv_scheme": ".nv",
    # adaptive loop
    "AdaptiveStrategy": ".adaptive",
    "SimulatedOutcomes": ".adaptive",
    "ReplayOutcomes": ".adaptive",
    "EpisodeRecord": ".adaptive",
    "AdaptationLog": ".adaptive",
    "adapt": ".adaptive",
    "write_episode_csv": ".adaptive",
    # error budgeting
    "ErrorBudget": ".error_analysis",
    "error_evaluation": ".error_analysis",
    "error_control": ".error_analysis",
    # configuration
    "ConfigError": ".config",
    "load_config": ".config",
    "build_scheme": ".config",
}

__all__ = ["__version__", *sorted(_EXPORTS)]


def __getattr__(name):
    target = _EXPORTS.get(name)
    if target is None:
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
    from importlib import import_module

    value = getattr(import_module(target, __name__), name)
    globals()[name] = value
    return value


def __dir__():
    return sorted(set(globals()) | set(_EXPORTS))
