from .config_io import emit_config, emit_csv, parse_config, read_config_file
from .experiments import ExperimentKind, parse_experiment_spec, run_experiment
from .presets import get_preset, list_presets

__all__ = ['emit_config', 'emit_csv', 'parse_config', 'read_config_file', 'ExperimentKind',
           'parse_experiment_spec', 'run_experiment', 'get_preset', 'list_presets']
