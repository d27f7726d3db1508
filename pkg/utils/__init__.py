from .error_handlers import exit_code_for, handle_workbench_error
from .rng import GENERATOR_NAME, as_generator, trial_rng
from .validators import (
    ExperimentRequestValidator,
    KeySpaceQueryValidator,
    trials_within_limit,
    validate_query_params,
    validate_request_data,
)

__all__ = ['exit_code_for', 'handle_workbench_error', 'GENERATOR_NAME', 'as_generator',
           'trial_rng', 'ExperimentRequestValidator', 'KeySpaceQueryValidator',
           'trials_within_limit', 'validate_query_params', 'validate_request_data']
