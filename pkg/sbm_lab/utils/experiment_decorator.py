"""
Decorator utilities for creating experiments.
"""
import functools
import logging
from typing import Any, Callable, Dict, List, Optional, Type, Union, get_type_hints
from dataclasses import dataclass, field
from pydantic import BaseModel, ValidationError, create_model
from sbm_lab.core.errors import ConfigError, LabError

logger = logging.getLogger(__name__)


@dataclass
class ExperimentMetadata:
    """Experiment metadata configuration."""
    name: str
    description: str
    outputs: List[str] = field(default_factory=list)
    config_defaults: Dict[str, Any] = field(default_factory=dict)


def config_error_from(error: ValidationError) -> ConfigError:
    """First validation failure as a ConfigError naming the dotted field path."""
    first = error.errors()[0]
    field_path = ".".join(str(part) for part in first.get("loc", ())) or "config"
    return ConfigError(field_path, first.get("msg", str(error)))


def experiment(
    name: str,
    description: str,
    *,
    input_model: Optional[Type[BaseModel]] = None,
    outputs: List[str] = None,
    config_defaults: Dict[str, Any] = None,
):
    """
    Decorator to create an experiment from a function.

    The function receives the validated input model and the run context:

    ```python
    class PdeInput(ExperimentInput):
        grid: GridConfig
        t: float = 0.5

    @experiment(name="pde", description="Log-Laplace checks", input_model=PdeInput)
    def run_pde(params: PdeInput, run: RunContext) -> Dict:
        ...
    ```
    """
    def decorator(func):
        # Create input model from function signature if not provided
        nonlocal input_model
        if input_model is None:
            hints = get_type_hints(func)
            hints = {k: (v, ...) for k, v in hints.items() if k not in ('run', 'return')}
            input_model = create_model(f"{func.__name__.title()}Input", **hints)

        metadata = ExperimentMetadata(
            name=name,
            description=description,
            outputs=outputs or [],
            config_defaults=config_defaults or {},
        )

        @functools.wraps(func)
        def wrapped_func(*args, **kwargs):
            return func(*args, **kwargs)

        def validate_input(arguments: Union[BaseModel, Dict[str, Any]]) -> BaseModel:
            if isinstance(arguments, input_model):
                return arguments
            try:
                return input_model(**{**metadata.config_defaults, **(arguments or {})})
            except ValidationError as e:
                raise config_error_from(e) from e

        # Transfer metadata to wrapped function
        wrapped_func._experiment_metadata = metadata
        wrapped_func.EXPERIMENT_NAME = name
        wrapped_func.EXPERIMENT_DESCRIPTION = description
        wrapped_func.EXPERIMENT_MODEL = input_model
        wrapped_func.EXPERIMENT_SCHEMA = input_model.model_json_schema()
        wrapped_func.validate_input = validate_input

        def register_experiment() -> Callable[..., Dict[str, Any]]:
            """Create and return a handler for this experiment."""
            def handle_experiment(arguments: Union[BaseModel, Dict[str, Any]], run) -> Dict[str, Any]:
                logger.debug(f"Experiment handler called for {name}")
                validated_input = validate_input(arguments)
                try:
                    result = wrapped_func(validated_input, run)
                except LabError:
                    # the runner maps these to exit codes
                    raise
                except Exception as e:
                    logger.error(f"Error in experiment {name}: {str(e)}", exc_info=True)
                    return {"status": "error", "error": str(e)}

                if isinstance(result, (str, int, float, bool)):
                    result = {"result": result}
                elif isinstance(result, list):
                    result = {"results": result}
                return {"status": "success", "data": result}

            return handle_experiment

        wrapped_func.register_experiment = register_experiment
        return wrapped_func

    return decorator
