import json

from mfgc_lab.models.solver import ExperimentConfig, SweepConfig


def cmd_schema(sweep: bool = False) -> int:
    """Print the JSON schema of the experiment (or sweep) config."""
    model = SweepConfig if sweep else ExperimentConfig
    print(json.dumps(model.model_json_schema(), indent=2))
    return 0
