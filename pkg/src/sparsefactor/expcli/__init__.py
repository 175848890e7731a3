"""Experiment harness: strict configs, task runners and run manifests."""
from .config import ConfigError, ExperimentConfig, eps_n, parse_config, parse_config_text
from .manifest import RunManifest, load_manifest, write_csv
from .runner import COMMANDS, RunResult, cmd_conclab, cmd_geweke, cmd_rates, cmd_testfns
