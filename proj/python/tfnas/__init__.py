"""Python access to the tfnas architecture search library.

Configs, architectures and descriptions are plain dicts with the same
layout as the JSON files the command-line tool reads and writes.
"""

import json

from . import _core
from ._core import ArchitectureError, ConfigError, NumericError

SCHEMA_VERSION = _core.SCHEMA_VERSION

__all__ = [
    "ArchitectureError",
    "ConfigError",
    "NumericError",
    "SCHEMA_VERSION",
    "baseline_arch",
    "config_hash",
    "default_config",
    "describe",
    "export_dot",
    "profile",
    "property_suites",
    "ramp_weight",
    "run_property_suite",
    "search",
    "slot_costs",
]


def _dump(obj):
    return obj if isinstance(obj, str) else json.dumps(obj)


def default_config():
    return json.loads(_core.default_config())


def config_hash(config):
    return _core.config_hash(_dump(config))


def profile(name="table1"):
    """A tabulated profile ("table1", "table4") or a profile JSON file."""
    return json.loads(_core.profile(name))


def baseline_arch(space):
    return json.loads(_core.baseline_arch(_dump(space)))


def slot_costs(space, profile="table1"):
    return json.loads(_core.slot_costs(_dump(space), profile))


def describe(space, arch, profile="table1"):
    return json.loads(_core.describe(_dump(space), _dump(arch), profile))


def export_dot(description):
    return _core.export_dot(_dump(description))


def search(config, on_metric=None):
    """Run one search; `on_metric` receives each metrics record as a dict."""
    cb = None if on_metric is None else (lambda text: on_metric(json.loads(text)))
    return json.loads(_core.search(_dump(config), cb))


ramp_weight = _core.ramp_weight
property_suites = _core.property_suites
run_property_suite = _core.run_property_suite
