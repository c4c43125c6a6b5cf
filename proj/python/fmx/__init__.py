# Copyright 2026 The fmx Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Python bindings for the fmx foundation-expert recommender."""

import json
import os

from fmx import _core
from fmx._core import (
    ConfigError,
    FormatError,
    MetricUndefined,
    StageError,
    ne_diff_percent,
    normalized_entropy,
    transfer_ratio,
)

__all__ = [
    "ConfigError",
    "FormatError",
    "MetricUndefined",
    "StageError",
    "generate_events",
    "inspect",
    "load_checkpoint",
    "load_config",
    "ne_diff_percent",
    "normalized_entropy",
    "resolve_config",
    "run",
    "transfer_ratio",
]


def _as_config(config):
    if isinstance(config, (str, os.PathLike)):
        with open(config) as f:
            return json.load(f)
    return config


def resolve_config(config):
    """Validates a run config (dict or path) and returns it with defaults filled in."""
    return json.loads(_core.resolve_config(json.dumps(_as_config(config))))


def load_config(path):
    return resolve_config(path)


def run(config, out, seed=None, harness="inprocess", hypercast=None):
    """Runs the pipeline; returns the written checkpoints, logs and reports."""
    return _core.run(json.dumps(_as_config(config)), os.fspath(out), seed, harness,
                     None if hypercast is None else os.fspath(hypercast))


def generate_events(stream=None, seed=None):
    """Generated interaction events as dicts."""
    stream = dict(stream or {})
    if seed is not None:
        stream["seed"] = seed
    return [json.loads(line) for line in _core.generate_events(json.dumps(stream))]


def inspect(path):
    """Human-readable summary of a checkpoint, event log, embedding log or report."""
    return _core.inspect(os.fspath(path))


def load_checkpoint(path):
    """Blocks of a checkpoint as {name: {"shape", "counter", "values"}} plus its fm_version."""
    return _core.load_checkpoint(os.fspath(path))
