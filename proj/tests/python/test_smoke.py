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

import json
import math
import pathlib
import random

import pytest

import fmx

ROOT = pathlib.Path(__file__).resolve().parents[2]
SMOKE = ROOT / "configs" / "smoke.cfg"


def tiny_config():
    cfg = json.loads(SMOKE.read_text())
    cfg["stream"]["n_users"] = 20
    cfg["stream"]["days"] = 3
    cfg["experiments"]["run"] = ["transfer", "compute_budget"]
    cfg["experiments"]["compute_requests"] = 10
    return cfg


def brute_ne(labels, probs):
    clip = lambda p: min(max(p, 1e-7), 1 - 1e-7)
    ce = -sum(y * math.log(clip(p)) + (1 - y) * math.log(1 - clip(p)) for y, p in zip(labels, probs)) / len(labels)
    base = sum(labels) / len(labels)
    return ce / -(base * math.log(base) + (1 - base) * math.log(1 - base))


def test_normalized_entropy_matches_brute_force():
    rng = random.Random(4)
    for _ in range(50):
        n = rng.randint(2, 40)
        labels = [rng.randint(0, 1) for _ in range(n)]
        labels[0], labels[1] = 0, 1
        probs = [rng.random() for _ in range(n)]
        assert fmx.normalized_entropy(labels, probs) == pytest.approx(brute_ne(labels, probs), abs=1e-12)


def test_base_rate_predictor_has_unit_ne():
    labels = [1, 0, 0, 1, 0]
    assert fmx.normalized_entropy(labels, [0.4] * 5) == pytest.approx(1.0, abs=1e-12)


def test_undefined_metrics_raise():
    with pytest.raises(fmx.MetricUndefined):
        fmx.normalized_entropy([1, 1], [0.5, 0.5])
    with pytest.raises(fmx.MetricUndefined):
        fmx.transfer_ratio(0.8, 0.8, 0.7, 0.6)


def test_transfer_ratio_table_row():
    # FM diff -1.14%, expert diff -1.05%
    assert fmx.transfer_ratio(0.9886, 1.0, 0.9895, 1.0) == pytest.approx(0.9211, abs=1e-4)


def test_config_rejects_unknown_key():
    cfg = tiny_config()
    cfg["stream"]["users"] = 3
    with pytest.raises(fmx.ConfigError, match="'users'"):
        fmx.resolve_config(cfg)


def test_resolved_config_is_stable():
    once = fmx.resolve_config(tiny_config())
    assert fmx.resolve_config(once) == once


def test_generate_events_deterministic():
    stream = {"n_users": 5, "n_items": 30, "days": 2}
    a = fmx.generate_events(stream, seed=3)
    assert a == fmx.generate_events(stream, seed=3)
    assert a != fmx.generate_events(stream, seed=4)
    ts = [e["ts"] for e in a]
    assert ts == sorted(ts)


def test_run_writes_reports_and_checkpoints(tmp_path):
    art = fmx.run(tiny_config(), tmp_path / "a", seed=2)
    names = sorted(pathlib.Path(p).name for p in art["reports"])
    assert names == ["compute_budget.jsonl", "sync.jsonl", "training.jsonl", "transfer.jsonl"]
    again = fmx.run(tiny_config(), tmp_path / "b", seed=2)
    for a, b in zip(art["reports"], again["reports"]):
        assert pathlib.Path(a).read_bytes() == pathlib.Path(b).read_bytes()

    budget = json.loads((tmp_path / "a" / "reports" / "compute_budget.jsonl").read_text())
    assert 0 < budget["ratio"] < 1

    full = fmx.load_checkpoint(tmp_path / "a" / "checkpoints" / "fm_large.ckpt")
    pruned = fmx.load_checkpoint(tmp_path / "a" / "checkpoints" / "fm_large.pruned.ckpt")
    assert set(pruned["blocks"]) < set(full["blocks"])
    assert all(name.startswith("enc/") for name in pruned["blocks"])
    for name, block in pruned["blocks"].items():
        assert block["values"] == full["blocks"][name]["values"]

    text = fmx.inspect(str(tmp_path / "a" / "logs" / "features.jsonl"))
    assert "fm_small" in text and "fm_large" in text


def test_inspect_truncated_checkpoint(tmp_path):
    fmx.run(tiny_config(), tmp_path / "r")
    data = (tmp_path / "r" / "checkpoints" / "fm_small.ckpt").read_bytes()
    cut = tmp_path / "cut.ckpt"
    cut.write_bytes(data[: len(data) // 2])
    with pytest.raises(fmx.FormatError):
        fmx.inspect(str(cut))
