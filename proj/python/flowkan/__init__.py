"""Python access to the flowkan C++ core.

Configs travel as dicts; the extension validates them and fills in defaults.
"""

import json

from . import _flowkan
from ._flowkan import (
    ConfigError,
    bspline_basis,
    spline_oracle,
    wkv_bidirectional,
    wkv_oracle,
    wkv_scan,
)

__all__ = [
    "ConfigError",
    "bench",
    "bspline_basis",
    "config",
    "config_hash",
    "count_params",
    "count_stage_spline_coefficients",
    "evaluate",
    "gen_demos",
    "self_check",
    "spline_oracle",
    "train",
    "wkv_bidirectional",
    "wkv_oracle",
    "wkv_scan",
]


def _dump(cfg):
    return json.dumps(cfg or {})


def config(overrides=None):
    """Full run config with `overrides` applied; raises ConfigError on bad keys."""
    return json.loads(_flowkan.normalize_config(_dump(overrides)))


def config_hash(cfg=None):
    return _flowkan.config_hash(_dump(cfg))


def count_params(cfg=None):
    return _flowkan.count_params(_dump(cfg))


def count_stage_spline_coefficients(stage, cfg=None):
    return _flowkan.count_stage_spline_coefficients(_dump(cfg), stage)


def gen_demos(path, count=None, cfg=None):
    cfg = config(cfg)
    return _flowkan.gen_demos(_dump(cfg), cfg["demos"] if count is None else count, str(path))


def train(corpus, out_dir, cfg=None, resume=None):
    return _flowkan.train(_dump(cfg), str(corpus), str(out_dir), None if resume is None else str(resume))


def evaluate(checkpoint, eval_cfg=None, n_steps=0):
    text = "" if eval_cfg is None else json.dumps(eval_cfg)
    return json.loads(_flowkan.evaluate(str(checkpoint), text, n_steps))


def bench(checkpoint=None, steps=(1, 10), repeats=20, seed=0):
    return _flowkan.bench(None if checkpoint is None else str(checkpoint), list(steps), repeats, seed)


def self_check(seed=0):
    return _flowkan.self_check(seed)
