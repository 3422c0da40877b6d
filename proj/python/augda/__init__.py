"""Python access to the augda losses, augmentations, metrics and runner."""

import json as _json

from . import _augda
from ._augda import (
    apply_affine,
    apply_bias_field,
    apply_kspace_motion,
    consistency_loss,
    dice_score,
    evaluate_case,
    hd95,
    make_report,
    preset,
    preset_names,
    render_subject,
    soft_dice_loss,
    total_loss,
    verify,
    wilcoxon_signed_rank,
)

__all__ = [
    "apply_affine",
    "apply_bias_field",
    "apply_kspace_motion",
    "consistency_loss",
    "dice_score",
    "evaluate_case",
    "hd95",
    "load_config",
    "make_report",
    "preset",
    "preset_names",
    "render_subject",
    "run_experiment",
    "significance_ranking",
    "soft_dice_loss",
    "total_loss",
    "verify",
    "wilcoxon_signed_rank",
]


def load_config(path):
    """Validated experiment config as a dict, with every default filled in."""
    return _json.loads(_augda.load_config_json(str(path)))


def run_experiment(config, out=None):
    """Runs a config (dict or path) and writes its report. Returns the CLI exit code."""
    if not isinstance(config, dict):
        config = load_config(config)
    return _augda.run_experiment_json(_json.dumps(config), "" if out is None else str(out))


def significance_ranking(methods, p_threshold=0.01):
    """Ranks methods given as {name: [case dict, ...]}.

    Case dicts carry case_id and dice, plus optional hd95_mm, vd and recall.
    """
    names = list(methods)
    cases = [[dict(c) for c in methods[n]] for n in names]
    return _augda.significance_ranking(names, cases, p_threshold)
