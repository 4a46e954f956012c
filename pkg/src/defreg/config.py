"""JSON configuration: defaults, validation and canonical serialization.

Defaults (``{}`` expands to exactly this, with ``schedule.lr`` resolved
from the transform kind)::

    similarity  kind=lncc window=9 bins=32
    weights     image=1.0 label=0.0 reg=0.5 reg_kind=bending label_kind=dice
    transform   kind=ddf steps=7 control_spacing=4
    schedule    levels=3 iters=[100, 100, 50] lr=[0.1]*levels
                (0.5 for bspline, 0.001 for affine)
    seed        0
    threads     1
"""
import copy
import json
import os

from .errors import DomainError, JsonInvalid, UnknownKey

DEFAULTS = {
    "similarity": {"kind": "lncc", "window": 9, "bins": 32},
    "weights": {"image": 1.0, "label": 0.0, "reg": 0.5, "reg_kind": "bending",
                "label_kind": "dice"},
    "transform": {"kind": "ddf", "steps": 7, "control_spacing": 4},
    "schedule": {"levels": 3, "iters": None, "lr": None},
    "seed": 0,
    "threads": 1,
}

DEFAULT_LR = {"ddf": 0.1, "svf": 0.1, "bspline": 0.5, "affine": 0.001}


def _is_int(x):
    return isinstance(x, int) and not isinstance(x, bool)


def _is_num(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _merge(defaults, given, path):
    if not isinstance(given, dict):
        raise DomainError(f"{path or 'config'} must be a JSON object")
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        where = f"{path}.{key}" if path else key
        if key not in defaults:
            raise UnknownKey(f"unknown key {where!r}")
        if isinstance(defaults[key], dict):
            out[key] = _merge(defaults[key], value, where)
        else:
            out[key] = value
    return out


def _require(cond, path, message):
    if not cond:
        raise DomainError(f"{path}: {message}")


def _load(source):
    if isinstance(source, dict):
        return source
    if isinstance(source, os.PathLike) or (isinstance(source, str)
                                           and not source.lstrip().startswith("{")):
        try:
            with open(source, encoding="utf-8") as fh:
                source = fh.read()
        except OSError as exc:
            raise JsonInvalid(f"cannot read config {source}: {exc}") from exc
    try:
        doc = json.loads(source)
    except json.JSONDecodeError as exc:
        raise JsonInvalid(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise JsonInvalid("config must be a JSON object")
    return doc


def parse_config(source):
    """Parse a config from a dict, JSON text or a path; fill defaults and validate."""
    cfg = _merge(DEFAULTS, _load(source), "")

    sim = cfg["similarity"]
    _require(sim["kind"] in ("ssd", "gncc", "lncc", "mi"), "similarity.kind",
             "must be one of ssd, gncc, lncc, mi")
    _require(_is_int(sim["window"]) and sim["window"] >= 3, "similarity.window",
             "must be an integer >= 3")
    _require(sim["window"] % 2 == 1, "similarity.window", "window must be odd")
    _require(_is_int(sim["bins"]) and sim["bins"] >= 4, "similarity.bins", "must be an integer >= 4")

    w = cfg["weights"]
    for key in ("image", "label", "reg"):
        _require(_is_num(w[key]) and w[key] >= 0, f"weights.{key}", "must be a number >= 0")
        w[key] = float(w[key])
    _require(w["image"] > 0 or w["label"] > 0, "weights",
             "at least one of image and label must be positive")
    _require(w["reg_kind"] in ("gradient_l2", "bending"), "weights.reg_kind",
             "must be gradient_l2 or bending")
    _require(w["label_kind"] in ("dice", "ce"), "weights.label_kind", "must be dice or ce")

    t = cfg["transform"]
    _require(t["kind"] in DEFAULT_LR, "transform.kind", "must be one of ddf, svf, bspline, affine")
    _require(_is_int(t["steps"]) and 0 <= t["steps"] <= 16, "transform.steps",
             "must be an integer in [0, 16]")
    cs = t["control_spacing"]
    _require((_is_int(cs) and cs >= 2)
             or (isinstance(cs, list) and len(cs) == 3 and all(_is_int(c) and c >= 2 for c in cs)),
             "transform.control_spacing", "must be an integer >= 2 or three of them")

    s = cfg["schedule"]
    _require(_is_int(s["levels"]) and s["levels"] >= 1, "schedule.levels", "must be an integer >= 1")
    if s["iters"] is None:
        s["iters"] = [100] * (s["levels"] - 1) + [50]
    if s["lr"] is None:
        s["lr"] = [DEFAULT_LR[t["kind"]]] * s["levels"]
    _require(isinstance(s["iters"], list) and len(s["iters"]) == s["levels"]
             and all(_is_int(i) and i >= 1 for i in s["iters"]),
             "schedule.iters", "must list one positive integer per level")
    _require(isinstance(s["lr"], list) and len(s["lr"]) == s["levels"]
             and all(_is_num(r) and r > 0 for r in s["lr"]),
             "schedule.lr", "must list one positive number per level")
    s["lr"] = [float(r) for r in s["lr"]]

    _require(_is_int(cfg["seed"]) and 0 <= cfg["seed"] < 2 ** 64, "seed",
             "must be an integer in [0, 2**64)")
    _require(_is_int(cfg["threads"]) and cfg["threads"] >= 1, "threads", "must be an integer >= 1")
    return cfg


def serialize_config(cfg):
    return json.dumps(cfg, indent=2, sort_keys=True) + "\n"
