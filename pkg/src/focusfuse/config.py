"""Runtime configuration: defaults, flat key = value files, flag precedence."""

import os
from dataclasses import dataclass, fields

from .errors import InputError
from .qnn import HyperParams
from .solver import SolverParams

ENV_CONFIG = "FOCUSFUSE_CONFIG"


@dataclass
class Config:
    """All tunable parameters; defaults follow the published values."""

    sigma_xy: int = 8
    sigma_in: float = 16.0
    lam: float = 64.0
    cg_tol: float = 1e-5
    cg_max_iters: int = 25
    bistoch_iters: int = 16
    thr: float = 0.1
    sigmoid_slope: float = 40.0
    sigmoid_mean: float = 0.5
    window: int = 7
    learning_rate: float = 0.1
    batch_size: int = 32
    epochs: int = 40
    seed: int = 0
    threads: int = 0  # 0 means hardware count

    def solver_params(self):
        return SolverParams(
            sigma_xy=self.sigma_xy,
            sigma_in=self.sigma_in,
            lam=self.lam,
            cg_tol=self.cg_tol,
            cg_max_iters=self.cg_max_iters,
            bistoch_iters=self.bistoch_iters,
        )

    def hyper_params(self):
        return HyperParams(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=self.seed,
        )

    def effective_threads(self):
        return self.threads if self.threads > 0 else (os.cpu_count() or 1)


_FIELD_TYPES = {f.name: f.type for f in fields(Config)}


def parse_config_file(path):
    """Read a flat UTF-8 "key = value" file into a typed dict.

    Blank lines and lines starting with '#' are ignored; unknown keys and
    unparseable values raise InputError.
    """
    values = {}
    try:
        with open(str(path), "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _FIELD_TYPES:
            raise InputError(f"{path}:{lineno}: unknown config key {key!r}")
        caster = int if _FIELD_TYPES[key] in (int, "int") else float
        try:
            values[key] = caster(val)
        except ValueError as exc:
            raise InputError(f"{path}:{lineno}: bad value for {key}: {val!r}") from exc
    return values


def resolve_config(overrides=None, config_path=None, env=None):
    """Compose the effective Config: defaults, then file, then explicit flags.

    When no path is given, the FOCUSFUSE_CONFIG environment variable is the
    fallback. Override entries set to None are treated as unset.
    """
    env = os.environ if env is None else env
    merged = {}
    path = config_path or env.get(ENV_CONFIG)
    if path:
        merged.update(parse_config_file(path))
    if overrides:
        merged.update({k: v for k, v in overrides.items() if v is not None})
    unknown = set(merged) - set(_FIELD_TYPES)
    if unknown:
        raise InputError(f"unknown config keys: {sorted(unknown)}")
    return Config(**merged)
