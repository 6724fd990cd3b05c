"""Run configuration: a flat-ish JSON document with nested schedule and problem blocks."""
import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

from .oracles import PROBLEMS

ESTIMATOR_KINDS = ("dl-sgd", "rt-mlmc", "maml", "wdro-gda", "erm")


class ConfigError(ValueError):
    """A configuration document is malformed or inconsistent."""


@dataclass
class ScheduleConfig:
    kind: str = "constant"
    alpha0: float = 0.01
    t0: int = 1


@dataclass
class RunConfig:
    """Everything needed to reproduce a run, bench or diagnosis.

    ``problem_params`` are passed to the problem factory. ``n_trials`` is the
    number of estimator draws per row for ``bench`` and ``diagnose``;
    ``sweep_scalings`` tunes how ``eps_list`` maps to sweep parameters.
    ``timing=False`` records wall-clock fields as zero so that outputs are
    byte-identical across reruns.
    """

    problem: str = "quadratic"
    problem_params: dict = field(default_factory=lambda: {"d_x": 5, "d_y": 5, "d_xi": 5})
    estimator: str = "rt-mlmc"
    K: int = 6
    N: int = 20
    beta0: Optional[float] = None
    warm_start: bool = False
    T: int = 1000
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    seed: int = 0
    n_trials: int = 100
    output: Optional[str] = None
    log_interval: int = 10
    output_rule: str = "uniform"
    x1: Optional[list] = None
    maml_steps: int = 1
    inner_step: float = 0.05
    T_in: int = 10
    penalty: Optional[float] = None
    K_list: list = field(default_factory=lambda: [6, 8, 10, 12])
    eps_list: list = field(default_factory=list)
    sweep_scalings: dict = field(default_factory=dict)
    timing: bool = True

    def validate(self):
        if self.problem not in PROBLEMS:
            raise ConfigError(f"unknown problem {self.problem!r}; choose from {sorted(PROBLEMS)}")
        if self.estimator not in ESTIMATOR_KINDS:
            raise ConfigError(f"unknown estimator {self.estimator!r}; choose from {list(ESTIMATOR_KINDS)}")
        if self.estimator == "maml" and self.problem != "meta":
            raise ConfigError("estimator 'maml' needs problem 'meta'")
        if self.estimator in ("wdro-gda", "erm") and self.problem != "wdro_si":
            raise ConfigError(f"estimator {self.estimator!r} needs problem 'wdro_si'")
        for name in ("K", "N", "T", "n_trials", "log_interval", "maml_steps"):
            val = getattr(self, name)
            if isinstance(val, bool) or not isinstance(val, int) or val < 1:
                raise ConfigError(f"{name} must be a positive integer, got {val!r}")
        if isinstance(self.T_in, bool) or not isinstance(self.T_in, int) or self.T_in < 0:
            raise ConfigError(f"T_in must be a non-negative integer, got {self.T_in!r}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")
        for name in ("beta0", "penalty"):
            val = getattr(self, name)
            if val is not None and not (_is_real(val) and val > 0):
                raise ConfigError(f"{name} must be positive, got {val!r}")
        if not (_is_real(self.inner_step) and self.inner_step >= 0):
            raise ConfigError(f"inner_step must be non-negative, got {self.inner_step!r}")
        if self.output_rule not in ("uniform", "last"):
            raise ConfigError(f"output_rule must be 'uniform' or 'last', got {self.output_rule!r}")
        if not self.K_list or any(isinstance(k, bool) or not isinstance(k, int) or k < 1
                                  for k in self.K_list):
            raise ConfigError(f"K_list must be non-empty positive integers, got {self.K_list!r}")
        if any(not (_is_real(e) and 0 < e < 1) for e in self.eps_list):
            raise ConfigError(f"eps_list entries must lie in (0, 1), got {self.eps_list!r}")
        if not isinstance(self.sweep_scalings, dict):
            raise ConfigError("sweep_scalings must be an object")
        allowed = {"k0", "kc", "n0", "nc", "alpha_c", "t_c"}
        bad = sorted(set(self.sweep_scalings) - allowed)
        if bad:
            raise ConfigError(f"unknown sweep_scalings keys: {bad}")
        if any(not _is_real(v) for v in self.sweep_scalings.values()):
            raise ConfigError("sweep_scalings values must be finite numbers")
        if not isinstance(self.problem_params, dict):
            raise ConfigError("problem_params must be an object")
        if not isinstance(self.timing, bool) or not isinstance(self.warm_start, bool):
            raise ConfigError("timing and warm_start must be booleans")
        from .outer_loop import Schedule

        try:
            Schedule(self.schedule.kind, self.schedule.alpha0, self.schedule.t0)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"schedule: {exc}") from None
        return self

    # -- serialization ----------------------------------------------------
    def to_dict(self):
        return asdict(self)

    def dumps(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def canonical(self):
        """Single-line form used to embed the resolved config in outputs."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        data = dict(data)
        sched = data.pop("schedule", {})
        if not isinstance(sched, dict):
            raise ConfigError("schedule must be an object")
        sk = {f.name for f in fields(ScheduleConfig)}
        bad = sorted(set(sched) - sk)
        if bad:
            raise ConfigError(f"unknown schedule keys: {bad}")
        return cls(schedule=ScheduleConfig(**sched), **data)

    @classmethod
    def loads(cls, text):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        return cls.from_dict(data)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.loads(fh.read())

    def with_overrides(self, overrides):
        """Apply ``{"dotted.key": value}`` overrides, returning a new config."""
        data = self.to_dict()
        for key, value in overrides.items():
            parts = key.split(".")
            node = data
            for part in parts[:-1]:
                if not isinstance(node.get(part), dict):
                    node[part] = {}
                node = node[part]
            node[parts[-1]] = value
        return RunConfig.from_dict(data)


def _is_real(val):
    return isinstance(val, (int, float)) and not isinstance(val, bool) and math.isfinite(val)
