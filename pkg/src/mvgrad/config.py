"""Plain-text experiment configuration: key/value sections, no scripting.

A config file selects a scenario, the particle/grid scale, seeds, and the
checks to run, in INI syntax.  Everything needed to replay a run byte for
byte lives in the parsed structure, which the runner echoes into the JSON
manifest.
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass
from typing import Optional

from .errors import ConfigError
from .scenarios import scenario_names

_KNOWN_SCENARIOS_EXTRA = ("custom",)


def _floats(text: str) -> list:
    return [float(tok) for tok in text.replace(",", " ").split()]


def _ints(text: str) -> list:
    return [int(tok) for tok in text.replace(",", " ").split()]


def _names(text: str) -> list:
    return [tok for tok in text.replace(",", " ").split()]


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description."""

    scenario: str = "brownian"
    n_particles: int = 5000
    n_steps: int = 1000
    t: float = 1.0
    seed: int = 7
    ci_seeds: tuple = (101, 202, 303, 404)

    schedule: str = "linear"
    schedules: tuple = ("linear", "quadratic", "sine")
    observables: tuple = ("coord1",)
    perturbations: tuple = ("const_e1",)
    checks: tuple = ()            # empty: use the scenario's declared checks

    eps_ladder: tuple = (0.1, 0.05, 0.025)
    t_grid: tuple = (0.05, 0.1, 0.2, 0.4)
    tv_shift: float = 0.5
    moment_variances: tuple = (0.1, 1.0, 10.0, 100.0)
    stability_shifts: tuple = (0.02, 0.2, 2.0)

    out_dir: str = "out"
    parallel: int = 1
    custom: Optional[dict] = None

    @property
    def dt(self) -> float:
        return self.t / self.n_steps

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> None:
        problems = []
        if self.scenario not in scenario_names() and self.scenario not in _KNOWN_SCENARIOS_EXTRA:
            problems.append(f"unknown scenario {self.scenario!r}")
        if self.scenario == "custom" and not self.custom:
            problems.append("scenario 'custom' needs a [custom] section")
        if self.n_particles < 1:
            problems.append("n_particles must be positive")
        if self.n_steps < 1:
            problems.append("n_steps must be positive")
        if not self.t > 0:
            problems.append("t must be positive")
        if self.parallel < 1:
            problems.append("parallel must be >= 1")
        if not self.ci_seeds:
            problems.append("ci_seeds must be nonempty")
        if any(e <= 0 for e in self.eps_ladder):
            problems.append("eps_ladder entries must be positive")
        if any(t <= 0 for t in self.t_grid):
            problems.append("t_grid entries must be positive")
        if problems:
            raise ConfigError("; ".join(problems))


def parse_config_text(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse failure: {exc}") from exc

    kw = {}
    try:
        if parser.has_section("experiment"):
            sec = parser["experiment"]
            if "scenario" in sec:
                kw["scenario"] = sec["scenario"].strip()
            if "n_particles" in sec:
                kw["n_particles"] = sec.getint("n_particles")
            if "n_steps" in sec:
                kw["n_steps"] = sec.getint("n_steps")
            if "t" in sec:
                kw["t"] = sec.getfloat("t")
            if "seed" in sec:
                kw["seed"] = sec.getint("seed")
            if "ci_seeds" in sec:
                kw["ci_seeds"] = tuple(_ints(sec["ci_seeds"]))
        if parser.has_section("estimator"):
            sec = parser["estimator"]
            if "schedule" in sec:
                kw["schedule"] = sec["schedule"].strip()
            if "schedules" in sec:
                kw["schedules"] = tuple(_names(sec["schedules"]))
            if "observables" in sec:
                kw["observables"] = tuple(_names(sec["observables"]))
            if "perturbations" in sec:
                kw["perturbations"] = tuple(_names(sec["perturbations"]))
            if "checks" in sec:
                kw["checks"] = tuple(_names(sec["checks"]))
        if parser.has_section("oracle"):
            sec = parser["oracle"]
            if "eps_ladder" in sec:
                kw["eps_ladder"] = tuple(_floats(sec["eps_ladder"]))
            if "t_grid" in sec:
                kw["t_grid"] = tuple(_floats(sec["t_grid"]))
            if "tv_shift" in sec:
                kw["tv_shift"] = sec.getfloat("tv_shift")
            if "moment_variances" in sec:
                kw["moment_variances"] = tuple(_floats(sec["moment_variances"]))
            if "stability_shifts" in sec:
                kw["stability_shifts"] = tuple(_floats(sec["stability_shifts"]))
        if parser.has_section("output"):
            sec = parser["output"]
            if "directory" in sec:
                kw["out_dir"] = sec["directory"].strip()
            if "parallel" in sec:
                kw["parallel"] = sec.getint("parallel")
        if parser.has_section("custom"):
            sec = parser["custom"]
            custom = {}
            for key, raw in sec.items():
                if key == "family":
                    custom["family"] = raw.strip()
                elif key == "d":
                    custom["d"] = int(raw)
                else:
                    custom[key] = float(raw)
            kw["custom"] = custom
    except (ValueError, configparser.Error) as exc:
        raise ConfigError(f"config value error: {exc}") from exc

    cfg = ExperimentConfig(**kw)
    cfg.validate()
    return cfg


def load_config(path) -> tuple[ExperimentConfig, str]:
    """Parse and validate a config file; returns (config, raw text)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text), text
