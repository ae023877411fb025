"""Flat ``key = value`` run configuration with dotted section names.

The format is deliberately dumb: one assignment per line, ``#`` comments,
no nesting, no string quoting.  Every recognized key is listed in
``SCHEMA`` with its type and default; unknown keys are a hard error (a
misspelled key must never silently fall back to a default).
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import ConfigError
from .gridref import contamination_horizon
from .profiles import PhysicalConstants, make_profile
from .soliton import V_MAX


def _as_bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _as_vec3(s):
    parts = s.replace(",", " ").split()
    if len(parts) != 3:
        raise ValueError(f"need three components, got {s!r}")
    return np.array([float(p) for p in parts])


def _as_floats(s):
    parts = s.replace(",", " ").split()
    return [float(p) for p in parts]


def _as_optfloat(s):
    return None if s.strip().lower() in ("none", "") else float(s)


# key -> (parser, default). Defaults are the desk-scale reference values.
SCHEMA = {
    "constants.e": (float, 1.0),
    "constants.m": (float, 1.0),
    "profile.shape": (str, "bump"),
    "profile.radius": (float, 1.0),
    "initial.position": (_as_vec3, np.zeros(3)),
    "initial.velocity": (_as_vec3, np.zeros(3)),
    "initial.pulse_amplitude": (float, 0.0),
    "initial.pulse_center": (_as_vec3, np.array([6.0, 0.0, 0.0])),
    "initial.pulse_width": (float, 1.5),
    "initial.pulse_polarization": (_as_vec3, np.array([0.0, 0.0, 1.0])),
    "dynamics.dt": (float, 0.05),
    "dynamics.t_final": (float, 10.0),
    "dynamics.fixed_point_tol": (float, 1e-10),
    "dynamics.max_iters": (int, 50),
    "dynamics.tau_cut": (_as_optfloat, None),
    "dynamics.quality": (str, "fast"),
    "grid.N": (int, 96),
    "grid.L": (float, 32.0),
    "grid.dt": (float, 0.05),
    "grid.snapshot_times": (_as_floats, []),
    "grid.sample_every": (int, 1),
    "grid.project_gauss": (_as_bool, True),
    "grid.allow_wraparound": (_as_bool, False),
    "diagnostics.candidate_ds": (float, 0.2),
    "diagnostics.windows": (int, 4),
    "diagnostics.jacobian_samples": (int, 20),
    "propagate.points": (int, 20),
    "propagate.tolerance": (float, 1e-3),
    "seed": (int, 0),
}


class RunConfig:
    """Validated key-value store; access with cfg["section.key"]."""

    def __init__(self, values=None):
        self._values = {k: d for k, (_, d) in SCHEMA.items()}
        if values:
            for k, v in values.items():
                if k not in SCHEMA:
                    raise ConfigError(f"unknown config key {k!r}")
                self._values[k] = v
        self._validate()

    def __getitem__(self, key):
        try:
            return self._values[key]
        except KeyError:
            raise ConfigError(f"unknown config key {key!r}") from None

    def keys(self):
        return self._values.keys()

    # -- physics accessors ----------------------------------------------------

    @property
    def constants(self) -> PhysicalConstants:
        return PhysicalConstants(self["constants.e"], self["constants.m"])

    @property
    def profile(self):
        return make_profile(self["profile.shape"], self["profile.radius"])

    @property
    def pulse(self):
        if self["initial.pulse_amplitude"] == 0.0:
            return None
        from .initial_data import PulseSpec
        return PulseSpec(self["initial.pulse_center"],
                         self["initial.pulse_width"],
                         self["initial.pulse_amplitude"],
                         self["initial.pulse_polarization"])

    def _validate(self):
        v = np.linalg.norm(self["initial.velocity"])
        if v >= V_MAX:
            raise ConfigError(
                f"|initial.velocity| = {v:.4f} is not below the cap {V_MAX}")
        if self["grid.N"] < 4 or self["grid.N"] % 2 != 0:
            raise ConfigError("grid.N must be an even integer >= 4")
        for key in ("profile.radius", "grid.L", "grid.dt", "dynamics.dt"):
            if not (self[key] > 0.0):
                raise ConfigError(f"{key} must be positive")
        horizon = contamination_horizon(self["grid.L"], self["profile.radius"])
        if (self["dynamics.t_final"] > horizon
                and not self["grid.allow_wraparound"]):
            raise ConfigError(
                f"t_final = {self['dynamics.t_final']:g} exceeds the "
                f"no-contamination horizon {horizon:g} of the "
                f"L = {self['grid.L']:g} box "
                f"(set grid.allow_wraparound = true to accept torus physics)")

    # -- serialization ---------------------------------------------------------

    def canonical_text(self):
        """Every key, sorted, normalized formatting; hash input and manifest."""
        lines = []
        for k in sorted(self._values):
            v = self._values[k]
            if isinstance(v, np.ndarray):
                s = " ".join(f"{x:.17g}" for x in v)
            elif isinstance(v, list):
                s = " ".join(f"{x:.17g}" for x in v)
            elif isinstance(v, bool):
                s = "true" if v else "false"
            elif isinstance(v, float):
                s = f"{v:.17g}"
            elif v is None:
                s = "none"
            else:
                s = str(v)
            lines.append(f"{k} = {s}")
        return "\n".join(lines) + "\n"

    def sha256(self):
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()


def parse_config(text: str) -> RunConfig:
    """Parse config text; unknown keys and bad values are collected into a
    single error so a typo report names everything at once."""
    values = {}
    unknown = []
    bad = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            bad.append(f"line {lineno}: expected 'key = value', got {raw!r}")
            continue
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in SCHEMA:
            unknown.append(f"line {lineno}: unknown key {key!r}")
            continue
        parser, _ = SCHEMA[key]
        try:
            values[key] = parser(val)
        except (ValueError, TypeError) as exc:
            bad.append(f"line {lineno}: bad value for {key!r}: {exc}")
    problems = unknown + bad
    if problems:
        raise ConfigError("config rejected:\n  " + "\n  ".join(problems))
    return RunConfig(values)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())
