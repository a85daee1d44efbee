"""Benchmark problems in the maximization convention.

Raw formulas are written for minimization; ``evaluate`` negates objectives
(and each problem stores its reference point negated) so that every
hypervolume computation in the package runs as maximization. Constraints
use the ``c <= 0`` feasible convention throughout.
"""

from __future__ import annotations

import math
import shlex
import subprocess
import threading
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .candidates import sobol
from .errors import EvaluationError, InvalidArgumentError, InvalidConfigError

RawFn = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class ProblemSpec:
    """A black-box problem: raw domain, sizes, reference point and evaluator.

    ``raw_fn`` maps a raw input to (objectives to minimize, constraints).
    ``ref_point`` is already in the maximization convention.
    """

    name: str
    d: int
    M: int
    C: int
    bounds: np.ndarray
    ref_point: np.ndarray
    raw_fn: RawFn = field(repr=False, compare=False)

    def __post_init__(self):
        b = np.asarray(self.bounds, dtype=float)
        if b.shape != (self.d, 2) or np.any(b[:, 0] >= b[:, 1]):
            raise InvalidConfigError(f"{self.name}: bounds must be {self.d} (lower < upper) pairs")
        ref = np.asarray(self.ref_point, dtype=float).ravel()
        if ref.shape[0] != self.M:
            raise InvalidConfigError(f"{self.name}: reference point must have {self.M} entries")
        object.__setattr__(self, "bounds", b)
        object.__setattr__(self, "ref_point", ref)

    @property
    def lower(self) -> np.ndarray:
        return self.bounds[:, 0]

    @property
    def upper(self) -> np.ndarray:
        return self.bounds[:, 1]

    def to_raw(self, unit) -> np.ndarray:
        u = np.asarray(unit, dtype=float)
        return np.clip(self.lower + u * (self.upper - self.lower), self.lower, self.upper)

    def to_unit(self, raw) -> np.ndarray:
        x = np.asarray(raw, dtype=float)
        return (x - self.lower) / (self.upper - self.lower)


def evaluate(problem: ProblemSpec, x_raw) -> tuple[np.ndarray, np.ndarray]:
    """Objectives (maximization convention) and constraints at a raw input."""
    x = np.asarray(x_raw, dtype=float).ravel()
    if x.shape[0] != problem.d:
        raise InvalidArgumentError(f"{problem.name} expects {problem.d} inputs, got {x.shape[0]}")
    if np.any(~np.isfinite(x)) or np.any(x < problem.lower) or np.any(x > problem.upper):
        raise InvalidArgumentError(f"input outside the bounds of {problem.name}")
    f, c = problem.raw_fn(x)
    f = np.asarray(f, dtype=float).ravel()
    c = np.asarray(c, dtype=float).ravel()
    if f.shape[0] != problem.M or c.shape[0] != problem.C:
        raise EvaluationError(
            f"{problem.name} returned {f.shape[0]} objectives and {c.shape[0]} constraints, "
            f"expected {problem.M} and {problem.C}"
        )
    return -f, c


def initial_design(problem: ProblemSpec, n0: int, seed) -> np.ndarray:
    """``n0`` scrambled Sobol points mapped to the raw bounds."""
    if n0 < 1:
        raise InvalidArgumentError("n0 must be >= 1")
    return problem.to_raw(sobol(n0, problem.d, seed))


# ---------------------------------------------------------------- formulas


def _dtlz2(x: np.ndarray):
    g = np.sum((x[1:] - 0.5) ** 2)
    angle = 0.5 * math.pi * x[0]
    return np.array([(1.0 + g) * math.cos(angle), (1.0 + g) * math.sin(angle)]), np.empty(0)


def _mw7(x: np.ndarray):
    g = 1.0 + np.sum(2.0 * (x[1:] + (x[:-1] - 0.5) ** 2 - 1.0) ** 2)
    f0 = g * x[0]
    f1 = g * math.sqrt(max(1.0 - x[0] ** 2, 0.0))
    theta = math.atan2(f1, f0)
    s = math.sin(4.0 * theta)
    r2 = f0 * f0 + f1 * f1
    c0 = r2 - (1.2 + abs(0.4 * s**16)) ** 2
    c1 = (1.15 - 0.2 * s**8) ** 2 - r2
    return np.array([f0, f1]), np.array([c0, c1])


def _welded_beam(x: np.ndarray):
    x1, x2, x3, x4 = x
    load, length = 6000.0, 14.0
    tau_max, sigma_max = 13600.0, 30000.0
    cost = 1.10471 * x1**2 * x2 + 0.04811 * x3 * x4 * (14.0 + x2)
    deflection = 2.1952 / (x4 * x3**3)
    radius = math.sqrt(0.25 * (x2**2 + (x1 + x3) ** 2))
    moment = load * (length + 0.5 * x2)
    polar = 2.0 * math.sqrt(0.5) * x1 * x2 * (x2**2 / 12.0 + 0.25 * (x1 + x3) ** 2)
    tau1 = load / (math.sqrt(2.0) * x1 * x2)
    tau2 = moment * radius / polar
    tau = math.sqrt(tau1**2 + tau1 * tau2 * x2 / radius + tau2**2)
    sigma = 6.0 * load * length / (x4 * x3**2)
    buckling = 64746.022 * (1.0 - 0.0282346 * x3) * x3 * x4**3
    cons = np.array([tau - tau_max, sigma - sigma_max, x1 - x4, load - buckling])
    return np.array([cost, deflection]), cons


def _vehicle_safety(x: np.ndarray):
    x1, x2, x3, x4, x5 = x
    mass = 1640.2823 + 2.3573285 * x1 + 2.3220035 * x2 + 4.5688768 * x3 + 7.7213633 * x4 + 4.4559504 * x5
    accel = (
        6.5856 + 1.15 * x1 - 1.0427 * x2 + 0.9738 * x3 + 0.8364 * x4
        - 0.3695 * x1 * x4 + 0.0861 * x1 * x5 + 0.3628 * x2 * x4
        - 0.1106 * x1**2 - 0.3437 * x3**2 + 0.1764 * x4**2
    )
    intrusion = (
        -0.0551 + 0.0181 * x1 + 0.1024 * x2 + 0.0421 * x3 - 0.0073 * x1 * x2
        + 0.024 * x2 * x3 - 0.0118 * x2 * x4 - 0.0204 * x3 * x4 - 0.008 * x3 * x5
        - 0.0241 * x2**2 + 0.0109 * x4**2
    )
    return np.array([mass, accel, intrusion]), np.empty(0)


def dtlz2(d: int) -> ProblemSpec:
    if d < 2:
        raise InvalidConfigError("dtlz2 needs d >= 2")
    return ProblemSpec(f"dtlz2-{d}", d, 2, 0, np.tile([0.0, 1.0], (d, 1)), -np.array([6.0, 6.0]), _dtlz2)


def mw7() -> ProblemSpec:
    return ProblemSpec("mw7", 10, 2, 2, np.tile([0.0, 1.0], (10, 1)), -np.array([1.2, 1.2]), _mw7)


def welded_beam() -> ProblemSpec:
    bounds = np.array([[0.125, 5.0], [0.1, 10.0], [0.1, 10.0], [0.125, 5.0]])
    return ProblemSpec("welded-beam", 4, 2, 4, bounds, -np.array([40.0, 0.015]), _welded_beam)


def vehicle_safety() -> ProblemSpec:
    return ProblemSpec(
        "vehicle-safety", 5, 3, 0, np.tile([1.0, 3.0], (5, 1)), -np.array([1698.55, 11.21, 0.29]), _vehicle_safety
    )


BUILTIN = {
    "dtlz2-10": lambda: dtlz2(10),
    "dtlz2-30": lambda: dtlz2(30),
    "dtlz2-100": lambda: dtlz2(100),
    "mw7": mw7,
    "welded-beam": welded_beam,
    "vehicle-safety": vehicle_safety,
}


def get_problem(name: str) -> ProblemSpec:
    """Look up a built-in problem; ``dtlz2-<d>`` works for any ``d >= 2``."""
    if name in BUILTIN:
        return BUILTIN[name]()
    if name.startswith("dtlz2-"):
        try:
            return dtlz2(int(name.split("-", 1)[1]))
        except ValueError:
            pass
    raise InvalidConfigError(f"unknown problem {name!r}; known: {', '.join(sorted(BUILTIN))}")


# ---------------------------------------------------------------- plugins


class SubprocessEvaluator:
    """Evaluate points with a long-running child process.

    Each request is one line of ``d`` space-separated decimals on the child's
    stdin; the reply is one line of ``M + C`` decimals on its stdout
    (objectives to minimize, then constraints).
    """

    def __init__(self, command: str | list[str], num_outputs: int):
        self.argv = shlex.split(command) if isinstance(command, str) else list(command)
        self.num_outputs = num_outputs
        self._proc: subprocess.Popen | None = None
        self._lock = threading.Lock()

    def _ensure(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            try:
                self._proc = subprocess.Popen(
                    self.argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, bufsize=1
                )
            except OSError as exc:
                raise EvaluationError(f"cannot start problem process {self.argv!r}: {exc}") from exc
        return self._proc

    def __call__(self, x: np.ndarray) -> np.ndarray:
        with self._lock:
            proc = self._ensure()
            try:
                proc.stdin.write(" ".join(repr(float(v)) for v in x) + "\n")
                proc.stdin.flush()
                line = proc.stdout.readline()
            except (BrokenPipeError, OSError) as exc:
                raise EvaluationError(f"problem process failed: {exc}") from exc
        if not line:
            raise EvaluationError("problem process closed its output")
        try:
            values = np.array([float(tok) for tok in line.split()])
        except ValueError as exc:
            raise EvaluationError(f"unparseable reply from problem process: {line.strip()!r}") from exc
        if values.shape[0] != self.num_outputs:
            raise EvaluationError(f"expected {self.num_outputs} values, got {values.shape[0]}")
        return values

    def close(self):
        if self._proc is not None and self._proc.poll() is None:
            self._proc.stdin.close()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
        self._proc = None


def external_problem(name: str, command, d: int, M: int, C: int, bounds, ref_point_raw) -> ProblemSpec:
    """A problem served by a child process.

    ``ref_point_raw`` is given for the minimized objectives and is negated
    here like the built-in reference points.
    """
    evaluator = SubprocessEvaluator(command, M + C)

    def raw_fn(x):
        out = evaluator(x)
        return out[:M], out[M:]

    spec = ProblemSpec(name, d, M, C, np.asarray(bounds, dtype=float), -np.asarray(ref_point_raw, dtype=float), raw_fn)
    object.__setattr__(spec, "evaluator", evaluator)
    return spec
