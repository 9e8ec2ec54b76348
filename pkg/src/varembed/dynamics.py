"""One-dimensional stationarity dynamics and their score-following limits.

For ``d = 1`` the stationarity condition becomes a first-order system in the
latent coordinate ``z`` for the curve ``phi`` and a momentum-like vector ``p``:

    phi' = p / ||p||^2,        p' = s(phi) - (d/dz log q) p,

with ``s`` the score of the data density. All integrators here are classical
fixed-step RK4.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CriticalPointError, TurningPoint
from .models import DensityModel, PriorModel, TruncatedExponential

STEPS_PER_UNIT = 2000
MIN_MOMENTUM = 1e-12
MIN_SCORE = 1e-10


@dataclass(frozen=True)
class OdeState:
    z: float
    phi: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "z", float(self.z))
        object.__setattr__(self, "phi", np.asarray(self.phi, dtype=float).reshape(-1))
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float).reshape(-1))
        if self.phi.shape != self.p.shape:
            raise ValueError("phi and p must have the same dimension")


def el_ode_rhs(state: OdeState, prior: PriorModel, density: DensityModel) -> tuple[np.ndarray, np.ndarray]:
    """``(phi', p')`` at ``state``. Raises ``TurningPoint`` when ``||p||`` vanishes."""
    p2 = float(state.p @ state.p)
    if not math.sqrt(p2) > MIN_MOMENTUM:
        raise TurningPoint(f"momentum vanished at z={state.z}")
    z = np.array([state.z])
    if not np.isfinite(prior.log_density(z)):
        raise ValueError(f"z={state.z} is outside the prior support")
    dlogq = float(np.asarray(prior.grad_log_density(z)).reshape(-1)[0])
    s = np.asarray(density.score(state.phi)).reshape(-1)
    return state.p / p2, s - dlogq * state.p


def _rk4(f, y0: np.ndarray, t0: float, t1: float, steps: int):
    ts, ys, _ = _rk4_halting(f, y0, t0, t1, steps, ())
    return ts, ys


def _rk4_halting(f, y0, t0, t1, steps, errors, check=None):
    """Fixed-step RK4 that stops at the first step raising one of ``errors``.

    ``check(t, y_old, y_new)`` may also raise them after a step; the step is
    then discarded.
    """
    grid = np.linspace(t0, t1, steps + 1)  # grid[-1] == t1 exactly
    ys = [np.asarray(y0, dtype=float)]
    y = ys[0]
    for k in range(steps):
        t, t_next = grid[k], grid[k + 1]
        h = t_next - t
        try:
            k1 = f(t, y)
            k2 = f(t + h / 2, y + h / 2 * k1)
            k3 = f(t + h / 2, y + h / 2 * k2)
            k4 = f(t_next, y + h * k3)
            y_new = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            if check is not None:
                check(t_next, y, y_new)
        except errors as exc:
            return grid[: k + 1], np.array(ys), str(exc)
        y = y_new
        ys.append(y)
    return grid, np.array(ys), None


@dataclass
class Trajectory:
    z: np.ndarray
    phi: np.ndarray
    p: np.ndarray | None = None
    halt_reason: str | None = None
    variable: str = "z"

    @property
    def halted(self) -> bool:
        return self.halt_reason is not None

    def states(self) -> list[OdeState]:
        if self.p is None:
            raise ValueError("trajectory has no momentum")
        return [OdeState(z, f, p) for z, f, p in zip(self.z, self.phi, self.p)]

    def energy(self, prior: PriorModel, density: DensityModel) -> np.ndarray:
        """``log||p|| - log p(phi) + log q(z)``, i.e. ``-1/2 log||phi'||^2 - log p + log q``."""
        if self.p is None:
            raise ValueError("trajectory has no momentum")
        return (
            np.log(np.linalg.norm(self.p, axis=1))
            - density.log_density(self.phi)
            + prior.log_density(self.z[:, None])
        )

    def to_csv(self, path, prior: PriorModel | None = None, density: DensityModel | None = None) -> None:
        D = self.phi.shape[1]
        header = [f"{self.variable} [latent]"] + [f"phi{i} [ambient]" for i in range(D)]
        if self.p is not None:
            header += [f"p{i} [1/ambient]" for i in range(D)]
        energy = None
        if self.p is not None and prior is not None and density is not None:
            header.append("energy [nats]")
            energy = self.energy(prior, density)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for k in range(len(self.z)):
                row = [repr(float(self.z[k]))] + [repr(float(v)) for v in self.phi[k]]
                if self.p is not None:
                    row += [repr(float(v)) for v in self.p[k]]
                if energy is not None:
                    row.append(repr(float(energy[k])))
                w.writerow(row)


def default_steps(span) -> int:
    return max(1, int(math.ceil(STEPS_PER_UNIT * abs(span[1] - span[0]) - 1e-9)))


def integrate_el(initial: OdeState, z_span, steps: int | None, prior: PriorModel,
                 density: DensityModel) -> Trajectory:
    """RK4 integration of the stationarity system from ``initial.z`` to ``z_span[1]``.

    A turning point truncates the trajectory and is recorded in ``halt_reason``.
    """
    z0, z1 = float(z_span[0]), float(z_span[1])
    if abs(z0 - initial.z) > 1e-12:
        raise ValueError("z_span must start at the initial state's z")
    steps = default_steps((z0, z1)) if steps is None else int(steps)
    D = initial.phi.size

    def f(z, y):
        dphi, dp = el_ode_rhs(OdeState(z, y[:D], y[D:]), prior, density)
        return np.concatenate([dphi, dp])

    def reversed_momentum(z, y_old, y_new):
        # a step that turns p by 90 degrees or more has jumped over ||p|| = 0
        if float(y_old[D:] @ y_new[D:]) <= 0:
            raise TurningPoint(f"momentum reversed within the step ending at z={z}")

    zs, ys, reason = _rk4_halting(f, np.concatenate([initial.phi, initial.p]), z0, z1, steps,
                                  (TurningPoint,), reversed_momentum)
    return Trajectory(zs, ys[:, :D], ys[:, D:], reason)


def score_following_rhs(phi, gamma: float, density: DensityModel) -> np.ndarray:
    """``gamma s(phi) / ||s(phi)||^2``; raises ``CriticalPointError`` near a critical point."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    s = np.asarray(density.score(np.asarray(phi, dtype=float).reshape(-1))).reshape(-1)
    n2 = float(s @ s)
    if not math.sqrt(n2) > MIN_SCORE:
        raise CriticalPointError(f"score vanishes at phi={np.asarray(phi).tolist()}")
    return gamma * s / n2


def score_following_flow(phi0, z_span, steps: int | None, gamma: float, density: DensityModel) -> Trajectory:
    """RK4 integration of ``score_following_rhs``; halts at (or on stepping across) a critical point."""
    z0, z1 = float(z_span[0]), float(z_span[1])
    steps = default_steps((z0, z1)) if steps is None else int(steps)

    def reversed_score(z, y_old, y_new):
        if float(density.score(y_old) @ density.score(y_new)) <= 0:
            raise CriticalPointError(f"score reversed within the step ending at z={z}")

    zs, ys, reason = _rk4_halting(
        lambda z, y: score_following_rhs(y, gamma, density),
        np.asarray(phi0, dtype=float).reshape(-1), z0, z1, steps, (CriticalPointError,), reversed_score,
    )
    return Trajectory(zs, ys, None, reason)


def reparameterized_flow(phi0, tau_span, steps: int, density: DensityModel) -> Trajectory:
    """RK4 integration of the plain score flow ``phi'(tau) = s(phi)``.

    There is no division by the score, so critical points are fixed points
    rather than errors.
    """
    t0, t1 = float(tau_span[0]), float(tau_span[1])
    ts, ys = _rk4(lambda t, y: np.asarray(density.score(y)).reshape(-1),
                  np.asarray(phi0, dtype=float).reshape(-1), t0, t1, int(steps))
    return Trajectory(ts, ys, None, None, variable="tau")


# ---------------------------------------------------------------------------
# large-gamma limit
# ---------------------------------------------------------------------------


@dataclass
class LimitComparison:
    gamma: float
    el: Trajectory
    flow: Trajectory
    momentum_gap: np.ndarray  # ||p - s/gamma|| / ||s/gamma|| per z
    trajectory_gap: np.ndarray  # ||phi_el - phi_flow|| per z
    post_transient: np.ndarray  # mask
    summary: dict = field(default_factory=dict)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["z [latent]", "momentum_gap [relative]", "trajectory_gap [ambient]", "post_transient [bool]"])
            n = min(len(self.el.z), len(self.flow.z))
            for k in range(n):
                w.writerow([repr(float(self.el.z[k])), repr(float(self.momentum_gap[k])),
                            repr(float(self.trajectory_gap[k])), int(self.post_transient[k])])


def compare_score_limit(phi0, gamma: float, z_span, density: DensityModel, steps: int | None = None,
                        p0=None, transient_constants: float = 5.0) -> LimitComparison:
    """Integrate the stationarity system under ``q = gamma e^{gamma z}`` next to the reduced flow.

    The initial momentum defaults to the steady-state value ``s(phi0) / gamma``.
    Points with ``z <= z0 + transient_constants / gamma`` are the transient.
    The endpoint gap is ``||phi_el(end) - phi_flow(end)|| / ||phi_flow(end) - phi0||``.
    """
    prior = TruncatedExponential(gamma)
    phi0 = np.asarray(phi0, dtype=float).reshape(-1)
    z0, z1 = float(z_span[0]), float(z_span[1])
    if p0 is None:
        p0 = np.asarray(density.score(phi0)).reshape(-1) / gamma
    el = integrate_el(OdeState(z0, phi0, p0), (z0, z1), steps, prior, density)
    flow = score_following_flow(phi0, (z0, z1), steps, gamma, density)
    n = min(len(el.z), len(flow.z))
    s = density.score(el.phi[:n]) / gamma
    mgap = np.linalg.norm(el.p[:n] - s, axis=1) / np.linalg.norm(s, axis=1)
    tgap = np.linalg.norm(el.phi[:n] - flow.phi[:n], axis=1)
    post = el.z[:n] > z0 + transient_constants / gamma + 1e-12
    disp = float(np.linalg.norm(flow.phi[n - 1] - phi0))
    summary = {
        "gamma": float(gamma),
        "max_momentum_gap": float(np.max(mgap[post])) if post.any() else float("nan"),
        "sup_trajectory_gap": float(np.max(tgap[post])) if post.any() else float("nan"),
        "endpoint_relative_gap": float(tgap[n - 1] / disp) if disp > 0 else float("nan"),
        "el_halt": el.halt_reason,
        "flow_halt": flow.halt_reason,
    }
    return LimitComparison(float(gamma), el, flow, mgap, tgap, post, summary)
