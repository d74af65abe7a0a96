"""Action rules for the team: optimal, mean-field, zero, and custom linear.

The optimal rule feeds each agent's combined estimate through the deviation
gain and the shared aggregate estimate through the gain difference.  The
mean-field rule is the same control law with the aggregate estimate replaced
by its offline-computable deterministic trajectory, which frees agents from
needing the aggregated observations at run time; each agent then tracks its
deviation with a private filter driven only by its own observations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Literal, Union

import numpy as np

from .errors import NoActionError
from .filters import EstimatorState, LocalFilterSchedule
from .model import TeamModel
from .riccati import RiccatiPass


@dataclass(frozen=True)
class ZeroAction:
    """Play zero at every stage."""


@dataclass(frozen=True)
class Optimal:
    """Certainty-equivalent rule on the two decentralized filters."""


@dataclass(frozen=True)
class MeanField:
    """Optimal rule with the aggregate estimate replaced by its planned path."""


@dataclass(frozen=True)
class CustomLinear:
    """Stagewise linear rule u_i = theta xhat_i + alpha_i phi z + psi y_i + alpha_i omega y_bar.

    Coefficient stacks have one entry per action stage (T - 1 of them).
    The optimal rule is the member with theta = gain, phi = gain_agg - gain,
    psi = omega = 0.
    """

    theta: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    omega: np.ndarray

    @classmethod
    def from_json_dict(cls, doc: dict, model: TeamModel) -> "CustomLinear":
        d = model.dims
        stages = max(d.T - 1, 0)

        def stack(key: str, rows: int, cols: int) -> np.ndarray:
            if key not in doc:
                return np.zeros((stages, rows, cols))
            value = doc[key]
            if isinstance(value, dict):
                mats = [np.asarray(value[str(t + 1)], dtype=float) for t in range(stages)]
                arr = np.stack(mats) if mats else np.zeros((0, rows, cols))
            else:
                arr = np.asarray(value, dtype=float)
                if arr.ndim == 0:
                    arr = arr.reshape(1, 1)
                if arr.ndim == 2:
                    arr = np.broadcast_to(arr, (stages, *arr.shape)).copy()
            if arr.shape != (stages, rows, cols):
                raise ValueError(f"{key}: expected shape {(stages, rows, cols)}, got {arr.shape}")
            return arr

        return cls(
            theta=stack("theta", d.d_u, d.d_x),
            phi=stack("phi", d.d_u, d.d_x),
            psi=stack("psi", d.d_u, d.d_y),
            omega=stack("omega", d.d_u, d.d_y),
        )


StrategyKind = Union[ZeroAction, Optimal, MeanField, CustomLinear]


def optimal_coefficients(gains: RiccatiPass, model: TeamModel) -> CustomLinear:
    """The CustomLinear member that reproduces the optimal rule exactly."""
    stages, d_u, _ = gains.gain.shape
    d_y = model.dims.d_y
    return CustomLinear(
        theta=gains.gain.copy(),
        phi=gains.gain_agg - gains.gain,
        psi=np.zeros((stages, d_u, d_y)),
        omega=np.zeros((stages, d_u, d_y)),
    )


def load_custom_strategy(path, model: TeamModel) -> CustomLinear:
    """Read CustomLinear coefficients from a JSON file."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not valid JSON ({exc})") from exc
    return CustomLinear.from_json_dict(doc, model)


def parse_strategy(text: str, model: TeamModel) -> StrategyKind:
    """Map a command-line strategy name to a strategy object."""
    if text == "optimal":
        return Optimal()
    if text == "meanfield":
        return MeanField()
    if text == "zero":
        return ZeroAction()
    if text.startswith("custom:"):
        return load_custom_strategy(text.split(":", 1)[1], model)
    raise ValueError(f"unknown strategy {text!r}")


def _require_action_stage(t: int, model: TeamModel, phase: str) -> None:
    if phase != "updated":
        raise ValueError("actions are computed from updated-phase estimates")
    if t >= model.dims.T - 1:
        raise NoActionError(f"no action is defined at the final stage t={t + 1}")


def act_optimal(state: EstimatorState, gains: RiccatiPass, model: TeamModel) -> np.ndarray:
    """Optimal decentralized actions at the state's stage, one row per agent."""
    _require_action_stage(state.t, model, state.phase)
    t = state.t
    combined = state.delta_xhat + np.outer(model.alpha, state.agg_xhat)
    correction = (gains.gain_agg[t] - gains.gain[t]) @ state.agg_xhat
    return combined @ gains.gain[t].T + np.outer(model.alpha, correction)


def act_custom(
    kind: CustomLinear,
    state: EstimatorState,
    y: np.ndarray,
    model: TeamModel,
) -> np.ndarray:
    """Actions of a CustomLinear rule from estimates and current observations."""
    _require_action_stage(state.t, model, state.phase)
    t = state.t
    y = np.asarray(y, dtype=float)
    y_bar = model.alpha @ y / model.dims.n
    combined = state.delta_xhat + np.outer(model.alpha, state.agg_xhat)
    u = combined @ kind.theta[t].T + y @ kind.psi[t].T
    u += np.outer(model.alpha, kind.phi[t] @ state.agg_xhat + kind.omega[t] @ y_bar)
    return u


# ---------------------------------------------------------------------------
# Mean-field strategy


@dataclass(frozen=True)
class MeanFieldPlan:
    """Offline aggregate plan: mean trajectory and the aggregate actions on it."""

    mean: np.ndarray
    u_bar: np.ndarray


@dataclass(frozen=True)
class MeanFieldState:
    """Private deviation estimates of the mean-field filter."""

    delta_xhat: np.ndarray
    t: int
    phase: Literal["predicted", "updated"]


def meanfield_trajectory(model: TeamModel, gains: RiccatiPass) -> MeanFieldPlan:
    """Deterministic closed-loop path of the aggregate under the optimal gains."""
    d = model.dims
    mean = np.zeros((d.T, d.d_x))
    u_bar = np.zeros((max(d.T - 1, 0), d.d_u))
    mean[0] = model.alpha_mean * model.mu_x
    for t in range(d.T - 1):
        u_bar[t] = gains.gain_agg[t] @ mean[t]
        A_all = model.A[t] + model.A_bar[t]
        B_all = model.B[t] + model.B_bar[t]
        mean[t + 1] = A_all @ mean[t] + B_all @ u_bar[t]
    return MeanFieldPlan(mean=mean, u_bar=u_bar)


def meanfield_init(model: TeamModel) -> MeanFieldState:
    scale = 1.0 - model.alpha * model.alpha_mean
    return MeanFieldState(delta_xhat=np.outer(scale, model.mu_x), t=0, phase="predicted")


def meanfield_update(
    state: MeanFieldState,
    y: np.ndarray,
    plan: MeanFieldPlan,
    model: TeamModel,
    local: LocalFilterSchedule,
) -> MeanFieldState:
    """Absorb private observations, with the aggregate channel replaced by the plan."""
    if state.phase != "predicted":
        raise ValueError("meanfield_update needs a predicted-phase state")
    t = state.t
    C_all = model.C[t] + model.C_bar[t]
    centered = np.asarray(y, dtype=float) - np.outer(model.alpha, C_all @ plan.mean[t])
    dev = centered - state.delta_xhat @ model.C[t].T
    return replace(state, delta_xhat=state.delta_xhat + dev @ local.gain[t].T, phase="updated")


def meanfield_predict(
    state: MeanFieldState,
    u: np.ndarray,
    plan: MeanFieldPlan,
    model: TeamModel,
) -> MeanFieldState:
    """Advance the private filters using own actions and the planned aggregate action."""
    if state.phase != "updated":
        raise ValueError("meanfield_predict needs an updated-phase state")
    t = state.t
    if t + 1 >= model.dims.T:
        raise ValueError(f"no stage beyond t={t + 1} in a horizon of {model.dims.T}")
    delta_u = np.asarray(u, dtype=float) - np.outer(model.alpha, plan.u_bar[t])
    delta = state.delta_xhat @ model.A[t].T + delta_u @ model.B[t].T
    return MeanFieldState(delta_xhat=delta, t=t + 1, phase="predicted")


def act_meanfield(
    state: MeanFieldState,
    plan: MeanFieldPlan,
    gains: RiccatiPass,
    model: TeamModel,
) -> np.ndarray:
    """Mean-field actions: deviation feedback plus the planned aggregate feedback."""
    _require_action_stage(state.t, model, state.phase)
    t = state.t
    planned = gains.gain_agg[t] @ plan.mean[t]
    return state.delta_xhat @ gains.gain[t].T + np.outer(model.alpha, planned)
