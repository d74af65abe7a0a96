"""Decentralized Kalman filtering in deviation/aggregate coordinates.

Estimation for the team splits into two independent filters.  A deviation
filter tracks each agent's offset from the influence-weighted average; its
covariance and gain schedule is shared by all agents and all team sizes.
An aggregate filter tracks the weighted average itself on the coupled
matrices, with noise covariances shrunk by 1/n.  The familiar per-agent
state estimate is the derived view ``delta + alpha_i * aggregate`` and is
never stored as a second recursion.

Schedules (covariances and gains) depend only on the model, so they are
precomputed once.  Per-rollout stepping is cheap linear algebra on top.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Literal

import numpy as np

from .errors import SingularInnovationError
from .model import TeamModel, deep_aggregate, gauge_decompose

GAUGE_TOL = 1e-6
_SINGULAR_REL = 1e-12


@dataclass(frozen=True)
class LocalFilterSchedule:
    """Deviation-filter covariances and gains, one entry per stage (0-based).

    ``Sigma_pred[t]`` and ``Sigma_post[t]`` are the pre/post-update error
    covariances of the scaled deviation estimate; the per-agent deviation
    error covariance is ``(1 - alpha_i^2 / n) * Sigma``.  ``gain[t]`` is
    applied to the deviation innovation at stage t, including t = 0.
    """

    Sigma_pred: np.ndarray
    Sigma_post: np.ndarray
    gain: np.ndarray


@dataclass(frozen=True)
class GlobalFilterSchedule:
    """Aggregate-filter covariances and gains, one entry per stage (0-based)."""

    Sigma_pred: np.ndarray
    Sigma_post: np.ndarray
    gain: np.ndarray


@dataclass(frozen=True)
class EstimatorState:
    """Filter state at one stage: deviation estimates plus the aggregate estimate.

    ``phase`` records whether stage ``t``'s measurement has been absorbed.
    The deviation rows always satisfy (1/n) sum_i alpha_i delta_xhat_i = 0.
    """

    delta_xhat: np.ndarray
    agg_xhat: np.ndarray
    t: int
    phase: Literal["predicted", "updated"]


@dataclass(frozen=True)
class InnovationRecord:
    """Observation surprises at one stage.

    ``raw[i]`` is agent i's observation minus its one-step prediction,
    ``agg`` the influence-weighted average of the raw rows, and ``dev[i]``
    the remainder ``raw[i] - alpha_i * agg``.
    """

    raw: np.ndarray
    dev: np.ndarray
    agg: np.ndarray
    t: int


def _checked_gain(sigma_pred: np.ndarray, obs: np.ndarray, noise_cov: np.ndarray,
                  t: int, label: str) -> np.ndarray:
    cov = obs @ sigma_pred @ obs.T + noise_cov
    cov = 0.5 * (cov + cov.T)
    eigs = np.linalg.eigvalsh(cov)
    if eigs[0] <= _SINGULAR_REL * max(np.trace(cov), 0.0):
        raise SingularInnovationError(f"{label} innovation covariance is singular", t + 1)
    return np.linalg.solve(cov, obs @ sigma_pred).T


def precompute_local(model: TeamModel) -> LocalFilterSchedule:
    """Run the deviation-filter covariance recursion over the whole horizon."""
    d = model.dims
    sigma_pred = np.zeros((d.T, d.d_x, d.d_x))
    sigma_post = np.zeros((d.T, d.d_x, d.d_x))
    gain = np.zeros((d.T, d.d_x, d.d_y))
    sigma_pred[0] = model.Sigma_x
    for t in range(d.T):
        C = model.C[t]
        noise = model.S[t] @ model.Sigma_v[t] @ model.S[t].T
        gain[t] = _checked_gain(sigma_pred[t], C, noise, t, "deviation")
        post = (np.eye(d.d_x) - gain[t] @ C) @ sigma_pred[t]
        sigma_post[t] = 0.5 * (post + post.T)
        if t + 1 < d.T:
            nxt = (model.A[t] @ sigma_post[t] @ model.A[t].T
                   + model.E[t] @ model.Sigma_w[t] @ model.E[t].T)
            sigma_pred[t + 1] = 0.5 * (nxt + nxt.T)
    return LocalFilterSchedule(Sigma_pred=sigma_pred, Sigma_post=sigma_post, gain=gain)


def precompute_global(model: TeamModel) -> GlobalFilterSchedule:
    """Run the aggregate-filter covariance recursion over the whole horizon.

    Uses the coupled matrices and noise covariances scaled by 1/n; every
    covariance in the schedule is exactly proportional to 1/n under a
    homogeneous influence vector, while the gains are n-independent.
    """
    d = model.dims
    n = d.n
    sigma_pred = np.zeros((d.T, d.d_x, d.d_x))
    sigma_post = np.zeros((d.T, d.d_x, d.d_x))
    gain = np.zeros((d.T, d.d_x, d.d_y))
    sigma_pred[0] = model.Sigma_x / n
    for t in range(d.T):
        C = model.C[t] + model.C_bar[t]
        S = model.S[t] + model.S_bar[t]
        noise = S @ model.Sigma_v[t] @ S.T / n
        gain[t] = _checked_gain(sigma_pred[t], C, noise, t, "aggregate")
        post = (np.eye(d.d_x) - gain[t] @ C) @ sigma_pred[t]
        sigma_post[t] = 0.5 * (post + post.T)
        if t + 1 < d.T:
            A = model.A[t] + model.A_bar[t]
            E = model.E[t] + model.E_bar[t]
            nxt = A @ sigma_post[t] @ A.T + E @ model.Sigma_w[t] @ E.T / n
            sigma_pred[t + 1] = 0.5 * (nxt + nxt.T)
    return GlobalFilterSchedule(Sigma_pred=sigma_pred, Sigma_post=sigma_post, gain=gain)


def init_state(model: TeamModel) -> EstimatorState:
    """Prior estimates before the first observation."""
    a_mean = model.alpha_mean
    scale = 1.0 - model.alpha * a_mean
    return EstimatorState(
        delta_xhat=np.outer(scale, model.mu_x),
        agg_xhat=a_mean * model.mu_x,
        t=0,
        phase="predicted",
    )


def innovations(state: EstimatorState, y: np.ndarray, model: TeamModel) -> InnovationRecord:
    """Observation surprises given a predicted-phase state.

    The per-agent prediction is ``C delta_xhat_i + alpha_i (C + C_bar) agg``,
    which accounts for the coupled observation channel exactly.
    """
    if state.phase != "predicted":
        raise ValueError("innovations need a predicted-phase state")
    t = state.t
    C = model.C[t]
    C_all = C + model.C_bar[t]
    predicted = state.delta_xhat @ C.T + np.outer(model.alpha, C_all @ state.agg_xhat)
    raw = np.asarray(y, dtype=float) - predicted
    agg = deep_aggregate(raw, model.alpha)
    dev = raw - np.outer(model.alpha, agg)
    return InnovationRecord(raw=raw, dev=dev, agg=agg, t=t)


def measurement_update(
    state: EstimatorState,
    y: np.ndarray,
    model: TeamModel,
    local: LocalFilterSchedule,
    glob: GlobalFilterSchedule,
) -> tuple[EstimatorState, InnovationRecord]:
    """Absorb stage t's observations into both filters."""
    rec = innovations(state, y, model)
    t = state.t
    delta = state.delta_xhat + rec.dev @ local.gain[t].T
    agg = state.agg_xhat + glob.gain[t] @ rec.agg
    return EstimatorState(delta_xhat=delta, agg_xhat=agg, t=t, phase="updated"), rec


def time_predict(state: EstimatorState, u: np.ndarray, model: TeamModel) -> EstimatorState:
    """Advance both filters through the dynamics using the applied actions."""
    if state.phase != "updated":
        raise ValueError("time_predict needs an updated-phase state")
    t = state.t
    if t + 1 >= model.dims.T:
        raise ValueError(f"no stage beyond t={t + 1} in a horizon of {model.dims.T}")
    delta_u, u_bar = gauge_decompose(np.asarray(u, dtype=float), model.alpha)
    delta = state.delta_xhat @ model.A[t].T + delta_u @ model.B[t].T
    A_all = model.A[t] + model.A_bar[t]
    B_all = model.B[t] + model.B_bar[t]
    agg = A_all @ state.agg_xhat + B_all @ u_bar
    return EstimatorState(delta_xhat=delta, agg_xhat=agg, t=t + 1, phase="predicted")


def step(
    state: EstimatorState,
    u: np.ndarray,
    y_next: np.ndarray,
    model: TeamModel,
    local: LocalFilterSchedule,
    glob: GlobalFilterSchedule,
) -> tuple[EstimatorState, InnovationRecord]:
    """One full transition: predict through the dynamics, then update."""
    return measurement_update(time_predict(state, u, model), y_next, model, local, glob)


def _check_deviation_rows(rows: np.ndarray, alpha: np.ndarray, name: str) -> None:
    resid = alpha @ rows / alpha.shape[0]
    scale = 1.0 + np.max(np.abs(rows), initial=0.0)
    if np.max(np.abs(resid), initial=0.0) > GAUGE_TOL * scale:
        raise ValueError(f"{name} rows are not valid deviations: weighted sum is nonzero")


def local_step(
    state: EstimatorState,
    delta_u: np.ndarray,
    delta_y_next: np.ndarray,
    schedule: LocalFilterSchedule,
    model: TeamModel,
) -> EstimatorState:
    """Advance only the deviation component using deviation inputs.

    Returns a state at (t + 1, updated) whose aggregate entry is carried
    over unchanged; pair with global_step on the same source state and
    merge_components to produce the coherent next state.
    """
    if state.phase != "updated":
        raise ValueError("local_step needs an updated-phase state")
    t = state.t
    if t + 1 >= model.dims.T:
        raise ValueError(f"no stage beyond t={t + 1} in a horizon of {model.dims.T}")
    delta_u = np.asarray(delta_u, dtype=float)
    delta_y_next = np.asarray(delta_y_next, dtype=float)
    _check_deviation_rows(delta_u, model.alpha, "action")
    _check_deviation_rows(delta_y_next, model.alpha, "observation")
    pred = state.delta_xhat @ model.A[t].T + delta_u @ model.B[t].T
    dev = delta_y_next - pred @ model.C[t + 1].T
    post = pred + dev @ schedule.gain[t + 1].T
    return replace(state, delta_xhat=post, t=t + 1)


def global_step(
    state: EstimatorState,
    u_bar: np.ndarray,
    y_bar_next: np.ndarray,
    schedule: GlobalFilterSchedule,
    model: TeamModel,
) -> EstimatorState:
    """Advance only the aggregate component using aggregate inputs.

    Counterpart of local_step; the deviation rows are carried over unchanged.
    """
    if state.phase != "updated":
        raise ValueError("global_step needs an updated-phase state")
    t = state.t
    if t + 1 >= model.dims.T:
        raise ValueError(f"no stage beyond t={t + 1} in a horizon of {model.dims.T}")
    A_all = model.A[t] + model.A_bar[t]
    B_all = model.B[t] + model.B_bar[t]
    C_all = model.C[t + 1] + model.C_bar[t + 1]
    pred = A_all @ state.agg_xhat + B_all @ np.asarray(u_bar, dtype=float)
    innov = np.asarray(y_bar_next, dtype=float) - C_all @ pred
    post = pred + schedule.gain[t + 1] @ innov
    return replace(state, agg_xhat=post, t=t + 1)


def merge_components(local_advanced: EstimatorState, global_advanced: EstimatorState) -> EstimatorState:
    """Reunite matching local_step and global_step results into one state."""
    if (local_advanced.t, local_advanced.phase) != (global_advanced.t, global_advanced.phase):
        raise ValueError("half-steps disagree on stage or phase")
    return replace(local_advanced, agg_xhat=global_advanced.agg_xhat)


def combined_agent_estimate(delta_xhat, agg_xhat, alpha):
    """Per-agent state estimate ``delta + alpha * aggregate``.

    Accepts a single deviation row with a scalar influence factor, or the
    full (n, d_x) stack with the influence vector.
    """
    delta_xhat = np.asarray(delta_xhat, dtype=float)
    agg_xhat = np.asarray(agg_xhat, dtype=float)
    if delta_xhat.ndim == 1:
        return delta_xhat + float(alpha) * agg_xhat
    return delta_xhat + np.outer(np.asarray(alpha, dtype=float), agg_xhat)


def team_error_covariance(
    local: LocalFilterSchedule,
    glob: GlobalFilterSchedule,
    alpha: np.ndarray,
    t: int,
    phase: str = "updated",
) -> np.ndarray:
    """Joint covariance of all n per-agent estimation errors at stage t.

    Block (i, j) combines the deviation-error covariance, which carries the
    index-invariant factor (delta_ij - alpha_i alpha_j / n), with the shared
    aggregate error weighted by alpha_i alpha_j.
    """
    alpha = np.asarray(alpha, dtype=float)
    n = alpha.shape[0]
    sig = local.Sigma_post[t] if phase == "updated" else local.Sigma_pred[t]
    sig_agg = glob.Sigma_post[t] if phase == "updated" else glob.Sigma_pred[t]
    weights = np.eye(n) - np.outer(alpha, alpha) / n
    return np.kron(weights, sig) + np.kron(np.outer(alpha, alpha), sig_agg)


# ---------------------------------------------------------------------------
# JSON forms for precomputed schedules (stage keys are 1-based strings)


def schedule_to_json_dict(schedule) -> dict:
    T = schedule.Sigma_pred.shape[0]
    def keyed(stack):
        return {str(t + 1): stack[t].tolist() for t in range(stack.shape[0])}
    return {
        "Sigma_pred": keyed(schedule.Sigma_pred),
        "Sigma_post": keyed(schedule.Sigma_post),
        "gain": keyed(schedule.gain),
        "T": T,
    }


def _stack_from_keyed(doc: dict, T: int) -> np.ndarray:
    entries = [np.asarray(doc[str(t + 1)], dtype=float) for t in range(T)]
    return np.stack(entries)


def local_schedule_from_json_dict(doc: dict) -> LocalFilterSchedule:
    T = int(doc["T"])
    return LocalFilterSchedule(
        Sigma_pred=_stack_from_keyed(doc["Sigma_pred"], T),
        Sigma_post=_stack_from_keyed(doc["Sigma_post"], T),
        gain=_stack_from_keyed(doc["gain"], T),
    )


def global_schedule_from_json_dict(doc: dict) -> GlobalFilterSchedule:
    T = int(doc["T"])
    return GlobalFilterSchedule(
        Sigma_pred=_stack_from_keyed(doc["Sigma_pred"], T),
        Sigma_post=_stack_from_keyed(doc["Sigma_post"], T),
        gain=_stack_from_keyed(doc["gain"], T),
    )
