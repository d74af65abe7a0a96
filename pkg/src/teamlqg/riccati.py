"""Backward Riccati recursions for the deviation and aggregate control problems.

Both recursions are standard finite-horizon LQR passes.  The deviation chain
runs on the local matrices (A, B, Q, R); the aggregate chain runs on the
coupled sums (A + A_bar, B + B_bar, Q + Q_bar, R + R_bar).  Neither depends
on the population size or the influence vector, so one pass serves every
agent and every team size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import RiccatiError
from .model import TeamModel


@dataclass(frozen=True)
class RiccatiPass:
    """Value matrices and feedback gains for both chains.

    ``P[t]`` is the deviation value matrix of stage t (0-based), ``P_agg[t]``
    the aggregate one.  ``gain[t]`` maps a state estimate to an action at
    stage t and exists for t < T - 1 only; the final stage has no action.
    """

    P: np.ndarray
    P_agg: np.ndarray
    gain: np.ndarray
    gain_agg: np.ndarray

    @property
    def horizon(self) -> int:
        return self.P.shape[0]


def _backward_chain(A, B, Q, R, label: str) -> tuple[np.ndarray, np.ndarray]:
    T, d_x, _ = A.shape
    d_u = B.shape[2]
    P = np.zeros((T, d_x, d_x))
    gain = np.zeros((max(T - 1, 0), d_u, d_x))
    P[T - 1] = 0.5 * (Q[T - 1] + Q[T - 1].T)
    for t in range(T - 2, -1, -1):
        nxt = P[t + 1]
        inner = B[t].T @ nxt @ B[t] + R[t]
        inner = 0.5 * (inner + inner.T)
        try:
            chol = cho_factor(inner, lower=True)
        except np.linalg.LinAlgError as exc:
            raise RiccatiError(
                f"{label} Riccati inner matrix not positive definite", t + 1
            ) from exc
        gain[t] = -cho_solve(chol, B[t].T @ nxt @ A[t])
        closed = A[t] + B[t] @ gain[t]
        P[t] = Q[t] + A[t].T @ nxt @ closed
        P[t] = 0.5 * (P[t] + P[t].T)
    return P, gain


def solve_riccati(model: TeamModel) -> RiccatiPass:
    """Run both backward passes and return value matrices with feedback gains."""
    P, gain = _backward_chain(model.A, model.B, model.Q, model.R, "deviation")
    P_agg, gain_agg = _backward_chain(
        model.A + model.A_bar,
        model.B + model.B_bar,
        model.Q + model.Q_bar,
        model.R + model.R_bar,
        "aggregate",
    )
    return RiccatiPass(P=P, P_agg=P_agg, gain=gain, gain_agg=gain_agg)


def riccati_to_json_dict(out: RiccatiPass) -> dict:
    """Serialize value matrices and gains with 1-based stage keys."""
    def keyed(stack):
        return {str(t + 1): stack[t].tolist() for t in range(stack.shape[0])}
    return {
        "T": out.horizon,
        "P": keyed(out.P),
        "P_agg": keyed(out.P_agg),
        "gain": keyed(out.gain),
        "gain_agg": keyed(out.gain_agg),
    }


def riccati_from_json_dict(doc: dict) -> RiccatiPass:
    T = int(doc["T"])
    def stacked(entry, count):
        if count == 0:
            return np.zeros((0, 0, 0))
        return np.stack([np.asarray(entry[str(t + 1)], dtype=float) for t in range(count)])
    return RiccatiPass(
        P=stacked(doc["P"], T),
        P_agg=stacked(doc["P_agg"], T),
        gain=stacked(doc["gain"], T - 1),
        gain_agg=stacked(doc["gain_agg"], T - 1),
    )
