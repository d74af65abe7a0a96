"""Team model containers, validation, and the weighted-average algebra.

A team consists of n agents with identical local dynamics plus a coupling
through the influence-weighted average of their states, actions, and noises.
This module owns the model data structure, its JSON wire format, and the
small algebra used everywhere else: weighted aggregation and the split of a
collection of per-agent vectors into aggregate and deviation parts.

Time is handled 0-based in code (stage index ``t`` runs over ``range(T)``);
human-facing output such as validation messages and serialized schedules uses
1-based stage labels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InfluenceError

SYM_TOL = 1e-12
PSD_TOL = -1e-10
PD_TOL = 1e-10
NORMALIZATION_TOL = 1e-9

# stage-matrix key -> (row dim, col dim), in model dimension names
_STAGE_SHAPES = {
    "A": ("d_x", "d_x"),
    "A_bar": ("d_x", "d_x"),
    "B": ("d_x", "d_u"),
    "B_bar": ("d_x", "d_u"),
    "E": ("d_x", "d_w"),
    "E_bar": ("d_x", "d_w"),
    "C": ("d_y", "d_x"),
    "C_bar": ("d_y", "d_x"),
    "S": ("d_y", "d_v"),
    "S_bar": ("d_y", "d_v"),
    "Q": ("d_x", "d_x"),
    "Q_bar": ("d_x", "d_x"),
    "R": ("d_u", "d_u"),
    "R_bar": ("d_u", "d_u"),
}
_STAGE_KEYS = tuple(_STAGE_SHAPES)
_REQUIRED_STAGE_KEYS = ("A", "B", "C", "Q", "R")


@dataclass(frozen=True)
class Dimensions:
    """Static sizes of a team model."""

    n: int
    T: int
    d_x: int
    d_u: int
    d_y: int
    d_w: int
    d_v: int


@dataclass(frozen=True)
class StageMatrices:
    """All stage matrices of one time step."""

    A: np.ndarray
    A_bar: np.ndarray
    B: np.ndarray
    B_bar: np.ndarray
    E: np.ndarray
    E_bar: np.ndarray
    C: np.ndarray
    C_bar: np.ndarray
    S: np.ndarray
    S_bar: np.ndarray
    Q: np.ndarray
    Q_bar: np.ndarray
    R: np.ndarray
    R_bar: np.ndarray


@dataclass(frozen=True)
class TeamModel:
    """Immutable team model: dimensions, stacked stage matrices, noise, influence.

    Stage matrices are stored stacked over time, e.g. ``A[t]`` is the local
    transition matrix of stage ``t`` (0-based).  ``Sigma_w[T - 1]`` is carried
    for uniform shapes but never used: process noise only drives the T - 1
    transitions.  Arrays are read-only.
    """

    dims: Dimensions
    A: np.ndarray
    A_bar: np.ndarray
    B: np.ndarray
    B_bar: np.ndarray
    E: np.ndarray
    E_bar: np.ndarray
    C: np.ndarray
    C_bar: np.ndarray
    S: np.ndarray
    S_bar: np.ndarray
    Q: np.ndarray
    Q_bar: np.ndarray
    R: np.ndarray
    R_bar: np.ndarray
    mu_x: np.ndarray
    Sigma_x: np.ndarray
    Sigma_w: np.ndarray
    Sigma_v: np.ndarray
    alpha: np.ndarray

    @property
    def n(self) -> int:
        return self.dims.n

    @property
    def T(self) -> int:
        return self.dims.T

    @property
    def alpha_mean(self) -> float:
        """(1/n) sum of influence factors."""
        return float(np.sum(self.alpha)) / self.dims.n

    def stage(self, t: int) -> StageMatrices:
        """Return the stage matrices of step t (0-based)."""
        if not 0 <= t < self.dims.T:
            raise IndexError(f"stage {t} outside horizon of length {self.dims.T}")
        return StageMatrices(**{k: getattr(self, k)[t] for k in _STAGE_KEYS})


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of model validation: a list of human-readable violations."""

    violations: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.violations


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def _stack_stage(value, T: int, rows: int, cols: int, name: str) -> np.ndarray:
    """Coerce a constant or per-stage matrix spec into a (T, rows, cols) stack."""
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        if float(arr) == 0.0:
            return np.zeros((T, rows, cols))
        if (rows, cols) != (1, 1):
            raise ValueError(f"{name}: scalar given but expected shape {(rows, cols)}")
        arr = arr.reshape(1, 1)
    if arr.ndim == 2:
        if arr.shape != (rows, cols):
            raise ValueError(f"{name}: expected shape {(rows, cols)}, got {arr.shape}")
        return np.broadcast_to(arr, (T, rows, cols)).copy()
    if arr.ndim == 3:
        if arr.shape != (T, rows, cols):
            raise ValueError(f"{name}: expected shape {(T, rows, cols)}, got {arr.shape}")
        return arr.copy()
    raise ValueError(f"{name}: cannot interpret array of ndim {arr.ndim}")


def _leading_dim(value, default: int | None = None) -> int:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return 1 if default is None else default
    if arr.ndim == 1:
        return arr.shape[0]
    return arr.shape[-2]


def _trailing_dim(value, default: int | None = None) -> int:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return 1 if default is None else default
    return arr.shape[-1]


def _symmetrize_in_place(stack: np.ndarray) -> None:
    """Average away asymmetry that is within tolerance; leave the rest alone."""
    for t in range(stack.shape[0]):
        m = stack[t]
        if np.max(np.abs(m - m.T), initial=0.0) <= SYM_TOL:
            stack[t] = 0.5 * (m + m.T)


def make_model(
    *,
    T: int,
    A,
    B,
    C,
    Q,
    R,
    Sigma_x,
    Sigma_w,
    Sigma_v,
    alpha=None,
    n: int | None = None,
    E=None,
    S=None,
    mu_x=None,
    A_bar=0.0,
    B_bar=0.0,
    E_bar=0.0,
    C_bar=0.0,
    S_bar=0.0,
    Q_bar=0.0,
    R_bar=0.0,
) -> TeamModel:
    """Assemble an immutable TeamModel from constants or per-stage arrays.

    Each stage matrix may be given as a scalar (1x1 models), a single matrix
    reused for the whole horizon, or a (T, rows, cols) stack.  ``E`` and ``S``
    default to identities, ``mu_x`` to zero, the coupling (``*_bar``) matrices
    to zero.  ``alpha`` defaults to the homogeneous vector of ones, in which
    case ``n`` must be given.  Near-symmetric quadratic-form and covariance
    matrices are symmetrized; anything worse is left for validate() to flag.
    """
    if T < 1:
        raise ValueError("horizon T must be at least 1")
    if alpha is None:
        if n is None:
            raise ValueError("give either alpha or n")
        alpha_arr = np.ones(n, dtype=float)
    else:
        alpha_arr = np.asarray(alpha, dtype=float).reshape(-1).copy()
        if n is not None and n != alpha_arr.shape[0]:
            raise ValueError(f"n={n} disagrees with len(alpha)={alpha_arr.shape[0]}")

    d_x = _leading_dim(A)
    d_u = _trailing_dim(B)
    d_y = _leading_dim(C)
    d_w = _trailing_dim(E, default=d_x) if E is not None else d_x
    d_v = _trailing_dim(S, default=d_y) if S is not None else d_y
    if E is None:
        E = np.eye(d_x, d_w)
    if S is None:
        S = np.eye(d_y, d_v)
    dims = Dimensions(n=alpha_arr.shape[0], T=T, d_x=d_x, d_u=d_u, d_y=d_y, d_w=d_w, d_v=d_v)

    stage_values = {
        "A": A, "A_bar": A_bar, "B": B, "B_bar": B_bar, "E": E, "E_bar": E_bar,
        "C": C, "C_bar": C_bar, "S": S, "S_bar": S_bar,
        "Q": Q, "Q_bar": Q_bar, "R": R, "R_bar": R_bar,
    }
    stacks = {}
    for key, (rname, cname) in _STAGE_SHAPES.items():
        rows = getattr(dims, rname)
        cols = getattr(dims, cname)
        stacks[key] = _stack_stage(stage_values[key], T, rows, cols, key)
    for key in ("Q", "Q_bar", "R", "R_bar"):
        _symmetrize_in_place(stacks[key])

    if mu_x is None:
        mu = np.zeros(d_x)
    else:
        mu = np.asarray(mu_x, dtype=float).reshape(-1).copy()
        if mu.shape != (d_x,):
            raise ValueError(f"mu_x: expected shape {(d_x,)}, got {mu.shape}")
    sx = _stack_stage(Sigma_x, 1, d_x, d_x, "Sigma_x")[0].copy()
    sw = _stack_stage(Sigma_w, T, d_w, d_w, "Sigma_w")
    sv = _stack_stage(Sigma_v, T, d_v, d_v, "Sigma_v")
    for cov in (sw, sv):
        _symmetrize_in_place(cov)
    if np.max(np.abs(sx - sx.T), initial=0.0) <= SYM_TOL:
        sx = 0.5 * (sx + sx.T)

    return TeamModel(
        dims=dims,
        **{k: _freeze(v) for k, v in stacks.items()},
        mu_x=_freeze(mu),
        Sigma_x=_freeze(sx),
        Sigma_w=_freeze(sw),
        Sigma_v=_freeze(sv),
        alpha=_freeze(alpha_arr),
    )


def resize_team(model: TeamModel, n: int) -> TeamModel:
    """Rebuild the model for a population of n agents with homogeneous influence."""
    if n < 2:
        raise ValueError("n must be at least 2")
    return make_model(
        T=model.dims.T,
        alpha=np.ones(n),
        mu_x=model.mu_x,
        Sigma_x=model.Sigma_x,
        Sigma_w=model.Sigma_w,
        Sigma_v=model.Sigma_v,
        **{k: getattr(model, k) for k in _STAGE_KEYS},
    )


def _min_eig(m: np.ndarray) -> float:
    sym = 0.5 * (m + m.T)
    return float(np.linalg.eigvalsh(sym)[0])


def validate(model: TeamModel) -> ValidationReport:
    """Check every model invariant and report all violations with their stage."""
    v: list[str] = []
    d = model.dims
    if d.n < 2:
        v.append(f"n must be at least 2, got {d.n}")
    if d.T < 1:
        v.append(f"horizon T must be at least 1, got {d.T}")
    for name in ("d_x", "d_u", "d_y", "d_w", "d_v"):
        if getattr(d, name) < 1:
            v.append(f"{name} must be positive")

    if model.alpha.shape != (d.n,):
        v.append(f"alpha: expected shape {(d.n,)}, got {model.alpha.shape}")
    else:
        for i, a in enumerate(model.alpha):
            if a == 0.0:
                v.append(f"alpha[{i}] is zero")
        dev = abs(float(np.sum(model.alpha**2)) / d.n - 1.0)
        if dev > NORMALIZATION_TOL:
            v.append(f"alpha normalization violated: |(1/n) sum alpha^2 - 1| = {dev:.3e}")

    for key, (rname, cname) in _STAGE_SHAPES.items():
        want = (d.T, getattr(d, rname), getattr(d, cname))
        if getattr(model, key).shape != want:
            v.append(f"{key}: expected shape {want}, got {getattr(model, key).shape}")
    if model.mu_x.shape != (d.d_x,):
        v.append(f"mu_x: expected shape {(d.d_x,)}, got {model.mu_x.shape}")
    if model.Sigma_x.shape != (d.d_x, d.d_x):
        v.append(f"Sigma_x: expected shape {(d.d_x, d.d_x)}, got {model.Sigma_x.shape}")
    if model.Sigma_w.shape != (d.T, d.d_w, d.d_w):
        v.append(f"Sigma_w: expected shape {(d.T, d.d_w, d.d_w)}, got {model.Sigma_w.shape}")
    if model.Sigma_v.shape != (d.T, d.d_v, d.d_v):
        v.append(f"Sigma_v: expected shape {(d.T, d.d_v, d.d_v)}, got {model.Sigma_v.shape}")
    if v:
        # shape problems make the spectral checks below meaningless
        return ValidationReport(tuple(v))

    def check_sym(name: str, m: np.ndarray, t: int | None):
        where = "" if t is None else f" at t={t + 1}"
        if np.max(np.abs(m - m.T), initial=0.0) > SYM_TOL:
            v.append(f"{name} not symmetric{where}")

    def check_psd(name: str, m: np.ndarray, t: int | None):
        where = "" if t is None else f" at t={t + 1}"
        if _min_eig(m) < PSD_TOL:
            v.append(f"{name} not positive semidefinite{where}")

    def check_pd(name: str, m: np.ndarray, t: int | None):
        where = "" if t is None else f" at t={t + 1}"
        if _min_eig(m) <= PD_TOL:
            v.append(f"{name} not positive definite{where}")

    check_sym("Sigma_x", model.Sigma_x, None)
    check_psd("Sigma_x", model.Sigma_x, None)
    for t in range(d.T):
        check_sym("Q", model.Q[t], t)
        check_sym("Q_bar", model.Q_bar[t], t)
        check_sym("R", model.R[t], t)
        check_sym("R_bar", model.R_bar[t], t)
        check_sym("Sigma_w", model.Sigma_w[t], t)
        check_sym("Sigma_v", model.Sigma_v[t], t)
        check_psd("Q", model.Q[t], t)
        check_psd("Q+Q_bar", model.Q[t] + model.Q_bar[t], t)
        check_pd("R", model.R[t], t)
        check_pd("R+R_bar", model.R[t] + model.R_bar[t], t)
        check_psd("Sigma_w", model.Sigma_w[t], t)
        check_psd("Sigma_v", model.Sigma_v[t], t)
    return ValidationReport(tuple(v))


def normalize_influence(alpha_raw) -> np.ndarray:
    """Rescale an influence vector so that (1/n) sum alpha_i^2 = 1."""
    arr = np.asarray(alpha_raw, dtype=float).reshape(-1)
    n = arr.shape[0]
    if n < 2:
        raise InfluenceError(f"influence vector needs at least 2 entries, got {n}")
    if not np.all(np.isfinite(arr)):
        raise InfluenceError("influence vector has non-finite entries")
    if np.any(arr == 0.0):
        raise InfluenceError("influence vector has zero entries")
    ssq = float(np.sum(arr**2))
    if ssq == 0.0:
        raise InfluenceError("influence vector is zero")
    return arr * np.sqrt(n / ssq)


def _as_agent_matrix(values, alpha: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 2:
        raise ValueError(f"{name}: expected n stacked row vectors, got ndim {arr.ndim}")
    if arr.shape[0] != alpha.shape[0]:
        raise ValueError(
            f"{name}: {arr.shape[0]} vectors for {alpha.shape[0]} influence factors"
        )
    return arr


def deep_aggregate(values, alpha) -> np.ndarray:
    """Influence-weighted average (1/n) sum_i alpha_i values_i.

    ``values`` holds one row per agent; the result is a single vector.
    """
    alpha = np.asarray(alpha, dtype=float).reshape(-1)
    arr = _as_agent_matrix(values, alpha, "deep_aggregate")
    return alpha @ arr / alpha.shape[0]


def gauge_decompose(values, alpha) -> tuple[np.ndarray, np.ndarray]:
    """Split per-agent rows into (deviations, weighted average).

    Returns ``(deltas, bar)`` with ``deltas[i] = values[i] - alpha_i * bar``.
    The deviations satisfy (1/n) sum_i alpha_i deltas_i = 0.
    """
    alpha = np.asarray(alpha, dtype=float).reshape(-1)
    arr = _as_agent_matrix(values, alpha, "gauge_decompose")
    bar = alpha @ arr / alpha.shape[0]
    return arr - np.outer(alpha, bar), bar


def gauge_recompose(deltas, bar, alpha) -> np.ndarray:
    """Inverse of gauge_decompose: values[i] = deltas[i] + alpha_i * bar."""
    alpha = np.asarray(alpha, dtype=float).reshape(-1)
    arr = _as_agent_matrix(deltas, alpha, "gauge_recompose")
    bar = np.asarray(bar, dtype=float).reshape(-1)
    if bar.shape[0] != arr.shape[1]:
        raise ValueError(
            f"gauge_recompose: average has length {bar.shape[0]}, rows have {arr.shape[1]}"
        )
    return arr + np.outer(alpha, bar)


# ---------------------------------------------------------------------------
# JSON wire format


def _matrix_list(m: np.ndarray) -> list:
    return np.asarray(m, dtype=float).tolist()


def to_json_dict(model: TeamModel) -> dict:
    """Serialize a model to the documented JSON structure (always explicit stages)."""
    d = model.dims
    stages = []
    for t in range(d.T):
        st = model.stage(t)
        stages.append({k: _matrix_list(getattr(st, k)) for k in _STAGE_KEYS})
    return {
        "dims": {
            "n": d.n, "T": d.T, "d_x": d.d_x, "d_u": d.d_u,
            "d_y": d.d_y, "d_w": d.d_w, "d_v": d.d_v,
        },
        "stages": stages,
        "noise": {
            "mu_x": _matrix_list(model.mu_x),
            "Sigma_x": _matrix_list(model.Sigma_x),
            "Sigma_w": [_matrix_list(model.Sigma_w[t]) for t in range(d.T)],
            "Sigma_v": [_matrix_list(model.Sigma_v[t]) for t in range(d.T)],
        },
        "alpha": _matrix_list(model.alpha),
    }


def _json_matrix(value, rows: int, cols: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.shape != (rows, cols):
        raise ValueError(f"{name}: expected {rows}x{cols}, got shape {arr.shape}")
    return arr


def _json_cov_stack(value, T: int, dim: int, name: str) -> np.ndarray:
    """Accept one covariance matrix or a list of T of them."""
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim == 2:
        if arr.shape != (dim, dim):
            raise ValueError(f"{name}: expected {dim}x{dim}, got shape {arr.shape}")
        return np.broadcast_to(arr, (T, dim, dim)).copy()
    if arr.ndim == 3:
        if arr.shape != (T, dim, dim):
            raise ValueError(f"{name}: expected {T} matrices of {dim}x{dim}, got {arr.shape}")
        return arr.copy()
    raise ValueError(f"{name}: cannot interpret value")


def from_json_dict(doc: dict) -> TeamModel:
    """Build a TeamModel from a parsed JSON document.

    The document needs ``dims``, ``stages`` (one object or a list of T),
    ``noise``, and ``alpha``.  Coupling matrices, ``E``, ``S``, and ``mu_x``
    may be omitted; see the README for the full schema.
    """
    try:
        dims_doc = doc["dims"]
        dims = Dimensions(
            n=int(dims_doc["n"]), T=int(dims_doc["T"]), d_x=int(dims_doc["d_x"]),
            d_u=int(dims_doc["d_u"]), d_y=int(dims_doc["d_y"]),
            d_w=int(dims_doc["d_w"]), d_v=int(dims_doc["d_v"]),
        )
        stages_doc = doc["stages"]
        noise_doc = doc["noise"]
        alpha_doc = doc["alpha"]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"model document is missing required data: {exc}") from exc
    if dims.T < 1:
        raise ValueError("dims.T must be at least 1")

    if isinstance(stages_doc, dict):
        stages_doc = [stages_doc] * dims.T
    if len(stages_doc) != dims.T:
        raise ValueError(f"stages: expected {dims.T} entries, got {len(stages_doc)}")

    stacks = {k: np.zeros((dims.T, getattr(dims, r), getattr(dims, c)))
              for k, (r, c) in _STAGE_SHAPES.items()}
    for t, st in enumerate(stages_doc):
        for key, (rname, cname) in _STAGE_SHAPES.items():
            rows = getattr(dims, rname)
            cols = getattr(dims, cname)
            if key in st:
                stacks[key][t] = _json_matrix(st[key], rows, cols, f"stages[{t}].{key}")
            elif key in _REQUIRED_STAGE_KEYS:
                raise ValueError(f"stages[{t}]: missing required matrix {key}")
            elif key == "E":
                stacks[key][t] = np.eye(rows, cols)
            elif key == "S":
                stacks[key][t] = np.eye(rows, cols)
            # remaining optional keys default to zero

    alpha = np.asarray(alpha_doc, dtype=float).reshape(-1)
    if alpha.shape[0] != dims.n:
        raise ValueError(f"alpha: expected {dims.n} entries, got {alpha.shape[0]}")

    mu_x = noise_doc.get("mu_x", None)
    mu = np.zeros(dims.d_x) if mu_x is None else np.asarray(mu_x, dtype=float).reshape(-1)
    if mu.shape != (dims.d_x,):
        raise ValueError(f"noise.mu_x: expected {dims.d_x} entries, got {mu.shape}")
    try:
        sx = _json_matrix(noise_doc["Sigma_x"], dims.d_x, dims.d_x, "noise.Sigma_x")
        sw = _json_cov_stack(noise_doc["Sigma_w"], dims.T, dims.d_w, "noise.Sigma_w")
        sv = _json_cov_stack(noise_doc["Sigma_v"], dims.T, dims.d_v, "noise.Sigma_v")
    except KeyError as exc:
        raise ValueError(f"noise block is missing {exc}") from exc

    return make_model(
        T=dims.T, alpha=alpha, mu_x=mu, Sigma_x=sx, Sigma_w=sw, Sigma_v=sv,
        **stacks,
    )


def load_model(path) -> TeamModel:
    """Read and assemble a model from a JSON file."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not valid JSON ({exc})") from exc
    return from_json_dict(doc)


def save_model(model: TeamModel, path) -> None:
    """Write a model to a JSON file (floats round-trip exactly)."""
    Path(path).write_text(json.dumps(to_json_dict(model), indent=2) + "\n")
