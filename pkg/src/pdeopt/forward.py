"""Time integration of the semilinear IVP and trajectory-level energy checks.

The stepper is IMEX: Crank-Nicolson on the stiff linear operator A and a
second-order Adams-Bashforth extrapolation of the nonlinear-plus-input term
N(x, u) = F(x) + b u,

    (I - dt/2 A) x_{k+1} = (I + dt/2 A) x_k + dt * s_k,
    s_0 = N_0,   s_k = 3/2 N_k - 1/2 N_{k-1}   (k >= 1),

which is unconditionally stable against the linear part and avoids Newton
solves on the nonlinearity.  Divergence of a trajectory is reported as a
``BlowUpError`` with the step index; existence is only local in time, so a
blow-up is a legitimate outcome, not a bug.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps
from scipy.sparse.linalg import splu

from .exceptions import BlowUpError, NotApplicableError, PdeoptError
from .grids import (Grid1D, Grid2D, build_grid_1d, build_grid_2d, inner_product,
                    ks_operator, smallest_eigenvalue)
from .models import ActuatorDesign, KsGaussianActuator, ModelSpec

FOUR_PI_SQ = 4.0 * np.pi**2


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid on [0, tau] with nt steps."""

    tau: float
    nt: int

    def __post_init__(self):
        if self.nt < 2:
            raise ValueError(f"need at least 2 time steps, got nt={self.nt}")
        if self.tau <= 0:
            raise ValueError(f"horizon must be positive, got tau={self.tau}")

    @property
    def dt(self) -> float:
        return self.tau / self.nt

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.tau, self.nt + 1)


def trapezoid_weights(nt: int) -> np.ndarray:
    """Per-sample trapezoid weights (1/2 at both ends, 1 inside)."""
    theta = np.ones(nt + 1)
    theta[0] = theta[-1] = 0.5
    return theta


@dataclass(frozen=True)
class ControlSignal:
    """Scalar input sampled on the state time grid."""

    time_grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (self.time_grid.nt + 1,):
            raise ValueError(f"control needs {self.time_grid.nt + 1} samples, "
                             f"got {self.values.shape}")

    @staticmethod
    def zero(tg: TimeGrid) -> "ControlSignal":
        return ControlSignal(time_grid=tg, values=np.zeros(tg.nt + 1))


def control_l2_norm(u: ControlSignal) -> float:
    """Trapezoid-rule L2(0, tau) norm of the sampled input."""
    theta = trapezoid_weights(u.time_grid.nt)
    return float(np.sqrt(u.time_grid.dt * np.sum(theta * u.values**2)))


@dataclass(frozen=True)
class Trajectory:
    """Discrete states x(t_k), k = 0..nt, stacked as rows."""

    time_grid: TimeGrid
    states: np.ndarray

    def __post_init__(self):
        expect = (self.time_grid.nt + 1,)
        if self.states.shape[:1] != expect:
            raise ValueError(f"trajectory needs {expect[0]} states, got {self.states.shape[0]}")

    @property
    def initial(self) -> np.ndarray:
        return self.states[0]

    @property
    def terminal(self) -> np.ndarray:
        return self.states[-1]


class _EigenCN:
    """CN factors through the orthonormal eigenbasis of a symmetric A.

    Forward and transposed solves share one code path with orthogonal
    transforms and bounded multipliers, so the adjoint sweep is the exact
    transpose of the forward sweep to a few ulps even for the stiff
    biharmonic operator (an LU pairing loses ~kappa(M) digits there).
    """

    def __init__(self, a_dense: np.ndarray, dt: float):
        lam, v = np.linalg.eigh(a_dense)
        self._v = v
        self._den = 1.0 - 0.5 * dt * lam
        self._num = 1.0 + 0.5 * dt * lam
        if np.min(np.abs(self._den)) < 1e-8:
            raise ValueError("CN factor nearly singular in the eigen path")

    def solve(self, x: np.ndarray) -> np.ndarray:
        return self._v @ ((self._v.T @ x) / self._den)

    solve_t = solve

    def explicit(self, x: np.ndarray) -> np.ndarray:
        return self._v @ ((self._v.T @ x) * self._num)

    explicit_t = explicit


class _SpluCN:
    """CN factors via sparse LU; transposed solves reuse the same factors."""

    def __init__(self, a_mat: sps.csr_matrix, dt: float):
        eye = sps.eye(a_mat.shape[0], format="csr")
        self._lu = splu((eye - 0.5 * dt * a_mat).tocsc())
        self._p = (eye + 0.5 * dt * a_mat).tocsr()
        self._p_t = self._p.T.tocsr()

    def solve(self, x: np.ndarray) -> np.ndarray:
        return self._lu.solve(x)

    def solve_t(self, x: np.ndarray) -> np.ndarray:
        return self._lu.solve(x, trans="T")

    def explicit(self, x: np.ndarray) -> np.ndarray:
        return self._p @ x

    def explicit_t(self, x: np.ndarray) -> np.ndarray:
        return self._p_t @ x


_factor_cache: dict[tuple[int, float], tuple] = {}


def crank_nicolson_factors(a_op, dt: float):
    """Solver for M = I - (dt/2) A with the matching explicit half-step.

    Symmetric operators at 1-D scale go through the eigen path (exact
    transpose pairing); larger or unsymmetric ones through sparse LU.
    Factors are cached per (operator, dt) because optimization loops re-solve
    with identical matrices thousands of times.
    """
    key = (id(a_op.mat), dt)
    hit = _factor_cache.get(key)
    if hit is not None and hit[0] is a_op.mat:
        return hit[1]
    if a_op.symmetric and a_op.n <= 512:
        try:
            factors = _EigenCN(a_op.mat.toarray(), dt)
        except ValueError:
            factors = _SpluCN(a_op.mat, dt)
    else:
        factors = _SpluCN(a_op.mat, dt)
    if len(_factor_cache) > 16:
        _factor_cache.clear()
    _factor_cache[key] = (a_op.mat, factors)
    return factors


def solve_forward(model: ModelSpec, u: ControlSignal | None, design: ActuatorDesign,
                  x0: np.ndarray, tg: TimeGrid) -> Trajectory:
    """Integrate the IVP; raises BlowUpError(step) on non-finite states."""
    grid = model.grid
    if x0.shape != (grid.size,):
        raise ValueError(f"x0 of shape {x0.shape} does not match grid size {grid.size}")
    model.actuator_family.check(design)
    uv = np.zeros(tg.nt + 1) if u is None else u.values
    if uv.shape != (tg.nt + 1,):
        raise ValueError("control and state time grids disagree")

    b = model.actuator_family.evaluate(design, grid)
    cn = crank_nicolson_factors(model.linear_op, tg.dt)

    states = np.empty((tg.nt + 1, grid.size))
    states[0] = x0
    n_prev = None
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(tg.nt):
            try:
                n_k = model.nonlinear_term(states[k]) + b * uv[k]
            except PdeoptError as err:
                raise BlowUpError(step=k + 1, message=f"step {k + 1}: {err}") from None
            s_k = n_k if k == 0 else 1.5 * n_k - 0.5 * n_prev
            states[k + 1] = cn.solve(cn.explicit(states[k]) + tg.dt * s_k)
            if not np.all(np.isfinite(states[k + 1])):
                raise BlowUpError(step=k + 1)
            n_prev = n_k
    return Trajectory(time_grid=tg, states=states)


def energy_trace(traj: Trajectory, grid) -> np.ndarray:
    """E(t_k) = <x_k, x_k> in the discrete L2 inner product."""
    return np.array([inner_product(x, x, grid) for x in traj.states])


_sigma_cache: dict[tuple[int, float], float] = {}


def _ks_sigma(grid: Grid1D, lam: float) -> float:
    """Smallest eigenvalue of the discrete -A, memoized per (n, lam)."""
    key = (grid.n, lam)
    if key not in _sigma_cache:
        if len(_sigma_cache) > 32:
            _sigma_cache.clear()
        _sigma_cache[key] = smallest_eigenvalue(-ks_operator(grid, lam))
    return _sigma_cache[key]


def verify_ks_bound(traj: Trajectory, u: ControlSignal, design: ActuatorDesign,
                    lam: float, grid: Grid1D,
                    actuator: KsGaussianActuator | None = None) -> float:
    """Margin of the KS energy bound; nonnegative means the bound held.

    ||w(tau)||^2 <= ||w_0||^2 + (1/sigma(lam)) ||u||_{L2}^2 max_xi b^2(xi; r),
    with sigma(lam) the smallest eigenvalue of the discrete -A.  Only asserted
    for lam < 4 pi^2, where -A is positive definite.
    """
    if lam >= FOUR_PI_SQ:
        raise NotApplicableError(f"bound requires lam < 4*pi^2 ~= {FOUR_PI_SQ:.3f}, got {lam}")
    fam = actuator if actuator is not None else KsGaussianActuator()
    sigma = _ks_sigma(grid, lam)
    if sigma <= 0:
        raise NotApplicableError(f"discrete -A not positive definite (sigma = {sigma:.3e})")
    b = fam.evaluate(design, grid)
    rhs = inner_product(traj.initial, traj.initial, grid) \
        + control_l2_norm(u)**2 * float(np.max(b**2)) / sigma
    lhs = inner_product(traj.terminal, traj.terminal, grid)
    return rhs - lhs


def verify_heat_iss_bound(traj: Trajectory, u: ControlSignal, design: ActuatorDesign,
                          grid: Grid2D, model: ModelSpec) -> float:
    """Margin of the ISS bound for the nonlinear heat model.

    ||w(tau)||^2 <= ||w_0||^2 + (4/c_Omega) ||u||_{L2}^2 ||r||_{L2}^2, with
    c_Omega the smallest eigenvalue of the discrete -Laplacian (the discrete
    Poincare constant).  Requires the declared sign condition zeta F(zeta) <= 0.
    """
    if not (model.sign_condition or model.is_linear):
        raise NotApplicableError("ISS bound needs the sign condition zeta*F(zeta) <= 0")
    key = (id(model.linear_op.mat), -1.0)
    if key not in _sigma_cache:
        if len(_sigma_cache) > 32:
            _sigma_cache.clear()
        _sigma_cache[key] = smallest_eigenvalue(-model.linear_op)
    c_omega = _sigma_cache[key]
    r_vec = model.actuator_family.evaluate(design, grid)
    rhs = inner_product(traj.initial, traj.initial, grid) \
        + 4.0 / c_omega * control_l2_norm(u)**2 * inner_product(r_vec, r_vec, grid)
    lhs = inner_product(traj.terminal, traj.terminal, grid)
    return rhs - lhs


# --- trajectory export -----------------------------------------------------

def trajectory_to_csv(traj: Trajectory, path) -> None:
    """Write rows (t, node values...) with full-precision scientific floats."""
    n = traj.states.shape[1]
    header = "t," + ",".join(f"x_{i:06d}" for i in range(n))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for t, row in zip(traj.time_grid.times, traj.states):
            fh.write(f"{t:.16e}," + ",".join(f"{v:.16e}" for v in row) + "\n")


_MAGIC = b"PDEOPTRJ"


def save_checkpoint(traj: Trajectory, grid, path) -> None:
    """Compact binary checkpoint: grid descriptor header + row-major doubles."""
    if isinstance(grid, Grid1D):
        desc = {"kind": "1d", "n": grid.n}
    else:
        desc = {"kind": "2d", "nx": grid.nx, "ny": grid.ny, "lx": grid.lx, "ly": grid.ly,
                "dirichlet": [s for s, d in grid.dirichlet.items() if d]}
    header = json.dumps({"grid": desc, "nt": traj.time_grid.nt,
                         "tau": traj.time_grid.tau}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(np.ascontiguousarray(traj.states, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[Trajectory, object]:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path} is not a trajectory checkpoint")
        (hlen,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(hlen).decode("utf-8"))
        payload = np.frombuffer(fh.read(), dtype="<f8")
    desc = meta["grid"]
    if desc["kind"] == "1d":
        grid = build_grid_1d(desc["n"])
    else:
        grid = build_grid_2d(desc["nx"], desc["ny"], desc["lx"], desc["ly"],
                             dirichlet_sides=tuple(desc["dirichlet"]))
    tg = TimeGrid(tau=meta["tau"], nt=meta["nt"])
    states = payload.reshape(tg.nt + 1, grid.size).copy()
    return Trajectory(time_grid=tg, states=states), grid
