"""Concrete semilinear models: KS advection nonlinearity, pointwise reaction
terms for the heat model, and the two actuator families with their design
derivatives.

The Jacobian adjoints implemented here are the exact transposes of the
discrete Jacobians (discretize-then-optimize), so the weighted duality
<F'_w f, g> = <f, F'*_w g> holds to roundoff on every grid.  The continuous
formulas only serve as O(h) consistency oracles in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .exceptions import ConstraintViolationError, PdeoptError
from .grids import Grid1D, Grid2D, LinearOperator, heat_operator, ks_operator


def _central_diff(f: np.ndarray, h: float) -> np.ndarray:
    """Central first difference with zero values at both ghost ends."""
    out = np.empty_like(f)
    out[1:-1] = (f[2:] - f[:-2]) / (2.0 * h)
    out[0] = f[1] / (2.0 * h)
    out[-1] = -f[-2] / (2.0 * h)
    return out


def ks_nonlinearity(w: np.ndarray, grid: Grid1D) -> np.ndarray:
    """F(w) = -w * w_xi, with the clamped boundary values (zero) as ghosts."""
    return -w * _central_diff(w, grid.h)


def ks_jacobian_apply(w: np.ndarray, f: np.ndarray, grid: Grid1D) -> np.ndarray:
    """Derivative of the KS nonlinearity at w applied to f: -w f_xi - w_xi f."""
    return -w * _central_diff(f, grid.h) - _central_diff(w, grid.h) * f


def ks_jacobian_adjoint_apply(w: np.ndarray, g: np.ndarray, grid: Grid1D) -> np.ndarray:
    """Exact transpose of the discrete KS Jacobian applied to g.

    Equals D(w*g) - (Dw)*g with D the central difference, i.e. it tends to
    +w g_xi in the continuum (integration by parts of -w f_xi - w_xi f
    against g moves both terms onto f with that sign).
    """
    return _central_diff(w * g, grid.h) - _central_diff(w, grid.h) * g


@dataclass(frozen=True)
class ScalarNonlinearity:
    """Pointwise reaction term F(zeta) with its derivative.

    ``sign_condition`` declares zeta*F(zeta) <= 0 for all real zeta, the
    hypothesis under which the ISS energy bound applies.
    """

    name: str
    value: Callable[[np.ndarray], np.ndarray]
    derivative: Callable[[np.ndarray], np.ndarray]
    sign_condition: bool


CUBIC_SINK = ScalarNonlinearity(
    name="cubic",
    value=lambda z: -z**3,
    derivative=lambda z: -3.0 * z**2,
    sign_condition=True,
)


def heat_nonlinearity(w: np.ndarray, f_scalar: ScalarNonlinearity) -> np.ndarray:
    """Pointwise application F(w_i)."""
    with np.errstate(over="ignore", invalid="ignore"):
        out = f_scalar.value(w)
    if not np.all(np.isfinite(out)):
        raise PdeoptError("pointwise nonlinearity overflowed to a non-finite value")
    return out


def heat_jacobian_apply(w: np.ndarray, f: np.ndarray, f_scalar: ScalarNonlinearity) -> np.ndarray:
    return f_scalar.derivative(w) * f


def heat_jacobian_adjoint_apply(w: np.ndarray, g: np.ndarray, f_scalar: ScalarNonlinearity) -> np.ndarray:
    # diagonal Jacobian, hence self-adjoint
    return f_scalar.derivative(w) * g


@dataclass(frozen=True)
class ActuatorDesign:
    """Design parameters: length-1 array (KS location) or shape coefficients."""

    params: np.ndarray

    @staticmethod
    def of(*values: float) -> "ActuatorDesign":
        return ActuatorDesign(params=np.asarray(values, dtype=float))


class ActuatorFamily:
    """Common interface of the two actuator parametrizations."""

    kind: str
    design_dim: int

    def evaluate(self, design: ActuatorDesign, grid) -> np.ndarray:
        raise NotImplementedError

    def param_derivative(self, design: ActuatorDesign, grid) -> np.ndarray:
        """Rows m = d b / d param_m sampled on the grid, shape (design_dim, size)."""
        raise NotImplementedError

    def project(self, params: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def contains(self, params: np.ndarray, tol: float = 1e-12) -> bool:
        return bool(np.all(np.abs(self.project(params) - params) <= tol))

    def check(self, design: ActuatorDesign) -> None:
        if design.params.shape != (self.design_dim,):
            raise ConstraintViolationError(
                f"design has {design.params.shape[0]} parameters, family needs {self.design_dim}")
        if not self.contains(design.params):
            raise ConstraintViolationError(f"design {design.params} outside the admissible set")

    def initial_design(self) -> ActuatorDesign:
        raise NotImplementedError


class KsGaussianActuator(ActuatorFamily):
    """Gaussian bump b(xi; r) = exp(-(xi-r)^2 / (2 omega^2)) with r in [a, b].

    Smooth in both xi and r, so the design derivative d b/d r is analytic:
    b * (xi - r)/omega^2.
    """

    kind = "ks-gaussian"
    design_dim = 1

    def __init__(self, omega: float = 0.05, bounds: tuple[float, float] = (0.1, 0.9)):
        if omega <= 0:
            raise ValueError("bump width omega must be positive")
        a, b = bounds
        if not (0.0 < a < b < 1.0):
            raise ValueError(f"admissible interval must satisfy 0 < a < b < 1, got {bounds}")
        self.omega = omega
        self.bounds = (float(a), float(b))

    def evaluate(self, design: ActuatorDesign, grid: Grid1D) -> np.ndarray:
        self.check(design)
        r = design.params[0]
        return np.exp(-((grid.nodes - r) ** 2) / (2.0 * self.omega**2))

    def param_derivative(self, design: ActuatorDesign, grid: Grid1D) -> np.ndarray:
        self.check(design)
        r = design.params[0]
        b = np.exp(-((grid.nodes - r) ** 2) / (2.0 * self.omega**2))
        return (b * (grid.nodes - r) / self.omega**2)[None, :]

    def project(self, params: np.ndarray) -> np.ndarray:
        return np.clip(params, self.bounds[0], self.bounds[1])

    def initial_design(self) -> ActuatorDesign:
        return ActuatorDesign.of(0.5 * (self.bounds[0] + self.bounds[1]))


class HeatShapeActuator(ActuatorFamily):
    """Truncated cosine-basis actuator shape r(xi) = sum_m c_m phi_m(xi).

    phi_(j,k)(x, y) = cos(j pi x/lx) cos(k pi y/ly) for j, k < basis_per_axis.
    The admissible set is the coefficient box |c_m| <= 1/(M * gamma_m) with
    gamma_m = 1 + pi*|(j/lx, k/ly)|, a conservative bound that keeps
    max_xi (|r| + |grad r|) <= 1, i.e. the shape inside the C1 unit ball.
    """

    kind = "heat-shape"

    def __init__(self, basis_per_axis: int = 3, lx: float = 1.0, ly: float = 1.0):
        if basis_per_axis < 1:
            raise ValueError("need at least one basis function per axis")
        self.basis_per_axis = basis_per_axis
        self.lx, self.ly = float(lx), float(ly)
        self.modes = [(j, k) for k in range(basis_per_axis) for j in range(basis_per_axis)]
        self.design_dim = len(self.modes)
        gammas = np.array([1.0 + np.pi * np.hypot(j / self.lx, k / self.ly)
                           for j, k in self.modes])
        self.coef_bounds = 1.0 / (self.design_dim * gammas)

    def _basis_matrix(self, grid: Grid2D) -> np.ndarray:
        xx, yy = grid.meshgrid()
        rows = [np.cos(j * np.pi * xx / self.lx) * np.cos(k * np.pi * yy / self.ly)
                for j, k in self.modes]
        return np.stack([r.ravel() for r in rows])

    def evaluate(self, design: ActuatorDesign, grid: Grid2D) -> np.ndarray:
        self.check(design)
        return design.params @ self._basis_matrix(grid)

    def param_derivative(self, design: ActuatorDesign, grid: Grid2D) -> np.ndarray:
        self.check(design)
        # the family is linear in its coefficients
        return self._basis_matrix(grid)

    def project(self, params: np.ndarray) -> np.ndarray:
        return np.clip(params, -self.coef_bounds, self.coef_bounds)

    def initial_design(self) -> ActuatorDesign:
        c = np.zeros(self.design_dim)
        c[0] = 0.5 * self.coef_bounds[0]
        return ActuatorDesign(params=c)


def actuator_evaluate(family: ActuatorFamily, design: ActuatorDesign, grid) -> np.ndarray:
    """Sample b(.; design) on the grid; the design must be admissible."""
    return family.evaluate(design, grid)


def actuator_design_derivative_adjoint(family: ActuatorFamily, design: ActuatorDesign,
                                       u_t: float, p_t: np.ndarray, grid) -> np.ndarray:
    """Adjoint of the design derivative of the input map at a single time.

    Component m is u_t * <d b/d param_m, p_t> in the discrete L2 inner
    product; stacking these over time and integrating yields the design
    gradient of the cost.
    """
    if u_t == 0.0:
        return np.zeros(family.design_dim)
    rows = family.param_derivative(design, grid)
    return u_t * grid.weight * (rows @ p_t)


@dataclass(frozen=True)
class ModelSpec:
    """One semilinear model: linear part, nonlinearity with Jacobian pair,
    and actuator family, all on a fixed grid.

    ``nonlinearity`` and the Jacobian callables are None for linearized
    variants.  ``sign_condition`` marks zeta*F(zeta) <= 0 (ISS hypothesis).
    """

    name: str
    grid: object
    linear_op: LinearOperator
    nonlinearity: Callable[[np.ndarray], np.ndarray] | None
    jacobian_apply: Callable[[np.ndarray, np.ndarray], np.ndarray] | None
    jacobian_adjoint_apply: Callable[[np.ndarray, np.ndarray], np.ndarray] | None
    actuator_family: ActuatorFamily
    sign_condition: bool = False
    lam: float | None = None

    @property
    def is_linear(self) -> bool:
        return self.nonlinearity is None

    def nonlinear_term(self, w: np.ndarray) -> np.ndarray:
        if self.nonlinearity is None:
            return np.zeros_like(w)
        return self.nonlinearity(w)


def make_ks_model(grid: Grid1D, lam: float, actuator: KsGaussianActuator | None = None,
                  linear: bool = False) -> ModelSpec:
    """KS model A w = -w_4xi - lam w_2xi plus F(w) = -w w_xi (optional)."""
    fam = actuator if actuator is not None else KsGaussianActuator()
    a_op = ks_operator(grid, lam)
    if linear:
        nl = jac = jac_t = None
    else:
        nl = lambda w: ks_nonlinearity(w, grid)
        jac = lambda w, f: ks_jacobian_apply(w, f, grid)
        jac_t = lambda w, g: ks_jacobian_adjoint_apply(w, g, grid)
    return ModelSpec(name="ks-linear" if linear else "ks", grid=grid, linear_op=a_op,
                     nonlinearity=nl, jacobian_apply=jac, jacobian_adjoint_apply=jac_t,
                     actuator_family=fam, sign_condition=False, lam=lam)


def make_heat_model(grid: Grid2D, f_scalar: ScalarNonlinearity | None = CUBIC_SINK,
                    actuator: HeatShapeActuator | None = None) -> ModelSpec:
    """2-D diffusion with a pointwise reaction term (pass None for linear heat)."""
    fam = actuator if actuator is not None else HeatShapeActuator(lx=grid.lx, ly=grid.ly)
    a_op = heat_operator(grid)
    if f_scalar is None:
        return ModelSpec(name="heat-linear", grid=grid, linear_op=a_op, nonlinearity=None,
                         jacobian_apply=None, jacobian_adjoint_apply=None,
                         actuator_family=fam, sign_condition=False)
    nl = lambda w: heat_nonlinearity(w, f_scalar)
    jac = lambda w, f: heat_jacobian_apply(w, f, f_scalar)
    jac_t = lambda w, g: heat_jacobian_adjoint_apply(w, g, f_scalar)
    return ModelSpec(name="heat", grid=grid, linear_op=a_op, nonlinearity=nl,
                     jacobian_apply=jac, jacobian_adjoint_apply=jac_t,
                     actuator_family=fam, sign_condition=f_scalar.sign_condition)
