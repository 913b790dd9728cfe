"""Gas properties, friction and pipe-equation residuals.

All functions work in SI units (Pa, kg/s, m, K).  Bar and other convenience
units are converted at the I/O boundary, never here.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field

GRAVITY = 9.81  # m/s^2

# Specific gas constant of pure methane, J/(kg K).
R_S_METHANE = 518.26

# Critical point of methane, used by the AGA/Papay constructors.
P_CRIT_METHANE = 45.99e5  # Pa
T_CRIT_METHANE = 190.56  # K

BRACKET_SINGULARITY_TOL = 1e-12


class GasFactorKind(enum.Enum):
    CONSTANT = "constant"
    LINEAR_AGA = "linear_aga"
    QUADRATIC_PAPAY = "quadratic_papay"


_NUM_COEFFS = {
    GasFactorKind.CONSTANT: 1,
    GasFactorKind.LINEAR_AGA: 2,
    GasFactorKind.QUADRATIC_PAPAY: 3,
}


class GasModelError(ValueError):
    """Invalid gas-factor model or evaluation outside its validity range."""


@dataclass(frozen=True)
class GasFactorModel:
    """Polynomial real-gas factor z(p) = z0 + z1*p + ... + zn*p^n."""

    kind: GasFactorKind
    coefficients: tuple[float, ...]
    valid_pressure_max: float = 150e5

    def __post_init__(self):
        expected = _NUM_COEFFS[self.kind]
        if len(self.coefficients) != expected:
            raise GasModelError(
                f"{self.kind.value} model needs {expected} coefficients, "
                f"got {len(self.coefficients)}"
            )
        # Positivity of z and of z - p z' on the validity range; sampled
        # densely, which is exact enough for polynomials of degree <= 2.
        for k in range(201):
            p = self.valid_pressure_max * k / 200.0
            z, dz = self.evaluate(p, _check_range=False)
            if z <= 0.0:
                raise GasModelError(f"z(p) <= 0 at p = {p:.4g} Pa")
            if z - p * dz <= 0.0:
                raise GasModelError(f"z - p*dz/dp <= 0 at p = {p:.4g} Pa")

    @staticmethod
    def constant(z0: float) -> "GasFactorModel":
        return GasFactorModel(GasFactorKind.CONSTANT, (float(z0),))

    @staticmethod
    def linear_aga(
        temperature: float,
        p_crit: float = P_CRIT_METHANE,
        t_crit: float = T_CRIT_METHANE,
    ) -> "GasFactorModel":
        """Linear AGA form z = 1 + (0.257 - 0.533/T_red) * p_red.

        Expanded into polynomial coefficients in absolute pressure so the
        provenance of the numbers stays auditable.
        """
        t_red = temperature / t_crit
        z1 = (0.257 - 0.533 / t_red) / p_crit
        return GasFactorModel(
            GasFactorKind.LINEAR_AGA, (1.0, z1), valid_pressure_max=70e5
        )

    @staticmethod
    def quadratic_papay(
        temperature: float,
        p_crit: float = P_CRIT_METHANE,
        t_crit: float = T_CRIT_METHANE,
    ) -> "GasFactorModel":
        """Papay form z = 1 - 3.52 p_r e^(-2.26 T_r) + 0.274 p_r^2 e^(-1.878 T_r)."""
        t_red = temperature / t_crit
        z1 = -3.52 * math.exp(-2.26 * t_red) / p_crit
        z2 = 0.274 * math.exp(-1.878 * t_red) / p_crit**2
        return GasFactorModel(
            GasFactorKind.QUADRATIC_PAPAY, (1.0, z1, z2), valid_pressure_max=150e5
        )

    def evaluate(self, p: float, _check_range: bool = True) -> tuple[float, float]:
        """Return (z(p), dz/dp) at pressure p."""
        if _check_range and p > self.valid_pressure_max:
            warnings.warn(
                f"pressure {p:.4g} Pa above gas model validity range "
                f"({self.valid_pressure_max:.4g} Pa)",
                stacklevel=2,
            )
        z = 0.0
        dz = 0.0
        for k, c in enumerate(self.coefficients):
            z += c * p**k
            if k >= 1:
                dz += k * c * p ** (k - 1)
        return z, dz

    def second_derivative(self, p: float) -> float:
        d2 = 0.0
        for k, c in enumerate(self.coefficients):
            if k >= 2:
                d2 += k * (k - 1) * c * p ** (k - 2)
        return d2


@dataclass(frozen=True)
class PipeGeometry:
    """Cylindrical pipe: length, diameter, wall roughness and end heights."""

    length: float
    diameter: float
    roughness: float
    height_left: float = 0.0
    height_right: float = 0.0

    def __post_init__(self):
        if self.length <= 0.0:
            raise ValueError("pipe length must be positive")
        if self.diameter <= 0.0:
            raise ValueError("pipe diameter must be positive")
        if self.roughness <= 0.0:
            raise ValueError("pipe roughness must be positive")

    @property
    def area(self) -> float:
        return 0.25 * math.pi * self.diameter**2

    @property
    def slope(self) -> float:
        return (self.height_right - self.height_left) / self.length


@dataclass(frozen=True)
class GasConstants:
    specific_gas_constant: float = R_S_METHANE
    temperature: float = 283.15
    gravity: float = GRAVITY

    def __post_init__(self):
        if self.temperature <= 0.0:
            raise ValueError("temperature must be positive")

    def kappa(self, area: float) -> float:
        """R_s * T / A for a pipe of the given cross section."""
        return self.specific_gas_constant * self.temperature / area


def friction_factor_nikuradse(geom: PipeGeometry) -> float:
    """Darcy-Weisbach friction factor, Nikuradse's explicit rough-pipe form."""
    ratio = geom.roughness / (3.71 * geom.diameter)
    if ratio >= 1.0:
        raise ValueError(
            f"roughness/(3.71*diameter) = {ratio:.4g} >= 1, "
            "Nikuradse formula undefined"
        )
    return (-2.0 * math.log10(ratio)) ** -2


def gas_factor(model: GasFactorModel, p: float) -> tuple[float, float]:
    """Evaluate z and its exact derivative at pressure p (Pa)."""
    return model.evaluate(p)


def bracket_term(model: GasFactorModel, p: float) -> float:
    """z^2 / (z - p*dz/dp), the factor linking net inflow to pressure rise."""
    z, dz = model.evaluate(p)
    denom = z - p * dz
    if denom <= BRACKET_SINGULARITY_TOL:
        raise GasModelError(
            f"bracket-term denominator {denom:.4g} <= {BRACKET_SINGULARITY_TOL:g} "
            f"at p = {p:.4g} Pa; gas model outside its validity range"
        )
    return z * z / denom


def bracket_term_derivative(model: GasFactorModel, p: float) -> float:
    """d/dp of the bracket term, needed for analytic Jacobians."""
    z, dz = model.evaluate(p)
    d2 = model.second_derivative(p)
    denom = z - p * dz
    if denom <= BRACKET_SINGULARITY_TOL:
        raise GasModelError(f"bracket-term singular at p = {p:.4g} Pa")
    ddenom = -p * d2
    return (2.0 * z * dz * denom - z * z * ddenom) / denom**2


def velocity_from_state(
    p: float,
    q: float,
    model: GasFactorModel,
    geom: PipeGeometry,
    constants: GasConstants,
) -> float:
    """Gas velocity v = z(p) * kappa * q / p, sign following the flow."""
    if p <= BRACKET_SINGULARITY_TOL:
        raise ZeroDivisionError(f"nonpositive pressure {p:.4g} Pa")
    z, _ = model.evaluate(p)
    return z * constants.kappa(geom.area) * q / p


def pipe_residual_left_right(
    geom: PipeGeometry,
    model: GasFactorModel,
    constants: GasConstants,
    p_left: float,
    p_right: float,
    q_left: float,
    q_right: float,
    dpr_dt: float,
) -> tuple[float, float]:
    """Residuals of the left-right discretization.

    Continuity is evaluated at the right end, friction and gravity at the
    left end.  Both residuals are zero exactly when the scheme holds.
    """
    if p_left <= 0.0 or p_right <= 0.0:
        raise ZeroDivisionError("nonpositive boundary pressure")
    kappa = constants.kappa(geom.area)
    res_cont = dpr_dt + bracket_term(model, p_right) * kappa * (q_right - q_left) / geom.length

    z_l, _ = model.evaluate(p_left)
    res_mom = (
        geom.area * (p_right - p_left) / geom.length
        + friction_factor_nikuradse(geom) / (2.0 * geom.diameter)
        * kappa * z_l * q_left * abs(q_left) / p_left
        + geom.slope * constants.gravity / kappa * p_left / z_l
    )
    return res_cont, res_mom


def pipe_residual_trapezoidal(
    geom: PipeGeometry,
    model: GasFactorModel,
    constants: GasConstants,
    p_left: float,
    p_right: float,
    q_left: float,
    q_right: float,
    dpl_dt: float,
    dpr_dt: float,
) -> tuple[float, float]:
    """Residuals of the trapezoidal (implicit-box spatial part) discretization."""
    if p_left <= 0.0 or p_right <= 0.0:
        raise ZeroDivisionError("nonpositive boundary pressure")
    kappa = constants.kappa(geom.area)
    b_sum = bracket_term(model, p_left) + bracket_term(model, p_right)
    res_cont = dpl_dt + dpr_dt + b_sum * kappa * (q_right - q_left) / geom.length

    z_l, _ = model.evaluate(p_left)
    z_r, _ = model.evaluate(p_right)
    lam = friction_factor_nikuradse(geom)
    res_mom = (
        geom.area * (p_right - p_left) / geom.length
        + lam / (2.0 * geom.diameter) * kappa
        * (z_l * q_left * abs(q_left) / p_left + z_r * q_right * abs(q_right) / p_right)
        + geom.slope * constants.gravity / kappa * (p_left / z_l + p_right / z_r)
    )
    return res_cont, res_mom


def pipe_residual_linearized(
    geom: PipeGeometry,
    constants: GasConstants,
    z_const: float,
    vbar: float,
    p_left: float,
    p_right: float,
    q: float,
    p_lin: float = 0.0,
) -> float:
    """Momentum residual of the linearized pipe model.

    Friction uses a frozen speed magnitude ``vbar`` and the gravity term a
    frozen linearization pressure ``p_lin``, so the residual is affine in
    (p_left, p_right, q) up to the constant gravity offset.
    """
    if vbar < 0.0:
        raise ValueError("vbar is a speed magnitude and must be >= 0")
    for name, value in (("p_left", p_left), ("p_right", p_right), ("q", q)):
        if not math.isfinite(value):
            raise ValueError(f"non-finite input {name}")
    kappa = constants.kappa(geom.area)
    lam = friction_factor_nikuradse(geom)
    return (
        geom.area * (p_right - p_left) / geom.length
        + lam / (2.0 * geom.diameter) * q * vbar
        + geom.slope * constants.gravity / kappa * p_lin / z_const
    )
