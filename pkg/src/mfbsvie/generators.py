"""Drivers ``g(t, s, y, z, mu, nu)``, free terms ``psi(t)`` and their constants.

Generators only see the laws through three summaries, which is all the
built-in families need:

* ``mu_mean`` -- mean of the law of ``Y(s)``;
* ``mu_rms``  -- ``W_2(mu, delta_0)``, the root-mean-square of ``Y(s)``;
* ``nu_rms``  -- ``W_2(nu, delta_0)``, the root-mean-square of ``|Z(t, s)|``;
* ``mu_abs``, ``nu_abs`` -- the ``W_1`` distances to ``delta_0`` (mean of
  ``|Y(s)|`` and of ``|Z(t, s)|``).

Built-in families
-----------------
``zero``
    ``g = 0``.
``linear-lipschitz``
    ``a y + b z_1 + c W_2(mu, delta_0) + e W_2(nu, delta_0) + m mean(mu)
    + c1 W_1(mu, delta_0) + e1 W_1(nu, delta_0) + h0 + h1 (s - t)``
    with Lipschitz constant ``L = |a| + |b| + |c| + |e| + |m| + |c1| + |e1|``.
    With ``c = e = 0`` the driver is Lipschitz in the laws for ``W_1``.
``quad-bounded``
    ``w (s - t)^{-1/3} + c_y |y| + c_z |z_1|^2 + c_mu W_2(mu, delta_0) + c_nu arctan W_2(nu, delta_0)``
    (defaults all 1 except ``c_y = 2``); bounded in the law of Z.
``quad-strict``
    ``c_z |z|^2 + w (s - t)^{-1/2} + c_y y + c_nu W_2(nu, delta_0)^{1 + alpha} + c_mu W_2(mu, delta_0)``
    (defaults ``c_z = -1``, ``alpha = 1/3``, the rest 1); strictly quadratic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Mapping

import numpy as np

from .errors import DomainError, InvalidArgument, ValidationError

LINEAR = "linear"
QUAD_BOUNDED = "quadratic-bounded-law"
QUAD_UNBOUNDED = "quadratic-unbounded-law"
GROWTH_CLASSES = (LINEAR, QUAD_BOUNDED, QUAD_UNBOUNDED)

SINGULAR_EXPONENTS = {"pow_one_third": 1.0 / 3.0, "pow_one_half": 0.5}

_FAMILY_DEFAULTS: dict[str, dict[str, float]] = {
    "zero": {},
    "linear-lipschitz": {"a": 0.0, "b": 0.0, "c": 0.0, "e": 0.0, "m": 0.0, "c1": 0.0, "e1": 0.0,
                         "h0": 0.0, "h1": 0.0},
    "quad-bounded": {"w": 1.0, "c_y": 2.0, "c_z": 1.0, "c_mu": 1.0, "c_nu": 1.0},
    "quad-strict": {"c_z": -1.0, "w": 1.0, "c_y": 1.0, "c_nu": 1.0, "c_mu": 1.0, "alpha": 1.0 / 3.0},
}

_FAMILY_CLASS = {
    "zero": LINEAR,
    "linear-lipschitz": LINEAR,
    "quad-bounded": QUAD_BOUNDED,
    "quad-strict": QUAD_UNBOUNDED,
}

_FAMILY_SINGULAR = {"quad-bounded": "pow_one_third", "quad-strict": "pow_one_half"}


@dataclass(frozen=True)
class Constants:
    """Assumption constants; ``None`` means "not applicable / not declared"."""

    L: float | None = None
    beta: float | None = None
    beta0: float | None = None
    gamma: float | None = None
    gamma0: float | None = None
    gamma_tilde: float | None = None
    alpha: float | None = None
    K1: float | None = None
    K2: float | None = None
    K3: float | None = None

    @classmethod
    def names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def merged(self, overrides: Mapping[str, float] | None) -> "Constants":
        if not overrides:
            return self
        unknown = set(overrides) - set(self.names())
        if unknown:
            raise ValidationError(f"unknown constants: {sorted(unknown)}")
        return replace(self, **{k: float(v) for k, v in overrides.items()})


def integrate_singular_weight(kind: str, t: float, s_lo: float, s_hi: float) -> float:
    """``int_{s_lo}^{s_hi} (s - t)^{-a} ds`` in closed form (``a = 1/3`` or ``1/2``)."""
    try:
        a = SINGULAR_EXPONENTS[kind]
    except KeyError:
        raise InvalidArgument(f"unknown singular weight kind {kind!r}") from None
    if s_lo < t:
        raise DomainError(f"lower limit {s_lo} lies before t={t}")
    if s_hi < s_lo:
        raise DomainError(f"upper limit {s_hi} lies before lower limit {s_lo}")
    q = 1.0 - a
    return ((s_hi - t) ** q - (s_lo - t) ** q) / q


@dataclass(frozen=True)
class GeneratorSpec:
    """Immutable driver description: family, coefficients and declared constants."""

    family: str
    params: Mapping[str, float] = field(default_factory=dict)
    constant_overrides: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in _FAMILY_DEFAULTS:
            raise ValidationError(f"unknown generator family {self.family!r}; "
                                  f"choose from {sorted(_FAMILY_DEFAULTS)}")
        defaults = _FAMILY_DEFAULTS[self.family]
        unknown = set(self.params) - set(defaults)
        if unknown:
            raise ValidationError(f"unknown parameters for {self.family}: {sorted(unknown)}")
        merged = dict(defaults)
        for k, v in self.params.items():
            if not math.isfinite(float(v)):
                raise ValidationError(f"parameter {k} must be finite")
            merged[k] = float(v)
        object.__setattr__(self, "params", merged)
        object.__setattr__(self, "constant_overrides", dict(self.constant_overrides))
        self.constants.merged(self.constant_overrides)  # validates names

    @classmethod
    def from_config(cls, table: Mapping) -> "GeneratorSpec":
        table = dict(table)
        family = table.pop("family", None)
        if family is None:
            raise ValidationError("generator table needs a 'family' key")
        overrides = table.pop("constants", {}) or {}
        return cls(family, table, overrides)

    # ---- metadata -----------------------------------------------------
    @property
    def growth(self) -> str:
        return _FAMILY_CLASS[self.family]

    @property
    def is_quadratic(self) -> bool:
        return self.growth != LINEAR

    @property
    def singular(self) -> str | None:
        return _FAMILY_SINGULAR.get(self.family)

    @property
    def uses_law_y(self) -> bool:
        p = self.params
        if self.family == "linear-lipschitz":
            return p["c"] != 0 or p["m"] != 0 or p["c1"] != 0
        if self.family in ("quad-bounded", "quad-strict"):
            return p["c_mu"] != 0
        return False

    @property
    def uses_law_z(self) -> bool:
        p = self.params
        if self.family == "linear-lipschitz":
            return p["e"] != 0 or p["e1"] != 0
        if self.family in ("quad-bounded", "quad-strict"):
            return p["c_nu"] != 0
        return False

    @property
    def uses_y(self) -> bool:
        """Whether ``g`` depends on its pathwise ``y`` argument."""
        p = self.params
        if self.family == "linear-lipschitz":
            return p["a"] != 0
        if self.family in ("quad-bounded", "quad-strict"):
            return p["c_y"] != 0
        return False

    @property
    def interacts(self) -> bool:
        return self.uses_law_y or self.uses_law_z

    @property
    def chaos_supported(self) -> bool:
        return not (self.is_quadratic and self.uses_law_z)

    @property
    def constants(self) -> Constants:
        """Generator-intrinsic constants (``K``'s need the free term and horizon)."""
        p = self.params
        if self.family == "zero":
            c = Constants(L=0.0)
        elif self.family == "linear-lipschitz":
            c = Constants(L=sum(abs(p[k]) for k in ("a", "b", "c", "e", "m", "c1", "e1")))
        elif self.family == "quad-bounded":
            c = Constants(beta=abs(p["c_y"]), beta0=abs(p["c_mu"]), gamma=2 * abs(p["c_z"]))
        else:
            c = Constants(beta=abs(p["c_y"]), beta0=abs(p["c_mu"]), gamma=2 * abs(p["c_z"]),
                          gamma_tilde=2 * abs(p["c_z"]), gamma0=abs(p["c_nu"]), alpha=p["alpha"])
        return c.merged(self.constant_overrides)

    def singular_bounds(self, T: float) -> dict:
        """``K2 = sup_t int_t^T l^2`` and ``K3 = sup_t int_t^T l`` for the family's ``l``.

        The strictly quadratic family only needs ``K3`` (its ``l^2`` is not
        integrable).

        For the bounded-law family the arctan term is absorbed into ``l`` as the
        constant ``(pi / 2) |c_nu|``.
        """
        p = self.params
        if self.family == "quad-bounded":
            w, a = abs(p["w"]), 0.5 * math.pi * abs(p["c_nu"])
            K2 = 3 * w * w * T ** (1 / 3) + 3 * w * a * T ** (2 / 3) + a * a * T
            K3 = 1.5 * w * T ** (2 / 3) + a * T
            return {"K2": K2, "K3": K3}
        if self.family == "quad-strict":
            w = abs(p["w"])
            return {"K3": 2 * w * math.sqrt(T)}
        return {}

    # ---- evaluation ---------------------------------------------------
    def ell(self, t, s):
        """Pointwise singular weight ``w (s - t)^{-a}``; undefined on the diagonal."""
        kind = self.singular
        if kind is None:
            return np.zeros(np.broadcast(np.asarray(t), np.asarray(s)).shape)
        u = np.asarray(s, dtype=float) - np.asarray(t, dtype=float)
        if np.any(u <= 0):
            raise DomainError("the singular weight is never evaluated at s = t; "
                              "use the cell integral instead")
        return self.params["w"] * u ** (-SINGULAR_EXPONENTS[kind])

    def cell_ell(self, t_rows, t_lo: float, t_hi: float):
        """Singular weight used on the cells ``(t_i, [t_lo, t_hi])``.

        Off-diagonal cells use the midpoint value; the diagonal cell (where
        ``t_i == t_lo``) uses the exact cell average.
        """
        t_rows = np.asarray(t_rows, dtype=float)
        kind = self.singular
        if kind is None:
            return np.zeros_like(t_rows)
        mid = 0.5 * (t_lo + t_hi)
        out = np.empty_like(t_rows)
        diag = t_rows >= t_lo
        out[~diag] = self.params["w"] * (mid - t_rows[~diag]) ** (-SINGULAR_EXPONENTS[kind])
        if np.any(diag):
            avg = integrate_singular_weight(kind, t_lo, t_lo, t_hi) / (t_hi - t_lo)
            out[diag] = self.params["w"] * avg
        return out

    def evaluate(self, t, s, y, z, mu_mean=0.0, mu_rms=0.0, nu_rms=0.0, ell=None,
                 mu_abs=0.0, nu_abs=0.0):
        """Vectorised driver.

        ``z`` carries the Brownian coordinates on its last axis; every other
        argument broadcasts against ``z[..., 0]``.  ``ell`` overrides the
        pointwise singular weight (used for the diagonal cell).
        """
        p = self.params
        z = np.asarray(z, dtype=float)
        y = np.asarray(y, dtype=float)
        fam = self.family
        if fam == "zero":
            return np.zeros(np.broadcast(y, z[..., 0]).shape)
        if fam == "linear-lipschitz":
            h = p["h0"] + p["h1"] * (np.asarray(s) - np.asarray(t))
            out = (p["a"] * y + p["b"] * z[..., 0] + p["c"] * mu_rms + p["e"] * nu_rms
                   + p["m"] * mu_mean + h)
            if p["c1"] or p["e1"]:
                out = out + p["c1"] * mu_abs + p["e1"] * nu_abs
            return out
        if ell is None:
            ell = self.ell(t, s)
        if fam == "quad-bounded":
            return (ell + p["c_y"] * np.abs(y) + p["c_z"] * z[..., 0] ** 2
                    + p["c_mu"] * mu_rms + p["c_nu"] * np.arctan(nu_rms))
        zz = np.sum(z * z, axis=-1)
        return (p["c_z"] * zz + ell + p["c_y"] * y
                + p["c_nu"] * np.asarray(nu_rms) ** (1.0 + p["alpha"]) + p["c_mu"] * mu_rms)


def eval_generator(spec: GeneratorSpec, t: float, s: float, y: float, z, mu, nu) -> float:
    """Evaluate ``g(t, s, y, z, mu, nu)`` for empirical measures ``mu`` (on R) and ``nu`` (on R^d)."""
    from .measures import distance_to_dirac0

    if t > s:
        raise DomainError(f"t={t} must not exceed s={s}")
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if nu.dim != z.shape[-1]:
        raise InvalidArgument("z and the support of nu must share the dimension d")
    mu_mean = float(mu.mean()[0])
    val = spec.evaluate(t, s, y, z, mu_mean, distance_to_dirac0(2, mu), distance_to_dirac0(2, nu),
                        mu_abs=distance_to_dirac0(1, mu), nu_abs=distance_to_dirac0(1, nu))
    return float(val)


# ---------------------------------------------------------------------------
# free terms

_FREE_DEFAULTS: dict[str, dict[str, float]] = {
    "constant": {"value": 0.0},
    "brownian": {"a": 0.0, "b": 1.0, "c": 0.0},
    "sine": {"amp": 1.0, "freq": 1.0, "phase": 0.0, "offset": 0.0},
    "tanh": {"amp": 1.0, "scale": 1.0, "offset": 0.0},
}


@dataclass(frozen=True)
class FreeTermSpec:
    """Free term ``psi(t)`` as a function of ``t`` and the terminal state ``W(T)``.

    ``constant``: ``value``; ``brownian``: ``a + b W_1(T) + c t`` (unbounded
    unless ``b = 0``); ``sine``: ``offset + amp sin(freq W_1(T) + phase t)``;
    ``tanh``: ``offset + amp tanh(scale W_1(T))``.
    """

    family: str
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in _FREE_DEFAULTS:
            raise ValidationError(f"unknown free-term family {self.family!r}; "
                                  f"choose from {sorted(_FREE_DEFAULTS)}")
        defaults = _FREE_DEFAULTS[self.family]
        unknown = set(self.params) - set(defaults)
        if unknown:
            raise ValidationError(f"unknown parameters for {self.family}: {sorted(unknown)}")
        merged = dict(defaults)
        merged.update({k: float(v) for k, v in self.params.items()})
        object.__setattr__(self, "params", merged)

    @classmethod
    def from_config(cls, table: Mapping) -> "FreeTermSpec":
        table = dict(table)
        family = table.pop("family", None)
        if family is None:
            raise ValidationError("free_term table needs a 'family' key")
        return cls(family, table)

    @property
    def bound(self) -> float | None:
        """``K1 = sup |psi|`` when the family is bounded, else ``None``."""
        p = self.params
        if self.family == "constant":
            return abs(p["value"])
        if self.family == "brownian":
            return abs(p["a"]) if p["b"] == 0 and p["c"] == 0 else None
        return abs(p["offset"]) + abs(p["amp"])

    def evaluate(self, t, w_terminal):
        """``psi`` on rows ``t`` (shape ``(R,)``) for terminal states ``(..., d)`` -> ``(..., R)``."""
        t = np.asarray(t, dtype=float)
        w1 = np.asarray(w_terminal, dtype=float)[..., :1]
        p = self.params
        if self.family == "constant":
            return np.broadcast_to(np.full_like(t, p["value"]), w1.shape[:-1] + t.shape).copy()
        if self.family == "brownian":
            return p["a"] + p["b"] * w1 + p["c"] * t
        if self.family == "sine":
            return p["offset"] + p["amp"] * np.sin(p["freq"] * w1 + p["phase"] * t)
        return p["offset"] + p["amp"] * np.tanh(p["scale"] * w1) + 0.0 * t


def resolved_constants(gen: GeneratorSpec, free: FreeTermSpec | None, T: float | None) -> Constants:
    """Generator constants completed with ``K1`` (free term) and ``K2``, ``K3`` (horizon).

    Explicit overrides declared on the generator always win.
    """
    base = gen.constants
    derived: dict[str, float] = {}
    if free is not None and free.bound is not None and gen.is_quadratic:
        derived["K1"] = free.bound
    if T is not None:
        derived.update(gen.singular_bounds(T))
    c = replace(base, **{k: v for k, v in derived.items() if getattr(base, k) is None
                         and k not in gen.constant_overrides})
    return c.merged(gen.constant_overrides)


def assumption_report(spec: GeneratorSpec, free: FreeTermSpec | None = None,
                      T: float | None = None) -> dict:
    """Growth class, dependency flags, constants echo and the chaos-support flag.

    Raises :class:`ValidationError` on inconsistent constants.
    """
    c = resolved_constants(spec, free, T)
    problems = []
    if c.alpha is not None and not (0.0 <= c.alpha < 1.0):
        problems.append(f"α must lie in [0,1), got alpha={c.alpha}")
    for name in ("L", "beta", "beta0", "gamma0", "K1", "K2", "K3"):
        v = getattr(c, name)
        if v is not None and v < 0:
            problems.append(f"{name} must be non-negative, got {v}")
    if spec.is_quadratic:
        if not (c.gamma is not None and c.gamma > 0):
            problems.append(f"gamma must be positive for the {spec.growth} class, got {c.gamma}")
        if spec.growth == QUAD_UNBOUNDED and not (c.gamma_tilde is not None and c.gamma_tilde > 0):
            problems.append(f"gamma_tilde must be positive for the {spec.growth} class, "
                            f"got {c.gamma_tilde}")
    elif c.L is None or c.L < 0:
        problems.append("L must be non-negative for the linear class")
    if problems:
        raise ValidationError("; ".join(problems))
    return {
        "family": spec.family,
        "params": dict(spec.params),
        "class": spec.growth,
        "uses_law_of_y": spec.uses_law_y,
        "uses_law_of_z": spec.uses_law_z,
        "singular_weight": spec.singular,
        "constants": c.as_dict(),
        "chaos_supported": spec.chaos_supported,
        "chaos_restriction": None if spec.chaos_supported else
        "quadratic drivers must not depend on the law of Z for particle and chaos runs",
        "free_term_bounded": None if free is None else free.bound is not None,
        "l2_norm_reading": "K2 bounds sup_t of the integral of l(t,s)^2 over s in [t,T]",
    }
