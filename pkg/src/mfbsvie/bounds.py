"""A-priori bounds for quadratic drivers.

Every quantity is evaluated in log space first, because the global bounds
are doubly exponential in the horizon and overflow double precision for
moderate constants; ``values`` holds ``exp(log)`` (``inf`` on overflow) and
``logs`` the natural logarithms.

Local radii (bounded-law class)::

    R1 = 2 (K1 + sqrt(K2))
    R2 = (2 / gamma^2) exp(2 gamma K1) + (4 sqrt(K2) / gamma) exp(2 gamma R1)

Global bounds (bounded-law class), with ``theta = beta^2 + beta0^2 + 1``::

    Ltilde = exp(theta T) (K1^2 + K2 + 2)
    Theta0 = Ltilde exp(Ltilde T)                  (solution of the Theta ODE at 0)
    M1hat  = exp(theta T) (K1^2 + K2 + 2 Theta0 T)
    M1bar  = max(Theta0, M1hat)                    (bounds sup |Y|^2)
    M2bar  = 2 Xi(K1) + 2 |Xi'(sqrt(M1bar))| (sqrt(K2 T) + (beta + beta0) sqrt(M1bar) T)

with ``Xi(x) = (exp(gamma |x|) - gamma |x| - 1) / gamma^2``.

Strictly quadratic class: the constants ``L1 ... L7``, ``alpha(0)``, ``M1``
(bounds sup |Y|) and ``M2``.  ``L3 ... L6`` need the free parameter ``L0``
and are reported only when it is supplied.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .generators import Constants

_LOG_ZERO = -math.inf


def _log(x: float) -> float:
    return math.log(x) if x > 0 else _LOG_ZERO


def _exp(lx: float) -> float:
    if lx > 709.78:
        return math.inf
    return math.exp(lx)


def _logadd(*lx: float) -> float:
    return float(np.logaddexp.reduce(np.array(lx, dtype=float)))


def _log_expm1(x: float) -> float:
    """``log(exp(x) - 1)`` for ``x >= 0``."""
    if x == 0:
        return _LOG_ZERO
    if x > 30:
        return x + math.log1p(-math.exp(-x))
    return math.log(math.expm1(x))


def _log_xi(gamma: float, x: float) -> float:
    """``log Xi(x)`` with ``Xi(x) = (e^{g|x|} - g|x| - 1) / g^2``."""
    u = gamma * abs(x)
    if u == 0:
        return _LOG_ZERO
    if u < 1e-3:
        val = u * u / 2 + u ** 3 / 6 + u ** 4 / 24
        return math.log(val) - 2 * math.log(gamma)
    if u > 30:
        return u + math.log1p(-(u + 1) * math.exp(-u)) - 2 * math.log(gamma)
    return math.log(math.expm1(u) - u) - 2 * math.log(gamma)


@dataclass
class BoundsRecord:
    """Evaluated bounds with provenance; see the module docstring for formulas."""

    inputs: dict
    logs: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def values(self) -> dict:
        return {k: _exp(v) for k, v in self.logs.items()}

    def get(self, name: str, default=None):
        return _exp(self.logs[name]) if name in self.logs else default

    def _set(self, name: str, log_value: float, provenance: str):
        self.logs[name] = log_value
        self.provenance[name] = provenance

    def as_dict(self) -> dict:
        def clean(v):
            return v if math.isfinite(v) else ("inf" if v > 0 else "-inf")
        return {
            "inputs": self.inputs,
            "values": {k: clean(v) for k, v in self.values.items()},
            "log_values": {k: clean(v) for k, v in self.logs.items()},
            "provenance": self.provenance,
            "notes": list(self.notes),
        }


def _need(c: Constants, names, block: str):
    missing = [n for n in names if getattr(c, n) is None]
    if missing:
        raise ValidationError(f"{block} bounds need constants {missing}")


def a_priori_bounds(constants: Constants, T: float, eps0: float = 0.5,
                    delta: float | None = None, L0: float | None = None,
                    growth: str | None = None) -> BoundsRecord:
    """Evaluate every bound whose inputs are present in ``constants``.

    ``growth`` (a growth-class name) makes the call strict: missing constants
    for that class raise :class:`ValidationError`.  Without it, blocks whose
    inputs are missing are skipped and noted.
    """
    if not T > 0:
        raise ValidationError("horizon T must be positive")
    c = constants
    rec = BoundsRecord(inputs={**c.as_dict(), "T": T, "eps0": eps0, "delta": delta, "L0": L0})
    for name, v in c.as_dict().items():
        if v is not None and v < 0:
            raise ValidationError(f"constant {name} must be non-negative")

    if growth == "quadratic-bounded-law":
        _need(c, ("K1", "K2", "gamma", "beta", "beta0"), "bounded-law")
    elif growth == "quadratic-unbounded-law":
        _need(c, ("K1", "K3", "gamma_tilde", "gamma0", "alpha", "beta", "beta0"), "strictly quadratic")

    if c.L is not None:
        L = c.L
        rec._set("beta_contraction", _log(16 * L * L * T + 8 * L * L + 1),
                 "Picard weight 16 L^2 T + 8 L^2 + 1")

    if None not in (c.K1, c.K2, c.gamma) and c.gamma > 0:
        K1, K2, g = c.K1, c.K2, c.gamma
        R1 = 2 * (K1 + math.sqrt(K2))
        rec._set("R1", _log(R1), "local radius 2 (K1 + sqrt K2)")
        lR2 = _logadd(math.log(2 / g ** 2) + 2 * g * K1,
                      _log(4 * math.sqrt(K2) / g) + 2 * g * R1)
        rec._set("R2", lR2, "local radius (2/gamma^2) e^{2 gamma K1} + (4 sqrt K2 / gamma) e^{2 gamma R1}")
    else:
        rec.notes.append("local radii skipped: need K1, K2 and gamma > 0")

    if None not in (c.K1, c.K2, c.beta, c.beta0):
        K1, K2, b, b0 = c.K1, c.K2, c.beta, c.beta0
        theta = b * b + b0 * b0 + 1
        lLt = theta * T + math.log(K1 * K1 + K2 + 2)
        rec._set("L_tilde", lLt, "exp((beta^2 + beta0^2 + 1) T) (K1^2 + K2 + 2)")
        lrho = lLt + _exp(lLt) * T
        rec._set("Theta0", lrho, "Theta(0) = L_tilde exp(L_tilde T)")
        lM1hat = theta * T + _logadd(_log(K1 * K1 + K2), math.log(2 * T) + lrho)
        rec._set("M1hat", lM1hat, "exp(theta T) (K1^2 + K2 + 2 Theta(0) T)")
        lM1 = max(lrho, lM1hat)
        rec._set("M1bar", lM1, "max(Theta(0), M1hat); bounds sup |Y|^2")
        if c.gamma is not None and c.gamma > 0:
            g = c.gamma
            root = _exp(0.5 * lM1)
            lxi = _log_xi(g, K1)
            lxip = _log_expm1(g * root) - math.log(g) if math.isfinite(root) else math.inf
            lbr = _logadd(0.5 * math.log(K2 * T) if K2 > 0 else _LOG_ZERO,
                          _log((b + b0) * T) + 0.5 * lM1)
            lM2 = _logadd(math.log(2) + lxi, math.log(2) + lxip + lbr)
            rec._set("M2bar", lM2,
                     "2 Xi(K1) + 2 |Xi'(sqrt M1bar)| (sqrt(K2 T) + (beta + beta0) sqrt(M1bar) T)")
    else:
        rec.notes.append("global bounds skipped: need K1, K2, beta, beta0")

    if None not in (c.K1, c.K3, c.gamma_tilde, c.gamma0, c.alpha, c.beta, c.beta0) \
            and c.gamma_tilde > 0:
        _strict_block(rec, c, T, eps0, delta, L0)
    elif c.gamma_tilde is not None:
        rec.notes.append("strictly quadratic constants skipped: need K1, K3, gamma_tilde, "
                         "gamma0, alpha, beta, beta0")
    return rec


def _strict_block(rec: BoundsRecord, c: Constants, T, eps0, delta, L0):
    a, gt, g0 = c.alpha, c.gamma_tilde, c.gamma0
    if not 0 <= a < 1:
        raise ValidationError(f"α must lie in [0,1), got alpha={a}")
    K13 = c.K1 + c.K3
    bb = c.beta + c.beta0
    lpre = _log((1 - a) * gt * eps0 / 8) + (1 + a) / (1 - a) * math.log((1 + a) / 2)

    def l_L2(d):
        return lpre + 2 / (1 - a) * _log(4 * d / (gt * eps0))

    lL1 = lpre + 2 / (1 - a) * _log(4 * g0 / gt)
    rec._set("L1", lL1, "((1-a) gt e0 / 8) ((1+a)/2)^{(1+a)/(1-a)} (4 gamma0 / gt)^{2/(1-a)}")
    lL2g0 = l_L2(g0)
    rec._set("L2_gamma0", lL2g0, "L_{2,delta} at delta = gamma0")
    if delta is not None:
        rec._set("L2_delta", l_L2(delta), "((1-a) gt e0 / 8) ((1+a)/2)^{(1+a)/(1-a)} (4 delta / (gt e0))^{2/(1-a)}")
    L1, L2g0 = _exp(lL1), _exp(lL2g0)
    L7 = 3 * K13 + 2 * L1 * T + 2 * L2g0 * T + 3 * bb
    rec._set("L7", _log(L7), "3 (K1 + K3) + 2 L1 T + 2 L_{2,gamma0} T + 3 (beta + beta0)")
    la0 = _log(L7) + L7 * T
    rec._set("alpha0", la0, "alpha(0) = L7 exp(L7 T)")
    lMt = _logadd(_log(3 * K13 + 2 * L1 * T + 2 * L2g0 * T), _log(3 * bb * T) + la0)
    rec._set("M_tilde", lMt, "3 (K1 + K3) + 2 L1 T + 2 L_{2,gamma0} T + 3 (beta + beta0) T alpha(0)")
    lM1 = max(la0, lMt)
    rec._set("M1", lM1, "max(alpha(0), M_tilde); bounds sup |Y|")
    lM2 = math.log(4 / gt) + _logadd(lM1, _log(K13 + 2 * L1 * T), _log(bb * T) + lM1)
    rec._set("M2", lM2, "(4 / gt) (M1 + K1 + K3 + 2 L1 T + (beta + beta0) T M1)")
    if L0 is None:
        rec.notes.append("L3..L6 need the free parameter L0; supply it to evaluate them")
        return
    L3 = K13 * eps0 + L1 * T + _exp(l_L2(L0 * g0)) * T
    rec._set("L3", _log(L3), "(K1 + K3) e0 + L1 T + L_{2, L0 gamma0} T")
    lL4 = _logadd(math.log(L0) + L0 * K13 + L3, _log((L0 + eps0) * bb))
    rec._set("L4", lL4, "L0 exp(L0 (K1 + K3) + L3) + (L0 + e0)(beta + beta0)")
    L4 = _exp(lL4)
    L5 = 2 / gt * (lL4 + L4)
    rec._set("L5", _log(L5), "(2 / gt)(ln L4 + L4)")
    lL6 = _logadd(lL4 + gt * L5 / 2, lL4, _log(gt * L5 / 2))
    rec._set("L6", lL6, "L4 exp(gt L5 / 2) + L4 + gt L5 / 2")
