"""European call pricing under the constructed measures.

The price is C = s * R_bu - X e^{-rho} * R_tr with R_tr / R_bu the upper
tail probabilities of the trader and buyer laws at the discounted log
moneyness. For calm panels both laws are normal and the closed form below
reduces to the standard lognormal call price; the buyer's own valuation
carries the coefficient s * e^{sigma^2} and its excess over C is reported
as the risk premium.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from scipy.special import ndtr

from .market_data import RateCurve, discount_factor
from .rn_measure import QBundle, verify_identities

__all__ = [
    "CallSpec",
    "CallQuote",
    "price_call",
    "price_call_calm",
    "buyer_price_and_premium",
    "mixture_price",
]


@dataclass(frozen=True)
class CallSpec:
    """Contract terms: spot, strike, rate curve, valuation and expiry times."""

    s_t0: float
    strike: float
    rate_curve: RateCurve
    t0: float
    T: float

    def __post_init__(self):
        if self.s_t0 <= 0 or self.strike <= 0:
            raise ValueError("spot and strike must be positive")
        if not self.T > self.t0:
            raise ValueError("expiry must be after valuation time")

    @property
    def rho(self) -> float:
        """Log accumulation factor over [t0, T]."""
        return math.log(discount_factor(self.rate_curve, self.t0, self.T))


@dataclass(frozen=True)
class CallQuote:
    C: float
    R_tr: float
    R_bu: float
    C_bu: float
    premium: float
    method: str  # levy | calm | mixture | intrinsic
    supported: bool = True
    watermark: str | None = None
    neutrality: dict | None = None
    cluster_weights: tuple[float, ...] | None = None
    components: tuple["CallQuote", ...] | None = None

    def to_dict(self) -> dict:
        out = {
            "C": self.C,
            "R_tr": self.R_tr,
            "R_bu": self.R_bu,
            "C_bu": self.C_bu,
            "premium": self.premium,
            "method": self.method,
            "supported": self.supported,
        }
        if self.watermark:
            out["watermark"] = self.watermark
        if self.neutrality is not None:
            out["neutrality"] = dict(self.neutrality)
        if self.cluster_weights is not None:
            out["clusters"] = [
                {"weight": w, **c.to_dict()}
                for w, c in zip(self.cluster_weights, self.components)
            ]
        return out


def _step(z: float) -> float:
    # sigma -> 0 limit of the normal cdf terms at log-moneyness z
    if z > 0:
        return 1.0
    if z < 0:
        return 0.0
    return 0.5


def price_call_calm(sigma_h: float, spec: CallSpec) -> CallQuote:
    """Closed-form quote for a purely Gaussian horizon law.

    ``sigma_h`` is the total standard deviation over [t0, T] (not annualized).
    sigma_h = 0 returns the intrinsic value.
    """
    if sigma_h < 0:
        raise ValueError("sigma_h must be >= 0")
    s, X, rho = spec.s_t0, spec.strike, spec.rho
    z = math.log(s / X) + rho
    if sigma_h == 0.0:
        r_bu = r_tr = _step(z)
        c = max(s - X * math.exp(-rho), 0.0)
        return CallQuote(
            C=c, R_tr=r_tr, R_bu=r_bu, C_bu=c, premium=0.0, method="intrinsic"
        )
    var = sigma_h * sigma_h
    r_bu = float(ndtr((z + 0.5 * var) / sigma_h))
    r_tr = float(ndtr((z - 0.5 * var) / sigma_h))
    c = s * r_bu - X * math.exp(-rho) * r_tr
    c_bu, prem = buyer_price_and_premium(sigma_h, spec)
    return CallQuote(C=c, R_tr=r_tr, R_bu=r_bu, C_bu=c_bu, premium=prem, method="calm")


def buyer_price_and_premium(sigma_h: float, spec: CallSpec) -> tuple[float, float]:
    """Buyer-side calm price s e^{sigma^2} Phi(d + sigma) - X e^{-rho} Phi(d),
    and its excess over the trader quote (the market risk premium)."""
    if sigma_h < 0:
        raise ValueError("sigma_h must be >= 0")
    s, X, rho = spec.s_t0, spec.strike, spec.rho
    z = math.log(s / X) + rho
    if sigma_h == 0.0:
        c = max(s - X * math.exp(-rho), 0.0)
        return c, 0.0
    var = sigma_h * sigma_h
    c_bu = s * math.exp(var) * float(ndtr((z + 1.5 * var) / sigma_h)) - X * math.exp(
        -rho
    ) * float(ndtr((z + 0.5 * var) / sigma_h))
    r_bu = float(ndtr((z + 0.5 * var) / sigma_h))
    r_tr = float(ndtr((z - 0.5 * var) / sigma_h))
    c = s * r_bu - X * math.exp(-rho) * r_tr
    return c_bu, c_bu - c


def price_call(
    bundle: QBundle,
    spec: CallSpec,
    *,
    preflight: bool = True,
    identity_tol: float = 1e-6,
) -> CallQuote:
    """Quote from a measure bundle.

    A pre-flight identity verification guards against construction bugs or a
    non-neutral triple smuggled in as neutral (IdentityViolation propagates).
    The quote carries the neutrality verdict; callers enforcing the
    supported-by-prices gate should check ``supported`` / the watermark.
    """
    if preflight:
        verify_identities(bundle, tol=identity_tol)
    s, X, rho = spec.s_t0, spec.strike, spec.rho
    q, q_bu = bundle.q, bundle.q_bu
    x = math.log(X / s) - rho
    r_tr = 1.0 - float(q.cdf(x))
    r_bu = 1.0 - float(q_bu.cdf(x))
    c = s * r_bu - X * math.exp(-rho) * r_tr
    c_bu = s * q_bu.tilt_above(x) - X * math.exp(-rho) * r_bu
    supported = bool(bundle.provenance.get("supported", True))
    degenerate = q.gauss_var == 0.0 and not q.jump_atoms
    return CallQuote(
        C=c,
        R_tr=r_tr,
        R_bu=r_bu,
        C_bu=c_bu,
        premium=c_bu - c,
        method="intrinsic" if degenerate else "levy",
        supported=supported,
        watermark=None if supported else "not supported by prices",
        neutrality={
            k: bundle.provenance[k]
            for k in ("residual_h", "verdict", "supported", "tolerance")
            if k in bundle.provenance
        }
        or None,
    )


def mixture_price(clusters, spec: CallSpec, bundles) -> CallQuote:
    """Weighted sum of per-cluster quotes; weights come from the cluster set
    (equal by default) and must sum to one."""
    weights = [c.weight for c in clusters.clusters]
    if abs(sum(weights) - 1.0) > 1e-9:
        raise ValueError("cluster weights must sum to 1")
    if len(bundles) != len(weights):
        raise ValueError("one bundle per cluster required")
    quotes = [price_call(b, spec) for b in bundles]
    agg = {
        name: sum(w * getattr(qt, name) for w, qt in zip(weights, quotes))
        for name in ("C", "R_tr", "R_bu", "C_bu", "premium")
    }
    return CallQuote(
        C=agg["C"],
        R_tr=agg["R_tr"],
        R_bu=agg["R_bu"],
        C_bu=agg["C_bu"],
        premium=agg["premium"],
        method="mixture",
        supported=all(qt.supported for qt in quotes),
        cluster_weights=tuple(weights),
        components=tuple(quotes),
    )
