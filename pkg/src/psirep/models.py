"""Built-in psi models with closed forms.

All built-ins take real observations and broadcast over numpy arrays.
"""

from __future__ import annotations

import inspect
import math
from dataclasses import dataclass

import numpy as np

from .core import ParamInterval, PsiModel, WeightedSample
from .errors import ConfigError, InvalidWeights

__all__ = [
    "NormalVarianceModel",
    "LocationModel",
    "OscillatingModel",
    "NormalVarianceReference",
    "normal_variance_reference",
    "weighted_mle_oracle",
    "MODELS",
    "make_model",
]

HUBER_K = 1.345


class NormalVarianceModel(PsiModel):
    """Likelihood equation for the variance of a normal law with known mean ``m``.

    ``psi(x, s) = ((x - m)**2 - s) / (2 s**2)`` on ``s > 0``; ``sigma0_sq``
    is the anchor at which the monotone weight equals one.
    """

    def __init__(self, m: float = 0.0, sigma0_sq: float = 1.0):
        if not sigma0_sq > 0:
            raise ConfigError(f"sigma0_sq must be positive, got {sigma0_sq!r}")
        self.m = float(m)
        self.sigma0_sq = float(sigma0_sq)
        super().__init__(
            psi=self._psi,
            theta=ParamInterval(0.0, math.inf),
            d2psi=self._d2psi,
            theta1_closed_form=self._theta1,
            continuous=True,
            vectorized=True,
            name="normal_variance",
        )

    def _psi(self, x, s):
        return ((x - self.m) ** 2 - s) / (2.0 * s**2)

    def _d2psi(self, x, s):
        return (s - 2.0 * (x - self.m) ** 2) / (2.0 * s**3)

    def _theta1(self, x):
        return (x - self.m) ** 2

    def rho(self, x, s):
        """Negative log-likelihood up to a constant; ``psi = -d rho / ds``."""
        return 0.5 * np.log(s) + (x - self.m) ** 2 / (2.0 * s)

    def params(self):
        return {"m": self.m, "sigma0_sq": self.sigma0_sq}


class LocationModel(PsiModel):
    """``psi(x, t) = g(x - t)`` for an odd, nondecreasing score ``g``.

    ``score="identity"`` gives the mean; ``score="huber"`` clamps the
    residual to ``[-k, k]``.
    """

    def __init__(self, score: str = "identity", k: float = HUBER_K):
        if score not in ("identity", "huber"):
            raise ConfigError(f"unknown location score {score!r}")
        if not k > 0:
            raise ConfigError(f"Huber constant must be positive, got {k!r}")
        self.score = score
        self.k = float(k)
        super().__init__(
            psi=self._psi,
            theta=ParamInterval(-math.inf, math.inf),
            d2psi=self._d2psi,
            theta1_closed_form=lambda x: x,
            continuous=True,
            vectorized=True,
            name="location",
        )

    def _psi(self, x, t):
        u = x - t
        if self.score == "identity":
            return u
        return np.clip(u, -self.k, self.k)

    def _d2psi(self, x, t):
        u = np.asarray(x - t, dtype=float)
        if self.score == "identity":
            return -np.ones_like(u)[()]
        return np.where(np.abs(u) < self.k, -1.0, 0.0)[()]

    def rho(self, x, t):
        u = np.abs(x - t)
        if self.score == "identity":
            return 0.5 * u**2
        return np.where(u <= self.k, 0.5 * u**2, self.k * u - 0.5 * self.k**2)[()]

    def params(self):
        if self.score == "identity":
            return {"score": self.score}
        return {"score": self.score, "k": self.k}


class OscillatingModel(PsiModel):
    """Deliberately bad model for exercising the diagnostics.

    ``psi(x, t) = (x - t) * exp(a * x * sin(w * t))`` changes sign once, at
    ``t = x``, yet for ``a * w`` large enough the comparison function of a
    pair dips, so weighted two-point sums change sign more than once.
    """

    def __init__(self, amplitude: float = 1.0, frequency: float = 10.0):
        self.amplitude = float(amplitude)
        self.frequency = float(frequency)
        super().__init__(
            psi=self._psi,
            theta=ParamInterval(-math.inf, math.inf),
            d2psi=self._d2psi,
            theta1_closed_form=lambda x: x,
            continuous=True,
            vectorized=True,
            name="oscillating",
        )

    def _factor(self, x, t):
        return np.exp(self.amplitude * x * np.sin(self.frequency * t))

    def _psi(self, x, t):
        return (x - t) * self._factor(x, t)

    def _d2psi(self, x, t):
        a, w = self.amplitude, self.frequency
        return self._factor(x, t) * (-1.0 + (x - t) * a * x * w * np.cos(w * t))

    def params(self):
        return {"amplitude": self.amplitude, "frequency": self.frequency}


@dataclass(frozen=True)
class NormalVarianceReference:
    """Closed forms of the normal-variance example."""

    m: float
    sigma0_sq: float

    def theta1(self, x):
        return (x - self.m) ** 2

    def q_star(self, s):
        return -2.0 / s

    def p(self, s):
        return (s / self.sigma0_sq) ** 2

    def log_p(self, s):
        return 2.0 * np.log(np.asarray(s, dtype=float) / self.sigma0_sq)

    def weight(self, grid) -> "MonotoneWeight":
        """The exact weight as a :class:`MonotoneWeight` anchored at ``sigma0_sq``."""
        from .representation import MonotoneWeight

        return MonotoneWeight.from_log_p(self.log_p, grid, tau=self.sigma0_sq)

    def rho_star(self, x, t):
        return (t - (x - self.m) ** 2) ** 2 / (4.0 * self.sigma0_sq**2)

    def weighted_product(self, x, t):
        return ((x - self.m) ** 2 - t) / (2.0 * self.sigma0_sq**2)

    def mle(self, sample: WeightedSample) -> float:
        return weighted_mle_oracle(NormalVarianceModel(self.m, self.sigma0_sq), sample)


def normal_variance_reference(m: float = 0.0, sigma0_sq: float = 1.0) -> NormalVarianceReference:
    if not sigma0_sq > 0:
        raise ConfigError(f"sigma0_sq must be positive, got {sigma0_sq!r}")
    return NormalVarianceReference(float(m), float(sigma0_sq))


def weighted_mle_oracle(model: NormalVarianceModel, sample: WeightedSample) -> float:
    """``sum w_i (x_i - m)**2 / sum w_i``, the exact root of the weighted score."""
    if not isinstance(sample, WeightedSample):
        raise InvalidWeights("weighted_mle_oracle expects a WeightedSample")
    num = math.fsum(w * (float(x) - model.m) ** 2 for x, w in zip(sample.observations, sample.weights))
    return num / sample.total_weight


MODELS = {
    "normal_variance": NormalVarianceModel,
    "location": LocationModel,
    "oscillating": OscillatingModel,
}


def make_model(name: str, params=None) -> PsiModel:
    """Instantiate a built-in model by name; string parameters are coerced."""
    try:
        cls = MODELS[name]
    except KeyError:
        raise ConfigError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None
    params = dict(params or {})
    signature = inspect.signature(cls.__init__)
    kwargs = {}
    for key, value in params.items():
        if key not in signature.parameters or key == "self":
            raise ConfigError(f"model {name!r} has no parameter {key!r}")
        default = signature.parameters[key].default
        if isinstance(default, float) and not isinstance(value, float):
            try:
                value = float(value)
            except (TypeError, ValueError):
                raise ConfigError(f"parameter {key}={value!r} is not a number") from None
        kwargs[key] = value
    return cls(**kwargs)
