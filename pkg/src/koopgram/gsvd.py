"""SVD-like factorizations of finite-gain nonlinear maps.

A finite-gain map ``f`` is split as ``f = U @ Sigma @ v(.)`` where ``U`` is an
orthogonal permutation, ``Sigma`` is a rectangular diagonal gain matrix, and
``v`` is an injective lifting that preserves the Euclidean norm of a
designated argument pointwise.  All of the gain and non-injectivity of ``f``
lives in the static matrix ``Sigma``; the lifting carries the nonlinearity.

The lifting splits into a support part (the pseudo-inverse image of ``f``)
and a kernel part that tops the norm back up through coordinates that
``Sigma`` annihilates.  The kernel weight is the square root of a radicand
that stays nonnegative as long as ``Sigma`` truly dominates the per-coordinate
gains of ``f``; an undersized ``Sigma`` surfaces as a ``SlackViolationError``
carrying the witness point.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .linalg import as_vector

__all__ = [
    "GainProfile",
    "GsvdFactor",
    "TwoArgMap",
    "SlackViolationError",
    "estimate_gains",
    "decompose",
    "decompose_linear_plus",
    "decompose_control",
    "aggregate_gain_bound",
]

# normalized radicand values in [-RADICAND_CLAMP, 0) count as touching zero
RADICAND_CLAMP = 1e-12


class SlackViolationError(ValueError):
    """The kernel radicand went negative: the gain bounds were undersized."""

    def __init__(self, message: str, witness=None, radicand: float = 0.0):
        super().__init__(message)
        self.witness = witness
        self.radicand = radicand


@dataclass(frozen=True)
class GainProfile:
    """Per-output-coordinate bounds ``|f_i(.)| <= c_i * ||arg||``."""

    coordinate_bounds: np.ndarray
    source: str = "user_supplied"  # or "sampled_estimate"
    sample_count: int | None = None

    def __post_init__(self):
        c = np.asarray(self.coordinate_bounds, dtype=float).reshape(-1)
        if c.size == 0:
            raise ValueError("gain profile must be nonempty")
        if not np.all(np.isfinite(c)) or np.any(c < 0):
            raise ValueError("coordinate bounds must be finite and nonnegative")
        if self.source not in ("user_supplied", "sampled_estimate"):
            raise ValueError(f"unknown gain source {self.source!r}")
        object.__setattr__(self, "coordinate_bounds", c)

    @property
    def size(self) -> int:
        return self.coordinate_bounds.size


@dataclass(frozen=True)
class TwoArgMap:
    """A map (x, u) -> R^p whose gain is measured against the second argument.

    ``eval(x, 0)`` must vanish for every x; ``lipschitz_u`` bounds the
    sensitivity of the map to its second argument.
    """

    n: int
    l: int
    p: int
    eval: Callable[[np.ndarray, np.ndarray], np.ndarray]
    lipschitz_u: float = 0.0

    def __call__(self, x, u) -> np.ndarray:
        return np.asarray(self.eval(np.asarray(x, float), np.asarray(u, float)), float)


@dataclass(frozen=True)
class GsvdFactor:
    """Factorization ``f(args) = u @ sigma @ lift(args)``.

    ``sigma`` is ``p x m`` rectangular diagonal with its last ``kernel_dim``
    columns identically zero, so ``m = p + kernel_dim``.  ``lift`` preserves
    the norm of the designated argument (``args[norm_arg]``) pointwise and is
    injective in it: the trailing block of the lifted vector is a nonnegative
    rescaling of that argument.
    """

    u: np.ndarray
    sigma: np.ndarray
    slack: float
    kernel_dim: int
    map: Callable[..., np.ndarray]
    norm_arg: int = 0
    gains: GainProfile | None = None
    violation_hint: str = "per-coordinate gain bounds were underestimated"
    _sigma_pinv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        u = np.asarray(self.u, float)
        sigma = np.asarray(self.sigma, float)
        p, m = sigma.shape
        if u.shape != (p, p):
            raise ValueError(f"u must be {p}x{p}, got {u.shape}")
        if m != p + self.kernel_dim:
            raise ValueError("sigma must have p + kernel_dim columns")
        if np.any(sigma[:, p:] != 0.0):
            raise ValueError("trailing kernel columns of sigma must be zero")
        diag = np.diag(sigma[:, :p])
        if np.any(np.diff(diag) > 1e-12 * (1.0 + diag.max(initial=0.0))):
            raise ValueError("diagonal of sigma must be nonincreasing")
        sp = np.zeros((m, p))
        nz = np.flatnonzero(diag > 0.0)
        sp[nz, nz] = 1.0 / diag[nz]
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "_sigma_pinv", sp)

    @property
    def out_dim(self) -> int:
        return self.sigma.shape[0]

    @property
    def lift_dim(self) -> int:
        return self.sigma.shape[1]

    def _designated(self, args) -> np.ndarray:
        return as_vector(args[self.norm_arg], "designated argument")

    def support(self, *args) -> np.ndarray:
        """Support component: pseudo-inverse image of the map value."""
        fx = as_vector(self.map(*args), "map value")
        return self._sigma_pinv @ (self.u.T @ fx)

    def kernel(self, *args) -> np.ndarray:
        """Kernel component: norm completion through the zeroed columns."""
        a = self._designated(args)
        out = np.zeros(self.lift_dim)
        norm2 = float(a @ a)
        if norm2 == 0.0:
            return out
        s = self.support(*args)
        ratio = (norm2 - float(s @ s)) / norm2
        if ratio < -RADICAND_CLAMP:
            raise SlackViolationError(
                f"kernel radicand {ratio:.3e} is negative: "
                f"{self.violation_hint} at the reported witness",
                witness=args,
                radicand=ratio,
            )
        out[self.out_dim :] = a * np.sqrt(max(ratio, 0.0))
        return out

    def lift(self, *args) -> np.ndarray:
        """Norm-preserving lifting: support plus kernel."""
        return self.support(*args) + self.kernel(*args)

    def reconstruct(self, *args) -> np.ndarray:
        """Evaluate ``u @ sigma @ lift(args)``; equals the map pointwise."""
        return self.u @ (self.sigma @ self.lift(*args))


def _sample_points(rng, dim: int, count: int, box: float) -> np.ndarray:
    """Box samples plus radial rays probing scales inside the domain.

    The rays reach down to a thousandth of the box half-width, which catches
    maps whose gain peaks near the origin (ratios like sin(x)/x), while
    staying inside the declared sampling domain.
    """
    radii = box * np.array([1e-3, 1e-2, 0.1, 0.2, 0.5, 1.0])
    n_box = max(count // 2, 1)
    n_dirs = max((count - n_box) // radii.size, 1)
    pts = [rng.uniform(-box, box, size=(n_box, dim))]
    dirs = rng.normal(size=(n_dirs, dim))
    dirs /= np.maximum(np.linalg.norm(dirs, axis=1, keepdims=True), 1e-300)
    for r in radii:
        pts.append(dirs * r)
    return np.vstack(pts)


def estimate_gains(
    f: Callable,
    dims: int | tuple[int, int],
    sample_budget: int = 1000,
    seed: int = 0,
    box: float = 5.0,
) -> GainProfile:
    """Sampled per-coordinate gain bounds of a map.

    For ``dims = n`` the map is ``f(x)`` and gains are measured against
    ``||x||``; for ``dims = (n, l)`` the map is ``f(x, u)`` and gains are
    measured against ``||u||``.  Sampling covers a centered box of half-width
    ``box`` plus radial rays at logarithmic scales, which catches maps whose
    gain peaks far from unit scale.  Deterministic for a fixed seed.
    """
    if sample_budget < 100:
        raise ValueError("sample_budget must be at least 100")
    rng = np.random.default_rng(seed)
    if isinstance(dims, tuple):
        n, l = dims
        xs = _sample_points(rng, n, sample_budget, box)
        us = _sample_points(rng, l, sample_budget, box)
        count = min(len(xs), len(us))
        best = None
        for x, u in zip(xs[:count], us[:count]):
            nu = np.linalg.norm(u)
            if nu == 0.0:
                continue
            fx = np.asarray(f(x, u), float).reshape(-1)
            if not np.all(np.isfinite(fx)):
                raise ValueError(f"map returned non-finite values at x={x}, u={u}")
            ratio = np.abs(fx) / nu
            best = ratio if best is None else np.maximum(best, ratio)
        samples = count
    else:
        n = int(dims)
        xs = _sample_points(rng, n, sample_budget, box)
        best = None
        for x in xs:
            nx = np.linalg.norm(x)
            if nx == 0.0:
                continue
            fx = np.asarray(f(x), float).reshape(-1)
            if not np.all(np.isfinite(fx)):
                raise ValueError(f"map returned non-finite values at x={x}")
            ratio = np.abs(fx) / nx
            best = ratio if best is None else np.maximum(best, ratio)
        samples = len(xs)
    if best is None:
        raise ValueError("no nonzero sample points were generated")
    return GainProfile(best, source="sampled_estimate", sample_count=samples)


def _sized_sigma(
    bounds: np.ndarray, slack: float, kernel_dim: int
) -> tuple[np.ndarray, np.ndarray]:
    """Permutation and Sigma with ``sigma_i = slack * sqrt(p) * c_(i)``.

    The sqrt(p) inflation makes the kernel radicand sum of p coordinate
    terms provably below ``1 / slack**2``.
    """
    p = bounds.size
    order = np.argsort(-bounds, kind="stable")
    u = np.zeros((p, p))
    u[order, np.arange(p)] = 1.0
    diag = slack * np.sqrt(p) * bounds[order]
    sigma = np.zeros((p, p + kernel_dim))
    np.fill_diagonal(sigma, diag)
    return u, sigma


def decompose(
    f: Callable[[np.ndarray], np.ndarray],
    n: int,
    gains: GainProfile,
    slack: float = 1.05,
) -> GsvdFactor:
    """Factor a finite-gain map ``f: R^n -> R^p`` through a norm-preserving lift.

    ``slack`` must be at least 1; at exactly 1 the caller asserts the gain
    bounds are exact and the radicand may touch zero.
    """
    if slack < 1.0:
        raise ValueError("slack must be >= 1")
    u, sigma = _sized_sigma(gains.coordinate_bounds, slack, n)
    return GsvdFactor(
        u=u, sigma=sigma, slack=slack, kernel_dim=n, map=f, norm_arg=0, gains=gains
    )


def decompose_linear_plus(
    f: Callable[[np.ndarray], np.ndarray],
    n: int,
    sigma_sup: Sequence[float],
) -> GsvdFactor:
    """Factor a map whose pointwise singular profile the caller supplies.

    ``sigma_sup`` must hold the per-coordinate suprema of the pointwise
    singular values, sorted nonincreasing; under that assertion the kernel
    radicand is nonnegative without any inflation and the factor is tight.
    A negative radicand at evaluation time reports the witness: the supplied
    suprema (hence the structural assumption) were violated.
    """
    sup = np.asarray(sigma_sup, float).reshape(-1)
    if np.any(sup < 0) or not np.all(np.isfinite(sup)):
        raise ValueError("sigma_sup must be finite and nonnegative")
    if np.any(np.diff(sup) > 0):
        raise ValueError("sigma_sup must be sorted nonincreasing")
    p = sup.size
    sigma = np.zeros((p, p + n))
    np.fill_diagonal(sigma, sup)
    return GsvdFactor(
        u=np.eye(p),
        sigma=sigma,
        slack=1.0,
        kernel_dim=n,
        map=f,
        norm_arg=0,
        gains=GainProfile(sup, source="user_supplied"),
        violation_hint="the supplied singular-value suprema (structural membership) were violated",
    )


def decompose_control(
    fu: TwoArgMap,
    gains: GainProfile,
    slack: float = 1.05,
    check_points: int = 32,
    seed: int = 0,
) -> GsvdFactor:
    """Factor a two-argument control term through a lift norm-preserving in u.

    The lifted vector satisfies ``||lift(x, u)|| = ||u||`` and vanishes at
    ``u = 0``.  ``fu(x, 0) = 0`` is verified on sampled states before
    construction.
    """
    if gains.size != fu.p:
        raise ValueError("gain profile size must match the output dimension")
    rng = np.random.default_rng(seed)
    zero_u = np.zeros(fu.l)
    scale = 0.0
    worst = 0.0
    for x in rng.uniform(-1.0, 1.0, size=(check_points, fu.n)):
        val = np.linalg.norm(fu(x, zero_u))
        ref = np.linalg.norm(fu(x, np.ones(fu.l)))
        worst = max(worst, val)
        scale = max(scale, ref)
    if worst > 1e-10 * (1.0 + scale):
        raise ValueError(
            f"control term does not vanish at u=0 (residual {worst:.3e})"
        )
    if slack < 1.0:
        raise ValueError("slack must be >= 1")
    u, sigma = _sized_sigma(gains.coordinate_bounds, slack, fu.l)
    return GsvdFactor(
        u=u,
        sigma=sigma,
        slack=slack,
        kernel_dim=fu.l,
        map=fu,
        norm_arg=1,
        gains=gains,
    )


def aggregate_gain_bound(gains: GainProfile) -> float:
    """Whole-map gain bound ``sqrt(m) * max_i c_i`` from coordinate bounds."""
    c = gains.coordinate_bounds
    return float(np.sqrt(c.size) * c.max())
