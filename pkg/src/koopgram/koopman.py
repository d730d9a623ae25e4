"""Finite state-inclusive Koopman generators for autonomous drifts.

The drift ``f(x, 0)`` is lifted through a dictionary of observables whose
first ``n`` entries are the state coordinates themselves.  The generator is
fit by least squares against analytically evaluated Lie derivatives
``D_phi(x) @ f(x, 0)``, which keeps integrator noise out of the regression.
Whatever the finite dictionary cannot represent is captured as a residual
map and handed to the norm-preserving factorization machinery.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from itertools import combinations_with_replacement
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import gsvd
from .linalg import as_vector, integrate_ode

__all__ = [
    "Dictionary",
    "TrajectoryDataset",
    "KoopmanModel",
    "build_dictionary",
    "collect_trajectories",
    "fit_generator",
    "fit_output_matrix",
    "fit_koopman",
    "factor_residual",
    "lifted_control_term",
]


@dataclass(frozen=True)
class Dictionary:
    """State-inclusive observable set with an analytic Jacobian.

    ``evaluate(x)`` returns the q lifted coordinates; the first n of them are
    x itself and every observable vanishes at the origin.
    """

    n: int
    q: int
    kind: str
    evaluate: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    exponents: tuple[tuple[int, ...], ...] | None = None

    def spec(self) -> dict:
        """JSON-serializable description sufficient to rebuild the dictionary."""
        out = {"kind": self.kind, "n": self.n, "q": self.q}
        if self.exponents is not None:
            out["exponents"] = [list(e) for e in self.exponents]
        return out


def _monomial_dictionary(n: int, exponents: Sequence[Sequence[int]]) -> Dictionary:
    exps = tuple(tuple(int(v) for v in e) for e in exponents)
    for e in exps:
        if len(e) != n or any(v < 0 for v in e) or sum(e) == 0:
            raise ValueError(f"bad monomial exponent {e}")
    coords = tuple(tuple(1 if j == i else 0 for j in range(n)) for i in range(n))
    if exps[:n] != coords:
        raise ValueError("dictionary must be state-inclusive: first n observables are the coordinates")
    emat = np.array(exps, dtype=float)  # (q, n)

    def evaluate(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, float)
        with np.errstate(divide="ignore", invalid="ignore"):
            vals = np.prod(np.where(emat > 0, x[None, :] ** emat, 1.0), axis=1)
        return vals

    def jacobian(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, float)
        jac = np.zeros((emat.shape[0], n))
        for i, e in enumerate(exps):
            for j, power in enumerate(e):
                if power == 0:
                    continue
                term = power * x[j] ** (power - 1) if power > 1 else float(power)
                for k, pk in enumerate(e):
                    if k != j and pk > 0:
                        term = term * x[k] ** pk
                jac[i, j] = term
        return jac

    return Dictionary(
        n=n, q=len(exps), kind="monomials", evaluate=evaluate, jacobian=jacobian, exponents=exps
    )


def _validate_user_dictionary(d: Dictionary, seed: int = 0) -> None:
    rng = np.random.default_rng(seed)
    phi0 = np.asarray(d.evaluate(np.zeros(d.n)), float)
    if not np.allclose(phi0, 0.0, atol=1e-12):
        raise ValueError("observables must vanish at the origin")
    for x in rng.uniform(-2.0, 2.0, size=(8, d.n)):
        phi = np.asarray(d.evaluate(x), float)
        if phi.shape != (d.q,):
            raise ValueError(f"evaluate must return {d.q} values")
        if not np.allclose(phi[: d.n], x, atol=1e-12):
            raise ValueError("dictionary must be state-inclusive")
        jac = np.asarray(d.jacobian(x), float)
        if jac.shape != (d.q, d.n):
            raise ValueError(f"jacobian must be {d.q}x{d.n}")
        step = 1e-6 * (1.0 + np.linalg.norm(x))
        for j in range(d.n):
            ej = np.zeros(d.n)
            ej[j] = step
            fd = (np.asarray(d.evaluate(x + ej)) - np.asarray(d.evaluate(x - ej))) / (2 * step)
            if not np.allclose(jac[:, j], fd, atol=1e-5 * (1.0 + np.abs(fd).max())):
                raise ValueError("jacobian disagrees with finite differences")


def build_dictionary(
    kind: str,
    n: int,
    degree: int | None = None,
    exponents: Sequence[Sequence[int]] | None = None,
    evaluate: Callable | None = None,
    jacobian: Callable | None = None,
    q: int | None = None,
) -> Dictionary:
    """Construct an observable dictionary.

    kind "identity" lifts by the coordinates alone; "monomials" takes either
    every monomial of total degree 1..degree (no constant, coordinates first)
    or an explicit exponent list; "user" wraps caller-supplied callables and
    validates state inclusivity, the zero at the origin, and the Jacobian
    against central finite differences.
    """
    if kind == "identity":
        exps = [tuple(1 if j == i else 0 for j in range(n)) for i in range(n)]
        d = _monomial_dictionary(n, exps)
        return Dictionary(
            n=n, q=n, kind="identity", evaluate=d.evaluate, jacobian=d.jacobian, exponents=d.exponents
        )
    if kind == "monomials":
        if exponents is None:
            if degree is None or degree < 1:
                raise ValueError("monomial dictionaries need degree >= 1 or explicit exponents")
            exps = [tuple(1 if j == i else 0 for j in range(n)) for i in range(n)]
            for deg in range(2, degree + 1):
                for combo in combinations_with_replacement(range(n), deg):
                    e = [0] * n
                    for idx in combo:
                        e[idx] += 1
                    exps.append(tuple(e))
            exponents = exps
        return _monomial_dictionary(n, exponents)
    if kind == "user":
        if evaluate is None or jacobian is None or q is None:
            raise ValueError("user dictionaries need evaluate, jacobian and q")
        d = Dictionary(n=n, q=q, kind="user", evaluate=evaluate, jacobian=jacobian)
        _validate_user_dictionary(d)
        return d
    raise ValueError(f"unknown dictionary kind {kind!r}")


@dataclass(frozen=True)
class TrajectoryDataset:
    """Sampled states used to fit the generator, with their provenance."""

    states: np.ndarray  # (N, n)
    times: np.ndarray  # (N,)
    provenance: dict

    def __post_init__(self):
        states = np.asarray(self.states, float)
        times = np.asarray(self.times, float).reshape(-1)
        if states.ndim != 2 or states.shape[0] == 0:
            raise ValueError("dataset must hold at least one state")
        if states.shape[0] != times.size:
            raise ValueError("states and times disagree in length")
        if not (np.all(np.isfinite(states)) and np.all(np.isfinite(times))):
            raise ValueError("dataset contains non-finite entries")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "times", times)

    @property
    def size(self) -> int:
        return self.states.shape[0]

    def save_csv(self, path) -> None:
        """Write `t,x1..xn` rows plus a provenance sidecar JSON."""
        path = Path(path)
        n = self.states.shape[1]
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t"] + [f"x{i + 1}" for i in range(n)])
            for t, row in zip(self.times, self.states):
                writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])
        sidecar = path.with_suffix(".provenance.json")
        sidecar.write_text(json.dumps(self.provenance, sort_keys=True, indent=2))

    @classmethod
    def load_csv(cls, path) -> "TrajectoryDataset":
        path = Path(path)
        with path.open() as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [[float(v) for v in row] for row in reader]
        if header[0] != "t":
            raise ValueError(f"unexpected dataset header {header!r}")
        arr = np.asarray(rows, float)
        sidecar = path.with_suffix(".provenance.json")
        provenance = json.loads(sidecar.read_text()) if sidecar.exists() else {}
        return cls(states=arr[:, 1:], times=arr[:, 0], provenance=provenance)


def collect_trajectories(
    f0: Callable[[np.ndarray], np.ndarray],
    n: int,
    count: int = 30,
    horizon: float = 4.0,
    samples_per_trajectory: int = 10,
    box: float = 2.0,
    tol: float = 1e-9,
    seed: int = 0,
) -> TrajectoryDataset:
    """Sample drift trajectories from random initial conditions in a box."""
    rng = np.random.default_rng(seed)
    t_eval = np.linspace(0.0, horizon, samples_per_trajectory)
    states = []
    times = []
    for x0 in rng.uniform(-box, box, size=(count, n)):
        _, xs = integrate_ode(lambda t, x: f0(x), x0, (0.0, horizon), tol=tol, t_eval=t_eval)
        states.append(xs)
        times.append(t_eval)
    provenance = {
        "seed": [int(v) for v in seed] if np.iterable(seed) else int(seed),
        "count": int(count),
        "horizon": float(horizon),
        "samples_per_trajectory": int(samples_per_trajectory),
        "box": float(box),
        "integrator_tol": float(tol),
    }
    return TrajectoryDataset(np.vstack(states), np.concatenate(times), provenance)


@dataclass
class KoopmanModel:
    """Fitted lifted realization: generator, output matrix, residual data.

    Treated as immutable after fitting, except that the residual factor is
    attached once by ``factor_residual``.
    """

    dictionary: Dictionary
    a: np.ndarray
    c: np.ndarray | None
    residual_gain: float
    output_residual: float = 0.0
    hurwitz: bool = False
    error_factor: gsvd.GsvdFactor | None = None

    @property
    def q(self) -> int:
        return self.dictionary.q


def _design_matrices(
    f0: Callable, dictionary: Dictionary, states: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    phis = np.stack([np.asarray(dictionary.evaluate(x), float) for x in states])
    targets = np.stack(
        [np.asarray(dictionary.jacobian(x), float) @ np.asarray(f0(x), float) for x in states]
    )
    return phis, targets


def _ridge_least_squares(phis: np.ndarray, targets: np.ndarray, ridge: float | None):
    """Solve min_A sum ||target_k - A phi_k||^2 + ridge ||A||_F^2."""
    gram = phis.T @ phis
    scale = np.trace(gram) / max(gram.shape[0], 1)
    if ridge is None:
        ridge = 1e-10 * scale
    if ridge == 0.0:
        eig = np.linalg.eigvalsh(gram)
        if eig[0] <= 1e-13 * max(eig[-1], 1e-300):
            raise np.linalg.LinAlgError(
                "regression is rank deficient; supply a positive ridge"
            )
    rhs = phis.T @ targets
    sol = np.linalg.solve(gram + ridge * np.eye(gram.shape[0]), rhs)
    return sol.T, ridge


def _split_indices(n_samples: int, holdout_fraction: float, seed: int):
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n_samples)
    n_hold = max(int(round(holdout_fraction * n_samples)), 1)
    return perm[n_hold:], perm[:n_hold]


def fit_generator(
    f0: Callable[[np.ndarray], np.ndarray],
    dictionary: Dictionary,
    data: TrajectoryDataset,
    ridge: float | None = None,
    holdout_fraction: float = 0.2,
    seed: int = 0,
) -> KoopmanModel:
    """Least-squares fit of the lifted generator against Lie derivatives.

    The residual gain is the largest held-out ratio
    ``||D_phi(x) f0(x) - A phi(x)|| / ||phi(x)||``, an out-of-sample estimate
    of the induced norm of the representation error.
    """
    if data.size < 2 * dictionary.q:
        raise ValueError(
            f"need at least {2 * dictionary.q} snapshots, got {data.size}"
        )
    train_idx, hold_idx = _split_indices(data.size, holdout_fraction, seed)
    phis, targets = _design_matrices(f0, dictionary, data.states)
    a, _ = _ridge_least_squares(phis[train_idx], targets[train_idx], ridge)

    residual_gain = 0.0
    for k in hold_idx:
        denom = np.linalg.norm(phis[k])
        if denom == 0.0:
            continue
        residual_gain = max(
            residual_gain, float(np.linalg.norm(targets[k] - a @ phis[k]) / denom)
        )
    hurwitz = bool(np.max(np.linalg.eigvals(a).real) < -1e-10)
    return KoopmanModel(
        dictionary=dictionary,
        a=a,
        c=None,
        residual_gain=residual_gain,
        hurwitz=hurwitz,
    )


def fit_output_matrix(
    h: Callable[[np.ndarray], np.ndarray],
    dictionary: Dictionary,
    data: TrajectoryDataset,
) -> tuple[np.ndarray, float]:
    """Least-squares output matrix C with its worst-case fit residual.

    Uses the minimum-norm solution, so rank deficiency is not an error.
    Exact (residual ~ 0) whenever the output map lies in the span of the
    observables.
    """
    phis = np.stack([np.asarray(dictionary.evaluate(x), float) for x in data.states])
    ys = np.stack([np.atleast_1d(np.asarray(h(x), float)) for x in data.states])
    sol, *_ = np.linalg.lstsq(phis, ys, rcond=None)
    c = sol.T
    residual = 0.0
    for k in range(data.size):
        residual = max(residual, float(np.linalg.norm(ys[k] - c @ phis[k])))
    return c, residual


def fit_koopman(
    f0: Callable,
    h: Callable,
    dictionary: Dictionary,
    data: TrajectoryDataset,
    ridge: float | None = None,
    seed: int = 0,
) -> KoopmanModel:
    """Fit generator and output matrix into one model."""
    model = fit_generator(f0, dictionary, data, ridge=ridge, seed=seed)
    c, output_residual = fit_output_matrix(h, dictionary, data)
    model.c = c
    model.output_residual = output_residual
    return model


def residual_map(model: KoopmanModel, f0: Callable) -> Callable[[np.ndarray], np.ndarray]:
    """Representation error as a map of the lifted vector.

    The state is recovered from the leading coordinates (the dictionary is
    state-inclusive), so the map is evaluable at any lifted point and
    vanishes identically when the dictionary represents the drift exactly.
    """
    n = model.dictionary.n
    dct = model.dictionary

    def res(phi: np.ndarray) -> np.ndarray:
        phi = as_vector(phi, "lifted state")
        x = phi[:n]
        return np.asarray(dct.jacobian(x), float) @ np.asarray(f0(x), float) - model.a @ phi

    return res


def factor_residual(
    model: KoopmanModel,
    f0: Callable,
    samples: np.ndarray,
    slack: float = 1.05,
) -> gsvd.GsvdFactor:
    """Factor the representation error through a norm-preserving lift.

    Per-coordinate gains are measured against the lifted-state norm on the
    supplied state samples; the resulting factor is attached to the model.
    """
    res = residual_map(model, f0)
    samples = np.asarray(samples, float)
    best = np.zeros(model.q)
    count = 0
    for x in samples:
        phi = np.asarray(model.dictionary.evaluate(x), float)
        denom = np.linalg.norm(phi)
        if denom == 0.0:
            continue
        best = np.maximum(best, np.abs(res(phi)) / denom)
        count += 1
    if count == 0:
        raise ValueError("no usable samples for residual gains")
    gains = gsvd.GainProfile(best, source="sampled_estimate", sample_count=count)
    factor = gsvd.decompose(res, model.q, gains, slack=slack)
    model.error_factor = factor
    return factor


def lifted_control_term(
    f: Callable[[np.ndarray, np.ndarray], np.ndarray],
    dictionary: Dictionary,
    l: int,
    lipschitz_u: float = 0.0,
) -> gsvd.TwoArgMap:
    """Control contribution to the lifted dynamics: D_phi(x) (f(x,u) - f(x,0))."""

    def eval_fu(x: np.ndarray, u: np.ndarray) -> np.ndarray:
        x = np.asarray(x, float)
        u = np.asarray(u, float)
        jac = np.asarray(dictionary.jacobian(x), float)
        return jac @ (np.asarray(f(x, u), float) - np.asarray(f(x, np.zeros(l)), float))

    return gsvd.TwoArgMap(
        n=dictionary.n, l=l, p=dictionary.q, eval=eval_fu, lipschitz_u=lipschitz_u
    )
