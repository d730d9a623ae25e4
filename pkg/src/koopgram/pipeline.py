"""Staged pipeline: fit, factor, balance, certify, simulate, report.

Every stage reads its predecessors' JSON artifacts from the output
directory and writes its own, so stages are independently re-runnable and
their outputs diffable.  All randomness derives from the config seed
through fixed per-stage offsets, making reruns byte-identical.  Timings are
printed, never serialized, so reports stay reproducible.
"""

from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .balance import (
    BalancedRealization,
    balance,
    balanced_nonlinear,
    factor_error,
    truncate,
)
from .certify import (
    build_certificate,
    control_truncation_gain,
    feedback_decomposition,
    input_to_state_norm,
    is_control_affine,
    lift_sensitivity_norms,
    output_embedding_gap,
)
from .expr import system_from_spec
from .gsvd import GainProfile, GsvdFactor, decompose_control, estimate_gains
from .harness import ControlSystem, estimate_gap, get_builtin, input_ensemble, judge_bound
from .koopman import (
    Dictionary,
    KoopmanModel,
    TrajectoryDataset,
    build_dictionary,
    collect_trajectories,
    fit_koopman,
    lifted_control_term,
)
from .linalg import LtiSystem, hinf_norm

__all__ = [
    "PipelineConfig",
    "MissingArtifactError",
    "ARTIFACT_NAMES",
    "stage_fit_koopman",
    "stage_decompose",
    "stage_balance",
    "stage_certify",
    "stage_simulate",
    "stage_report",
    "run_pipeline",
]

ARTIFACT_NAMES = {
    "fit-koopman": "koopman.json",
    "decompose": "decompose.json",
    "balance": "balanced.json",
    "certify": "certificates.json",
    "simulate": "empirical.json",
    "report": "report.json",
}

# fixed rng stream offsets per pipeline stage
_SEED_GAINS = 1
_SEED_ERROR_FULL = 2
_SEED_ERROR_REDUCED = 3
_SEED_ENSEMBLE = 4
_SEED_DATA = 5


class MissingArtifactError(FileNotFoundError):
    """A stage was invoked before its prerequisite stage."""

    def __init__(self, stage: str, path: Path, produced_by: str):
        super().__init__(
            f"stage {stage!r} needs {path}; run the {produced_by!r} stage first"
        )
        self.stage = stage


@dataclass
class PipelineConfig:
    """Reproducible description of one end-to-end reduction run."""

    system: str | dict
    reduction_orders: list[int]
    output_dir: str = "out"
    seed: int = 0
    slack: float | None = None
    sample_budget: int = 2000
    gain_box: float | None = None
    dictionary: dict | None = None
    ensemble_count: int = 6
    horizon: float | None = None
    ode_tol: float = 1e-8
    data: dict = field(
        default_factory=lambda: {
            "trajectories": 30,
            "samples_per_trajectory": 10,
            "horizon": 4.0,
            "box": 1.5,
            "tol": 1e-9,
        }
    )

    def __post_init__(self):
        self.reduction_orders = [int(r) for r in self.reduction_orders]
        if not self.reduction_orders:
            raise ValueError("reduction_orders must be nonempty")
        if any(r < 1 for r in self.reduction_orders):
            raise ValueError("reduction orders must be positive")
        if self.slack is not None and self.slack < 1.0:
            raise ValueError("slack must be at least 1")
        self.seed = int(self.seed)

    @classmethod
    def from_file(cls, path, overrides: dict | None = None) -> "PipelineConfig":
        raw = json.loads(Path(path).read_text())
        raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
        known = {f.name for f in cls.__dataclass_fields__.values()}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    def to_dict(self) -> dict:
        return {
            "system": self.system,
            "reduction_orders": list(self.reduction_orders),
            "output_dir": str(self.output_dir),
            "seed": self.seed,
            "slack": self.slack,
            "sample_budget": self.sample_budget,
            "gain_box": self.gain_box,
            "dictionary": self.dictionary,
            "ensemble_count": self.ensemble_count,
            "horizon": self.horizon,
            "ode_tol": self.ode_tol,
            "data": dict(self.data),
        }


def _out_dir(config: PipelineConfig) -> Path:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _read_artifact(config: PipelineConfig, stage: str, needed_by: str) -> dict:
    path = _out_dir(config) / ARTIFACT_NAMES[stage]
    if not path.exists():
        raise MissingArtifactError(needed_by, path, stage)
    return json.loads(path.read_text())


def _resolve_system(config: PipelineConfig) -> ControlSystem:
    if isinstance(config.system, str):
        return get_builtin(config.system)
    return system_from_spec(config.system)


def _resolve_dictionary(config: PipelineConfig, system) -> Dictionary:
    spec = config.dictionary or system.dictionary_hint
    kind = spec.get("kind", "identity")
    if kind == "identity":
        return build_dictionary("identity", system.n)
    if kind == "monomials":
        return build_dictionary(
            "monomials",
            system.n,
            degree=spec.get("degree"),
            exponents=spec.get("exponents"),
        )
    raise ValueError(f"config dictionaries must be identity or monomials, got {kind!r}")


def _slack(config: PipelineConfig, system) -> float:
    return float(config.slack if config.slack is not None else system.suggested_slack)


def _gain_box(config: PipelineConfig, system) -> float:
    return float(config.gain_box if config.gain_box is not None else system.gain_box)


def _collect_data(config: PipelineConfig, system) -> TrajectoryDataset:
    d = config.data
    return collect_trajectories(
        system.drift,
        system.n,
        count=int(d.get("trajectories", 30)),
        horizon=float(d.get("horizon", 4.0)),
        samples_per_trajectory=int(d.get("samples_per_trajectory", 10)),
        box=float(d.get("box", 1.5)),
        tol=float(d.get("tol", 1e-9)),
        seed=[config.seed, _SEED_DATA],
    )


def _rebuild_model(config, system, dictionary, needed_by: str) -> KoopmanModel:
    art = _read_artifact(config, "fit-koopman", needed_by)
    return KoopmanModel(
        dictionary=dictionary,
        a=np.asarray(art["a"], float),
        c=np.asarray(art["c"], float),
        residual_gain=float(art["residual_gain"]),
        output_residual=float(art["output_residual"]),
        hurwitz=bool(art["hurwitz"]),
    )


def _rebuild_control_factor(config, system, dictionary, needed_by: str) -> GsvdFactor:
    art = _read_artifact(config, "decompose", needed_by)
    fu = lifted_control_term(
        system.f, dictionary, l=system.l, lipschitz_u=system.lipschitz_u
    )
    gains = GainProfile(
        np.asarray(art["gains"]["coordinate_bounds"], float),
        source=art["gains"]["source"],
        sample_count=art["gains"]["sample_count"],
    )
    return GsvdFactor(
        u=np.asarray(art["u"], float),
        sigma=np.asarray(art["sigma"], float),
        slack=float(art["slack"]),
        kernel_dim=system.l,
        map=fu,
        norm_arg=1,
        gains=gains,
    )


def stage_fit_koopman(config: PipelineConfig) -> dict:
    """Fit the lifted generator and output matrix; artifact: koopman.json."""
    system = _resolve_system(config)
    dictionary = _resolve_dictionary(config, system)
    data = _collect_data(config, system)
    model = fit_koopman(
        system.drift, system.h, dictionary, data, seed=config.seed
    )
    payload = {
        "system": system.name,
        "dims": {"n": system.n, "l": system.l, "p": system.p, "q": dictionary.q},
        "dictionary": dictionary.spec(),
        "a": model.a.tolist(),
        "c": model.c.tolist(),
        "residual_gain": float(model.residual_gain),
        "output_residual": float(model.output_residual),
        "hurwitz": bool(model.hurwitz),
        "data_provenance": data.provenance,
    }
    _write_json(_out_dir(config) / ARTIFACT_NAMES["fit-koopman"], payload)
    return payload


def stage_decompose(config: PipelineConfig) -> dict:
    """Factor the lifted control term; artifact: decompose.json."""
    _read_artifact(config, "fit-koopman", "decompose")
    system = _resolve_system(config)
    dictionary = _resolve_dictionary(config, system)
    fu = lifted_control_term(
        system.f, dictionary, l=system.l, lipschitz_u=system.lipschitz_u
    )
    gains = estimate_gains(
        fu.eval,
        (system.n, system.l),
        sample_budget=config.sample_budget,
        seed=[config.seed, _SEED_GAINS],
        box=_gain_box(config, system),
    )
    factor = decompose_control(fu, gains, slack=_slack(config, system))
    payload = {
        "u": factor.u.tolist(),
        "sigma": factor.sigma.tolist(),
        "slack": float(factor.slack),
        "lipschitz_u": float(system.lipschitz_u),
        "gains": {
            "coordinate_bounds": [float(v) for v in gains.coordinate_bounds],
            "source": gains.source,
            "sample_count": gains.sample_count,
        },
    }
    _write_json(_out_dir(config) / ARTIFACT_NAMES["decompose"], payload)
    return payload


def stage_balance(config: PipelineConfig) -> dict:
    """Balance the lifted realization; artifact: balanced.json."""
    koop = _read_artifact(config, "fit-koopman", "balance")
    dec = _read_artifact(config, "decompose", "balance")
    a = np.asarray(koop["a"], float)
    c = np.asarray(koop["c"], float)
    b = np.asarray(dec["u"], float) @ np.asarray(dec["sigma"], float)
    bal = balance(LtiSystem(a, b, c), state_dim=int(koop["dims"]["n"]))
    payload = bal.to_dict()
    _write_json(_out_dir(config) / ARTIFACT_NAMES["balance"], payload)
    return payload


def _validated_orders(config: PipelineConfig, q: int) -> list[int]:
    bad = [r for r in config.reduction_orders if r > q]
    if bad:
        raise ValueError(f"reduction orders {bad} exceed the lifted dimension {q}")
    return config.reduction_orders


def stage_certify(config: PipelineConfig) -> dict:
    """Compute certificates for every requested order; artifact: certificates.json."""
    system = _resolve_system(config)
    dictionary = _resolve_dictionary(config, system)
    model = _rebuild_model(config, system, dictionary, "certify")
    factor = _rebuild_control_factor(config, system, dictionary, "certify")
    bal = BalancedRealization.from_dict(
        _read_artifact(config, "balance", "certify")
    )
    slack = _slack(config, system)
    box = _gain_box(config, system)
    orders = _validated_orders(config, bal.q)

    hinf_output = hinf_norm(LtiSystem(bal.a_bal, bal.b_bal, bal.c_bal))
    phi_full = input_to_state_norm(bal.a_bal, bal.b_bal)
    gap_full = output_embedding_gap(bal.c_bal, phi_full)
    lift_norm, recovery_norm = lift_sensitivity_norms(bal, factor)

    certs = []
    affine = None
    for r in orders:
        red = truncate(bal, r)
        bn = balanced_nonlinear(system.f, system.l, model, bal, red)
        if affine is None:
            affine = is_control_affine(bn, seed=config.seed)
        gain = control_truncation_gain(
            system.lipschitz_u, lift_norm, recovery_norm, affine
        )
        err_full = factor_error(
            bn, reduced=False, slack=slack, sample_budget=config.sample_budget,
            seed=[config.seed, _SEED_ERROR_FULL], box=box,
        )
        err_red = factor_error(
            bn, reduced=True, slack=slack, sample_budget=config.sample_budget,
            seed=[config.seed, _SEED_ERROR_REDUCED, r], box=box,
        )
        fb_full = feedback_decomposition(bal.a_bal, bal.b_bal, err_full)
        fb_red = feedback_decomposition(red.a_r, red.b_r, err_red)
        gap_red = output_embedding_gap(
            red.c_r, input_to_state_norm(red.a_r, red.b_r)
        )
        cert = build_certificate(
            order=r,
            full=fb_full,
            reduced=fb_red,
            output_gap_full=gap_full,
            output_gap_reduced=gap_red,
            control_gain=gain,
            hinf_output=hinf_output,
            hsv_tail=red.hsv_tail,
            provenance={
                "seed": config.seed,
                "slack": slack,
                "sample_budget": config.sample_budget,
                "gain_box": box,
                "control_affine": bool(affine),
            },
        )
        certs.append(cert.to_dict())

    payload = {
        "system": system.name,
        "control_affine": bool(affine),
        "hinf_output": float(hinf_output),
        "hsv": [float(v) for v in bal.hsv],
        "orders": certs,
    }
    _write_json(_out_dir(config) / ARTIFACT_NAMES["certify"], payload)
    return payload


def _workers() -> int:
    default = min(4, os.cpu_count() or 1)
    cap = os.environ.get("KOOPGRAM_THREADS")
    if cap is not None:
        return max(1, min(default, int(cap)))
    return default


def _default_horizon(a_bal: np.ndarray) -> float:
    slowest = float(np.min(-np.linalg.eigvals(a_bal).real))
    return float(np.clip(20.0 / max(slowest, 1e-6), 10.0, 60.0))


def stage_simulate(config: PipelineConfig) -> dict:
    """Measure empirical full-vs-reduced gains; artifact: empirical.json."""
    system = _resolve_system(config)
    dictionary = _resolve_dictionary(config, system)
    model = _rebuild_model(config, system, dictionary, "simulate")
    bal = BalancedRealization.from_dict(
        _read_artifact(config, "balance", "simulate")
    )
    orders = _validated_orders(config, bal.q)
    horizon = config.horizon or _default_horizon(bal.a_bal)
    ensemble = input_ensemble(
        system.l, horizon, count=config.ensemble_count, seed=[config.seed, _SEED_ENSEMBLE]
    )
    workers = _workers()
    rows = []
    for r in orders:
        red = truncate(bal, r)
        bn = balanced_nonlinear(system.f, system.l, model, bal, red)
        est = estimate_gap(
            system, bn, red, ensemble, tol=config.ode_tol, workers=workers
        )
        rows.append({"order": int(r), "estimate": est.to_dict()})
    payload = {
        "system": system.name,
        "horizon": float(horizon),
        "ensemble_count": int(config.ensemble_count),
        "orders": rows,
    }
    _write_json(_out_dir(config) / ARTIFACT_NAMES["simulate"], payload)
    return payload


def stage_report(config: PipelineConfig) -> tuple[dict, int]:
    """Join certificates with empirical gains; artifacts: report.json/.csv."""
    certs = _read_artifact(config, "certify", "report")
    emp = _read_artifact(config, "simulate", "report")
    est_by_order = {row["order"]: row["estimate"] for row in emp["orders"]}

    rows = []
    any_fail = False
    for cert in certs["orders"]:
        r = cert["order"]
        est = est_by_order.get(r)
        if est is None:
            raise ValueError(f"no empirical estimate for order {r}")
        bound = cert["total_bound"]
        verdict, tightness = judge_bound(bound, est["value"], len(est["excluded"]))
        any_fail = any_fail or verdict == "FAIL"
        rows.append(
            {
                "order": r,
                "hankel_tail": cert["hankel_tail"],
                "control_gain": cert["control_gain"],
                "truncation_bound": cert["truncation_bound"],
                "total_bound": bound,
                "status": cert["status"],
                "small_gain_full": cert["small_gain_full"],
                "small_gain_reduced": cert["small_gain_reduced"],
                "empirical": est["value"],
                "excluded": len(est["excluded"]),
                "verdict": verdict,
                "tightness": tightness,
            }
        )

    koop = _read_artifact(config, "fit-koopman", "report")
    report = {
        "config": config.to_dict(),
        "system": certs["system"],
        "dims": koop["dims"],
        "hsv": certs["hsv"],
        "koopman_residual_gain": koop["residual_gain"],
        "control_affine": certs["control_affine"],
        "horizon": emp["horizon"],
        "rows": rows,
        "all_sound": not any_fail,
    }
    out = _out_dir(config)
    _write_json(out / ARTIFACT_NAMES["report"], report)

    csv_columns = [
        "order", "hankel_tail", "control_gain", "truncation_bound", "total_bound",
        "status", "small_gain_full", "small_gain_reduced", "empirical",
        "excluded", "verdict", "tightness",
    ]
    with (out / "report.csv").open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=csv_columns)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in csv_columns})

    return report, (2 if any_fail else 0)


_STAGES = (
    ("fit-koopman", stage_fit_koopman),
    ("decompose", stage_decompose),
    ("balance", stage_balance),
    ("certify", stage_certify),
    ("simulate", stage_simulate),
)


def run_pipeline(config: PipelineConfig, verbose: bool = True) -> tuple[dict, int]:
    """Run every stage in order and return (report, exit_code)."""
    for name, fn in _STAGES:
        start = time.perf_counter()
        fn(config)
        if verbose:
            print(f"[{name}] {time.perf_counter() - start:.2f}s")
    start = time.perf_counter()
    report, code = stage_report(config)
    if verbose:
        print(f"[report] {time.perf_counter() - start:.2f}s")
        for row in report["rows"]:
            bound = row["total_bound"]
            bound_txt = "unbounded" if bound is None else f"{bound:.6g}"
            print(
                f"  r={row['order']}: bound={bound_txt} empirical={row['empirical']:.6g} "
                f"verdict={row['verdict']}"
            )
    return report, code
