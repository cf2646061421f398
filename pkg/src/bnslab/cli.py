"""Experiment runner: every study in the library as a reproducible command.

Usage: bnslab <subcommand> [--config FILE] [--section.key=value ...] --out DIR

Config files are flat `key = value` lines under `[section]` headers; flags
override file values; unknown keys are rejected. Every subcommand writes
CSV tables (with the full effective config as `#` comments) and, where a
figure is defined, a deterministic SVG. Reruns with the same config are
byte-identical. Exit status: 0 all checks passed, 2 a scientific check
failed, 1 execution error. BNSLAB_THREADS caps sampling workers.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from bnslab import plotting
from bnslab.dynamics import ESTIMATION_TAG
from bnslab.metrics import avg_knn, circles_report, empirical_moments
from bnslab.samplers import (
    BatchError,
    SamplerConfig,
    derive_cell_seed,
    sample,
    sample_grid,
)
from bnslab.schedule import NoiseSchedule, build_linear_schedule, plan_skip
from bnslab.score import (
    GaussianSpec,
    ScoreField,
    TrainConfig,
    TrainingError,
    dsm_train,
    gaussian_field,
    mixture_field,
    net_field,
)
from bnslab.spectral import band_energy, draw_noise_field
from bnslab.theory import (
    amplification_region,
    contraction_bound,
    predict_bns_ode,
    predict_bns_sde,
)
from bnslab.toydata import (
    CirclesGeometry,
    CirclesSpec,
    circles_ring_mixture,
    circles_sampler,
    sample_circles,
)

Z_LIMIT = 4.0
PILOT_B_FACTOR = 1.5


class ConfigError(ValueError):
    """Malformed config file, unknown key, or unparseable value."""


class CheckFailure(RuntimeError):
    """A scientific check failed; maps to exit status 2."""


# ---------------------------------------------------------------------------
# Config schemas: subcommand -> section -> key -> (kind, default).
# Kinds: int, float, bool, str, floats (comma list), ints (comma list).

SCHEMAS: Dict[str, Dict[str, Dict[str, Tuple[str, object]]]] = {
    "verify-gaussian": {
        "data": {"sigma0_sq": ("float", 4.0), "d": ("int", 1), "mu0": ("float", 0.0)},
        "schedule": {
            "n_steps": ("int", 1000),
            "beta_min": ("float", 1e-4),
            "beta_max": ("float", 0.02),
        },
        "sampler": {
            "gamma_sq": ("float", 4.0),
            "delta_skip": ("int", 632),
            "dynamics": ("str", "stochastic"),
            "init": ("str", "boosted"),
            "n_samples": ("int", 100000),
            "seed": ("int", 20240601),
        },
    },
    "corollary-scan": {
        "data": {"sigma0": ("float", 2.0)},
        "schedule": {
            "n_steps": ("int", 1000),
            "beta_min": ("float", 1e-4),
            "beta_max": ("float", 0.02),
        },
        "scan": {"gammas": ("floats", (0.5, 1.5, 2.0, 3.0)), "stride": ("int", 1)},
    },
    "toy2d": {
        "data": {
            "radius_major": ("float", 1.0),
            "radius_minor": ("float", 0.5),
            "sigma": ("float", 0.02),
            "imbalance": ("float", 10.0),
            "eps_manifold_sigmas": ("float", 3.0),
            "seed": ("int", 11),
        },
        "schedule": {
            "n_steps": ("int", 250),
            "beta_min": ("float", 4e-4),
            "beta_max": ("float", 0.08),
        },
        "score": {
            "source": ("str", "net"),
            "iterations": ("int", 300000),
            "batch_size": ("int", 256),
            "learning_rate": ("float", 0.05),
            "train_seed": ("int", 5),
            "components_per_ring": ("int", 64),
        },
        "sampler": {
            "n_panel": ("int", 4000),
            "seed": ("int", 21),
            "tau": ("float", 1.1),
            "gamma_sq": ("float", 4.0),
            "delta_skip": ("int", 150),
        },
        "output": {"export_points": ("bool", False)},
    },
    "trajectory": {
        "data": {
            "radius_major": ("float", 1.0),
            "radius_minor": ("float", 0.5),
            "sigma": ("float", 0.02),
            "imbalance": ("float", 10.0),
            "seed": ("int", 11),
        },
        "schedule": {
            "n_steps": ("int", 250),
            "beta_min": ("float", 4e-4),
            "beta_max": ("float", 0.08),
        },
        "score": {"components_per_ring": ("int", 64)},
        "samplers": {
            "taus": ("floats", (1.1,)),
            "gammas_sq": ("floats", (4.0, 25.0)),
            "delta_skip": ("int", 50),
            "include_ode": ("bool", True),
            "n_traj": ("int", 200),
            "seed": ("int", 33),
        },
    },
    "contraction": {
        "data": {"sigma0_sq": ("float", 4.0), "d": ("int", 1)},
        "schedule": {
            "n_steps": ("int", 1000),
            "beta_min": ("float", 1e-4),
            "beta_max": ("float", 0.02),
        },
        "coupling": {
            "gamma": ("float", 3.0),
            "delta_skip": ("int", 632),
            "n_pairs": ("int", 10000),
            "pilot_size": ("int", 1000),
            "seed": ("int", 77),
        },
    },
    "spectral": {
        "field": {
            "height": ("int", 64),
            "width": ("int", 64),
            "gamma": ("float", 2.0),
            "n_draws": ("int", 2000),
            "cutoffs": ("floats", (0.0, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0)),
            "seed": ("int", 55),
        }
    },
    "ablation": {
        "data": {
            "radius_major": ("float", 1.0),
            "radius_minor": ("float", 0.5),
            "sigma": ("float", 0.02),
            "imbalance": ("float", 10.0),
            "eps_manifold_sigmas": ("float", 3.0),
            "n_reference": ("int", 5000),
            "seed": ("int", 11),
        },
        "schedule": {
            "n_steps": ("int", 250),
            "beta_min": ("float", 4e-4),
            "beta_max": ("float", 0.08),
        },
        "score": {
            "source": ("str", "oracle"),
            "iterations": ("int", 300000),
            "batch_size": ("int", 256),
            "learning_rate": ("float", 0.05),
            "train_seed": ("int", 5),
            "components_per_ring": ("int", 64),
        },
        "grid": {
            "gamma_sqs": ("floats", (1.0, 4.0, 9.0)),
            "deltas": ("ints", (0, 50, 150)),
            "n_samples": ("int", 2000),
            "seed": ("int", 99),
            "knn_k": ("int", 5),
        },
    },
}


def _parse_value(raw: str, kind: str, where: str):
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind == "str":
            return raw
        if kind == "floats":
            return tuple(float(v) for v in raw.split(",") if v.strip())
        if kind == "ints":
            return tuple(int(v) for v in raw.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {kind}")
    raise ConfigError(f"{where}: unknown kind {kind}")


def _parse_config_file(text: str) -> List[Tuple[str, str, str]]:
    """Yield (section, key, raw value) triples from flat INI-like text."""
    triples = []
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        if section is None:
            raise ConfigError(f"line {lineno}: key outside any [section]")
        key, _, raw = stripped.partition("=")
        triples.append((section, key.strip(), raw.strip()))
    return triples


def load_config(
    subcommand: str, config_path: Optional[str], overrides: Sequence[str]
) -> Dict[str, Dict[str, object]]:
    """Defaults, then config file, then --section.key=value flags."""
    schema = SCHEMAS[subcommand]
    cfg: Dict[str, Dict[str, object]] = {
        section: {key: default for key, (_, default) in keys.items()}
        for section, keys in schema.items()
    }

    def apply(section: str, key: str, raw: str, where: str) -> None:
        if section not in schema or key not in schema[section]:
            raise ConfigError(f"{where}: unknown key {section}.{key}")
        kind = schema[section][key][0]
        cfg[section][key] = _parse_value(raw, kind, where)

    if config_path is not None:
        text = Path(config_path).read_text()
        for section, key, raw in _parse_config_file(text):
            apply(section, key, raw, config_path)

    for flag in overrides:
        if not flag.startswith("--") or "=" not in flag:
            raise ConfigError(f"expected --section.key=value, got {flag!r}")
        dotted, _, raw = flag[2:].partition("=")
        if "." not in dotted:
            raise ConfigError(f"expected --section.key=value, got {flag!r}")
        section, _, key = dotted.partition(".")
        apply(section, key, raw, "flags")
    return cfg


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".12g")
    if isinstance(value, (tuple, list)):
        return ",".join(_fmt(v) for v in value)
    return str(value)


def config_comments(subcommand: str, cfg: Dict) -> List[Tuple[str, str]]:
    items: List[Tuple[str, str]] = [("subcommand", subcommand)]
    for section in cfg:
        for key, value in cfg[section].items():
            items.append((f"{section}.{key}", _fmt(value)))
    return items


def write_csv(path, comments, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    lines = [f"# {key}={value}" for key, value in comments]
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def _schedule_from(cfg: Dict) -> NoiseSchedule:
    sched = cfg["schedule"]
    return build_linear_schedule(
        n_steps=sched["n_steps"],
        beta_min=sched["beta_min"],
        beta_max=sched["beta_max"],
    )


def _circles_spec_from(cfg: Dict, n_points: int) -> CirclesSpec:
    data = cfg["data"]
    return CirclesSpec(
        n_points=n_points,
        seed=data["seed"],
        radius_major=data["radius_major"],
        radius_minor=data["radius_minor"],
        ring_noise_sigma=data["sigma"],
        imbalance=data["imbalance"],
    )


def _toy_field(cfg: Dict, spec: CirclesSpec, schedule: NoiseSchedule) -> ScoreField:
    score = cfg["score"]
    if score["source"] == "oracle":
        mixture = circles_ring_mixture(spec, score["components_per_ring"])
        return mixture_field(mixture, schedule)
    if score["source"] == "net":
        net = dsm_train(
            circles_sampler(spec),
            schedule,
            TrainConfig(
                n_iterations=score["iterations"],
                batch_size=score["batch_size"],
                learning_rate=score["learning_rate"],
                seed=score["train_seed"],
            ),
        )
        return net_field(net, schedule)
    raise ConfigError(f"score.source must be net or oracle, got {score['source']!r}")


# ---------------------------------------------------------------------------
# Subcommands


def cmd_verify_gaussian(cfg: Dict, out: Path) -> int:
    data, smp = cfg["data"], cfg["sampler"]
    d = data["d"]
    schedule = _schedule_from(cfg)
    spec = GaussianSpec(
        mean=data["mu0"] * np.ones(d), cov=data["sigma0_sq"] * np.eye(d)
    )
    field = gaussian_field(spec, schedule)
    plan = plan_skip(schedule, smp["delta_skip"])

    if smp["init"] == "boosted":
        gamma = math.sqrt(smp["gamma_sq"])
    elif smp["init"] == "matched":
        if not np.allclose(spec.mean, 0.0):
            raise ConfigError("matched init requires mu0 = 0")
        gamma = math.sqrt(1.0 + plan.alpha_at_skip**2 * (data["sigma0_sq"] - 1.0))
    else:
        raise ConfigError(f"sampler.init must be boosted or matched, got {smp['init']!r}")

    config = SamplerConfig(
        mode="boost_skip",
        dynamics=smp["dynamics"],
        gamma=gamma,
        delta_skip=smp["delta_skip"],
        n_samples=smp["n_samples"],
        seed=smp["seed"],
    )
    predict = predict_bns_sde if smp["dynamics"] == "stochastic" else predict_bns_ode
    prediction = predict(spec, schedule, plan, np.zeros(d), gamma**2 * np.eye(d))

    batch = sample(field, schedule, config)
    mean, cov, se = empirical_moments(batch)

    rows = []
    failing = None
    for j in range(d):
        z = (mean[j] - prediction.mean[j]) / se.mean[j]
        rows.append((f"mean_{j}", prediction.mean[j], mean[j], se.mean[j], z))
        if abs(z) > Z_LIMIT and failing is None:
            failing = f"mean_{j}"
    for j in range(d):
        z = (cov[j, j] - prediction.cov[j, j]) / se.var[j]
        rows.append((f"var_{j}", prediction.cov[j, j], cov[j, j], se.var[j], z))
        if abs(z) > Z_LIMIT and failing is None:
            failing = f"var_{j}"

    comments = config_comments("verify-gaussian", cfg)
    comments.append(("alpha_at_skip", _fmt(plan.alpha_at_skip)))
    write_csv(
        out / "verify_gaussian.csv",
        comments,
        ["quantity", "predicted", "empirical", "mc_stderr", "z_score"],
        rows,
    )
    if failing is not None:
        raise CheckFailure(f"{failing} outside |z| <= {Z_LIMIT}")
    return 0


def cmd_corollary_scan(cfg: Dict, out: Path) -> int:
    schedule = _schedule_from(cfg)
    sigma0 = cfg["data"]["sigma0"]
    gammas = cfg["scan"]["gammas"]
    stride = max(1, cfg["scan"]["stride"])
    spec = GaussianSpec(mean=np.zeros(1), cov=sigma0**2 * np.eye(1))

    rows = []
    curves = []
    vlines = []
    for gamma in gammas:
        region = amplification_region(sigma0, gamma, schedule)
        xs, ys = [], []
        for i in range(1, schedule.n_steps + 1, stride):
            plan = plan_skip(schedule, schedule.n_steps - i)
            pred = predict_bns_sde(
                spec, schedule, plan, np.zeros(1), gamma**2 * np.eye(1)
            )
            t_frac = schedule.time_of_index(i) / schedule.horizon
            var_hat = pred.cov[0, 0]
            rows.append(
                (
                    gamma,
                    i,
                    t_frac,
                    plan.alpha_at_skip,
                    var_hat,
                    int(region.contains_index(i)),
                    region.case,
                )
            )
            xs.append(t_frac)
            ys.append(var_hat)
        curves.append((f"gamma={_fmt(gamma)}", np.array(xs), np.array(ys)))
        if region.boundary_index is not None and region.boundary_index >= 1:
            t_b = schedule.time_of_index(region.boundary_index) / schedule.horizon
            vlines.append((t_b, f"boundary gamma={_fmt(gamma)}"))

    comments = config_comments("corollary-scan", cfg)
    write_csv(
        out / "corollary_scan.csv",
        comments,
        ["gamma", "index", "t_skip_over_T", "alpha", "sigma_hat_sq", "amplified", "case"],
        rows,
    )
    plotting.curve_overlay(
        curves,
        out / "corollary_scan.svg",
        xlabel="T_skip / T",
        ylabel="final variance",
        hline=(sigma0**2, "data variance"),
        vlines=vlines,
    )
    return 0


def _toy_panels(cfg: Dict):
    smp = cfg["sampler"]
    n = smp["n_panel"]
    gamma = math.sqrt(smp["gamma_sq"])
    delta = smp["delta_skip"]
    base_seed = smp["seed"]

    def cell(k: int, **kwargs) -> SamplerConfig:
        return SamplerConfig(
            n_samples=n, seed=derive_cell_seed(base_seed, k), **kwargs
        )

    return [
        ("standard", cell(1, mode="standard")),
        ("temperature", cell(2, mode="temperature", tau=smp["tau"])),
        ("boost_only", cell(3, mode="boost_skip", gamma=gamma)),
        ("ode_boost", cell(4, mode="boost_skip", gamma=gamma, delta_skip=delta, dynamics="ode")),
        ("boost_skip", cell(5, mode="boost_skip", gamma=gamma, delta_skip=delta)),
    ]


def cmd_toy2d(cfg: Dict, out: Path) -> int:
    schedule = _schedule_from(cfg)
    n_panel = cfg["sampler"]["n_panel"]
    spec = _circles_spec_from(cfg, n_panel)
    geometry = CirclesGeometry.from_spec(
        spec, cfg["data"]["eps_manifold_sigmas"] * spec.ring_noise_sigma
    )
    field = _toy_field(cfg, spec, schedule)

    truth_points, _ = sample_circles(spec)
    panels = [("ground_truth", truth_points)]
    for label, config in _toy_panels(cfg):
        panels.append((label, sample(field, schedule, config).points))

    rows = []
    for label, points in panels:
        report = circles_report(points, geometry)
        knn = avg_knn(points, truth_points, k=5)
        rows.append(
            (
                label,
                report.minority_fraction,
                report.majority_fraction,
                report.off_manifold_fraction,
                float(knn.avg_knn_values.mean()),
                report.n,
            )
        )

    comments = config_comments("toy2d", cfg)
    comments.append(("eps_manifold", _fmt(geometry.eps_manifold)))
    comments.append(("field", field.tag))
    write_csv(
        out / "toy2d_report.csv",
        comments,
        [
            "panel",
            "minority_fraction",
            "majority_fraction",
            "off_manifold_fraction",
            "avg_knn5_mean",
            "n",
        ],
        rows,
    )
    limit = 1.4 * max(spec.radius_major, spec.radius_minor)
    plotting.scatter_panels(panels, out / "toy2d_panels.svg", limit=limit)
    if cfg["output"]["export_points"]:
        for label, points in panels:
            header = ["x0", "x1"]
            write_csv(out / f"toy2d_points_{label}.csv", comments, header, points)
    return 0


def _trajectory_curves(
    field: ScoreField,
    schedule: NoiseSchedule,
    start: int,
    gamma: float,
    dynamics: str,
    seed: int,
    n_traj: int,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mean norm / estimation-error curves over a coupled trajectory batch.

    Noise layout matches sample(): trajectory j draws its init and step
    rows from stream (seed, j), so parameter-neutral configs reproduce the
    standard curves bitwise. Estimation noise comes from per-step
    substreams and never advances the trajectory draws.
    """
    n_draws = start if dynamics == "stochastic" else 1
    noise = np.empty((n_traj, n_draws, field.d))
    for j in range(n_traj):
        noise[j] = np.random.default_rng([seed, j]).standard_normal(
            (n_draws, field.d)
        )
    x = gamma * noise[:, 0, :]

    norms = np.empty(start + 1)
    errs = np.empty(start)
    for pos, i in enumerate(range(start, 0, -1)):
        norms[pos] = float(np.linalg.norm(x, axis=1).mean())
        score = field.score(x, i)
        ab = schedule.alpha_bar(i)
        x0_hat = (x + (1.0 - ab) * score) / math.sqrt(ab)
        eps = np.random.default_rng([seed, ESTIMATION_TAG, i]).standard_normal(
            x.shape
        )
        x_prime = math.sqrt(ab) * x0_hat + math.sqrt(1.0 - ab) * eps
        eps_hat = -math.sqrt(1.0 - ab) * field.score(x_prime, i)
        errs[pos] = float(np.linalg.norm(eps_hat - eps, axis=1).mean())

        alpha_i = schedule.alpha(i)
        if dynamics == "stochastic":
            x = (x + (1.0 - alpha_i) * score) / math.sqrt(alpha_i)
            if i > 1:
                x += math.sqrt(1.0 - alpha_i) * noise[:, start - i + 1, :]
        else:
            x = x + 0.5 * schedule.beta(i) * (x + score)
    norms[start] = float(np.linalg.norm(x, axis=1).mean())
    return np.arange(start, -1, -1), norms, errs


def cmd_trajectory(cfg: Dict, out: Path) -> int:
    schedule = _schedule_from(cfg)
    spec = _circles_spec_from(cfg, 1)
    mixture = circles_ring_mixture(spec, cfg["score"]["components_per_ring"])
    field = mixture_field(mixture, schedule)
    smp = cfg["samplers"]
    n_traj = smp["n_traj"]
    delta = smp["delta_skip"]
    seed = smp["seed"]

    runs: List[Tuple[str, float, int, str]] = [("standard", 1.0, 0, "stochastic")]
    for tau in smp["taus"]:
        runs.append((f"temperature_tau={_fmt(tau)}", 1.0, 0, f"tau:{tau}"))
    for gsq in smp["gammas_sq"]:
        runs.append((f"bns_gamma_sq={_fmt(gsq)}", math.sqrt(gsq), delta, "stochastic"))
    if smp["include_ode"]:
        runs.append(("ode", 1.0, 0, "ode"))

    rows = []
    curves_norm = []
    curves_err = []
    for label, gamma, delta_skip, kind in runs:
        tau = 1.0
        dynamics = "stochastic"
        if kind == "ode":
            dynamics = "ode"
        elif kind.startswith("tau:"):
            tau = float(kind.split(":", 1)[1])
        eff_field = field if tau == 1.0 else field.scaled(tau)
        start_index = plan_skip(schedule, delta_skip).n_skip

        indices, norms, errs = _trajectory_curves(
            eff_field, schedule, start_index, gamma, dynamics, seed, n_traj
        )
        for pos, i in enumerate(indices):
            err = errs[pos] if i >= 1 else ""
            rows.append((label, i, norms[pos], err))
        curves_norm.append((label, indices, norms))
        curves_err.append((label, indices[:-1], errs))

    comments = config_comments("trajectory", cfg)
    write_csv(
        out / "trajectory.csv",
        comments,
        ["sampler", "i", "mean_norm", "mean_estimation_error"],
        rows,
    )
    plotting.curve_panels(
        [
            {
                "title": "state norm",
                "curves": curves_norm,
                "xlabel": "i",
                "ylabel": "mean ||x_i||",
            },
            {
                "title": "noise estimation error",
                "curves": curves_err,
                "xlabel": "i",
                "ylabel": "mean ||eps_hat - eps||",
            },
        ],
        out / "trajectory.svg",
    )
    return 0


def cmd_contraction(cfg: Dict, out: Path) -> int:
    schedule = _schedule_from(cfg)
    data, coup = cfg["data"], cfg["coupling"]
    d = data["d"]
    sigma0_sq = data["sigma0_sq"]
    spec = GaussianSpec(mean=np.zeros(d), cov=sigma0_sq * np.eye(d))
    field = gaussian_field(spec, schedule)
    plan = plan_skip(schedule, coup["delta_skip"])
    n_skip = plan.n_skip
    gamma = coup["gamma"]
    rng = np.random.default_rng([coup["seed"], 0])

    marg_scale = math.sqrt(1.0 + plan.alpha_at_skip**2 * (sigma0_sq - 1.0))

    # Pilot: matched-start trajectories bound the reference norm.
    pilot = marg_scale * rng.standard_normal((coup["pilot_size"], d))
    max_norm = float(np.linalg.norm(pilot, axis=1).max())
    x = pilot.copy()
    for i in range(n_skip, 0, -1):
        x = (x + (1.0 - schedule.alpha(i)) * field.score(x, i)) / math.sqrt(
            schedule.alpha(i)
        )
        if i > 1:
            x += math.sqrt(1.0 - schedule.alpha(i)) * rng.standard_normal(x.shape)
        max_norm = max(max_norm, float(np.linalg.norm(x, axis=1).max()))
    B = PILOT_B_FACTOR * max_norm

    # Synchronous coupling: matched vs boosted start, shared step noise.
    n_pairs = coup["n_pairs"]
    x_ref = marg_scale * rng.standard_normal((n_pairs, d))
    x_boost = gamma * rng.standard_normal((n_pairs, d))
    rows = []
    failing = None
    for i in range(n_skip, 0, -1):
        mse = float(np.mean(np.sum((x_ref - x_boost) ** 2, axis=1)))
        report = contraction_bound(schedule, i, n_skip, gamma, B, d)
        rows.append(
            (i, mse, report.bound, report.floor_term, report.init_term, report.lam)
        )
        if mse > report.bound and failing is None:
            failing = i
        alpha_i = schedule.alpha(i)
        x_ref = (x_ref + (1.0 - alpha_i) * field.score(x_ref, i)) / math.sqrt(alpha_i)
        x_boost = (x_boost + (1.0 - alpha_i) * field.score(x_boost, i)) / math.sqrt(
            alpha_i
        )
        if i > 1:
            z = rng.standard_normal((n_pairs, d))
            noise = math.sqrt(1.0 - alpha_i) * z
            x_ref += noise
            x_boost += noise

    mse = float(np.mean(np.sum((x_ref - x_boost) ** 2, axis=1)))
    final_report = contraction_bound(schedule, 0, n_skip, gamma, B, d)
    rows.append(
        (
            0,
            mse,
            final_report.bound,
            final_report.floor_term,
            final_report.init_term,
            final_report.lam,
        )
    )
    if mse > final_report.bound and failing is None:
        failing = 0

    comments = config_comments("contraction", cfg)
    comments.append(("B", _fmt(B)))
    comments.append(("n_skip", _fmt(n_skip)))
    comments.append(("C", _fmt(final_report.C)))
    write_csv(
        out / "contraction.csv",
        comments,
        ["i", "coupled_mse", "bound", "floor_term", "init_term", "lambda"],
        rows,
    )
    if failing is not None:
        raise CheckFailure(f"coupled error exceeds bound at step i={failing}")
    return 0


def cmd_spectral(cfg: Dict, out: Path) -> int:
    fld = cfg["field"]
    rng = np.random.default_rng(fld["seed"])
    gamma = fld["gamma"]
    cutoffs = fld["cutoffs"]
    sums = {c: np.zeros(4) for c in cutoffs}
    max_rel_err = {c: 0.0 for c in cutoffs}
    for _ in range(fld["n_draws"]):
        unit = draw_noise_field(fld["height"], fld["width"], 1.0, rng)
        boosted = unit.boosted(gamma)
        for c in cutoffs:
            lo_u, hi_u = band_energy(unit, c)
            lo_b, hi_b = band_energy(boosted, c)
            sums[c] += (lo_u, hi_u, lo_b, hi_b)
            rel = abs((lo_u + hi_u) - unit.energy) / unit.energy
            max_rel_err[c] = max(max_rel_err[c], rel)

    n = fld["n_draws"]
    rows = [
        (
            c,
            sums[c][0] / n,
            sums[c][1] / n,
            sums[c][2] / n,
            sums[c][3] / n,
            max_rel_err[c],
        )
        for c in cutoffs
    ]
    comments = config_comments("spectral", cfg)
    write_csv(
        out / "spectral.csv",
        comments,
        [
            "cutoff",
            "low_unit",
            "high_unit",
            "low_boosted",
            "high_boosted",
            "plancherel_max_rel_err",
        ],
        rows,
    )
    return 0


def cmd_ablation(cfg: Dict, out: Path) -> int:
    schedule = _schedule_from(cfg)
    spec = _circles_spec_from(cfg, cfg["data"]["n_reference"])
    geometry = CirclesGeometry.from_spec(
        spec, cfg["data"]["eps_manifold_sigmas"] * spec.ring_noise_sigma
    )
    field = _toy_field(cfg, spec, schedule)
    truth_points, _ = sample_circles(spec)
    grid = cfg["grid"]

    base = SamplerConfig(
        mode="boost_skip",
        n_samples=grid["n_samples"],
        seed=grid["seed"],
    )
    gammas = tuple(math.sqrt(g) for g in grid["gamma_sqs"])
    cells = sample_grid(field, schedule, base, gammas, grid["deltas"])

    rows = []
    for (gamma, delta, result), gamma_sq in zip(
        cells, [g for g in grid["gamma_sqs"] for _ in grid["deltas"]]
    ):
        if isinstance(result, BatchError):
            rows.append((gamma_sq, delta, "", "", "", "", 0, f"error:{result}"))
            continue
        report = circles_report(result.points, geometry)
        knn = avg_knn(result.points, truth_points, k=grid["knn_k"])
        rows.append(
            (
                gamma_sq,
                delta,
                report.minority_fraction,
                report.majority_fraction,
                report.off_manifold_fraction,
                float(knn.avg_knn_values.mean()),
                report.n,
                "ok",
            )
        )

    comments = config_comments("ablation", cfg)
    comments.append(("eps_manifold", _fmt(geometry.eps_manifold)))
    comments.append(("field", field.tag))
    write_csv(
        out / "ablation.csv",
        comments,
        [
            "gamma_sq",
            "delta_skip",
            "minority_fraction",
            "majority_fraction",
            "off_manifold_fraction",
            "avg_knn_mean",
            "n",
            "status",
        ],
        rows,
    )
    return 0


COMMANDS = {
    "verify-gaussian": cmd_verify_gaussian,
    "corollary-scan": cmd_corollary_scan,
    "toy2d": cmd_toy2d,
    "trajectory": cmd_trajectory,
    "contraction": cmd_contraction,
    "spectral": cmd_spectral,
    "ablation": cmd_ablation,
}


class _Parser(argparse.ArgumentParser):
    """Maps usage errors to exit status 1; 2 is reserved for failed checks."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _Parser(
        prog="bnslab",
        description="Boost-and-Skip diffusion sampling experiments",
    )
    parser.add_argument("subcommand", choices=sorted(COMMANDS))
    parser.add_argument("--config", default=None, help="key = value config file")
    parser.add_argument("--out", required=True, help="output directory")
    args, extra = parser.parse_known_args(argv)

    try:
        cfg = load_config(args.subcommand, args.config, extra)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.subcommand](cfg, out)
    except CheckFailure as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, TrainingError, BatchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
