"""Batch pipeline driver: simulate | estimate | price | verify.

Each command reads a JSON config (flags override single entries), runs the
corresponding pipeline and writes one deterministic JSON report. Exit
codes: 0 success, 2 missing/invalid input or config, 3 grid/mesh too coarse
for the requested ladder, 4 pricing refused because the neutrality verdict
is negative and --force was not given.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from . import __version__
from ._backend import backend_name
from .errors import (
    ConfigError,
    GridMismatch,
    IdentityViolation,
    InsufficientGrid,
    MalformedInput,
    MeshTooCoarse,
    PositivityViolation,
    RnLevyError,
)
from .fluctuations import (
    DEFAULT_EPS_GRID,
    DEFAULT_TAU_GRID,
    calm_diagnostic,
    cluster_detect,
    compute_fluctuations,
)
from .levy_inference import (
    HorizonParams,
    LevyTripleEstimate,
    estimate_triple,
    neutrality_check,
)
from .market_data import (
    PartitionLadder,
    RateCurve,
    build_ladder,
    estimate_mean_function,
    ingest_panel,
    prices_densities,
    write_panel_csv,
)
from .pricing import CallSpec, mixture_price, price_call, price_call_calm
from .report import config_hash, write_report
from .rn_measure import build_bundle, verify_identities
from .sim_lab import (
    SimSpec,
    gbm_theory_check,
    gen_panel,
    lambda_distribution_check,
    qmd_diagnostic,
    trader_lambda_check,
)

ALLOWED_KEYS = {
    "sim",
    "ladder",
    "mode",
    "mean_method",
    "eps_grid",
    "tau_grid",
    "calm_threshold_frac",
    "resolution_factor",
    "tol_neutrality",
    "bootstrap_resamples",
    "bootstrap_seed",
    "normalization",
    "atom_floor_frac",
    "max_term_frac",
    "atom_bin_width",
    "call",
    "rate",
    "triple",
    "identity_tol",
    "cluster_subsequences",
    "cluster_tol",
    "n_lambda_samples",
    "qmd_deltas",
    "seed",
    "input",
    "output",
    "force",
}
REQUIRED = {
    "simulate": {"sim"},
    "estimate": set(),  # input arrives via --input or config
    "price": {"call", "rate"},
    "verify": {"sim"},
}
SIM_KEYS = {
    "model",
    "s0",
    "mu",
    "sigma",
    "jump_intensity",
    "jump_mean",
    "jump_sd",
    "t0",
    "T",
    "n_steps",
    "n_paths",
    "seed",
}


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return cfg


def _validate_config(cfg: dict, command: str) -> None:
    unknown = set(cfg) - ALLOWED_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    missing = REQUIRED[command] - set(cfg)
    if missing:
        raise ConfigError(f"{command} requires config keys: {sorted(missing)}")
    if "sim" in cfg:
        bad = set(cfg["sim"]) - SIM_KEYS
        if bad:
            raise ConfigError(f"unknown sim keys: {sorted(bad)}")


def _sim_spec(cfg: dict) -> SimSpec:
    sim = dict(cfg["sim"])
    t0 = float(sim.pop("t0", 0.0))
    T = float(sim.pop("T", 1.0))
    n_steps = int(sim.pop("n_steps", 256))
    grid = np.linspace(t0, T, n_steps + 1)
    return SimSpec(
        model=sim.get("model", "gbm"),
        s0=float(sim.get("s0", 100.0)),
        mu=float(sim.get("mu", 0.0)),
        sigma=float(sim.get("sigma", 0.2)),
        grid=grid,
        n_paths=int(sim.get("n_paths", 1)),
        seed=int(sim.get("seed", 0)),
        jump_intensity=float(sim.get("jump_intensity", 0.0)),
        jump_mean=float(sim.get("jump_mean", 0.0)),
        jump_sd=float(sim.get("jump_sd", 0.0)),
    )


def _ladder(cfg: dict, grid) -> PartitionLadder:
    spec = cfg.get("ladder", {"scheme": "dyadic", "n_levels": 3})
    scheme = spec.get("scheme", "dyadic")
    if "levels" in spec:
        return PartitionLadder.from_counts(grid, spec["levels"], scheme=scheme)
    return build_ladder(grid, int(spec.get("n_levels", 3)), scheme=scheme)


def _rate_curve(cfg: dict, t0: float, T: float) -> RateCurve:
    rate = cfg.get("rate", 0.0)
    if isinstance(rate, dict):
        return RateCurve(segments=tuple(tuple(seg) for seg in rate["segments"]))
    return RateCurve.constant(float(rate), t0, T)


def _estimate_payload(panel, cfg: dict) -> dict:
    mode = panel.mode
    mean_method = cfg.get(
        "mean_method",
        "empirical-ensemble" if mode == "ensemble" else "exponential-trend",
    )
    m = estimate_mean_function(panel, mean_method)
    dp = prices_densities(panel, m)
    ladder = _ladder(cfg, panel.grid)
    eps_grid = tuple(cfg.get("eps_grid", DEFAULT_EPS_GRID))
    tau_grid = tuple(cfg.get("tau_grid", DEFAULT_TAU_GRID))
    kwargs = {}
    if "atom_bin_width" in cfg:
        kwargs["bin_width"] = float(cfg["atom_bin_width"])
    stats = [
        compute_fluctuations(dp, ladder.levels[i], tau_grid, eps_grid, return_arrays=False, **kwargs)[1]
        for i in range(ladder.n_levels)
    ]
    horizon = dp.horizon
    triple, hp = estimate_triple(
        stats,
        ladder,
        horizon,
        normalization=cfg.get("normalization", "levy-mass"),
        max_term_frac=float(cfg.get("max_term_frac", 0.05)),
        atom_floor_frac=float(cfg.get("atom_floor_frac", 1e-3)),
        bootstrap_resamples=int(cfg.get("bootstrap_resamples", 200)),
        bootstrap_seed=int(cfg.get("bootstrap_seed", 0)),
    )
    nr = neutrality_check(triple, horizon, cfg.get("tol_neutrality"))
    calm = calm_diagnostic(
        stats,
        threshold_frac=float(cfg.get("calm_threshold_frac", 0.02)),
        resolution_factor=float(cfg.get("resolution_factor", 3.2)),
    )
    clusters_payload = None
    if cfg.get("cluster_subsequences"):
        triples = [triple]
        fine = ladder.n_levels - 1
        for phase in (0, 1):
            sub = ladder.thin(fine, phase=phase)
            if sub.size - 1 < 2:
                continue
            sub_stats = [
                compute_fluctuations(dp, lv, tau_grid, eps_grid, return_arrays=False, **kwargs)[1]
                for lv in (ladder.levels[fine - 1], sub)
            ] if fine >= 1 else None
            if sub_stats is None:
                continue
            t_sub, _ = estimate_triple(
                sub_stats,
                ladder,
                horizon,
                normalization=triple.normalization,
                max_term_frac=float(cfg.get("max_term_frac", 0.05)),
                atom_floor_frac=float(cfg.get("atom_floor_frac", 1e-3)),
                bootstrap_resamples=0,
            )
            triples.append(t_sub)
        cs = cluster_detect(triples, float(cfg.get("cluster_tol", 1e-3)))
        clusters_payload = [
            {
                "weight": c.weight,
                "members": list(c.members),
                "mu1": c.triple.mu1,
                "sigma1_sq": c.triple.sigma1_sq,
                "n_atoms": len(c.triple.atoms),
            }
            for c in cs.clusters
        ]
    flags = []
    if any(s.single_path for s in stats):
        flags.append("single-path-tilt: realized sums substituted for tilted expectations")
    if mean_method == "exponential-trend":
        flags.append("mean-function: exponential trend fitted from one path (heuristic)")
    payload = {
        "schema": "rnlevy/estimate/v1",
        "mode": mode,
        "horizon": horizon,
        "ln_a": dp.ln_a,
        "mean_function": {
            "source": m.source,
            "m_t0": float(m(panel.grid[0])),
            "m_T": float(m(panel.grid[-1])),
        },
        "levels": [
            {
                "k": s.k,
                "mesh": s.mesh,
                "s1": s.s1,
                "s2": s.s2,
                "max_term": s.max_term,
                "split": s.split,
                "s2_core": s.s2_core,
                "s2_trunc": {repr(float(t)): float(v) for t, v in zip(s.tau_grid, s.s2_trunc)},
                "tail": {repr(float(e)): float(v) for e, v in zip(s.eps_grid, s.tail)},
            }
            for s in stats
        ],
        "triple": {
            "mu1": triple.mu1,
            "sigma1_sq": triple.sigma1_sq,
            "atoms": [{"y": y, "w": w} for y, w in triple.atoms],
            "e2_unit": triple.e2_unit,
            "normalization": triple.normalization,
            "stderr": triple.stderr,
        },
        "horizon_params": {
            "mu_h": hp.mu_h,
            "sigma_sq_h": hp.sigma_sq_h,
            "e2_h": hp.e2_h,
            "atoms_h": [{"y": y, "w": w} for y, w in hp.atoms_h],
        },
        "neutrality": {
            "residual_unit": nr.residual_unit,
            "residual_h": nr.residual_h,
            "tolerance": nr.tolerance,
            "supported": nr.supported,
            "verdict": nr.verdict,
            "stderr_residual_h": nr.stderr_residual_h,
            "interpretation": nr.interpretation,
        },
        "calm": {
            "verdict": calm.verdict,
            "threshold": calm.threshold,
            "eps_used": list(calm.eps_used),
            "eps_unresolved": list(calm.eps_unresolved),
            "trajectories": {repr(float(e)): v for e, v in calm.trajectories.items()},
            "meshes": list(calm.meshes),
        },
        "clusters": clusters_payload
        or [{"weight": 1.0, "members": [0], "mu1": triple.mu1, "sigma1_sq": triple.sigma1_sq, "n_atoms": len(triple.atoms)}],
        "cluster_weights_provisional": True,
        "flags": flags,
    }
    return payload


def _finalize(payload: dict, cfg: dict, command: str) -> dict:
    payload["tool_version"] = __version__
    payload["config_hash"] = config_hash(cfg)
    payload["command"] = command
    payload["backend"] = backend_name()
    return payload


def cmd_simulate(cfg: dict, out_path: str) -> int:
    spec = _sim_spec(cfg)
    panel = gen_panel(spec)
    write_panel_csv(panel, out_path)
    print(f"wrote {panel.n_paths} paths x {panel.grid.size} times to {out_path}")
    return 0


def cmd_estimate(cfg: dict, in_path: str, out_path: str) -> int:
    panel = ingest_panel(in_path, mode=cfg.get("mode", "ensemble"))
    payload = _finalize(_estimate_payload(panel, cfg), cfg, "estimate")
    write_report(out_path, payload)
    verdict = payload["neutrality"]["verdict"]
    print(f"estimate: residual_h={payload['neutrality']['residual_h']:.3e} ({verdict}); "
          f"calm={payload['calm']['verdict']}; report -> {out_path}")
    return 0


def _triple_from_cfg(cfg: dict):
    t = cfg["triple"]
    return LevyTripleEstimate(
        mu1=float(t["mu1"]),
        sigma1_sq=float(t["sigma1_sq"]),
        atoms=tuple((float(y), float(w)) for y, w in t.get("atoms", [])),
        e2_unit=float(
            t.get(
                "e2_unit",
                sum(float(w) * float(y) ** 2 for y, w in t.get("atoms", [])),
            )
        ),
        normalization=t.get("normalization", "levy-mass"),
    )


def _triple_from_report(report: dict):
    t = report["triple"]
    return LevyTripleEstimate(
        mu1=float(t["mu1"]),
        sigma1_sq=float(t["sigma1_sq"]),
        atoms=tuple((float(a["y"]), float(a["w"])) for a in t["atoms"]),
        e2_unit=float(t["e2_unit"]),
        normalization=t["normalization"],
    )


def cmd_price(cfg: dict, in_path: str | None, out_path: str, force: bool) -> int:
    call = cfg["call"]
    t0 = float(call.get("t0", 0.0))
    T = float(call["expiry"])
    rc = _rate_curve(cfg, t0, T)
    spec = CallSpec(
        s_t0=float(call["spot"]), strike=float(call["strike"]), rate_curve=rc, t0=t0, T=T
    )
    horizon = T - t0
    rho = spec.rho

    report = None
    if in_path is not None:
        try:
            with open(in_path, "r", encoding="utf-8") as fh:
                report = json.load(fh)
        except FileNotFoundError:
            raise MalformedInput(f"estimate report not found: {in_path}") from None
        except json.JSONDecodeError as exc:
            raise MalformedInput(f"estimate report is not valid JSON: {exc}") from None
        triple = _triple_from_report(report)
        nr = neutrality_check(
            triple, horizon, cfg.get("tol_neutrality", report["neutrality"]["tolerance"])
        )
        calm_verdict = report["calm"]["verdict"]
        ln_a = float(report["ln_a"]) if abs(float(report["horizon"]) - horizon) < 1e-12 else rho
    elif "triple" in cfg:
        triple = _triple_from_cfg(cfg)
        nr = neutrality_check(triple, horizon, cfg.get("tol_neutrality"))
        calm_verdict = None
        ln_a = rho
    else:
        raise ConfigError("price needs --input (estimate report) or a 'triple' config entry")

    if not nr.supported and not force:
        print(
            "pricing refused: neutrality verdict negative "
            f"(residual_h={nr.residual_h:.3e} > tol={nr.tolerance:.1e}); re-run with --force",
            file=sys.stderr,
        )
        return 4

    hp = HorizonParams.from_triple(triple, horizon)
    bundle = build_bundle(hp, nr, ln_a, rho)
    identity = verify_identities(bundle, tol=float(cfg.get("identity_tol", 1e-6)))
    if calm_verdict == "calm" and not triple.atoms:
        quote = price_call_calm(math.sqrt(hp.sigma_sq_h), spec)
        quote_dict = quote.to_dict()
        quote_dict["supported"] = nr.supported
        if not nr.supported:
            quote_dict["watermark"] = "not supported by prices"
        quote_dict["neutrality"] = {
            "residual_h": nr.residual_h,
            "verdict": nr.verdict,
            "supported": nr.supported,
            "tolerance": nr.tolerance,
        }
    else:
        quote = price_call(bundle, spec, preflight=False)
        quote_dict = quote.to_dict()
    payload = _finalize(
        {
            "schema": "rnlevy/price/v1",
            "spec": {
                "spot": spec.s_t0,
                "strike": spec.strike,
                "t0": t0,
                "expiry": T,
                "rho": rho,
            },
            "ln_a": ln_a,
            "quote": quote_dict,
            "laws": {
                "q0": bundle.q0.to_dict(),
                "q": bundle.q.to_dict(),
                "q_bu": bundle.q_bu.to_dict(),
                "q_star": bundle.q_star.to_dict(),
            },
            "identity": {
                "max_dev_martingale": identity.max_dev_martingale,
                "max_dev_tilt": identity.max_dev_tilt,
                "max_dev_tail": identity.max_dev_tail,
                "tol": identity.tol,
            },
        },
        cfg,
        "price",
    )
    write_report(out_path, payload)
    print(f"price: C={quote_dict['C']:.6f} ({quote_dict['method']}); report -> {out_path}")
    return 0


def cmd_verify(cfg: dict, out_path: str) -> int:
    spec = _sim_spec(cfg)
    panel = gen_panel(spec)
    est = _estimate_payload(panel, cfg)
    ladder = _ladder(cfg, panel.grid)
    horizon = float(est["horizon"])
    triple = _triple_from_report(est)
    nr = neutrality_check(triple, horizon, cfg.get("tol_neutrality"))
    hp = HorizonParams.from_triple(triple, horizon)
    rho = math.log(
        float(
            np.exp(
                sum(
                    r * (min(spec.grid[-1], b) - max(spec.grid[0], a))
                    for a, b, r in _rate_curve(cfg, spec.grid[0], spec.grid[-1]).segments
                )
            )
        )
    )
    bundle = build_bundle(hp, nr, est["ln_a"], rho)
    identity = verify_identities(bundle, tol=float(cfg.get("identity_tol", 1e-6)), raise_on_fail=False)

    m = estimate_mean_function(panel, "empirical-ensemble" if panel.mode == "ensemble" else "exponential-trend")
    dp = prices_densities(panel, m)
    checks: dict = {
        "identity": {
            "max_dev_martingale": identity.max_dev_martingale,
            "max_dev_tilt": identity.max_dev_tilt,
            "max_dev_tail": identity.max_dev_tail,
            "tol": identity.tol,
        }
    }
    if spec.model == "gbm":
        rep = gbm_theory_check(spec, ladder, panel=panel)
        checks["gbm_theory"] = {
            "s2_limit": rep.s2_limit,
            "levels": [
                {
                    "k": lv["k"],
                    "mean_emp": lv["mean_emp"],
                    "mean_closed": lv["mean_closed"],
                    "mean_se": lv["mean_se"],
                    "s2_emp": lv["s2_emp"],
                    "s2_closed": lv["s2_closed"],
                    "s2_se": lv["s2_se"],
                    "within_3se": rep.level_ok(i),
                }
                for i, lv in enumerate(rep.levels)
            ],
        }
        ks = lambda_distribution_check(panel, ladder, bundle.q)
        checks["lambda_ks"] = {
            "statistic": ks.statistic,
            "critical": ks.critical,
            "alpha": ks.alpha,
            "passed": ks.passed,
        }
    else:
        n_samp = int(cfg.get("n_lambda_samples", 4000))
        fine = ladder.levels[-1]
        ks_default = trader_lambda_check(dp, fine, bundle.q0, n_samples=n_samp, seed=spec.seed + 1)
        t_int, _ = estimate_triple(
            [
                compute_fluctuations(dp, lv, return_arrays=False)[1]
                for lv in ladder.levels
            ],
            ladder,
            horizon,
            normalization="intensity",
            bootstrap_resamples=0,
        )
        hp_int = HorizonParams.from_triple(t_int, horizon)
        bundle_int = build_bundle(hp_int, None, est["ln_a"], rho)
        ks_int = trader_lambda_check(dp, fine, bundle_int.q0, n_samples=n_samp, seed=spec.seed + 1)
        checks["trader_lambda_ks"] = {
            "levy-mass": {"statistic": ks_default.statistic, "critical": ks_default.critical},
            "intensity": {"statistic": ks_int.statistic, "critical": ks_int.critical},
            "n_samples": n_samp,
            "note": "constructed-vs-empirical fit under the trader measure; "
            "smaller distance identifies the better jump normalization",
        }
    deltas = cfg.get("qmd_deltas")
    if deltas is None:
        base = float(panel.grid[1] - panel.grid[0])
        deltas = [base * m_ for m_ in (8, 4, 2, 1) if base * m_ <= panel.horizon / 4]
    qmd = qmd_diagnostic(dp, deltas)
    checks["qmd"] = {
        "deltas": list(qmd.deltas),
        "sup_ratio": list(qmd.sup_ratio),
        "derivative_sq_sup": qmd.derivative_sq_sup,
        "verdict": qmd.verdict,
    }
    payload = _finalize(
        {"schema": "rnlevy/verify/v1", "estimate": est, "checks": checks}, cfg, "verify"
    )
    write_report(out_path, payload)
    print(f"verify: calm={est['calm']['verdict']}, qmd={qmd.verdict}; report -> {out_path}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="rnlevy",
        description="Model-free risk-neutral law estimation and call pricing",
    )
    ap.add_argument("--version", action="version", version=f"rnlevy {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("simulate", "estimate", "price", "verify"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--input", help="input CSV (estimate) or estimate report (price)")
        p.add_argument("--output", required=True, help="output file")
        p.add_argument("--seed", type=int, help="override simulation seed")
        p.add_argument("--mode", choices=["ensemble", "single"], help="panel mode")
        p.add_argument("--levels", type=int, help="number of dyadic ladder levels")
        p.add_argument("--strike", type=float, help="override call strike")
        p.add_argument("--rate", type=float, help="override constant rate")
        p.add_argument("--expiry", type=float, help="override call expiry")
        p.add_argument("--tol-neutrality", type=float, dest="tol_neutrality")
        p.add_argument("--force", action="store_true", help="price despite a negative verdict")
    return ap


def _apply_overrides(cfg: dict, args) -> dict:
    if args.seed is not None:
        cfg.setdefault("sim", {})["seed"] = args.seed
    if args.mode is not None:
        cfg["mode"] = {"single": "single-path"}.get(args.mode, args.mode)
    if args.levels is not None:
        cfg["ladder"] = {"scheme": cfg.get("ladder", {}).get("scheme", "dyadic"), "n_levels": args.levels}
    if args.strike is not None:
        cfg.setdefault("call", {})["strike"] = args.strike
    if args.expiry is not None:
        cfg.setdefault("call", {})["expiry"] = args.expiry
    if args.rate is not None:
        cfg["rate"] = args.rate
    if args.tol_neutrality is not None:
        cfg["tol_neutrality"] = args.tol_neutrality
    if args.input is not None:
        cfg["input"] = args.input
    if args.force:
        cfg["force"] = True
    return cfg


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _apply_overrides(_load_config(args.config), args)
        _validate_config(cfg, args.command)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.output)
        if args.command == "estimate":
            in_path = cfg.get("input")
            if in_path is None:
                raise ConfigError("estimate needs --input or config key 'input'")
            return cmd_estimate(cfg, in_path, args.output)
        if args.command == "price":
            return cmd_price(cfg, cfg.get("input"), args.output, bool(cfg.get("force")))
        return cmd_verify(cfg, args.output)
    except (ConfigError, MalformedInput, PositivityViolation, GridMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (InsufficientGrid, MeshTooCoarse) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except IdentityViolation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except RnLevyError as exc:  # pragma: no cover - catch-all
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
