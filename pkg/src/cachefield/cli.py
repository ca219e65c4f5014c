"""``cachefield`` command line: JSON config in, CSV/JSON results out."""
from __future__ import annotations

import argparse
import copy
import json
import sys
from typing import Any

import jsonschema
import numpy as np

from . import io
from .field import field_snapshot, replacement_activity_metric, sample_domain, stf
from .schemes import LRU, RR, LP, TLP, conditional_matrix, lru_recency_profile, overall_matrix, scheme_from_config, scheme_label
from .sim import CacheInstance, ccp_trajectory, empirical_stf, empirical_theta, run_trace, zipf_popularity
from .states import enumerate_states, hit_probability, scp_to_ccp, sorted_space
from .steady import (
    ConvergenceError,
    convergence_bound,
    spectral_report,
    steady_state_power,
    steady_state_rr_closed_form,
    verify_balance_lru,
    verify_balance_rr,
)

COMMANDS = ("states", "matrix", "field", "steady", "spectrum", "simulate", "ccp", "compare")

_num = {"type": "number"}
_pos_int = {"type": "integer", "minimum": 1}
_prob_vec = {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 2}

_POPULARITY = {
    "oneOf": [
        {
            "type": "object",
            "properties": {"kind": {"const": "zipf"}, "exponent": {"type": "number", "minimum": 0}},
            "required": ["kind", "exponent"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {"kind": {"const": "explicit"}, "values": _prob_vec},
            "required": ["kind", "values"],
            "additionalProperties": False,
        },
    ]
}

_BASE = {
    "n_contents": {"type": "integer", "minimum": 2},
    "cache_size": _pos_int,
    "seed": {"type": "integer", "minimum": 0},
    "threads": _pos_int,
}
_POP = {"popularity": _POPULARITY}
_SCHEME = {
    "scheme": {"enum": ["rr", "lp", "tlp", "lru"]},
    "phi": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
    "alpha": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
    "variant": {"enum": ["A", "P", "a", "p"]},
    "predicted": _prob_vec,
}
_POINTS = {
    "oneOf": [
        {
            "type": "object",
            "properties": {"kind": {"const": "grid"}, "step": {"type": "number", "exclusiveMinimum": 0}},
            "required": ["kind"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {"kind": {"const": "random"}, "count": _pos_int},
            "required": ["kind"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {"kind": {"const": "explicit"}, "values": {"type": "array", "items": {"type": "array", "items": _num}, "minItems": 1}},
            "required": ["kind", "values"],
            "additionalProperties": False,
        },
    ]
}


def _schema(props: dict, required: list[str]) -> dict:
    return {"type": "object", "properties": props, "required": required, "additionalProperties": False}


SCHEMAS = {
    "states": _schema({**_BASE, "output": {"enum": ["states", "cache_matrix"]}}, ["n_contents", "cache_size"]),
    "matrix": _schema(
        {**_BASE, **_POP, **_SCHEME, "content": _pos_int, "sort_states": {"type": "boolean"}},
        ["cache_size", "popularity", "scheme"],
    ),
    "field": _schema(
        {**_BASE, **_POP, **_SCHEME, "points": _POINTS, "decompose": {"type": "boolean"}, "sort_states": {"type": "boolean"}},
        ["cache_size", "popularity", "scheme"],
    ),
    "steady": _schema(
        {**_BASE, **_POP, **_SCHEME, "tol": {"type": "number", "exclusiveMinimum": 0}, "max_iter": _pos_int, "sort_states": {"type": "boolean"}},
        ["cache_size", "popularity", "scheme"],
    ),
    "spectrum": _schema(
        {
            **_BASE,
            **_POP,
            **_SCHEME,
            "sort_states": {"type": "boolean"},
            "bound_t": {"type": "array", "items": {"type": "integer", "minimum": 0}},
            "eta0": {"type": "array", "items": _num},
        },
        ["cache_size", "popularity", "scheme"],
    ),
    "simulate": _schema(
        {
            **_BASE,
            **_POP,
            **_SCHEME,
            "task": {"enum": ["trace", "theta", "stf"]},
            "initial_cache": {"type": "array", "items": _pos_int},
            "n_requests": _pos_int,
            "samples_per_state": _pos_int,
            "recency": {"enum": ["profile", "trace"]},
            "sampling": {"enum": ["stratified", "iid"]},
            "mode": {"enum": ["categorical", "trace"]},
            "eta": {"type": "array", "items": _num},
            "n_realizations": _pos_int,
        },
        ["cache_size", "popularity", "scheme", "task"],
    ),
    "ccp": _schema(
        {
            **_BASE,
            **_POP,
            **_SCHEME,
            "n_rounds": _pos_int,
            "n_requests": _pos_int,
            "tracked_contents": {"type": "array", "items": _pos_int},
        },
        ["cache_size", "popularity", "scheme", "n_rounds", "n_requests"],
    ),
    "compare": _schema({**_BASE, **_POP, "phi": _SCHEME["phi"]}, ["cache_size", "popularity"]),
}


class ConfigError(ValueError):
    """Invalid configuration or command line overrides."""


# ---------------------------------------------------------------------------
# config handling


def apply_overrides(cfg: dict, overrides: list[str]) -> dict:
    """Apply ``key=value`` pairs; dotted keys descend into objects, values parse as JSON."""
    cfg = copy.deepcopy(cfg)
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = cfg
        parts = key.split(".")
        for p in parts[:-1]:
            nxt = node.setdefault(p, {})
            if not isinstance(nxt, dict):
                raise ConfigError(f"--set {key}: {p!r} is not an object")
            node = nxt
        node[parts[-1]] = value
    return cfg


def validate_config(command: str, cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, SCHEMAS[command])
    except jsonschema.ValidationError as exc:
        where = "/".join(map(str, exc.absolute_path)) or "<root>"
        raise ConfigError(f"invalid {command} config at {where}: {exc.message}") from None


def popularity_from_config(cfg: dict) -> np.ndarray:
    pop = cfg["popularity"]
    if pop["kind"] == "zipf":
        if "n_contents" not in cfg:
            raise ConfigError("zipf popularity needs n_contents")
        return zipf_popularity(cfg["n_contents"], pop["exponent"])
    v = np.asarray(pop["values"], dtype=float)
    if "n_contents" in cfg and cfg["n_contents"] != v.size:
        raise ConfigError(f"n_contents={cfg['n_contents']} but popularity has {v.size} entries")
    return v


def _setup(cfg: dict):
    v = popularity_from_config(cfg)
    space = enumerate_states(v.size, cfg["cache_size"])
    scheme = scheme_from_config(cfg) if "scheme" in cfg else None
    if scheme is not None:
        scheme.validate(space, v)
        if cfg.get("sort_states"):
            pred = scheme.predicted if isinstance(scheme, (LP, TLP)) and scheme.predicted is not None else v
            space = sorted_space(space, pred)
    return v, space, scheme


def _meta(cfg: dict, space, scheme, v) -> dict:
    m = {"n_contents": space.n_contents, "cache_size": space.cache_size, "popularity": v}
    if scheme is not None:
        m["scheme"] = scheme_label(scheme)
        m.update({k: val for k, val in scheme.to_config().items() if k != "scheme"})
    return m


def _steady(scheme, space, v, theta, tol=1e-12, max_iter=10_000_000):
    if isinstance(scheme, (LP, TLP)):
        # the absorbing state is the one caching the L most popular contents
        pred = scheme.predicted if scheme.predicted is not None else v
        top = np.argsort(-np.asarray(pred), kind="stable")[: space.cache_size] + 1
        x = np.zeros(space.n_states)
        x[space.index(top)] = 1.0
        return x, {"method": "absorbing-analytic", "iterations": 0, "residual": float(np.max(np.abs(theta @ x - x)))}
    res = steady_state_power(theta, tol=tol, max_iter=max_iter)
    return res.eta_star, {"method": res.method, "iterations": res.iterations, "residual": res.residual}


# ---------------------------------------------------------------------------
# commands; each returns (csv_text, json_text)


def cmd_states(cfg: dict):
    space = enumerate_states(cfg["n_contents"], cfg["cache_size"])
    if cfg.get("output", "states") == "cache_matrix":
        cs = space.matrix
        return io.cache_matrix_csv(space), io.dumps_json({"n_contents": space.n_contents, "n_states": space.n_states, "cache_matrix": cs.astype(int)})
    return io.states_csv(space), io.states_json(space)


def cmd_matrix(cfg: dict):
    v, space, scheme = _setup(cfg)
    theta = conditional_matrix(scheme, space, v, cfg["content"]) if "content" in cfg else overall_matrix(scheme, space, v)
    return io.matrix_csv(theta), io.matrix_json(theta)


def cmd_field(cfg: dict):
    v, space, scheme = _setup(cfg)
    pts_cfg = cfg.get("points", {"kind": "grid" if space.n_states == 3 else "random"})
    if pts_cfg["kind"] == "grid":
        pts = sample_domain(space.n_states, 1, grid_step=pts_cfg.get("step", 0.1))
    elif pts_cfg["kind"] == "random":
        pts = sample_domain(space.n_states, pts_cfg.get("count", 1000), rng_seed=cfg.get("seed", 0))
    else:
        pts = np.array(pts_cfg["values"], dtype=float)
    theta = overall_matrix(scheme, space, v)
    eta_star, _ = _steady(scheme, space, v, theta)
    samples = field_snapshot(scheme, space, v, pts, decompose=cfg.get("decompose", False))
    meta = _meta(cfg, space, scheme, v) | {"states": [list(s) for s in space.states], "steady_state": eta_star}
    return io.field_csv(samples, space.n_contents, meta), io.field_json(samples, meta)


def cmd_steady(cfg: dict):
    v, space, scheme = _setup(cfg)
    theta = overall_matrix(scheme, space, v)
    eta, info = _steady(scheme, space, v, theta, cfg.get("tol", 1e-12), cfg.get("max_iter", 10_000_000))
    out = _meta(cfg, space, scheme, v) | {"eta_star": eta} | info
    if isinstance(scheme, RR):
        closed = steady_state_rr_closed_form(space, v)
        out["closed_form"] = closed.eta_star
        out["agreement_max_abs_diff"] = float(np.max(np.abs(closed.eta_star - eta)))
        out["agreement"] = out["agreement_max_abs_diff"] <= 1e-9
        out["balance_residual"] = float(np.max(np.abs(verify_balance_rr(space, v, eta))))
    elif isinstance(scheme, LRU):
        out["balance_residual"] = float(np.max(np.abs(verify_balance_lru(space, v, lru_recency_profile(space, v), eta))))
    else:
        out["power_iteration_check"] = _power_check(theta, eta)
    ccp = scp_to_ccp(space, eta)
    out["ccp"] = ccp
    out["hit_probability"] = hit_probability(v, ccp)
    out["replacement_activity"] = replacement_activity_metric(scheme, space, v, eta)
    rows = [(k, " ".join(map(str, s)), float(eta[k])) for k, s in enumerate(space.states)]
    return io._csv(rows, ["state", "contents", "eta_star"], {k: out[k] for k in ("scheme", "method", "residual")}), io.dumps_json(out)


def _power_check(theta, eta):
    try:
        res = steady_state_power(theta, max_iter=200_000, tol=1e-12)
    except ConvergenceError as exc:
        return {"converged": False, "iterations": exc.iterations, "max_abs_diff": float(np.max(np.abs(exc.last - eta)))}
    return {"converged": True, "iterations": res.iterations, "max_abs_diff": float(np.max(np.abs(res.eta_star - eta)))}


def cmd_spectrum(cfg: dict):
    v, space, scheme = _setup(cfg)
    theta = overall_matrix(scheme, space, v)
    rep = spectral_report(theta, scheme, space, v)
    out = _meta(cfg, space, scheme, v) | rep.to_dict()
    if "bound_t" in cfg:
        eta0 = np.asarray(cfg.get("eta0", np.full(space.n_states, 1.0 / space.n_states)), dtype=float)
        eta_star, _ = _steady(scheme, space, v, theta)
        checks = [convergence_bound(theta, eta0, t, eta_star, rep.second_largest_numeric) for t in cfg["bound_t"]]
        out["bound"] = [{"t": c.t, "bound": c.bound, "actual": c.actual, "holds": c.holds} for c in checks]
    rows = [(i, float(z.real), float(z.imag), float(abs(z))) for i, z in enumerate(rep.eigenvalues)]
    return io._csv(rows, ["rank", "real", "imag", "modulus"], {"second_largest_numeric": rep.second_largest_numeric, "closed_form": rep.second_largest_closed_form}), io.dumps_json(out)


def cmd_simulate(cfg: dict, threads: int = 1):
    v, space, scheme = _setup(cfg)
    seed = cfg.get("seed", 0)
    meta = _meta(cfg, space, scheme, v) | {"task": cfg["task"], "seed": seed}
    task = cfg["task"]
    if task == "trace":
        init = cfg.get("initial_cache", list(space.states[0]))
        cache = CacheInstance.from_contents(init, space.cache_size, isinstance(scheme, LRU))
        traj = run_trace(scheme, v, cache, cfg.get("n_requests", 2000), seed, space)
        meta["hit_ratio"] = traj.hit_ratio
        return io.trajectory_csv(traj, meta), io.trajectory_json(traj, meta)
    if task == "theta":
        est = empirical_theta(
            scheme, v, space, cfg.get("samples_per_state", 10_000), seed, cfg.get("recency", "profile"), cfg.get("sampling", "stratified"), threads
        )
        return io.matrix_csv(est.theta), io.dumps_json(meta | {"theta": est.theta, "stderr": est.stderr})
    eta = np.asarray(cfg.get("eta", np.full(space.n_states, 1.0 / space.n_states)), dtype=float)
    mode = cfg.get("mode", "categorical")
    u_hat = empirical_stf(scheme, v, space, eta, cfg.get("n_realizations", 1000), cfg.get("n_requests", 1000), seed, mode, cfg.get("sampling", "stratified"))
    u = stf(overall_matrix(scheme, space, v), eta)
    rows = [(k, float(eta[k]), float(u_hat[k]), float(u[k])) for k in range(space.n_states)]
    return io._csv(rows, ["state", "eta", "u_empirical", "u_analytic"], meta), io.dumps_json(meta | {"eta": eta, "u_empirical": u_hat, "u_analytic": u})


def cmd_ccp(cfg: dict):
    v = popularity_from_config(cfg)
    scheme = scheme_from_config(cfg)
    if isinstance(scheme, RR) and scheme.phi * cfg["cache_size"] > 1 + 1e-12:
        raise ConfigError(f"RR phi={scheme.phi} exceeds 1/L")
    est = ccp_trajectory(scheme, v, cfg["cache_size"], cfg["n_rounds"], cfg["n_requests"], cfg.get("tracked_contents"), cfg.get("seed", 0))
    meta = {"scheme": scheme_label(scheme), **{k: x for k, x in scheme.to_config().items() if k != "scheme"}}
    meta |= {"n_contents": v.size, "cache_size": cfg["cache_size"], "n_rounds": cfg["n_rounds"], "seed": cfg.get("seed", 0)}
    return io.ccp_csv(est, meta), io.ccp_json(est, meta)


def cmd_compare(cfg: dict):
    v = popularity_from_config(cfg)
    space = enumerate_states(v.size, cfg["cache_size"])
    rr = RR(cfg.get("phi", 1.0 / space.cache_size))
    rr.validate(space, v)
    eta_rr = steady_state_rr_closed_form(space, v).eta_star
    theta_lru = overall_matrix(LRU(), space, v)
    eta_lru = steady_state_power(theta_lru).eta_star
    u_lru_at_rr = stf(theta_lru, eta_rr)
    out = {
        "n_contents": space.n_contents,
        "cache_size": space.cache_size,
        "popularity": v,
        "states": [list(s) for s in space.states],
        "eta_rr": eta_rr,
        "eta_lru": eta_lru,
        "delta": eta_lru - eta_rr,
        "lru_field_at_rr_steady_state": u_lru_at_rr,
        "ccp_rr": scp_to_ccp(space, eta_rr),
        "ccp_lru": scp_to_ccp(space, eta_lru),
        "hit_probability_rr": hit_probability(v, scp_to_ccp(space, eta_rr)),
        "hit_probability_lru": hit_probability(v, scp_to_ccp(space, eta_lru)),
    }
    rows = [
        (k, " ".join(map(str, s)), float(eta_rr[k]), float(eta_lru[k]), float(eta_lru[k] - eta_rr[k]), float(u_lru_at_rr[k]))
        for k, s in enumerate(space.states)
    ]
    return io._csv(rows, ["state", "contents", "eta_rr", "eta_lru", "delta", "lru_field_at_rr"]), io.dumps_json(out)


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cachefield", description="State-transition analysis of cache replacement schemes.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--out", default="-", help="output path ('-' for stdout)")
    p.add_argument("--format", choices=("csv", "json"), default="json")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--threads", type=int, default=1, help="worker threads for per-state sampling")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE", help="override a config entry")
    p.add_argument("--decompose", action="store_true", help="field: add per-content columns")
    p.add_argument("--mode", choices=("categorical", "trace"), help="simulate stf: realisation mode")
    return p


def run(argv: list[str] | None = None) -> None:
    args = build_parser().parse_args(argv)
    cfg: dict[str, Any] = {}
    if args.config:
        try:
            cfg = json.loads(io.read_text(args.config))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: not valid JSON ({exc})") from None
        if not isinstance(cfg, dict):
            raise ConfigError(f"{args.config}: config must be a JSON object")
    cfg = apply_overrides(cfg, args.overrides)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.decompose:
        cfg["decompose"] = True
    if args.mode:
        cfg["mode"] = args.mode
    if args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    validate_config(args.command, cfg)
    handler = globals()[f"cmd_{args.command}"]
    csv_text, json_text = handler(cfg, args.threads) if args.command == "simulate" else handler(cfg)
    io.write_text(args.out, csv_text if args.format == "csv" else json_text)


def main(argv: list[str] | None = None) -> int:
    try:
        run(argv)
    except SystemExit as exc:  # argparse
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001 - every failure becomes a diagnostic and exit code
        print(f"cachefield: error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, ConfigError) else 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
