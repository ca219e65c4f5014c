"""Readers and writers for the CSV/JSON artifacts produced by the CLI.

Every float is written with 12 significant digits so identical inputs give
byte-identical files. Each writer has a matching reader.
"""
from __future__ import annotations

import csv
import io as _io
import json
from pathlib import Path
from typing import Any

import numpy as np

from .states import StateSpace

SIG_DIGITS = 12


def fmt(x: float) -> str:
    return format(float(x), f".{SIG_DIGITS}g")


def rounded(obj: Any) -> Any:
    """Recursively round floats (and numpy scalars/arrays) for JSON output."""
    if isinstance(obj, dict):
        return {str(k): rounded(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [rounded(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return rounded(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if not np.isfinite(x) else float(fmt(x))
    return obj


def dumps_json(obj: Any) -> str:
    return json.dumps(rounded(obj), indent=2, allow_nan=False) + "\n"


def write_text(path, text: str) -> None:
    """Write ``text`` to ``path`` ('-' or None means stdout)."""
    if path is None or str(path) == "-":
        import sys

        sys.stdout.write(text)
        return
    p = Path(path)
    try:
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {p}: {exc.strerror or exc}") from exc


def read_text(path) -> str:
    p = Path(path)
    try:
        return p.read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read {p}: {exc.strerror or exc}") from exc


def _csv(rows, header=None, meta: dict | None = None) -> str:
    buf = _io.StringIO()
    if meta:
        for k, v in meta.items():
            buf.write(f"# {k}={json.dumps(rounded(v), separators=(',', ':'))}\n")
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(header)
    for r in rows:
        w.writerow([fmt(x) if isinstance(x, (float, np.floating)) else x for x in r])
    return buf.getvalue()


def _parse_csv(text: str):
    meta, body = {}, []
    for line in text.splitlines():
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition("=")
            meta[key] = json.loads(val)
        elif line:
            body.append(line)
    rows = list(csv.reader(body))
    return meta, rows[0], rows[1:]


# ---------------------------------------------------------------------------
# state spaces


def states_json(space: StateSpace) -> str:
    return dumps_json(
        {
            "n_contents": space.n_contents,
            "cache_size": space.cache_size,
            "n_states": space.n_states,
            "states": [list(s) for s in space.states],
            "neighbors": [space.neighbors(k) for k in range(space.n_states)],
        }
    )


def states_csv(space: StateSpace) -> str:
    rows = [
        (k, " ".join(map(str, s)), " ".join(map(str, space.neighbors(k)))) for k, s in enumerate(space.states)
    ]
    meta = {"n_contents": space.n_contents, "cache_size": space.cache_size}
    return _csv(rows, ["state", "contents", "neighbors"], meta)


def cache_matrix_csv(space: StateSpace) -> str:
    cs = space.matrix.astype(int)
    return _csv(([l + 1, *cs[l]] for l in range(space.n_contents)), ["content", *range(space.n_states)])


def read_states(path_or_text, fmt_: str | None = None) -> StateSpace:
    text = _load(path_or_text)
    if _looks_json(text, fmt_):
        d = json.loads(text)
        return StateSpace(d["n_contents"], d["cache_size"], d["states"])
    meta, _, rows = _parse_csv(text)
    return StateSpace(meta["n_contents"], meta["cache_size"], [[int(c) for c in r[1].split()] for r in rows])


# ---------------------------------------------------------------------------
# matrices


def matrix_csv(theta) -> str:
    theta = np.asarray(theta, dtype=float)
    return _csv(([float(x) for x in row] for row in theta))


def matrix_json(theta) -> str:
    theta = np.asarray(theta, dtype=float)
    nz = np.argwhere(theta != 0.0)
    return dumps_json({"n_states": theta.shape[0], "triplets": [[int(i), int(j), float(theta[i, j])] for i, j in nz]})


def read_matrix(path_or_text, fmt_: str | None = None) -> np.ndarray:
    text = _load(path_or_text)
    if _looks_json(text, fmt_):
        d = json.loads(text)
        out = np.zeros((d["n_states"], d["n_states"]))
        for i, j, x in d["triplets"]:
            out[i, j] = x
        return out
    return np.array([[float(x) for x in r] for r in csv.reader(text.splitlines()) if r])


# ---------------------------------------------------------------------------
# field snapshots


def _field_header(n_states: int, n_contents: int, decompose: bool) -> list[str]:
    head = ["point"] + [f"eta_{k}" for k in range(n_states)] + [f"u_{k}" for k in range(n_states)]
    if decompose:
        head += [f"u{l}_{k}" for l in range(1, n_contents + 1) for k in range(n_states)]
    return head


def field_csv(samples, n_contents: int, meta: dict) -> str:
    n = samples[0].point.size
    decompose = samples[0].decomposition is not None
    rows = []
    for i, s in enumerate(samples):
        row = [i, *map(float, s.point), *map(float, s.field)]
        if decompose:
            row += [float(x) for x in s.decomposition.reshape(-1)]
        rows.append(row)
    return _csv(rows, _field_header(n, n_contents, decompose), meta)


def field_json(samples, meta: dict) -> str:
    out = []
    for s in samples:
        d = {"eta": s.point, "u": s.field}
        if s.decomposition is not None:
            d["u_by_content"] = s.decomposition
        out.append(d)
    return dumps_json({"meta": meta, "samples": out})


def read_field(path_or_text, fmt_: str | None = None) -> dict:
    """Return ``{"meta", "eta", "u", "u_by_content"}`` with stacked arrays."""
    text = _load(path_or_text)
    if _looks_json(text, fmt_):
        d = json.loads(text)
        s = d["samples"]
        dec = np.array([x["u_by_content"] for x in s]) if s and "u_by_content" in s[0] else None
        return {"meta": d["meta"], "eta": np.array([x["eta"] for x in s]), "u": np.array([x["u"] for x in s]), "u_by_content": dec}
    meta, header, rows = _parse_csv(text)
    data = np.array([[float(x) for x in r] for r in rows])
    n = sum(1 for h in header if h.startswith("eta_"))
    dec = None
    if len(header) > 1 + 2 * n:
        dec = data[:, 1 + 2 * n :].reshape(len(rows), -1, n)
    return {"meta": meta, "eta": data[:, 1 : 1 + n], "u": data[:, 1 + n : 1 + 2 * n], "u_by_content": dec}


# ---------------------------------------------------------------------------
# trajectories and CCP estimates


def trajectory_csv(traj, meta: dict | None = None) -> str:
    rows = ((i + 1, int(c), int(h), int(s)) for i, (c, h, s) in enumerate(zip(traj.requests, traj.hits, traj.states)))
    return _csv(rows, ["request_index", "content", "hit", "state"], meta)


def trajectory_json(traj, meta: dict | None = None) -> str:
    return dumps_json(
        {
            "meta": meta or {},
            "hit_ratio": traj.hit_ratio,
            "requests": traj.requests,
            "hits": traj.hits.astype(int),
            "states": traj.states,
        }
    )


def read_trajectory(path_or_text, fmt_: str | None = None) -> dict:
    text = _load(path_or_text)
    if _looks_json(text, fmt_):
        d = json.loads(text)
        return {k: np.array(d[k]) for k in ("requests", "hits", "states")} | {"meta": d["meta"]}
    meta, _, rows = _parse_csv(text)
    a = np.array([[int(x) for x in r] for r in rows], dtype=int).reshape(-1, 4)
    return {"requests": a[:, 1], "hits": a[:, 2], "states": a[:, 3], "meta": meta}


def ccp_csv(est, meta: dict | None = None) -> str:
    rows = []
    for n in range(est.values.shape[0]):
        for j, c in enumerate(est.contents):
            rows.append((n + 1, c, float(est.values[n, j])))
    return _csv(rows, ["request_index", "content", "value"], meta)


def ccp_json(est, meta: dict | None = None) -> str:
    return dumps_json(
        {
            "meta": meta or {},
            "n_rounds": est.n_rounds,
            "contents": est.contents,
            "values": est.values,
            "hit_ratio": est.hit_ratio,
        }
    )


def read_ccp(path_or_text, fmt_: str | None = None) -> dict:
    """Return ``{"contents", "values"(n_requests, n_contents), "meta"}``."""
    text = _load(path_or_text)
    if _looks_json(text, fmt_):
        d = json.loads(text)
        return {"contents": d["contents"], "values": np.array(d["values"]), "meta": d["meta"]}
    meta, _, rows = _parse_csv(text)
    contents = list(dict.fromkeys(int(r[1]) for r in rows))
    vals = np.array([float(r[2]) for r in rows]).reshape(-1, len(contents))
    return {"contents": contents, "values": vals, "meta": meta}


# ---------------------------------------------------------------------------


def read_json(path_or_text) -> dict:
    return json.loads(_load(path_or_text))


def _load(path_or_text) -> str:
    if isinstance(path_or_text, Path) or ("\n" not in str(path_or_text) and Path(str(path_or_text)).exists()):
        return read_text(path_or_text)
    return str(path_or_text)


def _looks_json(text: str, fmt_: str | None) -> bool:
    if fmt_ is not None:
        return fmt_ == "json"
    return text.lstrip().startswith("{")
