"""Config files, policy JSON documents and stamped CSV output."""

from __future__ import annotations

import csv
import dataclasses
import json
from pathlib import Path

import numpy as np

from .cmdp import DualSolveReport, MixturePolicy
from .model import Action, ModelParams, ParameterError, SystemState, state_space
from .solver import Policy, ValueTable

FORMAT_VERSION = 1
_PARAM_TYPES = {f.name: f.type for f in dataclasses.fields(ModelParams)}


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ParameterError(f"not a boolean: {text!r}")


def read_config(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


def params_from_mapping(values: dict) -> ModelParams:
    kwargs = {}
    for key, value in values.items():
        if key not in _PARAM_TYPES:
            continue
        kind = _PARAM_TYPES[key]
        if isinstance(value, str):
            if kind == "bool":
                value = _parse_bool(value)
            elif kind == "int":
                value = int(value)
            else:
                value = float(value)
        kwargs[key] = value
    return ModelParams(**kwargs)


def load_params(path) -> ModelParams:
    return params_from_mapping(read_config(path))


def write_config(params: ModelParams, path) -> None:
    lines = [f"{k} = {str(v).lower() if isinstance(v, bool) else v}" for k, v in params.as_dict().items()]
    Path(path).write_text("\n".join(lines) + "\n")


def params_stamp(params: ModelParams, **extra) -> str:
    items = {**params.as_dict(), **extra}
    return ", ".join(f"{k}={v}" for k, v in items.items())


def write_csv(path, header, rows, stamp: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# {stamp}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(x) if isinstance(x, float) else x for x in row])


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


def policy_document(policy: Policy, values: ValueTable | None = None) -> dict:
    space = policy.space
    v = values.array if values is not None else [None] * space.n
    doc = {
        "format": "crn-aoi-policy",
        "version": FORMAT_VERSION,
        "params": policy.params.as_dict(),
        "lambda": policy.lam,
        "states": [[*s, int(a), None if x is None else float(x)] for s, a, x in zip(space.states, policy.array, v)],
    }
    if values is not None:
        doc["reference_state"] = list(values.reference_state)
        doc["gain"] = values.gain_estimate
    return doc


def policy_from_document(doc: dict) -> Policy:
    if doc.get("format") != "crn-aoi-policy" or doc.get("version") != FORMAT_VERSION:
        raise ParameterError("not a version-1 policy document")
    params = params_from_mapping(doc["params"])
    space = state_space(params)
    acts = np.zeros(space.n, dtype=np.int8)
    seen = np.zeros(space.n, dtype=bool)
    for row in doc["states"]:
        s = SystemState(*(int(x) for x in row[:4]))
        if s not in space.index:
            raise ParameterError(f"state {s} is outside the truncated space")
        i = space.index[s]
        acts[i] = Action(int(row[4]))
        seen[i] = True
    if not seen.all():
        missing = space.states[int(np.flatnonzero(~seen)[0])]
        raise ParameterError(f"policy document has no entry for {missing}")
    return Policy(space, acts, float(doc["lambda"]))


def mixture_document(mix: MixturePolicy) -> dict:
    return {
        "format": "crn-aoi-mixture",
        "version": FORMAT_VERSION,
        "alpha": mix.alpha,
        "pi_low": policy_document(mix.pi_low),
        "pi_high": policy_document(mix.pi_high),
    }


def load_policy(path):
    """Read a policy or mixture JSON document."""
    doc = json.loads(Path(path).read_text())
    if doc.get("format") == "crn-aoi-mixture":
        return MixturePolicy(policy_from_document(doc["pi_low"]), policy_from_document(doc["pi_high"]),
                             float(doc["alpha"]))
    return policy_from_document(doc)


def write_json(path, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def report_document(report: DualSolveReport, params: ModelParams) -> dict:
    return {"format": "crn-aoi-dual-report", "version": FORMAT_VERSION, "params": params.as_dict(),
            **report.as_dict()}
