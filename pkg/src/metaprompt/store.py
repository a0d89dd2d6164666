"""Checkpoints (JSON, arrays as base64 little-endian float64) and JSONL metrics."""

from __future__ import annotations

import base64
import hashlib
import json
from pathlib import Path

import numpy as np

from .metagrad import RegularizerState
from .metalearn import MetaState, TrainConfig
from .optim import SGD, Adam

FORMAT_VERSION = 1


def encode_array(a) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_array(rec: dict) -> np.ndarray:
    raw = base64.b64decode(rec["data"].encode("ascii"))
    return np.frombuffer(raw, dtype="<f8").reshape(rec["shape"]).astype(float)


def config_digest(cfg: TrainConfig) -> str:
    return hashlib.sha256(json.dumps(cfg.to_dict(), sort_keys=True).encode()).hexdigest()


def _opt_to_json(opt) -> dict:
    if isinstance(opt, Adam):
        return {"kind": "adam", "lr": opt.lr, "t": opt.t,
                "m": {k: encode_array(v) for k, v in sorted(opt.m.items())},
                "v": {k: encode_array(v) for k, v in sorted(opt.v.items())}}
    return {"kind": "sgd", "lr": opt.lr, "t": opt.t}


def _opt_from_json(rec: dict):
    if rec["kind"] == "adam":
        return Adam(rec["lr"], t=rec["t"], m={k: decode_array(v) for k, v in rec["m"].items()},
                    v={k: decode_array(v) for k, v in rec["v"].items()})
    return SGD(rec["lr"], rec["t"])


def save_checkpoint(path, state: MetaState, cfg: TrainConfig, best=None, extra: dict | None = None) -> None:
    """``best`` optionally carries the validation-selected (theta, phi) next to the live state."""
    rec = {
        "version": FORMAT_VERSION,
        "config": cfg.to_dict(),
        "config_digest": config_digest(cfg),
        "step": state.step,
        "s": state.s,
        "rng": {"seed": state.seed, "step": state.step},
        "theta": encode_array(state.theta),
        "phi": {k: encode_array(v) for k, v in state.phi.arrays().items()},
        "opt_theta": _opt_to_json(state.opt_theta),
        "opt_phi": _opt_to_json(state.opt_phi),
    }
    if best is not None:
        theta, phi = best
        rec["best"] = {"theta": encode_array(theta), "phi": {k: encode_array(v) for k, v in phi.arrays().items()}}
    if extra:
        rec["extra"] = extra
    Path(path).write_text(json.dumps(rec, sort_keys=True), encoding="utf-8")


def load_checkpoint(path):
    """(state, config, best (theta, phi) or None)."""
    try:
        rec = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"cannot read checkpoint {path}: {exc}") from exc
    cfg = TrainConfig(**rec["config"])
    if config_digest(cfg) != rec["config_digest"]:
        raise ValueError("checkpoint config digest mismatch")
    phi = RegularizerState(**{k: decode_array(v) for k, v in rec["phi"].items()})
    state = MetaState(decode_array(rec["theta"]), phi, rec["s"], rec["step"], rec["rng"]["seed"],
                      _opt_from_json(rec["opt_theta"]), _opt_from_json(rec["opt_phi"]))
    best = None
    if "best" in rec:
        best = (decode_array(rec["best"]["theta"]),
                RegularizerState(**{k: decode_array(v) for k, v in rec["best"]["phi"].items()}))
    return state, cfg, best


def write_metrics(path, records) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(r, sort_keys=True) + "\n")


def read_metrics(path) -> list[dict]:
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]
