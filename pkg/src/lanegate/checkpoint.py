"""Checkpoint files: JSON, self-describing, bit-exact round trip.

Floats are serialized through repr, which json does by default, so
float64 parameters survive save/load unchanged. The format carries an
explicit name and version; loaders refuse anything they do not know.
"""

import json

import numpy as np

from .nets import (
    OptimizerState,
    net_from_dict,
    net_to_dict,
    optimizer_from_dict,
    optimizer_to_dict,
)
from .policy import GaussianPolicy, ValueFunction

__all__ = ["CheckpointError", "save_checkpoint", "load_checkpoint",
           "FORMAT_NAME", "FORMAT_VERSION"]

FORMAT_NAME = "lanegate-checkpoint"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, actor: GaussianPolicy, critic: ValueFunction,
                    opt_actor: OptimizerState | None, opt_critic: OptimizerState | None,
                    counters: dict, config_digest: str) -> None:
    doc = {
        "format": FORMAT_NAME,
        "format_version": FORMAT_VERSION,
        "config_digest": config_digest,
        "counters": dict(counters),
        "actor": {
            "net": net_to_dict(actor.net),
            "log_sigma": actor.log_sigma.tolist(),
            "obs_scale": actor.obs_scale.tolist(),
            "act_center": actor.act_center.tolist(),
            "act_half": actor.act_half.tolist(),
        },
        "critic": {
            "net": net_to_dict(critic.net),
            "obs_scale": critic.obs_scale.tolist(),
        },
        "opt_actor": optimizer_to_dict(opt_actor) if opt_actor is not None else None,
        "opt_critic": optimizer_to_dict(opt_critic) if opt_critic is not None else None,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path) -> dict:
    """Returns actor, critic, optimizer states, counters and the digest."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != FORMAT_NAME:
        raise CheckpointError(f"{path}: not a {FORMAT_NAME} file")
    if doc.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {doc.get('format_version')!r} "
            f"is not supported (expected {FORMAT_VERSION})")
    a = doc["actor"]
    actor = GaussianPolicy(
        net_from_dict(a["net"]),
        np.asarray(a["log_sigma"], dtype=np.float64),
        np.asarray(a["obs_scale"], dtype=np.float64),
        np.asarray(a["act_center"], dtype=np.float64),
        np.asarray(a["act_half"], dtype=np.float64),
    )
    c = doc["critic"]
    critic = ValueFunction(net_from_dict(c["net"]),
                           np.asarray(c["obs_scale"], dtype=np.float64))
    return {
        "actor": actor,
        "critic": critic,
        "opt_actor": optimizer_from_dict(doc["opt_actor"]) if doc["opt_actor"] else None,
        "opt_critic": optimizer_from_dict(doc["opt_critic"]) if doc["opt_critic"] else None,
        "counters": doc["counters"],
        "config_digest": doc["config_digest"],
    }
