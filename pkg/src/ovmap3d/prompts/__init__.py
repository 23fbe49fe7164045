"""Versioned prompt fixtures for the LLM/VLM stages.

Each fixture starts with ``#task:`` and ``#version:`` marker lines so mock
gateways can dispatch on the task, and carries a single-line JSON payload
(``PAYLOAD: {...}``) with the machine-readable context of the request.
"""

from __future__ import annotations

import json
import re
from importlib import resources

_CACHE: dict[str, str] = {}


def load_template(name: str) -> str:
    if name not in _CACHE:
        _CACHE[name] = (
            resources.files(__package__).joinpath(f"{name}.txt").read_text()
        )
    return _CACHE[name]


def fill(template: str, **subs) -> str:
    out = template
    for key, value in subs.items():
        out = out.replace(f"<<{key.upper()}>>", str(value))
    return out


def task_of(text: str) -> str | None:
    m = re.search(r"^#task:\s*(\S+)", text, re.MULTILINE)
    return m.group(1) if m else None


def payload_of(text: str):
    m = re.search(r"^PAYLOAD:\s*(\{.*\})\s*$", text, re.MULTILINE)
    if m is None:
        return None
    return json.loads(m.group(1))


def build_structure_query(query: str) -> str:
    return fill(load_template("structure_query"), query=query)


def build_verify_object(name: str, frame_id: int, bbox) -> str:
    payload = json.dumps(
        {"name": name, "frame_id": int(frame_id), "bbox": list(map(int, bbox))},
        sort_keys=True,
    )
    return fill(load_template("verify_object"), name=name, payload=payload)


def build_orient_object(token: str, tiles) -> str:
    payload = json.dumps({"token": token, "tiles": tiles}, sort_keys=True)
    return fill(load_template("orient_object"), token=token, payload=payload)


def build_final_decision(query: str, candidates, references) -> str:
    payload = json.dumps(
        {"query": query, "candidates": candidates, "references": references},
        sort_keys=True,
    )
    return fill(load_template("final_decision"), payload=payload)
