from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

CERT_TOL = 1e-9


def digest(*parts) -> str:
    """Content hash of arrays, numbers and strings, stable across runs."""
    h = hashlib.sha256()
    for part in parts:
        if part is None:
            h.update(b"<none>")
        elif isinstance(part, np.ndarray):
            arr = np.ascontiguousarray(part)
            h.update(str(arr.dtype).encode() + str(arr.shape).encode())
            h.update(arr.tobytes())
        elif isinstance(part, (list, tuple)):
            h.update(digest(*part).encode())
        elif hasattr(part, "digest_parts"):
            h.update(digest(*part.digest_parts()).encode())
        else:
            h.update(repr(part).encode())
    return h.hexdigest()[:16]


@dataclass
class Certificate:
    name: str
    metric_kind: str
    lhs: float
    rhs: float
    witness: tuple = ()
    inputs_digest: str = ""
    parts: list["Certificate"] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def own_satisfied(self) -> bool:
        return bool(self.lhs <= self.rhs + CERT_TOL)

    @property
    def satisfied(self) -> bool:
        return self.own_satisfied and all(p.satisfied for p in self.parts)

    @property
    def slack(self) -> float:
        return float(self.rhs - self.lhs)

    def flatten(self) -> list["Certificate"]:
        out = [self]
        for p in self.parts:
            out.extend(p.flatten())
        return out

    def violations(self) -> list["Certificate"]:
        return [c for c in self.flatten() if not c.own_satisfied]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "metric_kind": self.metric_kind,
            "lhs": float(self.lhs),
            "rhs": float(self.rhs),
            "slack": self.slack,
            "satisfied": self.satisfied,
            "witness": [int(w) if isinstance(w, (int, np.integer)) else w for w in self.witness],
            "inputs_digest": self.inputs_digest,
            "parts": [p.to_dict() for p in self.parts],
            "notes": list(self.notes),
        }

    def csv_row(self) -> list:
        return [
            self.name,
            self.metric_kind,
            repr(float(self.lhs)),
            repr(float(self.rhs)),
            repr(self.slack),
            int(self.own_satisfied),
            " ".join(str(w) for w in self.witness),
        ]

    def __str__(self):
        flag = "ok" if self.satisfied else "VIOLATED"
        return f"{self.name}[{self.metric_kind}] lhs={self.lhs:.6g} rhs={self.rhs:.6g} {flag}"

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


CSV_HEADER = ["name", "kind", "lhs", "rhs", "slack", "satisfied", "witness"]
