"""The controller artifact: everything the online controller needs, written as
versioned JSON.

Matrices are stored as ``{"shape": [...], "data": [...]}`` with row-major
data; floats use Python's shortest round-trip repr, so loading reproduces
every value bit for bit. A SHA-256 checksum over the canonical encoding
(sorted keys, no whitespace) of all other fields guards against edits.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Polytope

FORMAT_VERSION = "offline-smpc-artifact/1"


class ArtifactError(ValueError):
    pass


def encode_array(a) -> dict:
    a = np.asarray(a, dtype=float)
    return {"shape": list(a.shape), "data": [float(v) for v in a.ravel()]}


def decode_array(obj) -> np.ndarray:
    shape = tuple(obj["shape"])
    data = np.array(obj["data"], dtype=float)
    if data.size != int(np.prod(shape)):
        raise ArtifactError(f"array data of length {data.size} does not match shape {shape}")
    return data.reshape(shape)


def encode_polytope(p: Polytope) -> dict:
    out = {"lhs": encode_array(p.lhs), "rhs": encode_array(p.rhs)}
    if p.tags is not None:
        out["tags"] = [list(t) for t in p.tags]
    return out


def decode_polytope(obj) -> Polytope:
    tags = obj.get("tags")
    if tags is not None:
        tags = tuple(tuple(t) for t in tags)
    lhs = decode_array(obj["lhs"])
    return Polytope(lhs, decode_array(obj["rhs"]), tags)


def canonical_bytes(payload: dict) -> bytes:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()


def checksum(payload: dict) -> str:
    return hashlib.sha256(canonical_bytes(payload)).hexdigest()


@dataclass
class ControllerArtifact:
    n: int
    m: int
    T: int
    K: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray
    Qtilde: np.ndarray
    D: Polytope  # reduced sampled constraints over (x, v)
    D_R: Polytope  # first-step constraint over (x, v)
    C_T: Polytope  # over (x, v_0)
    C_inf: Polytope  # over x
    X_T: Polytope
    H_x: np.ndarray
    eps_x: np.ndarray
    H_u: np.ndarray
    eps_h: float
    delta: float
    input_directions: tuple = ()
    seeds: dict = field(default_factory=dict)
    budgets: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)
    certificate: dict | None = None
    format_version: str = FORMAT_VERSION

    @property
    def constraints(self) -> Polytope:
        """D intersected with D_R: the online feasible set over (x, v)."""
        return self.D.intersect(self.D_R)

    @property
    def n_dec(self) -> int:
        return self.T * self.m

    # ----------------------------------------------------------------- json

    def to_payload(self) -> dict:
        return {
            "format_version": self.format_version,
            "dims": {"n": self.n, "m": self.m, "T": self.T},
            "K": encode_array(self.K),
            "Q": encode_array(self.Q),
            "R": encode_array(self.R),
            "P": encode_array(self.P),
            "Qtilde": encode_array(self.Qtilde),
            "D": encode_polytope(self.D),
            "D_R": encode_polytope(self.D_R),
            "C_T": encode_polytope(self.C_T),
            "C_inf": encode_polytope(self.C_inf),
            "X_T": encode_polytope(self.X_T),
            "constraints": {
                "H_x": encode_array(self.H_x),
                "eps_x": [float(e) for e in self.eps_x],
                "H_u": encode_array(self.H_u),
                "eps_h": float(self.eps_h),
                "delta": float(self.delta),
                "input_directions": [float(e) for e in self.input_directions],
            },
            "seeds": dict(self.seeds),
            "budgets": list(self.budgets),
            "stats": dict(self.stats),
            "certificate": self.certificate,
        }

    def dumps(self) -> str:
        payload = self.to_payload()
        payload["checksum"] = checksum(payload)
        return json.dumps(payload, sort_keys=True, indent=1, allow_nan=False) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def from_payload(cls, payload: dict, verify=True) -> ControllerArtifact:
        payload = dict(payload)
        stored = payload.pop("checksum", None)
        if verify and stored != checksum(payload):
            raise ArtifactError("artifact checksum mismatch")
        if payload.get("format_version") != FORMAT_VERSION:
            raise ArtifactError(f"unsupported artifact format {payload.get('format_version')!r}")
        cons = payload["constraints"]
        dims = payload["dims"]
        return cls(
            n=int(dims["n"]),
            m=int(dims["m"]),
            T=int(dims["T"]),
            K=decode_array(payload["K"]),
            Q=decode_array(payload["Q"]),
            R=decode_array(payload["R"]),
            P=decode_array(payload["P"]),
            Qtilde=decode_array(payload["Qtilde"]),
            D=decode_polytope(payload["D"]),
            D_R=decode_polytope(payload["D_R"]),
            C_T=decode_polytope(payload["C_T"]),
            C_inf=decode_polytope(payload["C_inf"]),
            X_T=decode_polytope(payload["X_T"]),
            H_x=decode_array(cons["H_x"]),
            eps_x=np.array(cons["eps_x"], dtype=float),
            H_u=decode_array(cons["H_u"]),
            eps_h=float(cons["eps_h"]),
            delta=float(cons["delta"]),
            input_directions=tuple(cons["input_directions"]),
            seeds=payload["seeds"],
            budgets=payload["budgets"],
            stats=payload["stats"],
            certificate=payload["certificate"],
        )

    @classmethod
    def loads(cls, text: str, verify=True) -> ControllerArtifact:
        return cls.from_payload(json.loads(text), verify=verify)

    @classmethod
    def load(cls, path, verify=True) -> ControllerArtifact:
        return cls.loads(Path(path).read_text(), verify=verify)
