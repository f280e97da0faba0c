"""Plain-text ``key = value`` run configuration shared by every CLI command."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace

from .errors import InvalidInputError


def _floats(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text):
    return tuple(int(v) for v in text.split(",") if v.strip())


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _kinds(text):
    parts = [p.strip() for p in text.split(",") if p.strip()]
    return parts[0] if len(parts) == 1 else tuple(parts)


OUTPUT_KEYS = ("out_dir", "plots")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    # dataset
    n_train: int = 48
    n_test: int = 16
    points: int = 512
    raw_points: int = 4096
    extents: tuple = (5.0, 4.0, 3.0)
    extent_jitter: float = 0.2
    objects: tuple = (1, 3)
    symmetry: str = "none"
    # model
    encoder: tuple = (32, 64, 128)
    head: tuple = (64,)
    kinds: object = "quadratic-strict"
    canonicalize: bool = False
    # training
    epochs: int = 30
    batch_size: int = 8
    lr: float = 3e-3
    optimizer: str = "adam"
    aug_scale: bool = True
    aug_jitter: bool = True
    aug_reflect: bool = False
    # evaluation and benchmarks
    n_trials: int = 5
    gadget_eps: tuple = (1e-1, 1e-2, 1e-3, 1e-4)
    gadget_delta: tuple = (1e-1, 1e-2, 1e-3)
    gadget_samples: int = 100_000
    grad_trials: int = 100
    grad_h: float = 1e-5
    grad_tol: float = 1e-6
    # output
    out_dir: str = "runs"
    plots: bool = True

    _PARSERS = {
        "extents": _floats, "objects": _ints, "encoder": _ints, "head": _ints,
        "kinds": _kinds, "gadget_eps": _floats, "gadget_delta": _floats,
    }

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def parse(cls, text: str, base: RunConfig | None = None) -> RunConfig:
        """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are rejected."""
        known = {f.name: f for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidInputError(f"line {lineno}: expected key = value")
            key, value = (p.strip() for p in line.split("=", 1))
            if key not in known:
                raise InvalidInputError(f"line {lineno}: unknown config key {key!r}")
            values[key] = cls._convert(key, known[key], value)
        return replace(base or cls(), **values)

    @classmethod
    def _convert(cls, key, f, value):
        try:
            if key in cls._PARSERS:
                return cls._PARSERS[key](value)
            default = f.default
            if isinstance(default, bool):
                return _bool(value)
            if isinstance(default, int):
                return int(value)
            if isinstance(default, float):
                return float(value)
            return value
        except ValueError as exc:
            raise InvalidInputError(f"bad value for {key}: {exc}") from None

    @classmethod
    def from_file(cls, path) -> RunConfig:
        with open(path) as fh:
            return cls.parse(fh.read())

    def to_text(self, skip=()) -> str:
        lines = []
        for name in self.keys():
            if name in skip:
                continue
            v = getattr(self, name)
            if isinstance(v, tuple):
                v = ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
            elif isinstance(v, bool):
                v = str(v).lower()
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{name} = {v}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        """Hash of every setting that can change results; output location is excluded."""
        return hashlib.sha256(self.to_text(skip=OUTPUT_KEYS).encode()).hexdigest()
