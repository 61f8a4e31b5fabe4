from __future__ import annotations

from dataclasses import asdict, fields

from .errors import ConfigError


class ConfigMixin:
    """``from_dict`` with per-key validation for flat frozen dataclasses."""

    @classmethod
    def from_dict(cls, data: dict | None, path: str = ""):
        data = dict(data or {})
        names = {f.name: f for f in fields(cls)}
        problems = []
        kwargs = {}
        for key, val in data.items():
            if key not in names:
                problems.append((f"{path}{key}", "unknown key"))
                continue
            default = getattr(cls(), key)
            if isinstance(default, tuple):
                if not isinstance(val, (list, tuple)) or len(val) != len(default):
                    problems.append((f"{path}{key}", f"expected a list of {len(default)} numbers"))
                    continue
                val = tuple(float(v) for v in val)
            elif isinstance(default, bool) or isinstance(val, bool):
                if not isinstance(val, bool) or not isinstance(default, bool):
                    problems.append((f"{path}{key}", "type mismatch"))
                    continue
            elif isinstance(default, str):
                if not isinstance(val, str):
                    problems.append((f"{path}{key}", "expected a string"))
                    continue
            elif isinstance(default, int):
                if not isinstance(val, (int, float)) or not float(val).is_integer():
                    problems.append((f"{path}{key}", "expected an integer"))
                    continue
                val = int(val)
            elif isinstance(default, float):
                if not isinstance(val, (int, float)):
                    problems.append((f"{path}{key}", "expected a number"))
                    continue
                val = float(val)
            kwargs[key] = val
        try:
            obj = cls(**kwargs)
        except ConfigError as exc:
            problems += [(f"{path}{k}", m) for k, m in exc.problems]
        if problems:
            raise ConfigError(problems)
        return obj

    def to_dict(self) -> dict:
        return asdict(self)
