"""Canonical ``key = value`` text used for configs embedded in run artifacts.

A small TOML-like subset: one key per line in the given order, values are
ints, floats (``repr`` round-trip), booleans, double-quoted strings, or flat
lists of those. Lines starting with ``#`` and blank lines are ignored.
"""
import json


class CanonError(ValueError):
    pass


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    raise CanonError(f"unsupported value type {type(v).__name__}")


def dumps(mapping):
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in mapping.items())


def _parse(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise CanonError(f"cannot parse value {text!r}") from exc


def loads(text):
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CanonError(f"line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        key = key.strip()
        if key in out:
            raise CanonError(f"line {lineno}: duplicate key {key!r}")
        out[key] = _parse(value)
    return out
