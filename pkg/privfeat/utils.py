import hashlib
import json
import math

import numpy as np


def format_number(value, max_decimals):
    if isinstance(value, (int, np.integer)):
        return f"{value}"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    format_str = f"{{:.{max_decimals}f}}"
    formatted = format_str.format(value).rstrip("0").rstrip(".")
    return formatted


def parse_real(value):
    """Parses a real, accepting the spellings of infinity used in configs and JSON."""
    if isinstance(value, str):
        token = value.strip().lower()
        if token in ("inf", "+inf", "infinity", "+infinity", "∞"):
            return math.inf
        if token in ("-inf", "-infinity"):
            return -math.inf
        return float(token)
    return value


def dump_real(value):
    """JSON-safe form of a real: infinities become strings."""
    if value is None:
        return None
    value = float(value)
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    if math.isnan(value):
        return "nan"
    return value


def split_list(value):
    if isinstance(value, str):
        return [x.strip() for x in value.split(",") if x.strip()]
    return value


def config_hash(obj) -> str:
    """Short stable digest of a pydantic config, used to tag trained models."""
    payload = json.dumps(obj.model_dump(mode="json"), sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def poisson_sample(n: int, q: float, generator: np.random.Generator) -> np.ndarray:
    """Indices of a Poisson-sampled batch: each of n records joins with probability q.

    Drawn as a Binomial(n, q) size followed by a uniform subset of that size,
    which has the same law as n independent coin flips.
    """
    if q >= 1.0:
        return np.arange(n)
    size = int(generator.binomial(n, q))
    if size == 0:
        return np.empty(0, dtype=np.int64)
    return np.sort(generator.choice(n, size=size, replace=False))
