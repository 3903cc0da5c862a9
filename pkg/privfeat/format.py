import enum
import math

import numpy as np

from .utils import format_number


def format_value(v):
    if isinstance(v, enum.Enum):
        return v.name
    elif isinstance(v, np.ndarray):
        return "array{0}".format(tuple(v.shape))
    elif isinstance(v, float):
        return format_number(v, 6)
    elif isinstance(v, list) and len(v) < 1:
        return None
    elif isinstance(v, list) and len(v) > 8:
        return "[{0} items]".format(len(v))
    elif isinstance(v, dict):
        return "{...}"
    else:
        return v


def pretty_print_model(model):
    res = type(model).__name__ + "("
    for k in type(model).model_fields:
        v = format_value(getattr(model, k))
        if v is not None:
            res += f"{k}=[{v}], "
    res = res[:-2] + ")" if res.endswith(", ") else res + ")"
    return res


def pretty_print_budget(budget):
    eps = "inf" if math.isinf(budget.epsilon) else format_number(budget.epsilon, 6)
    return "PrivacyBudget(eps={0}, delta={1:g})".format(eps, budget.delta)
