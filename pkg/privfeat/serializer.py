import json
import logging
from typing import Any, Callable, Dict, Optional

import pydantic

log = logging.getLogger(__name__)


from .dre import Discriminator, WeightedPublicModel
from .exceptions import ConfigurationError, FeatureIOError
from .gan import LatentGan
from .harness import ResultTable
from .metrics import MetricsReport
from .mge import GaussianModel
from .nn import Mlp, MlpCheckpoint

constructors: Dict[str, Callable[..., pydantic.BaseModel]] = {
    "gaussian": GaussianModel,
    "discriminator": Discriminator,
    "weighted_public": WeightedPublicModel,
    "latent_gan": LatentGan,
    "mlp": Mlp,
    "mlp_checkpoint": MlpCheckpoint,
    "metrics": MetricsReport,
    "results": ResultTable,
}


def get_constructor_from_kind(kind: str) -> Callable[..., pydantic.BaseModel]:
    """Returns the model class persisted under the given kind tag."""
    try:
        result = constructors[kind]
    except KeyError:
        raise ConfigurationError(
            "unknown record kind {0!r}; expected one of {1}".format(kind, sorted(constructors))
        )
    log.debug("record constructor for {0}\t=> {1}".format(kind, result.__name__))
    return result


def filter_notnull(dd: Dict[str, Any]) -> Dict[str, Any]:
    res = {}
    for k, v in dd.items():
        if isinstance(v, dict):
            v = filter_notnull(v)
        elif isinstance(v, list):
            v = [filter_notnull(x) if isinstance(x, dict) else x for x in v]
        if v is not None:
            res[k] = v
    return res


def get_constructor(obj_dict: Dict[Any, Any]) -> Optional[Callable[..., pydantic.BaseModel]]:
    """Infers the necessary constructor from the dict provided, and returns that constructor."""
    if "kind" not in obj_dict:
        raise ConfigurationError("record has no 'kind' tag")
    return get_constructor_from_kind(obj_dict["kind"])


def dict_encode(record: pydantic.BaseModel) -> Dict:
    """Converts a record into a JSON-compatible dict (arrays become lists)."""
    return record.model_dump(mode="json")


def dict_decode(obj_dict: Dict[Any, Any]) -> pydantic.BaseModel:
    """Converts dict into a record."""
    constructor = get_constructor(obj_dict)
    return constructor(**obj_dict)


def json_encode(record: pydantic.BaseModel, pretty: bool = False, drop_null: bool = False) -> str:
    """Converts a record into a json string.
    if pretty=True, then the json string is pretty-printed.
    if drop_null=True as well, null values are dropped from the pretty output.
    """
    res = record.model_dump_json()
    if pretty:
        x = json.loads(res)
        res = json.dumps(
            filter_notnull(x) if drop_null else x,
            indent=4,
        )
    return res


def json_decode(obj_json: str) -> pydantic.BaseModel:
    """Converts json string into a record."""
    try:
        obj_dict = json.loads(obj_json)
    except json.JSONDecodeError as err:
        raise ConfigurationError("not a JSON record: {0}".format(err)) from err
    return dict_decode(obj_dict)


def save_record(record: pydantic.BaseModel, path) -> None:
    try:
        with open(path, "w", encoding="utf-8") as f:
            f.write(json_encode(record, pretty=True))
            f.write("\n")
    except OSError as err:
        raise FeatureIOError(path, err.strerror or str(err)) from err


def load_record(path, expected: Optional[type] = None) -> pydantic.BaseModel:
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as err:
        raise FeatureIOError(path, err.strerror or str(err)) from err
    record = json_decode(text)
    if expected is not None and not isinstance(record, expected):
        raise ConfigurationError(
            "{0} holds a {1}, expected a {2}".format(path, type(record).__name__, expected.__name__)
        )
    return record
