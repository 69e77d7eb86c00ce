"""
YAML documents for SCM specifications, fitted kernels and run configuration.

Every reader reports the first violation as ConfigError("<dotted.path>: ...").
Floats are written with full repr precision, so dump -> load is exact.
"""

import logging
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Type, TypeVar, Union

import numpy as np
import yaml

from src.errors import ConfigError, ValidationError
from src.forward import InitialState
from src.gformula import GKernels
from src.scm import SCM, AdditiveSCM, DiscreteSCM, NoiseFamily, Variant

logger = logging.getLogger("nof1.config_io")

T = TypeVar("T")


class Section:
    """Typed, path-aware view of one mapping inside a configuration document."""

    def __init__(self, doc: Any, path: str = "") -> None:
        if not isinstance(doc, Mapping):
            raise ConfigError(path or "<root>", f"expected a mapping, got {type(doc).__name__}")
        self.doc = doc
        self.path = path

    def child_path(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def has(self, key: str) -> bool:
        return key in self.doc and self.doc[key] is not None

    def _get(self, key: str, kind: Union[Type[T], Tuple[type, ...]], default: Any, required: bool) -> Any:
        if not self.has(key):
            if required:
                raise ConfigError(self.child_path(key), "required key is missing")
            return default
        value = self.doc[key]
        if isinstance(value, bool) and kind is not bool:
            raise ConfigError(self.child_path(key), "expected a number or string, got a boolean")
        if not isinstance(value, kind):
            name = getattr(kind, "__name__", str(kind))
            raise ConfigError(self.child_path(key), f"expected {name}, got {type(value).__name__}")
        return value

    def section(self, key: str, required: bool = True) -> Optional["Section"]:
        if not self.has(key):
            if required:
                raise ConfigError(self.child_path(key), "required section is missing")
            return None
        return Section(self.doc[key], self.child_path(key))

    def get_int(self, key: str, default: Optional[int] = None, minimum: Optional[int] = None) -> int:
        value = int(self._get(key, int, default, default is None))
        if minimum is not None and value < minimum:
            raise ConfigError(self.child_path(key), f"must be >= {minimum}, got {value}")
        return value

    def get_float(self, key: str, default: Optional[float] = None) -> float:
        return float(self._get(key, (int, float), default, default is None))

    def get_str(self, key: str, default: Optional[str] = None) -> str:
        value = self._get(key, (str, int), default, default is None)
        return str(value)

    def get_bool(self, key: str, default: bool = False) -> bool:
        return bool(self._get(key, bool, default, False))

    def get_list(self, key: str, default: Optional[List[Any]] = None) -> List[Any]:
        return list(self._get(key, list, default, default is None))

    def get_choice(self, key: str, choices: Sequence[str], default: Optional[str] = None) -> str:
        value = self.get_str(key, default)
        if value not in choices:
            raise ConfigError(self.child_path(key), f"must be one of {list(choices)}, got {value!r}")
        return value

    def get_array(self, key: str) -> np.ndarray:
        try:
            return np.asarray(self.get_list(key), dtype=np.float64)
        except (TypeError, ValueError) as e:
            raise ConfigError(self.child_path(key), f"not a numeric array: {e}")


def read_yaml(path: str) -> Any:
    try:
        with open(path, "r") as f:
            return yaml.safe_load(f)
    except OSError as e:
        raise ConfigError(path, f"cannot read: {e}")
    except yaml.YAMLError as e:
        raise ConfigError(path, f"invalid YAML: {e}")


def write_yaml(doc: Mapping[str, Any], path: str) -> None:
    with open(path, "w") as f:
        yaml.safe_dump(dict(doc), f, sort_keys=False, default_flow_style=None)


def _initial(section: Optional[Section]) -> InitialState:
    if section is None:
        return InitialState()
    return InitialState(
        y=section.get_int("y", 0, minimum=0), l=section.get_int("l", 0, minimum=0), a=section.get_int("a", 0),
    )


def load_scm(doc: Any, path: str = "scm") -> SCM:
    """Build a DiscreteSCM or AdditiveSCM from its document form."""
    section = Section(doc, path)
    kind = section.get_choice("kind", ("discrete", "additive"), "discrete")
    try:
        if kind == "additive":
            family = section.get_choice("noise_family", [f.value for f in NoiseFamily], NoiseFamily.GAUSSIAN.value)
            return AdditiveSCM(
                beta=section.get_float("beta"),
                u_value=section.get_float("u_value", 0.0),
                noise_sd=section.get_float("noise_sd", 0.0 if family == "constant" else 1.0),
                noise_family=NoiseFamily(family),
            )
        variant = Variant(section.get_choice("variant", [v.value for v in Variant]))
        if section.get_int("lag", 1) != 1:
            raise ConfigError(section.child_path("lag"), "only lag 1 structural dependence is supported")
        u_levels = tuple(str(u) for u in section.get_list("u_levels", ["u0"]))
        u_weights = section.get_array("u_weights") if section.has("u_weights") else None
        common: Dict[str, Any] = dict(
            u_levels=u_levels, u_weights=u_weights,
            initial=_initial(section.section("initial", required=False)),
            declared_positive=section.get_bool("declared_positive"),
        )
        y_values = section.get_array("y_values")
        if variant is Variant.BASIC:
            return DiscreteSCM.basic(y_values, section.get_array("y_kernel"), **common)
        l_values = section.get_array("l_values")
        if variant is Variant.TIME_TREND:
            return DiscreteSCM.time_trend(
                y_values, l_values, section.get_array("l_kernel"), section.get_array("y_kernel"), **common,
            )
        return DiscreteSCM.relaxed(
            y_values, l_values, section.get_array("l_kernel"), section.get_array("y_kernel"), **common,
        )
    except ConfigError:
        raise
    except ValidationError as e:
        raise ConfigError(path, str(e))


def dump_scm(scm: SCM) -> Dict[str, Any]:
    if isinstance(scm, AdditiveSCM):
        return {
            "kind": "additive", "beta": float(scm.beta), "u_value": float(scm.u_value),
            "noise_sd": float(scm.noise_sd), "noise_family": scm.noise_family.value,
        }
    doc: Dict[str, Any] = {
        "kind": "discrete",
        "variant": scm.variant.value,
        "lag": scm.lag,
        "y_values": scm.y_values.tolist(),
        "u_levels": list(scm.u_levels),
        "u_weights": scm.u_weights.tolist(),
        "initial": {"y": scm.initial.y, "l": scm.initial.l, "a": scm.initial.a},
        "declared_positive": scm.declared_positive,
    }
    reduced_l = scm.reduced_l_kernel()
    if reduced_l is not None:
        doc["l_values"] = scm.l_values.tolist()
        doc["l_kernel"] = reduced_l.tolist()
    doc["y_kernel"] = scm.reduced_y_kernel().tolist()
    return doc


def load_scm_file(path: str) -> SCM:
    doc = read_yaml(path)
    section = Section(doc, "")
    return load_scm(doc["scm"] if section.has("scm") else doc, "scm")


_KERNEL_TABLES = ("gl", "gy", "gy_switch")
_KERNEL_COUNTS = ("gl_counts", "gy_counts", "gy_switch_counts")


def dump_kernels(kernels: GKernels) -> Dict[str, Any]:
    doc: Dict[str, Any] = {
        "y_values": kernels.y_values.tolist(),
        "l_values": kernels.l_values.tolist(),
        "smoothing": float(kernels.smoothing),
    }
    for name in _KERNEL_TABLES:
        doc[name] = getattr(kernels, name).tolist()
    for name in _KERNEL_COUNTS:
        doc[name] = np.asarray(getattr(kernels, name)).astype(np.int64).tolist()
    return doc


def load_kernels(doc: Any, path: str = "kernels") -> GKernels:
    section = Section(doc, path)
    tables = [section.get_array(name) for name in _KERNEL_TABLES]
    counts = [
        np.asarray(section.get_list(name), dtype=np.int64) if section.has(name) else np.zeros(t.shape, dtype=np.int64)
        for name, t in zip(_KERNEL_COUNTS, tables)
    ]
    try:
        return GKernels(
            section.get_array("y_values"), section.get_array("l_values"),
            tables[0], tables[1], tables[2], counts[0], counts[1], counts[2],
            section.get_float("smoothing", 0.0),
        )
    except ValidationError as e:
        raise ConfigError(path, str(e))


def load_kernels_file(path: str) -> GKernels:
    doc = read_yaml(path)
    section = Section(doc, "")
    return load_kernels(doc["kernels"] if section.has("kernels") else doc, "kernels")
