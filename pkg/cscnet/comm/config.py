import io
import logging
from collections import OrderedDict

from cscnet.system.components import CLASSIFIERS, NONPARAMETRIC
from cscnet.tools.numerics import PROFILES

log = logging.getLogger(__name__)

# key: default, the default also fixes the value type
DEFAULTS = OrderedDict(
    [
        ("preset", "desk"),
        # seeds
        ("seed", 0),
        ("data_seed", None),
        # synthetic data
        ("n_attrs", 5),
        ("n_objs", 5),
        ("samples_per_pair", 30),
        ("seen_fraction", 0.8),
        ("test_fraction", 0.2),
        ("noise_sigma", 0.1),
        ("entanglement", 0.5),
        ("cos_cap", 0.95),
        # dims
        ("d_x", 32),
        ("d", 16),
        ("d_v", 16),
        ("d_c", 16),
        ("hidden", 16),
        # model
        ("a2o", True),
        ("o2a", True),
        ("composition", True),
        ("primitive_classifier", "parametric"),
        ("composition_classifier", "nonparametric"),
        ("teacher_forcing", False),
        ("positive_only", False),
        ("temperature", 0.05),
        # training
        ("alpha", 4.0),
        ("lr", 5e-3),
        ("epochs", 200),
        ("batch_size", 32),
        ("profile", "64"),
        # evaluation
        ("beta", 0.2),
        ("n_biases", 50),
        ("betas", (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)),
        ("ablation_seeds", (0, 1, 2)),
        # gradient check
        ("grad_check_alphas", (0.0, 1.0, 4.0)),
        ("grad_check_step", 1e-5),
        ("grad_check_tol", 1e-4),
        ("corrupt_block", ""),
        # paths, empty features and labels mean synthetic data
        ("embeddings", ""),
        ("features", ""),
        ("labels", ""),
        ("checkpoint", ""),
        ("out", "."),
    ]
)

_LIST_TYPES = {"betas": float, "ablation_seeds": int, "grad_check_alphas": float}

# full-scale settings for precomputed ResNet-18 features
# and 300-d word embeddings
PRESETS = {
    "desk": {},
    # noisier, smaller desk data where the ablation variants
    # stay below a perfect curve
    "desk-noisy": {"noise_sigma": 1.5, "samples_per_pair": 12, "epochs": 100},
    "mit-states": {
        "d_x": 512,
        "d": 300,
        "d_v": 300,
        "d_c": 300,
        "hidden": 512,
        "lr": 5e-5,
        "alpha": 4.0,
        "beta": 0.1,
        "epochs": 300,
        "batch_size": 256,
        "profile": "32",
    },
    "cgqa": {
        "d_x": 512,
        "d": 300,
        "d_v": 300,
        "d_c": 300,
        "hidden": 512,
        "lr": 5e-5,
        "alpha": 4.0,
        "beta": 0.2,
        "epochs": 200,
        "batch_size": 128,
        "profile": "32",
    },
}

_TRUE = ("true", "yes", "on", "1")
_FALSE = ("false", "no", "off", "0")


def _coerce(key, value):
    """Types a raw value after the default of key."""
    if key not in DEFAULTS:
        msg = "Unknown configuration key '{}'."
        log.error(msg.format(key))
        raise ValueError(msg.format(key))
    if not isinstance(value, str):
        if key in _LIST_TYPES:
            return tuple(_LIST_TYPES[key](v) for v in value)
        return value

    value = value.strip()
    default = DEFAULTS[key]
    try:
        if key == "data_seed":
            return None if value.lower() in ("", "none") else int(value)
        if key in _LIST_TYPES:
            return tuple(
                _LIST_TYPES[key](v) for v in value.split(",") if v.strip()
            )
        if isinstance(default, bool):
            if value.lower() in _TRUE:
                return True
            if value.lower() in _FALSE:
                return False
            raise ValueError(value)
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
    except ValueError:
        msg = "Configuration key '{}' cannot take the value '{}'."
        log.error(msg.format(key, value))
        raise ValueError(msg.format(key, value))
    return value


def parse_assignments(lines, source="<flags>"):
    """Parses `key = value` lines, `#` starts a comment.

    Returns:

        values: OrderedDict of raw strings
    """
    values = OrderedDict()
    for number, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            msg = "{}:{}: expected 'key = value', got '{}'."
            log.error(msg.format(source, number, line))
            raise ValueError(msg.format(source, number, line))
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


class RunConfig(object):
    """Typed, validated experiment configuration.

    Parameters:

        values: dict or None
            {key: value}, raw strings get typed after DEFAULTS.
            A 'preset' key selects the base values the other
            keys override.

    Examples:

        >>> cfg = RunConfig({"epochs": "50", "beta": 0.1})
        >>> cfg.epochs
        50
    """

    def __init__(self, values=None):

        values = OrderedDict(values or {})
        preset = str(values.pop("preset", DEFAULTS["preset"])).strip()
        if preset not in PRESETS:
            msg = "Unknown preset '{}', use one of {}."
            log.error(msg.format(preset, sorted(PRESETS)))
            raise ValueError(msg.format(preset, sorted(PRESETS)))

        self.values = OrderedDict(DEFAULTS)
        self.values["preset"] = preset
        self.values.update(PRESETS[preset])
        for key, value in values.items():
            self.values[key] = _coerce(key, value)

        self.validate()

    @classmethod
    def from_file(cls, path, overrides=None):
        """Reads a `key = value` file, overrides win over
        file values.
        """
        with io.open(path, "r", encoding="utf-8") as f:
            values = parse_assignments(f, source=path)
        values.update(overrides or {})
        return cls(values)

    def __getattr__(self, name):
        values = self.__dict__.get("values")
        if values is not None and name in values:
            return values[name]
        raise AttributeError(name)

    def replace(self, **changes):
        """A validated copy with some values changed."""
        values = OrderedDict(self.values)
        values.update(changes)
        return RunConfig(values)

    def validate(self):
        """Rejects every invalid combination before compute starts."""
        v = self.values
        problems = []

        if not (v["a2o"] or v["o2a"] or v["composition"]):
            problems.append("at least one of a2o, o2a, composition must be on")
        if not 0.0 <= v["beta"] <= 1.0:
            problems.append("beta must lie in [0, 1], got {}".format(v["beta"]))
        if v["alpha"] < 0:
            problems.append("alpha must be >= 0, got {}".format(v["alpha"]))
        if not v["composition"] and v["beta"] != 1.0:
            problems.append(
                "beta must be 1 with the composition branch off, "
                "got {}".format(v["beta"])
            )
        if not v["composition"] and v["alpha"] == 0:
            problems.append("alpha = 0 with the composition branch off trains nothing")
        if not (v["a2o"] or v["o2a"]) and v["beta"] != 0.0:
            problems.append(
                "beta must be 0 with both cascades off, got {}".format(v["beta"])
            )
        for key in ("primitive_classifier", "composition_classifier"):
            if v[key] not in CLASSIFIERS:
                problems.append(
                    "{} must be one of {}, got '{}'".format(key, CLASSIFIERS, v[key])
                )
        if v["primitive_classifier"] == NONPARAMETRIC and v["d_v"] != v["d"]:
            problems.append(
                "nonparametric primitive heads need d_v == d, got "
                "d_v={} and d={}".format(v["d_v"], v["d"])
            )
        if str(v["profile"]) not in PROFILES:
            problems.append(
                "profile must be one of {}, got '{}'".format(
                    sorted(PROFILES), v["profile"]
                )
            )
        for key in ("d_x", "d", "d_v", "d_c", "hidden", "batch_size"):
            if v[key] < 1:
                problems.append("{} must be >= 1, got {}".format(key, v[key]))
        if v["epochs"] < 0:
            problems.append("epochs must be >= 0, got {}".format(v["epochs"]))
        for key in ("lr", "temperature"):
            if not v[key] > 0:
                problems.append("{} must be > 0, got {}".format(key, v[key]))
        if v["n_biases"] < 2:
            problems.append("n_biases must be >= 2, got {}".format(v["n_biases"]))
        if any(not 0.0 <= b <= 1.0 for b in v["betas"]):
            problems.append("betas must lie in [0, 1], got {}".format(v["betas"]))
        if any(a < 0 for a in v["grad_check_alphas"]):
            problems.append(
                "grad_check_alphas must be >= 0, got {}".format(
                    v["grad_check_alphas"]
                )
            )
        if bool(v["features"]) != bool(v["labels"]):
            problems.append("features and labels paths go together")

        if problems:
            msg = "Invalid configuration: {}."
            log.error(msg.format("; ".join(problems)))
            raise ValueError(msg.format("; ".join(problems)))

        return True

    @property
    def dims(self):
        return OrderedDict(
            (k, self.values[k]) for k in ("d_x", "d", "d_v", "d_c", "hidden")
        )

    @property
    def branches(self):
        return {
            "a2o": self.values["a2o"],
            "o2a": self.values["o2a"],
            "composition": self.values["composition"],
        }

    @property
    def dataset_seed(self):
        seed = self.values["data_seed"]
        return self.values["seed"] if seed is None else seed

    def to_text(self):
        """The configuration as `key = value` lines."""
        lines = []
        for key, value in self.values.items():
            if value is None:
                value = ""
            elif isinstance(value, tuple):
                value = ", ".join(repr(x) for x in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, float):
                value = repr(value)
            lines.append("{} = {}".format(key, value))
        return "\n".join(lines) + "\n"
