"""Line-oriented ``key = value`` run configuration with ``#`` comments."""

from dataclasses import asdict, dataclass, fields, replace

from .errors import ConfigError, InvalidInputError
from .graph import Connectivity
from .model import GRAPH_KINDS, default_config
from .training import TrainHyper


@dataclass(frozen=True)
class RunConfig:
    # model
    layer_type: str = "sage"
    connectivity: int = 8
    grid_size: int = 32
    input_channels: int = 1
    num_classes: int = 10
    vertex_attention: bool = True
    feature_attention: bool = True
    # training
    batch_size: int = 20
    lr0: float = 0.02
    lambda_l1: float = 0.002
    l2_decay: float = 0.08
    epochs: int = 150
    lr_step: int = 10
    lr_gamma: float = 0.5
    seed: int = 0
    workers: int = 1
    # input pruning threshold
    iv: float = 0.0
    # paths ("" = unset)
    train_manifest: str = ""
    val_manifest: str = ""
    test_manifest: str = ""
    checkpoint: str = ""
    out_dir: str = ""

    def __post_init__(self):
        if self.layer_type not in GRAPH_KINDS:
            raise ConfigError(f"layer_type must be one of {GRAPH_KINDS}, got {self.layer_type!r}")
        try:
            Connectivity.parse(self.connectivity)
        except InvalidInputError as exc:
            raise ConfigError(str(exc)) from None
        if self.iv < 0:
            raise ConfigError("iv must be >= 0")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        self.hyper()

    def model_config(self):
        return default_config(
            grid_size=self.grid_size,
            input_channels=self.input_channels,
            num_classes=self.num_classes,
            layer_type=self.layer_type,
            connectivity=self.connectivity,
            vertex_attention=self.vertex_attention,
            feature_attention=self.feature_attention,
        )

    def hyper(self):
        return TrainHyper(
            batch_size=self.batch_size, lr0=self.lr0, lambda_l1=self.lambda_l1,
            l2_decay=self.l2_decay, epochs=self.epochs, lr_step=self.lr_step,
            lr_gamma=self.lr_gamma, seed=self.seed,
        )

    def override(self, **kw):
        """Return a copy with every non-None keyword applied."""
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key, text, lineno):
    typ = _TYPES[key]
    try:
        if typ in (bool, "bool"):
            t = text.lower()
            if t not in ("true", "false"):
                raise ValueError(text)
            return t == "true"
        if typ in (int, "int"):
            return int(text)
        if typ in (float, "float"):
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"line {lineno}: bad value for {key}: {text!r}") from None


def parse_run_config(text):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _convert(key, value, lineno)
    return RunConfig(**values)


def load_run_config(path):
    try:
        with open(path) as fh:
            return parse_run_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def format_run_config(cfg):
    out = []
    for key, value in asdict(cfg).items():
        if isinstance(value, bool):
            value = str(value).lower()
        out.append(f"{key} = {value}")
    return "\n".join(out) + "\n"
