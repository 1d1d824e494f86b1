from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    # dimensions
    d_in: int = 32
    d_model: int = 24
    d: int = 16
    d_g: int = 16
    d_h: int = 16
    n_au: int = 8
    n_expr: int = 6
    n_layers: int = 2
    leaky_slope: float = 0.2
    # bottleneck
    lambda_ib: float = 0.01
    lambda_decorr: float = 0.1
    lambda_align: float = 0.1
    # graphs
    lambda_dag_g: float = 0.1
    lambda_dag_s: float = 0.1
    au_self_loops: bool = False
    coherent_init: bool = True
    detach_graph_inputs: bool = True
    head_init_scale: float = 0.01
    # counterfactual
    lambda_consist: float = 0.1
    lambda_discrep: float = 0.1
    delta_feat: float = 1.0
    delta_logit: float = 1.0
    eta_feat: float = 1.0
    eta_logit: float = 1.0
    cf_gamma: float = 10.0
    cf_theta_init: float = 0.3
    cf_noise_std: float = 0.5
    cf_site: str = "sample"
    cf_detach_saliency: bool = True
    # expression branch weight
    lambda_expr: float = 1.0
    # optimizer
    lr: float = 0.05
    momentum: float = 0.9
    grad_clip: float = 5.0
    steps: int = 5000
    batch_size: int = 64
    seed: int = 0
    # module toggles (ablation rows)
    gc: bool = True
    sac: bool = True
    dis: bool = True
    cf: bool = True
    dag: bool = True

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name.startswith(("lambda_", "delta_", "eta_")) and v < 0:
                raise ConfigError(f"{f.name} must be non-negative, got {v}")
        if self.cf_site not in ("sample", "global"):
            raise ConfigError(f"cf_site must be 'sample' or 'global', got {self.cf_site!r}")
        if self.n_layers < 1:
            raise ConfigError("n_layers must be >= 1")
        if self.d_h != self.d:
            raise ConfigError("d_h must equal d so layer outputs can serve as next-layer queries")
        if self.cf_gamma <= 0 or self.cf_noise_std < 0:
            raise ConfigError("cf_gamma must be positive and cf_noise_std non-negative")
        if self.grad_clip < 0:
            raise ConfigError("grad_clip must be non-negative (0 disables clipping)")
        if self.batch_size < 4:
            raise ConfigError("batch_size must be >= 4 for the HSIC terms")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        clean = {}
        for k, v in d.items():
            default = known[k].default
            if isinstance(default, bool):
                if not isinstance(v, bool):
                    raise ConfigError(f"{k} must be a boolean")
            elif isinstance(default, int) and not (isinstance(v, int) and not isinstance(v, bool)):
                raise ConfigError(f"{k} must be an integer")
            elif isinstance(default, float):
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise ConfigError(f"{k} must be a number")
                v = float(v)
            clean[k] = v
        return cls(**clean)

    def with_(self, **kw) -> TrainConfig:
        return replace(self, **kw)


def load_config(path) -> TrainConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return TrainConfig.from_dict(data)


def save_config(cfg: TrainConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
