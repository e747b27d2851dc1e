"""Desk-scale run configuration shared by the CLI, demos and acceptance suite."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from affordmap.decoder import DecoderConfig
from affordmap.errors import ValidationError
from affordmap.evaluation import EvalCase
from affordmap.scenes import SceneConfig, generate_scenes, scenes_to_dataset
from affordmap.training import Dataset, TrainConfig, train

# The learning rate is ~1000x the large-scale recipe, so weight decay is scaled
# down by the same factor to keep the per-step shrinkage lr * wd comparable.
DESK_TRAIN = TrainConfig(lr_peak=3e-2, warmup_steps=200, total_steps=2000, weight_decay=1e-4,
                         batch_size=16, seed=0, eval_interval=250)
DESK_SCENE = SceneConfig(feature_size=16, s=4, channels=16, noise=0.02)
DESK_DECODER = DecoderConfig("ahd", channels=16, c_m=16, k=3, s=4)


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = DESK_TRAIN
    scene: SceneConfig = DESK_SCENE
    decoder: DecoderConfig = DESK_DECODER
    n_train: int = 512
    n_eval: int = 128
    data_seed: int = 1

    def to_dict(self) -> dict:
        d = asdict(self.train)
        d["scene"] = asdict(self.scene)
        d["decoder"] = {k: v for k, v in asdict(self.decoder).items() if k != "kind"}
        d.update(n_train=self.n_train, n_eval=self.n_eval, data_seed=self.data_seed)
        return d

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, train=replace(self.train, seed=int(seed)))


def _pick(cls, d, where):
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ValidationError(f"{where}: unknown keys {sorted(unknown)}")
    return d


def run_config_from_dict(d: dict, base: RunConfig | None = None) -> RunConfig:
    """Flat TrainConfig keys plus optional ``scene``, ``decoder``, ``n_train``, ``n_eval``, ``data_seed``."""
    base = base or RunConfig()
    d = dict(d)
    scene = d.pop("scene", {})
    decoder = d.pop("decoder", {})
    extras = {k: d.pop(k) for k in ("n_train", "n_eval", "data_seed") if k in d}
    try:
        train_cfg = replace(base.train, **_pick(TrainConfig, d, "config"))
        if "mix" in scene or "object_size" in scene:
            scene = {**scene, **{k: tuple(scene[k]) for k in ("mix", "object_size") if k in scene}}
        scene_cfg = replace(base.scene, **_pick(SceneConfig, scene, "config.scene"))
        dec_cfg = replace(base.decoder, **_pick(DecoderConfig, decoder, "config.decoder"))
        return RunConfig(train_cfg, scene_cfg, dec_cfg, **extras)
    except ValidationError:
        raise
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"config: {exc}") from None


def load_run_config(path) -> RunConfig:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(d, dict):
        raise ValidationError(f"{path}: config must be a JSON object")
    return run_config_from_dict(d)


def scenes_to_cases(scenes) -> list[EvalCase]:
    return [EvalCase(s.features, s.success_region, s.annotation.id, s.target) for s in scenes]


@dataclass
class RunData:
    train_scenes: list
    eval_scenes: list
    train_set: Dataset = field(init=False)
    eval_set: Dataset = field(init=False)

    def __post_init__(self):
        self.train_set = scenes_to_dataset(self.train_scenes)
        self.eval_set = scenes_to_dataset(self.eval_scenes)

    @property
    def cases(self) -> list[EvalCase]:
        return scenes_to_cases(self.eval_scenes)


def build_data(run: RunConfig) -> RunData:
    train_seed, eval_seed = np.random.SeedSequence(run.data_seed).generate_state(2)
    return RunData(generate_scenes(run.n_train, int(train_seed), run.scene),
                   generate_scenes(run.n_eval, int(eval_seed), run.scene))


def decoder_config_for(run: RunConfig, kind: str) -> DecoderConfig:
    return replace(run.decoder, kind=kind, channels=run.scene.channels, s=run.scene.s)


def train_run(run: RunConfig, kind: str, data: RunData | None = None):
    data = data or build_data(run)
    return train(run.train, kind, data.train_set, data.eval_set, decoder_config_for(run, kind))
