"""Model assembly, SGD training, evaluation, and synthetic datasets.

The classifier concatenates the flattened graph-convolution features of both
scene graphs with the backbone's pooled embedding and applies a single
affine layer. Graphs are built per sample because the adjacency depends on
each sample's selected node positions. Training is plain SGD with momentum
and a step learning-rate schedule; everything is deterministic given the
config seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backbone import (
    Backbone,
    BackboneConfig,
    build_backbone,
    feature_map_dims,
    he_uniform,
)
from .errors import ConfigurationError, DataError, NumericError
from .fusion import AttentionFusion
from .gcn import gcn_layer, graph_readout, propagation_matrix
from .graphs import build_scene_graphs
from .tensor import (
    ParamRegistry,
    Tensor,
    concat,
    linear,
    no_grad,
    read_agt1,
    slice_batch,
    softmax_cross_entropy,
    softmax_probs,
    write_agt1,
)

K_NODE_CHOICES = (8, 12, 16, 20, 24)
MODALITIES = ("audio", "visual")


@dataclass
class ModelConfig:
    backbone: BackboneConfig
    num_classes: int
    modality: str = "audio"
    k_nodes: int = 20
    gcn_out_channels: int = 256
    gcn_layers: int = 1
    lr0: float = 0.01
    momentum: float = 0.9
    lr_decay_factor: float = 10.0
    lr_decay_every: int = 20
    epochs: int = 60
    batch_size: int = 8
    seed: int = 0
    allow_any_k: bool = False

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ConfigurationError(f"modality must be one of {MODALITIES}")
        if self.num_classes < 2:
            raise ConfigurationError(f"need at least 2 classes, got {self.num_classes}")
        if self.k_nodes % 4 or self.k_nodes < 4:
            raise ConfigurationError(f"k_nodes must be a positive multiple of 4")
        if not self.allow_any_k and self.k_nodes not in K_NODE_CHOICES:
            raise ConfigurationError(
                f"k_nodes {self.k_nodes} outside the standard sweep {K_NODE_CHOICES}; "
                "set allow_any_k to override"
            )
        if self.gcn_out_channels < 1 or self.gcn_layers < 1:
            raise ConfigurationError("gcn_out_channels and gcn_layers must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs and batch_size must be positive")
        if self.lr0 <= 0 or self.lr_decay_factor <= 0 or self.lr_decay_every < 1:
            raise ConfigurationError("bad learning-rate schedule settings")

    @classmethod
    def tiny(
        cls,
        num_classes: int = 4,
        modality: str = "audio",
        k_nodes: int = 8,
        seed: int = 0,
        **overrides,
    ) -> "ModelConfig":
        in_channels = 1 if modality == "audio" else 3
        return cls(
            backbone=BackboneConfig.tiny(in_channels),
            num_classes=num_classes,
            modality=modality,
            k_nodes=k_nodes,
            gcn_out_channels=overrides.pop("gcn_out_channels", 8),
            seed=seed,
            **overrides,
        )

    @classmethod
    def full(
        cls, num_classes: int, modality: str = "visual", seed: int = 0, **overrides
    ) -> "ModelConfig":
        in_channels = 1 if modality == "audio" else 3
        return cls(
            backbone=BackboneConfig.full(in_channels),
            num_classes=num_classes,
            modality=modality,
            seed=seed,
            **overrides,
        )


def lr_schedule(
    epoch: int,
    lr0: float = 0.01,
    decay_factor: float = 10.0,
    decay_every: int = 20,
) -> float:
    """Step schedule: lr0 / decay_factor^(epoch // decay_every)."""
    if epoch < 0:
        raise ConfigurationError(f"epoch must be non-negative, got {epoch}")
    return lr0 / decay_factor ** (epoch // decay_every)


class SceneModel:
    """Backbone -> fusion -> scene graphs -> graph convolution -> affine head."""

    def __init__(self, config: ModelConfig, registry: ParamRegistry, prefix: str = ""):
        self.config = config
        self.registry = registry
        self.prefix = prefix
        self.backbone: Backbone | None = None
        self.fusion: AttentionFusion | None = None
        self.thetas: dict = {}
        self.head_weight: Tensor | None = None
        self.head_bias: Tensor | None = None

    @classmethod
    def build(
        cls,
        config: ModelConfig,
        registry: ParamRegistry | None = None,
        prefix: str = "",
        with_head: bool = True,
    ) -> "SceneModel":
        registry = registry if registry is not None else ParamRegistry()
        rng = np.random.default_rng(config.seed)
        model = cls(config, registry, prefix)
        c4, c5 = config.backbone.stage_channels[3], config.backbone.stage_channels[4]
        model.backbone = build_backbone(
            config.backbone, registry=registry, prefix=f"{prefix}backbone", rng=rng
        )
        model.fusion = AttentionFusion(registry, c4, c5, rng, prefix=f"{prefix}afm")
        for branch in ("sag", "cag"):
            layers = []
            c_in = c4
            for depth in range(config.gcn_layers):
                suffix = "" if depth == 0 else str(depth + 1)
                # Node features are top-intensity cells, several times the
                # typical activation scale; a plain fan-in init makes the
                # first SGD steps large enough to kill the ReLU backbone.
                theta = registry.register(
                    f"{prefix}gcn.{branch}.theta{suffix}",
                    he_uniform(rng, (config.gcn_out_channels, c_in), c_in) * 0.25,
                )
                layers.append(theta)
                c_in = config.gcn_out_channels
            model.thetas[branch] = layers
        if with_head:
            # Zero head: logits start at 0, so the first updates are gentle
            # regardless of the graph features' scale.
            model.head_weight = registry.register(
                f"{prefix}head.weight",
                np.zeros((config.num_classes, model.feature_width)),
            )
            model.head_bias = registry.register(
                f"{prefix}head.bias", np.zeros(config.num_classes)
            )
        return model

    @property
    def feature_width(self) -> int:
        cfg = self.config
        return 2 * cfg.k_nodes * cfg.gcn_out_channels + cfg.backbone.stage_channels[4]

    def check_graph_capacity(self, h: int, w: int) -> None:
        """Validate, by stride arithmetic alone, that k nodes fit the fused map."""
        (h4, w4), _ = feature_map_dims(h, w)
        if h4 * w4 < 3 * self.config.k_nodes:
            raise ConfigurationError(
                f"fused map {h4}x{w4} has {h4 * w4} cells; "
                f"k={self.config.k_nodes} needs at least {3 * self.config.k_nodes}"
            )

    def features(self, x: Tensor, disable_graph: bool = False):
        """Classifier input [N, 2*K*C_gcn + C5]; also returns per-sample graphs."""
        pyramid = self.backbone.forward(x)
        f_ffr = self.fusion.forward(pyramid.f_m4, pyramid.f_m5)
        n = x.data.shape[0]
        cfg = self.config
        all_graphs = []
        if disable_graph:
            rows = Tensor(np.zeros((n, 2 * cfg.k_nodes * cfg.gcn_out_channels)))
        else:
            per_sample = []
            for i in range(n):
                f_i = slice_batch(f_ffr, i)
                salient, contextual = build_scene_graphs(f_i, cfg.k_nodes)
                all_graphs.append((salient, contextual))
                outputs = {}
                for branch, graph in (("sag", salient), ("cag", contextual)):
                    prop = propagation_matrix(graph.adjacency)
                    y = graph.node_features
                    for theta in self.thetas[branch]:
                        y = gcn_layer(y, prop, theta)
                    outputs[branch] = y
                per_sample.append(graph_readout(outputs["sag"], outputs["cag"]))
            rows = per_sample[0] if n == 1 else concat(per_sample, axis=0)
        return concat([rows, pyramid.embedding], axis=1), all_graphs

    def forward(self, x: Tensor, disable_graph: bool = False) -> Tensor:
        feats, _ = self.features(x, disable_graph)
        return linear(feats, self.head_weight, self.head_bias)

    def fused_map_and_graphs(self, x: Tensor):
        """Fused feature map plus the graphs of sample 0 (visualization path)."""
        with no_grad():
            pyramid = self.backbone.forward(x)
            f_ffr = self.fusion.forward(pyramid.f_m4, pyramid.f_m5)
            salient, contextual = build_scene_graphs(
                slice_batch(f_ffr, 0), self.config.k_nodes
            )
        return f_ffr, salient, contextual


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


class SGD:
    """Classic momentum: v <- m*v + g; w <- w - lr*v. Velocity starts at zero."""

    def __init__(self, registry: ParamRegistry, momentum: float = 0.9):
        self.registry = registry
        self.momentum = momentum
        self.velocity = {name: np.zeros_like(p.data) for name, p in registry.items()}

    def step(self, lr: float) -> None:
        if lr <= 0:
            raise ConfigurationError(f"lr must be positive, got {lr}")
        grads = {}
        for name, p in self.registry.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for {name}; step aborted")
            grads[name] = g
        for name, p in self.registry.items():
            v = self.velocity[name]
            v *= self.momentum
            v += grads[name]
            p.data -= lr * v


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


@dataclass
class Example:
    x: np.ndarray  # [C, H, W]
    label: int


@dataclass
class Dataset:
    train: list
    test: list


def synth_dataset(
    kind: str,
    classes: int,
    n: int,
    seed: int,
    height: int = 64,
    width: int = 32,
) -> list:
    """Deterministic synthetic scenes, balanced round-robin over classes.

    audio: the scene is a field of textured patches and the class is the
    texture of the single loudest patch. Patch amplitudes overlap across
    samples (only the within-sample ranking identifies the target) and every
    texture appears among the distractors, so neither a fixed threshold nor
    pooled per-texture energy separates the classes; picking the strongest
    region does. visual: a striped texture in a class-dependent quadrant
    with class-dependent stripe frequency.
    """
    if kind not in ("audio", "visual"):
        raise ConfigurationError(f"unknown synthetic kind {kind!r}")
    if not 2 <= classes <= 8:
        raise ConfigurationError(f"classes must be in [2, 8], got {classes}")
    rng = np.random.default_rng(seed)
    examples = []
    for i in range(n):
        label = i % classes
        if kind == "audio":
            x = _synth_audio(rng, label, classes, height, width)
        else:
            x = _synth_visual(rng, label, classes, height, width)
        examples.append(Example(x=x, label=label))
    return examples


# Bright-cell layouts inside a 2x2-slot block, as (dr, dc) offsets. Every
# layout lights exactly two cells, so total and peak energy are
# class-independent; only the pair's spatial arrangement differs.
_PAIR_LAYOUTS = (
    ((0, 0), (0, 1)),  # horizontal
    ((0, 0), (1, 0)),  # vertical
    ((0, 0), (1, 1)),  # diagonal
    ((0, 1), (1, 0)),  # anti-diagonal
    ((0, 0), (0, 1)),  # repeats shifted brighter/dimmer for class counts > 4
    ((0, 0), (1, 0)),
    ((0, 0), (1, 1)),
    ((0, 1), (1, 0)),
)


def _synth_audio(rng, label, classes, height, width, n_distractors=6):
    # 8x4 slot grid. Every patch is a 2x2-slot block with two bright cells;
    # the class is the pair layout of the loudest block. Distractor blocks
    # share the layout pool and the energy budget, so pooled statistics are
    # ambiguous; within-sample amplitude ranking identifies the target.
    slot_h, slot_w = height // 8, width // 4
    x = rng.uniform(0.0, 0.35, size=(height, width))
    target_amp = rng.uniform(1.9, 3.1)
    occupied = np.zeros((8, 4), dtype=bool)

    def place_block():
        for _ in range(40):
            r = int(rng.integers(0, 7))
            c = int(rng.integers(0, 3))
            if not occupied[r : r + 2, c : c + 2].any():
                occupied[r : r + 2, c : c + 2] = True
                return r, c
        return None

    def stamp(block, kind, amp):
        r, c = block
        uneven = kind >= 4  # second tier: same layouts, lopsided brightness
        for cell_index, (dr, dc) in enumerate(_PAIR_LAYOUTS[kind]):
            rr, cc = (r + dr) * slot_h, (c + dc) * slot_w
            gain = amp * (0.6 if uneven and cell_index else 1.0)
            x[rr : rr + slot_h, cc : cc + slot_w] += gain * rng.uniform(
                0.97, 1.03, size=(slot_h, slot_w)
            )

    stamp(place_block(), label, target_amp)
    for _ in range(n_distractors):
        block = place_block()
        if block is None:
            continue
        stamp(block, int(rng.integers(0, classes)), rng.uniform(1.0, target_amp - 0.8))
    return x[None, :, :]


def _synth_visual(rng, label, classes, height, width):
    quadrant = label % 4
    cycles = 3.0 if label < 4 else 6.0
    y0 = 0 if quadrant in (0, 1) else height // 2
    x0 = 0 if quadrant in (0, 2) else width // 2
    phase = rng.uniform(0.0, 2.0 * np.pi)
    yy = np.arange(height)[:, None]
    x = rng.uniform(0.0, 0.35, size=(3, height, width))
    stripes = 0.5 * (1.0 + np.sin(2.0 * np.pi * cycles * yy / height + phase))
    patch = np.broadcast_to(stripes, (height, width)).copy()
    patch *= rng.uniform(0.6, 1.0, size=(height, width))
    x[:, y0 : y0 + height // 2, x0 : x0 + width // 2] += patch[
        None, y0 : y0 + height // 2, x0 : x0 + width // 2
    ]
    return np.clip(x, 0.0, 1.5)


def synth_splits(
    kind: str,
    classes: int,
    n_train: int,
    n_test: int,
    seed: int,
    **dims,
) -> Dataset:
    return Dataset(
        train=synth_dataset(kind, classes, n_train, seed, **dims),
        test=synth_dataset(kind, classes, n_test, seed + 1, **dims),
    )


# ---------------------------------------------------------------------------
# training and evaluation
# ---------------------------------------------------------------------------


@dataclass
class EpochStats:
    epoch: int
    lr: float
    loss: float
    train_accuracy: float
    test_accuracy: float


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    confusion: np.ndarray | None = None

    @property
    def final_test_accuracy(self) -> float:
        return self.epochs[-1].test_accuracy if self.epochs else 0.0

    @property
    def losses(self) -> list:
        return [e.loss for e in self.epochs]


@dataclass
class EvalResult:
    accuracy: float
    confusion: np.ndarray


def evaluate(
    model: SceneModel,
    examples,
    batch_size: int = 8,
    disable_graph: bool = False,
) -> EvalResult:
    """Accuracy and confusion matrix; confusion[i][j] counts true i predicted j."""
    if not examples:
        raise DataError("cannot evaluate an empty dataset")
    classes = model.config.num_classes
    confusion = np.zeros((classes, classes), dtype=np.int64)
    with no_grad():
        for start in range(0, len(examples), batch_size):
            batch = examples[start : start + batch_size]
            x = Tensor(np.stack([e.x for e in batch]))
            logits = model.forward(x, disable_graph=disable_graph)
            preds = np.argmax(softmax_probs(logits), axis=1)
            for example, pred in zip(batch, preds):
                if not 0 <= example.label < classes:
                    raise DataError(f"label {example.label} out of range [0, {classes})")
                confusion[example.label, pred] += 1
    accuracy = float(np.trace(confusion)) / len(examples)
    return EvalResult(accuracy=accuracy, confusion=confusion)


def train(
    config: ModelConfig,
    dataset: Dataset,
    disable_graph: bool = False,
    progress=None,
):
    """Train a fresh model on dataset.train, tracking test accuracy per epoch.

    Returns (model, TrainReport). Deterministic given config.seed: the
    shuffle sequence, initialization, and batch composition are all derived
    from it.
    """
    if not dataset.train:
        raise DataError("cannot train on an empty dataset")
    for example in dataset.train:
        if not 0 <= example.label < config.num_classes:
            raise DataError(
                f"label {example.label} out of range [0, {config.num_classes})"
            )
    model = SceneModel.build(config)
    optimizer = SGD(model.registry, momentum=config.momentum)
    shuffle_rng = np.random.default_rng(config.seed + 0x5EED)
    report = TrainReport()
    n_train = len(dataset.train)
    for epoch in range(config.epochs):
        lr = lr_schedule(
            epoch, config.lr0, config.lr_decay_factor, config.lr_decay_every
        )
        order = shuffle_rng.permutation(n_train)
        loss_sum = 0.0
        correct = 0
        for start in range(0, n_train, config.batch_size):
            batch = [dataset.train[i] for i in order[start : start + config.batch_size]]
            x = Tensor(np.stack([e.x for e in batch]))
            labels = np.array([e.label for e in batch])
            logits = model.forward(x, disable_graph=disable_graph)
            loss = softmax_cross_entropy(logits, labels)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError(f"loss diverged at epoch {epoch}")
            model.registry.zero_grad()
            loss.backward()
            optimizer.step(lr)
            loss_sum += value * len(batch)
            correct += int(
                (np.argmax(softmax_probs(logits), axis=1) == labels).sum()
            )
        test_accuracy = (
            evaluate(model, dataset.test, config.batch_size, disable_graph).accuracy
            if dataset.test
            else 0.0
        )
        stats = EpochStats(
            epoch=epoch,
            lr=lr,
            loss=loss_sum / n_train,
            train_accuracy=correct / n_train,
            test_accuracy=test_accuracy,
        )
        report.epochs.append(stats)
        if progress is not None:
            progress(stats)
    final = evaluate(
        model, dataset.test if dataset.test else dataset.train,
        config.batch_size, disable_graph,
    )
    report.confusion = final.confusion
    return model, report


# ---------------------------------------------------------------------------
# joint audio-visual late fusion
# ---------------------------------------------------------------------------


@dataclass
class PairedExample:
    x_audio: np.ndarray
    x_visual: np.ndarray
    label: int


class JointSceneModel:
    """Late fusion: concatenate both modalities' classifier inputs, one joint head."""

    def __init__(self, audio: SceneModel, visual: SceneModel, registry, head_w, head_b):
        self.audio = audio
        self.visual = visual
        self.registry = registry
        self.head_weight = head_w
        self.head_bias = head_b
        self.num_classes = head_w.data.shape[0]

    @classmethod
    def build(
        cls, audio_config: ModelConfig, visual_config: ModelConfig
    ) -> "JointSceneModel":
        if audio_config.num_classes != visual_config.num_classes:
            raise ConfigurationError("modality configs disagree on class count")
        registry = ParamRegistry()
        audio = SceneModel.build(
            audio_config, registry=registry, prefix="audio.", with_head=False
        )
        visual = SceneModel.build(
            visual_config, registry=registry, prefix="visual.", with_head=False
        )
        rng = np.random.default_rng(audio_config.seed + 175)
        width = audio.feature_width + visual.feature_width
        head_w = registry.register(
            "head.weight",
            he_uniform(rng, (audio_config.num_classes, width), width),
        )
        head_b = registry.register("head.bias", np.zeros(audio_config.num_classes))
        return cls(audio, visual, registry, head_w, head_b)

    def forward(self, x_audio: Tensor, x_visual: Tensor) -> Tensor:
        feats_a, _ = self.audio.features(x_audio)
        feats_v, _ = self.visual.features(x_visual)
        return linear(concat([feats_a, feats_v], axis=1), self.head_weight, self.head_bias)


# ---------------------------------------------------------------------------
# checkpoints and flat config text
# ---------------------------------------------------------------------------

CONFIG_FILENAME = "config.txt"


def config_to_flat(config: ModelConfig) -> dict:
    return {
        "model.modality": config.modality,
        "model.num_classes": str(config.num_classes),
        "model.k_nodes": str(config.k_nodes),
        "model.gcn_out_channels": str(config.gcn_out_channels),
        "model.gcn_layers": str(config.gcn_layers),
        "model.seed": str(config.seed),
        "model.allow_any_k": str(int(config.allow_any_k)),
        "backbone.in_channels": str(config.backbone.in_channels),
        "backbone.stage_channels": ",".join(map(str, config.backbone.stage_channels)),
        "backbone.blocks_per_stage": ",".join(map(str, config.backbone.blocks_per_stage)),
        "backbone.block_type": config.backbone.block_type,
        "train.lr0": repr(config.lr0),
        "train.momentum": repr(config.momentum),
        "train.lr_decay_factor": repr(config.lr_decay_factor),
        "train.lr_decay_every": str(config.lr_decay_every),
        "train.epochs": str(config.epochs),
        "train.batch_size": str(config.batch_size),
    }


def config_from_flat(flat: dict) -> ModelConfig:
    def get(key, default=None):
        if key in flat:
            return flat[key]
        if default is None:
            raise ConfigurationError(f"missing config key {key}")
        return default

    backbone = BackboneConfig(
        in_channels=int(get("backbone.in_channels")),
        stage_channels=[int(v) for v in get("backbone.stage_channels").split(",")],
        blocks_per_stage=[int(v) for v in get("backbone.blocks_per_stage").split(",")],
        block_type=get("backbone.block_type", "basic"),
    )
    return ModelConfig(
        backbone=backbone,
        num_classes=int(get("model.num_classes")),
        modality=get("model.modality", "audio"),
        k_nodes=int(get("model.k_nodes", "20")),
        gcn_out_channels=int(get("model.gcn_out_channels", "256")),
        gcn_layers=int(get("model.gcn_layers", "1")),
        lr0=float(get("train.lr0", "0.01")),
        momentum=float(get("train.momentum", "0.9")),
        lr_decay_factor=float(get("train.lr_decay_factor", "10")),
        lr_decay_every=int(get("train.lr_decay_every", "20")),
        epochs=int(get("train.epochs", "60")),
        batch_size=int(get("train.batch_size", "8")),
        seed=int(get("model.seed", "0")),
        allow_any_k=bool(int(get("model.allow_any_k", "0"))),
    )


def parse_config_text(text: str) -> dict:
    """Flat `key = value` lines; blank lines and #-comments are skipped."""
    flat = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigurationError(f"line {lineno}: expected `key = value`")
        key, value = stripped.split("=", 1)
        flat[key.strip()] = value.strip()
    return flat


def config_to_text(config: ModelConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in config_to_flat(config).items())


def save_checkpoint(model: SceneModel, directory) -> None:
    """Directory of AGT1 tensors named by registry key, plus the config manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / CONFIG_FILENAME).write_text(
        config_to_text(model.config), encoding="utf-8"
    )
    for name, p in model.registry.items():
        write_agt1(directory / f"{name}.agt1", p.data)


def load_checkpoint(directory) -> SceneModel:
    directory = Path(directory)
    manifest = directory / CONFIG_FILENAME
    if not manifest.is_file():
        raise DataError(f"{directory}: missing {CONFIG_FILENAME}")
    config = config_from_flat(parse_config_text(manifest.read_text(encoding="utf-8")))
    model = SceneModel.build(config)
    for name, p in model.registry.items():
        path = directory / f"{name}.agt1"
        if not path.is_file():
            raise DataError(f"{directory}: missing tensor {name}")
        value = read_agt1(path)
        if value.shape != p.data.shape:
            raise DataError(
                f"{name}: checkpoint shape {value.shape} != model shape {p.data.shape}"
            )
        p.data[...] = value
    return model
