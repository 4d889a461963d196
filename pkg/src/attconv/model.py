"""Model assembly, training, and evaluation.

The stack is fixed: embeddings feed one representation layer (which layer
depends on the variant), max-over-positions pooling produces the sentence
vector, and a logistic regression head produces class probabilities.
Training is plain AdaGrad on the averaged cross-entropy of each batch;
batching itself is a loop over examples, one graph per batch.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from . import autodiff as ad
from . import layers as ly
from .attention import AttentionMatrix, MatchParams
from .data import (
    SEP_TOKEN,
    Dataset,
    EmbeddingMatrix,
    Example,
    Vocabulary,
    init_embeddings,
    make_batches,
)
from .errors import (
    ConfigError,
    ContractError,
    DivergenceError,
    EmptyContextError,
)

VARIANTS = ("light", "advanced", "vanilla-cnn", "attentive-pooling", "no-conv", "no-context")
CONTEXT_MODES = ("intra", "single", "multi-wise", "multi-conc")

# variants whose representation of the text ignores every context
_CONTEXT_FREE = ("vanilla-cnn", "no-context")

_PARAM_STREAM = 1
EMBEDDINGS_KEY = "embeddings"


def _json_key(name: str) -> str:
    return name.replace("_", "-")


@dataclass
class ModelConfig:
    """Architecture switches. Serialized with hyphenated field names."""

    variant: str = "light"
    context_mode: str = "single"
    d: int = 300
    num_classes: int = 2
    match_method: str = "dot"
    self_mode: str = "include-self"
    seed: int = 0

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.context_mode not in CONTEXT_MODES:
            raise ConfigError(
                f"unknown context-mode {self.context_mode!r}; choose from {CONTEXT_MODES}"
            )
        if self.match_method not in ("dot", "bilinear", "additive"):
            raise ConfigError(f"unknown match-method {self.match_method!r}")
        if self.self_mode not in ly.SELF_MODES:
            raise ConfigError(f"unknown self-mode {self.self_mode!r}")
        if self.d < 1:
            raise ConfigError("d must be at least 1")
        if self.num_classes < 2:
            raise ConfigError("num-classes must be at least 2")

    def to_json(self) -> dict:
        return {_json_key(f.name): getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_json(cls, data: dict) -> "ModelConfig":
        return _config_from_json(cls, data)


@dataclass
class TrainConfig:
    """Optimization knobs. The filter width is part of the architecture
    and must stay 3."""

    learning_rate: float = 0.01
    batch_size: int = 50
    epochs: int = 10
    adagrad_epsilon: float = 1e-8
    filter_width: int = 3
    eval_every: int = 1

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise ConfigError("learning-rate must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch-size must be at least 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be at least 1")
        if self.adagrad_epsilon <= 0:
            raise ConfigError("adagrad-epsilon must be positive")
        if self.filter_width != 3:
            raise ConfigError("filter-width is fixed at 3")
        if self.eval_every < 1:
            raise ConfigError("eval-every must be at least 1")

    def to_json(self) -> dict:
        return {_json_key(f.name): getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_json(cls, data: dict) -> "TrainConfig":
        return _config_from_json(cls, data)


def _config_from_json(cls, data: dict):
    known = {_json_key(f.name): f.name for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        attr = known.get(key)
        if attr is None:
            raise ConfigError(f"unknown {cls.__name__} field {key!r}")
        kwargs[attr] = value
    cfg = cls(**kwargs)
    cfg.validate()
    return cfg


@dataclass
class Classifier:
    W: ad.Node
    b: ad.Node

    def tensors(self) -> dict[str, ad.Node]:
        return {"W": self.W, "b": self.b}


@dataclass
class Model:
    """A built network: config, vocabulary, label order, and live tensors.

    ``params`` maps dotted tensor names to the leaf nodes in a fixed build
    order; the checkpoint format and the parameter report both follow it.
    """

    config: ModelConfig
    vocab: Vocabulary
    label_names: list[str]
    params: dict[str, ad.Node]
    net: object
    classifier: Classifier
    embeddings: ad.Node
    embeddings_trainable: bool = True


def _rep_dim(config: ModelConfig) -> int:
    return 2 * config.d if config.variant == "attentive-pooling" else config.d


def build_model(config: ModelConfig, vocab: Vocabulary, label_names: list[str],
                pretrained: tuple[Vocabulary, np.ndarray] | None = None,
                embeddings_trainable: bool = True) -> Model:
    """Initialize every tensor for the configured variant, deterministically.

    Weight matrices draw from the fan-balanced uniform initializer, biases
    start at zero, and the embedding table follows the pretrained/OOV rules
    in ``init_embeddings``. All draws come from substreams of config.seed
    in a fixed order, so equal configs build bitwise-equal models.
    """
    config.validate()
    if len(label_names) != config.num_classes:
        raise ConfigError(
            f"label list has {len(label_names)} entries but num-classes is {config.num_classes}"
        )
    emb: EmbeddingMatrix = init_embeddings(
        vocab, config.d, config.seed, pretrained, trainable=embeddings_trainable
    )
    emb_node = ad.param(emb.vectors, EMBEDDINGS_KEY)
    rng = np.random.default_rng([config.seed, _PARAM_STREAM])
    d = config.d

    if config.variant == "light":
        net = ly.LightParams.create(d, config.match_method, rng)
    elif config.variant == "advanced":
        net = ly.AdvancedParams.create(d, config.match_method, rng)
    elif config.variant in _CONTEXT_FREE:
        net = ly.ConvParams.create(d, rng)
    elif config.variant == "attentive-pooling":
        net = ly.ConvParams.create(d, rng)
    elif config.variant == "no-conv":
        net = ly.NoConvParams.create(d, config.match_method, rng)
    else:  # pragma: no cover - validate() guards this
        raise ConfigError(f"unknown variant {config.variant!r}")

    classifier = Classifier(
        W=ad.param(ad.glorot(rng, config.num_classes, _rep_dim(config)), "W"),
        b=ad.param(np.zeros(config.num_classes), "b"),
    )

    params: dict[str, ad.Node] = {EMBEDDINGS_KEY: emb_node}
    for k, v in net.tensors().items():
        params[f"net.{k}"] = v
    for k, v in classifier.tensors().items():
        params[f"classifier.{k}"] = v

    return Model(
        config=config,
        vocab=vocab,
        label_names=list(label_names),
        params=params,
        net=net,
        classifier=classifier,
        embeddings=emb_node,
        embeddings_trainable=embeddings_trainable,
    )


# ---------------------------------------------------------------------------
# forward


@dataclass
class AttentionRecord:
    """One exported attention pass: which context, which layer, what weights."""

    context_index: int
    layer_index: int
    attention: AttentionMatrix


def join_context_ids(ctx_ids: list[list[int]], sep_id: int) -> list[int]:
    """Concatenate context id sequences with a separator between them."""
    joined: list[int] = []
    for k, ids in enumerate(ctx_ids):
        if k > 0:
            joined.append(sep_id)
        joined.extend(ids)
    return joined


def _context_rep(model: Model, Hx: ad.Node, Hy: ad.Node, mask,
                 trace: list[AttentionMatrix] | None) -> ad.Node:
    """Sentence vector of the text given one context's hidden states."""
    cfg = model.config
    if cfg.variant in ("light", "advanced"):
        fmap = ly.attend_and_convolve(Hx, Hy, model.net, mask=mask, trace=trace)
        rep, _ = ad.max_over_positions(fmap)
        return rep
    if cfg.variant == "no-conv":
        fmap = ly.no_conv_stack(Hx, Hy, model.net, mask=mask, trace=trace)
        rep, _ = ad.max_over_positions(fmap)
        return rep
    if cfg.variant == "attentive-pooling":
        rx, ry = ly.attentive_pooling(Hx, Hy, model.net)
        return ad.concat_vec([rx, ry])
    raise ContractError(f"variant {cfg.variant!r} takes no context")


def forward_ids(model: Model, text_ids: list[int], ctx_ids: list[list[int]],
                trace: list[AttentionRecord] | None = None) -> ad.Node:
    """Class probabilities for one encoded example; graph stays attached.

    ``trace`` collects every attention pass (light/advanced have one per
    context, the no-conv stack has one per layer per context).
    """
    cfg = model.config
    if not text_ids:
        raise ContractError("forward: empty text")
    Hx = ad.embed(model.embeddings, text_ids)

    if cfg.variant in _CONTEXT_FREE:
        fmap = ly.vanilla_conv(Hx, model.net)
        rep, _ = ad.max_over_positions(fmap)
    else:
        rep = _forward_contextual(model, Hx, text_ids, ctx_ids, trace)

    logits = ad.add(ad.matmul(model.classifier.W, rep), model.classifier.b)
    return ad.masked_softmax(logits, np.ones(cfg.num_classes, dtype=bool))


def _forward_contextual(model: Model, Hx: ad.Node, text_ids: list[int],
                        ctx_ids: list[list[int]],
                        trace: list[AttentionRecord] | None) -> ad.Node:
    cfg = model.config

    def run(Hy: ad.Node, mask, ctx_index: int) -> ad.Node:
        passes: list[AttentionMatrix] = []
        rep = _context_rep(model, Hx, Hy, mask, passes if trace is not None else None)
        if trace is not None:
            for li, attn in enumerate(passes):
                trace.append(AttentionRecord(ctx_index, li, attn))
        return rep

    if cfg.context_mode == "intra":
        if ctx_ids:
            raise ConfigError("intra-context model was given contexts")
        mask = ly.intra_mask(len(text_ids), cfg.self_mode)
        return run(Hx, mask, ctx_index=0)

    if cfg.context_mode == "single":
        if len(ctx_ids) != 1:
            raise ConfigError(
                f"single-context model expects exactly 1 context, got {len(ctx_ids)}"
            )
        return run(ad.embed(model.embeddings, ctx_ids[0]), None, ctx_index=0)

    if cfg.context_mode == "multi-wise":
        if not ctx_ids:
            raise EmptyContextError("multi-wise forward needs at least one context")
        reps = [run(ad.embed(model.embeddings, ids), None, j) for j, ids in enumerate(ctx_ids)]
        if len(reps) == 1:
            return reps[0]
        pooled, _ = ad.max_over_positions(ad.stack_cols(reps))
        return pooled

    if cfg.context_mode == "multi-conc":
        if not ctx_ids:
            raise EmptyContextError("multi-conc forward needs at least one context")
        sep = model.vocab.index.get(SEP_TOKEN)
        if sep is None:
            raise ConfigError(f"multi-conc needs {SEP_TOKEN!r} in the vocabulary")
        joined = join_context_ids(ctx_ids, sep)
        return run(ad.embed(model.embeddings, joined), None, ctx_index=0)

    raise ConfigError(f"unknown context-mode {cfg.context_mode!r}")


def forward(model: Model, example: Example,
             trace: list[AttentionRecord] | None = None) -> ad.Node:
    """Encode one Example through the vocabulary and run forward_ids."""
    text_ids = model.vocab.encode(example.text)
    ctx_ids = [model.vocab.encode(c) for c in example.contexts]
    return forward_ids(model, text_ids, ctx_ids, trace=trace)


def cross_entropy(probs: ad.Node, label: int) -> ad.Node:
    """Negative log probability of the gold class, floored at 1e-12."""
    return ad.scale(ad.log(ad.clamp_min(ad.pick(probs, label), 1e-12)), -1.0)


def predict(probs: np.ndarray) -> int:
    """Argmax class; ties resolve to the lowest class id."""
    return int(np.argmax(probs))


# ---------------------------------------------------------------------------
# optimization


@dataclass
class AdaGradState:
    """Per-tensor squared-gradient accumulators, started at zero."""

    acc: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict[str, ad.Node]) -> "AdaGradState":
        return cls(acc={name: np.zeros_like(n.value) for name, n in params.items()})


def adagrad_step(params: dict[str, ad.Node], grads: dict[str, np.ndarray],
                 state: AdaGradState, lr: float, eps: float = 1e-8) -> None:
    """One AdaGrad update: acc += g^2; p -= lr * g / (sqrt(acc) + eps)."""
    for name, node in params.items():
        g = grads.get(name)
        if g is None:
            continue
        acc = state.acc[name]
        acc += g * g
        node.value -= lr * g / (np.sqrt(acc) + eps)


# ---------------------------------------------------------------------------
# training and evaluation


@dataclass
class EvalResult:
    accuracy: float
    n: int
    confusion: np.ndarray  # (K, K), gold rows, predicted columns

    def per_class(self) -> list[dict]:
        out = []
        for k in range(self.confusion.shape[0]):
            out.append({
                "gold": int(self.confusion[k].sum()),
                "correct": int(self.confusion[k, k]),
                "predicted": int(self.confusion[:, k].sum()),
            })
        return out


def evaluate(dataset: Dataset, model: Model, workers: int = 1) -> EvalResult:
    """Accuracy plus a gold-by-predicted confusion matrix.

    ``workers`` shards the example list for concurrent read-only forwards;
    the merged counts are identical for any worker count because every
    example is scored independently.
    """
    if len(dataset) == 0:
        raise ContractError("evaluate: empty dataset")
    if workers < 1:
        raise ContractError("evaluate: workers must be at least 1")
    k = model.config.num_classes

    def score(examples: list[Example]) -> np.ndarray:
        conf = np.zeros((k, k), dtype=np.int64)
        for ex in examples:
            probs = forward(model, ex)
            conf[ex.label, predict(probs.value)] += 1
        return conf

    if workers == 1:
        confusion = score(dataset.examples)
    else:
        shards = [dataset.examples[i::workers] for i in range(workers)]
        shards = [s for s in shards if s]
        with ThreadPoolExecutor(max_workers=len(shards)) as pool:
            parts = list(pool.map(score, shards))
        confusion = np.sum(parts, axis=0)
    accuracy = float(np.trace(confusion)) / len(dataset)
    return EvalResult(accuracy=accuracy, n=len(dataset), confusion=confusion)


def train(model: Model, train_data: Dataset, train_config: TrainConfig,
          dev_data: Dataset | None = None, emit=None,
          stop_at_dev_accuracy: float | None = None) -> list[dict]:
    """AdaGrad training loop; returns the emitted metric records.

    Each epoch reshuffles under a seed derived from the model seed and the
    epoch index, so reruns with equal configs produce identical loss
    trajectories. Train accuracy is the running accuracy of the forward
    passes made during the epoch; dev metrics come from a full evaluation
    every ``eval_every`` epochs. A non-finite loss aborts with diagnostics.
    """
    train_config.validate()
    if len(train_data) == 0:
        raise ContractError("train: empty dataset")
    state = AdaGradState.for_params(model.params)
    metrics: list[dict] = []

    def record(rec: dict) -> None:
        metrics.append(rec)
        if emit is not None:
            emit(json.dumps(rec))

    for epoch in range(1, train_config.epochs + 1):
        batches = make_batches(
            train_data.examples, train_config.batch_size,
            [model.config.seed, 2, epoch], model.vocab,
        )
        loss_sum = 0.0
        correct = 0
        seen = 0
        for bi, batch in enumerate(batches):
            losses = []
            for i in range(len(batch)):
                probs = forward_ids(model, batch.example_text_ids(i), batch.example_ctx_ids(i))
                if predict(probs.value) == batch.labels[i]:
                    correct += 1
                losses.append(cross_entropy(probs, int(batch.labels[i])))
            seen += len(batch)
            loss = ad.mean_of(losses)
            if not np.isfinite(loss.value):
                raise DivergenceError(
                    f"non-finite loss {loss.value!r} at epoch {epoch}, batch {bi}"
                )
            loss_sum += loss.value.item() * len(batch)
            ad.zero_grads(model.params.values())
            ad.backward(loss)
            grads = {}
            for name, node in model.params.items():
                if node.grad is None:
                    continue
                if name == EMBEDDINGS_KEY:
                    if not model.embeddings_trainable:
                        continue
                    node.grad[0, :] = 0.0  # PAD row stays frozen at zero
                grads[name] = node.grad
            adagrad_step(model.params, grads, state,
                         train_config.learning_rate, train_config.adagrad_epsilon)
        record({
            "epoch": epoch,
            "split": "train",
            "loss": loss_sum / seen,
            "accuracy": correct / seen,
        })
        if dev_data is not None and epoch % train_config.eval_every == 0:
            dev = evaluate(dev_data, model)
            dev_loss = _dataset_loss(model, dev_data)
            record({
                "epoch": epoch,
                "split": "dev",
                "loss": dev_loss,
                "accuracy": dev.accuracy,
            })
            if stop_at_dev_accuracy is not None and dev.accuracy >= stop_at_dev_accuracy:
                break
    return metrics


def _dataset_loss(model: Model, dataset: Dataset) -> float:
    total = 0.0
    for ex in dataset.examples:
        probs = forward(model, ex)
        total += cross_entropy(probs, ex.label).value.item()
    return total / len(dataset)


# ---------------------------------------------------------------------------
# parameter accounting


@dataclass
class ParamCount:
    total: int
    rows: list[tuple[str, tuple[int, ...], int]]


def count_params(params: dict[str, ad.Node], include_embeddings: bool = False) -> ParamCount:
    """Tensor-by-tensor parameter table plus the total.

    The default convention excludes the embedding table, since its size
    tracks the vocabulary rather than the architecture; pass
    include_embeddings=True for the full footprint.
    """
    rows = []
    total = 0
    for name, node in params.items():
        if name == EMBEDDINGS_KEY and not include_embeddings:
            continue
        size = int(node.value.size)
        rows.append((name, tuple(node.value.shape), size))
        total += size
    return ParamCount(total=total, rows=rows)
