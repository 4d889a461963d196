"""Text pipeline: vocabulary, embeddings, dataset loading, batching.

Datasets are JSON Lines files. Each record holds a ``label`` string, a
``text`` string, and an optional ``contexts`` list of strings. Tokenization
is lowercase whitespace splitting throughout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ContractError, FormatError

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
SEP_TOKEN = "</s>"
PAD_ID = 0
UNK_ID = 1

# independent substreams of the run seed
_EMBED_STREAM = 0


def tokenize(text: str) -> list[str]:
    return text.lower().split()


@dataclass
class Vocabulary:
    """Token/id bijection with PAD pinned to 0 and UNK pinned to 1."""

    tokens: list[str] = field(default_factory=lambda: [PAD_TOKEN, UNK_TOKEN])
    index: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.index:
            self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def add(self, token: str) -> int:
        """Add a token if new; reserved surface forms are never added."""
        if token in (PAD_TOKEN, UNK_TOKEN):
            return UNK_ID
        got = self.index.get(token)
        if got is None:
            got = len(self.tokens)
            self.tokens.append(token)
            self.index[token] = got
        return got

    def encode(self, tokens: list[str]) -> list[int]:
        """Map tokens to ids; unknown tokens and reserved forms become UNK."""
        out = []
        for t in tokens:
            if t in (PAD_TOKEN, UNK_TOKEN):
                out.append(UNK_ID)
            else:
                out.append(self.index.get(t, UNK_ID))
        return out

    def decode(self, ids) -> list[str]:
        return [self.tokens[int(i)] for i in ids]

    def copy(self) -> "Vocabulary":
        return Vocabulary(tokens=list(self.tokens), index=dict(self.index))


@dataclass
class EmbeddingMatrix:
    """Dense token embeddings, one row per vocabulary id.

    The PAD row stays all-zero and is excluded from gradient updates.
    """

    vectors: np.ndarray
    trainable: bool = True
    pad_id: int = PAD_ID


@dataclass
class Example:
    text: list[str]
    contexts: list[list[str]]
    label: int


@dataclass
class Dataset:
    examples: list[Example]
    label_names: list[str]

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)


@dataclass
class Batch:
    """Fixed-size slice of a shuffled dataset, padded per batch.

    Masks are True exactly at content positions; padding is right-aligned.
    A context row that is entirely False marks an absent context slot.
    """

    text_ids: np.ndarray   # (B, Lx) int64
    text_mask: np.ndarray  # (B, Lx) bool
    ctx_ids: np.ndarray    # (B, C, Ly) int64
    ctx_mask: np.ndarray   # (B, C, Ly) bool
    labels: np.ndarray     # (B,) int64

    def __len__(self) -> int:
        return self.text_ids.shape[0]

    def example_text_ids(self, i: int) -> list[int]:
        return self.text_ids[i][self.text_mask[i]].tolist()

    def example_ctx_ids(self, i: int) -> list[list[int]]:
        out = []
        for j in range(self.ctx_ids.shape[1]):
            m = self.ctx_mask[i, j]
            if m.any():
                out.append(self.ctx_ids[i, j][m].tolist())
        return out


def load_pretrained(path: str, expected_dim: int) -> tuple[Vocabulary, np.ndarray]:
    """Read word vectors in the text format ``token v1 ... vd``.

    An optional first line holding exactly two integers (count and dim) is
    detected and skipped. Every data line must carry exactly
    ``expected_dim`` values; violations raise FormatError with the line
    number. Duplicate tokens keep their first vector. Returns a vocabulary
    of the file's tokens (after PAD and UNK) plus a V x d float64 matrix
    whose PAD and UNK rows are zero; randomized UNK/OOV rows are filled in
    later, under the run seed, by ``init_embeddings``.
    """
    vocab = Vocabulary()
    rows = [np.zeros(expected_dim), np.zeros(expected_dim)]
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            parts = raw.rstrip("\n").split()
            if not parts:
                continue
            if lineno == 1 and len(parts) == 2:
                try:
                    int(parts[0]), int(parts[1])
                    continue  # header line
                except ValueError:
                    pass
            token, values = parts[0], parts[1:]
            if len(values) != expected_dim:
                raise FormatError(
                    f"{path}: line {lineno}: expected {expected_dim} values, got {len(values)}"
                )
            if token in (PAD_TOKEN, UNK_TOKEN) or token in vocab:
                continue
            try:
                vec = np.array([float(v) for v in values], dtype=np.float64)
            except ValueError as exc:
                raise FormatError(f"{path}: line {lineno}: bad float ({exc})") from None
            vocab.add(token)
            rows.append(vec)
    return vocab, np.vstack(rows)


def build_vocab(examples: list[Example], pretrained: Vocabulary | None = None,
                extra_tokens: tuple[str, ...] = ()) -> Vocabulary:
    """Collect corpus tokens in first-appearance order.

    Starts from the pretrained vocabulary when given, so file tokens keep
    their ids and corpus-only tokens are appended after them.
    """
    if not examples:
        raise ContractError("build_vocab: empty corpus")
    vocab = pretrained.copy() if pretrained is not None else Vocabulary()
    for tok in extra_tokens:
        vocab.add(tok)
    for ex in examples:
        for tok in ex.text:
            vocab.add(tok)
        for ctx in ex.contexts:
            for tok in ctx:
                vocab.add(tok)
    return vocab


def init_embeddings(vocab: Vocabulary, dim: int, seed: int,
                    pretrained: tuple[Vocabulary, np.ndarray] | None = None,
                    trainable: bool = True) -> EmbeddingMatrix:
    """Build the V x d embedding table for a run.

    Tokens found in the pretrained file keep their vectors bit for bit.
    Everything else (UNK included) draws i.i.d. uniform [-0.25, 0.25]
    components from the run seed, in ascending id order, so two runs with
    the same seed produce identical tables. The PAD row is zero.
    """
    rng = np.random.default_rng([seed, _EMBED_STREAM])
    table = np.zeros((len(vocab), dim), dtype=np.float64)
    pvocab, pmat = pretrained if pretrained is not None else (None, None)
    for i, tok in enumerate(vocab.tokens):
        if i == PAD_ID:
            continue
        if pvocab is not None and tok in pvocab and pvocab.index[tok] > UNK_ID:
            src = pmat[pvocab.index[tok]]
            if src.shape[0] != dim:
                raise ContractError(
                    f"init_embeddings: pretrained dim {src.shape[0]} does not match {dim}"
                )
            table[i] = src
        else:
            table[i] = rng.uniform(-0.25, 0.25, size=dim)
    return EmbeddingMatrix(vectors=table, trainable=trainable)


def embed_sequence(ids: list[int], table: ad.Node) -> ad.Node:
    """Graph-connected lookup: column i of the result embeds token ids[i]."""
    return ad.embed(table, ids)


def load_jsonl(path: str) -> Dataset:
    """Load a JSONL dataset; labels get contiguous ids in appearance order."""
    examples: list[Example] = []
    label_names: list[str] = []
    label_ids: dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise FormatError(f"{path}: line {lineno}: record must be an object")
            if "text" not in rec:
                raise FormatError(f"{path}: line {lineno}: missing 'text'")
            if "label" not in rec:
                raise FormatError(f"{path}: line {lineno}: missing 'label'")
            text = tokenize(str(rec["text"]))
            if not text:
                raise FormatError(f"{path}: line {lineno}: empty text")
            raw_ctx = rec.get("contexts", [])
            if not isinstance(raw_ctx, list):
                raise FormatError(f"{path}: line {lineno}: 'contexts' must be a list")
            contexts = []
            for k, c in enumerate(raw_ctx):
                toks = tokenize(str(c))
                if not toks:
                    raise FormatError(f"{path}: line {lineno}: context {k} is empty")
                contexts.append(toks)
            name = str(rec["label"])
            if name not in label_ids:
                label_ids[name] = len(label_names)
                label_names.append(name)
            examples.append(Example(text=text, contexts=contexts, label=label_ids[name]))
    return Dataset(examples=examples, label_names=label_names)


def save_jsonl(dataset: Dataset, path: str) -> None:
    """Write a dataset back out in the JSONL input format."""
    with open(path, "w", encoding="utf-8") as fh:
        for ex in dataset.examples:
            rec = {
                "label": dataset.label_names[ex.label],
                "text": " ".join(ex.text),
            }
            if ex.contexts:
                rec["contexts"] = [" ".join(c) for c in ex.contexts]
            fh.write(json.dumps(rec) + "\n")


def make_batches(examples: list[Example], batch_size: int, seed,
                 vocab: Vocabulary) -> list[Batch]:
    """Shuffle under ``seed`` and chunk into padded batches.

    ``seed`` may be an int or a sequence of ints (numpy Generator entropy).
    Every example lands in exactly one batch; only the final batch may be
    short. Padding uses PAD id 0 with masks marking content positions.
    """
    if batch_size < 1:
        raise ContractError("make_batches: batch_size must be at least 1")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(examples))
    batches = []
    for lo in range(0, len(examples), batch_size):
        chunk = [examples[i] for i in order[lo:lo + batch_size]]
        b = len(chunk)
        lx = max(len(ex.text) for ex in chunk)
        n_ctx = max((len(ex.contexts) for ex in chunk), default=0)
        ly = 0
        for ex in chunk:
            for ctx in ex.contexts:
                ly = max(ly, len(ctx))
        text_ids = np.zeros((b, lx), dtype=np.int64)
        text_mask = np.zeros((b, lx), dtype=bool)
        ctx_ids = np.zeros((b, n_ctx, ly), dtype=np.int64)
        ctx_mask = np.zeros((b, n_ctx, ly), dtype=bool)
        labels = np.zeros(b, dtype=np.int64)
        for i, ex in enumerate(chunk):
            ids = vocab.encode(ex.text)
            text_ids[i, :len(ids)] = ids
            text_mask[i, :len(ids)] = True
            for j, ctx in enumerate(ex.contexts):
                cids = vocab.encode(ctx)
                ctx_ids[i, j, :len(cids)] = cids
                ctx_mask[i, j, :len(cids)] = True
            labels[i] = ex.label
        batches.append(Batch(text_ids, text_mask, ctx_ids, ctx_mask, labels))
    return batches


def gen_nonlocal_match(n_examples: int, seq_len: int, vocab_size: int, seed: int) -> Dataset:
    """Synthetic single-sentence task that defeats width-3 convolution.

    Position 0 carries a marker token, the last position a probe token, and
    the label is 1 iff they are equal. The marker/probe pair is always more
    than two positions apart, so no width-3 window ever sees both.

    The intervening distractors are random filler tokens plus two planted
    marker-alphabet tokens at random interior positions (at least three away
    from either end): one echo of the marker, and one balancing token that is
    a fresh marker for positives but a copy of the probe for negatives. The
    plants make the per-token presence profile identical across classes
    (both carry one marker-alphabet token that appears twice and one that
    appears once, with matching position-role patterns), so a model whose
    pooled features only record which tokens occur where gets no signal and
    the label is only recoverable by comparing the two ends.

    Exactly half the examples (rounding down) are positive, shuffled under
    the seed, so the label balance is deterministic.
    """
    if seq_len < 8:
        raise ContractError("gen_nonlocal_match: seq_len must be at least 8")
    if vocab_size < 10:
        raise ContractError("gen_nonlocal_match: vocab_size must be at least 10")
    if n_examples < 2:
        raise ContractError("gen_nonlocal_match: need at least 2 examples")
    n_markers = max(2, 2 * vocab_size // 5)
    markers = [f"m{i}" for i in range(n_markers)]
    fillers = [f"w{i}" for i in range(vocab_size - n_markers)]
    rng = np.random.default_rng(seed)
    labels = np.zeros(n_examples, dtype=np.int64)
    labels[: n_examples // 2] = 1
    rng.shuffle(labels)
    examples = []
    for lab in labels:
        mi = int(rng.integers(n_markers))
        marker = markers[mi]
        other = markers[(mi + 1 + int(rng.integers(n_markers - 1))) % n_markers]
        if lab == 1:
            probe, balance = marker, other
        else:
            probe, balance = other, other
        middle = [fillers[int(k)] for k in rng.integers(len(fillers), size=seq_len - 2)]
        slots = rng.choice(np.arange(3, seq_len - 3), size=2, replace=False)
        middle[int(slots[0]) - 1] = marker
        middle[int(slots[1]) - 1] = balance
        examples.append(Example(text=[marker] + middle + [probe], contexts=[], label=int(lab)))
    return Dataset(examples=examples, label_names=["0", "1"])


def gen_context_match(n_examples: int, text_len: int, ctx_len: int,
                      vocab_size: int, seed: int) -> Dataset:
    """Synthetic pair task whose label is unrecoverable from the text alone.

    The text carries one query token from a small query alphabet among text
    fillers; the context carries exactly one query-alphabet token (the
    answer) among context fillers. Label 1 iff answer equals query. The two
    filler alphabets are disjoint, so the query/answer pair is the only
    token that can ever match across the sentence boundary; the text side
    on its own is label-independent by construction. Balanced the same way
    as gen_nonlocal_match.
    """
    if text_len < 2 or ctx_len < 2:
        raise ContractError("gen_context_match: text_len and ctx_len must be at least 2")
    if vocab_size < 6:
        raise ContractError("gen_context_match: vocab_size must be at least 6")
    n_query = max(2, vocab_size // 5)
    rest = vocab_size - n_query
    queries = [f"q{i}" for i in range(n_query)]
    text_fillers = [f"t{i}" for i in range(rest // 2)]
    ctx_fillers = [f"c{i}" for i in range(rest - rest // 2)]
    rng = np.random.default_rng(seed)
    labels = np.zeros(n_examples, dtype=np.int64)
    labels[: n_examples // 2] = 1
    rng.shuffle(labels)
    examples = []
    for lab in labels:
        qi = int(rng.integers(n_query))
        query = queries[qi]
        if lab == 1:
            answer = query
        else:
            answer = queries[(qi + 1 + int(rng.integers(n_query - 1))) % n_query]
        text = [text_fillers[int(k)] for k in rng.integers(len(text_fillers), size=text_len)]
        text[int(rng.integers(text_len))] = query
        ctx = [ctx_fillers[int(k)] for k in rng.integers(len(ctx_fillers), size=ctx_len)]
        ctx[int(rng.integers(ctx_len))] = answer
        examples.append(Example(text=text, contexts=[ctx], label=int(lab)))
    return Dataset(examples=examples, label_names=["0", "1"])
