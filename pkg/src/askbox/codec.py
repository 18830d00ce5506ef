"""Closed-vocabulary word tokenizer with location tokens and task prompts.

The vocabulary is: special tokens, then the closed lexicon of the shape
world and its dialog grammar, then 1000 contiguous location tokens
<bin_0>..<bin_999>. Bounding boxes are encoded as exactly four location
tokens via bin(v) = min(floor(v * 1000), 999), emitted as (x1, y1, x2, y2),
and decoded back with v = bin / 1000.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass

from .errors import DecodeError, EncodingError
from .world import COLORS, SHAPES, SIZES

N_BINS = 1000

PAD, BOS, EOS, SEP = "<pad>", "<bos>", "<eos>", "<sep>"
Q_MARK, O_MARK = "<q>", "<o>"  # dialog speaker markers

TASKS = ("ground", "oracle_answer", "ask", "stop_check", "caption", "vqa", "exist")
TASK_MARKERS = {
    "ground": "<ground>",
    "oracle_answer": "<oracle>",
    "ask": "<ask>",
    "stop_check": "<stop>",
    "caption": "<caption>",
    "vqa": "<vqa>",
    "exist": "<exist>",
}

SPECIALS = (PAD, BOS, EOS, SEP, Q_MARK, O_MARK) + tuple(TASK_MARKERS[t] for t in TASKS)

STOP_QUESTION = "can you specify the target object ?"

# Every plain word the world and the dialog grammar can produce.
LEXICON = tuple(
    dict.fromkeys(
        list(COLORS)
        + list(SHAPES)
        + list(SIZES)
        + ["yes", "no", "n/a"]
        + "is it a an in the what half left right top bottom there".split()
        + "can you specify target object".split()
        + ["color", "shape", "size"]
        + ["?", "."]
        + "where answer ask question describe image about for".split()
    )
)

_BIN_RE = re.compile(r"^<bin_(\d{1,3})>$")


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]
    loc_base: int

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def bos_id(self) -> int:
        return 1

    @property
    def eos_id(self) -> int:
        return 2

    @property
    def sep_id(self) -> int:
        return 3

    def id_of(self, token: str) -> int:
        return self._index[token]

    def __post_init__(self):
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    def is_location(self, token_id: int) -> bool:
        return self.loc_base <= token_id < self.loc_base + N_BINS

    def lexicon_hash(self) -> str:
        h = hashlib.sha256("\n".join(self.tokens).encode("utf-8"))
        return h.hexdigest()[:16]


def build_vocab() -> Vocab:
    tokens = list(SPECIALS) + list(LEXICON)
    loc_base = len(tokens)
    tokens += [f"<bin_{i}>" for i in range(N_BINS)]
    return Vocab(tokens=tuple(tokens), loc_base=loc_base)


def save_vocab(vocab: Vocab, path: str) -> None:
    """One token per line, after a header recording loc_base and the hash."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# loc_base={vocab.loc_base} lexicon_hash={vocab.lexicon_hash()}\n")
        for tok in vocab.tokens:
            f.write(tok + "\n")


def load_vocab(path: str) -> Vocab:
    with open(path, encoding="utf-8") as f:
        header = f.readline()
        m = re.match(r"# loc_base=(\d+) lexicon_hash=([0-9a-f]+)", header)
        if not m:
            raise DecodeError(f"bad vocab header: {header!r}")
        tokens = tuple(line.rstrip("\n") for line in f)
    vocab = Vocab(tokens=tokens, loc_base=int(m.group(1)))
    if vocab.lexicon_hash() != m.group(2):
        raise DecodeError("vocab file hash does not match its token list")
    return vocab


def normalize_text(text: str) -> list[str]:
    """Lowercase and whitespace-split, padding '?' and '.' into words."""
    text = text.lower().replace("?", " ? ").replace(".", " . ")
    # "n/a" survives because '/' is untouched; "<bin_12>" has no punctuation.
    words = text.split()
    return ["." if w == "." else w for w in words]


def encode_text(vocab: Vocab, text: str) -> list[int]:
    """Encode lexicon text (plus <bin_i> literals) to token ids."""
    ids, unknown = [], []
    for word in normalize_text(text):
        m = _BIN_RE.match(word)
        if m:
            ids.append(vocab.loc_base + int(m.group(1)))
        elif word in LEXICON:
            ids.append(vocab.id_of(word))
        else:
            unknown.append(word)
    if unknown:
        raise EncodingError(unknown)
    return ids


def decode_text(vocab: Vocab, ids: list[int]) -> str:
    """Inverse of encode_text; never fails, specials are skipped."""
    words = []
    for i in ids:
        if 0 <= i < len(vocab.tokens):
            tok = vocab.tokens[i]
            if tok in (PAD, BOS, EOS):
                continue
            words.append(tok)
    return " ".join(words)


def bbox_bin(v: float) -> int:
    # The small epsilon keeps values sitting on a bin edge (0.12, 0.3, ...)
    # from being floored into the bin below by float error.
    return min(int(v * N_BINS + 1e-9), N_BINS - 1)


def encode_bbox(vocab: Vocab, bbox: tuple[float, float, float, float]) -> list[int]:
    """Quantize a normalized (x1, y1, x2, y2) box to four location tokens."""
    x1, y1, x2, y2 = bbox
    if not (0 <= x1 <= x2 <= 1 and 0 <= y1 <= y2 <= 1):
        raise ValueError(f"bbox out of range or inverted: {bbox}")
    return [vocab.loc_base + bbox_bin(v) for v in (x1, y1, x2, y2)]


def decode_bbox(vocab: Vocab, ids: list[int]) -> tuple[float, float, float, float]:
    """Four location tokens back to a normalized box.

    An inverted emission is repaired by sorting each axis, so early-training
    models still yield a scoreable box.
    """
    if len(ids) != 4:
        raise DecodeError(f"expected 4 location tokens, got {len(ids)}")
    if not all(vocab.is_location(i) for i in ids):
        raise DecodeError("non-location token in bbox sequence")
    x1, y1, x2, y2 = ((i - vocab.loc_base) / N_BINS for i in ids)
    if x1 > x2:
        x1, x2 = x2, x1
    if y1 > y2:
        y1, y2 = y2, y1
    return (x1, y1, x2, y2)


def bbox_token_text(bbox: tuple[float, float, float, float]) -> str:
    """Box rendered as literal <bin_i> words, for embedding in prompts."""
    x1, y1, x2, y2 = bbox
    return " ".join(f"<bin_{bbox_bin(v)}>" for v in (x1, y1, x2, y2))


def serialize_history(turns) -> str:
    """Speaker-tagged flat rendering of dialog turns."""
    parts = []
    for turn in turns:
        marker = Q_MARK if turn.speaker == "questioner" else O_MARK
        parts.append(f"{marker} {turn.text}")
    return " ".join(parts)


_TASK_SENTENCES = {
    "ground": "where is the target ?",
    "oracle_answer": "answer for target",
    "ask": "ask a question .",
    "stop_check": STOP_QUESTION,
    "caption": "describe the image .",
    "vqa": "answer about",
    "exist": None,  # built inline from the object phrase
}


def prompt_text(task: str, instruction: str = "", history=(), extra: str | None = None) -> str:
    """Deterministic prompt for one sub-task, in text form.

    Layout: task marker, fixed task sentence, then instruction and the
    speaker-tagged history, <sep>-delimited. `extra` carries the box tokens
    for oracle_answer/vqa and the object phrase for exist.
    """
    if task not in TASKS:
        raise ValueError(f"unknown task tag: {task}")
    parts = [TASK_MARKERS[task]]
    if task == "exist":
        parts.append(f"is there a {extra} ?")
    elif task in ("oracle_answer", "vqa"):
        parts.append(_TASK_SENTENCES[task])
        if extra:
            parts.append(extra)
    else:
        parts.append(_TASK_SENTENCES[task])
    if instruction:
        parts.append(SEP)
        parts.append(instruction)
    hist = serialize_history(history)
    if hist:
        parts.append(SEP)
        parts.append(hist)
    return " ".join(parts)


def encode_prompt_text(vocab: Vocab, text: str) -> list[int]:
    """encode_text that also accepts special marker tokens as literals."""
    ids = []
    for word in normalize_text(text):
        if word in SPECIALS:
            ids.append(vocab.id_of(word))
            continue
        m = _BIN_RE.match(word)
        if m:
            ids.append(vocab.loc_base + int(m.group(1)))
        elif word in LEXICON:
            ids.append(vocab.id_of(word))
        else:
            raise EncodingError([word])
    return ids


def build_prompt(vocab: Vocab, task: str, instruction: str = "", history=(), extra: str | None = None) -> list[int]:
    """prompt_text composed and encoded in one step."""
    return encode_prompt_text(vocab, prompt_text(task, instruction, history, extra))
