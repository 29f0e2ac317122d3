"""Turn 3D joint labels into axis-ordered text prompts and token ids."""
import hashlib
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from .domain import JOINT_NAMES, NUM_JOINTS, check_pose
from .errors import HandPromptError, UnknownToken

AXES = ("x", "y", "z")
PREFIXES = {
    "x": "From left to right, the joints are ",
    "y": "From top to bottom, the joints are ",
    "z": "From near to far, the joints are ",
}
PAD, BOS, EOS = "<pad>", "<bos>", "<eos>"
_WORD_RE = re.compile(r"[a-z]+|[,.]|\S+")


@dataclass(frozen=True)
class SelectionSpec:
    n: int = NUM_JOINTS
    seed: int = 0
    mode: str = "all"
    # explicit joint indices; overrides random sampling when given
    indices: tuple = None

    def __post_init__(self):
        if self.mode not in ("all", "random"):
            raise HandPromptError(f"unknown selection mode {self.mode!r}")
        if self.mode == "all" and self.n != NUM_JOINTS:
            raise HandPromptError("mode 'all' requires n = 21")
        if not 1 <= self.n <= NUM_JOINTS:
            raise HandPromptError(f"selection size must be in 1..21, got {self.n}")
        if self.indices is not None and len(set(self.indices)) != self.n:
            raise HandPromptError("explicit indices must be n distinct joints")

    def joints(self):
        if self.indices is not None:
            return np.array(sorted(self.indices), dtype=np.int64)
        if self.mode == "all":
            return np.arange(NUM_JOINTS)
        rng = np.random.default_rng(self.seed)
        return np.sort(rng.choice(NUM_JOINTS, size=self.n, replace=False))


@dataclass(frozen=True)
class PromptTriple:
    wx: str
    wy: str
    wz: str

    def __iter__(self):
        return iter((self.wx, self.wy, self.wz))


@dataclass(frozen=True)
class TokenSeq:
    ids: tuple
    vocab_version: str

    def __len__(self):
        return len(self.ids)


def order_joints(pose, axis, selection=SelectionSpec()):
    """Selected joint indices sorted ascending along ``axis``; ties keep index order."""
    pose = check_pose(pose)
    col = AXES.index(axis)
    idx = selection.joints()
    # stable sort on an index-sorted selection breaks ties by joint index
    return idx[np.argsort(pose[idx, col], kind="stable")].tolist()


def join_names(names):
    if len(names) == 1:
        return names[0]
    if len(names) == 2:
        return f"{names[0]} and {names[1]}"
    return ", ".join(names[:-1]) + ", and " + names[-1]


def generate_prompts(pose, selection=SelectionSpec()):
    texts = []
    for axis in AXES:
        order = order_joints(pose, axis, selection)
        texts.append(PREFIXES[axis] + join_names([JOINT_NAMES[i] for i in order]) + ".")
    return PromptTriple(*texts)


def parse_prompt(prompt):
    """Recover the joint-index order listed in a generated prompt."""
    for prefix in PREFIXES.values():
        if prompt.startswith(prefix):
            body = prompt[len(prefix):]
            break
    else:
        raise HandPromptError(f"not a generated prompt: {prompt!r}")
    body = body.rstrip(".")
    parts = re.split(r",\s*(?:and\s+)?|\s+and\s+", body)
    return [JOINT_NAMES.index(p.strip()) for p in parts if p.strip()]


class Vocabulary:
    """Closed word-level vocabulary; line number in the vocab file is the id."""

    def __init__(self, tokens):
        self.tokens = list(tokens)
        self.ids = {t: i for i, t in enumerate(self.tokens)}
        self.version = hashlib.sha1("\n".join(self.tokens).encode()).hexdigest()[:12]
        self.pad_id, self.bos_id, self.eos_id = (self.ids[t] for t in (PAD, BOS, EOS))

    @classmethod
    def from_file(cls, path):
        lines = Path(path).read_text().splitlines()
        return cls(line.strip() for line in lines if line.strip())

    def __len__(self):
        return len(self.tokens)

    def tokenize(self, prompt):
        ids = [self.bos_id]
        for word in _WORD_RE.findall(prompt.lower()):
            if word not in self.ids or word in (PAD, BOS, EOS):
                raise UnknownToken(f"unknown token {word!r}")
            ids.append(self.ids[word])
        ids.append(self.eos_id)
        return TokenSeq(tuple(ids), self.version)

    def encode_batch(self, prompts, length):
        """Tokenize and right-pad to ``length``; returns an int64 (B, length) array."""
        out = np.full((len(prompts), length), self.pad_id, dtype=np.int64)
        for i, p in enumerate(prompts):
            ids = p.ids if isinstance(p, TokenSeq) else self.tokenize(p).ids
            if len(ids) > length:
                raise HandPromptError("prompt too long", code="prompt_too_long")
            out[i, :len(ids)] = ids
        return out


@lru_cache(maxsize=1)
def default_vocab():
    text = resources.files("handprompt").joinpath("vocab.txt").read_text()
    return Vocabulary(line.strip() for line in text.splitlines() if line.strip())


def tokenize(prompt, vocab=None):
    return (vocab or default_vocab()).tokenize(prompt)


def max_prompt_length():
    """Token count of the longest possible prompt (all 21 joints) incl. BOS/EOS."""
    names = " ".join(JOINT_NAMES).split()
    template = max(len(p.split()) for p in PREFIXES.values())
    # template words + ',' + name words + (n-1) commas + 'and' + '.' + BOS/EOS
    return template + 1 + len(names) + (NUM_JOINTS - 1) + 1 + 1 + 2
