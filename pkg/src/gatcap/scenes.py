"""Synthetic spatial scenes with template captions, vocabulary and JSONL I/O.

Appearance features are a fixed prototype per (category, color) plus Gaussian
noise; where an object sits is only visible through its box. Image y grows
downward, so "under" means a larger y.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np

from .regions import RegionSet, box_area, geometry_row

CATEGORIES = ("box", "ball", "cup", "book", "chair", "table", "lamp", "plant")
COLORS = ("red", "green", "blue", "yellow", "white", "black")
RELATIONS = ("left_of", "right_of", "above", "under", "inside", "larger_than")
ANTONYM = {
    "left_of": "right_of", "right_of": "left_of",
    "above": "under", "under": "above",
    "inside": "larger_than", "larger_than": "inside",
}
TEMPLATES = (
    "a {c1} {k1} {rel} a {c2} {k2}",
    "there is a {c1} {k1} {rel} a {c2} {k2}",
    "the {c1} {k1} is {rel} the {c2} {k2}",
)

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")

_PROTOTYPE_SEED = 20211
_MAX_ATTEMPTS = 100


class GenerationError(RuntimeError):
    """No valid placement found within the rejection-sampling budget."""


class Vocabulary:
    """Token/id maps with reserved ids 0=PAD, 1=BOS, 2=EOS, 3=UNK; first-seen order."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: List[str] = list(RESERVED)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        for t in tokens:
            self.add(t)

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    @classmethod
    def build(cls, captions: Iterable[Sequence[str]]) -> "Vocabulary":
        v = cls()
        for cap in captions:
            for tok in cap:
                v.add(tok)
        return v

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def encode(self, tokens: Sequence[str]) -> List[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids: Sequence[int]) -> List[str]:
        out = []
        for i in ids:
            if i == EOS:
                break
            if i in (PAD, BOS):
                continue
            out.append(self.itos[i])
        return out

    def words(self) -> List[str]:
        return self.itos[len(RESERVED):]


@dataclass
class SceneSpec:
    objects: list  # (category id, color id, (x_min, y_min, x_max, y_max))
    relation: str
    subject: int
    object: int


@dataclass
class CaptionPair:
    regions: RegionSet
    references: List[List[str]]
    scene: Optional[SceneSpec] = None

    @property
    def relation(self) -> Optional[str]:
        if self.scene is not None:
            return self.scene.relation
        for ref in self.references:
            found = [t for t in ref if t in ANTONYM]
            if found:
                return found[0]
        return None


def relation_oracle(box_a, box_b) -> str:
    """Spatial relation of box ``a`` to box ``b``.

    Priority: inside, then vertical (only when the x-extents overlap), then
    horizontal (any x-gap, so fully separated boxes read horizontally), then
    size; overlapping boxes where ``a`` is not larger fall back to comparing
    centres horizontally.
    """
    ax0, ay0, ax1, ay1 = box_a
    bx0, by0, bx1, by1 = box_b
    if ax0 > bx0 and ay0 > by0 and ax1 < bx1 and ay1 < by1:
        return "inside"
    x_overlap = ax0 < bx1 and bx0 < ax1
    if x_overlap and ay0 > by1:
        return "under"
    if x_overlap and ay1 < by0:
        return "above"
    if ax1 < bx0:
        return "left_of"
    if ax0 > bx1:
        return "right_of"
    if box_area(box_a) > box_area(box_b):
        return "larger_than"
    return "left_of" if (ax0 + ax1) < (bx0 + bx1) else "right_of"


def prototypes(d: int) -> np.ndarray:
    """Fixed ``[n_categories, n_colors, d]`` appearance prototypes (category part + color part)."""
    rng = np.random.default_rng([_PROTOTYPE_SEED, d])
    cat = rng.standard_normal((len(CATEGORIES), d))
    col = rng.standard_normal((len(COLORS), d))
    return (cat[:, None, :] + 0.5 * col[None, :, :]) / np.sqrt(d)


def _rand_box(rng, w_range=(0.1, 0.4), h_range=(0.1, 0.4)):
    w = rng.uniform(*w_range)
    h = rng.uniform(*h_range)
    x0 = rng.uniform(0.02, 0.98 - w)
    y0 = rng.uniform(0.02, 0.98 - h)
    return (x0, y0, x0 + w, y0 + h)


def _propose(rng, relation: str):
    """Candidate (subject box, object box) aimed at ``relation``; checked by the oracle afterwards."""
    if relation in ("left_of", "right_of"):
        a, b = _rand_box(rng, (0.08, 0.3)), _rand_box(rng, (0.08, 0.3))
        aw, bw = a[2] - a[0], b[2] - b[0]
        split = rng.uniform(0.35, 0.65)
        ax0 = rng.uniform(0.02, max(0.021, split - aw - 0.01))
        bx0 = rng.uniform(split + 0.01, max(split + 0.011, 0.98 - bw))
        left = (ax0, a[1], ax0 + aw, a[3])
        right = (bx0, b[1], bx0 + bw, b[3])
        return (left, right) if relation == "left_of" else (right, left)
    if relation in ("above", "under"):
        w = rng.uniform(0.1, 0.35)
        cx = rng.uniform(0.05 + w / 2, 0.95 - w / 2)
        a = _rand_box(rng, (0.08, 0.35), (0.08, 0.3))
        b = _rand_box(rng, (0.08, 0.35), (0.08, 0.3))
        split = rng.uniform(0.35, 0.65)
        ah, bh = a[3] - a[1], b[3] - b[1]
        ay0 = rng.uniform(0.02, max(0.021, split - ah - 0.01))
        by0 = rng.uniform(split + 0.01, max(split + 0.011, 0.98 - bh))
        aw, bw = a[2] - a[0], b[2] - b[0]
        ax0 = np.clip(cx - aw / 2 + rng.uniform(-0.05, 0.05), 0.01, 0.99 - aw)
        bx0 = np.clip(cx - bw / 2 + rng.uniform(-0.05, 0.05), 0.01, 0.99 - bw)
        top = (ax0, ay0, ax0 + aw, ay0 + ah)
        bottom = (bx0, by0, bx0 + bw, by0 + bh)
        return (top, bottom) if relation == "above" else (bottom, top)
    if relation == "inside":
        outer = _rand_box(rng, (0.3, 0.7), (0.3, 0.7))
        ow, oh = outer[2] - outer[0], outer[3] - outer[1]
        iw, ih = rng.uniform(0.2, 0.7) * ow, rng.uniform(0.2, 0.7) * oh
        ix0 = rng.uniform(outer[0] + 0.01 * ow, outer[2] - iw - 0.01 * ow)
        iy0 = rng.uniform(outer[1] + 0.01 * oh, outer[3] - ih - 0.01 * oh)
        return (ix0, iy0, ix0 + iw, iy0 + ih), outer
    # larger_than: overlapping boxes, subject strictly larger
    big = _rand_box(rng, (0.3, 0.6), (0.3, 0.6))
    small = _rand_box(rng, (0.1, 0.3), (0.1, 0.3))
    sw, sh = small[2] - small[0], small[3] - small[1]
    sx0 = np.clip(rng.uniform(big[0] - sw / 2, big[2] - sw / 2), 0.01, 0.99 - sw)
    sy0 = np.clip(rng.uniform(big[1] - sh / 2, big[3] - sh / 2), 0.01, 0.99 - sh)
    return big, (sx0, sy0, sx0 + sw, sy0 + sh)


def _place(rng, relation: str):
    for _ in range(_MAX_ATTEMPTS):
        a, b = _propose(rng, relation)
        a = tuple(float(v) for v in a)
        b = tuple(float(v) for v in b)
        if _valid_box(a) and _valid_box(b) and relation_oracle(a, b) == relation:
            return a, b
    raise GenerationError(f"could not place a pair satisfying {relation!r} in {_MAX_ATTEMPTS} attempts")


def _valid_box(box) -> bool:
    x0, y0, x1, y1 = box
    return 0.0 < x0 < x1 < 1.0 and 0.0 < y0 < y1 < 1.0


def preferred_relation(subject_category: int, object_category: int) -> str:
    """The relation a (subject, object) category pair shows most often."""
    return RELATIONS[(3 * subject_category + 5 * object_category + 1) % len(RELATIONS)]


def caption(template: str, scene: SceneSpec) -> List[str]:
    s, o = scene.objects[scene.subject], scene.objects[scene.object]
    return template.format(c1=COLORS[s[1]], k1=CATEGORIES[s[0]], rel=scene.relation,
                           c2=COLORS[o[1]], k2=CATEGORIES[o[0]]).split()


def generate_scene(rng: np.random.Generator, n_objects: int, d: int, noise_sigma: float,
                   relation_bias: float = 0.0, protos: Optional[np.ndarray] = None) -> CaptionPair:
    protos = prototypes(d) if protos is None else protos
    kinds = set()
    while len(kinds) < n_objects:
        kinds.add((int(rng.integers(len(CATEGORIES))), int(rng.integers(len(COLORS)))))
    kinds = sorted(kinds)  # subject is the object with the lower (category, color) id
    if relation_bias > 0 and rng.random() < relation_bias:
        relation = preferred_relation(kinds[0][0], kinds[1][0])
    else:
        relation = RELATIONS[int(rng.integers(len(RELATIONS)))]
    subj_box, obj_box = _place(rng, relation)
    boxes = [subj_box, obj_box] + [_rand_box(rng) for _ in range(n_objects - 2)]
    order = rng.permutation(n_objects)  # region order carries no information
    objects = [(kinds[i][0], kinds[i][1], boxes[i]) for i in order]
    inv = {int(j): k for k, j in enumerate(order)}
    scene = SceneSpec(objects, relation, subject=inv[0], object=inv[1])
    feats = np.stack([protos[c, k] + noise_sigma * rng.standard_normal(d) for c, k, _ in objects])
    geom = np.stack([geometry_row(b) for _, _, b in objects])
    n_refs = int(rng.integers(1, len(TEMPLATES) + 1))
    templates = rng.choice(len(TEMPLATES), size=n_refs, replace=False)
    refs = [caption(TEMPLATES[int(t)], scene) for t in sorted(templates)]
    return CaptionPair(RegionSet(feats, geom), refs, scene)


def generate(seed: int, n_scenes: int, n_objects_range=(2, 2), d: int = 32,
             noise_sigma: float = 0.1, relation_bias: float = 0.0) -> List[CaptionPair]:
    """Deterministic list of ``n_scenes`` captioned scenes; scene ``i`` uses sub-seed ``(seed, i)``."""
    if n_scenes < 1:
        raise ValueError("n_scenes must be >= 1")
    if d < 8:
        raise ValueError("feature dimension d must be >= 8")
    lo, hi = n_objects_range
    if lo < 2 or hi < lo:
        raise ValueError("n_objects_range must satisfy 2 <= lo <= hi")
    protos = prototypes(d)
    out = []
    for i in range(n_scenes):
        rng = np.random.default_rng([seed, i])
        n = int(rng.integers(lo, hi + 1))
        out.append(generate_scene(rng, n, d, noise_sigma, relation_bias, protos))
    return out


def spatial_accuracy(predictions: Sequence[Sequence[str]], scenes: Sequence) -> float:
    """Fraction of predictions whose only relation word is the scene's true relation."""
    if len(predictions) != len(scenes):
        raise ValueError("predictions and scenes differ in length")
    if not scenes:
        return 0.0
    hits = 0
    for pred, sc in zip(predictions, scenes):
        truth = sc.relation if isinstance(sc, CaptionPair) else sc
        found = {t for t in pred if t in ANTONYM}
        hits += found == {truth}
    return hits / len(scenes)


# ---------------------------------------------------------------- JSONL I/O

def pair_to_json(pair: CaptionPair) -> dict:
    regions = [{"feat": pair.regions.appearance[i].tolist(),
                "box": pair.regions.geometry[i, :4].tolist(),
                "size": float(pair.regions.geometry[i, 4])}
               for i in range(pair.regions.N)]
    rec = {"regions": regions, "refs": [list(r) for r in pair.references]}
    if pair.scene is not None:
        sc = pair.scene
        rec["relation"] = sc.relation
        rec["subject"] = sc.subject
        rec["object"] = sc.object
        rec["objects"] = [{"category": CATEGORIES[c], "color": COLORS[k]} for c, k, _ in sc.objects]
    return rec


def pair_from_json(rec: dict) -> CaptionPair:
    feats = np.array([r["feat"] for r in rec["regions"]], dtype=np.float64)
    geom = np.array([list(r["box"]) + [r["size"]] for r in rec["regions"]], dtype=np.float64)
    scene = None
    if "relation" in rec and "objects" in rec:
        objects = [(CATEGORIES.index(o["category"]), COLORS.index(o["color"]), tuple(g[:4]))
                   for o, g in zip(rec["objects"], geom.tolist())]
        scene = SceneSpec(objects, rec["relation"], int(rec["subject"]), int(rec["object"]))
    return CaptionPair(RegionSet(feats, geom), [list(r) for r in rec["refs"]], scene)


def dumps_jsonl(pairs: Iterable[CaptionPair]) -> str:
    return "".join(json.dumps(pair_to_json(p), separators=(",", ":")) + "\n" for p in pairs)


def save_jsonl(pairs: Iterable[CaptionPair], path) -> None:
    Path(path).write_text(dumps_jsonl(pairs))


def load_jsonl(path) -> List[CaptionPair]:
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                out.append(pair_from_json(json.loads(line)))
    return out


def split(pairs: Sequence[CaptionPair], n_train: int) -> tuple:
    return list(pairs[:n_train]), list(pairs[n_train:])


__all__ = [
    "CATEGORIES", "COLORS", "RELATIONS", "ANTONYM", "TEMPLATES", "Vocabulary", "SceneSpec",
    "CaptionPair", "GenerationError", "relation_oracle", "generate", "spatial_accuracy",
    "save_jsonl", "load_jsonl", "PAD", "BOS", "EOS", "UNK",
]

