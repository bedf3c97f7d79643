"""Shared test utilities: finite-difference gradients and a synthetic
paraphrase corpus."""

from __future__ import annotations

import numpy as np

from i2ce import autodiff as ad
from i2ce.text import CaptionGroup, Vocab, build_vocab


def numeric_grads(f, tensors, eps: float = 1e-4) -> list[np.ndarray]:
    """Central finite differences of the scalar-valued f() with respect to
    each tensor's entries (mutating data in place, then restoring)."""
    grads = []
    with ad.no_grad():
        for t in tensors:
            g = np.zeros_like(t.data)
            flat, gf = t.data.reshape(-1), g.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                hi = float(f())
                flat[i] = orig - eps
                lo = float(f())
                flat[i] = orig
                gf[i] = (hi - lo) / (2.0 * eps)
            grads.append(g)
    return grads


def assert_grads_close(analytic, numeric, abs_tol: float = 1e-4, rel_tol: float = 1e-3,
                       label: str = ""):
    for k, (a, n) in enumerate(zip(analytic, numeric)):
        diff = np.abs(a - n)
        bound = np.maximum(abs_tol, rel_tol * np.abs(n))
        if not np.all(diff <= bound):
            worst = float((diff - bound).max())
            raise AssertionError(
                f"gradient mismatch {label} (tensor {k}): worst excess {worst:.3e}, "
                f"max |analytic - numeric| = {float(diff.max()):.3e}")


# synthetic paraphrase corpus ---------------------------------------

_ADJ = "red blue green small large old young bright dark quiet".split()
_NOUN = "bird dog cat boat train horse child man woman plane".split()
_VERB = "sits runs sleeps waits stands jumps rests plays".split()
_PLACE = "tree field house river dock station barn park shore hill".split()

_TEMPLATES = (
    "a {a} {n} {v} near the {p}",
    "the {a} {n} {v} by the {p}",
    "one {a} {n} {v} at the {p}",
)


def toy_corpus(n_groups: int, seed: int = 0, refs_per_group: int = 3) -> list[dict]:
    """COCO-style caption groups whose references paraphrase one distinct
    (adjective, noun, verb, place) topic each."""
    rng = np.random.default_rng(seed)
    combos = [(a, n, v, p) for a in _ADJ for n in _NOUN for v in _VERB for p in _PLACE]
    picks = rng.choice(len(combos), size=n_groups, replace=False)
    corpus = []
    for i, ci in enumerate(picks):
        a, n, v, p = combos[ci]
        captions = [t.format(a=a, n=n, v=v, p=p) for t in _TEMPLATES[:refs_per_group]]
        corpus.append({"image_id": f"img{i:03d}", "captions": captions})
    return corpus


def encode_corpus(corpus: list[dict], min_freq: int = 1, t_max: int = 20
                  ) -> tuple[Vocab, list[CaptionGroup]]:
    from i2ce.text import tokenize

    sentences = [c for entry in corpus for c in entry["captions"]]
    vocab = build_vocab(sentences, min_freq=min_freq)
    groups = [CaptionGroup(entry["image_id"],
                           [vocab.encode(tokenize(c), max_tokens=t_max) for c in entry["captions"]])
              for entry in corpus]
    return vocab, groups
