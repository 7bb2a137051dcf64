"""Per-image dumps of slot attention and the filter's mask, one JSON record per line.

Each image gets ``n_iters`` records of the form
``{"record": "iteration", "image": id, "iteration": t, "attention": [[...], ...]}``
followed by one ``"final"`` record with the slot similarities, their min-max
scaled values, the mask, the last attention map and ``combined``. Floats are
written with ``repr`` precision, so reading a dump back gives the exact
doubles of the forward pass.
"""
import json

import numpy as np

from .errors import UsageError
from .filtering import filter_features
from .rng import RNG
from .slot_attention import default_noise_scale, run


def image_rng(seed, image_id):
    """Slot-jitter stream of one exported image, independent of which ids are requested."""
    return RNG(seed).substream(4).substream(int(image_id))


def attention_records(store, params, cfg, image_ids, seed=0):
    ids = [int(i) for i in image_ids]
    for i in ids:
        if not 0 <= i < len(store):
            raise UsageError(f"unknown image id {i}; store holds {len(store)} images")
    for i in ids:
        patches = store.patches[i]
        token = store.tokens[i]
        state = run(patches, token, cfg.n_slots, cfg.n_iters, params.slot, image_rng(seed, i),
                    noise_scale=default_noise_scale(token, cfg.slot_noise), keep_history=True)
        res = filter_features(patches, token, state, cfg.filter)
        for t, attn in enumerate(state.history):
            yield {"record": "iteration", "image": i, "label": int(store.labels[i]),
                   "iteration": t, "attention": attn.tolist()}
        yield {"record": "final", "image": i, "label": int(store.labels[i]),
               "similarity": res.similarity.data.tolist(),
               "similarity_norm": res.similarity_norm.tolist(),
               "mask": res.mask.astype(int).tolist(),
               "n_passing": int(res.n_passing),
               "attention": state.attention.data.tolist(),
               "combined": res.combined.data.tolist()}


def export_attention(store, params, cfg, image_ids, path, seed=0):
    """Write the dump to ``path``; returns the number of records written."""
    recs = list(attention_records(store, params, cfg, image_ids, seed))
    with open(path, "w", encoding="utf-8") as fh:
        for r in recs:
            fh.write(json.dumps(r) + "\n")
    return len(recs)


def read_dump(path):
    with open(path, encoding="utf-8") as fh:
        recs = [json.loads(line) for line in fh if line.strip()]
    for r in recs:
        for key in ("attention", "similarity", "similarity_norm", "combined"):
            if key in r:
                r[key] = np.asarray(r[key], dtype=np.float64)
    return recs
