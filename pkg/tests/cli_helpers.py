"""Small pipeline configs for end-to-end CLI runs in tests."""
import json
import os

from posenas import cli, lifter, recognizer, spmf
from posenas.config import parse_config

TINY = {
    "data": {
        "synthetic": {"num_classes": 3, "samples_per_class": 6, "frames": 16, "subjects": [1, 2, 3],
                      "lift_classes": 3, "lift_samples_per_class": 4, "lift_frames": 12},
        "lift_protocol": "random_holdout",
        "protocol": "random_holdout",
    },
    "lifter": {"hidden_width": 32, "num_blocks": 1, "epochs": 2, "batch_size": 32},
    "encoder": {"output_height": 16, "output_width": 16},
    "search": {"nodes_per_cell": 2, "stem_channels": 4, "cells_per_stage": 1, "epochs": 2,
               "batch_size": 6, "samples_per_epoch": 2, "n_candidates": 2, "val_fraction": 0.3},
    "recognizer": {"cells_per_stage": 1, "epochs": 2, "batch_size": 6},
}


def write_config(tmp_path, overrides=None, name="cfg.json"):
    cfg = json.loads(json.dumps(TINY))
    for dotted, value in (overrides or {}).items():
        node = cfg
        *head, last = dotted.split(".")
        for k in head:
            node = node.setdefault(k, {})
        node[last] = value
    cfg.setdefault("output_dir", str(tmp_path / "run"))
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def instrumented_pipeline(monkeypatch, cfg_path, out):
    """Run the pipeline while recording the split tags every training routine receives."""
    seen = {"lifter": [], "search": [], "recognizer": []}
    real_lift, real_search, real_recog = lifter.train_lifter, cli.run_search, recognizer.train_recognizer

    def lift(data, config, split_tags=None, **kw):
        seen["lifter"] += list(split_tags)
        return real_lift(data, config, split_tags=split_tags, **kw)

    def search(fit, val, *a, **kw):
        seen["search"] += [(im.sample_id, im.split_tag) for im in fit + val]
        return real_search(fit, val, *a, **kw)

    def recog(params, images, *a, **kw):
        seen["recognizer"] += [(im.sample_id, im.split_tag) for im in images]
        return real_recog(params, images, *a, **kw)

    monkeypatch.setattr(lifter, "train_lifter", lift)
    monkeypatch.setattr(cli, "run_search", search)
    monkeypatch.setattr(recognizer, "train_recognizer", recog)
    code = cli.main(["pipeline", "--config", cfg_path, "--out", out])
    images = spmf.read_image_cache(os.path.join(out, cli.IMAGE_CACHE), cli.Run(parse_config(cfg_path)).encoder_config())
    test_ids = {im.sample_id for im in images if im.split_tag == "test"}
    return code, seen, test_ids
