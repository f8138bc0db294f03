"""Command-line entry point: one subcommand per pipeline stage.

Every stage reads its inputs from the output directory (or the dataset paths
in the config), writes one artifact and records it in ``manifest.json``.
Exit codes: 0 success, 2 configuration error, 3 missing upstream artifact,
4 numeric failure.
"""
import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time

import filelock
import numpy as np

from . import lifter, recognizer, spmf
from . import data_model as dm
from .config import config_to_dict, dump_config, parse_config
from .errors import ConfigError, MissingArtifactError, NumericError, PoseNASError, SchemaError
from .nas import SearchConfig, read_genotype, run_search, write_genotype
from .nas.genotype import config_hash

log = logging.getLogger("posenas")

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_NUMERIC = 0, 2, 3, 4

# artifact file names inside the output directory
SYNTH_FILES = {
    "lift_gt2d": "data/lift_gt2d.txt",
    "lift_det2d": "data/lift_det2d.txt",
    "lift_gt3d": "data/lift_gt3d.txt",
    "actions_2d": "data/actions_2d.txt",
    "actions_3d": "data/actions_3d.txt",
}
LIFTER_CKPT = "lifter.npz"
IMAGE_CACHE = "images.txt"
GENOTYPE = "genotype.json"
RECOGNIZER_CKPT = "recognizer.npz"
METRICS = "metrics.json"
LIFT_METRICS = "lift_metrics.json"
MANIFEST = "manifest.json"
RESOLVED_CONFIG = "config.json"


# ---- manifest ------------------------------------------------------------------

def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _load_manifest(out):
    path = os.path.join(out, MANIFEST)
    if os.path.exists(path):
        with open(path) as fh:
            return json.load(fh)
    return {"config_hash": None, "artifacts": {}, "stages": {}}


def update_manifest(out, cfg_hash, stage, seconds, metrics, files):
    """Record a stage and re-hash every listed artifact."""
    man = _load_manifest(out)
    man["config_hash"] = cfg_hash
    for rel in files:
        man["artifacts"][rel] = None
    for rel in list(man["artifacts"]):
        full = os.path.join(out, rel)
        if os.path.exists(full):
            man["artifacts"][rel] = sha256_file(full)
        else:
            del man["artifacts"][rel]
    man["stages"][stage] = {"wall_clock_s": round(seconds, 3), "metrics": metrics}
    with open(os.path.join(out, MANIFEST), "w", newline="\n") as fh:
        json.dump(man, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return man


def verify_manifest(out):
    """Names of artifacts whose current hash differs from the manifest (empty if all match)."""
    man = _load_manifest(out)
    bad = []
    for rel, digest in sorted(man["artifacts"].items()):
        full = os.path.join(out, rel)
        if not os.path.exists(full) or sha256_file(full) != digest:
            bad.append(rel)
    return bad


def _write_json(path, obj):
    with open(path, "w", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---- stage context ---------------------------------------------------------------

class Run:
    """Resolved config plus helpers for locating inputs and artifacts."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.out = cfg.output_dir
        # the output location does not change results, so it stays out of the hash
        hashed = config_to_dict(cfg)
        hashed.pop("output_dir")
        self.hash = config_hash(hashed)

    def path(self, rel):
        return os.path.join(self.out, rel)

    def require(self, rel, command):
        full = self.path(rel)
        if not os.path.exists(full):
            raise MissingArtifactError(f"{full} not found; run `posenas {command}` first")
        return full

    def data_path(self, key):
        d = self.cfg.data
        explicit = getattr(d, key)
        if explicit is not None:
            return explicit
        if d.synthetic is not None:
            return self.require(SYNTH_FILES[key], "synth")
        raise ConfigError(f"data.{key} is required for this command")

    @property
    def schema(self):
        return dm.get_schema(self.cfg.data.schema, self.registry)

    @property
    def registry(self):
        return dm.load_schema_registry(self.cfg.data.schema_registry)

    def encoder_config(self):
        e = self.cfg.encoder
        return spmf.EncoderConfig(e.output_height, e.output_width, e.colormap, e.enhance, e.motion_scale)

    def search_config(self):
        s = dataclasses.asdict(self.cfg.search)
        s.pop("val_fraction")
        return SearchConfig(**s, seed=self.cfg.seeds.search)

    def lifter_config(self):
        return lifter.LifterConfig(**dataclasses.asdict(self.cfg.lifter), seed=self.cfg.seeds.lifter)

    def final_config(self, num_classes):
        r = dataclasses.asdict(self.cfg.recognizer)
        aug = recognizer.AugmentConfig(**r.pop("augment"))
        return recognizer.FinalNetConfig(num_classes=num_classes, stem_channels=self.cfg.search.stem_channels,
                                         augment=aug, **r)


# ---- data helpers ----------------------------------------------------------------

def _to_schema_2d(samples, schema):
    """Map detector-layout 2D sequences onto the schema joint set when needed."""
    out = []
    for s in samples:
        seq = s.sequence
        if seq.num_joints == schema.joint_count:
            out.append(s)
            continue
        if seq.num_joints != schema.detector_count:
            raise SchemaError(f"sample {s.sample_id}: {seq.num_joints} joints fit neither the schema "
                              f"({schema.joint_count}) nor its detector layout ({schema.detector_count})")
        kp = dm.map_detector_keypoints(seq.data, schema, seq.confidence)
        out.append(dataclasses.replace(s, sequence=dm.PoseSequence(kp, seq.frame_rate, schema.root_index,
                                                                   source=seq.source)))
    return out


def load_lifting_split(run):
    """(train LiftingSet, test LiftingSet, class names) from the three lifting files."""
    d = run.cfg.data
    schema, reg = run.schema, run.registry
    gt3d, header = dm.load_pose_dataset(run.data_path("lift_gt3d"), d.schema, reg, with_header=True)
    gt2d = _to_schema_2d(dm.load_pose_dataset(run.data_path("lift_gt2d"), d.schema, reg), schema)
    det2d = _to_schema_2d(dm.load_pose_dataset(run.data_path("lift_det2d"), d.schema, reg), schema)
    by_id = {"gt": {s.sample_id: s for s in gt2d}, "det": {s.sample_id: s for s in det2d}}
    train, test = dm.split_dataset(gt3d, d.lift_protocol, fold=d.fold, seed=run.cfg.seeds.split,
                                   test_fraction=d.test_fraction)

    def pairs(part):
        if not part:
            return None
        xg, xd, ys, ids, labels = [], [], [], [], []
        for s in part:
            try:
                a, b = by_id["gt"][s.sample_id].sequence, by_id["det"][s.sample_id].sequence
            except KeyError:
                raise SchemaError(f"sample {s.sample_id} missing from a 2D lifting file") from None
            t = s.sequence.num_frames
            if a.num_frames != t or b.num_frames != t:
                raise SchemaError(f"sample {s.sample_id}: 2D and 3D frame counts differ")
            xg.append(a.data.reshape(t, -1))
            xd.append(b.data.reshape(t, -1))
            ys.append(dm.root_center_array(s.sequence.data, schema.root_index).reshape(t, -1))
            ids += [s.sample_id] * t
            labels += [s.label] * t
        data = dm.LiftingSet(np.concatenate(xg), np.concatenate(xd), np.concatenate(ys), np.array(ids),
                             schema.root_index)
        return data, np.array(labels), [s.split_tag for s in part]

    return pairs(train), pairs(test), header.classes


def load_action_samples(run):
    """Action sequences ready for encoding: lifted 2D, or ground-truth 3D."""
    d = run.cfg.data
    if run.cfg.encoder.source == "ground_truth":
        return dm.load_pose_dataset(run.data_path("actions_3d"), d.schema, run.registry), None
    samples = _to_schema_2d(dm.load_pose_dataset(run.data_path("actions_2d"), d.schema, run.registry),
                            run.schema)
    params, _ = lifter.load_checkpoint(run.require(LIFTER_CKPT, "lift-train"))
    lifted = [dataclasses.replace(s, sequence=lifter.predict_3d(params, s.sequence, run.schema.root_index))
              for s in samples]
    return lifted, params


# ---- commands -----------------------------------------------------------------------

def cmd_synth(run):
    """Generate the synthetic lifting and action corpora into ``<out>/data``."""
    sy = run.cfg.data.synthetic
    if sy is None:
        raise ConfigError("data.synthetic is not set; nothing to generate")
    if run.cfg.data.schema != "h36m17" or sy.joints != 17:
        raise ConfigError("synthetic data uses the h36m17 schema with 17 joints")
    os.makedirs(run.path("data"), exist_ok=True)
    seed = run.cfg.seeds.data
    cam = dm.CameraModel()
    base = dict(frames=sy.frames, joints=sy.joints, frame_rate=sy.frame_rate, amplitude=sy.amplitude,
                amplitude_jitter=sy.amplitude_jitter, noise_std=sy.noise_std,
                translation_std=sy.translation_std, subjects=tuple(sy.subjects),
                class_margin=sy.class_margin, family_seed=sy.family_seed)
    lift_cfg = dm.SynthConfig(**dict(base, num_classes=sy.lift_classes, samples_per_class=sy.lift_samples_per_class,
                                     frames=sy.lift_frames, yaw_jitter=sy.lift_yaw_jitter))
    act_cfg = dm.SynthConfig(**dict(base, num_classes=sy.num_classes, samples_per_class=sy.samples_per_class,
                                    yaw_jitter=sy.yaw_jitter))
    lift_samples = dm.generate_synthetic_actions(lift_cfg, seed)
    actions = dm.generate_synthetic_actions(act_cfg, seed + 1)
    lift_classes = [f"motion{k}" for k in range(sy.lift_classes)]
    act_classes = [f"action{k}" for k in range(sy.num_classes)]

    gt2d = [dataclasses.replace(s, sequence=dm.PoseSequence(dm.project_array(s.sequence.data, cam),
                                                            s.sequence.frame_rate, 0))
            for s in lift_samples]
    det2d = dm.detector_sequences(lift_samples, cam, sy.detector_noise, seed + 2)
    cam3d = [dataclasses.replace(s, sequence=dm.PoseSequence(cam.to_camera(s.sequence.data),
                                                             s.sequence.frame_rate, 0))
             for s in lift_samples]
    act2d = dm.detector_sequences(actions, cam, sy.detector_noise, seed + 3)
    writes = [
        ("lift_gt2d", gt2d, lift_classes, "ground_truth"),
        ("lift_det2d", det2d, lift_classes, "detector"),
        ("lift_gt3d", cam3d, lift_classes, None),
        ("actions_2d", act2d, act_classes, "detector"),
        ("actions_3d", actions, act_classes, None),
    ]
    for key, samples, classes, source in writes:
        dm.write_pose_dataset(samples, run.path(SYNTH_FILES[key]), "h36m17", classes, source)
    metrics = {"lift_poses": int(sum(s.sequence.num_frames for s in lift_samples)),
               "action_sequences": len(actions)}
    return metrics, list(SYNTH_FILES.values())


def _lift_eval_report(params, data, labels, classes):
    pred = lifter.predict_array(params, data.x_det)
    gt = data.y.reshape(len(data), -1, 3)
    pred = dm.root_center_array(pred, data.root_index)
    per_class = {}
    for k in sorted(set(labels.tolist())):
        name = classes[k] if k < len(classes) else str(k)
        per_class[name] = lifter.mpjpe(pred[labels == k], gt[labels == k])
    return {"mpjpe": lifter.mpjpe(pred, gt), "per_class": per_class, "frames": len(data)}


def format_lift_row(report, method="Ours"):
    names = list(report["per_class"])
    header = " | ".join(["Method"] + names + ["Avg"])
    row = " | ".join([method] + [f"{report['per_class'][n]:.1f}" for n in names] + [f"{report['mpjpe']:.1f}"])
    return header + "\n" + row


def cmd_lift_train(run):
    train, test, classes = load_lifting_split(run)
    if train is None:
        raise ConfigError("the lifting split protocol left no training samples")
    data, _, tags = train
    params, history = lifter.train_lifter(data, run.lifter_config(), split_tags=tags)
    lifter.save_checkpoint(run.path(LIFTER_CKPT), params, run.lifter_config())
    metrics = {"final_train_loss": history[-1], "train_frames": len(data)}
    if test is not None:
        metrics["test_mpjpe"] = _lift_eval_report(params, test[0], test[1], classes)["mpjpe"]
    return metrics, [LIFTER_CKPT]


def cmd_lift_eval(run, split="test"):
    params, _ = lifter.load_checkpoint(run.require(LIFTER_CKPT, "lift-train"))
    train, test, classes = load_lifting_split(run)
    part = test if split == "test" else train
    if part is None:
        raise ConfigError(f"the lifting split protocol left no {split} samples")
    report = _lift_eval_report(params, part[0], part[1], classes)
    report["split"] = split
    _write_json(run.path(LIFT_METRICS), report)
    print(f"MPJPE ({split}): {report['mpjpe']:.4f} mm")
    print(format_lift_row(report))
    return report, [LIFT_METRICS]


def cmd_encode(run):
    d = run.cfg.data
    samples, _ = load_action_samples(run)
    train, test = dm.split_dataset(samples, d.protocol, fold=d.fold, seed=run.cfg.seeds.split,
                                   test_fraction=d.test_fraction)
    enc = run.encoder_config()
    images = spmf.encode_samples(train, enc) + spmf.encode_samples(test, enc)
    spmf.write_image_cache(run.path(IMAGE_CACHE), images, enc)
    return {"train_images": len(train), "test_images": len(test)}, [IMAGE_CACHE]


def _cached_images(run):
    images = spmf.read_image_cache(run.require(IMAGE_CACHE, "encode"), run.encoder_config())
    k = int(max(im.label for im in images)) + 1
    return [im for im in images if im.split_tag == "train"], [im for im in images if im.split_tag == "test"], k


def cmd_search(run):
    train, _, k = _cached_images(run)
    fit, val = recognizer._carve_val(train, run.cfg.search.val_fraction, run.cfg.seeds.search)
    scfg = run.search_config()
    g, history, _, _ = run_search(fit, val, scfg, num_classes=k)
    write_genotype(run.path(GENOTYPE), g, scfg.space(), scfg.seed, dataclasses.asdict(scfg))
    rewards = [h["reward"] for h in history]
    head = rewards[:5]
    tail = rewards[-5:]
    metrics = {"first5_reward": float(np.mean(head)), "last5_reward": float(np.mean(tail)),
               "history": history}
    return metrics, [GENOTYPE]


def cmd_recog_train(run):
    train, _, k = _cached_images(run)
    g, space, _ = read_genotype(run.require(GENOTYPE, "search"))
    fcfg = run.final_config(k)
    params = recognizer.build_final_network(g, fcfg, run.cfg.seeds.recognizer, space)
    params, history = recognizer.train_recognizer(params, train, fcfg, run.cfg.seeds.recognizer)
    recognizer.save_recognizer(run.path(RECOGNIZER_CKPT), params)
    return {"initial_loss": history[0], "final_train_loss": history[-1]}, [RECOGNIZER_CKPT]


def cmd_recog_eval(run):
    params = recognizer.load_recognizer(run.require(RECOGNIZER_CKPT, "recog-train"))
    _, test, _ = _cached_images(run)
    if not test:
        raise ConfigError("the image cache holds no test images")
    acc, conf = recognizer.evaluate_accuracy(params, test)
    d = run.cfg.data
    name = f"fold{d.fold if d.fold is not None else 0}" if d.protocol == "sbu_5fold" else d.protocol
    report = {"protocol": d.protocol, "average": acc, "config_hash": run.hash,
              "splits": [{"split": name, "accuracy": acc, "confusion": conf.tolist(), "n_test": len(test)}]}
    _write_json(run.path(METRICS), report)
    print(recognizer.format_table_row(report))
    return {"accuracy": acc}, [METRICS]


STAGES = {
    "synth": cmd_synth,
    "lift-train": cmd_lift_train,
    "lift-eval": cmd_lift_eval,
    "encode": cmd_encode,
    "search": cmd_search,
    "recog-train": cmd_recog_train,
    "recog-eval": cmd_recog_eval,
}


def pipeline_order(cfg):
    """Stages run by ``pipeline`` for this config, in dependency order."""
    order = []
    if cfg.data.synthetic is not None:
        order.append("synth")
    if cfg.encoder.source == "lifted":
        order += ["lift-train", "lift-eval"]
    return order + ["encode", "search", "recog-train", "recog-eval"]


def _run_stage(run, name, **kwargs):
    t0 = time.perf_counter()
    metrics, files = STAGES[name](run, **kwargs)
    update_manifest(run.out, run.hash, name, time.perf_counter() - t0, metrics, files)
    log.info("stage %s done in %.1fs", name, time.perf_counter() - t0)


# ---- argument handling ---------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="posenas", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in list(STAGES) + ["pipeline"]:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON pipeline config")
        p.add_argument("--seed", type=int, default=None, help="override the seed of this stage (all stages for pipeline)")
        p.add_argument("--out", default=None, help="output directory (overrides output_dir)")
        p.add_argument("--protocol", default=None, help="action split protocol")
        p.add_argument("--fold", type=int, default=None, help="fold index for sbu_5fold")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "lift-eval":
            p.add_argument("--split", choices=("train", "test"), default="test")
    return parser


_SEED_OF = {"synth": ("data",), "lift-train": ("lifter",), "encode": ("split",), "search": ("search",),
            "recog-train": ("recognizer",),
            "pipeline": ("data", "split", "lifter", "search", "recognizer")}


def _apply_overrides(cfg, args):
    if args.out is not None:
        cfg.output_dir = os.path.abspath(args.out)
    if args.protocol is not None:
        from .config import SPLIT_PROTOCOLS
        if args.protocol not in SPLIT_PROTOCOLS:
            raise ConfigError(f"--protocol: unknown protocol {args.protocol!r}")
        cfg.data.protocol = args.protocol
    if args.fold is not None:
        cfg.data.fold = args.fold
    if args.seed is not None:
        for name in _SEED_OF.get(args.command, ()):
            setattr(cfg.seeds, name, args.seed)
    return cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = _apply_overrides(parse_config(args.config), args)
        run = Run(cfg)
        os.makedirs(run.out, exist_ok=True)
        lock = filelock.FileLock(run.path(".posenas.lock"))
        try:
            lock.acquire(timeout=0)
        except filelock.Timeout:
            raise ConfigError(f"output directory {run.out} is in use by another command") from None
        try:
            dump_config(cfg, run.path(RESOLVED_CONFIG))
            if args.command == "pipeline":
                for name in pipeline_order(cfg):
                    _run_stage(run, name)
            elif args.command == "lift-eval":
                _run_stage(run, "lift-eval", split=args.split)
            else:
                _run_stage(run, args.command)
        finally:
            lock.release()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifactError as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (PoseNASError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
