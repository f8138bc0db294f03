"""Pose and sequence types, dataset files, conditioning, synthetic data and splits."""
import configparser
import dataclasses
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional

import numpy as np

from .errors import ConfigError, ParseError, ProjectionError, ProtocolError, SchemaError

STD_FLOOR = 1e-8
FILE_MAGIC = "#posenas-dataset 1"

H36M_TRAIN_SUBJECTS = (1, 5, 6, 7, 8)
H36M_TEST_SUBJECTS = (9, 11)
SPLIT_PROTOCOLS = ("h36m_subject", "msr_half", "sbu_5fold", "random_holdout")


# ---------------------------------------------------------------------------
# types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Pose2D:
    keypoints: np.ndarray
    confidence: Optional[np.ndarray] = None
    source: str = "ground_truth"

    def __post_init__(self):
        kp = np.asarray(self.keypoints, dtype=np.float64)
        if kp.ndim != 2 or kp.shape[1] != 2:
            raise ValueError(f"keypoints must be N x 2, got {kp.shape}")
        if not np.all(np.isfinite(kp)):
            raise ValueError("keypoints must be finite")
        if self.confidence is not None:
            c = np.asarray(self.confidence, dtype=np.float64)
            if c.shape != (kp.shape[0],) or np.any((c < 0) | (c > 1)):
                raise ValueError("confidence must be a length-N array in [0, 1]")
            object.__setattr__(self, "confidence", c)
        if self.source not in ("ground_truth", "detector"):
            raise ValueError(f"unknown source {self.source!r}")
        object.__setattr__(self, "keypoints", kp)

    def flatten(self):
        return self.keypoints.reshape(-1)


@dataclass(frozen=True)
class Pose3D:
    joints: np.ndarray
    root_index: int = 0

    def __post_init__(self):
        j = np.asarray(self.joints, dtype=np.float64)
        if j.ndim != 2 or j.shape[1] != 3:
            raise ValueError(f"joints must be M x 3, got {j.shape}")
        if not np.all(np.isfinite(j)):
            raise ValueError("joints must be finite")
        if not 0 <= self.root_index < j.shape[0]:
            raise ValueError("root_index out of range")
        object.__setattr__(self, "joints", j)


@dataclass
class PoseSequence:
    """Frames stored as one array: T x J x 3 (3D) or T x J x 2 (2D)."""

    data: np.ndarray
    frame_rate: float = 30.0
    root_index: int = 0
    confidence: Optional[np.ndarray] = None
    source: str = "ground_truth"

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[0] == 0 or self.data.shape[2] not in (2, 3):
            raise ValueError(f"sequence data must be T x J x 2|3 with T >= 1, got {self.data.shape}")

    @property
    def is_3d(self):
        return self.data.shape[2] == 3

    @property
    def num_frames(self):
        return self.data.shape[0]

    @property
    def num_joints(self):
        return self.data.shape[1]

    @property
    def frames(self):
        if self.is_3d:
            return [Pose3D(f, self.root_index) for f in self.data]
        conf = self.confidence if self.confidence is not None else [None] * len(self.data)
        return [Pose2D(f, c, self.source) for f, c in zip(self.data, conf)]

    @classmethod
    def from_frames(cls, frames, frame_rate=30.0):
        if not frames:
            raise ValueError("a sequence needs at least one frame")
        if isinstance(frames[0], Pose3D):
            return cls(np.stack([f.joints for f in frames]), frame_rate, frames[0].root_index)
        conf = None
        if all(f.confidence is not None for f in frames):
            conf = np.stack([f.confidence for f in frames])
        return cls(np.stack([f.keypoints for f in frames]), frame_rate,
                   confidence=conf, source=frames[0].source)


@dataclass
class LabeledSample:
    sample_id: str
    sequence: PoseSequence
    label: int
    subject: int
    split_tag: Optional[str] = None


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "std", np.maximum(np.asarray(self.std, dtype=np.float64), STD_FLOOR))

    @classmethod
    def fit(cls, x):
        x = np.asarray(x, dtype=np.float64)
        return cls(x.mean(axis=0), x.std(axis=0))


@dataclass(frozen=True)
class CameraModel:
    focal: tuple = (1150.0, 1150.0)
    principal_point: tuple = (500.0, 500.0)
    rotation: np.ndarray = field(default_factory=lambda: np.diag([1.0, -1.0, -1.0]))
    translation: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 5000.0]))

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        if r.shape != (3, 3) or np.abs(r @ r.T - np.eye(3)).max() > 1e-9:
            raise ValueError("rotation must be a 3x3 orthonormal matrix")
        if min(self.focal) <= 0:
            raise ValueError("focal lengths must be positive")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64))

    def to_camera(self, points):
        """World points (..., 3) into the camera frame."""
        return points @ self.rotation.T + self.translation


# ---------------------------------------------------------------------------
# schema registry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Schema:
    schema_id: str
    joint_count: int
    joint_names: tuple
    root_index: int = 0
    parents: tuple = ()
    detector_count: int = 0
    detector_map: tuple = ()  # per joint: tuple of (detector index, weight)
    class_names: tuple = ()
    subsets: dict = field(default_factory=dict)

    def detector_matrix(self):
        """M x N matrix taking detector keypoints to skeleton joints."""
        mat = np.zeros((self.joint_count, self.detector_count))
        for j, terms in enumerate(self.detector_map):
            for idx, w in terms:
                mat[j, idx] += w
        return mat


def _int_list(text):
    return tuple(int(v) for v in text.split(",") if v.strip())


def _parse_map_entry(text, n_det, where):
    terms = []
    for term in text.split("+"):
        idx, _, w = term.strip().partition(":")
        try:
            terms.append((int(idx), float(w)))
        except ValueError:
            raise SchemaError(f"{where}: bad detector map term {term!r}") from None
        if not 0 <= terms[-1][0] < n_det:
            raise SchemaError(f"{where}: detector index {idx} out of range")
    return tuple(terms)


def load_schema_registry(path=None):
    """Parse a schema registry file into ``{schema_id: Schema}``.

    Without ``path`` the registry shipped with the package is used.
    """
    cp = configparser.ConfigParser(interpolation=None)
    if path is None:
        cp.read_string(resources.files("posenas").joinpath("data/schemas.ini").read_text())
    else:
        with open(path) as fh:
            cp.read_file(fh)
    registry = {}
    for sid in cp.sections():
        sec = cp[sid]
        try:
            m = sec.getint("joints")
            names = tuple(n.strip() for n in sec.get("joint_names", "").split(",") if n.strip())
            n_det = sec.getint("detector_joints", fallback=0)
            raw_map = sec.get("detector_map", "")
            dmap = tuple(_parse_map_entry(e, n_det, sid) for e in raw_map.split(",") if e.strip()) \
                if raw_map else ()
            subsets = {k.split(".", 1)[1]: _int_list(v) for k, v in sec.items() if k.startswith("subset.")}
            schema = Schema(
                schema_id=sid, joint_count=m, joint_names=names,
                root_index=sec.getint("root_index", fallback=0),
                parents=_int_list(sec.get("parents", "")),
                detector_count=n_det, detector_map=dmap,
                class_names=tuple(c.strip() for c in sec.get("classes", "").split(",") if c.strip()),
                subsets=subsets,
            )
        except (ValueError, TypeError) as exc:
            raise SchemaError(f"schema {sid!r}: {exc}") from None
        if names and len(names) != m:
            raise SchemaError(f"schema {sid!r}: {len(names)} joint names for {m} joints")
        if dmap and len(dmap) != m:
            raise SchemaError(f"schema {sid!r}: detector map has {len(dmap)} entries, expected {m}")
        if schema.parents and len(schema.parents) != m:
            raise SchemaError(f"schema {sid!r}: parents has {len(schema.parents)} entries, expected {m}")
        registry[sid] = schema
    return registry


def get_schema(schema_id, registry=None):
    registry = load_schema_registry() if registry is None else registry
    try:
        return registry[schema_id]
    except KeyError:
        raise SchemaError(f"unknown schema {schema_id!r}") from None


def bone_lengths(joints, parents):
    joints = np.asarray(joints)
    return np.array([np.linalg.norm(joints[j] - joints[p]) for j, p in enumerate(parents) if p >= 0])


# ---------------------------------------------------------------------------
# dataset files
# ---------------------------------------------------------------------------

@dataclass
class DatasetHeader:
    schema: str
    kind: str  # "2d" or "3d"
    joints: int
    frame_rate: float
    classes: tuple = ()
    source: str = "ground_truth"
    confidence: bool = False


def _fmt(x):
    return repr(float(x))


def write_pose_dataset(samples, path, schema, classes=(), source=None):
    """Write samples as line records: ``sample_id frame label subject values...``."""
    if not samples:
        raise ValueError("no samples to write")
    seq0 = samples[0].sequence
    kind = "3d" if seq0.is_3d else "2d"
    conf = (not seq0.is_3d) and seq0.confidence is not None
    src = source or seq0.source
    lines = [
        FILE_MAGIC,
        f"# schema: {schema}",
        f"# kind: {kind}",
        f"# joints: {seq0.num_joints}",
        f"# frame_rate: {_fmt(seq0.frame_rate)}",
        f"# classes: {','.join(classes)}",
    ]
    if kind == "2d":
        lines += [f"# source: {src}", f"# confidence: {int(conf)}"]
    for s in samples:
        seq = s.sequence
        if seq.num_joints != seq0.num_joints or seq.is_3d != seq0.is_3d:
            raise SchemaError(f"sample {s.sample_id}: joint layout differs from the first sample")
        if " " in s.sample_id:
            raise ValueError(f"sample id {s.sample_id!r} contains whitespace")
        for t, frame in enumerate(seq.data):
            vals = [_fmt(v) for v in frame.reshape(-1)]
            if conf:
                vals += [_fmt(v) for v in seq.confidence[t]]
            lines.append(" ".join([s.sample_id, str(t), str(s.label), str(s.subject)] + vals))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _read_header(lines, path):
    if not lines or lines[0].rstrip("\n") != FILE_MAGIC:
        raise ParseError(f"{path}:1: missing dataset magic line {FILE_MAGIC!r}")
    meta = {}
    i = 1
    while i < len(lines) and lines[i].startswith("#"):
        key, sep, val = lines[i][1:].partition(":")
        if not sep:
            raise ParseError(f"{path}:{i + 1}: malformed header line")
        meta[key.strip()] = val.strip()
        i += 1
    try:
        header = DatasetHeader(
            schema=meta["schema"], kind=meta["kind"], joints=int(meta["joints"]),
            frame_rate=float(meta["frame_rate"]),
            classes=tuple(c for c in meta.get("classes", "").split(",") if c),
            source=meta.get("source", "ground_truth"),
            confidence=meta.get("confidence", "0") == "1",
        )
    except (KeyError, ValueError) as exc:
        raise ParseError(f"{path}: bad header field {exc}") from None
    if header.kind not in ("2d", "3d"):
        raise ParseError(f"{path}: kind must be 2d or 3d, got {header.kind!r}")
    return header, i


def load_pose_dataset(path, schema, registry=None, with_header=False):
    """Read a dataset file written by ``write_pose_dataset``.

    ``schema`` is the expected schema id; the header must agree with it and
    3D files must carry the registry's joint count.
    """
    with open(path) as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    header, start = _read_header(lines, path)
    if header.schema != schema:
        raise SchemaError(f"{path}: file schema {header.schema!r} != requested {schema!r}")
    sch = get_schema(schema, registry)
    expected = sch.joint_count if header.kind == "3d" else None
    if expected is not None and header.joints != expected:
        raise SchemaError(f"{path}: header declares {header.joints} joints, schema {schema} has {expected}")
    dim = 3 if header.kind == "3d" else 2
    n_vals = header.joints * dim + (header.joints if header.confidence else 0)

    records = {}
    order = []
    for lineno in range(start, len(lines)):
        parts = lines[lineno].split()
        where = f"{path}:{lineno + 1}"
        if len(parts) < 4:
            raise ParseError(f"{where}: record needs sample id, frame, label, subject")
        sid = parts[0]
        try:
            frame, label, subject = int(parts[1]), int(parts[2]), int(parts[3])
            vals = np.array([float(v) for v in parts[4:]])
        except ValueError as exc:
            raise ParseError(f"{where}: {exc}") from None
        if vals.size != n_vals:
            got = vals.size // dim if not header.confidence else vals.size // (dim + 1)
            raise SchemaError(f"{where}: expected {header.joints} joints ({n_vals} values), "
                              f"got {vals.size} values (~{got} joints)")
        if not np.all(np.isfinite(vals)):
            raise ParseError(f"{where}: non-finite value")
        if sid not in records:
            records[sid] = {"label": label, "subject": subject, "frames": [], "conf": []}
            order.append(sid)
        rec = records[sid]
        if frame != len(rec["frames"]):
            raise ParseError(f"{where}: frame {frame} out of order for sample {sid}")
        if label != rec["label"] or subject != rec["subject"]:
            raise ParseError(f"{where}: label/subject changed within sample {sid}")
        rec["frames"].append(vals[:header.joints * dim].reshape(header.joints, dim))
        if header.confidence:
            rec["conf"].append(vals[header.joints * dim:])
    n_classes = len(header.classes)
    samples = []
    for sid in order:
        rec = records[sid]
        if n_classes and not 0 <= rec["label"] < n_classes:
            raise SchemaError(f"{path}: sample {sid} label {rec['label']} outside {n_classes} classes")
        seq = PoseSequence(
            np.stack(rec["frames"]), header.frame_rate, root_index=sch.root_index,
            confidence=np.stack(rec["conf"]) if header.confidence else None,
            source=header.source if header.kind == "2d" else "ground_truth",
        )
        samples.append(LabeledSample(sid, seq, rec["label"], rec["subject"]))
    return (samples, header) if with_header else samples


# ---------------------------------------------------------------------------
# conditioning and geometry
# ---------------------------------------------------------------------------

def standardize_2d(pose, stats):
    flat = pose.flatten() if isinstance(pose, Pose2D) else np.asarray(pose, dtype=np.float64).reshape(-1)
    if flat.shape != stats.mean.shape:
        raise ValueError(f"pose has {flat.size} coordinates, stats expect {stats.mean.size}")
    return (flat - stats.mean) / stats.std


def standardize(x, stats):
    """Row-wise standardization of a batch (B x D)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != stats.mean.shape[0]:
        raise ValueError(f"data has {x.shape[-1]} columns, stats expect {stats.mean.shape[0]}")
    return (x - stats.mean) / stats.std


def destandardize(z, stats):
    return np.asarray(z) * stats.std + stats.mean


def root_center(pose):
    j = pose.joints - pose.joints[pose.root_index]
    return Pose3D(j, pose.root_index)


def root_center_array(joints, root_index=0):
    """Root-center an array shaped (..., M, 3)."""
    joints = np.asarray(joints, dtype=np.float64)
    return joints - joints[..., root_index:root_index + 1, :]


def project(pose, cam):
    """Pinhole projection of world joints through ``cam``."""
    pc = cam.to_camera(pose.joints)
    bad = np.flatnonzero(pc[:, 2] <= 0)
    if bad.size:
        raise ProjectionError(f"joint {int(bad[0])} has nonpositive depth {pc[bad[0], 2]:.6g}")
    uv = pc[:, :2] / pc[:, 2:3] * np.asarray(cam.focal) + np.asarray(cam.principal_point)
    return Pose2D(uv, source="ground_truth")


def project_array(joints, cam):
    """Vectorized ``project`` for arrays shaped (..., M, 3)."""
    pc = cam.to_camera(np.asarray(joints, dtype=np.float64))
    if np.any(pc[..., 2] <= 0):
        idx = np.argwhere(pc[..., 2] <= 0)[0]
        raise ProjectionError(f"joint at index {tuple(int(i) for i in idx)} has nonpositive depth")
    return pc[..., :2] / pc[..., 2:3] * np.asarray(cam.focal) + np.asarray(cam.principal_point)


def impute_missing(keypoints, confidence, joint_mean=None):
    """Fill zero-confidence keypoints from the previous frame, else ``joint_mean``.

    ``keypoints`` is T x N x 2, ``confidence`` T x N.
    """
    kp = np.array(keypoints, dtype=np.float64)
    conf = np.asarray(confidence)
    for t in range(kp.shape[0]):
        for n in np.flatnonzero(conf[t] <= 0):
            if t > 0:
                kp[t, n] = kp[t - 1, n]
            elif joint_mean is not None:
                kp[t, n] = joint_mean[n]
            else:
                raise ValueError(f"keypoint {n} missing in the first frame and no joint mean given")
    return kp


def map_detector_keypoints(keypoints, schema, confidence=None, joint_mean=None):
    """Detector keypoints (T x N x 2) to the schema's joint set (T x M x 2)."""
    kp = np.asarray(keypoints, dtype=np.float64)
    if kp.shape[-2] != schema.detector_count:
        raise SchemaError(f"expected {schema.detector_count} detector keypoints, got {kp.shape[-2]}")
    if confidence is not None:
        kp = impute_missing(kp, confidence, joint_mean)
    return np.einsum("mn,tnc->tmc", schema.detector_matrix(), kp)


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

# 17-joint rest skeleton in millimetres, y up, root (pelvis) at the origin.
REST_SKELETON_17 = np.array([
    [0, 0, 0], [-130, 0, 0], [-130, -450, 0], [-130, -890, 0],
    [130, 0, 0], [130, -450, 0], [130, -890, 0],
    [0, 230, 0], [0, 480, 0], [0, 590, 0], [0, 710, 0],
    [170, 460, 0], [170, 180, 0], [170, -70, 0],
    [-170, 460, 0], [-170, 180, 0], [-170, -70, 0],
], dtype=np.float64)
PARENTS_17 = (-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15)


def rest_skeleton(num_joints):
    """Rest pose and parent list; 17 joints use the human layout, others a chain."""
    if num_joints == 17:
        return REST_SKELETON_17.copy(), PARENTS_17
    parents = tuple([-1] + list(range(num_joints - 1)))
    angles = np.linspace(0, 1.5 * np.pi, num_joints)
    pts = np.stack([200 * np.cos(angles), 150 * np.arange(num_joints) / max(num_joints - 1, 1) * 4,
                    np.zeros(num_joints)], axis=1)
    return pts - pts[0], parents


@dataclass(frozen=True)
class SynthConfig:
    num_classes: int = 3
    samples_per_class: int = 10
    frames: int = 32
    joints: int = 17
    frame_rate: float = 30.0
    amplitude: float = 80.0
    amplitude_jitter: float = 0.1
    noise_std: float = 5.0
    translation_std: float = 100.0
    yaw_jitter: float = 0.0
    subjects: tuple = (1, 5, 6, 7, 8, 9, 11)
    class_margin: float = 20.0
    family_seed: int = 0


def _class_family(cfg):
    """Per-class trajectory parameters; fixed by ``family_seed`` alone."""
    rng = np.random.default_rng(cfg.family_seed)
    fams = []
    for k in range(cfg.num_classes):
        d = rng.normal(size=(cfg.joints, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        fams.append({
            "freq": 0.8 + 0.6 * k,
            "phase": 2 * np.pi * k / cfg.num_classes,
            "joint_phase": rng.uniform(0, 2 * np.pi, cfg.joints),
            "joint_amp": cfg.amplitude * rng.uniform(0.5, 1.5, cfg.joints),
            "direction": d,
        })
    return fams


def class_templates(cfg):
    """Noise-free class-mean trajectories, K x T x M x 3 (valid for zero yaw jitter)."""
    rest, _ = rest_skeleton(cfg.joints)
    t = np.arange(cfg.frames) / cfg.frame_rate
    out = []
    for fam in _class_family(cfg):
        s = np.sin(2 * np.pi * fam["freq"] * t[:, None] + fam["phase"] + fam["joint_phase"][None, :])
        out.append(rest[None] + (fam["joint_amp"][None, :, None] * s[:, :, None]) * fam["direction"][None])
    return np.stack(out)


def trajectory_distance(a, b):
    """Root-mean-square joint distance between two T x M x 3 trajectories."""
    return float(np.sqrt(np.mean(np.sum((np.asarray(a) - np.asarray(b)) ** 2, axis=-1))))


def generate_synthetic_actions(config, seed):
    """Seeded labeled 3D action sequences in world coordinates (mm, y up)."""
    cfg = config
    if cfg.num_classes < 2:
        raise ConfigError("synthetic data needs at least 2 classes")
    if cfg.samples_per_class < 1 or cfg.frames < 1 or cfg.joints < 2:
        raise ConfigError("samples_per_class, frames must be >= 1 and joints >= 2")
    templates = class_templates(cfg)
    for a in range(cfg.num_classes):
        for b in range(a + 1, cfg.num_classes):
            dist = trajectory_distance(templates[a], templates[b])
            if dist < cfg.class_margin:
                raise ConfigError(f"classes {a} and {b} are only {dist:.3g} apart (< margin {cfg.class_margin})")
    rest, _ = rest_skeleton(cfg.joints)
    rng = np.random.default_rng(seed)
    samples = []
    i = 0
    for k in range(cfg.num_classes):
        motion = templates[k] - rest[None]
        for n in range(cfg.samples_per_class):
            amp = 1.0 + cfg.amplitude_jitter * rng.normal()
            pos = rest[None] + amp * motion
            yaw = rng.uniform(-cfg.yaw_jitter, cfg.yaw_jitter) if cfg.yaw_jitter > 0 else 0.0
            c, s = math.cos(yaw), math.sin(yaw)
            rot = np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
            pos = pos @ rot.T
            shift = np.array([rng.normal(0, cfg.translation_std), 0.0, rng.normal(0, cfg.translation_std)])
            pos = pos + shift + rng.normal(0, cfg.noise_std, pos.shape)
            subject = cfg.subjects[n % len(cfg.subjects)]
            seq = PoseSequence(pos, cfg.frame_rate, root_index=0)
            samples.append(LabeledSample(f"s{i:05d}", seq, k, int(subject)))
            i += 1
    return samples


@dataclass
class LiftingSet:
    """Frame-level lifting pairs. 2D arrays are F x 2M, 3D targets F x 3M."""

    x_gt: np.ndarray
    x_det: np.ndarray
    y: np.ndarray
    sample_ids: np.ndarray
    root_index: int = 0

    def __len__(self):
        return len(self.y)


def make_lifting_set(samples, cam, detector_noise=2.0, outlier_prob=0.0, seed=0):
    """Project world sequences to 2D and pair them with root-centered camera-frame 3D.

    The detector stream receives the projection plus Gaussian pixel noise and,
    with ``outlier_prob``, gross per-keypoint outliers.
    """
    rng = np.random.default_rng(seed)
    xg, xd, ys, ids = [], [], [], []
    for s in samples:
        world = s.sequence.data
        uv = project_array(world, cam)
        det = uv + rng.normal(0, detector_noise, uv.shape)
        if outlier_prob > 0:
            hit = rng.random(uv.shape[:2]) < outlier_prob
            det[hit] += rng.normal(0, 50 * detector_noise + 20, (int(hit.sum()), 2))
        cam3d = root_center_array(cam.to_camera(world), s.sequence.root_index)
        t = world.shape[0]
        xg.append(uv.reshape(t, -1))
        xd.append(det.reshape(t, -1))
        ys.append(cam3d.reshape(t, -1))
        ids += [s.sample_id] * t
    return LiftingSet(np.concatenate(xg), np.concatenate(xd), np.concatenate(ys), np.array(ids),
                      samples[0].sequence.root_index)


def detector_sequences(samples, cam, detector_noise=2.0, seed=0):
    """2D detector-style sequences (same joint set) for action samples."""
    rng = np.random.default_rng(seed)
    out = []
    for s in samples:
        uv = project_array(s.sequence.data, cam)
        uv = uv + rng.normal(0, detector_noise, uv.shape)
        seq = PoseSequence(uv, s.sequence.frame_rate, s.sequence.root_index, source="detector")
        out.append(dataclasses.replace(s, sequence=seq))
    return out


# ---------------------------------------------------------------------------
# split protocols
# ---------------------------------------------------------------------------

def _tag(samples, tag):
    return [dataclasses.replace(s, split_tag=tag) for s in samples]


def split_dataset(samples, protocol, fold=None, seed=0, test_fraction=0.2):
    """Partition samples into (train, test); every returned sample carries its split tag."""
    samples = list(samples)
    if protocol == "h36m_subject":
        known = set(H36M_TRAIN_SUBJECTS) | set(H36M_TEST_SUBJECTS)
        unknown = sorted({s.subject for s in samples} - known)
        if unknown:
            raise ProtocolError(f"subjects {unknown} are not part of the Human3.6M protocol")
        is_test = [s.subject in H36M_TEST_SUBJECTS for s in samples]
    elif protocol == "msr_half":
        # odd subject ids train, even ids test
        is_test = [s.subject % 2 == 0 for s in samples]
    elif protocol == "sbu_5fold":
        fold = 0 if fold is None else fold
        if not 0 <= fold < 5:
            raise ProtocolError(f"fold must be in [0, 5), got {fold}")
        perm = np.random.default_rng(seed).permutation(len(samples))
        test_idx = set(np.array_split(perm, 5)[fold].tolist())
        is_test = [i in test_idx for i in range(len(samples))]
    elif protocol == "random_holdout":
        if not 0 < test_fraction < 1:
            raise ProtocolError("test_fraction must be in (0, 1)")
        perm = np.random.default_rng(seed).permutation(len(samples))
        n_test = int(round(test_fraction * len(samples)))
        test_idx = set(perm[:n_test].tolist())
        is_test = [i in test_idx for i in range(len(samples))]
    else:
        raise ProtocolError(f"unknown split protocol {protocol!r}; expected one of {SPLIT_PROTOCOLS}")
    train = _tag([s for s, t in zip(samples, is_test) if not t], "train")
    test = _tag([s for s, t in zip(samples, is_test) if t], "test")
    return train, test


def select_classes(samples, class_ids):
    """Keep samples whose label is in ``class_ids`` and relabel to 0..len-1."""
    remap = {c: i for i, c in enumerate(class_ids)}
    return [dataclasses.replace(s, label=remap[s.label]) for s in samples if s.label in remap]
