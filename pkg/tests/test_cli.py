import json
import os

import filelock
import pytest

from cli_helpers import instrumented_pipeline, write_config
from posenas import cli, lifter
from posenas.config import parse_config, parse_config_dict


@pytest.fixture(scope="module")
def finished_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cfg = write_config(tmp)
    assert cli.main(["pipeline", "--config", cfg]) == 0
    return cfg, str(tmp / "run")


def test_pipeline_writes_every_artifact(finished_run):
    _, out = finished_run
    for rel in list(cli.SYNTH_FILES.values()) + [cli.LIFTER_CKPT, cli.IMAGE_CACHE, cli.GENOTYPE,
                                                  cli.RECOGNIZER_CKPT, cli.METRICS, cli.MANIFEST]:
        assert os.path.exists(os.path.join(out, rel)), rel


def test_manifest_hashes_and_stages(finished_run):
    cfg, out = finished_run
    man = json.load(open(os.path.join(out, cli.MANIFEST)))
    assert cli.verify_manifest(out) == []
    assert set(man["stages"]) == set(cli.pipeline_order(parse_config(cfg)))
    assert all(s["wall_clock_s"] >= 0 for s in man["stages"].values())
    for rel, digest in man["artifacts"].items():
        assert cli.sha256_file(os.path.join(out, rel)) == digest
    assert man["config_hash"] == json.load(open(os.path.join(out, cli.METRICS)))["config_hash"]


def test_manifest_detects_tampering(tmp_path):
    (tmp_path / "a.txt").write_text("one")
    cli.update_manifest(str(tmp_path), "h", "stage", 0.1, {}, ["a.txt"])
    assert cli.verify_manifest(str(tmp_path)) == []
    (tmp_path / "a.txt").write_text("two")
    assert cli.verify_manifest(str(tmp_path)) == ["a.txt"]


def test_rerun_is_byte_identical(finished_run, tmp_path):
    cfg, out = finished_run
    other = str(tmp_path / "again")
    assert cli.main(["pipeline", "--config", cfg, "--out", other]) == 0
    for rel in (cli.GENOTYPE, cli.METRICS, cli.IMAGE_CACHE, cli.LIFTER_CKPT):
        with open(os.path.join(out, rel), "rb") as a, open(os.path.join(other, rel), "rb") as b:
            assert a.read() == b.read(), rel


def test_lift_eval_train_split_matches_direct_mpjpe(finished_run, capsys):
    cfg, out = finished_run
    assert cli.main(["lift-eval", "--config", cfg, "--split", "train"]) == 0
    printed = float(capsys.readouterr().out.split("MPJPE (train): ")[1].split()[0])
    run = cli.Run(parse_config(cfg))
    (data, _, _), _, _ = cli.load_lifting_split(run)
    params, _ = lifter.load_checkpoint(os.path.join(out, cli.LIFTER_CKPT))
    pred = lifter.predict_array(params, data.x_det)
    from posenas.data_model import root_center_array
    direct = lifter.mpjpe(root_center_array(pred, data.root_index), data.y.reshape(len(data), -1, 3))
    assert printed == pytest.approx(direct, abs=5e-5)
    report = json.load(open(os.path.join(out, cli.LIFT_METRICS)))
    assert report["mpjpe"] == pytest.approx(direct, rel=1e-12)


def test_recog_eval_prints_table_row(finished_run, capsys):
    cfg, out = finished_run
    assert cli.main(["recog-eval", "--config", cfg]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "Method | random_holdout | Aver."
    acc = json.load(open(os.path.join(out, cli.METRICS)))["average"]
    assert lines[1] == f"Ours | {100 * acc:.2f} | {100 * acc:.2f}"


def test_missing_artifact_exit_code_names_command(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert cli.main(["search", "--config", cfg]) == cli.EXIT_MISSING
    assert "posenas encode" in capsys.readouterr().err
    assert cli.main(["recog-eval", "--config", cfg]) == cli.EXIT_MISSING
    assert "posenas recog-train" in capsys.readouterr().err


def test_config_error_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path, {"lifter.epochs": "many"})
    assert cli.main(["synth", "--config", cfg]) == cli.EXIT_CONFIG
    assert "lifter.epochs" in capsys.readouterr().err
    cfg = write_config(tmp_path, {"lifter.widht": 3}, name="b.json")
    assert cli.main(["synth", "--config", cfg]) == cli.EXIT_CONFIG
    assert cli.main(["synth", "--config", str(tmp_path / "absent.json")]) == cli.EXIT_CONFIG
    good = write_config(tmp_path, name="c.json")
    assert cli.main(["encode", "--config", good, "--protocol", "loo"]) == cli.EXIT_CONFIG


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_failure_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path, {"lifter.lr": 1e300, "lifter.epochs": 3})
    assert cli.main(["synth", "--config", cfg]) == 0
    assert cli.main(["lift-train", "--config", cfg]) == cli.EXIT_NUMERIC
    assert "non-finite" in capsys.readouterr().err


def test_lock_contention_is_refused(tmp_path, capsys):
    cfg = write_config(tmp_path)
    out = tmp_path / "run"
    out.mkdir()
    with filelock.FileLock(str(out / ".posenas.lock")):
        assert cli.main(["synth", "--config", cfg]) == cli.EXIT_CONFIG
    assert "in use" in capsys.readouterr().err
    assert cli.main(["synth", "--config", cfg]) == 0


def test_seed_override_reaches_the_stage(tmp_path):
    cfg = write_config(tmp_path)
    assert cli.main(["synth", "--config", cfg]) == 0
    a = (tmp_path / "run" / "data" / "actions_3d.txt").read_bytes()
    assert cli.main(["synth", "--config", cfg, "--seed", "7"]) == 0
    b = (tmp_path / "run" / "data" / "actions_3d.txt").read_bytes()
    assert a != b
    resolved = json.load(open(tmp_path / "run" / cli.RESOLVED_CONFIG))
    assert resolved["seeds"]["data"] == 7


def test_pipeline_order():
    lifted = parse_config_dict({"data": {"synthetic": {}}}, ".")
    assert cli.pipeline_order(lifted) == ["synth", "lift-train", "lift-eval", "encode", "search",
                                          "recog-train", "recog-eval"]
    gt = parse_config_dict({"data": {"synthetic": {}}, "encoder": {"source": "ground_truth"}}, ".")
    assert cli.pipeline_order(gt) == ["synth", "encode", "search", "recog-train", "recog-eval"]


def test_no_test_data_reaches_training(monkeypatch, tmp_path):
    code, seen, test_ids = instrumented_pipeline(monkeypatch, write_config(tmp_path), str(tmp_path / "o"))
    assert code == 0 and test_ids
    assert seen["lifter"] and set(seen["lifter"]) == {"train"}
    for stage in ("search", "recognizer"):
        assert seen[stage]
        assert {tag for _, tag in seen[stage]} == {"train"}
        assert not test_ids & {sid for sid, _ in seen[stage]}
