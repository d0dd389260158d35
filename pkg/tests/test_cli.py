import json

import numpy as np
import pytest

from syllogistic.cli import EXIT_DATA, EXIT_MODEL, EXIT_OK, EXIT_USAGE, main
from syllogistic.cli.commands import replacement_pool
from syllogistic.cli.config import CHECKPOINT_ENV, UsageError, load_config
from syllogistic.cli.heatmap import ppm_heatmap
from syllogistic.datasets import bundled_nonsymbolic_path, generate_symbolic, ingest_nonsymbolic, load_jsonl
from syllogistic.io import sha256_bytes, sha256_file
from syllogistic.metrics import batch_logit_differences
from syllogistic.model import forward, save_bundle


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory, toy_bundle):
    folder = tmp_path_factory.mktemp("toy")
    save_bundle(toy_bundle, folder)
    return folder


@pytest.fixture(scope="module")
def circuit(tmp_path_factory):
    path = tmp_path_factory.mktemp("circuit") / "toy.json"
    path.write_text(json.dumps({"name": "toy", "heads": ["0.1", "1.0"]}))
    return path


@pytest.fixture(autouse=True)
def no_env_checkpoint(monkeypatch):
    monkeypatch.delenv(CHECKPOINT_ENV, raising=False)


def run(*argv):
    return main([str(a) for a in argv])


def read_json(path):
    return json.loads(path.read_text())


def test_generate_writes_dataset_and_summary(tmp_path, capsys):
    assert run("generate", "--seed", 3, "-o", tmp_path) == EXIT_OK
    instances = load_jsonl(tmp_path / "dataset.jsonl")
    assert instances == generate_symbolic("AAA-1", 90, seed=3)
    summary = read_json(tmp_path / "dataset_summary.json")["summary"]
    assert summary["n_samples"] == 90 and summary["unique_s"] <= 26
    assert "90 instances" in capsys.readouterr().out


def test_generate_is_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert run("generate", "--seed", 9, "--scheme", "Ferio", "-o", tmp_path / name) == EXIT_OK
    for f in ("dataset.jsonl", "dataset_summary.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


@pytest.mark.parametrize(
    "argv,code",
    [
        (["generate", "-o", "{out}"], EXIT_USAGE),
        (["generate", "--seed", "1", "--n-samples", "0", "-o", "{out}"], EXIT_DATA),
        (["generate", "--seed", "1", "--scheme", "ZZZ-9", "-o", "{out}"], EXIT_DATA),
        (["generate", "--seed", "x"], EXIT_USAGE),
        (["frobnicate"], EXIT_USAGE),
        (["generate", "--seed", "1", "--perturb", "loud"], EXIT_USAGE),
    ],
)
def test_error_exit_codes(tmp_path, capsys, argv, code):
    assert run(*(a.format(out=tmp_path) for a in argv)) == code
    assert capsys.readouterr().err.strip()


def test_missing_checkpoint_is_a_model_error_with_a_hint(tmp_path, capsys):
    assert run("run", "--seed", 1, "-o", tmp_path) == EXIT_MODEL
    err = capsys.readouterr().err
    assert "no checkpoint" in err and CHECKPOINT_ENV in err
    assert run("run", "--seed", 1, "--checkpoint", tmp_path / "nowhere", "-o", tmp_path) == EXIT_MODEL
    assert "no such file" in capsys.readouterr().err


def test_checkpoint_from_environment(tmp_path, monkeypatch, checkpoint):
    monkeypatch.setenv(CHECKPOINT_ENV, str(checkpoint))
    assert run("run", "--seed", 1, "--n-samples", 6, "-o", tmp_path) == EXIT_OK


def test_run_report_matches_direct_computation(tmp_path, toy_bundle, checkpoint):
    assert run("run", "--seed", 2, "--n-samples", 20, "--checkpoint", checkpoint, "-o", tmp_path) == EXIT_OK
    doc = read_json(tmp_path / "run.json")
    instances = generate_symbolic("AAA-1", 20, seed=2)
    cache = forward(toy_bundle, np.array([i.tokens for i in instances]), last_only=True)
    deltas = batch_logit_differences(
        cache.final_logits(), [i.answer_token for i in instances], [i.distractor_token for i in instances]
    )
    assert np.allclose(doc["deltas"], deltas, atol=1e-6)
    assert doc["accuracy"] == float(np.mean(deltas > 0))
    assert doc["logit_difference"]["n"] == 20


def test_provenance(tmp_path, checkpoint):
    assert run("run", "--seed", 2, "--n-samples", 6, "--checkpoint", checkpoint, "-o", tmp_path) == EXIT_OK
    prov = read_json(tmp_path / "run.json")["provenance"]
    assert prov["seed"] == 2 and prov["command"] == "run"
    assert prov["config"]["n_samples"] == 6 and "output" not in prov["config"]
    files = [checkpoint / "model.safetensors", checkpoint / "config.json"]
    expected = sha256_bytes("\n".join(f"{f.name}:{sha256_file(f)}" for f in files).encode())
    assert prov["model_hash"] == expected
    assert len(prov["config_hash"]) == 64 and len(prov["dataset_hash"]) == 64


def test_config_file_and_flag_precedence(tmp_path, checkpoint):
    cfg = tmp_path / "exp.toml"
    cfg.write_text(f'seed = 4\nn_samples = 6\ncheckpoint = "{checkpoint}"\nscheme = "AII-3"\n')
    assert run("run", "--config", cfg, "--n-samples", 7, "-o", tmp_path) == EXIT_OK
    config = read_json(tmp_path / "run.json")["provenance"]["config"]
    assert (config["seed"], config["n_samples"], config["scheme"]) == (4, 7, "AII-3")


def test_config_errors(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("seed = 1\ncolour = 'red'\n")
    with pytest.raises(UsageError, match="unknown config keys"):
        load_config(bad, {})
    bad.write_text("seed = 'one'\n")
    with pytest.raises(UsageError, match="integer"):
        load_config(bad, {})
    bad.write_text("seed = [\n")
    with pytest.raises(UsageError, match="TOML"):
        load_config(bad, {})
    assert run("generate", "--config", bad) == EXIT_USAGE
    assert load_config(None, {"perturb": ["numeric"], "seed": None}).seed is None


def test_sweep_outputs_and_heatmaps(tmp_path, checkpoint):
    argv = ["sweep", "--seed", 1, "--n-samples", 8, "--checkpoint", checkpoint, "-o", tmp_path, "--heatmap"]
    assert run(*argv, "--sweep", "head_out", "--sweep", "attention", "--sweep", "residual") == EXIT_OK
    doc = read_json(tmp_path / "sweep_head_out.json")
    assert doc["sweep"]["site"] == "head_out" and doc["sweep"]["n"] == 8
    assert (tmp_path / "sweep_residual.csv").read_text().startswith("row,col,mean,std,n\n")
    assert (tmp_path / "sweep_head_out.ppm").read_bytes().startswith(b"P6\n16 16\n255\n")
    attention = read_json(tmp_path / "attention_p.json")["attention"]
    assert attention["query_role"] == "p" and len(attention["heads"]) == 4


def test_worker_count_does_not_change_reports(tmp_path, checkpoint):
    base = ["sweep", "--seed", 1, "--n-samples", 8, "--checkpoint", checkpoint, "--sweep", "value_roles"]
    assert run(*base, "-o", tmp_path / "one") == EXIT_OK
    assert run(*base, "--workers", 3, "-o", tmp_path / "three") == EXIT_OK
    for path in sorted((tmp_path / "one").iterdir()):
        other = tmp_path / "three" / path.name
        if path.suffix != ".json":
            assert path.read_bytes() == other.read_bytes()
            continue
        # Provenance records the worker count; everything else must match.
        one, three = read_json(path), read_json(other)
        assert one.pop("provenance")["config"]["workers"] == 1
        assert three.pop("provenance")["config"]["workers"] == 3
        assert one == three


def test_empty_and_missing_datasets(tmp_path, checkpoint, capsys):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    argv = ["sweep", "--seed", 1, "--checkpoint", checkpoint, "-o", tmp_path]
    assert run(*argv, "--dataset", empty) == EXIT_DATA
    assert "empty" in capsys.readouterr().err
    assert run(*argv, "--dataset", tmp_path / "absent.jsonl") == EXIT_USAGE
    assert "generate" in capsys.readouterr().err


def test_dataset_round_trip_through_generate(tmp_path, checkpoint):
    assert run("generate", "--seed", 5, "--n-samples", 12, "-o", tmp_path) == EXIT_OK
    argv = ["run", "--seed", 5, "--checkpoint", checkpoint]
    assert run(*argv, "--dataset", tmp_path / "dataset.jsonl", "-o", tmp_path / "a") == EXIT_OK
    assert run(*argv, "--n-samples", 12, "-o", tmp_path / "b") == EXIT_OK
    a, b = read_json(tmp_path / "a" / "run.json"), read_json(tmp_path / "b" / "run.json")
    assert a["deltas"] == b["deltas"]
    assert a["provenance"]["dataset_hash"] == b["provenance"]["dataset_hash"]


def test_path_patch_and_lens(tmp_path, checkpoint):
    argv = ["--seed", 1, "--n-samples", 6, "--checkpoint", checkpoint, "-o", tmp_path]
    assert run("path-patch", *argv) == EXIT_USAGE
    assert run("path-patch", *argv, "--receiver", "0.1") == EXIT_USAGE
    assert run("path-patch", *argv, "--receiver", "1.1") == EXIT_OK
    senders = read_json(tmp_path / "path_1.1.json")["sweep"]
    assert senders["direction"] == "noise" and senders["cells"][1][0]["mean"] is None
    assert run("path-patch", *argv, "--receiver", "1.1", "--sender", "0.0") == EXIT_OK
    single = read_json(tmp_path / "path_0.0_1.1.json")["score"]
    assert single["mean"] == pytest.approx(senders["cells"][0][0]["mean"], abs=1e-12)
    assert run("lens", *argv, "--heads", "0.0", "1.1") == EXIT_OK
    assert read_json(tmp_path / "lens_1.1.json")["lens"]["head"] == "1.1"
    assert run("lens", *argv, "--heads", "7.0") == EXIT_USAGE


def test_ablate_and_report(tmp_path, checkpoint, circuit, capsys):
    argv = ["--seed", 1, "--n-samples", 12, "--checkpoint", checkpoint, "-o", tmp_path]
    assert run("ablate", *argv) == EXIT_USAGE
    assert "does not exist" in capsys.readouterr().err
    assert run("ablate", *argv, "--circuit", circuit) == EXIT_OK
    doc = read_json(tmp_path / "ablation.json")
    assert [s["heads"] for s in doc["necessity"]["steps"]] == [[], ["1.0"], ["1.0", "0.1"]]
    assert set(doc["conditions"]) >= {"C1", "C2", "C3", "accuracy"}
    assert run("report", *argv, "--circuit", circuit, "--schemes", "AAA-1", "Darii") == EXIT_OK
    lines = (tmp_path / "report.csv").read_text().splitlines()
    assert lines[0] == "scheme,C1,C2,C3,accuracy" and [l.split(",")[0] for l in lines[1:]] == ["AAA-1", "AII-1"]


def test_movers_and_subject_bias(tmp_path, checkpoint):
    argv = ["--seed", 1, "--n-samples", 12, "--checkpoint", checkpoint, "-o", tmp_path]
    assert run("movers", *argv) == EXIT_OK
    doc = read_json(tmp_path / "movers.json")
    assert len(doc["heads"]) == 4 and doc["threshold"] >= 0
    assert run("subject-bias", *argv) == EXIT_OK
    doc = read_json(tmp_path / "subject_bias.json")
    assert doc["symbolic"]["degradation"]["n"] == 12
    assert doc["nonsymbolic"]["degradation"]["n"] == len(ingest_nonsymbolic(bundled_nonsymbolic_path()).instances)
    clean, corrupted = doc["nonsymbolic"]["clean"]["mean"], doc["nonsymbolic"]["corrupted"]["mean"]
    assert doc["nonsymbolic"]["degradation"]["mean"] == pytest.approx(clean - corrupted, abs=1e-9)


def test_replacement_pool():
    letters = generate_symbolic("AAA-1", 6, seed=0)
    assert replacement_pool(letters, "subject_term") is None
    words = ingest_nonsymbolic(bundled_nonsymbolic_path()).instances
    pool = replacement_pool(words, "subject_term")
    assert pool[0] == " men" and len(pool) == len(set(pool)) == len({w.s for w in words})


def test_ppm_heatmap():
    img = ppm_heatmap(np.array([[1.0, -1.0], [0.0, np.nan]]), cell=1)
    header, pixels = img[:11], np.frombuffer(img[11:], dtype=np.uint8).reshape(2, 2, 3)
    assert header == b"P6\n2 2\n255\n"
    assert pixels[1, 0].tolist() == [255, 255, 255] and pixels[1, 1].tolist() == [160, 160, 160]
    assert pixels[0, 0, 0] > pixels[0, 0, 2] and pixels[0, 1, 2] > pixels[0, 1, 0]
    with pytest.raises(ValueError):
        ppm_heatmap(np.zeros(3))
