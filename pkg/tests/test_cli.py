"""CLI subcommands: synth, validate, zeroshot, run (manifest), report."""
import json
import os

import numpy as np
import pytest

from embeval.cli import main, read_results, render_report
from embeval.protocol import RunRecord


def run_cli(*argv):
    return main(list(argv))


def make_archive(tmp_path, name="arc", **kw):
    args = ["synth", "--out", str(tmp_path / name), "--classes", "4",
            "--per-class", "8", "--dim", "24", "--proj-dim", "12",
            "--noise", "0.5", "--seed", "3", "--name", name]
    for k, v in kw.items():
        args += [f"--{k}", str(v)]
    assert run_cli(*args) == 0
    return str(tmp_path / name)


def test_synth_and_validate(tmp_path, capsys):
    path = make_archive(tmp_path)
    assert run_cli("validate", "--archive", path) == 0
    assert "ok: arc" in capsys.readouterr().out


def test_validate_rejects_corruption(tmp_path, capsys):
    path = make_archive(tmp_path)
    raw = bytearray(open(os.path.join(path, "T.f32"), "rb").read())
    raw[0] ^= 0xFF
    open(os.path.join(path, "T.f32"), "wb").write(bytes(raw))
    assert run_cli("validate", "--archive", path) == 1
    assert "checksum" in capsys.readouterr().err


def test_zeroshot_writes_one_line(tmp_path):
    path = make_archive(tmp_path)
    out = tmp_path / "results"
    assert run_cli("zeroshot", "--archive", path, "--out", str(out)) == 0
    records, errors = read_results(out / "results.jsonl")
    assert not errors
    assert len(records) == 1
    assert records[0].mode == "zeroshot" and 0 <= records[0].value <= 1


def test_zeroshot_dump_files(tmp_path):
    path = make_archive(tmp_path, **{"gpt3-per-class": 2})
    preds_file = tmp_path / "preds.u32"
    prov_file = tmp_path / "prov.json"
    assert run_cli("zeroshot", "--archive", path, "--out", str(tmp_path / "r"),
                   "--knowledge", "gpt3:2",
                   "--dump-predictions", str(preds_file),
                   "--dump-provenance", str(prov_file)) == 0
    preds = np.fromfile(preds_file, dtype="<u4")
    assert len(preds) == 32  # 4 classes x 8 test samples
    prov = json.loads(prov_file.read_text())
    assert prov["knowledge"] == "gpt3:2"
    assert set(prov["per_class"]) == {"0", "1", "2", "3"}


def test_adapt_and_idempotent_rerun(tmp_path, capsys):
    path = make_archive(tmp_path)
    out = tmp_path / "res"
    args = ("adapt", "--archive", path, "--shots", "5", "--seeds", "0,1",
            "--mode", "lp", "--init", "lang-sep", "--grid-lr", "1e-4",
            "--grid-wd", "0", "--search-epochs", "1", "--final-epochs", "1",
            "--out", str(out), "--canonical")
    assert run_cli(*args) == 0
    first = (out / "results.jsonl").read_bytes()
    records, _ = read_results(out / "results.jsonl")
    assert len(records) == 2
    assert run_cli(*args) == 0  # idempotent: no new lines, same bytes
    assert (out / "results.jsonl").read_bytes() == first


def manifest_for(tmp_path, archives, **overrides):
    manifest = {
        "archives": archives,
        "modes": ["lp"],
        "inits": ["lang-sep", "lang-merge"],
        "shots": [5, 20],
        "seeds": [0, 1, 2],
        "grid": {"learning_rates": [1e-4], "weight_decays": [0.0],
                 "search_epochs": 1, "final_epochs": 1},
        "out_dir": str(tmp_path / "out"),
        "workers": 2,
    }
    manifest.update(overrides)
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(manifest))
    return str(path)


def test_run_manifest_cross_product(tmp_path):
    archives = [make_archive(tmp_path, "arc_a", seed=1),
                make_archive(tmp_path, "arc_b", seed=2)]
    mpath = manifest_for(tmp_path, archives)
    assert run_cli("run", mpath, "--canonical") == 0
    records, _ = read_results(tmp_path / "out" / "results.jsonl")
    assert len(records) == 24  # 2 archives x 2 inits x 2 shots x 3 seeds
    assert all(r.status == "ok" for r in records)
    keys = [r.key() for r in records]
    assert keys == sorted(keys)  # canonical ordering


def test_run_zeroshot_mode_collapses(tmp_path):
    archives = [make_archive(tmp_path, "arc_z")]
    mpath = manifest_for(tmp_path, archives, modes=["zeroshot"],
                         inits=["lang-sep"])
    assert run_cli("run", mpath) == 0
    records, _ = read_results(tmp_path / "out" / "results.jsonl")
    assert len(records) == 1


def test_run_rerun_is_noop(tmp_path, capsys):
    archives = [make_archive(tmp_path, "arc_c")]
    mpath = manifest_for(tmp_path, archives, shots=[5], seeds=[0],
                         inits=["lang-sep"])
    assert run_cli("run", mpath, "--canonical") == 0
    capsys.readouterr()
    first = (tmp_path / "out" / "results.jsonl").read_bytes()
    assert run_cli("run", mpath, "--canonical") == 0
    assert "executed 0 settings" in capsys.readouterr().out
    assert (tmp_path / "out" / "results.jsonl").read_bytes() == first


def test_run_manifest_validation(tmp_path, capsys):
    archives = [make_archive(tmp_path, "arc_d")]
    mpath = manifest_for(tmp_path, archives, modes=["zeroshot", "lp"],
                         inits=["random"])
    assert run_cli("run", mpath) == 1
    assert "zeroshot forbids random" in capsys.readouterr().err
    mpath = manifest_for(tmp_path, archives, shots=[0])
    assert run_cli("run", mpath) == 1
    assert "zero-shot is a mode" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# report

def write_results(path, records):
    with open(path, "w") as f:
        for r in records:
            f.write(json.dumps(r.to_dict()) + "\n")


def fake_record(dataset, seed, value, shots=5):
    return RunRecord(dataset=dataset, mode="lp", init_kind="lang-sep",
                     knowledge="none", shots=shots, seed=seed,
                     metric_kind="accuracy", value=value)


def test_report_formats_mean_pm_std(tmp_path, capsys):
    path = tmp_path / "r.jsonl"
    write_results(path, [fake_record("d", s, v)
                         for s, v in [(0, 0.01), (1, 0.02), (2, 0.03)]])
    assert run_cli("report", str(path)) == 0
    out = capsys.readouterr().out
    assert "2.00 ± 1.00" in out
    assert "AVERAGE" in out


def test_report_empty_results(tmp_path, capsys):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    assert run_cli("report", str(path)) == 0
    assert "(no results)" in capsys.readouterr().out


def test_report_dataset_ordering_and_average(tmp_path, capsys):
    path = tmp_path / "r.jsonl"
    write_results(path, [fake_record("zebra", 0, 0.9),
                         fake_record("apple", 0, 0.2),
                         fake_record("mango", 0, 0.4)])
    assert run_cli("report", str(path), "--out", str(tmp_path / "rep")) == 0
    out = capsys.readouterr().out
    apple, mango, zebra = out.index("apple"), out.index("mango"), out.index("zebra")
    assert apple < mango < zebra < out.index("AVERAGE")
    assert "50.00" in out  # unweighted mean of 0.9/0.2/0.4
    csv = (tmp_path / "rep" / "report.csv").read_text()
    assert "lp,lang-sep,none,5,apple,1,20.0000,0.0000" in csv


def test_report_byte_identical_for_identical_inputs(tmp_path):
    path = tmp_path / "r.jsonl"
    write_results(path, [fake_record("d", s, 0.5 + s / 10) for s in range(3)])
    records, _ = read_results(path)
    assert render_report(records) == render_report(records)


def test_report_malformed_line_numbers(tmp_path, capsys):
    path = tmp_path / "bad.jsonl"
    good = json.dumps(fake_record("d", 0, 0.5).to_dict())
    path.write_text(good + "\n{broken\n" + good + "\n")
    assert run_cli("report", str(path)) == 1
    assert ":2:" in capsys.readouterr().err


def test_jsonl_round_trip(tmp_path):
    rec = fake_record("d", 1, 0.625)
    rec.val_trace = [0.1, 0.5]
    rec.eta, rec.alpha = 1e-3, 1e-2
    path = tmp_path / "r.jsonl"
    write_results(path, [rec])
    [back], errors = read_results(path)
    assert not errors
    assert back == rec
