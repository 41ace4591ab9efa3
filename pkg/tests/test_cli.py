import json
import random
import subprocess
import sys

import pytest

from clickintent.cli import main
from clickintent.corpus import load_corpus
from clickintent.domain import EventType
from clickintent.synthgen import GeneratorSpec, generate

SUBCOMMANDS = ["sessionize", "prepare", "stats", "train", "evaluate", "compare", "generate", "gradcheck", "sweep"]
NAMES = {e.value: e.label for e in EventType}


def write_raw_log(path, n_sessions=160, seed=0):
    """Raw TSV log whose sessions come from the bundled generator; BUY sessions get a buy event inserted."""
    rnd = random.Random(seed)
    lines = ["client_id\tuser_id\tsession_id\ttimestamp\tevent_id\tevent_type\tproduct_id\tproduct_meta"]
    ts = 1_530_000_000_000
    for i, s in enumerate(generate(GeneratorSpec.default(), n_sessions, seed=seed, stratified=True)):
        symbols = list(s.symbols)
        if s.label.value == "BUY":
            symbols.insert(rnd.randrange(10, len(symbols) + 1), 5)
        for code in symbols:
            ts += rnd.randint(1_000, 60_000)
            lines.append(f"client{i % 20}\t\tsess{i}\t{ts}\tev{ts}\t{NAMES[code]}\tprod\t{{}}")
        ts += 2 * 1_800_000
    path.write_text("\n".join(lines) + "\n")


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipeline")
    write_raw_log(root / "raw.tsv")
    assert main(["sessionize", "--input", str(root / "raw.tsv"), "--output", str(root / "sessions.txt")]) == 0
    assert main(["prepare", "--input", str(root / "sessions.txt"), "--output", str(root / "corpus"), "--seed", "1"]) == 0
    return root / "corpus"


@pytest.mark.parametrize("command", SUBCOMMANDS)
def test_help(command, capsys):
    with pytest.raises(SystemExit) as exc:
        main([command, "--help"])
    assert exc.value.code == 0
    assert "--" in capsys.readouterr().out


def test_usage_errors_exit_2(capsys):
    for argv in (["bogus"], ["train", "--model", "s2l", "--pooling", "last"], ["evaluate", "--input", "x", "--output", "y"]):
        with pytest.raises(SystemExit) as exc:
            main(argv)
        assert exc.value.code == 2


def test_data_error_exits_1(tmp_path, capsys):
    assert main(["train", "--input", str(tmp_path / "missing"), "--output", str(tmp_path / "m.json"), "--model", "nb"]) == 1
    assert "error" in capsys.readouterr().err
    bad = tmp_path / "bad.tsv"
    bad.write_text("client_id\tnope\tnope\tnope\tnope\tnope\n")
    assert main(["sessionize", "--input", str(bad), "--output", str(tmp_path / "s.txt")]) == 1


def test_pipeline_outputs(corpus_dir, tmp_path, capsys):
    prep = json.loads((corpus_dir / "prepare_run.json").read_text())
    assert prep["config"]["seed"] == 1
    counts = prep["class_counts"]
    assert all(c["BUY"] == c["NOBUY"] for c in counts.values())
    assert all(5 not in s.symbols for s in load_corpus(corpus_dir).all_sessions())

    assert main(["stats", "--input", str(corpus_dir), "--output", str(tmp_path / "stats")]) == 0
    stats = json.loads((tmp_path / "stats" / "stats.json").read_text())
    assert set(stats["stats"]["groups"]) == {"ALL", "BUY", "NOBUY"}
    assert (tmp_path / "stats" / "transitions_diff.csv").exists()


def test_train_and_evaluate_checkpoint(corpus_dir, tmp_path, capsys):
    model = tmp_path / "mc.json"
    assert main(["train", "--input", str(corpus_dir), "--output", str(model), "--model", "mc", "--order", "2"]) == 0
    doc = json.loads(model.read_text())
    assert doc["format"] == "clickintent.mc" and doc["run"]["seed"] == 0
    assert main(["evaluate", "--input", str(corpus_dir), "--output", str(tmp_path / "ev"), "--checkpoint", str(model)]) == 0
    report = json.loads((tmp_path / "ev" / "report.json").read_text())
    direct = tmp_path / "ev2"
    assert main(["evaluate", "--input", str(corpus_dir), "--output", str(direct), "--model", "mc", "--order", "2"]) == 0
    assert json.loads((direct / "report.json").read_text())["accuracies"] == report["accuracies"]


def test_repeat_runs_are_byte_identical(corpus_dir, tmp_path, capsys):
    flags = ["--model", "s2l", "--hidden", "3", "--batch", "25", "--max-epochs", "2", "--seed", "4"]
    for out in ("a", "b"):
        assert main(["train", "--input", str(corpus_dir), "--output", str(tmp_path / f"{out}.json"), *flags]) == 0
        assert main(["evaluate", "--input", str(corpus_dir), "--output", str(tmp_path / f"ev_{out}"), "--runs", "2", *flags]) == 0
        assert main(["generate", "--n", "50", "--seed", "2", "--output", str(tmp_path / f"gen_{out}.txt")]) == 0
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert (tmp_path / "ev_a" / "report.json").read_bytes() == (tmp_path / "ev_b" / "report.json").read_bytes()
    assert (tmp_path / "gen_a.txt").read_bytes() == (tmp_path / "gen_b.txt").read_bytes()
    assert "wall_clock_s" in json.loads((tmp_path / "ev_a" / "timing.json").read_text())


def test_generate_is_balanced_by_default(tmp_path, capsys):
    assert main(["generate", "--spec", "default.json", "--n", "40", "--seed", "0", "--output", str(tmp_path / "g.txt")]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["buy"] == summary["nobuy"] == 20
    assert summary["seed"] == 0


def test_compare(tmp_path, capsys):
    def report(name, accs):
        runs = [{"confusion": {"tp": int(a * 100), "fn": 0, "fp": 100 - int(a * 100), "tn": 0}} for a in accs]
        path = tmp_path / f"{name}.json"
        path.write_text(json.dumps({"model_id": name, "config": {}, "seeds": list(range(len(accs))), "runs": runs}))
        return str(path)

    a, b = report("a", [0.93, 0.94, 0.93, 0.94]), report("b", [0.80, 0.81, 0.80, 0.81])
    assert main(["compare", "--input", a, b, "--output", str(tmp_path / "cmp")]) == 0
    assert json.loads((tmp_path / "cmp" / "compare.json").read_text())["decision"] == "a_better"


def test_gradcheck(tmp_path, capsys):
    assert main(["gradcheck", "--n", "6", "--output", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "gradcheck.json").read_text())
    assert doc["passed"] is True and doc["configurations"] == 6


def test_sweep(corpus_dir, tmp_path, capsys):
    argv = ["sweep", "--input", str(corpus_dir), "--output", str(tmp_path), "--model", "s2l",
            "--hidden", "2", "3", "--lr", "0.01", "--batch", "50", "--max-epochs", "1"]
    assert main(argv) == 0
    ranked = json.loads((tmp_path / "sweep.json").read_text())["ranked"]
    assert len(ranked) == 2
    assert ranked[0]["val_accuracy"] >= ranked[1]["val_accuracy"]


def test_console_script():
    out = subprocess.run([sys.executable, "-m", "clickintent.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and "clickintent" in out.stdout
