import json

import pytest

from gatefuse import S_STAR, bayes_accuracy, generate
from gatefuse.cli import main
from gatefuse.io import load_checkpoint, load_dataset, load_report, load_sweep, read_dataset_header


def lines_of(capsys):
    return capsys.readouterr().out.splitlines()


def value_after(lines, prefix):
    return float(next(line for line in lines if line.startswith(prefix)).split()[-1])


@pytest.fixture(scope="module")
def star_run(tmp_path_factory):
    """S* dataset plus a gate trained with seed 1 and the default holdout."""
    d = tmp_path_factory.mktemp("star")
    assert main(["synth", "--seed", "7", "-o", str(d / "star.jsonl")]) == 0
    assert main(["train-gate", "--seed", "1", "-d", str(d / "star.jsonl"),
                 "--checkpoint", str(d / "gate.json"), "--report", str(d / "report.json")]) == 0
    return d


@pytest.fixture
def tiny(tmp_path):
    path = tmp_path / "tiny.jsonl"
    args = ["synth", "--seed", "3", "--class-count", "4", "--reliability", "[[0.9, 0.4], [0.4, 0.9]]",
            "--sample-count", "400", "-o", str(path)]
    assert main(args) == 0
    return path


class TestSynth:
    def test_reference_spec(self, star_run):
        ds = load_dataset(star_run / "star.jsonl")
        assert len(ds) == 8000
        assert ds.identical_to(generate(S_STAR))

    def test_artifact_names_command_and_config(self, star_run):
        meta = read_dataset_header(star_run / "star.jsonl")["meta"]
        assert meta["command"].startswith("gatefuse synth --seed 7")
        assert len(meta["config_sha256"]) == 64 and meta["seed"] == 7

    def test_prints_summary(self, tmp_path, capsys):
        main(["synth", "--seed", "2", "--sample-count", "100", "-o", str(tmp_path / "d.jsonl")])
        out = lines_of(capsys)
        assert "N=100 C=10 n=2 K=2" in out
        assert any(line.startswith("reliability m0: k0=") for line in out)

    def test_same_seed_same_bytes(self, tmp_path):
        path = tmp_path / "d.jsonl"
        args = ["synth", "--seed", "5", "--sample-count", "300", "-o", str(path)]
        main(args)
        first = path.read_bytes()
        main(args)
        assert path.read_bytes() == first

    def test_missing_output(self):
        assert main(["synth", "--seed", "5"]) == 2

    @pytest.mark.parametrize("flags", [["--class-count", "1"], ["--reliability", "[[1.5]]"], ["--mode", "x"]])
    def test_bad_spec_is_usage_error(self, tmp_path, flags):
        assert main(["synth", "-o", str(tmp_path / "d.jsonl"), *flags]) == 2

    def test_environment_seed(self, tmp_path, monkeypatch):
        monkeypatch.setenv("GATEFUSE_SEED", "11")
        main(["synth", "--sample-count", "50", "-o", str(tmp_path / "env.jsonl")])
        assert read_dataset_header(tmp_path / "env.jsonl")["meta"]["seed"] == 11

    def test_config_file(self, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps({"sample_count": 30, "seed": 4}))
        assert main(["synth", "--config", str(tmp_path / "c.json"), "-o", str(tmp_path / "d.jsonl")]) == 0
        assert len(load_dataset(tmp_path / "d.jsonl")) == 30

    def test_unknown_config_key(self, tmp_path, capsys):
        (tmp_path / "c.json").write_text('{"epochz": 3}')
        assert main(["synth", "--config", str(tmp_path / "c.json"), "-o", str(tmp_path / "d.jsonl")]) == 2
        assert "epochz" in capsys.readouterr().err


class TestSweep:
    def test_eleven_rows(self, tiny, tmp_path, capsys):
        assert main(["sweep", "-d", str(tiny), "--step", "0.1", "-o", str(tmp_path / "s.csv")]) == 0
        table = load_sweep(tmp_path / "s.csv")
        assert [tuple(r.weights) for r in table.result.rows] == [(k / 10, (10 - k) / 10) for k in range(10, -1, -1)]
        assert any(line.startswith("best fixed weights") for line in lines_of(capsys))
        assert table.meta["command"].startswith("gatefuse sweep")

    def test_single_modality(self, tmp_path):
        main(["synth", "--reliability", "[[0.7]]", "--sample-count", "50", "-o", str(tmp_path / "one.jsonl")])
        assert main(["sweep", "-d", str(tmp_path / "one.jsonl"), "-o", str(tmp_path / "s.csv")]) == 0
        assert len(load_sweep(tmp_path / "s.csv").result.rows) == 1

    def test_non_integral_step(self, tiny, tmp_path):
        assert main(["sweep", "-d", str(tiny), "--step", "0.3", "-o", str(tmp_path / "s.csv")]) == 2
        assert not (tmp_path / "s.csv").exists()

    def test_missing_dataset_file(self, tmp_path):
        assert main(["sweep", "-d", str(tmp_path / "nope.jsonl"), "-o", str(tmp_path / "s.csv")]) == 1

    def test_parallel_same_table(self, tiny, tmp_path):
        out = tmp_path / "s.csv"
        par = tmp_path / "p.csv"
        main(["sweep", "-d", str(tiny), "-o", str(out)])
        main(["sweep", "-d", str(tiny), "-o", str(par), "--n-jobs", "3"])

        def body(path):
            return [line for line in path.read_text().splitlines() if not line.startswith("#")]

        assert body(out) == body(par)


class TestTrainGate:
    def test_gate_beats_best_fixed_weight(self, star_run, capsys):
        main(["sweep", "-d", str(star_run / "star.jsonl"), "-o", str(star_run / "sweep.csv")])
        capsys.readouterr()
        best = load_sweep(star_run / "sweep.csv").result.best.accuracy
        report = load_report(star_run / "report.json")
        assert report.seed == 1 and report.holdout_size == 2000
        assert report.holdout_accuracy > best

    def test_checkpoint_contents(self, star_run):
        ck = load_checkpoint(star_run / "gate.json")
        assert ck.config.seed == 1 and ck.holdout_fraction == 0.25 and ck.modality_names == ("m0", "m1")
        assert ck.meta["command"].startswith("gatefuse train-gate")

    def test_zero_epochs(self, tiny, tmp_path):
        assert main(["train-gate", "-d", str(tiny), "--checkpoint", str(tmp_path / "g.json"), "--epochs", "0"]) == 2

    @pytest.mark.parametrize("flags", [["--holdout", "1.0"], ["--lr", "-1"], ["--gate-mode", "x"]])
    def test_bad_flags(self, tiny, tmp_path, flags):
        assert main(["train-gate", "-d", str(tiny), "--checkpoint", str(tmp_path / "g.json"), *flags]) == 2

    def test_rerun_same_bytes(self, tiny, tmp_path, capsys):
        args = ["train-gate", "-d", str(tiny), "--checkpoint", str(tmp_path / "g.json"), "--epochs", "3", "--seed", "2"]
        assert main(args) == 0
        first = (tmp_path / "g.json").read_bytes()
        main(args)
        assert (tmp_path / "g.json").read_bytes() == first
        out = lines_of(capsys)
        assert any(line.startswith("holdout accuracy") for line in out)
        assert any(line.startswith("mean gate weight m1:") for line in out)


class TestEval:
    def test_average_matches_half_half(self, tiny, capsys):
        main(["eval", "-d", str(tiny), "-s", "average"])
        avg = lines_of(capsys)
        main(["eval", "-d", str(tiny), "-s", "fixed:0.5,0.5"])
        fixed = lines_of(capsys)
        assert avg[1:] == fixed[1:]

    def test_fixed_one_hot_is_unimodal(self, tiny, capsys):
        main(["eval", "-d", str(tiny), "-s", "fixed:1.0,0.0"])
        acc = value_after(lines_of(capsys), "accuracy")
        ds = load_dataset(tiny)
        expected = (ds.scores[:, 0, :].argmax(axis=1) == ds.labels).mean()
        assert acc == pytest.approx(expected, abs=5e-7)

    def test_gated_needs_checkpoint(self, tiny):
        assert main(["eval", "-d", str(tiny), "-s", "gated"]) == 2

    @pytest.mark.parametrize("strategy", ["median", "fixed:0.5", "fixed:0.7,0.7"])
    def test_bad_strategy(self, tiny, strategy):
        assert main(["eval", "-d", str(tiny), "-s", strategy]) == 2

    def test_concat(self, tiny, capsys):
        assert main(["eval", "-d", str(tiny), "-s", "concat", "--concat-epochs", "50", "--holdout-only"]) == 0
        assert "samples 100" in lines_of(capsys)

    def test_gated_near_bayes(self, star_run, capsys):
        assert main(["eval", "-d", str(star_run / "star.jsonl"), "-s", "gated",
                     "--checkpoint", str(star_run / "gate.json")]) == 0
        acc = value_after(lines_of(capsys), "accuracy")
        assert abs(acc - bayes_accuracy(generate(S_STAR), S_STAR)) <= 0.02

    def test_append_gating_row(self, star_run, capsys):
        sweep = star_run / "gated_sweep.csv"
        main(["sweep", "-d", str(star_run / "star.jsonl"), "-o", str(sweep)])
        assert main(["eval", "-d", str(star_run / "star.jsonl"), "-s", "gated", "--checkpoint",
                     str(star_run / "gate.json"), "--holdout-only", "--sweep-csv", str(sweep), "--append-gating"]) == 0
        out = lines_of(capsys)
        assert "samples 2000" in out
        last = sweep.read_text().splitlines()[-1].split(",")
        assert last[0] == "gating" and float(last[-2]) == pytest.approx(value_after(out, "accuracy"), abs=5e-7)


class TestGradcheck:
    def test_default_passes(self, capsys):
        assert main(["gradcheck"]) == 0
        out = lines_of(capsys)
        assert "seed 123" in out[0] and out[-1] == "PASS"

    def test_zero_trials(self):
        assert main(["gradcheck", "--trials", "0"]) == 2

    def test_corrupted_gradient_fails(self):
        assert main(["gradcheck", "--corrupt-gradient", "--trials", "3"]) == 1


class TestUsage:
    def test_no_subcommand(self):
        assert main([]) == 2

    def test_unknown_flag(self):
        assert main(["sweep", "--bogus"]) == 2

    def test_help(self, capsys):
        assert main(["--help"]) == 0
        assert "train-gate" in capsys.readouterr().out
