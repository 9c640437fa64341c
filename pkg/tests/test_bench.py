import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ahits.bench import cli
from ahits.bench.config import (
    DESK_PAIRS_PER_EPOCH,
    DESK_WIDTH_CAP,
    ExperimentConfig,
    preset,
    with_overrides,
)
from ahits.bench.experiment import (
    RunPaths,
    compare_methods,
    noise_sweep,
    run_and_compare,
    run_experiment,
)
from ahits.bench.report import CSV_HEADER, ComparisonReport, ReportRow, emit_report, load_report
from ahits.errors import ConfigError, DivergenceError, FormatError, InvalidArgumentError


def tiny_config(**overrides) -> ExperimentConfig:
    base = dict(system="hyperbolic", counts=(6, 3, 3), widths=[8], epsilon=1e-5, t_f=2.56, m=4,
                train={"epochs": 3, "batch_size": 64}, noise_pcts=[0.0, 10.0], scale="desk")
    base.update(overrides)
    return ExperimentConfig.from_dict(base)


class TestConfig:
    def test_round_trip(self, tmp_path):
        cfg = preset("cubic")
        path = tmp_path / "c.json"
        path.write_text(cfg.to_json())
        assert ExperimentConfig.load(path) == cfg

    def test_short_form(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"system": "hopf", "scale": "desk", "overrides": {"seed": 7}}))
        cfg = ExperimentConfig.load(path)
        assert cfg.seed == 7 and cfg == with_overrides(preset("hopf"), {"seed": 7})

    @pytest.mark.parametrize("bad", [
        {"epsilon": 0.0}, {"counts": [1, 2]}, {"m": 13}, {"activation": "gelu"}, {"dt": 0.02},
        {"threads": 0}, {"system": "lorenz"}, {"window_pool": "all"}, {"window_seeding": "x"},
        {"noise_pcts": [-1.0]}, {"bogus": 1},
    ])
    def test_invalid(self, bad):
        with pytest.raises(ConfigError):
            with_overrides(preset("cubic"), bad)

    def test_bad_json(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            ExperimentConfig.load(path)

    def test_hash_ignores_placement(self):
        cfg = preset("cubic")
        assert cfg.config_hash() == with_overrides(cfg, {"out_dir": "/x", "threads": 4}).config_hash()
        assert cfg.config_hash() != with_overrides(cfg, {"seed": 1}).config_hash()
        assert cfg.config_hash() != with_overrides(cfg, {"train": {"epochs": 7}}).config_hash()

    def test_desk_transform(self):
        paper, desk = preset("vanderpol", "paper"), preset("vanderpol", "desk")
        assert paper.counts == (3200, 320, 320) and desk.counts == (800, 80, 80)
        assert max(desk.widths) == DESK_WIDTH_CAP and paper.widths == [512] * 3
        assert desk.train.max_pairs_per_epoch == DESK_PAIRS_PER_EPOCH
        assert desk.epsilon == paper.epsilon == 8e-2
        assert preset("ks").counts == preset("ks", "paper").counts

    def test_per_level_widths(self):
        ks = preset("ks", "paper")
        assert ks.architecture(0) == [512, 2048, 512] and ks.architecture(10) == [512, 128, 512]
        fhn = preset("fhn", "paper")
        assert fhn.architecture(0)[0] == fhn.architecture(0)[-1] == 100 and fhn.m == 6


def _rows(n_methods=12, noise=(0.0, 1.0, 2.0, 5.0, 10.0)):
    rng = np.random.default_rng(0)
    return [ReportRow(f"m{i}", int(rng.integers(1, 5000)), float(rng.random()), float(rng.random()),
                      float(rng.random() * 1e-3), "cubic", p) for p in noise for i in range(n_methods)]


class TestReport:
    def test_sixty_rows(self, tmp_path):
        report = ComparisonReport(_rows())
        (csv_path,) = emit_report(report, tmp_path / "r", ("csv",))
        lines = csv_path.read_text().splitlines()
        assert len(lines) == 61 and tuple(lines[0].split(",")) == CSV_HEADER

    def test_csv_reemit_identical(self, tmp_path):
        text = ComparisonReport(_rows()).to_csv()
        back = ComparisonReport.from_csv(text)
        assert back.to_csv() == text
        assert [r.key() for r in back.rows] == [r.key() for r in _rows()]

    def test_single_group_plain_method(self):
        report = ComparisonReport(_rows(3, (0.0,)))
        assert report.to_csv().splitlines()[1].startswith("m0,")

    def test_json_round_trip(self, tmp_path):
        report = ComparisonReport(_rows(), {"seed": 3})
        paths = emit_report(report, tmp_path / "r")
        for p in paths:
            assert [r.key() for r in load_report(p).rows] == [r.key() for r in report.rows]
        assert load_report(tmp_path / "r.json").metadata == {"seed": 3}

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.integers(1, 10**6), st.floats(0, 1e6), st.floats(0, 1e6)), min_size=1, max_size=20))
    def test_csv_exact_floats(self, vals):
        rows = [ReportRow(f"x{i}", s, w, r, r / 2) for i, (s, w, r) in enumerate(vals)]
        back = ComparisonReport.from_csv(ComparisonReport(rows).to_csv())
        assert [r.key() for r in back.rows] == [r.key() for r in rows]
        assert [r.wall_seconds for r in back.rows] == [r.wall_seconds for r in rows]

    def test_bad_rows(self):
        with pytest.raises(InvalidArgumentError):
            ReportRow("x", 0, 0.0, 0.0, 0.0)
        with pytest.raises(InvalidArgumentError):
            ReportRow("x", 1, 0.0, -1.0, 0.0)
        with pytest.raises(InvalidArgumentError):
            ReportRow("x", 1, 0.0, float("nan"), 0.0)
        with pytest.raises(InvalidArgumentError):
            emit_report(ComparisonReport([]), "r")

    def test_bad_documents(self):
        with pytest.raises(FormatError):
            ComparisonReport.from_csv("a,b\n1,2\n")
        with pytest.raises(FormatError):
            ComparisonReport.from_json(json.dumps({"format": "other", "rows": []}))


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    cfg = tiny_config()
    out = tmp_path_factory.mktemp("run")
    run, report = run_and_compare(cfg, out)
    return cfg, out, run, report


class TestPipeline:
    def test_layout_and_rows(self, tiny_run):
        cfg, out, run, report = tiny_run
        paths = RunPaths(out)
        assert paths.manifest.exists() and paths.plan().exists()
        assert (paths.hierarchy() / "manifest.json").exists()
        assert report.methods() == [f"NNTS {d}" for d in range(5)] + ["HiTS", "AHiTS"]
        assert report.row("NNTS 2").steps == 256 // 4
        assert report.row("AHiTS").steps == len(run.plan.steps)
        assert report.row("HiTS").steps == 256 // 2**run.selection.lower
        manifest = json.loads((paths.hierarchy() / "manifest.json").read_text())
        assert sorted(manifest["train_seeds"], key=int) == [str(d) for d in range(5)]

    def test_stage_skip(self, tiny_run):
        cfg, out, run, _ = tiny_run
        ckpt = RunPaths(out).hierarchy() / "nnts_00.ahck"
        before = ckpt.stat().st_mtime_ns
        again = run_experiment(cfg, out)
        assert ckpt.stat().st_mtime_ns == before
        assert again.plan == run.plan and again.selection == run.selection

    def test_schedule_only_change_keeps_training(self, tiny_run, tmp_path):
        cfg, out, _, _ = tiny_run
        import shutil
        copy = tmp_path / "copy"
        shutil.copytree(out, copy)
        ckpt = RunPaths(copy).hierarchy() / "nnts_00.ahck"
        before = ckpt.stat().st_mtime_ns
        run_experiment(with_overrides(cfg, {"epsilon": 1.0}), copy)
        assert ckpt.stat().st_mtime_ns == before

    def test_deterministic_rerun(self, tiny_run, tmp_path):
        cfg, out, _, report = tiny_run
        _, again = run_and_compare(cfg, tmp_path / "b")
        assert [r.key() for r in again.rows] == [r.key() for r in report.rows]
        for d in range(cfg.m + 1):
            name = f"nnts_{d:02d}.ahck"
            assert (out / "hierarchy" / name).read_bytes() == (tmp_path / "b" / "hierarchy" / name).read_bytes()

    def test_thread_count_irrelevant(self, tiny_run, tmp_path):
        cfg, _, _, report = tiny_run
        _, threaded = run_and_compare(with_overrides(cfg, {"threads": 3}), tmp_path / "t")
        assert [r.key() for r in threaded.rows] == [r.key() for r in report.rows]

    def test_single_level_hits_equals_ahits(self, tmp_path):
        cfg = tiny_config(m=0)
        _, report = run_and_compare(cfg, tmp_path)
        hits, ahits = report.row("HiTS"), report.row("AHiTS")
        assert hits.steps == ahits.steps == 256
        assert hits.relative_mse == ahits.relative_mse and hits.plain_mse == ahits.plain_mse

    def test_zero_noise_matches_compare(self, tiny_run):
        cfg, out, run, report = tiny_run
        (clean, noisy) = noise_sweep(cfg, out)
        assert [r.key() for r in clean.rows] == [r.key() for r in report.rows]
        assert {r.noise_pct for r in noisy.rows} == {10.0}
        assert (RunPaths(out).hierarchy(10.0) / "manifest.json").exists()

    def test_compare_rejects_missing_hierarchy(self, tiny_run):
        cfg, _, run, _ = tiny_run
        with pytest.raises(FileNotFoundError):
            compare_methods(cfg, None, run.datasets, run.plan, run.selection)


class TestCli:
    def _config(self, tmp_path, **overrides):
        path = tmp_path / "cfg.json"
        path.write_text(tiny_config(**overrides).to_json())
        return path

    def test_compare_and_report(self, tmp_path, capsys):
        cfg = self._config(tmp_path)
        out = tmp_path / "run"
        assert cli.main(["compare", "--config", str(cfg), "--out", str(out)]) == 0
        assert (out / "reports" / "compare.csv").exists() and (out / "config.json").exists()
        capsys.readouterr()
        assert cli.main(["report", str(out / "reports" / "compare.csv"), "--csv"]) == 0
        assert capsys.readouterr().out == (out / "reports" / "compare.csv").read_text()
        assert cli.main(["report", str(out / "reports" / "compare.json")]) == 0
        assert "AHiTS" in capsys.readouterr().out

    def test_schedule_command(self, tmp_path, capsys):
        cfg = self._config(tmp_path)
        assert cli.main(["schedule", "--config", str(cfg), "--out", str(tmp_path / "run")]) == 0
        assert "adaptive schedule" in capsys.readouterr().out

    def test_config_errors(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"system": "cubic", "counts": [1, 1, 1], "widths": [4], "epsilon": -1}))
        assert cli.main(["train", "--config", str(bad)]) == 2
        assert cli.main(["generate"]) == 2

    def test_io_errors(self, tmp_path):
        assert cli.main(["report", str(tmp_path / "missing.csv")]) == 4
        junk = tmp_path / "junk.csv"
        junk.write_text("no,header\n")
        assert cli.main(["report", str(junk)]) == 4
        assert cli.main(["train", "--config", str(tmp_path / "missing.json")]) == 4

    def test_divergence_exit(self, tmp_path, monkeypatch):
        def boom(*args, **kwargs):
            raise DivergenceError("non-finite state", where=3)
        monkeypatch.setattr(cli, "run_experiment", boom)
        cfg = self._config(tmp_path)
        assert cli.main(["compare", "--config", str(cfg), "--out", str(tmp_path / "run")]) == 3

    def test_format_table(self):
        table = cli.format_table(ComparisonReport(_rows(2, (0.0,))))
        assert len(table.splitlines()) == 4
