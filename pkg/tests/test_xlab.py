import json
import subprocess
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
import yaml

from singdrift.cli import main
from singdrift.errors import DomainError, RegimeError
from singdrift.xlab import KINDS, ExperimentConfig, build_drift, regime_table, run_experiment

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def small(kind, **kw):
    base = {
        "counterexample_sweep": dict(h=[0.6], n_paths=6, n_steps=2048, params={"gamma": 0.55, "alpha": [1.0, 0.5]}),
        "localtime_exponents": dict(h=[0.3, 0.2], n_paths=40, n_steps=1024),
        "skew_legall": dict(h=[0.3], n_paths=200, n_steps=512, params={"beta": [1.0]}),
        "variation_scaling": dict(h=[0.3], n_paths=8, n_steps=512, drift={"type": "delta"}),
        "fbm_validate": dict(h=[0.3, 0.7], n_paths=100, n_steps=256),
    }[kind]
    base.update(kw)
    return ExperimentConfig(kind=kind, **base)


class TestConfig:
    @pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.yaml")))
    def test_shipped_configs_load(self, name):
        cfg = ExperimentConfig.load(CONFIGS / name)
        assert cfg.kind in KINDS
        assert name == f"{cfg.kind}.yaml"

    def test_empty_path_list(self):
        with pytest.raises(DomainError, match="empty path list"):
            ExperimentConfig(kind="localtime_exponents", n_paths=0)

    def test_unknown_key(self):
        with pytest.raises(DomainError, match="unknown config keys"):
            ExperimentConfig.from_dict({"kind": "fbm_validate", "paths": 3})

    def test_unknown_kind(self):
        with pytest.raises(DomainError):
            ExperimentConfig(kind="nonsense")

    def test_regime_refusal(self):
        with pytest.raises(RegimeError) as info:
            ExperimentConfig(kind="variation_scaling", h=[0.75], drift={"type": "delta"})
        assert info.value.classification.verdict == "counterexample_regime"

    def test_boundary_allowed_for_skew(self):
        cfg = ExperimentConfig(kind="skew_legall", h=[0.5])
        assert cfg.regimes[0].verdict == "boundary"

    def test_hash_ignores_output_and_jobs(self):
        cfg = small("localtime_exponents")
        assert cfg.config_hash() == cfg.with_overrides(out="elsewhere", n_jobs=3).config_hash()
        assert cfg.config_hash() != cfg.with_overrides(seed=1).config_hash()

    def test_overrides_revalidate(self):
        with pytest.raises(DomainError):
            small("localtime_exponents").with_overrides(n_paths=0)

    @pytest.mark.parametrize("spec", [{"type": "power", "alpha": 0.6, "p": 2}, {"type": "what"}, {}])
    def test_bad_drift_specs(self, spec):
        with pytest.raises(DomainError):
            build_drift(spec)


class TestRegimeTable:
    def test_pointwise_against_fractions(self):
        hs = [Fraction(i, 51) for i in range(1, 51)]
        ps = [Fraction(j) for j in range(1, 51)]
        tab = regime_table([float(h) for h in hs], [float(p) for p in ps], [1, 2, 3])
        assert len(tab.rows) == 3 * 50 * 50
        it = iter(tab.rows)
        for d in (1, 2, 3):
            for h in hs:
                for p in ps:
                    row = next(it)
                    m = (1 / h - 1) - d / p
                    want = "boundary" if m == 0 else ("weak_existence" if m > 0 else "counterexample_regime")
                    assert row[6] == want, (d, h, p)

    def test_boundary_cells_straddle(self):
        tab = regime_table([i / 51 for i in range(1, 51)], range(1, 51), [1])
        for row in tab.rows:
            if row[6] == "boundary":
                assert row[7]

    def test_run_counts(self, tmp_path):
        res = run_experiment(ExperimentConfig.load(CONFIGS / "regime_table.yaml"), out=tmp_path)
        print(res.summary["counts"])
        assert res.summary["cells"] == 7500
        assert res.summary["counts"]["boundary"] > 0
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["config_hash"] == res.config_hash


class TestRuns:
    @pytest.mark.parametrize("kind", ["fbm_validate", "localtime_exponents", "skew_legall",
                                      "counterexample_sweep", "variation_scaling"])
    def test_headers(self, kind, tmp_path):
        res = run_experiment(small(kind), out=tmp_path)
        for name in res.tables:
            head = (tmp_path / f"{name}.csv").read_text().splitlines()[:5]
            assert head[0] == f"# kind={kind}"
            assert head[1] == f"# config_hash={res.config_hash}"
            assert any(line.startswith("# seed=") for line in head)

    @pytest.mark.parametrize("kind", ["localtime_exponents", "counterexample_sweep", "skew_legall"])
    def test_thread_count_does_not_change_output(self, kind, tmp_path):
        a = run_experiment(small(kind, n_jobs=1), out=tmp_path / "a")
        b = run_experiment(small(kind, n_jobs=2), out=tmp_path / "b")
        for name in a.tables:
            assert (tmp_path / "a" / f"{name}.csv").read_bytes() == (tmp_path / "b" / f"{name}.csv").read_bytes()
        assert (tmp_path / "a" / "manifest.json").read_bytes() == (tmp_path / "b" / "manifest.json").read_bytes()

    def test_counterexample_contrast(self, tmp_path):
        res = run_experiment(small("counterexample_sweep"), out=tmp_path)
        print(res.summary)
        rows = res.tables["fractions"].rows
        assert rows[0][2] == 1.0 and rows[0][3] and rows[0][5] > 0.8
        assert rows[1][2] == 0.5 and not rows[1][3] and rows[1][5] < 0.5


class TestCli:
    def write(self, tmp_path, data):
        p = tmp_path / "cfg.yaml"
        p.write_text(yaml.safe_dump(data))
        return str(p)

    def test_success(self, tmp_path, capsys):
        cfg = self.write(tmp_path, {"kind": "fbm_validate", "h": [0.3], "n_paths": 50, "n_steps": 128})
        assert main(["fbm_validate", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["status"] == "ok"
        assert (tmp_path / "o" / "manifest.json").exists()

    def test_regime_refusal_exit_code(self, tmp_path, capsys):
        cfg = self.write(tmp_path, {"kind": "variation_scaling", "h": [0.75], "drift": {"type": "delta"}})
        assert main(["variation_scaling", "--config", cfg]) == 2
        err = json.loads(capsys.readouterr().err)
        assert err["reason"] == "regime"
        assert err["classification"]["verdict"] == "counterexample_regime"

    @pytest.mark.parametrize("data", [{"kind": "fbm_validate", "n_paths": 0}, {"kind": "fbm_validate", "bogus": 1}])
    def test_invalid_config_exit_code(self, tmp_path, data):
        assert main(["fbm_validate", "--config", self.write(tmp_path, data)]) == 2

    def test_kind_mismatch(self, tmp_path):
        cfg = self.write(tmp_path, {"kind": "fbm_validate"})
        assert main(["skew_legall", "--config", cfg]) == 2

    def test_missing_file(self, tmp_path):
        assert main(["fbm_validate", "--config", str(tmp_path / "none.yaml")]) == 2

    def test_module_entry_point(self, tmp_path):
        cfg = self.write(tmp_path, {"kind": "regime_table", "params": {"h_grid": [0.25, 0.5], "p_grid": [1, 2]}})
        proc = subprocess.run([sys.executable, "-m", "singdrift", "regime_table", "--config", cfg,
                               "--out", str(tmp_path / "o")], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        assert json.loads(proc.stdout)["summary"]["cells"] == 4


class TestScaleValidation:
    @pytest.mark.parametrize("kind,key", [("localtime_exponents", "space_offsets"), ("localtime_exponents", "deltas"),
                                          ("sewing_rates", "T_list"), ("variation_scaling", "deltas")])
    def test_too_few_scales(self, kind, key):
        cfg = ExperimentConfig.load(CONFIGS / f"{kind}.yaml")
        with pytest.raises(DomainError, match="at least 4"):
            cfg.with_overrides(params=dict(cfg.params, **{key: [0.5, 0.25]}))
