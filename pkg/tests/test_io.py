import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pulselab import io
from pulselab import signal as S

BASE = {
    "kernel": {"family": "gaussian", "epsilon": 0.7},
    "grid": {"N": 10, "sigma": 1.0, "k_min": -50, "k_max": 50},
    "spikes": [{"k": -20, "c": 1.0}, {"k": 15, "c": -0.5}],
    "noise": {"delta": 1e-3, "seed": 4},
}


def write_cfg(tmp_path, obj=None, text=None):
    p = tmp_path / "cfg.json"
    p.write_text(text if text is not None else json.dumps(obj, indent=2))
    return p


class TestCsv:
    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=1, max_size=20))
    def test_float_round_trip(self, tmp_path_factory, values):
        p = tmp_path_factory.mktemp("csv") / "v.csv"
        io.write_csv(p, ["k", "y"], [(i, v) for i, v in enumerate(values)])
        back = [float(r[1]) for r in io.read_csv(p, ["k", "y"])]
        assert back == values

    def test_non_finite(self):
        assert io.format_float(math.nan) == "nan"
        assert io.format_float(-math.inf) == "-inf"
        assert io.format_float(0.1) == "0.10000000000000001"

    def test_header_mismatch(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("a,b\n1,2\n")
        with pytest.raises(io.ConfigError) as exc:
            io.read_csv(p, ["k", "y"])
        assert exc.value.line == 1

    def test_ragged_row(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("k,y\n1,2\n3\n")
        with pytest.raises(io.ConfigError) as exc:
            io.read_csv(p, ["k", "y"])
        assert exc.value.line == 3

    def test_measurement_round_trip(self, tmp_path):
        grid = S.GridConfig(N=1, sigma=1.0, k_min=-6, k_max=6)
        y = np.random.default_rng(0).normal(size=13)
        io.write_csv(tmp_path / "m.csv", ["k", "y"], zip(grid.indices, y))
        m = io.read_measurement(tmp_path / "m.csv", grid, 0.1)
        assert np.array_equal(m.y, y)
        other = S.GridConfig(N=1, sigma=1.0, k_min=-5, k_max=7)
        with pytest.raises(io.ConfigError):
            io.read_measurement(tmp_path / "m.csv", other, 0.1)

    def test_spikes_skip_zeros(self, tmp_path):
        io.write_csv(tmp_path / "s.csv", ["k", "c"], [(1, 0.0), (4, 2.5)])
        assert io.read_spikes(tmp_path / "s.csv") == S.SpikeTrain.from_pairs([(4, 2.5)])

    def test_bad_number(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("k,c\n1,abc\n")
        with pytest.raises(io.ConfigError) as exc:
            io.read_spikes(p)
        assert exc.value.line == 2


class TestJson:
    def test_non_finite_becomes_null(self, tmp_path):
        io.write_json(tmp_path / "a.json", {"x": math.nan, "y": np.float64(2.0), "z": np.arange(2)})
        assert json.loads((tmp_path / "a.json").read_text()) == {"x": None, "y": 2.0, "z": [0, 1]}


class TestConfig:
    def test_valid(self, tmp_path):
        cfg = io.load_config(write_cfg(tmp_path, BASE))
        assert cfg.grid.width == 101 and len(cfg.spikes) == 2
        assert cfg.delta == 1e-3 and cfg.seed == 4
        assert cfg.noise["kind"] == "uniform_sign"

    def test_unknown_key_line(self, tmp_path):
        obj = json.loads(json.dumps(BASE))
        obj["grid"]["Nsigma"] = 3
        p = write_cfg(tmp_path, obj)
        with pytest.raises(io.ConfigError) as exc:
            io.load_config(p)
        err = exc.value
        assert err.field_path == "grid.Nsigma"
        assert 'Nsigma' in p.read_text().splitlines()[err.line - 1]
        assert "unknown key" in str(err)

    def test_unknown_top_level(self, tmp_path):
        with pytest.raises(io.ConfigError, match="unknown key"):
            io.load_config(write_cfg(tmp_path, {**BASE, "extra": 1}))

    def test_wrong_type(self, tmp_path):
        obj = json.loads(json.dumps(BASE))
        obj["grid"]["N"] = "ten"
        with pytest.raises(io.ConfigError) as exc:
            io.load_config(write_cfg(tmp_path, obj))
        assert exc.value.field_path == "grid.N"

    def test_missing_section(self, tmp_path):
        with pytest.raises(io.ConfigError) as exc:
            io.load_config(write_cfg(tmp_path, {"kernel": BASE["kernel"]}))
        assert exc.value.field_path == "grid"

    def test_bad_family(self, tmp_path):
        obj = {**BASE, "kernel": {"family": "sinc"}}
        with pytest.raises(io.ConfigError) as exc:
            io.load_config(write_cfg(tmp_path, obj))
        assert exc.value.field_path == "kernel.family"

    def test_invalid_json_line(self, tmp_path):
        with pytest.raises(io.ConfigError) as exc:
            io.load_config(write_cfg(tmp_path, text='{\n  "kernel": {\n  "family": }\n}'))
        assert exc.value.line == 3

    def test_spike_outside_window(self, tmp_path):
        obj = {**BASE, "spikes": [{"k": 99, "c": 1.0}]}
        with pytest.raises(io.ConfigError) as exc:
            io.load_config(write_cfg(tmp_path, obj))
        assert exc.value.field_path == "spikes"

    def test_duplicate_spike(self, tmp_path):
        obj = {**BASE, "spikes": [{"k": 1, "c": 1.0}, {"k": 1, "c": 2.0}]}
        with pytest.raises(io.ConfigError):
            io.load_config(write_cfg(tmp_path, obj))

    def test_negative_delta(self, tmp_path):
        obj = {**BASE, "noise": {"delta": -1.0}}
        with pytest.raises(io.ConfigError) as exc:
            io.load_config(write_cfg(tmp_path, obj))
        assert exc.value.field_path == "noise.delta"

    def test_hash_is_canonical(self, tmp_path):
        a = io.load_config(write_cfg(tmp_path, BASE))
        reordered = dict(reversed(list(BASE.items())))
        b = io.parse_config(json.loads(json.dumps(reordered)))
        assert io.config_hash(a) == io.config_hash(b)
        c = io.parse_config({**BASE, "noise": {"delta": 2e-3, "seed": 4}})
        assert io.config_hash(a) != io.config_hash(c)

    def test_manifest(self, tmp_path):
        cfg = io.parse_config(BASE)
        io.write_manifest(tmp_path, cfg, "solve", 4, {"solve": 0.1}, [tmp_path / "b", tmp_path / "a"])
        man = json.loads((tmp_path / "manifest.json").read_text())
        assert man["config_sha256"] == io.config_hash(cfg)
        assert man["command"] == "solve" and man["seed"] == 4
        assert man["outputs"] == sorted(man["outputs"])
