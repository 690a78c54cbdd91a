import json

import numpy as np
import pytest

from zrp_diffusion import io
from zrp_diffusion.diffusion import DiffusionControls, simulate_diffusion_ensemble
from zrp_diffusion.errors import ValidationError
from zrp_diffusion.zrp import default_rates, initial_configuration, simulate_zrp_ensemble


@pytest.fixture
def diffusion_ensemble(complete3):
    return simulate_diffusion_ensemble(complete3, [0.2, 0.3, 0.5], 2.0,
                                       DiffusionControls(dt_base=1e-3), seed=3, replicas=6,
                                       grid=np.linspace(0, 2.0, 21), threads=1)


def test_zrp_csv(tmp_path, complete3):
    ens = simulate_zrp_ensemble(complete3, default_rates(complete3),
                                initial_configuration([0.5, 0.25, 0.25], 12), 0.1,
                                np.linspace(0, 0.1, 6), seed=1, replicas=3, threads=1)
    path = tmp_path / "zrp.csv"
    io.write_zrp(path, ens, {"b": 1.0})
    header = [line for line in path.read_text().splitlines() if line.startswith("#")]
    assert header == sorted(header)
    table = io.read_ensemble(path)
    assert table.kind == "zrp" and table.N == 12 and table.seed == 1
    assert table.masks is None
    assert int(table.metadata["events"]) == int(ens.events.sum())
    np.testing.assert_array_equal(table.sample_times, ens.sample_times)
    np.testing.assert_array_equal(table.points, ens.points)


def test_diffusion_csv_keeps_faces(tmp_path, diffusion_ensemble):
    path = tmp_path / "diff.csv"
    io.write_diffusion(path, diffusion_ensemble)
    table = io.read_ensemble(path)
    assert table.kind == "diffusion" and table.N is None
    np.testing.assert_array_equal(table.points, diffusion_ensemble.points)
    np.testing.assert_array_equal(table.masks, diffusion_ensemble.masks)


def test_absorptions_csv(tmp_path, diffusion_ensemble):
    path = tmp_path / "absorptions.csv"
    io.write_absorptions(path, diffusion_ensemble.records, seed=3, p=3)
    records = io.read_absorptions(path)
    assert len(records) == diffusion_ensemble.replicas
    for got, want in zip(records, diffusion_ensemble.records):
        assert got.sigmas == want.sigmas
        assert got.faces == want.faces
        assert got.terminal == want.terminal
        assert got.multi_events == want.multi_events


def test_not_a_trajectory(tmp_path):
    path = tmp_path / "other.csv"
    path.write_text("# kind=zrp\na,b\n1,2\n")
    with pytest.raises(ValidationError):
        io.read_ensemble(path)


def test_ragged_grids(tmp_path):
    path = tmp_path / "ragged.csv"
    path.write_text("replica,time,x_1,x_2\n0,0,1,0\n0,1,1,0\n1,0,0,1\n")
    with pytest.raises(ValidationError):
        io.read_ensemble(path)


def test_json_is_sorted_and_plain(tmp_path, capsys):
    report = {"b": np.float64(0.5), "a": np.arange(3), "c": (np.int64(2), None)}
    io.write_json(None, report)
    text = capsys.readouterr().out
    assert json.loads(text) == {"a": [0, 1, 2], "b": 0.5, "c": [2, None]}
    assert text.index('"a"') < text.index('"b"') < text.index('"c"')
    path = tmp_path / "report.json"
    io.write_json(path, report)
    assert path.read_text() == text
