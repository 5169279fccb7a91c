import json
import math
import os

import numpy as np
import pytest

from coarse_hydro.error import ArtifactError
from coarse_hydro.output import (
    MAGIC,
    RunManifest,
    decode_array,
    encode_array,
    read_array,
    read_manifest,
    write_array,
    write_csv,
    write_manifest,
)
from coarse_hydro.state import BoundNorm
from coarse_hydro.util import sha256sum


def test_cgh1_complex_layout():
    values = np.array([[1 + 2j, 3 - 4j, 0.5j]])
    data = encode_array(values)
    assert data[:4] == MAGIC
    assert np.frombuffer(data, "<u4", 1, 4)[0] == 2
    assert list(np.frombuffer(data, "<u8", 2, 8)) == [1, 3]
    assert list(np.frombuffer(data, "<f8", offset=24)) == [1.0, 2.0, 3.0, -4.0, 0.0, 0.5]


def test_cgh1_real_layout():
    values = np.arange(6.0).reshape(2, 3)
    data = encode_array(values)
    assert np.frombuffer(data, "<u4", 1, 4)[0] == 2 | (1 << 31)
    assert list(np.frombuffer(data, "<f8", offset=24)) == list(range(6))


def test_cgh1_file(tmp_path):
    fname = os.path.join(tmp_path, "a.cgh1")
    values = np.exp(1j * np.linspace(0, 1, 12)).reshape(3, 4)
    write_array(fname, values)
    back = read_array(fname)
    assert back.dtype == np.complex128
    np.testing.assert_array_equal(back, values)


def test_cgh1_rejects_corrupt_data():
    data = encode_array(np.ones(4))
    with pytest.raises(ArtifactError):
        decode_array(b"XXXX" + data[4:])
    with pytest.raises(ArtifactError):
        decode_array(data[:-8])
    with pytest.raises(ArtifactError):
        read_array("/nonexistent/a.cgh1")


def test_write_csv(tmp_path):
    fname = os.path.join(tmp_path, "t.csv")
    write_csv(fname, [{"l_av": 0.1, "T": math.inf, "norm": BoundNorm.sup}, {"l_av": 0.2, "T": 12.5, "norm": 0}])
    with open(fname) as f:
        assert f.read().splitlines() == ["l_av,T,norm", "0.1,inf,sup", "0.2,12.5,0"]


def test_manifest(tmp_path):
    manifest = RunManifest("evolve", {"physics": {"m": 1.0}}, str(tmp_path))
    manifest.array("x.cgh1", np.zeros(3))
    manifest.table("y.csv", [{"a": 1}])
    manifest.scalars["E_P"] = complex(1.0, -2.0)
    manifest.scalars["temperature"] = math.inf
    manifest.scalars["sup"] = np.float64(0.5)
    fname = write_manifest(manifest)
    assert os.path.basename(fname) == "manifest.json"
    data = read_manifest(str(tmp_path))
    assert data["command"] == "evolve"
    assert data["config"] == {"physics": {"m": 1.0}}
    assert data["scalars"] == {"E_P": [1.0, -2.0], "temperature": "inf", "sup": 0.5}
    assert data["files"] == {
        "x.cgh1": sha256sum(os.path.join(tmp_path, "x.cgh1")),
        "y.csv": sha256sum(os.path.join(tmp_path, "y.csv")),
    }
    json.dumps(data)
