import hashlib
import logging
import os

import pytest

from coarse_hydro.util import atomic_write, get_logger, getlogger, parallel_map, sha256sum


def test_getlogger_adds_file_handler_once(tmp_path):
    logger = getlogger("coarse-hydro-test", level=logging.DEBUG)
    logger = getlogger("coarse-hydro-test", str(tmp_path), level=logging.DEBUG)
    logger = getlogger("coarse-hydro-test", str(tmp_path), level=logging.DEBUG)
    files = [h for h in logger.handlers if isinstance(h, logging.FileHandler)]
    assert len(files) == 1
    logger.info("[test] hello %i", 1)
    files[0].flush()
    with open(os.path.join(tmp_path, "coarse-hydro-test.log")) as f:
        assert "[INFO] [test] hello 1" in f.read()


def test_get_logger_default():
    assert get_logger(None).name == "coarse-hydro"
    logger = logging.getLogger("other")
    assert get_logger(logger) is logger


def test_atomic_write_and_checksum(tmp_path):
    fname = os.path.join(tmp_path, "sub", "data.bin")
    atomic_write(fname, b"coarse")
    atomic_write(fname, b"grained")
    with open(fname, "rb") as f:
        assert f.read() == b"grained"
    assert sha256sum(fname) == hashlib.sha256(b"grained").hexdigest()
    assert [p for p in os.listdir(os.path.dirname(fname)) if p.startswith(".tmp-")] == []


@pytest.mark.parametrize("workers", [1, 3])
def test_parallel_map_keeps_order(workers):
    assert parallel_map(lambda x: x * x, range(10), workers) == [x * x for x in range(10)]
