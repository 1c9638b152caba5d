"""Session-scoped fixtures: generated datasets and a small trained teacher."""

import numpy as np
import pytest

import e2d.dataio as dio
from e2d import toydata
from e2d.squeeze import TeacherConfig, train_teacher


@pytest.fixture(scope="session")
def glyph_files(tmp_path_factory):
    out = tmp_path_factory.mktemp("glyphs")
    return toydata.write_glyphs_idx(out, train=1200, test=300, seed=404)


@pytest.fixture(scope="session")
def glyph_train(glyph_files):
    return dio.load_dataset("mnist", glyph_files["train_images"],
                            glyph_files["train_labels"], 10,
                            toydata.GLYPHS_MEAN, toydata.GLYPHS_STD)


@pytest.fixture(scope="session")
def glyph_test(glyph_files):
    return dio.load_dataset("mnist", glyph_files["test_images"],
                            glyph_files["test_labels"], 10,
                            toydata.GLYPHS_MEAN, toydata.GLYPHS_STD)


@pytest.fixture(scope="session")
def glyph_teacher(glyph_train, glyph_test):
    cfg = TeacherConfig(width=8, epochs=8, batch=64, lr=3e-3)
    ckpt = train_teacher(glyph_train, glyph_test, cfg, "mnist", seed=1234,
                         fingerprint="test-teacher")
    assert ckpt.top1 > 0.85, f"fixture teacher too weak: {ckpt.top1}"
    return ckpt
