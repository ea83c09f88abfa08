# SPDX-License-Identifier: Apache-2.0

"""Tests for the .dbr results archive."""

import numpy as np
import pytest

from databuy.errors import ArchiveError
from databuy.loader import ARCHIVE_VERSION, ResultsReader, ResultsWriter


@pytest.fixture
def archive(tmp_path):
    path = tmp_path / 'runs.dbr'
    with ResultsWriter(path) as writer:
        writer.append_run('steady', {'t': np.arange(1, 4), 'v_post': np.array([0.5, 0.4, 0.45])},
                          {'summary': {'value': np.float64(0.25)}, 'samples': (0.0, 2.0)})
        writer.append_run('binary', {'correct': np.array([True, False, True]),
                                     'label': np.array(['a', 'b', 'c'])})
    return path


class TestArchive:

    def test_read_back(self, archive):
        with ResultsReader(archive) as reader:
            assert reader.run_ids == ['steady', 'binary']
            run = reader['steady']
            np.testing.assert_allclose(run['tensors']['v_post'], [0.5, 0.4, 0.45])
            np.testing.assert_array_equal(run['tensors']['t'], [1, 2, 3])
            assert run['meta']['summary'] == {'value': 0.25}
            assert run['meta']['samples'] == [0.0, 2.0]
            assert run['meta']['_id'] == 'steady'
            assert run['meta']['_archive_version'] == ARCHIVE_VERSION

    def test_bool_stored_as_int8_and_strings_skipped(self, archive):
        with ResultsReader(archive) as reader:
            tensors = reader[1]['tensors']
        assert tensors['correct'].dtype == np.int8
        np.testing.assert_array_equal(tensors['correct'], [1, 0, 1])
        assert 'label' not in tensors

    def test_iteration_and_length(self, archive):
        with ResultsReader(archive) as reader:
            assert len(reader) == 2
            assert [run['meta']['_id'] for run in reader] == ['steady', 'binary']
            with pytest.raises(IndexError):
                reader[2]
            with pytest.raises(KeyError):
                reader['missing']

    def test_duplicate_run_id(self, tmp_path):
        with ResultsWriter(tmp_path / 'dup.dbr') as writer:
            writer.append_run('a', {'x': np.zeros(2)})
            with pytest.raises(ArchiveError, match="Duplicate"):
                writer.append_run('a', {'x': np.zeros(2)})

    def test_write_after_close(self, tmp_path):
        writer = ResultsWriter(tmp_path / 'closed.dbr')
        writer.close()
        with pytest.raises(ArchiveError):
            writer.append_run('a', {'x': np.zeros(1)})

    def test_bad_magic(self, tmp_path):
        path = tmp_path / 'junk.dbr'
        path.write_bytes(b'x' * 32)
        with pytest.raises(ArchiveError, match="magic"):
            ResultsReader(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            ResultsReader(tmp_path / 'nope.dbr')
