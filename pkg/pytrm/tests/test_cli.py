import os

import pytest

from pytrm import settings
from pytrm.cli import main
from pytrm.config import RunConfig
from pytrm.tests import common_data


@pytest.fixture(scope="module")
def config_path(tmp_path_factory):
    """Miniature config file writing under its own output directory."""
    root = tmp_path_factory.mktemp('cli')
    config = RunConfig(common_data.MINI_CONFIG).with_overrides(run={'output_dir': str(root / 'out')})
    path = root / 'lab.ini'
    path.write_text(config.dumps())
    return str(path)


def test_usage_errors(capsys):
    """Test argument errors, help and a missing command."""
    assert main([]) == settings.EXIT_CONFIG
    assert main(['fly']) == settings.EXIT_CONFIG
    assert main(['evaluate']) == settings.EXIT_CONFIG
    assert main(['--help']) == settings.EXIT_OK
    assert 'gen-manifests' in capsys.readouterr().out


def test_oracle_without_diagnostic(tmp_path):
    """Test that oracle costs exit with the configuration code."""
    argv = ['--output-dir', str(tmp_path), 'evaluate', '--cost', 'oracle_euclid', '--manifest', 'hard100',
            '--budget', '50']
    assert main(argv) == settings.EXIT_CONFIG


def test_missing_config(tmp_path):
    """Test that an absent config file is a missing artifact."""
    assert main(['--config', str(tmp_path / 'none.ini'), 'report']) == settings.EXIT_MISSING_ARTIFACT


def test_missing_inputs(tmp_path):
    """Test that a stage without its inputs exits with the missing-artifact code."""
    assert main(['--output-dir', str(tmp_path), 'train-wm']) == settings.EXIT_MISSING_ARTIFACT


def test_report_without_runs(tmp_path, capsys):
    """Test that report writes header-only tables when nothing has run."""
    assert main(['--output-dir', str(tmp_path), 'report']) == settings.EXIT_OK
    printed = capsys.readouterr().out.split()
    assert os.path.join(str(tmp_path), 'tables', 'main_repair.csv') in printed
    with open(os.path.join(str(tmp_path), 'tables', 'main_repair.csv')) as fp:
        assert fp.read() == 'cost_label,manifest,budget,seed,success_pct,same_room_pct,cross_wall_pct,' \
                            'wrong_room_pct,stuck_at_wall_pct,same_room_not_precise_pct,' \
                            'crossed_door_not_precise_pct\n'


def test_pipeline(config_path):
    """Test the stage commands end to end and the stale-artifact exit code."""
    base = ['--config', config_path]
    assert main(base + ['gen-manifests', '--kinds', 'balanced40']) == settings.EXIT_OK
    assert main(base + ['collect']) == settings.EXIT_OK
    assert main(base + ['train-wm']) == settings.EXIT_OK
    assert main(base + ['fit-probe']) == settings.EXIT_OK
    assert main(base + ['train-trm']) == settings.EXIT_OK
    assert main(base + ['evaluate', '--cost', 'trm']) == settings.EXIT_OK
    assert main(base + ['evaluate', '--cost', 'oracle_euclid', '--diagnostic', '--budget', '2']) == settings.EXIT_OK

    out = RunConfig.from_file(config_path).output_dir
    runs = os.listdir(os.path.join(out, 'seed_3', 'runs'))
    assert 'trm.balanced_full_p400__balanced40__b3' in runs
    assert 'oracle_euclid__balanced40__b2' in runs

    with open(os.path.join(out, 'seed_3', 'dataset', 'data.bin'), 'ab') as fp:
        fp.write(b'\x00' * 4)
    assert main(base + ['train-wm']) == settings.EXIT_HASH_MISMATCH
    assert main(base + ['--seed', '4', 'train-wm']) == settings.EXIT_MISSING_ARTIFACT
