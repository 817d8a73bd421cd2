import contextlib
import csv
import hashlib
import json
import logging
import os

import pytrm
from pytrm.exceptions import PyTRMHashMismatchError, PyTRMMissingArtifactError

logger = logging.getLogger(__name__)

RUN_MANIFEST = 'run_manifest.json'
CONFIG_FILE = 'config.ini'
LOG_FILE = 'run.log'
LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'

# Bookkeeping files are not part of an artifact's content hash.
UNHASHED = (RUN_MANIFEST, CONFIG_FILE, LOG_FILE)


class ArtifactHandler(object):
    """Wrap all artifact I/O for one seed's output tree."""

    def __init__(self, output_dir, seed):
        """
        :param string output_dir: Root output directory.
        :param int seed: Global seed; artifacts live under ``seed_<seed>``.
        """
        self.output_dir = output_dir
        self.seed = seed
        self.root = os.path.join(output_dir, 'seed_%s' % seed)
        self.producer = '%s %s' % (pytrm.__name__, pytrm.__version__)

    def path(self, *parts):
        return os.path.join(self.root, *parts)

    def manifest_path(self, kind):
        return self.path('manifests', '%s.json' % kind)

    @property
    def dataset_dir(self):
        return self.path('dataset')

    @property
    def worldmodel_dir(self):
        return self.path('worldmodel')

    def head_prefix(self, label):
        return self.path('heads', label, 'head')

    def run_dir(self, run_id):
        return self.path('runs', run_id)

    def scsa_dir(self, manifest):
        return self.path('scsa', manifest)

    @property
    def tables_dir(self):
        return self.path('tables')

    def exists(self, path):
        return os.path.exists(path) or os.path.exists(path + '.json')

    def require(self, path):
        """Raise a PyTRMMissingArtifactError unless ``path`` (or ``path.json``) exists."""
        if not self.exists(path):
            raise PyTRMMissingArtifactError('Missing artifact: %s' % path, path)
        return path

    def hash_path(self, path):
        """SHA-256 of a file, a ``.json``/``.bin`` checkpoint prefix, or a directory tree.

        :param string path: Artifact path.
        :rtype: ``string``
        """
        digest = hashlib.sha256()
        if os.path.isdir(path):
            files = []
            for base, _, names in os.walk(path):
                for name in names:
                    if name in UNHASHED:
                        continue
                    full = os.path.join(base, name)
                    files.append((os.path.relpath(full, path).replace(os.sep, '/'), full))
            for rel, full in sorted(files):
                digest.update(rel.encode('utf-8'))
                with open(full, 'rb') as fp:
                    digest.update(fp.read())
        elif os.path.isfile(path):
            with open(path, 'rb') as fp:
                digest.update(fp.read())
        elif os.path.isfile(path + '.json') and os.path.isfile(path + '.bin'):
            for suffix in ('.json', '.bin'):
                with open(path + suffix, 'rb') as fp:
                    digest.update(fp.read())
        else:
            raise PyTRMMissingArtifactError('Missing artifact: %s' % path, path)
        return digest.hexdigest()

    def write_json(self, path, data):
        os.makedirs(os.path.dirname(path) or '.', exist_ok=True)
        with open(path, 'w') as fp:
            fp.write(json.dumps(data, indent=2, sort_keys=True) + '\n')
        return path

    def read_json(self, path):
        try:
            with open(path) as fp:
                return json.load(fp)
        except (IOError, OSError):
            raise PyTRMMissingArtifactError('Missing artifact: %s' % path, path)

    def write_csv(self, path, rows, columns):
        os.makedirs(os.path.dirname(path) or '.', exist_ok=True)
        with open(path, 'w', newline='') as fp:
            writer = csv.DictWriter(fp, fieldnames=list(columns), lineterminator='\n', extrasaction='ignore')
            writer.writeheader()
            for row in rows:
                writer.writerow(row)
        return path

    def record(self, directory, stage, inputs, outputs, config):
        """Write ``run_manifest.json`` with input and output hashes.

        :param string directory: Stage directory.
        :param string stage: Stage name.
        :param dict inputs: Name -> artifact path consumed.
        :param dict outputs: Name -> artifact path produced.
        :param dict config: Stage configuration to echo.
        :rtype: ``dict``
        """
        manifest = {
            'stage': stage,
            'producer': self.producer,
            'seed': self.seed,
            'inputs': {name: {'path': os.path.relpath(p, self.root), 'sha256': self.hash_path(p)}
                       for name, p in sorted(inputs.items())},
            'outputs': {name: {'path': os.path.relpath(p, self.root), 'sha256': self.hash_path(p)}
                        for name, p in sorted(outputs.items())},
            'config': config,
        }
        self.write_json(os.path.join(directory, RUN_MANIFEST), manifest)
        logger.info('Stage %s finished: %s', stage,
                    ', '.join('%s=%s' % (n, o['sha256'][:12]) for n, o in sorted(manifest['outputs'].items())))
        return manifest

    def verify(self, directory):
        """Check that a stage's recorded inputs and outputs still hash as recorded.

        Raises a PyTRMHashMismatchError for stale or modified artifacts.

        :param string directory: Stage directory holding ``run_manifest.json``.
        :rtype: ``dict``
        """
        manifest = self.read_json(os.path.join(directory, RUN_MANIFEST))
        for group in ('inputs', 'outputs'):
            for name, entry in sorted(manifest[group].items()):
                path = os.path.join(self.root, entry['path'])
                actual = self.hash_path(path)
                if actual != entry['sha256']:
                    raise PyTRMHashMismatchError(
                        'Stage "%s" %s "%s" changed since it was recorded.' % (manifest['stage'], group[:-1], name),
                        path, entry['sha256'], actual)
        return manifest

    @contextlib.contextmanager
    def stage(self, directory, config_text):
        """Create a stage directory, write its ``config.ini`` and mirror the log into ``run.log``."""
        os.makedirs(directory, exist_ok=True)
        with open(os.path.join(directory, CONFIG_FILE), 'w') as fp:
            fp.write(config_text)
        handler = logging.FileHandler(os.path.join(directory, LOG_FILE), mode='w')
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        root = logging.getLogger()
        root.addHandler(handler)
        try:
            yield directory
        finally:
            root.removeHandler(handler)
            handler.close()
