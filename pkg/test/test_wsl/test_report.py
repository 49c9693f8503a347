# file test_wsl/test_report.py
#
#   Copyright 2026 Emory University Libraries
#
#   Licensed under the Apache License, Version 2.0 (the "License");
#   you may not use this file except in compliance with the License.
#   You may obtain a copy of the License at
#
#       http://www.apache.org/licenses/LICENSE-2.0
#
#   Unless required by applicable law or agreed to in writing, software
#   distributed under the License is distributed on an "AS IS" BASIS,
#   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
#   See the License for the specific language governing permissions and
#   limitations under the License.

import json
import os
import unittest

import pandas

from wsl import explore, report, train
from wsl.exceptions import FormatError
from wsl.explore import SweepResult
from wsl.testutil import TestCase

HASH = '0123456789abcdef0123456789abcdef01234567'


def write_csv(path, rows):
    os.makedirs(os.path.dirname(path), exist_ok=True)
    pandas.DataFrame(rows).to_csv(path, index=False)


class MarkdownTableTest(unittest.TestCase):

    def test_table(self):
        frame = pandas.DataFrame({'name': ['a', 'b'], 'value': [0.5, float('nan')]})
        self.assertEqual('| name | value |\n|---|---|\n| a | 0.5000 |\n| b |  |',
                         report.markdown_table(frame))
        self.assertEqual('| value |\n|---|\n| 0.5000 |\n|  |',
                         report.markdown_table(frame, ['value']))


class HashTest(TestCase):

    def test_single_hash(self):
        out = self.tmpdir()
        write_csv(os.path.join(out, 'fidelity.csv'), [{'id': 'a', 'config_hash': HASH}])
        write_csv(os.path.join(out, 'sweeps', 'latent.csv'), [{'gamma': 0.0, 'config_hash': HASH}])
        with open(os.path.join(out, 'fidelity.json'), 'w') as out_file:
            json.dump({'config_hash': HASH}, out_file)
        self.assertEqual(HASH, report.check_hashes(out))
        self.assertEqual(3, len(report.artifact_hashes(out)[HASH]))

    def test_no_hash(self):
        self.assertIsNone(report.check_hashes(self.tmpdir()))

    def test_mixed_hashes_refused(self):
        out = self.tmpdir()
        write_csv(os.path.join(out, 'fidelity.csv'), [{'id': 'a', 'config_hash': HASH}])
        write_csv(os.path.join(out, 'lso.csv'), [{'arch_name': 'ResNet8', 'config_hash': 'feed'}])
        with self.assertRaises(FormatError) as ctx:
            report.write_report(out)
        self.assertPattern('mixes artifacts of 2 configurations', ctx.exception.message())
        self.assertFalse(os.path.exists(os.path.join(out, report.REPORT_NAME)))

    def test_manifest_ignored(self):
        out = self.tmpdir()
        os.makedirs(os.path.join(out, 'zoo'))
        with open(os.path.join(out, 'zoo', 'manifest.json'), 'w') as out_file:
            json.dump({'config_hash': 'zoo-build'}, out_file)
        self.assertEqual({}, report.artifact_hashes(out))


class WriteReportTest(TestCase):

    def test_empty_directory(self):
        out = self.tmpdir()
        path = report.write_report(out)
        with open(path) as data:
            text = data.read()
        self.assertPattern(r'\*\*Partial report:\*\*', text)
        self.assertPattern('## Fidelity\n\n_not run_', text)
        self.assertPattern('## Latent-space optimization\n\n_not run_', text)
        self.assertPattern('Configuration hash: `unknown`', text)

    def test_complete_classification_run(self):
        out = self.tmpdir()
        with open(os.path.join(out, 'config.json'), 'w') as out_file:
            json.dump({'config': {'kind': 'single-cls'}, 'config_hash': HASH}, out_file)
        write_csv(os.path.join(out, 'train', 'metrics.csv'), [
            {'epoch': 1, 'step': 4, 'loss': 2.0, 'val_loss': 2.1, 'val_fidelity': 0.8,
             'config_hash': HASH},
            {'epoch': 2, 'step': 8, 'loss': 1.0, 'val_loss': 1.2, 'val_fidelity': 0.9,
             'config_hash': HASH},
        ])
        fidelity = train.FidelityReport([
            train.FidelityRow('ResNet8-000', 2, 0.5, 0.45, 2, float('nan')),
            train.FidelityRow('ResNet8-001', 2, 0.7, 0.66, 2, float('nan')),
        ])
        train.write_fidelity_csv(os.path.join(out, 'fidelity.csv'), fidelity, HASH)
        summary = dict(fidelity.summary(), config_hash=HASH)
        with open(os.path.join(out, 'fidelity.json'), 'w') as out_file:
            json.dump(summary, out_file)
        os.makedirs(os.path.join(out, 'sweeps'))
        explore.write_sweep_csv(os.path.join(out, 'sweeps', 'latent.csv'),
                                SweepResult([0.0, 0.5, 1.0], [0.5, 0.4, 0.7]), HASH)
        explore.write_sweep_csv(os.path.join(out, 'sweeps', 'weight-space.csv'),
                                SweepResult([0.0, 0.5, 1.0], [0.5, 0.1, 0.7], None,
                                            'weight-space'), HASH)
        write_csv(os.path.join(out, 'lso.csv'), [
            {'arch_name': 'ResNet8', 'class_id': 2, 'record': 'ResNet8-000', 'initial': 0.45,
             'optimized': 0.52, 'config_hash': HASH}])

        path = report.write_report(out)
        with open(path) as data:
            text = data.read()
        self.assertNotIn('Partial report', text)
        self.assertNotIn('Unseen architectures', text)
        self.assertNotIn('SDF interpolation', text)
        self.assertPattern('Kind: `single-cls`', text)
        self.assertPattern('2 epochs, 8 steps', text)
        self.assertPattern(r'\| initial \| 0.4500 \|', text)
        self.assertPattern(r'\| optimized \| 0.5200 \|', text)
        self.assertPattern(r'\| gamma \| latent \| weight-space \|', text)
        for name in ('training.png', 'sweeps.png'):
            self.assertTrue(os.path.exists(os.path.join(out, 'plots', name)), name)

    def test_class_sweep_plot(self):
        out = self.tmpdir()
        os.makedirs(os.path.join(out, 'sweeps'))
        explore.write_sweep_csv(os.path.join(out, 'sweeps', 'latent.csv'),
                                SweepResult([0.0, 1 / 3.0, 2 / 3.0, 1.0], [0.4, 0.3, 0.5, 0.6],
                                            [0, 1, 2, 3]))
        with open(os.path.join(out, 'sweeps', 'anchors.json'), 'w') as out_file:
            json.dump({'anchor_a': 'LeNetLike-003', 'anchor_b': 'ResNet32-001',
                       'gamma_set': [1 / 3.0, 2 / 3.0]}, out_file)
        with open(report.write_report(out)) as data:
            text = data.read()
        self.assertPattern('Anchors: LeNetLike-003 and ResNet32-001', text)
        self.assertPattern(r'plots/sweep_classes.png', text)
        self.assertTrue(os.path.exists(os.path.join(out, 'plots', 'sweep_classes.png')))


if __name__ == '__main__':
    unittest.main()
