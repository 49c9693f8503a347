# file wsl/cli.py
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

"""The ``wsl`` command.

Available subcommands::

  run CONFIG            - whole experiment: zoo, training, evaluation, studies, report
  zoo build|verify|stats - build, check or summarize the experiment's zoo
  train                 - train the weight-space model
  eval                  - fidelity of predicted instances on the test split
  sweep                 - latent and weight-space interpolation sweeps
  lso                   - latent-space optimization
  sdf fit|mesh          - fit SirenMLPs to synthetic shapes; mesh a stored SirenMLP
  report DIR            - write report.md for an artifact directory

Exit status is 0 on success, 2 for configuration errors and 1 for any
other failure.
"""

import argparse
import json
import logging
import os
import sys

import numpy

from wsl import __version__, archs, codec, sdf, storage, zoo
from wsl.conf import settings
from wsl.exceptions import ConfigError, WSLException
from wsl.experiment import Experiment, load_config
from wsl.report import write_report

__all__ = ['CommandError', 'build_parser', 'main']

logger = logging.getLogger(__name__)


class CommandError(Exception):
    """A command failed.

    :param msg: message shown to the user
    :param status: process exit status
    """

    def __init__(self, msg, status=1):
        super(CommandError, self).__init__(msg)
        self.status = status


def _experiment(options):
    config = options.config_file or options.config
    if not config:
        raise CommandError('a configuration file is required (--config)', 2)
    cfg = load_config(config, seed=options.seed, out=options.out, device=options.device)
    return Experiment(cfg, resume=options.resume)


def cmd_run(options):
    out = _experiment(options).run()
    print('artifacts in %s' % out)


def cmd_zoo(options):
    experiment = _experiment(options)
    if options.action == 'build':
        experiment.write_config()
        manifest = experiment.build_zoo()
        print('%s' % manifest)
    elif options.action == 'verify':
        loader = experiment.test_loader if experiment.cfg.classification else None
        problems = zoo.verify_manifest(experiment.manifest, experiment.registry,
                                       options.recompute, loader, experiment.device,
                                       experiment.cfg.eval_batches, experiment.cfg.sdf)
        for record_id, problem in problems:
            print('%s: %s' % (record_id, problem))
        if problems:
            raise CommandError('%d problems found' % len(problems))
        print('%d records verified' % experiment.manifest.count())
    else:
        print(json.dumps(zoo.manifest_stats(experiment.manifest), indent=2, sort_keys=True))


def cmd_train(options):
    experiment = _experiment(options)
    experiment.write_config()
    print('checkpoint %s' % experiment.run_training())


def cmd_eval(options):
    fidelity = _experiment(options).evaluate()
    print(json.dumps(fidelity.summary(), indent=2, sort_keys=True))


def cmd_sweep(options):
    experiment = _experiment(options)
    for mode, result in experiment.sweeps().items():
        print('%s: %s' % (mode, ' '.join('%.3f' % m for m in result.metrics)))
    if experiment.cfg.kind == 'multi-unseen':
        for row in experiment.unseen():
            print('unseen %(arch_name)s at gamma %(gamma).3f: %(accuracy).4f' % row)


def cmd_lso(options):
    experiment = _experiment(options)
    if not experiment.cfg.classification:
        raise CommandError('latent-space optimization needs a classification experiment', 2)
    for row in experiment.run_lso():
        print('%(arch_name)s (%(record)s): %(initial).4f -> %(optimized).4f' % row)


def cmd_sdf(options):
    if options.action == 'fit':
        if options.config_file or options.config:
            fit_cfg = load_config(options.config_file or options.config).sdf
        else:
            fit_cfg = sdf.FitConfig()
        rng = numpy.random.default_rng(options.seed or 0)
        shapes = [sdf.synthetic_chair(rng) for _ in range(options.shapes)]
        out = options.out or 'sdf_zoo'
        os.makedirs(out, exist_ok=True)
        sdf.save_shape_catalog(os.path.join(out, 'shapes.json'), shapes)
        manifest = zoo.build_sdf_zoo(shapes, fit_cfg, out, options.seed or 0,
                                     device=options.device or settings.WSL_DEVICE)
        for record in manifest.records:
            print('%s: fit error %.4g%s' % (record.id, record.metric,
                                            ' (flagged: %s)' % record.flag_reason
                                            if record.flagged else ''))
    else:
        if not options.path:
            raise CommandError('sdf mesh needs a SirenMLP .prep file', 2)
        values, header = storage.read_prep(options.path)
        spec = archs.SDF.get(header['arch_name'])
        instance = archs.instantiate(spec, codec.load(values, spec.layout()))
        target = options.out or os.path.splitext(options.path)[0] + '.obj'
        mesh = sdf.extract_mesh(instance, grid_res=options.grid_res, path=target)
        print('%s: %d vertices, %d faces' % (target, len(mesh.vertices), len(mesh.faces)))


def cmd_report(options):
    print(write_report(options.path))


def _common(parser, config=True):
    if config:
        parser.add_argument('config_file', nargs='?', metavar='CONFIG',
                            help='experiment TOML file (same as --config)')
        parser.add_argument('--config', help='experiment TOML file')
    parser.add_argument('--seed', type=int, help='override the global seed')
    parser.add_argument('--out', help='override the artifact directory')
    parser.add_argument('--device', help='torch device, e.g. cpu or cuda')
    parser.add_argument('--resume', action='store_true', help='continue an interrupted run')
    parser.add_argument('-v', '--verbose', action='store_true', help='debug logging')


def build_parser():
    parser = argparse.ArgumentParser(prog='wsl', description='Weight-space learning experiments')
    parser.add_argument('--version', action='version', version='%(prog)s ' + __version__)
    sub = parser.add_subparsers(dest='command', required=True)

    s = sub.add_parser('run', help='run a whole experiment')
    _common(s)
    s.set_defaults(func=cmd_run)

    s = sub.add_parser('zoo', help='build, verify or summarize a zoo')
    s.add_argument('action', choices=['build', 'verify', 'stats'])
    _common(s)
    s.add_argument('--recompute', action='store_true', help='measure stored metrics again')
    s.set_defaults(func=cmd_zoo)

    for name, func, text in (('train', cmd_train, 'train the weight-space model'),
                             ('eval', cmd_eval, 'evaluate fidelity on the test split'),
                             ('sweep', cmd_sweep, 'interpolation sweeps'),
                             ('lso', cmd_lso, 'latent-space optimization')):
        s = sub.add_parser(name, help=text)
        _common(s)
        s.set_defaults(func=func)

    s = sub.add_parser('sdf', help='fit SirenMLPs or mesh one')
    s.add_argument('action', choices=['fit', 'mesh'])
    s.add_argument('path', nargs='?', help='SirenMLP .prep file (mesh)')
    _common(s, config=False)
    s.add_argument('--config', dest='config', help='experiment TOML file for [sdf] settings')
    s.add_argument('--shapes', type=int, default=4, help='number of synthetic chairs (fit)')
    s.add_argument('--grid-res', type=int, default=64, help='marching cubes resolution (mesh)')
    s.set_defaults(func=cmd_sdf, config_file=None)

    s = sub.add_parser('report', help='write report.md for an artifact directory')
    s.add_argument('path', help='artifact directory')
    s.add_argument('-v', '--verbose', action='store_true', help='debug logging')
    s.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    "Entry point of the ``wsl`` command; returns the exit status."
    options = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if options.verbose else logging.INFO,
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    try:
        options.func(options)
    except CommandError as err:
        sys.stderr.write('Error: %s\n' % err)
        return err.status
    except ConfigError as err:
        sys.stderr.write('Error: %s\n' % err.message())
        return 2
    except WSLException as err:
        sys.stderr.write('Error: %s\n' % err.message())
        return 1
    return 0


if __name__ == '__main__':
    sys.exit(main())
