# file wsl/__init__.py
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

"""Learn a fixed-size latent space of trained neural networks.

This package embeds trained network instances into a fixed-size latent
space with an encoder-decoder over flattened parameter matrices, trained
by knowledge distillation, and explores that space by interpolation and
latent-space optimization to produce ready-to-use networks.
It contains the following modules:

 * :mod:`wsl.codec` -- Convert instance parameters to and from parameter
   matrices
 * :mod:`wsl.storage` -- Binary file format for parameter matrices and
   checkpoints
 * :mod:`wsl.archs` -- Registry of target architectures
 * :mod:`wsl.datasets` -- Image datasets and the download cache
 * :mod:`wsl.zoo` -- Build, persist, split and query populations of
   trained instances
 * :mod:`wsl.models` -- Encoder, decoder and architecture classifier
 * :mod:`wsl.losses` -- Distillation and interpolation objectives
 * :mod:`wsl.train` -- Training loops and fidelity evaluation
 * :mod:`wsl.explore` -- Interpolation sweeps and latent-space optimization
 * :mod:`wsl.sdf` -- Synthetic signed distance shapes and MLP fitting
 * :mod:`wsl.experiment` -- Experiment configuration and the pipeline
 * :mod:`wsl.report` -- Markdown reports and plots of finished runs
 * :mod:`wsl.cli` -- The ``wsl`` command line tool

"""

__version_info__ = (0, 1, 0, None)

# Dot-connect all but the last. Last is dash-connected if not None.
__version__ = '.'.join([str(i) for i in __version_info__[:-1]])
if __version_info__[-1] is not None:
    __version__ += ('-%s' % (__version_info__[-1],))
