# file wsl/datasets.py
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

"""Image datasets used to train zoo instances and to distill predicted
instances.

Three datasets are known:

 * ``cifar10`` -- downloaded once into the :attr:`WSL_CACHE` directory
 * ``tinyimagenet`` -- must already be prepared in the cache as
   ``tiny-imagenet-200/{train,val}/<class>/*.JPEG``
 * ``fake`` -- deterministic random images; used by tests and smoke runs

Example::

    cfg = DatasetConfig(name='cifar10', subset=10000)
    train_loader, test_loader = get_loaders(cfg, seed=0)
"""

import dataclasses
from functools import wraps
import logging
import os
import socket
import tarfile
from typing import Optional

import requests
import torch
from torch.utils.data import DataLoader, Subset, random_split
from torchvision import datasets, transforms
from torchvision.datasets.utils import check_integrity
from tqdm import tqdm

from wsl.conf import settings
from wsl.exceptions import ConfigError, DatasetUnavailable, DownloadTimeout
from wsl.storage import atomic_write

__all__ = ['DatasetConfig', 'DATASETS', 'dataset_info', 'download_cifar10',
           'load_dataset', 'make_loader', 'get_loaders', 'cycle']

logger = logging.getLogger(__name__)

CIFAR10_URL = 'https://www.cs.toronto.edu/~kriz/cifar-10-python.tar.gz'
CIFAR10_MD5 = 'c58f30108f718f92721af3b95e74349a'
CIFAR10_DIR = 'cifar-10-batches-py'
TINYIMAGENET_DIR = 'tiny-imagenet-200'

# name: (num_classes, image_size, mean, std)
DATASETS = {
    'cifar10': (10, 32, (0.4914, 0.4822, 0.4465), (0.2470, 0.2435, 0.2616)),
    'tinyimagenet': (200, 64, (0.4802, 0.4481, 0.3975), (0.2770, 0.2691, 0.2821)),
    'fake': (10, 32, (0.5, 0.5, 0.5), (0.25, 0.25, 0.25)),
}

# chunk size for streamed downloads
_CHUNK = 1 << 20


@dataclasses.dataclass
class DatasetConfig:
    """Which images to use and how to batch them.

    :param name: ``cifar10``, ``tinyimagenet`` or ``fake``
    :param subset: number of training images to keep (seeded), or all
    :param test_subset: number of test images to keep, or all
    :param batch_size: training batch size
    :param eval_batch_size: evaluation batch size
    :param augment: random crop and horizontal flip on training images
    :param num_workers: loader processes; defaults to :attr:`WSL_NUM_WORKERS`
    :param fake_size: number of images per split for ``fake``
    """
    name: str = 'cifar10'
    subset: Optional[int] = None
    test_subset: Optional[int] = None
    batch_size: int = 128
    eval_batch_size: int = 256
    augment: bool = True
    num_workers: Optional[int] = None
    fake_size: int = 512

    def __post_init__(self):
        if self.name not in DATASETS:
            raise ValueError('unknown dataset %s (choose from %s)' % (
                self.name, ', '.join(sorted(DATASETS))))
        for field in ('subset', 'test_subset'):
            value = getattr(self, field)
            if value is not None and value < 1:
                raise ValueError('%s must be positive' % field)
        if self.batch_size < 1 or self.eval_batch_size < 1:
            raise ValueError('batch sizes must be positive')


def dataset_info(name):
    "``(num_classes, image_size)`` of a named dataset."
    try:
        num_classes, image_size = DATASETS[name][:2]
    except KeyError:
        raise ConfigError('unknown dataset %s' % name)
    return num_classes, image_size


def _wrap_download_fault(f):
    @wraps(f)
    def wrapper(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except (socket.timeout, requests.exceptions.Timeout) as err:
            raise DownloadTimeout(err)
        except (requests.exceptions.RequestException, tarfile.TarError, OSError) as err:
            raise DatasetUnavailable(err)
    return wrapper


@_wrap_download_fault
def download_cifar10(root=None, session=None, timeout=None):
    """Make sure CIFAR-10 is extracted under ``root``.

    :param root: cache directory; defaults to :attr:`WSL_CACHE`
    :param session: optional :class:`requests.Session`
    :param timeout: seconds; defaults to :attr:`WSL_DOWNLOAD_TIMEOUT`
    :rtype: the cache directory
    :raises DownloadTimeout: if the server does not answer in time
    :raises DatasetUnavailable: on any other transport or archive problem
    """
    root = root or settings.cache_dir
    if os.path.isdir(os.path.join(root, CIFAR10_DIR)):
        return root
    if timeout is None:
        timeout = settings.WSL_DOWNLOAD_TIMEOUT
    archive = os.path.join(root, os.path.basename(CIFAR10_URL))
    if not check_integrity(archive, CIFAR10_MD5):
        session = session or requests.Session()
        logger.info('downloading %s to %s', CIFAR10_URL, archive)
        response = session.get(CIFAR10_URL, stream=True, timeout=timeout)
        response.raise_for_status()
        total = int(response.headers.get('content-length', 0)) or None
        with atomic_write(archive) as out:
            with tqdm(total=total, unit='B', unit_scale=True, desc='cifar10',
                      disable=None) as progress:
                for chunk in response.iter_content(chunk_size=_CHUNK):
                    out.write(chunk)
                    progress.update(len(chunk))
        if not check_integrity(archive, CIFAR10_MD5):
            os.remove(archive)
            raise DatasetUnavailable('checksum mismatch for %s' % CIFAR10_URL)
    logger.debug('extracting %s', archive)
    with tarfile.open(archive, 'r:gz') as tar:
        tar.extractall(root)
    return root


def _transform(name, train, augment):
    num_classes, image_size, mean, std = DATASETS[name]
    steps = []
    if train and augment:
        steps.extend([
            transforms.RandomCrop(image_size, padding=image_size // 8),
            transforms.RandomHorizontalFlip(),
        ])
    steps.extend([transforms.ToTensor(), transforms.Normalize(mean, std)])
    return transforms.Compose(steps)


def _seeded_subset(dataset, size, seed):
    if size is None or size >= len(dataset):
        return dataset
    generator = torch.Generator().manual_seed(seed)
    indices = torch.randperm(len(dataset), generator=generator)[:size].tolist()
    return Subset(dataset, sorted(indices))


def load_dataset(cfg, train=True, seed=0, root=None):
    """Load one split of a dataset.

    :param cfg: :class:`DatasetConfig`
    :param train: training split when True, test split otherwise
    :param seed: seed for subset selection
    :rtype: :class:`torch.utils.data.Dataset`
    """
    root = root or settings.cache_dir
    transform = _transform(cfg.name, train, cfg.augment)
    num_classes, image_size = dataset_info(cfg.name)
    if cfg.name == 'cifar10':
        download_cifar10(root)
        dataset = datasets.CIFAR10(root, train=train, transform=transform, download=False)
    elif cfg.name == 'tinyimagenet':
        folder = os.path.join(root, TINYIMAGENET_DIR, 'train' if train else 'val')
        if not os.path.isdir(folder):
            raise DatasetUnavailable('Tiny-ImageNet is not prepared in %s' % folder)
        dataset = datasets.ImageFolder(folder, transform=transform)
    else:
        # distinct offsets keep the two fake splits apart
        dataset = datasets.FakeData(size=cfg.fake_size, image_size=(3, image_size, image_size),
                                    num_classes=num_classes, transform=transform,
                                    random_offset=0 if train else cfg.fake_size)
    size = cfg.subset if train else cfg.test_subset
    dataset = _seeded_subset(dataset, size, seed)
    logger.debug('load_dataset %s %s: %d images', cfg.name, 'train' if train else 'test',
                 len(dataset))
    return dataset


def make_loader(dataset, batch_size, shuffle=False, seed=0, num_workers=None):
    "A :class:`~torch.utils.data.DataLoader` whose shuffling is seeded."
    if num_workers is None:
        num_workers = settings.WSL_NUM_WORKERS
    generator = torch.Generator().manual_seed(seed)
    return DataLoader(dataset, batch_size=batch_size, shuffle=shuffle, generator=generator,
                      num_workers=num_workers, drop_last=False)


def get_loaders(cfg, seed=0, root=None):
    """Training and test loaders for a dataset config.

    :rtype: tuple of (train loader, test loader)
    """
    train_set = load_dataset(cfg, train=True, seed=seed, root=root)
    test_set = load_dataset(cfg, train=False, seed=seed, root=root)
    return (make_loader(train_set, cfg.batch_size, shuffle=True, seed=seed,
                        num_workers=cfg.num_workers),
            make_loader(test_set, cfg.eval_batch_size, shuffle=False, seed=seed,
                        num_workers=cfg.num_workers))


def holdout_split(dataset, size, seed=0):
    """Split ``size`` seeded images off ``dataset``.

    At most half of the images are held out and at least one remains
    on either side when the dataset allows it.

    :rtype: tuple of (remaining, held-out) datasets
    """
    size = max(1, min(size, len(dataset) // 2))
    generator = torch.Generator().manual_seed(seed)
    remaining, held = random_split(dataset, [len(dataset) - size, size], generator=generator)
    logger.debug('holdout_split: %d kept, %d held out', len(remaining), len(held))
    return remaining, held


def cycle(loader):
    "Endless stream of batches; reshuffles at every pass."
    while True:
        for batch in loader:
            yield batch
