# file wsl/sdf.py
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

"""Signed distance shapes, MLP fitting and mesh export.

Shapes are closed-form signed distance functions (negative inside) in
the ``[-1, 1]^3`` cube: :class:`Sphere`, :class:`Box`, :class:`Torus`,
:class:`Capsule` and :class:`Union` of any of them.
:func:`synthetic_chair` composes a seat, a back and four legs at random.

A SirenMLP instance is overfit to one shape with :func:`fit_siren`;
:func:`sdf_metrics` compares any field with a shape on a regular grid
and :func:`extract_mesh` triangulates its zero level set with marching
cubes.
"""

from collections import namedtuple
import dataclasses
import json
import logging
from typing import Tuple

import mcubes
import numpy
import torch
from tqdm import tqdm

from wsl import archs
from wsl.storage import atomic_write

__all__ = ['Sphere', 'Box', 'Torus', 'Capsule', 'Union', 'shape_from_dict',
           'synthetic_chair', 'save_shape_catalog', 'load_shape_catalog',
           'SDFSampleSet', 'FitConfig', 'FitResult', 'SDFMetrics', 'Mesh',
           'analytic_sdf', 'sample_sdf', 'grid_points', 'field_values', 'fit_siren',
           'sign_iou', 'sdf_metrics', 'extract_mesh']

logger = logging.getLogger(__name__)


def _vec(values, points):
    return torch.as_tensor(values, dtype=points.dtype, device=points.device)


@dataclasses.dataclass(frozen=True)
class Sphere:
    center: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    radius: float = 0.5
    kind = 'sphere'

    def distance(self, points):
        return torch.linalg.norm(points - _vec(self.center, points), dim=-1) - self.radius


@dataclasses.dataclass(frozen=True)
class Box:
    center: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    half_extents: Tuple[float, float, float] = (0.5, 0.5, 0.5)
    kind = 'box'

    def distance(self, points):
        q = (points - _vec(self.center, points)).abs() - _vec(self.half_extents, points)
        outside = torch.linalg.norm(q.clamp(min=0.0), dim=-1)
        inside = q.max(dim=-1).values.clamp(max=0.0)
        return outside + inside


@dataclasses.dataclass(frozen=True)
class Torus:
    "Torus around the z axis."
    center: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    major_radius: float = 0.5
    minor_radius: float = 0.15
    kind = 'torus'

    def distance(self, points):
        p = points - _vec(self.center, points)
        ring = torch.linalg.norm(p[..., :2], dim=-1) - self.major_radius
        return torch.sqrt(ring ** 2 + p[..., 2] ** 2) - self.minor_radius


@dataclasses.dataclass(frozen=True)
class Capsule:
    "Segment from ``start`` to ``end`` thickened by ``radius``."
    start: Tuple[float, float, float] = (0.0, -0.5, 0.0)
    end: Tuple[float, float, float] = (0.0, 0.5, 0.0)
    radius: float = 0.1
    kind = 'capsule'

    def distance(self, points):
        a = _vec(self.start, points)
        ba = _vec(self.end, points) - a
        pa = points - a
        # a zero-length segment leaves h at 0, which is the sphere distance
        h = ((pa * ba).sum(dim=-1) / (ba * ba).sum().clamp(min=1e-12)).clamp(0.0, 1.0)
        return torch.linalg.norm(pa - h[..., None] * ba, dim=-1) - self.radius


@dataclasses.dataclass(frozen=True)
class Union:
    "Pointwise minimum of the parts' distances."
    parts: Tuple = ()
    kind = 'union'

    def distance(self, points):
        return torch.stack([part.distance(points) for part in self.parts]).min(dim=0).values


_KINDS = dict((cls.kind, cls) for cls in (Sphere, Box, Torus, Capsule, Union))


def shape_to_dict(shape):
    if isinstance(shape, Union):
        return {'kind': 'union', 'parts': [shape_to_dict(p) for p in shape.parts]}
    desc = {'kind': shape.kind}
    for field in dataclasses.fields(shape):
        value = getattr(shape, field.name)
        desc[field.name] = list(value) if isinstance(value, tuple) else value
    return desc


def shape_from_dict(desc):
    "Rebuild a shape from :func:`shape_to_dict` output."
    desc = dict(desc)
    cls = _KINDS[desc.pop('kind')]
    if cls is Union:
        return Union(tuple(shape_from_dict(p) for p in desc['parts']))
    return cls(**dict((k, tuple(v) if isinstance(v, list) else v) for k, v in desc.items()))


def synthetic_chair(rng):
    """A chair-like union of boxes and capsules inside the unit cube.

    :param rng: :class:`numpy.random.Generator`
    """
    width = rng.uniform(0.3, 0.5)
    depth = rng.uniform(0.3, 0.5)
    thick = rng.uniform(0.04, 0.08)
    seat_y = rng.uniform(-0.15, 0.1)
    seat = Box((0.0, seat_y, 0.0), (width, thick, depth))
    back_height = rng.uniform(0.25, 0.5)
    back_thick = rng.uniform(0.04, 0.07)
    back = Box((0.0, seat_y + thick + back_height, -depth + back_thick),
               (width, back_height, back_thick))
    leg_radius = rng.uniform(0.03, 0.06)
    floor = rng.uniform(-0.85, -0.65)
    inset = leg_radius + 0.02
    legs = []
    for sx in (-1.0, 1.0):
        for sz in (-1.0, 1.0):
            x, z = sx * (width - inset), sz * (depth - inset)
            legs.append(Capsule((x, floor, z), (x, seat_y, z), leg_radius))
    return Union(tuple([seat, back] + legs))


def save_shape_catalog(path, shapes):
    "Write shapes to a JSON catalog."
    with atomic_write(path, 'w') as out:
        json.dump({'shapes': [shape_to_dict(s) for s in shapes]}, out, indent=2)


def load_shape_catalog(path):
    with open(path) as data:
        return [shape_from_dict(s) for s in json.load(data)['shapes']]


def analytic_sdf(shape, points):
    "Exact signed distances of ``points`` (``N x 3``) to ``shape``."
    return shape.distance(points)


SDFSampleSet = namedtuple('SDFSampleSet', ['points', 'distances'])


def _inside_cube(points):
    return (points.abs() <= 1.0).all(dim=-1)


def _project_to_surface(shape, points, iterations=4):
    # Newton steps along the distance gradient
    for _ in range(iterations):
        p = points.detach().requires_grad_(True)
        dist = shape.distance(p)
        grad, = torch.autograd.grad(dist.sum(), p)
        points = (p - dist[:, None] * grad).detach()
    return points


def sample_sdf(shape, n, surface_fraction=0.5, seed=0, scale=0.05, max_rounds=20):
    """Sample query points and their exact distances.

    Near-surface points are surface points moved by a random offset of
    length at most ``scale``; the rest are uniform in the cube.  Shapes
    without a surface inside the cube get uniform points only.

    :rtype: :class:`SDFSampleSet`
    """
    if n < 1:
        raise ValueError('n must be positive')
    if not 0.0 <= surface_fraction <= 1.0:
        raise ValueError('surface_fraction must be in [0, 1]')
    generator = torch.Generator().manual_seed(seed)
    n_surface = int(round(n * surface_fraction))
    near = torch.empty(0, 3)
    rounds = 0
    while len(near) < n_surface and rounds < max_rounds:
        rounds += 1
        candidates = torch.rand(2 * n_surface, 3, generator=generator) * 2.0 - 1.0
        surface = _project_to_surface(shape, candidates)
        with torch.no_grad():
            on_surface = (shape.distance(surface).abs() < 1e-4) & _inside_cube(surface)
        surface = surface[on_surface]
        direction = torch.randn(len(surface), 3, generator=generator)
        direction = direction / torch.linalg.norm(direction, dim=-1, keepdim=True).clamp(min=1e-12)
        length = torch.rand(len(surface), 1, generator=generator) * scale
        moved = surface + direction * length
        near = torch.cat([near, moved[_inside_cube(moved)]])
    if len(near) < n_surface:
        logger.warning('sample_sdf: found %d of %d near-surface points; filling with uniform '
                       'points', len(near), n_surface)
    near = near[:n_surface]
    uniform = torch.rand(n - len(near), 3, generator=generator) * 2.0 - 1.0
    points = torch.cat([near, uniform])
    with torch.no_grad():
        distances = shape.distance(points)
    return SDFSampleSet(points, distances)


def grid_points(grid_res, bound=1.0):
    "Regular ``grid_res^3`` lattice over ``[-bound, bound]^3`` (x slowest)."
    axis = torch.linspace(-bound, bound, grid_res)
    xs, ys, zs = torch.meshgrid(axis, axis, axis, indexing='ij')
    return torch.stack([xs, ys, zs], dim=-1).reshape(-1, 3)


def field_values(source, points, chunk=65536):
    """Evaluate a shape or a SirenMLP instance at points.

    :param source: shape or :class:`~wsl.archs.NetworkInstance`
    :rtype: 1-D tensor of distances
    """
    if not isinstance(source, archs.NetworkInstance):
        with torch.no_grad():
            return analytic_sdf(source, points)
    device = source.device
    out = []
    with torch.no_grad():
        for start in range(0, len(points), chunk):
            out.append(archs.forward_logits(source, points[start:start + chunk].to(device))[:, 0]
                       .cpu())
    return torch.cat(out)


@dataclasses.dataclass
class FitConfig:
    """SirenMLP overfitting recipe.

    :param steps: optimizer steps
    :param samples: sampled points per shape
    :param surface_fraction: share of near-surface points
    :param perturbation: maximum offset of near-surface points
    :param batch_size: points per step
    :param lr: Adam learning rate
    :param error_ceiling: fits with a larger sample MSE are flagged
    :param grid_res: grid used for evaluation
    """
    steps: int = 5000
    samples: int = 20000
    surface_fraction: float = 0.5
    perturbation: float = 0.05
    batch_size: int = 5000
    lr: float = 1e-4
    error_ceiling: float = 1e-3
    grid_res: int = 32

    def __post_init__(self):
        if self.steps < 0 or self.samples < 1 or self.batch_size < 1:
            raise ValueError('steps, samples and batch_size must be positive')
        if not 0.0 <= self.surface_fraction <= 1.0:
            raise ValueError('surface_fraction must be in [0, 1]')


FitResult = namedtuple('FitResult', ['instance', 'fit_error', 'flagged', 'reason'])


def fit_siren(samples, cfg=None, seed=0, device='cpu', spec=None):
    """Overfit a freshly initialized SirenMLP to a sample set.

    :param samples: :class:`SDFSampleSet`
    :param cfg: :class:`FitConfig`
    :param seed: initialization and batching seed
    :rtype: :class:`FitResult`; ``flagged`` is set with a ``reason``
        when the samples have no zero crossing or the fit error is above
        the ceiling or not finite
    """
    cfg = cfg or FitConfig()
    spec = spec or archs.SDF.get('SirenMLP')
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        module = spec.build().to(device)
    generator = torch.Generator().manual_seed(seed)
    points, distances = samples.points.to(device), samples.distances.to(device)
    optimizer = torch.optim.Adam(module.parameters(), lr=cfg.lr)
    module.train()
    for _ in tqdm(range(cfg.steps), desc='fit_siren', leave=False, disable=None):
        index = torch.randint(len(points), (min(cfg.batch_size, len(points)),),
                              generator=generator).to(device)
        loss = torch.nn.functional.mse_loss(module(points[index])[:, 0], distances[index])
        if not torch.isfinite(loss):
            break
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
    instance = archs.NetworkInstance(spec, archs.extract_params(module, spec.layout())).to(device)
    predicted = field_values(instance, points.cpu())
    fit_error = float(torch.mean((predicted - samples.distances) ** 2))

    reason = None
    if not (samples.distances < 0).any() or not (samples.distances > 0).any():
        reason = 'no zero crossing in samples'
    elif not numpy.isfinite(fit_error):
        reason = 'non-finite fit error'
    elif fit_error > cfg.error_ceiling:
        reason = 'fit error %.3g above ceiling %.3g' % (fit_error, cfg.error_ceiling)
    if reason:
        logger.warning('fit_siren seed %d flagged: %s', seed, reason)
    logger.debug('fit_siren seed %d: mse %.3g', seed, fit_error)
    return FitResult(instance, fit_error, reason is not None, reason)


def sign_iou(field_a, field_b):
    """Intersection over union of the negative cells of two fields.

    Two fields with no negative cell agree completely (1.0).
    """
    inside_a, inside_b = field_a < 0, field_b < 0
    union = (inside_a | inside_b).sum().item()
    if union == 0:
        return 1.0
    return (inside_a & inside_b).sum().item() / float(union)


SDFMetrics = namedtuple('SDFMetrics', ['mse', 'sign_iou'])


def sdf_metrics(source, shape, grid_res=32, bound=1.0):
    """Grid MSE and sign IoU of a field against a reference shape.

    :param source: SirenMLP :class:`~wsl.archs.NetworkInstance` or shape
    :param shape: reference shape, or another instance
    :rtype: :class:`SDFMetrics`
    """
    if grid_res < 8:
        raise ValueError('grid_res must be at least 8')
    points = grid_points(grid_res, bound)
    predicted = field_values(source, points)
    reference = field_values(shape, points)
    return SDFMetrics(float(torch.mean((predicted - reference) ** 2)),
                      sign_iou(predicted, reference))


Mesh = namedtuple('Mesh', ['vertices', 'faces'])


def extract_mesh(source, grid_res=64, iso=0.0, bound=1.0, path=None):
    """Triangulate the ``iso`` level set of a field with marching cubes.

    :param source: shape or SirenMLP instance
    :param path: optional OBJ file to write
    :rtype: :class:`Mesh` with vertices in cube coordinates
    """
    if grid_res < 16:
        raise ValueError('grid_res must be at least 16')
    values = field_values(source, grid_points(grid_res, bound)).reshape(grid_res, grid_res, grid_res)
    volume = values.double().numpy()
    if volume.min() > iso or volume.max() < iso:
        logger.warning('extract_mesh: field does not cross %s; empty mesh', iso)
        mesh = Mesh(numpy.zeros((0, 3)), numpy.zeros((0, 3), dtype=numpy.int64))
    else:
        vertices, faces = mcubes.marching_cubes(volume, iso)
        vertices = vertices * (2.0 * bound / (grid_res - 1)) - bound
        mesh = Mesh(vertices, faces.astype(numpy.int64))
    if path is not None:
        if len(mesh.faces):
            mcubes.export_obj(mesh.vertices, mesh.faces, path)
        else:
            with atomic_write(path, 'w') as out:
                out.write('# empty mesh\n')
        logger.debug('extract_mesh %s: %d vertices, %d faces', path, len(mesh.vertices),
                     len(mesh.faces))
    return mesh
