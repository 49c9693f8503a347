# file test_wsl/test_sdf.py
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

import os
import unittest

import numpy
import torch

from wsl import archs, sdf
from wsl.sdf import Box, Capsule, FitConfig, Sphere, Torus, Union
from wsl.testutil import TestCase, tiny_sdf_registry


class ShapeTest(TestCase):

    def test_distances(self):
        points = torch.tensor([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        self.assertTensorClose(torch.tensor([-0.5, 0.5]), Sphere().distance(points))
        self.assertTensorClose(torch.tensor([-0.5, 0.5]), Box().distance(points))
        self.assertTensorClose(torch.tensor([-0.1, 0.9]), Capsule().distance(points))
        ring = torch.tensor([[0.5, 0.0, 0.0], [0.0, 0.0, 0.0]])
        self.assertTensorClose(torch.tensor([-0.15, 0.35]), Torus().distance(ring))
        union = Union((Sphere((0.5, 0.0, 0.0), 0.2), Sphere((-0.5, 0.0, 0.0), 0.2)))
        self.assertTensorClose(torch.tensor([0.3, 0.3]),
                               union.distance(torch.tensor([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]])))
        self.assertTensorClose(torch.tensor([-0.2]),
                               union.distance(torch.tensor([[-0.5, 0.0, 0.0]])))

    def test_point_capsule_is_sphere(self):
        center = (0.1, 0.2, -0.3)
        capsule = Capsule(start=center, end=center, radius=0.25)
        points = torch.tensor([[0.1, 0.2, -0.3], [1.0, 0.0, 0.0], [-0.4, 0.6, 0.2]])
        distances = capsule.distance(points)
        self.assertFalse(torch.isnan(distances).any())
        self.assertTensorClose(Sphere(center, 0.25).distance(points), distances)

    def test_chair(self):
        rng = numpy.random.default_rng(0)
        chair = sdf.synthetic_chair(rng)
        self.assertEqual(6, len(chair.parts))
        seat = chair.parts[0]
        self.assertLess(float(chair.distance(torch.tensor([seat.center]))), 0.0)
        self.assertGreater(float(chair.distance(torch.tensor([[0.95, 0.95, 0.95]]))), 0.0)
        again = sdf.synthetic_chair(numpy.random.default_rng(0))
        self.assertEqual(chair, again)

    def test_catalog(self):
        rng = numpy.random.default_rng(1)
        shapes = [sdf.synthetic_chair(rng), Torus(), Sphere((0.1, 0.2, 0.3), 0.4)]
        path = os.path.join(self.tmpdir(), 'shapes.json')
        sdf.save_shape_catalog(path, shapes)
        self.assertEqual(shapes, sdf.load_shape_catalog(path))
        self.assertEqual(shapes[2], sdf.shape_from_dict(sdf.shape_to_dict(shapes[2])))


class SamplingTest(TestCase):

    def test_sample(self):
        samples = sdf.sample_sdf(Sphere(), 200, surface_fraction=0.5, seed=3, scale=0.05)
        self.assertEqual((200, 3), tuple(samples.points.shape))
        self.assertEqual((200,), tuple(samples.distances.shape))
        self.assertTrue(bool((samples.points.abs() <= 1.0).all()))
        self.assertTensorClose(Sphere().distance(samples.points), samples.distances)
        self.assertTrue(bool((samples.distances[:100].abs() <= 0.05 + 1e-4).all()))
        again = sdf.sample_sdf(Sphere(), 200, surface_fraction=0.5, seed=3, scale=0.05)
        self.assertTensorEqual(samples.points, again.points)

    def test_no_surface_in_cube(self):
        far = Sphere((5.0, 5.0, 5.0), 0.1)
        samples = sdf.sample_sdf(far, 50, seed=0, max_rounds=2)
        self.assertEqual(50, len(samples.points))
        self.assertTrue(bool((samples.distances > 0).all()))

    def test_invalid(self):
        self.assertRaises(ValueError, sdf.sample_sdf, Sphere(), 0)
        self.assertRaises(ValueError, sdf.sample_sdf, Sphere(), 10, surface_fraction=1.5)

    def test_grid(self):
        points = sdf.grid_points(3)
        self.assertEqual((27, 3), tuple(points.shape))
        self.assertTensorEqual(torch.tensor([-1.0, -1.0, -1.0]), points[0])
        self.assertTensorEqual(torch.tensor([-1.0, -1.0, 0.0]), points[1])
        self.assertTensorEqual(torch.tensor([1.0, 1.0, 1.0]), points[-1])


class MetricsTest(TestCase):

    def test_sign_iou(self):
        a = torch.tensor([-1.0, -1.0, 1.0, 1.0])
        self.assertEqual(1.0, sdf.sign_iou(a, a))
        self.assertEqual(0.0, sdf.sign_iou(a, -a))
        self.assertAlmostEqual(1 / 3.0, sdf.sign_iou(a, torch.tensor([1.0, -1.0, -1.0, 1.0])))
        self.assertEqual(1.0, sdf.sign_iou(torch.ones(4), torch.ones(4)))

    def test_shape_against_itself(self):
        metrics = sdf.sdf_metrics(Sphere(), Sphere(), grid_res=8)
        self.assertEqual(0.0, metrics.mse)
        self.assertEqual(1.0, metrics.sign_iou)
        self.assertRaises(ValueError, sdf.sdf_metrics, Sphere(), Sphere(), grid_res=4)

    def test_instance_field(self):
        spec = tiny_sdf_registry().get('SirenMLP')
        instance = archs.instantiate(spec, seed=0)
        values = sdf.field_values(instance, torch.rand(10, 3), chunk=4)
        self.assertEqual((10,), tuple(values.shape))
        metrics = sdf.sdf_metrics(instance, Sphere(), grid_res=8)
        self.assertGreater(metrics.mse, 0.0)


class FitTest(TestCase):

    def setUp(self):
        self.spec = tiny_sdf_registry().get('SirenMLP')

    def test_fit_reduces_error(self):
        samples = sdf.sample_sdf(Sphere(), 400, seed=0)
        cfg = FitConfig(steps=60, samples=400, batch_size=200, lr=1e-3)
        untrained = sdf.field_values(archs.instantiate(self.spec, seed=5), samples.points)
        untrained_error = float(torch.mean((untrained - samples.distances) ** 2))
        result = sdf.fit_siren(samples, cfg, seed=5, spec=self.spec)
        self.assertLess(result.fit_error, untrained_error)
        self.assertEqual('SirenMLP', result.instance.arch.name)
        again = sdf.fit_siren(samples, cfg, seed=5, spec=self.spec)
        self.assertEqual(result.fit_error, again.fit_error)

    def test_flagged(self):
        samples = sdf.sample_sdf(Sphere(), 100, seed=0)
        result = sdf.fit_siren(samples, FitConfig(steps=1, error_ceiling=1e-12), spec=self.spec)
        self.assertTrue(result.flagged)
        self.assertPattern('above ceiling', result.reason)
        outside = sdf.sample_sdf(Sphere((5.0, 5.0, 5.0), 0.1), 100, seed=0, max_rounds=1)
        result = sdf.fit_siren(outside, FitConfig(steps=1), spec=self.spec)
        self.assertEqual('no zero crossing in samples', result.reason)

    def test_config(self):
        self.assertRaises(ValueError, FitConfig, samples=0)
        self.assertRaises(ValueError, FitConfig, surface_fraction=-0.1)


class MeshTest(TestCase):

    def test_sphere_mesh(self):
        path = os.path.join(self.tmpdir(), 'sphere.obj')
        mesh = sdf.extract_mesh(Sphere(), grid_res=32, path=path)
        self.assertGreater(len(mesh.faces), 0)
        radii = numpy.linalg.norm(mesh.vertices, axis=1)
        self.assertTrue(numpy.allclose(radii, 0.5, atol=0.05))
        with open(path) as data:
            self.assertPattern(r'v -?[0-9]', data.read())

    def test_empty_mesh(self):
        path = os.path.join(self.tmpdir(), 'empty.obj')
        mesh = sdf.extract_mesh(Sphere((5.0, 5.0, 5.0), 0.1), grid_res=16, path=path)
        self.assertEqual(0, len(mesh.faces))
        with open(path) as data:
            self.assertEqual('# empty mesh\n', data.read())
        self.assertRaises(ValueError, sdf.extract_mesh, Sphere(), grid_res=8)


if __name__ == '__main__':
    unittest.main()
