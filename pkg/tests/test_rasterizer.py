import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from conftest import front_camera, random_scene
from gradcheck import fd_check
from partsplat.rasterizer import (
    COV2D_BLUR, RasterizerError, masked_l1_image, project, render, render_backward,
)
from partsplat.scene import Camera, GaussianScene
from partsplat.sh import constant_block

WHITE = (1.0, 1.0, 1.0)


def single(position, scale, logit=0.0, rgb=(1.0, 0.0, 0.0), degree=0):
    return GaussianScene(
        positions=np.array([position], dtype=np.float64),
        scales=np.log(np.full((1, 3), scale)),
        rotations=np.array([[1.0, 0.0, 0.0, 0.0]]),
        opacities=np.array([logit]),
        color_sh=constant_block(rgb, degree, 1),
        label_sh=constant_block(rgb, degree, 1),
    )


def axis_camera(size=32, f=40.0):
    """Camera at the origin looking down +z."""
    return Camera(size, size, f, f, size / 2, size / 2, np.eye(4))


class TestProject:
    def test_pinhole_scale(self):
        # on the optical axis the Jacobian reduces to f/z
        for z, s in [(2.0, 0.05), (4.0, 0.1), (8.0, 0.3)]:
            sp = project(single((0, 0, z), s), axis_camera(f=40.0))
            assert_allclose(sp.means2d[0], (16.0, 16.0))
            sigma = np.sqrt(np.diag(sp.cov2d[0]) - COV2D_BLUR)
            assert_allclose(sigma, 40.0 * s / z, rtol=1e-12)
            assert sp.cov2d[0, 0, 1] == 0.0

    def test_behind_camera_culled(self):
        sp = project(single((0, 0, -2.0), 0.1), axis_camera())
        assert sp.culled[0] and sp.radii[0] == 0

    def test_far_offscreen_culled(self):
        sp = project(single((50.0, 0, 2.0), 0.01), axis_camera())
        assert sp.culled[0]

    def test_rigid_translation_invariance(self):
        scene = random_scene(15)
        cam = front_camera()
        offset = np.array([0.7, -1.3, 2.1])
        moved = scene.copy()
        moved.positions = scene.positions + offset
        T = cam.world_to_camera.copy()
        T[:3, 3] -= cam.rotation @ offset
        cam2 = Camera(cam.width, cam.height, cam.fx, cam.fy, cam.cx, cam.cy, T)
        a, b = project(scene, cam), project(moved, cam2)
        assert_allclose(b.means2d, a.means2d, atol=1e-10)
        assert_allclose(b.cov2d, a.cov2d, atol=1e-10)
        assert_allclose(b.depths, a.depths, atol=1e-12)
        assert_array_equal(b.culled, a.culled)


class TestRender:
    def test_empty_scene(self):
        out = render(GaussianScene.empty(), front_camera(16), "label", WHITE)
        assert_array_equal(out.image, np.ones((16, 16, 3)))
        assert_array_equal(out.alpha, np.zeros((16, 16)))

    def test_opaque_large_gaussian_is_red(self):
        out = render(single((0, 0, 3.0), 2.0, logit=30.0), axis_camera(), "label", WHITE)
        assert_allclose(out.image[16, 16], (1.0, 0.0, 0.0), atol=1e-3)

    def test_near_opaque_blocks_far(self):
        near = single((0, 0, 2.0), 50.0, logit=30.0, rgb=(0.0, 1.0, 0.0))
        far = single((0, 0, 4.0), 0.2, logit=0.0, rgb=(1.0, 0.0, 0.0))
        both = GaussianScene(*(np.concatenate([getattr(near, f), getattr(far, f)]) for f in
                               ("positions", "scales", "rotations", "opacities", "color_sh", "label_sh")))
        cam = axis_camera()
        out = render(both, cam, "label", WHITE)
        c = out.cache
        # the far Gaussian is second in depth order; it never contributes at the center
        center = 16 * 32 + 16
        run = np.flatnonzero(c.pixels == center)[0]
        members = c.gidx[c.first[run]:c.first[run] + c.counts[run]]
        assert_array_equal(c.visible[members], [0])
        alone = render(near, cam, "label", WHITE)
        covered = alone.transmittance < 1e-4
        assert covered.sum() > 50
        assert_array_equal(out.image[covered], alone.image[covered])

    def test_image_composition(self):
        scene = random_scene(12)
        bg = np.array([0.2, 0.6, 0.9])
        out = render(scene, front_camera(), "color", bg)
        fg = render(scene, front_camera(), "color", (0.0, 0.0, 0.0)).image
        assert_allclose(out.image, fg + bg * (1 - out.alpha[..., None]), atol=1e-5)
        assert out.alpha.min() >= 0 and out.alpha.max() <= 1

    def test_conservation(self):
        out = render(random_scene(30, spread=0.3, scale=(0.05, 0.3), seed=4), front_camera(), "label")
        assert_allclose(out.weights_sum + out.transmittance, 1.0, atol=1e-5)

    def test_permutation_bit_identical(self):
        scene = random_scene(25, seed=7)
        perm = np.random.default_rng(1).permutation(25)
        cam = front_camera()
        assert_array_equal(render(scene.subset(perm), cam, "color").image, render(scene, cam, "color").image)

    def test_deterministic(self):
        scene = random_scene(10)
        a = render(scene, front_camera(), "label").image
        b = render(scene, front_camera(), "label").image
        assert_array_equal(a, b)

    def test_zero_size(self):
        cam = front_camera(8)
        cam.width = 0
        with pytest.raises(RasterizerError, match="zero-size"):
            render(random_scene(3), cam)

    def test_unknown_channel(self):
        with pytest.raises(RasterizerError, match="channel"):
            render(random_scene(3), front_camera(8), "depth")

    def test_float32_scene(self):
        a = render(random_scene(10), front_camera(), "label").image
        b = render(random_scene(10, dtype=np.float32), front_camera(), "label").image
        assert_allclose(a, b, atol=1e-4)


class TestBackward:
    def test_zero_upstream(self, scene10, camera32):
        g = render_backward(scene10, camera32, "label", np.zeros((32, 32, 3)))
        for a in (g.d_color_sh, g.d_label_sh, g.d_opacity):
            assert not a.any()

    def test_only_requested_channel(self, scene10, camera32):
        G = np.random.default_rng(0).normal(size=(32, 32, 3))
        g = render_backward(scene10, camera32, "color", G)
        assert not g.d_label_sh.any() and g.d_color_sh.any()

    def test_culled_rows_zero(self, camera32):
        scene = random_scene(6)
        scene.positions[2] = (0.0, -5.0, 0.3)   # behind the camera
        G = np.random.default_rng(1).normal(size=(32, 32, 3))
        g = render_backward(scene, camera32, "label", G)
        assert not g.d_label_sh[2].any() and g.d_opacity[2] == 0.0
        assert np.all(np.isfinite(g.d_label_sh))

    def test_single_gaussian_finite_differences(self):
        rng = np.random.default_rng(3)
        scene = single((0.1, -0.05, 3.0), 0.15, logit=0.4, degree=3)
        scene.label_sh = rng.normal(0, 0.1, size=(1, 16, 3))
        total, bad, _ = fd_check(scene, axis_camera(), rng.normal(size=(32, 32, 3)))
        assert (total, bad) == (49, 0)

    def test_random_scene_finite_differences(self):
        scene = random_scene(6, scale=(0.05, 0.1), seed=2)
        scene.label_sh *= 0.3
        total, bad, _ = fd_check(scene, front_camera(24), np.random.default_rng(2).normal(size=(24, 24, 3)))
        assert bad <= 0.01 * total

    def test_color_channel_finite_differences(self):
        scene = random_scene(4, degree=1, seed=5)
        scene.color_sh *= 0.3
        total, bad, _ = fd_check(scene, front_camera(16), np.random.default_rng(5).normal(size=(16, 16, 3)),
                                 channel="color")
        assert bad <= 0.01 * total

    def test_forward_reuse_matches(self, scene10, camera32):
        G = np.random.default_rng(4).normal(size=(32, 32, 3))
        out = render(scene10, camera32, "label")
        a = render_backward(scene10, camera32, "label", G, forward=out)
        b = render_backward(scene10, camera32, "label", G)
        assert_array_equal(a.d_label_sh, b.d_label_sh)

    def test_mismatched_cache(self, scene10, camera32):
        out = render(scene10, camera32, "color")
        with pytest.raises(RasterizerError, match="cache"):
            render_backward(scene10, camera32, "label", np.zeros((32, 32, 3)), forward=out)

    def test_bad_upstream_shape(self, scene10, camera32):
        with pytest.raises(RasterizerError, match="loss_grad"):
            render_backward(scene10, camera32, "label", np.zeros((16, 16, 3)))


class TestMaskedL1:
    def test_equal_images(self):
        x = np.random.default_rng(0).random((4, 5, 3))
        loss, grad = masked_l1_image(x, x, np.ones((4, 5)))
        assert loss == 0.0 and not grad.any()

    def test_empty_mask(self):
        loss, grad = masked_l1_image(np.zeros((3, 3, 3)), np.ones((3, 3, 3)), np.zeros((3, 3)))
        assert loss == 0.0 and not grad.any()

    def test_single_pixel(self):
        loss, grad = masked_l1_image(np.full((1, 1, 3), 0.8), np.full((1, 1, 3), 0.3), np.ones((1, 1)))
        assert_allclose(loss, 0.5)
        assert_allclose(grad, np.full((1, 1, 3), 1 / 3))

    def test_gradient_is_derivative(self):
        rng = np.random.default_rng(1)
        pred, target, mask = rng.random((4, 4, 3)), rng.random((4, 4, 3)), rng.random((4, 4))
        _, grad = masked_l1_image(pred, target, mask)
        h = 1e-7
        bumped = pred.copy()
        bumped[1, 2, 0] += h
        num = (masked_l1_image(bumped, target, mask)[0] - masked_l1_image(pred, target, mask)[0]) / h
        assert_allclose(num, grad[1, 2, 0], rtol=1e-5)

    def test_shape_mismatch(self):
        with pytest.raises(RasterizerError, match="shape"):
            masked_l1_image(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)), np.ones((2, 2)))
