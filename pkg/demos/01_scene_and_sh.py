"""
Gaussian scenes and spherical-harmonics colors
==============================================

A scene is a set of anisotropic 3D Gaussians. Each one carries two SH
blocks: an appearance color and a label color. Both are evaluated with the
same real SH basis and the same +0.5 DC offset.
"""

import numpy as np

from partsplat.scene import Camera, GaussianScene, LabelPalette, validate_scene, view_direction
from partsplat.sh import SH_C0, fibonacci_sphere, rgb_to_dc, sh_eval

# Zero coefficients evaluate to mid gray in every direction.
block = np.zeros((16, 3))
print("zero block ->", sh_eval(block, np.array([0.0, 0.0, 1.0])))

# Setting the DC term to 1/Y_00 in the red channel adds exactly 1 to red,
# which the [0, 1] clamp then holds at 1.
block[0, 0] = 1.0 / SH_C0
print("DC red     ->", sh_eval(block, np.array([1.0, 0.0, 0.0])))

# Higher orders make the color depend on the viewing direction.
block = np.zeros((16, 3))
block[0] = rgb_to_dc([0.2, 0.4, 0.8])
block[2] = [0.3, 0.0, -0.3]          # the l=1, m=0 term varies with z
for d in fibonacci_sphere(4):
    print("dir", np.round(d, 2), "->", np.round(sh_eval(block, d), 3))

# A scene is a bag of per-Gaussian arrays; validation reports every problem it finds.
rng = np.random.default_rng(0)
n = 5
q = rng.normal(size=(n, 4))
scene = GaussianScene(
    positions=rng.normal(size=(n, 3)),
    scales=np.log(np.full((n, 3), 0.1)),
    rotations=q / np.linalg.norm(q, axis=1, keepdims=True),
    opacities=np.zeros(n),
    color_sh=np.zeros((n, 16, 3)),
    label_sh=np.zeros((n, 16, 3)),
)
print("valid scene report:", validate_scene(scene))
scene.rotations[2] *= 2
print("broken scene report:", validate_scene(scene))

# Cameras are world-to-camera rigid transforms with pinhole intrinsics.
cam = Camera.look_at((0.0, -3.0, 0.5), width=64, height=64, fov_deg=50)
print("camera center", np.round(cam.center, 3), "focal", round(cam.fx, 2))
print("view direction to the origin", np.round(view_direction(cam, np.zeros(3)), 3))

# Palettes name the parts and fix their label colors.
palette = LabelPalette([("background", (0, 0, 1)), ("seat", (1, 0, 0)), ("legs", (0, 1, 0))])
print("palette", palette.to_json())
