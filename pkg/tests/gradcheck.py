"""Central finite-difference check of rasterizer gradients."""

import numpy as np

from partsplat.rasterizer import render, render_backward


def fd_check(scene, camera, loss_grad, channel="label", h=1e-4, rtol=1e-3, floor=1e-6,
             background=(1.0, 1.0, 1.0)):
    """Compare analytic SH and opacity gradients of ``sum(loss_grad * image)``
    against central differences.

    Returns ``(n_coords, n_bad, worst_rel_err)``. The scene is perturbed in
    place and restored entry by entry.
    """
    grads = render_backward(scene, camera, channel, loss_grad, background=background)
    sh_name = "label_sh" if channel == "label" else "color_sh"
    analytic = {sh_name: grads.d_label_sh if channel == "label" else grads.d_color_sh,
                "opacities": grads.d_opacity}

    def loss():
        return float((render(scene, camera, channel, background).image * loss_grad).sum())

    total = bad = 0
    worst = 0.0
    for name, an in analytic.items():
        flat = getattr(scene, name).reshape(-1)
        af = an.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss()
            flat[i] = orig - h
            down = loss()
            flat[i] = orig
            num = (up - down) / (2 * h)
            err = abs(num - af[i]) / max(abs(num), abs(af[i]), floor)
            total += 1
            bad += err > rtol
            worst = max(worst, err)
    return total, bad, worst


def fd_scene(seed, n=10):
    """Random scene used for the gradient-fidelity suite."""
    from partsplat.scene import GaussianScene

    rng = np.random.default_rng(seed)
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return GaussianScene(
        positions=rng.uniform(-0.6, 0.6, (n, 3)),
        scales=np.log(rng.uniform(0.05, 0.15, (n, 3))),
        rotations=q,
        opacities=rng.normal(0.0, 1.0, n),
        color_sh=rng.normal(0.0, 0.1, (n, 16, 3)),
        label_sh=rng.normal(0.0, 0.1, (n, 16, 3)),
    )


def fd_camera(size=32):
    from partsplat.scene import Camera

    return Camera.look_at((0.0, -3.0, 0.5), width=size, height=size)
