import runpy
from pathlib import Path

import pytest

DEMOS = Path(__file__).resolve().parent.parent / "demos"

# the segmentation and CLI walk-throughs are exercised by the acceptance and CLI suites
FAST = ["01_scene_and_sh.py", "02_render_and_gradients.py", "04_scheduled_latent_mixing.py",
        "05_part_editing.py"]


@pytest.mark.parametrize("name", FAST)
def test_demo_runs(name, capsys):
    runpy.run_path(str(DEMOS / name), run_name="__main__")
    assert capsys.readouterr().out
