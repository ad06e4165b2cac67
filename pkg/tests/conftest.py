import pytest
import torch

ACCEPTANCE = {}


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:>2}. {name}  {detail}")


def write_png(path, array):
    from PIL import Image

    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(array).save(path)
    return path


def make_layout(root, counts, size):
    """Stub dataset tree with ``counts[split]`` copies of one image/mask pair."""
    import os
    import shutil

    import numpy as np

    img = write_png(root / "_proto" / "img.png", np.zeros((size, size, 3), np.uint8))
    msk = write_png(root / "_proto" / "msk.png", np.zeros((size, size), np.uint8))
    for split, n in counts.items():
        for sub in ("images", "masks"):
            (root / split / sub).mkdir(parents=True, exist_ok=True)
        for i in range(n):
            for src, sub in ((img, "images"), (msk, "masks")):
                dst = root / split / sub / f"{i:05d}.png"
                try:
                    os.link(src, dst)
                except OSError:
                    shutil.copyfile(src, dst)
    shutil.rmtree(root / "_proto")
    return root


@pytest.fixture(scope="session")
def massroads_layout(tmp_path_factory):
    return make_layout(tmp_path_factory.mktemp("massroads"), {"train": 1108, "val": 14, "test": 49}, 1500)
