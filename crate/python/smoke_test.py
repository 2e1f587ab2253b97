"""Smoke test for the synremoval_py extension module.

Build it first with `cargo build --release -p synremoval-py`. The module is
loaded from target/release (or target/debug), or from the path in
SYNREMOVAL_PY_LIB.
"""

import importlib.machinery
import importlib.util
import math
import os
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def load_module():
    candidates = [os.environ.get("SYNREMOVAL_PY_LIB")]
    candidates += [ROOT / "target" / p / "libsynremoval_py.so" for p in ("release", "debug")]
    for path in filter(None, candidates):
        if Path(path).is_file():
            loader = importlib.machinery.ExtensionFileLoader("synremoval_py", str(path))
            spec = importlib.util.spec_from_file_location("synremoval_py", path, loader=loader)
            module = importlib.util.module_from_spec(spec)
            loader.exec_module(module)
            return module
    sys.exit("synremoval_py not built; run `cargo build --release -p synremoval-py`")


def main():
    sr = load_module()

    cfg = sr.Config()
    cfg.global_seed = 9
    cfg.iou_mode = "mask"
    assert cfg.iou_threshold == 0.3
    try:
        cfg.iou_threshold = 2.0
        raise AssertionError("out-of-range threshold accepted")
    except ValueError:
        pass
    assert sr.Config.from_toml(cfg.to_toml()).content_hash() == cfg.content_hash()

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        instances, backgrounds = sr.write_toy_corpus(tmp / "corpus", seed=1)
        emitted, skipped = sr.build_dataset(instances, backgrounds, tmp / "ds", 8, config=cfg, workers=2)
        assert emitted == 8, (emitted, skipped)
        ok, failing = sr.validate_dataset(tmp / "ds" / "manifest.jsonl")
        assert ok and not failing, failing

        name = "00000003.png"
        gt = sr.Image.read(tmp / "ds" / "gts" / name)
        inp = sr.Image.read(tmp / "ds" / "inputs" / name)
        mask = sr.Mask.read(tmp / "ds" / "masks" / name)
        assert (gt.width, gt.height) == (mask.width, mask.height)
        assert math.isinf(sr.psnr(gt, gt))
        assert sr.ssim(gt, gt) == 1.0
        assert sr.psnr(inp, gt) < 100.0

        grown = mask.enhance("dilated", seed=4)
        assert mask.is_subset_of(grown) and grown.area() > mask.area()
        assert mask.enhance("eroded").is_subset_of(mask)
        assert mask.is_subset_of(mask.enhance("ellipse"))

        report = sr.evaluate_directory(tmp / "ds" / "gts", tmp / "ds" / "gts", format="csv")
        assert report.splitlines()[0].startswith("stem,psnr_full")

    small = sr.Mask([[False, True, False], [True, True, True], [False, True, False]])
    assert small.area() == 5
    assert small.erode(1.0).area() == 1
    assert small.rows()[1] == [True, True, True]

    print("python smoke test passed")


if __name__ == "__main__":
    main()
