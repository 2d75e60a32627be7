"""Regenerates tests/fixtures/corruptions from the reference `imagecorruptions` package.

Each case stores the 8-bit input, the float output of the reference function
(divided by 255, before uint8 truncation), and for gaussian_noise the
standard-normal field that was drawn.
"""
import json
import os
import sys
import zlib

import numpy as np
from imagecorruptions import corruptions as ref

OUT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "fixtures", "corruptions")
SIZE = 32


def inputs():
    rng = np.random.default_rng(20240607)
    yield "mid_gray", np.full((SIZE, SIZE, 3), 128, np.uint8)
    yy, xx = np.mgrid[0:SIZE, 0:SIZE]
    grad = np.stack([xx * 8, yy * 8, (xx + yy) * 4], -1).clip(0, 255).astype(np.uint8)
    yield "gradient", grad
    checker = (((xx // 4) + (yy // 4)) % 2 * 200 + 30).astype(np.uint8)
    yield "checker", np.stack([checker, 255 - checker, checker // 2], -1)
    for i in range(7):
        yield f"random_{i}", rng.integers(0, 256, (SIZE, SIZE, 3), dtype=np.uint8)


def main():
    os.makedirs(OUT, exist_ok=True)
    cases = []
    for name, img in inputs():
        img.astype(np.uint8).tofile(os.path.join(OUT, f"{name}.u8"))
        for kind in ["brightness", "contrast", "defocus_blur", "gaussian_noise"]:
            for sev in [1, 3, 5]:
                case = {"input": name, "kind": kind, "severity": sev}
                if kind == "gaussian_noise":
                    np.random.seed(zlib.crc32(f"{name}:{sev}".encode()))
                    state = np.random.get_state()
                    out = getattr(ref, kind)(img, sev)
                    np.random.set_state(state)
                    noise = np.random.normal(size=img.shape)
                    noise_file = f"{name}_noise_s{sev}.f64"
                    noise.astype("<f8").tofile(os.path.join(OUT, noise_file))
                    case["noise"] = noise_file
                else:
                    out = getattr(ref, kind)(img, sev)
                out_file = f"{name}_{kind}_s{sev}.f64"
                (np.asarray(out, np.float64) / 255.0).astype("<f8").tofile(os.path.join(OUT, out_file))
                case["output"] = out_file
                cases.append(case)
    with open(os.path.join(OUT, "index.json"), "w") as f:
        json.dump({"height": SIZE, "width": SIZE, "channels": 3, "cases": cases}, f, indent=1)
    print(f"wrote {len(cases)} cases to {OUT}", file=sys.stderr)


if __name__ == "__main__":
    main()
