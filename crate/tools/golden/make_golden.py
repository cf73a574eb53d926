"""Builds the cascade golden set used by the acceptance suite.

Patches are 24x24 grayscale crops (faces and non-faces from scikit-image's
bundled data, plus noise and gradients). Each patch is scored by OpenCV's
CascadeClassifier through record_reject_levels.cpp.

usage: python3 make_golden.py <cascade.xml> <recorder-binary> <out.txt>
"""
import os
import re
import struct
import subprocess
import sys
import tempfile

import numpy as np
from skimage import data, transform, color


def truncated_cascades(xml_text, out_dir):
    head, rest = xml_text.split("<stages>", 1)
    body, tail = rest.split("</stages>", 1)
    stages = re.findall(r"<_>\s*<maxWeakCount>.*?</weakClassifiers></_>", body, re.S)
    for k in range(1, len(stages) + 1):
        h = re.sub(r"<stageNum>\d+</stageNum>", f"<stageNum>{k}</stageNum>", head)
        text = h + "<stages>\n" + "\n".join(stages[:k]) + "\n</stages>" + tail
        with open(os.path.join(out_dir, f"stages_{k}.xml"), "w") as f:
            f.write(text)
    return len(stages)


def to_u8(img):
    return np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)


def patches(rng):
    out = []
    lfw = data.lfw_subset()
    for img in lfw:
        out.append(to_u8(img[:24, :24]))
        out.append(to_u8(img[1:, 1:]))
        out.append(to_u8(transform.resize(img, (24, 24), anti_aliasing=True)))
    astro = color.rgb2gray(data.astronaut())
    # face region of the astronaut image is roughly x 170..260, y 60..160
    for _ in range(120):
        size = rng.integers(70, 110)
        x = rng.integers(160, 200)
        y = rng.integers(50, 90)
        crop = astro[y:y + size, x:x + size]
        out.append(to_u8(transform.resize(crop, (24, 24), anti_aliasing=True)))
    cam = data.camera() / 255.0
    for _ in range(60):
        size = rng.integers(24, 120)
        x = rng.integers(0, 512 - size)
        y = rng.integers(0, 512 - size)
        crop = cam[y:y + size, x:x + size]
        out.append(to_u8(transform.resize(crop, (24, 24), anti_aliasing=True)))
    for _ in range(30):
        out.append(rng.integers(0, 256, size=(24, 24)).astype(np.uint8))
    gx = np.linspace(0, 1, 24)
    out.append(to_u8(np.tile(gx, (24, 1))))
    out.append(to_u8(np.tile(gx[:, None], (1, 24))))
    out.append(np.full((24, 24), 128, np.uint8))
    return out


def main():
    cascade, recorder, out_path = sys.argv[1:4]
    rng = np.random.default_rng(20170502)
    ps = patches(rng)
    with tempfile.TemporaryDirectory() as tmp:
        n = truncated_cascades(open(cascade).read(), tmp)
        bin_path = os.path.join(tmp, "patches.bin")
        with open(bin_path, "wb") as f:
            f.write(struct.pack("<I", len(ps)))
            for p in ps:
                f.write(p.tobytes())
        lv_path = os.path.join(tmp, "levels.txt")
        subprocess.run([recorder, tmp, str(n), bin_path, lv_path], check=True)
        levels = [tuple(map(int, line.split())) for line in open(lv_path)]
    with open(out_path, "w") as f:
        f.write("# stages_passed accepted patch_hex(24x24 row-major)\n")
        f.write(f"# recorded with OpenCV CascadeClassifier, {n}-stage cascade\n")
        for p, (level, broken) in zip(ps, levels):
            assert broken == 0
            f.write(f"{level} {int(level == n)} {p.tobytes().hex()}\n")
    hist = np.bincount([l for l, _ in levels], minlength=n + 1)
    print("patches", len(ps), "histogram", hist.tolist())


if __name__ == "__main__":
    main()
