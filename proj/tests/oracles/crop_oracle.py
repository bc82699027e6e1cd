# Copyright 2026 The Dyadkit Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Exact-rational construction of square crop windows.

Prints the golden table used by the crop geometry tests. Every quantity is a
Fraction, so the output does not depend on floating point. Run:

    python3 tests/oracles/crop_oracle.py
"""

import math
import random
from fractions import Fraction as F

EXPAND = F(13, 10)
SHIFT = F(1, 5)


def crop(boxes, width, height):
    x0 = min(b[0] for b in boxes)
    y0 = min(b[1] for b in boxes)
    x1 = max(b[0] + b[2] for b in boxes)
    y1 = max(b[1] + b[3] for b in boxes)
    sw = (x1 - x0) * EXPAND
    sh = (y1 - y0) * EXPAND
    cx = (x0 + x1) / 2
    cy = (y0 + y1) / 2 + SHIFT * sh
    side = max(1, min(math.ceil(max(sw, sh)), min(width, height)))
    x = math.floor(cx - F(side, 2) + F(1, 2))
    y = math.floor(cy - F(side, 2) + F(1, 2))
    x = min(max(x, 0), width - side)
    y = min(max(y, 0), height - side)
    return x, y, side


def cases():
    fixed = [
        ([(100, 100, 100, 100)], 1000, 1000),            # hand-derived fixture
        ([(400, 300, 200, 200)], 1920, 1080),            # square union, far from borders
        ([(10, 20, 30, 40), (25, 35, 30, 30)], 640, 480),
        ([(900, 950, 80, 50)], 1000, 1000),              # flush-ish with the bottom edge
        ([(0, 0, 60, 60)], 640, 480),                    # top-left corner
        ([(590, 10, 50, 50)], 640, 480),                 # right edge
        ([(100, 50, 500, 400)], 640, 480),               # side clamps to frame height
        ([(0, 0, 640, 480)], 640, 480),                  # union equals frame
        ([(300, 200, 1, 1)], 640, 480),                  # one-pixel box
        ([(12.5, 40.25, 33.75, 41.5), (20, 44, 30, 40)], 320, 240),
        ([(700, 380, 120, 160)], 1280, 720),             # tall box near bottom
        ([(1800, 500, 100, 90), (1790, 510, 110, 95)], 1920, 1080),
    ]
    for boxes, width, height in fixed:
        yield [tuple(F(str(v)) for v in b) for b in boxes], width, height
    rng = random.Random(20261015)
    while True:
        width, height = rng.choice([(640, 480), (1280, 720), (1920, 1080), (400, 400)])
        n = rng.randint(1, 4)
        base_w = rng.randint(20, 300)
        bx = rng.randint(-20, width)
        by = rng.randint(-20, height)
        boxes = []
        for _ in range(n):
            w = F(base_w + rng.randint(-10, 10) * 2, 4) * 2
            h = F(int(w * rng.choice([F(9, 10), 1, F(6, 5), F(3, 2)])) * 4, 4)
            boxes.append((F(bx + rng.randint(-15, 15) * 2, 2), F(by + rng.randint(-15, 15), 1), w, h))
        yield boxes, width, height


def fmt(v):
    return str(int(v)) if v.denominator == 1 else str(float(v))


def main():
    out = []
    for boxes, width, height in cases():
        if len(out) == 21:
            break
        out.append((boxes, width, height, crop(boxes, width, height)))
    for boxes, width, height, (x, y, side) in out:
        bs = ", ".join("{" + ", ".join(fmt(v) for v in b) + "}" for b in boxes)
        print(f"    {{{{{bs}}}, {{{width}, {height}}}, {{{x}, {y}, {side}}}}},")


if __name__ == "__main__":
    main()
