"""Regenerate printscan_golden.json. Run only when a profile is deliberately changed."""

import hashlib
import json
from pathlib import Path

from psforensics.harness.synth import synth_photo
from psforensics.printscan import default_profiles, simulate_printscan

IMAGE = dict(height=64, width=96, seed=5)
SEED = 7


def digests():
    img = synth_photo(IMAGE["height"], IMAGE["width"], IMAGE["seed"])
    return {p.name: hashlib.sha256(simulate_printscan(img, p, SEED).data.tobytes()).hexdigest()
            for p in default_profiles()}


if __name__ == "__main__":
    out = Path(__file__).with_name("printscan_golden.json")
    out.write_text(json.dumps({"image": IMAGE, "seed": SEED, "sha256": digests()}, indent=1) + "\n")
    print(out.read_text())
