#!/usr/bin/env python3
"""Build the demo assets and render them twice: once against the quiet
scenario and once against the +10 dB noise-step scenario. Compare the two
reports to watch the adaptation react."""

import argparse
import os

from obar import demo
from obar.cli import main as obar


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dest", default="demo-out",
                        help="working directory for assets and renders")
    args = parser.parse_args()
    scene = demo.write_demo_scene(args.dest)
    runs = [
        ("quiet", demo.write_demo_scenario(
            args.dest, name="scenario-quiet.json")),
        ("step", demo.write_demo_scenario(
            args.dest, noise_step_db=10.0, name="scenario-step.json")),
    ]
    for label, scenario in runs:
        out = os.path.join(args.dest, f"demo-{label}.wav")
        rc = obar(["render", "--scene", scene, "--scenario", scenario,
                   "--out", out])
        if rc != 0:
            raise SystemExit(rc)


if __name__ == "__main__":
    main()
