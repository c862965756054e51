#!/usr/bin/env python3
"""Write the demo assets (scenes, scenarios, device listing) to a directory."""

import argparse

from obar import demo


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dest", default="demo-assets",
                        help="output directory (created if missing)")
    args = parser.parse_args()
    paths = [
        demo.write_demo_scene(args.dest),
        demo.write_two_voice_scene(args.dest),
        demo.write_demo_scenario(args.dest, name="scenario-quiet.json"),
        demo.write_demo_scenario(args.dest, noise_step_db=10.0,
                                 name="scenario-step.json"),
        demo.write_demo_devices(args.dest),
    ]
    for p in paths:
        print(p)


if __name__ == "__main__":
    main()
