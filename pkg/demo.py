#!/usr/bin/env python3
"""
Demo script for the heralded Fock-state toolkit.
Regenerates the data behind every sweep preset, the feasibility table and a
fit of a synthetic four-run dataset.
"""

import os
import sys

# Add the current directory to the path so we can import our modules
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

import cli
from config import Config
from utils.analysis import synthesize_dataset
from utils.data_processor import DataProcessor
from utils.report_writer import ReportWriter

# parameters of the measured source and its four pump powers
DEMO_SOURCE = {"schmidt": 1.61, "eta_idler": 0.59, "eta_signal": 0.64}
DEMO_GAINS = (0.4, 0.6, 0.8, 1.0)


def generate_preset(name: str, output_dir: str) -> bool:
    """Run one sweep preset through the command line entry point"""
    preset = Config.SWEEP_PRESETS[name]
    print(f"🔄 {preset['name']}: {preset['description']}...")
    code = cli.main(["sweep", "--preset", name, "--output-dir", output_dir])
    if code != 0:
        print(f"❌ Preset {name} failed with exit code {code}")
        return False
    return True


def generate_fit_demo(output_dir: str, starts: str = "1.5,0.6,0.6") -> bool:
    """Synthesize a dataset at the demo source parameters and fit it back"""
    print("🔄 Synthesizing a four-run dataset with 1% noise...")
    runs = synthesize_dataset(
        DEMO_SOURCE["schmidt"],
        DEMO_SOURCE["eta_idler"],
        DEMO_SOURCE["eta_signal"],
        DEMO_GAINS,
        noise=0.01,
        seed=Config.SEED,
    )
    dataset = ReportWriter(output_dir).write_csv(DataProcessor.dataset_frame(runs), "synthetic_dataset")
    code = cli.main(["fit", dataset, "--starts", starts, "--output-dir", output_dir])
    return code == 0


def generate_all(output_dir: str, with_fit: bool = True):
    print("🎯 Heralded Fock-state toolkit - Demo Mode")
    print("=" * 60)

    succeeded, failed = [], []
    presets = sorted(Config.SWEEP_PRESETS)
    for i, name in enumerate(presets, 1):
        print(f"📊 Demo {i}/{len(presets)}")
        (succeeded if generate_preset(name, output_dir) else failed).append(name)
        print()

    print("📊 Feasibility at the default realistic limits")
    code = cli.main(["feasibility", "--output-dir", output_dir])
    (succeeded if code == 0 else failed).append("feasibility")
    print()

    if with_fit:
        (succeeded if generate_fit_demo(output_dir) else failed).append("fit")
        print()

    print("📋 Demo Summary:")
    print("=" * 40)
    print(f"✅ Successfully generated {len(succeeded)} outputs")
    if failed:
        print(f"❌ Failed: {', '.join(failed)}")
    print(f"\n📂 All results saved in: {os.path.abspath(output_dir)}")
    return succeeded, failed


def main(argv=None):
    """Main demo function"""
    argv = sys.argv[1:] if argv is None else argv

    if "--help" in argv:
        print("Heralded Fock-state toolkit - Demo Script")
        print("\nUsage:")
        print("  python demo.py                    # All presets, feasibility and fit")
        print("  python demo.py --skip-fit         # Without the synthetic fit")
        print("  python demo.py --output-dir DIR   # Where to write results")
        return 0

    output_dir = Config.OUTPUT_DIR
    if "--output-dir" in argv:
        index = argv.index("--output-dir")
        if index + 1 >= len(argv):
            print("--output-dir needs a directory")
            return 2
        output_dir = argv[index + 1]

    _, failed = generate_all(output_dir, with_fit="--skip-fit" not in argv)
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
