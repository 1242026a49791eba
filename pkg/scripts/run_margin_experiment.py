"""Run the desk-scale margin-fraction sweep and write results + plot CSVs.

Usage:
    python scripts/run_margin_experiment.py [out_dir]

Equivalent to `marginleak experiment margin --config configs/margin_desk.toml`.
Expect roughly 5-10 minutes; progress is printed per (d, seed) cell.
"""
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from marginleak import experiment

ROOT = Path(__file__).resolve().parents[1]


def main() -> None:
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else ROOT / "results" / "margin"
    out.mkdir(parents=True, exist_ok=True)
    cfg = experiment.config_from_file(ROOT / "configs" / "margin_desk.toml")
    t0 = time.perf_counter()
    result = experiment.run_margin_experiment(cfg, log=print)
    meta = f"wall_time_s={time.perf_counter() - t0:.1f} config=configs/margin_desk.toml"
    experiment.write_margin_results_csv(result, out / "results.csv", meta)
    experiment.write_margin_plot_csv(result, out / "plot_margin.csv", meta)
    print(f"wrote {out / 'results.csv'} and {out / 'plot_margin.csv'}")
    for agg in result.aggregates:
        print(
            f"d={agg.dim}: train on margin {agg.frac_train_on_margin_mean:.3f} "
            f"± {agg.frac_train_on_margin_std:.3f}, "
            f"test at/above margin {agg.frac_test_on_or_above_margin_mean:.3f} "
            f"± {agg.frac_test_on_or_above_margin_std:.3f}"
        )


if __name__ == "__main__":
    main()
