"""Print the tables held in one or more report.json files.

    python scripts/summarize.py runs/*/report.json
"""
import sys

from owapool.harness.experiments import Report


def fmt(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    return "-" if v is None else str(v)


def show(path):
    with open(path) as fh:
        report = Report.from_json(fh.read())
    print(f"== {path} ({report.task})")
    if report.task in ("cnn", "robust"):
        print(f"{'variant':<10} {'train':>7} {'test':>7} {'J':>9} {'penalty':>9} {'s/epoch':>8}")
        for name, m in report.variants.items():
            print(f"{name:<10} {fmt(m['train_acc']):>7} {fmt(m['test_acc']):>7} {fmt(m['final_J']):>9} "
                  f"{fmt(m['final_penalty']):>9} {fmt(m['seconds_per_epoch']):>8}")
    if report.table:
        keys = [k for k in report.table[0] if k != "seconds"]
        print("  ".join(f"{k:>14}" for k in keys))
        for row in report.table:
            print("  ".join(f"{fmt(row[k]):>14}" for k in keys))
    print()


if __name__ == "__main__":
    for p in sys.argv[1:]:
        show(p)
