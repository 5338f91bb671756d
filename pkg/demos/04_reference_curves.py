"""AP over the frozen benchmark curves, and the baseline they must beat.

The full-scale benchmark run (thousands of annotated video frames, live
detector) produced one precision/recall row per threshold for each stage.
Those rows are frozen here; the area under each curve is the single-number
summary the regression tests in tests/test_acceptance.py pin down.
"""

from moto_helmet import ClassStats, PRPoint, average_precision, naive_helmet_baseline

# (threshold, precision, recall), measured at IoU 0.5. No detections
# survived above the highest threshold listed for each stage.
MOTORCYCLE = [
    (0.7, 0.7124, 0.002095),
    (0.6, 0.7357, 0.1232),
    (0.5, 0.6249, 0.3384),
    (0.4, 0.5548, 0.4453),
    (0.3, 0.4849, 0.5258),
    (0.2, 0.3951, 0.6108),
    (0.1, 0.2460, 0.7226),
]
PERSON = [
    (0.5, 1.0, 6.6136e-5),
    (0.4, 0.9437, 0.02183),
    (0.3, 0.8861, 0.1066),
    (0.2, 0.6992, 0.2568),
    (0.1, 0.2672, 0.5432),
]
HELMET = [
    (0.7, 0.9565, 0.005845),
    (0.6, 0.9557, 0.1046),
    (0.5, 0.9221, 0.1980),
    (0.4, 0.8775, 0.2698),
    (0.3, 0.8280, 0.3370),
    (0.2, 0.7852, 0.4143),
    (0.1, 0.7398, 0.5298),
    (0.05, 0.7146, 0.6370),
]

for name, rows in (("motorcycle detection", MOTORCYCLE),
                   ("person detection", PERSON),
                   ("helmet classification", HELMET)):
    ap = average_precision(PRPoint(t, p, r) for t, p, r in rows)
    print(f"{name:<22} {len(rows)} thresholds  AP = {ap:.4f}")

# AP is a plain trapezoid over the measured points. No extrapolation to
# recall 0 or 1 and no precision monotonization, so the numbers are
# comparable only against curves computed the same way.

# The bar to clear: always answering "helmeted" scores precision equal to
# the helmeted fraction of the benchmark labels and recall 1 by
# construction.
stats = ClassStats(driver=32889, passenger1=4796, passenger2=78, child=48,
                   helmeted=26349, unhelmeted=11462)
base = naive_helmet_baseline(stats)
print(f"\nnaive always-helmeted baseline: precision {base.precision:.4f}"
      f"  recall {base.recall:.1f}")

worst = min(p for _, p, _ in HELMET)
print(f"lowest helmet-stage precision across thresholds: {worst:.4f}")
print("every measured helmet precision beats the baseline:",
      worst > base.precision)
