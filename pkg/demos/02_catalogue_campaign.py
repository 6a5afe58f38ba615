"""Run the eight hand-written relations against both implementations."""

from mrforge import FlatLayout, export_report, manual_catalogue, run_campaign
from mrforge.harness import campaign_inputs
from mrforge.model import GridSpec

inputs = campaign_inputs(GridSpec(), seeds=range(10))
catalogue = manual_catalogue(FlatLayout.of(inputs[0]))
for mr in catalogue:
    print(f"{mr.label:<16} {mr.description}")

report = run_campaign(catalogue, inputs)
print()
print(f"{'relation':<16} {'cyclic':>10} {'noncyclic':>10}")
for d in report.detection:
    c = report.result(d["mr"], "cyclic").max_deviation
    n = report.result(d["mr"], "noncyclic").max_deviation
    print(f"{d['mr']:<16} {c:>10.1e} {n:>10.1e}")

# a relation that holds for the correct code and breaks for the other one
# points straight at the defect
print("\ndefect-revealing:", report.defect_revealing())

export_report(report, "campaign")
print("series for plotting under campaign/series/")
