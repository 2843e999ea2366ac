"""
The hybrid pipeline with offline backends
=========================================

Run the whole pipeline on the fixture with the three mock backends and put
the reports side by side. The oracle is an upper bound, identity is a no-op
and random shows what the guard buys.
"""

from pathlib import Path

from weakrec import pipeline, report
from weakrec.config import RunConfig

reports = []
for backend, guard in [("mock-identity", "off"), ("mock-random", "off"), ("mock-random", "on"),
                       ("mock-oracle", "off")]:
    cfg = RunConfig()
    cfg.backend.name = backend
    cfg.run.guard = guard
    cfg.run.output = str(Path("demo_runs") / f"{backend}-{guard}")
    result = pipeline.run(cfg)
    reports.append(result.report)
    print(f"{backend:14s} guard={guard:3s} tags={result.report.tags}")

print()
print(report.emit_table(reports))
